//! Shared fixtures for the estimation benchmarks.

use svf_core::dgp::{generate, two_lag_frank_design, MarginLaw, SimulationSpec};
use svf_core::PanelData;

/// A panel drawn from the two-factor, two-lag frank design.
pub fn frank_panel(t_len: usize, n_dim: usize, seed: u64) -> PanelData {
    let spec = SimulationSpec::standard(two_lag_frank_design(), MarginLaw::StandardNormal, t_len, n_dim, 1, seed);
    generate(&spec, 0).expect("valid design").panel
}
