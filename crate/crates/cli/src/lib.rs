//! Configuration files, presets and commands behind the `hwgrape` binary.

pub mod commands;
pub mod config;

pub use commands::{Outcome, Outputs, Overrides, VERSION};
pub use config::ExperimentConfig;

/// Checked-in preset configs by name.
pub const PRESETS: &[(&str, &str)] = &[
    (
        "pi2-resonator",
        include_str!("../presets/pi2-resonator.json"),
    ),
    (
        "square-response",
        include_str!("../presets/square-response.json"),
    ),
    (
        "cnot-risetime",
        include_str!("../presets/cnot-risetime.json"),
    ),
    ("crosstalk-4q", include_str!("../presets/crosstalk-4q.json")),
    (
        "landscape-desk",
        include_str!("../presets/landscape-desk.json"),
    ),
    ("steady-state", include_str!("../presets/steady-state.json")),
    ("identity", include_str!("../presets/identity.json")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}
