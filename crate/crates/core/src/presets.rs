//! Ready-made scenario configurations, embedded at compile time.
//!
//! Five benchmark situations on the same machine and noise setup: nominal
//! operation, degraded sensing, a transient-reactance fault, three
//! measurement attacks that the χ² detector catches (random disturbance,
//! denial of service, replay), and a gain-tampering false-data injection
//! that only the Euclidean detector catches.

use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;

/// Preset names in presentation order, with the embedded TOML text.
pub const PRESETS: [(&str, &str); 7] = [
    ("scenario1", include_str!("../presets/scenario1.toml")),
    ("scenario2", include_str!("../presets/scenario2.toml")),
    ("scenario3", include_str!("../presets/scenario3.toml")),
    ("scenario4-random", include_str!("../presets/scenario4-random.toml")),
    ("scenario4-dos", include_str!("../presets/scenario4-dos.toml")),
    ("scenario4-replay", include_str!("../presets/scenario4-replay.toml")),
    ("scenario5-fdi", include_str!("../presets/scenario5-fdi.toml")),
];

/// All preset names.
pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(name, _)| *name).collect()
}

/// The raw TOML text of one preset.
pub fn text(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

/// Parse and validate one preset.
pub fn load(name: &str) -> Result<ScenarioConfig> {
    let text = text(name).ok_or_else(|| {
        Error::config(format!(
            "unknown preset {name:?}; available: {}",
            names().join(", ")
        ))
    })?;
    ScenarioConfig::from_toml_str(text)
}
