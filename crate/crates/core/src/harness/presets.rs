//! Named desk-scale scenarios, identical to the files under `configs/`.

use super::config::{ConfigError, ScenarioConfig};

const PRESETS: &[(&str, &str)] = &[
    ("ar1_vary_n", include_str!("../../../../configs/ar1_vary_n.toml")),
    ("ar1_vary_t", include_str!("../../../../configs/ar1_vary_t.toml")),
    ("ar1_vary_rho", include_str!("../../../../configs/ar1_vary_rho.toml")),
    ("carryover_designs", include_str!("../../../../configs/carryover_designs.toml")),
    ("factor_no_carryover", include_str!("../../../../configs/factor_no_carryover.toml")),
    ("factor_first_order", include_str!("../../../../configs/factor_first_order.toml")),
    ("markov_latent", include_str!("../../../../configs/markov_latent.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

pub fn preset(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let text = PRESETS
        .iter()
        .find(|p| p.0 == name)
        .map(|p| p.1)
        .ok_or_else(|| {
            ConfigError::new(
                "preset",
                format!("unknown preset {name:?}; available: {}", preset_names().join(", ")),
            )
        })?;
    ScenarioConfig::from_toml(text)
}
