//! Built-in experiment configs.

use crate::config::{parse_config_str, ExperimentConfig};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub toml: &'static str,
}

pub const PRESETS: [Preset; 2] = [
    Preset {
        name: "fig6",
        description: "full training, {I,J} = {30,20}: every estimator identifiable",
        toml: include_str!("../presets/fig6.toml"),
    },
    Preset {
        name: "fig7",
        description: "short training, {I,J} = {25,15}: C-KRAFT not identifiable, C-ALS is",
        toml: include_str!("../presets/fig7.toml"),
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

impl Preset {
    pub fn config(&self) -> ExperimentConfig {
        parse_config_str(self.toml, self.name).expect("built-in presets are valid")
    }
}
