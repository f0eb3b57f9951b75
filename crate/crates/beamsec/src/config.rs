//! TOML run configuration binding scenarios, hyperparameters and sweep
//! settings to the CLI.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversarial::{AdvTrainParams, AttackParams};
use crate::error::{BeamsecError, Result};
use crate::experiments::{default_eps_grid, Case, SweepConfig};
use crate::nn::TrainConfig;
use crate::scenario::{self, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Small sizes: 5,000 samples, 5 seed repetitions.
    Desk,
    /// Full-scale sizes: 35,000 samples, 20 repetitions.
    Paper,
}

impl Default for Scale {
    fn default() -> Self {
        Scale::Desk
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Preset name; ignored when an inline `[scenario]` table is given.
    pub scenario: Option<String>,
    #[serde(rename = "scenario_inline")]
    pub inline_scenario: Option<Scenario>,
    #[serde(default)]
    pub scale: Scale,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    /// Codebook size P; defaults to the antenna count M.
    pub num_beams: Option<usize>,
    pub eps_grid: Option<Vec<f64>>,
    pub out_dir: Option<String>,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub attack: AttackOverrides,
    #[serde(default)]
    pub defend: DefendOverrides,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub dropout_ratio: Option<f64>,
    pub epochs: Option<usize>,
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AttackOverrides {
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DefendOverrides {
    /// Training-time perturbation budget; independent of the evaluation
    /// attack epsilon.
    pub epsilon: Option<f64>,
    pub max_rounds: Option<usize>,
    pub steady_state_tol: Option<f64>,
    pub augment_ratio: Option<f64>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| BeamsecError::InvalidParameter(format!("config parse error: {e}")))
    }

    pub fn scenario(&self) -> Result<Scenario> {
        if let Some(s) = &self.inline_scenario {
            return crate::scenario::build_scenario(s.clone());
        }
        let name = self.scenario.as_deref().unwrap_or("desk");
        scenario::preset(name)
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        if let Some(v) = self.train.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.train.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.train.dropout_ratio {
            cfg.dropout_ratio = v;
        }
        if let Some(v) = self.train.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.train.val_fraction {
            cfg.val_fraction = v;
        }
        cfg.seed = self.seed.unwrap_or(0);
        cfg
    }

    pub fn attack_params(&self) -> AttackParams {
        let mut p = AttackParams::default();
        if let Some(v) = self.attack.epsilon {
            p.epsilon = v;
        }
        if let Some(v) = self.attack.alpha {
            p.alpha = v;
        }
        if let Some(v) = self.attack.max_iters {
            p.max_iters = v;
        }
        p.seed = self.seed.unwrap_or(0);
        p
    }

    pub fn adv_params(&self) -> AdvTrainParams {
        let mut p = AdvTrainParams::default();
        // alpha/iteration overrides are shared with the attack section; the
        // training budget has its own default and override
        let shared = self.attack_params();
        p.attack.alpha = shared.alpha;
        p.attack.max_iters = shared.max_iters;
        p.attack.seed = shared.seed;
        if let Some(v) = self.defend.epsilon {
            p.attack.epsilon = v;
        }
        if let Some(v) = self.defend.max_rounds {
            p.max_rounds = v;
        }
        if let Some(v) = self.defend.steady_state_tol {
            p.steady_state_tol = v;
        }
        if let Some(v) = self.defend.augment_ratio {
            p.augment_ratio = v;
        }
        p
    }

    pub fn n_train(&self) -> usize {
        self.n_train.unwrap_or(match self.scale {
            Scale::Desk => 5000,
            Scale::Paper => 35_000,
        })
    }

    pub fn n_test(&self) -> usize {
        self.n_test.unwrap_or(match self.scale {
            Scale::Desk => 500,
            Scale::Paper => 3500,
        })
    }

    pub fn seeds(&self) -> Vec<u64> {
        if let Some(s) = &self.seeds {
            return s.clone();
        }
        let n = match self.scale {
            Scale::Desk => 5,
            Scale::Paper => 20,
        };
        (0..n as u64).collect()
    }

    pub fn eps_grid(&self) -> Vec<f64> {
        self.eps_grid.clone().unwrap_or_else(default_eps_grid)
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        let cfg = SweepConfig {
            scenario: self.scenario()?,
            num_beams: self.num_beams.unwrap_or(0),
            n_train: self.n_train(),
            n_test: self.n_test(),
            train: self.train_config(),
            adv: self.adv_params(),
            cases: Case::ALL.to_vec(),
            eps_grid: self.eps_grid(),
            seeds: self.seeds(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
