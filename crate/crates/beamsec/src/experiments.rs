//! Dataset construction and the three-case epsilon-sweep evaluation:
//! undefended, undefended-under-attack and defended-under-attack.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversarial::{self, AdvTrainParams, AdvTrainLog, AttackParams};
use crate::beamforming::{build_codebook, rate_targets, Codebook};
use crate::channel::{mix_seed, omni_beam, omni_pilot_features, sample_channel};
use crate::error::{BeamsecError, Result};
use crate::nn::{self, MlpModel, Sample, TrainConfig};
use crate::scenario::Scenario;

/// Paired (pilot features, per-beam rates) samples with normalization
/// metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamDataset {
    pub scenario_name: String,
    pub snr_db: f64,
    pub seed: u64,
    pub num_bs: usize,
    pub num_subcarriers: usize,
    pub num_beams: usize,
    /// Dataset-level maximum rate; targets are rates / r_max.
    pub r_max: f64,
    /// Smallest raw feature component; subtracted during min-max scaling.
    pub feature_offset: f64,
    /// Raw feature range (max - min); stored features are min-max scaled into
    /// [0, 1] so an epsilon budget has a fixed meaning relative to the input
    /// range, as with pixel-scaled image attacks.
    pub feature_scale: f64,
    pub samples: Vec<DatasetSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSample {
    /// Interleaved re/im pilot features, length 2*N*K.
    pub features: Vec<f64>,
    /// Un-normalized per-beam achievable rates, length P.
    pub rates: Vec<f64>,
}

impl BeamDataset {
    pub fn input_dim(&self) -> usize {
        2 * self.num_bs * self.num_subcarriers
    }

    /// Materialize (input, normalized target) training pairs.
    pub fn nn_samples(&self) -> Vec<Sample> {
        self.samples
            .iter()
            .map(|s| (s.features.clone(), s.rates.iter().map(|r| r / self.r_max).collect()))
            .collect()
    }

    /// Re-normalize against externally supplied constants (held-out sets
    /// reuse the training-set maximum rate and feature min/range).
    pub fn with_normalization(mut self, r_max: f64, offset: f64, scale: f64) -> Self {
        for s in self.samples.iter_mut() {
            for v in s.features.iter_mut() {
                let raw = *v * self.feature_scale + self.feature_offset;
                *v = (raw - offset) / scale;
            }
        }
        self.r_max = r_max;
        self.feature_offset = offset;
        self.feature_scale = scale;
        self
    }

    pub fn genie_rate(&self, sample: usize) -> f64 {
        self.samples[sample].rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Argmax with ties broken toward the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Generate `n_samples` user draws: channels become omni pilot features
/// (input) and per-beam rates (output). Noise variance is derived from the
/// scenario SNR against the mean noiseless feature power. Deterministic per
/// seed.
pub fn build_dataset(
    scenario: &Scenario,
    codebook: &Codebook,
    n_samples: usize,
    seed: u64,
) -> Result<BeamDataset> {
    if n_samples == 0 {
        return Err(BeamsecError::InvalidParameter("n_samples must be >= 1".into()));
    }
    scenario.validate()?;
    let omni = omni_beam(scenario.num_antennas());
    let snr = scenario.snr_linear();
    let extent = scenario.user_grid.extent_m;

    // pass 1: channels, noiseless features and rate targets per user draw
    let drawn: Vec<(Vec<f64>, Vec<f64>)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            use rand::{Rng, SeedableRng};
            let mut pos_rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7573 + i as u64));
            let user = (pos_rng.random::<f64>() * extent, pos_rng.random::<f64>() * extent);
            let channels = sample_channel(scenario, user, mix_seed(seed, 0x6368 + i as u64));
            let clean = omni_pilot_features(&channels, &omni, 0.0, 0)?;
            let rates = rate_targets(&channels, codebook, snr)?;
            Ok((clean.flatten(), rates.rates))
        })
        .collect::<Result<Vec<_>>>()?;

    // sigma2 from the configured SNR against mean noiseless feature power
    let feature_count: usize = drawn.iter().map(|(f, _)| f.len() / 2).sum();
    let mean_power: f64 = drawn
        .iter()
        .flat_map(|(f, _)| f.chunks_exact(2).map(|c| c[0] * c[0] + c[1] * c[1]))
        .sum::<f64>()
        / feature_count as f64;
    let sigma2 = mean_power / snr;

    // pass 2: re-draw features with receiver noise at the derived sigma2
    let noise_std = (sigma2 / 2.0).sqrt();
    let mut samples: Vec<DatasetSample> = drawn
        .into_par_iter()
        .enumerate()
        .map(|(i, (clean, rates))| {
            use rand::SeedableRng;
            use rand_distr::Distribution;
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6e6f + i as u64));
            let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
            let features =
                clean.iter().map(|v| v + noise_std * normal.sample(&mut rng)).collect();
            DatasetSample { features, rates }
        })
        .collect();

    // min-max scale the stored features into [0, 1] so an epsilon
    // perturbation has a fixed meaning relative to the input range across
    // scenarios
    let feature_offset = samples
        .iter()
        .flat_map(|s| s.features.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let feature_max = samples
        .iter()
        .flat_map(|s| s.features.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let feature_scale = feature_max - feature_offset;
    if !(feature_scale.is_finite() && feature_scale > 0.0) {
        return Err(BeamsecError::NonFinite(format!("feature scale {feature_scale}")));
    }
    for s in samples.iter_mut() {
        s.features.iter_mut().for_each(|v| *v = (*v - feature_offset) / feature_scale);
    }

    let r_max = samples
        .iter()
        .flat_map(|s| s.rates.iter().cloned())
        .fold(f64::NEG_INFINITY, f64::max);
    if !(r_max.is_finite() && r_max > 0.0) {
        return Err(BeamsecError::NonFinite(format!("dataset maximum rate {r_max}")));
    }
    Ok(BeamDataset {
        scenario_name: scenario.name.clone(),
        snr_db: scenario.snr_db,
        seed,
        num_bs: scenario.num_bs,
        num_subcarriers: scenario.num_subcarriers,
        num_beams: codebook.len(),
        r_max,
        feature_offset,
        feature_scale,
        samples,
    })
}

/// Rate achieved by the model-selected beam for one sample (un-normalized).
pub fn predicted_beam_rate(model: &MlpModel, sample: &DatasetSample) -> Result<f64> {
    if !model.is_trained() {
        return Err(BeamsecError::UntrainedModel);
    }
    let pred = nn::predict(model, &sample.features)?;
    Ok(sample.rates[argmax(&pred)])
}

/// Mean MSE of the model on the dataset, on clean or attacked inputs.
pub fn compute_mse(
    model: &MlpModel,
    dataset: &BeamDataset,
    attack: Option<&AttackParams>,
) -> Result<f64> {
    let samples = dataset.nn_samples();
    let refs: Vec<&Sample> = samples.iter().collect();
    match attack {
        None => nn::mean_loss(model, &refs),
        Some(params) => adversarial::attacked_mse(model, &refs, params),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Undefended,
    UndefendedAttacked,
    DefendedAttacked,
}

impl Case {
    pub const ALL: [Case; 3] =
        [Case::Undefended, Case::UndefendedAttacked, Case::DefendedAttacked];

    pub fn label(&self) -> &'static str {
        match self {
            Case::Undefended => "undefended",
            Case::UndefendedAttacked => "undefended_attacked",
            Case::DefendedAttacked => "defended_attacked",
        }
    }
}

/// The canonical evaluation grid: 0.00-0.10 in steps of 0.01, then 0.20-0.50
/// in steps of 0.10.
pub fn default_eps_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.01).collect();
    grid.extend((2..=5).map(|i| i as f64 * 0.1));
    grid
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub scenario: Scenario,
    /// Codebook size; defaults to the antenna count when zero.
    pub num_beams: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train: TrainConfig,
    pub adv: AdvTrainParams,
    pub cases: Vec<Case>,
    pub eps_grid: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    /// Desk-scale defaults for the given scenario.
    pub fn desk(scenario: Scenario) -> Self {
        Self {
            scenario,
            num_beams: 0,
            n_train: 5000,
            n_test: 500,
            train: TrainConfig::default(),
            adv: AdvTrainParams::default(),
            cases: Case::ALL.to_vec(),
            eps_grid: default_eps_grid(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.eps_grid.is_empty() {
            return Err(BeamsecError::InvalidParameter("empty epsilon grid".into()));
        }
        if self.eps_grid.iter().any(|&e| !e.is_finite() || e < 0.0) {
            return Err(BeamsecError::InvalidParameter("epsilon grid must be non-negative".into()));
        }
        if self.eps_grid.windows(2).any(|w| w[0] > w[1]) {
            return Err(BeamsecError::InvalidParameter("epsilon grid must be sorted".into()));
        }
        if self.seeds.is_empty() {
            return Err(BeamsecError::InvalidParameter("at least one seed required".into()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(BeamsecError::InvalidParameter("dataset sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn resolved_num_beams(&self) -> usize {
        if self.num_beams == 0 {
            self.scenario.num_antennas()
        } else {
            self.num_beams
        }
    }
}

/// One aggregated output row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: String,
    pub case: Case,
    pub epsilon: f64,
    pub seed_count: usize,
    pub mean_rate: f64,
    pub rate_std: f64,
    pub mse: f64,
    pub mse_std: f64,
    pub genie_rate: f64,
    pub overhead_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Worst observed `||x_adv - x||_inf - eps` across every generated
    /// adversarial sample; must stay <= ~1e-12.
    pub max_budget_excess: f64,
    /// Epsilon used when adversarially training the defended model.
    pub train_epsilon: f64,
}

/// Models and evaluation data for one experiment seed.
pub struct SeedArtifacts {
    pub seed: u64,
    pub undefended: MlpModel,
    pub defended: MlpModel,
    pub defense_log: AdvTrainLog,
    pub test: BeamDataset,
    pub test_samples: Vec<Sample>,
    /// Derived attack stop thresholds (2x RMS clean prediction error on the
    /// test set), one per attackable model.
    pub alpha_undefended: f64,
    pub alpha_defended: f64,
}

/// Train the undefended and defended models for one seed and materialize the
/// held-out test set (normalized by the training-set maximum).
pub fn prepare_seed(cfg: &SweepConfig, seed: u64) -> Result<SeedArtifacts> {
    let codebook = build_codebook(cfg.scenario.upa, cfg.resolved_num_beams())?;
    let train_ds = build_dataset(&cfg.scenario, &codebook, cfg.n_train, seed)?;
    let test_ds = build_dataset(&cfg.scenario, &codebook, cfg.n_test, mix_seed(seed, 0x7465_7374))?
        .with_normalization(train_ds.r_max, train_ds.feature_offset, train_ds.feature_scale);

    let train_samples = train_ds.nn_samples();
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = mix_seed(cfg.train.seed, seed);

    let mut undefended =
        nn::init_model(train_ds.input_dim(), train_ds.num_beams, train_cfg.seed);
    nn::train(&mut undefended, &train_samples, &train_cfg)?;
    undefended.r_max = Some(train_ds.r_max);

    let (mut defended, defense_log) =
        adversarial::adversarial_training(&train_samples, &train_cfg, &cfg.adv)?;
    defended.r_max = Some(train_ds.r_max);

    let test_samples = test_ds.nn_samples();
    let test_refs: Vec<&Sample> = test_samples.iter().collect();
    let alpha_undefended = adversarial::default_alpha(&undefended, &test_refs)?;
    let alpha_defended = adversarial::default_alpha(&defended, &test_refs)?;

    Ok(SeedArtifacts {
        seed,
        undefended,
        defended,
        defense_log,
        test: test_ds,
        test_samples,
        alpha_undefended,
        alpha_defended,
    })
}

/// Per-(case, epsilon, seed) evaluation: mean achieved rate, MSE and the
/// worst budget excess over the attacked test inputs.
pub fn evaluate_cell(
    art: &SeedArtifacts,
    case: Case,
    epsilon: f64,
    attack_template: &AttackParams,
) -> Result<(f64, f64, f64)> {
    let (model, derived_alpha) = match case {
        Case::Undefended | Case::UndefendedAttacked => (&art.undefended, art.alpha_undefended),
        Case::DefendedAttacked => (&art.defended, art.alpha_defended),
    };
    let attacked = case != Case::Undefended;
    let params = AttackParams {
        epsilon,
        alpha: if attack_template.alpha.is_finite() {
            attack_template.alpha
        } else {
            derived_alpha
        },
        ..*attack_template
    };
    let per_sample: Vec<(f64, f64, f64)> = art
        .test_samples
        .par_iter()
        .zip(&art.test.samples)
        .map(|((x, y), ds_sample)| {
            let (input, excess) = if attacked && epsilon > 0.0 {
                let adv = adversarial::complex_fgsm(x, y, model, &params)?;
                let linf = adv
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                (adv, linf - epsilon)
            } else {
                (x.clone(), f64::NEG_INFINITY)
            };
            let pred = nn::predict(model, &input)?;
            let mse = nn::mse_loss(&pred, y)?;
            let rate = ds_sample.rates[argmax(&pred)];
            Ok((rate, mse, excess))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_sample.len() as f64;
    let mean_rate = per_sample.iter().map(|c| c.0).sum::<f64>() / n;
    let mean_mse = per_sample.iter().map(|c| c.1).sum::<f64>() / n;
    let excess = per_sample.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    Ok((mean_rate, mean_mse, excess))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Run the configured cases over the epsilon grid, repeating over seeds and
/// averaging. Results are invariant to seed ordering.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();

    let artifacts: Vec<SeedArtifacts> =
        seeds.iter().map(|&s| prepare_seed(cfg, s)).collect::<Result<Vec<_>>>()?;

    // per-seed reference levels, shared across cases
    let genie: Vec<f64> = artifacts
        .iter()
        .map(|a| {
            (0..a.test.samples.len()).map(|i| a.test.genie_rate(i)).sum::<f64>()
                / a.test.samples.len() as f64
        })
        .collect();
    let overhead_factor = cfg.scenario.overhead_factor();

    let mut rows = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for case in &cfg.cases {
        for &eps in &cfg.eps_grid {
            let mut rates = Vec::with_capacity(artifacts.len());
            let mut mses = Vec::with_capacity(artifacts.len());
            for art in &artifacts {
                let (rate, mse, excess) = evaluate_cell(art, *case, eps, &cfg.adv.attack)?;
                rates.push(rate);
                mses.push(mse);
                max_excess = max_excess.max(excess);
            }
            let (mean_rate, rate_std) = mean_std(&rates);
            let (mse, mse_std) = mean_std(&mses);
            let (genie_mean, _) = mean_std(&genie);
            rows.push(SweepRow {
                scenario: cfg.scenario.name.clone(),
                case: *case,
                epsilon: eps,
                seed_count: seeds.len(),
                mean_rate,
                rate_std,
                mse,
                mse_std,
                genie_rate: genie_mean,
                overhead_rate: overhead_factor * genie_mean,
            });
        }
    }
    Ok(SweepResult {
        rows,
        max_budget_excess: max_excess,
        train_epsilon: cfg.adv.attack.epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::preset;

    fn desk_codebook(s: &Scenario) -> Codebook {
        build_codebook(s.upa, s.num_antennas()).unwrap()
    }

    #[test]
    fn single_sample_dataset_r_max_is_its_max() {
        let s = preset("desk").unwrap();
        let cb = desk_codebook(&s);
        let ds = build_dataset(&s, &cb, 1, 3).unwrap();
        assert_eq!(ds.samples.len(), 1);
        let max = ds.samples[0].rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(ds.r_max, max);
    }

    #[test]
    fn dataset_is_deterministic() {
        let s = preset("desk").unwrap();
        let cb = desk_codebook(&s);
        let a = build_dataset(&s, &cb, 50, 7).unwrap();
        let b = build_dataset(&s, &cb, 50, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn targets_normalized_to_unit_max() {
        let s = preset("desk").unwrap();
        let cb = desk_codebook(&s);
        let ds = build_dataset(&s, &cb, 300, 11).unwrap();
        let samples = ds.nn_samples();
        let mut global_max = f64::NEG_INFINITY;
        for (_, y) in &samples {
            for &t in y {
                assert!((0.0..=1.0 + 1e-12).contains(&t));
                global_max = global_max.max(t);
            }
        }
        assert!((global_max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_model_achieves_genie_rate() {
        // a "model" that exactly outputs the target ranks the genie beam first;
        // emulate by checking the argmax identity on targets directly
        let s = preset("desk").unwrap();
        let cb = desk_codebook(&s);
        let ds = build_dataset(&s, &cb, 20, 13).unwrap();
        for (i, sample) in ds.samples.iter().enumerate() {
            let best = argmax(&sample.rates);
            assert_eq!(sample.rates[best], ds.genie_rate(i));
        }
    }

    #[test]
    fn constant_output_model_picks_beam_zero() {
        let s = preset("desk").unwrap();
        let cb = desk_codebook(&s);
        let ds = build_dataset(&s, &cb, 5, 17).unwrap();
        let mut model = nn::init_model(ds.input_dim(), ds.num_beams, 0);
        for l in model.layers.iter_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        model.r_max = Some(ds.r_max);
        for sample in &ds.samples {
            let rate = predicted_beam_rate(&model, sample).unwrap();
            assert_eq!(rate, sample.rates[0]);
        }
    }

    #[test]
    fn untrained_model_rejected_for_prediction() {
        let s = preset("desk").unwrap();
        let cb = desk_codebook(&s);
        let ds = build_dataset(&s, &cb, 2, 19).unwrap();
        let model = nn::init_model(ds.input_dim(), ds.num_beams, 0);
        assert!(predicted_beam_rate(&model, &ds.samples[0]).is_err());
    }

    #[test]
    fn exact_target_model_mse_is_zero_analog() {
        // compute_mse with a dataset of identical predictions: use the
        // constant-zero model against zero targets as the degenerate check
        let s = preset("desk").unwrap();
        let cb = desk_codebook(&s);
        let mut ds = build_dataset(&s, &cb, 3, 23).unwrap();
        let mut model = nn::init_model(ds.input_dim(), ds.num_beams, 0);
        for l in model.layers.iter_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        model.r_max = Some(ds.r_max);
        for sample in ds.samples.iter_mut() {
            sample.rates.iter_mut().for_each(|r| *r = 0.0);
        }
        assert_eq!(compute_mse(&model, &ds, None).unwrap(), 0.0);
    }

    #[test]
    fn default_grid_matches_table() {
        let grid = default_eps_grid();
        assert_eq!(grid.len(), 15);
        assert_eq!(grid[0], 0.0);
        assert!((grid[10] - 0.10).abs() < 1e-12);
        assert!((grid[14] - 0.50).abs() < 1e-12);
    }

    #[test]
    fn sweep_config_validation() {
        let s = preset("desk").unwrap();
        let mut cfg = SweepConfig::desk(s);
        cfg.eps_grid = vec![0.1, 0.05];
        assert!(cfg.validate().is_err());
        cfg.eps_grid = vec![];
        assert!(cfg.validate().is_err());
        cfg.eps_grid = vec![0.0, 0.1];
        cfg.seeds = vec![];
        assert!(cfg.validate().is_err());
    }
}
