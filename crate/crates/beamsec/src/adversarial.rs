//! Sign-gradient attack in the complex domain and the iterative adversarial
//! training defense.
//!
//! The attack runs on the interleaved-real representation of the pilot
//! features: adding `(eps + eps*j) * sign_complex(grad)` in the complex
//! domain is exactly `eps * sign(grad)` applied to each real component, since
//! the componentwise sign acts on re and im independently.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BeamsecError, Result};
use crate::nn::{self, MlpModel, Sample, TrainConfig};
use crate::signal::ComplexVec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackParams {
    /// Per-component l-infinity budget (and step size).
    pub epsilon: f64,
    /// Output-distance stopping threshold; iteration stops once
    /// `||F(x_{t+1}) - y||_2 >= alpha`.
    pub alpha: f64,
    /// Iteration cap N.
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self { epsilon: 0.1, alpha: f64::INFINITY, max_iters: 10, seed: 0 }
    }
}

impl AttackParams {
    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(BeamsecError::InvalidParameter("epsilon must be finite and >= 0".into()));
        }
        if self.max_iters < 1 {
            return Err(BeamsecError::InvalidParameter("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvTrainParams {
    pub attack: AttackParams,
    pub max_rounds: usize,
    /// Relative change in validation adversarial MSE below which the loop is
    /// considered steady-state.
    pub steady_state_tol: f64,
    /// Fraction of training inputs attacked and appended each round.
    pub augment_ratio: f64,
}

impl Default for AdvTrainParams {
    fn default() -> Self {
        Self {
            // Training-time budget is deliberately larger than the canonical
            // evaluation epsilon of 0.1: hardening against 0.3-perturbations
            // is what makes the defended error curve flat across the whole
            // evaluation grid instead of only at the training point.
            attack: AttackParams { epsilon: 0.3, ..AttackParams::default() },
            max_rounds: 10,
            steady_state_tol: 0.01,
            augment_ratio: 1.0,
        }
    }
}

/// Why the adversarial training loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    SteadyState,
    MaxRounds,
    AttackIsIdentity,
}

/// One round of the defense loop, for the round log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// MSE on attacked validation inputs after this round's training.
    pub adv_val_mse: f64,
    pub train_set_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvTrainLog {
    pub rounds: Vec<RoundRecord>,
    pub stop_reason: StopReason,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Componentwise complex sign: `sign(re) + j*sign(im)`, with `sign(0) = 0`.
pub fn sign_complex(g: &[Complex64]) -> ComplexVec {
    g.iter().map(|z| Complex64::new(sign(z.re), sign(z.im))).collect()
}

/// Single FGSM step `x + eps * sign(grad)` on interleaved reals.
pub fn fgsm_step(x: &[f64], input_grad: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if x.len() != input_grad.len() {
        return Err(BeamsecError::DimensionMismatch {
            expected: x.len(),
            got: input_grad.len(),
            context: "fgsm gradient".into(),
        });
    }
    Ok(x.iter().zip(input_grad).map(|(xi, gi)| xi + epsilon * sign(*gi)).collect())
}

/// Componentwise clamp of `candidate` into the l-infinity ball of radius
/// `epsilon` around `origin`.
pub fn clip_ball(candidate: &[f64], origin: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if candidate.len() != origin.len() {
        return Err(BeamsecError::DimensionMismatch {
            expected: origin.len(),
            got: candidate.len(),
            context: "clip operands".into(),
        });
    }
    Ok(candidate
        .iter()
        .zip(origin)
        .map(|(c, o)| c.clamp(o - epsilon, o + epsilon))
        .collect())
}

/// Iterative sign-gradient attack with l-infinity clipping and an early stop
/// on prediction distance. Gradients are taken in eval mode against the
/// deployed deterministic model. The returned iterate always satisfies
/// `||x_adv - x||_inf <= epsilon`.
pub fn complex_fgsm(
    x: &[f64],
    y: &[f64],
    model: &MlpModel,
    params: &AttackParams,
) -> Result<Vec<f64>> {
    params.validate()?;
    if !model.is_trained() {
        return Err(BeamsecError::UntrainedModel);
    }
    let mut current = x.to_vec();
    for _ in 0..params.max_iters {
        let (grad, _) = nn::input_gradient(model, &current, y)?;
        let stepped = fgsm_step(&current, &grad, params.epsilon)?;
        current = clip_ball(&stepped, x, params.epsilon)?;
        let pred = nn::predict(model, &current)?;
        let distance: f64 =
            pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>().sqrt();
        if distance >= params.alpha {
            break;
        }
    }
    Ok(current)
}

/// Attack every sample in parallel, preserving order.
pub fn attack_samples(
    samples: &[&Sample],
    model: &MlpModel,
    params: &AttackParams,
) -> Result<Vec<Vec<f64>>> {
    samples
        .par_iter()
        .map(|(x, y)| complex_fgsm(x, y, model, params))
        .collect()
}

/// Default stopping threshold: twice the RMS l2 norm of the model's clean
/// prediction error on the given samples, so the stop only fires once the
/// attack has pushed the prediction well beyond its intrinsic error scale.
pub fn default_alpha(model: &MlpModel, samples: &[&Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(BeamsecError::EmptyDataset);
    }
    let mean_sq: f64 = samples
        .par_iter()
        .map(|(x, y)| {
            let pred = nn::predict(model, x)?;
            Ok(pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum::<f64>()
        / samples.len() as f64;
    Ok(2.0 * mean_sq.sqrt())
}

/// Mean MSE of the model on attacked versions of `samples`.
pub fn attacked_mse(model: &MlpModel, samples: &[&Sample], params: &AttackParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(BeamsecError::EmptyDataset);
    }
    let total: f64 = samples
        .par_iter()
        .map(|(x, y)| {
            let adv = complex_fgsm(x, y, model, params)?;
            nn::mse_loss(&nn::predict(model, &adv)?, y)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(total / samples.len() as f64)
}

/// Iterative adversarial training. Round 0 trains on clean data; each later
/// round regenerates adversarial versions of an `augment_ratio` fraction of
/// the clean training inputs against the current model, appends them with the
/// clean labels, and retrains. Stops at steady state of the validation
/// adversarial MSE or after `max_rounds`.
pub fn adversarial_training(
    samples: &[Sample],
    train_config: &TrainConfig,
    adv_params: &AdvTrainParams,
) -> Result<(MlpModel, AdvTrainLog)> {
    if samples.is_empty() {
        return Err(BeamsecError::EmptyDataset);
    }
    if adv_params.max_rounds < 1 {
        return Err(BeamsecError::InvalidParameter("max_rounds must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&adv_params.augment_ratio) || adv_params.augment_ratio == 0.0 {
        return Err(BeamsecError::InvalidParameter("augment_ratio must be in (0, 1]".into()));
    }

    let input_dim = samples[0].0.len();
    let output_dim = samples[0].1.len();
    let (train_idx, val_idx) = nn::split_indices(samples.len(), train_config.val_fraction, train_config.seed);
    let clean_train: Vec<Sample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let val: Vec<&Sample> = val_idx.iter().map(|&i| &samples[i]).collect();

    let mut model = nn::init_model(input_dim, output_dim, train_config.seed);
    let mut state = nn::AdamState::new(&model);
    let train_refs: Vec<&Sample> = clean_train.iter().collect();
    nn::train_epochs(&mut model, &train_refs, &val, train_config, &mut state, 0)?;
    model.r_max.get_or_insert(1.0);

    // When alpha is left to be derived, re-derive it from the current model
    // before each generation pass so training-time attacks stay exactly as
    // strong as attacks mounted against the deployed model.
    let derive_alpha = !adv_params.attack.alpha.is_finite();
    let mut attack = adv_params.attack;
    if derive_alpha {
        attack.alpha = default_alpha(&model, &val)?;
    }

    let mut log = AdvTrainLog { rounds: Vec::new(), stop_reason: StopReason::MaxRounds };
    if attack.epsilon == 0.0 {
        // the attack is the identity; augmenting would only duplicate clean
        // samples, so the clean-trained model already is the fixed point
        log.stop_reason = StopReason::AttackIsIdentity;
        log.rounds.push(RoundRecord {
            round: 0,
            adv_val_mse: nn::mean_loss(&model, &val)?,
            train_set_size: clean_train.len(),
        });
        return Ok((model, log));
    }

    // The round-to-round progress metric uses a fixed full-strength attack
    // (no early stop) so successive rounds are comparable: the generation
    // attack's derived alpha changes with the model, and a steady-state test
    // on a moving metric stops the loop before robustness has converged.
    let monitor = AttackParams { alpha: f64::INFINITY, ..attack };
    let mut prev_mse = attacked_mse(&model, &val, &monitor)?;
    log.rounds.push(RoundRecord {
        round: 0,
        adv_val_mse: prev_mse,
        train_set_size: clean_train.len(),
    });

    let n_augment =
        ((clean_train.len() as f64) * adv_params.augment_ratio).round().max(1.0) as usize;
    // the clean pass counts as the first round; max_rounds = 1 means no
    // augmentation at all
    let mut augmented = clean_train.clone();
    let mut quiet_rounds = 0usize;
    for round in 1..adv_params.max_rounds {
        if derive_alpha {
            attack.alpha = default_alpha(&model, &val)?;
        }
        let attacked_subset: Vec<&Sample> =
            clean_train.iter().take(n_augment.min(clean_train.len())).collect();
        let adv_inputs = attack_samples(&attacked_subset, &model, &attack)?;
        augmented.truncate(clean_train.len() + (round - 1) * attacked_subset.len());
        augmented.extend(
            adv_inputs
                .into_iter()
                .zip(&attacked_subset)
                .map(|(adv, (_, y))| (adv, y.clone())),
        );
        let refs: Vec<&Sample> = augmented.iter().collect();
        nn::train_epochs(
            &mut model,
            &refs,
            &val,
            train_config,
            &mut state,
            (round * train_config.epochs) as u64,
        )?;
        let mse = attacked_mse(&model, &val, &monitor)?;
        log.rounds.push(RoundRecord {
            round,
            adv_val_mse: mse,
            train_set_size: augmented.len(),
        });
        let rel_change = (mse - prev_mse).abs() / prev_mse.max(1e-12);
        prev_mse = mse;
        // one small delta can be a chance plateau of a noisy metric; call it
        // steady state only when two consecutive rounds sit inside tolerance
        if rel_change < adv_params.steady_state_tol {
            quiet_rounds += 1;
            if quiet_rounds >= 2 {
                log.stop_reason = StopReason::SteadyState;
                break;
            }
        } else {
            quiet_rounds = 0;
        }
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model_with_dims, Activation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained_toy_model() -> (MlpModel, Vec<Sample>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<Sample> = (0..400)
            .map(|_| {
                let x: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let y: Vec<f64> =
                    vec![(x[0] + x[1]).tanh(), (x[2] - x[3]).tanh(), (x[4] * x[5]).tanh()];
                (x, y)
            })
            .collect();
        let mut model =
            init_model_with_dims(&[6, 24, 3], &[Activation::Relu, Activation::Tanh], 8);
        let cfg = TrainConfig { dropout_ratio: 0.0, seed: 9, epochs: 20, ..Default::default() };
        nn::train(&mut model, &samples, &cfg).unwrap();
        (model, samples)
    }

    #[test]
    fn sign_complex_componentwise() {
        let v = vec![
            Complex64::new(3.0, -2.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(-0.1, 5.0),
            Complex64::new(2.0, -0.0),
        ];
        let s = sign_complex(&v);
        assert_eq!(s[0], Complex64::new(1.0, -1.0));
        assert_eq!(s[1], Complex64::new(0.0, 0.0));
        assert_eq!(s[2], Complex64::new(-1.0, 1.0));
        assert_eq!(s[3], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn fgsm_step_sign_rule() {
        let x = vec![0.0, 0.0];
        let g = vec![5.0, -3.0];
        assert_eq!(fgsm_step(&x, &g, 0.1).unwrap(), vec![0.1, -0.1]);
        assert_eq!(fgsm_step(&x, &g, 0.0).unwrap(), x);
    }

    #[test]
    fn fgsm_step_saturates_budget_without_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let g: Vec<f64> = (0..16).map(|_| rng.random::<f64>() - 0.5).collect();
        let adv = fgsm_step(&x, &g, 0.07).unwrap();
        let linf = adv
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!((linf - 0.07).abs() < 1e-15);
    }

    #[test]
    fn clip_ball_behaviour() {
        let origin = vec![0.0, 0.0, 0.0];
        let inside = vec![0.05, -0.03, 0.0];
        assert_eq!(clip_ball(&inside, &origin, 0.1).unwrap(), inside);
        let outside = vec![0.35, -0.2, 0.1];
        let clipped = clip_ball(&outside, &origin, 0.1).unwrap();
        assert_eq!(clipped, vec![0.1, -0.1, 0.1]);
        assert_eq!(clip_ball(&clipped, &origin, 0.1).unwrap(), clipped);
        assert!(clip_ball(&outside, &[0.0], 0.1).is_err());
    }

    #[test]
    fn zero_epsilon_attack_is_identity() {
        let (model, samples) = trained_toy_model();
        let (x, y) = &samples[0];
        let params = AttackParams { epsilon: 0.0, ..Default::default() };
        let adv = complex_fgsm(x, y, &model, &params).unwrap();
        assert_eq!(&adv, x);
        let before = nn::mse_loss(&nn::predict(&model, x).unwrap(), y).unwrap();
        let after = nn::mse_loss(&nn::predict(&model, &adv).unwrap(), y).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn zero_alpha_stops_after_one_iteration() {
        // alpha = 0 fires on any prediction distance >= 0, so the result must
        // equal a single fgsm_step + clip
        let (model, samples) = trained_toy_model();
        let (x, y) = &samples[1];
        let params = AttackParams { epsilon: 0.05, alpha: 0.0, max_iters: 10, seed: 0 };
        let adv = complex_fgsm(x, y, &model, &params).unwrap();
        let (_, grad, _) = nn::backward(&model, x, y, nn::Mode::Eval, 0.0, 0).unwrap();
        let expect = clip_ball(&fgsm_step(x, &grad, 0.05).unwrap(), x, 0.05).unwrap();
        assert_eq!(adv, expect);
    }

    #[test]
    fn single_iteration_equals_step_plus_clip() {
        let (model, samples) = trained_toy_model();
        let params = AttackParams {
            epsilon: 0.08,
            alpha: f64::INFINITY,
            max_iters: 1,
            seed: 0,
        };
        for (x, y) in samples.iter().take(20) {
            let adv = complex_fgsm(x, y, &model, &params).unwrap();
            let (_, grad, _) = nn::backward(&model, x, y, nn::Mode::Eval, 0.0, 0).unwrap();
            let expect = clip_ball(&fgsm_step(x, &grad, 0.08).unwrap(), x, 0.08).unwrap();
            assert_eq!(adv, expect);
        }
    }

    #[test]
    fn attack_respects_budget() {
        let (model, samples) = trained_toy_model();
        for eps in [0.01, 0.05, 0.1, 0.3] {
            let params = AttackParams { epsilon: eps, max_iters: 10, ..Default::default() };
            for (x, y) in samples.iter().take(30) {
                let adv = complex_fgsm(x, y, &model, &params).unwrap();
                let linf = adv
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                assert!(linf <= eps + 1e-12);
            }
        }
    }

    #[test]
    fn attack_increases_loss_on_average() {
        let (model, samples) = trained_toy_model();
        let params = AttackParams { epsilon: 0.1, ..Default::default() };
        let refs: Vec<&Sample> = samples.iter().take(100).collect();
        let clean = nn::mean_loss(&model, &refs).unwrap();
        let attacked = attacked_mse(&model, &refs, &params).unwrap();
        assert!(attacked > clean, "attacked {attacked} <= clean {clean}");
    }

    #[test]
    fn untrained_model_rejected() {
        let model = init_model_with_dims(&[6, 24, 3], &[Activation::Relu, Activation::Tanh], 8);
        let params = AttackParams::default();
        assert!(matches!(
            complex_fgsm(&[0.0; 6], &[0.0; 3], &model, &params),
            Err(BeamsecError::UntrainedModel)
        ));
    }

    #[test]
    fn adversarial_training_zero_epsilon_equals_clean_training() {
        let (_, samples) = trained_toy_model();
        let cfg = TrainConfig { dropout_ratio: 0.0, seed: 9, epochs: 5, ..Default::default() };
        let adv = AdvTrainParams {
            attack: AttackParams { epsilon: 0.0, ..Default::default() },
            ..Default::default()
        };
        let (defended, log) = adversarial_training(&samples, &cfg, &adv).unwrap();
        assert_eq!(log.stop_reason, StopReason::AttackIsIdentity);

        // reference clean training with the identical split and seeds
        let (train_idx, val_idx) = nn::split_indices(samples.len(), cfg.val_fraction, cfg.seed);
        let train_set: Vec<&Sample> = train_idx.iter().map(|&i| &samples[i]).collect();
        let val_set: Vec<&Sample> = val_idx.iter().map(|&i| &samples[i]).collect();
        let mut clean = nn::init_model(6, 3, cfg.seed);
        let mut state = nn::AdamState::new(&clean);
        nn::train_epochs(&mut clean, &train_set, &val_set, &cfg, &mut state, 0).unwrap();
        clean.r_max.get_or_insert(1.0);
        assert_eq!(defended, clean);
    }

    #[test]
    fn adversarial_training_single_round_is_clean_pass() {
        let (_, samples) = trained_toy_model();
        let cfg = TrainConfig { dropout_ratio: 0.0, seed: 10, epochs: 3, ..Default::default() };
        let adv = AdvTrainParams { max_rounds: 1, ..Default::default() };
        let (_, log) = adversarial_training(&samples, &cfg, &adv).unwrap();
        // only the clean pass, no augmentation rounds
        assert_eq!(log.rounds.len(), 1);
        assert_eq!(log.rounds[0].round, 0);
        assert_eq!(log.stop_reason, StopReason::MaxRounds);
    }
}
