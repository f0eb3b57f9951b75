//! Beam-steering codebooks, per-beam achievable rates, the exhaustive
//! genie-aided search and the training-overhead effective rate.

use serde::{Deserialize, Serialize};

use crate::channel::{steering_vector, ChannelSet};
use crate::error::{BeamsecError, Result};
use crate::scenario::UpaGeometry;
use crate::signal::{self, ComplexVec};

/// Finite set of candidate beamforming vectors over a quantized azimuth grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub beams: Vec<ComplexVec>,
    pub angles: Vec<f64>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }
}

/// Per-beam achievable rates (bits/s/Hz) with the normalization constant used
/// to map them into the tanh output range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateVector {
    pub rates: Vec<f64>,
    /// Dataset-level maximum rate; `rates / r_max` lies in [0, 1].
    pub r_max: f64,
}

impl RateVector {
    pub fn normalized(&self) -> Vec<f64> {
        self.rates.iter().map(|r| r / self.r_max).collect()
    }
}

/// Achievable rate discounted by the beam-training overhead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveRate {
    pub value: f64,
    pub overhead_factor: f64,
}

/// Pilot transmit configuration: data symbols s_k and the per-BS precoder
/// c_{k,n}. Defaults to s_k = 1 and the equal-power split 1/sqrt(N).
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitConfig {
    pub symbols: ComplexVec,
    pub precoder: ComplexVec,
}

impl TransmitConfig {
    pub fn pilot(num_subcarriers: usize, num_bs: usize) -> Self {
        let c = 1.0 / (num_bs as f64).sqrt();
        Self {
            symbols: vec![num_complex::Complex64::new(1.0, 0.0); num_subcarriers],
            precoder: vec![num_complex::Complex64::new(c, 0.0); num_bs],
        }
    }
}

/// Build a codebook of P steering vectors over a uniform azimuth grid on
/// [-pi/2, pi/2), elevation 0, half-wavelength spacing.
pub fn build_codebook(upa: UpaGeometry, num_beams: usize) -> Result<Codebook> {
    if num_beams < 2 {
        return Err(BeamsecError::InvalidParameter("codebook needs at least 2 beams".into()));
    }
    if upa.num_elements() < 1 {
        return Err(BeamsecError::InvalidParameter("array must have at least one element".into()));
    }
    let step = std::f64::consts::PI / num_beams as f64;
    let angles: Vec<f64> =
        (0..num_beams).map(|p| -std::f64::consts::FRAC_PI_2 + p as f64 * step).collect();
    let beams = angles
        .iter()
        .map(|&az| steering_vector(upa.rows, upa.cols, az, 0.0, 0.5))
        .collect();
    Ok(Codebook { beams, angles })
}

/// Achievable rate of beam p over the channel set:
/// `(1/K) * sum_k sum_n log2(1 + snr * |h_{k,n}^T g_p|^2)`.
pub fn per_beam_rate(channels: &ChannelSet, codebook: &Codebook, beam: usize, snr: f64) -> Result<f64> {
    if beam >= codebook.len() {
        return Err(BeamsecError::IndexOutOfRange { index: beam, len: codebook.len() });
    }
    if snr < 0.0 {
        return Err(BeamsecError::InvalidParameter("snr must be >= 0".into()));
    }
    let g = &codebook.beams[beam];
    let mut sum = 0.0;
    for n in 0..channels.num_bs {
        for k in 0..channels.num_subcarriers {
            let gain = signal::dot_t(channels.channel(n, k), g).norm_sqr();
            sum += (1.0 + snr * gain).log2();
        }
    }
    Ok(sum / channels.num_subcarriers as f64)
}

/// Rates of every codebook beam. `r_max` is a placeholder 1.0 here; dataset
/// construction overwrites it with the dataset-level maximum.
pub fn rate_targets(channels: &ChannelSet, codebook: &Codebook, snr: f64) -> Result<RateVector> {
    let rates = (0..codebook.len())
        .map(|p| per_beam_rate(channels, codebook, p, snr))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RateVector { rates, r_max: 1.0 })
}

/// Exhaustive search over the codebook; ties break toward the smallest index.
pub fn genie_best_beam(channels: &ChannelSet, codebook: &Codebook, snr: f64) -> Result<(usize, f64)> {
    let mut best = (0usize, f64::NEG_INFINITY);
    for p in 0..codebook.len() {
        let rate = per_beam_rate(channels, codebook, p, snr)?;
        if rate > best.1 {
            best = (p, rate);
        }
    }
    Ok(best)
}

/// Discount a sum rate by the training overhead factor `1 - T_TR / T_B`.
pub fn effective_rate(sum_rate: f64, training_time_s: f64, beam_coherence_s: f64) -> Result<EffectiveRate> {
    if training_time_s < 0.0 || training_time_s >= beam_coherence_s {
        return Err(BeamsecError::InvalidParameter(
            "training time must satisfy 0 <= T_TR < T_B".into(),
        ));
    }
    let overhead_factor = 1.0 - training_time_s / beam_coherence_s;
    Ok(EffectiveRate { value: overhead_factor * sum_rate, overhead_factor })
}
