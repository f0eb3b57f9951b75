//! Geometric L-path mmWave channel generator and noisy omni-combined pilot
//! features. Stands in for ray-traced channel data; a CSV import path is
//! provided for externally generated channels.

use std::collections::HashSet;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BeamsecError, Result};
use crate::scenario::Scenario;
use crate::signal::{self, ComplexVec};

/// OFDM subcarrier spacing used for the per-subcarrier delay phase. The
/// prediction model only sees the resulting features, so any fixed numerology
/// works; 1 MHz with delays up to 100 ns gives visible frequency selectivity.
pub const SUBCARRIER_SPACING_HZ: f64 = 1.0e6;

/// Maximum NLOS path delay, seconds.
pub const MAX_PATH_DELAY_S: f64 = 100.0e-9;

/// Splitmix64 step, used to derive independent RNG streams from one seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Channel vectors h_{k,n} for every (BS n, subcarrier k) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub num_bs: usize,
    pub num_subcarriers: usize,
    pub num_antennas: usize,
    /// Indexed `n * num_subcarriers + k`, each entry of length `num_antennas`.
    entries: Vec<ComplexVec>,
}

impl ChannelSet {
    pub fn new(num_bs: usize, num_subcarriers: usize, num_antennas: usize) -> Self {
        let entries =
            vec![vec![Complex64::new(0.0, 0.0); num_antennas]; num_bs * num_subcarriers];
        Self { num_bs, num_subcarriers, num_antennas, entries }
    }

    pub fn channel(&self, bs: usize, subcarrier: usize) -> &ComplexVec {
        &self.entries[bs * self.num_subcarriers + subcarrier]
    }

    pub fn channel_mut(&mut self, bs: usize, subcarrier: usize) -> &mut ComplexVec {
        &mut self.entries[bs * self.num_subcarriers + subcarrier]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ComplexVec> {
        self.entries.iter()
    }
}

/// Omni-combined received pilots per (BS, subcarrier), the model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotFeatures {
    pub num_bs: usize,
    pub num_subcarriers: usize,
    /// Indexed `n * num_subcarriers + k`.
    pub values: ComplexVec,
}

impl PilotFeatures {
    /// Interleaved re/im form of length `2 * N * K`, the network input.
    pub fn flatten(&self) -> Vec<f64> {
        signal::flatten(&self.values)
    }

    pub fn from_flat(flat: &[f64], num_bs: usize, num_subcarriers: usize) -> Result<Self> {
        if flat.len() != 2 * num_bs * num_subcarriers {
            return Err(BeamsecError::DimensionMismatch {
                expected: 2 * num_bs * num_subcarriers,
                got: flat.len(),
                context: "flattened pilot features".into(),
            });
        }
        Ok(Self { num_bs, num_subcarriers, values: signal::unflatten(flat) })
    }
}

/// UPA array response at the given azimuth/elevation, entries
/// `(1/sqrt(M)) * exp(j * 2*pi*spacing * (a*sin(az)*cos(el) + b*sin(el)))`
/// for element (a, b), flattened row-major.
pub fn steering_vector(
    upa_rows: usize,
    upa_cols: usize,
    azimuth: f64,
    elevation: f64,
    wavelength_spacing: f64,
) -> ComplexVec {
    let m = upa_rows * upa_cols;
    assert!(m >= 1, "array must have at least one element");
    let scale = 1.0 / (m as f64).sqrt();
    let row_step = 2.0 * std::f64::consts::PI * wavelength_spacing * azimuth.sin() * elevation.cos();
    let col_step = 2.0 * std::f64::consts::PI * wavelength_spacing * elevation.sin();
    let mut out = Vec::with_capacity(m);
    for a in 0..upa_rows {
        for b in 0..upa_cols {
            let phase = a as f64 * row_step + b as f64 * col_step;
            out.push(Complex64::from_polar(scale, phase));
        }
    }
    out
}

/// The quasi-omni combining pattern: the zero-phase steering vector
/// `1/sqrt(M) * (1, ..., 1)`.
pub fn omni_beam(num_antennas: usize) -> ComplexVec {
    let scale = 1.0 / (num_antennas as f64).sqrt();
    vec![Complex64::new(scale, 0.0); num_antennas]
}

struct PathParams {
    gain: Complex64,
    delay_s: f64,
    azimuth: f64,
    elevation: f64,
}

/// Broadside azimuth of `user` as seen from BS `bs` of `scenario`. BSs sit on
/// a line well behind the user grid, which keeps line-of-sight angles inside
/// the array's unambiguous field of view (|azimuth| < 30 degrees for the
/// half-wavelength UPA) and always in (-pi/2, pi/2).
pub fn bs_user_azimuth(scenario: &Scenario, bs: usize, user: (f64, f64)) -> f64 {
    let extent = scenario.user_grid.extent_m;
    let bs_x = (bs as f64 + 0.5) * extent / scenario.num_bs as f64;
    let bs_y = -2.0 * extent;
    (user.0 - bs_x).atan2(user.1 - bs_y)
}

/// Draw the L-path geometric channel for one user position:
/// `h_{k,n} = sqrt(M/L) * sum_l alpha_l * exp(-j*2*pi*k*tau_l*df) * a(phi_l, theta_l)`
/// with unit-variance circular Gaussian path gains. When the LOS draw
/// succeeds, path 0 points at the user with deterministic unit gain and zero
/// delay. Deterministic for a fixed seed.
pub fn sample_channel(scenario: &Scenario, user_position: (f64, f64), rng_seed: u64) -> ChannelSet {
    let n_bs = scenario.num_bs;
    let k_sub = scenario.num_subcarriers;
    let m = scenario.num_antennas();
    let l_paths = scenario.num_paths;
    let normal = Normal::new(0.0, (0.5f64).sqrt()).unwrap();

    let mut set = ChannelSet::new(n_bs, k_sub, m);
    for n in 0..n_bs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(rng_seed, n as u64 + 1));
        let los = rng.random::<f64>() < scenario.los_probability;
        let paths: Vec<PathParams> = (0..l_paths)
            .map(|l| {
                if l == 0 && los {
                    PathParams {
                        gain: Complex64::new(1.0, 0.0),
                        delay_s: 0.0,
                        azimuth: bs_user_azimuth(scenario, n, user_position),
                        elevation: 0.0,
                    }
                } else {
                    PathParams {
                        gain: Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)),
                        delay_s: rng.random::<f64>() * MAX_PATH_DELAY_S,
                        // scattered paths arrive inside the array's
                        // unambiguous field of view, like the direct one
                        azimuth: (rng.random::<f64>() - 0.5) * std::f64::consts::PI / 3.0,
                        elevation: (rng.random::<f64>() - 0.5) * std::f64::consts::PI / 6.0,
                    }
                }
            })
            .collect();

        let responses: Vec<ComplexVec> = paths
            .iter()
            .map(|p| steering_vector(scenario.upa.rows, scenario.upa.cols, p.azimuth, p.elevation, 0.5))
            .collect();

        let scale = (m as f64 / l_paths as f64).sqrt();
        for k in 0..k_sub {
            let h = set.channel_mut(n, k);
            for (p, a) in paths.iter().zip(&responses) {
                let phase = -2.0 * std::f64::consts::PI * k as f64 * p.delay_s * SUBCARRIER_SPACING_HZ;
                let w = p.gain * Complex64::from_polar(scale, phase);
                for (hm, am) in h.iter_mut().zip(a) {
                    *hm += w * am;
                }
            }
        }
    }
    set
}

/// Combine each channel on the omni pattern and add CN(0, sigma2) receiver
/// noise: feature (n, k) = h_{k,n}^T omni + v. Deterministic per seed.
pub fn omni_pilot_features(
    channels: &ChannelSet,
    omni: &ComplexVec,
    sigma2: f64,
    rng_seed: u64,
) -> Result<PilotFeatures> {
    if omni.len() != channels.num_antennas {
        return Err(BeamsecError::DimensionMismatch {
            expected: channels.num_antennas,
            got: omni.len(),
            context: "omni beam vs channel antennas".into(),
        });
    }
    if sigma2 < 0.0 {
        return Err(BeamsecError::InvalidParameter("sigma2 must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(rng_seed, 0x706c_6f74));
    let noise_std = (sigma2 / 2.0).sqrt();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut values = Vec::with_capacity(channels.num_bs * channels.num_subcarriers);
    for n in 0..channels.num_bs {
        for k in 0..channels.num_subcarriers {
            let mut y = signal::dot_t(channels.channel(n, k), omni);
            if sigma2 > 0.0 {
                y += Complex64::new(
                    noise_std * normal.sample(&mut rng),
                    noise_std * normal.sample(&mut rng),
                );
            }
            values.push(y);
        }
    }
    Ok(PilotFeatures {
        num_bs: channels.num_bs,
        num_subcarriers: channels.num_subcarriers,
        values,
    })
}

/// Write channel sets in the import format:
/// `user_id,bs,subcarrier,antenna,re,im`.
pub fn export_channels<W: Write>(out: W, channels: &[(u64, ChannelSet)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "bs", "subcarrier", "antenna", "re", "im"])?;
    for (user, set) in channels {
        for n in 0..set.num_bs {
            for k in 0..set.num_subcarriers {
                for (a, z) in set.channel(n, k).iter().enumerate() {
                    w.write_record([
                        user.to_string(),
                        n.to_string(),
                        k.to_string(),
                        a.to_string(),
                        format!("{:?}", z.re),
                        format!("{:?}", z.im),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read channel sets from the CSV import format, validating that every user
/// covers the full (bs x subcarrier x antenna) grid exactly once.
pub fn import_channels<R: Read>(input: R) -> Result<Vec<(u64, ChannelSet)>> {
    #[derive(Deserialize)]
    struct Row {
        user_id: u64,
        bs: usize,
        subcarrier: usize,
        antenna: usize,
        re: f64,
        im: f64,
    }

    let mut rows: Vec<Row> = Vec::new();
    let mut reader = csv::Reader::from_reader(input);
    for rec in reader.deserialize() {
        let row: Row = rec?;
        if !row.re.is_finite() || !row.im.is_finite() {
            return Err(BeamsecError::MalformedData("non-finite channel coefficient".into()));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(BeamsecError::MalformedData("empty channel file".into()));
    }

    let num_bs = rows.iter().map(|r| r.bs).max().unwrap() + 1;
    let num_sub = rows.iter().map(|r| r.subcarrier).max().unwrap() + 1;
    let num_ant = rows.iter().map(|r| r.antenna).max().unwrap() + 1;

    let mut users: Vec<u64> = rows.iter().map(|r| r.user_id).collect();
    users.sort_unstable();
    users.dedup();

    let mut out = Vec::with_capacity(users.len());
    for user in users {
        let mut set = ChannelSet::new(num_bs, num_sub, num_ant);
        let mut seen: HashSet<(usize, usize, usize)> = HashSet::new();
        for row in rows.iter().filter(|r| r.user_id == user) {
            if !seen.insert((row.bs, row.subcarrier, row.antenna)) {
                return Err(BeamsecError::MalformedData(format!(
                    "duplicate entry for user {user} at ({}, {}, {})",
                    row.bs, row.subcarrier, row.antenna
                )));
            }
            set.channel_mut(row.bs, row.subcarrier)[row.antenna] = Complex64::new(row.re, row.im);
        }
        let expected = num_bs * num_sub * num_ant;
        if seen.len() != expected {
            return Err(BeamsecError::MalformedData(format!(
                "user {user} covers {} of {expected} grid cells",
                seen.len()
            )));
        }
        out.push((user, set));
    }
    Ok(out)
}
