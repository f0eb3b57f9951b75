//! Scenario descriptions: geometry, antennas, carrier frequency and path
//! statistics for the three evaluation archetypes, plus a desk-scale default
//! used by the test suite.

use serde::{Deserialize, Serialize};

use crate::error::{BeamsecError, Result};

/// Uniform planar array geometry. Total element count is `rows * cols`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpaGeometry {
    pub rows: usize,
    pub cols: usize,
}

impl UpaGeometry {
    pub fn num_elements(&self) -> usize {
        self.rows * self.cols
    }
}

/// User placement region: `count` candidate positions over a square of
/// `extent_m` meters per side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserGrid {
    pub count: usize,
    pub extent_m: f64,
}

/// Parametric description of one deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Number of base stations N.
    pub num_bs: usize,
    /// Per-BS antenna array (M = rows * cols).
    pub upa: UpaGeometry,
    /// Number of OFDM subcarriers K.
    pub num_subcarriers: usize,
    pub carrier_freq_ghz: f64,
    /// Number of channel paths L per (BS, user) link.
    pub num_paths: usize,
    pub los_probability: f64,
    pub user_grid: UserGrid,
    pub snr_db: f64,
    /// Beam coherence time T_B, seconds.
    pub beam_coherence_s: f64,
    /// Beam training time T_TR, seconds. Must satisfy T_TR < T_B.
    pub training_time_s: f64,
}

impl Scenario {
    /// Antennas per BS, M.
    pub fn num_antennas(&self) -> usize {
        self.upa.num_elements()
    }

    /// Linear SNR from the configured dB value.
    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    /// Rate discount factor `1 - T_TR / T_B`.
    pub fn overhead_factor(&self) -> f64 {
        1.0 - self.training_time_s / self.beam_coherence_s
    }

    /// Validate counts, frequency range and timing.
    pub fn validate(&self) -> Result<()> {
        if self.num_bs == 0 {
            return Err(BeamsecError::InvalidScenario("num_bs must be positive".into()));
        }
        if self.upa.rows == 0 || self.upa.cols == 0 {
            return Err(BeamsecError::InvalidScenario("zero antennas".into()));
        }
        if self.num_subcarriers == 0 {
            return Err(BeamsecError::InvalidScenario("num_subcarriers must be positive".into()));
        }
        if self.num_paths == 0 {
            return Err(BeamsecError::InvalidScenario("num_paths must be >= 1".into()));
        }
        if !(0.5..=100.0).contains(&self.carrier_freq_ghz) {
            return Err(BeamsecError::InvalidScenario(format!(
                "carrier frequency {} GHz outside plausible 0.5-100 GHz range",
                self.carrier_freq_ghz
            )));
        }
        if !(0.0..=1.0).contains(&self.los_probability) {
            return Err(BeamsecError::InvalidScenario("los_probability outside [0,1]".into()));
        }
        if self.user_grid.count == 0 || self.user_grid.extent_m <= 0.0 {
            return Err(BeamsecError::InvalidScenario("empty user grid".into()));
        }
        if self.training_time_s < 0.0 || self.training_time_s >= self.beam_coherence_s {
            return Err(BeamsecError::InvalidScenario(
                "training time must satisfy 0 <= T_TR < T_B".into(),
            ));
        }
        Ok(())
    }
}

/// Validate and return a scenario built from explicit parameters.
pub fn build_scenario(scenario: Scenario) -> Result<Scenario> {
    scenario.validate()?;
    Ok(scenario)
}

/// Names of the three evaluation archetypes, in report order.
pub const ARCHETYPES: [&str; 3] = ["outdoor-o1", "outdoor-los-nlos", "indoor-mimo"];

/// Desk-scale variant of a named archetype: the propagation personality
/// (carrier, paths, LOS statistics, SNR, geometry extent) is kept while the
/// array, subcarrier and grid sizes are capped at desk scale.
pub fn desk_variant(name: &str) -> Result<Scenario> {
    let mut s = preset(name)?;
    s.num_bs = s.num_bs.min(4);
    s.upa = UpaGeometry { rows: 4, cols: 4 };
    s.num_subcarriers = 8;
    s.user_grid.count = s.user_grid.count.min(10_000);
    build_scenario(s)
}

/// Look up a named preset. Known names: `outdoor-o1`, `outdoor-los-nlos`,
/// `indoor-mimo`, `desk`.
pub fn preset(name: &str) -> Result<Scenario> {
    let s = match name {
        // Street intersection, 18 BSs with 16x16 UPAs at 60 GHz.
        "outdoor-o1" => Scenario {
            name: "outdoor-o1".into(),
            num_bs: 18,
            upa: UpaGeometry { rows: 16, cols: 16 },
            num_subcarriers: 32,
            carrier_freq_ghz: 60.0,
            num_paths: 5,
            los_probability: 0.7,
            user_grid: UserGrid { count: 1_000_000, extent_m: 200.0 },
            snr_db: 5.0,
            beam_coherence_s: 10e-3,
            training_time_s: 1e-3,
        },
        // Single BS, mixed LOS/NLOS users at 3.5 GHz.
        "outdoor-los-nlos" => Scenario {
            name: "outdoor-los-nlos".into(),
            num_bs: 1,
            upa: UpaGeometry { rows: 8, cols: 8 },
            num_subcarriers: 32,
            carrier_freq_ghz: 3.5,
            num_paths: 8,
            los_probability: 0.5,
            user_grid: UserGrid { count: 100_000, extent_m: 150.0 },
            snr_db: 5.0,
            beam_coherence_s: 10e-3,
            training_time_s: 1e-3,
        },
        // Indoor room, 64 ceiling antennas at 2.4/2.5 GHz.
        "indoor-mimo" => Scenario {
            name: "indoor-mimo".into(),
            num_bs: 1,
            upa: UpaGeometry { rows: 8, cols: 8 },
            num_subcarriers: 32,
            carrier_freq_ghz: 2.4,
            num_paths: 10,
            los_probability: 0.9,
            user_grid: UserGrid { count: 10_000, extent_m: 10.0 },
            snr_db: 10.0,
            beam_coherence_s: 20e-3,
            training_time_s: 1e-3,
        },
        // Small sizes for fast, reproducible experiments and tests.
        "desk" => Scenario {
            name: "desk".into(),
            num_bs: 4,
            upa: UpaGeometry { rows: 4, cols: 4 },
            num_subcarriers: 8,
            carrier_freq_ghz: 60.0,
            num_paths: 1,
            los_probability: 1.0,
            user_grid: UserGrid { count: 10_000, extent_m: 100.0 },
            snr_db: 7.0,
            beam_coherence_s: 10e-3,
            training_time_s: 1e-3,
        },
        other => {
            return Err(BeamsecError::InvalidScenario(format!("unknown preset '{other}'")));
        }
    };
    build_scenario(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outdoor_o1_matches_archetype() {
        let s = preset("outdoor-o1").unwrap();
        assert_eq!(s.num_bs, 18);
        assert_eq!(s.upa, UpaGeometry { rows: 16, cols: 16 });
        assert_eq!(s.num_antennas(), 256);
        assert_eq!(s.carrier_freq_ghz, 60.0);
    }

    #[test]
    fn indoor_mimo_matches_archetype() {
        let s = preset("indoor-mimo").unwrap();
        assert_eq!(s.num_antennas(), 64);
        assert!(s.carrier_freq_ghz == 2.4 || s.carrier_freq_ghz == 2.5);
    }

    #[test]
    fn rejects_training_time_equal_to_coherence() {
        let mut s = preset("desk").unwrap();
        s.training_time_s = s.beam_coherence_s;
        assert!(build_scenario(s).is_err());
    }

    #[test]
    fn rejects_zero_antennas() {
        let mut s = preset("desk").unwrap();
        s.upa.rows = 0;
        assert!(build_scenario(s).is_err());
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(preset("nope").is_err());
    }
}
