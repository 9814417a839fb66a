//! System parameters, unit conversions and user-population sampling.
//!
//! All quantities are stored in linear units (watts, linear power ratios).
//! Logarithmic units only appear in the conversion helpers and at the
//! scenario-file boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Converts a power in watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Linear power ratio to decibels.
pub fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Decibels to linear power ratio.
pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Receiver noise power in watts from a noise PSD (dBm/Hz) and a bandwidth (Hz).
pub fn noise_power(psd_dbm_per_hz: f64, bandwidth_hz: f64) -> f64 {
    dbm_to_watts(psd_dbm_per_hz) * bandwidth_hz
}

/// How many devices are active in a coherence block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    /// Exactly `K` devices are active.
    Count(u32),
    /// Each device is active independently with probability `epsilon`.
    Probability(f64),
}

/// Scalar system parameters, all in linear units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Total number of potential devices `N`.
    pub n_users: u32,
    pub activity: Activity,
    /// Pilot length `L` in symbols.
    pub pilot_len: u32,
    /// Coherence block length `T` in symbols.
    pub coherence_len: u32,
    /// Base-station antennas `M`.
    pub n_antennas: u32,
    /// Pilot transmit power in watts.
    pub pilot_power: f64,
    /// Data transmit power in watts.
    pub data_power: f64,
    /// Receiver noise power in watts.
    pub noise_power: f64,
    /// Only used to convert bits/symbol into bits/s in reports.
    pub bandwidth_hz: f64,
}

impl SystemConfig {
    /// The numerical setup used throughout the reference figures: 2000 devices,
    /// 1000-symbol blocks, 23 dBm on both phases, -169 dBm/Hz over 1 MHz.
    pub fn reference(n_antennas: u32, activity: Activity, pilot_len: u32) -> Self {
        Self {
            n_users: 2000,
            activity,
            pilot_len,
            coherence_len: 1000,
            n_antennas,
            pilot_power: dbm_to_watts(23.0),
            data_power: dbm_to_watts(23.0),
            noise_power: noise_power(-169.0, 1e6),
            bandwidth_hz: 1e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(invalid("n_users", "must be positive"));
        }
        match self.activity {
            Activity::Count(0) => return Err(invalid("active_users", "must be positive")),
            Activity::Count(k) if k > self.n_users => {
                return Err(Error::TooManyActive {
                    active: k as usize,
                    total: self.n_users,
                })
            }
            Activity::Probability(eps) if !(eps > 0.0 && eps < 1.0) => {
                return Err(invalid("epsilon", format!("{eps} is not in (0, 1)")))
            }
            _ => {}
        }
        if self.pilot_len == 0 || self.pilot_len >= self.coherence_len {
            return Err(invalid(
                "pilot_len",
                format!(
                    "need 0 < L < T, got L={} T={}",
                    self.pilot_len, self.coherence_len
                ),
            ));
        }
        if self.n_antennas == 0 {
            return Err(invalid("n_antennas", "must be positive"));
        }
        for (field, value) in [
            ("pilot_power", self.pilot_power),
            ("data_power", self.data_power),
            ("noise_power", self.noise_power),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(field, format!("{value} is not a positive power")));
            }
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            return Err(invalid("bandwidth_hz", "must be positive"));
        }
        Ok(())
    }

    /// Nominal active-user count used by the analytical formulas:
    /// `K` itself, or `round(epsilon * N)`.
    pub fn active_users(&self) -> usize {
        match self.activity {
            Activity::Count(k) => k as usize,
            Activity::Probability(eps) => (eps * self.n_users as f64).round() as usize,
        }
    }

    /// Activity probability `epsilon = K / N`.
    pub fn epsilon(&self) -> f64 {
        match self.activity {
            Activity::Count(k) => k as f64 / self.n_users as f64,
            Activity::Probability(eps) => eps,
        }
    }

    /// Pilot load `omega = N / L`.
    pub fn omega(&self) -> f64 {
        self.n_users as f64 / self.pilot_len as f64
    }

    /// Total pilot energy `xi = L * rho_pilot`.
    pub fn xi(&self) -> f64 {
        self.pilot_len as f64 * self.pilot_power
    }

    pub fn with_pilot_len(&self, pilot_len: u32) -> Self {
        Self {
            pilot_len,
            ..self.clone()
        }
    }

    /// Pilot power that puts a user at distance `d_km` at `snr_db`.
    pub fn pilot_power_for_snr(&self, model: &PathlossModel, d_km: f64, snr_db: f64) -> f64 {
        from_db(snr_db) * self.noise_power / model.beta_at(d_km)
    }
}

/// Pilot SNR of a user at the cell edge (distance `d_max_km` of the model), in dB.
pub fn edge_snr_db(config: &SystemConfig, model: &PathlossModel) -> f64 {
    to_db(config.pilot_power * model.beta_at(model.d_max_km) / config.noise_power)
}

/// Law used to place users in the cell before applying the pathloss formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Distance uniform on `[d_min, d_max]`.
    #[default]
    UniformDistance,
    /// Position uniform over the annulus `d_min <= d <= d_max`.
    UniformArea,
}

/// Distance-based pathloss `beta_dB = intercept - slope * log10(d_km)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathlossModel {
    pub d_min_km: f64,
    pub d_max_km: f64,
    pub intercept_db: f64,
    pub slope_db: f64,
    #[serde(default)]
    pub placement: Placement,
}

impl Default for PathlossModel {
    fn default() -> Self {
        Self {
            d_min_km: 0.05,
            d_max_km: 1.0,
            intercept_db: -128.1,
            slope_db: 36.7,
            placement: Placement::UniformDistance,
        }
    }
}

impl PathlossModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_min_km > 0.0 && self.d_max_km > self.d_min_km && self.d_max_km.is_finite()) {
            return Err(invalid(
                "pathloss",
                format!(
                    "need 0 < d_min < d_max, got [{}, {}] km",
                    self.d_min_km, self.d_max_km
                ),
            ));
        }
        if !(self.intercept_db.is_finite() && self.slope_db.is_finite()) {
            return Err(invalid("pathloss", "intercept and slope must be finite"));
        }
        Ok(())
    }

    /// Linear large-scale coefficient at distance `d_km`.
    pub fn beta_at(&self, d_km: f64) -> f64 {
        from_db(self.intercept_db - self.slope_db * d_km.log10())
    }

    pub fn sample_distance<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self.placement {
            Placement::UniformDistance => self.d_min_km + u * (self.d_max_km - self.d_min_km),
            Placement::UniformArea => {
                let (a, b) = (self.d_min_km * self.d_min_km, self.d_max_km * self.d_max_km);
                (a + u * (b - a)).sqrt()
            }
        }
    }

    /// Draws exactly `count` users.
    pub fn population(&self, count: usize, seed: u64) -> PathlossPopulation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let betas = (0..count)
            .map(|_| self.beta_at(self.sample_distance(&mut rng)))
            .collect();
        PathlossPopulation {
            betas,
            model: *self,
        }
    }
}

/// Large-scale fading coefficients of the active users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathlossPopulation {
    pub betas: Vec<f64>,
    pub model: PathlossModel,
}

impl PathlossPopulation {
    pub fn new(betas: Vec<f64>, model: PathlossModel) -> Result<Self> {
        if betas.is_empty() {
            return Err(invalid("betas", "population is empty"));
        }
        if let Some(b) = betas.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(invalid("betas", format!("coefficient {b} is not positive")));
        }
        Ok(Self { betas, model })
    }

    /// A population with user-supplied coefficients (the distance model is
    /// kept at its default for bookkeeping only).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        Self::new(betas, PathlossModel::default())
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.betas.iter().sum::<f64>() / self.betas.len() as f64
    }
}

/// Samples the active population for one experiment with the reference
/// pathloss model.
pub fn sample_population(config: &SystemConfig, seed: u64) -> Result<PathlossPopulation> {
    sample_population_with(config, &PathlossModel::default(), seed)
}

/// Samples the active population. A fixed count draws exactly `K` users; an
/// activity probability realizes `Binomial(N, epsilon)` users first.
pub fn sample_population_with(
    config: &SystemConfig,
    model: &PathlossModel,
    seed: u64,
) -> Result<PathlossPopulation> {
    config.validate()?;
    model.validate()?;
    let count = match config.activity {
        Activity::Count(k) => k as usize,
        Activity::Probability(eps) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            let binom = Binomial::new(config.n_users as u64, eps)
                .map_err(|e| invalid("epsilon", e.to_string()))?;
            (binom.sample(&mut rng) as usize).max(1)
        }
    };
    Ok(model.population(count, seed))
}
