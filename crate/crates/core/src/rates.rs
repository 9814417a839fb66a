//! Large-system SINR and achievable rates under MRC and MMSE receive
//! beamforming, with optional time-division scheduling of the active users
//! over `J` intervals.

use serde::{Deserialize, Serialize};

use crate::csv::{self, Table};
use crate::error::{invalid, Error, Result};
use crate::params::SystemConfig;
use crate::state_evolution::high_snr_tau2_for;

pub const GAMMA_TOL: f64 = 1e-12;
pub const GAMMA_MAX_ITER: usize = 100_000;
const GAMMA_DAMPING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Beamformer {
    Mrc,
    Mmse,
}

impl Beamformer {
    pub fn name(self) -> &'static str {
        match self {
            Beamformer::Mrc => "mrc",
            Beamformer::Mmse => "mmse",
        }
    }
}

impl std::fmt::Display for Beamformer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Beamformer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mrc" => Ok(Beamformer::Mrc),
            "mmse" => Ok(Beamformer::Mmse),
            other => Err(format!(
                "unknown beamformer `{other}` (expected mrc or mmse)"
            )),
        }
    }
}

/// Everything the asymptotic SINR formulas need.
#[derive(Debug, Clone, Copy)]
pub struct RateQuery<'a> {
    /// Pathloss of the active users; expectations are population means.
    pub betas: &'a [f64],
    /// Effective estimation noise; zero means perfect CSI.
    pub tau2: f64,
    /// Load `K / M`.
    pub mu: f64,
    pub pilot_len: u32,
    pub coherence_len: u32,
    pub j_intervals: u32,
    pub beamformer: Beamformer,
}

impl<'a> RateQuery<'a> {
    /// Query for the active population `betas` under `config`, with `mu = K/M`.
    pub fn from_config(
        config: &SystemConfig,
        betas: &'a [f64],
        tau2: f64,
        beamformer: Beamformer,
        j_intervals: u32,
    ) -> Self {
        Self {
            betas,
            tau2,
            mu: betas.len() as f64 / config.n_antennas as f64,
            pilot_len: config.pilot_len,
            coherence_len: config.coherence_len,
            j_intervals,
            beamformer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(invalid("betas", "need at least one positive coefficient"));
        }
        if !(self.tau2 >= 0.0 && self.tau2.is_finite()) {
            return Err(invalid("tau2", "must be finite and non-negative"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(invalid("mu", "load must be positive"));
        }
        if self.j_intervals == 0 {
            return Err(invalid("j_intervals", "must be at least 1"));
        }
        if self.pilot_len == 0 || self.pilot_len > self.coherence_len {
            return Err(invalid("pilot_len", "need 0 < L <= T"));
        }
        Ok(())
    }

    /// `(T - L) / (T J)`.
    pub fn prelog(&self) -> f64 {
        (self.coherence_len - self.pilot_len) as f64
            / (self.coherence_len as f64 * self.j_intervals as f64)
    }

    fn mean(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.betas.iter().map(|&b| f(b)).sum::<f64>() / self.betas.len() as f64
    }

    /// Estimated-channel variance of each user.
    fn upsilon(&self, b: f64) -> f64 {
        b * b / (b + self.tau2)
    }
}

/// `gamma_k = J beta_k^2 / (mu E[beta] (beta_k + tau^2))`.
pub fn mrc_sinr_asymptotic(q: &RateQuery<'_>) -> Result<Vec<f64>> {
    q.validate()?;
    let interference = q.mu * q.mean(|b| b);
    let j = q.j_intervals as f64;
    Ok(q.betas
        .iter()
        .map(|&b| j * q.upsilon(b) / interference)
        .collect())
}

/// Solution of the common MMSE scaling equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaSolution {
    /// `+inf` when `divergent`.
    pub gamma: f64,
    pub iterations: usize,
    /// Perfect CSI with `mu <= J`: no finite solution exists and every user
    /// sees unbounded SINR.
    pub divergent: bool,
}

/// `mu E[beta^2/(beta + tau^2 + beta^2 G)] + mu E[beta tau^2/(beta + tau^2)]`.
pub fn gamma_denominator(q: &RateQuery<'_>, gamma: f64) -> f64 {
    let t = q.tau2;
    q.mu * q.mean(|b| b * b / (b + t + b * b * gamma)) + q.mu * q.mean(|b| b * t / (b + t))
}

/// Solves `G = J / denominator(G)` by damped fixed-point iteration from
/// `G_0 = J / (mu E[beta])`.
pub fn mmse_gamma_fixed_point(
    q: &RateQuery<'_>,
    tol: f64,
    max_iter: usize,
) -> Result<GammaSolution> {
    q.validate()?;
    let j = q.j_intervals as f64;
    // Each interval carries mu/J users per antenna; with perfect CSI the
    // scaling diverges unless the interval is overloaded.
    if q.tau2 == 0.0 && q.mu <= j {
        return Ok(GammaSolution {
            gamma: f64::INFINITY,
            iterations: 0,
            divergent: true,
        });
    }
    let mut gamma = j / (q.mu * q.mean(|b| b));
    let mut last_step = f64::INFINITY;
    for it in 1..=max_iter {
        let mapped = j / gamma_denominator(q, gamma);
        let next = GAMMA_DAMPING * gamma + (1.0 - GAMMA_DAMPING) * mapped;
        last_step = ((next - gamma) / gamma).abs();
        gamma = next;
        if last_step < tol {
            return Ok(GammaSolution {
                gamma,
                iterations: it,
                divergent: false,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "MMSE scaling fixed point",
        iterations: max_iter,
        last_step,
    })
}

/// `gamma_k = G beta_k^2/(beta_k + tau^2)`.
pub fn mmse_sinr_asymptotic(q: &RateQuery<'_>) -> Result<(Vec<f64>, GammaSolution)> {
    let sol = mmse_gamma_fixed_point(q, GAMMA_TOL, GAMMA_MAX_ITER)?;
    let sinr = q
        .betas
        .iter()
        .map(|&b| {
            if sol.divergent {
                f64::INFINITY
            } else {
                sol.gamma * q.upsilon(b)
            }
        })
        .collect();
    Ok((sinr, sol))
}

/// Per-user SINR and rate with the sum rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub beamformer: Beamformer,
    pub per_user_sinr: Vec<f64>,
    /// bits/symbol, including the prelog.
    pub per_user_rate: Vec<f64>,
    pub sum_rate: f64,
    /// Common MMSE scaling factor.
    pub gamma_big: Option<f64>,
    pub divergent: bool,
    pub prelog: f64,
}

impl RateReport {
    pub(crate) fn assemble(
        beamformer: Beamformer,
        sinr: Vec<f64>,
        prelog: f64,
        gamma: Option<GammaSolution>,
    ) -> Self {
        let per_user_rate: Vec<f64> = sinr
            .iter()
            .map(|&g| {
                if prelog == 0.0 {
                    0.0
                } else {
                    prelog * (1.0 + g).log2()
                }
            })
            .collect();
        // Ascending user order.
        let sum_rate = per_user_rate.iter().fold(0.0, |acc, r| acc + r);
        Self {
            beamformer,
            per_user_sinr: sinr,
            per_user_rate,
            sum_rate,
            gamma_big: gamma.map(|g| g.gamma),
            divergent: gamma.is_some_and(|g| g.divergent),
            prelog,
        }
    }

    /// Sum rate in bits/s for the given bandwidth.
    pub fn sum_rate_bps(&self, bandwidth_hz: f64) -> f64 {
        self.sum_rate * bandwidth_hz
    }

    /// `user_index,beta,sinr,rate`.
    pub fn to_csv(&self, betas: &[f64]) -> String {
        let mut t = Table::new(["user_index", "beta", "sinr", "rate"]);
        for (k, ((b, g), r)) in betas
            .iter()
            .zip(&self.per_user_sinr)
            .zip(&self.per_user_rate)
            .enumerate()
        {
            t.push(vec![
                k.to_string(),
                csv::float(*b),
                csv::float(*g),
                csv::float(*r),
            ]);
        }
        t.render()
    }

    pub fn json_summary(&self, config: &SystemConfig) -> serde_json::Value {
        serde_json::json!({
            "beamformer": self.beamformer,
            "gamma_big": self.gamma_big,
            "divergent": self.divergent,
            "sum_rate": self.sum_rate,
            "sum_rate_bps": self.sum_rate_bps(config.bandwidth_hz),
            "prelog": self.prelog,
            "config": config,
        })
    }
}

/// Rates `((T - L)/(T J)) log2(1 + gamma_k)` under the query's beamformer.
pub fn rate_report(q: &RateQuery<'_>) -> Result<RateReport> {
    match q.beamformer {
        Beamformer::Mrc => {
            let sinr = mrc_sinr_asymptotic(q)?;
            Ok(RateReport::assemble(q.beamformer, sinr, q.prelog(), None))
        }
        Beamformer::Mmse => {
            let (sinr, sol) = mmse_sinr_asymptotic(q)?;
            Ok(RateReport::assemble(
                q.beamformer,
                sinr,
                q.prelog(),
                Some(sol),
            ))
        }
    }
}

/// Rates with `tau^2 = sigma^2/(rho_pilot (L - K))` and empirical means over
/// the active users, `K = betas.len()`.
pub fn high_snr_rates(
    config: &SystemConfig,
    betas: &[f64],
    beamformer: Beamformer,
    j_intervals: u32,
) -> Result<RateReport> {
    let tau2 = high_snr_tau2_for(config, betas.len())?;
    rate_report(&RateQuery::from_config(
        config,
        betas,
        tau2,
        beamformer,
        j_intervals,
    ))
}

/// Genie baseline with known activity and orthogonal pilots:
/// `tau^2 = sigma^2/(rho_pilot L)`.
pub fn known_activity_rates(
    config: &SystemConfig,
    betas: &[f64],
    beamformer: Beamformer,
) -> Result<RateReport> {
    if (config.pilot_len as usize) < betas.len() {
        return Err(Error::OrthogonalPilotTooShort {
            pilot_len: config.pilot_len,
            active: betas.len(),
        });
    }
    let tau2 = config.noise_power / (config.pilot_power * config.pilot_len as f64);
    rate_report(&RateQuery::from_config(config, betas, tau2, beamformer, 1))
}
