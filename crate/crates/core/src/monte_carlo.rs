//! Finite-size Monte Carlo oracle for the large-system SINR formulas.
//!
//! Estimated channels are drawn as `CN(0, upsilon_k I_M)`; the estimation
//! error enters only through its total power, as additional white noise,
//! exactly as in the instantaneous SINR expression. Error vectors are never
//! sampled.
//!
//! Every realization uses its own ChaCha8 stream derived from one master
//! seed and the trial counter, so the parallel map over trials reproduces
//! the serial result bit for bit. Means and variances are reduced with a
//! fixed pairwise-summation tree in trial order.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::csv::{self, Table};
use crate::error::{invalid, Result};
use crate::linalg::{CMatrix, Cholesky};
use crate::params::SystemConfig;
use crate::rates::{Beamformer, RateReport};
use crate::state_evolution::ChannelEstimateStats;

/// Default number of realizations per Monte Carlo estimate.
pub const DEFAULT_TRIALS: usize = 200;

/// Normal quantile for the reported 95% half-widths.
const Z95: f64 = 1.959_963_984_540_054;

/// One draw of the estimated channels of a set of users.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `h_hat[k]` has length `M`.
    pub h_hat: Vec<Vec<Complex64>>,
    /// Sum of the users' estimation-error variances.
    pub total_error: f64,
    pub seed: u64,
    pub stream: u64,
}

impl ChannelRealization {
    pub fn n_antennas(&self) -> usize {
        self.h_hat.first().map_or(0, Vec::len)
    }

    /// Interference-plus-noise floor `rho_data * sum(delta_upsilon) + sigma^2`.
    pub fn noise_floor(&self, config: &SystemConfig) -> f64 {
        config.data_power * self.total_error + config.noise_power
    }

    /// The realization restricted to `users`, with the matching error power.
    pub fn subset(&self, users: &[usize], stats: &ChannelEstimateStats) -> Self {
        Self {
            h_hat: users.iter().map(|&k| self.h_hat[k].clone()).collect(),
            total_error: users.iter().map(|&k| stats.delta_upsilon[k]).sum(),
            seed: self.seed,
            stream: self.stream,
        }
    }
}

/// Draws `h_hat_k ~ CN(0, upsilon_k I_M)` on stream 0 of `seed`.
pub fn draw_realization(stats: &ChannelEstimateStats, m: usize, seed: u64) -> ChannelRealization {
    draw_realization_stream(stats, m, seed, 0)
}

/// Same as [`draw_realization`] on an explicit substream.
pub fn draw_realization_stream(
    stats: &ChannelEstimateStats,
    m: usize,
    seed: u64,
    stream: u64,
) -> ChannelRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let h_hat = stats
        .upsilon
        .iter()
        .map(|&v| {
            let s = (v / 2.0).sqrt();
            (0..m)
                .map(|_| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    Complex64::new(s * re, s * im)
                })
                .collect()
        })
        .collect();
    ChannelRealization {
        h_hat,
        total_error: stats.total_error(),
        seed,
        stream,
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Instantaneous SINR of every user with `w_k = h_hat_k`.
pub fn sinr_mrc_empirical(r: &ChannelRealization, config: &SystemConfig) -> Vec<f64> {
    let k = r.h_hat.len();
    let rho = config.data_power;
    let norms: Vec<f64> = r.h_hat.iter().map(|h| norm_sqr(h)).collect();
    let mut cross = vec![0.0; k];
    for i in 0..k {
        for j in i + 1..k {
            let p = inner(&r.h_hat[i], &r.h_hat[j]).norm_sqr();
            cross[i] += p;
            cross[j] += p;
        }
    }
    let per_unit_norm = rho * r.total_error + config.noise_power;
    (0..k)
        .map(|i| {
            let n = norms[i];
            if n == 0.0 {
                0.0
            } else {
                rho * n * n / (rho * cross[i] + n * per_unit_norm)
            }
        })
        .collect()
}

fn mmse_covariance(r: &ChannelRealization, config: &SystemConfig, skip: Option<usize>) -> CMatrix {
    let mut a = CMatrix::scaled_identity(r.n_antennas(), r.noise_floor(config));
    for (n, h) in r.h_hat.iter().enumerate() {
        if Some(n) != skip {
            a.rank_one_lower(config.data_power, h);
        }
    }
    a
}

/// Instantaneous MMSE SINR, `rho h_k^H (sum_{n != k} rho h_n h_n^H + c I)^{-1} h_k`.
///
/// Factors the full covariance once and removes each user through the
/// Sherman-Morrison identity: with `q_k = h_k^H A^{-1} h_k`,
/// `gamma_k = rho q_k / (1 - rho q_k)`.
pub fn sinr_mmse_empirical(r: &ChannelRealization, config: &SystemConfig) -> Result<Vec<f64>> {
    if r.h_hat.is_empty() {
        return Ok(Vec::new());
    }
    let chol = Cholesky::factor(mmse_covariance(r, config, None))?;
    let rho = config.data_power;
    Ok(r.h_hat
        .iter()
        .map(|h| {
            let q = rho * chol.quad_form_inv(h);
            q / (1.0 - q)
        })
        .collect())
}

/// Reference implementation of [`sinr_mmse_empirical`] with one factorization per user.
pub fn sinr_mmse_direct(r: &ChannelRealization, config: &SystemConfig) -> Result<Vec<f64>> {
    r.h_hat
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let chol = Cholesky::factor(mmse_covariance(r, config, Some(k)))?;
            Ok(config.data_power * chol.quad_form_inv(h))
        })
        .collect()
}

/// Sums in a fixed binary tree so the result does not depend on how the
/// inputs were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().fold(0.0, |a, x| a + x)
    } else {
        let (l, r) = xs.split_at(xs.len() / 2);
        pairwise_sum(l) + pairwise_sum(r)
    }
}

fn mean_and_halfwidth(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.iter().any(|x| !x.is_finite()) {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, Z95 * (var / n).sqrt())
}

/// Index-ordered scheduling blocks of size `ceil(K/J)`; the last may be smaller.
pub fn schedule_blocks(k: usize, j: u32) -> Vec<Vec<usize>> {
    let size = k.div_ceil(j.max(1) as usize).max(1);
    (0..k)
        .collect::<Vec<_>>()
        .chunks(size)
        .map(<[usize]>::to_vec)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
}

/// Monte Carlo means with 95% half-widths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    /// Per-user mean SINR and mean rate; `sum_rate` is the mean sum rate.
    pub report: RateReport,
    pub sinr_halfwidth: Vec<f64>,
    pub rate_halfwidth: Vec<f64>,
    pub sum_rate_halfwidth: f64,
    pub n_trials: usize,
    pub seed: u64,
    pub j_intervals: u32,
    /// `K` is not a multiple of `J`, so the last block is smaller.
    pub uneven_blocks: bool,
    #[serde(skip)]
    pub trials: Option<Vec<TrialRecord>>,
}

impl MonteCarloReport {
    /// `trial,user,gamma,rate`; empty unless trials were kept.
    pub fn trials_csv(&self) -> String {
        let mut t = Table::new(["trial", "user", "gamma", "rate"]);
        for rec in self.trials.iter().flatten() {
            for (u, (g, r)) in rec.sinr.iter().zip(&rec.rate).enumerate() {
                t.push(vec![
                    rec.trial.to_string(),
                    u.to_string(),
                    csv::float(*g),
                    csv::float(*r),
                ]);
            }
        }
        t.render()
    }
}

fn one_trial(
    stats: &ChannelEstimateStats,
    config: &SystemConfig,
    beamformer: Beamformer,
    blocks: &[Vec<usize>],
    seed: u64,
    trial: usize,
) -> Result<Vec<f64>> {
    let full = draw_realization_stream(stats, config.n_antennas as usize, seed, trial as u64);
    let mut sinr = vec![0.0; stats.len()];
    for block in blocks {
        let sub = full.subset(block, stats);
        let g = match beamformer {
            Beamformer::Mrc => sinr_mrc_empirical(&sub, config),
            Beamformer::Mmse => sinr_mmse_empirical(&sub, config)?,
        };
        for (&k, gk) in block.iter().zip(g) {
            sinr[k] = gk;
        }
    }
    Ok(sinr)
}

/// Averages SINR and rate over `n_trials` realizations.
pub fn average_rates(
    stats: &ChannelEstimateStats,
    config: &SystemConfig,
    beamformer: Beamformer,
    j_intervals: u32,
    n_trials: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    average_rates_detailed(
        stats,
        config,
        beamformer,
        j_intervals,
        n_trials,
        seed,
        false,
    )
}

/// [`average_rates`], optionally keeping every trial for export.
pub fn average_rates_detailed(
    stats: &ChannelEstimateStats,
    config: &SystemConfig,
    beamformer: Beamformer,
    j_intervals: u32,
    n_trials: usize,
    seed: u64,
    keep_trials: bool,
) -> Result<MonteCarloReport> {
    if n_trials < 2 {
        return Err(invalid("n_trials", "need at least two realizations"));
    }
    if j_intervals == 0 {
        return Err(invalid("j_intervals", "must be at least 1"));
    }
    if stats.is_empty() {
        return Err(invalid("stats", "no active users"));
    }
    let k = stats.len();
    let blocks = schedule_blocks(k, j_intervals);
    let prelog = (config.coherence_len.saturating_sub(config.pilot_len)) as f64
        / (config.coherence_len as f64 * j_intervals as f64);

    let sinr_trials: Vec<Vec<f64>> = (0..n_trials)
        .into_par_iter()
        .map(|t| one_trial(stats, config, beamformer, &blocks, seed, t))
        .collect::<Result<_>>()?;
    let rate_of = |g: f64| {
        if prelog == 0.0 {
            0.0
        } else {
            prelog * (1.0 + g).log2()
        }
    };
    let rate_trials: Vec<Vec<f64>> = sinr_trials
        .iter()
        .map(|s| s.iter().map(|&g| rate_of(g)).collect())
        .collect();

    let column =
        |data: &[Vec<f64>], u: usize| -> Vec<f64> { data.iter().map(|row| row[u]).collect() };
    let (mean_sinr, sinr_hw): (Vec<f64>, Vec<f64>) = (0..k)
        .map(|u| mean_and_halfwidth(&column(&sinr_trials, u)))
        .unzip();
    let (mean_rate, rate_hw): (Vec<f64>, Vec<f64>) = (0..k)
        .map(|u| mean_and_halfwidth(&column(&rate_trials, u)))
        .unzip();
    let sums: Vec<f64> = rate_trials
        .iter()
        .map(|r| r.iter().fold(0.0, |a, x| a + x))
        .collect();
    let (sum_rate, sum_hw) = mean_and_halfwidth(&sums);

    let trials = keep_trials.then(|| {
        sinr_trials
            .into_iter()
            .zip(rate_trials)
            .enumerate()
            .map(|(trial, (sinr, rate))| TrialRecord { trial, sinr, rate })
            .collect()
    });

    Ok(MonteCarloReport {
        report: RateReport {
            beamformer,
            per_user_sinr: mean_sinr,
            per_user_rate: mean_rate,
            sum_rate,
            gamma_big: None,
            divergent: false,
            prelog,
        },
        sinr_halfwidth: sinr_hw,
        rate_halfwidth: rate_hw,
        sum_rate_halfwidth: sum_hw,
        n_trials,
        seed,
        j_intervals,
        uneven_blocks: !k.is_multiple_of(j_intervals as usize),
        trials,
    })
}
