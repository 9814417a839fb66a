//! Sum-rate maximization over the pilot length `L` and the number of
//! scheduling intervals `J`, using the high-SNR rate expressions.

use rayon::prelude::*;
use serde::Serialize;

use crate::csv::{self, Table};
use crate::error::{invalid, Error, Result};
use crate::params::SystemConfig;
use crate::rates::{high_snr_rates, Beamformer};

/// Default stride of the coarse MMSE pilot-length grid.
pub const DEFAULT_MMSE_STEP: u32 = 10;
/// Default largest number of scheduling intervals.
pub const DEFAULT_J_MAX: u32 = 10;

const GOLDEN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// Concave relaxation; the integer optimum is a rounding of `relaxed_optimum`.
    Concave {
        relaxed_optimum: f64,
    },
    MonotoneDecreasing,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult {
    pub argmax: u32,
    /// Sum rate at `argmax`, bits/symbol.
    pub objective: f64,
    /// Evaluated `(candidate, sum_rate)` pairs in ascending candidate order.
    pub profile: Vec<(u32, f64)>,
    pub certificate: Certificate,
    /// The candidate range was too short to search.
    pub degenerate: bool,
    /// Candidates whose evaluation failed, with the reason.
    pub skipped: Vec<(u32, String)>,
}

impl OptimizationResult {
    /// `candidate_name,sum_rate`.
    pub fn profile_csv(&self, candidate_name: &str) -> String {
        let mut t = Table::new([candidate_name, "sum_rate"]);
        for (c, v) in &self.profile {
            t.push(vec![c.to_string(), csv::float(*v)]);
        }
        t.render()
    }

    fn from_profile(
        profile: Vec<(u32, f64)>,
        certificate: Certificate,
        skipped: Vec<(u32, String)>,
    ) -> Result<Self> {
        // Ascending order plus strict comparison keeps ties on the smaller candidate.
        let mut best: Option<(u32, f64)> = None;
        for &(c, v) in &profile {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((c, v));
            }
        }
        let (argmax, objective) =
            best.ok_or_else(|| invalid("candidates", "no candidate could be evaluated"))?;
        Ok(Self {
            argmax,
            objective,
            profile,
            certificate,
            degenerate: false,
            skipped,
        })
    }
}

/// High-SNR sum rate at an integer pilot length.
pub fn sum_rate_at_pilot_len(
    config: &SystemConfig,
    betas: &[f64],
    beamformer: Beamformer,
    pilot_len: u32,
) -> Result<f64> {
    Ok(high_snr_rates(&config.with_pilot_len(pilot_len), betas, beamformer, 1)?.sum_rate)
}

/// MRC sum rate with `L` relaxed to a real number in `(K, T]`.
pub fn mrc_relaxed_objective(config: &SystemConfig, betas: &[f64], pilot_len: f64) -> f64 {
    let k = betas.len() as f64;
    let t = config.coherence_len as f64;
    let tau2 = config.noise_power / (config.pilot_power * (pilot_len - k));
    let interference = k / config.n_antennas as f64 * betas.iter().sum::<f64>() / k;
    let prelog = (t - pilot_len) / t;
    prelog
        * betas
            .iter()
            .map(|&b| (1.0 + b * b / ((b + tau2) * interference)).log2())
            .sum::<f64>()
}

/// Maximizes a unimodal `f` on `[lo, hi]`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        }
    }
    (lo + hi) / 2.0
}

fn check_pilot_range(config: &SystemConfig, k: usize) -> Result<()> {
    if k == 0 {
        return Err(invalid("betas", "no active users"));
    }
    if config.coherence_len as usize <= k + 1 {
        return Err(invalid(
            "coherence_len",
            format!("need T > K + 1 = {}", k + 1),
        ));
    }
    Ok(())
}

/// Optimal MRC pilot length. The relaxed objective is concave on `(K, T)`,
/// so a golden-section search followed by comparing the neighbouring
/// integers yields the integer optimum.
pub fn optimize_pilot_length_mrc(
    config: &SystemConfig,
    betas: &[f64],
) -> Result<OptimizationResult> {
    let k = betas.len();
    check_pilot_range(config, k)?;
    let t = config.coherence_len;
    let k32 = k as u32;
    if t <= k32 + 2 {
        let l = k32 + 1;
        let v = sum_rate_at_pilot_len(config, betas, Beamformer::Mrc, l)?;
        return Ok(OptimizationResult {
            argmax: l,
            objective: v,
            profile: vec![(l, v)],
            certificate: Certificate::Concave {
                relaxed_optimum: l as f64,
            },
            degenerate: true,
            skipped: Vec::new(),
        });
    }
    let relaxed = golden_section_max(
        |l| mrc_relaxed_objective(config, betas, l),
        k as f64,
        t as f64,
        GOLDEN_TOL,
    );
    let lo = (relaxed.floor() as u32).clamp(k32 + 1, t - 1);
    let hi = (relaxed.ceil() as u32).clamp(k32 + 1, t - 1);
    let mut profile = vec![(
        lo,
        sum_rate_at_pilot_len(config, betas, Beamformer::Mrc, lo)?,
    )];
    if hi != lo {
        profile.push((
            hi,
            sum_rate_at_pilot_len(config, betas, Beamformer::Mrc, hi)?,
        ));
    }
    OptimizationResult::from_profile(
        profile,
        Certificate::Concave {
            relaxed_optimum: relaxed,
        },
        Vec::new(),
    )
}

fn evaluate_pilot_grid(
    config: &SystemConfig,
    betas: &[f64],
    candidates: &[u32],
) -> Vec<(u32, Result<f64>)> {
    candidates
        .par_iter()
        .map(|&l| (l, sum_rate_at_pilot_len(config, betas, Beamformer::Mmse, l)))
        .collect()
}

fn absorb(
    results: Vec<(u32, Result<f64>)>,
    ok: &mut Vec<(u32, f64)>,
    skipped: &mut Vec<(u32, String)>,
) {
    for (l, r) in results {
        match r {
            Ok(v) => ok.push((l, v)),
            Err(e) => skipped.push((l, e.to_string())),
        }
    }
}

/// Optimal MMSE pilot length by a coarse grid of stride `step` over
/// `K+1..T-1` followed by a stride-1 refinement around the best point.
/// `step = 1` is an exhaustive scan.
pub fn optimize_pilot_length_mmse(
    config: &SystemConfig,
    betas: &[f64],
    step: u32,
) -> Result<OptimizationResult> {
    let k = betas.len();
    check_pilot_range(config, k)?;
    if step == 0 {
        return Err(invalid("step", "must be at least 1"));
    }
    let first = k as u32 + 1;
    let last = config.coherence_len - 1;
    let coarse: Vec<u32> = (first..=last).step_by(step as usize).collect();

    let mut evaluated: Vec<(u32, f64)> = Vec::new();
    let mut skipped: Vec<(u32, String)> = Vec::new();
    absorb(
        evaluate_pilot_grid(config, betas, &coarse),
        &mut evaluated,
        &mut skipped,
    );
    let coarse_best =
        OptimizationResult::from_profile(evaluated.clone(), Certificate::Grid, Vec::new())?;
    if step > 1 {
        let lo = coarse_best.argmax.saturating_sub(step - 1).max(first);
        let hi = (coarse_best.argmax + step - 1).min(last);
        let fine: Vec<u32> = (lo..=hi).filter(|l| !coarse.contains(l)).collect();
        absorb(
            evaluate_pilot_grid(config, betas, &fine),
            &mut evaluated,
            &mut skipped,
        );
    }
    evaluated.sort_by_key(|&(l, _)| l);
    skipped.sort_by_key(|(l, _)| *l);
    OptimizationResult::from_profile(evaluated, Certificate::Grid, skipped)
}

fn scheduling_candidates(k: usize, j_max: u32) -> Result<Vec<u32>> {
    if j_max == 0 {
        return Err(invalid("j_max", "must be at least 1"));
    }
    Ok((1..=j_max.min(k as u32)).collect())
}

/// MRC scheduling: `J* = 1`. The profile over `1..=j_max` is evaluated and
/// must be strictly decreasing; anything else is reported as an error.
pub fn optimize_scheduling_mrc(
    config: &SystemConfig,
    betas: &[f64],
    j_max: u32,
) -> Result<OptimizationResult> {
    let k = betas.len();
    if k == 0 {
        return Err(invalid("betas", "no active users"));
    }
    if config.pilot_len as usize <= k {
        return Err(Error::PilotTooShort {
            pilot_len: config.pilot_len,
            active: k,
        });
    }
    let profile: Vec<(u32, f64)> = scheduling_candidates(k, j_max)?
        .into_par_iter()
        .map(|j| {
            Ok((
                j,
                high_snr_rates(config, betas, Beamformer::Mrc, j)?.sum_rate,
            ))
        })
        .collect::<Result<_>>()?;
    for w in profile.windows(2) {
        if w[1].1 >= w[0].1 {
            return Err(Error::MonotonicityViolation {
                j: w[1].0,
                value: w[1].1,
                prev_j: w[0].0,
                previous: w[0].1,
            });
        }
    }
    let (argmax, objective) = profile[0];
    Ok(OptimizationResult {
        argmax,
        objective,
        profile,
        certificate: Certificate::MonotoneDecreasing,
        degenerate: false,
        skipped: Vec::new(),
    })
}

/// MMSE scheduling by scanning `J = 1..=min(j_max, K)`.
pub fn optimize_scheduling_mmse(
    config: &SystemConfig,
    betas: &[f64],
    j_max: u32,
) -> Result<OptimizationResult> {
    let k = betas.len();
    if k == 0 {
        return Err(invalid("betas", "no active users"));
    }
    let results: Vec<(u32, Result<f64>)> = scheduling_candidates(k, j_max)?
        .into_par_iter()
        .map(|j| {
            (
                j,
                high_snr_rates(config, betas, Beamformer::Mmse, j).map(|r| r.sum_rate),
            )
        })
        .collect();
    let mut profile = Vec::new();
    let mut skipped = Vec::new();
    for (j, r) in results {
        match r {
            Ok(v) => profile.push((j, v)),
            Err(e @ Error::NonConvergence { .. }) => skipped.push((j, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    OptimizationResult::from_profile(profile, Certificate::Grid, skipped)
}
