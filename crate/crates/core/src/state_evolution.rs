//! Scalar state evolution of the activity-detection / channel-estimation
//! phase, its fixed point `tau^2`, and the per-user estimation statistics
//! derived from it.

use std::borrow::Cow;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::params::{PathlossModel, PathlossPopulation, SystemConfig};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Number of draws used when the pathloss law is given analytically.
pub const ANALYTIC_SAMPLES: usize = 100_000;
const ANALYTIC_SEED: u64 = 0x005e_ed0f_be7a;

/// Distribution the expectation `E_beta[.]` is taken over.
#[derive(Debug, Clone, Copy)]
pub enum BetaLaw<'a> {
    /// Arithmetic mean over the given coefficients.
    Empirical(&'a [f64]),
    /// Monte Carlo mean over `ANALYTIC_SAMPLES` draws from the model with a
    /// fixed internal seed.
    Analytic(PathlossModel),
}

impl<'a> BetaLaw<'a> {
    pub fn population(pop: &'a PathlossPopulation) -> Self {
        BetaLaw::Empirical(&pop.betas)
    }

    /// Support points of the expectation, each with equal weight.
    pub fn support(&self) -> Cow<'a, [f64]> {
        match *self {
            BetaLaw::Empirical(b) => Cow::Borrowed(b),
            BetaLaw::Analytic(model) => {
                Cow::Owned(model.population(ANALYTIC_SAMPLES, ANALYTIC_SEED).betas)
            }
        }
    }
}

/// Inputs of the scalar recursion.
#[derive(Debug, Clone, Copy)]
pub struct StateEvolutionInput<'a> {
    /// Total pilot energy `L * rho_pilot`.
    pub xi: f64,
    /// `N / L`.
    pub omega: f64,
    /// `K / N`.
    pub epsilon: f64,
    pub sigma2: f64,
    pub beta_law: BetaLaw<'a>,
}

impl<'a> StateEvolutionInput<'a> {
    pub fn from_config(config: &SystemConfig, beta_law: BetaLaw<'a>) -> Self {
        Self {
            xi: config.xi(),
            omega: config.omega(),
            epsilon: config.epsilon(),
            sigma2: config.noise_power,
            beta_law,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi.is_finite() && self.xi > 0.0) {
            return Err(invalid("xi", "pilot energy must be positive"));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(invalid("sigma2", "noise power must be positive"));
        }
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(invalid("omega", "load ratio must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid("epsilon", "must lie in (0, 1)"));
        }
        if let BetaLaw::Empirical(b) = self.beta_law {
            if b.is_empty() || b.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(invalid("beta_law", "coefficients must be positive"));
            }
        }
        Ok(())
    }

    pub fn load(&self) -> f64 {
        self.omega * self.epsilon
    }

    pub fn lower_bound(&self) -> f64 {
        self.sigma2 / self.xi
    }

    /// `sigma^2 / (xi (1 - omega epsilon))`, only meaningful when the load is below one.
    pub fn upper_bound(&self) -> Option<f64> {
        let load = self.load();
        (load < 1.0).then(|| self.sigma2 / (self.xi * (1.0 - load)))
    }
}

/// Converged effective noise and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseStateResult {
    pub tau2: f64,
    pub lower_bound: f64,
    pub upper_bound: Option<f64>,
    /// High-SNR limit of the fixed point; coincides with the upper bound.
    pub high_snr_approx: Option<f64>,
    pub iterations: usize,
    /// `tau_t^2` for `t = 0, 1, ...`.
    pub trace: Vec<f64>,
}

impl NoiseStateResult {
    /// Whether the uniqueness/bounds regime `omega * epsilon < 1` applies.
    pub fn in_bounded_regime(&self) -> bool {
        self.upper_bound.is_some()
    }
}

fn mean_of(support: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    support.iter().map(|&b| f(b)).sum::<f64>() / support.len() as f64
}

/// Right-hand side of the recursion, `sigma^2/xi + omega eps E[beta x / (beta + x)]`.
fn recursion(input: &StateEvolutionInput<'_>, support: &[f64], x: f64) -> f64 {
    input.lower_bound() + input.load() * mean_of(support, |b| b * x / (b + x))
}

/// Runs the recursion from `tau_0^2 = sigma^2/xi + omega eps E[beta]` until
/// the relative step drops below `tol`.
///
/// Outside the bounded regime (`omega * epsilon >= 1`) the result carries no
/// bounds. Inside it, the returned value is projected onto the proven
/// interval `[sigma^2/xi, sigma^2/(xi(1 - omega eps))]`; the iterates
/// approach the fixed point from above so the projection can only reduce the
/// error.
pub fn solve_state_evolution(
    input: &StateEvolutionInput<'_>,
    tol: f64,
    max_iter: usize,
) -> Result<NoiseStateResult> {
    input.validate()?;
    if tol.is_nan() || tol <= 0.0 {
        return Err(invalid("tol", "must be positive"));
    }
    let support = input.beta_law.support();
    let mut tau2 = input.lower_bound() + input.load() * mean_of(&support, |b| b);
    let mut trace = vec![tau2];
    let mut last_step = f64::INFINITY;
    for it in 1..=max_iter {
        let next = recursion(input, &support, tau2);
        trace.push(next);
        last_step = ((next - tau2) / tau2).abs();
        tau2 = next;
        if last_step < tol {
            let lower_bound = input.lower_bound();
            let upper_bound = input.upper_bound();
            if let Some(ub) = upper_bound {
                tau2 = tau2.clamp(lower_bound, ub);
            }
            return Ok(NoiseStateResult {
                tau2,
                lower_bound,
                upper_bound,
                high_snr_approx: upper_bound,
                iterations: it,
                trace,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "state evolution",
        iterations: max_iter,
        last_step,
    })
}

/// `f(x) = x - omega eps E[beta x/(beta + x)] - sigma^2/xi`; zero at the fixed point.
pub fn fixed_point_residual(input: &StateEvolutionInput<'_>, x: f64) -> f64 {
    let support = input.beta_law.support();
    x - recursion(input, &support, x)
}

/// High-SNR effective noise `sigma^2 / (rho_pilot (L - K))` with the nominal `K`.
pub fn high_snr_tau2(config: &SystemConfig) -> Result<f64> {
    high_snr_tau2_for(config, config.active_users())
}

/// Same as [`high_snr_tau2`] for an explicit active-user count.
pub fn high_snr_tau2_for(config: &SystemConfig, active: usize) -> Result<f64> {
    if config.pilot_len as usize <= active {
        return Err(Error::PilotTooShort {
            pilot_len: config.pilot_len,
            active,
        });
    }
    Ok(config.noise_power / (config.pilot_power * (config.pilot_len as usize - active) as f64))
}

/// Per-user variances of the estimated channel and of the estimation error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelEstimateStats {
    pub upsilon: Vec<f64>,
    pub delta_upsilon: Vec<f64>,
}

impl ChannelEstimateStats {
    pub fn len(&self) -> usize {
        self.upsilon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upsilon.is_empty()
    }

    pub fn total_error(&self) -> f64 {
        self.delta_upsilon.iter().sum()
    }

    /// The users with the given indices, in order.
    pub fn subset(&self, users: &[usize]) -> Self {
        Self {
            upsilon: users.iter().map(|&k| self.upsilon[k]).collect(),
            delta_upsilon: users.iter().map(|&k| self.delta_upsilon[k]).collect(),
        }
    }
}

/// `upsilon_k = beta_k^2/(beta_k + tau^2)`, `delta_k = beta_k tau^2/(beta_k + tau^2)`.
pub fn estimation_stats(betas: &[f64], tau2: f64) -> Result<ChannelEstimateStats> {
    if tau2.is_nan() || tau2 < 0.0 {
        return Err(invalid("tau2", "effective noise must be non-negative"));
    }
    let (upsilon, delta_upsilon) = betas
        .iter()
        .map(|&b| (b * b / (b + tau2), b * tau2 / (b + tau2)))
        .unzip();
    Ok(ChannelEstimateStats {
        upsilon,
        delta_upsilon,
    })
}

/// Grid evaluation of `f` supporting uniqueness of the fixed point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessEvidence {
    pub unique: bool,
    pub sign_changes: usize,
    /// Consecutive grid points between which `f` changes sign.
    pub bracket: Option<(f64, f64)>,
    pub grid: Vec<(f64, f64)>,
}

/// Evaluates `f` on a log grid over `[lower/10, upper*10]`, checks it is
/// strictly increasing and counts its sign changes.
pub fn check_fixed_point_uniqueness(
    input: &StateEvolutionInput<'_>,
    grid: usize,
) -> Result<UniquenessEvidence> {
    input.validate()?;
    let upper = input
        .upper_bound()
        .ok_or_else(|| invalid("omega", "uniqueness check needs omega * epsilon < 1"))?;
    if grid < 2 {
        return Err(invalid("grid", "need at least two points"));
    }
    let support = input.beta_law.support();
    let (lo, hi) = ((input.lower_bound() / 10.0).ln(), (upper * 10.0).ln());
    let points: Vec<(f64, f64)> = (0..grid)
        .map(|i| {
            let x = (lo + (hi - lo) * i as f64 / (grid - 1) as f64).exp();
            (x, x - recursion(input, &support, x))
        })
        .collect();

    let mut sign_changes = 0;
    let mut bracket = None;
    for w in points.windows(2) {
        let ((x0, f0), (x1, f1)) = (w[0], w[1]);
        if f1 <= f0 {
            return Err(Error::NotMonotone {
                at: x1,
                value: f1,
                previous: f0,
            });
        }
        if (f0 < 0.0) != (f1 < 0.0) {
            sign_changes += 1;
            bracket.get_or_insert((x0, x1));
        }
    }
    Ok(UniquenessEvidence {
        unique: sign_changes == 1,
        sign_changes,
        bracket,
        grid: points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_mass(beta: &[f64], xi: f64, load: f64) -> StateEvolutionInput<'_> {
        StateEvolutionInput {
            xi,
            omega: load / 0.05,
            epsilon: 0.05,
            sigma2: 1.0,
            beta_law: BetaLaw::Empirical(beta),
        }
    }

    #[test]
    fn vanishing_activity_gives_noise_floor() {
        let beta = [2.0, 0.5, 1.0];
        let input = StateEvolutionInput {
            xi: 4.0,
            omega: 10.0,
            epsilon: 1e-12,
            sigma2: 1.0,
            beta_law: BetaLaw::Empirical(&beta),
        };
        let r = solve_state_evolution(&input, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((r.tau2 - 0.25).abs() / 0.25 < 1e-10);
    }

    #[test]
    fn strong_users_reach_high_snr_limit() {
        let sigma2_over_xi = 1.0 / 3.0;
        let beta = [1e6 * sigma2_over_xi];
        let input = point_mass(&beta, 3.0, 0.5);
        let r = solve_state_evolution(&input, 1e-12, DEFAULT_MAX_ITER).unwrap();
        let limit = sigma2_over_xi / 0.5;
        assert!((r.tau2 - limit).abs() / limit < 1e-5);
        assert_eq!(r.high_snr_approx, Some(limit));
        assert!(r.tau2 <= limit);
    }

    #[test]
    fn overloaded_regime_reports_no_bounds() {
        let beta = [1.0, 2.0];
        let input = point_mass(&beta, 10.0, 1.5);
        let r = solve_state_evolution(&input, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(!r.in_bounded_regime());
        assert!(r.upper_bound.is_none());
        assert!(r.tau2 > r.lower_bound);
    }

    #[test]
    fn trace_is_monotone_and_residual_small() {
        let beta = [0.3, 1.0, 3.0, 10.0];
        let input = point_mass(&beta, 2.0, 0.8);
        let tol = 1e-10;
        let r = solve_state_evolution(&input, tol, DEFAULT_MAX_ITER).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(fixed_point_residual(&input, r.tau2).abs() / r.tau2 < 10.0 * tol);
        assert_eq!(r.trace.len(), r.iterations + 1);
    }

    #[test]
    fn non_convergence_is_reported() {
        let beta = [1.0];
        let input = point_mass(&beta, 1.0, 0.9);
        assert!(matches!(
            solve_state_evolution(&input, 1e-15, 3),
            Err(Error::NonConvergence { iterations: 3, .. })
        ));
    }

    #[test]
    fn high_snr_tau2_examples() {
        use crate::params::{Activity, SystemConfig};
        let base = SystemConfig::reference(128, Activity::Count(100), 200);
        let k = 100.0;
        let t = high_snr_tau2(&base.with_pilot_len(200)).unwrap();
        assert!((t - base.noise_power / (base.pilot_power * k)).abs() / t < 1e-14);
        let t = high_snr_tau2(&base.with_pilot_len(101)).unwrap();
        assert!((t - base.noise_power / base.pilot_power).abs() / t < 1e-14);
        assert!(matches!(
            high_snr_tau2(&base.with_pilot_len(100)),
            Err(Error::PilotTooShort { .. })
        ));

        let explicit = SystemConfig {
            pilot_power: 0.1995,
            noise_power: 1.2589e-13,
            ..base
        };
        let t = high_snr_tau2(&explicit).unwrap();
        assert!((t - 6.31e-15).abs() / 6.31e-15 < 1e-3, "{t:e}");
    }

    #[test]
    fn estimation_stat_examples() {
        let betas = [1.0, 3.0, 1e-9];
        let s = estimation_stats(&betas, 0.0).unwrap();
        assert_eq!(s.upsilon, betas.to_vec());
        assert!(s.delta_upsilon.iter().all(|&d| d == 0.0));

        let s = estimation_stats(&[2.5], 2.5).unwrap();
        assert_eq!(s.upsilon[0], 1.25);
        assert_eq!(s.delta_upsilon[0], 1.25);

        let b = 10f64.powf(-12.81);
        let s = estimation_stats(&[b], 6.31e-15).unwrap();
        assert!((s.upsilon[0] / b - 0.961).abs() < 5e-4);

        assert!(estimation_stats(&betas, -1.0).is_err());
    }

    #[test]
    fn uniqueness_for_point_mass() {
        let beta = [1.0];
        let input = point_mass(&beta, 5.0, 0.5);
        let ev = check_fixed_point_uniqueness(&input, 200).unwrap();
        assert!(ev.unique);
        assert_eq!(ev.sign_changes, 1);
        let (a, b) = ev.bracket.unwrap();
        let r = solve_state_evolution(&input, 1e-12, DEFAULT_MAX_ITER).unwrap();
        assert!(a <= r.tau2 && r.tau2 <= b);

        let overloaded = point_mass(&beta, 5.0, 1.2);
        assert!(check_fixed_point_uniqueness(&overloaded, 50).is_err());
    }

    #[test]
    fn analytic_law_is_reproducible() {
        let law = BetaLaw::Analytic(PathlossModel::default());
        let a = law.support();
        assert_eq!(a.len(), ANALYTIC_SAMPLES);
        assert_eq!(a, law.support());
    }
}
