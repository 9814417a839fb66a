use massconn::monte_carlo::{
    average_rates, draw_realization, sinr_mmse_direct, sinr_mmse_empirical, sinr_mrc_empirical,
};
use massconn::params::{Activity, SystemConfig};
use massconn::rates::{rate_report, Beamformer, RateQuery};
use massconn::state_evolution::{estimation_stats, ChannelEstimateStats};

fn unit_config(m: u32, noise: f64) -> SystemConfig {
    SystemConfig {
        data_power: 1.0,
        pilot_power: 1.0,
        noise_power: noise,
        ..SystemConfig::reference(m, Activity::Count(1), 200)
    }
}

fn spread_betas(k: usize) -> Vec<f64> {
    (0..k).map(|i| 0.5 + i as f64 / (k - 1) as f64).collect()
}

fn check_oracle_agreement(m: u32, k: usize) {
    let betas = spread_betas(k);
    let tau2 = 0.1;
    let c = unit_config(m, 1e-3);
    let stats = estimation_stats(&betas, tau2).unwrap();
    for bf in [Beamformer::Mrc, Beamformer::Mmse] {
        let asym = rate_report(&RateQuery::from_config(&c, &betas, tau2, bf, 1)).unwrap();
        let mc = average_rates(&stats, &c, bf, 1, 200, 11).unwrap();
        let within = asym
            .per_user_sinr
            .iter()
            .zip(&mc.report.per_user_sinr)
            .filter(|(a, e)| ((*e - *a) / *a).abs() < 0.05)
            .count();
        assert!(
            within as f64 >= 0.95 * k as f64,
            "M={m} K={k} {bf}: {within}/{k} users within 5%"
        );
    }
}

#[test]
fn oracle_agreement_m128_k100() {
    check_oracle_agreement(128, 100);
}

#[test]
fn oracle_agreement_m256_k100() {
    check_oracle_agreement(256, 100);
}

#[test]
#[ignore = "O(1/K) finite-size bias near 4% at K = 50 leaves most users outside the 5% band"]
fn oracle_agreement_m64_k50() {
    check_oracle_agreement(64, 50);
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn single_user_rate_matches_fading_expectation() {
    // ||h||^2 ~ Gamma(M, 1) for h ~ CN(0, I_M).
    let m = 4u32;
    let snr = 2.0;
    let c = unit_config(m, 1.0 / snr);
    let density = |x: f64| x.powi(3) * (-x).exp() / 6.0;
    let expected = simpson(|x| density(x) * (1.0 + snr * x).log2(), 0.0, 80.0, 20_000);
    let stats = ChannelEstimateStats {
        upsilon: vec![1.0],
        delta_upsilon: vec![0.0],
    };
    let prelog = 0.8;
    let mc = average_rates(&stats, &c, Beamformer::Mrc, 1, 20_000, 3).unwrap();
    let mean = mc.report.sum_rate / prelog;
    let se = mc.sum_rate_halfwidth / 1.959_963_984_540_054 / prelog;
    assert!(
        (mean - expected).abs() < 3.0 * se,
        "{mean} vs {expected} (se {se})"
    );
}

#[test]
fn repeated_runs_are_bit_identical() {
    let betas = spread_betas(12);
    let stats = estimation_stats(&betas, 0.2).unwrap();
    let c = unit_config(8, 0.05);
    for bf in [Beamformer::Mrc, Beamformer::Mmse] {
        let a = average_rates(&stats, &c, bf, 3, 2, 42).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| average_rates(&stats, &c, bf, 3, 2, 42).unwrap());
        assert_eq!(a, b);
        let d = average_rates(&stats, &c, bf, 3, 2, 43).unwrap();
        assert_ne!(a.report.sum_rate, d.report.sum_rate);
    }
}

#[test]
fn downdate_matches_direct_solve_on_ten_realizations() {
    let betas = spread_betas(40);
    let stats = estimation_stats(&betas, 0.3).unwrap();
    let c = unit_config(32, 0.01);
    for seed in 100..110 {
        let r = draw_realization(&stats, 32, seed);
        let fast = sinr_mmse_empirical(&r, &c).unwrap();
        let slow = sinr_mmse_direct(&r, &c).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            assert!(((a - b) / b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn common_scaling_leaves_sinr_unchanged() {
    let betas = spread_betas(10);
    let stats = estimation_stats(&betas, 0.2).unwrap();
    let c = unit_config(16, 0.05);
    let s = 3.7e-9;
    let scaled = ChannelEstimateStats {
        upsilon: stats.upsilon.iter().map(|v| v * s).collect(),
        delta_upsilon: stats.delta_upsilon.iter().map(|v| v * s).collect(),
    };
    let cs = SystemConfig {
        noise_power: c.noise_power * s,
        ..c.clone()
    };
    for seed in 0..5 {
        let a = draw_realization(&stats, 16, seed);
        let b = draw_realization(&scaled, 16, seed);
        let pairs = [
            (sinr_mrc_empirical(&a, &c), sinr_mrc_empirical(&b, &cs)),
            (
                sinr_mmse_empirical(&a, &c).unwrap(),
                sinr_mmse_empirical(&b, &cs).unwrap(),
            ),
        ];
        for (x, y) in pairs {
            for (p, q) in x.iter().zip(&y) {
                assert!(((p - q) / p).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn realization_variance_tracks_upsilon() {
    let stats = ChannelEstimateStats {
        upsilon: vec![0.5, 2.0, 8.0],
        delta_upsilon: vec![0.0; 3],
    };
    let m = 1024;
    let r = draw_realization(&stats, m, 5);
    for (h, v) in r.h_hat.iter().zip(&stats.upsilon) {
        let var = h.iter().map(|z| z.norm_sqr()).sum::<f64>() / m as f64;
        assert!(((var - v) / v).abs() < 5.0 / (m as f64).sqrt());
    }
}
