//! The acceptance gate: one test per contract, each printing a single
//! pass/fail line with its pinned tolerance and asserting its runtime
//! budget. Numerical checks run in-process against the core library; the
//! determinism check drives the installed binary end to end.

use brwre_core::barrier::{
    barrier_probability, barrier_probability_mc, bridge_below_zero_prob, log_p_n_sequence,
    BarrierSpec, EndWindow, GridCfg,
};
use brwre_core::brw::{
    breach_probability, many_to_one_lhs, many_to_one_rhs, BrwConfig, BrwMode, TestFunctional,
};
use brwre_core::curve::CurveKind;
use brwre_core::env::{sample_environment, EnvConfig, Environment, OffspringLaw};
use brwre_core::verify::{
    association_check, crude_lb_check, crude_lb_construct_g, girsanov_tilt_check,
    ratio_start_shift, tightness_experiment, MaxSimPolicy, TightnessCfg, TightnessReport,
    CALIBRATED_GAMMA0, CALIBRATED_RATIO_FLOOR_C, SUITE_XI0,
};
use rand::Rng;
use std::time::Instant;

fn det2_cfg() -> EnvConfig {
    EnvConfig::new(OffspringLaw::Deterministic(2)).expect("valid law")
}

fn u23_cfg() -> EnvConfig {
    EnvConfig::new(OffspringLaw::UniformInt(2, 3)).expect("valid law")
}

/// The frozen three-environment comparison suite: the flat environment and
/// two sampled rough ones, all long enough for the t = 256 checks.
fn comparison_suite() -> Vec<(&'static str, Environment)> {
    vec![
        ("flat", sample_environment(&det2_cfg(), 256, 0).unwrap()),
        ("rough-1", sample_environment(&u23_cfg(), 256, 1).unwrap()),
        ("rough-2", sample_environment(&u23_cfg(), 256, 2).unwrap()),
    ]
}

fn assert_budget(start: Instant, secs: u64, what: &str) {
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < secs as f64,
        "{what} took {elapsed:.1} s, budget {secs} s"
    );
}

/// Closed-form bridge survival versus an independent fine-grained path
/// oracle: sequential conditional sampling at dt = 1e−3 with the exact
/// per-micro-interval kill probability, 10⁶ paths, agreement within
/// 3 standard errors.
#[test]
fn acceptance_01_bridge_formula_and_mc_oracle() {
    let start = Instant::now();
    let exact = bridge_below_zero_prob(-1.0, -1.0, 1.0).unwrap();
    assert!(
        (exact - (1.0 - (-2.0f64).exp())).abs() < 1e-15,
        "closed form must be 1 − e⁻²"
    );

    // Oracle: Brownian bridge −1 → −1 over [0, 1], sampled every dt; the
    // conditional survival of each micro-interval given its endpoints is
    // exactly 1 − e^{−2ab/dt}, so the product is an unbiased estimator of
    // the survival probability at any dt.
    let steps = 1_000usize;
    let dt = 1e-3f64;
    let (a, b) = (-1.0f64, -1.0f64);
    // Conditional-step coefficients toward the fixed endpoint b.
    let mut pull = Vec::with_capacity(steps);
    let mut vol = Vec::with_capacity(steps);
    for k in 0..steps {
        let remaining = 1.0 - k as f64 * dt;
        pull.push(dt / remaining);
        vol.push((dt * (remaining - dt) / remaining).max(0.0).sqrt());
    }

    let paths = 1_000_000usize;
    let mut rng = brwre_core::rng::derive_rng(424242, "bridge-oracle", 0);
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    for _ in 0..paths {
        let mut x = a;
        let mut weight = 1.0f64;
        for k in 0..steps {
            let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            let next = x + pull[k] * (b - x) + vol[k] * z;
            if next >= 0.0 {
                weight = 0.0;
                break;
            }
            let expo = -2.0 * x * next / dt;
            // exp underflows to 0 beyond ~−745; skip the call well before.
            if expo > -60.0 {
                weight *= 1.0 - expo.exp();
            }
            x = next;
        }
        sum += weight;
        sumsq += weight * weight;
    }
    let mean = sum / paths as f64;
    let var = (sumsq / paths as f64 - mean * mean).max(0.0);
    let se = (var / paths as f64).sqrt();
    assert!(se > 0.0, "degenerate oracle");
    assert!(
        (mean - exact).abs() <= 3.0 * se,
        "oracle {mean:.6} vs exact {exact:.6} beyond 3·se = {:.2e}",
        3.0 * se
    );
    assert_budget(start, 60, "bridge oracle");
}

/// The killed-density engine against the path-sampling oracle on a
/// randomized spec suite: ten specs over the comparison environments,
/// agreement within max(3·stderr, 2% relative).
#[test]
fn acceptance_02_engine_matches_path_sampler_on_random_specs() {
    let start = Instant::now();
    let suite = comparison_suite();
    let grid = GridCfg::default();
    let mut rng = brwre_core::rng::derive_rng(515151, "engine-vs-mc-specs", 0);
    for case in 0..10 {
        let (name, env) = &suite[case % suite.len()];
        let t = f64::from(rng.gen_range(4..=12u32));
        let curve = match rng.gen_range(0..3u32) {
            0 => CurveKind::Zero,
            1 => CurveKind::neg_banana().scaled(rng.gen_range(0.5..=1.0)),
            _ => CurveKind::pos_banana().scaled(rng.gen_range(0.5..=1.0)),
        };
        let spec = BarrierSpec {
            t,
            curve,
            drift_slope: rng.gen_range(-0.3..=0.3),
            start_offset: rng.gen_range(-3.0..=-0.5),
            end_window: if rng.gen_bool(0.5) {
                EndWindow::Unrestricted
            } else {
                EndWindow::j(rng.gen_range(-2.0..=0.0))
            },
        };
        let engine = barrier_probability(env, &spec, &grid).unwrap();
        let mc = barrier_probability_mc(env, &spec, 100_000, 8, 616161 + case as u64).unwrap();
        let tol = (3.0 * mc.stderr).max(0.02 * engine);
        assert!(
            (engine - mc.estimate).abs() <= tol,
            "case {case} ({name}, t = {t}): engine {engine:.6} vs mc {:.6} ± {:.2e} \
             beyond max(3se, 2%) = {tol:.2e}",
            mc.estimate,
            mc.stderr
        );
    }
    assert_budget(start, 300, "engine-vs-mc suite");
}

/// The population identity for path functionals at n = 6, both offspring
/// laws: both zero-variance sides are exact, and five random bounded
/// functionals agree across sides within 3 joint standard errors.
#[test]
fn acceptance_03_population_identity_exact_and_randomized() {
    let start = Instant::now();
    for (label, env_cfg, env_seed) in [("det2", det2_cfg(), 0u64), ("u23", u23_cfg(), 1u64)] {
        let env = sample_environment(&env_cfg, 6, env_seed).unwrap();
        let population: f64 = (1..=6).map(|k| f64::from(env.l_at(k).unwrap())).product();

        // f ≡ 1: the tree side sums leaves exactly; the walk side is MC.
        let lhs = many_to_one_lhs(&env, 6, &TestFunctional::Constant(1.0), 5, 31).unwrap();
        assert!(
            (lhs.estimate - population).abs() < 1e-9,
            "{label}: leaf count"
        );
        assert!(
            lhs.stderr < 1e-12,
            "{label}: leaf count must be deterministic"
        );
        let rhs = many_to_one_rhs(&env, 6, &TestFunctional::Constant(1.0), 200_000, 37).unwrap();
        assert!(
            (rhs.estimate - population).abs() <= 3.0 * rhs.stderr,
            "{label}: walk side {:.4} vs {population} ± 3·{:.4}",
            rhs.estimate,
            rhs.stderr
        );

        // f = e^{θ*·x_n}: the walk side integrand is identically 1. The
        // tree side is the critical-tilt partition function — mean 1 with
        // per-leaf second moment also 1, so the sum's variance is about
        // the leaf count and the heavy upper tail needs a large sample
        // before the empirical standard error is trustworthy.
        let rhs = many_to_one_rhs(&env, 6, &TestFunctional::ExpLastCoord, 200, 41).unwrap();
        assert!(
            (rhs.estimate - 1.0).abs() < 1e-12,
            "{label}: unit integrand"
        );
        assert!(rhs.stderr < 1e-12);
        let lhs = many_to_one_lhs(&env, 6, &TestFunctional::ExpLastCoord, 1_000_000, 43).unwrap();
        assert!(
            (lhs.estimate - 1.0).abs() <= 3.0 * lhs.stderr,
            "{label}: tree side {:.4} vs 1 ± 3·{:.4}",
            lhs.estimate,
            lhs.stderr
        );

        // Five random bounded Lipschitz functionals of the last coordinate.
        let mut rng = brwre_core::rng::derive_rng(717171, "identity-functionals", env_seed);
        for case in 0..5 {
            let f = TestFunctional::BoundedLip {
                center: rng.gen_range(-3.0..=1.0),
                slope: rng.gen_range(0.5..=2.0),
                height: rng.gen_range(0.5..=2.0),
            };
            let lhs = many_to_one_lhs(&env, 6, &f, 2_000, 100 + case).unwrap();
            let rhs = many_to_one_rhs(&env, 6, &f, 100_000, 200 + case).unwrap();
            let joint = (lhs.stderr.powi(2) + rhs.stderr.powi(2)).sqrt();
            assert!(
                (lhs.estimate - rhs.estimate).abs() <= 3.0 * joint,
                "{label} functional {case}: {:.5} vs {:.5} beyond 3·{joint:.2e}",
                lhs.estimate,
                rhs.estimate
            );
        }
    }
    assert_budget(start, 300, "population identity suite");
}

/// The exponential breach bound at n = 12: the frequency of any particle's
/// recentred path rising above −y stays within 3 standard errors of
/// e^{θ*y}, for both offspring laws and three levels, 10⁴ replicas each.
#[test]
fn acceptance_04_breach_frequency_respects_exponential_bound() {
    let start = Instant::now();
    for (label, env_cfg, env_seed) in [("det2", det2_cfg(), 0u64), ("u23", u23_cfg(), 3u64)] {
        let env = sample_environment(&env_cfg, 12, env_seed).unwrap();
        let cfg = BrwConfig {
            n: 12,
            mode: BrwMode::Exact {
                max_particles: 1 << 20,
            },
        };
        for y in [-1.0, -2.0, -3.0] {
            let est = breach_probability(&env, 12, y, &cfg, 10_000, 737373).unwrap();
            let bound = (env.theta_star() * y).exp();
            assert!(
                est.estimate <= bound + 3.0 * est.stderr,
                "{label} y = {y}: breach {:.5} > e^(θ*y) = {bound:.5} + 3·{:.5}",
                est.estimate,
                est.stderr
            );
        }
    }
    assert_budget(start, 300, "breach bound suite");
}

/// The linear-tilt change-of-measure sandwich: the probability ratio under
/// a tilted versus flat log-correction drift stays inside the closed-form
/// band, at two horizons, four slopes and two curve shapes, 10⁵ paired
/// paths per cell.
#[test]
fn acceptance_05_linear_tilt_sandwich() {
    let start = Instant::now();
    let env = sample_environment(&det2_cfg(), 64, 0).unwrap();
    for t in [16.0, 64.0] {
        for c in [-0.2, -0.05, 0.05, 0.2] {
            for (hname, h) in [("zero", CurveKind::Zero), ("neg", CurveKind::neg_banana())] {
                let result =
                    girsanov_tilt_check(&env, t, h, c, -2.0, -2.0, 100_000, 818181).unwrap();
                assert!(
                    result.pass,
                    "t = {t}, c = {c}, h = {hname}: {}",
                    result.details
                );
            }
        }
    }
    assert_budget(start, 600, "tilt sandwich suite");
}

/// Positive association of decreasing bridge events plus the bridge
/// covariance formula, on five event configurations.
#[test]
fn acceptance_06_bridge_association_and_covariance() {
    let start = Instant::now();
    let inf = f64::INFINITY;
    let configs: [(f64, f64, Vec<f64>, Vec<f64>); 5] = [
        (4.0, 0.0, vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]),
        (6.0, -1.0, vec![1.5, 3.0, 4.5], vec![0.5, -0.2, 1.0]),
        (10.0, 2.0, vec![2.0, 5.0, 8.0], vec![1.0, 1.5, 0.5]),
        (
            8.0,
            -2.0,
            vec![1.0, 3.0, 5.0, 7.0],
            vec![0.0, -0.5, 0.5, -1.0],
        ),
        (
            5.0,
            1.0,
            vec![0.5, 1.5, 2.5, 3.5, 4.5],
            vec![inf, 0.8, inf, 0.2, 1.5],
        ),
    ];
    for (idx, (t, x_end, times, thresholds)) in configs.iter().enumerate() {
        let result =
            association_check(*t, *x_end, times, thresholds, 20_000, 919191 + idx as u64).unwrap();
        assert!(result.pass, "config {idx}: {}", result.details);
    }
    assert_budget(start, 120, "association suite");
}

/// The explicit barrier lower bound: the piecewise-linear minorant
/// dominates from below to 1e−9 on every comparison environment at three
/// horizons and three curve shapes, and the calibrated explicit bound
/// holds on at least 95% of 50 random environments at t = 64.
#[test]
fn acceptance_07_minorant_domination_and_explicit_bound() {
    let start = Instant::now();
    let grid = GridCfg::default();
    for (name, env) in comparison_suite() {
        for t in [16.0, 64.0, 256.0] {
            for (hname, h) in [
                ("zero", CurveKind::Zero),
                ("neg", CurveKind::neg_banana()),
                ("pos", CurveKind::pos_banana()),
            ] {
                let g = crude_lb_construct_g(&env, t, h).unwrap();
                // Independent domination sweep (the constructor also
                // checks; verify here so the contract lives in the test).
                let mut worst = f64::NEG_INFINITY;
                for i in 0..=4_000 {
                    let s = t * i as f64 / 4_000.0;
                    let gap = g.eval(s) - (env.w_at(s).unwrap() - h.eval(t, s));
                    worst = worst.max(gap);
                }
                assert!(
                    worst <= 1e-9,
                    "{name} t = {t} h = {hname}: minorant exceeds ceiling by {worst:.2e}"
                );
            }
        }
    }

    let mut passes = 0u32;
    let total = 50u32;
    for seed in 0..u64::from(total) {
        let env = sample_environment(&u23_cfg(), 64, seed).unwrap();
        let r = crude_lb_check(&env, 64.0, -1.0, -1.0, CALIBRATED_GAMMA0, &grid).unwrap();
        passes += u32::from(r.pass);
    }
    assert!(
        f64::from(passes) / f64::from(total) >= 0.95,
        "explicit bound held on only {passes}/{total} environments (need ≥ 95%)"
    );
    assert_budget(start, 600, "minorant suite");
}

/// Stabilization of |log p_n| / log n: along the ladder 16…4096 the
/// running maximum grows by less than 10% over the last decade, for every
/// environment in the ten-environment suite.
#[test]
fn acceptance_08_log_probability_growth_stabilizes() {
    let start = Instant::now();
    let ladder = [16usize, 32, 64, 128, 256, 512, 1024, 2048, 4096];
    let grid = GridCfg {
        dx: 0.05,
        ..GridCfg::default()
    };
    let decade_start = 5; // first rung ≥ 4096/10 is 512
    for seed in 0..10u64 {
        let env = sample_environment(&det2_cfg(), 4096, seed).unwrap();
        let logs = log_p_n_sequence(&env, &ladder, SUITE_XI0, &grid).unwrap();
        let mut running_max = f64::NEG_INFINITY;
        let mut at_decade_start = f64::NAN;
        for (i, (&n, &lp)) in ladder.iter().zip(&logs).enumerate() {
            running_max = running_max.max(lp.abs() / (n as f64).ln());
            if i == decade_start {
                at_decade_start = running_max;
            }
        }
        let increase = running_max / at_decade_start - 1.0;
        assert!(
            increase < 0.10,
            "env {seed}: running max rose {:.2}% over the last decade (tolerance 10%)",
            increase * 100.0
        );
    }
    assert_budget(start, 600, "growth suite");
}

/// Tightness of the recentred maximum: for each offspring law, 30
/// environments × 200 replicas on the ladder {32, 64, 128}, the pooled
/// interquartile range at n = 128 stays within 1.5× its n = 32 value and
/// the 5–95% spread within 2×.
#[test]
fn acceptance_09_recentred_maximum_spread_is_ladder_stable() {
    let start = Instant::now();
    let run = |env_cfg: EnvConfig| -> TightnessReport {
        tightness_experiment(&TightnessCfg {
            env_cfg,
            n_ladder: vec![32, 64, 128],
            envs: 30,
            replicas_per_env: 200,
            policy: MaxSimPolicy::desk_default(),
            xi0: SUITE_XI0,
            grid: GridCfg::default(),
            seed: 41,
        })
        .unwrap()
    };
    for (label, env_cfg) in [("det2", det2_cfg()), ("u23", u23_cfg())] {
        let report = run(env_cfg);
        let first = &report.rows[0];
        let last = &report.rows[report.rows.len() - 1];
        println!(
            "{label}: iqr {:.3} → {:.3} (ratio {:.3}, bound 1.5), spread {:.3} → {:.3} \
             (ratio {:.3}, bound 2.0), flagged {:?}, {:.0} s elapsed",
            first.iqr,
            last.iqr,
            last.iqr / first.iqr,
            first.p95_minus_p05,
            last.p95_minus_p05,
            last.p95_minus_p05 / first.p95_minus_p05,
            report.rows.iter().map(|r| r.flagged).collect::<Vec<_>>(),
            start.elapsed().as_secs_f64()
        );
        for row in &report.rows {
            assert_eq!(row.replicas, 6_000, "{label}: pool must not drop replicas");
            assert!(
                row.q50 > -15.0 && row.q50 < 5.0,
                "{label} n = {}: median {:.2} outside the sanity band",
                row.n,
                row.q50
            );
        }
        assert!(
            last.iqr <= 1.5 * first.iqr,
            "{label}: IQR grew {:.3} → {:.3}, beyond 1.5×",
            first.iqr,
            last.iqr
        );
        assert!(
            last.p95_minus_p05 <= 2.0 * first.p95_minus_p05,
            "{label}: 5–95% spread grew {:.3} → {:.3}, beyond 2×",
            first.p95_minus_p05,
            last.p95_minus_p05
        );
    }
    assert_budget(start, 1_800, "tightness suite");
}

/// Start-shift ratio contracts on the frozen comparison suite at t = 256:
/// dropping the initial ceiling stretch never shrinks the probability, and
/// the deep-to-shallow start ratio clears the calibrated structural floor.
#[test]
fn acceptance_10_start_shift_ratios_clear_structural_floor() {
    let start = Instant::now();
    let grid = GridCfg::default();
    for (name, env) in comparison_suite() {
        for y in [-3.0, -4.0] {
            for x in [-1.0, -2.0] {
                let r = ratio_start_shift(&env, 256.0, y, x, -4.0, CurveKind::Zero, &grid).unwrap();
                assert!(
                    r.ratio_windowed >= 1.0 - 1e-9,
                    "{name} y = {y} x = {x}: windowed ratio {:.6} < 1",
                    r.ratio_windowed
                );
                let floor = CALIBRATED_RATIO_FLOOR_C * r.ratio_floor_form;
                assert!(
                    r.ratio_full >= floor,
                    "{name} y = {y} x = {x}: ratio {:.6} under calibrated floor {floor:.6}",
                    r.ratio_full
                );
            }
        }
    }
    assert_budget(start, 300, "ratio suite");
}

/// End-to-end determinism of the verification pipeline: rerunning the
/// binary reproduces results.csv and report.json byte for byte, and one
/// worker thread versus eight changes nothing.
#[test]
fn acceptance_11_pipeline_outputs_are_deterministic() {
    let tmp = tempfile::TempDir::new().unwrap();
    let run = |dir: &std::path::Path, threads: &str| {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_brwre"))
            .args(["verify-all", "--threads", threads, "--out"])
            .arg(dir)
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "verify-all failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let read = |dir: &std::path::Path, name: &str| -> Vec<u8> {
        std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("reading {name}: {e}"))
    };
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    run(&a, "1");
    run(&b, "8");
    run(&c, "1");
    for file in ["results.csv", "report.json"] {
        assert_eq!(
            read(&a, file),
            read(&c, file),
            "{file}: rerun with identical config must be byte-identical"
        );
        assert_eq!(
            read(&a, file),
            read(&b, file),
            "{file}: thread count must not change results"
        );
    }
}
