//! Experiment harness: tightness of the recentred maximum, and numerical
//! verification of the checkable inequalities the other modules expose.
//!
//! Every operation here returns a plain-data report or a [`CheckResult`]
//! and is reproducible bit-for-bit from `(config, seed)`: parallel loops
//! derive one RNG stream per work item from the item's index, never from
//! scheduling order, and aggregation is order-preserving.
//!
//! The operations:
//!
//! * [`tightness_experiment`] — pooled quantile spreads of `M_n − m_n`
//!   across an n-ladder (annealed pooling: every environment weighted
//!   equally with equal replica counts);
//! * [`girsanov_tilt_check`] — Monte-Carlo sandwich for the probability
//!   ratio between a linearly tilted ceiling and the untilted one;
//! * [`association_check`] — positive association of decreasing threshold
//!   events under the Brownian bridge, plus its covariance formula;
//! * [`crude_lb_construct_g`] / [`crude_lb_check`] — the piecewise-linear
//!   minorant of `W − h` built from dyadic running minima, and the
//!   explicit lower bound for the barrier probability it certifies;
//! * [`gamma_hat`] — fitted decay exponent of the quenched wall
//!   probability over an s-ladder;
//! * [`ratio_start_shift`] — start-point monotonicity ratios for barrier
//!   probabilities with the initial stretch of the ceiling removed;
//! * [`log_pn_growth_check`] — stabilization of `|log p_n|/log n` along a
//!   ladder spanning at least two decades.

use crate::barrier::{
    barrier_probability_detail, barrier_probability_log, barrier_probability_mc,
    polyline_barrier_probability, BarrierSpec, EndWindow, GridCfg,
};
use crate::brw::{simulate_max, BrwConfig, BrwMode};
use crate::centering::m_n_sequence;
use crate::curve::CurveKind;
use crate::env::{env_constants, sample_environment, ConstantsReport, EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::rng;
use serde::Serialize;

/// The window anchor ξ₀ used by every suite-level run (windows are
/// `J_x = [x−1, x]` placed `ξ₀` below the ceiling).
pub const SUITE_XI0: i32 = -4;

/// Frozen exponent for the crude-lower-bound check. A log-log regression
/// of the straight-ceiling probability (flat environment, no curve, start
/// and window anchor at −1) over the ladder {16, …, 256} gives slope
/// ≈ 1.47 and approaches the classical positive-bridge exponent 3/2 from
/// below; freezing at 1.5 leaves margin for grid discretization while the
/// bound stays a genuine witness (any positive constant qualifies).
pub const CALIBRATED_GAMMA0: f64 = 1.5;

/// Frozen multiplier for the start-shift lower-bound check: the full
/// start-shift ratio must stay above `c · ratio_floor_form`. Calibrated once
/// as 0.9 × the minimum observed ratio/form quotient over the frozen
/// comparison suite (flat plus two sampled environments at t = 256,
/// y ∈ {−3, −4}, x ∈ {−1, −2}, end anchor −4; minimum 41.106 at the
/// second sampled environment's y = −3, x = −2 cell), then treated as a
/// pinned regression witness. The structural form is existence-level,
/// hence the large multiplier.
pub const CALIBRATED_RATIO_FLOOR_C: f64 = 36.9955;

/// Decay exponent used for the *recorded* (non-adjudicated) upper-bound
/// forms in [`ratio_start_shift`]: the classical ballot exponent.
const REPORT_GAMMA: f64 = 0.5;

/// Remainder decay rate used for the recorded constants bundle.
const REPORT_LAMBDA: f64 = 1.0;

/// Derive a per-item seed from a master seed and a work-item index.
fn item_seed(master: u64, index: u64) -> u64 {
    rng::mix64(master ^ index.wrapping_mul(0xa076_1d64_78bd_642f))
}

/// Outcome of one verification check.
///
/// `pass` holds exactly when `observed` satisfies `bound` within the
/// check's declared tolerance; `details` spells the comparison out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    /// Stable machine-readable check name.
    pub name: String,
    /// Whether the check passed.
    pub pass: bool,
    /// The quantities the check measured.
    pub observed: Vec<f64>,
    /// The bounds they were compared against.
    pub bound: Vec<f64>,
    /// Monte-Carlo standard error of the decisive observable (0 for
    /// deterministic checks).
    pub stderr: f64,
    /// Human-readable account of the comparison.
    pub details: String,
}

/// Linear-interpolation quantile (the common "type 7" rule) of a sorted
/// slice; `p` in [0, 1].
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

// ---------------------------------------------------------------------------
// Tightness experiment
// ---------------------------------------------------------------------------

/// How the per-replica maximum is simulated at each ladder rung.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MaxSimPolicy {
    /// Keep the whole population (feasible only while `∏ l_k` fits the
    /// budget).
    Exact {
        /// Population budget forwarded to the simulator.
        max_particles: u64,
    },
    /// Window pruning with a rung-dependent width measured in tilt units:
    /// the position-space window is
    /// `(window_base + window_per_log2 · log₂(n)) / θ*`. Dividing by θ*
    /// makes the retained band's population — which scales like
    /// `e^{θ*·window}` — the same for every offspring law at a given
    /// schedule, and keeps the margin over the maximum's ancestry dip
    /// (whose depth in tilt units is `1.5·ln n` for every law) growing
    /// with n.
    Pruned {
        /// Tilt-units width at n = 1.
        window_base: f64,
        /// Additional tilt-units width per doubling of n.
        window_per_log2: f64,
    },
}

/// Extra tilt-units window width added per escalation attempt after a
/// pruned population dies out before reaching generation n.
const RETRY_WINDOW_STEP: f64 = 3.0;

/// Escalation attempts allowed per replica before the experiment errors
/// out. Each step multiplies the retained band's population by roughly
/// e^{[`RETRY_WINDOW_STEP`]} ≈ 20, so the cap also bounds worst-case cost.
const RETRY_MAX_ATTEMPTS: u32 = 4;

impl MaxSimPolicy {
    /// The pruning schedule used by the desk-scale suite.
    pub fn desk_default() -> Self {
        MaxSimPolicy::Pruned {
            window_base: 3.0,
            window_per_log2: 1.7,
        }
    }

    fn mode_for(&self, n: usize, theta_star: f64, attempt: u32) -> BrwMode {
        match *self {
            MaxSimPolicy::Exact { max_particles } => BrwMode::Exact { max_particles },
            MaxSimPolicy::Pruned {
                window_base,
                window_per_log2,
            } => BrwMode::Pruned {
                window: (window_base
                    + window_per_log2 * (n as f64).log2()
                    + f64::from(attempt) * RETRY_WINDOW_STEP)
                    / theta_star,
            },
        }
    }

    fn label(&self) -> &'static str {
        match self {
            MaxSimPolicy::Exact { .. } => "exact",
            MaxSimPolicy::Pruned { .. } => "pruned",
        }
    }
}

/// Configuration for [`tightness_experiment`].
#[derive(Debug, Clone)]
pub struct TightnessCfg {
    /// Offspring-law configuration environments are drawn from.
    pub env_cfg: EnvConfig,
    /// Increasing generation ladder.
    pub n_ladder: Vec<usize>,
    /// Number of independent environments.
    pub envs: usize,
    /// Replicas of the branching walk per environment and rung.
    pub replicas_per_env: usize,
    /// Simulation mode policy.
    pub policy: MaxSimPolicy,
    /// Window anchor for the centering computation.
    pub xi0: i32,
    /// Barrier-engine grid for the centering computation.
    pub grid: GridCfg,
    /// Master seed.
    pub seed: u64,
}

/// One ladder rung of the tightness report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightnessRow {
    /// Generation count.
    pub n: usize,
    /// Pooled sample size (= envs × replicas_per_env, always exactly).
    pub replicas: usize,
    /// 1% quantile of the pooled `M_n − m_n` sample.
    pub q01: f64,
    /// 5% quantile.
    pub q05: f64,
    /// 25% quantile.
    pub q25: f64,
    /// Median.
    pub q50: f64,
    /// 75% quantile.
    pub q75: f64,
    /// 95% quantile.
    pub q95: f64,
    /// 99% quantile.
    pub q99: f64,
    /// Interquartile range.
    pub iqr: f64,
    /// 5%–95% spread.
    pub p95_minus_p05: f64,
    /// Replicas whose value may feel the window: the pruning sentinel
    /// fired (the generation maximum came within half a window of the
    /// prune threshold at some point) or the replica needed a widened
    /// window after its population died out. They remain in the pool —
    /// flagged, never dropped.
    pub flagged: usize,
}

/// Pooled spread of `M_n − m_n` along an n-ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightnessReport {
    /// One row per ladder rung.
    pub rows: Vec<TightnessRow>,
    /// Number of environments pooled.
    pub env_count: usize,
    /// Pooling mode ("annealed pooled, exact" or "annealed pooled,
    /// pruned").
    pub mode: String,
}

/// Run the tightness experiment: sample environments, compute the
/// centering, simulate replica maxima and pool `M_n − m_n` across
/// environments for each rung.
///
/// Each replica is simulated under the policy's window for its rung. A
/// pruned window advances at the critical speed, so a replica's retained
/// population can die out before reaching n; such a replica is retried
/// with the window widened in fixed steps (same tree, less truncation)
/// until a maximum exists. Replicas whose sentinel reports possible window
/// loss, or that needed widening, are counted in the row's `flagged`
/// column but kept in the pool, so every rung holds exactly
/// `envs × replicas_per_env` samples.
pub fn tightness_experiment(cfg: &TightnessCfg) -> Result<TightnessReport> {
    use rayon::prelude::*;

    if cfg.n_ladder.is_empty() {
        return Err(Error::config("n_ladder must be nonempty"));
    }
    if cfg.n_ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("n_ladder must be strictly increasing"));
    }
    if cfg.n_ladder[0] < 2 {
        return Err(Error::config("n_ladder entries must be ≥ 2"));
    }
    if cfg.envs == 0 || cfg.replicas_per_env == 0 {
        return Err(Error::config("envs and replicas_per_env must be ≥ 1"));
    }
    let n_max = *cfg.n_ladder.last().expect("nonempty ladder");

    // Per environment: for each rung, the list of (M_n − m_n, flagged).
    let per_env: Vec<Vec<Vec<(f64, bool)>>> = (0..cfg.envs as u64)
        .into_par_iter()
        .map(|env_idx| -> Result<Vec<Vec<(f64, bool)>>> {
            let env_seed = item_seed(cfg.seed, env_idx);
            let env = sample_environment(&cfg.env_cfg, n_max, env_seed)?;
            let records = m_n_sequence(&env, &cfg.n_ladder, cfg.xi0, &cfg.grid)?;
            let sim_seed = rng::mix64(env_seed ^ 0x5851_f42d_4c95_7f2d);
            let mut rungs = Vec::with_capacity(cfg.n_ladder.len());
            let escalatable = matches!(cfg.policy, MaxSimPolicy::Pruned { .. });
            for record in &records {
                let mut deltas = Vec::with_capacity(cfg.replicas_per_env);
                for replica in 0..cfg.replicas_per_env as u64 {
                    // Per-node seeding derives every particle's randomness
                    // from its tree coordinates, so a retry with a wider
                    // window re-expands the same realized tree with less
                    // truncation — a deterministic refinement, not a
                    // resample.
                    let mut attempt = 0u32;
                    let sample = loop {
                        let brw_cfg = BrwConfig {
                            n: record.n,
                            mode: cfg.policy.mode_for(record.n, env.theta_star(), attempt),
                        };
                        match simulate_max(&env, &brw_cfg, sim_seed, replica) {
                            Ok(result) => {
                                break (
                                    result.m_max - record.m_n,
                                    result.diagnostics.sentinel_dirty || attempt > 0,
                                )
                            }
                            Err(Error::Resource(_))
                                if escalatable && attempt < RETRY_MAX_ATTEMPTS =>
                            {
                                attempt += 1;
                            }
                            Err(e) => return Err(e),
                        }
                    };
                    deltas.push(sample);
                }
                rungs.push(deltas);
            }
            Ok(rungs)
        })
        .collect::<Result<Vec<_>>>()?;

    let expected = cfg.envs * cfg.replicas_per_env;
    let mut rows = Vec::with_capacity(cfg.n_ladder.len());
    for (rung_idx, &n) in cfg.n_ladder.iter().enumerate() {
        let mut pooled = Vec::with_capacity(expected);
        let mut flagged = 0usize;
        for env_rungs in &per_env {
            for &(delta, dirty) in &env_rungs[rung_idx] {
                pooled.push(delta);
                flagged += usize::from(dirty);
            }
        }
        assert_eq!(
            pooled.len(),
            expected,
            "pooled sample must not drop replicas"
        );
        pooled.sort_unstable_by(f64::total_cmp);
        let q = |p: f64| quantile_sorted(&pooled, p);
        let (q01, q05, q25, q50, q75, q95, q99) = (
            q(0.01),
            q(0.05),
            q(0.25),
            q(0.50),
            q(0.75),
            q(0.95),
            q(0.99),
        );
        rows.push(TightnessRow {
            n,
            replicas: expected,
            q01,
            q05,
            q25,
            q50,
            q75,
            q95,
            q99,
            iqr: q75 - q25,
            p95_minus_p05: q95 - q05,
            flagged,
        });
    }

    Ok(TightnessReport {
        rows,
        env_count: cfg.envs,
        mode: format!("annealed pooled, {}", cfg.policy.label()),
    })
}

// ---------------------------------------------------------------------------
// Linear-tilt (Girsanov) sandwich
// ---------------------------------------------------------------------------

/// Monte-Carlo check of the two-sided sandwich for the ratio between the
/// tilted barrier probability (ceiling lowered by `c·s`) and the untilted
/// one:
///
/// `e^{−tc²/2} · e^{−yc − h_t(t)c ∓ |y0−1||c|} · e^{W_t c}`
///
/// (upper bound with `+|y0−1||c|`, lower with `−`). Both probabilities are
/// estimated with common random numbers, so `c = 0` gives ratio exactly 1.
/// A zero-hit denominator (or numerator) makes the ratio undecidable at
/// this sample size; the check then reports pass with an "inconclusive"
/// note rather than failing.
pub fn girsanov_tilt_check(
    env: &Environment,
    t: f64,
    h: CurveKind,
    c_t: f64,
    y: f64,
    y0: f64,
    reps: usize,
    seed: u64,
) -> Result<CheckResult> {
    if reps < 10_000 {
        return Err(Error::config(format!(
            "reps = {reps} too small for the sandwich check (need ≥ 10000)"
        )));
    }
    if !(t > 0.0) || t > env.len() as f64 {
        return Err(Error::range(format!("t = {t} outside (0, {}]", env.len())));
    }
    let substeps = 4;
    let tilted = BarrierSpec {
        t,
        curve: h,
        drift_slope: c_t,
        start_offset: y,
        end_window: EndWindow::j(y0),
    };
    let flat = BarrierSpec {
        drift_slope: 0.0,
        ..tilted
    };
    let num = barrier_probability_mc(env, &tilted, reps, substeps, seed)?;
    let den = barrier_probability_mc(env, &flat, reps, substeps, seed)?;

    let name = "girsanov_tilt".to_owned();
    if num.estimate == 0.0 || den.estimate == 0.0 {
        return Ok(CheckResult {
            name,
            pass: true,
            observed: vec![num.estimate, den.estimate],
            bound: vec![],
            stderr: 0.0,
            details: format!(
                "inconclusive: zero-hit estimate (numerator {}, denominator {}) at reps = {reps}",
                num.estimate, den.estimate
            ),
        });
    }

    let ratio = num.estimate / den.estimate;
    let rel_num = num.stderr / num.estimate;
    let rel_den = den.stderr / den.estimate;
    let stderr = ratio * (rel_num * rel_num + rel_den * rel_den).sqrt();

    let w_t = env.w_at(t)?;
    let h_end = h.eval(t, t);
    let base = -t * c_t * c_t / 2.0 - y * c_t - h_end * c_t + w_t * c_t;
    let slack = (y0 - 1.0).abs() * c_t.abs();
    let lower = (base - slack).exp();
    let upper = (base + slack).exp();

    let pass = ratio >= lower - 3.0 * stderr && ratio <= upper + 3.0 * stderr;
    Ok(CheckResult {
        name,
        pass,
        observed: vec![ratio],
        bound: vec![lower, upper],
        stderr,
        details: format!(
            "ratio {ratio:.6} (se {stderr:.2e}) vs sandwich [{lower:.6}, {upper:.6}] \
             at c = {c_t}, t = {t}, y = {y}, y0 = {y0}; tolerance 3 se"
        ),
    })
}

// ---------------------------------------------------------------------------
// Association of decreasing bridge events
// ---------------------------------------------------------------------------

/// Check positive association of decreasing events under the Brownian
/// bridge `0 → x_end` on `[0, t]`, together with the bridge covariance
/// formula.
///
/// The bridge is sampled at the given interior `times`; event `A` requires
/// the even-indexed coordinates to stay at or below their thresholds,
/// event `B` the odd-indexed ones (disjoint coordinate sets, both
/// decreasing). The check asserts
/// `P[A∩B] ≥ P[A]·P[B] − 3·stderr` and, for every pair `j ≤ k`,
/// `|sample Cov[X_{t_j}, X_{t_k}] − t_j(t−t_k)/t| ≤ 4·stderr` (moments
/// taken around the exact bridge means `t_j·x_end/t`).
///
/// Thresholds may be `+∞` (the coordinate constraint then always holds).
pub fn association_check(
    t: f64,
    x_end: f64,
    times: &[f64],
    thresholds: &[f64],
    reps: usize,
    seed: u64,
) -> Result<CheckResult> {
    use rand_distr::{Distribution, StandardNormal};

    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::range("t must be positive and finite"));
    }
    if times.is_empty() || times.len() != thresholds.len() {
        return Err(Error::config(
            "times and thresholds must be nonempty and of equal length",
        ));
    }
    if times.windows(2).any(|w| w[0] >= w[1])
        || times[0] <= 0.0
        || *times.last().expect("nonempty") >= t
    {
        return Err(Error::range(
            "times must be strictly increasing inside (0, t)",
        ));
    }
    if thresholds.iter().any(|v| v.is_nan()) {
        return Err(Error::config("thresholds must not be NaN"));
    }
    if reps < 100 {
        return Err(Error::config("reps must be ≥ 100"));
    }

    let m = times.len();
    let means: Vec<f64> = times.iter().map(|&tj| tj / t * x_end).collect();
    let n_pairs = m * (m + 1) / 2;

    let mut rng = rng::derive_rng(seed, "association-bridge", 0);
    let mut hits_a = 0u64;
    let mut hits_b = 0u64;
    let mut hits_ab = 0u64;
    // Sample moments of z = (X_j − μ_j)(X_k − μ_k) per pair (j ≤ k).
    let mut cov_sum = vec![0.0f64; n_pairs];
    let mut cov_sumsq = vec![0.0f64; n_pairs];
    let mut coords = vec![0.0f64; m];

    for _ in 0..reps {
        let mut x = 0.0;
        let mut s = 0.0;
        for (j, &tj) in times.iter().enumerate() {
            let gap = tj - s;
            let remaining = t - s;
            let mean = x + gap / remaining * (x_end - x);
            let var = gap * (t - tj) / remaining;
            let z: f64 = StandardNormal.sample(&mut rng);
            x = mean + var.sqrt() * z;
            s = tj;
            coords[j] = x;
        }
        let a = coords
            .iter()
            .zip(thresholds)
            .step_by(2)
            .all(|(xj, th)| *xj <= *th);
        let b = coords
            .iter()
            .zip(thresholds)
            .skip(1)
            .step_by(2)
            .all(|(xj, th)| *xj <= *th);
        hits_a += u64::from(a);
        hits_b += u64::from(b);
        hits_ab += u64::from(a && b);
        let mut pair = 0;
        for j in 0..m {
            for k in j..m {
                let z = (coords[j] - means[j]) * (coords[k] - means[k]);
                cov_sum[pair] += z;
                cov_sumsq[pair] += z * z;
                pair += 1;
            }
        }
    }

    let nf = reps as f64;
    let p_a = hits_a as f64 / nf;
    let p_b = hits_b as f64 / nf;
    let p_ab = hits_ab as f64 / nf;
    let se = |p: f64| (p * (1.0 - p) / nf).sqrt();
    let (se_a, se_b, se_ab) = (se(p_a), se(p_b), se(p_ab));
    let se_comb =
        (se_ab * se_ab + (p_b * se_a) * (p_b * se_a) + (p_a * se_b) * (p_a * se_b)).sqrt();
    let assoc_bound = p_a * p_b - 3.0 * se_comb;
    let assoc_ok = p_ab >= assoc_bound;

    let mut max_cov_dev_se = 0.0f64;
    let mut cov_ok = true;
    let mut pair = 0;
    for j in 0..m {
        for k in j..m {
            let mean = cov_sum[pair] / nf;
            let var = (cov_sumsq[pair] / nf - mean * mean).max(0.0);
            let se_z = (var / nf).sqrt();
            let truth = times[j] * (t - times[k]) / t;
            let dev = (mean - truth).abs();
            if dev > 4.0 * se_z {
                cov_ok = false;
            }
            if se_z > 0.0 {
                max_cov_dev_se = max_cov_dev_se.max(dev / se_z);
            } else {
                // Degenerate only if every sampled product is identical;
                // then any deviation is a genuine failure.
                cov_ok &= dev == 0.0;
            }
            pair += 1;
        }
    }

    Ok(CheckResult {
        name: "association".to_owned(),
        pass: assoc_ok && cov_ok,
        observed: vec![p_ab, p_a, p_b],
        bound: vec![assoc_bound],
        stderr: se_comb,
        details: format!(
            "P[A∩B] = {p_ab:.5} vs P[A]P[B] − 3se = {assoc_bound:.5} \
             (P[A] = {p_a:.5}, P[B] = {p_b:.5}); covariance max |dev|/se = \
             {max_cov_dev_se:.2} over {n_pairs} pairs (tolerance 4)"
        ),
    })
}

// ---------------------------------------------------------------------------
// Crude lower bound: minorant construction and explicit bound
// ---------------------------------------------------------------------------

/// The piecewise-linear minorant `g_t` of `W − h` built from dyadic
/// running minima, with the intermediate quantities its explicit bound
/// needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GRecord {
    /// Breakpoints `(s, g_t(s))` in increasing time order.
    pub nodes: Vec<(f64, f64)>,
    /// `Ξ_0, …, Ξ_{k₁}` (combined walk and curve parts).
    pub xi: Vec<f64>,
    /// `Δ_j = (Ξ_{j+1} − Ξ_j)/2^j` for `j = 0, …, k₁−1`.
    pub delta: Vec<f64>,
    /// Dyadic depth `k₁ = ⌊log₂(t/3)⌋`.
    pub k1: u32,
    /// `t₁ = 2^{k₁}`.
    pub t1: f64,
    /// `t₂ = t − t₁`.
    pub t2: f64,
    /// End-anchor shift `W_t − h_t(t)`.
    pub end_shift: f64,
}

impl GRecord {
    /// Evaluate the minorant at `s` (clamped to `[0, t]`).
    pub fn eval(&self, s: f64) -> f64 {
        let nodes = &self.nodes;
        let s = s.clamp(nodes[0].0, nodes[nodes.len() - 1].0);
        let idx = nodes.partition_point(|&(time, _)| time <= s);
        if idx == nodes.len() {
            return nodes[nodes.len() - 1].1;
        }
        let (t0, v0) = nodes[idx - 1];
        let (t1, v1) = nodes[idx];
        if t1 == t0 {
            return v1;
        }
        v0 + (s - t0) / (t1 - t0) * (v1 - v0)
    }
}

/// Exact minimum of `W` over `[a, b]`: `W` is piecewise linear with
/// breakpoints at the integers, so the endpoints plus the interior
/// integers pin it.
fn min_w_on(env: &Environment, a: f64, b: f64) -> Result<f64> {
    let mut lo = env.w_at(a)?.min(env.w_at(b)?);
    let first = a.ceil() as i64;
    let last = b.floor() as i64;
    for k in first..=last {
        lo = lo.min(env.w_at(k as f64)?);
    }
    Ok(lo)
}

/// Exact minimum of `−h_t(·)` over `[a, b]`: the curves are monotone on
/// each side of `t/2`, so the endpoints plus the midpoint pin the
/// extremum.
fn min_neg_h_on(h: CurveKind, t: f64, a: f64, b: f64) -> f64 {
    let mut lo = (-h.eval(t, a)).min(-h.eval(t, b));
    let mid = t / 2.0;
    if a < mid && mid < b {
        lo = lo.min(-h.eval(t, mid));
    }
    lo
}

/// Build the piecewise-linear minorant `g_t` of `W − h` from dyadic
/// running minima.
///
/// With `k₁ = ⌊log₂(t/3)⌋`, `t₁ = 2^{k₁}` and `t₂ = t − t₁`, the levels
/// are `Ξ_j = Ξ_j(W) + Ξ_j(h)` where the walk part takes the minimum of
/// `W` over the start window `[0, 2^{j+1}]` and of `W − W_t` over the end
/// window `[t − 2^{j+1}, t]`, and the curve part does the same with `−h`
/// in place of `W` (its end part is `min(−h) + h_t(t)`); the top level
/// `Ξ_{k₁}` additionally caps both at 0. The graph runs through
/// `(0, 0), (2^j, Ξ_j)_{j≤k₁}, (t₂, Ξ_{k₁}+D), (t−2^j, Ξ_j+D)_{j<k₁},
/// (t, D)` with `D = W_t − h_t(t)`.
///
/// The returned minorant is verified to satisfy
/// `g_t(s) ≤ W_s − h_t(s) + 1e−9` on a dense grid; a violation is a
/// numeric error (it would invalidate the monotonicity chain downstream).
pub fn crude_lb_construct_g(env: &Environment, t: f64, h: CurveKind) -> Result<GRecord> {
    if !(t >= 6.0) {
        return Err(Error::range(format!(
            "t = {t} too small for the dyadic construction (need t ≥ 6)"
        )));
    }
    if t > env.len() as f64 {
        return Err(Error::range(format!(
            "t = {t} exceeds environment length {}",
            env.len()
        )));
    }

    let k1 = (t / 3.0).log2().floor() as u32;
    debug_assert!(k1 >= 1);
    let t1 = f64::from(2u32.pow(k1));
    let t2 = t - t1;
    let w_t = env.w_at(t)?;
    let h_end = h.eval(t, t);
    let end_shift = w_t - h_end;

    let mut xi = Vec::with_capacity(k1 as usize + 1);
    for j in 0..k1 {
        let span = f64::from(2u32.pow(j + 1));
        let start_w = min_w_on(env, 0.0, span)?;
        let end_w = min_w_on(env, t - span, t)? - w_t;
        let start_h = min_neg_h_on(h, t, 0.0, span);
        let end_h = min_neg_h_on(h, t, t - span, t) + h_end;
        xi.push(start_w.min(end_w) + start_h.min(end_h));
    }
    let global_w = min_w_on(env, 0.0, t)?;
    let global_h = min_neg_h_on(h, t, 0.0, t);
    let top_w = global_w.min(global_w - w_t).min(0.0);
    let top_h = global_h.min(global_h + h_end).min(0.0);
    xi.push(top_w + top_h);

    let delta: Vec<f64> = (0..k1 as usize)
        .map(|j| (xi[j + 1] - xi[j]) / f64::from(2u32.pow(j as u32)))
        .collect();

    let mut nodes = Vec::with_capacity(2 * k1 as usize + 4);
    nodes.push((0.0, 0.0));
    for (j, &level) in xi.iter().enumerate() {
        nodes.push((f64::from(2u32.pow(j as u32)), level));
    }
    nodes.push((t2, xi[k1 as usize] + end_shift));
    for j in (0..k1 as usize).rev() {
        nodes.push((t - f64::from(2u32.pow(j as u32)), xi[j] + end_shift));
    }
    nodes.push((t, end_shift));
    debug_assert!(nodes.windows(2).all(|w| w[0].0 < w[1].0));

    let record = GRecord {
        nodes,
        xi,
        delta,
        k1,
        t1,
        t2,
        end_shift,
    };

    // Domination check on a dense grid: the construction takes minima over
    // windows that cover every point, so a violation beyond rounding means
    // the record is unusable as a minorant.
    let grid_points = 10_000;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..=grid_points {
        let s = t * i as f64 / grid_points as f64;
        let gap = record.eval(s) - (env.w_at(s)? - h.eval(t, s));
        worst = worst.max(gap);
    }
    if worst > 1e-9 {
        return Err(Error::numeric(format!(
            "minorant exceeds W − h by {worst:.3e} (tolerance 1e−9)"
        )));
    }

    Ok(record)
}

/// Check the explicit crude lower bound for the barrier probability below
/// `W` (straight ceiling variant: no curve), and the exact monotonicity
/// chain through the minorant.
///
/// The left side is the engine probability of staying below `W` from `y`
/// and ending in `J_{y0}`; the right side is
/// `t^{−γ₀ − S/log t} = e^{−γ₀ log t − S}` with
/// `S = ΣΔ_j²2^j + 2(1−2^{3/2})ΣΔ_j 2^{j/2} + Ξ₀² + Ξ₀(4+y+y₀)
///  + 3(W_t² + h_t(t)²)/(t₂−t₁) + √t₁(|W_t| + |h_t(t)|)/(t₂−t₁)`.
/// Independently of the supplied γ₀, the chain
/// `lhs ≥ P[below g_t] − 1e−9` must hold because `g_t` minorizes the
/// ceiling.
pub fn crude_lb_check(
    env: &Environment,
    t: f64,
    y: f64,
    y0: f64,
    gamma0_hat: f64,
    grid: &GridCfg,
) -> Result<CheckResult> {
    if !(gamma0_hat > 0.0) || !gamma0_hat.is_finite() {
        return Err(Error::config(
            "gamma0_hat must be a positive finite calibrated constant",
        ));
    }
    let sqrt_t = t.sqrt();
    if !(-sqrt_t..=0.0).contains(&y) || !(-sqrt_t..=0.0).contains(&y0) {
        return Err(Error::range(format!(
            "y = {y}, y0 = {y0} must lie in [−√t, 0] = [{:.3}, 0]",
            -sqrt_t
        )));
    }

    let h = CurveKind::Zero;
    let g = crude_lb_construct_g(env, t, h)?;

    let spec = BarrierSpec {
        t,
        curve: h,
        drift_slope: 0.0,
        start_offset: y,
        end_window: EndWindow::j(y0),
    };
    let lhs = crate::barrier::barrier_probability(env, &spec, grid)?;
    let chain = polyline_barrier_probability(&g.nodes, y, &EndWindow::j(y0), grid)?;

    let w_t = env.w_at(t)?;
    let h_end = h.eval(t, t);
    let mut s_sum = 0.0;
    for (j, &d) in g.delta.iter().enumerate() {
        let two_j = f64::from(2u32.pow(j as u32));
        s_sum += d * d * two_j;
        s_sum += 2.0 * (1.0 - 2.0f64.powf(1.5)) * d * two_j.sqrt();
    }
    let xi0 = g.xi[0];
    s_sum += xi0 * xi0 + xi0 * (4.0 + y + y0);
    let gap = g.t2 - g.t1;
    s_sum += 3.0 * (w_t * w_t + h_end * h_end) / gap;
    s_sum += g.t1.sqrt() * (w_t.abs() + h_end.abs()) / gap;

    let rhs = (-gamma0_hat * t.ln() - s_sum).exp();
    let chain_ok = lhs >= chain.p - 1e-9;
    let bound_ok = lhs >= rhs;

    Ok(CheckResult {
        name: "crude_lb".to_owned(),
        pass: bound_ok && chain_ok,
        observed: vec![lhs, chain.p],
        bound: vec![rhs],
        stderr: 0.0,
        details: format!(
            "lhs = {lhs:.6e} vs explicit bound {rhs:.6e} (γ₀ = {gamma0_hat}, S = {s_sum:.4}); \
             minorant chain P[below g] = {:.6e}, chain {} (tolerance 1e−9)",
            chain.p,
            if chain_ok { "holds" } else { "VIOLATED" }
        ),
    })
}

// ---------------------------------------------------------------------------
// Quenched wall exponent
// ---------------------------------------------------------------------------

/// One environment's exponent curve in a [`GammaHatReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaEnvCurve {
    /// Environment fingerprint (for reproducibility audits).
    pub fingerprint: u64,
    /// Fitted exponent for this environment (max over the ladder).
    pub gamma_env: f64,
    /// Per-rung `(s, log q(s), −log q(s)/log s)`.
    pub points: Vec<(f64, f64, f64)>,
}

/// Fitted decay exponent of the quenched wall probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaHatReport {
    /// Median of the per-environment exponents.
    pub gamma_estimate: f64,
    /// Per-environment curves.
    pub per_env: Vec<GammaEnvCurve>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// The end window of the wall event at horizon `s` for curve constant
/// `c1`: `[−4(C1−1)√s, −2C1√s]`, sorted into interval order (for C1 = 1
/// this is `[−2√s, 0]`).
fn wall_window(c1: f64, s: f64) -> EndWindow {
    let a = -4.0 * (c1 - 1.0) * s.sqrt();
    let b = -2.0 * c1 * s.sqrt();
    EndWindow::Interval {
        lo: a.min(b),
        hi: a.max(b),
    }
}

fn gamma_hat_with_window(
    env_cfg: &EnvConfig,
    s_ladder: &[f64],
    envs: usize,
    grid: &GridCfg,
    seed: u64,
    window: impl Fn(f64) -> EndWindow + Sync,
) -> Result<GammaHatReport> {
    use rayon::prelude::*;

    if s_ladder.len() < 3 {
        return Err(Error::config("s_ladder needs at least 3 points"));
    }
    if s_ladder.windows(2).any(|w| w[0] >= w[1]) || s_ladder[0] < 2.0 {
        return Err(Error::config(
            "s_ladder must be strictly increasing with entries ≥ 2",
        ));
    }
    if envs == 0 {
        return Err(Error::config("envs must be ≥ 1"));
    }
    let s_max = *s_ladder.last().expect("nonempty ladder");
    let horizon = s_max.ceil() as usize;

    let per_env: Vec<GammaEnvCurve> = (0..envs as u64)
        .into_par_iter()
        .map(|env_idx| -> Result<GammaEnvCurve> {
            let env = sample_environment(env_cfg, horizon, item_seed(seed, env_idx))?;
            let mut points = Vec::with_capacity(s_ladder.len());
            let mut gamma_env = f64::NEG_INFINITY;
            for &s in s_ladder {
                let spec = BarrierSpec {
                    t: s,
                    curve: CurveKind::Zero,
                    drift_slope: 0.0,
                    start_offset: -1.0,
                    end_window: window(s),
                };
                let log_q = barrier_probability_log(&env, &spec, grid)?;
                let exponent = -log_q / s.ln();
                gamma_env = gamma_env.max(exponent);
                points.push((s, log_q, exponent));
            }
            Ok(GammaEnvCurve {
                fingerprint: env.fingerprint(),
                gamma_env,
                points,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut gammas: Vec<f64> = per_env.iter().map(|c| c.gamma_env).collect();
    gammas.sort_unstable_by(f64::total_cmp);
    Ok(GammaHatReport {
        gamma_estimate: median(&gammas),
        per_env,
    })
}

/// Fit the decay exponent of the quenched wall probability
/// `q(s) = P[stay below W from −1 on [0, s], end in [−2√s, 0]]`
/// over an s-ladder: per environment the exponent is
/// `max_s −log q(s)/log s` (the smallest rate that bounds every rung),
/// and the estimate is the median across environments.
pub fn gamma_hat(
    env_cfg: &EnvConfig,
    s_ladder: &[f64],
    envs: usize,
    grid: &GridCfg,
    seed: u64,
) -> Result<GammaHatReport> {
    gamma_hat_with_window(env_cfg, s_ladder, envs, grid, seed, |s| wall_window(1.0, s))
}

// ---------------------------------------------------------------------------
// Start-shift ratios
// ---------------------------------------------------------------------------

/// Start-point monotonicity ratios for barrier probabilities with the
/// initial stretch of the ceiling removed, plus the recorded (not
/// adjudicated) constants-level bound forms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    /// `p(y, y²) / p(x, y²)`: both starts with the ceiling ignored before
    /// time `y²`.
    pub ratio_full: f64,
    /// `p(x, y²) / p(x, 0)`: windowed versus full ceiling at the same
    /// start.
    pub ratio_windowed: f64,
    /// `log p(y, y²)`.
    pub log_p_y_windowed: f64,
    /// `log p(x, y²)`.
    pub log_p_x_windowed: f64,
    /// `log p(x, 0)`.
    pub log_p_x_full: f64,
    /// The structural lower-bound form `e^{−2C1}·e^{−C_log√(log y²)}`
    /// (to be scaled by a suite-calibrated constant when adjudicated).
    pub ratio_floor_form: f64,
    /// Recorded log of the windowed-ratio upper form
    /// `C2^{−1}|y|^{2γ}` (existence-level constants; γ fixed at the
    /// classical ballot exponent for reporting).
    pub log_windowed_upper: f64,
    /// Recorded log of the first term of the start-shift upper form
    /// `C2^{−1}·4^{γ+2}·e^{4C1}·|y|^{2γ+3C3}`.
    pub log_start_shift_upper: f64,
    /// The constants bundle the recorded forms were computed from.
    pub constants: ConstantsReport,
}

/// Compute the start-shift ratios `p(y, y²)/p(x, y²)` and
/// `p(x, y²)/p(x, 0)`, where `p(z, cut)` is the probability of staying
/// below the ceiling from start `z` with the ceiling ignored before time
/// `cut`, ending in `J_{y0}`.
///
/// Contracts adjudicated downstream: the windowed ratio is ≥ 1 (removing
/// an initial constraint enlarges the event) and the full ratio is
/// bounded below by `ratio_floor_form` times a suite-calibrated constant.
/// The upper forms are recorded for context only — their constants are
/// existence-level.
pub fn ratio_start_shift(
    env: &Environment,
    t: f64,
    y: f64,
    x: f64,
    y0: f64,
    h: CurveKind,
    grid: &GridCfg,
) -> Result<RatioReport> {
    if !(y <= x && x <= 0.0) || !(y < 0.0) {
        return Err(Error::range(format!(
            "need y ≤ x ≤ 0 with y < 0 (got y = {y}, x = {x})"
        )));
    }
    if y * y > t {
        return Err(Error::range(format!(
            "free-phase horizon y² = {} exceeds t = {t}",
            y * y
        )));
    }
    let cut = y * y;
    let p = |z: f64, free_until: f64| -> Result<f64> {
        let spec = BarrierSpec {
            t,
            curve: h,
            drift_slope: 0.0,
            start_offset: z,
            end_window: EndWindow::j(y0),
        };
        Ok(barrier_probability_detail(env, &spec, grid, free_until)?.log_p)
    };
    let log_p_y_windowed = p(y, cut)?;
    let log_p_x_windowed = p(x, cut)?;
    let log_p_x_full = p(x, 0.0)?;

    let constants = env_constants(env, t, h, REPORT_LAMBDA, REPORT_GAMMA)?;
    let (c1, c_log, c3) = (constants.c1, constants.c_log, constants.c3);
    // log C2^{−1}, recomputed from its closed form (C2 itself can
    // underflow for rough environments).
    let log_inv_c2 = 128.0
        + 16.0 * c1 * c1
        + 80.0 * c_log * c_log
        + 134.0 * c1
        + 96.0 * c_log
        + 32.0 * c1 * c_log;
    let log_abs_y = y.abs().ln();
    let ratio_floor_form = (-2.0 * c1).exp() * (-c_log * cut.ln().max(0.0).sqrt()).exp();
    let log_windowed_upper = log_inv_c2 + 2.0 * REPORT_GAMMA * log_abs_y;
    let log_start_shift_upper = log_inv_c2
        + (REPORT_GAMMA + 2.0) * 4.0f64.ln()
        + 4.0 * c1
        + (2.0 * REPORT_GAMMA + 3.0 * c3) * log_abs_y;

    Ok(RatioReport {
        ratio_full: (log_p_y_windowed - log_p_x_windowed).exp(),
        ratio_windowed: (log_p_x_windowed - log_p_x_full).exp(),
        log_p_y_windowed,
        log_p_x_windowed,
        log_p_x_full,
        ratio_floor_form,
        log_windowed_upper,
        log_start_shift_upper,
        constants,
    })
}

// ---------------------------------------------------------------------------
// Growth of |log p_n| / log n
// ---------------------------------------------------------------------------

/// Check that `max_envs |log p_n| / log n` stabilizes along the ladder:
/// the running maximum must grow by less than 10% over the last decade
/// (from the first rung ≥ n_max/10 to n_max).
pub fn log_pn_growth_check(
    env_cfg: &EnvConfig,
    n_ladder: &[usize],
    envs: usize,
    grid: &GridCfg,
    seed: u64,
) -> Result<CheckResult> {
    use rayon::prelude::*;

    if n_ladder.len() < 2 || n_ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("n_ladder must be increasing with ≥ 2 rungs"));
    }
    let first = n_ladder[0];
    let last = *n_ladder.last().expect("nonempty ladder");
    if last < first.saturating_mul(100) {
        return Err(Error::config(format!(
            "ladder must span ≥ 2 decades (got {first}..{last})"
        )));
    }
    if envs == 0 {
        return Err(Error::config("envs must be ≥ 1"));
    }

    let per_env: Vec<Vec<f64>> = (0..envs as u64)
        .into_par_iter()
        .map(|env_idx| -> Result<Vec<f64>> {
            let env = sample_environment(env_cfg, last, item_seed(seed, env_idx))?;
            crate::barrier::log_p_n_sequence(&env, n_ladder, SUITE_XI0, grid)
        })
        .collect::<Result<Vec<_>>>()?;

    let ratios: Vec<f64> = (0..n_ladder.len())
        .map(|i| {
            let ln_n = (n_ladder[i] as f64).ln();
            per_env
                .iter()
                .map(|logs| logs[i].abs() / ln_n)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();

    let mut running_max = Vec::with_capacity(ratios.len());
    let mut rm = f64::NEG_INFINITY;
    for &r in &ratios {
        rm = rm.max(r);
        running_max.push(rm);
    }
    let decade_start = n_ladder
        .iter()
        .position(|&n| n as f64 >= last as f64 / 10.0)
        .expect("last rung qualifies");
    let increase = running_max[ratios.len() - 1] / running_max[decade_start] - 1.0;
    let pass = increase < 0.10;

    Ok(CheckResult {
        name: "log_pn_growth".to_owned(),
        pass,
        observed: ratios.clone(),
        bound: vec![0.10],
        stderr: 0.0,
        details: format!(
            "running max of |log p_n|/log n rose {:.2}% from n = {} to n = {last} \
             (tolerance 10%); per-rung ratios {:?}",
            increase * 100.0,
            n_ladder[decade_start],
            ratios
                .iter()
                .map(|r| (r * 1e4).round() / 1e4)
                .collect::<Vec<_>>()
        ),
    })
}
