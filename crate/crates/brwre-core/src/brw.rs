//! The branching random walk itself.
//!
//! Generation k−1 particles each spawn `l_k` children (the environment's
//! branching factor for generation k), children displace independently by
//! standard normals added to the parent position. The module provides:
//!
//! * [`simulate_max`] — the maximum position at generation n, exactly or
//!   with window pruning around the running maximum;
//! * [`count_below_barrier`] — the number of generation-n particles whose
//!   *recentred* path satisfied a barrier event at every integer time;
//! * [`many_to_one_lhs`] / [`many_to_one_rhs`] — both sides of the
//!   many-to-one identity for path functionals of the recentred walk;
//! * [`breach_probability`] — how often any particle's recentred path rises
//!   above a level, for comparison with the `e^{θ*y}` bound.
//!
//! Displacements come from the deterministic per-node transform in
//! [`crate::rng`]: the same (seed, replica) pair always generates the same
//! infinite tree, independently of pruning decisions, window sizes or
//! thread scheduling, so paired-seed comparisons across modes are exact.

use crate::barrier::{BarrierSpec, EndWindow};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::rng::{child_state, node_normal, node_root_state};
use serde::{Deserialize, Serialize};

/// Particle bookkeeping mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BrwMode {
    /// Keep every particle; requires the full population `∏ l_k` to stay
    /// within `max_particles`.
    Exact { max_particles: u64 },
    /// Drop generation-k particles below the prune threshold
    /// `K_k/θ* − window` (the recentring speed minus the window). Maxima
    /// are exact unless the sentinel flags a near-threshold excursion.
    Pruned { window: f64 },
}

/// Simulation parameters for one replica.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BrwConfig {
    /// Number of generations.
    pub n: usize,
    pub mode: BrwMode,
}

/// Diagnostics accompanying a simulated maximum.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BrwDiagnostics {
    /// Largest number of live particles across generations.
    pub peak_population: u64,
    /// Total children generated.
    pub nodes_expanded: u64,
    /// Pruned mode only: true when the generation maximum ever came within
    /// half a window of the prune threshold `K_k/θ* − window`, meaning the
    /// reported maximum may be affected by pruning.
    pub sentinel_dirty: bool,
}

/// A simulated generation-n maximum.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MaxResult {
    pub m_max: f64,
    /// Minimum position in the final generation (over the retained cloud;
    /// exact in Exact mode). By step symmetry `−m_min` is distributed like
    /// `m_max`.
    pub m_min: f64,
    pub diagnostics: BrwDiagnostics,
}

struct Particle {
    position: f64,
    rng_state: u64,
}

fn spawn_all(
    env: &Environment,
    n: usize,
    seed: u64,
    replica: u64,
    mut visit: impl FnMut(usize, Vec<Particle>) -> Result<Vec<Particle>>,
) -> Result<()> {
    let root = Particle {
        position: 0.0,
        rng_state: node_root_state(seed, "brw-tree", replica),
    };
    let mut generation = vec![root];
    for k in 1..=n {
        let l = env.l_at(k)? as usize;
        let mut next = Vec::with_capacity(generation.len() * l);
        for parent in &generation {
            for rank in 0..l as u32 {
                next.push(Particle {
                    position: parent.position + node_normal(parent.rng_state, rank),
                    rng_state: child_state(parent.rng_state, rank),
                });
            }
        }
        generation = visit(k, next)?;
        if generation.is_empty() {
            break;
        }
    }
    Ok(())
}

/// Simulate the generation-n maximum of the branching random walk.
///
/// In pruned mode, generation-k particles below `K_k/θ* − window` are
/// dropped; the sentinel records whether the generation maximum ever came
/// within `window/2` of that threshold (a warning that the reported
/// maximum may be biased by pruning). `n = 0` returns the root at the
/// origin.
pub fn simulate_max(
    env: &Environment,
    cfg: &BrwConfig,
    seed: u64,
    replica: u64,
) -> Result<MaxResult> {
    if cfg.n > env.len() {
        return Err(Error::range(format!(
            "generation count {} outside 0..={}",
            cfg.n,
            env.len()
        )));
    }
    match cfg.mode {
        BrwMode::Exact { max_particles } => {
            let mut pop: u64 = 1;
            for k in 1..=cfg.n {
                pop = pop.saturating_mul(u64::from(env.l_at(k)?));
                if pop > max_particles {
                    return Err(Error::resource(format!(
                        "exact population {pop} exceeds the {max_particles} particle budget by generation {k}"
                    )));
                }
            }
        }
        BrwMode::Pruned { window } => {
            if !(window > 0.0) {
                return Err(Error::config("prune window must be positive"));
            }
        }
    }
    if cfg.n == 0 {
        return Ok(MaxResult {
            m_max: 0.0,
            m_min: 0.0,
            diagnostics: BrwDiagnostics {
                peak_population: 1,
                nodes_expanded: 0,
                sentinel_dirty: false,
            },
        });
    }

    let theta = env.theta_star();
    let mut peak: u64 = 1;
    let mut expanded: u64 = 0;
    let mut dirty = false;
    let mut final_max = f64::NEG_INFINITY;
    let mut final_min = f64::INFINITY;

    let mut generation = vec![Particle {
        position: 0.0,
        rng_state: node_root_state(seed, "brw-tree", replica),
    }];
    let mut next: Vec<Particle> = Vec::new();
    for k in 1..=cfg.n {
        let l = env.l_at(k)? as u32;
        let cutoff = match cfg.mode {
            BrwMode::Exact { .. } => f64::NEG_INFINITY,
            BrwMode::Pruned { window } => env.big_k(k)? / theta - window,
        };
        next.clear();
        next.reserve(generation.len() * l as usize);
        let mut gen_max = f64::NEG_INFINITY;
        let mut gen_min = f64::INFINITY;
        for parent in &generation {
            for rank in 0..l {
                let position = parent.position + node_normal(parent.rng_state, rank);
                expanded += 1;
                gen_max = gen_max.max(position);
                gen_min = gen_min.min(position);
                if position >= cutoff {
                    next.push(Particle {
                        position,
                        rng_state: child_state(parent.rng_state, rank),
                    });
                }
            }
        }
        if let BrwMode::Pruned { window } = cfg.mode {
            if gen_max - cutoff <= window * 0.5 {
                dirty = true;
            }
        }
        final_max = gen_max;
        final_min = gen_min;
        peak = peak.max(next.len() as u64);
        std::mem::swap(&mut generation, &mut next);
        if generation.is_empty() && k < cfg.n {
            // The cutoff line advances at the critical speed, so a pruned
            // population can die out entirely; the maximum at generation n
            // then does not exist in the retained tree and reporting an
            // earlier generation's value would be silently wrong.
            let window = match cfg.mode {
                BrwMode::Pruned { window } => window,
                BrwMode::Exact { .. } => unreachable!("exact populations never shrink"),
            };
            return Err(Error::resource(format!(
                "pruned population died out at generation {k} of {}: every particle fell \
                 below the cutoff (window {window:.3}); rerun with a wider window",
                cfg.n
            )));
        }
    }

    Ok(MaxResult {
        m_max: final_max,
        m_min: final_min,
        diagnostics: BrwDiagnostics {
            peak_population: peak,
            nodes_expanded: expanded,
            sentinel_dirty: dirty,
        },
    })
}

/// Debug override for [`count_below_barrier`]'s ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BarrierOverride {
    /// Use the barrier event as specified.
    None,
    /// Ceiling at +∞: every particle satisfies the path constraint (the end
    /// window still applies unless it is unrestricted).
    AlwaysBelow,
    /// Ceiling at −∞: no particle survives.
    NeverBelow,
}

/// A barrier-event particle count with its pruning caveat.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BarrierCount {
    pub count: u64,
    /// Pruned mode only: true when barrier-surviving particles were
    /// dropped by the prune rule, making `count` a potentially strict
    /// lower bound.
    pub prune_interference: bool,
}

/// Count generation-n particles whose recentred path `V(u_k) − K_k/θ*`
/// stayed at or below the barrier function at every integer time `0..=n`
/// and whose endpoint lies in `spec`'s end window.
///
/// `spec`'s ceiling for the recentred value at integer time k is
/// `−start_offset − curve(k) − drift_slope·k` shifted by the walk
/// recentring; concretely a particle at height `x_k = V(u_k) − K_k/θ*`
/// passes time k iff `start_offset + x_k + curve(k) + drift_slope·k ≤ 0`.
/// Exact mode counts exactly; pruned mode additionally drops particles
/// below `K_k/θ* − window` and flags when that removed a live path.
pub fn count_below_barrier(
    env: &Environment,
    n: usize,
    spec: &BarrierSpec,
    cfg: &BrwConfig,
    overrides: BarrierOverride,
    seed: u64,
    replica: u64,
) -> Result<BarrierCount> {
    spec.validate()?;
    if n == 0 || n > env.len() {
        return Err(Error::range(format!(
            "generation count {n} outside 1..={}",
            env.len()
        )));
    }
    if (spec.t - n as f64).abs() > 1e-9 {
        return Err(Error::config(
            "barrier horizon must equal the generation count",
        ));
    }
    if let BrwMode::Exact { max_particles } = cfg.mode {
        let mut pop: u64 = 1;
        for k in 1..=n {
            pop = pop.saturating_mul(u64::from(env.l_at(k)?));
            if pop > max_particles {
                return Err(Error::resource(format!(
                    "exact population {pop} exceeds the {max_particles} particle budget"
                )));
            }
        }
    }

    let theta = env.theta_star();
    // Passing time k means: start_offset + (position − K_k/θ*) + f(k) ≤ 0.
    let passes = |k: usize, position: f64| -> Result<bool> {
        match overrides {
            BarrierOverride::AlwaysBelow => return Ok(true),
            BarrierOverride::NeverBelow => return Ok(false),
            BarrierOverride::None => {}
        }
        let recentred = position - env.big_k(k)? / theta;
        let f = spec.curve.eval(spec.t, k as f64) + spec.drift_slope * k as f64;
        Ok(spec.start_offset + recentred + f <= 1e-12)
    };

    // The root sits at recentred height 0 with f(0) = 0, so time 0 passes
    // iff start_offset ≤ 0 — already validated.
    if matches!(overrides, BarrierOverride::NeverBelow) {
        return Ok(BarrierCount {
            count: 0,
            prune_interference: false,
        });
    }

    let f_end = spec.curve.eval(spec.t, n as f64) + spec.drift_slope * n as f64;
    let mut survivors: u64 = 0;
    let mut interference = false;
    spawn_all(env, n, seed, replica, |k, mut kept| {
        let mut ok = Ok(());
        kept.retain(|p| match passes(k, p.position) {
            Ok(keep) => keep,
            Err(e) => {
                ok = Err(e);
                false
            }
        });
        ok?;
        // In pruned mode, additionally drop live paths below the prune
        // threshold K_k/θ* − window (making the count a lower bound).
        if let BrwMode::Pruned { window } = cfg.mode {
            let cutoff = env.big_k(k)? / theta - window;
            let before = kept.len();
            kept.retain(|p| p.position >= cutoff);
            if kept.len() < before {
                interference = true;
            }
        }
        if k == n {
            survivors = kept
                .iter()
                .filter(|p| match spec.end_window {
                    EndWindow::Unrestricted => true,
                    EndWindow::Interval { lo, hi } => {
                        // Endpoint condition: y + x_n + f(n) ∈ [lo, hi].
                        let recentred = p.position - env.big_k(n).unwrap_or(0.0) / theta;
                        let rel = spec.start_offset + recentred + f_end;
                        rel >= lo - 1e-12 && rel <= hi + 1e-12
                    }
                })
                .count() as u64;
            kept.clear();
        }
        Ok(kept)
    })?;
    Ok(BarrierCount {
        count: survivors,
        prune_interference: interference,
    })
}

/// Path functionals for the many-to-one identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TestFunctional {
    /// f ≡ c.
    Constant(f64),
    /// f(x₁..xₙ) = exp(θ*·xₙ).
    ExpLastCoord,
    /// Indicator of the barrier event at integer times (with end window).
    BarrierIndicator(BarrierSpec),
    /// Bounded Lipschitz function of the final coordinate:
    /// `height · sigmoid(slope · (xₙ − center))`.
    BoundedLip {
        center: f64,
        slope: f64,
        height: f64,
    },
}

impl TestFunctional {
    /// Evaluate on a recentred path `x_1..x_n` (x_k = position_k − K_k/θ*).
    fn eval(&self, theta: f64, path: &[f64]) -> f64 {
        match self {
            TestFunctional::Constant(c) => *c,
            TestFunctional::ExpLastCoord => (theta * path[path.len() - 1]).exp(),
            TestFunctional::BarrierIndicator(spec) => {
                let t = spec.t;
                for (k, x) in path.iter().enumerate() {
                    let s = (k + 1) as f64;
                    let f = spec.curve.eval(t, s) + spec.drift_slope * s;
                    if spec.start_offset + x + f > 1e-12 {
                        return 0.0;
                    }
                }
                match spec.end_window {
                    EndWindow::Unrestricted => 1.0,
                    EndWindow::Interval { lo, hi } => {
                        // Endpoint condition: y + x_n + f(t) ∈ [lo, hi].
                        let f_end = spec.curve.eval(t, t) + spec.drift_slope * t;
                        let rel = spec.start_offset + path[path.len() - 1] + f_end;
                        f64::from(rel >= lo - 1e-12 && rel <= hi + 1e-12)
                    }
                }
            }
            TestFunctional::BoundedLip {
                center,
                slope,
                height,
            } => {
                let x = path[path.len() - 1];
                height / (1.0 + (-slope * (x - center)).exp())
            }
        }
    }
}

/// Monte-Carlo estimate with standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

fn mean_stderr(samples: &[f64]) -> MomentEstimate {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    MomentEstimate {
        estimate: mean,
        stderr: (var / n).sqrt(),
    }
}

/// Left side of the many-to-one identity: the expected sum over generation-n
/// particles of `f` applied to the recentred ancestral path, estimated over
/// `reps` independent trees (exact enumeration within each tree).
pub fn many_to_one_lhs(
    env: &Environment,
    n: usize,
    f: &TestFunctional,
    reps: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if n == 0 || n > env.len() {
        return Err(Error::range(format!(
            "generation count {n} outside 1..={}",
            env.len()
        )));
    }
    if reps == 0 {
        return Err(Error::config("reps must be ≥ 1"));
    }
    let mut pop: u64 = 1;
    for k in 1..=n {
        pop = pop.saturating_mul(u64::from(env.l_at(k)?));
        if pop > 4_000_000 {
            return Err(Error::resource(format!(
                "many-to-one enumeration would visit {pop}+ particles; reduce n"
            )));
        }
    }

    let theta = env.theta_star();
    let recentre: Vec<f64> = (1..=n).map(|k| env.big_k(k).unwrap() / theta).collect();

    use rayon::prelude::*;
    let totals: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            // Depth-first walk carrying the recentred path; enumeration order
            // does not affect the sum.
            let mut total = 0.0;
            let mut path = vec![0.0; n];
            let mut stack: Vec<(usize, f64, u64, u32)> = Vec::new(); // (depth k−1, pos, state, rank)
            let root_state = node_root_state(seed, "brw-tree", rep as u64);
            stack.push((0, 0.0, root_state, 0));
            while let Some((depth, pos, state, rank)) = stack.pop() {
                let l = env.l_at(depth + 1).unwrap();
                if rank < l {
                    stack.push((depth, pos, state, rank + 1));
                    let child_pos = pos + node_normal(state, rank);
                    path[depth] = child_pos - recentre[depth];
                    if depth + 1 == n {
                        total += f.eval(theta, &path);
                    } else {
                        stack.push((depth + 1, child_pos, child_state(state, rank), 0));
                    }
                }
            }
            total
        })
        .collect();
    Ok(mean_stderr(&totals))
}

/// Right side of the many-to-one identity: `E[e^{−θ*·T_n} f(T_1..T_n)]`
/// where `T_k = S_k − K_k/θ*` for a walk `S` with iid `N(θ*, 1)` increments.
/// In these recentred coordinates the population factor `∏ l_k` is absorbed
/// by the tilt, so this expectation equals [`many_to_one_lhs`] exactly.
pub fn many_to_one_rhs(
    env: &Environment,
    n: usize,
    f: &TestFunctional,
    reps: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if n == 0 || n > env.len() {
        return Err(Error::range(format!(
            "generation count {n} outside 1..={}",
            env.len()
        )));
    }
    if reps == 0 {
        return Err(Error::config("reps must be ≥ 1"));
    }
    let theta = env.theta_star();
    let recentre: Vec<f64> = (1..=n).map(|k| env.big_k(k).unwrap() / theta).collect();

    use rand::Rng;
    use rayon::prelude::*;
    let samples: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = crate::rng::derive_rng(seed, "many-to-one-walk", rep as u64);
            let mut s = 0.0;
            let mut path = vec![0.0; n];
            for (k, slot) in path.iter_mut().enumerate() {
                let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                let u2: f64 = rng.gen();
                let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                s += theta + z;
                *slot = s - recentre[k];
            }
            (-theta * path[n - 1]).exp() * f.eval(theta, &path)
        })
        .collect();
    Ok(mean_stderr(&samples))
}

/// Probability that some particle's recentred path rises above `−y` by
/// generation n — i.e. `∃ u, k ≤ n: V(u_k) + y > K_k/θ*` — estimated over
/// `reps` trees. Bounded above by `e^{θ*y}` for y ≤ 0.
pub fn breach_probability(
    env: &Environment,
    n: usize,
    y: f64,
    cfg: &BrwConfig,
    reps: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if n == 0 || n > env.len() {
        return Err(Error::range(format!(
            "generation count {n} outside 1..={}",
            env.len()
        )));
    }
    if !(y <= 0.0) {
        return Err(Error::config(format!("offset y = {y} must be ≤ 0")));
    }
    if reps == 0 {
        return Err(Error::config("reps must be ≥ 1"));
    }
    match cfg.mode {
        BrwMode::Pruned { window } => {
            if window < y.abs() + 6.0 {
                return Err(Error::config(format!(
                    "prune window {window} too narrow for breach level |y| + 6 = {}",
                    y.abs() + 6.0
                )));
            }
        }
        BrwMode::Exact { max_particles } => {
            let mut pop: u64 = 1;
            for k in 1..=n {
                pop = pop.saturating_mul(u64::from(env.l_at(k)?));
                if pop > max_particles {
                    return Err(Error::resource(format!(
                        "exact population {pop} exceeds the {max_particles} particle budget"
                    )));
                }
            }
        }
    }

    let theta = env.theta_star();
    use rayon::prelude::*;
    let hits: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<f64> {
            let mut breached = false;
            spawn_all(env, n, seed, rep as u64, |k, mut children| {
                let ceiling = env.big_k(k)? / theta - y;
                let gen_max = children
                    .iter()
                    .map(|p| p.position)
                    .fold(f64::NEG_INFINITY, f64::max);
                if gen_max > ceiling {
                    breached = true;
                    return Ok(Vec::new());
                }
                if let BrwMode::Pruned { window } = cfg.mode {
                    let cutoff = env.big_k(k)? / theta - window;
                    children.retain(|p| p.position >= cutoff);
                }
                Ok(children)
            })?;
            Ok(f64::from(breached))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_stderr(&hits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::CurveKind;
    use crate::env::{sample_environment, EnvConfig, OffspringLaw};

    fn det2_env(n: usize) -> Environment {
        let cfg = EnvConfig::new(OffspringLaw::Deterministic(2)).unwrap();
        sample_environment(&cfg, n, 0).unwrap()
    }

    #[test]
    fn exact_and_pruned_agree_on_clean_runs() {
        let env = det2_env(10);
        let mut identical = 0u32;
        let total = 1_000u32;
        for replica in 0..u64::from(total) {
            let exact = simulate_max(
                &env,
                &BrwConfig {
                    n: 10,
                    mode: BrwMode::Exact {
                        max_particles: 1 << 11,
                    },
                },
                7,
                replica,
            )
            .unwrap();
            let pruned = simulate_max(
                &env,
                &BrwConfig {
                    n: 10,
                    mode: BrwMode::Pruned { window: 8.0 },
                },
                7,
                replica,
            )
            .unwrap();
            if !pruned.diagnostics.sentinel_dirty {
                assert_eq!(exact.m_max, pruned.m_max, "clean replica {replica}");
            }
            // Pruning can only lose maxima.
            assert!(pruned.m_max <= exact.m_max + 1e-12);
            if exact.m_max == pruned.m_max {
                identical += 1;
            }
        }
        // Paired-seed oracle: the window-8 pruned run reproduces the exact
        // maximum on at least 99% of replicas.
        assert!(
            identical >= total * 99 / 100,
            "only {identical}/{total} replicas identical"
        );
    }

    #[test]
    fn pruned_extinction_is_an_error_not_a_stale_maximum() {
        // A two-unit window puts the cutoff above the population bulk by
        // generation four or five; every replica's retained tree dies long
        // before generation 40 and must surface as a resource error naming
        // the extinction generation, never as an earlier generation's value.
        let env = det2_env(40);
        let cfg = BrwConfig {
            n: 40,
            mode: BrwMode::Pruned { window: 2.0 },
        };
        let mut died = 0u32;
        for replica in 0..20u64 {
            match simulate_max(&env, &cfg, 11, replica) {
                Err(Error::Resource(msg)) => {
                    assert!(msg.contains("died out at generation"), "message: {msg}");
                    died += 1;
                }
                Ok(result) => panic!(
                    "replica {replica} survived a 2-unit window to n = 40 \
                     with maximum {}",
                    result.m_max
                ),
                Err(other) => panic!("unexpected error kind: {other}"),
            }
        }
        assert_eq!(died, 20);
    }

    #[test]
    fn zero_generations_returns_origin() {
        let env = det2_env(4);
        let cfg = BrwConfig {
            n: 0,
            mode: BrwMode::Exact { max_particles: 1 },
        };
        let r = simulate_max(&env, &cfg, 9, 0).unwrap();
        assert_eq!(r.m_max, 0.0);
        assert_eq!(r.m_min, 0.0);
        assert_eq!(r.diagnostics.nodes_expanded, 0);
    }

    #[test]
    fn exact_mean_lies_in_speed_band() {
        // Mean of M_10 over 10⁴ replicas sits between the recentring speed
        // minus three log-corrections and the speed itself.
        let env = det2_env(10);
        let cfg = BrwConfig {
            n: 10,
            mode: BrwMode::Exact {
                max_particles: 1 << 11,
            },
        };
        use rayon::prelude::*;
        let reps = 10_000u64;
        let sum: f64 = (0..reps)
            .into_par_iter()
            .map(|replica| simulate_max(&env, &cfg, 13, replica).unwrap().m_max)
            .sum();
        let mean = sum / reps as f64;
        let theta = env.theta_star();
        let speed = env.big_k(10).unwrap() / theta;
        let lo = speed - 3.0 * (10.0f64).ln() / theta;
        assert!(
            mean >= lo && mean <= speed,
            "mean {mean} outside [{lo}, {speed}]"
        );
    }

    #[test]
    fn min_position_mirrors_max_position() {
        // Step symmetry: −min over generation-n particles has the law of
        // the maximum. Two independent samples, two-sample KS statistic
        // below the 1% critical value.
        let env = det2_env(8);
        let cfg = BrwConfig {
            n: 8,
            mode: BrwMode::Exact {
                max_particles: 1 << 9,
            },
        };
        let m = 300usize;
        let mut maxima: Vec<f64> = (0..m as u64)
            .map(|r| simulate_max(&env, &cfg, 101, r).unwrap().m_max)
            .collect();
        let mut neg_minima: Vec<f64> = (0..m as u64)
            .map(|r| -simulate_max(&env, &cfg, 202, r).unwrap().m_min)
            .collect();
        maxima.sort_by(f64::total_cmp);
        neg_minima.sort_by(f64::total_cmp);
        let mut d: f64 = 0.0;
        let (mut i, mut j) = (0usize, 0usize);
        while i < m && j < m {
            if maxima[i] <= neg_minima[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / m as f64 - j as f64 / m as f64).abs());
        }
        // 1% critical value: 1.628·√((m+m)/(m·m)).
        let crit = 1.628 * (2.0 / m as f64).sqrt();
        assert!(d < crit, "KS statistic {d} ≥ critical {crit}");
    }

    #[test]
    fn same_seed_same_tree_different_seed_different_tree() {
        let env = det2_env(8);
        let cfg = BrwConfig {
            n: 8,
            mode: BrwMode::Exact {
                max_particles: 1 << 9,
            },
        };
        let a = simulate_max(&env, &cfg, 1, 0).unwrap();
        let b = simulate_max(&env, &cfg, 1, 0).unwrap();
        let c = simulate_max(&env, &cfg, 2, 0).unwrap();
        let d = simulate_max(&env, &cfg, 1, 1).unwrap();
        assert_eq!(a.m_max, b.m_max);
        assert_ne!(a.m_max, c.m_max);
        assert_ne!(a.m_max, d.m_max);
    }

    #[test]
    fn exact_mode_enforces_population_budget() {
        let env = det2_env(40);
        let cfg = BrwConfig {
            n: 40,
            mode: BrwMode::Exact {
                max_particles: 1 << 20,
            },
        };
        assert!(matches!(
            simulate_max(&env, &cfg, 0, 0),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn count_overrides_give_product_and_zero() {
        let env = det2_env(6);
        let spec = BarrierSpec {
            t: 6.0,
            curve: CurveKind::Zero,
            drift_slope: 0.0,
            start_offset: -1.0,
            end_window: EndWindow::Unrestricted,
        };
        let cfg = BrwConfig {
            n: 6,
            mode: BrwMode::Exact {
                max_particles: 1 << 7,
            },
        };
        let all =
            count_below_barrier(&env, 6, &spec, &cfg, BarrierOverride::AlwaysBelow, 3, 0).unwrap();
        assert_eq!(all.count, 64); // ∏ l_k = 2⁶
        assert!(!all.prune_interference);
        let none =
            count_below_barrier(&env, 6, &spec, &cfg, BarrierOverride::NeverBelow, 3, 0).unwrap();
        assert_eq!(none.count, 0);
    }

    #[test]
    fn count_is_between_zero_and_population() {
        let cfg_env = EnvConfig::new(OffspringLaw::UniformInt(2, 3)).unwrap();
        let env = sample_environment(&cfg_env, 8, 5).unwrap();
        let pop: u64 = (1..=8).map(|k| u64::from(env.l_at(k).unwrap())).product();
        let spec = BarrierSpec {
            t: 8.0,
            curve: CurveKind::Zero,
            drift_slope: 0.0,
            start_offset: -2.0,
            end_window: EndWindow::j(-2.0),
        };
        let cfg = BrwConfig {
            n: 8,
            mode: BrwMode::Exact {
                max_particles: 1 << 14,
            },
        };
        for replica in 0..5 {
            let z = count_below_barrier(&env, 8, &spec, &cfg, BarrierOverride::None, 11, replica)
                .unwrap();
            assert!(z.count <= pop);
        }
    }

    #[test]
    fn pruned_count_is_lower_bound() {
        let env = det2_env(9);
        let spec = BarrierSpec {
            t: 9.0,
            curve: CurveKind::Zero,
            drift_slope: 0.0,
            start_offset: -3.0,
            end_window: EndWindow::Unrestricted,
        };
        let exact_cfg = BrwConfig {
            n: 9,
            mode: BrwMode::Exact {
                max_particles: 1 << 10,
            },
        };
        let pruned_cfg = BrwConfig {
            n: 9,
            mode: BrwMode::Pruned { window: 4.0 },
        };
        for replica in 0..10 {
            let ze = count_below_barrier(
                &env,
                9,
                &spec,
                &exact_cfg,
                BarrierOverride::None,
                21,
                replica,
            )
            .unwrap();
            let zp = count_below_barrier(
                &env,
                9,
                &spec,
                &pruned_cfg,
                BarrierOverride::None,
                21,
                replica,
            )
            .unwrap();
            assert!(
                zp.count <= ze.count,
                "replica {replica}: pruned {} > exact {}",
                zp.count,
                ze.count
            );
        }
    }

    #[test]
    fn many_to_one_constant_is_population_with_zero_variance() {
        let env = det2_env(6);
        let lhs = many_to_one_lhs(&env, 6, &TestFunctional::Constant(1.0), 5, 17).unwrap();
        assert!((lhs.estimate - 64.0).abs() < 1e-9);
        assert!(lhs.stderr < 1e-12);
    }

    #[test]
    fn many_to_one_exp_last_coordinate_rhs_is_exactly_one() {
        // e^{−θ*T_n}·e^{θ*T_n} ≡ 1 path by path.
        let env = det2_env(5);
        let rhs = many_to_one_rhs(&env, 5, &TestFunctional::ExpLastCoord, 200, 23).unwrap();
        assert!((rhs.estimate - 1.0).abs() < 1e-12);
        assert!(rhs.stderr < 1e-12);
    }

    #[test]
    fn many_to_one_sides_agree_for_bounded_functional() {
        let env = det2_env(6);
        let f = TestFunctional::BoundedLip {
            center: -2.0,
            slope: 1.0,
            height: 1.0,
        };
        let lhs = many_to_one_lhs(&env, 6, &f, 400, 31).unwrap();
        let rhs = many_to_one_rhs(&env, 6, &f, 40_000, 37).unwrap();
        // In recentred coordinates the population factor is absorbed:
        // E[Σ_leaves f] = E[e^{−θ*T_n} f(T₁..Tₙ)] exactly.
        let diff = (lhs.estimate - rhs.estimate).abs();
        let se = (lhs.stderr.powi(2) + rhs.stderr.powi(2)).sqrt();
        assert!(
            diff <= 4.0 * se + 1e-3,
            "lhs {} vs rhs {} (se {se})",
            lhs.estimate,
            rhs.estimate
        );
    }

    #[test]
    fn breach_probability_respects_exponential_bound() {
        let env = det2_env(8);
        let cfg = BrwConfig {
            n: 8,
            mode: BrwMode::Exact {
                max_particles: 1 << 9,
            },
        };
        for y in [-1.0, -2.0] {
            let est = breach_probability(&env, 8, y, &cfg, 2_000, 41).unwrap();
            let bound = (env.theta_star() * y).exp();
            assert!(
                est.estimate <= bound + 3.0 * est.stderr,
                "y={y}: {} > {bound} + 3·{}",
                est.estimate,
                est.stderr
            );
        }
    }

    #[test]
    fn breach_rejects_narrow_prune_window() {
        let env = det2_env(8);
        let cfg = BrwConfig {
            n: 8,
            mode: BrwMode::Pruned { window: 5.0 },
        };
        assert!(breach_probability(&env, 8, -1.0, &cfg, 10, 1).is_err());
    }
}
