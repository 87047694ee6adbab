//! Barrier-crossing probabilities for the tilted walk below environment
//! barriers.
//!
//! The central object is the probability that the Gaussian process
//! `T_s = B_s − W_s` (standard Brownian motion minus the environment's
//! piecewise-linear recentred path), started at offset `y ≤ 0`, satisfies
//!
//! ```text
//!   y + T_s + f(s) ≤ 0   for all s in [0, t],
//!   y + T_t + f(t) ∈ J,
//! ```
//!
//! where `f = curve + drift_slope·s` and `J` is a window at-or-below the
//! barrier. Equivalently, the Brownian path `P_s = y + B_s` must stay below
//! the absolute ceiling `β(s) = W_s − curve(s) − drift_slope·s` and end in
//! `J + β(t)`.
//!
//! Two independent evaluators are provided:
//!
//! * a deterministic **killed-density engine**: the sub-probability law of
//!   the surviving path is propagated on a fixed lattice; each piece of the
//!   (piecewise-linear) ceiling contributes an exact killed transition
//!   kernel `φ_σ(x→x′)·(1 − e^{−2ab/dt})`, evaluated as one Toeplitz
//!   convolution plus a banded image-term correction via the reflection
//!   identity `φ((b−a−μ)/σ)e^{−2ab/dt} = φ((a+b−μ)/σ)e^{−2μa/dt}`.
//!   Mass is renormalized every step with the log accumulated, so results
//!   are available in log space without underflow.
//!
//! * a **Monte-Carlo oracle**: per-piece endpoint sampling with a
//!   bridge-kill Bernoulli per piece, which is exact (up to sampling error)
//!   for linear ceiling pieces.

use crate::curve::CurveKind;
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::gauss::phi;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Mutex;

/// End-of-horizon constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EndWindow {
    /// Terminal value (relative to the ceiling) must lie in `[lo, hi]`,
    /// with `hi ≤ 0`.
    Interval { lo: f64, hi: f64 },
    /// No terminal constraint (diagnostic / ballot-style events).
    Unrestricted,
}

impl EndWindow {
    /// The unit window `J_x = [x−1, x]`.
    pub fn j(x: f64) -> Self {
        EndWindow::Interval { lo: x - 1.0, hi: x }
    }

    fn validate(&self) -> Result<()> {
        if let EndWindow::Interval { lo, hi } = self {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::config("end window must be finite"));
            }
            if lo >= hi {
                return Err(Error::config(format!("end window [{lo}, {hi}] is empty")));
            }
            if *hi > 0.0 {
                return Err(Error::config(format!(
                    "end window top {hi} must be ≤ 0 (at or below the barrier)"
                )));
            }
        }
        Ok(())
    }
}

/// A barrier event specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    /// Horizon t > 0.
    pub t: f64,
    /// Curve part of the barrier function.
    pub curve: CurveKind,
    /// Coefficient of the linear term added to the barrier function
    /// (`f(s) = curve(s) + drift_slope·s`); for the log-correction tilt this
    /// is `−log(p_t)/(t·θ*) ≥ 0`.
    pub drift_slope: f64,
    /// Start offset y ≤ 0.
    pub start_offset: f64,
    /// Terminal window, relative to the barrier.
    pub end_window: EndWindow,
}

impl BarrierSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(Error::config(format!("horizon t = {} must be > 0", self.t)));
        }
        if !(self.start_offset <= 0.0) {
            return Err(Error::config(format!(
                "start offset {} must be ≤ 0",
                self.start_offset
            )));
        }
        if !self.drift_slope.is_finite() {
            return Err(Error::config("drift slope must be finite"));
        }
        self.end_window.validate()
    }

    /// The absolute ceiling `β(s) = W_s − curve(s) − drift_slope·s`.
    fn beta(&self, env: &Environment, s: f64) -> Result<f64> {
        Ok(env.w_at(s)? - self.curve.eval(self.t, s) - self.drift_slope * s)
    }
}

/// Grid depth selection for the density engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum XSpan {
    /// Depth `12·√t + |y| + 6` below the lowest ceiling value (widened
    /// automatically if boundary mass appears).
    Auto,
    /// Explicit depth below the lowest ceiling value.
    Fixed(f64),
}

/// Discretization parameters for the density engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCfg {
    /// Cell width; must resolve at least 10 cells per unit-time standard
    /// deviation (dx ≤ 0.1).
    pub dx: f64,
    /// Grid depth policy.
    pub x_span: XSpan,
    /// Number of propagation pieces per unit time interval (> 1 refines the
    /// within-interval chord linearization of curved barriers).
    pub substeps: u32,
}

impl Default for GridCfg {
    fn default() -> Self {
        GridCfg {
            dx: 0.02,
            x_span: XSpan::Auto,
            substeps: 1,
        }
    }
}

impl GridCfg {
    pub fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0) || self.dx > 0.1 {
            return Err(Error::config(format!(
                "grid dx = {} must be in (0, 0.1] (≥ 10 cells per unit σ)",
                self.dx
            )));
        }
        if self.substeps == 0 {
            return Err(Error::config("substeps must be ≥ 1"));
        }
        if let XSpan::Fixed(d) = self.x_span {
            if !(d > 1.0) {
                return Err(Error::config(format!("fixed span {d} too small")));
            }
        }
        Ok(())
    }

    /// Stable key for caches.
    pub fn key(&self) -> u64 {
        let span_bits = match self.x_span {
            XSpan::Auto => 0u64,
            XSpan::Fixed(d) => d.to_bits() | 1,
        };
        crate::rng::mix64(
            self.dx.to_bits() ^ span_bits.rotate_left(17) ^ u64::from(self.substeps) << 3,
        )
    }
}

/// Probability (and its log) produced by the density engine.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EngineOutcome {
    pub p: f64,
    pub log_p: f64,
}

/// Monte-Carlo estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// Probability that a Brownian bridge with endpoints `a, b` (relative to the
/// barrier) and variance parameter `sigma2` over its interval stays strictly
/// below the barrier: `1 − exp(−2ab/σ²)` for `a, b < 0`, else 0.
pub fn bridge_below_zero_prob(a: f64, b: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::Numeric(format!(
            "bridge variance must be positive, got {sigma2}"
        )));
    }
    if a < 0.0 && b < 0.0 {
        Ok(1.0 - (-2.0 * a * b / sigma2).exp())
    } else {
        Ok(0.0)
    }
}

// ---------------------------------------------------------------------------
// Density grid and the reference single-step propagator
// ---------------------------------------------------------------------------

/// Discretized sub-probability density of the killed process.
///
/// Cell `i` is centered at `x_max − (i + 1/2)·dx` and carries a mass (not a
/// density value); the support is at or below the current barrier level.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    x_max: f64,
    dx: f64,
    weights: Vec<f64>,
}

impl DensityGrid {
    /// Build from raw cell masses (index 0 is the top cell).
    pub fn from_weights(x_max: f64, dx: f64, weights: Vec<f64>) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::config("dx must be positive"));
        }
        if weights.is_empty() {
            return Err(Error::state("empty density grid"));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::state("grid weights must be nonnegative and finite"));
        }
        let g = DensityGrid { x_max, dx, weights };
        if g.mass() > 1.0 + 1e-9 {
            return Err(Error::state(format!("grid mass {} exceeds 1", g.mass())));
        }
        Ok(g)
    }

    /// A single point mass of weight 1, represented in the cell containing
    /// `y` of a grid reaching `depth` below `x_max`.
    pub fn point_mass(y: f64, x_max: f64, dx: f64, depth: f64) -> Result<Self> {
        if y > x_max {
            return Err(Error::config(format!("point {y} above grid top {x_max}")));
        }
        let n = (depth / dx).ceil() as usize;
        let mut weights = vec![0.0; n.max(1)];
        let idx = (((x_max - y) / dx - 0.5).round().max(0.0) as usize).min(n.saturating_sub(1));
        weights[idx] = 1.0;
        DensityGrid::from_weights(x_max, dx, weights)
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn x_min(&self) -> f64 {
        self.x_max - self.dx * self.weights.len() as f64
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        self.x_max - (i as f64 + 0.5) * self.dx
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// One unit-time killed transition applied to a density grid.
///
/// The input density (below a barrier at absolute level `barrier_now`) is
/// convolved with a unit-variance Gaussian of mean `drift`, each
/// source/target pair weighted by the bridge survival factor
/// `1 − exp(−2ab)` with `a = x_start − barrier_now`, `b = x_end −
/// barrier_next` (the barrier is linear on the interval), and the result is
/// truncated to values ≤ `barrier_next`. Total mass never increases.
///
/// Infinite barrier levels disable the killing entirely (debug mode for
/// mass-conservation checks).
pub fn propagate_step(
    grid: &DensityGrid,
    drift: f64,
    barrier_now: f64,
    barrier_next: f64,
) -> Result<DensityGrid> {
    if grid.weights.is_empty() {
        return Err(Error::state("empty density grid"));
    }
    let dx = grid.dx;
    let unrestricted = barrier_now.is_infinite() || barrier_next.is_infinite();

    // Output lattice: anchored at the next barrier level when there is one,
    // otherwise extended upward to catch the diffused mass.
    let out_top = if unrestricted {
        grid.x_max + drift.max(0.0) + 9.0
    } else {
        barrier_next
    };
    let depth = (out_top - grid.x_min()) + drift.abs() + 9.0;
    let n_out = (depth / dx).ceil() as usize;
    let mut out = vec![0.0; n_out];

    for (i, w) in grid.weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let xs = grid.cell_center(i);
        if !unrestricted && xs > barrier_now {
            continue; // above the barrier: already dead
        }
        for (j, o) in out.iter_mut().enumerate() {
            let xe = out_top - (j as f64 + 0.5) * dx;
            let gap = xe - xs - drift;
            if gap.abs() > 9.0 {
                continue;
            }
            let mut k = phi(gap) * dx;
            if !unrestricted {
                if xe > barrier_next {
                    continue;
                }
                let a = xs - barrier_now;
                let b = xe - barrier_next;
                k *= 1.0 - (-2.0 * a * b).exp();
            }
            *o += w * k.max(0.0);
        }
    }
    DensityGrid::from_weights(out_top, dx, out)
}

// ---------------------------------------------------------------------------
// Fast multi-step engine
// ---------------------------------------------------------------------------

/// One propagation piece: the ceiling is linear from `(s0, beta0)` to
/// `(s1, beta1)`; `killed` is false during a free phase (barrier dropped).
#[derive(Debug, Clone, Copy)]
struct Piece {
    s0: f64,
    s1: f64,
    beta0: f64,
    beta1: f64,
    killed: bool,
}

/// Build the piece schedule for a ceiling function sampled at `beta`:
/// unit intervals split into `substeps`, with `extra_times` (snapshots,
/// polyline breakpoints, free/killed transition) inserted exactly.
fn build_pieces(
    beta: &dyn Fn(f64) -> Result<f64>,
    t: f64,
    substeps: u32,
    free_until: f64,
    extra_times: &[f64],
) -> Result<Vec<Piece>> {
    let mut times: Vec<f64> = Vec::new();
    let step = 1.0 / f64::from(substeps);
    let mut s = 0.0;
    while s < t - 1e-12 {
        times.push(s);
        s += step;
    }
    times.push(t);
    for &e in extra_times {
        if e > 1e-12 && e < t - 1e-12 {
            times.push(e);
        }
    }
    if free_until > 1e-12 && free_until < t - 1e-12 {
        times.push(free_until);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    let mut pieces = Vec::with_capacity(times.len() - 1);
    for w in times.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        pieces.push(Piece {
            s0,
            s1,
            beta0: beta(s0)?,
            beta1: beta(s1)?,
            killed: s0 >= free_until - 1e-12,
        });
    }
    Ok(pieces)
}

/// Fraction of a cell `[c − dx/2, c + dx/2]` overlapping `[lo, hi]`.
#[inline]
fn cell_overlap(c: f64, dx: f64, lo: f64, hi: f64) -> f64 {
    let a = (c - 0.5 * dx).max(lo);
    let b = (c + 0.5 * dx).min(hi);
    ((b - a) / dx).clamp(0.0, 1.0)
}

struct EngineState {
    x_top: f64,
    dx: f64,
    cur: Vec<f64>,
    nxt: Vec<f64>,
    log_acc: f64,
    /// Largest boundary-cell mass fraction seen (grid-width diagnostic).
    boundary_peak: f64,
}

impl EngineState {
    fn window_log_mass(&self, window: &EndWindow, beta_t: f64) -> f64 {
        match window {
            EndWindow::Unrestricted => {
                let m: f64 = self.cur.iter().sum();
                m.ln()
            }
            EndWindow::Interval { lo, hi } => {
                let (alo, ahi) = (lo + beta_t, hi + beta_t);
                let mut m = 0.0;
                // Only cells meeting the window can contribute.
                let j0 = (((self.x_top - ahi) / self.dx) - 1.0).floor().max(0.0) as usize;
                let j1 =
                    ((((self.x_top - alo) / self.dx) + 1.0).ceil() as usize).min(self.cur.len());
                for j in j0..j1 {
                    let c = self.x_top - (j as f64 + 0.5) * self.dx;
                    m += self.cur[j] * cell_overlap(c, self.dx, alo, ahi);
                }
                m.ln()
            }
        }
    }
}

/// Result of a full engine run: outcomes at the requested snapshot times
/// (in the given order) and at the final horizon.
struct EngineRun {
    snapshots: Vec<EngineOutcome>,
    final_outcome: EngineOutcome,
}

fn outcome(log_p: f64) -> EngineOutcome {
    EngineOutcome {
        p: log_p.exp(),
        log_p,
    }
}

/// Run the killed-density propagation for a piecewise-linear ceiling.
///
/// `snap_times` must be piece boundaries (they are inserted into the
/// schedule); each snapshot evaluates the same `window` relative to the
/// ceiling at that time.
fn run_engine(
    beta: &dyn Fn(f64) -> Result<f64>,
    t: f64,
    y: f64,
    window: &EndWindow,
    grid: &GridCfg,
    free_until: f64,
    snap_times: &[f64],
    extra_times: &[f64],
) -> Result<EngineRun> {
    grid.validate()?;
    let mut all_extra: Vec<f64> = extra_times.to_vec();
    all_extra.extend_from_slice(snap_times);
    let pieces = build_pieces(beta, t, grid.substeps, free_until, &all_extra)?;

    let beta_min = pieces
        .iter()
        .flat_map(|p| [p.beta0, p.beta1])
        .fold(f64::INFINITY, f64::min);
    let beta_max = pieces
        .iter()
        .flat_map(|p| [p.beta0, p.beta1])
        .fold(f64::NEG_INFINITY, f64::max);

    let base_depth = match grid.x_span {
        XSpan::Auto => 12.0 * t.sqrt() + y.abs() + 6.0,
        XSpan::Fixed(d) => d,
    };
    // During a free phase mass may travel above the ceiling.
    let base_up = if free_until > 0.0 {
        (y + 12.0 * free_until.sqrt() - beta_max).max(0.0) + 2.0
    } else {
        0.0
    };

    let mut widen = 1.0;
    for _attempt in 0..4 {
        match run_engine_sized(
            &pieces,
            y,
            window,
            grid,
            snap_times,
            beta_min - base_depth * widen,
            beta_max + base_up * widen.min(2.0),
        )? {
            Some(run) => return Ok(run),
            None => widen *= 1.5,
        }
    }
    Err(Error::Numeric(
        "grid widening failed to contain the density (boundary mass persisted)".into(),
    ))
}

/// One sized attempt. Returns `None` if boundary mass exceeded the widening
/// threshold (caller retries with a wider grid).
fn run_engine_sized(
    pieces: &[Piece],
    y: f64,
    window: &EndWindow,
    grid: &GridCfg,
    snap_times: &[f64],
    x_bottom: f64,
    x_top: f64,
) -> Result<Option<EngineRun>> {
    let dx = grid.dx;
    let n = ((x_top - x_bottom) / dx).ceil() as usize;
    if n < 4 {
        return Err(Error::config("grid span too small"));
    }
    if n > 40_000_000 {
        return Err(Error::resource(format!("grid of {n} cells refused")));
    }
    let mut st = EngineState {
        x_top,
        dx,
        cur: vec![0.0; n],
        nxt: vec![0.0; n],
        log_acc: 0.0,
        boundary_peak: 0.0,
    };

    // Kernel tables per distinct piece duration.
    let mut kernels: Vec<(u64, Vec<f64>, usize)> = Vec::new(); // (dt bits, taps, half-width)

    let mut snaps: Vec<Option<EngineOutcome>> = vec![None; snap_times.len()];

    let first_beta0 = pieces.first().map_or(0.0, |p| p.beta0);
    if pieces.first().map_or(true, |p| p.killed) && y >= first_beta0 {
        // Starting at (or above) the barrier: survival probability is zero.
        let log_p = f64::NEG_INFINITY;
        return Ok(Some(EngineRun {
            snapshots: vec![outcome(log_p); snap_times.len()],
            final_outcome: outcome(log_p),
        }));
    }

    let mut first = true;
    for piece in pieces {
        let dt = piece.s1 - piece.s0;
        if dt <= 0.0 {
            continue;
        }
        let sigma = dt.sqrt();

        if first {
            // Analytic fill from the point source.
            let a = y - piece.beta0;
            for (j, o) in st.cur.iter_mut().enumerate() {
                let xe = x_top - (j as f64 + 0.5) * dx;
                let main = (xe - y) / sigma;
                if main.abs() > 9.0 {
                    continue;
                }
                let mut v = phi(main) / sigma * dx;
                if piece.killed {
                    if xe > piece.beta1 {
                        continue;
                    }
                    let b = xe - piece.beta1;
                    v *= 1.0 - (-2.0 * a * b / dt).exp();
                }
                *o = v.max(0.0);
            }
            first = false;
        } else {
            // Toeplitz part: lattice is fixed, so the main kernel depends
            // only on dt.
            let bits = dt.to_bits();
            let ki = match kernels.iter().position(|(b, _, _)| *b == bits) {
                Some(i) => i,
                None => {
                    let half = (9.0 * sigma / dx).ceil() as usize;
                    let taps: Vec<f64> = (-(half as isize)..=half as isize)
                        .map(|m| phi(m as f64 * dx / sigma) / sigma * dx)
                        .collect();
                    kernels.push((bits, taps, half));
                    kernels.len() - 1
                }
            };
            let (_, taps, half) = &kernels[ki];
            let half = *half;

            if piece.killed {
                // The previous piece may have been free: mass above the
                // ceiling is dead before this piece starts.
                for (i, v) in st.cur.iter_mut().enumerate() {
                    if x_top - (i as f64 + 0.5) * dx > piece.beta0 {
                        *v = 0.0;
                    } else {
                        break;
                    }
                }
            }

            st.nxt.iter_mut().for_each(|v| *v = 0.0);
            for (mi, kv) in taps.iter().enumerate() {
                if *kv == 0.0 {
                    continue;
                }
                let m = mi as isize - half as isize; // source index offset: i = j + m
                let j_lo = (-m).max(0) as usize;
                let j_hi = (n as isize).min(n as isize - m).max(0) as usize;
                let (src, dst) = (&st.cur, &mut st.nxt);
                for j in j_lo..j_hi {
                    dst[j] += kv * src[(j as isize + m) as usize];
                }
            }

            if piece.killed {
                // Image-term correction, restricted to the band near the
                // ceiling where it is nonzero.
                let mu = -(piece.beta1 - piece.beta0); // relative drift of the ceiling
                let band = ((9.0 * sigma + mu.abs()) / dx).ceil() as usize + 2;
                let i_top = (((x_top - piece.beta0) / dx) - 0.5).ceil().max(0.0) as usize;
                let j_top = (((x_top - piece.beta1) / dx) - 0.5).ceil().max(0.0) as usize;
                let i_end = (i_top + band).min(n);
                let j_end = (j_top + band).min(n);

                // Hankel table over q = i + j.
                let q_lo = i_top + j_top;
                let q_hi = (i_end + j_end).max(q_lo + 1);
                let table: Vec<f64> = (q_lo..q_hi)
                    .map(|q| {
                        // a + b = (x_i − β0) + (x_j − β1)
                        let sum_ab =
                            2.0 * x_top - (q as f64 + 1.0) * dx - piece.beta0 - piece.beta1;
                        let arg = (sum_ab - mu) / sigma;
                        if arg.abs() > 9.0 {
                            0.0
                        } else {
                            phi(arg) / sigma * dx
                        }
                    })
                    .collect();

                for i in i_top..i_end {
                    let w = st.cur[i];
                    if w == 0.0 {
                        continue;
                    }
                    let a = (x_top - (i as f64 + 0.5) * dx) - piece.beta0;
                    let g = w * (-2.0 * mu * a / dt).exp();
                    for j in j_top..j_end {
                        let q = i + j;
                        if q >= q_lo && q < q_hi {
                            st.nxt[j] -= g * table[q - q_lo];
                        }
                    }
                }

                // Truncate above the new ceiling and clip tiny negative
                // residues from the discretized image term.
                for (j, v) in st.nxt.iter_mut().enumerate() {
                    let xe = x_top - (j as f64 + 0.5) * dx;
                    if xe > piece.beta1 || *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            std::mem::swap(&mut st.cur, &mut st.nxt);
        }

        // Renormalize, accumulating the log mass.
        let total: f64 = st.cur.iter().sum();
        if !(total > 0.0) {
            return Ok(Some(EngineRun {
                snapshots: vec![outcome(f64::NEG_INFINITY); snap_times.len()],
                final_outcome: outcome(f64::NEG_INFINITY),
            }));
        }
        // The bottom edge must never hold mass; the top edge only matters
        // while the ceiling is down (density vanishes at an active ceiling,
        // so the top cell legitimately carries O(dx²) mass there).
        let bottom_frac = st.cur[n - 1] / total;
        st.boundary_peak = st.boundary_peak.max(bottom_frac);
        if !piece.killed {
            st.boundary_peak = st.boundary_peak.max(st.cur[0] / total);
        }
        if st.boundary_peak > 1e-10 {
            return Ok(None); // widen and retry
        }
        st.log_acc += total.ln();
        let inv = 1.0 / total;
        st.cur.iter_mut().for_each(|v| *v *= inv);

        // Snapshot at this boundary?
        for (si, &ts) in snap_times.iter().enumerate() {
            if (ts - piece.s1).abs() < 1e-9 && snaps[si].is_none() {
                let lp = st.log_acc + st.window_log_mass(window, piece.beta1);
                snaps[si] = Some(outcome(lp));
            }
        }
    }

    let last_beta = pieces.last().map(|p| p.beta1).unwrap_or(0.0);
    let final_log = st.log_acc + st.window_log_mass(window, last_beta);
    let snapshots = snaps
        .into_iter()
        .map(|o| o.unwrap_or(outcome(f64::NEG_INFINITY)))
        .collect();
    Ok(Some(EngineRun {
        snapshots,
        final_outcome: outcome(final_log),
    }))
}

// ---------------------------------------------------------------------------
// Public engine entry points
// ---------------------------------------------------------------------------

fn check_spec_env(env: &Environment, spec: &BarrierSpec) -> Result<()> {
    spec.validate()?;
    if spec.t > env.len() as f64 + 1e-12 {
        return Err(Error::range(format!(
            "horizon {} exceeds environment length {}",
            spec.t,
            env.len()
        )));
    }
    Ok(())
}

/// Deterministic probability of the barrier event described by `spec`.
pub fn barrier_probability(env: &Environment, spec: &BarrierSpec, grid: &GridCfg) -> Result<f64> {
    Ok(barrier_probability_detail(env, spec, grid, 0.0)?.p)
}

/// Log-space value of [`barrier_probability`].
pub fn barrier_probability_log(
    env: &Environment,
    spec: &BarrierSpec,
    grid: &GridCfg,
) -> Result<f64> {
    Ok(barrier_probability_detail(env, spec, grid, 0.0)?.log_p)
}

/// Engine run with optional free phase: the ceiling constraint is ignored on
/// `[0, free_until)` (the terminal window still applies). `free_until = 0`
/// is the plain barrier event.
pub fn barrier_probability_detail(
    env: &Environment,
    spec: &BarrierSpec,
    grid: &GridCfg,
    free_until: f64,
) -> Result<EngineOutcome> {
    check_spec_env(env, spec)?;
    if !(0.0..=spec.t).contains(&free_until) {
        return Err(Error::range(format!(
            "free phase end {free_until} outside [0, {}]",
            spec.t
        )));
    }
    let beta = |s: f64| spec.beta(env, s);
    let run = run_engine(
        &beta,
        spec.t,
        spec.start_offset,
        &spec.end_window,
        grid,
        free_until,
        &[],
        &[],
    )?;
    Ok(run.final_outcome)
}

/// Barrier probabilities at several horizons in one propagation pass.
///
/// All snapshot horizons share `spec`'s curve/drift/window (each evaluated
/// relative to the ceiling at its own horizon); `spec.t` must equal the
/// largest horizon.
pub fn barrier_probability_snapshots(
    env: &Environment,
    spec: &BarrierSpec,
    grid: &GridCfg,
    horizons: &[f64],
) -> Result<Vec<EngineOutcome>> {
    check_spec_env(env, spec)?;
    if horizons.is_empty() {
        return Err(Error::config("no snapshot horizons requested"));
    }
    let max = horizons.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if (max - spec.t).abs() > 1e-9 {
        return Err(Error::config("largest snapshot horizon must equal spec.t"));
    }
    let beta = |s: f64| spec.beta(env, s);
    let run = run_engine(
        &beta,
        spec.t,
        spec.start_offset,
        &spec.end_window,
        grid,
        0.0,
        horizons,
        &[],
    )?;
    Ok(run.snapshots)
}

/// Barrier probability below an explicit piecewise-linear ceiling given by
/// `nodes` (time, level), starting from offset `y` at time 0; the window is
/// relative to the final ceiling level.
pub fn polyline_barrier_probability(
    nodes: &[(f64, f64)],
    y: f64,
    window: &EndWindow,
    grid: &GridCfg,
) -> Result<EngineOutcome> {
    if nodes.len() < 2 {
        return Err(Error::config("polyline needs at least two nodes"));
    }
    if nodes[0].0 != 0.0 {
        return Err(Error::config("polyline must start at time 0"));
    }
    for w in nodes.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::config("polyline times must increase"));
        }
    }
    window.validate()?;
    let t = nodes.last().unwrap().0;
    let beta = |s: f64| -> Result<f64> {
        // Locate the segment containing s and interpolate.
        let idx = nodes
            .windows(2)
            .position(|w| s <= w[1].0 + 1e-12)
            .unwrap_or(nodes.len() - 2);
        let (s0, b0) = nodes[idx];
        let (s1, b1) = nodes[idx + 1];
        let u = ((s - s0) / (s1 - s0)).clamp(0.0, 1.0);
        Ok(b0 + u * (b1 - b0))
    };
    let breaks: Vec<f64> = nodes.iter().map(|n| n.0).collect();
    let run = run_engine(&beta, t, y, window, grid, 0.0, &[], &breaks)?;
    Ok(run.final_outcome)
}

// ---------------------------------------------------------------------------
// p_n and its cache
// ---------------------------------------------------------------------------

fn pn_spec(n: usize, xi0: i32) -> BarrierSpec {
    BarrierSpec {
        t: n as f64,
        curve: CurveKind::Zero,
        drift_slope: 0.0,
        start_offset: f64::from(xi0),
        end_window: EndWindow::j(f64::from(xi0)),
    }
}

fn check_xi0(xi0: i32) -> Result<()> {
    if xi0 > -4 {
        return Err(Error::config(format!(
            "xi0 = {xi0} must be ≤ −4 (an integer below −e−1)"
        )));
    }
    Ok(())
}

/// `p_n`: the tilted walk started at ξ₀ stays below 0 on [0, n] and ends in
/// `[ξ₀−1, ξ₀]`.
pub fn p_n(env: &Environment, n: usize, xi0: i32, grid: &GridCfg) -> Result<f64> {
    Ok(log_p_n(env, n, xi0, grid)?.exp())
}

/// Log-space `p_n` (the engine works in log space throughout, so this is
/// exact far past linear-float underflow).
pub fn log_p_n(env: &Environment, n: usize, xi0: i32, grid: &GridCfg) -> Result<f64> {
    check_xi0(xi0)?;
    if n == 0 {
        return Err(Error::range("p_n needs n ≥ 1"));
    }
    Ok(barrier_probability_detail(env, &pn_spec(n, xi0), grid, 0.0)?.log_p)
}

/// `log p_n` for every horizon in `ns`, computed in a single propagation to
/// the largest horizon.
pub fn log_p_n_sequence(
    env: &Environment,
    ns: &[usize],
    xi0: i32,
    grid: &GridCfg,
) -> Result<Vec<f64>> {
    check_xi0(xi0)?;
    if ns.is_empty() {
        return Err(Error::config("empty horizon list"));
    }
    if ns.iter().any(|n| *n == 0) {
        return Err(Error::range("p_n needs n ≥ 1"));
    }
    let n_max = *ns.iter().max().unwrap();
    let horizons: Vec<f64> = ns.iter().map(|n| *n as f64).collect();
    let outs = barrier_probability_snapshots(env, &pn_spec(n_max, xi0), grid, &horizons)?;
    Ok(outs.into_iter().map(|o| o.log_p).collect())
}

/// Memoizing cache for `log p_n`, keyed by environment fingerprint, horizon,
/// start point and grid configuration.
#[derive(Default)]
pub struct PnCache {
    map: Mutex<HashMap<(u64, usize, i32, u64), f64>>,
}

impl PnCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn log_p_n(&self, env: &Environment, n: usize, xi0: i32, grid: &GridCfg) -> Result<f64> {
        let key = (env.fingerprint(), n, xi0, grid.key());
        if let Some(v) = self.map.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let v = log_p_n(env, n, xi0, grid)?;
        self.map.lock().unwrap().insert(key, v);
        Ok(v)
    }
}

// ---------------------------------------------------------------------------
// Splitting lower bound
// ---------------------------------------------------------------------------

/// Both sides of the widened-window splitting inequality.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SplitBounds {
    /// Probability of the event with end window widened to `[z₂−2, z₂]`.
    pub lhs: f64,
    /// Product of the two split factors (first half ending near `x₀`, second
    /// half restarted from `x₀`).
    pub rhs_product: f64,
}

/// Evaluate the Markov-property splitting lower bound at split time `t0` and
/// mid-level `x0`: the probability of reaching the doubled terminal window
/// `[z₂−2, z₂]` below the barrier dominates the product of (reach `J_{x0}`
/// under the barrier by `t0`) and (restart from `x0`, reach `J_{z₂}` under
/// the remaining barrier).
///
/// `spec.end_window` must be the unit window `J_{z₂}`; the widened window is
/// formed internally.
pub fn barrier_split_lower_bounds(
    env: &Environment,
    spec: &BarrierSpec,
    t0: f64,
    x0: f64,
    grid: &GridCfg,
) -> Result<SplitBounds> {
    check_spec_env(env, spec)?;
    if !(t0 > 0.0 && t0 < spec.t) {
        return Err(Error::range(format!(
            "split time {t0} outside (0, {})",
            spec.t
        )));
    }
    let EndWindow::Interval { lo, hi } = spec.end_window else {
        return Err(Error::config("splitting needs a windowed end condition"));
    };
    if (hi - lo - 1.0).abs() > 1e-12 {
        return Err(Error::config("splitting expects a unit end window"));
    }
    let f_t0 = spec.curve.eval(spec.t, t0) + spec.drift_slope * t0;
    if x0 + f_t0 > 0.0 {
        return Err(Error::range(format!(
            "mid window top x0 + f(t0) = {} must be ≤ 0",
            x0 + f_t0
        )));
    }

    // Left side: widened window [z2 − 2, z2].
    let wide = BarrierSpec {
        end_window: EndWindow::Interval { lo: lo - 1.0, hi },
        ..spec.clone()
    };
    let lhs = barrier_probability(env, &wide, grid)?;

    // Factor 1: event on [0, t0], end window J_{x0} + f(t0) (the raw process
    // lands in J_{x0}).
    let first = BarrierSpec {
        t: t0,
        curve: spec.curve,
        drift_slope: spec.drift_slope,
        start_offset: spec.start_offset,
        end_window: EndWindow::Interval {
            lo: x0 - 1.0 + f_t0,
            hi: x0 + f_t0,
        },
    };
    // The first factor's curve must be evaluated with the *original* horizon
    // t, not t0 — use the polyline form of its ceiling.
    let beta1 = |s: f64| spec.beta(env, s);
    let run1 = run_engine(
        &beta1,
        t0,
        spec.start_offset,
        &first.end_window,
        grid,
        0.0,
        &[],
        &[],
    )?;
    let p1 = run1.final_outcome.p;

    // Factor 2: re-anchored process on [t0, t]: offset x0, ceiling increments
    // of the original ceiling, barrier function evaluated at original times.
    let beta2 = |u: f64| -> Result<f64> { Ok(spec.beta(env, t0 + u)? - spec.beta(env, t0)?) };
    // End window relative to the re-anchored ceiling: the original event asks
    // x0 + (Z_t − Z_{t0}) + f(t) ∈ J_{z2}; the engine's window is relative to
    // β̃(t − t0) = β(t) − β(t0), with process p̃ = x0 + B̃. Writing the event
    // in engine coordinates reproduces J_{z2} exactly.
    let run2 = run_engine(
        &beta2,
        spec.t - t0,
        x0,
        &spec.end_window,
        grid,
        0.0,
        &[],
        &[],
    )?;
    let p2 = run2.final_outcome.p;

    Ok(SplitBounds {
        lhs,
        rhs_product: p1 * p2,
    })
}

// ---------------------------------------------------------------------------
// Monte-Carlo oracle
// ---------------------------------------------------------------------------

/// Monte-Carlo estimate of the barrier probability: per-piece endpoint
/// simulation with an exact bridge-kill Bernoulli per piece (so a single
/// step per unit interval is already exact for linear ceiling pieces;
/// `substeps_per_unit > 1` refines the chord linearization of curves).
pub fn barrier_probability_mc(
    env: &Environment,
    spec: &BarrierSpec,
    n_paths: usize,
    substeps_per_unit: u32,
    seed: u64,
) -> Result<McEstimate> {
    check_spec_env(env, spec)?;
    if n_paths == 0 {
        return Err(Error::config("n_paths must be ≥ 1"));
    }
    if substeps_per_unit == 0 {
        return Err(Error::config("substeps_per_unit must be ≥ 1"));
    }
    let beta = |s: f64| spec.beta(env, s);
    let pieces = build_pieces(&beta, spec.t, substeps_per_unit, 0.0, &[])?;
    let beta_t = pieces.last().map(|p| p.beta1).unwrap_or(0.0);

    let hits: u64 = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            use rand::Rng;
            let mut rng = crate::rng::derive_rng(seed, "barrier-mc", path as u64);
            let mut pos = spec.start_offset;
            if pos >= pieces[0].beta0 {
                return 0u64;
            }
            for piece in &pieces {
                let dt = piece.s1 - piece.s0;
                let z: f64 = {
                    // Box–Muller from two uniforms; one normal per piece.
                    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                    let u2: f64 = rng.gen();
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                };
                let next = pos + z * dt.sqrt();
                if next >= piece.beta1 {
                    return 0;
                }
                let a = pos - piece.beta0;
                let b = next - piece.beta1;
                let survive = 1.0 - (-2.0 * a * b / dt).exp();
                if rng.gen::<f64>() >= survive {
                    return 0;
                }
                pos = next;
            }
            match spec.end_window {
                EndWindow::Unrestricted => 1,
                EndWindow::Interval { lo, hi } => {
                    let rel = pos - beta_t;
                    u64::from(rel >= lo && rel <= hi)
                }
            }
        })
        .sum();

    let p = hits as f64 / n_paths as f64;
    let stderr = (p * (1.0 - p) / n_paths as f64).sqrt();
    Ok(McEstimate {
        estimate: p,
        stderr,
    })
}
