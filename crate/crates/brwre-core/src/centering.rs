//! The environment-dependent centering sequence `m_n`.
//!
//! For an environment realization, `m_n = (K_n − log p_n)/θ*`, combining
//! the cumulant path `K_n` with the barrier probability `p_n` of the tilted
//! walk. Shifted versions (`m_n` of the environment with its first `l`
//! branching factors removed) support cut-the-tree comparisons.

use crate::barrier::{log_p_n, GridCfg};
use crate::env::Environment;
use crate::error::{Error, Result};
use serde::Serialize;

/// One computed centering value with its ingredients.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CenteringRecord {
    pub n: usize,
    /// Cumulant path value K_n.
    pub big_k: f64,
    pub log_p_n: f64,
    pub m_n: f64,
    /// `|m_n(dx) − m_n(dx/2)|` when refinement was requested, else None.
    pub grid_diag: Option<f64>,
}

fn record(env: &Environment, n: usize, log_p: f64) -> Result<CenteringRecord> {
    if log_p < -690.0 {
        return Err(Error::Numeric(format!(
            "p_{n} underflows linear floats (log p = {log_p}); use the log-space propagation results directly"
        )));
    }
    if !(log_p < 0.0) {
        return Err(Error::Numeric(format!(
            "log p_{n} = {log_p} must be negative"
        )));
    }
    let big_k = env.big_k(n)?;
    let theta = env.theta_star();
    Ok(CenteringRecord {
        n,
        big_k,
        log_p_n: log_p,
        m_n: (big_k - log_p) / theta,
        grid_diag: None,
    })
}

/// Compute `m_n = (K_n − log p_n)/θ*` for this environment.
pub fn m_n(env: &Environment, n: usize, xi0: i32, grid: &GridCfg) -> Result<CenteringRecord> {
    record(env, n, log_p_n(env, n, xi0, grid)?)
}

/// [`m_n`] with a grid-refinement diagnostic: the value is recomputed at
/// half the cell width and the absolute change stored in `grid_diag`.
pub fn m_n_with_refinement(
    env: &Environment,
    n: usize,
    xi0: i32,
    grid: &GridCfg,
) -> Result<CenteringRecord> {
    let coarse = m_n(env, n, xi0, grid)?;
    let fine_grid = GridCfg {
        dx: grid.dx / 2.0,
        ..*grid
    };
    let fine = m_n(env, n, xi0, &fine_grid)?;
    Ok(CenteringRecord {
        grid_diag: Some((coarse.m_n - fine.m_n).abs()),
        ..coarse
    })
}

/// Centering of the time-shifted environment: `m_n` computed from the
/// environment with its first `l` branching factors removed (cumulant path
/// and recentred path restarted at the cut). Exactly equals
/// `m_n(env.slice(l, n), …)`.
pub fn m_n_shifted(
    env: &Environment,
    n: usize,
    l: usize,
    xi0: i32,
    grid: &GridCfg,
) -> Result<CenteringRecord> {
    let sliced = env.slice(l, n)?;
    m_n(&sliced, n, xi0, grid)
}

/// Centering records for several horizons in one barrier propagation pass.
pub fn m_n_sequence(
    env: &Environment,
    ns: &[usize],
    xi0: i32,
    grid: &GridCfg,
) -> Result<Vec<CenteringRecord>> {
    let logs = crate::barrier::log_p_n_sequence(env, ns, xi0, grid)?;
    ns.iter()
        .zip(logs)
        .map(|(n, lp)| record(env, *n, lp))
        .collect()
}
