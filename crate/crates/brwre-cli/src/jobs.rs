//! Subcommand implementations: each one turns the parsed config into core
//! calls and writes `results.csv`, `report.json` and `meta.json` into the
//! output directory. Timestamps live only in `meta.json`, so the other two
//! files are byte-identical across reruns of the same configuration.

use crate::config::{parse_curve, ConfigError, RunConfig};
use brwre_core::barrier::{
    barrier_probability_detail, barrier_probability_mc, BarrierSpec, GridCfg,
};
use brwre_core::brw::{simulate_max, BrwConfig};
use brwre_core::env::{sample_environment, EnvConfig, Environment};
use brwre_core::verify::{
    association_check, crude_lb_check, gamma_hat, girsanov_tilt_check, log_pn_growth_check,
    ratio_start_shift, tightness_experiment, CheckResult, GammaHatReport, RatioReport,
    TightnessCfg, TightnessReport, CALIBRATED_RATIO_FLOOR_C,
};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

/// A job failure: either a configuration problem (exit 2) or a runtime
/// failure (exit 1).
#[derive(Debug)]
pub enum JobError {
    /// Bad configuration; names the offending key.
    Config(ConfigError),
    /// Runtime failure in the core library or I/O.
    Run(String),
}

impl std::fmt::Display for JobError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            JobError::Config(e) => write!(f, "{e}"),
            JobError::Run(msg) => write!(f, "run error: {msg}"),
        }
    }
}

impl From<ConfigError> for JobError {
    fn from(e: ConfigError) -> Self {
        JobError::Config(e)
    }
}

impl From<brwre_core::Error> for JobError {
    fn from(e: brwre_core::Error) -> Self {
        JobError::Run(e.to_string())
    }
}

impl From<std::io::Error> for JobError {
    fn from(e: std::io::Error) -> Self {
        JobError::Run(e.to_string())
    }
}

/// Whether the job's checks all passed (drives the exit code of
/// `verify-all`; other jobs always succeed when they return `Ok`).
pub type JobOutcome = Result<bool, JobError>;

#[derive(Serialize)]
struct Meta<'a> {
    created_unix: u64,
    version: &'a str,
    subcommand: &'a str,
    config_hash: &'a str,
    threads: usize,
}

fn write_meta(out_dir: &Path, subcommand: &str, cfg: &RunConfig) -> Result<(), JobError> {
    let meta = Meta {
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        config_hash: &cfg.config_hash(),
        threads: cfg.global.threads,
    };
    let body = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    std::fs::write(out_dir.join("meta.json"), body)?;
    Ok(())
}

fn write_results_csv(out_dir: &Path, body: &str) -> Result<(), JobError> {
    std::fs::write(out_dir.join("results.csv"), body.as_bytes())?;
    Ok(())
}

fn write_report_json<T: Serialize>(out_dir: &Path, report: &T) -> Result<(), JobError> {
    let mut body = serde_json::to_vec_pretty(report).expect("report serializes");
    body.push(b'\n');
    std::fs::write(out_dir.join("report.json"), body)?;
    Ok(())
}

fn prepare_out_dir(cfg: &RunConfig, subcommand: &str) -> Result<std::path::PathBuf, JobError> {
    let out_dir = std::path::PathBuf::from(&cfg.global.out_dir);
    std::fs::create_dir_all(&out_dir)?;
    write_meta(&out_dir, subcommand, cfg)?;
    Ok(out_dir)
}

fn sampled_env(cfg: &RunConfig, n: usize) -> Result<(EnvConfig, Environment), JobError> {
    let law = cfg.env.to_law()?;
    let env_cfg = EnvConfig::new(law).map_err(|e| {
        JobError::Config(ConfigError {
            key: "env".to_owned(),
            message: e.to_string(),
        })
    })?;
    let env = sample_environment(&env_cfg, n, cfg.global.seed)?;
    Ok((env_cfg, env))
}

// ---------------------------------------------------------------------------
// env-sample
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EnvReport {
    config_hash: String,
    seed: u64,
    n: usize,
    theta_star: f64,
    e_log: f64,
    var_log: f64,
    fingerprint: String,
}

/// Sample the configured environment and tabulate its derived sequences.
pub fn env_sample(cfg: &RunConfig) -> JobOutcome {
    let out_dir = prepare_out_dir(cfg, "env-sample")?;
    let (env_cfg, env) = sampled_env(cfg, cfg.env.n)?;

    let mut csv = String::from("k,l_k,kappa_k,big_k,w_k\n");
    for k in 1..=env.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            k,
            env.l_at(k)?,
            env.kappa_at(k)?,
            env.big_k(k)?,
            env.w_at(k as f64)?
        );
    }
    write_results_csv(&out_dir, &csv)?;
    write_report_json(
        &out_dir,
        &EnvReport {
            config_hash: cfg.config_hash(),
            seed: cfg.global.seed,
            n: env.len(),
            theta_star: env.theta_star(),
            e_log: env_cfg.e_log(),
            var_log: env_cfg.var_log(),
            fingerprint: format!("{:016x}", env.fingerprint()),
        },
    )?;
    Ok(true)
}

// ---------------------------------------------------------------------------
// barrier-prob
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct BarrierReport {
    config_hash: String,
    seed: u64,
    t: f64,
    start: f64,
    drift: f64,
    p: f64,
    log_p: f64,
    mc_estimate: Option<f64>,
    mc_stderr: Option<f64>,
    mc_paths: usize,
}

/// Compute the configured barrier probability, optionally cross-checked
/// by the path sampler.
pub fn barrier_prob(cfg: &RunConfig) -> JobOutcome {
    let out_dir = prepare_out_dir(cfg, "barrier-prob")?;
    let t = cfg.barrier.t;
    if !(t > 0.0 && t.is_finite()) {
        return Err(ConfigError {
            key: "barrier.t".to_owned(),
            message: format!("horizon must be positive and finite, got {t}"),
        }
        .into());
    }
    if t > cfg.env.n as f64 {
        return Err(ConfigError {
            key: "barrier.t".to_owned(),
            message: format!("horizon {t} exceeds env.n = {}", cfg.env.n),
        }
        .into());
    }
    let (_, env) = sampled_env(cfg, cfg.env.n)?;
    let spec = BarrierSpec {
        t,
        curve: cfg.barrier.to_curve()?,
        drift_slope: cfg.barrier.drift,
        start_offset: cfg.barrier.start,
        end_window: cfg.barrier.to_window()?,
    };
    spec.validate().map_err(|e| {
        JobError::Config(ConfigError {
            key: "barrier".to_owned(),
            message: e.to_string(),
        })
    })?;
    let grid = cfg.global.grid.to_grid()?;
    let outcome = barrier_probability_detail(&env, &spec, &grid, 0.0)?;
    let mc = if cfg.barrier.mc_paths > 0 {
        Some(barrier_probability_mc(
            &env,
            &spec,
            cfg.barrier.mc_paths,
            cfg.barrier.mc_substeps,
            cfg.global.seed,
        )?)
    } else {
        None
    };

    let mut csv = String::from("t,start,drift,p,log_p,mc_estimate,mc_stderr\n");
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{},{}",
        t,
        cfg.barrier.start,
        cfg.barrier.drift,
        outcome.p,
        outcome.log_p,
        mc.as_ref()
            .map_or(String::new(), |m| m.estimate.to_string()),
        mc.as_ref().map_or(String::new(), |m| m.stderr.to_string()),
    );
    write_results_csv(&out_dir, &csv)?;
    write_report_json(
        &out_dir,
        &BarrierReport {
            config_hash: cfg.config_hash(),
            seed: cfg.global.seed,
            t,
            start: cfg.barrier.start,
            drift: cfg.barrier.drift,
            p: outcome.p,
            log_p: outcome.log_p,
            mc_estimate: mc.as_ref().map(|m| m.estimate),
            mc_stderr: mc.as_ref().map(|m| m.stderr),
            mc_paths: cfg.barrier.mc_paths,
        },
    )?;
    Ok(true)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SimulateReport {
    config_hash: String,
    seed: u64,
    n: usize,
    replicas: usize,
    mean_m_max: f64,
    min_m_max: f64,
    max_m_max: f64,
    dirty_replicas: usize,
}

/// Simulate replica maxima of the branching walk.
pub fn simulate(cfg: &RunConfig) -> JobOutcome {
    use rayon::prelude::*;

    let out_dir = prepare_out_dir(cfg, "simulate")?;
    if cfg.brw.n > cfg.env.n {
        return Err(ConfigError {
            key: "brw.n".to_owned(),
            message: format!(
                "generation count {} exceeds the environment length env.n = {}",
                cfg.brw.n, cfg.env.n
            ),
        }
        .into());
    }
    if cfg.brw.replicas == 0 {
        return Err(ConfigError {
            key: "brw.replicas".to_owned(),
            message: "must be ≥ 1".to_owned(),
        }
        .into());
    }
    let (_, env) = sampled_env(cfg, cfg.env.n)?;
    let brw_cfg = BrwConfig {
        n: cfg.brw.n,
        mode: cfg.brw.to_mode()?,
    };
    let results = (0..cfg.brw.replicas as u64)
        .into_par_iter()
        .map(|replica| simulate_max(&env, &brw_cfg, cfg.global.seed, replica))
        .collect::<brwre_core::Result<Vec<_>>>()?;

    let mut csv =
        String::from("replica,m_max,m_min,peak_population,nodes_expanded,sentinel_dirty\n");
    for (replica, r) in results.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            replica,
            r.m_max,
            r.m_min,
            r.diagnostics.peak_population,
            r.diagnostics.nodes_expanded,
            r.diagnostics.sentinel_dirty
        );
    }
    write_results_csv(&out_dir, &csv)?;

    let mean = results.iter().map(|r| r.m_max).sum::<f64>() / results.len() as f64;
    write_report_json(
        &out_dir,
        &SimulateReport {
            config_hash: cfg.config_hash(),
            seed: cfg.global.seed,
            n: cfg.brw.n,
            replicas: results.len(),
            mean_m_max: mean,
            min_m_max: results
                .iter()
                .map(|r| r.m_max)
                .fold(f64::INFINITY, f64::min),
            max_m_max: results
                .iter()
                .map(|r| r.m_max)
                .fold(f64::NEG_INFINITY, f64::max),
            dirty_replicas: results
                .iter()
                .filter(|r| r.diagnostics.sentinel_dirty)
                .count(),
        },
    )?;
    Ok(true)
}

// ---------------------------------------------------------------------------
// tightness
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TightnessJobReport<'a> {
    config_hash: String,
    seed: u64,
    report: &'a TightnessReport,
}

fn tightness_csv(report: &TightnessReport) -> String {
    let mut csv =
        String::from("n,replicas,q01,q05,q25,q50,q75,q95,q99,iqr,p95_minus_p05,flagged\n");
    for row in &report.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.n,
            row.replicas,
            row.q01,
            row.q05,
            row.q25,
            row.q50,
            row.q75,
            row.q95,
            row.q99,
            row.iqr,
            row.p95_minus_p05,
            row.flagged
        );
    }
    csv
}

/// Run the tightness experiment at the configured scale.
pub fn tightness(cfg: &RunConfig) -> JobOutcome {
    let out_dir = prepare_out_dir(cfg, "tightness")?;
    let law = cfg.env.to_law()?;
    let env_cfg = EnvConfig::new(law).map_err(|e| {
        JobError::Config(ConfigError {
            key: "env".to_owned(),
            message: e.to_string(),
        })
    })?;
    let tightness_cfg = TightnessCfg {
        env_cfg,
        n_ladder: cfg.tightness.n_ladder.clone(),
        envs: cfg.tightness.envs,
        replicas_per_env: cfg.tightness.replicas_per_env,
        policy: cfg.tightness.to_policy()?,
        xi0: cfg.global.xi0,
        grid: cfg.global.grid.to_grid()?,
        seed: cfg.global.seed,
    };
    let report = tightness_experiment(&tightness_cfg)?;
    write_results_csv(&out_dir, &tightness_csv(&report))?;
    write_report_json(
        &out_dir,
        &TightnessJobReport {
            config_hash: cfg.config_hash(),
            seed: cfg.global.seed,
            report: &report,
        },
    )?;
    Ok(true)
}

// ---------------------------------------------------------------------------
// verify-all
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SuiteCheck<'a> {
    name: &'a str,
    pass: bool,
    observed: &'a [f64],
    bound: &'a [f64],
    stderr: f64,
    config_hash: &'a str,
    seed: u64,
    details: &'a str,
}

#[derive(Serialize)]
struct SuiteReport<'a> {
    config_hash: String,
    seed: u64,
    all_pass: bool,
    checks: Vec<SuiteCheck<'a>>,
    gamma: &'a GammaHatReport,
    ratio: &'a RatioReport,
    tightness: &'a TightnessReport,
}

/// Run every verification check at the configured (desk-light) scale.
///
/// A failing check never aborts the suite: all checks run, all results are
/// reported, and the overall outcome is the conjunction.
pub fn verify_all(cfg: &RunConfig) -> JobOutcome {
    let out_dir = prepare_out_dir(cfg, "verify-all")?;
    let seed = cfg.global.seed;
    let v = &cfg.verify;
    let grid = GridCfg {
        dx: v.grid_dx,
        ..GridCfg::default()
    };
    grid.validate().map_err(|e| {
        JobError::Config(ConfigError {
            key: "verify.grid_dx".to_owned(),
            message: e.to_string(),
        })
    })?;
    let law = cfg.env.to_law()?;
    let env_cfg = EnvConfig::new(law).map_err(|e| {
        JobError::Config(ConfigError {
            key: "env".to_owned(),
            message: e.to_string(),
        })
    })?;

    let mut checks: Vec<CheckResult> = Vec::new();

    // Linear-tilt sandwich on a fresh environment of the right length.
    let girsanov_env = sample_environment(&env_cfg, v.girsanov_t.ceil() as usize, seed)?;
    let mut tilt = girsanov_tilt_check(
        &girsanov_env,
        v.girsanov_t,
        parse_curve("zero", 1.0, "verify")?,
        v.girsanov_c,
        v.girsanov_y,
        v.girsanov_y0,
        v.girsanov_reps,
        seed,
    )?;
    tilt.name = "girsanov_tilt".to_owned();
    checks.push(tilt);

    // Association: a symmetric bridge and an asymmetric one.
    let mut assoc = association_check(
        4.0,
        0.0,
        &[1.0, 2.0, 3.0],
        &[0.0, 0.0, 0.0],
        v.association_reps,
        seed,
    )?;
    assoc.name = "association_symmetric".to_owned();
    checks.push(assoc);
    let mut assoc = association_check(
        6.0,
        -1.0,
        &[1.5, 3.0, 4.5],
        &[0.5, -0.2, 1.0],
        v.association_reps,
        seed.wrapping_add(1),
    )?;
    assoc.name = "association_asymmetric".to_owned();
    checks.push(assoc);

    // Crude lower bound across a few environments.
    for idx in 0..v.crude_envs as u64 {
        let env = sample_environment(&env_cfg, v.crude_t.ceil() as usize, seed.wrapping_add(idx))?;
        let mut check = crude_lb_check(&env, v.crude_t, -1.0, -1.0, v.crude_gamma0, &grid)?;
        check.name = format!("crude_lb_env{idx}");
        checks.push(check);
    }

    // Wall exponent: recorded, plus the positivity contract.
    let gamma = gamma_hat(&env_cfg, &v.gamma_ladder, v.gamma_envs, &grid, seed)?;
    checks.push(CheckResult {
        name: "gamma_hat_positive".to_owned(),
        pass: gamma.gamma_estimate > 0.0,
        observed: vec![gamma.gamma_estimate],
        bound: vec![0.0],
        stderr: 0.0,
        details: format!(
            "median wall exponent {:.4} across {} environments",
            gamma.gamma_estimate,
            gamma.per_env.len()
        ),
    });

    // Start-shift ratios.
    let ratio_env = sample_environment(&env_cfg, v.ratio_t.ceil() as usize, seed)?;
    let ratio = ratio_start_shift(
        &ratio_env,
        v.ratio_t,
        v.ratio_y,
        v.ratio_x,
        v.ratio_y0,
        parse_curve("zero", 1.0, "verify")?,
        &grid,
    )?;
    checks.push(CheckResult {
        name: "ratio_windowed_lower".to_owned(),
        pass: ratio.ratio_windowed >= 1.0 - 1e-9,
        observed: vec![ratio.ratio_windowed],
        bound: vec![1.0],
        stderr: 0.0,
        details: "removing the initial ceiling stretch must not shrink the event".to_owned(),
    });
    let ratio_floor = CALIBRATED_RATIO_FLOOR_C * ratio.ratio_floor_form;
    checks.push(CheckResult {
        name: "ratio_start_shift_lower".to_owned(),
        pass: ratio.ratio_full >= ratio_floor,
        observed: vec![ratio.ratio_full],
        bound: vec![ratio_floor],
        stderr: 0.0,
        details: format!(
            "start-shift ratio vs calibrated structural floor {}×{:.5}",
            CALIBRATED_RATIO_FLOOR_C, ratio.ratio_floor_form
        ),
    });

    // Growth of |log p_n| / log n.
    checks.push(log_pn_growth_check(
        &env_cfg,
        &v.growth_ladder,
        v.growth_envs,
        &grid,
        seed,
    )?);

    // Light tightness run; shape contract only (spreads are judged at
    // acceptance scale).
    let tightness_cfg = TightnessCfg {
        env_cfg,
        n_ladder: v.tightness_ladder.clone(),
        envs: v.tightness_envs,
        replicas_per_env: v.tightness_replicas,
        policy: brwre_core::verify::MaxSimPolicy::desk_default(),
        xi0: cfg.global.xi0,
        grid: grid.clone(),
        seed,
    };
    let tightness_report = tightness_experiment(&tightness_cfg)?;
    let expected = v.tightness_envs * v.tightness_replicas;
    let shape_ok = tightness_report.rows.iter().all(|r| {
        r.replicas == expected
            && r.q01 <= r.q05
            && r.q05 <= r.q25
            && r.q25 <= r.q50
            && r.q50 <= r.q75
            && r.q75 <= r.q95
            && r.q95 <= r.q99
    });
    checks.push(CheckResult {
        name: "tightness_shape".to_owned(),
        pass: shape_ok,
        observed: tightness_report.rows.iter().map(|r| r.iqr).collect(),
        bound: vec![],
        stderr: 0.0,
        details: format!(
            "pooled {} replicas per rung; quantiles monotone in every row",
            expected
        ),
    });

    let all_pass = checks.iter().all(|c| c.pass);

    let mut csv = String::from("name,pass,observed,bound,stderr\n");
    for c in &checks {
        let join = |xs: &[f64]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";")
        };
        let _ = writeln!(
            csv,
            "{},{},\"{}\",\"{}\",{}",
            c.name,
            c.pass,
            join(&c.observed),
            join(&c.bound),
            c.stderr
        );
    }
    write_results_csv(&out_dir, &csv)?;

    let hash = cfg.config_hash();
    let suite = SuiteReport {
        config_hash: hash.clone(),
        seed,
        all_pass,
        checks: checks
            .iter()
            .map(|c| SuiteCheck {
                name: &c.name,
                pass: c.pass,
                observed: &c.observed,
                bound: &c.bound,
                stderr: c.stderr,
                config_hash: &hash,
                seed,
                details: &c.details,
            })
            .collect(),
        gamma: &gamma,
        ratio: &ratio,
        tightness: &tightness_report,
    };
    write_report_json(&out_dir, &suite)?;
    Ok(all_pass)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SummaryReport {
    config_hash: String,
    rungs: Vec<RungSummary>,
    iqr_ratio_last_over_first: f64,
    spread_ratio_last_over_first: f64,
}

#[derive(Serialize)]
struct RungSummary {
    n: usize,
    iqr: f64,
    p95_minus_p05: f64,
    median: f64,
}

/// Render a static SVG summary from an existing tightness CSV.
pub fn report(cfg: &RunConfig) -> JobOutcome {
    let out_dir = prepare_out_dir(cfg, "report")?;
    let csv_path = out_dir.join("results.csv");
    let text = std::fs::read_to_string(&csv_path).map_err(|_| {
        JobError::Config(ConfigError {
            key: "global.out_dir".to_owned(),
            message: format!(
                "no results.csv in {} — run the `tightness` subcommand first",
                out_dir.display()
            ),
        })
    })?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if !header.starts_with("n,replicas,q01") {
        return Err(ConfigError {
            key: "global.out_dir".to_owned(),
            message: "results.csv is not a tightness table — run `tightness` first".to_owned(),
        }
        .into());
    }
    let mut rungs = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 12 {
            return Err(JobError::Run(format!("malformed tightness row: {line}")));
        }
        let parse = |i: usize| -> Result<f64, JobError> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| JobError::Run(format!("bad number in column {i}: {e}")))
        };
        rungs.push(RungSummary {
            n: fields[0]
                .parse()
                .map_err(|e| JobError::Run(format!("bad n: {e}")))?,
            median: parse(5)?,
            iqr: parse(9)?,
            p95_minus_p05: parse(10)?,
        });
    }
    if rungs.is_empty() {
        return Err(JobError::Run("tightness table has no rows".to_owned()));
    }

    let svg = render_spread_svg(&rungs);
    std::fs::write(out_dir.join("summary.svg"), svg.as_bytes())?;
    let first = &rungs[0];
    let last = &rungs[rungs.len() - 1];
    write_report_json(
        &out_dir,
        &SummaryReport {
            config_hash: cfg.config_hash(),
            iqr_ratio_last_over_first: last.iqr / first.iqr,
            spread_ratio_last_over_first: last.p95_minus_p05 / first.p95_minus_p05,
            rungs,
        },
    )?;
    Ok(true)
}

fn render_spread_svg(rungs: &[RungSummary]) -> String {
    let width = 640.0;
    let height = 400.0;
    let margin = 60.0;
    let plot_w = width - 2.0 * margin;
    let plot_h = height - 2.0 * margin;
    let y_max = rungs
        .iter()
        .map(|r| r.p95_minus_p05.max(r.iqr))
        .fold(1e-9f64, f64::max)
        * 1.15;
    let x_of = |i: usize| {
        if rungs.len() == 1 {
            margin + plot_w / 2.0
        } else {
            margin + plot_w * i as f64 / (rungs.len() - 1) as f64
        }
    };
    let y_of = |v: f64| height - margin - plot_h * v / y_max;
    let path_of = |values: Vec<f64>| {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                format!(
                    "{}{:.1},{:.1}",
                    if i == 0 { "M" } else { "L" },
                    x_of(i),
                    y_of(*v)
                )
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let iqr_path = path_of(rungs.iter().map(|r| r.iqr).collect());
    let spread_path = path_of(rungs.iter().map(|r| r.p95_minus_p05).collect());

    let mut svg = format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" font-family="monospace" font-size="12">
<rect width="{width}" height="{height}" fill="white"/>
<text x="{tx}" y="24" text-anchor="middle" font-size="16">Spread of the recentred maximum</text>
<line x1="{margin}" y1="{base}" x2="{xr}" y2="{base}" stroke="black"/>
<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{base}" stroke="black"/>
<path d="{iqr_path}" fill="none" stroke="#1f77b4" stroke-width="2"/>
<path d="{spread_path}" fill="none" stroke="#d62728" stroke-width="2"/>
<text x="{lx}" y="{ly1}" fill="#1f77b4">IQR</text>
<text x="{lx}" y="{ly2}" fill="#d62728">5%-95% spread</text>
"##,
        tx = width / 2.0,
        base = height - margin,
        xr = width - margin,
        lx = width - margin - 120.0,
        ly1 = margin + 16.0,
        ly2 = margin + 34.0,
    );
    for (i, r) in rungs.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">n={}</text>"#,
            x_of(i),
            height - margin + 20.0,
            r.n
        );
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#1f77b4"/>"##,
            x_of(i),
            y_of(r.iqr)
        );
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#d62728"/>"##,
            x_of(i),
            y_of(r.p95_minus_p05)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
        margin - 6.0,
        margin + 4.0,
        y_max
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">0</text>"#,
        margin - 6.0,
        height - margin + 4.0
    );
    svg.push_str("</svg>\n");
    svg
}
