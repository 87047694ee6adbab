//! Typed run configuration: TOML sections with defaults, validation,
//! conversion into core types and a canonical content hash.
//!
//! Parsing is strict — an unknown key or section is an error naming the
//! offender — and the parsed struct re-serializes canonically, so the
//! config hash depends only on the effective configuration (defaults
//! included), never on formatting.

use brwre_core::barrier::{GridCfg, XSpan};
use brwre_core::curve::CurveKind;
use brwre_core::env::OffspringLaw;
use brwre_core::verify::{MaxSimPolicy, CALIBRATED_GAMMA0};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

/// A configuration problem: the offending key and what is wrong with it.
#[derive(Debug)]
pub struct ConfigError {
    /// Dotted path of the key at fault.
    pub key: String,
    /// What went wrong.
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_owned(),
        message: message.into(),
    }
}

/// Whole-run configuration; every section has complete defaults, so the
/// empty document is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed, threads, output directory, window anchor and grid.
    pub global: GlobalSection,
    /// Offspring law and environment length.
    pub env: EnvSection,
    /// Barrier-probability job.
    pub barrier: BarrierSection,
    /// Branching-walk simulation job.
    pub brw: BrwSection,
    /// Tightness experiment job.
    pub tightness: TightnessSection,
    /// Verification suite sizes.
    pub verify: VerifySection,
}

impl RunConfig {
    /// Parse a TOML document, rejecting unknown keys.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| err("<document>", e.to_string()))
    }

    /// Canonical serialization of the effective configuration.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 (lowercase hex) of the canonical serialization with the
    /// execution-context fields — worker count and output directory —
    /// reset to their defaults. Those two cannot influence any computed
    /// number, so runs that differ only in them share a hash and their
    /// reports stay byte-identical.
    pub fn config_hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.global.threads = GlobalSection::default().threads;
        normalized.global.out_dir = GlobalSection::default().out_dir;
        let digest = Sha256::digest(normalized.canonical_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `[global]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalSection {
    /// Master seed for every derived stream.
    pub seed: u64,
    /// Worker threads (0 = one per logical CPU).
    pub threads: usize,
    /// Output directory.
    pub out_dir: String,
    /// Window anchor ξ₀ for centering computations.
    pub xi0: i32,
    /// Barrier-engine grid.
    pub grid: GridSection,
}

impl Default for GlobalSection {
    fn default() -> Self {
        GlobalSection {
            seed: 7,
            threads: 1,
            out_dir: "out".to_owned(),
            xi0: brwre_core::verify::SUITE_XI0,
            grid: GridSection::default(),
        }
    }
}

/// `[global.grid]` subsection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Cell width.
    pub dx: f64,
    /// Lattice depth below the ceiling: "auto" or a fixed depth.
    pub span: SpanSetting,
    /// Propagation substeps per unit interval.
    pub substeps: u32,
}

impl Default for GridSection {
    fn default() -> Self {
        let core = GridCfg::default();
        GridSection {
            dx: core.dx,
            span: SpanSetting::Auto("auto".to_owned()),
            substeps: core.substeps,
        }
    }
}

/// Either the literal string "auto" or a fixed numeric depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpanSetting {
    /// Fixed depth below the ceiling.
    Fixed(f64),
    /// The literal "auto".
    Auto(String),
}

impl GridSection {
    /// Convert to the engine grid, validating every field.
    pub fn to_grid(&self) -> Result<GridCfg, ConfigError> {
        let x_span = match &self.span {
            SpanSetting::Fixed(depth) => XSpan::Fixed(*depth),
            SpanSetting::Auto(word) if word == "auto" => XSpan::Auto,
            SpanSetting::Auto(word) => {
                return Err(err(
                    "global.grid.span",
                    format!("expected \"auto\" or a number, got \"{word}\""),
                ))
            }
        };
        let grid = GridCfg {
            dx: self.dx,
            x_span,
            substeps: self.substeps,
        };
        grid.validate()
            .map_err(|e| err("global.grid", e.to_string()))?;
        Ok(grid)
    }
}

/// `[env]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    /// "deterministic", "uniform-int" or "categorical".
    pub law: String,
    /// Offspring count for the deterministic law.
    pub param: u32,
    /// Lower bound for the uniform-int law.
    pub lo: u32,
    /// Upper bound for the uniform-int law.
    pub hi: u32,
    /// Support for the categorical law.
    pub values: Vec<u32>,
    /// Probabilities for the categorical law.
    pub probs: Vec<f64>,
    /// Environment length (generations).
    pub n: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            law: "deterministic".to_owned(),
            param: 2,
            lo: 2,
            hi: 8,
            values: Vec::new(),
            probs: Vec::new(),
            n: 64,
        }
    }
}

impl EnvSection {
    /// Convert to the core offspring law.
    pub fn to_law(&self) -> Result<OffspringLaw, ConfigError> {
        match self.law.as_str() {
            "deterministic" => Ok(OffspringLaw::Deterministic(self.param)),
            "uniform-int" => Ok(OffspringLaw::UniformInt(self.lo, self.hi)),
            "categorical" => Ok(OffspringLaw::Categorical {
                values: self.values.clone(),
                probs: self.probs.clone(),
            }),
            other => Err(err(
                "env.law",
                format!(
                    "unknown law \"{other}\" (expected deterministic, uniform-int or categorical)"
                ),
            )),
        }
    }
}

/// `[barrier]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierSection {
    /// Horizon.
    pub t: f64,
    /// "zero", "neg-banana" or "pos-banana".
    pub curve: String,
    /// Scale factor applied to the curve.
    pub curve_scale: f64,
    /// Linear drift added to the ceiling.
    pub drift: f64,
    /// Start offset below the ceiling.
    pub start: f64,
    /// End-window floor (omit both bounds for an unrestricted end).
    pub window_lo: Option<f64>,
    /// End-window cap.
    pub window_hi: Option<f64>,
    /// Monte-Carlo cross-check paths (0 disables the cross-check).
    pub mc_paths: usize,
    /// Monte-Carlo substeps per unit interval.
    pub mc_substeps: u32,
}

impl Default for BarrierSection {
    fn default() -> Self {
        BarrierSection {
            t: 16.0,
            curve: "zero".to_owned(),
            curve_scale: 1.0,
            drift: 0.0,
            start: -1.0,
            window_lo: Some(-2.0),
            window_hi: Some(-1.0),
            mc_paths: 0,
            mc_substeps: 4,
        }
    }
}

/// Parse a curve name and scale into the core curve type.
pub fn parse_curve(name: &str, scale: f64, key: &str) -> Result<CurveKind, ConfigError> {
    let base = match name {
        "zero" => CurveKind::Zero,
        "neg-banana" => CurveKind::neg_banana(),
        "pos-banana" => CurveKind::pos_banana(),
        other => {
            return Err(err(
                key,
                format!("unknown curve \"{other}\" (expected zero, neg-banana or pos-banana)"),
            ))
        }
    };
    if !(scale.is_finite() && scale > 0.0) {
        return Err(err(
            key,
            format!("curve scale must be positive, got {scale}"),
        ));
    }
    Ok(base.scaled(scale))
}

impl BarrierSection {
    /// The configured curve.
    pub fn to_curve(&self) -> Result<CurveKind, ConfigError> {
        parse_curve(&self.curve, self.curve_scale, "barrier.curve")
    }

    /// The configured end window.
    pub fn to_window(&self) -> Result<brwre_core::barrier::EndWindow, ConfigError> {
        match (self.window_lo, self.window_hi) {
            (None, None) => Ok(brwre_core::barrier::EndWindow::Unrestricted),
            (Some(lo), Some(hi)) => Ok(brwre_core::barrier::EndWindow::Interval { lo, hi }),
            (Some(_), None) => Err(err(
                "barrier.window_hi",
                "window_lo is set, so window_hi must be set too",
            )),
            (None, Some(_)) => Err(err(
                "barrier.window_lo",
                "window_hi is set, so window_lo must be set too",
            )),
        }
    }
}

/// `[brw]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrwSection {
    /// Generations to run.
    pub n: usize,
    /// "exact" or "pruned".
    pub mode: String,
    /// Population budget for exact mode.
    pub max_particles: u64,
    /// Window width for pruned mode.
    pub window: f64,
    /// Replicas to simulate.
    pub replicas: usize,
}

impl Default for BrwSection {
    fn default() -> Self {
        BrwSection {
            n: 10,
            mode: "exact".to_owned(),
            max_particles: 1 << 20,
            window: 8.0,
            replicas: 16,
        }
    }
}

impl BrwSection {
    /// Convert to the core simulation mode.
    pub fn to_mode(&self) -> Result<brwre_core::brw::BrwMode, ConfigError> {
        match self.mode.as_str() {
            "exact" => Ok(brwre_core::brw::BrwMode::Exact {
                max_particles: self.max_particles,
            }),
            "pruned" => Ok(brwre_core::brw::BrwMode::Pruned {
                window: self.window,
            }),
            other => Err(err(
                "brw.mode",
                format!("unknown mode \"{other}\" (expected exact or pruned)"),
            )),
        }
    }
}

/// `[tightness]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TightnessSection {
    /// Generation ladder.
    pub n_ladder: Vec<usize>,
    /// Environments to pool.
    pub envs: usize,
    /// Replicas per environment and rung.
    pub replicas_per_env: usize,
    /// "pruned" or "exact".
    pub mode: String,
    /// Pruning window at n = 1, in tilt units (the position-space window is
    /// divided by θ*, which equalises the retained population across
    /// offspring laws).
    pub window_base: f64,
    /// Additional tilt-units window width per doubling of n.
    pub window_per_log2: f64,
    /// Population budget for exact mode.
    pub max_particles: u64,
}

impl Default for TightnessSection {
    fn default() -> Self {
        TightnessSection {
            n_ladder: vec![8, 16, 32],
            envs: 4,
            replicas_per_env: 8,
            mode: "pruned".to_owned(),
            window_base: 3.0,
            window_per_log2: 1.7,
            max_particles: 1 << 20,
        }
    }
}

impl TightnessSection {
    /// Convert to the core simulation policy.
    pub fn to_policy(&self) -> Result<MaxSimPolicy, ConfigError> {
        match self.mode.as_str() {
            "pruned" => Ok(MaxSimPolicy::Pruned {
                window_base: self.window_base,
                window_per_log2: self.window_per_log2,
            }),
            "exact" => Ok(MaxSimPolicy::Exact {
                max_particles: self.max_particles,
            }),
            other => Err(err(
                "tightness.mode",
                format!("unknown mode \"{other}\" (expected pruned or exact)"),
            )),
        }
    }
}

/// `[verify]` section: sizes for the bundled verification suite. The
/// defaults finish in well under a minute while exercising every check at
/// a scale where its contract genuinely binds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Grid cell width for the verification engine runs (coarser than the
    /// global grid: these checks are statistical, not quadrature-grade).
    pub grid_dx: f64,
    /// Tilt-check horizon.
    pub girsanov_t: f64,
    /// Tilt slope.
    pub girsanov_c: f64,
    /// Tilt-check start offset.
    pub girsanov_y: f64,
    /// Tilt-check window anchor.
    pub girsanov_y0: f64,
    /// Tilt-check Monte-Carlo paths.
    pub girsanov_reps: usize,
    /// Association-check sample size.
    pub association_reps: usize,
    /// Environments for the crude-lower-bound check.
    pub crude_envs: usize,
    /// Crude-lower-bound horizon.
    pub crude_t: f64,
    /// Calibrated exponent for the crude lower bound.
    pub crude_gamma0: f64,
    /// Wall-exponent ladder.
    pub gamma_ladder: Vec<f64>,
    /// Environments for the wall-exponent fit.
    pub gamma_envs: usize,
    /// Start-shift ratio horizon.
    pub ratio_t: f64,
    /// Deep start for the ratio check.
    pub ratio_y: f64,
    /// Shallow start.
    pub ratio_x: f64,
    /// Window anchor.
    pub ratio_y0: f64,
    /// Growth-check generation ladder (must span two decades).
    pub growth_ladder: Vec<usize>,
    /// Environments for the growth check.
    pub growth_envs: usize,
    /// Tightness ladder for the bundled light run.
    pub tightness_ladder: Vec<usize>,
    /// Environments for the light tightness run.
    pub tightness_envs: usize,
    /// Replicas per environment for the light tightness run.
    pub tightness_replicas: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            grid_dx: 0.1,
            girsanov_t: 8.0,
            girsanov_c: 0.15,
            girsanov_y: -2.0,
            girsanov_y0: -2.0,
            girsanov_reps: 20_000,
            association_reps: 20_000,
            crude_envs: 3,
            crude_t: 16.0,
            crude_gamma0: CALIBRATED_GAMMA0,
            gamma_ladder: vec![8.0, 16.0, 32.0],
            gamma_envs: 2,
            // One cell of the frozen suite the start-shift multiplier was
            // calibrated on; the calibrated floor is only meaningful there.
            ratio_t: 256.0,
            ratio_y: -3.0,
            ratio_x: -1.0,
            ratio_y0: -4.0,
            growth_ladder: vec![16, 32, 64, 128, 256, 512, 1024, 2048, 4096],
            growth_envs: 2,
            tightness_ladder: vec![8, 16],
            tightness_envs: 3,
            tightness_replicas: 6,
        }
    }
}
