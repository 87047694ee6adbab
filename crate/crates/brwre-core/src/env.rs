//! Environments: realized offspring sequences and derived quantities.
//!
//! An environment is one draw of the i.i.d. offspring sequence 𝓛₁,…,𝓛_N
//! (each ≥ 2), together with everything the rest of the crate derives from
//! it: the optimal tilt θ* = √(2·E[log 𝓛₁]) (an expectation under the
//! *law*, not the realization), the per-generation cumulants
//! κ_k(θ*) = log 𝓛_k + θ*²/2, their prefix sums K_k, and the recentred
//! path W_k = K_k/θ* − kθ*, which is a mean-zero random walk extended to
//! real times by linear interpolation.

use crate::curve::CurveKind;
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Offspring-law descriptor. All supported values must be ≥ 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OffspringLaw {
    /// Every particle has exactly `m` children.
    Deterministic(u32),
    /// Uniform on the integer range {a, …, b} inclusive.
    UniformInt(u32, u32),
    /// Finite support with explicit probabilities.
    Categorical { values: Vec<u32>, probs: Vec<f64> },
}

/// Validated offspring-law configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub law: OffspringLaw,
}

impl EnvConfig {
    pub fn new(law: OffspringLaw) -> Result<Self> {
        match &law {
            OffspringLaw::Deterministic(m) => {
                if *m < 2 {
                    return Err(Error::config(format!("offspring value {m} < 2")));
                }
            }
            OffspringLaw::UniformInt(a, b) => {
                if *a < 2 {
                    return Err(Error::config(format!("offspring value {a} < 2")));
                }
                if a > b {
                    return Err(Error::config(format!("empty range UniformInt({a},{b})")));
                }
            }
            OffspringLaw::Categorical { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(Error::config(
                        "categorical law needs matching, nonempty values/probs",
                    ));
                }
                if let Some(v) = values.iter().find(|v| **v < 2) {
                    return Err(Error::config(format!("offspring value {v} < 2")));
                }
                if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                    return Err(Error::config("categorical probabilities must be in [0,1]"));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::config(format!(
                        "categorical probabilities sum to {total}, not 1"
                    )));
                }
            }
        }
        Ok(EnvConfig { law })
    }

    /// Exact E[log 𝓛₁] under the configured law.
    pub fn e_log(&self) -> f64 {
        match &self.law {
            OffspringLaw::Deterministic(m) => f64::from(*m).ln(),
            OffspringLaw::UniformInt(a, b) => {
                let mut sum = 0.0;
                for v in *a..=*b {
                    sum += f64::from(v).ln();
                }
                sum / f64::from(b - a + 1)
            }
            OffspringLaw::Categorical { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(v, p)| p * f64::from(*v).ln())
                .sum(),
        }
    }

    /// Exact Var[log 𝓛₁] under the configured law.
    pub fn var_log(&self) -> f64 {
        let mean = self.e_log();
        match &self.law {
            OffspringLaw::Deterministic(_) => 0.0,
            OffspringLaw::UniformInt(a, b) => {
                let mut sum = 0.0;
                for v in *a..=*b {
                    let d = f64::from(v).ln() - mean;
                    sum += d * d;
                }
                sum / f64::from(b - a + 1)
            }
            OffspringLaw::Categorical { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(v, p)| {
                    let d = f64::from(*v).ln() - mean;
                    p * d * d
                })
                .sum(),
        }
    }

    /// The optimal tilt θ* = √(2·E[log 𝓛₁]).
    pub fn theta_star(&self) -> f64 {
        (2.0 * self.e_log()).sqrt()
    }

    /// Draw one offspring count.
    fn sample_one<R: Rng>(&self, rng: &mut R) -> u32 {
        match &self.law {
            OffspringLaw::Deterministic(m) => *m,
            OffspringLaw::UniformInt(a, b) => rng.gen_range(*a..=*b),
            OffspringLaw::Categorical { values, probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u <= acc {
                        return *v;
                    }
                }
                *values.last().expect("validated nonempty")
            }
        }
    }
}

/// One realized environment with cached derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    /// Offspring counts 𝓛₁..𝓛_N (index 0 holds 𝓛₁).
    l: Vec<u32>,
    /// θ* of the generating law.
    theta_star: f64,
    /// κ_k(θ*) = log 𝓛_k + θ*²/2, aligned with `l`.
    kappa: Vec<f64>,
    /// Prefix sums K_0 = 0, K_1, …, K_N (length N+1).
    big_k: Vec<f64>,
    /// W_0 = 0, …, W_N with W_k = K_k/θ* − kθ* (length N+1).
    w: Vec<f64>,
}

/// Sample an environment of length `n`. Identical `(cfg, n, seed)` give
/// bit-identical output, and a longer environment extends a shorter one
/// drawn from the same seed (draws are sequential).
pub fn sample_environment(cfg: &EnvConfig, n: usize, seed: u64) -> Result<Environment> {
    if n == 0 {
        return Err(Error::config("environment length must be ≥ 1"));
    }
    let mut rng = crate::rng::derive_rng(seed, "env-sample", 0);
    let l: Vec<u32> = (0..n).map(|_| cfg.sample_one(&mut rng)).collect();
    Environment::from_realization(l, cfg.theta_star())
}

impl Environment {
    /// Build the derived fields from a realized offspring sequence and the
    /// law-level θ*.
    pub fn from_realization(l: Vec<u32>, theta_star: f64) -> Result<Environment> {
        if l.is_empty() {
            return Err(Error::config("environment length must be ≥ 1"));
        }
        if let Some(v) = l.iter().find(|v| **v < 2) {
            return Err(Error::config(format!("offspring value {v} < 2")));
        }
        if !(theta_star > 0.0) {
            return Err(Error::config("theta_star must be positive"));
        }
        let half_theta_sq = theta_star * theta_star / 2.0;
        let kappa: Vec<f64> = l
            .iter()
            .map(|lk| f64::from(*lk).ln() + half_theta_sq)
            .collect();
        let mut big_k = Vec::with_capacity(l.len() + 1);
        big_k.push(0.0);
        let mut acc = 0.0;
        for k in &kappa {
            acc += k;
            big_k.push(acc);
        }
        let w: Vec<f64> = big_k
            .iter()
            .enumerate()
            .map(|(k, bk)| bk / theta_star - k as f64 * theta_star)
            .collect();
        Ok(Environment {
            l,
            theta_star,
            kappa,
            big_k,
            w,
        })
    }

    /// Number of generations N.
    pub fn len(&self) -> usize {
        self.l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l.is_empty()
    }

    /// Offspring counts 𝓛₁..𝓛_N.
    pub fn offspring(&self) -> &[u32] {
        &self.l
    }

    /// 𝓛_k for k ∈ [1, N].
    pub fn l_at(&self, k: usize) -> Result<u32> {
        if k == 0 || k > self.len() {
            return Err(Error::range(format!(
                "generation {k} outside [1, {}]",
                self.len()
            )));
        }
        Ok(self.l[k - 1])
    }

    pub fn theta_star(&self) -> f64 {
        self.theta_star
    }

    /// κ_k(θ*) for k ∈ [1, N].
    pub fn kappa_at(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.len() {
            return Err(Error::range(format!(
                "generation {k} outside [1, {}]",
                self.len()
            )));
        }
        Ok(self.kappa[k - 1])
    }

    /// K_k for k ∈ [0, N] (K_0 = 0).
    pub fn big_k(&self, k: usize) -> Result<f64> {
        self.big_k
            .get(k)
            .copied()
            .ok_or_else(|| Error::range(format!("index {k} outside [0, {}]", self.len())))
    }

    /// The full prefix-sum slice K_0..K_N.
    pub fn big_k_all(&self) -> &[f64] {
        &self.big_k
    }

    /// W at integer times (slice of length N+1).
    pub fn w_all(&self) -> &[f64] {
        &self.w
    }

    /// W_s for real s ∈ [0, N], linear between integer grid points.
    pub fn w_at(&self, s: f64) -> Result<f64> {
        let n = self.len() as f64;
        if !(0.0..=n).contains(&s) {
            return Err(Error::range(format!("time {s} outside [0, {n}]")));
        }
        let k = (s.floor() as usize).min(self.len() - 1);
        let u = s - k as f64;
        Ok((1.0 - u) * self.w[k] + u * self.w[k + 1])
    }

    /// Sub-environment (𝓛_{l+1}, …, 𝓛_{l+n}): the time-shifted environment
    /// whose K, W restart from zero. Derived quantities are rebuilt from the
    /// same θ*.
    pub fn slice(&self, l: usize, n: usize) -> Result<Environment> {
        if l + n > self.len() {
            return Err(Error::range(format!(
                "slice [{},{}) exceeds environment length {}",
                l,
                l + n,
                self.len()
            )));
        }
        Environment::from_realization(self.l[l..l + n].to_vec(), self.theta_star)
    }

    /// Stable fingerprint of the realization (used as a cache key).
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64; // FNV offset basis
        for v in &self.l {
            h ^= u64::from(*v);
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h ^= self.theta_star.to_bits();
        crate::rng::mix64(h)
    }
}

/// The environment- and curve-dependent constants used by the start-shift
/// ratio bounds, bundled for reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsReport {
    /// `1 ∨ sup_{s∈[e,t]} |W_s|/(√s·√log s)`.
    pub c_log: f64,
    /// `C1(h) = 1 ∨ sup |h_t(s)|/√(1+s)`.
    pub c1: f64,
    /// `exp(−128 − 16C1² − 80C_log² − 134C1 − 96C_log − 32C1·C_log)`.
    pub c2: f64,
    /// `c1(λ) = √(8(λ+1))` (lower-case c₁, a function of the decay rate λ).
    pub c1_lambda: f64,
    /// `max{48, 128C_log², 64√3·C1, (32γ+128)⁴, 5c1(λ), 96C_log}`.
    pub c3: f64,
    /// The fitted barrier-decay exponent γ that entered C3.
    pub gamma: f64,
}

/// Compute the constants report for one environment, horizon and curve.
///
/// `gamma` is the fitted quenched-wall exponent; it is injected by the
/// caller (it is produced by the verification module) to keep this module
/// free of a dependency cycle.
pub fn env_constants(
    env: &Environment,
    t: f64,
    h: CurveKind,
    lambda: f64,
    gamma: f64,
) -> Result<ConstantsReport> {
    if t < std::f64::consts::E {
        return Err(Error::range(format!("t = {t} must be ≥ e")));
    }
    if t > env.len() as f64 {
        return Err(Error::range(format!(
            "t = {t} exceeds environment length {}",
            env.len()
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::range("lambda must be positive"));
    }

    // Sup over the integer grid restricted to [e, t], plus the interval
    // endpoints; W is piecewise linear so these candidate points pin the
    // ratio everywhere it can peak.
    let mut c_log: f64 = 1.0;
    let mut candidates: Vec<f64> = vec![std::f64::consts::E, t];
    let first_int = std::f64::consts::E.ceil() as usize;
    for k in first_int..=(t.floor() as usize) {
        candidates.push(k as f64);
    }
    for s in candidates {
        let ratio = env.w_at(s)?.abs() / (s.sqrt() * s.ln().sqrt());
        c_log = c_log.max(ratio);
    }

    let c1 = h.c1();
    let c2 = (-128.0
        - 16.0 * c1 * c1
        - 80.0 * c_log * c_log
        - 134.0 * c1
        - 96.0 * c_log
        - 32.0 * c1 * c_log)
        .exp();
    let c1_lambda = (8.0 * (lambda + 1.0)).sqrt();
    let c3 = [
        48.0,
        128.0 * c_log * c_log,
        64.0 * 3.0f64.sqrt() * c1,
        (32.0 * gamma + 128.0).powi(4),
        5.0 * c1_lambda,
        96.0 * c_log,
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);

    Ok(ConstantsReport {
        c_log,
        c1,
        c2,
        c1_lambda,
        c3,
        gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det2() -> EnvConfig {
        EnvConfig::new(OffspringLaw::Deterministic(2)).unwrap()
    }

    #[test]
    fn deterministic_two_scalars() {
        let cfg = det2();
        // θ* = √(2 ln 2), frozen to full precision.
        assert!((cfg.theta_star() - 1.177_410_022_515_474_7).abs() < 1e-15);
        let env = sample_environment(&cfg, 3, 99).unwrap();
        assert_eq!(env.offspring(), &[2, 2, 2]);
        // K_3 = 3·2ln2 = 6 ln 2.
        assert!((env.big_k(3).unwrap() - 4.158_883_083_359_672).abs() < 1e-12);
        assert_eq!(env.big_k(0).unwrap(), 0.0);
        for k in 1..=3 {
            let diff = env.big_k(k).unwrap() - env.big_k(k - 1).unwrap();
            assert!((diff - env.kappa_at(k).unwrap()).abs() < 1e-12);
        }
        // W vanishes identically when the realization equals the mean.
        for s in [0.0, 0.25, 1.0, 2.9, 3.0] {
            assert!(env.w_at(s).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_law_closed_forms() {
        let cfg = EnvConfig::new(OffspringLaw::UniformInt(2, 8)).unwrap();
        // E log 𝓛 = ln(8!)/7 over the 7-point range {2..8}.
        let want = (2..=8).map(|v| f64::from(v).ln()).sum::<f64>() / 7.0;
        assert!((cfg.e_log() - 1.514_943_271_820_750_2).abs() < 1e-12);
        assert!((cfg.e_log() - want).abs() < 1e-15);

        // Realization starting with 𝓛₁ = 2: W₁ = (ln2 + θ*²/2)/θ* − θ*,
        // which simplifies to ln2/θ* − θ*/2 (≈ −0.4721 for this law).
        let env = Environment::from_realization(vec![2, 5], cfg.theta_star()).unwrap();
        let theta = cfg.theta_star();
        let w1 = std::f64::consts::LN_2 / theta - theta / 2.0;
        assert!((env.w_at(1.0).unwrap() - w1).abs() < 1e-12);
        assert!((w1 - (-0.472_1)).abs() < 1e-4);
    }

    #[test]
    fn law_of_large_numbers_for_log_offspring() {
        let cfg = EnvConfig::new(OffspringLaw::UniformInt(2, 8)).unwrap();
        let n = 100_000;
        let env = sample_environment(&cfg, n, 20_240).unwrap();
        let logs: Vec<f64> = env.offspring().iter().map(|v| f64::from(*v).ln()).collect();
        let mean = logs.iter().sum::<f64>() / n as f64;
        let var = logs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
        let stderr = (var / n as f64).sqrt();
        assert!(
            (mean - cfg.e_log()).abs() < 3.0 * stderr,
            "sample mean {mean} vs {} (se {stderr})",
            cfg.e_log()
        );
    }

    #[test]
    fn recentered_increments_have_mean_zero() {
        let cfg = EnvConfig::new(OffspringLaw::UniformInt(2, 3)).unwrap();
        let n = 1_000_000;
        let env = sample_environment(&cfg, n, 7).unwrap();
        let w = env.w_all();
        let incs: Vec<f64> = (0..n).map(|k| w[k + 1] - w[k]).collect();
        let mean = incs.iter().sum::<f64>() / n as f64;
        let var = incs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
        let stderr = (var / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * stderr, "mean {mean}, se {stderr}");
    }

    #[test]
    fn interpolation_is_exact_and_piecewise_linear() {
        let cfg = EnvConfig::new(OffspringLaw::UniformInt(2, 6)).unwrap();
        let env = sample_environment(&cfg, 12, 5).unwrap();
        for (k, wk) in env.w_all().iter().enumerate() {
            assert_eq!(env.w_at(k as f64).unwrap(), *wk);
        }
        let (k, u) = (4usize, 0.37);
        let expect = (1.0 - u) * env.w_all()[k] + u * env.w_all()[k + 1];
        assert_eq!(env.w_at(k as f64 + u).unwrap(), expect);
        assert!(env.w_at(-0.1).is_err());
        assert!(env.w_at(12.5).is_err());
    }

    #[test]
    fn exp_k_equals_product_form() {
        let cfg = EnvConfig::new(OffspringLaw::UniformInt(2, 4)).unwrap();
        let env = sample_environment(&cfg, 30, 11).unwrap();
        let th = env.theta_star();
        let mut log_prod = 0.0;
        for k in 1..=30 {
            log_prod += f64::from(env.l_at(k).unwrap()).ln();
            let want = log_prod + k as f64 * th * th / 2.0;
            let got = env.big_k(k).unwrap();
            assert!(
                (got - want).abs() <= 1e-10 * want.abs().max(1.0),
                "k={k}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn determinism_and_prefix_consistency() {
        let cfg = EnvConfig::new(OffspringLaw::UniformInt(2, 5)).unwrap();
        let a = sample_environment(&cfg, 64, 1234).unwrap();
        let b = sample_environment(&cfg, 64, 1234).unwrap();
        assert_eq!(a, b);
        let longer = sample_environment(&cfg, 128, 1234).unwrap();
        assert_eq!(&longer.offspring()[..64], a.offspring());
        let c = sample_environment(&cfg, 64, 1235).unwrap();
        assert_ne!(a.offspring(), c.offspring());
    }

    #[test]
    fn slices_restart_cleanly() {
        let cfg = EnvConfig::new(OffspringLaw::UniformInt(2, 3)).unwrap();
        let env = sample_environment(&cfg, 40, 3).unwrap();
        let sub = env.slice(10, 20).unwrap();
        assert_eq!(sub.len(), 20);
        assert_eq!(sub.offspring(), &env.offspring()[10..30]);
        assert_eq!(sub.big_k(0).unwrap(), 0.0);
        let want = env.big_k(15).unwrap() - env.big_k(10).unwrap();
        assert!((sub.big_k(5).unwrap() - want).abs() < 1e-12);
        assert!(env.slice(30, 20).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(EnvConfig::new(OffspringLaw::Deterministic(1)).is_err());
        assert!(EnvConfig::new(OffspringLaw::UniformInt(1, 5)).is_err());
        assert!(EnvConfig::new(OffspringLaw::UniformInt(5, 3)).is_err());
        assert!(EnvConfig::new(OffspringLaw::Categorical {
            values: vec![2, 3],
            probs: vec![0.6, 0.5],
        })
        .is_err());
        assert!(EnvConfig::new(OffspringLaw::Categorical {
            values: vec![2, 3],
            probs: vec![0.5, 0.5],
        })
        .is_ok());
    }

    #[test]
    fn constants_report_values() {
        let env = sample_environment(&det2(), 64, 1).unwrap();
        let r = env_constants(&env, 64.0, CurveKind::Zero, 1.0, 0.5).unwrap();
        assert_eq!(r.c_log, 1.0); // W ≡ 0, clamp binds
        assert_eq!(r.c1, 1.0); // zero curve, clamp binds
        assert!((r.c1_lambda - 4.0).abs() < 1e-15); // √(8·2)
                                                    // C2 exponent collapses to the all-ones value.
        let want_c2 = (-(128.0 + 16.0 + 80.0 + 134.0 + 96.0 + 32.0f64)).exp();
        assert!((r.c2 - want_c2).abs() <= 1e-12 * want_c2);
        // C3 dominated by the (32γ+128)⁴ term at any plausible γ.
        assert!((r.c3 - (32.0 * 0.5 + 128.0f64).powi(4)).abs() < 1e-6);
        assert!(env_constants(&env, 2.0, CurveKind::Zero, 1.0, 0.5).is_err());
    }
}
