//! Analytical cost model comparing binned partitioned search with searching a
//! fully encrypted relation.
//!
//! Costs are in abstract units. `C_e` is the per-tuple cost of the encrypted
//! search scan, `C_p` the cost of one plaintext index probe step and `C_com`
//! the cost of shipping one tuple. The plaintext search term uses `log2(D)`.

use std::fmt::Write as _;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::BinLayout;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("invalid cost parameter `{name}`: {reason}")]
    Param { name: &'static str, reason: String },
    #[error("bad sweep term `{0}`: expected key=value, key=a,b,c or key=lo..hi[:n]")]
    Sweep(String),
    #[error("unknown sweep key `{0}`")]
    UnknownKey(String),
}

fn bad(name: &'static str, reason: impl Into<String>) -> CostError {
    CostError::Param { name, reason: reason.into() }
}

/// Model parameters. `d = s + ns`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams<T> {
    pub c_com: T,
    pub c_p: T,
    pub c_e: T,
    pub s: T,
    pub ns: T,
    pub rho: T,
}

fn positive<T: Float>(v: T) -> bool {
    v > T::zero()
}

fn lit<T: FromPrimitive>(v: f64) -> T {
    T::from_f64(v).expect("literal representable")
}

impl<T: Float + FromPrimitive> CostParams<T> {
    pub fn new(c_com: T, c_p: T, c_e: T, s: T, ns: T, rho: T) -> Result<Self, CostError> {
        let p = CostParams { c_com, c_p, c_e, s, ns, rho };
        p.validate()?;
        Ok(p)
    }

    /// `C_e = 1`, `C_p = 1/beta`, `C_com = 1/gamma`, `S = alpha * D`.
    pub fn from_ratios(alpha: T, beta: T, gamma: T, rho: T, d: T) -> Result<Self, CostError> {
        if !positive(beta) {
            return Err(bad("beta", "must be positive"));
        }
        if !positive(gamma) {
            return Err(bad("gamma", "must be positive"));
        }
        if !positive(d) {
            return Err(bad("d", "must be positive"));
        }
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return Err(bad("alpha", "must be in [0, 1]"));
        }
        let s = alpha * d;
        Self::new(T::one() / gamma, T::one() / beta, T::one(), s, d - s, rho)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        for (name, v) in [("c_com", self.c_com), ("c_p", self.c_p), ("c_e", self.c_e)] {
            if !positive(v) || !v.is_finite() {
                return Err(bad(name, "must be positive and finite"));
            }
        }
        if self.s.is_sign_negative() || self.ns.is_sign_negative() || !positive(self.d()) {
            return Err(bad("d", "sizes must be non-negative with a positive total"));
        }
        if !(self.rho > T::zero() && self.rho <= T::one()) {
            return Err(bad("rho", "must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn d(&self) -> T {
        self.s + self.ns
    }

    pub fn alpha(&self) -> T {
        self.s / self.d()
    }

    pub fn beta(&self) -> T {
        self.c_e / self.c_p
    }

    pub fn gamma(&self) -> T {
        self.c_e / self.c_com
    }

    /// Default bin size, `ceil(sqrt(NS))`.
    pub fn default_bin(&self) -> T {
        self.ns.sqrt().ceil()
    }
}

/// `x` plaintext selections over `d` tuples: `x (log2(d) C_p + rho d C_com)`.
pub fn cost_plain<T: Float + FromPrimitive>(x: T, d: T, p: &CostParams<T>) -> T {
    let log = if d > T::zero() { d.log2() } else { T::zero() };
    x * (log * p.c_p + p.rho * d * p.c_com)
}

/// `x` encrypted selections answered by one scan of `d` tuples: `C_e d + rho x d C_com`.
pub fn cost_crypt<T: Float + FromPrimitive>(x: T, d: T, p: &CostParams<T>) -> T {
    p.c_e * d + p.rho * x * d * p.c_com
}

/// Binned search cost over full-encryption cost, before simplification.
///
/// Selectivity is taken relative to the whole relation on both sides, so the
/// numerator is `C_e S + rho |SB| D C_com + |NSB| log2(D) C_p + rho |NSB| D C_com`.
pub fn eta_exact<T: Float + FromPrimitive>(p: &CostParams<T>, sb: T, nsb: T) -> T {
    let d = p.d();
    let sensitive = p.c_e * p.s + p.rho * sb * d * p.c_com;
    let plain = nsb * (d.log2() * p.c_p + p.rho * d * p.c_com);
    (sensitive + plain) / cost_crypt(T::one(), d, p)
}

/// `alpha + rho (|SB| + |NSB|) / gamma`.
pub fn eta_simplified<T: Float + FromPrimitive>(p: &CostParams<T>, sb: T, nsb: T) -> T {
    p.alpha() + p.rho * (sb + nsb) / p.gamma()
}

/// Largest sensitive fraction for which binning beats full encryption when
/// `rho = 1/NS` and both bins hold about `sqrt(NS)` values: `1 - 2 / (gamma sqrt(NS))`.
pub fn qb_threshold<T: Float + FromPrimitive>(gamma: T, ns: T) -> T {
    T::one() - lit::<T>(2.0) / (gamma * ns.sqrt())
}

/// Whether `p.alpha()` is below [`qb_threshold`], and the threshold.
pub fn qb_beneficial<T: Float + FromPrimitive>(p: &CostParams<T>) -> (bool, T) {
    let t = qb_threshold(p.gamma(), p.ns);
    (p.alpha() < t, t)
}

/// Observed work of one binned query and of the same query on a fully encrypted copy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasuredCosts {
    pub enc_scanned: u64,
    pub enc_transferred: u64,
    pub plain_lookups: u64,
    pub plain_transferred: u64,
    pub full_scanned: u64,
    pub full_transferred: u64,
}

/// [`eta_exact`] with observed counts in place of the model terms.
pub fn eta_measured(p: &CostParams<f64>, m: &MeasuredCosts) -> f64 {
    let f = |v: u64| v as f64;
    let num = p.c_e * f(m.enc_scanned)
        + p.c_com * f(m.enc_transferred)
        + p.c_p * p.d().log2() * f(m.plain_lookups)
        + p.c_com * f(m.plain_transferred);
    num / (p.c_e * f(m.full_scanned) + p.c_com * f(m.full_transferred))
}

/// Bin sizes a single query fetches under `layout`: the largest sensitive and
/// non-sensitive bins.
pub fn layout_bin_sizes(layout: &BinLayout) -> (usize, usize) {
    let d = layout.diagnostics();
    (d.sb_sizes.iter().copied().max().unwrap_or(0), d.nsb_sizes.iter().copied().max().unwrap_or(0))
}

/// Parameters as written in a config file; either absolute costs or ratios.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub c_com: Option<f64>,
    pub c_p: Option<f64>,
    pub c_e: Option<f64>,
    pub s: Option<f64>,
    pub ns: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub d: Option<f64>,
    pub rho: Option<f64>,
}

pub const DEFAULT_D: f64 = 1e6;
pub const DEFAULT_BETA: f64 = 1e4;
pub const DEFAULT_GAMMA: f64 = 25_000.0;
pub const DEFAULT_ALPHA: f64 = 0.5;

impl CostConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CostError> {
        toml::from_str(text).map_err(|e| bad("config", e.to_string()))
    }

    /// Absolute costs win when all three are given; otherwise ratios with defaults.
    /// `rho` defaults to `1/NS`.
    pub fn resolve(&self) -> Result<CostParams<f64>, CostError> {
        if let (Some(c_com), Some(c_p), Some(c_e)) = (self.c_com, self.c_p, self.c_e) {
            let (s, ns) = match (self.s, self.ns) {
                (Some(s), Some(ns)) => (s, ns),
                _ => {
                    let d = self.d.unwrap_or(DEFAULT_D);
                    let s = self.alpha.unwrap_or(DEFAULT_ALPHA) * d;
                    (s, d - s)
                }
            };
            return CostParams::new(c_com, c_p, c_e, s, ns, self.rho.unwrap_or(1.0 / ns.max(1.0)));
        }
        let d = match (self.s, self.ns) {
            (Some(s), Some(ns)) => s + ns,
            _ => self.d.unwrap_or(DEFAULT_D),
        };
        let alpha = match (self.s, self.ns) {
            (Some(s), Some(_)) if d > 0.0 => s / d,
            _ => self.alpha.unwrap_or(DEFAULT_ALPHA),
        };
        let ns = d - alpha * d;
        CostParams::from_ratios(
            alpha,
            self.beta.unwrap_or(DEFAULT_BETA),
            self.gamma.unwrap_or(DEFAULT_GAMMA),
            self.rho.unwrap_or(1.0 / ns.max(1.0)),
            d,
        )
    }
}

/// Single-point report for a parameter set and bin sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaReport {
    pub params: CostParams<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub d: f64,
    pub sb: f64,
    pub nsb: f64,
    pub eta_exact: f64,
    pub eta_simplified: f64,
    pub threshold: f64,
    pub beneficial: bool,
}

pub fn eta_report(p: &CostParams<f64>, sb: f64, nsb: f64) -> EtaReport {
    let (beneficial, threshold) = qb_beneficial(p);
    EtaReport {
        params: *p,
        alpha: p.alpha(),
        beta: p.beta(),
        gamma: p.gamma(),
        d: p.d(),
        sb,
        nsb,
        eta_exact: eta_exact(p, sb, nsb),
        eta_simplified: eta_simplified(p, sb, nsb),
        threshold,
        beneficial,
    }
}

const SWEEP_KEYS: [&str; 7] = ["alpha", "beta", "gamma", "rho", "d", "sb", "nsb"];

/// One swept parameter and its values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub key: String,
    pub values: Vec<f64>,
}

impl Axis {
    /// Parses `key=v`, `key=v1,v2` or `key=lo..hi[:n]`. Ranges over `beta`,
    /// `gamma` and `d` are log-spaced, others linear; `n` defaults to 11.
    pub fn parse(term: &str) -> Result<Axis, CostError> {
        let err = || CostError::Sweep(term.to_string());
        let (key, spec) = term.split_once('=').ok_or_else(err)?;
        let key = key.trim().to_ascii_lowercase();
        if !SWEEP_KEYS.contains(&key.as_str()) {
            return Err(CostError::UnknownKey(key));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| err());
        let values = if let Some((lo, rest)) = spec.split_once("..") {
            let (hi, n) = match rest.split_once(':') {
                Some((hi, n)) => (hi, n.trim().parse::<usize>().map_err(|_| err())?),
                None => (rest, 11),
            };
            let (lo, hi) = (num(lo)?, num(hi)?);
            if n < 2 || hi < lo {
                return Err(err());
            }
            let log = matches!(key.as_str(), "beta" | "gamma" | "d") && lo > 0.0;
            (0..n)
                .map(|i| {
                    let t = i as f64 / (n - 1) as f64;
                    if i == n - 1 {
                        hi
                    } else if log {
                        lo * (hi / lo).powf(t)
                    } else {
                        (lo * (n - 1 - i) as f64 + hi * i as f64) / (n - 1) as f64
                    }
                })
                .collect()
        } else {
            spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
        };
        if values.is_empty() {
            return Err(err());
        }
        Ok(Axis { key, values })
    }
}

/// Sweep over the cartesian product of axes, later axes varying fastest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axes: Vec<Axis>,
}

impl SweepSpec {
    pub fn parse<S: AsRef<str>>(terms: &[S]) -> Result<Self, CostError> {
        let mut axes: Vec<Axis> = Vec::new();
        for t in terms {
            let a = Axis::parse(t.as_ref())?;
            axes.retain(|x| x.key != a.key);
            axes.push(a);
        }
        Ok(SweepSpec { axes })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub d: f64,
    pub sb: f64,
    pub nsb: f64,
    pub eta_exact: f64,
    pub eta_simplified: f64,
}

/// Evaluates every point of the sweep. Unswept parameters use the defaults,
/// `rho = 1/NS` and `ceil(sqrt(NS))` bins; points with invalid parameters are skipped.
pub fn emit_curves(spec: &SweepSpec) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; spec.axes.len()];
    loop {
        let get = |k: &str| spec.axes.iter().zip(&idx).find(|(a, _)| a.key == k).map(|(a, &i)| a.values[i]);
        let d = get("d").unwrap_or(DEFAULT_D);
        let alpha = get("alpha").unwrap_or(DEFAULT_ALPHA);
        let ns = d - alpha * d;
        let rho = get("rho").unwrap_or(1.0 / ns.max(1.0));
        let beta = get("beta").unwrap_or(DEFAULT_BETA);
        let gamma = get("gamma").unwrap_or(DEFAULT_GAMMA);
        if let Ok(p) = CostParams::from_ratios(alpha, beta, gamma, rho, d) {
            let sb = get("sb").unwrap_or_else(|| p.default_bin());
            let nsb = get("nsb").unwrap_or_else(|| p.default_bin());
            out.push(CurvePoint {
                alpha,
                beta,
                gamma,
                rho,
                d,
                sb,
                nsb,
                eta_exact: eta_exact(&p, sb, nsb),
                eta_simplified: eta_simplified(&p, sb, nsb),
            });
        }
        let mut k = idx.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < spec.axes[k].values.len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("alpha,beta,gamma,rho,d,sb,nsb,eta_exact,eta_simplified\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{},{},{},{},{},{}", p.alpha, p.beta, p.gamma, p.rho, p.d, p.sb, p.nsb, p.eta_exact, p.eta_simplified);
    }
    s
}
