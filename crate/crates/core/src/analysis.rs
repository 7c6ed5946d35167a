//! Rate regression and closed-form work-complexity predictors.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::estimators::normal_cdf;

/// Least-squares line through `(level, log2 |value|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    pub points_used: usize,
    /// Points skipped because their value was exactly zero (or not finite).
    pub zeros_excluded: usize,
}

/// Fits `log2 |value| = intercept + slope * level`. Needs three nonzero points.
pub fn fit_log2_rate(points: &[(u32, f64)]) -> Result<RateFit> {
    let xy: Vec<(f64, f64)> = points.iter().map(|&(l, v)| (l as f64, v)).collect();
    fit_line(&xy, |x| x)
}

/// Fits `log |y| = intercept + slope * log x`, both logarithms base 2.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.iter().any(|p| !(p.0 > 0.0)) {
        return Err(Error::invalid("power-law fit needs positive abscissae"));
    }
    fit_line(points, f64::log2)
}

fn fit_line(points: &[(f64, f64)], x_map: impl Fn(f64) -> f64) -> Result<RateFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, v)| *v != 0.0 && v.is_finite())
        .map(|&(x, v)| (x_map(x), v.abs().log2()))
        .collect();
    let zeros_excluded = points.len() - usable.len();
    if usable.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "rate fit needs at least 3 nonzero points, got {}",
            usable.len()
        )));
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("rate fit needs distinct abscissae".into()));
    }
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = usable.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(RateFit {
        slope,
        intercept,
        residual_rms: (rss / n).sqrt(),
        points_used: usable.len(),
        zeros_excluded,
    })
}

/// Like [`fit_log2_rate`] but drops level 0 when at least five usable points
/// are available, since the coarsest level is usually pre-asymptotic.
pub fn fit_asymptotic_rate(points: &[(u32, f64)], drop_coarsest: bool) -> Result<RateFit> {
    let usable = points.iter().filter(|(_, v)| *v != 0.0 && v.is_finite()).count();
    if drop_coarsest && usable >= 5 && points.iter().any(|p| p.0 == 0) {
        let kept: Vec<(u32, f64)> = points.iter().copied().filter(|p| p.0 != 0).collect();
        let mut fit = fit_log2_rate(&kept)?;
        fit.zeros_excluded = points.len() - usable;
        return Ok(fit);
    }
    fit_log2_rate(points)
}

/// Work `O(TOL^-a * log(1/TOL)^b)`, written `(a, b)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityLaw {
    pub tol_exponent: f64,
    pub log_exponent: f64,
}

impl ComplexityLaw {
    pub fn new(a: f64, b: f64) -> Self {
        Self { tol_exponent: a, log_exponent: b }
    }

    /// Predicted work at `tol`, up to a constant.
    pub fn work(&self, tol: f64) -> f64 {
        tol.powf(-self.tol_exponent) * (1.0 / tol).ln().powf(self.log_exponent)
    }
}

impl fmt::Display for ComplexityLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", fmt_exp(self.tol_exponent), fmt_exp(self.log_exponent))
    }
}

fn fmt_exp(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Multilevel work complexity: `a = 2 + (g_tilde - c_tilde)/w_tilde + max(0, (gamma - s)/w)`,
/// `b = 2` when `s = gamma`, else 0.
pub fn mlmc_complexity(w_tilde: f64, c_tilde: f64, g_tilde: f64, s: f64, gamma: f64, w: f64) -> Result<ComplexityLaw> {
    if !(w_tilde > 0.0) || !(w > 0.0) {
        return Err(Error::DegenerateProfile("weak-rate denominators must be positive".into()));
    }
    if !(c_tilde >= 0.0) || !(g_tilde >= 0.0) || !(s > 0.0) || !(gamma > 0.0) {
        return Err(Error::invalid("need s, gamma > 0 and c_tilde, g_tilde >= 0"));
    }
    let a = 2.0 + (g_tilde - c_tilde) / w_tilde + ((gamma - s) / w).max(0.0);
    let b = if same(s, gamma) { 2.0 } else { 0.0 };
    Ok(ComplexityLaw::new(a, b))
}

/// MIMC complexity in terms of the particle strong rate `s_p`, the time
/// strong rate `s_t` and the particle cost exponent `gamma_p`.
pub fn mimc_complexity(s_p: f64, s_t: f64, gamma_p: f64) -> Result<ComplexityLaw> {
    if !(s_p >= 0.0) || !(s_t > 0.0) || !(gamma_p >= 1.0) {
        return Err(Error::invalid("need s_p >= 0, s_t > 0, gamma_p >= 1"));
    }
    let zeta = ((gamma_p - s_p - 1.0) / 2.0).max((1.0 - s_t) / 2.0);
    let z = if same(gamma_p - s_p - 1.0, 1.0 - s_t) { 2.0 } else { 1.0 };
    let xi = ((2.0 - s_p) / gamma_p).min(2.0 - s_t);
    if xi < 0.0 && !same(xi, 0.0) {
        return Err(Error::DegenerateProfile(format!("xi = {xi} < 0: strong rates exceed the weak rates")));
    }
    let zeta_zero = same(zeta, 0.0);
    let p = if zeta < 0.0 && !zeta_zero {
        0.0
    } else if zeta_zero {
        2.0 * z
    } else if !same(xi, 0.0) {
        2.0 * (z - 1.0) * (zeta + 1.0)
    } else {
        1.0 + 2.0 * (z - 1.0) * (zeta + 1.0)
    };
    Ok(ComplexityLaw::new(2.0 + 2.0 * zeta.max(0.0), p))
}

/// Downward-closed index set `{alpha : w1*alpha1 + w2*alpha2 <= L}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    pub weights: [f64; 2],
    pub level: f64,
    /// Sorted lexicographically.
    pub members: Vec<(u32, u32)>,
}

// Guards membership against round-off in `w1*a1 + w2*a2`.
const LEVEL_SLACK: f64 = 1e-9;

/// Penalty weights `(1 - s_p + gamma_p, 3 - s_t)` of the optimal index set.
pub fn index_weights(s_p: f64, s_t: f64, gamma_p: f64) -> Result<[f64; 2]> {
    let w = [1.0 - s_p + gamma_p, 3.0 - s_t];
    if !(w[0] > 0.0) || !(w[1] > 0.0) {
        return Err(Error::DegenerateProfile(format!("index-set weights {w:?} must be positive")));
    }
    Ok(w)
}

pub fn build_index_set(level: f64, s_p: f64, s_t: f64, gamma_p: f64) -> Result<MultiIndexSet> {
    MultiIndexSet::with_weights(index_weights(s_p, s_t, gamma_p)?, level)
}

impl MultiIndexSet {
    pub fn with_weights(weights: [f64; 2], level: f64) -> Result<Self> {
        if !(weights[0] > 0.0) || !(weights[1] > 0.0) || !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::DegenerateProfile(format!("index-set weights {weights:?} must be positive")));
        }
        if !(level >= 0.0) || !level.is_finite() {
            return Err(Error::invalid(format!("index-set level must be >= 0, got {level}")));
        }
        let mut members = Vec::new();
        let max1 = (level / weights[0] + LEVEL_SLACK).floor() as u32;
        for a1 in 0..=max1 {
            let rest = level - weights[0] * a1 as f64;
            let max2 = (rest / weights[1] + LEVEL_SLACK).floor().max(0.0) as u32;
            members.extend((0..=max2).map(|a2| (a1, a2)));
        }
        Ok(Self { weights, level, members })
    }

    pub fn weight(&self, alpha: (u32, u32)) -> f64 {
        self.weights[0] * alpha.0 as f64 + self.weights[1] * alpha.1 as f64
    }

    pub fn contains(&self, alpha: (u32, u32)) -> bool {
        self.members.binary_search(&alpha).is_ok()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Smallest weighted sum strictly above the current level.
    pub fn next_level(&self) -> f64 {
        let [w1, w2] = self.weights;
        let cutoff = self.level + LEVEL_SLACK * self.level.max(1.0);
        let mut best = f64::INFINITY;
        let max1 = (self.level / w1).floor() as u32 + 1;
        for a1 in 0..=max1 {
            let base = w1 * a1 as f64;
            // smallest a2 with base + w2*a2 above the cutoff
            let a2 = if base > cutoff { 0.0 } else { ((cutoff - base) / w2).floor() + 1.0 };
            best = best.min(base + w2 * a2);
        }
        best
    }

    /// The set at the next level.
    pub fn grown(&self) -> Self {
        Self::with_weights(self.weights, self.next_level()).expect("weights already validated")
    }

    /// Members of `outer` missing from `self`.
    pub fn boundary(&self, outer: &MultiIndexSet) -> Vec<(u32, u32)> {
        outer.members.iter().copied().filter(|&a| !self.contains(a)).collect()
    }

    pub fn is_downward_closed(&self) -> bool {
        self.members.iter().all(|&(a1, a2)| {
            (a1 == 0 || self.members.contains(&(a1 - 1, a2))) && (a2 == 0 || self.members.contains(&(a1, a2 - 1)))
        })
    }
}

/// Rows of the work-complexity table.
pub const TABLE1_METHODS: [&str; 5] = ["MC", "MLMC-N", "MLMC-P", "MLMC-joint", "MIMC"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Entry {
    pub method: &'static str,
    pub s_t: f64,
    pub gamma_p: f64,
    pub law: ComplexityLaw,
}

/// The 5 x 4 table of complexity laws over `(s_t, gamma_p)` in `{1, 2}^2`,
/// with the partitioning particle estimator (`s_p = 1`). Row-major, columns
/// ordered `(1,1), (1,2), (2,1), (2,2)`.
pub fn table1() -> Vec<Table1Entry> {
    let s_p = 1.0;
    let mut out = Vec::with_capacity(20);
    for method in TABLE1_METHODS {
        for s_t in [1.0, 2.0] {
            for gamma_p in [1.0, 2.0] {
                let law = method_law(method, s_p, s_t, gamma_p).expect("table inputs are valid");
                out.push(Table1Entry { method, s_t, gamma_p, law });
            }
        }
    }
    out
}

/// Complexity of one of [`TABLE1_METHODS`] at the given rates.
pub fn method_law(method: &str, s_p: f64, s_t: f64, gamma_p: f64) -> Result<ComplexityLaw> {
    match method {
        "MC" => Ok(ComplexityLaw::new(2.0 + gamma_p, 0.0)),
        "MLMC-N" => mlmc_complexity(1.0, 1.0, gamma_p, s_t, 1.0, 1.0),
        "MLMC-P" => mlmc_complexity(1.0, 0.0, 1.0, s_p + 1.0, gamma_p, 1.0),
        "MLMC-joint" => mlmc_complexity(1.0, 0.0, 0.0, 1.0 + s_p.min(s_t), gamma_p + 1.0, 1.0),
        "MIMC" => mimc_complexity(s_p, s_t, gamma_p),
        other => Err(Error::invalid(format!("unknown method {other}"))),
    }
}

/// Kolmogorov-Smirnov distance between the empirical law of `samples` and N(0, 1).
pub fn ks_distance_standard_normal(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() || samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InsufficientData("KS distance needs finite samples".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max))
}
