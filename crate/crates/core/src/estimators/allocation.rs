use crate::error::{Error, Result};

/// Sample counts per level or index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Allocation {
    pub samples: Vec<u64>,
    /// Every variance was zero; the counts are the floor of one sample each.
    pub degenerate: bool,
}

// Absorbs round-off in the pre-ceiling count so exact integers do not round up.
const CEIL_SLACK: f64 = 1e-12;

/// Work-minimizing sample counts meeting `sum V_l / M_l <= variance_target`:
/// `M_l = ceil(sqrt(V_l / W_l) * sum_k sqrt(V_k W_k) / variance_target)`, at least 1.
pub fn allocate_samples(variances: &[f64], works: &[f64], variance_target: f64) -> Result<Allocation> {
    if variances.len() != works.len() || variances.is_empty() {
        return Err(Error::invalid("variances and works must be non-empty and of equal length"));
    }
    if !(variance_target > 0.0) {
        return Err(Error::invalid("variance target must be positive"));
    }
    if variances.iter().any(|v| !(*v >= 0.0)) || works.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::invalid("need V >= 0 and W > 0"));
    }
    if variances.iter().all(|&v| v == 0.0) {
        return Ok(Allocation { samples: vec![1; variances.len()], degenerate: true });
    }
    let total: f64 = variances.iter().zip(works).map(|(v, w)| (v * w).sqrt()).sum();
    let samples = variances
        .iter()
        .zip(works)
        .map(|(&v, &w)| {
            let m = (v / w).sqrt() * total / variance_target;
            ((m * (1.0 - CEIL_SLACK)).ceil() as u64).max(1)
        })
        .collect();
    Ok(Allocation { samples, degenerate: false })
}
