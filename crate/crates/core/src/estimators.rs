//! Single-node private estimators. Each returns an integral, nonnegative count
//! histogram whose total equals the node's public group count.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hist::{CountHistogram, CumulativeHistogram, SizeBound, UnattributedHistogram};
use crate::isotonic::{isotonic_constrained, isotonic_l2_uniform, IsotonicFit, Norm};
use crate::noise::{DoubleGeometric, NoiseScale, PrivacyBudget};

/// Global L1 sensitivity of the truncated count histogram.
pub const NAIVE_SENSITIVITY: f64 = 2.0;
/// Global L1 sensitivity of the unattributed and cumulative histograms.
pub const UNIT_SENSITIVITY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Naive,
    Hg,
    #[serde(alias = "hc")]
    HcL1,
    HcL2,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Hg => "hg",
            EstimatorKind::HcL1 => "hc-l1",
            EstimatorKind::HcL2 => "hc-l2",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "naive" => Ok(EstimatorKind::Naive),
            "hg" => Ok(EstimatorKind::Hg),
            "hc" | "hc-l1" | "hc_l1" => Ok(EstimatorKind::HcL1),
            "hc-l2" | "hc_l2" => Ok(EstimatorKind::HcL2),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Parses a comma-separated list such as `hg,hc,hc`.
pub fn parse_kinds(s: &str) -> Result<Vec<EstimatorKind>> {
    s.split(',').map(str::parse).collect()
}

#[derive(Debug, Clone)]
pub struct NodeEstimate {
    pub hat_h: CountHistogram,
    pub hat_hg: UnattributedHistogram,
    /// Isotonic fit behind the estimate (over sizes for `Hg`, over cumulative counts
    /// for `Hc`); absent for the naive estimator.
    pub fit: Option<IsotonicFit>,
    pub kind: EstimatorKind,
    pub eps_used: PrivacyBudget,
}

impl NodeEstimate {
    fn from_counts(
        hat_h: CountHistogram,
        fit: Option<IsotonicFit>,
        kind: EstimatorKind,
        eps_used: PrivacyBudget,
    ) -> Self {
        let hat_hg = hat_h.to_unattributed();
        Self { hat_h, hat_hg, fit, kind, eps_used }
    }
}

/// Rounds to integers summing to `total`: every cell is floored, then the cells with
/// the largest fractional parts (lower index first on ties) are rounded up.
pub fn round_largest_fractional(v: &[f64], total: u64) -> Result<Vec<u64>> {
    if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::InfeasibleTotal { total, reason: format!("cell value {bad}") });
    }
    let mut out: Vec<u64> = v.iter().map(|x| x.floor() as u64).collect();
    let floor_sum: u64 = out.iter().sum();
    if floor_sum > total {
        return Err(Error::InfeasibleTotal { total, reason: format!("floors already sum to {floor_sum}") });
    }
    let r = (total - floor_sum) as usize;
    let mut order: Vec<usize> = (0..v.len()).filter(|&i| v[i].fract() > 0.0).collect();
    if r > order.len() {
        return Err(Error::InfeasibleTotal {
            total,
            reason: format!("needs {r} round-ups, only {} fractional cells", order.len()),
        });
    }
    order.sort_by(|&a, &b| v[b].fract().total_cmp(&v[a].fract()).then(a.cmp(&b)));
    for &i in &order[..r] {
        out[i] += 1;
    }
    Ok(out)
}

/// Euclidean projection onto `{x >= 0, sum x = total}` by the sorted-threshold method.
pub fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    if total <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = u[0] - total;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - total) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn noisy_f64<R: Rng + ?Sized>(values: &[u64], scale: NoiseScale, rng: &mut R) -> Vec<f64> {
    let dist = DoubleGeometric::new(scale);
    values.iter().map(|&v| (v as i64 + dist.sample(rng)) as f64).collect()
}

/// Noise on every cell of the truncated count histogram, projection onto the simplex,
/// then largest-remainder rounding.
pub fn estimate_naive<R: Rng + ?Sized>(
    h: &CountHistogram,
    g: u64,
    k: SizeBound,
    eps: PrivacyBudget,
    rng: &mut R,
) -> Result<NodeEstimate> {
    if h.total() != g {
        return Err(Error::TotalMismatch { left: h.total(), right: g });
    }
    let truncated = h.truncate_extend(k);
    let scale = NoiseScale::for_sensitivity(NAIVE_SENSITIVITY, eps);
    let noisy = noisy_f64(truncated.counts(), scale, rng);
    let projected = project_simplex(&noisy, g as f64);
    let rounded = round_largest_fractional(&projected, g)?;
    Ok(NodeEstimate::from_counts(CountHistogram::new(rounded), None, EstimatorKind::Naive, eps))
}

/// Noise on every sorted group size, least-squares isotonic fit floored at 0, rounding.
///
/// A node without groups yields the empty estimate and consumes no randomness.
pub fn estimate_hg<R: Rng + ?Sized>(
    hg: &UnattributedHistogram,
    eps: PrivacyBudget,
    rng: &mut R,
) -> NodeEstimate {
    if hg.is_empty() {
        return NodeEstimate {
            hat_h: CountHistogram::default(),
            hat_hg: UnattributedHistogram::default(),
            fit: Some(IsotonicFit::from_values(Vec::new())),
            kind: EstimatorKind::Hg,
            eps_used: eps,
        };
    }
    let scale = NoiseScale::for_sensitivity(UNIT_SENSITIVITY, eps);
    let noisy = noisy_f64(hg.sizes(), scale, rng);
    let fit = isotonic_l2_uniform(&noisy).clamped(0.0, f64::INFINITY);
    // rounding preserves order; ties round up since values are nonnegative
    let sizes: Vec<u64> = fit.values().iter().map(|v| v.round() as u64).collect();
    let hat_hg = UnattributedHistogram::from_sorted_unchecked(sizes);
    NodeEstimate { hat_h: hat_hg.to_counts(), hat_hg, fit: Some(fit), kind: EstimatorKind::Hg, eps_used: eps }
}

/// Noise on every cell of the cumulative histogram, isotonic fit with lower bound 0 and
/// the last cell pinned to `g`, rounding, then differencing back to counts.
pub fn estimate_hc<R: Rng + ?Sized>(
    hc: &CumulativeHistogram,
    g: u64,
    k: SizeBound,
    eps: PrivacyBudget,
    norm: Norm,
    rng: &mut R,
) -> Result<NodeEstimate> {
    if hc.len() != k.cells() {
        return Err(Error::Config(format!(
            "cumulative histogram has {} cells, bound {k} needs {}",
            hc.len(),
            k.cells()
        )));
    }
    if hc.total() != g {
        return Err(Error::TotalMismatch { left: hc.total(), right: g });
    }
    let scale = NoiseScale::for_sensitivity(UNIT_SENSITIVITY, eps);
    let noisy = noisy_f64(hc.csums(), scale, rng);
    let fit = isotonic_constrained(&noisy, norm, 0.0, g as f64)?;
    let mut running = 0u64;
    let csums: Vec<u64> = fit
        .values()
        .iter()
        .map(|v| {
            running = running.max((v + 0.5).floor() as u64);
            running
        })
        .collect();
    debug_assert_eq!(csums.last().copied(), Some(g));
    let hat_hc = CumulativeHistogram::new(csums)?;
    let kind = match norm {
        Norm::L1 => EstimatorKind::HcL1,
        Norm::L2 => EstimatorKind::HcL2,
    };
    Ok(NodeEstimate::from_counts(CountHistogram::from_cumulative(&hat_hc), Some(fit), kind, eps))
}

/// Runs the estimator `kind` on a node's true histogram.
pub fn estimate<R: Rng + ?Sized>(
    kind: EstimatorKind,
    h: &CountHistogram,
    k: SizeBound,
    eps: PrivacyBudget,
    rng: &mut R,
) -> Result<NodeEstimate> {
    let g = h.total();
    match kind {
        EstimatorKind::Naive => estimate_naive(h, g, k, eps, rng),
        EstimatorKind::Hg => Ok(estimate_hg(&h.to_unattributed(), eps, rng)),
        EstimatorKind::HcL1 | EstimatorKind::HcL2 => {
            let norm = if kind == EstimatorKind::HcL1 { Norm::L1 } else { Norm::L2 };
            let hc = h.truncate_extend(k).to_cumulative();
            estimate_hc(&hc, g, k, eps, norm, rng)
        }
    }
}
