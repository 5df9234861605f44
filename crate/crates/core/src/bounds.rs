//! Bounds on conditional cdfs, quantiles, CQTE and ATE under conditional
//! c-dependence, the ATE breakdown point, and leave-out-variable diagnostics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::empirical::{CellEstimates, CellTheta};
use crate::error::{Error, Result};

/// Clamp applied to perturbed quantile levels.
pub const LEVEL_CLAMP: f64 = 1e-9;

/// Default number of interior quadrature points in `(0,1)` for ATE bounds.
pub const DEFAULT_TAU_POINTS: usize = 999;

/// Default bisection tolerance for breakdown points.
pub const DEFAULT_BISECTION_TOL: f64 = 1e-4;

/// Lower and upper cdf bounds for a cdf value `f` at propensity `p`.
///
/// Requires `0 <= c < p`; results are clipped to `[0,1]`.
#[inline]
pub fn cdf_bound_values(f: f64, p: f64, c: f64) -> (f64, f64) {
    let fp = f * p;
    let upper = (fp / (p - c)).min((fp + c) / (p + c));
    let lower = (fp / (p + c)).max((fp - c) / (p - c));
    (lower.clamp(0.0, 1.0), upper.clamp(0.0, 1.0))
}

pub(crate) fn check_c(c: f64, p: f64) -> Result<()> {
    if !(c >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative sensitivity c = {c}")));
    }
    if c >= p {
        return Err(Error::CExceedsRegion { c, p });
    }
    Ok(())
}

/// Bounds on `F_{Y_x|W}(y|w)` under c-dependence.
pub fn cdf_bounds(ce: &CellEstimates, y: f64, x: u8, w: usize, c: f64) -> Result<(f64, f64)> {
    let cell = ce.cell(w)?;
    let p = cell.propensity(x);
    check_c(c, p)?;
    Ok(cdf_bound_values(cell.marginal(x).cdf(y), p, c))
}

/// Levels `(lower, upper)` at which the observed quantile is read off to
/// bound the potential-outcome quantile at `tau`.
#[inline]
pub fn shifted_levels(tau: f64, p: f64, c: f64) -> (f64, f64) {
    let d = c / p * tau.min(1.0 - tau);
    (
        (tau - d).clamp(LEVEL_CLAMP, 1.0 - LEVEL_CLAMP),
        (tau + d).clamp(LEVEL_CLAMP, 1.0 - LEVEL_CLAMP),
    )
}

/// Bounds on `Q_{Y_x|W}(tau|w)`.
pub fn quantile_bounds(
    ce: &CellEstimates,
    tau: f64,
    x: u8,
    w: usize,
    c: f64,
) -> Result<(f64, f64)> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidLevel(tau));
    }
    let cell = ce.cell(w)?;
    let p = cell.propensity(x);
    check_c(c, p)?;
    let (lo, hi) = shifted_levels(tau, p, c);
    let m = cell.marginal(x);
    Ok((m.quantile(lo), m.quantile(hi)))
}

/// Bounds on `CQTE(tau|w)`.
pub fn cqte_bounds(ce: &CellEstimates, tau: f64, w: usize, c: f64) -> Result<(f64, f64)> {
    let (l1, u1) = quantile_bounds(ce, tau, 1, w, c)?;
    let (l0, u0) = quantile_bounds(ce, tau, 0, w, c)?;
    Ok((l1 - u0, u1 - l0))
}

/// Interval for an average effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Interior levels `i/(G+1)` and quadrature weights: trapezoid between the
/// nodes, tail strips filled with the nearest node value.
pub fn tau_quadrature(points: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(points >= 1);
    let h = 1.0 / (points + 1) as f64;
    let taus = (1..=points).map(|i| i as f64 * h).collect();
    let mut weights = vec![h; points];
    if points == 1 {
        weights[0] = 1.0;
    } else {
        weights[0] = 1.5 * h;
        weights[points - 1] = 1.5 * h;
    }
    (taus, weights)
}

/// Precomputed quadrature rule for ATE bounds.
#[derive(Debug, Clone)]
pub struct TauRule {
    taus: Vec<f64>,
    weights: Vec<f64>,
}

impl TauRule {
    pub fn new(points: usize) -> Self {
        let (taus, weights) = tau_quadrature(points);
        TauRule { taus, weights }
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    /// `(∫ Q_lower, ∫ Q_upper)` for arm `x` of `cell`.
    fn integrated_quantile_bounds(&self, cell: &CellTheta, x: u8, c: f64) -> (f64, f64) {
        let p = cell.propensity(x);
        let m = cell.marginal(x);
        let g = self.taus.len();
        let mut lo_lv = Vec::with_capacity(g);
        let mut hi_lv = Vec::with_capacity(g);
        for &t in &self.taus {
            let (a, b) = shifted_levels(t, p, c);
            lo_lv.push(a);
            hi_lv.push(b);
        }
        let mut q = vec![0.0; g];
        m.quantiles_sorted(&lo_lv, &mut q);
        let lower: f64 = q.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        m.quantiles_sorted(&hi_lv, &mut q);
        let upper: f64 = q.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        (lower, upper)
    }

    fn cate(&self, cell: &CellTheta, c: f64) -> AteBounds {
        let (l1, u1) = self.integrated_quantile_bounds(cell, 1, c);
        let (l0, u0) = self.integrated_quantile_bounds(cell, 0, c);
        AteBounds {
            lower: l1 - u0,
            upper: u1 - l0,
        }
    }
}

impl Default for TauRule {
    fn default() -> Self {
        TauRule::new(DEFAULT_TAU_POINTS)
    }
}

/// Bounds on `CATE(w)`.
pub fn cate_bounds(ce: &CellEstimates, w: usize, c: f64, rule: &TauRule) -> Result<AteBounds> {
    let cell = ce.cell(w)?;
    check_c(c, cell.p1.min(1.0 - cell.p1))?;
    Ok(rule.cate(cell, c))
}

/// Bounds on the ATE: mass-weighted CATE bounds.
pub fn ate_bounds(ce: &CellEstimates, c: f64, rule: &TauRule) -> Result<AteBounds> {
    check_c(c, ce.c_max())?;
    let mut out = AteBounds {
        lower: 0.0,
        upper: 0.0,
    };
    for cell in ce.cells() {
        let b = rule.cate(cell, c);
        out.lower += cell.mass * b.lower;
        out.upper += cell.mass * b.upper;
    }
    Ok(out)
}

/// Result of a breakdown-point search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakdownPoint {
    pub value: f64,
    /// The conclusion already fails at `c = 0`.
    pub degenerate: bool,
    /// The lower bound never crossed the threshold inside the search window;
    /// `value` is the window end.
    pub not_reached: bool,
}

/// `inf{c : ATE_lower(c) <= mu}` by bisection on `[0, c_search_max]`.
pub fn ate_breakdown_point(
    ce: &CellEstimates,
    mu: f64,
    c_search_max: f64,
    tol: f64,
    rule: &TauRule,
) -> Result<BreakdownPoint> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("bisection tolerance must be positive".into()));
    }
    let lower = |c: f64| ate_bounds(ce, c, rule).map(|b| b.lower);
    if lower(0.0)? <= mu {
        return Ok(BreakdownPoint {
            value: 0.0,
            degenerate: true,
            not_reached: false,
        });
    }
    if lower(c_search_max)? > mu {
        return Ok(BreakdownPoint {
            value: c_search_max,
            degenerate: false,
            not_reached: true,
        });
    }
    let (mut lo, mut hi) = (0.0, c_search_max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if lower(mid)? > mu {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BreakdownPoint {
        value: 0.5 * (lo + hi),
        degenerate: false,
        not_reached: false,
    })
}

fn treated_share(groups: &BTreeMap<Vec<u64>, [usize; 2]>, key: &[u64]) -> f64 {
    let c = groups[key];
    c[1] as f64 / (c[0] + c[1]) as f64
}

/// Largest absolute gap, over the observed covariate cells, between the
/// propensity given all covariates and the propensity given all but
/// covariate `k`.
pub fn leave_out_k_cbar(ds: &Dataset, k: usize) -> Result<f64> {
    let kk = ds.covariate_names().len();
    if k >= kk {
        return Err(Error::InvalidArgument(format!(
            "covariate index {k} out of range for {kk} covariates"
        )));
    }
    let bits = |row: &[f64], skip: Option<usize>| -> Vec<u64> {
        row.iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != skip)
            .map(|(_, v)| v.to_bits())
            .collect()
    };
    let mut full: BTreeMap<Vec<u64>, [usize; 2]> = BTreeMap::new();
    let mut reduced: BTreeMap<Vec<u64>, [usize; 2]> = BTreeMap::new();
    for (row, &x) in ds.covariates().iter().zip(ds.treatments()) {
        full.entry(bits(row, None)).or_default()[x as usize] += 1;
        reduced.entry(bits(row, Some(k))).or_default()[x as usize] += 1;
    }
    let mut best = 0.0f64;
    for row in ds.cells() {
        let a = treated_share(&full, &bits(row, None));
        let b = treated_share(&reduced, &bits(row, Some(k)));
        best = best.max((a - b).abs());
    }
    Ok(best)
}
