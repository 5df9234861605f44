//! Smooth lower approximation of the DTE breakdown frontier and its
//! standard-bootstrap band.
//!
//! Every non-smooth piece of the frontier formula is replaced by a smooth
//! surrogate whose direction can only lower the frontier: soft max/min for
//! the cdf-bound envelopes, a spline step inside the pre-rearrangement, a
//! scaled `L_p` norm for the infimum and soft clipping at 0 and 1.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{check_alpha, critical_value, monotone_step_extension, BandResult};
use crate::data::Dataset;
use crate::empirical::{estimate_theta_rows, resample_indices, CellEstimates, OverlapPolicy};
use crate::error::{Error, Result};
use crate::frontier::{
    quantile_differences, right_riemann_area, CGrid, Claim, FrontierCurve, FrontierEngine,
    MakarovProfile,
};
use crate::rng::{child_seed, rng_from_seed};

/// Smoothing levels; fixed, not tied to the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Soft max/min sharpness.
    pub kappa_minmax: f64,
    /// Spline step sharpness.
    pub kappa_step: f64,
    /// Norm exponent of the soft infimum.
    pub p_norm: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            kappa_minmax: 200.0,
            kappa_step: 200.0,
            p_norm: 64.0,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_minmax > 0.0 && self.kappa_step > 0.0 && self.p_norm >= 1.0)
            || !(self.kappa_minmax.is_finite() && self.kappa_step.is_finite() && self.p_norm.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "invalid smoothing levels {self:?}"
            )));
        }
        Ok(())
    }
}

/// `sum x_i exp(kappa x_i) / sum exp(kappa x_j)`: below the max for
/// `kappa > 0`, above the min for `kappa < 0`.
pub fn soft_minmax(values: &[f64], kappa: f64) -> f64 {
    let m = values
        .iter()
        .map(|&v| kappa * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for &v in values {
        let e = (kappa * v - m).exp();
        num += v * e;
        den += e;
    }
    num / den
}

/// Cubic spline step: 0 below 0, `3x^2 - 2x^3` on `(0,1)`, 1 above 1.
pub fn s1(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x * x * (3.0 - 2.0 * x)
    }
}

/// Which side of `1(x >= 0)` a smooth step approximates from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSide {
    /// `S1(kappa x + 1)`: equals 1 on `x >= 0`.
    Upper,
    /// `S1(kappa x)`: equals 0 on `x <= 0`.
    Lower,
}

pub fn smooth_step(x: f64, kappa: f64, side: StepSide) -> f64 {
    match side {
        StepSide::Upper => s1(kappa * x + 1.0),
        StepSide::Lower => s1(kappa * x),
    }
}

/// `1 - mean_i ss(f_i - z)` over the u-grid values `f`.
///
/// With the lower step this is `>=` the share of `f <= z`; with the upper
/// step it is `<=` that share.
pub fn smoothed_prerearrangement(f: &[f64], z: f64, kappa: f64, side: StepSide) -> f64 {
    let s: f64 = f.iter().map(|&v| smooth_step(v - z, kappa, side)).sum();
    1.0 - s / f.len() as f64
}

/// `-(mean |g|^p)^(1/p)` with weights `widths`, an upper approximation of
/// `inf g` for `g <= 0`. Values are clipped into `[-2, 0]`.
pub fn lp_soft_infimum(g: &[f64], widths: &[f64], p: f64) -> Result<f64> {
    let total: f64 = widths.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("soft infimum over an empty range".into()));
    }
    let a: Vec<f64> = g.iter().map(|v| -v.clamp(-2.0, 0.0)).collect();
    let m = a
        .iter()
        .zip(widths)
        .filter(|(_, &w)| w > 0.0)
        .map(|(v, _)| *v)
        .fold(0.0, f64::max);
    if m < 1e-8 {
        return Err(Error::ZeroNorm);
    }
    let s: f64 = a
        .iter()
        .zip(widths)
        .map(|(v, w)| w * (v / m).powf(p))
        .sum();
    let v = -m * (s / total).powf(1.0 / p);
    if v > -1e-8 {
        return Err(Error::ZeroNorm);
    }
    Ok(v)
}

/// Smooth lower approximation of `min{0, x}`:
/// `-(1/kappa) ln(1 + exp(-kappa x))`.
pub fn soft_min_zero(x: f64, kappa: f64) -> f64 {
    if x >= 0.0 {
        -(-kappa * x).exp().ln_1p() / kappa
    } else {
        x - (kappa * x).exp().ln_1p() / kappa
    }
}

/// Smoothed cdf bounds `(lower, upper)`: soft max of the lower terms and 0,
/// soft min of the upper terms and 1.
pub fn smoothed_cdf_bounds(f: f64, p: f64, c: f64, kappa: f64) -> (f64, f64) {
    let fp = f * p;
    let lower = soft_minmax(&[fp / (p + c), (fp - c) / (p - c), 0.0], kappa);
    let upper = soft_minmax(&[fp / (p - c), (fp + c) / (p + c), 1.0], -kappa);
    (lower, upper)
}

/// Smoothed Makarov upper piece `1 + min{inf_y (F1_upper - F0_lower), 0}`.
fn smoothed_makarov_upper(prof: &MakarovProfile, c: f64, cfg: &SmoothingConfig) -> f64 {
    let p1 = prof.p1;
    let p0 = 1.0 - p1;
    let k = cfg.kappa_minmax;
    let g: Vec<f64> = prof
        .f1
        .iter()
        .zip(&prof.f0)
        .map(|(&a, &b)| {
            -1.0 + smoothed_cdf_bounds(a, p1, c, k).1 - smoothed_cdf_bounds(b, p0, c, k).0
        })
        .collect();
    let n = prof.ys.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        w[i] = prof.ys[i + 1] - prof.ys[i];
    }
    // on a zero-measure range or a vanishing norm the smooth surrogate is
    // undefined; the smallest scan value keeps the upper-envelope direction
    let inf_g = lp_soft_infimum(&g, &w, cfg.p_norm)
        .unwrap_or_else(|_| g.iter().map(|v| v.clamp(-2.0, 0.0)).fold(0.0, f64::min));
    let inf = 1.0 + inf_g;
    1.0 + soft_minmax(&[inf, 0.0], -k)
}

/// `(P_num, P_den, M)` pieces of one cell at `c`.
fn smoothed_cell(
    engine: &FrontierEngine,
    ce: &CellEstimates,
    w: usize,
    prof: &MakarovProfile,
    z: f64,
    c: f64,
    cfg: &SmoothingConfig,
) -> (f64, f64, f64) {
    if let Some(v) = prof.degenerate {
        return (v, v, v);
    }
    let cell = &ce.cells()[w];
    let (f, _) = quantile_differences(cell, c, engine.u_grid());
    let p_num = smoothed_prerearrangement(&f, z, cfg.kappa_step, StepSide::Lower);
    let p_den = smoothed_prerearrangement(&f, z, cfg.kappa_step, StepSide::Upper);
    (p_num, p_den, smoothed_makarov_upper(prof, c, cfg))
}

fn smoothed_value(num: f64, den: f64, kappa: f64) -> f64 {
    let ratio = if den > 0.0 {
        num / den
    } else if num >= den {
        // mirrors the unsmoothed rule: every t qualifies
        1.0
    } else {
        0.0
    };
    let y = soft_minmax(&[ratio, 0.0], kappa);
    1.0 + soft_min_zero(y - 1.0, kappa)
}

/// Smoothed frontier of a DTE claim on `grid`; lies below the unsmoothed
/// frontier at every grid point.
pub fn smoothed_frontier(
    engine: &FrontierEngine,
    ce: &CellEstimates,
    claim: &Claim,
    grid: &CGrid,
    cfg: &SmoothingConfig,
) -> Result<FrontierCurve> {
    cfg.validate()?;
    claim.validate()?;
    let (z, p_lower) = match claim {
        Claim::DteAtLeast { z, p_lower } => (*z, *p_lower),
        _ => {
            return Err(Error::InvalidArgument(
                "the smoothed frontier is defined for DTE claims only".into(),
            ))
        }
    };
    let c_max = ce.c_max();
    if let Some(&c) = grid.values.iter().find(|&&c| !(c >= 0.0 && c < c_max)) {
        return Err(Error::CExceedsRegion { c, p: c_max });
    }
    let profiles: Vec<MakarovProfile> = ce.cells().iter().map(|cell| MakarovProfile::new(cell, z)).collect();
    let t_values = grid
        .values
        .iter()
        .map(|&c| {
            let (mut pn, mut pd, mut m) = (0.0, 0.0, 0.0);
            for (w, prof) in profiles.iter().enumerate() {
                let q = ce.cells()[w].mass;
                let (a, b, mm) = smoothed_cell(engine, ce, w, prof, z, c, cfg);
                pn += q * a;
                pd += q * b;
                m += q * mm;
            }
            smoothed_value(1.0 - p_lower - pn, m - pd, cfg.kappa_minmax)
        })
        .collect();
    Ok(FrontierCurve {
        claim: claim.clone(),
        c_grid: grid.values.clone(),
        t_values,
        c_bar: grid.c_bar,
        undefined: Vec::new(),
        breakdown: None,
    })
}

/// Standard-bootstrap band for the smoothed frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedBand {
    pub band: BandResult,
    /// Replications dropped because the resample left too little overlap for
    /// the grid.
    pub flagged: usize,
    pub redraws: usize,
}

/// Band `max(SBF - max(z, 0)/sqrt(N), 0)` with `z` the bootstrap
/// critical value of `sup_c sqrt(N)(SBF* - SBF)`, constant `sigma`.
#[allow(clippy::too_many_arguments)]
pub fn smoothed_band(
    engine: &FrontierEngine,
    ds: &Dataset,
    ce: &CellEstimates,
    claim: &Claim,
    grid: &CGrid,
    cfg: &SmoothingConfig,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<SmoothedBand> {
    check_alpha(alpha)?;
    if b == 0 {
        return Err(Error::InvalidArgument("B must be at least 1".into()));
    }
    let base = smoothed_frontier(engine, ce, claim, grid, cfg)?;
    let root_n = (ce.n() as f64).sqrt();
    let reps: Vec<Result<(usize, Option<Vec<f64>>)>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(child_seed(seed, i as u64));
            let (idx, rd) = resample_indices(ds, &mut rng, OverlapPolicy::Redraw)?;
            let star = estimate_theta_rows(ds, &idx)?;
            if star.c_max() <= grid.c_bar {
                return Ok((rd, None));
            }
            let f = smoothed_frontier(engine, &star, claim, grid, cfg)?;
            let d: Vec<f64> = f
                .t_values
                .iter()
                .zip(&base.t_values)
                .map(|(x, y)| root_n * (x - y))
                .collect();
            Ok((rd, d.iter().all(|v| v.is_finite()).then_some(d)))
        })
        .collect();
    let mut draws = Vec::with_capacity(b);
    let (mut flagged, mut redraws) = (0, 0);
    for r in reps {
        let (rd, d) = r?;
        redraws += rd;
        match d {
            Some(d) => draws.push(d),
            None => flagged += 1,
        }
    }
    if draws.is_empty() {
        return Err(Error::Numerical("every bootstrap replication was flagged".into()));
    }
    let jn = grid.values.len();
    let zhat = critical_value(&draws, &vec![1.0; jn], alpha)?;
    let k = zhat.max(0.0) / root_n;
    let lb_on_grid: Vec<f64> = base.t_values.iter().map(|f| (f - k).max(0.0)).collect();
    let lb_step = monotone_step_extension(&grid.values, &lb_on_grid, grid.c_bar);
    let area = if grid.c_bar > 0.0 { lb_step.area() / grid.c_bar } else { 0.0 };
    let fa = right_riemann_area(&grid.values, &base.t_values);
    let area_ratio = (fa > 0.0).then(|| right_riemann_area(&grid.values, &lb_on_grid) / fa);
    let uncovered = draws
        .iter()
        .filter(|d| d.iter().any(|&v| v > zhat.max(0.0)))
        .count();
    Ok(SmoothedBand {
        band: BandResult {
            claim: claim.clone(),
            c_grid: grid.values.clone(),
            frontier: base.t_values,
            lb_on_grid,
            lb_step,
            k_values: vec![k; jn],
            area,
            area_ratio,
            critical_value: Some(zhat),
            uncovered,
            draws_used: draws.len(),
            optimal: true,
        },
        flagged,
        redraws,
    })
}
