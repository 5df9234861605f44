//! Numerical-delta-method bootstrap for the frontier, uniform lower bands,
//! and smoothed-bootstrap selection of the step size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::empirical::{
    estimate_theta, estimate_theta_rows, resample_indices, CellEstimates, CellTheta,
    OverlapPolicy,
};
use crate::error::{Error, Result};
use crate::frontier::{right_riemann_area, CGrid, Claim, FrontierCurve, FrontierEngine, GridSpec};
use crate::marginal::{GridCdf, Marginal, StepCdf};
use crate::minarea::{self, uncovered_allowance, DEFAULT_NODE_LIMIT};
use crate::rng::{child_seed, rng_from_seed};

/// Margin kept between perturbed propensities and the c-grid.
pub const PROPENSITY_GUARD: f64 = 1e-6;

/// Shape of the band offset across the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Constant offset from the sup-statistic critical value.
    ConstantOne,
    /// Offsets chosen to minimize the area between frontier and band.
    EstimatedMinArea,
}

/// Settings of a bootstrap band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Bootstrap replications.
    pub b: usize,
    /// `epsilon_N * sqrt(N)`; 1 gives the naive bootstrap.
    pub eps_ratio: f64,
    pub alpha: f64,
    pub seed: u64,
    pub sigma_mode: SigmaMode,
    pub grid: GridSpec,
    pub overlap: OverlapPolicy,
    /// Branch-and-bound budget of the min-area solver.
    pub node_limit: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            b: 1000,
            eps_ratio: 2.0,
            alpha: 0.05,
            seed: 0,
            sigma_mode: SigmaMode::EstimatedMinArea,
            grid: GridSpec::default(),
            overlap: OverlapPolicy::Redraw,
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::InvalidArgument("B must be at least 1".into()));
        }
        if !(self.eps_ratio > 0.0 && self.eps_ratio.is_finite()) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        check_alpha(self.alpha)
    }

    /// `epsilon_N` for a sample of size `n`.
    pub fn epsilon(&self, n: usize) -> f64 {
        epsilon_from_ratio(self.eps_ratio, n)
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel(alpha))
    }
}

pub fn epsilon_from_ratio(ratio: f64, n: usize) -> f64 {
    ratio / (n as f64).sqrt()
}

pub fn ratio_from_epsilon(eps: f64, n: usize) -> f64 {
    eps * (n as f64).sqrt()
}

fn perturb_step(a: &StepCdf, b: &StepCdf, r: f64) -> StepCdf {
    let (ka, kb) = (a.knots(), b.knots());
    let (va, vb) = (a.values(), b.values());
    let mut knots = Vec::with_capacity(ka.len() + kb.len());
    let mut values = Vec::with_capacity(ka.len() + kb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let (mut fa, mut fb) = (0.0, 0.0);
    while i < ka.len() || j < kb.len() {
        let k = match (ka.get(i), kb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        if ka.get(i) == Some(&k) {
            fa = va[i];
            i += 1;
        }
        if kb.get(j) == Some(&k) {
            fb = vb[j];
            j += 1;
        }
        knots.push(k);
        values.push((1.0 - r) * fa + r * fb);
    }
    StepCdf::from_parts(knots, values)
}

/// `theta + r (theta_star - theta)`, repaired into an admissible parameter:
/// cdf values re-sorted and clipped, propensities clamped into
/// `[c_bar + guard, 1 - c_bar - guard]`, masses clamped at 0 and
/// renormalized when needed.
pub fn perturb(
    ce: &CellEstimates,
    ce_star: &CellEstimates,
    ratio: f64,
    c_bar: f64,
) -> Result<CellEstimates> {
    if ce.num_cells() != ce_star.num_cells() {
        return Err(Error::InvalidArgument("cell lists differ".into()));
    }
    let lo = c_bar + PROPENSITY_GUARD;
    let hi = 1.0 - c_bar - PROPENSITY_GUARD;
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "no admissible propensity for c_bar = {c_bar}"
        )));
    }
    let r = ratio;
    let mut cells = Vec::with_capacity(ce.num_cells());
    let mut clamped = false;
    for (a, b) in ce.cells().iter().zip(ce_star.cells()) {
        let mut arms = Vec::with_capacity(2);
        for x in 0..2u8 {
            match (a.marginal(x), b.marginal(x)) {
                (Marginal::Step(fa), Marginal::Step(fb)) => {
                    arms.push(Marginal::Step(perturb_step(fa, fb, r)))
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "perturbation needs empirical cdfs".into(),
                    ))
                }
            }
        }
        let mut mass = (1.0 - r) * a.mass + r * b.mass;
        if mass < 0.0 {
            mass = 0.0;
            clamped = true;
        }
        let p1 = ((1.0 - r) * a.p1 + r * b.p1).clamp(lo, hi);
        let arm1 = arms.pop().unwrap();
        let arm0 = arms.pop().unwrap();
        cells.push(CellTheta {
            key: a.key.clone(),
            mass,
            p1,
            arms: [arm0, arm1],
            counts: a.counts,
        });
    }
    let total: f64 = cells.iter().map(|c| c.mass).sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("perturbed cell masses vanish".into()));
    }
    if clamped || (total - 1.0).abs() > 1e-12 {
        for c in &mut cells {
            c.mass /= total;
        }
    }
    CellEstimates::new(cells, ce.n())
}

/// Frontier perturbations `sqrt(N) [phi(theta + r (theta* - theta)) - phi(theta)] / r`
/// for each claim, where `r = epsilon_N sqrt(N)` and `base` holds
/// `phi(theta)`.
pub fn delta_draw(
    engine: &FrontierEngine,
    ce: &CellEstimates,
    ce_star: &CellEstimates,
    ratio: f64,
    claims: &[Claim],
    grid: &CGrid,
    base: &[FrontierCurve],
) -> Result<Vec<Vec<f64>>> {
    let pert = perturb(ce, ce_star, ratio, grid.c_bar)?;
    let fc = engine.frontiers(&pert, claims, grid)?;
    let scale = (ce.n() as f64).sqrt() / ratio;
    let mut out = Vec::with_capacity(claims.len());
    for (f, b) in fc.iter().zip(base) {
        let d: Vec<f64> = f
            .t_values
            .iter()
            .zip(&b.t_values)
            .map(|(x, y)| scale * (x - y))
            .collect();
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite bootstrap draw".into()));
        }
        out.push(d);
    }
    Ok(out)
}

/// Bootstrap draws for one step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawSet {
    pub eps_ratio: f64,
    /// `draws[claim][replication][grid point]`, flagged replications removed.
    pub draws: Vec<Vec<Vec<f64>>>,
    /// Replications excluded because the perturbed parameter was unusable or
    /// the resample lost an arm.
    pub flagged: usize,
}

/// Output of [`bootstrap_draws`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRun {
    pub base: Vec<FrontierCurve>,
    pub sets: Vec<DrawSet>,
    /// Total overlap redraws across replications.
    pub redraws: usize,
}

/// Runs `b` replications, reusing each resample for every step size in
/// `ratios`. Replication `i` uses the stream `child_seed(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_draws(
    engine: &FrontierEngine,
    ds: &Dataset,
    ce: &CellEstimates,
    claims: &[Claim],
    grid: &CGrid,
    ratios: &[f64],
    b: usize,
    seed: u64,
    policy: OverlapPolicy,
) -> Result<BootstrapRun> {
    let base = engine.frontiers(ce, claims, grid)?;
    type Rep = (usize, Vec<Option<Vec<Vec<f64>>>>);
    let reps: Vec<Result<Rep>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(child_seed(seed, i as u64));
            let (idx, redraws) = match resample_indices(ds, &mut rng, policy) {
                Ok(v) => v,
                Err(Error::OverlapViolated { .. }) if policy == OverlapPolicy::Fail => {
                    return Ok((0, vec![None; ratios.len()]));
                }
                Err(e) => return Err(e),
            };
            let star = estimate_theta_rows(ds, &idx)?;
            let per_ratio = ratios
                .iter()
                .map(|&r| delta_draw(engine, ce, &star, r, claims, grid, &base).ok())
                .collect();
            Ok((redraws, per_ratio))
        })
        .collect();
    let mut sets: Vec<DrawSet> = ratios
        .iter()
        .map(|&r| DrawSet {
            eps_ratio: r,
            draws: vec![Vec::with_capacity(b); claims.len()],
            flagged: 0,
        })
        .collect();
    let mut redraws = 0;
    for rep in reps {
        let (rd, per_ratio) = rep?;
        redraws += rd;
        for (set, d) in sets.iter_mut().zip(per_ratio) {
            match d {
                Some(d) => {
                    for (k, v) in d.into_iter().enumerate() {
                        set.draws[k].push(v);
                    }
                }
                None => set.flagged += 1,
            }
        }
    }
    Ok(BootstrapRun {
        base,
        sets,
        redraws,
    })
}

/// `sup_c draw(c) / sigma(c)` for each draw.
pub fn sup_statistics(draws: &[Vec<f64>], sigma: &[f64]) -> Vec<f64> {
    draws
        .iter()
        .map(|d| {
            d.iter()
                .zip(sigma)
                .map(|(v, s)| v / s)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Smallest `z` such that at least a `1 - alpha` share of the sup
/// statistics is `<= z`.
pub fn critical_value(draws: &[Vec<f64>], sigma: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if draws.is_empty() {
        return Err(Error::Empty("no bootstrap draws".into()));
    }
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    let mut s = sup_statistics(draws, sigma);
    s.sort_by(f64::total_cmp);
    let keep = s.len() - uncovered_allowance(s.len(), alpha);
    Ok(s[keep - 1])
}

/// Nonincreasing step function extending a band off the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepBand {
    pub c_grid: Vec<f64>,
    /// Level on `(c_{j-1}, c_j]` (on `[0, c_1]` for `j = 0`).
    pub levels: Vec<f64>,
    pub c_bar: f64,
}

impl StepBand {
    pub fn eval(&self, c: f64) -> f64 {
        let j = self.c_grid.partition_point(|&g| g < c);
        if j >= self.c_grid.len() {
            0.0
        } else {
            self.levels[j]
        }
    }

    /// Exact area under the step function over `[0, c_bar]`.
    pub fn area(&self) -> f64 {
        let mut prev = 0.0;
        let mut a = 0.0;
        for (&c, &v) in self.c_grid.iter().zip(&self.levels) {
            a += v * (c - prev);
            prev = c;
        }
        a
    }
}

/// Least monotone interpolation of grid values: each grid level is raised to
/// the largest value at or to its right, then held on the interval ending at
/// its grid point; zero beyond the last grid point.
pub fn monotone_step_extension(c_grid: &[f64], values: &[f64], c_bar: f64) -> StepBand {
    let mut levels = values.to_vec();
    for j in (0..levels.len().saturating_sub(1)).rev() {
        levels[j] = levels[j].max(levels[j + 1]);
    }
    StepBand {
        c_grid: c_grid.to_vec(),
        levels,
        c_bar,
    }
}

/// Lower uniform band for one frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub claim: Claim,
    pub c_grid: Vec<f64>,
    pub frontier: Vec<f64>,
    /// `max(frontier - k, 0)` on the grid.
    pub lb_on_grid: Vec<f64>,
    pub lb_step: StepBand,
    /// Offsets `k(c_j) >= 0`.
    pub k_values: Vec<f64>,
    /// Area under the step band over `[0, c_bar]`, divided by `c_bar`.
    pub area: f64,
    /// Right-Riemann area under the band divided by that under the
    /// frontier; `None` when the frontier has zero area.
    pub area_ratio: Option<f64>,
    /// Sup-statistic critical value (constant mode only).
    pub critical_value: Option<f64>,
    /// Draws the band leaves uncovered.
    pub uncovered: usize,
    /// Draws used.
    pub draws_used: usize,
    /// False if the min-area search stopped at its node budget.
    pub optimal: bool,
}

/// Builds a band from draws on the frontier's grid. `n` is the sample size
/// that scales the draws.
pub fn min_area_band(
    frontier: &FrontierCurve,
    draws: &[Vec<f64>],
    alpha: f64,
    n: usize,
    mode: SigmaMode,
    node_limit: usize,
) -> Result<BandResult> {
    check_alpha(alpha)?;
    if draws.is_empty() {
        return Err(Error::Empty("no usable bootstrap draws".into()));
    }
    let jn = frontier.c_grid.len();
    if draws.iter().any(|d| d.len() != jn) {
        return Err(Error::InvalidArgument("draws and grid differ in length".into()));
    }
    let root_n = (n as f64).sqrt();
    let ones = vec![1.0; jn];
    let zhat = critical_value(draws, &ones, alpha)?;
    let (envelope, uncovered, optimal, cv) = match mode {
        SigmaMode::ConstantOne => {
            let z = zhat.max(0.0);
            let unc = sup_statistics(draws, &ones).iter().filter(|&&s| s > z).count();
            (vec![z; jn], unc, true, Some(zhat))
        }
        SigmaMode::EstimatedMinArea => {
            let mut weights = vec![0.0; jn];
            for j in 1..jn {
                weights[j] = frontier.c_grid[j] - frontier.c_grid[j - 1];
            }
            let allowance = uncovered_allowance(draws.len(), alpha);
            let seed: Vec<usize> = sup_statistics(draws, &ones)
                .iter()
                .enumerate()
                .filter(|(_, &s)| s > zhat.max(0.0))
                .map(|(i, _)| i)
                .collect();
            let sol = minarea::solve(draws, &weights, allowance, &[seed], node_limit);
            (sol.envelope, sol.uncovered.len(), sol.optimal, None)
        }
    };
    let k_values: Vec<f64> = envelope.iter().map(|e| e / root_n).collect();
    let lb_on_grid: Vec<f64> = frontier
        .t_values
        .iter()
        .zip(&k_values)
        .map(|(f, k)| (f - k).max(0.0))
        .collect();
    let lb_step = monotone_step_extension(&frontier.c_grid, &lb_on_grid, frontier.c_bar);
    let area = if frontier.c_bar > 0.0 {
        lb_step.area() / frontier.c_bar
    } else {
        0.0
    };
    let fa = right_riemann_area(&frontier.c_grid, &frontier.t_values);
    let area_ratio = (fa > 0.0).then(|| right_riemann_area(&frontier.c_grid, &lb_on_grid) / fa);
    Ok(BandResult {
        claim: frontier.claim.clone(),
        c_grid: frontier.c_grid.clone(),
        frontier: frontier.t_values.clone(),
        lb_on_grid,
        lb_step,
        k_values,
        area,
        area_ratio,
        critical_value: cv,
        uncovered,
        draws_used: draws.len(),
        optimal,
    })
}

/// Whether a grid band lies weakly below `truth` everywhere.
pub fn covers(lb_on_grid: &[f64], truth: &[f64]) -> bool {
    lb_on_grid.iter().zip(truth).all(|(l, t)| *l <= *t + 1e-12)
}

/// Full pipeline output for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRun {
    pub grid: CGrid,
    pub bands: Vec<BandResult>,
    pub flagged: usize,
    pub redraws: usize,
    pub n: usize,
}

/// Estimates the frontiers of `claims` on `ds` and their bands.
pub fn band(
    engine: &FrontierEngine,
    ds: &Dataset,
    claims: &[Claim],
    cfg: &BootstrapConfig,
    extra_grid: &[f64],
) -> Result<BandRun> {
    cfg.validate()?;
    let ce = estimate_theta(ds)?;
    let grid = CGrid::build(&cfg.grid, ce.c_max(), extra_grid)?;
    let run = bootstrap_draws(
        engine,
        ds,
        &ce,
        claims,
        &grid,
        &[cfg.eps_ratio],
        cfg.b,
        cfg.seed,
        cfg.overlap,
    )?;
    let set = &run.sets[0];
    let bands = run
        .base
        .iter()
        .zip(&set.draws)
        .map(|(f, d)| min_area_band(f, d, cfg.alpha, ds.len(), cfg.sigma_mode, cfg.node_limit))
        .collect::<Result<Vec<_>>>()?;
    Ok(BandRun {
        grid,
        bands,
        flagged: set.flagged,
        redraws: run.redraws,
        n: ds.len(),
    })
}

/// Scale factor applied to the reference bandwidth.
pub const BANDWIDTH_HALVING: f64 = 0.5;

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (v.len() - 1) as f64).sqrt()
}

fn reference_bandwidth(v: &[f64]) -> f64 {
    BANDWIDTH_HALVING * 1.06 * sd(v) * (v.len() as f64).powf(-0.2)
}

/// Kernel bandwidths `h[w][x]`: half the normal-reference rule
/// `1.06 sd n^(-1/5)` per arm and cell, falling back to the pooled cell and
/// then to all outcomes when an arm has fewer than two distinct values.
pub fn bandwidths(ds: &Dataset) -> Vec<[f64; 2]> {
    let k = ds.num_cells();
    let mut arms: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; k];
    for (y, x, w) in ds.records() {
        arms[w][x as usize].push(y);
    }
    let all = reference_bandwidth(ds.outcomes());
    arms.iter()
        .map(|a| {
            let pooled: Vec<f64> = a[0].iter().chain(&a[1]).copied().collect();
            let cell = reference_bandwidth(&pooled);
            let pick = |v: &Vec<f64>| {
                let h = reference_bandwidth(v);
                if h > 0.0 {
                    h
                } else if cell > 0.0 {
                    cell
                } else {
                    all
                }
            };
            [pick(&a[0]), pick(&a[1])]
        })
        .collect()
}

/// Standard logistic variate.
fn logistic(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

/// Smoothed-bootstrap pseudo-dataset: rows resampled (overlap kept by
/// redraw), outcomes jittered by `h[w][x]` times a logistic variate.
pub fn smoothed_resample_with(ds: &Dataset, h: &[[f64; 2]], seed: u64) -> Result<Dataset> {
    use rand::Rng as _;
    let mut rng = rng_from_seed(seed);
    let (idx, _) = resample_indices(ds, &mut rng, OverlapPolicy::Redraw)?;
    let sub = ds.subsample(&idx)?;
    let y = sub
        .records()
        .map(|(y, x, w)| {
            let hx = h[w][x as usize];
            if hx > 0.0 {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                y + hx * logistic(u)
            } else {
                y
            }
        })
        .collect();
    sub.with_outcomes(y)
}

/// [`smoothed_resample_with`] using [`bandwidths`].
pub fn smoothed_resample(ds: &Dataset, seed: u64) -> Result<Dataset> {
    smoothed_resample_with(ds, &bandwidths(ds), seed)
}

/// Points used to tabulate kernel-smoothed cdfs.
pub const KERNEL_TABLE_POINTS: usize = 2001;

fn kernel_cdf(sample: &[f64], h: f64) -> Marginal {
    if !(h > 0.0) {
        return Marginal::Step(StepCdf::from_sample(sample));
    }
    let lo = sample.iter().cloned().fold(f64::INFINITY, f64::min) - 15.0 * h;
    let hi = sample.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 15.0 * h;
    let m = KERNEL_TABLE_POINTS - 1;
    let ys: Vec<f64> = (0..=m).map(|i| lo + (hi - lo) * i as f64 / m as f64).collect();
    let n = sample.len() as f64;
    let fs = ys
        .iter()
        .map(|&y| {
            sample
                .iter()
                .map(|&s| 1.0 / (1.0 + (-(y - s) / h).exp()))
                .sum::<f64>()
                / n
        })
        .collect();
    Marginal::Grid(GridCdf::new(ys, fs))
}

/// Parameter of the smoothed-bootstrap distribution: empirical cell masses
/// and propensities with kernel-smoothed outcome cdfs.
pub fn kernel_theta(ds: &Dataset, h: &[[f64; 2]]) -> Result<CellEstimates> {
    let ce = estimate_theta(ds)?;
    let k = ds.num_cells();
    let mut arms: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; k];
    for (y, x, w) in ds.records() {
        arms[w][x as usize].push(y);
    }
    let cells = ce
        .cells()
        .iter()
        .zip(arms)
        .enumerate()
        .map(|(w, (c, a))| CellTheta {
            arms: [kernel_cdf(&a[0], h[w][0]), kernel_cdf(&a[1], h[w][1])],
            ..c.clone()
        })
        .collect();
    CellEstimates::new(cells, ds.len())
}

/// Default step-size ratios `epsilon_N sqrt(N)` searched by
/// [`select_epsilon`].
pub const DEFAULT_EPS_RATIOS: [f64; 8] = [0.5, 1.0, 1.5, 2.0, 4.0, 6.0, 8.0, 10.0];

/// Settings of the step-size search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectConfig {
    pub ratios: Vec<f64>,
    pub b_outer: usize,
    pub b_inner: usize,
    pub alpha: f64,
    pub seed: u64,
    pub sigma_mode: SigmaMode,
    pub grid: GridSpec,
    pub node_limit: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            ratios: DEFAULT_EPS_RATIOS.to_vec(),
            b_outer: 500,
            b_inner: 200,
            alpha: 0.05,
            seed: 0,
            sigma_mode: SigmaMode::EstimatedMinArea,
            grid: GridSpec::default(),
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }
}

/// Outcome of the step-size search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSelection {
    pub ratios: Vec<f64>,
    /// Simulated coverage per ratio.
    pub coverage: Vec<f64>,
    pub selected_ratio: f64,
    pub selected_epsilon: f64,
    /// Pseudo-datasets used per ratio (after exclusions).
    pub used: Vec<usize>,
    pub n: usize,
}

/// Index of the coverage closest to `target`, ties to the earlier entry.
pub fn closest_to_target(coverage: &[f64], target: f64) -> usize {
    let mut best = 0;
    for (i, c) in coverage.iter().enumerate() {
        if (c - target).abs() < (coverage[best] - target).abs() - 1e-12 {
            best = i;
        }
    }
    best
}

/// Chooses `epsilon_N` by the smoothed bootstrap: for each ratio, the share
/// of pseudo-datasets whose band lies below the pseudo-true frontier; the
/// ratio whose share is closest to `1 - alpha` wins, ties to the smaller.
pub fn select_epsilon(
    engine: &FrontierEngine,
    ds: &Dataset,
    claim: &Claim,
    cfg: &SelectConfig,
) -> Result<EpsilonSelection> {
    check_alpha(cfg.alpha)?;
    if cfg.ratios.is_empty() {
        return Err(Error::InvalidArgument("empty epsilon grid".into()));
    }
    if cfg.b_outer == 0 || cfg.b_inner == 0 {
        return Err(Error::InvalidArgument("bootstrap sizes must be positive".into()));
    }
    let mut ratios = cfg.ratios.clone();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    if ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidArgument("epsilon ratios must be positive".into()));
    }
    let n = ds.len();
    if ratios.len() == 1 {
        return Ok(EpsilonSelection {
            coverage: vec![f64::NAN],
            selected_ratio: ratios[0],
            selected_epsilon: epsilon_from_ratio(ratios[0], n),
            used: vec![0],
            ratios,
            n,
        });
    }
    let h = bandwidths(ds);
    let ce = estimate_theta(ds)?;
    let grid = CGrid::build(&cfg.grid, ce.c_max(), &[])?;
    let truth_theta = kernel_theta(ds, &h)?;
    let truth = engine.breakdown_frontier(&truth_theta, claim, &grid)?;
    let claims = std::slice::from_ref(claim);
    let outcomes: Vec<Result<Vec<Option<bool>>>> = (0..cfg.b_outer)
        .into_par_iter()
        .map(|s| {
            let pseudo = smoothed_resample_with(ds, &h, child_seed(cfg.seed, 2 * s as u64))?;
            let ce_s = estimate_theta(&pseudo)?.with_propensity_guard(grid.c_bar, PROPENSITY_GUARD)?;
            let run = bootstrap_draws(
                engine,
                &pseudo,
                &ce_s,
                claims,
                &grid,
                &ratios,
                cfg.b_inner,
                child_seed(cfg.seed, 2 * s as u64 + 1),
                OverlapPolicy::Redraw,
            )?;
            Ok(run
                .sets
                .iter()
                .map(|set| {
                    min_area_band(&run.base[0], &set.draws[0], cfg.alpha, n, cfg.sigma_mode, cfg.node_limit)
                        .ok()
                        .map(|b| covers(&b.lb_on_grid, &truth.t_values))
                })
                .collect())
        })
        .collect();
    let mut hits = vec![0usize; ratios.len()];
    let mut used = vec![0usize; ratios.len()];
    for o in outcomes {
        for (k, v) in o?.into_iter().enumerate() {
            if let Some(c) = v {
                used[k] += 1;
                hits[k] += c as usize;
            }
        }
    }
    let coverage: Vec<f64> = hits
        .iter()
        .zip(&used)
        .map(|(&h, &u)| if u > 0 { h as f64 / u as f64 } else { f64::NAN })
        .collect();
    let finite: Vec<f64> = coverage
        .iter()
        .map(|c| if c.is_finite() { *c } else { f64::INFINITY })
        .collect();
    let best = closest_to_target(&finite, 1.0 - cfg.alpha);
    Ok(EpsilonSelection {
        selected_ratio: ratios[best],
        selected_epsilon: epsilon_from_ratio(ratios[best], n),
        coverage,
        used,
        ratios,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn draws_from_sups(s: &[f64]) -> Vec<Vec<f64>> {
        s.iter().map(|&v| vec![v, v - 1.0]).collect()
    }

    #[test]
    fn critical_value_order_statistic() {
        let s: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let d = draws_from_sups(&s);
        assert_eq!(critical_value(&d, &[1.0, 1.0], 0.05).unwrap(), 95.0);
        assert_eq!(critical_value(&vec![vec![0.0; 3]; 10], &[1.0; 3], 0.1).unwrap(), 0.0);
        let z1 = critical_value(&d, &[1.0, 1.0], 0.05).unwrap();
        let z2 = critical_value(&d, &[2.0, 2.0], 0.05).unwrap();
        assert_eq!(z2, z1 / 2.0);
    }

    #[test]
    fn step_extension_rules() {
        let g = [0.1, 0.2, 0.3];
        let s = monotone_step_extension(&g, &[0.8, 0.5, 0.2], 0.4);
        assert_eq!(s.eval(0.0), 0.8);
        assert_eq!(s.eval(0.1), 0.8);
        assert_eq!(s.eval(0.15), 0.5);
        assert_eq!(s.eval(0.3), 0.2);
        assert_eq!(s.eval(0.35), 0.0);
        assert_abs_diff_eq!(s.area(), 0.08 + 0.05 + 0.02, epsilon = 1e-15);
        // a dip on the grid is lifted by the level to its right
        let t = monotone_step_extension(&g, &[0.8, 0.1, 0.2], 0.4);
        assert_eq!(t.levels, vec![0.8, 0.2, 0.2]);
    }

    fn curve(vals: Vec<f64>) -> FrontierCurve {
        let j = vals.len();
        let grid = CGrid::equal(j, 0.4);
        FrontierCurve {
            claim: Claim::dte(0.0, 0.5),
            c_grid: grid.values,
            t_values: vals,
            c_bar: 0.4,
            undefined: vec![],
            breakdown: None,
        }
    }

    #[test]
    fn zero_draw_gives_frontier() {
        let f = curve(vec![1.0, 0.7, 0.3]);
        let b = min_area_band(&f, &[vec![0.0; 3]], 0.05, 100, SigmaMode::EstimatedMinArea, 1000)
            .unwrap();
        assert_eq!(b.lb_on_grid, f.t_values);
        assert_eq!(b.k_values, vec![0.0; 3]);
    }

    #[test]
    fn constant_mode_matches_critical_value() {
        let f = curve(vec![1.0, 0.7, 0.3, 0.0]);
        let draws: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 7) as f64 * 0.3, (i % 5) as f64 * 0.4, 0.2, -(i as f64) * 0.01])
            .collect();
        let z = critical_value(&draws, &[1.0; 4], 0.1).unwrap();
        let b = min_area_band(&f, &draws, 0.1, 400, SigmaMode::ConstantOne, 1000).unwrap();
        for k in &b.k_values {
            assert_abs_diff_eq!(*k, z / 20.0, epsilon = 1e-15);
        }
        let m = min_area_band(&f, &draws, 0.1, 400, SigmaMode::EstimatedMinArea, 100_000).unwrap();
        let wa = |kv: &[f64]| right_riemann_area(&f.c_grid, kv);
        assert!(wa(&m.k_values) <= wa(&b.k_values) + 1e-15);
        assert!(m.uncovered <= uncovered_allowance(40, 0.1));
    }

    #[test]
    fn perturbation_with_unit_ratio_is_the_resample() {
        let ds = Dataset::single_cell(
            vec![0.1, 0.5, 0.9, 1.3, 0.2, 0.4, 2.0, 1.1],
            vec![0, 0, 0, 0, 1, 1, 1, 1],
        )
        .unwrap();
        let ce = estimate_theta(&ds).unwrap();
        let star = estimate_theta_rows(&ds, &[0, 0, 1, 2, 4, 5, 6, 6]).unwrap();
        let p = perturb(&ce, &star, 1.0, 0.2).unwrap();
        for x in 0..2u8 {
            for &y in &[0.0, 0.1, 0.3, 0.5, 1.0, 2.0, 3.0] {
                assert_eq!(p.cells()[0].marginal(x).cdf(y), star.cells()[0].marginal(x).cdf(y));
            }
        }
        assert_eq!(p.cells()[0].p1, star.cells()[0].p1);
        let same = perturb(&ce, &ce, 3.0, 0.2).unwrap();
        for &y in &[0.0, 0.3, 1.2] {
            assert_abs_diff_eq!(
                same.cells()[0].marginal(1).cdf(y),
                ce.cells()[0].marginal(1).cdf(y),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn bandwidth_fallbacks() {
        let ds = Dataset::from_cells(
            vec![1.0, 1.0, 2.0, 3.0, 5.0, 5.0],
            vec![0, 0, 1, 1, 0, 1],
            vec![0, 0, 0, 0, 1, 1],
        )
        .unwrap();
        let h = bandwidths(&ds);
        assert!(h[0][0] > 0.0 && h[0][1] > 0.0);
        // cell 1 has constant outcomes and one unit per arm: falls back to all data
        let all = reference_bandwidth(ds.outcomes());
        assert_eq!(h[1], [all, all]);
    }

    #[test]
    fn zero_bandwidth_is_plain_resampling() {
        let ds = Dataset::single_cell(vec![0.1, 0.5, 0.9, 1.3], vec![0, 1, 0, 1]).unwrap();
        let h = vec![[0.0, 0.0]];
        let a = smoothed_resample_with(&ds, &h, 5).unwrap();
        assert!(a.outcomes().iter().all(|y| ds.outcomes().contains(y)));
        assert_eq!(a, smoothed_resample_with(&ds, &h, 5).unwrap());
    }

    #[test]
    fn closest_ties_prefer_smaller() {
        assert_eq!(closest_to_target(&[0.93, 0.97, 0.99], 0.95), 0);
        assert_eq!(closest_to_target(&[1.0, 0.96, 0.94], 0.95), 1);
    }
}
