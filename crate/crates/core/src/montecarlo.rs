//! Simulation design with truncated-normal outcomes, its exact population
//! frontier, and coverage/bias studies of the estimator and bands.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{
    bootstrap_draws, covers, epsilon_from_ratio, min_area_band, SigmaMode, PROPENSITY_GUARD,
};
use crate::data::Dataset;
use crate::empirical::{estimate_theta, CellEstimates, CellTheta, OverlapPolicy};
use crate::error::{Error, Result};
use crate::frontier::{CGrid, Claim, FrontierCurve, FrontierEngine};
use crate::marginal::{Marginal, TruncNormal};
use crate::minarea::DEFAULT_NODE_LIMIT;
use crate::rng::{child_seed2, rng_from_seed};

/// `Y | X = x  ~  pi x + (gamma x + 1) Z`, `Z` standard normal truncated to
/// `trunc`; `P(X = 1) = p_treat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McDgp {
    pub gamma: f64,
    pub pi: f64,
    pub p_treat: f64,
    pub trunc: [f64; 2],
}

impl Default for McDgp {
    fn default() -> Self {
        McDgp {
            gamma: 0.1,
            pi: 1.0,
            p_treat: 0.5,
            trunc: [-4.0, 4.0],
        }
    }
}

impl McDgp {
    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.trunc;
        if !(self.gamma > -1.0) || !self.pi.is_finite() || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid design {self:?}")));
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidArgument("truncation bounds must be finite and ordered".into()));
        }
        if !(self.p_treat > 0.0 && self.p_treat < 1.0) {
            return Err(Error::InvalidArgument("treatment probability outside (0,1)".into()));
        }
        Ok(())
    }

    /// Outcome law of arm `x`.
    pub fn arm(&self, x: u8) -> TruncNormal {
        let xf = x as f64;
        TruncNormal::new(self.pi * xf, self.gamma * xf + 1.0, self.trunc[0], self.trunc[1])
    }

    /// The population parameter: exact truncated-normal marginals.
    pub fn population_theta(&self) -> Result<CellEstimates> {
        self.validate()?;
        CellEstimates::new(
            vec![CellTheta {
                key: Vec::new(),
                mass: 1.0,
                p1: self.p_treat,
                arms: [Marginal::TruncNormal(self.arm(0)), Marginal::TruncNormal(self.arm(1))],
                counts: [0, 0],
            }],
            0,
        )
    }
}

/// `n` i.i.d. draws, outcomes by inverse cdf. Both arms must appear.
pub fn dgp_sample(dgp: &McDgp, n: usize, seed: u64) -> Result<Dataset> {
    dgp.validate()?;
    let arms = [dgp.arm(0), dgp.arm(1)];
    let mut rng = rng_from_seed(seed);
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = u8::from(rng.random::<f64>() < dgp.p_treat);
        let u: f64 = rng.random();
        y.push(arms[xi as usize].quantile(u));
        x.push(xi);
    }
    Dataset::single_cell(y, x)
}

/// True frontiers of `claims` on `grid`.
pub fn population_frontiers(
    engine: &FrontierEngine,
    dgp: &McDgp,
    claims: &[Claim],
    grid: &CGrid,
) -> Result<Vec<FrontierCurve>> {
    engine.frontiers(&dgp.population_theta()?, claims, grid)
}

pub fn population_frontier(
    engine: &FrontierEngine,
    dgp: &McDgp,
    claim: &Claim,
    grid: &CGrid,
) -> Result<FrontierCurve> {
    Ok(population_frontiers(engine, dgp, std::slice::from_ref(claim), grid)?
        .pop()
        .unwrap())
}

/// Grid used by the studies: `points` equally spaced values on `[0, upper]`.
pub fn study_grid(points: usize, upper: f64) -> CGrid {
    CGrid::equal(points, upper)
}

/// Settings of [`coverage_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub dgp: McDgp,
    pub n: usize,
    /// Simulated datasets.
    pub s: usize,
    /// Bootstrap draws per dataset.
    pub b: usize,
    /// Step sizes as multiples of `N^(-1/2)`.
    pub ratios: Vec<f64>,
    pub p_lowers: Vec<f64>,
    pub z: f64,
    pub alpha: f64,
    pub grid_points: usize,
    pub grid_upper: f64,
    pub seed: u64,
    pub sigma_mode: SigmaMode,
    pub node_limit: usize,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            dgp: McDgp::default(),
            n: 500,
            s: 200,
            b: 200,
            ratios: vec![0.5, 1.0, 1.5, 2.0, 4.0, 6.0, 8.0, 10.0],
            p_lowers: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            z: 0.0,
            alpha: 0.05,
            grid_points: 50,
            grid_upper: 0.45,
            seed: 0,
            sigma_mode: SigmaMode::EstimatedMinArea,
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }
}

/// One cell of the coverage and area tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub n: usize,
    pub epsilon: f64,
    pub ratio: f64,
    pub p_lower: f64,
    /// Share of datasets whose band lies below the true frontier on the grid.
    pub coverage: f64,
    /// Mean of band area over estimated-frontier area (right Riemann sums).
    pub area_ratio: f64,
    /// Datasets with a usable band.
    pub used: usize,
}

/// Pointwise mean of estimated frontiers against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub p_lower: f64,
    pub c_grid: Vec<f64>,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    /// Monte Carlo standard error of the mean.
    pub se: Vec<f64>,
    pub s: usize,
}

impl BiasSummary {
    fn from_curves(p_lower: f64, truth: &FrontierCurve, curves: &[&[f64]]) -> Self {
        let j = truth.c_grid.len();
        let s = curves.len();
        let mut mean = vec![0.0; j];
        for c in curves {
            for (m, v) in mean.iter_mut().zip(c.iter()) {
                *m += v / s as f64;
            }
        }
        let se = (0..j)
            .map(|k| {
                if s < 2 {
                    return 0.0;
                }
                let ss: f64 = curves.iter().map(|c| (c[k] - mean[k]).powi(2)).sum();
                (ss / (s - 1) as f64 / s as f64).sqrt()
            })
            .collect();
        BiasSummary {
            p_lower,
            c_grid: truth.c_grid.clone(),
            truth: truth.t_values.clone(),
            mean,
            se,
            s,
        }
    }

    /// Largest `mean - truth - k se` over the grid; `<= 0` means the mean
    /// never sits more than `k` standard errors above the truth.
    pub fn max_excess(&self, k: f64) -> f64 {
        self.mean
            .iter()
            .zip(&self.truth)
            .zip(&self.se)
            .map(|((m, t), s)| m - t - k * s)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max |mean - truth|`.
    pub fn sup_bias(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.truth)
            .map(|(m, t)| (m - t).abs())
            .fold(0.0, f64::max)
    }
}

/// Output of [`coverage_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStudy {
    pub config: CoverageConfig,
    pub rows: Vec<CoverageRow>,
    pub bias: Vec<BiasSummary>,
    /// Datasets whose estimated propensity had to be pulled inside the grid.
    pub guarded: usize,
}

struct DatasetResult {
    frontiers: Vec<Vec<f64>>,
    /// `[ratio][claim]`: coverage and area ratio, `None` if no band.
    bands: Vec<Vec<Option<(bool, Option<f64>)>>>,
    guarded: bool,
}

fn check_study(dgp: &McDgp, n: usize, s: usize, grid: &CGrid) -> Result<()> {
    dgp.validate()?;
    if n < 2 || s == 0 {
        return Err(Error::InvalidArgument("need N >= 2 and S >= 1".into()));
    }
    let c_max = dgp.p_treat.min(1.0 - dgp.p_treat);
    if grid.c_bar >= c_max {
        return Err(Error::CExceedsRegion { c: grid.c_bar, p: c_max });
    }
    Ok(())
}

/// Estimates for one simulated dataset; propensities are kept inside the
/// study grid so that every grid point is admissible.
fn guarded_estimates(ds: &Dataset, grid: &CGrid) -> Result<(CellEstimates, bool)> {
    let ce = estimate_theta(ds)?;
    let guarded = ce.c_max() <= grid.c_bar + PROPENSITY_GUARD;
    Ok((ce.with_propensity_guard(grid.c_bar, PROPENSITY_GUARD)?, guarded))
}

/// Coverage and area of the bands over `s` simulated datasets, plus the
/// pointwise bias of the frontier estimates. Dataset `i` uses seeds
/// `child_seed2(seed, 0, i)` (data) and `child_seed2(seed, 1, i)` (bootstrap).
pub fn coverage_study(engine: &FrontierEngine, cfg: &CoverageConfig) -> Result<CoverageStudy> {
    let grid = study_grid(cfg.grid_points, cfg.grid_upper);
    check_study(&cfg.dgp, cfg.n, cfg.s, &grid)?;
    crate::bootstrap::check_alpha(cfg.alpha)?;
    if cfg.ratios.is_empty() || cfg.p_lowers.is_empty() || cfg.b == 0 {
        return Err(Error::InvalidArgument("empty study design".into()));
    }
    let claims: Vec<Claim> = cfg.p_lowers.iter().map(|&p| Claim::dte(cfg.z, p)).collect();
    for c in &claims {
        c.validate()?;
    }
    let truth = population_frontiers(engine, &cfg.dgp, &claims, &grid)?;
    let results: Vec<Result<DatasetResult>> = (0..cfg.s)
        .into_par_iter()
        .map(|i| {
            let ds = dgp_sample(&cfg.dgp, cfg.n, child_seed2(cfg.seed, 0, i as u64))?;
            let (ce, guarded) = guarded_estimates(&ds, &grid)?;
            let run = bootstrap_draws(
                engine,
                &ds,
                &ce,
                &claims,
                &grid,
                &cfg.ratios,
                cfg.b,
                child_seed2(cfg.seed, 1, i as u64),
                OverlapPolicy::Redraw,
            )?;
            let bands = run
                .sets
                .iter()
                .map(|set| {
                    run.base
                        .iter()
                        .zip(&set.draws)
                        .zip(&truth)
                        .map(|((f, d), t)| {
                            min_area_band(f, d, cfg.alpha, cfg.n, cfg.sigma_mode, cfg.node_limit)
                                .ok()
                                .map(|b| (covers(&b.lb_on_grid, &t.t_values), b.area_ratio))
                        })
                        .collect()
                })
                .collect();
            Ok(DatasetResult {
                frontiers: run.base.into_iter().map(|f| f.t_values).collect(),
                bands,
                guarded,
            })
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (r, &ratio) in cfg.ratios.iter().enumerate() {
        for (k, &p) in cfg.p_lowers.iter().enumerate() {
            let (mut hits, mut used, mut area, mut n_area) = (0usize, 0usize, 0.0, 0usize);
            for res in &results {
                if let Some((cov, ar)) = res.bands[r][k] {
                    used += 1;
                    hits += cov as usize;
                    if let Some(a) = ar {
                        area += a;
                        n_area += 1;
                    }
                }
            }
            rows.push(CoverageRow {
                n: cfg.n,
                epsilon: epsilon_from_ratio(ratio, cfg.n),
                ratio,
                p_lower: p,
                coverage: if used > 0 { hits as f64 / used as f64 } else { f64::NAN },
                area_ratio: if n_area > 0 { area / n_area as f64 } else { f64::NAN },
                used,
            });
        }
    }
    let bias = cfg
        .p_lowers
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let curves: Vec<&[f64]> = results.iter().map(|r| r.frontiers[k].as_slice()).collect();
            BiasSummary::from_curves(p, &truth[k], &curves)
        })
        .collect();
    Ok(CoverageStudy {
        config: cfg.clone(),
        rows,
        bias,
        guarded: results.iter().filter(|r| r.guarded).count(),
    })
}

/// Mean of `s` estimated frontiers against the truth, without bootstrap.
#[allow(clippy::too_many_arguments)]
pub fn bias_study(
    engine: &FrontierEngine,
    dgp: &McDgp,
    claim: &Claim,
    n: usize,
    s: usize,
    grid: &CGrid,
    seed: u64,
) -> Result<BiasSummary> {
    check_study(dgp, n, s, grid)?;
    let p_lower = match claim {
        Claim::DteAtLeast { p_lower, .. } => *p_lower,
        _ => f64::NAN,
    };
    let truth = population_frontier(engine, dgp, claim, grid)?;
    let curves: Vec<Result<Vec<f64>>> = (0..s)
        .into_par_iter()
        .map(|i| {
            let ds = dgp_sample(dgp, n, child_seed2(seed, 0, i as u64))?;
            let (ce, _) = guarded_estimates(&ds, grid)?;
            Ok(engine.breakdown_frontier(&ce, claim, grid)?.t_values)
        })
        .collect();
    let curves = curves.into_iter().collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = curves.iter().map(|c| c.as_slice()).collect();
    Ok(BiasSummary::from_curves(p_lower, &truth, &refs))
}
