//! Sample-analog estimates of the conditional outcome distributions,
//! propensities and cell masses, and nonparametric resampling.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::marginal::{Marginal, StepCdf};
use crate::rng::{rng_from_seed, Rng};

/// Estimates for one covariate cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTheta {
    /// Covariate values defining the cell.
    pub key: Vec<f64>,
    /// `q_w`, the probability of the cell.
    pub mass: f64,
    /// `p_{1|w}`.
    pub p1: f64,
    /// Outcome distributions for `x = 0` and `x = 1`.
    pub arms: [Marginal; 2],
    /// Observations per arm (zero for population objects).
    pub counts: [usize; 2],
}

impl CellTheta {
    /// `p_{x|w}`.
    pub fn propensity(&self, x: u8) -> f64 {
        if x == 1 {
            self.p1
        } else {
            1.0 - self.p1
        }
    }

    pub fn marginal(&self, x: u8) -> &Marginal {
        &self.arms[x as usize]
    }
}

/// The full parameter `theta`: one [`CellTheta`] per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEstimates {
    cells: Vec<CellTheta>,
    n: usize,
}

impl CellEstimates {
    /// Assembles estimates; masses must sum to one and propensities lie in
    /// `(0,1)`.
    pub fn new(cells: Vec<CellTheta>, n: usize) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Empty("no cells".into()));
        }
        let total: f64 = cells.iter().map(|c| c.mass).sum();
        if (total - 1.0).abs() > 1e-9 || cells.iter().any(|c| c.mass < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cell masses sum to {total}"
            )));
        }
        if let Some(c) = cells.iter().find(|c| !(c.p1 > 0.0 && c.p1 < 1.0)) {
            return Err(Error::OverlapViolated {
                cell: format!("{:?}", c.key),
                detail: format!("propensity {}", c.p1),
            });
        }
        Ok(CellEstimates { cells, n })
    }

    pub fn cells(&self) -> &[CellTheta] {
        &self.cells
    }

    pub fn cell(&self, w: usize) -> Result<&CellTheta> {
        self.cells.get(w).ok_or(Error::UnknownCell(w))
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Sample size behind the estimates; 0 for population objects.
    pub fn n(&self) -> usize {
        self.n
    }

    /// `min_{x,w} p_{x|w}`: every sensitivity level must stay below this.
    pub fn c_max(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| c.p1.min(1.0 - c.p1))
            .fold(f64::INFINITY, f64::min)
    }

    /// Copy with every `p_{1|w}` clamped into
    /// `[c_bar + guard, 1 - c_bar - guard]`, so that all levels up to `c_bar`
    /// are admissible.
    pub fn with_propensity_guard(&self, c_bar: f64, guard: f64) -> Result<Self> {
        let lo = c_bar + guard;
        let hi = 1.0 - c_bar - guard;
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "no admissible propensity for c_bar = {c_bar}"
            )));
        }
        let mut out = self.clone();
        for cell in &mut out.cells {
            cell.p1 = cell.p1.clamp(lo, hi);
        }
        Ok(out)
    }

    pub(crate) fn from_cells_unchecked(cells: Vec<CellTheta>, n: usize) -> Self {
        CellEstimates { cells, n }
    }
}

fn cell_estimates(
    ds: &Dataset,
    rows: impl Iterator<Item = usize>,
    n: usize,
) -> Result<CellEstimates> {
    let k = ds.num_cells();
    let mut samples: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; k];
    let y = ds.outcomes();
    let x = ds.treatments();
    let w = ds.cell_ids();
    for i in rows {
        samples[w[i]][x[i] as usize].push(y[i]);
    }
    let mut cells = Vec::with_capacity(k);
    for (j, mut s) in samples.into_iter().enumerate() {
        if s[0].is_empty() || s[1].is_empty() {
            return Err(Error::OverlapViolated {
                cell: ds.cell_label(j),
                detail: format!("{} untreated, {} treated", s[0].len(), s[1].len()),
            });
        }
        let counts = [s[0].len(), s[1].len()];
        let tot = (counts[0] + counts[1]) as f64;
        s[0].sort_unstable_by(f64::total_cmp);
        s[1].sort_unstable_by(f64::total_cmp);
        cells.push(CellTheta {
            key: ds.cells()[j].clone(),
            mass: tot / n as f64,
            p1: counts[1] as f64 / tot,
            arms: [
                Marginal::Step(StepCdf::from_sorted(&s[0])),
                Marginal::Step(StepCdf::from_sorted(&s[1])),
            ],
            counts,
        });
    }
    Ok(CellEstimates::from_cells_unchecked(cells, n))
}

/// Empirical cdfs, propensities and cell masses.
pub fn estimate_theta(ds: &Dataset) -> Result<CellEstimates> {
    cell_estimates(ds, 0..ds.len(), ds.len())
}

/// Estimates from the rows `idx` of `ds` (with repetition), keeping the
/// parent's cell list.
pub fn estimate_theta_rows(ds: &Dataset, idx: &[usize]) -> Result<CellEstimates> {
    cell_estimates(ds, idx.iter().copied(), idx.len())
}

/// `F(y | x, w)`.
pub fn cdf_eval(ce: &CellEstimates, y: f64, x: u8, w: usize) -> Result<f64> {
    Ok(ce.cell(w)?.marginal(x).cdf(y))
}

/// `inf{y : F(y | x, w) >= tau}` for `tau` in `(0,1)`.
pub fn quantile_eval(ce: &CellEstimates, tau: f64, x: u8, w: usize) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidLevel(tau));
    }
    Ok(ce.cell(w)?.marginal(x).quantile(tau))
}

/// Maximum number of redraws when a resample leaves some cell without both
/// arms.
pub const REDRAW_CAP: usize = 1000;

/// What to do when a resample violates overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverlapPolicy {
    /// Draw again, up to [`REDRAW_CAP`] times.
    Redraw,
    /// Fail immediately.
    Fail,
}

fn overlap_ok(ds: &Dataset, idx: &[usize], counts: &mut Vec<[usize; 2]>) -> bool {
    counts.clear();
    counts.resize(ds.num_cells(), [0, 0]);
    let x = ds.treatments();
    let w = ds.cell_ids();
    for &i in idx {
        counts[w[i]][x[i] as usize] += 1;
    }
    counts.iter().all(|c| c[0] > 0 && c[1] > 0)
}

/// Draws `n` row indices with replacement such that every cell keeps both
/// arms. Returns the indices and the number of rejected draws.
pub fn resample_indices(
    ds: &Dataset,
    rng: &mut Rng,
    policy: OverlapPolicy,
) -> Result<(Vec<usize>, usize)> {
    let n = ds.len();
    let mut idx = vec![0usize; n];
    let mut counts = Vec::new();
    for attempt in 0..=REDRAW_CAP {
        for v in idx.iter_mut() {
            *v = rng.random_range(0..n);
        }
        if overlap_ok(ds, &idx, &mut counts) {
            return Ok((idx, attempt));
        }
        if policy == OverlapPolicy::Fail {
            let j = counts.iter().position(|c| c[0] == 0 || c[1] == 0).unwrap();
            return Err(Error::OverlapViolated {
                cell: ds.cell_label(j),
                detail: "resample lost an arm".into(),
            });
        }
    }
    Err(Error::RedrawCapExceeded(REDRAW_CAP))
}

/// Nonparametric bootstrap resample of `ds`, redrawing on overlap failure.
pub fn bootstrap_resample(ds: &Dataset, rng_seed: u64) -> Result<Dataset> {
    let mut rng = rng_from_seed(rng_seed);
    let (idx, _) = resample_indices(ds, &mut rng, OverlapPolicy::Redraw)?;
    ds.subsample(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy() -> Dataset {
        Dataset::from_cells(
            vec![1.0, 2.0, 3.0, 0.5, 4.0, 1.0, 1.0, 2.0],
            vec![1, 1, 1, 0, 0, 1, 0, 0],
            vec![0, 0, 0, 0, 0, 1, 1, 1],
        )
        .unwrap()
    }

    #[test]
    fn counting_estimates() {
        let ce = estimate_theta(&toy()).unwrap();
        assert_abs_diff_eq!(cdf_eval(&ce, 2.0, 1, 0).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ce.cells()[0].mass, 5.0 / 8.0);
        assert_abs_diff_eq!(ce.cells()[0].p1, 3.0 / 5.0);
        assert_abs_diff_eq!(ce.cells()[1].p1, 1.0 / 3.0);
        // sample {1,2} in arm 0 of cell 1 plus arm 1 = {1}
        assert_eq!(cdf_eval(&ce, 0.0, 0, 1).unwrap(), 0.0);
        assert_eq!(cdf_eval(&ce, 2.0, 0, 1).unwrap(), 1.0);
        assert!(matches!(cdf_eval(&ce, 0.0, 0, 5), Err(Error::UnknownCell(5))));
        let total: f64 = ce.cells().iter().map(|c| c.mass).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn balanced_single_cell() {
        let ds = Dataset::single_cell(vec![1.0, 2.0, 3.0, 4.0], vec![0, 1, 0, 1]).unwrap();
        let ce = estimate_theta(&ds).unwrap();
        assert_eq!(ce.num_cells(), 1);
        assert_eq!(ce.cells()[0].mass, 1.0);
        assert_eq!(ce.cells()[0].p1, 0.5);
        assert_eq!(ce.c_max(), 0.5);
    }

    #[test]
    fn quantile_level_checked() {
        let ce = estimate_theta(&toy()).unwrap();
        assert!(quantile_eval(&ce, 0.0, 1, 0).is_err());
        assert!(quantile_eval(&ce, 1.0, 1, 0).is_err());
        assert_eq!(quantile_eval(&ce, 0.5, 1, 0).unwrap(), 2.0);
        assert_eq!(quantile_eval(&ce, 1.0 / 3.0, 1, 0).unwrap(), 1.0);
    }

    #[test]
    fn resample_is_seed_deterministic() {
        let ds = toy();
        let a = bootstrap_resample(&ds, 11).unwrap();
        let b = bootstrap_resample(&ds, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), ds.len());
        assert_eq!(a.num_cells(), ds.num_cells());
    }

    #[test]
    fn tiny_cells_exhaust_redraws_or_fail() {
        // one treated and one untreated unit: a resample keeps both only
        // half the time, so redraw succeeds; Fail policy may not
        let ds = Dataset::single_cell(vec![0.0, 1.0], vec![0, 1]).unwrap();
        assert!(bootstrap_resample(&ds, 3).is_ok());
        let mut rng = rng_from_seed(0);
        let mut failures = 0;
        for _ in 0..50 {
            if resample_indices(&ds, &mut rng, OverlapPolicy::Fail).is_err() {
                failures += 1;
            }
        }
        assert!(failures > 0);
    }
}
