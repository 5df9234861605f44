//! Distribution-of-treatment-effect bounds under joint relaxation of
//! independence (c) and rank invariance (t), and the breakdown frontier.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    ate_breakdown_point, cdf_bound_values, check_c, shifted_levels, BreakdownPoint, TauRule,
    DEFAULT_BISECTION_TOL, DEFAULT_TAU_POINTS,
};
use crate::empirical::{CellEstimates, CellTheta};
use crate::error::{Error, Result};
use crate::marginal::Marginal;
use crate::rng::rng_from_seed;

/// How two or more claims are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointOp {
    And,
    Or,
}

/// A conclusion whose robustness is studied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Claim {
    /// `P(Y1 - Y0 > z) >= p_lower`.
    DteAtLeast { z: f64, p_lower: f64 },
    /// `ATE >= mu`.
    AteAtLeast { mu: f64 },
    /// Conjunction or disjunction of member claims.
    Joint { op: JointOp, claims: Vec<Claim> },
}

impl Claim {
    pub fn dte(z: f64, p_lower: f64) -> Self {
        Claim::DteAtLeast { z, p_lower }
    }

    pub fn ate(mu: f64) -> Self {
        Claim::AteAtLeast { mu }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Claim::DteAtLeast { z, p_lower } => {
                if !z.is_finite() {
                    return Err(Error::InvalidArgument("threshold z must be finite".into()));
                }
                if !(0.0..=1.0).contains(p_lower) {
                    return Err(Error::InvalidArgument(format!(
                        "p_lower = {p_lower} outside [0,1]"
                    )));
                }
                Ok(())
            }
            Claim::AteAtLeast { mu } => {
                if mu.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument("threshold mu must be finite".into()))
                }
            }
            Claim::Joint { claims, .. } => {
                if claims.is_empty() {
                    return Err(Error::InvalidArgument("joint claim without members".into()));
                }
                claims.iter().try_for_each(Claim::validate)
            }
        }
    }

    /// Short identifier used in exported files.
    pub fn id(&self) -> String {
        match self {
            Claim::DteAtLeast { z, p_lower } => format!("dte(z={z},p={p_lower})"),
            Claim::AteAtLeast { mu } => format!("ate(mu={mu})"),
            Claim::Joint { op, claims } => {
                let inner: Vec<String> = claims.iter().map(Claim::id).collect();
                let op = match op {
                    JointOp::And => "and",
                    JointOp::Or => "or",
                };
                format!("{op}[{}]", inner.join(";"))
            }
        }
    }

    fn collect_z(&self, out: &mut Vec<f64>) {
        match self {
            Claim::DteAtLeast { z, .. } => out.push(*z),
            Claim::AteAtLeast { .. } => {}
            Claim::Joint { claims, .. } => claims.iter().for_each(|c| c.collect_z(out)),
        }
    }

    fn collect_mu(&self, out: &mut Vec<f64>) {
        match self {
            Claim::AteAtLeast { mu } => out.push(*mu),
            Claim::DteAtLeast { .. } => {}
            Claim::Joint { claims, .. } => claims.iter().for_each(|c| c.collect_mu(out)),
        }
    }
}

/// Probability interval for `P(Y1 - Y0 <= z)` (or a cell analog).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DteBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Which pre-rearrangement bound to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Uses `Q1_lower - Q0_upper`, the smallest quantile difference.
    Upper,
    /// Uses `Q1_upper - Q0_lower`.
    Lower,
}

/// Numerical settings shared by every frontier evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierSettings {
    /// Cells of the midpoint rule on `(0,1)` for pre-rearrangement; rounded
    /// up to an even number so `1/2` is never a node.
    pub u_cells: usize,
    /// Interior quadrature points for ATE bounds.
    pub tau_points: usize,
    /// Bisection tolerance for breakdown points.
    pub bisection_tol: f64,
    /// `|denom|` at or below this marks a frontier point as undefined.
    pub denom_tol: f64,
}

impl Default for FrontierSettings {
    fn default() -> Self {
        FrontierSettings {
            u_cells: 2000,
            tau_points: DEFAULT_TAU_POINTS,
            bisection_tol: DEFAULT_BISECTION_TOL,
            denom_tol: 1e-12,
        }
    }
}

/// Midpoints `(i + 1/2)/M` of `M` equal cells, with `M` forced even.
pub fn u_grid(cells: usize) -> Vec<f64> {
    let m = (cells.max(2) + 1) / 2 * 2;
    (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect()
}

/// Measure of `{u : f(u) <= z}` by the midpoint rule on the values `f(u_i)`.
pub fn prerearrangement_values(f: &[f64], z: f64) -> f64 {
    let k = f.iter().filter(|&&v| v <= z).count();
    k as f64 / f.len() as f64
}

/// Lower/upper quantile bounds of one arm along a sorted level grid.
fn quantile_bound_paths(
    m: &Marginal,
    p: f64,
    c: f64,
    us: &[f64],
    lo_lv: &mut Vec<f64>,
    hi_lv: &mut Vec<f64>,
    q_lo: &mut [f64],
    q_hi: &mut [f64],
) {
    lo_lv.clear();
    hi_lv.clear();
    for &u in us {
        let (a, b) = shifted_levels(u, p, c);
        lo_lv.push(a);
        hi_lv.push(b);
    }
    m.quantiles_sorted(lo_lv, q_lo);
    m.quantiles_sorted(hi_lv, q_hi);
}

/// Quantile-difference paths on the u-grid: `(Q1_lower - Q0_upper,
/// Q1_upper - Q0_lower)`.
pub fn quantile_differences(cell: &CellTheta, c: f64, us: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = us.len();
    let (mut a, mut b) = (Vec::with_capacity(m), Vec::with_capacity(m));
    let mut q1 = (vec![0.0; m], vec![0.0; m]);
    let mut q0 = (vec![0.0; m], vec![0.0; m]);
    quantile_bound_paths(cell.marginal(1), cell.p1, c, us, &mut a, &mut b, &mut q1.0, &mut q1.1);
    quantile_bound_paths(
        cell.marginal(0),
        1.0 - cell.p1,
        c,
        us,
        &mut a,
        &mut b,
        &mut q0.0,
        &mut q0.1,
    );
    let upper_dir = q1.0.iter().zip(&q0.1).map(|(x, y)| x - y).collect();
    let lower_dir = q1.1.iter().zip(&q0.0).map(|(x, y)| x - y).collect();
    (upper_dir, lower_dir)
}

/// Value of both CDTE bounds when `Y_z(w)` is empty.
fn degenerate_value(cell: &CellTheta, z: f64) -> f64 {
    let (_, y1_hi) = cell.marginal(1).support();
    let (y0_lo, _) = cell.marginal(0).support();
    if z > y1_hi - y0_lo {
        1.0
    } else {
        0.0
    }
}

/// Scan points over `Y_z(w) = [y1_lo, y1_hi] ∩ [y0_lo + z, y0_hi + z]` with
/// the c-free cdf values `F1(y)` and `F0(y - z)`.
#[derive(Debug, Clone)]
pub struct MakarovProfile {
    /// Set when `Y_z(w)` is empty: the common value of every CDTE bound.
    pub degenerate: Option<f64>,
    pub ys: Vec<f64>,
    pub f1: Vec<f64>,
    pub f0: Vec<f64>,
    pub p1: f64,
    pub exact: bool,
}

impl MakarovProfile {
    pub fn new(cell: &CellTheta, z: f64) -> Self {
        let m1 = cell.marginal(1);
        let m0 = cell.marginal(0);
        let (l1, h1) = m1.support();
        let (l0, h0) = m0.support();
        let lo = l1.max(l0 + z);
        let hi = h1.min(h0 + z);
        if lo > hi {
            return MakarovProfile {
                degenerate: Some(degenerate_value(cell, z)),
                ys: Vec::new(),
                f1: Vec::new(),
                f0: Vec::new(),
                p1: cell.p1,
                exact: true,
            };
        }
        let mut ys = vec![lo];
        ys.extend(m1.scan_points().into_iter().filter(|&y| y > lo && y <= hi));
        ys.extend(
            m0.scan_points()
                .into_iter()
                .map(|y| y + z)
                .filter(|&y| y > lo && y <= hi),
        );
        if !(m1.is_step() && m0.is_step()) {
            ys.push(hi);
        }
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        let f1 = ys
            .iter()
            .map(|&y| match m1 {
                Marginal::Step(s) => {
                    let i = s.knots().partition_point(|&k| k <= y);
                    if i == 0 {
                        0.0
                    } else {
                        s.values()[i - 1]
                    }
                }
                _ => m1.cdf(y),
            })
            .collect();
        // for step cdfs the shifted knots are compared as `k + z <= y`, the
        // same arithmetic that produced the scan points
        let f0 = ys
            .iter()
            .map(|&y| match m0 {
                Marginal::Step(s) => {
                    let i = s.knots().partition_point(|&k| k + z <= y);
                    if i == 0 {
                        0.0
                    } else {
                        s.values()[i - 1]
                    }
                }
                _ => m0.cdf(y - z),
            })
            .collect();
        MakarovProfile {
            degenerate: None,
            ys,
            f1,
            f0,
            p1: cell.p1,
            exact: m1.is_step() && m0.is_step(),
        }
    }

    /// `(sup_y F1_lower(y) - F0_upper(y-z), inf_y F1_upper(y) - F0_lower(y-z))`
    /// over the scan points. `None` when `Y_z(w)` is empty.
    pub fn terms(&self, c: f64) -> Option<(f64, f64)> {
        if self.degenerate.is_some() {
            return None;
        }
        let p1 = self.p1;
        let p0 = 1.0 - p1;
        let mut sup = f64::NEG_INFINITY;
        let mut inf = f64::INFINITY;
        for (&a, &b) in self.f1.iter().zip(&self.f0) {
            let (l1, u1) = cdf_bound_values(a, p1, c);
            let (l0, u0) = cdf_bound_values(b, p0, c);
            sup = sup.max(l1 - u0);
            inf = inf.min(u1 - l0);
        }
        Some((sup, inf))
    }

    /// `F1_upper(y) - F0_lower(y - z)` at every scan point, with the width
    /// of the interval each point represents (left Riemann weights).
    pub fn upper_difference(&self, c: f64) -> (Vec<f64>, Vec<f64>) {
        let p1 = self.p1;
        let p0 = 1.0 - p1;
        let g = self
            .f1
            .iter()
            .zip(&self.f0)
            .map(|(&a, &b)| cdf_bound_values(a, p1, c).1 - cdf_bound_values(b, p0, c).0)
            .collect();
        let n = self.ys.len();
        let mut w = vec![0.0; n];
        for i in 0..n.saturating_sub(1) {
            w[i] = self.ys[i + 1] - self.ys[i];
        }
        (g, w)
    }
}

/// Per-cell pieces of the DTE bounds at one `(z, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellPieces {
    /// Rank-invariant upper bound `P_upper(c|w)`.
    pub p_upper: f64,
    /// Rank-invariant lower bound `P_lower(c|w)`.
    pub p_lower: f64,
    /// `max{sup term, 0}`: Makarov lower bound.
    pub makarov_lower: f64,
    /// `1 + min{inf term, 0}`: Makarov upper bound.
    pub makarov_upper: f64,
}

impl CellPieces {
    pub fn cdte(&self, t: f64) -> DteBounds {
        DteBounds {
            lower: ((1.0 - t) * self.p_lower + t * self.makarov_lower).clamp(0.0, 1.0),
            upper: ((1.0 - t) * self.p_upper + t * self.makarov_upper).clamp(0.0, 1.0),
        }
    }
}

/// Reusable buffers for the pre-rearrangement at many `c`.
struct PrBuffers {
    lo_lv: Vec<f64>,
    hi_lv: Vec<f64>,
    q1: (Vec<f64>, Vec<f64>),
    q0: (Vec<f64>, Vec<f64>),
}

impl PrBuffers {
    fn new(m: usize) -> Self {
        PrBuffers {
            lo_lv: Vec::with_capacity(m),
            hi_lv: Vec::with_capacity(m),
            q1: (vec![0.0; m], vec![0.0; m]),
            q0: (vec![0.0; m], vec![0.0; m]),
        }
    }

    /// Returns `(P_upper, P_lower)` for every z in `zs`.
    fn prerearrange(&mut self, cell: &CellTheta, c: f64, us: &[f64], zs: &[f64], out: &mut [(f64, f64)]) {
        quantile_bound_paths(
            cell.marginal(1),
            cell.p1,
            c,
            us,
            &mut self.lo_lv,
            &mut self.hi_lv,
            &mut self.q1.0,
            &mut self.q1.1,
        );
        quantile_bound_paths(
            cell.marginal(0),
            1.0 - cell.p1,
            c,
            us,
            &mut self.lo_lv,
            &mut self.hi_lv,
            &mut self.q0.0,
            &mut self.q0.1,
        );
        let m = us.len() as f64;
        for (o, &z) in out.iter_mut().zip(zs) {
            let mut up = 0usize;
            let mut lo = 0usize;
            for i in 0..us.len() {
                if self.q1.0[i] - self.q0.1[i] <= z {
                    up += 1;
                }
                if self.q1.1[i] - self.q0.0[i] <= z {
                    lo += 1;
                }
            }
            *o = (up as f64 / m, lo as f64 / m);
        }
    }
}

/// Mass-weighted DTE pieces on a c-grid for one threshold `z`.
///
/// Everything a DTE frontier needs is here, so frontiers for many `p_lower`
/// values come from one set of components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DteComponents {
    pub z: f64,
    pub c_grid: Vec<f64>,
    /// `sum_w q_w P_upper(c|w)`.
    pub p_upper: Vec<f64>,
    /// `sum_w q_w P_lower(c|w)`.
    pub p_lower: Vec<f64>,
    /// `sum_w q_w max{sup term, 0}`.
    pub makarov_lower: Vec<f64>,
    /// `sum_w q_w (1 + min{inf term, 0})`.
    pub makarov_upper: Vec<f64>,
}

/// `sup{t in [0,1] : t * denom <= num}`, or 0 when no `t` qualifies.
#[inline]
pub fn frontier_value(num: f64, denom: f64) -> f64 {
    if denom > 0.0 {
        (num / denom).clamp(0.0, 1.0)
    } else if num >= denom {
        1.0
    } else {
        0.0
    }
}

impl DteComponents {
    pub fn dte_bounds(&self, j: usize, t: f64) -> DteBounds {
        DteBounds {
            lower: ((1.0 - t) * self.p_lower[j] + t * self.makarov_lower[j]).clamp(0.0, 1.0),
            upper: ((1.0 - t) * self.p_upper[j] + t * self.makarov_upper[j]).clamp(0.0, 1.0),
        }
    }

    /// `(num, denom)` of the frontier at grid point `j`.
    pub fn num_denom(&self, j: usize, p_lower: f64) -> (f64, f64) {
        let num = 1.0 - p_lower - self.p_upper[j];
        let denom = self.makarov_upper[j] - self.p_upper[j];
        (num, denom)
    }

    /// Frontier values and the indices where `|denom|` is within `tol`.
    pub fn frontier(&self, p_lower: f64, tol: f64) -> (Vec<f64>, Vec<usize>) {
        let mut vals = Vec::with_capacity(self.c_grid.len());
        let mut undefined = Vec::new();
        for j in 0..self.c_grid.len() {
            let (num, denom) = self.num_denom(j, p_lower);
            if denom.abs() <= tol {
                undefined.push(j);
            }
            vals.push(frontier_value(num, denom));
        }
        (vals, undefined)
    }
}

/// Breakdown frontier of a claim on a c-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierCurve {
    pub claim: Claim,
    pub c_grid: Vec<f64>,
    pub t_values: Vec<f64>,
    /// Right end of the c-range; normalizes areas.
    pub c_bar: f64,
    /// Grid indices where the denominator vanished.
    pub undefined: Vec<usize>,
    /// For pure ATE claims, the estimated breakdown point.
    pub breakdown: Option<BreakdownPoint>,
}

/// Normalized area under the frontier: trapezoid over the grid divided by
/// `c_bar`.
pub fn robust_region_area(fc: &FrontierCurve) -> f64 {
    if fc.c_bar <= 0.0 {
        return 0.0;
    }
    let area: f64 = fc
        .c_grid
        .windows(2)
        .zip(fc.t_values.windows(2))
        .map(|(c, t)| 0.5 * (t[0] + t[1]) * (c[1] - c[0]))
        .sum();
    area / fc.c_bar
}

/// Right-Riemann area `sum_{j>=2} v_j (c_j - c_{j-1})`.
pub fn right_riemann_area(c_grid: &[f64], values: &[f64]) -> f64 {
    c_grid
        .windows(2)
        .zip(&values[1..])
        .map(|(c, v)| v * (c[1] - c[0]))
        .sum()
}

/// Choice of c-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    /// `points` equally spaced values on `[0, upper_frac * c_max]`.
    Equal { points: usize, upper_frac: f64 },
    /// One uniform draw in each of `points` equal strata of
    /// `[0, upper_frac * c_max]`.
    Jittered {
        points: usize,
        upper_frac: f64,
        seed: u64,
    },
    /// Given values.
    Explicit { values: Vec<f64> },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Equal {
            points: 50,
            upper_frac: 0.9,
        }
    }
}

/// A concrete c-grid with its right end `c_bar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CGrid {
    pub values: Vec<f64>,
    pub c_bar: f64,
}

impl CGrid {
    /// Equally spaced grid on `[0, c_bar]`.
    pub fn equal(points: usize, c_bar: f64) -> Self {
        let values = if points <= 1 {
            vec![0.0]
        } else {
            (0..points)
                .map(|j| c_bar * j as f64 / (points - 1) as f64)
                .collect()
        };
        CGrid { values, c_bar }
    }

    /// Builds the grid for estimates whose smallest propensity is `c_max`;
    /// `extra` points (e.g. leave-out-variable values) are merged in.
    pub fn build(spec: &GridSpec, c_max: f64, extra: &[f64]) -> Result<Self> {
        let mut grid = match spec {
            GridSpec::Equal { points, upper_frac } => {
                check_frac(*upper_frac)?;
                check_points(*points)?;
                CGrid::equal(*points, upper_frac * c_max)
            }
            GridSpec::Jittered {
                points,
                upper_frac,
                seed,
            } => {
                check_frac(*upper_frac)?;
                check_points(*points)?;
                let c_bar = upper_frac * c_max;
                let mut rng = rng_from_seed(*seed);
                let values = (0..*points)
                    .map(|j| c_bar * (j as f64 + rng.random::<f64>()) / *points as f64)
                    .collect();
                CGrid { values, c_bar }
            }
            GridSpec::Explicit { values } => {
                if values.is_empty() {
                    return Err(Error::InvalidArgument("empty c-grid".into()));
                }
                let c_bar = values.iter().cloned().fold(0.0, f64::max);
                CGrid {
                    values: values.clone(),
                    c_bar,
                }
            }
        };
        grid.values.extend_from_slice(extra);
        grid.values.sort_by(f64::total_cmp);
        grid.values.dedup();
        grid.c_bar = grid.values.iter().cloned().fold(grid.c_bar, f64::max);
        if let Some(&bad) = grid.values.iter().find(|&&c| !(c >= 0.0)) {
            return Err(Error::InvalidArgument(format!("grid value {bad} is negative")));
        }
        if grid.c_bar >= c_max {
            return Err(Error::CExceedsRegion {
                c: grid.c_bar,
                p: c_max,
            });
        }
        Ok(grid)
    }
}

fn check_frac(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("grid fraction {f} outside (0,1)")))
    }
}

fn check_points(p: usize) -> Result<()> {
    if p == 0 {
        Err(Error::InvalidArgument("grid needs at least one point".into()))
    } else {
        Ok(())
    }
}

/// Frontier evaluator holding the quadrature grids.
#[derive(Debug, Clone)]
pub struct FrontierEngine {
    settings: FrontierSettings,
    us: Vec<f64>,
    tau_rule: TauRule,
}

impl Default for FrontierEngine {
    fn default() -> Self {
        FrontierEngine::new(FrontierSettings::default())
    }
}

impl FrontierEngine {
    pub fn new(settings: FrontierSettings) -> Self {
        let us = u_grid(settings.u_cells);
        let tau_rule = TauRule::new(settings.tau_points);
        FrontierEngine {
            settings,
            us,
            tau_rule,
        }
    }

    pub fn settings(&self) -> &FrontierSettings {
        &self.settings
    }

    pub fn u_grid(&self) -> &[f64] {
        &self.us
    }

    pub fn tau_rule(&self) -> &TauRule {
        &self.tau_rule
    }

    fn check_grid(ce: &CellEstimates, c_grid: &[f64]) -> Result<()> {
        let c_max = ce.c_max();
        for &c in c_grid {
            check_c(c, c_max)?;
        }
        Ok(())
    }

    /// Pre-rearrangement bound for one cell.
    pub fn prerearrangement(
        &self,
        ce: &CellEstimates,
        z: f64,
        w: usize,
        c: f64,
        direction: Direction,
    ) -> Result<f64> {
        let cell = ce.cell(w)?;
        check_c(c, cell.p1.min(1.0 - cell.p1))?;
        let mut buf = PrBuffers::new(self.us.len());
        let mut out = [(0.0, 0.0)];
        buf.prerearrange(cell, c, &self.us, &[z], &mut out);
        Ok(match direction {
            Direction::Upper => out[0].0,
            Direction::Lower => out[0].1,
        })
    }

    /// Raw `(sup, inf)` Makarov terms for one cell; `None` when `Y_z(w)` is
    /// empty.
    pub fn makarov_terms(
        &self,
        ce: &CellEstimates,
        z: f64,
        w: usize,
        c: f64,
    ) -> Result<Option<(f64, f64)>> {
        let cell = ce.cell(w)?;
        check_c(c, cell.p1.min(1.0 - cell.p1))?;
        Ok(MakarovProfile::new(cell, z).terms(c))
    }

    /// All per-cell pieces at `(z, c)` for cell `w`.
    pub fn cell_pieces(&self, ce: &CellEstimates, z: f64, w: usize, c: f64) -> Result<CellPieces> {
        let cell = ce.cell(w)?;
        check_c(c, cell.p1.min(1.0 - cell.p1))?;
        let prof = MakarovProfile::new(cell, z);
        let mut buf = PrBuffers::new(self.us.len());
        Ok(pieces_for(cell, &prof, c, &self.us, z, &mut buf))
    }

    /// CDTE bounds in cell `w`.
    pub fn cdte_bounds(
        &self,
        ce: &CellEstimates,
        z: f64,
        w: usize,
        c: f64,
        t: f64,
    ) -> Result<DteBounds> {
        check_t(t)?;
        Ok(self.cell_pieces(ce, z, w, c)?.cdte(t))
    }

    /// DTE bounds: mass-weighted CDTE bounds.
    pub fn dte_bounds(&self, ce: &CellEstimates, z: f64, c: f64, t: f64) -> Result<DteBounds> {
        check_t(t)?;
        let comps = self.components(ce, &[z], &[c])?;
        Ok(comps[0].dte_bounds(0, t))
    }

    /// DTE components for each `z` in `zs` on `c_grid`.
    pub fn components(
        &self,
        ce: &CellEstimates,
        zs: &[f64],
        c_grid: &[f64],
    ) -> Result<Vec<DteComponents>> {
        Self::check_grid(ce, c_grid)?;
        let nz = zs.len();
        let nc = c_grid.len();
        let mut out: Vec<DteComponents> = zs
            .iter()
            .map(|&z| DteComponents {
                z,
                c_grid: c_grid.to_vec(),
                p_upper: vec![0.0; nc],
                p_lower: vec![0.0; nc],
                makarov_lower: vec![0.0; nc],
                makarov_upper: vec![0.0; nc],
            })
            .collect();
        let mut buf = PrBuffers::new(self.us.len());
        let mut pr = vec![(0.0, 0.0); nz];
        for cell in ce.cells() {
            let q = cell.mass;
            let profiles: Vec<MakarovProfile> =
                zs.iter().map(|&z| MakarovProfile::new(cell, z)).collect();
            for (j, &c) in c_grid.iter().enumerate() {
                let need_pr = profiles.iter().any(|p| p.degenerate.is_none());
                if need_pr {
                    buf.prerearrange(cell, c, &self.us, zs, &mut pr);
                }
                for (k, prof) in profiles.iter().enumerate() {
                    let pieces = combine(prof, c, pr[k]);
                    let o = &mut out[k];
                    o.p_upper[j] += q * pieces.p_upper;
                    o.p_lower[j] += q * pieces.p_lower;
                    o.makarov_lower[j] += q * pieces.makarov_lower;
                    o.makarov_upper[j] += q * pieces.makarov_upper;
                }
            }
        }
        Ok(out)
    }

    /// Frontiers for several claims, sharing the expensive pieces.
    pub fn frontiers(
        &self,
        ce: &CellEstimates,
        claims: &[Claim],
        grid: &CGrid,
    ) -> Result<Vec<FrontierCurve>> {
        for c in claims {
            c.validate()?;
        }
        let mut zs = Vec::new();
        let mut mus = Vec::new();
        for c in claims {
            c.collect_z(&mut zs);
            c.collect_mu(&mut mus);
        }
        zs.sort_by(f64::total_cmp);
        zs.dedup();
        mus.sort_by(f64::total_cmp);
        mus.dedup();
        let comps = if zs.is_empty() {
            Self::check_grid(ce, &grid.values)?;
            Vec::new()
        } else {
            self.components(ce, &zs, &grid.values)?
        };
        let comp_map: BTreeMap<u64, &DteComponents> =
            comps.iter().map(|c| (c.z.to_bits(), c)).collect();
        let mut bps = BTreeMap::new();
        for &mu in &mus {
            let bp = ate_breakdown_point(
                ce,
                mu,
                grid.c_bar,
                self.settings.bisection_tol,
                &self.tau_rule,
            )?;
            bps.insert(mu.to_bits(), bp);
        }
        let ctx = Ctx {
            comps: &comp_map,
            bps: &bps,
            grid,
            tol: self.settings.denom_tol,
        };
        Ok(claims.iter().map(|c| ctx.curve(c)).collect())
    }

    /// Frontier of a single claim.
    pub fn breakdown_frontier(
        &self,
        ce: &CellEstimates,
        claim: &Claim,
        grid: &CGrid,
    ) -> Result<FrontierCurve> {
        Ok(self
            .frontiers(ce, std::slice::from_ref(claim), grid)?
            .pop()
            .unwrap())
    }

    /// Whether `(c, t)` lies in the robust region of `claim`.
    pub fn is_robust(
        &self,
        ce: &CellEstimates,
        claim: &Claim,
        c: f64,
        t: f64,
        c_search_max: f64,
    ) -> Result<bool> {
        Ok(match claim {
            Claim::DteAtLeast { z, p_lower } => {
                let comps = self.components(ce, &[*z], &[c])?;
                let (num, denom) = comps[0].num_denom(0, *p_lower);
                t <= frontier_value(num, denom)
            }
            Claim::AteAtLeast { mu } => {
                let bp = ate_breakdown_point(
                    ce,
                    *mu,
                    c_search_max,
                    self.settings.bisection_tol,
                    &self.tau_rule,
                )?;
                !bp.degenerate && c <= bp.value
            }
            Claim::Joint { op, claims } => {
                let mut res = Vec::with_capacity(claims.len());
                for m in claims {
                    res.push(self.is_robust(ce, m, c, t, c_search_max)?);
                }
                match op {
                    JointOp::And => res.iter().all(|&b| b),
                    JointOp::Or => res.iter().any(|&b| b),
                }
            }
        })
    }

    /// `sup{m : m * d in the robust region}` within `[0, c_bar] x [0, 1]`,
    /// by bisection along the ray.
    pub fn directional_breakdown_point(
        &self,
        ce: &CellEstimates,
        claim: &Claim,
        d: (f64, f64),
        c_bar: f64,
        tol: f64,
    ) -> Result<f64> {
        claim.validate()?;
        let (dc, dt) = d;
        if !(dc >= 0.0 && dt >= 0.0) || (dc == 0.0 && dt == 0.0) {
            return Err(Error::InvalidArgument(
                "direction must be nonzero with nonnegative components".into(),
            ));
        }
        if c_bar >= ce.c_max() {
            return Err(Error::CExceedsRegion {
                c: c_bar,
                p: ce.c_max(),
            });
        }
        let mut m_max = f64::INFINITY;
        if dc > 0.0 {
            m_max = m_max.min(c_bar / dc);
        }
        if dt > 0.0 {
            m_max = m_max.min(1.0 / dt);
        }
        let inside = |m: f64| self.is_robust(ce, claim, (m * dc).min(c_bar), (m * dt).min(1.0), c_bar);
        if !inside(0.0)? {
            return Ok(0.0);
        }
        if inside(m_max)? {
            return Ok(m_max);
        }
        let (mut lo, mut hi) = (0.0, m_max);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if inside(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("t = {t} outside [0,1]")))
    }
}

fn combine(prof: &MakarovProfile, c: f64, pr: (f64, f64)) -> CellPieces {
    if let Some(v) = prof.degenerate {
        return CellPieces {
            p_upper: v,
            p_lower: v,
            makarov_lower: v,
            makarov_upper: v,
        };
    }
    let (sup, inf) = prof.terms(c).unwrap();
    CellPieces {
        p_upper: pr.0,
        p_lower: pr.1,
        makarov_lower: sup.max(0.0),
        makarov_upper: 1.0 + inf.min(0.0),
    }
}

fn pieces_for(
    cell: &CellTheta,
    prof: &MakarovProfile,
    c: f64,
    us: &[f64],
    z: f64,
    buf: &mut PrBuffers,
) -> CellPieces {
    let mut pr = [(0.0, 0.0)];
    if prof.degenerate.is_none() {
        buf.prerearrange(cell, c, us, &[z], &mut pr);
    }
    combine(prof, c, pr[0])
}

struct Ctx<'a> {
    comps: &'a BTreeMap<u64, &'a DteComponents>,
    bps: &'a BTreeMap<u64, BreakdownPoint>,
    grid: &'a CGrid,
    tol: f64,
}

impl Ctx<'_> {
    fn curve(&self, claim: &Claim) -> FrontierCurve {
        let c_grid = self.grid.values.clone();
        let (t_values, undefined, breakdown) = match claim {
            Claim::DteAtLeast { z, p_lower } => {
                let (v, u) = self.comps[&z.to_bits()].frontier(*p_lower, self.tol);
                (v, u, None)
            }
            Claim::AteAtLeast { mu } => {
                let bp = self.bps[&mu.to_bits()];
                let v = c_grid
                    .iter()
                    .map(|&c| {
                        if !bp.degenerate && c <= bp.value {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                (v, Vec::new(), Some(bp))
            }
            Claim::Joint { op, claims } => {
                let members: Vec<FrontierCurve> = claims.iter().map(|c| self.curve(c)).collect();
                let mut v = members[0].t_values.clone();
                for m in &members[1..] {
                    for (a, &b) in v.iter_mut().zip(&m.t_values) {
                        *a = match op {
                            JointOp::And => a.min(b),
                            JointOp::Or => a.max(b),
                        };
                    }
                }
                let mut u: Vec<usize> = members.iter().flat_map(|m| m.undefined.clone()).collect();
                u.sort_unstable();
                u.dedup();
                (v, u, None)
            }
        };
        FrontierCurve {
            claim: claim.clone(),
            c_grid,
            t_values,
            c_bar: self.grid.c_bar,
            undefined,
            breakdown,
        }
    }
}
