//! Univariate outcome distributions: empirical step cdfs and the exact
//! continuous laws used as population oracles.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Right-continuous step cdf with jumps at `knots`.
///
/// `values[i]` is the cdf on `[knots[i], knots[i+1])`. Knots are strictly
/// increasing and values nondecreasing in `[0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCdf {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl StepCdf {
    /// Empirical cdf of a sample. Panics on an empty sample.
    pub fn from_sample(sample: &[f64]) -> Self {
        let mut s = sample.to_vec();
        s.sort_by(f64::total_cmp);
        Self::from_sorted(&s)
    }

    /// Empirical cdf of an already sorted sample.
    pub fn from_sorted(sorted: &[f64]) -> Self {
        assert!(!sorted.is_empty(), "empirical cdf of an empty sample");
        let n = sorted.len() as f64;
        let mut knots = Vec::new();
        let mut values = Vec::new();
        for (i, &v) in sorted.iter().enumerate() {
            if knots.last() == Some(&v) {
                *values.last_mut().unwrap() = (i + 1) as f64 / n;
            } else {
                knots.push(v);
                values.push((i + 1) as f64 / n);
            }
        }
        *values.last_mut().unwrap() = 1.0;
        StepCdf { knots, values }
    }

    /// Builds from raw parts, re-sorting values to restore monotonicity and
    /// clipping them into `[0,1]`; the final value is forced to 1.
    pub fn from_parts(knots: Vec<f64>, mut values: Vec<f64>) -> Self {
        assert_eq!(knots.len(), values.len());
        assert!(!knots.is_empty());
        debug_assert!(knots.windows(2).all(|w| w[0] < w[1]));
        values.sort_by(f64::total_cmp);
        for v in values.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        *values.last_mut().unwrap() = 1.0;
        StepCdf { knots, values }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let i = self.knots.partition_point(|&k| k <= y);
        if i == 0 {
            0.0
        } else {
            self.values[i - 1]
        }
    }

    /// `inf{y : F(y) >= tau}`.
    pub fn quantile(&self, tau: f64) -> f64 {
        let i = self.values.partition_point(|&v| v < tau);
        self.knots[i.min(self.knots.len() - 1)]
    }

    /// Quantiles at a nondecreasing sequence of levels, written to `out`.
    /// Linear in `taus.len() + knots.len()`.
    pub fn quantiles_sorted(&self, taus: &[f64], out: &mut [f64]) {
        let last = self.knots.len() - 1;
        let mut i = 0;
        for (o, &t) in out.iter_mut().zip(taus) {
            while i < last && self.values[i] < t {
                i += 1;
            }
            *o = self.knots[i];
        }
    }

    /// Smallest point carrying positive mass.
    pub fn lower_endpoint(&self) -> f64 {
        let i = self.values.partition_point(|&v| v <= 0.0);
        self.knots[i.min(self.knots.len() - 1)]
    }

    /// Smallest point where the cdf reaches one.
    pub fn upper_endpoint(&self) -> f64 {
        self.quantile(1.0)
    }
}

/// `loc + scale * Z` with `Z` standard normal truncated to `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncNormal {
    pub loc: f64,
    pub scale: f64,
    pub a: f64,
    pub b: f64,
    phi_a: f64,
    phi_b: f64,
}

fn std_normal() -> Normal {
    Normal::standard()
}

impl TruncNormal {
    pub fn new(loc: f64, scale: f64, a: f64, b: f64) -> Self {
        assert!(scale > 0.0 && a < b && a.is_finite() && b.is_finite());
        let n = std_normal();
        TruncNormal {
            loc,
            scale,
            a,
            b,
            phi_a: n.cdf(a),
            phi_b: n.cdf(b),
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let z = (y - self.loc) / self.scale;
        if z <= self.a {
            0.0
        } else if z >= self.b {
            1.0
        } else {
            ((std_normal().cdf(z) - self.phi_a) / (self.phi_b - self.phi_a)).clamp(0.0, 1.0)
        }
    }

    pub fn quantile(&self, tau: f64) -> f64 {
        let t = tau.clamp(0.0, 1.0);
        let p = self.phi_a + t * (self.phi_b - self.phi_a);
        let z = std_normal().inverse_cdf(p).clamp(self.a, self.b);
        self.loc + self.scale * z
    }

    pub fn support(&self) -> (f64, f64) {
        (
            self.loc + self.scale * self.a,
            self.loc + self.scale * self.b,
        )
    }

    /// Mean of the truncated law.
    pub fn mean(&self) -> f64 {
        use statrs::distribution::Continuous;
        let n = std_normal();
        let m = (n.pdf(self.a) - n.pdf(self.b)) / (self.phi_b - self.phi_a);
        self.loc + self.scale * m
    }
}

/// Continuous cdf interpolated linearly between tabulated points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCdf {
    ys: Vec<f64>,
    fs: Vec<f64>,
}

impl GridCdf {
    /// `ys` strictly increasing, `fs` nondecreasing. Values are rescaled so
    /// the table runs from exactly 0 to exactly 1.
    pub fn new(ys: Vec<f64>, fs: Vec<f64>) -> Self {
        assert!(ys.len() >= 2 && ys.len() == fs.len());
        let lo = fs[0];
        let hi = *fs.last().unwrap();
        assert!(hi > lo, "flat cdf table");
        let fs = fs
            .iter()
            .map(|f| ((f - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect::<Vec<_>>();
        GridCdf { ys, fs }
    }

    pub fn points(&self) -> &[f64] {
        &self.ys
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let i = self.ys.partition_point(|&v| v <= y);
        if i == 0 {
            return 0.0;
        }
        if i == self.ys.len() {
            return 1.0;
        }
        let (y0, y1) = (self.ys[i - 1], self.ys[i]);
        let (f0, f1) = (self.fs[i - 1], self.fs[i]);
        f0 + (f1 - f0) * (y - y0) / (y1 - y0)
    }

    pub fn quantile(&self, tau: f64) -> f64 {
        let i = self.fs.partition_point(|&f| f < tau);
        if i == 0 {
            return self.ys[0];
        }
        if i == self.fs.len() {
            return *self.ys.last().unwrap();
        }
        let (y0, y1) = (self.ys[i - 1], self.ys[i]);
        let (f0, f1) = (self.fs[i - 1], self.fs[i]);
        if f1 <= f0 {
            return y1;
        }
        y0 + (tau - f0) / (f1 - f0) * (y1 - y0)
    }

    pub fn support(&self) -> (f64, f64) {
        let lo = self.fs.partition_point(|&f| f <= 0.0).saturating_sub(1);
        let hi = self.fs.partition_point(|&f| f < 1.0).min(self.ys.len() - 1);
        (self.ys[lo], self.ys[hi])
    }
}

/// Conditional outcome distribution of one arm in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Marginal {
    Step(StepCdf),
    TruncNormal(TruncNormal),
    Grid(GridCdf),
}

/// Number of scan points used to search sup/inf over continuous marginals.
pub const CONTINUOUS_SCAN_POINTS: usize = 4001;

impl Marginal {
    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            Marginal::Step(s) => s.cdf(y),
            Marginal::TruncNormal(t) => t.cdf(y),
            Marginal::Grid(g) => g.cdf(y),
        }
    }

    pub fn quantile(&self, tau: f64) -> f64 {
        match self {
            Marginal::Step(s) => s.quantile(tau),
            Marginal::TruncNormal(t) => t.quantile(tau),
            Marginal::Grid(g) => g.quantile(tau),
        }
    }

    /// Quantiles at nondecreasing levels.
    pub fn quantiles_sorted(&self, taus: &[f64], out: &mut [f64]) {
        match self {
            Marginal::Step(s) => s.quantiles_sorted(taus, out),
            _ => {
                for (o, &t) in out.iter_mut().zip(taus) {
                    *o = self.quantile(t);
                }
            }
        }
    }

    /// Support endpoints `(lower, upper)`.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Marginal::Step(s) => (s.lower_endpoint(), s.upper_endpoint()),
            Marginal::TruncNormal(t) => t.support(),
            Marginal::Grid(g) => g.support(),
        }
    }

    /// True when the cdf is piecewise constant, so a scan over
    /// [`Marginal::scan_points`] finds sups and infs exactly.
    pub fn is_step(&self) -> bool {
        matches!(self, Marginal::Step(_))
    }

    /// Points at which the cdf changes (step case) or a dense cover of the
    /// support (continuous case).
    pub fn scan_points(&self) -> Vec<f64> {
        match self {
            Marginal::Step(s) => s.knots().to_vec(),
            Marginal::Grid(g) => g.points().to_vec(),
            Marginal::TruncNormal(t) => {
                let (lo, hi) = t.support();
                let m = CONTINUOUS_SCAN_POINTS - 1;
                (0..=m)
                    .map(|i| lo + (hi - lo) * i as f64 / m as f64)
                    .collect()
            }
        }
    }

    pub fn as_step(&self) -> Option<&StepCdf> {
        match self {
            Marginal::Step(s) => Some(s),
            _ => None,
        }
    }
}
