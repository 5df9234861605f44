//! CSV and JSON writers for frontiers, bands and Monte Carlo tables.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! inputs always give byte-identical files. The layouts are described in
//! `docs/formats.md`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{BandResult, EpsilonSelection};
use crate::bounds::BreakdownPoint;
use crate::error::Result;
use crate::frontier::{Claim, FrontierCurve};
use crate::montecarlo::{BiasSummary, CoverageRow};

/// Version of the file layouts below.
pub const FORMAT_VERSION: u32 = 1;

/// How a band was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMethod {
    /// Numerical-delta-method bootstrap.
    Delta,
    /// Standard bootstrap on the smooth lower approximation.
    Smoothed,
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// `c,t,claim_id`, one block of rows per curve. Undefined grid points have an
/// empty `t`.
pub fn write_frontier_csv<W: Write>(out: W, curves: &[FrontierCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["c", "t", "claim_id"])?;
    for fc in curves {
        let id = fc.claim.id();
        for (j, (&c, &t)) in fc.c_grid.iter().zip(&fc.t_values).enumerate() {
            let t = if fc.undefined.contains(&j) { f64::NAN } else { t };
            w.write_record([num(c), num(t), id.clone()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `c,frontier,lower_band,claim_id`.
pub fn write_band_csv<W: Write>(out: W, bands: &[BandResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["c", "frontier", "lower_band", "claim_id"])?;
    for b in bands {
        let id = b.claim.id();
        for ((&c, &f), &l) in b.c_grid.iter().zip(&b.frontier).zip(&b.lb_on_grid) {
            w.write_record([num(c), num(f), num(l), id.clone()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `N,epsilon,ratio,p_lower,coverage,area_ratio`.
pub fn write_mc_csv<W: Write>(out: W, rows: &[CoverageRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "epsilon", "ratio", "p_lower", "coverage", "area_ratio"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            num(r.epsilon),
            num(r.ratio),
            num(r.p_lower),
            num(r.coverage),
            num(r.area_ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `p_lower,c,truth,mean,se`.
pub fn write_bias_csv<W: Write>(out: W, bias: &[BiasSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p_lower", "c", "truth", "mean", "se"])?;
    for b in bias {
        for j in 0..b.c_grid.len() {
            w.write_record([
                num(b.p_lower),
                num(b.c_grid[j]),
                num(b.truth[j]),
                num(b.mean[j]),
                num(b.se[j]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `ratio,epsilon,coverage,used,selected`.
pub fn write_selection_csv<W: Write>(out: W, sel: &EpsilonSelection) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["ratio", "epsilon", "coverage", "used", "selected"])?;
    for (k, &r) in sel.ratios.iter().enumerate() {
        w.write_record([
            num(r),
            num(crate::bootstrap::epsilon_from_ratio(r, sel.n)),
            num(sel.coverage[k]),
            sel.used[k].to_string(),
            ((r == sel.selected_ratio) as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty-printed JSON followed by a newline.
pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| crate::Error::Io(std::io::Error::other(e)))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(create(path)?, value)
}

pub fn write_frontier_file(path: &Path, curves: &[FrontierCurve]) -> Result<()> {
    write_frontier_csv(create(path)?, curves)
}

pub fn write_band_file(path: &Path, bands: &[BandResult]) -> Result<()> {
    write_band_csv(create(path)?, bands)
}

pub fn write_mc_file(path: &Path, rows: &[CoverageRow]) -> Result<()> {
    write_mc_csv(create(path)?, rows)
}

/// Per-curve part of the frontier sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMeta {
    pub claim_id: String,
    pub claim: Claim,
    pub points: usize,
    pub c_bar: f64,
    pub undefined: Vec<usize>,
    /// Present for pure ATE claims, whose frontier is the indicator
    /// `t = 1{c <= breakdown_point}`.
    pub breakdown_point: Option<BreakdownPoint>,
}

impl CurveMeta {
    pub fn from_curve(fc: &FrontierCurve) -> Self {
        CurveMeta {
            claim_id: fc.claim.id(),
            claim: fc.claim.clone(),
            points: fc.c_grid.len(),
            c_bar: fc.c_bar,
            undefined: fc.undefined.clone(),
            breakdown_point: fc.breakdown,
        }
    }
}

/// JSON sidecar of a frontier CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierMeta<C> {
    pub format_version: u32,
    pub n: usize,
    pub c_max: f64,
    pub curves: Vec<CurveMeta>,
    pub config: C,
}

/// Per-band part of the band sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMeta {
    pub claim_id: String,
    pub k_values: Vec<f64>,
    pub area: f64,
    pub area_ratio: Option<f64>,
    pub critical_value: Option<f64>,
    pub uncovered: usize,
    pub draws_used: usize,
    pub optimal: bool,
}

impl BandMeta {
    pub fn from_band(b: &BandResult) -> Self {
        BandMeta {
            claim_id: b.claim.id(),
            k_values: b.k_values.clone(),
            area: b.area,
            area_ratio: b.area_ratio,
            critical_value: b.critical_value,
            uncovered: b.uncovered,
            draws_used: b.draws_used,
            optimal: b.optimal,
        }
    }
}

/// JSON sidecar of a band CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRunMeta<C> {
    pub format_version: u32,
    pub method: BandMethod,
    #[serde(rename = "B")]
    pub b: usize,
    /// Step size of the numerical delta method; absent for smoothed bands.
    pub epsilon_n: Option<f64>,
    pub alpha: f64,
    pub seed: u64,
    pub n: usize,
    /// Bootstrap draws excluded from the band.
    pub flagged: usize,
    /// Resamples redrawn for lack of overlap.
    pub redraws: usize,
    pub bands: Vec<BandMeta>,
    pub config: C,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontier::CGrid;

    fn curve() -> FrontierCurve {
        let g = CGrid::equal(3, 0.2);
        FrontierCurve {
            claim: Claim::dte(0.0, 0.5),
            c_grid: g.values,
            t_values: vec![1.0, 0.25, 0.0],
            c_bar: 0.2,
            undefined: vec![2],
            breakdown: None,
        }
    }

    #[test]
    fn frontier_csv_layout() {
        let mut buf = Vec::new();
        write_frontier_csv(&mut buf, &[curve()]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "c,t,claim_id\n0,1,\"dte(z=0,p=0.5)\"\n0.1,0.25,\"dte(z=0,p=0.5)\"\n0.2,,\"dte(z=0,p=0.5)\"\n"
        );
    }

    #[test]
    fn mc_csv_header() {
        let mut buf = Vec::new();
        let row = CoverageRow {
            n: 500,
            epsilon: 0.1,
            ratio: 2.0,
            p_lower: 0.25,
            coverage: 0.9,
            area_ratio: 0.7,
            used: 10,
        };
        write_mc_csv(&mut buf, &[row]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("N,epsilon,ratio,p_lower,coverage,area_ratio\n500,0.1,2,0.25,0.9,0.7\n"));
    }

    #[test]
    fn json_is_stable() {
        let meta = FrontierMeta {
            format_version: FORMAT_VERSION,
            n: 10,
            c_max: 0.5,
            curves: vec![CurveMeta::from_curve(&curve())],
            config: serde_json::json!({"seed": 1}),
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_json(&mut a, &meta).unwrap();
        write_json(&mut b, &meta).unwrap();
        assert_eq!(a, b);
        let back: FrontierMeta<serde_json::Value> = serde_json::from_slice(&a).unwrap();
        assert_eq!(back, meta);
    }
}
