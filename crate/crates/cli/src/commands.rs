use std::path::{Path, PathBuf};

use breakdown::bootstrap::{
    self, epsilon_from_ratio, ratio_from_epsilon, BootstrapConfig, EpsilonSelection,
    SelectConfig, SigmaMode,
};
use breakdown::bounds::leave_out_k_cbar;
use breakdown::data::{coarsen, load_csv_raw, write_csv, CoarseningSpec, Dataset};
use breakdown::empirical::{estimate_theta, OverlapPolicy};
use breakdown::export::{
    self, BandMeta, BandMethod, BandRunMeta, CurveMeta, FrontierMeta, FORMAT_VERSION,
};
use breakdown::frontier::{CGrid, Claim, FrontierEngine, FrontierSettings, GridSpec, JointOp};
use breakdown::minarea::DEFAULT_NODE_LIMIT;
use breakdown::montecarlo::{coverage_study, dgp_sample, CoverageConfig, McDgp};
use breakdown::smoothing::{smoothed_band, SmoothingConfig};
use serde::Serialize;

use crate::args::*;
use crate::Failure;

type Out = Result<Vec<PathBuf>, Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

pub fn run(cli: &Cli) -> Out {
    std::fs::create_dir_all(&cli.out_dir)?;
    let dir = cli.out_dir.as_path();
    match &cli.command {
        Command::Frontier(a) => frontier(dir, a),
        Command::Band(a) => band(dir, a),
        Command::Mc(a) => mc(dir, a),
        Command::SelectEpsilon(a) => select(dir, a),
        Command::Diagnose(a) => diagnose(dir, a),
        Command::Simulate(a) => simulate(dir, a),
    }
}

/// Resolved input settings, echoed into every sidecar.
#[derive(Debug, Serialize)]
struct DataConfig {
    input: String,
    outcome: String,
    treatment: String,
    covariates: Vec<String>,
    coarsen: Vec<f64>,
}

fn load(a: &DataArgs) -> Result<(Dataset, DataConfig), Failure> {
    if !a.input.is_file() {
        return Err(invalid(format!("input file {} not found", a.input.display())));
    }
    let raw = load_csv_raw(&a.input, &a.outcome, &a.treatment, &a.covariates)?;
    let ds = if a.coarsen.is_empty() {
        raw.validate_overlap()?;
        raw
    } else {
        let spec = CoarseningSpec::uniform(a.covariates.len(), &a.coarsen)?;
        coarsen(&raw, &spec)?
    };
    let cfg = DataConfig {
        input: a.input.display().to_string(),
        outcome: a.outcome.clone(),
        treatment: a.treatment.clone(),
        covariates: a.covariates.clone(),
        coarsen: a.coarsen.clone(),
    };
    Ok((ds, cfg))
}

fn parse_member(s: &str) -> Result<Claim, Failure> {
    let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
    let num = |t: &str| {
        t.parse::<f64>()
            .map_err(|_| invalid(format!("bad number `{t}` in claim `{s}`")))
    };
    match parts.as_slice() {
        ["dte", z, p] => Ok(Claim::dte(num(z)?, num(p)?)),
        ["ate", mu] => Ok(Claim::ate(num(mu)?)),
        _ => Err(invalid(format!(
            "claim `{s}` is not of the form dte:<z>:<p> or ate:<mu>"
        ))),
    }
}

fn claims(a: &ClaimArgs) -> Result<Vec<Claim>, Failure> {
    let out = match a.claim {
        ClaimKind::Dte => a.p_lower.iter().map(|&p| Claim::dte(a.z, p)).collect(),
        ClaimKind::Ate => a.mu.iter().map(|&m| Claim::ate(m)).collect(),
        ClaimKind::JointAnd | ClaimKind::JointOr => {
            let spec = a
                .claims
                .as_deref()
                .ok_or_else(|| invalid("joint claims need --claims"))?;
            let members = spec
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(parse_member)
                .collect::<Result<Vec<_>, _>>()?;
            let op = if a.claim == ClaimKind::JointAnd {
                JointOp::And
            } else {
                JointOp::Or
            };
            vec![Claim::Joint { op, claims: members }]
        }
    };
    let out: Vec<Claim> = out;
    if out.is_empty() {
        return Err(invalid("no claim given"));
    }
    for c in &out {
        c.validate()?;
    }
    Ok(out)
}

fn grid_spec(a: &GridArgs) -> GridSpec {
    if a.grid_values.is_empty() {
        GridSpec::Equal {
            points: a.grid_points,
            upper_frac: a.grid_frac,
        }
    } else {
        GridSpec::Explicit {
            values: a.grid_values.clone(),
        }
    }
}

fn engine(a: &GridArgs) -> Result<(FrontierEngine, FrontierSettings), Failure> {
    if a.u_cells == 0 {
        return Err(invalid("--u-cells must be positive"));
    }
    let settings = FrontierSettings {
        u_cells: a.u_cells,
        ..FrontierSettings::default()
    };
    Ok((FrontierEngine::new(settings.clone()), settings))
}

fn sigma(s: SigmaArg) -> SigmaMode {
    match s {
        SigmaArg::Constant => SigmaMode::ConstantOne,
        SigmaArg::MinArea => SigmaMode::EstimatedMinArea,
    }
}

fn write_json<T: Serialize>(path: PathBuf, v: &T, files: &mut Vec<PathBuf>) -> Result<(), Failure> {
    export::write_json_file(&path, v)?;
    files.push(path);
    Ok(())
}

#[derive(Debug, Serialize)]
struct FrontierConfig {
    subcommand: &'static str,
    data: DataConfig,
    claims: Vec<Claim>,
    grid: GridSpec,
    settings: FrontierSettings,
}

fn frontier(dir: &Path, a: &FrontierArgs) -> Out {
    let (ds, data) = load(&a.data)?;
    let claims = claims(&a.claim)?;
    let (engine, settings) = engine(&a.grid)?;
    let spec = grid_spec(&a.grid);
    let ce = estimate_theta(&ds)?;
    let grid = CGrid::build(&spec, ce.c_max(), &[])?;
    let curves = engine.frontiers(&ce, &claims, &grid)?;

    let mut files = Vec::new();
    let csv = dir.join("frontier.csv");
    export::write_frontier_file(&csv, &curves)?;
    files.push(csv);
    let meta = FrontierMeta {
        format_version: FORMAT_VERSION,
        n: ds.len(),
        c_max: ce.c_max(),
        curves: curves.iter().map(CurveMeta::from_curve).collect(),
        config: FrontierConfig {
            subcommand: "frontier",
            data,
            claims,
            grid: spec,
            settings,
        },
    };
    write_json(dir.join("frontier.json"), &meta, &mut files)?;
    Ok(files)
}

#[derive(Debug, Serialize)]
struct BandConfig {
    subcommand: &'static str,
    data: DataConfig,
    claims: Vec<Claim>,
    grid: GridSpec,
    settings: FrontierSettings,
    method: BandMethod,
    bootstrap: Option<BootstrapConfig>,
    smoothing: Option<SmoothingConfig>,
    selection: Option<EpsilonSelection>,
}

fn band(dir: &Path, a: &BandArgs) -> Out {
    let (ds, data) = load(&a.data)?;
    let claims = claims(&a.claim)?;
    let (engine, settings) = engine(&a.grid)?;
    let spec = grid_spec(&a.grid);
    let n = ds.len();
    let mut selection = None;
    let mut boot = None;
    let mut smoothing = None;

    let (method, bands, flagged, redraws, epsilon_n) = match a.method {
        MethodArg::Delta => {
            let ratio = if a.select_epsilon {
                if claims.len() != 1 {
                    return Err(invalid("--select-epsilon works with a single claim"));
                }
                let mut sc = SelectConfig {
                    b_outer: a.b_outer,
                    b_inner: a.b_inner,
                    alpha: a.alpha,
                    seed: a.seed,
                    sigma_mode: sigma(a.sigma),
                    grid: spec.clone(),
                    ..SelectConfig::default()
                };
                if !a.ratios.is_empty() {
                    sc.ratios = a.ratios.clone();
                }
                let sel = bootstrap::select_epsilon(&engine, &ds, &claims[0], &sc)?;
                let r = sel.selected_ratio;
                selection = Some(sel);
                r
            } else if let Some(e) = a.epsilon {
                ratio_from_epsilon(e, n)
            } else {
                a.epsilon_ratio.unwrap_or(2.0)
            };
            let cfg = BootstrapConfig {
                b: a.b,
                eps_ratio: ratio,
                alpha: a.alpha,
                seed: a.seed,
                sigma_mode: sigma(a.sigma),
                grid: spec.clone(),
                overlap: if a.no_redraw {
                    OverlapPolicy::Fail
                } else {
                    OverlapPolicy::Redraw
                },
                node_limit: DEFAULT_NODE_LIMIT,
            };
            let run = bootstrap::band(&engine, &ds, &claims, &cfg, &[])?;
            boot = Some(cfg);
            (
                BandMethod::Delta,
                run.bands,
                run.flagged,
                run.redraws,
                Some(epsilon_from_ratio(ratio, n)),
            )
        }
        MethodArg::Smoothed => {
            if a.select_epsilon || a.epsilon.is_some() || a.epsilon_ratio.is_some() {
                return Err(invalid("smoothed bands take no step size"));
            }
            let sm = SmoothingConfig {
                kappa_minmax: a.kappa,
                kappa_step: a.kappa,
                p_norm: a.p_norm,
            };
            let ce = estimate_theta(&ds)?;
            let grid = CGrid::build(&spec, ce.c_max(), &[])?;
            let (mut bands, mut flagged, mut redraws) = (Vec::new(), 0, 0);
            for c in &claims {
                let r = smoothed_band(&engine, &ds, &ce, c, &grid, &sm, a.b, a.alpha, a.seed)?;
                bands.push(r.band);
                flagged += r.flagged;
                redraws += r.redraws;
            }
            smoothing = Some(sm);
            (BandMethod::Smoothed, bands, flagged, redraws, None)
        }
    };

    let mut files = Vec::new();
    let csv = dir.join("band.csv");
    export::write_band_file(&csv, &bands)?;
    files.push(csv);
    let meta = BandRunMeta {
        format_version: FORMAT_VERSION,
        method,
        b: a.b,
        epsilon_n,
        alpha: a.alpha,
        seed: a.seed,
        n,
        flagged,
        redraws,
        bands: bands.iter().map(BandMeta::from_band).collect(),
        config: BandConfig {
            subcommand: "band",
            data,
            claims,
            grid: spec,
            settings,
            method,
            bootstrap: boot,
            smoothing,
            selection,
        },
    };
    write_json(dir.join("band.json"), &meta, &mut files)?;
    Ok(files)
}

fn dgp(a: &DgpArgs) -> Result<McDgp, Failure> {
    let d = McDgp {
        gamma: a.gamma,
        pi: a.pi,
        p_treat: a.p_treat,
        ..McDgp::default()
    };
    d.validate()?;
    Ok(d)
}

#[derive(Debug, Serialize)]
struct McMeta<'a> {
    format_version: u32,
    subcommand: &'static str,
    guarded: usize,
    used: Vec<usize>,
    config: &'a CoverageConfig,
}

fn mc(dir: &Path, a: &McArgs) -> Out {
    let cfg = CoverageConfig {
        dgp: dgp(&a.dgp)?,
        n: a.n,
        s: a.s,
        b: a.b,
        ratios: a.ratios.clone(),
        p_lowers: a.p_lowers.clone(),
        z: a.z,
        alpha: a.alpha,
        grid_points: a.grid_points,
        grid_upper: a.grid_upper,
        seed: a.seed,
        sigma_mode: sigma(a.sigma),
        node_limit: DEFAULT_NODE_LIMIT,
    };
    let engine = FrontierEngine::default();
    let study = coverage_study(&engine, &cfg)?;

    let mut files = Vec::new();
    let csv = dir.join("mc.csv");
    export::write_mc_file(&csv, &study.rows)?;
    files.push(csv);
    let bias = dir.join("mc_bias.csv");
    export::write_bias_csv(std::fs::File::create(&bias)?, &study.bias)?;
    files.push(bias);
    let meta = McMeta {
        format_version: FORMAT_VERSION,
        subcommand: "mc",
        guarded: study.guarded,
        used: study.rows.iter().map(|r| r.used).collect(),
        config: &study.config,
    };
    write_json(dir.join("mc.json"), &meta, &mut files)?;
    Ok(files)
}

#[derive(Debug, Serialize)]
struct SelectMeta {
    format_version: u32,
    selection: EpsilonSelection,
    config: SelectEcho,
}

#[derive(Debug, Serialize)]
struct SelectEcho {
    subcommand: &'static str,
    data: DataConfig,
    claim: Claim,
    settings: FrontierSettings,
    select: SelectConfig,
}

fn select(dir: &Path, a: &SelectArgs) -> Out {
    let (ds, data) = load(&a.data)?;
    let mut cl = claims(&a.claim)?;
    if cl.len() != 1 {
        return Err(invalid("select-epsilon works with a single claim"));
    }
    let claim = cl.remove(0);
    let (engine, settings) = engine(&a.grid)?;
    let sc = SelectConfig {
        ratios: a.ratios.clone(),
        b_outer: a.b_outer,
        b_inner: a.b_inner,
        alpha: a.alpha,
        seed: a.seed,
        sigma_mode: sigma(a.sigma),
        grid: grid_spec(&a.grid),
        node_limit: DEFAULT_NODE_LIMIT,
    };
    let sel = bootstrap::select_epsilon(&engine, &ds, &claim, &sc)?;
    println!(
        "selected epsilon {} (ratio {})",
        sel.selected_epsilon, sel.selected_ratio
    );

    let mut files = Vec::new();
    let csv = dir.join("select_epsilon.csv");
    export::write_selection_csv(std::fs::File::create(&csv)?, &sel)?;
    files.push(csv);
    let meta = SelectMeta {
        format_version: FORMAT_VERSION,
        selection: sel,
        config: SelectEcho {
            subcommand: "select-epsilon",
            data,
            claim,
            settings,
            select: sc,
        },
    };
    write_json(dir.join("select_epsilon.json"), &meta, &mut files)?;
    Ok(files)
}

#[derive(Debug, Serialize)]
struct DiagnoseRow {
    covariate: String,
    c_bar: f64,
}

#[derive(Debug, Serialize)]
struct DiagnoseMeta {
    format_version: u32,
    n: usize,
    cells: usize,
    c_max: f64,
    rows: Vec<DiagnoseRow>,
    config: DiagnoseEcho,
}

#[derive(Debug, Serialize)]
struct DiagnoseEcho {
    subcommand: &'static str,
    data: DataConfig,
}

fn diagnose(dir: &Path, a: &DiagnoseArgs) -> Out {
    if a.data.covariates.is_empty() {
        return Err(invalid("diagnose needs at least one covariate"));
    }
    let (ds, data) = load(&a.data)?;
    let ce = estimate_theta(&ds)?;
    let rows = ds
        .covariate_names()
        .iter()
        .enumerate()
        .map(|(k, name)| {
            Ok(DiagnoseRow {
                covariate: name.clone(),
                c_bar: leave_out_k_cbar(&ds, k)?,
            })
        })
        .collect::<Result<Vec<_>, breakdown::Error>>()?;

    let mut files = Vec::new();
    let csv = dir.join("diagnose.csv");
    let mut w = csv::Writer::from_path(&csv).map_err(|e| Failure::Numerical(e.to_string()))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Failure::Numerical(e.to_string()))?;
    }
    w.flush()?;
    files.push(csv);
    let meta = DiagnoseMeta {
        format_version: FORMAT_VERSION,
        n: ds.len(),
        cells: ds.num_cells(),
        c_max: ce.c_max(),
        rows,
        config: DiagnoseEcho {
            subcommand: "diagnose",
            data,
        },
    };
    write_json(dir.join("diagnose.json"), &meta, &mut files)?;
    Ok(files)
}

fn simulate(dir: &Path, a: &SimulateArgs) -> Out {
    let ds = dgp_sample(&dgp(&a.dgp)?, a.n, a.seed)?;
    let path = dir.join(&a.file);
    write_csv(&ds, &path)?;
    Ok(vec![path])
}
