use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context};
use cellfade::data::{censor, load_csv, simulate_fleet, write_csv, LoadOptions};
use cellfade::inference::{asymptotic_band, bootstrap_ensemble, BootstrapOptions};
use cellfade::lifetime::{
    crossval as run_crossval, predict_eol as run_eol, Censoring, CvOptions, Split,
};
use cellfade::nls::fit as run_fit;
use cellfade::{
    Band, BandKind, Dataset, Error, Family, FitConfig, FitError, FitResult, InverseOptions,
    ModelSpec, ParamVector, Trace,
};
use serde::Serialize;

use crate::output;
use crate::{BandArgs, Common, CompareArgs, CrossvalArgs, EolArgs, FitArgs, Format, SimulateArgs};

/// Outcome of a command that produced its output.
pub enum Status {
    Ok,
    /// The optimizer stopped without converging; the best incumbent was
    /// written.
    NotConverged,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        match s {
            Status::Ok => ExitCode::SUCCESS,
            Status::NotConverged => ExitCode::from(2),
        }
    }
}

/// 2 for numerical failures, 1 for everything else.
pub fn exit_code_for(e: &anyhow::Error) -> ExitCode {
    match e.downcast_ref::<Error>() {
        Some(Error::NonConvergence { .. } | Error::BootstrapInstability { .. }) => {
            ExitCode::from(2)
        }
        _ => ExitCode::from(1),
    }
}

fn load(common: &Common) -> anyhow::Result<Dataset> {
    let opts = LoadOptions {
        cycle_scale: common.cycle_scale,
        ..LoadOptions::default()
    };
    let ds = load_csv(&common.input, &opts)
        .with_context(|| format!("cannot load {}", common.input.display()))?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    Ok(ds)
}

fn family(name: &str) -> anyhow::Result<Family> {
    Ok(name.parse::<Family>()?)
}

/// Measurements to fit: one battery in kilocycles, or the pool.
struct Selection {
    x: Vec<f64>,
    y: Vec<f64>,
    /// First capacity of the selected battery.
    y_init: Option<f64>,
}

fn select(ds: &Dataset, battery: Option<&str>) -> anyhow::Result<Selection> {
    match battery {
        Some(id) => {
            let trace = ds
                .trace(id)
                .ok_or_else(|| Error::InvalidArgument(format!("no battery '{id}' in the input")))?;
            Ok(Selection {
                x: trace.kilocycles(ds.cycle_scale),
                y: trace.capacities(),
                y_init: trace.y_init(),
            })
        }
        None => {
            let (x, y) = ds.pooled();
            Ok(Selection { x, y, y_init: None })
        }
    }
}

fn max_of(x: &[f64]) -> f64 {
    x.iter().copied().fold(0.0, f64::max)
}

fn grid(hi: f64, points: usize) -> anyhow::Result<Vec<f64>> {
    if points < 2 {
        bail!(Error::InvalidArgument(
            "a grid needs at least 2 points".into()
        ));
    }
    Ok((0..points)
        .map(|i| hi * i as f64 / (points - 1) as f64)
        .collect())
}

fn level(alpha: f64) -> anyhow::Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!(Error::InvalidArgument(format!(
            "alpha {alpha} outside (0, 1)"
        )));
    }
    Ok(1.0 - alpha)
}

/// Fit that must have converged for downstream use.
fn converged_fit(
    spec: &ModelSpec<f64>,
    sel: &Selection,
    seed: u64,
) -> anyhow::Result<FitResult<f64>> {
    run_fit(spec, &sel.x, &sel.y, &FitConfig::with_seed(seed)).map_err(|e| Error::from(e).into())
}

#[derive(Serialize)]
struct FitOutput<'a> {
    battery: Option<&'a str>,
    cycle_scale: f64,
    fit: &'a FitResult<f64>,
}

pub fn fit(a: &FitArgs) -> anyhow::Result<Status> {
    let ds = load(&a.common)?;
    let spec = ModelSpec::new(family(&a.target.model)?);
    let sel = select(&ds, a.target.battery.as_deref())?;
    let (result, status) =
        match run_fit(&spec, &sel.x, &sel.y, &FitConfig::with_seed(a.common.seed)) {
            Ok(f) => (f, Status::Ok),
            Err(FitError::NonConvergence(best)) => {
                eprintln!("warning: optimizer did not converge; writing the best incumbent");
                (*best, Status::NotConverged)
            }
            Err(FitError::Invalid(e)) => return Err(e.into()),
        };
    let out = a.common.out.as_deref();
    match a.common.format {
        Format::Json => output::json(
            &FitOutput {
                battery: a.target.battery.as_deref(),
                cycle_scale: ds.cycle_scale,
                fit: &result,
            },
            out,
        )?,
        Format::Csv => {
            let mut s = String::from("parameter,value\n");
            for (i, b) in result.beta_hat.values.iter().enumerate() {
                writeln!(s, "beta{},{b}", i + 1)?;
            }
            writeln!(s, "sse,{}", result.sse)?;
            writeln!(s, "sigma2_hat,{}", result.sigma2_hat)?;
            writeln!(s, "n,{}", result.n)?;
            writeln!(s, "converged,{}", result.converged)?;
            output::text(&s, out)?;
        }
    }
    Ok(status)
}

fn band_kinds(raw: &[String]) -> anyhow::Result<Vec<BandKind>> {
    if raw.is_empty() {
        return Ok(BandKind::ALL.to_vec());
    }
    let mut kinds = Vec::new();
    for r in raw {
        let k: BandKind = r.parse()?;
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    Ok(kinds)
}

pub fn band(a: &BandArgs) -> anyhow::Result<Status> {
    let kinds = band_kinds(&a.kind)?;
    let level = level(a.alpha)?;
    let ds = load(&a.common)?;
    let spec = ModelSpec::new(family(&a.target.model)?);
    let sel = select(&ds, a.target.battery.as_deref())?;
    let fit = converged_fit(&spec, &sel, a.common.seed)?;
    let x_grid = grid(1.2 * max_of(&sel.x), a.points)?;
    let ensemble = if kinds.iter().any(|k| k.is_bootstrap()) {
        let opts = BootstrapOptions::new(a.b, a.m, a.common.seed);
        Some(bootstrap_ensemble(&fit, &spec, &sel.x, &opts)?)
    } else {
        None
    };
    let mut bands: Vec<Band<f64>> = Vec::with_capacity(kinds.len());
    for k in kinds {
        let band = match &ensemble {
            Some(ens) if k.is_bootstrap() => ens.band(&x_grid, level, k.interval())?,
            _ => asymptotic_band(&fit, &spec, &sel.x, &x_grid, level, k.interval())?,
        };
        bands.push(band);
    }
    let out = a.common.out.as_deref();
    match a.common.format {
        Format::Json => output::json(&bands, out)?,
        Format::Csv => {
            let mut s = String::from("kind,x,center,lower,upper\n");
            for b in &bands {
                for i in 0..b.len() {
                    writeln!(
                        s,
                        "{},{},{},{},{}",
                        b.kind, b.x_grid[i], b.center[i], b.lower[i], b.upper[i]
                    )?;
                }
            }
            output::text(&s, out)?;
        }
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct EolOutput<'a> {
    battery: Option<&'a str>,
    cycle_scale: f64,
    /// `x_hat_q` in raw cycles.
    cycles_hat_q: f64,
    report: &'a cellfade::EolReport<f64>,
}

pub fn predict_eol(a: &EolArgs) -> anyhow::Result<Status> {
    let level = level(a.alpha)?;
    let ds = load(&a.common)?;
    let spec = ModelSpec::new(family(&a.target.model)?);
    let sel = select(&ds, a.target.battery.as_deref())?;
    let fit = converged_fit(&spec, &sel, a.common.seed)?;
    let y_init = a
        .y_init
        .or(sel.y_init)
        .unwrap_or_else(|| fit.beta_hat.at(0.0));
    let ensemble = match a.b {
        Some(b) => Some(bootstrap_ensemble(
            &fit,
            &spec,
            &sel.x,
            &BootstrapOptions::new(b, 1, a.common.seed),
        )?),
        None => None,
    };
    let report = run_eol(
        &fit,
        &spec,
        a.q,
        y_init,
        ensemble.as_ref().map(|e| (e, level)),
        &InverseOptions::default(),
    )?;
    if report.multiple_crossings {
        eprintln!("warning: the fitted curve crosses the end-of-life level more than once");
    }
    let out = a.common.out.as_deref();
    match a.common.format {
        Format::Json => output::json(
            &EolOutput {
                battery: a.target.battery.as_deref(),
                cycle_scale: ds.cycle_scale,
                cycles_hat_q: report.x_hat_q * ds.cycle_scale,
                report: &report,
            },
            out,
        )?,
        Format::Csv => {
            let (lo, hi, lv) =
                report
                    .band
                    .map_or((String::new(), String::new(), String::new()), |b| {
                        (
                            b.lower.to_string(),
                            b.upper.to_string(),
                            b.level.to_string(),
                        )
                    });
            let s = format!(
                "q,y_init,y_q,x_hat_q,multiple_crossings,lower,upper,level\n{},{},{},{},{},{lo},{hi},{lv}\n",
                report.q, report.y_init, report.y_q, report.x_hat_q, report.multiple_crossings
            );
            output::text(&s, out)?;
        }
    }
    Ok(Status::Ok)
}

pub fn crossval(a: &CrossvalArgs) -> anyhow::Result<Status> {
    let ds = load(&a.common)?;
    let spec = ModelSpec::new(family(&a.model)?);
    let censoring = a.censor_at.map(|threshold| Censoring {
        threshold,
        n_complete: a.keep_complete,
    });
    let mut rows = Vec::new();
    for &q in &a.q {
        for &fraction in &a.fraction {
            let mut opts = CvOptions::new(q, Split::Fraction(fraction));
            opts.seed = a.common.seed;
            opts.repeats = a.repeats;
            opts.censoring = censoring;
            rows.push(run_crossval(&ds, &spec, &opts)?);
        }
    }
    let out = a.common.out.as_deref();
    match a.common.format {
        Format::Json => output::json(&rows, out)?,
        Format::Csv => {
            let mut s = format!("{}\n", cellfade::CvSummary::CSV_HEADER);
            for r in &rows {
                writeln!(s, "{}", r.csv_row())?;
            }
            output::text(&s, out)?;
        }
    }
    Ok(Status::Ok)
}

fn truncate(
    ds: &Dataset,
    max_points: Option<usize>,
    censor_at: Option<f64>,
) -> anyhow::Result<Dataset> {
    let mut ds = match censor_at {
        Some(t) => censor(ds, t, &[])?,
        None => ds.clone(),
    };
    if let Some(n) = max_points {
        if n == 0 {
            bail!(Error::InvalidArgument(
                "--max-points must be positive".into()
            ));
        }
        let traces = ds
            .traces
            .iter()
            .map(|t| {
                let keep = n.min(t.len());
                Trace::new(t.battery_id.clone(), t.points()[..keep].to_vec(), t.unit)
            })
            .collect::<cellfade::Result<Vec<_>>>()?;
        let meta = ds.meta.clone();
        ds = Dataset::new(traces, ds.cycle_scale)?;
        ds.meta = meta;
    }
    Ok(ds)
}

#[derive(Serialize)]
struct FamilyRow {
    family: Family,
    sse: Option<f64>,
    converged: bool,
    beta_hat: Option<ParamVector<f64>>,
    error: Option<String>,
}

#[derive(Serialize)]
struct Curve {
    family: Family,
    y: Vec<f64>,
}

#[derive(Serialize)]
struct Comparison {
    battery: Option<String>,
    n_points: usize,
    families: Vec<FamilyRow>,
    /// Fitted curves on `x_grid` (kilocycles), over the untruncated range.
    x_grid: Vec<f64>,
    curves: Vec<Curve>,
}

pub fn compare_models(a: &CompareArgs) -> anyhow::Result<Status> {
    let ds = load(&a.common)?;
    let full = select(&ds, a.battery.as_deref())?;
    let used = select(
        &truncate(&ds, a.max_points, a.censor_at)?,
        a.battery.as_deref(),
    )?;
    let x_grid = grid(max_of(&full.x), a.points)?;
    let config = FitConfig::with_seed(a.common.seed);
    let mut families = Vec::new();
    let mut curves = Vec::new();
    for fam in Family::ALL {
        let row = match run_fit(&ModelSpec::new(fam), &used.x, &used.y, &config) {
            Ok(f) => FamilyRow {
                family: fam,
                sse: Some(f.sse),
                converged: true,
                beta_hat: Some(f.beta_hat),
                error: None,
            },
            Err(FitError::NonConvergence(best)) => FamilyRow {
                family: fam,
                sse: Some(best.sse),
                converged: false,
                beta_hat: Some(best.beta_hat),
                error: Some("optimizer did not converge".into()),
            },
            Err(FitError::Invalid(e)) => FamilyRow {
                family: fam,
                sse: None,
                converged: false,
                beta_hat: None,
                error: Some(e.to_string()),
            },
        };
        if let Some(beta) = &row.beta_hat {
            curves.push(Curve {
                family: fam,
                y: x_grid.iter().map(|&x| beta.at(x)).collect(),
            });
        }
        families.push(row);
    }
    let cmp = Comparison {
        battery: a.battery.clone(),
        n_points: used.x.len(),
        families,
        x_grid,
        curves,
    };
    let out = a.common.out.as_deref();
    match a.common.format {
        Format::Json => output::json(&cmp, out)?,
        Format::Csv => {
            let mut s = String::from("family,sse,converged,beta\n");
            for r in &cmp.families {
                let sse = r.sse.map_or(String::new(), |v| v.to_string());
                let beta = r.beta_hat.as_ref().map_or(String::new(), |b| {
                    b.values
                        .iter()
                        .map(f64::to_string)
                        .collect::<Vec<_>>()
                        .join(";")
                });
                writeln!(s, "{},{sse},{},{beta}", r.family, r.converged)?;
            }
            output::text(&s, out)?;
        }
    }
    if let Some(path) = &a.curves {
        write_curves(&cmp, path)?;
    }
    Ok(Status::Ok)
}

fn write_curves(cmp: &Comparison, path: &Path) -> anyhow::Result<()> {
    let mut s = String::from("family,x,y\n");
    for c in &cmp.curves {
        for (x, y) in cmp.x_grid.iter().zip(&c.y) {
            writeln!(s, "{},{x},{y}", c.family)?;
        }
    }
    output::text(&s, Some(path))
}

pub fn simulate(a: &SimulateArgs) -> anyhow::Result<Status> {
    let beta = ParamVector::new(family(&a.model)?, a.beta.clone())?;
    if !(a.max_x > 0.0) {
        bail!(Error::InvalidArgument("--max-x must be positive".into()));
    }
    let x = grid(a.max_x, a.points)?;
    let ds = simulate_fleet(&beta, &a.jitter, a.sigma, a.batteries, &x, a.seed)?;
    for w in &ds.meta.warnings {
        eprintln!("warning: {w}");
    }
    let out = a.out.as_deref();
    match a.format {
        Format::Json => output::json(&ds, out)?,
        Format::Csv => {
            let mut w = output::sink(out)?;
            write_csv(&ds, &mut w)?;
            w.flush()?;
        }
    }
    Ok(Status::Ok)
}
