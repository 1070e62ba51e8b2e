#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use ancova_cp::montecarlo::{self, CoverageEstimate, Estimator, SlopePoint};
use ancova_cp::search::{self, GridSpec, LineLocus, MinSearchConfig};
use ancova_cp::{build_geometry, critical_values, oracle, DesignFile, GeometryBundle, TwoStageConfig};

/// Coverage of confidence intervals after preliminary F tests in one-way ANCOVA.
#[derive(Debug, Parser)]
#[command(name = "ancova-cp", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Design file (TOML); the bundled reference design when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Monte Carlo runs per point.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Base seed; each point draws from its own stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Coverage estimator (default conditioned).
    #[arg(long, global = true, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// The intervals have nominal coverage 1 − alpha.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Size of the test of zero slopes.
    #[arg(long, global = true)]
    sig_tau: Option<f64>,
    /// Size of the test of equal slopes.
    #[arg(long, global = true)]
    sig_xi: Option<f64>,
    /// Set both F thresholds to zero, so the full-model interval is always used.
    #[arg(long, global = true)]
    thresholds_off: bool,
    /// Worker threads.
    #[arg(long, global = true, env = "ANCOVA_CP_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EstimatorArg {
    Naive,
    Conditioned,
    Both,
}

impl EstimatorArg {
    fn expand(self) -> Vec<Estimator> {
        match self {
            EstimatorArg::Naive => vec![Estimator::Naive],
            EstimatorArg::Conditioned => vec![Estimator::Conditioned],
            EstimatorArg::Both => vec![Estimator::Naive, Estimator::Conditioned],
        }
    }

    fn single(self) -> Result<Estimator> {
        match self {
            EstimatorArg::Naive => Ok(Estimator::Naive),
            EstimatorArg::Conditioned => Ok(Estimator::Conditioned),
            EstimatorArg::Both => bail!("this command takes a single estimator"),
        }
    }
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Per-axis bounds `lo,hi`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    bounds: Option<(f64, f64)>,
    /// Lattice points per axis.
    #[arg(long)]
    density: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Coverage at one slope point.
    Cp {
        /// Slopes over sigma, comma separated.
        #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
        point: Floats,
    },
    /// Coverage over a lattice of slope points, as CSV.
    Grid {
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Fit the two low-coverage lines to a grid.
    Lines {
        #[command(flatten)]
        grid: GridArgs,
        /// Coverage below this marks a grid point as low.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Coverage along the line `offsets + c(1, ..., 1)`, as CSV.
    Profile {
        /// Point on the line at c = 0.
        #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
        offsets: Floats,
        /// `lo,hi` range of c.
        #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
        c_range: (f64, f64),
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
    /// Restricted search for the minimum coverage.
    Min {
        #[command(flatten)]
        grid: GridArgs,
        /// Coverage below this marks a grid point as low.
        #[arg(long)]
        threshold: Option<f64>,
        /// Points per line profile.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Compare the raw-data pipeline with the naive estimator on common noise.
    Oracle {
        /// Slopes over sigma; zeros when omitted.
        #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
        point: Option<Floats>,
        /// Error standard deviation for the raw simulation.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
    },
    /// Critical values and t quantiles for the design.
    Quantiles,
}

/// A comma-separated list of finite numbers.
#[derive(Debug, Clone)]
struct Floats(Vec<f64>);

fn parse_list(s: &str) -> std::result::Result<Floats, String> {
    parse_floats(s).map(Floats)
}

fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()
        .and_then(|v| {
            if v.iter().all(|x| x.is_finite()) {
                Ok(v)
            } else {
                Err("entries must be finite".into())
            }
        })
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    match parse_floats(s)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err("expected two comma-separated numbers".into()),
    }
}

/// Optional `[run]` table of the design file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    alpha: Option<f64>,
    sig_tau: Option<f64>,
    sig_xi: Option<f64>,
    runs: Option<usize>,
    seed: Option<u64>,
    estimator: Option<EstimatorArg>,
    bounds: Option<(f64, f64)>,
    density: Option<usize>,
    threshold: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct ConfigFile {
    #[serde(default)]
    run: RunSection,
}

struct RunContext {
    geom: GeometryBundle,
    cfg: TwoStageConfig,
    run: RunSection,
    runs: usize,
    seed: u64,
}

fn load(common: &Common) -> Result<RunContext> {
    let (design, text) = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let design = DesignFile::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
            (design, text)
        }
        None => (DesignFile::reference(), DesignFile::reference_text().to_string()),
    };
    let file: ConfigFile = toml::from_str(&text).context("parsing the [run] table")?;
    let run = file.run;
    let alpha = common.alpha.or(run.alpha).unwrap_or(0.05);
    let sig_tau = common.sig_tau.or(run.sig_tau).unwrap_or(0.10);
    let sig_xi = common.sig_xi.or(run.sig_xi).unwrap_or(0.10);
    for (name, v) in [("alpha", alpha), ("sig-tau", sig_tau), ("sig-xi", sig_xi)] {
        if !(v > 0.0 && v < 1.0) {
            bail!("--{name} must lie in (0, 1), got {v}");
        }
    }
    let geom = build_geometry(&design.layout, &design.contrast).context("building the design geometry")?;
    let mut cfg = critical_values(&design.layout, alpha, sig_tau, sig_xi)?;
    if common.thresholds_off {
        cfg = cfg.always_full();
    }
    let runs = common.runs.or(run.runs).unwrap_or(10_000);
    if runs < 2 {
        bail!("--runs must be at least 2");
    }
    let seed = common.seed.or(run.seed).unwrap_or(1);
    Ok(RunContext { geom, cfg, run, runs, seed })
}

fn writer(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(io::BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn write_csv(out: &Option<PathBuf>, k: usize, rows: &[(Option<f64>, &CoverageEstimate)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer(out)?);
    let with_c = rows.first().is_some_and(|(c, _)| c.is_some());
    let mut header: Vec<String> = Vec::new();
    if with_c {
        header.push("c".into());
    }
    header.extend((1..=k).map(|j| format!("gamma_{j}")));
    header.extend(["estimate", "se", "runs", "estimator", "seed"].map(String::from));
    w.write_record(&header)?;
    for (c, e) in rows {
        let mut rec: Vec<String> = Vec::new();
        if let Some(c) = c {
            rec.push(c.to_string());
        }
        rec.extend(e.point.values().iter().map(f64::to_string));
        rec.extend([
            e.estimate.to_string(),
            e.se.to_string(),
            e.runs.to_string(),
            e.estimator.to_string(),
            e.seed.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(out: &Option<PathBuf>, value: &serde_json::Value) -> Result<()> {
    let mut w = writer(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn grid_spec(args: &GridArgs, ctx: &RunContext, default_bounds: (f64, f64)) -> GridSpec {
    GridSpec {
        bounds: args.bounds.or(ctx.run.bounds).unwrap_or(default_bounds),
        points_per_axis: args.density.or(ctx.run.density).unwrap_or(21),
        runs: ctx.runs,
        seed: ctx.seed,
    }
}

fn estimator_arg(common: &Common, ctx: &RunContext) -> EstimatorArg {
    common.estimator.or(ctx.run.estimator).unwrap_or(EstimatorArg::Conditioned)
}

fn line_json(line: &LineLocus) -> serde_json::Value {
    json!({
        "offsets": line.offsets,
        "direction": line.direction,
        "c_range": [line.c_range.0, line.c_range.1],
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let ctx = load(&cli.common)?;
    let (geom, cfg) = (&ctx.geom, &ctx.cfg);
    let k = geom.k;
    let common = &cli.common;

    match cli.command {
        Command::Cp { point: Floats(point) } => {
            if point.len() != k {
                bail!("--point needs {k} comma-separated slopes, got {}", point.len());
            }
            let p = SlopePoint::new(point)?;
            let ests = estimator_arg(common, &ctx)
                .expand()
                .into_iter()
                .map(|e| montecarlo::estimate(e, &p, geom, cfg, ctx.runs, ctx.seed))
                .collect::<ancova_cp::Result<Vec<_>>>()?;
            let rows: Vec<_> = ests.iter().map(|e| (None, e)).collect();
            write_csv(&common.out, k, &rows)?;
        }
        Command::Grid { grid } => {
            let spec = grid_spec(&grid, &ctx, (-0.25, 0.25));
            let mut tables = Vec::new();
            for e in estimator_arg(common, &ctx).expand() {
                tables.push(search::grid_eval(&spec, e, geom, cfg)?);
            }
            let rows: Vec<_> = tables.iter().flatten().map(|e| (None, e)).collect();
            write_csv(&common.out, k, &rows)?;
        }
        Command::Lines { grid, threshold } => {
            let spec = grid_spec(&grid, &ctx, (-0.25, 0.25));
            let threshold = threshold.or(ctx.run.threshold).unwrap_or(0.6);
            let table = search::grid_eval(&spec, estimator_arg(common, &ctx).single()?, geom, cfg)?;
            let (l1, l2) = search::fit_low_cp_lines(&table, threshold)?;
            let low: Vec<Vec<f64>> = table
                .iter()
                .filter(|e| e.estimate < threshold)
                .map(|e| e.point.values().to_vec())
                .collect();
            let (a, b) = search::split_low_cp_clusters(&low);
            let angle = |pts: &[Vec<f64>]| {
                search::principal_direction(pts).ok().map(|d| search::angle_to_diagonal(&d))
            };
            write_json(
                &common.out,
                &json!({
                    "threshold": threshold,
                    "low_points": low.len(),
                    "line1": line_json(&l1),
                    "line2": line_json(&l2),
                    "cluster_sizes": [a.len(), b.len()],
                    "angles_to_diagonal_deg": [angle(&a), angle(&b)],
                }),
            )?;
        }
        Command::Profile { offsets: Floats(offsets), c_range, points } => {
            if offsets.len() != k {
                bail!("--offsets needs {k} entries");
            }
            let line = LineLocus::new(offsets, c_range);
            let est = estimator_arg(common, &ctx).single()?;
            let prof = search::line_profile(&line, points, est, geom, cfg, ctx.runs, ctx.seed)?;
            let rows: Vec<_> = prof.rows.iter().map(|r| (Some(r.c), &r.estimate)).collect();
            write_csv(&common.out, k, &rows)?;
            eprintln!(
                "c_min = {:.6}, cp_min = {:.4} (se {:.4}), interior minimum: {}",
                prof.c_min, prof.cp_min.estimate, prof.cp_min.se, prof.interior_min
            );
        }
        Command::Min { grid, threshold, points } => {
            let defaults = MinSearchConfig::default();
            let cube = grid_spec(&grid, &ctx, defaults.cube.bounds);
            let config = MinSearchConfig {
                square: GridSpec {
                    runs: ctx.runs,
                    seed: ctx.seed,
                    ..defaults.square.clone()
                },
                cube,
                estimator: estimator_arg(common, &ctx).single()?,
                threshold: threshold.or(ctx.run.threshold).unwrap_or(defaults.threshold),
                profile_points: points.unwrap_or(defaults.profile_points),
                gate_runs: ctx.runs,
                ..defaults
            };
            let report = search::min_cp_search(&config, geom, cfg)?;
            for d in report.warnings() {
                eprintln!(
                    "warning: {} test at {} rejects with probability {:.4} < 0.99",
                    d.gate,
                    d.face,
                    1.0 - d.accept_exact
                );
            }
            let summary = json!({
                "min1": report.min1,
                "min2": report.min2,
                "overall": report.overall.estimate,
                "overall_se": report.overall.se,
                "argmin": report.argmin,
                "argmin_region": report.argmin_region,
                "grid_min": report.grid_min,
                "lines": report.lines.as_ref().map(|(a, b)| [line_json(a), line_json(b)]),
                "line_error": report.line_error,
                "profiles": report.profiles.iter().map(|p| json!({
                    "offsets": p.line.offsets,
                    "c_min": p.c_min,
                    "cp_min": p.cp_min.estimate,
                    "se": p.cp_min.se,
                    "u_shaped": p.is_u_shaped(),
                })).collect::<Vec<_>>(),
                "diagnostics": report.diagnostics,
                "estimator": config.estimator,
                "runs": ctx.runs,
                "seed": ctx.seed,
            });
            write_json(&None, &summary)?;
            if common.out.is_some() {
                write_json(&common.out, &serde_json::to_value(&report)?)?;
            }
        }
        Command::Oracle { point, sigma } => {
            let slopes = point.map(|p| p.0).unwrap_or_else(|| vec![0.0; k]);
            if slopes.len() != k {
                bail!("--point needs {k} comma-separated slopes");
            }
            if !(sigma > 0.0) {
                bail!("--sigma must be positive");
            }
            let beta: Vec<f64> = std::iter::repeat_n(0.0, k)
                .chain(slopes.iter().map(|s| s * sigma))
                .collect();
            let r = oracle::crn_agreement(&beta, sigma, geom, cfg, ctx.runs, ctx.seed)?;
            write_json(
                &common.out,
                &json!({
                    "point": slopes,
                    "sigma": sigma,
                    "runs": r.runs,
                    "seed": ctx.seed,
                    "agreement_rate": r.agreement_rate(),
                    "raw_coverage": r.raw_coverage,
                    "naive_coverage": r.naive_coverage,
                    "max_rss_identity_error": r.max_rss_identity_error,
                }),
            )?;
        }
        Command::Quantiles => {
            write_json(
                &common.out,
                &json!({
                    "k": cfg.k,
                    "m": cfg.m,
                    "alpha": cfg.alpha,
                    "sig_tau": cfg.sig_tau,
                    "sig_xi": cfg.sig_xi,
                    "l_tau": cfg.l_tau,
                    "l_xi": cfg.l_xi,
                    "t_m": cfg.t_m,
                    "t_mk": cfg.t_mk,
                    "t_mk1": cfg.t_mk1,
                }),
            )?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
