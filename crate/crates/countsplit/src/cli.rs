//! Command-line front end: `split`, `de`, `simulate`, and `report`
//! subcommands over the library pipelines, emitting versioned CSV/JSON
//! artifacts plus a run manifest.
//!
//! Exit codes: 0 success, 2 configuration error, 3 IO error, 4 numerical
//! failure. A fixed `--seed` yields byte-identical CSV output regardless of
//! thread count.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::glm::Family;
use crate::io::{load_matrix, save_matrix, MatrixFormat};
use crate::matrix::{CountMatrix, SizeFactors};
use crate::pipelines::{Estimator, GammaPolicy, Method, MethodConfig};
use crate::rng::{self, tag};
use crate::simulation::{
    self, run_calibration, run_overdispersion_sweep, run_power_coverage,
    CalibrationReport, LatentKind, ScenarioConfig,
};
use crate::splitting;

pub const CSV_SCHEMA_VERSION: &str = "1";

#[derive(Parser)]
#[command(
    name = "countsplit",
    version,
    about = "Split count matrices, test genes against estimated latent structure, \
             and run calibration / power simulations"
)]
struct Cli {
    /// Worker threads (falls back to COUNTSPLIT_THREADS, then all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Thin a count matrix into train and test matrices.
    Split(SplitArgs),
    /// Run one differential-expression procedure on a matrix.
    De(DeArgs),
    /// Run a simulation preset or a scenario config file.
    Simulate(SimulateArgs),
    /// Merge summary CSVs into one comparison table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SplitArgs {
    /// Input matrix (.csv dense, .mtx MatrixMarket).
    #[arg(long)]
    input: PathBuf,
    /// Train retention probability.
    #[arg(long, default_value_t = splitting::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Force the input format instead of guessing from the extension.
    #[arg(long)]
    format: Option<String>,
    /// Output files are <prefix>.train.<ext>, <prefix>.test.<ext>,
    /// <prefix>.manifest.json.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct DeArgs {
    #[arg(long)]
    input: PathBuf,
    /// countsplit | doubledip | cellsplit | genesplit | jackstraw |
    /// jackstraw_efficient | pseudotime_de | comparison
    #[arg(long)]
    method: Option<String>,
    /// JSON method config; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    fraction: Option<f64>,
    /// pc1 | kmeans2
    #[arg(long)]
    estimator: Option<String>,
    /// poisson | negbin
    #[arg(long)]
    family: Option<String>,
    /// estimate | unit
    #[arg(long)]
    gamma: Option<String>,
    /// File of per-cell size factors, one value per line; overrides --gamma.
    #[arg(long)]
    gamma_file: Option<PathBuf>,
    /// Resample count for the jackstraw and pseudotime procedures.
    #[arg(long)]
    resamples: Option<usize>,
    /// Columns permuted per resample (efficient jackstraw).
    #[arg(long)]
    s: Option<usize>,
    /// Use (1 + hits)/(B + 1) resampling p-values.
    #[arg(long)]
    add_one: bool,
    #[arg(long)]
    format: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// fig2a | fig2b | fig3 | table1 | appendixC
    #[arg(long, conflicts_with = "scenario")]
    preset: Option<String>,
    /// Scenario config JSON for a free-form calibration run.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Method for --scenario runs (same names as `de --method`).
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Summary CSVs to merge (at least one).
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    schema_version: String,
    command: String,
    config_echo: serde_json::Value,
    seed: u64,
    artifact_paths: Vec<String>,
    wall_time_seconds: f64,
}

/// Parse `std::env::args`, run, and report an exit code; the binary's whole
/// `main` is `process::exit(cli::main())`.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Split(a) => cmd_split(a),
        Command::De(a) => cmd_de(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("COUNTSPLIT_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                Error::InvalidConfig(format!("COUNTSPLIT_THREADS must be an integer, got '{v}'"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::InvalidConfig("thread count must be at least 1".into()));
        }
        // A pool may already exist when called twice in-process; that's fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn parse_method(name: &str) -> Result<Method> {
    match name {
        "countsplit" | "count_split" => Ok(Method::CountSplit),
        "doubledip" | "double_dip" => Ok(Method::DoubleDip),
        "cellsplit" | "cell_split" => Ok(Method::CellSplit),
        "genesplit" | "gene_split" => Ok(Method::GeneSplit),
        "jackstraw" | "jackstraw_full" => Ok(Method::JackstrawFull),
        "jackstraw_efficient" => Ok(Method::JackstrawEfficient),
        "pseudotime_de" => Ok(Method::PseudotimeDe),
        "cluster_mean_naive" => Ok(Method::ClusterMeanNaive),
        "cluster_mean_countsplit" => Ok(Method::ClusterMeanCountsplit),
        other => Err(Error::InvalidConfig(format!(
            "unknown method '{other}'; valid methods: countsplit, doubledip, cellsplit, \
             genesplit, jackstraw, jackstraw_efficient, pseudotime_de, cluster_mean_naive, \
             cluster_mean_countsplit, comparison"
        ))),
    }
}

fn parse_estimator(name: &str) -> Result<Estimator> {
    match name {
        "pc1" | "pc1_trajectory" => Ok(Estimator::Pc1Trajectory),
        "kmeans2" | "kmeans" => Ok(Estimator::Kmeans2),
        other => Err(Error::InvalidConfig(format!(
            "unknown estimator '{other}' (expected pc1 or kmeans2)"
        ))),
    }
}

fn parse_family(name: &str) -> Result<Family> {
    match name {
        "poisson" => Ok(Family::Poisson),
        "negbin" | "negative_binomial" | "nb" => Ok(Family::NegativeBinomial),
        other => Err(Error::InvalidConfig(format!(
            "unknown family '{other}' (expected poisson or negbin)"
        ))),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

fn write_manifest(
    path: &Path,
    command: &str,
    config_echo: serde_json::Value,
    seed: u64,
    artifact_paths: Vec<String>,
    started: Instant,
) -> Result<()> {
    let manifest = RunManifest {
        schema_version: CSV_SCHEMA_VERSION.to_string(),
        command: command.to_string(),
        config_echo,
        seed,
        artifact_paths,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidConfig(format!("manifest serialization: {e}")))?;
    write_text(path, &format!("{body}\n"))
}

fn resolve_format(path: &Path, flag: &Option<String>) -> Result<MatrixFormat> {
    match flag {
        Some(s) => s.parse(),
        None => Ok(MatrixFormat::from_path(path)),
    }
}

fn format_ext(format: MatrixFormat) -> &'static str {
    match format {
        MatrixFormat::CsvDense => "csv",
        MatrixFormat::MatrixMarket => "mtx",
    }
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let started = Instant::now();
    let format = resolve_format(&args.input, &args.format)?;
    let x = load_matrix(&args.input, format)?;
    let pair = splitting::count_split(&x, args.epsilon, args.seed)?;

    let ext = format_ext(format);
    let train_path = PathBuf::from(format!("{}.train.{ext}", args.out_prefix));
    let test_path = PathBuf::from(format!("{}.test.{ext}", args.out_prefix));
    save_matrix(&pair.train, &train_path, format)?;
    save_matrix(&pair.test, &test_path, format)?;

    let manifest_path = PathBuf::from(format!("{}.manifest.json", args.out_prefix));
    write_manifest(
        &manifest_path,
        "split",
        json!({
            "input": args.input,
            "format": format.to_string(),
            "epsilon": args.epsilon,
            "out_prefix": args.out_prefix,
        }),
        args.seed,
        vec![
            train_path.display().to_string(),
            test_path.display().to_string(),
        ],
        started,
    )
}

fn build_method_config(args: &DeArgs, method: Method) -> Result<MethodConfig> {
    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str::<MethodConfig>(&read_text(path)?)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?,
        None => MethodConfig::new(method),
    };
    if args.config.is_some() && args.method.is_some() {
        cfg.method = method;
    }
    if let Some(e) = args.epsilon {
        cfg.epsilon = Some(e);
    }
    if let Some(f) = args.fraction {
        cfg.fraction = Some(f);
    }
    if let Some(est) = &args.estimator {
        cfg.estimator = parse_estimator(est)?;
    }
    if let Some(fam) = &args.family {
        cfg.family = parse_family(fam)?;
    }
    if let Some(b) = args.resamples {
        cfg.resamples = Some(b);
    }
    if let Some(s) = args.s {
        cfg.s = Some(s);
    }
    if args.add_one {
        cfg.add_one_correction = true;
    }
    cfg.seed = args.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_gamma_policy(args: &DeArgs, x: &CountMatrix) -> Result<GammaPolicy> {
    if let Some(path) = &args.gamma_file {
        let mut values = Vec::new();
        for (i, line) in read_text(path)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            values.push(line.parse::<f64>().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                row: i + 1,
                col: 1,
                message: format!("bad size factor '{line}'"),
            })?);
        }
        if values.len() != x.n_cells() {
            return Err(Error::DimensionMismatch(format!(
                "{} size factors for {} cells",
                values.len(),
                x.n_cells()
            )));
        }
        return Ok(GammaPolicy::Known(SizeFactors::from_values(values)?));
    }
    match args.gamma.as_deref() {
        None | Some("estimate") => Ok(GammaPolicy::Estimate),
        Some("unit") => Ok(GammaPolicy::Unit),
        Some(other) => Err(Error::InvalidConfig(format!(
            "unknown gamma policy '{other}' (expected estimate or unit, or use --gamma-file)"
        ))),
    }
}

fn cmd_de(args: DeArgs) -> Result<()> {
    let started = Instant::now();
    let format = resolve_format(&args.input, &args.format)?;
    let x = load_matrix(&args.input, format)?;
    let policy = resolve_gamma_policy(&args, &x)?;

    let method_name = args.method.as_deref();
    if method_name == Some("comparison") {
        return cmd_de_comparison(args, x, policy, started);
    }
    let method = match method_name {
        Some(name) => parse_method(name)?,
        None if args.config.is_some() => Method::CountSplit, // placeholder, config wins
        None => {
            return Err(Error::InvalidConfig(
                "--method is required unless --config provides one".into(),
            ))
        }
    };
    let cfg = build_method_config(&args, method)?;
    let report = crate::pipelines::run_de(&x, &policy, &cfg)?;

    let csv_path = PathBuf::from(format!("{}.results.csv", args.out_prefix));
    let json_path = PathBuf::from(format!("{}.report.json", args.out_prefix));
    write_text(&csv_path, &report.to_csv())?;
    write_text(&json_path, &report.to_json()?)?;

    let manifest_path = PathBuf::from(format!("{}.manifest.json", args.out_prefix));
    write_manifest(
        &manifest_path,
        "de",
        json!({
            "input": args.input,
            "format": format.to_string(),
            "method": cfg,
            "gamma_policy": policy.label(),
        }),
        args.seed,
        vec![
            csv_path.display().to_string(),
            json_path.display().to_string(),
        ],
        started,
    )
}

/// The three-way comparison: double dipping on the full matrix, count
/// splitting, and double dipping on the test matrix alone. All three CSVs
/// share the per-gene schema.
fn cmd_de_comparison(
    args: DeArgs,
    x: CountMatrix,
    policy: GammaPolicy,
    started: Instant,
) -> Result<()> {
    let base = build_method_config(&args, Method::DoubleDip)?;
    let epsilon = base.epsilon();

    let full_dip = MethodConfig {
        method: Method::DoubleDip,
        seed: rng::derive2(args.seed, tag::METHOD, 0),
        ..base.clone()
    };
    // Shares its split seed with the standalone split below, so the third
    // analysis double-dips exactly the test matrix the second one tested.
    let count_split = MethodConfig {
        method: Method::CountSplit,
        seed: args.seed,
        ..base.clone()
    };
    let test_dip = MethodConfig {
        method: Method::DoubleDip,
        seed: rng::derive2(args.seed, tag::METHOD, 2),
        ..base.clone()
    };

    let pair = splitting::count_split(&x, epsilon, rng::derive(args.seed, tag::SPLIT))?;
    let full_report = crate::pipelines::run_de(&x, &policy, &full_dip)?;
    let split_report = crate::pipelines::run_de(&x, &policy, &count_split)?;
    let test_report = crate::pipelines::run_de(&pair.test, &policy, &test_dip)?;

    let mut artifact_paths = Vec::new();
    for (suffix, report) in [
        ("doubledip", &full_report),
        ("countsplit", &split_report),
        ("testdip", &test_report),
    ] {
        let path = PathBuf::from(format!("{}.{suffix}.csv", args.out_prefix));
        write_text(&path, &report.to_csv())?;
        artifact_paths.push(path.display().to_string());
    }

    let manifest_path = PathBuf::from(format!("{}.manifest.json", args.out_prefix));
    write_manifest(
        &manifest_path,
        "de",
        json!({
            "input": args.input,
            "method": "comparison",
            "epsilon": epsilon,
            "estimator": base.estimator,
            "family": base.family,
            "gamma_policy": policy.label(),
        }),
        args.seed,
        artifact_paths,
        started,
    )
}

// Long-format simulation output: one metric per row, plus QQ and power
// tables keyed the same way.

struct SummaryRow {
    scenario: String,
    method: String,
    epsilon: Option<f64>,
    group: String,
    metric: String,
    value: f64,
}

struct QqRow {
    scenario: String,
    method: String,
    epsilon: Option<f64>,
    group: String,
    theoretical: f64,
    empirical: f64,
}

struct PowerRow {
    scenario: String,
    method: String,
    epsilon: f64,
    group: String,
    target_bin: String,
    metric: String,
    value: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("schema_version,scenario,method,epsilon,group,metric,value\n");
    for r in rows {
        out.push_str(&format!(
            "{CSV_SCHEMA_VERSION},{},{},{},{},{},{}\n",
            r.scenario,
            r.method,
            fmt_opt(r.epsilon),
            r.group,
            r.metric,
            r.value
        ));
    }
    out
}

fn qq_csv(rows: &[QqRow]) -> String {
    let mut out =
        String::from("schema_version,scenario,method,epsilon,group,theoretical,empirical\n");
    for r in rows {
        out.push_str(&format!(
            "{CSV_SCHEMA_VERSION},{},{},{},{},{},{}\n",
            r.scenario,
            r.method,
            fmt_opt(r.epsilon),
            r.group,
            r.theoretical,
            r.empirical
        ));
    }
    out
}

fn power_csv(rows: &[PowerRow]) -> String {
    let mut out =
        String::from("schema_version,scenario,method,epsilon,group,target_bin,metric,value\n");
    for r in rows {
        out.push_str(&format!(
            "{CSV_SCHEMA_VERSION},{},{},{},{},{},{},{}\n",
            r.scenario, r.method, r.epsilon, r.group, r.target_bin, r.metric, r.value
        ));
    }
    out
}

fn push_calibration(
    summary: &mut Vec<SummaryRow>,
    qq: &mut Vec<QqRow>,
    scenario: &str,
    method: &str,
    epsilon: Option<f64>,
    group_override: Option<&str>,
    report: &CalibrationReport,
) {
    let mut sections: Vec<(String, &simulation::CalibrationSummary)> =
        vec![(group_override.unwrap_or("all").to_string(), &report.overall)];
    if group_override.is_none() {
        for (label, s) in &report.groups {
            sections.push((label.clone(), s));
        }
    }
    for (group, s) in sections {
        summary.push(SummaryRow {
            scenario: scenario.into(),
            method: method.into(),
            epsilon,
            group: group.clone(),
            metric: "ks_distance".into(),
            value: s.ks_distance,
        });
        for &(level, rate) in &s.rejection_rate_at {
            summary.push(SummaryRow {
                scenario: scenario.into(),
                method: method.into(),
                epsilon,
                group: group.clone(),
                metric: format!("reject_{level}"),
                value: rate,
            });
        }
        summary.push(SummaryRow {
            scenario: scenario.into(),
            method: method.into(),
            epsilon,
            group: group.clone(),
            metric: "n_pvalues".into(),
            value: s.n_pvalues as f64,
        });
        summary.push(SummaryRow {
            scenario: scenario.into(),
            method: method.into(),
            epsilon,
            group: group.clone(),
            metric: "n_missing".into(),
            value: s.n_missing as f64,
        });
        for &(theoretical, empirical) in &s.qq_points {
            qq.push(QqRow {
                scenario: scenario.into(),
                method: method.into(),
                epsilon,
                group: group.clone(),
                theoretical,
                empirical,
            });
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let started = Instant::now();
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::Io { path: args.out_dir.display().to_string(), source: e })?;

    let (files, config_echo) = match (&args.preset, &args.scenario) {
        (Some(name), None) => preset_files(name, &args)?,
        (None, Some(path)) => scenario_files(path, &args)?,
        (None, None) | (Some(_), Some(_)) => {
            return Err(Error::InvalidConfig(
                "pass exactly one of --preset or --scenario".into(),
            ))
        }
    };

    let mut artifact_paths = Vec::new();
    for (name, content) in &files {
        let path = args.out_dir.join(name);
        write_text(&path, content)?;
        artifact_paths.push(path.display().to_string());
    }
    write_manifest(
        &args.out_dir.join("manifest.json"),
        "simulate",
        config_echo,
        args.seed,
        artifact_paths,
        started,
    )
}

type NamedFiles = Vec<(&'static str, String)>;

fn preset_files(name: &str, args: &SimulateArgs) -> Result<(NamedFiles, serde_json::Value)> {
    match name {
        "fig2a" => preset_fig2a(args),
        "fig2b" => preset_fig2b(args),
        "fig3" => preset_fig3(args),
        "table1" => preset_table1(args),
        "appendixC" => preset_appendix_c(args),
        other => Err(Error::InvalidConfig(format!(
            "unknown preset '{other}'; valid presets: fig2a, fig2b, fig3, table1, appendixC"
        ))),
    }
}

/// Calibration of five procedures on the two-level null. Resampling
/// procedures are capped at 200 replicates; the rest default to 2000.
fn preset_fig2a(args: &SimulateArgs) -> Result<(NamedFiles, serde_json::Value)> {
    let replicates = args.replicates.unwrap_or(2000);
    let resampling_replicates = replicates.min(200);
    let scenario = simulation::null_two_level_scenario(rng::derive(args.seed, tag::SCENARIO));

    let roster: Vec<(&str, MethodConfig, usize)> = vec![
        (
            "countsplit",
            MethodConfig { epsilon: args.epsilon, ..MethodConfig::new(Method::CountSplit) },
            replicates,
        ),
        ("doubledip", MethodConfig::new(Method::DoubleDip), replicates),
        ("cellsplit", MethodConfig::new(Method::CellSplit), replicates),
        (
            "jackstraw_efficient",
            MethodConfig::new(Method::JackstrawEfficient),
            resampling_replicates,
        ),
        ("pseudotime_de", MethodConfig::new(Method::PseudotimeDe), resampling_replicates),
    ];

    let mut summary = Vec::new();
    let mut qq = Vec::new();
    for (idx, (label, cfg, reps)) in roster.into_iter().enumerate() {
        let cfg = MethodConfig {
            seed: rng::derive2(args.seed, tag::METHOD, idx as u64),
            ..cfg
        };
        let report = run_calibration(&scenario, &cfg, reps)?;
        let epsilon = match cfg.method {
            Method::CountSplit => Some(cfg.epsilon()),
            _ => None,
        };
        push_calibration(&mut summary, &mut qq, "fig2a", label, epsilon, None, &report);
    }
    Ok((
        vec![("summary.csv", summary_csv(&summary)), ("qq.csv", qq_csv(&qq))],
        json!({
            "preset": "fig2a",
            "scenario": scenario,
            "replicates": replicates,
            "resampling_replicates": resampling_replicates,
        }),
    ))
}

/// Count-split calibration under Gamma overdispersion, one sweep point per
/// mixing shape, labeled by the mean-to-shape ratio.
fn preset_fig2b(args: &SimulateArgs) -> Result<(NamedFiles, serde_json::Value)> {
    let replicates = args.replicates.unwrap_or(500);
    let b_values = [50.0, 10.0, 5.0, 0.5];
    let base =
        simulation::overdispersed_null_scenario(50.0, rng::derive(args.seed, tag::SCENARIO));
    let method = MethodConfig {
        family: Family::NegativeBinomial,
        epsilon: args.epsilon,
        seed: rng::derive(args.seed, tag::METHOD),
        ..MethodConfig::new(Method::CountSplit)
    };

    let sweep = run_overdispersion_sweep(&b_values, &base, &method, replicates)?;
    let mut summary = Vec::new();
    let mut qq = Vec::new();
    for (b, report) in &sweep {
        let label = format!("lambda_over_b={}", 5.0 / b);
        push_calibration(
            &mut summary,
            &mut qq,
            "fig2b",
            "countsplit",
            Some(method.epsilon()),
            Some(&label),
            report,
        );
    }
    Ok((
        vec![("summary.csv", summary_csv(&summary)), ("qq.csv", qq_csv(&qq))],
        json!({
            "preset": "fig2b",
            "scenario": base,
            "b_values": b_values,
            "replicates": replicates,
            "method": method,
        }),
    ))
}

fn desk_scenarios(seed: u64) -> Vec<(&'static str, ScenarioConfig)> {
    let grid = simulation::signal_grid(5);
    vec![
        (
            "trajectory",
            simulation::signal_scenario(
                LatentKind::Trajectory,
                &grid,
                500,
                200,
                rng::derive2(seed, tag::SCENARIO, 0),
            ),
        ),
        (
            "clusters",
            simulation::signal_scenario(
                LatentKind::Clusters,
                &grid,
                500,
                200,
                rng::derive2(seed, tag::SCENARIO, 1),
            ),
        ),
    ]
}

fn lambda_group_label(beta0: f64) -> String {
    format!("lambda={}", beta0.exp().round() as i64)
}

/// Power and null calibration of count splitting across ε, binned by the
/// generating slope.
fn preset_fig3(args: &SimulateArgs) -> Result<(NamedFiles, serde_json::Value)> {
    let replicates = args.replicates.unwrap_or(40);
    let epsilons = [0.2, 0.5, 0.8];
    let grid = simulation::signal_grid(5);
    let mut rows = Vec::new();
    let scenarios = desk_scenarios(args.seed);
    for (kind, scenario) in &scenarios {
        let run = run_power_coverage(scenario, &epsilons, replicates)?;
        for &epsilon in &epsilons {
            let mut push = |target_bin: String, metric: &str, value: f64| {
                rows.push(PowerRow {
                    scenario: (*kind).into(),
                    method: "countsplit".into(),
                    epsilon,
                    group: "all".into(),
                    target_bin,
                    metric: metric.into(),
                    value,
                });
            };
            let mut null_ps: Vec<f64> = run
                .records
                .iter()
                .filter(|r| r.epsilon == epsilon && r.beta1_true == 0.0)
                .filter_map(|r| r.p_value)
                .collect();
            let n_null = null_ps.len();
            let rejections =
                null_ps.iter().filter(|p| **p <= 0.05).count() as f64 / n_null.max(1) as f64;
            push("null".into(), "ks_distance", crate::stats::ks_distance_uniform(&mut null_ps));
            push("null".into(), "rejection_rate", rejections);
            push("null".into(), "n", n_null as f64);
            for &g in &grid {
                let bin: Vec<_> = run
                    .records
                    .iter()
                    .filter(|r| r.epsilon == epsilon && r.beta1_true == g)
                    .collect();
                let tested = bin.iter().filter(|r| r.rejected.is_some()).count();
                let rejected = bin.iter().filter(|r| r.rejected == Some(true)).count();
                let target_mean = bin.iter().map(|r| r.target.abs()).sum::<f64>()
                    / bin.len().max(1) as f64;
                let label = format!("beta1={g}");
                push(label.clone(), "rejection_rate", rejected as f64 / tested.max(1) as f64);
                push(label.clone(), "target_mean", target_mean);
                push(label, "n", tested as f64);
            }
        }
    }
    Ok((
        vec![("power.csv", power_csv(&rows))],
        json!({
            "preset": "fig3",
            "scenarios": scenarios.iter().map(|(_, s)| s).collect::<Vec<_>>(),
            "epsilons": epsilons,
            "replicates": replicates,
        }),
    ))
}

/// Wald-interval coverage of the target parameter at ε = 0.5, pooled and
/// per intercept group.
fn preset_table1(args: &SimulateArgs) -> Result<(NamedFiles, serde_json::Value)> {
    let replicates = args.replicates.unwrap_or(200);
    let epsilon = args.epsilon.unwrap_or(0.5);
    let mut summary = Vec::new();
    let scenarios = desk_scenarios(args.seed);
    for (kind, scenario) in &scenarios {
        let run = run_power_coverage(scenario, &[epsilon], replicates)?;
        let mut groups: Vec<(String, Box<dyn Fn(&simulation::PowerCoverageRecord) -> bool>)> =
            vec![("all".to_string(), Box::new(|_| true))];
        let mut intercepts: Vec<u64> =
            scenario.beta0.iter().map(|b| b.to_bits()).collect();
        intercepts.sort_unstable();
        intercepts.dedup();
        for bits in intercepts {
            let beta0 = f64::from_bits(bits);
            groups.push((
                lambda_group_label(beta0),
                Box::new(move |r| r.beta0.to_bits() == bits),
            ));
        }
        for (label, filter) in groups {
            let coverage = run.coverage(&filter);
            let n = run
                .records
                .iter()
                .filter(|r| filter(r) && r.ci_covers_target.is_some())
                .count();
            summary.push(SummaryRow {
                scenario: (*kind).into(),
                method: "countsplit".into(),
                epsilon: Some(epsilon),
                group: label.clone(),
                metric: "ci_coverage".into(),
                value: coverage.unwrap_or(f64::NAN),
            });
            summary.push(SummaryRow {
                scenario: (*kind).into(),
                method: "countsplit".into(),
                epsilon: Some(epsilon),
                group: label,
                metric: "n_intervals".into(),
                value: n as f64,
            });
        }
    }
    Ok((
        vec![("summary.csv", summary_csv(&summary))],
        json!({
            "preset": "table1",
            "scenarios": scenarios.iter().map(|(_, s)| s).collect::<Vec<_>>(),
            "epsilon": epsilon,
            "replicates": replicates,
        }),
    ))
}

/// Cluster-mean tests on a constant-mean null: the naive variant against
/// the count-split variant.
fn preset_appendix_c(args: &SimulateArgs) -> Result<(NamedFiles, serde_json::Value)> {
    let replicates = args.replicates.unwrap_or(1000);
    let scenario = ScenarioConfig {
        overdispersion_b: None,
        ..simulation::overdispersed_null_scenario(1.0, rng::derive(args.seed, tag::SCENARIO))
    };
    let mut summary = Vec::new();
    let mut qq = Vec::new();
    for (idx, (label, method)) in [
        ("cluster_mean_naive", Method::ClusterMeanNaive),
        ("cluster_mean_countsplit", Method::ClusterMeanCountsplit),
    ]
    .into_iter()
    .enumerate()
    {
        let cfg = MethodConfig {
            epsilon: args.epsilon,
            seed: rng::derive2(args.seed, tag::METHOD, idx as u64),
            ..MethodConfig::new(method)
        };
        let report = run_calibration(&scenario, &cfg, replicates)?;
        let epsilon = match method {
            Method::ClusterMeanCountsplit => Some(cfg.epsilon()),
            _ => None,
        };
        push_calibration(&mut summary, &mut qq, "appendixC", label, epsilon, None, &report);
    }
    Ok((
        vec![("summary.csv", summary_csv(&summary)), ("qq.csv", qq_csv(&qq))],
        json!({
            "preset": "appendixC",
            "scenario": scenario,
            "replicates": replicates,
        }),
    ))
}

fn scenario_files(path: &Path, args: &SimulateArgs) -> Result<(NamedFiles, serde_json::Value)> {
    let mut scenario: ScenarioConfig = serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    scenario.seed = rng::derive(args.seed, tag::SCENARIO);
    let method = match &args.method {
        Some(name) => parse_method(name)?,
        None => Method::CountSplit,
    };
    let cfg = MethodConfig {
        epsilon: args.epsilon,
        seed: rng::derive(args.seed, tag::METHOD),
        ..MethodConfig::new(method)
    };
    cfg.validate()?;
    let replicates = args.replicates.unwrap_or(200);
    let report = run_calibration(&scenario, &cfg, replicates)?;

    let mut summary = Vec::new();
    let mut qq = Vec::new();
    let label = args.method.as_deref().unwrap_or("countsplit").to_string();
    let epsilon = match method {
        Method::CountSplit | Method::ClusterMeanCountsplit => Some(cfg.epsilon()),
        _ => None,
    };
    push_calibration(&mut summary, &mut qq, "custom", &label, epsilon, None, &report);
    Ok((
        vec![("summary.csv", summary_csv(&summary)), ("qq.csv", qq_csv(&qq))],
        json!({
            "scenario_file": path,
            "scenario": scenario,
            "method": cfg,
            "replicates": replicates,
        }),
    ))
}

const SUMMARY_HEADER: &str = "schema_version,scenario,method,epsilon,group,metric,value";

fn cmd_report(args: ReportArgs) -> Result<()> {
    let started = Instant::now();
    if args.inputs.is_empty() {
        return Err(Error::InvalidConfig("at least one input CSV is required".into()));
    }
    let mut schema: Option<String> = None;
    let mut rows: Vec<(Vec<String>, String)> = Vec::new();
    for path in &args.inputs {
        let text = read_text(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some(header) if header == SUMMARY_HEADER => {}
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "{}: not a summary CSV (expected header '{SUMMARY_HEADER}')",
                    path.display()
                )))
            }
        }
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.splitn(7, ',').collect();
            if fields.len() != 7 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    row: rows.len() + 2,
                    col: 1,
                    message: format!("expected 7 fields, got {}", fields.len()),
                });
            }
            match &schema {
                None => schema = Some(fields[0].to_string()),
                Some(v) if v == fields[0] => {}
                Some(v) => {
                    return Err(Error::InvalidConfig(format!(
                        "{}: schema_version '{}' conflicts with '{v}'",
                        path.display(),
                        fields[0]
                    )))
                }
            }
            // Merge key: method, scenario, epsilon, group, then metric.
            let key = vec![
                fields[2].to_string(),
                fields[1].to_string(),
                fields[3].to_string(),
                fields[4].to_string(),
                fields[5].to_string(),
            ];
            rows.push((key, line.to_string()));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));

    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for (_, line) in &rows {
        out.push_str(line);
        out.push('\n');
    }
    write_text(&args.output, &out)?;
    write_manifest(
        &args.output.with_extension("manifest.json"),
        "report",
        json!({ "inputs": args.inputs, "output": args.output }),
        0,
        vec![args.output.display().to_string()],
        started,
    )
}
