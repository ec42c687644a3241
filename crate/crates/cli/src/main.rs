//! Command-line front end. Exit status: 0 success, 2 usage or config error,
//! 3 failure inside a stage.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gptomo::gptmodel::{factorize, GptModel, Provenance};
use gptomo::io::{json_hash, read_json, read_table_dir, write_json, write_table};
use gptomo::nonclassicality::{build_problem, robustness, RobustnessResult, RobustnessSeries};
use gptomo::pipeline::{
    detect_nonmarkovianity, fit_decay, run_full_pipeline, shared_frame, volume_series_from_frames, PipelineConfig,
    RunReport, Section,
};
use gptomo::polytope::{consistent_dual, remove_interior, PolytopeFile};
use gptomo::reparam::{apply_transform, fit_sphere_transform, SphereFit};
use gptomo::synthdata::{simulate, BumpParams, FrequencyTable, SimulationConfig, TableFile};
use gptomo::tomofit::{fit_rank_k, rank_scan, select_rank, stack_tables, FitOptions, FitResult};
use gptomo::{Error, Result};

#[derive(Parser)]
#[command(name = "gptomo", version, about = "Theory-agnostic tomography of prepare-and-measure data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample frequency tables of a decohering qubit over a τ grid.
    Simulate(SimulateArgs),
    /// Fit a rank-k model to the tables of a directory (stacked in name order).
    Fit(FitArgs),
    /// Cross-validated fits over a range of ranks.
    RankScan(RankScanArgs),
    /// Factor a table or fit result into state and effect matrices.
    Factor(FactorArgs),
    /// Consistent dual of a model's effects (states side) or states (effects side).
    Dual(DualArgs),
    /// Map every model's states into the sphere frame of a consistent space.
    Reparam(ReparamArgs),
    /// Depolarization robustness of every τ block of one or more models.
    Contextuality(ContextualityArgs),
    /// Relative state-space volumes, decay fit and non-Markovian intervals.
    Volumes(VolumesArgs),
    /// Print a summary of a run report.
    Report(ReportArgs),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    shots: u64,
    /// Comma-separated waiting times in µs.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0])]
    taus: Vec<f64>,
    #[arg(long, default_value_t = 21.9)]
    t1: f64,
    #[arg(long, default_value_t = 12.7)]
    t2: f64,
    #[arg(long, default_value_t = 0.85)]
    fidelity: f64,
    #[arg(long, default_value_t = 10)]
    tables: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Transient revival `start,end,amplitude` (µs, µs, dimensionless).
    #[arg(long, value_delimiter = ',', num_args = 3)]
    bump: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct FitArgs {
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Only use tables whose file name starts with `repNN_`.
    #[arg(long)]
    repetition: Option<usize>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct RankScanArgs {
    /// Inclusive range `lo:hi`.
    #[arg(long, default_value = "2:9")]
    ranks: String,
    #[arg(long, default_value_t = 2)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Waiting time of the tables to use; defaults to the earliest present.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    input: PathBuf,
    /// Summary JSON; the error table is written next to it as CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct FactorArgs {
    #[arg(long)]
    rank: usize,
    /// A fit result or a single table file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    States,
    Effects,
}

#[derive(clap::Args)]
struct DualArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    side: Side,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ReparamArgs {
    /// States-side consistent polytope of a rank-4 model.
    #[arg(long)]
    consistent: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ContextualityArgs {
    /// One model per repetition; all must share the τ labels.
    #[arg(long, num_args = 1.., required = true)]
    model: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct VolumesArgs {
    /// One rank-4 model per repetition.
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long, default_value_t = 3.0)]
    sigmas: f64,
    #[arg(long, default_value_t = 10)]
    sphere_starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ReportArgs {
    /// `report.json` of a run, or the run directory.
    #[arg(long)]
    input: PathBuf,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML file with sections simulate, fit, contextuality, volumes.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 3,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::RankScan(a) => cmd_rank_scan(a),
        Command::Factor(a) => cmd_factor(a),
        Command::Dual(a) => cmd_dual(a),
        Command::Reparam(a) => cmd_reparam(a),
        Command::Contextuality(a) => cmd_contextuality(a),
        Command::Volumes(a) => cmd_volumes(a),
        Command::Report(a) => cmd_report(a),
        Command::Run(a) => cmd_run(a),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let bump = a.bump.map(|b| BumpParams {
        start: b[0],
        end: b[1],
        amplitude: b[2],
    });
    let cfg = SimulationConfig {
        m: a.m,
        n: a.n,
        shots: a.shots,
        taus: a.taus,
        t1: a.t1,
        t2: a.t2,
        fidelity: a.fidelity,
        tables: a.tables,
        seed: a.seed,
        bump,
    };
    let runs = simulate(&cfg)?;
    for (rep, per_tau) in runs.iter().enumerate() {
        for (t, table) in per_tau.iter().enumerate() {
            write_table(&a.out.join(format!("rep{rep:02}_tau{t:02}.json")), table)?;
        }
    }
    println!("wrote {} tables to {}", cfg.tables * cfg.taus.len(), a.out.display());
    Ok(())
}

fn load_tables(dir: &Path, repetition: Option<usize>) -> Result<Vec<(String, FrequencyTable)>> {
    let mut tables = read_table_dir(dir)?;
    if let Some(rep) = repetition {
        let prefix = format!("rep{rep:02}_");
        tables.retain(|(name, _)| name.starts_with(&prefix));
    }
    if tables.is_empty() {
        return Err(Error::InvalidArgument(format!("no tables found in {}", dir.display())));
    }
    Ok(tables)
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let tables: Vec<FrequencyTable> = load_tables(&a.input, a.repetition)?.into_iter().map(|(_, t)| t).collect();
    let stacked = stack_tables(&tables)?;
    let opts = FitOptions {
        restarts: a.restarts,
        tol: a.tol,
        max_iter: a.max_iter,
        seed: a.seed,
    };
    let fit = fit_rank_k(&stacked, a.rank, &opts)?;
    write_json(&a.out, &fit)?;
    println!(
        "rank {} fit of {} tables: chi2 {:.6e}, {} iterations, converged {}",
        fit.rank,
        tables.len(),
        fit.chi2,
        fit.iterations,
        fit.converged
    );
    Ok(())
}

fn parse_ranks(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("ranks must look like lo:hi, got {text:?}"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

#[derive(Serialize)]
struct ScanSummary {
    ranks: Vec<usize>,
    tau_us: f64,
    tables: Vec<String>,
    selected_rank: Option<usize>,
    mean_train_errors: Vec<f64>,
    mean_test_errors: Vec<f64>,
    diffs: Vec<DiffSummary>,
}

#[derive(Serialize)]
struct DiffSummary {
    rank: usize,
    mean: f64,
    std_dev: f64,
    std_err: f64,
}

fn cmd_rank_scan(a: RankScanArgs) -> Result<()> {
    let ranks = parse_ranks(&a.ranks)?;
    let all = load_tables(&a.input, None)?;
    let tau = a
        .tau
        .unwrap_or_else(|| all.iter().map(|(_, t)| t.tau).fold(f64::INFINITY, f64::min));
    let (names, tables): (Vec<String>, Vec<FrequencyTable>) = all.into_iter().filter(|(_, t)| t.tau == tau).unzip();
    let opts = FitOptions {
        restarts: a.restarts,
        tol: a.tol,
        max_iter: a.max_iter,
        seed: a.seed,
    };
    let scan = rank_scan(&tables, &ranks, &opts)?;
    let selected = match select_rank(&scan) {
        Ok(k) => Some(k),
        Err(Error::AmbiguousSelection { .. }) => None,
        Err(e) => return Err(e),
    };
    fs::write(a.out.with_extension("csv"), scan.to_csv())?;
    let summary = ScanSummary {
        ranks: scan.ranks.clone(),
        tau_us: tau,
        tables: names,
        selected_rank: selected,
        mean_train_errors: scan.mean_train_errors(),
        mean_test_errors: scan.mean_test_errors(),
        diffs: scan
            .test_error_diffs
            .iter()
            .map(|d| DiffSummary {
                rank: d.rank,
                mean: d.spread.mean,
                std_dev: d.spread.std_dev,
                std_err: d.spread.std_err,
            })
            .collect(),
    };
    write_json(&a.out, &summary)?;
    match selected {
        Some(k) => println!("selected rank {k}"),
        None => println!("no rank satisfies the selection rule; see {}", a.out.display()),
    }
    Ok(())
}

fn cmd_factor(a: FactorArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input)?;
    let (d, blocks, fit_options) = if let Ok(fit) = serde_json::from_str::<FitResult>(&text) {
        (fit.d_matrix.clone(), fit.blocks.clone(), None::<FitOptions>)
    } else {
        let file: TableFile = serde_json::from_str(&text)?;
        let table = FrequencyTable::from_file(file)?;
        (table.entries.clone(), table.blocks.clone(), None)
    };
    let mut model = factorize(&d, a.rank)?;
    let mut labels = vec![0.0; d.nrows()];
    for b in &blocks {
        for l in labels.iter_mut().skip(b.start).take(b.rows) {
            *l = b.tau;
        }
    }
    model.tau_labels = Some(labels);
    model.provenance = Some(Provenance {
        input_hash: gptomo::io::sha256_hex(text.as_bytes()),
        fit_options,
    });
    write_json(&a.out, &model)?;
    println!(
        "rank {} model: {} states, {} measured effects",
        model.rank,
        model.num_states(),
        model.num_measurements()
    );
    Ok(())
}

fn cmd_dual(a: DualArgs) -> Result<()> {
    let model: GptModel = read_json(&a.model)?;
    let poly = match a.side {
        Side::States => consistent_dual(&model.effect_columns(), Some(&model.unit()))?,
        Side::Effects => consistent_dual(&model.state_rows(), None)?,
    };
    write_json(&a.out, &poly.to_file())?;
    println!("{} vertices in dimension {}", poly.len(), poly.dimension);
    Ok(())
}

fn affine_points(rows: &[Vec<f64>]) -> Result<Vec<[f64; 3]>> {
    rows.iter()
        .map(|r| match r.as_slice() {
            [_, x, y, z] => Ok([*x, *y, *z]),
            _ => Err(Error::InvalidArgument(
                "sphere frames need rank-4 models (rows of length 4)".into(),
            )),
        })
        .collect()
}

fn points_csv(points: &[[f64; 3]]) -> String {
    let mut out = String::from("x,y,z\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
    }
    out
}

fn cmd_reparam(a: ReparamArgs) -> Result<()> {
    let consistent = read_json::<PolytopeFile>(&a.consistent)?.into_v()?;
    let boundary = remove_interior(&consistent.vertices)?;
    let boundary3 = affine_points(&boundary.vertices)?;
    let fit: SphereFit = fit_sphere_transform(&boundary3)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("sphere_fit.json"), &fit)?;
    fs::write(a.out.join("consistent.csv"), points_csv(&apply_transform(&fit, &boundary3)))?;
    for (i, path) in a.models.iter().enumerate() {
        let model: GptModel = read_json(path)?;
        let taus = model.taus();
        let groups: Vec<(String, Vec<Vec<f64>>)> = if taus.is_empty() {
            vec![("all".into(), model.state_rows())]
        } else {
            taus.iter()
                .enumerate()
                .map(|(t, &tau)| (format!("tau{t:02}_{tau}us"), model.states_at(Some(tau))))
                .collect()
        };
        for (label, rows) in groups {
            let pts = apply_transform(&fit, &affine_points(&rows)?);
            fs::write(a.out.join(format!("model{i:02}_{label}.csv")), points_csv(&pts))?;
        }
    }
    println!("sphere fit objective {:.3e}; wrote {}", fit.objective, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct RobustnessEntry {
    tau_us: f64,
    r_mean: f64,
    r_std: Option<f64>,
    witnesses: Vec<String>,
}

fn cmd_contextuality(a: ContextualityArgs) -> Result<()> {
    let models: Vec<GptModel> = a.model.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    let taus = models[0].taus();
    let taus: Vec<Option<f64>> = if taus.is_empty() { vec![None] } else { taus.into_iter().map(Some).collect() };
    let stem = a.out.with_extension("");
    let stem_name = stem.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut values = Vec::new();
    let mut entries = Vec::new();
    for (t, tau) in taus.iter().enumerate() {
        let mut rs = Vec::new();
        let mut witnesses = Vec::new();
        for (rep, m) in models.iter().enumerate() {
            let result: RobustnessResult = robustness(&build_problem(m, *tau)?)?;
            let name = format!("{stem_name}_witness_tau{t:02}_rep{rep:02}.json");
            write_json(&stem.with_file_name(&name), &result)?;
            rs.push(result.r);
            witnesses.push(name);
        }
        values.push(rs);
        entries.push(witnesses);
    }
    let series = RobustnessSeries::from_values(taus.iter().map(|t| t.unwrap_or(0.0)).collect(), values);
    let out: Vec<RobustnessEntry> = entries
        .into_iter()
        .enumerate()
        .map(|(t, witnesses)| RobustnessEntry {
            tau_us: series.taus[t],
            r_mean: series.mean[t],
            r_std: series.std_dev[t],
            witnesses,
        })
        .collect();
    write_json(&a.out, &out)?;
    fs::write(a.out.with_extension("csv"), series.to_csv())?;
    for e in &out {
        println!("tau {:>6} us: r = {:.6}", e.tau_us, e.r_mean);
    }
    Ok(())
}

#[derive(Serialize)]
struct VolumesOutput {
    series: gptomo::pipeline::VolumeSeries,
    decay: Section<gptomo::pipeline::DecayFit>,
    non_markovian: Vec<(f64, f64)>,
}

fn cmd_volumes(a: VolumesArgs) -> Result<()> {
    let models: Vec<GptModel> = a.models.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    let frames = models
        .iter()
        .enumerate()
        .map(|(rep, m)| shared_frame(m, a.sphere_starts, gptomo::synthdata::mix_seed(a.seed, rep as u64)))
        .collect::<Result<Vec<_>>>()?;
    let series = volume_series_from_frames(&frames)?;
    let decay = match fit_decay(&series) {
        Ok(f) => Section::Done(f),
        Err(e @ Error::FitFailure(_)) => Section::Skipped { reason: e.to_string() },
        Err(e) => return Err(e),
    };
    let non_markovian = detect_nonmarkovianity(&series, a.sigmas);
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("volumes.csv"), series.to_csv())?;
    let out = VolumesOutput {
        series,
        decay,
        non_markovian,
    };
    write_json(&a.out.join("volumes.json"), &out)?;
    for (i, t) in out.series.taus.iter().enumerate() {
        println!(
            "tau {t:>6} us: relative volume {:.6e} ± {:.2e}",
            out.series.relative_volumes[i], out.series.std_dev[i]
        );
    }
    println!("non-Markovian intervals: {:?}", out.non_markovian);
    Ok(())
}

fn print_report(r: &RunReport) {
    println!("seed {}  config sha256 {}", r.provenance.seed, r.provenance.config_sha256);
    println!("selected rank {}", r.rank.selected);
    match &r.rank.scan {
        Section::Done(s) => {
            for (k, m, se) in &s.diffs {
                println!("  test-error difference at rank {k}: {m:.4e} ± {se:.2e}");
            }
        }
        Section::Skipped { reason } => println!("  rank scan skipped: {reason}"),
    }
    println!(
        "max distinguishability {:.4}, purity bound {:.4}",
        r.purity.mean_max_distinguishability, r.purity.purity_bound
    );
    match &r.robustness {
        Section::Done(s) => {
            for (i, t) in s.taus.iter().enumerate() {
                println!("  r({t} us) = {:.6}", s.mean[i]);
            }
        }
        Section::Skipped { reason } => println!("robustness skipped: {reason}"),
    }
    match &r.volumes {
        Section::Done(v) => {
            for (i, t) in v.taus.iter().enumerate() {
                println!("  V({t} us) = {:.6e} ± {:.2e}", v.relative_volumes[i], v.std_dev[i]);
            }
        }
        Section::Skipped { reason } => println!("volumes skipped: {reason}"),
    }
    match &r.decay {
        Section::Done(d) => println!(
            "decay A = {:.4} ± {:.4}, B = {:.4} ± {:.4} us",
            d.amplitude, d.amplitude_err, d.decay_time, d.decay_time_err
        ),
        Section::Skipped { reason } => println!("decay fit skipped: {reason}"),
    }
    match &r.non_markovian {
        Section::Done(iv) => println!("non-Markovian intervals: {iv:?}"),
        Section::Skipped { reason } => println!("non-Markovianity skipped: {reason}"),
    }
    println!("{} artifacts", r.artifacts.len());
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let path = if a.input.is_dir() { a.input.join("report.json") } else { a.input };
    let report: RunReport = read_json(&path)?;
    print_report(&report);
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg = cfg.with_seed(seed);
    }
    let report = run_full_pipeline(&cfg, Some(&a.out))?;
    print_report(&report);
    log::info!("report hash {}", json_hash(&report)?);
    Ok(())
}
