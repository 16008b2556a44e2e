//! `exmatch`: exact covariate matching of two patient-level datasets.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 no exact match / infeasible.

mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use exmatch::balance::{balance_table, plot_data_csv, NamedWeights};
use exmatch::data::{encode, read_csv, CovariateTable, CsvOptions, DesignMatrix};
use exmatch::lp::{is_feasible, Feasibility};
use exmatch::matching::{build_qp, feasibility_problem, match_weights, MatchMode, MatchSpec};
use exmatch::propensity::{fit_logistic, pooled_weights, saturated_exact_check, Nu};
use exmatch::response::estimate_response;
use exmatch::simulation::{replications_csv, run_study_with_progress, SimulationConfig};

use manifest::OutputDir;

const EXIT_NO_SOLUTION: u8 = 2;

#[derive(Parser)]
#[command(
    name = "exmatch",
    version,
    about = "Exact covariate-matching weights for two studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact-matching weights by quadratic programming.
    Match(MatchArgs),
    /// Propensity-score weights for a pooled population.
    Propensity(PropensityArgs),
    /// Balance and response report for exact and propensity weighting side by side.
    Diagnose(DiagnoseArgs),
    /// Check whether any exact match exists.
    Feasible(FeasibleArgs),
    /// Run the simulation study.
    Simulate(SimulateArgs),
}

#[derive(Args, Clone)]
struct Input {
    /// Patient-level CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Schema sidecar JSON: {covariates, study_col, study0, study1, response_col?}.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Overrides the schema's study column.
    #[arg(long)]
    study_col: Option<String>,
    /// Study label mapped to study 0.
    #[arg(long)]
    study0: Option<String>,
    /// Study label mapped to study 1.
    #[arg(long)]
    study1: Option<String>,
    /// Overrides the schema's response column.
    #[arg(long)]
    response_col: Option<String>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModeArg {
    Unconstrained,
    Constrained,
}

#[derive(Args)]
struct MatchArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_enum, default_value = "unconstrained")]
    mode: ModeArg,
    /// Upper bound on any single weight, as a fraction of the study's total.
    #[arg(long)]
    max_weight: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PropensityArgs {
    #[command(flatten)]
    input: Input,
    /// Pool composition: `observed`, `half`, or ν₀ in [0, 1].
    #[arg(long, default_value = "observed")]
    nu: String,
    /// Cap each study's weights at this quantile.
    #[arg(long)]
    truncate_quantile: Option<f64>,
    /// Also run the closed-form saturated-model check (categorical covariates only).
    #[arg(long)]
    saturated: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value = "observed")]
    nu: String,
    #[arg(long)]
    truncate_quantile: Option<f64>,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeasibleArgs {
    #[command(flatten)]
    input: Input,
    /// Use the box-constrained system instead of plain balance.
    #[arg(long, value_enum, default_value = "unconstrained")]
    mode: ModeArg,
    /// Directory for the witness and manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Also write one line per replication and method.
    #[arg(long)]
    per_replication: bool,
}

fn load(input: &Input) -> Result<(CovariateTable, CsvOptions, Vec<PathBuf>)> {
    let mut opts = match &input.schema {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<CsvOptions>(&text)
                .with_context(|| format!("parsing schema {}", p.display()))?
        }
        None => CsvOptions::default(),
    };
    if let Some(c) = &input.study_col {
        opts.study_col = c.clone();
    }
    if let Some(s) = &input.study0 {
        opts.study0 = Some(s.clone());
    }
    if let Some(s) = &input.study1 {
        opts.study1 = Some(s.clone());
    }
    if let Some(r) = &input.response_col {
        opts.response_col = Some(r.clone());
    }
    if opts.study_col.is_empty() {
        bail!("no study column given (schema `study_col` or --study-col)");
    }
    if opts.study0.is_none() || opts.study1.is_none() {
        bail!("both study labels are required (schema `study0`/`study1` or --study0/--study1)");
    }
    let table = read_csv(&input.data, &opts)
        .with_context(|| format!("loading {}", input.data.display()))?;
    let mut inputs = vec![input.data.clone()];
    inputs.extend(input.schema.clone());
    Ok((table, opts, inputs))
}

fn spec_for(mode: ModeArg, max_weight: Option<f64>) -> MatchSpec {
    MatchSpec {
        mode: match mode {
            ModeArg::Unconstrained => MatchMode::Unconstrained,
            ModeArg::Constrained => MatchMode::Constrained,
        },
        columns: None,
        max_weight,
    }
}

fn parse_nu(s: &str) -> Result<Nu> {
    Ok(match s {
        "observed" => Nu::Observed,
        "half" => Nu::Half,
        other => {
            let nu0: f64 = other.parse().with_context(|| {
                format!("--nu must be `observed`, `half` or a number, got `{other}`")
            })?;
            if !(0.0..=1.0).contains(&nu0) {
                bail!("--nu must lie in [0, 1], got {nu0}");
            }
            Nu::Explicit {
                nu0,
                nu1: 1.0 - nu0,
            }
        }
    })
}

fn weights_csv(
    table: &CovariateTable,
    dm: &DesignMatrix,
    columns: &[(&str, Option<&[Vec<f64>; 2]>)],
) -> String {
    let mut out = String::from("row,study");
    for (name, _) in columns {
        write!(out, ",{name},{name}_scaled").unwrap();
    }
    out.push('\n');
    let labels = table.study_labels();
    for k in 0..2 {
        let n = dm.rows[k].len() as f64;
        for (r, &row) in dm.rows[k].iter().enumerate() {
            write!(out, "{},{}", row + 1, labels[k]).unwrap();
            for (_, w) in columns {
                match w {
                    Some(w) => {
                        let total: f64 = w[k].iter().sum();
                        write!(out, ",{},{}", w[k][r] / total, w[k][r] * n / total).unwrap();
                    }
                    None => out.push_str(",NA,NA"),
                }
            }
            out.push('\n');
        }
    }
    out
}

fn cmd_match(args: MatchArgs) -> Result<u8> {
    let (table, opts, inputs) = load(&args.input)?;
    let dm = encode(&table);
    let spec = spec_for(args.mode, args.max_weight);
    let config = json!({"schema": opts, "mode": args.mode, "max_weight": args.max_weight});
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let mut out = OutputDir::create(&args.out, "match", config, &input_refs)?;
    let solution = match_weights(&dm, &spec)?;
    out.write_json("solution.json", &solution)?;
    let code = if solution.is_matched() {
        let name = match args.mode {
            ModeArg::Unconstrained => "unconstrained",
            ModeArg::Constrained => "constrained",
        };
        let report = balance_table(&dm, &[NamedWeights::from_match(name, &solution)])?;
        out.write(
            "weights.csv",
            weights_csv(&table, &dm, &[("weight", Some(&solution.weights))]),
        )?;
        out.write_json("balance.json", &report)?;
        out.write("balance.csv", report.to_csv())?;
        eprintln!(
            "matched: ESS {:.2} / {:.2}, max balance gap {:.2e}",
            solution.ess.map_or(f64::NAN, |e| e[0]),
            solution.ess.map_or(f64::NAN, |e| e[1]),
            solution.diagnostics.max_balance_gap
        );
        0
    } else {
        eprintln!("no exact match exists for these data");
        EXIT_NO_SOLUTION
    };
    out.finish()?;
    Ok(code)
}

fn cmd_propensity(args: PropensityArgs) -> Result<u8> {
    let (table, opts, inputs) = load(&args.input)?;
    let nu = parse_nu(&args.nu)?;
    let dm = encode(&table);
    let config = json!({"schema": opts, "nu": nu, "truncate_quantile": args.truncate_quantile});
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let mut out = OutputDir::create(&args.out, "propensity", config, &input_refs)?;
    let model = fit_logistic(&dm)?;
    let weights = pooled_weights(&model, nu, args.truncate_quantile)?;
    for w in &weights.warnings {
        log::warn!("{w}");
    }
    out.write_json("model.json", &model)?;
    out.write_json("weights.json", &weights)?;
    out.write(
        "weights.csv",
        weights_csv(&table, &dm, &[("weight", Some(&weights.weights))]),
    )?;
    let report = balance_table(
        &dm,
        &[NamedWeights::from_propensity("propensity", &weights)],
    )?;
    out.write_json("balance.json", &report)?;
    out.write("balance.csv", report.to_csv())?;
    if args.saturated {
        let sat = saturated_exact_check(&table, nu)?;
        out.write_json("saturated.json", &sat)?;
    }
    out.finish()?;
    Ok(0)
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<u8> {
    let (table, opts, inputs) = load(&args.input)?;
    let nu = parse_nu(&args.nu)?;
    let dm = encode(&table);
    let config = json!({
        "schema": opts, "nu": nu, "truncate_quantile": args.truncate_quantile, "ci_level": args.ci_level
    });
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let mut out = OutputDir::create(&args.out, "diagnose", config, &input_refs)?;

    let unconstrained = match_weights(&dm, &MatchSpec::unconstrained())?;
    let constrained = match_weights(&dm, &MatchSpec::constrained())?;
    let ps = fit_logistic(&dm).and_then(|m| pooled_weights(&m, nu, args.truncate_quantile));
    let ps = match ps {
        Ok(w) => Some(w),
        Err(e) => {
            log::warn!("propensity weights unavailable: {e}");
            None
        }
    };
    let mut methods = vec![
        NamedWeights::from_match("unconstrained", &unconstrained),
        NamedWeights::from_match("constrained", &constrained),
    ];
    if let Some(w) = &ps {
        methods.push(NamedWeights::from_propensity("propensity", w));
    }
    let report = balance_table(&dm, &methods)?;
    out.write_json("balance.json", &report)?;
    out.write("balance.csv", report.to_csv())?;
    out.write("plot_data.csv", plot_data_csv(report.n, &methods))?;
    let cols: Vec<(&str, Option<&[Vec<f64>; 2]>)> = methods
        .iter()
        .map(|m| (m.name.as_str(), m.weights.as_ref()))
        .collect();
    out.write("weights.csv", weights_csv(&table, &dm, &cols))?;

    if table.response().is_some() {
        let uniform = [vec![1.0; dm.n0()], vec![1.0; dm.n1()]];
        let mut estimates = serde_json::Map::new();
        estimates.insert(
            "observed".into(),
            serde_json::to_value(estimate_response(&table, &uniform, args.ci_level)?)?,
        );
        for m in &methods {
            let v = match &m.weights {
                Some(w) => serde_json::to_value(estimate_response(&table, w, args.ci_level)?)?,
                None => serde_json::Value::Null,
            };
            estimates.insert(m.name.clone(), v);
        }
        out.write_json("response.json", &estimates)?;
    }
    out.finish()?;
    Ok(0)
}

fn cmd_feasible(args: FeasibleArgs) -> Result<u8> {
    let (table, opts, inputs) = load(&args.input)?;
    let dm = encode(&table);
    let built = build_qp(&dm, &spec_for(args.mode, None))?;
    let result = if built.inconsistent {
        Feasibility::Infeasible {
            phase1_objective: f64::INFINITY,
        }
    } else {
        is_feasible(&feasibility_problem(&built))
    };
    let feasible = result.is_feasible();
    println!("{}", if feasible { "feasible" } else { "infeasible" });
    if let Some(dir) = &args.out {
        let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        let mut out = OutputDir::create(
            dir,
            "feasible",
            json!({"schema": opts, "mode": args.mode}),
            &input_refs,
        )?;
        out.write_json(
            "feasibility.json",
            &FeasibleReport::new(&result, built.qp.n()),
        )?;
        out.finish()?;
    }
    Ok(if feasible { 0 } else { EXIT_NO_SOLUTION })
}

#[derive(Serialize)]
struct FeasibleReport {
    feasible: bool,
    /// Patient weights from the witness (slack variables removed).
    witness: Option<Vec<f64>>,
    phase1_objective: Option<f64>,
}

impl FeasibleReport {
    fn new(r: &Feasibility, n: usize) -> Self {
        match r {
            Feasibility::Feasible { witness } => Self {
                feasible: true,
                witness: Some(witness[..n].to_vec()),
                phase1_objective: None,
            },
            Feasibility::Infeasible { phase1_objective } => Self {
                feasible: false,
                witness: None,
                phase1_objective: phase1_objective.is_finite().then_some(*phase1_objective),
            },
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<SimulationConfig>(&text)
                .with_context(|| format!("parsing config {}", p.display()))?
        }
        None => SimulationConfig::default(),
    };
    if let Some(r) = args.reps {
        cfg.replications = r;
    }
    cfg.seed = args.seed;
    cfg.validate()?;
    if args.threads == Some(0) {
        bail!("--threads must be at least 1");
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build()?;
    let inputs: Vec<&Path> = args.config.iter().map(PathBuf::as_path).collect();
    let mut out = OutputDir::create(
        &args.out,
        "simulate",
        json!({"config": cfg, "threads": pool.current_num_threads(), "per_replication": args.per_replication}),
        &inputs,
    )?;
    let total = cfg.replications;
    let run = pool.install(|| {
        run_study_with_progress(&cfg, |d| eprintln!("replications completed: {d}/{total}"))
    })?;
    out.write_json("summary.json", &run.summary)?;
    out.write("ess.csv", run.summary.ess_csv())?;
    out.write("maxweights.csv", run.summary.max_weights_csv())?;
    out.write("ydiff.csv", run.summary.ydiff_csv())?;
    if args.per_replication {
        out.write("replications.csv", replications_csv(&run.records))?;
    }
    out.finish()?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Match(a) => cmd_match(a),
        Command::Propensity(a) => cmd_propensity(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Feasible(a) => cmd_feasible(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap exits with 2 on usage errors; 2 is reserved for "no solution" here
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nu_parsing() {
        assert_eq!(parse_nu("observed").unwrap(), Nu::Observed);
        assert_eq!(parse_nu("half").unwrap(), Nu::Half);
        assert_eq!(
            parse_nu("0.25").unwrap(),
            Nu::Explicit {
                nu0: 0.25,
                nu1: 0.75
            }
        );
        assert!(parse_nu("1.5").is_err());
        assert!(parse_nu("most").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
