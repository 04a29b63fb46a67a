use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msurv::estimators::{
    aalen_johansen, default_grid, exact_transitions, kaplan_meier, posterior_survival, quantile, survival_records,
    PredictiveOptions, SurvivalCurve,
};
use msurv::io::{
    default_ids, read_cav_csv, read_config, read_draws_csv, read_latents_csv, read_panel_csv, read_trajectory_csv,
    write_acceptance_json, write_config, write_curve, write_draws_csv, write_latents_csv, write_occupancy,
    write_panel_csv, write_trajectory_csv, ChainSummary, DrawTable, PanelData,
};
use msurv::mcmc::{run_chain, Observations};
use msurv::trajectory::{simulate_population, PopulationTrajectory};
use msurv::Error;
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "msurv", version, about = "Exchangeable multi-state survival processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a population and optionally its annual-style panel view.
    Simulate(SimulateArgs),
    /// Run the uniformization sampler on panel or exact data.
    Fit(FitArgs),
    /// Posterior predictive survival curves from fitted draws.
    Predict(PredictArgs),
    /// Kaplan-Meier estimate from failure/censoring records.
    Km(KmArgs),
    /// Aalen-Johansen state occupancy from exactly observed transitions.
    Aj(AjArgs),
    /// Posterior mean and 5%/95% quantiles per parameter.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Number of units, all starting in state 1 (overrides the config).
    #[arg(long)]
    n: Option<usize>,
    /// Censor every unit at this time; default is to run to absorption.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the panel observed at multiples of this spacing.
    #[arg(long)]
    observe_every: Option<f64>,
    /// Panel CSV path; defaults to `<out>` with a `_panel` suffix.
    #[arg(long)]
    panel_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Panel CSV (or CAV CSV with --cav, or trajectory CSV with --complete).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    latent_period: Option<usize>,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, conflicts_with = "complete")]
    cav: bool,
    /// The data are exactly observed trajectories.
    #[arg(long)]
    complete: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// A `fit` output directory or one of its draws CSV files.
    #[arg(long)]
    draws: PathBuf,
    /// Latent snapshots; defaults to the file matching the draws.
    #[arg(long)]
    latents: Option<PathBuf>,
    /// Defaults to `config.json` next to the draws.
    #[arg(long)]
    config: Option<PathBuf>,
    /// 1-based; repeat for several curves.
    #[arg(long = "baseline-state", required = true)]
    baseline: Vec<usize>,
    /// `END:POINTS` or a comma-separated list of times starting at 0.
    #[arg(long)]
    grid: Option<String>,
    /// Condition on being alive at this time.
    #[arg(long)]
    at_time: Option<f64>,
    #[arg(long, default_value_t = 200)]
    paths: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KmArgs {
    #[arg(long)]
    data: PathBuf,
    /// Graph for reading the panel; defaults to survival.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cav: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AjArgs {
    /// Trajectory CSV, or a panel CSV without intermediate appointments.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Start all mass in this 1-based state instead of the empirical mix.
    #[arg(long = "baseline-state")]
    baseline: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// One draws CSV per chain; draws are pooled.
    #[arg(long, required = true, num_args = 1..)]
    draws: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::NonConvergence(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Km(a) => km(a),
        Command::Aj(a) => aj(a),
        Command::Summarize(a) => summarize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}

/// Worker pool capped by `MSURV_THREADS`.
fn pool(work: usize) -> CliResult<rayon::ThreadPool> {
    let cap = match std::env::var("MSURV_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => return usage(format!("MSURV_THREADS must be a positive integer, got `{v}`")),
        },
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(cap.min(work.max(1)))
        .build()
        .map_err(|e| Failure::Data(e.to_string()))
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn std::io::Write>> {
    match path {
        Some(p) => Ok(Box::new(std::fs::File::create(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?)),
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let doc = read_config(&a.config)?;
    let params = doc.model_params()?;
    let graph = params.structure().graph();
    let sim = doc.simulation.clone();
    let initial: Vec<usize> = match (a.n, &sim) {
        (Some(n), _) => vec![0; n],
        (None, Some(s)) => {
            if s.initial.len() != graph.n_states() {
                return Err(Failure::Data(format!(
                    "simulation.initial needs {} counts, got {}",
                    graph.n_states(),
                    s.initial.len()
                )));
            }
            s.initial.iter().enumerate().flat_map(|(state, &c)| std::iter::repeat_n(state, c)).collect()
        }
        (None, None) => return usage("give --n or a `simulation` section in the config"),
    };
    if let Some(&s) = initial.iter().find(|&&s| graph.is_absorbing(s)) {
        return Err(Failure::Data(format!("units cannot start in absorbing state {}", s + 1)));
    }
    let horizon = a.horizon.or(sim.as_ref().and_then(|s| s.horizon)).unwrap_or(f64::INFINITY);
    if !(horizon >= 0.0) {
        return usage(format!("--horizon must be >= 0, got {horizon}"));
    }
    let seed = a.seed.or(sim.as_ref().map(|s| s.seed)).unwrap_or(1);
    let every = a.observe_every.or(sim.as_ref().and_then(|s| s.observe_every));
    if let Some(e) = every {
        if !(e > 0.0 && e.is_finite()) {
            return usage(format!("--observe-every must be positive, got {e}"));
        }
    }
    let trajectory = simulate_population(&initial, &params, horizon, seed)?;
    write_trajectory_csv(&a.out, &trajectory, &default_ids(trajectory.n_units()))?;
    if let Some(e) = every {
        let panel = PanelData::from_trajectory(&trajectory, graph, e)?;
        let path = a.panel_out.unwrap_or_else(|| sibling(&a.out, "_panel"));
        write_panel_csv(&path, &panel)?;
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}

fn fit(a: FitArgs) -> CliResult<()> {
    let mut doc = read_config(&a.config)?;
    if let Some(v) = a.iters {
        doc.mcmc.iterations = v;
    }
    if let Some(v) = a.burnin {
        doc.mcmc.burn_in = v;
    }
    if let Some(v) = a.latent_period {
        doc.mcmc.latent_period = v;
    }
    if let Some(v) = a.seed {
        doc.mcmc.seed = v;
    }
    if doc.mcmc.iterations <= doc.mcmc.burn_in {
        return usage(format!(
            "iterations ({}) must exceed burn-in ({})",
            doc.mcmc.iterations, doc.mcmc.burn_in
        ));
    }
    if doc.mcmc.latent_period == 0 {
        return usage("--latent-period must be at least 1");
    }
    if a.chains == 0 {
        return usage("--chains must be at least 1");
    }
    let template = doc.model_params()?;
    let prior = doc.prior_spec()?;
    doc.mcmc.validate()?;
    let graph = template.structure().graph();
    let (observations, ids) = if a.complete {
        let (t, ids) = read_trajectory_csv(&a.data, graph)?;
        (Observations::Complete(t), ids)
    } else {
        let panel = if a.cav { read_cav_csv(&a.data, graph)? } else { read_panel_csv(&a.data, graph)? };
        let ids = panel.units.iter().map(|u| u.id.clone()).collect();
        (Observations::Panel(panel), ids)
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?;

    let base = doc.mcmc.clone();
    let runs: Vec<msurv::Result<_>> = pool(a.chains)?.install(|| {
        (0..a.chains)
            .into_par_iter()
            .map(|c| {
                let mut config = base.clone();
                config.seed = base.seed.wrapping_add(c as u64);
                let draws = run_chain(&observations, &template, &prior, &config)?;
                eprintln!("chain {} finished ({} draws)", c + 1, draws.n_draws());
                Ok((config.seed, draws))
            })
            .collect()
    });
    let mut summaries = Vec::new();
    for (c, run) in runs.into_iter().enumerate() {
        let (seed, draws) = run?;
        let k = c + 1;
        write_draws_csv(a.out.join(format!("draws_chain{k}.csv")), &DrawTable::from_draws(&draws))?;
        write_latents_csv(a.out.join(format!("latents_chain{k}.csv")), &draws, &ids)?;
        summaries.push(ChainSummary::new(k, seed, &draws));
    }
    write_acceptance_json(a.out.join("acceptance.json"), &summaries)?;
    write_config(a.out.join("config.json"), &doc)?;
    Ok(())
}

/// Resolves the draws, latents and config files of a `fit` output.
fn predict_inputs(a: &PredictArgs) -> (PathBuf, PathBuf, PathBuf) {
    let draws = if a.draws.is_dir() { a.draws.join("draws_chain1.csv") } else { a.draws.clone() };
    let dir = draws.parent().map(Path::to_path_buf).unwrap_or_default();
    let latents = a.latents.clone().unwrap_or_else(|| {
        let name = draws.file_name().map(|n| n.to_string_lossy().replacen("draws", "latents", 1)).unwrap_or_default();
        dir.join(name)
    });
    let config = a.config.clone().unwrap_or_else(|| dir.join("config.json"));
    (draws, latents, config)
}

fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    if let Some((end, points)) = spec.split_once(':') {
        let end: f64 = end.trim().parse().map_err(|_| Failure::Usage(format!("bad grid end `{end}`")))?;
        let points: usize = points.trim().parse().map_err(|_| Failure::Usage(format!("bad grid size `{points}`")))?;
        if !(end > 0.0 && end.is_finite()) || points == 0 {
            return usage(format!("grid `{spec}` needs a positive end and at least one point"));
        }
        return Ok(default_grid(end, points));
    }
    let grid: Vec<f64> = spec
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Failure::Usage(format!("bad grid time `{t}`"))))
        .collect::<CliResult<_>>()?;
    if grid.first() != Some(&0.0) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return usage("grid times must start at 0 and increase");
    }
    Ok(grid)
}

fn predict(a: PredictArgs) -> CliResult<()> {
    let (draws_path, latents_path, config_path) = predict_inputs(&a);
    let doc = read_config(&config_path)?;
    let template = doc.model_params()?;
    let graph = template.structure().graph();
    let mut baselines = Vec::new();
    for &b in &a.baseline {
        if b == 0 || b > graph.n_states() {
            return usage(format!("--baseline-state {b} is not in 1..{}", graph.n_states()));
        }
        if graph.is_absorbing(b - 1) {
            return usage(format!("--baseline-state {b} is absorbing"));
        }
        baselines.push(b - 1);
    }
    if let Some(t) = a.at_time {
        if !(t >= 0.0 && t.is_finite()) {
            return usage(format!("--at-time must be finite and >= 0, got {t}"));
        }
    }
    if a.paths == 0 {
        return usage("--paths must be at least 1");
    }
    let table = read_draws_csv(&draws_path)?;
    let latents = read_latents_csv(&latents_path, graph)?;
    let end = latents
        .iter()
        .flat_map(|(_, t)| t.units.iter())
        .flat_map(|u| u.jumps.last().map(|j| j.0).into_iter().chain(u.censor))
        .fold(0.0, f64::max);
    let draws = table.into_draws(&template, latents)?;
    let grid = match &a.grid {
        Some(spec) => parse_grid(spec)?,
        None => default_grid(end, 200),
    };
    let options = PredictiveOptions { paths: a.paths, at_time: a.at_time, seed: a.seed };
    let curves: Vec<SurvivalCurve> = pool(draws.latents.len())?.install(|| {
        baselines.iter().map(|&b| posterior_survival(&draws, b, &grid, &options)).collect::<msurv::Result<_>>()
    })?;
    let mut out = output(a.out.as_deref())?;
    for (k, curve) in curves.iter().enumerate() {
        let mut buf = Vec::new();
        write_curve(&mut buf, curve)?;
        let text = String::from_utf8(buf).expect("CSV output is UTF-8");
        // one header for all baselines
        let body = if k == 0 { text.as_str() } else { text.split_once('\n').map_or("", |x| x.1) };
        out.write_all(body.as_bytes()).map_err(|e| Failure::Data(e.to_string()))?;
    }
    Ok(())
}

fn km(a: KmArgs) -> CliResult<()> {
    let graph = match &a.config {
        Some(c) => read_config(c)?.structure()?.graph().clone(),
        None if a.cav => msurv::statespace::TransitionGraph::builtin(msurv::statespace::BuiltinGraph::Cav)?,
        None => msurv::statespace::TransitionGraph::builtin(msurv::statespace::BuiltinGraph::Survival)?,
    };
    let panel = if a.cav { read_cav_csv(&a.data, &graph)? } else { read_panel_csv(&a.data, &graph)? };
    let curve = kaplan_meier(&survival_records(&panel))?;
    write_curve(output(a.out.as_deref())?, &curve)?;
    Ok(())
}

fn aj(a: AjArgs) -> CliResult<()> {
    let doc = read_config(&a.config)?;
    let structure = doc.structure()?;
    let graph = structure.graph();
    let header = std::fs::read_to_string(&a.data)
        .map_err(|e| Failure::Data(format!("{}: {e}", a.data.display())))?
        .lines()
        .next()
        .unwrap_or_default()
        .to_string();
    let data: PopulationTrajectory = if header.split(',').any(|f| f.trim() == "event") {
        exact_transitions(&read_panel_csv(&a.data, graph)?, graph)?
    } else {
        read_trajectory_csv(&a.data, graph)?.0
    };
    let initial = match a.baseline {
        Some(b) if b == 0 || b > graph.n_states() => {
            return usage(format!("--baseline-state {b} is not in 1..{}", graph.n_states()))
        }
        Some(b) => Some(b - 1),
        None => None,
    };
    let curves = aalen_johansen(&data, graph, initial)?;
    write_occupancy(output(a.out.as_deref())?, &curves)?;
    Ok(())
}

fn summarize(a: SummarizeArgs) -> CliResult<()> {
    let mut names: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for path in &a.draws {
        let table = read_draws_csv(path)?;
        if table.values.is_empty() {
            continue;
        }
        if names.is_empty() {
            names = table.names.clone();
            columns = vec![Vec::new(); names.len()];
        } else if names != table.names {
            return Err(Failure::Data(format!("{}: parameters differ from the first draws file", path.display())));
        }
        for row in &table.values {
            for (c, &v) in columns.iter_mut().zip(row) {
                c.push(v);
            }
        }
    }
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    let io = |e: csv::Error| Failure::Data(e.to_string());
    w.write_record(["parameter", "mean", "q05", "q95"]).map_err(io)?;
    for (name, mut col) in names.into_iter().zip(columns) {
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        col.sort_by(f64::total_cmp);
        let row = [name, fmt(mean), fmt(quantile(&col, 0.05)), fmt(quantile(&col, 0.95))];
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Failure::Data(e.to_string()))?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}
