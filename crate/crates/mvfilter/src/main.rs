use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mvfilter::records::{format_float, read_records, write_artifacts};
use mvfilter::{acceptance, report, run_experiment, ExperimentConfig, Sweep};
use mvfilter_core::filter::{run_filter_with, FilterState};
use mvfilter_core::sde::{simulate_law_flow, simulate_truth};

#[derive(Parser)]
#[command(name = "mvfilter", version = mvfilter::VERSION, about = "Particle filters for McKean-Vlasov signals: simulation, diagnostics and sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the law flow and one signal/observation path; writes truth.csv.
    Simulate(Common),
    /// Run the particle filter on a simulated path; writes filter.csv.
    Filter(Common),
    /// Run the configured diagnostics at the base cell of every replicate.
    Diagnose(Common),
    /// Run the configured diagnostics over the full sweep grid.
    Sweep(Common),
    /// Summarize records.json from --out, or run the acceptance battery.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run the acceptance criteria instead of reading records.
        #[arg(long)]
        acceptance: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment: smoke, determinism or a scenario preset name.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output` or `out/<experiment id>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_json(&text)?
            }
            (None, Some(name)) => ExperimentConfig::named(name)?,
            (None, None) => ExperimentConfig::named("smoke")?,
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| Path::new("out").join(cfg.experiment_id()))
    }

    fn install_threads(&self) -> Result<()> {
        if let Some(k) = self.threads {
            rayon::ThreadPoolBuilder::new().num_threads(k).build_global()?;
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate(common) => simulate(&common),
        Command::Filter(common) => filter(&common),
        Command::Diagnose(common) => {
            common.install_threads()?;
            let mut cfg = common.load()?;
            cfg.sweep = Sweep::default();
            diagnostics(&common, &cfg)
        }
        Command::Sweep(common) => {
            common.install_threads()?;
            let cfg = common.load()?;
            diagnostics(&common, &cfg)
        }
        Command::Report { common, acceptance: true } => {
            common.install_threads()?;
            let outcomes = acceptance::evaluate_all();
            let doc = report::render_acceptance(&outcomes);
            emit(&common, "acceptance.md", &doc)?;
            Ok(outcomes.iter().all(|o| o.passed))
        }
        Command::Report { common, acceptance: false } => {
            let dir = match (&common.out, common.config.is_some() || common.preset.is_some()) {
                (Some(dir), _) => dir.clone(),
                (None, true) => common.out_dir(&common.load()?),
                (None, false) => bail!("report needs --out <dir> holding records.json"),
            };
            let records = read_records(&dir.join("records.json"))?;
            print!("{}", report::render(&records));
            Ok(records.iter().all(|r| r.passed))
        }
    }
}

fn emit(common: &Common, name: &str, doc: &str) -> Result<()> {
    print!("{doc}");
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), doc)?;
    }
    Ok(())
}

fn diagnostics(common: &Common, cfg: &ExperimentConfig) -> Result<bool> {
    let records = run_experiment(cfg)?;
    let dir = common.out_dir(cfg);
    write_artifacts(&dir, cfg, &records)?;
    let doc = report::render(&records);
    fs::write(dir.join("report.md"), &doc)?;
    print!("{doc}");
    for (diagnostic, (ok, total)) in report::pass_counts(&records) {
        eprintln!("{diagnostic}: {ok}/{total} pass");
    }
    eprintln!("artifacts in {}", dir.display());
    Ok(records.iter().all(|r| r.passed))
}

fn simulate(common: &Common) -> Result<bool> {
    common.install_threads()?;
    let cfg = common.load()?;
    let cell = cfg.base_cells()[0];
    let c = cfg.preset.coefficients()?;
    let init = cfg.preset.initial_law();
    let sim = cfg.sim_for(&cell, 0);
    let law = simulate_law_flow(&c, &init, &sim)?;
    let truth = simulate_truth(&c, &law, &init, &sim)?;
    let (n, m) = (truth.dims.n, truth.dims.m);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string(), "time".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|l| format!("y{l}")));
    header.extend((0..n).map(|i| format!("law_mean{i}")));
    w.write_record(&header)?;
    for k in 0..=truth.steps() {
        let mut row = vec![k.to_string(), format_float(sim.time(k))];
        row.extend(truth.x_at(k).iter().map(|v| format_float(*v)));
        row.extend(truth.y_at(k).iter().map(|v| format_float(*v)));
        row.extend(law.at(k).mean().iter().map(|v| format_float(*v)));
        w.write_record(&row)?;
    }
    let dir = common.out_dir(&cfg);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("truth.csv"), w.into_inner()?)?;
    eprintln!("{} steps written to {}", truth.steps(), dir.join("truth.csv").display());
    Ok(true)
}

fn filter(common: &Common) -> Result<bool> {
    common.install_threads()?;
    let cfg = common.load()?;
    let cell = cfg.base_cells()[0];
    let c = cfg.preset.coefficients()?;
    let init = cfg.preset.initial_law();
    let sim = cfg.sim_for(&cell, 0);
    let fcfg = cfg.filter_for(&cell, 1);
    let law = simulate_law_flow(&c, &init, &sim)?;
    let truth = simulate_truth(&c, &law, &init, &sim)?;
    let n = truth.dims.n;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["step".to_string(), "time".to_string(), "mass".to_string(), "ess".to_string()];
    header.extend((0..n).map(|i| format!("mean{i}")));
    header.extend((0..n).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    let initial = FilterState::sample(&init, cell.n_filt, fcfg.seed)?;
    let resampled = run_filter_with(&c, &law, initial, &truth.dvtilde, &sim, &fcfg, |k, s| {
        let mut row = vec![k.to_string(), format_float(s.time), format_float(s.mass()), format_float(s.effective_sample_size())];
        row.extend(s.normalized_mean()?.iter().map(|v| format_float(*v)));
        row.extend(truth.x_at(k).iter().map(|v| format_float(*v)));
        w.write_record(&row).map_err(|e| mvfilter_core::Error::InvalidConfig(e.to_string()))
    })?;
    let dir = common.out_dir(&cfg);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("filter.csv"), w.into_inner()?)?;
    eprintln!("filter written to {}{}", dir.join("filter.csv").display(), if resampled { " (resampled)" } else { "" });
    Ok(true)
}
