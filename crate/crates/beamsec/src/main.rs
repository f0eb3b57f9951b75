use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use beamsec::adversarial;
use beamsec::beamforming::build_codebook;
use beamsec::config::{RunConfig, Scale};
use beamsec::error::BeamsecError;
use beamsec::experiments::{self, BeamDataset};
use beamsec::nn;
use beamsec::report;

#[derive(Parser)]
#[command(name = "beamsec", version, about = "mmWave beam prediction under adversarial attack")]
struct Cli {
    /// Path to a TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Experiment scale.
    #[arg(long, global = true, value_parser = ["desk", "paper"])]
    scale: Option<String>,

    /// Base seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a pilot-feature / rate-target dataset file.
    Generate,
    /// Train the clean beam prediction model on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Attack a trained model across the epsilon grid.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Also dump per-component clean/adversarial pairs at the configured
        /// attack epsilon.
        #[arg(long)]
        dump: bool,
    },
    /// Adversarially train a robust model on a dataset.
    Defend {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run the full three-case sweep and emit CSV/plot artifacts.
    Sweep,
    /// Alias of `sweep`: (re)compute results and render report artifacts.
    Report,
}

fn exit_code_for(err: &BeamsecError) -> u8 {
    match err {
        BeamsecError::InvalidScenario(_) | BeamsecError::InvalidParameter(_) => 2,
        BeamsecError::NonFinite(_) => 4,
        _ => 3,
    }
}

fn load_config(cli: &Cli) -> beamsec::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    if let Some(scale) = &cli.scale {
        cfg.scale = if scale == "paper" { Scale::Paper } else { Scale::Desk };
    }
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.display().to_string());
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> beamsec::Result<PathBuf> {
    let dir = PathBuf::from(cfg.out_dir.as_deref().unwrap_or("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_dataset(path: &Path) -> beamsec::Result<BeamDataset> {
    let file = fs::File::open(path)?;
    let ds: BeamDataset = serde_json::from_reader(std::io::BufReader::new(file))?;
    if ds.samples.is_empty() {
        return Err(BeamsecError::EmptyDataset);
    }
    let input_dim = ds.input_dim();
    if ds.samples.iter().any(|s| s.features.len() != input_dim) {
        return Err(BeamsecError::MalformedData("inconsistent feature lengths".into()));
    }
    Ok(ds)
}

fn cmd_generate(cfg: &RunConfig) -> beamsec::Result<()> {
    let scenario = cfg.scenario()?;
    let codebook = build_codebook(
        scenario.upa,
        cfg.num_beams.unwrap_or(scenario.num_antennas()),
    )?;
    let ds = experiments::build_dataset(
        &scenario,
        &codebook,
        cfg.n_train(),
        cfg.seed.unwrap_or(0),
    )?;
    let dir = out_dir(cfg)?;
    let path = dir.join("dataset.json");
    let mut file = std::io::BufWriter::new(fs::File::create(&path)?);
    serde_json::to_writer(&mut file, &ds)?;
    file.flush()?;
    println!("wrote {} samples to {}", ds.samples.len(), path.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, dataset: &Path) -> beamsec::Result<()> {
    let ds = load_dataset(dataset)?;
    let samples = ds.nn_samples();
    let train_cfg = cfg.train_config();
    let mut model = nn::init_model(ds.input_dim(), ds.num_beams, train_cfg.seed);
    let history = nn::train(&mut model, &samples, &train_cfg)?;
    if history.train_loss.iter().chain(&history.val_loss).any(|l| !l.is_finite()) {
        return Err(BeamsecError::NonFinite("training history loss".into()));
    }
    model.r_max = Some(ds.r_max);

    let dir = out_dir(cfg)?;
    let model_path = dir.join("model.json");
    nn::save_model(&model, fs::File::create(&model_path)?)?;
    let mut hist = fs::File::create(dir.join("history.csv"))?;
    writeln!(hist, "epoch,train_loss,val_loss")?;
    for (i, (t, v)) in history.train_loss.iter().zip(&history.val_loss).enumerate() {
        writeln!(hist, "{},{:.8},{:.8}", i + 1, t, v)?;
    }
    println!("wrote {} and history.csv ({} epochs)", model_path.display(), history.train_loss.len());
    Ok(())
}

fn cmd_attack(cfg: &RunConfig, model_path: &Path, dataset: &Path, dump: bool) -> beamsec::Result<()> {
    let model = nn::load_model(fs::File::open(model_path)?)?;
    let ds = load_dataset(dataset)?;
    if model.input_dim() != ds.input_dim() {
        return Err(BeamsecError::DimensionMismatch {
            expected: ds.input_dim(),
            got: model.input_dim(),
            context: "model input vs dataset features".into(),
        });
    }
    if model.output_dim() != ds.num_beams {
        return Err(BeamsecError::DimensionMismatch {
            expected: ds.num_beams,
            got: model.output_dim(),
            context: "model output vs dataset beams".into(),
        });
    }
    let samples = ds.nn_samples();
    let refs: Vec<&nn::Sample> = samples.iter().collect();
    let mut params = cfg.attack_params();
    if !params.alpha.is_finite() {
        params.alpha = adversarial::default_alpha(&model, &refs)?;
    }

    let dir = out_dir(cfg)?;
    let mut out = fs::File::create(dir.join("attack.csv"))?;
    writeln!(out, "epsilon,mse,mean_rate")?;
    for eps in cfg.eps_grid() {
        let eps_params = adversarial::AttackParams { epsilon: eps, ..params };
        let mut mse_sum = 0.0;
        let mut rate_sum = 0.0;
        for ((x, y), ds_sample) in samples.iter().zip(&ds.samples) {
            let adv = if eps > 0.0 {
                adversarial::complex_fgsm(x, y, &model, &eps_params)?
            } else {
                x.clone()
            };
            let pred = nn::predict(&model, &adv)?;
            mse_sum += nn::mse_loss(&pred, y)?;
            rate_sum += ds_sample.rates[experiments::argmax(&pred)];
        }
        let n = samples.len() as f64;
        writeln!(out, "{:.6},{:.8},{:.6}", eps, mse_sum / n, rate_sum / n)?;
    }

    if dump {
        let mut dump_file = fs::File::create(dir.join("adversarial_samples.csv"))?;
        writeln!(dump_file, "sample_id,component_index,clean_re_or_im,adv_re_or_im")?;
        for (id, (x, y)) in samples.iter().enumerate().take(100) {
            let adv = adversarial::complex_fgsm(x, y, &model, &params)?;
            for (ci, (c, a)) in x.iter().zip(&adv).enumerate() {
                writeln!(dump_file, "{id},{ci},{c:.8},{a:.8}")?;
            }
        }
    }
    println!("wrote attack.csv ({} epsilon rows)", cfg.eps_grid().len());
    Ok(())
}

fn cmd_defend(cfg: &RunConfig, dataset: &Path) -> beamsec::Result<()> {
    let ds = load_dataset(dataset)?;
    let samples = ds.nn_samples();
    let train_cfg = cfg.train_config();
    let adv_params = cfg.adv_params();
    let (mut model, log) = adversarial::adversarial_training(&samples, &train_cfg, &adv_params)?;
    model.r_max = Some(ds.r_max);

    let dir = out_dir(cfg)?;
    let model_path = dir.join("model_defended.json");
    nn::save_model(&model, fs::File::create(&model_path)?)?;
    let mut round_log = fs::File::create(dir.join("defense_rounds.csv"))?;
    writeln!(round_log, "round,adv_val_mse,train_set_size,stop_reason")?;
    let reason = serde_json::to_string(&log.stop_reason)?.replace('"', "");
    for r in &log.rounds {
        writeln!(round_log, "{},{:.8},{},{}", r.round, r.adv_val_mse, r.train_set_size, reason)?;
    }
    println!(
        "wrote {} after {} rounds ({reason})",
        model_path.display(),
        log.rounds.len()
    );
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig) -> beamsec::Result<()> {
    let base = cfg.sweep_config()?;
    // An explicitly configured scenario is swept alone; otherwise the full
    // report covers the three archetypes at the configured scale.
    let scenarios = if cfg.scenario.is_some() || cfg.inline_scenario.is_some() {
        vec![base.scenario.clone()]
    } else {
        beamsec::scenario::ARCHETYPES
            .iter()
            .map(|name| match cfg.scale {
                Scale::Desk => beamsec::scenario::desk_variant(name),
                Scale::Paper => beamsec::scenario::preset(name),
            })
            .collect::<beamsec::Result<Vec<_>>>()?
    };
    let mut result: Option<experiments::SweepResult> = None;
    for scenario in scenarios {
        let mut sweep_cfg = base.clone();
        sweep_cfg.scenario = scenario;
        let partial = experiments::run_sweep(&sweep_cfg)?;
        match &mut result {
            None => result = Some(partial),
            Some(acc) => {
                acc.rows.extend(partial.rows);
                acc.max_budget_excess = acc.max_budget_excess.max(partial.max_budget_excess);
            }
        }
    }
    let result = result.expect("at least one scenario");
    if result.max_budget_excess > 1e-12 {
        return Err(BeamsecError::NonFinite(format!(
            "adversarial budget exceeded by {}",
            result.max_budget_excess
        )));
    }
    let dir = out_dir(cfg)?;
    let files = report::emit_report(&result, &dir)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> beamsec::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| BeamsecError::InvalidParameter(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate => cmd_generate(&cfg),
        Command::Train { dataset } => cmd_train(&cfg, dataset),
        Command::Attack { model, dataset, dump } => cmd_attack(&cfg, model, dataset, *dump),
        Command::Defend { dataset } => cmd_defend(&cfg, dataset),
        Command::Sweep | Command::Report => cmd_sweep(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
