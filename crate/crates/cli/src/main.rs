//! `meltsim`: oracle runs, surrogate training and inference, hybrid runs,
//! transfer, snapshot comparison and self-verification.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use meltsim::hybrid::{transfer_preset, HybridEvent, PhaseKind, Study, TRANSFER_PRESETS};
use meltsim::io::{
    export_snapshot, field_relative_l2, import_field_csv, load_checkpoint, melt_pool_dims, save_checkpoint,
    FieldFormat, RunConfig,
};
use meltsim::pinn::{write_loss_history, StateTable};
use meltsim::{Error, US};

#[derive(Parser, Debug)]
#[command(name = "meltsim", version, about = "Single-track powder bed fusion thermal oracle, surrogate and hybrid runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solver run from ambient over the horizon.
    Fea(Common),
    /// Data generation and surrogate training; writes a checkpoint.
    Train(Common),
    /// Surrogate snapshots from a checkpoint.
    Infer(Common),
    /// Train, infer, correct and retrain to the horizon.
    Hybrid(Common),
    /// Fine-tune a checkpoint on new process parameters.
    Transfer(TransferArgs),
    /// Relative L2 and melt-pool table between two snapshot directories.
    Compare(CompareArgs),
    /// Built-in solver and autodiff verification suites.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Grid summary for a configuration.
    Grid {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (TOML); built-in full-size defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `[io] out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Network initialisation seed, overriding `[network] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Surrogate checkpoint to read (infer, transfer).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output times in microseconds, comma separated.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// Laser power, W.
    #[arg(long)]
    power: Option<f64>,
    /// Scan speed, mm/s.
    #[arg(long)]
    speed: Option<f64>,
}

#[derive(Args, Debug)]
struct TransferArgs {
    #[command(flatten)]
    common: Common,
    /// Named power/speed preset: 60w-600, 150w-1200 or 75w-800.
    #[arg(long)]
    preset: Option<String>,
    /// Fine-tuning epochs, overriding `[hybrid] transfer_epochs`.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Snapshot directory treated as reference.
    reference: PathBuf,
    /// Snapshot directory compared against it.
    candidate: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

type CliResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> CliResult<ExitCode> {
    match command {
        Command::Fea(c) => fea(&c),
        Command::Train(c) => train(&c),
        Command::Infer(c) => infer(&c),
        Command::Hybrid(c) => hybrid(&c),
        Command::Transfer(t) => transfer(&t),
        Command::Compare(c) => compare(&c),
        Command::Verify { seed } => verify(seed),
        Command::Grid { config } => grid(config.as_deref()),
    }
    .map(|code| code.unwrap_or(ExitCode::SUCCESS))
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::paper_default(),
    })
}

/// Configuration with the command-line overrides applied and validated.
fn configure(c: &Common) -> CliResult<(RunConfig, PathBuf)> {
    let mut cfg = load_config(c.config.as_deref())?;
    if let Some(seed) = c.seed {
        cfg.network.seed = seed;
    }
    if let Some(p) = c.power {
        cfg.process.power_w = p;
    }
    if let Some(v) = c.speed {
        cfg.process.speed_mm_per_s = v;
    }
    if let Some(t) = &c.times {
        cfg.io.output_times_us = t.clone();
    }
    if let Some(out) = &c.out {
        cfg.io.out_dir = out.display().to_string();
    }
    cfg.validate()?;
    let out = PathBuf::from(&cfg.io.out_dir);
    std::fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn print_pool_row(study: &Study, label: &str, field: &meltsim::solver::ThermalField) {
    let d = melt_pool_dims(field, &study.grid, study.material.liquidus_k, study.spec.symmetry);
    println!(
        "{label:>10} {:>9.2} {:>9.1} {:>9.1} {:>9.1} {:>9.1}",
        field.time / US,
        field.max_temperature(),
        d.length * 1e6,
        d.width * 1e6,
        d.depth * 1e6
    );
}

fn pool_header() {
    println!(
        "{:>10} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "source", "t (us)", "Tmax (K)", "L (um)", "W (um)", "D (um)"
    );
}

fn fea(c: &Common) -> CliResult<Option<ExitCode>> {
    let (cfg, out) = configure(c)?;
    let study = Study::new(cfg)?;
    let times = study.config.output_times();
    let run = study.oracle_run(&times)?;
    let formats = study.config.formats()?;
    pool_header();
    for f in &run.fields {
        export_snapshot(&out, f, &study.grid, &formats)?;
        print_pool_row(&study, "solver", f);
    }
    println!("solver wall-clock {:.3} s, {} nodes", run.wall_clock, study.grid.node_count());
    Ok(None)
}

fn train(c: &Common) -> CliResult<Option<ExitCode>> {
    let (cfg, out) = configure(c)?;
    let study = Study::new(cfg)?;
    let data = study.generate_training_data()?;
    let mut problem = study.training_problem(&data)?;
    let mut model = study.new_model()?;
    let mut adam = study.new_adam(&model);
    let epochs = study.schedule.initial_epochs;
    let history = problem.train(&mut model, &mut adam, epochs, |e| {
        if let meltsim::pinn::TrainEvent::Epoch(r) = e {
            if r.epoch % 100 == 0 || r.epoch + 1 == epochs {
                info!("epoch {:>6} total {:.4e} data {:.4e} pde {:.4e}", r.epoch, r.total, r.data, r.pde);
            }
        }
    })?;
    write_loss_history(&out.join("loss_history.csv"), &history)?;
    save_checkpoint(&out.join("model.mspn"), &model, Some(&adam))?;
    let formats = study.config.formats()?;
    for t in study.config.output_times() {
        export_snapshot(&out, &study.predict(&model, &problem.table, t), &study.grid, &formats)?;
    }
    println!("trained {epochs} epochs; checkpoint {}", out.join("model.mspn").display());
    Ok(None)
}

fn infer(c: &Common) -> CliResult<Option<ExitCode>> {
    let (cfg, out) = configure(c)?;
    let path = c.checkpoint.as_ref().ok_or("infer needs --checkpoint")?;
    let (model, _) = load_checkpoint(path)?;
    let study = Study::new(cfg)?;
    let table = StateTable::new(
        Vec::new(),
        study.spec.interface_z(),
        study.spec.height(),
        study.config.losses.dt_state_us * US,
    )?;
    let formats = study.config.formats()?;
    pool_header();
    for t in study.config.output_times() {
        let f = study.predict(&model, &table, t);
        export_snapshot(&out, &f, &study.grid, &formats)?;
        print_pool_row(&study, "surrogate", &f);
    }
    Ok(None)
}

fn hybrid(c: &Common) -> CliResult<Option<ExitCode>> {
    let (cfg, out) = configure(c)?;
    let study = Study::new(cfg)?;
    let outcome = study.run_hybrid(|e| match e {
        HybridEvent::Phase(r) => info!(
            "{} [{:.1}, {:.1}] us in {:.3} s",
            r.kind.name(),
            r.start / US,
            r.end / US,
            r.wall_clock
        ),
        HybridEvent::Epoch(kind, r) => {
            if r.epoch % 500 == 0 {
                info!("{} epoch {:>6} total {:.4e}", kind.name(), r.epoch, r.total);
            }
        }
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(failure) => {
            failure.ledger.write_csv(&out.join("ledger.csv"))?;
            eprint!("{}", failure.ledger.text_table());
            return Err(failure.into());
        }
    };
    let formats = study.config.formats()?;
    pool_header();
    for s in &outcome.snapshots {
        export_snapshot(&out, &s.field, &study.grid, &formats)?;
        let label = match s.source {
            meltsim::hybrid::Source::Solver => "solver",
            meltsim::hybrid::Source::Surrogate => "surrogate",
        };
        print_pool_row(&study, label, &s.field);
    }
    outcome.ledger.write_csv(&out.join("ledger.csv"))?;
    let table = outcome.ledger.text_table();
    std::fs::write(out.join("ledger.txt"), &table)?;
    write_loss_history(&out.join("loss_history.csv"), &outcome.training_history)?;
    save_checkpoint(&out.join("model.mspn"), &outcome.model, Some(&outcome.adam))?;
    print!("{table}");
    println!(
        "{} corrections; solver share {:.3} s of {:.3} s",
        outcome.ledger.count(PhaseKind::Correct),
        outcome.ledger.solver_wall_clock(),
        outcome.ledger.total_wall_clock()
    );
    Ok(None)
}

fn transfer(t: &TransferArgs) -> CliResult<Option<ExitCode>> {
    let mut common = t.common.clone();
    if let Some(name) = &t.preset {
        let (p, v) = transfer_preset(name).ok_or_else(|| {
            let names: Vec<&str> = TRANSFER_PRESETS.iter().map(|p| p.0).collect();
            format!("unknown preset {name:?}; expected one of {names:?}")
        })?;
        common.power = Some(p);
        common.speed = Some(v);
    }
    let path = common.checkpoint.clone().ok_or("transfer needs --checkpoint")?;
    let (cfg, out) = configure(&common)?;
    let (pretrained, _) = load_checkpoint(&path)?;
    let study = Study::new(cfg)?;
    let epochs = t.epochs.unwrap_or(study.schedule.transfer_epochs);
    let outcome = study.transfer(pretrained, epochs, |r| {
        if r.epoch % 100 == 0 {
            info!("epoch {:>6} total {:.4e}", r.epoch, r.total);
        }
    })?;
    write_loss_history(&out.join("transfer_loss_history.csv"), &outcome.history)?;
    save_checkpoint(&out.join("transfer.mspn"), &outcome.model, None)?;
    println!("{:>9} {:>12} {:>12}", "t (us)", "rel L2 pre", "rel L2 post");
    for (i, &ts) in study.schedule.snapshot_times.iter().enumerate() {
        println!("{:>9.2} {:>12.4e} {:>12.4e}", ts / US, outcome.rel_l2_before[i], outcome.rel_l2_after[i]);
    }
    println!(
        "{} epochs in {:.3} s at {} W, {} mm/s",
        epochs, outcome.train_wall_clock, study.config.process.power_w, study.config.process.speed_mm_per_s
    );
    Ok(None)
}

fn csv_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::result::Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == FieldFormat::Csv.extension()) && p.is_file());
    files.sort();
    Ok(files)
}

fn compare(c: &CompareArgs) -> CliResult<Option<ExitCode>> {
    let cfg = load_config(c.config.as_deref())?;
    let study = Study::new(cfg)?;
    let reference = csv_files(&c.reference)?;
    if reference.is_empty() {
        return Err(format!("no CSV snapshots in {}", c.reference.display()).into());
    }
    let liquidus = study.material.liquidus_k;
    println!(
        "{:<28} {:>9} {:>11} {:>9} {:>9} {:>9} {:>9}",
        "file", "t (us)", "rel L2", "L ref", "L cand", "D ref", "D cand"
    );
    let mut matched = 0;
    for path in &reference {
        let name = path.file_name().expect("listed files have names");
        let other = c.candidate.join(name);
        if !other.is_file() {
            println!("{:<28} missing in {}", name.to_string_lossy(), c.candidate.display());
            continue;
        }
        let a = import_field_csv(path, &study.grid)?;
        let b = import_field_csv(&other, &study.grid)?;
        let rel = field_relative_l2(&b, &a)?;
        let (da, db) = (
            melt_pool_dims(&a, &study.grid, liquidus, study.spec.symmetry),
            melt_pool_dims(&b, &study.grid, liquidus, study.spec.symmetry),
        );
        println!(
            "{:<28} {:>9.2} {:>11.4e} {:>9.1} {:>9.1} {:>9.1} {:>9.1}",
            name.to_string_lossy(),
            a.time / US,
            rel,
            da.length * 1e6,
            db.length * 1e6,
            da.depth * 1e6,
            db.depth * 1e6
        );
        matched += 1;
    }
    if matched == 0 {
        return Err(Error::Consistency("no snapshot present in both directories".into()).into());
    }
    Ok(None)
}

fn verify(seed: u64) -> CliResult<Option<ExitCode>> {
    let results = meltsim::verify::run_all(seed)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        eprintln!("{failed} of {} checks failed", results.len());
        return Ok(Some(ExitCode::from(2)));
    }
    println!("all {} checks passed", results.len());
    Ok(None)
}

fn grid(config: Option<&Path>) -> CliResult<Option<ExitCode>> {
    let cfg = load_config(config)?;
    let g = cfg.grid()?;
    let [nx, ny, nz] = g.dims();
    let h = g.min_spacing();
    println!("nodes {} ({nx} x {ny} x {nz})", g.node_count());
    println!("min spacing {:.2} x {:.2} x {:.2} um", h[0] * 1e6, h[1] * 1e6, h[2] * 1e6);
    println!("max grading ratio {:.3}", g.max_grading_ratio());
    Ok(None)
}
