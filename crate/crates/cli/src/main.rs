use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mcstereo::ablation::{ablation_run, load_scene_set, AblationGrid};
use mcstereo::eval::evaluate;
use mcstereo::imagery::{load_image, read_pfm, write_disparity_png, write_pfm};
use mcstereo::pipeline::{parse_extractor, run, PipelineConfig, UpdaterChoice};
use mcstereo::selftest::run_selftest;
use mcstereo::synth::{
    random_dot_stereogram, read_mask, repeated_texture_pair, write_scene, FieldSpec, RdsParams, RepeatParams,
};
use mcstereo::{CascadeSchedule, Error};

#[derive(Parser, Debug)]
#[command(name = "mcstereo", version, about = "Multi-peak cascaded stereo matching")]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate disparity for a rectified pair
    Run(RunArgs),
    /// Generate a synthetic scene with ground truth
    Synth(SynthArgs),
    /// Score a disparity map against ground truth
    Eval(EvalArgs),
    /// Run a configuration grid over a scene set
    Ablate(AblateArgs),
    /// Run the built-in oracle and gradient suites
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    /// Output PFM; a `.q.pfm` suffix stores the quarter-resolution map
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    viz: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 3)]
    peaks: usize,
    #[arg(long)]
    schedule: Option<String>,
    /// census[:w] | ncc[:w] | weights:PATH
    #[arg(long, default_value = "census")]
    features: String,
    /// null | sharpen:λ,w | gru:PATH
    #[arg(long, default_value = "null")]
    updater: String,
    #[arg(long, default_value_t = 192)]
    dmax: usize,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthMode {
    Rds,
    Repeat,
    Step,
}

#[derive(clap::Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    mode: SynthMode,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 96)]
    height: usize,
    #[arg(long, default_value_t = 192.0)]
    dmax: f32,
    /// Constant disparity (rds) or d* (repeat), in pixels
    #[arg(long, default_value_t = 8.0)]
    disparity: f32,
    /// Step field: disparity left of the step
    #[arg(long, default_value_t = 4.0)]
    d1: f32,
    /// Step field: disparity from the step on
    #[arg(long, default_value_t = 16.0)]
    d2: f32,
    /// Step column (default: half the width)
    #[arg(long)]
    x0: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    density: f32,
    #[arg(long, default_value_t = 1)]
    dot_size: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f32,
    #[arg(long, default_value_t = 8)]
    period: usize,
    #[arg(long, default_value_t = 56)]
    aperture: usize,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Occlusion mask (nonzero = occluded)
    #[arg(long)]
    occ: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the markdown summary here
    #[arg(long)]
    markdown: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Selftest { seed } => cmd_selftest(seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type CmdResult = Result<ExitCode, Error>;

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_run(a: RunArgs) -> CmdResult {
    let schedule = match &a.schedule {
        Some(s) => s.parse::<CascadeSchedule>()?,
        None => CascadeSchedule::default(),
    };
    let mut cfg = PipelineConfig {
        features: parse_extractor(&a.features)?,
        d_max: a.dmax,
        k: a.peaks,
        updater: UpdaterChoice::parse(&a.updater)?,
        seed: a.seed,
        ..PipelineConfig::default()
    }
    .with_schedule(schedule);
    if let Some(iters) = a.iters {
        cfg.iterations = iters;
    }
    let left = load_image(&a.left)?;
    let right = load_image(&a.right)?;
    let (full, trace) = run(&left, &right, &cfg)?;
    let quarter_out = a.out.to_string_lossy().ends_with(".q.pfm");
    write_pfm(if quarter_out { &trace.quarter } else { &full }, &a.out)?;
    if let Some(viz) = &a.viz {
        write_disparity_png(&full, a.dmax as f32, viz)?;
    }
    if let Some(path) = &a.trace {
        trace.write_jsonl(path)?;
    }
    println!(
        "{}x{} disparity written to {} ({} iterations)",
        full.width(),
        full.height(),
        a.out.display(),
        trace.records.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let rds = |field: FieldSpec| RdsParams {
        width: a.width,
        height: a.height,
        field,
        dot_density: a.density,
        dot_size: a.dot_size,
        noise_sigma: a.noise,
        seed: a.seed,
        d_max: a.dmax,
    };
    let scene = match a.mode {
        SynthMode::Rds => random_dot_stereogram(&rds(FieldSpec::Constant { d: a.disparity }))?,
        SynthMode::Step => random_dot_stereogram(&rds(FieldSpec::Step {
            d1: a.d1,
            d2: a.d2,
            x0: a.x0.unwrap_or(a.width / 2),
        }))?,
        SynthMode::Repeat => {
            if a.disparity.fract() != 0.0 || a.disparity < 0.0 {
                return Err(Error::Parameter(format!(
                    "repeated texture needs a whole-pixel disparity, got {}",
                    a.disparity
                )));
            }
            repeated_texture_pair(&RepeatParams {
                width: a.width,
                height: a.height,
                period: a.period,
                disparity: a.disparity as usize,
                aperture: a.aperture,
                seed: a.seed,
                d_max: a.dmax,
            })?
        }
    };
    write_scene(&scene, &a.out)?;
    println!("scene written to {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let pred = read_pfm(&a.pred)?;
    let gt = read_pfm(&a.gt)?;
    let occ = a.occ.as_ref().map(read_mask).transpose()?;
    let report = evaluate(&pred, &gt, occ.as_deref())?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("EPE     {:.4}", report.epe);
        for (tau, b) in report.bad.iter().enumerate() {
            println!(">{}px    {:.2}%", tau + 1, 100.0 * b);
        }
        println!("D1      {:.2}%", 100.0 * report.d1);
        println!("pixels  {} evaluated of {} valid", report.evaluated, report.valid);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(a: AblateArgs) -> CmdResult {
    let grid = AblationGrid::load(&a.grid)?;
    let scenes = load_scene_set(&a.scenes)?;
    let table = ablation_run(&scenes, &grid)?;
    write_text(&a.out, &table.to_csv())?;
    let md = table.to_markdown();
    if let Some(path) = &a.markdown {
        write_text(path, &md)?;
    }
    print!("{md}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_selftest(seed: u64) -> CmdResult {
    let report = run_selftest(seed);
    for s in &report.suites {
        println!(
            "{} {:<46} {:>4} cases  worst {:.2e}",
            if s.passed() { "PASS" } else { "FAIL" },
            s.name,
            s.cases,
            s.worst
        );
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
