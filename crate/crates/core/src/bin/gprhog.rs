use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gprhog::eval::write_roc_csv;
use gprhog::experiment::{
    ablation_arms, ablation_verdicts, evaluate, report_table, summary_text, verdict_lines, ArmResult,
    ExperimentConfig,
};
use gprhog::pipeline::{write_scored_csv, CvScheme, Lane};
use gprhog::preprocess::preprocess;
use gprhog::synth::generate_lanes;
use gprhog::volume::{load_volume, read_truths, write_truths, write_volume};

#[derive(Parser)]
#[command(name = "gprhog", version, about = "GPR buried-threat discrimination experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic lanes (volumes + truth CSVs).
    Synth(Common),
    /// Run every configured arm under LBCV and OBCV.
    Run(Common),
    /// Run the canonical ablation arms and check the expected orderings.
    Ablate(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides the synth, fold and forest seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        if let Some(j) = self.jobs {
            if j == 0 {
                bail!("--jobs must be at least 1");
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build_global()
                .context("configuring worker pool")?;
        }
        Ok(cfg)
    }
}

/// Writes through a sibling temp file and renames, so a failed run never
/// leaves a truncated output behind.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn volume_path(dir: &Path, lane: usize) -> PathBuf {
    dir.join(format!("lane_{lane:02}.gprv"))
}

fn truth_path(dir: &Path, lane: usize) -> PathBuf {
    dir.join(format!("lane_{lane:02}_truth.csv"))
}

fn cmd_synth(cfg: &ExperimentConfig) -> Result<()> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let lanes = generate_lanes(&cfg.synth).context("stage synth")?;
    for (i, (volume, truths)) in lanes.iter().enumerate() {
        write_atomic(&volume_path(dir, i), |mut w| Ok(write_volume(volume, &mut w)?))?;
        write_atomic(&truth_path(dir, i), |w| Ok(write_truths(truths, w)?))?;
    }
    eprintln!("wrote {} lanes to {}", lanes.len(), dir.display());
    Ok(())
}

fn load_lanes(cfg: &ExperimentConfig) -> Result<Vec<Lane>> {
    let dir = cfg.data_dir();
    if !dir.is_dir() {
        bail!("stage load: data directory {} does not exist (run `gprhog synth` first)", dir.display());
    }
    let mut lanes = Vec::new();
    for i in 0.. {
        let vp = volume_path(dir, i);
        if !vp.exists() {
            break;
        }
        let volume = load_volume(&vp).with_context(|| format!("stage load: {}", vp.display()))?;
        let tp = truth_path(dir, i);
        let file = std::fs::File::open(&tp).with_context(|| format!("stage load: {}", tp.display()))?;
        let truths = read_truths(file).with_context(|| format!("stage load: {}", tp.display()))?;
        let volume = preprocess(&volume, &cfg.preproc).with_context(|| format!("stage preprocess: lane {i}"))?;
        lanes.push(Lane {
            lane_id: i as u32,
            volume,
            truths,
        });
    }
    if lanes.is_empty() {
        bail!("stage load: no lane_XX.gprv files in {}", dir.display());
    }
    Ok(lanes)
}

fn write_results(cfg: &ExperimentConfig, results: &[ArmResult]) -> Result<()> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for r in results {
        let stem = format!("{}_{}", r.arm, r.scheme.name());
        write_atomic(&dir.join(format!("roc_{stem}.csv")), |w| Ok(write_roc_csv(&r.curve, w)?))?;
        write_atomic(&dir.join(format!("scores_{stem}.csv")), |w| {
            Ok(write_scored_csv(&r.alarms, &r.folds, w)?)
        })?;
    }
    write_atomic(&dir.join("report.txt"), |w| Ok(w.write_all(report_table(results).as_bytes())?))?;
    write_atomic(&dir.join("summary.txt"), |w| {
        Ok(w.write_all(summary_text(results, cfg.far_window).as_bytes())?)
    })?;
    Ok(())
}

fn run_arms(cfg: &ExperimentConfig, arms: &[gprhog::experiment::Arm]) -> Result<Vec<ArmResult>> {
    let lanes = load_lanes(cfg)?;
    evaluate(
        &lanes,
        arms,
        &CvScheme::ALL,
        &cfg.forest,
        &cfg.pipeline,
        &cfg.msek,
        cfg.far_window,
    )
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<()> {
    let results = run_arms(cfg, &cfg.arms)?;
    write_results(cfg, &results)?;
    print!("{}", report_table(&results));
    Ok(())
}

fn cmd_ablate(cfg: &ExperimentConfig) -> Result<bool> {
    let results = run_arms(cfg, &ablation_arms())?;
    let verdicts = ablation_verdicts(&results)?;
    let text = verdict_lines(&verdicts);
    write_results(cfg, &results)?;
    write_atomic(&cfg.output_dir.join("ablation.txt"), |w| {
        Ok(w.write_all(format!("{}\n{}", report_table(&results), text).as_bytes())?)
    })?;
    print!("{}\n{}", report_table(&results), text);
    Ok(verdicts.iter().all(|v| v.pass || !v.required))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth(c) => c.resolve().and_then(|cfg| cmd_synth(&cfg)).map(|_| true),
        Command::Run(c) => c.resolve().and_then(|cfg| cmd_run(&cfg)).map(|_| true),
        Command::Ablate(c) => c.resolve().and_then(|cfg| cmd_ablate(&cfg)),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("ablation: expected orderings did not all hold");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
