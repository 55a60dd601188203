use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use pursuit_core::config::{RunConfig, TrainMode};
use pursuit_core::scheduler::{
    continue_ams, load_resume_state, run_ams_drl, run_cold_start, run_direct, Driver, PhaseReport,
    RunOutput, RunStatus,
};

use crate::{default_run_id, load_config, mode_name, runs_root, write_manifest};

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ams,
    Direct,
    ColdStart,
}

impl From<Mode> for TrainMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Ams => TrainMode::Ams,
            Mode::Direct => TrainMode::Direct,
            Mode::ColdStart => TrainMode::ColdStart,
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON run configuration; defaults apply to missing fields. Optional
    /// with --resume, where the run's manifest supplies it.
    config: Option<PathBuf>,
    /// Overrides the config's `mode`.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Continue an AMS run (directory, or id under the runs root) after its
    /// last completed phase.
    #[arg(long, value_name = "RUN")]
    resume: Option<String>,
    /// Output directory name under the runs root.
    #[arg(long)]
    run_id: Option<String>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn manifest_config(dir: &std::path::Path) -> Result<RunConfig> {
    let path = dir.join("manifest.json");
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let cfg = v.get("config").context("manifest has no config")?;
    Ok(RunConfig::from_json(&cfg.to_string())?)
}

fn print_report(r: &PhaseReport) {
    eprintln!(
        "phase {} ({:?}): episodes {} converged {} sr_runner {:.3} sr_chaser {:.3} equilibrium {} [{:.0} s]",
        r.phase, r.trained_side, r.episodes, r.converged, r.sr_runner, r.sr_chaser, r.equilibrium, r.wall_seconds
    );
}

/// Exit code: 0 when training converged, 2 otherwise.
pub fn run(a: TrainArgs) -> Result<u8> {
    let resume_dir = a.resume.as_ref().map(|r| {
        let p = PathBuf::from(r);
        if p.is_dir() {
            p
        } else {
            runs_root(None).join(r)
        }
    });
    let mut cfg = match (&a.config, &resume_dir) {
        (Some(p), _) => load_config(Some(p))?,
        (None, Some(dir)) => manifest_config(dir)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(m) = a.mode {
        cfg.mode = m.into();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if resume_dir.is_some() && cfg.mode != TrainMode::Ams {
        bail!("--resume only applies to --mode ams");
    }

    let root = match &resume_dir {
        Some(dir) => {
            if !dir.join("report.json").is_file() {
                bail!("{}: no report.json to resume from", dir.display());
            }
            dir.clone()
        }
        None => runs_root(Some(&cfg)).join(
            a.run_id
                .clone()
                .unwrap_or_else(|| default_run_id(mode_name(cfg.mode), cfg.seed)),
        ),
    };
    let out = RunOutput::create(&root)?;
    write_manifest(&out, "manifest.json", &cfg)?;
    eprintln!("run directory: {}", root.display());

    let mut d = Driver::new(&cfg, Some(&out))?.on_stage(print_report);
    let (converged, reports) = match cfg.mode {
        TrainMode::Ams => {
            let o = match &resume_dir {
                Some(_) => continue_ams(&mut d, load_resume_state(&out)?)?,
                None => run_ams_drl(&mut d)?,
            };
            (o.converged, o.reports)
        }
        TrainMode::ColdStart => {
            let (_, r) = run_cold_start(&mut d)?;
            (r.converged, vec![r])
        }
        TrainMode::Direct => {
            let (_, _, r) = run_direct(&mut d)?;
            (r.equilibrium, vec![r])
        }
    };
    out.write_reports(&reports)?;
    let code: u8 = if converged { 0 } else { 2 };
    let last = reports.last().map_or(0, |r| r.phase);
    out.write_json(
        "status.json",
        &RunStatus {
            mode: cfg.mode,
            converged,
            phases: reports.len(),
            exit_code: code.into(),
        },
    )?;
    match (cfg.mode, converged) {
        (_, true) => println!(
            "converged after phase {last}; outputs in {}",
            root.display()
        ),
        (TrainMode::Ams, false) => println!(
            "no equilibrium within k_max = {} phases; outputs in {}",
            cfg.plan.k_max,
            root.display()
        ),
        (_, false) => println!("training did not converge; outputs in {}", root.display()),
    }
    Ok(code)
}
