use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use pursuit_core::arena::AgentId;
use pursuit_core::eval::{
    bench_inference, chaser_count_sweep, geometry_heatmap, render_heatmap_png, run_match,
    speed_sweep, stats, write_heatmap_csv, write_sweep_csv, HeatmapConfig, MatchResult, MatchSpec,
    Placement, PolicyRef, DEFAULT_SPEEDS,
};
use pursuit_core::policy::load_policy;
use pursuit_core::scheduler::RunOutput;

use crate::{default_run_id, load_config, runs_root, write_manifest};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Table3,
    SweepSpeed,
    SweepCount,
    Heatmap,
    Bench,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementArg {
    Table3,
    Random,
}

#[derive(Args)]
pub struct EvalArgs {
    /// random | pid | apf | idle | policy:<path>
    #[arg(long)]
    runner: String,
    #[arg(long)]
    chaser: String,
    #[arg(long, value_enum)]
    protocol: Protocol,
    /// Episodes per match, sweep point or heatmap cell.
    #[arg(long, default_value_t = 200)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run configuration supplying the world and rewards; use the one the
    /// policies were trained with.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Outputs go to `<runs root>/<id>/eval/`.
    #[arg(long)]
    run_id: Option<String>,
    /// Spawn rule for table3 and the sweeps.
    #[arg(long, value_enum, default_value = "table3")]
    placement: PlacementArg,
    /// Relative runner speeds for sweep-speed.
    #[arg(long, value_delimiter = ',')]
    speeds: Option<Vec<f64>>,
    /// Chaser counts for sweep-count.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    counts: Vec<usize>,
    /// `N=RUNNER,CHASER` policy pair for N chasers (sweep-count); counts
    /// without a pair use --runner/--chaser.
    #[arg(long = "pair", value_name = "N=RUNNER,CHASER")]
    pairs: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    angles: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    /// Forward passes for bench.
    #[arg(long, default_value_t = 10_000)]
    iterations: usize,
}

fn parse_pair(s: &str) -> Result<(usize, PolicyRef, PolicyRef)> {
    let (n, refs) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("--pair {s}: expected N=RUNNER,CHASER"))?;
    let (r, c) = refs
        .split_once(',')
        .ok_or_else(|| anyhow!("--pair {s}: expected N=RUNNER,CHASER"))?;
    let n = n
        .parse()
        .with_context(|| format!("--pair {s}: bad chaser count"))?;
    Ok((n, r.parse()?, c.parse()?))
}

fn print_match(label: &str, r: &MatchResult) {
    println!(
        "{label}: sr_runner={:.3} sr_chaser={:.3} timeout_rate={:.3} mean_steps={:.1} episodes={}",
        r.sr_runner,
        r.sr_chaser,
        r.timeout_rate,
        r.mean_steps,
        r.outcomes.len()
    );
}

fn write_match_csv(path: &Path, spec: &MatchSpec, r: &MatchResult) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "runner,chaser,episodes,sr_runner,sr_chaser,timeout_rate,mean_steps"
    )?;
    writeln!(
        f,
        "{},{},{},{},{},{},{}",
        spec.runner,
        spec.chaser,
        r.outcomes.len(),
        r.sr_runner,
        r.sr_chaser,
        r.timeout_rate,
        r.mean_steps
    )?;
    Ok(())
}

pub fn run(a: EvalArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let runner: PolicyRef = a.runner.parse()?;
    let chaser: PolicyRef = a.chaser.parse()?;
    if a.episodes == 0 {
        bail!("--episodes must be >= 1");
    }
    let world = &cfg.world;
    // resolve up front so bad references fail before any output is written
    if a.protocol != Protocol::SweepCount {
        runner.resolve(world, AgentId::Runner)?;
        chaser.resolve(world, AgentId::Chaser(0))?;
    }
    let pairs = a
        .pairs
        .iter()
        .map(|p| parse_pair(p))
        .collect::<Result<Vec<_>>>()?;

    let id = a
        .run_id
        .clone()
        .unwrap_or_else(|| default_run_id("eval", a.seed));
    let out = RunOutput::create(runs_root(Some(&cfg)).join(id).join("eval"))?;
    write_manifest(&out, "manifest.json", &cfg)?;
    let dir = out.root().to_path_buf();

    let mut spec = MatchSpec::new(runner.clone(), chaser.clone());
    spec.episodes = a.episodes;
    spec.seed = a.seed;
    spec.n_chasers = world.n_chasers;
    spec.placement = match a.placement {
        PlacementArg::Table3 => Placement::FixedTable3,
        PlacementArg::Random => Placement::Random,
    };

    match a.protocol {
        Protocol::Table3 => {
            let r = run_match(&spec, world, &cfg.rewards)?;
            print_match(&format!("{runner} vs {chaser}"), &r);
            write_match_csv(&dir.join("table3.csv"), &spec, &r)?;
            out.write_json("table3.json", &r)?;
        }
        Protocol::SweepSpeed => {
            let speeds = a.speeds.clone().unwrap_or_else(|| DEFAULT_SPEEDS.to_vec());
            let rows = speed_sweep(&spec, &speeds, world, &cfg.rewards)?;
            for r in &rows {
                println!("relative_speed={}: sr_runner={:.3}", r.x, r.sr_runner);
            }
            if rows.len() >= 3 {
                let xs: Vec<f64> = rows.iter().map(|r| r.x).collect();
                let ys: Vec<f64> = rows.iter().map(|r| r.sr_runner).collect();
                let (rho, p) = stats::spearman_test(&xs, &ys)?;
                println!("spearman rho={rho:.3} p={p:.4}");
            }
            write_sweep_csv(&rows, "relative_speed", &dir.join("sweep_speed.csv"))?;
        }
        Protocol::SweepCount => {
            let mut policies: BTreeMap<usize, (PolicyRef, PolicyRef)> = a
                .counts
                .iter()
                .map(|n| (*n, (runner.clone(), chaser.clone())))
                .collect();
            for (n, r, c) in pairs {
                policies.insert(n, (r, c));
            }
            let rows = chaser_count_sweep(&spec, &a.counts, &policies, world, &cfg.rewards)?;
            for r in &rows {
                println!("n_chasers={}: sr_runner={:.3}", r.x, r.sr_runner);
            }
            write_sweep_csv(&rows, "n_chasers", &dir.join("sweep_count.csv"))?;
        }
        Protocol::Heatmap => {
            let mut hc = HeatmapConfig {
                episodes: a.episodes,
                seed: a.seed,
                ..HeatmapConfig::default()
            };
            if let Some(v) = a.angles.clone() {
                hc.angles_deg = v;
            }
            if let Some(v) = a.radii.clone() {
                hc.radii = v;
            }
            let mut w = world.clone();
            w.n_chasers = 2;
            let r = runner.resolve(&w, AgentId::Runner)?;
            let c = chaser.resolve(&w, AgentId::Chaser(0))?;
            let cells = geometry_heatmap(&w, &cfg.rewards, r.as_ref(), c.as_ref(), &hc)?;
            for cell in &cells {
                match &cell.result {
                    Some(row) => println!(
                        "angle={} radius={}: sr_runner={:.3}",
                        cell.angle_deg, cell.radius, row.sr_runner
                    ),
                    None => println!(
                        "angle={} radius={}: skipped (outside arena)",
                        cell.angle_deg, cell.radius
                    ),
                }
            }
            write_heatmap_csv(&cells, &dir.join("heatmap.csv"))?;
            render_heatmap_png(&cells, &dir.join("heatmap.png"))?;
        }
        Protocol::Bench => {
            let mut results = BTreeMap::new();
            for (side, r) in [("runner", &runner), ("chaser", &chaser)] {
                if let PolicyRef::File(path) = r {
                    let p =
                        load_policy(path).with_context(|| format!("loading {}", path.display()))?;
                    let s = bench_inference(&p, a.iterations, a.seed)?;
                    println!(
                        "{side}: mean={:.4} ms std={:.4} ms over {} calls",
                        s.mean_ms, s.std_ms, s.iterations
                    );
                    results.insert(side, s);
                }
            }
            if results.is_empty() {
                bail!("bench needs at least one policy:<path> reference");
            }
            out.write_json("bench.json", &results)?;
        }
    }
    println!("outputs in {}", dir.display());
    Ok(())
}
