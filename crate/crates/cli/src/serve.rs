use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use pursuit_core::arena::AgentId;
use pursuit_core::controller::Controller;
use pursuit_core::eval::{Placement, PolicyRef};
use pursuit_core::scheduler::RunOutput;
use pursuit_server::{Session, SessionSpec};

use crate::{default_run_id, load_config, runs_root, write_manifest};

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// manual | random | apf | idle | policy:<path>
    #[arg(long, default_value = "manual")]
    runner: String,
    #[arg(long, default_value = "pid")]
    chaser: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Spawn every episode near the fixed evaluation positions instead of
    /// uniformly.
    #[arg(long)]
    table3: bool,
    /// The session ledger is written to `<runs root>/<id>/session.json`.
    #[arg(long)]
    run_id: Option<String>,
}

pub fn run(a: ServeArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let runner: PolicyRef = a.runner.parse()?;
    let chaser: PolicyRef = a.chaser.parse()?;
    let runner: Option<Arc<dyn Controller>> = match runner {
        PolicyRef::Manual => None,
        r => Some(Arc::from(r.resolve(&cfg.world, AgentId::Runner)?)),
    };
    let chaser: Arc<dyn Controller> = Arc::from(chaser.resolve(&cfg.world, AgentId::Chaser(0))?);
    let mut spec = SessionSpec::new(cfg.world.clone(), runner, chaser);
    spec.rewards = cfg.rewards;
    spec.seed = a.seed;
    if a.table3 {
        spec.placement = Placement::FixedTable3;
    }
    let id = a
        .run_id
        .clone()
        .unwrap_or_else(|| default_run_id("serve", a.seed));
    let session = Session::new(id.clone(), spec)?;

    let rt = tokio::runtime::Runtime::new()?;
    let summary = rt.block_on(async {
        let addr = format!("{}:{}", a.host, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("cannot listen on {addr}"))?;
        let handle = pursuit_server::start(listener, session).await?;
        println!("serving on http://{} (websocket at /ws)", handle.addr);
        tokio::signal::ctrl_c().await?;
        eprintln!("shutting down");
        anyhow::Ok(handle.shutdown().await?)
    })?;

    let out = RunOutput::create(runs_root(Some(&cfg)).join(&id))?;
    write_manifest(&out, "manifest.json", &cfg)?;
    let path = out.write_json("session.json", &summary)?;
    println!(
        "episodes={} sr_runner={:.3} excluded={}; ledger written to {}",
        summary.episodes,
        summary.sr_runner,
        summary.ledger.excluded,
        path.display()
    );
    Ok(())
}
