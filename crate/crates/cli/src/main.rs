//! Command-line harness: streaming rollouts from scene scripts, the oracle
//! verification suite, layout comparison tables, and cache dumps.
//!
//! Exit codes: 0 success, 1 verification or runtime budget failure,
//! 2 config/script/usage error.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use scenekv::config::Fuse;
use scenekv::{
    Engine, EngineConfig, Error, PoolFile, ResolvedScene, Result, SceneMemoryPool, SceneScript,
    LAYOUT_NAMES,
};

#[derive(Parser)]
#[command(
    name = "scenekv",
    version,
    about = "Scene-memory KV cache rollouts over a toy block-causal generator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scene script and emit one JSONL trace record per block.
    Run(RunArgs),
    /// Run the oracle verification suite and report each check.
    Verify(VerifyArgs),
    /// Replay one script under several cache layouts and emit a CSV table.
    CompareLayouts(CompareArgs),
    /// Roll out to a chosen block and dump the cache state as JSON.
    DumpCache(DumpArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scene script (JSON).
    #[arg(long)]
    script: PathBuf,
    /// Engine config (TOML); built-in defaults when omitted.
    #[arg(long, env = "SCENEKV_CONFIG")]
    config: Option<PathBuf>,
    /// Override the rollout seed (dynamics and seeded embeddings).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the cache layout by name.
    #[arg(long)]
    layout: Option<String>,
    /// Override the total block count: extends the last scene or truncates.
    #[arg(long)]
    blocks: Option<u64>,
    /// Trace destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the final scene memory pool to this sidecar file.
    #[arg(long)]
    pool_out: Option<PathBuf>,
    /// Preload a scene memory pool written by an earlier run.
    #[arg(long)]
    pool_in: Option<PathBuf>,
    /// Record per-block wall time in the trace (breaks byte determinism).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, env = "SCENEKV_CONFIG")]
    config: Option<PathBuf>,
    /// Override the compression fuse rule (mean or max).
    #[arg(long)]
    fuse: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    script: PathBuf,
    #[arg(long, env = "SCENEKV_CONFIG")]
    config: Option<PathBuf>,
    /// Comma-separated layout names; all known layouts when omitted.
    #[arg(long)]
    layouts: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    script: PathBuf,
    #[arg(long, env = "SCENEKV_CONFIG")]
    config: Option<PathBuf>,
    /// Block index to stop after (0-based).
    #[arg(long)]
    block: u64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args),
        Command::CompareLayouts(args) => cmd_compare(args),
        Command::DumpCache(args) => cmd_dump(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_class(&e))
        }
    }
}

/// Input problems exit 2; runtime invariant violations exit 1.
fn exit_class(err: &Error) -> u8 {
    match err {
        Error::Script(_)
        | Error::Config(_)
        | Error::TagParse { .. }
        | Error::Json(_)
        | Error::Io(_) => 2,
        _ => 1,
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::load(p),
        None => {
            let cfg = EngineConfig::default();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

/// Builds config and resolved scenes with the shared override precedence:
/// CLI flag, then script-level field, then config file.
fn prepare(
    script_path: &PathBuf,
    config_path: &Option<PathBuf>,
    seed: Option<u64>,
    layout: Option<&String>,
) -> Result<(EngineConfig, Vec<ResolvedScene>)> {
    let mut cfg = load_config(config_path)?;
    let mut script = SceneScript::load(script_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
        script.seed = Some(s);
    }
    if let Some(name) = layout {
        cfg.layout.name = name.clone();
    } else if let Some(name) = &script.layout {
        cfg.layout.name = name.clone();
    }
    cfg.validate()?;
    let scenes = script.resolve(&cfg)?;
    Ok((cfg, scenes))
}

fn adjust_blocks(scenes: &mut Vec<ResolvedScene>, total: u64) -> Result<()> {
    if total == 0 {
        return Err(Error::Script("--blocks must be positive".into()));
    }
    let sum: u64 = scenes.iter().map(|s| s.blocks).sum();
    if total >= sum {
        scenes.last_mut().expect("scripts are nonempty").blocks += total - sum;
        return Ok(());
    }
    let mut excess = sum - total;
    while excess > 0 {
        let last = scenes.last_mut().expect("cannot trim to zero scenes");
        if last.blocks > excess {
            last.blocks -= excess;
            break;
        }
        excess -= last.blocks;
        scenes.pop();
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let (cfg, mut scenes) = prepare(&args.script, &args.config, args.seed, args.layout.as_ref())?;
    if let Some(total) = args.blocks {
        adjust_blocks(&mut scenes, total)?;
    }
    let mut engine = Engine::new(cfg, scenes)?;
    if let Some(p) = &args.pool_in {
        let file: PoolFile = serde_json::from_str(&fs::read_to_string(p)?)?;
        engine.preload_pool(SceneMemoryPool::from_file(file)?);
    }
    let mut sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(std::io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    while !engine.finished() {
        let started = args.timing.then(Instant::now);
        let mut rec = engine.step()?;
        if let Some(t) = started {
            rec.timing_us = Some(t.elapsed().as_micros() as u64);
        }
        serde_json::to_writer(&mut sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    if let Some(p) = &args.pool_out {
        fs::write(p, serde_json::to_string_pretty(&engine.scene_pool().to_file())?)?;
    }
    match engine.recall_fidelity() {
        Some(f) => eprintln!(
            "blocks {}  pool scenes {}  recall fidelity {f:.4}",
            engine.total_blocks(),
            engine.scene_pool().len()
        ),
        None => eprintln!(
            "blocks {}  pool scenes {}",
            engine.total_blocks(),
            engine.scene_pool().len()
        ),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&args.config)?;
    if let Some(f) = &args.fuse {
        cfg.compression.fuse = match f.as_str() {
            "mean" => Fuse::Mean,
            "max" => Fuse::Max,
            other => return Err(Error::Config(format!("unknown fuse rule {other:?}"))),
        };
    }
    let reports = scenekv::verify::run_all(&cfg);
    let mut failed = 0;
    for r in &reports {
        if r.pass {
            println!("check {:<18} PASS  cases={:<6} max_err={:.3e}", r.name, r.cases, r.max_err);
        } else {
            failed += 1;
            println!(
                "check {:<18} FAIL  cases={:<6} max_err={:.3e}  {}",
                r.name, r.cases, r.max_err, r.detail
            );
        }
    }
    println!("{} checks, {failed} failed", reports.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode> {
    let names: Vec<String> = match &args.layouts {
        Some(s) => s.split(',').map(|x| x.trim().to_string()).collect(),
        None => LAYOUT_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let mut csv = String::from(
        "layout,n_anchor,n_compressed,n_recent,blocks,max_frame_equiv,mean_frame_equiv,\
         mass_anchor,mass_compressed,mass_recent,mass_old,old_mass_r0,old_mass_r7,\
         old_mass_ratio,recall_fidelity\n",
    );
    for name in &names {
        let (cfg, scenes) =
            prepare(&args.script, &args.config, args.seed, Some(name))?;
        let layout = cfg.layout_resolved();
        let mut engine = Engine::new(cfg, scenes)?;
        let mut records = Vec::new();
        engine.run(|r| records.push(r.clone()))?;
        let n = records.len() as f64;
        let max_fe = records.iter().map(|r| r.cache.total_fe).max().unwrap_or(0);
        let mean_fe: f64 = records.iter().map(|r| r.cache.total_fe as f64).sum::<f64>() / n;
        let mean = |f: &dyn Fn(&scenekv::TraceRecord) -> f64| -> f64 {
            records.iter().map(|r| f(r)).sum::<f64>() / n
        };
        let m_anchor = mean(&|r| r.mass.anchor);
        let m_comp = mean(&|r| r.mass.compressed);
        let m_recent = mean(&|r| r.mass.recent);
        let m_old = mean(&|r| r.mass.old);
        // Old-scene mass trajectory from the first transition onward.
        let (r0, r7) = match records.iter().find(|r| r.block > 0 && r.routing.is_some()) {
            Some(t) => {
                let r0 = t.mass.old;
                let r7 = records
                    .iter()
                    .find(|r| r.block == t.block + 7)
                    .map(|r| r.mass.old)
                    .unwrap_or(0.0);
                (r0, r7)
            }
            None => (0.0, 0.0),
        };
        let ratio = if r0 > 0.0 { r7 / r0 } else { 0.0 };
        let fidelity = engine
            .recall_fidelity()
            .map(|f| format!("{f:.6}"))
            .unwrap_or_default();
        csv.push_str(&format!(
            "{name},{},{},{},{},{max_fe},{mean_fe:.3},{m_anchor:.6},{m_comp:.6},\
             {m_recent:.6},{m_old:.6},{r0:.6},{r7:.6},{ratio:.6},{fidelity}\n",
            layout.n_anchor,
            layout.n_compressed,
            layout.n_recent,
            records.len(),
        ));
    }
    match &args.out {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_dump(args: DumpArgs) -> Result<ExitCode> {
    let (cfg, scenes) = prepare(&args.script, &args.config, args.seed, args.layout.as_ref())?;
    let mut engine = Engine::new(cfg, scenes)?;
    if args.block >= engine.total_blocks() {
        return Err(Error::Script(format!(
            "block {} out of range: script spans {} blocks",
            args.block,
            engine.total_blocks()
        )));
    }
    let mut snapshot = None;
    while !engine.finished() {
        let rec = engine.step()?;
        if rec.block == args.block {
            snapshot = Some(engine.snapshot());
            break;
        }
    }
    let snapshot = snapshot.expect("block index checked against total");
    let json = serde_json::to_string_pretty(&snapshot)?;
    match &args.out {
        Some(p) => fs::write(p, json)?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}
