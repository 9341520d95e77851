use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use maddr::allocator::{scheme_allocation, AllocationInput, PathParams, Scheme};
use maddr::engine::{fmt_f, source_paths, EngineError, RunPlan, Simulation};
use maddr::experiments::{ExperimentKind, ExperimentSpec, Report};
use maddr::model::{generate_uniform, ModelError};
use maddr::{presets, Scenario};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "maddr", version, about = "Multi-source multipath routing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List each source's disjoint paths.
    Discover(Common),
    /// Print per-path quotas for a scheme.
    Allocate(AllocateArgs),
    /// Simulate one scheme to quiescence.
    Run(RunArgs),
    /// Run a packaged comparison.
    Experiment(ExperimentArgs),
    /// Write a scenario with uniformly placed nodes.
    GenTopology(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Text,
    JsonLines,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario TOML file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    /// Output directory; results go to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct AllocateArgs {
    #[command(flatten)]
    common: Common,
    /// 1 (min-hop), 2 (equal) or 3 (strategic).
    #[arg(long, default_value = "3")]
    scheme: Scheme,
    /// Packets per source; the scenario value when absent.
    #[arg(long)]
    packets: Option<u64>,
    /// Simulate first and use the contention counts the choke probes saw.
    #[arg(long)]
    choke: bool,
    /// Only this source.
    #[arg(long)]
    source: Option<u32>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// 1 (min-hop), 2 (equal) or 3 (strategic).
    #[arg(long, default_value = "3")]
    scheme: Scheme,
    #[arg(long)]
    packets: Option<u64>,
    /// Probe paths with choke packets and discount busy ones.
    #[arg(long)]
    choke: bool,
    /// Keep the event trace (written to trace.log, or stderr without --out).
    #[arg(long)]
    trace: bool,
    /// Also write plot-data series.
    #[arg(long)]
    plot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Schemes,
    Frameworks,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "frameworks")]
    suite: Suite,
    /// Packets per source, one cell per value.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    packets: Vec<u64>,
    /// Runs per cell, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    repetitions: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    plot: bool,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Number of nodes, including the sink.
    #[arg(long)]
    count: u32,
    #[arg(long, default_value_t = 501.0)]
    width: f64,
    #[arg(long, default_value_t = 501.0)]
    height: f64,
    /// Radio range.
    #[arg(long, default_value_t = 2.4)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    packets: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Scenario(anyhow::Error),
    Simulation(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Scenario(_) => 2,
            Failure::Simulation(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Scenario(e) | Failure::Simulation(e) => e,
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Model(m) => Failure::Scenario(m.into()),
            e @ EngineError::Discovery(_) => Failure::Scenario(e.into()),
            e => Failure::Simulation(e.into()),
        }
    }
}

fn scenario_err(e: ModelError) -> Failure {
    Failure::Scenario(e.into())
}

fn io_err(e: std::io::Error, what: &Path) -> Failure {
    Failure::Usage(anyhow!("{}: {e}", what.display()))
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    let path = Path::new(&common.scenario);
    let mut s = if path.exists() {
        Scenario::load(path).map_err(scenario_err)?
    } else if let Ok(s) = presets::by_name(&common.scenario) {
        s
    } else {
        return Err(Failure::Scenario(anyhow!("scenario {} not found", path.display())));
    };
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    Ok(s)
}

/// Writes `name` under `out`, or prints it when there is no output directory.
fn emit(out: Option<&Path>, name: &str, body: &str) -> Result<(), Failure> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| io_err(e, dir))?;
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| io_err(e, &p))
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn cmd_discover(c: &Common) -> Result<(), Failure> {
    let s = load(c)?;
    let mut body = String::new();
    if c.format == Format::Csv {
        body.push_str("source,path,hops,nodes,tau_s,d_hop_m\n");
    }
    for src in &s.sources {
        let paths = source_paths(&s, src.id)?;
        if c.format == Format::Text {
            let p = &s.params;
            let _ = writeln!(
                body,
                "source {}: {} paths  K_r={} e_t={} e_d={} e_r={} T1b={} T2b={} k={}",
                src.id,
                paths.len(),
                p.k_r,
                p.e_t,
                p.e_d,
                p.e_r,
                p.t_1b,
                p.t_2b,
                p.k
            );
        }
        for (i, p) in paths.iter().enumerate() {
            let nodes: Vec<String> = p.nodes.iter().map(|n| n.to_string()).collect();
            match c.format {
                Format::Text => {
                    let _ = writeln!(body, "  P{}{} H={:<3} tau={:.6} s  {}", src.id, i + 1, p.hops, p.tau, nodes.join("-"));
                }
                Format::Csv => {
                    let _ = writeln!(body, "{},{},{},{},{},{}", src.id, i, p.hops, nodes.join("-"), fmt_f(p.tau), fmt_f(p.d_hop));
                }
                Format::JsonLines => {
                    let v = json!({"source": src.id.0, "path": i, "hops": p.hops, "nodes": p.nodes.iter().map(|n| n.0).collect::<Vec<_>>(), "tau_s": p.tau, "d_hop_m": p.d_hop});
                    let _ = writeln!(body, "{v}");
                }
            }
        }
    }
    emit(c.out.as_deref(), &format!("paths.{}", ext(c.format)), &body)
}

fn ext(f: Format) -> &'static str {
    match f {
        Format::Csv => "csv",
        Format::Text => "txt",
        Format::JsonLines => "jsonl",
    }
}

fn cmd_allocate(a: &AllocateArgs) -> Result<(), Failure> {
    let s = load(&a.common)?;
    let mut plan = RunPlan::for_scheme(&s, a.scheme, a.choke)?;
    if let Some(d) = a.packets {
        plan = plan.with_packets(d);
    }
    plan.seed = s.seed;
    // contention as the probes saw it during a full run
    let probed = if a.choke {
        Some(Simulation::new(&s, &plan)?.run()?)
    } else {
        None
    };
    let mut body = String::new();
    if a.common.format == Format::Csv {
        body.push_str("source,path,hops,contention,quota,raw_bound,within_bound\n");
    }
    for sp in &plan.sources {
        if a.source.is_some_and(|id| id != sp.source.0) {
            continue;
        }
        let contention: Vec<u32> = (0..sp.paths.len())
            .map(|i| {
                probed
                    .as_ref()
                    .and_then(|m| m.source(sp.source))
                    .and_then(|m| m.paths[i].contention.last())
                    .map(|c| c.1)
                    .unwrap_or(0)
            })
            .collect();
        let input = AllocationInput {
            params: s.params,
            packets: sp.packets,
            paths: sp
                .paths
                .iter()
                .zip(&contention)
                .map(|(p, &c)| PathParams {
                    hops: p.hops,
                    tau: p.tau,
                    contention: c,
                })
                .collect(),
            t_dist: s.t_dist(sp.source),
        };
        let alloc = scheme_allocation(a.scheme, &input).map_err(|e| Failure::Simulation(e.into()))?;
        if a.common.format == Format::Text {
            let _ = writeln!(body, "source {} scheme {} D={} budget={:.9}", sp.source, a.scheme, sp.packets, alloc.budget);
        }
        for (i, q) in alloc.quotas.iter().enumerate() {
            let raw = alloc.raw_quotas.get(i).copied();
            let ok = !alloc.exceeds_bound[i];
            match a.common.format {
                Format::Text => {
                    let raw = raw.map(|r| format!("{r:.3}")).unwrap_or_else(|| "-".into());
                    let _ = writeln!(
                        body,
                        "  P{}{} H={:<3} C={:<3} quota {:>6}  bound {:>10}  {}",
                        sp.source,
                        i + 1,
                        sp.paths[i].hops,
                        contention[i],
                        q,
                        raw,
                        if ok { "ok" } else { "exceeds" }
                    );
                }
                Format::Csv => {
                    let raw = raw.map(fmt_f).unwrap_or_default();
                    let _ = writeln!(body, "{},{},{},{},{},{},{}", sp.source, i, sp.paths[i].hops, contention[i], q, raw, ok);
                }
                Format::JsonLines => {
                    let v = json!({"source": sp.source.0, "path": i, "hops": sp.paths[i].hops, "contention": contention[i], "quota": q, "raw_bound": raw, "within_bound": ok});
                    let _ = writeln!(body, "{v}");
                }
            }
        }
    }
    emit(a.common.out.as_deref(), &format!("allocation.{}", ext(a.common.format)), &body)
}

fn cmd_run(r: &RunArgs) -> Result<(), Failure> {
    let s = load(&r.common)?;
    let mut plan = RunPlan::for_scheme(&s, r.scheme, r.choke)?;
    if let Some(d) = r.packets {
        plan = plan.with_packets(d);
    }
    plan.seed = s.seed;
    plan.config.trace = r.trace;
    let m = Simulation::new(&s, &plan)?.run()?;
    let label = format!("scheme{}", r.scheme.number());
    let out = r.common.out.as_deref();
    let body = match r.common.format {
        Format::Csv => m.to_csv(&label),
        Format::Text => m.summary(),
        Format::JsonLines => {
            let v = serde_json::to_string(&m).map_err(|e| Failure::Simulation(e.into()))?;
            format!("{v}\n")
        }
    };
    if out.is_some() {
        emit(out, "metrics.csv", &m.to_csv(&label))?;
        emit(out, "summary.txt", &m.summary())?;
        if r.common.format == Format::JsonLines {
            emit(out, "metrics.jsonl", &body)?;
        }
    } else {
        print!("{body}");
    }
    if r.trace {
        let mut t = m.trace.join("\n");
        t.push('\n');
        match out {
            Some(_) => emit(out, "trace.log", &t)?,
            None => eprint!("{t}"),
        }
    }
    if r.plot {
        let mut files = std::collections::BTreeMap::new();
        for src in &m.sources {
            let mut alloc = String::from("# path quota\n");
            let mut delay = String::from("# path delivery_s\n");
            for p in &src.paths {
                let _ = writeln!(alloc, "{} {}", p.index + 1, p.quota);
                let _ = writeln!(delay, "{} {}", p.index + 1, fmt_f(p.delivery_time));
            }
            files.insert(format!("allocation_src{}.dat", src.source), alloc);
            files.insert(format!("path_delay_src{}.dat", src.source), delay);
        }
        write_plots(out, &files)?;
    }
    Ok(())
}

fn write_plots(out: Option<&Path>, files: &std::collections::BTreeMap<String, String>) -> Result<(), Failure> {
    let Some(dir) = out else {
        return Err(Failure::Usage(anyhow!("--plot needs --out")));
    };
    let plots = dir.join("plots");
    for (name, body) in files {
        emit(Some(&plots), name, body)?;
    }
    Ok(())
}

fn report_body(rep: &Report, f: Format) -> String {
    match f {
        Format::Csv => rep.to_csv(),
        Format::Text => rep.to_text(),
        Format::JsonLines => {
            let mut s = String::new();
            for c in &rep.cells {
                for src in &c.metrics.sources {
                    let v = json!({
                        "scenario_hash": c.metrics.scenario_hash,
                        "seed": c.seed,
                        "experiment": rep.name,
                        "label": c.label,
                        "packets": c.packets,
                        "source": src.source.0,
                        "quotas": src.paths.iter().map(|p| p.quota).collect::<Vec<_>>(),
                        "delivered": src.unique_delivered,
                        "dropped_overflow": src.dropped_overflow,
                        "dropped_fault": src.dropped_fault,
                        "source_delay_s": src.completion_time,
                        "source_energy_j": src.energy,
                        "net_delay_s": c.net_delay(),
                        "net_energy_j": c.net_energy(),
                    });
                    let _ = writeln!(s, "{v}");
                }
            }
            for ch in rep.checks() {
                let _ = writeln!(s, "{}", json!({"check": ch.name, "pass": ch.pass, "detail": ch.detail}));
            }
            s
        }
    }
}

fn cmd_experiment(e: &ExperimentArgs) -> Result<(), Failure> {
    let s = load(&e.common)?;
    if e.repetitions == 0 || e.jobs == 0 {
        return Err(Failure::Usage(anyhow!("--repetitions and --jobs must be positive")));
    }
    let kind = match e.suite {
        Suite::Schemes => ExperimentKind::Schemes,
        Suite::Frameworks => ExperimentKind::Frameworks,
    };
    let spec = ExperimentSpec {
        name: format!("{}-{}", s.name, kind.as_str()),
        kind,
        packets: e.packets.clone(),
        seeds: (0..e.repetitions).map(|i| s.seed.wrapping_add(i)).collect(),
        jobs: e.jobs,
    };
    let rep = spec.run(&s)?;
    let out = e.common.out.as_deref();
    let body = report_body(&rep, e.common.format);
    if out.is_some() {
        emit(out, "report.csv", &rep.to_csv())?;
        emit(out, "report.txt", &rep.to_text())?;
        if e.common.format == Format::JsonLines {
            emit(out, "report.jsonl", &body)?;
        }
    } else {
        print!("{body}");
    }
    if e.plot {
        write_plots(out, &rep.plot_data())?;
    }
    Ok(())
}

fn cmd_gen(g: &GenArgs) -> Result<(), Failure> {
    let file = generate_uniform(g.count, g.width, g.height, g.radius, g.seed, g.packets).map_err(scenario_err)?;
    let text = file.to_toml();
    match Scenario::from_file(file) {
        Ok(_) => {}
        Err(ModelError::Disconnected { from, sink }) => {
            eprintln!("warning: sink {sink} is unreachable from source {from}");
        }
        Err(e) => return Err(scenario_err(e)),
    }
    match &g.out {
        Some(p) => fs::write(p, text).map_err(|e| io_err(e, p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Discover(c) => cmd_discover(c),
        Command::Allocate(a) => cmd_allocate(a),
        Command::Run(r) => cmd_run(r),
        Command::Experiment(e) => cmd_experiment(e),
        Command::GenTopology(g) => cmd_gen(g),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
