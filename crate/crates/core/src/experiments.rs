//! Packaged comparisons: the three allocation schemes on one source, and the three
//! multi-source frameworks.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::allocator::Scheme;
use crate::engine::{fmt_f, run, EngineError, QueueDiscipline, RunMetrics, RunPlan};
use crate::model::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Framework {
    /// Every packet replicated on every path through plain FIFO queues.
    Traditional,
    /// Fragmented queues, equal split.
    Equal,
    /// Fragmented queues, contention-aware strategic split.
    Strategic,
}

impl Framework {
    pub const ALL: [Framework; 3] = [Framework::Traditional, Framework::Equal, Framework::Strategic];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Framework::Traditional => "traditional",
            Framework::Equal => "equal",
            Framework::Strategic => "strategic",
        }
    }

    /// The run plan for this framework over every scenario source.
    pub fn plan(self, scenario: &Scenario, packets: u64, seed: u64) -> Result<RunPlan, EngineError> {
        let mut plan = match self {
            Framework::Traditional => {
                let mut p = RunPlan::for_scheme(scenario, Scheme::Equal, false)?;
                p.config.queue = QueueDiscipline::Fifo;
                for s in &mut p.sources {
                    s.replicate = true;
                }
                p
            }
            Framework::Equal => RunPlan::for_scheme(scenario, Scheme::Equal, false)?,
            Framework::Strategic => RunPlan::for_scheme(scenario, Scheme::Strategic, true)?,
        };
        plan.seed = seed;
        Ok(plan.with_packets(packets))
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single engine run inside an experiment.
#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    /// 1-based scheme or framework number, used as the x value in plot data.
    pub variant: u8,
    pub packets: u64,
    pub seed: u64,
    pub metrics: RunMetrics,
}

impl Cell {
    pub fn net_delay(&self) -> f64 {
        self.metrics.total_completion_time
    }

    /// Sum of the energy attributed to each source.
    pub fn net_energy(&self) -> f64 {
        self.metrics.sources.iter().map(|s| s.energy).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Schemes,
    Frameworks,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Schemes => "schemes",
            ExperimentKind::Frameworks => "frameworks",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: ExperimentKind,
    pub packets: Vec<u64>,
    /// One repetition per seed.
    pub seeds: Vec<u64>,
    pub jobs: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.packets.is_empty() || self.seeds.is_empty() {
            return Err(EngineError::Plan("an experiment needs packet counts and seeds".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(EngineError::Plan("repetition seeds must be distinct".into()));
        }
        Ok(())
    }

    pub fn run(&self, scenario: &Scenario) -> Result<Report, EngineError> {
        self.validate()?;
        let mut todo = Vec::new();
        for &seed in &self.seeds {
            for &d in &self.packets {
                match self.kind {
                    ExperimentKind::Schemes => {
                        for s in Scheme::ALL {
                            let mut plan = RunPlan::for_scheme(scenario, s, false)?.with_packets(d);
                            plan.seed = seed;
                            todo.push((format!("scheme{}", s.number()), s.number(), d, seed, plan));
                        }
                    }
                    ExperimentKind::Frameworks => {
                        for f in Framework::ALL {
                            todo.push((f.as_str().to_string(), f.number(), d, seed, f.plan(scenario, d, seed)?));
                        }
                    }
                }
            }
        }
        let plans: Vec<RunPlan> = todo.iter().map(|t| t.4.clone()).collect();
        let results = run_parallel(scenario, &plans, self.jobs);
        let mut cells = Vec::with_capacity(todo.len());
        for ((label, variant, packets, seed, _), r) in todo.into_iter().zip(results) {
            cells.push(Cell {
                label,
                variant,
                packets,
                seed,
                metrics: r?,
            });
        }
        Ok(Report {
            name: self.name.clone(),
            kind: self.kind,
            scenario_hash: scenario.hash.clone(),
            cells,
        })
    }
}

/// Runs every plan, at most `jobs` at a time; results come back in input order.
pub fn run_parallel(scenario: &Scenario, plans: &[RunPlan], jobs: usize) -> Vec<Result<RunMetrics, EngineError>> {
    let jobs = jobs.clamp(1, plans.len().max(1));
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<Result<RunMetrics, EngineError>>>> = Mutex::new(vec![None; plans.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= plans.len() {
                    break;
                }
                let r = run(scenario, &plans[i]);
                out.lock().unwrap()[i] = Some(r);
            });
        }
    });
    out.into_inner().unwrap().into_iter().map(|r| r.expect("every plan ran")).collect()
}

/// Schemes 1-3 on each packet count.
pub fn run_scheme_comparison(scenario: &Scenario, packets: &[u64], jobs: usize) -> Result<Report, EngineError> {
    ExperimentSpec {
        name: format!("{}-schemes", scenario.name),
        kind: ExperimentKind::Schemes,
        packets: packets.to_vec(),
        seeds: vec![scenario.seed],
        jobs,
    }
    .run(scenario)
}

/// Traditional, equal and strategic frameworks with `packets` per source.
pub fn run_multisource_frameworks(scenario: &Scenario, packets: &[u64], jobs: usize) -> Result<Report, EngineError> {
    ExperimentSpec {
        name: format!("{}-frameworks", scenario.name),
        kind: ExperimentKind::Frameworks,
        packets: packets.to_vec(),
        seeds: vec![scenario.seed],
        jobs,
    }
    .run(scenario)
}

/// Column order of [`Report::to_csv`].
pub const REPORT_CSV_HEADER: &str = "scenario_hash,seed,experiment,label,packets,source,quotas,injected,delivered,unique_delivered,dropped_overflow,dropped_fault,source_delay_s,source_energy_j,net_delay_s,net_energy_j";

#[derive(Debug, Clone)]
pub struct Report {
    pub name: String,
    pub kind: ExperimentKind,
    pub scenario_hash: String,
    pub cells: Vec<Cell>,
}

fn leq(a: f64, b: f64) -> bool {
    a <= b + 1e-12 * b.abs().max(1.0)
}

impl Report {
    pub fn cell(&self, variant: u8, packets: u64, seed: u64) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.packets == packets && c.seed == seed)
    }

    fn groups(&self) -> Vec<(u64, u64)> {
        let mut g: Vec<(u64, u64)> = self.cells.iter().map(|c| (c.seed, c.packets)).collect();
        g.sort_unstable();
        g.dedup();
        g
    }

    /// The ordering claims each experiment is expected to show.
    pub fn checks(&self) -> Vec<Check> {
        let mut out = Vec::new();
        for (seed, d) in self.groups() {
            let get = |v: u8| self.cell(v, d, seed);
            let (Some(c1), Some(c2), Some(c3)) = (get(1), get(2), get(3)) else {
                continue;
            };
            let tag = format!("D={d} seed={seed}");
            match self.kind {
                ExperimentKind::Schemes => {
                    let t = [c1.net_delay(), c2.net_delay(), c3.net_delay()];
                    let e = [c1.net_energy(), c2.net_energy(), c3.net_energy()];
                    out.push(Check {
                        name: format!("delay S3 <= S2 <= S1 ({tag})"),
                        pass: leq(t[2], t[1]) && leq(t[1], t[0]),
                        detail: format!("{:.6} {:.6} {:.6}", t[0], t[1], t[2]),
                    });
                    out.push(Check {
                        name: format!("energy S1 <= S3 <= S2 ({tag})"),
                        pass: leq(e[0], e[2]) && leq(e[2], e[1]),
                        detail: format!("{:.9} {:.9} {:.9}", e[0], e[1], e[2]),
                    });
                }
                ExperimentKind::Frameworks => {
                    let t = [c1.net_delay(), c2.net_delay(), c3.net_delay()];
                    let e = [c1.net_energy(), c2.net_energy(), c3.net_energy()];
                    out.push(Check {
                        name: format!("net delay strategic <= equal <= traditional ({tag})"),
                        pass: leq(t[2], t[1]) && leq(t[1], t[0]),
                        detail: format!("{:.6} {:.6} {:.6}", t[0], t[1], t[2]),
                    });
                    out.push(Check {
                        name: format!("net energy strategic <= equal <= traditional ({tag})"),
                        pass: leq(e[2], e[1]) && leq(e[1], e[0]),
                        detail: format!("{:.9} {:.9} {:.9}", e[0], e[1], e[2]),
                    });
                }
            }
        }
        out
    }

    /// How many `(source, D)` cells satisfy variant 3 <= variant 2 <= variant 1 for `metric`,
    /// and how many cells there are.
    pub fn per_source_ordering(&self, metric: impl Fn(&crate::engine::SourceMetrics) -> f64) -> (usize, usize) {
        let mut hold = 0;
        let mut total = 0;
        for (seed, d) in self.groups() {
            let (Some(c1), Some(c2), Some(c3)) = (self.cell(1, d, seed), self.cell(2, d, seed), self.cell(3, d, seed)) else {
                continue;
            };
            for s in &c1.metrics.sources {
                let (Some(s2), Some(s3)) = (c2.metrics.source(s.source), c3.metrics.source(s.source)) else {
                    continue;
                };
                let (a, b, c) = (metric(s), metric(s2), metric(s3));
                total += 1;
                hold += usize::from(leq(c, b) && leq(b, a));
            }
        }
        (hold, total)
    }

    /// One row per (cell, source).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            for s in &c.metrics.sources {
                let quotas: Vec<String> = s.paths.iter().map(|p| p.quota.to_string()).collect();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    c.metrics.scenario_hash,
                    c.seed,
                    self.name,
                    c.label,
                    c.packets,
                    s.source,
                    quotas.join("/"),
                    s.injected,
                    s.delivered,
                    s.unique_delivered,
                    s.dropped_overflow,
                    s.dropped_fault,
                    fmt_f(s.completion_time),
                    fmt_f(s.energy),
                    fmt_f(c.net_delay()),
                    fmt_f(c.net_energy()),
                );
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment {}  scenario {}", self.name, self.scenario_hash);
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>6} {:>7} {:<16} {:>9} {:>8} {:>12} {:>12} {:>12} {:>12}",
            "label", "seed", "D", "source", "quotas", "delivered", "dropped", "delay_s", "energy_j", "net_delay_s", "net_energy_j"
        );
        for c in &self.cells {
            for s in &c.metrics.sources {
                let quotas: Vec<String> = s.paths.iter().map(|p| p.quota.to_string()).collect();
                let _ = writeln!(
                    out,
                    "{:<12} {:>6} {:>6} {:>7} {:<16} {:>9} {:>8} {:>12.6} {:>12.9} {:>12.6} {:>12.9}",
                    c.label,
                    c.seed,
                    c.packets,
                    s.source.to_string(),
                    quotas.join("/"),
                    s.unique_delivered,
                    s.dropped_overflow + s.dropped_fault,
                    s.completion_time,
                    s.energy,
                    c.net_delay(),
                    c.net_energy(),
                );
            }
        }
        for ch in self.checks() {
            let _ = writeln!(out, "{} {} [{}]", if ch.pass { "PASS" } else { "FAIL" }, ch.name, ch.detail);
        }
        out
    }

    /// Two-column series keyed by file name: delay and energy against scheme or framework
    /// number, plus per-path quota and delay for every cell.
    pub fn plot_data(&self) -> BTreeMap<String, String> {
        let mut files: BTreeMap<String, String> = BTreeMap::new();
        let axis = match self.kind {
            ExperimentKind::Schemes => "scheme",
            ExperimentKind::Frameworks => "framework",
        };
        for c in &self.cells {
            let suffix = format!("D{}_seed{}", c.packets, c.seed);
            let _ = writeln!(
                files.entry(format!("delay_vs_{axis}_{suffix}.dat")).or_insert_with(|| format!("# {axis} net_delay_s\n")),
                "{} {}",
                c.variant,
                fmt_f(c.net_delay())
            );
            let _ = writeln!(
                files.entry(format!("energy_vs_{axis}_{suffix}.dat")).or_insert_with(|| format!("# {axis} net_energy_j\n")),
                "{} {}",
                c.variant,
                fmt_f(c.net_energy())
            );
            for s in &c.metrics.sources {
                let stem = format!("{}_src{}_{suffix}", c.label, s.source);
                let alloc = files
                    .entry(format!("allocation_{stem}.dat"))
                    .or_insert_with(|| "# path quota\n".into());
                for p in &s.paths {
                    let _ = writeln!(alloc, "{} {}", p.index + 1, p.quota);
                }
                let delay = files
                    .entry(format!("path_delay_{stem}.dat"))
                    .or_insert_with(|| "# path delivery_s\n".into());
                for p in &s.paths {
                    let _ = writeln!(delay, "{} {}", p.index + 1, fmt_f(p.delivery_time));
                }
            }
        }
        files
    }
}
