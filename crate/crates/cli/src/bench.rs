//! Multi-process benchmark: one coordinator plus N workers per requested worker count.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use netsense_core::coordinator::{coordinator_rps, CoordinatorSummary};
use netsense_core::pipeline::{PipelineConfig, WorkerReport};
use serde::Serialize;

use crate::args::BenchArgs;
use crate::sampler::{ResourceStats, Sampler, Target};
use crate::signals;

pub const BENCH_HEADER: &str = "workers,strategy,transport,n_v,n_a,n_g,rate,duration_s,injected,globals,\
global_pairs,pending_pairs,unfinished_pairs,coordinator_rps,steady_rps,conserved";
pub const STAGES_HEADER: &str = "workers,stage,samples,median_rps";

/// Extra time the coordinator gets to drain after the last worker exits.
const DRAIN_GRACE: Duration = Duration::from_secs(120);

#[derive(Debug, Serialize)]
pub struct ProcessResources {
    pub role: String,
    pub rank: u32,
    #[serde(flatten)]
    pub stats: ResourceStats,
}

#[derive(Debug, Serialize)]
pub struct StageMedian {
    pub stage: &'static str,
    pub samples: usize,
    pub median_rps: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct BenchRun {
    pub workers: u32,
    pub strategy: String,
    pub transport: String,
    pub n_v: u64,
    pub n_a: u64,
    pub n_g: u64,
    pub rate: f64,
    pub duration_s: f64,
    pub injected: u64,
    pub globals: u64,
    pub global_pairs: u64,
    pub pending_pairs: u64,
    pub unfinished_pairs: u64,
    /// `globals * n_g / duration_s`.
    pub coordinator_rps: f64,
    /// Global throughput between the first and last global, skipping the warmup window.
    pub steady_rps: Option<f64>,
    pub conserved: bool,
    pub poison: u64,
    pub rejected: u64,
    pub stall_secs: f64,
    pub stages: Vec<StageMedian>,
    pub resources: Vec<ProcessResources>,
    pub run_dir: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub runs: Vec<BenchRun>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

impl BenchRun {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3},{},{},{},{},{},{:.3},{},{}",
            self.workers,
            self.strategy,
            self.transport,
            self.n_v,
            self.n_a,
            self.n_g,
            self.rate,
            self.duration_s,
            self.injected,
            self.globals,
            self.global_pairs,
            self.pending_pairs,
            self.unfinished_pairs,
            self.coordinator_rps,
            self.steady_rps.map(|r| format!("{r:.3}")).unwrap_or_default(),
            self.conserved
        )
    }
}

/// Appends `row` to a CSV, writing `header` first when the file is new.
fn append_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    for r in rows {
        writeln!(f, "{r}")?;
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn spawn(exe: &Path, args: &[String], log: &Path) -> Result<Child> {
    let out = File::create(log.with_extension("out"))?;
    let err = File::create(log)?;
    Command::new(exe)
        .args(args)
        .stdin(Stdio::null())
        .stdout(out)
        .stderr(err)
        .spawn()
        .with_context(|| format!("spawning {}", exe.display()))
}

fn wait_until(child: &mut Child, deadline: Instant) -> Result<bool> {
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(status.success());
        }
        if Instant::now() >= deadline {
            signals::terminate(child.id());
            return Ok(child.wait()?.success());
        }
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn run_one(a: &BenchArgs, workers: u32, exe: &Path) -> Result<BenchRun> {
    let run_dir = a.out.join(format!("w{workers}"));
    if run_dir.exists() {
        fs::remove_dir_all(&run_dir).with_context(|| format!("clearing {}", run_dir.display()))?;
    }
    fs::create_dir_all(&run_dir)?;
    let mut pipeline = a.pipeline.clone();
    pipeline.spool_root = run_dir.join("spool");
    pipeline.msg_root = run_dir.join("msg");
    let cfg: PipelineConfig = pipeline.checked(1);

    let mut coord_args = vec!["coordinator".to_string(), "--workers".into(), workers.to_string()];
    coord_args.extend(pipeline.to_cli());
    let mut coord = spawn(exe, &coord_args, &run_dir.join("coordinator.log"))?;
    let mut targets = vec![Target {
        role: "coordinator",
        rank: 0,
        pid: coord.id(),
    }];

    let mut children = Vec::new();
    for rank in 1..=workers {
        let mut args = vec![
            "worker".to_string(),
            "--rank".into(),
            rank.to_string(),
            "--seed".into(),
            (a.source.seed + rank as u64 - 1).to_string(),
        ];
        if let Some(d) = a.duration {
            args.extend(["--duration".into(), d.to_string()]);
        }
        args.extend(pipeline.to_cli());
        args.extend(a.source.to_cli());
        let child = spawn(exe, &args, &run_dir.join(format!("worker-{rank}.log")))?;
        targets.push(Target {
            role: "worker",
            rank,
            pid: child.id(),
        });
        children.push(child);
    }
    let interval = Duration::from_secs_f64(a.sample_interval.max(0.01));
    let sampler = Sampler::start(&run_dir.join("resources.csv"), targets, interval)?;

    let mut workers_ok = true;
    for (i, c) in children.iter_mut().enumerate() {
        let ok = c.wait()?.success();
        if !ok {
            log::error!("worker {} failed; see {}", i + 1, run_dir.display());
        }
        workers_ok &= ok;
    }
    let grace = if workers_ok { DRAIN_GRACE } else { Duration::ZERO };
    let coord_ok = wait_until(&mut coord, Instant::now() + grace)?;
    let resources = sampler.finish();
    if !workers_ok {
        bail!("a worker exited with an error; logs are in {}", run_dir.display());
    }
    if !coord_ok {
        log::warn!("coordinator did not exit cleanly; logs are in {}", run_dir.display());
    }

    let coord_sum: CoordinatorSummary = read_json(&cfg.spool_dir.join("0/summary.json"))?;
    let reports = (1..=workers)
        .map(|r| read_json::<WorkerReport>(&cfg.spool_dir.join(format!("{r}/summary.json"))))
        .collect::<Result<Vec<_>>>()?;

    let injected: u64 = reports.iter().map(|r| r.injected).sum();
    let unfinished: u64 = reports.iter().map(|r| r.unfinished_pairs()).sum();
    let duration_s = a.duration.unwrap_or(coord_sum.elapsed_secs);
    let gather = |f: fn(&WorkerReport) -> &Vec<f64>| reports.iter().flat_map(|r| f(r).iter().copied()).collect::<Vec<_>>();
    let stage = |name, v: Vec<f64>| StageMedian {
        stage: name,
        samples: v.len(),
        median_rps: median(&v),
    };
    let stages = vec![
        stage("base_construction", gather(|r| &r.construction_rps)),
        stage("local_aggregation", gather(|r| &r.aggregation_rps)),
        stage("local_analytics", gather(|r| &r.analytics_rps)),
        stage("global_aggregation", coord_sum.aggregation_rps.clone()),
        stage("global_analytics", coord_sum.analytics_rps.clone()),
    ];

    Ok(BenchRun {
        workers,
        strategy: format!("{:?}", cfg.strategy).to_lowercase(),
        transport: match cfg.transport {
            netsense_core::pipeline::TransportKind::MessagePassing => "mp".into(),
            netsense_core::pipeline::TransportKind::SharedFs => "sfs".into(),
        },
        n_v: cfg.n_v,
        n_a: cfg.n_a,
        n_g: cfg.n_g,
        rate: a.source.rate,
        duration_s,
        injected,
        globals: coord_sum.globals,
        global_pairs: coord_sum.global_pairs,
        pending_pairs: coord_sum.pending_pairs,
        unfinished_pairs: unfinished,
        coordinator_rps: coordinator_rps(coord_sum.globals, cfg.n_g, duration_s),
        steady_rps: coord_sum.steady_rps(cfg.n_g),
        conserved: coord_ok
            && coord_sum.poison == 0
            && coord_sum.rejected == 0
            && injected == coord_sum.global_pairs + coord_sum.pending_pairs + unfinished,
        poison: coord_sum.poison,
        rejected: coord_sum.rejected,
        stall_secs: reports.iter().map(|r| r.stall_secs).sum(),
        stages,
        resources: resources
            .into_iter()
            .map(|(role, rank, stats)| ProcessResources { role, rank, stats })
            .collect(),
        run_dir,
    })
}

pub fn run(a: BenchArgs) -> Result<()> {
    if a.workers.is_empty() || a.workers.contains(&0) {
        crate::usage_error("--workers needs one or more counts >= 1");
    }
    if a.duration.is_none() && a.source.total.is_none() {
        crate::usage_error("bench needs --duration or --total so workers finish");
    }
    a.pipeline.checked(1);
    fs::create_dir_all(&a.out)?;
    let exe = std::env::current_exe().context("locating netsense executable")?;
    let mut report = BenchReport { runs: Vec::new() };
    for &n in &a.workers {
        log::info!("bench: {n} worker(s)");
        let run = run_one(&a, n, &exe)?;
        println!(
            "workers={} injected={} globals={} coordinator_rps={:.1} steady_rps={} conserved={}",
            run.workers,
            run.injected,
            run.globals,
            run.coordinator_rps,
            run.steady_rps.map(|r| format!("{r:.1}")).unwrap_or_else(|| "n/a".into()),
            run.conserved
        );
        append_csv(&a.out.join("bench.csv"), BENCH_HEADER, &[run.csv_row()])?;
        let rows: Vec<String> = run
            .stages
            .iter()
            .map(|s| {
                format!(
                    "{},{},{},{}",
                    run.workers,
                    s.stage,
                    s.samples,
                    s.median_rps.map(|r| format!("{r:.1}")).unwrap_or_default()
                )
            })
            .collect();
        append_csv(&a.out.join("stages.csv"), STAGES_HEADER, &rows)?;
        report.runs.push(run);
        fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    let broken: Vec<u32> = report.runs.iter().filter(|r| !r.conserved).map(|r| r.workers).collect();
    if !broken.is_empty() {
        bail!("pair conservation failed for worker counts {broken:?}");
    }
    Ok(())
}
