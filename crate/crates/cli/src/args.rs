use std::net::SocketAddrV4;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use netsense_core::format::Compression;
use netsense_core::ingest::{Distribution, SourceKind, TrafficSourceConfig};
use netsense_core::pipeline::{PipelineConfig, Retention, Strategy, TransportKind};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StrategyArg {
    Batch,
    Incremental,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TransportArg {
    /// File-based message passing under --msg-root.
    Mp,
    /// Shared spool directory under --spool-root.
    Sfs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RetentionArg {
    Keep,
    Delete,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SourceArg {
    Synthetic,
    Replay,
    Http,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DistributionArg {
    Uniform,
    Zipf,
}

fn name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

/// Size presets. `cluster` is n_v=2^17, n_a=2^23, n_g=2^25; `desk` is
/// n_v=2^12, n_a=2^14, n_g=2^16. Both use four locals per global.
#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProfileArg {
    Cluster,
    Desk,
}

/// Aggregation sizes, strategy and on-disk layout shared by every role.
#[derive(Args, Clone, Debug)]
pub struct PipelineArgs {
    /// Size preset; --nv and --nb override it.
    #[arg(long, value_enum, env = "NETSENSE_PROFILE", default_value = "cluster")]
    pub profile: ProfileArg,
    /// Pairs per base matrix.
    #[arg(long = "nv", env = "NETSENSE_NV")]
    pub n_v: Option<u64>,
    /// Base matrices per local aggregate.
    #[arg(long = "nb", env = "NETSENSE_NB")]
    pub n_b: Option<u64>,
    /// Pairs per local aggregate; must equal nv * nb when given.
    #[arg(long = "na", env = "NETSENSE_NA")]
    pub n_a: Option<u64>,
    /// Local aggregates per global aggregate.
    #[arg(long = "ng-over-na", env = "NETSENSE_NG_OVER_NA", default_value_t = 4)]
    pub ng_over_na: u64,
    /// Pairs per global aggregate; must be a multiple of na when given.
    #[arg(long = "ng", env = "NETSENSE_NG")]
    pub n_g: Option<u64>,
    #[arg(long, value_enum, env = "NETSENSE_STRATEGY", default_value = "batch")]
    pub strategy: StrategyArg,
    #[arg(long, value_enum, env = "NETSENSE_TRANSPORT", default_value = "mp")]
    pub transport: TransportArg,
    #[arg(long, env = "NETSENSE_MSG_ROOT", default_value = "netsense-msg")]
    pub msg_root: PathBuf,
    #[arg(long, env = "NETSENSE_SPOOL_ROOT", default_value = "netsense-spool")]
    pub spool_root: PathBuf,
    /// Keep or delete base matrices once aggregated.
    #[arg(long, value_enum, env = "NETSENSE_RETENTION", default_value = "keep")]
    pub retention: RetentionArg,
    /// zlib-compress matrices written to the spool.
    #[arg(long)]
    pub compress: bool,
}

impl PipelineArgs {
    pub fn to_config(&self, rank: u32) -> PipelineConfig {
        let (n_v, n_b) = match self.profile {
            ProfileArg::Cluster => (1 << 17, 64),
            ProfileArg::Desk => (1 << 12, 4),
        };
        let n_v = self.n_v.unwrap_or(n_v);
        let n_b = self.n_b.unwrap_or(n_b);
        let mut c = PipelineConfig::new(n_v, n_b, self.ng_over_na, &self.spool_root);
        if let Some(n_a) = self.n_a {
            c.n_a = n_a;
            c.n_g = n_a.saturating_mul(self.ng_over_na);
        }
        if let Some(n_g) = self.n_g {
            c.n_g = n_g;
        }
        c.strategy = match self.strategy {
            StrategyArg::Batch => Strategy::Batch,
            StrategyArg::Incremental => Strategy::Incremental,
        };
        c.transport = match self.transport {
            TransportArg::Mp => TransportKind::MessagePassing,
            TransportArg::Sfs => TransportKind::SharedFs,
        };
        c.retention = match self.retention {
            RetentionArg::Keep => Retention::Keep,
            RetentionArg::Delete => Retention::Delete,
        };
        if self.compress {
            c.compression = Compression::Zlib;
        }
        c.rank = rank;
        c
    }

    /// Validated config; an inconsistent size combination is a usage error.
    pub fn checked(&self, rank: u32) -> PipelineConfig {
        let c = self.to_config(rank);
        if let Err(e) = c.validate() {
            crate::usage_error(e);
        }
        c
    }

    /// Flags that reproduce these settings on a child process.
    pub fn to_cli(&self) -> Vec<String> {
        let mut v = vec![
            "--profile".into(),
            name(self.profile),
            "--ng-over-na".into(),
            self.ng_over_na.to_string(),
            "--strategy".into(),
            name(self.strategy),
            "--transport".into(),
            name(self.transport),
            "--msg-root".into(),
            self.msg_root.display().to_string(),
            "--spool-root".into(),
            self.spool_root.display().to_string(),
            "--retention".into(),
            name(self.retention),
        ];
        if let Some(n_v) = self.n_v {
            v.extend(["--nv".into(), n_v.to_string()]);
        }
        if let Some(n_b) = self.n_b {
            v.extend(["--nb".into(), n_b.to_string()]);
        }
        if let Some(n_a) = self.n_a {
            v.extend(["--na".into(), n_a.to_string()]);
        }
        if let Some(n_g) = self.n_g {
            v.extend(["--ng".into(), n_g.to_string()]);
        }
        if self.compress {
            v.push("--compress".into());
        }
        v
    }
}

/// Where pairs come from and how fast.
#[derive(Args, Clone, Debug)]
pub struct SourceArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    pub source: SourceArg,
    #[arg(long, env = "NETSENSE_SEED", default_value_t = 1)]
    pub seed: u64,
    /// Pairs per second per worker; 0 runs unthrottled.
    #[arg(long, env = "NETSENSE_RATE", default_value_t = 1e4)]
    pub rate: f64,
    #[arg(long, value_enum, default_value = "uniform")]
    pub distribution: DistributionArg,
    #[arg(long, default_value_t = 1.1)]
    pub zipf_exponent: f64,
    /// Number of distinct addresses for the Zipf distribution.
    #[arg(long, default_value_t = 1 << 20)]
    pub universe: u64,
    /// Pair file for --source replay (`.csv` or binary).
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Listen address for --source http.
    #[arg(long)]
    pub bind: Option<SocketAddrV4>,
    /// Stop after this many pairs.
    #[arg(long)]
    pub total: Option<u64>,
}

impl SourceArgs {
    pub fn to_config(&self) -> TrafficSourceConfig {
        TrafficSourceConfig {
            kind: match self.source {
                SourceArg::Synthetic => SourceKind::Synthetic,
                SourceArg::Replay => SourceKind::Replay,
                SourceArg::Http => SourceKind::HttpTap,
            },
            seed: self.seed,
            rate: self.rate,
            distribution: match self.distribution {
                DistributionArg::Uniform => Distribution::Uniform32,
                DistributionArg::Zipf => Distribution::Zipf {
                    exponent: self.zipf_exponent,
                    universe: self.universe,
                },
            },
            path: self.path.clone(),
            bind: self.bind,
            total: self.total,
        }
    }

    /// Flags for a child worker; the seed is passed separately per rank.
    pub fn to_cli(&self) -> Vec<String> {
        let mut v = vec![
            "--source".into(),
            name(self.source),
            "--rate".into(),
            self.rate.to_string(),
            "--distribution".into(),
            name(self.distribution),
            "--zipf-exponent".into(),
            self.zipf_exponent.to_string(),
            "--universe".into(),
            self.universe.to_string(),
        ];
        if let Some(p) = &self.path {
            v.extend(["--path".into(), p.display().to_string()]);
        }
        if let Some(b) = self.bind {
            v.extend(["--bind".into(), b.to_string()]);
        }
        if let Some(t) = self.total {
            v.extend(["--total".into(), t.to_string()]);
        }
        v
    }
}

#[derive(Args, Debug)]
pub struct WorkerArgs {
    /// Worker rank, 1 or higher.
    #[arg(long, env = "NETSENSE_RANK", default_value_t = 1)]
    pub rank: u32,
    /// Stop ingesting after this many seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Args, Debug)]
pub struct CoordinatorArgs {
    /// Exit after this many workers have shut down; 0 waits for a signal or timeout.
    #[arg(long, default_value_t = 1)]
    pub workers: u32,
    /// Exit after this many seconds without an inbox event.
    #[arg(long)]
    pub idle_timeout: Option<f64>,
    /// Stop after this many seconds regardless of worker state.
    #[arg(long)]
    pub duration: Option<f64>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Matrix file to analyze.
    pub file: PathBuf,
    /// Aggregation level; inferred from a `<rank>/<level>/<seq>.dbtm` path when omitted.
    #[arg(long)]
    pub level: Option<String>,
    #[arg(long)]
    pub rank: Option<u32>,
    #[arg(long)]
    pub seq: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Worker counts to run, one cluster per entry.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub workers: Vec<u32>,
    /// Seconds each worker ingests; omit to rely on --total.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Seconds between CPU/RSS samples.
    #[arg(long, default_value_t = 0.5)]
    pub sample_interval: f64,
    /// Directory receiving per-run spools and the CSV/JSON reports.
    #[arg(long, default_value = "netsense-bench")]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output file; a `.csv` extension selects the text format.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1_000_000)]
    pub count: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "uniform")]
    pub distribution: DistributionArg,
    #[arg(long, default_value_t = 1.1)]
    pub zipf_exponent: f64,
    #[arg(long, default_value_t = 1 << 20)]
    pub universe: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[derive(Parser)]
    struct Harness {
        #[command(flatten)]
        p: PipelineArgs,
    }

    fn parse(args: &[&str]) -> PipelineConfig {
        let mut argv = vec!["t"];
        argv.extend(args);
        Harness::parse_from(argv).p.to_config(1)
    }

    #[test]
    fn default_sizes() {
        let c = parse(&[]);
        assert_eq!((c.n_v, c.n_a, c.n_g), (131_072, 8_388_608, 33_554_432));
        let d = parse(&["--profile", "desk"]);
        assert_eq!((d.n_v, d.n_a, d.n_g), (4096, 16_384, 65_536));
        let o = parse(&["--profile", "desk", "--nv", "16"]);
        assert_eq!((o.n_v, o.n_a), (16, 64));
    }

    #[test]
    fn child_flags_round_trip() {
        let mut argv = vec!["t"];
        let given = ["--profile", "desk", "--nb", "8", "--strategy", "incremental", "--transport", "sfs", "--compress"];
        argv.extend(given);
        let p = Harness::parse_from(argv).p;
        let flags = p.to_cli();
        let again = Harness::parse_from(std::iter::once("t".to_string()).chain(flags)).p;
        let (a, b) = (p.to_config(3), again.to_config(3));
        assert_eq!((a.n_v, a.n_b, a.n_a, a.n_g), (b.n_v, b.n_b, b.n_a, b.n_g));
        assert_eq!((a.strategy, a.transport, a.compression), (b.strategy, b.transport, b.compression));
        assert_eq!(b.n_b, 8);
    }
}
