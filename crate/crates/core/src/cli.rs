//! Subcommand implementations behind the `dred` binary. Each takes a
//! [`RunConfig`] of `key=value` settings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::codec::{QuantizerTable, NUM_LAMBDAS};
use crate::error::{Error, Result};
use crate::features::{gen_synthetic_features, read_features, synthetic_corpus, write_features, FeatureSequence};
use crate::framer::{
    build_stream, default_schedule, read_packets_jsonl, shaped_schedule, write_packets_jsonl, PayloadCodec,
    RateSchedule,
};
use crate::netsim::{simulate, sweep, LossTrace};
use crate::trainer::{
    grad_check, log_spaced, rd_sweep, train_tables, write_log_jsonl, GradCheckConfig, TrainConfig,
};

pub const RD_CSV_HEADER: &str = "lambda_index,bits_per_vector,distortion,nondegenerate";

/// Schedule ids used by the CLI registry.
pub const SCHEDULE_DEFAULT: u8 = 0;
pub const SCHEDULE_SHAPED: u8 = 1;
pub const SCHEDULE_EXPLICIT: u8 = 2;

/// Ordered `key=value` settings. Later insertions override earlier ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig::default()
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("config line {}: expected key=value", i + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::format(format!("config line {}: empty key", i + 1)));
            }
            cfg.set(k, v.trim());
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::invalid(format!("bad value for {key}: {v:?}"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self
            .values
            .get(key)
            .ok_or_else(|| Error::invalid(format!("missing required setting {key}")))?;
        v.parse().map_err(|_| Error::invalid(format!("bad value for {key}: {v:?}")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.require::<String>(key).map(PathBuf::from)
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::invalid(format!("bad list entry in {key}: {s:?}"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn to_text(&self) -> String {
        self.values.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k}={v}");
            s
        })
    }
}

fn write_output(cfg: &RunConfig, text: &str) -> Result<Option<PathBuf>> {
    match cfg.get_str("out") {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
            Ok(Some(PathBuf::from(p)))
        }
        None => {
            print!("{text}");
            Ok(None)
        }
    }
}

/// Corpus from `corpus_dir` (every file, sorted by name) or generated from
/// `corpus_seed`, `corpus_size` and `frames`.
fn load_corpus(cfg: &RunConfig, default_seed: u64, default_size: usize) -> Result<Vec<FeatureSequence>> {
    if let Some(dir) = cfg.get_str("corpus_dir") {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
            .collect::<Result<_>>()?;
        paths.retain(|p| p.is_file());
        paths.sort();
        return paths.iter().map(read_features).collect();
    }
    synthetic_corpus(
        cfg.get("corpus_seed", default_seed)?,
        cfg.get("corpus_size", default_size)?,
        cfg.get("frames", 400usize)?,
    )
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.path("out")?;
    let seq = gen_synthetic_features(cfg.require("seed")?, cfg.get("frames", 400usize)?)?;
    write_features(&out, &seq)?;
    Ok(out)
}

pub fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let lambda_grid = match cfg.list::<f64>("lambda_grid")? {
        Some(g) => g,
        None => log_spaced(
            cfg.get("lambda_min", d.lambda_grid[0])?,
            cfg.get("lambda_max", d.lambda_grid[NUM_LAMBDAS - 1])?,
            NUM_LAMBDAS,
        ),
    };
    let c = TrainConfig {
        lambda_grid,
        soft_hard_mix: cfg.get("mix", d.soft_hard_mix)?,
        steps: cfg.get("steps", d.steps)?,
        learning_rate: cfg.get("learning_rate", d.learning_rate)?,
        batch_size: cfg.get("batch_size", d.batch_size)?,
        sequence_frames: cfg.get("frames", d.sequence_frames)?,
        slices_per_sequence: cfg.get("slices_per_sequence", d.slices_per_sequence)?,
        lengthening_stages: cfg.get("lengthening_stages", d.lengthening_stages)?,
        heldout_fraction: cfg.get("heldout_fraction", d.heldout_fraction)?,
        eval_every: cfg.get("eval_every", d.eval_every)?,
        seed: cfg.get("seed", d.seed)?,
        transform_seed: cfg.get("transform_seed", d.transform_seed)?,
        stride: cfg.get("stride", d.stride)?,
    };
    c.validate()?;
    Ok(c)
}

/// Trains a table, writes it to `out` and the evaluation log to `log`
/// (default: `out` with a `.jsonl` extension).
pub fn cmd_train(cfg: &RunConfig) -> Result<crate::trainer::TrainOutcome> {
    let out = cfg.path("out")?;
    let config = train_config(cfg)?;
    let corpus = load_corpus(cfg, 11, 110)?;
    let outcome = train_tables(&config, &corpus)?;
    outcome.table.save(&out)?;
    let log = cfg.get_str("log").map(PathBuf::from).unwrap_or_else(|| out.with_extension("jsonl"));
    write_log_jsonl(&log, &outcome.log)?;
    Ok(outcome)
}

pub fn rd_csv(points: &[crate::trainer::RDPoint]) -> String {
    let mut s = format!("{RD_CSV_HEADER}\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{}",
            p.lambda_index, p.mean_rate_bits, p.mean_distortion, p.nondegenerate_dims
        );
    }
    s
}

/// Evaluates every λ index of `table` on a probe corpus; CSV to `out` or
/// stdout.
pub fn cmd_rd_sweep(cfg: &RunConfig) -> Result<String> {
    let table = QuantizerTable::load(cfg.path("table")?)?;
    let corpus = load_corpus(cfg, 99, 10)?;
    let points = rd_sweep(&table, &corpus)?;
    let csv = rd_csv(&points);
    write_output(cfg, &csv)?;
    Ok(csv)
}

/// Registers the schedule selected by `schedule` (`default`, `shaped`, or a
/// comma list of λ indices) and returns its id.
pub fn register_schedule(cfg: &RunConfig, codec: &mut PayloadCodec) -> Result<u8> {
    let duration: f64 = cfg.get("duration_s", 1.04)?;
    let kind = cfg.get_str("schedule").unwrap_or("default").to_string();
    let (id, schedule) = match kind.as_str() {
        "default" => (SCHEDULE_DEFAULT, default_schedule(duration)?),
        "shaped" => {
            let k = default_schedule(duration)?.duration_latents();
            let probe = synthetic_corpus(cfg.get("probe_seed", 99u64)?, cfg.get("probe_size", 10usize)?, 400)?;
            let rates: Vec<f64> = rd_sweep(codec.table(), &probe)?
                .iter()
                .map(|p| p.mean_rate_bits)
                .collect();
            let s = shaped_schedule(&rates, k, cfg.get("newest_bits", 50.0)?, cfg.get("oldest_bits", 6.0)?)?;
            (SCHEDULE_SHAPED, s)
        }
        _ => {
            let ages = cfg.list::<u8>("schedule")?.unwrap_or_default();
            (SCHEDULE_EXPLICIT, RateSchedule::new(ages)?)
        }
    };
    codec.register(id, schedule);
    Ok(id)
}

fn codec_from(cfg: &RunConfig) -> Result<(PayloadCodec, u8)> {
    let mut codec = PayloadCodec::new(QuantizerTable::load(cfg.path("table")?)?)?;
    let id = register_schedule(cfg, &mut codec)?;
    Ok((codec, id))
}

fn stream_features(cfg: &RunConfig) -> Result<FeatureSequence> {
    match cfg.get_str("features") {
        Some(p) => read_features(p),
        None => gen_synthetic_features(cfg.get("seed", 1u64)?, cfg.get("frames", 500usize)?),
    }
}

/// Encodes a feature file (or a synthetic sequence) into packets with
/// redundancy; JSON lines to `out`.
pub fn cmd_build_stream(cfg: &RunConfig) -> Result<usize> {
    let out = cfg.path("out")?;
    let (codec, id) = codec_from(cfg)?;
    let features = stream_features(cfg)?;
    let packets = build_stream(&features, &codec, id, cfg.get("primary_size", 40usize)?)?;
    write_packets_jsonl(&out, &packets)?;
    Ok(packets.len())
}

/// Runs the receiver over a stream. With `trace` set, one report; otherwise
/// a sweep over `loss_rates` with Gilbert traces. JSON to `out` or stdout.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<String> {
    let (codec, _) = codec_from(cfg)?;
    let stream = read_packets_jsonl(cfg.path("stream")?)?;
    let reference = match cfg.get_str("features") {
        Some(p) => Some(read_features(p)?),
        None => None,
    };
    let json = if let Some(trace_path) = cfg.get_str("trace") {
        let trace = LossTrace::read(trace_path)?;
        let report = simulate(&stream, &trace, &codec, reference.as_ref())?;
        serde_json::to_string_pretty(&report).expect("report serializes")
    } else {
        let rates = cfg.list::<f64>("loss_rates")?.unwrap_or_else(|| vec![0.0]);
        let points = sweep(
            &stream,
            &codec,
            &rates,
            cfg.get("mean_burst", 5.0)?,
            cfg.get("seed", 1u64)?,
            reference.as_ref(),
        )?;
        serde_json::to_string_pretty(&points).expect("sweep serializes")
    };
    let text = json + "\n";
    write_output(cfg, &text)?;
    Ok(text)
}

pub fn cmd_grad_check(cfg: &RunConfig) -> Result<crate::trainer::GradCheckReport> {
    let d = GradCheckConfig::default();
    let report = grad_check(&GradCheckConfig {
        seed: cfg.get("seed", d.seed)?,
        points: cfg.get("points", d.points)?,
        transform_seed: cfg.get("transform_seed", d.transform_seed)?,
    })?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_output(cfg, &text)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let cfg = RunConfig::parse("# comment\nseed = 5\n\nout=/tmp/x # trailing\nrates=0.1, 0.2\n").unwrap();
        assert_eq!(cfg.require::<u64>("seed").unwrap(), 5);
        assert_eq!(cfg.get_str("out"), Some("/tmp/x"));
        assert_eq!(cfg.list::<f64>("rates").unwrap(), Some(vec![0.1, 0.2]));
        assert_eq!(cfg.get("missing", 3usize).unwrap(), 3);
        assert!(matches!(cfg.require::<u64>("missing"), Err(Error::InvalidArgument(_))));
        assert!(matches!(cfg.get::<u64>("out", 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(RunConfig::parse("novalue\n"), Err(Error::Format(_))));
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn synth_writes_expected_size() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new();
        cfg.set("seed", "3");
        cfg.set("frames", "400");
        cfg.set("out", dir.path().join("a.feat").to_string_lossy());
        let p = cmd_synth(&cfg).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 8 + 2 + 4 + 400 * 20 * 4);
        cfg.set("frames", "0");
        assert!(cmd_synth(&cfg).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let pts: Vec<_> = (0..NUM_LAMBDAS)
            .map(|l| crate::trainer::RDPoint {
                lambda_index: l,
                mean_rate_bits: 50.0 - l as f64,
                mean_distortion: 0.1 * l as f64,
                nondegenerate_dims: 20,
                mean_is_bits: 10.0,
            })
            .collect();
        let csv = rd_csv(&pts);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], RD_CSV_HEADER);
        assert_eq!(lines.len(), 17);
        assert_eq!(lines[1], "0,50.000000,0.000000,20");
    }

    #[test]
    fn train_config_overrides() {
        let cfg = RunConfig::parse("steps=10\nlambda_min=0.01\nlambda_max=1\nstride=4\n").unwrap();
        let t = train_config(&cfg).unwrap();
        assert_eq!(t.steps, 10);
        assert!((t.lambda_grid[0] - 0.01).abs() < 1e-12);
        assert!((t.lambda_grid[15] - 1.0).abs() < 1e-9);
        assert_eq!(t.stride, 4);
        let bad = RunConfig::parse("lambda_min=1\nlambda_max=0.5\n").unwrap();
        assert!(train_config(&bad).is_err());
    }
}
