//! Experiment harness: FP-rate comparison against the baseline, threshold
//! sweeps, index-table statistics, histograms and a throughput bench.
//!
//! Every run is driven by an [`EvalSpec`], which serializes to JSON and fully
//! determines the output.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use cbid_core::baseline::digest_baseline;
use cbid_core::digest::type1_into;
use cbid_core::index::table_stats;
use cbid_core::metrics::excerpt_fp;
use cbid_core::partition::Partitioner;
use cbid_core::query::{investigate_with, ExcerptQuery, QueryError, QueryOptions};
use cbid_core::{
    digest_stream, dr_overall, extract_unique_excerpts, synth_generate, ArchiveSegment, BaselineConfig,
    BaselineDigest, ConfigError, DigestConfig, DigestError, ExcerptSet, FlowKey, PacketRecord, SynthConfig,
    TableCodec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::read_capture;
use crate::codec::codec_by_name;
use crate::corpus::read_corpus;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Digest(#[from] DigestError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("unknown codec {0:?}")]
    Codec(String),
    #[error("seed {seed}: no unique excerpts of {len} bytes in the corpus")]
    NoExcerpts { seed: u64, len: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CorpusSpec {
    /// Generated; the run seed replaces `config.seed`.
    Synth { config: SynthConfig },
    Cbtr { path: PathBuf },
    Pcap { path: PathBuf },
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec::Synth { config: SynthConfig { byte_budget: Some(100_000_000), flow_count: 1 << 20, ..Default::default() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSpec {
    pub corpus: CorpusSpec,
    pub digest: DigestConfig,
    pub codec: String,
    pub seeds: Vec<u64>,
    pub excerpt_len: usize,
    pub excerpt_count: usize,
    /// One interval covering the whole corpus, sized from its byte count.
    pub single_interval: bool,
    pub thresholds: Vec<usize>,
    pub sections: Vec<usize>,
    pub symbol_sizes: Vec<usize>,
    pub bootstrap: usize,
    pub bench_repeats: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            digest: DigestConfig::default(),
            codec: "lzma".into(),
            seeds: vec![1, 2, 3],
            excerpt_len: 200,
            excerpt_count: 100,
            single_interval: true,
            thresholds: vec![0, 10, 20, 30, 40, 50, 60],
            sections: vec![1024, 2048, 4096],
            symbol_sizes: vec![1, 2, 4],
            bootstrap: 2000,
            bench_repeats: 3,
        }
    }
}

impl EvalSpec {
    pub fn codec(&self) -> Result<Arc<dyn TableCodec>, EvalError> {
        codec_by_name(&self.codec).ok_or_else(|| EvalError::Codec(self.codec.clone()))
    }

    /// The digest configuration used on a corpus of `raw_bytes`.
    pub fn digest_for(&self, raw_bytes: u64) -> DigestConfig {
        let mut cfg = self.digest;
        if self.single_interval {
            cfg.interval_raw_budget = raw_bytes.max(1);
            cfg.rotation_fp = 0.999;
        }
        cfg
    }
}

/// One seed's corpus and excerpts.
pub struct Workload {
    pub seed: u64,
    pub packets: Vec<PacketRecord>,
    pub raw_bytes: u64,
    pub distinct_flows: usize,
    pub excerpts: ExcerptSet,
}

pub fn load_corpus(spec: &CorpusSpec, seed: u64) -> Result<Vec<PacketRecord>, EvalError> {
    match spec {
        CorpusSpec::Synth { config } => Ok(synth_generate(SynthConfig { seed, ..*config })?.collect()),
        CorpusSpec::Cbtr { path } => read_corpus(path)
            .and_then(|r| r.collect::<Result<Vec<_>, _>>())
            .map_err(|e| EvalError::Corpus(e.to_string())),
        CorpusSpec::Pcap { path } => read_capture(path)
            .and_then(|r| r.collect::<Result<Vec<_>, _>>())
            .map_err(|e| EvalError::Corpus(e.to_string())),
    }
}

impl Workload {
    pub fn from_packets(packets: Vec<PacketRecord>, seed: u64, excerpt_len: usize, excerpt_count: usize) -> Self {
        let raw_bytes = packets.iter().map(|p| p.payload.len() as u64).sum();
        let distinct_flows = packets.iter().map(|p| p.flow).collect::<HashSet<_>>().len();
        let excerpts = extract_unique_excerpts(&packets, excerpt_len, excerpt_count, seed);
        Self { seed, packets, raw_bytes, distinct_flows, excerpts }
    }

    pub fn prepare(spec: &EvalSpec, seed: u64) -> Result<Self, EvalError> {
        let w = Self::from_packets(load_corpus(&spec.corpus, seed)?, seed, spec.excerpt_len, spec.excerpt_count);
        if spec.excerpt_count > 0 && w.excerpts.excerpts.is_empty() {
            return Err(EvalError::NoExcerpts { seed, len: spec.excerpt_len });
        }
        Ok(w)
    }

    pub fn digest(&self, cfg: DigestConfig, codec: Arc<dyn TableCodec>) -> Result<Vec<ArchiveSegment>, EvalError> {
        if self.packets.is_empty() {
            return Ok(Vec::new());
        }
        Ok(digest_stream(&self.packets, cfg, codec)?)
    }
}

/// What one excerpt query produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub reported: usize,
    pub fp: f64,
    pub candidates: u64,
    pub assumed_positive: bool,
}

fn check_carrier(reported: &[FlowKey], carrier: &FlowKey, flows: usize, what: &str) -> Result<f64, EvalError> {
    excerpt_fp(reported, carrier, flows)
        .map_err(|e| EvalError::Invariant(format!("{what}: {e} (carrier {carrier:?})")))
}

/// Queries every excerpt; aborts if any true carrier goes unreported.
pub fn cbid_outcomes(w: &Workload, segs: &[ArchiveSegment], opts: QueryOptions) -> Result<Vec<Outcome>, EvalError> {
    w.excerpts
        .excerpts
        .par_iter()
        .map(|e| {
            let r = investigate_with(&ExcerptQuery::new(&e.bytes), segs, opts)?;
            let reported = r.flows();
            let fp = check_carrier(&reported, &e.flow, w.distinct_flows, "cbid")?;
            Ok(Outcome {
                reported: reported.len(),
                fp,
                candidates: r.candidates_examined,
                assumed_positive: r.segments.iter().any(|s| s.appearance.assumed_positive),
            })
        })
        .collect()
}

pub fn baseline_outcomes(w: &Workload, base: &BaselineDigest) -> Result<Vec<Outcome>, EvalError> {
    w.excerpts
        .excerpts
        .par_iter()
        .map(|e| {
            let a = base.query(&e.bytes);
            let reported: Vec<FlowKey> = a.determination.flows.iter().map(|f| f.0).collect();
            let fp = check_carrier(&reported, &e.flow, w.distinct_flows, "baseline")?;
            Ok(Outcome {
                reported: reported.len(),
                fp,
                candidates: a.determination.candidates as u64,
                assumed_positive: false,
            })
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(xs: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    if xs.is_empty() || resamples == 0 {
        let m = mean(xs);
        return (m, m);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..xs.len()).map(|_| xs[rng.gen_range(0..xs.len())]).sum::<f64>() / xs.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    (at(tail), at(1.0 - tail))
}

fn fps(o: &[Outcome]) -> Vec<f64> {
    o.iter().map(|x| x.fp).collect()
}

// ---------------------------------------------------------------- fp

#[derive(Debug, Clone, Serialize)]
pub struct FpRow {
    pub seed: u64,
    pub excerpts: usize,
    pub distinct_flows: usize,
    pub cbid_fp: f64,
    pub cbid_ci: (f64, f64),
    pub baseline_fp: f64,
    pub baseline_ci: (f64, f64),
    pub cbid_dr: f64,
    pub baseline_dr: f64,
    pub assumed_positive: usize,
    pub mean_candidates: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FpReport {
    pub rows: Vec<FpRow>,
    pub pooled_cbid_fp: f64,
    pub pooled_cbid_ci: (f64, f64),
    pub pooled_baseline_fp: f64,
    pub pooled_baseline_ci: (f64, f64),
    /// baseline FP over CBID FP.
    pub pooled_ratio: f64,
}

/// Per-seed outcomes of the CBID vs baseline comparison.
pub struct FpSeed {
    pub row: FpRow,
    pub cbid: Vec<Outcome>,
    pub baseline: Vec<Outcome>,
}

/// CBID at the spec's digest config, and the baseline sized to the same overall DR.
pub fn fp_seed(spec: &EvalSpec, w: &Workload) -> Result<FpSeed, EvalError> {
    let cfg = spec.digest_for(w.raw_bytes);
    let segs = w.digest(cfg, spec.codec()?)?;
    let cbid = cbid_outcomes(w, &segs, QueryOptions::default())?;
    let digest_bytes: u64 = segs.iter().map(|s| s.digest_bytes()).sum();
    let bits = (8 * digest_bytes).max(64);
    let base = digest_baseline(&w.packets, BaselineConfig::new(cfg.partition, bits))?;
    let baseline = baseline_outcomes(w, &base)?;
    let (cf, bf) = (fps(&cbid), fps(&baseline));
    let row = FpRow {
        seed: w.seed,
        excerpts: cbid.len(),
        distinct_flows: w.distinct_flows,
        cbid_fp: mean(&cf),
        cbid_ci: bootstrap_ci(&cf, spec.bootstrap, 0.95, w.seed),
        baseline_fp: mean(&bf),
        baseline_ci: bootstrap_ci(&bf, spec.bootstrap, 0.95, w.seed ^ 1),
        cbid_dr: if digest_bytes == 0 { 0.0 } else { w.raw_bytes as f64 / digest_bytes as f64 },
        baseline_dr: base.achieved_dr(),
        assumed_positive: cbid.iter().filter(|o| o.assumed_positive).count(),
        mean_candidates: mean(&cbid.iter().map(|o| o.candidates as f64).collect::<Vec<_>>()),
    };
    Ok(FpSeed { row, cbid, baseline })
}

pub fn pool_fp(spec: &EvalSpec, seeds: Vec<FpSeed>) -> FpReport {
    let cf: Vec<f64> = seeds.iter().flat_map(|s| fps(&s.cbid)).collect();
    let bf: Vec<f64> = seeds.iter().flat_map(|s| fps(&s.baseline)).collect();
    let (c, b) = (mean(&cf), mean(&bf));
    FpReport {
        rows: seeds.into_iter().map(|s| s.row).collect(),
        pooled_cbid_fp: c,
        pooled_cbid_ci: bootstrap_ci(&cf, spec.bootstrap, 0.95, 0xc0),
        pooled_baseline_fp: b,
        pooled_baseline_ci: bootstrap_ci(&bf, spec.bootstrap, 0.95, 0xc1),
        pooled_ratio: if c > 0.0 { b / c } else { f64::INFINITY },
    }
}

pub fn run_fp(spec: &EvalSpec) -> Result<FpReport, EvalError> {
    let mut seeds = Vec::new();
    for &seed in &spec.seeds {
        seeds.push(fp_seed(spec, &Workload::prepare(spec, seed)?)?);
    }
    Ok(pool_fp(spec, seeds))
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub seed: u64,
    pub threshold: usize,
    pub fp: f64,
    pub ci: (f64, f64),
    pub d: f64,
    pub assumed_positive: usize,
    pub dr_overall: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// `(threshold, pooled fp, pooled d)`.
    pub pooled: Vec<(usize, f64, f64)>,
}

impl SweepReport {
    pub fn pooled_fp(&self, threshold: usize) -> Option<f64> {
        self.pooled.iter().find(|p| p.0 == threshold).map(|p| p.1)
    }
    pub fn pooled_d(&self, threshold: usize) -> Option<f64> {
        self.pooled.iter().find(|p| p.0 == threshold).map(|p| p.2)
    }
}

pub fn sweep_seed(spec: &EvalSpec, w: &Workload) -> Result<(Vec<SweepRow>, Vec<Vec<Outcome>>), EvalError> {
    let codec = spec.codec()?;
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for &t in &spec.thresholds {
        let mut cfg = spec.digest_for(w.raw_bytes);
        cfg.partition.threshold = t;
        cfg.validate()?;
        let segs = w.digest(cfg, codec.clone())?;
        let o = cbid_outcomes(w, &segs, QueryOptions::default())?;
        let f = fps(&o);
        let mut counters = cbid_core::SegmentCounters::default();
        segs.iter().for_each(|s| counters.add(&s.counters));
        let table_bytes: u64 = segs.iter().map(|s| s.table.stored().bytes.len() as u64).sum();
        let filter_bytes: u64 = segs.iter().map(|s| s.msbf.byte_len()).sum();
        rows.push(SweepRow {
            seed: w.seed,
            threshold: t,
            fp: mean(&f),
            ci: bootstrap_ci(&f, spec.bootstrap, 0.95, w.seed ^ t as u64),
            d: counters.reduction_factor().unwrap_or(f64::INFINITY),
            assumed_positive: o.iter().filter(|x| x.assumed_positive).count(),
            dr_overall: dr_overall(w.raw_bytes, filter_bytes, table_bytes).map(|r| r.0).unwrap_or(0.0),
        });
        outcomes.push(o);
    }
    Ok((rows, outcomes))
}

pub fn run_sweep(spec: &EvalSpec) -> Result<SweepReport, EvalError> {
    let mut rows = Vec::new();
    let mut pooled_fp: Vec<Vec<f64>> = vec![Vec::new(); spec.thresholds.len()];
    let mut blocks = vec![(0.0f64, 0.0f64); spec.thresholds.len()];
    for &seed in &spec.seeds {
        let w = Workload::prepare(spec, seed)?;
        let (r, o) = sweep_seed(spec, &w)?;
        for (i, (row, out)) in r.iter().zip(&o).enumerate() {
            pooled_fp[i].extend(fps(out));
            blocks[i].0 += row.d;
            blocks[i].1 += 1.0;
        }
        rows.extend(r);
    }
    let pooled = spec
        .thresholds
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, mean(&pooled_fp[i]), blocks[i].0 / blocks[i].1.max(1.0)))
        .collect();
    Ok(SweepReport { rows, pooled })
}

// ---------------------------------------------------------------- tables

#[derive(Debug, Clone, Serialize)]
pub struct EntropyCell {
    pub symbol_size: usize,
    pub entropy_bits: f64,
    pub best_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub seed: u64,
    pub sections: usize,
    pub flows: usize,
    pub ones_fraction: f64,
    pub entropy: Vec<EntropyCell>,
    pub raw_bytes: u64,
    pub compressed_bytes: u64,
    pub filter_bytes: u64,
    pub corpus_bytes: u64,
    pub dr_overall: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TablesReport {
    pub rows: Vec<TableRow>,
}

pub fn tables_seed(spec: &EvalSpec, w: &Workload) -> Result<Vec<TableRow>, EvalError> {
    let codec = spec.codec()?;
    let mut rows = Vec::new();
    for &j in &spec.sections {
        let cfg = DigestConfig { sections: j, ..spec.digest_for(w.raw_bytes) };
        let segs = w.digest(cfg, codec.clone())?;
        let mut ones = 0u64;
        let mut cells = 0u64;
        let mut raw = 0u64;
        let mut compressed = 0u64;
        let mut entropy = Vec::new();
        for (i, s) in segs.iter().enumerate() {
            let t = s.table.table().map_err(|e| EvalError::Invariant(format!("segment {i}: {e}")))?;
            ones += t.ones();
            cells += (t.rows() * t.columns()) as u64;
            raw += t.as_bytes().len() as u64;
            compressed += s.table.stored().bytes.len() as u64;
            if i == 0 {
                for &sym in &spec.symbol_sizes {
                    if let Ok(st) = table_stats(t, sym) {
                        entropy.push(EntropyCell { symbol_size: sym, entropy_bits: st.entropy_bits, best_ratio: st.best_ratio });
                    }
                }
            }
        }
        let filter_bytes: u64 = segs.iter().map(|s| s.msbf.byte_len()).sum();
        rows.push(TableRow {
            seed: w.seed,
            sections: j,
            flows: segs.iter().map(|s| s.flows.len()).sum(),
            ones_fraction: if cells == 0 { 0.0 } else { ones as f64 / cells as f64 },
            entropy,
            raw_bytes: raw,
            compressed_bytes: compressed,
            filter_bytes,
            corpus_bytes: w.raw_bytes,
            dr_overall: dr_overall(w.raw_bytes, filter_bytes, compressed).map(|r| r.0).unwrap_or(0.0),
        });
    }
    Ok(rows)
}

pub fn run_tables(spec: &EvalSpec) -> Result<TablesReport, EvalError> {
    let mut rows = Vec::new();
    for &seed in &spec.seeds {
        let w = Workload::prepare(&EvalSpec { excerpt_count: 0, ..spec.clone() }, seed)?;
        rows.extend(tables_seed(spec, &w)?);
    }
    Ok(TablesReport { rows })
}

// ---------------------------------------------------------------- hist

#[derive(Debug, Clone, Serialize)]
pub struct HistReport {
    /// `(length, blocks)` for every in-bounds length.
    pub block_lengths: Vec<(usize, u64)>,
    /// `(length, probes, negatives)` from non-member payloads.
    pub true_negatives: Vec<(usize, u64, u64)>,
    /// `(flow bytes at most, fraction of flows, fraction of bytes)`.
    pub flow_cdf: Vec<(u64, f64, f64)>,
}

/// Block-length histogram of `packets` under `cfg`.
pub fn block_histogram(packets: &[PacketRecord], cfg: &cbid_core::PartitionConfig) -> Result<Vec<(usize, u64)>, EvalError> {
    let mut p = Partitioner::new(*cfg)?;
    let (lo, hi) = (cfg.min_block_len(), cfg.max_block_len());
    let mut counts = vec![0u64; hi + 1];
    for pkt in packets {
        p.for_each_block(&pkt.payload, |b| counts[b.len()] += 1);
    }
    Ok((lo..=hi).map(|l| (l, counts[l])).collect())
}

pub fn flow_cdf(packets: &[PacketRecord]) -> Vec<(u64, f64, f64)> {
    let mut sizes: HashMap<FlowKey, u64> = HashMap::new();
    for p in packets {
        *sizes.entry(p.flow).or_default() += p.payload.len() as u64;
    }
    let mut v: Vec<u64> = sizes.into_values().collect();
    v.sort_unstable();
    let total: u64 = v.iter().sum();
    let mut out = Vec::new();
    let (mut i, mut acc) = (0usize, 0u64);
    // four points per decade
    let mut k = 0u32;
    while !v.is_empty() {
        let x = 10f64.powf(k as f64 / 4.0).round() as u64;
        while i < v.len() && v[i] <= x {
            acc += v[i];
            i += 1;
        }
        out.push((x, i as f64 / v.len() as f64, if total == 0 { 1.0 } else { acc as f64 / total as f64 }));
        if i == v.len() {
            break;
        }
        k += 1;
    }
    out
}

/// Non-member probe: blocks of an independently seeded corpus, queried as
/// type-I elements against digests of `w` without downsampling.
pub fn true_negative_histogram(
    spec: &EvalSpec,
    w: &Workload,
    probe: &[PacketRecord],
) -> Result<Vec<(usize, u64, u64)>, EvalError> {
    let mut cfg = spec.digest_for(w.raw_bytes);
    cfg.partition.threshold = 0;
    let segs = w.digest(cfg, spec.codec()?)?;
    let pc = cfg.partition;
    let mut p = Partitioner::new(pc)?;
    let mut counts = vec![(0u64, 0u64); pc.max_block_len() + 1];
    let mut element = Vec::new();
    for pkt in probe {
        p.for_each_block(&pkt.payload, |b| {
            type1_into(b.bytes, &mut element);
            let c = &mut counts[b.len()];
            c.0 += 1;
            if segs.iter().all(|s| s.msbf.query(&element).is_none()) {
                c.1 += 1;
            }
        });
    }
    Ok((pc.min_block_len()..=pc.max_block_len()).map(|l| (l, counts[l].0, counts[l].1)).collect())
}

pub fn run_hist(spec: &EvalSpec) -> Result<HistReport, EvalError> {
    let seed = spec.seeds.first().copied().unwrap_or(1);
    let quiet = EvalSpec { excerpt_count: 0, ..spec.clone() };
    let w = Workload::prepare(&quiet, seed)?;
    let probe = load_corpus(&spec.corpus, seed.wrapping_add(0x5eed_0000))?;
    Ok(HistReport {
        block_lengths: block_histogram(&w.packets, &spec.digest.partition)?,
        true_negatives: true_negative_histogram(spec, &w, &probe)?,
        flow_cdf: flow_cdf(&w.packets),
    })
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub run: usize,
    pub bytes: u64,
    pub cbid_mb_s: f64,
    pub baseline_mb_s: f64,
    pub mean_query_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

fn mb_s(bytes: u64, secs: f64) -> f64 {
    if bytes == 0 || secs <= 0.0 {
        0.0
    } else {
        bytes as f64 / 1e6 / secs
    }
}

pub fn bench_workload(spec: &EvalSpec, w: &Workload) -> Result<BenchReport, EvalError> {
    let codec = spec.codec()?;
    let cfg = spec.digest_for(w.raw_bytes);
    let mut rows = Vec::new();
    for run in 0..spec.bench_repeats.max(1) {
        let t = Instant::now();
        let segs = w.digest(cfg, codec.clone())?;
        let cbid_s = t.elapsed().as_secs_f64();
        let bits = (8 * segs.iter().map(|s| s.digest_bytes()).sum::<u64>()).max(64);
        let t = Instant::now();
        digest_baseline(&w.packets, BaselineConfig::new(cfg.partition, bits))?;
        let base_s = t.elapsed().as_secs_f64();
        let t = Instant::now();
        for e in &w.excerpts.excerpts {
            investigate_with(&ExcerptQuery::new(&e.bytes), &segs, QueryOptions::default())?;
        }
        let n = w.excerpts.excerpts.len();
        rows.push(BenchRow {
            run,
            bytes: w.raw_bytes,
            cbid_mb_s: mb_s(w.raw_bytes, cbid_s),
            baseline_mb_s: mb_s(w.raw_bytes, base_s),
            mean_query_ms: if n == 0 { 0.0 } else { t.elapsed().as_secs_f64() * 1e3 / n as f64 },
        });
    }
    Ok(BenchReport { rows })
}

pub fn run_bench(spec: &EvalSpec) -> Result<BenchReport, EvalError> {
    let seed = spec.seeds.first().copied().unwrap_or(1);
    let w = Workload::from_packets(load_corpus(&spec.corpus, seed)?, seed, spec.excerpt_len, spec.excerpt_count);
    bench_workload(spec, &w)
}

// ---------------------------------------------------------------- output

pub trait Csv {
    fn csv(&self) -> String;
}

impl Csv for FpReport {
    fn csv(&self) -> String {
        let mut s = String::from(
            "seed,excerpts,distinct_flows,cbid_fp,cbid_lo,cbid_hi,baseline_fp,baseline_lo,baseline_hi,cbid_dr,baseline_dr,assumed_positive,mean_candidates\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.2},{:.2},{},{:.1}",
                r.seed, r.excerpts, r.distinct_flows, r.cbid_fp, r.cbid_ci.0, r.cbid_ci.1, r.baseline_fp,
                r.baseline_ci.0, r.baseline_ci.1, r.cbid_dr, r.baseline_dr, r.assumed_positive, r.mean_candidates
            );
        }
        let _ = writeln!(
            s,
            "pooled,,,{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},,,,",
            self.pooled_cbid_fp,
            self.pooled_cbid_ci.0,
            self.pooled_cbid_ci.1,
            self.pooled_baseline_fp,
            self.pooled_baseline_ci.0,
            self.pooled_baseline_ci.1
        );
        s
    }
}

impl Csv for SweepReport {
    fn csv(&self) -> String {
        let mut s = String::from("seed,threshold,fp,fp_lo,fp_hi,d,assumed_positive,dr_overall\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.3},{},{:.2}",
                r.seed, r.threshold, r.fp, r.ci.0, r.ci.1, r.d, r.assumed_positive, r.dr_overall
            );
        }
        for (t, fp, d) in &self.pooled {
            let _ = writeln!(s, "pooled,{t},{fp:.6},,,{d:.3},,");
        }
        s
    }
}

impl Csv for TablesReport {
    fn csv(&self) -> String {
        let mut s = String::from(
            "seed,sections,flows,ones_pct,symbol_size,entropy_bits,best_ratio,raw_bytes,compressed_bytes,filter_bytes,dr_overall\n",
        );
        for r in &self.rows {
            let cells: Vec<Option<&EntropyCell>> =
                if r.entropy.is_empty() { vec![None] } else { r.entropy.iter().map(Some).collect() };
            for c in cells {
                let (sym, h, b) = c.map_or((String::new(), String::new(), String::new()), |c| {
                    (c.symbol_size.to_string(), format!("{:.4}", c.entropy_bits), format!("{:.2}", c.best_ratio))
                });
                let _ = writeln!(
                    s,
                    "{},{},{},{:.3},{sym},{h},{b},{},{},{},{:.2}",
                    r.seed,
                    r.sections,
                    r.flows,
                    100.0 * r.ones_fraction,
                    r.raw_bytes,
                    r.compressed_bytes,
                    r.filter_bytes,
                    r.dr_overall
                );
            }
        }
        s
    }
}

impl Csv for HistReport {
    fn csv(&self) -> String {
        let mut s = String::from("section,key,a,b\n");
        for (l, n) in &self.block_lengths {
            let _ = writeln!(s, "block_length,{l},{n},");
        }
        for (l, n, neg) in &self.true_negatives {
            let _ = writeln!(s, "true_negative,{l},{n},{neg}");
        }
        for (x, f, b) in &self.flow_cdf {
            let _ = writeln!(s, "flow_cdf,{x},{f:.6},{b:.6}");
        }
        s
    }
}

impl Csv for BenchReport {
    fn csv(&self) -> String {
        let mut s = String::from("run,bytes,cbid_mb_s,baseline_mb_s,mean_query_ms\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.2},{:.2},{:.3}",
                r.run, r.bytes, r.cbid_mb_s, r.baseline_mb_s, r.mean_query_ms
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_round_trip() {
        let spec = EvalSpec::default();
        let json = serde_json::to_string(&spec).unwrap();
        let back: EvalSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let partial: EvalSpec = serde_json::from_str(r#"{"seeds":[7],"corpus":{"kind":"cbtr","path":"x.cbtr"}}"#).unwrap();
        assert_eq!(partial.seeds, vec![7]);
        assert_eq!(partial.excerpt_len, 200);
    }

    #[test]
    fn bootstrap_brackets_the_mean() {
        let xs: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let (lo, hi) = bootstrap_ci(&xs, 1000, 0.95, 3);
        let m = mean(&xs);
        assert!(lo < m && m < hi);
        assert_eq!(bootstrap_ci(&[2.0; 10], 100, 0.95, 1), (2.0, 2.0));
        assert_eq!(bootstrap_ci(&[], 100, 0.95, 1), (0.0, 0.0));
    }

    #[test]
    fn flow_cdf_ends_at_one() {
        let f = FlowKey::v4([1, 0, 0, 1], [2, 0, 0, 2], 1, 2, cbid_core::Protocol::Udp);
        let g = FlowKey::v4([1, 0, 0, 3], [2, 0, 0, 2], 1, 2, cbid_core::Protocol::Udp);
        let pk = |flow, n| PacketRecord { flow, payload: vec![0; n], timestamp_us: 0 };
        let cdf = flow_cdf(&[pk(f, 10), pk(g, 1000), pk(g, 500)]);
        let last = cdf.last().unwrap();
        assert_eq!((last.1, last.2), (1.0, 1.0));
        let at10 = cdf.iter().find(|p| p.0 == 10).unwrap();
        assert_eq!(at10.1, 0.5);
        assert!(flow_cdf(&[]).is_empty());
    }

    #[test]
    fn bench_on_empty_corpus_reports_zero() {
        let spec = EvalSpec { bench_repeats: 1, codec: "deflate".into(), ..Default::default() };
        let w = Workload::from_packets(Vec::new(), 1, 200, 10);
        let r = bench_workload(&spec, &w).unwrap();
        assert_eq!(r.rows[0].bytes, 0);
        assert_eq!(r.rows[0].cbid_mb_s, 0.0);
        assert_eq!(r.rows[0].mean_query_ms, 0.0);
    }
}
