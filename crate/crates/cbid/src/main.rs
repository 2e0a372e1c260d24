use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cbid::archive::{read_archive, write_archive};
use cbid::capture::read_capture;
use cbid::codec::codec_by_name;
use cbid::corpus::{read_corpus, write_corpus};
use cbid::eval::{self, Csv, EvalError, EvalSpec};
use cbid_core::query::{investigate_with, ExcerptQuery, QueryOptions};
use cbid_core::{synth_generate, ArchiveSegment, DigestConfig, Digester, PacketRecord, SynthConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use xxhash_rust::xxh3::xxh3_64_with_seed;

#[derive(Parser)]
#[command(name = "cbid", version, about = "Payload attribution digests for packet traffic")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Digest a capture, a CBTR corpus or a synthetic spec into an archive.
    Digest(DigestArgs),
    /// Attribute an excerpt to flows.
    Query(QueryArgs),
    /// Run an experiment from a JSON spec.
    Eval {
        #[arg(value_enum)]
        kind: EvalKind,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print segment metadata and verify an archive.
    Inspect {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write a packet source out as a CBTR corpus.
    Dump {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalKind {
    Fp,
    Sweep,
    Tables,
    Hist,
    Bench,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct DigestArgs {
    /// pcap/pcapng file, `.cbtr` corpus, or `.json` synthetic corpus config.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    dr: f64,
    #[arg(long, default_value_t = 2048)]
    sections: usize,
    #[arg(long, default_value_t = 40)]
    threshold: usize,
    #[arg(long, default_value_t = 64)]
    window: usize,
    #[arg(long, default_value_t = 4)]
    overlap: usize,
    #[arg(long, default_value_t = 4)]
    hashes: u32,
    /// Keys the hash functions; also seeds a synthetic corpus.
    #[arg(long)]
    seed: Option<u64>,
    /// Raw payload bytes per interval (filter sizing and rotation).
    #[arg(long, default_value_t = 1 << 30)]
    interval_bytes: u64,
    #[arg(long, default_value_t = 0.01)]
    rotation_fp: f64,
    #[arg(long, default_value = "lzma")]
    codec: String,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    archive: PathBuf,
    /// A file holding the excerpt, or the excerpt as hex.
    #[arg(long)]
    excerpt: String,
    #[arg(long)]
    from: Option<u64>,
    #[arg(long)]
    to: Option<u64>,
    /// Query every flow instead of only index-table candidates.
    #[arg(long)]
    no_prune: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug)]
enum Failure {
    Error(String),
    Invariant(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Error(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Digest(a) => digest(a),
        Cmd::Query(a) => query(a),
        Cmd::Eval { kind, spec, format, out } => run_eval(kind, &spec, format, out.as_deref()),
        Cmd::Inspect { archive, json } => inspect(&archive, json),
        Cmd::Dump { input, out } => dump(&input, &out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Invariant(e)) => {
            eprintln!("invariant check failed: {e}");
            ExitCode::from(2)
        }
    }
}

type Packets = Box<dyn Iterator<Item = Result<PacketRecord, Failure>>>;

fn open_source(path: &Path, seed: Option<u64>) -> Result<Packets, Failure> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let mut cfg: SynthConfig = serde_json::from_slice(&fs::read(path)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            Ok(Box::new(synth_generate(cfg)?.map(Ok)))
        }
        Some("cbtr") => Ok(Box::new(read_corpus(path)?.map(|r| r.map_err(Failure::from)))),
        _ => Ok(Box::new(read_capture(path)?.map(|r| r.map_err(Failure::from)))),
    }
}

#[derive(Serialize)]
struct SegmentSummary {
    segment: usize,
    start_us: u64,
    end_us: u64,
    flows: usize,
    packets: u64,
    raw_bytes: u64,
    blocks_total: u64,
    blocks_kept: u64,
    filter_bytes: u64,
    table_bytes: u64,
    table_codec: &'static str,
    dr_overall: Option<f64>,
    worst_section_fp: f64,
}

fn summarize(i: usize, s: &ArchiveSegment) -> SegmentSummary {
    SegmentSummary {
        segment: i,
        start_us: s.start_us,
        end_us: s.end_us,
        flows: s.flows.len(),
        packets: s.counters.packets,
        raw_bytes: s.counters.raw_bytes,
        blocks_total: s.counters.blocks_total,
        blocks_kept: s.counters.blocks_kept,
        filter_bytes: s.msbf.byte_len(),
        table_bytes: s.table.stored().bytes.len() as u64,
        table_codec: s.table.stored().codec.name(),
        dr_overall: s.achieved_dr(),
        worst_section_fp: s.msbf.worst_section_fp(),
    }
}

fn digest(a: DigestArgs) -> Result<(), Failure> {
    let mut cfg = DigestConfig {
        sections: a.sections,
        hashes: a.hashes,
        target_dr: a.dr,
        rotation_fp: a.rotation_fp,
        interval_raw_budget: a.interval_bytes,
        ..Default::default()
    };
    cfg.partition.window = a.window;
    cfg.partition.overlap = a.overlap;
    cfg.partition.threshold = a.threshold;
    if let Some(s) = a.seed {
        cfg.partition.hash_seed = xxh3_64_with_seed(b"partition", s);
        cfg.filter_seed = xxh3_64_with_seed(b"filter", s);
        cfg.section_seed = xxh3_64_with_seed(b"section", s);
    }
    let codec = codec_by_name(&a.codec).ok_or_else(|| Failure::Error(format!("unknown codec {:?}", a.codec)))?;
    let mut d = Digester::new(cfg, codec)?;
    let mut segs = Vec::new();
    for p in open_source(&a.input, a.seed)? {
        if let Some(s) = d.push(&p?)? {
            segs.push(s);
        }
    }
    segs.extend(d.finish());
    write_archive(&segs, &a.out)?;
    let summary: Vec<_> = segs.iter().enumerate().map(|(i, s)| summarize(i, s)).collect();
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn excerpt_bytes(arg: &str) -> Result<Vec<u8>, Failure> {
    let p = Path::new(arg);
    if p.is_file() {
        return Ok(fs::read(p)?);
    }
    let cleaned: String = arg.chars().filter(|c| !c.is_whitespace()).collect();
    let cleaned = cleaned.strip_prefix("0x").unwrap_or(&cleaned);
    hex::decode(cleaned).map_err(|e| Failure::Error(format!("excerpt is neither a file nor hex: {e}")))
}

#[derive(Serialize)]
struct FlowHit {
    segment: usize,
    flow: String,
    matched_blocks: u32,
}

#[derive(Serialize)]
struct QueryOutput {
    excerpt_len: usize,
    short_excerpt: bool,
    segments_checked: usize,
    candidates_examined: u64,
    type2_queries: u64,
    assumed_positive: bool,
    hits: Vec<FlowHit>,
}

fn query(a: QueryArgs) -> Result<(), Failure> {
    let bytes = excerpt_bytes(&a.excerpt)?;
    let archive = read_archive(&a.archive)?;
    let q = ExcerptQuery::new(&bytes).between(a.from, a.to);
    let r = investigate_with(&q, &archive, QueryOptions { prune: !a.no_prune })?;
    let out = QueryOutput {
        excerpt_len: bytes.len(),
        short_excerpt: r.short_excerpt,
        segments_checked: r.segments_checked,
        candidates_examined: r.candidates_examined,
        type2_queries: r.type2_queries,
        assumed_positive: r.segments.iter().any(|s| s.appearance.assumed_positive),
        hits: r
            .segments
            .iter()
            .flat_map(|s| {
                s.determination.flows.iter().map(move |(f, n)| FlowHit {
                    segment: s.segment,
                    flow: f.to_string(),
                    matched_blocks: *n,
                })
            })
            .collect(),
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!("segment,flow,matched_blocks");
        for h in &out.hits {
            println!("{},{},{}", h.segment, h.flow, h.matched_blocks);
        }
        if out.short_excerpt {
            eprintln!("warning: excerpt shorter than the reliable minimum; answers may be less specific");
        }
    }
    Ok(())
}

fn emit<T: Serialize + Csv>(r: &T, format: Format, out: Option<&Path>) -> Result<(), Failure> {
    let text = match format {
        Format::Csv => r.csv(),
        Format::Json => serde_json::to_string_pretty(r)? + "\n",
    };
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_eval(kind: EvalKind, spec: &Path, format: Format, out: Option<&Path>) -> Result<(), Failure> {
    let spec: EvalSpec = serde_json::from_slice(&fs::read(spec)?)?;
    let lift = |e: EvalError| match e {
        EvalError::Invariant(m) => Failure::Invariant(m),
        other => Failure::Error(other.to_string()),
    };
    match kind {
        EvalKind::Fp => emit(&eval::run_fp(&spec).map_err(lift)?, format, out),
        EvalKind::Sweep => emit(&eval::run_sweep(&spec).map_err(lift)?, format, out),
        EvalKind::Tables => emit(&eval::run_tables(&spec).map_err(lift)?, format, out),
        EvalKind::Hist => emit(&eval::run_hist(&spec).map_err(lift)?, format, out),
        EvalKind::Bench => emit(&eval::run_bench(&spec).map_err(lift)?, format, out),
    }
}

fn inspect(path: &Path, json: bool) -> Result<(), Failure> {
    let archive = read_archive(path)?;
    let mut problems = Vec::new();
    for (i, s) in archive.iter().enumerate() {
        match s.table.table() {
            Ok(t) if t.rows() != s.flows.len() => problems.push(format!("segment {i}: table rows != flows")),
            Ok(t) if (0..t.rows()).any(|r| t.row_ones(r) == 0) => {
                problems.push(format!("segment {i}: a flow has no index bits"))
            }
            Ok(_) => {}
            Err(e) => problems.push(format!("segment {i}: {e}")),
        }
        if i > 0 && archive[i - 1].end_us > s.start_us {
            problems.push(format!("segment {i}: interval overlaps its predecessor"));
        }
    }
    let summary: Vec<_> = archive.iter().enumerate().map(|(i, s)| summarize(i, s)).collect();
    if json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!("segment,start_us,end_us,flows,packets,raw_bytes,filter_bytes,table_bytes,codec,dr_overall,worst_section_fp");
        for s in &summary {
            println!(
                "{},{},{},{},{},{},{},{},{},{:.2},{:.3e}",
                s.segment,
                s.start_us,
                s.end_us,
                s.flows,
                s.packets,
                s.raw_bytes,
                s.filter_bytes,
                s.table_bytes,
                s.table_codec,
                s.dr_overall.unwrap_or(0.0),
                s.worst_section_fp
            );
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(problems.join("; ")))
    }
}

fn dump(input: &Path, out: &Path) -> Result<(), Failure> {
    let packets = open_source(input, None)?.collect::<Result<Vec<_>, _>>()?;
    let n = write_corpus(out, &packets)?;
    println!("{n} records");
    Ok(())
}
