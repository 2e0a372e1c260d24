//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeSet;
use std::time::Instant;

use cbid::archive::{decode_archive, encode_archive, read_archive, write_archive, HEADER_LEN};
use cbid::codec::default_codec;
use cbid::eval::{self, EvalSpec, Workload};
use cbid_core::index::candidate_flows;
use cbid_core::partition::partition_payload;
use cbid_core::query::{investigate_with, QueryOptions};
use cbid_core::synth::PayloadEntropy;
use cbid_core::{
    digest_stream, dr_overall, expected_fp, extract_unique_excerpts, investigate, BitmapIndexTable, BlockKind,
    BloomFilter, DigestConfig, ExcerptQuery, FlowKey, FlowList, MultiSectionBloomFilter, PacketRecord,
    PartitionConfig, Protocol, SynthConfig,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const PROBES: u64 = 100_000;

fn member(i: u64) -> [u8; 9] {
    let mut e = [0u8; 9];
    e[1..].copy_from_slice(&i.to_le_bytes());
    e
}

fn non_member(i: u64) -> [u8; 9] {
    let mut e = member(i);
    e[0] = 1;
    e
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b
}

/// Bloom FP against the closed form, over a grid of loads.
fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut cells = 0;
    let mut skipped = Vec::new();
    for m in [1u64 << 16, 1_000_000] {
        for k in 1u32..=5 {
            for fill in [0.1, 0.5, 1.0, 1.5] {
                let n = (fill * m as f64 / k as f64).round() as u64;
                // independent form of the expectation
                let oracle = (1.0 - (-(k as f64) * n as f64 / m as f64).exp()).powi(k as i32);
                // 1e5 probes cannot resolve rates this small to +-20%
                if oracle * (PROBES as f64) < 250.0 {
                    skipped.push(format!("m={m} k={k} fill={fill}"));
                    continue;
                }
                let mut bf = BloomFilter::new(m, k, m ^ k as u64).unwrap();
                for i in 0..n {
                    bf.insert(&member(i));
                }
                let hits = (0..PROBES).filter(|&i| bf.contains(&non_member(i))).count();
                let empirical = hits as f64 / PROBES as f64;
                let expect = expected_fp(m, n, k);
                assert!(rel(expect, oracle) < 0.01, "closed forms disagree at m={m} k={k} n={n}");
                worst = worst.max(rel(empirical, expect));
                cells += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < 0.2 && secs < 60.0,
        format!("{cells} cells, worst relative error {:.3}, {secs:.1}s (unresolvable at 1e5 probes: {})", worst, skipped.join(", ")),
    )
}

/// Multi-section vs conventional filter at the same m, k, n.
fn criterion_2() -> Outcome {
    let t = Instant::now();
    let m = 1u64 << 20;
    let k = 4;
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for fill in [0.5, 1.0, 1.5] {
        let n = (fill * m as f64 / k as f64) as u64;
        let mut bf = BloomFilter::new(m, k, 7).unwrap();
        for i in 0..n {
            bf.insert(&member(i));
        }
        let base = (0..PROBES).filter(|&i| bf.contains(&non_member(i))).count() as f64 / PROBES as f64;
        for j in [16usize, 2048] {
            let mut ms = MultiSectionBloomFilter::new(m, j, k, 11, 7).unwrap();
            assert_eq!(ms.total_bits(), m);
            for i in 0..n {
                ms.insert(&member(i));
            }
            let fp = (0..PROBES).filter(|&i| ms.query(&non_member(i)).is_some()).count() as f64 / PROBES as f64;
            worst = worst.max(rel(fp, base));
            rows.push(format!("fill {fill} j={j}: {fp:.4} vs {base:.4}"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(worst < 0.2 && secs < 60.0, format!("worst relative gap {worst:.3}, {secs:.1}s; {}", rows.join("; ")))
}

/// Block lengths: in bounds, flat on random data, minimal on zero runs.
fn criterion_3() -> Outcome {
    let cfg = PartitionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts = [0u64; 80];
    let mut interior = [0u64; 80];
    let mut total_bytes = 0usize;
    let mut out_of_bounds = 0u64;
    let mut buf = vec![0u8; 1460];
    while total_bytes < 10_000_000 {
        rng.fill_bytes(&mut buf);
        total_bytes += buf.len();
        for b in partition_payload(&buf, &cfg).unwrap().blocks {
            if !(6..=69).contains(&b.len()) {
                out_of_bounds += 1;
                continue;
            }
            counts[b.len()] += 1;
            if b.kind == BlockKind::Interior {
                interior[b.len()] += 1;
            }
        }
    }
    let n: u64 = interior[7..=69].iter().sum();
    let e = n as f64 / 63.0;
    let chi2: f64 = interior[7..=69].iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new(62.0).unwrap().cdf(chi2);

    let zeros = vec![0u8; 1460];
    let mut zero_counts = [0u64; 80];
    for _ in 0..100 {
        for b in partition_payload(&zeros, &cfg).unwrap().blocks {
            if b.kind == BlockKind::Interior {
                zero_counts[b.len()] += 1;
            }
        }
    }
    let zero_total: u64 = zero_counts.iter().sum();
    let at6 = zero_counts[6] as f64 / zero_total as f64;
    let total: u64 = counts.iter().sum();
    outcome(
        out_of_bounds == 0 && p > 0.01 && at6 > 0.99,
        format!("{total} blocks over {total_bytes} B, {out_of_bounds} out of [6,69]; chi2={chi2:.1} df=62 p={p:.3}; zero-run share at 6 bytes {at6:.4}"),
    )
}

/// The worked index-table example.
fn criterion_4() -> Outcome {
    let rows = ["0110010001", "1011011100", "0001100000", "1111011111", "0010101011"];
    let flow = |i: u8| FlowKey::v4([10, 0, 0, i], [10, 0, 0, 100], 1000, 80, Protocol::Tcp);
    let mut table = BitmapIndexTable::new(10);
    let mut flows = FlowList::new();
    for (i, r) in rows.iter().enumerate() {
        let (row, _) = flows.register(flow(i as u8 + 1));
        table.push_row();
        for (c, ch) in r.chars().enumerate() {
            if ch == '1' {
                table.set(row as usize, c).unwrap();
            }
        }
    }
    let printed: Vec<String> =
        (0..5).map(|r| (0..10).map(|c| if table.get(r, c).unwrap() { '1' } else { '0' }).collect()).collect();
    let a = candidate_flows(&table, &flows, &[2, 5, 9]).unwrap();
    let b = candidate_flows(&table, &flows, &[4]).unwrap();
    let pass = printed == rows && a == vec![flow(1), flow(4)] && b == vec![flow(3), flow(5)];
    outcome(pass, format!("{{S3,S6,S10}} -> flows {:?}; {{S5}} -> flows {:?}", ids(&a), ids(&b)))
}

fn ids(flows: &[FlowKey]) -> Vec<u8> {
    flows.iter().map(|f| match f.src() {
        std::net::IpAddr::V4(a) => a.octets()[3],
        _ => 0,
    }).collect()
}

fn zero_run_excerpt(packets: &[PacketRecord], len: usize) -> Option<(Vec<u8>, FlowKey)> {
    packets.iter().find_map(|p| {
        let mut run = 0;
        for (i, &b) in p.payload.iter().enumerate() {
            run = if b == 0 { run + 1 } else { 0 };
            if run == len {
                return Some((p.payload[i + 1 - len..=i].to_vec(), p.flow));
            }
        }
        None
    })
}

/// No false negatives over 500 excerpts and all-small excerpts, T = 40.
fn criterion_5() -> Outcome {
    let mut checked = 0;
    let mut missed = 0;
    let mut assumed = 0;
    let mut segments = Vec::new();
    for (seed, count) in [(101u64, 167usize), (102, 167), (103, 166)] {
        let packets: Vec<PacketRecord> =
            cbid_core::synth_generate(SynthConfig { seed, byte_budget: Some(20_000_000), flow_count: 1 << 20, ..Default::default() })
                .unwrap()
                .collect();
        let raw: u64 = packets.iter().map(|p| p.payload.len() as u64).sum();
        let cfg = DigestConfig { interval_raw_budget: raw / 4, rotation_fp: 0.999, ..Default::default() };
        assert_eq!(cfg.partition.threshold, 40);
        let segs = digest_stream(&packets, cfg, default_codec()).unwrap();
        segments.push(segs.len());
        let ex = extract_unique_excerpts(&packets, 200, count, seed);
        for e in &ex.excerpts {
            let r = investigate(&ExcerptQuery::new(&e.bytes), &segs).unwrap();
            checked += 1;
            missed += usize::from(!r.reports(&e.flow));
        }
        for len in [200, 400] {
            if let Some((bytes, flow)) = zero_run_excerpt(&packets, len) {
                let r = investigate(&ExcerptQuery::new(&bytes), &segs).unwrap();
                assert!(r.segments.iter().all(|s| s.appearance.assumed_positive));
                assumed += 1;
                missed += usize::from(!r.reports(&flow));
            }
        }
    }
    outcome(
        checked == 500 && missed == 0 && assumed >= 3,
        format!("{checked} unique excerpts + {assumed} all-small (assumed-positive) excerpts, {missed} carriers missed; segments per seed {segments:?}"),
    )
}

fn calibrated_spec() -> EvalSpec {
    EvalSpec::default()
}

fn criterion_6(spec: &EvalSpec, seeds: Vec<eval::FpSeed>, secs: f64) -> Outcome {
    let r = eval::pool_fp(spec, seeds);
    let disjoint = r.rows.iter().all(|row| row.cbid_ci.1 < row.baseline_ci.0);
    let matched = r.rows.iter().all(|row| rel(row.baseline_dr, row.cbid_dr) < 0.01);
    let loaded = r.rows.iter().all(|row| row.baseline_fp > 0.01);
    let per_seed: Vec<String> = r
        .rows
        .iter()
        .map(|row| {
            format!(
                "seed {}: cbid {:.4} [{:.4},{:.4}] baseline {:.4} [{:.4},{:.4}] DR {:.1}/{:.1}",
                row.seed, row.cbid_fp, row.cbid_ci.0, row.cbid_ci.1, row.baseline_fp, row.baseline_ci.0, row.baseline_ci.1,
                row.cbid_dr, row.baseline_dr
            )
        })
        .collect();
    outcome(
        r.pooled_cbid_fp <= 0.1 * r.pooled_baseline_fp && loaded && disjoint && matched && secs < 1800.0,
        format!(
            "pooled cbid {:.4} vs baseline {:.4} ({:.1}x); {}; {secs:.0}s",
            r.pooled_cbid_fp,
            r.pooled_baseline_fp,
            r.pooled_ratio,
            per_seed.join("; ")
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut spec = EvalSpec { thresholds: vec![10, 40, 60], ..Default::default() };
    if let eval::CorpusSpec::Synth { config } = &mut spec.corpus {
        config.entropy = PayloadEntropy::Random;
    }
    let r = match eval::run_sweep(&spec) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let (f10, f40, f60) = (r.pooled_fp(10).unwrap(), r.pooled_fp(40).unwrap(), r.pooled_fp(60).unwrap());
    let d = r.pooled_d(40).unwrap();
    outcome(
        f40 < f10 && f60 > 3.0 * f40 && (1.5..=2.5).contains(&d),
        format!("uniform-random payloads, 3 seeds: fp(10)={f10:.4} fp(40)={f40:.4} fp(60)={f60:.4}; d(40)={d:.3}"),
    )
}

fn criterion_8(rows: &[eval::TableRow]) -> Outcome {
    let ones: Vec<f64> = rows.iter().map(|r| r.ones_fraction).collect();
    let decreasing = ones.windows(2).all(|w| w[0] > w[1]);
    let small = rows.iter().all(|r| (r.compressed_bytes as f64) < 0.5 * r.raw_bytes as f64);
    const GB: u64 = 1_000_000_000;
    const MB: u64 = 1_000_000;
    let got: Vec<u64> =
        [44, 65, 98, 154].iter().map(|&t| dr_overall(100 * GB, GB, t * MB).unwrap().0.round() as u64).collect();
    let detail: Vec<String> = rows
        .iter()
        .map(|r| format!("j={}: ones {:.2}% table {}/{} B", r.sections, 100.0 * r.ones_fraction, r.compressed_bytes, r.raw_bytes))
        .collect();
    outcome(
        decreasing && small && got == [96, 94, 91, 87],
        format!("{}; DR0 {:?}:1", detail.join("; "), got),
    )
}

fn criterion_9(w: &Workload, spec: &EvalSpec) -> Outcome {
    let segs = match w.digest(spec.digest_for(w.raw_bytes), default_codec()) {
        Ok(s) => s,
        Err(e) => return outcome(false, e.to_string()),
    };
    let ex = extract_unique_excerpts(&w.packets, spec.excerpt_len, 200, w.seed + 1000);
    let mut subset = true;
    let (mut pruned_c, mut full_c) = (0u64, 0u64);
    for e in &ex.excerpts {
        let q = ExcerptQuery::new(&e.bytes);
        let p = investigate_with(&q, &segs, QueryOptions { prune: true }).unwrap();
        let f = investigate_with(&q, &segs, QueryOptions { prune: false }).unwrap();
        let all: BTreeSet<FlowKey> = f.flows().into_iter().collect();
        subset &= p.flows().iter().all(|x| all.contains(x)) && p.reports(&e.flow);
        pruned_c += p.candidates_examined;
        full_c += f.candidates_examined;
    }
    let drop = 1.0 - pruned_c as f64 / full_c.max(1) as f64;
    outcome(
        ex.excerpts.len() == 200 && subset && drop > 0.5,
        format!("{} excerpts, subset={subset}, candidates {pruned_c} vs {full_c} (drop {:.1}%)", ex.excerpts.len(), 100.0 * drop),
    )
}

fn criterion_10() -> Outcome {
    let packets: Vec<PacketRecord> =
        cbid_core::synth_generate(SynthConfig { seed: 77, byte_budget: Some(30_000_000), flow_count: 1 << 20, ..Default::default() })
            .unwrap()
            .collect();
    let raw: u64 = packets.iter().map(|p| p.payload.len() as u64).sum();
    let cfg = DigestConfig { interval_raw_budget: raw / 5, rotation_fp: 0.999, ..Default::default() };
    let segs = digest_stream(&packets, cfg, default_codec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acceptance.cbid");
    write_archive(&segs, &path).unwrap();
    let back = read_archive(&path).unwrap();
    let ex = extract_unique_excerpts(&packets, 200, 100, 77);
    let same = ex.excerpts.iter().all(|e| {
        let q = ExcerptQuery::new(&e.bytes);
        investigate(&q, &segs).unwrap() == investigate(&q, &back).unwrap()
    });

    let bytes = encode_archive(&segs);
    let dir_end = HEADER_LEN + 24 * segs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut positions: Vec<usize> = (0..dir_end).collect();
    positions.extend((0..2000).map(|_| rng.gen_range(dir_end..bytes.len())));
    let mut undetected = 0;
    for &pos in &positions {
        let mut bad = bytes.clone();
        bad[pos] ^= 1 << rng.gen_range(0..8);
        undetected += usize::from(decode_archive(&bad).is_ok());
    }
    outcome(
        same && ex.excerpts.len() == 100 && undetected == 0,
        format!(
            "{} segments, {} B; 100 excerpts identical={same}; {} corrupted copies, {undetected} undetected",
            segs.len(),
            bytes.len(),
            positions.len()
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let names = [
        "",
        "Bloom FP matches the closed form",
        "multi-section FP equals conventional FP",
        "block lengths bounded, flat, zero runs at 6",
        "worked index-table example",
        "no false negatives end to end",
        "CBID FP <= 0.1 x baseline at matched DR",
        "threshold sweep U-shape and d",
        "index-table statistics and DR0",
        "pruning sound and effective",
        "archive persistence and fault detection",
    ];
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let report = |n: usize, o: Outcome, results: &mut Vec<(usize, Outcome)>| {
        println!("criterion {n:2} {}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, names[n], o.detail);
        results.push((n, o));
    };

    report(1, criterion_1(), &mut results);
    report(2, criterion_2(), &mut results);
    report(3, criterion_3(), &mut results);
    report(4, criterion_4(), &mut results);
    report(5, criterion_5(), &mut results);

    let spec = calibrated_spec();
    let t = Instant::now();
    let mut seeds = Vec::new();
    let mut failed6 = None;
    let mut side = std::time::Duration::ZERO;
    for &seed in &spec.seeds {
        let w = match Workload::prepare(&spec, seed) {
            Ok(w) => w,
            Err(e) => {
                failed6 = Some(e.to_string());
                break;
            }
        };
        match eval::fp_seed(&spec, &w) {
            Ok(s) => seeds.push(s),
            Err(e) => {
                failed6 = Some(e.to_string());
                break;
            }
        }
        if seed == spec.seeds[0] {
            let started = Instant::now();
            let rows = eval::tables_seed(&spec, &w);
            let c8 = match rows {
                Ok(rows) => criterion_8(&rows),
                Err(e) => outcome(false, e.to_string()),
            };
            let c9 = criterion_9(&w, &spec);
            results.push((8, c8));
            results.push((9, c9));
            side += started.elapsed();
        }
    }
    let secs6 = (t.elapsed() - side).as_secs_f64();
    let c6 = match failed6 {
        Some(e) => outcome(false, e),
        None => criterion_6(&spec, seeds, secs6),
    };
    report(6, c6, &mut results);
    report(7, criterion_7(), &mut results);
    let c10 = criterion_10();
    report(10, c10, &mut results);

    results.sort_by_key(|r| r.0);
    println!("\nacceptance summary");
    for (n, o) in &results {
        println!("criterion {n:2} {}: {}", if o.pass { "PASS" } else { "FAIL" }, names[*n]);
        if *n == 8 || *n == 9 {
            println!("             ({})", o.detail);
        }
    }
    let failed = results.iter().filter(|r| !r.1.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
