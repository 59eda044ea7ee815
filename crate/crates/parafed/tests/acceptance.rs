//! End-to-end acceptance criteria. Runs as a plain binary so every
//! criterion prints one PASS/FAIL line regardless of capture settings.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use parafed::checks::{gradcheck, reduction_check, selection_check};
use parafed::experiment::{build_fixture, Mode};
use parafed::interference::{aggregation_curve, grouping_curve};
use parafed::overhead::bench_overhead;
use parafed::ExperimentConfig;
use parafed_core::federation::{
    AdapterRequest, AdapterUpload, CandidateUpload, Direction, Ledger, QueryBroadcast, Server, WireField,
};
use parafed_core::federation::wire::FieldKind;
use parafed_core::lowrank::{merge, AdapterPair, MergeEntry};
use parafed_core::rng;
use parafed_core::toylm::{augment, train_mask, MaskTrainConfig};
use parafed_core::{DocMask, Matrix};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn codec_exactness() -> Outcome {
    let start = Instant::now();
    let mut g = rng::stream(1, 1);
    for _ in 0..10_000 {
        let d = 1 + rng::index(&mut g, 257);
        let p = rng::uniform(&mut g, 0.0, 1.0);
        let x: Vec<bool> = (0..d).map(|_| rng::uniform(&mut g, 0.0, 1.0) < p).collect();
        let y: Vec<bool> = (0..d).map(|_| rng::uniform(&mut g, 0.0, 1.0) < p).collect();
        let (mx, my) = (DocMask::pack(&x), DocMask::pack(&y));
        check!(mx.unpack() == x, "unpack(pack(x)) != x at d = {d}");
        check!(mx.popcount() == x.iter().filter(|b| **b).count(), "popcount mismatch at d = {d}");
        let dot = x.iter().zip(&y).filter(|(a, b)| **a && **b).count();
        check!(mx.dot(&my).map_err(|e| e.to_string())? == dot, "dot mismatch at d = {d}");
        let back = DocMask::from_packed(d, mx.as_bytes().to_vec()).map_err(|e| e.to_string())?;
        check!(back == mx, "from_packed disagrees at d = {d}");
    }
    let secs = start.elapsed().as_secs_f64();
    check!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("10000 masks in {secs:.3} s"))
}

fn merge_oracle() -> Outcome {
    let mut g = rng::stream(2, 2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = 1 + rng::index(&mut g, 64);
        let r = 1 + rng::index(&mut g, 8.min(d));
        let n = 1 + rng::index(&mut g, 5);
        let rescale = rng::index(&mut g, 2) == 1;
        let mut parts = Vec::new();
        for _ in 0..n {
            let a = Matrix::from_fn(r, d, |_, _| rng::normal(&mut g));
            let b = Matrix::from_fn(d, r, |_, _| rng::normal(&mut g));
            let mut bits: Vec<bool> = (0..d).map(|_| rng::index(&mut g, 2) == 1).collect();
            bits[rng::index(&mut g, d)] = true;
            parts.push((AdapterPair::new(a, b).unwrap(), DocMask::pack(&bits), bits, rng::uniform(&mut g, 0.1, 1.0)));
        }
        let total: f64 = parts.iter().map(|p| p.3).sum();
        let entries: Vec<MergeEntry> = parts.iter().map(|p| MergeEntry { weight: p.3 / total, mask: &p.1, adapter: &p.0 }).collect();
        let got = merge(&entries, rescale).map_err(|e| e.to_string())?;
        // dense oracle: zero masked rows of B, multiply, scale, sum
        let mut want = vec![0.0; d * d];
        for (adapter, _, bits, w) in &parts {
            let on = bits.iter().filter(|b| **b).count() as f64;
            let lam = if rescale { d as f64 / on } else { 1.0 };
            for i in 0..d {
                for j in 0..d {
                    let mut s = 0.0;
                    for l in 0..r {
                        let b = if bits[i] { adapter.b().get(i, l) } else { 0.0 };
                        s += b * adapter.a().get(l, j);
                    }
                    want[i * d + j] += w / total * lam * s;
                }
            }
        }
        let num: f64 = got.as_slice().iter().zip(&want).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den: f64 = want.iter().map(|y| y * y).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        worst = worst.max(num / den);
    }
    check!(worst <= 1e-10, "worst relative Frobenius error {worst:.3e}");
    Ok(format!("100 instances, worst relative error {worst:.3e}"))
}

fn gradient_check() -> Outcome {
    let rows = gradcheck(24, 1e-5, 3).map_err(|e| e.to_string())?;
    let worst = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    check!(rows.len() >= 20, "only {} fixtures", rows.len());
    check!(worst <= 1e-4, "worst relative error {worst:.3e}");
    Ok(format!("{} fixtures, worst relative error {worst:.3e}", rows.len()))
}

fn selection_gap() -> Outcome {
    let check = selection_check(200, 0).map_err(|e| e.to_string())?;
    check!(check.lambda0_mismatches == 0, "{} greedy/optimum mismatches at lambda 0", check.lambda0_mismatches);
    check!(check.threshold_violations == 0, "{} threshold violations", check.threshold_violations);
    // First seeded run: 0.5 -> 0.99928, 1 -> 0.99692, 2 -> 0.97996.
    let floors = [("0.5", 0.9992), ("1", 0.9969), ("2", 0.9799)];
    for (lambda, floor) in floors {
        let got = check.mean_ratio[lambda];
        check!(got >= floor, "mean ratio {got:.5} at lambda {lambda} fell below {floor}");
    }
    Ok(format!(
        "lambda 0 exact on 200/200; mean ratios 0.5: {:.5}, 1: {:.5}, 2: {:.5}",
        check.mean_ratio["0.5"], check.mean_ratio["1"], check.mean_ratio["2"]
    ))
}

fn reduction() -> Outcome {
    let all6 = reduction_check(6, None, 0).map_err(|e| e.to_string())?;
    check!(all6.graphs == 1 << 15, "enumerated {} graphs", all6.graphs);
    check!(all6.mismatches == 0, "{} mismatches over all 6-vertex graphs", all6.mismatches);
    let sample8 = reduction_check(8, Some(500), 5).map_err(|e| e.to_string())?;
    check!(sample8.mismatches == 0, "{} mismatches over 500 8-vertex graphs", sample8.mismatches);
    Ok(format!("{} + {} instances, 0 mismatches", all6.instances, sample8.instances))
}

fn overhead() -> Outcome {
    let cfg = ExperimentConfig::default();
    let report = bench_overhead(&cfg, &[1, 2, 4, 8, 16], &[1, 2, 3, 5, 8, 10]).map_err(|e| e.to_string())?;
    let c8 = report.storage.iter().find(|r| r.cap == 8).unwrap();
    check!(c8.num_docs == 80, "fixture has {} documents", c8.num_docs);
    check!(close(c8.adapter_ratio, 0.125, 1e-12), "adapter ratio {} at c = 8", c8.adapter_ratio);
    check!((c8.adapter_ratio - 0.1267).abs() <= 0.02, "adapter ratio {} is not within 2 points of 12.67%", c8.adapter_ratio);
    for r in &report.storage {
        let want = (r.num_docs as usize).div_ceil(r.cap) as f64 / r.num_docs as f64;
        check!(close(r.adapter_ratio, want, 1e-12), "adapter ratio {} at c = {}, want {want}", r.adapter_ratio, r.cap);
        check!(r.mask_ratio < 0.02, "mask overhead {} at c = {}", r.mask_ratio, r.cap);
    }
    let ours: Vec<f64> = report.comm.iter().map(|r| r.full_bytes).collect();
    let naive: Vec<f64> = report.comm.iter().map(|r| r.naive_bytes).collect();
    let ours_spread = ours.iter().cloned().fold(f64::MIN, f64::max) / ours.iter().cloned().fold(f64::MAX, f64::min);
    check!(ours_spread < 1.5, "full-protocol bytes vary {ours_spread:.2}x over k");
    check!(naive.windows(2).all(|w| w[1] > w[0]), "baseline bytes not increasing in k: {naive:?}");
    let ks: Vec<f64> = report.comm.iter().map(|r| r.k as f64).collect();
    let per_k: Vec<f64> = naive.iter().zip(&ks).map(|(b, k)| b / k).collect();
    let slope_spread = per_k.iter().cloned().fold(f64::MIN, f64::max) / per_k.iter().cloned().fold(f64::MAX, f64::min);
    check!(slope_spread < 1.25, "baseline bytes per unit k vary {slope_spread:.2}x");
    let at10 = report.comm.iter().find(|r| r.k == 10).unwrap().ratio;
    check!(at10 < 0.15, "ratio at k = 10 is {at10:.4}");
    Ok(format!(
        "adapter ratio {:.4} at c = 8, mask ratio {:.4}, comm ratio {:.4} at k = 10, full-protocol spread {:.2}x",
        c8.adapter_ratio, c8.mask_ratio, at10, ours_spread
    ))
}

fn interference() -> Outcome {
    let cfg = ExperimentConfig::default();
    let group = grouping_curve(&cfg, &[1, 5, 10, 20]).map_err(|e| e.to_string())?;
    for w in group.windows(2) {
        check!(
            w[1].random_unmasked_f1 <= w[0].random_unmasked_f1,
            "random grouping F1 rose from c = {} to c = {}",
            w[0].c,
            w[1].c
        );
    }
    for p in &group[1..] {
        check!(p.clustered_masked_f1 >= p.random_unmasked_f1, "clustered+masked below random grouping at c = {}", p.c);
    }
    let agg_cfg = ExperimentConfig { doc_replicas: 4, adapter_epochs: 12, ..ExperimentConfig::default() };
    let agg = aggregation_curve(&agg_cfg, &[1, 2, 3, 4, 6, 10, 20]).map_err(|e| e.to_string())?;
    let all: Vec<f64> = agg.iter().map(|p| p.aggregate_all_f1).collect();
    let peak = all.iter().cloned().fold(f64::MIN, f64::max);
    let (first, last) = (all[0], *all.last().unwrap());
    check!(peak > first, "aggregate-all never rises above {first}: {all:?}");
    check!(last < peak, "aggregate-all does not fall from its peak: {all:?}");
    let sel_last = agg.last().unwrap().selective_f1;
    check!(sel_last >= last, "selective {sel_last} below aggregate-all {last} at the largest count");

    // First seeded run, c = 1, 5, 10, 20.
    let pinned_group = [(0.976667, 0.979167), (0.891667, 0.968333), (0.666667, 0.910833), (0.405, 0.789167)];
    for (p, (r, m)) in group.iter().zip(pinned_group) {
        check!(close(p.random_unmasked_f1, r, 1e-5) && close(p.clustered_masked_f1, m, 1e-5), "grouping point {p:?} moved from ({r}, {m})");
    }
    for (got, want) in agg.iter().zip(PINNED_AGGREGATE) {
        check!(
            close(got.aggregate_all_f1, want.0, 1e-5) && close(got.selective_f1, want.1, 1e-5),
            "aggregation point {got:?} moved from {want:?}"
        );
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    Ok(format!(
        "grouping random [{}] masked [{}]; aggregate-all [{}], selective final {:.3}",
        fmt(&group.iter().map(|p| p.random_unmasked_f1).collect::<Vec<_>>()),
        fmt(&group.iter().map(|p| p.clustered_masked_f1).collect::<Vec<_>>()),
        fmt(&all),
        sel_last
    ))
}

// First seeded run of the replicated-corpus fixture, counts 1, 2, 3, 4, 6, 10, 20.
const PINNED_AGGREGATE: [(f64, f64); 7] = [
    (0.669167, 0.662917),
    (0.787500, 0.777083),
    (0.732917, 0.762083),
    (0.491667, 0.762083),
    (0.037500, 0.762083),
    (0.0, 0.762083),
    (0.0, 0.762083),
];

fn mask_training() -> Outcome {
    let cfg = ExperimentConfig::default();
    let fixture = build_fixture(&cfg, cfg.cap, false).map_err(|e| e.to_string())?;
    let silo_cfg = cfg.silo_config(cfg.cap, true);
    let silo = fixture.silos.iter().max_by_key(|s| s.corpus.len()).unwrap();
    let mut sparsity = [0.0; 2];
    let mut dropped = 0;
    for doc in &silo.corpus {
        let (_, adapter) = silo.adapter_for(doc.doc_id).unwrap();
        let aug = augment(doc, silo_cfg.rewrites, silo_cfg.qa_pairs, silo_cfg.seed).map_err(|e| e.to_string())?;
        for (slot, l1) in [0.01, 0.0].into_iter().enumerate() {
            let mcfg = MaskTrainConfig { lambda_l1: l1, ..silo_cfg.mask };
            let out = train_mask(&fixture.model, adapter, &aug, &mcfg).map_err(|e| e.to_string())?;
            let (first, last) = (out.history.first().unwrap().0, out.history.last().unwrap().0);
            if slot == 0 {
                check!(last < first, "doc {}: next-token loss {first} -> {last}", doc.doc_id);
                dropped += 1;
            }
            sparsity[slot] += 1.0 - out.mask.popcount() as f64 / out.mask.len() as f64;
        }
    }
    let n = silo.corpus.len() as f64;
    let (with, without) = (sparsity[0] / n, sparsity[1] / n);
    check!(with >= without, "sparsity {with} with l1 below {without} without");
    Ok(format!("loss fell on {dropped}/{} docs; sparsity {with:.4} (l1 0.01) vs {without:.4} (l1 0)", silo.corpus.len()))
}

fn locality() -> Outcome {
    // Schema level: any field able to hold query or document text must
    // only travel server -> silo.
    let schemas: [(&str, &[WireField], Direction); 4] = [
        ("QueryBroadcast", QueryBroadcast::SCHEMA, QueryBroadcast::DIRECTION),
        ("CandidateUpload", CandidateUpload::SCHEMA, CandidateUpload::DIRECTION),
        ("AdapterRequest", AdapterRequest::SCHEMA, AdapterRequest::DIRECTION),
        ("AdapterUpload", AdapterUpload::SCHEMA, AdapterUpload::DIRECTION),
    ];
    let mut upstream_fields = 0;
    for (name, schema, dir) in schemas {
        for f in schema {
            if dir == Direction::SiloToServer {
                upstream_fields += 1;
                check!(f.kind != FieldKind::QueryToken, "{name}.{} can carry tokens upstream", f.name);
            }
        }
    }
    // Fuzzed end to end: seeded configs, real and random queries.
    let mut streams = 0usize;
    for seed in 0..3u64 {
        let cfg = ExperimentConfig { seed, num_topics: 4, facts_per_topic: 6, adapter_epochs: 10, mask_epochs: 8, ..ExperimentConfig::default() };
        let fixture = build_fixture(&cfg, cfg.cap, true).map_err(|e| e.to_string())?;
        let mut g = rng::stream(seed, 0x10CA1);
        let mut queries: Vec<Vec<u32>> = fixture.corpus.queries.iter().map(|q| q.tokens.clone()).collect();
        for _ in 0..20 {
            let len = 1 + rng::index(&mut g, 6);
            queries.push((0..len).map(|_| rng::index(&mut g, cfg.vocab_size) as u32).collect());
        }
        let needles: Vec<(Vec<u8>, Vec<u8>)> = fixture
            .silos
            .iter()
            .flat_map(|s| s.corpus.iter())
            .map(|d| (d.tokens.iter().flat_map(|t| t.to_le_bytes()).collect(), d.tokens.iter().map(|&t| t as u8).collect()))
            .collect();
        let mut qcfg = cfg.query_config();
        for (i, q) in queries.iter().enumerate() {
            qcfg.selection.tau = if i % 2 == 0 { 0.0 } else { cfg.tau };
            let mut ledger = Ledger::recording();
            Server::default().run_query(&fixture.model, &fixture.silos, q, &qcfg, &mut ledger).map_err(|e| e.to_string())?;
            for (kind, silo, bytes) in &ledger.upstream {
                streams += 1;
                for (wide, narrow) in &needles {
                    let hit = |n: &[u8]| bytes.windows(n.len()).any(|w| w == n);
                    check!(!hit(wide) && !hit(narrow), "{kind:?} from silo {silo} carries a document token sequence");
                }
            }
        }
    }
    Ok(format!("{upstream_fields} upstream fields token-free; {streams} upstream streams clean"))
}

fn determinism() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_parafed");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(exe).args(["--seed", "7", "--out-dir"]).arg(d.path()).arg("run").output().map_err(|e| e.to_string())?;
        check!(status.status.success(), "run failed: {}", String::from_utf8_lossy(&status.stderr));
    }
    let read = |p: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        let mut files: Vec<_> = std::fs::read_dir(p)
            .map_err(|e| e.to_string())?
            .map(|e| e.unwrap().path())
            .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap()))
            .collect();
        files.sort();
        Ok(files)
    };
    let (a, b) = (read(dirs[0].path())?, read(dirs[1].path())?);
    check!(a.len() == 2 * Mode::ALL.len(), "expected {} report files, found {}", 2 * Mode::ALL.len(), a.len());
    check!(a == b, "report files differ between identical runs");
    Ok(format!("{} report files byte-identical across two runs", a.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("codec exactness", codec_exactness),
        ("merge oracle equivalence", merge_oracle),
        ("gradient check", gradient_check),
        ("selection exactness and gap", selection_gap),
        ("clique reduction", reduction),
        ("overhead arithmetic", overhead),
        ("interference directions", interference),
        ("mask training behavior", mask_training),
        ("locality audit", locality),
        ("determinism", determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({secs:.1} s) {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({secs:.1} s) {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} failed, {:.1} s total", failed, start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
