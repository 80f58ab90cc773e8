//! Acceptance suite: one PASS/FAIL line per criterion, then a nonzero exit
//! if any criterion failed.
//!
//! cargo test --release --test acceptance
//!
//! Set `ACCEPTANCE_SKIP=6,7` to skip the slow end-to-end runs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radfiner::attention::{ball_query, ball_query_brute_force, PadMode, PairList, RadiusAttention};
use radfiner::cli::{self, all_moving, bench_latency, bench_ball_query};
use radfiner::layers::{Ctx, Mode};
use radfiner::metrics::PanopticStats;
use radfiner::network::{Network, NetworkConfig};
use radfiner::numerics::{ParamStore, Tensor};
use radfiner::pipeline::{baseline_panoptic, evaluate, panoptic, ClassSource, Combine};
use radfiner::refinement::{refine, RefineMode};
use radfiner::scan::{PanopticPrediction, SemanticClass, NUM_CLASSES};
use radfiner::synth::{generate_corpus, GeneratorConfig};
use radfiner::training::{
    consistency_hard, cross_entropy, lovasz_softmax, objective_gradient_check, train, AugmentConfig, TrainConfig,
    TrainData,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let report = objective_gradient_check(&NetworkConfig::toy(), 20, 1, 1e-5).map_err(|e| e.to_string())?.report;
    let secs = t.elapsed().as_secs_f64();
    let (_, store) = Network::new(&NetworkConfig::toy()).map_err(|e| e.to_string())?;
    let checked: BTreeSet<&str> = report.tensors.iter().map(|t| t.name.as_str()).collect();
    let mut missing: Vec<&str> = store.params().iter().map(|p| p.name.as_str()).filter(|n| !checked.contains(n)).collect();
    missing.extend(["loss.ce", "loss.lovasz", "loss.consistency"].iter().filter(|n| !checked.contains(*n)));
    let worst = report.tensors.iter().max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error)).unwrap();
    check(
        worst.max_relative_error < 1e-4 && missing.is_empty() && secs < 120.0,
        format!(
            "{} tensors, max rel err {:.2e} ({}) < 1e-4, missing {missing:?}, {secs:.1}s < 120s",
            report.tensors.len(),
            worst.max_relative_error,
            worst.name
        ),
    )
}

fn c2_attention() -> Outcome {
    let (width, radius, nmax) = (4, 2.0, 8);
    let mut worst_sum = 0.0f64;
    let mut locality_violations = 0;
    let mut locality_probes = 0;
    let mut oracle_mismatches = 0;
    for set in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + set);
        let n = rng.random_range(5..40);
        let side = rng.random_range(3.0..10.0);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..side), rng.random_range(0.0..side)]).collect();
        let nb = ball_query(&pts, radius, nmax).map_err(|e| e.to_string())?;
        if nb != ball_query_brute_force(&pts, radius, nmax).map_err(|e| e.to_string())? {
            oracle_mismatches += 1;
        }
        let mut store = ParamStore::new();
        let layer = RadiusAttention::new(&mut store, &mut rng, "attn", width);
        let pairs = PairList::build(&[&nb], PadMode::Mask).map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..n * width).map(|_| rng.random_range(-1.0..1.0)).collect();
        let run = |x: Vec<f64>| -> Result<(Tensor, Tensor), String> {
            let mut ctx = Ctx::new(&store, Mode::Infer);
            let v = ctx.graph.leaf(Tensor::matrix(n, width, x).map_err(|e| e.to_string())?);
            let tr = layer.forward_traced(&mut ctx, v, &pairs).map_err(|e| e.to_string())?;
            Ok((ctx.graph.value(tr.output).clone(), ctx.graph.value(tr.weights).clone()))
        };
        let (out, w) = run(x.clone())?;
        for i in 0..n {
            for c in 0..width {
                let s: f64 = (pairs.offsets[i]..pairs.offsets[i + 1]).map(|p| w.at2(p, c)).sum();
                worst_sum = worst_sum.max((s - 1.0).abs());
            }
        }
        let anchor = rng.random_range(0..n);
        let far: Vec<usize> = (0..n)
            .filter(|&j| {
                let d = (pts[j][0] - pts[anchor][0]).hypot(pts[j][1] - pts[anchor][1]);
                d > radius
            })
            .collect();
        if let Some(&j) = far.choose(&mut rng) {
            let mut y = x.clone();
            for c in 0..width {
                y[j * width + c] += rng.random_range(-5.0..5.0);
            }
            let (out2, _) = run(y)?;
            locality_probes += 1;
            if out.row(anchor) != out2.row(anchor) {
                locality_violations += 1;
            }
        }
    }
    check(
        worst_sum <= 1e-12 && locality_violations == 0 && oracle_mismatches == 0,
        format!(
            "weight sums |Σ−1| max {worst_sum:.1e} ≤ 1e-12, {locality_violations}/{locality_probes} locality changes, \
             {oracle_mismatches}/100 ball-query mismatches"
        ),
    )
}

fn c3_losses() -> Outcome {
    use SemanticClass::*;
    let e = |r: radfiner::Result<f64>| r.map_err(|e| e.to_string());
    let pure = e(consistency_hard(&[Car, Car, Car], &[1, 1, 1]))?;
    let quarter = e(consistency_hard(&[Car, Truck, Bike, Static], &[1, 1, 2, 0]))?;
    let three = e(consistency_hard(&[Car, Truck, Bike], &[4, 4, 4]))?;
    let n = 7;
    let targets: Vec<usize> = (0..n).map(|i| i % NUM_CLASSES).collect();
    let ce = cross_entropy(&Tensor::zeros(&[n, NUM_CLASSES]), &targets).map_err(|e| e.to_string())?.value;
    let mut hard = Tensor::zeros(&[n, NUM_CLASSES]);
    for (i, &t) in targets.iter().enumerate() {
        hard.data_mut()[i * NUM_CLASSES + t] = 1000.0;
    }
    let lovasz = lovasz_softmax(&hard, &targets).map_err(|e| e.to_string())?.value;
    check(
        pure == 0.0
            && quarter == 0.25
            && (three - 2.0 / 3.0).abs() < 1e-15
            && (ce - 6f64.ln()).abs() <= 1e-12
            && lovasz.abs() <= 1e-12,
        format!(
            "consistency {pure} / {quarter} / {three:.15}, CE(uniform) − ln 6 = {:.1e}, Lovász(perfect) = {lovasz:.1e}",
            ce - 6f64.ln()
        ),
    )
}

/// `c`, `p`, `g`, `b`, `t` followed by an id are things, `s` is static.
/// Ids are scoped by class, so `c1` and `t1` are different instances.
fn micro(spec: &str) -> PanopticPrediction {
    let mut semantic = Vec::new();
    let mut instance_id = Vec::new();
    for tok in spec.split_whitespace() {
        let (k, id) = tok.split_at(1);
        let class = match k {
            "s" => SemanticClass::Static,
            "c" => SemanticClass::Car,
            "p" => SemanticClass::Pedestrian,
            "g" => SemanticClass::PedestrianGroup,
            "b" => SemanticClass::Bike,
            "t" => SemanticClass::Truck,
            _ => panic!("bad token {tok}"),
        };
        semantic.push(class);
        instance_id.push(if class.is_thing() { 100 * class.code() as u32 + id.parse::<u32>().unwrap() } else { 0 });
    }
    PanopticPrediction {
        scan_id: "micro".into(),
        moving: semantic.iter().map(|c| c.is_thing()).collect(),
        semantic,
        instance_id,
    }
}

/// Brute-force PQ and IoU: every segment pair is compared directly.
#[derive(Default)]
struct Oracle {
    iou_sum: [f64; NUM_CLASSES],
    tp: [u64; NUM_CLASSES],
    fp: [u64; NUM_CLASSES],
    fn_: [u64; NUM_CLASSES],
    inter: [u64; NUM_CLASSES],
    union: [u64; NUM_CLASSES],
    seen: [bool; NUM_CLASSES],
}

impl Oracle {
    fn add(&mut self, gt: &PanopticPrediction, pr: &PanopticPrediction) {
        let segs = |l: &PanopticPrediction, c: SemanticClass| -> Vec<BTreeSet<usize>> {
            let mut m: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
            for i in 0..l.len() {
                if l.semantic[i] == c {
                    m.entry(if c.is_thing() { l.instance_id[i] } else { 0 }).or_default().insert(i);
                }
            }
            m.into_values().collect()
        };
        for c in SemanticClass::ALL {
            let k = c.code();
            let (g, p) = (segs(gt, c), segs(pr, c));
            let mut scan_sum = 0.0;
            let mut used = vec![false; p.len()];
            for a in &g {
                let mut hit = false;
                for (j, b) in p.iter().enumerate() {
                    let i = a.intersection(b).count();
                    let u = a.union(b).count();
                    if i as f64 / u as f64 > 0.5 {
                        scan_sum += i as f64 / u as f64;
                        used[j] = true;
                        hit = true;
                    }
                }
                if hit {
                    self.tp[k] += 1;
                } else {
                    self.fn_[k] += 1;
                }
            }
            self.iou_sum[k] += scan_sum;
            self.fp[k] += used.iter().filter(|&&u| !u).count() as u64;
            for i in 0..gt.len() {
                let (a, b) = (gt.semantic[i] == c, pr.semantic[i] == c);
                self.inter[k] += (a && b) as u64;
                self.union[k] += (a || b) as u64;
                self.seen[k] |= a || b;
            }
        }
    }

    fn pq(&self, k: usize) -> Option<f64> {
        self.seen[k].then(|| {
            let d = self.tp[k] as f64 + 0.5 * (self.fp[k] + self.fn_[k]) as f64;
            if d > 0.0 {
                self.iou_sum[k] / d
            } else {
                0.0
            }
        })
    }

    fn iou(&self, k: usize) -> Option<f64> {
        self.seen[k].then(|| self.inter[k] as f64 / self.union[k] as f64)
    }
}

fn relabel(p: &PanopticPrediction, rng: &mut ChaCha8Rng) -> PanopticPrediction {
    let ids: BTreeSet<u32> = p.instance_id.iter().copied().filter(|&i| i != 0).collect();
    let mut fresh: Vec<u32> = (1..=1000).collect();
    fresh.shuffle(rng);
    let map: BTreeMap<u32, u32> = ids.into_iter().zip(fresh).collect();
    let mut q = p.clone();
    for id in q.instance_id.iter_mut().filter(|i| **i != 0) {
        *id = map[id];
    }
    q
}

fn c4_metrics() -> Outcome {
    let scans = [
        ("c1 c1 c1 c1 c1 s s s", "c1 c1 c1 c1 s s s c2"),
        ("c1 c1 c1 p2 p2 s s", "c5 c5 c5 p9 p9 s s"),
        ("c1 c1 c1 c1 s s", "c1 c1 t1 t1 s s"),
        ("t1 t1 t1 t2 t2 t2 s", "t1 t1 t1 t1 t1 t1 s"),
        ("g1 g1 g1 g1 s s s s", "g1 g1 g1 s s s s g2"),
        ("b1 b1 p2 p2 s", "s s s s s"),
        ("s s s s", "c1 c1 s s"),
        ("c1 c1 c2 c2 c3 c3 s", "c1 c1 c1 c2 c2 c2 s"),
        ("p1 p2 p3 s s", "p1 p2 p4 s p5"),
        ("c1 c1 c1 b2 b2 b2 t3 t3 t3 s s s", "c1 c1 b1 b2 b2 b2 t3 t3 s s s t3"),
    ];
    let mut stats = PanopticStats::new();
    let mut oracle = Oracle::default();
    for (g, p) in scans {
        let (g, p) = (micro(g), micro(p));
        stats.accumulate(&g, &p).map_err(|e| e.to_string())?;
        oracle.add(&g, &p);
    }
    let mut mismatches = 0;
    for (k, (pq, iou)) in stats.pq_per_class().iter().zip(stats.iou_per_class()).enumerate() {
        mismatches += (*pq != oracle.pq(k)) as usize + (iou != oracle.iou(k)) as usize;
    }

    let mut single = PanopticStats::new();
    single
        .accumulate(&micro("c1 c1 c1 c1 c1 s s s s"), &micro("c1 c1 c1 c1 s s s s c2"))
        .map_err(|e| e.to_string())?;
    let pq_case = single.pq_per_class()[SemanticClass::Car.code()].unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut variant = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let gen = |rng: &mut ChaCha8Rng| {
            let toks: Vec<String> = (0..n)
                .map(|_| {
                    let k = ["s", "c", "p", "g", "b", "t"][rng.random_range(0..6)];
                    format!("{k}{}", rng.random_range(1..5))
                })
                .collect();
            micro(&toks.join(" "))
        };
        let g = gen(&mut rng);
        let p = gen(&mut rng);
        let mut a = PanopticStats::new();
        a.accumulate(&g, &p).map_err(|e| e.to_string())?;
        let mut b = PanopticStats::new();
        b.accumulate(&relabel(&g, &mut rng), &relabel(&p, &mut rng)).map_err(|e| e.to_string())?;
        variant += (a != b) as usize;
    }
    check(
        mismatches == 0 && (pq_case - 0.8 / 1.5).abs() <= 1e-9 && variant == 0,
        format!(
            "{mismatches} per-class mismatches against the oracle on 10 micro-scans, PQ_car {pq_case:.5} (0.53333), \
             {variant}/100 relabelings changed the stats"
        ),
    )
}

fn c5_refinement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut failures = BTreeMap::<&str, usize>::new();
    for _ in 0..1000 {
        let n = rng.random_range(0..60);
        let ids: Vec<u32> = (0..n).map(|_| rng.random_range(0..6)).collect();
        let classes: Vec<SemanticClass> = (0..n).map(|_| SemanticClass::ALL[rng.random_range(0..NUM_CLASSES)]).collect();
        let (out, cls) = refine(&ids, &classes, RefineMode::Split).map_err(|e| e.to_string())?;
        if out.len() != n || cls.len() != n {
            *failures.entry("count").or_default() += 1;
            continue;
        }
        let mut class_of: BTreeMap<u32, BTreeSet<SemanticClass>> = BTreeMap::new();
        let mut source_of: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for i in 0..n {
            if out[i] != 0 {
                class_of.entry(out[i]).or_default().insert(cls[i]);
                source_of.entry(out[i]).or_default().insert(ids[i]);
            }
        }
        if class_of.values().any(|s| s.len() > 1) {
            *failures.entry("purity").or_default() += 1;
        }
        if source_of.values().any(|s| s.len() > 1) {
            *failures.entry("merge").or_default() += 1;
        }
        let (again, cls2) = refine(&out, &cls, RefineMode::Split).map_err(|e| e.to_string())?;
        if again != out || cls2 != cls {
            *failures.entry("idempotence").or_default() += 1;
        }
    }
    check(failures.is_empty(), format!("1000 fuzzed inputs, failures {failures:?}"))
}

struct EndToEnd {
    baseline: f64,
    aug: f64,
    noaug: f64,
    nmax4: f64,
    secs: f64,
}

fn end_to_end() -> Result<EndToEnd, String> {
    let t = Instant::now();
    let gen = GeneratorConfig::default();
    let (train_scans, _) = generate_corpus(&gen, "train", 250, 0).map_err(|e| e.to_string())?;
    let (test, test_preds) = generate_corpus(&gen, "test", 50, 0).map_err(|e| e.to_string())?;
    let (base, _) = evaluate(&test, &test_preds, baseline_panoptic).map_err(|e| e.to_string())?;
    let run = |aug: AugmentConfig, nmax: usize| -> Result<f64, String> {
        let net = NetworkConfig { nmax, ..NetworkConfig::desk() };
        let data = TrainData {
            train: &train_scans,
            val: &[],
            val_preds: &[],
        };
        let (tr, _) = train(&net, &TrainConfig::desk(), &aug, data, None, |_| {}).map_err(|e| e.to_string())?;
        let src = ClassSource::Network(&tr.network, &tr.store);
        let (s, _) = evaluate(&test, &test_preds, |s, p| panoptic(src, Combine::Refine(RefineMode::Split), s, p))
            .map_err(|e| e.to_string())?;
        Ok(s.panoptic_quality().1)
    };
    Ok(EndToEnd {
        baseline: base.panoptic_quality().1,
        aug: run(AugmentConfig::default(), 24)?,
        noaug: run(AugmentConfig::disabled(), 24)?,
        nmax4: run(AugmentConfig::default(), 4)?,
        secs: t.elapsed().as_secs_f64(),
    })
}

fn c6_refinement_value(e: &EndToEnd) -> Outcome {
    let (a, b) = (100.0 * (e.aug - e.baseline), 100.0 * (e.aug - e.noaug));
    check(
        a >= 2.0 && b >= 1.0,
        format!(
            "refined PQ {:.2} vs baseline {:.2}: +{a:.2} ≥ 2; augmented vs not {:.2}: +{b:.2} ≥ 1; {:.0}s",
            100.0 * e.aug,
            100.0 * e.baseline,
            100.0 * e.noaug,
            e.secs
        ),
    )
}

fn c7_nmax(e: &EndToEnd) -> Outcome {
    let d = 100.0 * (e.aug - e.nmax4);
    check(
        d >= 1.0,
        format!("refined PQ nmax=24 {:.2} vs nmax=4 {:.2}: +{d:.2} ≥ 1", 100.0 * e.aug, 100.0 * e.nmax4),
    )
}

fn c8_throughput() -> Outcome {
    let mut gen = GeneratorConfig::default();
    gen.set("target_points", "600").map_err(|e| e.to_string())?;
    let (scans, preds) = generate_corpus(&gen, "bench", 200, 8).map_err(|e| e.to_string())?;
    let (net, store) = Network::new(&NetworkConfig::paper()).map_err(|e| e.to_string())?;
    let (lat, points) =
        bench_latency(&net, &store, &scans, &preds, RefineMode::Split, 1, 10).map_err(|e| e.to_string())?;
    let worst: Vec<_> = scans[..5].iter().map(all_moving).collect();
    let (all, _) = bench_latency(&net, &store, &scans[..5], &worst, RefineMode::Split, 1, 1).map_err(|e| e.to_string())?;
    let (grid, brute) = bench_ball_query(2000, 5.0, 24, 8).map_err(|e| e.to_string())?;
    let hw = cli::Hardware::detect();
    check(
        lat.mean < 50.0 && brute / grid >= 5.0,
        format!(
            "600-point scans, paper config, {points} moving points per scan: mean {:.2} ms < 50 \
             (median {:.2}, p95 {:.2}; all 600 points through the network: {:.0} ms); \
             ball query N=2000 grid {grid:.2} ms vs brute force {brute:.2} ms = {:.1}x ≥ 5x; {} ({} cpus)",
            lat.mean,
            lat.median,
            lat.p95,
            all.mean,
            brute / grid,
            hw.cpu,
            hw.logical_cpus
        ),
    )
}

fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        if !rel.ends_with("manifest.json") {
            files.insert(rel, std::fs::read(&entry).unwrap());
        }
    }
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn c9_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for (k, workers) in [(0, "1"), (1, "1"), (2, "4")] {
        let d = root.path().join(format!("run{k}"));
        let p = |s: &str| d.join(s).to_string_lossy().into_owned();
        let commands: Vec<Vec<String>> = vec![
            vec!["generate", "--count", "12", "--seed", "3", "--prefix", "tr", "--out", &p("train")],
            vec!["generate", "--count", "6", "--seed", "4", "--prefix", "va", "--out", &p("val")],
            vec![
                "train", "--data", &p("train"), "--val", &p("val"), "--out", &p("model"), "--preset", "toy",
                "--epochs", "2", "--batch-size", "4", "--seed", "5",
            ],
            vec![
                "eval", "--data", &p("val"), "--source", "checkpoint", "--checkpoint", &p("model/ckpt_epoch02"),
                "--refine", "--out", &p("eval"),
            ],
            vec!["eval", "--data", &p("val"), "--out", &p("eval_surrogate")],
            vec!["gradcheck", "--points", "12", "--out", &p("gradcheck")],
        ]
        .into_iter()
        .map(|c| c.into_iter().map(String::from).collect())
        .collect();
        for c in commands {
            let argv = ["radfiner", "--workers", workers].into_iter().map(String::from).chain(c.clone());
            let code = cli::run_from(argv);
            if code != 0 {
                return Err(format!("`{}` exited {code}", c.join(" ")));
            }
        }
        runs.push(outputs(&d));
    }
    let differing: Vec<&String> = runs[0]
        .iter()
        .filter(|(k, v)| runs[1].get(*k) != Some(v) || runs[2].get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    check(
        differing.is_empty() && runs[0].len() == runs[2].len(),
        format!("{} files identical across two --workers 1 runs and one --workers 4 run, differing {differing:?}", runs[0].len()),
    )
}

fn main() {
    let skip: BTreeSet<usize> = std::env::var("ACCEPTANCE_SKIP")
        .unwrap_or_default()
        .split(',')
        .filter_map(|s| s.trim().parse().ok())
        .collect();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Option<Outcome>| match outcome {
        None => println!("criterion {n} {name}: SKIP"),
        Some(Ok(d)) => println!("criterion {n} {name}: PASS  {d}"),
        Some(Err(d)) => {
            failed += 1;
            println!("criterion {n} {name}: FAIL  {d}");
        }
    };
    let run = |n: usize, f: fn() -> Outcome| (!skip.contains(&n)).then(f);
    report(1, "gradient fidelity", run(1, c1_gradients));
    report(2, "attention contracts", run(2, c2_attention));
    report(3, "loss values", run(3, c3_losses));
    report(4, "metrics oracle", run(4, c4_metrics));
    report(5, "refinement properties", run(5, c5_refinement));
    let e2e = (!skip.contains(&6) || !skip.contains(&7)).then(end_to_end);
    let outcome = |n: usize, f: fn(&EndToEnd) -> Outcome| match (&e2e, skip.contains(&n)) {
        (_, true) | (None, _) => None,
        (Some(Ok(e)), false) => Some(f(e)),
        (Some(Err(err)), false) => Some(Err(err.clone())),
    };
    report(6, "end-to-end refinement value", outcome(6, c6_refinement_value));
    report(7, "neighborhood size direction", outcome(7, c7_nmax));
    report(8, "throughput", run(8, c8_throughput));
    report(9, "determinism", run(9, c9_determinism));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
