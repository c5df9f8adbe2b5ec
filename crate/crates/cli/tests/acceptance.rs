//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Set PARTFUSE_GOLDEN_DIR to a directory holding a YMU `manifest.csv` and
//! `embeddings.csv` (and optionally `provider_map.txt`) to run golden mode.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use partfuse::embedding::{score_trials, EmbeddingStore, Label, ProviderMap, ScoreTable, TrialPair, TrialScoreVector};
use partfuse::fusion::{best_combination, train_llr, LlrConfig, LlrProblem};
use partfuse::landmarks::{crop_holistic, crop_parts4, crop_thirds3, CropConfig, LandmarkSet, Point, RegionCrop};
use partfuse::metrics::ScoreSet;
use partfuse::protocol::{
    build_trials, parse_manifests, run_cross_dataset, run_single_dataset_eer, ImpostorPolicy, ProtocolConfig,
    TrialMode,
};
use partfuse::synth::{generate, ScenarioSpec};
use partfuse::RegionTag;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<String, String>;
type Criterion = Box<dyn FnOnce() -> Outcome>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    }};
}

// ---------------------------------------------------------------- metrics

/// Mix of tied grid values and continuous draws, 1..=50 per class.
fn random_scores(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(1..=50);
    (0..n)
        .map(|_| {
            if rng.random_bool(0.5) {
                rng.random_range(0..12) as f64 / 4.0
            } else {
                rng.random_range(-1.0..4.0)
            }
        })
        .collect()
}

/// Every decision is "accept scores ≥ s" for an observed s, or accept none.
fn brute_force_eer(gen: &[f64], imp: &[f64]) -> f64 {
    let mut best: Option<(f64, f64)> = None;
    for t in gen.iter().chain(imp).copied().chain([f64::INFINITY]) {
        let far = imp.iter().filter(|&&s| s >= t).count() as f64 / imp.len() as f64;
        let frr = gen.iter().filter(|&&s| s < t).count() as f64 / gen.len() as f64;
        let key = ((far - frr).abs(), (far + frr) / 2.0);
        if best.is_none_or(|b| key < b) {
            best = Some(key);
        }
    }
    best.unwrap().1
}

fn eer_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..500 {
        let (gen, imp) = (random_scores(&mut rng), random_scores(&mut rng));
        let got = ScoreSet::new(gen.clone(), imp.clone()).map_err(|e| e.to_string())?.eer().eer;
        let want = brute_force_eer(&gen, &imp);
        ensure!(got == want, "set {i}: sweep {got} vs brute force {want}");
    }
    Ok("500 sets, exact match".into())
}

fn hter_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let (gen, imp) = (random_scores(&mut rng), random_scores(&mut rng));
        let bound = 1.0 / gen.len().min(imp.len()) as f64;
        let set = ScoreSet::new(gen, imp).map_err(|e| e.to_string())?;
        let p = set.eer();
        let gap = set.hter_at(p.threshold).hter.unwrap() - p.eer;
        ensure!(gap <= bound, "set {i}: gap {gap} above {bound}");
        worst = worst.max(gap / bound);
    }
    Ok(format!("200 sets, worst gap {worst:.3} of bound"))
}

// ---------------------------------------------------------------- fusion

fn table(rows: &[(Label, Vec<f64>)], regions: &[RegionTag]) -> ScoreTable {
    ScoreTable {
        regions: regions.to_vec(),
        rows: rows
            .iter()
            .enumerate()
            .map(|(i, (l, s))| TrialScoreVector {
                trial: TrialPair::new(format!("a{i}"), format!("b{i}"), *l),
                scores: s.clone(),
            })
            .collect(),
    }
}

/// Overlapping classes, so the loss minimum is attained.
fn random_rows(rng: &mut ChaCha8Rng, k: usize) -> Vec<(Label, Vec<f64>)> {
    let n_gen = rng.random_range(30..60);
    let n_imp = rng.random_range(40..120);
    let shift: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.4)).collect();
    (0..n_gen + n_imp)
        .map(|i| {
            let label = if i < n_gen { Label::Genuine } else { Label::Impostor };
            let s = (0..k)
                .map(|j| {
                    let noise: f64 = rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0);
                    0.3 * noise + if label == Label::Genuine { shift[j] } else { 0.0 }
                })
                .collect();
            (label, s)
        })
        .collect()
}

fn llr_correctness() -> Check {
    const REGIONS: [RegionTag; 5] =
        [RegionTag::Holistic, RegionTag::Nose, RegionTag::Mouth, RegionTag::ThirdLower, RegionTag::ThirdUpper];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = LlrConfig::default();
    let (mut worst_fd, mut worst_swap): (f64, f64) = (0.0, 0.0);
    for i in 0..100 {
        let k = rng.random_range(2..=5);
        let rows = random_rows(&mut rng, k);
        let regions = &REGIONS[..k];

        let p = LlrProblem::new(rows.iter().map(|r| r.1.clone()).collect(), rows.iter().map(|r| r.0).collect(), 0.0)
            .map_err(|e| e.to_string())?;
        let x: Vec<f64> = (0..=k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g = p.gradient(&x);
        for j in 0..=k {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[j] += 1e-6;
            dn[j] -= 1e-6;
            let fd = (p.loss(&up) - p.loss(&dn)) / 2e-6;
            let rel = (fd - g[j]).abs() / g[j].abs().max(1e-3);
            ensure!(rel < 1e-5, "instance {i} component {j}: relative error {rel:e}");
            worst_fd = worst_fd.max(rel);
        }

        let t = table(&rows, regions);
        let fused = train_llr(&t, &cfg, "acc").map_err(|e| e.to_string())?;
        ensure!(fused.train_meta.converged, "instance {i}: fused fit did not converge");
        for r in regions {
            let single = train_llr(&t.select(&[*r]).unwrap(), &cfg, "acc").map_err(|e| e.to_string())?;
            ensure!(
                fused.train_meta.final_loss <= single.train_meta.final_loss + 1e-9,
                "instance {i}: fused loss {} above {r} loss {}",
                fused.train_meta.final_loss,
                single.train_meta.final_loss
            );
        }

        let swapped: Vec<_> = rows.iter().map(|(l, s)| (l.swapped(), s.clone())).collect();
        let back = train_llr(&table(&swapped, regions), &cfg, "acc").map_err(|e| e.to_string())?;
        let params = fused.weights.iter().chain([&fused.bias]);
        let negated = back.weights.iter().chain([&back.bias]);
        for (a, b) in params.zip(negated) {
            ensure!((a + b).abs() < 1e-6, "instance {i}: swap gives {b} for {a}");
            worst_swap = worst_swap.max((a + b).abs());
        }
    }
    Ok(format!("100 instances, max fd rel err {worst_fd:.1e}, max swap residual {worst_swap:.1e}"))
}

// ---------------------------------------------------------------- geometry

fn template() -> Vec<Point> {
    let mut p = vec![Point::new(0.0, 0.0); 68];
    for (i, q) in p.iter_mut().enumerate().take(17) {
        let t = std::f64::consts::PI * i as f64 / 16.0;
        *q = Point::new(100.0 - 70.0 * t.cos(), 100.0 + 90.0 * t.sin());
    }
    for k in 0..5 {
        p[17 + k] = Point::new(45.0 + 10.0 * k as f64, 70.0 - (k % 2) as f64);
        p[22 + k] = Point::new(115.0 + 10.0 * k as f64, 70.0 - ((k + 1) % 2) as f64);
        p[31 + k] = Point::new(88.0 + 6.0 * k as f64, 125.0);
    }
    for k in 0..4 {
        p[27 + k] = Point::new(100.0, 85.0 + 10.0 * k as f64);
    }
    for k in 0..6 {
        let t = std::f64::consts::TAU * k as f64 / 6.0;
        p[36 + k] = Point::new(65.0 - 10.0 * t.cos(), 90.0 + 5.0 * t.sin());
        p[42 + k] = Point::new(135.0 - 10.0 * t.cos(), 90.0 + 5.0 * t.sin());
    }
    for k in 0..12 {
        let t = std::f64::consts::TAU * k as f64 / 12.0;
        p[48 + k] = Point::new(100.0 - 25.0 * t.cos(), 155.0 + 10.0 * t.sin());
    }
    for k in 0..8 {
        let t = std::f64::consts::TAU * k as f64 / 8.0;
        p[60 + k] = Point::new(100.0 - 15.0 * t.cos(), 155.0 + 5.0 * t.sin());
    }
    p
}

fn random_face(rng: &mut ChaCha8Rng) -> LandmarkSet {
    let scale = rng.random_range(0.5..3.0);
    let (tx, ty) = (rng.random_range(-50.0..300.0), rng.random_range(-50.0..300.0));
    let pts = template()
        .into_iter()
        .map(|p| {
            let (dx, dy) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            Point::new((p.x + dx) * scale + tx, (p.y + dy) * scale + ty)
        })
        .collect();
    LandmarkSet::new("s", "i", 640, 480, pts).unwrap()
}

fn all_crops(lm: &LandmarkSet) -> Result<Vec<RegionCrop>, String> {
    let cfg = CropConfig::default();
    let mut v = vec![crop_holistic(lm, &cfg).map_err(|e| e.to_string())?];
    v.extend(crop_parts4(lm, &cfg).map_err(|e| e.to_string())?);
    v.extend(crop_thirds3(lm, &cfg).map_err(|e| e.to_string())?);
    Ok(v)
}

fn geometry() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..1000 {
        let lm = random_face(&mut rng);
        let crops = all_crops(&lm)?;
        for c in crops.iter().filter(|c| !c.tag.is_third()) {
            ensure!((c.width() - c.height()).abs() < 1e-6, "face {i}: {} is {}x{}", c.tag, c.width(), c.height());
        }

        let thirds: Vec<&RegionCrop> = crops.iter().filter(|c| c.tag.is_third()).collect();
        let (u, m, l) = (thirds[0], thirds[1], thirds[2]);
        ensure!(
            u.bbox[3] == m.bbox[1] && m.bbox[3] == l.bbox[1] && l.bbox[3] == lm.point(8).y,
            "face {i}: thirds do not tile the face"
        );
        ensure!(
            thirds.iter().all(|c| (c.bbox[0], c.bbox[2]) == (u.bbox[0], u.bbox[2])),
            "face {i}: thirds differ in horizontal extent"
        );

        let (dx, dy) = (rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        let moved = all_crops(&lm.map_points(|p| Point::new(p.x + dx, p.y + dy)))?;
        for (a, b) in crops.iter().zip(&moved) {
            for k in 0..4 {
                let d = if k % 2 == 0 { dx } else { dy };
                ensure!((a.bbox[k] + d - b.bbox[k]).abs() < 1e-9, "face {i}: {} not translation equivariant", a.tag);
            }
        }

        let w = lm.image_width as f64;
        let mirrored = all_crops(&lm.mirrored())?;
        for c in &crops {
            let partner = match c.tag {
                RegionTag::LeftPeriocular => RegionTag::RightPeriocular,
                RegionTag::RightPeriocular => RegionTag::LeftPeriocular,
                t => t,
            };
            let m = mirrored.iter().find(|x| x.tag == partner).unwrap();
            let expect = [w - c.bbox[2], c.bbox[1], w - c.bbox[0], c.bbox[3]];
            for (got, want) in m.bbox.iter().zip(expect) {
                ensure!((got - want).abs() < 1e-6, "face {i}: {} breaks mirror symmetry", c.tag);
            }
        }
    }

    // mouth spans x 80..120, y 190..210
    let mut pts = template();
    for (k, p) in pts[48..68].iter_mut().enumerate() {
        *p = Point::new(80.0 + 40.0 * (k as f64 / 19.0), 190.0 + 20.0 * (k % 2) as f64);
    }
    let lm = LandmarkSet::new("s", "i", 256, 256, pts).unwrap();
    let parts = crop_parts4(&lm, &CropConfig::default()).map_err(|e| e.to_string())?;
    let mouth = parts.iter().find(|c| c.tag == RegionTag::Mouth).unwrap().bbox;
    ensure!(mouth == [74.0, 174.0, 126.0, 226.0], "mouth box {mouth:?}");
    Ok("1000 landmark sets; mouth box (74,174,126,226)".into())
}

// ---------------------------------------------------------------- synthetic

/// Holistic and fused EER of a generated scenario with default cross-fitting.
fn holistic_vs_fused(spec: &ScenarioSpec) -> Result<(f64, f64), String> {
    let d = generate(spec).map_err(|e| e.to_string())?;
    let cfg = ProtocolConfig::new(RegionTag::ALL.to_vec(), d.providers.clone());
    let r = run_single_dataset_eer(&d.manifest, &d.store, TrialMode::BeforeVsAfter, &cfg).map_err(|e| e.to_string())?;
    let holistic = r.result.region(RegionTag::Holistic).ok_or("no holistic result")?.eer;
    let fused = r.result.fused.as_ref().ok_or("no fused result")?.eer;
    Ok((holistic, fused))
}

fn synthetic_gain() -> Check {
    let mut s1 = Vec::new();
    for seed in 1..=10 {
        let (h, f) = holistic_vs_fused(&ScenarioSpec::scenario_s1(seed))?;
        ensure!(f < h, "S1 seed {seed}: fused {f} not below holistic {h}");
        s1.push(h - f);
    }
    let mut s2_worst = f64::NEG_INFINITY;
    for seed in 1..=10 {
        let (h, f) = holistic_vs_fused(&ScenarioSpec::scenario_s2(seed))?;
        ensure!(f <= h + 0.005, "S2 seed {seed}: fused {f} above holistic {h} + 0.5 pp");
        s2_worst = s2_worst.max(f - h);
    }

    // single worker thread, generation through evaluation
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    let start = Instant::now();
    pool.install(|| holistic_vs_fused(&ScenarioSpec::scenario_s1(42)))?;
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "S1 took {elapsed:?} on one thread");

    let min_gain = s1.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "S1 10/10 seeds, min gain {:.2} pp; S2 worst fused-holistic {:+.2} pp; S1 single-thread {:.1}s",
        100.0 * min_gain,
        100.0 * s2_worst,
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- determinism

fn partfuse(args: &[&str], threads: &str) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_partfuse"))
        .args(args)
        .env("PARTFUSE_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("partfuse {} failed: {}", args.join(" "), String::from_utf8_lossy(&o.stderr)))
    }
}

fn chain(dir: &Path, threads: &str) -> Result<(), String> {
    let f = |name: &str| dir.join(name).to_str().unwrap().to_owned();
    partfuse(&["synth", "--preset", "s1", "--seed", "42", "--out-dir", &f("")], threads)?;
    partfuse(
        &["score", "--store", &f("embeddings.csv"), "--trials", &f("trials.csv"), "--regions", "all", "--out", &f("scores.csv")],
        threads,
    )?;
    partfuse(&["fuse-train", "--scores", &f("scores.csv"), "--out", &f("model.txt")], threads)?;
    partfuse(
        &[
            "protocol", "kfold", "--manifest", &f("manifest.csv"), "--store", &f("embeddings.csv"), "--seed", "42",
            "--report", &f("kfold.json"),
        ],
        threads,
    )
}

fn protocol_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    chain(&a, "1")?;
    chain(&b, "4")?;
    for name in ["embeddings.csv", "scores.csv", "model.txt", "kfold.json"] {
        let (x, y) = (fs::read(a.join(name)).map_err(|e| e.to_string())?, fs::read(b.join(name)).map_err(|e| e.to_string())?);
        ensure!(x == y, "{name} differs between runs");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("kfold.json")).unwrap()).map_err(|e| e.to_string())?;
    let mean = report[0]["mean_accuracy"].as_f64().unwrap_or(f64::NAN);
    Ok(format!("two runs (1 and 4 threads) byte-identical; mean accuracy {:.2}%", 100.0 * mean))
}

// ---------------------------------------------------------------- cross-dataset

fn cross_diagonal() -> Check {
    let mut checked = 0;
    let mut scenarios = vec![ScenarioSpec::scenario_s1(7), ScenarioSpec::scenario_s2(8)];
    for (seed, shift) in [(11, 0.0), (12, 1.0), (13, 3.0)] {
        let mut s = ScenarioSpec::scenario_s1(seed);
        s.n_subjects = 40;
        s.makeup_shift.insert(RegionTag::Holistic, shift);
        scenarios.push(s);
    }
    let mut ymu = ScenarioSpec::scenario_s2(14);
    ymu.n_subjects = 30;
    ymu.dataset_id = "ymu".into();
    scenarios.push(ymu);

    for spec in &scenarios {
        let d = generate(spec).map_err(|e| e.to_string())?;
        for regions in [vec![RegionTag::Holistic], RegionTag::ALL.to_vec()] {
            let cfg = ProtocolConfig::new(regions.clone(), d.providers.clone());
            let r = run_cross_dataset(&[&d.manifest], &[&d.manifest], &d.store, &cfg).map_err(|e| e.to_string())?;
            let cell = &r.rows[0].cells[0].report;
            let bound = 1.0 / cell.counts.genuine.min(cell.counts.impostor) as f64;
            let gap = (cell.hter.unwrap() - cell.eer).abs();
            ensure!(
                gap <= bound,
                "{} seed {} ({} regions): |HTER-EER| {gap} above {bound}",
                spec.dataset_id,
                spec.seed,
                regions.len()
            );
            checked += 1;
        }
    }
    Ok(format!("{checked} dataset/region-set diagonals within 1/min(G,I)"))
}

// ---------------------------------------------------------------- golden

const GOLDEN_HOLISTIC: f64 = 0.0148;
const GOLDEN_PART_FUSION: f64 = 0.0099;
const GOLDEN_TOL: f64 = 0.002;

fn golden() -> Result<Outcome, String> {
    let Ok(dir) = std::env::var("PARTFUSE_GOLDEN_DIR") else {
        return Ok(Outcome::Skip("PARTFUSE_GOLDEN_DIR not set".into()));
    };
    let dir = Path::new(&dir);
    let read = |name: &str| fs::read(dir.join(name)).map_err(|e| format!("{}: {e}", dir.join(name).display()));
    let manifests = parse_manifests(&read("manifest.csv")?).map_err(|e| e.to_string())?;
    let ymu = manifests.iter().find(|m| m.dataset_id == "ymu").ok_or("manifest has no ymu dataset")?;
    let store = EmbeddingStore::from_csv(&read("embeddings.csv")?).map_err(|e| e.to_string())?;
    let regions = [
        RegionTag::Holistic,
        RegionTag::LeftPeriocular,
        RegionTag::RightPeriocular,
        RegionTag::Nose,
        RegionTag::Mouth,
    ];

    // a provider map pins one provider per region; otherwise search them all
    let candidates: BTreeMap<RegionTag, Vec<String>> = match read("provider_map.txt") {
        Ok(text) => {
            let map = ProviderMap::parse(&String::from_utf8_lossy(&text))?;
            regions.iter().filter_map(|r| map.get(*r).map(|p| (*r, vec![p.to_string()]))).collect()
        }
        Err(_) => regions.iter().map(|r| (*r, store.providers().keys().cloned().collect())).collect(),
    };
    let trials = build_trials(ymu, TrialMode::BeforeVsAfter, ImpostorPolicy::All).map_err(|e| e.to_string())?;

    let holistic = candidates
        .get(&RegionTag::Holistic)
        .ok_or("no holistic provider")?
        .iter()
        .map(|p| {
            let t = score_trials(&store, &trials, &[RegionTag::Holistic], &ProviderMap::uniform(p, &[RegionTag::Holistic]))
                .map_err(|e| e.to_string())?;
            let set = ScoreSet::from_labeled(t.rows.iter().map(|r| (r.trial.label, r.scores[0])))
                .map_err(|e| e.to_string())?;
            Ok(set.eer().eer)
        })
        .collect::<Result<Vec<f64>, String>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let best = best_combination(&store, &trials, &regions, &candidates, &LlrConfig::default(), "ymu")
        .map_err(|e| e.to_string())?;

    let msg = format!(
        "YMU holistic {:.2}% (target 1.48), part fusion best {:.2}% (target 0.99)",
        100.0 * holistic,
        100.0 * best.train_eer
    );
    let ok = (holistic - GOLDEN_HOLISTIC).abs() <= GOLDEN_TOL && (best.train_eer - GOLDEN_PART_FUSION).abs() <= GOLDEN_TOL;
    Ok(if ok { Outcome::Pass(msg) } else { Outcome::Fail(msg) })
}

// ----------------------------------------------------------------

fn run(f: impl FnOnce() -> Check) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(m)) => Outcome::Pass(m),
        Ok(Err(m)) => Outcome::Fail(m),
        Err(p) => Outcome::Fail(format!(
            "panicked: {}",
            p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()).unwrap_or("?")
        )),
    }
}

fn main() {
    // libtest-style flags such as --nocapture or a filter are accepted and ignored
    let criteria: Vec<(&str, Criterion)> = vec![
        ("EER oracle equivalence", Box::new(|| run(eer_oracle))),
        ("HTER identity", Box::new(|| run(hter_identity))),
        ("LLR correctness", Box::new(|| run(llr_correctness))),
        ("geometry", Box::new(|| run(geometry))),
        ("synthetic fusion gain", Box::new(|| run(synthetic_gain))),
        ("protocol determinism", Box::new(|| run(protocol_determinism))),
        ("cross-dataset diagonal", Box::new(|| run(cross_diagonal))),
        ("golden-target mode", Box::new(|| golden().unwrap_or_else(Outcome::Fail))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let (tag, msg) = match check() {
            Outcome::Pass(m) => ("PASS", m),
            Outcome::Fail(m) => {
                failed += 1;
                ("FAIL", m)
            }
            Outcome::Skip(m) => ("SKIP", m),
        };
        println!("{tag} {} {name} ({:.1}s): {msg}", i + 1, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
