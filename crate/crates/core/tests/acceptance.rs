//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{bridge_rankings, brute_force_ap, random_matrix, rng};
use dstc_core::data::{
    generate_synthetic, load_features, load_labels, save_features, save_labels, SyntheticSpec,
};
use dstc_core::eval::{average_precision, evaluate, rank, retrieve};
use dstc_core::gradcheck::{self, GradCheckConfig, Objective};
use dstc_core::train::{train, train_stage1, train_stage2, LossRow};
use dstc_core::{
    ArchPreset, Direction, DstcModel, Error, Matrix, Metric, PairedDataset, Split, Subnet, TrainConfig,
};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let out = f();
    within(limit, start.elapsed(), out)
}

fn within(limit: Duration, took: Duration, mut out: Outcome) -> Outcome {
    if took > limit {
        out.passed = false;
        out.detail = format!("{}; took {:.1}s, limit {}s", out.detail, took.as_secs_f64(), limit.as_secs());
    } else {
        out.detail = format!("{} ({:.1}s)", out.detail, took.as_secs_f64());
    }
    out
}

fn gradient_correctness() -> Outcome {
    let cfg = GradCheckConfig::default();
    match gradcheck::run(&cfg, &Objective::suite()) {
        Ok(report) => {
            let worst = report.results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
            Outcome::new(
                report.passed() && cfg.trials >= 20,
                format!("{} objectives x {} models, worst rel err {worst:.2e}", report.results.len(), cfg.trials),
            )
        }
        Err(e) => Outcome::new(false, format!("error: {e}")),
    }
}

fn map_oracle() -> Outcome {
    let hand = |rel: &[bool]| {
        let ranking: Vec<usize> = (0..rel.len()).collect();
        average_precision(&ranking, rel).unwrap()
    };
    let h1 = hand(&[true, false, true, false]);
    let h2 = hand(&[true, true, false, false]);
    if (h1 - 5.0 / 6.0).abs() > 1e-12 || (h2 - 1.0).abs() > 1e-12 {
        return Outcome::new(false, format!("hand cases gave {h1} and {h2}"));
    }
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 200 {
        let n = r.random_range(1..=50);
        // a coarse score grid produces ties
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..8) as f64 / 4.0).collect();
        let relevant: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
        let Some(oracle) = brute_force_ap(&scores, &relevant) else {
            continue;
        };
        let ap = average_precision(&rank(&scores).unwrap(), &relevant).unwrap();
        worst = worst.max((ap - oracle).abs());
        cases += 1;
    }
    Outcome::new(worst <= 1e-12, format!("{cases} random cases plus hand cases, max diff {worst:.1e}"))
}

fn metric_bridge() -> Outcome {
    let mut r = rng(3);
    let mut mismatches = 0;
    for _ in 0..100 {
        let dim = r.random_range(2..=12);
        let n = r.random_range(2..=40);
        let q = random_matrix(&mut r, 1, dim);
        let g = random_matrix(&mut r, n, dim);
        let (cos, euc) = bridge_rankings(q.row(0), &g);
        if cos != euc {
            mismatches += 1;
        }
    }
    Outcome::new(mismatches == 0, format!("100 query/gallery sets, {mismatches} rankings differ"))
}

fn synthetic(pair_noise: f64, seed: u64) -> PairedDataset {
    generate_synthetic(&SyntheticSpec {
        classes: 10,
        n_per_class: 200,
        x_dim: 64,
        y_dim: 48,
        cluster_spread: 0.15,
        pair_noise,
        seed,
    })
    .expect("valid synthetic spec")
}

fn arch(data: &PairedDataset) -> ArchPreset {
    ArchPreset::compact(data.x_dim(), data.y_dim(), data.num_classes())
}

fn cos_both(model: &DstcModel, data: &PairedDataset, split: Split) -> f64 {
    evaluate(model, data, split, Direction::Both, Metric::Cosine).expect("evaluation runs").map
}

/// Runs the two stages by hand so subnet checksums can be taken between them.
struct StagedRun {
    stage1_acc: (f64, f64),
    test_map: f64,
    translators_kept: bool,
    classifiers_kept: bool,
    trace: Vec<f64>,
}

fn staged_run(data: &PairedDataset, cfg: &TrainConfig) -> dstc_core::Result<StagedRun> {
    let mut model = DstcModel::build(&arch(data), data.num_classes(), data.x_dim(), data.y_dim(), cfg.seed)?;
    let sums = |m: &DstcModel, s: [Subnet; 2]| s.map(|s| m.checksum(s));
    let translators = [Subnet::TranslatorXY, Subnet::TranslatorYX];
    let classifiers = [Subnet::ClassifierX, Subnet::ClassifierY];

    let before = sums(&model, translators);
    let mut history = train_stage1(&mut model, data, cfg)?;
    let translators_kept = before == sums(&model, translators);
    let last = history.stage_epochs(1).last().expect("stage 1 ran");
    let stage1_acc = (last.val_acc_x, last.val_acc_y);

    let before = sums(&model, classifiers);
    history.extend(train_stage2(&mut model, data, cfg)?);
    let classifiers_kept = before == sums(&model, classifiers);
    Ok(StagedRun {
        stage1_acc,
        test_map: cos_both(&model, data, Split::Test),
        translators_kept,
        classifiers_kept,
        trace: history.steps.iter().take(100).map(|s| s.loss.total).collect(),
    })
}

fn end_to_end(runs: &[StagedRun]) -> Outcome {
    let r = &runs[0];
    let (ax, ay) = r.stage1_acc;
    Outcome::new(
        ax >= 0.95 && ay >= 0.95 && r.test_map >= 0.90,
        format!("stage-1 val acc {ax:.4}/{ay:.4}, test cosine mAP (both) {:.4}", r.test_map),
    )
}

fn freeze_invariants(runs: &[StagedRun]) -> Outcome {
    let r = &runs[0];
    Outcome::new(
        r.translators_kept && r.classifiers_kept,
        format!(
            "translators unchanged by stage 1: {}, classifiers unchanged by stage 2: {}",
            r.translators_kept, r.classifiers_kept
        ),
    )
}

fn determinism(runs: &[StagedRun]) -> Outcome {
    let (a, b) = (&runs[0], &runs[1]);
    let same_trace = a.trace.len() == 100 && a.trace.iter().map(|v| v.to_bits()).eq(b.trace.iter().map(|v| v.to_bits()));
    let (ma, mb) = (format!("{:.6}", a.test_map), format!("{:.6}", b.test_map));
    Outcome::new(
        same_trace && ma == mb && a.test_map.to_bits() == b.test_map.to_bits(),
        format!("first 100 step losses identical: {same_trace}, final mAP {ma} vs {mb}"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// CE+PC and CE+DSTC on re-paired data. Returns the per-seed mAPs.
fn ablation_pair(stage2_lr: f64) -> dstc_core::Result<(Vec<f64>, Vec<f64>)> {
    let (mut pc, mut dstc) = (Vec::new(), Vec::new());
    for seed in 1..=3u64 {
        let data = synthetic(0.3, seed);
        for (n, out) in [(3, &mut pc), (4, &mut dstc)] {
            let row = LossRow::get(n).expect("row exists");
            let mut cfg = TrainConfig::default();
            cfg.stage2.lr = stage2_lr;
            cfg.seed = seed + n as u64;
            cfg.stage2 = row.apply(&cfg.stage2, Metric::Euclidean);
            let (model, _) = train(&cfg, &data, &arch(&data))?;
            out.push(cos_both(&model, &data, Split::Test));
        }
    }
    Ok((pc, dstc))
}

fn ablation_trend() -> Outcome {
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/");
    match ablation_pair(1e-3) {
        Ok((pc, dstc)) => {
            let (mp, md) = (median(pc.clone()), median(dstc.clone()));
            Outcome::new(
                md >= mp - 0.02,
                format!(
                    "stage-2 lr 1e-3, pair noise 0.3: median CE+DSTC {md:.4} vs CE+PC {mp:.4} (seeds {} vs {})",
                    fmt(&dstc),
                    fmt(&pc)
                ),
            )
        }
        Err(e) => Outcome::new(false, format!("error: {e}")),
    }
}

fn class_average_identity() -> Outcome {
    let mut r = rng(8);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let classes = r.random_range(2..=6);
        let per = r.random_range(1..=5);
        let dim = r.random_range(2..=8);
        let n = classes * per;
        let queries = random_matrix(&mut r, n, dim);
        let ids: Vec<(usize, usize)> = (0..n).map(|i| (i, i % classes)).collect();
        let m = r.random_range(classes..=3 * classes);
        let gallery = random_matrix(&mut r, m, dim);
        let labels: Vec<usize> = (0..m).map(|i| i % classes).collect();
        for metric in [Metric::Cosine, Metric::Euclidean] {
            let rep = retrieve(Direction::XToY, metric, &queries, &ids, &gallery, &labels).unwrap();
            worst = worst.max((rep.map - rep.class_avg_map).abs());
        }
    }
    Outcome::new(worst <= 1e-12, format!("50 balanced query sets x 2 metrics, max diff {worst:.1e}"))
}

fn io_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();
    let f32_exact = |m: &Matrix| m.data().iter().map(|&v| v as f32 as f64).collect::<Vec<_>>();

    let feat = dir.path().join("x.feat");
    let m = random_matrix(&mut rng(9), 17, 5).scale(37.0);
    save_features(&feat, &m).unwrap();
    match load_features(&feat) {
        Ok(back) if back.data() == f32_exact(&m).as_slice() => {}
        other => problems.push(format!("features: {other:?}")),
    }

    let lbl = dir.path().join("y.lbl");
    let labels: Vec<usize> = (0..23).map(|i| i * 5 % 7).collect();
    save_labels(&lbl, &labels, 7).unwrap();
    if load_labels(&lbl).ok() != Some((labels, 7)) {
        problems.push("labels".into());
    }

    let model_path = dir.path().join("m.bin");
    let model = DstcModel::build(&ArchPreset::custom(6, 5, 3, 8, 4, 2), 3, 6, 5, 1).unwrap();
    model.save(&model_path).unwrap();
    match DstcModel::load(&model_path) {
        Ok(back) => {
            let exact = Subnet::ALL.iter().all(|&s| {
                model.net(s).param_slices().iter().zip(back.net(s).param_slices()).all(|(a, b)| {
                    a.len() == b.len() && a.iter().zip(b.iter()).all(|(&u, &v)| u as f32 as f64 == v)
                })
            });
            if !exact {
                problems.push("model parameters".into());
            }
        }
        Err(e) => problems.push(format!("model: {e}")),
    }

    let bytes = fs::read(&feat).unwrap();
    let bad = dir.path().join("bad.feat");
    let mut check = |name: &str, contents: Vec<u8>, ok: fn(&Error) -> bool| {
        fs::write(&bad, contents).unwrap();
        match load_features(&bad) {
            Err(e) if ok(&e) => {}
            other => problems.push(format!("{name}: {other:?}")),
        }
    };
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    check("bad magic", magic, |e| matches!(e, Error::BadMagic { .. }));
    let mut version = bytes.clone();
    version[8] = 2;
    check("version", version, |e| matches!(e, Error::VersionMismatch { .. }));
    check("truncated", bytes[..bytes.len() - 1].to_vec(), |e| matches!(e, Error::Truncated { .. }));
    let mut long = bytes.clone();
    long.extend_from_slice(&[0; 4]);
    check("trailing bytes", long, |e| matches!(e, Error::HeaderInconsistent { .. }));
    if !load_features(&dir.path().join("absent.feat")).is_err_and(|e| e.is_io()) {
        problems.push("missing file".into());
    }

    let passed = problems.is_empty();
    let detail = if passed {
        "features, labels, model exact at f32; four malformed cases and a missing file give distinct errors".into()
    } else {
        problems.join("; ")
    };
    Outcome::new(passed, detail)
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| results.push((n, name, o));

    report(1, "gradient correctness", timed(secs(60), gradient_correctness));
    report(2, "mAP oracle equivalence", timed(secs(5), map_oracle));
    report(3, "metric bridge", timed(secs(5), metric_bridge));

    let data = synthetic(0.0, 7);
    let cfg = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let first = staged_run(&data, &cfg);
    let e2e_time = start.elapsed();
    let second = staged_run(&data, &cfg);
    match (first, second) {
        (Ok(a), Ok(b)) => {
            let runs = [a, b];
            report(4, "end-to-end synthetic", within(secs(300), e2e_time, end_to_end(&runs)));
            report(6, "freeze invariants", freeze_invariants(&runs));
            report(7, "determinism", determinism(&runs));
        }
        (Err(e), _) | (_, Err(e)) => {
            for (n, name) in [(4, "end-to-end synthetic"), (6, "freeze invariants"), (7, "determinism")] {
                report(n, name, Outcome::new(false, format!("training failed: {e}")));
            }
        }
    }

    report(5, "ablation trend", timed(secs(900), ablation_trend));
    report(8, "class-averaged mAP identity", class_average_identity());
    report(9, "IO round trips", io_round_trips());

    results.sort_by_key(|r| r.0);
    for (n, name, o) in &results {
        println!("[{}] {n}. {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<usize> = results.iter().filter(|(_, _, o)| !o.passed).map(|(n, _, _)| *n).collect();
    if failed.is_empty() {
        println!("all {} criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
