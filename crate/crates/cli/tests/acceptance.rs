//! Acceptance criteria, one line each. Runs as a plain binary so the
//! output reads as a checklist:
//!
//! ```text
//! cargo test -p instassoc --test acceptance
//! ```

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use instassoc_core::embed::{contrastive_loss, ContrastiveBatch, Matrix, Temperature};
use instassoc_core::eval::{
    ablation_variants, hungarian, mean_idf1_by_label, run_experiment, AblationAxis, AblationRow, EmbedderKind,
    ExperimentConfig,
};
use instassoc_core::gradcheck::{check_contrastive, check_deformable};
use instassoc_core::kernels::{bilinear_sample, deformable_fuse, DeformableParams, FeatureMap};
use instassoc_core::math::{gaussian, rng, uniform};
use instassoc_core::sim::SequenceConfig;
use instassoc_core::tracker::{associate_frame, bi_softmax_scores, Assignment, Detection, TrackerConfig, TrackerState};
use instassoc_core::BBox;
use rand::Rng;
use rayon::prelude::*;

const CLOSED_FORM_TOL: f64 = 1e-9;
const CONTRASTIVE_TOL: f64 = 1e-4;
const DEFORMABLE_TOL: f64 = 1e-3;
const SOFTMAX_MASS_TOL: f64 = 1e-9;
const TRAINED_MIN_IDF1: f64 = 0.90;
const RANDOM_MAX_IDF1: f64 = 0.75;
const ABLATION_SLACK: f64 = 0.02;

type Outcome = Result<String, String>;

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn contrastive() -> Outcome {
    let t = Instant::now();
    let suite = check_contrastive(10, 0).map_err(|e| e.to_string())?;
    ensure(suite.max_relative_error < CONTRASTIVE_TOL, || {
        format!("max rel err {:.3e}", suite.max_relative_error)
    })?;
    let tau = Temperature::new(0.07).unwrap();
    // a lone positive pair has nothing to contrast with
    let b = ContrastiveBatch::new(Matrix::from_rows(&[[1.0, 0.0], [0.3, 0.9]]).unwrap(), vec![4, 4], vec![1, 2])
        .unwrap();
    let lone = contrastive_loss(&b, tau).unwrap().mean();
    // identical rows: each anchor sees one positive and four equal negatives
    let rows = [[0.6, 0.8]; 6];
    let b = ContrastiveBatch::new(Matrix::from_rows(&rows).unwrap(), vec![1, 1, 2, 2, 3, 3], vec![1, 2, 1, 2, 1, 2])
        .unwrap();
    let flat = contrastive_loss(&b, tau).unwrap().mean();
    ensure(lone.abs() < CLOSED_FORM_TOL, || format!("lone pair loss {lone}"))?;
    ensure((flat - 5f64.ln()).abs() < CLOSED_FORM_TOL, || format!("identical rows loss {flat}"))?;
    within(t.elapsed(), Duration::from_secs(1))?;
    Ok(format!("10 batches, max rel err {:.2e}; closed forms hold", suite.max_relative_error))
}

fn deformable() -> Outcome {
    let t = Instant::now();
    let mut r = rng(11);
    for _ in 0..20 {
        let (h, w, c) = (r.gen_range(2..9), r.gen_range(2..9), r.gen_range(1..4));
        let vals: Vec<f64> = (0..h * w * c).map(|_| gaussian(&mut r)).collect();
        let m = FeatureMap::from_fn(8, h, w, c, |y, x, k| vals[(y * w + x) * c + k]).unwrap();
        let (x, y) = (uniform(&mut r, -1.0, w as f64), uniform(&mut r, -1.0, h as f64));
        let fused = deformable_fuse(std::slice::from_ref(&m), &DeformableParams::identity(1), (x, y)).unwrap();
        ensure(fused == bilinear_sample(&m, x, y), || format!("identity kernel differs at ({x}, {y})"))?;
    }
    let suite = check_deformable(5, 0).map_err(|e| e.to_string())?;
    ensure(suite.max_relative_error < DEFORMABLE_TOL, || {
        format!("max rel err {:.3e}", suite.max_relative_error)
    })?;
    within(t.elapsed(), Duration::from_secs(1))?;
    Ok(format!("identity kernel exact; 5 configs, max rel err {:.2e}", suite.max_relative_error))
}

fn random_frames(seed: u64, frames: u64) -> Vec<(u64, Vec<Detection>)> {
    let mut r = rng(seed);
    let objects: Vec<(BBox, Vec<f64>)> = (0..r.gen_range(1..7))
        .map(|_| {
            let b = BBox::new(uniform(&mut r, 0.0, 0.8), uniform(&mut r, 0.0, 0.8), 0.1, 0.1);
            (b, (0..4).map(|_| gaussian(&mut r)).collect())
        })
        .collect();
    (1..=frames)
        .map(|f| {
            let mut dets = Vec::new();
            for (b, e) in &objects {
                if r.gen_bool(0.8) {
                    dets.push(Detection {
                        frame: f,
                        bbox: b.translate(0.002 * f as f64, 0.0),
                        score: uniform(&mut r, 0.2, 1.0),
                        embedding: e.iter().map(|v| v + 0.2 * gaussian(&mut r)).collect(),
                    });
                }
            }
            (f, dets)
        })
        .collect()
}

fn tracker_properties() -> Outcome {
    let cfg = TrackerConfig { max_age: 2, ..TrackerConfig::default() };
    for seed in 0..200u64 {
        let mut a = TrackerState::new();
        let mut b = TrackerState::new();
        let mut seen = BTreeSet::new();
        for (f, dets) in random_frames(seed, 12) {
            let mut shuffled = dets.clone();
            shuffled.reverse();
            let oa = associate_frame(&mut a, f, &dets, &cfg).map_err(|e| e.to_string())?;
            let ob = associate_frame(&mut b, f, &shuffled, &cfg).map_err(|e| e.to_string())?;
            let ids: Vec<u64> = oa.iter().filter_map(|x| x.track_id()).collect();
            let unique: BTreeSet<u64> = ids.iter().copied().collect();
            ensure(ids.len() == unique.len(), || format!("seed {seed} frame {f}: track updated twice"))?;
            let newest = seen.iter().next_back().copied().unwrap_or(0);
            for x in &oa {
                let ok = match *x {
                    Assignment::Created(id) => id > newest,
                    Assignment::Matched(id) => seen.contains(&id),
                    _ => true,
                };
                ensure(ok, || format!("seed {seed} frame {f}: id reused"))?;
            }
            for (i, x) in oa.iter().enumerate() {
                ensure(ob[dets.len() - 1 - i] == *x, || format!("seed {seed} frame {f}: order dependent"))?;
            }
            ensure(a == b, || format!("seed {seed} frame {f}: states diverge"))?;
            seen.extend(ids);
        }
    }
    let single = bi_softmax_scores(&[&[0.3, -1.0]], &[&[2.0, 0.5]]).unwrap().get(0, 0);
    ensure((single - 1.0).abs() < SOFTMAX_MASS_TOL, || format!("singleton score {single}"))?;
    let e: &[f64] = &[0.4, 0.8, -0.2];
    let sym = bi_softmax_scores(&[e, e], &[e, e]).unwrap();
    ensure(sym.as_slice().iter().all(|v| (v - 0.5).abs() < SOFTMAX_MASS_TOL), || "2x2 symmetric".into())?;
    let mut r = rng(5);
    for _ in 0..100 {
        let (n, m) = (r.gen_range(1..7), r.gen_range(1..7));
        let d: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| 2.0 * gaussian(&mut r)).collect()).collect();
        let t: Vec<Vec<f64>> = (0..m).map(|_| (0..5).map(|_| 2.0 * gaussian(&mut r)).collect()).collect();
        let dr: Vec<&[f64]> = d.iter().map(Vec::as_slice).collect();
        let tr: Vec<&[f64]> = t.iter().map(Vec::as_slice).collect();
        let total: f64 = bi_softmax_scores(&dr, &tr).unwrap().as_slice().iter().sum();
        ensure((total - 0.5 * (n + m) as f64).abs() < SOFTMAX_MASS_TOL, || format!("mass {total} for {n}x{m}"))?;
    }
    Ok("200 random sequences; singleton 1, symmetric 0.5, softmax mass exact".into())
}

fn noise_free() -> Outcome {
    let t = Instant::now();
    let cfg = ExperimentConfig {
        sequence: SequenceConfig::noise_free(10, 50),
        embedder: EmbedderKind::Identity,
        ..ExperimentConfig::default()
    };
    let r = run_experiment(&cfg, 0).map_err(|e| e.to_string())?.report;
    ensure(r.idf1 == 1.0 && r.id_switches == 0, || {
        format!("IDF1 {} with {} switches", r.idf1, r.id_switches)
    })?;
    within(t.elapsed(), Duration::from_secs(2))?;
    Ok(format!("IDF1 1.0, 0 switches over {} sequences", cfg.eval_sequences))
}

fn trained_vs_random() -> Outcome {
    let t = Instant::now();
    let run = |embedder| {
        let cfg = ExperimentConfig { embedder, ..ExperimentConfig::default() };
        run_experiment(&cfg, 0).map(|r| r.report.idf1)
    };
    let (trained, random) = rayon::join(|| run(EmbedderKind::Trained), || run(EmbedderKind::Random));
    let (trained, random) = (trained.map_err(|e| e.to_string())?, random.map_err(|e| e.to_string())?);
    ensure(trained >= TRAINED_MIN_IDF1, || format!("trained IDF1 {trained:.4}"))?;
    ensure(random <= RANDOM_MAX_IDF1, || format!("random IDF1 {random:.4}"))?;
    within(t.elapsed(), Duration::from_secs(120))?;
    Ok(format!("trained {trained:.4}, random {random:.4}"))
}

fn ablation_means(axis: AblationAxis) -> Result<Vec<(String, f64)>, String> {
    let jobs: Vec<(String, ExperimentConfig, u64)> = ablation_variants(axis, &ExperimentConfig::default())
        .into_iter()
        .flat_map(|(l, c)| (0..5u64).map(move |s| (l.clone(), c.clone(), s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|(label, c, seed)| {
            run_experiment(c, *seed).map(|r| AblationRow {
                label: label.clone(),
                seed: *seed,
                final_loss: r.history.last().map_or(0.0, |h| h.mean),
                report: r.report,
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(mean_idf1_by_label(&rows))
}

fn lookup(means: &[(String, f64)], label: &str) -> f64 {
    means.iter().find(|(l, _)| l == label).map(|(_, v)| *v).expect("variant present")
}

fn direction(lo: f64, hi: f64) -> &'static str {
    if hi > lo {
        "up"
    } else if hi < lo {
        "down"
    } else {
        "flat"
    }
}

fn ablations() -> Outcome {
    let t = Instant::now();
    let caps = ablation_means(AblationAxis::Proposals)?;
    let aug = ablation_means(AblationAxis::Augmentation)?;
    let (c64, c128, c256) = (lookup(&caps, "cap64"), lookup(&caps, "cap128"), lookup(&caps, "cap256"));
    let (basic, full) = (lookup(&aug, "basic"), lookup(&aug, "full"));
    let summary = format!(
        "cap64 {c64:.4} cap128 {c128:.4} cap256 {c256:.4} ({}); basic {basic:.4} full {full:.4} ({})",
        direction(c64, c256),
        direction(basic, full)
    );
    ensure(c256 >= c64 - ABLATION_SLACK, || summary.clone())?;
    ensure(full >= basic - ABLATION_SLACK, || summary.clone())?;
    within(t.elapsed(), Duration::from_secs(600))?;
    Ok(summary)
}

/// Minimum over injective row-to-column maps.
fn brute_force(cost: &Matrix, row: usize, used: &mut [bool]) -> f64 {
    if row == cost.rows() {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for c in 0..cost.cols() {
        if !used[c] {
            used[c] = true;
            best = best.min(cost.get(row, c) + brute_force(cost, row + 1, used));
            used[c] = false;
        }
    }
    best
}

fn assignment() -> Outcome {
    let t = Instant::now();
    let mut r = rng(2024);
    for case in 0..100 {
        let n = r.gen_range(1..=6);
        let m = r.gen_range(n..=6);
        let data: Vec<f64> = (0..n * m)
            .map(|_| if case % 2 == 0 { r.gen_range(0..10) as f64 } else { uniform(&mut r, -5.0, 5.0) })
            .collect();
        let cost = Matrix::from_vec(n, m, data.clone()).unwrap();
        // alternate orientation so wide and tall matrices both get exercised
        let (solved, oracle) = if case % 4 < 2 {
            let a = hungarian(&cost);
            (a.pairs().map(|(i, j)| cost.get(i, j)).sum::<f64>(), brute_force(&cost, 0, &mut vec![false; m]))
        } else {
            let tall = Matrix::from_vec(m, n, (0..m * n).map(|k| data[(k % n) * m + k / n]).collect()).unwrap();
            let a = hungarian(&tall);
            (a.pairs().map(|(i, j)| tall.get(i, j)).sum::<f64>(), brute_force(&cost, 0, &mut vec![false; m]))
        };
        ensure(solved == oracle || (solved - oracle).abs() < 1e-9, || {
            format!("case {case}: {solved} vs brute force {oracle}")
        })?;
    }
    within(t.elapsed(), Duration::from_secs(1))?;
    Ok("100 matrices up to 6x6 match brute force".into())
}

fn cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_instassoc"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&o.stderr))
    })
}

fn pipeline(root: &Path, config: &str) -> Result<(), String> {
    let p = |s: &str| root.join(s).display().to_string();
    cli(&["simulate", config, "--out", &p("sim")])?;
    cli(&["train", config, "--out", &p("train")])?;
    cli(&[
        "track",
        config,
        "--detections",
        &p("sim/seq000.det"),
        "--head",
        &p("train/head.bin"),
        "--out",
        &p("track"),
    ])?;
    cli(&["eval", config, "--gt", &p("sim/seq000.gt"), "--tracks", &p("track/tracks.csv"), "--out", &p("eval")])
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["sim", "train", "track", "eval"] {
        let mut entries: Vec<_> = std::fs::read_dir(root.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for e in entries {
            out.push((format!("{sub}/{}", e.file_name().unwrap().to_string_lossy()), std::fs::read(&e).unwrap()));
        }
    }
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("small.toml");
    std::fs::write(
        &config,
        "[sim]\nsequences = 1\ntrain_scenes = 8\n[train]\nepochs = 2\nbatches_per_epoch = 8\n",
    )
    .map_err(|e| e.to_string())?;
    let config = config.display().to_string();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&a, &config)?;
    pipeline(&b, &config)?;
    let (fa, fb) = (files(&a), files(&b));
    ensure(fa.len() == fb.len(), || "different file sets".into())?;
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        ensure(na == nb && ba == bb, || format!("{na} differs"))?;
    }
    Ok(format!("{} output files byte-identical across runs", fa.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("contrastive gradient", contrastive),
        ("deformable fusion", deformable),
        ("tracker properties", tracker_properties),
        ("noise-free tracking", noise_free),
        ("trained vs random embedder", trained_vs_random),
        ("ablation trends", ablations),
        ("assignment solver", assignment),
        ("pipeline determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {} {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
