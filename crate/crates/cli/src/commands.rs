//! Subcommand bodies. Each writes its outputs under `out` and returns the
//! paths it wrote, in order.

use std::path::{Path, PathBuf};

use instassoc_core::embed::EmbeddingHead;
use instassoc_core::eval::{
    ablation_variants, eval_sequences, evaluate_sequence, mean_idf1_by_label, prepare_head, run_experiment,
    AblationAxis, MatchReport,
};
use instassoc_core::gradcheck::{self, SuiteResult};
use instassoc_core::sim::Observation;
use instassoc_core::tracker::{run_sequence, Detection};
use rayon::prelude::*;

use crate::formats::{self, FormatError};
use crate::{CliError, RunConfig};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| {
        CliError::Format(FormatError::Io {
            path: dir.display().to_string(),
            source,
        })
    })
}

fn emit(out: &Path, name: &str, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let path = out.join(name);
    formats::write_file(&path, bytes)?;
    written.push(path);
    Ok(())
}

fn observations_to_detections(frames: &[Vec<Observation>]) -> Vec<Detection> {
    frames
        .iter()
        .flatten()
        .map(|o| Detection {
            frame: o.frame,
            bbox: o.bbox,
            score: o.score,
            embedding: o.feature.clone(),
        })
        .collect()
}

/// Evaluation sequences: one scene, detection and ground-truth file each.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out)?;
    let exp = cfg.experiment();
    let mut written = Vec::new();
    for (k, seq) in eval_sequences(&exp, cfg.sim.seed)?.iter().enumerate() {
        emit(out, &format!("seq{k:03}.scene"), &formats::write_scene(&seq.scene), &mut written)?;
        let dets = observations_to_detections(&seq.frames);
        emit(out, &format!("seq{k:03}.det"), &formats::write_detections(&dets, cfg.sim.d_raw)?, &mut written)?;
        emit(out, &format!("seq{k:03}.gt"), &formats::write_ground_truth(&seq.ground_truth), &mut written)?;
    }
    Ok(written)
}

/// Trains a head as configured and writes `head.bin` and `loss.csv`.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out)?;
    let exp = cfg.experiment();
    let (head, history) = prepare_head(&exp, cfg.train.seed)?;
    let head = head.ok_or_else(|| CliError::Usage("`train` needs [train] embedder = \"trained\" or \"random\"".into()))?;
    let mut written = Vec::new();
    emit(out, "head.bin", &formats::write_head(&head), &mut written)?;
    emit(out, "loss.csv", &formats::write_loss_csv(&history), &mut written)?;
    Ok(written)
}

/// Tracks one detection file. Without a head the file's embeddings are
/// used as they are.
pub fn track(cfg: &RunConfig, detections: &Path, head: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    create_dir(out)?;
    let (dets, dim) = formats::read_detections(&formats::read_text(detections)?)?;
    let head: Option<EmbeddingHead> = match head {
        Some(p) => Some(formats::read_head(&std::fs::read(p).map_err(|source| FormatError::Io {
            path: p.display().to_string(),
            source,
        })?)?),
        None => None,
    };
    let dets = match &head {
        Some(h) => {
            if h.input_dim() != dim {
                return Err(CliError::Core(instassoc_core::Error::Argument(format!(
                    "head expects {}-dimensional input, detection file has dim={dim}",
                    h.input_dim()
                ))));
            }
            dets.into_iter()
                .map(|d| {
                    Ok(Detection {
                        embedding: h.embed(&d.embedding)?,
                        ..d
                    })
                })
                .collect::<Result<Vec<_>, instassoc_core::Error>>()?
        }
        None => dets,
    };
    let result = run_sequence(formats::group_by_frame(dets), &cfg.tracker_config())?;
    let mut written = Vec::new();
    emit(out, "tracks.csv", &formats::write_tracks(&result.records), &mut written)?;
    Ok(written)
}

/// Scores `(ground truth, tracks)` file pairs, pooled.
pub fn eval(cfg: &RunConfig, pairs: &[(PathBuf, PathBuf)], label: &str, out: &Path) -> Result<(MatchReport, Vec<PathBuf>), CliError> {
    if pairs.is_empty() {
        return Err(CliError::Usage("eval needs at least one --gt/--tracks pair".into()));
    }
    create_dir(out)?;
    let per_sequence = pairs
        .iter()
        .map(|(gt, tr)| {
            let gt = formats::trajectories(&formats::read_tracks(&formats::read_text(gt)?)?)?;
            let pred = formats::trajectories(&formats::read_tracks(&formats::read_text(tr)?)?)?;
            Ok(evaluate_sequence(&gt, &pred, cfg.eval.iou_thresh))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let report = MatchReport::from_sequences(per_sequence);
    let mut written = Vec::new();
    emit(out, "report.txt", &formats::write_report(&report), &mut written)?;
    emit(
        out,
        "metrics.csv",
        &formats::write_metrics_csv(&[formats::metrics_row(label, &report)]),
        &mut written,
    )?;
    Ok((report, written))
}

pub fn parse_axis(s: &str) -> Result<AblationAxis, CliError> {
    match s {
        "proposals" => Ok(AblationAxis::Proposals),
        "augmentation" => Ok(AblationAxis::Augmentation),
        other => Err(CliError::Usage(format!(
            "unknown ablation axis `{other}`, expected proposals or augmentation"
        ))),
    }
}

/// One row per variant (metrics pooled over `[eval] seeds`) in
/// `ablation.csv`, plus a per-run directory with each run's report.
/// Mean IDF1 per variant label, and the files written.
pub type AblationOutput = (Vec<(String, f64)>, Vec<PathBuf>);

pub fn ablate(cfg: &RunConfig, axis: AblationAxis, out: &Path) -> Result<AblationOutput, CliError> {
    create_dir(out)?;
    let base = cfg.experiment();
    base.validate()?;
    let jobs: Vec<(String, instassoc_core::eval::ExperimentConfig, u64)> = ablation_variants(axis, &base)
        .into_iter()
        .flat_map(|(label, c)| cfg.eval.seeds.iter().map(move |&s| (label.clone(), c.clone(), s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|(label, c, seed)| {
            let r = run_experiment(c, *seed)?;
            let dir = out.join(format!("{label}_seed{seed}"));
            create_dir(&dir)?;
            formats::write_file(&dir.join("report.txt"), &formats::write_report(&r.report))?;
            formats::write_file(&dir.join("loss.csv"), &formats::write_loss_csv(&r.history))?;
            Ok(instassoc_core::eval::AblationRow {
                label: label.clone(),
                seed: *seed,
                final_loss: r.history.last().map_or(0.0, |h| h.mean),
                report: r.report,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut labels: Vec<String> = Vec::new();
    for r in &results {
        if !labels.contains(&r.label) {
            labels.push(r.label.clone());
        }
    }
    let rows: Vec<Vec<String>> = labels
        .iter()
        .map(|l| {
            let pooled = results
                .iter()
                .filter(|r| &r.label == l)
                .flat_map(|r| r.report.per_sequence.iter().copied())
                .collect();
            formats::metrics_row(l, &MatchReport::from_sequences(pooled))
        })
        .collect();
    let mut written = Vec::new();
    emit(out, "ablation.csv", &formats::write_metrics_csv(&rows), &mut written)?;
    let mut runs = csv::WriterBuilder::new().from_writer(Vec::new());
    runs.write_record(["label", "seed", "idf1", "id_switches", "assoc_accuracy", "final_loss"])
        .expect("in-memory");
    for r in &results {
        runs.write_record([
            r.label.clone(),
            r.seed.to_string(),
            formats::real(r.report.idf1),
            r.report.id_switches.to_string(),
            formats::real(r.report.assoc_accuracy),
            formats::real(r.final_loss),
        ])
        .expect("in-memory");
    }
    emit(out, "ablation_runs.csv", &runs.into_inner().expect("in-memory"), &mut written)?;
    Ok((mean_idf1_by_label(&results), written))
}

/// Runs every finite-difference suite; fails when any exceeds its tolerance.
pub fn gradcheck(seed: u64) -> Result<Vec<SuiteResult>, CliError> {
    let suites = gradcheck::run_all(seed)?;
    if let Some(bad) = suites.iter().find(|s| !s.passed()) {
        return Err(CliError::CheckFailed(format!(
            "gradient check `{}` failed: relative error {:.3e} >= {:.1e}",
            bad.name, bad.max_relative_error, bad.tolerance
        )));
    }
    Ok(suites)
}
