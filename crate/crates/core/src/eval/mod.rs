//! Evaluation of tracker output against simulator ground truth, and the
//! experiment / ablation harness.

mod experiment;
mod hungarian;
mod metrics;
mod trajectory;

pub use experiment::{
    ablation_variants, embed_observations, eval_sequences, mean_idf1_by_label, prepare_head, run_ablation,
    run_experiment, track_and_score, AblationAxis, AblationRow, EmbedderKind, ExperimentConfig, ExperimentReport,
    PROPOSAL_CAPS,
};
pub use hungarian::{hungarian, Assignment};
pub use metrics::{evaluate_sequence, frame_overlap, id_switches, idf1, MatchReport, SequenceCounts};
pub use trajectory::TrajectorySet;
