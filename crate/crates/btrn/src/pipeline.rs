//! Generate → preprocess → train → evaluate → report orchestration.

use std::path::{Path, PathBuf};

use btrn_core::baselines::CspLda;
use btrn_core::dataset::{plane_subset, synth_generate, Condition, EpochSet, Plane, Session};
use btrn_core::dsp::{preprocess, split_train_test};
use btrn_core::eval::{accuracy, confusion, EvalReport, Method, SubjectEntry};
use btrn_core::model::{predict, train, BtrnModel};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::format::{self, FormatError};
use crate::report::{self, ReportError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("unknown subject `{0}`")]
    UnknownSubject(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Stage(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn stage<E: std::fmt::Display>(what: &str) -> impl FnOnce(E) -> PipelineError + '_ {
    move |e| PipelineError::Stage(format!("{what}: {e}"))
}

/// A cell that could not be evaluated, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub subject_id: String,
    pub method: Option<Method>,
    pub plane: Option<Plane>,
    pub condition: Option<Condition>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub failures: Vec<CellFailure>,
}

/// File name of one session's recording.
pub fn recording_file_name(subject_id: &str, session: Session) -> String {
    format!("{subject_id}_{}.btrn", session.as_str())
}

/// Subjects to process: all configured subjects, or the requested ones in
/// the order given.
pub fn resolve_subjects(
    config: &ExperimentConfig,
    filter: Option<&[String]>,
) -> Result<Vec<String>> {
    let all = config.synth.subject_ids();
    match filter {
        None => Ok(all),
        Some(ids) => {
            for id in ids {
                if config.recordings_dir.is_none() && !all.contains(id) {
                    return Err(PipelineError::UnknownSubject(id.clone()));
                }
            }
            Ok(ids.to_vec())
        }
    }
}

/// Writes both sessions of every selected subject as recording files.
pub fn cmd_synth(
    config: &ExperimentConfig,
    out_dir: &Path,
    subjects: Option<&[String]>,
) -> Result<Vec<PathBuf>> {
    config.check()?;
    let ids = resolve_subjects(config, subjects)?;
    std::fs::create_dir_all(out_dir).map_err(|source| PipelineError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for id in &ids {
        for session in Session::ALL {
            let rec = synth_generate(&config.synth, id, session).map_err(stage("synth"))?;
            let path = out_dir.join(recording_file_name(id, session));
            format::write_recording(&rec, &path)?;
            info!("wrote {}", path.display());
            written.push(path);
        }
    }
    Ok(written)
}

/// Reads or generates one session and preprocesses it into epochs.
pub fn load_session(
    config: &ExperimentConfig,
    subject_id: &str,
    session: Session,
) -> Result<EpochSet> {
    let rec = match &config.recordings_dir {
        Some(dir) => format::read_recording(&dir.join(recording_file_name(subject_id, session)))?,
        None => synth_generate(&config.synth, subject_id, session).map_err(stage("synth"))?,
    };
    preprocess(rec, &config.preprocess).map_err(stage("preprocess"))
}

fn entry(
    subject_id: &str,
    method: Method,
    plane: Plane,
    condition: Condition,
    pairs: &[(btrn_core::Direction, btrn_core::Direction)],
) -> Result<SubjectEntry> {
    let m = confusion(pairs, &plane.classes()).map_err(stage("confusion"))?;
    Ok(SubjectEntry {
        subject_id: subject_id.into(),
        method,
        condition,
        plane,
        accuracy: accuracy(&m).map_err(stage("accuracy"))?,
        confusion: m,
    })
}

struct PlaneData {
    me_train: EpochSet,
    mi_train: EpochSet,
    mi_test: EpochSet,
}

fn plane_data(
    config: &ExperimentConfig,
    me: &Option<EpochSet>,
    mi: &EpochSet,
    plane: Plane,
) -> Result<PlaneData> {
    let split = |set: &EpochSet| -> Result<(EpochSet, EpochSet)> {
        let sub = plane_subset(set, plane).map_err(stage("plane subset"))?;
        split_train_test(&sub, config.split.train_fraction, config.split.seed)
            .map_err(stage("split"))
    };
    let (mi_train, mi_test) = split(mi)?;
    let me_train = match me {
        Some(me) => split(me)?.0,
        None => EpochSet {
            epochs: Vec::new(),
            ..mi_train.clone()
        },
    };
    Ok(PlaneData {
        me_train,
        mi_train,
        mi_test,
    })
}

fn run_btrn(
    config: &ExperimentConfig,
    subject_id: &str,
    plane: Plane,
    condition: Condition,
    d: &PlaneData,
    checkpoint_dir: Option<&Path>,
) -> Result<SubjectEntry> {
    let model_cfg = &config.model;
    let (c, t) = d
        .mi_train
        .epoch_shape()
        .ok_or_else(|| PipelineError::Stage("empty training set".into()))?;
    let mut model = BtrnModel::new(
        model_cfg.architecture.clone(),
        model_cfg.hyper.clone(),
        c,
        t,
    )
    .map_err(stage("model"))?;
    let log = train(
        &mut model,
        &d.me_train,
        &d.mi_train,
        &model_cfg.hyper,
        condition,
    )
    .map_err(stage("train"))?;
    if let Some((head, tail)) = log.head_tail_means(0.1) {
        info!("{subject_id} {plane} {condition}: loss {head:.4} -> {tail:.4}");
    }
    let protos = model
        .support_prototypes(&d.me_train, &d.mi_train, condition)
        .map_err(stage("prototypes"))?;
    let preds = predict(&model, &d.mi_test, &protos).map_err(stage("predict"))?;
    if let Some(dir) = checkpoint_dir {
        let path = dir.join(format!(
            "btrn_{subject_id}_{}_{}.ckpt",
            plane.as_str(),
            match condition {
                Condition::Combined => "me_mi",
                Condition::MiOnly => "mi",
            }
        ));
        format::write_checkpoint(&model, &path)?;
    }
    let pairs: Vec<_> = preds.iter().map(|p| (p.truth, p.predicted)).collect();
    entry(subject_id, Method::Btrn, plane, condition, &pairs)
}

/// CSP+LDA trains on MI training epochs, joined by the ME training epochs
/// under the Combined condition.
fn run_csp(
    config: &ExperimentConfig,
    subject_id: &str,
    plane: Plane,
    condition: Condition,
    d: &PlaneData,
) -> Result<SubjectEntry> {
    let mut train_set = d.mi_train.clone();
    if condition == Condition::Combined {
        train_set.epochs.extend(d.me_train.epochs.iter().cloned());
    }
    let clf = CspLda::fit(&train_set, config.csp_pairs).map_err(stage("csp+lda fit"))?;
    let pairs = d
        .mi_test
        .epochs
        .iter()
        .map(|e| {
            Ok((
                e.direction,
                clf.predict(e).map_err(stage("csp+lda predict"))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    entry(subject_id, Method::CspLda, plane, condition, &pairs)
}

/// Every plane × condition × method cell of one subject. Failures are
/// logged and returned alongside the successful entries.
pub fn run_subject(
    config: &ExperimentConfig,
    subject_id: &str,
    checkpoint_dir: Option<&Path>,
) -> (Vec<SubjectEntry>, Vec<CellFailure>) {
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    let mut fail = |method, plane, condition, e: PipelineError| {
        warn!("{subject_id}: {e}");
        failures.push(CellFailure {
            subject_id: subject_id.into(),
            method,
            plane,
            condition,
            reason: e.to_string(),
        });
    };
    let needs_me = config.conditions.contains(&Condition::Combined);
    let sessions = (|| -> Result<_> {
        let mi = load_session(config, subject_id, Session::Imagination)?;
        let me = if needs_me {
            Some(load_session(config, subject_id, Session::Execution)?)
        } else {
            None
        };
        Ok((me, mi))
    })();
    let (me, mi) = match sessions {
        Ok(s) => s,
        Err(e) => {
            fail(None, None, None, e);
            return (entries, failures);
        }
    };
    for &plane in &config.planes {
        let d = match plane_data(config, &me, &mi, plane) {
            Ok(d) => d,
            Err(e) => {
                fail(None, Some(plane), None, e);
                continue;
            }
        };
        for &condition in &config.conditions {
            let cells = [
                (
                    Method::Btrn,
                    run_btrn(config, subject_id, plane, condition, &d, checkpoint_dir),
                ),
                (
                    Method::CspLda,
                    run_csp(config, subject_id, plane, condition, &d),
                ),
            ];
            for (method, result) in cells {
                match result {
                    Ok(e) => {
                        info!(
                            "{subject_id} {plane} {condition} {method}: accuracy {:.4}",
                            e.accuracy
                        );
                        entries.push(e);
                    }
                    Err(e) => fail(Some(method), Some(plane), Some(condition), e),
                }
            }
        }
    }
    (entries, failures)
}

/// Runs every selected subject. Checkpoints go under
/// `<out_dir>/checkpoints` when enabled and an output directory is given.
pub fn run_experiment(
    config: &ExperimentConfig,
    subjects: Option<&[String]>,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    config.check()?;
    let ids = resolve_subjects(config, subjects)?;
    let checkpoint_dir = match out_dir {
        Some(dir) if config.save_checkpoints => {
            let d = dir.join("checkpoints");
            std::fs::create_dir_all(&d).map_err(|source| PipelineError::Io {
                path: d.clone(),
                source,
            })?;
            Some(d)
        }
        _ => None,
    };
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for id in &ids {
        let (e, f) = run_subject(config, id, checkpoint_dir.as_deref());
        entries.extend(e);
        failures.extend(f);
    }
    Ok(RunOutcome {
        report: EvalReport::new(entries),
        failures,
    })
}

/// [`run_experiment`] followed by [`report::render_report`] into `out_dir`.
pub fn cmd_run(
    config: &ExperimentConfig,
    out_dir: &Path,
    subjects: Option<&[String]>,
) -> Result<RunOutcome> {
    let outcome = run_experiment(config, subjects, Some(out_dir))?;
    report::render_report(&outcome.report, out_dir)?;
    Ok(outcome)
}
