use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use thiserror::Error;

use super::log::{LogError, LogRecord, LogWriter, RunContext};
use super::orchestrate::elapsed_ms;
use super::{run_multi_view, OrchestratorConfig, ViewInput};
use crate::backend::{Backend, BackendError};
use crate::dataset::{io_err, AugmentedManifest, AugmentedQuestion, DatasetError};
use crate::image::decode_png;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("aborted at {question_id}: {error}")]
    Fatal { question_id: String, error: BackendError },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuiteStats {
    pub answered: usize,
    pub failed: usize,
    pub triggered: usize,
    pub total_calls: u64,
    /// Augmentation failures carried over from the manifest; not evaluated.
    pub skipped: usize,
}

/// Reads the clean image and every perturbed view of one question.
pub fn load_views(q: &AugmentedQuestion, root: &Path) -> Result<Vec<ViewInput>, DatasetError> {
    let read = |rel: &Path| -> Result<(Arc<crate::image::Image>, Arc<Vec<u8>>), DatasetError> {
        let p = root.join(rel);
        let bytes = std::fs::read(&p).map_err(io_err(&p))?;
        let img = decode_png(&bytes).map_err(|e| DatasetError::Image(p.display().to_string(), e))?;
        Ok((Arc::new(img), Arc::new(bytes)))
    };
    let (image, png) = read(&q.clean)?;
    let mut views = vec![ViewInput {
        view_index: 0,
        kind: None,
        intensity: None,
        image,
        png,
    }];
    for v in &q.views {
        let (image, png) = read(&v.path)?;
        views.push(ViewInput {
            view_index: v.view_index,
            kind: Some(v.kind),
            intensity: Some(v.intensity),
            image,
            png,
        });
    }
    views.sort_by_key(|v| v.view_index);
    Ok(views)
}

enum Outcome {
    Records(Vec<LogRecord>, Option<bool>),
    Fatal(String, BackendError),
    Broken(DatasetError),
}

/// Evaluates every question of an augmented tree, `workers` questions at a
/// time, appending to `log` in manifest order. A question whose backend call
/// fails non-fatally is logged as failed and the run goes on; a fatal
/// (configuration) error stops new work and is returned once in-flight
/// questions finish.
pub fn run_suite(
    manifest: &AugmentedManifest,
    root: &Path,
    backend: &dyn Backend,
    cfg: &OrchestratorConfig,
    log: &LogWriter,
    workers: usize,
) -> Result<SuiteStats, SuiteError> {
    cfg.validate().map_err(|e| SuiteError::Config(e.to_string()))?;
    if cfg.n_views != manifest.n_views {
        return Err(SuiteError::Config(format!(
            "orchestrator expects {} views but the manifest has {}",
            cfg.n_views, manifest.n_views
        )));
    }
    let ctx = RunContext {
        model_name: backend.model_name().to_string(),
        cfg: cfg.clone(),
        n_views: manifest.n_views,
    };
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    // Finished questions wait here until every earlier one has been written.
    let pending: Mutex<(usize, BTreeMap<usize, Outcome>)> = Mutex::new((0, BTreeMap::new()));
    let stats = Mutex::new(SuiteStats {
        skipped: manifest.failures.len(),
        ..Default::default()
    });
    let first_error: Mutex<Option<SuiteError>> = Mutex::new(None);

    let evaluate = |aq: &AugmentedQuestion| -> Outcome {
        let started = Instant::now();
        let views = match load_views(aq, root) {
            Ok(v) => v,
            Err(e) => return Outcome::Broken(e),
        };
        let q = &aq.question;
        match run_multi_view(q, &views, backend, cfg) {
            Ok(set) => {
                let wall = elapsed_ms(cfg.clock, started);
                Outcome::Records(ctx.answered(q, &set, wall), Some(set.triggered_correction))
            }
            Err(f) if f.error.is_fatal() => Outcome::Fatal(q.id.clone(), f.error),
            Err(f) => {
                let wall = elapsed_ms(cfg.clock, started);
                Outcome::Records(ctx.failed(q, &f, wall), None)
            }
        }
    };

    let flush = |done: usize, outcome: Outcome| {
        let mut guard = pending.lock().unwrap();
        guard.1.insert(done, outcome);
        loop {
            let head = guard.0;
            let Some(outcome) = guard.1.remove(&head) else { break };
            guard.0 += 1;
            let fail = |e: SuiteError| {
                abort.store(true, Ordering::SeqCst);
                first_error.lock().unwrap().get_or_insert(e);
            };
            match outcome {
                Outcome::Records(records, triggered) => {
                    if first_error.lock().unwrap().is_some() {
                        continue;
                    }
                    if let Err(e) = log.append(&records) {
                        fail(e.into());
                        continue;
                    }
                    let mut s = stats.lock().unwrap();
                    if let Some(LogRecord::Summary(sum)) = records.last() {
                        s.total_calls += sum.total_calls as u64;
                    }
                    match triggered {
                        Some(t) => {
                            s.answered += 1;
                            s.triggered += t as usize;
                        }
                        None => s.failed += 1,
                    }
                }
                Outcome::Fatal(question_id, error) => fail(SuiteError::Fatal { question_id, error }),
                Outcome::Broken(e) => fail(e.into()),
            }
        }
    };

    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(manifest.questions.len().max(1)) {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(aq) = manifest.questions.get(i) else { break };
                flush(i, evaluate(aq));
            });
        }
    });

    match first_error.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(stats.into_inner().unwrap()),
    }
}
