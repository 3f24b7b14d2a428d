use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{io_err, DatasetError, QuestionRecord};
use crate::image::{decode_png, encode_png, Image};
use crate::perturb::{apply_perturbation, build_view_plan, IntensityLevel, IntensityTable, PerturbationKind};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub view_index: u32,
    pub kind: PerturbationKind,
    pub intensity: IntensityLevel,
    /// Relative to the augmented root.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedQuestion {
    pub question: QuestionRecord,
    /// Re-encoded clean image (`<qid>/view_0.png`), relative to the augmented root.
    pub clean: PathBuf,
    pub views: Vec<ViewEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentFailure {
    pub question_id: String,
    pub error: String,
}

/// `<root>/manifest.json`: the replayable description of an augmented tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedManifest {
    pub master_seed: u64,
    pub n_views: u32,
    pub table: IntensityTable,
    pub questions: Vec<AugmentedQuestion>,
    #[serde(default)]
    pub failures: Vec<AugmentFailure>,
}

impl AugmentedManifest {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Every referenced file exists and decodes.
    pub fn check_integrity(&self, root: &Path) -> Result<(), DatasetError> {
        for q in &self.questions {
            if q.views.len() != self.n_views as usize {
                return Err(DatasetError::Validation {
                    path: root.join(MANIFEST_FILE).display().to_string(),
                    line: 0,
                    message: format!("{} has {} views, expected {}", q.question.id, q.views.len(), self.n_views),
                });
            }
            for rel in std::iter::once(&q.clean).chain(q.views.iter().map(|v| &v.path)) {
                let p = root.join(rel);
                let bytes = fs::read(&p).map_err(io_err(&p))?;
                decode_png(&bytes).map_err(|e| DatasetError::Image(p.display().to_string(), e))?;
            }
        }
        Ok(())
    }
}

/// Builds every question's view plan and writes `<out>/<qid>/view_<i>.png`
/// plus `<out>/manifest.json`. Image paths in `questions` resolve against
/// `base_dir`. A question whose image cannot be read or perturbed is listed
/// under `failures`; the rest still complete.
pub fn augment(
    questions: &[QuestionRecord],
    base_dir: &Path,
    master_seed: u64,
    n_views: u32,
    table: &IntensityTable,
    out_dir: &Path,
) -> Result<AugmentedManifest, DatasetError> {
    // Reject bad view counts before touching the filesystem.
    build_view_plan("probe", master_seed, n_views)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let results: Vec<Mutex<Option<Result<AugmentedQuestion, String>>>> =
        questions.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get()).min(questions.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(q) = questions.get(i) else { break };
                let outcome = augment_one(q, base_dir, master_seed, n_views, table, out_dir);
                *results[i].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut manifest = AugmentedManifest {
        master_seed,
        n_views,
        table: table.clone(),
        questions: Vec::new(),
        failures: Vec::new(),
    };
    for (q, slot) in questions.iter().zip(results) {
        match slot.into_inner().unwrap().expect("every question visited") {
            Ok(entry) => manifest.questions.push(entry),
            Err(error) => manifest.failures.push(AugmentFailure {
                question_id: q.id.clone(),
                error,
            }),
        }
    }
    let path = out_dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(manifest)
}

fn augment_one(
    q: &QuestionRecord,
    base_dir: &Path,
    master_seed: u64,
    n_views: u32,
    table: &IntensityTable,
    out_dir: &Path,
) -> Result<AugmentedQuestion, String> {
    let src = q.resolve_image(base_dir);
    let bytes = fs::read(&src).map_err(|e| format!("{}: {e}", src.display()))?;
    let clean: Image = decode_png(&bytes).map_err(|e| format!("{}: {e}", src.display()))?;
    let plan = build_view_plan(&q.id, master_seed, n_views).map_err(|e| e.to_string())?;

    let dir = out_dir.join(&q.id);
    fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let write = |index: u32, img: &Image| -> Result<PathBuf, String> {
        let rel = Path::new(&q.id).join(format!("view_{index}.png"));
        let png = encode_png(img).map_err(|e| e.to_string())?;
        fs::write(out_dir.join(&rel), png).map_err(|e| format!("{}: {e}", rel.display()))?;
        Ok(rel)
    };

    let clean_path = write(0, &clean)?;
    let mut views = Vec::with_capacity(plan.specs.len());
    for spec in &plan.specs {
        let img = apply_perturbation(&clean, spec, table).map_err(|e| format!("view {}: {e}", spec.view_index))?;
        views.push(ViewEntry {
            view_index: spec.view_index,
            kind: spec.kind,
            intensity: spec.intensity,
            path: write(spec.view_index, &img)?,
        });
    }
    Ok(AugmentedQuestion {
        question: q.clone(),
        clean: clean_path,
        views,
    })
}
