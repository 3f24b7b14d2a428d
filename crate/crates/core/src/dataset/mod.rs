//! Question manifests, the augmentation builder and the synthetic chart suite.

mod augment;
mod glyphs;
mod synth;

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amcv::AnswerType;

pub use augment::{augment, AugmentFailure, AugmentedManifest, AugmentedQuestion, ViewEntry, MANIFEST_FILE};
pub use synth::{
    ground_truth_for, synth_generate, synth_render, BarSlot, ChartLayout, ChartTask, RenderSchema,
    BAR_CHART_SCHEMA, SYNTH_MANIFEST_FILE,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}:{line}: {message}")]
    Validation {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("image error for {0}: {1}")]
    Image(String, crate::image::ImageError),
    #[error(transparent)]
    Perturb(#[from] crate::perturb::PerturbError),
    #[error("manifest encoding failed: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |e| DatasetError::Io(path.display().to_string(), e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Physics,
    Chemistry,
    Biology,
    Geography,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Physics, Domain::Chemistry, Domain::Biology, Domain::Geography];
}

/// One diagram QA item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub image_path: PathBuf,
    pub question_text: String,
    pub answer_type: AnswerType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub ground_truth: String,
    pub domain: Domain,
    pub subtopic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render_schema: Option<RenderSchema>,
}

impl QuestionRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty()
            || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
            || self.id.starts_with('.')
        {
            return Err(format!("question id {:?} must be non-empty [A-Za-z0-9_.-]", self.id));
        }
        match self.answer_type {
            AnswerType::MultipleChoice => {
                let n = match &self.choices {
                    Some(c) if (2..=5).contains(&c.len()) => c.len(),
                    Some(c) => return Err(format!("multiple_choice needs 2-5 choices, got {}", c.len())),
                    None => return Err("multiple_choice needs choices".into()),
                };
                let allowed: Vec<String> = (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect();
                if !allowed.contains(&self.ground_truth) {
                    return Err(format!(
                        "ground_truth {:?} is not one of {}",
                        self.ground_truth,
                        allowed.join(",")
                    ));
                }
            }
            AnswerType::FillInBlank | AnswerType::ShortAnswer => {
                if self.ground_truth.trim().is_empty() {
                    return Err("ground_truth must not be empty".into());
                }
            }
        }
        Ok(())
    }

    pub fn resolve_image(&self, base: &Path) -> PathBuf {
        if self.image_path.is_absolute() {
            self.image_path.clone()
        } else {
            base.join(&self.image_path)
        }
    }
}

/// Reads a JSON-lines manifest. Blank lines are skipped; ids must be unique.
pub fn load_manifest(path: &Path) -> Result<Vec<QuestionRecord>, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let shown = path.display().to_string();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let invalid = |message: String| DatasetError::Validation {
            path: shown.clone(),
            line: i + 1,
            message,
        };
        let record: QuestionRecord = serde_json::from_str(&line).map_err(|e| invalid(e.to_string()))?;
        record.validate().map_err(invalid)?;
        if !seen.insert(record.id.clone()) {
            return Err(invalid(format!("duplicate question id {:?}", record.id)));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[QuestionRecord]) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}
