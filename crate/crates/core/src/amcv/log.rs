//! Answer log: JSON lines, one record per (question, view) followed by one
//! summary record per question. Every metric is recomputable from it.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::{normalize_answer, AnswerSet, AnswerType, OrchestratorConfig, QuestionFailure, ResolutionMode, ViewAnswer};
use crate::dataset::QuestionRecord;
use crate::perturb::{IntensityLevel, PerturbationKind};
use crate::Fraction;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{}:{line}: {message}", path.display())]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub question_id: String,
    pub view_index: u32,
    pub kind: Option<PerturbationKind>,
    pub intensity: Option<IntensityLevel>,
    pub digest: String,
    pub raw: String,
    pub canonical: String,
    pub latency_ms: u64,
}

impl From<(&str, &ViewAnswer)> for ViewRecord {
    fn from((qid, a): (&str, &ViewAnswer)) -> Self {
        Self {
            question_id: qid.to_string(),
            view_index: a.view_index,
            kind: a.kind,
            intensity: a.intensity,
            digest: a.digest.clone(),
            raw: a.raw.clone(),
            canonical: a.canonical.clone(),
            latency_ms: a.latency_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub question_id: String,
    pub status: QuestionStatus,
    pub error: Option<String>,
    pub model_name: String,
    pub resolution_mode: ResolutionMode,
    pub tau: f64,
    pub answer_type: AnswerType,
    pub choices: Option<Vec<String>>,
    /// Canonical form of the ground truth.
    pub ground_truth: String,
    /// Perturbed views in the plan (N).
    pub n_views: u32,
    /// Views actually queried: N+1, or 1 under single_view.
    pub views_queried: u32,
    #[serde(with = "ratio_str")]
    pub c_q: Option<Fraction>,
    pub a_mode: Option<String>,
    pub triggered: bool,
    pub correction_raw: Option<String>,
    pub correction_fallback: bool,
    pub correction_error: Option<String>,
    pub a_final: Option<String>,
    pub total_calls: u32,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    View(ViewRecord),
    Summary(SummaryRecord),
}

mod ratio_str {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<Fraction>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(r) => s.serialize_str(&format!("{}/{}", r.numer(), r.denom())),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Fraction>, D::Error> {
        let Some(text) = Option::<String>::deserialize(d)? else {
            return Ok(None);
        };
        let (n, m) = text
            .split_once('/')
            .ok_or_else(|| serde::de::Error::custom(format!("expected a/b, got {text:?}")))?;
        let n: i64 = n.trim().parse().map_err(serde::de::Error::custom)?;
        let m: i64 = m.trim().parse().map_err(serde::de::Error::custom)?;
        if m <= 0 {
            return Err(serde::de::Error::custom("non-positive denominator"));
        }
        Ok(Some(Fraction::new(n, m)))
    }
}

/// Run-level context copied into every summary.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub model_name: String,
    pub cfg: OrchestratorConfig,
    pub n_views: u32,
}

impl RunContext {
    fn summary(&self, q: &QuestionRecord) -> SummaryRecord {
        SummaryRecord {
            question_id: q.id.clone(),
            status: QuestionStatus::Ok,
            error: None,
            model_name: self.model_name.clone(),
            resolution_mode: self.cfg.resolution_mode,
            tau: self.cfg.tau,
            answer_type: q.answer_type,
            choices: q.choices.clone(),
            ground_truth: normalize_answer(&q.ground_truth, q.answer_type, q.choices.as_deref()),
            n_views: self.n_views,
            views_queried: match self.cfg.resolution_mode {
                ResolutionMode::SingleView => 1,
                _ => self.n_views + 1,
            },
            c_q: None,
            a_mode: None,
            triggered: false,
            correction_raw: None,
            correction_fallback: false,
            correction_error: None,
            a_final: None,
            total_calls: 0,
            wall_ms: 0,
        }
    }

    /// Records for an answered question: its views in index order, then the summary.
    pub fn answered(&self, q: &QuestionRecord, set: &AnswerSet, wall_ms: u64) -> Vec<LogRecord> {
        let mut out: Vec<LogRecord> = set
            .answers
            .iter()
            .map(|a| LogRecord::View((q.id.as_str(), a).into()))
            .collect();
        let corr = set.correction.as_ref();
        out.push(LogRecord::Summary(SummaryRecord {
            c_q: Some(set.c_q),
            a_mode: Some(set.a_mode.clone()),
            triggered: set.triggered_correction,
            correction_raw: corr.and_then(|c| c.raw.clone()),
            correction_fallback: corr.is_some_and(|c| c.fell_back),
            correction_error: corr.and_then(|c| c.error.clone()),
            a_final: Some(set.a_final.clone()),
            total_calls: set.total_calls(),
            wall_ms,
            ..self.summary(q)
        }));
        out
    }

    /// Records for a failed question: whatever views returned, then a failed summary.
    pub fn failed(&self, q: &QuestionRecord, failure: &QuestionFailure, wall_ms: u64) -> Vec<LogRecord> {
        let mut out: Vec<LogRecord> = failure
            .partial
            .iter()
            .map(|a| LogRecord::View((q.id.as_str(), a).into()))
            .collect();
        let base = self.summary(q);
        out.push(LogRecord::Summary(SummaryRecord {
            status: QuestionStatus::Failed,
            error: Some(failure.error.to_string()),
            total_calls: base.views_queried,
            wall_ms,
            ..base
        }));
        out
    }
}

/// Append-only log file. Each question's block is written and flushed in a
/// single call, so a reader never sees half a record.
pub struct LogWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self, LogError> {
        let io = |source| LogError::Io { path: path.to_path_buf(), source };
        let file = File::create(path).map_err(io)?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, records: &[LogRecord]) -> Result<(), LogError> {
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r).expect("records serialize"));
            buf.push('\n');
        }
        let mut f = self.file.lock().unwrap();
        f.write_all(buf.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|source| LogError::Io { path: self.path.clone(), source })
    }
}

/// One question's records.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionLog {
    pub summary: SummaryRecord,
    /// Sorted by view index.
    pub views: Vec<ViewRecord>,
    /// Line of the summary record, for error messages.
    pub line: usize,
}

impl QuestionLog {
    pub fn view(&self, index: u32) -> Option<&ViewRecord> {
        self.views
            .binary_search_by_key(&index, |v| v.view_index)
            .ok()
            .map(|i| &self.views[i])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnswerLog {
    pub path: PathBuf,
    pub questions: Vec<QuestionLog>,
}

impl AnswerLog {
    pub fn load(path: &Path) -> Result<Self, LogError> {
        let text = std::fs::read_to_string(path).map_err(|source| LogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Parses log text. View records must precede their question's summary;
    /// views without a summary, duplicate views and duplicate summaries are errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self, LogError> {
        let bad = |line: usize, message: String| LogError::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut questions = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut pending: std::collections::BTreeMap<String, (usize, Vec<ViewRecord>)> = Default::default();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(line).map_err(|e| bad(n, e.to_string()))?;
            match rec {
                LogRecord::View(v) => {
                    if seen.contains(&v.question_id) {
                        return Err(bad(n, format!("view record for {} after its summary", v.question_id)));
                    }
                    let entry = pending.entry(v.question_id.clone()).or_insert((n, Vec::new()));
                    if entry.1.iter().any(|x| x.view_index == v.view_index) {
                        return Err(bad(n, format!("duplicate view {} for {}", v.view_index, v.question_id)));
                    }
                    entry.1.push(v);
                }
                LogRecord::Summary(s) => {
                    if !seen.insert(s.question_id.clone()) {
                        return Err(bad(n, format!("duplicate summary for {}", s.question_id)));
                    }
                    let mut views = pending.remove(&s.question_id).map(|p| p.1).unwrap_or_default();
                    views.sort_by_key(|v| v.view_index);
                    questions.push(QuestionLog { summary: s, views, line: n });
                }
            }
        }
        if let Some((qid, (line, _))) = pending.into_iter().next() {
            return Err(bad(line, format!("view records for {qid} have no summary")));
        }
        Ok(Self {
            path: path.to_path_buf(),
            questions,
        })
    }
}

/// Zeroes every `latency_ms` and `wall_ms` field, for comparing runs.
pub fn strip_timings(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        match serde_json::from_str::<serde_json::Value>(line) {
            Ok(mut v) => {
                for key in ["latency_ms", "wall_ms"] {
                    if let Some(x) = v.get_mut(key) {
                        *x = 0.into();
                    }
                }
                out.push_str(&v.to_string());
            }
            Err(_) => out.push_str(line),
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(qid: &str, i: u32, canon: &str) -> String {
        serde_json::to_string(&LogRecord::View(ViewRecord {
            question_id: qid.into(),
            view_index: i,
            kind: (i > 0).then_some(PerturbationKind::Rotation),
            intensity: (i > 0).then_some(IntensityLevel::High),
            digest: "d".into(),
            raw: canon.into(),
            canonical: canon.into(),
            latency_ms: 7,
        }))
        .unwrap()
    }

    fn summary(qid: &str) -> String {
        let ctx = RunContext {
            model_name: "m".into(),
            cfg: OrchestratorConfig::default(),
            n_views: 1,
        };
        let q = QuestionRecord {
            id: qid.into(),
            image_path: "x.png".into(),
            question_text: "?".into(),
            answer_type: AnswerType::ShortAnswer,
            choices: None,
            ground_truth: "Yes".into(),
            domain: crate::dataset::Domain::Physics,
            subtopic: "s".into(),
            render_schema: None,
        };
        let mut s = ctx.summary(&q);
        s.c_q = Some(Fraction::new(2, 4));
        serde_json::to_string(&LogRecord::Summary(s)).unwrap()
    }

    #[test]
    fn round_trip() {
        let text = [view("q", 1, "no"), view("q", 0, "yes"), summary("q")].join("\n");
        let log = AnswerLog::parse(&text, Path::new("a.jsonl")).unwrap();
        assert_eq!(log.questions.len(), 1);
        let q = &log.questions[0];
        assert_eq!(q.views.iter().map(|v| v.view_index).collect::<Vec<_>>(), [0, 1]);
        assert_eq!(q.summary.c_q, Some(Fraction::new(1, 2)));
        assert_eq!(q.summary.ground_truth, "yes");
        assert_eq!(q.view(1).unwrap().canonical, "no");
        assert!(summary("q").contains(r#""c_q":"1/2""#));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = format!("{}\n{}\nnot json\n", view("q", 0, "a"), summary("q"));
        let err = AnswerLog::parse(&text, Path::new("a.jsonl")).unwrap_err();
        assert!(err.to_string().starts_with("a.jsonl:3:"), "{err}");

        let text = format!("{}\n{}\n{}\n", view("q", 0, "a"), summary("q"), summary("q"));
        let err = AnswerLog::parse(&text, Path::new("a.jsonl")).unwrap_err();
        assert!(err.to_string().contains(":3: duplicate summary"), "{err}");

        let text = format!("{}\n{}\n", view("q", 0, "a"), view("q", 0, "b"));
        assert!(AnswerLog::parse(&text, Path::new("a")).unwrap_err().to_string().contains(":2: duplicate view"));

        let err = AnswerLog::parse(&view("r", 0, "a"), Path::new("a")).unwrap_err();
        assert!(err.to_string().contains("have no summary"));
    }

    #[test]
    fn strip_timings_zeroes_latency() {
        let text = format!("{}\n", view("q", 0, "a"));
        let stripped = strip_timings(&text);
        assert!(stripped.contains(r#""latency_ms":0"#));
        assert!(!stripped.contains(r#""latency_ms":7"#));
    }
}
