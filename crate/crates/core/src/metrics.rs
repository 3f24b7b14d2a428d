//! Clean accuracy, perturbation robustness, visual degradation consistency
//! and call accounting, computed from answer logs in exact arithmetic.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::amcv::consistency_score;
use crate::amcv::log::{AnswerLog, QuestionLog, QuestionStatus};
use crate::amcv::ResolutionMode;
use crate::perturb::{IntensityLevel, PerturbationKind};
use crate::Fraction;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{}:{line}: {question_id}: {message}", path.display())]
    MalformedLog {
        path: PathBuf,
        line: usize,
        question_id: String,
        message: String,
    },
    #[error("{}: no gradable questions", path.display())]
    NoGradableQuestions { path: PathBuf },
    #[error("{}: ablation needs a full_amcv log, got {mode}", path.display())]
    NotFullAmcv { path: PathBuf, mode: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrsMode {
    /// Correct on every view.
    PerView,
    /// Correct final answer.
    AmcvFinal,
}

impl PrsMode {
    /// The PRS a log is reported under by default.
    pub fn for_resolution(mode: ResolutionMode) -> Self {
        match mode {
            ResolutionMode::SingleView => PrsMode::PerView,
            _ => PrsMode::AmcvFinal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Facet {
    Kind,
    Intensity,
}

/// One view as seen by grading.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedView {
    pub view_index: u32,
    pub kind: Option<PerturbationKind>,
    pub intensity: Option<IntensityLevel>,
    pub canonical: String,
    /// Answer equals ground truth.
    pub correct: bool,
    /// Answer equals the clean-view answer (always true for view 0).
    pub agrees: bool,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradedQuestion {
    pub question_id: String,
    pub ground_truth: String,
    /// View 0 first, contiguous by index.
    pub views: Vec<GradedView>,
    pub a_mode: String,
    pub a_final: String,
    pub final_correct: bool,
    pub triggered: bool,
    pub total_calls: u32,
    pub wall_ms: u64,
}

/// Answered questions of one log, plus ids of those that failed at the backend.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedLog {
    pub path: PathBuf,
    pub model_name: String,
    pub resolution_mode: ResolutionMode,
    pub questions: Vec<GradedQuestion>,
    pub failed: Vec<String>,
}

fn grade_question(log: &AnswerLog, q: &QuestionLog) -> Result<GradedQuestion, MetricsError> {
    let s = &q.summary;
    let bad = |message: String| MetricsError::MalformedLog {
        path: log.path.clone(),
        line: q.line,
        question_id: s.question_id.clone(),
        message,
    };
    if q.views.len() != s.views_queried as usize {
        return Err(bad(format!("{} view records, expected {}", q.views.len(), s.views_queried)));
    }
    for (i, v) in q.views.iter().enumerate() {
        if v.view_index != i as u32 {
            return Err(bad(format!("missing view {i}")));
        }
        if (i == 0) != (v.kind.is_none() || v.intensity.is_none()) {
            return Err(bad(format!("view {i} has inconsistent perturbation tags")));
        }
    }
    let clean = &q.views.first().ok_or_else(|| bad("missing view 0".into()))?.canonical;
    let a_mode = s.a_mode.clone().ok_or_else(|| bad("summary lacks a_mode".into()))?;
    let a_final = s.a_final.clone().ok_or_else(|| bad("summary lacks a_final".into()))?;
    let views = q
        .views
        .iter()
        .map(|v| GradedView {
            view_index: v.view_index,
            kind: v.kind,
            intensity: v.intensity,
            canonical: v.canonical.clone(),
            correct: v.canonical == s.ground_truth,
            agrees: &v.canonical == clean,
            latency_ms: v.latency_ms,
        })
        .collect();
    Ok(GradedQuestion {
        question_id: s.question_id.clone(),
        ground_truth: s.ground_truth.clone(),
        views,
        final_correct: a_final == s.ground_truth,
        a_mode,
        a_final,
        triggered: s.triggered,
        total_calls: s.total_calls,
        wall_ms: s.wall_ms,
    })
}

/// Grades every answered question. Failed questions are set aside, not
/// counted wrong. Errors when nothing is left to grade.
pub fn grade(log: &AnswerLog) -> Result<GradedLog, MetricsError> {
    let mut questions = Vec::new();
    let mut failed = Vec::new();
    for q in &log.questions {
        match q.summary.status {
            QuestionStatus::Failed => failed.push(q.summary.question_id.clone()),
            QuestionStatus::Ok => questions.push(grade_question(log, q)?),
        }
    }
    let first = log.questions.first().map(|q| &q.summary);
    match (first, questions.is_empty()) {
        (Some(s), false) => Ok(GradedLog {
            path: log.path.clone(),
            model_name: s.model_name.clone(),
            resolution_mode: s.resolution_mode,
            questions,
            failed,
        }),
        _ => Err(MetricsError::NoGradableQuestions { path: log.path.clone() }),
    }
}

fn percent(hits: usize, total: usize) -> Fraction {
    Fraction::new(100 * hits as i64, total as i64)
}

/// Share of questions whose clean-view answer is correct, in percent.
pub fn clean_accuracy(g: &GradedLog) -> Fraction {
    percent(g.questions.iter().filter(|q| q.views[0].correct).count(), g.questions.len())
}

fn robust(q: &GradedQuestion, mode: PrsMode) -> bool {
    match mode {
        PrsMode::PerView => q.views.iter().all(|v| v.correct),
        PrsMode::AmcvFinal => q.final_correct,
    }
}

pub fn prs(g: &GradedLog, mode: PrsMode) -> Fraction {
    percent(g.questions.iter().filter(|q| robust(q, mode)).count(), g.questions.len())
}

/// Mean over questions of the share of views agreeing with view 0, in percent.
pub fn vdc(g: &GradedLog) -> Fraction {
    let sum: Fraction = g
        .questions
        .iter()
        .map(|q| Fraction::new(q.views.iter().filter(|v| v.agrees).count() as i64, q.views.len() as i64))
        .sum();
    sum * 100 / g.questions.len() as i64
}

/// Robustness restricted to the views of one tag; the clean view never
/// carries a tag. `per_view` requires every tagged view correct;
/// `amcv_final` takes the modal answer of the tagged views (ties to the lower
/// view index). Questions with no view of a tag do not count toward it.
fn faceted<K: Ord + Copy>(g: &GradedLog, mode: PrsMode, tag: impl Fn(&GradedView) -> Option<K>) -> BTreeMap<K, Fraction> {
    let mut tally: BTreeMap<K, (usize, usize)> = BTreeMap::new();
    for q in &g.questions {
        let mut groups: BTreeMap<K, Vec<&GradedView>> = BTreeMap::new();
        for v in &q.views {
            if let Some(k) = tag(v) {
                groups.entry(k).or_default().push(v);
            }
        }
        for (k, views) in groups {
            let ok = match mode {
                PrsMode::PerView => views.iter().all(|v| v.correct),
                PrsMode::AmcvFinal => {
                    let canon: Vec<String> = views.iter().map(|v| v.canonical.clone()).collect();
                    consistency_score(&canon).is_some_and(|(_, mode)| mode == q.ground_truth)
                }
            };
            let e = tally.entry(k).or_default();
            e.0 += ok as usize;
            e.1 += 1;
        }
    }
    tally.into_iter().map(|(k, (hit, n))| (k, percent(hit, n))).collect()
}

pub fn prs_by_kind(g: &GradedLog, mode: PrsMode) -> BTreeMap<PerturbationKind, Fraction> {
    faceted(g, mode, |v| v.kind)
}

pub fn prs_by_intensity(g: &GradedLog, mode: PrsMode) -> BTreeMap<IntensityLevel, Fraction> {
    faceted(g, mode, |v| v.intensity)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Efficiency {
    #[serde(serialize_with = "as_f64")]
    pub mean_wall_s: Fraction,
    #[serde(serialize_with = "as_f64")]
    pub mean_calls: Fraction,
    pub min_calls: u32,
    pub max_calls: u32,
}

pub fn efficiency(g: &GradedLog) -> Efficiency {
    let m = g.questions.len() as i64;
    let wall: i64 = g.questions.iter().map(|q| q.wall_ms as i64).sum();
    let calls: i64 = g.questions.iter().map(|q| q.total_calls as i64).sum();
    Efficiency {
        mean_wall_s: Fraction::new(wall, 1000 * m),
        mean_calls: Fraction::new(calls, m),
        min_calls: g.questions.iter().map(|q| q.total_calls).min().unwrap_or(0),
        max_calls: g.questions.iter().map(|q| q.total_calls).max().unwrap_or(0),
    }
}

pub fn to_f64(f: Fraction) -> f64 {
    *f.numer() as f64 / *f.denom() as f64
}

fn as_f64<S: Serializer>(f: &Fraction, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(to_f64(*f))
}

fn map_as_f64<K: Serialize, S: Serializer>(m: &BTreeMap<K, Fraction>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_map(m.iter().map(|(k, v)| (k, to_f64(*v))))
}

/// Rounds a percentage to one decimal, halves away from zero: 86.35 -> "86.4".
pub fn format_percent(p: Fraction) -> String {
    format_tenths((p * 10).round())
}

/// Signed one-decimal difference, "+7.3" / "-0.4" / "+0.0".
pub fn format_delta(d: Fraction) -> String {
    let t = (d * 10).round();
    let sign = if t < Fraction::from_integer(0) { "" } else { "+" };
    format!("{sign}{}", format_tenths(t))
}

fn format_tenths(t: Fraction) -> String {
    let t = t.to_integer();
    let sign = if t < 0 { "-" } else { "" };
    format!("{sign}{}.{}", t.abs() / 10, t.abs() % 10)
}

/// Every metric for one log (or one re-resolved variant of it).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub model_name: String,
    pub resolution_mode: ResolutionMode,
    pub prs_mode: PrsMode,
    pub m: usize,
    pub failed: Vec<String>,
    #[serde(serialize_with = "as_f64")]
    pub ca: Fraction,
    #[serde(serialize_with = "as_f64")]
    pub prs: Fraction,
    #[serde(serialize_with = "as_f64")]
    pub vdc: Fraction,
    #[serde(serialize_with = "map_as_f64")]
    pub by_kind: BTreeMap<PerturbationKind, Fraction>,
    #[serde(serialize_with = "map_as_f64")]
    pub by_intensity: BTreeMap<IntensityLevel, Fraction>,
    pub corrections: usize,
    pub efficiency: Efficiency,
}

impl MetricsReport {
    pub fn compute(g: &GradedLog, prs_mode: PrsMode) -> Self {
        Self {
            model_name: g.model_name.clone(),
            resolution_mode: g.resolution_mode,
            prs_mode,
            m: g.questions.len(),
            failed: g.failed.clone(),
            ca: clean_accuracy(g),
            prs: prs(g, prs_mode),
            vdc: vdc(g),
            by_kind: prs_by_kind(g, prs_mode),
            by_intensity: prs_by_intensity(g, prs_mode),
            corrections: g.questions.iter().filter(|q| q.triggered).count(),
            efficiency: efficiency(g),
        }
    }

    /// Loads, grades and scores a log under its default PRS mode.
    pub fn for_log(log: &AnswerLog) -> Result<Self, MetricsError> {
        let g = grade(log)?;
        Ok(Self::compute(&g, PrsMode::for_resolution(g.resolution_mode)))
    }
}

/// Re-resolves a full_amcv log as the three ablation variants, without new
/// model calls: single view (clean answer only, robustness judged on every
/// view, one call per question), majority vote (`a_final = a_mode`, no
/// correction calls) and the logged full run.
pub fn ablation(log: &AnswerLog) -> Result<[MetricsReport; 3], MetricsError> {
    let full = grade(log)?;
    if full.resolution_mode != ResolutionMode::FullAmcv {
        return Err(MetricsError::NotFullAmcv {
            path: log.path.clone(),
            mode: full.resolution_mode.as_str(),
        });
    }
    let mut single = full.clone();
    single.resolution_mode = ResolutionMode::SingleView;
    for q in &mut single.questions {
        q.a_final = q.views[0].canonical.clone();
        q.final_correct = q.views[0].correct;
        q.triggered = false;
        q.total_calls = 1;
        q.wall_ms = q.views[0].latency_ms;
    }
    let mut majority = full.clone();
    majority.resolution_mode = ResolutionMode::MajorityVote;
    for q in &mut majority.questions {
        q.a_final = q.a_mode.clone();
        q.final_correct = q.a_mode == q.ground_truth;
        if q.triggered {
            q.total_calls -= 1;
        }
        q.triggered = false;
    }
    Ok([
        MetricsReport::compute(&single, PrsMode::PerView),
        MetricsReport::compute(&majority, PrsMode::AmcvFinal),
        MetricsReport::compute(&full, PrsMode::AmcvFinal),
    ])
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::amcv::log::{LogRecord, SummaryRecord, ViewRecord};
    use crate::amcv::AnswerType;

    /// A log from canonical answers per question (view 0 first); ground truth "A".
    pub fn log_from(rows: &[(&[&str], &str, bool)], mode: ResolutionMode) -> AnswerLog {
        let mut text = String::new();
        for (j, (answers, a_final, triggered)) in rows.iter().enumerate() {
            let qid = format!("q{j}");
            for (i, a) in answers.iter().enumerate() {
                let rec = LogRecord::View(ViewRecord {
                    question_id: qid.clone(),
                    view_index: i as u32,
                    kind: (i > 0).then(|| PerturbationKind::ALL[(i - 1) % 5]),
                    intensity: (i > 0).then(|| IntensityLevel::ALL[(i - 1) / 5 % 3]),
                    digest: String::new(),
                    raw: a.to_string(),
                    canonical: a.to_string(),
                    latency_ms: 100,
                });
                text.push_str(&serde_json::to_string(&rec).unwrap());
                text.push('\n');
            }
            let canon: Vec<String> = answers.iter().map(|s| s.to_string()).collect();
            let (c_q, a_mode) = consistency_score(&canon).unwrap();
            let n = answers.len() as u32;
            let rec = LogRecord::Summary(SummaryRecord {
                question_id: qid,
                status: QuestionStatus::Ok,
                error: None,
                model_name: "fixture".into(),
                resolution_mode: mode,
                tau: 0.6,
                answer_type: AnswerType::ShortAnswer,
                choices: None,
                ground_truth: "a".into(),
                n_views: n - 1,
                views_queried: n,
                c_q: Some(c_q),
                a_mode: Some(a_mode),
                triggered: *triggered,
                correction_raw: None,
                correction_fallback: false,
                correction_error: None,
                a_final: Some(a_final.to_string()),
                total_calls: n + *triggered as u32,
                wall_ms: 1000,
            });
            text.push_str(&serde_json::to_string(&rec).unwrap());
            text.push('\n');
        }
        AnswerLog::parse(&text, std::path::Path::new("fixture.jsonl")).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::log_from;
    use super::*;
    use crate::amcv::log::AnswerLog;
    use std::path::Path;

    const FULL: ResolutionMode = ResolutionMode::FullAmcv;

    fn graded(rows: &[(&[&str], &str, bool)]) -> GradedLog {
        grade(&log_from(rows, FULL)).unwrap()
    }

    #[test]
    fn clean_accuracy_counts_view_zero() {
        assert_eq!(clean_accuracy(&graded(&[(&["a", "b"], "a", false)])), Fraction::from_integer(100));
        let g = graded(&[(&["a", "a"], "a", false), (&["b", "a"], "b", false)]);
        assert_eq!(format_percent(clean_accuracy(&g)), "50.0");
    }

    #[test]
    fn per_view_prs_brute_force_rows() {
        let g = graded(&[
            (&["a", "a", "a"], "a", false),
            (&["a", "b", "a"], "a", false),
            (&["b", "b", "b"], "b", false),
        ]);
        assert_eq!(prs(&g, PrsMode::PerView), Fraction::new(100, 3));
        assert_eq!(format_percent(prs(&g, PrsMode::PerView)), "33.3");
    }

    #[test]
    fn amcv_final_diverges_from_per_view() {
        let g = graded(&[(&["a", "b", "a"], "a", true), (&["b", "a", "a"], "a", false)]);
        assert_eq!(prs(&g, PrsMode::AmcvFinal), Fraction::from_integer(100));
        assert!(prs(&g, PrsMode::PerView) < Fraction::from_integer(100));
    }

    #[test]
    fn vdc_examples() {
        assert_eq!(vdc(&graded(&[(&["x", "x", "y"], "x", false)])), Fraction::new(200, 3));
        let eight_of_eleven: &[&str] = &["a", "a", "a", "a", "a", "a", "a", "a", "b", "b", "b"];
        let g = graded(&[(&["a"; 11], "a", false), (eight_of_eleven, "a", false)]);
        assert_eq!(vdc(&g), Fraction::new(100, 2) * (Fraction::from_integer(1) + Fraction::new(8, 11)));
        assert_eq!(format_percent(vdc(&g)), "86.4");
    }

    #[test]
    fn only_occlusion_errors_lower_occlusion_prs() {
        // Views 1..=5 cover the five kinds in declaration order; occlusion is view 4.
        let g = graded(&[
            (&["a", "a", "a", "a", "b", "a"], "a", false),
            (&["a", "a", "a", "a", "a", "a"], "a", false),
        ]);
        let by = prs_by_kind(&g, PrsMode::PerView);
        assert_eq!(by.len(), 5);
        assert_eq!(by[&PerturbationKind::Occlusion], Fraction::from_integer(50));
        for (k, v) in &by {
            if *k != PerturbationKind::Occlusion {
                assert_eq!(*v, Fraction::from_integer(100));
            }
        }
    }

    #[test]
    fn faceted_final_votes_within_tag() {
        // Views 1 and 6 are both gaussian noise; they split b/a, b is the lower index.
        let answers: &[&str] = &["a", "b", "a", "a", "a", "a", "a"];
        let by = prs_by_kind(&graded(&[(answers, "a", false)]), PrsMode::AmcvFinal);
        assert_eq!(by[&PerturbationKind::GaussianNoise], Fraction::from_integer(0));
        assert_eq!(by[&PerturbationKind::Rotation], Fraction::from_integer(100));
    }

    #[test]
    fn efficiency_means() {
        let mut rows: Vec<(&[&str], &str, bool)> = Vec::new();
        let split: &[&str] = &["a", "a", "a", "a", "a", "a", "b", "b", "b", "b", "b"];
        for j in 0..4 {
            rows.push((split, "a", j % 2 == 0));
        }
        let e = efficiency(&graded(&rows));
        assert_eq!(e.mean_calls, Fraction::new(23, 2));
        assert_eq!((e.min_calls, e.max_calls), (11, 12));
        assert_eq!(e.mean_wall_s, Fraction::from_integer(1));
    }

    #[test]
    fn failed_questions_are_excluded() {
        let mut log = log_from(&[(&["a", "a"], "a", false), (&["b", "b"], "b", false)], FULL);
        log.questions[1].summary.status = QuestionStatus::Failed;
        let g = grade(&log).unwrap();
        assert_eq!(g.questions.len(), 1);
        assert_eq!(g.failed, ["q1"]);
        assert_eq!(clean_accuracy(&g), Fraction::from_integer(100));
    }

    #[test]
    fn missing_view_names_the_question() {
        let mut log = log_from(&[(&["a", "a", "a"], "a", false)], FULL);
        log.questions[0].views.remove(1);
        let err = grade(&log).unwrap_err();
        assert!(err.to_string().contains("q0"), "{err}");
    }

    #[test]
    fn empty_log_has_nothing_to_grade() {
        let log = AnswerLog::parse("", Path::new("empty.jsonl")).unwrap();
        assert!(grade(&log).unwrap_err().to_string().contains("no gradable questions"));
    }

    #[test]
    fn half_up_rendering() {
        assert_eq!(format_percent(Fraction::new(1727, 20)), "86.4");
        assert_eq!(format_percent(Fraction::new(1725, 20)), "86.3");
        assert_eq!(format_percent(Fraction::new(8635, 100)), "86.4");
        assert_eq!(format_percent(Fraction::from_integer(100)), "100.0");
        assert_eq!(format_percent(Fraction::from_integer(0)), "0.0");
        assert_eq!(format_delta(Fraction::new(73, 10)), "+7.3");
        assert_eq!(format_delta(Fraction::new(-4, 10)), "-0.4");
    }

    #[test]
    fn ablation_variants() {
        let split: &[&str] = &["a", "b", "b", "a", "b", "a"];
        let log = log_from(&[(split, "a", true), (&["a"; 6], "a", false)], FULL);
        let [single, majority, full] = ablation(&log).unwrap();
        assert_eq!(single.efficiency.mean_calls, Fraction::from_integer(1));
        assert_eq!(single.prs, Fraction::from_integer(50));
        assert_eq!(majority.efficiency.mean_calls, Fraction::from_integer(6));
        assert_eq!(majority.prs, Fraction::from_integer(100), "a and b tie; a holds view 0");
        assert_eq!(full.efficiency.mean_calls, Fraction::new(13, 2));
        assert_eq!(single.ca, full.ca);
        assert_eq!(single.vdc, full.vdc);
        let mv = log_from(&[(split, "a", false)], ResolutionMode::MajorityVote);
        assert!(matches!(ablation(&mv), Err(MetricsError::NotFullAmcv { .. })));
    }
}
