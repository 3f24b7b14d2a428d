use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use super::{
    build_self_correction_prompt, consistency_score, normalize_answer, AnswerSet, Clock, CorrectionOutcome,
    OrchestratorConfig, ResolutionMode, ViewAnswer, CORRECTION_TEMPLATE_ID, UNPARSEABLE,
};
use crate::backend::{cache_key, Backend, BackendError, ModelRequest};
use crate::dataset::QuestionRecord;
use crate::image::Image;
use crate::perturb::{IntensityLevel, PerturbationKind};

/// One rendered view, decoded and as the exact PNG bytes sent to backends.
#[derive(Debug, Clone)]
pub struct ViewInput {
    pub view_index: u32,
    pub kind: Option<PerturbationKind>,
    pub intensity: Option<IntensityLevel>,
    pub image: Arc<Image>,
    pub png: Arc<Vec<u8>>,
}

/// A question that could not be answered on every required view.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionFailure {
    pub question_id: String,
    /// Views that did return, in index order.
    pub partial: Vec<ViewAnswer>,
    pub error: BackendError,
}

pub(crate) fn elapsed_ms(clock: Clock, since: Instant) -> u64 {
    match clock {
        Clock::Wall => since.elapsed().as_millis() as u64,
        Clock::Zero => 0,
    }
}

fn request(q: &QuestionRecord, view: &ViewInput, prompt: String, template_id: &str, cfg: &OrchestratorConfig) -> ModelRequest {
    ModelRequest {
        question_id: q.id.clone(),
        view_index: Some(view.view_index),
        image: view.image.clone(),
        png: view.png.clone(),
        question_text: q.question_text.clone(),
        prompt,
        prompt_template_id: template_id.to_string(),
        answer_type: q.answer_type,
        choices: q.choices.clone(),
        render_schema: q.render_schema.clone(),
        decode: cfg.decode,
    }
}

/// Queries every view (only view 0 under `single_view`) concurrently, then
/// scores agreement and resolves the final answer. `views[0]` must be the
/// clean image. Answers are assembled by view index, independent of
/// completion order. Concurrency is capped by the backend (see `Bounded`).
pub fn run_multi_view(
    q: &QuestionRecord,
    views: &[ViewInput],
    backend: &dyn Backend,
    cfg: &OrchestratorConfig,
) -> Result<AnswerSet, QuestionFailure> {
    assert!(
        views.first().is_some_and(|v| v.view_index == 0),
        "views[0] must be the clean view"
    );
    let active = match cfg.resolution_mode {
        ResolutionMode::SingleView => &views[..1],
        _ => views,
    };
    let prompt = cfg.template.render(q);
    let slots: Vec<Mutex<Option<Result<ViewAnswer, BackendError>>>> = active.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..active.len() {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(view) = active.get(i) else { break };
                let req = request(q, view, prompt.clone(), &cfg.template.id, cfg);
                let digest = cache_key(&req, backend.model_name()).to_hex();
                let started = Instant::now();
                let outcome = backend.infer(&req).map(|resp| ViewAnswer {
                    view_index: view.view_index,
                    kind: view.kind,
                    intensity: view.intensity,
                    digest,
                    canonical: normalize_answer(&resp.raw_text, q.answer_type, q.choices.as_deref()),
                    raw: resp.raw_text,
                    latency_ms: elapsed_ms(cfg.clock, started),
                });
                *slots[i].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut answers = Vec::with_capacity(active.len());
    let mut first_error = None;
    for slot in slots {
        match slot.into_inner().unwrap().expect("every view visited") {
            Ok(a) => answers.push(a),
            Err(e) => {
                // Fatal errors take precedence so the run aborts on them.
                if first_error.as_ref().is_none_or(|f: &BackendError| !f.is_fatal() && e.is_fatal()) {
                    first_error = Some(e);
                }
            }
        }
    }
    if let Some(error) = first_error {
        return Err(QuestionFailure {
            question_id: q.id.clone(),
            partial: answers,
            error,
        });
    }

    let canon: Vec<String> = answers.iter().map(|a| a.canonical.clone()).collect();
    let (c_q, a_mode) = consistency_score(&canon).expect("at least the clean view");
    let mut set = AnswerSet {
        question_id: q.id.clone(),
        answers,
        c_q,
        a_final: a_mode.clone(),
        a_mode,
        triggered_correction: false,
        extra_calls: 0,
        correction: None,
    };
    resolve_final(q, &mut set, &views[0], backend, cfg)?;
    Ok(set)
}

/// Sets `a_final`: the modal answer when `c_q >= tau` (or outside
/// `full_amcv`), otherwise one self-correction call on the clean view. An
/// unusable or failed correction keeps `a_mode`; a fatal one fails the question.
pub fn resolve_final(
    q: &QuestionRecord,
    set: &mut AnswerSet,
    clean: &ViewInput,
    backend: &dyn Backend,
    cfg: &OrchestratorConfig,
) -> Result<(), QuestionFailure> {
    set.a_final = set.a_mode.clone();
    if cfg.resolution_mode != ResolutionMode::FullAmcv || !cfg.below_threshold(set.c_q) {
        return Ok(());
    }
    let prompt = build_self_correction_prompt(q, set).expect("c_q < tau implies disagreement");
    set.triggered_correction = true;
    set.extra_calls = 1;
    let mut req = request(q, clean, prompt, CORRECTION_TEMPLATE_ID, cfg);
    req.view_index = None;
    match backend.infer(&req) {
        Ok(resp) => {
            let canonical = normalize_answer(&resp.raw_text, q.answer_type, q.choices.as_deref());
            let usable = !canonical.is_empty() && canonical != UNPARSEABLE;
            if usable {
                set.a_final = canonical;
            }
            set.correction = Some(CorrectionOutcome {
                raw: Some(resp.raw_text),
                fell_back: !usable,
                error: None,
            });
            Ok(())
        }
        Err(e) if e.is_fatal() => Err(QuestionFailure {
            question_id: q.id.clone(),
            partial: set.answers.clone(),
            error: e,
        }),
        Err(e) => {
            set.correction = Some(CorrectionOutcome {
                raw: None,
                fell_back: true,
                error: Some(e.to_string()),
            });
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amcv::AnswerType;
    use crate::backend::{Bounded, StubBackend};
    use crate::dataset::Domain;
    use crate::Fraction;
    use std::time::Duration;

    fn question() -> QuestionRecord {
        QuestionRecord {
            id: "q1".into(),
            image_path: "x.png".into(),
            question_text: "Which bar is tallest?".into(),
            answer_type: AnswerType::MultipleChoice,
            choices: Some(vec!["Bar A".into(), "Bar B".into(), "Bar C".into()]),
            ground_truth: "B".into(),
            domain: Domain::Biology,
            subtopic: "s".into(),
            render_schema: None,
        }
    }

    fn views(n: u32) -> Vec<ViewInput> {
        (0..=n)
            .map(|i| ViewInput {
                view_index: i,
                kind: (i > 0).then(|| PerturbationKind::ALL[(i as usize - 1) % 5]),
                intensity: (i > 0).then_some(IntensityLevel::Low),
                image: Arc::new(Image::filled(2, 2, [i as u8; 3]).unwrap()),
                png: Arc::new(vec![i as u8]),
            })
            .collect()
    }

    /// Stub answering `script[view]` and `correction` for the self-correction call.
    fn scripted(script: &'static [&'static str], correction: &'static str) -> StubBackend {
        StubBackend::new("stub", move |req| {
            Ok(match req.view_index {
                Some(v) => script[v as usize].to_string(),
                None => correction.to_string(),
            })
        })
    }

    fn cfg(mode: ResolutionMode, tau: f64) -> OrchestratorConfig {
        OrchestratorConfig {
            tau,
            resolution_mode: mode,
            ..Default::default()
        }
    }

    #[test]
    fn unanimous_stub() {
        let stub = StubBackend::constant("s", "B");
        let set = run_multi_view(&question(), &views(10), &stub, &cfg(ResolutionMode::FullAmcv, 0.6)).unwrap();
        assert_eq!(set.c_q, Fraction::from_integer(1));
        assert_eq!((set.a_mode.as_str(), set.a_final.as_str()), ("B", "B"));
        assert!(!set.triggered_correction);
        assert_eq!(set.total_calls(), 11);
        assert_eq!(stub.calls(), 11);
    }

    #[test]
    fn seven_of_eleven_clears_threshold() {
        static S: [&str; 11] = ["B", "B", "B", "B", "B", "B", "B", "C", "C", "C", "C"];
        let stub = scripted(&S, "C");
        let set = run_multi_view(&question(), &views(10), &stub, &cfg(ResolutionMode::FullAmcv, 0.6)).unwrap();
        assert_eq!(set.c_q, Fraction::new(7, 11));
        assert_eq!(set.a_final, "B");
        assert!(!set.triggered_correction);
        assert_eq!(stub.calls(), 11);
    }

    #[test]
    fn six_of_eleven_triggers_correction() {
        static S: [&str; 11] = ["B", "B", "B", "B", "B", "B", "C", "C", "C", "C", "C"];
        let stub = scripted(&S, "Final answer: C");
        let set = run_multi_view(&question(), &views(10), &stub, &cfg(ResolutionMode::FullAmcv, 0.6)).unwrap();
        assert_eq!(set.c_q, Fraction::new(6, 11));
        assert_eq!(set.a_mode, "B");
        assert!(set.triggered_correction);
        assert_eq!(set.a_final, "C");
        assert_eq!(set.total_calls(), 12);
        assert_eq!(stub.calls(), 12);
        assert_eq!(stub.correction_calls(), 1);
    }

    #[test]
    fn majority_vote_never_corrects() {
        static S: [&str; 11] = ["B", "C", "A", "B", "C", "A", "B", "C", "A", "B", "C"];
        let stub = scripted(&S, "A");
        let set = run_multi_view(&question(), &views(10), &stub, &cfg(ResolutionMode::MajorityVote, 1.0)).unwrap();
        assert!(!set.triggered_correction);
        assert_eq!(stub.correction_calls(), 0);
        assert_eq!(set.a_final, "B", "B and C tie at 4; B holds the lower view index");
    }

    #[test]
    fn single_view_queries_only_the_clean_image() {
        static S: [&str; 11] = ["A", "C", "C", "C", "C", "C", "C", "C", "C", "C", "C"];
        let stub = scripted(&S, "C");
        let set = run_multi_view(&question(), &views(10), &stub, &cfg(ResolutionMode::SingleView, 1.0)).unwrap();
        assert_eq!(stub.calls(), 1);
        assert_eq!(set.answers.len(), 1);
        assert_eq!(set.a_final, "A");
        assert_eq!(set.total_calls(), 1);
    }

    #[test]
    fn tau_zero_never_fires() {
        static S: [&str; 11] = ["A", "B", "C", "A", "B", "C", "A", "B", "C", "A", "B"];
        let stub = scripted(&S, "C");
        let set = run_multi_view(&question(), &views(10), &stub, &cfg(ResolutionMode::FullAmcv, 0.0)).unwrap();
        assert!(!set.triggered_correction);
        assert_eq!(stub.correction_calls(), 0);
    }

    #[test]
    fn unparseable_correction_falls_back_to_mode() {
        static S: [&str; 6] = ["B", "B", "B", "C", "C", "A"];
        let stub = scripted(&S, "I cannot tell.");
        let set = run_multi_view(&question(), &views(5), &stub, &cfg(ResolutionMode::FullAmcv, 0.6)).unwrap();
        assert!(set.triggered_correction);
        assert_eq!(set.a_final, "B");
        assert!(set.correction.unwrap().fell_back);
    }

    #[test]
    fn correction_transport_failure_falls_back_and_is_flagged() {
        let stub = StubBackend::new("s", |req| match req.view_index {
            Some(v) if v % 2 == 0 => Ok("A".into()),
            Some(_) => Ok("B".into()),
            None => Err(BackendError::Transport { attempts: 3, message: "down".into() }),
        });
        let set = run_multi_view(&question(), &views(5), &stub, &cfg(ResolutionMode::FullAmcv, 0.6)).unwrap();
        let corr = set.correction.clone().unwrap();
        assert!(corr.fell_back);
        assert!(corr.error.unwrap().contains("down"));
        assert_eq!(set.a_final, set.a_mode);
        assert_eq!(set.extra_calls, 1);
    }

    #[test]
    fn failed_view_preserves_partial_answers() {
        let stub = StubBackend::new("s", |req| match req.view_index {
            Some(3) => Err(BackendError::Transport { attempts: 3, message: "timeout".into() }),
            _ => Ok("A".into()),
        });
        let err = run_multi_view(&question(), &views(5), &stub, &cfg(ResolutionMode::FullAmcv, 0.6)).unwrap_err();
        assert_eq!(err.partial.len(), 5);
        assert!(err.partial.iter().all(|a| a.view_index != 3));
        assert!(!err.error.is_fatal());
    }

    #[test]
    fn completion_order_does_not_change_answers() {
        let make = |slow_first: bool| {
            StubBackend::new("s", move |req| {
                let v = req.view_index.unwrap_or(0);
                let delay = if slow_first { 11 - v } else { v };
                std::thread::sleep(Duration::from_millis(delay as u64));
                Ok(if v % 3 == 0 { "A" } else { "C" }.to_string())
            })
        };
        let c = cfg(ResolutionMode::MajorityVote, 0.6);
        let a = run_multi_view(&question(), &views(10), &make(true), &c).unwrap();
        let b = run_multi_view(&question(), &views(10), &make(false), &c).unwrap();
        let strip = |s: &AnswerSet| s.answers.iter().map(|x| (x.view_index, x.canonical.clone())).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!((a.c_q, a.a_final.clone()), (b.c_q, b.a_final.clone()));
    }

    #[test]
    fn fan_out_respects_in_flight_bound() {
        let stub = StubBackend::constant("s", "A").with_delay(Duration::from_millis(5));
        let bounded = Bounded::new(&stub, 2);
        run_multi_view(&question(), &views(10), &bounded, &cfg(ResolutionMode::MajorityVote, 0.6)).unwrap();
        assert!(stub.peak_in_flight() <= 2);
        assert_eq!(stub.calls(), 11);
    }
}
