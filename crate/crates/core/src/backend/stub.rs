use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::{Backend, BackendError, ModelRequest, ModelResponse};

type AnswerFn = dyn Fn(&ModelRequest) -> Result<String, BackendError> + Send + Sync;

/// Instrumented test double: scripted answers plus call and concurrency counters.
pub struct StubBackend {
    name: String,
    answer: Box<AnswerFn>,
    delay: Duration,
    calls: AtomicUsize,
    corrections: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    per_question: Mutex<HashMap<String, usize>>,
}

impl StubBackend {
    pub fn new(
        name: impl Into<String>,
        answer: impl Fn(&ModelRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            answer: Box::new(answer),
            delay: Duration::ZERO,
            calls: AtomicUsize::new(0),
            corrections: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            per_question: Mutex::new(HashMap::new()),
        }
    }

    /// Same text for every input.
    pub fn constant(name: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(name, move |_| Ok(text.clone()))
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn correction_calls(&self) -> usize {
        self.corrections.load(Ordering::SeqCst)
    }

    pub fn calls_for(&self, question_id: &str) -> usize {
        self.per_question.lock().unwrap().get(question_id).copied().unwrap_or(0)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Backend for StubBackend {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn infer(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        if req.view_index.is_none() {
            self.corrections.fetch_add(1, Ordering::SeqCst);
        }
        *self.per_question.lock().unwrap().entry(req.question_id.clone()).or_default() += 1;
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let result = (self.answer)(req);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result.map(ModelResponse::local)
    }
}
