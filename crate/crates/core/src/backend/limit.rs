use std::sync::{Condvar, Mutex};

use super::{Backend, BackendError, ModelRequest, ModelResponse};

/// Caps concurrent `infer` calls on the wrapped backend.
pub struct Bounded<B> {
    inner: B,
    max_in_flight: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl<B> Bounded<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        assert!(max_in_flight >= 1, "max_in_flight must be >= 1");
        Self {
            inner,
            max_in_flight,
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

struct Permit<'a> {
    active: &'a Mutex<usize>,
    freed: &'a Condvar,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.active.lock().unwrap() -= 1;
        self.freed.notify_one();
    }
}

impl<B: Backend> Backend for Bounded<B> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn infer(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        {
            let mut active = self.active.lock().unwrap();
            while *active >= self.max_in_flight {
                active = self.freed.wait(active).unwrap();
            }
            *active += 1;
        }
        let _permit = Permit {
            active: &self.active,
            freed: &self.freed,
        };
        self.inner.infer(req)
    }
}
