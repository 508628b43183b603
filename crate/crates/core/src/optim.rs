//! Adam with decoupled weight decay, and the warmup/linear-decay schedule.

/// First/second moment estimates of one scalar parameter.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub m: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
        }
    }

    /// Number of completed `begin_step` calls.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advances the bias-correction counter; call once per optimisation step
    /// before updating any parameter.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies one update to a scalar with gradient `grad` at learning rate `lr`.
    ///
    /// The decay term `lr * weight_decay * p` is applied to the parameter
    /// directly and never enters the moment estimates.
    #[inline]
    pub fn update(&self, lr: f64, param: &mut f64, grad: f64, state: &mut Moments) {
        debug_assert!(self.step > 0, "begin_step not called");
        let t = self.step as i32;
        *param -= lr * self.weight_decay * *param;
        state.m = self.beta1 * state.m + (1.0 - self.beta1) * grad;
        state.v = self.beta2 * state.v + (1.0 - self.beta2) * grad * grad;
        let m_hat = state.m / (1.0 - self.beta1.powi(t));
        let v_hat = state.v / (1.0 - self.beta2.powi(t));
        *param -= lr * m_hat / (v_hat.sqrt() + self.eps);
    }
}

/// Number of warmup steps for a run of `total_steps`.
pub fn warmup_steps(warmup_fraction: f64, total_steps: usize) -> usize {
    ((warmup_fraction * total_steps as f64).floor() as usize).min(total_steps)
}

/// Linear warmup from 0 to `peak` over the warmup steps, then linear decay to
/// 0 at `total_steps`.
pub fn lr_at_step(peak: f64, warmup_fraction: f64, step: usize, total_steps: usize) -> f64 {
    let warmup = warmup_steps(warmup_fraction, total_steps);
    if step < warmup {
        peak * step as f64 / warmup as f64
    } else if total_steps > warmup {
        peak * total_steps.saturating_sub(step) as f64 / (total_steps - warmup) as f64
    } else {
        peak
    }
}
