//! Adam with bias correction over flat parameter vectors.

/// First/second moment state for one parameter group per entry.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update with the effective learning rate for this step. Warmup or
    /// schedules are the caller's business; `lr` is used as given.
    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>], lr: f64) {
        self.step_slices(params.iter_mut().map(|p| p.as_mut_slice()), grads, lr);
    }

    /// Same update over borrowed slices, for parameter stores that do not
    /// own a `Vec<Vec<f64>>` directly.
    pub fn step_slices<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut [f64]>,
        grads: &[Vec<f64>],
        lr: f64,
    ) {
        assert!(lr > 0.0, "learning rate must be positive, got {lr}");
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut seen = 0;
        for (pi, p) in params.enumerate() {
            let g = &grads[pi];
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            debug_assert_eq!(p.len(), g.len());
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
            seen += 1;
        }
        assert_eq!(seen, self.m.len(), "parameter count changed under the optimizer");
    }
}
