//! Adam optimizer with bias correction, plus global gradient-norm clipping.

use super::params::{GradMap, ParamStore};
use super::TensorError;

/// Adam optimizer state: per-parameter first/second moments and the shared
/// step counter.
///
/// Update rule (per element, after `t <- t + 1`):
/// ```text
/// m <- b1*m + (1-b1)*g         m_hat = m / (1 - b1^t)
/// v <- b2*v + (1-b2)*g^2       v_hat = v / (1 - b2^t)
/// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
/// ```
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: GradMap,
    v: GradMap,
}

impl AdamState {
    /// Standard moment coefficients (`b1 = 0.9`, `b2 = 0.999`, `eps = 1e-8`)
    /// with the given learning rate.
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: GradMap::new(),
            v: GradMap::new(),
        }
    }

    /// Test/inspection access to the first moment of a parameter.
    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    /// Test/inspection access to the second moment of a parameter.
    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.v.get(name).map(Vec::as_slice)
    }

    /// Preload moments (used by tests exercising moment decay).
    pub fn set_moments(&mut self, name: &str, m: Vec<f64>, v: Vec<f64>) {
        self.m.insert(name.to_string(), m);
        self.v.insert(name.to_string(), v);
    }

    /// Apply one Adam step to every parameter named in `grads`.
    ///
    /// Parameters not named in `grads` are left untouched (their moments do
    /// not decay either: they simply were not part of this step). A
    /// non-finite gradient entry aborts before modifying anything, reporting
    /// the offending parameter as a training-divergence error.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradMap) -> Result<(), TensorError> {
        for (name, g) in grads {
            if !g.iter().all(|x| x.is_finite()) {
                return Err(TensorError::NonFiniteGradient(name.clone()));
            }
            if !params.contains(name) {
                return Err(TensorError::UnknownParameter(name.clone()));
            }
        }
        self.t += 1;
        let t = self.t;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for (name, g) in grads {
            let theta = params.get_mut(name)?;
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            debug_assert_eq!(theta.len(), g.len(), "gradient length for '{name}'");
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta.data_mut()[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Clip gradients to a maximum global L2 norm, in place. Returns the
/// pre-clip norm. Norm accumulation runs in sorted name order, so the result
/// is deterministic.
pub fn clip_grad_norm(grads: &mut GradMap, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.values() {
        for x in g {
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}
