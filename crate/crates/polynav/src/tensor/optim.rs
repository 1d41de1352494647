//! Adaptive-moment optimizer with decoupled weight decay.

use thiserror::Error;

use super::param::ParamSet;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter {path} (component {index})")]
    NonFiniteGrad { path: String, index: usize },
    #[error("gradient buffers do not match the parameter manifest")]
    ManifestMismatch,
}

/// AdamW state: first/second moment buffers congruent with the parameter
/// set plus the shared step counter and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    /// Optimizer with the defaults used throughout: lr 2.5e-4, decay 1e-2,
    /// betas (0.9, 0.999), epsilon 1e-8.
    pub fn new(params: &ParamSet) -> Self {
        Self::with_hyper(params, 2.5e-4, 1e-2)
    }

    pub fn with_hyper(params: &ParamSet, learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: params
                .iter()
                .map(|(_, e)| vec![0.0; e.data.len()])
                .collect(),
            second_moment: params
                .iter()
                .map(|(_, e)| vec![0.0; e.data.len()])
                .collect(),
        }
    }

    /// One update over the full parameter set. `grads` holds one buffer per
    /// parameter in manifest order. Decoupled weight decay shrinks the
    /// parameter multiplicatively before the bias-corrected moment update.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) -> Result<(), OptimError> {
        if grads.len() != params.len() {
            return Err(OptimError::ManifestMismatch);
        }
        for (i, (id, _)) in params.iter().enumerate() {
            let entry = params.entry(id);
            if grads[i].len() != entry.data.len() {
                return Err(OptimError::ManifestMismatch);
            }
            if let Some(bad) = grads[i].iter().position(|g| !g.is_finite()) {
                return Err(OptimError::NonFiniteGrad {
                    path: entry.path.clone(),
                    index: bad,
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let theta = &mut params.entry_mut(id).data;
            let g = &grads[i];
            for j in 0..theta.len() {
                theta[j] *= 1.0 - self.learning_rate * self.weight_decay;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                theta[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
