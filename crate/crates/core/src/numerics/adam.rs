use super::{GradSet, NumericsError, ParamSet, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub epsilon: Real,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.0, beta2: 0.95, epsilon: 5e-8 }
    }
}

/// First/second moment estimates for every tensor of a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = |p: &ParamSet| p.iter().map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { config, first: zeros(params), second: zeros(params), step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Tensor {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor {
        &self.second[i]
    }

    /// One bias-corrected Adam update. A non-finite gradient rejects the
    /// whole step and leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradSet) -> Result<(), NumericsError> {
        if grads.len() != params.len() || grads.len() != self.first.len() {
            return Err(NumericsError::shape(
                "adam_step",
                format!("{} grads, {} params, {} moments", grads.len(), params.len(), self.first.len()),
            ));
        }
        for (id, _, p) in params.iter() {
            if grads.get(id).shape() != p.shape() {
                return Err(NumericsError::shape("adam_step", format!("gradient shape for {}", params.name(id))));
            }
        }
        if !grads.is_finite() {
            return Err(NumericsError::NonFinite("adam_step gradient".into()));
        }
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.get(id).data();
            let m = self.first[i].data_mut();
            for (mv, gv) in m.iter_mut().zip(g) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
            }
            let v = self.second[i].data_mut();
            for (vv, gv) in v.iter_mut().zip(g) {
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            }
            let (m, v) = (self.first[i].data(), self.second[i].data());
            for ((p, mv), vv) in params.get_mut(id).data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mv / bc1;
                let v_hat = vv / bc2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
