use super::{ParamId, ParamStore, Real, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers are created lazily, one per
/// parameter, the first time that parameter receives a gradient.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    first: Vec<Option<Vec<T>>>,
    second: Vec<Option<Vec<T>>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, first: Vec::new(), second: Vec::new(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&[T]> {
        self.first.get(id.index()).and_then(|m| m.as_deref())
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&[T]> {
        self.second.get(id.index()).and_then(|m| m.as_deref())
    }

    /// One update. Parameters without a gradient in `grads` are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        for (id, g) in grads {
            if id.index() >= params.len() || params.get(*id).shape() != g.shape() {
                return Err(TensorError::Contract(format!(
                    "adam: gradient {:?} does not match parameter {}",
                    g.shape(),
                    id.index()
                )));
            }
        }
        if self.first.len() < params.len() {
            self.first.resize(params.len(), None);
            self.second.resize(params.len(), None);
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (id, g) in grads {
            let n = g.numel();
            let m = self.first[id.index()].get_or_insert_with(|| vec![T::zero(); n]);
            let v = self.second[id.index()].get_or_insert_with(|| vec![T::zero(); n]);
            if m.len() != n {
                return Err(TensorError::Contract(format!("adam: state for parameter {} has wrong size", id.index())));
            }
            let p = params.get_mut(*id).data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
