use crate::store::ParamStore;
use ndarray::ArrayD;

/// Adam with bias correction. State is kept per parameter entry; the learning
/// rate can be rescheduled between steps.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999)
    }

    pub fn with_betas(params: &ParamStore, lr: f64, beta1: f64, beta2: f64) -> Self {
        let m = (0..params.len()).map(|i| ArrayD::zeros(params.value(i).raw_dim())).collect();
        let v = (0..params.len()).map(|i| ArrayD::zeros(params.value(i).raw_dim())).collect();
        Adam { lr, beta1, beta2, eps: 1e-8, t: 0, m, v }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// One update. `grads[i]` of None leaves parameter i untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<ArrayD<f64>>]) {
        assert_eq!(grads.len(), params.len(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let Some(g) = &grads[i] else { continue };
            assert_eq!(
                g.shape(),
                params.value(i).shape(),
                "gradient shape mismatch for {}",
                params.name(i)
            );
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let p = params.value_mut(i);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            });
        }
    }
}
