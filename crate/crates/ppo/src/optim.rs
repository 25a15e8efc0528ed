use jobshop_gnn::{Params, Scalar};

/// Adam with bias correction. Moments are stored at parameter precision and
/// the update itself is computed in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Params<S>,
    pub v: Params<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &Params<S>, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn apply(&mut self, params: &mut Params<S>, grads: &Params<S>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let g = g.as_f64();
            let mn = b1 * m.as_f64() + (1.0 - b1) * g;
            let vn = b2 * v.as_f64() + (1.0 - b2) * g * g;
            *m = S::from_f64(mn);
            *v = S::from_f64(vn);
            let update = lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
            *p = S::from_f64(p.as_f64() - update);
        }
    }
}

/// Scales `grads` so that its norm is at most `max_norm`; returns the norm
/// before scaling.
pub fn clip_grad_norm<S: Scalar>(grads: &mut Params<S>, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(S::from_f64(max_norm / norm));
    }
    norm
}
