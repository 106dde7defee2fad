use std::collections::HashMap;

use ndarray::ArrayD;

use super::{Elem, Grads, Visitable};

/// Adam optimizer keyed by parameter name. Moment tensors are created
/// lazily on the first step that produces a gradient for a parameter.
#[derive(Debug, Clone)]
pub struct Adam<F: Elem> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    t: u64,
    m: HashMap<String, ArrayD<F>>,
    v: HashMap<String, ArrayD<F>>,
}

impl<F: Elem> Adam<F> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr: F::from_f(lr),
            beta1: F::from_f(beta1),
            beta2: F::from_f(beta2),
            eps: F::from_f(1e-8),
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update to every parameter that has a gradient.
    pub fn step<N: Visitable<F>>(&mut self, net: &mut N, grads: &Grads<F>) {
        self.t += 1;
        let t = self.t;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let bc1 = F::one() - b1.powi(t as i32);
        let bc2 = F::one() - b2.powi(t as i32);
        let m = &mut self.m;
        let v = &mut self.v;
        net.visit_mut(&mut |name, mut p| {
            let Some(g) = grads.get(name) else { return };
            let m_t = m
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v_t = v
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(&mut *m_t).and(g).for_each(|mv, &gv| {
                *mv = b1 * *mv + (F::one() - b1) * gv;
            });
            ndarray::Zip::from(&mut *v_t).and(g).for_each(|vv, &gv| {
                *vv = b2 * *vv + (F::one() - b2) * gv * gv;
            });
            ndarray::Zip::from(&mut p)
                .and(&*m_t)
                .and(&*v_t)
                .for_each(|pv, &mv, &vv| {
                    let mhat = mv / bc1;
                    let vhat = vv / bc2;
                    *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
                });
        });
    }

    /// State export for checkpointing: `(t, sorted (name, m, v))`.
    pub fn export_state(&self) -> (u64, Vec<(String, ArrayD<F>, ArrayD<F>)>) {
        let mut names: Vec<&String> = self.m.keys().collect();
        names.sort();
        let entries = names
            .into_iter()
            .map(|n| (n.clone(), self.m[n].clone(), self.v[n].clone()))
            .collect();
        (self.t, entries)
    }

    pub fn import_state(&mut self, t: u64, entries: Vec<(String, ArrayD<F>, ArrayD<F>)>) {
        self.t = t;
        self.m.clear();
        self.v.clear();
        for (name, m, v) in entries {
            self.m.insert(name.clone(), m);
            self.v.insert(name, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, IxDyn};

    struct OneParam {
        p: ArrayD<f64>,
    }

    impl Visitable<f64> for OneParam {
        fn visit<'a>(&'a self, f: &mut super::super::ParamVisitor<'a, f64>) {
            f("p", self.p.view());
        }
        fn visit_mut<'a>(&'a mut self, f: &mut super::super::ParamVisitorMut<'a, f64>) {
            f("p", self.p.view_mut());
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With any constant gradient, bias correction makes the first
        // Adam step exactly lr * sign(g).
        let mut net = OneParam {
            p: ArrayD::zeros(IxDyn(&[3])),
        };
        let mut grads = Grads::new();
        grads.add("p", ArrayD::from_elem(IxDyn(&[3]), 0.5));
        let mut opt = Adam::new(0.01, 0.9, 0.999);
        opt.step(&mut net, &grads);
        for &v in net.p.iter() {
            assert!((v - (-0.01)).abs() < 1e-9, "{v}");
        }
    }

    fn _assert_view_types(_: ArrayViewD<f64>, _: ArrayViewMutD<f64>) {}
}
