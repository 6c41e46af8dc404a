use crate::error::{Error, Result};
use crate::tensor::Element;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

/// One parameter slot handed to [`Adam::step`].
pub struct Slot<'a, T> {
    pub name: &'a str,
    pub value: &'a mut [T],
    pub grad: Option<&'a [T]>,
}

impl<T: Element> Adam<T> {
    /// Zeroed moments for parameters of the given sizes.
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// Applies one update with learning rate `lr`. Nothing is modified
    /// unless every slot has a gradient of the right length.
    pub fn step(&mut self, lr: f64, slots: &mut [Slot<'_, T>]) -> Result<()> {
        if slots.len() != self.m.len() {
            return Err(Error::Shape {
                op: "adam",
                msg: format!("{} slots for {} moment buffers", slots.len(), self.m.len()),
            });
        }
        for (s, m) in slots.iter().zip(&self.m) {
            match s.grad {
                None => return Err(Error::MissingGrad(s.name.to_string())),
                Some(g) if g.len() != m.len() || s.value.len() != m.len() => {
                    return Err(Error::Shape {
                        op: "adam",
                        msg: format!("{}: gradient/parameter length mismatch", s.name),
                    })
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::of_f64(1.0 - self.beta1.powi(t));
        let c2 = T::of_f64(1.0 - self.beta2.powi(t));
        let (b1, b2) = (T::of_f64(self.beta1), T::of_f64(self.beta2));
        // Complements are formed in f64 so they round like the bias corrections.
        let (r1, r2) = (T::of_f64(1.0 - self.beta1), T::of_f64(1.0 - self.beta2));
        let (eps, lr) = (T::of_f64(self.eps), T::of_f64(lr));
        for ((s, m), v) in slots.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = s.grad.expect("checked above");
            for i in 0..g.len() {
                m[i] = b1 * m[i] + r1 * g[i];
                v[i] = b2 * v[i] + r2 * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                s.value[i] = s.value[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `base * decay^epoch`, built by repeated multiplication so that consecutive
/// epochs differ by exactly one multiplication by `decay`.
pub fn lr_at(base: f64, decay: f64, epoch: u64) -> f64 {
    (0..epoch).fold(base, |lr, _| lr * decay)
}

/// Exponential moving average of the trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Ema<T> {
    pub decay: f64,
    pub shadow: Vec<Vec<T>>,
}

impl<T: Element> Ema<T> {
    /// Shadows start as a copy of the parameters.
    pub fn new(decay: f64, params: &[&[T]]) -> Self {
        Ema {
            decay,
            shadow: params.iter().map(|p| p.to_vec()).collect(),
        }
    }

    /// `shadow = decay * shadow + (1 - decay) * param`.
    pub fn update(&mut self, params: &[&[T]]) {
        let d = T::of_f64(self.decay);
        let r = T::of_f64(1.0 - self.decay);
        for (s, p) in self.shadow.iter_mut().zip(params) {
            s.iter_mut().zip(p.iter()).for_each(|(s, &p)| *s = d * *s + r * p);
        }
    }
}
