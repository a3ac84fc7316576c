//! AdamW, weight EMA and the warmup/plateau learning-rate schedule.

use crate::error::{Error, Result};
use crate::nnkit::{ParamStore, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct AdamWState<T> {
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(store: &ParamStore<T>, beta1: T, beta2: T, eps: T, weight_decay: T) -> Self {
        let zeros = |s: &ParamStore<T>| {
            s.iter()
                .map(|p| Tensor::zeros(p.value.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        Self {
            step: 0,
            beta1,
            beta2,
            eps,
            weight_decay,
            m: zeros(store),
            v: zeros(store),
        }
    }

    /// β = (0.9, 0.999), ε = 1e-8, weight decay 1e-2.
    pub fn with_defaults(store: &ParamStore<T>) -> Self {
        Self::new(store, T::lit(0.9), T::lit(0.999), T::lit(1e-8), T::lit(1e-2))
    }
}

/// One decoupled-weight-decay Adam update. Gradients are left in place; a
/// non-finite gradient aborts the step before anything is modified.
pub fn adamw_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut AdamWState<T>, lr: T) -> Result<()> {
    if let Some(bad) = store.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFiniteGradient(bad.name.clone()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps, wd) = (state.beta1, state.beta2, state.eps, state.weight_decay);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let decay = T::one() - lr * wd;
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let value = p.value.data_mut();
        for (((w, &g), mi), vi) in value.iter_mut().zip(p.grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *w *= decay;
            *mi = b1 * *mi + (T::one() - b1) * g;
            *vi = b2 * *vi + (T::one() - b2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Shadow copy of the weights: `shadow ← momentum·shadow + (1−momentum)·value`.
#[derive(Debug, Clone)]
pub struct EmaState<T> {
    pub momentum: T,
    shadow: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> EmaState<T> {
    /// Lazily initialised: the first update copies the current values.
    pub fn new(momentum: T) -> Self {
        Self { momentum, shadow: None }
    }

    pub fn from_shadow(momentum: T, shadow: Vec<Tensor<T>>) -> Self {
        Self {
            momentum,
            shadow: Some(shadow),
        }
    }

    pub fn shadow(&self) -> Option<&[Tensor<T>]> {
        self.shadow.as_deref()
    }

    /// A copy of `store` carrying the shadow weights.
    pub fn materialize(&self, store: &ParamStore<T>) -> ParamStore<T> {
        let mut out = store.clone();
        if let Some(s) = &self.shadow {
            out.set_values(s);
        }
        out
    }
}

pub fn ema_update<T: Scalar>(store: &ParamStore<T>, state: &mut EmaState<T>) {
    let m = state.momentum;
    match &mut state.shadow {
        None => state.shadow = Some(store.values()),
        Some(shadow) => {
            for (s, p) in shadow.iter_mut().zip(store.iter()) {
                for (sv, &pv) in s.data_mut().iter_mut().zip(p.value.data()) {
                    *sv = m * *sv + (T::one() - m) * pv;
                }
            }
        }
    }
}

/// Linear warmup followed by reduce-on-plateau, clamped to `[min_lr, base_lr]`.
#[derive(Debug, Clone)]
pub struct LrSchedule<T> {
    pub base_lr: T,
    pub min_lr: T,
    pub warmup_steps: u64,
    pub plateau_patience: u32,
    pub plateau_factor: T,
    best: Option<T>,
    bad_evals: u32,
    reductions: u32,
}

impl<T: Scalar> LrSchedule<T> {
    pub fn new(base_lr: T, min_lr: T, warmup_steps: u64, plateau_patience: u32, plateau_factor: T) -> Self {
        Self {
            base_lr,
            min_lr,
            warmup_steps,
            plateau_patience,
            plateau_factor,
            best: None,
            bad_evals: 0,
            reductions: 0,
        }
    }

    pub fn reductions(&self) -> u32 {
        self.reductions
    }

    /// Learning rate for `step`. `plateau_signal`, when given, counts as one
    /// evaluation of the monitored quantity (lower is better); evaluations
    /// during warmup are ignored.
    pub fn lr(&mut self, step: u64, plateau_signal: Option<T>) -> T {
        let raw = if step < self.warmup_steps {
            self.base_lr * T::from_u64(step + 1).unwrap() / T::from_u64(self.warmup_steps).unwrap()
        } else {
            if let Some(signal) = plateau_signal {
                self.observe(signal);
            }
            self.base_lr * self.plateau_factor.powi(self.reductions as i32)
        };
        raw.max(self.min_lr).min(self.base_lr)
    }

    fn observe(&mut self, signal: T) {
        match self.best {
            Some(b) if signal >= b => {
                self.bad_evals += 1;
                if self.bad_evals >= self.plateau_patience {
                    self.bad_evals = 0;
                    // Stop counting once the floor is reached.
                    if self.base_lr * self.plateau_factor.powi(self.reductions as i32) > self.min_lr {
                        self.reductions += 1;
                    }
                }
            }
            _ => {
                self.best = Some(signal);
                self.bad_evals = 0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::new(vec![1], vec![value]).unwrap());
        s.get_mut(id).grad = Tensor::new(vec![1], vec![grad]).unwrap();
        s
    }

    #[test]
    fn zero_grad_no_decay_keeps_value() {
        let mut s = single(0.7, 0.0);
        let mut st = AdamWState::new(&s, 0.9, 0.999, 1e-8, 0.0);
        adamw_step(&mut s, &mut st, 0.1).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data()[0], 0.7);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_bias_corrected() {
        let mut s = single(0.0, 1.0);
        let mut st = AdamWState::new(&s, 0.9, 0.999, 1e-8, 0.0);
        adamw_step(&mut s, &mut st, 0.1).unwrap();
        // m̂ = v̂ = 1, Δ = −0.1/(1+1e-8)
        let v = s.iter().next().unwrap().value.data()[0];
        assert!((v - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((v + 0.09999999).abs() < 1e-8);
    }

    #[test]
    fn decay_only_step_is_exact() {
        let mut s = single(2.5, 0.0);
        let mut st = AdamWState::new(&s, 0.9, 0.999, 1e-8, 0.01);
        adamw_step(&mut s, &mut st, 0.1).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data()[0], 2.5 * (1.0 - 0.1 * 0.01));
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = single(1.0, f64::NAN);
        let mut st = AdamWState::with_defaults(&s);
        match adamw_step(&mut s, &mut st, 0.1) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "p"),
            other => panic!("{other:?}"),
        }
        assert_eq!(st.step, 0);
        assert_eq!(s.iter().next().unwrap().value.data()[0], 1.0);
    }

    #[test]
    fn ema_examples() {
        let s = single(1.0, 0.0);
        let mut e = EmaState::new(0.0);
        ema_update(&s, &mut e);
        ema_update(&s, &mut e);
        assert_eq!(e.shadow().unwrap()[0].data()[0], 1.0);

        let mut e = EmaState::from_shadow(0.5, vec![Tensor::zeros(vec![1])]);
        ema_update(&s, &mut e);
        ema_update(&s, &mut e);
        assert_eq!(e.shadow().unwrap()[0].data()[0], 0.75);
    }

    #[test]
    fn lr_warmup_base_and_floor() {
        let mut sched = LrSchedule::new(1e-4, 1e-6, 10, 2, 0.5);
        assert!((sched.lr(0, None) - 1e-5f64).abs() < 1e-20);
        assert_eq!(sched.lr(10, Some(1.0)), 1e-4);
        assert_eq!(sched.lr(11, Some(0.5)), 1e-4);
        let mut last = 0.0;
        for step in 12..2000 {
            last = sched.lr(step, Some(1.0));
            assert!((1e-6..=1e-4).contains(&last));
        }
        assert_eq!(last, 1e-6);
    }
}
