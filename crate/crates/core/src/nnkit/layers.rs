//! Parameterised building blocks recorded onto a [`Tape`].

use rand::Rng;

use crate::error::Result;
use crate::nnkit::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Kaiming-uniform fan-in initialisation: `U(-√(6/fan_in), √(6/fan_in))`.
pub fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), kaiming_uniform(vec![in_dim, out_dim], in_dim, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![out_dim]));
        Self { w, b, in_dim, out_dim }
    }

    pub fn zeros<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(vec![in_dim, out_dim]));
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![out_dim]));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            kaiming_uniform(vec![cout, cin, kernel], cin * kernel, rng),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![cout]));
        Self { w, b, stride, pad }
    }

    /// Stride-1 convolution that preserves length (odd kernel).
    pub fn same<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, cin, cout, kernel, 1, kernel / 2, rng)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        tape.conv1d(x, w, b, self.stride, self.pad)
    }
}

/// Projection of a conditioning embedding to per-channel `(γ, β)`.
/// Zero-initialised, so a fresh projection leaves features unchanged.
#[derive(Debug, Clone, Copy)]
pub struct FilmProj {
    pub proj: Linear,
    pub channels: usize,
}

impl FilmProj {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, emb_dim: usize, channels: usize) -> Self {
        Self {
            proj: Linear::zeros(store, name, emb_dim, 2 * channels),
            channels,
        }
    }
}

/// `h·(1+γ) + β` with `(γ, β)` projected from `embedding: [B, E]`.
pub fn film_modulate<T: Scalar>(tape: &mut Tape<'_, T>, h: Var, embedding: Var, proj: &FilmProj) -> Result<Var> {
    let gb = proj.proj.forward(tape, embedding)?;
    let gamma = tape.narrow(gb, 0, proj.channels)?;
    let beta = tape.narrow(gb, proj.channels, proj.channels)?;
    tape.film(h, gamma, beta)
}

/// Sinusoidal features `[sin(v·ω_k)…, cos(v·ω_k)…]` with
/// `ω_k = 10000^(−k/(dim/2))`, one row per value. `dim` must be even.
pub fn sinusoidal_embedding<T: Scalar>(values: &[T], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut out = Tensor::zeros(vec![values.len(), dim]);
    for (row, &v) in out.data_mut().chunks_mut(dim).zip(values) {
        for k in 0..half {
            let omega = T::lit(10000f64.powf(-(k as f64) / half as f64));
            row[k] = (v * omega).sin();
            row[half + k] = (v * omega).cos();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore<f64>, FilmProj, Tensor<f64>, Tensor<f64>) {
        let mut store = ParamStore::new();
        let proj = FilmProj::new(&mut store, "film", 3, 2);
        let h = Tensor::new(vec![1, 2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.25, -0.75]).unwrap();
        let e = Tensor::new(vec![1, 3], vec![0.3, -0.2, 0.9]).unwrap();
        (store, proj, h, e)
    }

    #[test]
    fn zero_projection_is_identity() {
        let (store, proj, h, e) = setup();
        let mut tape = Tape::new(&store);
        let (hv, ev) = (tape.input(h.clone()), tape.input(e));
        let y = film_modulate(&mut tape, hv, ev, &proj).unwrap();
        assert_eq!(tape.value(y), &h);
    }

    #[test]
    fn unit_gamma_doubles() {
        let (mut store, proj, h, e) = setup();
        // γ = 1 through the bias, β = 0.
        let bias = &mut store.get_mut(proj.proj.b).value;
        bias.data_mut()[..2].copy_from_slice(&[1.0, 1.0]);
        let mut tape = Tape::new(&store);
        let (hv, ev) = (tape.input(h.clone()), tape.input(e));
        let y = film_modulate(&mut tape, hv, ev, &proj).unwrap();
        assert_eq!(tape.value(y), &h.map(|v| 2.0 * v));
    }

    #[test]
    fn hand_computed_modulation() {
        // h: (1,2) features, embedding of width 1.
        let mut store = ParamStore::new();
        let proj = FilmProj::new(&mut store, "film", 1, 2);
        store.get_mut(proj.proj.w).value = Tensor::new(vec![1, 4], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        store.get_mut(proj.proj.b).value = Tensor::new(vec![4], vec![0.1, 0.0, -0.3, 0.2]).unwrap();
        let mut tape = Tape::new(&store);
        let h = tape.input(Tensor::new(vec![1, 2], vec![3.0, -2.0]).unwrap());
        let e = tape.input(Tensor::new(vec![1, 1], vec![0.4]).unwrap());
        let y = film_modulate(&mut tape, h, e, &proj).unwrap();
        // γ = (0.5·0.4+0.1, -1·0.4+0) = (0.3, -0.4); β = (2·0.4-0.3, 0.25·0.4+0.2) = (0.5, 0.3)
        let expect = [3.0 * 1.3 + 0.5, -2.0 * 0.6 + 0.3];
        for (a, b) in tape.value(y).data().iter().zip(expect) {
            let a: f64 = *a;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_mismatch_errors() {
        let (store, proj, h, _) = setup();
        let mut tape = Tape::new(&store);
        let hv = tape.input(h);
        let ev = tape.input(Tensor::zeros(vec![2, 3]));
        assert!(matches!(
            film_modulate(&mut tape, hv, ev, &proj),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn kaiming_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Tensor<f32> = kaiming_uniform(vec![64, 24], 24, &mut rng);
        let bound = (6.0f32 / 24.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }
}
