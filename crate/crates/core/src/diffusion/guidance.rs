//! Two-source classifier-free guidance.

use crate::error::Result;
use crate::nnkit::Tensor;
use crate::scalar::Scalar;

/// Anything that maps a noisy latent batch to a denoised estimate.
///
/// `x` and `context` are `[batch, frames, channels]`, `style` is
/// `[batch, dim]`; `None` selects the model's null token for that source.
pub trait Denoiser<T: Scalar>: Sync {
    fn channels(&self) -> usize;

    fn denoise(
        &self,
        x: &Tensor<T>,
        sigma: T,
        context: Option<&Tensor<T>>,
        style: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>>;
}

impl<T: Scalar, D: Denoiser<T> + ?Sized> Denoiser<T> for &D {
    fn channels(&self) -> usize {
        (**self).channels()
    }

    fn denoise(
        &self,
        x: &Tensor<T>,
        sigma: T,
        context: Option<&Tensor<T>>,
        style: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        (**self).denoise(x, sigma, context, style)
    }
}

/// Conditioning for a batch: optional context latents `[B, F, C]`, optional
/// style embeddings `[B, D]`, and one guidance strength per source.
#[derive(Debug, Clone)]
pub struct ConditioningBundle<T> {
    pub context: Option<Tensor<T>>,
    pub style: Option<Tensor<T>>,
    pub cfg_context: T,
    pub cfg_style: T,
}

impl<T: Scalar> ConditioningBundle<T> {
    pub fn unconditional() -> Self {
        Self {
            context: None,
            style: None,
            cfg_context: T::one(),
            cfg_style: T::one(),
        }
    }

    pub fn new(context: Option<Tensor<T>>, style: Option<Tensor<T>>, cfg_context: T, cfg_style: T) -> Self {
        Self {
            context,
            style,
            cfg_context,
            cfg_style,
        }
    }

    /// Items `[start, start+len)` of the batch.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let cut = |t: &Tensor<T>| {
            let rows: Vec<Tensor<T>> = t.unstack()[start..start + len].to_vec();
            Tensor::stack(&rows).expect("non-empty slice")
        };
        Self {
            context: self.context.as_ref().map(cut),
            style: self.style.as_ref().map(cut),
            cfg_context: self.cfg_context,
            cfg_style: self.cfg_style,
        }
    }
}

/// `f∅ + cfg_ctx·(f_ctx − f∅) + cfg_style·(f_full − f_ctx)`.
///
/// An absent source drops its term. When every present strength is 1 the
/// fully conditional evaluation is returned as is; when every present
/// strength is 0 the unconditional one is.
pub fn guided_denoise<T: Scalar, D: Denoiser<T> + ?Sized>(
    x: &Tensor<T>,
    sigma: T,
    cond: &ConditioningBundle<T>,
    model: &D,
) -> Result<Tensor<T>> {
    let ctx = cond.context.as_ref();
    let sty = cond.style.as_ref();
    let (one, zero) = (T::one(), T::zero());
    let strengths: Vec<T> = [ctx.map(|_| cond.cfg_context), sty.map(|_| cond.cfg_style)]
        .into_iter()
        .flatten()
        .collect();
    if strengths.iter().all(|&s| s == one) {
        return model.denoise(x, sigma, ctx, sty);
    }
    if strengths.iter().all(|&s| s == zero) {
        return model.denoise(x, sigma, None, None);
    }
    let f_null = model.denoise(x, sigma, None, None)?;
    let mut out = f_null.clone();
    // Running "previous" term of the telescoping sum.
    let mut prev = f_null;
    if let Some(c) = ctx {
        let f_ctx = model.denoise(x, sigma, Some(c), None)?;
        combine(&mut out, &f_ctx, &prev, cond.cfg_context)?;
        prev = f_ctx;
    }
    if let Some(s) = sty {
        let f_full = model.denoise(x, sigma, ctx, Some(s))?;
        combine(&mut out, &f_full, &prev, cond.cfg_style)?;
    }
    Ok(out)
}

fn combine<T: Scalar>(out: &mut Tensor<T>, cond: &Tensor<T>, prev: &Tensor<T>, w: T) -> Result<()> {
    let delta = cond.zip_map(prev, |a, b| w * (a - b))?;
    out.add_assign(&delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Returns a constant per conditioning pattern.
    struct Stub;

    impl Denoiser<f64> for Stub {
        fn channels(&self) -> usize {
            1
        }

        fn denoise(
            &self,
            x: &Tensor<f64>,
            _: f64,
            c: Option<&Tensor<f64>>,
            s: Option<&Tensor<f64>>,
        ) -> Result<Tensor<f64>> {
            let v = match (c.is_some(), s.is_some()) {
                (false, false) => 0.0,
                (true, false) => 1.0,
                (true, true) => 3.0,
                (false, true) => 2.0,
            };
            Ok(Tensor::full(x.shape().to_vec(), v))
        }
    }

    fn bundle(cc: f64, cs: f64, ctx: bool, sty: bool) -> ConditioningBundle<f64> {
        ConditioningBundle::new(
            ctx.then(|| Tensor::zeros(vec![1, 1, 1])),
            sty.then(|| Tensor::zeros(vec![1, 1])),
            cc,
            cs,
        )
    }

    #[test]
    fn hand_arithmetic_extrapolation() {
        let x = Tensor::zeros(vec![1, 1, 1]);
        let out = guided_denoise(&x, 1.0, &bundle(1.25, 1.25, true, true), &Stub).unwrap();
        assert!((out.item() - 3.75).abs() < 1e-12);
    }

    #[test]
    fn identity_strengths() {
        let x = Tensor::zeros(vec![1, 1, 1]);
        assert_eq!(
            guided_denoise(&x, 1.0, &bundle(1.0, 1.0, true, true), &Stub)
                .unwrap()
                .item(),
            3.0
        );
        assert_eq!(
            guided_denoise(&x, 1.0, &bundle(0.0, 0.0, true, true), &Stub)
                .unwrap()
                .item(),
            0.0
        );
    }

    #[test]
    fn absent_sources_collapse_terms() {
        let x = Tensor::zeros(vec![1, 1, 1]);
        // style only: f∅ + 2·(f_style − f∅)
        assert_eq!(
            guided_denoise(&x, 1.0, &bundle(5.0, 2.0, false, true), &Stub)
                .unwrap()
                .item(),
            4.0
        );
        // context only: f∅ + 2·(f_ctx − f∅)
        assert_eq!(
            guided_denoise(&x, 1.0, &bundle(2.0, 7.0, true, false), &Stub)
                .unwrap()
                .item(),
            2.0
        );
        assert_eq!(
            guided_denoise(&x, 1.0, &bundle(3.0, 3.0, false, false), &Stub)
                .unwrap()
                .item(),
            0.0
        );
    }
}
