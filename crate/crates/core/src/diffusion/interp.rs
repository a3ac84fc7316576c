use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn normalized<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let n = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if n == T::zero() || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

/// Spherical interpolation between the unit-normalised embeddings, re-normalised.
pub fn interpolate_style<T: Scalar>(e1: &[T], e2: &[T], alpha: T) -> Result<Vec<T>> {
    if e1.len() != e2.len() {
        return Err(Error::CountMismatch(e1.len(), e2.len()));
    }
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let (a, b) = (normalized(e1)?, normalized(e2)?);
    let dot = a
        .iter()
        .zip(&b)
        .map(|(&x, &y)| x * y)
        .sum::<T>()
        .max(-T::one())
        .min(T::one());
    let theta = dot.acos();
    let out: Vec<T> = if theta.abs() < T::lit(1e-7) {
        a.iter().zip(&b).map(|(&x, &y)| x + alpha * (y - x)).collect()
    } else {
        let s = theta.sin();
        let wa = ((T::one() - alpha) * theta).sin() / s;
        let wb = (alpha * theta).sin() / s;
        a.iter().zip(&b).map(|(&x, &y)| wa * x + wb * y).collect()
    };
    normalized(&out)
}
