use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Descending noise-level ladder `σ_max = levels[0] > … > levels[T-1] = σ_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    pub sigma_min: T,
    pub sigma_max: T,
    pub rho: T,
    pub levels: Vec<T>,
}

impl<T: Scalar> NoiseSchedule<T> {
    pub fn steps(&self) -> usize {
        self.levels.len()
    }

    /// Level after step `i`; zero after the last one.
    pub fn next_level(&self, i: usize) -> T {
        self.levels.get(i + 1).copied().unwrap_or_else(T::zero)
    }
}

/// ρ-warped ladder: `σ_i = (σ_max^{1/ρ} + i/(T−1)·(σ_min^{1/ρ} − σ_max^{1/ρ}))^ρ`.
pub fn build_schedule<T: Scalar>(sigma_min: T, sigma_max: T, steps: usize, rho: T) -> Result<NoiseSchedule<T>> {
    if !(sigma_min > T::zero() && sigma_min < sigma_max) || steps == 0 || rho <= T::zero() {
        return Err(Error::InvalidArgument(format!(
            "schedule needs 0 < sigma_min < sigma_max and T >= 1 (got {sigma_min}, {sigma_max}, {steps})"
        )));
    }
    if steps == 1 {
        return Ok(NoiseSchedule {
            sigma_min,
            sigma_max,
            rho,
            levels: vec![sigma_max],
        });
    }
    let inv = T::one() / rho;
    let (hi, lo) = (sigma_max.powf(inv), sigma_min.powf(inv));
    let last = T::from_usize(steps - 1).unwrap();
    let mut levels: Vec<T> = (0..steps)
        .map(|i| (hi + T::from_usize(i).unwrap() / last * (lo - hi)).powf(rho))
        .collect();
    levels[0] = sigma_max;
    levels[steps - 1] = sigma_min;
    Ok(NoiseSchedule {
        sigma_min,
        sigma_max,
        rho,
        levels,
    })
}

/// Defaults used throughout: σ ∈ [0.002, 80], ρ = 7.
pub fn default_schedule<T: Scalar>(steps: usize) -> Result<NoiseSchedule<T>> {
    build_schedule(T::lit(0.002), T::lit(80.0), steps, T::lit(7.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_step_ladder() {
        let s = default_schedule::<f64>(1).unwrap();
        assert_eq!(s.levels, vec![80.0]);
    }

    #[test]
    fn linear_ladder_when_rho_is_one() {
        let s = build_schedule(1.0f64, 10.0, 10, 1.0).unwrap();
        for (i, &l) in s.levels.iter().enumerate() {
            assert!((l - (10.0 - i as f64)).abs() < 1e-12, "{i}: {l}");
        }
    }

    #[test]
    fn invalid_bounds() {
        assert!(build_schedule(0.0f64, 1.0, 5, 7.0).is_err());
        assert!(build_schedule(2.0f64, 1.0, 5, 7.0).is_err());
        assert!(build_schedule(0.1f64, 1.0, 0, 7.0).is_err());
    }

    proptest! {
        #[test]
        fn strictly_decreasing_with_exact_ends(steps in 2usize..200, rho in 1.0f64..10.0) {
            let s = build_schedule(0.002f64, 80.0, steps, rho).unwrap();
            prop_assert_eq!(s.levels[0], 80.0);
            prop_assert_eq!(*s.levels.last().unwrap(), 0.002);
            for w in s.levels.windows(2) {
                prop_assert!(w[0] > w[1]);
            }
        }
    }
}
