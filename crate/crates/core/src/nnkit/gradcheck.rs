//! Central finite-difference gradient verification.

use crate::error::Result;
use crate::nnkit::{ParamId, ParamStore, Tape, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Worst `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compares analytic parameter gradients of `build` (which records a scalar
/// loss) against central differences with step `h`.
pub fn check_gradients<T, F>(store: &mut ParamStore<T>, h: f64, floor: f64, build: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<'_, T>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |s: &ParamStore<T>| -> Result<f64> {
        let mut tape = Tape::new(s);
        let loss = build(&mut tape)?;
        Ok(tape.value(loss).item().as_f64())
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for id in ids {
        let n = store.value(id).len();
        for j in 0..n {
            let orig = store.value(id).data()[j];
            store.get_mut(id).value.data_mut()[j] = T::lit(orig.as_f64() + h);
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[j] = T::lit(orig.as_f64() - h);
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).map(|g| g.data()[j].as_f64()).unwrap_or(0.0);
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: worst,
        checked,
    })
}
