//! Random per-layer gradient-check cases shared by the gradient tests and the
//! acceptance suite.

use accomp_core::nnkit::gradcheck::{check_gradients, GradCheckReport};
use accomp_core::nnkit::{ParamId, ParamStore, Tape, Tensor, Var};
use accomp_core::{Result, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LAYERS: &[&str] = &[
    "linear",
    "conv1d",
    "group_norm",
    "silu",
    "tanh",
    "film",
    "add",
    "sub",
    "mul",
    "scale",
    "scale_batch",
    "concat",
    "narrow",
    "upsample",
    "crop",
    "broadcast_rows",
    "transpose",
    "sum",
    "mean",
    "mse",
];

fn rand_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-1.0..1.0)))
}

/// Builds a random instance of `layer` and runs the finite-difference check.
/// All operands are parameters; the loss is `sum(out ⊙ r)` for a fixed random `r`
/// (ops that already produce a scalar are used directly).
pub fn check_layer<T: Scalar>(layer: &str, seed: u64, h: f64, floor: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<T>::new();
    let b = rng.random_range(1..4usize);
    let c = rng.random_range(1..5usize);
    let l = rng.random_range(1..7usize);
    let add = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, shape: Vec<usize>| -> ParamId {
        store.add(name, rand_tensor(rng, shape))
    };
    let (p0, p1, p2): (ParamId, Option<ParamId>, Option<ParamId>);
    let mut extra: Vec<usize> = Vec::new();
    let mut coeffs: Vec<T> = Vec::new();
    match layer {
        "linear" => {
            let (din, dout) = (rng.random_range(1..6), rng.random_range(1..6));
            p0 = add(&mut store, &mut rng, "x", vec![b, din]);
            p1 = Some(add(&mut store, &mut rng, "w", vec![din, dout]));
            p2 = Some(add(&mut store, &mut rng, "b", vec![dout]));
        }
        "conv1d" => {
            let k = rng.random_range(1..5usize);
            let stride = rng.random_range(1..4usize);
            let pad = rng.random_range(0..3usize);
            let len = rng.random_range(k.saturating_sub(2 * pad).max(1)..k + 8);
            let cout = rng.random_range(1..4);
            p0 = add(&mut store, &mut rng, "x", vec![b, c, len]);
            p1 = Some(add(&mut store, &mut rng, "w", vec![cout, c, k]));
            p2 = Some(add(&mut store, &mut rng, "b", vec![cout]));
            extra = vec![stride, pad];
        }
        "group_norm" => {
            let groups = rng.random_range(1..3usize);
            let per = rng.random_range(1..3usize);
            // At least four elements per group; two-element groups are degenerate.
            let len = rng.random_range(4..8);
            p0 = add(&mut store, &mut rng, "x", vec![b, groups * per, len]);
            p1 = None;
            p2 = None;
            extra = vec![groups];
        }
        "film" => {
            p0 = add(&mut store, &mut rng, "h", vec![b, c, l]);
            p1 = Some(add(&mut store, &mut rng, "gamma", vec![b, c]));
            p2 = Some(add(&mut store, &mut rng, "beta", vec![b, c]));
        }
        "add" | "sub" | "mul" | "mse" => {
            p0 = add(&mut store, &mut rng, "a", vec![b, c, l]);
            p1 = Some(add(&mut store, &mut rng, "b", vec![b, c, l]));
            p2 = None;
        }
        "concat" => {
            let c2 = rng.random_range(1..4);
            p0 = add(&mut store, &mut rng, "a", vec![b, c, l]);
            p1 = Some(add(&mut store, &mut rng, "b", vec![b, c2, l]));
            p2 = None;
        }
        "narrow" => {
            let cc = c + 1;
            let start = rng.random_range(0..cc);
            let len = rng.random_range(1..=cc - start);
            p0 = add(&mut store, &mut rng, "x", vec![b, cc, l]);
            p1 = None;
            p2 = None;
            extra = vec![start, len];
        }
        "upsample" => {
            p0 = add(&mut store, &mut rng, "x", vec![b, c, l]);
            p1 = None;
            p2 = None;
            extra = vec![rng.random_range(1..4)];
        }
        "crop" => {
            p0 = add(&mut store, &mut rng, "x", vec![b, c, l]);
            p1 = None;
            p2 = None;
            extra = vec![rng.random_range(0..=l)];
        }
        "broadcast_rows" => {
            p0 = add(&mut store, &mut rng, "p", vec![c]);
            p1 = None;
            p2 = None;
            coeffs = (0..b).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect();
        }
        "scale_batch" | "scale" => {
            p0 = add(&mut store, &mut rng, "x", vec![b, c, l]);
            p1 = None;
            p2 = None;
            coeffs = (0..b).map(|_| T::lit(rng.random_range(-2.0..2.0))).collect();
        }
        "silu" | "tanh" | "transpose" | "sum" | "mean" => {
            p0 = add(&mut store, &mut rng, "x", vec![b, c, l]);
            p1 = None;
            p2 = None;
        }
        other => panic!("unknown layer {other}"),
    }
    let proj_seed = rng.random::<u64>();
    let build = move |tape: &mut Tape<'_, T>| -> Result<Var> {
        let x = tape.param(p0);
        let out = match layer {
            "linear" => {
                let (w, bb) = (tape.param(p1.unwrap()), tape.param(p2.unwrap()));
                tape.linear(x, w, bb)?
            }
            "conv1d" => {
                let (w, bb) = (tape.param(p1.unwrap()), tape.param(p2.unwrap()));
                tape.conv1d(x, w, bb, extra[0], extra[1])?
            }
            "group_norm" => tape.group_norm(x, extra[0])?,
            "silu" => tape.silu(x),
            "tanh" => tape.tanh(x),
            "film" => {
                let (g, bb) = (tape.param(p1.unwrap()), tape.param(p2.unwrap()));
                tape.film(x, g, bb)?
            }
            "add" => {
                let y = tape.param(p1.unwrap());
                tape.add(x, y)?
            }
            "sub" => {
                let y = tape.param(p1.unwrap());
                tape.sub(x, y)?
            }
            "mul" => {
                let y = tape.param(p1.unwrap());
                tape.mul(x, y)?
            }
            "mse" => {
                let y = tape.param(p1.unwrap());
                return tape.mse(x, y);
            }
            "scale" => tape.scale(x, coeffs[0]),
            "scale_batch" => tape.scale_batch(x, coeffs.clone())?,
            "concat" => {
                let y = tape.param(p1.unwrap());
                tape.concat(&[x, y])?
            }
            "narrow" => tape.narrow(x, extra[0], extra[1])?,
            "upsample" => tape.upsample(x, extra[0])?,
            "crop" => tape.crop(x, extra[0])?,
            "broadcast_rows" => tape.broadcast_rows(x, coeffs.clone())?,
            "transpose" => tape.transpose(x)?,
            "sum" => return Ok(tape.sum(x)),
            "mean" => return Ok(tape.mean(x)),
            _ => unreachable!(),
        };
        let shape = tape.value(out).shape().to_vec();
        let mut prng = ChaCha8Rng::seed_from_u64(proj_seed);
        let r = tape.input(rand_tensor(&mut prng, shape));
        let prod = tape.mul(out, r)?;
        Ok(tape.sum(prod))
    };
    check_gradients(&mut store, h, floor, build)
}
