//! Central finite-difference checks of the reverse sweep.
//!
//! The numeric side only ever evaluates forward passes, so it is
//! independent of every backward rule it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::QualityModel;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

use super::autodiff::{Graph, NodeId};
use super::fit::sample_backward;
use super::TrainError;

pub const DEFAULT_STEP: f64 = 1e-3;
/// Step for whole-model checks. Models contain thousands of ReLU and
/// max-pool units, so larger steps routinely cross a kink.
pub const MODEL_STEP: f64 = 1e-5;
/// Denominator floor so that exactly-zero gradients compare absolutely.
const REL_FLOOR: f64 = 1e-8;
/// Whole-model floor per unit of loss. Some gradients are exactly zero
/// (key biases under softmax), and with a small step their numeric
/// estimate is pure cancellation noise of order `eps·loss/step`.
const MODEL_FLOOR_PER_LOSS: f64 = 1e-6;
const KINK_RETRIES: usize = 8;
const KINK_AGREEMENT: f64 = 3e-4;
/// Relative rounding noise of one model loss evaluation.
const LOSS_ROUNDOFF: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, REL_FLOOR)
}

fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect(),
    )
}

/// Values bounded away from zero (for ReLU kinks).
fn off_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let m = rng.gen_range(0.05..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
}

/// Distinct values at least 0.01 apart (for max-pool ties).
fn distinct(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    use rand::seq::SliceRandom;
    let mut v: Vec<f64> = (0..rows * cols).map(|i| i as f64 * 0.01 - 0.3).collect();
    v.shuffle(rng);
    Tensor::from_vec(rows, cols, v)
}

/// Check every coordinate of every input of a small graph against central
/// differences of `sum(weights ⊙ output)`.
pub fn check_graph<F>(name: &str, inputs: Vec<Tensor>, seed: u64, step: f64, build: F) -> GradCheck
where
    F: Fn(&mut Graph, &ParamStore, &[ParamId]) -> NodeId,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("in{i}"), t))
        .collect();
    let mut g = Graph::new();
    let out = build(&mut g, &store, &ids);
    let shape = g.value(out).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let weights = random_tensor(&mut rng, shape.0, shape.1, -1.0, 1.0);
    let grads = g.backward(&[(out, weights.clone())], &store);
    let objective = |s: &ParamStore| {
        let mut g = Graph::new();
        let o = build(&mut g, s, &ids);
        g.value(o)
            .data
            .iter()
            .zip(&weights.data)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for &id in &ids {
        for c in 0..store.get(id).len() {
            let numeric = central_difference(&mut store, id, c, step, &objective);
            max_rel = max_rel.max(relative_error(grads.get(id).data[c], numeric));
            checked += 1;
        }
    }
    GradCheck {
        name: name.to_string(),
        max_rel_error: max_rel,
        checked,
    }
}

fn central_difference(
    store: &mut ParamStore,
    id: ParamId,
    coord: usize,
    step: f64,
    f: &impl Fn(&ParamStore) -> f64,
) -> f64 {
    let orig = store.get(id).data[coord];
    store.get_mut(id).data[coord] = orig + step;
    let up = f(store);
    store.get_mut(id).data[coord] = orig - step;
    let down = f(store);
    store.get_mut(id).data[coord] = orig;
    (up - down) / (2.0 * step)
}

/// Gradient checks for each differentiable primitive on random small tensors.
pub fn check_primitives(seed: u64, step: f64) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |rows, cols| random_tensor(&mut rng, rows, cols, -1.0, 1.0);
    let lin = vec![r(4, 5), r(5, 3), r(1, 3)];
    let softmax = vec![r(3, 6)];
    let ln = vec![r(4, 6), r(1, 6), r(1, 6)];
    let gelu = vec![random_tensor(
        &mut ChaCha8Rng::seed_from_u64(seed + 1),
        3,
        5,
        -3.0,
        3.0,
    )];
    let attn = vec![r(5, 8), r(5, 8), r(5, 8)];
    let conv = vec![r(2, 5 * 6), r(3, 2 * 9), r(3, 1)];
    let misc = vec![r(2, 4), r(3, 4)];
    let relu = vec![off_zero(&mut ChaCha8Rng::seed_from_u64(seed + 2), 3, 7)];
    let pool = vec![distinct(&mut ChaCha8Rng::seed_from_u64(seed + 3), 2, 4 * 6)];
    let tmean = vec![r(3, 2 * 5)];

    vec![
        check_graph("linear", lin, seed, step, |g, s, ids| {
            let (x, w, b) = (g.param(s, ids[0]), g.param(s, ids[1]), g.param(s, ids[2]));
            g.linear(x, w, b)
        }),
        check_graph("softmax", softmax, seed, step, |g, s, ids| {
            let x = g.param(s, ids[0]);
            g.softmax(x)
        }),
        check_graph("layer_norm", ln, seed, step, |g, s, ids| {
            let (x, gm, bt) = (g.param(s, ids[0]), g.param(s, ids[1]), g.param(s, ids[2]));
            g.layer_norm(x, gm, bt, 1e-5)
        }),
        check_graph("gelu", gelu, seed, step, |g, s, ids| {
            let x = g.param(s, ids[0]);
            g.gelu(x)
        }),
        check_graph("attention", attn, seed, step, |g, s, ids| {
            let (q, k, v) = (g.param(s, ids[0]), g.param(s, ids[1]), g.param(s, ids[2]));
            g.attention(q, k, v, 2, vec![true, true, false, true, false])
        }),
        check_graph("conv2d", conv, seed, step, |g, s, ids| {
            let (x, w, b) = (g.param(s, ids[0]), g.param(s, ids[1]), g.param(s, ids[2]));
            g.conv2d(x, w, b, 5, 6, 3)
        }),
        check_graph("relu", relu, seed, step, |g, s, ids| {
            let x = g.param(s, ids[0]);
            g.relu(x)
        }),
        check_graph("max_pool", pool, seed, step, |g, s, ids| {
            let x = g.param(s, ids[0]);
            g.max_pool(x, 4, 6, 2, 2).0
        }),
        check_graph("time_mean", tmean, seed, step, |g, s, ids| {
            let x = g.param(s, ids[0]);
            g.time_mean(x, 2, 5)
        }),
        check_graph("rows_and_scale", misc, seed, step, |g, s, ids| {
            let (a, b) = (g.param(s, ids[0]), g.param(s, ids[1]));
            let c = g.concat_rows(a, b);
            let gathered = g.gather_rows(c, vec![4, 0, 0, 2]);
            let sel = g.select_row(c, 3);
            let sum = g.sum(sel);
            let scaled = g.scale(gathered, -1.5);
            let added = g.add(scaled, gathered);
            let total = g.sum(added);
            g.add(total, sum)
        }),
    ]
}

/// Add a seeded offset in ±`scale` to every bias tensor. Freshly initialized
/// biases are exactly zero, so a unit whose receptive field is all ReLU
/// zeros sits exactly on a kink; offsetting moves the probe point off it.
pub fn offset_biases(params: &mut ParamStore, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in params.iter_mut() {
        if p.name.ends_with("bias") || p.name.ends_with("beta") {
            for v in &mut p.value.data {
                *v += rng.gen_range(-scale..scale);
            }
        }
    }
}

/// Check a full model on `loss = Σ_k (out_k − target_k)²`. At most
/// `coords_per_param` randomly chosen coordinates of each parameter are
/// probed; one [`GradCheck`] is returned per parameter tensor.
pub fn check_model<M: QualityModel + Clone>(
    model: &M,
    input: &M::Input,
    targets: [f64; 5],
    coords_per_param: usize,
    step: f64,
    seed: u64,
) -> Result<Vec<GradCheck>, TrainError> {
    let (grads, _) = sample_backward(model, input, |raw| {
        std::array::from_fn(|k| Some(2.0 * (raw[k] - targets[k])))
    })?;
    let loss = |m: &M| -> Result<f64, TrainError> {
        let raw = m.raw_outputs(input)?;
        Ok(raw
            .iter()
            .zip(&targets)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    };
    let base = loss(model)?;
    let floor = MODEL_FLOOR_PER_LOSS * base.abs().max(1.0);
    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for pi in 0..model.params().len() {
        let id = ParamId(pi);
        let n = model.params().get(id).len();
        let coords: Vec<usize> = if n <= coords_per_param {
            (0..n).collect()
        } else {
            (0..coords_per_param).map(|_| rng.gen_range(0..n)).collect()
        };
        let mut max_rel: f64 = 0.0;
        for &c in &coords {
            let mut diff = |h: f64| -> Result<(f64, f64), TrainError> {
                let orig = probe.params().get(id).data[c];
                probe.params_mut().get_mut(id).data[c] = orig + h;
                let up = loss(&probe)?;
                probe.params_mut().get_mut(id).data[c] = orig - h;
                let down = loss(&probe)?;
                probe.params_mut().get_mut(id).data[c] = orig;
                Ok(((up - down) / (2.0 * h), ((up - base) - (base - down)) / h))
            };
            // Forward and backward slopes differ by O(h) on smooth stretches
            // but by the slope jump when a kink lies within h. Shrink h until
            // the gap is negligible, or until it scales down with h like
            // curvature while the central estimate stays put.
            let mut h = step;
            let mut numeric = 0.0;
            let mut prev: Option<(f64, f64)> = None;
            for _ in 0..=KINK_RETRIES {
                let (central, gap) = diff(h)?;
                let tol =
                    KINK_AGREEMENT * central.abs().max(floor) + LOSS_ROUNDOFF * base.abs() / h;
                let settled =
                    prev.is_some_and(|(c, g)| gap.abs() <= g / 3.0 && (central - c).abs() <= tol);
                numeric = central;
                if gap.abs() <= tol || settled {
                    break;
                }
                prev = Some((central, gap.abs()));
                h /= 4.0;
            }
            max_rel = max_rel.max(relative_error_floored(
                grads.get(id).data[c],
                numeric,
                floor,
            ));
        }
        out.push(GradCheck {
            name: model.params().name(id).to_string(),
            max_rel_error: max_rel,
            checked: coords.len(),
        });
    }
    Ok(out)
}
