//! Finite-difference gradient cases shared by the gradient tests and the
//! acceptance run: every differentiable op and every loss.

use pointsentinel_core::autodiff::check::{check_gradients, GradCheck};
use pointsentinel_core::autodiff::{Graph, Tensor};
use pointsentinel_core::losses::{balanced_bce_loss, mse_point_loss, spatial_softmax, spatial_softmax_nll};
use pointsentinel_core::nn::{encode_target, TargetGrid};
use pointsentinel_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-3;
pub const INSTANCES: usize = 20;

pub struct GradCase {
    pub name: &'static str,
    pub check: fn(&mut ChaCha8Rng) -> GradCheck,
}

fn values(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values at least `margin` away from every kink in `kinks`.
fn away(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, kinks: &[f64], margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > margin) {
                break v;
            }
        })
        .collect()
}

/// Random-weighted sum, so every output element contributes a distinct gradient.
fn wsum(g: &mut Graph<f64>, y: Tensor, weights: &[f64]) -> Result<Tensor> {
    let shape = g.shape(y).to_vec();
    let w = g.input(&shape, weights.to_vec())?;
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn shape_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn unary(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    x: Vec<f64>,
    op: fn(&mut Graph<f64>, Tensor) -> Result<Tensor>,
) -> GradCheck {
    let w = values(rng, shape_len(shape), -1.0, 1.0);
    check_gradients(&[(shape.to_vec(), x)], H, |g, t| {
        let y = op(g, t[0])?;
        let n = g.value(y).len();
        wsum(g, y, &w[..n])
    })
    .unwrap()
}

fn binary(
    rng: &mut ChaCha8Rng,
    a: (Vec<usize>, Vec<f64>),
    b: (Vec<usize>, Vec<f64>),
    op: fn(&mut Graph<f64>, Tensor, Tensor) -> Result<Tensor>,
) -> GradCheck {
    let n = shape_len(&a.0).max(shape_len(&b.0));
    let w = values(rng, n, -1.0, 1.0);
    check_gradients(&[a, b], H, |g, t| {
        let y = op(g, t[0], t[1])?;
        wsum(g, y, &w)
    })
    .unwrap()
}

fn dims(rng: &mut ChaCha8Rng) -> Vec<usize> {
    vec![rng.random_range(1..4), rng.random_range(1..5)]
}

fn case_add(rng: &mut ChaCha8Rng) -> GradCheck {
    let s = dims(rng);
    let n = shape_len(&s);
    let (a, b) = (values(rng, n, -2.0, 2.0), values(rng, n, -2.0, 2.0));
    binary(rng, (s.clone(), a), (s, b), |g, a, b| g.add(a, b))
}

fn case_sub_broadcast(rng: &mut ChaCha8Rng) -> GradCheck {
    let s = dims(rng);
    let n = shape_len(&s);
    let (a, b) = (values(rng, n, -2.0, 2.0), values(rng, 1, -2.0, 2.0));
    binary(rng, (s, a), (vec![1], b), |g, a, b| g.sub(a, b))
}

fn case_mul(rng: &mut ChaCha8Rng) -> GradCheck {
    let s = dims(rng);
    let n = shape_len(&s);
    let (a, b) = (values(rng, n, -2.0, 2.0), values(rng, n, -2.0, 2.0));
    binary(rng, (s.clone(), a), (s, b), |g, a, b| g.mul(a, b))
}

fn case_div(rng: &mut ChaCha8Rng) -> GradCheck {
    let s = dims(rng);
    let n = shape_len(&s);
    let a = values(rng, n, -2.0, 2.0);
    let b = away(rng, n, -2.0, 2.0, &[0.0], 0.5);
    binary(rng, (s.clone(), a), (s, b), |g, a, b| g.div(a, b))
}

fn case_scale_shift(rng: &mut ChaCha8Rng) -> GradCheck {
    let s = dims(rng);
    let x = values(rng, shape_len(&s), -2.0, 2.0);
    unary(rng, &s, x, |g, t| {
        let y = g.scale(t, -1.7);
        Ok(g.shift(y, 0.3))
    })
}

fn case_matmul(rng: &mut ChaCha8Rng) -> GradCheck {
    let (m, k, n) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..4));
    let a = values(rng, m * k, -1.0, 1.0);
    let b = values(rng, k * n, -1.0, 1.0);
    let w = values(rng, m * n, -1.0, 1.0);
    check_gradients(&[(vec![m, k], a), (vec![k, n], b)], H, |g, t| {
        let y = g.matmul(t[0], t[1])?;
        wsum(g, y, &w)
    })
    .unwrap()
}

fn case_conv2d(rng: &mut ChaCha8Rng) -> GradCheck {
    let cin = rng.random_range(1..3);
    let cout = rng.random_range(1..3);
    let k = rng.random_range(1..4);
    let stride = rng.random_range(1..3);
    let pad = rng.random_range(0..2);
    let ho = rng.random_range(1..4);
    let pad = if (ho - 1) * stride + k > 2 * pad { pad } else { 0 };
    // input size for which the kernel tiles exactly `ho` positions
    let h = (ho - 1) * stride + k - 2 * pad;
    let w_in = h;
    let x = values(rng, cin * h * w_in, -1.0, 1.0);
    let kern = values(rng, cout * cin * k * k, -1.0, 1.0);
    let bias = values(rng, cout, -0.5, 0.5);
    let w = values(rng, cout * ho * ho, -1.0, 1.0);
    check_gradients(
        &[(vec![cin, h, w_in], x), (vec![cout, cin, k, k], kern), (vec![cout], bias)],
        H,
        |g, t| {
            let y = g.conv2d(t[0], t[1], Some(t[2]), stride, pad)?;
            wsum(g, y, &w)
        },
    )
    .unwrap()
}

fn case_relu(rng: &mut ChaCha8Rng) -> GradCheck {
    let s = dims(rng);
    let x = away(rng, shape_len(&s), -2.0, 2.0, &[0.0], 0.05);
    unary(rng, &s, x, |g, t| Ok(g.relu(t)))
}

fn case_sigmoid(rng: &mut ChaCha8Rng) -> GradCheck {
    let s = dims(rng);
    let x = values(rng, shape_len(&s), -6.0, 6.0);
    unary(rng, &s, x, |g, t| Ok(g.sigmoid(t)))
}

fn case_exp(rng: &mut ChaCha8Rng) -> GradCheck {
    let s = dims(rng);
    let x = values(rng, shape_len(&s), -3.0, 3.0);
    unary(rng, &s, x, |g, t| Ok(g.exp(t)))
}

fn case_log(rng: &mut ChaCha8Rng) -> GradCheck {
    let s = dims(rng);
    let x = values(rng, shape_len(&s), 0.1, 5.0);
    unary(rng, &s, x, |g, t| g.log(t))
}

fn case_clamp(rng: &mut ChaCha8Rng) -> GradCheck {
    let s = dims(rng);
    let x = away(rng, shape_len(&s), -2.0, 2.0, &[-0.5, 0.8], 0.05);
    unary(rng, &s, x, |g, t| Ok(g.clamp(t, -0.5, 0.8)))
}

fn case_sum_mean(rng: &mut ChaCha8Rng) -> GradCheck {
    let s = dims(rng);
    let x = values(rng, shape_len(&s), -2.0, 2.0);
    check_gradients(&[(s, x)], H, |g, t| {
        let sq = g.mul(t[0], t[0])?;
        let a = g.sum(sq);
        let b = g.mean(t[0]);
        let b = g.scale(b, 3.0);
        g.add(a, b)
    })
    .unwrap()
}

fn case_max_reduce(rng: &mut ChaCha8Rng) -> GradCheck {
    let s = vec![rng.random_range(1..4), rng.random_range(2..5), rng.random_range(1..3)];
    let axis = rng.random_range(0..3);
    // distinct values spaced well beyond the step, in random order
    let n = shape_len(&s);
    let mut x: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
    for i in (1..n).rev() {
        x.swap(i, rng.random_range(0..=i));
    }
    let w = values(rng, n, -1.0, 1.0);
    check_gradients(&[(s, x)], H, move |g, t| {
        let y = g.max_reduce(t[0], axis)?;
        let n = g.value(y).len();
        wsum(g, y, &w[..n])
    })
    .unwrap()
}

fn case_reshape(rng: &mut ChaCha8Rng) -> GradCheck {
    let x = values(rng, 6, -2.0, 2.0);
    let w = values(rng, 9, -1.0, 1.0);
    check_gradients(&[(vec![2, 3], x)], H, move |g, t| {
        let y = g.reshape(t[0], &[3, 2])?;
        let z = g.matmul(y, t[0])?;
        let z = g.reshape(z, &[9])?;
        wsum(g, z, &w)
    })
    .unwrap()
}

fn case_avgpool(rng: &mut ChaCha8Rng) -> GradCheck {
    let (kh, kw) = (rng.random_range(1..3), rng.random_range(1..4));
    let s = vec![rng.random_range(1..3), kh * rng.random_range(1..3), kw * rng.random_range(1..3)];
    let x = values(rng, shape_len(&s), -2.0, 2.0);
    let w = values(rng, shape_len(&s), -1.0, 1.0);
    check_gradients(&[(s, x)], H, move |g, t| {
        let y = g.avgpool2d(t[0], kh, kw)?;
        let n = g.value(y).len();
        wsum(g, y, &w[..n])
    })
    .unwrap()
}

fn case_spatial_softmax(rng: &mut ChaCha8Rng) -> GradCheck {
    let s = vec![rng.random_range(1..5), rng.random_range(2..5)];
    let x = values(rng, shape_len(&s), -4.0, 4.0);
    unary(rng, &s, x, |g, t| spatial_softmax(g, t))
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> TargetGrid {
    let p = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
    encode_target(p, (h, w), 1).unwrap()
}

fn case_softmax_nll(rng: &mut ChaCha8Rng) -> GradCheck {
    let (h, w) = (rng.random_range(1..5), rng.random_range(2..5));
    let grid = random_grid(rng, h, w);
    let x = values(rng, h * w, -5.0, 5.0);
    check_gradients(&[(vec![h, w], x)], H, move |g, t| {
        Ok(spatial_softmax_nll(g, t[0], &grid)?.scalar)
    })
    .unwrap()
}

fn case_balanced_bce(rng: &mut ChaCha8Rng) -> GradCheck {
    let (h, w) = (rng.random_range(1..5), rng.random_range(2..5));
    let grid = random_grid(rng, h, w);
    let x = values(rng, h * w, -4.0, 4.0);
    // through the sigmoid, as the pixel-wise head uses it
    check_gradients(&[(vec![h, w], x)], H, move |g, t| {
        let p = g.sigmoid(t[0]);
        Ok(balanced_bce_loss(g, p, &grid)?.scalar)
    })
    .unwrap()
}

fn case_balanced_bce_probs(rng: &mut ChaCha8Rng) -> GradCheck {
    let (h, w) = (rng.random_range(1..5), rng.random_range(2..5));
    let grid = random_grid(rng, h, w);
    let p = values(rng, h * w, 0.05, 0.95);
    check_gradients(&[(vec![h, w], p)], H, move |g, t| {
        Ok(balanced_bce_loss(g, t[0], &grid)?.scalar)
    })
    .unwrap()
}

fn case_mse_point(rng: &mut ChaCha8Rng) -> GradCheck {
    let target = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
    let x = values(rng, 2, -0.5, 1.5);
    check_gradients(&[(vec![2], x)], H, move |g, t| Ok(mse_point_loss(g, t[0], target)?.scalar)).unwrap()
}

pub fn cases() -> Vec<GradCase> {
    vec![
        GradCase { name: "add", check: case_add },
        GradCase { name: "sub_broadcast", check: case_sub_broadcast },
        GradCase { name: "mul", check: case_mul },
        GradCase { name: "div", check: case_div },
        GradCase { name: "scale_shift", check: case_scale_shift },
        GradCase { name: "matmul", check: case_matmul },
        GradCase { name: "conv2d", check: case_conv2d },
        GradCase { name: "relu", check: case_relu },
        GradCase { name: "sigmoid", check: case_sigmoid },
        GradCase { name: "exp", check: case_exp },
        GradCase { name: "log", check: case_log },
        GradCase { name: "clamp", check: case_clamp },
        GradCase { name: "sum_mean", check: case_sum_mean },
        GradCase { name: "max_reduce", check: case_max_reduce },
        GradCase { name: "reshape", check: case_reshape },
        GradCase { name: "avgpool2d", check: case_avgpool },
        GradCase { name: "spatial_softmax", check: case_spatial_softmax },
        GradCase { name: "spatial_softmax_nll", check: case_softmax_nll },
        GradCase { name: "balanced_bce", check: case_balanced_bce },
        GradCase { name: "balanced_bce_probs", check: case_balanced_bce_probs },
        GradCase { name: "mse_point", check: case_mse_point },
    ]
}

/// Worst relative error of `case` over `INSTANCES` seeded instances.
pub fn worst_error(case: &GradCase, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..INSTANCES)
        .map(|_| (case.check)(&mut rng).max_rel_error)
        .fold(0.0, f64::max)
}
