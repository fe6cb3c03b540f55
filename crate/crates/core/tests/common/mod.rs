//! Central finite differences against the tape's reverse sweep.
#![allow(dead_code)]

use cd3a::autodiff::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> cd3a::Result<Var> + 'a;

pub fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(vec![rows, cols], &data).unwrap()
}

pub fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=8)
}

fn eval(inputs: &[Tensor<f64>], build: &Build) -> cd3a::Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    Ok(tape.value(loss).item())
}

/// Checks `analytic == factor * numeric` for every input entry.
///
/// Entries pass when `|a - factor*n| <= FD_RTOL * max(1, |a|, |factor*n|)`.
pub fn fd_check_scaled(inputs: &[Tensor<f64>], build: &Build, factor: f64) -> Result<(), String> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars).map_err(|e| e.to_string())?;
    let grads = tape.backward(loss).map_err(|e| e.to_string())?;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], input.shape());
        for k in 0..input.numel() {
            let mut shifted = inputs.to_vec();
            shifted[i].data_mut()[k] = input.data()[k] + FD_STEP;
            let plus = eval(&shifted, build).map_err(|e| e.to_string())?;
            shifted[i].data_mut()[k] = input.data()[k] - FD_STEP;
            let minus = eval(&shifted, build).map_err(|e| e.to_string())?;
            let numeric = factor * (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.data()[k];
            let scale = 1f64.max(a.abs()).max(numeric.abs());
            if (a - numeric).abs() > FD_RTOL * scale {
                return Err(format!(
                    "input {i} entry {k}: analytic {a} vs numeric {numeric} (shape {:?})",
                    input.shape()
                ));
            }
        }
    }
    Ok(())
}

pub fn fd_check(inputs: &[Tensor<f64>], build: &Build) -> Result<(), String> {
    fd_check_scaled(inputs, build, 1.0)
}

/// Reduces a tensor output to a scalar through a fixed random weighting.
fn project(tape: &mut Tape<f64>, out: Var, w: &Tensor<f64>) -> cd3a::Result<Var> {
    let w = tape.leaf(w.clone());
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

/// Random values kept away from 0 so relu kinks stay outside the difference stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let mut t = rand_tensor(rng, rows, cols, -2.0, 2.0);
    for v in t.data_mut() {
        if v.abs() < 1e-3 {
            *v = 0.5;
        }
    }
    t
}

fn binary(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| f64::from(rng.random_bool(0.5))).collect();
    Tensor::from_f64(vec![rows, cols], &data).unwrap()
}

pub const OPS: [&str; 15] = [
    "matmul",
    "add",
    "add_row",
    "sub",
    "mul",
    "scale",
    "relu",
    "sigmoid",
    "grad_reverse",
    "dropout",
    "slice_rows",
    "sum",
    "softmax_cross_entropy",
    "binary_cross_entropy",
    "mlp",
];

/// One random case of `op`, drawn from `rng`.
pub fn check_op(op: &str, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (m, n) = (dim(rng), dim(rng));
    let w = rand_tensor(rng, m, n, -2.0, 2.0);
    let x = rand_tensor(rng, m, n, -2.0, 2.0);
    let y = rand_tensor(rng, m, n, -2.0, 2.0);
    let wr = &w;
    let binop = |f: fn(&mut Tape<f64>, Var, Var) -> cd3a::Result<Var>| {
        move |t: &mut Tape<f64>, v: &[Var]| {
            let o = f(t, v[0], v[1])?;
            project(t, o, wr)
        }
    };
    match op {
        "matmul" => {
            let k = dim(rng);
            let a = rand_tensor(rng, m, k, -2.0, 2.0);
            let b = rand_tensor(rng, k, n, -2.0, 2.0);
            fd_check(&[a, b], &binop(|t, a, b| t.matmul(a, b)))
        }
        "add" => fd_check(&[x, y], &binop(|t, a, b| t.add(a, b))),
        "add_row" => {
            let b = rand_tensor(rng, 1, n, -2.0, 2.0);
            fd_check(&[x, b], &binop(|t, a, b| t.add(a, b)))
        }
        "sub" => fd_check(&[x, y], &binop(|t, a, b| t.sub(a, b))),
        "mul" => fd_check(&[x, y], &binop(|t, a, b| t.mul(a, b))),
        "scale" => {
            let c = rng.random_range(-2.0..2.0);
            fd_check(&[x], &|t, v| {
                let o = t.scale(v[0], c);
                project(t, o, &w)
            })
        }
        "relu" => fd_check(&[away_from_zero(rng, m, n)], &|t, v| {
            let o = t.relu(v[0]);
            project(t, o, &w)
        }),
        "sigmoid" => fd_check(&[x], &|t, v| {
            let o = t.sigmoid(v[0]);
            project(t, o, &w)
        }),
        "grad_reverse" => {
            let lambda = rng.random_range(0.0..2.0);
            fd_check_scaled(
                &[x],
                &|t, v| {
                    let o = t.grad_reverse(v[0], lambda)?;
                    project(t, o, &w)
                },
                -lambda,
            )
        }
        "dropout" => {
            let keep = rng.random_range(0.3..1.0);
            let mask = if rng.random_bool(0.5) { binary(rng, 1, n) } else { binary(rng, m, n) };
            fd_check(&[x], &|t, v| {
                let o = t.dropout(v[0], &mask, keep)?;
                project(t, o, &w)
            })
        }
        "slice_rows" => {
            let start = rng.random_range(0..m);
            let end = rng.random_range(start + 1..=m);
            let ws = w.slice_rows(start, end).unwrap();
            fd_check(&[x], &|t, v| {
                let o = t.slice_rows(v[0], start, end)?;
                project(t, o, &ws)
            })
        }
        "sum" => fd_check(&[x], &|t, v| Ok(t.sum(v[0]))),
        "softmax_cross_entropy" => {
            let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
            fd_check(&[x], &|t, v| t.softmax_cross_entropy(v[0], &labels))
        }
        "binary_cross_entropy" => {
            let p = rand_tensor(rng, m, n, 0.05, 0.95);
            let target = binary(rng, m, n);
            fd_check(&[p], &|t, v| t.binary_cross_entropy(v[0], &target))
        }
        "mlp" => {
            let (d, h) = (dim(rng), dim(rng));
            let input = rand_tensor(rng, m, d, -2.0, 2.0);
            let w1 = rand_tensor(rng, d, h, -2.0, 2.0);
            let b1 = rand_tensor(rng, 1, h, -2.0, 2.0);
            let w2 = rand_tensor(rng, h, 1, -2.0, 2.0);
            let target = binary(rng, m, 1);
            fd_check(&[input, w1, b1, w2], &|t, v| {
                let z = t.matmul(v[0], v[1])?;
                let z = t.add(z, v[2])?;
                let a = t.sigmoid(z);
                let o = t.matmul(a, v[3])?;
                let p = t.sigmoid(o);
                t.binary_cross_entropy(p, &target)
            })
        }
        other => Err(format!("unknown op {other}")),
    }
}

/// The synthetic task: 250 points per class and domain, target rotated 35 degrees.
pub fn moons_task(seed: u64, source_fraction: f64) -> cd3a::experiment::PreparedTask {
    let data = cd3a::experiment::DataConfig {
        source_fraction,
        ..Default::default()
    };
    cd3a::experiment::prepare_task(&data, 0, seed).unwrap()
}
