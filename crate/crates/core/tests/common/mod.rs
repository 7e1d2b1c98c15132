//! Brute-force references shared by the integration tests.
#![allow(dead_code)]

use btrn_core::linalg::Matrix;
use btrn_core::rng::seeded;
use btrn_core::tensor::{Graph, Tensor, Var};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)).unwrap()
}

/// Direct six-nested-loop cross-correlation over every batch and channel.
pub fn conv3d_oracle(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: [usize; 3],
    pad: [usize; 3],
) -> (Vec<usize>, Vec<f64>) {
    let s = x.shape();
    let (n, ci, d, h, wd) = (s[0], s[1], s[2], s[3], s[4]);
    let ws = w.shape();
    let (co, kd, kh, kw) = (ws[0], ws[2], ws[3], ws[4]);
    let od = (d + 2 * pad[0] - kd) / stride[0] + 1;
    let oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (wd + 2 * pad[2] - kw) / stride[2] + 1;
    let xi = |a: usize, c: usize, z: isize, y: isize, q: isize| -> f64 {
        if z < 0 || y < 0 || q < 0 || z >= d as isize || y >= h as isize || q >= wd as isize {
            0.0
        } else {
            x.data()[(((a * ci + c) * d + z as usize) * h + y as usize) * wd + q as usize]
        }
    };
    let mut out = Vec::with_capacity(n * co * od * oh * ow);
    for a in 0..n {
        for o in 0..co {
            for z in 0..od {
                for y in 0..oh {
                    for q in 0..ow {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for i in 0..kd {
                                for j in 0..kh {
                                    for k in 0..kw {
                                        let wv =
                                            w.data()[(((o * ci + c) * kd + i) * kh + j) * kw + k];
                                        acc += wv
                                            * xi(
                                                a,
                                                c,
                                                (z * stride[0] + i) as isize - pad[0] as isize,
                                                (y * stride[1] + j) as isize - pad[1] as isize,
                                                (q * stride[2] + k) as isize - pad[2] as isize,
                                            );
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    (vec![n, co, od, oh, ow], out)
}

pub fn avg_pool_oracle(x: &Tensor, win: [usize; 3], stride: [usize; 3]) -> (Vec<usize>, Vec<f64>) {
    let s = x.shape();
    let (n, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let od = (d - win[0]) / stride[0] + 1;
    let oh = (h - win[1]) / stride[1] + 1;
    let ow = (w - win[2]) / stride[2] + 1;
    let mut out = Vec::new();
    for p in 0..n * c {
        for z in 0..od {
            for y in 0..oh {
                for q in 0..ow {
                    let mut acc = 0.0;
                    for i in 0..win[0] {
                        for j in 0..win[1] {
                            for k in 0..win[2] {
                                let zz = z * stride[0] + i;
                                let yy = y * stride[1] + j;
                                let qq = q * stride[2] + k;
                                acc += x.data()[((p * d + zz) * h + yy) * w + qq];
                            }
                        }
                    }
                    out.push(acc / (win[0] * win[1] * win[2]) as f64);
                }
            }
        }
    }
    (vec![n, c, od, oh, ow], out)
}

pub fn dense_oracle(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (rows, ind) = (x.shape()[0], x.shape()[1]);
    let outd = w.shape()[0];
    let mut out = Vec::new();
    for r in 0..rows {
        for o in 0..outd {
            let mut acc = b.data()[o];
            for i in 0..ind {
                acc += x.data()[r * ind + i] * w.data()[o * ind + i];
            }
            out.push(acc);
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor so exact zeros compare sanely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares tape gradients against central differences for every entry of
/// every input. `build` gets one tracked variable per input.
pub fn gradcheck<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();
    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.variable(t.clone())).collect();
        let l = build(&mut g, &vars);
        g.value(l).data()[0]
    };
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        for (i, &a) in analytic[k].iter().enumerate().take(t.len()) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

/// Pushes entries away from zero so ReLU kinks stay outside the FD stencil.
pub fn away_from_zero(mut t: Tensor, margin: f64) -> Tensor {
    for v in t.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin };
        }
    }
    t
}

pub fn random_spd(n: usize, rng: &mut impl FnMut() -> f64) -> Matrix {
    let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng()).collect()).collect();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] =
                (0..n).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 0.1 } else { 0.0 };
        }
    }
    m
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows, m.cols, |i, j| m[(i, j)])
}

/// Dense oracle for `A w = λ B w` through the symmetric square-root of `B`.
pub fn oracle_pencil(a: &Matrix, b: &Matrix) -> (Vec<f64>, DMatrix<f64>) {
    let eb = SymmetricEigen::new(to_na(b));
    let inv_sqrt = &eb.eigenvectors
        * DMatrix::from_diagonal(&eb.eigenvalues.map(|v| 1.0 / v.sqrt()))
        * eb.eigenvectors.transpose();
    let c = &inv_sqrt * to_na(a) * &inv_sqrt;
    let ec = SymmetricEigen::new((&c + c.transpose()) * 0.5);
    let w = &inv_sqrt * ec.eigenvectors;
    (ec.eigenvalues.iter().copied().collect(), w)
}

pub fn angle(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let cos = (dot / (nu * nv)).abs();
    let residual: f64 = u
        .iter()
        .zip(v)
        .map(|(a, b)| {
            let r = a / nu - dot.signum() * b / nv;
            r * r
        })
        .sum::<f64>()
        .sqrt();
    residual.atan2(cos)
}
