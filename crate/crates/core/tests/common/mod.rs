//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the library's numerics.
#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phantom_planner::cost::CostWeights;
use phantom_planner::path::Point;
use phantom_planner::scenario::{parse_scenario, Scenario};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

pub fn load(name: &str) -> Scenario {
    parse_scenario(scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const TWO_OVER_SQRT_PI: f64 = 1.128_379_167_095_512_6;

/// erf to about 1e-14: Maclaurin series up to |x| = 3, Lentz continued
/// fraction for erfc beyond.
pub fn erf_oracle(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let a = x.abs();
    let v = if a <= 3.0 {
        let (mut term, mut sum, x2) = (a, a, a * a);
        for n in 1..200 {
            term *= -x2 / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        TWO_OVER_SQRT_PI * sum
    } else {
        1.0 - erfc_cf(a)
    };
    v.copysign(x)
}

/// erfc(x) = exp(-x²)/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))).
fn erfc_cf(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let an = k as f64 / 2.0;
        d = x + an * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = x + an / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn gauss(mu: f64, sigma: f64) -> impl Fn(f64) -> f64 {
    move |x| (-0.5 * ((x - mu) / sigma).powi(2)).exp()
}

/// Truncated-normal cdf by quadrature of the unnormalized density.
pub fn tn_cdf_oracle(mu: f64, sigma: f64, lower: f64, upper: f64, x: f64) -> f64 {
    if x <= lower {
        return 0.0;
    }
    if x >= upper {
        return 1.0;
    }
    let g = gauss(mu, sigma);
    simpson(&g, lower, x, 4000) / simpson(&g, lower, upper, 4000)
}

/// Truncated-normal mean and variance by quadrature.
pub fn tn_moments_oracle(mu: f64, sigma: f64, lower: f64, upper: f64) -> (f64, f64) {
    let g = gauss(mu, sigma);
    let z = simpson(&g, lower, upper, 8000);
    let m = simpson(|x| x * g(x), lower, upper, 8000) / z;
    let v = simpson(|x| (x - m).powi(2) * g(x), lower, upper, 8000) / z;
    (m, v)
}

/// Minimizer of the smoothness cost on the straight path along +x, where
/// every residual is affine: builds the residual matrix row by row and solves
/// the least-squares problem over the free coordinates by SVD.
///
/// `views` lists each maneuver's storage indices and blend weight.
pub fn quadratic_oracle(points: &[Point], views: &[(Vec<usize>, f64)], first_free: usize, w: &CostWeights, step: f64) -> Vec<Point> {
    let dim = 2 * points.len();
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let binom = |order: usize| -> Vec<f64> {
        match order {
            1 => vec![-1.0, 1.0],
            2 => vec![1.0, -2.0, 1.0],
            3 => vec![-1.0, 3.0, -3.0, 1.0],
            _ => unreachable!(),
        }
    };
    for (idx, weight) in views {
        if *weight == 0.0 {
            continue;
        }
        let count = idx.len() - 3;
        for (order, scale) in [(3, w.jerk), (2, w.accel)] {
            let root = (weight * scale).sqrt() / step.powi(order as i32);
            if root == 0.0 {
                continue;
            }
            for i in 0..count {
                for dim_k in 0..2 {
                    let row = binom(order).iter().enumerate().map(|(k, c)| (2 * idx[i + k] + dim_k, root * c)).collect();
                    rows.push((row, 0.0));
                }
            }
        }
        let root = (weight * w.velocity_track).sqrt();
        if root > 0.0 {
            for i in 0..count {
                rows.push((vec![(2 * idx[i + 1], root / step), (2 * idx[i], -root / step)], -root * w.v_ref));
            }
        }
        let root = (weight * w.path_offset).sqrt();
        if root > 0.0 {
            for &j in &idx[..count] {
                rows.push((vec![(2 * j + 1, root)], 0.0));
            }
        }
    }
    let free0 = 2 * first_free;
    let nf = dim - free0;
    let mut a = DMatrix::<f64>::zeros(rows.len(), nf);
    let mut rhs = DVector::<f64>::zeros(rows.len());
    let flat: Vec<f64> = points.iter().flat_map(|p| [p.x, p.y]).collect();
    for (r, (row, constant)) in rows.iter().enumerate() {
        let mut fixed = *constant;
        for &(c, v) in row {
            if c >= free0 {
                a[(r, c - free0)] += v;
            } else {
                fixed += v * flat[c];
            }
        }
        rhs[r] = -fixed;
    }
    let z = a.svd(true, true).solve(&rhs, 1e-14).expect("svd solve");
    let mut out = points.to_vec();
    for (k, p) in out[first_free..].iter_mut().enumerate() {
        p.x = z[2 * k];
        p.y = z[2 * k + 1];
    }
    out
}

/// Central finite-difference gradient.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn max_abs_diff(a: &[Point], b: &[Point]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max)
}
