//! Symmetric quadrature on triangles, in barycentric form.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Weights are relative to the element area and sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadRule<T> {
    pub points: Vec<[T; 3]>,
    pub weights: Vec<T>,
    pub exactness_degree: usize,
}

impl<T: Scalar> QuadRule<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub const MAX_ORDER: usize = 10;

/// Symmetric rule exact for polynomials of degree `order` (1..=10).
///
/// Degrees 1 to 5 use the classical centroid, edge-midpoint, Strang-Fix
/// and Radon rules; higher degrees symmetrize a collapsed Gauss-Legendre
/// product rule over the six barycentric permutations.
pub fn quadrature_rule<T: Scalar>(order: usize) -> Result<QuadRule<T>> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::Argument(format!(
            "quadrature order {order} outside 1..={MAX_ORDER}"
        )));
    }
    let (points, weights, degree): (Vec<[f64; 3]>, Vec<f64>, usize) = match order {
        1 => (vec![[1.0 / 3.0; 3]], vec![1.0], 1),
        2 => (
            vec![[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
            vec![1.0 / 3.0; 3],
            2,
        ),
        3 => {
            let mut p = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            p.extend([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]);
            p.push([1.0 / 3.0; 3]);
            let mut w = vec![1.0 / 20.0; 3];
            w.extend([2.0 / 15.0; 3]);
            w.push(9.0 / 20.0);
            (p, w, 3)
        }
        4 | 5 => {
            let s15 = 15f64.sqrt();
            let a1 = (6.0 - s15) / 21.0;
            let a2 = (6.0 + s15) / 21.0;
            let w1 = (155.0 - s15) / 1200.0;
            let w2 = (155.0 + s15) / 1200.0;
            let mut p = vec![[1.0 / 3.0; 3]];
            let mut w = vec![9.0 / 40.0];
            for (a, wa) in [(a1, w1), (a2, w2)] {
                let b = 1.0 - 2.0 * a;
                p.extend([[a, a, b], [a, b, a], [b, a, a]]);
                w.extend([wa; 3]);
            }
            (p, w, 5)
        }
        d => {
            let (p, w) = symmetrized_collapsed_gauss(d);
            (p, w, d)
        }
    };
    Ok(QuadRule {
        points: points
            .iter()
            .map(|b| [T::lit(b[0]), T::lit(b[1]), T::lit(b[2])])
            .collect(),
        weights: weights.into_iter().map(T::lit).collect(),
        exactness_degree: degree,
    })
}

fn symmetrized_collapsed_gauss(degree: usize) -> (Vec<[f64; 3]>, Vec<f64>) {
    // x = u, y = (1 - u) v with Jacobian (1 - u); the u-integrand has degree + 1
    let (xu, wu) = gauss_legendre_unit((degree + 3) / 2);
    let (xv, wv) = gauss_legendre_unit((degree + 2) / 2);
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut points = Vec::with_capacity(6 * xu.len() * xv.len());
    let mut weights = Vec::with_capacity(points.capacity());
    for (u, wu) in xu.iter().zip(&wu) {
        for (v, wv) in xv.iter().zip(&wv) {
            let x = *u;
            let y = (1.0 - u) * v;
            let bary = [1.0 - x - y, x, y];
            let w = 2.0 * wu * wv * (1.0 - u) / 6.0;
            for p in PERMS {
                points.push([bary[p[0]], bary[p[1]], bary[p[2]]]);
                weights.push(w);
            }
        }
    }
    (points, weights)
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Gauss points on an edge, as parameters in [0, 1] with weights summing to one.
pub fn edge_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    gauss_legendre_unit(n)
}
