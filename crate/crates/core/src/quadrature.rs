//! Gauss–Hermite rules against the standard normal weight, with node
//! doubling as convergence control.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureScheme {
    GaussHermite1d,
    GaussHermite2dTensor,
    /// Composite trapezoid on a truncated line, exponentially convergent for
    /// analytic integrands; used when Gauss–Hermite fails to stabilise.
    Trapezoid1d,
    Trapezoid2dTensor,
}

impl QuadratureScheme {
    fn is_tensor(self) -> bool {
        matches!(self, QuadratureScheme::GaussHermite2dTensor | QuadratureScheme::Trapezoid2dTensor)
    }
}

/// Gauss–Hermite rule normalized so that `Σ w_i f(t_i) ≈ E f(T)`,
/// `T ~ N(0, 1)`. The 2-D scheme is the tensor product of the same axis.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub scheme: QuadratureScheme,
    pub nodes: usize,
    pub abscissae: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `E f(T)` for `T ~ N(0, I_dims)`; the second coordinate is `0` when
    /// `dims == 1`.
    #[inline]
    pub fn expect(&self, mut f: impl FnMut([f64; 2]) -> f64) -> f64 {
        match self.scheme.is_tensor() {
            false => self
                .abscissae
                .iter()
                .zip(&self.weights)
                .map(|(&t, &w)| w * f([t, 0.0]))
                .sum(),
            true => {
                let mut acc = 0.0;
                for (&t1, &w1) in self.abscissae.iter().zip(&self.weights) {
                    if w1 == 0.0 {
                        continue;
                    }
                    let mut row = 0.0;
                    for (&t2, &w2) in self.abscissae.iter().zip(&self.weights) {
                        row += w2 * f([t1, t2]);
                    }
                    acc += w1 * row;
                }
                acc
            }
        }
    }
}

fn rule_cache() -> &'static Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Nodes and weights of the `n`-point rule for the standard normal weight.
pub fn gauss_hermite(n: usize) -> Arc<(Vec<f64>, Vec<f64>)> {
    let mut cache = rule_cache().lock().unwrap();
    cache
        .entry(n)
        .or_insert_with(|| Arc::new(compute_gauss_hermite(n)))
        .clone()
}

/// Half-width of the truncated line used by the trapezoid rules.
const TRAPEZOID_HALF_WIDTH: f64 = 10.0;

/// `nodes`-point trapezoid rule on `[-10, 10]` against the standard normal
/// density, renormalised to unit mass.
pub fn trapezoid(nodes: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(nodes >= 2);
    let h = 2.0 * TRAPEZOID_HALF_WIDTH / (nodes - 1) as f64;
    let x: Vec<f64> = (0..nodes).map(|k| -TRAPEZOID_HALF_WIDTH + k as f64 * h).collect();
    let mut w: Vec<f64> = x.iter().map(|&t| (-0.5 * t * t).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    (x, w)
}

pub fn rule(scheme: QuadratureScheme, nodes: usize) -> QuadratureRule {
    if matches!(scheme, QuadratureScheme::Trapezoid1d | QuadratureScheme::Trapezoid2dTensor) {
        let (abscissae, weights) = trapezoid(nodes);
        return QuadratureRule {
            scheme,
            nodes,
            abscissae,
            weights,
        };
    }
    let r = gauss_hermite(nodes);
    QuadratureRule {
        scheme,
        nodes,
        abscissae: r.0.clone(),
        weights: r.1.clone(),
    }
}

// Golub–Welsch eigenvalues of the Jacobi matrix seed the nodes, then Newton
// on orthonormal Hermite polynomials (weight e^{-x^2}) polishes them and
// yields the weights. Finally rescaled to the probabilists' weight.
fn compute_gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut seeds: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    seeds.sort_by(|a, b| a.total_cmp(b));

    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for (i, &seed) in seeds.iter().enumerate() {
        let mut z = seed;
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / (pp * pp);
    }
    // Enforce exact symmetry.
    for i in 0..n / 2 {
        let z = 0.5 * (x[n - 1 - i] - x[i]);
        let wi = 0.5 * (w[i] + w[n - 1 - i]);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let s2 = std::f64::consts::SQRT_2;
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    x.iter()
        .zip(&w)
        .map(|(&xi, &wi)| (xi * s2, wi * inv_sqrt_pi))
        .unzip()
}

/// Quadrature accuracy settings shared by every scalar-channel integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    /// Base node count for 1-D integrals.
    pub nodes_1d: usize,
    /// Base node count per axis for 2-D integrals.
    pub nodes_2d: usize,
    /// Accepted change between successive node doublings, relative to
    /// `max(1, |value|)`.
    pub tol: f64,
    /// Finest trapezoid rule (points per axis) tried after Gauss–Hermite
    /// fails, for 1-D and 2-D integrals.
    pub max_fallback_1d: usize,
    pub max_fallback_2d: usize,
    /// Reduce separable complex constellations (QPSK, 16-QAM) to their real
    /// component channel.
    pub separable: bool,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature {
            nodes_1d: 96,
            nodes_2d: 48,
            tol: 1e-9,
            max_fallback_1d: 8193,
            max_fallback_2d: 1025,
            separable: true,
        }
    }
}

impl Quadrature {
    /// Evaluates `f` at the base Gauss–Hermite rule and its doubling,
    /// escalating once more if the two disagree. Integrands too sharp for
    /// that ladder (near-step posterior means at high SNR) move on to
    /// trapezoid rules with halving step. Returns the finest accepted value.
    pub fn converge(
        &self,
        what: &'static str,
        dims: usize,
        f: impl Fn(&QuadratureRule) -> f64,
    ) -> Result<f64> {
        let (scheme, base, trap, max_trap) = match dims {
            1 => (
                QuadratureScheme::GaussHermite1d,
                self.nodes_1d,
                QuadratureScheme::Trapezoid1d,
                self.max_fallback_1d,
            ),
            _ => (
                QuadratureScheme::GaussHermite2dTensor,
                self.nodes_2d,
                QuadratureScheme::Trapezoid2dTensor,
                self.max_fallback_2d,
            ),
        };
        let mut prev = f(&rule(scheme, base));
        let mut nodes = base;
        let mut change = f64::NAN;
        for _ in 0..2 {
            nodes *= 2;
            let next = f(&rule(scheme, nodes));
            change = (next - prev).abs();
            if change <= self.tol * next.abs().max(1.0) {
                return Ok(next);
            }
            prev = next;
        }
        log::debug!("{what}: Gauss–Hermite change {change:e} at {nodes} nodes, trying trapezoid");
        let mut n = 129;
        let mut prev = f(&rule(trap, n));
        while 2 * n - 1 <= max_trap {
            n = 2 * n - 1;
            let next = f(&rule(trap, n));
            change = (next - prev).abs();
            if change <= self.tol * next.abs().max(1.0) {
                return Ok(next);
            }
            prev = next;
        }
        Err(Error::Quadrature { what, change, nodes: n })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(k: u32) -> f64 {
        (1..=k).rev().step_by(2).map(|v| v as f64).product()
    }

    #[test]
    fn weights_are_positive_and_sum_to_one() {
        for n in [1, 2, 5, 48, 96, 192, 384] {
            let r = gauss_hermite(n);
            assert_eq!(r.0.len(), n);
            assert!(r.1.iter().all(|&w| w >= 0.0));
            assert!(r.1.iter().any(|&w| w > 0.0));
            let s: f64 = r.1.iter().sum();
            assert!((s - 1.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }

    #[test]
    fn monomials_are_exact() {
        for n in [5usize, 20, 48, 96] {
            let r = rule(QuadratureScheme::GaussHermite1d, n);
            let max_deg = (2 * n - 1).min(24) as u32;
            for d in 0..=max_deg {
                let got = r.expect(|t| t[0].powi(d as i32));
                let want = match d {
                    0 => 1.0,
                    d if d % 2 == 1 => 0.0,
                    d => double_factorial(d - 1),
                };
                assert!(
                    (got - want).abs() <= 1e-10 * double_factorial(d + d % 2).max(1.0),
                    "n={n} d={d} got={got} want={want}"
                );
            }
        }
    }

    #[test]
    fn tensor_rule_moments() {
        let r = rule(QuadratureScheme::GaussHermite2dTensor, 48);
        let v = r.expect(|t| t[0] * t[0] * t[1] * t[1] + t[1].powi(4));
        assert!((v - 4.0).abs() < 1e-10);
    }

    #[test]
    fn trapezoid_fallback_handles_sharp_integrands() {
        // E tanh(g + sqrt(g) T) has poles close to the real line for large g.
        let g: f64 = 200.0;
        let v = Quadrature::default()
            .converge("sharp", 1, |r| r.expect(|t| (g + g.sqrt() * t[0]).tanh()))
            .unwrap();
        assert!(v < 1.0 && v > 1.0 - 1e-20_f64.max(1e-12));
        let r = rule(QuadratureScheme::Trapezoid1d, 257);
        assert!((r.expect(|t| t[0] * t[0]) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn convergence_failure_is_reported() {
        let q = Quadrature {
            nodes_1d: 4,
            max_fallback_1d: 257,
            ..Default::default()
        };
        let err = q
            .converge("cusp", 1, |r| r.expect(|t| t[0].abs().sqrt()))
            .unwrap_err();
        assert!(matches!(err, Error::Quadrature { what: "cusp", .. }));
    }
}
