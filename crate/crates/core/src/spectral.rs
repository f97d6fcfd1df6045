//! Spectral efficiency under separate, joint and successive decoding.
//!
//! Everything is computed in nats and converted to bits per dimension at
//! the boundary.

use std::collections::HashMap;

use serde::Serialize;

use crate::constellation::{ChannelKind, Constellation, DetectorSpec};
use crate::error::Result;
use crate::quadrature::Quadrature;
use crate::replica_solver::{self, FixedPointSolution, SolverOptions, SystemSpec};
use crate::scalar_channel;

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralResult {
    pub eta: f64,
    pub c_sep: f64,
    pub c_joint: f64,
    pub joint_gain: f64,
    /// `(snr, I(eta snr))` per atom, in bits.
    pub per_atom_info: Vec<(f64, f64)>,
}

/// Mutual information memoised on the effective SNR rounded to `1e-12`.
pub struct MiCache<'a> {
    prior: &'a Constellation,
    quad: Quadrature,
    map: HashMap<i64, f64>,
}

impl<'a> MiCache<'a> {
    pub fn new(prior: &'a Constellation, quad: Quadrature) -> Self {
        MiCache {
            prior,
            quad,
            map: HashMap::new(),
        }
    }

    /// `I(gamma)` in nats.
    pub fn get(&mut self, gamma: f64) -> Result<f64> {
        let key = (gamma * 1e12).round() as i64;
        if let Some(&v) = self.map.get(&key) {
            return Ok(v);
        }
        let v = scalar_channel::mutual_info(gamma, self.prior, &self.quad)?;
        self.map.insert(key, v);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// `E{I(eta snr)}` in nats.
fn mean_info(spec: &SystemSpec, eta: f64, cache: &mut MiCache) -> Result<f64> {
    spec.snr_profile
        .atoms()
        .iter()
        .map(|a| cache.get(eta * a.snr).map(|i| a.weight * i))
        .sum()
}

/// `beta E{I(eta snr)}` in bits for an explicit efficiency.
pub fn c_sep_at(spec: &SystemSpec, eta: f64, quad: &Quadrature) -> Result<f64> {
    let mut cache = MiCache::new(&spec.actual_prior, *quad);
    Ok(nats_to_bits(spec.beta * mean_info(spec, eta, &mut cache)?))
}

/// Separate-decoding spectral efficiency (bits per dimension) at the
/// dominant branch of `solution`.
pub fn c_sep(spec: &SystemSpec, solution: &FixedPointSolution, quad: &Quadrature) -> Result<f64> {
    c_sep_at(spec, solution.eta, quad)
}

/// Divergence between `N(0, eta)` and `N(0, 1)` per dimension, in bits;
/// doubled for complex channels.
pub fn joint_gain_bits(eta: f64, channel: ChannelKind) -> f64 {
    nats_to_bits(0.5 * channel.dims() as f64 * ((eta - 1.0) - eta.ln()))
}

fn io_spec(spec: &SystemSpec) -> Result<SystemSpec> {
    spec.with_detector(DetectorSpec::individually_optimal(&spec.actual_prior))
}

/// Joint-decoding spectral efficiency. The detector in `spec` is replaced
/// by the individually-optimal one.
pub fn c_joint(spec: &SystemSpec, opts: &SolverOptions) -> Result<SpectralResult> {
    let io = io_spec(spec)?;
    let sol = replica_solver::solve_io(&io, opts)?;
    spectral_at(&io, sol.eta, &opts.quad)
}

/// Spectral quantities at a given efficiency, treating it as the
/// individually-optimal one for the joint-decoding terms.
pub fn spectral_at(spec: &SystemSpec, eta: f64, quad: &Quadrature) -> Result<SpectralResult> {
    let mut cache = MiCache::new(&spec.actual_prior, *quad);
    let per_atom_info = spec
        .snr_profile
        .atoms()
        .iter()
        .map(|a| cache.get(eta * a.snr).map(|i| (a.snr, nats_to_bits(i))))
        .collect::<Result<Vec<_>>>()?;
    let c_sep = nats_to_bits(spec.beta * mean_info(spec, eta, &mut cache)?);
    let joint_gain = joint_gain_bits(eta, spec.channel_kind);
    Ok(SpectralResult {
        eta,
        c_sep,
        c_joint: c_sep + joint_gain,
        joint_gain,
        per_atom_info,
    })
}

/// Adaptive integration of the load integrand `h(b) = E{I(eta(b) snr)}`
/// over `[0, beta]`, in nats.
struct LoadIntegral<'a> {
    spec: &'a SystemSpec,
    opts: &'a SolverOptions,
    cache: MiCache<'a>,
    tol: f64,
    min_width: f64,
}

impl LoadIntegral<'_> {
    fn h(&mut self, b: f64) -> Result<f64> {
        let eta = if b == 0.0 {
            1.0
        } else {
            replica_solver::solve(&self.spec.with_beta(b)?, self.opts)?.eta
        };
        mean_info(self.spec, eta, &mut self.cache)
    }

    /// Trapezoid with one Richardson step, bisecting until the two levels
    /// agree. Intervals below `min_width` (jumps at phase transitions) are
    /// accepted as they are.
    fn segment(&mut self, a: f64, b: f64, fa: f64, fb: f64, depth: u32) -> Result<f64> {
        let m = 0.5 * (a + b);
        let fm = self.h(m)?;
        let t1 = 0.5 * (b - a) * (fa + fb);
        let t2 = 0.25 * (b - a) * (fa + 2.0 * fm + fb);
        let local_tol = self.tol * (b - a) / self.spec.beta;
        if (t2 - t1).abs() <= local_tol || b - a <= self.min_width || depth >= 40 {
            return Ok(t2 + (t2 - t1) / 3.0);
        }
        Ok(self.segment(a, m, fa, fm, depth + 1)? + self.segment(m, b, fm, fb, depth + 1)?)
    }

    fn run(mut self, grid_points: usize) -> Result<f64> {
        let beta = self.spec.beta;
        let n = grid_points.max(2);
        let lo = (beta * 1e-4f64).ln();
        let hi = beta.ln();
        let mut knots = vec![0.0];
        knots.extend((0..n).map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()));
        *knots.last_mut().unwrap() = beta;
        let vals = knots.iter().map(|&b| self.h(b)).collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        for i in 0..knots.len() - 1 {
            total += self.segment(knots[i], knots[i + 1], vals[i], vals[i + 1], 0)?;
        }
        Ok(total)
    }
}

/// Load integral `∫_0^beta E{I(eta(b) snr)} db` (bits per dimension) with
/// `eta(b)` from the detector in `spec` and the dominant branch at each load.
fn load_integral(spec: &SystemSpec, opts: &SolverOptions, grid_points: usize) -> Result<f64> {
    let li = LoadIntegral {
        spec,
        opts,
        cache: MiCache::new(&spec.actual_prior, opts.quad),
        tol: 2e-6,
        min_width: spec.beta * 1e-9,
    };
    Ok(nats_to_bits(li.run(grid_points)?))
}

/// `∫_0^beta C_sep(b) / b db` with individually-optimal detection, for
/// comparison with [`c_joint`].
pub fn joint_via_integral(spec: &SystemSpec, opts: &SolverOptions, grid_points: usize) -> Result<f64> {
    load_integral(&io_spec(spec)?, opts, grid_points)
}

/// Spectral efficiency of successive decoding with the PME `detector` as
/// front end.
pub fn successive_decoding_se(spec: &SystemSpec, detector: &DetectorSpec, opts: &SolverOptions) -> Result<f64> {
    load_integral(&spec.with_detector(detector.clone())?, opts, 64)
}
