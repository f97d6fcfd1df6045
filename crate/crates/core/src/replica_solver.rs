//! Coupled fixed-point equations for the multiuser efficiency `eta` and the
//! postulated inverse noise variance `xi`, branch enumeration, free-energy
//! selection and the closed-form linear special cases.

use serde::Serialize;

use crate::constellation::{ChannelKind, Constellation, DetectorPreset, DetectorSpec, PostulatedNoise, SnrProfile};
use crate::error::{Error, Result};
use crate::quadrature::Quadrature;
use crate::scalar_channel::{self, ScalarParams};

/// Everything the large-system equations depend on.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub beta: f64,
    pub snr_profile: SnrProfile,
    pub actual_prior: Constellation,
    pub detector: DetectorSpec,
    pub channel_kind: ChannelKind,
}

impl SystemSpec {
    pub fn new(
        beta: f64,
        snr_profile: SnrProfile,
        actual_prior: Constellation,
        detector: DetectorSpec,
        channel_kind: ChannelKind,
    ) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidSpec(format!("load must be positive and finite, got {beta}")));
        }
        for (role, c) in [("actual", &actual_prior), ("postulated", detector.postulated_prior())] {
            if c.channel() != channel_kind {
                return Err(Error::InvalidSpec(format!(
                    "{role} prior `{}` does not live on the {channel_kind:?} channel",
                    c.label()
                )));
            }
        }
        if matches!(
            detector.preset(),
            DetectorPreset::IndividuallyOptimal | DetectorPreset::JointlyOptimal
        ) && !detector.postulated_prior().same_distribution(&actual_prior)
        {
            return Err(Error::InconsistentDetector(format!(
                "{:?} requires the postulated prior to equal the actual prior `{}`",
                detector.preset(),
                actual_prior.label()
            )));
        }
        Ok(SystemSpec {
            beta,
            snr_profile,
            actual_prior,
            detector,
            channel_kind,
        })
    }

    /// Channel kind taken from the actual prior.
    pub fn for_prior(beta: f64, snr_profile: SnrProfile, actual_prior: Constellation, detector: DetectorSpec) -> Result<Self> {
        let ch = actual_prior.channel();
        SystemSpec::new(beta, snr_profile, actual_prior, detector, ch)
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        SystemSpec::new(
            beta,
            self.snr_profile.clone(),
            self.actual_prior.clone(),
            self.detector.clone(),
            self.channel_kind,
        )
    }

    pub fn with_profile(&self, profile: SnrProfile) -> Self {
        SystemSpec {
            snr_profile: profile,
            ..self.clone()
        }
    }

    pub fn with_detector(&self, detector: DetectorSpec) -> Result<Self> {
        SystemSpec::new(
            self.beta,
            self.snr_profile.clone(),
            self.actual_prior.clone(),
            detector,
            self.channel_kind,
        )
    }

    fn dims(&self) -> f64 {
        self.channel_kind.dims() as f64
    }

    fn q_prior(&self) -> &Constellation {
        self.detector.postulated_prior()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Weight of the new iterate in the damped Picard update.
    pub damping: f64,
    pub max_picard: usize,
    pub max_newton: usize,
    /// Required residual of both equations.
    pub tol: f64,
    /// Number of log-spaced initial `eta` values in `[1e-3, 1]`.
    pub starts: usize,
    /// Two solutions closer than this in `eta` and (relatively) in `xi` are
    /// the same branch.
    pub dedup: f64,
    /// Grid size of the scalar scan used for the individually-optimal
    /// detector.
    pub io_grid: usize,
    pub quad: Quadrature,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            damping: 0.5,
            max_picard: 400,
            max_newton: 60,
            tol: 1e-10,
            starts: 12,
            dedup: 1e-6,
            io_grid: 400,
            quad: Quadrature::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Branch {
    pub eta: f64,
    /// `None` for the closed-form limits where `xi` is `0` or infinite.
    pub xi: Option<f64>,
    pub free_energy: Option<f64>,
    /// Joint-decoding spectral efficiency (nats per dimension); only for the
    /// individually-optimal detector.
    pub c_joint_nats: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    MatchedFilter,
    Decorrelator,
    Lmmse,
    GeneralLinear,
    Coupled,
    IndividuallyOptimal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointSolution {
    pub eta: f64,
    pub xi: Option<f64>,
    pub free_energy: Option<f64>,
    pub branches: Vec<Branch>,
    pub dominant_index: usize,
    pub iterations: usize,
    pub residual: f64,
    pub method: SolveMethod,
    /// Set when minimum free energy and minimum joint spectral efficiency
    /// pick different branches.
    pub tie_break_disagreement: bool,
}

impl FixedPointSolution {
    fn single(branch: Branch, method: SolveMethod, iterations: usize, residual: f64) -> Self {
        FixedPointSolution {
            eta: branch.eta,
            xi: branch.xi,
            free_energy: branch.free_energy,
            branches: vec![branch],
            dominant_index: 0,
            iterations,
            residual,
            method,
            tie_break_disagreement: false,
        }
    }

    pub fn dominant(&self) -> &Branch {
        &self.branches[self.dominant_index]
    }
}

fn postulated_sigma_sq(spec: &SystemSpec) -> Result<f64> {
    match spec.detector.noise() {
        PostulatedNoise::Finite(s) => Ok(s * s),
        PostulatedNoise::ZeroLimit if !spec.q_prior().is_gaussian() => Ok(0.0),
        other => Err(Error::InvalidSpec(format!(
            "coupled equations need a finite postulated noise level, got {other:?}"
        ))),
    }
}

/// `(E{snr E}, E{snr V})` over the SNR profile.
fn averaged_moments(eta: f64, xi: f64, spec: &SystemSpec, quad: &Quadrature) -> Result<(f64, f64)> {
    let mut a = 0.0;
    let mut b = 0.0;
    for atom in spec.snr_profile.atoms() {
        let p = ScalarParams::new(atom.snr, eta, xi)?;
        a += atom.weight * atom.snr * scalar_channel::mse(&p, &spec.actual_prior, spec.q_prior(), quad)?;
        b += atom.weight * atom.snr * scalar_channel::variance(&p, &spec.actual_prior, spec.q_prior(), quad)?;
    }
    Ok((a, b))
}

/// `(1/eta - 1 - beta E{snr E}, 1/xi - sigma^2 - beta E{snr V})`.
pub fn residuals(eta: f64, xi: f64, spec: &SystemSpec, quad: &Quadrature) -> Result<(f64, f64)> {
    let s2 = postulated_sigma_sq(spec)?;
    let (a, b) = averaged_moments(eta, xi, spec, quad)?;
    Ok((1.0 / eta - 1.0 - spec.beta * a, 1.0 / xi - s2 - spec.beta * b))
}

/// Free energy (nats) of a candidate `(eta, xi)`.
pub fn free_energy(eta: f64, xi: f64, spec: &SystemSpec, quad: &Quadrature) -> Result<f64> {
    use std::f64::consts::PI;
    let s2 = postulated_sigma_sq(spec)?;
    let beta = spec.beta;
    let mut cross = 0.0;
    for atom in spec.snr_profile.atoms() {
        let p = ScalarParams::new(atom.snr, eta, xi)?;
        cross += atom.weight * scalar_channel::cross_entropy(&p, &spec.actual_prior, spec.q_prior(), quad)?;
    }
    let f = match spec.channel_kind {
        ChannelKind::Real => {
            cross + ((xi - 1.0) - xi.ln()) / (2.0 * beta) - 0.5 * (2.0 * PI / xi).ln() - xi / (2.0 * eta)
                + s2 * xi * (eta - xi) / (2.0 * beta * eta)
                + (2.0 * PI).ln() / (2.0 * beta)
                + xi / (2.0 * beta * eta)
        }
        ChannelKind::Complex => {
            cross + ((xi - 1.0) - xi.ln()) / beta + (xi / PI).ln() - xi / eta + s2 * xi * (eta - xi) / (beta * eta)
                + (2.0 * PI).ln() / beta
                + xi / (beta * eta)
        }
    };
    Ok(f)
}

/// Joint-decoding spectral efficiency in nats per dimension at `eta`.
pub(crate) fn c_joint_nats(eta: f64, spec: &SystemSpec, quad: &Quadrature) -> Result<f64> {
    let mut sep = 0.0;
    for atom in spec.snr_profile.atoms() {
        sep += atom.weight * scalar_channel::mutual_info(eta * atom.snr, &spec.actual_prior, quad)?;
    }
    Ok(spec.beta * sep + 0.5 * spec.dims() * ((eta - 1.0) - eta.ln()))
}

/// Beyond this postulated inverse noise variance, quadrature failures are
/// read as a start drifting towards the hard-decision limit.
const XI_DRIFT: f64 = 30.0;

/// Solver state in log coordinates `(ln eta, ln xi)`.
struct Coupled<'a> {
    spec: &'a SystemSpec,
    s2: f64,
    quad: &'a Quadrature,
}

impl Coupled<'_> {
    /// Scaled residuals `1 - eta (1 + beta A)` and `1 - xi (s2 + beta B)`.
    fn g(&self, u: [f64; 2]) -> Result<[f64; 2]> {
        let (eta, xi) = (u[0].exp(), u[1].exp());
        let (a, b) = averaged_moments(eta, xi, self.spec, self.quad)?;
        Ok([
            1.0 - eta * (1.0 + self.spec.beta * a),
            1.0 - xi * (self.s2 + self.spec.beta * b),
        ])
    }

    fn raw(u: [f64; 2], g: [f64; 2]) -> f64 {
        (g[0] / u[0].exp()).abs().max((g[1] / u[1].exp()).abs())
    }

    /// Damped Picard iteration. `None` when the iterate runs off to an
    /// extreme `xi`, where no finite solution is being approached.
    fn picard(&self, eta0: f64, xi0: f64, opts: &SolverOptions) -> Result<Option<([f64; 2], usize)>> {
        let d = opts.damping;
        let (mut eta, mut xi) = (eta0, xi0);
        for it in 0..opts.max_picard {
            let (a, b) = match averaged_moments(eta, xi, self.spec, self.quad) {
                Ok(v) => v,
                Err(Error::Quadrature { .. }) if xi > XI_DRIFT => return Ok(None),
                Err(e) => return Err(e),
            };
            let en = 1.0 / (1.0 + self.spec.beta * a);
            let xn = 1.0 / (self.s2 + self.spec.beta * b);
            let (e2, x2) = ((1.0 - d) * eta + d * en, (1.0 - d) * xi + d * xn);
            let step = ((e2 - eta) / eta).abs().max(((x2 - xi) / xi).abs());
            eta = e2;
            xi = x2;
            if !(xi.is_finite() && xi > 1e-8 && xi < 1e8 && eta > 1e-12) {
                return Ok(None);
            }
            if step < 1e-9 {
                return Ok(Some(([eta.ln(), xi.ln()], it + 1)));
            }
        }
        Ok(Some(([eta.ln(), xi.ln()], opts.max_picard)))
    }

    /// Newton's method with a finite-difference Jacobian and backtracking.
    fn newton(&self, mut u: [f64; 2], opts: &SolverOptions) -> Result<(Option<[f64; 2]>, f64, usize)> {
        let mut g = self.g(u)?;
        let mut best = Self::raw(u, g);
        for it in 0..opts.max_newton {
            let r = Self::raw(u, g);
            best = best.min(r);
            if r <= opts.tol {
                return Ok((Some(u), r, it));
            }
            let h = 1e-7;
            let (g0, g1) = match (self.g([u[0] + h, u[1]]), self.g([u[0], u[1] + h])) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(Error::Quadrature { .. }), _) | (_, Err(Error::Quadrature { .. })) if u[1].exp() > XI_DRIFT => break,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            let j = [
                [(g0[0] - g[0]) / h, (g1[0] - g[0]) / h],
                [(g0[1] - g[1]) / h, (g1[1] - g[1]) / h],
            ];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if !det.is_finite() || det.abs() < 1e-300 {
                break;
            }
            let mut du = [
                -(j[1][1] * g[0] - j[0][1] * g[1]) / det,
                -(-j[1][0] * g[0] + j[0][0] * g[1]) / det,
            ];
            let len = du[0].abs().max(du[1].abs());
            if len > 1.0 {
                du = [du[0] / len, du[1] / len];
            }
            let norm = |g: [f64; 2]| g[0].abs() + g[1].abs();
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let cand = [(u[0] + t * du[0]).min(0.0), u[1] + t * du[1]];
                if cand[1].abs() < 18.0 {
                    if let Ok(gc) = self.g(cand) {
                        if norm(gc) < norm(g) {
                            u = cand;
                            g = gc;
                            accepted = true;
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let r = Self::raw(u, g);
        Ok(((r <= opts.tol).then_some(u), best.min(r), opts.max_newton))
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn is_duplicate(a: &Branch, eta: f64, xi: Option<f64>, tol: f64) -> bool {
    let same_xi = match (a.xi, xi) {
        (Some(x), Some(y)) => (x - y).abs() <= tol * x.abs().max(1.0),
        (None, None) => true,
        _ => false,
    };
    (a.eta - eta).abs() <= tol && same_xi
}

/// Index of the minimum of `key` with ties within `1e-9` going to larger
/// `eta`.
fn select(branches: &[Branch], key: impl Fn(&Branch) -> f64) -> usize {
    let mut best = 0;
    for (i, b) in branches.iter().enumerate().skip(1) {
        let (kb, kbest) = (key(b), key(&branches[best]));
        if kb < kbest - 1e-9 || ((kb - kbest).abs() <= 1e-9 && b.eta > branches[best].eta) {
            best = i;
        }
    }
    best
}

/// Solves the coupled equations from a multi-start grid.
///
/// Limit postulated noise levels are rejected, except the zero-noise limit
/// with a discrete postulated prior (the jointly optimal detector), which
/// has no closed form and is solved with `sigma^2 = 0`.
pub fn solve_coupled(spec: &SystemSpec, opts: &SolverOptions) -> Result<FixedPointSolution> {
    solve_coupled_from(spec, opts, &[])
}

/// [`solve_coupled`] with extra warm starts `(eta, xi)` tried before the
/// grid, used for continuation along sweeps.
pub fn solve_coupled_from(spec: &SystemSpec, opts: &SolverOptions, warm: &[(f64, f64)]) -> Result<FixedPointSolution> {
    let s2 = postulated_sigma_sq(spec)?;
    let sys = Coupled {
        spec,
        s2,
        quad: &opts.quad,
    };
    let xi_of = |eta: f64| if s2 > 1.0 { eta / s2 } else { eta };
    let starts: Vec<(f64, f64)> = warm
        .iter()
        .copied()
        .chain(log_grid(1e-3, 1.0, opts.starts).into_iter().map(|e| (e, xi_of(e))))
        .collect();

    let mut found: Vec<(Branch, usize, f64)> = Vec::new();
    let mut best_residual = f64::INFINITY;
    // Quadrature failures only matter if they are all we saw; otherwise they
    // come from starts drifting to extreme xi.
    let mut quad_error = None;
    let mut clean_starts = 0;
    let record = |u: [f64; 2], iters: usize, res: f64, found: &mut Vec<(Branch, usize, f64)>| {
        let (eta, xi) = (u[0].exp(), u[1].exp());
        if !found.iter().any(|(b, _, _)| is_duplicate(b, eta, Some(xi), opts.dedup)) {
            found.push((
                Branch {
                    eta,
                    xi: Some(xi),
                    free_energy: None,
                    c_joint_nats: None,
                },
                iters,
                res,
            ));
        }
    };
    for (eta0, xi0) in starts {
        let attempt = (|| -> Result<()> {
            if let Some((u, it)) = sys.picard(eta0, xi0, opts)? {
                let (root, res, nit) = sys.newton(u, opts)?;
                best_residual = best_residual.min(res);
                if let Some(u) = root {
                    record(u, it + nit, res, &mut found);
                }
            }
            // Newton straight from the start also reaches branches that
            // repel the Picard map.
            let (root, res, nit) = sys.newton([eta0.ln(), xi0.ln()], opts)?;
            best_residual = best_residual.min(res);
            if let Some(u) = root {
                record(u, nit, res, &mut found);
            }
            Ok(())
        })();
        match attempt {
            Err(e @ Error::Quadrature { .. }) => quad_error = Some(e),
            other => {
                other?;
                clean_starts += 1;
            }
        }
    }
    if found.is_empty() {
        return Err(match quad_error {
            Some(e) if clean_starts == 0 => e,
            _ => Error::NoConvergence { best_residual },
        });
    }
    found.sort_by(|a, b| b.0.eta.total_cmp(&a.0.eta));
    let mut branches = Vec::with_capacity(found.len());
    for (mut b, _, _) in found.iter().copied() {
        b.free_energy = Some(free_energy(b.eta, b.xi.unwrap(), spec, &opts.quad)?);
        branches.push(b);
    }
    let dominant_index = select(&branches, |b| b.free_energy.unwrap());
    let (_, iterations, residual) = found[dominant_index];
    let d = branches[dominant_index];
    Ok(FixedPointSolution {
        eta: d.eta,
        xi: d.xi,
        free_energy: d.free_energy,
        branches,
        dominant_index,
        iterations,
        residual,
        method: SolveMethod::Coupled,
        tie_break_disagreement: false,
    })
}

/// Scalar residual of the individually-optimal equation,
/// `1/eta - 1 - beta E{snr mmse(eta snr)}`.
pub fn io_residual(eta: f64, spec: &SystemSpec, quad: &Quadrature) -> Result<f64> {
    let mut s = 0.0;
    for atom in spec.snr_profile.atoms() {
        s += atom.weight * atom.snr * scalar_channel::mmse(eta * atom.snr, &spec.actual_prior, quad)?;
    }
    Ok(1.0 / eta - 1.0 - spec.beta * s)
}

/// Bisection in `ln eta` on a sign-changing bracket.
fn bisect(mut lo: f64, mut hi: f64, f_lo: f64, f: &impl Fn(f64) -> Result<f64>) -> Result<(f64, usize)> {
    let positive_lo = f_lo > 0.0;
    let mut n = 0;
    while hi / lo - 1.0 > 4.0 * f64::EPSILON && n < 200 {
        let m = (lo * hi).sqrt();
        let fm = f(m)?;
        n += 1;
        if fm == 0.0 {
            return Ok((m, n));
        }
        if (fm > 0.0) == positive_lo {
            lo = m;
        } else {
            hi = m;
        }
    }
    Ok(((lo * hi).sqrt(), n))
}

/// Golden-section minimization of `sign * f` on `[a, b]` (log scale).
fn golden_min(a: f64, b: f64, f: &impl Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (a.ln(), b.ln());
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c.exp())?, f(d.exp())?);
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c.exp())?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d.exp())?;
        }
    }
    let x = (0.5 * (a + b)).exp();
    Ok((x, f(x)?))
}

/// All roots of the individually-optimal equation in `(1e-4, 1]`.
pub fn io_roots(spec: &SystemSpec, opts: &SolverOptions) -> Result<(Vec<f64>, usize)> {
    let quad = &opts.quad;
    let f = |eta: f64| io_residual(eta, spec, quad);
    let grid = log_grid(1e-4, 1.0, opts.io_grid);
    let vals: Vec<f64> = grid.iter().map(|&e| f(e)).collect::<Result<_>>()?;
    let mut evals = grid.len();
    let mut roots = Vec::new();
    let push = |r: f64, roots: &mut Vec<f64>| {
        if !roots.iter().any(|&x: &f64| (x - r).abs() <= opts.dedup) {
            roots.push(r);
        }
    };
    for i in 0..grid.len() - 1 {
        if vals[i] == 0.0 {
            push(grid[i], &mut roots);
        } else if vals[i] * vals[i + 1] < 0.0 {
            let (r, n) = bisect(grid[i], grid[i + 1], vals[i], &f)?;
            evals += n;
            push(r, &mut roots);
        }
    }
    if *vals.last().unwrap() == 0.0 {
        push(1.0, &mut roots);
    }
    // A pair of roots inside one grid cell shows up as a local extremum of
    // the residual that approaches zero without crossing it.
    for i in 1..grid.len() - 1 {
        let (a, b, c) = (vals[i - 1], vals[i], vals[i + 1]);
        if a * b <= 0.0 || b * c <= 0.0 {
            continue;
        }
        let sign = b.signum();
        if sign * b <= sign * a && sign * b <= sign * c {
            let g = |e: f64| f(e).map(|v| sign * v);
            let (x, gx) = golden_min(grid[i - 1], grid[i + 1], &g)?;
            evals += 84;
            if gx < 0.0 {
                let (r1, n1) = bisect(grid[i - 1], x, a, &f)?;
                let (r2, n2) = bisect(x, grid[i + 1], sign * gx, &f)?;
                evals += n1 + n2;
                push(r1, &mut roots);
                push(r2, &mut roots);
            }
        }
    }
    roots.sort_by(|a, b| b.total_cmp(a));
    Ok((roots, evals))
}

/// Individually-optimal detector: scalar fixed point with `xi = eta`,
/// dominant branch by minimal joint spectral efficiency.
pub fn solve_io(spec: &SystemSpec, opts: &SolverOptions) -> Result<FixedPointSolution> {
    if spec.detector.preset() != DetectorPreset::IndividuallyOptimal {
        return Err(Error::InvalidSpec("solve_io needs the individually-optimal detector".into()));
    }
    let quad = &opts.quad;
    let (roots, evals) = io_roots(spec, opts)?;
    if roots.is_empty() {
        return Err(Error::NoConvergence { best_residual: f64::NAN });
    }
    let mut branches = Vec::with_capacity(roots.len());
    let mut residual: f64 = 0.0;
    for &eta in &roots {
        residual = residual.max(io_residual(eta, spec, quad)?.abs());
        branches.push(Branch {
            eta,
            xi: Some(eta),
            free_energy: Some(free_energy(eta, eta, spec, quad)?),
            c_joint_nats: Some(c_joint_nats(eta, spec, quad)?),
        });
    }
    let dominant_index = select(&branches, |b| b.c_joint_nats.unwrap());
    let by_f = select(&branches, |b| b.free_energy.unwrap());
    if by_f != dominant_index {
        log::warn!(
            "free energy selects eta = {} but joint spectral efficiency selects eta = {}",
            branches[by_f].eta,
            branches[dominant_index].eta
        );
    }
    let d = branches[dominant_index];
    Ok(FixedPointSolution {
        eta: d.eta,
        xi: d.xi,
        free_energy: d.free_energy,
        branches,
        dominant_index,
        iterations: evals,
        residual,
        method: SolveMethod::IndividuallyOptimal,
        tie_break_disagreement: by_f != dominant_index,
    })
}

/// `1 / (1 + beta E{snr})`.
pub fn matched_filter_eta(spec: &SystemSpec) -> f64 {
    1.0 / (1.0 + spec.beta * spec.snr_profile.mean())
}

/// Root of a strictly decreasing function on `(lo, hi)` by bisection.
fn bisect_decreasing(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..400 {
        let m = 0.5 * (lo + hi);
        if m <= lo || m >= hi {
            break;
        }
        if f(m) > 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}

/// Root of `1/xi = beta E{snr / (1 + xi snr)}` for `beta > 1`.
fn decorrelator_xi(spec: &SystemSpec) -> f64 {
    let beta = spec.beta;
    let prof = &spec.snr_profile;
    // xi (1/xi - beta E{snr/(1+xi snr)}) = 1 - beta E{xi snr/(1+xi snr)},
    // decreasing from 1 to 1 - beta < 0.
    let h = |xi: f64| 1.0 - beta * prof.expect(|s| xi * s / (1.0 + xi * s));
    let mut hi = 1.0;
    while h(hi) > 0.0 {
        hi *= 2.0;
    }
    bisect_decreasing(0.0, hi, h)
}

/// Decorrelator efficiency: `1 - beta` below unit load, from the `xi`
/// equation above it.
pub fn decorrelator_eta(spec: &SystemSpec) -> Result<f64> {
    let beta = spec.beta;
    if beta < 1.0 {
        Ok(1.0 - beta)
    } else if beta == 1.0 {
        Err(Error::SingularLoad)
    } else {
        let xi = decorrelator_xi(spec);
        let d = 1.0 + beta * spec.snr_profile.expect(|s| s / (1.0 + xi * s).powi(2));
        Ok(xi - xi / d)
    }
}

/// Tse–Hanly root of `1 - eta - beta E{eta snr / (1 + eta snr)}`.
pub fn lmmse_eta(spec: &SystemSpec) -> f64 {
    let beta = spec.beta;
    let prof = &spec.snr_profile;
    bisect_decreasing(0.0, 1.0, |eta| 1.0 - eta - beta * prof.expect(|s| eta * s / (1.0 + eta * s)))
}

/// Linear PME with a finite postulated noise level `sigma`: returns
/// `(eta, xi)`.
pub fn general_linear_eta(spec: &SystemSpec) -> Result<(f64, f64)> {
    let s2 = match spec.detector.noise() {
        PostulatedNoise::Finite(s) if spec.q_prior().is_gaussian() => s * s,
        _ => {
            return Err(Error::InvalidSpec(
                "general linear solution needs a gaussian postulated prior and finite noise".into(),
            ))
        }
    };
    let beta = spec.beta;
    let prof = &spec.snr_profile;
    let h = |xi: f64| 1.0 - s2 * xi - beta * prof.expect(|s| xi * s / (1.0 + xi * s));
    let xi = bisect_decreasing(0.0, 1.0 / s2, h);
    let eta = if s2 == 1.0 {
        xi
    } else {
        xi + xi * (s2 - 1.0) / (1.0 + beta * prof.expect(|s| s / (1.0 + xi * s).powi(2)))
    };
    Ok((eta, xi))
}

/// Smallest load at which the large-SNR coexistence equation
/// `tau mmse(tau) = 1 / beta` (binary input) has a solution.
pub fn coexistence_threshold(p_prior: &Constellation, quad: &Quadrature) -> Result<f64> {
    let component = match p_prior.channel() {
        ChannelKind::Real => p_prior.clone(),
        ChannelKind::Complex => p_prior
            .separable_component()
            .ok_or_else(|| Error::Unsupported(format!("coexistence threshold for `{}`", p_prior.label())))?,
    };
    if !component.same_distribution(&Constellation::standard(crate::constellation::StandardConstellation::Bpsk)) {
        return Err(Error::Unsupported(format!(
            "coexistence threshold is defined for bpsk or qpsk, got `{}`",
            p_prior.label()
        )));
    }
    let g = |tau: f64| scalar_channel::mmse(tau, &component, quad).map(|m| -tau * m);
    // Coarse scan for the peak of tau mmse(tau), then golden section.
    let grid = log_grid(1e-2, 50.0, 200);
    let vals: Vec<f64> = grid.iter().map(|&t| g(t)).collect::<Result<_>>()?;
    let i = (0..vals.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    let (_, peak) = golden_min(grid[i.saturating_sub(1)], grid[(i + 1).min(grid.len() - 1)], &g)?;
    let peak = -peak;
    // The equation is solvable iff beta * max_tau(tau mmse) >= 1.
    let exists = |beta: f64| beta * peak - 1.0 >= 0.0;
    let (mut lo, mut hi) = (0.0, 100.0);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if exists(m) {
            hi = m;
        } else {
            lo = m;
        }
    }
    Ok(hi)
}

/// Solves any system by routing limit presets to their closed forms.
pub fn solve(spec: &SystemSpec, opts: &SolverOptions) -> Result<FixedPointSolution> {
    solve_warm(spec, opts, &[])
}

fn solve_warm(spec: &SystemSpec, opts: &SolverOptions, warm: &[(f64, f64)]) -> Result<FixedPointSolution> {
    let gaussian_q = spec.q_prior().is_gaussian();
    let branch = |eta, xi| Branch {
        eta,
        xi,
        free_energy: None,
        c_joint_nats: None,
    };
    match (spec.detector.preset(), spec.detector.noise()) {
        (_, PostulatedNoise::InfiniteLimit) => Ok(FixedPointSolution::single(
            branch(matched_filter_eta(spec), None),
            SolveMethod::MatchedFilter,
            0,
            0.0,
        )),
        (_, PostulatedNoise::ZeroLimit) if gaussian_q => {
            let eta = decorrelator_eta(spec)?;
            let xi = (spec.beta > 1.0).then(|| decorrelator_xi(spec));
            Ok(FixedPointSolution::single(branch(eta, xi), SolveMethod::Decorrelator, 0, 0.0))
        }
        (DetectorPreset::IndividuallyOptimal, _) => solve_io(spec, opts),
        (_, PostulatedNoise::Finite(s)) if gaussian_q => {
            let (eta, xi, method) = if s == 1.0 {
                let eta = lmmse_eta(spec);
                (eta, eta, SolveMethod::Lmmse)
            } else {
                let (eta, xi) = general_linear_eta(spec)?;
                (eta, xi, SolveMethod::GeneralLinear)
            };
            let (r1, r2) = residuals(eta, xi, spec, &opts.quad)?;
            let mut b = branch(eta, Some(xi));
            b.free_energy = Some(free_energy(eta, xi, spec, &opts.quad)?);
            Ok(FixedPointSolution::single(b, method, 0, r1.abs().max(r2.abs())))
        }
        _ => solve_coupled_from(spec, opts, warm),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SnrDb,
    Beta,
}

/// The system at one sweep coordinate: the SNR axis rescales the profile
/// to the given mean (dB) and keeps its shape.
pub fn sweep_point(spec: &SystemSpec, axis: SweepAxis, value: f64) -> Result<SystemSpec> {
    match axis {
        SweepAxis::SnrDb => Ok(spec.with_profile(spec.snr_profile.scaled_to_mean_db(value))),
        SweepAxis::Beta => spec.with_beta(value),
    }
}

/// Solves along a sweep. Coupled nonlinear systems continue each branch
/// from the previous point and still run the fresh multi-start, so branch
/// births are detected.
pub fn sweep(spec: &SystemSpec, axis: SweepAxis, values: &[f64], opts: &SolverOptions) -> Vec<Result<FixedPointSolution>> {
    let mut out = Vec::with_capacity(values.len());
    let mut warm: Vec<(f64, f64)> = Vec::new();
    for &v in values {
        let r = sweep_point(spec, axis, v).and_then(|s| solve_warm(&s, opts, &warm));
        if let Ok(sol) = &r {
            warm = sol.branches.iter().filter_map(|b| b.xi.map(|x| (b.eta, x))).collect();
        }
        out.push(r);
    }
    out
}
