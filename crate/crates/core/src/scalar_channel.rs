//! Kernels of the equivalent single-user Gaussian channel
//! `Z = sqrt(snr) X + N / sqrt(eta)`.
//!
//! The actual channel has inverse noise variance `eta` and input law `p`;
//! the postulated one has inverse noise variance `xi` and prior `q`. For
//! complex channels `E|N|^2 = 1`, so each real component carries variance
//! `1 / (2 eta)`.
//!
//! Expectations over the channel output are taken component by component of
//! the input mixture: each constellation point contributes a Gaussian, and a
//! shifted Gauss–Hermite rule integrates against it. Gaussian priors use
//! closed forms wherever one exists. All logarithms are natural.

use crate::constellation::{norm_sq, ChannelKind, Constellation, Point};
use crate::error::{Error, Result};
use crate::quadrature::{Quadrature, QuadratureRule};

/// Parameters of the decoupled scalar channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarParams {
    pub snr: f64,
    pub eta: f64,
    pub xi: f64,
}

impl ScalarParams {
    pub fn new(snr: f64, eta: f64, xi: f64) -> Result<Self> {
        if !(snr > 0.0 && eta > 0.0 && xi > 0.0) || !(snr.is_finite() && eta.is_finite() && xi.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "scalar parameters must be positive and finite (snr={snr}, eta={eta}, xi={xi})"
            )));
        }
        Ok(ScalarParams { snr, eta, xi })
    }
}

/// `(1 or 2) * inverse variance / 2`: the Gaussian exponent is
/// `-kappa * |z - mean|^2`.
fn kappa(channel: ChannelKind, inv_var: f64) -> f64 {
    match channel {
        ChannelKind::Real => 0.5 * inv_var,
        ChannelKind::Complex => inv_var,
    }
}

/// Per-component standard deviation of `N / sqrt(inv_var)`.
fn comp_sd(channel: ChannelKind, inv_var: f64) -> f64 {
    (2.0 * kappa(channel, inv_var)).sqrt().recip()
}

/// `ln` of the Gaussian density normalization.
fn log_norm(channel: ChannelKind, inv_var: f64) -> f64 {
    let k = kappa(channel, inv_var);
    channel.dims() as f64 * 0.5 * (k / std::f64::consts::PI).ln()
}

fn dist_sq(a: &Point, b: &Point) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    d0 * d0 + d1 * d1
}

/// Discrete prior with its points scaled by `sqrt(snr)`.
struct Scaled {
    points: Vec<Point>,
    scaled: Vec<Point>,
    probs: Vec<f64>,
    logp: Vec<f64>,
}

impl Scaled {
    fn new(c: &Constellation, snr: f64) -> Self {
        let a = snr.sqrt();
        let keep: Vec<usize> = (0..c.len()).filter(|&i| c.probs()[i] > 0.0).collect();
        Scaled {
            points: keep.iter().map(|&i| c.points()[i]).collect(),
            scaled: keep
                .iter()
                .map(|&i| [a * c.points()[i][0], a * c.points()[i][1]])
                .collect(),
            probs: keep.iter().map(|&i| c.probs()[i]).collect(),
            logp: keep.iter().map(|&i| c.probs()[i].ln()).collect(),
        }
    }

    /// `ln Σ_i p_i exp(-k |z - a_i|^2)`.
    #[inline]
    fn log_mix(&self, k: f64, z: &Point) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for (a, lp) in self.scaled.iter().zip(&self.logp) {
            m = m.max(lp - k * dist_sq(z, a));
        }
        let s: f64 = self
            .scaled
            .iter()
            .zip(&self.logp)
            .map(|(a, lp)| (lp - k * dist_sq(z, a) - m).exp())
            .sum();
        m + s.ln()
    }

    /// Posterior mean and second moment of the (unscaled) symbol given `z`.
    #[inline]
    fn posterior(&self, k: f64, z: &Point) -> (Point, f64) {
        let mut m = f64::NEG_INFINITY;
        for (a, lp) in self.scaled.iter().zip(&self.logp) {
            m = m.max(lp - k * dist_sq(z, a));
        }
        let (mut s, mut m0, mut m1, mut s2) = (0.0, 0.0, 0.0, 0.0);
        for ((a, lp), x) in self.scaled.iter().zip(&self.logp).zip(&self.points) {
            let w = (lp - k * dist_sq(z, a) - m).exp();
            s += w;
            m0 += w * x[0];
            m1 += w * x[1];
            s2 += w * norm_sq(x);
        }
        ([m0 / s, m1 / s], s2 / s)
    }
}

/// Either a discrete prior or the analytic Gaussian one.
enum Prior {
    Discrete(Scaled),
    Gaussian,
}

impl Prior {
    fn new(c: &Constellation, snr: f64) -> Self {
        if c.is_gaussian() {
            Prior::Gaussian
        } else {
            Prior::Discrete(Scaled::new(c, snr))
        }
    }

    /// Posterior mean and second moment of `X` under this prior given `z`.
    #[inline]
    fn posterior(&self, channel: ChannelKind, snr: f64, inv_var: f64, z: &Point) -> (Point, f64) {
        match self {
            Prior::Discrete(s) => s.posterior(kappa(channel, inv_var), z),
            Prior::Gaussian => {
                let g = inv_var * snr.sqrt() / (1.0 + inv_var * snr);
                let m = [g * z[0], g * z[1]];
                (m, norm_sq(&m) + 1.0 / (1.0 + inv_var * snr))
            }
        }
    }
}

fn check_channels(p: &Constellation, q: &Constellation) -> Result<ChannelKind> {
    if p.channel() != q.channel() {
        return Err(Error::InvalidSpec(format!(
            "actual prior `{}` and postulated prior `{}` live on different channels",
            p.label(),
            q.label()
        )));
    }
    Ok(p.channel())
}

/// Real component of a separable complex prior (Gaussian or product
/// constellation).
fn component(c: &Constellation) -> Option<Constellation> {
    match c.kind() {
        crate::constellation::ConstellationKind::GaussianComplex => {
            Some(Constellation::gaussian(ChannelKind::Real))
        }
        crate::constellation::ConstellationKind::DiscreteComplex => c.separable_component(),
        _ => None,
    }
}

fn separable_pair(
    quad: &Quadrature,
    p: &Constellation,
    q: &Constellation,
) -> Option<(Constellation, Constellation)> {
    if !quad.separable || p.channel() != ChannelKind::Complex {
        return None;
    }
    // Two Gaussians already have closed forms.
    if p.is_gaussian() && q.is_gaussian() {
        return None;
    }
    Some((component(p)?, component(q)?))
}

/// `E_p f(X0, Z)` where `Z = sqrt(snr) X0 + N / sqrt(eta)` and `p` is
/// discrete.
#[inline]
fn expect_joint(
    rule: &QuadratureRule,
    p: &Scaled,
    channel: ChannelKind,
    eta: f64,
    mut f: impl FnMut(&Point, &Point) -> f64,
) -> f64 {
    let sd = comp_sd(channel, eta);
    p.points
        .iter()
        .zip(&p.scaled)
        .zip(&p.probs)
        .map(|((x, a), w)| {
            w * rule.expect(|t| {
                let z = [a[0] + sd * t[0], a[1] + sd * t[1]];
                f(x, &z)
            })
        })
        .sum()
}

/// `E g(Z)` for `Z = sqrt(snr) X0 + N / sqrt(eta)`, `X0 ~ p`.
#[inline]
fn expect_output(
    rule: &QuadratureRule,
    p: &Prior,
    channel: ChannelKind,
    snr: f64,
    eta: f64,
    mut g: impl FnMut(&Point) -> f64,
) -> f64 {
    match p {
        Prior::Discrete(s) => expect_joint(rule, s, channel, eta, |_, z| g(z)),
        Prior::Gaussian => {
            // Z is Gaussian with per-component variance (snr + 1/eta) / dims.
            let inv = 1.0 / (snr + 1.0 / eta);
            let sd = comp_sd(channel, inv);
            rule.expect(|t| g(&[sd * t[0], sd * t[1]]))
        }
    }
}

/// `q_i(z, snr; xi) = E_q{ X^i q(z | X, snr; xi) }` for `i ∈ {0, 1, 2}`.
///
/// Scalar moments (`i = 0, 2`) come back in the first coordinate; the first
/// moment of a complex prior is the vector `[re, im]`. The second moment
/// uses `|X|^2`.
pub fn moment_fn_q(order: u32, z: Point, params: &ScalarParams, q_prior: &Constellation) -> Result<Point> {
    moment(order, z, params.snr, params.xi, q_prior)
}

/// Same as [`moment_fn_q`] with the actual inverse noise variance `eta`.
pub fn moment_fn_p(order: u32, z: Point, params: &ScalarParams, p_prior: &Constellation) -> Result<Point> {
    moment(order, z, params.snr, params.eta, p_prior)
}

fn moment(order: u32, z: Point, snr: f64, inv_var: f64, prior: &Constellation) -> Result<Point> {
    if order > 2 {
        return Err(Error::UnsupportedMoment(order));
    }
    let channel = prior.channel();
    let z = match channel {
        ChannelKind::Real => [z[0], 0.0],
        ChannelKind::Complex => z,
    };
    if prior.is_gaussian() {
        // Marginal is Gaussian with variance snr + 1/inv_var (per complex
        // symbol for the complex channel).
        let marg = 1.0 / (snr + 1.0 / inv_var);
        let q0 = (log_norm(channel, marg) - kappa(channel, marg) * norm_sq(&z)).exp();
        let (m, s2) = Prior::Gaussian.posterior(channel, snr, inv_var, &z);
        return Ok(match order {
            0 => [q0, 0.0],
            1 => [q0 * m[0], q0 * m[1]],
            _ => [q0 * s2, 0.0],
        });
    }
    let s = Scaled::new(prior, snr);
    let k = kappa(channel, inv_var);
    let ln = log_norm(channel, inv_var);
    let mut out = [0.0, 0.0];
    for ((x, a), w) in s.points.iter().zip(&s.scaled).zip(&s.probs) {
        let dens = w * (ln - k * dist_sq(&z, a)).exp();
        match order {
            0 => out[0] += dens,
            1 => {
                out[0] += dens * x[0];
                out[1] += dens * x[1];
            }
            _ => out[0] += dens * norm_sq(x),
        }
    }
    Ok(out)
}

/// The single-user PME `q_1 / q_0`, evaluated in the log domain.
pub fn decision(z: Point, params: &ScalarParams, q_prior: &Constellation) -> Point {
    let channel = q_prior.channel();
    let z = match channel {
        ChannelKind::Real => [z[0], 0.0],
        ChannelKind::Complex => z,
    };
    Prior::new(q_prior, params.snr)
        .posterior(channel, params.snr, params.xi, &z)
        .0
}

/// Inverts the decision function.
///
/// Real constellations use a safeguarded monotone bisection; Gaussian priors
/// invert the linear attenuator; separable complex constellations are
/// inverted per component. Other complex constellations are unsupported.
pub fn decision_inverse(v: Point, params: &ScalarParams, q_prior: &Constellation) -> Result<Point> {
    let sqrt_snr = params.snr.sqrt();
    if q_prior.is_gaussian() {
        let g = params.xi * sqrt_snr / (1.0 + params.xi * params.snr);
        return Ok(match q_prior.channel() {
            ChannelKind::Real => [v[0] / g, 0.0],
            ChannelKind::Complex => [v[0] / g, v[1] / g],
        });
    }
    match q_prior.channel() {
        ChannelKind::Real => Ok([invert_real(v[0], params, q_prior)?, 0.0]),
        ChannelKind::Complex => {
            let comp = q_prior.separable_component().ok_or_else(|| {
                Error::Unsupported(format!(
                    "decision inverse for non-separable complex constellation `{}`",
                    q_prior.label()
                ))
            })?;
            let s = std::f64::consts::SQRT_2;
            let re = invert_real(v[0] * s, params, &comp)? / s;
            let im = invert_real(v[1] * s, params, &comp)? / s;
            Ok([re, im])
        }
    }
}

fn invert_real(v: f64, params: &ScalarParams, q: &Constellation) -> Result<f64> {
    let (lo, hi) = q.real_range();
    if !(v > lo && v < hi) {
        return Err(Error::OutOfDomain { value: v, lo, hi });
    }
    let scaled = Scaled::new(q, params.snr);
    let k = kappa(ChannelKind::Real, params.xi);
    let d = |z: f64| scaled.posterior(k, &[z, 0.0]).0[0];

    // Bracket the root by geometric expansion.
    let mut a = -1.0;
    let mut b = 1.0;
    while d(a) > v {
        a *= 2.0;
        if a < -1e300 {
            return Err(Error::OutOfDomain { value: v, lo, hi });
        }
    }
    while d(b) < v {
        b *= 2.0;
        if b > 1e300 {
            return Err(Error::OutOfDomain { value: v, lo, hi });
        }
    }
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..2000 {
        let m = 0.5 * (a + b);
        let dm = d(m);
        let err = (dm - v).abs();
        if err < best.0 {
            best = (err, m);
        }
        // Run to the resolution of f64 in z; a tolerance in v would lose
        // accuracy where the decision function is flat.
        if err == 0.0 || m == a || m == b {
            break;
        }
        if dm < v {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(best.1)
}

/// Mean-square error `E |X0 - <X>_q|^2` of the postulated PME on the actual
/// channel.
pub fn mse(params: &ScalarParams, p_prior: &Constellation, q_prior: &Constellation, quad: &Quadrature) -> Result<f64> {
    let channel = check_channels(p_prior, q_prior)?;
    let ScalarParams { snr, eta, xi } = *params;
    if q_prior.is_gaussian() {
        return Ok((eta + xi * xi * snr) / (eta * (1.0 + xi * snr).powi(2)));
    }
    if let Some((pc, qc)) = separable_pair(quad, p_prior, q_prior) {
        return mse(params, &pc, &qc, quad);
    }
    let q = Prior::new(q_prior, snr);
    let dims = channel.dims();
    match Prior::new(p_prior, snr) {
        Prior::Discrete(p) => quad.converge("mse", dims, |rule| {
            expect_joint(rule, &p, channel, eta, |x, z| {
                let m = q.posterior(channel, snr, xi, z).0;
                dist_sq(x, &m)
            })
        }),
        Prior::Gaussian => {
            let post_var = 1.0 / (1.0 + eta * snr);
            quad.converge("mse", dims, |rule| {
                expect_output(rule, &Prior::Gaussian, channel, snr, eta, |z| {
                    let mp = Prior::Gaussian.posterior(channel, snr, eta, z).0;
                    let mq = q.posterior(channel, snr, xi, z).0;
                    post_var + dist_sq(&mp, &mq)
                })
            })
        }
    }
}

/// Variance of the retrochannel output `E |X - <X>_q|^2`.
pub fn variance(params: &ScalarParams, p_prior: &Constellation, q_prior: &Constellation, quad: &Quadrature) -> Result<f64> {
    let channel = check_channels(p_prior, q_prior)?;
    let ScalarParams { snr, eta, xi } = *params;
    if q_prior.is_gaussian() {
        return Ok(1.0 / (1.0 + xi * snr));
    }
    if let Some((pc, qc)) = separable_pair(quad, p_prior, q_prior) {
        return variance(params, &pc, &qc, quad);
    }
    let q = Prior::new(q_prior, snr);
    let p = Prior::new(p_prior, snr);
    quad.converge("variance", channel.dims(), |rule| {
        expect_output(rule, &p, channel, snr, eta, |z| {
            let (m, s2) = q.posterior(channel, snr, xi, z);
            (s2 - norm_sq(&m)).max(0.0)
        })
    })
}

/// Minimum mean-square error at effective SNR `gamma`, computed as
/// `1 - E |E[X | Z]|^2`.
pub fn mmse(gamma: f64, p_prior: &Constellation, quad: &Quadrature) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidSpec(format!("gamma must be non-negative, got {gamma}")));
    }
    if p_prior.is_gaussian() {
        return Ok(1.0 / (1.0 + gamma));
    }
    if gamma == 0.0 {
        return Ok(1.0);
    }
    if quad.separable {
        if let Some(pc) = component(p_prior) {
            return mmse(gamma, &pc, quad);
        }
    }
    let channel = p_prior.channel();
    let p = Prior::new(p_prior, gamma);
    let v = quad.converge("mmse", channel.dims(), |rule| {
        1.0 - expect_output(rule, &p, channel, gamma, 1.0, |z| {
            norm_sq(&p.posterior(channel, gamma, 1.0, z).0)
        })
    })?;
    Ok(v.clamp(0.0, 1.0))
}

/// Input–output mutual information (nats) of the scalar channel at
/// effective SNR `gamma`.
pub fn mutual_info(gamma: f64, p_prior: &Constellation, quad: &Quadrature) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidSpec(format!("gamma must be non-negative, got {gamma}")));
    }
    let channel = p_prior.channel();
    if p_prior.is_gaussian() {
        return Ok(match channel {
            ChannelKind::Real => 0.5 * gamma.ln_1p(),
            ChannelKind::Complex => gamma.ln_1p(),
        });
    }
    if gamma == 0.0 {
        return Ok(0.0);
    }
    if quad.separable {
        if let Some(pc) = component(p_prior) {
            return Ok(2.0 * mutual_info(gamma, &pc, quad)?);
        }
    }
    let p = Scaled::new(p_prior, gamma);
    let k = kappa(channel, 1.0);
    let v = quad.converge("mutual information", channel.dims(), |rule| {
        let sd = comp_sd(channel, 1.0);
        p.scaled
            .iter()
            .zip(&p.probs)
            .map(|(a, w)| {
                w * rule.expect(|t| {
                    let z = [a[0] + sd * t[0], a[1] + sd * t[1]];
                    -k * dist_sq(&z, a) - p.log_mix(k, &z)
                })
            })
            .sum()
    })?;
    Ok(v.clamp(0.0, p_prior.entropy()))
}

/// `-E ∫ p_0(z) ln q_0(z) dz` at one SNR, the data term of the free energy.
pub fn cross_entropy(params: &ScalarParams, p_prior: &Constellation, q_prior: &Constellation, quad: &Quadrature) -> Result<f64> {
    let channel = check_channels(p_prior, q_prior)?;
    let ScalarParams { snr, eta, xi } = *params;
    if q_prior.is_gaussian() {
        // q_0 is Gaussian with variance snr + 1/xi; E|Z|^2 = snr + 1/eta.
        let vq = snr + 1.0 / xi;
        let ez2 = snr + 1.0 / eta;
        return Ok(match channel {
            ChannelKind::Real => 0.5 * (2.0 * std::f64::consts::PI * vq).ln() + ez2 / (2.0 * vq),
            ChannelKind::Complex => (std::f64::consts::PI * vq).ln() + ez2 / vq,
        });
    }
    if let Some((pc, qc)) = separable_pair(quad, p_prior, q_prior) {
        return Ok(2.0 * cross_entropy(params, &pc, &qc, quad)? - std::f64::consts::LN_2);
    }
    let q = Scaled::new(q_prior, snr);
    let p = Prior::new(p_prior, snr);
    let k = kappa(channel, xi);
    let ln = log_norm(channel, xi);
    quad.converge("cross entropy", channel.dims(), |rule| {
        -expect_output(rule, &p, channel, snr, eta, |z| ln + q.log_mix(k, z))
    })
}

/// Central finite difference of [`mutual_info`] next to `mmse / 2` (nats),
/// for checking `dI/dgamma = mmse / 2` (per real dimension; the complex
/// channel carries twice the derivative of a real one).
pub fn imm_derivative_check(gamma: f64, p_prior: &Constellation, quad: &Quadrature) -> Result<(f64, f64)> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidSpec("gamma must be positive".into()));
    }
    let h = 1e-4_f64.min(gamma / 2.0);
    let di = (mutual_info(gamma + h, p_prior, quad)? - mutual_info(gamma - h, p_prior, quad)?) / (2.0 * h);
    let dims = p_prior.channel().dims() as f64;
    Ok((di / dims, 0.5 * mmse(gamma, p_prior, quad)?))
}
