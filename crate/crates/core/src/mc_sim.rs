//! Finite-size Monte Carlo for `Y = S X + N`: random systems, the actual
//! detectors, recovery of the hidden Gaussian statistic and comparison with
//! the decoupled single-user prediction.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constellation::{linear_to_db, norm_sq, ChannelKind, Constellation, DetectorSpec, Point, PostulatedNoise, SnrProfile};
use crate::error::{Error, Result};
use crate::replica_solver::{FixedPointSolution, SystemSpec};
use crate::scalar_channel::{self, ScalarParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChipLaw {
    #[default]
    BinaryPm1,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub users: usize,
    pub spreading: usize,
    pub snr_profile: SnrProfile,
    pub prior: Constellation,
    pub detector: DetectorSpec,
    pub chip_law: ChipLaw,
    pub trials: usize,
    pub seed: u64,
    /// Largest user count for exact posterior enumeration; `None` picks the
    /// default for the alphabet size.
    pub enumeration_cap: Option<usize>,
}

impl McConfig {
    pub fn new(users: usize, spreading: usize, snr_profile: SnrProfile, prior: Constellation, detector: DetectorSpec) -> Self {
        McConfig {
            users,
            spreading,
            snr_profile,
            prior,
            detector,
            chip_law: ChipLaw::default(),
            trials: 1000,
            seed: 0,
            enumeration_cap: None,
        }
    }

    pub fn channel(&self) -> ChannelKind {
        self.prior.channel()
    }

    pub fn beta(&self) -> f64 {
        self.users as f64 / self.spreading as f64
    }

    /// Per-user SNRs (fixed across trials).
    pub fn snrs(&self) -> Vec<f64> {
        self.snr_profile.assign(self.users)
    }

    /// Whether detection enumerates the posterior over symbol vectors.
    pub fn needs_enumeration(&self) -> bool {
        !self.detector.postulated_prior().is_gaussian() && self.detector.noise() != PostulatedNoise::InfiniteLimit
    }

    /// 12 users for binary alphabets, 10 for four points, otherwise as many
    /// users as fit in `2^24` states.
    pub fn default_cap(&self) -> usize {
        match self.detector.postulated_prior().len() {
            0..=2 => 12,
            3..=4 => 10,
            m => (24.0 / (m as f64).log2()).floor() as usize,
        }
    }

    pub fn cap(&self) -> usize {
        self.enumeration_cap.unwrap_or_else(|| self.default_cap())
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.spreading == 0 || self.trials == 0 {
            return Err(Error::InvalidSpec("users, spreading and trials must be at least 1".into()));
        }
        if self.needs_enumeration() && self.users > self.cap() {
            return Err(Error::EnumerationCap {
                users: self.users,
                cap: self.cap(),
            });
        }
        self.system_spec().map(|_| ())
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        SystemSpec::for_prior(self.beta(), self.snr_profile.clone(), self.prior.clone(), self.detector.clone())
    }
}

/// One realization. `a` is the real-equivalent spreading matrix with the
/// amplitudes `sqrt(snr_k)` folded into the columns: `L x K` for real
/// channels, `2L x 2K` for complex ones (rows: real then imaginary parts;
/// columns `2k`, `2k + 1` multiply the real and imaginary part of `x_k`).
#[derive(Debug, Clone, PartialEq)]
pub struct McSystem {
    pub channel: ChannelKind,
    pub a: DMatrix<f64>,
    pub x0: Vec<Point>,
    pub y: DVector<f64>,
    pub snrs: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Role {
    Chips = 0,
    Symbols = 1,
    Noise = 2,
}

fn rng_for(seed: u64, trial: u64, role: Role) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_mul(4) + role as u64);
    rng
}

fn draw_symbol(prior: &Constellation, rng: &mut ChaCha20Rng) -> Point {
    if prior.is_gaussian() {
        return match prior.channel() {
            ChannelKind::Real => [rng.sample(StandardNormal), 0.0],
            ChannelKind::Complex => {
                let h = std::f64::consts::FRAC_1_SQRT_2;
                [h * rng.sample::<f64, _>(StandardNormal), h * rng.sample::<f64, _>(StandardNormal)]
            }
        };
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (p, x) in prior.probs().iter().zip(prior.points()) {
        acc += p;
        if u < acc {
            return *x;
        }
    }
    *prior.points().last().unwrap()
}

fn draw_chip(law: ChipLaw, rng: &mut ChaCha20Rng) -> f64 {
    match law {
        ChipLaw::BinaryPm1 => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        ChipLaw::Gaussian => rng.sample(StandardNormal),
    }
}

fn to_vec(channel: ChannelKind, xs: &[Point]) -> DVector<f64> {
    match channel {
        ChannelKind::Real => DVector::from_iterator(xs.len(), xs.iter().map(|x| x[0])),
        ChannelKind::Complex => DVector::from_iterator(2 * xs.len(), xs.iter().flat_map(|x| [x[0], x[1]])),
    }
}

fn from_vec(channel: ChannelKind, v: &DVector<f64>) -> Vec<Point> {
    match channel {
        ChannelKind::Real => v.iter().map(|&r| [r, 0.0]).collect(),
        ChannelKind::Complex => v.as_slice().chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
    }
}

/// Deterministic realization for `(config.seed, trial)`.
pub fn generate_system(config: &McConfig, trial: u64) -> McSystem {
    let (k, l) = (config.users, config.spreading);
    let snrs = config.snrs();
    let channel = config.channel();
    let scale = 1.0 / (l as f64).sqrt();

    let mut chips = rng_for(config.seed, trial, Role::Chips);
    let a = match channel {
        ChannelKind::Real => {
            let mut a = DMatrix::zeros(l, k);
            for j in 0..k {
                let amp = snrs[j].sqrt() * scale;
                for i in 0..l {
                    a[(i, j)] = amp * draw_chip(config.chip_law, &mut chips);
                }
            }
            a
        }
        ChannelKind::Complex => {
            let mut a = DMatrix::zeros(2 * l, 2 * k);
            let h = std::f64::consts::FRAC_1_SQRT_2;
            for j in 0..k {
                let amp = snrs[j].sqrt() * scale * h;
                for i in 0..l {
                    let re = amp * draw_chip(config.chip_law, &mut chips);
                    let im = amp * draw_chip(config.chip_law, &mut chips);
                    a[(i, 2 * j)] = re;
                    a[(l + i, 2 * j)] = im;
                    a[(i, 2 * j + 1)] = -im;
                    a[(l + i, 2 * j + 1)] = re;
                }
            }
            a
        }
    };

    let mut sym = rng_for(config.seed, trial, Role::Symbols);
    let x0: Vec<Point> = (0..k).map(|_| draw_symbol(&config.prior, &mut sym)).collect();

    let mut noise = rng_for(config.seed, trial, Role::Noise);
    let nsd = match channel {
        ChannelKind::Real => 1.0,
        ChannelKind::Complex => std::f64::consts::FRAC_1_SQRT_2,
    };
    let n = DVector::from_fn(a.nrows(), |_, _| nsd * noise.sample::<f64, _>(StandardNormal));
    let y = &a * to_vec(channel, &x0) + n;
    McSystem { channel, a, x0, y, snrs }
}

/// Linear PME `[A^T A + sigma^2 I]^{-1} A^T y`, with the matched filter
/// (`A^T y`) and the decorrelator (pseudo-inverse) as limits.
pub fn detect_linear(sys: &McSystem, noise: PostulatedNoise) -> Result<Vec<Point>> {
    let a = &sys.a;
    let v = match noise {
        PostulatedNoise::InfiniteLimit => a.tr_mul(&sys.y),
        PostulatedNoise::Finite(s) => {
            let mut g = a.tr_mul(a);
            for i in 0..g.nrows() {
                g[(i, i)] += s * s;
            }
            let chol = g
                .cholesky()
                .ok_or_else(|| Error::Singular(format!("Gram matrix not positive definite at sigma = {s}")))?;
            chol.solve(&a.tr_mul(&sys.y))
        }
        PostulatedNoise::ZeroLimit => {
            let svd = a.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let pinv = svd.pseudo_inverse(1e-10 * smax).map_err(|e| Error::Singular(e.to_string()))?;
            pinv * &sys.y
        }
    };
    Ok(from_vec(sys.channel, &v))
}

/// Users of one enumeration group and the tables over its joint states.
struct Group {
    users: Vec<usize>,
    states: usize,
    /// Row `s`: the group's noiseless contribution `Σ_k u_k(x_k)`.
    signal: DMatrix<f64>,
    /// `(‖U‖² - 2 yᵀU) / (2 s²) - Σ ln q(x_k)` per state.
    cost: Vec<f64>,
}

impl Group {
    fn symbol(&self, state: usize, pos: usize, m: usize) -> usize {
        (state / m.pow(pos as u32)) % m
    }
}

/// Exact posterior-mean detection over a discrete postulated prior `q` with
/// postulated noise variance `sigma_sq` per complex (or real) chip. With
/// `sigma_sq = None` (the zero-noise limit) returns the vector minimizing
/// `‖y - A x‖`.
pub fn detect_exact(sys: &McSystem, q: &Constellation, sigma_sq: Option<f64>, cap: usize) -> Result<Vec<Point>> {
    let k = sys.x0.len();
    if k > cap {
        return Err(Error::EnumerationCap { users: k, cap });
    }
    if q.is_gaussian() || q.channel() != sys.channel {
        return Err(Error::InvalidSpec("exact detection needs a discrete prior on the system's channel".into()));
    }
    let alphabet: Vec<(Point, f64)> = q
        .points()
        .iter()
        .zip(q.probs())
        .filter(|(_, &p)| p > 0.0)
        .map(|(x, &p)| (*x, p.ln()))
        .collect();
    let m = alphabet.len();
    // Energy unit 2 s^2, with s^2 the noise variance per real dimension.
    let unit = match sigma_sq {
        Some(s2) => {
            2.0 * match sys.channel {
                ChannelKind::Real => s2,
                ChannelKind::Complex => 0.5 * s2,
            }
        }
        None => 1.0,
    };
    let use_prior = sigma_sq.is_some();
    let rows = sys.a.nrows();

    // u_k(x) for every user and symbol.
    let contribution = |user: usize, x: &Point| -> DVector<f64> {
        match sys.channel {
            ChannelKind::Real => sys.a.column(user) * x[0],
            ChannelKind::Complex => sys.a.column(2 * user) * x[0] + sys.a.column(2 * user + 1) * x[1],
        }
    };
    let sizes = {
        let kc = k.div_ceil(3);
        let kb = (k - kc).div_ceil(2);
        [k - kc - kb, kb, kc]
    };
    let mut next = 0;
    let groups: Vec<Group> = sizes
        .iter()
        .map(|&n| {
            let users: Vec<usize> = (next..next + n).collect();
            next += n;
            let states = m.pow(n as u32);
            let mut signal = DMatrix::zeros(states, rows);
            let mut cost = vec![0.0; states];
            let per_user: Vec<Vec<DVector<f64>>> = users
                .iter()
                .map(|&u| alphabet.iter().map(|(x, _)| contribution(u, x)).collect())
                .collect();
            for s in 0..states {
                let mut sig = DVector::zeros(rows);
                let mut lp = 0.0;
                let mut rem = s;
                for (pos, _) in users.iter().enumerate() {
                    let j = rem % m;
                    rem /= m;
                    sig += &per_user[pos][j];
                    lp += alphabet[j].1;
                }
                cost[s] = (sig.norm_squared() - 2.0 * sys.y.dot(&sig)) / unit - if use_prior { lp } else { 0.0 };
                signal.set_row(s, &sig.transpose());
            }
            Group {
                users,
                states,
                signal,
                cost,
            }
        })
        .collect();
    let [ga, gb, gc] = [&groups[0], &groups[1], &groups[2]];
    // Cross terms 2 U_g U_hᵀ / unit, row-major by the outer group.
    let cross = |g: &Group, h: &Group| -> DMatrix<f64> { (&g.signal * h.signal.transpose()) * (2.0 / unit) };
    let xab = cross(ga, gb);
    let xac = cross(ga, gc);
    let xbc = cross(gb, gc);
    // Contiguous rows over the inner group.
    let rows_of = |x: &DMatrix<f64>| -> Vec<Vec<f64>> { (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect() };
    let (rac, rbc) = (rows_of(&xac), rows_of(&xbc));

    let decode = |g: &Group, state: usize, out: &mut Vec<Point>| {
        for (pos, &u) in g.users.iter().enumerate() {
            out[u] = alphabet[g.symbol(state, pos, m)].0;
        }
    };

    if sigma_sq.is_none() {
        let mut best = (f64::INFINITY, 0, 0, 0);
        for sa in 0..ga.states {
            for sb in 0..gb.states {
                let base = ga.cost[sa] + gb.cost[sb] + xab[(sa, sb)];
                let (ra, rb) = (&rac[sa], &rbc[sb]);
                for sc in 0..gc.states {
                    let e = base + gc.cost[sc] + ra[sc] + rb[sc];
                    if e < best.0 {
                        best = (e, sa, sb, sc);
                    }
                }
            }
        }
        let mut out = vec![[0.0, 0.0]; k];
        decode(ga, best.1, &mut out);
        decode(gb, best.2, &mut out);
        decode(gc, best.3, &mut out);
        return Ok(out);
    }

    // Posterior weights exp(-cost) factor into per-table exponentials
    // normalised by their row minima, so the inner loop is exp-free.
    let min_of = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max_of = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_c = min_of(&gc.cost);
    let mac: Vec<f64> = rac.iter().map(|r| min_of(r)).collect();
    let mbc: Vec<f64> = rbc.iter().map(|r| min_of(r)).collect();
    let spread = max_of(&gc.cost) - min_c
        + rac.iter().zip(&mac).map(|(r, m)| max_of(r) - m).fold(0.0, f64::max)
        + rbc.iter().zip(&mbc).map(|(r, m)| max_of(r) - m).fold(0.0, f64::max);

    let mut wa = vec![0.0; ga.states];
    let mut wb = vec![0.0; gb.states];
    let mut wc = vec![0.0; gc.states];
    if spread <= 600.0 {
        let fc: Vec<f64> = gc.cost.iter().map(|c| (min_c - c).exp()).collect();
        let eac: Vec<Vec<f64>> = rac.iter().zip(&mac).map(|(r, m)| r.iter().map(|x| (m - x).exp()).collect()).collect();
        let ebc: Vec<Vec<f64>> = rbc.iter().zip(&mbc).map(|(r, m)| r.iter().map(|x| (m - x).exp()).collect()).collect();
        let row_floor = |sa: usize, sb: usize| ga.cost[sa] + gb.cost[sb] + xab[(sa, sb)] + min_c + mac[sa] + mbc[sb];
        let mut lb = f64::INFINITY;
        for sa in 0..ga.states {
            for sb in 0..gb.states {
                lb = lb.min(row_floor(sa, sb));
            }
        }
        for sa in 0..ga.states {
            let ea = &eac[sa];
            for sb in 0..gb.states {
                let p = (lb - row_floor(sa, sb)).exp();
                if p < 1e-300 {
                    continue;
                }
                let row = weighted_row(&fc, ea, &ebc[sb], p, &mut wc);
                wa[sa] += p * row;
                wb[sb] += p * row;
            }
        }
    } else {
        // Wide dynamic range: plain max-shifted exponentials.
        let energy = |sa: usize, sb: usize, sc: usize| ga.cost[sa] + gb.cost[sb] + gc.cost[sc] + xab[(sa, sb)] + rac[sa][sc] + rbc[sb][sc];
        let mut emin = f64::INFINITY;
        for sa in 0..ga.states {
            for sb in 0..gb.states {
                for sc in 0..gc.states {
                    emin = emin.min(energy(sa, sb, sc));
                }
            }
        }
        for sa in 0..ga.states {
            for sb in 0..gb.states {
                for sc in 0..gc.states {
                    let w = (emin - energy(sa, sb, sc)).exp();
                    wa[sa] += w;
                    wb[sb] += w;
                    wc[sc] += w;
                }
            }
        }
    }
    let z: f64 = wa.iter().sum();
    let mut out = vec![[0.0, 0.0]; k];
    for (g, w) in [(ga, &wa), (gb, &wb), (gc, &wc)] {
        for (pos, &u) in g.users.iter().enumerate() {
            let mut mean = [0.0, 0.0];
            for (s, &ws) in w.iter().enumerate() {
                let x = alphabet[g.symbol(s, pos, m)].0;
                mean[0] += ws * x[0];
                mean[1] += ws * x[1];
            }
            out[u] = [mean[0] / z, mean[1] / z];
        }
    }
    Ok(out)
}

/// `Σ_c f[c] a[c] b[c]`, adding `p f[c] a[c] b[c]` into `acc[c]`.
#[inline]
fn weighted_row(f: &[f64], a: &[f64], b: &[f64], p: f64, acc: &mut [f64]) -> f64 {
    let n = f.len();
    let (f, a, b, acc) = (&f[..n], &a[..n], &b[..n], &mut acc[..n]);
    let mut s = [0.0; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        for j in 0..4 {
            let c = 4 * i + j;
            let w = f[c] * a[c] * b[c];
            s[j] += w;
            acc[c] += p * w;
        }
    }
    let mut total = s[0] + s[1] + s[2] + s[3];
    for c in 4 * chunks..n {
        let w = f[c] * a[c] * b[c];
        total += w;
        acc[c] += p * w;
    }
    total
}

/// Runs the configured detector on one realization.
pub fn detect(config: &McConfig, sys: &McSystem) -> Result<Vec<Point>> {
    let q = config.detector.postulated_prior();
    match config.detector.noise() {
        PostulatedNoise::InfiniteLimit => detect_linear(sys, PostulatedNoise::InfiniteLimit),
        noise if q.is_gaussian() => detect_linear(sys, noise),
        PostulatedNoise::Finite(s) => detect_exact(sys, q, Some(s * s), config.cap()),
        PostulatedNoise::ZeroLimit => detect_exact(sys, q, None, config.cap()),
    }
}

/// Maps detector outputs back to the hidden statistic on the symbol scale,
/// `Z̃ = Z / sqrt(snr)` so that its conditional mean is the transmitted
/// symbol. Saturated outputs (outside the open range of the decision
/// function) and hard decisions come back as `None`.
pub fn recover_hidden(
    estimates: &[Point],
    solution: &FixedPointSolution,
    snrs: &[f64],
    detector: &DetectorSpec,
) -> Result<Vec<Option<Point>>> {
    let q = detector.postulated_prior();
    let scale = |v: &Point, c: f64| Some([v[0] * c, v[1] * c]);
    let linear = |v: &Point, snr: f64, xi: f64| scale(v, (1.0 + xi * snr) / (xi * snr));
    estimates
        .iter()
        .zip(snrs)
        .map(|(v, &snr)| match detector.noise() {
            PostulatedNoise::InfiniteLimit => Ok(scale(v, 1.0 / snr)),
            PostulatedNoise::ZeroLimit if q.is_gaussian() => Ok(match solution.xi {
                None => Some(*v),
                Some(xi) => linear(v, snr, xi),
            }),
            PostulatedNoise::ZeroLimit => Ok(None),
            PostulatedNoise::Finite(_) => {
                let xi = solution
                    .xi
                    .ok_or_else(|| Error::InvalidSpec("finite-noise solution without xi".into()))?;
                if q.is_gaussian() {
                    return Ok(linear(v, snr, xi));
                }
                let params = ScalarParams::new(snr, solution.eta, xi)?;
                match scalar_channel::decision_inverse(*v, &params, q) {
                    Ok(z) => Ok(scale(&z, 1.0 / snr.sqrt())),
                    Err(Error::OutOfDomain { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserRecord {
    pub snr: f64,
    pub x0: Point,
    pub pme_out: Point,
    pub hidden_z: Option<Point>,
    pub hard_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub users: Vec<UserRecord>,
}

fn nearest(prior: &Constellation, v: &Point) -> Option<Point> {
    prior
        .points()
        .iter()
        .min_by(|a, b| {
            let da = (a[0] - v[0]).powi(2) + (a[1] - v[1]).powi(2);
            let db = (b[0] - v[0]).powi(2) + (b[1] - v[1]).powi(2);
            da.total_cmp(&db)
        })
        .copied()
}

pub fn run_trial(config: &McConfig, solution: &FixedPointSolution, trial: u64) -> Result<TrialRecord> {
    let sys = generate_system(config, trial);
    let est = detect(config, &sys)?;
    let hidden = recover_hidden(&est, solution, &sys.snrs, &config.detector)?;
    let users = (0..sys.x0.len())
        .map(|i| {
            // Hard decisions from the symbol-scale statistic when there is
            // one; otherwise from the raw output.
            let basis = hidden[i].unwrap_or(est[i]);
            let hard_error = match nearest(&config.prior, &basis) {
                Some(d) => d != sys.x0[i],
                None => false,
            };
            UserRecord {
                snr: sys.snrs[i],
                x0: sys.x0[i],
                pme_out: est[i],
                hidden_z: hidden[i],
                hard_error,
            }
        })
        .collect();
    Ok(TrialRecord { trial, users })
}

/// All trials, in trial order regardless of scheduling.
pub fn run_trials(config: &McConfig, solution: &FixedPointSolution) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    (0..config.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(config, solution, t))
        .collect()
}

fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    0.5 * libm::erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2))
}

/// Gaussian tail `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Kolmogorov–Smirnov distance between the sample and `N(mean, sd^2)`.
pub fn ks_distance(samples: &[f64], mean: f64, sd: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x, mean, sd);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Counts normalised to unit area.
    pub density: Vec<f64>,
    /// Predicted Gaussian density at the bin centres.
    pub predicted_density: Vec<f64>,
}

/// Histogram with Freedman–Diaconis bin width (at most 200 bins).
pub fn histogram(samples: &[f64], mean: f64, sd: f64) -> Histogram {
    if samples.is_empty() {
        return Histogram {
            edges: vec![],
            counts: vec![],
            density: vec![],
            predicted_density: vec![],
        };
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let (lo, hi) = (s[0], *s.last().unwrap());
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let width = 2.0 * iqr / (s.len() as f64).cbrt();
    let bins = if width > 0.0 && hi > lo {
        (((hi - lo) / width).ceil() as usize).clamp(1, 200)
    } else {
        1
    };
    let w = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * w).collect();
    let mut counts = vec![0usize; bins];
    for &x in &s {
        let i = (((x - lo) / w) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = s.len() as f64;
    let density = counts.iter().map(|&c| c as f64 / (n * w)).collect();
    let predicted_density = (0..bins)
        .map(|i| {
            let c = lo + (i as f64 + 0.5) * w;
            (-0.5 * ((c - mean) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
        })
        .collect();
    Histogram {
        edges,
        counts,
        density,
        predicted_density,
    }
}

/// Statistics of recovered statistics for one transmitted symbol (or of
/// the residual `Z̃ - X` for all symbols). KS distances and histograms use
/// the real component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleStats {
    pub symbol: Point,
    pub count: usize,
    pub saturated: usize,
    pub mean: Point,
    /// `E|Z̃ - mean|^2`.
    pub variance: f64,
    /// `1 / (eta snr)`.
    pub predicted_variance: f64,
    pub ks: f64,
    pub excess_kurtosis: f64,
    pub histogram: Histogram,
}

fn sample_stats(symbol: Point, zs: &[Point], saturated: usize, predicted_variance: f64, channel: ChannelKind) -> SampleStats {
    let n = zs.len() as f64;
    let mean = if zs.is_empty() {
        [f64::NAN, f64::NAN]
    } else {
        let s = zs.iter().fold([0.0, 0.0], |a, z| [a[0] + z[0], a[1] + z[1]]);
        [s[0] / n, s[1] / n]
    };
    let variance = zs.iter().map(|z| (z[0] - mean[0]).powi(2) + (z[1] - mean[1]).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let comp_sd = match channel {
        ChannelKind::Real => predicted_variance.sqrt(),
        ChannelKind::Complex => (0.5 * predicted_variance).sqrt(),
    };
    let re: Vec<f64> = zs.iter().map(|z| z[0]).collect();
    let (m2, m4) = re.iter().fold((0.0, 0.0), |(a, b), x| {
        let d = x - mean[0];
        (a + d * d, b + d.powi(4))
    });
    let excess_kurtosis = if re.len() > 1 { (m4 / n) / (m2 / n).powi(2) - 3.0 } else { f64::NAN };
    SampleStats {
        symbol,
        count: zs.len(),
        saturated,
        mean,
        variance,
        predicted_variance,
        ks: if re.is_empty() { f64::NAN } else { ks_distance(&re, symbol[0], comp_sd) },
        excess_kurtosis,
        histogram: histogram(&re, symbol[0], comp_sd),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomReport {
    pub snr: f64,
    pub snr_db: f64,
    pub samples: usize,
    /// Conditioned on each constellation point (discrete priors only).
    pub per_symbol: Vec<SampleStats>,
    /// `Z̃ - X` pooled over symbols, against `N(0, 1/(eta snr))`.
    pub residual: SampleStats,
    pub ber: f64,
    /// `Q(sqrt(eta snr))`, for binary inputs.
    pub predicted_ber: Option<f64>,
    pub empirical_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecouplingReport {
    pub eta: f64,
    pub xi: Option<f64>,
    pub users: usize,
    pub spreading: usize,
    pub trials: usize,
    pub atoms: Vec<AtomReport>,
}

/// Per-atom comparison of the recovered statistics with the decoupled
/// Gaussian prediction.
pub fn decoupling_report(config: &McConfig, solution: &FixedPointSolution, records: &[TrialRecord]) -> DecouplingReport {
    let channel = config.channel();
    let mut atom_snrs: Vec<f64> = config.snrs();
    atom_snrs.sort_by(|a, b| a.total_cmp(b));
    atom_snrs.dedup();
    let binary = config.prior.len() == 2 && channel == ChannelKind::Real;
    let atoms = atom_snrs
        .iter()
        .map(|&snr| {
            let users: Vec<&UserRecord> = records.iter().flat_map(|r| &r.users).filter(|u| u.snr == snr).collect();
            let pv = 1.0 / (solution.eta * snr);
            let per_symbol = if config.prior.is_gaussian() {
                vec![]
            } else {
                config
                    .prior
                    .points()
                    .iter()
                    .map(|x| {
                        let sel: Vec<&&UserRecord> = users.iter().filter(|u| u.x0 == *x).collect();
                        let zs: Vec<Point> = sel.iter().filter_map(|u| u.hidden_z).collect();
                        sample_stats(*x, &zs, sel.len() - zs.len(), pv, channel)
                    })
                    .collect()
            };
            let res: Vec<Point> = users
                .iter()
                .filter_map(|u| u.hidden_z.map(|z| [z[0] - u.x0[0], z[1] - u.x0[1]]))
                .collect();
            let saturated = users.iter().filter(|u| u.hidden_z.is_none()).count();
            let n = users.len().max(1) as f64;
            AtomReport {
                snr,
                snr_db: linear_to_db(snr),
                samples: users.len(),
                per_symbol,
                residual: sample_stats([0.0, 0.0], &res, saturated, pv, channel),
                ber: users.iter().filter(|u| u.hard_error).count() as f64 / n,
                predicted_ber: binary.then(|| q_function((solution.eta * snr).sqrt())),
                empirical_mse: users
                    .iter()
                    .map(|u| norm_sq(&[u.pme_out[0] - u.x0[0], u.pme_out[1] - u.x0[1]]))
                    .sum::<f64>()
                    / n,
            }
        })
        .collect();
    DecouplingReport {
        eta: solution.eta,
        xi: solution.xi,
        users: config.users,
        spreading: config.spreading,
        trials: records.len(),
        atoms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::StandardConstellation as S;
    use crate::replica_solver::{solve, SolverOptions};

    fn bpsk() -> Constellation {
        Constellation::standard(S::Bpsk)
    }

    fn cfg(k: usize, l: usize, snr_db: f64, det: DetectorSpec) -> McConfig {
        McConfig::new(k, l, SnrProfile::equal_db(snr_db).unwrap(), bpsk(), det)
    }

    #[test]
    fn systems_are_deterministic_and_scaled() {
        let c = cfg(8, 12, 2.0, DetectorSpec::individually_optimal(&bpsk()));
        let a = generate_system(&c, 7);
        assert_eq!(a, generate_system(&c, 7));
        assert_ne!(a.y, generate_system(&c, 8).y);
        let amp = (c.snrs()[0] / 12.0).sqrt();
        assert!(a.a.iter().all(|v| (v.abs() - amp).abs() < 1e-15));
        assert!(a.x0.iter().all(|x| x[0].abs() == 1.0 && x[1] == 0.0));
    }

    #[test]
    fn column_power() {
        let mut c = McConfig::new(10_000, 16, SnrProfile::equal(3.0).unwrap(), bpsk(), DetectorSpec::matched_filter(ChannelKind::Real));
        c.chip_law = ChipLaw::Gaussian;
        let s = generate_system(&c, 0);
        let mean = s.a.column_iter().map(|col| col.norm_squared()).sum::<f64>() / 10_000.0;
        assert!((mean / 3.0 - 1.0).abs() < 0.02);
        let q = Constellation::standard(S::Qpsk);
        let c = McConfig::new(4000, 16, SnrProfile::equal(2.0).unwrap(), q, DetectorSpec::matched_filter(ChannelKind::Complex));
        let s = generate_system(&c, 0);
        // Column 2k holds the real and imaginary parts of the signature.
        let mean = (0..4000).map(|k| s.a.column(2 * k).norm_squared()).sum::<f64>() / 4000.0;
        assert!((mean / 2.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_user_decorrelator_is_unbiased() {
        let c = cfg(1, 4, 0.0, DetectorSpec::decorrelator(ChannelKind::Real));
        let s = generate_system(&c, 3);
        let v = detect_linear(&s, PostulatedNoise::ZeroLimit).unwrap()[0][0];
        let col = s.a.column(0);
        let n = &s.y - col * s.x0[0][0];
        let want = s.x0[0][0] + col.dot(&n) / col.norm_squared();
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn matched_filter_is_the_large_sigma_limit() {
        let c = cfg(8, 12, 2.0, DetectorSpec::lmmse(ChannelKind::Real));
        let s = generate_system(&c, 1);
        let mf = detect_linear(&s, PostulatedNoise::InfiniteLimit).unwrap();
        let big = 1e6;
        let lin = detect_linear(&s, PostulatedNoise::Finite(big)).unwrap();
        for (a, b) in mf.iter().zip(&lin) {
            assert!((a[0] - b[0] * big * big).abs() < 1e-9 * a[0].abs().max(1.0));
        }
    }

    #[test]
    fn two_user_enumeration_matches_hand_computation() {
        let c = cfg(2, 3, 3.0, DetectorSpec::individually_optimal(&bpsk()));
        let s = generate_system(&c, 11);
        let got = detect_exact(&s, &bpsk(), Some(1.0), 12).unwrap();
        let mut num = [0.0; 2];
        let mut z = 0.0;
        for x1 in [1.0, -1.0] {
            for x2 in [1.0, -1.0] {
                let r = &s.y - s.a.column(0) * x1 - s.a.column(1) * x2;
                let w = 0.25 * (-0.5 * r.norm_squared()).exp();
                num[0] += w * x1;
                num[1] += w * x2;
                z += w;
            }
        }
        assert!((got[0][0] - num[0] / z).abs() < 1e-12 && (got[1][0] - num[1] / z).abs() < 1e-12);
        // zero-noise limit returns the minimizer
        let jo = detect_exact(&s, &bpsk(), None, 12).unwrap();
        let best = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]
            .iter()
            .min_by(|a, b| {
                let e = |x: &[f64; 2]| (&s.y - s.a.column(0) * x[0] - s.a.column(1) * x[1]).norm_squared();
                e(a).total_cmp(&e(b))
            })
            .copied()
            .unwrap();
        assert_eq!([jo[0][0], jo[1][0]], best);
    }

    #[test]
    fn grouped_enumeration_matches_brute_force() {
        // Seven users spread over three groups, real and complex.
        for (prior, k) in [(bpsk(), 7usize), (Constellation::standard(S::Qpsk), 5)] {
            let ch = prior.channel();
            let c = McConfig::new(k, 6, SnrProfile::two_group(4.0, 6.0).unwrap(), prior.clone(), DetectorSpec::individually_optimal(&prior));
            let s = generate_system(&c, 2);
            let got = detect_exact(&s, &prior, Some(0.7), 12).unwrap();
            let m = prior.len();
            let unit = match ch {
                ChannelKind::Real => 2.0 * 0.7,
                ChannelKind::Complex => 0.7,
            };
            let mut num = vec![[0.0; 2]; k];
            let mut z = 0.0;
            for idx in 0..m.pow(k as u32) {
                let xs: Vec<Point> = (0..k).map(|u| prior.points()[(idx / m.pow(u as u32)) % m]).collect();
                let r = &s.y - &s.a * to_vec(ch, &xs);
                let w = (-r.norm_squared() / unit).exp();
                z += w;
                for u in 0..k {
                    num[u][0] += w * xs[u][0];
                    num[u][1] += w * xs[u][1];
                }
            }
            for u in 0..k {
                assert!((got[u][0] - num[u][0] / z).abs() < 1e-10);
                assert!((got[u][1] - num[u][1] / z).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn noiseless_posterior_concentrates() {
        let mut c = cfg(4, 16, 30.0, DetectorSpec::individually_optimal(&bpsk()));
        c.chip_law = ChipLaw::Gaussian;
        let s = generate_system(&c, 0);
        let clean = McSystem {
            y: &s.a * to_vec(ChannelKind::Real, &s.x0),
            ..s.clone()
        };
        let est = detect_exact(&clean, &bpsk(), Some(1e-3), 12).unwrap();
        for (e, x) in est.iter().zip(&clean.x0) {
            assert!((e[0] - x[0]).abs() < 1e-9);
            assert!(e[0].abs() <= 1.0);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let c = cfg(13, 20, 2.0, DetectorSpec::individually_optimal(&bpsk()));
        assert_eq!(c.validate(), Err(Error::EnumerationCap { users: 13, cap: 12 }));
        let q = Constellation::standard(S::Qpsk);
        let c = McConfig::new(11, 20, SnrProfile::equal(1.0).unwrap(), q.clone(), DetectorSpec::individually_optimal(&q));
        assert_eq!(c.cap(), 10);
        assert!(c.validate().is_err());
        let c = cfg(40, 20, 2.0, DetectorSpec::lmmse(ChannelKind::Real));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn recovery_round_trip() {
        let c = cfg(6, 9, 2.0, DetectorSpec::individually_optimal(&bpsk()));
        let spec = c.system_spec().unwrap();
        let sol = solve(&spec, &SolverOptions::default()).unwrap();
        let s = generate_system(&c, 4);
        let est = detect(&c, &s).unwrap();
        let z = recover_hidden(&est, &sol, &s.snrs, &c.detector).unwrap();
        for ((v, z), &snr) in est.iter().zip(&z).zip(&s.snrs) {
            let z = z.unwrap();
            let p = ScalarParams::new(snr, sol.eta, sol.xi.unwrap()).unwrap();
            let back = scalar_channel::decision([z[0] * snr.sqrt(), 0.0], &p, &bpsk())[0];
            assert!((back - v[0]).abs() < 1e-9);
            // tanh form
            let direct = v[0].atanh() / (sol.eta * snr);
            assert!((direct - z[0]).abs() < 1e-8 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn linear_recovery_is_affine() {
        let c = cfg(6, 9, 2.0, DetectorSpec::lmmse(ChannelKind::Real));
        let sol = solve(&c.system_spec().unwrap(), &SolverOptions::default()).unwrap();
        let xi = sol.xi.unwrap();
        let snr = c.snrs()[0];
        let z = recover_hidden(&[[0.3, 0.0]], &sol, &[snr], &c.detector).unwrap()[0].unwrap();
        assert!((z[0] - 0.3 * (1.0 + xi * snr) / (xi * snr.sqrt()) / snr.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn ks_and_histogram() {
        let xs: Vec<f64> = (1..1000).map(|i| {
            // normal quantiles by bisection on the CDF
            let p = i as f64 / 1000.0;
            let (mut lo, mut hi) = (-10.0, 10.0);
            for _ in 0..100 {
                let m = 0.5 * (lo + hi);
                if normal_cdf(m, 0.0, 1.0) < p { lo = m } else { hi = m }
            }
            lo
        }).collect();
        assert!(ks_distance(&xs, 0.0, 1.0) < 1.1e-3);
        assert!(ks_distance(&xs, 0.5, 1.0) > 0.19);
        let h = histogram(&xs, 0.0, 1.0);
        assert_eq!(h.counts.iter().sum::<usize>(), xs.len());
        let area: f64 = h.density.iter().zip(h.edges.windows(2)).map(|(d, e)| d * (e[1] - e[0])).sum();
        assert!((area - 1.0).abs() < 1e-12);
        assert!((q_function(0.0) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn trials_are_order_independent() {
        let mut c = cfg(6, 9, 2.0, DetectorSpec::individually_optimal(&bpsk()));
        c.trials = 40;
        c.seed = 99;
        let sol = solve(&c.system_spec().unwrap(), &SolverOptions::default()).unwrap();
        let a = run_trials(&c, &sol).unwrap();
        let b: Vec<TrialRecord> = (0..40).rev().map(|t| run_trial(&c, &sol, t).unwrap()).rev().collect();
        assert_eq!(a, b);
        let r = decoupling_report(&c, &sol, &a);
        assert_eq!(r.atoms.len(), 1);
        assert_eq!(r.atoms[0].samples, 240);
    }
}
