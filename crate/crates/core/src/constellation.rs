//! Input distributions, SNR profiles and postulated detector parameters.
//!
//! Every [`Constellation`] is normalized to zero mean and unit power at
//! construction. Complex symbols are stored as `[re, im]` pairs; real
//! constellations keep `im = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A symbol as `[re, im]`.
pub type Point = [f64; 2];

const NORM_TOL: f64 = 1e-12;
const RENORM_WARN: f64 = 1e-9;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Real,
    Complex,
}

impl ChannelKind {
    /// Real dimensions per symbol.
    pub fn dims(self) -> usize {
        match self {
            ChannelKind::Real => 1,
            ChannelKind::Complex => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstellationKind {
    DiscreteReal,
    DiscreteComplex,
    GaussianReal,
    GaussianComplex,
}

impl ConstellationKind {
    pub fn channel(self) -> ChannelKind {
        match self {
            ConstellationKind::DiscreteReal | ConstellationKind::GaussianReal => ChannelKind::Real,
            _ => ChannelKind::Complex,
        }
    }

    pub fn is_gaussian(self) -> bool {
        matches!(
            self,
            ConstellationKind::GaussianReal | ConstellationKind::GaussianComplex
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StandardConstellation {
    Bpsk,
    Qpsk,
    #[serde(rename = "8psk")]
    Psk8,
    #[serde(rename = "16qam")]
    Qam16,
    GaussianReal,
    GaussianComplex,
}

impl std::str::FromStr for StandardConstellation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Self::Bpsk),
            "qpsk" => Ok(Self::Qpsk),
            "8psk" => Ok(Self::Psk8),
            "16qam" => Ok(Self::Qam16),
            "gaussian-real" | "gaussian" => Ok(Self::GaussianReal),
            "gaussian-complex" => Ok(Self::GaussianComplex),
            _ => Err(Error::UnknownConstellation(s.to_string())),
        }
    }
}

/// A zero-mean, unit-power input distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConstellationRepr", into = "ConstellationRepr")]
pub struct Constellation {
    kind: ConstellationKind,
    points: Vec<Point>,
    probs: Vec<f64>,
    label: String,
}

impl Constellation {
    pub fn standard(name: StandardConstellation) -> Self {
        use std::f64::consts::{FRAC_1_SQRT_2, PI};
        match name {
            StandardConstellation::Bpsk => Self::exact(
                ConstellationKind::DiscreteReal,
                vec![[1.0, 0.0], [-1.0, 0.0]],
                "bpsk",
            ),
            StandardConstellation::Qpsk => Self::exact(
                ConstellationKind::DiscreteComplex,
                vec![
                    [FRAC_1_SQRT_2, FRAC_1_SQRT_2],
                    [-FRAC_1_SQRT_2, FRAC_1_SQRT_2],
                    [-FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
                    [FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
                ],
                "qpsk",
            ),
            StandardConstellation::Psk8 => Self::exact(
                ConstellationKind::DiscreteComplex,
                (0..8)
                    .map(|k| {
                        let a = 2.0 * PI * k as f64 / 8.0;
                        [a.cos(), a.sin()]
                    })
                    .collect(),
                "8psk",
            ),
            StandardConstellation::Qam16 => {
                let s = 10f64.sqrt();
                let levels = [-3.0, -1.0, 1.0, 3.0];
                let pts = levels
                    .iter()
                    .flat_map(|&i| levels.iter().map(move |&q| [i / s, q / s]))
                    .collect();
                Self::exact(ConstellationKind::DiscreteComplex, pts, "16qam")
            }
            StandardConstellation::GaussianReal => Self::gaussian(ChannelKind::Real),
            StandardConstellation::GaussianComplex => Self::gaussian(ChannelKind::Complex),
        }
    }

    /// Looks up a standard constellation by name (`bpsk`, `qpsk`, `8psk`,
    /// `16qam`, `gaussian-real`, `gaussian-complex`).
    pub fn make_standard(name: &str) -> Result<Self> {
        Ok(Self::standard(name.parse()?))
    }

    pub fn gaussian(channel: ChannelKind) -> Self {
        let (kind, label) = match channel {
            ChannelKind::Real => (ConstellationKind::GaussianReal, "gaussian-real"),
            ChannelKind::Complex => (ConstellationKind::GaussianComplex, "gaussian-complex"),
        };
        Constellation {
            kind,
            points: Vec::new(),
            probs: Vec::new(),
            label: label.to_string(),
        }
    }

    // Uniform constellations that are already normalized.
    fn exact(kind: ConstellationKind, points: Vec<Point>, label: &str) -> Self {
        let n = points.len() as f64;
        let c = Constellation {
            kind,
            probs: vec![1.0 / n; points.len()],
            points,
            label: label.to_string(),
        };
        debug_assert!(c.check_invariants().is_ok());
        c
    }

    /// Builds a custom discrete constellation, shifting it to zero mean and
    /// scaling it to unit power. Logs a warning when the adjustment is larger
    /// than `1e-9`.
    pub fn discrete(
        kind: ConstellationKind,
        points: Vec<Point>,
        probs: Vec<f64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if kind.is_gaussian() {
            return Err(Error::InvalidConstellation(
                "gaussian kinds carry no points".into(),
            ));
        }
        if points.is_empty() || points.len() != probs.len() {
            return Err(Error::InvalidConstellation(format!(
                "{} points but {} probabilities",
                points.len(),
                probs.len()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidConstellation(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConstellation("non-finite symbol".into()));
        }
        if kind == ConstellationKind::DiscreteReal && points.iter().any(|p| p[1] != 0.0) {
            return Err(Error::InvalidConstellation(
                "real constellation with imaginary parts".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidConstellation(format!(
                "probabilities sum to {total}"
            )));
        }
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        let mean = weighted_mean(&points, &probs);
        let centered: Vec<Point> = points
            .iter()
            .map(|p| [p[0] - mean[0], p[1] - mean[1]])
            .collect();
        let power: f64 = centered
            .iter()
            .zip(&probs)
            .map(|(p, w)| w * norm_sq(p))
            .sum();
        if !(power > 0.0) {
            return Err(Error::InvalidConstellation("zero power".into()));
        }
        let scale = power.sqrt().recip();
        let normalized: Vec<Point> = centered
            .iter()
            .map(|p| [p[0] * scale, p[1] * scale])
            .collect();
        let shift = points
            .iter()
            .zip(&normalized)
            .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
            .fold(0.0, f64::max);
        let label = label.into();
        if shift > RENORM_WARN {
            log::warn!("constellation `{label}` renormalized (max symbol shift {shift:.3e})");
        }
        let c = Constellation {
            kind,
            points: normalized,
            probs,
            label,
        };
        c.check_invariants()?;
        Ok(c)
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn channel(&self) -> ChannelKind {
        self.kind.channel()
    }

    pub fn is_gaussian(&self) -> bool {
        self.kind.is_gaussian()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> Point {
        weighted_mean(&self.points, &self.probs)
    }

    pub fn power(&self) -> f64 {
        if self.is_gaussian() {
            return 1.0;
        }
        self.points
            .iter()
            .zip(&self.probs)
            .map(|(p, w)| w * norm_sq(p))
            .sum()
    }

    /// Entropy in nats; infinite for Gaussian priors.
    pub fn entropy(&self) -> f64 {
        if self.is_gaussian() {
            return f64::INFINITY;
        }
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    /// Range `(min, max)` of the real parts; the open range of the decision
    /// function for real constellations.
    pub fn real_range(&self) -> (f64, f64) {
        if self.is_gaussian() {
            return (f64::NEG_INFINITY, f64::INFINITY);
        }
        self.points
            .iter()
            .zip(&self.probs)
            .filter(|(_, &w)| w > 0.0)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (p, _)| {
                (lo.min(p[0]), hi.max(p[0]))
            })
    }

    pub fn check_invariants(&self) -> Result<()> {
        if self.is_gaussian() {
            if !self.points.is_empty() || !self.probs.is_empty() {
                return Err(Error::InvalidConstellation(
                    "gaussian kinds carry no points".into(),
                ));
            }
            return Ok(());
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > NORM_TOL || self.probs.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidConstellation("probabilities".into()));
        }
        let m = self.mean();
        if m[0].abs() > NORM_TOL || m[1].abs() > NORM_TOL {
            return Err(Error::InvalidConstellation(format!("mean {m:?}")));
        }
        if (self.power() - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidConstellation(format!(
                "power {}",
                self.power()
            )));
        }
        Ok(())
    }

    /// Whether two constellations describe the same distribution (up to
    /// point ordering).
    pub fn same_distribution(&self, other: &Constellation) -> bool {
        if self.kind != other.kind || self.len() != other.len() {
            return false;
        }
        self.points.iter().zip(&self.probs).all(|(p, w)| {
            other.points.iter().zip(&other.probs).any(|(q, v)| {
                (p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12 && (w - v).abs() < 1e-12
            })
        })
    }

    /// For a complex constellation whose in-phase and quadrature parts are
    /// independent and identically distributed, returns the unit-power real
    /// component constellation. QPSK and 16-QAM decompose; 8-PSK does not.
    pub fn separable_component(&self) -> Option<Constellation> {
        if self.kind != ConstellationKind::DiscreteComplex {
            return None;
        }
        let mut re: Vec<(f64, f64)> = Vec::new();
        let mut im: Vec<(f64, f64)> = Vec::new();
        let add = |list: &mut Vec<(f64, f64)>, v: f64, w: f64| {
            match list.iter_mut().find(|(x, _)| (x - v).abs() < 1e-12) {
                Some(e) => e.1 += w,
                None => list.push((v, w)),
            }
        };
        for (p, &w) in self.points.iter().zip(&self.probs) {
            add(&mut re, p[0], w);
            add(&mut im, p[1], w);
        }
        if re.len() * im.len() != self.len() || re.len() != im.len() {
            return None;
        }
        re.sort_by(|a, b| a.0.total_cmp(&b.0));
        im.sort_by(|a, b| a.0.total_cmp(&b.0));
        let same_marginal = re
            .iter()
            .zip(&im)
            .all(|(a, b)| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        if !same_marginal {
            return None;
        }
        let factorizes = self.points.iter().zip(&self.probs).all(|(p, &w)| {
            let pr = re.iter().find(|(x, _)| (x - p[0]).abs() < 1e-12).unwrap().1;
            let pi = im.iter().find(|(x, _)| (x - p[1]).abs() < 1e-12).unwrap().1;
            (pr * pi - w).abs() < 1e-12
        });
        if !factorizes {
            return None;
        }
        let s = std::f64::consts::SQRT_2;
        let points: Vec<Point> = re.iter().map(|(x, _)| [x * s, 0.0]).collect();
        let probs: Vec<f64> = re.iter().map(|(_, w)| *w).collect();
        Constellation::discrete(
            ConstellationKind::DiscreteReal,
            points,
            probs,
            format!("{}-component", self.label),
        )
        .ok()
    }
}

fn weighted_mean(points: &[Point], probs: &[f64]) -> Point {
    points.iter().zip(probs).fold([0.0, 0.0], |acc, (p, w)| {
        [acc[0] + w * p[0], acc[1] + w * p[1]]
    })
}

pub(crate) fn norm_sq(p: &Point) -> f64 {
    p[0] * p[0] + p[1] * p[1]
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ConstellationRepr {
    Named(String),
    Full {
        kind: ConstellationKind,
        #[serde(default)]
        points: Vec<Vec<f64>>,
        #[serde(default)]
        probs: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

impl TryFrom<ConstellationRepr> for Constellation {
    type Error = Error;

    fn try_from(r: ConstellationRepr) -> Result<Self> {
        match r {
            ConstellationRepr::Named(name) => Constellation::make_standard(&name),
            ConstellationRepr::Full {
                kind,
                points,
                probs,
                label,
            } => {
                if kind.is_gaussian() {
                    if !points.is_empty() || !probs.is_empty() {
                        return Err(Error::InvalidConstellation(
                            "gaussian kinds carry no points".into(),
                        ));
                    }
                    return Ok(Constellation::gaussian(kind.channel()));
                }
                let pts = points
                    .iter()
                    .map(|p| match p.as_slice() {
                        [re] => Ok([*re, 0.0]),
                        [re, im] => Ok([*re, *im]),
                        _ => Err(Error::InvalidConstellation(
                            "points must be [re] or [re, im]".into(),
                        )),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Constellation::discrete(kind, pts, probs, label.unwrap_or_else(|| "custom".into()))
            }
        }
    }
}

impl From<Constellation> for ConstellationRepr {
    fn from(c: Constellation) -> Self {
        ConstellationRepr::Full {
            kind: c.kind,
            points: c.points.iter().map(|p| vec![p[0], p[1]]).collect(),
            probs: c.probs,
            label: Some(c.label),
        }
    }
}

/// One SNR level of a discrete SNR distribution (linear scale).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrAtom {
    pub snr: f64,
    pub weight: f64,
}

/// Finite discrete distribution of received SNRs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileRepr", into = "ProfileRepr")]
pub struct SnrProfile {
    atoms: Vec<SnrAtom>,
}

impl SnrProfile {
    /// Validates and merges atoms that share the same SNR.
    pub fn new(atoms: Vec<SnrAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidProfile("no atoms".into()));
        }
        for a in &atoms {
            if !(a.snr > 0.0) || !a.snr.is_finite() {
                return Err(Error::InvalidProfile(format!("snr {} must be positive", a.snr)));
            }
            if !(a.weight >= 0.0) || !a.weight.is_finite() {
                return Err(Error::InvalidProfile(format!("weight {}", a.weight)));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidProfile(format!("weights sum to {total}")));
        }
        let mut merged: Vec<SnrAtom> = Vec::with_capacity(atoms.len());
        for a in atoms.into_iter().filter(|a| a.weight > 0.0) {
            match merged.iter_mut().find(|m| m.snr == a.snr) {
                Some(m) => m.weight += a.weight,
                None => merged.push(a),
            }
        }
        Ok(SnrProfile { atoms: merged })
    }

    /// All users at the same linear SNR.
    pub fn equal(snr: f64) -> Result<Self> {
        Self::new(vec![SnrAtom { snr, weight: 1.0 }])
    }

    pub fn equal_db(snr_db: f64) -> Result<Self> {
        Self::equal(db_to_linear(snr_db))
    }

    /// Two equally populated groups whose powers differ by `gap_db`, with
    /// linear mean SNR equal to `mean_snr_db`.
    pub fn two_group(mean_snr_db: f64, gap_db: f64) -> Result<Self> {
        if !(gap_db >= 0.0) {
            return Err(Error::InvalidProfile("gap_db must be non-negative".into()));
        }
        let g = db_to_linear(gap_db);
        let low = 2.0 * db_to_linear(mean_snr_db) / (1.0 + g);
        Self::new(vec![
            SnrAtom {
                snr: low,
                weight: 0.5,
            },
            SnrAtom {
                snr: g * low,
                weight: 0.5,
            },
        ])
    }

    pub fn atoms(&self) -> &[SnrAtom] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.expect(|s| s)
    }

    /// Expectation of `f(snr)` over the profile.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.weight * f(a.snr)).sum()
    }

    /// Same shape, rescaled so the linear mean equals `mean_db`.
    pub fn scaled_to_mean_db(&self, mean_db: f64) -> Self {
        let k = db_to_linear(mean_db) / self.mean();
        SnrProfile {
            atoms: self
                .atoms
                .iter()
                .map(|a| SnrAtom {
                    snr: a.snr * k,
                    weight: a.weight,
                })
                .collect(),
        }
    }

    /// Assigns SNRs to `users` users by stratified quantiles of the profile,
    /// so group populations match the weights as closely as possible.
    pub fn assign(&self, users: usize) -> Vec<f64> {
        (0..users)
            .map(|k| {
                let u = (k as f64 + 0.5) / users as f64;
                let mut acc = 0.0;
                for a in &self.atoms {
                    acc += a.weight;
                    if u < acc {
                        return a.snr;
                    }
                }
                self.atoms.last().unwrap().snr
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct AtomRepr {
    snr_db: f64,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct ProfileRepr {
    atoms: Vec<AtomRepr>,
}

impl TryFrom<ProfileRepr> for SnrProfile {
    type Error = Error;

    fn try_from(r: ProfileRepr) -> Result<Self> {
        SnrProfile::new(
            r.atoms
                .iter()
                .map(|a| SnrAtom {
                    snr: db_to_linear(a.snr_db),
                    weight: a.weight,
                })
                .collect(),
        )
    }
}

impl From<SnrProfile> for ProfileRepr {
    fn from(p: SnrProfile) -> Self {
        ProfileRepr {
            atoms: p
                .atoms
                .iter()
                .map(|a| AtomRepr {
                    snr_db: linear_to_db(a.snr),
                    weight: a.weight,
                })
                .collect(),
        }
    }
}

/// Postulated noise level of the detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostulatedNoise {
    Finite(f64),
    ZeroLimit,
    InfiniteLimit,
}

impl PostulatedNoise {
    /// `σ²` for the coupled equations; `None` for the infinite limit.
    pub fn sigma_sq(self) -> Option<f64> {
        match self {
            PostulatedNoise::Finite(s) => Some(s * s),
            PostulatedNoise::ZeroLimit => Some(0.0),
            PostulatedNoise::InfiniteLimit => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorPreset {
    MatchedFilter,
    Decorrelator,
    Lmmse,
    JointlyOptimal,
    IndividuallyOptimal,
    Custom,
}

/// Posterior mean estimator parameterized by a postulated prior and noise
/// level.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSpec {
    postulated_prior: Constellation,
    noise: PostulatedNoise,
    preset: DetectorPreset,
}

impl DetectorSpec {
    pub fn new(
        postulated_prior: Constellation,
        noise: PostulatedNoise,
        preset: DetectorPreset,
    ) -> Result<Self> {
        if let PostulatedNoise::Finite(s) = noise {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InconsistentDetector(format!(
                    "finite sigma must be positive, got {s}"
                )));
            }
        }
        let gaussian = postulated_prior.is_gaussian();
        let unit = noise == PostulatedNoise::Finite(1.0);
        let zero = noise == PostulatedNoise::ZeroLimit;
        let inf = noise == PostulatedNoise::InfiniteLimit;
        let bad = |msg: &str| Err(Error::InconsistentDetector(msg.to_string()));
        match preset {
            DetectorPreset::MatchedFilter if !inf => {
                return bad("matched filter requires the infinite noise limit")
            }
            DetectorPreset::Lmmse if !(gaussian && unit) => {
                return bad("lmmse requires a gaussian prior and sigma = 1")
            }
            DetectorPreset::Decorrelator if !(gaussian && zero) => {
                return bad("decorrelator requires a gaussian prior and the zero noise limit")
            }
            DetectorPreset::JointlyOptimal if !zero => {
                return bad("jointly optimal requires the zero noise limit")
            }
            DetectorPreset::IndividuallyOptimal if !unit => {
                return bad("individually optimal requires sigma = 1")
            }
            DetectorPreset::Custom if inf => {
                return bad("the infinite noise limit is the matched filter preset")
            }
            DetectorPreset::Custom if gaussian && unit => {
                return bad("gaussian prior with sigma = 1 is the lmmse preset")
            }
            DetectorPreset::Custom if gaussian && zero => {
                return bad("gaussian prior with zero noise is the decorrelator preset")
            }
            _ => {}
        }
        Ok(DetectorSpec {
            postulated_prior,
            noise,
            preset,
        })
    }

    pub fn matched_filter(channel: ChannelKind) -> Self {
        Self::new(
            Constellation::gaussian(channel),
            PostulatedNoise::InfiniteLimit,
            DetectorPreset::MatchedFilter,
        )
        .expect("preset is consistent")
    }

    pub fn decorrelator(channel: ChannelKind) -> Self {
        Self::new(
            Constellation::gaussian(channel),
            PostulatedNoise::ZeroLimit,
            DetectorPreset::Decorrelator,
        )
        .expect("preset is consistent")
    }

    pub fn lmmse(channel: ChannelKind) -> Self {
        Self::new(
            Constellation::gaussian(channel),
            PostulatedNoise::Finite(1.0),
            DetectorPreset::Lmmse,
        )
        .expect("preset is consistent")
    }

    /// Linear PME with a Gaussian postulated prior and finite `sigma`.
    pub fn linear(channel: ChannelKind, sigma: f64) -> Result<Self> {
        let preset = if sigma == 1.0 {
            DetectorPreset::Lmmse
        } else {
            DetectorPreset::Custom
        };
        Self::new(
            Constellation::gaussian(channel),
            PostulatedNoise::Finite(sigma),
            preset,
        )
    }

    pub fn individually_optimal(actual: &Constellation) -> Self {
        Self::new(
            actual.clone(),
            PostulatedNoise::Finite(1.0),
            DetectorPreset::IndividuallyOptimal,
        )
        .expect("preset is consistent")
    }

    pub fn jointly_optimal(actual: &Constellation) -> Self {
        Self::new(
            actual.clone(),
            PostulatedNoise::ZeroLimit,
            DetectorPreset::JointlyOptimal,
        )
        .expect("preset is consistent")
    }

    pub fn custom(postulated_prior: Constellation, noise: PostulatedNoise) -> Result<Self> {
        Self::new(postulated_prior, noise, DetectorPreset::Custom)
    }

    pub fn postulated_prior(&self) -> &Constellation {
        &self.postulated_prior
    }

    pub fn noise(&self) -> PostulatedNoise {
        self.noise
    }

    pub fn preset(&self) -> DetectorPreset {
        self.preset
    }

    /// Whether the PME output is a linear function of the received signal.
    pub fn is_linear(&self) -> bool {
        self.postulated_prior.is_gaussian()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_constellations_are_normalized() {
        for name in ["bpsk", "qpsk", "8psk", "16qam", "gaussian-real", "gaussian-complex"] {
            let c = Constellation::make_standard(name).unwrap();
            c.check_invariants().unwrap();
            assert_eq!(c, Constellation::make_standard(name).unwrap());
        }
        let b = Constellation::make_standard("bpsk").unwrap();
        assert_eq!(b.points(), &[[1.0, 0.0], [-1.0, 0.0]]);
        assert_eq!(b.probs(), &[0.5, 0.5]);
        let q = Constellation::make_standard("qpsk").unwrap();
        assert_eq!(q.len(), 4);
        for p in q.points() {
            assert!((p[0].abs() - 0.5f64.sqrt()).abs() < 1e-15);
            assert!((p[1].abs() - 0.5f64.sqrt()).abs() < 1e-15);
        }
        assert_eq!(Constellation::make_standard("8psk").unwrap().len(), 8);
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(matches!(
            Constellation::make_standard("64apsk"),
            Err(Error::UnknownConstellation(_))
        ));
    }

    #[test]
    fn custom_constellation_is_renormalized() {
        let c = Constellation::discrete(
            ConstellationKind::DiscreteReal,
            vec![[0.0, 0.0], [2.0, 0.0]],
            vec![0.5, 0.5],
            "shifted",
        )
        .unwrap();
        assert!((c.points()[0][0] + 1.0).abs() < 1e-15);
        assert!((c.points()[1][0] - 1.0).abs() < 1e-15);
        assert!(Constellation::discrete(
            ConstellationKind::DiscreteReal,
            vec![[1.0, 0.0]],
            vec![0.7],
            "bad"
        )
        .is_err());
    }

    #[test]
    fn two_group_profile() {
        let p = SnrProfile::two_group(0.0, 0.0).unwrap();
        assert_eq!(p.atoms().len(), 1);
        assert!((p.atoms()[0].snr - 1.0).abs() < 1e-15);
        assert_eq!(p.atoms()[0].weight, 1.0);

        let p = SnrProfile::two_group(2.0, 10.0).unwrap();
        let s = 2.0 * 10f64.powf(0.2) / 11.0;
        assert!((p.atoms()[0].snr - s).abs() < 1e-14);
        assert!((p.atoms()[1].snr - 10.0 * s).abs() < 1e-13);
        assert!((p.mean() - 10f64.powf(0.2)).abs() < 1e-12);
        assert!(SnrProfile::two_group(0.0, -1.0).is_err());
    }

    #[test]
    fn json_schema() {
        let p: SnrProfile = serde_json::from_str(
            r#"{"atoms":[{"snr_db":10.0,"weight":0.5},{"snr_db":0.0,"weight":0.5}]}"#,
        )
        .unwrap();
        assert_eq!(p.atoms()[0].snr, 10.0);
        assert_eq!(p.atoms()[1].snr, 1.0);
        assert!(serde_json::from_str::<SnrProfile>(r#"{"atoms":[{"snr_db":0.0,"weight":0.4}]}"#).is_err());

        let c: Constellation = serde_json::from_str(
            r#"{"kind":"discrete-complex","points":[[1,0],[0,1],[-1,0],[0,-1]],"probs":[0.25,0.25,0.25,0.25]}"#,
        )
        .unwrap();
        assert_eq!(c.len(), 4);
        let named: Constellation = serde_json::from_str(r#""8psk""#).unwrap();
        assert_eq!(named.label(), "8psk");
        let g: Constellation = serde_json::from_str(r#"{"kind":"gaussian-real"}"#).unwrap();
        assert!(g.is_gaussian());
        let back: Constellation = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert!(back.same_distribution(&c));
    }

    #[test]
    fn profile_assignment_follows_weights() {
        let p = SnrProfile::two_group(0.0, 10.0).unwrap();
        let snrs = p.assign(8);
        let low = p.atoms()[0].snr;
        assert_eq!(snrs.iter().filter(|&&s| s == low).count(), 4);
    }

    #[test]
    fn detector_presets_are_checked() {
        let b = Constellation::make_standard("bpsk").unwrap();
        let g = Constellation::gaussian(ChannelKind::Real);
        assert!(DetectorSpec::new(
            g.clone(),
            PostulatedNoise::Finite(2.0),
            DetectorPreset::MatchedFilter
        )
        .is_err());
        assert!(DetectorSpec::new(b.clone(), PostulatedNoise::Finite(1.0), DetectorPreset::Lmmse).is_err());
        assert!(DetectorSpec::new(g.clone(), PostulatedNoise::Finite(1.0), DetectorPreset::Lmmse).is_ok());
        assert!(DetectorSpec::new(g.clone(), PostulatedNoise::Finite(1.0), DetectorPreset::Custom).is_err());
        assert!(DetectorSpec::new(b.clone(), PostulatedNoise::Finite(0.5), DetectorPreset::IndividuallyOptimal).is_err());
        assert!(DetectorSpec::custom(b.clone(), PostulatedNoise::Finite(0.5)).is_ok());
        assert!(DetectorSpec::custom(b, PostulatedNoise::InfiniteLimit).is_err());
        assert!(DetectorSpec::custom(g, PostulatedNoise::Finite(-1.0)).is_err());
    }

    #[test]
    fn separable_components() {
        let q = Constellation::make_standard("qpsk").unwrap();
        let c = q.separable_component().unwrap();
        assert_eq!(c.len(), 2);
        assert!((c.points()[1][0] - 1.0).abs() < 1e-12);
        let qam = Constellation::make_standard("16qam").unwrap();
        assert_eq!(qam.separable_component().unwrap().len(), 4);
        assert!(Constellation::make_standard("8psk")
            .unwrap()
            .separable_component()
            .is_none());
    }
}
