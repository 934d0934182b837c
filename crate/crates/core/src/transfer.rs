//! Per-region makeup style transfer.
//!
//! Luminance is matched to the example by histogram specification and then
//! re-blended so that its gradients follow the subject. Colors are moved by a
//! 3×3 linear map on mean-centered Lab points, chosen so that the mapped
//! subject gamut and the example gamut overlap as tightly as possible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{gray_world_white_balance, lab_to_srgb_pixel_unclamped, srgb_to_lab_pixel, Image, ImagingError};
use crate::matting::AlphaMatte;
use crate::numeric::{cg_solve_from, nelder_mead, quickhull3, Hull3, NumericError, Point3, TripletBuilder};
use crate::semantics::RegionMask;

/// Pixels with matte above this value are transferred.
pub const MATTE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("EmptyRegion: {0}")]
    EmptyRegion(&'static str),
    #[error("invalid transfer config: {0}")]
    InvalidConfig(String),
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    /// Weight of the subject gradients in the luminance blend.
    pub sigma: f64,
    pub bins: usize,
    /// Largest number of pixels per region fed to the hull.
    pub sample_cap: usize,
    /// Gamut-fit optimizer tolerance on the normalized energy.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative residual for the luminance solve.
    pub solver_tol: f64,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            bins: 256,
            sample_cap: 4000,
            tol: 1e-6,
            max_iter: 3000,
            solver_tol: 1e-8,
            seed: 0,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<(), TransferError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(TransferError::InvalidConfig(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if self.bins < 2 {
            return Err(TransferError::InvalidConfig(format!("bins must be >= 2, got {}", self.bins)));
        }
        if self.sample_cap < 4 {
            return Err(TransferError::InvalidConfig(format!("sample_cap must be >= 4, got {}", self.sample_cap)));
        }
        if !(self.tol > 0.0) || !(self.solver_tol > 0.0) {
            return Err(TransferError::InvalidConfig("tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn with_overrides(&self, o: &TransferOverrides) -> TransferConfig {
        TransferConfig {
            sigma: o.sigma.unwrap_or(self.sigma),
            bins: o.bins.unwrap_or(self.bins),
            sample_cap: o.sample_cap.unwrap_or(self.sample_cap),
            tol: o.tol.unwrap_or(self.tol),
            max_iter: o.max_iter.unwrap_or(self.max_iter),
            solver_tol: self.solver_tol,
            seed: o.seed.unwrap_or(self.seed),
        }
    }
}

/// Partial config carried by a plan assignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Piecewise-linear CDF over equal-width bins spanning `[lo, hi]`.
struct BinnedCdf {
    lo: f64,
    hi: f64,
    width: f64,
    cum: Vec<f64>,
}

impl BinnedCdf {
    fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &v in values {
            counts[Self::bin_of(v, lo, width, bins)] += 1;
        }
        let n = values.len() as f64;
        let mut cum = Vec::with_capacity(bins + 1);
        let mut acc = 0usize;
        cum.push(0.0);
        for c in counts {
            acc += c;
            cum.push(acc as f64 / n);
        }
        Self { lo, hi, width, cum }
    }

    fn bin_of(v: f64, lo: f64, width: f64, bins: usize) -> usize {
        (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
    }

    fn bins(&self) -> usize {
        self.cum.len() - 1
    }

    fn eval(&self, v: f64) -> f64 {
        let k = Self::bin_of(v, self.lo, self.width, self.bins());
        let frac = ((v - self.lo) / self.width - k as f64).clamp(0.0, 1.0);
        self.cum[k] + (self.cum[k + 1] - self.cum[k]) * frac
    }

    fn inverse(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        // First bin whose upper CDF reaches u; it has positive mass unless u = 0.
        let k = self.cum[1..].partition_point(|&c| c < u).min(self.bins() - 1);
        let mass = self.cum[k + 1] - self.cum[k];
        let frac = if mass > 0.0 { (u - self.cum[k]) / mass } else { 0.0 };
        (self.lo + self.width * (k as f64 + frac)).clamp(self.lo, self.hi)
    }
}

fn range(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn is_point_mass(lo: f64, hi: f64) -> bool {
    hi - lo <= 1e-12 * lo.abs().max(hi.abs()).max(1.0)
}

/// Maps each subject value through the subject CDF and then the inverse
/// example CDF, both built from `bins` equal-width bins.
///
/// A constant subject maps to the example median; a constant example maps
/// everything to its value.
pub fn match_luminance_histogram(ls: &[f64], le: &[f64], bins: usize) -> Result<Vec<f64>, TransferError> {
    if ls.is_empty() || le.is_empty() {
        return Err(TransferError::EmptyRegion("histogram input"));
    }
    if bins < 2 {
        return Err(TransferError::InvalidConfig(format!("bins must be >= 2, got {bins}")));
    }
    let (elo, ehi) = range(le);
    if is_point_mass(elo, ehi) {
        return Ok(vec![elo; ls.len()]);
    }
    let ce = BinnedCdf::new(le, elo, ehi, bins);
    let (slo, shi) = range(ls);
    if is_point_mass(slo, shi) {
        return Ok(vec![ce.inverse(0.5); ls.len()]);
    }
    let cs = BinnedCdf::new(ls, slo, shi, bins);
    Ok(ls.iter().map(|&v| ce.inverse(cs.eval(v))).collect())
}

/// Applies `(GxᵀGx + GyᵀGy)` with forward differences and replicate borders.
pub fn gradient_laplacian(u: &[f64], width: usize, height: usize) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            if x + 1 < width {
                let d = u[p] - u[p + 1];
                out[p] += d;
                out[p + 1] -= d;
            }
            if y + 1 < height {
                let d = u[p] - u[p + width];
                out[p] += d;
                out[p + width] -= d;
            }
        }
    }
    out
}

/// Solves `[I + σ(GxᵀGx + GyᵀGy)] Lo = Li + σ(GxᵀGx + GyᵀGy) Ls` on a
/// `width × height` grid.
pub fn blend_luminance_gradient(
    ls: &[f64],
    li: &[f64],
    width: usize,
    height: usize,
    sigma: f64,
    tol: f64,
) -> Result<Vec<f64>, TransferError> {
    let n = width * height;
    if ls.len() != n || li.len() != n {
        return Err(TransferError::DimensionMismatch(format!(
            "{width}×{height} grid with {} and {} samples",
            ls.len(),
            li.len()
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(TransferError::InvalidConfig(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 || n == 0 {
        return Ok(li.to_vec());
    }
    let mut builder = TripletBuilder::with_capacity(n, n, 5 * n);
    for p in 0..n {
        builder.push(p, p, 1.0);
    }
    let mut edge = |p: usize, q: usize| {
        builder.push(p, p, sigma);
        builder.push(q, q, sigma);
        builder.push(p, q, -sigma);
        builder.push(q, p, -sigma);
    };
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            if x + 1 < width {
                edge(p, p + 1);
            }
            if y + 1 < height {
                edge(p, p + width);
            }
        }
    }
    let a = builder.build();
    let lap = gradient_laplacian(ls, width, height);
    let rhs: Vec<f64> = li.iter().zip(&lap).map(|(l, g)| l + sigma * g).collect();
    let max_iter = 20 * n + 1000;
    Ok(cg_solve_from(&a, &rhs, li.to_vec(), tol, max_iter)?)
}

/// Subtracts the sample mean; returns the centered samples and the mean.
pub fn center_gamut(samples: &[Point3]) -> Result<(Vec<Point3>, Point3), TransferError> {
    if samples.is_empty() {
        return Err(TransferError::EmptyRegion("gamut samples"));
    }
    let mean = mean_of(samples);
    let centered = samples
        .iter()
        .map(|p| [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]])
        .collect();
    Ok((centered, mean))
}

fn mean_of(samples: &[Point3]) -> Point3 {
    let n = samples.len() as f64;
    let mut m = [0.0; 3];
    for p in samples {
        for k in 0..3 {
            m[k] += p[k];
        }
    }
    m.map(|v| v / n)
}

/// Seeded uniform subsample of at most `cap` points, in original order.
pub fn subsample(points: &[Point3], cap: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    if points.len() <= cap {
        return points.to_vec();
    }
    let mut idx = rand::seq::index::sample(rng, points.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i]).collect()
}

/// Color samples of one region with their hull.
#[derive(Debug, Clone)]
pub struct Gamut {
    samples: Vec<Point3>,
    hull: Hull3,
    mean: Point3,
}

impl Gamut {
    pub fn new(samples: Vec<Point3>) -> Result<Self, TransferError> {
        if samples.is_empty() {
            return Err(TransferError::EmptyRegion("gamut samples"));
        }
        let hull = quickhull3(&samples)?;
        let mean = mean_of(&samples);
        Ok(Self { samples, hull, mean })
    }

    pub fn samples(&self) -> &[Point3] {
        &self.samples
    }

    pub fn hull(&self) -> &Hull3 {
        &self.hull
    }

    pub fn mean(&self) -> Point3 {
        self.mean
    }

    pub fn volume(&self) -> f64 {
        self.hull.volume()
    }

    /// Per-axis standard deviation of the samples.
    pub fn std_dev(&self) -> [f64; 3] {
        let n = self.samples.len() as f64;
        let mut var = [0.0; 3];
        for p in &self.samples {
            for k in 0..3 {
                var[k] += (p[k] - self.mean[k]).powi(2) / n;
            }
        }
        var.map(f64::sqrt)
    }
}

/// Linear map on mean-centered Lab points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorTransform {
    pub matrix: [[f64; 3]; 3],
}

impl ColorTransform {
    pub fn identity() -> Self {
        Self::diagonal([1.0; 3])
    }

    pub fn diagonal(d: [f64; 3]) -> Self {
        let mut matrix = [[0.0; 3]; 3];
        for k in 0..3 {
            matrix[k][k] = d[k];
        }
        Self { matrix }
    }

    /// Row-major 9-vector form.
    pub fn from_params(p: &[f64]) -> Self {
        let mut matrix = [[0.0; 3]; 3];
        for (k, v) in p.iter().take(9).enumerate() {
            matrix[k / 3][k % 3] = *v;
        }
        Self { matrix }
    }

    pub fn params(&self) -> Vec<f64> {
        self.matrix.iter().flatten().copied().collect()
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().flatten().all(|v| v.is_finite())
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
        ]
    }

    /// Frobenius distance to another transform.
    pub fn distance(&self, other: &ColorTransform) -> f64 {
        self.params()
            .iter()
            .zip(other.params())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

const MIN_DETERMINANT: f64 = 1e-9;

/// `2·vol(hull(T·Ds ∪ De)) − vol(De) − vol(T·Ds)`.
///
/// Only hull vertices of `Ds` are mapped: a linear map sends the hull of a
/// set onto the hull of its image.
pub fn gamut_energy(t: &ColorTransform, ds: &Gamut, de: &Gamut) -> Result<f64, TransferError> {
    let det = t.determinant();
    if !t.is_finite() || !(det.abs() > MIN_DETERMINANT) {
        return Err(NumericError::DegenerateGamut.into());
    }
    let mapped_volume = det.abs() * ds.volume();
    let mut pts: Vec<Point3> = ds.hull().vertices().iter().map(|&p| t.apply(p)).collect();
    pts.extend_from_slice(de.hull().vertices());
    let union = quickhull3(&pts)?.volume();
    // Union volume dominates both terms; clip rounding noise below zero.
    Ok((2.0 * union - de.volume() - mapped_volume).max(0.0))
}

/// Outcome of the gamut fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GamutFit {
    pub transform: ColorTransform,
    pub energy: f64,
    pub initial_energy: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// False when the iteration budget ran out; the transform is the best seen.
    pub converged: bool,
}

/// Minimizes [`gamut_energy`] over all nine matrix entries with Nelder–Mead,
/// starting from `diag(σe/σs)`.
pub fn fit_gamut_transform(ds: &Gamut, de: &Gamut, cfg: &TransferConfig) -> Result<GamutFit, TransferError> {
    let (ss, se) = (ds.std_dev(), de.std_dev());
    let init = ColorTransform::diagonal([se[0] / ss[0], se[1] / ss[1], se[2] / ss[2]]);
    let initial_energy = gamut_energy(&init, ds, de)?;
    let norm = de.volume();
    let objective = |p: &[f64]| match gamut_energy(&ColorTransform::from_params(p), ds, de) {
        Ok(e) => e / norm,
        Err(_) => f64::INFINITY,
    };
    let scale = 0.1 * init.params().iter().map(|v| v.abs()).sum::<f64>() / 3.0;
    let min = nelder_mead(objective, &init.params(), scale, cfg.tol, cfg.max_iter)?;
    let (transform, energy) = if min.value * norm <= initial_energy {
        (ColorTransform::from_params(&min.x), min.value * norm)
    } else {
        (init, initial_energy)
    };
    Ok(GamutFit {
        transform,
        energy,
        initial_energy,
        iterations: min.iterations,
        evaluations: min.evaluations,
        converged: min.converged,
    })
}

/// Result of one region transfer.
#[derive(Debug, Clone)]
pub struct TransferOutput {
    /// Subject-sized image; pixels outside `support` equal the subject.
    pub styled: Image,
    pub support: RegionMask,
    /// `None` when a gamut was degenerate and only the mean was moved.
    pub fit: Option<GamutFit>,
    pub subject_gains: [f64; 3],
    pub example_gains: [f64; 3],
}

fn balanced_lab(img: &Image, x: usize, y: usize, gains: &[f64; 3]) -> Point3 {
    let p = img.rgb(x, y);
    srgb_to_lab_pixel([p[0] * gains[0], p[1] * gains[1], p[2] * gains[2]])
}

/// Transfers the example region's style onto the subject region.
///
/// Both images are gray-world balanced first. The subject's gains are
/// divided back out at the end so the result keeps the subject's cast.
pub fn transfer_region(
    subject: &Image,
    example: &Image,
    subj_matte: &AlphaMatte,
    ex_mask: &RegionMask,
    cfg: &TransferConfig,
) -> Result<TransferOutput, TransferError> {
    cfg.validate()?;
    if subject.dims() != (subj_matte.width(), subj_matte.height()) {
        return Err(TransferError::DimensionMismatch(format!(
            "subject {:?} vs matte {:?}",
            subject.dims(),
            (subj_matte.width(), subj_matte.height())
        )));
    }
    if example.dims() != (ex_mask.width(), ex_mask.height()) {
        return Err(TransferError::DimensionMismatch(format!(
            "example {:?} vs mask {:?}",
            example.dims(),
            (ex_mask.width(), ex_mask.height())
        )));
    }
    let support = subj_matte.support(MATTE_THRESHOLD);
    let bbox = support.bbox().ok_or(TransferError::EmptyRegion("subject matte"))?;
    if ex_mask.is_empty() {
        return Err(TransferError::EmptyRegion("example mask"));
    }
    let (_, gs) = gray_world_white_balance(subject)?;
    let (_, ge) = gray_world_white_balance(example)?;

    let (bw, bh) = (bbox.width(), bbox.height());
    let mut box_lab = Vec::with_capacity(bw * bh);
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            box_lab.push(balanced_lab(subject, x, y, &gs));
        }
    }
    let inside: Vec<usize> = (0..bw * bh)
        .filter(|&i| support.get(bbox.x0 + i % bw, bbox.y0 + i / bw))
        .collect();
    let subject_samples: Vec<Point3> = inside.iter().map(|&i| box_lab[i]).collect();
    let mut example_samples = Vec::with_capacity(ex_mask.count());
    for y in 0..example.height() {
        for x in 0..example.width() {
            if ex_mask.get(x, y) {
                example_samples.push(balanced_lab(example, x, y, &ge));
            }
        }
    }

    // Luminance: histogram match inside the support, then the gradient blend
    // over the bounding box with subject luminance outside the support.
    let ls_box: Vec<f64> = box_lab.iter().map(|p| p[0]).collect();
    let ls: Vec<f64> = subject_samples.iter().map(|p| p[0]).collect();
    let le: Vec<f64> = example_samples.iter().map(|p| p[0]).collect();
    let li = match_luminance_histogram(&ls, &le, cfg.bins)?;
    let mut li_box = ls_box.clone();
    for (&i, &v) in inside.iter().zip(&li) {
        li_box[i] = v;
    }
    let lo_box = blend_luminance_gradient(&ls_box, &li_box, bw, bh, cfg.sigma, cfg.solver_tol)?;

    let (cs, _) = center_gamut(&subject_samples)?;
    let (ce, mu_e) = center_gamut(&example_samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sub_s = subsample(&cs, cfg.sample_cap, &mut rng);
    let sub_e = subsample(&ce, cfg.sample_cap, &mut rng);
    let fit = match (Gamut::new(sub_s), Gamut::new(sub_e)) {
        (Ok(ds), Ok(de)) => Some(fit_gamut_transform(&ds, &de, cfg)?),
        (Err(TransferError::Numeric(NumericError::DegenerateGamut)), _)
        | (_, Err(TransferError::Numeric(NumericError::DegenerateGamut))) => None,
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    let t = fit.map(|f| f.transform).unwrap_or_else(ColorTransform::identity);

    let mut styled = subject.clone();
    for (k, &i) in inside.iter().enumerate() {
        let moved = t.apply(cs[k]);
        let lab = [lo_box[i], moved[1] + mu_e[1], moved[2] + mu_e[2]];
        let rgb = lab_to_srgb_pixel_unclamped(lab);
        let px = styled.pixel_mut(bbox.x0 + i % bw, bbox.y0 + i / bw);
        for c in 0..3 {
            px[c] = (rgb[c] / gs[c]).clamp(0.0, 1.0);
        }
    }
    Ok(TransferOutput {
        styled,
        support,
        fit,
        subject_gains: gs,
        example_gains: ge,
    })
}
