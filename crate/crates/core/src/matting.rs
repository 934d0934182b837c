//! Automatic trimaps and soft alpha mattes.
//!
//! A region mask is expanded with a disk max-filter and shrunk by the same
//! band to get a trimap; the unknown band is then filled by minimizing the
//! local color-line matting energy `αᵀLα + λ Σ (α_p − t_p)²` over labeled
//! pixels `p`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::imaging::{self, Image, ImagingError};
use crate::numeric::{cg_solve, NumericError, TripletBuilder};
use crate::semantics::RegionMask;

#[derive(Debug, Error)]
pub enum MattingError {
    #[error("EmptyForeground: erosion by {band} px removes the whole mask")]
    EmptyForeground { band: usize },
    #[error("UnconstrainedMatte: trimap needs both foreground and background pixels")]
    UnconstrainedMatte,
    #[error("DimensionMismatch: image {image:?} vs trimap {trimap:?}")]
    DimensionMismatch {
        image: (usize, usize),
        trimap: (usize, usize),
    },
    #[error("invalid matting parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrimapLabel {
    Background,
    Unknown,
    Foreground,
}

impl TrimapLabel {
    pub fn gray_level(self) -> u8 {
        match self {
            TrimapLabel::Background => 0,
            TrimapLabel::Unknown => 128,
            TrimapLabel::Foreground => 255,
        }
    }

    /// Nearest of the three encoded levels.
    pub fn from_gray_level(v: u8) -> Self {
        match v {
            0..=63 => TrimapLabel::Background,
            64..=191 => TrimapLabel::Unknown,
            _ => TrimapLabel::Foreground,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trimap {
    width: usize,
    height: usize,
    labels: Vec<TrimapLabel>,
}

impl Trimap {
    pub fn from_labels(width: usize, height: usize, labels: Vec<TrimapLabel>) -> Self {
        assert_eq!(labels.len(), width * height, "trimap size");
        Self { width, height, labels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[TrimapLabel] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> TrimapLabel {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, label: TrimapLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn mask_of(&self, label: TrimapLabel) -> RegionMask {
        RegionMask::from_bits(self.width, self.height, self.labels.iter().map(|&l| l == label).collect())
    }

    /// 8-bit grayscale PNG with levels {0, 128, 255}.
    pub fn encode_png(&self) -> Result<Vec<u8>, ImagingError> {
        let raw = self.labels.iter().map(|l| l.gray_level()).collect();
        imaging::io::encode_gray_bytes(self.width, self.height, raw)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Trimap, ImagingError> {
        let gray = imaging::decode_gray(bytes)?;
        let labels = gray
            .data()
            .iter()
            .map(|&v| TrimapLabel::from_gray_level(imaging::quantize(v)))
            .collect();
        Ok(Trimap::from_labels(gray.width(), gray.height(), labels))
    }
}

/// Per-pixel opacity in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMatte {
    width: usize,
    height: usize,
    alpha: Vec<f64>,
}

impl AlphaMatte {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            alpha: vec![value; width * height],
        }
    }

    /// Values are clamped into `[0, 1]`.
    pub fn from_values(width: usize, height: usize, mut alpha: Vec<f64>) -> Self {
        assert_eq!(alpha.len(), width * height, "matte size");
        for a in &mut alpha {
            *a = a.clamp(0.0, 1.0);
        }
        Self { width, height, alpha }
    }

    pub fn from_mask(mask: &RegionMask) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            alpha: mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.alpha[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.alpha[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Pixels whose opacity exceeds `threshold`.
    pub fn support(&self, threshold: f64) -> RegionMask {
        RegionMask::from_bits(self.width, self.height, self.alpha.iter().map(|&a| a > threshold).collect())
    }

    pub fn to_image(&self) -> Image {
        Image::from_data(self.width, self.height, 1, self.alpha.clone()).expect("matte dimensions")
    }

    pub fn from_image(img: &Image) -> Self {
        let alpha = img.data().chunks_exact(img.channels()).map(|p| p[0]).collect();
        Self::from_values(img.width(), img.height(), alpha)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImagingError> {
        imaging::encode_png_gray(&self.to_image())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, ImagingError> {
        Ok(Self::from_image(&imaging::decode_gray(bytes)?))
    }
}

fn isqrt(v: usize) -> usize {
    let mut r = (v as f64).sqrt() as usize;
    while r * r > v {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    r
}

/// Max-filter of a binary mask over the disk `{(dx, dy) : dx² + dy² ≤ r²}`.
///
/// Pixels outside the image contribute nothing.
pub fn dilate(mask: &RegionMask, radius: usize) -> RegionMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    // Row prefix counts make each disk row a constant-time span query.
    let mut prefix = vec![0u32; (w + 1) * h];
    for y in 0..h {
        for x in 0..w {
            prefix[y * (w + 1) + x + 1] = prefix[y * (w + 1) + x] + mask.get(x, y) as u32;
        }
    }
    let r = radius as isize;
    let half: Vec<usize> = (-r..=r).map(|dy| isqrt((r * r - dy * dy) as usize)).collect();
    RegionMask::from_fn(w, h, |x, y| {
        (-r..=r).any(|dy| {
            let yy = y as isize + dy;
            if yy < 0 || yy >= h as isize {
                return false;
            }
            let hw = half[(dy + r) as usize];
            let x0 = x.saturating_sub(hw);
            let x1 = (x + hw).min(w - 1);
            let row = yy as usize * (w + 1);
            prefix[row + x1 + 1] > prefix[row + x0]
        })
    })
}

/// Erosion as the complement of the dilated complement.
pub fn erode(mask: &RegionMask, radius: usize) -> RegionMask {
    dilate(&mask.complement(), radius).complement()
}

/// Foreground = eroded mask, Unknown = dilated mask minus Foreground.
pub fn make_trimap(mask: &RegionMask, band: usize) -> Result<Trimap, MattingError> {
    if band == 0 {
        return Err(MattingError::InvalidParameter("band must be at least 1".into()));
    }
    let fg = erode(mask, band);
    if fg.is_empty() {
        return Err(MattingError::EmptyForeground { band });
    }
    let grown = dilate(mask, band);
    let labels = fg
        .bits()
        .iter()
        .zip(grown.bits())
        .map(|(&f, &g)| match (f, g) {
            (true, _) => TrimapLabel::Foreground,
            (false, true) => TrimapLabel::Unknown,
            (false, false) => TrimapLabel::Background,
        })
        .collect();
    Ok(Trimap::from_labels(mask.width(), mask.height(), labels))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatteParams {
    /// Color-line regularization.
    pub eps: f64,
    /// Weight pulling labeled pixels to their labels.
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MatteParams {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            lambda: 100.0,
            tol: 1e-8,
            max_iter: 20_000,
        }
    }
}

/// Solves the soft matte with default tolerance and iteration budget.
pub fn solve_matte(img: &Image, trimap: &Trimap, eps: f64, lambda: f64) -> Result<AlphaMatte, MattingError> {
    solve_matte_with(
        img,
        trimap,
        &MatteParams {
            eps,
            lambda,
            ..MatteParams::default()
        },
    )
}

/// Closed-form matte over 3×3 windows.
///
/// The linear system covers the unknown band plus a two-pixel collar of
/// labeled pixels; labeled pixels beyond the collar are held at their label.
/// Labeled pixels are reset to exactly 0 or 1 afterwards.
pub fn solve_matte_with(img: &Image, trimap: &Trimap, params: &MatteParams) -> Result<AlphaMatte, MattingError> {
    let (w, h) = (img.width(), img.height());
    if (w, h) != (trimap.width(), trimap.height()) {
        return Err(MattingError::DimensionMismatch {
            image: (w, h),
            trimap: (trimap.width(), trimap.height()),
        });
    }
    if !(params.eps > 0.0) || !(params.lambda > 0.0) {
        return Err(MattingError::InvalidParameter(format!(
            "eps = {}, lambda = {}",
            params.eps, params.lambda
        )));
    }
    if trimap.count(TrimapLabel::Foreground) == 0 || trimap.count(TrimapLabel::Background) == 0 {
        return Err(MattingError::UnconstrainedMatte);
    }
    let target = |i: usize| if trimap.labels[i] == TrimapLabel::Foreground { 1.0 } else { 0.0 };
    let mut alpha: Vec<f64> = (0..w * h).map(target).collect();
    let unknown = trimap.mask_of(TrimapLabel::Unknown);
    if unknown.is_empty() || w < 3 || h < 3 {
        return Ok(AlphaMatte::from_values(w, h, alpha));
    }

    // Chebyshev radius 2 reaches every pixel sharing a window with an unknown.
    let active = chebyshev_dilate(&unknown, 2);
    let mut var_index = vec![usize::MAX; w * h];
    let mut vars = Vec::new();
    for (i, &a) in active.bits().iter().enumerate() {
        if a {
            var_index[i] = vars.len();
            vars.push(i);
        }
    }
    let n = vars.len();
    let mut builder = TripletBuilder::with_capacity(n, n, n * 30);
    let mut rhs = vec![0.0; n];
    for (k, &i) in vars.iter().enumerate() {
        if trimap.labels[i] != TrimapLabel::Unknown {
            builder.push(k, k, params.lambda);
            rhs[k] += params.lambda * target(i);
        }
    }

    let windows = chebyshev_dilate(&active, 1);
    let mut block = [[0.0; 9]; 9];
    for cy in 1..h - 1 {
        for cx in 1..w - 1 {
            if !windows.get(cx, cy) {
                continue;
            }
            let idx: [usize; 9] = std::array::from_fn(|k| (cy + k / 3 - 1) * w + (cx + k % 3 - 1));
            if idx.iter().all(|&i| var_index[i] == usize::MAX) {
                continue;
            }
            window_laplacian(img, &idx, params.eps, &mut block);
            for a in 0..9 {
                let va = var_index[idx[a]];
                if va == usize::MAX {
                    continue;
                }
                for b in 0..9 {
                    let vb = var_index[idx[b]];
                    if vb == usize::MAX {
                        rhs[va] -= block[a][b] * alpha[idx[b]];
                    } else {
                        builder.push(va, vb, block[a][b]);
                    }
                }
            }
        }
    }
    let system = builder.build();
    let solution = cg_solve(&system, &rhs, params.tol, params.max_iter)?;
    for (k, &i) in vars.iter().enumerate() {
        if trimap.labels[i] == TrimapLabel::Unknown {
            alpha[i] = solution[k];
        }
    }
    Ok(AlphaMatte::from_values(w, h, alpha))
}

fn chebyshev_dilate(mask: &RegionMask, r: usize) -> RegionMask {
    let (w, h) = (mask.width(), mask.height());
    let mut rows = RegionMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    rows.set(xx, y, true);
                }
            }
        }
    }
    let mut out = RegionMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if rows.get(x, y) {
                for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                    out.set(x, yy, true);
                }
            }
        }
    }
    out
}

/// Matting Laplacian contribution of one 3×3 window:
/// `δ_ij − (1 + (I_i − μ)ᵀ (Σ + ε/9 · Id)⁻¹ (I_j − μ)) / 9`.
fn window_laplacian(img: &Image, idx: &[usize; 9], eps: f64, out: &mut [[f64; 9]; 9]) {
    let c = img.channels();
    let data = img.data();
    let color = |i: usize| -> Vector3<f64> {
        if c == 1 {
            Vector3::new(data[i], 0.0, 0.0)
        } else {
            Vector3::new(data[i * 3], data[i * 3 + 1], data[i * 3 + 2])
        }
    };
    let px: [Vector3<f64>; 9] = std::array::from_fn(|k| color(idx[k]));
    let mean = px.iter().sum::<Vector3<f64>>() / 9.0;
    let centered: [Vector3<f64>; 9] = std::array::from_fn(|k| px[k] - mean);
    let cov = centered.iter().map(|d| d * d.transpose()).sum::<Matrix3<f64>>() / 9.0;
    let reg = eps / 9.0;
    let inv = if c == 1 {
        Matrix3::from_diagonal(&Vector3::new(1.0 / (cov[(0, 0)] + reg), 0.0, 0.0))
    } else {
        (cov + Matrix3::identity() * reg)
            .try_inverse()
            .unwrap_or_else(Matrix3::zeros)
    };
    let proj: [Vector3<f64>; 9] = std::array::from_fn(|k| inv * centered[k]);
    for a in 0..9 {
        for b in 0..9 {
            let delta = if a == b { 1.0 } else { 0.0 };
            out[a][b] = delta - (1.0 + centered[a].dot(&proj[b])) / 9.0;
        }
    }
}

/// Trimap band for an image, proportional to 4 px at 512 px.
pub fn default_band(width: usize, height: usize) -> usize {
    ((4.0 * width.max(height) as f64 / 512.0).round() as usize).max(1)
}
