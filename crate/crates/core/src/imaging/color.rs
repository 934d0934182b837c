use super::{Image, ImagingError};

// sRGB primaries, D65 white.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];
// Row sums of RGB_TO_XYZ so that RGB white lands exactly on the white point.
const WHITE: [f64; 3] = [
    0.4124564 + 0.3575761 + 0.1804375,
    0.2126729 + 0.7151522 + 0.0721750,
    0.0193339 + 0.1191920 + 0.9503041,
];
const DELTA: f64 = 6.0 / 29.0;

const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// CIE L*a*b* image (D65), three channels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl LabImage {
    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if data.len() != width * height * 3 {
            return Err(ImagingError::DimensionMismatch(format!(
                "{} samples for {width}x{height} Lab",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, lab: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&lab);
    }

    /// The L channel as a separate row-major plane.
    pub fn lightness(&self) -> Vec<f64> {
        self.data.chunks_exact(3).map(|p| p[0]).collect()
    }
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Converts one sRGB sample triple in `[0, 1]` to L*a*b*.
pub fn srgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz = mat_vec(&RGB_TO_XYZ, lin);
    let fx = lab_f(xyz[0] / WHITE[0]);
    let fy = lab_f(xyz[1] / WHITE[1]);
    let fz = lab_f(xyz[2] / WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Converts L*a*b* to sRGB, clamping out-of-gamut results to `[0, 1]`.
pub fn lab_to_srgb_pixel(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        WHITE[0] * lab_f_inv(fx),
        WHITE[1] * lab_f_inv(fy),
        WHITE[2] * lab_f_inv(fz),
    ];
    mat_vec(&XYZ_TO_RGB, xyz).map(|c| linear_to_srgb(c.clamp(0.0, 1.0)).clamp(0.0, 1.0))
}

/// Lab to sRGB without any clamping; values may leave `[0, 1]`.
pub fn lab_to_srgb_pixel_unclamped(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        WHITE[0] * lab_f_inv(fx),
        WHITE[1] * lab_f_inv(fy),
        WHITE[2] * lab_f_inv(fz),
    ];
    mat_vec(&XYZ_TO_RGB, xyz).map(|c| if c < 0.0 { 12.92 * c } else { linear_to_srgb(c) })
}

pub fn rgb_to_lab(img: &Image) -> Result<LabImage, ImagingError> {
    if img.channels() != 3 {
        return Err(ImagingError::ChannelMismatch {
            expected: 3,
            found: img.channels(),
        });
    }
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|p| srgb_to_lab_pixel([p[0], p[1], p[2]]))
        .collect();
    LabImage::from_data(img.width(), img.height(), data)
}

pub fn lab_to_rgb(img: &LabImage) -> Result<Image, ImagingError> {
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|p| lab_to_srgb_pixel([p[0], p[1], p[2]]))
        .collect();
    Image::from_data(img.width(), img.height(), 3, data)
}

/// Gray-world white balance.
///
/// Each channel is scaled so that its mean equals the mean Rec. 709 luma of
/// the input. Returns the balanced image and the per-channel gains.
pub fn gray_world_white_balance(img: &Image) -> Result<(Image, [f64; 3]), ImagingError> {
    if img.channels() != 3 {
        return Err(ImagingError::ChannelMismatch {
            expected: 3,
            found: img.channels(),
        });
    }
    let means = img.channel_means();
    if let Some(c) = means.iter().position(|&m| m < 1e-6) {
        return Err(ImagingError::ZeroChannel(c));
    }
    let luma: f64 = (0..3).map(|c| LUMA[c] * means[c]).sum();
    let gains = [luma / means[0], luma / means[1], luma / means[2]];
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        for c in 0..3 {
            px[c] = (px[c] * gains[c]).clamp(0.0, 1.0);
        }
    }
    Ok((out, gains))
}
