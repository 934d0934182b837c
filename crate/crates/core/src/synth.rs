//! Deterministic synthetic faces with matching 83-point landmarks.
//!
//! Used to produce fixture images and landmark files: shapes are drawn
//! analytically with 4×4 supersampled edges, shading and seeded per-pixel
//! noise so every region has a full 3D color gamut.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consistency::{TrackDocument, TrackObservation, TracksDocument};
use crate::imaging::Image;
use crate::semantics::{GroupPoints, LandmarkDocument, LandmarkSet, Point2, RegionMask};

pub type Rgb = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct FaceParams {
    pub name: String,
    pub width: usize,
    pub height: usize,
    /// Face center as fractions of width/height.
    pub center: [f64; 2],
    /// Face half-axes as fractions of width/height.
    pub radii: [f64; 2],
    pub background: Rgb,
    pub skin: Rgb,
    pub lips: Rgb,
    pub teeth: Rgb,
    pub sclera: Rgb,
    pub iris: Rgb,
    pub brows: Rgb,
    pub hair: Rgb,
    pub noise: f64,
    pub seed: u64,
}

impl Default for FaceParams {
    fn default() -> Self {
        Self {
            name: "subject.png".into(),
            width: 512,
            height: 512,
            center: [0.5, 0.52],
            radii: [0.30, 0.38],
            background: [0.55, 0.60, 0.66],
            skin: [0.86, 0.69, 0.58],
            lips: [0.74, 0.40, 0.42],
            teeth: [0.92, 0.90, 0.82],
            sclera: [0.93, 0.91, 0.89],
            iris: [0.36, 0.24, 0.14],
            brows: [0.30, 0.22, 0.16],
            hair: [0.22, 0.15, 0.11],
            noise: 0.03,
            seed: 0,
        }
    }
}

impl FaceParams {
    /// A differently sized and posed face with strong makeup colors.
    pub fn example_a() -> Self {
        Self {
            name: "example_a.png".into(),
            width: 400,
            height: 440,
            center: [0.47, 0.5],
            radii: [0.33, 0.37],
            background: [0.82, 0.80, 0.74],
            skin: [0.93, 0.78, 0.70],
            lips: [0.80, 0.10, 0.22],
            teeth: [0.97, 0.97, 0.95],
            sclera: [0.95, 0.95, 0.95],
            iris: [0.20, 0.42, 0.62],
            brows: [0.15, 0.10, 0.08],
            hair: [0.45, 0.25, 0.12],
            noise: 0.04,
            seed: 11,
            ..Self::default()
        }
    }

    pub fn example_b() -> Self {
        Self {
            name: "example_b.png".into(),
            width: 480,
            height: 520,
            center: [0.53, 0.53],
            radii: [0.29, 0.36],
            background: [0.35, 0.38, 0.40],
            skin: [0.72, 0.52, 0.40],
            lips: [0.55, 0.25, 0.45],
            teeth: [0.90, 0.88, 0.80],
            sclera: [0.90, 0.90, 0.88],
            iris: [0.25, 0.45, 0.25],
            brows: [0.35, 0.25, 0.18],
            hair: [0.08, 0.07, 0.07],
            noise: 0.035,
            seed: 23,
            ..Self::default()
        }
    }
}

/// Rendered face: image, landmarks and the drawn hair region.
#[derive(Debug, Clone)]
pub struct SyntheticFace {
    pub image: Image,
    pub landmarks: LandmarkSet,
    pub hair_mask: RegionMask,
}

struct Ellipse {
    c: Point2,
    r: Point2,
}

impl Ellipse {
    fn inside(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.c[0]) / self.r[0];
        let dy = (y - self.c[1]) / self.r[1];
        dx * dx + dy * dy <= 1.0
    }

    fn ring(&self, n: usize, start: f64) -> Vec<Point2> {
        (0..n)
            .map(|k| {
                let t = start + std::f64::consts::TAU * k as f64 / n as f64;
                [self.c[0] + self.r[0] * t.cos(), self.c[1] + self.r[1] * t.sin()]
            })
            .collect()
    }
}

fn inside_polygon(poly: &[Point2], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn brow(center: Point2, half_len: f64, thickness: f64, mirror: bool) -> Vec<Point2> {
    // Upper arc left→right, then lower arc right→left.
    let s = if mirror { -1.0 } else { 1.0 };
    let arch = |t: f64| -0.35 * half_len * (1.0 - t * t) + s * 0.08 * half_len * t;
    let mut pts = Vec::with_capacity(8);
    for k in 0..4 {
        let t = -1.0 + 2.0 * k as f64 / 3.0;
        pts.push([center[0] + half_len * t, center[1] + arch(t) - thickness * (1.0 - 0.4 * t.abs())]);
    }
    for k in (0..4).rev() {
        let t = -1.0 + 2.0 * k as f64 / 3.0;
        pts.push([center[0] + half_len * t, center[1] + arch(t) + thickness * 0.2]);
    }
    pts
}

impl SyntheticFace {
    pub fn render(p: &FaceParams) -> SyntheticFace {
        let (w, h) = (p.width as f64, p.height as f64);
        let face = Ellipse {
            c: [p.center[0] * w, p.center[1] * h],
            r: [p.radii[0] * w, p.radii[1] * h],
        };
        let [cx, cy] = face.c;
        let [rx, ry] = face.r;
        let hair = Ellipse {
            c: [cx, cy - 0.12 * ry],
            r: [1.18 * rx, 1.05 * ry],
        };
        let eye_l = Ellipse {
            c: [cx - 0.40 * rx, cy - 0.12 * ry],
            r: [0.22 * rx, 0.09 * ry],
        };
        let eye_r = Ellipse {
            c: [cx + 0.40 * rx, cy - 0.12 * ry],
            r: [0.22 * rx, 0.09 * ry],
        };
        let iris_l = Ellipse {
            c: eye_l.c,
            r: [0.08 * rx, 0.08 * rx],
        };
        let iris_r = Ellipse {
            c: eye_r.c,
            r: [0.08 * rx, 0.08 * rx],
        };
        let brow_l = brow([cx - 0.42 * rx, cy - 0.32 * ry], 0.26 * rx, 0.07 * ry, false);
        let brow_r = brow([cx + 0.42 * rx, cy - 0.32 * ry], 0.26 * rx, 0.07 * ry, true);
        let mouth = Ellipse {
            c: [cx, cy + 0.50 * ry],
            r: [0.36 * rx, 0.13 * ry],
        };
        let inner = Ellipse {
            c: mouth.c,
            r: [0.22 * rx, 0.045 * ry],
        };

        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let mut image = Image::new(p.width, p.height, 3);
        let mut hair_mask = RegionMask::new(p.width, p.height);
        const SS: usize = 4;
        for y in 0..p.height {
            for x in 0..p.width {
                let mut acc = [0.0; 3];
                let mut hair_cover = 0usize;
                for sy in 0..SS {
                    for sx in 0..SS {
                        let fx = x as f64 + (sx as f64 + 0.5) / SS as f64;
                        let fy = y as f64 + (sy as f64 + 0.5) / SS as f64;
                        let t = fy / h;
                        let mut c = [
                            p.background[0] * (1.05 - 0.1 * t),
                            p.background[1] * (1.05 - 0.1 * t),
                            p.background[2] * (0.95 + 0.1 * t),
                        ];
                        if hair.inside(fx, fy) && fy < cy + 0.1 * ry && !face.inside(fx, fy) {
                            let shade = 0.85 + 0.3 * ((fx - cx) / hair.r[0]).abs();
                            c = p.hair.map(|v| v * shade);
                            hair_cover += 1;
                        }
                        if face.inside(fx, fy) {
                            let d = ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2);
                            let shade = 1.05 - 0.18 * d - 0.05 * (fx - cx) / rx;
                            c = [p.skin[0] * shade, p.skin[1] * shade, p.skin[2] * (shade * 0.97 + 0.03 * t)];
                        }
                        if inside_polygon(&brow_l, fx, fy) || inside_polygon(&brow_r, fx, fy) {
                            c = p.brows;
                        }
                        for (eye, iris) in [(&eye_l, &iris_l), (&eye_r, &iris_r)] {
                            if eye.inside(fx, fy) {
                                let dy = (fy - eye.c[1]) / eye.r[1];
                                c = p.sclera.map(|v| v * (1.0 - 0.08 * dy * dy));
                                if iris.inside(fx, fy) {
                                    let dr = ((fx - iris.c[0]).powi(2) + (fy - iris.c[1]).powi(2)).sqrt() / iris.r[0];
                                    c = [p.iris[0] * (0.7 + 0.4 * dr), p.iris[1] * (0.75 + 0.35 * dr), p.iris[2] * (0.8 + 0.3 * dr)];
                                }
                            }
                        }
                        if mouth.inside(fx, fy) {
                            let dy = (fy - mouth.c[1]) / mouth.r[1];
                            let dx = (fx - mouth.c[0]) / mouth.r[0];
                            let shade = 1.0 - 0.15 * dy - 0.1 * dx * dx;
                            c = [p.lips[0] * shade, p.lips[1] * (shade + 0.05 * dx), p.lips[2] * shade];
                            if inner.inside(fx, fy) {
                                let dx = (fx - inner.c[0]) / inner.r[0];
                                c = p.teeth.map(|v| v * (1.0 - 0.12 * dx * dx));
                            }
                        }
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                    }
                }
                let n = (SS * SS) as f64;
                let px = image.pixel_mut(x, y);
                for k in 0..3 {
                    let jitter = rng.random_range(-p.noise..=p.noise);
                    px[k] = (acc[k] / n + jitter).clamp(0.0, 1.0);
                }
                hair_mask.set(x, y, hair_cover * 2 >= SS * SS);
            }
        }

        let nose_pts: Vec<Point2> = (0..10)
            .map(|k| {
                let t = k as f64 / 9.0;
                if k < 5 {
                    [cx + 0.02 * rx * (t * 10.0 - 2.0), cy - 0.05 * ry + 0.25 * ry * t * 2.0]
                } else {
                    [cx - 0.14 * rx + 0.28 * rx * (k - 5) as f64 / 4.0, cy + 0.25 * ry]
                }
            })
            .collect();

        let clamp = |pts: Vec<Point2>| -> Vec<Point2> {
            pts.into_iter()
                .map(|[x, y]| [x.clamp(0.0, w), y.clamp(0.0, h)])
                .collect()
        };
        let doc = LandmarkDocument {
            image: p.name.clone(),
            width: p.width as u32,
            height: p.height as u32,
            groups: GroupPoints {
                face_contour: clamp(face.ring(19, -std::f64::consts::FRAC_PI_2)),
                left_eyebrow: clamp(brow_l),
                right_eyebrow: clamp(brow_r),
                left_eye: clamp(eye_l.ring(10, 0.0)),
                right_eye: clamp(eye_r.ring(10, 0.0)),
                nose: clamp(nose_pts),
                mouth_outer: clamp(mouth.ring(12, 0.0)),
                mouth_inner: clamp(inner.ring(6, 0.0)),
            },
        };
        let landmarks = LandmarkSet::from_document(doc).expect("synthetic landmarks are valid");
        SyntheticFace {
            image,
            landmarks,
            hair_mask,
        }
    }
}

/// Collection rendered from one albedo image with `I' = (a·I)^γ` per channel.
#[derive(Debug, Clone)]
pub struct SyntheticCollection {
    pub images: Vec<Image>,
    pub tracks: TracksDocument,
    pub a: Vec<[f64; 3]>,
    pub gamma: Vec<[f64; 3]>,
}

/// `m` images of `size`×`size` with `n` tracks at pixel centers, roughly 30%
/// of observations dropped. Image 0 keeps `a = 1`, `γ = 1`, so the
/// parameters are already in the reference gauge.
pub fn synthetic_collection(m: usize, size: usize, n: usize, seed: u64) -> SyntheticCollection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Albedo stays well inside (0, 1) so 8-bit storage neither clips nor
    // crushes the darkest samples.
    let albedo = Image::from_fn(size, size, 3, |x, y| {
        let u = x as f64 / size as f64;
        let v = y as f64 / size as f64;
        [
            0.25 + 0.4 * u,
            0.25 + 0.4 * v,
            0.25 + 0.4 * (0.5 + 0.5 * (7.0 * u + 5.0 * v).sin()),
        ]
    });
    let mut a = vec![[1.0; 3]];
    let mut gamma = vec![[1.0; 3]];
    for _ in 1..m {
        a.push(std::array::from_fn(|_| rng.random_range(0.85..1.25)));
        gamma.push(std::array::from_fn(|_| rng.random_range(0.85..1.2)));
    }
    let images = (0..m)
        .map(|i| {
            let mut img = albedo.clone();
            for px in img.data_mut().chunks_exact_mut(3) {
                for c in 0..3 {
                    px[c] = (a[i][c] * px[c]).powf(gamma[i][c]);
                }
            }
            img
        })
        .collect();
    let tracks = (0..n)
        .map(|j| {
            let x = rng.random_range(0..size) as f64 + 0.5;
            let y = rng.random_range(0..size) as f64 + 0.5;
            let obs = (0..m)
                .filter(|&i| i == j % m || i == (j + 1) % m || rng.random::<f64>() >= 0.3)
                .map(|img| TrackObservation { img, x, y })
                .collect();
            TrackDocument { obs }
        })
        .collect();
    SyntheticCollection {
        images,
        tracks: TracksDocument {
            images: (0..m).map(|i| format!("view_{i}.png")).collect(),
            tracks,
        },
        a,
        gamma,
    }
}
