//! Collection-wide color consistency.
//!
//! Each image is modeled as `I' = (a·I)^γ` per channel, where `I` is a
//! per-scene-point albedo shared by all images. Taking logs turns the
//! observation matrix into `log I'_ij = γ_i·log k_j + γ_i·log a_i`, which is
//! fitted by alternating least squares over the observed entries only.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::Image;

/// Sanity bounds on fitted gammas.
pub const GAMMA_RANGE: (f64, f64) = (0.2, 5.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsistencyError {
    #[error("InsufficientObservations: {0}")]
    InsufficientObservations(String),
    #[error("NonPositiveIntensity: image {image}, track {track}")]
    NonPositiveIntensity { image: usize, track: usize },
    #[error("DisconnectedGraph: image-track graph has {components} components")]
    DisconnectedGraph { components: usize },
    #[error("UnknownImage: {index} (collection has {count})")]
    UnknownImage { index: usize, count: usize },
    #[error("SchemaError: {0}")]
    Schema(String),
    #[error("observation at ({x}, {y}) lies outside image {image}")]
    OutOfBounds { image: usize, x: f64, y: f64 },
}

/// One sampled color of one track in one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub image: usize,
    pub track: usize,
    pub color: [f64; 3],
    pub position: [f64; 2],
}

/// Sparse correspondences across a collection.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    images: usize,
    tracks: usize,
    observations: Vec<Observation>,
}

impl TrackSet {
    /// Checks indices, sample positivity and that each track is seen in at
    /// least `min(2, images)` distinct images.
    pub fn new(images: usize, tracks: usize, observations: Vec<Observation>) -> Result<Self, ConsistencyError> {
        if images == 0 {
            return Err(ConsistencyError::InsufficientObservations("collection has no images".into()));
        }
        let mut seen: Vec<Vec<usize>> = vec![Vec::new(); tracks];
        for o in &observations {
            if o.image >= images || o.track >= tracks {
                return Err(ConsistencyError::Schema(format!(
                    "observation refers to image {} / track {} outside {images} images / {tracks} tracks",
                    o.image, o.track
                )));
            }
            if o.color.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
                return Err(ConsistencyError::NonPositiveIntensity {
                    image: o.image,
                    track: o.track,
                });
            }
            if !seen[o.track].contains(&o.image) {
                seen[o.track].push(o.image);
            }
        }
        let need = images.min(2);
        if let Some(j) = seen.iter().position(|s| s.len() < need) {
            return Err(ConsistencyError::InsufficientObservations(format!(
                "track {j} observed in {} image(s), need {need}",
                seen[j].len()
            )));
        }
        Ok(Self {
            images,
            tracks,
            observations,
        })
    }

    /// Samples every observation from `images` with bilinear interpolation.
    pub fn from_document(doc: &TracksDocument, images: &[Image]) -> Result<Self, ConsistencyError> {
        if images.len() != doc.images.len() {
            return Err(ConsistencyError::Schema(format!(
                "{} image paths but {} images supplied",
                doc.images.len(),
                images.len()
            )));
        }
        let mut obs = Vec::new();
        for (j, t) in doc.tracks.iter().enumerate() {
            for o in &t.obs {
                let img = images.get(o.img).ok_or_else(|| {
                    ConsistencyError::Schema(format!("track {j} refers to image {} of {}", o.img, images.len()))
                })?;
                let color = sample_bilinear(img, o.x, o.y).ok_or(ConsistencyError::OutOfBounds {
                    image: o.img,
                    x: o.x,
                    y: o.y,
                })?;
                obs.push(Observation {
                    image: o.img,
                    track: j,
                    color,
                    position: [o.x, o.y],
                });
            }
        }
        Self::new(images.len(), doc.tracks.len(), obs)
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn tracks(&self) -> usize {
        self.tracks
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }
}

/// Tracks file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracksDocument {
    pub images: Vec<String>,
    pub tracks: Vec<TrackDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackDocument {
    pub obs: Vec<TrackObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackObservation {
    pub img: usize,
    pub x: f64,
    pub y: f64,
}

impl TracksDocument {
    pub fn from_json(json: &str) -> Result<Self, ConsistencyError> {
        serde_json::from_str(json).map_err(|e| ConsistencyError::Schema(e.to_string()))
    }
}

/// Bilinear sample at continuous coordinates where pixel `(i, j)` covers
/// `[i, i+1) × [j, j+1)` and its value sits at the center. `None` outside
/// `[0, w] × [0, h]`.
pub fn sample_bilinear(img: &Image, x: f64, y: f64) -> Option<[f64; 3]> {
    let (w, h) = img.dims();
    if !(x >= 0.0 && y >= 0.0 && x <= w as f64 && y <= h as f64) || w == 0 || h == 0 {
        return None;
    }
    let u = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let v = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (u.floor() as usize, v.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let mut out = [0.0; 3];
    let (a, b, c, d) = (img.rgb(x0, y0), img.rgb(x1, y0), img.rgb(x0, y1), img.rgb(x1, y1));
    for k in 0..3 {
        let top = a[k] + (b[k] - a[k]) * fx;
        let bottom = c[k] + (d[k] - c[k]) * fx;
        out[k] = top + (bottom - top) * fy;
    }
    Some(out)
}

/// Log intensities of one channel with a presence mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    present: Vec<bool>,
}

impl ObservationMatrix {
    /// Builds a matrix from `(row, col, log value)` entries; repeated cells are averaged.
    pub fn from_entries(rows: usize, cols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut sum = vec![0.0; rows * cols];
        let mut count = vec![0usize; rows * cols];
        for &(i, j, v) in entries {
            sum[i * cols + j] += v;
            count[i * cols + j] += 1;
        }
        let present = count.iter().map(|&c| c > 0).collect();
        let values = sum.iter().zip(&count).map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
        Self {
            rows,
            cols,
            values,
            present,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.cols + j;
        self.present[k].then(|| self.values[k])
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    /// Connected components of the bipartite image–track graph.
    pub fn components(&self) -> usize {
        let n = self.rows + self.cols;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.present[i * self.cols + j] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, self.rows + j));
                    parent[a] = b;
                }
            }
        }
        (0..n).filter(|&x| find(&mut parent, x) == x).count()
    }
}

/// Per-channel log-intensity matrices.
pub fn build_observation(tracks: &TrackSet) -> Result<[ObservationMatrix; 3], ConsistencyError> {
    let (m, n) = (tracks.images, tracks.tracks);
    let mut out = Vec::with_capacity(3);
    for c in 0..3 {
        let entries: Vec<(usize, usize, f64)> = tracks
            .observations
            .iter()
            .map(|o| {
                if o.color[c] > 0.0 {
                    Ok((o.image, o.track, o.color[c].ln()))
                } else {
                    Err(ConsistencyError::NonPositiveIntensity {
                        image: o.image,
                        track: o.track,
                    })
                }
            })
            .collect::<Result<_, _>>()?;
        out.push(ObservationMatrix::from_entries(m, n, &entries));
    }
    Ok(out.try_into().expect("three channels"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorizeOptions {
    /// Stop when the objective drops by less than `tol` times its value.
    pub tol: f64,
    pub max_iter: usize,
    /// One extra pass down-weighting entries beyond 3×MAD to 0.1.
    pub reweight: bool,
}

impl Default for FactorizeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 200_000,
            reweight: false,
        }
    }
}

/// Fitted parameters of one channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelModel {
    pub gamma: Vec<f64>,
    pub log_a: Vec<f64>,
    pub log_k: Vec<f64>,
    /// `log I − γ(log a + log k)` on present entries, row-major.
    pub residuals: Vec<Option<f64>>,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ChannelModel {
    pub fn predict(&self, i: usize, j: usize) -> f64 {
        self.gamma[i] * (self.log_a[i] + self.log_k[j])
    }

    pub fn residual_rms(&self) -> f64 {
        let present: Vec<f64> = self.residuals.iter().flatten().copied().collect();
        (present.iter().map(|r| r * r).sum::<f64>() / present.len().max(1) as f64).sqrt()
    }
}

/// Scale and gamma for every image in all three channels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyModel {
    pub channels: [ChannelModel; 3],
}

impl ConsistencyModel {
    pub fn image_count(&self) -> usize {
        self.channels[0].gamma.len()
    }

    pub fn a(&self, i: usize) -> [f64; 3] {
        std::array::from_fn(|c| self.channels[c].log_a[i].exp())
    }

    pub fn gamma(&self, i: usize) -> [f64; 3] {
        std::array::from_fn(|c| self.channels[c].gamma[i])
    }

    pub fn converged(&self) -> bool {
        self.channels.iter().all(|c| c.converged)
    }

    /// Identity model for `m` images.
    pub fn identity(m: usize) -> Self {
        let ch = ChannelModel {
            gamma: vec![1.0; m],
            log_a: vec![0.0; m],
            log_k: Vec::new(),
            residuals: Vec::new(),
            objective_history: Vec::new(),
            iterations: 0,
            converged: true,
        };
        Self {
            channels: [ch.clone(), ch.clone(), ch],
        }
    }
}

/// Report row for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image: String,
    pub a: [f64; 3],
    pub gamma: [f64; 3],
}

pub fn model_report(model: &ConsistencyModel, names: &[String]) -> Vec<ImageReport> {
    names
        .iter()
        .enumerate()
        .map(|(i, name)| ImageReport {
            image: name.clone(),
            a: model.a(i),
            gamma: model.gamma(i),
        })
        .collect()
}

struct Als<'a> {
    obs: &'a ObservationMatrix,
    weights: Vec<f64>,
    gamma: Vec<f64>,
    // γ_i·log a_i
    offset: Vec<f64>,
    log_k: Vec<f64>,
}

impl Als<'_> {
    fn objective(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.obs.rows {
            for j in 0..self.obs.cols {
                if let Some(y) = self.obs.get(i, j) {
                    let r = y - self.gamma[i] * self.log_k[j] - self.offset[i];
                    s += self.weights[i * self.obs.cols + j] * r * r;
                }
            }
        }
        s
    }

    /// Weighted least squares of row `i` against `(log k, 1)` with γ clamped
    /// to its bounds; the clamp keeps the exact constrained minimizer
    /// because the profile in γ is a convex parabola.
    fn update_row(&mut self, i: usize) {
        let (mut sw, mut sk, mut skk, mut sy, mut sky) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in 0..self.obs.cols {
            if let Some(y) = self.obs.get(i, j) {
                let w = self.weights[i * self.obs.cols + j];
                let k = self.log_k[j];
                sw += w;
                sk += w * k;
                skk += w * k * k;
                sy += w * y;
                sky += w * k * y;
            }
        }
        if sw == 0.0 {
            return;
        }
        let var = skk - sk * sk / sw;
        let g = if var > 1e-14 * skk.max(1e-300) {
            (sky - sk * sy / sw) / var
        } else {
            self.gamma[i]
        };
        let g = g.clamp(GAMMA_RANGE.0, GAMMA_RANGE.1);
        self.gamma[i] = g;
        self.offset[i] = (sy - g * sk) / sw;
    }

    fn update_columns(&mut self) {
        for j in 0..self.obs.cols {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..self.obs.rows {
                if let Some(y) = self.obs.get(i, j) {
                    let w = self.weights[i * self.obs.cols + j];
                    num += w * self.gamma[i] * (y - self.offset[i]);
                    den += w * self.gamma[i] * self.gamma[i];
                }
            }
            if den > 0.0 {
                self.log_k[j] = num / den;
            }
        }
    }

    fn run(&mut self, tol: f64, max_iter: usize, history: &mut Vec<f64>) -> (usize, bool) {
        let mut prev = self.objective();
        history.push(prev);
        for it in 1..=max_iter {
            for i in 1..self.obs.rows {
                self.update_row(i);
            }
            self.update_columns();
            let obj = self.objective();
            history.push(obj);
            if prev - obj <= tol * prev || obj <= f64::MIN_POSITIVE {
                return (it, true);
            }
            prev = obj;
        }
        (max_iter, false)
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Rank-2 factorization of one channel by alternating least squares.
///
/// Image 0 is the gauge reference (`a = 1`, `γ = 1`). Starts from `γ = 1`,
/// zero offsets and column means for `log k`.
pub fn factorize(obs: &ObservationMatrix, opts: &FactorizeOptions) -> Result<ChannelModel, ConsistencyError> {
    let (m, n) = (obs.rows, obs.cols);
    if m == 0 || n == 0 {
        return Err(ConsistencyError::InsufficientObservations("empty observation matrix".into()));
    }
    for i in 1..m {
        let c = (0..n).filter(|&j| obs.get(i, j).is_some()).count();
        if c < 2 {
            return Err(ConsistencyError::InsufficientObservations(format!("image {i} has {c} observation(s)")));
        }
    }
    let need = m.min(2);
    for j in 0..n {
        let c = (0..m).filter(|&i| obs.get(i, j).is_some()).count();
        if c < need {
            return Err(ConsistencyError::InsufficientObservations(format!("track {j} has {c} observation(s)")));
        }
    }
    let components = obs.components();
    if components > 1 {
        return Err(ConsistencyError::DisconnectedGraph { components });
    }
    let log_k = (0..n)
        .map(|j| {
            let col: Vec<f64> = (0..m).filter_map(|i| obs.get(i, j)).collect();
            col.iter().sum::<f64>() / col.len() as f64
        })
        .collect();
    let mut als = Als {
        obs,
        weights: vec![1.0; m * n],
        gamma: vec![1.0; m],
        offset: vec![0.0; m],
        log_k,
    };
    let mut history = Vec::new();
    let (mut iterations, mut converged) = als.run(opts.tol, opts.max_iter, &mut history);
    if opts.reweight {
        let mut res: Vec<f64> = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if let Some(y) = obs.get(i, j) {
                    res.push(y - als.gamma[i] * als.log_k[j] - als.offset[i]);
                }
            }
        }
        let med = median(&mut res.clone());
        let mut dev: Vec<f64> = res.iter().map(|r| (r - med).abs()).collect();
        let mad = median(&mut dev);
        for i in 0..m {
            for j in 0..n {
                if let Some(y) = obs.get(i, j) {
                    let r = y - als.gamma[i] * als.log_k[j] - als.offset[i];
                    if (r - med).abs() > 3.0 * mad && mad > 0.0 {
                        als.weights[i * n + j] = 0.1;
                    }
                }
            }
        }
        let (it2, conv2) = als.run(opts.tol, opts.max_iter, &mut history);
        iterations += it2;
        converged = conv2;
    }
    let log_a: Vec<f64> = als.offset.iter().zip(&als.gamma).map(|(o, g)| o / g).collect();
    let mut residuals = vec![None; m * n];
    for i in 0..m {
        for j in 0..n {
            if let Some(y) = obs.get(i, j) {
                residuals[i * n + j] = Some(y - als.gamma[i] * (log_a[i] + als.log_k[j]));
            }
        }
    }
    Ok(ChannelModel {
        gamma: als.gamma,
        log_a,
        log_k: als.log_k,
        residuals,
        objective_history: history,
        iterations,
        converged,
    })
}

/// Factorizes the three channels independently and in parallel.
pub fn factorize_channels(obs: &[ObservationMatrix; 3], opts: &FactorizeOptions) -> Result<ConsistencyModel, ConsistencyError> {
    let fitted: Vec<ChannelModel> = obs.par_iter().map(|o| factorize(o, opts)).collect::<Result<_, _>>()?;
    Ok(ConsistencyModel {
        channels: fitted.try_into().expect("three channels"),
    })
}

/// Inverts `I' = (a·I)^γ` per channel: `I = I'^(1/γ) / a`, clamped to `[0, 1]`.
pub fn correct_image(img: &Image, model: &ConsistencyModel, index: usize) -> Result<Image, ConsistencyError> {
    let count = model.image_count();
    if index >= count {
        return Err(ConsistencyError::UnknownImage { index, count });
    }
    let a = model.a(index);
    let g = model.gamma(index);
    let c = img.channels().min(3);
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(img.channels()) {
        for k in 0..c {
            if a[k] == 1.0 && g[k] == 1.0 {
                continue;
            }
            px[k] = (px[k].max(0.0).powf(1.0 / g[k]) / a[k]).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Per-track mean colors, keyed by track index; handy for audits.
pub fn track_means(tracks: &TrackSet) -> BTreeMap<usize, [f64; 3]> {
    let mut acc: BTreeMap<usize, ([f64; 3], usize)> = BTreeMap::new();
    for o in &tracks.observations {
        let e = acc.entry(o.track).or_insert(([0.0; 3], 0));
        for k in 0..3 {
            e.0[k] += o.color[k];
        }
        e.1 += 1;
    }
    acc.into_iter().map(|(j, (s, c))| (j, s.map(|v| v / c as f64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    struct Truth {
        a: Vec<f64>,
        gamma: Vec<f64>,
        log_k: Vec<f64>,
    }

    fn truth(seed: u64, m: usize, n: usize) -> Truth {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Truth {
            a: (0..m).map(|_| rng.random_range(0.7..1.3)).collect(),
            gamma: (0..m).map(|_| rng.random_range(0.8..1.25)).collect(),
            log_k: (0..n).map(|_| rng.random_range(0.05f64..0.9).ln()).collect(),
        }
    }

    /// Forward synthesis `log I = γ(log a + log k)` with entries removed.
    fn synthesize(t: &Truth, missing: f64, noise: f64, seed: u64) -> ObservationMatrix {
        let (m, n) = (t.a.len(), t.log_k.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let mut entries = Vec::new();
        for j in 0..n {
            // Keep each track in at least two images, including image 0 or 1.
            let keep_a = j % m;
            let keep_b = (j + 1) % m;
            for i in 0..m {
                if i != keep_a && i != keep_b && rng.random::<f64>() < missing {
                    continue;
                }
                let e = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                entries.push((i, j, t.gamma[i] * (t.a[i].ln() + t.log_k[j]) + e));
            }
        }
        ObservationMatrix::from_entries(m, n, &entries)
    }

    /// Parameters expressed in the image-0 gauge.
    fn aligned(t: &Truth) -> (Vec<f64>, Vec<f64>) {
        let (g0, la0) = (t.gamma[0], t.a[0].ln());
        let gamma = t.gamma.iter().map(|g| g / g0).collect();
        let a = t.a.iter().map(|a| (g0 * (a.ln() - la0)).exp()).collect();
        (a, gamma)
    }

    #[test]
    fn two_images_one_track_column() {
        let ts = TrackSet::new(
            2,
            1,
            vec![
                Observation { image: 0, track: 0, color: [0.5; 3], position: [0.0; 2] },
                Observation { image: 1, track: 0, color: [0.25; 3], position: [0.0; 2] },
            ],
        )
        .unwrap();
        let obs = build_observation(&ts).unwrap();
        assert_eq!(obs[0].get(0, 0), Some(0.5f64.ln()));
        assert_eq!(obs[2].get(1, 0), Some(0.25f64.ln()));
    }

    #[test]
    fn single_observation_track_is_rejected() {
        let obs = vec![Observation { image: 0, track: 0, color: [0.5; 3], position: [0.0; 2] }];
        assert!(matches!(TrackSet::new(2, 1, obs), Err(ConsistencyError::InsufficientObservations(_))));
    }

    #[test]
    fn zero_sample_is_rejected() {
        let obs = vec![
            Observation { image: 0, track: 0, color: [0.5, 0.0, 0.5], position: [0.0; 2] },
            Observation { image: 1, track: 0, color: [0.5; 3], position: [0.0; 2] },
        ];
        assert!(matches!(TrackSet::new(2, 1, obs), Err(ConsistencyError::NonPositiveIntensity { .. })));
    }

    #[test]
    fn single_image_is_gauge_identity() {
        let ys = [0.3f64, 0.6, 0.9];
        let entries: Vec<_> = ys.iter().enumerate().map(|(j, y)| (0, j, y.ln())).collect();
        let model = factorize(&ObservationMatrix::from_entries(1, 3, &entries), &FactorizeOptions::default()).unwrap();
        assert_eq!(model.gamma, vec![1.0]);
        assert_eq!(model.log_a, vec![0.0]);
        for (j, y) in ys.iter().enumerate() {
            assert_eq!(model.log_k[j], y.ln());
        }
        assert!(model.residuals.iter().flatten().all(|r| *r == 0.0));
    }

    #[test]
    fn disconnected_graph_is_detected() {
        let entries = [(0, 0, 0.1), (1, 0, 0.2), (0, 1, 0.3), (1, 1, 0.1), (2, 2, 0.2), (3, 2, 0.4), (2, 3, 0.1), (3, 3, 0.3)];
        let obs = ObservationMatrix::from_entries(4, 4, &entries);
        assert!(matches!(
            factorize(&obs, &FactorizeOptions::default()),
            Err(ConsistencyError::DisconnectedGraph { components: 2 })
        ));
    }

    #[test]
    fn noiseless_recovery() {
        let t = truth(1, 8, 200);
        let obs = synthesize(&t, 0.3, 0.0, 2);
        let model = factorize(&obs, &FactorizeOptions::default()).unwrap();
        let (a, gamma) = aligned(&t);
        for i in 0..8 {
            assert!((model.log_a[i].exp() / a[i] - 1.0).abs() < 1e-3, "a[{i}]");
            assert!((model.gamma[i] / gamma[i] - 1.0).abs() < 1e-3, "gamma[{i}]");
        }
        assert!(model.residual_rms() <= 1e-6, "rms {}", model.residual_rms());
        // Slack covers rounding once residuals reach machine precision.
        for w in model.objective_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-20, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn noisy_recovery_within_two_percent() {
        let t = truth(3, 8, 200);
        let obs = synthesize(&t, 0.3, 0.01, 4);
        let model = factorize(&obs, &FactorizeOptions::default()).unwrap();
        let (a, gamma) = aligned(&t);
        for i in 0..8 {
            assert!((model.log_a[i].exp() / a[i] - 1.0).abs() < 0.02);
            assert!((model.gamma[i] / gamma[i] - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn reweighting_pass_runs() {
        let t = truth(5, 6, 80);
        let obs = synthesize(&t, 0.2, 0.01, 6);
        let opts = FactorizeOptions { reweight: true, ..Default::default() };
        let model = factorize(&obs, &opts).unwrap();
        assert!(model.gamma.iter().all(|g| (GAMMA_RANGE.0..=GAMMA_RANGE.1).contains(g)));
    }

    #[test]
    fn correction_identity_and_round_trip() {
        let img = Image::from_fn(5, 4, 3, |x, y| [0.1 + 0.1 * x as f64, 0.2 + 0.1 * y as f64, 0.5]);
        let id = ConsistencyModel::identity(1);
        assert_eq!(correct_image(&img, &id, 0).unwrap(), img);
        assert!(matches!(correct_image(&img, &id, 1), Err(ConsistencyError::UnknownImage { .. })));

        let mut model = ConsistencyModel::identity(1);
        for c in 0..3 {
            model.channels[c].log_a[0] = 1.2f64.ln();
            model.channels[c].gamma[0] = 0.9;
        }
        let forward = Image::from_data(5, 4, 3, img.data().iter().map(|v| (1.2 * v).powf(0.9)).collect()).unwrap();
        let back = correct_image(&forward, &model, 0).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn strong_scale_is_clamped() {
        let img = Image::filled(3, 3, 3, 0.9);
        let mut model = ConsistencyModel::identity(1);
        for c in 0..3 {
            model.channels[c].log_a[0] = 2f64.ln();
        }
        let out = correct_image(&img, &model, 0).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let mut model = ConsistencyModel::identity(1);
        model.channels[0].log_a[0] = 0.25f64.ln();
        let out = correct_image(&img, &model, 0).unwrap();
        assert_eq!(out.rgb(0, 0)[0], 1.0);
    }

    #[test]
    fn bilinear_sampling() {
        let img = Image::from_fn(2, 2, 3, |x, y| [x as f64, y as f64, 0.5]);
        assert_eq!(sample_bilinear(&img, 0.5, 0.5).unwrap(), [0.0, 0.0, 0.5]);
        assert_eq!(sample_bilinear(&img, 1.0, 1.5).unwrap(), [0.5, 1.0, 0.5]);
        assert_eq!(sample_bilinear(&img, 2.0, 2.0).unwrap(), [1.0, 1.0, 0.5]);
        assert!(sample_bilinear(&img, 2.1, 0.0).is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn reconstruction_is_gauge_invariant(seed in any::<u64>(), s in 0.5f64..2.0, shift in -1.0f64..1.0) {
            let t = truth(seed, 5, 12);
            // γ_i(log a_i + log k_j) is unchanged by k ← s·k + t,
            // γ ← γ/s, log a ← s·log a − t.
            for i in 0..5 {
                for j in 0..12 {
                    let base = t.gamma[i] * (t.a[i].ln() + t.log_k[j]);
                    let g = t.gamma[i] / s;
                    let la = s * t.a[i].ln() - shift;
                    let lk = s * t.log_k[j] + shift;
                    prop_assert!((g * (la + lk) - base).abs() < 1e-12);
                }
            }
            let obs = synthesize(&t, 0.2, 0.0, seed);
            let model = factorize(&obs, &FactorizeOptions { max_iter: 20_000, ..Default::default() }).unwrap();
            for i in 0..5 {
                for j in 0..12 {
                    if let Some(y) = obs.get(i, j) {
                        prop_assert!((model.predict(i, j) - y).abs() < 1e-4);
                    }
                }
            }
        }

        #[test]
        fn objective_never_increases(seed in any::<u64>()) {
            let t = truth(seed, 4, 30);
            let obs = synthesize(&t, 0.3, 0.05, seed ^ 9);
            let model = factorize(&obs, &FactorizeOptions { max_iter: 500, ..Default::default() }).unwrap();
            for w in model.objective_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-20);
            }
        }
    }
}
