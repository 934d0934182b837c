//! Three-dimensional convex hulls by quickhull, with enclosed volume.

use std::collections::HashMap;
use std::collections::hash_map::DefaultHasher;
use std::hash::BuildHasherDefault;

use nalgebra::{Matrix3, SymmetricEigen};

use super::NumericError;

pub type Point3 = [f64; 3];

// Fixed-key hasher: hull construction must not depend on per-process seeds.
type EdgeMap = HashMap<(usize, usize), usize, BuildHasherDefault<DefaultHasher>>;

/// Relative threshold below which a point cloud counts as flat.
pub const DEGENERACY_RATIO: f64 = 1e-9;

/// Convex polytope with outward-oriented triangular faces.
#[derive(Debug, Clone, PartialEq)]
pub struct Hull3 {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
    volume: f64,
}

impl Hull3 {
    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Largest signed distance from `p` to any face plane (positive outside).
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let (n, off) = plane(&self.vertices[f[0]], &self.vertices[f[1]], &self.vertices[f[2]]);
                dot(&n, p) - off
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, p: &Point3, tol: f64) -> bool {
        self.signed_distance(p) <= tol
    }

    /// Length of the bounding-box diagonal of the hull vertices.
    pub fn diameter(&self) -> f64 {
        bbox_diagonal(&self.vertices)
    }
}

/// Convex hull of `points`.
///
/// Fails with [`NumericError::DegenerateGamut`] when fewer than four points
/// are given or the cloud is (numerically) coplanar, collinear, or a single
/// point.
pub fn quickhull3(points: &[Point3]) -> Result<Hull3, NumericError> {
    if points.len() < 4 || points.iter().flatten().any(|c| !c.is_finite()) {
        return Err(NumericError::DegenerateGamut);
    }
    let diag = bbox_diagonal(points);
    if !(diag > 0.0) || is_flat(points, diag) {
        return Err(NumericError::DegenerateGamut);
    }
    let eps = 1e-11 * diag;
    Builder::new(points, eps)?.run()
}

/// Volume of the hull of both vertex sets taken together.
pub fn hull_union_volume(a: &Hull3, b: &Hull3) -> Result<f64, NumericError> {
    let mut pts = Vec::with_capacity(a.vertices.len() + b.vertices.len());
    pts.extend_from_slice(&a.vertices);
    pts.extend_from_slice(&b.vertices);
    Ok(quickhull3(&pts)?.volume)
}

fn is_flat(points: &[Point3], diag: f64) -> bool {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] += d[i] * d[j];
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    // Smallest singular value of the centered cloud, as an RMS deviation.
    (min / n).sqrt() <= DEGENERACY_RATIO * diag
}

fn bbox_diagonal(points: &[Point3]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
}

struct Face {
    v: [usize; 3],
    normal: Point3,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

struct Builder<'a> {
    pts: &'a [Point3],
    eps: f64,
    faces: Vec<Face>,
    edges: EdgeMap,
}

impl<'a> Builder<'a> {
    fn new(pts: &'a [Point3], eps: f64) -> Result<Self, NumericError> {
        let mut b = Builder {
            pts,
            eps,
            faces: Vec::new(),
            edges: EdgeMap::default(),
        };
        let [i0, i1, i2, i3] = b.initial_simplex()?;
        let centroid = centroid(&[pts[i0], pts[i1], pts[i2], pts[i3]]);
        for tri in [[i0, i1, i2], [i0, i1, i3], [i0, i2, i3], [i1, i2, i3]] {
            let (n, off) = plane(&pts[tri[0]], &pts[tri[1]], &pts[tri[2]]);
            let tri = if dot(&n, &centroid) - off > 0.0 {
                [tri[0], tri[2], tri[1]]
            } else {
                tri
            };
            b.add_face(tri)?;
        }
        let seeds = [i0, i1, i2, i3];
        let initial: Vec<usize> = (0..4).collect();
        let candidates: Vec<usize> = (0..pts.len()).filter(|i| !seeds.contains(i)).collect();
        b.assign(&candidates, &initial);
        Ok(b)
    }

    fn initial_simplex(&self) -> Result<[usize; 4], NumericError> {
        let pts = self.pts;
        let mut extremes = Vec::with_capacity(6);
        for k in 0..3 {
            let lo = (0..pts.len()).min_by(|&a, &b| pts[a][k].total_cmp(&pts[b][k])).unwrap();
            let hi = (0..pts.len()).max_by(|&a, &b| pts[a][k].total_cmp(&pts[b][k])).unwrap();
            extremes.push(lo);
            extremes.push(hi);
        }
        let mut best = (0.0, 0, 0);
        for (ai, &a) in extremes.iter().enumerate() {
            for &b in &extremes[ai + 1..] {
                let d = dist2(&pts[a], &pts[b]);
                if d > best.0 {
                    best = (d, a, b);
                }
            }
        }
        let (_, i0, i1) = best;
        let axis = sub(&pts[i1], &pts[i0]);
        let (i2, d2) = argmax(pts.len(), |i| norm(&cross(&axis, &sub(&pts[i], &pts[i0]))) / norm(&axis));
        if d2 <= self.eps {
            return Err(NumericError::DegenerateGamut);
        }
        let (n, off) = plane(&pts[i0], &pts[i1], &pts[i2]);
        let (i3, d3) = argmax(pts.len(), |i| (dot(&n, &pts[i]) - off).abs());
        if d3 <= self.eps {
            return Err(NumericError::DegenerateGamut);
        }
        Ok([i0, i1, i2, i3])
    }

    fn add_face(&mut self, v: [usize; 3]) -> Result<usize, NumericError> {
        let (normal, offset) = plane(&self.pts[v[0]], &self.pts[v[1]], &self.pts[v[2]]);
        if !normal.iter().all(|c| c.is_finite()) {
            return Err(NumericError::HullConstruction);
        }
        let id = self.faces.len();
        for k in 0..3 {
            if self.edges.insert((v[k], v[(k + 1) % 3]), id).is_some() {
                return Err(NumericError::HullConstruction);
            }
        }
        self.faces.push(Face {
            v,
            normal,
            offset,
            outside: Vec::new(),
            alive: true,
        });
        Ok(id)
    }

    fn distance(&self, face: usize, p: usize) -> f64 {
        let f = &self.faces[face];
        dot(&f.normal, &self.pts[p]) - f.offset
    }

    fn assign(&mut self, points: &[usize], faces: &[usize]) {
        for &p in points {
            if let Some(&f) = faces.iter().find(|&&f| self.distance(f, p) > self.eps) {
                self.faces[f].outside.push(p);
            }
        }
    }

    fn run(mut self) -> Result<Hull3, NumericError> {
        let mut cursor = 0;
        while cursor < self.faces.len() {
            if !self.faces[cursor].alive || self.faces[cursor].outside.is_empty() {
                cursor += 1;
                continue;
            }
            let (eye, _) = self.faces[cursor]
                .outside
                .iter()
                .map(|&p| (p, self.distance(cursor, p)))
                .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
            self.add_point(cursor, eye)?;
        }
        Ok(self.finish())
    }

    fn add_point(&mut self, start: usize, eye: usize) -> Result<(), NumericError> {
        // 0 = unvisited, 1 = visible, 2 = hidden.
        let mut state: HashMap<usize, u8, BuildHasherDefault<DefaultHasher>> = HashMap::default();
        let mut visible = vec![start];
        let mut horizon = Vec::new();
        state.insert(start, 1);
        let mut k = 0;
        while k < visible.len() {
            let f = visible[k];
            k += 1;
            let v = self.faces[f].v;
            for e in 0..3 {
                let (a, b) = (v[e], v[(e + 1) % 3]);
                let nb = *self.edges.get(&(b, a)).ok_or(NumericError::HullConstruction)?;
                let s = match state.get(&nb) {
                    Some(&s) => s,
                    None => {
                        let s = if self.distance(nb, eye) > self.eps { 1 } else { 2 };
                        state.insert(nb, s);
                        if s == 1 {
                            visible.push(nb);
                        }
                        s
                    }
                };
                if s == 2 {
                    horizon.push((a, b));
                }
            }
        }

        let mut orphans = Vec::new();
        for &f in &visible {
            let face = &mut self.faces[f];
            face.alive = false;
            orphans.append(&mut face.outside);
            let v = face.v;
            for e in 0..3 {
                self.edges.remove(&(v[e], v[(e + 1) % 3]));
            }
        }
        let mut created = Vec::with_capacity(horizon.len());
        for (a, b) in horizon {
            created.push(self.add_face([a, b, eye])?);
        }
        orphans.retain(|&p| p != eye);
        self.assign(&orphans, &created);
        Ok(())
    }

    fn finish(self) -> Hull3 {
        let mut remap = vec![usize::MAX; self.pts.len()];
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for f in self.faces.iter().filter(|f| f.alive) {
            let mut tri = [0; 3];
            for (k, &v) in f.v.iter().enumerate() {
                if remap[v] == usize::MAX {
                    remap[v] = vertices.len();
                    vertices.push(self.pts[v]);
                }
                tri[k] = remap[v];
            }
            faces.push(tri);
        }
        let c = centroid(&vertices);
        let volume = faces
            .iter()
            .map(|f| {
                let a = sub(&vertices[f[0]], &c);
                let b = sub(&vertices[f[1]], &c);
                let d = sub(&vertices[f[2]], &c);
                dot(&a, &cross(&b, &d)) / 6.0
            })
            .sum::<f64>();
        Hull3 {
            vertices,
            faces,
            volume,
        }
    }
}

fn argmax(n: usize, f: impl Fn(usize) -> f64) -> (usize, f64) {
    (0..n)
        .map(|i| (i, f(i)))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
}

fn plane(a: &Point3, b: &Point3, c: &Point3) -> (Point3, f64) {
    let n = cross(&sub(b, a), &sub(c, a));
    let len = norm(&n);
    let n = [n[0] / len, n[1] / len, n[2] / len];
    (n, dot(&n, a))
}

fn centroid(pts: &[Point3]) -> Point3 {
    let n = pts.len() as f64;
    let mut c = [0.0; 3];
    for p in pts {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    [c[0] / n, c[1] / n, c[2] / n]
}

fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    dot(&d, &d)
}
