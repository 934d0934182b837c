//! Nelder–Mead downhill simplex minimization.

use super::NumericError;

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Working simplex: `dimension + 1` vertices and their objective values.
#[derive(Debug, Clone)]
pub struct SimplexState {
    pub vertices: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub iterations: usize,
}

impl SimplexState {
    pub fn dimension(&self) -> usize {
        self.vertices.len() - 1
    }

    fn order(&mut self) {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        self.vertices = idx.iter().map(|&i| self.vertices[i].clone()).collect();
        self.values = idx.iter().map(|&i| self.values[i]).collect();
    }

    fn diameter(&self) -> f64 {
        let best = &self.vertices[0];
        self.vertices[1..]
            .iter()
            .map(|v| v.iter().zip(best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    fn spread(&self) -> f64 {
        self.values[self.values.len() - 1] - self.values[0]
    }
}

/// Result of a minimization. `converged` is false when `max_iter` ran out;
/// `x` and `value` then hold the best vertex seen.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `objective` from `x0`.
///
/// The initial simplex is `x0` plus `scale` along each coordinate axis.
/// Terminates when the simplex diameter (max-norm) or the spread of vertex
/// values drops below `tol`. Non-finite objective values are treated as
/// `+∞`, so the simplex simply moves away from them.
pub fn nelder_mead<F>(
    mut objective: F,
    x0: &[f64],
    scale: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Minimum, NumericError>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Err(NumericError::DimensionMismatch { expected: 1, found: 0 });
    }
    if !(scale > 0.0) || !(tol > 0.0) {
        return Err(NumericError::InvalidTolerance(if scale > 0.0 { tol } else { scale }));
    }
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = objective(x);
        if v.is_finite() { v } else { f64::INFINITY }
    };

    let f0 = eval(x0);
    if !f0.is_finite() {
        return Err(NumericError::NonFiniteStart);
    }
    let mut vertices = vec![x0.to_vec()];
    let mut values = vec![f0];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += scale;
        values.push(eval(&v));
        vertices.push(v);
    }
    let mut s = SimplexState {
        vertices,
        values,
        iterations: 0,
    };
    s.order();

    let mut converged = false;
    while s.iterations < max_iter {
        if s.diameter() < tol || s.spread() < tol {
            converged = true;
            break;
        }
        s.iterations += 1;

        let worst = n;
        let mut centroid = vec![0.0; n];
        for v in &s.vertices[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&s.vertices[worst])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(REFLECT);
        let fr = eval(&xr);
        if fr < s.values[0] {
            let xe = along(REFLECT * EXPAND);
            let fe = eval(&xe);
            if fe < fr {
                s.vertices[worst] = xe;
                s.values[worst] = fe;
            } else {
                s.vertices[worst] = xr;
                s.values[worst] = fr;
            }
        } else if fr < s.values[n - 1] {
            s.vertices[worst] = xr;
            s.values[worst] = fr;
        } else {
            let (xc, fc) = if fr < s.values[worst] {
                let xc = along(REFLECT * CONTRACT);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-CONTRACT);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < s.values[worst].min(fr) {
                s.vertices[worst] = xc;
                s.values[worst] = fc;
            } else {
                let best = s.vertices[0].clone();
                for i in 1..=n {
                    let v: Vec<f64> = best
                        .iter()
                        .zip(&s.vertices[i])
                        .map(|(b, x)| b + SHRINK * (x - b))
                        .collect();
                    s.values[i] = eval(&v);
                    s.vertices[i] = v;
                }
            }
        }
        s.order();
    }
    if !converged && (s.diameter() < tol || s.spread() < tol) {
        converged = true;
    }

    Ok(Minimum {
        x: s.vertices[0].clone(),
        value: s.values[0],
        iterations: s.iterations,
        evaluations,
        converged,
    })
}
