//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Runs without the browser front end; the service is driven in-process.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use makeup_core::compositor::{Catalog, RenderOptions};
use makeup_core::consistency::{factorize, FactorizeOptions, ObservationMatrix};
use makeup_core::imaging::{self, Image};
use makeup_core::matting::{dilate, make_trimap, solve_matte, Trimap, TrimapLabel};
use makeup_core::numeric::quickhull3;
use makeup_core::semantics::RegionMask;
use makeup_core::transfer::{
    blend_luminance_gradient, fit_gamut_transform, gamut_energy, match_luminance_histogram, ColorTransform, Gamut, TransferConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tower::ServiceExt;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

// ---------------------------------------------------------------- morphology

fn brute_dilate(m: &RegionMask, r: usize) -> RegionMask {
    let r2 = (r * r) as i64;
    let (w, h) = (m.width() as i64, m.height() as i64);
    RegionMask::from_fn(m.width(), m.height(), |x, y| {
        let (x, y) = (x as i64, y as i64);
        let r = r as i64;
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let (u, v) = (x + dx, y + dy);
                dx * dx + dy * dy <= r2 && u >= 0 && v >= 0 && u < w && v < h && m.get(u as usize, v as usize)
            })
        })
    })
}

fn morphology() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..100 {
        let (w, h) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let density = rng.random_range(0.01..0.5);
        let m = RegionMask::from_fn(w, h, |_, _| rng.random::<f64>() < density);
        let r = rng.random_range(0..=5);
        ensure(dilate(&m, r) == brute_dilate(&m, r), format!("case {case}: {w}×{h} radius {r} differs"))?;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 5.0, format!("took {secs:.2} s"))?;
    Ok(format!("100 masks exact, {secs:.2} s"))
}

// ---------------------------------------------------------------- histogram

fn ks(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Region-like luminance: a truncated Gaussian mixture or a bounded-density power law.
fn region_luminance(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if rng.random::<bool>() {
        let parts: Vec<(f64, f64)> = (0..rng.random_range(1..=3)).map(|_| (rng.random_range(15.0..85.0), rng.random_range(3.0..15.0))).collect();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let (mu, sd) = parts[rng.random_range(0..parts.len())];
            let v = Normal::new(mu, sd).unwrap().sample(rng);
            if (0.0..=100.0).contains(&v) {
                out.push(v);
            }
        }
        out
    } else {
        let (lo, span, p) = (rng.random_range(0.0..30.0), rng.random_range(30.0..70.0), rng.random_range(0.4..1.0));
        (0..n).map(|_| lo + span * rng.random::<f64>().powf(p)).collect()
    }
}

fn histogram() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..10 {
        let n_s = rng.random_range(64..=96) * rng.random_range(64..=96);
        let n_e = rng.random_range(64..=96) * rng.random_range(64..=96);
        let ls = region_luminance(&mut rng, n_s);
        let le = region_luminance(&mut rng, n_e);
        let li = match_luminance_histogram(&ls, &le, 256).map_err(|e| e.to_string())?;
        let d = ks(&li, &le);
        worst = worst.max(d);
        ensure(d <= 2.0 / 256.0, format!("case {case}: KS {d:.5}"))?;
    }
    let ls: Vec<f64> = (0..80 * 80).map(|_| rng.random_range(10.0..90.0)).collect();
    let li = match_luminance_histogram(&ls, &ls, 256).map_err(|e| e.to_string())?;
    let (lo, hi) = ls.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let bin = (hi - lo) / 256.0;
    let dev = ls.iter().zip(&li).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(dev <= bin, format!("identity deviation {dev} > bin {bin}"))?;
    Ok(format!("max KS {worst:.5} ≤ {:.5}; identity within {dev:.4} ≤ {bin:.4}", 2.0 / 256.0))
}

// ---------------------------------------------------------------- luminance blend

/// Dense `(I + σ·L) x = Li + σ·L·Ls` for the 4-neighbor grid, by Gaussian elimination.
fn dense_blend(ls: &[f64], li: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let n = w * h;
    let mut lap = vec![vec![0.0; n]; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut link = |j: usize| {
                lap[i][i] += 1.0;
                lap[j][j] += 1.0;
                lap[i][j] -= 1.0;
                lap[j][i] -= 1.0;
            };
            if x + 1 < w {
                link(i + 1);
            }
            if y + 1 < h {
                link(i + w);
            }
        }
    }
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| sigma * lap[i][j] + if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut b: Vec<f64> = (0..n).map(|i| li[i] + sigma * (0..n).map(|j| lap[i][j] * ls[j]).sum::<f64>()).collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        x[k] = (b[k] - (k + 1..n).map(|j| a[k][j] * x[j]).sum::<f64>()) / a[k][k];
    }
    x
}

fn grads(u: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut g = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                g.push(u[y * w + x + 1] - u[y * w + x]);
            }
            if y + 1 < h {
                g.push(u[(y + 1) * w + x] - u[y * w + x]);
            }
        }
    }
    g
}

fn luminance_blend() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, h) = (24, 20);
    let ls: Vec<f64> = (0..w * h).map(|_| rng.random_range(20.0..80.0)).collect();
    let li: Vec<f64> = (0..w * h).map(|_| rng.random_range(10.0..90.0)).collect();
    let zero = blend_luminance_gradient(&ls, &li, w, h, 0.0, 1e-10).map_err(|e| e.to_string())?;
    let r0 = zero.iter().zip(&li).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(r0 <= 1e-10, format!("σ = 0 residual {r0:e}"))?;

    let big = blend_luminance_gradient(&ls, &li, w, h, 1e4, 1e-12).map_err(|e| e.to_string())?;
    let (go, gs) = (grads(&big, w, h), grads(&ls, w, h));
    let err = (go.iter().zip(&gs).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / gs.iter().map(|b| b * b).sum::<f64>()).sqrt();
    ensure(err <= 0.01, format!("σ = 1e4 gradient RMS {err:.4}"))?;

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let ls: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..100.0)).collect();
        let li: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..100.0)).collect();
        let sigma = rng.random_range(0.1..50.0);
        let got = blend_luminance_gradient(&ls, &li, 4, 4, sigma, 1e-14).map_err(|e| e.to_string())?;
        let want = dense_blend(&ls, &li, 4, 4, sigma);
        worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    ensure(worst <= 1e-6, format!("4×4 dense mismatch {worst:e}"))?;
    Ok(format!("σ=0 residual {r0:e}; σ=1e4 gradient RMS {:.3}%; 4×4 vs dense {worst:.1e}", err * 100.0))
}

// ---------------------------------------------------------------- matting

fn matting() -> Check {
    // Two-color horizontal composite: foreground left, background right.
    let (w, h) = (32, 8);
    let fg = [0.9, 0.25, 0.3];
    let bg = [0.15, 0.55, 0.85];
    let alpha = |x: usize| ((24.0 - x as f64) / 17.0).clamp(0.0, 1.0);
    let img = Image::from_fn(w, h, 3, |x, _| std::array::from_fn::<f64, 3, _>(|c| alpha(x) * fg[c] + (1.0 - alpha(x)) * bg[c]));
    let labels = (0..w * h)
        .map(|i| match i % w {
            x if x <= 7 => TrimapLabel::Foreground,
            x if x >= 24 => TrimapLabel::Background,
            _ => TrimapLabel::Unknown,
        })
        .collect();
    let trimap = Trimap::from_labels(w, h, labels);
    let matte = solve_matte(&img, &trimap, 1e-5, 100.0).map_err(|e| e.to_string())?;
    let mut se = 0.0;
    for (i, v) in matte.values().iter().enumerate() {
        let want = alpha(i % w);
        se += (v - want).powi(2);
        match trimap.labels()[i] {
            TrimapLabel::Foreground => ensure(*v == 1.0, format!("labeled foreground {i} = {v}"))?,
            TrimapLabel::Background => ensure(*v == 0.0, format!("labeled background {i} = {v}"))?,
            TrimapLabel::Unknown => {}
        }
    }
    let rms = (se / (w * h) as f64).sqrt();
    ensure(rms <= 0.05, format!("ramp RMS {rms:.4}"))?;

    let mask = RegionMask::from_fn(20, 20, |x, y| (5..15).contains(&x) && (4..13).contains(&y));
    let full = Trimap::from_labels(
        20,
        20,
        mask.bits().iter().map(|&b| if b { TrimapLabel::Foreground } else { TrimapLabel::Background }).collect(),
    );
    let texture = Image::from_fn(20, 20, 3, |x, y| [x as f64 / 20.0, y as f64 / 20.0, 0.5]);
    let m = solve_matte(&texture, &full, 1e-5, 100.0).map_err(|e| e.to_string())?;
    let exact = m.values().iter().zip(mask.bits()).all(|(v, &b)| *v == if b { 1.0 } else { 0.0 });
    ensure(exact, "fully constrained trimap is not the indicator")?;
    ensure(make_trimap(&mask, 2).is_ok(), "trimap construction failed")?;
    Ok(format!("ramp RMS {rms:.4}; labels exact; indicator exact"))
}

// ---------------------------------------------------------------- gamut energy and hulls

fn cloud(rng: &mut ChaCha8Rng, n: usize, spread: [f64; 3]) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| std::array::from_fn(|k| spread[k] * (rng.random::<f64>() + rng.random::<f64>() + rng.random::<f64>() - 1.5)))
        .collect()
}

/// Plane through three vertices, oriented away from the centroid.
fn plane(a: [f64; 3], b: [f64; 3], c: [f64; 3], inside: [f64; 3]) -> ([f64; 3], f64) {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let mut n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let mut d = n[0] * a[0] + n[1] * a[1] + n[2] * a[2];
    if n[0] * inside[0] + n[1] * inside[1] + n[2] * inside[2] > d {
        n = n.map(|x| -x);
        d = -d;
    }
    (n, d)
}

fn hull_volume_vs_monte_carlo(points: &[[f64; 3]], rng: &mut ChaCha8Rng) -> Result<(f64, f64), String> {
    let hull = quickhull3(points).map_err(|e| e.to_string())?;
    let verts = hull.vertices();
    let centroid: [f64; 3] = std::array::from_fn(|k| verts.iter().map(|v| v[k]).sum::<f64>() / verts.len() as f64);
    let planes: Vec<_> = hull.faces().iter().map(|f| plane(verts[f[0]], verts[f[1]], verts[f[2]], centroid)).collect();
    // Every face must support the whole input cloud.
    for (n, d) in &planes {
        let scale = n.iter().map(|x| x.abs()).sum::<f64>();
        ensure(points.iter().all(|p| n[0] * p[0] + n[1] * p[1] + n[2] * p[2] <= d + 1e-9 * scale), "face does not support the cloud")?;
    }
    let lo: [f64; 3] = std::array::from_fn(|k| points.iter().map(|p| p[k]).fold(f64::MAX, f64::min));
    let hi: [f64; 3] = std::array::from_fn(|k| points.iter().map(|p| p[k]).fold(f64::MIN, f64::max));
    let samples = 1_000_000;
    let mut inside = 0usize;
    for _ in 0..samples {
        let p: [f64; 3] = std::array::from_fn(|k| rng.random_range(lo[k]..hi[k]));
        if planes.iter().all(|(n, d)| n[0] * p[0] + n[1] * p[1] + n[2] * p[2] <= *d) {
            inside += 1;
        }
    }
    let boxv = (0..3).map(|k| hi[k] - lo[k]).product::<f64>();
    Ok((hull.volume(), boxv * inside as f64 / samples as f64))
}

fn gamut() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut min_energy = f64::MAX;
    let mut evaluated = 0;
    while evaluated < 1000 {
        let ds = Gamut::new(cloud(&mut rng, 30, [30.0, 20.0, 20.0])).map_err(|e| e.to_string())?;
        let de = Gamut::new(cloud(&mut rng, 30, [20.0, 25.0, 15.0])).map_err(|e| e.to_string())?;
        let t = ColorTransform::from_params(&(0..9).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>());
        if t.determinant().abs() < 1e-3 {
            continue;
        }
        let e = gamut_energy(&t, &ds, &de).map_err(|e| e.to_string())?;
        min_energy = min_energy.min(e);
        evaluated += 1;
    }
    ensure(min_energy >= 0.0, format!("negative energy {min_energy}"))?;

    let cfg = TransferConfig::default();
    let ds = Gamut::new(cloud(&mut rng, 400, [30.0, 20.0, 25.0])).map_err(|e| e.to_string())?;
    let same = fit_gamut_transform(&ds, &ds, &cfg).map_err(|e| e.to_string())?;
    let d_id = same.transform.distance(&ColorTransform::identity());
    ensure(same.energy < 1e-6 && d_id <= 1e-2, format!("coincident: energy {:e}, distance {d_id:.4}", same.energy))?;
    let de = Gamut::new(ds.samples().iter().map(|p| p.map(|v| 2.0 * v)).collect()).map_err(|e| e.to_string())?;
    let twice = fit_gamut_transform(&ds, &de, &cfg).map_err(|e| e.to_string())?;
    let d2 = twice.transform.distance(&ColorTransform::diagonal([2.0; 3]));
    ensure(d2 <= 2e-2, format!("2× distance {d2:.4}"))?;

    let cube: Vec<[f64; 3]> = (0..8).map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64]).collect();
    let simplex = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let vc = quickhull3(&cube).map_err(|e| e.to_string())?.volume();
    let vs = quickhull3(&simplex).map_err(|e| e.to_string())?.volume();
    ensure(vc == 1.0 && vs == 1.0 / 6.0, format!("cube {vc}, simplex {vs}"))?;

    let mut worst = 0.0f64;
    for (n, spread) in [(60, [1.0, 1.0, 1.0]), (200, [3.0, 1.0, 0.5]), (25, [1.0, 2.0, 1.5])] {
        let pts = cloud(&mut rng, n, spread);
        let (v, mc) = hull_volume_vs_monte_carlo(&pts, &mut rng)?;
        let rel = (v - mc).abs() / mc;
        worst = worst.max(rel);
        ensure(rel <= 0.01, format!("cloud of {n}: hull {v:.5} vs MC {mc:.5}"))?;
    }
    Ok(format!(
        "min energy {min_energy:.3e} over 1000; identity fit {d_id:.1e}; 2× fit {d2:.1e}; cube/simplex exact; MC within {:.2}%",
        worst * 100.0
    ))
}

// ---------------------------------------------------------------- consistency

fn consistency_case(noise: f64, seed: u64) -> Result<(f64, f64, f64, bool), String> {
    let (m, n) = (8, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..m).map(|_| rng.random_range(0.7..1.3)).collect();
    let g: Vec<f64> = (0..m).map(|_| rng.random_range(0.8..1.25)).collect();
    let lk: Vec<f64> = (0..n).map(|_| rng.random_range(0.05f64..0.95).ln()).collect();
    let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
    let mut entries = Vec::new();
    for j in 0..n {
        for i in 0..m {
            let keep = i == j % m || i == (j + 3) % m || rng.random::<f64>() >= 0.3;
            if keep {
                let e = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                entries.push((i, j, g[i] * (a[i].ln() + lk[j]) + e));
            }
        }
    }
    let obs = ObservationMatrix::from_entries(m, n, &entries);
    let model = factorize(&obs, &FactorizeOptions::default()).map_err(|e| e.to_string())?;
    // Gauge alignment to image 0: γ ← γ/γ0, a ← (a/a0)^γ0.
    let mut worst = 0.0f64;
    for i in 0..m {
        let ga = g[i] / g[0];
        let aa = (g[0] * (a[i].ln() - a[0].ln())).exp();
        worst = worst.max((model.gamma[i] / ga - 1.0).abs()).max((model.log_a[i].exp() / aa - 1.0).abs());
    }
    let mut se = 0.0;
    let mut count = 0;
    for &(i, j, _) in &entries {
        let y = obs.get(i, j).unwrap();
        se += (model.predict(i, j) - y).powi(2);
        count += 1;
    }
    let monotone = model.objective_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-20);
    Ok((worst, (se / count as f64).sqrt(), model.objective_history.len() as f64, monotone))
}

fn consistency() -> Check {
    let t = Instant::now();
    let (err0, rms0, iters, mono0) = consistency_case(0.0, 11)?;
    ensure(err0 <= 1e-3, format!("noiseless parameter error {err0:e}"))?;
    ensure(rms0 <= 1e-6, format!("noiseless reconstruction RMS {rms0:e}"))?;
    let (err1, _, _, mono1) = consistency_case(0.01, 12)?;
    ensure(err1 <= 0.02, format!("noisy parameter error {err1:.4}"))?;
    ensure(mono0 && mono1, "objective increased")?;
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("took {secs:.2} s"))?;
    Ok(format!(
        "noiseless error {err0:.1e}, RMS {rms0:.1e} ({iters} objective values); noisy error {:.2}%; monotone; {secs:.2} s",
        err1 * 100.0
    ))
}

// ---------------------------------------------------------------- end to end

fn cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_makeup")).args(args).output().map_err(|e| e.to_string())?;
    ensure(o.status.success(), format!("makeup {:?}: {}", args.first(), String::from_utf8_lossy(&o.stderr)))
}

fn render_via_cli(out: &Path, plan: &str, extra: &[&str]) -> Result<Vec<u8>, String> {
    let f = fixtures();
    let (plan, catalog) = (f.join(plan), f.join("catalog.json"));
    let mut args = vec!["render", "--plan", plan.to_str().unwrap(), "--catalog", catalog.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    cli(&args)?;
    std::fs::read(out).map_err(|e| e.to_string())
}

async fn render_via_service() -> Result<Vec<u8>, String> {
    let f = fixtures();
    let config = makeup_service::ServiceConfig {
        assets_root: f.clone(),
        catalog: Some(Catalog::load(f.join("catalog.json")).map_err(|e| e.to_string())?),
        persist_dir: None,
        render: RenderOptions::default(),
    };
    let app = makeup_service::router(makeup_service::AppState::new(config));
    let call = |req: Request<Body>| {
        let app = app.clone();
        async move {
            let resp = app.oneshot(req).await.map_err(|e| e.to_string())?;
            let status = resp.status();
            let body = resp.into_body().collect().await.map_err(|e| e.to_string())?.to_bytes().to_vec();
            Ok::<_, String>((status, body))
        }
    };
    let boundary = "acceptance";
    let mut body = Vec::new();
    for (name, file) in [("subject", "subject.png"), ("landmarks", "subject.json")] {
        body.extend_from_slice(format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{file}\"\r\n\r\n").as_bytes());
        body.extend_from_slice(&std::fs::read(f.join(file)).map_err(|e| e.to_string())?);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    let req = Request::post("/sessions")
        .header("content-type", format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap();
    let (s, b) = call(req).await?;
    ensure(s == StatusCode::CREATED, format!("create: {s}"))?;
    let id = serde_json::from_slice::<serde_json::Value>(&b).map_err(|e| e.to_string())?["session"].as_str().unwrap_or_default().to_string();
    let plan = std::fs::read(f.join("plan.json")).map_err(|e| e.to_string())?;
    let (s, b) = call(Request::put(format!("/sessions/{id}/plan")).body(Body::from(plan)).unwrap()).await?;
    ensure(s == StatusCode::OK, format!("plan: {s} {}", String::from_utf8_lossy(&b)))?;
    let (s, _) = call(Request::post(format!("/sessions/{id}/render")).body(Body::empty()).unwrap()).await?;
    ensure(s == StatusCode::ACCEPTED, format!("render: {s}"))?;
    for _ in 0..6000 {
        let (s, b) = call(Request::get(format!("/sessions/{id}/result.png")).body(Body::empty()).unwrap()).await?;
        if s == StatusCode::OK {
            return Ok(b);
        }
        ensure(s == StatusCode::ACCEPTED, format!("result: {s} {}", String::from_utf8_lossy(&b)))?;
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    Err("service render timed out".into())
}

fn determinism(tmp: &Path) -> Check {
    let a = render_via_cli(&tmp.join("run_a.png"), "plan.json", &[])?;
    let b = render_via_cli(&tmp.join("run_b.png"), "plan.json", &[])?;
    ensure(a == b, "two CLI runs differ")?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let svc = rt.block_on(render_via_service())?;
    ensure(svc == a, "service PNG differs from CLI PNG")?;
    Ok(format!("CLI×2 and service byte-identical ({} bytes)", a.len()))
}

fn timing(tmp: &Path) -> Check {
    let report = tmp.join("single_report.json");
    let t = Instant::now();
    render_via_cli(&tmp.join("single.png"), "plan_single.json", &["--report", report.to_str().unwrap()])?;
    let wall = t.elapsed().as_secs_f64();
    ensure(wall <= 10.0, format!("wall clock {wall:.2} s"))?;
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let stages = ["load_ms", "semantics_ms", "matting_ms", "transfer_ms", "blend_ms", "total_ms"];
    for s in stages {
        ensure(r["timings"][s].is_number(), format!("report lacks {s}"))?;
    }
    ensure(r["width"] == 512 && r["height"] == 512, "render is not 512×512")?;
    Ok(format!(
        "512×512 single region in {wall:.2} s wall (matting {:.0} ms, transfer {:.0} ms)",
        r["timings"]["matting_ms"].as_f64().unwrap_or(0.0),
        r["timings"]["transfer_ms"].as_f64().unwrap_or(0.0)
    ))
}

fn golden(tmp: &Path) -> Check {
    let out = render_via_cli(&tmp.join("golden_check.png"), "plan.json", &[])?;
    let got = imaging::decode_rgb(&out).map_err(|e| e.to_string())?;
    let want = imaging::load_rgb(fixtures().join("golden.png")).map_err(|e| e.to_string())?;
    ensure(got.dims() == want.dims(), "size differs from golden")?;
    let drift = got
        .data()
        .iter()
        .zip(want.data())
        .map(|(a, b)| (imaging::quantize(*a) as i32 - imaging::quantize(*b) as i32).abs())
        .max()
        .unwrap_or(0);
    ensure(drift <= 1, format!("max drift {drift}/255"))?;
    Ok(format!("max drift {drift}/255"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let t = tmp.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("morphology: disk dilation equals brute-force max filter", Box::new(morphology)),
        ("histogram matching: KS ≤ 2/256, identity within one bin", Box::new(histogram)),
        ("luminance blend: σ=0 exact, σ=1e4 keeps gradients, dense 4×4 oracle", Box::new(luminance_blend)),
        ("matting: ramp recovered, labels exact, indicator exact", Box::new(matting)),
        ("gamut energy and hull volumes", Box::new(gamut)),
        ("collection consistency factorization", Box::new(consistency)),
        ("end-to-end determinism: CLI runs and service agree byte for byte", Box::new(|| determinism(t))),
        ("timing: single-region 512×512 render ≤ 10 s with stage report", Box::new(|| timing(t))),
        ("golden render regression (drift ≤ 1/255)", Box::new(|| golden(t))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}  [{detail}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}  [{why}]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
