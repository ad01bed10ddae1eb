//! Synthetic sets and measures: snowflake curves, graphs, planes and dust.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::measure::DiscreteMeasure;
use crate::{Error, Result};

pub const MAX_SNOWFLAKE_ITERS: usize = 10;

/// Ordered vertices of a planar polygonal curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub vertices: Vec<[f64; 2]>,
}

impl Polyline {
    pub fn edge_lengths(&self) -> Vec<f64> {
        self.vertices.windows(2).map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt()).collect()
    }

    pub fn length(&self) -> f64 {
        self.edge_lengths().iter().sum()
    }

    pub fn edge_count(&self) -> usize {
        self.vertices.len().saturating_sub(1)
    }

    pub fn vertex_points(&self) -> Vec<Vec<f64>> {
        self.vertices.iter().map(|v| v.to_vec()).collect()
    }

    /// Points along every edge, at most `spacing` apart, vertices included.
    pub fn sample(&self, spacing: f64) -> Vec<Vec<f64>> {
        let mut out = vec![self.vertices[0].to_vec()];
        for w in self.vertices.windows(2) {
            let len = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            let m = (len / spacing).ceil().max(1.0) as usize;
            for j in 1..=m {
                let t = j as f64 / m as f64;
                out.push(vec![w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])]);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Io(e.to_string());
        wr.write_record(["x1", "x2"]).map_err(err)?;
        for v in &self.vertices {
            wr.write_record([v[0].to_string(), v[1].to_string()]).map_err(err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Replace every edge by four edges of length |edge|·√(1+δ²)/4, the middle
/// two forming an isosceles bump. Bumps alternate sides by edge index.
fn refine(p: &Polyline, delta: f64) -> Polyline {
    let mut v = Vec::with_capacity(4 * p.vertices.len());
    v.push(p.vertices[0]);
    for (j, w) in p.vertices.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let u = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        let side = if j % 2 == 0 { 1.0 } else { -1.0 };
        let normal = [-u[1] * side, u[0] * side];
        let s = len * (1.0 + delta * delta).sqrt() / 4.0;
        let h = (s * s - (len / 2.0 - s).powi(2)).max(0.0).sqrt();
        let c = [a[0] + s * u[0], a[1] + s * u[1]];
        let e = [a[0] + (len - s) * u[0], a[1] + (len - s) * u[1]];
        let d = [(a[0] + b[0]) / 2.0 + h * normal[0], (a[1] + b[1]) / 2.0 + h * normal[1]];
        v.extend_from_slice(&[c, d, e, b]);
    }
    Polyline { vertices: v }
}

fn segment() -> Polyline {
    Polyline { vertices: vec![[-2.0, 0.0], [2.0, 0.0]] }
}

fn check_iters(iters: usize) -> Result<()> {
    if iters > MAX_SNOWFLAKE_ITERS {
        return Err(Error::Input(format!("iters must be at most {MAX_SNOWFLAKE_ITERS}, got {iters}")));
    }
    Ok(())
}

/// The `iters`-th snowflake stage starting from the segment (-2,0)-(2,0).
pub fn snowflake(delta: f64, iters: usize) -> Result<Polyline> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::Input(format!("delta must lie in (0, 0.5], got {delta}")));
    }
    check_iters(iters)?;
    Ok((0..iters).fold(segment(), |p, _| refine(&p, delta)))
}

/// Snowflake with per-stage parameters `deltas[0..iters]`.
pub fn snowflake_varying(deltas: &[f64], iters: usize) -> Result<Polyline> {
    check_iters(iters)?;
    if deltas.len() < iters {
        return Err(Error::Input(format!("need {iters} deltas, got {}", deltas.len())));
    }
    if let Some(d) = deltas[..iters].iter().find(|d| !(**d >= 0.0 && **d <= 0.5)) {
        return Err(Error::Input(format!("every delta must lie in [0, 0.5], got {d}")));
    }
    Ok(deltas[..iters].iter().fold(segment(), |p, &d| refine(&p, d)))
}

/// Dimension-free snowflake exponent: log((1+δ²)/4) / log(√(1+δ²)/4).
pub fn snowflake_exponent(delta: f64) -> f64 {
    let q = 1.0 + delta * delta;
    (q / 4.0).ln() / (q.sqrt() / 4.0).ln()
}

/// Integer lattice points `spacing·z` in R^k with |·| < radius.
pub(crate) fn lattice_in_ball(k: usize, spacing: f64, radius: f64) -> Vec<Vec<f64>> {
    let m = (radius / spacing).ceil() as i64;
    let mut out = Vec::new();
    let mut idx = vec![-m; k];
    if k == 0 {
        return vec![Vec::new()];
    }
    loop {
        let u: Vec<f64> = idx.iter().map(|&i| i as f64 * spacing).collect();
        if u.iter().map(|x| x * x).sum::<f64>() < radius * radius {
            out.push(u);
        }
        let mut d = 0;
        while d < k {
            idx[d] += 1;
            if idx[d] <= m {
                break;
            }
            idx[d] = -m;
            d += 1;
        }
        if d == k {
            break;
        }
    }
    out
}

fn check_grid(n: usize, k: usize, density: f64, spacing: f64) -> Result<()> {
    if !(spacing > 0.0) {
        return Err(Error::Input(format!("spacing must be positive, got {spacing}")));
    }
    if !(density > 0.0) {
        return Err(Error::Input(format!("density must be positive, got {density}")));
    }
    if k > n || n == 0 {
        return Err(Error::Input(format!("need 0 < n and k <= n, got n = {n}, k = {k}")));
    }
    Ok(())
}

/// Lattice points of span(e_first..e_{first+k}) inside B_2, weight density·spacing^k.
fn plane_points(n: usize, first: usize, k: usize, spacing: f64) -> Vec<f64> {
    let mut coords = Vec::new();
    for u in lattice_in_ball(k, spacing, 2.0) {
        let mut p = vec![0.0; n];
        p[first..first + k].copy_from_slice(&u);
        coords.extend_from_slice(&p);
    }
    coords
}

/// density·H^k on span(e_1..e_k) ∩ B_2.
pub fn plane_measure(n: usize, k: usize, density: f64, spacing: f64) -> Result<DiscreteMeasure> {
    check_grid(n, k, density, spacing)?;
    let coords = plane_points(n, 0, k, spacing);
    let w = density * spacing.powi(k as i32);
    DiscreteMeasure::new(n, coords.clone(), vec![w; coords.len() / n])
}

/// density·H^n on B_2.
pub fn dust_measure(n: usize, density: f64, spacing: f64) -> Result<DiscreteMeasure> {
    plane_measure(n, n, density, spacing)
}

/// Plane measure plus dust: density·H^k on span(e_1..e_k) and dust_density·H^n on B_2.
pub fn mixed_measure(
    n: usize,
    k: usize,
    density: f64,
    spacing: f64,
    dust_density: f64,
    dust_spacing: f64,
) -> Result<DiscreteMeasure> {
    check_grid(n, k, density, spacing)?;
    check_grid(n, n, dust_density, dust_spacing)?;
    let mut coords = plane_points(n, 0, k, spacing);
    let np = coords.len() / n;
    let dust = plane_points(n, 0, n, dust_spacing);
    let nd = dust.len() / n;
    coords.extend(dust);
    let mut w = vec![density * spacing.powi(k as i32); np];
    w.extend(vec![dust_density * dust_spacing.powi(n as i32); nd]);
    DiscreteMeasure::new(n, coords, w)
}

/// Unit masses at ±(distance/2)·e_1 in R².
pub fn dirac_pair(distance: f64) -> Result<DiscreteMeasure> {
    if !(distance > 0.0) {
        return Err(Error::Input(format!("distance must be positive, got {distance}")));
    }
    DiscreteMeasure::uniform(&[vec![-distance / 2.0, 0.0], vec![distance / 2.0, 0.0]])
}

/// density·H^k on span(e_1..e_k) plus on span(e_{k+1}..e_{2k}), both inside B_2.
pub fn perpendicular_planes(n: usize, k: usize, density: f64, spacing: f64) -> Result<DiscreteMeasure> {
    check_grid(n, k, density, spacing)?;
    if 2 * k > n {
        return Err(Error::Input(format!("two transverse {k}-planes need n >= {}, got {n}", 2 * k)));
    }
    let mut coords = plane_points(n, 0, k, spacing);
    coords.extend(plane_points(n, k, k, spacing));
    let w = density * spacing.powi(k as i32);
    DiscreteMeasure::new(n, coords.clone(), vec![w; coords.len() / n])
}

/// Graph of f(u) = slope/(freq·√k) Σ sin(freq·u_i) over the lattice of
/// span(e_1..e_k) ∩ B_2, in R^{k+1}; |∇f| ≤ slope.
pub fn graphical_set(k: usize, slope: f64, freq: f64, spacing: f64) -> Result<Vec<Vec<f64>>> {
    check_grid(k + 1, k, 1.0, spacing)?;
    if !(freq > 0.0) {
        return Err(Error::Input(format!("frequency must be positive, got {freq}")));
    }
    let amp = slope / (freq * (k as f64).sqrt());
    Ok(lattice_in_ball(k, spacing, 2.0)
        .into_iter()
        .map(|mut u| {
            let f = amp * u.iter().map(|x| (freq * x).sin()).sum::<f64>();
            u.push(f);
            u
        })
        .collect())
}
