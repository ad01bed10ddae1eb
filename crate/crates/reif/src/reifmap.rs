//! Numerical Reifenberg parametrization: partition of unity, glued subspace
//! field, approximate squared distance, level-set projection and the composed
//! map from a set onto its coarse plane.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta::{beta_linf, fit_from_moments};
use crate::covering::maximal_disjoint_radii;
use crate::geometry::{dist, norm, sub, AffineSubspace, Ball};
use crate::measure::DiscreteMeasure;
use crate::{Error, Result};

pub const MAX_PROJECTION_ITERS: usize = 50;
/// Eigen-gap below which the glued plane is not defined.
pub const MIN_EIGEN_GAP: f64 = 1e-8;
/// Working flatness ceiling; above it the map is still built but flagged.
pub const DELTA_CEILING: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReifConfig {
    /// r̃ = (d(x,S) ∨ r) / divisor. Must exceed 4.
    pub divisor: f64,
    /// Plane fits use the ball of radius multiplier · r̃.
    pub fit_multiplier: f64,
    /// Projection stopping step, relative to the level scale.
    pub tol_rel: f64,
    /// Set points per level used for the β^∞ flatness check.
    pub flatness_samples: usize,
}

impl Default for ReifConfig {
    fn default() -> Self {
        ReifConfig { divisor: 100.0, fit_multiplier: 1e4, tol_rel: 1e-9, flatness_samples: 4 }
    }
}

impl ReifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.divisor > 4.0 && self.divisor.is_finite()) {
            return Err(Error::Input(format!("divisor must exceed 4, got {}", self.divisor)));
        }
        if !(self.fit_multiplier > self.divisor) {
            return Err(Error::Input(format!(
                "fit multiplier {} must exceed the divisor {} so fit balls reach the set",
                self.fit_multiplier, self.divisor
            )));
        }
        if !(self.tol_rel > 0.0 && self.tol_rel < 1e-2) {
            return Err(Error::Input(format!("tol_rel must lie in (0, 0.01), got {}", self.tol_rel)));
        }
        Ok(())
    }
}

/// (1 - t²)³ on [0,1], zero beyond; C² across t = 1.
fn bump(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        (1.0 - t * t).powi(3)
    }
}

/// Covering of a ball by B_{r̃_α}(x_α) with disjoint quarter balls, and the
/// normalized bumps supported on B_{4r̃_α}(x_α).
#[derive(Debug, Clone)]
pub struct PartitionCover {
    pub r: f64,
    pub divisor: f64,
    /// Radius of the covered ball about the origin.
    pub reach: f64,
    pub centers: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    set: Arc<DiscreteMeasure>,
    index: DiscreteMeasure,
}

impl PartitionCover {
    pub fn local_radius(&self, y: &[f64]) -> f64 {
        let d = self.set.nearest(y).map_or(0.0, |(_, d)| d);
        d.max(self.r) / self.divisor
    }

    /// Indices α with y ∈ B_{4r̃_α}(x_α) and the raw bump values.
    fn raw(&self, y: &[f64]) -> Vec<(usize, f64)> {
        // r̃ is 1/divisor-Lipschitz, so |y - x_α| < 4r̃_α forces |y - x_α| < 4r̃_y / (1 - 4/divisor)
        let reach = 4.0 * self.local_radius(y) / (1.0 - 4.0 / self.divisor) * (1.0 + 1e-9);
        self.index
            .indices_in(y, reach, false)
            .into_iter()
            .filter_map(|a| {
                let v = bump(dist(y, &self.centers[a]) / (4.0 * self.radii[a]));
                (v > 0.0).then_some((a, v))
            })
            .collect()
    }

    pub fn multiplicity(&self, y: &[f64]) -> usize {
        self.raw(y).len()
    }

    /// φ_α(y) for every α whose bump is positive at y.
    pub fn weights(&self, y: &[f64]) -> Result<Vec<(usize, f64)>> {
        let mut w = self.raw(y);
        let total: f64 = w.iter().map(|x| x.1).sum();
        if !(total > 0.0) {
            return Err(Error::Input(format!("point {y:?} lies outside the partition cover")));
        }
        w.iter_mut().for_each(|x| x.1 /= total);
        Ok(w)
    }

    /// Weights and their gradients.
    fn weights_grad(&self, y: &[f64]) -> Result<Vec<(usize, f64, Vec<f64>)>> {
        let raw: Vec<(usize, f64, Vec<f64>)> = self
            .raw(y)
            .into_iter()
            .map(|(a, v)| {
                let r4 = 4.0 * self.radii[a];
                let t2 = (dist(y, &self.centers[a]) / r4).powi(2);
                let f = -6.0 * (1.0 - t2).powi(2) / (r4 * r4);
                let g = y.iter().zip(&self.centers[a]).map(|(p, c)| f * (p - c)).collect();
                (a, v, g)
            })
            .collect();
        let total: f64 = raw.iter().map(|x| x.1).sum();
        if !(total > 0.0) {
            return Err(Error::Input(format!("point {y:?} lies outside the partition cover")));
        }
        let n = y.len();
        let mut gsum = vec![0.0; n];
        for (_, _, g) in &raw {
            gsum.iter_mut().zip(g).for_each(|(s, x)| *s += x);
        }
        Ok(raw
            .into_iter()
            .map(|(a, v, g)| {
                let phi = v / total;
                let grad = g.iter().zip(&gsum).map(|(gi, si)| (gi - phi * si) / total).collect();
                (a, phi, grad)
            })
            .collect())
    }
}

/// Quarter-disjoint maximal family over an adaptive grid of candidates in
/// B_reach: a cell is split until its half-diagonal is at most r̃/4 at its
/// center, which keeps every point of the ball inside some B_{r̃_α}(x_α).
pub fn build_partition(set: Arc<DiscreteMeasure>, r: f64, divisor: f64, reach: f64) -> Result<PartitionCover> {
    if set.is_empty() {
        return Err(Error::Input("empty set".into()));
    }
    if !(r > 0.0 && divisor > 4.0 && reach > 0.0) {
        return Err(Error::Input(format!("need r > 0, divisor > 4, reach > 0; got {r}, {divisor}, {reach}")));
    }
    let n = set.dim();
    let rt = |c: &[f64]| set.nearest(c).map_or(0.0, |(_, d)| d).max(r) / divisor;
    let mut cands = Vec::new();
    let mut radii = Vec::new();
    let mut stack = vec![(vec![0.0; n], reach)];
    while let Some((c, half)) = stack.pop() {
        let hd = half * (n as f64).sqrt();
        if norm(&c) - hd >= reach {
            continue;
        }
        let rc = rt(&c);
        if hd <= rc / 4.0 {
            cands.push(c);
            radii.push(rc);
            continue;
        }
        for corner in 0..(1usize << n) {
            let child: Vec<f64> =
                (0..n).map(|d| c[d] + if corner >> d & 1 == 1 { half / 2.0 } else { -half / 2.0 }).collect();
            stack.push((child, half / 2.0));
        }
    }
    let chosen = maximal_disjoint_radii(&cands, &radii, 0.25, false);
    let centers: Vec<Vec<f64>> = chosen.iter().map(|&i| cands[i].clone()).collect();
    let radii: Vec<f64> = chosen.iter().map(|&i| radii[i]).collect();
    let index = DiscreteMeasure::uniform(&centers)?;
    Ok(PartitionCover { r, divisor, reach, centers, radii, set, index })
}

/// Glued plane field at one scale.
#[derive(Debug, Clone)]
pub struct SubspaceField {
    pub k: usize,
    pub cover: PartitionCover,
    pub planes: Vec<AffineSubspace>,
    projectors: Vec<DMatrix<f64>>,
    origin_feet: Vec<Vec<f64>>,
}

/// Everything the field knows at one query point.
#[derive(Debug, Clone)]
pub struct FieldEval {
    /// ℓ_y = Σ φ_α π_α[y].
    pub ell: Vec<f64>,
    /// M_y = Σ φ_α π̂_α.
    pub m: DMatrix<f64>,
    /// Eigenvalues of M_y, descending.
    pub eigenvalues: Vec<f64>,
    /// L_y: through ℓ_y along the top-k eigenvectors of M_y.
    pub plane: AffineSubspace,
}

impl FieldEval {
    pub fn gap(&self) -> f64 {
        let k = self.plane.k();
        self.eigenvalues[k - 1] - self.eigenvalues.get(k).copied().unwrap_or(0.0)
    }
}

fn matvec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).iter().copied().collect()
}

fn affine_project(l: &AffineSubspace, p: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let d = matvec(p, &sub(y, &l.base));
    l.base.iter().zip(d).map(|(b, x)| b + x).collect()
}

fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = order.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    (vals, vecs)
}

/// L² planes on B_{multiplier·r̃_α}(x_α) glued by the partition of unity.
pub fn subspace_field(set: Arc<DiscreteMeasure>, r: f64, k: usize, cfg: &ReifConfig, reach: f64) -> Result<SubspaceField> {
    cfg.validate()?;
    if k == 0 || k >= set.dim() {
        return Err(Error::Input(format!("k = {k} must lie in [1, {})", set.dim())));
    }
    let cover = build_partition(set.clone(), r, cfg.divisor, reach)?;
    let planes: Vec<AffineSubspace> = cover
        .centers
        .par_iter()
        .zip(&cover.radii)
        .map(|(c, &rt)| {
            let b = Ball { center: c.clone(), radius: cfg.fit_multiplier * rt };
            let fit = fit_from_moments(&set.moments_at(c, b.radius), &b, k)?;
            if fit.vacuous {
                return Err(Error::Consistency(format!("fit ball about {c:?} holds no mass")));
            }
            Ok(fit.subspace)
        })
        .collect::<Result<_>>()?;
    let projectors: Vec<DMatrix<f64>> = planes.iter().map(|l| l.projector()).collect();
    let origin = vec![0.0; set.dim()];
    let origin_feet = planes.iter().zip(&projectors).map(|(l, p)| affine_project(l, p, &origin)).collect();
    Ok(SubspaceField { k, cover, planes, projectors, origin_feet })
}

impl SubspaceField {
    pub fn r(&self) -> f64 {
        self.cover.r
    }

    pub fn eval(&self, y: &[f64]) -> Result<FieldEval> {
        let n = y.len();
        let w = self.cover.weights(y)?;
        // π_α[y] = π_α[0] + π̂_α y, so ℓ_y = Σφ_α π_α[0] + M_y y
        let mut ell = vec![0.0; n];
        let mut acc = vec![0.0; n * n];
        for &(a, phi) in &w {
            ell.iter_mut().zip(&self.origin_feet[a]).for_each(|(e, x)| *e += phi * x);
            acc.iter_mut().zip(self.projectors[a].as_slice()).for_each(|(e, x)| *e += phi * x);
        }
        let m = DMatrix::from_vec(n, n, acc);
        ell.iter_mut().zip(matvec(&m, y)).for_each(|(e, x)| *e += x);
        let (vals, vecs) = sorted_eigen(&m);
        let gap = vals[self.k - 1] - vals[self.k];
        if gap < MIN_EIGEN_GAP {
            return Err(Error::DegenerateField { point: y.to_vec(), gap });
        }
        let plane = AffineSubspace { base: ell.clone(), basis: vecs[..self.k].to_vec() };
        Ok(FieldEval { ell, m, eigenvalues: vals, plane })
    }

    /// m_y = π_{L_y}(y).
    pub fn foot(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval(y)?.plane.project_unchecked(y))
    }

    /// Φ(y) = ½ d(y, L_y)².
    pub fn approx_distance(&self, y: &[f64]) -> Result<f64> {
        Ok(0.5 * self.eval(y)?.plane.distance2(y))
    }

    /// ∇Φ by the first-variation formula
    /// ∂_iΦ = ⟨π̂⊥[e_i], y - m⟩ + ⟨(π̂ - ∂m)[e_i], y - m⟩,
    /// with ∂m assembled from the bump gradients and eigenvector perturbation.
    pub fn gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        let n = y.len();
        let k = self.k;
        let wg = self.cover.weights_grad(y)?;
        let mut ell = vec![0.0; n];
        let mut m = DMatrix::zeros(n, n);
        let mut feet = Vec::with_capacity(wg.len());
        for (a, phi, _) in &wg {
            let p = affine_project(&self.planes[*a], &self.projectors[*a], y);
            ell.iter_mut().zip(&p).for_each(|(e, x)| *e += phi * x);
            m += &self.projectors[*a] * *phi;
            feet.push(p);
        }
        let (vals, vecs) = sorted_eigen(&m);
        let gap = vals[k - 1] - vals[k];
        if gap < MIN_EIGEN_GAP {
            return Err(Error::DegenerateField { point: y.to_vec(), gap });
        }
        let basis = &vecs[..k];
        let proj = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for b in basis {
                let c: f64 = b.iter().zip(v).map(|(x, y)| x * y).sum();
                out.iter_mut().zip(b).for_each(|(o, x)| *o += c * x);
            }
            out
        };
        let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let y_ell = sub(y, &ell);
        let foot: Vec<f64> = ell.iter().zip(proj(&y_ell)).map(|(a, b)| a + b).collect();
        let resid = sub(y, &foot);
        let mut grad = vec![0.0; n];
        for i in 0..n {
            // ∂_i ℓ and ∂_i M
            let mut d_ell = vec![0.0; n];
            let mut d_m = DMatrix::zeros(n, n);
            for ((a, phi, g), p) in wg.iter().zip(&feet) {
                d_ell.iter_mut().zip(p).for_each(|(d, x)| *d += g[i] * x);
                let col = self.projectors[*a].column(i);
                d_ell.iter_mut().zip(col.iter()).for_each(|(d, x)| *d += phi * x);
                d_m += &self.projectors[*a] * g[i];
            }
            // ∂_i P from first-order eigenvector perturbation across the gap
            let mut dp_v = vec![0.0; n];
            for (ia, va) in vecs.iter().enumerate().take(k) {
                for (ib, vb) in vecs.iter().enumerate().skip(k) {
                    let c = ip(va, &matvec(&d_m, vb)) / (vals[ia] - vals[ib]);
                    let (sa, sb) = (ip(vb, &y_ell), ip(va, &y_ell));
                    dp_v.iter_mut().zip(va.iter().zip(vb)).for_each(|(d, (x, z))| *d += c * (x * sa + z * sb));
                }
            }
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let p_e = proj(&e);
            let p_dell = proj(&d_ell);
            let d_foot: Vec<f64> = (0..n).map(|j| d_ell[j] + dp_v[j] + p_e[j] - p_dell[j]).collect();
            let perp_e: Vec<f64> = (0..n).map(|j| e[j] - p_e[j]).collect();
            let tang: Vec<f64> = (0..n).map(|j| p_e[j] - d_foot[j]).collect();
            grad[i] = ip(&perp_e, &resid) + ip(&tang, &resid);
        }
        Ok(grad)
    }

    /// Fixed-point iteration y ← π_{L_y}(y) onto the zero set of Φ. Stops at
    /// the first iterate whose step is below `tol`, where Φ < ½tol².
    pub fn project_to_level(&self, y: &[f64], tol: f64) -> Result<Vec<f64>> {
        Ok(self.project_with_residual(y, tol)?.0)
    }

    /// Projected point and Φ there.
    fn project_with_residual(&self, y: &[f64], tol: f64) -> Result<(Vec<f64>, f64)> {
        // Φ(z) = ½|z - m_z|², so each foot evaluation also prices the current iterate
        let mut z = y.to_vec();
        let mut step = f64::INFINITY;
        for _ in 0..MAX_PROJECTION_ITERS {
            let next = self.foot(&z)?;
            step = dist(&next, &z);
            if step < tol {
                return Ok((z, 0.5 * step * step));
            }
            z = next;
        }
        Err(Error::ProjectionStall { iters: MAX_PROJECTION_ITERS, step })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub level: usize,
    pub r: f64,
    pub centers: usize,
    /// Displacement |π_i(z) - z| over the samples, in units of r.
    pub max_disp_over_r: f64,
    pub median_disp_over_r: f64,
    /// Largest Φ at the projected points, in units of r².
    pub max_level_residual: f64,
}

/// Composed map from the set onto its coarse plane: project through levels
/// r = 2^{-depth}, ..., 1/2, then onto the level-0 plane.
#[derive(Debug, Clone)]
pub struct ReifenbergMap {
    pub k: usize,
    pub levels: Vec<f64>,
    pub base: AffineSubspace,
    pub fields: Vec<SubspaceField>,
    pub config: ReifConfig,
    /// Images of the input samples in base-plane coordinates.
    pub images: Vec<Vec<f64>>,
    pub diagnostics: Vec<LevelDiagnostics>,
    /// Largest sampled β^∞ at the level scales.
    pub sampled_flatness: f64,
    pub warnings: Vec<String>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Largest β^∞ over up to `samples` evenly spaced set points of B_1 at each
/// scale. Balls about points near the edge of B_2 would see the end of the
/// set rather than its flatness.
fn sampled_linf(points: &[Vec<f64>], k: usize, scales: &[f64], samples: usize) -> Result<f64> {
    let inner: Vec<&Vec<f64>> = points.iter().filter(|p| norm(p) <= 1.0).collect();
    if samples == 0 || inner.is_empty() {
        return Ok(0.0);
    }
    let step = inner.len().div_ceil(samples);
    let mut worst = 0.0f64;
    for &r in scales {
        for &x in inner.iter().step_by(step) {
            let b = Ball { center: x.clone(), radius: r };
            worst = worst.max(beta_linf(points, &b, k)?);
        }
    }
    Ok(worst)
}

pub fn build_reifenberg_map(points: &[Vec<f64>], k: usize, depth: usize, cfg: ReifConfig) -> Result<ReifenbergMap> {
    cfg.validate()?;
    let set = Arc::new(DiscreteMeasure::uniform(points)?);
    let n = set.dim();
    if k == 0 || k >= n {
        return Err(Error::Input(format!("k = {k} must lie in [1, {n})")));
    }
    let all: Vec<usize> = (0..set.len()).collect();
    let radius = points.iter().map(|p| norm(p)).fold(0.0, f64::max);
    let base = fit_from_moments(&set.moments_of(&all), &Ball { center: vec![0.0; n], radius: radius.max(1e-300) }, k)?.subspace;
    let levels: Vec<f64> = (0..=depth).map(|i| 2f64.powi(-(i as i32))).collect();
    let reach = radius.max(2.0) * (1.0 + 1.0 / 16.0);
    let mut warnings = Vec::new();
    let sampled_flatness = sampled_linf(points, k, &levels[1..], cfg.flatness_samples)?;
    if sampled_flatness > DELTA_CEILING {
        warnings.push(format!("sampled flatness {sampled_flatness:.3} exceeds the working ceiling {DELTA_CEILING}"));
    }
    let fields: Vec<SubspaceField> =
        levels[1..].iter().map(|&r| subspace_field(set.clone(), r, k, &cfg, reach)).collect::<Result<_>>()?;
    let mut z: Vec<Vec<f64>> = points.to_vec();
    let mut diagnostics = Vec::new();
    for (i, f) in fields.iter().enumerate().rev() {
        let r = levels[i + 1];
        let tol = cfg.tol_rel * r;
        let (next, resid): (Vec<Vec<f64>>, Vec<f64>) =
            z.par_iter().map(|p| f.project_with_residual(p, tol)).collect::<Result<Vec<_>>>()?.into_iter().unzip();
        let disp: Vec<f64> = z.iter().zip(&next).map(|(a, b)| dist(a, b) / r).collect();
        diagnostics.push(LevelDiagnostics {
            level: i + 1,
            r,
            centers: f.cover.centers.len(),
            max_disp_over_r: disp.iter().copied().fold(0.0, f64::max),
            median_disp_over_r: median(disp),
            max_level_residual: resid.into_iter().fold(0.0, f64::max) / (r * r),
        });
        z = next;
    }
    let images = z.iter().map(|p| base.coords(p)).collect();
    Ok(ReifenbergMap { k, levels, base, fields, config: cfg, images, diagnostics, sampled_flatness, warnings })
}

impl ReifenbergMap {
    /// Image of an arbitrary point near the set.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = x.to_vec();
        for (i, f) in self.fields.iter().enumerate().rev() {
            z = f.project_to_level(&z, self.config.tol_rel * self.levels[i + 1])?;
        }
        Ok(self.base.coords(&z))
    }

    /// Sampled inverse: the index of the sample whose image is nearest to `u`.
    pub fn inverse_sample(&self, u: &[f64]) -> Option<usize> {
        self.images
            .iter()
            .enumerate()
            .min_by(|a, b| dist(a.1, u).total_cmp(&dist(b.1, u)))
            .map(|(i, _)| i)
    }

    /// No two samples share an image up to `tol`.
    pub fn injective(&self, tol: f64) -> bool {
        let Ok(idx) = DiscreteMeasure::uniform(&self.images) else {
            return true;
        };
        (0..self.images.len()).all(|i| idx.count_in(&self.images[i], tol) <= 1)
    }
}

/// Envelope exponents of the parametrization u ↦ x, read from pairs of
/// samples x_i with base-plane images u_i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    /// Slope through the per-bin pairs with the smallest |x_i - x_j|.
    pub lower: f64,
    /// Slope through the per-bin pairs with the largest |x_i - x_j|.
    pub upper: f64,
    pub pairs: usize,
    pub bins: usize,
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Bins all pairs by decade of image distance |u_i - u_j| (from `min_dist`
/// up) and fits log|x_i - x_j| against log|u_i - u_j| through the per-bin
/// extremes.
pub fn holder_exponent(points: &[Vec<f64>], images: &[Vec<f64>], min_dist: f64) -> Result<HolderFit> {
    if points.len() != images.len() {
        return Err(Error::Input(format!("{} points but {} images", points.len(), images.len())));
    }
    // per bin: (log du, log dx) of the max and min pair
    let mut bins: std::collections::BTreeMap<i64, ((f64, f64), (f64, f64))> = Default::default();
    let mut pairs = 0usize;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let du = dist(&images[i], &images[j]);
            let dx = dist(&points[i], &points[j]);
            if !(du > 0.0 && dx > 0.0) || du < min_dist {
                continue;
            }
            pairs += 1;
            let (lu, lx) = (du.ln(), dx.ln());
            let key = du.log10().floor() as i64;
            let e = bins.entry(key).or_insert(((lu, lx), (lu, lx)));
            if lx > e.0 .1 {
                e.0 = (lu, lx);
            }
            if lx < e.1 .1 {
                e.1 = (lu, lx);
            }
        }
    }
    if pairs < 10 {
        return Err(Error::InsufficientData(format!("{pairs} usable pairs, need at least 10")));
    }
    if bins.len() < 2 {
        return Err(Error::InsufficientData("pair distances span a single decade".into()));
    }
    let upper: Vec<(f64, f64)> = bins.values().map(|b| b.0).collect();
    let lower: Vec<(f64, f64)> = bins.values().map(|b| b.1).collect();
    Ok(HolderFit { lower: slope(&lower), upper: slope(&upper), pairs, bins: bins.len() })
}
