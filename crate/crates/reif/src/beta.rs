//! Best-fit planes, L² and L^∞ flatness numbers, and dyadic distortion sums.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{check_dim, norm, orthonormalize, slice, AffineSubspace, Ball};
use crate::measure::{DiscreteMeasure, Moments};
use crate::{Error, Result};

/// Relative eigenvalue gap below which the top-k eigenspace is ambiguous.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceFit {
    pub subspace: AffineSubspace,
    pub beta: f64,
    /// Eigenvalues of the weighted scatter matrix about the centroid, descending.
    pub eigenvalues: Vec<f64>,
    pub mass: f64,
    /// Set when the ball holds no mass; the plane is then e_1..e_k through the center.
    pub vacuous: bool,
}

impl SubspaceFit {
    pub fn beta_sq(&self) -> f64 {
        self.beta * self.beta
    }
}

fn first_nonzero_positive(v: &mut [f64]) {
    if let Some(x) = v.iter().find(|x| x.abs() > 1e-12) {
        if *x < 0.0 {
            v.iter_mut().for_each(|y| *y = -*y);
        }
    }
}

/// Top-k eigenvectors of a symmetric matrix with a deterministic choice inside
/// a degenerate eigenspace straddling position k. Returns (eigenvalues
/// descending, chosen basis).
pub fn top_eigenvectors(mat: &DMatrix<f64>, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = mat.nrows();
    let eig = SymmetricEigen::new(mat.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap().then(a.cmp(&b)));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs: Vec<Vec<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    if k == 0 {
        return (vals, Vec::new());
    }
    let scale = vals[0].abs().max(f64::MIN_POSITIVE);
    let tied = |a: f64, b: f64| (a - b).abs() <= TIE_TOL * scale;
    let mut basis: Vec<Vec<f64>>;
    if k < n && tied(vals[k - 1], vals[k]) {
        let mut lo = k - 1;
        while lo > 0 && tied(vals[lo - 1], vals[k - 1]) {
            lo -= 1;
        }
        let mut hi = k;
        while hi + 1 < n && tied(vals[hi + 1], vals[k]) {
            hi += 1;
        }
        basis = vecs[..lo].to_vec();
        let group = &vecs[lo..=hi];
        // project e_1, e_2, ... onto the tied eigenspace
        for axis in 0..n {
            if basis.len() == k {
                break;
            }
            let mut cand = vec![0.0; n];
            for g in group {
                let c = g[axis];
                cand.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
            }
            let mut trial = basis.clone();
            trial.push(cand);
            if let Ok(q) = orthonormalize(&trial) {
                basis = q;
            }
        }
    } else {
        basis = vecs[..k].to_vec();
    }
    basis.iter_mut().for_each(|b| first_nonzero_positive(b));
    (vals, basis)
}

pub fn scatter_matrix(m: &Moments) -> DMatrix<f64> {
    let n = m.dim();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (m.scatter[i * n + j] + m.scatter[j * n + i]))
}

/// Fit from precomputed slice moments of the ball `b`.
pub fn fit_from_moments(m: &Moments, b: &Ball, k: usize) -> Result<SubspaceFit> {
    let n = m.dim();
    if k >= n {
        return Err(Error::Input(format!("k = {k} must be below the ambient dimension {n}")));
    }
    if m.mass <= 0.0 {
        return Ok(SubspaceFit {
            subspace: AffineSubspace { base: b.center.clone(), ..AffineSubspace::coordinate(n, 0, k) },
            beta: 0.0,
            eigenvalues: vec![0.0; n],
            mass: 0.0,
            vacuous: true,
        });
    }
    let (mut vals, basis) = top_eigenvectors(&scatter_matrix(m), k);
    vals.iter_mut().for_each(|v| *v = v.max(0.0));
    let resid: f64 = vals[k..].iter().sum();
    let beta = (resid / b.radius.powi(k as i32 + 2)).sqrt();
    Ok(SubspaceFit {
        subspace: AffineSubspace { base: m.mean.clone(), basis },
        beta,
        eigenvalues: vals,
        mass: m.mass,
        vacuous: false,
    })
}

/// L² best k-plane of μ restricted to the open ball.
pub fn fit_best_subspace(m: &DiscreteMeasure, b: &Ball, k: usize) -> Result<SubspaceFit> {
    check_dim(m.dim(), b.dim())?;
    fit_from_moments(&m.moments_at(&b.center, b.radius), b, k)
}

/// β_k(x,r)² alone.
pub fn beta_sq(m: &DiscreteMeasure, c: &[f64], r: f64, k: usize) -> f64 {
    let mo = m.moments_at(c, r);
    if mo.mass <= 0.0 {
        return 0.0;
    }
    let n = mo.dim();
    let eig = SymmetricEigen::new(scatter_matrix(&mo));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    vals[k.min(n)..].iter().sum::<f64>() / r.powi(k as i32 + 2)
}

/// r^{-k-2} Σ w d(p, L)² over the open ball: the integrand of β for a fixed plane.
pub fn plane_residual(m: &DiscreteMeasure, b: &Ball, l: &AffineSubspace) -> f64 {
    m.indices_in_ball(b).iter().map(|&i| m.weight(i) * l.distance2(m.point(i))).sum::<f64>()
        / b.radius.powi(l.k() as i32 + 2)
}

/// Orthonormal frame: the first k vectors span the plane, the rest its complement.
fn complete_frame(basis: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut frame = basis.to_vec();
    for axis in 0..n {
        if frame.len() == n {
            break;
        }
        let mut e = vec![0.0; n];
        e[axis] = 1.0;
        let mut trial = frame.clone();
        trial.push(e);
        if let Ok(q) = orthonormalize(&trial) {
            frame = q;
        }
    }
    frame
}

struct LinfObjective<'a> {
    pts: Vec<&'a [f64]>,
    cloud: DiscreteMeasure,
    ball: &'a Ball,
    k: usize,
}

impl LinfObjective<'_> {
    /// d_H(S ∩ B, L ∩ B) with the plane slice sampled at radius/64.
    fn eval(&self, l: &AffineSubspace) -> f64 {
        let Ok(disk) = slice(l, self.ball) else {
            return f64::INFINITY;
        };
        let to_plane = self.pts.iter().map(|p| disk.distance(p)).fold(0.0, f64::max);
        let h = self.ball.radius / crate::geometry::SLICE_DIVISIONS as f64;
        let mut to_set: f64 = 0.0;
        for q in disk_grid(&disk, h) {
            to_set = to_set.max(self.cloud.nearest(&q).map(|x| x.1).unwrap_or(f64::INFINITY));
        }
        to_plane.max(to_set)
    }
}

/// Interior grid of spacing h plus the boundary sphere samples of a disk.
fn disk_grid(disk: &crate::geometry::Disk, h: f64) -> Vec<Vec<f64>> {
    let k = disk.plane.k();
    let m = (disk.radius / h).floor() as i64;
    let mut out = disk.boundary_samples(crate::geometry::SLICE_DIVISIONS);
    if k == 0 {
        return out;
    }
    let mut idx = vec![-m; k];
    loop {
        let u: Vec<f64> = idx.iter().map(|&i| i as f64 * h).collect();
        if norm(&u) <= disk.radius {
            let mut p = disk.center.clone();
            for (c, b) in u.iter().zip(&disk.plane.basis) {
                crate::geometry::axpy(&mut p, *c, b);
            }
            out.push(p);
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

/// Scaled Hausdorff distance from the finite set to the best k-plane found by
/// coordinate descent over base offsets and plane rotations, seeded with the
/// L² fit of the uniform measure on the slice. An upper bound on the infimum
/// up to the plane-slice sampling.
pub fn beta_linf(points: &[Vec<f64>], b: &Ball, k: usize) -> Result<f64> {
    let n = b.dim();
    if k >= n {
        return Err(Error::Input(format!("k = {k} must be below the ambient dimension {n}")));
    }
    let pts: Vec<&[f64]> = points
        .iter()
        .map(|p| check_dim(n, p.len()).map(|_| p.as_slice()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| b.contains(p))
        .collect();
    if pts.is_empty() {
        return Err(Error::EmptySlice);
    }
    let owned: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
    let cloud = DiscreteMeasure::uniform(&owned)?;
    let seed = fit_from_moments(&cloud.moments_of(&(0..cloud.len()).collect::<Vec<_>>()), b, k)?.subspace;
    let obj = LinfObjective { pts, cloud, ball: b, k };

    let mut base = seed.base.clone();
    let mut frame = complete_frame(&seed.basis, n);
    let plane = |base: &[f64], frame: &[Vec<f64>]| AffineSubspace { base: base.to_vec(), basis: frame[..k].to_vec() };
    let mut best = obj.eval(&plane(&base, &frame));
    let r = b.radius;
    for _restart in 0..3 {
        let (mut step_off, mut step_rot) = (r / 8.0, 0.25f64);
        let mut sweeps = 0;
        while step_off > r * 1e-5 && sweeps < 400 {
            sweeps += 1;
            let mut improved = false;
            for axis in 0..n {
                for sgn in [1.0, -1.0] {
                    let mut nb = base.clone();
                    nb[axis] += sgn * step_off;
                    let v = obj.eval(&plane(&nb, &frame));
                    if v < best {
                        best = v;
                        base = nb;
                        improved = true;
                    }
                }
            }
            for i in 0..obj.k {
                for j in obj.k..n {
                    for sgn in [1.0, -1.0] {
                        let (c, s) = ((sgn * step_rot).cos(), (sgn * step_rot).sin());
                        let mut nf = frame.clone();
                        nf[i] = frame[i].iter().zip(&frame[j]).map(|(a, bb)| c * a + s * bb).collect();
                        nf[j] = frame[i].iter().zip(&frame[j]).map(|(a, bb)| -s * a + c * bb).collect();
                        // rotate about the projection of the center so the slice stays put
                        let pivot = plane(&base, &frame).project_unchecked(&b.center);
                        let v = obj.eval(&plane(&pivot, &nf));
                        if v < best {
                            best = v;
                            frame = nf;
                            base = pivot;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step_off *= 0.5;
                step_rot *= 0.5;
            }
        }
    }
    Ok(best / r)
}

/// β at dyadic scales below `r_max` and the cumulative distortion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaProfile {
    pub center: Vec<f64>,
    pub k: usize,
    /// Decreasing radii.
    pub scales: Vec<f64>,
    pub betas: Vec<f64>,
    /// `distortion[i]` = Σ β² over scales ≤ `scales[i]`.
    pub distortion: Vec<f64>,
}

/// Scales r_max·ratio^{-i} that are ≥ r_min.
pub fn scale_grid(r_max: f64, r_min: f64, ratio: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut s = r_max;
    while s >= r_min * (1.0 - 1e-12) {
        out.push(s);
        s /= ratio;
    }
    out
}

pub fn beta_profile(m: &DiscreteMeasure, x: &[f64], k: usize, r_max: f64, r_min: f64) -> Result<BetaProfile> {
    beta_profile_ratio(m, x, k, r_max, r_min, 2.0)
}

pub fn beta_profile_ratio(
    m: &DiscreteMeasure,
    x: &[f64],
    k: usize,
    r_max: f64,
    r_min: f64,
    ratio: f64,
) -> Result<BetaProfile> {
    check_dim(m.dim(), x.len())?;
    if !(r_min > 0.0 && r_min < r_max) || !(ratio > 1.0) {
        return Err(Error::Input(format!("need 0 < rmin < rmax and ratio > 1, got {r_min}, {r_max}, {ratio}")));
    }
    if k >= m.dim() {
        return Err(Error::Input(format!("k = {k} must be below the ambient dimension {}", m.dim())));
    }
    let scales = scale_grid(r_max, r_min, ratio);
    let betas: Vec<f64> = scales.iter().map(|&r| beta_sq(m, x, r, k).sqrt()).collect();
    let mut distortion = vec![0.0; scales.len()];
    let mut acc = 0.0;
    for i in (0..scales.len()).rev() {
        acc += betas[i] * betas[i];
        distortion[i] = acc;
    }
    Ok(BetaProfile { center: x.to_vec(), k, scales, betas, distortion })
}

impl BetaProfile {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Io(e.to_string());
        wr.write_record(["scale", "beta", "distortion"]).map_err(err)?;
        for i in 0..self.scales.len() {
            wr.write_record([self.scales[i].to_string(), self.betas[i].to_string(), self.distortion[i].to_string()])
                .map_err(err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// β² of every support point on the global dyadic grid 2, 1, 1/2, ... ≥ r_min,
/// so that D(y,t) = Σ_{g ≤ t} β(y,g)² is a table lookup.
#[derive(Debug, Clone)]
pub struct DistortionTable {
    pub k: usize,
    /// Decreasing grid scales.
    pub scales: Vec<f64>,
    /// Row-major: `suffix[i * (len+1) + j]` = Σ_{l ≥ j} β(y_i, scales[l])².
    suffix: Vec<f64>,
}

impl DistortionTable {
    pub fn build(m: &DiscreteMeasure, k: usize, r_min: f64) -> DistortionTable {
        Self::build_range(m, k, 2.0, r_min)
    }

    /// Grid r_max, r_max/2, ... ≥ r_min.
    pub fn build_range(m: &DiscreteMeasure, k: usize, r_max: f64, r_min: f64) -> DistortionTable {
        let scales = scale_grid(r_max, r_min, 2.0);
        let s = scales.len();
        let rows: Vec<Vec<f64>> = (0..m.len())
            .into_par_iter()
            .map(|i| {
                let y = m.point(i);
                let mut row = vec![0.0; s + 1];
                for j in (0..s).rev() {
                    row[j] = row[j + 1] + beta_sq(m, y, scales[j], k);
                }
                row
            })
            .collect();
        DistortionTable { k, scales, suffix: rows.concat() }
    }

    /// First grid index with scale ≤ t.
    fn first_at_most(&self, t: f64) -> usize {
        self.scales.iter().position(|&g| g <= t * (1.0 + 1e-12)).unwrap_or(self.scales.len())
    }

    /// D(y_i, t) for support point i.
    pub fn at(&self, i: usize, t: f64) -> f64 {
        let s = self.scales.len();
        self.suffix[i * (s + 1) + self.first_at_most(t)]
    }

    /// Σ β² over grid scales in (lo, hi].
    pub fn window(&self, i: usize, lo: f64, hi: f64) -> f64 {
        (self.at(i, hi) - self.at(i, lo)).max(0.0)
    }
}

/// D(y,t) at an arbitrary point on the grid 2, 1, 1/2, ... ≥ r_min.
pub fn distortion_at(m: &DiscreteMeasure, y: &[f64], k: usize, t: f64, r_min: f64) -> f64 {
    scale_grid(2.0, r_min, 2.0)
        .into_iter()
        .filter(|&g| g <= t * (1.0 + 1e-12))
        .map(|g| beta_sq(m, y, g, k))
        .sum()
}
