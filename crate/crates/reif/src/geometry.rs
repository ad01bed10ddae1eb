//! Affine subspaces, projections and subspace comparison.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Overlap with earlier directions above which Gram-Schmidt runs a second pass.
const REORTH_THRESHOLD: f64 = 1e-8;
/// Default intrinsic grid divisions per radius for slice sampling.
pub const SLICE_DIVISIONS: usize = 64;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

/// `y += s * x`
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Ball> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Input(format!("ball radius must be positive, got {radius}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input("ball center must be finite".into()));
        }
        Ok(Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Same center, radius multiplied by `f`.
    pub fn scaled(&self, f: f64) -> Ball {
        Ball { center: self.center.clone(), radius: self.radius * f }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        dist2(p, &self.center) < self.radius * self.radius
    }
}

/// Orthonormalize `vectors` by modified Gram-Schmidt. A vector whose overlap
/// with the earlier directions exceeds the threshold gets a second sweep. A
/// vector whose remainder is negligible makes the family degenerate; its index
/// is reported.
pub fn orthonormalize(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for (i, v) in vectors.iter().enumerate() {
        let scale = norm(v);
        if !(scale > 0.0) {
            return Err(Error::Degenerate { index: i });
        }
        let mut w: Vec<f64> = v.iter().map(|x| x / scale).collect();
        let loss = out.iter().map(|q| dot(&w, q).abs()).fold(0.0, f64::max);
        let passes = if loss > REORTH_THRESHOLD { 2 } else { 1 };
        for _ in 0..passes {
            for q in &out {
                let c = dot(&w, q);
                axpy(&mut w, -c, q);
            }
        }
        let nw = norm(&w);
        if nw < 1e-12 {
            return Err(Error::Degenerate { index: i });
        }
        w.iter_mut().for_each(|x| *x /= nw);
        out.push(w);
    }
    Ok(out)
}

/// Affine k-plane `base + span(basis)` with orthonormal basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineSubspace {
    pub base: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
}

impl AffineSubspace {
    pub fn new(base: Vec<f64>, directions: &[Vec<f64>]) -> Result<AffineSubspace> {
        for d in directions {
            check_dim(base.len(), d.len())?;
        }
        if directions.len() > base.len() {
            return Err(Error::Input("more directions than ambient dimension".into()));
        }
        let basis = orthonormalize(directions)?;
        Ok(AffineSubspace { base, basis })
    }

    /// span(e_{first}, ..., e_{first+k-1}) through the origin of R^n.
    pub fn coordinate(n: usize, first: usize, k: usize) -> AffineSubspace {
        let basis = (first..first + k)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect();
        AffineSubspace { base: vec![0.0; n], basis }
    }

    /// Affine span of `points`, orthonormalized in order.
    pub fn through_points(points: &[Vec<f64>]) -> Result<AffineSubspace> {
        let first = points.first().ok_or_else(|| Error::Input("no points".into()))?;
        let dirs: Vec<Vec<f64>> = points[1..].iter().map(|p| sub(p, first)).collect();
        AffineSubspace::new(first.clone(), &dirs).map_err(|e| match e {
            Error::Degenerate { index } => Error::Degenerate { index: index + 1 },
            e => e,
        })
    }

    pub fn k(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    /// The parallel subspace through the origin.
    pub fn linear_part(&self) -> AffineSubspace {
        AffineSubspace { base: vec![0.0; self.dim()], basis: self.basis.clone() }
    }

    /// Intrinsic coordinates of the projection of `y`.
    pub fn coords(&self, y: &[f64]) -> Vec<f64> {
        let d = sub(y, &self.base);
        self.basis.iter().map(|b| dot(&d, b)).collect()
    }

    pub fn point_at(&self, coords: &[f64]) -> Vec<f64> {
        let mut p = self.base.clone();
        for (c, b) in coords.iter().zip(&self.basis) {
            axpy(&mut p, *c, b);
        }
        p
    }

    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), y.len())?;
        Ok(self.project_unchecked(y))
    }

    pub(crate) fn project_unchecked(&self, y: &[f64]) -> Vec<f64> {
        self.point_at(&self.coords(y))
    }

    /// Linear projection onto the direction space.
    pub fn project_vector(&self, v: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; v.len()];
        for b in &self.basis {
            axpy(&mut p, dot(v, b), b);
        }
        p
    }

    pub fn distance(&self, y: &[f64]) -> f64 {
        self.distance2(y).sqrt()
    }

    pub fn distance2(&self, y: &[f64]) -> f64 {
        let d = sub(y, &self.base);
        let along: f64 = self.basis.iter().map(|b| dot(&d, b).powi(2)).sum();
        (dot(&d, &d) - along).max(0.0)
    }

    /// Projection matrix of the linear part.
    pub fn projector(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut p = DMatrix::zeros(n, n);
        for b in &self.basis {
            for i in 0..n {
                for j in 0..n {
                    p[(i, j)] += b[i] * b[j];
                }
            }
        }
        p
    }
}

/// Operator norm of the difference of the two linear projections: the sine of
/// the largest principal angle, read off as the top singular value of the part
/// of the second basis orthogonal to the first (accurate for small angles).
pub fn linear_projection_distance(l1: &AffineSubspace, l2: &AffineSubspace) -> Result<f64> {
    check_dim(l1.dim(), l2.dim())?;
    if l1.k() != l2.k() {
        return Err(Error::Input(format!("subspace dimensions differ: {} vs {}", l1.k(), l2.k())));
    }
    let (n, k) = (l1.dim(), l1.k());
    if k == 0 || k == n {
        return Ok(0.0);
    }
    let resid = DMatrix::from_fn(n, k, |i, j| {
        let v = &l2.basis[j];
        v[i] - l1.basis.iter().map(|b| dot(b, v) * b[i]).sum::<f64>()
    });
    Ok(resid.singular_values().max().min(1.0))
}

/// The slice L ∩ B: a k-disk in L.
#[derive(Debug, Clone)]
pub struct Disk<'a> {
    pub plane: &'a AffineSubspace,
    pub center: Vec<f64>,
    pub radius: f64,
}

pub fn slice<'a>(l: &'a AffineSubspace, b: &Ball) -> Result<Disk<'a>> {
    check_dim(b.dim(), l.dim())?;
    let center = l.project_unchecked(&b.center);
    let h2 = dist2(&center, &b.center);
    let r2 = b.radius * b.radius;
    if h2 > r2 {
        return Err(Error::DisjointSlice);
    }
    Ok(Disk { plane: l, center, radius: (r2 - h2).sqrt() })
}

impl Disk<'_> {
    /// Exact Euclidean distance from `p` to the disk.
    pub fn distance(&self, p: &[f64]) -> f64 {
        let foot = self.plane.project_unchecked(p);
        let normal2 = dist2(p, &foot);
        let radial = (dist(&foot, &self.center) - self.radius).max(0.0);
        (normal2 + radial * radial).sqrt()
    }

    /// Boundary sphere samples: grid of `m` cells per half side on the
    /// surface of the enclosing cube, pushed radially onto the sphere.
    pub fn boundary_samples(&self, m: usize) -> Vec<Vec<f64>> {
        let k = self.plane.k();
        match k {
            0 => return vec![self.center.clone()],
            1 => {
                let b = &self.plane.basis[0];
                let mut a = self.center.clone();
                let mut c = self.center.clone();
                axpy(&mut a, -self.radius, b);
                axpy(&mut c, self.radius, b);
                return vec![a, c];
            }
            _ => {}
        }
        let m = m.max(1);
        let ticks: Vec<f64> = (0..=2 * m).map(|j| -1.0 + j as f64 / m as f64).collect();
        let mut out = Vec::new();
        let mut idx = vec![0usize; k - 1];
        for axis in 0..k {
            for sign in [-1.0, 1.0] {
                idx.iter_mut().for_each(|i| *i = 0);
                loop {
                    let mut u = Vec::with_capacity(k);
                    let mut it = idx.iter();
                    for a in 0..k {
                        if a == axis {
                            u.push(sign);
                        } else {
                            u.push(ticks[*it.next().unwrap()]);
                        }
                    }
                    let nu = norm(&u);
                    let mut p = self.center.clone();
                    for (c, b) in u.iter().zip(&self.plane.basis) {
                        axpy(&mut p, self.radius * c / nu, b);
                    }
                    out.push(p);
                    // odometer over the remaining k-1 coordinates
                    let mut d = 0;
                    while d < idx.len() {
                        idx[d] += 1;
                        if idx[d] < ticks.len() {
                            break;
                        }
                        idx[d] = 0;
                        d += 1;
                    }
                    if d == idx.len() {
                        break;
                    }
                }
            }
        }
        out
    }
}

/// Sampling error bound of [`subspace_hausdorff_on_ball`] for k-dimensional
/// slices of `b`: one grid-cell diameter.
pub fn slice_tolerance(b: &Ball, k: usize) -> f64 {
    b.radius / SLICE_DIVISIONS as f64 * (k as f64).sqrt()
}

/// Hausdorff distance between L1 ∩ B and L2 ∩ B.
pub fn subspace_hausdorff_on_ball(l1: &AffineSubspace, l2: &AffineSubspace, b: &Ball) -> Result<f64> {
    subspace_hausdorff_on_ball_with(l1, l2, b, SLICE_DIVISIONS)
}

/// As [`subspace_hausdorff_on_ball`] with `divisions` grid cells per radius.
/// Distance to a disk is convex, so each one-sided sup is attained on the
/// boundary sphere of the other slice; only that sphere is sampled and the
/// distances to the opposite disk are exact.
pub fn subspace_hausdorff_on_ball_with(
    l1: &AffineSubspace,
    l2: &AffineSubspace,
    b: &Ball,
    divisions: usize,
) -> Result<f64> {
    check_dim(l1.dim(), l2.dim())?;
    let d1 = slice(l1, b)?;
    let d2 = slice(l2, b)?;
    let one_sided = |from: &Disk, to: &Disk| -> f64 {
        from.boundary_samples(divisions).iter().map(|p| to.distance(p)).fold(0.0, f64::max)
    };
    Ok(one_sided(&d1, &d2).max(one_sided(&d2, &d1)))
}

/// Returns (| |π̂1 v| - 1 |, d²) where d is the Hausdorff distance of the
/// linear parts on the unit ball. For subspaces through the center that
/// distance is exactly the operator norm of π̂1 - π̂2, so no sampling is needed.
pub fn square_gain_check(l1: &AffineSubspace, l2: &AffineSubspace, v: &[f64]) -> Result<(f64, f64)> {
    check_dim(l2.dim(), v.len())?;
    if (norm(v) - 1.0).abs() > 1e-10 {
        return Err(Error::Input(format!("vector is not unit: |v| = {}", norm(v))));
    }
    if dist(&l2.project_vector(v), v) > 1e-8 {
        return Err(Error::Input("vector does not lie in the second subspace".into()));
    }
    check_dim(l1.dim(), l2.dim())?;
    let d = (l1.projector() - l2.projector()).svd(false, false).singular_values.max();
    let gain = (norm(&l1.project_vector(v)) - 1.0).abs();
    Ok((gain, d * d))
}

/// Outcome of the greedy independence test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Independence {
    pub independent: bool,
    /// `clearances[i]` is the distance of point i+1 to the span of points 0..=i.
    pub clearances: Vec<f64>,
    pub witness: Option<usize>,
}

/// Each point must sit at least `eps * r` away from the affine span of the
/// points before it.
pub fn independence(points: &[Vec<f64>], eps: f64, r: f64) -> Independence {
    let mut clearances = Vec::with_capacity(points.len().saturating_sub(1));
    let mut witness = None;
    if let Some(x0) = points.first() {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for (i, p) in points.iter().enumerate().skip(1) {
            let mut w = sub(p, x0);
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(&w, q);
                    axpy(&mut w, -c, q);
                }
            }
            let c = norm(&w);
            clearances.push(c);
            if c < eps * r {
                witness.get_or_insert(i);
            }
            if c > 0.0 {
                w.iter_mut().for_each(|x| *x /= c);
                basis.push(w);
            }
        }
    }
    Independence { independent: witness.is_none(), clearances, witness }
}

/// Affine span of (k,eps)-independent points at scale `r`.
pub fn fit_through_independent_points(points: &[Vec<f64>], eps: f64, r: f64) -> Result<AffineSubspace> {
    let test = independence(points, eps, r);
    if let Some(index) = test.witness {
        return Err(Error::Degenerate { index });
    }
    AffineSubspace::through_points(points)
}
