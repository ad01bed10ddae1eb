//! Discrete measures: weighted point clouds with indexed ball queries.

mod io;
mod kdtree;

pub use io::{read_measure, write_measure_csv, write_measure_json, MeasureFile};
pub use kdtree::Moments;

use sha2::{Digest, Sha256};

use crate::geometry::{check_dim, dist2, Ball};
use crate::{Error, Result};
use kdtree::{in_ball, KdTree, Visit};

/// Below this many points queries scan linearly.
const SCAN_THRESHOLD: usize = 64;

#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    index: Option<KdTree>,
}

impl DiscreteMeasure {
    /// `coords` holds the points row-major, `dim` values each.
    pub fn new(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<DiscreteMeasure> {
        if dim == 0 {
            return Err(Error::Input("dimension must be positive".into()));
        }
        if coords.len() != dim * weights.len() {
            return Err(Error::Input(format!(
                "{} coordinates do not match {} weights in dimension {dim}",
                coords.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Input(format!("weights must be finite and nonnegative, got {w}")));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input("coordinates must be finite".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Input("total mass must be positive".into()));
        }
        let index = (weights.len() > SCAN_THRESHOLD).then(|| KdTree::build(dim, &coords, &weights));
        Ok(DiscreteMeasure { dim, coords, weights, index })
    }

    pub fn from_points(points: &[Vec<f64>], weights: Vec<f64>) -> Result<DiscreteMeasure> {
        let dim = points.first().map(|p| p.len()).ok_or_else(|| Error::Input("no points".into()))?;
        let mut coords = Vec::with_capacity(dim * points.len());
        for p in points {
            check_dim(dim, p.len())?;
            coords.extend_from_slice(p);
        }
        DiscreteMeasure::new(dim, coords, weights)
    }

    pub fn uniform(points: &[Vec<f64>]) -> Result<DiscreteMeasure> {
        DiscreteMeasure::from_points(points, vec![1.0; points.len()])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Hex SHA-256 of the dimension, coordinates and weights (little endian).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for c in &self.coords {
            h.update(c.to_le_bytes());
        }
        for w in &self.weights {
            h.update(w.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn for_each_in(&self, c: &[f64], r: f64, closed: bool, mut f: impl FnMut(usize)) {
        match &self.index {
            Some(t) => t.visit(&self.coords, c, r, closed, |v| match v {
                Visit::Node(n) => t.perm[n.start..n.end].iter().for_each(|&i| f(i)),
                Visit::Point(i) => f(i),
            }),
            None => {
                let r2 = r * r;
                for i in 0..self.len() {
                    if in_ball(dist2(self.point(i), c), r2, closed) {
                        f(i);
                    }
                }
            }
        }
    }

    /// Sorted indices of points in the open ball, or the closed ball when `closed`.
    pub fn indices_in(&self, c: &[f64], r: f64, closed: bool) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_in(c, r, closed, |i| out.push(i));
        out.sort_unstable();
        out
    }

    pub fn indices_in_ball(&self, b: &Ball) -> Vec<usize> {
        self.indices_in(&b.center, b.radius, false)
    }

    /// μ(B_r(c)) for the open ball.
    pub fn mass_at(&self, c: &[f64], r: f64) -> f64 {
        self.mass_in(c, r, false)
    }

    pub fn mass_in(&self, c: &[f64], r: f64, closed: bool) -> f64 {
        match &self.index {
            Some(t) => {
                let mut m = 0.0;
                t.visit(&self.coords, c, r, closed, |v| match v {
                    Visit::Node(n) => m += n.moments.mass,
                    Visit::Point(i) => m += self.weights[i],
                });
                m
            }
            None => {
                let mut m = 0.0;
                self.for_each_in(c, r, closed, |i| m += self.weights[i]);
                m
            }
        }
    }

    pub fn mass_in_ball(&self, b: &Ball) -> f64 {
        self.mass_at(&b.center, b.radius)
    }

    pub fn count_in(&self, c: &[f64], r: f64) -> usize {
        let mut n = 0;
        match &self.index {
            Some(t) => t.visit(&self.coords, c, r, false, |v| match v {
                Visit::Node(nd) => n += nd.end - nd.start,
                Visit::Point(_) => n += 1,
            }),
            None => self.for_each_in(c, r, false, |_| n += 1),
        }
        n
    }

    /// Weighted moments of the slice in the open ball. Whole tree nodes are
    /// merged from their stored moments.
    pub fn moments_at(&self, c: &[f64], r: f64) -> Moments {
        let mut m = Moments::zero(self.dim);
        match &self.index {
            Some(t) => {
                let mut pts = Vec::new();
                t.visit(&self.coords, c, r, false, |v| match v {
                    Visit::Node(n) => m.merge(&n.moments),
                    Visit::Point(i) => pts.push(i),
                });
                m.merge(&self.moments_of(&pts));
            }
            None => m = self.moments_of(&self.indices_in(c, r, false)),
        }
        m
    }

    /// Two-pass moments of an explicit index set.
    pub fn moments_of(&self, idx: &[usize]) -> Moments {
        let dim = self.dim;
        let mut m = Moments::zero(dim);
        m.mass = idx.iter().map(|&i| self.weights[i]).sum();
        if m.mass <= 0.0 {
            return Moments::zero(dim);
        }
        for &i in idx {
            let w = self.weights[i] / m.mass;
            for d in 0..dim {
                m.mean[d] += w * self.point(i)[d];
            }
        }
        for &i in idx {
            let w = self.weights[i];
            if w == 0.0 {
                continue;
            }
            let p = self.point(i);
            for a in 0..dim {
                let da = p[a] - m.mean[a];
                for b in 0..dim {
                    m.scatter[a * dim + b] += w * da * (p[b] - m.mean[b]);
                }
            }
        }
        m
    }

    pub fn center_of_mass(&self, b: &Ball) -> Result<Vec<f64>> {
        check_dim(self.dim, b.dim())?;
        let idx = self.indices_in_ball(b);
        let m = self.moments_of(&idx);
        if m.mass <= 0.0 {
            return Err(Error::EmptySlice);
        }
        Ok(m.mean)
    }

    pub fn restrict(&self, b: &Ball) -> MeasureSlice<'_> {
        MeasureSlice { parent: self, indices: self.indices_in_ball(b) }
    }

    pub fn full_slice(&self) -> MeasureSlice<'_> {
        MeasureSlice { parent: self, indices: (0..self.len()).collect() }
    }

    /// Indices of points in the open ball such that every point of the ball
    /// lies within `resolution` of one of them.
    pub fn net_in(&self, c: &[f64], r: f64, resolution: f64) -> Vec<usize> {
        match &self.index {
            Some(t) => t.net_in_ball(&self.coords, c, r, resolution),
            None => self.indices_in(c, r, false),
        }
    }

    /// Nearest support point to `q` (smallest index on ties) and its distance.
    pub fn nearest(&self, q: &[f64]) -> Option<(usize, f64)> {
        match &self.index {
            Some(t) => t.nearest(&self.coords, q).map(|(i, d2)| (i, d2.sqrt())),
            None => (0..self.len())
                .map(|i| (i, dist2(self.point(i), q)))
                .fold(None, |best: Option<(usize, f64)>, (i, d2)| match best {
                    Some((_, b)) if b <= d2 => best,
                    _ => Some((i, d2)),
                })
                .map(|(i, d2)| (i, d2.sqrt())),
        }
    }
}

/// A measure restricted to a subset of its support.
#[derive(Debug, Clone)]
pub struct MeasureSlice<'a> {
    pub parent: &'a DiscreteMeasure,
    /// Sorted member indices.
    pub indices: Vec<usize>,
}

impl<'a> MeasureSlice<'a> {
    pub fn mass(&self) -> f64 {
        self.indices.iter().map(|&i| self.parent.weight(i)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn restrict(&self, b: &Ball) -> MeasureSlice<'a> {
        let r2 = b.radius * b.radius;
        let indices = self
            .indices
            .iter()
            .copied()
            .filter(|&i| dist2(self.parent.point(i), &b.center) < r2)
            .collect();
        MeasureSlice { parent: self.parent, indices }
    }

    pub fn points(&self) -> impl Iterator<Item = &'a [f64]> + '_ {
        self.indices.iter().map(move |&i| self.parent.point(i))
    }

    pub fn moments(&self) -> Moments {
        self.parent.moments_of(&self.indices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dist;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> DiscreteMeasure {
        let coords: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        DiscreteMeasure::new(dim, coords, weights).unwrap()
    }

    fn brute(m: &DiscreteMeasure, c: &[f64], r: f64, closed: bool) -> Vec<usize> {
        (0..m.len()).filter(|&i| in_ball(dist2(m.point(i), c), r * r, closed)).collect()
    }

    #[test]
    fn dirac_and_grid_masses() {
        let m = DiscreteMeasure::from_points(&[vec![0.0, 0.0]], vec![1.0]).unwrap();
        assert_eq!(m.mass_in_ball(&Ball::new(vec![0.0, 0.0], 1.0).unwrap()), 1.0);
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push(vec![i as f64 * 0.01, j as f64 * 0.01]);
            }
        }
        let g = DiscreteMeasure::uniform(&pts).unwrap();
        assert_eq!(g.mass_at(&[0.1, 0.1], 1.0), 400.0);
        assert_eq!(g.count_in(&[0.1, 0.1], 1.0), 400);
    }

    #[test]
    fn plane_grid_mass_matches_disk_area() {
        // ν H^2 on the plane z = 0 in R^3 with per-point weight ν h^2
        let (nu, h) = (0.7, 0.01);
        let mut coords = Vec::new();
        let m = (1.2 / h) as i64;
        for i in -m..=m {
            for j in -m..=m {
                coords.extend_from_slice(&[i as f64 * h, j as f64 * h, 0.0]);
            }
        }
        let n = coords.len() / 3;
        let meas = DiscreteMeasure::new(3, coords, vec![nu * h * h; n]).unwrap();
        for &r in &[0.25, 0.5, 1.0] {
            let exact = nu * std::f64::consts::PI * r * r;
            let got = meas.mass_at(&[0.0, 0.0, 0.0], r);
            assert!((got - exact).abs() / exact < 2.0 * h / r, "r={r}: {got} vs {exact}");
        }
    }

    #[test]
    fn center_of_mass_examples() {
        let b = Ball::new(vec![0.0, 0.0], 5.0).unwrap();
        let one = DiscreteMeasure::from_points(&[vec![1.0, 2.0]], vec![3.0]).unwrap();
        assert_eq!(one.center_of_mass(&b).unwrap(), vec![1.0, 2.0]);
        let two = DiscreteMeasure::uniform(&[vec![1.0, 2.0], vec![3.0, -2.0]]).unwrap();
        assert_eq!(two.center_of_mass(&b).unwrap(), vec![2.0, 0.0]);
        let far = Ball::new(vec![10.0, 10.0], 1.0).unwrap();
        assert_eq!(two.center_of_mass(&far), Err(Error::EmptySlice));
        let mut pts = Vec::new();
        for i in -30..=30 {
            for j in -30..=30 {
                pts.push(vec![i as f64 / 30.0, j as f64 / 30.0]);
            }
        }
        let g = DiscreteMeasure::uniform(&pts).unwrap();
        let c = g.center_of_mass(&Ball::new(vec![0.0, 0.0], 0.77).unwrap()).unwrap();
        assert!(c.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn restrict_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_measure(&mut rng, 500, 3);
        let all = m.restrict(&Ball::new(vec![0.0; 3], 10.0).unwrap());
        assert_eq!(all.indices, (0..500).collect::<Vec<_>>());
        assert!(m.restrict(&Ball::new(vec![5.0; 3], 1.0).unwrap()).is_empty());
        let b = Ball::new(vec![0.1, 0.2, 0.0], 0.6).unwrap();
        let s = m.restrict(&b);
        assert_eq!(s.indices, brute(&m, &b.center, b.radius, false));
        assert_eq!(s.restrict(&b).indices, s.indices);
        let b2 = Ball::new(vec![0.4, 0.0, 0.0], 0.5).unwrap();
        let inter: Vec<usize> = s.indices.iter().copied().filter(|&i| b2.contains(m.point(i))).collect();
        assert_eq!(s.restrict(&b2).indices, inter);
        assert!(s.mass() <= m.total_mass());
    }

    #[test]
    fn closed_ball_includes_boundary() {
        let m = DiscreteMeasure::uniform(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(m.mass_in(&[0.0, 0.0], 1.0, false), 1.0);
        assert_eq!(m.mass_in(&[0.0, 0.0], 1.0, true), 2.0);
    }

    #[test]
    fn indexed_queries_match_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in 1..=4 {
            let m = random_measure(&mut rng, 3000, dim);
            for q in 0..250 {
                let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.2..1.2)).collect();
                let r = rng.gen_range(0.0..1.0f64).powi(2) * 1.5 + 1e-3;
                let closed = q % 2 == 0;
                let want = brute(&m, &c, r, closed);
                assert_eq!(m.indices_in(&c, r, closed), want);
                let mass: f64 = want.iter().map(|&i| m.weight(i)).sum();
                assert!((m.mass_in(&c, r, closed) - mass).abs() <= 1e-9 * mass.max(1.0));
            }
        }
    }

    #[test]
    fn boundary_points_agree_with_scan() {
        // points placed exactly on query spheres exercise the box shortcuts
        let mut pts = Vec::new();
        for i in 0..200 {
            let t = i as f64 * 0.1;
            pts.push(vec![t.cos(), t.sin()]);
            pts.push(vec![0.5 * t.cos(), 0.5 * t.sin()]);
        }
        let m = DiscreteMeasure::uniform(&pts).unwrap();
        for &r in &[0.5, 1.0] {
            for closed in [false, true] {
                assert_eq!(m.indices_in(&[0.0, 0.0], r, closed), brute(&m, &[0.0, 0.0], r, closed));
            }
        }
    }

    #[test]
    fn tree_moments_match_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_measure(&mut rng, 5000, 3);
        for _ in 0..50 {
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = rng.gen_range(0.1..1.5);
            let fast = m.moments_at(&c, r);
            let slow = m.moments_of(&m.indices_in(&c, r, false));
            assert!((fast.mass - slow.mass).abs() <= 1e-9 * slow.mass.max(1.0));
            for (a, b) in fast.mean.iter().zip(&slow.mean) {
                assert!((a - b).abs() < 1e-10);
            }
            for (a, b) in fast.scatter.iter().zip(&slow.scatter) {
                assert!((a - b).abs() < 1e-9 * slow.mass.max(1.0));
            }
        }
    }

    #[test]
    fn net_covers_ball_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_measure(&mut rng, 4000, 2);
        let (c, r, res) = ([0.1, -0.2], 0.7, 0.2);
        let net = m.net_in(&c, r, res);
        let members = m.indices_in(&c, r, false);
        assert!(net.len() < members.len());
        for &i in &net {
            assert!(members.binary_search(&i).is_ok());
        }
        for &i in &members {
            assert!(net.iter().any(|&j| dist(m.point(i), m.point(j)) <= res));
        }
    }

    #[test]
    fn nearest_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = random_measure(&mut rng, 2000, 3);
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let (i, d) = m.nearest(&q).unwrap();
            let best = (0..m.len()).map(|j| dist(m.point(j), &q)).fold(f64::INFINITY, f64::min);
            assert_eq!(d, best);
            assert_eq!(dist(m.point(i), &q), best);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(DiscreteMeasure::new(2, vec![0.0, 0.0], vec![-1.0]).is_err());
        assert!(DiscreteMeasure::new(2, vec![0.0, 0.0], vec![0.0]).is_err());
        assert!(DiscreteMeasure::new(2, vec![0.0], vec![1.0]).is_err());
        assert!(DiscreteMeasure::new(2, vec![f64::NAN, 0.0], vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn mass_is_additive_over_disjoint_balls(seed in 0u64..1000, gap in 0.0f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_measure(&mut rng, 400, 2);
            let (r1, r2) = (0.3, 0.4);
            let b1 = [-0.5, 0.0];
            let b2 = [-0.5 + r1 + r2 + gap, 0.0];
            let mut union = m.indices_in(&b1, r1, false);
            union.extend(m.indices_in(&b2, r2, false));
            let total: f64 = union.iter().map(|&i| m.weight(i)).sum();
            prop_assert!((m.mass_at(&b1, r1) + m.mass_at(&b2, r2) - total).abs() < 1e-12);
        }

        #[test]
        fn center_of_mass_in_hull(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_measure(&mut rng, 100, 3);
            let b = Ball::new(vec![0.0; 3], 0.8).unwrap();
            if let Ok(c) = m.center_of_mass(&b) {
                let idx = m.indices_in_ball(&b);
                for d in 0..3 {
                    let lo = idx.iter().map(|&i| m.point(i)[d]).fold(f64::INFINITY, f64::min);
                    let hi = idx.iter().map(|&i| m.point(i)[d]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(c[d] >= lo - 1e-12 && c[d] <= hi + 1e-12);
                }
            }
        }
    }
}
