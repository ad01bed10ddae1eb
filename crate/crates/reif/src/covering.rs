//! Greedy ball selections and finite-scale content estimators.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::geometry::{dist, Ball};
use crate::measure::DiscreteMeasure;
use crate::{Error, Result};

/// Volume of the unit k-ball.
pub fn omega(k: usize) -> f64 {
    match k {
        0 => 1.0,
        1 => 2.0,
        _ => omega(k - 2) * 2.0 * std::f64::consts::PI / k as f64,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BallFamily {
    pub balls: Vec<Ball>,
    pub tags: Option<Vec<String>>,
}

impl BallFamily {
    pub fn new(balls: Vec<Ball>) -> BallFamily {
        BallFamily { balls, tags: None }
    }
}

/// Open balls are disjoint iff the centers are at least r1 + r2 apart; closed
/// balls need strict separation.
pub fn balls_disjoint(c1: &[f64], r1: f64, c2: &[f64], r2: f64, closed: bool) -> bool {
    let d = dist(c1, c2);
    if closed {
        d > r1 + r2
    } else {
        d >= r1 + r2
    }
}

#[derive(Debug, Clone, Default)]
struct Band {
    rmax: f64,
    grid: HashMap<Vec<i64>, Vec<usize>>,
    members: Vec<usize>,
}

/// Spatial hash of accepted balls, one uniform grid per dyadic radius band,
/// answering "does this ball meet any accepted one". Sparse bands fall back
/// to a scan.
#[derive(Debug, Clone)]
pub struct DisjointIndex {
    closed: bool,
    centers: Vec<Vec<f64>>,
    radii: Vec<f64>,
    bands: HashMap<i32, Band>,
}

impl DisjointIndex {
    pub fn new(closed: bool) -> DisjointIndex {
        DisjointIndex { closed, centers: Vec::new(), radii: Vec::new(), bands: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    fn band(r: f64) -> i32 {
        r.log2().ceil() as i32
    }

    fn cell(c: &[f64], size: f64) -> Vec<i64> {
        c.iter().map(|x| (x / size).floor() as i64).collect()
    }

    /// Accepted balls whose centers lie within `reach` + their radius of `c`.
    pub fn neighbors(&self, c: &[f64], reach: f64, mut f: impl FnMut(usize) -> bool) {
        let mut keys: Vec<&i32> = self.bands.keys().collect();
        keys.sort();
        for b in keys {
            let band = &self.bands[b];
            let size = 2.0f64.powi(*b) * 2.0;
            let span = ((reach + band.rmax) / size).ceil();
            let dim = c.len();
            if (2.0 * span + 1.0).powi(dim as i32) > band.members.len() as f64 {
                for &i in &band.members {
                    if !f(i) {
                        return;
                    }
                }
                continue;
            }
            let span = span as i64;
            let base = Self::cell(c, size);
            let grid = &band.grid;
            let mut off = vec![-span; dim];
            loop {
                let key: Vec<i64> = base.iter().zip(&off).map(|(a, o)| a + o).collect();
                if let Some(list) = grid.get(&key) {
                    for &i in list {
                        if !f(i) {
                            return;
                        }
                    }
                }
                let mut d = 0;
                while d < dim {
                    off[d] += 1;
                    if off[d] <= span {
                        break;
                    }
                    off[d] = -span;
                    d += 1;
                }
                if d == dim {
                    break;
                }
            }
        }
    }

    /// Some accepted ball meeting B_r(c), if any.
    pub fn first_conflict(&self, c: &[f64], r: f64) -> Option<usize> {
        let mut hit = None;
        self.neighbors(c, r, |i| {
            if balls_disjoint(c, r, &self.centers[i], self.radii[i], self.closed) {
                true
            } else {
                hit = Some(i);
                false
            }
        });
        hit
    }

    pub fn is_free(&self, c: &[f64], r: f64) -> bool {
        self.first_conflict(c, r).is_none()
    }

    pub fn insert(&mut self, c: Vec<f64>, r: f64) -> usize {
        let id = self.centers.len();
        let b = Self::band(r.max(f64::MIN_POSITIVE));
        let size = 2.0f64.powi(b) * 2.0;
        let band = self.bands.entry(b).or_default();
        band.rmax = band.rmax.max(r);
        band.grid.entry(Self::cell(&c, size)).or_default().push(id);
        band.members.push(id);
        self.centers.push(c);
        self.radii.push(r);
        id
    }

    /// Inserts when disjoint from every accepted ball.
    pub fn try_insert(&mut self, c: &[f64], r: f64) -> bool {
        if self.is_free(c, r) {
            self.insert(c.to_vec(), r);
            true
        } else {
            false
        }
    }
}

/// Greedy selection by decreasing radius (ties by input order) of pairwise
/// disjoint balls. Each input ball meets a selected ball at least as large.
pub fn vitali_select(f: &BallFamily) -> BallFamily {
    let mut order: Vec<usize> = (0..f.balls.len()).collect();
    order.sort_by(|&a, &b| f.balls[b].radius.total_cmp(&f.balls[a].radius).then(a.cmp(&b)));
    let mut idx = DisjointIndex::new(false);
    let mut chosen = Vec::new();
    for i in order {
        let b = &f.balls[i];
        if idx.try_insert(&b.center, b.radius) {
            chosen.push(i);
        }
    }
    chosen.sort_unstable();
    BallFamily {
        balls: chosen.iter().map(|&i| f.balls[i].clone()).collect(),
        tags: f.tags.as_ref().map(|t| chosen.iter().map(|&i| t[i].clone()).collect()),
    }
}

/// Indices of a maximal sublist whose balls B_{shrink·r(x)}(x) are pairwise
/// disjoint, chosen greedily by decreasing radius. Points with nonpositive
/// radius are skipped.
pub fn maximal_disjoint(points: &[Vec<f64>], radius_fn: impl Fn(&[f64]) -> f64, shrink: f64) -> Vec<usize> {
    let radii: Vec<f64> = points.iter().map(|p| radius_fn(p)).collect();
    maximal_disjoint_radii(points, &radii, shrink, false)
}

/// As [`maximal_disjoint`] with precomputed radii and a closed-ball option.
pub fn maximal_disjoint_radii(points: &[Vec<f64>], radii: &[f64], shrink: f64, closed: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).filter(|&i| radii[i] > 0.0).collect();
    order.sort_by(|&a, &b| radii[b].total_cmp(&radii[a]).then(a.cmp(&b)));
    let mut idx = DisjointIndex::new(closed);
    let mut out: Vec<usize> = order.into_iter().filter(|&i| idx.try_insert(&points[i], shrink * radii[i])).collect();
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentKind {
    Hausdorff,
    Minkowski,
    Packing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentReport {
    pub kind: ContentKind,
    pub k: usize,
    pub scale: f64,
    pub value: f64,
    pub certificate: Vec<CertificateBall>,
}

impl ContentReport {
    /// Σ ω_k r_i^k over the certificate.
    pub fn recompute(&self) -> f64 {
        self.certificate.iter().map(|b| omega(self.k) * b.radius.powi(self.k as i32)).sum()
    }

    /// Every point lies in some open certificate ball.
    pub fn covers(&self, points: &[Vec<f64>]) -> bool {
        if self.certificate.is_empty() {
            return points.is_empty();
        }
        let centers: Vec<Vec<f64>> = self.certificate.iter().map(|b| b.center.clone()).collect();
        let rmax = self.certificate.iter().map(|b| b.radius).fold(0.0, f64::max);
        let m = DiscreteMeasure::uniform(&centers).expect("nonempty certificate");
        points.iter().all(|p| {
            m.indices_in(p, rmax, false).iter().any(|&j| dist(p, &centers[j]) < self.certificate[j].radius)
        })
    }

    /// Certificate balls are pairwise disjoint (open balls).
    pub fn is_disjoint(&self) -> bool {
        let mut idx = DisjointIndex::new(false);
        self.certificate.iter().all(|b| idx.try_insert(&b.center, b.radius))
    }
}

#[derive(PartialEq)]
struct Far(f64, usize);
impl Eq for Far {}
impl PartialOrd for Far {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Far {
    // larger distance first, then smaller index
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0).then(o.1.cmp(&self.1))
    }
}

fn check_points(points: &[Vec<f64>], r: f64) -> Result<DiscreteMeasure> {
    if !(r > 0.0) {
        return Err(Error::Input(format!("scale must be positive, got {r}")));
    }
    DiscreteMeasure::uniform(points)
}

fn lexicographic_first(points: &[Vec<f64>]) -> usize {
    (0..points.len())
        .min_by(|&a, &b| {
            points[a].iter().zip(&points[b]).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
        })
        .unwrap()
}

/// Farthest-point traversal from the lexicographically smallest point until
/// every point is within distance < r of a chosen center. Returns the center
/// indices in selection order.
pub fn farthest_point_net(points: &[Vec<f64>], r: f64) -> Result<Vec<usize>> {
    let m = check_points(points, r)?;
    let n = points.len();
    let mut mind = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    let mut net = vec![lexicographic_first(points)];
    let mut reach = f64::INFINITY;
    loop {
        let c = *net.last().unwrap();
        let cand: Vec<usize> = if reach.is_finite() { m.indices_in(&points[c], reach, true) } else { (0..n).collect() };
        for i in cand {
            let d = dist(&points[i], &points[c]);
            if d < mind[i] {
                mind[i] = d;
                heap.push(Far(d, i));
            }
        }
        // drop stale entries
        while let Some(top) = heap.peek() {
            if top.0 != mind[top.1] {
                heap.pop();
            } else {
                break;
            }
        }
        match heap.peek() {
            Some(top) if top.0 >= r => {
                reach = top.0;
                net.push(top.1);
            }
            _ => break,
        }
    }
    Ok(net)
}

/// Greedy r-net size times ω_k r^k.
pub fn minkowski_content(points: &[Vec<f64>], k: usize, r: f64) -> Result<ContentReport> {
    let net = farthest_point_net(points, r)?;
    let certificate: Vec<CertificateBall> =
        net.iter().map(|&i| CertificateBall { center: points[i].clone(), radius: r }).collect();
    Ok(ContentReport {
        kind: ContentKind::Minkowski,
        k,
        scale: r,
        value: certificate.len() as f64 * omega(k) * r.powi(k as i32),
        certificate,
    })
}

/// Diagonal of the bounding box, used for the default radius floor.
fn bbox_diameter(points: &[Vec<f64>]) -> f64 {
    let dim = points[0].len();
    (0..dim)
        .map(|d| {
            let lo = points.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min);
            let hi = points.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max);
            (hi - lo).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

pub const RADIUS_FLOOR_DIVISOR: f64 = 1048576.0;

/// Covering built from the r-net with every ball shrunk to the farthest
/// point assigned to it (nearest center), but not below `floor`. The default
/// floor is diameter/2^20, or r/2^20 for a single location.
pub fn hausdorff_content(points: &[Vec<f64>], k: usize, r: f64, floor: Option<f64>) -> Result<ContentReport> {
    let net = farthest_point_net(points, r)?;
    let diam = bbox_diameter(points);
    let floor = floor.unwrap_or(if diam > 0.0 { diam } else { r } / RADIUS_FLOOR_DIVISOR).min(r);
    let centers: Vec<Vec<f64>> = net.iter().map(|&i| points[i].clone()).collect();
    let cm = DiscreteMeasure::uniform(&centers)?;
    let mut far = vec![0.0f64; centers.len()];
    for p in points {
        let (j, d) = cm.nearest(p).expect("nonempty net");
        far[j] = far[j].max(d);
    }
    let certificate: Vec<CertificateBall> = centers
        .into_iter()
        .zip(far)
        .map(|(c, d)| CertificateBall { center: c, radius: d.next_up().clamp(floor, r) })
        .collect();
    let mut rep = ContentReport { kind: ContentKind::Hausdorff, k, scale: r, value: 0.0, certificate };
    rep.value = rep.recompute();
    Ok(rep)
}

/// Number of radius levels r, r/2, ... tried by the packing greedy.
pub const PACKING_LEVELS: usize = 4;

/// Disjoint balls centered at input points, filled greedily at radii r, r/2,
/// r/4, r/8 in input order at each level.
pub fn packing_content(points: &[Vec<f64>], k: usize, r: f64) -> Result<ContentReport> {
    check_points(points, r)?;
    let mut idx = DisjointIndex::new(false);
    let mut certificate = Vec::new();
    for level in 0..PACKING_LEVELS {
        let rho = r / 2f64.powi(level as i32);
        for p in points {
            if idx.try_insert(p, rho) {
                certificate.push(CertificateBall { center: p.clone(), radius: rho });
            }
        }
    }
    let mut rep = ContentReport { kind: ContentKind::Packing, k, scale: r, value: 0.0, certificate };
    rep.value = rep.recompute();
    Ok(rep)
}
