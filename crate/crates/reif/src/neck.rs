//! Neck regions: parameters, noncollapsing tests, ball classification, the
//! d/e/c-ball coverings and the decomposition worklist.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta::{beta_sq, fit_best_subspace, DistortionTable};
use crate::covering::{maximal_disjoint_radii, omega, DisjointIndex};
use crate::generators::lattice_in_ball;
use crate::geometry::{axpy, dist, dist2, dot, norm, slice, sub, AffineSubspace, Ball, Disk, Independence};
use crate::measure::DiscreteMeasure;
use crate::{Error, Result};

pub const DELTA_MAX: f64 = 0.25;
/// f-balls have radius 4εr, so ε must stay below 1/4 for the recursion to shrink.
pub const EPSILON_MAX: f64 = 0.25;
pub const F_DEPTH_MAX: usize = 12;
/// Top of the distortion grid; the e-ball drop window reaches 11 r_e.
pub const DISTORTION_TOP: f64 = 32.0;
/// Outer end of the e-ball drop window in units of the s-ball radius.
pub const E_DROP_WINDOW: f64 = 22.0;
/// (n1) coverage samples are laid at spacing τs / N1_SAMPLE_DIV.
pub const N1_SAMPLE_DIV: f64 = 4.0;
/// Candidate lattice points one neck stage may scan before giving up.
pub const MAX_STAGE_LATTICE: f64 = 2e7;

const REL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeckParams {
    pub k: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub nu: f64,
    pub tau: f64,
    pub r_min: f64,
    /// β(x,4r) above this makes an e-ball.
    pub beta_c: f64,
    /// Base of the certified e-ball distortion drop.
    pub drop_e: f64,
    /// Distortion drop that makes an s-ball.
    pub s_drop: f64,
}

impl NeckParams {
    /// Thresholds default to δ², δ⁴, δ⁶.
    pub fn new(k: usize, delta: f64, epsilon: f64, nu: f64, tau: f64, r_min: f64) -> Result<NeckParams> {
        let p = NeckParams {
            k,
            delta,
            epsilon,
            nu,
            tau,
            r_min,
            beta_c: delta * delta,
            drop_e: delta.powi(4),
            s_drop: delta.powi(6),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_thresholds(mut self, beta_c: f64, drop_e: f64, s_drop: f64) -> Result<NeckParams> {
        self.beta_c = beta_c;
        self.drop_e = drop_e;
        self.s_drop = s_drop;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Input(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(0.0 < self.delta && self.delta < self.epsilon && self.epsilon <= self.tau && self.tau < 1.0) {
            return bad(format!(
                "need 0 < delta < epsilon <= tau < 1, got {}, {}, {}",
                self.delta, self.epsilon, self.tau
            ));
        }
        if self.delta > DELTA_MAX {
            return bad(format!("delta {} above {DELTA_MAX}", self.delta));
        }
        if self.epsilon >= EPSILON_MAX {
            return bad(format!("epsilon {} must be below {EPSILON_MAX}", self.epsilon));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.r_min > 0.0 && self.r_min < 1.0) {
            return bad(format!("r_min must lie in (0, 1), got {}", self.r_min));
        }
        for (name, v) in [("beta_c", self.beta_c), ("drop_e", self.drop_e), ("s_drop", self.s_drop)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Certified lower bound for the e-ball drop: a dyadic scale in
    /// [5.5 r_e, 11 r_e] sees all of B_{4r_e}(x_e) from any point of B_{r_e}(x_e).
    pub fn e_drop_floor(&self) -> f64 {
        (4.0f64 / 11.0).powi(self.k as i32 + 2) * self.drop_e
    }

    /// Dyadic scales r, r/2, ... ≥ εr together with εr, ascending.
    pub fn v_scales(&self, r: f64) -> Vec<f64> {
        let lo = self.epsilon * r;
        let mut out = vec![lo];
        let mut s = r;
        while s > lo * (1.0 + REL) {
            out.push(s);
            s /= 2.0;
        }
        out.sort_by(f64::total_cmp);
        out
    }

    fn kpow(&self, s: f64) -> f64 {
        s.powi(self.k as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CenterLabel {
    /// Reached the scale floor; plays the role of r_x = 0.
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "d")]
    D,
    #[serde(rename = "e")]
    E,
    #[serde(rename = "s")]
    S,
    #[serde(rename = "f")]
    F,
}

impl CenterLabel {
    pub fn as_char(self) -> char {
        match self {
            CenterLabel::Zero => '0',
            CenterLabel::D => 'd',
            CenterLabel::E => 'e',
            CenterLabel::S => 's',
            CenterLabel::F => 'f',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeckCenter {
    pub x: Vec<f64>,
    pub r: f64,
    pub label: CenterLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeckRegion {
    pub ball: Ball,
    pub centers: Vec<NeckCenter>,
    pub params: NeckParams,
}

impl NeckRegion {
    /// Centers at the scale floor.
    pub fn zero_centers(&self) -> impl Iterator<Item = &NeckCenter> + '_ {
        self.centers.iter().filter(|c| c.r <= self.params.r_min * (1.0 + REL))
    }

    pub fn positive_centers(&self) -> impl Iterator<Item = &NeckCenter> + '_ {
        self.centers.iter().filter(|c| c.r > self.params.r_min * (1.0 + REL))
    }

    fn center_index(&self) -> Option<DiscreteMeasure> {
        let pts: Vec<Vec<f64>> = self.centers.iter().map(|c| c.x.clone()).collect();
        DiscreteMeasure::uniform(&pts).ok()
    }
}

/// Shared read-only state: the measure, parameters and per-point distortion.
pub struct NeckContext<'a> {
    pub m: &'a DiscreteMeasure,
    pub p: NeckParams,
    pub table: DistortionTable,
}

impl<'a> NeckContext<'a> {
    pub fn new(m: &'a DiscreteMeasure, p: NeckParams) -> Result<NeckContext<'a>> {
        p.validate()?;
        if p.k >= m.dim() {
            return Err(Error::Input(format!("k = {} must be below the ambient dimension {}", p.k, m.dim())));
        }
        let table = DistortionTable::build_range(m, p.k, DISTORTION_TOP, p.r_min);
        Ok(NeckContext { m, p, table })
    }

    /// max D(y, t) over support points y ∈ B_r(c).
    pub fn max_distortion(&self, c: &[f64], r: f64, t: f64) -> Option<f64> {
        self.m.indices_in(c, r, false).into_iter().map(|i| self.table.at(i, t)).reduce(f64::max)
    }
}

/// Greedy ε-independence test on explicit points.
pub fn is_linearly_independent(pts: &[Vec<f64>], eps: f64, r: f64) -> Independence {
    crate::geometry::independence(pts, eps, r)
}

/// Outcome of a tuple search over candidate support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleSearch {
    pub independent: bool,
    /// Support indices of the greedy tuple.
    pub tuple: Vec<usize>,
    pub clearances: Vec<f64>,
    /// The search fell back to every candidate.
    pub exhaustive: bool,
}

/// Starts at the kept candidate nearest `center`, then keeps adding the kept
/// candidate farthest from the current affine span. `keep` runs lazily, in
/// order of preference, so most candidates are never tested.
fn greedy_tuple(
    m: &DiscreteMeasure,
    cand: &[usize],
    center: &[f64],
    k: usize,
    keep: &dyn Fn(usize) -> bool,
) -> (Vec<usize>, Vec<f64>) {
    let mut memo: Vec<Option<bool>> = vec![None; cand.len()];
    let pick = |order: &[usize], memo: &mut Vec<Option<bool>>| {
        order.iter().copied().find(|&j| *memo[j].get_or_insert_with(|| keep(cand[j])))
    };
    let mut order: Vec<usize> = (0..cand.len()).collect();
    let d0: Vec<f64> = cand.iter().map(|&i| dist2(m.point(i), center)).collect();
    order.sort_by(|&a, &b| d0[a].total_cmp(&d0[b]).then(cand[a].cmp(&cand[b])));
    let Some(first) = pick(&order, &mut memo) else {
        return (Vec::new(), Vec::new());
    };
    let x0 = m.point(cand[first]);
    let mut resid: Vec<Vec<f64>> = cand.iter().map(|&i| sub(m.point(i), x0)).collect();
    let mut chosen = vec![cand[first]];
    let mut clear = Vec::new();
    for _ in 0..k {
        let norms: Vec<f64> = resid.iter().map(|v| norm(v)).collect();
        order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        let best = pick(&order, &mut memo).filter(|&j| norms[j] > 0.0);
        let Some(j) = best else {
            clear.push(0.0);
            break;
        };
        clear.push(norms[j]);
        chosen.push(cand[j]);
        let e: Vec<f64> = resid[j].iter().map(|x| x / norms[j]).collect();
        for v in resid.iter_mut() {
            let c = dot(v, &e);
            axpy(v, -c, &e);
        }
    }
    (chosen, clear)
}

fn tuple_search(
    m: &DiscreteMeasure,
    b: &Ball,
    k: usize,
    thresh: f64,
    resolution: f64,
    keep: impl Fn(usize) -> bool,
) -> TupleSearch {
    let judge = |cand: &[usize], exhaustive| {
        let (tuple, clearances) = greedy_tuple(m, cand, &b.center, k, &keep);
        let independent = tuple.len() == k + 1 && clearances.iter().all(|&c| c >= thresh);
        TupleSearch { independent, tuple, clearances, exhaustive }
    };
    let quick = judge(&m.net_in(&b.center, b.radius, resolution), false);
    if quick.independent {
        return quick;
    }
    judge(&m.indices_in(&b.center, b.radius, false), true)
}

fn in_v(m: &DiscreteMeasure, i: usize, scales: &[f64], p: &NeckParams) -> bool {
    let y = m.point(i);
    scales.iter().all(|&s| m.mass_in(y, s, false) > p.nu * p.kpow(s))
}

/// Support points y ∈ B with μ(B_s(y)) > ν s^k for the dyadic s in [εr, r].
pub fn noncollapsing_set(m: &DiscreteMeasure, b: &Ball, p: &NeckParams) -> Vec<usize> {
    let scales = p.v_scales(b.radius);
    m.indices_in(&b.center, b.radius, false).into_iter().filter(|&i| in_v(m, i, &scales, p)).collect()
}

/// Whether V(x,r) is (k,2ε)-independent at scale r. A failed search is
/// always exhaustive, so its tuple spans an affine plane of dimension < k
/// whose 2εr-neighborhood holds all of V.
pub fn noncollapsed_set_search(m: &DiscreteMeasure, b: &Ball, p: &NeckParams) -> TupleSearch {
    let scales = p.v_scales(b.radius);
    let r = b.radius;
    tuple_search(m, b, p.k, 2.0 * p.epsilon * r, p.epsilon * r / 2.0, |i| in_v(m, i, &scales, p))
}

/// A 2ε-independent tuple of support points in B whose εr-balls carry mass
/// above ν(εr)^k.
pub fn is_noncollapsed_ball(m: &DiscreteMeasure, b: &Ball, p: &NeckParams) -> TupleSearch {
    let r = b.radius;
    let s = p.epsilon * r;
    let floor = p.nu * p.kpow(s);
    tuple_search(m, b, p.k, 2.0 * p.epsilon * r, s / 2.0, |i| m.mass_in(m.point(i), s, false) > floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub mass_2r: f64,
    pub max_distortion: Option<f64>,
    pub cap: Option<f64>,
    pub beta_4r: Option<f64>,
    pub independence: Option<TupleSearch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallClass {
    pub label: char,
    pub evidence: Evidence,
}

/// Tests in the order b, s, e, d, then c. The s test runs only with a cap.
pub fn classify_ball(ctx: &NeckContext, b: &Ball, cap: Option<f64>) -> BallClass {
    classify_inner(ctx, b, cap, true)
}

fn classify_inner(ctx: &NeckContext, b: &Ball, cap: Option<f64>, with_b: bool) -> BallClass {
    let (m, p) = (ctx.m, &ctx.p);
    let (c, r) = (&b.center, b.radius);
    let mut ev = Evidence { mass_2r: m.mass_in(c, 2.0 * r, false), max_distortion: None, cap, beta_4r: None, independence: None };
    let done = |label, ev| BallClass { label, evidence: ev };
    if with_b && ev.mass_2r < p.nu * p.kpow(r) {
        return done('b', ev);
    }
    if let Some(cap) = cap {
        ev.max_distortion = ctx.max_distortion(c, r, 2.0 * r);
        if matches!(ev.max_distortion, Some(d) if d < cap - p.s_drop) {
            return done('s', ev);
        }
    }
    let beta = beta_sq(m, c, 4.0 * r, p.k).sqrt();
    ev.beta_4r = Some(beta);
    if beta > p.beta_c {
        return done('e', ev);
    }
    let t = noncollapsed_set_search(m, b, p);
    let label = if t.independent { 'c' } else { 'd' };
    ev.independence = Some(t);
    done(label, ev)
}

fn owned_or_all(m: &DiscreteMeasure, b: &Ball, owned: Option<&[usize]>) -> Vec<usize> {
    match owned {
        Some(o) => o.to_vec(),
        None => m.indices_in(&b.center, b.radius, false),
    }
}

/// A ball together with the support points it is responsible for.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub ball: Ball,
    pub owned: Vec<usize>,
}

/// Low-mass ball; `mass` is μ(B_{2r}).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBall {
    pub ball: Ball,
    pub mass: f64,
    #[serde(skip)]
    pub owned: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DCover {
    pub f_balls: Vec<Piece>,
    pub b_balls: Vec<BBall>,
    pub sum_rb_k: f64,
    pub sum_rf_k: f64,
    /// Dimension of the plane holding V(x,r) up to 2εr.
    pub witness_dim: Option<usize>,
}

/// f-balls of radius 4εr on an εr-dense set of the witnessing lower plane,
/// then b-balls B_{s/2}(z) where μ(B_s(z)) ≤ ν s^k for the remaining points.
pub fn cover_d_ball(ctx: &NeckContext, b: &Ball, owned: Option<&[usize]>) -> Result<DCover> {
    let (m, p) = (ctx.m, &ctx.p);
    let (c, r) = (&b.center, b.radius);
    let t = noncollapsed_set_search(m, b, p);
    if t.independent {
        return Err(Error::Misclassified { expected: 'd', got: classify_ball(ctx, b, None).label });
    }
    let eps_r = p.epsilon * r;
    let mut f_centers: Vec<Vec<f64>> = Vec::new();
    let mut witness_dim = None;
    if !t.tuple.is_empty() {
        let pts: Vec<Vec<f64>> = t.tuple.iter().map(|&i| m.point(i).to_vec()).collect();
        // the last greedy point failed the clearance test; the span before it is the witness
        let keep = t.clearances.iter().position(|&cl| cl < 2.0 * eps_r).map_or(pts.len(), |j| j + 1);
        let span = AffineSubspace::through_points(&pts[..keep])?;
        let i = span.k();
        witness_dim = Some(i);
        let reach = r + 3.0 * eps_r;
        let h = if i == 0 { 1.0 } else { 2.0 * eps_r / (i as f64).sqrt() };
        let c0 = span.coords(c);
        for u in lattice_in_ball(i, h, reach + h) {
            let coords: Vec<f64> = c0.iter().zip(&u).map(|(a, b)| a + b).collect();
            let q = span.point_at(&coords);
            if dist(&q, c) < reach {
                f_centers.push(q);
            }
        }
    }
    let f_radius = 4.0 * eps_r;
    let mut f_owned: Vec<Vec<usize>> = vec![Vec::new(); f_centers.len()];
    let mut rest = Vec::new();
    let f_index = DiscreteMeasure::uniform(&f_centers).ok();
    for z in owned_or_all(m, b, owned) {
        match f_index.as_ref().and_then(|fi| fi.nearest(m.point(z))) {
            Some((j, d)) if d < f_radius => f_owned[j].push(z),
            _ => rest.push(z),
        }
    }
    let scales = p.v_scales(r);
    let mut radii = Vec::with_capacity(rest.len());
    for &z in &rest {
        let y = m.point(z);
        let s = scales.iter().rev().copied().find(|&s| m.mass_in(y, s, false) <= p.nu * p.kpow(s)).ok_or_else(|| {
            Error::Consistency(format!("noncollapsed point {z} escaped the f-balls of a d-ball"))
        })?;
        radii.push(s / 2.0);
    }
    let pts: Vec<Vec<f64>> = rest.iter().map(|&z| m.point(z).to_vec()).collect();
    let chosen = maximal_disjoint_radii(&pts, &radii, 0.1, false);
    let mut b_balls: Vec<BBall> = chosen
        .iter()
        .map(|&j| BBall {
            ball: Ball { center: pts[j].clone(), radius: radii[j] },
            mass: m.mass_in(&pts[j], 2.0 * radii[j], false),
            owned: Vec::new(),
        })
        .collect();
    if !b_balls.is_empty() {
        let centers: Vec<Vec<f64>> = b_balls.iter().map(|bb| bb.ball.center.clone()).collect();
        let rmax = radii.iter().copied().fold(0.0, f64::max);
        let bi = DiscreteMeasure::uniform(&centers)?;
        for (j, &z) in rest.iter().enumerate() {
            let home = bi
                .indices_in(&pts[j], rmax, false)
                .into_iter()
                .find(|&h| b_balls[h].ball.contains(&pts[j]))
                .ok_or_else(|| Error::Consistency(format!("point {z} left uncovered by the b-balls")))?;
            b_balls[home].owned.push(z);
        }
    }
    let f_balls: Vec<Piece> = f_centers
        .into_iter()
        .zip(f_owned)
        .filter(|(_, o)| !o.is_empty())
        .map(|(center, owned)| Piece { ball: Ball { center, radius: f_radius }, owned })
        .collect();
    Ok(DCover {
        sum_rb_k: b_balls.iter().map(|bb| p.kpow(bb.ball.radius)).fold(0.0, |a, b| a + b),
        sum_rf_k: f_balls.iter().map(|f| p.kpow(f.ball.radius)).fold(0.0, |a, b| a + b),
        f_balls,
        b_balls,
        witness_dim,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SBall {
    pub ball: Ball,
    /// Smallest certified drop over the owned points.
    pub drop_min: f64,
    /// max D(y, 22 r_s) over the owned points.
    pub cap: f64,
    pub owned: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ECover {
    pub s_balls: Vec<SBall>,
    pub sum_rs_k: f64,
    pub drop_floor: f64,
}

/// Half-radius balls on an r_s-separated subset of the owned points; each
/// owned point must show a distortion drop over (r_s, 22 r_s].
pub fn cover_e_ball(ctx: &NeckContext, b: &Ball, owned: Option<&[usize]>) -> Result<ECover> {
    let (m, p) = (ctx.m, &ctx.p);
    let (c, r) = (&b.center, b.radius);
    if !(beta_sq(m, c, 4.0 * r, p.k).sqrt() > p.beta_c) {
        return Err(Error::Misclassified { expected: 'e', got: classify_ball(ctx, b, None).label });
    }
    let rs = r / 2.0;
    let owned = owned_or_all(m, b, owned);
    let mut sep = DisjointIndex::new(false);
    let centers: Vec<usize> = owned.iter().copied().filter(|&z| sep.try_insert(m.point(z), rs / 2.0)).collect();
    let floor = p.e_drop_floor() * (1.0 - REL);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); centers.len()];
    if !centers.is_empty() {
        let cpts: Vec<Vec<f64>> = centers.iter().map(|&z| m.point(z).to_vec()).collect();
        let ci = DiscreteMeasure::uniform(&cpts)?;
        for &z in &owned {
            let (j, d) = ci.nearest(m.point(z)).expect("nonempty");
            if d >= rs {
                return Err(Error::Consistency(format!("point {z} left uncovered by the s-balls")));
            }
            groups[j].push(z);
        }
    }
    let mut s_balls = Vec::with_capacity(centers.len());
    for (&z, group) in centers.iter().zip(groups) {
        let mut drop_min = f64::INFINITY;
        let mut cap = 0.0f64;
        for &y in &group {
            let drop = ctx.table.window(y, rs, E_DROP_WINDOW * rs);
            if drop < floor {
                return Err(Error::Consistency(format!(
                    "s-ball at point {z}: distortion drop {drop:e} at point {y} below the certified {floor:e}"
                )));
            }
            drop_min = drop_min.min(drop);
            cap = cap.max(ctx.table.at(y, E_DROP_WINDOW * rs));
        }
        s_balls.push(SBall { ball: Ball { center: m.point(z).to_vec(), radius: rs }, drop_min, cap, owned: group });
    }
    Ok(ECover { sum_rs_k: s_balls.len() as f64 * p.kpow(rs), s_balls, drop_floor: floor })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeckBuild {
    pub region: NeckRegion,
    /// Reference distortion max_{B_{2R}} D(y, 4R) for the s test.
    pub dbar: f64,
    pub stages: Vec<f64>,
}

/// Stage radii R, τR, τ²R, ... with the last one clamped to r_min.
pub fn stage_radii(r: f64, tau: f64, r_min: f64) -> Vec<f64> {
    let mut out = vec![r];
    while *out.last().unwrap() > r_min * (1.0 + REL) {
        let next = (tau * out.last().unwrap()).max(r_min);
        out.push(next);
    }
    out
}

/// Multi-stage construction from a c-ball. At each stage every active center
/// lays a lattice of candidates on its fitted plane L_{x,4r}; candidates are
/// kept greedily while the closed τ²-balls stay disjoint. Kept centers are
/// classified s, e, d (frozen with that label); a center near a larger frozen
/// ball freezes as f; the rest recurse. The last stage is the scale floor.
pub fn build_neck(ctx: &NeckContext, b: &Ball, cap: Option<f64>) -> Result<NeckBuild> {
    let (m, p) = (ctx.m, &ctx.p);
    let got = classify_ball(ctx, b, cap).label;
    if got != 'c' {
        return Err(Error::Misclassified { expected: 'c', got });
    }
    let (xc, big_r) = (&b.center, b.radius);
    if big_r <= p.r_min * (1.0 + REL) {
        return Err(Error::Input(format!("neck ball radius {big_r} is at the scale floor")));
    }
    let (k, tau) = (p.k, p.tau);
    let sk = (k as f64).sqrt();
    let dbar = ctx.max_distortion(xc, 2.0 * big_r, 4.0 * big_r).unwrap_or(0.0);
    let stages = stage_radii(big_r, tau, p.r_min);
    let ambient = big_r * (1.0 - REL);
    let mut centers: Vec<NeckCenter> = Vec::new();
    let mut kept = DisjointIndex::new(true);
    let mut active = vec![xc.clone()];
    let mut cover = big_r;
    for a in 0..stages.len() - 1 {
        let (r, rc) = (stages[a], stages[a + 1]);
        let h = tau * rc / (2.0 * sk);
        let reach = (cover + h * sk).min(r);
        let per_center = omega(k) * (reach / h + 1.0).powi(k as i32);
        if active.len() as f64 * per_center > MAX_STAGE_LATTICE {
            return Err(Error::Input(format!(
                "neck stage at radius {rc:e} would scan about {:.1e} lattice points (limit {MAX_STAGE_LATTICE:e}); raise tau or r_min",
                active.len() as f64 * per_center
            )));
        }
        let mut stage = kept.clone();
        let mut children: Vec<Vec<f64>> = Vec::new();
        for x in &active {
            let l = fit_best_subspace(m, &Ball { center: x.clone(), radius: 4.0 * r }, k)?.subspace;
            let dc = l.project_unchecked(xc);
            let hd2 = dist2(xc, &dc);
            if hd2 >= ambient * ambient {
                continue;
            }
            let rd = (ambient * ambient - hd2).sqrt();
            let base = l.coords(x);
            for u in lattice_in_ball(k, h, reach + h) {
                let coords: Vec<f64> = base.iter().zip(&u).map(|(a, b)| a + b).collect();
                let mut q = l.point_at(&coords);
                if dist(&q, x) >= r {
                    continue;
                }
                let dq = dist(&q, &dc);
                if dq >= rd {
                    if dq - rd > h * sk / 2.0 {
                        continue;
                    }
                    q = dc.iter().zip(&q).map(|(c, v)| c + (v - c) * (rd / dq)).collect();
                }
                if stage.try_insert(&q, tau * tau * rc) {
                    children.push(q);
                }
            }
        }
        cover = 2.0 * tau * tau * rc + h * sk / 2.0;
        if a + 2 == stages.len() {
            for q in children {
                kept.insert(q.clone(), tau * tau * rc);
                centers.push(NeckCenter { x: q, r: rc, label: CenterLabel::Zero });
            }
            break;
        }
        let labels: Vec<char> = children
            .par_iter()
            .map(|q| classify_inner(ctx, &Ball { center: q.clone(), radius: rc }, Some(dbar), false).label)
            .collect();
        let larger: Vec<(Vec<f64>, f64)> =
            centers.iter().filter(|c| c.r > rc * (1.0 + REL)).map(|c| (c.x.clone(), c.r)).collect();
        let mut next = Vec::new();
        for (q, lab) in children.into_iter().zip(labels) {
            let label = match lab {
                's' => CenterLabel::S,
                'e' => CenterLabel::E,
                'd' => CenterLabel::D,
                _ => {
                    let crowded = larger.iter().any(|(z, rz)| dist(&q, z) < (tau + tau * tau) * rz + tau * rc);
                    if !crowded {
                        next.push(q);
                        continue;
                    }
                    CenterLabel::F
                }
            };
            kept.insert(q.clone(), tau * tau * rc);
            centers.push(NeckCenter { x: q, r: rc, label });
        }
        active = next;
        if active.is_empty() {
            break;
        }
    }
    Ok(NeckBuild { region: NeckRegion { ball: b.clone(), centers, params: *p }, dbar, stages })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// One of n1-coverage, n1-flatness, n2, n3, disjoint.
    pub kind: String,
    pub center: usize,
    pub scale: f64,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub disjoint: usize,
}

impl VerifySummary {
    pub fn total(&self) -> usize {
        self.n1 + self.n2 + self.n3 + self.disjoint
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeckReport {
    pub violations: Vec<Violation>,
    pub summary: VerifySummary,
    /// (n1) only tries the fitted plane L_{x,4s}, so its failures may be
    /// false alarms ("n1-candidate-limited").
    pub n1_candidate_limited: bool,
}

impl NeckReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn project_disk(d: &Disk, p: &[f64]) -> Vec<f64> {
    let r = dist(p, &d.center);
    if r <= d.radius {
        p.to_vec()
    } else {
        d.center.iter().zip(p).map(|(c, v)| c + (v - c) * (d.radius / r)).collect()
    }
}

/// Largest distance from L ∩ B_s(x) ∩ B_R(x_c) to the center set, sampled on
/// a grid of spacing τs/4 pulled into the region by alternating projections.
/// Returns (gap, sampling slack).
fn n1_gap(l: &AffineSubspace, x: &[f64], s: f64, ambient: &Ball, tau: f64, cm: &DiscreteMeasure) -> (f64, f64) {
    let k = l.k();
    let step = tau * s / N1_SAMPLE_DIV;
    let slack = step * (k as f64).sqrt() / 2.0;
    let Ok(d1) = slice(l, &Ball { center: x.to_vec(), radius: s }) else {
        return (f64::INFINITY, slack);
    };
    let Ok(d2) = slice(l, ambient) else {
        return (0.0, slack);
    };
    let c1 = l.coords(&d1.center);
    let mut gap = 0.0f64;
    for u in lattice_in_ball(k, step, d1.radius + slack + step) {
        let coords: Vec<f64> = c1.iter().zip(&u).map(|(a, b)| a + b).collect();
        let mut q = l.point_at(&coords);
        if d1.distance(&q) > slack || d2.distance(&q) > slack {
            continue;
        }
        for _ in 0..20 {
            if dist(&q, &d1.center) <= d1.radius && dist(&q, &d2.center) <= d2.radius {
                break;
            }
            q = project_disk(&d2, &project_disk(&d1, &q));
        }
        gap = gap.max(cm.nearest(&q).map_or(f64::INFINITY, |(_, d)| d));
    }
    (gap, slack)
}

/// Verification scales for a center: R τ^j down to max(r_x, r_min), plus
/// that floor itself.
fn verify_scales(big_r: f64, tau: f64, floor: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut s = big_r;
    while s >= floor * (1.0 - REL) {
        out.push(s);
        s *= tau;
    }
    if out.last().map_or(true, |&l| l > floor * (1.0 + REL)) {
        out.push(floor);
    }
    out
}

/// Dyadic scales 2^j in [lo, hi].
fn dyadic_between(lo: f64, hi: f64) -> Vec<f64> {
    let mut j = hi.log2().floor() as i32;
    let mut out = Vec::new();
    loop {
        let g = 2f64.powi(j);
        if g < lo * (1.0 - REL) {
            break;
        }
        if g <= hi * (1.0 + REL) {
            out.push(g);
        }
        j -= 1;
    }
    out
}

/// Discrete distortion Σ β(x,g)² over dyadic g ∈ [lo, hi] at any point.
pub fn point_distortion(m: &DiscreteMeasure, x: &[f64], k: usize, lo: f64, hi: f64) -> f64 {
    dyadic_between(lo, hi).into_iter().map(|g| beta_sq(m, x, g, k)).fold(0.0, |a, b| a + b)
}

/// Checks (n1)-(n3) on the scale grid and the τ²-disjointness; never fails,
/// only reports.
pub fn verify_neck(m: &DiscreteMeasure, n: &NeckRegion) -> NeckReport {
    let p = &n.params;
    let (tau, big_r) = (p.tau, n.ball.radius);
    let mut violations = Vec::new();
    let Some(cm) = n.center_index() else {
        return NeckReport { violations, summary: VerifySummary::default(), n1_candidate_limited: true };
    };
    let mut idx = DisjointIndex::new(true);
    for (i, c) in n.centers.iter().enumerate() {
        if let Some(j) = idx.first_conflict(&c.x, tau * tau * c.r) {
            violations.push(Violation {
                kind: "disjoint".into(),
                center: i,
                scale: c.r,
                value: dist(&c.x, &n.centers[j].x),
                limit: tau * tau * (c.r + n.centers[j].r),
            });
        }
        idx.insert(c.x.clone(), tau * tau * c.r);
    }
    let per_center: Vec<Vec<Violation>> = n
        .centers
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut out = Vec::new();
            let floor = c.r.max(p.r_min);
            for s in verify_scales(big_r, tau, floor) {
                let fit = fit_best_subspace(m, &Ball { center: c.x.clone(), radius: 4.0 * s }, p.k);
                let Ok(fit) = fit else {
                    out.push(Violation { kind: "n1-flatness".into(), center: i, scale: s, value: f64::INFINITY, limit: p.delta * s });
                    continue;
                };
                let l = &fit.subspace;
                let flat = cm.indices_in(&c.x, s, false).into_iter().map(|j| l.distance(&n.centers[j].x)).fold(0.0, f64::max);
                if flat >= p.delta * s {
                    out.push(Violation { kind: "n1-flatness".into(), center: i, scale: s, value: flat, limit: p.delta * s });
                }
                let (gap, slack) = n1_gap(l, &c.x, s, &n.ball, tau, &cm);
                if gap >= tau * s - slack {
                    out.push(Violation { kind: "n1-coverage".into(), center: i, scale: s, value: gap, limit: tau * s - slack });
                }
                if s >= floor / tau * (1.0 - REL) {
                    let t = is_noncollapsed_ball(m, &Ball { center: c.x.clone(), radius: s }, p);
                    if !t.independent {
                        let worst = t.clearances.iter().copied().fold(f64::INFINITY, f64::min);
                        out.push(Violation { kind: "n2".into(), center: i, scale: s, value: worst, limit: 2.0 * p.epsilon * s });
                    }
                }
            }
            let d = point_distortion(m, &c.x, p.k, floor, 2.0 * big_r);
            if d >= p.delta {
                out.push(Violation { kind: "n3".into(), center: i, scale: floor, value: d, limit: p.delta });
            }
            out
        })
        .collect();
    violations.extend(per_center.into_iter().flatten());
    let mut summary = VerifySummary::default();
    for v in &violations {
        match v.kind.as_str() {
            "disjoint" => summary.disjoint += 1,
            "n2" => summary.n2 += 1,
            "n3" => summary.n3 += 1,
            _ => summary.n1 += 1,
        }
    }
    NeckReport { violations, summary, n1_candidate_limited: true }
}

/// r_y = min(1, min_x max(r_x, τ^{-2}|x - y|)) over the centers.
pub fn extend_radius_function(n: &NeckRegion, y: &[f64]) -> f64 {
    let t2 = n.params.tau * n.params.tau;
    n.centers.iter().map(|c| c.r.max(dist(&c.x, y) / t2)).fold(1.0, f64::min)
}

/// μ of the neck ball minus the closed tube ∪ B̄_{max(r_x, r_min)}(x).
pub fn neck_region_mass(m: &DiscreteMeasure, n: &NeckRegion) -> f64 {
    let tube = |c: &NeckCenter| c.r.max(n.params.r_min);
    let cm = n.center_index();
    let rmax = n.centers.iter().map(tube).fold(0.0, f64::max);
    m.indices_in(&n.ball.center, n.ball.radius, false)
        .into_iter()
        .filter(|&i| {
            let y = m.point(i);
            !cm.as_ref().is_some_and(|cm| cm.indices_in(y, rmax, true).into_iter().any(|j| dist(y, &n.centers[j].x) <= tube(&n.centers[j])))
        })
        .map(|i| m.weight(i))
        .fold(0.0, |a, b| a + b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeckEntry {
    pub ball: Ball,
    pub centers: Vec<NeckCenter>,
    pub verify: VerifySummary,
    /// μ of the region outside the tube.
    pub mass: f64,
}

impl NeckEntry {
    pub fn region(&self, params: NeckParams) -> NeckRegion {
        NeckRegion { ball: self.ball.clone(), centers: self.centers.clone(), params }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub points: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    pub r_min: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tallies {
    pub sum_ra_k: f64,
    pub sum_rb_k: f64,
    pub sum_residual_k: f64,
    /// Σ r_f^k per re-entry depth.
    pub sum_rf_k_by_depth: Vec<f64>,
    pub e_balls: usize,
    pub d_balls: usize,
    pub s_balls: usize,
}

impl Tallies {
    /// Ratios of consecutive f-ledger entries.
    pub fn f_decay_rates(&self) -> Vec<f64> {
        self.sum_rf_k_by_depth.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub params: NeckParams,
    pub gamma: f64,
    pub necks: Vec<NeckEntry>,
    pub b_balls: Vec<BBall>,
    #[serde(skip)]
    pub s_balls: Vec<Ball>,
    pub residual: ResidualSet,
    pub tallies: Tallies,
}

struct Item {
    ball: Ball,
    cap: Option<f64>,
    f_depth: usize,
    owned: Vec<usize>,
}

fn enter_f(depth: usize) -> Result<usize> {
    let d = depth + 1;
    if d > F_DEPTH_MAX {
        return Err(Error::Consistency(format!("f-ball re-entry depth exceeded {F_DEPTH_MAX}")));
    }
    Ok(d)
}

/// Worklist covering of the support in B_1(0) by necks, b-balls and a residual
/// at the scale floor.
pub fn neck_decompose(m: &DiscreteMeasure, p: NeckParams, gamma: f64) -> Result<Decomposition> {
    let ctx = NeckContext::new(m, p)?;
    for i in 0..m.len() {
        let d = ctx.table.at(i, 2.0);
        if d > gamma {
            return Err(Error::Input(format!("distortion {d} at point {i} exceeds gamma = {gamma}")));
        }
    }
    let root = Ball { center: vec![0.0; m.dim()], radius: 1.0 };
    let mut queue = VecDeque::new();
    queue.push_back(Item { owned: m.indices_in(&root.center, 1.0, false), ball: root, cap: None, f_depth: 0 });
    let mut dec = Decomposition {
        params: p,
        gamma,
        necks: Vec::new(),
        b_balls: Vec::new(),
        s_balls: Vec::new(),
        residual: ResidualSet { r_min: p.r_min, ..Default::default() },
        tallies: Tallies::default(),
    };
    let kpow = |r: f64| r.powi(p.k as i32);
    while let Some(it) = queue.pop_front() {
        if it.owned.is_empty() {
            continue;
        }
        let cls = classify_ball(&ctx, &it.ball, it.cap);
        if cls.label == 'b' {
            dec.b_balls.push(BBall { ball: it.ball, mass: cls.evidence.mass_2r, owned: it.owned });
            continue;
        }
        if it.ball.radius <= p.r_min * (1.0 + REL) {
            dec.residual.points.push(it.ball.center);
            dec.residual.radii.push(it.ball.radius);
            continue;
        }
        match cls.label {
            's' => {
                dec.tallies.s_balls += 1;
                dec.s_balls.push(it.ball.clone());
                let cap = ctx.max_distortion(&it.ball.center, it.ball.radius, 2.0 * it.ball.radius);
                queue.push_back(Item { cap, ..it });
            }
            'e' => {
                dec.tallies.e_balls += 1;
                for sb in cover_e_ball(&ctx, &it.ball, Some(&it.owned))?.s_balls {
                    queue.push_back(Item { ball: sb.ball, cap: Some(sb.cap), f_depth: it.f_depth, owned: sb.owned });
                }
            }
            'd' => {
                dec.tallies.d_balls += 1;
                let cover = cover_d_ball(&ctx, &it.ball, Some(&it.owned))?;
                dec.b_balls.extend(cover.b_balls);
                if !cover.f_balls.is_empty() {
                    let depth = enter_f(it.f_depth)?;
                    if dec.tallies.sum_rf_k_by_depth.len() < depth {
                        dec.tallies.sum_rf_k_by_depth.resize(depth, 0.0);
                    }
                    dec.tallies.sum_rf_k_by_depth[depth - 1] += cover.sum_rf_k;
                    for f in cover.f_balls {
                        queue.push_back(Item { ball: f.ball, cap: None, f_depth: depth, owned: f.owned });
                    }
                }
            }
            _ => {
                let nb = build_neck(&ctx, &it.ball, it.cap)?;
                let region = nb.region;
                let frozen: Vec<usize> =
                    (0..region.centers.len()).filter(|&j| region.centers[j].label != CenterLabel::Zero).collect();
                let mut groups: Vec<Vec<usize>> = vec![Vec::new(); frozen.len()];
                if !frozen.is_empty() {
                    let fpts: Vec<Vec<f64>> = frozen.iter().map(|&j| region.centers[j].x.clone()).collect();
                    let fi = DiscreteMeasure::uniform(&fpts)?;
                    let rmax = frozen.iter().map(|&j| region.centers[j].r).fold(0.0, f64::max);
                    for &y in &it.owned {
                        let home = fi
                            .indices_in(m.point(y), rmax, false)
                            .into_iter()
                            .find(|&g| dist(m.point(y), &fpts[g]) < region.centers[frozen[g]].r);
                        if let Some(g) = home {
                            groups[g].push(y);
                        }
                    }
                }
                for (g, owned) in groups.into_iter().enumerate() {
                    let c = &region.centers[frozen[g]];
                    let (cap, f_depth) = match c.label {
                        CenterLabel::S => (Some(nb.dbar), it.f_depth),
                        CenterLabel::F => (None, enter_f(it.f_depth)?),
                        _ => (None, it.f_depth),
                    };
                    queue.push_back(Item { ball: Ball { center: c.x.clone(), radius: c.r }, cap, f_depth, owned });
                }
                let verify = verify_neck(m, &region).summary;
                let mass = neck_region_mass(m, &region);
                dec.necks.push(NeckEntry { ball: region.ball, centers: region.centers, verify, mass });
            }
        }
    }
    dec.tallies.sum_ra_k = dec.necks.iter().map(|n| kpow(n.ball.radius)).fold(0.0, |a, b| a + b);
    dec.tallies.sum_rb_k = dec.b_balls.iter().map(|b| kpow(b.ball.radius)).fold(0.0, |a, b| a + b);
    dec.tallies.sum_residual_k = dec.residual.radii.iter().map(|&r| kpow(r)).fold(0.0, |a, b| a + b);
    Ok(dec)
}

impl Decomposition {
    /// Every covering ball: neck balls, b-balls, residual balls.
    pub fn pieces(&self) -> Vec<Ball> {
        let mut out: Vec<Ball> = self.necks.iter().map(|n| n.ball.clone()).collect();
        out.extend(self.b_balls.iter().map(|b| b.ball.clone()));
        out.extend(
            self.residual.points.iter().zip(&self.residual.radii).map(|(c, &r)| Ball { center: c.clone(), radius: r }),
        );
        out
    }

    /// Support points of B_1(0) outside every piece.
    pub fn coverage_gaps(&self, m: &DiscreteMeasure) -> Vec<usize> {
        let pieces = self.pieces();
        let origin = vec![0.0; m.dim()];
        let support = m.indices_in(&origin, 1.0, false);
        if pieces.is_empty() {
            return support;
        }
        let centers: Vec<Vec<f64>> = pieces.iter().map(|b| b.center.clone()).collect();
        let rmax = pieces.iter().map(|b| b.radius).fold(0.0, f64::max);
        let ci = DiscreteMeasure::uniform(&centers).expect("nonempty");
        support
            .into_iter()
            .filter(|&i| !ci.indices_in(m.point(i), rmax, false).into_iter().any(|j| pieces[j].contains(m.point(i))))
            .collect()
    }

    /// b-balls failing μ(B_{2r}) < (2^k + 1) ν r^k on recomputation.
    pub fn failing_b_certificates(&self, m: &DiscreteMeasure) -> Vec<usize> {
        let p = &self.params;
        let c = 2f64.powi(p.k as i32) + 1.0;
        (0..self.b_balls.len())
            .filter(|&i| {
                let b = &self.b_balls[i].ball;
                !(m.mass_in(&b.center, 2.0 * b.radius, false) < c * p.nu * b.radius.powi(p.k as i32))
            })
            .collect()
    }

    /// Largest measured μ(B_{2r_b}) / (ν r_b^k).
    pub fn b_constant(&self) -> f64 {
        let p = &self.params;
        self.b_balls.iter().map(|b| b.mass / (p.nu * b.ball.radius.powi(p.k as i32))).fold(0.0, f64::max)
    }

    pub fn tallies_consistent(&self) -> bool {
        let k = self.params.k as i32;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        close(self.tallies.sum_ra_k, self.necks.iter().map(|n| n.ball.radius.powi(k)).fold(0.0, |a, b| a + b))
            && close(self.tallies.sum_rb_k, self.b_balls.iter().map(|b| b.ball.radius.powi(k)).fold(0.0, |a, b| a + b))
            && close(self.tallies.sum_residual_k, self.residual.radii.iter().map(|r| r.powi(k)).fold(0.0, |a, b| a + b))
    }
}
