//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails or overruns its time budget.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reif::beta::{beta_sq, fit_best_subspace, plane_residual};
use reif::covering::{hausdorff_content, minkowski_content, packing_content};
use reif::generators::{mixed_measure, perpendicular_planes, plane_measure, snowflake, dust_measure};
use reif::geometry::{dist, norm, square_gain_check, AffineSubspace, Ball};
use reif::measure::DiscreteMeasure;
use reif::neck::{neck_decompose, verify_neck, Decomposition, NeckParams};
use reif::reifmap::{build_reifenberg_map, holder_exponent, ReifConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lsq_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let l = norm(&v);
        if l > 1e-3 && l <= 1.0 {
            return v.iter().map(|x| x / l).collect();
        }
    }
}

fn random_measure(rng: &mut ChaCha8Rng, len: usize, n: usize) -> DiscreteMeasure {
    let pts: Vec<Vec<f64>> = (0..len).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let w: Vec<f64> = (0..len).map(|_| rng.gen_range(0.1..2.0)).collect();
    DiscreteMeasure::from_points(&pts, w).unwrap()
}

fn snowflake_lengths() -> Check {
    let delta: f64 = 0.3;
    let mut worst = 0.0f64;
    for i in 0..=6 {
        let got = snowflake(delta, i).map_err(|e| e.to_string())?.length();
        let want = 4.0 * (1.0 + delta * delta).powf(i as f64 / 2.0);
        let rel = (got - want).abs() / want;
        worst = worst.max(rel);
        ensure(rel <= 1e-10, || format!("S_{i}: length {got} vs {want}"))?;
    }
    Ok(format!("max relative error {worst:.1e}"))
}

fn snowflake_holder() -> Check {
    let cfg = ReifConfig { divisor: 6.0, fit_multiplier: 16.0, tol_rel: 1e-9, flatness_samples: 4 };
    let mut uppers = Vec::new();
    for delta in [0.3f64, 0.2, 0.1] {
        let pts = snowflake(delta, 6).map_err(|e| e.to_string())?.vertex_points();
        let map = build_reifenberg_map(&pts, 1, 6, cfg).map_err(|e| e.to_string())?;
        ensure(map.injective(1e-12), || format!("map not injective at delta {delta}"))?;
        let h = holder_exponent(&pts, &map.images, 0.0).map_err(|e| e.to_string())?;
        uppers.push((delta, h.upper));
    }
    let q: f64 = 1.0 + 0.09;
    let target = (q / 4.0).ln() / (q.sqrt() / 4.0).ln();
    let up = uppers[0].1;
    ensure((up - target).abs() <= 0.1 * target, || format!("upper exponent {up:.4} vs target {target:.4}"))?;
    ensure(uppers.windows(2).all(|w| w[1].1 > w[0].1) && uppers[2].1 <= 1.0 + 0.1 * target, || {
        format!("exponents not monotone toward 1: {uppers:?}")
    })?;
    Ok(format!(
        "target {target:.4}; upper exponents {}",
        uppers.iter().map(|(d, u)| format!("{d}:{u:.4}")).collect::<Vec<_>>().join(" ")
    ))
}

fn beta_scaling() -> Check {
    let m = dust_measure(2, 0.1, 0.01).map_err(|e| e.to_string())?;
    let mut pts = Vec::new();
    for r in [0.125f64, 0.25, 0.5, 1.0] {
        let b2 = beta_sq(&m, &[0.0, 0.0], r, 1);
        // brute-force oracle: minimize the squared-distance integral over lines
        // through the weighted mean by an angle scan
        let idx = m.indices_in(&[0.0, 0.0], r, false);
        let mass: f64 = idx.iter().map(|&i| m.weight(i)).sum();
        let mean: Vec<f64> = (0..2).map(|d| idx.iter().map(|&i| m.weight(i) * m.point(i)[d]).sum::<f64>() / mass).collect();
        let brute = (0..720)
            .map(|a| {
                let t = a as f64 * std::f64::consts::PI / 720.0;
                let nrm = [-t.sin(), t.cos()];
                idx.iter()
                    .map(|&i| {
                        let p = m.point(i);
                        m.weight(i) * ((p[0] - mean[0]) * nrm[0] + (p[1] - mean[1]) * nrm[1]).powi(2)
                    })
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
            / r.powi(3);
        ensure(b2 <= brute * (1.0 + 1e-9) && brute <= b2 * (1.0 + 1e-3), || {
            format!("beta^2 at r={r}: {b2} vs angle-scan oracle {brute}")
        })?;
        pts.push((r.ln(), b2.ln()));
    }
    let s = lsq_slope(&pts);
    ensure((s - 1.0).abs() <= 0.1, || format!("slope {s:.4}"))?;
    Ok(format!("slope {s:.4} (n-k = 1)"))
}

fn center_of_mass_lemma() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut trials = 0;
    let mut worst = f64::NEG_INFINITY;
    while trials < 1000 {
        let n = rng.gen_range(2..=4);
        let k = rng.gen_range(1..=2.min(n - 1));
        let len = rng.gen_range(5..200);
        let m = random_measure(&mut rng, len, n);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let r = rng.gen_range(0.2..1.5);
        let s = rng.gen_range(0.01..1.0) * r;
        // y with B_s(y) inside B_r(x)
        let u = unit_vector(&mut rng, n);
        let t = rng.gen_range(0.0..(r - s));
        let y: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + t * b).collect();
        let inner = Ball::new(y, s).unwrap();
        let mu_s = m.mass_in_ball(&inner);
        if mu_s <= 0.0 {
            continue;
        }
        trials += 1;
        let outer = Ball::new(x.clone(), r).unwrap();
        let l = fit_best_subspace(&m, &outer, k).map_err(|e| e.to_string())?.subspace;
        let com = m.center_of_mass(&inner).map_err(|e| e.to_string())?;
        // r^{k+2} β² recomputed directly as the integral of d(·, L)² over B_r(x)
        let integral: f64 = (0..m.len())
            .filter(|&i| dist(m.point(i), &x) < r)
            .map(|i| m.weight(i) * l.distance2(m.point(i)))
            .sum();
        let lhs = l.distance2(&com);
        let rhs = integral / mu_s;
        let lib = r.powi(k as i32 + 2) * beta_sq(&m, &x, r, k);
        ensure((lib - integral).abs() <= 1e-9 * integral.max(1.0), || format!("beta^2 {lib} vs direct {integral}"))?;
        worst = worst.max(lhs - rhs);
        ensure(lhs <= rhs + 1e-9, || format!("trial {trials}: d^2 = {lhs} > {rhs}"))?;
    }
    Ok(format!("{trials} trials, max(lhs - rhs) = {worst:.2e}"))
}

fn square_gain_lemma() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 5;
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..1000 {
        let k = rng.gen_range(1..n);
        let tilt = rng.gen_range(0.0..0.5);
        let dirs2: Vec<Vec<f64>> = (0..k).map(|_| unit_vector(&mut rng, n)).collect();
        let dirs1: Vec<Vec<f64>> = dirs2
            .iter()
            .map(|d| {
                let e = unit_vector(&mut rng, n);
                d.iter().zip(&e).map(|(a, b)| a + tilt * b).collect()
            })
            .collect();
        let (Ok(l1), Ok(l2)) = (AffineSubspace::new(vec![0.0; n], &dirs1), AffineSubspace::new(vec![0.0; n], &dirs2))
        else {
            continue;
        };
        let c: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = l2.point_at(&c);
        let nv = norm(&v);
        if nv < 1e-6 {
            continue;
        }
        let v: Vec<f64> = v.iter().map(|x| x / nv).collect();
        // oracle d: the larger of |π2⊥ on L1| and |π1⊥ on L2|, from the
        // singular values of the complement-projected bases
        let leak = |from: &AffineSubspace, to: &AffineSubspace| {
            let cols: Vec<Vec<f64>> = from
                .basis
                .iter()
                .map(|b| {
                    let pb = to.project_vector(b);
                    b.iter().zip(&pb).map(|(x, y)| x - y).collect()
                })
                .collect();
            DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]).svd(false, false).singular_values.max()
        };
        let d = leak(&l1, &l2).max(leak(&l2, &l1));
        let pv: Vec<f64> = (0..n).map(|i| l1.basis.iter().map(|b| b[i] * b.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>()).sum()).collect();
        let gain = (norm(&pv) - 1.0).abs();
        let (lib_gain, lib_d2) = square_gain_check(&l1, &l2, &v).map_err(|e| e.to_string())?;
        ensure((lib_gain - gain).abs() <= 1e-12, || format!("trial {trial}: gain {lib_gain} vs {gain}"))?;
        ensure((lib_d2 - d * d).abs() <= 1e-12, || format!("trial {trial}: d^2 {lib_d2} vs oracle {}", d * d))?;
        worst = worst.max(gain - d * d);
        ensure(gain <= d * d + 1e-12, || format!("trial {trial}: gain {gain} > d^2 {}", d * d))?;
    }
    Ok(format!("1000 trials, max(gain - d^2) = {worst:.2e}"))
}

struct NeckRuns {
    necks_ratio: Vec<f64>,
}

fn check_decomposition(m: &DiscreteMeasure, d: &Decomposition, what: &str) -> Result<(usize, usize), String> {
    let mut viol = 0;
    for n in &d.necks {
        let rep = verify_neck(m, &n.region(d.params));
        viol += rep.violations.len();
        ensure(rep.summary == n.verify, || format!("{what}: stored verify summary disagrees with a fresh check"))?;
    }
    ensure(viol == 0, || format!("{what}: {viol} neck violations"))?;
    let bad = d.failing_b_certificates(m);
    ensure(bad.is_empty(), || format!("{what}: {} b-ball certificates fail", bad.len()))?;
    let gaps = d.coverage_gaps(m);
    ensure(gaps.is_empty(), || format!("{what}: {} uncovered support points", gaps.len()))?;
    Ok((d.necks.len(), d.b_balls.len()))
}

fn neck_closure(runs: &mut NeckRuns) -> Check {
    let plane = plane_measure(3, 2, 1.0, 1.0 / 32.0).map_err(|e| e.to_string())?;
    let p = NeckParams::new(2, 0.01, 0.1, 0.5, 0.25, 0.25).map_err(|e| e.to_string())?;
    let d = neck_decompose(&plane, p, 10.0).map_err(|e| e.to_string())?;
    let (pn, pb) = check_decomposition(&plane, &d, "plane")?;
    ensure(pn > 0, || "plane: no necks".into())?;
    runs.necks_ratio.extend(d.necks.iter().map(|n| n.mass / (p.delta * n.ball.radius.powi(2))));

    let lines = perpendicular_planes(2, 1, 1.0, 1.0 / 512.0).map_err(|e| e.to_string())?;
    let q = NeckParams::new(1, 0.01, 0.1, 0.5, 0.25, 1.0 / 64.0).map_err(|e| e.to_string())?;
    let e = neck_decompose(&lines, q, 10.0).map_err(|e| e.to_string())?;
    let (ln, lb) = check_decomposition(&lines, &e, "crossing lines")?;
    ensure(ln > 0, || "crossing lines: no necks".into())?;
    runs.necks_ratio.extend(e.necks.iter().map(|n| n.mass / (q.delta * n.ball.radius)));
    Ok(format!("plane: {pn} necks, {pb} b-balls; crossing lines: {ln} necks, {lb} b-balls; 0 violations, 0 gaps"))
}

fn residual_decay() -> Check {
    let lines = perpendicular_planes(2, 1, 1.0, 1.0 / 512.0).map_err(|e| e.to_string())?;
    let mut sums = Vec::new();
    for j in 6..=8 {
        let r_min = 2f64.powi(-j);
        let p = NeckParams::new(1, 0.01, 0.1, 0.5, 0.25, r_min).map_err(|e| e.to_string())?;
        let d = neck_decompose(&lines, p, 10.0).map_err(|e| e.to_string())?;
        let s: f64 = d.residual.radii.iter().fold(0.0, |a, r| a + r);
        ensure((s - d.tallies.sum_residual_k).abs() <= 1e-12 * s.max(1.0), || "residual tally mismatch".into())?;
        sums.push((r_min, s));
    }
    ensure(sums.windows(2).all(|w| w[1].1 < w[0].1), || format!("not decreasing: {sums:?}"))?;
    Ok(sums.iter().map(|(r, s)| format!("r_min {r}: {s:.4}")).collect::<Vec<_>>().join("; "))
}

/// μ(𝒩)/(δ r^k) recorded on the first calibration run: 0.744 on the dusty
/// plane, 0 on the clean plane and crossing lines.
const NECK_MASS_BASELINE: f64 = 0.75;

fn neck_mass(runs: &NeckRuns) -> Check {
    let mut mass = Vec::new();
    let mut ratios = runs.necks_ratio.clone();
    for delta in [0.01f64, 0.005] {
        let m = mixed_measure(3, 2, 1.0, 1.0 / 32.0, delta / 4.0, 1.0 / 8.0).map_err(|e| e.to_string())?;
        let p = NeckParams::new(2, delta, 0.1, 0.5, 0.25, 0.25)
            .and_then(|p| p.with_thresholds(0.2, delta.powi(4), delta))
            .map_err(|e| e.to_string())?;
        let d = neck_decompose(&m, p, 10.0).map_err(|e| e.to_string())?;
        ensure(!d.necks.is_empty(), || format!("no necks at delta {delta}"))?;
        ensure(d.necks.iter().all(|n| n.verify.total() == 0), || format!("neck violations at delta {delta}"))?;
        mass.push(d.necks.iter().fold(0.0, |a, n| a + n.mass));
        ratios.extend(d.necks.iter().map(|n| n.mass / (delta * n.ball.radius.powi(2))));
    }
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let halving = mass[1] / mass[0];
    ensure(worst < NECK_MASS_BASELINE, || format!("max ratio {worst:.4} above baseline {NECK_MASS_BASELINE}"))?;
    ensure((halving - 0.5).abs() <= 0.3 * 0.5, || format!("mass ratio at delta/2 is {halving:.4}"))?;
    Ok(format!("max mu(N)/(delta r^k) = {worst:.4} < {NECK_MASS_BASELINE}; mass ratio at delta/2 = {halving:.4}"))
}

fn plane_samples(l: usize, spacing: f64) -> Vec<Vec<f64>> {
    let m = (1.0 / spacing).ceil() as i64;
    let mut out = Vec::new();
    for i in -m..=m {
        for j in if l == 2 { -m..=m } else { 0..=0 } {
            let p = vec![i as f64 * spacing, j as f64 * spacing, 0.0];
            if norm(&p) < 1.0 {
                out.push(p);
            }
        }
    }
    out
}

fn contents() -> Check {
    let scales = [0.25f64, 0.125, 0.0625, 0.03125];
    let mut notes = Vec::new();
    for l in [1usize, 2] {
        let pts = plane_samples(l, 1.0 / 256.0);
        for k in [1usize, 2] {
            let mut hs = Vec::new();
            let mut ms = Vec::new();
            for &r in &scales {
                let h = hausdorff_content(&pts, k, r, None).map_err(|e| e.to_string())?;
                let m = minkowski_content(&pts, k, r).map_err(|e| e.to_string())?;
                ensure(h.covers(&pts) && m.covers(&pts), || format!("l={l} k={k} r={r}: certificate does not cover"))?;
                hs.push((r.ln(), h.value.ln()));
                ms.push((r.ln(), m.value.ln()));
            }
            let want = k as f64 - l as f64;
            let (sh, sm) = (lsq_slope(&hs), lsq_slope(&ms));
            // for k > l the Hausdorff infimum prefers balls far below r, so only Minkowski has a scale law there
            let h_ok = k > l || (sh - want).abs() <= 0.2;
            ensure(h_ok && (sm - want).abs() <= 0.2, || {
                format!("l={l} k={k}: slopes {sh:.3} / {sm:.3}, want {want}")
            })?;
            notes.push(format!("l={l},k={k}: {sh:.2}/{sm:.2}"));
        }
    }
    // ℓ = 2 > k = 1: packing content keeps growing
    let pts = plane_samples(2, 1.0 / 256.0);
    let pack: Vec<f64> = scales
        .iter()
        .map(|&r| packing_content(&pts, 1, r).map(|p| p.value))
        .collect::<reif::Result<_>>()
        .map_err(|e| e.to_string())?;
    ensure(pack.windows(2).all(|w| w[1] > w[0]), || format!("packing not increasing: {pack:?}"))?;
    notes.push(format!("packing {:.1}..{:.1}", pack[0], pack[3]));
    Ok(notes.join("; "))
}

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let m = random_measure(&mut rng, 5000, 3);
    for q in 0..1000 {
        let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.2..1.2)).collect();
        let r = rng.gen_range(0.0..1.0f64).powi(2) * 1.5;
        let closed = q % 2 == 1;
        let brute: Vec<usize> = (0..m.len())
            .filter(|&i| {
                let d2: f64 = m.point(i).iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
                if closed {
                    d2 <= r * r
                } else {
                    d2 < r * r
                }
            })
            .collect();
        let got = m.indices_in(&c, r, closed);
        ensure(got == brute, || format!("query {q}: index returned {} points, scan {}", got.len(), brute.len()))?;
        let bm: f64 = brute.iter().map(|&i| m.weight(i)).sum();
        let gm = m.mass_in(&c, r, closed);
        ensure((gm - bm).abs() <= 1e-12 * bm.max(1.0), || format!("query {q}: mass {gm} vs {bm}"))?;
    }
    let mut instances = 0;
    for _ in 0..12 {
        let n = rng.gen_range(2..=3);
        let k = rng.gen_range(1..n);
        let len = rng.gen_range(4..25);
        let small = random_measure(&mut rng, len, n);
        let b = Ball::new(vec![0.0; n], 2.0).unwrap();
        let best = fit_best_subspace(&small, &b, k).map_err(|e| e.to_string())?;
        let fit = plane_residual(&small, &b, &best.subspace);
        for _ in 0..10_000 {
            let base: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dirs: Vec<Vec<f64>> = (0..k).map(|_| unit_vector(&mut rng, n)).collect();
            let Ok(l) = AffineSubspace::new(base, &dirs) else { continue };
            let other = plane_residual(&small, &b, &l);
            ensure(fit <= other + 1e-12, || format!("random plane beats the fit: {other} < {fit}"))?;
        }
        instances += 1;
    }
    Ok(format!("1000 queries exact; best fit unbeaten on {instances} instances x 10000 planes"))
}

fn main() {
    let mut runs = NeckRuns { necks_ratio: Vec::new() };
    type Entry<'a> = (u32, &'a str, f64, Box<dyn FnOnce(&mut NeckRuns) -> Check + 'a>);
    let criteria: Vec<Entry> = vec![
        (1, "snowflake length identity", 1.0, Box::new(|_| snowflake_lengths())),
        (2, "snowflake Hölder exponent", 60.0, Box::new(|_| snowflake_holder())),
        (3, "beta scaling law", 10.0, Box::new(|_| beta_scaling())),
        (4, "center-of-mass lemma", 30.0, Box::new(|_| center_of_mass_lemma())),
        (5, "square-gain lemma", 10.0, Box::new(|_| square_gain_lemma())),
        (6, "neck verification closure", 120.0, Box::new(neck_closure)),
        (7, "residual decay", 300.0, Box::new(|_| residual_decay())),
        (8, "neck mass smallness", 300.0, Box::new(|r| neck_mass(r))),
        (9, "content estimators", 30.0, Box::new(|_| contents())),
        (10, "oracle equivalence", 60.0, Box::new(|_| oracle_equivalence())),
    ];
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        let t = Instant::now();
        let out = f(&mut runs);
        let secs = t.elapsed().as_secs_f64();
        let (ok, detail) = match out {
            Ok(d) if secs <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget} s budget")),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!("{} criterion {id:>2} {name} [{secs:.1} s / {budget} s]: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
