//! Homography estimation: normalized DLT, 4-point RANSAC and Levenberg-Marquardt
//! refinement of the symmetric transfer error.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rayon::prelude::*;

use super::features::{match_planes, FeatureParams, Match, Plane};
use crate::error::{Error, Result};
use crate::rng;
use crate::video::Video;

pub type Homography = Matrix3<f64>;

pub const MIN_INLIERS: usize = 8;

/// Scales `h` so its bottom-right entry is 1, or to unit Frobenius norm when
/// that entry vanishes.
pub fn normalize(h: &Homography) -> Homography {
    let s = h[(2, 2)];
    if s.abs() > 1e-12 {
        h / s
    } else {
        h / h.norm()
    }
}

#[inline]
pub fn transfer(h: &Homography, p: [f64; 2]) -> [f64; 2] {
    let v = h * Vector3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

fn hartley(points: &[[f64; 2]]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Normalized direct linear transform mapping `src` onto `dst` (n >= 4).
pub fn dlt(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Option<Homography> {
    if src.len() < 4 || src.len() != dst.len() {
        return None;
    }
    let ts = hartley(src);
    let td = hartley(dst);
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
    for (i, (p, q)) in src.iter().zip(dst).enumerate() {
        let p = transfer(&ts, *p);
        let q = transfer(&td, *q);
        let (x, y, u, v) = (p[0], p[1], q[0], q[1]);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * i, c)] = r0[c];
            a[(2 * i + 1, c)] = r1[c];
        }
    }
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = eig.eigenvectors.column(idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let h = td.try_inverse()? * hn * ts;
    if !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(normalize(&h))
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// True when any three of the four points are (nearly) collinear.
fn minimal_degenerate(p: &[[f64; 2]; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES
        .iter()
        .any(|t| cross2(p[t[0]], p[t[1]], p[t[2]]).abs() < 1.0)
}

/// Ratio of the smallest to largest principal spread of a point set.
fn spread_ratio(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let hi = tr / 2.0 + disc;
    let lo = tr / 2.0 - disc;
    if hi <= 0.0 {
        0.0
    } else {
        lo.max(0.0) / hi
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RansacParams {
    /// Inlier threshold on forward transfer error, pixels.
    pub threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            threshold: 2.0,
            max_iterations: 2000,
            confidence: 0.999,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub h: Homography,
    pub inliers: Vec<usize>,
}

fn inliers_of(h: &Homography, src: &[[f64; 2]], dst: &[[f64; 2]], thr: f64) -> Vec<usize> {
    let t2 = thr * thr;
    (0..src.len())
        .filter(|&i| {
            let q = transfer(h, src[i]);
            let e = (q[0] - dst[i][0]).powi(2) + (q[1] - dst[i][1]).powi(2);
            e.is_finite() && e < t2
        })
        .collect()
}

/// Robust homography `src -> dst`: RANSAC on minimal samples, DLT re-fit on
/// the consensus set, then LM refinement of the symmetric transfer error.
pub fn ransac(src: &[[f64; 2]], dst: &[[f64; 2]], params: &RansacParams) -> Result<Fit> {
    let n = src.len();
    if n < MIN_INLIERS {
        return Err(Error::Degenerate(format!(
            "{n} correspondences, need at least {MIN_INLIERS}"
        )));
    }
    let mut rng = rng::keyed(&[rng::tag::RANSAC, params.seed, n as u64]);
    let mut best: Vec<usize> = Vec::new();
    let mut needed = params.max_iterations;
    let mut it = 0;
    while it < needed.min(params.max_iterations) {
        it += 1;
        let pick = sample(&mut rng, n, 4);
        let s = [src[pick.index(0)], src[pick.index(1)], src[pick.index(2)], src[pick.index(3)]];
        let d = [dst[pick.index(0)], dst[pick.index(1)], dst[pick.index(2)], dst[pick.index(3)]];
        if minimal_degenerate(&s) || minimal_degenerate(&d) {
            continue;
        }
        let Some(h) = dlt(&s, &d) else { continue };
        let inl = inliers_of(&h, src, dst, params.threshold);
        if inl.len() > best.len() {
            best = inl;
            let w = best.len() as f64 / n as f64;
            let denom = (1.0 - w.powi(4)).max(1e-12).ln();
            if denom < 0.0 {
                needed = ((1.0 - params.confidence).ln() / denom).ceil().max(50.0) as usize;
            }
        }
    }
    if best.len() < 4 {
        return Err(Error::Degenerate("no consistent minimal sample".into()));
    }
    let mut h = Homography::identity();
    for _ in 0..3 {
        let s: Vec<_> = best.iter().map(|&i| src[i]).collect();
        let d: Vec<_> = best.iter().map(|&i| dst[i]).collect();
        h = dlt(&s, &d).ok_or_else(|| Error::Degenerate("DLT failed on inliers".into()))?;
        let next = inliers_of(&h, src, dst, params.threshold);
        if next == best || next.len() < 4 {
            break;
        }
        best = next;
    }
    let s: Vec<_> = best.iter().map(|&i| src[i]).collect();
    if spread_ratio(&s) < 1e-4 {
        return Err(Error::Degenerate(format!(
            "{} inliers are collinear",
            best.len()
        )));
    }
    let d: Vec<_> = best.iter().map(|&i| dst[i]).collect();
    h = refine_symmetric(&h, &s, &d, 30);
    let inliers = inliers_of(&h, src, dst, params.threshold);
    Ok(Fit { h, inliers })
}

fn symmetric_residuals(h: &Homography, src: &[[f64; 2]], dst: &[[f64; 2]], out: &mut Vec<f64>) -> bool {
    out.clear();
    let Some(hi) = h.try_inverse() else {
        return false;
    };
    for (p, q) in src.iter().zip(dst) {
        let f = transfer(h, *p);
        let b = transfer(&hi, *q);
        out.extend([f[0] - q[0], f[1] - q[1], b[0] - p[0], b[1] - p[1]]);
    }
    out.iter().all(|v| v.is_finite())
}

/// Levenberg-Marquardt on the 8 free entries of the Hartley-normalized
/// homography, minimizing the symmetric transfer error in pixels.
pub fn refine_symmetric(h: &Homography, src: &[[f64; 2]], dst: &[[f64; 2]], iterations: usize) -> Homography {
    let ts = hartley(src);
    let td = hartley(dst);
    let (Some(ts_inv), Some(td_inv)) = (ts.try_inverse(), td.try_inverse()) else {
        return *h;
    };
    let to_pixel = |hn: &Homography| td_inv * hn * ts;
    let hn0 = normalize(&(td * h * ts_inv));
    let mut params: Vec<f64> = hn0.iter().take(9).cloned().collect();
    // nalgebra iterates column-major; keep the layout but pin h22 at 1
    let fixed = 8;
    let from_params = |p: &[f64]| Homography::from_column_slice(p);
    let mut r = Vec::new();
    if !symmetric_residuals(&to_pixel(&from_params(&params)), src, dst, &mut r) {
        return *h;
    }
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let m = r.len();
    let mut jac = DMatrix::<f64>::zeros(m, 8);
    let mut rp = Vec::new();
    for _ in 0..iterations {
        let free: Vec<usize> = (0..9).filter(|&i| i != fixed).collect();
        for (c, &pi) in free.iter().enumerate() {
            let step = 1e-7 * params[pi].abs().max(1e-3);
            let mut q = params.clone();
            q[pi] += step;
            if !symmetric_residuals(&to_pixel(&from_params(&q)), src, dst, &mut rp) {
                return normalize(&to_pixel(&from_params(&params)));
            }
            for row in 0..m {
                jac[(row, c)] = (rp[row] - r[row]) / step;
            }
        }
        let rv = nalgebra::DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rv;
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj.clone();
            for d in 0..8 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-&jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let mut q = params.clone();
            for (c, &pi) in free.iter().enumerate() {
                q[pi] += delta[c];
            }
            if symmetric_residuals(&to_pixel(&from_params(&q)), src, dst, &mut rp) {
                let c: f64 = rp.iter().map(|v| v * v).sum();
                if c < cost {
                    params = q;
                    std::mem::swap(&mut r, &mut rp);
                    let rel = (cost - c) / cost.max(1e-300);
                    cost = c;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = rel > 1e-12;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    normalize(&to_pixel(&from_params(&params)))
}

/// Homography mapping pixel coordinates of `b` into `a`, estimated from
/// feature matches between the two planes.
pub fn estimate_pair(
    a: &Plane,
    b: &Plane,
    features: &FeatureParams,
    ransac_params: &RansacParams,
    pair: (usize, usize),
) -> Result<Homography> {
    let matches: Vec<Match> = match_planes(a, b, features);
    let too_few = |n: usize| Error::Registration {
        from: pair.0,
        to: pair.1,
        reason: format!("{n} inlier matches, need at least {MIN_INLIERS}"),
    };
    if matches.len() < MIN_INLIERS {
        return Err(too_few(matches.len()));
    }
    // solve b -> a
    let src: Vec<_> = matches.iter().map(|m| m.b).collect();
    let dst: Vec<_> = matches.iter().map(|m| m.a).collect();
    let fit = match ransac(&src, &dst, ransac_params) {
        Ok(f) => f,
        Err(Error::Degenerate(reason)) if reason.contains("need at least") => {
            return Err(too_few(matches.len()))
        }
        Err(e) => return Err(e),
    };
    if fit.inliers.len() < MIN_INLIERS {
        return Err(too_few(fit.inliers.len()));
    }
    Ok(fit.h)
}

/// Per-frame homographies into frame 0, chained from consecutive pairs:
/// `H_t = H_{t-1} * H_{t-1 <- t}`.
pub fn estimate_homographies(video: &Video, features: &FeatureParams, seed: u64) -> Result<Vec<Homography>> {
    let planes: Vec<Plane> = (0..video.frames()).map(|t| Plane::luma(video, t)).collect();
    let pairs: Vec<Result<Homography>> = (1..video.frames())
        .into_par_iter()
        .map(|t| {
            let params = RansacParams {
                seed: rng::mix(&[seed, t as u64]),
                ..RansacParams::default()
            };
            estimate_pair(&planes[t - 1], &planes[t], features, &params, (t - 1, t))
        })
        .collect();
    let mut out = vec![Homography::identity()];
    for pair in pairs {
        let prev = *out.last().unwrap();
        out.push(normalize(&(prev * pair?)));
    }
    Ok(out)
}

/// Focal length candidates from one homography expressed about the principal
/// point (two-view self-calibration for a rotating camera). Each returned
/// value is a squared-focal estimate that passed the sign checks.
fn focal_candidates(h: &Homography) -> (Option<f64>, Option<f64>) {
    let g = |r: usize, c: usize| h[(r, c)];
    let pick = |d1: f64, d2: f64, v1: f64, v2: f64| -> Option<f64> {
        let ok1 = v1.is_finite() && v1 > 0.0;
        let ok2 = v2.is_finite() && v2 > 0.0;
        match (ok1, ok2) {
            (true, true) => Some(if d1.abs() > d2.abs() { v1 } else { v2 }),
            (true, false) => Some(v1),
            (false, true) => Some(v2),
            _ => None,
        }
    };
    // focal of the destination view
    let d1 = g(2, 0) * g(2, 1);
    let d2 = (g(2, 1) - g(2, 0)) * (g(2, 1) + g(2, 0));
    let v1 = -(g(0, 0) * g(0, 1) + g(1, 0) * g(1, 1)) / d1;
    let v2 = (g(0, 0).powi(2) + g(1, 0).powi(2) - g(0, 1).powi(2) - g(1, 1).powi(2)) / d2;
    let f1 = pick(d1, d2, v1, v2);
    // focal of the source view
    let d1 = g(0, 0) * g(1, 0) + g(0, 1) * g(1, 1);
    let d2 = g(0, 0).powi(2) + g(0, 1).powi(2) - g(1, 0).powi(2) - g(1, 1).powi(2);
    let v1 = -g(0, 2) * g(1, 2) / d1;
    let v2 = (g(1, 2).powi(2) - g(0, 2).powi(2)) / d2;
    let f0 = pick(d1, d2, v1, v2);
    (f0, f1)
}

/// Estimates a shared focal length from inter-frame homographies (pixel
/// coordinates, principal point `pp`). Falls back to `width` when no pair is
/// informative or the estimate is implausible.
pub fn estimate_focal(pairwise: &[Homography], pp: [f64; 2], width: usize) -> f64 {
    let t = Matrix3::new(1.0, 0.0, pp[0], 0.0, 1.0, pp[1], 0.0, 0.0, 1.0);
    let t_inv = Matrix3::new(1.0, 0.0, -pp[0], 0.0, 1.0, -pp[1], 0.0, 0.0, 1.0);
    let mut estimates: Vec<f64> = pairwise
        .iter()
        .filter_map(|h| {
            let hc = t_inv * h * t;
            match focal_candidates(&hc) {
                (Some(a), Some(b)) => Some((a * b).sqrt().sqrt()),
                (Some(a), None) | (None, Some(a)) => Some(a.sqrt()),
                _ => None,
            }
        })
        .filter(|f| f.is_finite())
        .collect();
    let w = width as f64;
    if estimates.is_empty() {
        log::warn!("focal self-calibration ill-conditioned; using f = image width");
        return w;
    }
    estimates.sort_by(f64::total_cmp);
    let f = estimates[estimates.len() / 2];
    if f < 0.2 * w || f > 10.0 * w {
        log::warn!("focal estimate {f:.1} outside [0.2W, 10W]; using f = image width");
        w
    } else {
        f
    }
}

/// Recovers the pairwise homographies `H_{t-1 <- t}` from chained ones.
pub fn pairwise_from_chained(chained: &[Homography]) -> Vec<Homography> {
    chained
        .windows(2)
        .filter_map(|w| w[0].try_inverse().map(|inv| normalize(&(inv * w[1]))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn truth() -> Homography {
        Matrix3::new(1.02, 0.03, 12.0, -0.01, 0.99, -7.0, 1e-4, -5e-5, 1.0)
    }

    fn grid_points(n: usize) -> Vec<[f64; 2]> {
        let mut r = rng::keyed(&[99]);
        (0..n)
            .map(|_| [r.random_range(0.0..400.0), r.random_range(0.0..300.0)])
            .collect()
    }

    #[test]
    fn dlt_recovers_exact_homography() {
        let h = truth();
        let src = grid_points(20);
        let dst: Vec<_> = src.iter().map(|p| transfer(&h, *p)).collect();
        let est = dlt(&src, &dst).unwrap();
        for p in &src {
            let a = transfer(&h, *p);
            let b = transfer(&est, *p);
            assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn ransac_excludes_planted_outliers() {
        let h = truth();
        let mut r = rng::keyed(&[7]);
        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut is_outlier = Vec::new();
        for i in 0..200 {
            let p = [r.random_range(0.0..400.0), r.random_range(0.0..300.0)];
            src.push(p);
            if i % 10 < 3 {
                dst.push([r.random_range(0.0..400.0), r.random_range(0.0..300.0)]);
                is_outlier.push(true);
            } else {
                let q = transfer(&h, p);
                dst.push([q[0] + r.random_range(-0.2..0.2), q[1] + r.random_range(-0.2..0.2)]);
                is_outlier.push(false);
            }
        }
        let fit = ransac(&src, &dst, &RansacParams::default()).unwrap();
        assert!(fit.inliers.iter().all(|&i| !is_outlier[i]));
        assert!(fit.inliers.len() >= 130);
    }

    #[test]
    fn collinear_inliers_are_degenerate() {
        let src: Vec<_> = (0..30).map(|i| [i as f64 * 10.0, i as f64 * 5.0]).collect();
        let dst = src.clone();
        assert!(matches!(
            ransac(&src, &dst, &RansacParams::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn refinement_does_not_increase_error() {
        let h = truth();
        let src = grid_points(60);
        let mut r = rng::keyed(&[3]);
        let dst: Vec<_> = src
            .iter()
            .map(|p| {
                let q = transfer(&h, *p);
                [q[0] + r.random_range(-0.5..0.5), q[1] + r.random_range(-0.5..0.5)]
            })
            .collect();
        let init = dlt(&src, &dst).unwrap();
        let cost = |h: &Homography| {
            let mut v = Vec::new();
            symmetric_residuals(h, &src, &dst, &mut v);
            v.iter().map(|x| x * x).sum::<f64>()
        };
        let refined = refine_symmetric(&init, &src, &dst, 30);
        assert!(cost(&refined) <= cost(&init) + 1e-9);
    }

    #[test]
    fn focal_from_pure_yaw_and_pitch() {
        let f = 300.0;
        let pp = [160.0, 120.0];
        let k = Matrix3::new(f, 0.0, pp[0], 0.0, f, pp[1], 0.0, 0.0, 1.0);
        let r = nalgebra::Rotation3::from_euler_angles(0.02, 0.08, 0.0).into_inner();
        let h = k * r * k.try_inverse().unwrap();
        let est = estimate_focal(&[normalize(&h)], pp, 320);
        assert!((est - f).abs() / f < 0.01, "{est}");
    }

    #[test]
    fn focal_falls_back_on_identity() {
        assert_eq!(estimate_focal(&[Homography::identity()], [10.0, 10.0], 64), 64.0);
    }
}
