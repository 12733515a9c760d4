//! Harris corners and normalized cross-correlation patch matching.

use crate::video::Video;

pub const PATCH_RADIUS: usize = 5;
const PATCH_SIDE: usize = 2 * PATCH_RADIUS + 1;

#[derive(Debug, Clone, Copy)]
pub struct FeatureParams {
    pub max_corners: usize,
    pub harris_k: f32,
    /// Corners weaker than this fraction of the strongest response are dropped.
    pub quality: f32,
    pub nms_radius: usize,
    pub min_ncc: f32,
    /// Lowe-style ratio on `1 - ncc` distances.
    pub ratio: f32,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            max_corners: 500,
            harris_k: 0.04,
            quality: 0.01,
            nms_radius: 3,
            min_ncc: 0.75,
            ratio: 0.85,
        }
    }
}

/// A luma plane with its geometry.
#[derive(Debug, Clone)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn luma(video: &Video, t: usize) -> Plane {
        Plane {
            width: video.width(),
            height: video.height(),
            data: video.luma(t),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: usize,
    pub y: usize,
    pub response: f32,
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as i32;
    let mut k: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable convolution with clamped borders.
pub fn blur(data: &[f32], width: usize, height: usize, kernel: &[f32]) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f32; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                let xx = (x as isize + i as isize - r).clamp(0, width as isize - 1) as usize;
                acc += k * data[y * width + xx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0f32; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                let yy = (y as isize + i as isize - r).clamp(0, height as isize - 1) as usize;
                acc += k * tmp[yy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Harris response map (Sobel gradients, Gaussian-weighted structure tensor).
pub fn harris_response(plane: &Plane, k: f32) -> Vec<f32> {
    let (w, h) = (plane.width, plane.height);
    let mut ixx = vec![0.0f32; w * h];
    let mut iyy = vec![0.0f32; w * h];
    let mut ixy = vec![0.0f32; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let p = |dx: isize, dy: isize| {
                plane.at((x as isize + dx) as usize, (y as isize + dy) as usize)
            };
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1))
                / 8.0;
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1))
                / 8.0;
            let i = y * w + x;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let kern = gaussian_kernel(1.5);
    let sxx = blur(&ixx, w, h, &kern);
    let syy = blur(&iyy, w, h, &kern);
    let sxy = blur(&ixy, w, h, &kern);
    (0..w * h)
        .map(|i| {
            let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
            let tr = sxx[i] + syy[i];
            det - k * tr * tr
        })
        .collect()
}

/// Strongest non-maximum-suppressed Harris corners, far enough from the
/// border for a full patch plus one pixel of refinement slack.
pub fn detect_corners(plane: &Plane, params: &FeatureParams) -> Vec<Corner> {
    let (w, h) = (plane.width, plane.height);
    let border = PATCH_RADIUS + 2;
    if w <= 2 * border || h <= 2 * border {
        return Vec::new();
    }
    let resp = harris_response(plane, params.harris_k);
    let max = resp.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let floor = params.quality * max;
    let r = params.nms_radius as isize;
    let mut corners = Vec::new();
    for y in border..h - border {
        'px: for x in border..w - border {
            let v = resp[y * w + x];
            if v <= floor {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let o = resp[yy * w + xx];
                    // ties resolve toward the earlier pixel in raster order
                    if o > v || (o == v && (yy, xx) < (y, x)) {
                        continue 'px;
                    }
                }
            }
            corners.push(Corner { x, y, response: v });
        }
    }
    corners.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then((a.y, a.x).cmp(&(b.y, b.x)))
    });
    corners.truncate(params.max_corners);
    corners
}

/// Zero-mean unit-norm patch centered on pixel `(x, y)`, or `None` when the
/// patch is flat.
pub fn descriptor(plane: &Plane, x: usize, y: usize) -> Option<[f32; PATCH_SIDE * PATCH_SIDE]> {
    let mut d = [0.0f32; PATCH_SIDE * PATCH_SIDE];
    let mut mean = 0.0f32;
    for j in 0..PATCH_SIDE {
        for i in 0..PATCH_SIDE {
            let v = plane.at(x + i - PATCH_RADIUS, y + j - PATCH_RADIUS);
            d[j * PATCH_SIDE + i] = v;
            mean += v;
        }
    }
    mean /= d.len() as f32;
    let mut norm = 0.0f32;
    for v in d.iter_mut() {
        *v -= mean;
        norm += *v * *v;
    }
    if norm < 1e-10 {
        return None;
    }
    let inv = norm.sqrt().recip();
    d.iter_mut().for_each(|v| *v *= inv);
    Some(d)
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A point correspondence in continuous pixel coordinates (pixel centers at
/// `i + 0.5`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub score: f32,
}

fn ncc_at(a_desc: &[f32], plane: &Plane, x: isize, y: isize) -> Option<f32> {
    let r = PATCH_RADIUS as isize;
    if x < r || y < r || x + r >= plane.width as isize || y + r >= plane.height as isize {
        return None;
    }
    descriptor(plane, x as usize, y as usize).map(|d| dot(a_desc, &d))
}

/// Hill-climbs the NCC surface around `(x, y)` in `b` to the best integer
/// location.
fn refine(a_desc: &[f32], b: &Plane, x: usize, y: usize) -> Option<([f64; 2], f32)> {
    let (mut cx, mut cy) = (x as isize, y as isize);
    let mut best = ncc_at(a_desc, b, cx, cy)?;
    for _ in 0..4 {
        let mut moved = false;
        for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            if let Some(v) = ncc_at(a_desc, b, cx + dx, cy + dy) {
                if v > best {
                    best = v;
                    cx += dx;
                    cy += dy;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    Some(([cx as f64 + 0.5, cy as f64 + 0.5], best))
}

/// Inverse-compositional Lucas-Kanade refinement of a translation: finds `d`
/// such that the patch of `b` around `pb + d` matches the patch of `a` around
/// integer pixel `(ax, ay)`. Patches are mean-subtracted so a brightness
/// offset does not bias the result.
fn refine_lk(a: &Plane, ax: usize, ay: usize, b: &Plane, pb: [f64; 2]) -> Option<[f64; 2]> {
    let r = PATCH_RADIUS as isize;
    let n = (2 * r + 1) as usize;
    let mut ta = Vec::with_capacity(n * n);
    let mut gx = Vec::with_capacity(n * n);
    let mut gy = Vec::with_capacity(n * n);
    for j in -r..=r {
        for i in -r..=r {
            let (x, y) = ((ax as isize + i) as usize, (ay as isize + j) as usize);
            ta.push(a.at(x, y));
            gx.push(0.5 * (a.at(x + 1, y) - a.at(x - 1, y)));
            gy.push(0.5 * (a.at(x, y + 1) - a.at(x, y - 1)));
        }
    }
    let mean_a = ta.iter().sum::<f32>() / ta.len() as f32;
    let (mut hxx, mut hxy, mut hyy) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..ta.len() {
        hxx += (gx[k] * gx[k]) as f64;
        hxy += (gx[k] * gy[k]) as f64;
        hyy += (gy[k] * gy[k]) as f64;
    }
    let det = hxx * hyy - hxy * hxy;
    if det.abs() < 1e-12 {
        return None;
    }
    // pixel index of the patch center in b, continuous coords minus 0.5
    let (mut bx, mut by) = (pb[0] - 0.5, pb[1] - 0.5);
    let mut tb = vec![0.0f32; ta.len()];
    for _ in 0..10 {
        let mut k = 0;
        for j in -r..=r {
            for i in -r..=r {
                tb[k] = crate::video::sample_plane(
                    &b.data,
                    b.width,
                    b.height,
                    (bx + i as f64) as f32,
                    (by + j as f64) as f32,
                );
                k += 1;
            }
        }
        let mean_b = tb.iter().sum::<f32>() / tb.len() as f32;
        let (mut ex, mut ey) = (0.0f64, 0.0f64);
        for k in 0..ta.len() {
            let e = ((tb[k] - mean_b) - (ta[k] - mean_a)) as f64;
            ex += gx[k] as f64 * e;
            ey += gy[k] as f64 * e;
        }
        let dx = (hyy * ex - hxy * ey) / det;
        let dy = (hxx * ey - hxy * ex) / det;
        bx -= dx;
        by -= dy;
        if (bx + 0.5 - pb[0]).abs() > 1.0 || (by + 0.5 - pb[1]).abs() > 1.0 {
            return None;
        }
        if dx * dx + dy * dy < 1e-8 {
            break;
        }
    }
    Some([bx + 0.5, by + 0.5])
}

/// Mutual-best NCC matches between two planes with a ratio test, refined to
/// sub-pixel accuracy in `b`.
pub fn match_planes(a: &Plane, b: &Plane, params: &FeatureParams) -> Vec<Match> {
    let ca = detect_corners(a, params);
    let cb = detect_corners(b, params);
    let da: Vec<_> = ca
        .iter()
        .filter_map(|c| descriptor(a, c.x, c.y).map(|d| (*c, d)))
        .collect();
    let db: Vec<_> = cb
        .iter()
        .filter_map(|c| descriptor(b, c.x, c.y).map(|d| (*c, d)))
        .collect();
    if da.is_empty() || db.is_empty() {
        return Vec::new();
    }
    let scores: Vec<Vec<f32>> = da
        .iter()
        .map(|(_, d)| db.iter().map(|(_, e)| dot(d, e)).collect())
        .collect();
    let best_in_a: Vec<usize> = (0..db.len())
        .map(|j| {
            (0..da.len())
                .max_by(|&p, &q| scores[p][j].total_cmp(&scores[q][j]).then(q.cmp(&p)))
                .unwrap()
        })
        .collect();
    let mut out = Vec::new();
    for (i, row) in scores.iter().enumerate() {
        let mut best = (usize::MAX, f32::NEG_INFINITY);
        let mut second = f32::NEG_INFINITY;
        for (j, &s) in row.iter().enumerate() {
            if s > best.1 {
                second = best.1;
                best = (j, s);
            } else if s > second {
                second = s;
            }
        }
        let (j, s) = best;
        if s < params.min_ncc || best_in_a[j] != i {
            continue;
        }
        if second.is_finite() && (1.0 - s) > params.ratio * (1.0 - second) {
            continue;
        }
        let (corner_a, desc_a) = &da[i];
        let corner_b = db[j].0;
        let Some((pb, score)) = refine(desc_a, b, corner_b.x, corner_b.y) else {
            continue;
        };
        if let Some(pb) = refine_lk(a, corner_a.x, corner_a.y, b, pb) {
            out.push(Match {
                a: [corner_a.x as f64 + 0.5, corner_a.y as f64 + 0.5],
                b: pb,
                score,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smoothed random texture sampled with a sub-pixel shift.
    fn texture(w: usize, h: usize, shift: (f32, f32)) -> Plane {
        use rand::Rng;
        let (bw, bh) = (w + 40, h + 40);
        let mut r = crate::rng::keyed(&[11]);
        let noise: Vec<f32> = (0..bw * bh).map(|_| r.random()).collect();
        let smooth = blur(&noise, bw, bh, &gaussian_kernel(2.0));
        let data = (0..w * h)
            .map(|i| {
                let x = (i % w) as f32 + 20.0 - shift.0;
                let y = (i / w) as f32 + 20.0 - shift.1;
                crate::video::sample_plane(&smooth, bw, bh, x, y)
            })
            .collect();
        Plane {
            width: w,
            height: h,
            data,
        }
    }

    #[test]
    fn flat_plane_has_no_corners() {
        let p = Plane {
            width: 64,
            height: 64,
            data: vec![0.3; 64 * 64],
        };
        assert!(detect_corners(&p, &FeatureParams::default()).is_empty());
    }

    #[test]
    fn integer_shift_matches_are_exact() {
        let a = texture(96, 80, (0.0, 0.0));
        let b = texture(96, 80, (3.0, -2.0));
        let m = match_planes(&a, &b, &FeatureParams::default());
        assert!(m.len() > 20, "only {} matches", m.len());
        let good = m
            .iter()
            .filter(|m| (m.b[0] - m.a[0] - 3.0).abs() < 0.05 && (m.b[1] - m.a[1] + 2.0).abs() < 0.05)
            .count();
        assert!(good * 10 >= m.len() * 9, "{good}/{}", m.len());
    }

    #[test]
    fn subpixel_shift_is_refined() {
        let a = texture(96, 80, (0.0, 0.0));
        let b = texture(96, 80, (1.3, 0.6));
        let m = match_planes(&a, &b, &FeatureParams::default());
        let ex: f64 = m.iter().map(|m| m.b[0] - m.a[0]).sum::<f64>() / m.len() as f64;
        let ey: f64 = m.iter().map(|m| m.b[1] - m.a[1]).sum::<f64>() / m.len() as f64;
        assert!((ex - 1.3).abs() < 0.15 && (ey - 0.6).abs() < 0.15, "{ex} {ey}");
    }
}
