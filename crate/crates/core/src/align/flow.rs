//! Grid-based Lucas-Kanade optical flow.
//!
//! Displacements are solved at grid nodes over masked windows, coarse to
//! fine over an image pyramid, and bilinearly interpolated in between. The
//! convention is `dst(p + flow(p)) ~ src(p)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::registration::Plane;
use crate::video::sample_plane;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    /// Node spacing in pixels.
    pub grid: usize,
    pub octaves: usize,
    pub iterations: usize,
    /// Largest displacement magnitude in pixels.
    pub max_displacement: f32,
    /// Minimum fraction of valid pixels in a node window.
    pub min_support: f32,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            grid: 16,
            octaves: 3,
            iterations: 10,
            max_displacement: 8.0,
            min_support: 0.25,
        }
    }
}

/// Displacements on a regular grid with nodes at multiples of `spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFlowField {
    pub spacing: usize,
    pub nodes_w: usize,
    pub nodes_h: usize,
    pub width: usize,
    pub height: usize,
    pub nodes: Vec<[f32; 2]>,
}

impl GridFlowField {
    pub fn zeros(width: usize, height: usize, spacing: usize) -> Self {
        let nodes_w = (width - 1) / spacing + 2;
        let nodes_h = (height - 1) / spacing + 2;
        GridFlowField {
            spacing,
            nodes_w,
            nodes_h,
            width,
            height,
            nodes: vec![[0.0; 2]; nodes_w * nodes_h],
        }
    }

    pub fn node(&self, i: usize, j: usize) -> [f32; 2] {
        self.nodes[j * self.nodes_w + i]
    }

    /// Bilinearly interpolated displacement at pixel `(x, y)`.
    pub fn at(&self, x: f32, y: f32) -> [f32; 2] {
        let g = self.spacing as f32;
        let fx = (x / g).clamp(0.0, (self.nodes_w - 1) as f32);
        let fy = (y / g).clamp(0.0, (self.nodes_h - 1) as f32);
        let (i0, j0) = (fx.floor() as usize, fy.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(self.nodes_w - 1), (j0 + 1).min(self.nodes_h - 1));
        let (ax, ay) = (fx - i0 as f32, fy - j0 as f32);
        let mut out = [0.0; 2];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.node(i0, j0)[c] * (1.0 - ax) + self.node(i1, j0)[c] * ax;
            let bot = self.node(i0, j1)[c] * (1.0 - ax) + self.node(i1, j1)[c] * ax;
            *o = top * (1.0 - ay) + bot * ay;
        }
        out
    }

    /// Dense per-pixel flow, row-major.
    pub fn dense(&self) -> Vec<[f32; 2]> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .map(|(x, y)| self.at(x as f32, y as f32))
            .collect()
    }
}

struct Octave {
    src: Plane,
    dst: Plane,
    gx: Vec<f32>,
    gy: Vec<f32>,
    valid: Vec<bool>,
}

fn half(p: &Plane) -> Plane {
    let (w, h) = (p.width.div_ceil(2), p.height.div_ceil(2));
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            let mut n = 0.0;
            for yy in 2 * y..(2 * y + 2).min(p.height) {
                for xx in 2 * x..(2 * x + 2).min(p.width) {
                    s += p.at(xx, yy);
                    n += 1.0;
                }
            }
            data[y * w + x] = s / n;
        }
    }
    Plane {
        width: w,
        height: h,
        data,
    }
}

fn half_mask(m: &[bool], w: usize, h: usize) -> Vec<bool> {
    let (w2, h2) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = vec![false; w2 * h2];
    for y in 0..h2 {
        for x in 0..w2 {
            out[y * w2 + x] = (2 * y..(2 * y + 2).min(h)).all(|yy| (2 * x..(2 * x + 2).min(w)).all(|xx| m[yy * w + xx]));
        }
    }
    out
}

fn gradients(p: &Plane) -> (Vec<f32>, Vec<f32>) {
    let (w, h) = (p.width, p.height);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            gx[y * w + x] = (p.at(xr, y) - p.at(xl, y)) / (xr - xl).max(1) as f32;
            gy[y * w + x] = (p.at(x, yd) - p.at(x, yu)) / (yd - yu).max(1) as f32;
        }
    }
    (gx, gy)
}

/// Solves one node at octave resolution starting from `d`.
fn solve_node(o: &Octave, cx: f32, cy: f32, radius: isize, mut d: [f32; 2], cap: f32, params: &FlowParams) -> Option<[f32; 2]> {
    let (w, h) = (o.src.width as isize, o.src.height as isize);
    let (cxi, cyi) = (cx.round() as isize, cy.round() as isize);
    let mut total = 0usize;
    let mut valid = 0usize;
    for y in cyi - radius..=cyi + radius {
        for x in cxi - radius..=cxi + radius {
            if x >= 0 && y >= 0 && x < w && y < h {
                total += 1;
                valid += o.valid[(y * w + x) as usize] as usize;
            }
        }
    }
    if total == 0 || (valid as f32) < params.min_support * total as f32 {
        return None;
    }
    let (wf, hf) = (o.dst.width as f32, o.dst.height as f32);
    for _ in 0..params.iterations {
        let (mut a11, mut a12, mut a22, mut b1, mut b2, mut n) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0usize);
        for y in (cyi - radius).max(0)..=(cyi + radius).min(h - 1) {
            for x in (cxi - radius).max(0)..=(cxi + radius).min(w - 1) {
                let i = (y * w + x) as usize;
                if !o.valid[i] {
                    continue;
                }
                let (qx, qy) = (x as f32 + d[0], y as f32 + d[1]);
                if qx < 0.0 || qy < 0.0 || qx > wf - 1.0 || qy > hf - 1.0 {
                    continue;
                }
                let gx = sample_plane(&o.gx, o.dst.width, o.dst.height, qx, qy) as f64;
                let gy = sample_plane(&o.gy, o.dst.width, o.dst.height, qx, qy) as f64;
                let e = (sample_plane(&o.dst.data, o.dst.width, o.dst.height, qx, qy) - o.src.data[i]) as f64;
                a11 += gx * gx;
                a12 += gx * gy;
                a22 += gy * gy;
                b1 += gx * e;
                b2 += gy * e;
                n += 1;
            }
        }
        if n == 0 {
            break;
        }
        let det = a11 * a22 - a12 * a12;
        let tr = a11 + a22;
        let lambda_min = tr / 2.0 - ((tr * tr / 4.0 - det).max(0.0)).sqrt();
        if lambda_min / (n as f64) < 1e-8 {
            break;
        }
        let dx = -(a22 * b1 - a12 * b2) / det;
        let dy = -(a11 * b2 - a12 * b1) / det;
        d[0] += dx as f32;
        d[1] += dy as f32;
        let m = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if m > cap {
            d = [d[0] * cap / m, d[1] * cap / m];
        }
        if dx.abs() < 1e-4 && dy.abs() < 1e-4 {
            break;
        }
    }
    Some(d)
}

/// Unsupported nodes take the mean of supported neighbors, spreading outward;
/// if nothing is supported the field stays zero.
fn fill_unsupported(field: &mut GridFlowField, supported: &mut [bool]) {
    if !supported.iter().any(|&s| s) {
        return;
    }
    let (nw, nh) = (field.nodes_w, field.nodes_h);
    while supported.iter().any(|&s| !s) {
        let snapshot = supported.to_vec();
        let prev = field.nodes.clone();
        for j in 0..nh {
            for i in 0..nw {
                let k = j * nw + i;
                if snapshot[k] {
                    continue;
                }
                let mut acc = [0.0f32; 2];
                let mut n = 0;
                for (di, dj) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1), (-1, 1), (1, -1)] {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    if ii < 0 || jj < 0 || ii >= nw as isize || jj >= nh as isize {
                        continue;
                    }
                    let kk = jj as usize * nw + ii as usize;
                    if snapshot[kk] {
                        acc[0] += prev[kk][0];
                        acc[1] += prev[kk][1];
                        n += 1;
                    }
                }
                if n > 0 {
                    field.nodes[k] = [acc[0] / n as f32, acc[1] / n as f32];
                    supported[k] = true;
                }
            }
        }
    }
}

/// Flow from `src` to `dst` using the pixels of `src` marked in `valid`.
pub fn estimate_grid_flow(src: &Plane, dst: &Plane, valid: Option<&[bool]>, params: &FlowParams) -> GridFlowField {
    assert_eq!((src.width, src.height), (dst.width, dst.height));
    let mut field = GridFlowField::zeros(src.width, src.height, params.grid.max(1));
    let mut octaves = Vec::new();
    let mut s = src.clone();
    let mut d = dst.clone();
    let mut m = valid.map(<[bool]>::to_vec).unwrap_or_else(|| vec![true; src.data.len()]);
    for o in 0..params.octaves.max(1) {
        let (gx, gy) = gradients(&d);
        let next = (o + 1 < params.octaves && s.width >= 16 && s.height >= 16).then(|| (half(&s), half(&d), half_mask(&m, s.width, s.height)));
        octaves.push(Octave {
            src: s.clone(),
            dst: d.clone(),
            gx,
            gy,
            valid: m.clone(),
        });
        match next {
            Some((a, b, c)) => {
                s = a;
                d = b;
                m = c;
            }
            None => break,
        }
    }
    let radius = (params.grid / 2).max(4) as isize;
    let mut supported = vec![false; field.nodes.len()];
    for (level, o) in octaves.iter().enumerate().rev() {
        let scale = (1u32 << level) as f32;
        let nw = field.nodes_w;
        let prior = field.nodes.clone();
        let solved: Vec<Option<[f32; 2]>> = (0..field.nodes.len())
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % nw, k / nw);
                let cx = ((i * field.spacing) as f32).min((src.width - 1) as f32) / scale;
                let cy = ((j * field.spacing) as f32).min((src.height - 1) as f32) / scale;
                let d0 = [prior[k][0] / scale, prior[k][1] / scale];
                solve_node(o, cx, cy, radius, d0, params.max_displacement / scale, params)
            })
            .collect();
        for (k, r) in solved.into_iter().enumerate() {
            supported[k] = r.is_some();
            if let Some(d) = r {
                field.nodes[k] = [d[0] * scale, d[1] * scale];
            }
        }
    }
    fill_unsupported(&mut field, &mut supported);
    field
}

/// Per-pixel flow: each pixel picks, among the displacements of nearby nodes
/// and its interpolated value, the one with the smallest 3x3 matching error.
/// Keeps motion boundaries sharp where the interpolated grid would blur them.
pub fn dense_flow(src: &Plane, dst: &Plane, valid: Option<&[bool]>, field: &GridFlowField) -> Vec<[f32; 2]> {
    let (w, h) = (src.width, src.height);
    let g = field.spacing;
    // squared residual at one pixel, NaN where the pixel does not count
    let residual = |xx: usize, yy: usize, d: [f32; 2]| -> f32 {
        if valid.is_some_and(|v| !v[yy * w + xx]) {
            return f32::NAN;
        }
        let (qx, qy) = (xx as f32 + d[0], yy as f32 + d[1]);
        if qx < 0.0 || qy < 0.0 || qx > (w - 1) as f32 || qy > (h - 1) as f32 {
            return f32::NAN;
        }
        let r = sample_plane(&dst.data, w, h, qx, qy) - src.at(xx, yy);
        r * r
    };
    // mean over the 3x3 neighborhood, visiting rows then columns
    let cost = |x: usize, y: usize, r: &dyn Fn(usize, usize) -> f32| -> f32 {
        let mut e = 0.0;
        let mut n = 0;
        for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                let v = r(xx, yy);
                if !v.is_nan() {
                    e += v;
                    n += 1;
                }
            }
        }
        if n == 0 {
            f32::INFINITY
        } else {
            e / n as f32
        }
    };
    let mut out = vec![[0.0f32; 2]; w * h];
    // node candidates are shared by a whole grid cell, so their residuals
    // are tabulated once per cell (plus a one-pixel border)
    out.par_chunks_mut(w * g).enumerate().for_each(|(cj, rows)| {
        let (y0, y1) = (cj * g, ((cj + 1) * g).min(h));
        let (by0, by1) = (y0.saturating_sub(1), (y1 + 1).min(h));
        let mut tables: Vec<([f32; 2], Vec<f32>)> = Vec::with_capacity(16);
        for ci in 0..w.div_ceil(g) {
            let (x0, x1) = (ci * g, ((ci + 1) * g).min(w));
            let (bx0, bx1) = (x0.saturating_sub(1), (x1 + 1).min(w));
            let bw = bx1 - bx0;
            tables.clear();
            let (i0, j0) = (ci as isize, cj as isize);
            for j in j0 - 1..=j0 + 2 {
                for i in i0 - 1..=i0 + 2 {
                    if i < 0 || j < 0 || i >= field.nodes_w as isize || j >= field.nodes_h as isize {
                        continue;
                    }
                    let d = field.node(i as usize, j as usize);
                    let mut t = Vec::with_capacity(bw * (by1 - by0));
                    for yy in by0..by1 {
                        for xx in bx0..bx1 {
                            t.push(residual(xx, yy, d));
                        }
                    }
                    tables.push((d, t));
                }
            }
            for y in y0..y1 {
                for x in x0..x1 {
                    let base = field.at(x as f32, y as f32);
                    let mut best = (cost(x, y, &|xx, yy| residual(xx, yy, base)), base);
                    for (d, t) in &tables {
                        let c = cost(x, y, &|xx, yy| t[(yy - by0) * bw + xx - bx0]);
                        if c < best.0 {
                            best = (c, *d);
                        }
                    }
                    rows[(y - y0) * w + x] = best.1;
                }
            }
        }
    });
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Smooth band-limited texture evaluated analytically.
    pub(crate) fn texture(x: f32, y: f32) -> f32 {
        0.5 + 0.15 * (0.31 * x + 0.17 * y).sin()
            + 0.12 * (0.23 * y - 0.11 * x + 1.0).sin()
            + 0.1 * (0.41 * x + 0.37 * y + 2.0).cos()
            + 0.08 * (0.07 * x * 1.3 - 0.19 * y).cos()
    }

    fn plane(w: usize, h: usize, f: impl Fn(f32, f32) -> f32) -> Plane {
        Plane {
            width: w,
            height: h,
            data: (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x as f32, y as f32)).collect(),
        }
    }

    #[test]
    fn identical_frames_zero_flow() {
        let a = plane(96, 64, texture);
        let f = estimate_grid_flow(&a, &a, None, &FlowParams::default());
        assert!(f.nodes.iter().all(|&d| d == [0.0, 0.0]));
    }

    #[test]
    fn global_shift_recovered() {
        let a = plane(128, 96, texture);
        let b = plane(128, 96, |x, y| texture(x - 2.0, y - 3.0));
        let f = estimate_grid_flow(&a, &b, None, &FlowParams::default());
        for j in 1..f.nodes_h - 2 {
            for i in 1..f.nodes_w - 2 {
                let d = f.node(i, j);
                assert!((d[0] - 2.0).abs() < 0.1 && (d[1] - 3.0).abs() < 0.1, "node {i},{j}: {d:?}");
            }
        }
    }

    #[test]
    fn textureless_is_zero() {
        let a = plane(64, 64, |_, _| 0.4);
        let f = estimate_grid_flow(&a, &a.clone(), None, &FlowParams::default());
        assert!(f.nodes.iter().all(|&d| d == [0.0, 0.0]));
    }

    #[test]
    fn unsupported_nodes_inherit() {
        let a = plane(96, 64, texture);
        let b = plane(96, 64, |x, y| texture(x - 1.0, y));
        let valid: Vec<bool> = (0..64 * 96).map(|i| i % 96 < 48).collect();
        let f = estimate_grid_flow(&a, &b, Some(&valid), &FlowParams::default());
        let right = f.node(f.nodes_w - 1, 2);
        assert!((right[0] - 1.0).abs() < 0.2, "{right:?}");
    }

    #[test]
    fn dense_flow_keeps_boundaries() {
        let a = plane(96, 64, texture);
        let b = plane(96, 64, |x, y| if x >= 48.0 { texture(x - 1.0, y) } else { texture(x, y) });
        let f = estimate_grid_flow(&a, &b, None, &FlowParams::default());
        let d = dense_flow(&a, &b, None, &f);
        for y in 0..64 {
            for x in 0..96 {
                let m = (d[y * 96 + x][0].powi(2) + d[y * 96 + x][1].powi(2)).sqrt();
                if x + 2 <= 47 {
                    assert!(m <= 0.2, "static ({x},{y}) {m}");
                } else if x >= 50 {
                    assert!(m > 0.2, "moving ({x},{y}) {m}");
                }
            }
        }
    }

    /// Direct per-pixel candidate search.
    fn dense_reference(src: &Plane, dst: &Plane, valid: Option<&[bool]>, field: &GridFlowField) -> Vec<[f32; 2]> {
        let (w, h) = (src.width, src.height);
        let cost = |x: usize, y: usize, d: [f32; 2]| -> f32 {
            let (mut e, mut n) = (0.0, 0);
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if valid.is_some_and(|v| !v[yy * w + xx]) {
                        continue;
                    }
                    let (qx, qy) = (xx as f32 + d[0], yy as f32 + d[1]);
                    if qx < 0.0 || qy < 0.0 || qx > (w - 1) as f32 || qy > (h - 1) as f32 {
                        continue;
                    }
                    let r = sample_plane(&dst.data, w, h, qx, qy) - src.at(xx, yy);
                    e += r * r;
                    n += 1;
                }
            }
            if n == 0 {
                f32::INFINITY
            } else {
                e / n as f32
            }
        };
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let base = field.at(x as f32, y as f32);
                let mut best = (cost(x, y, base), base);
                let (i0, j0) = ((x / field.spacing) as isize, (y / field.spacing) as isize);
                for j in j0 - 1..=j0 + 2 {
                    for i in i0 - 1..=i0 + 2 {
                        if i < 0 || j < 0 || i >= field.nodes_w as isize || j >= field.nodes_h as isize {
                            continue;
                        }
                        let d = field.node(i as usize, j as usize);
                        let c = cost(x, y, d);
                        if c < best.0 {
                            best = (c, d);
                        }
                    }
                }
                out.push(best.1);
            }
        }
        out
    }

    #[test]
    fn dense_flow_matches_direct_search() {
        let a = plane(83, 45, texture);
        let b = plane(83, 45, |x, y| if x + y > 60.0 { texture(x - 2.3, y + 0.7) } else { texture(x + 0.4, y) });
        let valid: Vec<bool> = (0..45 * 83).map(|i| (i * 7919) % 11 != 0 && i % 83 > 3).collect();
        let mut field = estimate_grid_flow(&a, &b, Some(&valid), &FlowParams { grid: 8, ..FlowParams::default() });
        // make neighboring candidates distinct
        for (k, n) in field.nodes.iter_mut().enumerate() {
            n[0] += (k % 5) as f32 * 0.3 - 0.6;
        }
        assert_eq!(dense_flow(&a, &b, Some(&valid), &field), dense_reference(&a, &b, Some(&valid), &field));
        assert_eq!(dense_flow(&a, &b, None, &field), dense_reference(&a, &b, None, &field));
    }
}
