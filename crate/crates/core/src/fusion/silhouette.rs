//! Allocation-free IoU between a projected box silhouette and a fixed convex
//! target. Both polygons have at most 8 vertices, so their intersection fits
//! in 16.

use nalgebra::Matrix3;

use crate::geometry::{Intrinsics, Point2d, Vec3};

const CAP: usize = 16;

#[derive(Clone, Copy)]
pub(crate) struct Poly {
    x: [f64; CAP],
    y: [f64; CAP],
    n: usize,
}

impl Poly {
    #[inline]
    fn new() -> Self {
        Self { x: [0.0; CAP], y: [0.0; CAP], n: 0 }
    }

    #[inline]
    fn push(&mut self, x: f64, y: f64) {
        self.x[self.n] = x;
        self.y[self.n] = y;
        self.n += 1;
    }

    #[cfg(test)]
    fn pop(&mut self) {
        self.n -= 1;
    }

    #[cfg(test)]
    fn cross_last(&self, x: f64, y: f64) -> f64 {
        let (ox, oy) = (self.x[self.n - 2], self.y[self.n - 2]);
        let (ax, ay) = (self.x[self.n - 1], self.y[self.n - 1]);
        (ax - ox) * (y - oy) - (ay - oy) * (x - ox)
    }

    pub fn area(&self) -> f64 {
        if self.n < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        let mut j = self.n - 1;
        for i in 0..self.n {
            s += self.x[j] * self.y[i] - self.x[i] * self.y[j];
            j = i;
        }
        0.5 * s
    }

    fn bounds(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for i in 0..self.n {
            b[0] = b[0].min(self.x[i]);
            b[1] = b[1].min(self.y[i]);
            b[2] = b[2].max(self.x[i]);
            b[3] = b[3].max(self.y[i]);
        }
        b
    }
}

/// Monotone-chain hull of 8 points, counter-clockwise, collinear points dropped.
#[cfg(test)]
pub(crate) fn hull8(px: &[f64; 8], py: &[f64; 8]) -> Poly {
    let mut idx = [0usize, 1, 2, 3, 4, 5, 6, 7];
    for i in 1..8 {
        let mut j = i;
        while j > 0 {
            let (a, b) = (idx[j - 1], idx[j]);
            if px[a] > px[b] || (px[a] == px[b] && py[a] > py[b]) {
                idx.swap(j - 1, j);
                j -= 1;
            } else {
                break;
            }
        }
    }
    let mut out = Poly::new();
    for &i in &idx {
        while out.n >= 2 && out.cross_last(px[i], py[i]) <= 0.0 {
            out.pop();
        }
        out.push(px[i], py[i]);
    }
    let lower = out.n + 1;
    for &i in idx.iter().rev().skip(1) {
        while out.n >= lower && out.cross_last(px[i], py[i]) <= 0.0 {
            out.pop();
        }
        out.push(px[i], py[i]);
    }
    out.pop();
    out
}

const fn front_facing(axis: usize, side: usize, region: &[usize; 3]) -> bool {
    (side == 1 && region[axis] == 2) || (side == 0 && region[axis] == 0)
}

/// Whether the edge from corner `a` along `axis` separates a front face from
/// a back face.
const fn on_outline(a: usize, axis: usize, region: &[usize; 3]) -> bool {
    let (e1, e2) = ((axis + 1) % 3, (axis + 2) % 3);
    front_facing(e1, (a >> e1) & 1, region) != front_facing(e2, (a >> e2) & 1, region)
}

/// Corner cycle of the silhouette seen from region `code`; empty for the
/// box interior.
const fn outline(code: usize) -> ([u8; 6], u8) {
    let region = [code % 3, code / 3 % 3, code / 9];
    let mut out = [0u8; 6];
    let mut start = 8;
    let mut a = 0;
    while a < 8 {
        let mut d = 0;
        while d < 3 {
            if start == 8 && on_outline(a, d, &region) {
                start = a;
            }
            d += 1;
        }
        a += 1;
    }
    if start == 8 {
        return (out, 0);
    }
    let (mut prev, mut cur, mut n) = (8, start, 0);
    loop {
        out[n] = cur as u8;
        n += 1;
        let mut next = 8;
        let mut d = 0;
        while d < 3 {
            let b = cur ^ (1 << d);
            if b != prev && next == 8 && on_outline(cur, d, &region) {
                next = b;
            }
            d += 1;
        }
        prev = cur;
        cur = next;
        if cur == start {
            break;
        }
    }
    (out, n as u8)
}

const OUTLINES: [([u8; 6], u8); 27] = {
    let mut t = [([0u8; 6], 0u8); 27];
    let mut i = 0;
    while i < 27 {
        t[i] = outline(i);
        i += 1;
    }
    t
};

/// Projected silhouette of a box given in camera coordinates by its center,
/// unit axes (columns) and half extents. Corner `i` sits at sign bit
/// `i >> d & 1` along axis `d`. `None` when any corner is nearer than `z_near`.
///
/// The outline is read off a table indexed by the camera's position relative
/// to the three face slabs, so no hull is computed. Its orientation depends
/// on the region; [`Target::iou`] accepts either.
pub(crate) fn box_silhouette(center: &Vec3, axes: &Matrix3<f64>, half: &Vec3, k: &Intrinsics, z_near: f64) -> Option<Poly> {
    let a = [axes.column(0) * half.x, axes.column(1) * half.y, axes.column(2) * half.z];
    if !(center.z - a[0].z.abs() - a[1].z.abs() - a[2].z.abs() >= z_near) {
        return None;
    }
    let mut code = 0;
    let mut scale = 1;
    for d in 0..3 {
        // camera (the origin) in box coordinates
        let local = -axes.column(d).dot(center);
        code += scale * if local < -half[d] { 0 } else if local > half[d] { 2 } else { 1 };
        scale *= 3;
    }
    let (idx, n) = &OUTLINES[code];
    let mut out = Poly::new();
    for &i in &idx[..*n as usize] {
        let i = i as usize;
        let sign = |d: usize| if i >> d & 1 != 0 { 1.0 } else { -1.0 };
        let p = center + a[0] * sign(0) + a[1] * sign(1) + a[2] * sign(2);
        let uv = k.project(&p);
        out.push(uv.x, uv.y);
    }
    Some(out)
}

/// A convex counter-clockwise polygon prepared for repeated clipping.
#[derive(Clone)]
pub(crate) struct Target {
    poly: Poly,
    area: f64,
    bounds: [f64; 4],
}

impl Target {
    /// `None` for degenerate polygons or more than 8 vertices.
    pub fn new(vertices: &[Point2d]) -> Option<Self> {
        if vertices.len() < 3 || vertices.len() > 8 {
            return None;
        }
        let mut poly = Poly::new();
        for v in vertices {
            poly.push(v.x, v.y);
        }
        let area = poly.area();
        (area > 0.0).then(|| Self { bounds: poly.bounds(), poly, area })
    }

    /// Upper bound on [`iou`](Self::iou) from areas and bounding boxes alone.
    pub fn iou_bound(&self, hull: &Poly) -> f64 {
        let area_h = hull.area().abs();
        if area_h <= 0.0 {
            return 0.0;
        }
        let (b, t) = (hull.bounds(), &self.bounds);
        let w = (b[2].min(t[2]) - b[0].max(t[0])).max(0.0);
        let h = (b[3].min(t[3]) - b[1].max(t[1])).max(0.0);
        let inter = (w * h).min(area_h).min(self.area);
        inter / (area_h + self.area - inter)
    }

    /// IoU with a convex polygon of either orientation.
    pub fn iou(&self, hull: &Poly) -> f64 {
        let area_h = hull.area().abs();
        if area_h <= 0.0 {
            return 0.0;
        }
        let b = hull.bounds();
        let t = &self.bounds;
        if b[0] > t[2] || b[2] < t[0] || b[1] > t[3] || b[3] < t[1] {
            return 0.0;
        }
        let mut a = *hull;
        let mut b = Poly::new();
        let (mut cur, mut next) = (&mut a, &mut b);
        let m = self.poly.n;
        let mut e1 = m - 1;
        for e2 in 0..m {
            if cur.n == 0 {
                break;
            }
            let (c1x, c1y) = (self.poly.x[e1], self.poly.y[e1]);
            let (dx, dy) = (self.poly.x[e2] - c1x, self.poly.y[e2] - c1y);
            e1 = e2;
            let side = |x: f64, y: f64| dx * (y - c1y) - dy * (x - c1x);
            next.n = 0;
            let mut k_prev = cur.n - 1;
            let mut d_prev = side(cur.x[k_prev], cur.y[k_prev]);
            for k in 0..cur.n {
                let d = side(cur.x[k], cur.y[k]);
                if (d >= 0.0) != (d_prev >= 0.0) {
                    let s = d_prev / (d_prev - d);
                    next.push(cur.x[k_prev] + (cur.x[k] - cur.x[k_prev]) * s, cur.y[k_prev] + (cur.y[k] - cur.y[k_prev]) * s);
                }
                if d >= 0.0 {
                    next.push(cur.x[k], cur.y[k]);
                }
                k_prev = k;
                d_prev = d;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let inter = cur.area().abs().min(area_h.min(self.area));
        let union = area_h + self.area - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}
