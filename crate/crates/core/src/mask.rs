//! Binary masks stored as COCO uncompressed run-length encodings.
//!
//! Runs alternate background/foreground over pixels in column-major order
//! (pixel `(x, y)` sits at linear index `x * height + y`). The first run is
//! background and may be zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl BinaryMask {
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("mask must be non-empty, got {width}x{height}")));
        }
        let total: u64 = runs.iter().map(|&r| r as u64).sum();
        let expected = width as u64 * height as u64;
        if total != expected {
            return Err(Error::InvalidMask(format!(
                "run lengths sum to {total}, expected {width}x{height} = {expected}"
            )));
        }
        Ok(BinaryMask { width, height, runs })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self> {
        Self::from_runs(width, height, vec![width * height])
    }

    /// Rasterizes the half-open integer rectangle `[x0, x1) x [y0, y1)`.
    pub fn from_rect(width: u32, height: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x0 > x1 || y0 > y1 || x1 > width || y1 > height {
            return Err(Error::InvalidMask(format!(
                "rectangle [{x0},{y0},{x1},{y1}] outside {width}x{height}"
            )));
        }
        let mut grid = vec![false; width as usize * height as usize];
        for y in y0..y1 {
            for x in x0..x1 {
                grid[(y * width + x) as usize] = true;
            }
        }
        rle_encode(&grid, width, height)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }

    /// Foreground intervals `[start, end)` over column-major linear indices.
    pub fn foreground_spans(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.runs.iter().enumerate().filter_map(move |(k, &r)| {
            let start = pos;
            pos += r as u64;
            (k % 2 == 1 && r > 0).then_some((start, pos))
        })
    }

    /// Row-major boolean grid.
    pub fn decode(&self) -> Vec<bool> {
        let (w, h) = (self.width as u64, self.height as u64);
        let mut grid = vec![false; (w * h) as usize];
        for (start, end) in self.foreground_spans() {
            for idx in start..end {
                let (x, y) = (idx / h, idx % h);
                grid[(y * w + x) as usize] = true;
            }
        }
        grid
    }

    /// Tight box of the foreground in half-open pixel coordinates, or `None`
    /// when the mask is empty.
    pub fn tight_bbox(&self) -> Option<BoundingBox<f64>> {
        let h = self.height as u64;
        let mut acc: Option<(u64, u64, u64, u64)> = None;
        for (start, end) in self.foreground_spans() {
            let last = end - 1;
            let (xs, xe) = (start / h, last / h);
            // a span crossing a column boundary covers full columns in between
            let (ys, ye) = if xs == xe { (start % h, last % h) } else { (0, h - 1) };
            acc = Some(match acc {
                None => (xs, ys, xe, ye),
                Some((a, b, c, d)) => (a.min(xs), b.min(ys), c.max(xe), d.max(ye)),
            });
        }
        acc.map(|(x0, y0, x1, y1)| BoundingBox {
            x_min: x0 as f64,
            y_min: y0 as f64,
            x_max: (x1 + 1) as f64,
            y_max: (y1 + 1) as f64,
        })
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "mask {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn intersection_area(&self, other: &Self) -> Result<u64> {
        self.check_same_shape(other)?;
        let a: Vec<_> = self.foreground_spans().collect();
        let b: Vec<_> = other.foreground_spans().collect();
        let (mut i, mut j, mut inter) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi > lo {
                inter += hi - lo;
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(inter)
    }

    /// Pixelwise union.
    pub fn union(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let mut spans: Vec<_> = self.foreground_spans().chain(other.foreground_spans()).collect();
        spans.sort_unstable();
        Ok(Self::from_spans(self.width, self.height, &spans))
    }

    /// Builds runs from sorted, possibly overlapping foreground spans.
    fn from_spans(width: u32, height: u32, spans: &[(u64, u64)]) -> Self {
        let total = width as u64 * height as u64;
        let mut runs = Vec::new();
        let mut pos = 0u64;
        let mut merged: Vec<(u64, u64)> = Vec::new();
        for &(s, e) in spans {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        for (s, e) in merged {
            runs.push((s - pos) as u32);
            runs.push((e - s) as u32);
            pos = e;
        }
        runs.push((total - pos) as u32);
        if runs.len() > 1 && *runs.last().unwrap() == 0 {
            runs.pop();
        }
        BinaryMask { width, height, runs }
    }
}

/// Encodes a row-major boolean grid.
pub fn rle_encode(grid: &[bool], width: u32, height: u32) -> Result<BinaryMask> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!("grid must be non-empty, got {width}x{height}")));
    }
    let (w, h) = (width as usize, height as usize);
    if grid.len() != w * h {
        return Err(Error::Dimension(format!(
            "grid has {} cells, expected {width}x{height}",
            grid.len()
        )));
    }
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = grid[y * w + x];
            if v != current {
                runs.push(len);
                len = 0;
                current = v;
            }
            len += 1;
        }
    }
    runs.push(len);
    Ok(BinaryMask { width, height, runs })
}

/// Encodes a grid given as rows.
pub fn rle_encode_rows(rows: &[Vec<bool>]) -> Result<BinaryMask> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Dimension("ragged grid rows".into()));
    }
    let flat: Vec<bool> = rows.iter().flatten().copied().collect();
    rle_encode(&flat, width as u32, height as u32)
}

pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Decodes the compact string form of COCO RLE counts.
pub fn decode_compressed_counts(s: &str) -> Result<Vec<u32>> {
    let bytes = s.as_bytes();
    let mut counts: Vec<i64> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0;
        let mut more = true;
        while more {
            let c = *bytes
                .get(p)
                .ok_or_else(|| Error::InvalidMask("truncated compressed RLE".into()))?
                as i64
                - 48;
            if !(0..64).contains(&c) {
                return Err(Error::InvalidMask(format!("bad byte in compressed RLE at {p}")));
            }
            x |= (c & 0x1f) << (5 * k);
            more = c & 0x20 != 0;
            p += 1;
            k += 1;
            if !more && (c & 0x10) != 0 {
                x |= -1i64 << (5 * k);
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2];
        }
        counts.push(x);
    }
    counts
        .into_iter()
        .map(|c| {
            u32::try_from(c).map_err(|_| Error::InvalidMask(format!("negative run {c} in compressed RLE")))
        })
        .collect()
}

/// Rasterizes one polygon `[x0, y0, x1, y1, ...]` with the same boundary
/// sampling rule pycocotools uses, so ingested polygon annotations agree with
/// the reference tooling pixel for pixel.
pub fn rasterize_polygon(xy: &[f64], width: u32, height: u32) -> Result<BinaryMask> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!("image must be non-empty, got {width}x{height}")));
    }
    if xy.len() < 6 || xy.len() % 2 != 0 {
        return Err(Error::InvalidMask(format!("polygon needs >= 3 points, got {} values", xy.len())));
    }
    let (w, h) = (width as i64, height as i64);
    let scale = 5.0;
    let k = xy.len() / 2;
    let mut x: Vec<i64> = (0..k).map(|j| (scale * xy[2 * j] + 0.5) as i64).collect();
    let mut y: Vec<i64> = (0..k).map(|j| (scale * xy[2 * j + 1] + 0.5) as i64).collect();
    x.push(x[0]);
    y.push(y[0]);

    // dense boundary points on the upsampled grid
    let (mut u, mut v) = (Vec::new(), Vec::new());
    for j in 0..k {
        let (mut xs, mut xe, mut ys, mut ye) = (x[j], x[j + 1], y[j], y[j + 1]);
        let dx = (xe - xs).abs();
        let dy = (ys - ye).abs();
        let flip = (dx >= dy && xs > xe) || (dx < dy && ys > ye);
        if flip {
            std::mem::swap(&mut xs, &mut xe);
            std::mem::swap(&mut ys, &mut ye);
        }
        if dx >= dy {
            let s = if dx == 0 { 0.0 } else { (ye - ys) as f64 / dx as f64 };
            for d in 0..=dx {
                let t = if flip { dx - d } else { d };
                u.push(t + xs);
                v.push((ys as f64 + s * t as f64 + 0.5) as i64);
            }
        } else {
            let s = (xe - xs) as f64 / dy as f64;
            for d in 0..=dy {
                let t = if flip { dy - d } else { d };
                v.push(t + ys);
                u.push((xs as f64 + s * t as f64 + 0.5) as i64);
            }
        }
    }

    // y-boundary crossings, downsampled to pixel columns
    let mut boundary: Vec<u64> = Vec::new();
    for j in 1..u.len() {
        if u[j] == u[j - 1] {
            continue;
        }
        let xd = if u[j] < u[j - 1] { u[j] } else { u[j] - 1 } as f64;
        let xd = (xd + 0.5) / scale - 0.5;
        if xd.floor() != xd || xd < 0.0 || xd > (w - 1) as f64 {
            continue;
        }
        let yd = v[j].min(v[j - 1]) as f64;
        let yd = ((yd + 0.5) / scale - 0.5).clamp(0.0, h as f64).ceil();
        boundary.push((xd as i64 * h + yd as i64) as u64);
    }
    boundary.push((w * h) as u64);
    boundary.sort_unstable();

    let mut deltas = Vec::with_capacity(boundary.len());
    let mut prev = 0u64;
    for b in boundary {
        deltas.push(b - prev);
        prev = b;
    }
    let mut runs: Vec<u64> = vec![deltas[0]];
    let mut j = 1;
    while j < deltas.len() {
        if deltas[j] > 0 {
            runs.push(deltas[j]);
            j += 1;
        } else {
            j += 1;
            if j < deltas.len() {
                *runs.last_mut().unwrap() += deltas[j];
                j += 1;
            }
        }
    }
    BinaryMask::from_runs(width, height, runs.into_iter().map(|r| r as u32).collect())
}

/// Union of several polygons, as in multi-part COCO segmentations.
pub fn rasterize_polygons(polys: &[Vec<f64>], width: u32, height: u32) -> Result<BinaryMask> {
    let mut acc = BinaryMask::empty(width, height)?;
    for p in polys {
        acc = acc.union(&rasterize_polygon(p, width, height)?)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference encoder for the compact string form, used only to exercise
    /// the decoder.
    fn encode_compressed(counts: &[u32]) -> String {
        let mut out = String::new();
        for (i, &c) in counts.iter().enumerate() {
            let mut x = c as i64;
            if i > 2 {
                x -= counts[i - 2] as i64;
            }
            let mut more = true;
            while more {
                let mut ch = x & 0x1f;
                x >>= 5;
                more = if ch & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    ch |= 0x20;
                }
                out.push((ch as u8 + 48) as char);
            }
        }
        out
    }

    #[test]
    fn encode_trivial_grids() {
        assert_eq!(rle_encode(&[false; 4], 2, 2).unwrap().runs(), &[4]);
        assert_eq!(rle_encode(&[true; 4], 2, 2).unwrap().runs(), &[0, 4]);
    }

    #[test]
    fn encode_center_pixel() {
        let mut g = vec![false; 9];
        g[4] = true;
        let m = rle_encode(&g, 3, 3).unwrap();
        assert_eq!(m.runs(), &[4, 1, 4]);
        assert_eq!(m.decode(), g);
    }

    #[test]
    fn encode_is_column_major() {
        // row-major [[1, 0], [1, 0], [0, 0]] (w=2, h=3): column 0 is 1,1,0
        let g = [true, false, true, false, false, false];
        let m = rle_encode(&g, 2, 3).unwrap();
        assert_eq!(m.runs(), &[0, 2, 4]);
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(matches!(rle_encode(&[], 0, 0), Err(Error::Dimension(_))));
        assert!(rle_encode(&[true; 3], 2, 2).is_err());
    }

    #[test]
    fn run_sum_checked() {
        assert!(BinaryMask::from_runs(2, 2, vec![1, 2]).is_err());
        assert!(BinaryMask::from_runs(2, 2, vec![1, 2, 1]).is_ok());
    }

    #[test]
    fn mask_iou_cases() {
        let a = BinaryMask::from_rect(20, 20, 0, 0, 10, 10).unwrap();
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let b = BinaryMask::from_rect(20, 20, 12, 12, 20, 20).unwrap();
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
        let inner = BinaryMask::from_rect(20, 20, 2, 2, 7, 7).unwrap();
        // direct pixel count: |inner| = 25, |a| = 100, nested
        let (ga, gi) = (a.decode(), inner.decode());
        let inter = ga.iter().zip(&gi).filter(|(x, y)| **x && **y).count();
        let union = ga.iter().zip(&gi).filter(|(x, y)| **x || **y).count();
        assert_eq!((inter, union), (25, 100));
        assert_eq!(mask_iou(&inner, &a).unwrap(), 0.25);
        let empty = BinaryMask::empty(20, 20).unwrap();
        assert_eq!(mask_iou(&empty, &empty).unwrap(), 0.0);
        let other = BinaryMask::empty(10, 20).unwrap();
        assert!(matches!(mask_iou(&a, &other), Err(Error::Shape(_))));
    }

    #[test]
    fn tight_bbox_of_rects() {
        let m = BinaryMask::from_rect(30, 20, 3, 4, 11, 9).unwrap();
        let b = m.tight_bbox().unwrap();
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (3.0, 4.0, 11.0, 9.0));
        assert_eq!(m.area(), 40);
        assert!(BinaryMask::empty(4, 4).unwrap().tight_bbox().is_none());
        // foreground run spanning a column boundary
        let m = BinaryMask::from_runs(3, 3, vec![2, 2, 5]).unwrap();
        let b = m.tight_bbox().unwrap();
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (0.0, 0.0, 2.0, 3.0));
    }

    #[test]
    fn union_merges_spans() {
        let a = BinaryMask::from_rect(10, 10, 0, 0, 4, 4).unwrap();
        let b = BinaryMask::from_rect(10, 10, 2, 2, 6, 6).unwrap();
        let u = a.union(&b).unwrap();
        assert_eq!(u.area(), 16 + 16 - 4);
        let ga = a.decode();
        let gb = b.decode();
        let gu: Vec<bool> = ga.iter().zip(&gb).map(|(x, y)| *x || *y).collect();
        assert_eq!(u.decode(), gu);
    }

    #[test]
    fn compressed_counts_decode() {
        for counts in [vec![4u32], vec![0, 4], vec![4, 1, 4], vec![100, 3, 20, 7, 1000, 2, 30]] {
            let s = encode_compressed(&counts);
            assert_eq!(decode_compressed_counts(&s).unwrap(), counts, "{s}");
        }
        assert!(decode_compressed_counts("\u{7f}").is_err());
    }

    // Reference runs below were produced by pycocotools `frPyObjects` on the
    // same polygons and frozen here.
    #[test]
    fn polygon_square_matches_reference() {
        let poly = vec![2.0, 2.0, 8.0, 2.0, 8.0, 8.0, 2.0, 8.0];
        let m = rasterize_polygon(&poly, 12, 12).unwrap();
        assert_eq!(m.runs(), &[26, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 6, 52]);
        assert_eq!(m.area(), 36);
    }

    #[test]
    fn polygon_triangle_matches_reference() {
        let poly = vec![0.0, 0.0, 40.0, 0.0, 0.0, 40.0];
        let m = rasterize_polygon(&poly, 50, 50).unwrap();
        assert_eq!(m.area(), 780);
        assert_eq!(&m.runs()[..6], &[0, 39, 11, 38, 12, 37]);
        assert_eq!(*m.runs().last().unwrap(), 599);
    }

    #[test]
    fn polygon_irregular_matches_reference() {
        let poly = vec![1.3, 0.7, 9.6, 2.2, 7.1, 8.8, 0.4, 6.5];
        let m = rasterize_polygon(&poly, 12, 11).unwrap();
        assert_eq!(m.runs(), &[6, 1, 5, 6, 5, 6, 5, 7, 4, 7, 4, 7, 5, 7, 4, 6, 5, 3, 39]);
    }

    #[test]
    fn compressed_reference_string() {
        // 5x7 (h x w) grid: pixel (0,0) plus rows 1..4, cols 2..6
        let runs = decode_compressed_counts("01:2H000004").unwrap();
        let m = BinaryMask::from_runs(7, 5, runs).unwrap();
        let g = m.decode();
        for y in 0..5 {
            for x in 0..7 {
                let want = (x == 0 && y == 0) || ((1..4).contains(&y) && (2..6).contains(&x));
                assert_eq!(g[y * 7 + x], want, "pixel ({x},{y})");
            }
        }
    }
}
