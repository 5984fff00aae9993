//! Symmetric Hausdorff distance between mask boundaries, via an exact
//! Euclidean distance transform.

use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{Error, Result};

/// Physical pixel size along rows and columns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub row: f64,
    pub col: f64,
}

impl Default for Spacing {
    fn default() -> Self {
        Self { row: 1.0, col: 1.0 }
    }
}

impl Spacing {
    pub fn is_unit(&self) -> bool {
        self.row == 1.0 && self.col == 1.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { row: self.row * s, col: self.col * s }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HdStatistic {
    /// Largest nearest-neighbour distance.
    #[default]
    Max,
    /// 95th percentile of the nearest-neighbour distances in each direction.
    Percentile95,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HdFlag {
    Normal,
    /// Neither mask has foreground; the distance is 0.
    BothEmpty,
    /// Exactly one mask is empty; the distance is the image diagonal.
    OneEmpty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdResult {
    pub distance: f64,
    pub flag: HdFlag,
}

/// Foreground pixels with at least one background or out-of-image pixel among
/// their eight neighbours.
pub fn boundary_points(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let fg = |r: isize, c: isize| r >= 0 && c >= 0 && r < h && c < w && mask.get(r as usize, c as usize);
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !fg(r, c) {
                continue;
            }
            let edge = (-1..=1).any(|dr| (-1..=1).any(|dc| (dr, dc) != (0, 0) && !fg(r + dr, c + dc)));
            if edge {
                out.push((r as usize, c as usize));
            }
        }
    }
    out
}

/// Exact 1-d squared distance transform (lower envelope of parabolas) with
/// sample spacing `step`. Entries of `f` that are infinite mark empty sites.
fn edt_1d(f: &[f64], step: f64, out: &mut [f64]) {
    let n = f.len();
    let w2 = step * step;
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let cross = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + w2 * qf * qf) - (f[p] + w2 * pf * pf)) / (2.0 * w2 * (qf - pf))
    };
    for &q in &sites {
        while let Some(&p) = v.last() {
            if cross(q, p) <= z[v.len() - 1] {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        z.push(if v.is_empty() { f64::NEG_INFINITY } else { cross(q, *v.last().unwrap()) });
        v.push(q);
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < p as f64 {
            k += 1;
        }
        // neighbouring parabolas can tie; take the smaller value explicitly
        let eval = |j: usize| {
            let d = (p as f64 - v[j] as f64) * step;
            d * d + f[v[j]]
        };
        let mut best = eval(k);
        if k + 1 < v.len() {
            best = best.min(eval(k + 1));
        }
        *o = best;
    }
}

/// Squared distance from every pixel to the nearest point of `points`.
fn squared_distance_map(points: &[(usize, usize)], h: usize, w: usize, spacing: Spacing) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; h * w];
    for &(r, c) in points {
        grid[r * w + c] = 0.0;
    }
    let mut col_in = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            col_in[r] = grid[r * w + c];
        }
        edt_1d(&col_in, spacing.row, &mut col_out);
        for r in 0..h {
            grid[r * w + c] = col_out[r];
        }
    }
    let mut row_out = vec![0.0; w];
    for r in 0..h {
        edt_1d(&grid[r * w..(r + 1) * w], spacing.col, &mut row_out);
        grid[r * w..(r + 1) * w].copy_from_slice(&row_out);
    }
    grid
}

fn directed(from: &[(usize, usize)], to_map: &[f64], w: usize) -> Vec<f64> {
    from.iter().map(|&(r, c)| to_map[r * w + c]).collect()
}

/// Nearest-rank percentile of squared distances.
fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

pub fn hausdorff(a: &BinaryMask, b: &BinaryMask, spacing: Spacing) -> Result<HdResult> {
    hausdorff_with(a, b, spacing, HdStatistic::Max)
}

pub fn hausdorff_with(a: &BinaryMask, b: &BinaryMask, spacing: Spacing, stat: HdStatistic) -> Result<HdResult> {
    let (h, w) = (a.height(), a.width());
    if (h, w) != (b.height(), b.width()) {
        return Err(Error::shape("hausdorff", format!("{h}x{w} vs {}x{}", b.height(), b.width())));
    }
    if !(spacing.row > 0.0 && spacing.col > 0.0 && spacing.row.is_finite() && spacing.col.is_finite()) {
        return Err(Error::Config(format!("spacing must be positive and finite, got {spacing:?}")));
    }
    let (pa, pb) = (boundary_points(a), boundary_points(b));
    match (pa.is_empty(), pb.is_empty()) {
        (true, true) => return Ok(HdResult { distance: 0.0, flag: HdFlag::BothEmpty }),
        (true, false) | (false, true) => {
            let (dh, dw) = (h as f64 * spacing.row, w as f64 * spacing.col);
            return Ok(HdResult { distance: (dh * dh + dw * dw).sqrt(), flag: HdFlag::OneEmpty });
        }
        _ => {}
    }
    let ab = directed(&pa, &squared_distance_map(&pb, h, w, spacing), w);
    let ba = directed(&pb, &squared_distance_map(&pa, h, w, spacing), w);
    let sq = match stat {
        HdStatistic::Max => ab.iter().chain(&ba).copied().fold(0.0, f64::max),
        HdStatistic::Percentile95 => percentile(ab, 0.95).max(percentile(ba, 0.95)),
    };
    Ok(HdResult { distance: sq.sqrt(), flag: HdFlag::Normal })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(h: usize, w: usize, r: usize, c: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |i, j| (i, j) == (r, c))
    }

    #[test]
    fn three_four_five() {
        let d = hausdorff(&point(8, 8, 0, 0), &point(8, 8, 3, 4), Spacing::default()).unwrap();
        assert_eq!(d.distance, 5.0);
        assert_eq!(d.flag, HdFlag::Normal);
    }

    #[test]
    fn empty_conventions() {
        let e = BinaryMask::from_fn(3, 4, |_, _| false);
        let p = point(3, 4, 1, 1);
        assert_eq!(hausdorff(&e, &e, Spacing::default()).unwrap(), HdResult { distance: 0.0, flag: HdFlag::BothEmpty });
        let one = hausdorff(&e, &p, Spacing::default()).unwrap();
        assert_eq!((one.distance, one.flag), (5.0, HdFlag::OneEmpty));
    }

    #[test]
    fn interior_pixels_are_not_boundary() {
        let m = BinaryMask::from_fn(5, 5, |r, c| (1..4).contains(&r) && (1..4).contains(&c));
        let b = boundary_points(&m);
        assert_eq!(b.len(), 8);
        assert!(!b.contains(&(2, 2)));
        let full = BinaryMask::from_fn(3, 3, |_, _| true);
        assert_eq!(boundary_points(&full).len(), 8);
    }

    #[test]
    fn anisotropic_spacing() {
        let d = hausdorff(&point(6, 6, 0, 0), &point(6, 6, 3, 4), Spacing { row: 2.0, col: 0.5 }).unwrap();
        assert!((d.distance - (36.0f64 + 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn percentile_is_at_most_max() {
        let a = BinaryMask::from_fn(16, 16, |r, c| r < 6 && c < 9);
        let b = BinaryMask::from_fn(16, 16, |r, c| r > 3 && c > 2 && r < 14);
        let m = hausdorff(&a, &b, Spacing::default()).unwrap().distance;
        let p = hausdorff_with(&a, &b, Spacing::default(), HdStatistic::Percentile95).unwrap().distance;
        assert!(p <= m && p > 0.0);
    }
}
