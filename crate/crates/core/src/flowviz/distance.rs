use crate::raster::BinaryMask;

use super::FlowVizError;

/// Exact Euclidean distance (pixels) from each pixel to the nearest
/// background pixel; zero on background.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl DistanceMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Felzenszwalb–Huttenlocher separable squared EDT (columns, then rows).
///
/// Only in-image background pixels count as background. A mask with no
/// background at all falls back to measuring distance to the image exterior.
pub fn distance_transform(mask: &BinaryMask) -> Result<DistanceMap, FlowVizError> {
    if mask.is_empty() {
        return Err(FlowVizError::EmptyMask);
    }
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    if mask.area() == w * h {
        let values = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x + 1).min(y + 1).min(w - x).min(h - y) as f64))
            .collect();
        return Ok(DistanceMap {
            width: mask.width(),
            height: mask.height(),
            values,
        });
    }

    let mut grid: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&fg| if fg { f64::INFINITY } else { 0.0 })
        .collect();

    let mut f = vec![0.0; w.max(h)];
    let mut d = vec![0.0; w.max(h)];
    let mut v = vec![0usize; w.max(h)];
    let mut z = vec![0.0; w.max(h) + 1];

    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        for x in 0..w {
            grid[y * w + x] = d[x].sqrt();
        }
    }
    Ok(DistanceMap {
        width: mask.width(),
        height: mask.height(),
        values: grid,
    })
}

/// Lower envelope of parabolas rooted at each finite sample.
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        d.fill(f64::INFINITY);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                // k == 0 is impossible here since z[0] = -inf
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(mask: &BinaryMask) -> Vec<f64> {
        let bg: Vec<(i64, i64)> = (0..mask.height())
            .flat_map(|y| (0..mask.width()).map(move |x| (x, y)))
            .filter(|&(x, y)| !mask.get(x, y))
            .map(|(x, y)| (x as i64, y as i64))
            .collect();
        (0..mask.height())
            .flat_map(|y| (0..mask.width()).map(move |x| (x, y)))
            .map(|(x, y)| {
                if !mask.get(x, y) {
                    return 0.0;
                }
                bg.iter()
                    .map(|&(bx, by)| {
                        let (dx, dy) = (bx - x as i64, by - y as i64);
                        ((dx * dx + dy * dy) as f64).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn disk_center_matches_radius() {
        let mask = BinaryMask::from_fn(21, 21, |x, y| {
            let (dx, dy) = (x as i64 - 10, y as i64 - 10);
            dx * dx + dy * dy < 25
        });
        let dt = distance_transform(&mask).unwrap();
        assert!((dt.get(10, 10) - 5.0).abs() <= 0.5, "center {}", dt.get(10, 10));
        assert_eq!(dt.values(), brute_force(&mask).as_slice());
    }

    #[test]
    fn single_pixel_has_unit_distance() {
        let mut mask = BinaryMask::empty(9, 9);
        mask.set(4, 4, true);
        let dt = distance_transform(&mask).unwrap();
        assert_eq!(dt.get(4, 4), 1.0);
        assert_eq!(dt.get(0, 0), 0.0);
    }

    #[test]
    fn empty_mask_is_rejected() {
        assert_eq!(
            distance_transform(&BinaryMask::empty(8, 8)).unwrap_err(),
            FlowVizError::EmptyMask
        );
    }

    #[test]
    fn irregular_masks_match_brute_force() {
        for seed in 0..6u32 {
            let mask = BinaryMask::from_fn(23, 17, |x, y| {
                let h = (x.wrapping_mul(2654435761) ^ y.wrapping_mul(40503) ^ seed.wrapping_mul(97)) % 7;
                h != 0
            });
            let dt = distance_transform(&mask).unwrap();
            let bf = brute_force(&mask);
            for (a, b) in dt.values().iter().zip(&bf) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn full_mask_measures_to_exterior() {
        let mask = BinaryMask::from_fn(5, 5, |_, _| true);
        let dt = distance_transform(&mask).unwrap();
        assert_eq!(dt.get(2, 2), 3.0);
        assert_eq!(dt.get(0, 3), 1.0);
    }
}
