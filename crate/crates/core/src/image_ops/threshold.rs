use serde::{Deserialize, Serialize};

use crate::raster::{BinaryMask, GrayImage};

use super::ImageOpsError;

/// Which way round the vessels are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    VesselsDark,
    VesselsBright,
}

/// Global Otsu threshold.
///
/// Candidate `t` splits pixels into `v < t` and `v >= t`; the chosen `t`
/// maximizes between-class variance over all 256 candidates, ties going to
/// the smallest `t`. Comparisons are exact (integer), so the result never
/// depends on floating-point rounding.
pub fn otsu_threshold(img: &GrayImage) -> Result<(u8, BinaryMask), ImageOpsError> {
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(ImageOpsError::UniformImage);
    }
    let total: u64 = hist.iter().sum();
    let total_sum: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();

    // Between-class variance is proportional to D^2 / (n0 * n1) with
    // D = S0 * N - S * n0.
    let mut best: Option<(u8, u128, u128)> = None;
    let mut n0 = 0u64;
    let mut s0 = 0u64;
    for t in 0..=255usize {
        if t > 0 {
            n0 += hist[t - 1];
            s0 += (t as u64 - 1) * hist[t - 1];
        }
        let n1 = total - n0;
        let (num, den) = if n0 == 0 || n1 == 0 {
            (0u128, 1u128)
        } else {
            let d = s0 as i128 * total as i128 - total_sum as i128 * n0 as i128;
            let d = d.unsigned_abs();
            (d * d, n0 as u128 * n1 as u128)
        };
        let better = match best {
            None => true,
            Some((_, bn, bd)) => wide_gt(num, bd, bn, den),
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    let threshold = best.expect("256 candidates evaluated").0;
    let mask = BinaryMask::from_fn(img.width(), img.height(), |x, y| img.get(x, y) >= threshold);
    Ok((threshold, mask))
}

/// `a * b > c * d` for a, c < 2^127 and b, d < 2^64, without overflow.
fn wide_gt(a: u128, b: u128, c: u128, d: u128) -> bool {
    let lhs = mul_wide(a, b as u64);
    let rhs = mul_wide(c, d as u64);
    lhs > rhs
}

/// Full product of a u128 and a u64 as (high, low) 128-bit halves.
fn mul_wide(a: u128, b: u64) -> (u128, u128) {
    let a_lo = a as u64 as u128;
    let a_hi = a >> 64;
    let b = b as u128;
    let lo = a_lo * b;
    let mid = a_hi * b;
    let (low, carry) = lo.overflowing_add(mid << 64);
    let high = (mid >> 64) + carry as u128;
    (high, low)
}

/// Decides polarity from the 5% border frame: vessels are dark when the
/// frame is at least 10 intensity units brighter than the whole image.
pub fn detect_polarity(img: &GrayImage) -> Polarity {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Polarity::VesselsBright;
    }
    let bx = ((w as f64 * 0.05).ceil() as u32).max(1);
    let by = ((h as f64 * 0.05).ceil() as u32).max(1);
    let (mut frame_sum, mut frame_n, mut all_sum) = (0u64, 0u64, 0u64);
    for y in 0..h {
        for x in 0..w {
            let v = img.get(x, y) as u64;
            all_sum += v;
            if x < bx || y < by || x >= w.saturating_sub(bx) || y >= h.saturating_sub(by) {
                frame_sum += v;
                frame_n += 1;
            }
        }
    }
    let global_mean = all_sum as f64 / (w as f64 * h as f64);
    let frame_mean = frame_sum as f64 / frame_n as f64;
    if frame_mean - global_mean >= 10.0 {
        Polarity::VesselsDark
    } else {
        Polarity::VesselsBright
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bimodal_split_is_exact() {
        let img = GrayImage::from_fn(16, 16, |x, _| if x < 8 { 10 } else { 200 });
        let (t, mask) = otsu_threshold(&img).unwrap();
        assert!(t > 10 && t <= 200, "threshold {t}");
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(mask.get(x, y), x >= 8);
            }
        }
    }

    #[test]
    fn uniform_image_has_no_threshold() {
        assert_eq!(
            otsu_threshold(&GrayImage::filled(16, 16, 3)).unwrap_err(),
            ImageOpsError::UniformImage
        );
    }

    #[test]
    fn mul_wide_matches_small_products() {
        assert_eq!(mul_wide(7, 9), (0, 63));
        let a = u128::MAX >> 1;
        let (hi, lo) = mul_wide(a, 2);
        assert_eq!((hi, lo), (0, a * 2));
        let (hi, lo) = mul_wide(u128::MAX, u64::MAX);
        // (2^128 - 1)(2^64 - 1) = 2^192 - 2^128 - 2^64 + 1
        assert_eq!(hi, u64::MAX as u128 - 1);
        assert_eq!(lo, u128::MAX - u64::MAX as u128 + 1);
    }

    #[test]
    fn polarity_follows_border_frame() {
        let dark_tube = GrayImage::from_fn(64, 64, |x, y| {
            if (10..54).contains(&x) && (26..38).contains(&y) {
                40
            } else {
                210
            }
        });
        assert_eq!(detect_polarity(&dark_tube), Polarity::VesselsDark);
        let bright_tube = dark_tube.map(|p| 255 - p);
        assert_eq!(detect_polarity(&bright_tube), Polarity::VesselsBright);
        assert_eq!(
            detect_polarity(&GrayImage::filled(32, 32, 90)),
            Polarity::VesselsBright
        );
    }
}
