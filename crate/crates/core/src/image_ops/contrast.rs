use crate::raster::GrayImage;

use super::ImageOpsError;

/// Stretches intensities affinely onto [0, 255]. A uniform image maps to
/// all-128.
pub fn normalize(img: &GrayImage) -> GrayImage {
    let (min, max) = img
        .pixels()
        .iter()
        .fold((u8::MAX, u8::MIN), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    if img.pixels().is_empty() || min == max {
        return GrayImage::filled(img.width(), img.height(), 128);
    }
    let span = (max - min) as u32;
    img.map(|p| (((p - min) as u32 * 510 + span) / (2 * span)) as u8)
}

pub fn invert(img: &GrayImage) -> GrayImage {
    img.map(|p| 255 - p)
}

/// 3x3 median filter with edge replication.
pub fn median3(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let mut win = [0u8; 9];
        let mut k = 0;
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let xx = (x as i64 + dx).clamp(0, w - 1) as u32;
                let yy = (y as i64 + dy).clamp(0, h - 1) as u32;
                win[k] = img.get(xx, yy);
                k += 1;
            }
        }
        win.sort_unstable();
        win[4]
    })
}

/// Contrast-limited adaptive histogram equalization.
///
/// The image is cut into `tile`-sized tiles (the last row/column of tiles
/// may be smaller). Each tile's histogram is clipped at
/// `clip * tile_pixel_count`, the excess is spread evenly over all 256 bins,
/// and the clipped CDF becomes the tile's lookup table. Output pixels blend
/// the lookup tables of the four surrounding tile centers bilinearly;
/// outside the outermost centers the nearest table is used.
///
/// A uniform image is returned unchanged.
pub fn enhance_contrast(img: &GrayImage, tile: u32, clip: f64) -> Result<GrayImage, ImageOpsError> {
    if tile < 8 {
        return Err(ImageOpsError::TileTooSmall(tile));
    }
    if !(clip > 0.0 && clip <= 1.0) {
        return Err(ImageOpsError::InvalidClip(clip));
    }
    let first = img.pixels().first().copied();
    if img.pixels().iter().all(|&p| Some(p) == first) {
        return Ok(img.clone());
    }

    let (w, h) = img.dimensions();
    let nx = w.div_ceil(tile) as usize;
    let ny = h.div_ceil(tile) as usize;

    let mut luts = Vec::with_capacity(nx * ny);
    for ty in 0..ny {
        for tx in 0..nx {
            let x0 = tx as u32 * tile;
            let y0 = ty as u32 * tile;
            let x1 = (x0 + tile).min(w);
            let y1 = (y0 + tile).min(h);
            let mut hist = [0u32; 256];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[img.get(x, y) as usize] += 1;
                }
            }
            luts.push(tile_lut(&mut hist, (x1 - x0) * (y1 - y0), clip));
        }
    }

    let centers = |n: usize, size: u32| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let a = i as u32 * tile;
                let b = (a + tile).min(size);
                (a + b - 1) as f64 / 2.0
            })
            .collect()
    };
    let cx = centers(nx, w);
    let cy = centers(ny, h);
    let xs: Vec<(usize, usize, f64)> = (0..w).map(|x| blend_coord(&cx, x as f64)).collect();

    let mut out = Vec::with_capacity(img.pixels().len());
    for y in 0..h {
        let (j0, j1, fy) = blend_coord(&cy, y as f64);
        for (x, &(i0, i1, fx)) in xs.iter().enumerate() {
            let v = img.get(x as u32, y) as usize;
            let l00 = luts[j0 * nx + i0][v] as f64;
            let l10 = luts[j0 * nx + i1][v] as f64;
            let l01 = luts[j1 * nx + i0][v] as f64;
            let l11 = luts[j1 * nx + i1][v] as f64;
            let top = (1.0 - fx) * l00 + fx * l10;
            let bottom = (1.0 - fx) * l01 + fx * l11;
            let blended = (1.0 - fy) * top + fy * bottom;
            out.push((blended + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(GrayImage::new(w, h, out).expect("dimensions preserved"))
}

fn tile_lut(hist: &mut [u32; 256], n: u32, clip: f64) -> [u8; 256] {
    let limit = ((clip * n as f64).floor() as u32).max(1);
    let mut excess = 0u32;
    for bin in hist.iter_mut() {
        if *bin > limit {
            excess += *bin - limit;
            *bin = limit;
        }
    }
    let per_bin = excess / 256;
    let residual = excess % 256;
    for bin in hist.iter_mut() {
        *bin += per_bin;
    }
    for k in 0..residual {
        hist[(k * 256 / residual) as usize] += 1;
    }

    let mut lut = [0u8; 256];
    let mut cdf = 0u64;
    let n = n as u64;
    for (v, &count) in hist.iter().enumerate() {
        cdf += count as u64;
        lut[v] = ((510 * cdf + n) / (2 * n)).min(255) as u8;
    }
    lut
}

/// Index pair and interpolation weight for a coordinate among tile centers.
fn blend_coord(centers: &[f64], c: f64) -> (usize, usize, f64) {
    let last = centers.len() - 1;
    if c <= centers[0] {
        return (0, 0, 0.0);
    }
    if c >= centers[last] {
        return (last, last, 0.0);
    }
    let i = centers.partition_point(|&m| m <= c) - 1;
    let f = (c - centers[i]) / (centers[i + 1] - centers[i]);
    (i, i + 1, f)
}
