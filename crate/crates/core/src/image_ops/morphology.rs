use crate::raster::BinaryMask;

use super::ImageOpsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

/// Component labelling of all pixels equal to a target value.
#[derive(Debug, Clone)]
pub struct Components {
    /// 0 for pixels not in any component, otherwise `component index + 1`.
    pub labels: Vec<u32>,
    pub areas: Vec<usize>,
    pub touches_border: Vec<bool>,
}

impl Components {
    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }
}

/// Labels connected regions of pixels whose value equals `target`, in
/// raster order of their first pixel.
pub fn connected_components(mask: &BinaryMask, target: bool, conn: Connectivity) -> Components {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let bits = mask.bits();
    let mut labels = vec![0u32; bits.len()];
    let mut areas = Vec::new();
    let mut touches_border = Vec::new();
    let mut stack = Vec::new();
    for start in 0..bits.len() {
        if bits[start] != target || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        let mut area = 0usize;
        let mut border = false;
        labels[start] = label;
        stack.push(start);
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                border = true;
            }
            for &(dx, dy) in conn.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let j = (ny * w + nx) as usize;
                if bits[j] == target && labels[j] == 0 {
                    labels[j] = label;
                    stack.push(j);
                }
            }
        }
        areas.push(area);
        touches_border.push(border);
    }
    Components {
        labels,
        areas,
        touches_border,
    }
}

fn retain_components(mask: &BinaryMask, keep: impl Fn(usize, usize) -> bool) -> BinaryMask {
    let comps = connected_components(mask, true, Connectivity::Eight);
    let mut out = BinaryMask::empty(mask.width(), mask.height());
    for (dst, &label) in out.bits_mut().iter_mut().zip(&comps.labels) {
        if label != 0 {
            let idx = label as usize - 1;
            *dst = keep(idx, comps.areas[idx]);
        }
    }
    out
}

/// Drops 8-connected foreground components smaller than `min_area` pixels.
pub fn remove_small_components(mask: &BinaryMask, min_area: usize) -> Result<BinaryMask, ImageOpsError> {
    if min_area == 0 {
        return Err(ImageOpsError::InvalidParameter(
            "min_area must be at least 1".into(),
        ));
    }
    Ok(retain_components(mask, |_, area| area >= min_area))
}

/// Keeps only the largest 8-connected component (earliest in raster order
/// on ties).
pub fn keep_largest_component(mask: &BinaryMask) -> BinaryMask {
    let comps = connected_components(mask, true, Connectivity::Eight);
    let Some(best) = (0..comps.len()).reduce(|a, b| if comps.areas[b] > comps.areas[a] { b } else { a })
    else {
        return mask.clone();
    };
    retain_components(mask, |idx, _| idx == best)
}

/// Keeps components whose area is at least `ratio` times the largest one.
pub fn keep_dominant_components(mask: &BinaryMask, ratio: f64) -> BinaryMask {
    let comps = connected_components(mask, true, Connectivity::Eight);
    let largest = comps.areas.iter().copied().max().unwrap_or(0);
    let floor = ratio * largest as f64;
    retain_components(mask, |_, area| area as f64 >= floor)
}

/// Fills background regions that are not 4-connected to the image border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let bg = connected_components(mask, false, Connectivity::Four);
    let mut out = mask.clone();
    for (dst, &label) in out.bits_mut().iter_mut().zip(&bg.labels) {
        if label != 0 && !bg.touches_border[label as usize - 1] {
            *dst = true;
        }
    }
    out
}

/// Foreground components (8-connected) minus holes (4-connected background
/// regions away from the border).
pub fn euler_number(mask: &BinaryMask) -> i64 {
    let fg = connected_components(mask, true, Connectivity::Eight);
    let bg = connected_components(mask, false, Connectivity::Four);
    let holes = bg.touches_border.iter().filter(|&&t| !t).count();
    fg.len() as i64 - holes as i64
}

/// Horizontal half-extent of a digital disk for each row offset.
fn disk_rows(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    (-r..=r)
        .map(|dy| {
            let mut hw = 0i64;
            while (hw + 1) * (hw + 1) + dy * dy <= r * r {
                hw += 1;
            }
            (dy, hw)
        })
        .collect()
}

/// Per-row prefix sums of foreground counts, `w + 1` entries per row.
fn row_prefix(mask: &BinaryMask) -> Vec<u32> {
    let w = mask.width() as usize;
    let mut pre = vec![0u32; (w + 1) * mask.height() as usize];
    for (y, row) in mask.bits().chunks(w.max(1)).enumerate() {
        let base = y * (w + 1);
        for (x, &b) in row.iter().enumerate() {
            pre[base + x + 1] = pre[base + x] + b as u32;
        }
    }
    pre
}

#[derive(Clone, Copy)]
enum Morph {
    Dilate,
    Erode,
}

fn disk_morph(mask: &BinaryMask, radius: u32, op: Morph) -> BinaryMask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let pre = row_prefix(mask);
    let rows = disk_rows(radius);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let (x, y) = (x as i64, y as i64);
        if matches!(op, Morph::Erode) && !mask.get(x as u32, y as u32) {
            return false;
        }
        for &(dy, hw) in &rows {
            let yy = y + dy;
            if yy < 0 || yy >= h {
                continue;
            }
            let lo = (x - hw).max(0);
            let hi = (x + hw).min(w - 1);
            let base = yy as usize * (w as usize + 1);
            let count = pre[base + hi as usize + 1] - pre[base + lo as usize];
            match op {
                Morph::Dilate if count > 0 => return true,
                Morph::Erode if count as i64 != hi - lo + 1 => return false,
                _ => {}
            }
        }
        matches!(op, Morph::Erode)
    })
}

/// Dilation by a digital disk; pixels outside the image are ignored.
pub fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    disk_morph(mask, radius, Morph::Dilate)
}

/// Erosion by a digital disk; pixels outside the image are ignored.
pub fn erode(mask: &BinaryMask, radius: u32) -> BinaryMask {
    disk_morph(mask, radius, Morph::Erode)
}

pub fn close(mask: &BinaryMask, radius: u32) -> BinaryMask {
    erode(&dilate(mask, radius), radius)
}

pub fn open(mask: &BinaryMask, radius: u32) -> BinaryMask {
    dilate(&erode(mask, radius), radius)
}

/// Closing then opening with a disk of the given radius. Fails when the
/// foreground area moves by more than 15%, which means the radius is too
/// large for the structures in the mask.
pub fn smooth_boundary(mask: &BinaryMask, radius: u32) -> Result<BinaryMask, ImageOpsError> {
    if radius == 0 {
        return Err(ImageOpsError::InvalidParameter(
            "smoothing radius must be at least 1".into(),
        ));
    }
    let out = open(&close(mask, radius), radius);
    let before = mask.area();
    let after = out.area();
    if before.abs_diff(after) as f64 > 0.15 * before as f64 {
        return Err(ImageOpsError::AreaDistortion { before, after });
    }
    Ok(out)
}

/// 3x3 majority vote over in-bounds neighbours; ties keep the pixel.
pub fn majority_filter(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let (mut fg, mut total) = (0u32, 0u32);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                if xx >= 0 && yy >= 0 && xx < w && yy < h {
                    total += 1;
                    fg += mask.get(xx as u32, yy as u32) as u32;
                }
            }
        }
        match (2 * fg).cmp(&total) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => mask.get(x, y),
        }
    })
}
