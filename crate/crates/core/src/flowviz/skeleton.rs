use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::raster::BinaryMask;

use super::distance::distance_transform;
use super::FlowVizError;

/// Neighbour offsets, counter-clockwise from east.
pub(crate) const RING: [(i64, i64); 8] = [
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Topology-preserving thinning to a 1-pixel-wide, 8-connected medial axis.
///
/// Distance-ordered homotopic thinning: foreground pixels are visited in
/// increasing order of their distance to the background (ties in raster
/// order) and deleted whenever they are simple points (8-connectivity
/// number 1). A pixel with a single foreground neighbour is kept only when
/// its distance is a local maximum over its 8-neighbourhood, so tips retract
/// to the medial axis instead of growing spurs. Neighbours of each deleted
/// pixel are revisited. Every deletion preserves components and holes.
/// Pixels outside the image count as background.
pub fn skeletonize(mask: &BinaryMask) -> Result<BinaryMask, FlowVizError> {
    let dist = distance_transform(mask)?;
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut out = mask.clone();
    let d = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            dist.get(x as u32, y as u32)
        }
    };
    let anchor = |x: i64, y: i64| RING.iter().all(|&(dx, dy)| d(x, y) >= d(x + dx, y + dy));

    // f64 bits order like the values themselves for non-negative finite f64.
    let key = |x: i64, y: i64| Reverse((d(x, y).to_bits(), y, x));
    let mut heap = BinaryHeap::new();
    for y in 0..h {
        for x in 0..w {
            if out.get(x as u32, y as u32)
                && [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .iter()
                    .any(|&(dx, dy)| !out.get_signed(x + dx, y + dy))
            {
                heap.push(key(x, y));
            }
        }
    }
    while let Some(Reverse((_, y, x))) = heap.pop() {
        if !out.get(x as u32, y as u32) {
            continue;
        }
        let nb = neighbours(&out, x, y);
        let count = nb.iter().filter(|&&b| b).count();
        if count == 0 || crossing_number(&nb) != 1 || (count == 1 && anchor(x, y)) {
            continue;
        }
        out.set(x as u32, y as u32, false);
        for (k, &(dx, dy)) in RING.iter().enumerate() {
            if nb[k] {
                heap.push(key(x + dx, y + dy));
            }
        }
    }
    Ok(out)
}

pub(crate) fn neighbours(mask: &BinaryMask, x: i64, y: i64) -> [bool; 8] {
    let mut nb = [false; 8];
    for (k, &(dx, dy)) in RING.iter().enumerate() {
        nb[k] = mask.get_signed(x + dx, y + dy);
    }
    nb
}

/// Yokoi 8-connectivity number.
fn crossing_number(nb: &[bool; 8]) -> u32 {
    let c = |k: usize| u32::from(!nb[k % 8]);
    [0usize, 2, 4, 6]
        .iter()
        .map(|&k| c(k) - c(k) * c(k + 1) * c(k + 2))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_ops::euler_number;

    fn is_thin(skel: &BinaryMask) -> bool {
        // no fully foreground 2x2 block
        (0..skel.height().saturating_sub(1)).all(|y| {
            (0..skel.width().saturating_sub(1)).all(|x| {
                !(skel.get(x, y) && skel.get(x + 1, y) && skel.get(x, y + 1) && skel.get(x + 1, y + 1))
            })
        })
    }

    #[test]
    fn bar_thins_to_single_row() {
        let mask = BinaryMask::from_fn(120, 20, |x, y| (10..110).contains(&x) && (8..13).contains(&y));
        let skel = skeletonize(&mask).unwrap();
        let rows: Vec<u32> = (0..20).filter(|&y| (0..120).any(|x| skel.get(x, y))).collect();
        assert_eq!(rows, vec![10]);
        let len = skel.area() as i64;
        assert!((len - 96).abs() <= 4, "length {len}");
        assert!(is_thin(&skel));
    }

    #[test]
    fn disk_collapses_near_center() {
        let mask = BinaryMask::from_fn(41, 41, |x, y| {
            let (dx, dy) = (x as i64 - 20, y as i64 - 20);
            dx * dx + dy * dy <= 144
        });
        let skel = skeletonize(&mask).unwrap();
        assert!(skel.area() <= 5, "area {}", skel.area());
        for y in 0..41 {
            for x in 0..41 {
                if skel.get(x, y) {
                    assert!((x as i64 - 20).abs() <= 3 && (y as i64 - 20).abs() <= 3);
                }
            }
        }
    }

    #[test]
    fn ring_keeps_its_hole() {
        let mask = BinaryMask::from_fn(60, 60, |x, y| {
            let (dx, dy) = (x as f64 - 29.5, y as f64 - 29.5);
            let r2 = dx * dx + dy * dy;
            (144.0..=400.0).contains(&r2)
        });
        assert_eq!(euler_number(&mask), 0);
        let skel = skeletonize(&mask).unwrap();
        assert_eq!(euler_number(&skel), 0);
        assert!(is_thin(&skel));
        for y in 0..60 {
            for x in 0..60 {
                if skel.get(x, y) {
                    let c = neighbours(&skel, x as i64, y as i64).iter().filter(|&&b| b).count();
                    assert!(c >= 2, "loop pixel ({x},{y}) has {c} neighbours");
                }
            }
        }
    }

    #[test]
    fn crossing_number_cases() {
        assert_eq!(crossing_number(&[false; 8]), 0);
        assert_eq!(crossing_number(&[true; 8]), 0);
        let mut one_side = [false; 8];
        one_side[0] = true;
        assert_eq!(crossing_number(&one_side), 1);
        let mut bridge = [false; 8];
        bridge[0] = true;
        bridge[4] = true;
        assert_eq!(crossing_number(&bridge), 2);
    }
}
