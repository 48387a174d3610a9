//! Synthetic angiogram phantoms.
//!
//! [`fontan_phantom`] draws a total cavopulmonary connection: superior vena
//! cava entering from the top, inferior vena cava from the bottom, left and
//! right pulmonary arteries leaving to the sides, all meeting in a dilated
//! central pouch. Vessels are dark on a bright background with a gentle
//! intensity ramp, deterministic noise and a few small distractor blobs.

use serde::{Deserialize, Serialize};

use crate::raster::{BinaryMask, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomOptions {
    pub size: u32,
    /// Vessel radius as a fraction of the image side.
    pub vessel_radius: f64,
    /// Pouch radius over vessel radius.
    pub pouch_scale: f64,
    /// Pouch extent along the connection, as a fraction of the total
    /// end-to-end span.
    pub pouch_fraction: f64,
    pub noise_amplitude: f64,
    pub blobs: bool,
    pub seed: u64,
}

impl Default for PhantomOptions {
    fn default() -> Self {
        PhantomOptions {
            size: 512,
            vessel_radius: 0.03,
            pouch_scale: 2.0,
            pouch_fraction: 0.2,
            noise_amplitude: 10.0,
            blobs: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: GrayImage,
    /// Ground-truth vessel footprint (blobs excluded).
    pub mask: BinaryMask,
    pub center: [f64; 2],
    pub vessel_radius: f64,
    pub pouch_radius: f64,
    /// Pouch reach from the center along each branch.
    pub pouch_half_length: f64,
    pub svc_end: [f64; 2],
    pub ivc_end: [f64; 2],
    pub lpa_end: [f64; 2],
    pub rpa_end: [f64; 2],
}

impl Phantom {
    /// Whether a pixel position lies in the dilated pouch.
    pub fn in_pouch(&self, p: [f64; 2]) -> bool {
        let (dx, dy) = ((p[0] - self.center[0]).abs(), (p[1] - self.center[1]).abs());
        let arm = |along: f64, across: f64| {
            along <= self.pouch_half_length && across <= self.pouch_radius
                || (along - self.pouch_half_length).hypot(across) <= self.pouch_radius
        };
        dx.hypot(dy) <= self.pouch_radius || arm(dx, dy) || arm(dy, dx)
    }
}

pub fn fontan_phantom(opts: &PhantomOptions) -> Phantom {
    let s = opts.size as f64;
    let c = [s / 2.0, s / 2.0];
    let margin = 0.08 * s;
    let r0 = opts.vessel_radius * s;
    let rp = opts.pouch_scale * r0;
    let half = opts.pouch_fraction * (s - 2.0 * margin) / 2.0;
    let svc_end = [c[0], margin];
    let ivc_end = [c[0], s - margin];
    let rpa_end = [margin, c[1]];
    let lpa_end = [s - margin, c[1]];

    let mut phantom = Phantom {
        image: GrayImage::filled(opts.size, opts.size, 0),
        mask: BinaryMask::empty(opts.size, opts.size),
        center: c,
        vessel_radius: r0,
        pouch_radius: rp,
        pouch_half_length: half,
        svc_end,
        ivc_end,
        lpa_end,
        rpa_end,
    };

    // Signed distance to the vessel boundary (negative inside).
    let vessel_sd = |x: f64, y: f64| -> f64 {
        let dx = (x - c[0]).abs();
        let dy = (y - c[1]).abs();
        let vertical = capsule(dx, dy, s / 2.0 - margin, r0);
        let horizontal = capsule(dy, dx, s / 2.0 - margin, r0);
        let pouch_v = capsule(dx, dy, half, rp);
        let pouch_h = capsule(dy, dx, half, rp);
        vertical.min(horizontal).min(pouch_v).min(pouch_h)
    };

    let blobs: Vec<([f64; 2], f64)> = if opts.blobs {
        [[0.22, 0.2], [0.8, 0.26], [0.25, 0.78], [0.76, 0.82], [0.9, 0.6]]
            .iter()
            .map(|f| ([f[0] * s, f[1] * s], (0.008 * s).max(1.5)))
            .collect()
    } else {
        Vec::new()
    };

    let (bg, fg) = (205.0, 70.0);
    let seed = opts.seed;
    phantom.image = GrayImage::from_fn(opts.size, opts.size, |x, y| {
        let (px, py) = (x as f64, y as f64);
        let mut v = bg - 12.0 * px / s;
        let coverage = (0.5 - vessel_sd(px, py)).clamp(0.0, 1.0);
        v += coverage * (fg - v);
        for (b, br) in &blobs {
            let cov = (0.5 - ((px - b[0]).hypot(py - b[1]) - br)).clamp(0.0, 1.0);
            v += cov * (fg + 25.0 - v);
        }
        v += opts.noise_amplitude * (hash_unit(seed, x, y) * 2.0 - 1.0);
        (v + 0.5).floor().clamp(0.0, 255.0) as u8
    });
    phantom.mask = BinaryMask::from_fn(opts.size, opts.size, |x, y| vessel_sd(x as f64, y as f64) <= 0.0);
    phantom
}

/// Signed distance to a capsule along the `along` axis from -len to len.
fn capsule(across: f64, along: f64, len: f64, radius: f64) -> f64 {
    let t = along.min(len);
    (along - t).hypot(across) - radius
}

/// Deterministic value in [0, 1) per pixel (splitmix64 finalizer).
fn hash_unit(seed: u64, x: u32, y: u32) -> f64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(((y as u64) << 32) | x as u64);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_deterministic() {
        let opts = PhantomOptions {
            size: 128,
            ..PhantomOptions::default()
        };
        assert_eq!(fontan_phantom(&opts), fontan_phantom(&opts));
    }

    #[test]
    fn vessels_are_dark_and_pouch_is_central() {
        let p = fontan_phantom(&PhantomOptions {
            size: 256,
            ..PhantomOptions::default()
        });
        let c = p.center;
        assert!(p.image.get(c[0] as u32, c[1] as u32) < 100);
        assert!(p.image.get(5, 128) > 150);
        assert!(p.in_pouch(c));
        assert!(!p.in_pouch(p.svc_end));
        assert!(p.mask.get(c[0] as u32, (c[1] - p.pouch_radius + 2.0) as u32));
    }
}
