//! Raster containers, PNG encoding and content addressing.

use std::fmt;
use std::io::Cursor;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ColorType, ImageEncoder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Smallest accepted side length of a pipeline image.
pub const MIN_SIDE: u32 = 16;
/// Largest accepted side length of a pipeline image.
pub const MAX_SIDE: u32 = 8192;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("pixel buffer has {actual} entries, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("image could not be decoded: {0}")]
    Undecodable(String),
    #[error("image could not be encoded: {0}")]
    Encode(String),
}

/// 8-bit single-channel image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(RasterError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn map(&self, f: impl Fn(u8) -> u8) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        let mut data = Vec::with_capacity(self.pixels.len() * 3);
        for &p in &self.pixels {
            data.extend_from_slice(&[p, p, p]);
        }
        RgbImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

impl fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

/// 8-bit RGB image, row-major, interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(RasterError::BufferSize {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// ITU-R 601 luma with round-half-up integer arithmetic.
    pub fn to_gray(&self) -> GrayImage {
        let pixels = self
            .data
            .chunks_exact(3)
            .map(|c| {
                let l = 299 * c[0] as u32 + 587 * c[1] as u32 + 114 * c[2] as u32;
                ((l + 500) / 1000) as u8
            })
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }
}

impl fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

/// Binary vessel mask; `true` is foreground.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(RasterError::BufferSize {
                expected,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    /// Foreground where the gray value is at least 128.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            bits: img.pixels.iter().map(|&p| p >= 128).collect(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    /// Out-of-bounds coordinates read as background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            false
        } else {
            self.bits[y as usize * self.width as usize + x as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Encodes as 0 (background) / 255 (foreground).
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "BinaryMask({}x{}, area {})",
            self.width,
            self.height,
            self.area()
        )
    }
}

/// A decoded pipeline image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Raster {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl Raster {
    pub fn width(&self) -> u32 {
        match self {
            Raster::Gray(g) => g.width(),
            Raster::Rgb(c) => c.width(),
        }
    }

    pub fn height(&self) -> u32 {
        match self {
            Raster::Gray(g) => g.height(),
            Raster::Rgb(c) => c.height(),
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width(), self.height())
    }

    pub fn to_gray(&self) -> GrayImage {
        match self {
            Raster::Gray(g) => g.clone(),
            Raster::Rgb(c) => c.to_gray(),
        }
    }

    /// Decodes PNG bytes. Grayscale sources stay single-channel; anything
    /// with color becomes RGB. Alpha is dropped.
    pub fn decode(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| RasterError::Undecodable(e.to_string()))?;
        let (w, h) = (img.width(), img.height());
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            Ok(Raster::Rgb(RgbImage::new(w, h, rgb.into_raw())?))
        } else {
            let gray = img.to_luma8();
            Ok(Raster::Gray(GrayImage::new(w, h, gray.into_raw())?))
        }
    }

    /// Encodes as 8-bit PNG with fixed encoder settings, so identical pixels
    /// always produce identical bytes.
    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let mut out = Vec::new();
        let encoder = PngEncoder::new_with_quality(
            Cursor::new(&mut out),
            CompressionType::Default,
            FilterType::Adaptive,
        );
        let (w, h) = self.dimensions();
        let res = match self {
            Raster::Gray(g) => encoder.write_image(g.pixels(), w, h, ColorType::L8.into()),
            Raster::Rgb(c) => encoder.write_image(c.data(), w, h, ColorType::Rgb8.into()),
        };
        res.map_err(|e| RasterError::Encode(e.to_string()))?;
        Ok(out)
    }

    /// Bilinear resample to the requested size (pixel-center aligned).
    pub fn resample(&self, width: u32, height: u32) -> Raster {
        match self {
            Raster::Gray(g) => {
                let ch = resample_channels(g.pixels(), g.width(), g.height(), 1, width, height);
                Raster::Gray(GrayImage {
                    width,
                    height,
                    pixels: ch,
                })
            }
            Raster::Rgb(c) => {
                let ch = resample_channels(c.data(), c.width(), c.height(), 3, width, height);
                Raster::Rgb(RgbImage {
                    width,
                    height,
                    data: ch,
                })
            }
        }
    }
}

impl From<GrayImage> for Raster {
    fn from(g: GrayImage) -> Self {
        Raster::Gray(g)
    }
}

impl From<RgbImage> for Raster {
    fn from(c: RgbImage) -> Self {
        Raster::Rgb(c)
    }
}

fn resample_channels(src: &[u8], sw: u32, sh: u32, ch: usize, dw: u32, dh: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(dw as usize * dh as usize * ch);
    let sx = sw as f64 / dw as f64;
    let sy = sh as f64 / dh as f64;
    for y in 0..dh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh as usize - 1);
        let wy = fy - y0 as f64;
        for x in 0..dw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw as usize - 1);
            let wx = fx - x0 as f64;
            for c in 0..ch {
                let at = |xx: usize, yy: usize| src[(yy * sw as usize + xx) * ch + c] as f64;
                let top = at(x0, y0) * (1.0 - wx) + at(x1, y0) * wx;
                let bottom = at(x0, y1) * (1.0 - wx) + at(x1, y1) * wx;
                let v = top * (1.0 - wy) + bottom * wy;
                out.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Lowercase hex SHA-256 of encoded artifact bytes.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ContentHash(String);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        let mut s = String::with_capacity(64);
        for b in digest.iter() {
            s.push_str(&format!("{b:02x}"));
        }
        ContentHash(s)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn short(&self) -> &str {
        &self.0[..12]
    }
}

impl TryFrom<String> for ContentHash {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            Ok(ContentHash(s))
        } else {
            Err(format!("not a sha-256 hex digest: {s:?}"))
        }
    }
}

impl std::str::FromStr for ContentHash {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ContentHash::try_from(s.to_string())
    }
}

impl From<ContentHash> for String {
    fn from(h: ContentHash) -> Self {
        h.0
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", self.short())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_gray_and_rgb() {
        let g = GrayImage::from_fn(20, 17, |x, y| (x * 7 + y * 3) as u8);
        let bytes = Raster::Gray(g.clone()).encode_png().unwrap();
        assert_eq!(Raster::decode(&bytes).unwrap(), Raster::Gray(g.clone()));

        let mut c = g.to_rgb();
        c.set(3, 4, [255, 0, 10]);
        let bytes = Raster::Rgb(c.clone()).encode_png().unwrap();
        assert_eq!(Raster::decode(&bytes).unwrap(), Raster::Rgb(c));
    }

    #[test]
    fn encoding_is_deterministic() {
        let g = Raster::Gray(GrayImage::from_fn(64, 64, |x, y| ((x ^ y) * 3) as u8));
        assert_eq!(g.encode_png().unwrap(), g.encode_png().unwrap());
    }

    #[test]
    fn truncated_png_is_undecodable() {
        let bytes = Raster::Gray(GrayImage::filled(32, 32, 9)).encode_png().unwrap();
        let err = Raster::decode(&bytes[..bytes.len() / 2]).unwrap_err();
        assert!(matches!(err, RasterError::Undecodable(_)));
    }

    #[test]
    fn hash_is_sha256_hex() {
        let h = ContentHash::of(b"abc");
        assert_eq!(
            h.as_str(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!("xyz".parse::<ContentHash>().is_err());
    }

    #[test]
    fn resample_keeps_constant_images_constant() {
        let r = Raster::Gray(GrayImage::filled(40, 30, 77)).resample(17, 64);
        assert_eq!(r.dimensions(), (17, 64));
        assert!(r.to_gray().pixels().iter().all(|&p| p == 77));
    }
}
