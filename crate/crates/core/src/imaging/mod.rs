//! Decoded rasters and the deterministic pixel operations every other stage is
//! built on.
//!
//! All operations are pure: they borrow their input and return a new [`Raster`].

mod draw;

pub use draw::{draw_ellipse_outline, draw_rect_outline, draw_text, text_width};

use std::io::Cursor;

use image::{DynamicImage, ImageFormat};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("cannot encode image: {0}")]
    Encode(String),
    #[error("invalid dimension {width}x{height}")]
    InvalidDimension { width: usize, height: usize },
    #[error("invalid crop region ({x0},{y0})-({x1},{y1}) for a {width}x{height} image")]
    InvalidRegion {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        width: usize,
        height: usize,
    },
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
}

pub type Result<T, E = ImagingError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channels {
    Gray = 1,
    Rgb = 3,
}

impl Channels {
    pub fn count(self) -> usize {
        self as usize
    }
}

/// Row-major 8-bit image with one or three interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: Channels,
    pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: Channels, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidDimension { width, height });
        }
        let expected = width * height * channels.count();
        if pixels.len() != expected {
            return Err(ImagingError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// An RGB image with every pixel set to `rgb`.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, Channels::Rgb, pixels)
    }

    /// A grayscale image with every pixel set to `value`.
    pub fn filled_gray(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, Channels::Gray, vec![value; width * height])
    }

    /// Build an RGB raster from RGBA bytes, dropping alpha.
    pub fn from_rgba(width: usize, height: usize, rgba: &[u8]) -> Result<Self> {
        if rgba.len() != width * height * 4 {
            return Err(ImagingError::BufferSize {
                expected: width * height * 4,
                actual: rgba.len(),
            });
        }
        let pixels = rgba
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect();
        Self::new(width, height, Channels::Rgb, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    /// Interleaved samples of the pixel at `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let c = self.channels.count();
        let i = (y * self.width + x) * c;
        &self.pixels[i..i + c]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let c = self.channels.count();
        let i = (y * self.width + x) * c;
        &mut self.pixels[i..i + c]
    }

    /// Single-channel sample; panics if out of range.
    #[inline]
    pub fn sample(&self, x: usize, y: usize, channel: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels.count() + channel]
    }

    /// RGBA bytes (alpha 255), convenient for canvas output.
    pub fn to_rgba(&self) -> Vec<u8> {
        match self.channels {
            Channels::Rgb => self
                .pixels
                .chunks_exact(3)
                .flat_map(|p| [p[0], p[1], p[2], 255])
                .collect(),
            Channels::Gray => self.pixels.iter().flat_map(|&v| [v, v, v, 255]).collect(),
        }
    }

    /// Expand a grayscale raster to three equal channels. RGB input is cloned.
    pub fn to_rgb(&self) -> Raster {
        match self.channels {
            Channels::Rgb => self.clone(),
            Channels::Gray => Raster {
                width: self.width,
                height: self.height,
                channels: Channels::Rgb,
                pixels: self.pixels.iter().flat_map(|&v| [v, v, v]).collect(),
            },
        }
    }

    /// Encode as 8-bit PNG (RGB or grayscale).
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let img = match self.channels {
            Channels::Rgb => DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(
                    self.width as u32,
                    self.height as u32,
                    self.pixels.clone(),
                )
                .expect("buffer length is an invariant"),
            ),
            Channels::Gray => DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(
                    self.width as u32,
                    self.height as u32,
                    self.pixels.clone(),
                )
                .expect("buffer length is an invariant"),
            ),
        };
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| ImagingError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }
}

/// Decode a PNG or JPEG byte stream into an RGB raster.
pub fn decode(bytes: &[u8]) -> Result<Raster> {
    let format = image::guess_format(bytes).map_err(|e| ImagingError::Decode(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(ImagingError::Decode(format!(
            "unsupported format {format:?}"
        )));
    }
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| ImagingError::Decode(e.to_string()))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Raster::new(w as usize, h as usize, Channels::Rgb, rgb.into_raw())
}

#[inline]
fn clamp_round(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// BT.601 luma. Grayscale input is returned unchanged.
pub fn to_grayscale(r: &Raster) -> Raster {
    match r.channels {
        Channels::Gray => r.clone(),
        Channels::Rgb => {
            let pixels = r
                .pixels
                .chunks_exact(3)
                .map(|p| {
                    clamp_round(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                })
                .collect();
            Raster {
                width: r.width,
                height: r.height,
                channels: Channels::Gray,
                pixels,
            }
        }
    }
}

/// Permute the colour channels so that `(R, G, B)` becomes `(G, B, R)`.
pub fn rgb_to_gbr(r: &Raster) -> Raster {
    match r.channels {
        Channels::Gray => r.clone(),
        Channels::Rgb => Raster {
            pixels: r
                .pixels
                .chunks_exact(3)
                .flat_map(|p| [p[1], p[2], p[0]])
                .collect(),
            ..r.clone()
        },
    }
}

/// Bilinear sample at continuous pixel-index coordinates, clamping to the edge.
#[inline]
fn bilinear(r: &Raster, sx: f64, sy: f64, channel: usize) -> f64 {
    let max_x = (r.width - 1) as f64;
    let max_y = (r.height - 1) as f64;
    let sx = sx.clamp(0.0, max_x);
    let sy = sy.clamp(0.0, max_y);
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let x1 = (x0 + 1).min(r.width - 1);
    let y1 = (y0 + 1).min(r.height - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let p00 = r.sample(x0, y0, channel) as f64;
    let p10 = r.sample(x1, y0, channel) as f64;
    let p01 = r.sample(x0, y1, channel) as f64;
    let p11 = r.sample(x1, y1, channel) as f64;
    let top = p00 + (p10 - p00) * fx;
    let bottom = p01 + (p11 - p01) * fx;
    top + (bottom - top) * fy
}

/// Bilinear resize with half-pixel-centre coordinate mapping.
pub fn resize_bilinear(r: &Raster, new_w: usize, new_h: usize) -> Result<Raster> {
    if new_w == 0 || new_h == 0 {
        return Err(ImagingError::InvalidDimension {
            width: new_w,
            height: new_h,
        });
    }
    let c = r.channels.count();
    let scale_x = r.width as f64 / new_w as f64;
    let scale_y = r.height as f64 / new_h as f64;
    let mut pixels = Vec::with_capacity(new_w * new_h * c);
    for y in 0..new_h {
        let sy = (y as f64 + 0.5) * scale_y - 0.5;
        for x in 0..new_w {
            let sx = (x as f64 + 0.5) * scale_x - 0.5;
            for ch in 0..c {
                pixels.push(clamp_round(bilinear(r, sx, sy, ch)));
            }
        }
    }
    Raster::new(new_w, new_h, r.channels, pixels)
}

/// Rotate about the image centre by `degrees` counter-clockwise as displayed
/// (y axis pointing down). Negative angles rotate clockwise.
///
/// The canvas keeps its dimensions; output pixels whose source falls outside
/// the input take `fill` (only the first sample is used for grayscale input).
pub fn rotate(r: &Raster, degrees: f64, fill: [u8; 3]) -> Raster {
    let (sin, cos) = exact_sin_cos(degrees);
    let c = r.channels.count();
    let w = r.width as f64;
    let h = r.height as f64;
    let mut out = r.clone();
    for y in 0..r.height {
        let dy = y as f64 + 0.5 - h / 2.0;
        for x in 0..r.width {
            let dx = x as f64 + 0.5 - w / 2.0;
            // Inverse of the on-screen counter-clockwise rotation.
            let sx = cos * dx - sin * dy + w / 2.0 - 0.5;
            let sy = sin * dx + cos * dy + h / 2.0 - 0.5;
            let dst = out.pixel_mut(x, y);
            if sx < -0.5 || sy < -0.5 || sx > w - 0.5 || sy > h - 0.5 {
                dst.copy_from_slice(&fill[..c]);
            } else {
                for (ch, d) in dst.iter_mut().enumerate() {
                    *d = clamp_round(bilinear(r, sx, sy, ch));
                }
            }
        }
    }
    out
}

/// `sin`/`cos` of an angle in degrees, exact at multiples of 90.
fn exact_sin_cos(degrees: f64) -> (f64, f64) {
    let d = degrees.rem_euclid(360.0);
    if d == 0.0 {
        (0.0, 1.0)
    } else if d == 90.0 {
        (1.0, 0.0)
    } else if d == 180.0 {
        (0.0, -1.0)
    } else if d == 270.0 {
        (-1.0, 0.0)
    } else {
        d.to_radians().sin_cos()
    }
}

/// Copy the half-open region `[x0, x1) x [y0, y1)`.
pub fn crop(r: &Raster, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Raster> {
    if x0 >= x1 || y0 >= y1 || x1 > r.width || y1 > r.height {
        return Err(ImagingError::InvalidRegion {
            x0,
            y0,
            x1,
            y1,
            width: r.width,
            height: r.height,
        });
    }
    let c = r.channels.count();
    let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0) * c);
    for y in y0..y1 {
        let start = (y * r.width + x0) * c;
        let end = (y * r.width + x1) * c;
        pixels.extend_from_slice(&r.pixels[start..end]);
    }
    Raster::new(x1 - x0, y1 - y0, r.channels, pixels)
}

pub fn flip_horizontal(r: &Raster) -> Raster {
    let c = r.channels.count();
    let mut pixels = Vec::with_capacity(r.pixels.len());
    for row in r.pixels.chunks_exact(r.width * c) {
        for px in row.chunks_exact(c).rev() {
            pixels.extend_from_slice(px);
        }
    }
    Raster {
        pixels,
        ..r.clone()
    }
}

/// Square, odd-sized convolution kernel whose weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel2D {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(ImagingError::InvalidKernel(format!(
                "size {size} is not odd"
            )));
        }
        if weights.len() != size * size {
            return Err(ImagingError::InvalidKernel(format!(
                "{} weights for a {size}x{size} kernel",
                weights.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ImagingError::InvalidKernel(format!("weights sum to {sum}")));
        }
        Ok(Self { size, weights })
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at row `ky`, column `kx`.
    pub fn weight(&self, kx: usize, ky: usize) -> f64 {
        self.weights[ky * self.size + kx]
    }
}

/// Per-channel 2-D convolution with replicated edges.
pub fn convolve(r: &Raster, k: &Kernel2D) -> Raster {
    let c = r.channels.count();
    let half = (k.size / 2) as isize;
    let taps: Vec<(isize, isize, f64)> = (0..k.size)
        .flat_map(|ky| (0..k.size).map(move |kx| (kx, ky)))
        .filter_map(|(kx, ky)| {
            let wgt = k.weight(kx, ky);
            // True convolution: the kernel is mirrored relative to the image.
            (wgt != 0.0).then(|| (half - kx as isize, half - ky as isize, wgt))
        })
        .collect();
    let w = r.width as isize;
    let h = r.height as isize;
    let mut out = r.clone();
    let mut acc = vec![0.0f64; c];
    for y in 0..h {
        for x in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &(ox, oy, wgt) in &taps {
                let sx = (x + ox).clamp(0, w - 1) as usize;
                let sy = (y + oy).clamp(0, h - 1) as usize;
                let src = r.pixel(sx, sy);
                for (a, &s) in acc.iter_mut().zip(src) {
                    *a += wgt * s as f64;
                }
            }
            let dst = out.pixel_mut(x as usize, y as usize);
            for (d, &a) in dst.iter_mut().zip(&acc) {
                *d = clamp_round(a);
            }
        }
    }
    out
}

/// Uniform line kernel of `length` pixels through the centre, at `angle_deg`
/// counter-clockwise from the positive x axis (screen orientation).
///
/// The line is rasterised along its dominant axis, one pixel per step, so no
/// pixel is counted twice.
pub fn motion_kernel(length: usize, angle_deg: f64) -> Kernel2D {
    let length = length.max(1);
    let (sin, cos) = exact_sin_cos(angle_deg);
    // Screen direction: y grows downward, so a CCW angle has negative dy.
    let (dx, dy) = (cos, -sin);
    let half_len = (length - 1) as f64 / 2.0;
    let x_major = dx.abs() >= dy.abs();
    let major = if x_major { dx } else { dy };
    let extent = (half_len * major.abs()).round() as isize;
    let points: Vec<(isize, isize)> = (-extent..=extent)
        .map(|u| {
            let v = (u as f64 * if x_major { dy / dx } else { dx / dy }).round() as isize;
            if x_major {
                (u, v)
            } else {
                (v, u)
            }
        })
        .collect();
    let radius = points
        .iter()
        .map(|&(x, y)| x.abs().max(y.abs()))
        .max()
        .unwrap_or(0);
    let size = (2 * radius + 1) as usize;
    let mut weights = vec![0.0; size * size];
    let wgt = 1.0 / points.len() as f64;
    for (x, y) in points {
        weights[((y + radius) as usize) * size + (x + radius) as usize] = wgt;
    }
    Kernel2D { size, weights }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize) -> Raster {
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                px.extend([
                    (x * 7 % 256) as u8,
                    (y * 11 % 256) as u8,
                    ((x + y) * 5 % 256) as u8,
                ]);
            }
        }
        Raster::new(w, h, Channels::Rgb, px).unwrap()
    }

    #[test]
    fn decode_white_png() {
        let png = Raster::filled(2, 2, [255, 255, 255])
            .unwrap()
            .encode_png()
            .unwrap();
        let r = decode(&png).unwrap();
        assert_eq!(r, Raster::filled(2, 2, [255, 255, 255]).unwrap());
    }

    #[test]
    fn decode_expands_gray() {
        let png = Raster::filled_gray(1, 1, 7).unwrap().encode_png().unwrap();
        let r = decode(&png).unwrap();
        assert_eq!(r.channels(), Channels::Rgb);
        assert_eq!(r.pixel(0, 0), &[7, 7, 7]);
    }

    #[test]
    fn decode_truncated_jpeg_fails() {
        let img = gradient(16, 16);
        let rgb = image::RgbImage::from_raw(16, 16, img.pixels().to_vec()).unwrap();
        let mut buf = Cursor::new(Vec::new());
        rgb.write_to(&mut buf, ImageFormat::Jpeg).unwrap();
        let bytes = buf.into_inner();
        assert!(decode(&bytes).is_ok());
        assert!(matches!(
            decode(&bytes[..bytes.len() / 3]),
            Err(ImagingError::Decode(_))
        ));
        assert!(matches!(decode(b"GIF89a"), Err(ImagingError::Decode(_))));
    }

    #[test]
    fn grayscale_luma() {
        let r = Raster::new(3, 1, Channels::Rgb, vec![255, 255, 255, 255, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(to_grayscale(&r).pixels(), &[255, 76, 0]);
        let g = to_grayscale(&r);
        assert_eq!(to_grayscale(&g), g);
    }

    #[test]
    fn resize_identity_and_dims() {
        let r = gradient(100, 60);
        assert_eq!(resize_bilinear(&r, 100, 60).unwrap(), r);
        let small = resize_bilinear(&r, 40, 24).unwrap();
        assert_eq!((small.width(), small.height()), (40, 24));
        let flat = Raster::filled(13, 9, [40, 90, 200]).unwrap();
        assert_eq!(
            resize_bilinear(&flat, 31, 5).unwrap(),
            Raster::filled(31, 5, [40, 90, 200]).unwrap()
        );
        assert!(matches!(
            resize_bilinear(&r, 0, 3),
            Err(ImagingError::InvalidDimension { .. })
        ));
    }

    #[test]
    fn rotate_identity_and_constant() {
        let r = gradient(37, 21);
        assert_eq!(rotate(&r, 0.0, [0, 0, 0]), r);
        let flat = Raster::filled(40, 40, [9, 99, 199]).unwrap();
        let back = rotate(&rotate(&flat, 90.0, [0, 0, 0]), -90.0, [0, 0, 0]);
        assert_eq!(back, flat);
    }

    #[test]
    fn rotate_five_degrees_blackens_corners() {
        let white = Raster::filled(100, 100, [255, 255, 255]).unwrap();
        let rot = rotate(&white, -5.0, [0, 0, 0]);
        assert_eq!((rot.width(), rot.height()), (100, 100));
        // Geometry oracle: the corner pixel centre, rotated back by 5 degrees,
        // lands outside the source square.
        let (s, c) = 5f64.to_radians().sin_cos();
        let (dx, dy) = (0.5 - 50.0, 0.5 - 50.0);
        let sx = c * dx + s * dy + 49.5;
        let sy = -s * dx + c * dy + 49.5;
        assert!(sx < -0.5 || sy < -0.5);
        for (x, y) in [(0, 0), (99, 0), (0, 99), (99, 99)] {
            assert_eq!(rot.pixel(x, y), &[0, 0, 0]);
        }
        assert_eq!(rot.pixel(50, 50), &[255, 255, 255]);
    }

    #[test]
    fn rotate_quarter_turn_is_exact_on_square() {
        let r = gradient(8, 8);
        let rot = rotate(&r, 90.0, [0, 0, 0]);
        // Counter-clockwise on screen: the right column becomes the top row.
        for i in 0..8 {
            assert_eq!(rot.pixel(i, 0), r.pixel(7, i));
        }
    }

    #[test]
    fn crop_regions() {
        let r = gradient(8, 8);
        assert_eq!(crop(&r, 0, 0, 8, 8).unwrap(), r);
        let q = crop(&r, 4, 4, 8, 8).unwrap();
        assert_eq!((q.width(), q.height()), (4, 4));
        assert_eq!(q.pixel(0, 0), r.pixel(4, 4));
        assert!(matches!(
            crop(&r, 0, 0, 9, 8),
            Err(ImagingError::InvalidRegion { .. })
        ));
        assert!(crop(&r, 3, 0, 3, 8).is_err());
    }

    #[test]
    fn flip_cases() {
        let r = Raster::new(2, 1, Channels::Rgb, vec![0, 0, 0, 255, 255, 255]).unwrap();
        assert_eq!(flip_horizontal(&r).pixels(), &[255, 255, 255, 0, 0, 0]);
        let g = gradient(9, 4);
        assert_eq!(flip_horizontal(&flip_horizontal(&g)), g);
        let sym = Raster::new(3, 1, Channels::Rgb, vec![1, 2, 3, 9, 9, 9, 1, 2, 3]).unwrap();
        assert_eq!(flip_horizontal(&sym), sym);
    }

    #[test]
    fn convolve_cases() {
        let r = gradient(10, 7);
        assert_eq!(convolve(&r, &Kernel2D::identity()), r);
        let flat = Raster::filled(6, 6, [17, 130, 250]).unwrap();
        let box3 = Kernel2D::new(3, vec![1.0 / 9.0; 9]).unwrap();
        assert_eq!(convolve(&flat, &box3), flat);
        let line = Raster::new(3, 1, Channels::Gray, vec![0, 255, 0]).unwrap();
        let k = Kernel2D::new(
            3,
            vec![
                0.0,
                0.0,
                0.0,
                1.0 / 3.0,
                1.0 / 3.0,
                1.0 / 3.0,
                0.0,
                0.0,
                0.0,
            ],
        )
        .unwrap();
        assert_eq!(convolve(&line, &k).sample(1, 0, 0), 85);
    }

    #[test]
    fn kernel_validation() {
        assert!(Kernel2D::new(2, vec![0.25; 4]).is_err());
        assert!(Kernel2D::new(3, vec![0.1; 9]).is_err());
    }

    #[test]
    fn motion_kernels() {
        assert_eq!(motion_kernel(1, 37.0), Kernel2D::identity());
        let k = motion_kernel(3, 0.0);
        assert_eq!(k.size(), 3);
        for kx in 0..3 {
            assert!((k.weight(kx, 1) - 1.0 / 3.0).abs() < 1e-12);
            assert_eq!(k.weight(kx, 0), 0.0);
            assert_eq!(k.weight(kx, 2), 0.0);
        }
        for (len, ang) in [(10, 15.0), (15, 20.0), (20, 25.0), (7, 90.0), (4, 135.0)] {
            let k = motion_kernel(len, ang);
            let sum: f64 = k.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert_eq!(k.size() % 2, 1);
        }
    }

    #[test]
    fn motion_kernel_leans_up_for_positive_angle() {
        // 45 degrees counter-clockwise: the right end of the line is above centre.
        let k = motion_kernel(5, 45.0);
        let r = k.size() / 2;
        assert!(k.weight(r + 1, r - 1) > 0.0);
        assert_eq!(k.weight(r + 1, r + 1), 0.0);
    }
}
