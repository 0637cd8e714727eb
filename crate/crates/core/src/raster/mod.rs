//! Image grids shared by every stage of the pipeline.
//!
//! [`GrayImage`] carries intensities, distance fields and filter responses
//! alike; [`BinaryMask`] carries segmentations, tubes and skeleton renderings.

mod contour;
pub mod io;

pub use contour::{load_contours, rasterize_contours, Contour};

use crate::error::{Error, Result};

/// Fill value for distance fields computed from an empty feature set.
///
/// `width + height` exceeds every distance reachable inside the grid, so the
/// value can be stored in ordinary files without resorting to infinities.
pub fn no_feature_sentinel(width: usize, height: usize) -> f64 {
    (width + height) as f64
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions {
            width,
            height,
            reason: "width and height must be at least 1",
        });
    }
    Ok(())
}

/// Row-major 2D raster of finite `f64` values with isotropic pixel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    spacing: f64,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::InvalidDimensions {
                width,
                height,
                reason: "data length does not equal width * height",
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(GrayImage {
            width,
            height,
            spacing: 1.0,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        check_dims(width, height)?;
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage::new(width, height, data)
    }

    /// Sets the pixel spacing in millimetres. Non-positive or non-finite
    /// spacings are rejected.
    pub fn with_spacing(mut self, spacing_mm: f64) -> Result<Self> {
        if !(spacing_mm.is_finite() && spacing_mm > 0.0) {
            return Err(Error::param(
                "spacing_mm",
                format!("{spacing_mm} is not positive"),
            ));
        }
        self.spacing = spacing_mm;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Applies `f` to every value. The result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GrayImage> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Ok(GrayImage::new(self.width, self.height, data)?.with_spacing_unchecked(self.spacing))
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<GrayImage> {
        check_crop(self.dims(), x0, y0, width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(GrayImage {
            width,
            height,
            spacing: self.spacing,
            data,
        })
    }

    /// Rotates clockwise by a multiple of 90 degrees.
    pub fn rotate(&self, degrees: u32) -> Result<GrayImage> {
        let (w, h, data) = rotate_grid(self.width, self.height, &self.data, degrees)?;
        Ok(GrayImage {
            width: w,
            height: h,
            spacing: self.spacing,
            data,
        })
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub(crate) fn from_parts_unchecked(width: usize, height: usize, data: Vec<f64>) -> GrayImage {
        debug_assert_eq!(data.len(), width * height);
        GrayImage {
            width,
            height,
            spacing: 1.0,
            data,
        }
    }

    pub(crate) fn with_spacing_unchecked(mut self, spacing: f64) -> GrayImage {
        self.spacing = spacing;
        self
    }
}

/// Row-major boolean raster; `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if bits.len() != width * height {
            return Err(Error::InvalidDimensions {
                width,
                height,
                reason: "bit count does not equal width * height",
            });
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        BinaryMask::new(width, height, vec![false; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        check_dims(width, height)?;
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask::new(width, height, bits)
    }

    /// Builds a mask from rows of `0`/`1` characters (other characters are
    /// treated as background). Handy for fixtures.
    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        check_dims(width, height)?;
        let mut bits = Vec::with_capacity(width * height);
        for row in rows {
            if row.len() != width {
                return Err(Error::InvalidDimensions {
                    width,
                    height,
                    reason: "ragged rows",
                });
            }
            bits.extend(row.bytes().map(|b| b == b'1' || b == b'#'));
        }
        BinaryMask::new(width, height, bits)
    }

    /// Foreground wherever `img` is strictly above `threshold`.
    pub fn from_threshold(img: &GrayImage, threshold: f64) -> BinaryMask {
        BinaryMask {
            width: img.width(),
            height: img.height(),
            bits: img.data().iter().map(|&v| v > threshold).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Like [`get`](Self::get) but returns `false` outside the grid.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn xor(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a != b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        ensure_same_dims(self.dims(), other.dims())?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Foreground coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<BinaryMask> {
        check_crop(self.dims(), x0, y0, width, height)?;
        let mut bits = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            bits.extend_from_slice(&self.bits[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    /// Rotates clockwise by a multiple of 90 degrees.
    pub fn rotate(&self, degrees: u32) -> Result<BinaryMask> {
        let (width, height, bits) = rotate_grid(self.width, self.height, &self.bits, degrees)?;
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    /// Renders the mask as a 0/1 image.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_parts_unchecked(
            self.width,
            self.height,
            self.bits
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        )
    }
}

pub(crate) fn ensure_same_dims(left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left != right {
        return Err(Error::DimensionMismatch { left, right });
    }
    Ok(())
}

fn check_crop(
    dims: (usize, usize),
    x0: usize,
    y0: usize,
    width: usize,
    height: usize,
) -> Result<()> {
    check_dims(width, height)?;
    if x0 + width > dims.0 || y0 + height > dims.1 {
        return Err(Error::InvalidDimensions {
            width,
            height,
            reason: "crop window extends past the source bounds",
        });
    }
    Ok(())
}

/// Maps a pixel coordinate in the source grid to its position after a
/// clockwise rotation by `degrees` (a multiple of 90).
pub fn rotate_point(x: f64, y: f64, width: usize, height: usize, degrees: u32) -> (f64, f64) {
    let (w, h) = (width as f64, height as f64);
    match degrees % 360 {
        90 => (h - 1.0 - y, x),
        180 => (w - 1.0 - x, h - 1.0 - y),
        270 => (y, w - 1.0 - x),
        _ => (x, y),
    }
}

fn rotate_grid<T: Copy>(
    width: usize,
    height: usize,
    data: &[T],
    degrees: u32,
) -> Result<(usize, usize, Vec<T>)> {
    if !degrees.is_multiple_of(90) {
        return Err(Error::param(
            "rotation_deg",
            format!("{degrees} is not a multiple of 90"),
        ));
    }
    let deg = degrees % 360;
    let (nw, nh) = if deg.is_multiple_of(180) {
        (width, height)
    } else {
        (height, width)
    };
    let mut out = Vec::with_capacity(data.len());
    for ny in 0..nh {
        for nx in 0..nw {
            // Inverse of rotate_point.
            let (sx, sy) = match deg {
                90 => (ny, height - 1 - nx),
                180 => (width - 1 - nx, height - 1 - ny),
                270 => (width - 1 - ny, nx),
                _ => (nx, ny),
            };
            out.push(data[sy * width + sx]);
        }
    }
    Ok((nw, nh, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions_and_values() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(matches!(
            GrayImage::new(1, 2, vec![0.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(BinaryMask::new(2, 2, vec![true; 5]).is_err());
    }

    #[test]
    fn rotation_matches_point_mapping() {
        let img = GrayImage::from_fn(3, 2, |x, y| (y * 3 + x) as f64).unwrap();
        for deg in [0, 90, 180, 270] {
            let rot = img.rotate(deg).unwrap();
            for y in 0..2 {
                for x in 0..3 {
                    let (rx, ry) = rotate_point(x as f64, y as f64, 3, 2, deg);
                    assert_eq!(
                        rot.get(rx as usize, ry as usize),
                        img.get(x, y),
                        "deg {deg}"
                    );
                }
            }
        }
        let four = img
            .rotate(90)
            .unwrap()
            .rotate(90)
            .unwrap()
            .rotate(90)
            .unwrap()
            .rotate(90)
            .unwrap();
        assert_eq!(four, img);
        assert!(img.rotate(45).is_err());
    }

    #[test]
    fn crop_copies_window() {
        let m = BinaryMask::from_rows(&["0000", "0110", "0100"]).unwrap();
        let c = m.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c, BinaryMask::from_rows(&["11", "10"]).unwrap());
        assert!(m.crop(3, 0, 2, 1).is_err());
    }
}
