//! Grayscale image files (binary PGM and PNG) with a JSON sidecar.
//!
//! Plain images are stored with values in `[0, 1]` scaled to the full range
//! of the chosen bit depth. Distance fields and filter responses are stored
//! as *quantized fields*: the value range `[quant_min, quant_max]` is mapped
//! affinely onto `[0, maxval]` and recorded in `<stem>.meta.json` next to the
//! image. Quantization rounds half to even, so identical inputs always
//! produce identical bytes.

use std::fs;
use std::io::{BufReader, Cursor, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BinaryMask, GrayImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    pub fn from_bits(bits: u32) -> Result<BitDepth> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::Unsupported(format!("bit depth {other}"))),
        }
    }
}

/// Contents of the `<stem>.meta.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub spacing_mm: f64,
    #[serde(default)]
    pub quant_min: Option<f64>,
    #[serde(default)]
    pub quant_max: Option<f64>,
    /// Set to the fill value when the field was computed from an empty
    /// feature set.
    #[serde(default)]
    pub sentinel: Option<f64>,
}

impl Default for FieldMeta {
    fn default() -> Self {
        FieldMeta {
            spacing_mm: 1.0,
            quant_min: None,
            quant_max: None,
            sentinel: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileKind {
    Pgm,
    Png,
}

fn file_kind(path: &Path) -> Result<FileKind> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("pgm") => Ok(FileKind::Pgm),
        Some("png") => Ok(FileKind::Png),
        _ => Err(Error::Unsupported(format!(
            "file extension of {} (expected .pgm or .png)",
            path.display()
        ))),
    }
}

/// Path of the metadata sidecar for an image file: `dir/name.png` maps to
/// `dir/name.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn read_sidecar(path: &Path) -> Result<Option<FieldMeta>> {
    let meta_path = sidecar_path(path);
    match fs::read(&meta_path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(meta_path, e)),
    }
}

fn write_sidecar(path: &Path, meta: &FieldMeta) -> Result<()> {
    let meta_path = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    fs::write(&meta_path, text).map_err(|e| Error::io(meta_path, e))
}

/// Raw decoded samples before any scaling.
struct RawGray {
    width: usize,
    height: usize,
    maxval: u32,
    samples: Vec<u32>,
}

/// Loads an 8- or 16-bit grayscale PGM/PNG, scaling samples to `[0, 1]`.
/// Spacing comes from the sidecar when one exists.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let scale = raw.maxval as f64;
    let data = raw.samples.iter().map(|&s| s as f64 / scale).collect();
    let img = GrayImage::new(raw.width, raw.height, data)?;
    match read_sidecar(path)? {
        Some(meta) => img.with_spacing(meta.spacing_mm),
        None => Ok(img),
    }
}

/// Loads a binary mask: foreground wherever the scaled value exceeds 0.5.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    Ok(BinaryMask::from_threshold(&load_gray(path)?, 0.5))
}

/// Loads a quantized field and undoes the affine quantization recorded in
/// its sidecar. Files without quantization metadata load as `[0, 1]` images.
pub fn load_field(path: impl AsRef<Path>) -> Result<(GrayImage, FieldMeta)> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    let meta = read_sidecar(path)?.unwrap_or_default();
    let scale = raw.maxval as f64;
    let data: Vec<f64> = match (meta.quant_min, meta.quant_max) {
        (Some(lo), Some(hi)) => raw
            .samples
            .iter()
            .map(|&s| match s {
                0 => lo,
                s if s == raw.maxval => hi,
                s => lo + (s as f64 / scale) * (hi - lo),
            })
            .collect(),
        _ => raw.samples.iter().map(|&s| s as f64 / scale).collect(),
    };
    let img = GrayImage::new(raw.width, raw.height, data)?.with_spacing(meta.spacing_mm)?;
    Ok((img, meta))
}

#[inline]
fn quantize_unit(v: f64, maxval: u32) -> u32 {
    (v * maxval as f64)
        .round_ties_even()
        .clamp(0.0, maxval as f64) as u32
}

/// Saves an image whose values lie in `[0, 1]`.
///
/// A sidecar is written when the spacing differs from 1 mm; a stale sidecar
/// from an earlier save is removed otherwise.
pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let kind = file_kind(path)?;
    if let Some((index, &value)) = img
        .data()
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::OutOfRange { index, value });
    }
    let maxval = depth.maxval();
    let samples: Vec<u32> = img
        .data()
        .iter()
        .map(|&v| quantize_unit(v, maxval))
        .collect();
    write_raw(path, kind, img.width(), img.height(), depth, &samples)?;
    if img.spacing() != 1.0 {
        write_sidecar(
            path,
            &FieldMeta {
                spacing_mm: img.spacing(),
                ..FieldMeta::default()
            },
        )
    } else {
        remove_stale_sidecar(path)
    }
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_gray(&mask.to_image(), path, BitDepth::Eight)
}

/// Saves an arbitrary finite-valued field with affine quantization and
/// writes its sidecar. `sentinel` marks a no-feature distance field.
pub fn save_field(
    img: &GrayImage,
    path: impl AsRef<Path>,
    depth: BitDepth,
    sentinel: Option<f64>,
) -> Result<FieldMeta> {
    let path = path.as_ref();
    let kind = file_kind(path)?;
    let (lo, hi) = img.min_max();
    let maxval = depth.maxval();
    let span = hi - lo;
    let samples: Vec<u32> = img
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                quantize_unit((v - lo) / span, maxval)
            } else {
                0
            }
        })
        .collect();
    write_raw(path, kind, img.width(), img.height(), depth, &samples)?;
    let meta = FieldMeta {
        spacing_mm: img.spacing(),
        quant_min: Some(lo),
        quant_max: Some(hi),
        sentinel,
    };
    write_sidecar(path, &meta)?;
    Ok(meta)
}

fn remove_stale_sidecar(path: &Path) -> Result<()> {
    let meta_path = sidecar_path(path);
    match fs::remove_file(&meta_path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io(meta_path, e)),
    }
}

fn read_raw(path: &Path) -> Result<RawGray> {
    let kind = file_kind(path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match kind {
        FileKind::Pgm => decode_pgm(&bytes),
        FileKind::Png => decode_png(&bytes),
    }
}

fn write_raw(
    path: &Path,
    kind: FileKind,
    width: usize,
    height: usize,
    depth: BitDepth,
    samples: &[u32],
) -> Result<()> {
    let bytes = match kind {
        FileKind::Pgm => encode_pgm(width, height, depth, samples),
        FileKind::Png => encode_png(width, height, depth, samples)?,
    };
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn pack_samples(depth: BitDepth, samples: &[u32], out: &mut Vec<u8>) {
    match depth {
        BitDepth::Eight => out.extend(samples.iter().map(|&s| s as u8)),
        BitDepth::Sixteen => {
            for &s in samples {
                out.extend_from_slice(&(s as u16).to_be_bytes());
            }
        }
    }
}

pub(crate) fn encode_pgm(width: usize, height: usize, depth: BitDepth, samples: &[u32]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{}\n", depth.maxval()).into_bytes();
    pack_samples(depth, samples, &mut out);
    out
}

fn pgm_error(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "PGM",
        reason: reason.into(),
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<RawGray> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(pgm_error("missing magic number"));
    }
    match bytes[1] {
        b'5' => {}
        b'3' | b'6' => return Err(Error::Unsupported("non-grayscale".into())),
        b'2' => return Err(Error::Unsupported("ASCII (P2) PGM encoding".into())),
        _ => return Err(pgm_error("unknown magic number")),
    }
    let mut pos = 2;
    let mut header = [0u64; 3];
    for slot in header.iter_mut() {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(pgm_error("truncated header"));
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| pgm_error("header value out of range"))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(pgm_error("missing whitespace after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = header;
    let (width, height) = (width as usize, height as usize);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Unsupported(format!("PGM maxval {maxval}")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| pgm_error("image too large"))?;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let body = &bytes[pos..];
    if body.len() < n * bytes_per {
        return Err(pgm_error(format!(
            "expected {} data bytes, found {}",
            n * bytes_per,
            body.len()
        )));
    }
    let samples: Vec<u32> = if bytes_per == 1 {
        body[..n].iter().map(|&b| b as u32).collect()
    } else {
        body[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
            .collect()
    };
    if let Some(&s) = samples.iter().find(|&&s| s as u64 > maxval) {
        return Err(pgm_error(format!("sample {s} exceeds maxval {maxval}")));
    }
    Ok(RawGray {
        width,
        height,
        maxval: maxval as u32,
        samples,
    })
}

fn encode_png(width: usize, height: usize, depth: BitDepth, samples: &[u32]) -> Result<Vec<u8>> {
    let png_err = |e: png::EncodingError| Error::Format {
        format: "PNG",
        reason: e.to_string(),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(match depth {
            BitDepth::Eight => png::BitDepth::Eight,
            BitDepth::Sixteen => png::BitDepth::Sixteen,
        });
        enc.set_compression(png::Compression::Balanced);
        let mut writer = enc.write_header().map_err(png_err)?;
        let mut data = Vec::with_capacity(samples.len() * 2);
        pack_samples(depth, samples, &mut data);
        writer.write_image_data(&data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<RawGray> {
    let png_err = |e: png::DecodingError| Error::Format {
        format: "PNG",
        reason: e.to_string(),
    };
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let (color, bit_depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale {
        return Err(Error::Unsupported("non-grayscale".into()));
    }
    let depth = match bit_depth {
        png::BitDepth::Eight => BitDepth::Eight,
        png::BitDepth::Sixteen => BitDepth::Sixteen,
        other => return Err(Error::Unsupported(format!("bit depth {}", other as u8))),
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Unsupported("PNG image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let mut samples = Vec::with_capacity(width * height);
    for row in buf[..frame.buffer_size()].chunks_exact(frame.line_size) {
        match depth {
            BitDepth::Eight => samples.extend(row[..width].iter().map(|&b| b as u32)),
            BitDepth::Sixteen => samples.extend(
                row[..2 * width]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32),
            ),
        }
    }
    Ok(RawGray {
        width,
        height,
        maxval: depth.maxval(),
        samples,
    })
}

/// Encodes an 8-bit RGB PNG. Only used to produce fixtures that the loader
/// must reject.
#[doc(hidden)]
pub fn encode_rgb_png_for_tests(width: u32, height: u32, rgb: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("header");
        writer.write_image_data(rgb).expect("data");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn pgm_maxval_255_scales_linearly() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 128, 64]);
        fs::write(&p, bytes).unwrap();
        let img = load_gray(&p).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(img.spacing(), 1.0);
    }

    #[test]
    fn half_quantizes_with_ties_to_even() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("half.pgm");
        let img = GrayImage::filled(3, 2, 0.5).unwrap();
        save_gray(&img, &p, BitDepth::Eight).unwrap();
        let bytes = fs::read(&p).unwrap();
        // 0.5 * 255 = 127.5 -> 128 under round-half-even.
        assert!(bytes.ends_with(&[128; 6]));
    }

    #[test]
    fn repeated_saves_are_byte_identical() {
        let dir = tempdir().unwrap();
        let img = GrayImage::from_fn(17, 9, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0).unwrap();
        for ext in ["png", "pgm"] {
            let a = dir.path().join(format!("a.{ext}"));
            let b = dir.path().join(format!("b.{ext}"));
            save_gray(&img, &a, BitDepth::Sixteen).unwrap();
            save_gray(&img, &b, BitDepth::Sixteen).unwrap();
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        }
    }

    #[test]
    fn out_of_range_without_quantization_is_rejected() {
        let dir = tempdir().unwrap();
        let img = GrayImage::new(2, 1, vec![0.2, 1.5]).unwrap();
        let err = save_gray(&img, dir.path().join("x.png"), BitDepth::Eight).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { index: 1, .. }));
    }

    #[test]
    fn rgb_png_is_rejected_as_non_grayscale() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        fs::write(&p, encode_rgb_png_for_tests(2, 1, &[1, 2, 3, 4, 5, 6])).unwrap();
        let err = load_gray(&p).unwrap_err();
        assert_eq!(err.to_string(), "unsupported: non-grayscale");
    }

    #[test]
    fn unknown_extension_is_rejected() {
        let img = GrayImage::filled(1, 1, 0.0).unwrap();
        assert!(matches!(
            save_gray(&img, "/tmp/x.tiff", BitDepth::Eight),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn spacing_round_trips_through_sidecar() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("s.png");
        let img = GrayImage::filled(4, 4, 0.25)
            .unwrap()
            .with_spacing(0.3)
            .unwrap();
        save_gray(&img, &p, BitDepth::Eight).unwrap();
        assert!(sidecar_path(&p).ends_with("s.meta.json"));
        assert_eq!(load_gray(&p).unwrap().spacing(), 0.3);
        // Re-saving at unit spacing drops the sidecar.
        save_gray(&GrayImage::filled(4, 4, 0.25).unwrap(), &p, BitDepth::Eight).unwrap();
        assert!(!sidecar_path(&p).exists());
    }

    #[test]
    fn quantized_field_preserves_extremes_and_sentinel() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("f.png");
        let field = GrayImage::new(3, 1, vec![-4.0, 0.0, 12.0]).unwrap();
        let meta = save_field(&field, &p, BitDepth::Sixteen, None).unwrap();
        assert_eq!((meta.quant_min, meta.quant_max), (Some(-4.0), Some(12.0)));
        let (back, _) = load_field(&p).unwrap();
        assert_eq!(back.get(0, 0), -4.0);
        assert_eq!(back.get(2, 0), 12.0);
        assert!((back.get(1, 0)).abs() < 16.0 / 65535.0);

        let flat = GrayImage::filled(2, 2, 4.0).unwrap();
        save_field(&flat, &p, BitDepth::Eight, Some(4.0)).unwrap();
        let (back, meta) = load_field(&p).unwrap();
        assert_eq!(back.data(), &[4.0; 4]);
        assert_eq!(meta.sentinel, Some(4.0));
    }

    #[test]
    fn png_with_low_bit_depth_is_unsupported() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 8, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::One);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0b1010_1010]).unwrap();
        }
        let dir = tempdir().unwrap();
        let p = dir.path().join("bits.png");
        fs::write(&p, out).unwrap();
        assert!(matches!(load_gray(&p), Err(Error::Unsupported(_))));
    }
}
