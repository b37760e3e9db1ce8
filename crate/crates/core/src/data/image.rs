//! 8-bit grayscale images and their on-disk codecs (binary PGM, PNG).

use std::fs;
use std::io::{BufReader, Cursor};
use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel 8-bit image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!("empty image {width}x{height}")));
        }
        if width * height != pixels.len() {
            return Err(Error::Input(format!(
                "{width}x{height} image needs {} bytes, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// Quantize a `[0,1]` float plane (values are clamped).
    pub fn from_unit(width: usize, height: usize, plane: &[f64]) -> Result<Self> {
        let pixels = plane.iter().map(|&v| quantize(v * 255.0)).collect();
        Self::new(width, height, pixels)
    }

    /// Quantize a plane already in `[0,255]` units.
    pub fn from_levels(width: usize, height: usize, plane: &[f64]) -> Result<Self> {
        Self::new(width, height, plane.iter().map(|&v| quantize(v)).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Working representation in `[0,1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    pub fn to_levels(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width) {
            pixels.extend(row.iter().rev());
        }
        GrayImage { pixels, ..*self }
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    let magic = next_token(bytes, &mut pos).ok_or_else(|| Error::format(path, "empty file"))?;
    if magic != b"P5" {
        return Err(Error::format(path, "not a binary PGM (expected P5)"));
    }
    for f in fields.iter_mut() {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| Error::format(path, "truncated header"))?;
        *f = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "malformed header field"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(path, format!("unsupported bit depth (maxval {maxval})")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| Error::format(path, "truncated raster"))?;
    GrayImage::new(w, h, raster.to_vec()).map_err(|e| Error::format(path, e.to_string()))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let err = |e: png::EncodingError| Error::Input(format!("png encode: {e}"));
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(err)?;
        writer.write_image_data(&img.pixels).map_err(err)?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let mut dec = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(
            path,
            format!(
                "only 8-bit single-channel PNG is supported, got {:?} at {:?}",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut pixels = Vec::with_capacity(w * h);
    for row in buf.chunks(frame.line_size).take(h) {
        pixels.extend_from_slice(&row[..w]);
    }
    GrayImage::new(w, h, pixels).map_err(|e| Error::format(path, e.to_string()))
}

/// Load an 8-bit grayscale PGM (P5) or PNG, chosen by file signature.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes, path)
    } else if bytes.starts_with(b"P") {
        decode_pgm(&bytes, path)
    } else {
        Err(Error::format(path, "unrecognized image format"))
    }
}

/// Write PNG when the extension is `.png`, PGM otherwise.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => encode_png(img)?,
        _ => encode_pgm(img),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tiny_pgm_payload() {
        let bytes = b"P5\n# comment\n2 2\n255\n\x00\xff\x80\x40";
        let img = decode_pgm(bytes, Path::new("t.pgm")).unwrap();
        assert_eq!(img.pixels(), &[0, 255, 128, 64]);
    }

    #[test]
    fn sixteen_bit_pgm_rejected() {
        let bytes = b"P5\n1 1\n65535\n\x00\x00";
        let err = decode_pgm(bytes, Path::new("deep.pgm")).unwrap_err();
        assert!(err.to_string().contains("deep.pgm"));
    }

    #[test]
    fn rgb_png_rejected() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[1, 2, 3]).unwrap();
        }
        assert!(matches!(decode_png(&out, Path::new("rgb.png")), Err(Error::Format { .. })));
    }

    #[test]
    fn flip_is_involution() {
        let img = GrayImage::new(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(img.flip_horizontal().pixels(), &[3, 2, 1, 6, 5, 4]);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }

    proptest! {
        #[test]
        fn codecs_roundtrip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let pixels: Vec<u8> = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 7) >> 13) as u8).collect();
            let img = GrayImage::new(w, h, pixels).unwrap();
            prop_assert_eq!(&decode_pgm(&encode_pgm(&img), Path::new("x")).unwrap(), &img);
            prop_assert_eq!(&decode_png(&encode_png(&img).unwrap(), Path::new("x")).unwrap(), &img);
        }
    }
}
