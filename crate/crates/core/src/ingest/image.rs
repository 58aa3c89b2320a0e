use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}×{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        GrayImage {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    /// Mean intensity of the `size×size` window centred on `(x, y)`, clipped to the image.
    pub fn window_mean(&self, x: f64, y: f64, size: usize) -> f64 {
        let half = size as f64 / 2.0;
        let r0 = (y - half).round().max(0.0) as usize;
        let c0 = (x - half).round().max(0.0) as usize;
        let r1 = ((y + half).round() as usize).min(self.height);
        let c1 = ((x + half).round() as usize).min(self.width);
        let mut sum = 0.0;
        let mut n = 0usize;
        for r in r0..r1 {
            for c in c0..c1 {
                sum += self.get(r, c) as f64;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("missing P5 magic".into());
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between header tokens
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
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("header value out of range")?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("header must end with a single whitespace byte".into());
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format!("bad dimensions {width}×{height}"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval: maxval as u32,
        data_start: pos + 1,
    })
}

/// Decodes a binary (P5) PGM, dividing samples by maxval.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let h = parse_header(bytes)?;
    let n = h.width * h.height;
    let sample = if h.maxval < 256 { 1 } else { 2 };
    let data = &bytes[h.data_start..];
    if data.len() < n * sample {
        return Err(format!(
            "expected {} data bytes for {}×{}, found {}",
            n * sample,
            h.width,
            h.height,
            data.len()
        ));
    }
    let scale = 1.0 / h.maxval as f32;
    let pixels = if sample == 1 {
        data[..n].iter().map(|&b| b as f32 * scale).collect()
    } else {
        data[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 * scale)
            .collect()
    };
    Ok(GrayImage {
        height: h.height,
        width: h.width,
        pixels,
    })
}

/// Encodes as 16-bit binary PGM (maxval 65535, big-endian samples).
pub fn encode_pgm16(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    out.reserve(img.pixels.len() * 2);
    for &v in &img.pixels {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_pgm(&bytes).map_err(|message| Error::Image {
        path: path.to_path_buf(),
        message,
    })
}

pub fn save_image(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm16(img)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_8bit() {
        let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.pixels[0], 0.0);
        assert_eq!(img.pixels[1], 1.0);
        assert!((img.pixels[2] - 0.502).abs() < 1e-3);
        assert!((img.pixels[3] - 0.251).abs() < 1e-3);
    }

    #[test]
    fn decodes_16bit_full_scale() {
        let mut bytes = b"P5 1 1 65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff]);
        assert_eq!(decode_pgm(&bytes).unwrap().pixels, vec![1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode_pgm(b"P2\n1 1\n255\n\0").is_err());
        assert!(decode_pgm(b"P5\n0 1\n255\n").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\0\0").is_err());
        assert!(decode_pgm(b"P5\n2 x\n255\n").is_err());
    }

    proptest! {
        #[test]
        fn quantized_round_trip(pixels in prop::collection::vec(0.0f32..=1.0, 12)) {
            let img = GrayImage::new(3, 4, pixels).unwrap();
            let back = decode_pgm(&encode_pgm16(&img)).unwrap();
            prop_assert_eq!(back.dims(), (3, 4));
            for (a, b) in img.pixels.iter().zip(&back.pixels) {
                prop_assert!((a - b).abs() <= 1.0 / 65535.0);
            }
        }
    }
}
