//! Netpbm graymap (PGM) reader and writer, ASCII `P2` and binary `P5`.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major intensities in `0..=maxval`.
    pub pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, maxval: u16, pixels: Vec<u16>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if maxval == 0 {
            return Err(Error::usage("maxval must be ≥ 1"));
        }
        if let Some(p) = pixels.iter().find(|&&p| p > maxval) {
            return Err(Error::usage(format!("pixel {p} exceeds maxval {maxval}")));
        }
        Ok(GrayImage {
            width,
            height,
            maxval,
            pixels,
        })
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Skips whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        self.skip_separators();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(self.pos) {
                None => parse_err(start, format!("unexpected end of data reading {what}")),
                Some(b) => parse_err(start, format!("expected {what}, found byte 0x{b:02x}")),
            });
        }
        if self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            return Err(parse_err(self.pos, format!("malformed {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| parse_err(start, format!("{what} out of range")))
    }
}

/// Parses a PGM file held in memory.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let binary = match bytes.get(..2) {
        Some(b"P2") => false,
        Some(b"P5") => true,
        _ => return Err(parse_err(0, "missing P2/P5 magic number")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !cur
        .bytes
        .get(2)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(parse_err(2, "magic number must be followed by whitespace"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(maxval_at, "image dimensions must be positive"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    let count = (width as usize)
        .checked_mul(height as usize)
        .filter(|&c| c <= 1 << 30)
        .ok_or_else(|| parse_err(maxval_at, "image too large"))?;
    let maxval = maxval as u16;
    let mut pixels = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(parse_err(cur.pos, "missing whitespace before raster"));
        }
        let start = cur.pos + 1;
        let width_bytes = if maxval > 255 { 2 } else { 1 };
        let needed = count * width_bytes;
        let raster = bytes
            .get(start..start + needed)
            .ok_or_else(|| parse_err(bytes.len(), format!("truncated raster: need {needed} bytes")))?;
        for (k, chunk) in raster.chunks_exact(width_bytes).enumerate() {
            let v = if width_bytes == 2 {
                u16::from_be_bytes([chunk[0], chunk[1]])
            } else {
                chunk[0] as u16
            };
            if v > maxval {
                return Err(parse_err(start + k * width_bytes, format!("sample {v} exceeds maxval")));
            }
            pixels.push(v);
        }
    } else {
        for _ in 0..count {
            let at = cur.pos;
            let v = cur.number("sample")?;
            if v > maxval as u64 {
                return Err(parse_err(at, format!("sample {v} exceeds maxval")));
            }
            pixels.push(v as u16);
        }
    }
    Ok(GrayImage {
        width: width as usize,
        height: height as usize,
        maxval,
        pixels,
    })
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let bytes = std::fs::read(path.as_ref())?;
    parse_pgm(&bytes)
}

/// Serializes an image as `P2` (ASCII) or `P5` (binary).
pub fn encode_pgm(image: &GrayImage, ascii: bool) -> Vec<u8> {
    let mut out = format!(
        "{}\n{} {}\n{}\n",
        if ascii { "P2" } else { "P5" },
        image.width,
        image.height,
        image.maxval
    )
    .into_bytes();
    if ascii {
        for row in image.pixels.chunks(image.width.max(1)) {
            let line: Vec<String> = row.iter().map(u16::to_string).collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    } else if image.maxval > 255 {
        for p in &image.pixels {
            out.extend_from_slice(&p.to_be_bytes());
        }
    } else {
        out.extend(image.pixels.iter().map(|&p| p as u8));
    }
    out
}

pub fn write_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    std::fs::write(path, encode_pgm(image, false))?;
    Ok(())
}

/// Block-averages an image by an integer factor; trailing rows and columns
/// that do not fill a block are dropped. Returns `(height, width, values)`.
pub fn downsample(image: &GrayImage, factor: usize) -> Result<(usize, usize, Vec<f64>)> {
    if factor == 0 {
        return Err(Error::usage("downsample factor must be ≥ 1"));
    }
    let (h, w) = (image.height / factor, image.width / factor);
    if h == 0 || w == 0 {
        return Err(Error::usage("downsample factor larger than the image"));
    }
    let area = (factor * factor) as f64;
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for dr in 0..factor {
                for dc in 0..factor {
                    acc += image.pixels[(r * factor + dr) * image.width + c * factor + dc] as f64;
                }
            }
            out.push(acc / area);
        }
    }
    Ok((h, w, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_ascii() {
        let img = parse_pgm(b"P2\n2 2\n255\n0 255\n128 64\n").unwrap();
        assert_eq!((img.width, img.height, img.maxval), (2, 2, 255));
        assert_eq!(img.pixels, vec![0, 255, 128, 64]);
    }

    #[test]
    fn comments_are_skipped() {
        let img = parse_pgm(b"P2 # made by hand\n# another\n3 1 # dims\n7\n1 2 # trailing\n 3\n").unwrap();
        assert_eq!(img.pixels, vec![1, 2, 3]);
    }

    #[test]
    fn sixteen_bit_binary_is_big_endian() {
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x01, 0x02, 0xFF, 0xFE]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.pixels, vec![0x0102, 0xFFFE]);
    }

    #[test]
    fn truncated_raster_reports_offset() {
        let err = parse_pgm(b"P5\n4 4\n255\n\x01\x02").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 13, .. }), "{err}");
    }

    #[test]
    fn header_mutations_rejected() {
        let cases: [&[u8]; 8] = [
            b"P3\n1 1\n255\n0",
            b"P2\n-1 1\n255\n0",
            b"P2\n1 -1\n255\n0",
            b"P2\n0 1\n255\n",
            b"P2\n1 1\n0\n0",
            b"P2\n1 1\n70000\n0",
            b"P2\n1 1\n255\n256",
            b"P2\n1x 1\n255\n0",
        ];
        for c in cases {
            assert!(matches!(parse_pgm(c), Err(Error::Parse { .. })), "{:?}", String::from_utf8_lossy(c));
        }
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = GrayImage::new(4, 2, 255, vec![0, 2, 4, 6, 2, 4, 6, 8]).unwrap();
        let (h, w, v) = downsample(&img, 2).unwrap();
        assert_eq!((h, w), (1, 2));
        assert_eq!(v, vec![2.0, 6.0]);
    }
}
