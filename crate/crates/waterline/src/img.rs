//! RGB frame container, PPM/PGM codec (P6/P3/P5/P2 read, P6 write),
//! line rasterization and overlay drawing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const BLUE: [u8; 3] = [0, 0, 255];
pub const RED: [u8; 3] = [255, 0, 0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Draw a pixel set in a solid color, ignoring out-of-bounds points.
    pub fn draw_pixels(&mut self, pixels: &[(i64, i64)], rgb: [u8; 3]) {
        for &(x, y) in pixels {
            if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                self.set(x as usize, y as usize, rgb);
            }
        }
    }
}

/// All pixels of the line segment from a to b (Bresenham), endpoints included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x0, mut y0) = a;
    let (x1, y1) = b;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    loop {
        out.push((x0, y0));
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Netpbm codec
// ---------------------------------------------------------------------------

pub fn save_ppm(image: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    decode_netpbm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Decode P6/P3 PPM or P5/P2 PGM; grayscale is replicated to three channels.
pub fn decode_netpbm(bytes: &[u8]) -> Result<Image> {
    let mut p = PnmParser { bytes, pos: 0 };
    let magic = p.token()?;
    let (color, binary) = match magic.as_str() {
        "P6" => (true, true),
        "P3" => (true, false),
        "P5" => (false, true),
        "P2" => (false, false),
        other => return Err(Error::Format(format!("unsupported netpbm magic {other:?}"))),
    };
    let width = p.usize_token()?;
    let height = p.usize_token()?;
    let maxval = p.usize_token()?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    let channels = if color { 3 } else { 1 };
    let count = width * height * channels;
    let mut samples = Vec::with_capacity(count);
    if binary {
        // a single whitespace byte separates header and raster
        p.pos += 1;
        if p.pos + count > bytes.len() {
            return Err(Error::Format("truncated raster".to_string()));
        }
        samples.extend_from_slice(&bytes[p.pos..p.pos + count]);
    } else {
        for _ in 0..count {
            let v = p.usize_token()?;
            if v > maxval {
                return Err(Error::Format(format!("sample {v} exceeds maxval {maxval}")));
            }
            samples.push(v as u8);
        }
    }
    if maxval != 255 {
        for s in &mut samples {
            *s = ((*s as usize * 255) / maxval) as u8;
        }
    }
    let data = if color {
        samples
    } else {
        samples.iter().flat_map(|&v| [v, v, v]).collect()
    };
    Ok(Image {
        width,
        height,
        data,
    })
}

struct PnmParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmParser<'_> {
    fn token(&mut self) -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("unexpected end of header".to_string()));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn usize_token(&mut self) -> Result<usize> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| Error::Format(format!("expected integer, got {t:?}")))
    }
}
