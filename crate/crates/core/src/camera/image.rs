//! 8-bit image buffer with PGM/PPM/PNG I/O and bilinear sampling.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("buffer length {got} does not match {width}x{height}x{channels}")]
    BadBufferLength {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
    #[error("unsupported channel count {0} (expected 1 or 4)")]
    BadChannels(usize),
    #[error("image dimensions mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major 8-bit image, 1 (gray) or 4 (BGRA camera buffer) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
    /// Capture timestamp in microseconds.
    pub timestamp_us: u64,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 4 {
            return Err(ImageError::BadChannels(channels));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::BadBufferLength {
                width,
                height,
                channels,
                got: data.len(),
            });
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
            timestamp_us: 0,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            channels: 1,
            data: vec![0; width * height],
            timestamp_us: 0,
        }
    }

    /// Builds a grayscale image from a per-pixel generator.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            channels: 1,
            data,
            timestamp_us: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        let i = (y * self.width + x) * self.channels;
        self.data[i] = v;
    }

    /// Converts a 4-channel frame to intensity with the standard luminance
    /// weights (0.299, 0.587, 0.114); channel order B, G, R, A.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks_exact(4) {
            let (b, g, r) = (px[0] as f64, px[1] as f64, px[2] as f64);
            let y = 0.299 * r + 0.587 * g + 0.114 * b;
            data.push(y.round().clamp(0.0, 255.0) as u8);
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
            timestamp_us: self.timestamp_us,
        }
    }

    /// Bilinear sample of the first channel at continuous pixel coordinates.
    /// Returns `None` outside the valid interpolation domain.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        if x0 + 1 >= self.width || y0 + 1 >= self.height {
            // allow exact hits on the last row/column
            if x0 < self.width && y0 < self.height && x == x0 as f64 && y == y0 as f64 {
                return Some(self.get(x0, y0) as f64);
            }
            return None;
        }
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x0 + 1, y0) as f64;
        let p01 = self.get(x0, y0 + 1) as f64;
        let p11 = self.get(x0 + 1, y0 + 1) as f64;
        Some(
            p00 * (1.0 - fx) * (1.0 - fy)
                + p10 * fx * (1.0 - fy)
                + p01 * (1.0 - fx) * fy
                + p11 * fx * fy,
        )
    }

    pub fn save_pgm(&self, path: &Path) -> Result<(), ImageError> {
        let gray = self.to_gray();
        let mut f = std::fs::File::create(path)?;
        write!(f, "P5\n{} {}\n255\n", gray.width, gray.height)?;
        f.write_all(&gray.data)?;
        Ok(())
    }

    pub fn save_ppm(&self, path: &Path) -> Result<(), ImageError> {
        let mut f = std::fs::File::create(path)?;
        write!(f, "P6\n{} {}\n255\n", self.width, self.height)?;
        if self.channels == 1 {
            for &v in &self.data {
                f.write_all(&[v, v, v])?;
            }
        } else {
            for px in self.data.chunks_exact(4) {
                f.write_all(&[px[2], px[1], px[0]])?;
            }
        }
        Ok(())
    }

    pub fn load_pgm(path: &Path) -> Result<Image, ImageError> {
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let magic = read_token(&mut reader)?;
        if magic != "P5" {
            return Err(ImageError::Format(format!("not a binary PGM: `{magic}`")));
        }
        let width: usize = parse_token(&mut reader)?;
        let height: usize = parse_token(&mut reader)?;
        let maxval: usize = parse_token(&mut reader)?;
        if maxval != 255 {
            return Err(ImageError::Format(format!("unsupported maxval {maxval}")));
        }
        let mut data = vec![0u8; width * height];
        reader.read_exact(&mut data)?;
        Image::new(width, height, 1, data)
    }

    /// Loads a dataset image via the `image` crate (PNG and friends) and
    /// converts to grayscale.
    pub fn load(path: &Path) -> Result<Image, ImageError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => Image::load_pgm(path),
            _ => {
                let img = image::open(path)
                    .map_err(|e| ImageError::Format(format!("{}: {e}", path.display())))?
                    .into_luma8();
                Image::new(img.width() as usize, img.height() as usize, 1, img.into_raw())
            }
        }
    }
}

fn read_token(reader: &mut impl BufRead) -> Result<String, ImageError> {
    let mut token = String::new();
    let mut in_comment = false;
    loop {
        let mut byte = [0u8; 1];
        reader.read_exact(&mut byte)?;
        let c = byte[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' {
            in_comment = true;
            continue;
        }
        if c.is_whitespace() {
            if !token.is_empty() {
                return Ok(token);
            }
            continue;
        }
        token.push(c);
    }
}

fn parse_token<T: std::str::FromStr>(reader: &mut impl BufRead) -> Result<T, ImageError> {
    read_token(reader)?
        .parse()
        .map_err(|_| ImageError::Format("bad header token".into()))
}
