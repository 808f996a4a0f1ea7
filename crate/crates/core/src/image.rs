//! Images as `height × width × channels` arrays of unit-interval intensities,
//! with binary PPM (P6) encoding.

use std::io::Write;
use std::path::Path;

use crate::error::CoreError;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major, channel-interleaved.
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn black(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: &[f32]) {
        let base = (y * self.width + x) * self.channels;
        self.data[base..base + self.channels].copy_from_slice(&rgb[..self.channels]);
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn clamped(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Channel-major copy (`C × H·W`) for convolutional code.
    pub fn to_planar(&self) -> Vec<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; self.data.len()];
        for p in 0..hw {
            for c in 0..self.channels {
                out[c * hw + p] = self.data[p * self.channels + c];
            }
        }
        out
    }

    pub fn from_planar(height: usize, width: usize, channels: usize, planar: &[f32]) -> Self {
        let hw = height * width;
        let mut data = vec![0.0; planar.len()];
        for p in 0..hw {
            for c in 0..channels {
                data[p * channels + c] = planar[c * hw + p];
            }
        }
        Self::from_vec(height, width, channels, data)
    }

    /// Binary PPM (P6); intensities are clamped and rounded to 8 bits.
    pub fn to_ppm(&self) -> Result<Vec<u8>, CoreError> {
        if self.channels != 3 {
            return Err(CoreError::Ppm(format!(
                "P6 needs 3 channels, image has {}",
                self.channels
            )));
        }
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        Ok(out)
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, CoreError> {
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(CoreError::Ppm("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if fields[0] != "P6" {
            return Err(CoreError::Ppm(format!("magic `{}`", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| CoreError::Ppm(format!("bad header field `{s}`")))
        };
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(CoreError::Ppm(format!("unsupported maxval {maxval}")));
        }
        let n = width * height * 3;
        let raster = bytes
            .get(pos..pos + n)
            .ok_or_else(|| CoreError::Ppm("truncated raster".into()))?;
        Ok(Self::from_vec(
            height,
            width,
            3,
            raster.iter().map(|&b| b as f32 / 255.0).collect(),
        ))
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), CoreError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_ppm()?)?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Self, CoreError> {
        Self::from_ppm(&std::fs::read(path)?)
    }
}
