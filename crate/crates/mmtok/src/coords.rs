//! Bounding boxes, coordinate bins and localization images.

use mmgen_core::ImageTensor;

use crate::error::TokError;
use crate::vocab::NUM_LOC;

const MAX_LOC: usize = NUM_LOC - 1;

/// Box corners as fractions of image width/height.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, TokError> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), TokError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if [self.x1, self.y1, self.x2, self.y2].into_iter().all(unit)
            && self.x1 <= self.x2
            && self.y1 <= self.y2
        {
            Ok(())
        } else {
            Err(TokError::InvalidBox {
                x1: self.x1,
                y1: self.y1,
                x2: self.x2,
                y2: self.y2,
            })
        }
    }

    /// Loc indices for `(x1, y1, x2, y2)`.
    pub fn quantized(&self) -> Result<[usize; 4], TokError> {
        self.validate()?;
        Ok([
            quantize_coord(self.x1)?,
            quantize_coord(self.y1)?,
            quantize_coord(self.x2)?,
            quantize_coord(self.y2)?,
        ])
    }
}

/// `round(c · 224)`.
pub fn quantize_coord(c: f64) -> Result<usize, TokError> {
    if !(0.0..=1.0).contains(&c) {
        return Err(TokError::CoordOutOfRange(c));
    }
    Ok((c * MAX_LOC as f64).round() as usize)
}

pub fn dequantize_coord(i: usize) -> Result<f64, TokError> {
    if i > MAX_LOC {
        return Err(TokError::LocOutOfRange(i));
    }
    Ok(i as f64 / MAX_LOC as f64)
}

/// Black `size × size` RGB canvas with each box outlined at intensity 1.0.
///
/// Corners land on `round(coord · (size − 1))`; a box that collapses in one or
/// both axes is drawn as a line or a single pixel.
pub fn render_localization_image(boxes: &[BBox], size: usize) -> Result<ImageTensor, TokError> {
    if size < 8 {
        return Err(TokError::CanvasTooSmall(size));
    }
    let mut img = ImageTensor::black(size, size, 3);
    let px = |c: f64| (c * (size - 1) as f64).round() as usize;
    let white = [1.0f32; 3];
    for b in boxes {
        b.validate()?;
        let (x1, y1, x2, y2) = (px(b.x1), px(b.y1), px(b.x2), px(b.y2));
        for x in x1..=x2 {
            img.set_pixel(y1, x, &white);
            img.set_pixel(y2, x, &white);
        }
        for y in y1..=y2 {
            img.set_pixel(y, x1, &white);
            img.set_pixel(y, x2, &white);
        }
    }
    Ok(img)
}
