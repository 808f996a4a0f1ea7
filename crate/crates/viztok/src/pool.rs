//! Patch extraction and non-overlapping mean pooling over a square grid.
//!
//! Grids are row-major: cell `(r, c)` of a side-`s` grid is row `r * s + c`.

use mmgen_core::{ImageTensor, Real};

use crate::error::VizError;

/// Splits an image into `(h/p)·(w/p)` raster-ordered patches, each flattened
/// as `(dy, dx, channel)`. Pixels are recentred from `[0,1]` to `[−1,1]`.
pub fn patchify<T: Real>(image: &ImageTensor, patch: usize) -> Vec<T> {
    let side_y = image.height / patch;
    let side_x = image.width / patch;
    let dim = patch * patch * image.channels;
    let mut out = Vec::with_capacity(side_y * side_x * dim);
    for py in 0..side_y {
        for px in 0..side_x {
            for dy in 0..patch {
                let y = py * patch + dy;
                let start = (y * image.width + px * patch) * image.channels;
                let end = start + patch * image.channels;
                out.extend(image.data[start..end].iter().map(|&v| T::lit(2.0 * v as f64 - 1.0)));
            }
        }
    }
    out
}

fn window(side: usize, grid: usize) -> Result<usize, VizError> {
    if grid == 0 || side % grid != 0 {
        return Err(VizError::Indivisible { side, grid });
    }
    Ok(side / grid)
}

/// Mean of each `(side/grid)²` window of a `side × side × dim` grid.
pub fn pool_to_grid<T: Real>(
    x: &[T],
    side: usize,
    dim: usize,
    grid: usize,
) -> Result<Vec<T>, VizError> {
    let win = window(side, grid)?;
    if x.len() != side * side * dim {
        return Err(VizError::Length {
            got: x.len(),
            want: side * side * dim,
        });
    }
    let inv = T::one() / T::of_usize(win * win);
    let mut out = vec![T::zero(); grid * grid * dim];
    for r in 0..side {
        for c in 0..side {
            let cell = (r / win) * grid + c / win;
            let src = &x[(r * side + c) * dim..][..dim];
            let dst = &mut out[cell * dim..][..dim];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s * inv;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`pool_to_grid`]: spreads each cell gradient evenly over its
/// window.
pub fn pool_to_grid_backward<T: Real>(
    dy: &[T],
    side: usize,
    dim: usize,
    grid: usize,
) -> Result<Vec<T>, VizError> {
    let win = window(side, grid)?;
    let inv = T::one() / T::of_usize(win * win);
    let mut dx = vec![T::zero(); side * side * dim];
    for r in 0..side {
        for c in 0..side {
            let cell = (r / win) * grid + c / win;
            let src = &dy[cell * dim..][..dim];
            for (d, &s) in dx[(r * side + c) * dim..][..dim].iter_mut().zip(src) {
                *d = s * inv;
            }
        }
    }
    Ok(dx)
}
