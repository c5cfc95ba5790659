//! Tiling generated samples into one contact-sheet image.

use crate::data::ImageU8;
use crate::error::{Error, Result};

/// Gutter and border width in pixels, black.
const GUTTER: usize = 2;

/// Tile images left-to-right, top-to-bottom into ceil(n/cols) rows with
/// 2-pixel black gutters and outer border. A short final row is padded
/// with black tiles. All images must share one size. When there are fewer
/// images than columns the canvas shrinks to the used columns.
pub fn emit_grid(images: &[ImageU8], cols: usize) -> Result<ImageU8> {
    if images.is_empty() {
        return Err(Error::InvalidArgument {
            context: "emit_grid: no images to tile".to_string(),
        });
    }
    if cols == 0 {
        return Err(Error::InvalidArgument {
            context: "emit_grid: cols must be at least 1".to_string(),
        });
    }
    let (th, tw) = (images[0].height, images[0].width);
    for (i, img) in images.iter().enumerate() {
        if img.height != th || img.width != tw {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "emit_grid: image {i} is {}x{}, expected {th}x{tw}",
                    img.height, img.width
                ),
            });
        }
    }
    let eff_cols = cols.min(images.len());
    let rows = images.len().div_ceil(eff_cols);
    let height = rows * th + (rows + 1) * GUTTER;
    let width = eff_cols * tw + (eff_cols + 1) * GUTTER;
    let mut canvas = ImageU8::filled(height, width, [0, 0, 0])?;
    for (i, img) in images.iter().enumerate() {
        let y0 = GUTTER + (i / eff_cols) * (th + GUTTER);
        let x0 = GUTTER + (i % eff_cols) * (tw + GUTTER);
        for y in 0..th {
            for x in 0..tw {
                canvas.set_pixel(y0 + y, x0 + x, img.pixel(y, x));
            }
        }
    }
    Ok(canvas)
}
