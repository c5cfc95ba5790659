//! Image ingestion, resizing, normalization, and deterministic batching.
//!
//! Decoding goes through the `image` codecs (PNG and JPEG); everything
//! after the decode (promotion to RGB, bilinear resize, range mapping,
//! epoch shuffling) is implemented here so the numeric contract stays
//! in one place. No augmentation of any kind: images are resized to the
//! model extent and rescaled to [−1, 1], nothing else.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

/// An 8-bit RGB image, interleaved row-major: `data[(y*width + x)*3 + c]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    pub height: usize,
    pub width: usize,
    data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<ImageU8> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument {
                context: format!("image dimensions {height}x{width} must be at least 1x1"),
            });
        }
        if data.len() != height * width * 3 {
            return Err(Error::LengthMismatch {
                expected: height * width * 3,
                actual: data.len(),
            });
        }
        Ok(ImageU8 {
            height,
            width,
            data,
        })
    }

    /// Solid-color image.
    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<ImageU8> {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        ImageU8::new(height, width, data)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let base = (y * self.width + x) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let base = (y * self.width + x) * 3;
        self.data[base..base + 3].copy_from_slice(&rgb);
    }
}

/// Decode an image file to 8-bit RGB. Grayscale is promoted by channel
/// replication; alpha is dropped. Unreadable files and unrecognized or
/// unsupported formats produce distinct errors.
pub fn load_image(path: &Path) -> Result<ImageU8> {
    let unreadable = |detail: String| Error::ImageUnreadable {
        path: path.to_path_buf(),
        detail,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| unreadable(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| unreadable(e.to_string()))?;
    if reader.format().is_none() {
        return Err(Error::ImageUnsupportedFormat {
            path: path.to_path_buf(),
            detail: "not a recognized image format".to_string(),
        });
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::Unsupported(u) => Error::ImageUnsupportedFormat {
            path: path.to_path_buf(),
            detail: u.to_string(),
        },
        other => unreadable(other.to_string()),
    })?;
    let rgb = decoded.to_rgb8();
    ImageU8::new(rgb.height() as usize, rgb.width() as usize, rgb.into_raw())
}

/// Write an image as PNG. The encode is deterministic: equal pixels give
/// equal bytes.
pub fn save_png(path: &Path, img: &ImageU8) -> Result<()> {
    image::save_buffer_with_format(
        path,
        &img.data,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: io::Error::other(e.to_string()),
    })
}

/// Bilinear resize with pixel-center alignment: output pixel i samples the
/// input at (i + 0.5) * in/out − 0.5, edge-clamped. Aspect ratio is NOT
/// preserved; callers squash rectangular photos to squares deliberately.
pub fn resize_bilinear(img: &ImageU8, out_h: usize, out_w: usize) -> ImageU8 {
    assert!(out_h >= 1 && out_w >= 1, "resize target must be at least 1x1");
    let (h, w) = (img.height, img.width);
    let mut data = vec![0u8; out_h * out_w * 3];
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let fy = sy - y0 as f64;
        let y1 = (y0 + 1).min(h - 1);
        for ox in 0..out_w {
            let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let fx = sx - x0 as f64;
            let x1 = (x0 + 1).min(w - 1);
            for c in 0..3 {
                let p00 = img.data[(y0 * w + x0) * 3 + c] as f64;
                let p01 = img.data[(y0 * w + x1) * 3 + c] as f64;
                let p10 = img.data[(y1 * w + x0) * 3 + c] as f64;
                let p11 = img.data[(y1 * w + x1) * 3 + c] as f64;
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                let v = top + (bottom - top) * fy;
                data[(oy * out_w + ox) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageU8 {
        height: out_h,
        width: out_w,
        data,
    }
}

/// Map bytes to the generator's tanh range: v/127.5 − 1, channels-first
/// [3, H, W].
pub fn to_model_range<T: Scalar>(img: &ImageU8) -> Tensor<T> {
    let (h, w) = (img.height, img.width);
    let mut out = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = img.data[(y * w + x) * 3 + c] as f64 / 127.5 - 1.0;
                out.data_mut()[c * h * w + y * w + x] = T::from_f64(v);
            }
        }
    }
    out
}

/// Inverse of `to_model_range`: round((x+1) * 127.5), clamped to u8.
/// Recovers the original byte exactly for every byte value.
pub fn from_model_range<T: Scalar>(t: &Tensor<T>) -> Result<ImageU8> {
    if t.shape().len() != 3 || t.shape()[0] != 3 {
        return Err(Error::ShapeMismatch {
            context: format!("from_model_range: expected [3, H, W], got {:?}", t.shape()),
        });
    }
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let mut data = vec![0u8; h * w * 3];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = (t.data()[c * h * w + y * w + x].as_f64() + 1.0) * 127.5;
                data[(y * w + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageU8::new(h, w, data)
}

/// Lexicographically ordered list of image files under a root directory.
/// The ordering is over the path strings with `/` separators, so an index
/// built from the same tree is identical on any platform.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    root: PathBuf,
    paths: Vec<PathBuf>,
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
    )
}

fn collect_images(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.is_dir() {
            collect_images(&path, out)?;
        } else if is_image_file(&path) {
            out.push(path);
        }
    }
    Ok(())
}

impl DatasetIndex {
    /// Recursively index PNG/JPEG files under `root`, sorted by path.
    pub fn scan(root: &Path) -> Result<DatasetIndex> {
        let mut paths = Vec::new();
        collect_images(root, &mut paths)?;
        if paths.is_empty() {
            return Err(Error::EmptyDataset {
                path: root.to_path_buf(),
            });
        }
        paths.sort_by(|a, b| {
            a.to_string_lossy()
                .replace('\\', "/")
                .cmp(&b.to_string_lossy().replace('\\', "/"))
        });
        Ok(DatasetIndex {
            root: root.to_path_buf(),
            paths,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn path(&self, i: usize) -> &Path {
        &self.paths[i]
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

/// Shuffle 0..n with the given stream and chunk into batches. The final
/// short batch is dropped iff `drop_last`.
pub fn make_epoch_batches(
    index: &DatasetIndex,
    batch_size: usize,
    rng: &mut RngStream,
    drop_last: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument {
            context: "batch_size must be at least 1".to_string(),
        });
    }
    if index.is_empty() {
        return Err(Error::EmptyDataset {
            path: index.root().to_path_buf(),
        });
    }
    let mut order: Vec<usize> = (0..index.len()).collect();
    rng.shuffle(&mut order);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if drop_last {
        if let Some(last) = batches.last() {
            if last.len() < batch_size {
                batches.pop();
            }
        }
    }
    Ok(batches)
}

/// Write a procedural dataset of `n` two-tone 64x64 PNGs: a horizontal
/// boundary splits each image into a top color and a bottom color, both
/// drawn from the seeded stream. Useful for smoke training where a real
/// photo corpus would be overkill.
pub fn write_two_tone_dataset(dir: &Path, n: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut rng = RngStream::new(seed, 0);
    for i in 0..n {
        let split = 16 + rng.next_below(32) as usize;
        let top = [
            rng.next_below(256) as u8,
            rng.next_below(256) as u8,
            rng.next_below(256) as u8,
        ];
        let bottom = [
            rng.next_below(256) as u8,
            rng.next_below(256) as u8,
            rng.next_below(256) as u8,
        ];
        let mut img = ImageU8::filled(64, 64, top)?;
        for y in split..64 {
            for x in 0..64 {
                img.set_pixel(y, x, bottom);
            }
        }
        save_png(&dir.join(format!("img_{i:04}.png")), &img)?;
    }
    Ok(())
}
