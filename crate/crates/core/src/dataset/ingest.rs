use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageError, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetRole, IdentityDataset, ImageTensor};

/// Side length of preprocessed face images.
pub const FACE_SIZE: usize = 112;
const MIN_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channels {
    Gray,
    Rgb,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Gray => 1,
            Channels::Rgb => 3,
        }
    }

    pub fn from_count(count: usize) -> Option<Self> {
        match count {
            1 => Some(Channels::Gray),
            3 => Some(Channels::Rgb),
            _ => None,
        }
    }
}

/// Entries encountered by [`load_directory`] that did not become images.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    /// Identity directories without any PNG file.
    pub skipped_empty: Vec<String>,
    /// Files at the root, nested directories and non-PNG files.
    pub ignored: Vec<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Decodes a PNG without resizing, converting to the requested channel count.
pub fn load_png(path: &Path, channels: Channels) -> Result<ImageTensor, DatasetError> {
    let decoded = image::open(path).map_err(|e| match e {
        ImageError::IoError(source) => DatasetError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => DatasetError::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    from_dynamic(&decoded, channels)
}

fn from_dynamic(img: &DynamicImage, channels: Channels) -> Result<ImageTensor, DatasetError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = match channels {
        Channels::Gray => img.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        Channels::Rgb => img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
    };
    ImageTensor::new(h, w, channels.count(), pixels)
}

/// Writes a 16-bit grayscale or RGB PNG.
pub fn save_png16(img: &ImageTensor, path: &Path) -> Result<(), DatasetError> {
    let (h, w, c) = img.dims();
    let raw: Vec<u16> = img.pixels().iter().map(|&p| (p * 65535.0).round() as u16).collect();
    let result = match c {
        1 => ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, raw).map(|b| b.save(path)),
        3 => ImageBuffer::<Rgb<u16>, _>::from_raw(w as u32, h as u32, raw).map(|b| b.save(path)),
        other => {
            return Err(DatasetError::InvalidImage(format!(
                "cannot encode {other}-channel image as PNG"
            )))
        }
    };
    match result {
        Some(Ok(())) => Ok(()),
        Some(Err(ImageError::IoError(source))) => Err(DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }),
        Some(Err(e)) => Err(DatasetError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        }),
        None => Err(DatasetError::InvalidImage("pixel buffer does not match dimensions".into())),
    }
}

/// Center-crops to a square and bilinearly resizes to [`FACE_SIZE`].
pub fn preprocess(raw: &ImageTensor) -> Result<ImageTensor, DatasetError> {
    preprocess_to(raw, FACE_SIZE)
}

/// Center-crop to the largest square, then bilinear resampling (pixel-center
/// aligned) to `size × size`. Equal sizes pass through unchanged.
pub fn preprocess_to(raw: &ImageTensor, size: usize) -> Result<ImageTensor, DatasetError> {
    let (h, w, c) = raw.dims();
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(DatasetError::TooSmall { width: w, height: h });
    }
    if size == 0 {
        return Err(DatasetError::InvalidImage("target size must be positive".into()));
    }
    let side = h.min(w);
    let (top, left) = ((h - side) / 2, (w - side) / 2);
    if side == size {
        if h == w {
            return Ok(raw.clone());
        }
        let mut pixels = Vec::with_capacity(size * size * c);
        for y in 0..size {
            for x in 0..size {
                for ch in 0..c {
                    pixels.push(raw.get(top + y, left + x, ch));
                }
            }
        }
        return ImageTensor::new(size, size, c, pixels);
    }
    let scale = side as f64 / size as f64;
    let coord = |dst: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(side - 1);
        (lo, hi, src - lo as f64)
    };
    let mut pixels = Vec::with_capacity(size * size * c);
    for y in 0..size {
        let (y0, y1, fy) = coord(y);
        for x in 0..size {
            let (x0, x1, fx) = coord(x);
            for ch in 0..c {
                let p = |yy: usize, xx: usize| raw.get(top + yy, left + xx, ch);
                let top_row = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom_row = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                pixels.push(top_row * (1.0 - fy) + bottom_row * fy);
            }
        }
    }
    ImageTensor::from_clamped(size, size, c, pixels)
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut paths = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?;
    paths.sort();
    Ok(paths)
}

/// Reads `<root>/<identity_label>/*.png`, preprocessing every image to
/// `size × size`. Entries are visited in sorted path order.
pub fn load_directory(
    root: &Path,
    channels: Channels,
    size: usize,
) -> Result<(IdentityDataset, LoadReport), DatasetError> {
    let mut report = LoadReport::default();
    let mut entries = BTreeMap::new();
    for dir in sorted_entries(root)? {
        if !dir.is_dir() {
            report.ignored.push(dir);
            continue;
        }
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut images = Vec::new();
        for path in sorted_entries(&dir)? {
            if path.is_dir() || !is_png(&path) {
                report.ignored.push(path);
                continue;
            }
            let raw = load_png(&path, channels)?;
            images.push(preprocess_to(&raw, size).map_err(|e| DatasetError::Decode {
                path: path.clone(),
                message: e.to_string(),
            })?);
        }
        if images.is_empty() {
            report.skipped_empty.push(label);
        } else {
            entries.insert(label, images);
        }
    }
    Ok((IdentityDataset::new(DatasetRole::All, entries)?, report))
}

/// Writes every image as `<root>/<label>/<index>.png` (16-bit) and returns
/// the written paths in order.
pub fn save_directory(dataset: &IdentityDataset, root: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut written = Vec::with_capacity(dataset.image_count());
    for (label, images) in dataset.identities() {
        let dir = root.join(label);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (i, img) in images.iter().enumerate() {
            let path = dir.join(format!("{i:03}.png"));
            save_png16(img, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
