//! Dataset ingestion and preprocessing. The disk layout is one directory
//! per class under the root; PPM (P6) decodes natively, PNG/JPEG go through
//! the pluggable decoder hook. Every image is resized to the working
//! resolution, scaled to [0,1] and standardized with fixed mean/std 0.5.

pub mod augment;
pub mod ppm;
pub mod toy;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Fixed alphabetical class order; the label of a class is its index here.
pub const CLASS_NAMES: [&str; 5] = ["Chickenpox", "Cowpox", "Measles", "Monkeypox", "Normal"];

pub const NUM_CLASSES: usize = 5;

pub fn label_of(name: &str) -> Option<usize> {
    CLASS_NAMES
        .iter()
        .position(|c| c.eq_ignore_ascii_case(name))
}

/// One image with its label. The tensor is (1, 3, H, W), standardized.
#[derive(Clone)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: usize,
    pub source: PathBuf,
}

/// External decoder hook: bytes in, (width, height, interleaved RGB8) out.
pub type DecoderHook = fn(&[u8]) -> Option<(usize, usize, Vec<u8>)>;

/// (v/255 - 0.5) / 0.5, i.e. map [0,255] to [-1,1].
fn standardize(v: u8) -> f32 {
    (v as f32 / 255.0 - 0.5) / 0.5
}

/// Interleaved RGB8 -> standardized (1,3,H,W) tensor.
pub fn tensor_from_rgb(width: usize, height: usize, pixels: &[u8]) -> Result<Tensor<f32>> {
    if pixels.len() != width * height * 3 {
        return Err(Error::dim("rgb byte count", width * height * 3, pixels.len()));
    }
    let mut data = vec![0.0f32; 3 * width * height];
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                data[c * height * width + y * width + x] =
                    standardize(pixels[(y * width + x) * 3 + c]);
            }
        }
    }
    Tensor::from_vec(Shape::nchw(1, 3, height, width), data)
}

/// Standardized tensor back to interleaved RGB8 (values clamped).
pub fn rgb_from_tensor(t: &Tensor<f32>) -> (usize, usize, Vec<u8>) {
    let (h, w) = (t.shape().h(), t.shape().w());
    let mut out = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = (t.at(0, c, y, x) * 0.5 + 0.5) * 255.0;
                out[(y * w + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    (w, h, out)
}

/// Bilinear resize of a (1,3,H,W) tensor to (size × size).
pub fn resize_bilinear(t: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let (h, w) = (t.shape().h(), t.shape().w());
    if (h, w) == (out_h, out_w) {
        return t.clone();
    }
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    Tensor::from_fn(Shape::nchw(1, 3, out_h, out_w), |_, c, oy, ox| {
        // align sample points to pixel centers
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (dy, dx) = (fy - y0 as f32, fx - x0 as f32);
        let v00 = t.at(0, c, y0, x0);
        let v01 = t.at(0, c, y0, x1);
        let v10 = t.at(0, c, y1, x0);
        let v11 = t.at(0, c, y1, x1);
        v00 * (1.0 - dy) * (1.0 - dx)
            + v01 * (1.0 - dy) * dx
            + v10 * dy * (1.0 - dx)
            + v11 * dy * dx
    })
}

pub struct LoadedDataset {
    pub samples: Vec<Sample>,
    pub warnings: Vec<String>,
}

/// Walk `root/<ClassName>/*` and decode everything recognizable. Unknown
/// directories and undecodable files are skipped with a warning.
pub fn load_dataset(root: &Path, size: usize, hook: Option<DecoderHook>) -> Result<LoadedDataset> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
    }
    let mut warnings = Vec::new();
    let mut samples = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let dir_name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let Some(label) = label_of(dir_name) else {
            warnings.push(format!("skipping unknown class directory {}", dir.display()));
            continue;
        };
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            match decode_image(&file, hook) {
                Ok(Some(t)) => {
                    let resized = resize_bilinear(&t, size, size);
                    samples.push(Sample {
                        image: resized,
                        label,
                        source: file,
                    });
                }
                Ok(None) => warnings.push(format!("no decoder for {}", file.display())),
                Err(e) => warnings.push(format!("undecodable {}: {e}", file.display())),
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Data(format!(
            "no decodable samples under {}",
            root.display()
        )));
    }
    Ok(LoadedDataset { samples, warnings })
}

fn decode_image(path: &Path, hook: Option<DecoderHook>) -> Result<Option<Tensor<f32>>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "ppm" => {
            let img = ppm::read_file(path)?;
            Ok(Some(tensor_from_rgb(img.width, img.height, &img.pixels)?))
        }
        "png" | "jpg" | "jpeg" => match hook {
            Some(f) => {
                let bytes = std::fs::read(path)?;
                match f(&bytes) {
                    Some((w, h, rgb)) => Ok(Some(tensor_from_rgb(w, h, &rgb)?)),
                    None => Err(Error::Data("decoder hook failed".into())),
                }
            }
            None => Ok(None),
        },
        _ => Ok(None),
    }
}

/// Write samples to the dataset layout, one PPM per sample, for pipeline
/// round trips.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        let dir = root.join(CLASS_NAMES[s.label]);
        std::fs::create_dir_all(&dir)?;
        let (w, h, rgb) = rgb_from_tensor(&s.image);
        ppm::write_file(
            &dir.join(format!("{i:05}.ppm")),
            &ppm::RgbImage {
                width: w,
                height: h,
                pixels: rgb,
            },
        )?;
    }
    Ok(())
}
