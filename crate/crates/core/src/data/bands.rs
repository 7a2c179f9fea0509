use std::fs;
use std::path::{Path, PathBuf};

use image::DynamicImage;

use crate::data::ImageCube;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads a directory of single-channel 16-bit images as the bands of one cube.
///
/// Files are taken in lexicographic order and scaled by `1/65535`.
pub fn import_band_directory(dir: impl AsRef<Path>) -> Result<ImageCube> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Ingest(format!("no band images in {}", dir.display())));
    }
    let mut dims = None;
    let mut bands: Vec<Vec<u16>> = Vec::with_capacity(files.len());
    for path in &files {
        let img = image::open(path)?;
        let DynamicImage::ImageLuma16(buf) = img else {
            return Err(Error::Ingest(format!("{} is not a 16-bit grayscale image", path.display())));
        };
        let d = buf.dimensions();
        match dims {
            None => dims = Some(d),
            Some(first) if first != d => {
                return Err(Error::Ingest(format!(
                    "{} is {}x{}, expected {}x{}",
                    path.display(),
                    d.0,
                    d.1,
                    first.0,
                    first.1
                )))
            }
            _ => {}
        }
        bands.push(buf.into_raw());
    }
    let (w, h) = dims.unwrap();
    let (h, w, c) = (h as usize, w as usize, bands.len());
    let data = Tensor::from_fn(&[h, w, c], |i| bands[i % c][i / c] as f32 / 65535.0);
    ImageCube::new(data, None)
}
