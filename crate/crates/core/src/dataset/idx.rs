use std::path::Path;

use ndarray::Array2;

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'static str,
}

impl Reader<'_> {
    fn err(&self, message: String) -> Error {
        Error::Parse { offset: self.pos, message: format!("{}: {message}", self.name) }
    }

    fn u32(&mut self) -> Result<u32> {
        let chunk =
            self.bytes.get(self.pos..self.pos + 4).ok_or_else(|| self.err("unexpected end of header".into()))?;
        self.pos += 4;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn take(&mut self, len: usize) -> Result<&[u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(self.err(format!("need {len} payload bytes, only {} left", self.bytes.len() - self.pos)));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

/// Parses IDX image and label buffers. Pixels are scaled to `[0, 1]` and
/// each image is flattened row-major; K is the largest label plus one.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let mut img = Reader { bytes: images, pos: 0, name: "images" };
    let magic = img.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        img.pos = 0;
        return Err(img.err(format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let count = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;

    let mut lab = Reader { bytes: labels, pos: 0, name: "labels" };
    let magic = lab.u32()?;
    if magic != IDX_LABELS_MAGIC {
        lab.pos = 0;
        return Err(lab.err(format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let label_count = lab.u32()? as usize;
    if label_count != count {
        lab.pos = 4;
        return Err(lab.err(format!("{label_count} labels for {count} images")));
    }

    let dim = rows * cols;
    let pixels = img.take(count * dim)?;
    let classes = lab.take(count)?;
    let features = Array2::from_shape_fn((count, dim), |(i, j)| f64::from(pixels[i * dim + j]) / 255.0);
    let labels: Vec<usize> = classes.iter().map(|&c| usize::from(c)).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledDataset::new(features, labels, num_classes)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels)
}
