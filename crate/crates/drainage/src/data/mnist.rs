//! MNIST IDX ingestion.
//!
//! The format is bit-exact: a big-endian 32-bit magic number (2051 for
//! images, followed by dims `[n, rows, cols]`; 2049 for labels, followed by
//! `[n]`), then raw unsigned bytes. Pixel bytes are scaled to `[0, 1]` by
//! dividing by 255; no mean normalization.

use super::LabeledDataset;
use crate::mat::Matrix;
use crate::{Error, Result};
use std::fs;
use std::path::Path;

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;

struct IdxReader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: String,
}

impl<'a> IdxReader<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Self {
        IdxReader {
            bytes,
            offset: 0,
            path: path.display().to_string(),
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Ingest {
            path: self.path.clone(),
            offset: self.offset as u64,
            message: message.into(),
        }
    }

    fn read_u32_be(&mut self) -> Result<u32> {
        let end = self.offset + 4;
        if end > self.bytes.len() {
            return Err(self.err(format!(
                "truncated: wanted 4 bytes, file has {}",
                self.bytes.len()
            )));
        }
        let v = u32::from_be_bytes(self.bytes[self.offset..end].try_into().unwrap());
        self.offset = end;
        Ok(v)
    }

    fn read_bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.offset + n;
        if end > self.bytes.len() {
            return Err(self.err(format!(
                "truncated: wanted {n} bytes, file has {} with {} consumed",
                self.bytes.len(),
                self.offset
            )));
        }
        let s = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(s)
    }
}

/// Loads an MNIST-style image/label file pair into a 10-class dataset.
pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;

    let mut ir = IdxReader::new(&image_bytes, images_path);
    let magic = ir.read_u32_be()?;
    if magic != IMAGES_MAGIC {
        ir.offset = 0;
        return Err(ir.err(format!("bad images magic {magic}, expected {IMAGES_MAGIC}")));
    }
    let n = ir.read_u32_be()? as usize;
    let rows = ir.read_u32_be()? as usize;
    let cols = ir.read_u32_be()? as usize;
    let pixels = ir.read_bytes(n * rows * cols)?;
    if ir.offset != image_bytes.len() {
        return Err(ir.err(format!(
            "{} trailing bytes after {n} images",
            image_bytes.len() - ir.offset
        )));
    }

    let mut lr = IdxReader::new(&label_bytes, labels_path);
    let magic = lr.read_u32_be()?;
    if magic != LABELS_MAGIC {
        lr.offset = 0;
        return Err(lr.err(format!("bad labels magic {magic}, expected {LABELS_MAGIC}")));
    }
    let n_labels = lr.read_u32_be()? as usize;
    if n_labels != n {
        return Err(lr.err(format!("{n_labels} labels for {n} images")));
    }
    let raw_labels = lr.read_bytes(n)?;

    let mut labels = Vec::with_capacity(n);
    for (i, &b) in raw_labels.iter().enumerate() {
        if b > 9 {
            lr.offset = 8 + i;
            return Err(lr.err(format!("label byte {b} outside [0, 10)")));
        }
        labels.push(b as usize);
    }

    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let features = Matrix::from_vec(n, rows * cols, data)?;
    LabeledDataset::new(features, labels, 10)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::TempDir;

    fn write_images(dir: &TempDir, name: &str, magic: u32, images: &[[u8; 4]]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        for img in images {
            f.write_all(img).unwrap();
        }
        path
    }

    fn write_labels(dir: &TempDir, name: &str, magic: u32, labels: &[u8]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(&magic.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        path
    }

    #[test]
    fn parses_a_small_pair() {
        let dir = TempDir::new().unwrap();
        let imgs = write_images(&dir, "imgs", IMAGES_MAGIC, &[[0, 128, 255, 51], [0, 0, 0, 0]]);
        let lbls = write_labels(&dir, "lbls", LABELS_MAGIC, &[7, 0]);
        let ds = load_mnist_idx(&imgs, &lbls).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim(), 4);
        assert_eq!(ds.labels, vec![7, 0]);
        assert_eq!(ds.features.row(0)[2], 1.0);
        assert!((ds.features.row(0)[3] - 0.2).abs() < 1e-12);
        // All-zero image stays all-zero.
        assert_eq!(ds.features.row(1), &[0.0; 4]);
    }

    #[test]
    fn rejects_wrong_magics() {
        let dir = TempDir::new().unwrap();
        let imgs = write_images(&dir, "imgs", 2052, &[[0; 4]]);
        let lbls = write_labels(&dir, "lbls", LABELS_MAGIC, &[1]);
        match load_mnist_idx(&imgs, &lbls) {
            Err(Error::Ingest { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected ingest error, got {other:?}"),
        }

        let imgs = write_images(&dir, "imgs2", IMAGES_MAGIC, &[[0; 4]]);
        let lbls = write_labels(&dir, "lbls2", 2048, &[1]);
        assert!(load_mnist_idx(&imgs, &lbls).is_err());
    }

    #[test]
    fn rejects_count_mismatch() {
        let dir = TempDir::new().unwrap();
        let imgs = write_images(&dir, "imgs", IMAGES_MAGIC, &[[0; 4], [0; 4]]);
        let lbls = write_labels(&dir, "lbls", LABELS_MAGIC, &[1]);
        assert!(load_mnist_idx(&imgs, &lbls).is_err());
    }

    #[test]
    fn rejects_truncated_images() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("imgs");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(&IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&[0u8; 5]).unwrap();
        let lbls = write_labels(&dir, "lbls", LABELS_MAGIC, &[0, 1]);
        match load_mnist_idx(&path, &lbls) {
            Err(Error::Ingest { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn loads_the_bundled_fixture_when_present() {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../data/mnist");
        if !root.exists() {
            return;
        }
        let ds = load_mnist_idx(
            root.join("train-images-idx3-ubyte"),
            root.join("train-labels-idx1-ubyte"),
        )
        .unwrap();
        assert_eq!(ds.feature_dim(), 784);
        assert_eq!(ds.num_classes, 10);
        assert!(ds.len() >= 1000);
        assert!(ds.features.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
