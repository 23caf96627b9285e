// SPDX-License-Identifier: Apache-2.0

//! MNIST-format image and label files.
//!
//! IDX layout: a big-endian `u32` magic (`0x803` for images, `0x801` for
//! labels), one big-endian `u32` per dimension, then raw bytes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Fmnist,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fmnist => "fmnist",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "fmnist" | "fashion" | "fashion-mnist" => Ok(DatasetKind::Fmnist),
            other => Err(Error::Config(format!(
                "unknown dataset {other:?}; expected mnist or fmnist"
            ))),
        }
    }
}

/// How pixel bytes become network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `byte / 255`, in `[0, 1]`.
    #[default]
    Unit,
    /// `2 * byte / 255 - 1`, in `[-1, 1]`.
    Signed,
}

/// Images with their labels, row-major, one byte per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    rows: usize,
    cols: usize,
    split: Split,
}

impl ImageSet {
    pub fn new(
        pixels: Vec<u8>,
        labels: Vec<u8>,
        rows: usize,
        cols: usize,
        split: Split,
    ) -> Result<Self> {
        let dim = rows * cols;
        if dim == 0 || pixels.len() != labels.len() * dim {
            return Err(Error::Shape(format!(
                "{} pixel bytes do not hold {} images of {rows}x{cols}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(Error::Shape(format!("label {bad} outside 0..{CLASSES}")));
        }
        Ok(ImageSet {
            pixels,
            labels,
            rows,
            cols,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn raw_image(&self, i: usize) -> &[u8] {
        let d = self.pixels_per_image();
        &self.pixels[i * d..(i + 1) * d]
    }

    /// Writes image `i` as network input into `out`.
    pub fn image_into(&self, i: usize, norm: Normalization, out: &mut [f64]) {
        for (o, &b) in out.iter_mut().zip(self.raw_image(i)) {
            let u = b as f64 / 255.0;
            *o = match norm {
                Normalization::Unit => u,
                Normalization::Signed => 2.0 * u - 1.0,
            };
        }
    }

    pub fn image(&self, i: usize, norm: Normalization) -> Vec<f64> {
        let mut v = vec![0.0; self.pixels_per_image()];
        self.image_into(i, norm, &mut v);
        v
    }

    /// Number of images per class.
    pub fn class_counts(&self) -> [usize; CLASSES] {
        let mut c = [0; CLASSES];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    /// FNV-1a over dimensions, labels and pixels.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for d in [self.len(), self.rows, self.cols] {
            for b in (d as u64).to_be_bytes() {
                eat(b);
            }
        }
        self.labels.iter().for_each(|&b| eat(b));
        self.pixels.iter().for_each(|&b| eat(b));
        h
    }

    /// The images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ImageSet {
        let d = self.pixels_per_image();
        let mut pixels = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.raw_image(i));
            labels.push(self.labels[i]);
        }
        ImageSet {
            pixels,
            labels,
            rows: self.rows,
            cols: self.cols,
            split: self.split,
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn fail(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.fail(self.pos, format!("file truncated while reading {what}")))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn rest(&self, expected: usize, what: &str) -> Result<&[u8]> {
        let have = self.bytes.len() - self.pos;
        if have < expected {
            return Err(self.fail(
                self.bytes.len(),
                format!("file truncated: {what} needs {expected} bytes, found {have}"),
            ));
        }
        if have > expected {
            return Err(self.fail(
                self.pos + expected,
                format!("{} trailing bytes after {what}", have - expected),
            ));
        }
        Ok(&self.bytes[self.pos..])
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_images(path: &Path, bytes: &[u8]) -> Result<(Vec<u8>, usize, usize, usize)> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    let magic = c.u32("magic number")?;
    if magic != IMAGE_MAGIC {
        return Err(c.fail(
            0,
            format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let count = c.u32("image count")? as usize;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(c.fail(8, format!("degenerate image size {rows}x{cols}")));
    }
    let data = c.rest(count * rows * cols, "pixel data")?;
    Ok((data.to_vec(), count, rows, cols))
}

fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    let magic = c.u32("magic number")?;
    if magic != LABEL_MAGIC {
        return Err(c.fail(
            0,
            format!("bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let count = c.u32("label count")? as usize;
    let data = c.rest(count, "label data")?;
    if let Some(pos) = data.iter().position(|&l| l as usize >= CLASSES) {
        return Err(c.fail(8 + pos, format!("label {} outside 0..{CLASSES}", data[pos])));
    }
    Ok(data.to_vec())
}

pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<ImageSet> {
    let (pixels, count, rows, cols) = parse_images(images_path, &read_file(images_path)?)?;
    let labels = parse_labels(labels_path, &read_file(labels_path)?)?;
    if labels.len() != count {
        return Err(Error::Parse {
            path: labels_path.to_path_buf(),
            offset: 4,
            message: format!(
                "{} labels for {count} images in {}",
                labels.len(),
                images_path.display()
            ),
        });
    }
    ImageSet::new(pixels, labels, rows, cols, split)
}

/// Paths of the standard file names inside `dir`.
pub fn idx_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    let p = split.prefix();
    (
        dir.join(format!("{p}-images-idx3-ubyte")),
        dir.join(format!("{p}-labels-idx1-ubyte")),
    )
}

/// Loads one split from a directory holding the standard file names.
pub fn load_dir(dir: &Path, split: Split) -> Result<ImageSet> {
    let (images, labels) = idx_paths(dir, split);
    load_idx(&images, &labels, split)
}

pub fn write_idx(set: &ImageSet, images_path: &Path, labels_path: &Path) -> Result<()> {
    let mut img = Vec::with_capacity(16 + set.pixels.len());
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [set.len(), set.rows, set.cols] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    img.extend_from_slice(&set.pixels);
    std::fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;

    let mut lab = Vec::with_capacity(8 + set.labels.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(set.len() as u32).to_be_bytes());
    lab.extend_from_slice(&set.labels);
    std::fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

/// Class-stratified random subset of `n` images, in original order.
///
/// Each class gets `n * count_c / total` images rounded down; the remaining
/// slots go to the classes with the largest remainders (ties to the lower
/// class id).
pub fn subsample(set: &ImageSet, n: usize, seed: u64) -> Result<ImageSet> {
    let total = set.len();
    if n > total {
        return Err(Error::Domain(format!(
            "cannot draw {n} images from a set of {total}"
        )));
    }
    let counts = set.class_counts();
    let mut quota = [0usize; CLASSES];
    let mut remainders = Vec::with_capacity(CLASSES);
    for c in 0..CLASSES {
        let exact = n * counts[c];
        quota[c] = exact / total.max(1);
        remainders.push((exact % total.max(1), c));
    }
    let mut left = n - quota.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in &remainders {
        if left == 0 {
            break;
        }
        if quota[c] < counts[c] {
            quota[c] += 1;
            left -= 1;
        }
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for i in 0..total {
        by_class[set.label(i)].push(i);
    }
    let mut chosen = Vec::with_capacity(n);
    for (c, idx) in by_class.iter_mut().enumerate() {
        let mut rng = stream_rng(seed, c as u64);
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..quota[c]]);
    }
    chosen.sort_unstable();
    Ok(set.select(&chosen))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ImageSet {
        let mut px = vec![0u8; 2 * 4];
        px[4..].copy_from_slice(&[0, 51, 255, 128]);
        ImageSet::new(px, vec![3, 7], 2, 2, Split::Train).unwrap()
    }

    fn balanced(per_class: usize) -> ImageSet {
        let n = per_class * CLASSES;
        let labels: Vec<u8> = (0..n).map(|i| (i % CLASSES) as u8).collect();
        let pixels: Vec<u8> = (0..n * 4).map(|i| (i % 251) as u8).collect();
        ImageSet::new(pixels, labels, 2, 2, Split::Train).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        let set = tiny();
        write_idx(&set, &ip, &lp).unwrap();
        let back = load_idx(&ip, &lp, Split::Train).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.checksum(), set.checksum());
        assert_eq!(back.image(0, Normalization::Unit), vec![0.0; 4]);
        assert_eq!(
            back.image(1, Normalization::Unit),
            vec![0.0, 0.2, 1.0, 128.0 / 255.0]
        );
        assert_eq!(back.image(1, Normalization::Signed)[0], -1.0);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&tiny(), &ip, &lp).unwrap();

        let mut bytes = std::fs::read(&ip).unwrap();
        bytes[3] = 0x01;
        let bad = dir.path().join("bad");
        std::fs::write(&bad, &bytes).unwrap();
        match load_idx(&bad, &lp, Split::Train) {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }

        let bytes = std::fs::read(&ip).unwrap();
        std::fs::write(&bad, &bytes[..bytes.len() - 1]).unwrap();
        match load_idx(&bad, &lp, Split::Train) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 1),
            other => panic!("{other:?}"),
        }

        std::fs::write(&bad, &bytes[..6]).unwrap();
        match load_idx(&bad, &lp, Split::Train) {
            Err(Error::Parse { offset: 4, .. }) => {}
            other => panic!("{other:?}"),
        }

        let mut labels = std::fs::read(&lp).unwrap();
        labels[7] = 3;
        labels.push(1);
        std::fs::write(&bad, &labels).unwrap();
        assert!(matches!(
            load_idx(&ip, &bad, Split::Train),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn subsample_full_and_stratified() {
        let set = balanced(200);
        let all = subsample(&set, set.len(), 1).unwrap();
        assert_eq!(all, set);
        let a = subsample(&set, 1000, 42).unwrap();
        let b = subsample(&set, 1000, 42).unwrap();
        assert_eq!(a, b);
        for c in a.class_counts() {
            assert!((c as i64 - 100).abs() <= 1);
        }
        assert_ne!(subsample(&set, 1000, 43).unwrap(), a);
        assert!(matches!(subsample(&set, 5000, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn uneven_classes_fill_exactly() {
        let labels: Vec<u8> = (0..97).map(|i| (i * i % 10) as u8).collect();
        let set = ImageSet::new(vec![0; 97], labels, 1, 1, Split::Test).unwrap();
        for n in [0, 1, 13, 50, 96, 97] {
            assert_eq!(subsample(&set, n, 3).unwrap().len(), n);
        }
    }
}
