//! Dataset ingestion: MNIST IDX files and CIFAR-10 binary batches.
//!
//! Pixels are scaled to `[0, 1]` by dividing the stored byte by 255 and
//! kept channel-major. Files ending in `.gz` are decompressed on the fly.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    image_shape: [usize; 3],
    pixels: Vec<f32>,
    labels: Vec<u8>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        image_shape: [usize; 3],
        pixels: Vec<f32>,
        labels: Vec<u8>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let per_image: usize = image_shape.iter().product();
        if per_image == 0 || pixels.len() != per_image * labels.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![labels.len(), image_shape[0], image_shape[1], image_shape[2]],
                actual: vec![pixels.len()],
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::param(
                "labels",
                format!("label {bad} >= class count {num_classes}"),
            ));
        }
        Ok(Self {
            image_shape,
            pixels,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn pixels(&self, i: usize) -> &[f32] {
        let n: usize = self.image_shape.iter().product();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> Tensor {
        Tensor::new(self.image_shape.to_vec(), self.pixels(i).to_vec()).expect("consistent shape")
    }

    /// The first `n` samples (or all, if fewer).
    pub fn take(&self, n: usize) -> Self {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let n: usize = self.image_shape.iter().product();
        let mut pixels = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.pixels(i));
            labels.push(self.labels[i]);
        }
        Self {
            pixels,
            labels,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            image_shape: self.image_shape,
            pixels: Vec::new(),
            labels: Vec::new(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// Image `i` prepared for a network whose input is `size x size`:
    /// unchanged if it already fits, otherwise center-cropped.
    pub fn input_for(&self, i: usize, input_shape: &[usize]) -> Result<Tensor> {
        if input_shape == self.image_shape {
            return Ok(self.image(i));
        }
        match input_shape {
            &[c, h, w] if c == self.image_shape[0] && h == w => center_crop(&self.image(i), h),
            _ => Err(Error::ShapeMismatch {
                expected: input_shape.to_vec(),
                actual: self.image_shape.to_vec(),
            }),
        }
    }
}

/// Crop window origin `(row, col)` of a centered `size x size` patch.
pub fn center_offset(height: usize, width: usize, size: usize) -> (usize, usize) {
    ((height - size) / 2, (width - size) / 2)
}

pub fn crop(image: &Tensor, size: usize, (y0, x0): (usize, usize)) -> Result<Tensor> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] => (c, h, w),
        other => {
            return Err(Error::ShapeMismatch {
                expected: vec![0, size, size],
                actual: other.to_vec(),
            })
        }
    };
    if y0 + size > h || x0 + size > w {
        return Err(Error::param(
            "crop",
            format!("{size}x{size} patch at ({y0}, {x0}) exceeds {h}x{w} image"),
        ));
    }
    let src = image.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in y0..y0 + size {
            let row = ch * h * w + y * w;
            out.extend_from_slice(&src[row + x0..row + x0 + size]);
        }
    }
    Tensor::new(vec![c, size, size], out)
}

pub fn center_crop(image: &Tensor, size: usize) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 || shape[1] < size || shape[2] < size {
        return Err(Error::param(
            "crop",
            format!("cannot crop {size}x{size} from {shape:?}"),
        ));
    }
    crop(image, size, center_offset(shape[1], shape[2], size))
}

pub fn random_crop(image: &Tensor, size: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let shape = image.shape();
    if shape.len() != 3 || shape[1] < size || shape[2] < size {
        return Err(Error::param(
            "crop",
            format!("cannot crop {size}x{size} from {shape:?}"),
        ));
    }
    let y0 = rng.random_range(0..=shape[1] - size);
    let x0 = rng.random_range(0..=shape[2] - size);
    crop(image, size, (y0, x0))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut bytes = Vec::new();
    let gz = path.extension().is_some_and(|e| e == "gz");
    let read = if gz {
        GzDecoder::new(file).read_to_end(&mut bytes)
    } else {
        file.read_to_end(&mut bytes)
    };
    read.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(bytes)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        let Some(b) = self.bytes.get(self.pos..self.pos + 4) else {
            return Err(self.err(self.bytes.len(), format!("file ends inside {what}")));
        };
        self.pos += 4;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn payload(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos..self.pos + len) {
            Some(p) => {
                self.pos += len;
                Ok(p)
            }
            None => Err(self.err(
                self.bytes.len(),
                format!(
                    "truncated {what}: expected {len} bytes from offset {}, found {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }
}

fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>)> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    let magic = cur.u32_be("magic number")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(cur.err(0, format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = cur.u32_be("image count")? as usize;
    let rows = cur.u32_be("row count")? as usize;
    let cols = cur.u32_be("column count")? as usize;
    let payload = cur.payload(n * rows * cols, "pixel payload")?;
    if cur.pos != bytes.len() {
        return Err(cur.err(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok((n, rows, cols, payload.iter().map(|&b| b as f32 / 255.0).collect()))
}

fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor { path, bytes, pos: 0 };
    let magic = cur.u32_be("magic number")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(cur.err(0, format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = cur.u32_be("label count")? as usize;
    let payload = cur.payload(n, "label payload")?;
    if let Some(k) = payload.iter().position(|&l| l > 9) {
        return Err(cur.err(8 + k, format!("label {} outside 0..=9", payload[k])));
    }
    if cur.pos != bytes.len() {
        return Err(cur.err(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(payload.to_vec())
}

fn split_from_name(path: &Path) -> Split {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    if name.contains("t10k") || name.contains("test") {
        Split::Test
    } else {
        Split::Train
    }
}

/// Loads an MNIST-style IDX image/label file pair.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let (n, rows, cols, pixels) = parse_idx_images(images, &read_file(images)?)?;
    let label_bytes = parse_idx_labels(labels, &read_file(labels)?)?;
    if label_bytes.len() != n {
        return Err(Error::Parse {
            path: labels.to_path_buf(),
            offset: 4,
            reason: format!("{} labels but {} images in {}", label_bytes.len(), n, images.display()),
        });
    }
    Dataset::new([1, rows, cols], pixels, label_bytes, 10, split_from_name(images))
}

/// Loads and concatenates CIFAR-10 binary batch files.
pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut split = Split::Train;
    for path in paths {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: (bytes.len() - bytes.len() % CIFAR_RECORD) as u64,
                reason: format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
            });
        }
        for (k, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            if record[0] > 9 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    offset: (k * CIFAR_RECORD) as u64,
                    reason: format!("label {} outside 0..=9", record[0]),
                });
            }
            labels.push(record[0]);
            pixels.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
        }
        if split_from_name(path) == Split::Test {
            split = Split::Test;
        }
    }
    Dataset::new([3, 32, 32], pixels, labels, 10, split)
}

/// Writes an IDX image file from bytes (`n x rows x cols`).
pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    write_bytes(path.as_ref(), &out)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_bytes(path.as_ref(), &out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Conventional file names inside an MNIST directory, preferring uncompressed files.
pub fn mnist_paths(dir: impl AsRef<Path>, split: Split) -> (PathBuf, PathBuf) {
    let dir = dir.as_ref();
    let stem = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let pick = |name: String| {
        let plain = dir.join(&name);
        if plain.exists() {
            plain
        } else {
            dir.join(format!("{name}.gz"))
        }
    };
    (
        pick(format!("{stem}-images-idx3-ubyte")),
        pick(format!("{stem}-labels-idx1-ubyte")),
    )
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn center_crop_offset_for_cifar() {
        assert_eq!(center_offset(32, 32, 24), (4, 4));
        let image = Tensor::new(vec![1, 32, 32], (0..1024).map(|v| v as f32).collect()).unwrap();
        let patch = center_crop(&image, 24).unwrap();
        assert_eq!(patch.shape(), &[1, 24, 24]);
        assert_eq!(patch.data()[0], (4 * 32 + 4) as f32);
    }

    #[test]
    fn random_crop_stays_inside() {
        let image = Tensor::new(vec![3, 32, 32], vec![1.0; 3 * 1024]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(random_crop(&image, 24, &mut rng).unwrap().shape(), &[3, 24, 24]);
        }
        assert!(random_crop(&image, 33, &mut rng).is_err());
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        assert!(Dataset::new([1, 1, 1], vec![0.0; 2], vec![0, 10], 10, Split::Train).is_err());
        assert!(Dataset::new([1, 1, 2], vec![0.0; 3], vec![0, 1], 10, Split::Train).is_err());
    }

    #[test]
    fn select_preserves_order() {
        let d = Dataset::new([1, 1, 1], vec![0.0, 0.1, 0.2], vec![0, 1, 2], 3, Split::Test).unwrap();
        let s = d.select(&[2, 0]);
        assert_eq!(s.labels(), &[2, 0]);
        assert_eq!(s.pixels(0), &[0.2]);
        assert_eq!(d.take(10).len(), 3);
    }
}
