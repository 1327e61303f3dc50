//! Dataset loading for desk-scale experiments: IDX image/label files and
//! deterministic synthetic generators feeding the data layer.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::rng::{derive_seed, stream, Xoshiro256};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { path: String, found: u32, expected: u32 },
    #[error("{path}: truncated file")]
    Truncated { path: String },
    #[error("images ({images}) and labels ({labels}) count mismatch")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} out of range [0,{classes})")]
    LabelRange { label: u32, classes: usize },
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// In-memory dataset: images as fp32 in N x C x H x W order, integer labels,
/// and the preprocessing applied at load time.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub shape: (usize, usize, usize, usize),
    pub labels: Vec<u32>,
    pub classes: usize,
    pub scale: f32,
    pub mean: f32,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.shape.0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per image.
    pub fn item_count(&self) -> usize {
        self.shape.1 * self.shape.2 * self.shape.3
    }

    pub fn image(&self, index: usize) -> &[f32] {
        let n = self.item_count();
        &self.images[index * n..(index + 1) * n]
    }
}

fn read_u32_be(reader: &mut impl Read, path: &str) -> Result<u32, DataError> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|_| DataError::Truncated { path: path.to_string() })?;
    Ok(u32::from_be_bytes(buf))
}

/// Loads an IDX image/label file pair; pixels map through (raw - mean) * scale.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    scale: f32,
    mean: f32,
) -> Result<Dataset, DataError> {
    let ipath = images_path.as_ref().display().to_string();
    let lpath = labels_path.as_ref().display().to_string();
    let io_err = |path: &str| {
        let path = path.to_string();
        move |source: std::io::Error| DataError::Io { path, source }
    };

    let mut ifile = std::io::BufReader::new(
        std::fs::File::open(images_path.as_ref()).map_err(io_err(&ipath))?,
    );
    let magic = read_u32_be(&mut ifile, &ipath)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic { path: ipath, found: magic, expected: IDX_IMAGES_MAGIC });
    }
    let n = read_u32_be(&mut ifile, &ipath)? as usize;
    let h = read_u32_be(&mut ifile, &ipath)? as usize;
    let w = read_u32_be(&mut ifile, &ipath)? as usize;
    let mut raw = vec![0u8; n * h * w];
    ifile
        .read_exact(&mut raw)
        .map_err(|_| DataError::Truncated { path: ipath.clone() })?;

    let mut lfile = std::io::BufReader::new(
        std::fs::File::open(labels_path.as_ref()).map_err(io_err(&lpath))?,
    );
    let magic = read_u32_be(&mut lfile, &lpath)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic { path: lpath, found: magic, expected: IDX_LABELS_MAGIC });
    }
    let ln = read_u32_be(&mut lfile, &lpath)? as usize;
    if ln != n {
        return Err(DataError::CountMismatch { images: n, labels: ln });
    }
    let mut labels_raw = vec![0u8; ln];
    lfile
        .read_exact(&mut labels_raw)
        .map_err(|_| DataError::Truncated { path: lpath.clone() })?;

    let images: Vec<f32> = raw.iter().map(|&b| (b as f32 - mean) * scale).collect();
    let labels: Vec<u32> = labels_raw.iter().map(|&b| b as u32).collect();
    let classes = labels.iter().copied().max().map_or(1, |m| m as usize + 1);
    Ok(Dataset { images, shape: (n, 1, h, w), labels, classes, scale, mean })
}

/// Writes a dataset back out as an IDX pair (byte-quantized by inverting the
/// load mapping). Only exact for datasets whose values came from bytes.
pub fn write_idx(
    ds: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let ipath = images_path.as_ref().display().to_string();
    let (n, c, h, w) = ds.shape;
    assert_eq!(c, 1, "IDX stores single-channel images");
    let mut out = Vec::with_capacity(16 + n * h * w);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    for v in &ds.images {
        let raw = (v / ds.scale + ds.mean).round().clamp(0.0, 255.0) as u8;
        out.push(raw);
    }
    std::fs::write(images_path.as_ref(), &out)
        .map_err(|source| DataError::Io { path: ipath, source })?;

    let lpath = labels_path.as_ref().display().to_string();
    let mut out = Vec::with_capacity(8 + n);
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in &ds.labels {
        if l > 255 {
            return Err(DataError::LabelRange { label: l, classes: 256 });
        }
        out.push(l as u8);
    }
    std::fs::write(labels_path.as_ref(), &out)
        .map_err(|source| DataError::Io { path: lpath, source })?;
    Ok(())
}

/// Deterministic separable dataset: class-conditional Gaussian blobs, so tiny
/// nets can overfit within a couple hundred iterations.
pub fn synthetic(n: usize, classes: usize, shape: (usize, usize, usize), seed: u64) -> Dataset {
    let (c, h, w) = shape;
    let item = c * h * w;
    let mut rng = Xoshiro256::seed_from(derive_seed(seed, stream::SYNTH_DATA, 0));
    // Fixed random unit direction per class, well separated.
    let mut centers = vec![0f32; classes * item];
    for class in 0..classes {
        for v in &mut centers[class * item..(class + 1) * item] {
            *v = rng.gaussian(0.0, 1.0) as f32;
        }
    }
    let mut images = vec![0f32; n * item];
    let mut labels = vec![0u32; n];
    for i in 0..n {
        let class = i % classes;
        labels[i] = class as u32;
        let center = &centers[class * item..(class + 1) * item];
        for (dst, &c) in images[i * item..(i + 1) * item].iter_mut().zip(center) {
            *dst = c + rng.gaussian(0.0, 0.25) as f32;
        }
    }
    Dataset { images, shape: (n, c, h, w), labels, classes, scale: 1.0, mean: 0.0 }
}

/// 5x7 digit glyphs for the synthetic handwritten-digit set.
const GLYPHS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110], // 0
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110], // 1
    [0b01110, 0b10001, 0b00001, 0b00110, 0b01000, 0b10000, 0b11111], // 2
    [0b01110, 0b10001, 0b00001, 0b00110, 0b00001, 0b10001, 0b01110], // 3
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010], // 4
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110], // 5
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110], // 6
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000], // 7
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110], // 8
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100], // 9
];

/// Synthetic 28x28 digit images: scaled glyphs with random placement, per-pixel
/// noise and intensity jitter. A stand-in classification task with the MNIST
/// layout for runs where the real files are not on disk. Pixels are in byte
/// range [0,255], matching raw IDX loads, so the canonical 1/256 transform
/// scale applies unchanged.
pub fn synthetic_digits(n: usize, seed: u64) -> Dataset {
    let (h, w) = (28usize, 28usize);
    let mut rng = Xoshiro256::seed_from(derive_seed(seed, stream::SYNTH_DATA, 1));
    let mut images = vec![0f32; n * h * w];
    let mut labels = vec![0u32; n];
    for i in 0..n {
        let class = rng.below(10);
        labels[i] = class as u32;
        let glyph = &GLYPHS[class];
        // Scale 2x or 3x, then place randomly with a margin.
        let scale = 2 + rng.below(2);
        let gh = 7 * scale;
        let gw = 5 * scale;
        let oy = 1 + rng.below(h - gh - 1);
        let ox = 1 + rng.below(w - gw - 1);
        let intensity = 0.6 + 0.4 * rng.next_f64();
        let img = &mut images[i * h * w..(i + 1) * h * w];
        for (gy, row_bits) in glyph.iter().enumerate() {
            for gx in 0..5 {
                if row_bits & (1 << (4 - gx)) != 0 {
                    for sy in 0..scale {
                        for sx in 0..scale {
                            let y = oy + gy * scale + sy;
                            let x = ox + gx * scale + sx;
                            img[y * w + x] = intensity as f32;
                        }
                    }
                }
            }
        }
        for v in img.iter_mut() {
            let noise = rng.gaussian(0.0, 0.05) as f32;
            *v = ((*v + noise).clamp(0.0, 1.0) * 255.0).round();
        }
    }
    Dataset { images, shape: (n, 1, h, w), labels, classes: 10, scale: 1.0, mean: 0.0 }
}

impl Dataset {
    /// Writes this dataset as raw bytes; values must lie in [0,255].
    pub fn save_as_idx_bytes(
        &self,
        images_path: impl AsRef<Path>,
        labels_path: impl AsRef<Path>,
    ) -> Result<(), DataError> {
        let ipath = images_path.as_ref().display().to_string();
        let (n, _c, h, w) = self.shape;
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(images_path.as_ref())
                .map_err(|source| DataError::Io { path: ipath.clone(), source })?,
        );
        let hdr_err = |source: std::io::Error| DataError::Io { path: ipath.clone(), source };
        file.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).map_err(hdr_err)?;
        file.write_all(&(n as u32).to_be_bytes())
            .map_err(|source| DataError::Io { path: ipath.clone(), source })?;
        file.write_all(&(h as u32).to_be_bytes())
            .map_err(|source| DataError::Io { path: ipath.clone(), source })?;
        file.write_all(&(w as u32).to_be_bytes())
            .map_err(|source| DataError::Io { path: ipath.clone(), source })?;
        for v in &self.images {
            let b = v.round().clamp(0.0, 255.0) as u8;
            file.write_all(&[b])
                .map_err(|source| DataError::Io { path: ipath.clone(), source })?;
        }
        drop(file);

        let lpath = labels_path.as_ref().display().to_string();
        let mut out = Vec::with_capacity(8 + n);
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(n as u32).to_be_bytes());
        for &l in &self.labels {
            out.push(l as u8);
        }
        std::fs::write(labels_path.as_ref(), &out)
            .map_err(|source| DataError::Io { path: lpath, source })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthetic(16, 4, (1, 4, 4), 7);
        let b = synthetic(16, 4, (1, 4, 4), 7);
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn synthetic_labels_cover_classes() {
        let ds = synthetic(12, 4, (1, 2, 2), 1);
        for class in 0..4u32 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == class).count(), 3);
        }
    }

    #[test]
    fn idx_round_trip() {
        let dir = std::env::temp_dir().join(format!("hetgrad_idx_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let ds = synthetic_digits(32, 5);
        let ip = dir.join("imgs.idx");
        let lp = dir.join("lbls.idx");
        ds.save_as_idx_bytes(&ip, &lp).unwrap();
        // Byte-range pixels load back exactly at identity scale.
        let loaded = load_idx(&ip, &lp, 1.0, 0.0).unwrap();
        assert_eq!(loaded.shape, ds.shape);
        assert_eq!(loaded.labels, ds.labels);
        assert_eq!(loaded.images, ds.images);
        // And a load/save/load cycle is exact.
        let resaved = dir.join("imgs2.idx");
        let relabels = dir.join("lbls2.idx");
        write_idx(&loaded, &resaved, &relabels).unwrap();
        let again = load_idx(&resaved, &relabels, 1.0, 0.0).unwrap();
        assert_eq!(again.images, loaded.images);
        assert_eq!(again.labels, loaded.labels);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn idx_bad_magic() {
        let dir = std::env::temp_dir().join(format!("hetgrad_badmagic_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("bad.idx");
        std::fs::write(&p, [0, 0, 8, 99, 0, 0, 0, 0]).unwrap();
        let err = load_idx(&p, &p, 1.0, 0.0).unwrap_err();
        assert!(matches!(err, DataError::BadMagic { .. }));
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn idx_count_mismatch() {
        let dir = std::env::temp_dir().join(format!("hetgrad_mismatch_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let ip = dir.join("i.idx");
        let lp = dir.join("l.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&[7, 9]);
        std::fs::write(&ip, img).unwrap();
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&3u32.to_be_bytes());
        lbl.extend_from_slice(&[0, 1, 2]);
        std::fs::write(&lp, lbl).unwrap();
        assert!(matches!(load_idx(&ip, &lp, 1.0, 0.0), Err(DataError::CountMismatch { .. })));
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn identity_mapping() {
        let dir = std::env::temp_dir().join(format!("hetgrad_identity_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let ip = dir.join("i.idx");
        let lp = dir.join("l.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&[128, 255]);
        std::fs::write(&ip, img).unwrap();
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&1u32.to_be_bytes());
        lbl.push(3);
        std::fs::write(&lp, lbl).unwrap();
        let ds = load_idx(&ip, &lp, 1.0, 0.0).unwrap();
        assert_eq!(ds.images, [128.0, 255.0]);
        assert_eq!(ds.labels, [3]);
        let _ = std::fs::remove_dir_all(&dir);
    }
}
