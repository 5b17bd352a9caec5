//! On-disk tensor containers, dataset manifests and slice ingestion.
//!
//! A container is the 8-byte magic `HEALTNSR`, a little-endian `u32` header
//! length, a JSON header and a raw little-endian `f32` payload in row-major
//! order.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::corruption::FOREGROUND_THRESHOLD;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::phantom::LabeledTestImage;

pub const TENSOR_MAGIC: &[u8; 8] = b"HEALTNSR";
pub const TENSOR_VERSION: u32 = 1;
pub const TENSOR_EXTENSION: &str = "tensor";
pub const MANIFEST_VERSION: u32 = 1;

/// Slices with a smaller foreground fraction are dropped on ingestion.
pub const MIN_FOREGROUND_FRACTION: f64 = 0.01;

/// Largest accepted JSON header.
const MAX_HEADER_BYTES: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorHeader {
    shape: Vec<usize>,
    dtype: String,
    layout: String,
    endianness: String,
    version: u32,
}

/// A loaded container: shape plus row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn save_tensor(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Parameter(format!("zero-sized tensor shape {shape:?}")));
    }
    let len: usize = shape.iter().product();
    if len != data.len() {
        return Err(Error::Shape {
            expected: shape.to_vec(),
            actual: vec![data.len()],
        });
    }
    let header = serde_json::to_vec(&TensorHeader {
        shape: shape.to_vec(),
        dtype: "f32".into(),
        layout: "row-major".into(),
        endianness: "little".into(),
        version: TENSOR_VERSION,
    })?;
    let mut bytes = Vec::with_capacity(12 + header.len() + 4 * len);
    bytes.extend_from_slice(TENSOR_MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

/// Reads a container, validating the header before touching the payload.
pub fn load_tensor(path: &Path) -> Result<TensorData> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let header = read_header(&mut file, path)?;
    let len: usize = header.shape.iter().product();
    let expected = len * 4;
    let mut payload = Vec::with_capacity(expected);
    file.read_to_end(&mut payload)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Data(format!(
            "{}: {} bytes after the payload",
            path.display(),
            payload.len() - expected
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(TensorData {
        shape: header.shape,
        data,
    })
}

/// Shape of a container without reading its payload.
pub fn tensor_shape(path: &Path) -> Result<Vec<usize>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    Ok(read_header(&mut file, path)?.shape)
}

fn read_header(file: &mut fs::File, path: &Path) -> Result<TensorHeader> {
    let malformed = |reason: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    let mut prefix = [0u8; 12];
    file.read_exact(&mut prefix)
        .map_err(|_| malformed("file shorter than the fixed prefix".into()))?;
    if &prefix[..8] != TENSOR_MAGIC {
        return Err(malformed("bad magic".into()));
    }
    let n = u32::from_le_bytes([prefix[8], prefix[9], prefix[10], prefix[11]]);
    if n > MAX_HEADER_BYTES {
        return Err(malformed(format!("header length {n} exceeds {MAX_HEADER_BYTES}")));
    }
    let mut raw = vec![0u8; n as usize];
    file.read_exact(&mut raw)
        .map_err(|_| malformed(format!("header shorter than the declared {n} bytes")))?;
    let header: TensorHeader = serde_json::from_slice(&raw).map_err(|e| malformed(e.to_string()))?;
    if header.dtype != "f32" {
        return Err(Error::Dtype(header.dtype));
    }
    if header.layout != "row-major" || header.endianness != "little" {
        return Err(malformed(format!(
            "unsupported layout {:?} / endianness {:?}",
            header.layout, header.endianness
        )));
    }
    if header.version != TENSOR_VERSION {
        return Err(malformed(format!("unsupported version {}", header.version)));
    }
    if header.shape.is_empty() || header.shape.contains(&0) {
        return Err(malformed(format!("zero-sized shape {:?}", header.shape)));
    }
    Ok(header)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub fn save_array2(path: &Path, a: &Array2<f32>) -> Result<()> {
    let (h, w) = a.dim();
    save_tensor(path, &[h, w], &a.iter().copied().collect::<Vec<_>>())
}

/// Accepts `[h, w]` or `[1, h, w]` containers.
pub fn load_array2(path: &Path) -> Result<Array2<f32>> {
    let t = load_tensor(path)?;
    let dims = match t.shape[..] {
        [h, w] | [1, h, w] => (h, w),
        _ => {
            return Err(Error::Shape {
                expected: vec![0, 0],
                actual: t.shape,
            })
        }
    };
    Ok(Array2::from_shape_vec(dims, t.data).expect("length checked against the header"))
}

pub fn save_stack(path: &Path, a: &Array3<f32>) -> Result<()> {
    let (n, h, w) = a.dim();
    save_tensor(path, &[n, h, w], &a.iter().copied().collect::<Vec<_>>())
}

pub fn load_stack(path: &Path) -> Result<Array3<f32>> {
    let t = load_tensor(path)?;
    match t.shape[..] {
        [n, h, w] => Ok(Array3::from_shape_vec((n, h, w), t.data).expect("length checked against the header")),
        _ => Err(Error::Shape {
            expected: vec![0, 0, 0],
            actual: t.shape,
        }),
    }
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    save_array2(path, img.view())
}

pub fn load_image(path: &Path) -> Result<Image> {
    Image::new(load_array2(path)?).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Masks are stored as 0/1 floats.
pub fn save_mask(path: &Path, mask: &Array2<bool>) -> Result<()> {
    save_array2(path, &mask.mapv(|v| if v { 1.0 } else { 0.0 }))
}

pub fn load_mask(path: &Path) -> Result<Array2<bool>> {
    let a = load_array2(path)?;
    if let Some(v) = a.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data(format!("{}: mask value {v} is not 0 or 1", path.display())));
    }
    Ok(a.mapv(|v| v == 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    /// Relative to the manifest's directory.
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub name: String,
    pub split: Split,
    pub provenance: String,
    pub seed: Option<u64>,
    pub items: Vec<ManifestItem>,
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedManifest {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    /// Common `(height, width)` of every item.
    pub dim: (usize, usize),
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    /// Parses and checks that every referenced file exists and that all
    /// items share one shape.
    pub fn load(path: &Path) -> Result<LoadedManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported manifest version {}",
                path.display(),
                manifest.version
            )));
        }
        if manifest.items.is_empty() {
            return Err(Error::Data(format!("{}: manifest lists no items", path.display())));
        }
        let root = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut dim = None;
        for item in &manifest.items {
            for rel in std::iter::once(&item.image).chain(&item.gt_mask) {
                let full = root.join(rel);
                if !full.is_file() {
                    return Err(Error::Data(format!(
                        "{}: referenced file {} does not exist",
                        path.display(),
                        full.display()
                    )));
                }
                let d = match tensor_shape(&full)?[..] {
                    [h, w] | [1, h, w] => (h, w),
                    ref other => {
                        return Err(Error::Shape {
                            expected: vec![0, 0],
                            actual: other.to_vec(),
                        })
                    }
                };
                match dim {
                    None => dim = Some(d),
                    Some(first) if first != d => {
                        return Err(Error::Shape {
                            expected: vec![first.0, first.1],
                            actual: vec![d.0, d.1],
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(LoadedManifest {
            manifest,
            root,
            dim: dim.expect("at least one item"),
        })
    }
}

impl LoadedManifest {
    pub fn len(&self) -> usize {
        self.manifest.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.items.is_empty()
    }

    pub fn images(&self) -> Result<Vec<Image>> {
        self.manifest
            .items
            .iter()
            .map(|it| load_image(&self.root.join(&it.image)))
            .collect()
    }

    /// Images with their masks; items without a mask count as healthy.
    pub fn labeled(&self) -> Result<Vec<LabeledTestImage>> {
        self.manifest
            .items
            .iter()
            .map(|it| {
                let image = load_image(&self.root.join(&it.image))?;
                Ok(match &it.gt_mask {
                    Some(m) => LabeledTestImage {
                        image,
                        gt_mask: load_mask(&self.root.join(m))?,
                        kind: None,
                    },
                    None => LabeledTestImage::healthy(image),
                })
            })
            .collect()
    }
}

/// Writes images (and masks, when given) under `dir/<split>/` and the
/// manifest at `dir/<split>.json`.
pub fn write_split(
    dir: &Path,
    name: &str,
    split: Split,
    images: &[Image],
    masks: Option<&[Array2<bool>]>,
    provenance: &str,
    seed: Option<u64>,
) -> Result<DatasetManifest> {
    if let Some(m) = masks {
        if m.len() != images.len() {
            return Err(Error::Shape {
                expected: vec![images.len()],
                actual: vec![m.len()],
            });
        }
    }
    let mut items = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let image = PathBuf::from(split.name()).join(format!("image_{i:05}.{TENSOR_EXTENSION}"));
        save_image(&dir.join(&image), img)?;
        let gt_mask = match masks {
            Some(m) => {
                let rel = PathBuf::from(split.name()).join(format!("mask_{i:05}.{TENSOR_EXTENSION}"));
                save_mask(&dir.join(&rel), &m[i])?;
                Some(rel)
            }
            None => None,
        };
        items.push(ManifestItem { image, gt_mask });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        name: name.to_string(),
        split,
        provenance: provenance.to_string(),
        seed,
        items,
    };
    manifest.save(&dir.join(format!("{}.json", split.name())))?;
    Ok(manifest)
}

/// Intensity normalization applied on ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Clip at the 99.8th percentile of the nonzero pixels, then min-max.
    #[default]
    Percentile998Minmax,
}

/// Normalizes one raw slice into `[0, 1]`.
pub fn normalize_slice(raw: &Array2<f32>, normalization: Normalization) -> Array2<f32> {
    match normalization {
        Normalization::Percentile998Minmax => {
            let mut nonzero: Vec<f64> = raw
                .iter()
                .filter(|v| v.is_finite() && **v != 0.0)
                .map(|&v| v as f64)
                .collect();
            if nonzero.is_empty() {
                return Array2::zeros(raw.dim());
            }
            nonzero.sort_unstable_by(f64::total_cmp);
            let hi = percentile_sorted(&nonzero, 0.998);
            let clipped = raw.mapv(|v| if v.is_finite() { (v as f64).min(hi) } else { 0.0 });
            let lo = clipped.iter().copied().fold(f64::INFINITY, f64::min);
            let top = clipped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if top <= lo {
                return Array2::zeros(raw.dim());
            }
            clipped.mapv(|v| (((v - lo) / (top - lo)) as f32).clamp(0.0, 1.0))
        }
    }
}

/// Linear-interpolation percentile of an ascending slice.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    match sorted.get(i + 1) {
        Some(&next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

/// Centre crop or zero-pad each axis to `size`.
pub fn fit_to_size(a: &Array2<f32>, size: usize) -> Array2<f32> {
    let (h, w) = a.dim();
    let mut out = Array2::zeros((size, size));
    let span = |n: usize| {
        if n >= size {
            let off = (n - size) / 2;
            (off, 0, size)
        } else {
            (0, (size - n) / 2, n)
        }
    };
    let (sy, dy, ny) = span(h);
    let (sx, dx, nx) = span(w);
    out.slice_mut(s![dy..dy + ny, dx..dx + nx])
        .assign(&a.slice(s![sy..sy + ny, sx..sx + nx]));
    out
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub input_size: usize,
    pub normalization: Normalization,
    pub split: Split,
    pub name: String,
}

/// Normalizes every container slice in `source` and writes the kept ones,
/// with a manifest, to `dest`. Unreadable files are skipped with a warning.
pub fn ingest_slices(source: &Path, dest: &Path, options: &IngestOptions) -> Result<DatasetManifest> {
    let mut paths: Vec<PathBuf> = fs::read_dir(source)
        .map_err(|e| Error::io(format!("listing {}", source.display()), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == TENSOR_EXTENSION))
        .collect();
    paths.sort();
    let mut kept = Vec::new();
    let mut sources = Vec::new();
    for path in &paths {
        let raw = match load_array2(path) {
            Ok(a) => a,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let norm = fit_to_size(&normalize_slice(&raw, options.normalization), options.input_size);
        let fg = norm.iter().filter(|&&v| v > FOREGROUND_THRESHOLD).count() as f64 / norm.len() as f64;
        if fg < MIN_FOREGROUND_FRACTION {
            continue;
        }
        match Image::new(norm) {
            Ok(img) => {
                kept.push(img);
                sources.push(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
            }
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    if kept.is_empty() {
        return Err(Error::Data(format!("no usable slices in {}", source.display())));
    }
    let provenance = format!(
        "ingested {} of {} slices from {} ({:?}, {}x{})",
        kept.len(),
        paths.len(),
        source.display(),
        options.normalization,
        options.input_size,
        options.input_size
    );
    write_split(dest, &options.name, options.split, &kept, None, &provenance, None)
}
