//! LPCD: little-endian binary container for labeled point-cloud datasets.
//!
//! ```text
//! "LPCD" | version u32 = 1 | K u32 | shape_count u32
//! per shape: n u32, then n records of (x f32, y f32, z f32, label u16, pad u16 = 0)
//! ```
//!
//! Preset train/test tags are not part of the container; they live in an
//! optional sidecar `<file>.split` holding one `train`/`test` word per shape.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::LabeledPointCloud;
use crate::error::{Error, Result};

pub const LPCD_MAGIC: &[u8; 4] = b"LPCD";
pub const LPCD_VERSION: u32 = 1;
const RECORD_BYTES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        }
    }
}

/// A collection of clouds sharing one label count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub shapes: Vec<LabeledPointCloud>,
    pub num_classes: u32,
    pub category: String,
    /// Annotation granularity, 1 to 3.
    pub level: u8,
    /// Per-shape preset split, when known.
    pub tags: Option<Vec<SplitTag>>,
}

impl Dataset {
    pub fn new(shapes: Vec<LabeledPointCloud>, num_classes: u32) -> Result<Self> {
        if let Some(bad) = shapes.iter().position(|s| s.num_classes() != num_classes) {
            return Err(Error::invalid(format!(
                "shape {bad} declares K = {} but the dataset has K = {num_classes}",
                shapes[bad].num_classes()
            )));
        }
        Ok(Self {
            shapes,
            num_classes,
            category: String::from("synthetic"),
            level: 1,
            tags: None,
        })
    }

    pub fn with_category(mut self, category: impl Into<String>, level: u8) -> Self {
        self.category = category.into();
        self.level = level;
        self
    }

    pub fn with_tags(mut self, tags: Vec<SplitTag>) -> Result<Self> {
        if tags.len() != self.shapes.len() {
            return Err(Error::invalid(format!(
                "{} split tags for {} shapes",
                tags.len(),
                self.shapes.len()
            )));
        }
        self.tags = Some(tags);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }
}

pub fn write_lpcd<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + ds.shapes.iter().map(|s| 4 + s.len() * RECORD_BYTES).sum::<usize>());
    buf.extend_from_slice(LPCD_MAGIC);
    buf.extend_from_slice(&LPCD_VERSION.to_le_bytes());
    buf.extend_from_slice(&ds.num_classes.to_le_bytes());
    buf.extend_from_slice(&(ds.shapes.len() as u32).to_le_bytes());
    for shape in &ds.shapes {
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for (p, &l) in shape.points().iter().zip(shape.labels()) {
            for v in p {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            let label = u16::try_from(l).map_err(|_| Error::invalid(format!("label {l} does not fit in u16")))?;
            buf.extend_from_slice(&label.to_le_bytes());
            buf.extend_from_slice(&0u16.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_lpcd<R: Read>(mut r: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4, "magic")? != LPCD_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"LPCD\""));
    }
    let version = cur.u32("version")?;
    if version != LPCD_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let k = cur.u32("label count")?;
    let count = cur.u32("shape count")?;
    let mut shapes = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let n_at = cur.pos as u64;
        let n = cur.u32("point count")? as usize;
        if n == 0 {
            return Err(Error::format(n_at, "shape with zero points"));
        }
        let mut points = Vec::with_capacity(n.min(1 << 20));
        let mut labels = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let at = cur.pos as u64;
            let rec = cur.take(RECORD_BYTES, "point record")?;
            let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
            let label = u16::from_le_bytes([rec[12], rec[13]]) as u32;
            let pad = u16::from_le_bytes([rec[14], rec[15]]);
            if label >= k {
                return Err(Error::format(at, format!("label {label} not below K = {k}")));
            }
            if pad != 0 {
                return Err(Error::format(at + 14, "non-zero record padding"));
            }
            points.push([f(0), f(1), f(2)]);
            labels.push(label);
        }
        shapes.push(LabeledPointCloud::new(points, labels, k)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(cur.pos as u64, "trailing bytes after last shape"));
    }
    Dataset::new(shapes, k)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".split");
    PathBuf::from(s)
}

/// Reads an LPCD file plus its optional `.split` sidecar. The category is
/// taken from the file stem.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut ds = read_lpcd(fs::File::open(path)?)?;
    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
        ds.category = stem.to_string();
    }
    let tag_path = sidecar(path);
    if tag_path.exists() {
        let text = fs::read_to_string(&tag_path)?;
        let tags = text
            .split_whitespace()
            .map(|w| match w {
                "train" => Ok(SplitTag::Train),
                "test" => Ok(SplitTag::Test),
                other => Err(Error::invalid(format!("unknown split tag {other:?} in {}", tag_path.display()))),
            })
            .collect::<Result<Vec<_>>>()?;
        ds = ds.with_tags(tags)?;
    }
    Ok(ds)
}

/// Writes the LPCD file, and the `.split` sidecar when tags are present.
pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    write_lpcd(&mut bytes, ds)?;
    fs::write(path, bytes)?;
    if let Some(tags) = &ds.tags {
        let text: Vec<&str> = tags.iter().map(|t| t.as_str()).collect();
        fs::write(sidecar(path), text.join("\n") + "\n")?;
    }
    Ok(())
}
