//! Global-descriptor retrieval over the map and composition of the global
//! query pose from a relative estimate.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::model::BackboneOutput;

pub const INDEX_MAGIC: &[u8; 7] = b"RPRIDX1";

/// One posed map frame with its global descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct MapEntry {
    pub id: String,
    /// Unit-norm global descriptor.
    pub descriptor: Vec<f32>,
    /// `T^M_r`: reference camera to map frame.
    pub pose: RigidTransform,
    pub rgb_path: String,
    pub depth_path: String,
    pub intrinsics: CameraIntrinsics,
}

/// Scales `v` to unit L2 norm; fails on a zero or non-finite vector.
pub fn normalize_descriptor(v: &[f32]) -> Result<Vec<f32>> {
    let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::NonFinite("descriptor norm"));
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

fn distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Exact nearest-neighbour index. Entries are kept sorted by id, so the
/// index (and its file) does not depend on insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    dim: usize,
    entries: Vec<MapEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<'a> {
    pub entry: &'a MapEntry,
    pub distance: f64,
}

pub fn build_index(entries: Vec<MapEntry>) -> Result<RetrievalIndex> {
    let dim = entries.first().ok_or(Error::EmptyMap)?.descriptor.len();
    if dim == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    let mut entries = entries
        .into_iter()
        .map(|mut e| {
            if e.descriptor.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: e.descriptor.len(),
                });
            }
            if !e.pose.is_valid() {
                return Err(Error::IndexFormat(format!("invalid pose for {}", e.id)));
            }
            let norm = e.descriptor.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                e.descriptor = normalize_descriptor(&e.descriptor)?;
            }
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::IndexFormat(format!("duplicate map id {}", w[0].id)));
    }
    Ok(RetrievalIndex { dim, entries })
}

impl RetrievalIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MapEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&MapEntry> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// The `min(n, len)` entries nearest to `descriptor` (normalized first)
    /// by Euclidean distance, ties broken by ascending id.
    pub fn query_top_n(&self, descriptor: &[f32], n: usize) -> Result<Vec<Hit<'_>>> {
        if descriptor.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: descriptor.len(),
            });
        }
        let q = normalize_descriptor(descriptor)?;
        let mut hits: Vec<Hit<'_>> = self
            .entries
            .iter()
            .map(|entry| Hit {
                entry,
                distance: distance(&q, &entry.descriptor),
            })
            .collect();
        // Entries are id-sorted, so a stable sort keeps id order on ties.
        hits.sort_by(|a, b| a.distance.total_cmp(&b.distance));
        hits.truncate(n);
        Ok(hits)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<RetrievalIndex> {
        RetrievalIndex::from_bytes(&fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        for e in &self.entries {
            put_str(&mut out, &e.id);
            for v in &e.descriptor {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in e.pose.to_row_major() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            put_str(&mut out, &e.rgb_path);
            put_str(&mut out, &e.depth_path);
            let k = &e.intrinsics;
            for v in [k.fx, k.fy, k.cx, k.cy] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&k.width.to_le_bytes());
            out.extend_from_slice(&k.height.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<RetrievalIndex> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(INDEX_MAGIC.len())? != INDEX_MAGIC {
            return Err(Error::IndexFormat("bad magic".into()));
        }
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id = r.string()?;
            let descriptor = (0..dim)
                .map(|_| r.f32())
                .collect::<Result<Vec<_>>>()?;
            let pose: Vec<f64> = (0..16).map(|_| r.f64()).collect::<Result<_>>()?;
            let pose = RigidTransform::from_row_major(&pose).map_err(|e| Error::IndexFormat(e.to_string()))?;
            let rgb_path = r.string()?;
            let depth_path = r.string()?;
            let (fx, fy, cx, cy) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let (width, height) = (r.u32()?, r.u32()?);
            let intrinsics = CameraIntrinsics::new(fx, fy, cx, cy, width, height)
                .map_err(|e| Error::IndexFormat(e.to_string()))?;
            entries.push(MapEntry {
                id,
                descriptor,
                pose,
                rgb_path,
                depth_path,
                intrinsics,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::IndexFormat("trailing bytes".into()));
        }
        build_index(entries)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::IndexFormat("truncated index file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::IndexFormat("string is not UTF-8".into()))
    }
}

/// `T^M_q = T^M_r · (T^q_r)⁻¹`.
pub fn global_pose(t_map_ref: &RigidTransform, t_q_ref: &RigidTransform) -> RigidTransform {
    t_map_ref.compose(&t_q_ref.inverse())
}

/// Reads a raw little-endian `f32` descriptor file.
pub fn read_desc_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() || bytes.len() % 4 != 0 {
        return Err(Error::IndexFormat(format!(
            "{}: descriptor file length {} is not a positive multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn write_desc_file(path: &Path, v: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

/// Source of global image descriptors.
pub trait DescriptorSource: Send + Sync {
    /// Descriptor of the image `key` whose backbone features are `features`.
    fn descriptor(&self, key: &str, features: &BackboneOutput) -> Result<Vec<f32>>;
}

/// Spatially averaged, L2-normalized coarse features.
#[derive(Debug, Clone, Copy, Default)]
pub struct PooledFeatures;

pub fn pooled_descriptor(features: &BackboneOutput) -> Result<Vec<f32>> {
    let (c, h, w) = features.f1.dims3()?;
    let plane = h * w;
    let d = features.f1.data();
    let pooled: Vec<f32> = (0..c)
        .map(|ch| (d[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64) as f32)
        .collect();
    normalize_descriptor(&pooled)
}

impl DescriptorSource for PooledFeatures {
    fn descriptor(&self, _key: &str, features: &BackboneOutput) -> Result<Vec<f32>> {
        pooled_descriptor(features)
    }
}

/// Precomputed descriptors stored as `<dir>/<key>.desc`.
#[derive(Debug, Clone)]
pub struct DescFiles {
    pub dir: PathBuf,
}

impl DescriptorSource for DescFiles {
    fn descriptor(&self, key: &str, _features: &BackboneOutput) -> Result<Vec<f32>> {
        let v = read_desc_file(&self.dir.join(format!("{key}.desc")))?;
        normalize_descriptor(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, d: Vec<f32>) -> MapEntry {
        MapEntry {
            id: id.into(),
            descriptor: d,
            pose: RigidTransform::identity(),
            rgb_path: format!("{id}.png"),
            depth_path: format!("{id}.depth.png"),
            intrinsics: CameraIntrinsics::new(500.0, 500.0, 319.5, 239.5, 640, 480).unwrap(),
        }
    }

    #[test]
    fn basis_query_and_single_entry() {
        let idx = build_index(vec![
            entry("a", vec![1.0, 0.0, 0.0]),
            entry("b", vec![0.0, 1.0, 0.0]),
            entry("c", vec![0.0, 0.0, 1.0]),
        ])
        .unwrap();
        let hits = idx.query_top_n(&[0.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(hits[0].entry.id, "b");
        assert_eq!(idx.query_top_n(&[0.0, 1.0, 0.0], 10).unwrap().len(), 3);

        let one = build_index(vec![entry("only", vec![0.3, 0.4])]).unwrap();
        assert_eq!(one.query_top_n(&[-1.0, 0.0], 1).unwrap()[0].entry.id, "only");
    }

    #[test]
    fn errors() {
        assert!(matches!(build_index(vec![]), Err(Error::EmptyMap)));
        assert!(matches!(
            build_index(vec![entry("a", vec![1.0, 0.0]), entry("b", vec![1.0])]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        let idx = build_index(vec![entry("a", vec![1.0, 0.0])]).unwrap();
        assert!(matches!(idx.query_top_n(&[1.0], 1), Err(Error::DimensionMismatch { .. })));
        assert!(build_index(vec![entry("a", vec![1.0]), entry("a", vec![1.0])]).is_err());
    }

    #[test]
    fn ties_resolve_by_id() {
        let idx = build_index(vec![
            entry("z", vec![1.0, 1.0]),
            entry("m", vec![1.0, 1.0]),
            entry("a", vec![1.0, 1.0]),
        ])
        .unwrap();
        let ids: Vec<_> = idx.query_top_n(&[1.0, 0.0], 3).unwrap().iter().map(|h| h.entry.id.clone()).collect();
        assert_eq!(ids, ["a", "m", "z"]);
    }

    #[test]
    fn file_round_trip_and_bad_magic() {
        let idx = build_index(vec![entry("x", vec![0.6, 0.8]), entry("y", vec![1.0, 0.0])]).unwrap();
        let bytes = idx.to_bytes();
        assert_eq!(RetrievalIndex::from_bytes(&bytes).unwrap(), idx);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(RetrievalIndex::from_bytes(&bad), Err(Error::IndexFormat(_))));
        assert!(RetrievalIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
