// SPDX-License-Identifier: Apache-2.0
//! Input embeddings and the raw tensor file format.
//!
//! Tensor files are little-endian `f32` in row-major (z-major for volumes)
//! order, with a JSON sidecar at `<path>.json`:
//! `{"dims": [nz, ny, nx], "dtype": "float32"}` (two dims for feature files).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Linear, NnError, ParamId, ParamKind, ParamStore, Result, Tape, Var};
use crate::text::TokenSequence;

/// Single-channel voxel grid indexed `[z, y, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    pub voxels: Array3<f64>,
}

impl VolumeGrid {
    pub fn new(voxels: Array3<f64>) -> Self {
        Self { voxels }
    }

    pub fn dims(&self) -> [usize; 3] {
        let (z, y, x) = self.voxels.dim();
        [z, y, x]
    }

    pub fn filled(dims: [usize; 3], value: f64) -> Self {
        Self::new(Array3::from_elem((dims[0], dims[1], dims[2]), value))
    }
}

/// Cuts a volume into non-overlapping `p^3` patches, one row per patch.
/// Patches and the voxels inside each patch follow z-major raster order.
pub fn patchify(vol: &VolumeGrid, p: usize) -> Result<Array2<f64>> {
    let dims = vol.dims();
    if p == 0 || dims.iter().any(|&d| d % p != 0) {
        return Err(NnError::IndivisibleVolume { dims, patch: p });
    }
    let [nz, ny, nx] = dims.map(|d| d / p);
    let mut out = Array2::zeros((nz * ny * nx, p * p * p));
    for pz in 0..nz {
        for py in 0..ny {
            for px in 0..nx {
                let row_idx = (pz * ny + py) * nx + px;
                let mut row = out.row_mut(row_idx);
                let mut k = 0;
                for z in 0..p {
                    for y in 0..p {
                        for x in 0..p {
                            row[k] = vol.voxels[[pz * p + z, py * p + y, px * p + x]];
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Patch projection plus learned positional embedding.
#[derive(Debug, Clone, Copy)]
pub struct PatchEmbed3d {
    pub proj: Linear,
    pub pos: ParamId,
    pub patch: usize,
    pub n_tokens: usize,
}

impl PatchEmbed3d {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dims: [usize; 3],
        patch: usize,
        d: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if patch == 0 || dims.iter().any(|&x| x % patch != 0) {
            return Err(NnError::IndivisibleVolume { dims, patch });
        }
        let n_tokens = dims.iter().map(|&x| x / patch).product();
        let proj = Linear::register(store, &format!("{name}.proj"), patch.pow(3), d, rng);
        let pos = store.normal(format!("{name}.pos"), ParamKind::Embedding, (n_tokens, d), 0.02, rng);
        Ok(Self {
            proj,
            pos,
            patch,
            n_tokens,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, vol: &VolumeGrid) -> Result<Var> {
        let patches = patchify(vol, self.patch)?;
        if patches.nrows() != self.n_tokens {
            return Err(NnError::ShapeMismatch(format!(
                "volume yields {} patches, embedding expects {}",
                patches.nrows(),
                self.n_tokens
            )));
        }
        let x = tape.input(patches);
        let x = self.proj.forward(tape, x)?;
        let pos = tape.param(self.pos);
        Ok(tape.add(x, pos))
    }
}

/// Token embedding table plus learned positional embedding.
#[derive(Debug, Clone, Copy)]
pub struct TextEmbedding {
    pub table: ParamId,
    pub pos: ParamId,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl TextEmbedding {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        max_len: usize,
        d: usize,
        rng: &mut R,
    ) -> Self {
        let table = store.normal(
            format!("{name}.table"),
            ParamKind::Embedding,
            (vocab_size, d),
            0.02,
            rng,
        );
        let pos = store.normal(format!("{name}.pos"), ParamKind::Embedding, (max_len, d), 0.02, rng);
        Self {
            table,
            pos,
            vocab_size,
            max_len,
        }
    }

    /// Returns the embedded sequence and the table leaf (for saliency).
    pub fn forward(&self, tape: &mut Tape<'_>, seq: &TokenSequence) -> Result<(Var, Var)> {
        if seq.len() != self.max_len {
            return Err(NnError::ShapeMismatch(format!(
                "sequence length {} but embedding expects {}",
                seq.len(),
                self.max_len
            )));
        }
        if let Some(&bad) = seq.ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(NnError::ShapeMismatch(format!("token id {bad} outside vocabulary")));
        }
        let table = tape.param(self.table);
        let rows = tape.gather(table, &seq.ids);
        let pos = tape.param(self.pos);
        Ok((tape.add(rows, pos), table))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    dims: Vec<usize>,
    dtype: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NnError + '_ {
    move |source| NnError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> NnError {
    NnError::BadTensorFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn write_tensor(path: &Path, dims: &[usize], values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(|v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io_err(path))?;
    let side = Sidecar {
        dims: dims.to_vec(),
        dtype: "float32".into(),
    };
    let sc = sidecar_path(path);
    fs::write(&sc, serde_json::to_string(&side).expect("sidecar serializes")).map_err(io_err(&sc))
}

/// Reads a tensor file and its sidecar: `(dims, values)`.
pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let sc = sidecar_path(path);
    let side: Sidecar =
        serde_json::from_str(&fs::read_to_string(&sc).map_err(io_err(&sc))?).map_err(|e| bad(&sc, e.to_string()))?;
    if side.dtype != "float32" {
        return Err(bad(path, format!("unsupported dtype {}", side.dtype)));
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let n: usize = side.dims.iter().product();
    if bytes.len() != 4 * n {
        return Err(bad(path, format!("expected {} bytes, found {}", 4 * n, bytes.len())));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((side.dims, values))
}

pub fn write_volume_file(path: &Path, vol: &VolumeGrid) -> Result<()> {
    write_tensor(path, &vol.dims(), vol.voxels.iter().copied())
}

pub fn read_volume_file(path: &Path) -> Result<VolumeGrid> {
    let (dims, values) = read_tensor(path)?;
    let [z, y, x] =
        <[usize; 3]>::try_from(dims.as_slice()).map_err(|_| bad(path, format!("volume needs 3 dims, got {dims:?}")))?;
    let voxels = Array3::from_shape_vec((z, y, x), values).map_err(|e| bad(path, e.to_string()))?;
    Ok(VolumeGrid::new(voxels))
}

pub fn write_feature_file(path: &Path, features: &Array2<f64>) -> Result<()> {
    let (r, c) = features.dim();
    write_tensor(path, &[r, c], features.iter().copied())
}

pub fn read_feature_file(path: &Path) -> Result<Array2<f64>> {
    let (dims, values) = read_tensor(path)?;
    let [r, c] = <[usize; 2]>::try_from(dims.as_slice())
        .map_err(|_| bad(path, format!("feature file needs 2 dims, got {dims:?}")))?;
    Array2::from_shape_vec((r, c), values).map_err(|e| bad(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn patch_count_and_divisibility() {
        let vol = VolumeGrid::filled([32, 32, 32], 0.5);
        assert_eq!(patchify(&vol, 8).unwrap().dim(), (64, 512));
        let odd = VolumeGrid::filled([33, 33, 33], 0.5);
        assert!(matches!(patchify(&odd, 8), Err(NnError::IndivisibleVolume { .. })));
    }

    #[test]
    fn patch_order_is_z_major() {
        let mut voxels = Array3::zeros((4, 4, 4));
        voxels[[2, 0, 0]] = 1.0; // patch (1,0,0) -> index 4
        voxels[[0, 0, 3]] = 2.0; // patch (0,0,1) -> index 1, last x within first row
        let rows = patchify(&VolumeGrid::new(voxels), 2).unwrap();
        assert_eq!(rows[[4, 0]], 1.0);
        assert_eq!(rows[[1, 1]], 2.0);
    }

    #[test]
    fn constant_volume_without_positions_gives_identical_rows() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pe = PatchEmbed3d::register(&mut store, "pe", [32, 32, 32], 8, 16, &mut rng).unwrap();
        store.value_mut(pe.pos).fill(0.0);
        let mut tape = Tape::new(&store);
        let out = pe.forward(&mut tape, &VolumeGrid::filled([32, 32, 32], 0.7)).unwrap();
        let v = tape.value(out);
        assert_eq!(v.nrows(), 64);
        for row in v.rows() {
            assert_eq!(row, v.row(0));
        }
    }

    #[test]
    fn tensor_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vol = VolumeGrid::new(Array3::from_shape_simple_fn((4, 6, 8), || {
            rng.random_range(0.0..1.0f32) as f64
        }));
        let p = dir.path().join("v.f32");
        write_volume_file(&p, &vol).unwrap();
        assert_eq!(read_volume_file(&p).unwrap(), vol);
        assert!(read_feature_file(&p).is_err());

        let feats = Array2::from_shape_fn((3, 5), |(i, j)| (i * 5 + j) as f64);
        let q = dir.path().join("f.f32");
        write_feature_file(&q, &feats).unwrap();
        assert_eq!(read_feature_file(&q).unwrap(), feats);
    }
}
