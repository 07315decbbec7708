//! Labeled voxel-grid container: raw+meta I/O, morphology, sub-sample
//! extraction, rotation and chunk planning.
//!
//! Voxels are stored x-fastest (`idx = x + nx*(y + ny*z)`) with canonical
//! label codes: 0 unused, 1 solid, 2 reference fluid, 3 other fluid.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

/// Canonical phase codes.
pub const LABEL_UNUSED: u8 = 0;
pub const LABEL_SOLID: u8 = 1;
pub const LABEL_REFERENCE: u8 = 2;
pub const LABEL_OTHER: u8 = 3;

/// Binarization rule: `rule[label]` tells whether that phase maps to 1.
pub type BinarizeRule = [bool; 4];

/// Solid and reference fluid map to 1, everything else to 0. Training and
/// prediction must use the same rule.
pub const CANONICAL_BINARIZE: BinarizeRule = [false, true, true, false];

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("raw file holds {actual} bytes but dims {nx}x{ny}x{nz} need {expected}")]
    SizeMismatch { actual: usize, expected: usize, nx: usize, ny: usize, nz: usize },
    #[error("raw byte {0} has no entry in the meta label mapping")]
    UnknownLabel(u8),
    #[error("invalid meta file: {0}")]
    Meta(String),
    #[error("invalid phase label {0}, expected 0..=3")]
    InvalidLabel(u8),
    #[error("sub-sample radius must be >= 2, got {0}")]
    RadiusTooSmall(usize),
    #[error("chunk plan needs target_chunk_side >= 2*halo+1 (side {side}, halo {halo})")]
    BadChunkParams { side: usize, halo: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Labeled 3-D voxel grid. Immutable after construction; all operations are
/// pure and safe to call from concurrent workers over a shared reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Volume {
    dims: (usize, usize, usize),
    data: Vec<u8>,
}

impl Volume {
    /// Build a volume from canonical label data (x-fastest).
    pub fn from_data(dims: (usize, usize, usize), data: Vec<u8>) -> Result<Self, VolumeError> {
        let (nx, ny, nz) = dims;
        let expected = nx * ny * nz;
        if data.len() != expected {
            return Err(VolumeError::SizeMismatch { actual: data.len(), expected, nx, ny, nz });
        }
        if let Some(&bad) = data.iter().find(|&&v| v > 3) {
            return Err(VolumeError::InvalidLabel(bad));
        }
        Ok(Self { dims, data })
    }

    /// All-`fill` volume. `fill` must be a canonical label.
    pub fn filled(dims: (usize, usize, usize), fill: u8) -> Result<Self, VolumeError> {
        if fill > 3 {
            return Err(VolumeError::InvalidLabel(fill));
        }
        let (nx, ny, nz) = dims;
        Ok(Self { dims, data: vec![fill; nx * ny * nz] })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.index(x, y, z)]
    }

    /// Label at signed coordinates; anything outside the grid reads as 0.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64, z: i64) -> u8 {
        let (nx, ny, nz) = self.dims;
        if x < 0 || y < 0 || z < 0 || x >= nx as i64 || y >= ny as i64 || z >= nz as i64 {
            LABEL_UNUSED
        } else {
            self.data[x as usize + nx * (y as usize + ny * z as usize)]
        }
    }

    /// True if the given phase occurs anywhere.
    pub fn contains_label(&self, label: u8) -> bool {
        self.data.iter().any(|&v| v == label)
    }

    /// Count voxels carrying `label`.
    pub fn count_label(&self, label: u8) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }
}

// ---------------------------------------------------------------------------
// raw + meta I/O
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct MetaFile {
    shape: [usize; 3],
    order: String,
    labels: BTreeMap<String, String>,
}

fn phase_code(name: &str) -> Option<u8> {
    match name {
        "unused" => Some(LABEL_UNUSED),
        "solid" => Some(LABEL_SOLID),
        "reference_fluid" => Some(LABEL_REFERENCE),
        "other_fluid" => Some(LABEL_OTHER),
        _ => None,
    }
}

/// Load a volume from a headerless raw byte file plus its text meta sidecar.
///
/// The meta declares `shape`, `order = "xyz"` (x-fastest) and a `labels`
/// table mapping raw byte values to phase names; raw bytes are remapped to
/// the canonical codes on load.
pub fn load_volume(raw_path: &Path, meta_path: &Path) -> Result<Volume, VolumeError> {
    let meta_text = std::fs::read_to_string(meta_path)?;
    let meta: MetaFile = toml::from_str(&meta_text).map_err(|e| VolumeError::Meta(e.to_string()))?;
    if meta.order != "xyz" {
        return Err(VolumeError::Meta(format!("unsupported voxel order {:?}", meta.order)));
    }
    let [nx, ny, nz] = meta.shape;
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(VolumeError::Meta("shape entries must be positive".into()));
    }

    // 256-entry remap table; 255 marks raw values without a mapping.
    let mut remap = [255u8; 256];
    for (k, v) in &meta.labels {
        let raw: u8 = k
            .parse()
            .map_err(|_| VolumeError::Meta(format!("label key {k:?} is not a byte value")))?;
        let code = phase_code(v).ok_or_else(|| VolumeError::Meta(format!("unknown phase name {v:?}")))?;
        remap[raw as usize] = code;
    }

    let mut raw = Vec::new();
    std::fs::File::open(raw_path)?.read_to_end(&mut raw)?;
    let expected = nx * ny * nz;
    if raw.len() != expected {
        return Err(VolumeError::SizeMismatch { actual: raw.len(), expected, nx, ny, nz });
    }

    let mut data = Vec::with_capacity(expected);
    for &b in &raw {
        let code = remap[b as usize];
        if code == 255 {
            return Err(VolumeError::UnknownLabel(b));
        }
        data.push(code);
    }
    Ok(Volume { dims: (nx, ny, nz), data })
}

/// Write a volume as raw bytes plus a meta sidecar in the canonical mapping.
pub fn save_volume(vol: &Volume, raw_path: &Path, meta_path: &Path) -> Result<(), VolumeError> {
    let (nx, ny, nz) = vol.dims;
    std::fs::write(raw_path, &vol.data)?;
    let mut meta = std::fs::File::create(meta_path)?;
    writeln!(meta, "shape = [{nx}, {ny}, {nz}]")?;
    writeln!(meta, "order = \"xyz\"")?;
    writeln!(meta)?;
    writeln!(meta, "[labels]")?;
    writeln!(meta, "0 = \"unused\"")?;
    writeln!(meta, "1 = \"solid\"")?;
    writeln!(meta, "2 = \"reference_fluid\"")?;
    writeln!(meta, "3 = \"other_fluid\"")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Morphology
// ---------------------------------------------------------------------------

/// One-voxel dilation of the given phase with the 3x3x3 structuring element
/// (26-connectivity): the result is true wherever the voxel's neighborhood,
/// itself included, contains `label`. Implemented as three separable 3-tap
/// OR passes; clipped at the grid boundary.
pub fn dilate(vol: &Volume, label: u8) -> Result<Vec<bool>, VolumeError> {
    if label > 3 {
        return Err(VolumeError::InvalidLabel(label));
    }
    let (nx, ny, nz) = vol.dims;
    let n = vol.data.len();
    let mut a: Vec<u8> = vol.data.iter().map(|&v| u8::from(v == label)).collect();
    let mut b = vec![0u8; n];

    // x pass
    for row in 0..ny * nz {
        let base = row * nx;
        for x in 0..nx {
            let l = if x > 0 { a[base + x - 1] } else { 0 };
            let r = if x + 1 < nx { a[base + x + 1] } else { 0 };
            b[base + x] = a[base + x] | l | r;
        }
    }
    // y pass
    for z in 0..nz {
        let slab = z * nx * ny;
        for y in 0..ny {
            let row = slab + y * nx;
            let up = if y > 0 { Some(slab + (y - 1) * nx) } else { None };
            let dn = if y + 1 < ny { Some(slab + (y + 1) * nx) } else { None };
            for x in 0..nx {
                let mut v = b[row + x];
                if let Some(u) = up {
                    v |= b[u + x];
                }
                if let Some(d) = dn {
                    v |= b[d + x];
                }
                a[row + x] = v;
            }
        }
    }
    // z pass
    let slab = nx * ny;
    for z in 0..nz {
        let here = z * slab;
        let up = if z > 0 { Some((z - 1) * slab) } else { None };
        let dn = if z + 1 < nz { Some((z + 1) * slab) } else { None };
        for i in 0..slab {
            let mut v = a[here + i];
            if let Some(u) = up {
                v |= a[u + i];
            }
            if let Some(d) = dn {
                v |= a[d + i];
            }
            b[here + i] = v;
        }
    }
    Ok(b.into_iter().map(|v| v != 0).collect())
}

// ---------------------------------------------------------------------------
// Sub-sample extraction
// ---------------------------------------------------------------------------

/// Spherically masked binary cube cut out of a volume; the network input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cube {
    /// Nominal radius r; the mask keeps voxels within r+0.5 of the center.
    pub radius: usize,
    /// Cube side, always 2r+1.
    pub side: usize,
    /// Center coordinate in the parent volume.
    pub center: (i64, i64, i64),
    /// Flattened occupancy, x-fastest, side^3 entries of 0/1.
    pub values: Vec<u8>,
}

impl Cube {
    /// Voxels inside the spherical mask that carry value 1.
    pub fn ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// Number of lattice offsets within the spherical mask of nominal radius r.
pub fn mask_size(r: usize) -> usize {
    let side = 2 * r as i64 + 1;
    let limit = (r as f64 + 0.5) * (r as f64 + 0.5);
    let mut count = 0;
    for dz in -(side / 2)..=(side / 2) {
        for dy in -(side / 2)..=(side / 2) {
            for dx in -(side / 2)..=(side / 2) {
                if (dx * dx + dy * dy + dz * dz) as f64 <= limit {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Extract the spherically masked binary cube of nominal radius `r` centered
/// at `center`. Out-of-bounds voxels read as 0; voxels farther than r+0.5
/// from the center are forced to 0 regardless of phase.
pub fn extract_cube(
    vol: &Volume,
    center: (i64, i64, i64),
    r: usize,
    rule: BinarizeRule,
) -> Result<Cube, VolumeError> {
    if r < 2 {
        return Err(VolumeError::RadiusTooSmall(r));
    }
    let side = 2 * r + 1;
    let ri = r as i64;
    let limit = (r as f64 + 0.5) * (r as f64 + 0.5);
    let mut values = Vec::with_capacity(side * side * side);
    for dz in -ri..=ri {
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                let inside = (dx * dx + dy * dy + dz * dz) as f64 <= limit;
                let v = if inside {
                    let label = vol.get_clamped(center.0 + dx, center.1 + dy, center.2 + dz);
                    u8::from(rule[label as usize])
                } else {
                    0
                };
                values.push(v);
            }
        }
    }
    Ok(Cube { radius: r, side, center, values })
}

// ---------------------------------------------------------------------------
// Rotation
// ---------------------------------------------------------------------------

/// 3x3 rotation matrix from extrinsic Euler angles (degrees): Rz * Ry * Rx.
pub fn rotation_matrix(angles_deg: [f64; 3]) -> [[f64; 3]; 3] {
    let [ax, ay, az] = angles_deg.map(f64::to_radians);
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    // rows of Rz(az) * Ry(ay) * Rx(ax)
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

/// Rotate the whole volume about its center with nearest-neighbor
/// resampling. Output dims equal input dims; source positions falling
/// outside the grid map to label 0.
pub fn rotate_volume(vol: &Volume, angles_deg: [f64; 3]) -> Volume {
    let (nx, ny, nz) = vol.dims;
    let rot = rotation_matrix(angles_deg);
    let c = [(nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0, (nz as f64 - 1.0) / 2.0];
    let mut data = vec![LABEL_UNUSED; vol.data.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
                // inverse rotation = transpose
                let sx = rot[0][0] * p[0] + rot[1][0] * p[1] + rot[2][0] * p[2] + c[0];
                let sy = rot[0][1] * p[0] + rot[1][1] * p[1] + rot[2][1] * p[2] + c[1];
                let sz = rot[0][2] * p[0] + rot[1][2] * p[1] + rot[2][2] * p[2] + c[2];
                let v = vol.get_clamped(sx.round() as i64, sy.round() as i64, sz.round() as i64);
                data[x + nx * (y + ny * z)] = v;
            }
        }
    }
    Volume { dims: vol.dims, data }
}

// ---------------------------------------------------------------------------
// Chunk planning
// ---------------------------------------------------------------------------

/// Axis-aligned chunk: an interior box owned exactly once plus a halo box
/// carrying read-only context, both as [lo, hi) index ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub halo_lo: [usize; 3],
    pub halo_hi: [usize; 3],
}

impl ChunkBox {
    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let p = [x, y, z];
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] < self.hi[a])
    }

    pub fn interior_volume(&self) -> usize {
        (0..3).map(|a| self.hi[a] - self.lo[a]).product()
    }
}

/// Partition of a volume into chunk interiors with halo context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    pub chunks: Vec<ChunkBox>,
    pub halo: usize,
}

/// Split `n` into `parts` nearly equal contiguous ranges.
fn split_axis(n: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = n / parts;
    let rem = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut lo = 0;
    for i in 0..parts {
        let len = base + usize::from(i < rem);
        out.push((lo, lo + len));
        lo += len;
    }
    out
}

/// Plan a partition of the volume into chunks of roughly
/// `target_chunk_side` per axis. Interiors tile the volume exactly once;
/// each chunk carries `halo` voxels of context clipped at the faces.
pub fn plan_chunks(vol: &Volume, target_chunk_side: usize, halo: usize) -> Result<ChunkPlan, VolumeError> {
    if target_chunk_side < 2 * halo + 1 {
        return Err(VolumeError::BadChunkParams { side: target_chunk_side, halo });
    }
    let (nx, ny, nz) = vol.dims;
    let axes = [nx, ny, nz].map(|n| split_axis(n, n.div_ceil(target_chunk_side).max(1)));
    let mut chunks = Vec::new();
    for &(zl, zh) in &axes[2] {
        for &(yl, yh) in &axes[1] {
            for &(xl, xh) in &axes[0] {
                let lo = [xl, yl, zl];
                let hi = [xh, yh, zh];
                let dims = [nx, ny, nz];
                let halo_lo = [0, 1, 2].map(|a| lo[a].saturating_sub(halo));
                let halo_hi = [0, 1, 2].map(|a| (hi[a] + halo).min(dims[a]));
                chunks.push(ChunkBox { lo, hi, halo_lo, halo_hi });
            }
        }
    }
    Ok(ChunkPlan { chunks, halo })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_voxel_volume(dims: (usize, usize, usize), at: (usize, usize, usize), label: u8) -> Volume {
        let mut v = Volume::filled(dims, LABEL_UNUSED).unwrap();
        let idx = v.index(at.0, at.1, at.2);
        v.data[idx] = label;
        v
    }

    /// Brute-force 26-neighborhood dilation; the independent oracle.
    fn dilate_oracle(vol: &Volume, label: u8) -> Vec<bool> {
        let (nx, ny, nz) = vol.dims();
        let mut out = vec![false; vol.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    'probe: for dz in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                let (sx, sy, sz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                                if sx < 0 || sy < 0 || sz < 0
                                    || sx >= nx as i64 || sy >= ny as i64 || sz >= nz as i64
                                {
                                    continue;
                                }
                                if vol.get(sx as usize, sy as usize, sz as usize) == label {
                                    out[vol.index(x, y, z)] = true;
                                    break 'probe;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn load_identity_2x2x2() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("v.raw");
        let meta = dir.path().join("v.toml");
        std::fs::write(&raw, [1u8; 8]).unwrap();
        std::fs::write(
            &meta,
            "shape = [2, 2, 2]\norder = \"xyz\"\n[labels]\n0 = \"unused\"\n1 = \"solid\"\n2 = \"reference_fluid\"\n3 = \"other_fluid\"\n",
        )
        .unwrap();
        let vol = load_volume(&raw, &meta).unwrap();
        assert_eq!(vol.dims(), (2, 2, 2));
        assert_eq!(vol.count_label(LABEL_SOLID), 8);
    }

    #[test]
    fn load_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("v.raw");
        let meta = dir.path().join("v.toml");
        std::fs::write(&raw, [1u8; 7]).unwrap();
        std::fs::write(&meta, "shape = [2, 2, 2]\norder = \"xyz\"\n[labels]\n1 = \"solid\"\n").unwrap();
        assert!(matches!(load_volume(&raw, &meta), Err(VolumeError::SizeMismatch { .. })));
    }

    #[test]
    fn load_unknown_label() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("v.raw");
        let meta = dir.path().join("v.toml");
        let mut bytes = [1u8; 8];
        bytes[3] = 9;
        std::fs::write(&raw, bytes).unwrap();
        std::fs::write(
            &meta,
            "shape = [2, 2, 2]\norder = \"xyz\"\n[labels]\n0 = \"unused\"\n1 = \"solid\"\n2 = \"reference_fluid\"\n3 = \"other_fluid\"\n",
        )
        .unwrap();
        assert!(matches!(load_volume(&raw, &meta), Err(VolumeError::UnknownLabel(9))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("v.raw");
        let meta = dir.path().join("v.toml");
        let mut vol = Volume::filled((3, 4, 5), LABEL_OTHER).unwrap();
        vol.data[7] = LABEL_SOLID;
        vol.data[13] = LABEL_REFERENCE;
        save_volume(&vol, &raw, &meta).unwrap();
        assert_eq!(load_volume(&raw, &meta).unwrap(), vol);
    }

    #[test]
    fn dilate_interior_voxel_gives_27_block() {
        let vol = single_voxel_volume((5, 5, 5), (2, 2, 2), LABEL_SOLID);
        let mask = dilate(&vol, LABEL_SOLID).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 27);
        assert!(mask[vol.index(1, 1, 1)] && mask[vol.index(3, 3, 3)]);
        assert!(!mask[vol.index(0, 0, 0)]);
    }

    #[test]
    fn dilate_corner_voxel_clipped_to_8() {
        let vol = single_voxel_volume((5, 5, 5), (0, 0, 0), LABEL_REFERENCE);
        let mask = dilate(&vol, LABEL_REFERENCE).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 8);
    }

    #[test]
    fn dilate_two_adjacent_voxels_is_36_block() {
        let mut vol = Volume::filled((7, 7, 7), LABEL_UNUSED).unwrap();
        let i = vol.index(3, 3, 3);
        let j = vol.index(4, 3, 3);
        vol.data[i] = LABEL_OTHER;
        vol.data[j] = LABEL_OTHER;
        let mask = dilate(&vol, LABEL_OTHER).unwrap();
        // oracle: brute-force neighborhood scan
        assert_eq!(mask, dilate_oracle(&vol, LABEL_OTHER));
        assert_eq!(mask.iter().filter(|&&m| m).count(), 36);
    }

    #[test]
    fn dilate_matches_oracle_on_random_volumes() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(11, &[0]);
        for _ in 0..20 {
            let dims = (rng.gen_range(1..10), rng.gen_range(1..10), rng.gen_range(1..10));
            let data: Vec<u8> = (0..dims.0 * dims.1 * dims.2).map(|_| rng.gen_range(0..4)).collect();
            let vol = Volume::from_data(dims, data).unwrap();
            for label in 0..4u8 {
                assert_eq!(dilate(&vol, label).unwrap(), dilate_oracle(&vol, label));
            }
        }
    }

    #[test]
    fn dilate_rejects_bad_label() {
        let vol = Volume::filled((2, 2, 2), LABEL_SOLID).unwrap();
        assert!(matches!(dilate(&vol, 4), Err(VolumeError::InvalidLabel(4))));
    }

    #[test]
    fn dilation_grows_support() {
        let vol = single_voxel_volume((9, 9, 9), (4, 4, 4), LABEL_SOLID);
        let once = dilate(&vol, LABEL_SOLID).unwrap();
        // feed the mask back in as a solid volume
        let again_vol = Volume::from_data(
            vol.dims(),
            once.iter().map(|&m| if m { LABEL_SOLID } else { LABEL_UNUSED }).collect(),
        )
        .unwrap();
        let twice = dilate(&again_vol, LABEL_SOLID).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!(!a || *b, "dilation must not lose support");
        }
    }

    #[test]
    fn mask_size_r4_is_389() {
        // lattice points with dx^2+dy^2+dz^2 <= 4.5^2
        assert_eq!(mask_size(4), 389);
        assert_eq!(mask_size(8), 2553);
    }

    #[test]
    fn extract_cube_shape_and_mask() {
        let vol = Volume::filled((20, 20, 20), LABEL_SOLID).unwrap();
        let cube = extract_cube(&vol, (10, 10, 10), 4, CANONICAL_BINARIZE).unwrap();
        assert_eq!(cube.side, 9);
        assert_eq!(cube.values.len(), 729);
        assert_eq!(cube.ones(), 389);
    }

    #[test]
    fn extract_cube_zero_pads_outside() {
        let vol = Volume::filled((20, 20, 20), LABEL_UNUSED).unwrap();
        let cube = extract_cube(&vol, (0, 10, 10), 4, CANONICAL_BINARIZE).unwrap();
        assert!(cube.values.iter().all(|&v| v == 0));
    }

    #[test]
    fn extract_cube_rejects_small_radius() {
        let vol = Volume::filled((8, 8, 8), LABEL_SOLID).unwrap();
        assert!(matches!(
            extract_cube(&vol, (4, 4, 4), 1, CANONICAL_BINARIZE),
            Err(VolumeError::RadiusTooSmall(1))
        ));
    }

    #[test]
    fn extract_cube_translation_equivariant() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(5, &[1]);
        let dims = (24, 24, 24);
        let data: Vec<u8> = (0..dims.0 * dims.1 * dims.2).map(|_| rng.gen_range(0..4)).collect();
        let vol = Volume::from_data(dims, data).unwrap();
        // shifted copy: move content by (1,2,3)
        let mut shifted = vec![LABEL_UNUSED; vol.len()];
        for z in 0..21 {
            for y in 0..22 {
                for x in 0..23 {
                    shifted[vol.index(x + 1, y + 2, z + 3)] = vol.get(x, y, z);
                }
            }
        }
        let svol = Volume::from_data(dims, shifted).unwrap();
        let a = extract_cube(&vol, (10, 10, 10), 4, CANONICAL_BINARIZE).unwrap();
        let b = extract_cube(&svol, (11, 12, 13), 4, CANONICAL_BINARIZE).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn rotate_identity() {
        let mut vol = Volume::filled((10, 11, 12), LABEL_OTHER).unwrap();
        vol.data[37] = LABEL_SOLID;
        assert_eq!(rotate_volume(&vol, [0.0, 0.0, 0.0]), vol);
    }

    #[test]
    fn rotate_90_about_z_permutes_labels() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(3, &[2]);
        let n = 8;
        let data: Vec<u8> = (0..n * n * n).map(|_| rng.gen_range(0..4)).collect();
        let vol = Volume::from_data((n, n, n), data).unwrap();
        let rot = rotate_volume(&vol, [0.0, 0.0, 90.0]);
        for label in 0..4u8 {
            assert_eq!(vol.count_label(label), rot.count_label(label), "label {label} multiset");
        }
        // four quarter turns = identity
        let back = rotate_volume(
            &rotate_volume(&rotate_volume(&rot, [0.0, 0.0, 90.0]), [0.0, 0.0, 90.0]),
            [0.0, 0.0, 90.0],
        );
        assert_eq!(back, vol);
    }

    #[test]
    fn rotate_30_preserves_ball_volume_within_2pct() {
        let n = 40usize;
        let c = (n as f64 - 1.0) / 2.0;
        let mut data = vec![LABEL_UNUSED; n * n * n];
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let d2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2);
                    if d2 <= 14.0 * 14.0 {
                        data[x + n * (y + n * z)] = LABEL_SOLID;
                    }
                }
            }
        }
        let vol = Volume::from_data((n, n, n), data).unwrap();
        let before = vol.count_label(LABEL_SOLID) as f64;
        let after = rotate_volume(&vol, [0.0, 0.0, 30.0]).count_label(LABEL_SOLID) as f64;
        assert!((after - before).abs() / before < 0.02, "before {before} after {after}");
    }

    #[test]
    fn chunk_plan_100_cubed() {
        let vol = Volume::filled((100, 100, 100), LABEL_SOLID).unwrap();
        let plan = plan_chunks(&vol, 50, 8).unwrap();
        assert_eq!(plan.chunks.len(), 8);
        for c in &plan.chunks {
            assert_eq!(c.interior_volume(), 50 * 50 * 50);
            for a in 0..3 {
                assert!(c.halo_lo[a] == c.lo[a].saturating_sub(8));
                assert!(c.halo_hi[a] == (c.hi[a] + 8).min(100));
            }
        }
    }

    #[test]
    fn chunk_plan_degenerate_single() {
        let vol = Volume::filled((64, 64, 64), LABEL_SOLID).unwrap();
        let plan = plan_chunks(&vol, 64, 0).unwrap();
        assert_eq!(plan.chunks.len(), 1);
        assert_eq!(plan.chunks[0].lo, [0, 0, 0]);
        assert_eq!(plan.chunks[0].hi, [64, 64, 64]);
    }

    #[test]
    fn chunk_plan_rejects_bad_params() {
        let vol = Volume::filled((64, 64, 64), LABEL_SOLID).unwrap();
        assert!(plan_chunks(&vol, 16, 8).is_err());
    }

    #[test]
    fn chunk_interiors_tile_exactly_once() {
        for (dims, side, halo) in [((33, 33, 33), 32, 8), ((100, 40, 7), 20, 3), ((5, 5, 5), 5, 2)] {
            let vol = Volume::filled(dims, LABEL_SOLID).unwrap();
            let plan = plan_chunks(&vol, side, halo).unwrap();
            let mut owners = vec![0u32; vol.len()];
            for c in &plan.chunks {
                for z in c.lo[2]..c.hi[2] {
                    for y in c.lo[1]..c.hi[1] {
                        for x in c.lo[0]..c.hi[0] {
                            owners[vol.index(x, y, z)] += 1;
                        }
                    }
                }
            }
            assert!(owners.iter().all(|&o| o == 1), "coverage failure for {dims:?}");
        }
    }
}
