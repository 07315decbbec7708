//! End-to-end contact-angle prediction on a segmented volume: contact-line
//! detection, seeded random sub-sampling, two-model inference, spatial
//! correlation and two-radius merging, chunked for parallel execution.
//!
//! Determinism contract: chunk work derives its randomness from
//! (seed, chunk index), per-chunk outputs are gathered in plan order and
//! canonically sorted, and the spatial operators are simultaneous
//! neighborhood means over the gathered sets. The result is identical for
//! every worker count, and identical across chunk sizes whenever the
//! per-chunk sample budget does not truncate (each chunk's contact voxels
//! all fit the budget).

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::{forward, Mode, ModelSpec, NnError, Weights};
use crate::par::map_indexed;
use crate::rng::{derive_seed, stream_rng};
use crate::volume::{
    dilate, extract_cube, plan_chunks, ChunkBox, Volume, VolumeError, CANONICAL_BINARIZE,
    LABEL_OTHER, LABEL_REFERENCE, LABEL_SOLID,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    BadConfig(String),
    #[error("model radii must be a (small, large) pair, got {small} and {large}")]
    ModelRadii { small: usize, large: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One predicted contact angle anchored at a contact-line voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPoint {
    pub position: (i64, i64, i64),
    pub angle_deg: f64,
    pub radius: usize,
    /// Had at least one same-radius neighbor within the correlator range.
    pub correlated: bool,
    /// A small-radius shift was applied (local or global).
    pub merged: bool,
}

/// Output angles stay strictly inside (0, 180).
pub const ANGLE_FLOOR: f64 = 0.01;
pub const ANGLE_CEIL: f64 = 179.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub max_samples_per_chunk: usize,
    pub seed: u64,
    /// Merger neighborhood radius in voxels.
    pub merger_rho: f64,
    pub chunk_side: usize,
    pub halo: usize,
    /// Worker count; 0 = available parallelism.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_samples_per_chunk: 5000,
            seed: 0,
            merger_rho: 16.0,
            chunk_side: 128,
            halo: 8,
            workers: 0,
        }
    }
}

/// Summary statistics over the merged points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub cv: f64,
    pub empty: bool,
}

impl AngleSummary {
    pub fn from_angles(angles: impl Iterator<Item = f64> + Clone) -> Self {
        let count = angles.clone().count();
        if count == 0 {
            return Self { count: 0, mean: f64::NAN, std: f64::NAN, cv: f64::NAN, empty: true };
        }
        let n = count as f64;
        let mean = angles.clone().sum::<f64>() / n;
        let var = angles.map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self { count, mean, std, cv: std / mean, empty: false }
    }
}

/// Final prediction set for a volume plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleField {
    pub points: Vec<PredictionPoint>,
    pub summary: AngleSummary,
    pub volume_sha256: String,
    pub model_checksum_small: String,
    pub model_checksum_large: String,
    pub config: PipelineConfig,
}

/// A loaded regression model plus the checksum of its weight file.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub weights: Weights,
    pub checksum: String,
}

impl Model {
    pub fn new(spec: ModelSpec, weights: Weights) -> Self {
        let mut blob = Vec::with_capacity(4 * (weights.params.len() + weights.stats.len()));
        for v in weights.params.iter().chain(&weights.stats) {
            blob.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let checksum = hex(&Sha256::digest(&blob));
        Self { spec, weights, checksum }
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let (spec, weights, _seed) = crate::nn::load_weights(path)?;
        Ok(Self::new(spec, weights))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Detection and sampling
// ---------------------------------------------------------------------------

/// Voxels on the three-phase contact line: solid voxels whose
/// 26-neighborhood contains both fluids. Computed as dilate(reference) AND
/// dilate(other) AND solid; coordinates in x-fastest scan order.
pub fn detect_contact_line(vol: &Volume) -> Vec<(i64, i64, i64)> {
    let ref_mask = dilate(vol, LABEL_REFERENCE).expect("valid label");
    let oth_mask = dilate(vol, LABEL_OTHER).expect("valid label");
    let (nx, ny, nz) = vol.dims();
    let mut out = Vec::new();
    let mut idx = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if vol.data()[idx] == LABEL_SOLID && ref_mask[idx] && oth_mask[idx] {
                    out.push((x as i64, y as i64, z as i64));
                }
                idx += 1;
            }
        }
    }
    out
}

/// Contact voxels within one chunk interior, via direct neighborhood scan
/// over the shared volume (reads reach into the halo naturally).
fn detect_in_box(vol: &Volume, chunk: &ChunkBox) -> Vec<(i64, i64, i64)> {
    let mut out = Vec::new();
    for z in chunk.lo[2]..chunk.hi[2] {
        for y in chunk.lo[1]..chunk.hi[1] {
            for x in chunk.lo[0]..chunk.hi[0] {
                if vol.get(x, y, z) != LABEL_SOLID {
                    continue;
                }
                let mut has_ref = false;
                let mut has_oth = false;
                'probe: for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            match vol.get_clamped(x as i64 + dx, y as i64 + dy, z as i64 + dz) {
                                LABEL_REFERENCE => has_ref = true,
                                LABEL_OTHER => has_oth = true,
                                _ => {}
                            }
                            if has_ref && has_oth {
                                break 'probe;
                            }
                        }
                    }
                }
                if has_ref && has_oth {
                    out.push((x as i64, y as i64, z as i64));
                }
            }
        }
    }
    out
}

/// Seeded uniform subset without replacement, size min(max_n, len),
/// returned in the input order.
pub fn sample_centers(coords: &[(i64, i64, i64)], max_n: usize, seed: u64) -> Vec<(i64, i64, i64)> {
    if coords.len() <= max_n {
        return coords.to_vec();
    }
    use rand::seq::index::sample;
    let mut rng = stream_rng(seed, &[0x5a3e]);
    let mut picked = sample(&mut rng, coords.len(), max_n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| coords[i]).collect()
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

fn predict_batchwise(
    vol: &Volume,
    centers: &[(i64, i64, i64)],
    model: &Model,
) -> Result<Vec<PredictionPoint>, PipelineError> {
    const BATCH: usize = 64;
    let r = model.spec.radius;
    let width = model.spec.input_width;
    let mut out = Vec::with_capacity(centers.len());
    let mut buf = vec![0.0f64; BATCH * width];
    for chunk in centers.chunks(BATCH) {
        for (b, &c) in chunk.iter().enumerate() {
            let cube = extract_cube(vol, c, r, CANONICAL_BINARIZE)?;
            for (dst, &src) in buf[b * width..(b + 1) * width].iter_mut().zip(&cube.values) {
                *dst = src as f64;
            }
        }
        let preds = forward(&model.spec, &model.weights, &buf[..chunk.len() * width], chunk.len(), Mode::Infer)?;
        for (&c, p) in chunk.iter().zip(preds) {
            out.push(PredictionPoint {
                position: c,
                angle_deg: (p * 180.0).clamp(ANGLE_FLOOR, ANGLE_CEIL),
                radius: r,
                correlated: false,
                merged: false,
            });
        }
    }
    Ok(out)
}

/// Predict at each center with both models; returns (small-radius,
/// large-radius) point sets over the same centers.
pub fn predict_points(
    vol: &Volume,
    centers: &[(i64, i64, i64)],
    model_small: &Model,
    model_large: &Model,
) -> Result<(Vec<PredictionPoint>, Vec<PredictionPoint>), PipelineError> {
    if model_small.spec.radius >= model_large.spec.radius {
        return Err(PipelineError::ModelRadii {
            small: model_small.spec.radius,
            large: model_large.spec.radius,
        });
    }
    model_small.weights.validate(&model_small.spec)?;
    model_large.weights.validate(&model_large.spec)?;
    let small = predict_batchwise(vol, centers, model_small)?;
    let large = predict_batchwise(vol, centers, model_large)?;
    Ok((small, large))
}

// ---------------------------------------------------------------------------
// Spatial operators
// ---------------------------------------------------------------------------

struct BucketGrid {
    cell: f64,
    map: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl BucketGrid {
    fn build(points: &[PredictionPoint], cell: f64) -> Self {
        let mut map: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let key = (
                (p.position.0 as f64 / cell).floor() as i64,
                (p.position.1 as f64 / cell).floor() as i64,
                (p.position.2 as f64 / cell).floor() as i64,
            );
            map.entry(key).or_default().push(i);
        }
        Self { cell, map }
    }

    /// Indices of points within `radius` of `pos` (strict or inclusive per
    /// `inclusive`), in ascending index order.
    fn neighbors(
        &self,
        points: &[PredictionPoint],
        pos: (i64, i64, i64),
        radius: f64,
        inclusive: bool,
    ) -> Vec<usize> {
        let span = (radius / self.cell).ceil() as i64 + 1;
        let key = (
            (pos.0 as f64 / self.cell).floor() as i64,
            (pos.1 as f64 / self.cell).floor() as i64,
            (pos.2 as f64 / self.cell).floor() as i64,
        );
        let r2 = radius * radius;
        let mut out = Vec::new();
        for dz in -span..=span {
            for dy in -span..=span {
                for dx in -span..=span {
                    if let Some(idxs) = self.map.get(&(key.0 + dx, key.1 + dy, key.2 + dz)) {
                        for &i in idxs {
                            let p = &points[i].position;
                            let dd = ((p.0 - pos.0) * (p.0 - pos.0)
                                + (p.1 - pos.1) * (p.1 - pos.1)
                                + (p.2 - pos.2) * (p.2 - pos.2)) as f64;
                            let hit = if inclusive { dd <= r2 } else { dd < r2 };
                            if hit {
                                out.push(i);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Replace each point's angle with the mean over all same-radius points
/// within Euclidean distance < `radius_threshold` (itself included),
/// computed from the original values so the result is order-independent.
pub fn spatial_correlate(points: &[PredictionPoint], radius_threshold: f64) -> Vec<PredictionPoint> {
    if points.is_empty() {
        return Vec::new();
    }
    let grid = BucketGrid::build(points, radius_threshold.max(1.0));
    let mut out = points.to_vec();
    for (i, p) in points.iter().enumerate() {
        let nbrs = grid.neighbors(points, p.position, radius_threshold, false);
        let sum: f64 = nbrs.iter().map(|&j| points[j].angle_deg).sum();
        out[i].angle_deg = sum / nbrs.len() as f64;
        out[i].correlated = nbrs.len() > 1;
    }
    out
}

/// Shift each large-radius point so its neighborhood mean matches the
/// small-radius model: shift = mean(small within rho) - mean(large within
/// rho). Falls back to global means when no small-radius point is within
/// rho, and to a zero shift when the small set is empty. Angles are
/// clamped inside (0, 180).
pub fn spatial_merge(
    preds_large: &[PredictionPoint],
    preds_small: &[PredictionPoint],
    rho: f64,
) -> Vec<PredictionPoint> {
    if preds_large.is_empty() {
        return Vec::new();
    }
    if preds_small.is_empty() {
        let mut out = preds_large.to_vec();
        for p in &mut out {
            p.merged = false;
        }
        return out;
    }
    let grid_small = BucketGrid::build(preds_small, rho.max(1.0));
    let grid_large = BucketGrid::build(preds_large, rho.max(1.0));
    let global_small = preds_small.iter().map(|p| p.angle_deg).sum::<f64>() / preds_small.len() as f64;
    let global_large = preds_large.iter().map(|p| p.angle_deg).sum::<f64>() / preds_large.len() as f64;

    let mut out = preds_large.to_vec();
    for (i, p) in preds_large.iter().enumerate() {
        let near_small = grid_small.neighbors(preds_small, p.position, rho, true);
        let shift = if near_small.is_empty() {
            global_small - global_large
        } else {
            let mean_small =
                near_small.iter().map(|&j| preds_small[j].angle_deg).sum::<f64>() / near_small.len() as f64;
            let near_large = grid_large.neighbors(preds_large, p.position, rho, true);
            let mean_large =
                near_large.iter().map(|&j| preds_large[j].angle_deg).sum::<f64>() / near_large.len() as f64;
            mean_small - mean_large
        };
        out[i].angle_deg = (p.angle_deg + shift).clamp(ANGLE_FLOOR, ANGLE_CEIL);
        out[i].merged = true;
    }
    out
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// Run the whole prediction pipeline over a volume with a (small, large)
/// model pair. See the module docs for the determinism contract.
pub fn run_pipeline(
    vol: &Volume,
    config: &PipelineConfig,
    model_small: &Model,
    model_large: &Model,
) -> Result<AngleField, PipelineError> {
    let r_small = model_small.spec.radius;
    let r_large = model_large.spec.radius;
    if r_small >= r_large {
        return Err(PipelineError::ModelRadii { small: r_small, large: r_large });
    }
    if config.halo < r_large {
        return Err(PipelineError::BadConfig(format!(
            "halo {} must be at least the large model radius {}",
            config.halo, r_large
        )));
    }
    if config.max_samples_per_chunk == 0 {
        return Err(PipelineError::BadConfig("max_samples_per_chunk must be positive".into()));
    }
    model_small.weights.validate(&model_small.spec)?;
    model_large.weights.validate(&model_large.spec)?;

    let plan = plan_chunks(vol, config.chunk_side, config.halo)?;
    let seed = config.seed;
    let chunk_results: Vec<Result<(Vec<PredictionPoint>, Vec<PredictionPoint>), PipelineError>> =
        map_indexed(config.workers, plan.chunks.len(), |ci| {
            let chunk = &plan.chunks[ci];
            let candidates = detect_in_box(vol, chunk);
            let sub_seed = derive_seed(seed, &[0xc41c, ci as u64]);
            let centers = sample_centers(&candidates, config.max_samples_per_chunk, sub_seed);
            let small = predict_batchwise(vol, &centers, model_small)?;
            let large = predict_batchwise(vol, &centers, model_large)?;
            Ok((small, large))
        });

    let mut preds_small = Vec::new();
    let mut preds_large = Vec::new();
    for res in chunk_results {
        let (s, l) = res?;
        preds_small.extend(s);
        preds_large.extend(l);
    }
    // canonical global order regardless of the chunk partition
    let scan_key = |p: &PredictionPoint| (p.position.2, p.position.1, p.position.0);
    preds_small.sort_by_key(scan_key);
    preds_large.sort_by_key(scan_key);

    let corr_small = spatial_correlate(&preds_small, 2.0 * r_small as f64);
    let corr_large = spatial_correlate(&preds_large, 2.0 * r_large as f64);
    let merged = spatial_merge(&corr_large, &corr_small, config.merger_rho);

    let summary = AngleSummary::from_angles(merged.iter().map(|p| p.angle_deg));
    Ok(AngleField {
        points: merged,
        summary,
        volume_sha256: hex(&Sha256::digest(vol.data())),
        model_checksum_small: model_small.checksum.clone(),
        model_checksum_large: model_large.checksum.clone(),
        config: *config,
    })
}

// ---------------------------------------------------------------------------
// Tabular output
// ---------------------------------------------------------------------------

/// One row per point: x, y, z, angle (2 decimals), radius, correlated,
/// merged. A method tag goes into the header comment.
pub fn save_points(points: &[PredictionPoint], method: &str, path: &Path) -> Result<(), std::io::Error> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# method = {method}")?;
    writeln!(f, "# x\ty\tz\tangle_deg\tradius\tcorrelated\tmerged")?;
    for p in points {
        writeln!(
            f,
            "{}\t{}\t{}\t{:.2}\t{}\t{}\t{}",
            p.position.0,
            p.position.1,
            p.position.2,
            p.angle_deg,
            p.radius,
            u8::from(p.correlated),
            u8::from(p.merged)
        )?;
    }
    Ok(())
}

/// Structured text summary; excludes timing and worker count so output is
/// byte-identical across parallel configurations.
pub fn save_summary(field: &AngleField, path: &Path) -> Result<(), std::io::Error> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "voxangle-summary v1")?;
    writeln!(f, "volume_sha256 = {}", field.volume_sha256)?;
    writeln!(f, "model_small = {}", field.model_checksum_small)?;
    writeln!(f, "model_large = {}", field.model_checksum_large)?;
    writeln!(f, "chunk_side = {}", field.config.chunk_side)?;
    writeln!(f, "halo = {}", field.config.halo)?;
    writeln!(f, "max_samples_per_chunk = {}", field.config.max_samples_per_chunk)?;
    writeln!(f, "merger_rho = {}", field.config.merger_rho)?;
    writeln!(f, "seed = {}", field.config.seed)?;
    writeln!(f, "count = {}", field.summary.count)?;
    if field.summary.empty {
        writeln!(f, "empty = true")?;
    } else {
        writeln!(f, "empty = false")?;
        writeln!(f, "mean = {:.6}", field.summary.mean)?;
        writeln!(f, "std = {:.6}", field.summary.std)?;
        writeln!(f, "cv = {:.6}", field.summary.cv)?;
    }
    Ok(())
}
