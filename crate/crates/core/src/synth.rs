//! Synthetic geometry with analytically known contact angles: flat-surface
//! droplets for training data and sphere-mounted droplets for the curved
//! benchmark.
//!
//! Conventions. The droplet is the reference fluid (label 2) and every
//! stored angle is measured through it. A flat-surface droplet with
//! parameter `h` places the sphere center `h` voxels below the solid
//! surface, which realizes theta = 90 - asin(h/r) through the droplet:
//! h = r is the tangent sphere with an empty cap (theta -> 0), h = -r the
//! full detached sphere (theta -> 180).

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::par::map_indexed;
use crate::pipeline::detect_contact_line;
use crate::rng::stream_rng;
use crate::volume::{
    extract_cube, rotation_matrix, Volume, VolumeError, CANONICAL_BINARIZE, LABEL_OTHER,
    LABEL_REFERENCE, LABEL_SOLID,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("droplet parameters need r > 0 and |h| <= r (h {h}, r {r})")]
    BadDropletParams { h: f64, r: f64 },
    #[error("droplet cap would be clipped by the domain boundary")]
    CapClipped,
    #[error("spheres with R {big_r}, r {r}, d {d} do not intersect")]
    NoIntersection { big_r: f64, r: f64, d: f64 },
    #[error("no three-phase contact voxel found after {0} attempts")]
    NoContact(usize),
    #[error("droplet caps overlap on the benchmark sphere")]
    CapsOverlap,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("split fractions must be non-negative and sum to 1")]
    BadFractions,
    #[error("invalid dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

// ---------------------------------------------------------------------------
// Analytic angles
// ---------------------------------------------------------------------------

/// Contact angle of a flat-surface droplet in degrees: 90 - asin(h/r).
pub fn angle_flat(h: f64, r: f64) -> Result<f64, SynthError> {
    if !(r > 0.0) || h.abs() > r {
        return Err(SynthError::BadDropletParams { h, r });
    }
    Ok(90.0 - (h / r).asin().to_degrees())
}

/// Where droplets sit on the benchmark sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convexity {
    /// Droplets on the outside of the solid sphere.
    Convex,
    /// Droplets on the inside of a spherical cavity.
    Concave,
}

impl Convexity {
    pub fn as_str(self) -> &'static str {
        match self {
            Convexity::Convex => "convex",
            Convexity::Concave => "concave",
        }
    }
}

/// Contact angle from sphere-sphere intersection geometry, in degrees.
/// R is the solid sphere radius, r the droplet radius, d the center
/// distance. Convex: cos(theta) = (d^2-R^2-r^2)/(2Rr); concave:
/// cos(theta) = (R^2+r^2-d^2)/(2Rr).
pub fn angle_sphere(big_r: f64, r: f64, d: f64, convexity: Convexity) -> Result<f64, SynthError> {
    if !(big_r > 0.0 && r > 0.0) || d <= (big_r - r).abs() || d >= big_r + r {
        return Err(SynthError::NoIntersection { big_r, r, d });
    }
    let c = match convexity {
        Convexity::Convex => (d * d - big_r * big_r - r * r) / (2.0 * big_r * r),
        Convexity::Concave => (big_r * big_r + r * r - d * d) / (2.0 * big_r * r),
    };
    Ok(c.clamp(-1.0, 1.0).acos().to_degrees())
}

/// Center distance that realizes `theta_deg` through the droplet for a
/// droplet sitting on the given side of the solid sphere.
pub fn sphere_distance_for_angle(big_r: f64, r: f64, theta_deg: f64, convexity: Convexity) -> f64 {
    let c = theta_deg.to_radians().cos();
    match convexity {
        Convexity::Convex => (big_r * big_r + r * r - 2.0 * big_r * r * c).sqrt(),
        Convexity::Concave => (big_r * big_r + r * r + 2.0 * big_r * r * c).sqrt(),
    }
}

// ---------------------------------------------------------------------------
// Flat-surface droplet rasterization
// ---------------------------------------------------------------------------

/// A flat-surface droplet: sphere radius, height parameter h (see module
/// docs), rotation of the whole geometry and lateral shift of the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropletSpec {
    pub sphere_radius: f64,
    pub height: f64,
    pub rotation_deg: [f64; 3],
    pub shift: [f64; 2],
}

impl DropletSpec {
    pub fn theta_deg(&self) -> Result<f64, SynthError> {
        angle_flat(self.height, self.sphere_radius)
    }
}

/// Voxelize a droplet on a flat solid surface. Solid half-space is label 1,
/// the droplet (reference fluid) label 2, the surrounding fluid label 3.
/// The rotation is applied to the whole labeled geometry about the domain
/// center by evaluating the analytic geometry at back-rotated positions.
pub fn rasterize_droplet(spec: &DropletSpec, dims: (usize, usize, usize)) -> Result<Volume, SynthError> {
    let r = spec.sphere_radius;
    let h = spec.height;
    if !(r > 0.0) || h.abs() > r {
        return Err(SynthError::BadDropletParams { h, r });
    }
    let (nx, ny, nz) = dims;
    let center = [
        (nx as f64 - 1.0) / 2.0,
        (ny as f64 - 1.0) / 2.0,
        (nz as f64 - 1.0) / 2.0,
    ];
    // solid surface at a half-integer height so no voxel center sits on it
    let surface_z = ((nz as f64 - 1.0) / 2.0).floor() + 0.5;
    let sphere = [
        center[0] + spec.shift[0],
        center[1] + spec.shift[1],
        surface_z - h,
    ];

    // the droplet lies inside the ball around the sphere center; rotation
    // about the domain center preserves distances from it
    let safe = center.iter().fold(f64::INFINITY, |acc, &c| acc.min(c));
    let dist = ((sphere[0] - center[0]).powi(2)
        + (sphere[1] - center[1]).powi(2)
        + (sphere[2] - center[2]).powi(2))
    .sqrt();
    if dist + r + 1.0 > safe {
        return Err(SynthError::CapClipped);
    }

    let rot = rotation_matrix(spec.rotation_deg);
    let r2 = r * r;
    let mut data = vec![0u8; nx * ny * nz];
    let mut idx = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [
                    x as f64 - center[0],
                    y as f64 - center[1],
                    z as f64 - center[2],
                ];
                // inverse rotation into the unrotated frame
                let qx = rot[0][0] * p[0] + rot[1][0] * p[1] + rot[2][0] * p[2] + center[0];
                let qy = rot[0][1] * p[0] + rot[1][1] * p[1] + rot[2][1] * p[2] + center[1];
                let qz = rot[0][2] * p[0] + rot[1][2] * p[1] + rot[2][2] * p[2] + center[2];
                let label = if qz < surface_z {
                    LABEL_SOLID
                } else {
                    let dd = (qx - sphere[0]).powi(2) + (qy - sphere[1]).powi(2) + (qz - sphere[2]).powi(2);
                    if dd <= r2 {
                        LABEL_REFERENCE
                    } else {
                        LABEL_OTHER
                    }
                };
                data[idx] = label;
                idx += 1;
            }
        }
    }
    Ok(Volume::from_data(dims, data).expect("constructed labels are canonical"))
}

// ---------------------------------------------------------------------------
// Training dataset
// ---------------------------------------------------------------------------

/// One training unit: a flattened masked binary cube and its normalized
/// target angle theta/180.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<u8>,
    pub target: f64,
    pub radius: usize,
}

/// Provenance of a generated sample, enough to recompute its target.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub index: usize,
    pub theta_deg: f64,
    pub spec: DropletSpec,
    pub contact: (i64, i64, i64),
}

#[derive(Debug, Clone)]
pub struct FlatDataset {
    pub samples: Vec<Sample>,
    pub records: Vec<SampleRecord>,
    pub radius: usize,
}

/// Generation domain for flat training droplets; large enough for the
/// sphere-radius augmentation range below under any rotation and shift.
pub const FLAT_DOMAIN: (usize, usize, usize) = (80, 80, 80);
const SPHERE_RADIUS_RANGE: (f64, f64) = (6.0, 16.0);
const SHIFT_RANGE: f64 = 4.0;
const MAX_DRAW_ATTEMPTS: usize = 64;

fn draw_sample(
    r_sub: usize,
    theta_range_deg: (f64, f64),
    seed: u64,
    index: usize,
) -> Result<(Sample, SampleRecord), SynthError> {
    let mut rng = stream_rng(seed, &[0x5a17, index as u64]);
    for _attempt in 0..MAX_DRAW_ATTEMPTS {
        let theta: f64 = rng.gen_range(theta_range_deg.0..=theta_range_deg.1);
        let sphere_radius: f64 = rng.gen_range(SPHERE_RADIUS_RANGE.0..=SPHERE_RADIUS_RANGE.1);
        let height = sphere_radius * theta.to_radians().cos();
        let spec = DropletSpec {
            sphere_radius,
            height,
            rotation_deg: [
                rng.gen_range(0.0..360.0),
                rng.gen_range(0.0..360.0),
                rng.gen_range(0.0..360.0),
            ],
            shift: [
                rng.gen_range(-SHIFT_RANGE..=SHIFT_RANGE),
                rng.gen_range(-SHIFT_RANGE..=SHIFT_RANGE),
            ],
        };
        let vol = rasterize_droplet(&spec, FLAT_DOMAIN)?;
        let contacts = detect_contact_line(&vol);
        if contacts.is_empty() {
            continue;
        }
        let contact = contacts[rng.gen_range(0..contacts.len())];
        let cube = extract_cube(&vol, contact, r_sub, CANONICAL_BINARIZE)?;
        let target = angle_flat(height, sphere_radius)? / 180.0;
        let sample = Sample { input: cube.values, target, radius: r_sub };
        let record = SampleRecord { index, theta_deg: theta, spec, contact };
        return Ok((sample, record));
    }
    Err(SynthError::NoContact(MAX_DRAW_ATTEMPTS))
}

/// Generate `n` flat-surface training samples with angles drawn uniformly
/// from `theta_range_deg`. Each sample derives its own stream from
/// (seed, index), so the result is reproducible and independent of the
/// worker count.
pub fn generate_flat_dataset(
    n: usize,
    r_sub: usize,
    theta_range_deg: (f64, f64),
    seed: u64,
    workers: usize,
) -> Result<FlatDataset, SynthError> {
    if n == 0 {
        return Err(SynthError::EmptyDataset);
    }
    if r_sub < 2 {
        return Err(SynthError::Volume(VolumeError::RadiusTooSmall(r_sub)));
    }
    let results = map_indexed(workers, n, |i| draw_sample(r_sub, theta_range_deg, seed, i));
    let mut samples = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for res in results {
        let (s, r) = res?;
        samples.push(s);
        records.push(r);
    }
    Ok(FlatDataset { samples, records, radius: r_sub })
}

/// Seeded disjoint split into train/validation/test parts whose sizes match
/// the fractions to within one sample.
pub fn split_dataset(
    samples: &[Sample],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>), SynthError> {
    if samples.is_empty() {
        return Err(SynthError::EmptyDataset);
    }
    let (f_train, f_val, f_test) = fractions;
    let sum = f_train + f_val + f_test;
    if f_train < 0.0 || f_val < 0.0 || f_test < 0.0 || (sum - 1.0).abs() > 1e-9 {
        return Err(SynthError::BadFractions);
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, &[0x5911]);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((n as f64) * f_train).round() as usize;
    let n_val = (((n as f64) * f_val).round() as usize).min(n - n_train);
    let take = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_val]),
        take(&order[n_train + n_val..]),
    ))
}

// ---------------------------------------------------------------------------
// Curved benchmark
// ---------------------------------------------------------------------------

/// Ground truth for one benchmark droplet.
#[derive(Debug, Clone, PartialEq)]
pub struct DropletTruth {
    pub id: usize,
    pub center: [f64; 3],
    pub true_angle_deg: f64,
}

/// Near-uniform unit directions via the golden-spiral (Fibonacci) lattice.
pub fn golden_spiral_directions(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [phi.cos() * rho, phi.sin() * rho, z]
        })
        .collect()
}

/// Side length of the cubic domain that comfortably holds the benchmark
/// sphere (R = 5r) with droplets attached.
pub fn benchmark_domain_side(r: f64) -> usize {
    (14.0 * r + 10.0).ceil() as usize
}

/// Largest droplet radius whose benchmark fits a cubic domain of `side`.
pub fn benchmark_radius_for_side(side: usize) -> f64 {
    ((side as f64 - 10.0) / 14.0).floor().max(4.0)
}

/// Build a benchmark volume: `theta_targets.len()` droplets of radius `r` at
/// quasi-uniform sites on a solid sphere of radius R = 5r, each realizing
/// its target angle through the droplet phase. Returns the volume and the
/// per-droplet ground truth. The seed rotates the whole site pattern.
pub fn generate_curved_benchmark(
    r: f64,
    theta_targets: &[f64],
    convexity: Convexity,
    seed: u64,
) -> Result<(Volume, Vec<DropletTruth>), SynthError> {
    if theta_targets.is_empty() {
        return Err(SynthError::EmptyDataset);
    }
    for &t in theta_targets {
        if !(10.0..=170.0).contains(&t) {
            return Err(SynthError::BadDropletParams { h: t, r });
        }
    }
    let big_r = 5.0 * r;
    let side = benchmark_domain_side(r);
    let dims = (side, side, side);
    let center = (side as f64 - 1.0) / 2.0;

    let mut rng = stream_rng(seed, &[0xbe5c]);
    let spin = rotation_matrix([
        rng.gen_range(0.0..360.0),
        rng.gen_range(0.0..360.0),
        rng.gen_range(0.0..360.0),
    ]);
    let dirs: Vec<[f64; 3]> = golden_spiral_directions(theta_targets.len())
        .into_iter()
        .map(|d| {
            [
                spin[0][0] * d[0] + spin[0][1] * d[1] + spin[0][2] * d[2],
                spin[1][0] * d[0] + spin[1][1] * d[1] + spin[1][2] * d[2],
                spin[2][0] * d[0] + spin[2][1] * d[1] + spin[2][2] * d[2],
            ]
        })
        .collect();

    // droplet centers and cap half-angles seen from the sphere center
    let mut centers = Vec::with_capacity(theta_targets.len());
    let mut cap_half = Vec::with_capacity(theta_targets.len());
    let mut truths = Vec::with_capacity(theta_targets.len());
    for (i, (&theta, dir)) in theta_targets.iter().zip(&dirs).enumerate() {
        let d = sphere_distance_for_angle(big_r, r, theta, convexity);
        debug_assert!(d > (big_r - r).abs() && d < big_r + r);
        let c = [center + d * dir[0], center + d * dir[1], center + d * dir[2]];
        let beta = ((big_r * big_r + d * d - r * r) / (2.0 * big_r * d)).clamp(-1.0, 1.0).acos();
        centers.push((c, r * r));
        cap_half.push(beta);
        truths.push(DropletTruth { id: i, center: c, true_angle_deg: theta });
    }
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            let dot = dirs[i][0] * dirs[j][0] + dirs[i][1] * dirs[j][1] + dirs[i][2] * dirs[j][2];
            let sep = dot.clamp(-1.0, 1.0).acos();
            if cap_half[i] + cap_half[j] >= sep {
                return Err(SynthError::CapsOverlap);
            }
        }
    }

    let rr_big = big_r * big_r;
    let mut data = vec![0u8; side * side * side];
    let mut idx = 0usize;
    for z in 0..side {
        for y in 0..side {
            for x in 0..side {
                let p = [x as f64, y as f64, z as f64];
                let rad2 = (p[0] - center).powi(2) + (p[1] - center).powi(2) + (p[2] - center).powi(2);
                let in_solid = match convexity {
                    Convexity::Convex => rad2 <= rr_big,
                    Convexity::Concave => rad2 >= rr_big,
                };
                let label = if in_solid {
                    LABEL_SOLID
                } else {
                    let mut lab = LABEL_OTHER;
                    for (c, r2) in &centers {
                        let dd = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                        if dd <= *r2 {
                            lab = LABEL_REFERENCE;
                            break;
                        }
                    }
                    lab
                };
                data[idx] = label;
                idx += 1;
            }
        }
    }
    let vol = Volume::from_data(dims, data).expect("constructed labels are canonical");
    Ok((vol, truths))
}

/// Write benchmark ground truth as tabular text.
pub fn save_ground_truth(truths: &[DropletTruth], path: &Path) -> Result<(), SynthError> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# id\tcx\tcy\tcz\ttrue_angle_deg")?;
    for t in truths {
        writeln!(
            f,
            "{}\t{:.3}\t{:.3}\t{:.3}\t{:.4}",
            t.id, t.center[0], t.center[1], t.center[2], t.true_angle_deg
        )?;
    }
    Ok(())
}

/// Read a ground-truth table written by [`save_ground_truth`].
pub fn load_ground_truth(path: &Path) -> Result<Vec<DropletTruth>, SynthError> {
    let mut out = Vec::new();
    for line in BufReader::new(std::fs::File::open(path)?).lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 5 {
            return Err(SynthError::Format(format!("expected 5 columns, got {}", cols.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| SynthError::Format(format!("bad number {s:?}")));
        out.push(DropletTruth {
            id: cols[0].parse().map_err(|_| SynthError::Format("bad id".into()))?,
            center: [parse(cols[1])?, parse(cols[2])?, parse(cols[3])?],
            true_angle_deg: parse(cols[4])?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

const DATASET_MAGIC: &str = "voxangle-dataset v1";

/// Write samples as a binary container: text header, then per sample the
/// side^3 input bytes followed by the target as a little-endian f64.
pub fn save_dataset(samples: &[Sample], path: &Path) -> Result<(), SynthError> {
    if samples.is_empty() {
        return Err(SynthError::EmptyDataset);
    }
    let radius = samples[0].radius;
    let side = 2 * radius + 1;
    for s in samples {
        if s.radius != radius || s.input.len() != side * side * side {
            return Err(SynthError::Format("mixed radii in dataset".into()));
        }
    }
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    write!(f, "{DATASET_MAGIC}\ncount = {}\nradius = {}\nside = {}\n---\n", samples.len(), radius, side)?;
    for s in samples {
        f.write_all(&s.input)?;
        f.write_all(&s.target.to_le_bytes())?;
    }
    Ok(())
}

/// Read a dataset container written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Vec<Sample>, SynthError> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(SynthError::Format("missing header terminator".into()));
        }
        if line.trim_end() == "---" {
            break;
        }
        header.push_str(&line);
        if header.len() > 4096 {
            return Err(SynthError::Format("oversized header".into()));
        }
    }
    let mut lines = header.lines();
    if lines.next() != Some(DATASET_MAGIC) {
        return Err(SynthError::Format("bad magic".into()));
    }
    let mut count = None;
    let mut radius = None;
    let mut side = None;
    for line in lines {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| SynthError::Format(format!("bad header line {line:?}")))?;
        let v: usize = v.trim().parse().map_err(|_| SynthError::Format(format!("bad value in {line:?}")))?;
        match k.trim() {
            "count" => count = Some(v),
            "radius" => radius = Some(v),
            "side" => side = Some(v),
            other => return Err(SynthError::Format(format!("unknown header field {other:?}"))),
        }
    }
    let (count, radius, side) = match (count, radius, side) {
        (Some(c), Some(r), Some(s)) => (c, r, s),
        _ => return Err(SynthError::Format("incomplete header".into())),
    };
    if side != 2 * radius + 1 {
        return Err(SynthError::Format("side does not match radius".into()));
    }
    let voxels = side * side * side;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let mut input = vec![0u8; voxels];
        reader.read_exact(&mut input)?;
        let mut tb = [0u8; 8];
        reader.read_exact(&mut tb)?;
        let target = f64::from_le_bytes(tb);
        if input.iter().any(|&b| b > 1) {
            return Err(SynthError::Format("non-binary input voxel".into()));
        }
        samples.push(Sample { input, target, radius });
    }
    let mut probe = [0u8; 1];
    if reader.read(&mut probe)? != 0 {
        return Err(SynthError::Format("trailing bytes after last sample".into()));
    }
    Ok(samples)
}

/// Write the per-sample provenance table for a generated dataset.
pub fn save_records(records: &[SampleRecord], path: &Path) -> Result<(), SynthError> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "# index\ttheta_deg\tsphere_radius\theight\tshift_x\tshift_y\trot_x\trot_y\trot_z\tcx\tcy\tcz"
    )?;
    for r in records {
        writeln!(
            f,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}",
            r.index,
            r.theta_deg,
            r.spec.sphere_radius,
            r.spec.height,
            r.spec.shift[0],
            r.spec.shift[1],
            r.spec.rotation_deg[0],
            r.spec.rotation_deg[1],
            r.spec.rotation_deg[2],
            r.contact.0,
            r.contact.1,
            r.contact.2
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_flat_trivial_cases() {
        assert_eq!(angle_flat(0.0, 10.0).unwrap(), 90.0);
        assert!((angle_flat(5.0, 10.0).unwrap() - 60.0).abs() < 1e-12);
        assert!((angle_flat(-10.0, 10.0).unwrap() - 180.0).abs() < 1e-12);
        assert!(angle_flat(11.0, 10.0).is_err());
        assert!(angle_flat(0.0, 0.0).is_err());
    }

    #[test]
    fn angle_flat_decreasing_in_h() {
        let r = 12.0;
        let mut last = f64::INFINITY;
        for i in 0..50 {
            let h = -r + (2.0 * r) * (i as f64) / 49.0;
            let a = angle_flat(h, r).unwrap();
            assert!(a < last);
            last = a;
        }
    }

    #[test]
    fn angle_sphere_trivial_cases() {
        let (big_r, r) = (50.0f64, 10.0f64);
        let d90 = (big_r * big_r + r * r).sqrt();
        assert!((angle_sphere(big_r, r, d90, Convexity::Convex).unwrap() - 90.0).abs() < 1e-10);
        // external tangency -> 0 for the convex formula (approach the limit)
        let a = angle_sphere(big_r, r, big_r + r - 1e-9, Convexity::Convex).unwrap();
        assert!(a < 0.01, "near-tangency angle {a}");
        assert!(angle_sphere(big_r, r, big_r + r, Convexity::Convex).is_err());
        assert!(angle_sphere(big_r, r, big_r - r, Convexity::Concave).is_err());
    }

    #[test]
    fn angle_sphere_large_r_converges_to_flat() {
        let a = angle_sphere(500.0, 10.0, 505.0, Convexity::Convex).unwrap();
        assert!((a - 60.0).abs() < 0.5, "got {a}");
        // frozen from the closed form
        assert!((a - 60.494967813387625).abs() < 1e-9);
    }

    #[test]
    fn angle_sphere_convex_concave_complement() {
        for (big_r, r, d) in [(50.0, 10.0, 47.0), (30.0, 8.0, 31.0), (100.0, 20.0, 98.5)] {
            let cv = angle_sphere(big_r, r, d, Convexity::Convex).unwrap();
            let cc = angle_sphere(big_r, r, d, Convexity::Concave).unwrap();
            assert!(
                (cv.to_radians().cos() + cc.to_radians().cos()).abs() < 1e-12,
                "cos complement failed: {cv} vs {cc}"
            );
        }
    }

    #[test]
    fn angle_sphere_monotone_in_d() {
        // the concave formula (= the angle a droplet outside the solid
        // realizes through itself) grows with d; the convex formula shrinks
        let (big_r, r) = (50.0, 10.0);
        let mut last_cc = -1.0;
        let mut last_cv = 181.0;
        for i in 1..40 {
            let d = 40.0 + 20.0 * (i as f64) / 40.0;
            let cc = angle_sphere(big_r, r, d, Convexity::Concave).unwrap();
            let cv = angle_sphere(big_r, r, d, Convexity::Convex).unwrap();
            assert!(cc > last_cc);
            assert!(cv < last_cv);
            last_cc = cc;
            last_cv = cv;
        }
    }

    #[test]
    fn sphere_distance_concave_formula_example() {
        let d = (50.0f64 * 50.0 + 10.0 * 10.0 - 2.0 * 50.0 * 10.0 * 0.5).sqrt();
        assert!((d - 45.8257569495584).abs() < 1e-10);
        let back = angle_sphere(50.0, 10.0, d, Convexity::Concave).unwrap();
        assert!((back - 60.0).abs() < 1e-9);
        // realized-geometry inverse for a droplet on the outside is the same distance
        assert!((sphere_distance_for_angle(50.0, 10.0, 60.0, Convexity::Convex) - d).abs() < 1e-10);
    }

    #[test]
    fn rasterize_tangent_sphere_has_no_droplet() {
        let spec = DropletSpec { sphere_radius: 12.0, height: 12.0, rotation_deg: [0.0; 3], shift: [0.0; 2] };
        let vol = rasterize_droplet(&spec, (64, 64, 64)).unwrap();
        assert_eq!(vol.count_label(LABEL_REFERENCE), 0);
    }

    #[test]
    fn rasterize_hemisphere_volume_within_5pct() {
        let spec = DropletSpec { sphere_radius: 20.0, height: 0.0, rotation_deg: [0.0; 3], shift: [0.0; 2] };
        let vol = rasterize_droplet(&spec, (100, 100, 100)).unwrap();
        let count = vol.count_label(LABEL_REFERENCE) as f64;
        let analytic = 2.0 / 3.0 * std::f64::consts::PI * 20.0f64.powi(3);
        assert!((count - analytic).abs() / analytic < 0.05, "count {count} vs {analytic}");
    }

    #[test]
    fn rasterize_labels_are_three_phases() {
        let spec = DropletSpec {
            sphere_radius: 10.0,
            height: -3.0,
            rotation_deg: [15.0, 40.0, 120.0],
            shift: [2.0, -1.5],
        };
        let vol = rasterize_droplet(&spec, (64, 64, 64)).unwrap();
        assert!(vol.count_label(LABEL_SOLID) > 0);
        assert!(vol.count_label(LABEL_REFERENCE) > 0);
        assert!(vol.count_label(LABEL_OTHER) > 0);
        assert_eq!(vol.count_label(0), 0);
    }

    #[test]
    fn rasterize_rejects_clipped_cap() {
        let spec = DropletSpec { sphere_radius: 30.0, height: 0.0, rotation_deg: [0.0; 3], shift: [0.0; 2] };
        assert!(matches!(rasterize_droplet(&spec, (40, 40, 40)), Err(SynthError::CapClipped)));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_flat_dataset(12, 4, (5.0, 175.0), 7, 1).unwrap();
        let b = generate_flat_dataset(12, 4, (5.0, 175.0), 7, 4).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn generation_targets_in_range_and_centered() {
        let ds = generate_flat_dataset(1000, 4, (5.0, 175.0), 21, 0).unwrap();
        let lo = 5.0 / 180.0 - 1e-12;
        let hi = 175.0 / 180.0 + 1e-12;
        let mut sum = 0.0;
        for s in &ds.samples {
            assert!(s.target >= lo && s.target <= hi);
            sum += s.target;
        }
        // Slightly above the uniform-draw mean of 0.5: caps flatter than
        // roughly 14 degrees have sub-voxel height, never voxelize to a
        // contact line and get redrawn, which truncates the low tail.
        let mean = sum / ds.samples.len() as f64;
        assert!((mean - 0.5).abs() <= 0.035, "mean target {mean}");
    }

    #[test]
    fn generation_round_trip_target() {
        let ds = generate_flat_dataset(40, 4, (5.0, 175.0), 3, 0).unwrap();
        for (s, r) in ds.samples.iter().zip(&ds.records) {
            let again = angle_flat(r.spec.height, r.spec.sphere_radius).unwrap() / 180.0;
            assert_eq!(s.target, again, "target must be recomputable exactly");
        }
    }

    #[test]
    fn rotating_90_about_z_maps_extraction() {
        use crate::volume::rotate_volume;
        let spec = DropletSpec { sphere_radius: 12.0, height: 6.0, rotation_deg: [0.0; 3], shift: [0.0; 2] };
        let dims = (64, 64, 64);
        let vol = rasterize_droplet(&spec, dims).unwrap();
        let contacts = detect_contact_line(&vol);
        assert!(!contacts.is_empty());
        let c = contacts[contacts.len() / 2];
        let cube = extract_cube(&vol, c, 4, CANONICAL_BINARIZE).unwrap();

        let rot = rotate_volume(&vol, [0.0, 0.0, 90.0]);
        // a quarter turn about z maps (x,y) -> (cx - (y-cy), cy + (x-cx))
        let cx = (dims.0 as f64 - 1.0) / 2.0;
        let cy = (dims.1 as f64 - 1.0) / 2.0;
        let mapped = (
            (cx - (c.1 as f64 - cy)).round() as i64,
            (cy + (c.0 as f64 - cx)).round() as i64,
            c.2,
        );
        let rcube = extract_cube(&rot, mapped, 4, CANONICAL_BINARIZE).unwrap();
        let side = cube.side as i64;
        let r = 4i64;
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let orig = cube.values[((dz + r) * side * side + (dy + r) * side + (dx + r)) as usize];
                    let (ex, ey) = (-dy, dx); // (dx,dy) rotates to (-dy,dx)
                    let rotv = rcube.values[((dz + r) * side * side + (ey + r) * side + (ex + r)) as usize];
                    assert_eq!(orig, rotv);
                }
            }
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let mk = |n: usize| {
            (0..n)
                .map(|i| Sample { input: vec![0; 125], target: i as f64 / n as f64, radius: 2 })
                .collect::<Vec<_>>()
        };
        let big = mk(10_000);
        let (tr, va, te) = split_dataset(&big, (0.8, 0.1, 0.1), 9).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (8000, 1000, 1000));

        let small = mk(10);
        let (tr, va, te) = split_dataset(&small, (0.8, 0.1, 0.1), 9).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (8, 1, 1));

        let (tr2, va2, te2) = split_dataset(&small, (0.8, 0.1, 0.1), 9).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        assert_eq!(te, te2);

        // disjoint and complete
        let mut targets: Vec<f64> = tr.iter().chain(&va).chain(&te).map(|s| s.target).collect();
        targets.sort_by(f64::total_cmp);
        let mut expect: Vec<f64> = small.iter().map(|s| s.target).collect();
        expect.sort_by(f64::total_cmp);
        assert_eq!(targets, expect);

        assert!(split_dataset(&small, (0.9, 0.2, 0.1), 1).is_err());
        assert!(split_dataset(&[], (0.8, 0.1, 0.1), 1).is_err());
    }

    #[test]
    fn golden_spiral_separation_at_24() {
        let dirs = golden_spiral_directions(24);
        let mut min_sep = f64::INFINITY;
        for i in 0..24 {
            for j in i + 1..24 {
                let dot: f64 = (0..3).map(|k| dirs[i][k] * dirs[j][k]).sum();
                min_sep = min_sep.min(dot.clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
        assert!(min_sep >= 30.0, "min separation {min_sep}");
    }

    #[test]
    fn curved_benchmark_90_degree_distances() {
        let (_, truths) = generate_curved_benchmark(8.0, &[90.0; 24], Convexity::Convex, 0).unwrap();
        let big_r = 40.0f64;
        let expect = (big_r * big_r + 64.0).sqrt();
        let side = benchmark_domain_side(8.0) as f64;
        let c = (side - 1.0) / 2.0;
        for t in truths {
            let d = ((t.center[0] - c).powi(2) + (t.center[1] - c).powi(2) + (t.center[2] - c).powi(2)).sqrt();
            assert!((d - expect).abs() < 1e-9, "d {d} vs {expect}");
            assert_eq!(t.true_angle_deg, 90.0);
        }
    }

    #[test]
    fn curved_benchmark_has_contact_at_every_droplet() {
        let (vol, truths) = generate_curved_benchmark(8.0, &[60.0; 24], Convexity::Convex, 5).unwrap();
        let contacts = detect_contact_line(&vol);
        assert!(!contacts.is_empty());
        let mut owned = vec![0usize; truths.len()];
        for &(x, y, z) in &contacts {
            let mut best = (f64::INFINITY, 0usize);
            for t in &truths {
                let d = (x as f64 - t.center[0]).powi(2)
                    + (y as f64 - t.center[1]).powi(2)
                    + (z as f64 - t.center[2]).powi(2);
                if d < best.0 {
                    best = (d, t.id);
                }
            }
            assert!(best.0.sqrt() <= 8.0 + 1.8, "stray contact voxel");
            owned[best.1] += 1;
        }
        for (id, n) in owned.iter().enumerate() {
            assert!(*n > 0, "droplet {id} has no contact voxels");
        }
    }

    #[test]
    fn curved_benchmark_concave_distance() {
        let theta = 60.0f64;
        let (_, truths) = generate_curved_benchmark(10.0, &[theta; 24], Convexity::Concave, 2).unwrap();
        let side = benchmark_domain_side(10.0) as f64;
        let c = (side - 1.0) / 2.0;
        let t = &truths[0];
        let d = ((t.center[0] - c).powi(2) + (t.center[1] - c).powi(2) + (t.center[2] - c).powi(2)).sqrt();
        let expect = (2500.0f64 + 100.0 + 2.0 * 500.0 * 0.5).sqrt();
        assert!((d - expect).abs() < 1e-9);
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let ds = generate_flat_dataset(6, 4, (20.0, 160.0), 1, 0).unwrap();
        save_dataset(&ds.samples, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(ds.samples, back);
    }

    #[test]
    fn dataset_file_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let ds = generate_flat_dataset(4, 4, (20.0, 160.0), 1, 0).unwrap();
        save_dataset(&ds.samples, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_dataset(&path).is_err());
    }

    #[test]
    fn ground_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.tsv");
        let truths = vec![
            DropletTruth { id: 0, center: [1.0, 2.0, 3.0], true_angle_deg: 45.5 },
            DropletTruth { id: 1, center: [4.5, 5.25, 6.125], true_angle_deg: 120.0 },
        ];
        save_ground_truth(&truths, &path).unwrap();
        let back = load_ground_truth(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].id, 1);
        assert!((back[1].true_angle_deg - 120.0).abs() < 1e-9);
    }
}
