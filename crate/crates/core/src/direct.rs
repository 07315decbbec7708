//! Gradient-based direct measurement of contact angles, the comparison
//! baseline: smooth phase indicator fields with a separable Gaussian, then
//! read the angle from the dot product of surface normals at each contact
//! voxel.
//!
//! The solid normal comes from the smoothed solid indicator (negated to
//! point into the pore). The fluid normal comes from the smoothed
//! difference field reference-minus-other, whose gradient points into the
//! reference fluid across the fluid-fluid interface; the difference field
//! makes measuring through the other fluid yield exactly the supplement.

use thiserror::Error;

use crate::pipeline::{detect_contact_line, PredictionPoint, ANGLE_CEIL, ANGLE_FLOOR};
use crate::volume::{Volume, LABEL_OTHER, LABEL_REFERENCE, LABEL_SOLID};

#[derive(Debug, Error)]
pub enum DirectError {
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("dimension mismatch: field has {actual} values, dims need {expected}")]
    DimsMismatch { actual: usize, expected: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct DirectConfig {
    /// Gaussian smoothing standard deviation in voxels.
    pub sigma: f64,
    /// Gradient norms below this are treated as degenerate; the point is
    /// skipped and counted.
    pub min_grad: f64,
}

impl Default for DirectConfig {
    fn default() -> Self {
        Self { sigma: 1.0, min_grad: 1e-6 }
    }
}

/// Angles measured directly plus the number of skipped degenerate points.
#[derive(Debug, Clone)]
pub struct DirectResult {
    pub points: Vec<PredictionPoint>,
    pub skipped: usize,
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mirror index about the edge voxel centers: -1 -> 1, n -> n-2.
#[inline]
fn mirror(i: i64, n: i64) -> usize {
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

fn smooth_axis(field: &[f64], dims: (usize, usize, usize), kernel: &[f64], axis: usize) -> Vec<f64> {
    let (nx, ny, nz) = dims;
    let radius = (kernel.len() / 2) as i64;
    let n = [nx as i64, ny as i64, nz as i64][axis];
    let mut out = vec![0.0; field.len()];
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let pos = [x as i64, y as i64, z as i64];
                let mut acc = 0.0;
                for (k, &w) in kernel.iter().enumerate() {
                    let off = k as i64 - radius;
                    let mut p = pos;
                    p[axis] = mirror(pos[axis] + off, n) as i64;
                    acc += w * field[idx(p[0] as usize, p[1] as usize, p[2] as usize)];
                }
                out[idx(x, y, z)] = acc;
            }
        }
    }
    out
}

/// Separable discrete Gaussian smoothing with kernel truncation at 3 sigma,
/// unit kernel sum and mirror boundary handling.
pub fn gaussian_smooth(
    field: &[f64],
    dims: (usize, usize, usize),
    sigma: f64,
) -> Result<Vec<f64>, DirectError> {
    if !(sigma > 0.0) {
        return Err(DirectError::BadSigma(sigma));
    }
    let (nx, ny, nz) = dims;
    if field.len() != nx * ny * nz {
        return Err(DirectError::DimsMismatch { actual: field.len(), expected: nx * ny * nz });
    }
    let kernel = gaussian_kernel(sigma);
    let a = smooth_axis(field, dims, &kernel, 0);
    let b = smooth_axis(&a, dims, &kernel, 1);
    Ok(smooth_axis(&b, dims, &kernel, 2))
}

fn gradient_at(field: &[f64], dims: (usize, usize, usize), p: (i64, i64, i64)) -> [f64; 3] {
    let (nx, ny, nz) = dims;
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let sample =
        |x: i64, y: i64, z: i64| field[idx(mirror(x, nx as i64), mirror(y, ny as i64), mirror(z, nz as i64))];
    [
        0.5 * (sample(p.0 + 1, p.1, p.2) - sample(p.0 - 1, p.1, p.2)),
        0.5 * (sample(p.0, p.1 + 1, p.2) - sample(p.0, p.1 - 1, p.2)),
        0.5 * (sample(p.0, p.1, p.2 + 1) - sample(p.0, p.1, p.2 - 1)),
    ]
}

/// Trilinear sample at a continuous position, mirrored at the boundary.
fn sample_trilinear(field: &[f64], dims: (usize, usize, usize), p: [f64; 3]) -> f64 {
    let (nx, ny, nz) = dims;
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let base = [p[0].floor(), p[1].floor(), p[2].floor()];
    let frac = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 0 { 1.0 - frac[0] } else { frac[0] })
                    * (if dy == 0 { 1.0 - frac[1] } else { frac[1] })
                    * (if dz == 0 { 1.0 - frac[2] } else { frac[2] });
                if w == 0.0 {
                    continue;
                }
                let q = idx(
                    mirror(base[0] as i64 + dx, nx as i64),
                    mirror(base[1] as i64 + dy, ny as i64),
                    mirror(base[2] as i64 + dz, nz as i64),
                );
                acc += w * field[q];
            }
        }
    }
    acc
}

/// Central-difference gradient at a continuous position.
fn gradient_at_continuous(field: &[f64], dims: (usize, usize, usize), p: [f64; 3]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (axis, gv) in g.iter_mut().enumerate() {
        let mut hi = p;
        let mut lo = p;
        hi[axis] += 1.0;
        lo[axis] -= 1.0;
        *gv = 0.5 * (sample_trilinear(field, dims, hi) - sample_trilinear(field, dims, lo));
    }
    g
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Direct measurement restricted to the given contact points; `centers`
/// normally comes from [`detect_contact_line`] or a sampled subset of it.
pub fn measure_direct_at(
    vol: &Volume,
    config: &DirectConfig,
    centers: &[(i64, i64, i64)],
) -> Result<DirectResult, DirectError> {
    measure_internal(vol, config, centers, false)
}

/// Detect the contact line and measure every point on it.
pub fn measure_direct(vol: &Volume, config: &DirectConfig) -> Result<DirectResult, DirectError> {
    let centers = detect_contact_line(vol);
    measure_internal(vol, config, &centers, false)
}

/// Same measurement with the roles of the fluids swapped; at every point
/// the result is the supplement of the reference-fluid angle.
pub fn measure_direct_through_other(
    vol: &Volume,
    config: &DirectConfig,
) -> Result<DirectResult, DirectError> {
    let centers = detect_contact_line(vol);
    measure_internal(vol, config, &centers, true)
}

fn measure_internal(
    vol: &Volume,
    config: &DirectConfig,
    centers: &[(i64, i64, i64)],
    through_other: bool,
) -> Result<DirectResult, DirectError> {
    if !(config.sigma > 0.0) {
        return Err(DirectError::BadSigma(config.sigma));
    }
    let dims = vol.dims();
    let n = vol.len();
    let mut solid = vec![0.0f64; n];
    let mut fluid_diff = vec![0.0f64; n];
    let reference_sign = if through_other { -1.0 } else { 1.0 };
    for (i, &label) in vol.data().iter().enumerate() {
        match label {
            LABEL_SOLID => solid[i] = 1.0,
            LABEL_REFERENCE => fluid_diff[i] = reference_sign,
            LABEL_OTHER => fluid_diff[i] = -reference_sign,
            _ => {}
        }
    }
    let solid_s = gaussian_smooth(&solid, dims, config.sigma)?;
    let fluid_s = gaussian_smooth(&fluid_diff, dims, config.sigma)?;

    let mut points = Vec::with_capacity(centers.len());
    let mut skipped = 0usize;
    for &c in centers {
        let gs = gradient_at(&solid_s, dims, c);
        let ns_len = norm(gs);
        if ns_len < config.min_grad {
            skipped += 1;
            continue;
        }
        // into the pore
        let n_s = [-gs[0] / ns_len, -gs[1] / ns_len, -gs[2] / ns_len];
        // The fluid-fluid interface sits pore-side of the solid contact
        // voxel: step half a voxel along the solid normal, then project
        // onto the zero level set of the difference field (one Newton
        // step) and read the gradient there.
        let mut q = [
            c.0 as f64 + 0.5 * n_s[0],
            c.1 as f64 + 0.5 * n_s[1],
            c.2 as f64 + 0.5 * n_s[2],
        ];
        let g = gradient_at_continuous(&fluid_s, dims, q);
        let g2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
        if g2 >= config.min_grad * config.min_grad {
            let step = (sample_trilinear(&fluid_s, dims, q) / g2).clamp(-1.5, 1.5);
            q = [q[0] - step * g[0], q[1] - step * g[1], q[2] - step * g[2]];
        }
        let gf = gradient_at_continuous(&fluid_s, dims, q);
        let nf_len = norm(gf);
        if nf_len < config.min_grad {
            skipped += 1;
            continue;
        }
        // into the reference fluid
        let n_f = [gf[0] / nf_len, gf[1] / nf_len, gf[2] / nf_len];
        let dot = (n_s[0] * n_f[0] + n_s[1] * n_f[1] + n_s[2] * n_f[2]).clamp(-1.0, 1.0);
        let theta = 180.0 - dot.acos().to_degrees();
        points.push(PredictionPoint {
            position: c,
            angle_deg: theta.clamp(ANGLE_FLOOR, ANGLE_CEIL),
            radius: 0,
            correlated: false,
            merged: false,
        });
    }
    Ok(DirectResult { points, skipped })
}
