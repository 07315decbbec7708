//! Statistics over angle fields: distributions, coefficient of
//! determination, lag-distance dispersion curves with correlation length,
//! dilation-based volumetric interpolation, and per-time-step reporting.

use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::par::map_blocks;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("empty input where values are required")]
    EmptyInput,
    #[error("length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("truth values have zero variance, R^2 undefined")]
    ZeroVariance,
    #[error("need at least {need} populated lag bins, have {have}")]
    InsufficientBins { need: usize, have: usize },
    #[error("point {0:?} lies outside the mask")]
    PointOutsideMask((i64, i64, i64)),
    #[error("invalid parameter: {0}")]
    BadParams(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A spatially anchored angle value: position in voxels, angle in degrees.
pub type AnglePoint = ([f64; 3], f64);

// ---------------------------------------------------------------------------
// Basic statistics
// ---------------------------------------------------------------------------

/// Mean, population standard deviation and coefficient of variation.
pub fn angle_stats(angles: &[f64]) -> Result<(f64, f64, f64), AnalysisError> {
    if angles.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let n = angles.len() as f64;
    let mean = angles.iter().sum::<f64>() / n;
    let var = angles.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    Ok((mean, std, std / mean))
}

/// Coefficient of determination: 1 - SSres/SStot.
pub fn r_squared(predicted: &[f64], truth: &[f64]) -> Result<f64, AnalysisError> {
    if predicted.len() != truth.len() {
        return Err(AnalysisError::LengthMismatch { a: predicted.len(), b: truth.len() });
    }
    if truth.len() < 2 {
        return Err(AnalysisError::EmptyInput);
    }
    let n = truth.len() as f64;
    let mean_t = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean_t) * (t - mean_t)).sum();
    if ss_tot <= 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    let ss_res: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

// ---------------------------------------------------------------------------
// Lag-distance dispersion
// ---------------------------------------------------------------------------

/// Angle dispersion versus pair distance: s(l) = sqrt(mean of (ti-tj)^2/2)
/// per lag bin. Bins with no pairs carry count 0 and s = NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCurve {
    pub bin_width: f64,
    /// Bin centers, (k + 0.5) * bin_width.
    pub centers: Vec<f64>,
    pub s: Vec<f64>,
    pub counts: Vec<usize>,
}

impl LagCurve {
    /// (center, s, count) for bins with at least one pair.
    pub fn populated(&self) -> Vec<(f64, f64, usize)> {
        (0..self.centers.len())
            .filter(|&i| self.counts[i] > 0)
            .map(|i| (self.centers[i], self.s[i], self.counts[i]))
            .collect()
    }
}

/// Build the lag-dispersion curve over all point pairs with distance at
/// most `max_lag`. Pair enumeration runs in fixed index blocks so the
/// (parallel) reduction is deterministic.
pub fn lag_std_curve(
    points: &[AnglePoint],
    bin_width: f64,
    max_lag: f64,
    workers: usize,
) -> Result<LagCurve, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::EmptyInput);
    }
    if !(bin_width > 0.0) || !(max_lag > bin_width) {
        return Err(AnalysisError::BadParams("need bin_width > 0 and max_lag > bin_width".into()));
    }
    let nbins = (max_lag / bin_width).ceil() as usize;
    let max2 = max_lag * max_lag;
    let n = points.len();

    let partials = map_blocks(workers, n, 128, |range| {
        let mut sums = vec![0.0f64; nbins];
        let mut counts = vec![0usize; nbins];
        for i in range {
            let (pi, ti) = (&points[i].0, points[i].1);
            for pj in points.iter().skip(i + 1) {
                let (pjp, tj) = (&pj.0, pj.1);
                let d2 = (pi[0] - pjp[0]).powi(2) + (pi[1] - pjp[1]).powi(2) + (pi[2] - pjp[2]).powi(2);
                if d2 > max2 {
                    continue;
                }
                let bin = ((d2.sqrt() / bin_width) as usize).min(nbins - 1);
                let diff = ti - tj;
                sums[bin] += diff * diff * 0.5;
                counts[bin] += 1;
            }
        }
        (sums, counts)
    });

    let mut sums = vec![0.0f64; nbins];
    let mut counts = vec![0usize; nbins];
    for (ps, pc) in partials {
        for b in 0..nbins {
            sums[b] += ps[b];
            counts[b] += pc[b];
        }
    }
    let centers: Vec<f64> = (0..nbins).map(|k| (k as f64 + 0.5) * bin_width).collect();
    let s: Vec<f64> = (0..nbins)
        .map(|b| if counts[b] > 0 { (sums[b] / counts[b] as f64).sqrt() } else { f64::NAN })
        .collect();
    Ok(LagCurve { bin_width, centers, s, counts })
}

/// Correlation length estimated from a lag curve: where the initial
/// tangent (least squares through the first three populated bins) meets
/// the sill (mean dispersion over the last quartile of populated bins).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationLength {
    /// None when the tangent slope is non-positive or the intersection is
    /// not a positive lag.
    pub length: Option<f64>,
    pub sill: f64,
    pub slope: f64,
    pub intercept: f64,
}

pub fn correlation_length(curve: &LagCurve) -> Result<CorrelationLength, AnalysisError> {
    let pop = curve.populated();
    if pop.len() < 4 {
        return Err(AnalysisError::InsufficientBins { need: 4, have: pop.len() });
    }
    let quart = pop.len().div_ceil(4);
    let sill = pop[pop.len() - quart..].iter().map(|&(_, s, _)| s).sum::<f64>() / quart as f64;

    // least-squares line through the first three populated bins
    let head = &pop[..3];
    let mx = head.iter().map(|&(c, _, _)| c).sum::<f64>() / 3.0;
    let ms = head.iter().map(|&(_, s, _)| s).sum::<f64>() / 3.0;
    let sxx: f64 = head.iter().map(|&(c, _, _)| (c - mx) * (c - mx)).sum();
    let sxy: f64 = head.iter().map(|&(c, s, _)| (c - mx) * (s - ms)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = ms - slope * mx;

    let length = if slope > 0.0 {
        let l = (sill - intercept) / slope;
        (l.is_finite() && l > 0.0).then_some(l)
    } else {
        None
    };
    Ok(CorrelationLength { length, sill, slope, intercept })
}

// ---------------------------------------------------------------------------
// Volumetric interpolation
// ---------------------------------------------------------------------------

/// Result of propagating point values through a mask by iterative
/// 26-neighborhood dilation.
#[derive(Debug, Clone)]
pub struct InterpolatedField {
    pub dims: (usize, usize, usize),
    pub values: Vec<f64>,
    pub assigned: Vec<bool>,
    /// Mask voxels no dilation front could reach.
    pub unassigned: usize,
}

/// Fill `mask` from seeded angle points: seeded voxels keep their value
/// (voxel-mean when several points share one voxel), every other mask
/// voxel receives the mean of its already-assigned 26-neighbors, front by
/// front, until a fixed point.
pub fn interpolate_volumetric(
    points: &[((i64, i64, i64), f64)],
    mask: &[bool],
    dims: (usize, usize, usize),
) -> Result<InterpolatedField, AnalysisError> {
    let (nx, ny, nz) = dims;
    if mask.len() != nx * ny * nz {
        return Err(AnalysisError::LengthMismatch { a: mask.len(), b: nx * ny * nz });
    }
    if points.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut values = vec![0.0f64; mask.len()];
    let mut weight = vec![0u32; mask.len()];
    for &((x, y, z), angle) in points {
        if x < 0 || y < 0 || z < 0 || x as usize >= nx || y as usize >= ny || z as usize >= nz {
            return Err(AnalysisError::PointOutsideMask((x, y, z)));
        }
        let i = idx(x as usize, y as usize, z as usize);
        if !mask[i] {
            return Err(AnalysisError::PointOutsideMask((x, y, z)));
        }
        values[i] += angle;
        weight[i] += 1;
    }
    let mut assigned = vec![false; mask.len()];
    for i in 0..mask.len() {
        if weight[i] > 0 {
            values[i] /= weight[i] as f64;
            assigned[i] = true;
        }
    }

    // synchronous dilation fronts
    loop {
        let mut next_vals = Vec::new();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = idx(x, y, z);
                    if !mask[i] || assigned[i] {
                        continue;
                    }
                    let mut sum = 0.0;
                    let mut cnt = 0usize;
                    for dz in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                if dx == 0 && dy == 0 && dz == 0 {
                                    continue;
                                }
                                let (sx, sy, sz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                                if sx < 0 || sy < 0 || sz < 0
                                    || sx >= nx as i64 || sy >= ny as i64 || sz >= nz as i64
                                {
                                    continue;
                                }
                                let j = idx(sx as usize, sy as usize, sz as usize);
                                if assigned[j] {
                                    sum += values[j];
                                    cnt += 1;
                                }
                            }
                        }
                    }
                    if cnt > 0 {
                        next_vals.push((i, sum / cnt as f64));
                    }
                }
            }
        }
        if next_vals.is_empty() {
            break;
        }
        for &(i, v) in &next_vals {
            values[i] = v;
            assigned[i] = true;
        }
    }
    let unassigned = mask
        .iter()
        .zip(&assigned)
        .filter(|&(&m, &a)| m && !a)
        .count();
    Ok(InterpolatedField { dims, values, assigned, unassigned })
}

// ---------------------------------------------------------------------------
// Time series
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct TimeseriesParams {
    pub hist_bins: usize,
    pub lag_bin_width: f64,
    pub max_lag: f64,
    pub workers: usize,
}

impl Default for TimeseriesParams {
    fn default() -> Self {
        Self { hist_bins: 36, lag_bin_width: 2.0, max_lag: 48.0, workers: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct StepStats {
    pub index: usize,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub cv: f64,
    /// Histogram over [0, 180).
    pub histogram: Vec<usize>,
    pub lag: Option<LagCurve>,
    pub correlation: Option<CorrelationLength>,
}

#[derive(Debug, Clone)]
pub struct TimeseriesReport {
    pub steps: Vec<StepStats>,
}

/// Per-step distributions, lag curves and correlation lengths for an
/// ordered sequence of angle fields.
pub fn timeseries_report(
    steps: &[Vec<AnglePoint>],
    params: &TimeseriesParams,
) -> Result<TimeseriesReport, AnalysisError> {
    if steps.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    if params.hist_bins == 0 {
        return Err(AnalysisError::BadParams("hist_bins must be positive".into()));
    }
    let mut out = Vec::with_capacity(steps.len());
    for (index, pts) in steps.iter().enumerate() {
        let angles: Vec<f64> = pts.iter().map(|&(_, a)| a).collect();
        let (mean, std, cv) = angle_stats(&angles)?;
        let mut histogram = vec![0usize; params.hist_bins];
        let w = 180.0 / params.hist_bins as f64;
        for &a in &angles {
            let b = ((a / w) as usize).min(params.hist_bins - 1);
            histogram[b] += 1;
        }
        let lag = if pts.len() >= 2 {
            Some(lag_std_curve(pts, params.lag_bin_width, params.max_lag, params.workers)?)
        } else {
            None
        };
        let correlation = lag.as_ref().and_then(|c| correlation_length(c).ok());
        out.push(StepStats { index, count: pts.len(), mean, std, cv, histogram, lag, correlation });
    }
    Ok(TimeseriesReport { steps: out })
}

/// Write the per-step trend table (tabular text) plus plot-ready histogram
/// and lag-curve columns.
pub fn save_timeseries_report(report: &TimeseriesReport, path: &Path) -> Result<(), AnalysisError> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# step\tcount\tmean\tstd\tcv\tcorrelation_length\td_mean\td_std\td_cv")?;
    let mut prev: Option<&StepStats> = None;
    for s in &report.steps {
        let l = s
            .correlation
            .and_then(|c| c.length)
            .map_or_else(|| "undefined".to_string(), |l| format!("{l:.3}"));
        let (dm, ds, dc) = match prev {
            Some(p) => (
                format!("{:+.4}", s.mean - p.mean),
                format!("{:+.4}", s.std - p.std),
                format!("{:+.6}", s.cv - p.cv),
            ),
            None => ("-".into(), "-".into(), "-".into()),
        };
        writeln!(
            f,
            "{}\t{}\t{:.4}\t{:.4}\t{:.6}\t{}\t{}\t{}\t{}",
            s.index, s.count, s.mean, s.std, s.cv, l, dm, ds, dc
        )?;
        prev = Some(s);
    }
    writeln!(f)?;
    writeln!(f, "# histograms: step, then one count per bin (5 degree bins)")?;
    for s in &report.steps {
        write!(f, "hist {}", s.index)?;
        for c in &s.histogram {
            write!(f, "\t{c}")?;
        }
        writeln!(f)?;
    }
    writeln!(f)?;
    writeln!(f, "# lag curves: step, lag center, s, pairs")?;
    for s in &report.steps {
        if let Some(lag) = &s.lag {
            for ((c, sv), n) in lag.centers.iter().zip(&lag.s).zip(&lag.counts) {
                if *n > 0 {
                    writeln!(f, "lag {}\t{:.3}\t{:.4}\t{}", s.index, c, sv, n)?;
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic correlated fields (test and benchmark support)
// ---------------------------------------------------------------------------

/// Random angle field with Gaussian spatial covariance
/// amp^2 * exp(-l^2 / (2 scale^2)), built from random Fourier features.
/// The tangent-sill correlation length of such a field is scale * sqrt(2).
pub fn synthetic_correlated_points(
    n: usize,
    box_side: f64,
    scale: f64,
    amp: f64,
    mean: f64,
    seed: u64,
) -> Vec<AnglePoint> {
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = crate::rng::stream_rng(seed, &[0xf1e1d]);
    const K: usize = 256;
    let mut freqs = Vec::with_capacity(K);
    let mut phases = Vec::with_capacity(K);
    for _ in 0..K {
        let w: [f64; 3] = [
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) / scale,
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) / scale,
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) / scale,
        ];
        freqs.push(w);
        phases.push(rng.gen_range(0.0..std::f64::consts::TAU));
    }
    let norm = amp * (2.0 / K as f64).sqrt();
    (0..n)
        .map(|_| {
            let p = [
                rng.gen_range(0.0..box_side),
                rng.gen_range(0.0..box_side),
                rng.gen_range(0.0..box_side),
            ];
            let mut v = 0.0;
            for (w, ph) in freqs.iter().zip(&phases) {
                v += (w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + ph).cos();
            }
            (p, mean + norm * v)
        })
        .collect()
}
