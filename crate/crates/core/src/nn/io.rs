//! Weight files: a self-describing text manifest (architecture, radius,
//! layer table, counts, training seed, checksum) followed by the parameter
//! blob as little-endian f32 in manifest order (trainables, then running
//! statistics).

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{build_arch, Layer, ModelSpec, NnError, Weights};

const MAGIC: &str = "voxangle-weights v1";

fn layer_line(layer: &Layer) -> String {
    match *layer {
        Layer::Dense { inputs, outputs } => format!("dense {inputs} {outputs}"),
        Layer::Conv3 { side, in_channels, out_channels } => format!("conv3 {side} {in_channels} {out_channels}"),
        Layer::MaxPool3 { side, channels } => format!("maxpool3 {side} {channels}"),
        Layer::Relu => "relu".into(),
        Layer::Sigmoid => "sigmoid".into(),
        Layer::Dropout { rate } => format!("dropout {rate}"),
        Layer::FeatureNorm { features } => format!("featurenorm {features}"),
    }
}

fn blob_of(weights: &Weights) -> Vec<u8> {
    let mut blob = Vec::with_capacity(4 * (weights.params.len() + weights.stats.len()));
    for v in weights.params.iter().chain(&weights.stats) {
        blob.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    blob
}

/// Write spec + weights (+ the seed they were trained with) to one file.
pub fn save_weights(spec: &ModelSpec, weights: &Weights, seed: u64, path: &Path) -> Result<(), NnError> {
    weights.validate(spec)?;
    let blob = blob_of(weights);
    let digest = hex::encode(Sha256::digest(&blob));
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{MAGIC}")?;
    writeln!(f, "arch = {}", spec.arch)?;
    writeln!(f, "radius = {}", spec.radius)?;
    writeln!(f, "seed = {seed}")?;
    writeln!(f, "trainable = {}", spec.trainable_params())?;
    writeln!(f, "stats = {}", spec.stat_params())?;
    for (i, layer) in spec.layers.iter().enumerate() {
        writeln!(f, "layer {i} = {}", layer_line(layer))?;
    }
    writeln!(f, "sha256 = {digest}")?;
    writeln!(f, "---")?;
    f.write_all(&blob)?;
    Ok(())
}

mod hex {
    pub fn encode(bytes: impl AsRef<[u8]>) -> String {
        bytes.as_ref().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Load a weight file, reconstructing and validating the architecture.
/// Returns the spec, the weights and the recorded training seed.
pub fn load_weights(path: &Path) -> Result<(ModelSpec, Weights, u64), NnError> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let mut arch = None;
    let mut radius = None;
    let mut seed = 0u64;
    let mut trainable = None;
    let mut stats = None;
    let mut digest = None;
    let mut layer_lines: Vec<String> = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(NnError::Format("missing header terminator".into()));
        }
        let trimmed = line.trim_end();
        if trimmed == "---" {
            break;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| NnError::Format(format!("bad header line {trimmed:?}")))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "arch" => arch = Some(value.parse::<u8>().map_err(|_| NnError::Format("bad arch".into()))?),
            "radius" => radius = Some(value.parse::<usize>().map_err(|_| NnError::Format("bad radius".into()))?),
            "seed" => seed = value.parse().map_err(|_| NnError::Format("bad seed".into()))?,
            "trainable" => trainable = Some(value.parse::<usize>().map_err(|_| NnError::Format("bad count".into()))?),
            "stats" => stats = Some(value.parse::<usize>().map_err(|_| NnError::Format("bad count".into()))?),
            "sha256" => digest = Some(value.to_string()),
            k if k.starts_with("layer ") => layer_lines.push(value.to_string()),
            other => return Err(NnError::Format(format!("unknown header field {other:?}"))),
        }
    }
    let (arch, radius) = match (arch, radius) {
        (Some(a), Some(r)) => (a, r),
        _ => return Err(NnError::Format("missing arch or radius".into())),
    };
    let spec = build_arch(arch, radius)?;
    let expect_lines: Vec<String> = spec.layers.iter().map(layer_line).collect();
    // dropout rates may differ from the build default (training overrides
    // them); compare everything else verbatim
    if layer_lines.len() != expect_lines.len() {
        return Err(NnError::Format("layer table does not match architecture".into()));
    }
    let mut layers = spec.layers.clone();
    for (i, (got, expect)) in layer_lines.iter().zip(&expect_lines).enumerate() {
        if got == expect {
            continue;
        }
        let (got_kind, expect_kind) = (got.split(' ').next(), expect.split(' ').next());
        if got_kind == Some("dropout") && expect_kind == Some("dropout") {
            let rate: f64 = got[8..].trim().parse().map_err(|_| NnError::Format("bad dropout rate".into()))?;
            layers[i] = Layer::Dropout { rate };
        } else {
            return Err(NnError::Format(format!("layer {i} mismatch: {got:?} vs {expect:?}")));
        }
    }
    let spec = ModelSpec { layers, ..spec };

    if trainable != Some(spec.trainable_params()) || stats != Some(spec.stat_params()) {
        return Err(NnError::CountMismatch {
            actual: trainable.unwrap_or(0),
            expected: spec.trainable_params(),
        });
    }

    let mut blob = Vec::new();
    reader.read_to_end(&mut blob)?;
    let expected_bytes = 4 * (spec.trainable_params() + spec.stat_params());
    if blob.len() != expected_bytes {
        return Err(NnError::CountMismatch { actual: blob.len() / 4, expected: expected_bytes / 4 });
    }
    if let Some(d) = digest {
        if d != hex::encode(Sha256::digest(&blob)) {
            return Err(NnError::Checksum);
        }
    } else {
        return Err(NnError::Format("missing checksum".into()));
    }

    let total = blob.len() / 4;
    let mut values = Vec::with_capacity(total);
    for c in blob.chunks_exact(4) {
        values.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    }
    let stats_vec = values.split_off(spec.trainable_params());
    let weights = Weights { params: values, stats: stats_vec };
    weights.validate(&spec)?;
    Ok((spec, weights, seed))
}
