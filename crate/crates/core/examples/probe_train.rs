use std::time::Instant;
use voxangle::nn::{build_arch, evaluate, train, TrainConfig};
use voxangle::synth::{generate_flat_dataset, split_dataset};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let batch: usize = args[1].parse().unwrap();
    let dropout: f64 = args[2].parse().unwrap();
    let ds = generate_flat_dataset(2000, 8, (5.0, 175.0), 42, 0).unwrap();
    let (train_set, val_set, test_set) = split_dataset(&ds.samples, (0.8, 0.1, 0.1), 42).unwrap();
    let spec = build_arch(2, 8).unwrap();
    let cfg = TrainConfig { epochs: 50, seed: 42, batch_size: batch, dropout_rate: dropout, ..Default::default() };
    let t1 = Instant::now();
    let (w, _) = train(&spec, &train_set, &val_set, &cfg).unwrap();
    let m = evaluate(&spec, &w, &test_set).unwrap();
    println!("batch {batch} dropout {dropout}: {:.0?}  mse {:.6} mae {:.2} r2 {:.4}", t1.elapsed(), m.mse, m.mae_deg, m.r2);
}
