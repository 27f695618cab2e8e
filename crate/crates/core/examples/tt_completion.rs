//! Recover a low-rank tensor from 30% of its entries.
//!
//! cargo run --release --example tt_completion

use chebcal::completion::{rank_adaptive, CompletionConfig, GridIndexSampler};
use chebcal::rng::stream_rng;
use chebcal::tensor_train::{Sample, SampleSet, TtCore, TtTensor};
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> chebcal::Result<()> {
    let modes = vec![7; 4];
    let ranks = [1, 3, 3, 2, 1];
    let mut rng = stream_rng(1, "example/truth");
    let cores = (0..4)
        .map(|k| {
            let len = modes[k] * ranks[k] * ranks[k + 1];
            TtCore::new(modes[k], ranks[k], ranks[k + 1], (0..len).map(|_| rng.sample(StandardNormal)).collect())
        })
        .collect::<chebcal::Result<Vec<_>>>()?;
    let truth = TtTensor::new(cores)?;

    let total: usize = modes.iter().product();
    let mut sampler = GridIndexSampler::new(modes.clone(), 2)?;
    let samples = sampler
        .draw(total * 3 / 10)
        .into_iter()
        .map(|index| Ok(Sample { value: truth.entry(&index)?, index }))
        .collect::<chebcal::Result<Vec<_>>>()?;
    let set = SampleSet::new(modes, samples, 0.2, 3)?;
    let cfg = CompletionConfig { test_rel_tol: 1e-8, ..Default::default() };
    let (tt, report) = rank_adaptive(&set, &cfg)?;

    for s in &report.stages {
        println!(
            "ranks {:?}: {:>4} iterations, train {:.2e}, held-out {:.2e}",
            s.ranks,
            s.iterations,
            s.train_rel_rmse,
            s.test_rel_rmse.unwrap_or(f64::NAN)
        );
    }
    println!("chosen ranks {:?} ({}), {:.2} s", tt.ranks(), report.termination, report.wall_time_s);
    Ok(())
}
