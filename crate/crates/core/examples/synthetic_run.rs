//! End-to-end synthetic run: generate data, pack, train, sample, evaluate.
//!
//! `cargo run --release -p gmcd-core --example synthetic_run -- K ITERS [HIDDEN] [BATCH] [BETA_END]`

use gmcd::diffusion::linear_schedule;
use gmcd::metrics::{file_budget, poissonized_empirical, ListSource, MetricsReport};
use gmcd::predictor::{Arch, PredictorConfig};
use gmcd::rng;
use gmcd::sampling::{sample_many, SampleRequest};
use gmcd::synthdata::{generate_splits, GroundTruth};
use gmcd::training::{fit_from, FitEvent, TrainConfig, TrainState};
use gmcd::{pack_sphere, PackingConfig, Predictor};

fn main() -> gmcd::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let k: usize = arg(0, "6").parse().unwrap();
    let iters: u64 = arg(1, "1000").parse().unwrap();
    let hidden: usize = arg(2, "48").parse().unwrap();
    let batch: usize = arg(3, "1024").parse().unwrap();
    let beta_end: f64 = arg(4, "0.3").parse().unwrap();

    let splits = generate_splits(k, 30_000, &[1.0 / 3.0; 3], 1)?;
    let pack = pack_sphere(&PackingConfig::new(k, k, 1))?;
    let sched = linear_schedule(10, 1e-4, beta_end)?;
    let pcfg = PredictorConfig {
        hidden_size: hidden,
        ffn_size: 2 * hidden,
        ..PredictorConfig::new(Arch::Transformer, k, k, k)
    };
    let predictor = Predictor::new(pcfg)?;
    println!("params {}", predictor.num_params());
    let cfg = TrainConfig {
        batch_size: batch,
        max_iterations: iters,
        early_stop_patience: 0,
        monitor_samples: 0,
        ..TrainConfig::default()
    };
    let state = TrainState::new(predictor, cfg.optimizer)?;
    let started = std::time::Instant::now();
    let out = fit_from(state, &splits[0], &splits[1], &pack, &sched, &cfg, &mut |e| match e {
        FitEvent::Step { iteration, loss } if iteration % 50 == 0 => {
            println!("step {iteration} loss {loss:.4} ({:.1}s)", started.elapsed().as_secs_f64())
        }
        FitEvent::Eval { iteration, validation_loss, .. } => println!("eval {iteration} valid {validation_loss:.4}"),
        _ => {}
    })?;
    let req = SampleRequest {
        num_samples: 10_000,
        seed: 5,
        record_entropy: true,
        ..SampleRequest::default()
    };
    let s = sample_many(&out.best.predictor, &pack, &sched, &req)?;
    println!("entropy {:?}", s.entropy);
    let truth = GroundTruth::new(k)?;
    let m = file_budget(s.samples.len());
    let phat = poissonized_empirical(&mut ListSource::new(&s.samples), m, 0, &mut rng::seeded(0))?;
    let rep = MetricsReport::synthetic(&phat, &truth, s.samples.len())?;
    print!("{}", rep.to_csv());
    println!("total {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
