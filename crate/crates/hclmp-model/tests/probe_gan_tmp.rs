use hclmp_core::synth::{self, LatentWorld};
use hclmp_core::DosRecord;
use hclmp_model::{evaluate_generator, train_cwgan, untrained_generator, CwganConfig};

fn corpus(n: usize, seed: u64) -> Vec<DosRecord> {
    let els = synth::elements(&["Ag", "Bi", "Cu", "Fe", "Sm"]);
    let world = LatentWorld::new(&els, 5);
    world.dos_corpus(n, 3, 0.01, seed)
}

#[test]
fn scan() {
    let records = corpus(80, 11);
    let (train, rest) = records.split_at(56);
    let (val, holdout) = rest.split_at(12);
    let cfg = CwganConfig {
        noise_dim: 6,
        gen_widths: vec![48, 64, 48],
        critic_widths: vec![32, 32, 16],
        critic_steps: 3,
        epochs: 400,
        batch_size: 8,
        sample_count: 25,
        val_samples: 8,
        seed: 2,
        ..CwganConfig::default()
    };
    let t0 = std::time::Instant::now();
    let (trained, log) = train_cwgan(train, val, &cfg).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    for e in log.iter().step_by(25) {
        println!(
            "epoch {:4}  val {:.4}  gap {:+.4}  gp {:.4}  c {:+.4}  g {:+.4}",
            e.epoch, e.val_mae, e.wasserstein_gap, e.gradient_penalty, e.critic_loss, e.generator_loss
        );
    }
    let best = log.iter().map(|e| e.val_mae).fold(f64::INFINITY, f64::min);
    let cold = untrained_generator(train, val, &cfg).unwrap();
    println!(
        "best val {:.4}  holdout {:.4}  cold {:.4}  wall {:.1}s",
        best,
        evaluate_generator(&trained, holdout).unwrap(),
        evaluate_generator(&cold, holdout).unwrap(),
        secs
    );
}
