use idvae::config::{ExperimentConfig, Variant};
use idvae::data::MixtureSpec;
use idvae::eval::mode_coverage;
use idvae::trainer::{load_data, train};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let lambda: f32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let omega: f32 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let lr: f32 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2e-4);
    let epochs: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(20);
    let train_n: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(8192);

    let mut cfg = ExperimentConfig::ring_defaults();
    cfg.variant = Variant::Idvae;
    cfg.seed = seed;
    cfg.epochs = epochs;
    cfg.weights.lambda = lambda;
    cfg.weights.omega = omega;
    cfg.adam.lr = lr;
    cfg.train_n = train_n;
    cfg.log_every = 1000;
    cfg.out_dir = std::env::temp_dir().join(format!("pilot_ring_{seed}_{lambda}_{omega}_{lr}"));

    let t0 = std::time::Instant::now();
    let out = train(&cfg).unwrap();
    let train_time = t0.elapsed();

    let spec = MixtureSpec::ring(cfg.ring_modes, cfg.ring_radius, cfg.ring_sigma);
    let samples = out.state.sample_probe(10_000, 999).unwrap();
    let (covered, hq) = mode_coverage(&samples, &spec);
    let metrics = std::fs::read_to_string(&out.metrics_path).unwrap();
    let last = metrics.lines().last().unwrap();
    println!("last metrics row: {last}");
    let (_, test) = load_data(&cfg).unwrap();
    let recons = idvae::trainer::held_out_recons(&out.state.model, &test, 2048, false).unwrap();
    println!(
        "seed={seed} lambda={lambda} omega={omega} lr={lr} epochs={epochs} train_n={train_n}: coverage={covered}/8 hq={hq:.3} recons={recons:.5} time={train_time:.0?}"
    );
}
