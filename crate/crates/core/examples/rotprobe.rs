use std::time::Instant;
use tabspa::data::Task;
use tabspa::rotation::*;
use tabspa::train::TrainConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let noise: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    let seeds: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);
    let dim: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(64);
    let epochs: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(150);
    let lr: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let patience: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(16);
    let batch: usize = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(128);

    let ds = gen_synthetic(SyntheticKind::Xor, n, 2, noise, Task::Binary, 0).unwrap();
    let cfg = ExperimentConfig {
        dim,
        heads: dim / 8,
        train: TrainConfig {
            learning_rate: lr,
            max_epochs: epochs,
            patience,
            batch_size: batch,
            ..Default::default()
        },
        ..Default::default()
    };
    let t = Instant::now();
    let res = run_rotation_experiment(&ds, &Variant::ALL, seeds, &cfg).unwrap();
    println!("n={n} noise={noise} dim={dim} epochs={epochs} lr={lr} pat={patience} batch={batch} wall {:.0}s", t.elapsed().as_secs_f64());
    let mut drop_wins = 0;
    let mut iai_wins = 0;
    let mut spa_wins = 0;
    for seed in 0..seeds as u64 {
        let m = |v, r| res.metric(v, r, seed).unwrap();
        let drop_full = m(Variant::Full, false) - m(Variant::Full, true);
        let drop_van = m(Variant::Vanilla, false) - m(Variant::Vanilla, true);
        if drop_full >= drop_van { drop_wins += 1; }
        if m(Variant::Full, false) > m(Variant::NoIai, false) { iai_wins += 1; }
        if m(Variant::Full, false) > m(Variant::NoSpa, false) { spa_wins += 1; }
        println!(
            "  seed {seed}: full {:.3}->{:.3} van {:.3}->{:.3} noiai {:.3} nospa {:.3}",
            m(Variant::Full, false), m(Variant::Full, true),
            m(Variant::Vanilla, false), m(Variant::Vanilla, true),
            m(Variant::NoIai, false), m(Variant::NoSpa, false)
        );
    }
    println!("==> drop_wins {drop_wins}/{seeds} iai_wins {iai_wins}/{seeds} spa_wins {spa_wins}/{seeds}");
}
