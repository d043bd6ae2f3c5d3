use std::time::Instant;
use tabspa::augment::{MixConfig, MixScheme};
use tabspa::data::{Split, Task};
use tabspa::metrics::ranks;
use tabspa::model::{Model, ModelConfig};
use tabspa::rotation::{gen_synthetic, SyntheticKind};
use tabspa::train::{evaluate_metric, fit, split, PreparedDataset, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let dim: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(64);
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(200);
    let lr: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let patience: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(32);
    let batch: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(32);

    let schemes = [MixScheme::Feat, MixScheme::Hid, MixScheme::Mixup, MixScheme::None];
    let datasets = [
        ("linear+noise", SyntheticKind::Linear, 2usize, 4usize),
        ("xor+noise", SyntheticKind::Xor, 2, 2),
        ("piecewise+noise", SyntheticKind::Piecewise, 1, 3),
    ];
    let t = Instant::now();
    // scores[scheme][dataset] = mean metric over seeds
    let mut scores = vec![vec![0.0; datasets.len()]; schemes.len()];
    for (d_idx, (name, kind, inf, noise)) in datasets.iter().enumerate() {
        for seed in 0..seeds {
            let mut ds = gen_synthetic(*kind, n, *inf, *noise, Task::Binary, 1000 + seed).unwrap();
            split(&mut ds, seed).unwrap();
            let (prep, _) = PreparedDataset::prepare(&ds).unwrap();
            for (s_idx, scheme) in schemes.iter().enumerate() {
                let cfg = ModelConfig {
                    layers: 3,
                    dim,
                    heads: dim / 8,
                    attn_dropout: 0.3,
                    gamma: 1e-4,
                    task: Task::Binary,
                };
                let mut model = Model::new(cfg, prep.importance.clone(), seed).unwrap();
                let tcfg = TrainConfig {
                    learning_rate: lr,
                    max_epochs: epochs,
                    patience,
                    batch_size: batch,
                    seed,
                    mix: MixConfig { scheme: *scheme, ..Default::default() },
                    weight_decay: 0.0,
                };
                fit(&mut model, &prep, &tcfg).unwrap();
                let rows = prep.rows_in(Split::Test);
                let (tx, ty) = prep.gather(&rows);
                let m = evaluate_metric(&model, &tx, &ty, Task::Binary).unwrap();
                scores[s_idx][d_idx] += m / seeds as f64;
            }
        }
        println!("{name}: feat {:.3} hid {:.3} mixup {:.3} none {:.3}",
            scores[0][d_idx], scores[1][d_idx], scores[2][d_idx], scores[3][d_idx]);
    }
    let (mean_ranks, _) = ranks(&scores).unwrap();
    println!("ranks: feat {:.2} hid {:.2} mixup {:.2} none {:.2}", mean_ranks[0], mean_ranks[1], mean_ranks[2], mean_ranks[3]);
    let ours = (mean_ranks[0] + mean_ranks[1]) / 2.0;
    let base = (mean_ranks[2] + mean_ranks[3]) / 2.0;
    println!("==> ours {ours:.3} vs baselines {base:.3} ({}) wall {:.0}s",
        if ours <= base { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
}
