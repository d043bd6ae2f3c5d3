use std::time::Instant;
use tabspa::data::{Split, Task};
use tabspa::model::{Model, ModelConfig};
use tabspa::rotation::{gen_synthetic, SyntheticKind};
use tabspa::train::{evaluate_metric, fit, split, PreparedDataset, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind = args.get(1).map(|s| s.as_str()).unwrap_or("linear");
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let dim: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(256);
    let heads: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(32);
    let lr: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let seed: u64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0);

    let (kind, inf, noise) = match kind {
        "xor" => (SyntheticKind::Xor, 2, 0),
        "xornoise" => (SyntheticKind::Xor, 2, 2),
        _ => (SyntheticKind::Linear, 2, 4),
    };
    let mut ds = gen_synthetic(kind, n, inf, noise, Task::Binary, seed).unwrap();
    split(&mut ds, seed).unwrap();
    let (prep, _) = PreparedDataset::prepare(&ds).unwrap();
    println!("importance: {:?}", prep.importance.values);

    let mut cfg = ModelConfig::default_for(Task::Binary);
    cfg.dim = dim;
    cfg.heads = heads;
    let mut model = Model::new(cfg, prep.importance.clone(), seed).unwrap();
    let tcfg = TrainConfig { learning_rate: lr, seed, ..Default::default() };
    let t = Instant::now();
    let log = fit(&mut model, &prep, &tcfg).unwrap();
    let dt = t.elapsed().as_secs_f64();
    let test_rows = prep.rows_in(Split::Test);
    let (tx, ty) = prep.gather(&test_rows);
    let test = evaluate_metric(&model, &tx, &ty, Task::Binary).unwrap();
    println!(
        "epochs {} best_epoch {} best_val {:.4} test {:.4} wall {:.0}s",
        log.epochs.len(), log.best_epoch, log.best_val, test, dt
    );
    for e in log.epochs.iter().step_by(10) {
        println!("  epoch {:>3} loss {:.4} val {:.4}", e.epoch, e.train_loss, e.val_metric);
    }
}
