use std::time::Instant;
use tabspa::data::{Split, Task};
use tabspa::model::{Model, ModelConfig};
use tabspa::rotation::{gen_synthetic, SyntheticKind};
use tabspa::train::{evaluate_metric, fit, split, PreparedDataset, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind = args.get(1).map(|s| s.as_str()).unwrap_or("linear");
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);

    let (kind, inf, noise) = match kind {
        "xor" => (SyntheticKind::Xor, 2, 0),
        _ => (SyntheticKind::Linear, 2, 4),
    };
    let mut ds = gen_synthetic(kind, n, inf, noise, Task::Binary, 0).unwrap();
    split(&mut ds, 0).unwrap();
    let (prep, _) = PreparedDataset::prepare(&ds).unwrap();
    println!("importance: {:?}", prep.importance.values);

    let cfg = ModelConfig::default_for(Task::Binary);
    let mut model = Model::new(cfg, prep.importance.clone(), 0).unwrap();
    let tcfg = TrainConfig { max_epochs: epochs, patience: 1000, ..Default::default() };
    let t = Instant::now();
    let log = fit(&mut model, &prep, &tcfg).unwrap();
    let dt = t.elapsed().as_secs_f64();
    println!("{} epochs in {:.1}s -> {:.2} s/epoch", log.epochs.len(), dt, dt / log.epochs.len() as f64);
    for e in log.epochs.iter().rev().take(3) {
        println!("epoch {} loss {:.4} val {:.4}", e.epoch, e.train_loss, e.val_metric);
    }
    let test_rows = prep.rows_in(Split::Test);
    let (tx, ty) = prep.gather(&test_rows);
    println!("test metric: {:.4}", evaluate_metric(&model, &tx, &ty, Task::Binary).unwrap());
}
