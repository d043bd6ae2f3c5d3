use std::time::Instant;
use tabspa::data::{Split, Task};
use tabspa::model::{Model, ModelConfig};
use tabspa::rotation::{gen_synthetic, SyntheticKind};
use tabspa::tensor::Tensor;
use tabspa::train::{evaluate_metric, fit, split, PreparedDataset, TrainConfig};
use tabspa::rng::stream;
use rand::Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let embed_std: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(-1.0);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(60);

    let mut ds = gen_synthetic(SyntheticKind::Linear, 500, 2, 4, Task::Binary, 0).unwrap();
    split(&mut ds, 0).unwrap();
    let (prep, _) = PreparedDataset::prepare(&ds).unwrap();

    let cfg = ModelConfig::default_for(Task::Binary);
    let mut model = Model::new(cfg, prep.importance.clone(), 0).unwrap();
    if embed_std > 0.0 {
        // re-draw the embedding weights at the probed scale
        let mut rng = stream(0, "probe-embed");
        let f = model.n_features();
        let d = model.config.dim;
        model.params.embedding.w1 = Tensor::randn([f, d], embed_std, &mut rng);
        model.params.embedding.w2 = Tensor::randn([f, d], embed_std, &mut rng);
    }
    let tcfg = TrainConfig { learning_rate: lr, max_epochs: epochs, patience: 64, ..Default::default() };
    let t = Instant::now();
    let log = fit(&mut model, &prep, &tcfg).unwrap();
    let test_rows = prep.rows_in(Split::Test);
    let (tx, ty) = prep.gather(&test_rows);
    let test = evaluate_metric(&model, &tx, &ty, Task::Binary).unwrap();
    println!(
        "std {:.4} lr {} -> {} epochs best_val {:.4} test {:.4} ({:.0}s)",
        if embed_std > 0.0 { embed_std } else { (2.0f64).sqrt() },
        lr, log.epochs.len(), log.best_val, test, t.elapsed().as_secs_f64()
    );
    for e in log.epochs.iter().step_by(8) {
        println!("  epoch {:>3} loss {:.4} val {:.4}", e.epoch, e.train_loss, e.val_metric);
    }
    let _ = rng_unused();
}
fn rng_unused() -> u8 { let mut r = stream(0, "x"); r.gen::<u8>() }
