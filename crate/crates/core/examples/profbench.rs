use std::time::Instant;
use tabspa::autodiff::Tape;
use tabspa::model::{Model, ModelConfig};
use tabspa::preprocess::ImportanceVector;
use tabspa::augment::MixedTargets;
use tabspa::data::Task;
use tabspa::rng::stream;
use tabspa::tensor::Tensor;
use tabspa::train::build_loss;

fn main() {
    let cfg = ModelConfig::default_for(Task::Binary);
    let imp = ImportanceVector { values: vec![0.3, 0.05, 0.01, 0.007, 0.006, 0.008] };
    let model = Model::new(cfg, imp, 0).unwrap();
    let mut rng = stream(1, "bench");
    let x = Tensor::randn([128, 6], 1.0, &mut rng);
    let y: Vec<f64> = (0..128).map(|i| f64::from(i % 2 == 0)).collect();

    // warm
    for _ in 0..2 {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let z0 = bound.embed(&mut tape, xv).unwrap();
        let zl = bound.blocks(&mut tape, z0, &mut rng, true).unwrap();
        let pred = bound.head(&mut tape, zl).unwrap();
        let loss = build_loss(&mut tape, pred, &MixedTargets::plain(y.clone()), Task::Binary).unwrap();
        let _ = tape.backward(loss).unwrap();
    }

    let reps = 5;
    let t0 = Instant::now();
    let mut tlast = t0;
    let (mut bind_t, mut fwd_t, mut bwd_t) = (0.0, 0.0, 0.0);
    for _ in 0..reps {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        bind_t += tlast.elapsed().as_secs_f64(); tlast = Instant::now();
        let z0 = bound.embed(&mut tape, xv).unwrap();
        let zl = bound.blocks(&mut tape, z0, &mut rng, true).unwrap();
        let pred = bound.head(&mut tape, zl).unwrap();
        let loss = build_loss(&mut tape, pred, &MixedTargets::plain(y.clone()), Task::Binary).unwrap();
        fwd_t += tlast.elapsed().as_secs_f64(); tlast = Instant::now();
        let _ = tape.backward(loss).unwrap();
        bwd_t += tlast.elapsed().as_secs_f64(); tlast = Instant::now();
    }
    println!("bind {:.1}ms fwd {:.1}ms bwd {:.1}ms total {:.1}ms/batch",
        bind_t / reps as f64 * 1e3, fwd_t / reps as f64 * 1e3, bwd_t / reps as f64 * 1e3,
        t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
}
