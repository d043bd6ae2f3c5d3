use std::time::Instant;
use tabspa::tensor::{matmul_into, matmul_nt_into, matmul_tn_into};

fn bench(name: &str, flops: f64, mut f: impl FnMut()) {
    for _ in 0..3 { f(); }
    let t = Instant::now();
    let reps = 20;
    for _ in 0..reps { f(); }
    let dt = t.elapsed().as_secs_f64() / reps as f64;
    println!("{name}: {:.2} ms, {:.2} GFLOPS", dt * 1e3, flops / dt / 1e9);
}

fn main() {
    let (m, k, n) = (768, 256, 256);
    let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.001).sin()).collect();
    let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.002).cos()).collect();
    let dy: Vec<f64> = (0..m * n).map(|i| (i as f64 * 0.003).sin()).collect();
    let mut c1 = vec![0.0; m * n];
    let mut c2 = vec![0.0; m * k];
    let mut c3 = vec![0.0; k * n];
    let flops = (2 * m * k * n) as f64;
    bench("fwd  mm (768x256)@(256x256)", flops, || matmul_into(&mut c1, &a, &b, m, k, n));
    bench("bwd  nt (768x256)@(256x256)t", flops, || matmul_nt_into(&mut c2, &dy, &b, m, n, k));
    bench("bwd  tn (768x256)t@(768x256)", flops, || matmul_tn_into(&mut c3, &a, &dy, k, m, n));
}
