use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use tslab::autograd::Tape;
use tslab::zoo::VariantKind;
use tslab_bench::{forecaster, uniform};

fn forward(c: &mut Criterion) {
    let windows: Vec<Array2<f64>> = (0..8).map(|i| uniform(96, 4, i)).collect();
    let views: Vec<_> = windows.iter().map(|w| w.view()).collect();
    let mut g = c.benchmark_group("predict_b8_v4");
    for kind in VariantKind::ALL {
        let m = forecaster(kind, 4);
        g.bench_function(kind.name(), |b| b.iter(|| m.predict(&views, None).unwrap()));
    }
    g.finish();
}

fn backward(c: &mut Criterion) {
    let windows: Vec<Array2<f64>> = (0..8).map(|i| uniform(96, 4, i)).collect();
    let views: Vec<_> = windows.iter().map(|w| w.view()).collect();
    let target = uniform(32, 24, 99);
    let mut g = c.benchmark_group("train_step_b8_v4");
    for kind in [VariantKind::Linear, VariantKind::Trans, VariantKind::Random] {
        let m = forecaster(kind, 4);
        g.bench_function(kind.name(), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let f = m.forward(&mut tape, &views, None).unwrap();
                let loss = tape.mse(f.out, target.clone());
                tape.backward(loss)
            })
        });
    }
    g.finish();
}

criterion_group!(benches, forward, backward);
criterion_main!(benches);
