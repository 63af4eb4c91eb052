use criterion::{criterion_group, criterion_main, Criterion};
use gridsd2e_bench::reference_data;
use gridsd2e_core::decoder::Batch;
use gridsd2e_core::exploit::ExploitationModel;
use gridsd2e_core::pipeline::{explore, local_correct, Refit};
use gridsd2e_core::BitCode;

fn correction(c: &mut Criterion) {
    let (cfg, data) = reference_data(4000);
    let grid = cfg.grid().unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let batch = Batch::new(&data, &rows);
    let mut dec = cfg.decoder(&data).unwrap();
    dec.fit(&batch, grid.bounds().axes()).unwrap();
    let zbar = explore(dec.as_ref(), &batch, &grid).unwrap();
    let targets: Vec<BitCode> = rows.iter().map(|&k| grid.encode(&data.label(k))).collect();
    let mut g = c.benchmark_group("local_correct");
    g.sample_size(20);
    for refit in [Refit::None, Refit::Refit] {
        g.bench_function(format!("{refit:?}"), |b| {
            b.iter(|| {
                local_correct(&zbar, &batch, &targets, &grid, refit, 8, dec.as_ref(), 0).unwrap()
            })
        });
    }
    g.finish();
}

fn ridge(c: &mut Criterion) {
    let (_, data) = reference_data(4000);
    let mut g = c.benchmark_group("ridge");
    g.sample_size(20);
    g.bench_function("train_4000x300", |b| {
        b.iter(|| {
            let mut m = ExploitationModel::new(1e-6);
            m.train(&data.neural, &data.labels).unwrap();
            m
        })
    });
    g.finish();
}

criterion_group!(benches, correction, ridge);
criterion_main!(benches);
