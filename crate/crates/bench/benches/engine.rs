use criterion::{black_box, criterion_group, criterion_main, Criterion};
use mtnet_bench::{random_tensor, random_volume};
use mtnet_core::losses::{ssim_global_value, SsimConstants};
use mtnet_core::networks::{train_step, Batch, ModelConfig, MultiTaskModel};
use mtnet_core::{ClassLabel, ConvGeometry, Tape};

fn conv(c: &mut Criterion) {
    let x = random_tensor(&[2, 8, 16, 16, 8], 1);
    let k = random_tensor(&[16, 8, 3, 3, 3], 2);
    let geom = ConvGeometry {
        stride: [1; 3],
        padding: [1; 3],
    };
    c.bench_function("conv3d forward 2x8x16x16x8 -> 16", |b| {
        b.iter(|| {
            let tape = Tape::<f32>::new();
            let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
            black_box(tape.conv3d(xv, kv, None, geom).unwrap());
        })
    });
    c.bench_function("conv3d forward+backward", |b| {
        b.iter(|| {
            let tape = Tape::<f32>::new();
            let (xv, kv) = (tape.param(x.clone()), tape.param(k.clone()));
            let y = tape.conv3d(xv, kv, None, geom).unwrap();
            black_box(tape.backward(tape.sum_all(y)).unwrap());
        })
    });
}

fn model(c: &mut Criterion) {
    let dims = [32, 32, 16];
    let model = MultiTaskModel::<f32>::build(&ModelConfig::desk(dims), 0).unwrap();
    let mri = random_volume(&[1, 8, 32, 32, 16], 3);
    c.bench_function("desk model predict 32x32x16", |b| b.iter(|| black_box(model.predict(&mri).unwrap())));

    let batch = Batch {
        mri: random_volume(&[2, 8, 32, 32, 16], 4),
        pet: random_volume(&[2, 1, 32, 32, 16], 5),
        labels: vec![ClassLabel::Hc, ClassLabel::Mmd],
    };
    let weights = Default::default();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("desk train step batch 2", |b| b.iter(|| black_box(train_step(&model, &batch, &weights).unwrap())));
    group.finish();
}

fn ssim(c: &mut Criterion) {
    let x = random_volume(&[64 * 64 * 32], 6).into_data();
    let y = random_volume(&[64 * 64 * 32], 7).into_data();
    let consts = SsimConstants::from_reference(&y).unwrap();
    c.bench_function("global ssim 64x64x32", |b| b.iter(|| black_box(ssim_global_value(&x, &y, &consts).unwrap())));
}

criterion_group!(benches, conv, model, ssim);
criterion_main!(benches);
