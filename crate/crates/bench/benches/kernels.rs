use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use sslguard_core::data::{images_to_tensor, Domain, SyntheticShapes};
use sslguard_core::nets::{Encoder, EncoderSpec, Family};
use sslguard_core::ssl::ntxent_loss;
use sslguard_core::tensor::Tensor;
use sslguard_core::wm::{sample_sk, watermark_rate};

fn encoders(c: &mut Criterion) {
    let images = SyntheticShapes::new(Domain::Primary, 32).generate(64, 0);
    let x = images_to_tensor(images.images()).unwrap();
    for fam in [Family::TinyCnn, Family::ResnetSmall, Family::ResnetWide] {
        let enc = Encoder::build(&EncoderSpec::new(fam, 64), 1).unwrap();
        let name = format!("{fam:?}").to_lowercase();
        c.bench_function(&format!("encode/{name}/64"), |b| b.iter(|| enc.encode_tensor(black_box(&x)).unwrap()));
        c.bench_function(&format!("train_step/{name}/64"), |b| {
            b.iter(|| {
                let (feats, _, _) = enc.forward_train(black_box(&x));
                feats.sqr().mean_all().backward()
            })
        });
    }
}

fn losses(c: &mut Criterion) {
    let z: Vec<f32> = (0..128 * 128).map(|i| ((i * 7919) % 1000) as f32 / 500.0 - 1.0).collect();
    c.bench_function("ntxent/128x128", |b| {
        b.iter_batched(
            || Tensor::param(z.clone(), &[128, 128]),
            |t| ntxent_loss(&t, 0.5).unwrap().backward(),
            BatchSize::SmallInput,
        )
    });
    let sims: Vec<f32> = (0..10_000).map(|i| (i as f32 * 0.37).sin()).collect();
    c.bench_function("watermark_rate/10k", |b| b.iter(|| watermark_rate(black_box(&sims), 0.5)));
    c.bench_function("sample_sk/128", |b| b.iter(|| sample_sk(128, black_box(3)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = encoders, losses
}
criterion_main!(benches);
