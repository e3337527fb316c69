use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dpm_inversion::fft::{fft2, ifft2};
use dpm_inversion::inversion::invert;
use dpm_inversion::latent::decoder_invert;
use dpm_inversion::solvers::sample;
use dpm_inversion::{
    AdamConfig, InversionConfig, MixtureComponent, MixtureDenoiser, NoiseSchedule, ScheduleKind,
    SolverKind, Spacing, State, TimeGrid, ToyDecoder, ToyEncoder,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const DIM: usize = 64;

fn mixture(s: NoiseSchedule) -> MixtureDenoiser {
    let pattern = |p: &[f64]| (0..DIM).map(|i| p[i % p.len()]).collect::<Vec<_>>();
    MixtureDenoiser::new(
        &[
            MixtureComponent { weight: 0.6, mean: pattern(&[1.0, 0.5, -0.5]), variance: 0.1 },
            MixtureComponent { weight: 0.4, mean: pattern(&[-1.0, 0.0, 0.5]), variance: 0.3 },
        ],
        s,
    )
    .unwrap()
}

fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn inversion(c: &mut Criterion) {
    let s = NoiseSchedule::new(ScheduleKind::uniform_log_snr_default(), 1.0).unwrap();
    let model = mixture(s);
    let x_t = State::from_vec(noise(1, DIM));

    let ddim = TimeGrid::new(&s, 50, Spacing::UniformLambda).unwrap();
    let x0 = sample(&model, &ddim, &x_t, SolverKind::Ddim).unwrap().last().clone();
    let mut g = c.benchmark_group("invert-ddim-50");
    for (name, cfg) in [
        ("naive@50", InversionConfig::naive(50)),
        ("naive@1000", InversionConfig::naive(1000)),
        ("backward-euler", InversionConfig::backward_euler()),
        ("fixed-point", InversionConfig::fixed_point()),
    ] {
        g.bench_function(name, |b| b.iter(|| invert(&model, &ddim, black_box(&x0), &cfg).unwrap()));
    }
    g.finish();

    let grid = TimeGrid::new(&s, 10, Spacing::UniformLambda).unwrap();
    let x0 = sample(&model, &grid, &x_t, SolverKind::DpmSolverPp2M).unwrap().last().clone();
    let mut g = c.benchmark_group("invert-2m-10");
    for j in [1usize, 10, 100] {
        let cfg = InversionConfig::high_order(j);
        g.bench_with_input(BenchmarkId::new("high-order", j), &cfg, |b, cfg| {
            b.iter(|| invert(&model, &grid, black_box(&x0), cfg).unwrap())
        });
    }
    g.finish();

    c.bench_function("sample-2m-10", |b| {
        b.iter(|| sample(&model, &grid, black_box(&x_t), SolverKind::DpmSolverPp2M).unwrap())
    });
}

fn fft(c: &mut Criterion) {
    let mut g = c.benchmark_group("fft2-roundtrip");
    for n in [16usize, 64, 256] {
        let field = noise(2, n * n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &field, |b, f| {
            b.iter(|| ifft2(fft2(black_box(f), n).unwrap(), n).unwrap())
        });
    }
    g.finish();
}

fn decoder(c: &mut Criterion) {
    let dec = ToyDecoder::default();
    let enc = ToyEncoder::new(&dec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = dec.sample_clipped(5.0, &mut rng).unwrap();
    let x = dec.decode(&z).unwrap();
    let cfg = AdamConfig::default();
    c.bench_function("decoder-invert-clipped", |b| {
        b.iter(|| decoder_invert(&dec, &enc, black_box(&x), &cfg).unwrap())
    });
}

criterion_group!(benches, inversion, fft, decoder);
criterion_main!(benches);
