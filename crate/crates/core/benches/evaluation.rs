use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sepmdo::fourier_guess::{self, GuessOptions};
use sepmdo::par::Execution;
use sepmdo::scenario::Preset;
use sepmdo::transcription::{GridSpec, Mode, Transcription};

fn instance(segments: usize, exec: Execution) -> (Transcription, Vec<f64>) {
    let spec = Preset::Psyche
        .config(Mode::Coupled)
        .transfer_spec()
        .unwrap();
    let grid = GridSpec::new(segments, 3);
    let (guess, _, _) = fourier_guess::generate(&spec, &grid, &GuessOptions::default()).unwrap();
    let t = Transcription::build(spec, grid, &guess)
        .unwrap()
        .with_execution(exec);
    let x = t.pack(&guess).unwrap();
    (t, x)
}

fn execution_modes(c: &mut Criterion) {
    for segments in [16, 50, 200] {
        let mut group = c.benchmark_group(format!("transcription/{segments}_segments"));
        for (name, exec) in [
            ("sequential", Execution::Sequential),
            ("parallel", Execution::Parallel),
        ] {
            let (t, x) = instance(segments, exec);
            group.bench_with_input(BenchmarkId::new("constraints", name), &x, |b, x| {
                b.iter(|| t.eval_constraints(std::hint::black_box(x)))
            });
            group.bench_with_input(BenchmarkId::new("jacobian", name), &x, |b, x| {
                b.iter(|| t.eval_jacobian(std::hint::black_box(x)))
            });
        }
        group.finish();
    }
}

criterion_group!(benches, execution_modes);
criterion_main!(benches);
