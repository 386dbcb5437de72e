use bflva_core::ensemble::EnsembleConfig;
use bflva_core::{build_phi, fit_global, simulate, train_lcm, FederationRegistry, GeneratorSpec, GibbsConfig, LcmHyper};
use criterion::{criterion_group, criterion_main, Criterion};

const SPEC: &str = r#"
seed = 1
n_causes = 5
n_classes = 3
n_symptoms = 40
missing_rate = 0.05

[[sources]]
id = "a"
n = 500
pi = [0.3, 0.25, 0.2, 0.15, 0.1]

[[sources]]
id = "b"
n = 500
pi = [0.1, 0.15, 0.2, 0.25, 0.3]

[[mixtures]]
id = "t"
n = 400
pi = [0.2, 0.2, 0.2, 0.2, 0.2]
sources = ["a", "b"]
lambda = [[0.5, 0.5], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]
"#;

fn samplers(c: &mut Criterion) {
    let spec: GeneratorSpec = toml::from_str(SPEC).unwrap();
    let sim = simulate(&spec).unwrap();
    let hyper = LcmHyper { k: 3, ..Default::default() };
    let gibbs = GibbsConfig {
        iterations: 200,
        burn_in: 100,
        thin: 1,
        seed: 0,
    };
    let mut group = c.benchmark_group("samplers");
    group.sample_size(10);
    group.bench_function("train_lcm n=500 k=3 200 sweeps", |b| {
        b.iter(|| train_lcm(&sim.datasets[0], &hyper, &gibbs).unwrap())
    });
    let summaries = sim.datasets[..2]
        .iter()
        .map(|d| train_lcm(d, &hyper, &gibbs).unwrap())
        .collect();
    let reg = FederationRegistry::new(summaries).unwrap();
    let target = sim.datasets[2].unlabeled_copy();
    group.bench_function("build_phi n=400 M=2", |b| b.iter(|| build_phi(&reg, &target).unwrap()));
    let phi = build_phi(&reg, &target).unwrap();
    let cfg = EnsembleConfig {
        chains: 1,
        iterations: 500,
        burn_in: 250,
        ..Default::default()
    };
    group.bench_function("fit_global n=400 M=2 500 sweeps", |b| {
        b.iter(|| fit_global(&phi, None, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, samplers);
criterion_main!(benches);
