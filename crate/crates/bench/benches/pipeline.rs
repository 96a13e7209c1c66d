use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use invnet_core::dataset::FeatureLayout;
use invnet_core::nn::{predict, MlpModel, ModelBundle, Query, Target};
use invnet_core::optimize::{grid_optimize, Constraint, CostSpec, CtmcBackend, NnBackend};
use invnet_core::phdist::PhaseTypeDist;
use invnet_core::rng::rng_from_seed;
use invnet_core::simulate::{simulate_system, SimConfig, SystemInstance};

fn untrained_bundle() -> ModelBundle {
    let layout = FeatureLayout::default();
    let mk = |t: Target| MlpModel::for_target(t, layout, &t.default_hidden(), 1).unwrap();
    ModelBundle::new(mk(Target::Pmf), mk(Target::Cycle), mk(Target::Fulfill)).unwrap()
}

const MOM_D: [f64; 5] = [1.0, 2.0, 6.0, 24.0, 120.0];
const MOM_L: [f64; 5] = [0.5, 0.5, 0.75, 1.5, 3.75];

fn simulator(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    let n = 200_000u64;
    g.throughput(Throughput::Elements(n));
    let cases = [
        ("exp_exp", PhaseTypeDist::exponential(1.0).unwrap(), PhaseTypeDist::exponential(2.0).unwrap()),
        (
            "hyper_erlang",
            PhaseTypeDist::hyperexponential(&[0.9, 0.1], &[1.8, 0.2]).unwrap(),
            PhaseTypeDist::erlang(20, 40.0).unwrap(),
        ),
    ];
    for (name, d, l) in cases {
        let inst = SystemInstance::new(8, 20, d, l).unwrap();
        g.bench_function(name, |b| b.iter(|| simulate_system(black_box(&inst), &SimConfig::new(n, 3)).unwrap()));
    }
    g.finish();
}

fn ph_draws(c: &mut Criterion) {
    let mut g = c.benchmark_group("ph_draw");
    g.throughput(Throughput::Elements(10_000));
    for (name, ph) in [
        ("exp", PhaseTypeDist::exponential(1.0).unwrap()),
        ("erlang50", PhaseTypeDist::erlang(50, 50.0).unwrap()),
        ("coxian", PhaseTypeDist::coxian(&[3.0, 2.0, 5.0, 1.0], &[0.5, 0.7, 0.2]).unwrap()),
    ] {
        let sampler = ph.sampler();
        g.bench_function(name, |b| {
            b.iter_batched(
                || rng_from_seed(9),
                |mut rng| (0..10_000).map(|_| sampler.sample(&mut rng)).sum::<f64>(),
                BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

fn inference(c: &mut Criterion) {
    let bundle = untrained_bundle();
    let queries: Vec<Query> = (0..1000u32)
        .map(|i| {
            let big_s = 1 + i % 30;
            Query { s: i % big_s, big_s, mom_d: MOM_D.to_vec(), mom_l: MOM_L.to_vec() }
        })
        .collect();
    let x = ndarray::Array2::from_elem((1000, FeatureLayout::default().dim()), 0.5);
    let mut g = c.benchmark_group("nn");
    g.throughput(Throughput::Elements(1000));
    g.bench_function("pmf_forward_1000", |b| b.iter(|| bundle.pmf.forward(black_box(x.view())).unwrap()));
    g.bench_function("predict_1000", |b| b.iter(|| predict(&bundle, black_box(&queries)).unwrap()));
    g.finish();
}

fn grid(c: &mut Criterion) {
    let bundle = untrained_bundle();
    let spec = CostSpec { k_o: 100.0, c_r: 100.0, c_h: 4.0, c_l: 10_000.0, m_d1: 1.0 };
    let cons = Constraint::new(5, 0.995).unwrap();
    let nn = NnBackend { bundle: &bundle, mom_d: MOM_D.to_vec(), mom_l: MOM_L.to_vec() };
    let mut g = c.benchmark_group("grid");
    g.bench_function("nn_s_max_30", |b| b.iter(|| grid_optimize(&nn, &spec, Some(&cons), 30).unwrap()));
    g.bench_function("ctmc_s_max_30", |b| {
        b.iter(|| grid_optimize(&CtmcBackend { lambda: 1.0, mu: 0.5 }, &spec, Some(&cons), 30).unwrap())
    });
    g.finish();
}

criterion_group!(benches, simulator, ph_draws, inference, grid);
criterion_main!(benches);
