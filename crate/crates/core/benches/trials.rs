use criterion::{criterion_group, criterion_main, Criterion};
use metarx::harness::{run_trial, ExperimentConfig, Regime};
use metarx::par::{par_map, seq_map};

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::siso();
    cfg.pilot_blocks = 6;
    cfg.data_blocks = 10;
    cfg.memory = 3;
    cfg.train.sgd_iterations = 20;
    cfg.train.meta_iterations = 20;
    cfg.train.joint_epochs = 1;
    cfg.train.meta_init_sweeps = 2;
    cfg
}

fn trials(c: &mut Criterion) {
    let cfg = small_config();
    let jobs: Vec<(Regime, u64)> = [Regime::Joint, Regime::Online, Regime::Meta]
        .into_iter()
        .flat_map(|r| (1..=4).map(move |s| (r, s)))
        .collect();
    let run = |&(r, s): &(Regime, u64)| run_trial(&cfg, r, 12.0, s).unwrap().final_ber();

    let mut group = c.benchmark_group("trials");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| seq_map(&jobs, run)));
    group.bench_function("parallel", |b| b.iter(|| par_map(&jobs, run)));
    group.finish();
}

criterion_group!(benches, trials);
criterion_main!(benches);
