use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use volsrp::*;

const FS: f64 = 48_000.0;
const C: f64 = 340.0;
const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn setup() -> (MicArray, SearchRegion, CorrelationSet) {
    let array = MicArray::uniform_linear(8, [1.45, 0.5, 0.725], [3.55, 0.5, 0.725]).unwrap();
    let region = SearchRegion::new([0.8, 1.0, 0.725], [3.5, 4.0, 0.0]).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let max_lag = array.max_lag(FS, C) as usize + 2;
    let pairs = (0..array.pair_count()).map(|_| (0..2 * max_lag + 1).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let corr = CorrelationSet::from_pairs(max_lag, true, pairs.collect()).unwrap();
    (array, region, corr)
}

fn searches(c: &mut Criterion) {
    let (array, region, corr) = setup();
    let point = PointSearch::new(PointGrid::new(region, 0.01).unwrap(), &array, FS, C, Exec::Parallel).unwrap();
    let volume =
        VolumeSearch::new(VolumetricGrid::new(region, 0.1, 4).unwrap(), &array, FS, C, Exec::Parallel).unwrap();
    let refined = RefinedSearch {
        volumes: VolumeSearch { grid: volume.grid.clone(), sets: volume.sets.clone() },
        array: array.clone(),
        fs: FS,
        c: C,
        spacing: 0.01,
        boundary: RefineBoundary::Closed,
    };
    let modified =
        ModifiedSearch::new(PointGrid::new(region, 0.1).unwrap(), &array, FS, C, 0.1, Exec::Parallel).unwrap();
    let localizers: [(&str, &dyn Localizer); 4] =
        [("csrp_1cm", &point), ("vsrp_10cm_a4", &volume), ("rvsrp_10cm_a4_1cm", &refined), ("msrp_10cm", &modified)];

    let mut group = c.benchmark_group("search");
    group.sample_size(20);
    for (name, l) in localizers {
        for (mode, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, mode), &exec, |b, &exec| {
                b.iter(|| l.localize(&corr, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn tables(c: &mut Criterion) {
    let (array, region, _) = setup();
    let grid = PointGrid::new(region, 0.01).unwrap();
    let vgrid = VolumetricGrid::new(region, 0.1, 4).unwrap();
    let mut group = c.benchmark_group("tables");
    group.sample_size(10);
    for (mode, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("point_1cm", mode), &exec, |b, &exec| {
            b.iter(|| PointLagTable::build(grid.points(), &array, FS, C, exec).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("volume_sets_10cm_a4", mode), &exec, |b, &exec| {
            b.iter(|| VolumeLagSets::from_geometry(&vgrid, &array, FS, C, exec).unwrap())
        });
    }
    group.finish();
}

fn correlation(c: &mut Criterion) {
    let (array, _, _) = setup();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let channels: Vec<Vec<f64>> = (0..8).map(|_| (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let slices: Vec<&[f64]> = channels.iter().map(Vec::as_slice).collect();
    let correlator = Correlator::new(4096);
    let max_lag = array.max_lag(FS, C) as usize + 2;
    let mut group = c.benchmark_group("gcc_phat");
    for (mode, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("8_mics_4096", mode), &exec, |b, &exec| {
            b.iter(|| correlator.correlate(&slices, &array, max_lag, true, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, searches, tables, correlation);
criterion_main!(benches);
