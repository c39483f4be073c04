mod common;

use dgrid::hpcbench::{self, MapMode, RaParams, StreamInit};
use dgrid::launcher::run_threads;
use num_complex::Complex64;

use common::test_config;

#[test]
fn stream_constants() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = run_threads(4, tmp.path(), test_config(), |ctx| {
        hpcbench::stream_triad(ctx, 32, 3.14, 3, StreamInit::Ones, MapMode::Mapped)
    })
    .unwrap();
    let out = runs[0].output.as_ref().unwrap();
    assert_eq!(out.len(), 32);
    assert!(out.iter().all(|&v| v == 1.0 + 3.14 * 1.0));
    assert!(runs.iter().all(|r| r.result.correct && r.result.np == 4));
    assert!(runs[1..].iter().all(|r| r.output.is_none()));
}

#[test]
fn stream_seeded_matches_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = run_threads(3, tmp.path(), test_config(), |ctx| {
        hpcbench::stream_triad(ctx, 1000, 2.5, 1, StreamInit::Seeded, MapMode::Mapped)
    })
    .unwrap();
    assert!(runs[0].result.correct);
    assert_eq!(runs[0].output.as_deref().unwrap(), hpcbench::stream_oracle(1000, 2.5, StreamInit::Seeded));
}

#[test]
fn fft_small_two_ranks() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = run_threads(2, tmp.path(), test_config(), |ctx| {
        hpcbench::parallel_fft_1d(ctx, 4, 4, MapMode::Mapped, true)
    })
    .unwrap();
    assert!(runs.iter().all(|r| r.result.correct));
    let want = hpcbench::local_fft(&hpcbench::fft_input(16), false).unwrap();
    assert!(hpcbench::relative_error(runs[0].output.as_ref().unwrap(), &want) <= 1e-12);
    assert_eq!(runs.iter().map(|r| r.data_messages).sum::<usize>(), 4);
}

#[test]
fn fft_without_twiddles_on_single_column_is_row_fft() {
    // With Q = 1 every weight is 1, so skipping them must not change the result.
    let tmp = tempfile::tempdir().unwrap();
    let runs = run_threads(2, tmp.path(), test_config(), |ctx| {
        let with = hpcbench::parallel_fft_1d(ctx, 8, 1, MapMode::Mapped, true)?;
        let without = hpcbench::parallel_fft_1d(ctx, 8, 1, MapMode::Mapped, false)?;
        Ok((with, without))
    })
    .unwrap();
    let (with, without) = &runs[0];
    assert!(with.result.correct && without.result.correct);
    assert_eq!(with.output, without.output);
}

#[test]
fn fft_rejects_bad_factors() {
    let tmp = tempfile::tempdir().unwrap();
    let err = run_threads(1, tmp.path(), test_config(), |ctx| {
        hpcbench::parallel_fft_1d(ctx, 6, 4, MapMode::Mapped, true)
    });
    assert!(err.is_err());
}

#[test]
fn random_access_two_ranks() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = run_threads(2, tmp.path(), test_config(), |ctx| {
        hpcbench::random_access(ctx, RaParams::new(8, 4096), MapMode::Mapped)
    })
    .unwrap();
    assert!(runs.iter().all(|r| r.result.correct));
    assert_eq!(runs[0].output.as_deref().unwrap(), hpcbench::random_access_oracle(8, 4096, RaParams::new(8, 4096).seed));
}

#[test]
fn random_access_batch_size_does_not_matter() {
    let tmp = tempfile::tempdir().unwrap();
    let tables = run_threads(3, tmp.path(), test_config(), |ctx| {
        let mut small = RaParams::new(7, 3000);
        small.batch = 5;
        let a = hpcbench::random_access(ctx, small, MapMode::Mapped)?;
        let b = hpcbench::random_access(ctx, RaParams::new(7, 3000), MapMode::Mapped)?;
        assert!(a.data_messages >= b.data_messages);
        Ok((a.output, b.output))
    })
    .unwrap();
    assert_eq!(tables[0].0, tables[0].1);
}

#[test]
fn random_access_trivial_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = run_threads(2, tmp.path(), test_config(), |ctx| {
        hpcbench::random_access(ctx, RaParams::new(4, 0), MapMode::Mapped)
    })
    .unwrap();
    assert_eq!(runs[0].output.as_deref().unwrap(), (0..16).collect::<Vec<u64>>());
    assert_eq!(runs.iter().map(|r| r.data_messages).sum::<usize>(), 0);

    // One rank owns the whole table: every update is local.
    let tmp = tempfile::tempdir().unwrap();
    let runs = run_threads(1, tmp.path(), test_config(), |ctx| {
        hpcbench::random_access(ctx, RaParams::new(6, 500), MapMode::Mapped)
    })
    .unwrap();
    assert!(runs[0].result.correct);
    assert_eq!(runs[0].data_messages + runs[0].control_messages, 0);
}

#[test]
fn turned_off_kernels_match() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = run_threads(1, tmp.path(), test_config(), |ctx| {
        let s_on = hpcbench::stream_triad(ctx, 100, 3.0, 1, StreamInit::Seeded, MapMode::Mapped)?;
        let s_off = hpcbench::stream_triad(ctx, 100, 3.0, 1, StreamInit::Seeded, MapMode::Off)?;
        let r_on = hpcbench::random_access(ctx, RaParams::new(6, 300), MapMode::Mapped)?;
        let r_off = hpcbench::random_access(ctx, RaParams::new(6, 300), MapMode::Off)?;
        Ok((s_on.output == s_off.output, r_on.output == r_off.output, s_off.result.correct && r_off.result.correct))
    })
    .unwrap();
    assert_eq!(runs[0], (true, true, true));
}

#[test]
fn pingpong_needs_two_ranks_and_echoes() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run_threads(3, tmp.path(), test_config(), |ctx| hpcbench::pingpong(ctx, 64, 3)).is_err());
    let tmp = tempfile::tempdir().unwrap();
    let out = run_threads(2, tmp.path(), test_config(), |ctx| hpcbench::pingpong(ctx, 4096, 3)).unwrap();
    assert_eq!(out[0].len(), hpcbench::pingpong_sizes(4096).len());
    assert!(out[0].iter().all(|r| r.correct && r.seconds > 0.0));
    assert!(out[1].is_empty());
}

#[test]
fn redistribution_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_threads(3, tmp.path(), test_config(), |ctx| hpcbench::redist_round_trip(ctx, 10, 99)).unwrap();
    assert!(out[0].1.is_empty(), "{:?}", out[0].1);
    assert!(out.iter().all(|(r, _)| r.correct));
}

#[test]
fn complex_twiddles_have_unit_modulus() {
    let w = hpcbench::TwiddleWeights::new(32, 32);
    let worst = (0..32)
        .flat_map(|p| (0..32).map(move |q| (p, q)))
        .map(|(p, q)| (w.get(p, q).norm() - 1.0).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-12);
    assert_eq!(w.get(0, 17), Complex64::new(1.0, 0.0));
}
