use num_complex::Complex64;
use proptest::prelude::*;

use super::*;
use crate::telemetry::{simulate, Dataset, GeneratorConfig};
use crate::topology::GridTopology;

fn dataset(timesteps: usize, seed: u64) -> Dataset {
    let cfg = GeneratorConfig {
        timesteps,
        seed,
        ..GeneratorConfig::default()
    };
    simulate(&GridTopology::default_grid(), &cfg, &SplitSpec::default()).unwrap()
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn csi_drift_cases() {
    let h = [c(1.0, 2.0), c(-0.5, 0.1)];
    assert_eq!(csi_drift(&h, &h).unwrap(), 0.0);
    let d = csi_drift(&[c(0.0, 1.0)], &[c(1.0, 0.0)]).unwrap();
    assert!((d - 2f64.sqrt()).abs() < 1e-12);
    let d = csi_drift(&[c(1.0, 0.0), c(0.0, 3.0)], &[c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
    assert!((d - 2.0).abs() < 1e-12);
    assert!(csi_drift(&[c(0.0, 0.0)], &h).is_err());
}

#[test]
fn entropy_cases() {
    let e = csi_entropy(&[0.0, 1.0], 2, 1e-15).unwrap();
    assert!((e - 1.0).abs() < 1e-10);
    assert!(csi_entropy(&[3.0; 16], 16, 1e-9).unwrap() < 1e-6);
    let uniform: Vec<f64> = (0..16).map(|i| i as f64 + 0.5).collect();
    let e = csi_entropy(&uniform, 16, 1e-9).unwrap();
    assert!((e - 4.0).abs() < 1e-12);
    assert!(csi_entropy(&[1.0], 1, 1e-9).is_err());
}

#[test]
fn derived_stats_cases() {
    let s = derived_stats(&[2.5; 9]).unwrap();
    assert_eq!(s.to_array(), [0.0, 0.0, 0.0, 0.0, 1.0]);
    let s = derived_stats(&[0.0, 1.0, 2.0, 3.0]).unwrap();
    assert!((s.slope - 1.0).abs() < 1e-12);
    assert_eq!(s.drift, 3.0);
    // Textbook g1 = m3 / m2^1.5 on [0, 0, 0, 10]: mean 2.5, m2 18.75,
    // m3 = (3 * (-2.5)^3 + 7.5^3) / 4 = 93.75.
    let s = derived_stats(&[0.0, 0.0, 0.0, 10.0]).unwrap();
    let g1 = 93.75 / 18.75f64.powf(1.5);
    assert!(s.skew > 0.0);
    assert!((s.skew - g1).abs() < 1e-12);
    assert!(derived_stats(&[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn flatness_of_white_vs_tone() {
    let tone: Vec<f64> = (0..16).map(|t| (t as f64 * std::f64::consts::PI / 2.0).sin()).collect();
    let s = derived_stats(&tone).unwrap();
    assert!(s.flatness < 0.05, "{}", s.flatness);
    let mut impulse = vec![0.0; 16];
    impulse[3] = 1.0;
    let s = derived_stats(&impulse).unwrap();
    assert!((s.flatness - 1.0).abs() < 1e-12);
}

fn channels(latency: Vec<f64>, snr: Vec<f64>) -> LinkChannels {
    let n = latency.len();
    LinkChannels {
        latency,
        snr,
        per: vec![0.1; n],
        csi_drift: vec![0.2; n],
    }
}

#[test]
fn neighbor_stats_cases() {
    let ego = channels(vec![1.0, 3.0, 2.0, 5.0], vec![10.0, 12.0, 9.0, 15.0]);
    assert_eq!(neighbor_stats(&ego, &[], 3, 4), [0.0; 8]);
    let twin = ego.clone();
    let s = neighbor_stats(&ego, &[&twin], 3, 4);
    assert!((s[4] - 1.0).abs() < 1e-12 && (s[5] - 1.0).abs() < 1e-12);
    let a = channels(vec![1.0; 4], vec![10.0; 4]);
    let b = channels(vec![1.0; 4], vec![20.0; 4]);
    let s = neighbor_stats(&ego, &[&a, &b], 3, 4);
    assert_eq!(s[1], 15.0);
    assert!((s[6] - 5.0).abs() < 1e-12);
    // Flat neighbor-mean latency: correlation falls back to zero.
    assert_eq!(s[4], 0.0);
}

#[test]
fn hundred_step_split_windows() {
    let ds = dataset(100, 3);
    let cfg = FeatureConfig::default();
    let windows = make_windows(&ds, &cfg).unwrap();
    for w in &windows {
        let end = w.start + w.w - 1;
        match w.split {
            Split::Train => assert!(end <= 69),
            Split::Val => assert!(w.start >= 75 && end < 85),
            Split::Test => assert!(w.start >= 90),
        }
        assert_eq!(w.labels[..], ds.series[w.ego].label[w.start..w.start + w.w]);
    }
    assert!(windows.iter().any(|w| w.split == Split::Test));
}

#[test]
fn output_is_sorted_and_shaped() {
    let ds = dataset(400, 2);
    let cfg = FeatureConfig::default();
    let windows = make_windows(&ds, &cfg).unwrap();
    for pair in windows.windows(2) {
        assert!((pair[0].ego, pair[0].start) < (pair[1].ego, pair[1].start));
    }
    for w in &windows {
        assert_eq!(w.x_raw.len(), 9 * 36);
        assert_eq!(w.x_nbr.len(), 9 * w.k * 8);
        assert_eq!(w.meta.len(), 15);
    }
}

#[test]
fn ablation_flags_drop_exact_blocks() {
    let ds = dataset(400, 6);
    let full = build_clients(&ds, &FeatureConfig::default()).unwrap();
    for (flags, f_raw, keep_nbr, f_meta) in [
        (FeatureFlags { derived: false, ..FeatureFlags::default() }, 11, true, 15),
        (FeatureFlags { neighbor: false, ..FeatureFlags::default() }, 36, false, 15),
        (FeatureFlags { metadata: false, ..FeatureFlags::default() }, 36, true, 0),
    ] {
        let cfg = FeatureConfig {
            flags,
            ..FeatureConfig::default()
        };
        let ab = build_clients(&ds, &cfg).unwrap();
        for (a, f) in ab.iter().zip(&full) {
            assert_eq!(a.f_raw, f_raw);
            assert_eq!(a.meta.len(), f_meta);
            for t in 0..a.total {
                assert_eq!(a.raw_row(t), &f.raw_row(t)[..f_raw]);
            }
            if keep_nbr {
                assert_eq!(a.nbr, f.nbr);
            } else {
                assert_eq!(a.k(), 0);
                assert!(a.nbr.is_empty());
            }
            if f_meta > 0 {
                assert_eq!(a.meta, f.meta);
            }
            assert_eq!(a.starts, f.starts);
        }
    }
}

#[test]
fn normalization_uses_training_rows_only() {
    let mut ds = dataset(600, 4);
    let cfg = FeatureConfig::default();
    let before = build_clients(&ds, &cfg).unwrap();
    // Perturb every node's test segment; training statistics must not move.
    let test = ds.split.boundaries(600).unwrap().test;
    for s in &mut ds.series {
        for t in test.clone() {
            s.snr_db[t] += 7.0;
            s.latency_ms[t] *= 3.0;
        }
    }
    let after = build_clients(&ds, &cfg).unwrap();
    for (a, b) in before.iter().zip(&after) {
        assert_eq!(a.raw_norm, b.raw_norm);
        assert_eq!(a.nbr_norm, b.nbr_norm);
    }
}

#[test]
fn train_rows_are_standardized() {
    let ds = dataset(800, 9);
    let clients = build_clients(&ds, &FeatureConfig::default()).unwrap();
    for c in &clients {
        let rows = c.bounds.train.clone();
        let n = rows.len() as f64;
        for col in 0..c.f_raw {
            let m = rows.clone().map(|t| c.raw_row(t)[col]).sum::<f64>() / n;
            assert!(m.abs() < 1e-9, "client {} col {col}: mean {m}", c.ego);
        }
    }
}

#[test]
fn short_segment_yields_no_windows() {
    let ds = dataset(100, 1);
    let cfg = FeatureConfig {
        window: 12,
        ..FeatureConfig::default()
    };
    let clients = build_clients(&ds, &cfg).unwrap();
    for c in &clients {
        assert_eq!(c.n_windows(Split::Val), 0);
        assert!(c.n_windows(Split::Train) > 0);
    }
}

#[test]
fn feature_table_has_named_columns() {
    let ds = dataset(150, 1);
    let cfg = FeatureConfig::default();
    let c = &build_clients(&ds, &cfg).unwrap()[0];
    let text = client_to_text(c, &cfg.flags);
    let header: Vec<&str> = text.lines().next().unwrap().split('\t').collect();
    assert_eq!(header.len(), 1 + 36 + c.k() * 8 + 15 + 1);
    assert_eq!(header[1], "csi_amp_mean");
    assert_eq!(text.lines().count(), 151);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn entropy_is_bounded(values in prop::collection::vec(0.0f64..5.0, 1..64), bins in 2usize..32) {
        let e = csi_entropy(&values, bins, 1e-9).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!(e <= (bins as f64).log2() + 1e-12);
    }

    #[test]
    fn entropy_max_only_for_uniform(counts in prop::collection::vec(0u32..6, 2..20)) {
        let counts: Vec<f64> = counts.into_iter().map(f64::from).collect();
        let e = entropy_from_counts(&counts, 1e-9);
        let max = (counts.len() as f64).log2();
        let uniform = counts.iter().all(|&c| c == counts[0]);
        if uniform {
            prop_assert!((e - max).abs() < 1e-9);
        } else {
            prop_assert!(e < max - 1e-9);
        }
    }

    #[test]
    fn derived_ranges(x in prop::collection::vec(-100.0f64..100.0, 4..20)) {
        let s = derived_stats(&x).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.flatness));
        for v in s.to_array() {
            prop_assert!(v.is_finite());
        }
    }

    #[test]
    fn correlations_bounded(a in prop::collection::vec(-5.0f64..5.0, 9), b in prop::collection::vec(-5.0f64..5.0, 9)) {
        let r = pearson(&a, &b);
        prop_assert!((-1.0..=1.0).contains(&r));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Random generator configs: no window crosses a split boundary, and
    /// every buffer step is attack-free and separates train from test by at
    /// least the buffer length.
    #[test]
    fn windows_are_leak_free(
        timesteps in 100usize..400,
        seed in 0u64..10_000,
        coverage in 0.2f64..0.4,
        window in 2usize..12,
        buffer_len in 5usize..8,
    ) {
        let mut g = GeneratorConfig { timesteps, seed, ..GeneratorConfig::default() };
        g.attack.coverage = coverage;
        g.attack.min_len = 5 + (seed as usize % 30);
        g.attack.max_len = g.attack.min_len + 20;
        let split = SplitSpec { buffer_len, ..SplitSpec::default() };
        let ds = simulate(&GridTopology::default_grid(), &g, &split).unwrap();
        let bounds = split.boundaries(timesteps).unwrap();
        for s in &ds.series {
            for b in &bounds.buffers {
                prop_assert!(b.len() >= 5);
                prop_assert!(b.clone().all(|t| s.label[t] == 0));
            }
        }
        let cfg = FeatureConfig { window, ..FeatureConfig::default() };
        let windows = make_windows(&ds, &cfg).unwrap();
        for w in &windows {
            let seg = bounds.segment(w.split);
            prop_assert!(seg.start <= w.start && w.start + w.w <= seg.end);
        }
        let last_train = windows.iter().filter(|w| w.split == Split::Train).map(|w| w.start + w.w).max();
        let first_test = windows.iter().filter(|w| w.split == Split::Test).map(|w| w.start).min();
        if let (Some(a), Some(b)) = (last_train, first_test) {
            prop_assert!(b >= a + buffer_len);
        }
    }
}
