mod common;

use std::collections::BTreeMap;

use gam_core::ingest::{
    apply_normalizer, fit_normalizer, regularize, window_samples, AttributeSpec, EventRecord, EventStream, GridSeries,
    IngestConfig, Policy,
};
use proptest::prelude::*;

fn two_attribute_config() -> IngestConfig {
    IngestConfig {
        attributes: vec![
            AttributeSpec::new("glucose_level", Policy::Point),
            AttributeSpec::new("meal", Policy::Point),
        ],
        ..IngestConfig::default()
    }
}

fn cells_and_values() -> impl Strategy<Value = BTreeMap<u16, f64>> {
    prop::collection::btree_map(0u16..400, 40.0f64..400.0, 2..60)
}

proptest! {
    #[test]
    fn denormalized_cells_recover_event_values(
        glucose in cells_and_values(),
        meals in cells_and_values(),
        offset in 0i64..300,
    ) {
        let cfg = two_attribute_config();
        let mut events = Vec::new();
        for (attr, cells) in [("glucose_level", &glucose), ("meal", &meals)] {
            for (&c, &v) in cells {
                events.push(EventRecord {
                    attribute: attr.into(),
                    timestamp: c as i64 * 300 + offset,
                    value: v,
                    end_timestamp: None,
                });
            }
        }
        events.sort_by_key(|e| e.timestamp);
        let stream = EventStream {
            participant_id: "p".into(),
            events,
            attribute_catalog: cfg.catalog(),
            dropped_unknown: 0,
        };
        let (grid, _) = regularize(&stream, &cfg, 0, 400).unwrap();
        let stats = fit_normalizer(&grid, "p").unwrap();
        let z = apply_normalizer(&grid, &stats).unwrap();
        for (n, cells) in [&glucose, &meals].into_iter().enumerate() {
            for (&c, &v) in cells {
                prop_assert!(z.observed(n, c as usize));
                let back = stats.denormalize(n, z.value(n, c as usize));
                prop_assert!((back - v).abs() <= 1e-9 * v.abs(), "{back} vs {v}");
            }
        }
    }

    #[test]
    fn padded_cells_do_not_affect_normalized_output(
        cells in prop::collection::vec((any::<bool>(), -50.0f64..50.0, -1e6f64..1e6), 20..80),
    ) {
        let mut grid = GridSeries::empty("p", vec!["glucose_level".into()], 0, cells.len());
        for (t, &(observed, v, _)) in cells.iter().enumerate() {
            grid.mask[t] = observed;
            grid.values[t] = if observed { v } else { 0.0 };
        }
        let Ok(stats) = fit_normalizer(&grid, "p") else { return Ok(()) };
        let mut noisy = grid.clone();
        for (t, &(observed, _, junk)) in cells.iter().enumerate() {
            if !observed {
                noisy.values[t] = junk;
            }
        }
        let a = apply_normalizer(&grid, &stats).unwrap();
        let b = apply_normalizer(&noisy, &stats).unwrap();
        prop_assert_eq!(&a.values, &b.values);
        for t in 0..a.len {
            if !a.mask[t] {
                prop_assert_eq!(a.values[t].to_bits(), 0.0f64.to_bits());
            }
        }
    }

    #[test]
    fn window_count_matches_formula(len in 0usize..80, t in 1usize..16, w in 1usize..16) {
        let mut grid = GridSeries::empty("p", vec!["glucose_level".into(), "meal".into()], 0, len);
        for c in 0..len {
            grid.mask[c] = true;
            grid.values[c] = c as f64;
        }
        let samples = window_samples(&grid, t, w, 0);
        prop_assert_eq!(samples.len(), (len + 1).saturating_sub(t + w));
        for (s, sample) in samples.iter().enumerate() {
            prop_assert_eq!(sample.y, (s + t + w - 1) as f64);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn validation_windows_follow_training_windows(cells in 100i64..500, phase in 0.0f64..6.0) {
        let p = gam_core::ingest::build_participant(common::stream("p", 0, cells, phase), None, &IngestConfig::default()).unwrap();
        let last_train = p.train.iter().map(|s| s.window_end_time).max().unwrap();
        let first_valid = p.valid.iter().map(|s| s.window_end_time).min().unwrap();
        prop_assert!(first_valid > last_train);
        let last_target = p.train.iter().map(|s| s.target_time()).max().unwrap();
        let first_valid_start = p.valid.iter().map(|s| s.time_of(0)).min().unwrap();
        prop_assert!(first_valid_start > last_target);
    }
}

#[test]
fn twenty_cell_grid_yields_three_windows() {
    let mut grid = GridSeries::empty("p", vec!["glucose_level".into()], 0, 20);
    grid.mask.fill(true);
    let samples = window_samples(&grid, 12, 6, 0);
    let starts: Vec<i64> = samples.iter().map(|s| s.time_of(0) / 300).collect();
    assert_eq!(starts, vec![0, 1, 2]);
}
