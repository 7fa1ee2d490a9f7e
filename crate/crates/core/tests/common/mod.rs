#![allow(dead_code)]

use gam_core::ingest::{build_participant, EventRecord, EventStream, IngestConfig, ParticipantData};
use gam_core::model::{ModelConfig, Variant};
use gam_core::train::TrainConfig;

/// A deterministic participant with glucose every cell and sparse covariates.
pub fn stream(id: &str, from: i64, cells: i64, phase: f64) -> EventStream {
    let mut events = Vec::new();
    for c in 0..cells {
        let ts = from + c * 300 + 11;
        let meal = if c % 23 == 4 { 30.0 + (c % 7) as f64 * 5.0 } else { 0.0 };
        events.push(EventRecord {
            attribute: "glucose_level".into(),
            timestamp: ts,
            value: 130.0 + 35.0 * ((c as f64) / 11.0 + phase).sin() + 0.4 * meal,
            end_timestamp: None,
        });
        if meal > 0.0 {
            events.push(EventRecord {
                attribute: "meal".into(),
                timestamp: ts,
                value: meal,
                end_timestamp: None,
            });
        }
        for (k, attr) in ["bolus", "finger_stick"].iter().enumerate() {
            if c % (19 + k as i64) == 2 {
                events.push(EventRecord {
                    attribute: attr.to_string(),
                    timestamp: ts + 40,
                    value: 2.0 + ((c * 7) % 11) as f64,
                    end_timestamp: None,
                });
            }
        }
        for (k, attr) in ["sleep", "exercise"].iter().enumerate() {
            if c % (43 + k as i64) == 6 && c + 8 < cells {
                events.push(EventRecord {
                    attribute: attr.to_string(),
                    timestamp: ts,
                    value: 1.0 + ((c / 43) % 3) as f64,
                    end_timestamp: Some(ts + 1500),
                });
            }
        }
    }
    events.sort_by_key(|e| e.timestamp);
    EventStream {
        participant_id: id.into(),
        events,
        attribute_catalog: IngestConfig::default().catalog(),
        dropped_unknown: 0,
    }
}

pub fn participant(id: &str, cells: i64, phase: f64) -> ParticipantData {
    build_participant(stream(id, 0, cells, phase), None, &IngestConfig::default()).unwrap()
}

pub fn participants(n: usize, cells: i64) -> Vec<ParticipantData> {
    (0..n).map(|i| participant(&format!("p{i}"), cells, i as f64 * 0.7)).collect()
}

pub fn tiny_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        embed_dim: 4,
        gat_dim: 4,
        hidden: 8,
        ..ModelConfig::default()
    }
}

pub fn tiny_train(seed: u64) -> TrainConfig {
    TrainConfig {
        t_global: 20,
        t_person: 10,
        t_eval1: 5,
        t_eval2: 5,
        batch_size: 8,
        lr_stage1: 1e-2,
        lr_stage2: 1e-3,
        seed,
    }
}
