//! Synthetic participants with causal meal, insulin and exercise effects.
//!
//! Glucose relaxes toward a daily sinusoidal set point and is pushed up by
//! carbohydrate appearance and down by insulin action, each absorbed through
//! two first-order compartments. Covariates are emitted as irregular events
//! in the same CSV schema the preprocessor reads.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::{Path, PathBuf};

use gam_core::ingest::EventRecord;
use gam_core::util::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::CliError;

const STEP: i64 = 300;
const STEPS_PER_DAY: usize = 288;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub participants: usize,
    /// Days in each training file.
    pub days: usize,
    /// Days in each testing file, simulated right after the training days.
    pub test_days: usize,
    /// Epoch seconds of the first simulated step.
    pub start: i64,
    pub meals_per_day: f64,
    /// Correction boluses per day, in addition to meal boluses.
    pub boluses_per_day: f64,
    /// Probability that a meal is covered by a bolus.
    pub meal_bolus_prob: f64,
    /// Grams of carbohydrate per unit of insulin for meal boluses.
    pub carb_ratio: f64,
    pub exercise_per_day: f64,
    pub finger_sticks_per_day: f64,
    /// Fraction of the gap to the set point closed per step.
    pub decay: f64,
    /// mg/dL per gram of absorbed carbohydrate.
    pub meal_gain: f64,
    /// mg/dL per absorbed unit of insulin.
    pub bolus_gain: f64,
    /// mg/dL per step per unit of exercise intensity.
    pub exercise_gain: f64,
    pub noise_std: f64,
    pub rhythm_amplitude: f64,
    pub baseline: f64,
    /// Probability that a CGM reading is missing.
    pub cgm_dropout: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            participants: 4,
            days: 10,
            test_days: 2,
            start: 1_577_836_800,
            meals_per_day: 3.0,
            boluses_per_day: 1.0,
            meal_bolus_prob: 0.8,
            carb_ratio: 10.0,
            exercise_per_day: 1.0,
            finger_sticks_per_day: 3.0,
            decay: 0.02,
            meal_gain: 1.0,
            bolus_gain: 6.0,
            exercise_gain: 0.15,
            noise_std: 1.5,
            rhythm_amplitude: 20.0,
            baseline: 130.0,
            cgm_dropout: 0.02,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        let rates = [
            self.meals_per_day,
            self.boluses_per_day,
            self.exercise_per_day,
            self.finger_sticks_per_day,
            self.noise_std,
            self.meal_gain,
            self.bolus_gain,
            self.exercise_gain,
            self.rhythm_amplitude,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(CliError::Config("synthetic rates, gains and noise must be finite and non-negative".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(CliError::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        for (name, p) in [("meal_bolus_prob", self.meal_bolus_prob), ("cgm_dropout", self.cgm_dropout)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.carb_ratio.is_nan() || self.carb_ratio <= 0.0 {
            return Err(CliError::Config("carb_ratio must be positive".into()));
        }
        if self.participants == 0 || self.days == 0 {
            return Err(CliError::Config("need at least one participant and one day".into()));
        }
        Ok(())
    }

    pub fn participant_ids(&self) -> Vec<String> {
        (0..self.participants).map(|i| format!("p{:02}", i + 1)).collect()
    }
}

/// One simulated participant.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthParticipant {
    pub id: String,
    pub training: Vec<EventRecord>,
    pub testing: Vec<EventRecord>,
    /// Noise-free-of-sensor glucose per step, training then testing.
    pub glucose: Vec<f64>,
}

/// Two first-order compartments in series.
#[derive(Clone, Copy, Debug, Default)]
struct Absorption {
    first: f64,
    second: f64,
    rate: f64,
}

impl Absorption {
    fn new(rate: f64) -> Self {
        Self { rate, ..Self::default() }
    }

    /// Advances one step and returns the amount appearing in this step.
    fn step(&mut self, dose: f64) -> f64 {
        self.first += dose;
        let moved = self.rate * self.first;
        self.first -= moved;
        self.second += moved;
        let out = self.rate * self.second;
        self.second -= out;
        out
    }
}

fn point(attribute: &str, timestamp: i64, value: f64) -> EventRecord {
    EventRecord {
        attribute: attribute.into(),
        timestamp,
        value,
        end_timestamp: None,
    }
}

fn poisson(rng: &mut ChaCha8Rng, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

/// Draws `count` step indices within `[from, to)` of one day.
fn times_in(rng: &mut ChaCha8Rng, count: u64, from: usize, to: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..count).map(|_| rng.random_range(from..to)).collect();
    v.sort_unstable();
    v
}

pub fn simulate_participant(spec: &SynthSpec, id: &str) -> SynthParticipant {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("synth/{id}")));
    let days = spec.days + spec.test_days;
    let steps = days * STEPS_PER_DAY;
    let phase = rng.random_range(0.0..TAU);
    let sensitivity = rng.random_range(0.8..1.2);
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("finite std");

    let mut meals = vec![0.0; steps];
    let mut insulin = vec![0.0; steps];
    let mut exercise = vec![0.0; steps];
    let mut events = Vec::new();
    for day in 0..days {
        let base = day * STEPS_PER_DAY;
        let n = poisson(&mut rng, spec.meals_per_day);
        for s in times_in(&mut rng, n, 84, 264) {
            let carbs = rng.random_range(20.0f64..90.0).round();
            meals[base + s] += carbs;
            let ts = spec.start + (base + s) as i64 * STEP + rng.random_range(0..STEP);
            events.push(point("meal", ts, carbs));
            if rng.random_bool(spec.meal_bolus_prob) {
                let dose = (carbs / spec.carb_ratio * 10.0).round() / 10.0;
                insulin[base + s] += dose;
                events.push(point("bolus", ts, dose));
            }
        }
        let n = poisson(&mut rng, spec.boluses_per_day);
        for s in times_in(&mut rng, n, 0, STEPS_PER_DAY) {
            let dose = rng.random_range(1u32..=4) as f64;
            insulin[base + s] += dose;
            let ts = spec.start + (base + s) as i64 * STEP + rng.random_range(0..STEP);
            events.push(point("bolus", ts, dose));
        }
        let n = poisson(&mut rng, spec.exercise_per_day);
        for s in times_in(&mut rng, n, 96, 240) {
            let len = rng.random_range(6usize..=12);
            let intensity = (rng.random_range(1.0f64..10.0) * 10.0).round() / 10.0;
            let end = (base + s + len).min(steps);
            for e in &mut exercise[base + s..end] {
                *e = f64::max(*e, intensity);
            }
            let ts = spec.start + (base + s) as i64 * STEP;
            events.push(EventRecord {
                attribute: "exercise".into(),
                timestamp: ts,
                value: intensity,
                end_timestamp: Some(spec.start + end as i64 * STEP),
            });
        }
        let onset = base as i64 * STEP + 23 * 3600 - 3600 + rng.random_range(0..7200);
        let wake = base as i64 * STEP + 31 * 3600 - 3600 + rng.random_range(0..7200);
        let end = wake.min(steps as i64 * STEP);
        if end > onset {
            events.push(EventRecord {
                attribute: "sleep".into(),
                timestamp: spec.start + onset,
                value: rng.random_range(1u32..=3) as f64,
                end_timestamp: Some(spec.start + end),
            });
        }
    }

    let set_point = |s: usize| {
        let day = (s % STEPS_PER_DAY) as f64 / STEPS_PER_DAY as f64;
        spec.baseline + spec.rhythm_amplitude * (TAU * day + phase).sin()
    };
    let mut gut = Absorption::new(0.1);
    let mut plasma = Absorption::new(0.05);
    let mut g = set_point(0);
    let mut glucose = Vec::with_capacity(steps);
    for s in 0..steps {
        glucose.push(g);
        let carbs = gut.step(meals[s]);
        let ins = plasma.step(insulin[s]);
        let eps = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        g += spec.decay * (set_point(s) - g) + sensitivity * (spec.meal_gain * carbs - spec.bolus_gain * ins)
            - spec.exercise_gain * exercise[s]
            + eps;
        g = g.clamp(40.0, 400.0);
    }

    for (s, &v) in glucose.iter().enumerate() {
        if spec.cgm_dropout > 0.0 && rng.random_bool(spec.cgm_dropout) {
            continue;
        }
        let ts = spec.start + s as i64 * STEP + rng.random_range(0..60);
        events.push(point("glucose_level", ts, v.round()));
    }
    for day in 0..days {
        let n = poisson(&mut rng, spec.finger_sticks_per_day);
        for s in times_in(&mut rng, n, 0, STEPS_PER_DAY) {
            let step = day * STEPS_PER_DAY + s;
            let ts = spec.start + step as i64 * STEP + rng.random_range(60..STEP);
            let v = (glucose[step] + rng.random_range(-8.0..8.0)).clamp(40.0, 400.0).round();
            events.push(point("finger_stick", ts, v));
        }
    }
    events.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.attribute.cmp(&b.attribute)));

    let split = spec.start + (spec.days * STEPS_PER_DAY) as i64 * STEP;
    let (mut training, mut testing) = (Vec::new(), Vec::new());
    for mut e in events {
        if e.timestamp < split {
            if let Some(end) = e.end_timestamp {
                e.end_timestamp = Some(end.min(split));
            }
            training.push(e);
        } else {
            testing.push(e);
        }
    }
    SynthParticipant {
        id: id.to_string(),
        training,
        testing,
        glucose,
    }
}

pub fn simulate(spec: &SynthSpec) -> Result<Vec<SynthParticipant>, CliError> {
    spec.validate()?;
    Ok(spec.participant_ids().iter().map(|id| simulate_participant(spec, id)).collect())
}

/// Writes events in the preprocessor's CSV schema.
pub fn write_events(mut w: impl Write, participant: &str, events: &[EventRecord]) -> std::io::Result<()> {
    writeln!(w, "participant,attribute,timestamp,value,end_timestamp")?;
    for e in events {
        match e.end_timestamp {
            Some(end) => writeln!(w, "{participant},{},{},{},{end}", e.attribute, e.timestamp, e.value)?,
            None => writeln!(w, "{participant},{},{},{},", e.attribute, e.timestamp, e.value)?,
        }
    }
    Ok(())
}

/// Writes `<pid>-training.csv` and, when non-empty, `<pid>-testing.csv`.
pub fn write_participants(dir: &Path, people: &[SynthParticipant]) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    for p in people {
        for (suffix, events) in [("training", &p.training), ("testing", &p.testing)] {
            if events.is_empty() {
                continue;
            }
            let path = dir.join(format!("{}-{suffix}.csv", p.id));
            let mut buf = Vec::new();
            write_events(&mut buf, &p.id, events).map_err(|e| CliError::io(&path, e))?;
            std::fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
