use super::{EventRecord, EventStream, IngestError, Result, TEMP_BASAL};

const BASAL: &str = "basal";

/// Folds `temp_basal` intervals into the stepwise `basal` attribute.
///
/// Inside a temporary interval the temporary rate overrides the scheduled
/// one; scheduled changes that fall inside it are suppressed, and the rate in
/// effect at the interval's end is restored there. Overlapping temporary
/// intervals are rejected since there is no precedence rule for them.
pub fn merge_basal(stream: EventStream) -> Result<EventStream> {
    if !stream.events.iter().any(|e| e.attribute == TEMP_BASAL) {
        return Ok(stream);
    }
    let EventStream {
        participant_id,
        events,
        attribute_catalog,
        dropped_unknown,
    } = stream;
    let mut scheduled = Vec::new();
    let mut temps = Vec::new();
    let mut others = Vec::new();
    for e in events {
        match e.attribute.as_str() {
            BASAL => scheduled.push(e),
            TEMP_BASAL => temps.push(e),
            _ => others.push(e),
        }
    }
    let mut intervals = Vec::with_capacity(temps.len());
    for t in &temps {
        let end = t.end_timestamp.ok_or_else(|| {
            IngestError::Validation(format!("temp_basal at {} has no end timestamp", t.timestamp))
        })?;
        intervals.push((t.timestamp, end, t.value));
    }
    intervals.sort_by_key(|&(s, _, _)| s);
    if let Some(w) = intervals.windows(2).find(|w| w[1].0 < w[0].1) {
        return Err(IngestError::Validation(format!(
            "overlapping temp_basal intervals [{}, {}) and [{}, {})",
            w[0].0, w[0].1, w[1].0, w[1].1
        )));
    }

    let inside = |ts: i64| intervals.iter().any(|&(s, e, _)| ts >= s && ts < e);
    let rate_before = |ts: i64| {
        scheduled
            .iter()
            .rfind(|r| r.timestamp < ts)
            .map(|r| r.value)
    };
    let mut merged: Vec<EventRecord> = scheduled
        .iter()
        .filter(|r| !inside(r.timestamp))
        .cloned()
        .collect();
    for (i, &(start, end, value)) in intervals.iter().enumerate() {
        merged.push(EventRecord {
            attribute: BASAL.into(),
            timestamp: start,
            value,
            end_timestamp: Some(end),
        });
        let scheduled_at_end = scheduled.iter().any(|r| r.timestamp == end);
        let next_starts_at_end = intervals.get(i + 1).is_some_and(|n| n.0 == end);
        if !scheduled_at_end && !next_starts_at_end {
            if let Some(rate) = rate_before(end) {
                merged.push(EventRecord {
                    attribute: BASAL.into(),
                    timestamp: end,
                    value: rate,
                    end_timestamp: None,
                });
            }
        }
    }
    merged.sort_by_key(|e| e.timestamp);
    others.extend(merged);
    others.sort_by_key(|e| e.timestamp);
    Ok(EventStream {
        participant_id,
        events: others,
        attribute_catalog,
        dropped_unknown,
    })
}
