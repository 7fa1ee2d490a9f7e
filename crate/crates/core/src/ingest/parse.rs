use std::io::{BufRead, BufReader, Read};

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{EventRecord, EventStream, IngestError, Result};

/// Temporary basal rate records; consumed by [`super::merge_basal`].
pub const TEMP_BASAL: &str = "temp_basal";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventFormat {
    Csv,
    Jsonl,
}

impl EventFormat {
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "csv" => Some(EventFormat::Csv),
            "jsonl" | "ndjson" => Some(EventFormat::Jsonl),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParseOptions {
    pub catalog: Vec<String>,
    /// Unknown attributes are an error instead of being dropped.
    pub strict: bool,
}

/// Epoch seconds, or ISO-8601 (RFC 3339 with offset, or naive and taken as UTC).
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(|dt| dt.and_utc().timestamp())
}

struct RawRow {
    line: u64,
    participant: String,
    record: EventRecord,
}

fn parse_error(line: u64, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        line,
        message: message.into(),
    }
}

fn build_record(
    line: u64,
    attribute: &str,
    timestamp: Option<i64>,
    value: Option<f64>,
    end: Option<Option<i64>>,
) -> Result<EventRecord> {
    let timestamp = timestamp.ok_or_else(|| parse_error(line, "invalid timestamp"))?;
    let value = value.ok_or_else(|| parse_error(line, "invalid value"))?;
    if !value.is_finite() {
        return Err(parse_error(line, "value is not finite"));
    }
    let end_timestamp = end.ok_or_else(|| parse_error(line, "invalid end_timestamp"))?;
    if let Some(e) = end_timestamp {
        if e < timestamp {
            return Err(parse_error(line, "end_timestamp precedes timestamp"));
        }
    }
    Ok(EventRecord {
        attribute: attribute.trim().to_string(),
        timestamp,
        value,
        end_timestamp,
    })
}

fn read_csv(source: impl Read) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| parse_error(1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing: Vec<&str> = ["participant", "attribute", "timestamp", "value"]
        .into_iter()
        .filter(|c| col(c).is_none())
        .collect();
    if !missing.is_empty() && !headers.is_empty() {
        return Err(IngestError::Schema(format!("missing CSV columns {missing:?}")));
    }
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let (ip, ia, it, iv) = (
        col("participant").unwrap(),
        col("attribute").unwrap(),
        col("timestamp").unwrap(),
        col("value").unwrap(),
    );
    let ie = col("end_timestamp");
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let end = match ie.map(field) {
            None | Some("") => Some(None),
            Some(s) => parse_timestamp(s).map(Some),
        };
        let record = build_record(
            line,
            field(ia),
            parse_timestamp(field(it)),
            field(iv).parse::<f64>().ok(),
            end,
        )?;
        rows.push(RawRow {
            line,
            participant: field(ip).to_string(),
            record,
        });
    }
    Ok(rows)
}

fn json_timestamp(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64(),
        Value::String(s) => parse_timestamp(s),
        _ => None,
    }
}

fn read_jsonl(source: impl Read) -> Result<Vec<RawRow>> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line_no = i as u64 + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let obj: Value =
            serde_json::from_str(&text).map_err(|e| parse_error(line_no, e.to_string()))?;
        let Value::Object(map) = obj else {
            return Err(parse_error(line_no, "expected a JSON object"));
        };
        let text_field = |key: &str| -> Result<String> {
            match map.get(key) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(Value::Number(n)) => Ok(n.to_string()),
                _ => Err(IngestError::Schema(format!("line {line_no}: missing key `{key}`"))),
            }
        };
        let participant = text_field("participant")?;
        let attribute = text_field("attribute")?;
        let timestamp = map
            .get("timestamp")
            .ok_or_else(|| IngestError::Schema(format!("line {line_no}: missing key `timestamp`")))
            .map(json_timestamp)?;
        let value = match map.get("value") {
            Some(Value::Number(n)) => n.as_f64(),
            Some(Value::String(s)) => s.trim().parse::<f64>().ok(),
            Some(_) => None,
            None => {
                return Err(IngestError::Schema(format!("line {line_no}: missing key `value`")))
            }
        };
        let end = match map.get("end_timestamp") {
            None | Some(Value::Null) => Some(None),
            Some(Value::String(s)) if s.trim().is_empty() => Some(None),
            Some(v) => json_timestamp(v).map(Some),
        };
        let record = build_record(line_no, &attribute, timestamp, value, end)?;
        rows.push(RawRow {
            line: line_no,
            participant,
            record,
        });
    }
    Ok(rows)
}

/// Reads one participant's event stream.
///
/// Events come back stably sorted by timestamp. The catalog is taken from
/// `options`, not from what appears in the data. An empty source yields an
/// empty stream with an empty participant id.
pub fn parse_events(source: impl Read, format: EventFormat, options: &ParseOptions) -> Result<EventStream> {
    let rows = match format {
        EventFormat::Csv => read_csv(source)?,
        EventFormat::Jsonl => read_jsonl(source)?,
    };
    let keep_temp_basal = options.catalog.iter().any(|c| c == "basal");
    let mut stream = EventStream {
        attribute_catalog: options.catalog.clone(),
        ..EventStream::default()
    };
    for row in rows {
        if stream.participant_id.is_empty() {
            stream.participant_id = row.participant.clone();
        } else if stream.participant_id != row.participant {
            return Err(IngestError::Schema(format!(
                "line {}: participant `{}` in a stream of `{}`",
                row.line, row.participant, stream.participant_id
            )));
        }
        let name = row.record.attribute.as_str();
        let known = options.catalog.iter().any(|c| c == name) || (keep_temp_basal && name == TEMP_BASAL);
        if !known {
            if options.strict {
                return Err(IngestError::Schema(format!(
                    "line {}: unknown attribute `{name}`",
                    row.line
                )));
            }
            stream.dropped_unknown += 1;
            continue;
        }
        stream.events.push(row.record);
    }
    stream.events.sort_by_key(|e| e.timestamp);
    Ok(stream)
}
