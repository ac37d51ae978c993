use std::ops::Range;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{DataError, TimeSeriesTable};

/// What to do with a row that has an unparseable or non-finite cell, or a
/// timestamp that does not advance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BadRowPolicy {
    #[default]
    Reject,
    Drop,
}

#[derive(Clone, Debug, Default)]
pub struct LoadStats {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

const TIME_FORMATS: [&str; 5] = [
    "%Y-%m-%d %H:%M:%S",
    "%d.%m.%Y %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y/%m/%d %H:%M:%S",
];

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

/// Header name without a trailing unit, e.g. `"Tdew (degC)"` → `"Tdew"`.
pub fn short_name(header: &str) -> &str {
    match header.find(" (") {
        Some(i) if header.ends_with(')') => &header[..i],
        _ => header.trim(),
    }
}

/// Index of `wanted` among the headers, matching exactly first and then on
/// the unit-stripped name.
pub fn resolve_column(headers: &[String], wanted: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h == wanted)
        .or_else(|| headers.iter().position(|h| short_name(h) == wanted))
        .ok_or_else(|| DataError::MissingColumn(wanted.to_owned()))
}

/// Reads a weather CSV whose first column is a timestamp.
///
/// `columns` are matched against the header (see [`resolve_column`]) and the
/// resulting table uses the requested names in the requested order. `rows`
/// selects data rows by zero-based position before any row is dropped.
pub fn load_weather_csv(
    path: &Path,
    columns: &[String],
    rows: Option<Range<usize>>,
    policy: BadRowPolicy,
) -> Result<(TimeSeriesTable, LoadStats), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Parse(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if headers.len() < 2 {
        return Err(DataError::Parse(
            "expected a timestamp column followed by numeric columns".into(),
        ));
    }
    let idx = columns
        .iter()
        .map(|c| {
            let i = resolve_column(&headers[1..], c)?;
            Ok(i + 1)
        })
        .collect::<Result<Vec<_>, DataError>>()?;

    let mut stats = LoadStats::default();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut last_time: Option<NaiveDateTime> = None;
    let range = rows.unwrap_or(0..usize::MAX);

    for (line, record) in reader.records().enumerate() {
        if line < range.start {
            continue;
        }
        if line >= range.end {
            break;
        }
        let record = record.map_err(|e| DataError::Parse(e.to_string()))?;
        stats.rows_read += 1;
        let problem = (|| {
            let stamp = record.get(0).unwrap_or("");
            let Some(time) = parse_timestamp(stamp) else {
                return Err(format!("unparseable timestamp {stamp:?}"));
            };
            if last_time.is_some_and(|prev| time <= prev) {
                return Err(format!("timestamp {stamp:?} does not advance"));
            }
            let mut row = Vec::with_capacity(idx.len());
            for (&i, name) in idx.iter().zip(columns) {
                let cell = record.get(i).unwrap_or("");
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => row.push(v),
                    _ => return Err(format!("column {name}: bad value {cell:?}")),
                }
            }
            Ok((stamp.to_owned(), time, row))
        })();
        match problem {
            Ok((stamp, time, row)) => {
                last_time = Some(time);
                timestamps.push(stamp);
                values.extend(row);
            }
            Err(reason) => match policy {
                BadRowPolicy::Reject => {
                    return Err(DataError::BadRow {
                        // header is line 1
                        line: line + 2,
                        reason,
                    })
                }
                BadRowPolicy::Drop => {
                    log::warn!("dropping row {}: {reason}", line + 2);
                    stats.rows_dropped += 1;
                }
            },
        }
    }
    let table = TimeSeriesTable::new(timestamps, columns.to_vec(), values)?;
    Ok((table, stats))
}

/// Writes a table as CSV with a leading `date` column.
pub fn write_csv(table: &TimeSeriesTable, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::Io(e.to_string()))?;
    let mut header = vec!["date".to_owned()];
    header.extend(table.columns().iter().cloned());
    w.write_record(&header)
        .map_err(|e| DataError::Io(e.to_string()))?;
    for (r, stamp) in table.timestamps().iter().enumerate() {
        let mut rec = vec![stamp.clone()];
        rec.extend(table.row(r).iter().map(|v| format!("{v}")));
        w.write_record(&rec)
            .map_err(|e| DataError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))?;
    Ok(())
}

/// Header names (without the timestamp column) of a CSV file.
pub fn csv_columns(path: &Path) -> Result<Vec<String>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::Parse(e.to_string()))?;
    Ok(headers.iter().skip(1).map(str::to_owned).collect())
}
