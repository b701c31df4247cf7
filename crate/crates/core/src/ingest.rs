//! Raw sensor CSV parsing, operator bias corrections and hourly regridding.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, SecondsFormat, Utc};

use crate::{Error, Result};

/// Grid spacing of every [`UniformSeries`], in seconds.
pub const STEP_SECONDS: i64 = 3600;

const FEET_TO_METERS: f64 = 0.3048;

/// Physical sensor installed at the pier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sensor {
    Stage,
    Sonar,
    Discharge,
}

impl Sensor {
    pub const ALL: [Sensor; 3] = [Sensor::Stage, Sensor::Sonar, Sensor::Discharge];

    pub fn name(self) -> &'static str {
        match self {
            Sensor::Stage => "stage",
            Sensor::Sonar => "sonar",
            Sensor::Discharge => "discharge",
        }
    }

    fn feet_factor(self) -> f64 {
        match self {
            Sensor::Stage | Sensor::Sonar => FEET_TO_METERS,
            // cubic feet per second
            Sensor::Discharge => FEET_TO_METERS * FEET_TO_METERS * FEET_TO_METERS,
        }
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sensor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "stage" => Ok(Sensor::Stage),
            "sonar" => Ok(Sensor::Sonar),
            "discharge" => Ok(Sensor::Discharge),
            other => Err(Error::param(format!("unknown sensor `{other}`"))),
        }
    }
}

/// A named column of a [`UniformSeries`]: one of the sensors or a derived
/// calendar feature. The declaration order is the canonical channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Sonar,
    Stage,
    Discharge,
    YearSin,
    YearCos,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Sonar => "sonar",
            Channel::Stage => "stage",
            Channel::Discharge => "discharge",
            Channel::YearSin => "year_sin",
            Channel::YearCos => "year_cos",
        }
    }

    pub fn is_calendar(self) -> bool {
        matches!(self, Channel::YearSin | Channel::YearCos)
    }
}

impl From<Sensor> for Channel {
    fn from(s: Sensor) -> Self {
        match s {
            Sensor::Stage => Channel::Stage,
            Sensor::Sonar => Channel::Sonar,
            Sensor::Discharge => Channel::Discharge,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sonar" => Ok(Channel::Sonar),
            "stage" => Ok(Channel::Stage),
            "discharge" => Ok(Channel::Discharge),
            "year_sin" => Ok(Channel::YearSin),
            "year_cos" => Ok(Channel::YearCos),
            other => Err(Error::param(format!("unknown channel `{other}`"))),
        }
    }
}

/// Length unit of elevation columns in an input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Units {
    #[default]
    Meters,
    Feet,
}

impl FromStr for Units {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "m" => Ok(Units::Meters),
            "ft" => Ok(Units::Feet),
            other => Err(Error::param(format!("unknown units `{other}` (expected m or ft)"))),
        }
    }
}

impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Units::Meters => "m",
            Units::Feet => "ft",
        })
    }
}

/// One sensor value. Elevations are meters, discharge is m³/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawReading {
    pub timestamp: DateTime<Utc>,
    pub sensor: Sensor,
    pub value: f64,
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::param(format!("bad timestamp `{s}`: {e}")))
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Validate a reading-file header (`timestamp,stage,sonar[,discharge]`) and
/// return the sensor column order.
pub fn schema_from_header<S: AsRef<str>>(header: &[S]) -> Result<Vec<Sensor>> {
    let cols: Vec<&str> = header.iter().map(|s| s.as_ref().trim()).collect();
    match cols.as_slice() {
        ["timestamp", "stage", "sonar"] => Ok(vec![Sensor::Stage, Sensor::Sonar]),
        ["timestamp", "stage", "sonar", "discharge"] => {
            Ok(vec![Sensor::Stage, Sensor::Sonar, Sensor::Discharge])
        }
        _ => Err(Error::Parse {
            line: 1,
            message: format!(
                "header `{}` is not `timestamp,stage,sonar[,discharge]`",
                cols.join(",")
            ),
        }),
    }
}

/// Read the header of a reading file and return its sensor columns.
pub fn detect_schema(path: &Path) -> Result<Vec<Sensor>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    schema_from_header(&header.iter().collect::<Vec<_>>())
}

/// Parse a reading file whose columns are `timestamp` followed by `schema`.
pub fn parse_csv(path: &Path, schema: &[Sensor], units: Units) -> Result<Vec<RawReading>> {
    let file = std::fs::File::open(path)?;
    parse_readings(file, schema, units)
}

/// Parse readings from any reader. Empty fields are skipped; output is sorted
/// by `(sensor, timestamp)`.
pub fn parse_readings<R: Read>(
    reader: R,
    schema: &[Sensor],
    units: Units,
) -> Result<Vec<RawReading>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let expected: Vec<&str> = std::iter::once("timestamp")
        .chain(schema.iter().map(|s| s.name()))
        .collect();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("header `{}` does not match `{}`", got.join(","), expected.join(",")),
        });
    }

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let ts_field = record.get(0).unwrap_or_default();
        let timestamp = parse_timestamp(ts_field).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        for (col, &sensor) in schema.iter().enumerate() {
            let field = record.get(col + 1).unwrap_or_default().trim();
            if field.is_empty() {
                continue;
            }
            let raw: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("{sensor} value `{field}` is not a number"),
            })?;
            if !raw.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("{sensor} value `{field}` is not finite"),
                });
            }
            let value = match units {
                Units::Meters => raw,
                Units::Feet => raw * sensor.feet_factor(),
            };
            out.push(RawReading { timestamp, sensor, value });
        }
    }
    sort_and_check(&mut out)?;
    Ok(out)
}

fn sort_and_check(readings: &mut [RawReading]) -> Result<()> {
    readings.sort_by_key(|r| (r.sensor, r.timestamp));
    for w in readings.windows(2) {
        if w[0].sensor == w[1].sensor && w[0].timestamp == w[1].timestamp {
            return Err(Error::DuplicateTimestamp {
                sensor: w[0].sensor.to_string(),
                timestamp: format_timestamp(w[0].timestamp),
            });
        }
    }
    Ok(())
}

/// Write readings in the input CSV layout: one row per distinct timestamp,
/// empty fields where a sensor has no reading.
pub fn write_readings_csv<W: Write>(writer: W, schema: &[Sensor], readings: &[RawReading]) -> Result<()> {
    let mut rows: BTreeMap<DateTime<Utc>, Vec<Option<f64>>> = BTreeMap::new();
    for r in readings {
        let Some(col) = schema.iter().position(|&s| s == r.sensor) else {
            continue;
        };
        rows.entry(r.timestamp).or_insert_with(|| vec![None; schema.len()])[col] = Some(r.value);
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(schema.iter().map(|s| s.name().to_string()));
    w.write_record(&header)?;
    for (t, vals) in rows {
        let mut rec = vec![format_timestamp(t)];
        rec.extend(vals.iter().map(|v| v.map(fmt_value).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip decimal representation.
pub(crate) fn fmt_value(v: f64) -> String {
    format!("{v}")
}

/// A manual correction: `offset_m` is added to every reading of `sensor` in
/// the half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasShift {
    pub sensor: Sensor,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub offset_m: f64,
}

/// Operator-supplied bias corrections with per-sensor non-overlapping intervals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BiasShiftTable {
    // sorted by (sensor, start)
    entries: Vec<BiasShift>,
}

impl BiasShiftTable {
    pub fn new(mut entries: Vec<BiasShift>) -> Result<Self> {
        for e in &entries {
            if !e.offset_m.is_finite() {
                return Err(Error::param(format!("bias offset for {} is not finite", e.sensor)));
            }
            if e.start >= e.end {
                return Err(Error::param(format!(
                    "bias interval for {} starting {} is empty",
                    e.sensor,
                    format_timestamp(e.start)
                )));
            }
        }
        entries.sort_by_key(|e| (e.sensor, e.start));
        for w in entries.windows(2) {
            if w[0].sensor == w[1].sensor && w[1].start < w[0].end {
                return Err(Error::param(format!(
                    "overlapping bias intervals for {} at {}",
                    w[0].sensor,
                    format_timestamp(w[1].start)
                )));
            }
        }
        Ok(BiasShiftTable { entries })
    }

    pub fn entries(&self) -> &[BiasShift] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The same intervals with offsets of opposite sign.
    pub fn negated(&self) -> BiasShiftTable {
        BiasShiftTable {
            entries: self
                .entries
                .iter()
                .map(|e| BiasShift { offset_m: -e.offset_m, ..*e })
                .collect(),
        }
    }

    /// Parse a `sensor,start,end,offset_m` CSV.
    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header != ["sensor", "start", "end", "offset_m"] {
            return Err(Error::Parse {
                line: 1,
                message: format!("bias table header `{}` is not `sensor,start,end,offset_m`", header.join(",")),
            });
        }
        let mut entries = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let field_err = |e: Error| Error::Parse { line, message: e.to_string() };
            let sensor: Sensor = record[0].parse().map_err(field_err)?;
            let start = parse_timestamp(&record[1]).map_err(field_err)?;
            let end = parse_timestamp(&record[2]).map_err(field_err)?;
            let offset_m: f64 = record[3].trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("offset `{}` is not a number", &record[3]),
            })?;
            entries.push(BiasShift { sensor, start, end, offset_m });
        }
        BiasShiftTable::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(std::fs::File::open(path)?)
    }

    fn offset_at(&self, sensor: Sensor, t: DateTime<Utc>) -> Option<f64> {
        // last entry with (sensor, start) <= (sensor, t)
        let idx = self.entries.partition_point(|e| (e.sensor, e.start) <= (sensor, t));
        let e = self.entries.get(idx.checked_sub(1)?)?;
        (e.sensor == sensor && t < e.end).then_some(e.offset_m)
    }
}

/// Add the table's offsets to readings inside their intervals. Order is kept.
pub fn apply_bias_shifts(readings: &[RawReading], table: &BiasShiftTable) -> Vec<RawReading> {
    readings
        .iter()
        .map(|r| match table.offset_at(r.sensor, r.timestamp) {
            Some(off) => RawReading { value: r.value + off, ..*r },
            None => *r,
        })
        .collect()
}

/// Multichannel series on a uniform hourly grid. Missing samples are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries {
    origin: DateTime<Utc>,
    len: usize,
    channels: BTreeMap<Channel, Vec<Option<f64>>>,
}

impl UniformSeries {
    pub fn new(origin: DateTime<Utc>, len: usize) -> Self {
        UniformSeries { origin, len, channels: BTreeMap::new() }
    }

    pub fn origin(&self) -> DateTime<Utc> {
        self.origin
    }

    pub fn step(&self) -> Duration {
        Duration::seconds(STEP_SECONDS)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.origin + Duration::seconds(STEP_SECONDS * index as i64)
    }

    /// Add or replace a channel. Values must be finite and the length must match.
    pub fn set_channel(&mut self, channel: Channel, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.len {
            return Err(Error::ShapeMismatch {
                expected: format!("{} samples", self.len),
                actual: format!("{} samples for {channel}", values.len()),
            });
        }
        if let Some(i) = values.iter().position(|v| v.is_some_and(|x| !x.is_finite())) {
            return Err(Error::NonFinite(format!("{channel} at index {i}")));
        }
        self.channels.insert(channel, values);
        Ok(())
    }

    pub fn channel(&self, channel: Channel) -> Option<&[Option<f64>]> {
        self.channels.get(&channel).map(Vec::as_slice)
    }

    pub fn require(&self, channel: Channel) -> Result<&[Option<f64>]> {
        self.channel(channel)
            .ok_or_else(|| Error::param(format!("series has no {channel} channel")))
    }

    pub fn channel_names(&self) -> Vec<Channel> {
        self.channels.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Channel, &[Option<f64>])> {
        self.channels.iter().map(|(c, v)| (*c, v.as_slice()))
    }

    /// `true` where the channel has no value.
    pub fn gap_mask(&self, channel: Channel) -> Option<Vec<bool>> {
        self.channel(channel).map(|v| v.iter().map(Option::is_none).collect())
    }

    /// Copy of the index range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> UniformSeries {
        assert!(start <= end && end <= self.len);
        UniformSeries {
            origin: self.timestamp(start),
            len: end - start,
            channels: self
                .channels
                .iter()
                .map(|(c, v)| (*c, v[start..end].to_vec()))
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let names = self.channel_names();
        let mut header = vec!["timestamp".to_string()];
        header.extend(names.iter().map(|c| c.name().to_string()));
        w.write_record(&header)?;
        for i in 0..self.len {
            let mut rec = vec![format_timestamp(self.timestamp(i))];
            for c in &names {
                rec.push(self.channels[c][i].map(fmt_value).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }

    /// Read a series written by [`UniformSeries::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<UniformSeries> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.get(0).map(str::trim) != Some("timestamp") {
            return Err(Error::Parse { line: 1, message: "first column must be `timestamp`".into() });
        }
        let names: Vec<Channel> = header
            .iter()
            .skip(1)
            .map(|h| h.parse())
            .collect::<Result<_>>()
            .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
        let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
        let mut origin = None;
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let t = parse_timestamp(&record[0]).map_err(|e| Error::Parse { line, message: e.to_string() })?;
            let o = *origin.get_or_insert(t);
            if t != o + Duration::seconds(STEP_SECONDS * row as i64) {
                return Err(Error::Parse { line, message: "timestamps are not on a uniform hourly grid".into() });
            }
            for (k, col) in cols.iter_mut().enumerate() {
                let f = record.get(k + 1).unwrap_or_default().trim();
                col.push(if f.is_empty() {
                    None
                } else {
                    Some(f.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("`{f}` is not a number"),
                    })?)
                });
            }
        }
        let len = cols.first().map_or(0, Vec::len);
        let origin = origin.ok_or_else(|| Error::Parse { line: 2, message: "series has no rows".into() })?;
        let mut s = UniformSeries::new(origin, len);
        for (c, v) in names.into_iter().zip(cols) {
            s.set_channel(c, v)?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<UniformSeries> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Result of [`regrid_hourly`].
#[derive(Debug, Clone)]
pub struct Regridded {
    pub series: UniformSeries,
    /// Readings that fell outside `[origin, origin + n_steps·1h)`.
    pub out_of_range: usize,
}

/// Average readings into half-open hourly buckets `[origin + k·1h, origin + (k+1)·1h)`.
///
/// Every sensor in `sensors` gets a channel of length `n_steps`; buckets with
/// no reading are gaps.
pub fn regrid_hourly(
    readings: &[RawReading],
    sensors: &[Sensor],
    origin: DateTime<Utc>,
    n_steps: usize,
) -> Result<Regridded> {
    if n_steps == 0 {
        return Err(Error::param("regrid needs at least one step"));
    }
    let mut sums: BTreeMap<Sensor, Vec<(f64, u32)>> =
        sensors.iter().map(|&s| (s, vec![(0.0, 0); n_steps])).collect();
    let mut out_of_range = 0;
    for r in readings {
        let Some(acc) = sums.get_mut(&r.sensor) else {
            continue;
        };
        let secs = (r.timestamp - origin).num_seconds();
        let bucket = secs.div_euclid(STEP_SECONDS);
        if secs < 0 || bucket >= n_steps as i64 {
            out_of_range += 1;
            continue;
        }
        let slot = &mut acc[bucket as usize];
        slot.0 += r.value;
        slot.1 += 1;
    }
    let mut series = UniformSeries::new(origin, n_steps);
    for (sensor, acc) in sums {
        let values = acc
            .into_iter()
            .map(|(s, n)| (n > 0).then(|| s / n as f64))
            .collect();
        series.set_channel(sensor.into(), values)?;
    }
    Ok(Regridded { series, out_of_range })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn t(h: i64, s: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2017, 6, 1, 0, 0, 0).unwrap() + Duration::seconds(h * 3600 + s)
    }

    fn reading(sensor: Sensor, t: DateTime<Utc>, value: f64) -> RawReading {
        RawReading { timestamp: t, sensor, value }
    }

    const SCHEMA: [Sensor; 2] = [Sensor::Stage, Sensor::Sonar];

    #[test]
    fn parses_one_row_into_two_readings() {
        let csv = "timestamp,stage,sonar\n2017-06-01T00:00:00Z,35.1,33.9\n";
        let r = parse_readings(csv.as_bytes(), &SCHEMA, Units::Meters).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0], reading(Sensor::Stage, t(0, 0), 35.1));
        assert_eq!(r[1], reading(Sensor::Sonar, t(0, 0), 33.9));
    }

    #[test]
    fn header_only_is_empty() {
        let r = parse_readings("timestamp,stage,sonar\n".as_bytes(), &SCHEMA, Units::Meters).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn nan_value_names_line() {
        let csv = "timestamp,stage,sonar\n2017-06-01T00:00:00Z,35.1,33.9\n2017-06-01T01:00:00Z,NaN,33.9\n";
        match parse_readings(csv.as_bytes(), &SCHEMA, Units::Meters) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_timestamp_and_value_name_line() {
        let csv = "timestamp,stage,sonar\nyesterday,1,2\n";
        assert!(matches!(
            parse_readings(csv.as_bytes(), &SCHEMA, Units::Meters),
            Err(Error::Parse { line: 2, .. })
        ));
        let csv = "timestamp,stage,sonar\n2017-06-01T00:00:00Z,1,abc\n";
        assert!(matches!(
            parse_readings(csv.as_bytes(), &SCHEMA, Units::Meters),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_timestamp_is_rejected() {
        let csv = "timestamp,stage,sonar\n2017-06-01T01:00:00Z,1,2\n2017-06-01T00:00:00Z,1,2\n2017-06-01T01:00:00Z,1,\n";
        match parse_readings(csv.as_bytes(), &SCHEMA, Units::Meters) {
            Err(Error::DuplicateTimestamp { timestamp, sensor }) => {
                assert_eq!(timestamp, "2017-06-01T01:00:00Z");
                assert_eq!(sensor, "stage");
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn empty_fields_are_skipped_and_feet_converted() {
        let csv = "timestamp,stage,sonar,discharge\n2017-06-01T00:00:00Z,10,,100\n";
        let schema = [Sensor::Stage, Sensor::Sonar, Sensor::Discharge];
        let r = parse_readings(csv.as_bytes(), &schema, Units::Feet).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r[0].value - 3.048).abs() < 1e-12);
        assert!((r[1].value - 100.0 * 0.3048f64.powi(3)).abs() < 1e-9);
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(parse_readings("time,stage,sonar\n".as_bytes(), &SCHEMA, Units::Meters).is_err());
        assert!(schema_from_header(&["timestamp", "sonar", "stage"]).is_err());
    }

    #[test]
    fn bias_shift_half_open_interval() {
        let table = BiasShiftTable::new(vec![BiasShift {
            sensor: Sensor::Sonar,
            start: t(0, 0),
            end: t(2, 0),
            offset_m: -0.5,
        }])
        .unwrap();
        let input = vec![
            reading(Sensor::Sonar, t(1, 0), 10.0),
            reading(Sensor::Sonar, t(2, 0), 10.0),
            reading(Sensor::Stage, t(1, 0), 10.0),
        ];
        let out = apply_bias_shifts(&input, &table);
        assert_eq!(out[0].value, 9.5);
        assert_eq!(out[1].value, 10.0);
        assert_eq!(out[2].value, 10.0);
        assert_eq!(apply_bias_shifts(&input, &BiasShiftTable::default()), input);
    }

    #[test]
    fn bias_table_validation() {
        let a = BiasShift { sensor: Sensor::Stage, start: t(0, 0), end: t(5, 0), offset_m: 1.0 };
        let b = BiasShift { start: t(4, 0), end: t(8, 0), ..a };
        assert!(BiasShiftTable::new(vec![a, b]).is_err());
        let c = BiasShift { sensor: Sensor::Sonar, ..b };
        assert!(BiasShiftTable::new(vec![a, c]).is_ok());
        let nan = BiasShift { offset_m: f64::NAN, ..a };
        assert!(BiasShiftTable::new(vec![nan]).is_err());
        let csv = "sensor,start,end,offset_m\nsonar,2017-06-01T00:00:00Z,2017-06-02T00:00:00Z,-0.25\n";
        let parsed = BiasShiftTable::parse(csv.as_bytes()).unwrap();
        assert_eq!(parsed.entries()[0].offset_m, -0.25);
    }

    #[test]
    fn regrid_means_and_gaps() {
        let rs = vec![
            reading(Sensor::Stage, t(0, 10), 35.0),
            reading(Sensor::Stage, t(0, 20), 35.2),
            reading(Sensor::Stage, t(2, 0), 1.0),
        ];
        let g = regrid_hourly(&rs, &SCHEMA, t(0, 0), 4).unwrap();
        let stage = g.series.channel(Channel::Stage).unwrap();
        assert!((stage[0].unwrap() - 35.1).abs() < 1e-12);
        assert_eq!(stage[1], None);
        assert_eq!(stage[3], None);
        assert_eq!(g.series.channel(Channel::Sonar).unwrap().len(), 4);
        assert_eq!(g.out_of_range, 0);
    }

    #[test]
    fn regrid_bucket_boundaries() {
        let rs = vec![
            reading(Sensor::Sonar, t(0, 3599), 1.0),
            reading(Sensor::Sonar, t(1, 0), 2.0),
            reading(Sensor::Sonar, t(0, -1), 3.0),
            reading(Sensor::Sonar, t(3, 0), 4.0),
        ];
        let g = regrid_hourly(&rs, &[Sensor::Sonar], t(0, 0), 3).unwrap();
        let s = g.series.channel(Channel::Sonar).unwrap();
        assert_eq!(s, &[Some(1.0), Some(2.0), None]);
        assert_eq!(g.out_of_range, 2);
        assert!(regrid_hourly(&rs, &[Sensor::Sonar], t(0, 0), 0).is_err());
    }

    #[test]
    fn series_csv_round_trip() {
        let mut s = UniformSeries::new(t(0, 0), 3);
        s.set_channel(Channel::Sonar, vec![Some(1.25), None, Some(-3.5)]).unwrap();
        s.set_channel(Channel::Stage, vec![Some(0.1), Some(0.2), None]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = UniformSeries::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }

    /// Independent bucketing: scan every reading per bucket.
    fn brute_force_buckets(rs: &[RawReading], sensor: Sensor, n: usize) -> Vec<Option<f64>> {
        (0..n)
            .map(|k| {
                let lo = t(k as i64, 0);
                let hi = t(k as i64 + 1, 0);
                let vals: Vec<f64> = rs
                    .iter()
                    .filter(|r| r.sensor == sensor && r.timestamp >= lo && r.timestamp < hi)
                    .map(|r| r.value)
                    .collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn regrid_matches_brute_force(
            raw in prop::collection::vec((0i64..30 * 3600, -50.0f64..50.0, any::<bool>()), 0..200),
            n in 1usize..30,
        ) {
            let mut rs: Vec<RawReading> = raw
                .iter()
                .map(|&(s, v, sonar)| reading(if sonar { Sensor::Sonar } else { Sensor::Stage }, t(0, s), v))
                .collect();
            rs.sort_by_key(|r| (r.sensor, r.timestamp));
            rs.dedup_by_key(|r| (r.sensor, r.timestamp));
            let g = regrid_hourly(&rs, &SCHEMA, t(0, 0), n).unwrap();
            for sensor in SCHEMA {
                let got = g.series.channel(sensor.into()).unwrap();
                prop_assert_eq!(got.len(), n);
                prop_assert_eq!(got.to_vec(), brute_force_buckets(&rs, sensor, n));
            }
        }

        // Offsets and values on a 1/64 grid keep every sum exact, so shifting
        // forth and back must restore the input bit for bit.
        #[test]
        fn negated_table_restores_input(
            vals in prop::collection::vec((-3200i32..3200, 0i64..48, any::<bool>()), 0..100),
            offs in prop::collection::vec((-640i32..640, any::<bool>()), 1..4),
        ) {
            let rs: Vec<RawReading> = vals
                .iter()
                .map(|&(v, h, s)| reading(if s { Sensor::Sonar } else { Sensor::Stage }, t(h, 0), v as f64 / 64.0))
                .collect();
            let entries: Vec<BiasShift> = offs
                .iter()
                .enumerate()
                .map(|(k, &(o, s))| BiasShift {
                    sensor: if s { Sensor::Sonar } else { Sensor::Stage },
                    start: t(12 * k as i64, 0),
                    end: t(12 * k as i64 + 10, 0),
                    offset_m: o as f64 / 64.0,
                })
                .collect();
            let table = BiasShiftTable::new(entries).unwrap();
            let there = apply_bias_shifts(&rs, &table);
            let back = apply_bias_shifts(&there, &table.negated());
            for (a, b) in back.iter().zip(&rs) {
                prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
                prop_assert_eq!(a.timestamp, b.timestamp);
            }
        }
    }
}
