//! Measurement data model: channels, channel sets, the channel CSV layout,
//! validation reports and time-window slicing.
//!
//! Channel CSV layout (one column per channel after the label column):
//!
//! ```text
//! id,<id>,...
//! kind,<VPHM|VPHA|IPHM|IPHA|P|Q|PF|POW>,...
//! rate_sps,<rate>,...
//! substation,<name>,...
//! location,<x;y or blank>,...
//! <ISO-8601 UTC time of this row>,<v>,...
//! ,<v>,...
//! ```
//!
//! Only the first sample row carries a timestamp; later rows may leave the
//! first cell blank. Empty cells are NaN. Columns with a rate lower than the
//! file's highest rate hold `round(rows * rate / max_rate)` samples and must
//! leave the remaining cells empty. Lines starting with `#` before the header
//! carry set-level metadata as `# key=value`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Measured quantity carried by a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ChannelKind {
    /// Voltage phasor magnitude (per-unit).
    Vphm,
    /// Voltage phasor angle (radians, unwrapped).
    Vpha,
    /// Current phasor magnitude (per-unit).
    Iphm,
    /// Current phasor angle (radians, unwrapped).
    Ipha,
    /// Active power (MW).
    P,
    /// Reactive power (MVAr).
    Q,
    /// Power factor in [-1, 1].
    Pf,
    /// Point-on-wave waveform.
    Pow,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 8] = [
        ChannelKind::Vphm,
        ChannelKind::Vpha,
        ChannelKind::Iphm,
        ChannelKind::Ipha,
        ChannelKind::P,
        ChannelKind::Q,
        ChannelKind::Pf,
        ChannelKind::Pow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::Vphm => "VPHM",
            ChannelKind::Vpha => "VPHA",
            ChannelKind::Iphm => "IPHM",
            ChannelKind::Ipha => "IPHA",
            ChannelKind::P => "P",
            ChannelKind::Q => "Q",
            ChannelKind::Pf => "PF",
            ChannelKind::Pow => "POW",
        }
    }

    pub fn is_voltage(self) -> bool {
        matches!(self, ChannelKind::Vphm | ChannelKind::Vpha)
    }

    pub fn is_current(self) -> bool {
        matches!(self, ChannelKind::Iphm | ChannelKind::Ipha)
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        ChannelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::format("kind", format!("unknown channel kind `{t}`")))
    }
}

/// One uniformly sampled measurement stream.
///
/// Gaps are explicit NaN samples. Instances are immutable once built;
/// operations that transform a channel return a new one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasorChannel {
    id: String,
    substation: String,
    kind: ChannelKind,
    rate_sps: f64,
    t0: f64,
    values: Vec<f64>,
    location: Option<(f64, f64)>,
}

impl PhasorChannel {
    pub fn new(
        id: impl Into<String>,
        substation: impl Into<String>,
        kind: ChannelKind,
        rate_sps: f64,
        t0: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let id = id.into();
        if !(rate_sps.is_finite() && rate_sps > 0.0) {
            return Err(Error::param(
                "rate_sps",
                format!("channel `{id}`: rate must be positive, got {rate_sps}"),
            ));
        }
        if !t0.is_finite() {
            return Err(Error::param("t0", format!("channel `{id}`: t0 is not finite")));
        }
        if kind == ChannelKind::Pf {
            if let Some(v) = values.iter().find(|v| !v.is_nan() && !(-1.0..=1.0).contains(*v)) {
                return Err(Error::Data(format!(
                    "channel `{id}`: power factor {v} outside [-1, 1]"
                )));
            }
        }
        Ok(Self {
            id,
            substation: substation.into(),
            kind,
            rate_sps,
            t0,
            values,
            location: None,
        })
    }

    pub fn with_location(mut self, location: Option<(f64, f64)>) -> Self {
        self.location = location;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Same metadata, new samples and start time.
    pub(crate) fn derive(&self, t0: f64, values: Vec<f64>) -> Self {
        Self {
            id: self.id.clone(),
            substation: self.substation.clone(),
            kind: self.kind,
            rate_sps: self.rate_sps,
            t0,
            values,
            location: self.location,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn substation(&self) -> &str {
        &self.substation
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn rate_sps(&self) -> f64 {
        self.rate_sps
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn location(&self) -> Option<(f64, f64)> {
        self.location
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.rate_sps
    }

    /// Time of sample `i` in UTC seconds.
    pub fn time_of(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.rate_sps
    }

    pub fn has_nan(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    pub(crate) fn require_finite(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| v.is_nan()) {
            return Err(Error::Data(format!(
                "channel `{}` contains NaN (first at sample {i})",
                self.id
            )));
        }
        Ok(())
    }
}

/// Collection of channels keyed by unique id, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    channels: Vec<PhasorChannel>,
    pub metadata: BTreeMap<String, String>,
}

impl ChannelSet {
    pub fn new(channels: Vec<PhasorChannel>) -> Result<Self> {
        let mut set = ChannelSet::default();
        for ch in channels {
            set.push(ch)?;
        }
        Ok(set)
    }

    /// Adds a channel, enforcing id uniqueness and a single location per substation.
    pub fn push(&mut self, ch: PhasorChannel) -> Result<()> {
        if self.get(ch.id()).is_some() {
            return Err(Error::Data(format!("duplicate channel id `{}`", ch.id())));
        }
        if let Some(other) = self.channels.iter().find(|c| c.substation() == ch.substation()) {
            if other.location() != ch.location() {
                return Err(Error::Data(format!(
                    "substation `{}` has conflicting locations on channels `{}` and `{}`",
                    ch.substation(),
                    other.id(),
                    ch.id()
                )));
            }
        }
        self.channels.push(ch);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&PhasorChannel> {
        self.channels.iter().find(|c| c.id() == id)
    }

    pub fn channels(&self) -> &[PhasorChannel] {
        &self.channels
    }

    pub fn ids(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.id()).collect()
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PhasorChannel> {
        self.channels.iter()
    }

    pub fn of_kind(&self, kind: ChannelKind) -> impl Iterator<Item = &PhasorChannel> {
        self.channels.iter().filter(move |c| c.kind() == kind)
    }

    /// New set holding only the channels accepted by `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&PhasorChannel) -> bool) -> ChannelSet {
        ChannelSet {
            channels: self.channels.iter().filter(|c| keep(c)).cloned().collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// Splits the set by sampling rate (ascending).
    pub fn by_rate(&self) -> Vec<(f64, ChannelSet)> {
        let mut rates: Vec<f64> = self.channels.iter().map(|c| c.rate_sps()).collect();
        rates.sort_by(f64::total_cmp);
        rates.dedup();
        rates
            .into_iter()
            .map(|r| (r, self.filter(|c| c.rate_sps() == r)))
            .collect()
    }
}

impl IntoIterator for ChannelSet {
    type Item = PhasorChannel;
    type IntoIter = std::vec::IntoIter<PhasorChannel>;

    fn into_iter(self) -> Self::IntoIter {
        self.channels.into_iter()
    }
}

/// Supported channel file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
}

pub fn load_channels(path: impl AsRef<Path>, format: Format) -> Result<ChannelSet> {
    match format {
        Format::Csv => {
            let text = fs::read_to_string(path.as_ref())?;
            parse_channels_csv(&text)
        }
    }
}

pub fn save_channels(set: &ChannelSet, path: impl AsRef<Path>, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let text = channels_to_csv(set)?;
            fs::write(path.as_ref(), text)?;
            Ok(())
        }
    }
}

const HEADER_LABELS: [&str; 5] = ["id", "kind", "rate_sps", "substation", "location"];

pub fn parse_timestamp(s: &str) -> Result<f64> {
    let dt = DateTime::parse_from_rfc3339(s.trim())
        .map_err(|e| Error::format("timestamp", format!("`{}`: {e}", s.trim())))?;
    Ok(dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) * 1e-9)
}

pub fn format_timestamp(t: f64) -> String {
    let secs = t.floor();
    let mut nanos = ((t - secs) * 1e9).round() as i64;
    let mut secs = secs as i64;
    if nanos >= 1_000_000_000 {
        secs += 1;
        nanos -= 1_000_000_000;
    }
    DateTime::<Utc>::from_timestamp(secs, nanos as u32)
        .map(|d| d.to_rfc3339_opts(SecondsFormat::AutoSi, true))
        .unwrap_or_else(|| format!("{t}"))
}

fn parse_location(cell: &str, id: &str) -> Result<Option<(f64, f64)>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let (x, y) = cell
        .split_once(';')
        .ok_or_else(|| Error::format("location", format!("column `{id}`: expected `x;y`, got `{cell}`")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::format("location", format!("column `{id}`: bad coordinate `{s}`")))
    };
    Ok(Some((parse(x)?, parse(y)?)))
}

/// Parses the channel CSV layout described in the module docs.
pub fn parse_channels_csv(text: &str) -> Result<ChannelSet> {
    let mut metadata = BTreeMap::new();
    let mut body_start = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                metadata.insert(k.trim().to_string(), v.trim().to_string());
            }
            body_start += line.len();
        } else if trimmed.is_empty() && body_start == 0 {
            body_start += line.len();
        } else {
            break;
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text[body_start..].as_bytes());
    let mut records = reader.records();

    let mut header: Vec<Vec<String>> = Vec::with_capacity(5);
    for label in HEADER_LABELS {
        let rec = records
            .next()
            .ok_or_else(|| Error::format(label, "missing header row"))??;
        let first = rec.get(0).unwrap_or("").trim();
        if first != label {
            return Err(Error::format(
                label,
                format!("header row should start with `{label}`, found `{first}`"),
            ));
        }
        header.push(rec.iter().skip(1).map(|s| s.to_string()).collect());
    }
    let ids = &header[0];
    let n_cols = ids.len();
    if n_cols == 0 {
        return Err(Error::format("id", "no channel columns"));
    }
    for (row, label) in header.iter().zip(HEADER_LABELS) {
        if row.len() != n_cols {
            return Err(Error::format(
                label,
                format!("expected {n_cols} cells, found {}", row.len()),
            ));
        }
    }

    let mut seen = HashMap::new();
    let mut dups = Vec::new();
    for id in ids {
        if id.trim().is_empty() {
            return Err(Error::format("id", "empty channel id"));
        }
        *seen.entry(id.as_str()).or_insert(0) += 1;
        if seen[id.as_str()] == 2 {
            dups.push(id.clone());
        }
    }
    if !dups.is_empty() {
        return Err(Error::format("id", format!("duplicate column id(s): {}", dups.join(", "))));
    }

    let kinds = header[1]
        .iter()
        .map(|s| s.parse::<ChannelKind>())
        .collect::<Result<Vec<_>>>()?;
    let rates = header[2]
        .iter()
        .zip(ids)
        .map(|(s, id)| {
            let r: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::format("rate_sps", format!("column `{id}`: bad rate `{s}`")))?;
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::format("rate_sps", format!("column `{id}`: rate must be positive")));
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let locations = header[4]
        .iter()
        .zip(ids)
        .map(|(s, id)| parse_location(s, id))
        .collect::<Result<Vec<_>>>()?;

    let max_rate = rates.iter().copied().fold(0.0, f64::max);
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n_cols];
    let mut t0 = None;
    let mut last_time = f64::NEG_INFINITY;
    let mut n_rows = 0usize;
    for rec in records {
        let rec = rec?;
        let row = n_rows + 6;
        let stamp = rec.get(0).unwrap_or("").trim();
        if !stamp.is_empty() {
            let t = parse_timestamp(stamp)?;
            if t <= last_time {
                return Err(Error::Data(format!(
                    "non-monotonic timestamp `{stamp}` on line {row}"
                )));
            }
            last_time = t;
            if t0.is_none() {
                t0 = Some(t);
            }
        } else if n_rows == 0 {
            return Err(Error::format("timestamp", "first sample row must carry a timestamp"));
        }
        if rec.len() > n_cols + 1 {
            return Err(Error::format("samples", format!("line {row}: too many cells")));
        }
        for (c, col) in columns.iter_mut().enumerate() {
            let cell = rec.get(c + 1).unwrap_or("").trim();
            let v = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| {
                    Error::format("samples", format!("line {row}, column `{}`: bad value `{cell}`", ids[c]))
                })?
            };
            col.push(v);
        }
        n_rows += 1;
    }
    let t0 = t0.unwrap_or(0.0);

    let mut set = ChannelSet {
        channels: Vec::with_capacity(n_cols),
        metadata,
    };
    for (c, mut values) in columns.into_iter().enumerate() {
        let expected = if rates[c] == max_rate {
            n_rows
        } else {
            (n_rows as f64 * rates[c] / max_rate).round() as usize
        };
        if let Some(extra) = values[expected..].iter().position(|v| !v.is_nan()) {
            return Err(Error::Data(format!(
                "column `{}` at {} sps holds a sample beyond its {} expected samples (row {})",
                ids[c],
                rates[c],
                expected,
                expected + extra + 6
            )));
        }
        values.truncate(expected);
        let ch = PhasorChannel::new(ids[c].clone(), header[3][c].trim(), kinds[c], rates[c], t0, values)?
            .with_location(locations[c]);
        set.push(ch)?;
    }
    Ok(set)
}

/// Renders a channel set in the channel CSV layout.
///
/// All channels must share `t0`, and each channel's sample count must match
/// the row count scaled by its rate.
pub fn channels_to_csv(set: &ChannelSet) -> Result<String> {
    if set.is_empty() {
        return Err(Error::param("channels", "cannot write an empty channel set"));
    }
    let t0 = set.channels[0].t0();
    let max_rate = set.channels.iter().map(|c| c.rate_sps()).fold(0.0, f64::max);
    let n_rows = set
        .channels
        .iter()
        .filter(|c| c.rate_sps() == max_rate)
        .map(|c| c.len())
        .max()
        .unwrap_or(0);
    for ch in &set.channels {
        if ch.t0() != t0 {
            return Err(Error::Data(format!(
                "channel `{}` starts at {} but the file starts at {t0}",
                ch.id(),
                ch.t0()
            )));
        }
        let expected = if ch.rate_sps() == max_rate {
            n_rows
        } else {
            (n_rows as f64 * ch.rate_sps() / max_rate).round() as usize
        };
        if ch.len() != expected {
            return Err(Error::Data(format!(
                "channel `{}` has {} samples; the shared layout needs {expected}",
                ch.id(),
                ch.len()
            )));
        }
    }

    let mut out = String::new();
    for (k, v) in &set.metadata {
        out.push_str(&format!("# {k}={v}\n"));
    }
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    let mut row = |label: &str, f: &dyn Fn(&PhasorChannel) -> String| -> Result<()> {
        let mut rec = vec![label.to_string()];
        rec.extend(set.channels.iter().map(f));
        w.write_record(&rec)?;
        Ok(())
    };
    row("id", &|c| c.id().to_string())?;
    row("kind", &|c| c.kind().to_string())?;
    row("rate_sps", &|c| c.rate_sps().to_string())?;
    row("substation", &|c| c.substation().to_string())?;
    row("location", &|c| match c.location() {
        Some((x, y)) => format!("{x};{y}"),
        None => String::new(),
    })?;
    let mut rec: Vec<String> = Vec::with_capacity(set.len() + 1);
    for r in 0..n_rows {
        rec.clear();
        rec.push(if r == 0 { format_timestamp(t0) } else { String::new() });
        for ch in &set.channels {
            rec.push(match ch.values().get(r) {
                Some(v) if !v.is_nan() => v.to_string(),
                _ => String::new(),
            });
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
    Ok(out)
}

/// Summary of sample quality for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub id: String,
    pub samples: usize,
    /// Number of maximal runs of consecutive NaN samples.
    pub gaps: usize,
    pub nan_count: usize,
    pub nan_fraction: f64,
    pub duration_s: f64,
    pub warnings: Vec<String>,
}

pub fn validate_channel(ch: &PhasorChannel) -> ValidationReport {
    let mut gaps = 0;
    let mut nan_count = 0;
    let mut in_gap = false;
    for v in ch.values() {
        if v.is_nan() {
            nan_count += 1;
            if !in_gap {
                gaps += 1;
                in_gap = true;
            }
        } else {
            in_gap = false;
        }
    }
    let mut warnings = Vec::new();
    if ch.is_empty() {
        warnings.push("channel is empty".to_string());
    }
    if nan_count > 0 && nan_count == ch.len() {
        warnings.push("channel holds no valid samples".to_string());
    }
    ValidationReport {
        id: ch.id().to_string(),
        samples: ch.len(),
        gaps,
        nan_count,
        nan_fraction: if ch.is_empty() { 0.0 } else { nan_count as f64 / ch.len() as f64 },
        duration_s: ch.duration_s(),
        warnings,
    }
}

/// Cuts `[t_start, t_end)` out of a channel.
///
/// Both bounds snap to the nearest sample instant; the returned channel starts
/// at the snapped start time.
pub fn slice_window(ch: &PhasorChannel, t_start: f64, t_end: f64) -> Result<PhasorChannel> {
    if !(t_start < t_end) {
        return Err(Error::Range(format!(
            "window start {t_start} is not before end {t_end}"
        )));
    }
    let i0 = ((t_start - ch.t0()) * ch.rate_sps()).round();
    let i1 = ((t_end - ch.t0()) * ch.rate_sps()).round();
    if i0 < 0.0 || i1 > ch.len() as f64 {
        return Err(Error::Range(format!(
            "window [{t_start}, {t_end}) lies outside channel `{}` span [{}, {})",
            ch.id(),
            ch.t0(),
            ch.t0() + ch.duration_s()
        )));
    }
    let (i0, i1) = (i0 as usize, i1 as usize);
    if i0 >= i1 {
        return Err(Error::Range(format!(
            "window [{t_start}, {t_end}) is shorter than one sample"
        )));
    }
    Ok(ch.derive(ch.time_of(i0), ch.values()[i0..i1].to_vec()))
}
