//! Stream ingestion, streaming standardization and checkpoint persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsWindow;
use crate::error::{Error, Result};
use crate::fit::{FitState, Trace};
use crate::model::{MixtureState, Observation};
use crate::sgd::LearnRateSchedule;

/// Input encoding of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamFormat {
    /// Header row required; columns selected by name.
    Csv,
    /// One object per line: `{"y": 0|1, "x": [..]}`.
    Jsonl,
}

/// Which columns form the outcome and the features.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub y_col: String,
    /// `None` selects every column other than `y_col`, in file order.
    pub x_cols: Option<Vec<String>>,
    /// Prepend a constant 1 to every feature vector.
    pub intercept: bool,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            y_col: "y".into(),
            x_cols: None,
            intercept: true,
        }
    }
}

enum Source {
    Csv {
        reader: csv::Reader<Box<dyn Read>>,
        y_idx: usize,
        x_idx: Vec<usize>,
        record: csv::ByteRecord,
    },
    Jsonl {
        lines: std::io::Lines<BufReader<Box<dyn Read>>>,
    },
}

/// Sequential iterator over the well-formed rows of a stream.
///
/// Malformed rows (unparsable numbers, missing fields, outcome outside
/// `{0, 1}`) are skipped and counted; see [`skipped`](Self::skipped).
pub struct ObservationStream {
    source: Source,
    intercept: bool,
    yielded: u64,
    skipped: u64,
    features: usize,
}

/// Opens `path` as an observation stream.
pub fn open_stream(
    path: &Path,
    format: StreamFormat,
    columns: &ColumnSpec,
) -> Result<ObservationStream> {
    let file = File::open(path)?;
    ObservationStream::from_reader(Box::new(file), format, columns)
}

fn parse_number(bytes: &[u8]) -> Option<f64> {
    let v: f64 = std::str::from_utf8(bytes).ok()?.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

fn parse_outcome(v: f64) -> Option<u8> {
    if v == 0.0 {
        Some(0)
    } else if v == 1.0 {
        Some(1)
    } else {
        None
    }
}

impl ObservationStream {
    pub fn from_reader(
        reader: Box<dyn Read>,
        format: StreamFormat,
        columns: &ColumnSpec,
    ) -> Result<Self> {
        let (source, features) = match format {
            StreamFormat::Csv => {
                let mut reader = csv::ReaderBuilder::new()
                    .has_headers(true)
                    .flexible(true)
                    .trim(csv::Trim::All)
                    .from_reader(reader);
                let header = reader.byte_headers()?.clone();
                if header.is_empty() || header.iter().all(|h| h.is_empty()) {
                    return Err(Error::Config("stream has no header row".into()));
                }
                let names: Vec<String> = header
                    .iter()
                    .map(|h| String::from_utf8_lossy(h).into_owned())
                    .collect();
                let find = |name: &str| {
                    names
                        .iter()
                        .position(|n| n == name)
                        .ok_or_else(|| Error::Config(format!("column '{name}' not in header")))
                };
                let y_idx = find(&columns.y_col)?;
                let x_idx = match &columns.x_cols {
                    Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?,
                    None => (0..names.len()).filter(|&i| i != y_idx).collect(),
                };
                if x_idx.is_empty() && !columns.intercept {
                    return Err(Error::Config("no feature columns selected".into()));
                }
                let features = x_idx.len();
                (
                    Source::Csv {
                        reader,
                        y_idx,
                        x_idx,
                        record: csv::ByteRecord::new(),
                    },
                    Some(features),
                )
            }
            StreamFormat::Jsonl => (
                Source::Jsonl {
                    lines: BufReader::new(reader).lines(),
                },
                None,
            ),
        };
        Ok(Self {
            source,
            intercept: columns.intercept,
            yielded: 0,
            skipped: 0,
            features: features.unwrap_or(0),
        })
    }

    /// Rows rejected as malformed so far.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Observations produced so far.
    pub fn yielded(&self) -> u64 {
        self.yielded
    }

    /// Feature count per observation including the intercept, when known
    /// before reading (CSV only).
    pub fn dimension(&self) -> Option<usize> {
        match self.source {
            Source::Csv { .. } => Some(self.features + usize::from(self.intercept)),
            Source::Jsonl { .. } => None,
        }
    }

    fn build(&mut self, y: u8, raw: Vec<f64>) -> Observation {
        let mut x = Vec::with_capacity(raw.len() + 1);
        if self.intercept {
            x.push(1.0);
        }
        x.extend(raw);
        self.yielded += 1;
        Observation::new(y, x, self.yielded).expect("row validated during parsing")
    }

    fn parse_json(line: &str) -> Option<(u8, Vec<f64>)> {
        let v: serde_json::Value = serde_json::from_str(line).ok()?;
        let y = parse_outcome(v.get("y")?.as_f64()?)?;
        let x = v
            .get("x")?
            .as_array()?
            .iter()
            .map(|e| e.as_f64().filter(|f| f.is_finite()))
            .collect::<Option<Vec<f64>>>()?;
        Some((y, x))
    }
}

impl Iterator for ObservationStream {
    type Item = Result<Observation>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let parsed = match &mut self.source {
                Source::Csv {
                    reader,
                    y_idx,
                    x_idx,
                    record,
                } => match reader.read_byte_record(record) {
                    Ok(false) => return None,
                    Ok(true) => {
                        let y = record
                            .get(*y_idx)
                            .and_then(parse_number)
                            .and_then(parse_outcome);
                        let x = x_idx
                            .iter()
                            .map(|&i| record.get(i).and_then(parse_number))
                            .collect::<Option<Vec<f64>>>();
                        y.zip(x)
                    }
                    Err(e) if e.is_io_error() => return Some(Err(e.into())),
                    Err(_) => None,
                },
                Source::Jsonl { lines } => match lines.next()? {
                    Err(e) => return Some(Err(e.into())),
                    Ok(line) if line.trim().is_empty() => continue,
                    Ok(line) => Self::parse_json(&line),
                },
            };
            match parsed {
                Some((y, x)) if !x.is_empty() || self.intercept => {
                    return Some(Ok(self.build(y, x)))
                }
                _ => self.skipped += 1,
            }
        }
    }
}

/// Lower bound applied to the running standard deviation.
pub const SD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }
}

/// Streaming z-scores computed from the observations strictly before the
/// current one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    enabled: Vec<bool>,
    stats: Vec<Welford>,
}

impl Standardizer {
    /// Standardizes every feature except the intercept column.
    pub fn new(p: usize, intercept: bool) -> Self {
        let enabled = (0..p).map(|j| !(intercept && j == 0)).collect();
        Self {
            enabled,
            stats: vec![Welford::default(); p],
        }
    }

    /// Passes observations through unchanged (data already standardized).
    pub fn disabled(p: usize) -> Self {
        Self {
            enabled: vec![false; p],
            stats: vec![Welford::default(); p],
        }
    }

    pub fn p(&self) -> usize {
        self.enabled.len()
    }

    pub fn is_enabled(&self, feature: usize) -> bool {
        self.enabled.get(feature).copied().unwrap_or(false)
    }

    pub fn count(&self, feature: usize) -> u64 {
        self.stats[feature].count
    }

    pub fn mean(&self, feature: usize) -> f64 {
        self.stats[feature].mean
    }

    /// Sample variance of the values folded in so far.
    pub fn variance(&self, feature: usize) -> f64 {
        self.stats[feature].variance()
    }

    /// Transforms `obs` using statistics as of the previous observation,
    /// then folds the raw values in. Features map to 0 until two values
    /// have been seen.
    pub fn standardize(&mut self, obs: &Observation) -> Result<Observation> {
        if obs.p() != self.p() {
            return Err(Error::StreamShape {
                position: obs.t_index(),
                expected: self.p(),
                got: obs.p(),
            });
        }
        if !self.enabled.iter().any(|&e| e) {
            return Ok(obs.clone());
        }
        let x = obs
            .x()
            .iter()
            .zip(self.enabled.iter().zip(self.stats.iter_mut()))
            .map(|(&v, (&on, st))| {
                if !on {
                    return v;
                }
                let z = if st.count < 2 {
                    0.0
                } else {
                    (v - st.mean) / st.variance().sqrt().max(SD_FLOOR)
                };
                st.push(v);
                z
            })
            .collect();
        Ok(obs.with_x(x))
    }
}

/// Current checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized fit state. Field names are part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub t: u64,
    pub alpha: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub schedule: LearnRateSchedule,
    pub diagnostics: DiagnosticsWindow,
    pub standardizer: Standardizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Trace>,
}

impl Checkpoint {
    pub fn new(fit: &FitState, standardizer: &Standardizer) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            t: fit.t(),
            alpha: fit.model().alpha().to_vec(),
            beta: fit.model().beta().to_vec(),
            schedule: *fit.schedule(),
            diagnostics: fit.diagnostics().clone(),
            standardizer: standardizer.clone(),
            trace: fit.trace().cloned(),
        }
    }

    pub fn into_parts(self) -> Result<(FitState, Standardizer)> {
        let model = MixtureState::new(self.alpha, self.beta)?;
        if self.standardizer.p() != model.p() {
            return Err(Error::Validation(format!(
                "standardizer has {} features, model has {}",
                self.standardizer.p(),
                model.p()
            )));
        }
        let fit = FitState::from_parts(model, self.t, self.schedule, self.diagnostics, self.trace)?;
        Ok((fit, self.standardizer))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint is serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parse_err = |e: serde_json::Error| Error::Parse {
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Parse {
                offset: 0,
                message: "missing numeric 'version' field".into(),
            })?;
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::IncompatibleVersion {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                supported: CHECKPOINT_VERSION,
            });
        }
        serde_json::from_str(text).map_err(parse_err)
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column).min(text.len())
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_json())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, InitSpec};
    use proptest::prelude::*;

    fn stream(text: &str, format: StreamFormat, cols: &ColumnSpec) -> Result<ObservationStream> {
        ObservationStream::from_reader(
            Box::new(std::io::Cursor::new(text.to_string().into_bytes())),
            format,
            cols,
        )
    }

    #[test]
    fn csv_rows_in_order() {
        let mut s = stream(
            "y,a,b\n1,0.5,2\n0,-1,3\n1,2,2.5\n",
            StreamFormat::Csv,
            &ColumnSpec::default(),
        )
        .unwrap();
        assert_eq!(s.dimension(), Some(3));
        let rows: Vec<Observation> = s.by_ref().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].x(), &[1.0, -1.0, 3.0]);
        assert_eq!(rows[2].t_index(), 3);
        assert_eq!(s.skipped(), 0);
    }

    #[test]
    fn csv_selects_named_columns() {
        let cols = ColumnSpec {
            y_col: "click".into(),
            x_cols: Some(vec!["b".into()]),
            intercept: false,
        };
        let rows: Vec<Observation> = stream("a,click,b\n9,1,2\n", StreamFormat::Csv, &cols)
            .unwrap()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(rows[0].x(), &[2.0]);
        assert_eq!(rows[0].y(), 1);
    }

    #[test]
    fn malformed_rows_are_skipped() {
        let text = "y,a\n2,0.5\n1,abc\n0\n1,NaN\n0,1.5\n";
        let mut s = stream(text, StreamFormat::Csv, &ColumnSpec::default()).unwrap();
        let rows: Vec<Observation> = s.by_ref().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(s.skipped(), 4);
        assert_eq!(rows[0].t_index(), 1);
    }

    #[test]
    fn header_problems_fail_upfront() {
        assert!(matches!(
            stream("", StreamFormat::Csv, &ColumnSpec::default()),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            stream("a,b\n1,2\n", StreamFormat::Csv, &ColumnSpec::default()),
            Err(Error::Config(_))
        ));
        let cols = ColumnSpec {
            x_cols: Some(vec!["zzz".into()]),
            ..ColumnSpec::default()
        };
        assert!(matches!(
            stream("y,a\n", StreamFormat::Csv, &cols),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn header_only_is_an_empty_stream() {
        let mut s = stream("y,a\n", StreamFormat::Csv, &ColumnSpec::default()).unwrap();
        assert!(s.next().is_none());
        assert_eq!(s.skipped(), 0);
    }

    #[test]
    fn jsonl_rows() {
        let text =
            "{\"y\":1,\"x\":[0.5,2]}\n\n{\"y\":3,\"x\":[1]}\n{\"y\":0,\"x\":[-1,1]}\nnot json\n";
        let mut s = stream(text, StreamFormat::Jsonl, &ColumnSpec::default()).unwrap();
        let rows: Vec<Observation> = s.by_ref().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].x(), &[1.0, 0.5, 2.0]);
        assert_eq!(s.skipped(), 2);
    }

    fn o(x: &[f64], t: u64) -> Observation {
        Observation::new(1, x.to_vec(), t).unwrap()
    }

    #[test]
    fn standardizer_examples() {
        let mut s = Standardizer::new(2, true);
        for t in 1..=20 {
            let out = s.standardize(&o(&[1.0, 4.0], t)).unwrap();
            assert_eq!(out.x(), &[1.0, 0.0]);
        }

        let mut s = Standardizer::new(2, true);
        let mut means = Vec::new();
        for (t, v) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            s.standardize(&o(&[1.0, v], t as u64 + 1)).unwrap();
            means.push(s.mean(1));
        }
        assert_eq!(means, vec![1.0, 1.5, 2.0]);
        assert!(!s.is_enabled(0));
        assert_eq!(s.count(0), 0);

        // As of t-1: the third value 3 uses mean 1.5 and sd of {1, 2}.
        let mut s = Standardizer::new(1, false);
        let outs: Vec<f64> = [1.0, 2.0, 3.0]
            .iter()
            .enumerate()
            .map(|(t, &v)| s.standardize(&o(&[v], t as u64 + 1)).unwrap().x()[0])
            .collect();
        assert_eq!(outs[0], 0.0);
        assert_eq!(outs[1], 0.0);
        assert!((outs[2] - 1.5 / 0.5f64.sqrt()).abs() < 1e-12);

        assert!(s.standardize(&o(&[1.0, 2.0], 4)).is_err());
        let mut off = Standardizer::disabled(2);
        assert_eq!(
            off.standardize(&o(&[1.0, 7.0], 1)).unwrap().x(),
            &[1.0, 7.0]
        );
    }

    #[test]
    fn welford_matches_two_pass() {
        let values: Vec<f64> = (0..200_000)
            .map(|i| 1e3 + ((i as f64) * 0.618).sin() * 37.0 + (i % 7) as f64)
            .collect();
        let mut s = Standardizer::new(1, false);
        for (t, &v) in values.iter().enumerate() {
            s.standardize(&o(&[v], t as u64 + 1)).unwrap();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(((s.variance(0) - var) / var).abs() < 1e-10);
    }

    fn fit_after(n: u64, seed: u64) -> FitState {
        let model = init_model(&InitSpec::new(2, 2, seed)).unwrap();
        let mut fit = FitState::new(model, LearnRateSchedule::default(), 100, Some(10)).unwrap();
        for t in 1..=n {
            let x = ((t * 7919 + seed) % 1000) as f64 / 100.0 - 5.0;
            fit.add_observation(&Observation::new((t % 3 == 0) as u8, vec![1.0, x], t).unwrap())
                .unwrap();
        }
        fit
    }

    #[test]
    fn checkpoint_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let fit = fit_after(0, 1);
        let ckpt = Checkpoint::new(&fit, &Standardizer::new(2, true));
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let (back, _) = loaded.into_parts().unwrap();
        assert_eq!(back, fit);

        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for field in [
            "version",
            "t",
            "alpha",
            "beta",
            "schedule",
            "diagnostics",
            "standardizer",
        ] {
            assert!(v.get(field).is_some(), "missing {field}");
        }
    }

    #[test]
    fn version_bump_is_rejected() {
        let ckpt = Checkpoint::new(&fit_after(5, 2), &Standardizer::new(2, true));
        let text = ckpt
            .to_json()
            .replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(
            Checkpoint::from_json(&text),
            Err(Error::IncompatibleVersion { found: 2, .. })
        ));
    }

    #[test]
    fn corrupt_checkpoint_reports_offset() {
        let text = Checkpoint::new(&fit_after(5, 2), &Standardizer::new(2, true)).to_json();
        let truncated = &text[..text.len() / 2];
        match Checkpoint::from_json(truncated) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0 && offset <= truncated.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad = text.replacen("\"alpha\": [", "\"alpha\": [true, ", 1);
        match Checkpoint::from_json(&bad) {
            Err(Error::Parse { offset, .. }) => {
                assert_eq!(&bad[offset - 4..offset], "true");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn checkpoint_roundtrip_is_bitwise(n in 0u64..400, seed in any::<u64>()) {
            let fit = fit_after(n, seed);
            let mut std = Standardizer::new(2, true);
            for t in 1..=n.min(50) {
                std.standardize(&o(&[1.0, (t as f64 * 1.37).cos()], t)).unwrap();
            }
            let ckpt = Checkpoint::new(&fit, &std);
            let back = Checkpoint::from_json(&ckpt.to_json()).unwrap();
            prop_assert_eq!(&back, &ckpt);
            let (fit2, std2) = back.into_parts().unwrap();
            prop_assert_eq!(fit2, fit);
            prop_assert_eq!(std2, std);
        }
    }
}
