//! Streaming reader and writer for spectral tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, WriterBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peptide::parse_modified_sequence;
use crate::projection::RawSpectrum;
use crate::record::SpectrumRecord;

pub const COL_SEQUENCE: &str = "modified_sequence";
pub const COL_CHARGE: &str = "precursor_charge";
pub const COL_CE: &str = "collision_energy";
pub const COL_MZ: &str = "mz_list";
pub const COL_INTENSITY: &str = "intensity_list";
pub const COL_RAW_FILE: &str = "raw_file";
pub const COL_ANDROMEDA: &str = "andromeda_score";
pub const COL_PPM: &str = "mass_error_ppm";
pub const COL_SPLIT: &str = "split";
pub const COL_SAMPLE_KEY: &str = "sample_key";

/// What to do with a row that fails to parse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    #[default]
    Fatal,
    Skip,
}

impl std::str::FromStr for ErrorPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fatal" => Ok(ErrorPolicy::Fatal),
            "skip" => Ok(ErrorPolicy::Skip),
            other => Err(Error::Config(format!("unknown error policy '{other}'"))),
        }
    }
}

/// Header layout of a spectral table.
#[derive(Debug, Clone)]
pub struct Schema {
    headers: StringRecord,
    sequence: usize,
    charge: usize,
    ce: Option<usize>,
    mz: Option<usize>,
    intensity: Option<usize>,
    raw_file: Option<usize>,
    andromeda: Option<usize>,
    ppm: Option<usize>,
    split: Option<usize>,
    sample_key: Option<usize>,
}

impl Schema {
    pub fn from_headers(headers: StringRecord) -> Result<Self> {
        let schema_err = |message: String| Error::Schema { line: 1, message };
        for (i, name) in headers.iter().enumerate() {
            if name.is_empty() {
                return Err(schema_err(format!("empty column name at position {}", i + 1)));
            }
            if headers.iter().take(i).any(|h| h == name) {
                return Err(schema_err(format!("duplicate column '{name}'")));
            }
        }
        let find = |name: &str| headers.iter().position(|h| h == name);
        let required = |name: &str| find(name).ok_or_else(|| schema_err(format!("missing required column '{name}'")));
        let schema = Schema {
            sequence: required(COL_SEQUENCE)?,
            charge: required(COL_CHARGE)?,
            ce: find(COL_CE),
            mz: find(COL_MZ),
            intensity: find(COL_INTENSITY),
            raw_file: find(COL_RAW_FILE),
            andromeda: find(COL_ANDROMEDA),
            ppm: find(COL_PPM),
            split: find(COL_SPLIT),
            sample_key: find(COL_SAMPLE_KEY),
            headers,
        };
        if schema.mz.is_some() != schema.intensity.is_some() {
            return Err(schema_err(format!(
                "'{COL_MZ}' and '{COL_INTENSITY}' must appear together"
            )));
        }
        Ok(schema)
    }

    pub fn headers(&self) -> &StringRecord {
        &self.headers
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn has_ce(&self) -> bool {
        self.ce.is_some()
    }

    pub fn has_peaks(&self) -> bool {
        self.mz.is_some()
    }

    pub fn has_raw_file(&self) -> bool {
        self.raw_file.is_some()
    }

    pub fn has_sample_key(&self) -> bool {
        self.sample_key.is_some()
    }

    pub fn has_split(&self) -> bool {
        self.split.is_some()
    }

    pub fn require_peaks(&self) -> Result<()> {
        if self.has_peaks() {
            Ok(())
        } else {
            Err(Error::Schema {
                line: 1,
                message: format!("missing required columns '{COL_MZ}' and '{COL_INTENSITY}'"),
            })
        }
    }

    pub fn require_split(&self) -> Result<()> {
        if self.has_split() {
            Ok(())
        } else {
            Err(Error::Schema {
                line: 1,
                message: format!("missing required column '{COL_SPLIT}'"),
            })
        }
    }

    /// Parses one row into a record. `default_nce` is used only when the
    /// table has no collision-energy column.
    pub fn parse(&self, row: &TableRow, default_nce: f64) -> Result<SpectrumRecord> {
        self.parse_inner(row, default_nce).map_err(|e| e.at_line(row.line))
    }

    fn parse_inner(&self, row: &TableRow, default_nce: f64) -> Result<SpectrumRecord> {
        let f = &row.fields;
        let field = |i: usize| f.get(i).unwrap_or("");
        let schema_err = |message: String| Error::Schema {
            line: row.line,
            message,
        };
        let optional = |i: Option<usize>| i.map(field).filter(|v| !v.is_empty());
        let optional_f64 = |i: Option<usize>, name: &str| -> Result<Option<f64>> {
            optional(i)
                .map(|v| parse_f64(v).ok_or_else(|| schema_err(format!("bad {name} '{v}'"))))
                .transpose()
        };

        let peptide = parse_modified_sequence(field(self.sequence))?;
        let charge_text = field(self.charge);
        let charge: u8 = charge_text
            .trim()
            .parse()
            .map_err(|_| schema_err(format!("bad {COL_CHARGE} '{charge_text}'")))?;
        let nce = match self.ce {
            None => default_nce,
            Some(i) => parse_f64(field(i)).ok_or_else(|| schema_err(format!("bad {COL_CE} '{}'", field(i))))?,
        };
        let mut record = SpectrumRecord::new(peptide, charge, nce);
        if let (Some(mi), Some(ii)) = (self.mz, self.intensity) {
            let mz = parse_list(field(mi)).map_err(|v| schema_err(format!("bad {COL_MZ} value '{v}'")))?;
            let intensity =
                parse_list(field(ii)).map_err(|v| schema_err(format!("bad {COL_INTENSITY} value '{v}'")))?;
            if mz.len() != intensity.len() {
                return Err(schema_err(format!(
                    "{COL_MZ} has {} values but {COL_INTENSITY} has {}",
                    mz.len(),
                    intensity.len()
                )));
            }
            record.spectrum = RawSpectrum::new(mz, intensity)?;
        }
        record.raw_file = optional(self.raw_file).map(str::to_string);
        record.andromeda_score = optional_f64(self.andromeda, COL_ANDROMEDA)?;
        record.mass_error_ppm = optional_f64(self.ppm, COL_PPM)?;
        record.split = optional(self.split).map(str::to_string);
        record.sample_key = optional(self.sample_key).map(str::to_string);
        record.row_index = Some(row.index);
        Ok(record)
    }
}

fn parse_f64(text: &str) -> Option<f64> {
    text.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses a `;`-separated list of decimals; the error carries the offending
/// item. An empty cell is an empty list.
pub fn parse_list(text: &str) -> std::result::Result<Vec<f64>, String> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(';')
        .map(|item| parse_f64(item).ok_or_else(|| item.to_string()))
        .collect()
}

/// Joins values with `;` using shortest round-trip formatting.
pub fn format_list(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 8);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        out.push_str(&format_f64(*v));
    }
    out
}

/// Shortest representation that parses back to the same value.
pub fn format_f64(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        v.to_string()
    }
}

/// One raw data row.
#[derive(Debug, Clone)]
pub struct TableRow {
    /// 1-based line number in the source file (the header is line 1).
    pub line: u64,
    /// 0-based data row index.
    pub index: u64,
    pub fields: StringRecord,
}

/// Row-at-a-time reader; memory use does not grow with file length.
pub struct TableReader<R: Read> {
    reader: csv::Reader<R>,
    schema: Schema,
    source: PathBuf,
    next_index: u64,
}

pub(crate) fn tsv_reader<R: Read>(inner: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .has_headers(true)
        .flexible(false)
        .from_reader(inner)
}

fn csv_to_schema(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Csv(e),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Schema {
            line,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        _ => Error::Schema {
            line,
            message: e.to_string(),
        },
    }
}

impl TableReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::with_capacity(1 << 16, file), path)
    }
}

impl<R: Read> TableReader<R> {
    pub fn from_reader(inner: R, source: &Path) -> Result<Self> {
        let mut reader = tsv_reader(inner);
        let headers = match reader.headers() {
            Ok(h) => h.clone(),
            Err(e) => return Err(csv_to_schema(e, 1)),
        };
        if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
            return Err(Error::Schema {
                line: 1,
                message: "missing header row".into(),
            });
        }
        Ok(Self {
            reader,
            schema: Schema::from_headers(headers)?,
            source: source.to_path_buf(),
            next_index: 0,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn source(&self) -> &Path {
        &self.source
    }

    /// Parsed records under `policy`, paired with their raw rows.
    pub fn records(self, default_nce: f64, policy: ErrorPolicy) -> RecordStream<R> {
        RecordStream {
            reader: self,
            default_nce,
            policy,
            skipped: 0,
            first_skipped: Vec::new(),
        }
    }
}

impl<R: Read> Iterator for TableReader<R> {
    type Item = Result<TableRow>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut fields = StringRecord::new();
        match self.reader.read_record(&mut fields) {
            Ok(false) => None,
            Ok(true) => {
                let line = fields.position().map(|p| p.line()).unwrap_or(self.next_index + 2);
                let index = self.next_index;
                self.next_index += 1;
                Some(Ok(TableRow { line, index, fields }))
            }
            Err(e) => {
                let fallback = self.next_index + 2;
                self.next_index += 1;
                Some(Err(csv_to_schema(e, fallback)))
            }
        }
    }
}

/// Maximum number of skipped-row messages kept for reporting.
const MAX_SKIP_EXAMPLES: usize = 20;

/// Iterator of `(row, record)` pairs. Under [`ErrorPolicy::Skip`], bad rows
/// are counted and dropped; under `Fatal` the first one is yielded as an
/// error and iteration stops.
pub struct RecordStream<R: Read> {
    reader: TableReader<R>,
    default_nce: f64,
    policy: ErrorPolicy,
    skipped: u64,
    first_skipped: Vec<String>,
}

impl<R: Read> RecordStream<R> {
    pub fn schema(&self) -> &Schema {
        self.reader.schema()
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn skipped_examples(&self) -> &[String] {
        &self.first_skipped
    }
}

impl<R: Read> Iterator for RecordStream<R> {
    type Item = Result<(TableRow, SpectrumRecord)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let parsed = match self.reader.next()? {
                Ok(row) => self
                    .reader
                    .schema
                    .parse(&row, self.default_nce)
                    .map(|record| (row, record)),
                Err(e) => Err(e),
            };
            match (parsed, self.policy) {
                (Ok(pair), _) => return Some(Ok(pair)),
                (Err(e @ Error::Csv(_)), _) | (Err(e), ErrorPolicy::Fatal) => return Some(Err(e)),
                (Err(e), ErrorPolicy::Skip) => {
                    self.skipped += 1;
                    if self.first_skipped.len() < MAX_SKIP_EXAMPLES {
                        self.first_skipped.push(e.to_string());
                    }
                }
            }
        }
    }
}

/// TSV writer with the table conventions (tab, LF, no quoting).
pub struct TableWriter<W: Write> {
    writer: csv::Writer<W>,
    path: PathBuf,
}

impl TableWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_writer(BufWriter::with_capacity(1 << 16, file), path))
    }
}

impl<W: Write> TableWriter<W> {
    pub fn from_writer(inner: W, path: &Path) -> Self {
        let writer = WriterBuilder::new()
            .delimiter(b'\t')
            .quote_style(csv::QuoteStyle::Never)
            .terminator(csv::Terminator::Any(b'\n'))
            .has_headers(false)
            .from_writer(inner);
        Self {
            writer,
            path: path.to_path_buf(),
        }
    }

    pub fn write_record<I, T>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        for field in fields {
            let bytes = field.as_ref();
            if bytes.iter().any(|&b| b == b'\t' || b == b'\n' || b == b'\r') {
                return Err(Error::Schema {
                    line: 0,
                    message: format!("field contains a tab or newline: {:?}", String::from_utf8_lossy(bytes)),
                });
            }
            self.writer.write_field(bytes)?;
        }
        self.writer.write_record(None::<&[u8]>)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        self.writer
            .into_inner()
            .map_err(|e| Error::io(&self.path, e.into_error()))
    }
}

/// Header plus appended columns; existing columns with the same names are
/// reused in place so rewriting a table is idempotent.
#[derive(Debug, Clone)]
pub struct ColumnPlan {
    headers: Vec<String>,
    targets: Vec<usize>,
}

impl ColumnPlan {
    pub fn new(input: &StringRecord, added: &[&str]) -> Self {
        let mut headers: Vec<String> = input.iter().map(str::to_string).collect();
        let targets = added
            .iter()
            .map(|name| match headers.iter().position(|h| h == name) {
                Some(i) => i,
                None => {
                    headers.push(name.to_string());
                    headers.len() - 1
                }
            })
            .collect();
        Self { headers, targets }
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    /// Output row: input fields with the added values placed in their
    /// target columns.
    pub fn apply(&self, fields: &StringRecord, values: &[String]) -> Vec<String> {
        let mut out: Vec<String> = fields.iter().map(str::to_string).collect();
        out.resize(self.headers.len(), String::new());
        for (&i, v) in self.targets.iter().zip(values) {
            out[i] = v.clone();
        }
        out
    }
}
