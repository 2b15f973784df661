//! Prediction tables: one canonical vector per (peptide, charge, CE) row.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use csv::StringRecord;

use crate::analysis::Predictor;
use crate::error::{Error, Result};
use crate::io::table::{
    format_f64, TableReader, TableWriter, COL_CE, COL_CHARGE, COL_RAW_FILE, COL_SAMPLE_KEY, COL_SEQUENCE,
};
use crate::ions::{valid_mask, CanonicalSpace};
use crate::peptide::ModifiedPeptide;
use crate::projection::CanonicalVector;
use crate::record::SpectrumRecord;

pub const COL_VECTOR: &str = "canonical_vector";

/// Optional identity columns that take part in the join.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JoinColumns {
    pub raw_file: bool,
    pub sample_key: bool,
}

impl JoinColumns {
    /// Optional columns present in both headers.
    pub fn shared(a: &StringRecord, b: &StringRecord) -> Self {
        let both = |name: &str| a.iter().any(|h| h == name) && b.iter().any(|h| h == name);
        Self {
            raw_file: both(COL_RAW_FILE),
            sample_key: both(COL_SAMPLE_KEY),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JoinKey {
    pub sequence: String,
    pub charge: u8,
    ce_bits: u64,
    pub raw_file: Option<String>,
    pub sample_key: Option<String>,
}

impl JoinKey {
    pub fn new(peptide: &ModifiedPeptide, charge: u8, ce: f64) -> Self {
        Self {
            sequence: peptide.to_canonical_string(),
            charge,
            // Adding 0.0 folds -0.0 into +0.0.
            ce_bits: (ce + 0.0).to_bits(),
            raw_file: None,
            sample_key: None,
        }
    }

    pub fn for_record(record: &SpectrumRecord, join: JoinColumns) -> Self {
        let mut key = Self::new(&record.peptide, record.charge, record.nce);
        if join.raw_file {
            key.raw_file = Some(record.raw_file.clone().unwrap_or_default());
        }
        if join.sample_key {
            key.sample_key = Some(record.sample_key.clone().unwrap_or_default());
        }
        key
    }

    pub fn ce(&self) -> f64 {
        f64::from_bits(self.ce_bits)
    }
}

impl std::fmt::Display for JoinKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.sequence, self.charge, self.ce())?;
        if let Some(r) = &self.raw_file {
            write!(f, "/{r}")?;
        }
        if let Some(s) = &self.sample_key {
            write!(f, "/{s}")?;
        }
        Ok(())
    }
}

/// Parses a vector cell: either exactly `dim` `;`-separated values, or
/// sparse `index:value` entries. Returns the non-zero entries.
pub fn parse_vector(text: &str, dim: usize) -> std::result::Result<Vec<(u16, f64)>, String> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let value = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("bad value '{s}'"))
    };
    let mut out = Vec::new();
    if text.contains(':') {
        for item in text.split(';') {
            let (i, v) = item
                .split_once(':')
                .ok_or_else(|| format!("bad sparse entry '{item}'"))?;
            let i: usize = i.trim().parse().map_err(|_| format!("bad index '{i}'"))?;
            if i >= dim {
                return Err(format!("index {i} outside [0, {}]", dim - 1));
            }
            let v = value(v)?;
            out.retain(|&(j, _)| usize::from(j) != i);
            if v != 0.0 {
                out.push((i as u16, v));
            }
        }
        out.sort_unstable_by_key(|&(i, _)| i);
    } else {
        let mut n = 0;
        for (i, item) in text.split(';').enumerate() {
            n += 1;
            if i >= dim {
                continue;
            }
            let v = value(item)?;
            if v != 0.0 {
                out.push((i as u16, v));
            }
        }
        if n != dim {
            return Err(format!("dense vector has {n} values, expected {dim}"));
        }
    }
    Ok(out)
}

/// Dense `;`-separated rendering of a full vector.
pub fn format_vector(values: &[f64]) -> String {
    crate::io::table::format_list(values)
}

/// Sparse `index:value` rendering of the non-zero entries.
pub fn format_sparse(values: &[f64]) -> String {
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, &v)| format!("{i}:{}", format_f64(v)))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Debug, Clone)]
struct Entry {
    line: u64,
    values: Vec<(u16, f64)>,
}

/// Predictions indexed by join key. Only non-zero entries are held.
#[derive(Debug, Clone)]
pub struct PredictionTable {
    space: CanonicalSpace,
    join: JoinColumns,
    entries: HashMap<JoinKey, Entry>,
    duplicates: u64,
}

impl PredictionTable {
    /// Loads a prediction table. When a key repeats, the first row wins and
    /// the repeat is counted in [`duplicates`](Self::duplicates).
    pub fn load(path: &Path, space: &CanonicalSpace, join: JoinColumns) -> Result<Self> {
        let reader = TableReader::open(path)?;
        let vector_col = reader.schema().index(COL_VECTOR).ok_or_else(|| Error::Schema {
            line: 1,
            message: format!("missing required column '{COL_VECTOR}'"),
        })?;
        let schema = reader.schema().clone();
        let mut table = Self {
            space: *space,
            join,
            entries: HashMap::new(),
            duplicates: 0,
        };
        for row in reader {
            let row = row?;
            let record = schema.parse(&row, f64::NAN)?;
            if record.nce.is_nan() {
                return Err(Error::Schema {
                    line: 1,
                    message: format!("prediction tables need a '{COL_CE}' column"),
                });
            }
            let values = parse_vector(row.fields.get(vector_col).unwrap_or(""), space.dim()).map_err(|message| {
                Error::Schema {
                    line: row.line,
                    message,
                }
            })?;
            let key = JoinKey::for_record(&record, join);
            match table.entries.entry(key) {
                std::collections::hash_map::Entry::Occupied(_) => table.duplicates += 1,
                std::collections::hash_map::Entry::Vacant(v) => {
                    v.insert(Entry { line: row.line, values });
                }
            }
        }
        Ok(table)
    }

    pub fn join_columns(&self) -> JoinColumns {
        self.join
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn contains(&self, key: &JoinKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &JoinKey> {
        self.entries.keys()
    }

    /// Prediction for `key` under the validity mask of (peptide, charge);
    /// values outside the mask are discarded.
    pub fn vector(&self, key: &JoinKey, peptide: &ModifiedPeptide, charge: u8) -> Result<CanonicalVector> {
        let entry = self
            .entries
            .get(key)
            .ok_or_else(|| Error::MissingPrediction(key.to_string()))?;
        let mut values = vec![0.0; self.space.dim()];
        for &(i, v) in &entry.values {
            values[usize::from(i)] = v;
        }
        CanonicalVector::from_masked(values, valid_mask(peptide, charge, &self.space))
            .map_err(|e| e.at_line(entry.line))
    }
}

impl Predictor for PredictionTable {
    fn predict(&self, peptide: &ModifiedPeptide, charge: u8, nce: f64) -> Result<CanonicalVector> {
        self.vector(&JoinKey::new(peptide, charge, nce), peptide, charge)
    }
}

/// Streaming writer for prediction tables.
pub struct PredictionWriter<W: Write> {
    writer: TableWriter<W>,
    raw_file: bool,
    sample_key: bool,
    sparse: bool,
}

impl<W: Write> PredictionWriter<W> {
    pub fn new(mut writer: TableWriter<W>, join: JoinColumns, sparse: bool) -> Result<Self> {
        let mut header = vec![COL_SEQUENCE, COL_CHARGE, COL_CE];
        if join.raw_file {
            header.push(COL_RAW_FILE);
        }
        if join.sample_key {
            header.push(COL_SAMPLE_KEY);
        }
        header.push(COL_VECTOR);
        writer.write_record(header)?;
        Ok(Self {
            writer,
            raw_file: join.raw_file,
            sample_key: join.sample_key,
            sparse,
        })
    }

    pub fn write(&mut self, record: &SpectrumRecord, vector: &CanonicalVector) -> Result<()> {
        let mut row = vec![
            record.peptide.to_canonical_string(),
            record.charge.to_string(),
            format_f64(record.nce),
        ];
        if self.raw_file {
            row.push(record.raw_file.clone().unwrap_or_default());
        }
        if self.sample_key {
            row.push(record.sample_key.clone().unwrap_or_default());
        }
        row.push(if self.sparse {
            format_sparse(vector.values())
        } else {
            format_vector(vector.values())
        });
        self.writer.write_record(&row)
    }

    pub fn finish(self) -> Result<W> {
        self.writer.finish()
    }
}
