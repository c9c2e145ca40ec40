//! Dataset metadata, CSV ingestion and the encrypted column store.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use num_bigint::BigInt;
use rand::seq::SliceRandom;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{biguint_from_hex, biguint_to_hex, canonical_json, sha256};
use crate::ledger::RevealMode;
use crate::numeric::{FixedPointValue, NumericError};
use crate::paillier::{Ciphertext, PublicKey};

/// Default per-attribute domain bound, `|x| <= 2^31`.
pub const DEFAULT_DOMAIN_BOUND: u64 = 1 << 31;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("row {row}, column {column:?}: {reason}")]
    Cell { row: usize, column: String, reason: String },
    #[error("split fraction {0} leaves no validation rows")]
    EmptyValidation(f64),
    #[error("split fraction {0} must lie in [0, 1]")]
    BadSplit(f64),
    #[error("column file {file}: {reason}")]
    ColumnFile { file: String, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum AttributeKind {
    Continuous,
    Categorical { categories: Vec<String> },
}

fn default_bound() -> u64 {
    DEFAULT_DOMAIN_BOUND
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
    /// Values satisfy `|x| <= bound`.
    #[serde(default = "default_bound")]
    pub bound: u64,
    /// Attributes the owner declares independent of this one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub independent_of: Vec<String>,
}

impl Attribute {
    pub fn continuous(name: &str) -> Self {
        Self { name: name.into(), kind: AttributeKind::Continuous, bound: DEFAULT_DOMAIN_BOUND, independent_of: vec![] }
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: AttributeKind::Categorical { categories: categories.iter().map(|c| c.to_string()).collect() },
            bound: 1,
            independent_of: vec![],
        }
    }
}

/// The owner-supplied schema. Row counts are filled in at setup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub attributes: Vec<Attribute>,
    #[serde(default)]
    pub n_rows: u64,
    #[serde(default)]
    pub exploration_rows: u64,
    #[serde(default)]
    pub validation_rows: u64,
}

impl DatasetMetadata {
    pub fn new(attributes: Vec<Attribute>) -> Self {
        Self { attributes, n_rows: 0, exploration_rows: 0, validation_rows: 0 }
    }

    pub fn n_attrs(&self) -> usize {
        self.attributes.len()
    }

    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = std::collections::HashSet::new();
        for a in &self.attributes {
            if a.name.is_empty() || !seen.insert(&a.name) {
                return Err(DatasetError::Schema(format!("attribute name {:?} is empty or repeated", a.name)));
            }
            if a.bound == 0 {
                return Err(DatasetError::Schema(format!("attribute {:?} has a zero bound", a.name)));
            }
            if let AttributeKind::Categorical { categories } = &a.kind {
                let mut cats = std::collections::HashSet::new();
                if categories.len() < 2 || !categories.iter().all(|c| cats.insert(c)) {
                    return Err(DatasetError::Schema(format!(
                        "attribute {:?} needs at least two distinct categories",
                        a.name
                    )));
                }
            }
        }
        if self.attributes.is_empty() {
            return Err(DatasetError::Schema("no attributes".into()));
        }
        Ok(())
    }

    /// Stored ciphertext columns: one per continuous attribute, one per
    /// category of a categorical attribute.
    pub fn columns(&self) -> Vec<ColumnInfo> {
        let mut out = Vec::new();
        for a in &self.attributes {
            match &a.kind {
                AttributeKind::Continuous => out.push(ColumnInfo { attribute: a.name.clone(), category: None }),
                AttributeKind::Categorical { categories } => out.extend(
                    categories
                        .iter()
                        .map(|c| ColumnInfo { attribute: a.name.clone(), category: Some(c.clone()) }),
                ),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub attribute: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

/// Parsed plaintext cells, validated against the schema.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Number(f64),
    Category(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// The raw records, kept for writing the exploration split verbatim.
    raw: Vec<csv::StringRecord>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Numeric column by attribute index.
    pub fn numbers(&self, attr: usize) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| match r[attr] {
                Cell::Number(x) => x,
                Cell::Category(c) => c as f64,
            })
            .collect()
    }

    fn subset(&self, idx: &[usize]) -> Table {
        Table {
            header: self.header.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            raw: idx.iter().map(|&i| self.raw[i].clone()).collect(),
        }
    }

    pub fn to_csv(&self) -> Result<String, DatasetError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.raw {
            w.write_record(r)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8 input"))
    }
}

/// Reads a CSV with a header row and checks every cell against `meta`.
pub fn parse_csv(text: &str, meta: &DatasetMetadata) -> Result<Table, DatasetError> {
    meta.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let expected: Vec<&str> = meta.attributes.iter().map(|a| a.name.as_str()).collect();
    if header != expected {
        return Err(DatasetError::Schema(format!("header {header:?} does not match attributes {expected:?}")));
    }
    let mut rows = Vec::new();
    let mut raw = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != header.len() {
            return Err(DatasetError::Schema(format!("row {row} has {} fields, expected {}", rec.len(), header.len())));
        }
        let cells = meta
            .attributes
            .iter()
            .zip(rec.iter())
            .map(|(a, field)| parse_cell(a, field.trim()).map_err(|reason| DatasetError::Cell { row, column: a.name.clone(), reason }))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(cells);
        raw.push(rec);
    }
    Ok(Table { header, rows, raw })
}

fn parse_cell(attr: &Attribute, field: &str) -> Result<Cell, String> {
    match &attr.kind {
        AttributeKind::Continuous => {
            let x: f64 = field.parse().map_err(|_| format!("{field:?} is not a number"))?;
            if !x.is_finite() {
                return Err("value is not finite".into());
            }
            if x.abs() > attr.bound as f64 {
                return Err(format!("{x} is outside the domain bound {}", attr.bound));
            }
            Ok(Cell::Number(x))
        }
        AttributeKind::Categorical { categories } => categories
            .iter()
            .position(|c| c == field)
            .map(Cell::Category)
            .ok_or_else(|| format!("{field:?} is not one of the declared categories")),
    }
}

/// Disjoint exploration/validation split by a seeded shuffle.
/// `fraction` of the rows go to exploration.
pub fn split_rows<R: RngCore>(table: &Table, fraction: f64, rng: &mut R) -> Result<(Table, Table), DatasetError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DatasetError::BadSplit(fraction));
    }
    let mut idx: Vec<usize> = (0..table.len()).collect();
    idx.shuffle(rng);
    let cut = (fraction * table.len() as f64).round() as usize;
    if cut >= table.len() {
        return Err(DatasetError::EmptyValidation(fraction));
    }
    let (a, b) = idx.split_at(cut);
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    Ok((table.subset(&a), table.subset(&b)))
}

/// Publicly known parameters of the encrypted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub metadata: DatasetMetadata,
    pub public_key: PublicKey,
    pub phi: u32,
    pub mode: RevealMode,
    pub columns: Vec<ColumnInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedDataset {
    pub header: DatasetHeader,
    /// Column-major, in `header.columns` order.
    pub columns: Vec<Vec<Ciphertext>>,
}

impl EncryptedDataset {
    /// Encrypts `table` column by column: numbers at scale `phi`,
    /// categories one-hot at scale 0.
    pub fn encrypt<R: RngCore + CryptoRng>(
        table: &Table,
        metadata: DatasetMetadata,
        pk: &PublicKey,
        phi: u32,
        mode: RevealMode,
        rng: &mut R,
    ) -> Result<Self, DatasetError> {
        let columns_info = metadata.columns();
        let mut columns = Vec::with_capacity(columns_info.len());
        for (ai, attr) in metadata.attributes.iter().enumerate() {
            match &attr.kind {
                AttributeKind::Continuous => {
                    let col = table
                        .rows
                        .iter()
                        .enumerate()
                        .map(|(r, row)| {
                            let Cell::Number(x) = row[ai] else { unreachable!("schema checked") };
                            let fp = FixedPointValue::encode(&x, phi).map_err(|e: NumericError| DatasetError::Cell {
                                row: r + 1,
                                column: attr.name.clone(),
                                reason: e.to_string(),
                            })?;
                            Ok(pk.encrypt_signed(&fp.raw, rng))
                        })
                        .collect::<Result<Vec<_>, DatasetError>>()?;
                    columns.push(col);
                }
                AttributeKind::Categorical { categories } => {
                    for ci in 0..categories.len() {
                        columns.push(
                            table
                                .rows
                                .iter()
                                .map(|row| {
                                    let hit = matches!(row[ai], Cell::Category(c) if c == ci);
                                    pk.encrypt_signed(&BigInt::from(hit as u8), rng)
                                })
                                .collect(),
                        );
                    }
                }
            }
        }
        let header = DatasetHeader { metadata, public_key: pk.clone(), phi, mode, columns: columns_info };
        Ok(Self { header, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map(Vec::len).unwrap_or(0)
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.header.public_key
    }

    /// Ciphertext columns backing an attribute: one for a continuous
    /// attribute, one per category otherwise.
    pub fn attribute_columns(&self, name: &str) -> Vec<&[Ciphertext]> {
        self.header
            .columns
            .iter()
            .zip(&self.columns)
            .filter(|(info, _)| info.attribute == name)
            .map(|(_, c)| c.as_slice())
            .collect()
    }

    /// SHA-256 over the canonical header JSON followed by every column file.
    pub fn digest(&self) -> String {
        let mut bytes = canonical_json(&self.header).expect("header serializes").into_bytes();
        for col in &self.columns {
            bytes.extend_from_slice(&column_file_bytes(col));
        }
        hex::encode(sha256(&bytes))
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        if self.columns.len() != self.header.columns.len() {
            return Err(DatasetError::Schema("column count does not match the header".into()));
        }
        let rows = self.header.metadata.validation_rows as usize;
        for (i, col) in self.columns.iter().enumerate() {
            if col.len() != rows {
                return Err(DatasetError::ColumnFile { file: column_file_name(i), reason: format!("expected {rows} rows") });
            }
            if let Some(r) = col.iter().position(|c| !self.header.public_key.is_valid_ciphertext(c)) {
                return Err(DatasetError::ColumnFile {
                    file: column_file_name(i),
                    reason: format!("line {} is not a valid ciphertext", r + 1),
                });
            }
        }
        Ok(())
    }

    /// Writes `dir/header.json` and `dir/col-<i>.ct`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("header.json"), serde_json::to_string_pretty(&self.header)? + "\n")?;
        for (i, col) in self.columns.iter().enumerate() {
            let mut f = fs::File::create(dir.join(column_file_name(i)))?;
            f.write_all(&column_file_bytes(col))?;
            f.sync_all()?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, DatasetError> {
        let header: DatasetHeader = serde_json::from_str(&fs::read_to_string(dir.join("header.json"))?)?;
        let mut columns = Vec::with_capacity(header.columns.len());
        for i in 0..header.columns.len() {
            let name = column_file_name(i);
            let f = fs::File::open(dir.join(&name))?;
            let col = BufReader::new(f)
                .lines()
                .enumerate()
                .map(|(ln, line)| {
                    let line = line?;
                    biguint_from_hex(&line).map(Ciphertext).ok_or_else(|| DatasetError::ColumnFile {
                        file: name.clone(),
                        reason: format!("line {} is not lowercase hex", ln + 1),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            columns.push(col);
        }
        let ds = Self { header, columns };
        ds.check()?;
        Ok(ds)
    }
}

pub fn column_file_name(i: usize) -> String {
    format!("col-{i}.ct")
}

fn column_file_bytes(col: &[Ciphertext]) -> Vec<u8> {
    let mut out = String::new();
    for c in col {
        out.push_str(&biguint_to_hex(&c.0));
        out.push('\n');
    }
    out.into_bytes()
}

/// Attribute name to index, for plaintext helpers.
pub fn attribute_index(meta: &DatasetMetadata) -> HashMap<&str, usize> {
    meta.attributes.iter().enumerate().map(|(i, a)| (a.name.as_str(), i)).collect()
}
