//! Tabular dataset over numeric features: nominal encoding, feature
//! aggregation, min-max normalization, seeded splitting, hashing and
//! CSV + sidecar persistence.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::trace::VmRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitTag {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

impl SplitTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
            SplitTag::Unassigned => "unassigned",
        }
    }

    pub fn parse(s: &str) -> Result<SplitTag> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            "unassigned" => Ok(SplitTag::Unassigned),
            other => Err(Error::MalformedDataset(format!(
                "unknown split tag '{other}'"
            ))),
        }
    }
}

/// How a row came to exist: parsed from the trace, interpolated by SMOTE,
/// or duplicated by random over-sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Provenance {
    #[default]
    Real,
    Synthetic,
    Duplicate,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
            Provenance::Duplicate => "duplicate",
        }
    }

    pub fn parse(s: &str) -> Result<Provenance> {
        match s {
            "real" => Ok(Provenance::Real),
            "synthetic" => Ok(Provenance::Synthetic),
            "duplicate" => Ok(Provenance::Duplicate),
            other => Err(Error::MalformedDataset(format!(
                "unknown provenance '{other}'"
            ))),
        }
    }
}

/// Row-major numeric feature matrix with labels, split tags and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub column_names: Vec<String>,
    pub features: Vec<f64>,
    pub n_cols: usize,
    pub labels: Vec<u8>,
    pub split: Vec<SplitTag>,
    pub provenance: Vec<Provenance>,
}

impl Dataset {
    pub fn new(column_names: Vec<String>, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let n_cols = column_names.len();
        if n_cols == 0 || features.len() != labels.len() * n_cols {
            return Err(Error::MalformedDataset(format!(
                "{} features do not fill {} rows x {} cols",
                features.len(),
                labels.len(),
                n_cols
            )));
        }
        let n = labels.len();
        Ok(Self {
            column_names,
            features,
            n_cols,
            labels,
            split: vec![SplitTag::Unassigned; n],
            provenance: vec![Provenance::Real; n],
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.row(i)[j]).collect()
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// (label 0 count, label 1 count)
    pub fn class_counts(&self) -> (usize, usize) {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - ones, ones)
    }

    pub fn push_row(
        &mut self,
        row: &[f64],
        label: u8,
        split: SplitTag,
        provenance: Provenance,
    ) -> Result<()> {
        if row.len() != self.n_cols {
            return Err(Error::ShapeMismatch {
                op: "push_row",
                expected: format!("{} values", self.n_cols),
                got: format!("{}", row.len()),
            });
        }
        self.features.extend_from_slice(row);
        self.labels.push(label);
        self.split.push(split);
        self.provenance.push(provenance);
        Ok(())
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset {
            column_names: self.column_names.clone(),
            features: Vec::with_capacity(indices.len() * self.n_cols),
            n_cols: self.n_cols,
            labels: Vec::with_capacity(indices.len()),
            split: Vec::with_capacity(indices.len()),
            provenance: Vec::with_capacity(indices.len()),
        };
        for &i in indices {
            out.features.extend_from_slice(self.row(i));
            out.labels.push(self.labels[i]);
            out.split.push(self.split[i]);
            out.provenance.push(self.provenance[i]);
        }
        out
    }

    /// Row indices carrying the given split tag.
    pub fn split_indices(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.split[i] == tag).collect()
    }

    /// New dataset without the named columns; labels, tags and provenance
    /// are kept.
    pub fn drop_columns(&self, names: &[&str]) -> Result<Dataset> {
        let mut dropped = Vec::with_capacity(names.len());
        for name in names {
            match self.col_index(name) {
                Some(i) => dropped.push(i),
                None => {
                    return Err(Error::MissingColumn {
                        column: name.to_string(),
                    })
                }
            }
        }
        let keep: Vec<usize> = (0..self.n_cols).filter(|j| !dropped.contains(j)).collect();
        if keep.is_empty() {
            return Err(Error::MalformedDataset(
                "cannot drop every column".into(),
            ));
        }
        let mut features = Vec::with_capacity(self.n_rows() * keep.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            features.extend(keep.iter().map(|&j| row[j]));
        }
        Ok(Dataset {
            column_names: keep.iter().map(|&j| self.column_names[j].clone()).collect(),
            features,
            n_cols: keep.len(),
            labels: self.labels.clone(),
            split: self.split.clone(),
            provenance: self.provenance.clone(),
        })
    }
}

/// Code -> original string for one encoded column (code = index).
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMap {
    pub column: String,
    pub values: Vec<String>,
}

impl EncodingMap {
    pub fn code_of(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

/// Assign integer codes 0..n-1 to distinct strings in order of first
/// appearance. Returns the codes and the distinct values.
pub fn encode_nominal<S: AsRef<str>>(column: &[S]) -> (Vec<usize>, Vec<String>) {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut values = Vec::new();
    let mut codes = Vec::with_capacity(column.len());
    for s in column {
        let s = s.as_ref();
        let code = match seen.get(s) {
            Some(&c) => c,
            None => {
                let c = values.len();
                seen.insert(s, c);
                values.push(s.to_string());
                c
            }
        };
        codes.push(code);
    }
    (codes, values)
}

/// Column layout produced by [`encode_records`]: the three IDs label-encoded,
/// raw timestamps and resources still present.
pub const ENCODED_COLUMNS: [&str; 10] = [
    "vm_id",
    "subscription_id",
    "deployment_id",
    "created",
    "deleted",
    "cpu_min",
    "cpu_avg",
    "cpu_max",
    "core_count",
    "memory",
];

/// Final feature layout after [`aggregate_dataset`].
pub const AGGREGATED_COLUMNS: [&str; 9] = [
    "vm_id",
    "subscription_id",
    "deployment_id",
    "cpu_min",
    "cpu_avg",
    "cpu_max",
    "memory",
    "core_hour",
    "lifetime_hours",
];

/// Turn cleaned records into a numeric dataset: the three ID columns are
/// label-encoded, everything else is carried through. Labels come from the
/// category (0 delay-insensitive, 1 interactive).
pub fn encode_records(records: &[VmRecord]) -> Result<(Dataset, Vec<EncodingMap>)> {
    if records.is_empty() {
        return Err(Error::TooFewRows { needed: 1, got: 0 });
    }
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        match r.category.label() {
            Some(l) => labels.push(l),
            None => {
                return Err(Error::MalformedDataset(
                    "records contain Unknown categories; clean them first".into(),
                ))
            }
        }
    }

    let id_columns: [(&str, Vec<&str>); 3] = [
        ("vm_id", records.iter().map(|r| r.vm_id.as_str()).collect()),
        (
            "subscription_id",
            records.iter().map(|r| r.subscription_id.as_str()).collect(),
        ),
        (
            "deployment_id",
            records.iter().map(|r| r.deployment_id.as_str()).collect(),
        ),
    ];
    let mut encodings = Vec::with_capacity(3);
    let mut id_codes: Vec<Vec<usize>> = Vec::with_capacity(3);
    for (name, column) in &id_columns {
        let (codes, values) = encode_nominal(column);
        encodings.push(EncodingMap {
            column: name.to_string(),
            values,
        });
        id_codes.push(codes);
    }

    let mut features = Vec::with_capacity(records.len() * ENCODED_COLUMNS.len());
    for (i, r) in records.iter().enumerate() {
        features.extend_from_slice(&[
            id_codes[0][i] as f64,
            id_codes[1][i] as f64,
            id_codes[2][i] as f64,
            r.created,
            r.deleted,
            r.cpu_min,
            r.cpu_avg,
            r.cpu_max,
            r.core_count as f64,
            r.memory,
        ]);
    }
    let names = ENCODED_COLUMNS.iter().map(|s| s.to_string()).collect();
    Ok((Dataset::new(names, features, labels)?, encodings))
}

/// Replace created/deleted/core_count with the derived core_hour and
/// lifetime_hours columns, producing the 9-feature layout.
pub fn aggregate_dataset(ds: &Dataset) -> Result<Dataset> {
    let need = |name: &str| {
        ds.col_index(name).ok_or_else(|| Error::MissingColumn {
            column: name.to_string(),
        })
    };
    let created_i = need("created")?;
    let deleted_i = need("deleted")?;
    let cores_i = need("core_count")?;
    let dropped = [created_i, deleted_i, cores_i];

    let mut column_names: Vec<String> = ds
        .column_names
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, n)| n.clone())
        .collect();
    column_names.push("core_hour".to_string());
    column_names.push("lifetime_hours".to_string());

    let n_cols = column_names.len();
    let mut features = Vec::with_capacity(ds.n_rows() * n_cols);
    for i in 0..ds.n_rows() {
        let row = ds.row(i);
        let (created, deleted) = (row[created_i], row[deleted_i]);
        if deleted < created {
            return Err(Error::NegativeLifetime { created, deleted });
        }
        let lifetime_hours = (deleted - created) / 3600.0;
        let core_hour = lifetime_hours * row[cores_i];
        for (j, &v) in row.iter().enumerate() {
            if !dropped.contains(&j) {
                features.push(v);
            }
        }
        features.push(core_hour);
        features.push(lifetime_hours);
    }

    Ok(Dataset {
        column_names,
        features,
        n_cols,
        labels: ds.labels.clone(),
        split: ds.split.clone(),
        provenance: ds.provenance.clone(),
    })
}

/// Records straight to the 9-feature aggregated dataset.
pub fn aggregate_features(records: &[VmRecord]) -> Result<(Dataset, Vec<EncodingMap>)> {
    let (encoded, encodings) = encode_records(records)?;
    Ok((aggregate_dataset(&encoded)?, encodings))
}

/// Which rows supply the min/max statistics for normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StatsScope {
    /// The paper's setting: statistics over every row (fit before split).
    #[default]
    WholeData,
    /// Leakage-safe variant: statistics from Train rows only; other rows are
    /// clamped into [0, 1].
    TrainOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub name: String,
    pub min: f64,
    pub max: f64,
    /// Max equalled min: the column was mapped to all zeros.
    pub constant: bool,
}

/// Linear [0, 1] rescale per column. Constant columns map to 0.0 and are
/// flagged in the returned stats.
pub fn minmax_normalize(ds: &Dataset, scope: StatsScope) -> Result<(Dataset, Vec<ColumnStats>)> {
    if ds.n_rows() == 0 {
        return Err(Error::TooFewRows { needed: 1, got: 0 });
    }
    let stat_rows: Vec<usize> = match scope {
        StatsScope::WholeData => (0..ds.n_rows()).collect(),
        StatsScope::TrainOnly => {
            let rows = ds.split_indices(SplitTag::Train);
            if rows.is_empty() {
                return Err(Error::EmptySplit {
                    split: "train".into(),
                });
            }
            rows
        }
    };

    let mut stats = Vec::with_capacity(ds.n_cols);
    for j in 0..ds.n_cols {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &i in &stat_rows {
            let v = ds.row(i)[j];
            min = min.min(v);
            max = max.max(v);
        }
        stats.push(ColumnStats {
            name: ds.column_names[j].clone(),
            min,
            max,
            constant: max == min,
        });
    }

    let mut out = ds.clone();
    for i in 0..ds.n_rows() {
        for j in 0..ds.n_cols {
            let s = &stats[j];
            let v = &mut out.features[i * ds.n_cols + j];
            *v = if s.constant {
                0.0
            } else {
                ((*v - s.min) / (s.max - s.min)).clamp(0.0, 1.0)
            };
        }
    }
    Ok((out, stats))
}

/// Shuffle rows with a seeded RNG and assign Train/Val/Test tags by
/// fraction: floor(n*train) rows train, floor(n*val) rows val, rest test.
/// Returns the realized (train, val, test) counts.
pub fn split(ds: &mut Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(usize, usize, usize)> {
    let (ft, fv, fe) = fractions;
    let sum = ft + fv + fe;
    if (sum - 1.0).abs() > 1e-9 || ft < 0.0 || fv < 0.0 || fe < 0.0 {
        return Err(Error::BadFractions(sum));
    }
    let n = ds.n_rows();
    if n < 3 {
        return Err(Error::TooFewRows { needed: 3, got: n });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_train = (n as f64 * ft).floor() as usize;
    let n_val = (n as f64 * fv).floor() as usize;
    for (pos, &row) in order.iter().enumerate() {
        ds.split[row] = if pos < n_train {
            SplitTag::Train
        } else if pos < n_train + n_val {
            SplitTag::Val
        } else {
            SplitTag::Test
        };
    }
    Ok((n_train, n_val, n - n_train - n_val))
}

/// FNV-1a 64 over the full dataset content (shape, names, feature bits,
/// labels, tags). Stable across runs and platforms.
pub fn dataset_hash(ds: &Dataset) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(&(ds.n_rows() as u64).to_le_bytes());
    eat(&(ds.n_cols as u64).to_le_bytes());
    for name in &ds.column_names {
        eat(name.as_bytes());
        eat(&[0xff]);
    }
    for v in &ds.features {
        eat(&v.to_bits().to_le_bytes());
    }
    eat(&ds.labels);
    for tag in &ds.split {
        eat(&[*tag as u8]);
    }
    for p in &ds.provenance {
        eat(&[*p as u8]);
    }
    h
}

/// Sidecar metadata persisted next to every dataset CSV.
#[derive(Debug, Clone, Default)]
pub struct DatasetMeta {
    pub stage: String,
    pub seed: Option<u64>,
    pub stats: Vec<ColumnStats>,
    pub encodings: Vec<EncodingMap>,
    pub split_counts: Option<(usize, usize, usize)>,
    pub extra: Vec<(String, String)>,
}

/// CSV layout: feature columns, then label, split, provenance. Floats use
/// the shortest round-tripping representation, so read(write(ds)) == ds.
pub fn write_dataset_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "{},label,split,provenance",
        ds.column_names.join(",")
    )
    .map_err(io)?;
    let mut line = String::new();
    for i in 0..ds.n_rows() {
        line.clear();
        for v in ds.row(i) {
            line.push_str(&format!("{v}"));
            line.push(',');
        }
        line.push_str(&format!(
            "{},{},{}",
            ds.labels[i],
            ds.split[i].as_str(),
            ds.provenance[i].as_str()
        ));
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let all: Vec<String> = headers.iter().map(|s| s.to_string()).collect();
    if all.len() < 4 {
        return Err(Error::MalformedDataset(format!(
            "expected feature columns plus label/split/provenance, got {} columns",
            all.len()
        )));
    }
    let tail = &all[all.len() - 3..];
    if tail != ["label", "split", "provenance"] {
        return Err(Error::MalformedDataset(format!(
            "trailing columns must be label,split,provenance, got {tail:?}"
        )));
    }
    let n_cols = all.len() - 3;
    let column_names = all[..n_cols].to_vec();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    let mut provenance = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        for j in 0..n_cols {
            let raw = row.get(j).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::BadRow {
                line,
                column: column_names[j].clone(),
                value: raw.to_string(),
                reason: "not a number".into(),
            })?;
            features.push(v);
        }
        let raw_label = row.get(n_cols).unwrap_or("");
        let label: u8 = raw_label.parse().ok().filter(|l| *l <= 1).ok_or_else(|| {
            Error::BadRow {
                line,
                column: "label".into(),
                value: raw_label.to_string(),
                reason: "label must be 0 or 1".into(),
            }
        })?;
        labels.push(label);
        split.push(SplitTag::parse(row.get(n_cols + 1).unwrap_or(""))?);
        provenance.push(Provenance::parse(row.get(n_cols + 2).unwrap_or(""))?);
    }
    let mut ds = Dataset::new(column_names, features, labels)?;
    ds.split = split;
    ds.provenance = provenance;
    Ok(ds)
}

pub fn write_meta(path: &Path, meta: &DatasetMeta) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "stage={}", meta.stage).map_err(io)?;
    if let Some(seed) = meta.seed {
        writeln!(w, "seed={seed}").map_err(io)?;
    }
    if let Some((t, v, e)) = meta.split_counts {
        writeln!(w, "split.train={t}").map_err(io)?;
        writeln!(w, "split.val={v}").map_err(io)?;
        writeln!(w, "split.test={e}").map_err(io)?;
    }
    for s in &meta.stats {
        writeln!(w, "stats.{}.min={}", s.name, s.min).map_err(io)?;
        writeln!(w, "stats.{}.max={}", s.name, s.max).map_err(io)?;
        if s.constant {
            writeln!(w, "stats.{}.constant=true", s.name).map_err(io)?;
        }
    }
    for enc in &meta.encodings {
        for (code, value) in enc.values.iter().enumerate() {
            writeln!(w, "encoding.{}.{code}={value}", enc.column).map_err(io)?;
        }
    }
    for (k, v) in &meta.extra {
        writeln!(w, "{k}={v}").map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{generate_synthetic, SyntheticSpec};

    fn sample_records(n: usize) -> Vec<VmRecord> {
        // the generator needs at least 4 records; truncate for smaller cases
        let mut records = generate_synthetic(&SyntheticSpec {
            n: n.max(4),
            ..Default::default()
        })
        .unwrap();
        records.truncate(n);
        records
    }

    #[test]
    fn encode_nominal_first_appearance_order() {
        let (codes, values) = encode_nominal(&["a", "b", "a"]);
        assert_eq!(codes, vec![0, 1, 0]);
        assert_eq!(values, vec!["a", "b"]);

        let (codes, values) = encode_nominal(&["x"]);
        assert_eq!(codes, vec![0]);
        assert_eq!(values, vec!["x"]);

        let (codes, values) = encode_nominal(&["Delay-insensitive", "Interactive"]);
        assert_eq!(codes, vec![0, 1]);
        assert_eq!(values.len(), 2);
    }

    #[test]
    fn encode_nominal_is_a_bijection() {
        let column = ["q", "r", "q", "s", "r", "t", "q"];
        let (codes, values) = encode_nominal(&column);
        // every code decodes back to the original string
        for (s, &c) in column.iter().zip(&codes) {
            assert_eq!(&values[c], s);
        }
        // codes cover 0..n-1 with no gaps
        let mut seen: Vec<usize> = codes.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, (0..values.len()).collect::<Vec<_>>());
    }

    #[test]
    fn encode_records_builds_the_ten_column_layout() {
        let records = sample_records(20);
        let (ds, encodings) = encode_records(&records).unwrap();
        assert_eq!(ds.column_names, ENCODED_COLUMNS);
        assert_eq!(ds.n_rows(), 20);
        assert_eq!(encodings.len(), 3);
        // vm ids are unique, so codes run 0..n-1 in order
        for i in 0..20 {
            assert_eq!(ds.row(i)[0], i as f64);
        }
        // subscription ids repeat with period 23 > 20, deployment 57 > 20
        for (i, r) in records.iter().enumerate() {
            assert_eq!(ds.labels[i], r.category.label().unwrap());
            assert_eq!(ds.row(i)[9], r.memory);
        }
    }

    #[test]
    fn encode_records_rejects_unknown_categories() {
        let mut records = sample_records(5);
        records[2].category = crate::trace::Category::Unknown;
        assert!(matches!(
            encode_records(&records),
            Err(Error::MalformedDataset(_))
        ));
    }

    #[test]
    fn aggregate_hand_example() {
        let mut records = sample_records(1);
        records[0].created = 0.0;
        records[0].deleted = 7200.0;
        records[0].core_count = 2;
        let (ds, _) = aggregate_features(&records).unwrap();
        assert_eq!(ds.column_names, AGGREGATED_COLUMNS);
        let row = ds.row(0);
        assert_eq!(row[8], 2.0, "lifetime_hours");
        assert_eq!(row[7], 4.0, "core_hour");

        records[0].deleted = 0.0;
        let (ds, _) = aggregate_features(&records).unwrap();
        assert_eq!(ds.row(0)[7], 0.0, "zero lifetime means zero core_hour");
    }

    #[test]
    fn aggregate_reduces_ten_columns_to_nine() {
        let (encoded, _) = encode_records(&sample_records(12)).unwrap();
        assert_eq!(encoded.n_cols, 10);
        let aggregated = aggregate_dataset(&encoded).unwrap();
        assert_eq!(aggregated.n_cols, 9);
        assert_eq!(aggregated.n_rows(), 12);
        assert!(aggregated.col_index("created").is_none());
        assert!(aggregated.col_index("core_hour").is_some());
    }

    #[test]
    fn aggregate_rejects_negative_lifetime() {
        let (mut encoded, _) = encode_records(&sample_records(3)).unwrap();
        let created_i = encoded.col_index("created").unwrap();
        let deleted_i = encoded.col_index("deleted").unwrap();
        encoded.features[created_i] = 100.0;
        encoded.features[deleted_i] = 50.0;
        assert!(matches!(
            aggregate_dataset(&encoded),
            Err(Error::NegativeLifetime { .. })
        ));
    }

    #[test]
    fn minmax_hand_examples() {
        let ds = Dataset::new(
            vec!["x".into()],
            vec![2.0, 4.0, 6.0],
            vec![0, 1, 0],
        )
        .unwrap();
        let (norm, stats) = minmax_normalize(&ds, StatsScope::WholeData).unwrap();
        assert_eq!(norm.features, vec![0.0, 0.5, 1.0]);
        assert_eq!(stats[0].min, 2.0);
        assert_eq!(stats[0].max, 6.0);
        assert!(!stats[0].constant);
    }

    #[test]
    fn minmax_constant_column_maps_to_zero_with_flag() {
        let ds = Dataset::new(
            vec!["c".into(), "x".into()],
            vec![7.0, 1.0, 7.0, 3.0, 7.0, 2.0],
            vec![0, 1, 0],
        )
        .unwrap();
        let (norm, stats) = minmax_normalize(&ds, StatsScope::WholeData).unwrap();
        assert!(stats[0].constant);
        assert!(!stats[1].constant);
        assert_eq!(norm.column(0), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn minmax_whole_data_hits_both_endpoints() {
        let (ds, _) = aggregate_features(&sample_records(40)).unwrap();
        let (norm, stats) = minmax_normalize(&ds, StatsScope::WholeData).unwrap();
        for j in 0..norm.n_cols {
            let col = norm.column(j);
            assert!(col.iter().all(|&v| (0.0..=1.0).contains(&v)));
            if !stats[j].constant {
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(lo.abs() < 1e-12, "col {j} min {lo}");
                assert!((hi - 1.0).abs() < 1e-12, "col {j} max {hi}");
            }
        }
    }

    #[test]
    fn minmax_train_only_uses_train_statistics_and_clamps() {
        let mut ds = Dataset::new(
            vec!["x".into()],
            vec![0.0, 10.0, 20.0, 100.0],
            vec![0, 1, 0, 1],
        )
        .unwrap();
        ds.split = vec![
            SplitTag::Train,
            SplitTag::Train,
            SplitTag::Val,
            SplitTag::Test,
        ];
        let (norm, stats) = minmax_normalize(&ds, StatsScope::TrainOnly).unwrap();
        assert_eq!(stats[0].min, 0.0);
        assert_eq!(stats[0].max, 10.0);
        assert_eq!(norm.features, vec![0.0, 1.0, 1.0, 1.0], "out-of-range rows clamp");

        ds.split = vec![SplitTag::Unassigned; 4];
        assert!(matches!(
            minmax_normalize(&ds, StatsScope::TrainOnly),
            Err(Error::EmptySplit { .. })
        ));
    }

    #[test]
    fn split_ten_rows_is_7_1_2() {
        let (mut ds, _) = aggregate_features(&sample_records(10)).unwrap();
        let counts = split(&mut ds, (0.7, 0.1, 0.2), 42).unwrap();
        assert_eq!(counts, (7, 1, 2));
        assert_eq!(ds.split_indices(SplitTag::Train).len(), 7);
        assert_eq!(ds.split_indices(SplitTag::Val).len(), 1);
        assert_eq!(ds.split_indices(SplitTag::Test).len(), 2);
        assert!(ds.split_indices(SplitTag::Unassigned).is_empty());
    }

    #[test]
    fn split_is_seed_deterministic_and_seed_sensitive() {
        let (ds0, _) = aggregate_features(&sample_records(50)).unwrap();
        let mut a = ds0.clone();
        let mut b = ds0.clone();
        let mut c = ds0.clone();
        split(&mut a, (0.7, 0.1, 0.2), 42).unwrap();
        split(&mut b, (0.7, 0.1, 0.2), 42).unwrap();
        split(&mut c, (0.7, 0.1, 0.2), 43).unwrap();
        assert_eq!(a.split, b.split);
        assert_ne!(a.split, c.split);
    }

    #[test]
    fn split_counts_stay_within_one_of_floor() {
        for n in [3usize, 10, 17, 101, 1000] {
            let (mut ds, _) = aggregate_features(&sample_records(n)).unwrap();
            let (t, v, e) = split(&mut ds, (0.7, 0.1, 0.2), 1).unwrap();
            assert_eq!(t + v + e, n);
            assert_eq!(t, (n as f64 * 0.7).floor() as usize);
            assert_eq!(v, (n as f64 * 0.1).floor() as usize);
            let fe = (n as f64 * 0.2).floor() as usize;
            assert!(e >= fe && e <= fe + 2, "test count {e} vs floor {fe}");
        }
    }

    #[test]
    fn split_validates_inputs() {
        let (mut ds, _) = aggregate_features(&sample_records(10)).unwrap();
        assert!(matches!(
            split(&mut ds, (0.5, 0.1, 0.2), 42),
            Err(Error::BadFractions(_))
        ));
        let few = Dataset::new(vec!["x".into()], vec![1.0, 2.0], vec![0, 1]).unwrap();
        assert!(matches!(
            split(&mut few.clone(), (0.7, 0.1, 0.2), 42),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn aggregate_and_normalize_commute_with_row_reordering() {
        let records = sample_records(30);
        let (ds, _) = aggregate_features(&records).unwrap();
        let (norm, _) = minmax_normalize(&ds, StatsScope::WholeData).unwrap();

        // reverse the records, rerun, and compare against the reversed output
        let reversed: Vec<VmRecord> = records.iter().rev().cloned().collect();
        let (ds_r, _) = aggregate_features(&reversed).unwrap();
        let (norm_r, _) = minmax_normalize(&ds_r, StatsScope::WholeData).unwrap();
        for i in 0..30 {
            // vm_id codes differ by construction (first-appearance order), so
            // compare the purely numeric columns
            for j in 3..9 {
                assert!(
                    (norm.row(i)[j] - norm_r.row(29 - i)[j]).abs() < 1e-15,
                    "row {i} col {j}"
                );
            }
        }
    }

    #[test]
    fn drop_columns_keeps_remaining_order() {
        let (ds, _) = aggregate_features(&sample_records(8)).unwrap();
        let slim = ds
            .drop_columns(&["vm_id", "subscription_id", "deployment_id"])
            .unwrap();
        assert_eq!(
            slim.column_names,
            vec!["cpu_min", "cpu_avg", "cpu_max", "memory", "core_hour", "lifetime_hours"]
        );
        assert_eq!(slim.n_rows(), 8);
        for i in 0..8 {
            assert_eq!(slim.row(i), &ds.row(i)[3..]);
        }
        assert_eq!(slim.labels, ds.labels);

        assert!(matches!(
            ds.drop_columns(&["no_such_column"]),
            Err(Error::MissingColumn { .. })
        ));
    }

    #[test]
    fn hash_is_content_sensitive() {
        let (ds, _) = aggregate_features(&sample_records(10)).unwrap();
        let h1 = dataset_hash(&ds);
        let h2 = dataset_hash(&ds.clone());
        assert_eq!(h1, h2);

        let mut tweaked = ds.clone();
        tweaked.features[5] += 1e-9;
        assert_ne!(h1, dataset_hash(&tweaked));

        let mut relabeled = ds.clone();
        relabeled.labels[0] ^= 1;
        assert_ne!(h1, dataset_hash(&relabeled));

        let mut retagged = ds;
        retagged.split[0] = SplitTag::Test;
        assert_ne!(h1, dataset_hash(&retagged));
    }

    #[test]
    fn dataset_csv_roundtrip_is_exact() {
        let (mut ds, _) = aggregate_features(&sample_records(15)).unwrap();
        split(&mut ds, (0.7, 0.1, 0.2), 42).unwrap();
        ds.provenance[3] = Provenance::Synthetic;
        ds.provenance[4] = Provenance::Duplicate;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        write_dataset_csv(&path, &ds).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn malformed_dataset_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b,label,split,provenance\n1,2,5,train,real\n").unwrap();
        assert!(matches!(
            read_dataset_csv(&path),
            Err(Error::BadRow { .. })
        ));
        std::fs::write(&path, "a,b,label\n1,2,0\n").unwrap();
        assert!(matches!(
            read_dataset_csv(&path),
            Err(Error::MalformedDataset(_))
        ));
    }

    #[test]
    fn meta_file_lists_stats_and_encodings() {
        let (ds, encodings) = aggregate_features(&sample_records(6)).unwrap();
        let (_, stats) = minmax_normalize(&ds, StatsScope::WholeData).unwrap();
        let meta = DatasetMeta {
            stage: "normalized".into(),
            seed: Some(42),
            stats,
            encodings,
            split_counts: Some((4, 1, 1)),
            extra: vec![("rows".into(), "6".into())],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.meta");
        write_meta(&path, &meta).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("stage=normalized"));
        assert!(text.contains("seed=42"));
        assert!(text.contains("split.train=4"));
        assert!(text.contains("stats.cpu_avg.min="));
        assert!(text.contains("encoding.vm_id.0=vm-000000"));
        assert!(text.contains("rows=6"));
    }
}
