//! VM trace records: CSV parsing, cleaning, and deterministic synthetic
//! trace generation for desk-scale experiments.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Workload class of a VM. `Unknown` rows are removed by [`clean`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    /// Delay-insensitive workload (label 0): tolerant of migration.
    DelayInsensitive,
    /// Interactive, delay-sensitive workload (label 1).
    Interactive,
    Unknown,
}

impl Category {
    /// Case-insensitive parse; separators (`-`, `_`, spaces) are ignored, so
    /// "Delay-insensitive", "delay_insensitive" and "DelayInsensitive" all
    /// match. Anything else maps to `Unknown`.
    pub fn parse(s: &str) -> Category {
        let canon: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .flat_map(|c| c.to_lowercase())
            .collect();
        match canon.as_str() {
            "delayinsensitive" => Category::DelayInsensitive,
            "interactive" => Category::Interactive,
            _ => Category::Unknown,
        }
    }

    /// Binary label; `None` for `Unknown`.
    pub fn label(&self) -> Option<u8> {
        match self {
            Category::DelayInsensitive => Some(0),
            Category::Interactive => Some(1),
            Category::Unknown => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::DelayInsensitive => "Delay-insensitive",
            Category::Interactive => "Interactive",
            Category::Unknown => "Unknown",
        }
    }
}

/// One row of the per-VM summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct VmRecord {
    pub vm_id: String,
    pub subscription_id: String,
    pub deployment_id: String,
    /// Seconds since trace epoch.
    pub created: f64,
    /// Seconds since trace epoch; never before `created`.
    pub deleted: f64,
    pub cpu_min: f64,
    pub cpu_avg: f64,
    pub cpu_max: f64,
    pub core_count: u32,
    /// Gigabytes.
    pub memory: f64,
    pub category: Category,
}

impl VmRecord {
    pub fn lifetime_hours(&self) -> f64 {
        (self.deleted - self.created) / 3600.0
    }

    pub fn core_hour(&self) -> f64 {
        self.lifetime_hours() * self.core_count as f64
    }
}

/// What to do with a row that fails numeric validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BadRowPolicy {
    /// Abort parsing with a row error naming line and column.
    #[default]
    Fail,
    /// Drop the row and count it.
    Skip,
}

/// Deterministic synthetic trace: Interactive VMs draw high CPU averages and
/// short lifetimes, DelayInsensitive VMs low averages and long lifetimes, so
/// the classes are linearly separable on `cpu_avg` when `label_noise` is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub seed: u64,
    /// Fraction of Interactive (label 1) records, exclusive (0, 1).
    pub class_ratio: f64,
    /// Probability of flipping a record's category label.
    pub label_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            seed: 42,
            class_ratio: 0.5,
            label_noise: 0.0,
        }
    }
}

/// Where records come from.
#[derive(Debug, Clone)]
pub enum TraceSource {
    CsvFile {
        path: PathBuf,
        bad_rows: BadRowPolicy,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone)]
pub struct ParseReport {
    pub records: Vec<VmRecord>,
    /// Rows dropped under [`BadRowPolicy::Skip`].
    pub skipped_rows: usize,
    /// True when the third CPU column was supplied under the `p95` header;
    /// the min <= avg ordering check is waived in that case.
    pub used_p95_alias: bool,
}

pub const TRACE_COLUMNS: [&str; 11] = [
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
    "category",
];

pub fn parse_trace(source: &TraceSource) -> Result<ParseReport> {
    match source {
        TraceSource::CsvFile { path, bad_rows } => parse_trace_csv(path, *bad_rows),
        TraceSource::Synthetic(spec) => Ok(ParseReport {
            records: generate_synthetic(spec)?,
            skipped_rows: 0,
            used_p95_alias: false,
        }),
    }
}

pub fn parse_trace_csv(path: &Path, bad_rows: BadRowPolicy) -> Result<ParseReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers = reader.headers()?.clone();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        index.insert(h.to_ascii_lowercase(), i);
    }
    let mut used_p95_alias = false;
    let mut cols = [0usize; 11];
    for (slot, name) in TRACE_COLUMNS.iter().enumerate() {
        let found = index.get(*name).copied().or_else(|| {
            if *name == "cpu_min" {
                // some trace releases publish a p95 CPU column instead of min
                let alias = index.get("p95").or_else(|| index.get("cpu_p95")).copied();
                if alias.is_some() {
                    used_p95_alias = true;
                }
                alias
            } else {
                None
            }
        });
        cols[slot] = found.ok_or_else(|| Error::MissingColumn {
            column: name.to_string(),
        })?;
    }

    let mut records = Vec::new();
    let mut skipped_rows = 0usize;
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&row, &cols, line, used_p95_alias) {
            Ok(record) => records.push(record),
            Err(e) => match bad_rows {
                BadRowPolicy::Fail => return Err(e),
                BadRowPolicy::Skip => skipped_rows += 1,
            },
        }
    }
    Ok(ParseReport {
        records,
        skipped_rows,
        used_p95_alias,
    })
}

fn parse_row(
    row: &csv::StringRecord,
    cols: &[usize; 11],
    line: u64,
    p95_alias: bool,
) -> Result<VmRecord> {
    let field = |slot: usize| -> &str { row.get(cols[slot]).unwrap_or("") };
    let numeric = |slot: usize| -> Result<f64> {
        let raw = field(slot);
        let v: f64 = raw.parse().map_err(|_| {
            bad_row(line, TRACE_COLUMNS[slot], raw, "not a number")
        })?;
        if !v.is_finite() {
            return Err(bad_row(line, TRACE_COLUMNS[slot], raw, "not finite"));
        }
        Ok(v)
    };

    let created = numeric(3)?;
    let deleted = numeric(4)?;
    if deleted < created {
        return Err(bad_row(
            line,
            "deleted",
            field(4),
            "deleted precedes created",
        ));
    }
    let cpu_min = numeric(5)?;
    let cpu_avg = numeric(6)?;
    let cpu_max = numeric(7)?;
    for (slot, v) in [(5, cpu_min), (6, cpu_avg), (7, cpu_max)] {
        if !(0.0..=100.0).contains(&v) {
            return Err(bad_row(
                line,
                TRACE_COLUMNS[slot],
                field(slot),
                "cpu percentage outside [0, 100]",
            ));
        }
    }
    // Ordering holds for min <= avg <= max but not when the min slot actually
    // carries a p95 reading, so it is only enforced for the canonical header.
    if !p95_alias && !(cpu_min <= cpu_avg && cpu_avg <= cpu_max) {
        return Err(bad_row(
            line,
            "cpu_avg",
            field(6),
            "cpu ordering min <= avg <= max violated",
        ));
    }
    let core_raw = numeric(8)?;
    if core_raw <= 0.0 || core_raw.fract() != 0.0 || core_raw > u32::MAX as f64 {
        return Err(bad_row(
            line,
            "core_count",
            field(8),
            "not a positive integer",
        ));
    }
    let memory = numeric(9)?;
    if memory <= 0.0 {
        return Err(bad_row(line, "memory", field(9), "must be positive"));
    }

    Ok(VmRecord {
        vm_id: field(0).to_string(),
        subscription_id: field(1).to_string(),
        deployment_id: field(2).to_string(),
        created,
        deleted,
        cpu_min,
        cpu_avg,
        cpu_max,
        core_count: core_raw as u32,
        memory,
        category: Category::parse(field(10)),
    })
}

fn bad_row(line: u64, column: &str, value: &str, reason: &str) -> Error {
    Error::BadRow {
        line,
        column: column.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

/// Drop records with an `Unknown` category, preserving order. Idempotent.
pub fn clean(records: Vec<VmRecord>) -> Vec<VmRecord> {
    records
        .into_iter()
        .filter(|r| r.category != Category::Unknown)
        .collect()
}

/// Generate a deterministic synthetic trace. Class counts are exact:
/// `round(n * class_ratio)` records are Interactive (before label noise).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<VmRecord>> {
    if spec.n < 4 {
        return Err(Error::TooFewRows {
            needed: 4,
            got: spec.n,
        });
    }
    if !(0.0..1.0).contains(&spec.class_ratio) || spec.class_ratio == 0.0 {
        return Err(Error::Config(format!(
            "class_ratio must be in (0, 1), got {}",
            spec.class_ratio
        )));
    }
    if !(0.0..1.0).contains(&spec.label_noise) {
        return Err(Error::Config(format!(
            "label_noise must be in [0, 1), got {}",
            spec.label_noise
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let n_interactive = ((n as f64 * spec.class_ratio).round() as usize).clamp(1, n - 1);
    let mut labels = vec![1u8; n_interactive];
    labels.resize(n, 0);
    labels.shuffle(&mut rng);

    let mut records = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let interactive = label == 1;
        let cpu_avg = if interactive {
            rng.random_range(60.0..95.0)
        } else {
            rng.random_range(5.0..40.0)
        };
        let lifetime_hours = if interactive {
            rng.random_range(0.5..6.0)
        } else {
            rng.random_range(24.0..720.0)
        };
        let cpu_min = cpu_avg * rng.random_range(0.2..0.8);
        let cpu_max = cpu_avg + (100.0 - cpu_avg) * rng.random_range(0.1..0.5);
        let core_count = [1u32, 2, 4, 8][rng.random_range(0..4)];
        let memory = rng.random_range(0.75..64.0);
        let created = rng.random_range(0.0..2_592_000.0);
        let flip = rng.random::<f64>() < spec.label_noise;

        let observed = interactive != flip;
        records.push(VmRecord {
            vm_id: format!("vm-{i:06}"),
            subscription_id: format!("sub-{:03}", i % 23),
            deployment_id: format!("dep-{:03}", i % 57),
            created,
            deleted: created + lifetime_hours * 3600.0,
            cpu_min,
            cpu_avg,
            cpu_max,
            core_count,
            memory,
            category: if observed {
                Category::Interactive
            } else {
                Category::DelayInsensitive
            },
        });
    }
    Ok(records)
}

/// Write records in the canonical 11-column CSV layout. Floats use the
/// shortest representation that round-trips, so parse(write(r)) == r.
pub fn write_trace_csv(path: &Path, records: &[VmRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", TRACE_COLUMNS.join(",")).map_err(io)?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.vm_id,
            r.subscription_id,
            r.deployment_id,
            r.created,
            r.deleted,
            r.cpu_min,
            r.cpu_avg,
            r.cpu_max,
            r.core_count,
            r.memory,
            r.category.as_str()
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
