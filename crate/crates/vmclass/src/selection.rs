//! Migration-candidate selection: rank the VMs of a host under one of six
//! policies.
//!
//! Every policy first canonicalizes the host's VM list by sorting on
//! `vm_id`, so rankings are invariant to input order; score ties also break
//! toward the lexicographically smaller `vm_id`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Grid, Model};

/// Per-VM runtime view used for selection. `features` holds the normalized
/// classifier inputs and may be empty for policies that do not classify.
#[derive(Debug, Clone, PartialEq)]
pub struct VmRuntime {
    pub vm_id: String,
    pub memory_used: f64,
    pub cpu_series: Vec<f64>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostSnapshot {
    pub host_id: String,
    /// Migration bandwidth in memory units per second.
    pub bandwidth: f64,
    pub vms: Vec<VmRuntime>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedVm {
    pub vm_id: String,
    pub score: f64,
    /// Predicted class under `classifier_first`, absent otherwise.
    pub class: Option<u8>,
    /// The score fell back to a defined default (e.g. zero-variance
    /// correlation).
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MigrationRanking {
    pub host_id: String,
    pub policy: Policy,
    /// Migration candidates, best first.
    pub entries: Vec<RankedVm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Random,
    MinMigrationTime,
    MinUtilization,
    MaxCorrelation,
    UtilizationSlope,
    ClassifierFirst,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::Random,
        Policy::MinMigrationTime,
        Policy::MinUtilization,
        Policy::MaxCorrelation,
        Policy::UtilizationSlope,
        Policy::ClassifierFirst,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Random => "random",
            Policy::MinMigrationTime => "min_migration_time",
            Policy::MinUtilization => "min_utilization",
            Policy::MaxCorrelation => "max_correlation",
            Policy::UtilizationSlope => "utilization_slope",
            Policy::ClassifierFirst => "classifier_first",
        }
    }

    pub fn parse(name: &str) -> Result<Policy> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::UnknownPolicy {
                name: name.to_string(),
                valid: Policy::ALL.map(|p| p.name()).join(", "),
            })
    }
}

/// Reference series for correlation scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorrelationTarget {
    /// Element-wise sum of every other VM's series.
    #[default]
    OthersSum,
    /// Element-wise sum over all VMs, the scored one included.
    HostTotal,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelectOptions {
    /// Drives the `random` policy only.
    pub seed: u64,
    pub correlation_target: CorrelationTarget,
}

fn validate_host(host: &HostSnapshot) -> Result<()> {
    if host.vms.is_empty() {
        return Err(Error::EmptyHost {
            host: host.host_id.clone(),
        });
    }
    if !(host.bandwidth.is_finite() && host.bandwidth > 0.0) {
        return Err(Error::BadHost {
            host: host.host_id.clone(),
            reason: format!("bandwidth must be positive, got {}", host.bandwidth),
        });
    }
    for vm in &host.vms {
        if !(vm.memory_used.is_finite() && vm.memory_used >= 0.0) {
            return Err(Error::BadVmRuntime {
                vm_id: vm.vm_id.clone(),
                reason: format!("memory_used must be non-negative, got {}", vm.memory_used),
            });
        }
        if let Some(v) = vm
            .cpu_series
            .iter()
            .find(|v| !(0.0..=100.0).contains(*v))
        {
            return Err(Error::BadVmRuntime {
                vm_id: vm.vm_id.clone(),
                reason: format!("cpu_series values must be percentages in [0, 100], got {v}"),
            });
        }
    }
    let mut ids: Vec<&str> = host.vms.iter().map(|v| v.vm_id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::BadHost {
            host: host.host_id.clone(),
            reason: "duplicate vm_id".into(),
        });
    }
    Ok(())
}

/// VMs sorted by `vm_id`; the common starting point of every policy.
fn canonical(host: &HostSnapshot) -> Vec<&VmRuntime> {
    let mut vms: Vec<&VmRuntime> = host.vms.iter().collect();
    vms.sort_by(|a, b| a.vm_id.cmp(&b.vm_id));
    vms
}

fn require_series_len(host: &HostSnapshot, vms: &[&VmRuntime], min_len: usize) -> Result<()> {
    for vm in vms {
        if vm.cpu_series.len() < min_len {
            return Err(Error::BadVmRuntime {
                vm_id: vm.vm_id.clone(),
                reason: format!(
                    "cpu_series needs at least {min_len} samples, got {}",
                    vm.cpu_series.len()
                ),
            });
        }
    }
    if vms.iter().any(|v| v.cpu_series.len() != vms[0].cpu_series.len()) {
        return Err(Error::BadHost {
            host: host.host_id.clone(),
            reason: "cpu_series lengths differ across VMs".into(),
        });
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Pearson correlation; `None` when either side has zero variance.
fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Least-squares slope of `y` against time steps 0, 1, 2, ...
fn ls_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mt = (n - 1.0) / 2.0;
    let my = mean(y);
    let mut sty = 0.0;
    let mut stt = 0.0;
    for (t, &v) in y.iter().enumerate() {
        let dt = t as f64 - mt;
        sty += dt * (v - my);
        stt += dt * dt;
    }
    sty / stt
}

fn ranking(host: &HostSnapshot, policy: Policy, entries: Vec<RankedVm>) -> MigrationRanking {
    MigrationRanking {
        host_id: host.host_id.clone(),
        policy,
        entries,
    }
}

/// Ascending-score ranking helper; ties fall back to `vm_id` order, which
/// the canonical sort already established (stable sort).
fn rank_by_score(vms: &[&VmRuntime], scores: &[f64], descending: bool) -> Vec<RankedVm> {
    let mut order: Vec<usize> = (0..vms.len()).collect();
    order.sort_by(|&a, &b| {
        let cmp = scores[a].total_cmp(&scores[b]);
        if descending {
            cmp.reverse()
        } else {
            cmp
        }
    });
    order
        .into_iter()
        .map(|i| RankedVm {
            vm_id: vms[i].vm_id.clone(),
            score: scores[i],
            class: None,
            flagged: false,
        })
        .collect()
}

/// Uniform random order drawn from a seeded shuffle; the score records the
/// draw position.
pub fn select_random(host: &HostSnapshot, seed: u64) -> Result<MigrationRanking> {
    validate_host(host)?;
    let mut vms = canonical(host);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vms.shuffle(&mut rng);
    let entries = vms
        .into_iter()
        .enumerate()
        .map(|(i, vm)| RankedVm {
            vm_id: vm.vm_id.clone(),
            score: i as f64,
            class: None,
            flagged: false,
        })
        .collect();
    Ok(ranking(host, Policy::Random, entries))
}

/// Shortest migration first: `memory_used / bandwidth` ascending.
pub fn select_min_migration_time(host: &HostSnapshot) -> Result<MigrationRanking> {
    validate_host(host)?;
    let vms = canonical(host);
    let scores: Vec<f64> = vms.iter().map(|v| v.memory_used / host.bandwidth).collect();
    Ok(ranking(
        host,
        Policy::MinMigrationTime,
        rank_by_score(&vms, &scores, false),
    ))
}

/// Least loaded first: mean of the CPU series ascending.
pub fn select_min_utilization(host: &HostSnapshot) -> Result<MigrationRanking> {
    validate_host(host)?;
    let vms = canonical(host);
    require_series_len(host, &vms, 1)?;
    let scores: Vec<f64> = vms.iter().map(|v| mean(&v.cpu_series)).collect();
    Ok(ranking(
        host,
        Policy::MinUtilization,
        rank_by_score(&vms, &scores, false),
    ))
}

/// Most load-correlated first: Pearson correlation of each VM's series
/// against the reference series, descending. Zero-variance pairs score 0
/// and are flagged.
pub fn select_max_correlation(
    host: &HostSnapshot,
    target: CorrelationTarget,
) -> Result<MigrationRanking> {
    validate_host(host)?;
    let vms = canonical(host);
    if vms.len() < 2 {
        return Err(Error::BadHost {
            host: host.host_id.clone(),
            reason: "correlation needs at least two VMs".into(),
        });
    }
    require_series_len(host, &vms, 2)?;
    let len = vms[0].cpu_series.len();
    let mut total = vec![0.0; len];
    for vm in &vms {
        for (t, &v) in vm.cpu_series.iter().enumerate() {
            total[t] += v;
        }
    }

    let mut scored: Vec<(f64, bool)> = Vec::with_capacity(vms.len());
    for vm in &vms {
        let reference: Vec<f64> = match target {
            CorrelationTarget::HostTotal => total.clone(),
            CorrelationTarget::OthersSum => total
                .iter()
                .zip(&vm.cpu_series)
                .map(|(&sum, &own)| sum - own)
                .collect(),
        };
        match pearson(&vm.cpu_series, &reference) {
            Some(r) => scored.push((r, false)),
            None => scored.push((0.0, true)),
        }
    }
    let scores: Vec<f64> = scored.iter().map(|&(r, _)| r).collect();
    let mut entries = rank_by_score(&vms, &scores, true);
    for entry in &mut entries {
        let i = vms.iter().position(|v| v.vm_id == entry.vm_id).unwrap();
        entry.flagged = scored[i].1;
    }
    Ok(ranking(host, Policy::MaxCorrelation, entries))
}

/// Fastest-growing utilization first: least-squares slope of the CPU series
/// over time, descending.
pub fn select_utilization_slope(host: &HostSnapshot) -> Result<MigrationRanking> {
    validate_host(host)?;
    let vms = canonical(host);
    require_series_len(host, &vms, 2)?;
    let scores: Vec<f64> = vms.iter().map(|v| ls_slope(&v.cpu_series)).collect();
    Ok(ranking(
        host,
        Policy::UtilizationSlope,
        rank_by_score(&vms, &scores, true),
    ))
}

/// Classifier-first ranking given precomputed classes aligned with the
/// canonical (vm_id-sorted) order: delay-insensitive VMs (class 0) form the
/// front block, interactive ones the back block, each block ordered by
/// migration time and then vm_id.
pub fn rank_classifier_first(host: &HostSnapshot, classes: &[u8]) -> Result<MigrationRanking> {
    validate_host(host)?;
    let vms = canonical(host);
    if classes.len() != vms.len() {
        return Err(Error::ShapeMismatch {
            op: "rank_classifier_first",
            expected: format!("{} classes", vms.len()),
            got: format!("{}", classes.len()),
        });
    }
    let mut order: Vec<usize> = (0..vms.len()).collect();
    let time = |i: usize| vms[i].memory_used / host.bandwidth;
    order.sort_by(|&a, &b| {
        classes[a]
            .cmp(&classes[b])
            .then(time(a).total_cmp(&time(b)))
    });
    let entries = order
        .into_iter()
        .map(|i| RankedVm {
            vm_id: vms[i].vm_id.clone(),
            score: time(i),
            class: Some(classes[i]),
            flagged: false,
        })
        .collect();
    Ok(ranking(host, Policy::ClassifierFirst, entries))
}

/// Classify the host's VMs with the model, then rank delay-insensitive
/// candidates ahead of interactive ones.
pub fn select_classifier_first(host: &HostSnapshot, model: &Model) -> Result<MigrationRanking> {
    validate_host(host)?;
    let vms = canonical(host);
    let want = model.arch.input_len;
    for vm in &vms {
        if vm.features.len() != want {
            return Err(Error::BadVmRuntime {
                vm_id: vm.vm_id.clone(),
                reason: format!(
                    "classifier needs {want} features, got {}",
                    vm.features.len()
                ),
            });
        }
    }
    let mut classes = Vec::with_capacity(vms.len());
    for chunk in vms.chunks(4096) {
        let mut data = Vec::with_capacity(chunk.len() * want);
        for vm in chunk {
            data.extend_from_slice(&vm.features);
        }
        let x = Grid::from_vec(&[chunk.len(), want], data)?;
        classes.extend(model.predict(&x)?);
    }
    rank_classifier_first(host, &classes)
}

/// Run one policy against one host.
pub fn rank(
    host: &HostSnapshot,
    policy: Policy,
    opts: &SelectOptions,
    model: Option<&Model>,
) -> Result<MigrationRanking> {
    match policy {
        Policy::Random => select_random(host, opts.seed),
        Policy::MinMigrationTime => select_min_migration_time(host),
        Policy::MinUtilization => select_min_utilization(host),
        Policy::MaxCorrelation => select_max_correlation(host, opts.correlation_target),
        Policy::UtilizationSlope => select_utilization_slope(host),
        Policy::ClassifierFirst => {
            let model = model.ok_or_else(|| {
                Error::Config("policy classifier_first requires a model checkpoint".into())
            })?;
            select_classifier_first(host, model)
        }
    }
}

/// Host CSV layout: `host_id,bandwidth,vm_id,memory_used,cpu_series,<features...>`
/// with the series semicolon-joined (e.g. `10;20;30`). Rows group into
/// hosts by `host_id` in order of first appearance.
pub fn read_hosts_csv(path: &Path) -> Result<Vec<HostSnapshot>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let fixed = ["host_id", "bandwidth", "vm_id", "memory_used", "cpu_series"];
    for (i, name) in fixed.iter().enumerate() {
        if headers.get(i) != Some(name) {
            return Err(Error::MissingColumn {
                column: name.to_string(),
            });
        }
    }
    let n_features = headers.len() - fixed.len();

    let mut hosts: Vec<HostSnapshot> = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |column: &str, value: &str, reason: &str| Error::BadRow {
            line,
            column: column.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        let float = |column: &str, raw: &str| -> Result<f64> {
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(column, raw, "not a finite number"))
        };

        let host_id = row.get(0).unwrap_or("").to_string();
        if host_id.is_empty() {
            return Err(bad("host_id", "", "must not be empty"));
        }
        let bandwidth = float("bandwidth", row.get(1).unwrap_or(""))?;
        let vm_id = row.get(2).unwrap_or("").to_string();
        if vm_id.is_empty() {
            return Err(bad("vm_id", "", "must not be empty"));
        }
        let memory_used = float("memory_used", row.get(3).unwrap_or(""))?;
        let series_raw = row.get(4).unwrap_or("");
        let mut cpu_series = Vec::new();
        for part in series_raw.split(';').filter(|p| !p.is_empty()) {
            cpu_series.push(float("cpu_series", part)?);
        }
        let mut features = Vec::with_capacity(n_features);
        for i in 0..n_features {
            features.push(float(
                headers.get(fixed.len() + i).unwrap_or("feature"),
                row.get(fixed.len() + i).unwrap_or(""),
            )?);
        }

        let vm = VmRuntime {
            vm_id,
            memory_used,
            cpu_series,
            features,
        };
        match hosts.iter_mut().find(|h| h.host_id == host_id) {
            Some(host) => {
                if host.bandwidth != bandwidth {
                    return Err(Error::BadHost {
                        host: host_id,
                        reason: format!(
                            "inconsistent bandwidth ({} vs {bandwidth})",
                            host.bandwidth
                        ),
                    });
                }
                host.vms.push(vm);
            }
            None => hosts.push(HostSnapshot {
                host_id,
                bandwidth,
                vms: vec![vm],
            }),
        }
    }
    Ok(hosts)
}

/// Ranking CSV: `host_id,policy,rank,vm_id,score,class,flagged`; rank 1 is
/// the best candidate and the class field is empty for policies that do
/// not classify.
pub fn write_ranking_csv(path: &Path, ranking: &MigrationRanking) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "host_id,policy,rank,vm_id,score,class,flagged").map_err(io)?;
    for (i, entry) in ranking.entries.iter().enumerate() {
        let class = entry.class.map(|c| c.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            ranking.host_id,
            ranking.policy.name(),
            i + 1,
            entry.vm_id,
            entry.score,
            class,
            entry.flagged
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
