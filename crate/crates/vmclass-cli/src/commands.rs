//! Subcommand implementations.
//!
//! Each command writes its outputs under `<output_dir>/<command>/` along
//! with a `resolved.config` capturing every effective option. All outputs
//! are deterministic for a given configuration except `train/manifest.txt`,
//! the one file that records wall-clock timings.

use std::fs;
use std::path::{Path, PathBuf};

use vmclass::balance::{balance, BalanceMethod};
use vmclass::dataset::{
    self, ColumnStats, Dataset, DatasetMeta, SplitTag, StatsScope,
};
use vmclass::nn::Checkpoint;
use vmclass::report::{
    read_metrics_csv, write_curves_csv, write_manifest, write_metrics_csv, write_summary_csv,
};
use vmclass::selection::{self, Policy, SelectOptions};
use vmclass::trace::{self, BadRowPolicy, SyntheticSpec, TraceSource, VmRecord};
use vmclass::metrics::EvalMetrics;
use vmclass::train::{self, MultiRunSummary};
use vmclass::{Error, Result};

use crate::config::RunConfig;

/// Encoded columns holding identifiers rather than workload measurements.
const ID_COLUMNS: [&str; 3] = ["vm_id", "subscription_id", "deployment_id"];

fn synthetic_spec(cfg: &RunConfig) -> SyntheticSpec {
    SyntheticSpec {
        n: cfg.synthetic_n.unwrap_or(SyntheticSpec::default().n),
        seed: cfg.synthetic_seed,
        class_ratio: cfg.synthetic_ratio,
        label_noise: cfg.synthetic_noise,
    }
}

fn category_counts(records: &[VmRecord]) -> (usize, usize) {
    let mut counts = [0usize; 2];
    for r in records {
        if let Some(label) = r.category.label() {
            counts[label as usize] += 1;
        }
    }
    (counts[0], counts[1])
}

fn hash_hex(ds: &Dataset) -> String {
    format!("{:016x}", dataset::dataset_hash(ds))
}

/// File-name-safe form of an external identifier.
fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir
        .join("train")
        .join("runs")
        .join(format!("run-{}", cfg.base_seed))
        .join("checkpoint.bin")
}

fn default_encoded(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("ingest").join("encoded.csv")
}

pub fn cmd_synthgen(cfg: &RunConfig) -> Result<()> {
    let spec = synthetic_spec(cfg);
    let records = trace::generate_synthetic(&spec)?;
    let dir = cfg.ensure_dir("synthgen")?;
    let path = dir.join("trace.csv");
    trace::write_trace_csv(&path, &records)?;
    cfg.write_resolved(&dir.join("resolved.config"))?;
    let (n0, n1) = category_counts(&records);
    println!("rows={} seed={}", records.len(), spec.seed);
    println!("class_counts delay_insensitive={n0} interactive={n1}");
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let source = match &cfg.input {
        Some(path) => TraceSource::CsvFile {
            path: path.clone(),
            bad_rows: if cfg.skip_bad_rows {
                BadRowPolicy::Skip
            } else {
                BadRowPolicy::Fail
            },
        },
        None => TraceSource::Synthetic(synthetic_spec(cfg)),
    };
    let parsed = trace::parse_trace(&source)?;
    let rows_read = parsed.records.len();
    let records = trace::clean(parsed.records);
    let rows_clean = records.len();
    let (encoded, encodings) = dataset::encode_records(&records)?;
    let (n0, n1) = encoded.class_counts();

    let dir = cfg.ensure_dir("ingest")?;
    dataset::write_dataset_csv(&dir.join("encoded.csv"), &encoded)?;
    dataset::write_meta(
        &dir.join("encoded.meta"),
        &DatasetMeta {
            stage: "encoded".into(),
            seed: None,
            stats: vec![],
            encodings: encodings.clone(),
            split_counts: None,
            extra: vec![
                ("rows_read".into(), rows_read.to_string()),
                ("rows_skipped".into(), parsed.skipped_rows.to_string()),
                ("rows_dropped".into(), (rows_read - rows_clean).to_string()),
                ("rows_after_cleaning".into(), rows_clean.to_string()),
                ("hash".into(), hash_hex(&encoded)),
            ],
        },
    )?;

    let aggregated = dataset::aggregate_dataset(&encoded)?;
    let (normalized, stats) = dataset::minmax_normalize(&aggregated, StatsScope::WholeData)?;
    dataset::write_dataset_csv(&dir.join("dataset.csv"), &normalized)?;
    dataset::write_meta(
        &dir.join("dataset.meta"),
        &DatasetMeta {
            stage: "aggregated_normalized".into(),
            seed: None,
            stats,
            encodings,
            split_counts: None,
            extra: vec![("hash".into(), hash_hex(&normalized))],
        },
    )?;
    cfg.write_resolved(&dir.join("resolved.config"))?;

    println!("rows_read={rows_read}");
    println!("rows_skipped={}", parsed.skipped_rows);
    println!("rows_dropped={}", rows_read - rows_clean);
    println!("rows_after_cleaning={rows_clean}");
    println!("class_counts delay_insensitive={n0} interactive={n1}");
    println!("wrote {}", dir.join("encoded.csv").display());
    println!("wrote {}", dir.join("dataset.csv").display());
    Ok(())
}

pub fn cmd_balance(cfg: &RunConfig, input: Option<&Path>) -> Result<()> {
    let method = cfg.balance_method()?;
    let default_input = default_encoded(cfg);
    let input = input.unwrap_or(&default_input);
    let ds = dataset::read_dataset_csv(input)?;
    let (before0, before1) = ds.class_counts();
    let balanced = balance(&ds, method, cfg.balance_seed)?;
    let (after0, after1) = balanced.class_counts();

    let dir = cfg.ensure_dir("balance")?;
    dataset::write_dataset_csv(&dir.join("balanced.csv"), &balanced)?;
    dataset::write_meta(
        &dir.join("balanced.meta"),
        &DatasetMeta {
            stage: format!("balanced_{}", method.name()),
            seed: Some(cfg.balance_seed),
            stats: vec![],
            encodings: vec![],
            split_counts: None,
            extra: vec![
                ("before.delay_insensitive".into(), before0.to_string()),
                ("before.interactive".into(), before1.to_string()),
                ("after.delay_insensitive".into(), after0.to_string()),
                ("after.interactive".into(), after1.to_string()),
                ("hash".into(), hash_hex(&balanced)),
            ],
        },
    )?;
    cfg.write_resolved(&dir.join("resolved.config"))?;

    println!("method={}", method.name());
    println!("before delay_insensitive={before0} interactive={before1}");
    println!("after delay_insensitive={after0} interactive={after1}");
    println!("wrote {}", dir.join("balanced.csv").display());
    Ok(())
}

/// Encoded data to a training-ready dataset. Default order: balance the
/// whole dataset, aggregate, normalize over all rows, split. The flags
/// move normalization statistics after the split (train rows only) and
/// the balance step after the split (train partition only).
fn prepare(cfg: &RunConfig, encoded: &Dataset) -> Result<(Dataset, Vec<ColumnStats>)> {
    let method = cfg.balance_method()?;
    let mut ds = encoded.clone();
    if !cfg.train_only_smote {
        ds = balance(&ds, method, cfg.balance_seed)?;
    }
    ds = dataset::aggregate_dataset(&ds)?;
    if cfg.drop_id_features {
        ds = ds.drop_columns(&ID_COLUMNS)?;
    }
    let fractions = (cfg.train_frac, cfg.val_frac, cfg.test_frac);
    let stats = if cfg.train_only_normalization {
        dataset::split(&mut ds, fractions, cfg.split_seed)?;
        let (normalized, stats) = dataset::minmax_normalize(&ds, StatsScope::TrainOnly)?;
        ds = normalized;
        stats
    } else {
        let (normalized, stats) = dataset::minmax_normalize(&ds, StatsScope::WholeData)?;
        ds = normalized;
        dataset::split(&mut ds, fractions, cfg.split_seed)?;
        stats
    };
    if cfg.train_only_smote {
        ds = balance_train_partition(&ds, method, cfg.balance_seed)?;
    }
    Ok((ds, stats))
}

/// Balance only the Train rows; Val/Test rows pass through untouched.
/// Rows are regrouped (non-train block, then the balanced train block)
/// because under-sampling changes the train partition's size.
fn balance_train_partition(ds: &Dataset, method: BalanceMethod, seed: u64) -> Result<Dataset> {
    let train_rows = ds.split_indices(SplitTag::Train);
    if train_rows.is_empty() {
        return Err(Error::EmptySplit {
            split: "train".into(),
        });
    }
    let mut in_train = vec![false; ds.n_rows()];
    for &i in &train_rows {
        in_train[i] = true;
    }
    let rest: Vec<usize> = (0..ds.n_rows()).filter(|&i| !in_train[i]).collect();
    let balanced_train = balance(&ds.select_rows(&train_rows), method, seed)?;
    let mut out = ds.select_rows(&rest);
    for i in 0..balanced_train.n_rows() {
        out.push_row(
            balanced_train.row(i),
            balanced_train.labels[i],
            balanced_train.split[i],
            balanced_train.provenance[i],
        )?;
    }
    Ok(out)
}

fn split_counts(ds: &Dataset) -> (usize, usize, usize) {
    (
        ds.split_indices(SplitTag::Train).len(),
        ds.split_indices(SplitTag::Val).len(),
        ds.split_indices(SplitTag::Test).len(),
    )
}

fn print_summary(summary: &MultiRunSummary) {
    println!("runs={}", summary.n_runs);
    for (name, line) in &summary.rows {
        println!(
            "{name} min={} mean={} std={} max={}",
            line.min, line.mean, line.std, line.max
        );
    }
}

pub fn cmd_train(cfg: &RunConfig, input: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let default_input = default_encoded(cfg);
    let input = input.unwrap_or(&default_input);
    let encoded = dataset::read_dataset_csv(input)?;
    let (processed, stats) = prepare(cfg, &encoded)?;
    let (n_train, n_val, n_test) = split_counts(&processed);

    let dir = cfg.ensure_dir("train")?;
    dataset::write_dataset_csv(&dir.join("processed.csv"), &processed)?;
    dataset::write_meta(
        &dir.join("processed.meta"),
        &DatasetMeta {
            stage: "processed".into(),
            seed: Some(cfg.split_seed),
            stats,
            encodings: vec![],
            split_counts: Some((n_train, n_val, n_test)),
            extra: vec![("hash".into(), hash_hex(&processed))],
        },
    )?;

    let hp = cfg.hyperparams();
    let (runs, summary) = train::multi_run(&processed, &hp, cfg.n_runs, cfg.base_seed)?;

    for run in &runs {
        let run_dir = dir.join("runs").join(format!("run-{}", run.metrics.seed));
        fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        Checkpoint::new(&run.model, run.metrics.seed, &run.optimizer)
            .save(&run_dir.join("checkpoint.bin"))?;
        write_curves_csv(&run_dir.join("curves.csv"), &run.metrics.history)?;
        write_metrics_csv(
            &run_dir.join("metrics.csv"),
            &[("val", &run.metrics.val), ("test", &run.metrics.test)],
        )?;
    }
    write_summary_csv(&dir.join("summary.csv"), &summary)?;

    let mut manifest: Vec<(String, String)> = vec![
        ("input".into(), input.display().to_string()),
        ("dataset_rows".into(), processed.n_rows().to_string()),
        ("dataset_cols".into(), processed.n_cols.to_string()),
        ("dataset_hash".into(), hash_hex(&processed)),
        ("param_count".into(), runs[0].model.param_count().to_string()),
        ("balance".into(), cfg.balance_method()?.name().to_string()),
        ("smote_k".into(), cfg.smote_k.to_string()),
        ("balance_seed".into(), cfg.balance_seed.to_string()),
        (
            "split".into(),
            format!("{}/{}/{}", cfg.train_frac, cfg.val_frac, cfg.test_frac),
        ),
        ("split_seed".into(), cfg.split_seed.to_string()),
        ("epochs".into(), cfg.epochs.to_string()),
        ("batch_size".into(), cfg.batch_size.to_string()),
        ("lr".into(), cfg.lr.to_string()),
        ("dropout".into(), cfg.dropout.to_string()),
        ("n_runs".into(), cfg.n_runs.to_string()),
        ("base_seed".into(), cfg.base_seed.to_string()),
    ];
    for run in &runs {
        manifest.push((
            format!("run.{}.train_seconds", run.metrics.seed),
            format!("{:.3}", run.metrics.train_seconds),
        ));
    }
    write_manifest(&dir.join("manifest.txt"), &manifest)?;
    cfg.write_resolved(&dir.join("resolved.config"))?;

    println!(
        "processed rows={} cols={} train/val/test={n_train}/{n_val}/{n_test}",
        processed.n_rows(),
        processed.n_cols
    );
    print_summary(&summary);
    println!("wrote {}", dir.display());
    Ok(())
}

fn print_metrics(name: &str, m: &EvalMetrics) {
    println!("split={name} n={}", m.n);
    println!("accuracy={}", m.accuracy);
    println!(
        "interactive precision={} recall={}",
        m.per_class[1].precision, m.per_class[1].recall
    );
    println!(
        "delay_insensitive precision={} recall={}",
        m.per_class[0].precision, m.per_class[0].recall
    );
    println!(
        "confusion actual0=[{} {}] actual1=[{} {}]",
        m.confusion[0][0], m.confusion[0][1], m.confusion[1][0], m.confusion[1][1]
    );
    if m.zero_denominator_flag {
        println!("zero_denominator=true");
    }
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    dataset_path: Option<&Path>,
    split: &str,
) -> Result<()> {
    let tag = SplitTag::parse(split)?;
    let default_ckpt = default_checkpoint(cfg);
    let ckpt_path = checkpoint.unwrap_or(&default_ckpt);
    let default_ds = cfg.output_dir.join("train").join("processed.csv");
    let ds_path = dataset_path.unwrap_or(&default_ds);

    let model = Checkpoint::load(ckpt_path)?.model();
    let ds = dataset::read_dataset_csv(ds_path)?;
    let metrics = train::evaluate(&model, &ds, tag)?;

    let dir = cfg.ensure_dir("evaluate")?;
    write_metrics_csv(&dir.join("metrics.csv"), &[(tag.as_str(), &metrics)])?;
    cfg.write_resolved(&dir.join("resolved.config"))?;

    print_metrics(tag.as_str(), &metrics);
    println!("wrote {}", dir.join("metrics.csv").display());
    Ok(())
}

pub fn cmd_select(cfg: &RunConfig, hosts_path: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let policy = Policy::parse(&cfg.policy)?;
    let opts = SelectOptions {
        seed: cfg.select_seed,
        correlation_target: cfg.correlation()?,
    };
    let model = if policy == Policy::ClassifierFirst {
        let default_ckpt = default_checkpoint(cfg);
        let path = checkpoint.unwrap_or(&default_ckpt);
        Some(Checkpoint::load(path)?.model())
    } else {
        None
    };
    let hosts = selection::read_hosts_csv(hosts_path)?;

    let dir = cfg.ensure_dir("select")?;
    for host in &hosts {
        let ranking = selection::rank(host, policy, &opts, model.as_ref())?;
        let out = dir.join(format!("{}-{}.csv", sanitize(&host.host_id), policy.name()));
        selection::write_ranking_csv(&out, &ranking)?;
        println!(
            "host={} policy={} candidates={}",
            host.host_id,
            policy.name(),
            ranking.entries.len()
        );
        for (rank, entry) in ranking.entries.iter().take(3).enumerate() {
            let class = match entry.class {
                Some(c) => format!(" class={c}"),
                None => String::new(),
            };
            println!("  {}. {} score={}{class}", rank + 1, entry.vm_id, entry.score);
        }
        println!("wrote {}", out.display());
    }
    cfg.write_resolved(&dir.join("resolved.config"))?;
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig, runs_dir: Option<&Path>) -> Result<()> {
    let default_runs = cfg.output_dir.join("train").join("runs");
    let runs_dir = runs_dir.unwrap_or(&default_runs);

    let mut run_dirs: Vec<(u64, PathBuf)> = Vec::new();
    let entries = fs::read_dir(runs_dir).map_err(|e| Error::io(runs_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(runs_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(seed) = name.strip_prefix("run-").and_then(|s| s.parse().ok()) {
            run_dirs.push((seed, entry.path()));
        }
    }
    run_dirs.sort_unstable_by_key(|(seed, _)| *seed);
    if run_dirs.is_empty() {
        return Err(Error::Config(format!(
            "no run-<seed> directories under {}",
            runs_dir.display()
        )));
    }

    let mut tests = Vec::with_capacity(run_dirs.len());
    for (_, run_dir) in &run_dirs {
        let path = run_dir.join("metrics.csv");
        let rows = read_metrics_csv(&path)?;
        let test = rows
            .iter()
            .find(|(split, _)| split == "test")
            .map(|(_, m)| *m)
            .ok_or_else(|| {
                Error::MalformedDataset(format!("{}: no test split row", path.display()))
            })?;
        tests.push(test);
    }
    let summary = train::summary_from_test_metrics(&tests)?;

    let dir = cfg.ensure_dir("report")?;
    write_summary_csv(&dir.join("summary.csv"), &summary)?;
    cfg.write_resolved(&dir.join("resolved.config"))?;

    print_summary(&summary);
    println!("wrote {}", dir.join("summary.csv").display());
    Ok(())
}
