//! Operator-facing commands: dataset conversion, colorizer pretraining,
//! label-budget experiment runs and result-table emission.

pub mod matfile;
pub mod report;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::colorizer::{load_colorizer, save_colorizer, train_colorizer, ColorizerConfig};
use crate::data::cifar::{load_cifar10, load_cifar100};
use crate::data::container::{load_container, write_container};
use crate::data::{make_split, LabeledExample};
use crate::error::{Error, Result};
use crate::trainer::{evaluate, steps_per_epoch, train_loop, TrainConfig};

/// One experiment sweep: budgets x seeds on a dataset/architecture.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub dataset: String,
    pub data_dir: PathBuf,
    pub arch: String,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub omega: f32,
    pub epochs: usize,
    pub batch: usize,
    pub lr0: f64,
    pub colorizer: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub resume: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() {
            return Err(Error::Config("at least one --budget is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one --seed is required".into()));
        }
        Ok(())
    }
}

/// Persisted result of a single `(budget, seed)` run; one JSON line per run
/// in an append-only per-run file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub arch: String,
    pub method: String,
    pub budget: usize,
    pub seed: u64,
    pub omega: f32,
    pub epochs: usize,
    pub batch: usize,
    pub error_rate: f64,
    pub steps: u64,
    pub loss_first: f32,
    pub loss_last: f32,
    pub loss_min: f32,
    pub trace_totals: Vec<f32>,
}

pub fn method_name(omega: f32) -> &'static str {
    if omega > 0.0 {
        "Color-S4L"
    } else {
        "Supervised"
    }
}

/// Load `(train, test, num_classes)` for a dataset tag. CIFAR variants read
/// the official binaries; SVHN reads converted containers.
pub fn load_dataset(dataset: &str, data_root: &Path) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>, usize)> {
    let pick_dir = |sub: &str| {
        let nested = data_root.join(sub);
        if nested.is_dir() {
            nested
        } else {
            data_root.to_path_buf()
        }
    };
    match dataset {
        "cifar10" => {
            let dir = pick_dir("cifar-10-batches-bin");
            let (train, test) = load_cifar10(&dir)?;
            Ok((train, test, 10))
        }
        "cifar100" => {
            let dir = pick_dir("cifar-100-binary");
            let (train, test) = load_cifar100(&dir)?;
            Ok((train, test, 100))
        }
        "svhn" => {
            let dir = pick_dir("svhn");
            let mut out = Vec::new();
            for name in ["train.cds", "test.cds"] {
                let path = dir.join(name);
                let (images, labels) = load_container(&path)?;
                let labels = labels.ok_or_else(|| Error::data(&path, "container has no labels"))?;
                out.push(
                    images
                        .into_iter()
                        .zip(labels)
                        .map(|(image, label)| LabeledExample { image, label })
                        .collect::<Vec<_>>(),
                );
            }
            let test = out.pop().expect("two containers");
            let train = out.pop().expect("two containers");
            Ok((train, test, 10))
        }
        other => Err(Error::Config(format!(
            "unknown dataset '{other}' (expected cifar10, cifar100 or svhn)"
        ))),
    }
}

/// Convert official dataset files into the portable container format.
pub fn cmd_convert(dataset: &str, input: &Path, split: &str, out: &Path) -> Result<usize> {
    let (images, labels): (Vec<_>, Vec<u8>) = match (dataset, split) {
        ("cifar10", "train") | ("cifar10", "test") | ("cifar100", "train") | ("cifar100", "test") => {
            let dir = if dataset == "cifar10" {
                let nested = input.join("cifar-10-batches-bin");
                if nested.is_dir() {
                    nested
                } else {
                    input.to_path_buf()
                }
            } else {
                let nested = input.join("cifar-100-binary");
                if nested.is_dir() {
                    nested
                } else {
                    input.to_path_buf()
                }
            };
            let (train, test) = if dataset == "cifar10" {
                load_cifar10(&dir)?
            } else {
                load_cifar100(&dir)?
            };
            let set = if split == "train" { train } else { test };
            let labels = set.iter().map(|e| e.label).collect();
            (set.into_iter().map(|e| e.image).collect(), labels)
        }
        ("svhn", "train") | ("svhn", "test") => {
            let file = input.join(format!("{split}_32x32.mat"));
            let source = if file.is_file() { file } else { input.to_path_buf() };
            let (images, labels) = matfile::read_svhn_mat(&source)?;
            (images, labels)
        }
        (d, s) => {
            return Err(Error::Config(format!(
                "cannot convert dataset '{d}' split '{s}' (expected cifar10/cifar100/svhn train/test)"
            )))
        }
    };
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_container(out, &images, Some(&labels))?;
    Ok(images.len())
}

/// Pretrain a colorizer on a dataset's train images and write
/// `<dataset>-<epochs>-color` into `out_dir`.
pub fn cmd_pretrain_colorizer(
    dataset: &str,
    data_root: &Path,
    config: &ColorizerConfig,
    out_dir: &Path,
) -> Result<PathBuf> {
    let (train, _, _) = load_dataset(dataset, data_root)?;
    let images: Vec<_> = train.into_iter().map(|e| e.image).collect();
    let (mut net, losses) = train_colorizer(&images, config, dataset)?;
    for (epoch, loss) in losses.iter().enumerate() {
        println!("epoch {}/{}  reconstruction mse {:.6}", epoch + 1, config.epochs, loss);
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join(format!("{dataset}-{}-color", config.epochs));
    save_colorizer(&mut net, &path)?;
    Ok(path)
}

fn run_file_name(spec: &ExperimentSpec, budget: usize, seed: u64) -> String {
    format!(
        "run_{}_{}_{budget}L_s{seed}_w{}.jsonl",
        spec.dataset, spec.arch, spec.omega
    )
}

/// Execute every `(budget, seed)` run and persist one record each.
/// Failures are reported but do not stop the sweep; any failure yields an
/// error at the end.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let (train, test, num_classes) = load_dataset(&spec.dataset, &spec.data_dir)?;
    let colorizer = match (&spec.colorizer, spec.omega > 0.0) {
        (Some(path), _) => Some(load_colorizer(path)?),
        (None, true) => {
            return Err(Error::Config(
                "--colorizer is required when omega > 0 (the proxy sampler draws the recolorized class)".into(),
            ))
        }
        (None, false) => None,
    };
    fs::create_dir_all(&spec.out_dir).map_err(|e| Error::io(&spec.out_dir, e))?;

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &budget in &spec.budgets {
        for &seed in &spec.seeds {
            let config = TrainConfig {
                dataset: spec.dataset.clone(),
                arch: spec.arch.clone(),
                budget,
                omega: spec.omega,
                batch: spec.batch,
                epochs: spec.epochs,
                seed,
                colorizer: spec.colorizer.clone(),
                lr0: spec.lr0,
                ..TrainConfig::default()
            };
            match run_one(spec, &train, &test, num_classes, &config, colorizer.as_ref()) {
                Ok(record) => {
                    append_record(&spec.out_dir.join(run_file_name(spec, budget, seed)), &record)?;
                    println!(
                        "run {}  budget {budget}  seed {seed}  error {:.4}",
                        method_name(spec.omega),
                        record.error_rate
                    );
                    records.push(record);
                }
                Err(e) => {
                    eprintln!("run budget {budget} seed {seed} failed: {e}");
                    failures.push(format!("budget {budget} seed {seed}: {e}"));
                }
            }
        }
    }
    if failures.is_empty() {
        Ok(records)
    } else {
        Err(Error::Config(format!("{} run(s) failed: {}", failures.len(), failures.join("; "))))
    }
}

fn run_one(
    spec: &ExperimentSpec,
    train: &[LabeledExample],
    test: &[LabeledExample],
    num_classes: usize,
    config: &TrainConfig,
    colorizer: Option<&crate::colorizer::Colorizer>,
) -> Result<RunRecord> {
    let split = make_split(train, test, num_classes, config.budget, config.seed)?;
    let ckpt_dir = spec
        .out_dir
        .join("checkpoints")
        .join(format!("{}_{}_{}L_s{}_w{}", spec.dataset, spec.arch, config.budget, config.seed, spec.omega));
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let resume_path = ckpt_dir.join("last.ckpt");
    let resume = (spec.resume && resume_path.is_file()).then_some(resume_path.as_path());

    let per_epoch = steps_per_epoch(split.unlabeled.len(), config.batch);
    let mut printed_epoch = 0u64;
    let outcome = train_loop(&split, config, colorizer, Some(&ckpt_dir), resume, &mut |r| {
        let epoch = (r.step + 1) / per_epoch;
        if (r.step + 1) % per_epoch == 0 && epoch > printed_epoch {
            printed_epoch = epoch;
            println!(
                "epoch {epoch}/{}  l_super {:.4}  l_self {:.4}  total {:.4}",
                config.epochs, r.l_super, r.l_self, r.total
            );
        }
    })?;
    let error_rate = evaluate(&outcome.model, &split.test, &outcome.stats)?;
    let totals: Vec<f32> = outcome.trace.iter().map(|r| r.total).collect();
    Ok(RunRecord {
        dataset: spec.dataset.clone(),
        arch: spec.arch.clone(),
        method: method_name(spec.omega).to_string(),
        budget: config.budget,
        seed: config.seed,
        omega: spec.omega,
        epochs: config.epochs,
        batch: config.batch,
        error_rate,
        steps: totals.len() as u64,
        loss_first: totals.first().copied().unwrap_or(f32::NAN),
        loss_last: totals.last().copied().unwrap_or(f32::NAN),
        loss_min: totals.iter().copied().fold(f32::INFINITY, f32::min),
        trace_totals: totals,
    })
}

pub fn append_record(path: &Path, record: &RunRecord) -> Result<()> {
    let line = serde_json::to_string(record).expect("record serializes");
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(file, "{line}").map_err(|e| Error::io(path, e))
}

/// Read every record from every `*.jsonl` file in a results directory.
pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: RunRecord = serde_json::from_str(line)
                .map_err(|e| Error::data(&path, format!("line {}: {e}", i + 1)))?;
            records.push(record);
        }
    }
    Ok(records)
}

/// Parse a plain `key = value` configuration file. `#` starts a comment.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected 'key = value', got '{raw}'",
                path.display(),
                i + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests;
