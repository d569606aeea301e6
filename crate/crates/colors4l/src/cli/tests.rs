use std::fs;

use tempfile::TempDir;

use super::report::{build_table, cmd_report, write_loss_curve_svg, ResultTable};
use super::*;
use crate::data::container::load_container;

fn record(method: &str, budget: usize, seed: u64, error: f64) -> RunRecord {
    RunRecord {
        dataset: "cifar10".into(),
        arch: "convnet13".into(),
        method: method.into(),
        budget,
        seed,
        omega: if method == "Supervised" { 0.0 } else { 1.0 },
        epochs: 10,
        batch: 128,
        error_rate: error,
        steps: 3,
        loss_first: 2.0,
        loss_last: 1.0,
        loss_min: 0.9,
        trace_totals: vec![2.0, 1.5, 1.0],
    }
}

#[test]
fn table_cells_match_hand_computed_aggregates() {
    let records = vec![
        record("Color-S4L", 1000, 0, 0.20),
        record("Color-S4L", 1000, 1, 0.20),
        record("Color-S4L", 1000, 2, 0.20),
        record("Supervised", 1000, 0, 0.10),
        record("Supervised", 1000, 1, 0.30),
    ];
    let table = build_table(&records, None).unwrap();
    let text = table.render_text();
    assert!(text.contains("20.00±0.00"), "{text}");
    assert!(text.contains("20.00±10.00"), "{text}");
    assert!(text.contains("Color-S4L(convnet13)"), "{text}");
}

#[test]
fn rerun_of_same_seed_takes_latest_record() {
    let records = vec![record("Supervised", 500, 3, 0.50), record("Supervised", 500, 3, 0.40)];
    let table = build_table(&records, None).unwrap();
    assert_eq!(table.rows[0].cells[&500], "40.00±0.00");
}

#[test]
fn requested_budget_without_records_gets_footnote() {
    let records = vec![record("Supervised", 1000, 0, 0.2)];
    let table = build_table(&records, Some(&[1000, 2000])).unwrap();
    assert_eq!(table.budgets, vec![1000]);
    assert_eq!(table.footnotes.len(), 1);
    assert!(table.footnotes[0].contains("2000L"));
    let text = table.render_text();
    assert!(text.contains("column omitted"));
}

#[test]
fn csv_round_trip_is_exact() {
    let records = vec![
        record("Color-S4L", 1000, 0, 0.2045),
        record("Color-S4L", 2000, 0, 0.1622),
        record("Supervised", 1000, 0, 0.4643),
    ];
    let table = build_table(&records, None).unwrap();
    let csv = table.render_csv();
    let parsed = ResultTable::parse_csv(&csv).unwrap();
    assert_eq!(parsed.budgets, table.budgets);
    assert_eq!(parsed.rows.len(), table.rows.len());
    for (a, b) in parsed.rows.iter().zip(&table.rows) {
        assert_eq!(a.method, b.method);
        assert_eq!(a.arch, b.arch);
        assert_eq!(a.cells, b.cells);
    }
    assert_eq!(parsed.render_csv(), csv);
}

#[test]
fn empty_results_directory_is_error() {
    let dir = TempDir::new().unwrap();
    assert!(cmd_report(dir.path(), None, dir.path()).is_err());
}

#[test]
fn records_round_trip_through_jsonl() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("run_a.jsonl");
    append_record(&path, &record("Supervised", 100, 0, 0.5)).unwrap();
    append_record(&path, &record("Supervised", 100, 1, 0.4)).unwrap();
    let records = read_records(dir.path()).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[1].seed, 1);
}

#[test]
fn svg_plot_is_written() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("loss.svg");
    write_loss_curve_svg(&path, "run", &[3.0, 2.0, 1.5, 1.4]).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("<svg"));
    assert!(text.contains("polyline"));
}

#[test]
fn config_file_parsing() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("exp.conf");
    fs::write(
        &path,
        "# experiment defaults\ndataset = cifar10\nbudget = 1000,2000\nomega = 1.0\n\nepochs=30 # paper protocol\n",
    )
    .unwrap();
    let map = parse_config_file(&path).unwrap();
    assert_eq!(map["dataset"], "cifar10");
    assert_eq!(map["budget"], "1000,2000");
    assert_eq!(map["epochs"], "30");
    fs::write(&path, "no equals here\n").unwrap();
    assert!(parse_config_file(&path).is_err());
}

#[test]
fn method_names_follow_omega() {
    assert_eq!(method_name(1.0), "Color-S4L");
    assert_eq!(method_name(0.5), "Color-S4L");
    assert_eq!(method_name(0.0), "Supervised");
}

fn cifar10_batch_bytes(records: usize, tag: u8) -> Vec<u8> {
    let mut buf = Vec::with_capacity(records * 3073);
    for i in 0..records {
        buf.push((i % 10) as u8);
        for p in 0..3072usize {
            buf.push((p as u8).wrapping_mul(7).wrapping_add(i as u8).wrapping_add(tag));
        }
    }
    buf
}

#[test]
fn convert_cifar10_preserves_every_byte() {
    let dir = TempDir::new().unwrap();
    for (fi, name) in crate::data::cifar::CIFAR10_TRAIN_FILES.iter().enumerate() {
        fs::write(dir.path().join(name), cifar10_batch_bytes(10000, fi as u8)).unwrap();
    }
    fs::write(dir.path().join(crate::data::cifar::CIFAR10_TEST_FILE), cifar10_batch_bytes(10000, 200)).unwrap();

    let out = dir.path().join("cifar10_train.cds");
    let n = cmd_convert("cifar10", dir.path(), "train", &out).unwrap();
    assert_eq!(n, 50000);

    let (images, labels) = load_container(&out).unwrap();
    let (train, _) = crate::data::cifar::load_cifar10(dir.path()).unwrap();
    assert_eq!(images.len(), train.len());
    let labels = labels.unwrap();
    for i in [0usize, 1, 9999, 10000, 49999] {
        assert_eq!(images[i], train[i].image, "image {i}");
        assert_eq!(labels[i], train[i].label, "label {i}");
    }
}

#[test]
fn convert_corrupt_source_is_error() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("data_batch_1.bin"), vec![1u8; 10]).unwrap();
    let out = dir.path().join("out.cds");
    assert!(cmd_convert("cifar10", dir.path(), "train", &out).is_err());
    assert!(cmd_convert("cifar10", dir.path(), "validation", &out).is_err());
}

#[test]
fn convert_svhn_mat_to_container() {
    let dir = TempDir::new().unwrap();
    // reuse the matfile fixture writer
    let plane = 32 * 32;
    let n = 9usize;
    let mut x = vec![0u8; plane * 3 * n];
    for (i, v) in x.iter_mut().enumerate() {
        *v = (i % 251) as u8;
    }
    let y: Vec<u8> = (0..n).map(|i| ((i % 10) + 1) as u8).collect();
    let bytes = matfile::test_support::make_mat(
        &[("X", vec![32, 32, 3, n as i32], x), ("y", vec![n as i32, 1], y)],
        true,
    );
    fs::write(dir.path().join("train_32x32.mat"), bytes).unwrap();

    let out = dir.path().join("svhn/train.cds");
    let count = cmd_convert("svhn", dir.path(), "train", &out).unwrap();
    assert_eq!(count, n);
    let (images, labels) = load_container(&out).unwrap();
    let (direct, direct_labels) = matfile::read_svhn_mat(&dir.path().join("train_32x32.mat")).unwrap();
    assert_eq!(images, direct);
    assert_eq!(labels.unwrap(), direct_labels);
}

/// End-to-end sweep on a miniature converted dataset: supervised-only run
/// at full backbone width, record persisted, table rendered.
#[test]
fn run_and_report_end_to_end() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(data.join("svhn")).unwrap();
    let train = crate::trainer::tests::synth_examples(48, 10, 1);
    let test = crate::trainer::tests::synth_examples(20, 10, 2);
    let to_container = |set: &[crate::data::LabeledExample], path: &std::path::Path| {
        let images: Vec<_> = set.iter().map(|e| e.image.clone()).collect();
        let labels: Vec<u8> = set.iter().map(|e| e.label).collect();
        crate::data::container::write_container(path, &images, Some(&labels)).unwrap();
    };
    to_container(&train, &data.join("svhn/train.cds"));
    to_container(&test, &data.join("svhn/test.cds"));

    let out = dir.path().join("results");
    let spec = ExperimentSpec {
        dataset: "svhn".into(),
        data_dir: data.clone(),
        arch: "convnet13".into(),
        budgets: vec![10],
        seeds: vec![0],
        omega: 0.0,
        epochs: 1,
        batch: 8,
        lr0: 0.05,
        colorizer: None,
        out_dir: out.clone(),
        resume: false,
    };
    let records = cmd_run(&spec).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].steps, 6); // ceil(48/8) * 1 epoch
    assert!(records[0].error_rate >= 0.0 && records[0].error_rate <= 1.0);

    let report_dir = dir.path().join("report");
    let text = cmd_report(&out, None, &report_dir).unwrap();
    assert!(text.contains("Supervised(convnet13)"), "{text}");
    assert!(report_dir.join("table.csv").is_file());
    // one SVG per persisted record
    let svgs: Vec<_> = fs::read_dir(&report_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "svg"))
        .collect();
    assert_eq!(svgs.len(), 1);

    // omega > 0 without a colorizer is a usage error
    let mut bad = spec;
    bad.omega = 1.0;
    assert!(matches!(cmd_run(&bad), Err(Error::Config(_))));
}

#[test]
fn empty_seed_list_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let spec = ExperimentSpec {
        dataset: "svhn".into(),
        data_dir: dir.path().into(),
        arch: "convnet13".into(),
        budgets: vec![100],
        seeds: vec![],
        omega: 1.0,
        epochs: 1,
        batch: 8,
        lr0: 0.05,
        colorizer: None,
        out_dir: dir.path().into(),
        resume: false,
    };
    assert!(matches!(cmd_run(&spec), Err(Error::Config(_))));
}
