use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn phocnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phocnet"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = phocnet(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn summary_map(line: &str) -> f64 {
    line.rsplit("mAP=").next().unwrap().trim().parse().unwrap()
}

#[test]
fn dimension_of_the_standard_space() {
    let dir = tempfile::tempdir().unwrap();
    let pairs: Vec<String> = ('a'..='z')
        .flat_map(|a| ['e', 'n'].map(move |b| format!("{a}{b}")))
        .take(50)
        .collect();
    fs::write(dir.path().join("top50.txt"), pairs.join("\n")).unwrap();
    let out = ok(
        &["phoc", "--alphabet", "latin36", "--levels", "2,3,4,5", "--bigrams", "top50.txt", "--dim-only"],
        dir.path(),
    );
    assert_eq!(out.trim(), "604");
    assert_eq!(ok(&["phoc", "--bigram-count", "0", "--dim-only"], dir.path()).trim(), "504");
}

#[test]
fn encodes_words_as_bit_strings() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["phoc", "--bigram-count", "0", "--levels", "2", "Ab", "b"], dir.path());
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    let (word, bits) = lines[0].split_once('\t').unwrap();
    assert_eq!(word, "ab");
    let mut expected = vec!['0'; 72];
    expected[0] = '1';
    expected[36 + 1] = '1';
    assert_eq!(bits, expected.iter().collect::<String>());
    // A single character occupies both halves.
    let bits = lines[1].split_once('\t').unwrap().1;
    assert_eq!(bits.match_indices('1').map(|(i, _)| i).collect::<Vec<_>>(), vec![1, 37]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = phocnet(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(phocnet(&["phoc", "--no-such-flag"], dir.path()).status.code(), Some(1));
    assert_eq!(phocnet(&[], dir.path()).status.code(), Some(1));
    assert_eq!(phocnet(&["--help"], dir.path()).status.code(), Some(0));

    let out = phocnet(&["eval", "--predictions", "missing.tsv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.tsv"));
    assert!(out.stdout.is_empty());

    fs::write(dir.path().join("bad.tsv"), "image_path\tword\n").unwrap();
    let out = phocnet(&["train", "--manifest", "bad.tsv", "--model", "m.bin"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.tsv"));
}

#[test]
fn ground_truth_predictions_retrieve_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out-dir", "syn", "--classes", "8", "--samples-per-class", "3"], d);
    for (file, format) in [("gt.tsv", "tsv"), ("gt.bin", "binary")] {
        ok(&["phoc", "--manifest", "syn/manifest.tsv", "--output", file, "--format", format], d);
        for protocol in ["qbe", "qbs"] {
            let report = ok(&["eval", "--predictions", file, "--protocol", protocol], d);
            let last = report.lines().last().unwrap();
            assert!(last.starts_with("# protocol="), "{last}");
            assert_eq!(summary_map(last), 1.0, "{file} {protocol}");
        }
    }
    fs::write(d.join("stop.txt"), "THE\nand\n").unwrap();
    let summary = ok(
        &["eval", "--predictions", "gt.tsv", "--protocol", "qbs", "--exclude", "stop.txt", "--output", "r.tsv"],
        d,
    );
    assert!(summary.contains("queries=6\t"), "{summary}");
    let report = fs::read_to_string(d.join("r.tsv")).unwrap();
    assert!(report.starts_with("query\tclass\tap\n"));
    assert!(!report.contains("\nthe\t"));
}

#[test]
fn print_config_resolves_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.cfg"), "mode = softmax\nbase_lr = 0.01 # comment\nseed = 7\n").unwrap();
    let args = ["train", "--manifest", "x.tsv", "--model", "m.bin", "--config", "c.cfg", "--print-config"];
    let out = ok(&args, d);
    assert!(out.contains("total_iterations = 500000"), "{out}");
    assert!(out.contains("lr_drop_iteration = 250000"));
    assert!(out.contains("base_lr = 1e-2"));
    assert!(out.contains("seed = 7"));
    let mut more = args.to_vec();
    more.extend(["--seed", "9", "--base-lr", "0.5", "--threads", "3", "--mode", "phoc"]);
    let out = ok(&more, d);
    assert!(out.contains("seed = 9"));
    assert!(out.contains("base_lr = 5e-1"));
    assert!(out.contains("threads = 3"));
    assert!(out.contains("total_iterations = 80000"));
    let out = phocnet(&["train", "--manifest", "x.tsv", "--model", "m", "--batch-size", "0", "--print-config"], d);
    assert_eq!(out.status.code(), Some(2));
}

fn pipeline(d: &Path) -> (Vec<u8>, String, String) {
    ok(&["synth", "--out-dir", "syn", "--classes", "4", "--samples-per-class", "5", "--seed", "3"], d);
    ok(&["augment", "--manifest", "syn/manifest.tsv", "--out-dir", "aug", "--target", "24", "--seed", "3"], d);
    ok(
        &[
            "train", "--manifest", "aug/manifest.tsv", "--model", "m.bin", "--total-iterations", "30",
            "--lr-drop-iteration", "20", "--log-every", "10", "--seed", "3", "--threads", "1",
        ],
        d,
    );
    ok(&["predict", "--model", "m.bin", "--manifest", "aug/manifest.tsv", "--output", "p.bin", "--format", "binary"], d);
    let report = ok(&["eval", "--predictions", "p.bin", "--protocol", "qbs"], d);
    let direct = ok(&["eval", "--model", "m.bin", "--manifest", "aug/manifest.tsv", "--protocol", "qbs"], d);
    assert_eq!(report, direct);
    (fs::read(d.join("m.bin")).unwrap(), fs::read_to_string(d.join("m.bin.log.tsv")).unwrap(), report)
}

#[test]
fn pipeline_is_scriptable_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (model_a, log_a, report_a) = pipeline(a.path());
    let (model_b, log_b, report_b) = pipeline(b.path());
    assert_eq!(model_a, model_b);
    assert_eq!(report_a, report_b);
    let strip = |log: &str| -> Vec<String> {
        log.lines().map(|l| l.rsplitn(2, '\t').nth(1).unwrap().to_owned()).collect()
    };
    assert_eq!(strip(&log_a), strip(&log_b));
    assert_eq!(log_a.lines().next().unwrap(), "iteration\tloss\tlr\telapsed_seconds");
    assert_eq!(log_a.lines().count(), 1 + 4);

    let manifest = fs::read_to_string(a.path().join("aug/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.contains("\ttrain")).count(), 24);
    assert_eq!(manifest.lines().filter(|l| l.contains("\ttest")).count(), 4 * 2);
}
