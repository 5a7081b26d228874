use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use filcorpus::pipeline::{outputs, report_stats, run_pipeline, PipelineConfig, PipelineStats, Stage};

const SIX_LINES: &str = "\
Magandang umaga sa inyong lahat.
Это предложение на русском языке
maikli lang
ano ba talaga!!! ang nangyari
bisitahin ang www.example.ph ngayon din
Magandang umaga sa inyong lahat.
";

fn config(dir: &Path, sources: &[(&str, &str)], extra: &str) -> PipelineConfig {
    let mut doc = String::from("version = 1\noutput_dir = \"out\"\nseed = 7\n");
    for (id, path) in sources {
        doc.push_str(&format!(
            "[[sources]]\nsource_id = \"{id}\"\npath = \"{path}\"\nformat = \"plain\"\n"
        ));
    }
    doc.push_str(extra);
    PipelineConfig::from_toml_str(&doc, dir).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

#[test]
fn six_line_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("six.txt"), SIX_LINES).unwrap();
    let stats = run_pipeline(&config(tmp.path(), &[("six", "six.txt")], "")).unwrap();

    assert_eq!(read(tmp.path(), outputs::CORPUS), "Magandang umaga sa inyong lahat.\n");
    let filter = stats.stage_total(Stage::Filter);
    let expected: BTreeMap<String, u64> = ["NonLatin", "Length", "PunctRun", "Html"]
        .iter()
        .map(|r| (r.to_string(), 1))
        .collect();
    assert_eq!(filter.rejects, expected);
    assert_eq!(stats.stage_total(Stage::Dedup).duplicates_dropped, 1);
    assert_eq!(stats.kept(), (6, 1));

    let report = report_stats(&stats).unwrap();
    assert!(report.summary.contains("kept 1 / 6 (16.7%)"), "{}", report.summary);

    let rejects = read(tmp.path(), outputs::REJECTS);
    assert_eq!(rejects.lines().count(), 4);
    assert!(rejects.contains("Length\tsix:3\tmaikli lang"), "{rejects}");
}

#[test]
fn same_file_twice_yields_same_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("six.txt"), SIX_LINES).unwrap();
    run_pipeline(&config(tmp.path(), &[("six", "six.txt")], "")).unwrap();
    let once = read(tmp.path(), outputs::CORPUS);
    let stats = run_pipeline(&config(tmp.path(), &[("a", "six.txt"), ("b", "six.txt")], "")).unwrap();
    assert_eq!(read(tmp.path(), outputs::CORPUS), once);
    // the second copy is dropped entirely by global dedup
    let b = &stats.sources[1];
    assert_eq!(b.stages[&Stage::Dedup].lines_out, 0);
    assert_eq!(b.stages[&Stage::Dedup].duplicates_dropped, 2);
}

#[test]
fn external_sort_build_matches_in_memory() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for i in 0..300 {
        text.push_str(&format!("pangungusap bilang {} ay dito\n", i % 120));
    }
    fs::write(tmp.path().join("rep.txt"), &text).unwrap();
    run_pipeline(&config(tmp.path(), &[("rep", "rep.txt")], "")).unwrap();
    let mem = read(tmp.path(), outputs::CORPUS);
    run_pipeline(&config(
        tmp.path(),
        &[("rep", "rep.txt")],
        "[dedup]\nexternal_sort = true\nchunk_keys = 16\n",
    ))
    .unwrap();
    assert_eq!(read(tmp.path(), outputs::CORPUS), mem);
    assert_eq!(mem.lines().count(), 120);
}

#[test]
fn split_and_tokenizer_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for d in 0..40 {
        text.push_str(&format!(
            "unang pangungusap ng dokumento {d}\nikalawang linya ng dokumento {d}\n\n"
        ));
    }
    fs::write(tmp.path().join("docs.txt"), &text).unwrap();
    let extra = "[split]\nratio = 0.75\nunit = \"document\"\n[tokenizer]\nvocab_size = 60\n";
    let stats = run_pipeline(&config(tmp.path(), &[("docs", "docs.txt")], extra)).unwrap();

    let split = stats.stage_total(Stage::Split);
    assert_eq!((split.subset_a, split.subset_b), (Some(60), Some(20)));
    let a = read(tmp.path(), outputs::SUBSET_A);
    // 30 documents of two lines, blank-line separated
    assert_eq!(a.split("\n\n").count(), 30);
    assert!(tmp.path().join("out/tokenizer/merges.txt").exists());
    assert!(read(tmp.path(), "tokenizer/vocab.txt").lines().count() == 60);

    let jsonl = read(tmp.path(), outputs::STATS);
    let parsed = PipelineStats::from_jsonl(&jsonl).unwrap();
    assert_eq!(report_stats(&parsed).unwrap().jsonl, jsonl);
}

#[test]
fn invalid_config_lists_every_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        &[("a", "x.txt"), ("a", "y.txt")],
        "[filter]\nmin_tokens = 0\n[split]\nratio = 1.5\n",
    );
    let err = run_pipeline(&cfg).unwrap_err().to_string();
    assert!(err.contains("duplicate source_id `a`"), "{err}");
    assert!(err.contains("min_tokens"), "{err}");
    assert!(err.contains("ratio"), "{err}");
}
