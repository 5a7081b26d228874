use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_filcorpus"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn filcorpus")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn ingest_filter_dedup_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("pairs.tsv"),
        "Good morning everyone\tMagandang umaga sa inyong lahat\nHi\t\nBye\tmaikli lang\nAgain\tMagandang umaga sa inyong lahat\n",
    )
    .unwrap();
    let stdout = ok(
        d,
        &["ingest", "--format", "tsv", "--in", "pairs.tsv", "--out", "tl.txt"],
    );
    assert!(stdout.contains("kept=3 skipped=1"), "{stdout}");

    let stdout = ok(
        d,
        &["filter", "--in", "tl.txt", "--out", "clean.txt", "--rejects", "rej.tsv"],
    );
    assert!(stdout.contains("kept=2") && stdout.contains("Length=1"), "{stdout}");
    assert_eq!(read(d, "rej.tsv"), "Length\ttl.txt:2\tmaikli lang\n");

    let stdout = ok(d, &["dedup", "--in", "clean.txt", "--out", "dedup.txt"]);
    assert_eq!(stdout.trim(), "read=2 kept=1 dropped=1");
    let ext = ok(
        d,
        &[
            "dedup",
            "--in",
            "clean.txt",
            "--out",
            "ext.txt",
            "--external-sort",
            "--tmp",
            ".",
            "--chunk-keys",
            "1",
        ],
    );
    assert_eq!(ext, stdout);
    assert_eq!(read(d, "ext.txt"), read(d, "dedup.txt"));
}

#[test]
fn paired_ingest_rejects_unequal_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("a.en"), "one\ntwo\n").unwrap();
    fs::write(d.join("a.tl"), "isa\n").unwrap();
    let out = run(
        d,
        &[
            "ingest",
            "--format",
            "paired",
            "--in",
            "a.en",
            "--target-in",
            "a.tl",
            "--out",
            "x.txt",
        ],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[ingest]"), "{err}");
}

#[test]
fn split_writes_exact_quota_with_document_gaps() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut text = String::new();
    for i in 0..10 {
        text.push_str(&format!("doc {i} line one\ndoc {i} line two\n\n"));
    }
    fs::write(d.join("docs.txt"), text).unwrap();
    let args = [
        "split", "--in", "docs.txt", "--ratio", "0.6", "--seed", "4", "--out-a", "a.txt", "--out-b", "b.txt",
    ];
    let stdout = ok(d, &args);
    assert_eq!(stdout.trim(), "subset_a=12 subset_b=8");
    assert_eq!(read(d, "a.txt").split("\n\n").count(), 6);
    let first = read(d, "a.txt");
    let mut again = args.to_vec();
    again.extend(["--workers", "4"]);
    ok(d, &again);
    assert_eq!(read(d, "a.txt"), first);
}

#[test]
fn train_encode_decode_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("corpus.txt"),
        "Ang bata ay naglalaro\nang mga bata ay masaya\nNaglalaro sila\n",
    )
    .unwrap();
    let stdout = ok(
        d,
        &["train-bpe", "--in", "corpus.txt", "--vocab-size", "40", "--out", "tok"],
    );
    assert!(stdout.starts_with("vocab=40 "), "{stdout}");
    let merges = read(d, "tok/merges.txt");
    assert!(
        merges.starts_with("#filcorpus-bpe version=1 end_of_word=</w> vocab_size=40"),
        "{merges}"
    );

    fs::write(d.join("text.txt"), "ang bata ay masaya\nNaglalaro [LINK] sila\n").unwrap();
    ok(
        d,
        &[
            "encode",
            "--model",
            "tok",
            "--in",
            "text.txt",
            "--out",
            "ids.txt",
            "--add-special",
            "[LINK],[MENTION],[HASHTAG]",
        ],
    );
    let ids = read(d, "ids.txt");
    assert!(ids.lines().nth(1).unwrap().split(' ').any(|i| i == "40"), "{ids}");
    ok(
        d,
        &[
            "encode",
            "--model",
            "tok",
            "--in",
            "ids.txt",
            "--out",
            "back.txt",
            "--add-special",
            "[LINK],[MENTION],[HASHTAG]",
            "--decode",
        ],
    );
    assert_eq!(read(d, "back.txt"), read(d, "text.txt"));

    fs::write(d.join("bad.txt"), "1 2 9999\n").unwrap();
    let out = run(
        d,
        &[
            "encode", "--model", "tok", "--in", "bad.txt", "--out", "x.txt", "--decode",
        ],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("9999"));
}

#[test]
fn benchmark_preprocessing_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("tweets.tsv"),
        "text\tlabel\nRT : @user it 's one - two &amp; more http://t.co/x\t1\n",
    )
    .unwrap();
    ok(d, &["prep-tweets", "--in", "tweets.tsv", "--out", "clean.tsv"]);
    assert_eq!(
        read(d, "clean.tsv"),
        "text\tlabel\nRT: [MENTION] it's one-two & more [LINK]\t1\n"
    );

    fs::write(
        d.join("labels.csv"),
        "absent,dengue,health,mosquito,sick\n1,1,0,1,1\n0,0,0,0,1\n",
    )
    .unwrap();
    ok(d, &["encode-labels", "--in", "labels.csv", "--out", "labels.out"]);
    assert_eq!(read(d, "labels.out"), "label\n27\n1\n");
    fs::write(d.join("bad.csv"), "1,1,0,1,1\n1,2,0,1,1\n").unwrap();
    let out = run(d, &["encode-labels", "--in", "bad.csv", "--out", "x.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    fs::write(
        d.join("articles.txt"),
        "a one\na two\na three\n\nb one\nb two\n\nc one\n",
    )
    .unwrap();
    let stdout = ok(
        d,
        &["make-nli", "--in", "articles.txt", "--seed", "5", "--out", "nli.tsv"],
    );
    assert!(stdout.contains("skipped_articles=1"), "{stdout}");
    let nli = read(d, "nli.tsv");
    assert!(nli.starts_with("premise\thypothesis\tlabel\n"));
    assert_eq!(nli.lines().filter(|l| l.ends_with("\tentailment")).count(), 3);
    assert_eq!(nli.lines().filter(|l| l.ends_with("\tcontradiction")).count(), 3);
    ok(
        d,
        &["make-nli", "--in", "articles.txt", "--seed", "5", "--out", "nli2.tsv"],
    );
    assert_eq!(read(d, "nli2.tsv"), nli);
}

#[test]
fn build_and_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("six.txt"),
        "Magandang umaga sa inyong lahat.\nЭто предложение на русском языке\nmaikli lang\nano ba talaga!!! ang nangyari\nbisitahin ang www.example.ph ngayon din\nMagandang umaga sa inyong lahat.\n",
    )
    .unwrap();
    fs::write(
        d.join("build.toml"),
        "version = 1\noutput_dir = \"out\"\n[[sources]]\nsource_id = \"six\"\npath = \"six.txt\"\nformat = \"plain\"\n",
    )
    .unwrap();
    let stdout = ok(d, &["build", "--config", "build.toml"]);
    assert!(stdout.contains("kept 1 / 6 (16.7%)"), "{stdout}");
    let stats = ok(d, &["stats", "--in", "out/stats.jsonl"]);
    assert!(stats.contains("kept 1 / 6 (16.7%)"), "{stats}");

    fs::write(
        d.join("broken.toml"),
        "version = 1\noutput_dir = \"out\"\n[filter]\nmin_tokens = 0\n",
    )
    .unwrap();
    let out = run(d, &["build", "--config", "broken.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("min_tokens"));
    assert_eq!(read(d, "out/corpus.txt"), "Magandang umaga sa inyong lahat.\n");
}
