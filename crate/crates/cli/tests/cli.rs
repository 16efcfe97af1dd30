use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use nl2sparql::codec::Codec;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nl2sparql"));
    c.env_remove("NL2SPARQL_CACHE").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn run_stdin(args: &[&str], input: &str) -> Output {
    let mut child = bin().args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}\nstderr: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

const KNOWN_FOR_LINE: &str = "PREFIX dbr: <http://dbpedia.org/resource/> PREFIX dbo: <http://dbpedia.org/ontology/> \
    SELECT DISTINCT ?uri WHERE { dbr:Sam_Loyd dbo:knownFor ?uri . dbr:Eric_Schiller dbo:knownFor ?uri . }";
const KNOWN_FOR_TOKENS: &str = "select distinct var_uri where brack_open dbr_Sam_Loyd dbo_knownFor var_uri sep_dot \
    dbr_Eric_Schiller dbo_knownFor var_uri sep_dot brack_close";

/// A tiny, fast model for pipeline tests.
const TINY: &[&str] = &[
    "--set", "hidden_units=12", "--set", "embed_dim=12", "--set", "num_layers=1", "--set", "max_epochs=2",
    "--set", "batch_size=16", "--set", "optimizer=adam", "--set", "lr=0.01", "--set", "beam_width=2",
    "--set", "max_len=16", "--set", "dropout=0",
];

/// Generated (cap 20) and split 80/10/10 bundled monument data.
fn small_dataset(root: &Path, split_seed: u64) -> PathBuf {
    let gen = root.join("gen");
    if !gen.join("corpus.nl").exists() {
        ok(&run(&["generate", "--templates", "bundled", "--kb", "bundled", "--cap", "20", "--seed", "3", "--out", p(&gen)]));
    }
    let data = root.join(format!("data{split_seed}"));
    ok(&run(&["split", "--in", p(&gen), "--mode", "ratio", "--seed", &split_seed.to_string(), "--out", p(&data)]));
    data
}

#[test]
fn help_documents_every_subcommand() {
    let out = ok(&run(&["--help"]));
    for c in ["generate", "encode", "decode", "split", "vocab", "train", "translate", "evaluate", "experiment"] {
        assert!(out.contains(c), "{c} missing from help");
    }
    assert!(out.contains("NL2SPARQL_CACHE"));
    let gen = ok(&run(&["generate", "--help"]));
    for flag in ["--templates", "--kb", "--cap", "--seed", "--out", "--config", "--set"] {
        assert!(gen.contains(flag), "{flag} missing");
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["split", "--in", "x"]).status.code(), Some(2));
    let o = run_stdin(&["encode", "--set", "colour=red"], "");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn encode_known_query_and_roundtrip() {
    let out = ok(&run_stdin(&["encode"], &format!("{KNOWN_FOR_LINE}\n")));
    assert_eq!(out.trim_end(), KNOWN_FOR_TOKENS);
    let q = "SELECT ?x WHERE { dbr:Carew_Cross dbo:location ?x . }\n\nASK WHERE { dbr:A dbo:b \"x y\"@en }\n";
    let encoded = ok(&run_stdin(&["encode"], q));
    let decoded = ok(&run_stdin(&["decode"], &encoded));
    let codec = Codec::dbpedia();
    let expect: Vec<String> =
        q.lines().map(|l| if l.is_empty() { String::new() } else { codec.normalize(l).unwrap() }).collect();
    assert_eq!(decoded.lines().collect::<Vec<_>>(), expect);
}

#[test]
fn encode_reports_offending_line() {
    let o = run_stdin(&["encode"], "SELECT ?x WHERE { ?x a dbo:Monument }\nSELECT ?x WHERE { ?x zzz:q ?y }\n");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn codec_files_in_and_out() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("q.txt");
    std::fs::write(&src, format!("{KNOWN_FOR_LINE}\n")).unwrap();
    let dst = dir.path().join("q.enc");
    ok(&run(&["encode", "--in", p(&src), "--out", p(&dst)]));
    assert_eq!(std::fs::read_to_string(&dst).unwrap().trim_end(), KNOWN_FOR_TOKENS);
}

#[test]
fn generate_is_offline_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&run(&["generate", "--templates", "bundled", "--kb", "bundled", "--seed", "5", "--out", p(out)]));
    }
    for f in ["corpus.nl", "corpus.sparql", "manifest.tsv", "run.cfg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(lines(&a.join("corpus.nl")) >= 500);
    assert_eq!(lines(&a.join("corpus.nl")), lines(&a.join("corpus.sparql")));
    let cfg = std::fs::read_to_string(a.join("run.cfg")).unwrap();
    assert!(cfg.contains("gen_seed = 5") && cfg.contains("cap = 600"), "{cfg}");
    let manifest = std::fs::read_to_string(a.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.starts_with("template\t") && !l.contains("bindings")).count(), 6);
}

#[test]
fn generate_from_files_and_bad_templates() {
    let dir = tempfile::tempdir().unwrap();
    let nt = dir.path().join("kb.nt");
    std::fs::write(
        &nt,
        "<http://dbpedia.org/resource/Carew_Cross> <http://www.w3.org/1999/02/22-rdf-syntax-ns#type> <http://dbpedia.org/ontology/Monument> .\n\
         <http://dbpedia.org/resource/Carew_Cross> <http://www.w3.org/2000/01/rdf-schema#label> \"Carew Cross\"@en .\n",
    )
    .unwrap();
    let good = dir.path().join("t.tsv");
    std::fs::write(
        &good,
        "Where is <A> ?\tSELECT ?x WHERE { <A> dbo:location ?x . }\tSELECT ?uri ?label WHERE { ?uri a dbo:Monument ; rdfs:label ?label }\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&run(&["generate", "--templates", p(&good), "--kb", p(&nt), "--out", p(&out)]));
    assert_eq!(std::fs::read_to_string(out.join("corpus.nl")).unwrap(), "Where is Carew Cross ?\n");
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "# header\nWhere is <A> ?\tSELECT ?x WHERE { <B> dbo:location ?x . }\tSELECT ?uri ?label WHERE { ?uri rdfs:label ?label }\n").unwrap();
    let o = run(&["generate", "--templates", p(&bad), "--kb", p(&nt), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

const ONE_ROW: &str = r#"{"head":{"vars":["uri","label"]},"results":{"bindings":[
  {"uri":{"type":"uri","value":"http://dbpedia.org/resource/Carew_Cross"},
   "label":{"type":"literal","xml:lang":"en","value":"Carew Cross"}}]}}"#;

/// Serves `n` requests with `ONE_ROW`, then stops listening.
fn serve(n: usize) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/sparql", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming().take(n) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            while reader.read_line(&mut line).unwrap_or(0) > 0 && line != "\r\n" {
                line.clear();
            }
            let reply = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/sparql-results+json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{ONE_ROW}",
                ONE_ROW.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    url
}

#[test]
fn endpoint_cache_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let templates = dir.path().join("t.tsv");
    std::fs::write(
        &templates,
        "Where is <A> ?\tSELECT ?x WHERE { <A> dbo:location ?x . }\tSELECT ?uri ?label WHERE { ?uri a dbo:Monument ; rdfs:label ?label }\n",
    )
    .unwrap();
    let url = serve(1);
    let args = |out: &Path| -> Vec<String> {
        ["generate", "--templates", p(&templates), "--kb", &url, "--out", p(out), "--set", "endpoint_retries=0"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    };
    let first = bin().args(args(&dir.path().join("a"))).env("NL2SPARQL_CACHE", &cache).output().unwrap();
    ok(&first);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);
    // The server is gone; only the cache can answer.
    let second = bin().args(args(&dir.path().join("b"))).env("NL2SPARQL_CACHE", &cache).output().unwrap();
    ok(&second);
    assert_eq!(
        std::fs::read(dir.path().join("a/corpus.sparql")).unwrap(),
        std::fs::read(dir.path().join("b/corpus.sparql")).unwrap()
    );
    let third = bin().args(args(&dir.path().join("c"))).output().unwrap();
    assert_eq!(third.status.code(), Some(3), "{}", stderr(&third));
}

#[test]
fn split_modes_and_vocab() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    ok(&run(&["generate", "--templates", "bundled", "--kb", "bundled", "--out", p(&gen)]));
    let n = lines(&gen.join("corpus.nl"));
    let fixed = dir.path().join("fixed");
    ok(&run(&["split", "--in", p(&gen), "--mode", "fixed", "--val-count", "100", "--test-count", "100", "--out", p(&fixed)]));
    assert_eq!(
        (lines(&fixed.join("train.nl")), lines(&fixed.join("valid.nl")), lines(&fixed.join("test.nl"))),
        (n - 200, 100, 100)
    );
    let ratio = dir.path().join("ratio");
    ok(&run(&["split", "--in", p(&gen), "--train", "0.5", "--val", "0.1", "--test", "0.4", "--out", p(&ratio)]));
    let floor = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
    assert_eq!(lines(&ratio.join("valid.sparql")), floor(0.1));
    assert_eq!(lines(&ratio.join("test.sparql")), floor(0.4));
    assert_eq!(lines(&ratio.join("train.sparql")), n - floor(0.1) - floor(0.4));
    assert!(std::fs::read_to_string(ratio.join("run.cfg")).unwrap().contains("split_train = 0.5"));
    let o = run(&["split", "--in", p(&gen), "--train", "0.5", "--val", "0.1", "--test", "0.1", "--out", p(&ratio)]);
    assert_eq!(o.status.code(), Some(2));

    let vocab = dir.path().join("v/sparql.vocab");
    let o = run(&["vocab", "--data", p(&fixed), "--side", "sparql", "--out", p(&vocab)]);
    ok(&o);
    let mut distinct: Vec<String> = std::fs::read_to_string(fixed.join("train.sparql"))
        .unwrap()
        .split_whitespace()
        .map(str::to_string)
        .collect();
    distinct.sort();
    distinct.dedup();
    assert_eq!(lines(&vocab), distinct.len() + 4);
    assert!(stderr(&o).contains(&format!("{} tokens", distinct.len() + 4)));
    let rare = dir.path().join("nl.vocab");
    ok(&run(&["vocab", "--data", p(&fixed), "--side", "nl", "--min-count", "1000", "--out", p(&rare)]));
    assert_eq!(lines(&rare), 4);
}

#[test]
fn train_translate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), 0);
    let (a, b) = (dir.path().join("ra"), dir.path().join("rb"));
    for out in [&a, &b] {
        let mut args = vec!["train", "--data", p(&data), "--out", p(out), "--preset", "desk_rnn_att2"];
        args.extend_from_slice(TINY);
        ok(&run(&args));
    }
    for f in ["model.ckpt", "train_log.tsv", "train_summary.tsv", "run.cfg", "vocab.nl", "vocab.sparql"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(lines(&a.join("train_log.tsv")), 3);
    assert!(std::fs::read_to_string(a.join("run.cfg")).unwrap().contains("preset = desk_rnn_att2"));

    let ck = a.join("model.ckpt");
    let report = ok(&run(&["evaluate", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&a.join("eval"))]));
    let keys: Vec<&str> = report.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(
        keys,
        ["bleu", "brevity_penalty", "accuracy", "f1", "cross_entropy_bits", "perplexity", "examples", "undecodable"]
    );
    assert_eq!(lines(&a.join("eval/translations.tsv")), lines(&data.join("test.nl")) + 1);

    let questions = std::fs::read_to_string(data.join("test.nl")).unwrap();
    let out = ok(&run_stdin(&["translate", "--checkpoint", p(&ck)], &questions));
    assert_eq!(out.lines().count(), questions.lines().count());
    let again = ok(&run_stdin(&["translate", "--checkpoint", p(&ck), "--beam-width", "1"], "Where is Carew Cross ?\n\n"));
    assert_eq!(again.lines().count(), 2);
    assert_eq!(again.lines().nth(1), Some(""));

    let perfect = ok(&run(&["evaluate", "--hypotheses", p(&data.join("test.sparql")), "--data", p(&data)]));
    assert!(perfect.starts_with("bleu\t100.0000\n"), "{perfect}");
    assert!(perfect.contains("accuracy\t1.000000"));
}

#[test]
fn numeric_failure_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path(), 0);
    let out = dir.path().join("r");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(&["--set", "optimizer=sgd", "--set", "lr=1e38", "--set", "clip_norm=0"]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn experiment_grid_runs_ranks_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let d0 = small_dataset(dir.path(), 0);
    let d1 = small_dataset(dir.path(), 1);
    let grid = dir.path().join("grid.cfg");
    let mut text = format!("presets = desk_rnn, desk_rnn_att1\ndatasets = first={}, second={}\n", p(&d0), p(&d1));
    for kv in TINY.chunks(2).map(|c| c[1]) {
        text.push_str(&kv.replacen('=', " = ", 1));
        text.push('\n');
    }
    std::fs::write(&grid, text).unwrap();
    let out = dir.path().join("exp");
    let o = run(&["experiment", "--grid", p(&grid), "--out", p(&out), "--workers", "2"]);
    ok(&o);
    let runs = ["desk_rnn__first", "desk_rnn__second", "desk_rnn_att1__first", "desk_rnn_att1__second"];
    for r in runs {
        assert!(out.join(r).join("eval/report.tsv").is_file(), "{r}");
    }
    let summary = std::fs::read_to_string(out.join("summary.tsv")).unwrap();
    let bleus: Vec<f64> = summary.lines().skip(1).map(|l| l.split('\t').nth(5).unwrap().parse().unwrap()).collect();
    assert_eq!(bleus.len(), 4);
    assert!(bleus.windows(2).all(|w| w[0] >= w[1]), "{summary}");
    let table = std::fs::read_to_string(out.join("table.tsv")).unwrap();
    assert_eq!(table.lines().next(), Some("model\tfirst\tsecond"));
    assert_eq!(table.lines().count(), 3);

    std::fs::remove_dir_all(out.join(runs[3])).unwrap();
    std::fs::remove_file(out.join(runs[1]).join("eval/report.tsv")).unwrap();
    let o = run(&["experiment", "--grid", p(&grid), "--out", p(&out)]);
    ok(&o);
    assert!(stderr(&o).contains("4 runs, 2 already finished"), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("summary.tsv")).unwrap(), summary);
}

#[test]
fn experiment_reports_failed_runs() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.cfg");
    std::fs::write(&grid, format!("presets = desk_rnn\ndatasets = {}\n", p(&dir.path().join("missing")))).unwrap();
    let o = run(&["experiment", "--grid", p(&grid), "--out", p(&dir.path().join("exp"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("1 of 1 runs failed"));
    std::fs::write(&grid, "presets = no_such_preset\ndatasets = d\n").unwrap();
    assert_eq!(run(&["experiment", "--grid", p(&grid), "--out", p(&dir.path().join("e2"))]).status.code(), Some(2));
}
