use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use nl2sparql::codec::{Codec, EncodedQuery, PrefixTable, ReplacementTable};
use nl2sparql::corpus::bundled::{mini_monument_store, MINI_MONUMENT_TEMPLATES};
use nl2sparql::corpus::{
    generate, load_templates, parse_templates, read_corpus, read_pairs, split, tokenize_nl, write_corpus,
    write_pairs, ParallelCorpus, TemplatePair, Vocabulary,
};
use nl2sparql::kb::{Endpoint, KnowledgeBase, TripleStore};
use nl2sparql::metrics::{bleu, exact_match, BleuParams};
use nl2sparql::nmt::{encode_pairs, evaluate, train, translate, EvalReport};
use nl2sparql::{Checkpoint32, Model32};

use crate::args::*;
use crate::config::{Layer, RunConfig};
use crate::error::CliError;

pub const CORPUS_STEM: &str = "corpus";
pub const CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.tsv";
pub const TRAIN_SUMMARY: &str = "train_summary.tsv";
pub const REPORT: &str = "report.tsv";
pub const TRANSLATIONS: &str = "translations.tsv";
pub const BUNDLED: &str = "bundled";

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Encode(a) => cmd_codec(&a, true),
        Command::Decode(a) => cmd_codec(&a, false),
        Command::Split(a) => cmd_split(&a),
        Command::Vocab(a) => cmd_vocab(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Translate(a) => cmd_translate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Experiment(a) => crate::grid::cmd_experiment(&a),
    }
}

fn resolve(config: &ConfigArgs, flags: Layer) -> Result<RunConfig, CliError> {
    RunConfig::resolve(&config.layers(flags)?)
}

pub fn codec_for(cfg: &RunConfig) -> Result<Codec, CliError> {
    let prefixes = match &cfg.prefixes {
        Some(p) => PrefixTable::load(p)?,
        None => PrefixTable::dbpedia(),
    };
    let table = match &cfg.replacements {
        Some(p) => ReplacementTable::load_override(p)?,
        None => ReplacementTable::default(),
    };
    Ok(Codec::new(prefixes, table)?)
}

fn templates(spec: &str, codec: &Codec) -> Result<Vec<TemplatePair>, CliError> {
    let t = if spec == BUNDLED {
        parse_templates(MINI_MONUMENT_TEMPLATES, codec)
    } else {
        load_templates(Path::new(spec), codec)
    };
    t.map_err(|e| CliError::from(e).context(spec))
}

fn knowledge_base(spec: &str, cfg: &RunConfig, codec: &Codec) -> Result<Box<dyn KnowledgeBase>, CliError> {
    let lower = spec.to_ascii_lowercase();
    if lower.starts_with("http://") || lower.starts_with("https://") {
        let ep = Endpoint::new(cfg.endpoint_config(spec)?)?.with_prefixes(codec.prefixes().clone())?;
        return Ok(Box::new(ep));
    }
    let store = if spec == BUNDLED {
        mini_monument_store()?
    } else {
        TripleStore::load(Path::new(spec)).map_err(|e| CliError::from(e).context(spec))?
    };
    Ok(Box::new(store.with_prefixes(codec.prefixes().clone())))
}

fn manifest(corpus: &ParallelCorpus) -> String {
    let p = &corpus.provenance;
    let mut s = format!("seed\t{}\ncap_per_template\t{}\npairs\t{}\n", p.seed, p.cap_per_template, corpus.len());
    s.push_str("template\tid\tbindings\tkept\tquestion\n");
    for t in &p.templates {
        let _ = writeln!(s, "template\t{}\t{}\t{}\t{}", t.id, t.bindings, t.kept, t.nl_template);
    }
    for w in &p.warnings {
        let _ = writeln!(s, "warning\t{w}");
    }
    s
}

fn cmd_generate(a: &GenerateArgs) -> Result<(), CliError> {
    let cfg = resolve(
        &a.config,
        flag_layer(&[("cap", a.cap.map(|v| v.to_string())), ("gen_seed", a.seed.map(|v| v.to_string()))]),
    )?;
    let codec = codec_for(&cfg)?;
    let templates = templates(&a.templates, &codec)?;
    let kb = knowledge_base(&a.kb, &cfg, &codec)?;
    let corpus = generate(&templates, kb.as_ref(), &codec, &cfg.generate_options())?;
    write_pairs(&corpus, &a.out, CORPUS_STEM)?;
    fs::write(a.out.join("manifest.tsv"), manifest(&corpus))?;
    cfg.echo(&a.out)?;
    eprintln!("{} pairs from {} templates written to {}", corpus.len(), templates.len(), a.out.display());
    Ok(())
}

fn open_input(path: &Option<std::path::PathBuf>) -> Result<Box<dyn BufRead>, CliError> {
    Ok(match path {
        Some(p) => Box::new(io::BufReader::new(
            fs::File::open(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdin().lock()),
    })
}

fn open_output(path: &Option<std::path::PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Line-wise encode or decode. Blank lines pass through; the first bad line
/// aborts with its line number.
fn cmd_codec(a: &CodecArgs, encode: bool) -> Result<(), CliError> {
    let cfg = resolve(&a.config, Vec::new())?;
    let codec = codec_for(&cfg)?;
    let input = open_input(&a.input)?;
    let mut out = open_output(&a.out)?;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        let result = if text.is_empty() {
            String::new()
        } else if encode {
            codec.encode(text).map(|e| e.to_string()).map_err(|e| CliError::from(e).context(format!("line {}", i + 1)))?
        } else {
            codec.decode(&EncodedQuery::from_line(text)).map_err(|e| CliError::from(e).context(format!("line {}", i + 1)))?
        };
        writeln!(out, "{result}")?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<(), CliError> {
    let mode = a.mode.map(|m| if m == SplitModeArg::Ratio { "ratio" } else { "fixed" }.to_string());
    let s = |v: Option<f64>| v.map(|x| x.to_string());
    let u = |v: Option<usize>| v.map(|x| x.to_string());
    let cfg = resolve(
        &a.config,
        flag_layer(&[
            ("split_mode", mode),
            ("split_train", s(a.train)),
            ("split_val", s(a.val)),
            ("split_test", s(a.test)),
            ("split_val_count", u(a.val_count)),
            ("split_test_count", u(a.test_count)),
            ("split_seed", a.seed.map(|v| v.to_string())),
        ]),
    )?;
    let corpus = read_pairs(&a.input, CORPUS_STEM).map_err(|e| CliError::from(e).context(a.input.display()))?;
    let splits = split(&corpus, &cfg.split_spec()?)?;
    write_corpus(&splits, &a.out)?;
    cfg.echo(&a.out)?;
    eprintln!(
        "train {} / valid {} / test {}",
        splits.train.len(),
        splits.validation.len(),
        splits.test.len()
    );
    Ok(())
}

fn build_vocab(corpus: &ParallelCorpus, side: Side, cfg: &RunConfig) -> Vocabulary {
    match side {
        Side::Nl => Vocabulary::build(corpus.questions().map(tokenize_nl), cfg.vocab_min_count, cfg.vocab_max_size),
        Side::Sparql => {
            Vocabulary::build(corpus.queries().map(|q| q.tokens.clone()), cfg.vocab_min_count, cfg.vocab_max_size)
        }
    }
}

fn cmd_vocab(a: &VocabArgs) -> Result<(), CliError> {
    let cfg = resolve(
        &a.config,
        flag_layer(&[
            ("vocab_min_count", a.min_count.map(|v| v.to_string())),
            ("vocab_max_size", a.max_size.map(|v| v.to_string())),
        ]),
    )?;
    let train = read_pairs(&a.data, "train").map_err(|e| CliError::from(e).context(a.data.display()))?;
    let vocab = build_vocab(&train, a.side, &cfg);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    vocab.save(&a.out)?;
    eprintln!("{} tokens", vocab.len());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = resolve(
        &a.config,
        flag_layer(&[("preset", a.preset.clone()), ("time_limit", a.time_limit.map(|v| v.to_string()))]),
    )?;
    let data = read_corpus(&a.data).map_err(|e| CliError::from(e).context(a.data.display()))?;
    let codec = codec_for(&cfg)?;
    let src_vocab = build_vocab(&data.train, Side::Nl, &cfg);
    let tgt_vocab = build_vocab(&data.train, Side::Sparql, &cfg);
    let train_set = encode_pairs(&data.train, &src_vocab, &tgt_vocab);
    let valid_set = encode_pairs(&data.validation, &src_vocab, &tgt_vocab);
    let mut model = Model32::new(cfg.model.clone(), src_vocab.len(), tgt_vocab.len())?;
    cfg.echo(&a.out)?;
    let report = train(&mut model, &train_set, &valid_set, &cfg.train_options())?;
    let mut ck = Checkpoint32::new(model, src_vocab, tgt_vocab, codec)?;
    ck.best_bleu = report.best_bleu;
    ck.epoch = report.best_epoch;
    ck.save(&a.out.join(CHECKPOINT))?;
    ck.src_vocab.save(&a.out.join("vocab.nl"))?;
    ck.tgt_vocab.save(&a.out.join("vocab.sparql"))?;
    fs::write(a.out.join(TRAIN_LOG), report.to_tsv())?;
    fs::write(
        a.out.join(TRAIN_SUMMARY),
        format!(
            "epochs\t{}\nbest_epoch\t{}\nbest_valid_bleu\t{:.4}\nstop\t{:?}\n",
            report.epochs.len(),
            report.best_epoch,
            report.best_bleu,
            report.stop
        ),
    )?;
    eprintln!(
        "best validation BLEU {:.2} at epoch {} ({} epochs, stop: {:?})",
        report.best_bleu,
        report.best_epoch,
        report.epochs.len(),
        report.stop
    );
    Ok(())
}

fn load_checkpoint(path: &Path, beam_width: Option<usize>) -> Result<Checkpoint32, CliError> {
    let mut ck = Checkpoint32::load(path).map_err(|e| CliError::from(e).context(path.display()))?;
    if let Some(w) = beam_width {
        ck.model.config.beam_width = w;
        ck.model.config.validate()?;
    }
    Ok(ck)
}

fn cmd_translate(a: &TranslateArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(&a.checkpoint, a.beam_width)?;
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let prompt = || {
        if a.interactive {
            eprint!("> ");
            let _ = io::stderr().flush();
        }
    };
    prompt();
    for (i, line) in stdin.lock().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            writeln!(out)?;
        } else {
            let t = translate(&ck, line.trim())?;
            if let Some(e) = &t.error {
                log::warn!("line {}: output does not decode ({e}); printing tokens", i + 1);
            }
            writeln!(out, "{}", t.text())?;
        }
        out.flush()?;
        prompt();
    }
    Ok(())
}

fn score_hypotheses(path: &Path, refs: &ParallelCorpus) -> Result<String, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let hyps: Vec<Vec<String>> = text.lines().map(|l| EncodedQuery::from_line(l).tokens).collect();
    let refs: Vec<Vec<String>> = refs.queries().map(|q| q.tokens.clone()).collect();
    if hyps.len() != refs.len() {
        return Err(CliError::input(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    let b = bleu(&hyps, &refs, &BleuParams::default()).map_err(|e| CliError::input(e.to_string()))?;
    let m = exact_match(&hyps, &refs).map_err(|e| CliError::input(e.to_string()))?;
    Ok(format!(
        "bleu\t{:.4}\nbrevity_penalty\t{:.6}\naccuracy\t{:.6}\nf1\t{:.6}\nexamples\t{}\n",
        b.percent(),
        b.bp,
        m.accuracy,
        m.f1_mean,
        hyps.len()
    ))
}

fn translations_tsv(report: &EvalReport, refs: &ParallelCorpus) -> String {
    let mut s = String::from("question\treference\thypothesis\texact\n");
    for (t, p) in report.translations.iter().zip(&refs.pairs) {
        let exact = t.encoded == p.query_encoded;
        let _ = writeln!(s, "{}\t{}\t{}\t{}", p.question, p.query_encoded, t.encoded, u8::from(exact));
    }
    s
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let refs = read_pairs(&a.data, &a.split).map_err(|e| CliError::from(e).context(a.data.display()))?;
    let (report, translations, cfg) = match (&a.hypotheses, &a.checkpoint) {
        (Some(h), _) => (score_hypotheses(h, &refs)?, None, None),
        (None, Some(c)) => {
            let ck = load_checkpoint(c, a.beam_width)?;
            let r = evaluate(&ck, &refs)?;
            let cfg = RunConfig { model: ck.model.config.clone(), ..RunConfig::default() };
            (r.to_tsv(), Some(translations_tsv(&r, &refs)), Some(cfg))
        }
        (None, None) => return Err(CliError::input("either --checkpoint or --hypotheses is required")),
    };
    print!("{report}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        if let Some(t) = translations {
            fs::write(dir.join(TRANSLATIONS), t)?;
        }
        if let Some(cfg) = cfg {
            cfg.echo(dir)?;
        }
        // Written last: its presence marks a finished evaluation.
        fs::write(dir.join(REPORT), &report)?;
    }
    Ok(())
}
