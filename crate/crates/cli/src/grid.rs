//! Preset x dataset (x seed) experiment grids. Every run is a `train` child
//! process followed by an `evaluate` child on the test split; a run counts
//! as finished once its `eval/report.tsv` exists, which is what resuming
//! checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::args::ExperimentArgs;
use crate::commands::{CHECKPOINT, REPORT, TRAIN_SUMMARY};
use crate::config::{read_layer, Layer, RunConfig};
use crate::error::{CliError, EXIT_INPUT};

pub const SUMMARY: &str = "summary.tsv";
pub const TABLE: &str = "table.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub presets: Vec<String>,
    /// `(name, directory)`
    pub datasets: Vec<(String, PathBuf)>,
    pub seeds: Vec<Option<u64>>,
    /// Config keys applied to every run.
    pub shared: Layer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub name: String,
    pub preset: String,
    pub dataset: String,
    pub data: PathBuf,
    pub seed: Option<u64>,
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

impl Grid {
    /// `presets` and `datasets` are comma lists; a dataset is `DIR` or
    /// `NAME=DIR`. `seeds` is optional. Every other key is shared config.
    pub fn parse(layer: Layer) -> Result<Self, CliError> {
        let mut grid = Grid { presets: Vec::new(), datasets: Vec::new(), seeds: vec![None], shared: Vec::new() };
        for (k, v) in layer {
            match k.as_str() {
                "presets" => grid.presets = list(&v),
                "datasets" => {
                    grid.datasets = list(&v)
                        .into_iter()
                        .map(|d| match d.split_once('=') {
                            Some((n, p)) => (n.trim().to_string(), PathBuf::from(p.trim())),
                            None => {
                                let p = PathBuf::from(&d);
                                let n = p.file_name().map_or(d.clone(), |f| f.to_string_lossy().into_owned());
                                (n, p)
                            }
                        })
                        .collect()
                }
                "seeds" => {
                    grid.seeds = list(&v)
                        .iter()
                        .map(|s| s.parse().map(Some).map_err(|_| CliError::input(format!("seeds: bad seed `{s}`"))))
                        .collect::<Result<_, _>>()?
                }
                "preset" | "seed" => return Err(CliError::input(format!("grid: use `{k}s` to list values"))),
                _ => grid.shared.push((k, v)),
            }
        }
        if grid.presets.is_empty() || grid.datasets.is_empty() || grid.seeds.is_empty() {
            return Err(CliError::input("grid: `presets` and `datasets` must be non-empty"));
        }
        for name in grid.presets.iter().chain(grid.datasets.iter().map(|(n, _)| n)) {
            if !valid_name(name) {
                return Err(CliError::input(format!("grid: `{name}` is not usable as a directory name")));
            }
        }
        let mut names: Vec<&String> = grid.datasets.iter().map(|(n, _)| n).collect();
        names.sort();
        names.dedup();
        if names.len() != grid.datasets.len() {
            return Err(CliError::input("grid: dataset names must be distinct"));
        }
        Ok(grid)
    }

    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for p in &self.presets {
            for (d, path) in &self.datasets {
                for s in &self.seeds {
                    let name = match s {
                        Some(s) => format!("{p}__{d}__s{s}"),
                        None => format!("{p}__{d}"),
                    };
                    out.push(RunSpec { name, preset: p.clone(), dataset: d.clone(), data: path.clone(), seed: *s });
                }
            }
        }
        out
    }
}

fn finished(dir: &Path) -> bool {
    dir.join("eval").join(REPORT).is_file()
}

fn child(exe: &Path, args: &[String], log: &Path) -> Result<(), CliError> {
    let file = fs::File::create(log)?;
    let status = Command::new(exe)
        .args(args)
        .stdout(Stdio::from(file.try_clone()?))
        .stderr(Stdio::from(file))
        .status()
        .map_err(|e| CliError::input(format!("cannot start {}: {e}", exe.display())))?;
    if status.success() {
        return Ok(());
    }
    let code = status.code().and_then(|c| u8::try_from(c).ok()).filter(|&c| c != 0).unwrap_or(EXIT_INPUT);
    Err(CliError { code, message: format!("`{}` failed; see {}", args[0], log.display()) })
}

fn execute(exe: &Path, run: &RunSpec, dir: &Path, overrides: &Layer) -> Result<(), CliError> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    let data = run.data.display().to_string();
    let mut train = vec!["train".into(), "--data".into(), data.clone(), "--out".into(), dir.display().to_string()];
    train.extend(["--preset".into(), run.preset.clone()]);
    for (k, v) in overrides {
        train.extend(["--set".into(), format!("{k}={v}")]);
    }
    if let Some(s) = run.seed {
        train.extend(["--set".into(), format!("seed={s}")]);
    }
    child(exe, &train, &dir.join("train.log"))?;
    let eval = vec![
        "evaluate".into(),
        "--checkpoint".into(),
        dir.join(CHECKPOINT).display().to_string(),
        "--data".into(),
        data,
        "--out".into(),
        dir.join("eval").display().to_string(),
    ];
    child(exe, &eval, &dir.join("eval.log"))
}

fn read_kv(path: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: RunSpec,
    pub test_bleu: f64,
    pub fields: BTreeMap<String, String>,
}

pub fn collect(out: &Path, runs: &[RunSpec]) -> Vec<RunResult> {
    let mut results: Vec<RunResult> = runs
        .iter()
        .filter(|r| finished(&out.join(&r.name)))
        .map(|r| {
            let dir = out.join(&r.name);
            let mut fields = read_kv(&dir.join("eval").join(REPORT));
            if let Some(v) = read_kv(&dir.join(TRAIN_SUMMARY)).remove("best_valid_bleu") {
                fields.insert("valid_bleu".into(), v);
            }
            let test_bleu = fields.get("bleu").and_then(|b| b.parse().ok()).unwrap_or(f64::NAN);
            RunResult { run: r.clone(), test_bleu, fields }
        })
        .collect();
    results.sort_by(|a, b| b.test_bleu.total_cmp(&a.test_bleu).then_with(|| a.run.name.cmp(&b.run.name)));
    results
}

/// Runs ranked by test BLEU, best first.
pub fn summary_tsv(results: &[RunResult]) -> String {
    let cols = ["accuracy", "f1", "perplexity", "valid_bleu"];
    let mut s = String::from("rank\trun\tpreset\tdataset\tseed\ttest_bleu");
    for c in cols {
        s.push('\t');
        s.push_str(c);
    }
    s.push('\n');
    for (i, r) in results.iter().enumerate() {
        let seed = r.run.seed.map_or("-".into(), |s| s.to_string());
        let _ = write!(s, "{}\t{}\t{}\t{}\t{seed}\t{:.4}", i + 1, r.run.name, r.run.preset, r.run.dataset, r.test_bleu);
        for c in cols {
            let _ = write!(s, "\t{}", r.fields.get(c).map_or("-", String::as_str));
        }
        s.push('\n');
    }
    s
}

/// Presets as rows, datasets as columns, mean test BLEU over seeds.
pub fn table_tsv(grid: &Grid, results: &[RunResult]) -> String {
    let mut s = String::from("model");
    for (d, _) in &grid.datasets {
        let _ = write!(s, "\t{d}");
    }
    s.push('\n');
    for p in &grid.presets {
        s.push_str(p);
        for (d, _) in &grid.datasets {
            let v: Vec<f64> = results
                .iter()
                .filter(|r| &r.run.preset == p && &r.run.dataset == d)
                .map(|r| r.test_bleu)
                .collect();
            if v.is_empty() {
                s.push_str("\t-");
            } else {
                let _ = write!(s, "\t{:.2}", v.iter().sum::<f64>() / v.len() as f64);
            }
        }
        s.push('\n');
    }
    s
}

pub fn cmd_experiment(a: &ExperimentArgs) -> Result<(), CliError> {
    let grid = Grid::parse(read_layer(&a.grid)?)?;
    // Shared keys first, then the command line.
    let mut overrides = grid.shared.clone();
    if let Some(p) = &a.config.config {
        overrides.extend(read_layer(p)?);
    }
    overrides.extend(a.config.set.iter().cloned());
    for p in &grid.presets {
        let mut layer = vec![("preset".to_string(), p.clone())];
        layer.extend(overrides.iter().cloned());
        RunConfig::resolve(&[layer]).map_err(|e| e.context(format!("preset {p}")))?;
    }
    let shared = RunConfig::resolve(std::slice::from_ref(&overrides))?;
    shared.echo(&a.out)?;
    let runs = grid.runs();
    let pending: Vec<&RunSpec> = runs.iter().filter(|r| !finished(&a.out.join(&r.name))).collect();
    eprintln!("{} runs, {} already finished", runs.len(), runs.len() - pending.len());
    let exe = std::env::current_exe()?;
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..a.workers.max(1).min(pending.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(run) = pending.get(i) else { break };
                eprintln!("run {}: started", run.name);
                match execute(&exe, run, &a.out.join(&run.name), &overrides) {
                    Ok(()) => eprintln!("run {}: finished", run.name),
                    Err(e) => {
                        eprintln!("run {}: {e}", run.name);
                        failures.lock().unwrap().push((run.name.clone(), e));
                    }
                }
            });
        }
    });
    let results = collect(&a.out, &runs);
    fs::write(a.out.join(SUMMARY), summary_tsv(&results))?;
    fs::write(a.out.join(TABLE), table_tsv(&grid, &results))?;
    let failures = failures.into_inner().unwrap();
    if let Some((name, first)) = failures.first() {
        return Err(CliError {
            code: first.code,
            message: format!("{} of {} runs failed (first: {name}: {})", failures.len(), runs.len(), first.message),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(pairs: &[(&str, &str)]) -> Layer {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn grid_expands_in_order() {
        let g = Grid::parse(layer(&[
            ("presets", "desk_rnn, desk_rnn_att2"),
            ("datasets", "mono=/data/m, /data/other"),
            ("max_epochs", "3"),
        ]))
        .unwrap();
        let names: Vec<String> = g.runs().into_iter().map(|r| r.name).collect();
        assert_eq!(names, ["desk_rnn__mono", "desk_rnn__other", "desk_rnn_att2__mono", "desk_rnn_att2__other"]);
        assert_eq!(g.shared, layer(&[("max_epochs", "3")]));
        let s = Grid::parse(layer(&[("presets", "a"), ("datasets", "d"), ("seeds", "1,2")])).unwrap();
        assert_eq!(s.runs().iter().map(|r| r.name.as_str()).collect::<Vec<_>>(), ["a__d__s1", "a__d__s2"]);
    }

    #[test]
    fn bad_grids() {
        assert!(Grid::parse(layer(&[("presets", "a")])).is_err());
        assert!(Grid::parse(layer(&[("presets", "a"), ("datasets", "x=d, x=e")])).is_err());
        assert!(Grid::parse(layer(&[("presets", "a/b"), ("datasets", "d")])).is_err());
        assert!(Grid::parse(layer(&[("presets", "a"), ("datasets", "d"), ("seeds", "one")])).is_err());
        assert!(Grid::parse(layer(&[("presets", "a"), ("datasets", "d"), ("seed", "1")])).is_err());
    }

    #[test]
    fn summary_ranks_by_bleu() {
        let spec = |n: &str| RunSpec { name: n.into(), preset: n.into(), dataset: "d".into(), data: "d".into(), seed: None };
        let r = |n: &str, b: f64| RunResult { run: spec(n), test_bleu: b, fields: BTreeMap::new() };
        let mut results = vec![r("low", 10.0), r("high", 90.0), r("mid", 50.0)];
        results.sort_by(|a, b| b.test_bleu.total_cmp(&a.test_bleu));
        let s = summary_tsv(&results);
        let order: Vec<&str> = s.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap()).collect();
        assert_eq!(order, ["high", "mid", "low"]);
    }
}
