#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nl2sparql::autodiff::check::{check_gradients, CheckOptions};
use nl2sparql::autodiff::AutodiffError;
use nl2sparql::nmt::{Architecture, AttentionKind, Model, ModelConfig, NmtError, StepModel};

pub const TINY_VOCAB: usize = 12;
pub const TINY_LEN: usize = 5;

/// Embed 8, hidden 8, two layers, no dropout.
pub fn tiny(architecture: Architecture, attention: AttentionKind) -> ModelConfig {
    ModelConfig {
        architecture,
        attention,
        num_layers: 2,
        hidden_units: 8,
        embed_dim: 8,
        heads: if architecture == Architecture::Transformer { 2 } else { 1 },
        dropout: 0.0,
        max_positions: 16,
        ..ModelConfig::default()
    }
}

pub fn grad_check_configs() -> Vec<(&'static str, ModelConfig)> {
    use AttentionKind::*;
    let rnn = |a| tiny(Architecture::Rnn, a);
    vec![
        ("rnn/none", rnn(None)),
        ("rnn/global", rnn(GlobalAdditive)),
        ("rnn/local", rnn(LocalMultiplicative)),
        ("rnn/local-narrow", ModelConfig { local_window: 2, ..rnn(LocalMultiplicative) }),
        ("rnn/bidirectional", ModelConfig { bidirectional_first: true, ..rnn(GlobalAdditive) }),
        ("rnn/residual", ModelConfig { num_layers: 3, residual_from_layer: Some(3), ..rnn(LocalMultiplicative) }),
        ("conv", tiny(Architecture::Conv, None)),
        ("transformer", tiny(Architecture::Transformer, None)),
    ]
}

pub fn random_ids(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(3..vocab)).collect()
}

fn unwrap_autodiff(e: NmtError) -> AutodiffError {
    match e {
        NmtError::Autodiff(a) => a,
        other => panic!("model error: {other}"),
    }
}

/// Parameters are redrawn away from the small-init regime, where loss
/// gradients sit close to finite-difference roundoff: weights uniform in
/// `±scale`, layer-norm gains in `1 ± 0.2`.
pub fn grad_check_point(model: &mut Model<f64>, seed: u64) {
    let scale = match model.config.architecture {
        Architecture::Rnn => 1.0,
        _ => 0.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    for id in model.params.ids() {
        let p = model.params.get_mut(id);
        let gain = p.name.contains(".ln") && p.name.ends_with(".g");
        for x in p.tensor.data.iter_mut() {
            *x = if gain { 1.0 + rng.random_range(-0.2..0.2) } else { rng.random_range(-scale..scale) };
        }
    }
}

/// Worst per-tensor relative error of the whole-model loss gradient
/// against central differences, at the point from [`grad_check_point`].
pub fn model_grad_error_with(config: &ModelConfig, seed: u64, step: f64) -> (f64, String) {
    let config = ModelConfig { seed, ..config.clone() };
    let mut model = Model::<f64>::new(config, TINY_VOCAB, TINY_VOCAB).unwrap();
    grad_check_point(&mut model, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let src = random_ids(&mut rng, TINY_LEN, TINY_VOCAB);
    let tgt = random_ids(&mut rng, TINY_LEN, TINY_VOCAB);
    let mut params = model.params.clone();
    let opts = CheckOptions { step, max_per_param: 24, floor: 1e-8, seed };
    let report =
        check_gradients(&mut params, opts, |tape| model.loss(tape, &src, &tgt).map_err(unwrap_autodiff)).unwrap();
    (report.max_rel_error, report.worst_param)
}

/// The transformer's ReLU kinks sit within `1e-4` of some probes.
pub fn grad_step(config: &ModelConfig) -> f64 {
    match config.architecture {
        Architecture::Transformer => 1e-5,
        _ => 1e-4,
    }
}

pub fn model_grad_error(config: &ModelConfig, seed: u64) -> (f64, String) {
    model_grad_error_with(config, seed, grad_step(config))
}

/// A toy decoder whose next-token distribution is a function of the prefix.
pub struct PrefixTable<F: Fn(&[usize]) -> Vec<f64>>(pub F);

impl<F: Fn(&[usize]) -> Vec<f64>> StepModel for PrefixTable<F> {
    type State = Vec<usize>;

    fn start(&self, _: &[usize]) -> Result<Vec<usize>, NmtError> {
        Ok(Vec::new())
    }

    fn step(&self, s: &Vec<usize>) -> Result<Vec<f64>, NmtError> {
        Ok((self.0)(s).into_iter().map(f64::ln).collect())
    }

    fn advance(&self, s: &Vec<usize>, t: usize) -> Result<Vec<usize>, NmtError> {
        let mut s = s.clone();
        s.push(t);
        Ok(s)
    }
}

pub const A: usize = 4;
pub const B: usize = 5;

/// Over ids `<pad> <s> </s> <unk> a b`: greedy takes `a a </s>` (0.22)
/// while `b a </s>` has probability 0.405.
pub fn greedy_trap(prefix: &[usize]) -> Vec<f64> {
    let eos = nl2sparql::corpus::EOS;
    let mut p = vec![0.0; 6];
    match prefix {
        [] => {
            p[A] = 0.55;
            p[B] = 0.45;
        }
        [x] if *x == A => {
            p[A] = 0.4;
            p[B] = 0.3;
            p[eos] = 0.3;
        }
        [_] => {
            p[A] = 0.9;
            p[B] = 0.05;
            p[eos] = 0.05;
        }
        _ => p[eos] = 1.0,
    }
    p
}

/// Every `</s>`-terminated sequence of at most `max_len` tokens with its
/// log-probability, by exhaustive enumeration.
pub fn enumerate_sequences(f: &dyn Fn(&[usize]) -> Vec<f64>, max_len: usize) -> Vec<(Vec<usize>, f64)> {
    let eos = nl2sparql::corpus::EOS;
    let mut out = Vec::new();
    let mut stack = vec![(Vec::new(), 0.0)];
    while let Some((prefix, lp)) = stack.pop() {
        if prefix.len() >= max_len {
            continue;
        }
        for (t, p) in f(&prefix).into_iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let lp = lp + p.ln();
            if t == eos {
                out.push((prefix.clone(), lp));
            } else {
                let mut next = prefix.clone();
                next.push(t);
                stack.push((next, lp));
            }
        }
    }
    out
}

pub mod kb_oracle {
    use std::collections::BTreeMap;

    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    use nl2sparql::kb::{Binding, Pattern, PatternTerm, RdfTerm, SelectQuery, Triple, TripleStore};

    const VARS: [&str; 4] = ["a", "b", "c", "d"];
    const PREDICATES: usize = 3;

    fn iri(i: usize) -> RdfTerm {
        RdfTerm::iri(format!("http://example.org/e{i}"))
    }

    fn pred(i: usize) -> RdfTerm {
        RdfTerm::iri(format!("http://example.org/p{i}"))
    }

    /// Every term a random store can contain.
    pub fn universe() -> Vec<RdfTerm> {
        let mut u: Vec<RdfTerm> = (0..5).map(iri).collect();
        u.extend((0..PREDICATES).map(pred));
        u.push(RdfTerm::literal("x"));
        u.push(RdfTerm::lang_literal("x", "en"));
        u
    }

    pub fn random_store(rng: &mut ChaCha8Rng, max: usize) -> TripleStore {
        let n = rng.random_range(0..=max);
        let objects = universe();
        let triples = (0..n).map(|_| Triple {
            subject: iri(rng.random_range(0..5)),
            predicate: pred(rng.random_range(0..PREDICATES)),
            object: objects[rng.random_range(0..objects.len())].clone(),
        });
        TripleStore::from_triples(triples.collect::<Vec<_>>()).unwrap()
    }

    fn random_term(rng: &mut ChaCha8Rng, pool: &[RdfTerm]) -> PatternTerm {
        if rng.random_bool(0.6) {
            PatternTerm::Var(VARS[rng.random_range(0..VARS.len())].to_string())
        } else {
            PatternTerm::Term(pool[rng.random_range(0..pool.len())].clone())
        }
    }

    pub fn random_query(rng: &mut ChaCha8Rng, max_patterns: usize) -> SelectQuery {
        let u = universe();
        let preds: Vec<RdfTerm> = (0..PREDICATES).map(pred).collect();
        let patterns: Vec<Pattern> = (0..rng.random_range(1..=max_patterns))
            .map(|_| Pattern {
                subject: random_term(rng, &u[..5]),
                predicate: random_term(rng, &preds),
                object: random_term(rng, &u),
            })
            .collect();
        let mut q = SelectQuery { distinct: rng.random_bool(0.5), projection: None, patterns, limit: None, offset: None };
        let vars = q.pattern_vars();
        if !vars.is_empty() && rng.random_bool(0.6) {
            let keep: Vec<String> = vars.iter().filter(|_| rng.random_bool(0.6)).cloned().collect();
            if !keep.is_empty() {
                q.projection = Some(keep);
            }
        }
        if rng.random_bool(0.3) {
            q.limit = Some(rng.random_range(0..6));
        }
        if rng.random_bool(0.2) {
            q.offset = Some(rng.random_range(0..4));
        }
        q
    }

    pub fn render_term(t: &PatternTerm) -> String {
        match t {
            PatternTerm::Var(v) => format!("?{v}"),
            PatternTerm::Term(t) => t.to_string(),
        }
    }

    /// The query as SPARQL text.
    pub fn render(q: &SelectQuery) -> String {
        let proj = match &q.projection {
            None => "*".to_string(),
            Some(vs) => vs.iter().map(|v| format!("?{v}")).collect::<Vec<_>>().join(" "),
        };
        let body: Vec<String> = q
            .patterns
            .iter()
            .map(|p| format!("{} {} {} .", render_term(&p.subject), render_term(&p.predicate), render_term(&p.object)))
            .collect();
        let mut s = format!("SELECT {}{proj} WHERE {{ {} }}", if q.distinct { "DISTINCT " } else { "" }, body.join(" "));
        if let Some(l) = q.limit {
            s += &format!(" LIMIT {l}");
        }
        if let Some(o) = q.offset {
            s += &format!(" OFFSET {o}");
        }
        s
    }

    /// Enumerates every assignment of the pattern variables over the
    /// universe and keeps those whose substituted patterns are all in the
    /// store; then projects, dedupes, sorts and slices.
    pub fn brute_force(q: &SelectQuery, store: &TripleStore) -> Vec<Binding> {
        let u = universe();
        let vars = q.pattern_vars();
        let mut full = Vec::new();
        let mut idx = vec![0usize; vars.len()];
        loop {
            let asg: BTreeMap<&str, &RdfTerm> = vars.iter().map(String::as_str).zip(idx.iter().map(|&i| &u[i])).collect();
            let sub = |t: &PatternTerm| match t {
                PatternTerm::Var(v) => asg[v.as_str()].clone(),
                PatternTerm::Term(t) => t.clone(),
            };
            if q.patterns.iter().all(|p| store.contains(&sub(&p.subject), &sub(&p.predicate), &sub(&p.object))) {
                full.push(asg.clone());
            }
            let mut k = 0;
            while k < idx.len() {
                idx[k] += 1;
                if idx[k] < u.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == idx.len() {
                break;
            }
        }
        let proj = q.projected_vars();
        let mut rows: Vec<Vec<RdfTerm>> =
            full.iter().map(|a| proj.iter().map(|v| a[v.as_str()].clone()).collect()).collect();
        rows.sort();
        if q.distinct {
            rows.dedup();
        }
        let rows = rows.into_iter().skip(q.offset.unwrap_or(0));
        let rows: Vec<Vec<RdfTerm>> = match q.limit {
            Some(l) => rows.take(l).collect(),
            None => rows.collect(),
        };
        rows.into_iter().map(|r| proj.iter().cloned().zip(r).collect()).collect()
    }
}
