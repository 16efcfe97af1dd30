mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::kb_oracle::{brute_force, random_query, random_store, render};
use nl2sparql::codec::PrefixTable;
use nl2sparql::kb::{
    parse_ntriples, parse_select, Binding, Endpoint, EndpointConfig, KbError, KnowledgeBase, RdfTerm, TermKind,
    TripleStore,
};

/// A loopback HTTP server answering each request with the next canned
/// `(status, body)`; the last one repeats. Request lines are recorded.
struct Mock {
    url: String,
    requests: Arc<Mutex<Vec<String>>>,
}

fn mock(responses: Vec<(u16, String)>) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/sparql", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    std::thread::spawn(move || {
        for (n, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                head.push_str(&line);
            }
            log.lock().unwrap().push(head);
            let (status, body) = &responses[n.min(responses.len() - 1)];
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/sparql-results+json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    Mock { url, requests }
}

fn config(url: &str) -> EndpointConfig {
    EndpointConfig {
        max_retries: 2,
        backoff: Duration::from_millis(1),
        timeout: Duration::from_secs(10),
        ..EndpointConfig::new(url).unwrap()
    }
}

fn results_json(rows: &[Binding]) -> String {
    let rows: Vec<serde_json::Value> = rows
        .iter()
        .map(|b| {
            let obj: serde_json::Map<String, serde_json::Value> = b
                .iter()
                .map(|(k, t)| {
                    let mut v = serde_json::json!({ "value": t.value });
                    v["type"] = match t.kind {
                        TermKind::Iri => "uri",
                        TermKind::Literal => "literal",
                        TermKind::BlankNode => "bnode",
                    }
                    .into();
                    if let Some(l) = &t.lang {
                        v["xml:lang"] = l.clone().into();
                    }
                    if let Some(d) = &t.datatype {
                        v["datatype"] = d.clone().into();
                    }
                    (k.to_string(), v)
                })
                .collect();
            serde_json::Value::Object(obj)
        })
        .collect();
    serde_json::json!({ "head": { "vars": [] }, "results": { "bindings": rows } }).to_string()
}

const TABLE_TWO: &str = r#"{"head":{"vars":["uri","label"]},"results":{"bindings":[
  {"uri":{"type":"uri","value":"http://dbpedia.org/resource/Carew_Cross"},
   "label":{"type":"literal","xml:lang":"en","value":"Carew Cross"}}]}}"#;

#[test]
fn endpoint_returns_table_two_binding() {
    let m = mock(vec![(200, TABLE_TWO.into())]);
    let ep = Endpoint::new(config(&m.url)).unwrap();
    let rows = ep.select("SELECT DISTINCT ?uri ?label WHERE { ?uri a dbo:Monument ; rdfs:label ?label . }").unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].get("uri"), Some(&RdfTerm::iri("http://dbpedia.org/resource/Carew_Cross")));
    assert_eq!(rows[0].get("label"), Some(&RdfTerm::lang_literal("Carew Cross", "en")));
    let reqs = m.requests.lock().unwrap();
    assert_eq!(reqs.len(), 1);
    assert!(reqs[0].starts_with("GET /sparql?query="), "{}", reqs[0]);
    assert!(reqs[0].to_ascii_lowercase().contains("accept: application/sparql-results+json"));
}

#[test]
fn server_errors_exhaust_retries() {
    let m = mock(vec![(500, String::new())]);
    let err = Endpoint::new(config(&m.url)).unwrap().select("SELECT ?s WHERE { ?s ?p ?o }").unwrap_err();
    assert!(matches!(err, KbError::Http(500)), "{err}");
    assert_eq!(m.requests.lock().unwrap().len(), 3);
}

#[test]
fn transient_error_is_retried() {
    let m = mock(vec![(503, String::new()), (200, TABLE_TWO.into())]);
    let rows = Endpoint::new(config(&m.url)).unwrap().select("SELECT ?s WHERE { ?s ?p ?o }").unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(m.requests.lock().unwrap().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let m = mock(vec![(400, String::new())]);
    let err = Endpoint::new(config(&m.url)).unwrap().select("SELECT ?s WHERE { ?s ?p ?o }").unwrap_err();
    assert!(matches!(err, KbError::Http(400)));
    assert_eq!(m.requests.lock().unwrap().len(), 1);
}

#[test]
fn zero_rows_is_not_an_error() {
    let m = mock(vec![(200, r#"{"head":{"vars":["s"]},"results":{"bindings":[]}}"#.into())]);
    assert!(Endpoint::new(config(&m.url)).unwrap().select("SELECT ?s WHERE { ?s ?p ?o }").unwrap().is_empty());
}

#[test]
fn malformed_body_is_reported() {
    let m = mock(vec![(200, "<html>busy</html>".into())]);
    let err = Endpoint::new(config(&m.url)).unwrap().select("SELECT ?s WHERE { ?s ?p ?o }").unwrap_err();
    assert!(matches!(err, KbError::MalformedResponse(_)));
}

#[test]
fn unreachable_endpoint_is_a_network_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = Endpoint::new(config(&format!("http://127.0.0.1:{port}/sparql")))
        .unwrap()
        .select("SELECT ?s WHERE { ?s ?p ?o }")
        .unwrap_err();
    assert!(matches!(err, KbError::Network(_)), "{err}");
}

fn row(i: usize) -> Binding {
    [("s", RdfTerm::iri(format!("http://example.org/e{i}")))].into_iter().collect()
}

#[test]
fn pages_until_a_short_page() {
    let m = mock(vec![
        (200, results_json(&[row(0), row(1)])),
        (200, results_json(&[row(2), row(3)])),
        (200, results_json(&[row(4)])),
    ]);
    let ep = Endpoint::new(EndpointConfig { page_size: 2, ..config(&m.url) }).unwrap();
    let rows = ep.select("SELECT ?s WHERE { ?s ?p ?o }").unwrap();
    assert_eq!(rows, (0..5).map(row).collect::<Vec<_>>());
    let reqs = m.requests.lock().unwrap();
    assert_eq!(reqs.len(), 3);
    for (r, off) in reqs.iter().zip(["OFFSET+0", "OFFSET+2", "OFFSET+4"]) {
        assert!(r.contains(off) || r.contains(&off.replace('+', "%20")), "{r}");
    }
}

#[test]
fn explicit_limit_disables_paging() {
    let m = mock(vec![(200, results_json(&[row(0), row(1)]))]);
    let ep = Endpoint::new(EndpointConfig { page_size: 2, ..config(&m.url) }).unwrap();
    assert_eq!(ep.select("SELECT ?s WHERE { ?s ?p ?o } LIMIT 2").unwrap().len(), 2);
    assert_eq!(m.requests.lock().unwrap().len(), 1);
}

#[test]
fn cached_responses_skip_the_network() {
    let dir = tempfile::tempdir().unwrap();
    let m = mock(vec![(200, TABLE_TWO.into()), (500, String::new())]);
    let ep = Endpoint::new(EndpointConfig { cache_dir: Some(dir.path().into()), ..config(&m.url) }).unwrap();
    let q = "SELECT ?uri ?label WHERE { ?uri rdfs:label ?label }";
    let first = ep.select(q).unwrap();
    assert_eq!(ep.select(q).unwrap(), first);
    assert_eq!(m.requests.lock().unwrap().len(), 1);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

const FIXTURE: &str = r#"<http://dbpedia.org/resource/Carew_Cross> <http://dbpedia.org/ontology/location> <http://dbpedia.org/resource/Carew> .
<http://dbpedia.org/resource/Carew_Cross> <http://www.w3.org/1999/02/22-rdf-syntax-ns#type> <http://dbpedia.org/ontology/Monument> .
<http://dbpedia.org/resource/Carew_Cross> <http://www.w3.org/2000/01/rdf-schema#label> "Carew Cross"@en .
<http://dbpedia.org/resource/Arch_X> <http://www.w3.org/1999/02/22-rdf-syntax-ns#type> <http://dbpedia.org/ontology/Monument> .
<http://dbpedia.org/resource/Arch_X> <http://www.w3.org/2000/01/rdf-schema#label> "Arch X"@en .
"#;

#[test]
fn five_line_fixture_loads_and_answers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kb.nt");
    std::fs::write(&path, format!("{FIXTURE}{FIXTURE}")).unwrap();
    let store = TripleStore::load(&path).unwrap();
    assert_eq!(store.len(), 5);
    let rows = store.select("SELECT ?x WHERE { <http://dbpedia.org/resource/Carew_Cross> dbo:location ?x }").unwrap();
    assert_eq!(rows, vec![[("x", RdfTerm::iri("http://dbpedia.org/resource/Carew"))].into_iter().collect()]);
    std::fs::write(&path, "").unwrap();
    assert!(TripleStore::load(&path).unwrap().is_empty());
}

#[test]
fn parse_errors_carry_line_numbers() {
    let err = parse_ntriples("<http://a> <http://b> <http://c> .\n<http://a> <http://b> .\n").unwrap_err();
    assert!(matches!(err, KbError::Parse { line: 2, .. }), "{err}");
}

#[test]
fn local_and_endpoint_backends_agree() {
    let store = TripleStore::from_triples(parse_ntriples(FIXTURE).unwrap()).unwrap();
    let q = "SELECT ?uri ?label WHERE { ?uri a dbo:Monument ; rdfs:label ?label . }";
    let local = store.select(q).unwrap();
    let m = mock(vec![(200, results_json(&local))]);
    let remote = Endpoint::new(config(&m.url)).unwrap().select(q).unwrap();
    let mut a = local.clone();
    let mut b = remote;
    a.sort_by_key(|r| format!("{r:?}"));
    b.sort_by_key(|r| format!("{r:?}"));
    assert_eq!(a, b);
    assert_eq!(local.len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn local_evaluator_matches_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = random_store(&mut rng, 30);
        let q = random_query(&mut rng, 3);
        prop_assert_eq!(q.evaluate(&store), brute_force(&q, &store));
    }

    #[test]
    fn rendered_queries_parse_back(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_query(&mut rng, 3);
        prop_assert_eq!(parse_select(&render(&q), &PrefixTable::dbpedia()).unwrap(), q);
    }
}
