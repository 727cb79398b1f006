use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use aspectsim::corpus::{ingest_corpus, ingest_path, vocabulary_path, LabelVocabulary};
use aspectsim::embedding::{
    average_token_embeddings, load_embeddings, mean_token_vector, TokenVectorTable, BINARY_MAGIC,
};
use aspectsim::{AspectId, EmbeddingMatrix};
use proptest::prelude::*;

fn finite_f32() -> impl Strategy<Value = f32> {
    prop_oneof![
        any::<f32>().prop_filter("finite", |x| x.is_finite()),
        Just(-0.0f32),
        Just(f32::MIN_POSITIVE / 4.0),
        Just(f32::MAX),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_roundtrip_is_bit_exact(dim in 1usize..20, rows in prop::collection::vec(("[a-zA-Z0-9_é-]{1,12}", prop::collection::vec(finite_f32(), 20)), 0..30)) {
        let mut m = EmbeddingMatrix::new("t", dim).unwrap();
        let mut seen = BTreeSet::new();
        for (id, row) in rows {
            if seen.insert(id.clone()) {
                m.push(id, &row[..dim]).unwrap();
            }
        }
        let mut buf = Vec::new();
        m.write_binary(&mut buf).unwrap();
        prop_assert!(buf.starts_with(BINARY_MAGIC));
        let back = EmbeddingMatrix::read_binary("t", buf.as_slice()).unwrap();
        prop_assert_eq!(back.ids(), m.ids());
        let bits = |m: &EmbeddingMatrix| m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn text_roundtrip_preserves_values(rows in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 4), 1..20)) {
        let m = EmbeddingMatrix::from_rows("t", 4, rows.iter().enumerate().map(|(i, r)| (format!("w{i}"), r.clone()))).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let back = EmbeddingMatrix::read_text("t", buf.as_slice()).unwrap();
        prop_assert_eq!(back.as_slice(), m.as_slice());
    }
}

#[test]
fn text_format_with_and_without_header() {
    let with = "2 3\nalpha 1 2 3\nbeta -1 0.5 0\n";
    let without = "alpha 1 2 3\nbeta -1 0.5 0\n";
    let a = EmbeddingMatrix::read_text("t", with.as_bytes()).unwrap();
    let b = EmbeddingMatrix::read_text("t", without.as_bytes()).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
    assert_eq!(a.get("beta").unwrap(), [-1.0, 0.5, 0.0]);

    assert!(EmbeddingMatrix::read_text("t", "3 3\nalpha 1 2 3\n".as_bytes()).is_err());
    assert!(EmbeddingMatrix::read_text("t", "alpha 1 2 3\nbeta 1 2\n".as_bytes()).is_err());
    assert!(EmbeddingMatrix::read_text("t", "alpha 1 nan 3\n".as_bytes()).is_err());
    assert!(EmbeddingMatrix::read_text("t", "alpha 1 2 3\nalpha 1 2 3\n".as_bytes()).is_err());
}

#[test]
fn loader_detects_format_and_reports_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let m =
        EmbeddingMatrix::from_rows("x", 2, [("a", vec![1.0, 0.0]), ("z", vec![0.0, 1.0])]).unwrap();
    let bin = dir.path().join("v.aemb");
    m.save_binary(&bin).unwrap();
    let txt = dir.path().join("v.txt");
    let mut f = std::fs::File::create(&txt).unwrap();
    m.write_text(&mut f).unwrap();
    f.flush().unwrap();
    let expected: BTreeSet<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
    for path in [&bin, &txt] {
        let (loaded, coverage) = load_embeddings(path, "specter", Some(&expected)).unwrap();
        assert_eq!(loaded.as_slice(), m.as_slice());
        assert_eq!(loaded.method_tag(), "specter");
        let coverage = coverage.unwrap();
        assert_eq!(coverage.missing, ["b"]);
        assert_eq!(coverage.extra, ["z"]);
    }
}

#[test]
fn mean_over_found_tokens() {
    let mut table = TokenVectorTable::new(3).unwrap();
    table.insert("graph", vec![1.0, 0.0, 2.0]).unwrap();
    table.insert("neural", vec![0.0, 4.0, 2.0]).unwrap();
    table.insert("network", vec![3.0, 0.0, -2.0]).unwrap();
    // Five tokens, "zyxq" is out of vocabulary, "graph" occurs twice.
    let v = mean_token_vector("Graph neural-network, GRAPH zyxq", &table).unwrap();
    assert_eq!(
        v,
        [
            (1.0 + 0.0 + 3.0 + 1.0) / 4.0,
            4.0 / 4.0,
            (2.0 + 2.0 - 2.0 + 2.0) / 4.0
        ]
    );
    assert!(mean_token_vector("nothing known", &table).is_none());
}

const RECORDS: &str = r#"{"paper_id": "p01", "title": "A", "abstract": "graph", "task": ["t1", "t2"], "method": ["m1"], "dataset": []}
{"paper_id": "p02", "title": "B", "abstract": "", "task": ["t1"], "method": ["m1", "m2"], "dataset": ["d1"]}
{"paper_id": "p03", "title": "C", "abstract": "x", "task": [" t2 "], "method": [], "dataset": ["d1"]}
{"paper_id": "p04", "title": "D", "abstract": "x", "task": ["t3"], "method": ["m2"]}
{"paper_id": "p05", "title": "E", "abstract": "x", "task": ["t1", "t3"], "method": ["m3"], "dataset": ["d2"]}
{"paper_id": "p06", "title": "F", "abstract": "x", "task": [], "method": ["m1"], "dataset": ["d1", "d2"]}
{"paper_id": "p07", "title": "G", "abstract": "x", "task": ["t1"], "method": ["m2"], "dataset": ["d3"]}
{"paper_id": "p08", "title": "H", "abstract": "x", "task": ["t2"], "method": ["m3"], "dataset": ["d1"]}
{"paper_id": "p09", "title": "I", "abstract": "x", "task": ["t4"], "method": ["m1"], "dataset": []}
{"paper_id": "p10", "title": "J", "abstract": "x", "task": ["t1", "t4"], "method": ["m4"], "dataset": ["d3"]}
{"paper_id": "p11", "title": "K", "abstract": "x", "task": ["t3"], "method": ["m2", "m4"], "dataset": ["d2"]}
{"paper_id": "p12", "title": "L", "abstract": "x", "task": ["t2", "t1"], "method": ["m1"], "dataset": ["d1"]}
"#;

#[test]
fn vocabulary_counts_match_hand_tally() {
    let corpus = ingest_corpus(RECORDS.as_bytes(), &AspectId::defaults()).unwrap();
    assert_eq!(corpus.len(), 12);
    let mut tally: BTreeMap<(String, String), usize> = BTreeMap::new();
    for line in RECORDS.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for aspect in ["task", "method", "dataset"] {
            for label in v[aspect].as_array().into_iter().flatten() {
                *tally
                    .entry((aspect.into(), label.as_str().unwrap().trim().into()))
                    .or_default() += 1;
            }
        }
    }
    for aspect in corpus.aspects() {
        let vocab = corpus.vocabulary(aspect).unwrap();
        let expected: BTreeMap<&str, usize> = tally
            .iter()
            .filter(|((a, _), _)| a == aspect.as_str())
            .map(|((_, l), c)| (l.as_str(), *c))
            .collect();
        assert_eq!(vocab.len(), expected.len());
        for (label, count) in expected {
            assert_eq!(vocab.paper_count(label), Some(count), "{aspect}/{label}");
        }
    }
    assert_eq!(
        corpus
            .vocabulary(&AspectId::new("task"))
            .unwrap()
            .paper_count("t1"),
        Some(6)
    );
}

#[test]
fn snapshot_roundtrip() {
    let corpus = ingest_corpus(RECORDS.as_bytes(), &AspectId::defaults()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    let written = corpus.save(&path).unwrap();
    assert_eq!(written.len(), 4);
    let back = ingest_path(&path, &AspectId::defaults()).unwrap();
    assert_eq!(back.papers(), corpus.papers());
    let task = AspectId::new("task");
    let vocab_file = std::fs::File::open(vocabulary_path(&path, &task)).unwrap();
    let vocab =
        LabelVocabulary::read_tsv(task.clone(), std::io::BufReader::new(vocab_file)).unwrap();
    assert_eq!(&vocab, corpus.vocabulary(&task).unwrap());
}

#[test]
fn pooled_corpus_vectors() {
    let corpus = ingest_corpus(RECORDS.as_bytes(), &AspectId::defaults()).unwrap();
    let mut table = TokenVectorTable::new(2).unwrap();
    table.insert("graph", vec![1.0, 1.0]).unwrap();
    table.insert("a", vec![0.0, 3.0]).unwrap();
    table.insert("b", vec![2.0, 0.0]).unwrap();
    let pooled = average_token_embeddings(&corpus, &table).unwrap();
    // p01 reads "A graph", p02 is "B" with an empty abstract; the rest have no known token.
    assert_eq!(pooled.matrix.ids(), ["p01", "p02"]);
    assert_eq!(pooled.matrix.get("p01").unwrap(), [0.5, 2.0]);
    assert_eq!(pooled.matrix.get("p02").unwrap(), [2.0, 0.0]);
    assert_eq!(pooled.omitted.len(), 10);
}
