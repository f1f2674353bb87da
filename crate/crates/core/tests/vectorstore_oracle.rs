use coa::backends::{EmbeddingVector, MockEmbedder};
use coa::vectorstore::{chunk_document, VectorStore};
use proptest::prelude::*;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0).collect()
}

fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

fn random_store(rng: &mut ChaCha8Rng, docs: usize, per_doc: usize, dim: usize) -> (VectorStore, Vec<(String, usize, Vec<f64>)>) {
    let mut store = VectorStore::new();
    let mut flat = Vec::new();
    for d in 0..docs {
        let doc = format!("doc{d:02}");
        let mut texts = Vec::new();
        let mut vectors = Vec::new();
        for c in 0..per_doc {
            // Every 50th chunk repeats an earlier vector to force ties.
            let v = if flat.len() > 10 && flat.len() % 50 == 0 {
                let (_, _, earlier): &(String, usize, Vec<f64>) = &flat[flat.len() / 3];
                earlier.clone()
            } else {
                random_vector(rng, dim)
            };
            texts.push(format!("{doc} chunk {c}"));
            vectors.push(EmbeddingVector::new(v.clone()).unwrap());
            flat.push((doc.clone(), c, v));
        }
        store.replace_document(&doc, &texts, vectors).unwrap();
    }
    (store, flat)
}

#[test]
fn query_matches_full_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (store, flat) = random_store(&mut rng, 10, 100, 32);
    assert_eq!(store.len(), 1000);
    for _ in 0..100 {
        let q = random_vector(&mut rng, 32);
        let mut expected: Vec<(f64, &str, usize)> =
            flat.iter().map(|(d, c, v)| (brute_cosine(&q, v), d.as_str(), *c)).collect();
        expected.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
        let qv = EmbeddingVector::new(q.clone()).unwrap();
        for k in [1, 3, 10] {
            let hits = store.query(&qv, k).unwrap();
            assert_eq!(hits.len(), k);
            for (hit, (sim, doc, idx)) in hits.iter().zip(&expected) {
                assert_eq!((hit.chunk.doc_id.as_str(), hit.chunk.chunk_index), (*doc, *idx));
                assert!((hit.similarity - sim).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn k_larger_than_store_returns_everything() {
    let e = MockEmbedder::new(16);
    let mut store = VectorStore::new();
    store.upsert_chunks("a", &["one".into(), "two".into()], &e).unwrap();
    assert_eq!(store.query(&e.embed_one("one"), 10).unwrap().len(), 2);
}

#[test]
fn persistence_preserves_query_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (store, _) = random_store(&mut rng, 3, 40, 24);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    store.save(&path).unwrap();
    let loaded = VectorStore::load(&path).unwrap();
    assert_eq!(loaded, store);
    let q = EmbeddingVector::new(random_vector(&mut rng, 24)).unwrap();
    assert_eq!(loaded.query(&q, 5).unwrap(), store.query(&q, 5).unwrap());
}

proptest! {
    #[test]
    fn chunks_cover_the_document(text in "[a-z ]{0,400}", chunk in 1usize..60, overlap_frac in 0.0f64..0.9) {
        let overlap = ((chunk as f64) * overlap_frac) as usize;
        let chunks = chunk_document(&text, chunk, overlap).unwrap();
        let chars: Vec<char> = text.chars().collect();
        let step = chunk - overlap;
        let mut rebuilt: Vec<char> = Vec::new();
        for (i, c) in chunks.iter().enumerate() {
            let c: Vec<char> = c.chars().collect();
            prop_assert!(c.len() <= chunk);
            prop_assert_eq!(&c[..], &chars[i * step..i * step + c.len()]);
            rebuilt.truncate(i * step);
            rebuilt.extend(c);
        }
        prop_assert_eq!(rebuilt, chars);
    }
}
