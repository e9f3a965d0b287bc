mod common;

use std::collections::HashSet;
use std::fs;

use common::{lang, tree_digests};
use marginmine::corpus::{dedup_global, read_block, BlockManifest};
use marginmine::encoder::{read_embeddings, write_embeddings};
use marginmine::pipeline::{plan_text, run, execute, ExecOptions, Layout, PipelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn raw_corpus(dir: &std::path::Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut text = String::new();
    for _ in 0..3000 {
        let n = rng.random_range(1..4);
        let para: Vec<String> = (0..n).map(|_| format!("This is sentence number {}.", rng.random_range(0..1500))).collect();
        text.push_str(&para.join(" "));
        text.push('\n');
    }
    // wrong script, too long, and tab-separated content
    text.push_str("Это русское предложение.\n");
    text.push_str(&format!("{}.\n", "a".repeat(800)));
    text.push_str("Column one\tcolumn two.\n");
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("en.txt"), text).unwrap();
}

#[test]
fn preprocess_deduplicates_across_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("input");
    raw_corpus(&input);
    let mut cfg = PipelineConfig::default();
    cfg.work_dir = dir.path().join("work");
    cfg.input_dir = input;
    cfg.langs = vec![lang("en")];
    cfg.block_capacity = 400;
    assert!(run(&cfg).unwrap().success());

    let corpus = Layout::new(&cfg.work_dir).corpus_dir();
    let m = BlockManifest::load(&corpus, &lang("en")).unwrap();
    m.validate().unwrap();
    let mut seen = HashSet::new();
    for b in &m.blocks {
        for s in read_block(&corpus, &m, b.index).unwrap() {
            assert!(!s.contains('\t') && !s.is_empty() && s.chars().count() <= cfg.max_chars);
            assert!(!s.contains("русское"));
            assert!(seen.insert(s.clone()), "duplicate {s}");
        }
    }
    assert!(seen.len() <= 1501 && seen.len() > 1400, "{}", seen.len());
    assert!(seen.contains("Column one column two."));
    assert_eq!(m.sentence_count(), seen.len() as u64);

    // deduplicating the output again changes nothing
    let again = dir.path().join("again");
    let m2 = dedup_global(&m, &corpus, &again).unwrap();
    assert_eq!(m2, m);
    for b in &m.blocks {
        assert_eq!(read_block(&again, &m2, b.index).unwrap(), read_block(&corpus, &m, b.index).unwrap());
    }
}

#[test]
fn text_task_alone_is_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("input");
    raw_corpus(&input);
    let mut cfg = PipelineConfig::default();
    cfg.work_dir = dir.path().join("work");
    cfg.input_dir = input.clone();
    cfg.langs = vec![lang("en")];
    let dag = plan_text(&cfg).unwrap();
    assert_eq!(execute(&dag, &cfg, &ExecOptions::default()).unwrap().ran(), ["preprocess:en"]);
    let before = tree_digests(&cfg.work_dir, &["journal.jsonl", "state.json"]);
    assert_eq!(execute(&dag, &cfg, &ExecOptions::default()).unwrap().skipped(), ["preprocess:en"]);

    fs::write(input.join("en.txt"), "A brand new corpus. With two sentences.\n").unwrap();
    assert_eq!(execute(&dag, &cfg, &ExecOptions::default()).unwrap().ran(), ["preprocess:en"]);
    let after = tree_digests(&cfg.work_dir, &["journal.jsonl", "state.json"]);
    assert_ne!(before, after);
    // stale blocks of the larger corpus are gone
    let corpus = Layout::new(&cfg.work_dir).corpus_dir();
    assert_eq!(fs::read_dir(&corpus).unwrap().count(), 2);
}

#[test]
fn embeddings_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let c = marginmine::evalkit::plant_corpus(300, 100, 48, 0.1, 9).unwrap();
    let p = dir.path().join("x.emb");
    let part = c.a.slice_rows(17, 311);
    write_embeddings(&part, &p).unwrap();
    let back = read_embeddings(&p).unwrap();
    assert_eq!(back.base_global_id(), part.base_global_id());
    assert_eq!(back.rows(), part.rows());
    let bits = |b: &marginmine::encoder::EmbeddingBlock| b.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&part));
}
