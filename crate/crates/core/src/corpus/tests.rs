use std::collections::HashMap;

use super::*;

fn tmpdir(tag: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("vocabrl-corpus-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn vocab_min_count() {
    let v = Vocabulary::build(["a a b"], 2).unwrap();
    assert_eq!(v.len(), NUM_SPECIALS + 1);
    assert_eq!(v.id("a"), NUM_SPECIALS);
    assert_eq!(v.id("b"), UNK);
    let v = Vocabulary::build(["a b"], 1).unwrap();
    assert_eq!(v.len(), 6);
    assert!(Vocabulary::build([""; 3], 1).is_err());
}

#[test]
fn vocab_counts_and_order() {
    let lines = ["x y z y", "z y w", "w q"];
    let v = Vocabulary::build(lines, 1).unwrap();
    let mut recount: HashMap<&str, u64> = HashMap::new();
    for l in lines {
        for t in l.split(' ') {
            *recount.entry(t).or_default() += 1;
        }
    }
    for (t, c) in &recount {
        assert_eq!(v.count(v.id(t)), *c);
    }
    // y:3, then z,w (2, first seen z), then x,q
    let order: Vec<&str> = v.tokens()[NUM_SPECIALS..].iter().map(String::as_str).collect();
    assert_eq!(order, ["y", "z", "w", "x", "q"]);
    for (i, t) in v.tokens().iter().enumerate() {
        assert_eq!(v.id(t), i);
    }
    assert_eq!(&v.tokens()[..NUM_SPECIALS], &SPECIAL_TOKENS);
}

#[test]
fn vocab_file_round_trip() {
    let v = Vocabulary::build(["a a b c c c"], 1).unwrap();
    let p = tmpdir("vocab").join("v.tsv");
    v.save(&p).unwrap();
    let w = Vocabulary::load(&p).unwrap();
    assert_eq!(v.tokens(), w.tokens());
    assert_eq!(v.counts(), w.counts());
}

#[test]
fn encode_decode() {
    let v = Vocabulary::build(["a b c"], 1).unwrap();
    let ids = v.encode_target("a zz c");
    assert_eq!(ids, vec![v.id("a"), UNK, v.id("c"), EOS]);
    assert_eq!(v.decode(&ids), "a <unk> c");
}

#[test]
fn distractors_fill_to_size() {
    let mut v = Vocabulary::build(["a a b"], 1).unwrap();
    v.extend_with_distractors(50);
    assert_eq!(v.len(), 50);
    assert!(v.counts()[NUM_SPECIALS..].iter().all(|&c| c >= 1));
    for (i, t) in v.tokens().iter().enumerate() {
        assert_eq!(v.id(t), i);
    }
}

#[test]
fn target_length_filter() {
    let text = ParallelText {
        source: vec!["a b".into(), "a".into(), "b".into()],
        target: vec!["x x x x x x".into(), "x".into(), "".into()],
    };
    let v = Vocabulary::build(["a b x"], 1).unwrap();
    let loaded = examples_from_text(&text, &v, &v, 5);
    assert_eq!(loaded.dropped, 1);
    assert_eq!(loaded.examples.iter().map(|e| e.id).collect::<Vec<_>>(), [1, 2]);
    assert_eq!(examples_from_text(&text, &v, &v, 100).dropped, 0);
}

#[test]
fn parallel_files() {
    let d = tmpdir("par");
    let text = ParallelText { source: vec!["a b".into(), "b".into()], target: vec!["x".into(), "y y".into()] };
    text.write(&d, "train").unwrap();
    let v = Vocabulary::build(["a b x y"], 1).unwrap();
    let l = load_parallel(&d.join("train.src"), &d.join("train.tgt"), &v, &v, 10).unwrap();
    assert_eq!(l.examples.len(), 2);
    std::fs::write(d.join("bad.tgt"), "x\n").unwrap();
    assert!(load_parallel(&d.join("train.src"), &d.join("bad.tgt"), &v, &v, 10).is_err());
}

#[test]
fn feature_round_trip() {
    let d = tmpdir("feat");
    let rows: Vec<Vec<f64>> = (0..3).map(|r| (0..4096).map(|c| ((r * 7 + c) as f64).sin() * 1e3).collect()).collect();
    write_features(&d.join("f.txt"), &rows).unwrap();
    let back = read_features(&d.join("f.txt")).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in rows.iter().flatten().zip(back.iter().flatten()) {
        assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
    }
    std::fs::write(d.join("g.txt"), "1 2 3\n4 5\n").unwrap();
    assert!(read_features(&d.join("g.txt")).is_err());
    std::fs::write(d.join("t.txt"), "a\nb\nc\n").unwrap();
    let v = Vocabulary::build(["a b c"], 1).unwrap();
    let l = load_features(&d.join("f.txt"), &d.join("t.txt"), &v, 10).unwrap();
    assert_eq!(l.examples[2].source.features().unwrap().len(), 4096);
}

#[test]
fn synthetic_task_is_reverse_substitution() {
    let spec = SyntheticSpec { train: 300, dev: 50, test: 50, variants: 1, ..Default::default() };
    let task = make_synthetic_task(&spec).unwrap();
    let mut dict: HashMap<String, String> = HashMap::new();
    for (s, t) in task.train.source.iter().zip(&task.train.target) {
        let sw: Vec<&str> = s.split(' ').collect();
        let tw: Vec<&str> = t.split(' ').rev().collect();
        assert_eq!(sw.len(), tw.len());
        for (a, b) in sw.iter().zip(tw) {
            let prev = dict.insert(a.to_string(), b.to_string());
            assert!(prev.is_none() || prev.as_deref() == Some(b));
        }
    }
    assert_eq!(task, make_synthetic_task(&spec).unwrap());
    let train: std::collections::HashSet<_> = task.train.source.iter().collect();
    assert!(task.dev.source.iter().chain(&task.test.source).all(|s| !train.contains(s)));
}

#[test]
fn synthetic_rejects_bad_spec() {
    for spec in [
        SyntheticSpec { min_len: 0, ..Default::default() },
        SyntheticSpec { min_len: 5, max_len: 4, ..Default::default() },
        SyntheticSpec { src_vocab: 0, ..Default::default() },
        SyntheticSpec { zipf: f64::NAN, ..Default::default() },
        SyntheticSpec { src_vocab: 2, min_len: 1, max_len: 1, ..Default::default() },
    ] {
        assert!(make_synthetic_task(&spec).is_err(), "{spec:?}");
    }
}

#[test]
fn synthetic_zipf_exponent() {
    let spec = SyntheticSpec { zipf: 1.1, ..Default::default() };
    let task = make_synthetic_task(&spec).unwrap();
    let mut counts = vec![0usize; spec.src_vocab];
    for line in &task.train.source {
        for w in line.split(' ') {
            counts[w[1..].parse::<usize>().unwrap()] += 1;
        }
    }
    // least-squares slope of log count against log rank over the head
    let pts: Vec<(f64, f64)> = (0..20).map(|r| (((r + 1) as f64).ln(), (counts[r] as f64).ln())).collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 20.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 20.0;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let fitted = -num / den;
    assert!((fitted - spec.zipf).abs() < 0.05 * spec.zipf, "{fitted}");
}

#[test]
fn synthetic_features() {
    let spec = SyntheticSpec { train: 20, dev: 5, test: 5, feature_dim: 8, ..Default::default() };
    let task = make_synthetic_task(&spec).unwrap();
    assert_eq!(task.features[0].len(), 20);
    assert!(task.features.iter().flatten().all(|f| f.len() == 8));
}

fn toy_examples(n: usize) -> Vec<Example> {
    (0..n)
        .map(|i| Example { id: i, source: Source::Tokens(vec![5; 1 + (i * 7) % 5]), target: vec![EOS] })
        .collect()
}

#[test]
fn batches_cover_epoch() {
    let ex = toy_examples(10);
    let batches: Vec<_> = batch_iter(&ex, 4, Some(3), SortKey::Source).collect();
    assert_eq!(batches.iter().map(Batch::len).collect::<Vec<_>>(), [4, 4, 2]);
    let mut ids: Vec<usize> = batches.iter().flat_map(Batch::ids).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..10).collect::<Vec<_>>());
    for b in &batches {
        assert!(b.examples.windows(2).all(|w| w[0].source.len() >= w[1].source.len()));
    }
    let again: Vec<_> = batch_iter(&ex, 4, Some(3), SortKey::Source).collect();
    assert_eq!(batches, again);
}

#[test]
fn split_examples() {
    let ex = toy_examples(128);
    let batch = batch_iter(&ex, 128, None, SortKey::Source).next().unwrap();
    let parts = split_batch(&batch, 4).unwrap();
    assert!(parts.iter().all(|p| p.len() == 32));
    let joined: Vec<_> = parts.iter().flat_map(|p| p.examples.clone()).collect();
    assert_eq!(joined, batch.examples);
    assert_eq!(split_batch(&batch, 1).unwrap()[0], batch);
    let parts = split_batch(&batch, 5).unwrap();
    let sizes: Vec<_> = parts.iter().map(Batch::len).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    assert!(split_batch(&batch, 129).is_err());
    assert!(split_batch(&batch, 0).is_err());
}
