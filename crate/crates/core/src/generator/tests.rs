use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{Source, EOS, NUM_SPECIALS};
use crate::predictor::VocabMask;
use crate::tensor::{gradient_check, GradStore, Graph, Tensor};

fn text_model(seed: u64) -> Generator<f64> {
    let mut m = Generator::new(GeneratorConfig::translation(7, 9, 4), seed).unwrap();
    jitter(&mut m, seed + 100, 0.3);
    m
}

fn jitter(m: &mut Generator<f64>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in m.params.ids().collect::<Vec<_>>() {
        for v in m.params.get_mut(id).data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

fn src() -> Source {
    Source::Tokens(vec![4, 6, 5])
}

#[test]
fn encode_shapes_and_determinism() {
    let m = text_model(1);
    let mut g = Graph::inference(&m.params);
    let (mem, h0) = m.encode(&mut g, &[4, 6, 5]).unwrap();
    assert_eq!(g.shape(mem.states), &[3, 8]);
    assert_eq!(g.value(h0).len(), 4);
    let first = g.value(mem.states).data().to_vec();
    let (mem2, _) = m.encode(&mut g, &[4, 6, 5]).unwrap();
    assert_eq!(g.value(mem2.states).data(), &first[..]);
    assert!(m.encode(&mut g, &[]).is_err());
}

#[test]
fn encode_and_step_gradient_check() {
    let mut m = text_model(2);
    let model = m.clone();
    let report = gradient_check(&mut m.params, None, None, |g| {
        let head = model.full_head(g);
        let st = model.begin(g, &src()).unwrap();
        let (_, logp) = model.step(g, &st, 1, &head).unwrap();
        g.pick(logp, 5)
    })
    .unwrap();
    assert!(report.agrees(1e-5, 1e-9), "{report:?}");
}

#[test]
fn feature_initialization() {
    let mut m = Generator::<f64>::new(GeneratorConfig::captioning(5, 9, 4), 3).unwrap();
    let feat = m.layout.feat.unwrap();
    m.params.get_mut(feat.w).data_mut().fill(0.0);
    let f = [0.5, -2.0, 3.0, 0.1, 9.0];
    {
        let mut g = Graph::inference(&m.params);
        let st = m.init_from_features(&mut g, &f).unwrap();
        assert!(g.value(st.layers[0].h).data().iter().all(|v| *v == 0.0));
        assert!(st.memory.is_none() && st.feed.is_none());
        assert!(m.init_from_features(&mut g, &f[..4]).is_err());
    }
    jitter(&mut m, 4, 0.5);
    let mut g = Graph::inference(&m.params);
    let st = m.init_from_features(&mut g, &f).unwrap();
    assert!(g.value(st.layers[0].h).data().iter().all(|v| v.abs() < 1.0));
    let model = m.clone();
    drop(g);
    let report = gradient_check(&mut m.params, None, None, |g| {
        let st = model.init_from_features(g, &[0.1, 0.2, -0.3, 0.4, -0.5]).unwrap();
        let w = g.constant(Tensor::vector(vec![1.0, -2.0, 0.5, 3.0]));
        g.dot(st.layers[0].h, w)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn attention_examples() {
    let m = text_model(5);
    let mut g = Graph::inference(&m.params);
    let h = g.constant(Tensor::vector(vec![0.3, -0.2, 0.9, 0.1]));
    let one = g.constant(Tensor::new(&[1, 8], (0..8).map(|i| i as f64 / 10.0).collect()).unwrap());
    let (_, a) = m.attention(&mut g, h, &Memory { states: one }).unwrap();
    assert_eq!(g.value(a).data(), &[1.0]);
    let same = g.constant(Tensor::new(&[3, 8], (0..24).map(|i| (i % 8) as f64).collect()).unwrap());
    let (_, a) = m.attention(&mut g, h, &Memory { states: same }).unwrap();
    assert!(g.value(a).data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let rows = rng.gen_range(1..7);
        let st = g.constant(Tensor::from_fn(&[rows, 8], |_| rng.gen_range(-3.0..3.0)));
        let (s, a) = m.attention(&mut g, h, &Memory { states: st }).unwrap();
        assert!((g.value(a).data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(g.value(s).len(), 4);
    }
}

#[test]
fn dot_attention_sums_directions() {
    let mut cfg = GeneratorConfig::translation(7, 9, 2);
    cfg.attention = Attention::Dot;
    let m = Generator::<f64>::new(cfg, 7).unwrap();
    assert!(m.layout.attn_w.is_none());
    let mut g = Graph::inference(&m.params);
    let h = g.constant(Tensor::vector(vec![1.0, 2.0]));
    let st = g.constant(Tensor::new(&[2, 4], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
    let (_, a) = m.attention(&mut g, h, &Memory { states: st }).unwrap();
    // scores: 1 + 2 = 3 and 0
    let e3 = 3f64.exp();
    assert!((g.value(a).data()[0] - e3 / (e3 + 1.0)).abs() < 1e-12);
}

#[test]
fn full_distribution_examples() {
    let mut m = text_model(8);
    let mut g = Graph::inference(&m.params);
    let s = g.constant(Tensor::vector(vec![0.4, -0.1, 0.8, 0.3]));
    let p = m.output_dist_full(&mut g, s);
    assert!((g.value(p).data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    let best = super::model::argmax(g.value(p).data());
    drop(g);
    m.params.get_mut(m.layout.out_b).data_mut().iter_mut().for_each(|b| *b += 3.0);
    let mut g = Graph::inference(&m.params);
    let s = g.constant(Tensor::vector(vec![0.4, -0.1, 0.8, 0.3]));
    let p = m.output_dist_full(&mut g, s);
    assert_eq!(super::model::argmax(g.value(p).data()), best);
    drop(g);
    m.params.get_mut(m.layout.out_w).data_mut().fill(0.0);
    m.params.get_mut(m.layout.out_b).data_mut().fill(0.0);
    let mut g = Graph::inference(&m.params);
    let s = g.constant(Tensor::vector(vec![0.4, -0.1, 0.8, 0.3]));
    let p = m.output_dist_full(&mut g, s);
    assert!(g.value(p).data().iter().all(|v| (v - 1.0 / 9.0).abs() < 1e-15));
}

#[test]
fn reduced_distribution_is_renormalized_full() {
    let m = text_model(9);
    let mut g = Graph::inference(&m.params);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let s = g.constant(Tensor::from_fn(&[4], |_| rng.gen_range(-2.0..2.0)));
        let full = m.output_dist_full(&mut g, s);
        let full = g.value(full).data().to_vec();
        let mut ids: Vec<usize> = (0..9).filter(|_| rng.gen_bool(0.5)).collect();
        ids.push(EOS);
        ids.dedup();
        let mask = VocabMask::new(ids.into_iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect(), 9).unwrap();
        let head = m.reduced_head(&mut g, &mask).unwrap();
        let red = m.output_dist_reduced(&mut g, &head, s);
        let red = g.value(red).data().to_vec();
        let z: f64 = mask.ids().iter().map(|&w| full[w]).sum();
        for (i, &w) in mask.ids().iter().enumerate() {
            assert!((red[i] - full[w] / z).abs() < 1e-6);
        }
        assert!((red.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    let s = g.constant(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]));
    let head = m.reduced_head(&mut g, &VocabMask::full(9)).unwrap();
    let red = m.output_dist_reduced(&mut g, &head, s);
    let full = m.output_dist_full(&mut g, s);
    assert_eq!(g.value(red).data(), g.value(full).data());
}

#[test]
fn reduced_gradients_stay_on_mask_rows() {
    let m = text_model(11);
    let mask = VocabMask::new(vec![0, 1, 2, 3, 6, 8], 9).unwrap();
    let mut grads = GradStore::zeros_like(&m.params);
    let mut g = Graph::new(&m.params);
    let head = m.reduced_head(&mut g, &mask).unwrap();
    let loss = m.xent(&mut g, &src(), &[6, 8, EOS], &head).unwrap();
    g.backward(loss, &mut grads).unwrap();
    let gw = grads.get(m.layout.out_w);
    let gb = grads.get(m.layout.out_b);
    for r in 0..9 {
        let zero = gw.row(r).iter().all(|v| *v == 0.0) && gb.data()[r] == 0.0;
        assert_eq!(zero, !mask.contains(r), "row {r}");
    }
}

#[test]
fn step_examples() {
    let m = text_model(12);
    let mut g = Graph::inference(&m.params);
    let head = m.full_head(&mut g);
    let st = m.begin(&mut g, &src()).unwrap();
    let (a, pa) = m.step(&mut g, &st, 5, &head).unwrap();
    let (b, pb) = m.step(&mut g, &st, 5, &head).unwrap();
    assert_eq!(g.value(pa).data(), g.value(pb).data());
    assert_eq!(a.t, 1);
    assert_eq!(g.value(a.s.unwrap()).data(), g.value(b.s.unwrap()).data());
    assert!(m.step(&mut g, &st, 9, &head).is_err());

    let mut cfg = m.config;
    cfg.input_feed = false;
    let mut other = Generator::<f64>::new(cfg, 12).unwrap();
    // share every parameter the two layouts have in common
    for (id, name, t) in m.params.iter() {
        let _ = id;
        if let Some(o) = other.params.find(name) {
            if other.params.get(o).shape() == t.shape() {
                *other.params.get_mut(o) = t.clone();
            }
        }
    }
    let mut g2 = Graph::inference(&other.params);
    let h2 = other.full_head(&mut g2);
    let mut s1 = m.begin(&mut g, &src()).unwrap();
    let mut s2 = other.begin(&mut g2, &src()).unwrap();
    let mut differ = false;
    for y in [5, 6, 7] {
        let (n1, p1) = m.step(&mut g, &s1, y, &head).unwrap();
        let (n2, p2) = other.step(&mut g2, &s2, y, &h2).unwrap();
        differ |= g.value(p1).data() != g2.value(p2).data();
        s1 = n1;
        s2 = n2;
    }
    assert!(differ);
}

#[test]
fn four_steps_gradient_check() {
    for (cfg_seed, layers, dropout) in [(13, 1, 0.0), (14, 2, 0.2)] {
        let mut cfg = GeneratorConfig::translation(7, 9, 3);
        cfg.layers = layers;
        cfg.dropout = dropout;
        let mut m = Generator::<f64>::new(cfg, cfg_seed).unwrap();
        jitter(&mut m, cfg_seed, 0.4);
        let model = m.clone();
        let mask = VocabMask::new(vec![0, 1, 2, 3, 4, 5, 7], 9).unwrap();
        let report = gradient_check(&mut m.params, None, Some(cfg_seed), |g| {
            let head = model.reduced_head(g, &mask).unwrap();
            model.xent(g, &src(), &[4, 7, 5, EOS], &head).unwrap()
        })
        .unwrap();
        assert!(report.agrees(1e-5, 1e-9), "layers {layers}: {report:?}");
    }
}

#[test]
fn sampling() {
    let m = text_model(15);
    let mut g = Graph::inference(&m.params);
    let only_eos = VocabMask::new(vec![EOS], 9).unwrap();
    let head = m.reduced_head(&mut g, &only_eos).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = m.sample(&mut g, &src(), &head, 10, Some(&mut rng)).unwrap();
    assert_eq!(s.tokens, vec![EOS]);
    assert_eq!(g.scalar(s.logps[0]), 0.0);

    let mask = VocabMask::new(vec![0, 1, 2, 3, 5, 7], 9).unwrap();
    let head = m.reduced_head(&mut g, &mask).unwrap();
    for _ in 0..20 {
        let s = m.sample(&mut g, &src(), &head, 6, Some(&mut rng)).unwrap();
        assert!(s.tokens.len() <= 6 && !s.tokens.is_empty());
        assert!(s.tokens.iter().all(|t| mask.contains(*t)));
        assert_eq!(s.logps.len(), s.tokens.len());
        assert!(s.logps.iter().all(|l| g.scalar(*l) <= 0.0));
    }
    let a = m.sample::<ChaCha8Rng>(&mut g, &src(), &head, 6, None).unwrap();
    let b = m.sample::<ChaCha8Rng>(&mut g, &src(), &head, 6, None).unwrap();
    assert_eq!(a.tokens, b.tokens);
}

#[test]
fn xent_examples() {
    let m = text_model(16);
    let mut g = Graph::inference(&m.params);
    let only_eos = VocabMask::new(vec![EOS], 9).unwrap();
    let head = m.reduced_head(&mut g, &only_eos).unwrap();
    let l = m.xent(&mut g, &src(), &[EOS], &head).unwrap();
    assert_eq!(g.scalar(l), 0.0);
    assert!(m.xent(&mut g, &src(), &[5, EOS], &head).is_err());
    let full = m.full_head(&mut g);
    let all = m.reduced_head(&mut g, &VocabMask::full(9)).unwrap();
    let a = m.xent(&mut g, &src(), &[5, 6, EOS], &full).unwrap();
    let b = m.xent(&mut g, &src(), &[5, 6, EOS], &all).unwrap();
    assert!(g.scalar(a) > 0.0);
    assert!((g.scalar(a) - g.scalar(b)).abs() < 1e-6);
}

#[test]
fn tying_and_checkpoint() {
    let m = text_model(17);
    assert_eq!(m.layout.tgt_emb.table, m.layout.out_w);
    let back = Generator::<f64>::from_checkpoint(&m.to_checkpoint()).unwrap();
    assert_eq!(back.config, m.config);
    for (id, _, t) in m.params.iter() {
        let b = back.params.get(id);
        assert!(t.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert!(m.baseline_ids().iter().all(|b| !m.policy_ids().contains(b)));
    assert_eq!(m.baseline_ids().len() + m.policy_ids().len(), m.params.len());
    let mut bad = GeneratorConfig::captioning(3, 9, 4);
    bad.input_feed = true;
    assert!(Generator::<f64>::new(bad, 0).is_err());
    let _ = NUM_SPECIALS;
}

