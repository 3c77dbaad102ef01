use super::*;
use crate::tensor::{GradStore, ParamStore, Tensor};

fn one_param(values: Vec<f64>) -> (ParamStore<f64>, GradStore<f64>) {
    let mut store = ParamStore::new();
    let n = values.len();
    store.add("w", Tensor::vector(values));
    let grads = GradStore::zeros_like(&store);
    assert_eq!(grads.get(store.ids().next().unwrap()).len(), n);
    (store, grads)
}

#[test]
fn zero_gradient_leaves_parameters() {
    let (mut store, mut grads) = one_param(vec![0.5, -0.5]);
    let before = store.clone();
    let mut opt = Optimizer::all(Rule::sgd(1.0, 0.75), &store);
    opt.step(&mut store, &mut grads);
    assert_eq!(store.max_abs_diff(&before), 0.0);
}

#[test]
fn clipping_scales_to_unit_norm() {
    let (mut store, mut grads) = one_param(vec![0.0, 0.0]);
    let id = store.ids().next().unwrap();
    grads.get_mut(id).data_mut().copy_from_slice(&[6.0, 8.0]);
    let mut opt = Optimizer::all(Rule::sgd(1.0, 0.0), &store).with_clip(1.0);
    let norm = opt.step(&mut store, &mut grads);
    assert!((norm - 10.0).abs() < 1e-12);
    let w = store.get(id).data();
    assert!((w[0] + 0.6).abs() < 1e-12 && (w[1] + 0.8).abs() < 1e-12);
}

#[test]
fn momentum_accumulates() {
    let (mut store, mut grads) = one_param(vec![0.0]);
    let id = store.ids().next().unwrap();
    let mut opt = Optimizer::all(Rule::sgd(0.1, 0.5), &store);
    grads.get_mut(id).data_mut()[0] = 1.0;
    opt.step(&mut store, &mut grads);
    opt.step(&mut store, &mut grads);
    // v1 = -0.1, v2 = -0.05 - 0.1
    assert!((store.get(id).data()[0] + 0.25).abs() < 1e-12);
}

#[test]
fn adagrad_steps_shrink() {
    let (mut store, mut grads) = one_param(vec![0.0]);
    let id = store.ids().next().unwrap();
    let mut opt = Optimizer::all(Rule::adagrad(0.08), &store);
    grads.get_mut(id).data_mut()[0] = 0.3;
    let mut prev = 0.0;
    let mut last_step = f64::INFINITY;
    for _ in 0..10 {
        opt.step(&mut store, &mut grads);
        let w = store.get(id).data()[0];
        let s = (w - prev).abs();
        assert!(s < last_step);
        last_step = s;
        prev = w;
    }
}

#[test]
fn adam_first_step_is_lr_sized() {
    let (mut store, mut grads) = one_param(vec![1.0, 1.0]);
    let id = store.ids().next().unwrap();
    grads.get_mut(id).data_mut().copy_from_slice(&[0.01, -50.0]);
    let mut opt = Optimizer::all(Rule::adam(1e-3), &store);
    opt.step(&mut store, &mut grads);
    let w = store.get(id).data();
    assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-9);
    assert!((w[1] - (1.0 + 1e-3)).abs() < 1e-9);
}

#[test]
fn weight_decay_adds_l2_term() {
    let (mut store, mut grads) = one_param(vec![2.0]);
    let id = store.ids().next().unwrap();
    let mut opt = Optimizer::all(Rule::sgd(1.0, 0.0), &store).with_weight_decay(1e-6);
    opt.step(&mut store, &mut grads);
    assert!((store.get(id).data()[0] - (2.0 - 2e-6)).abs() < 1e-15);
}

#[test]
fn optimizer_touches_only_its_subset() {
    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", Tensor::vector(vec![1.0]));
    let b = store.add("b", Tensor::vector(vec![1.0]));
    let mut grads = GradStore::zeros_like(&store);
    grads.get_mut(a).data_mut()[0] = 1.0;
    grads.get_mut(b).data_mut()[0] = 1.0;
    let mut opt = Optimizer::new(Rule::sgd(0.5, 0.0), &store, vec![b]);
    opt.step(&mut store, &mut grads);
    assert_eq!(store.get(a).data()[0], 1.0);
    assert_eq!(store.get(b).data()[0], 0.5);
}

#[test]
fn schedule_rules() {
    let mut s = LrSchedule::new(1.0);
    assert_eq!(s.observe(1.0, 10.0), 1.0);
    assert_eq!(s.observe(3.0, 5.0), 1.0);
    assert_eq!(s.observe(7.0, 12.0), 1.0);
    assert_eq!(s.observe(8.0, 11.0), 0.5);
    assert_eq!(s.observe(8.5, 11.0), 0.25);
    assert_eq!(s.best(), Some(12.0));
}

#[test]
fn schedule_never_increases() {
    let mut s = LrSchedule::new(0.01);
    let mut prev = s.lr();
    for (i, score) in [1.0, 3.0, 2.0, 2.5, 4.0, 1.0, 0.5, 6.0, 6.0, 5.0, 7.0, 7.0].iter().enumerate() {
        let lr = s.observe(i as f64 * 0.5 + 5.0, *score);
        assert!(lr <= prev);
        prev = lr;
    }
}

mod losses {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::super::*;
    use crate::corpus::{Batch, Example, Source, EOS};
    use crate::generator::{Generator, GeneratorConfig};
    use crate::predictor::{MaskCache, VocabMask};
    use crate::tensor::{gradient_check, GradStore, Graph, ParamStore, Tensor};

    fn model(seed: u64) -> Generator<f64> {
        let mut m = Generator::new(GeneratorConfig::translation(7, 12, 4), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        for id in m.params.ids().collect::<Vec<_>>() {
            for v in m.params.get_mut(id).data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        m
    }

    fn examples(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|id| {
                let src: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(4..7)).collect();
                let mut tgt: Vec<usize> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(4..12)).collect();
                tgt.push(EOS);
                Example { id, source: Source::Tokens(src), target: tgt }
            })
            .collect()
    }

    fn constant_trace(g: &mut Graph<'_, f64>, logps: &[f64], rewards: &[f64]) -> RewardTrace {
        RewardTrace {
            tokens: vec![5; logps.len()],
            logps: logps.iter().map(|v| g.constant(Tensor::scalar(*v))).collect(),
            baselines: Vec::new(),
            gleu: 0.0,
            rewards: rewards.to_vec(),
        }
    }

    #[test]
    fn reinforce_examples() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let t = constant_trace(&mut g, &[-1.0, -2.0], &[0.4, 0.4]);
        let l = reinforce_loss(&mut g, &t).unwrap();
        assert!((g.scalar(l) - 1.2).abs() < 1e-12);
        let z = constant_trace(&mut g, &[-1.0, -2.0], &[0.0, 0.0]);
        let l = reinforce_loss(&mut g, &z).unwrap();
        assert_eq!(g.scalar(l), 0.0);
        let empty = constant_trace(&mut g, &[], &[]);
        assert!(reinforce_loss(&mut g, &empty).is_err());
    }

    #[test]
    fn baseline_examples() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let mut t = constant_trace(&mut g, &[-1.0; 3], &[0.5; 3]);
        t.gleu = 1.0;
        t.baselines = (0..3).map(|_| g.constant(Tensor::scalar(0.5))).collect();
        let l = baseline_loss(&mut g, &t);
        assert!((g.scalar(l) - 0.75).abs() < 1e-12);
        t.gleu = 0.5;
        let l = baseline_loss(&mut g, &t);
        assert_eq!(g.scalar(l), 0.0);
    }

    #[test]
    fn reinforce_gradient_on_logits() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("z", Tensor::vector(vec![0.3, -1.2, 0.8, 0.1]));
        let (y, r) = (2, 0.7);
        let mut grads = GradStore::zeros_like(&store);
        {
            let mut g = Graph::new(&store);
            let z = g.param(id);
            let lp = g.log_softmax(z);
            let pick = g.pick(lp, y);
            let t = RewardTrace { tokens: vec![y], logps: vec![pick], baselines: vec![], gleu: r, rewards: vec![r] };
            let l = reinforce_loss(&mut g, &t).unwrap();
            g.backward(l, &mut grads).unwrap();
        }
        let z = store.get(id).data().to_vec();
        let norm: f64 = z.iter().map(|v| v.exp()).sum();
        for (i, gv) in grads.get(id).data().iter().enumerate() {
            let p = z[i].exp() / norm;
            let expect = (p - if i == y { 1.0 } else { 0.0 }) * r;
            assert!((gv - expect).abs() < 1e-12);
        }
        let report = gradient_check(&mut store, None, None, |g| {
            let z = g.param(id);
            let lp = g.log_softmax(z);
            let pick = g.pick(lp, y);
            let t = RewardTrace { tokens: vec![y], logps: vec![pick], baselines: vec![], gleu: r, rewards: vec![r] };
            reinforce_loss(g, &t).unwrap()
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    /// Sampled trace with its rewards frozen at the values of the first
    /// evaluation, so finite differences see the same objective.
    fn frozen_trace(g: &mut Graph<'_, f64>, m: &Generator<f64>, ex: &Example, rewards: Option<&[f64]>) -> RewardTrace {
        let head = m.full_head(g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = m.sample(g, &ex.source, &head, 5, Some(&mut rng)).unwrap();
        let mut t = reward_trace(g, m, s, &ex.target).unwrap();
        if let Some(r) = rewards {
            t.rewards = r.to_vec();
        }
        t
    }

    #[test]
    fn reinforce_and_baseline_gradient_check() {
        // The baseline sees detached states, so its loss is checked on the
        // regressor only and the policy loss on everything.
        let mut m = model(4);
        let ex = examples(1, 9).pop().unwrap();
        let frozen = m.clone();
        let rewards = {
            let mut g = Graph::inference(&frozen.params);
            frozen_trace(&mut g, &frozen, &ex, None).rewards
        };
        let report = gradient_check(&mut m.params, None, None, |g| {
            let t = frozen_trace(g, &frozen, &ex, Some(&rewards));
            reinforce_loss(g, &t).unwrap()
        })
        .unwrap();
        assert!(report.agrees(1e-5, 1e-9), "{report:?}");
        let ids = frozen.baseline_ids();
        let report = gradient_check(&mut m.params, Some(&ids), None, |g| {
            let t = frozen_trace(g, &frozen, &ex, None);
            baseline_loss(g, &t)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn baseline_gradient_stays_in_the_regressor() {
        let m = model(5);
        let ex = examples(1, 2).pop().unwrap();
        let mut grads = GradStore::zeros_like(&m.params);
        let mut g = Graph::new(&m.params);
        let head = m.full_head(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = m.sample(&mut g, &ex.source, &head, 6, Some(&mut rng)).unwrap();
        let t = reward_trace(&mut g, &m, s, &ex.target).unwrap();
        assert_eq!(t.rewards.len(), t.tokens.len());
        for (b, r) in t.baselines.iter().zip(&t.rewards) {
            let bv = g.scalar(*b);
            assert!(bv > 0.0 && bv < 1.0);
            assert!((r - (t.gleu - bv)).abs() < 1e-15);
        }
        let l = baseline_loss(&mut g, &t);
        g.backward(l, &mut grads).unwrap();
        assert!(m.policy_ids().iter().all(|id| grads.is_zero(*id)));
        assert!(m.baseline_ids().iter().any(|id| !grads.is_zero(*id)));
    }

    #[test]
    fn xent_examples() {
        let m = model(6);
        let mut g = Graph::inference(&m.params);
        let ex = Example { id: 0, source: Source::Tokens(vec![4, 5]), target: vec![EOS] };
        let only_eos = VocabMask::new(vec![EOS], 12).unwrap();
        let l = xent_loss(&mut g, &m, &ex, Some(&only_eos)).unwrap();
        assert_eq!(g.scalar(l), 0.0);
        for ex in examples(10, 3) {
            let full = xent_loss(&mut g, &m, &ex, None).unwrap();
            let all = xent_loss(&mut g, &m, &ex, Some(&VocabMask::full(12))).unwrap();
            assert!(g.scalar(full) >= 0.0);
            assert!((g.scalar(full) - g.scalar(all)).abs() < 1e-6);
        }
        let bad = Example { id: 0, source: Source::Tokens(vec![4]), target: vec![7, EOS] };
        assert!(xent_loss(&mut g, &m, &bad, Some(&only_eos)).is_err());
    }

    fn masks_for(exs: &[Example]) -> Masks {
        let mut train = MaskCache::default();
        let mut eval = MaskCache::default();
        for ex in exs {
            let mut ids: Vec<usize> = vec![0, 1, 2, 3, 9];
            ids.extend(ex.target.iter().copied());
            ids.sort_unstable();
            ids.dedup();
            train.insert(ex.id, VocabMask::new(ids, 12).unwrap());
            eval.insert(ex.id, VocabMask::new(vec![0, 1, 2, 3, 5, 6, 9], 12).unwrap());
        }
        Masks { train, eval }
    }

    #[test]
    fn lambda_extremes() {
        let m = model(7);
        let exs = examples(4, 4);
        let cfg = TrainConfig { max_len: 6, ..TrainConfig::default() };
        for masks in [None, Some(masks_for(&exs))] {
            for ex in &exs {
                let mut g = Graph::training(&m.params, 1);
                let mut st = StepStats::default();
                let l1 = joint_loss(&mut g, &m, ex, masks.as_ref(), &cfg, 1.0, 5, &mut st).unwrap();
                let mask = masks.as_ref().map(|mk| mk.train_mask(ex).unwrap());
                let mut g2 = Graph::training(&m.params, 1);
                let x = xent_loss(&mut g2, &m, ex, mask).unwrap();
                assert!((g.scalar(l1) - g2.scalar(x)).abs() < 1e-12);
                assert_eq!(st.reinforce, 0.0);

                let mut st = StepStats::default();
                let l0 = joint_loss(&mut g, &m, ex, masks.as_ref(), &cfg, 0.0, 5, &mut st).unwrap();
                assert_eq!(st.xent, 0.0);
                assert!((g.scalar(l0) - (st.reinforce + st.baseline)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_uses_the_evaluation_mask() {
        let m = model(8);
        let exs = examples(6, 5);
        let masks = masks_for(&exs);
        let cfg = TrainConfig { max_len: 6, ..TrainConfig::default() };
        for ex in &exs {
            let mut g = Graph::training(&m.params, 2);
            let head = m.head(&mut g, Some(masks.eval_mask(ex).unwrap())).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let s = m.sample(&mut g, &ex.source, &head, 6, Some(&mut rng)).unwrap();
            assert!(s.tokens.iter().all(|t| masks.eval_mask(ex).unwrap().contains(*t)));
            let mut st = StepStats::default();
            joint_loss(&mut g, &m, ex, Some(&masks), &cfg, 0.5, 1, &mut st).unwrap();
            assert!(st.gleu >= 0.0 && st.gleu <= 1.0);
        }
        let missing = Masks::default();
        let mut g = Graph::training(&m.params, 2);
        let mut st = StepStats::default();
        assert!(joint_loss(&mut g, &m, &exs[0], Some(&missing), &cfg, 0.5, 1, &mut st).is_err());
    }

    fn one_step(m: &Generator<f64>, exs: &[Example], s: usize, lambda: f64, masks: Option<&Masks>) -> (Generator<f64>, StepStats) {
        let mut m = m.clone();
        let cfg = TrainConfig { split: s, max_len: 6, rl_lr: 0.05, ..TrainConfig::default() };
        let mut trainer = Trainer::new(&m, &cfg, cfg.rl_lr);
        let batch = Batch { examples: exs.iter().collect() };
        let st = joint_step(&mut m, &mut trainer, &batch, masks, &cfg, lambda, 77).unwrap();
        (m, st)
    }

    #[test]
    fn split_updates_match() {
        let m = model(9);
        let exs = examples(16, 6);
        let masks = masks_for(&exs);
        for (lambda, mk) in [(1.0, None), (0.3, None), (0.3, Some(&masks))] {
            let (a, sa) = one_step(&m, &exs, 1, lambda, mk);
            let (b, _) = one_step(&m, &exs, 1, lambda, mk);
            assert_eq!(a.params.max_abs_diff(&b.params), 0.0);
            for s in [2, 4, 8] {
                let (c, sc) = one_step(&m, &exs, s, lambda, mk);
                for (id, _, t) in a.params.iter() {
                    let moved_a = t.data().iter().zip(m.params.get(id).data());
                    for ((x, y), x0) in moved_a.zip(c.params.get(id).data()).map(|((x, o), y)| ((x, y), o)) {
                        let scale = (x - x0).abs().max((y - x0).abs()).max(1e-12);
                        assert!((x - y).abs() / scale < 1e-5 || (x - y).abs() < 1e-14, "S={s}");
                    }
                }
                assert!((sa.loss - sc.loss).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn update_descends_the_objective() {
        // Fixed dropout and sampling seeds make each objective a
        // deterministic function of the parameters.
        let m = model(10);
        let exs = examples(8, 7);
        let batch = Batch { examples: exs.iter().collect() };
        let cfg = TrainConfig { max_len: 6, momentum: 0.0, clip: 1e9, weight_decay: 0.0, ..TrainConfig::default() };
        let gradient = |m: &Generator<f64>, lambda: f64| {
            let mut grads = GradStore::zeros_like(&m.params);
            let st = accumulate_split(&m.params, &mut grads, &batch, 1, 11, |g, ex, seed, st| {
                joint_loss(g, m, ex, None, &cfg, lambda, seed, st)
            })
            .unwrap();
            (st.loss, grads)
        };
        // Joint objective: the update direction has a nonpositive
        // directional derivative.
        let (_, grads) = gradient(&m, 0.2);
        let mut moved = m.clone();
        let mut trainer = Trainer::new(&moved, &cfg, 1e-3);
        joint_step(&mut moved, &mut trainer, &batch, None, &cfg, 0.2, 11).unwrap();
        let mut dot = 0.0;
        for (id, _, t) in moved.params.iter() {
            let before = m.params.get(id).data();
            for ((a, b), gv) in t.data().iter().zip(before).zip(grads.get(id).data()) {
                dot += (a - b) * gv;
            }
        }
        assert!(dot < 0.0, "directional derivative {dot}");
        // Pure cross entropy is a true loss: a small step lowers it.
        let mut moved = m.clone();
        let mut trainer = Trainer::new(&moved, &cfg, 1e-3);
        joint_step(&mut moved, &mut trainer, &batch, None, &cfg, 1.0, 11).unwrap();
        assert!(gradient(&moved, 1.0).0 < gradient(&m, 1.0).0);
    }

    #[test]
    fn splitting_bounds_activation_memory() {
        let m = model(11);
        let exs = examples(32, 8);
        let (_, s1) = one_step(&m, &exs, 1, 0.5, None);
        let (_, s4) = one_step(&m, &exs, 4, 0.5, None);
        assert!((s4.peak_bytes as f64) < 0.4 * s1.peak_bytes as f64, "{} vs {}", s4.peak_bytes, s1.peak_bytes);
    }

    #[test]
    fn phase_run_and_checkpoint() {
        let train = examples(40, 12);
        let dev = examples(8, 13);
        let cfg = TrainConfig { batch_size: 8, max_len: 6, ce_epochs: 2, rl_epochs: 1, ..TrainConfig::default() };
        let data = TrainData { train: &train, dev: &dev, masks: None, dev_masks: None };
        let run = |cfg: &TrainConfig| {
            let mut m = model(12);
            let mut seen = Vec::new();
            let recs = pretrain_then_rl(&mut m, &data, cfg, &mut |r, _, t| {
                seen.push((r.phase, t.policy.lr()));
                Ok(())
            })
            .unwrap();
            assert_eq!(seen.len(), recs.len());
            (m, recs)
        };
        let (m1, r1) = run(&cfg);
        let (m2, r2) = run(&cfg);
        assert_eq!(m1.params.max_abs_diff(&m2.params), 0.0);
        let strip = |r: &[EpochRecord]| r.iter().map(|x| (x.loss, x.dev_bleu, x.lr)).collect::<Vec<_>>();
        assert_eq!(strip(&r1), strip(&r2));
        assert_eq!(r1.len(), 6);
        assert_eq!(r1.iter().filter(|r| r.phase == Phase::Rl).count(), 2);
        assert!(r1.iter().all(|r| r.peak_bytes > 0 && r.seconds >= 0.0));
        let csv = curves_csv(&r1);
        assert!(csv.starts_with("epoch,phase,loss,dev_gleu,dev_bleu,lr,seconds,peak_bytes\n"));
        assert_eq!(csv.lines().count(), 7);

        let trainer = Trainer::new(&m1, &cfg, 0.25);
        let mut t2 = trainer.clone();
        t2.policy.set_lr(9.0);
        let ck = training_checkpoint(&m1, &trainer);
        let ck = crate::checkpoint::Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        load_optimizer(&ck, "opt.policy", &mut t2.policy).unwrap();
        load_optimizer(&ck, "opt.baseline", &mut t2.baseline).unwrap();
        assert_eq!(t2.policy.lr(), 0.25);
        let back = Generator::<f64>::from_checkpoint(&ck).unwrap();
        assert_eq!(back.params.max_abs_diff(&m1.params), 0.0);
        assert!(load_optimizer(&ck, "opt.baseline", &mut t2.policy).is_err());
    }

    #[test]
    fn sweep_has_one_curve_per_setting() {
        let train = examples(16, 14);
        let dev = examples(4, 15);
        let cfg = TrainConfig { batch_size: 8, max_len: 5, rl_epochs: 1, evals_per_epoch: 1, lambda: 0.0, ..TrainConfig::default() };
        let data = TrainData { train: &train, dev: &dev, masks: None, dev_masks: None };
        let curves = pretrain_sweep(&|| Ok(model(16)), &data, &cfg, &[0, 1, 2]).unwrap();
        assert_eq!(curves.len(), 3);
        for (n, recs) in &curves {
            assert_eq!(recs.iter().filter(|r| r.phase == Phase::Xent).count(), *n);
            assert_eq!(recs.iter().filter(|r| r.phase == Phase::Rl).count(), 1);
        }
        let csv = sweep_csv(&curves);
        assert_eq!(csv.lines().count(), 1 + 1 + 2 + 3);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lambda: 1.5, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { split: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { rl_lr: -1.0, ..TrainConfig::default() }.validate().is_err());
    }
}
