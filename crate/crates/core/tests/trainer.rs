use svkit::modelmath::{MarginCurve, MarginSchedule};
use svkit::seed;
use svkit::trainer::synthetic::{stage2_mapping, Split, SyntheticConfig, SyntheticSpeakerSet};
use svkit::trainer::*;
use svkit::Error;

fn easy_data() -> SyntheticConfig {
    SyntheticConfig {
        n_source: 6,
        n_target: 2,
        dim: 8,
        frames: 40,
        train_utts: 4,
        val_utts: 1,
        target_val_utts: 2,
        eval_utts: 2,
        center_std: 3.0,
        variant_std: 1.5,
        utt_std: 0.1,
        frame_std: 0.3,
        ..SyntheticConfig::default()
    }
}

fn model(data: &SyntheticConfig, reserved: usize, s: u64) -> EncoderParams {
    let mut rng = seed::substream(s, "model");
    let head = build_head(3 * data.n_source, reserved, 1, 32, &mut rng).unwrap();
    let shape = EncoderShape { input_dim: data.dim, hidden: 32, channels: 16 };
    EncoderParams::random(shape, PoolingKind::Gsp, head, &mut rng).unwrap()
}

fn quick(mut c: TrainConfig, epochs: usize) -> TrainConfig {
    c.epochs = epochs;
    c.chunk_len = 30;
    c.batch = 8;
    c
}

#[test]
fn stage1_separates_clusters() {
    let data = easy_data();
    let set = SyntheticSpeakerSet::new(data.clone(), 1).unwrap();
    let train = set.stage1_data(Split::Train, true);
    let init = model(&data, 6, 1);
    let cfg = quick(TrainConfig::stage1(5.0), 15);
    let (p, report) = pretrain_stage1(init.clone(), &train, &set.stage1_data(Split::Val, true), &cfg, &mut seed::substream(1, "t")).unwrap();
    let acc = validate(&p, &train, cfg.loss, cfg.chunk_len).unwrap().accuracy;
    assert!(acc >= 0.99, "training accuracy {acc}");
    assert_eq!(report.first_margin, Some(0.0));
    assert_eq!(report.last_margin, Some(0.2));
    // reserved rows only ever saw negatives, yet they moved
    for j in 18..24 {
        assert_ne!(p.head.center(j, 0), init.head.center(j, 0));
    }
}

#[test]
fn reserved_label_is_a_leak() {
    let data = easy_data();
    let set = SyntheticSpeakerSet::new(data.clone(), 2).unwrap();
    let mut train = set.stage1_data(Split::Train, true);
    train.samples[3].label = 19;
    let err = pretrain_stage1(model(&data, 6, 2), &train, &train, &quick(TrainConfig::stage1(1.0), 1), &mut seed::substream(2, "t"))
        .unwrap_err();
    assert!(matches!(err, Error::LabelLeak(19)), "{err}");
}

#[test]
fn fixed_seed_gives_identical_runs() {
    let data = easy_data();
    let set = SyntheticSpeakerSet::new(data.clone(), 3).unwrap();
    let train = set.stage1_data(Split::Train, true);
    let val = set.stage1_data(Split::Val, true);
    let cfg = quick(TrainConfig::stage1(1.0), 2);
    let run = || pretrain_stage1(model(&data, 6, 3), &train, &val, &cfg, &mut seed::substream(3, "t")).unwrap();
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra.final_loss.to_bits(), rb.final_loss.to_bits());
    assert_eq!(a.flat(), b.flat());
}

#[test]
fn zero_steps_leave_parameters_alone() {
    let data = easy_data();
    let set = SyntheticSpeakerSet::new(data.clone(), 4).unwrap();
    let p1 = model(&data, 6, 4);
    let p2 = transfer_to_stage2(&p1, &stage2_mapping(6, 2, true), &mut seed::substream(4, "f")).unwrap();
    let cfg = quick(TrainConfig::stage2(1.0), 0);
    let (after, report) =
        finetune_stage2(p2.clone(), &set.stage2_data(Split::Train), &set.target_data(Split::Val), &cfg, &mut seed::substream(4, "t")).unwrap();
    assert_eq!(after, p2);
    assert_eq!(report.steps, 0);
}

#[test]
fn transfer_mappings() {
    let data = easy_data();
    let p1 = model(&data, 6, 5);
    let mut rng = seed::substream(5, "f");
    let identity: Vec<Option<usize>> = (0..24).map(Some).collect();
    let same = transfer_to_stage2(&p1, &identity, &mut rng).unwrap();
    assert_eq!(same.head.weights(), p1.head.weights());
    assert_eq!((same.w1.clone(), same.w2.clone()), (p1.w1.clone(), p1.w2.clone()));

    let m = stage2_mapping(6, 2, true);
    let p2 = transfer_to_stage2(&p1, &m, &mut rng).unwrap();
    assert_eq!(p2.head.num_classes(), 6 + 6);
    assert_eq!(p2.head.num_reserved(), 0);
    assert_eq!(p2.head.center(7, 0), p1.head.center(19, 0));

    let fresh = transfer_to_stage2(&p1, &[None; 12], &mut rng).unwrap();
    for j in 0..12 {
        let n: f64 = fresh.head.center(j, 0).iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
    assert!(matches!(transfer_to_stage2(&p1, &[Some(24)], &mut rng), Err(Error::BadMapping(24))));
}

#[test]
fn full_scale_class_accounting() {
    let mut rng = seed::substream(0, "h");
    assert_eq!(build_head(17982, 465, 1, 2, &mut rng).unwrap().num_classes(), 18447);
    assert_eq!(stage2_mapping(5994, 155, true).len(), 6459);
}

#[test]
fn stage3_runs_one_large_margin_epoch() {
    let data = SyntheticConfig { frames: 120, ..easy_data() };
    let set = SyntheticSpeakerSet::new(data.clone(), 6).unwrap();
    let p1 = model(&data, 6, 6);
    let p2 = transfer_to_stage2(&p1, &stage2_mapping(6, 2, true), &mut seed::substream(6, "f")).unwrap();
    let cfg = TrainConfig { batch: 2, ..TrainConfig::stage3(1.0) };
    assert_eq!(cfg.chunk_len, 400);
    let (_, r) = lmft_stage3(p2, &set.stage3_data(Split::Train), &set.target_data(Split::Val), &cfg, &mut seed::substream(6, "t")).unwrap();
    assert_eq!(r.steps, set.stage3_data(Split::Train).len().div_ceil(2));
    assert_eq!(r.chunk_frames, Some(400));
    assert_eq!(r.first_margin, Some(0.2));
    assert_eq!(r.last_margin, Some(0.5));
    assert!(r.before.accuracy.is_finite() && r.after.accuracy.is_finite());
}

#[test]
fn weight_decay_is_geometric() {
    let data = easy_data();
    let mut p = model(&data, 0, 7);
    let zero = Gradients::zeros_like(&p);
    let (lr, wd) = (0.08, 1e-3);
    let mut opt = Sgd::new(0.0, wd);
    let norm = |p: &EncoderParams| p.flat().iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut prev = norm(&p);
    for _ in 0..50 {
        opt.step(&mut p, &zero, lr);
        let n = norm(&p);
        assert!((n / prev - (1.0 - lr * wd)).abs() < 1e-12);
        prev = n;
    }
}

#[test]
fn plateau_scheduler_rules() {
    let cfg = PlateauConfig { factor: 0.1, patience: 2, min_lr: 1e-6, threshold: 1e-4 };
    let mut s = PlateauScheduler::new(0.08, cfg);
    // steadily improving: no change
    for i in 0..20 {
        assert_eq!(s.step(10.0 - i as f64), 0.08);
    }
    let mut s = PlateauScheduler::new(0.08, cfg);
    let mut lr = s.step(1.0);
    let mut history = vec![lr];
    for _ in 0..40 {
        let next = s.step(1.0);
        if next != lr {
            assert!(next == lr * 0.1 || next == 1e-6, "{lr} -> {next}");
        }
        assert!(next >= 1e-6);
        lr = next;
        history.push(lr);
    }
    // patience 2: the third bad validation triggers the first reduction
    assert_eq!(history[..4], [0.08, 0.08, 0.08, 0.08 * 0.1]);
    assert_eq!(*history.last().unwrap(), 1e-6);
}

#[test]
fn config_rules() {
    let mut c = TrainConfig::stage1(1.0);
    assert_eq!(c.margin.curve, MarginCurve::Linear);
    assert!((TrainConfig::stage2(3.0).lr / TrainConfig::stage1(3.0).lr - 2.5e-4).abs() < 1e-15);
    c.plateau.factor = 1.0;
    assert!(c.validate().is_err());
    c = TrainConfig::stage1(1.0);
    c.lr = 0.0;
    assert!(c.validate().is_err());
    c = TrainConfig::stage1(1.0);
    c.margin = MarginSchedule { start_m: 0.0, end_m: 0.5, curve: MarginCurve::Exponential, total_steps: 5 };
    assert!(matches!(c.validate(), Err(Error::InvalidExponentialSchedule)));
}

#[test]
fn params_file_round_trip() {
    let data = easy_data();
    let p = model(&data, 6, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.bin");
    write_params(std::fs::File::create(&path).unwrap(), &p).unwrap();
    let back = read_params(&path).unwrap();
    assert_eq!(back.head.num_classes(), 24);
    assert_eq!(back.head.num_reserved(), 6);
    let ids = svkit::backend::read_embeddings(&path).unwrap();
    assert!(ids.get("class:23:0").is_some());
}
