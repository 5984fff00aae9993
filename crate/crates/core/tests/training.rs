use mipcnet::data::{generate_synthetic, preprocess, Dataset, SyntheticSpec};
use mipcnet::loss::{one_hot, soft_dice_loss};
use mipcnet::network::Model64;
use mipcnet::nn::{BuildState, ParamStore};
use mipcnet::training::{evaluate, sgd_step, train, SgdHyper, SgdState, StepOutcome, TrainConfig, TrainLog};
use mipcnet::{Error, ModelConfig, Tensor, Var};

fn scalar_store(v: f64) -> (ParamStore<f64>, mipcnet::nn::ParamId) {
    let mut st = BuildState::new(0);
    let id = st.root().tensor("theta", Tensor::new(vec![1], vec![v]).unwrap());
    (st.finish(), id)
}

#[test]
fn sgd_momentum_hand_arithmetic() {
    let (mut p, id) = scalar_store(1.0);
    let mut state = SgdState::new();
    let hyper = SgdHyper { lr: 0.01, momentum: 0.9, weight_decay: 0.0 };
    let g = vec![(id, Tensor::new(vec![1], vec![1.0]).unwrap())];
    assert_eq!(sgd_step(&mut p, &g, &mut state, hyper), StepOutcome::Applied);
    assert_eq!(state.velocity(id).unwrap().data()[0], 1.0);
    assert!((p.get(id).data()[0] - 0.99).abs() < 1e-15);
    sgd_step(&mut p, &g, &mut state, hyper);
    assert!((state.velocity(id).unwrap().data()[0] - 1.9).abs() < 1e-15);
    assert!((p.get(id).data()[0] - 0.971).abs() < 1e-15);
}

#[test]
fn zero_lr_accumulates_velocity_only() {
    let (mut p, id) = scalar_store(2.0);
    let mut state = SgdState::new();
    let hyper = SgdHyper { lr: 0.0, momentum: 0.9, weight_decay: 1e-4 };
    let g = vec![(id, Tensor::new(vec![1], vec![0.5]).unwrap())];
    sgd_step(&mut p, &g, &mut state, hyper);
    sgd_step(&mut p, &g, &mut state, hyper);
    assert_eq!(p.get(id).data()[0], 2.0);
    assert!(state.velocity(id).unwrap().data()[0] > 0.9);
}

#[test]
fn plain_sgd_without_momentum_or_decay() {
    let (mut p, id) = scalar_store(0.3);
    let mut state = SgdState::new();
    let g = vec![(id, Tensor::new(vec![1], vec![0.7]).unwrap())];
    sgd_step(&mut p, &g, &mut state, SgdHyper { lr: 0.1, momentum: 0.0, weight_decay: 0.0 });
    assert_eq!(p.get(id).data()[0], 0.3 - 0.1 * 0.7);
}

#[test]
fn non_finite_gradient_skips_the_step() {
    let (mut p, id) = scalar_store(1.0);
    let mut state = SgdState::new();
    let g = vec![(id, Tensor::new(vec![1], vec![f64::NAN]).unwrap())];
    let out = sgd_step(&mut p, &g, &mut state, SgdHyper { lr: 0.1, momentum: 0.9, weight_decay: 0.0 });
    assert_eq!(out, StepOutcome::Skipped { param: "theta".into() });
    assert_eq!(p.get(id).data()[0], 1.0);
    assert!(state.velocity(id).is_none());
}

fn micro_set(n: usize) -> Dataset {
    let raw = generate_synthetic(&SyntheticSpec { num_samples: n, num_classes: 3, image_size: 32, ..SyntheticSpec::smoke() })
        .unwrap();
    let samples = raw.samples.iter().map(|s| preprocess(s, 32).unwrap().sample).collect();
    Dataset::new(3, raw.class_names.clone(), samples).unwrap()
}

#[test]
fn uniform_logits_give_closed_form_initial_loss() {
    let cfg = ModelConfig { num_classes: 4, ..ModelConfig::micro() };
    let raw = generate_synthetic(&SyntheticSpec { num_samples: 2, image_size: 32, ..SyntheticSpec::smoke() }).unwrap();
    let samples: Vec<_> = raw.samples.iter().map(|s| preprocess(s, 32).unwrap().sample).collect();
    let ds = Dataset::new(4, raw.class_names.clone(), samples).unwrap();
    let mut model = Model64::new(&cfg, 0).unwrap();
    // a zero head makes every logit zero
    for name in ["decoder.head.weight", "decoder.head.bias"] {
        let id = model.params.find(name).unwrap_or_else(|| panic!("{name}"));
        let shape = model.params.get(id).shape().to_vec();
        model.params.set(id, Tensor::zeros(shape));
    }
    let tc = TrainConfig { batch_size: 2, max_iterations: 1, ..TrainConfig::default() };
    let out = mipcnet::training::train_model(model, &tc, &ds, None).unwrap();
    let first = &out.log.iterations[0];

    let refs: Vec<_> = ds.samples.iter().collect();
    let (_, labels) = Dataset::batch::<f64>(&refs).unwrap();
    let g = one_hot::<f64>(&labels, 2, 4, 32, 32).unwrap();
    let dice0 = soft_dice_loss(&Var::constant(Tensor::full(vec![2, 4, 32, 32], 0.25)), &g).unwrap().value().data()[0];
    assert!((first.ce - 4f64.ln()).abs() < 1e-12);
    assert!((first.loss - (0.5 * 4f64.ln() + 0.5 * dice0)).abs() < 1e-12);
}

#[test]
fn training_is_reproducible_and_logs_round_trip() {
    let ds = micro_set(4);
    let tc = TrainConfig { batch_size: 2, max_iterations: 6, eval_every: 3, augment: true, ..TrainConfig::default() };
    let a = train::<f64>(&ModelConfig::micro(), &tc, &ds, Some(&ds)).unwrap();
    let b = train::<f64>(&ModelConfig::micro(), &tc, &ds, Some(&ds)).unwrap();
    assert_eq!(a.log.losses(), b.log.losses());
    for (x, y) in a.model.params.entries().iter().zip(b.model.params.entries()) {
        assert_eq!(x.value, y.value, "{}", x.name);
    }
    assert_eq!(a.log.iterations.len(), 6);
    assert_eq!(a.log.evals.iter().map(|e| e.iteration).collect::<Vec<_>>(), vec![3, 6]);
    assert!(a.log.losses().iter().all(|l| l.is_finite()));
    assert!(a.log.iterations.windows(2).all(|w| w[0].iteration < w[1].iteration));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    a.log.write_jsonl(&path).unwrap();
    assert_eq!(TrainLog::read_jsonl(&path).unwrap(), a.log);
}

#[test]
fn diverging_run_aborts_after_ten_nan_losses() {
    let ds = micro_set(2);
    let tc = TrainConfig { batch_size: 2, max_iterations: 40, lr: 1e30, momentum: 0.0, ..TrainConfig::default() };
    match train::<f32>(&ModelConfig::micro(), &tc, &ds, None) {
        Err(Error::Training(msg)) => assert!(msg.contains("10 consecutive"), "{msg}"),
        Err(e) => panic!("unexpected error {e}"),
        Ok(out) => panic!("training survived: {:?}", out.log.losses()),
    }
}

#[test]
fn checkpoint_round_trip_gives_identical_report() {
    let ds = micro_set(3);
    let tc = TrainConfig { batch_size: 2, max_iterations: 2, ..TrainConfig::default() };
    let out = train::<f32>(&ModelConfig::micro(), &tc, &ds, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    out.model.save(&path).unwrap();
    let back = mipcnet::Model32::load(&path).unwrap();
    let (r1, r2) = (evaluate(&out.model, &ds).unwrap(), evaluate(&back, &ds).unwrap());
    assert_eq!(r1, r2);
    assert_eq!(r1, evaluate(&out.model, &ds).unwrap());
}

#[test]
fn evaluate_rejects_empty_and_mismatched_sets() {
    let model = Model64::new(&ModelConfig::micro(), 0).unwrap();
    let empty = Dataset::new(3, micro_set(1).class_names, vec![]).unwrap();
    assert!(evaluate(&model, &empty).unwrap_err().to_string().contains("empty"));
    let raw = generate_synthetic(&SyntheticSpec { num_samples: 1, num_classes: 4, image_size: 32, ..SyntheticSpec::smoke() })
        .unwrap();
    assert!(evaluate(&model, &raw).unwrap_err().to_string().contains("classes"));
}

#[test]
fn config_validation_names_the_key() {
    let ds = micro_set(2);
    let bad = TrainConfig { batch_size: 3, ..TrainConfig::default() };
    let err = train::<f32>(&ModelConfig::micro(), &bad, &ds, None).unwrap_err().to_string();
    assert!(err.contains("batch_size"), "{err}");
    let bad = TrainConfig { momentum: 1.5, ..TrainConfig::default() };
    assert!(bad.validate().unwrap_err().to_string().contains("momentum"));
    let text = r#"{"lr": 0.02, "batch_sise": 4}"#;
    let err = serde_json::from_str::<TrainConfig>(text).unwrap_err().to_string();
    assert!(err.contains("batch_sise"), "{err}");
}
