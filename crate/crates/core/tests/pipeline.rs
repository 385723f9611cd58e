use std::collections::BTreeSet;

use diana_core::composer::{
    compose_train, epsilon_schedule, IdentityPolicy, PromptSlot, PromptStore, Route, RouteCoins,
    ScheduleParams, SegmentMask,
};
use diana_core::keyspace::{MetaKeyPool, TaskKey};
use diana_core::learner::{
    argmax, train_stream, BatchItem, NoObserver, OptimizerKind, Phase, RouteEvent, TrainConfig,
    TrainObserver, Trainer, Variant,
};
use diana_core::streams::{generate_stream, Stream, StreamConfig};
use diana_core::vectorspace::SampleRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_stream(seed: u64) -> Stream {
    generate_stream(&StreamConfig {
        seen_tasks: 3,
        unseen_tasks: 1,
        formats: 2,
        train_per_task: 150,
        test_per_task: 60,
        seed,
        ..StreamConfig::default()
    })
    .unwrap()
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 32,
        memory_per_task: 20,
        seed,
        ..TrainConfig::default()
    }
}

#[derive(Default)]
struct Routes(Vec<RouteEvent>);

impl TrainObserver for Routes {
    fn wants_train_routes(&self) -> bool {
        true
    }
    fn on_route(&mut self, event: &RouteEvent) {
        self.0.push(event.clone());
    }
}

fn snapshot(store: &PromptStore) -> Vec<(PromptSlot, Vec<u64>)> {
    store
        .slots()
        .into_iter()
        .map(|s| (s, store.slot(s).unwrap().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn untouched_prompt_slots_stay_bit_identical() {
    let adamw = OptimizerKind::AdamW {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.01,
    };
    for (seed, optimizer) in [(1, OptimizerKind::Sgd), (2, adamw), (3, OptimizerKind::Sgd)] {
        let stream = small_stream(seed);
        let config = TrainConfig {
            optimizer,
            ..small_config(seed)
        };
        let mut trainer = Trainer::new(&stream, &config, Variant::full()).unwrap();
        let mut checked = 0;
        for task in 0..stream.seen.len() {
            trainer.begin_task(task).unwrap();
            for batch in trainer.epoch_batches().unwrap() {
                let before = snapshot(&trainer.state().store);
                let mut routes = Routes::default();
                trainer.train_batch(&batch, 0, &mut routes).unwrap();
                assert_eq!(routes.0.len(), batch.len());

                let mut touched = BTreeSet::from([PromptSlot::General]);
                for (item, event) in batch.iter().zip(&routes.0) {
                    assert_eq!(event.phase, Phase::Train);
                    let format = match *item {
                        BatchItem::Current(i) => stream.seen[task].train[i].format_id,
                        BatchItem::Memory(i) => trainer.state().memory.entries()[i].sample.format_id,
                    };
                    touched.insert(PromptSlot::Format(format));
                    touched.insert(event.routing.task_slot);
                    touched.extend(event.routing.meta.iter().map(|&m| PromptSlot::Meta(m)));
                }
                for ((slot, old), (_, new)) in before.iter().zip(snapshot(&trainer.state().store)) {
                    if !touched.contains(slot) {
                        assert_eq!(old, &new, "{slot:?} changed without being routed");
                        checked += 1;
                    }
                }
            }
            trainer.end_task().unwrap();
        }
        assert!(checked > 0);
    }
}

#[test]
fn identical_runs_are_identical() {
    let stream = small_stream(7);
    let config = small_config(7);
    for variant in [Variant::full(), Variant::replay_only()] {
        let a = train_stream(&stream, &config, variant, &mut NoObserver).unwrap();
        let b = train_stream(&stream, &config, variant, &mut NoObserver).unwrap();
        assert_eq!(format!("{:?}", a.matrix), format!("{:?}", b.matrix));
        assert_eq!(format!("{:?}", a.detection), format!("{:?}", b.detection));
        assert_eq!(format!("{:?}", a.diagnostics), format!("{:?}", b.diagnostics));
        assert_eq!(a.state, b.state);
    }
}

#[test]
fn different_seeds_differ() {
    let stream = small_stream(7);
    let a = train_stream(&stream, &small_config(1), Variant::full(), &mut NoObserver).unwrap();
    let b = train_stream(&stream, &small_config(2), Variant::full(), &mut NoObserver).unwrap();
    assert_ne!(a.state.pool, b.state.pool);
}

#[test]
fn sequential_training_forgets_earlier_tasks() {
    let mut drops = 0;
    for seed in 0..5 {
        let stream = small_stream(seed);
        let out = train_stream(
            &stream,
            &small_config(seed),
            Variant::sequential_finetune(),
            &mut NoObserver,
        )
        .unwrap();
        let first = out.matrix.row(0).unwrap()[0];
        let last = out.matrix.row(stream.seen.len() - 1).unwrap()[0];
        drops += usize::from(last < first);
    }
    assert!(drops >= 4, "task 0 accuracy dropped in only {drops}/5 runs");
}

/// Plain multinomial logistic regression with the same batches and rate.
fn logistic_regression(stream: &Stream, config: &TrainConfig) -> f64 {
    let task = &stream.seen[0];
    let (k, d) = (stream.classes(), stream.input_dim());
    let mut w = vec![0.0; k * d];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..task.train.len()).collect();
    let probs = |w: &[f64], x: &[f64]| {
        let logits: Vec<f64> = (0..k)
            .map(|c| w[c * d..(c + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / z).collect::<Vec<f64>>()
    };
    for _ in 0..config.epochs {
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut g = vec![0.0; k * d];
            for &i in batch {
                let s = &task.train[i];
                let p = probs(&w, &s.features);
                for c in 0..k {
                    let err = p[c] - f64::from(u8::from(c == s.label));
                    for j in 0..d {
                        g[c * d + j] += err * s.features[j];
                    }
                }
            }
            let scale = config.lr_model / batch.len() as f64;
            w.iter_mut().zip(&g).for_each(|(w, g)| *w -= scale * g);
        }
    }
    let correct = task
        .test
        .iter()
        .filter(|s| argmax(&probs(&w, &s.features)) == s.label)
        .count();
    100.0 * correct as f64 / task.test.len() as f64
}

#[test]
fn single_task_matches_logistic_regression() {
    let mut stream = small_stream(11);
    stream.seen.truncate(1);
    stream.unseen.clear();
    stream.config.seen_tasks = 1;
    stream.config.unseen_tasks = 0;
    stream.config.formats = 1;
    for t in &mut stream.seen {
        for s in t.train.iter_mut().chain(&mut t.test) {
            s.format_id = 0;
        }
        t.spec.format_id = 0;
    }
    let config = small_config(11);
    let baseline = logistic_regression(&stream, &config);
    for variant in [Variant::full(), Variant::sequential_finetune()] {
        let out = train_stream(&stream, &config, variant, &mut NoObserver).unwrap();
        let acc = out.matrix.row(0).unwrap()[0];
        assert!(acc >= baseline - 5.0, "{}: {acc} vs logistic regression {baseline}", variant.tag());
    }
}

#[test]
fn predict_is_argmax_of_forward() {
    let stream = small_stream(5);
    let out = train_stream(&stream, &small_config(5), Variant::full(), &mut NoObserver).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let sample = SampleRecord {
            features: (0..stream.input_dim()).map(|_| rng.random_range(-10.0..10.0)).collect(),
            label: 0,
            task_id: None,
            format_id: rng.random_range(0..stream.formats()),
        };
        let probs = out.state.forward(&sample).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(out.state.predict(&sample).unwrap(), argmax(&probs));
    }
}

#[test]
fn gold_route_frequency_follows_schedule() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let store = PromptStore::new(Default::default(), 1, 2, 4, 0.5, &mut rng).unwrap();
    let pool = MetaKeyPool::random(4, 2, 3, &mut rng).unwrap();
    // the nearest key belongs to task 1, the gold task is 0
    let keys = vec![
        TaskKey::new(0, vec![0.0, 1.0, 0.0]).unwrap(),
        TaskKey::new(1, vec![1.0, 0.0, 0.0]).unwrap(),
    ];
    let sample = SampleRecord {
        features: vec![1.0],
        label: 0,
        task_id: Some(0),
        format_id: 0,
    };
    let q = [1.0, 0.1, 0.0];
    let params = ScheduleParams {
        omega: 0.0,
        ..ScheduleParams::default()
    };
    let (mut unseen, mut schedule) = (ChaCha8Rng::seed_from_u64(1), ChaCha8Rng::seed_from_u64(2));
    let n = 4000;
    for k in [0u64, 1000, 2000, 2900, 3000] {
        let p = epsilon_schedule(k, &params);
        let mut gold = 0;
        for _ in 0..n {
            let c = compose_train(
                &sample,
                &q,
                &store,
                &keys,
                &pool,
                k,
                &params,
                IdentityPolicy::Scheduled,
                SegmentMask::ALL,
                RouteCoins {
                    unseen: &mut unseen,
                    schedule: &mut schedule,
                },
            )
            .unwrap();
            match c.routing.route {
                Route::Gold => {
                    gold += 1;
                    assert_eq!(c.routing.task_slot, PromptSlot::Task(0));
                }
                Route::Inferred => assert_eq!(c.routing.task_slot, PromptSlot::Task(1)),
                Route::Unseen => panic!("omega = 0 never routes to the unseen prompt"),
            }
        }
        let freq = gold as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * se + 1e-12, "k = {k}: {freq} vs {p}");
    }
}

#[test]
fn training_loss_decreases_across_epochs() {
    let stream = small_stream(13);
    let mut lr = 0.05;
    for _ in 0..4 {
        let config = TrainConfig {
            lr_model: lr,
            epochs: 4,
            ..small_config(13)
        };
        let mut trainer = Trainer::new(&stream, &config, Variant::full()).unwrap();
        trainer.begin_task(0).unwrap();
        let mut means = Vec::new();
        for epoch in 0..config.epochs {
            let batches = trainer.epoch_batches().unwrap();
            let mut total = 0.0;
            for batch in &batches {
                total += trainer.train_batch(batch, epoch, &mut NoObserver).unwrap().total;
            }
            means.push(total / batches.len() as f64);
        }
        if means.windows(2).all(|w| w[1] <= w[0]) {
            return;
        }
        lr *= 0.5;
    }
    panic!("loss never decreased monotonically, even at lr {lr}");
}

#[test]
fn evaluation_routes_cover_every_test_sample() {
    let stream = small_stream(17);
    let mut routes = Routes::default();
    train_stream(&stream, &small_config(17), Variant::full(), &mut routes).unwrap();
    let eval = routes.0.iter().filter(|e| e.phase == Phase::Eval).count();
    let tests: usize = stream.all_tasks().map(|t| t.test.len()).sum();
    assert_eq!(eval, tests);
}
