use koppa::data::{self, SynthSpec};
use koppa::{run, RunConfig};
use koppa_core::metrics::{self, accuracy};
use koppa_core::{Trainer, TrainingMode};

fn tasks(separation: f64, n_tasks: usize, seed: u64) -> Vec<koppa_core::TaskData> {
    data::synth_split_gaussians(&SynthSpec {
        tasks: n_tasks,
        classes_per_task: 2,
        dim: 16,
        samples_per_class: 100,
        separation,
        seed,
    })
    .unwrap()
}

fn trainer(mode: TrainingMode, seed: u64) -> Trainer {
    let cfg = RunConfig::default()
        .with_overrides(&[format!("seed={seed}")])
        .unwrap();
    let mut tc = cfg.train_config();
    tc.mode = mode;
    Trainer::new(tc, cfg.dims(16))
}

#[test]
fn first_task_is_learned() {
    for mode in [TrainingMode::Koppa, TrainingMode::Coda] {
        let data = tasks(10.0, 1, 5);
        let mut tr = trainer(mode, 5);
        tr.train_task(&data[0]).unwrap();
        let tc = tr.config;
        let acc = accuracy(&tr.model, &data[0].test, tc.prediction, tc.score_target);
        assert!(acc >= 0.99, "{mode:?}: {acc}");
    }
}

#[test]
fn lookahead_loss_decreases() {
    for seed in 0..5 {
        let data = tasks(8.0, 2, seed);
        let mut tr = trainer(TrainingMode::Koppa, seed);
        tr.train_task(&data[0]).unwrap();
        tr.begin_task();
        let losses = tr.phase1_lookahead(&data[1], 10).unwrap();
        assert!(
            losses.last().unwrap() < losses.first().unwrap(),
            "seed {seed}: {losses:?}"
        );
    }
}

#[test]
fn finetune_keeps_current_task_accuracy() {
    for seed in 0..3 {
        let data = tasks(8.0, 2, seed);
        let mut tr = trainer(TrainingMode::Koppa, seed);
        tr.train_task(&data[0]).unwrap();
        tr.begin_task();
        tr.phase1_lookahead(&data[1], 10).unwrap();
        let tc = tr.config;
        let before = accuracy(&tr.model, &data[1].test, tc.prediction, tc.score_target);
        let keys = tr.model.pool.block(1).keys.clone();
        tr.phase2_freeze_finetune(&data[1], 10).unwrap();
        let after = accuracy(&tr.model, &data[1].test, tc.prediction, tc.score_target);
        assert!(after >= before - 0.05, "seed {seed}: {before} -> {after}");
        assert_eq!(tr.model.pool.block(1).keys, keys);
    }
}

#[test]
fn separated_tasks_trigger_their_own_head() {
    let cfg = RunConfig::default()
        .with_overrides(&["data.separation=10"])
        .unwrap();
    let outcome = run(&cfg, None).unwrap();
    let rates = &outcome.report.triggering;
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    assert!(mean >= 0.95, "{rates:?}");
}

#[test]
fn triggering_rate_bounds() {
    let oracle: Vec<(usize, usize)> = (0..100).map(|i| (i % 4, i % 4)).collect();
    assert_eq!(metrics::triggering_rates(&oracle, 4), vec![1.0; 4]);
    // fair coin between the true task and another
    let coin: Vec<(usize, usize)> = (0..400)
        .map(|i| (i % 2, if (i / 2) % 2 == 0 { i % 2 } else { 1 - i % 2 }))
        .collect();
    for r in metrics::triggering_rates(&coin, 2) {
        assert!((r - 0.5).abs() < 1e-12);
    }
}
