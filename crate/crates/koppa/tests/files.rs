use koppa::checkpoint::{self, CheckpointError};
use koppa::report::{ReportError, RunReport, Status};
use koppa::{run, RunConfig};

fn small() -> RunConfig {
    RunConfig::default()
        .with_overrides(&[
            "data.tasks=3",
            "data.samples_per_class=40",
            "train.epochs=4",
            "train.lookahead_epochs=2",
            "train.prototypes=10",
        ])
        .unwrap()
}

#[test]
fn run_writes_report_matrices_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&small(), Some(dir.path())).unwrap();
    let r = &outcome.report;
    assert_eq!(r.status, Status::Complete);
    assert_eq!(r.accuracy.len(), 3);
    assert!(r.average_accuracy.is_some() && r.average_forgetting.is_some());
    assert_eq!(r.heatmap.len(), 3);
    assert_eq!(r.triggering.len(), 3);
    assert_eq!(r.shift.as_ref().unwrap().per_task.len(), 2);

    let loaded = RunReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(&loaded, r);
    assert_eq!(loaded.config, small());

    let acc = std::fs::read_to_string(dir.path().join("accuracy.csv")).unwrap();
    let lines: Vec<&str> = acc.lines().collect();
    assert_eq!(lines[0], "after_task,task_0,task_1,task_2");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].ends_with(",,"));
    let heat = std::fs::read_to_string(dir.path().join("heatmap.csv")).unwrap();
    assert_eq!(heat.lines().count(), 4);

    for t in 0..3 {
        assert!(dir
            .path()
            .join(format!("checkpoints/task_{t}.kpt"))
            .exists());
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&small(), Some(dir.path())).unwrap();
    let ck = checkpoint::load(&dir.path().join("checkpoints/task_2.kpt")).unwrap();
    assert_eq!(ck.config, small());
    assert_eq!(ck.trainer.model, outcome.trainer.model);
    assert_eq!(ck.trainer.subspace, outcome.trainer.subspace);
    assert_eq!(ck.trainer.buffer, outcome.trainer.buffer);
    assert_eq!(ck.trainer.basis_history, outcome.trainer.basis_history);
    assert_eq!(ck.report.accuracy, outcome.report.accuracy);

    let early = checkpoint::load(&dir.path().join("checkpoints/task_0.kpt")).unwrap();
    assert_eq!(early.trainer.tasks(), 1);
    assert_eq!(early.report.accuracy.len(), 1);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&small(), None).unwrap();
    let bytes = checkpoint::encode(&small(), &outcome.report, &outcome.trainer);
    assert!(matches!(
        checkpoint::decode(b"XXXX\x01\0\0\0"),
        Err(CheckpointError::BadMagic)
    ));
    let mut v = bytes.clone();
    v[4] = 9;
    assert!(matches!(
        checkpoint::decode(&v),
        Err(CheckpointError::Version(9))
    ));
    assert!(matches!(
        checkpoint::decode(&bytes[..bytes.len() - 3]),
        Err(CheckpointError::Truncated)
    ));
    let path = dir.path().join("missing.kpt");
    assert!(matches!(
        checkpoint::load(&path),
        Err(CheckpointError::Io { .. })
    ));
}

#[test]
fn unknown_schema_is_rejected() {
    let mut report = RunReport::new(RunConfig::default());
    let ok = report.to_json();
    assert!(RunReport::from_json(&ok).is_ok());
    report.schema = "koppa-report/99".into();
    assert!(matches!(
        RunReport::from_json(&report.to_json()),
        Err(ReportError::Schema { .. })
    ));
    assert!(matches!(
        RunReport::from_json("{}"),
        Err(ReportError::Schema { .. })
    ));
}

#[test]
fn memory_accounting() {
    let empty = RunReport::new(RunConfig::default());
    assert_eq!(empty.memory.total_bytes, 0);

    let outcome = run(&small(), None).unwrap();
    let m = outcome.report.memory;
    let cols = outcome.trainer.subspace.columns();
    assert_eq!(m.basis_bytes, 16 * cols * 8);
    assert_eq!(m.prototype_bytes, 10 * 3 * 16 * 8);
    assert_eq!(m.total_bytes, m.basis_bytes + m.prototype_bytes);
}

#[test]
fn failed_run_flushes_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    // zero tolerance makes the orthogonality assertion fail at task 1
    let cfg = small()
        .with_overrides(&["report.orthogonality_tol=0.0"])
        .unwrap();
    let err = run(&cfg, Some(dir.path())).err().expect("run fails");
    assert!(err.to_string().contains("task 1"));
    let r = RunReport::load(&dir.path().join("report.json")).unwrap();
    assert_eq!(r.status, Status::Failed);
    assert!(r.error.is_some());
    assert_eq!(r.accuracy.len(), 1);
}
