use koppa::config::{ConfigError, DataKind, Mode, RunConfig};
use koppa_core::model::PredictionRule;
use koppa_core::TrainingMode;

#[test]
fn empty_file_gives_defaults() {
    let c = RunConfig::from_toml_str("").unwrap();
    assert_eq!(c, RunConfig::default());
    c.validate().unwrap();
}

#[test]
fn toml_round_trip() {
    let mut c = RunConfig {
        mode: Mode::JustOva,
        ..RunConfig::default()
    };
    c.data.kind = DataKind::Csv;
    c.data.path = Some("x.csv".into());
    c.train.epsilon = 0.999999999999;
    let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn json_round_trip() {
    let c = RunConfig::default()
        .with_overrides(&["train.lr=0.003", "data.seed=17"])
        .unwrap();
    let json = serde_json::to_string(&c).unwrap();
    assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
}

#[test]
fn dotted_overrides() {
    let c = RunConfig::default()
        .with_overrides(&[
            "mode=coda",
            "train.lr=0.05",
            "model.similarity=dot",
            "data.tasks=3",
            "out=/tmp/x",
        ])
        .unwrap();
    assert_eq!(c.mode, Mode::Coda);
    assert_eq!(c.train.lr, 0.05);
    assert_eq!(c.data.tasks, 3);
    assert_eq!(c.out.as_deref(), Some(std::path::Path::new("/tmp/x")));
}

#[test]
fn bad_overrides_are_errors() {
    let c = RunConfig::default();
    assert!(matches!(
        c.with_overrides(&["train.lr"]),
        Err(ConfigError::Override(_))
    ));
    assert!(matches!(
        c.with_overrides(&["train.nope=1"]),
        Err(ConfigError::Parse(_))
    ));
    assert!(matches!(
        c.with_overrides(&["train.lr=fast"]),
        Err(ConfigError::Parse(_))
    ));
    assert!(matches!(
        c.with_overrides(&["seed.x=1"]),
        Err(ConfigError::OverridePath { .. })
    ));
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(RunConfig::from_toml_str("[train]\nlearning_rate = 1.0\n").is_err());
}

#[test]
fn validation() {
    let bad = |sets: &[&str]| {
        RunConfig::default()
            .with_overrides(sets)
            .unwrap()
            .validate()
            .is_err()
    };
    assert!(bad(&["train.epsilon=1.0"]));
    assert!(bad(&["train.lookahead_epochs=50"]));
    assert!(bad(&["data.kind=csv"]));
    assert!(bad(&["mode=coda", "report.assert_orthogonality=true"]));
    assert!(bad(&["model.query=0"]));
    assert!(!bad(&["mode=coda"]));
}

#[test]
fn modes_map_to_losses_and_rules() {
    let tc = |m: &str| {
        RunConfig::default()
            .with_overrides(&[format!("mode={m}")])
            .unwrap()
            .train_config()
    };
    assert_eq!(tc("koppa"), tc("ce_plus_ova"));
    assert_eq!(tc("just_ce").loss.ova, 0.0);
    assert_eq!(tc("just_ce").prediction, PredictionRule::CeOnly);
    assert_eq!(tc("just_ova").loss.ce, 0.0);
    assert_eq!(tc("just_ova").prediction, PredictionRule::OvaOnly);
    assert_eq!(tc("coda").mode, TrainingMode::Coda);
    assert_eq!(tc("coda").loss.ova, 0.0);
}
