use retifluid::config::*;
use retifluid::manifest::*;
use retifluid::CliError;

#[test]
fn empty_config_resolves_to_defaults() {
    let cfg = parse("{}", "inline").unwrap();
    let r = cfg.resolve(4).unwrap();
    assert_eq!(r.train.epochs, 30);
    assert_eq!(r.train.lr, 2e-4);
    assert_eq!(r.train.lr_decay, 0.8);
    assert_eq!(r.train.decay_every, 5);
    assert_eq!(r.train.batch_size, 4);
    assert_eq!(r.train.lambda, 0.05);
    assert_eq!((r.train.rho, r.train.epsilon), (0.9, 1e-7));
    assert!(r.train.include_background);
    assert!(r.augment.enabled);
    assert_eq!(r.model.input_size, [64, 64]);
    assert_eq!(r.model.classes, 4);
    assert_eq!(r.model.aux_scales, 4);
    assert_eq!(r.model.base_channels, 8);
    let tc = r.train_config();
    assert!(tc.augment);
    assert_eq!(tc.learning_rate(10), 2e-4 * 0.8 * 0.8);
}

#[test]
fn resolved_json_reproduces_itself() {
    let cfg = parse(
        r#"{"train": {"epochs": 3, "lambda": 0.1}, "model": {"input_size": [32, 64]}}"#,
        "inline",
    )
    .unwrap();
    let r = cfg.resolve(3).unwrap();
    assert_eq!(r.train.epochs, 3);
    assert_eq!(r.train.lambda, 0.1);
    let again = parse(&r.to_json(), "resolved").unwrap().resolve(3).unwrap();
    assert_eq!(again, r);
    let dir = tempfile::tempdir().unwrap();
    let path = r.write(dir.path()).unwrap();
    assert_eq!(path.file_name().unwrap(), RESOLVED_NAME);
    assert_eq!(load(&path).unwrap().resolve(3).unwrap(), r);
}

#[test]
fn unknown_keys_name_their_path() {
    let err = parse(r#"{"train": {"epochz": 3}}"#, "run.json").unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let msg = err.to_string();
    assert!(
        msg.contains("run.json") && msg.contains("train") && msg.contains("epochz"),
        "{msg}"
    );
    assert!(parse(r#"{"extra": 1}"#, "x").is_err());
    assert!(parse(r#"{"train": {"lr": "fast"}}"#, "x").is_err());
}

#[test]
fn invalid_values_fail_validation() {
    for text in [
        r#"{"train": {"lr": -1.0}}"#,
        r#"{"train": {"epochs": 0}}"#,
        r#"{"train": {"lambda": -0.5}}"#,
        r#"{"model": {"input_size": [48, 64]}}"#,
        r#"{"model": {"classes": 3}}"#,
    ] {
        let err = parse(text, "x").unwrap().resolve(4).unwrap_err();
        assert!(matches!(err, CliError::Validation(_)), "{text}: {err}");
    }
}

#[test]
fn manifest_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    let m = Manifest {
        classes: 3,
        size: [4, 4],
        entries: vec![Entry {
            subject_id: "a".into(),
            image: "i.pgm".into(),
            mask: "m.pgm".into(),
        }],
    };
    save_manifest(&path, &m).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), m);
    // files referenced by the manifest are missing
    assert_eq!(load_samples(&path).unwrap_err().exit_code(), 3);

    for text in [
        r#"{"classes": 1, "size": [4, 4], "entries": [{"subject_id": "a", "image": "i", "mask": "m"}]}"#,
        r#"{"classes": 3, "size": [4, 4], "entries": []}"#,
        r#"{"classes": 3, "size": [4, 4], "entries": [], "note": 1}"#,
        r#"{"classes": 3}"#,
    ] {
        std::fs::write(&path, text).unwrap();
        assert_eq!(load_manifest(&path).unwrap_err().exit_code(), 1, "{text}");
    }
}

#[test]
fn readme_example_parses() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```json").unwrap() + "```json".len();
    let end = start + readme[start..].find("```").unwrap();
    let r = parse(&readme[start..end], "README")
        .unwrap()
        .resolve(4)
        .unwrap();
    assert_eq!(
        r,
        parse("{}", "x")
            .unwrap()
            .resolve(4)
            .map(|mut d| {
                d.data = "data/manifest.json".into();
                d.output_dir = "run".into();
                d
            })
            .unwrap()
    );
}
