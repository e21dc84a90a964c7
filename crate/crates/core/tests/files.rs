use std::fs;

use secgame::harness::{ExperimentConfig, QBox};
use secgame::{Error, InfluenceNetwork, MlpModel, MlpSpec, SecurityGame};

const NETWORK: &str = "\
influence = [[0.9, 0.2, 0.0], [0.0, 0.7, 0.0], [0.1, 0.1, 1.0]]
vulnerability = [[0.7, 0.0, 0.0], [0.2, 0.5, 0.0], [0.1, 0.3, 0.9]]
asset_values = [10.0, 10.0, 20.0]
";

#[test]
fn network_file_reproduces_the_reference_game() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("net.toml"), NETWORK).unwrap();
    fs::write(
        dir.path().join("exp.toml"),
        "network = \"net.toml\"\nseed = 4\nq_box = \"auto\"\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&dir.path().join("exp.toml")).unwrap();
    assert_eq!(cfg.network.as_deref(), Some(dir.path().join("net.toml").as_path()));
    assert_eq!(cfg.out, dir.path().join("results"));
    assert_eq!(cfg.q_box, QBox::Auto);

    let from_file = cfg.build_game().unwrap();
    let reference = SecurityGame::reference();
    let m = reference.n_moves();
    for s in 0..reference.n_states() {
        for u in 0..m {
            for d in 0..m {
                assert_eq!(from_file.kernel(s, u, d), reference.kernel(s, u, d));
                assert_eq!(from_file.attacker_reward(s, u, d), reference.attacker_reward(s, u, d));
            }
        }
    }
}

#[test]
fn network_round_trips_through_toml() {
    let net = InfluenceNetwork::reference();
    let back = InfluenceNetwork::from_toml_str(&net.to_toml_string()).unwrap();
    assert_eq!(back.base_influence(), net.base_influence());
    assert_eq!(back.vulnerability(), net.vulnerability());
    assert_eq!(back.asset_values(), net.asset_values());
}

#[test]
fn malformed_networks_name_the_offending_key() {
    let cases = [
        (NETWORK.replace("[0.9, 0.2, 0.0]", "[0.8, 0.2, 0.0]"), "influence"),
        (NETWORK.replace("[0.7, 0.0, 0.0]", "[1.7, 0.0, 0.0]"), "vulnerability"),
        (NETWORK.replace("[10.0, 10.0, 20.0]", "[10.0, -1.0, 20.0]"), "asset_values"),
        (NETWORK.replace("[0.1, 0.1, 1.0]]", "]"), "influence"),
        (NETWORK.replace("asset_values", "values"), "file"),
    ];
    for (text, key) in cases {
        match InfluenceNetwork::from_toml_str(&text) {
            Err(e @ Error::InvalidNetwork { .. }) => {
                assert!(e.to_string().contains(&format!("`{key}`")), "{e}")
            }
            other => panic!("expected a network error for {key}, got {other:?}"),
        }
    }
}

#[test]
fn missing_files_report_their_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    let err = InfluenceNetwork::load(&missing).unwrap_err();
    assert!(err.to_string().contains("absent.toml"));

    fs::write(dir.path().join("exp.toml"), "network = \"absent.toml\"\n").unwrap();
    let err = ExperimentConfig::load(&dir.path().join("exp.toml")).unwrap_err();
    assert!(err.to_string().contains("absent.toml"), "{err}");
}

#[test]
fn config_rejects_unknown_keys_and_conflicts() {
    let err = ExperimentConfig::from_toml_str("alpah = 0.1\n").unwrap_err();
    assert!(err.to_string().contains("alpah"), "{err}");
    let err = ExperimentConfig::from_toml_str("attacker = \"ndp_sm\"\nmodel = \"cm\"\n").unwrap_err();
    assert!(err.to_string().contains("conflicts"), "{err}");
    assert!(ExperimentConfig::from_toml_str("tau = 0.0\n").is_err());
    assert!(ExperimentConfig::from_toml_str("q_box = [0.0, -1.0]\n").is_err());
}

#[test]
fn checkpoints_reload_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    for spec in [MlpSpec::complex(36, 9), MlpSpec::simple(36, 9)] {
        let model = MlpModel::new(spec, 17).with_input_box(-189.2, 0.0, 9.46);
        model.save(&path).unwrap();
        let first = fs::read(&path).unwrap();
        let loaded = MlpModel::load(&path).unwrap();
        loaded.save(&path).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
        let probe: Vec<f64> = (0..36).map(|i| -(i as f64) * 3.7).collect();
        assert_eq!(model.forward(&probe).unwrap(), loaded.forward(&probe).unwrap());
    }
    fs::write(&path, "not a checkpoint").unwrap();
    assert!(matches!(MlpModel::load(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn guide_config_example_parses_to_the_defaults() {
    let chapter = include_str!("../../../book/src/harness.md");
    let start = chapter.find("```toml\n").unwrap() + "```toml\n".len();
    let block = &chapter[start..start + chapter[start..].find("```").unwrap()];
    let cfg = ExperimentConfig::from_toml_str(block).unwrap();
    let expected = ExperimentConfig {
        network: Some("net.toml".into()),
        checkpoint: Some("model.ckpt".into()),
        ..ExperimentConfig::default()
    };
    assert_eq!(cfg, expected);
}
