use super::*;
use crate::dataset::{simulate, SceneConfig};
use crate::geometry::Gaussian;
use nalgebra::Vector3;

const TINY: &str = r#"
version = 1
seed = 11
background = [0.0, 0.0, 0.0]

[scene]
kind = "random"
count = 6
radius = 0.6
scale_range = [0.1, 0.2]
opacity_range = [0.6, 0.9]

[camera]
width = 16
height = 16
focal = 20.0
ring_radius = 4.0
train_views = 2
holdout_views = 1

[shake]
b = 3
translation = 0.4
"#;

fn tiny() -> Dataset {
    simulate(&SceneConfig::from_toml(TINY).unwrap()).unwrap()
}

fn gaussian(opacity: f64, scale: f64) -> Gaussian {
    Gaussian::new(
        Vector3::zeros(),
        Quat::IDENTITY,
        Vector3::repeat(scale),
        opacity,
        Vector3::repeat(0.5),
    )
    .unwrap()
}

fn scene_of(gs: Vec<Gaussian>) -> (Scene, TrainState, TrainConfig) {
    let cfg = TrainConfig {
        latent_mode: LatentMode::None,
        ..TrainConfig::default()
    };
    let scene = Scene {
        cloud: GaussianCloud::new(gs),
        ade: None,
    };
    let state = TrainState::new(&scene, &cfg);
    (scene, state, cfg)
}

#[test]
fn default_config_round_trips() {
    let cfg = TrainConfig::default();
    assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert_eq!(cfg.lr.position, 1.6e-4);
    assert_eq!(cfg.lr.mlp, 1e-4);
    assert_eq!(cfg.iterations, 2000);
}

#[test]
fn shipped_config_matches_defaults() {
    let text = include_str!("../../../../configs/train.toml");
    assert_eq!(TrainConfig::from_toml(text).unwrap(), TrainConfig::default());
}

#[test]
fn config_rejects_bad_values() {
    for text in [
        "version = 2",
        "iterations = 0",
        "[lr]\nopacity = -1.0",
        "bogus = 1",
        "latent_mode = \"sideways\"",
        "theta = 0.0",
    ] {
        assert!(
            matches!(TrainConfig::from_toml(text), Err(Error::Config(_))),
            "{text}"
        );
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let ds = tiny();
    let cfg = TrainConfig {
        iterations: 3,
        ..TrainConfig::default()
    };
    let out = train(&ds, &cfg).unwrap();
    let bytes = encode_checkpoint(&out.scene, &out.state);
    let (scene, state) = decode_checkpoint(&bytes).unwrap();
    assert_eq!(scene, out.scene);
    assert_eq!(state, out.state);
    assert_eq!(encode_checkpoint(&scene, &state), bytes);
}

#[test]
fn checkpoint_rejects_damage() {
    let (scene, state, _) = scene_of(vec![gaussian(0.5, 0.1)]);
    let bytes = encode_checkpoint(&scene, &state);
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_checkpoint(&bad).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_checkpoint(&extra).is_err());
    let mut version = bytes;
    version[4] = 9;
    assert!(matches!(decode_checkpoint(&version), Err(Error::Data(_))));
}

#[test]
fn densify_clones_small_and_splits_large() {
    let (mut scene, mut state, cfg) = scene_of(vec![gaussian(0.5, 0.001), gaussian(0.5, 1.0), gaussian(0.5, 0.001)]);
    state.grad_accum = vec![1.0, 1.0, 0.0];
    state.grad_count = vec![1, 1, 1];
    for opt in &mut state.optim.groups {
        opt.m.iter_mut().for_each(|m| *m = 7.0);
    }
    let r = densify_and_prune(&mut scene, &mut state, &cfg, 1.0).unwrap();
    assert_eq!((r.cloned, r.split, r.pruned), (1, 1, 0));
    assert_eq!(r.after, 5);
    assert_eq!(scene.cloud.len(), 5);
    // Row order: original, clone, two children, untouched.
    let pos = &state.optim.groups[0];
    assert_eq!(&pos.m[0..3], &[7.0; 3]);
    assert_eq!(&pos.m[3..12], &[0.0; 9]);
    assert_eq!(&pos.m[12..15], &[7.0; 3]);
    assert_eq!(scene.cloud.gaussians[1], scene.cloud.gaussians[0]);
    let shrunk = (1.0f64 / densify::SPLIT_SHRINK).ln();
    assert!((scene.cloud.gaussians[2].log_scale[0] - shrunk).abs() < 1e-12);
    assert!(state.grad_accum.iter().all(|g| *g == 0.0));
    state.check_consistent(&scene).unwrap();
}

#[test]
fn prune_to_zero_keeps_most_opaque() {
    let (mut scene, mut state, cfg) = scene_of(vec![gaussian(0.001, 0.1), gaussian(0.003, 0.1), gaussian(0.002, 0.1)]);
    let r = densify_and_prune(&mut scene, &mut state, &cfg, 1.0).unwrap();
    assert_eq!(r.after, 1);
    assert!((scene.cloud.gaussians[0].opacity() - 0.003).abs() < 1e-12);
    state.check_consistent(&scene).unwrap();
}

#[test]
fn densify_respects_budget() {
    let (mut scene, mut state, mut cfg) = scene_of(vec![gaussian(0.5, 0.001); 4]);
    cfg.densify.max_gaussians = 6;
    state.grad_accum = vec![1.0; 4];
    state.grad_count = vec![1; 4];
    let r = densify_and_prune(&mut scene, &mut state, &cfg, 1.0).unwrap();
    assert_eq!(r.cloned, 2);
    assert_eq!(scene.cloud.len(), 6);
}

#[test]
fn quaternions_stay_unit_after_updates() {
    let ds = tiny();
    let cfg = TrainConfig {
        iterations: 5,
        ..TrainConfig::default()
    };
    let out = train(&ds, &cfg).unwrap();
    for g in &out.scene.cloud.gaussians {
        assert!((g.rotation.norm() - 1.0).abs() < 1e-9);
        assert!(g.color.iter().all(|c| (0.0..=1.0).contains(c)));
    }
}

#[test]
fn shuffled_order_visits_every_view_each_epoch() {
    let (_, mut state, _) = scene_of(vec![gaussian(0.5, 0.1)]);
    for epoch in 0..3 {
        let mut seen: Vec<usize> = (0..5)
            .map(|_| {
                let v = next_view(&mut state, 5, true);
                state.iteration += 1;
                v
            })
            .collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4], "epoch {epoch}");
    }
}

#[test]
fn log_csv_has_header_and_blank_psnr() {
    let row = LogRow {
        iteration: 3,
        loss: LossBreakdown {
            total: 1.0,
            blur: 0.5,
            event: 0.25,
        },
        gaussians: 4,
        holdout_psnr: None,
    };
    let csv = log_to_csv(&[row]);
    assert_eq!(csv, format!("{LOG_HEADER}\n3,1,0.5,0.25,4,\n"));
}

#[test]
fn view_loss_matches_training_loss() {
    let ds = tiny();
    let cfg = TrainConfig::default();
    let (scene, _) = setup(&ds, &cfg).unwrap();
    let bg = ds.meta.background;
    for tv in prepare_views(&ds, &cfg).unwrap() {
        let a = view_loss(&scene, &tv, &cfg, bg).unwrap();
        let (b, _) = loss_and_grads(&scene, &tv, &cfg, bg).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn event_term_waits_for_its_start() {
    let ds = tiny();
    let cfg = TrainConfig {
        iterations: 2,
        event_start: 1,
        weights: LossWeights {
            lambda_event: 0.5,
            ..LossWeights::default()
        },
        ..TrainConfig::default()
    };
    let out = train(&ds, &cfg).unwrap();
    let (first, second) = (out.log[0].loss, out.log[1].loss);
    assert_eq!(first.total, first.blur);
    assert!((second.total - (second.blur + 0.5 * second.event)).abs() < 1e-15);
}
