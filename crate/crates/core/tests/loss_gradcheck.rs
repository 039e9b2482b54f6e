mod common;

use common::*;

const SIZES: [(usize, usize); 2] = [(16, 16), (9, 7)];

#[test]
fn dssim_gradient() {
    for seed in 0..4 {
        for (w, h) in SIZES {
            let r = check_dssim_gradient(seed, w, h);
            assert_eq!(r.failed, 0, "{w}x{h} seed {seed}: {r:?}");
        }
    }
}

#[test]
fn blur_loss_gradient() {
    for seed in 0..4 {
        let r = check_blur_loss_gradient(100 + seed, 16, 16);
        assert_eq!(r.failed, 0, "seed {seed}: {r:?}");
    }
}

#[test]
fn estimated_event_map_gradient() {
    for seed in 0..4 {
        let r = check_event_map_gradient(200 + seed, 16, 16);
        assert_eq!(r.failed, 0, "seed {seed}: {r:?}");
    }
}

#[test]
fn event_loss_gradient() {
    for seed in 0..4 {
        let r = check_event_loss_gradient(300 + seed, 16, 16);
        assert_eq!(r.failed, 0, "seed {seed}: {r:?}");
    }
}
