//! Central-difference gradient checks of every learned block.

mod support;

use support::grad::{self, TOL};

macro_rules! block {
    ($name:ident) => {
        #[test]
        fn $name() {
            let e = grad::$name();
            assert!(e < TOL, "{} rel err {e:.2e}", stringify!($name));
        }
    };
}

block!(pillar_encoder);
block!(resnet2d);
block!(positional_encoder);
block!(positional_map);
block!(aux_head);
block!(aux_loss_gradient);
block!(radar_assisted_block);
block!(decoder_stage);
block!(head_trunk);
