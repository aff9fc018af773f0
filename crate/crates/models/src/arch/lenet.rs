//! LeNet-style 1-D CNN.
//!
//! | layer  | op                                   | out channels |
//! |--------|--------------------------------------|--------------|
//! | conv1  | conv k7 pad 3 + bias, ReLU, maxpool2 | ch(6)        |
//! | conv2  | conv k7 pad 3 + bias, ReLU, maxpool2 | ch(16)       |
//! | -      | global average pool                  |              |
//! | fc1    | linear + ReLU                        | ch(120)      |
//! | fc2    | linear + ReLU                        | ch(84)       |
//! | head   | linear                               | 2            |
//!
//! `ch(c) = max(1, round(c * width_multiplier))`. At width 1 this is 13,110
//! parameters; at width 0.25 it is 921.

use crate::model::{Init, ModelSpec, Net};
use crate::tape::Var;

pub const MIN_LENGTH: usize = 8;

pub(crate) fn init(b: &mut Init, spec: &ModelSpec) {
    let (c1, c2, f1, f2) = (spec.ch(6), spec.ch(16), spec.ch(120), spec.ch(84));
    b.conv("conv1", c1, spec.input_channels, 7, true);
    b.conv("conv2", c2, c1, 7, true);
    b.linear("fc1", f1, c2);
    b.linear("fc2", f2, f1);
    b.linear("head", 2, f2);
}

pub(crate) fn forward(net: &mut Net<'_>, x: Var) -> Var {
    let mut h = x;
    for name in ["conv1", "conv2"] {
        h = net.conv(name, h, 1, 3);
        h = net.tape.relu(h);
        h = net.tape.max_pool1d(h, 2, 2, 0);
    }
    h = net.tape.global_avg_pool(h);
    for name in ["fc1", "fc2"] {
        h = net.linear(name, h);
        h = net.tape.relu(h);
    }
    net.linear("head", h)
}
