//! XResNet1d (bag-of-tricks ResNet, 1-D, bottleneck blocks).
//!
//! * Stem: three conv-BN-ReLU layers with ch(32), ch(32), ch(64) channels,
//!   kernel 5, the first with stride 2; then maxpool k3 s2 p1.
//! * Four stages with bottleneck width `nh = ch(64), ch(128), ch(256), ch(512)`
//!   and output `4 * nh`, depth `[3, 4, 6, 3]` (50) or `[3, 4, 23, 3]` (101).
//!   Stages 2-4 start with stride 2.
//! * Bottleneck: conv1x1-BN-ReLU, conv k5 (stride s)-BN-ReLU, conv1x1-BN with
//!   the last BN scale zero-initialized. Shortcut: avgpool 2 (ceil) when
//!   strided, then conv1x1-BN when the channel count changes. ReLU after the sum.
//! * Head: global average pool, linear to 2.
//!
//! Convolutions carry no bias. Total downsampling 32.

use crate::model::{Init, ModelSpec, Net};
use crate::tape::Var;

pub const MIN_LENGTH: usize = 64;
pub const LAYERS_50: [usize; 4] = [3, 4, 6, 3];
pub const LAYERS_101: [usize; 4] = [3, 4, 23, 3];
const EXPANSION: usize = 4;
const KERNEL: usize = 5;

fn stem(spec: &ModelSpec) -> [usize; 3] {
    [spec.ch(32), spec.ch(32), spec.ch(64)]
}

fn widths(spec: &ModelSpec) -> [usize; 4] {
    [spec.ch(64), spec.ch(128), spec.ch(256), spec.ch(512)]
}

pub(crate) fn init(b: &mut Init, spec: &ModelSpec, layers: &[usize; 4]) {
    let mut ci = spec.input_channels;
    for (i, co) in stem(spec).into_iter().enumerate() {
        b.conv(&format!("stem{i}.conv"), co, ci, KERNEL, false);
        b.bn(&format!("stem{i}.bn"), co, false);
        ci = co;
    }
    for (s, (&depth, nh)) in layers.iter().zip(widths(spec)).enumerate() {
        let nf = nh * EXPANSION;
        for blk in 0..depth {
            let p = format!("l{s}.b{blk}");
            b.conv(&format!("{p}.conv1"), nh, ci, 1, false);
            b.bn(&format!("{p}.bn1"), nh, false);
            b.conv(&format!("{p}.conv2"), nh, nh, KERNEL, false);
            b.bn(&format!("{p}.bn2"), nh, false);
            b.conv(&format!("{p}.conv3"), nf, nh, 1, false);
            b.bn(&format!("{p}.bn3"), nf, true);
            if ci != nf {
                b.conv(&format!("{p}.idconv"), nf, ci, 1, false);
                b.bn(&format!("{p}.idbn"), nf, false);
            }
            ci = nf;
        }
    }
    b.linear("head", 2, ci);
}

pub(crate) fn forward(net: &mut Net<'_>, x: Var, layers: &[usize; 4]) -> Var {
    let mut h = x;
    for i in 0..3 {
        h = net.conv(&format!("stem{i}.conv"), h, if i == 0 { 2 } else { 1 }, KERNEL / 2);
        h = net.bn(&format!("stem{i}.bn"), h);
        h = net.tape.relu(h);
    }
    h = net.tape.max_pool1d(h, 3, 2, 1);
    for (s, &depth) in layers.iter().enumerate() {
        for blk in 0..depth {
            let p = format!("l{s}.b{blk}");
            let stride = if s > 0 && blk == 0 { 2 } else { 1 };
            let mut y = net.conv(&format!("{p}.conv1"), h, 1, 0);
            y = net.bn(&format!("{p}.bn1"), y);
            y = net.tape.relu(y);
            y = net.conv(&format!("{p}.conv2"), y, stride, KERNEL / 2);
            y = net.bn(&format!("{p}.bn2"), y);
            y = net.tape.relu(y);
            y = net.conv(&format!("{p}.conv3"), y, 1, 0);
            y = net.bn(&format!("{p}.bn3"), y);
            let mut id = h;
            if stride != 1 {
                id = net.tape.avg_pool2_ceil(id);
            }
            if net.model.params.contains_key(&format!("{p}.idconv.weight")) {
                id = net.conv(&format!("{p}.idconv"), id, 1, 0);
                id = net.bn(&format!("{p}.idbn"), id);
            }
            let sum = net.tape.add(y, id);
            h = net.tape.relu(sum);
        }
    }
    h = net.tape.global_avg_pool(h);
    net.linear("head", h)
}
