//! Inception1D (InceptionTime-style backbone).
//!
//! Six inception blocks. Each block with `nb = ch(32)` filters:
//! conv1x1 bottleneck to `ch(32)`, three parallel convs with kernels 39, 19, 9
//! on the bottleneck output, plus maxpool k3 s1 p1 followed by conv1x1 on the
//! block input; the four branches are concatenated (`4 * nb` channels), then
//! BN and ReLU. After blocks 3 and 6 a shortcut adds conv1x1-BN of the input
//! saved three blocks earlier, followed by ReLU. Head: global average pool,
//! linear to 2. Convolutions carry no bias; no temporal downsampling.

use crate::model::{Init, ModelSpec, Net};
use crate::tape::Var;

pub const MIN_LENGTH: usize = 2;
const DEPTH: usize = 6;
const KERNELS: [usize; 3] = [39, 19, 9];

pub(crate) fn init(b: &mut Init, spec: &ModelSpec) {
    let nb = spec.ch(32);
    let bottleneck = spec.ch(32);
    let width = nb * (KERNELS.len() + 1);
    let mut res_in = spec.input_channels;
    for d in 0..DEPTH {
        let ni = if d == 0 { spec.input_channels } else { width };
        b.conv(&format!("i{d}.bottleneck"), bottleneck, ni, 1, false);
        for k in KERNELS {
            b.conv(&format!("i{d}.conv{k}"), nb, bottleneck, k, false);
        }
        b.conv(&format!("i{d}.poolconv"), nb, ni, 1, false);
        b.bn(&format!("i{d}.bn"), width, false);
        if d % 3 == 2 {
            b.conv(&format!("sc{}.conv", d / 3), width, res_in, 1, false);
            b.bn(&format!("sc{}.bn", d / 3), width, false);
            res_in = width;
        }
    }
    b.linear("head", 2, width);
}

pub(crate) fn forward(net: &mut Net<'_>, x: Var) -> Var {
    let mut h = x;
    let mut res = x;
    for d in 0..DEPTH {
        let bottled = net.conv(&format!("i{d}.bottleneck"), h, 1, 0);
        let mut branches: Vec<Var> = KERNELS
            .iter()
            .map(|k| net.conv(&format!("i{d}.conv{k}"), bottled, 1, k / 2))
            .collect();
        let pooled = net.tape.max_pool1d(h, 3, 1, 1);
        branches.push(net.conv(&format!("i{d}.poolconv"), pooled, 1, 0));
        let cat = net.tape.concat_channels(&branches);
        let normed = net.bn(&format!("i{d}.bn"), cat);
        h = net.tape.relu(normed);
        if d % 3 == 2 {
            let s = net.conv(&format!("sc{}.conv", d / 3), res, 1, 0);
            let s = net.bn(&format!("sc{}.bn", d / 3), s);
            let sum = net.tape.add(h, s);
            h = net.tape.relu(sum);
            res = h;
        }
    }
    h = net.tape.global_avg_pool(h);
    net.linear("head", h)
}
