//! Diagonal state-space (S4D) sequence model.
//!
//! * Encoder: conv1x1 with bias to `H = ch(512)` channels.
//! * Four residual layers, each `x + conv1x1(GELU(S4D(BN(x))))` where the
//!   S4D layer is a per-channel causal convolution with a kernel generated
//!   from 32 complex diagonal modes (zero-order hold) plus a skip term `D * u`.
//! * Head: global average pool, linear to 2.
//!
//! Initialization follows S4D-Lin: `A = -1/2 + i pi m`, `log dt` uniform on
//! `[ln 1e-3, ln 1e-1]`, `C` complex normal with unit variance, `D` standard
//! normal. No temporal downsampling.

use std::f64::consts::PI;

use crate::model::{Init, ModelSpec, Net};
use crate::tape::Var;
use crate::tensor::Tensor;

pub const MIN_LENGTH: usize = 2;
pub const MODES: usize = 32;
const LAYERS: usize = 4;

pub(crate) fn init(b: &mut Init, spec: &ModelSpec) {
    let h = spec.ch(512);
    b.conv("enc", h, spec.input_channels, 1, true);
    for i in 0..LAYERS {
        let p = format!("s{i}");
        b.bn(&format!("{p}.bn"), h, false);
        let log_dt = b.uniform(h, 1e-3f64.ln(), 1e-1f64.ln());
        b.param(&format!("{p}.log_dt"), Tensor::new(vec![h], log_dt));
        b.param(&format!("{p}.log_a_re"), Tensor::filled(vec![h, MODES], 0.5f64.ln()));
        let a_im = (0..h * MODES).map(|k| PI * (k % MODES) as f64).collect();
        b.param(&format!("{p}.a_im"), Tensor::new(vec![h, MODES], a_im));
        b.normal_param(&format!("{p}.c_re"), vec![h, MODES], 0.5f64.sqrt());
        b.normal_param(&format!("{p}.c_im"), vec![h, MODES], 0.5f64.sqrt());
        b.normal_param(&format!("{p}.d"), vec![h], 1.0);
        b.conv(&format!("{p}.out"), h, h, 1, true);
    }
    b.linear("head", 2, h);
}

pub(crate) fn forward(net: &mut Net<'_>, x: Var) -> Var {
    let len = net.tape.shape(x)[2];
    let mut h = net.conv("enc", x, 1, 0);
    for i in 0..LAYERS {
        let p = format!("s{i}");
        let z = net.bn(&format!("{p}.bn"), h);
        let log_dt = net.p(&format!("{p}.log_dt"));
        let log_a_re = net.p(&format!("{p}.log_a_re"));
        let a_im = net.p(&format!("{p}.a_im"));
        let c_re = net.p(&format!("{p}.c_re"));
        let c_im = net.p(&format!("{p}.c_im"));
        let d = net.p(&format!("{p}.d"));
        let kernel = net.tape.s4d_kernel(log_dt, log_a_re, a_im, c_re, c_im, len);
        let conv = net.tape.causal_conv(z, kernel);
        let skip = net.tape.channel_scale(z, d);
        let y = net.tape.add(conv, skip);
        let y = net.tape.gelu(y);
        let y = net.conv(&format!("{p}.out"), y, 1, 0);
        h = net.tape.add(h, y);
    }
    h = net.tape.global_avg_pool(h);
    net.linear("head", h)
}
