//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass together with a
//! closure computing the vector-Jacobian product of that operation. Calling
//! [`Tape::backward`] walks the record in reverse. Layouts: sequences are
//! `[batch, channels, length]`, feature matrices `[batch, features]`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm layers use batch statistics and report running-stat updates.
    Train,
    /// Batch-norm layers use their running statistics.
    Eval,
}

/// Batch statistics observed by one batch-norm layer in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub prefix: String,
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

type BackFn = Box<dyn Fn(&[f64], &[&Tensor], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    requires_grad: bool,
    back: Option<BackFn>,
}

pub struct Tape {
    nodes: Vec<Node>,
    mode: Mode,
    params: BTreeMap<String, Var>,
    bn_updates: Vec<BnUpdate>,
    grad_enabled: bool,
}

/// `c = a * b + beta * c` for row/column-strided matrices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    beta: f64,
    c: &mut [f64],
    sc: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * sa.0 + (k - 1) * sa.1);
    debug_assert!(k == 0 || b.len() > (k - 1) * sb.0 + (n - 1) * sb.1);
    debug_assert!(c.len() > (m - 1) * sc.0 + (n - 1) * sc.1);
    // SAFETY: the asserted extents keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        );
    }
}

/// Column matrix `[ci * k, lo]` of one `[ci, l]` sample.
fn im2col(x: &[f64], ci: usize, l: usize, k: usize, stride: usize, pad: usize, lo: usize, cols: &mut [f64]) {
    for c in 0..ci {
        let xc = &x[c * l..(c + 1) * l];
        for j in 0..k {
            let row = &mut cols[(c * k + j) * lo..(c * k + j + 1) * lo];
            for (t, out) in row.iter_mut().enumerate() {
                let src = (t * stride + j) as isize - pad as isize;
                *out = if src >= 0 && (src as usize) < l {
                    xc[src as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

fn col2im_add(cols: &[f64], ci: usize, l: usize, k: usize, stride: usize, pad: usize, lo: usize, dx: &mut [f64]) {
    for c in 0..ci {
        let dxc = &mut dx[c * l..(c + 1) * l];
        for j in 0..k {
            let row = &cols[(c * k + j) * lo..(c * k + j + 1) * lo];
            for (t, g) in row.iter().enumerate() {
                let src = (t * stride + j) as isize - pad as isize;
                if src >= 0 && (src as usize) < l {
                    dxc[src as usize] += g;
                }
            }
        }
    }
}

const GELU_C: f64 = 0.044_715;

fn gelu_parts(x: f64) -> (f64, f64) {
    let s = (2.0 / PI).sqrt();
    let u = s * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_C * x * x);
    (y, dy)
}

impl Tape {
    pub fn new(mode: Mode) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            params: BTreeMap::new(),
            bn_updates: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Evaluation-mode tape that records no backward closures.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new(Mode::Eval)
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Trainable leaf; the same name always yields the same variable.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(v) = self.params.get(name) {
            return *v;
        }
        let v = self.leaf(value.clone(), self.grad_enabled);
        self.params.insert(name.to_owned(), v);
        v
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            requires_grad,
            back: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, parents: &[Var], back: BackFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            requires_grad,
            back: if requires_grad { Some(back) } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradients of the scalar `loss` with respect to every named parameter.
    pub fn backward(&self, loss: Var) -> BTreeMap<String, Vec<f64>> {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "loss must be a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(back) = &node.back else { continue };
            let Some(g) = grads[i].take() else { continue };
            let parents: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[*p].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|p| self.nodes[*p].requires_grad).collect();
            let pg = back(&g, &parents, &needs);
            for ((p, need), dg) in node.parents.iter().zip(&needs).zip(pg) {
                if !need {
                    continue;
                }
                let Some(dg) = dg else { continue };
                match &mut grads[*p] {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        self.params
            .iter()
            .map(|(name, v)| {
                let g = grads[v.0]
                    .take()
                    .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()]);
                (name.clone(), g)
            })
            .collect()
    }

    /// 1-D convolution, zero padding `pad` on both sides, no dilation.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, ci, l) = dims3(self.shape(x));
        let (co, wci, k) = dims3(self.shape(w));
        assert_eq!(ci, wci, "conv input channels");
        assert!(l + 2 * pad >= k, "conv input too short");
        let lo = (l + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * co * lo];
        let mut cols = vec![0.0; ci * k * lo];
        {
            let xv = &self.value(x).data;
            let wv = &self.value(w).data;
            for s in 0..n {
                im2col(&xv[s * ci * l..(s + 1) * ci * l], ci, l, k, stride, pad, lo, &mut cols);
                let o = &mut out[s * co * lo..(s + 1) * co * lo];
                gemm(co, ci * k, lo, wv, (ci * k, 1), &cols, (lo, 1), 0.0, o, (lo, 1));
            }
            if let Some(b) = b {
                let bv = &self.value(b).data;
                for s in 0..n {
                    for c in 0..co {
                        out[(s * co + c) * lo..(s * co + c + 1) * lo]
                            .iter_mut()
                            .for_each(|v| *v += bv[c]);
                    }
                }
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(
            Tensor::new(vec![n, co, lo], out),
            &parents,
            Box::new(move |g, p, needs| {
                let (xv, wv) = (&p[0].data, &p[1].data);
                let mut dx = needs[0].then(|| vec![0.0; n * ci * l]);
                let mut dw = needs[1].then(|| vec![0.0; co * ci * k]);
                let mut cols = vec![0.0; ci * k * lo];
                let mut dcols = vec![0.0; ci * k * lo];
                for s in 0..n {
                    let gs = &g[s * co * lo..(s + 1) * co * lo];
                    if let Some(dw) = dw.as_mut() {
                        im2col(&xv[s * ci * l..(s + 1) * ci * l], ci, l, k, stride, pad, lo, &mut cols);
                        gemm(co, lo, ci * k, gs, (lo, 1), &cols, (1, lo), 1.0, dw, (ci * k, 1));
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(ci * k, co, lo, wv, (1, ci * k), gs, (lo, 1), 0.0, &mut dcols, (lo, 1));
                        col2im_add(&dcols, ci, l, k, stride, pad, lo, &mut dx[s * ci * l..(s + 1) * ci * l]);
                    }
                }
                let mut res = vec![dx, dw];
                if needs.len() == 3 {
                    let mut db = vec![0.0; co];
                    for s in 0..n {
                        for (c, d) in db.iter_mut().enumerate() {
                            *d += g[(s * co + c) * lo..(s * co + c + 1) * lo].iter().sum::<f64>();
                        }
                    }
                    res.push(Some(db));
                }
                res
            }),
        )
    }

    /// Batch normalization over batch and length, per channel.
    ///
    /// `Train` mode normalizes with batch statistics (biased variance) and
    /// records a [`BnUpdate`]; `Eval` mode uses the given running statistics.
    pub fn batch_norm(
        &mut self,
        prefix: &str,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Var {
        let (n, c, l) = dims3(self.shape(x));
        let m = (n * l) as f64;
        let (mean, var) = match self.mode {
            Mode::Train => {
                let xv = &self.value(x).data;
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += xv[(b * c + ch) * l..(b * c + ch + 1) * l].iter().sum::<f64>();
                    }
                    let mu = s / m;
                    let mut q = 0.0;
                    for b in 0..n {
                        q += xv[(b * c + ch) * l..(b * c + ch + 1) * l]
                            .iter()
                            .map(|v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = q / m;
                }
                let unbiased = var
                    .iter()
                    .map(|v| if m > 1.0 { v * m / (m - 1.0) } else { *v })
                    .collect();
                self.bn_updates.push(BnUpdate {
                    prefix: prefix.to_owned(),
                    mean: mean.clone(),
                    var: unbiased,
                });
                (mean, var)
            }
            Mode::Eval => (running_mean.to_vec(), running_var.to_vec()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; n * c * l];
        let mut out = vec![0.0; n * c * l];
        {
            let xv = &self.value(x).data;
            let gv = &self.value(gamma).data;
            let bv = &self.value(beta).data;
            for b in 0..n {
                for ch in 0..c {
                    let r = (b * c + ch) * l..(b * c + ch + 1) * l;
                    for i in r {
                        let h = (xv[i] - mean[ch]) * inv_std[ch];
                        xhat[i] = h;
                        out[i] = gv[ch] * h + bv[ch];
                    }
                }
            }
        }
        let batch_stats = self.mode == Mode::Train;
        self.push(
            Tensor::new(vec![n, c, l], out),
            &[x, gamma, beta],
            Box::new(move |g, p, _| {
                let gv = &p[1].data;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        for i in (b * c + ch) * l..(b * c + ch + 1) * l {
                            dgamma[ch] += g[i] * xhat[i];
                            dbeta[ch] += g[i];
                        }
                    }
                }
                let mut dx = vec![0.0; n * c * l];
                for ch in 0..c {
                    let k = gv[ch] * inv_std[ch];
                    for b in 0..n {
                        for i in (b * c + ch) * l..(b * c + ch + 1) * l {
                            dx[i] = if batch_stats {
                                k * (g[i] - dbeta[ch] / m - xhat[i] * dgamma[ch] / m)
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let out = xt.data.iter().map(|v| v.max(0.0)).collect();
        let shape = xt.shape.clone();
        self.push(
            Tensor::new(shape, out),
            &[x],
            Box::new(|g, p, _| {
                vec![Some(
                    g.iter()
                        .zip(&p[0].data)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let out = xt.data.iter().map(|v| gelu_parts(*v).0).collect();
        let shape = xt.shape.clone();
        self.push(
            Tensor::new(shape, out),
            &[x],
            Box::new(|g, p, _| {
                vec![Some(
                    g.iter().zip(&p[0].data).map(|(g, x)| g * gelu_parts(*x).1).collect(),
                )]
            }),
        )
    }

    /// Max pooling with implicit `-inf` padding.
    pub fn max_pool1d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Var {
        let (n, c, l) = dims3(self.shape(x));
        assert!(l + 2 * pad >= k, "pool input too short");
        let lo = (l + 2 * pad - k) / stride + 1;
        let xv = &self.value(x).data;
        let mut out = vec![0.0; n * c * lo];
        let mut arg = vec![0usize; n * c * lo];
        for row in 0..n * c {
            let xr = &xv[row * l..(row + 1) * l];
            for t in 0..lo {
                let start = (t * stride) as isize - pad as isize;
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for j in 0..k as isize {
                    let s = start + j;
                    if s >= 0 && (s as usize) < l && xr[s as usize] > best {
                        best = xr[s as usize];
                        at = s as usize;
                    }
                }
                out[row * lo + t] = best;
                arg[row * lo + t] = row * l + at;
            }
        }
        self.push(
            Tensor::new(vec![n, c, lo], out),
            &[x],
            Box::new(move |g, _, _| {
                let mut dx = vec![0.0; n * c * l];
                for (gi, a) in g.iter().zip(&arg) {
                    dx[*a] += gi;
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Average pooling with window and stride 2, keeping a trailing partial
    /// window (averaged over the samples it holds). Output length `ceil(l/2)`.
    pub fn avg_pool2_ceil(&mut self, x: Var) -> Var {
        let (n, c, l) = dims3(self.shape(x));
        let lo = l.div_ceil(2);
        let xv = &self.value(x).data;
        let mut out = vec![0.0; n * c * lo];
        for row in 0..n * c {
            for t in 0..lo {
                let a = 2 * t;
                let b = (a + 2).min(l);
                out[row * lo + t] = xv[row * l + a..row * l + b].iter().sum::<f64>() / (b - a) as f64;
            }
        }
        self.push(
            Tensor::new(vec![n, c, lo], out),
            &[x],
            Box::new(move |g, _, _| {
                let mut dx = vec![0.0; n * c * l];
                for row in 0..n * c {
                    for t in 0..lo {
                        let a = 2 * t;
                        let b = (a + 2).min(l);
                        let share = g[row * lo + t] / (b - a) as f64;
                        dx[row * l + a..row * l + b].iter_mut().for_each(|d| *d += share);
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Mean over the length axis: `[n, c, l] -> [n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, l) = dims3(self.shape(x));
        let xv = &self.value(x).data;
        let out = (0..n * c)
            .map(|r| xv[r * l..(r + 1) * l].iter().sum::<f64>() / l as f64)
            .collect();
        self.push(
            Tensor::new(vec![n, c], out),
            &[x],
            Box::new(move |g, _, _| {
                let mut dx = vec![0.0; n * c * l];
                for r in 0..n * c {
                    let share = g[r] / l as f64;
                    dx[r * l..(r + 1) * l].iter_mut().for_each(|d| *d = share);
                }
                vec![Some(dx)]
            }),
        )
    }

    /// `x [n, i] * w[o, i]^T + b[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, i) = dims2(self.shape(x));
        let (o, wi) = dims2(self.shape(w));
        assert_eq!(i, wi, "linear input features");
        let mut out = vec![0.0; n * o];
        gemm(
            n,
            i,
            o,
            &self.value(x).data,
            (i, 1),
            &self.value(w).data,
            (1, i),
            0.0,
            &mut out,
            (o, 1),
        );
        let bv = &self.value(b).data;
        for r in 0..n {
            out[r * o..(r + 1) * o].iter_mut().zip(bv).for_each(|(y, b)| *y += b);
        }
        self.push(
            Tensor::new(vec![n, o], out),
            &[x, w, b],
            Box::new(move |g, p, needs| {
                let dx = needs[0].then(|| {
                    let mut dx = vec![0.0; n * i];
                    gemm(n, o, i, g, (o, 1), &p[1].data, (i, 1), 0.0, &mut dx, (i, 1));
                    dx
                });
                let mut dw = vec![0.0; o * i];
                gemm(o, n, i, g, (1, o), &p[0].data, (i, 1), 0.0, &mut dw, (i, 1));
                let mut db = vec![0.0; o];
                for r in 0..n {
                    db.iter_mut().zip(&g[r * o..(r + 1) * o]).for_each(|(d, g)| *d += g);
                }
                vec![dx, Some(dw), Some(db)]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let out = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(
            Tensor::new(shape, out),
            &[a, b],
            Box::new(|g, _, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
        )
    }

    /// Concatenation along the channel axis of `[n, c_i, l]` inputs.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Var {
        let (n, _, l) = dims3(self.shape(xs[0]));
        let cs: Vec<usize> = xs
            .iter()
            .map(|x| {
                let (xn, c, xl) = dims3(self.shape(*x));
                assert_eq!((xn, xl), (n, l), "concat shapes");
                c
            })
            .collect();
        let ct: usize = cs.iter().sum();
        let mut out = vec![0.0; n * ct * l];
        let mut off = 0;
        for (x, c) in xs.iter().zip(&cs) {
            let xv = &self.value(*x).data;
            for s in 0..n {
                out[(s * ct + off) * l..(s * ct + off + c) * l].copy_from_slice(&xv[s * c * l..(s + 1) * c * l]);
            }
            off += c;
        }
        let cs2 = cs.clone();
        self.push(
            Tensor::new(vec![n, ct, l], out),
            xs,
            Box::new(move |g, _, needs| {
                let mut off = 0;
                let mut res = Vec::with_capacity(cs2.len());
                for (c, need) in cs2.iter().zip(needs) {
                    if *need {
                        let mut dx = vec![0.0; n * c * l];
                        for s in 0..n {
                            dx[s * c * l..(s + 1) * c * l]
                                .copy_from_slice(&g[(s * ct + off) * l..(s * ct + off + c) * l]);
                        }
                        res.push(Some(dx));
                    } else {
                        res.push(None);
                    }
                    off += c;
                }
                res
            }),
        )
    }

    /// `x [n, c, l] * d[c]`, broadcast over batch and length.
    pub fn channel_scale(&mut self, x: Var, d: Var) -> Var {
        let (n, c, l) = dims3(self.shape(x));
        assert_eq!(self.value(d).len(), c);
        let xv = &self.value(x).data;
        let dv = &self.value(d).data;
        let out = xv.iter().enumerate().map(|(i, v)| v * dv[(i / l) % c]).collect();
        self.push(
            Tensor::new(vec![n, c, l], out),
            &[x, d],
            Box::new(move |g, p, _| {
                let (xv, dv) = (&p[0].data, &p[1].data);
                let dx = g.iter().enumerate().map(|(i, g)| g * dv[(i / l) % c]).collect();
                let mut dd = vec![0.0; c];
                for (i, (g, x)) in g.iter().zip(xv).enumerate() {
                    dd[(i / l) % c] += g * x;
                }
                vec![Some(dx), Some(dd)]
            }),
        )
    }

    /// Per-column affine map with constant coefficients: `x[n, k] * scale[k] + shift[k]`.
    pub fn affine_columns(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Var {
        let (n, k) = dims2(self.shape(x));
        assert_eq!(scale.len(), k);
        assert_eq!(shift.len(), k);
        let out = self
            .value(x)
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v * scale[i % k] + shift[i % k])
            .collect();
        let scale = scale.to_vec();
        self.push(
            Tensor::new(vec![n, k], out),
            &[x],
            Box::new(move |g, _, _| vec![Some(g.iter().enumerate().map(|(i, g)| g * scale[i % k]).collect())]),
        )
    }

    /// `scale * sum_i (w_sbp,i * e_sbp,i^2 + w_dbp,i * e_dbp,i^2)` for
    /// predictions `[n, 2]`. Accumulated in sample order.
    pub fn weighted_sq_error(&mut self, pred: Var, targets: &[(f64, f64)], weights: &[(f64, f64)], scale: f64) -> Var {
        let (n, k) = dims2(self.shape(pred));
        assert_eq!(k, 2);
        assert_eq!(targets.len(), n);
        assert_eq!(weights.len(), n);
        let pv = &self.value(pred).data;
        let mut total = 0.0;
        for i in 0..n {
            let es = pv[2 * i] - targets[i].0;
            let ed = pv[2 * i + 1] - targets[i].1;
            total += weights[i].0 * es * es + weights[i].1 * ed * ed;
        }
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        self.push(
            Tensor::scalar(scale * total),
            &[pred],
            Box::new(move |g, p, _| {
                let pv = &p[0].data;
                let mut d = vec![0.0; 2 * n];
                for i in 0..n {
                    d[2 * i] = g[0] * scale * 2.0 * weights[i].0 * (pv[2 * i] - targets[i].0);
                    d[2 * i + 1] = g[0] * scale * 2.0 * weights[i].1 * (pv[2 * i + 1] - targets[i].1);
                }
                vec![Some(d)]
            }),
        )
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let out = t.data.iter().map(|v| v * c).collect();
        let shape = t.shape.clone();
        self.push(
            Tensor::new(shape, out),
            &[x],
            Box::new(move |g, _, _| vec![Some(g.iter().map(|v| v * c).collect())]),
        )
    }

    /// Diagonal state-space convolution kernel `K [h, len]` with zero-order
    /// hold discretization:
    ///
    /// `K[c, l] = 2 Re sum_m C[c,m] (exp(dt_c A[c,m]) - 1) / A[c,m] * exp(dt_c A[c,m] l)`
    ///
    /// with `dt = exp(log_dt)` and `A = -exp(log_a_re) + i a_im`.
    pub fn s4d_kernel(&mut self, log_dt: Var, log_a_re: Var, a_im: Var, c_re: Var, c_im: Var, len: usize) -> Var {
        let (h, m) = dims2(self.shape(log_a_re));
        for v in [a_im, c_re, c_im] {
            assert_eq!(self.shape(v), [h, m]);
        }
        assert_eq!(self.value(log_dt).len(), h);
        let modes = S4dModes::new(
            &self.value(log_dt).data,
            &self.value(log_a_re).data,
            &self.value(a_im).data,
            &self.value(c_re).data,
            &self.value(c_im).data,
            h,
            m,
        );
        let mut k = vec![0.0; h * len];
        for c in 0..h {
            for j in 0..m {
                let idx = c * m + j;
                let w = modes.w[idx];
                let z = modes.e[idx];
                let mut p = Complex64::new(1.0, 0.0);
                for kl in k[c * len..(c + 1) * len].iter_mut() {
                    *kl += 2.0 * (w * p).re;
                    p *= z;
                }
            }
        }
        self.push(
            Tensor::new(vec![h, len], k),
            &[log_dt, log_a_re, a_im, c_re, c_im],
            Box::new(move |g, _, _| {
                let mut d_log_dt = vec![0.0; h];
                let mut d_lar = vec![0.0; h * m];
                let mut d_aim = vec![0.0; h * m];
                let mut d_cre = vec![0.0; h * m];
                let mut d_cim = vec![0.0; h * m];
                for c in 0..h {
                    let gl = &g[c * len..(c + 1) * len];
                    let dt = modes.dt[c];
                    for j in 0..m {
                        let idx = c * m + j;
                        let (a, e, cc, w) = (modes.a[idx], modes.e[idx], modes.c[idx], modes.w[idx]);
                        // S0 = sum g_l z^l, S1 = sum g_l l z^l.
                        let mut s0 = Complex64::new(0.0, 0.0);
                        let mut s1 = Complex64::new(0.0, 0.0);
                        let mut p = Complex64::new(1.0, 0.0);
                        for (l, gv) in gl.iter().enumerate() {
                            s0 += p * gv;
                            s1 += p * (gv * l as f64);
                            p *= e;
                        }
                        // Real loss = 2 Re F(v): dRe v -> 2 Re F', dIm v -> -2 Im F'.
                        let dc = (e - 1.0) / a * s0;
                        d_cre[idx] = 2.0 * dc.re;
                        d_cim[idx] = -2.0 * dc.im;
                        let da = cc * (dt * e * a - (e - 1.0)) / (a * a) * s0 + w * dt * s1;
                        // dA/dlog_a_re = -exp(log_a_re) = Re A.
                        d_lar[idx] = 2.0 * (da * a.re).re;
                        d_aim[idx] = -2.0 * da.im;
                        let ddt = cc * e * s0 + w * a * s1;
                        d_log_dt[c] += 2.0 * ddt.re * dt;
                    }
                }
                vec![Some(d_log_dt), Some(d_lar), Some(d_aim), Some(d_cre), Some(d_cim)]
            }),
        )
    }

    /// Causal convolution `y[s, c, t] = sum_{j <= t} k[c, j] u[s, c, t - j]`
    /// of `u [n, h, l]` with per-channel kernels `k [h, l]`, via FFT.
    pub fn causal_conv(&mut self, u: Var, k: Var) -> Var {
        let (n, h, l) = dims3(self.shape(u));
        assert_eq!(self.shape(k), [h, l], "kernel shape");
        let conv = FftConv::new(l);
        let uv = &self.value(u).data;
        let kv = &self.value(k).data;
        let mut out = vec![0.0; n * h * l];
        for c in 0..h {
            let kf = conv.forward(&kv[c * l..(c + 1) * l]);
            for s in 0..n {
                let r = (s * h + c) * l..(s * h + c + 1) * l;
                let uf = conv.forward(&uv[r.clone()]);
                conv.inverse_product(&uf, &kf, false, &mut out[r]);
            }
        }
        self.push(
            Tensor::new(vec![n, h, l], out),
            &[u, k],
            Box::new(move |g, p, needs| {
                let conv = FftConv::new(l);
                let (uv, kv) = (&p[0].data, &p[1].data);
                let mut du = needs[0].then(|| vec![0.0; n * h * l]);
                let mut dk = needs[1].then(|| vec![0.0; h * l]);
                let mut tmp = vec![0.0; l];
                for c in 0..h {
                    let kf = conv.forward(&kv[c * l..(c + 1) * l]);
                    for s in 0..n {
                        let r = (s * h + c) * l..(s * h + c + 1) * l;
                        let gf = conv.forward(&g[r.clone()]);
                        if let Some(du) = du.as_mut() {
                            // du[t] = sum_{s >= t} g[s] k[s - t]
                            conv.inverse_product(&gf, &kf, true, &mut du[r.clone()]);
                        }
                        if let Some(dk) = dk.as_mut() {
                            let uf = conv.forward(&uv[r]);
                            conv.inverse_product(&gf, &uf, true, &mut tmp);
                            dk[c * l..(c + 1) * l].iter_mut().zip(&tmp).for_each(|(d, t)| *d += t);
                        }
                    }
                }
                vec![du, dk]
            }),
        )
    }
}

/// Precomputed per-mode quantities of a diagonal state-space layer.
struct S4dModes {
    dt: Vec<f64>,
    a: Vec<Complex64>,
    c: Vec<Complex64>,
    /// `exp(dt A)`.
    e: Vec<Complex64>,
    /// `C (exp(dt A) - 1) / A`.
    w: Vec<Complex64>,
}

impl S4dModes {
    fn new(log_dt: &[f64], log_a_re: &[f64], a_im: &[f64], c_re: &[f64], c_im: &[f64], h: usize, m: usize) -> Self {
        let dt: Vec<f64> = log_dt.iter().map(|v| v.exp()).collect();
        let mut a = Vec::with_capacity(h * m);
        let mut c = Vec::with_capacity(h * m);
        let mut e = Vec::with_capacity(h * m);
        let mut w = Vec::with_capacity(h * m);
        for ch in 0..h {
            for j in 0..m {
                let i = ch * m + j;
                let ai = Complex64::new(-log_a_re[i].exp(), a_im[i]);
                let ci = Complex64::new(c_re[i], c_im[i]);
                let ei = (ai * dt[ch]).exp();
                a.push(ai);
                c.push(ci);
                e.push(ei);
                w.push(ci * (ei - 1.0) / ai);
            }
        }
        Self { dt, a, c, e, w }
    }
}

/// Zero-padded FFT helper for linear convolution/correlation of length-`l`
/// signals.
struct FftConv {
    l: usize,
    size: usize,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl FftConv {
    fn new(l: usize) -> Self {
        let size = (2 * l).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            l,
            size,
            fwd: planner.plan_fft_forward(size),
            inv: planner.plan_fft_inverse(size),
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.size];
        for (b, v) in buf.iter_mut().zip(x) {
            b.re = *v;
        }
        self.fwd.process(&mut buf);
        buf
    }

    /// First `l` samples of `ifft(a * b)` (or `ifft(a * conj(b))` for correlation).
    fn inverse_product(&self, a: &[Complex64], b: &[Complex64], conj_b: bool, out: &mut [f64]) {
        let mut buf: Vec<Complex64> = a
            .iter()
            .zip(b)
            .map(|(x, y)| if conj_b { x * y.conj() } else { x * y })
            .collect();
        self.inv.process(&mut buf);
        let norm = 1.0 / self.size as f64;
        for (o, v) in out.iter_mut().zip(&buf[..self.l]) {
            *o = v.re * norm;
        }
    }
}

fn dims3(s: &[usize]) -> (usize, usize, usize) {
    assert_eq!(s.len(), 3, "expected a [batch, channels, length] tensor, got {s:?}");
    (s[0], s[1], s[2])
}

fn dims2(s: &[usize]) -> (usize, usize) {
    assert_eq!(s.len(), 2, "expected a [rows, cols] tensor, got {s:?}");
    (s[0], s[1])
}
