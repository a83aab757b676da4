//! Straight-line double-precision recomputation of the full objective from raw
//! weights. Nothing here calls into the library's tensor, network or loss
//! code; only parameter values are read from it.

use std::collections::HashMap;

pub type Weights = HashMap<String, Vec<f64>>;

const IN_EPS: f64 = 1e-5;
const P_EPS: f64 = 1e-7;

/// One `C x H x W` image.
#[derive(Clone, Debug)]
pub struct Img {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Img {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Img { c, h, w, v: vec![0.0; c * h * w] }
    }

    fn at(&self, c: usize, y: isize, x: isize) -> f64 {
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            0.0
        } else {
            self.v[(c * self.h + y as usize) * self.w + x as usize]
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Img {
        Img { v: self.v.iter().map(|&x| f(x)).collect(), ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Arch {
    pub channels: usize,
    pub nf: usize,
    pub blocks: usize,
    pub norm: bool,
    pub slope: f64,
}

fn conv(x: &Img, wt: &[f64], bias: &[f64], cout: usize, k: usize, stride: usize, pad: usize) -> Img {
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut out = Img::zeros(cout, oh, ow);
    for o in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bias[o];
                for i in 0..x.c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * stride + ky) as isize - pad as isize;
                            let xx = (ox * stride + kx) as isize - pad as isize;
                            s += wt[((o * x.c + i) * k + ky) * k + kx] * x.at(i, y, xx);
                        }
                    }
                }
                out.v[(o * oh + oy) * ow + ox] = s;
            }
        }
    }
    out
}

/// Transposed convolution, weight laid out `[in, out, k, k]`.
fn conv_t(x: &Img, wt: &[f64], bias: &[f64], cout: usize, k: usize, stride: usize, pad: usize) -> Img {
    let oh = (x.h - 1) * stride + k - 2 * pad;
    let ow = (x.w - 1) * stride + k - 2 * pad;
    let mut out = Img::zeros(cout, oh, ow);
    for o in 0..cout {
        for p in 0..oh * ow {
            out.v[o * oh * ow + p] = bias[o];
        }
    }
    for i in 0..x.c {
        for y in 0..x.h {
            for xx in 0..x.w {
                let v = x.v[(i * x.h + y) * x.w + xx];
                for o in 0..cout {
                    for ky in 0..k {
                        for kx in 0..k {
                            let ty = (y * stride + ky) as isize - pad as isize;
                            let tx = (xx * stride + kx) as isize - pad as isize;
                            if ty >= 0 && tx >= 0 && (ty as usize) < oh && (tx as usize) < ow {
                                out.v[(o * oh + ty as usize) * ow + tx as usize] +=
                                    v * wt[((i * cout + o) * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn inorm(x: &Img) -> Img {
    let m = x.h * x.w;
    let mut out = x.clone();
    for c in 0..x.c {
        let plane = &x.v[c * m..(c + 1) * m];
        let mean = plane.iter().sum::<f64>() / m as f64;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
        for i in 0..m {
            out.v[c * m + i] = (plane[i] - mean) / (var + IN_EPS).sqrt();
        }
    }
    out
}

fn relu(x: &Img) -> Img {
    x.map(|v| v.max(0.0))
}

fn maybe_norm(x: Img, on: bool) -> Img {
    if on {
        inorm(&x)
    } else {
        x
    }
}

fn w<'a>(p: &'a Weights, name: &str) -> &'a [f64] {
    p.get(name).unwrap_or_else(|| panic!("missing weight {name}"))
}

pub fn generator(p: &Weights, arch: &Arch, x: &Img) -> Img {
    let (c, nf) = (arch.channels, arch.nf);
    let mut h = conv(x, w(p, "enc1.weight"), w(p, "enc1.bias"), nf, 3, 2, 1);
    h = relu(&maybe_norm(h, arch.norm));
    h = conv(&h, w(p, "enc2.weight"), w(p, "enc2.bias"), 2 * nf, 3, 2, 1);
    h = relu(&maybe_norm(h, arch.norm));
    for i in 0..arch.blocks {
        let n1 = format!("res{i}.conv1");
        let n2 = format!("res{i}.conv2");
        let mut r = conv(&h, w(p, &format!("{n1}.weight")), w(p, &format!("{n1}.bias")), 2 * nf, 3, 1, 1);
        r = relu(&maybe_norm(r, arch.norm));
        r = conv(&r, w(p, &format!("{n2}.weight")), w(p, &format!("{n2}.bias")), 2 * nf, 3, 1, 1);
        r = maybe_norm(r, arch.norm);
        for (hv, rv) in h.v.iter_mut().zip(&r.v) {
            *hv += rv;
        }
    }
    h = conv_t(&h, w(p, "dec1.weight"), w(p, "dec1.bias"), nf, 4, 2, 1);
    h = relu(&maybe_norm(h, arch.norm));
    h = conv_t(&h, w(p, "dec2.weight"), w(p, "dec2.bias"), c, 4, 2, 1);
    h.map(f64::tanh)
}

pub fn discriminator(p: &Weights, arch: &Arch, x: &Img) -> Img {
    let nf = arch.nf;
    let leaky = |v: f64| if v > 0.0 { v } else { arch.slope * v };
    let mut h = conv(x, w(p, "down1.weight"), w(p, "down1.bias"), nf, 3, 2, 1).map(leaky);
    h = conv(&h, w(p, "down2.weight"), w(p, "down2.bias"), 2 * nf, 3, 2, 1);
    h = maybe_norm(h, arch.norm).map(leaky);
    h = conv(&h, w(p, "down3.weight"), w(p, "down3.bias"), 4 * nf, 3, 2, 1);
    h = maybe_norm(h, arch.norm).map(leaky);
    h = conv(&h, w(p, "patch.weight"), w(p, "patch.bias"), 1, 3, 1, 1);
    h.map(|v| 1.0 / (1.0 + (-v).exp()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Norm {
    L1,
    L2,
}

fn norm(x: &[Img], y: &[Img], kind: Norm) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (a, b) in x.iter().zip(y) {
        for (u, v) in a.v.iter().zip(&b.v) {
            let d = u - v;
            s += match kind {
                Norm::L1 => d.abs(),
                Norm::L2 => d * d,
            };
            n += 1;
        }
    }
    s / n as f64
}

fn mean_log(ps: &[Img], f: impl Fn(f64) -> f64) -> f64 {
    let vals: Vec<f64> = ps.iter().flat_map(|p| p.v.iter().map(|&v| f(v.clamp(P_EPS, 1.0 - P_EPS)).ln())).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

pub struct Nets {
    pub g_ab: Weights,
    pub g_ba: Weights,
    pub g_ab_prime: Weights,
    pub g_ba_prime: Weights,
    pub d_a: Weights,
    pub d_b: Weights,
}

pub struct Setup {
    pub arch: Arch,
    pub lambda: [f64; 4],
    pub norms: [Norm; 3],
    pub minimax: bool,
}

/// All twelve report values in report order: adv_d_a, adv_d_b, adv_g_ab,
/// adv_g_ba, tl_a, tl_b, rel1_b, rel1_a, rel2_b, rel2_a, total_g, total_d.
pub fn objective(nets: &Nets, s: &Setup, a: &[Img], b: &[Img]) -> [f64; 12] {
    let gen = |p: &Weights, xs: &[Img]| -> Vec<Img> { xs.iter().map(|x| generator(p, &s.arch, x)).collect() };
    let disc = |p: &Weights, xs: &[Img]| -> Vec<Img> { xs.iter().map(|x| discriminator(p, &s.arch, x)).collect() };
    let fake_b = gen(&nets.g_ab, a);
    let fake_a = gen(&nets.g_ba, b);
    let rec_a = gen(&nets.g_ba_prime, &fake_b);
    let rec_b = gen(&nets.g_ab_prime, &fake_a);

    let d_loss = |p: &Weights, real: &[Img], fake: &[Img]| {
        -(mean_log(&disc(p, real), |v| v) + mean_log(&disc(p, fake), |v| 1.0 - v))
    };
    let g_loss = |p: &Weights, fake: &[Img]| {
        if s.minimax {
            mean_log(&disc(p, fake), |v| 1.0 - v)
        } else {
            -mean_log(&disc(p, fake), |v| v)
        }
    };
    let adv_d_a = d_loss(&nets.d_a, a, &fake_a);
    let adv_d_b = d_loss(&nets.d_b, b, &fake_b);
    let adv_g_ab = g_loss(&nets.d_b, &fake_b);
    let adv_g_ba = g_loss(&nets.d_a, &fake_a);
    let tl_a = norm(a, &rec_a, s.norms[0]);
    let tl_b = norm(b, &rec_b, s.norms[0]);
    let rel1_b = norm(b, &fake_b, s.norms[1]);
    let rel1_a = norm(a, &fake_a, s.norms[1]);
    let rel2_b = norm(&rec_b, &fake_b, s.norms[2]);
    let rel2_a = norm(&rec_a, &fake_a, s.norms[2]);
    let [l_adv, l_tl, l_r1, l_r2] = s.lambda;
    let total_g = l_adv * (adv_g_ab + adv_g_ba) + l_tl * (tl_a + tl_b) + l_r1 * (rel1_b + rel1_a) + l_r2 * (rel2_b + rel2_a);
    [
        adv_d_a,
        adv_d_b,
        adv_g_ab,
        adv_g_ba,
        tl_a,
        tl_b,
        rel1_b,
        rel1_a,
        rel2_b,
        rel2_a,
        total_g,
        adv_d_a + adv_d_b,
    ]
}

/// Hand-sized cases for the two convolution kernels.
pub fn self_check() -> bool {
    let x = Img { c: 1, h: 2, w: 2, v: vec![1.0, 2.0, 3.0, 4.0] };
    let y = conv(&x, &[1.0; 9], &[0.5], 1, 3, 1, 1);
    let t = conv_t(&Img { c: 1, h: 1, w: 1, v: vec![2.0] }, &[1.0, 2.0, 3.0, 4.0], &[0.0], 1, 2, 2, 0);
    y.v == vec![10.5; 4] && t.v == vec![2.0, 4.0, 6.0, 8.0]
}
