use serde::{Deserialize, Serialize};

use super::tensor::numel;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Scalar reductions used as the norm of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    MeanAbs,
    MeanSquare,
    Mean,
    LogMean,
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// For each flat index of `out`, the flat index of the broadcast operand.
fn broadcast_map(out: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - src.len();
    let mut src_strides = vec![0usize; rank];
    let mut stride = 1;
    for i in (0..src.len()).rev() {
        src_strides[i + offset] = if src[i] == 1 { 0 } else { stride };
        stride *= src[i];
    }
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn apply<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        }
    }

    /// (d out / d x, d out / d y)
    fn partials<T: Scalar>(self, x: T, y: T) -> (T, T) {
        match self {
            Binary::Add => (T::one(), T::one()),
            Binary::Sub => (T::one(), -T::one()),
            Binary::Mul => (y, x),
            Binary::Div => (T::one() / y, -x / (y * y)),
        }
    }
}

fn binary<T: Scalar>(kind: Binary, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let op = kind.name();
    if a.shape() == b.shape() {
        let data: Vec<T> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| kind.apply(x, y))
            .collect();
        let (ac, bc) = (a.clone(), b.clone());
        return Ok(Tensor::from_op(
            op,
            a.shape().to_vec(),
            data,
            vec![a.clone(), b.clone()],
            Box::new(move |g, needs| {
                let (x, y) = (ac.data(), bc.data());
                let ga = needs[0].then(|| match kind {
                    Binary::Add | Binary::Sub => g.to_vec(),
                    _ => (0..g.len())
                        .map(|i| g[i] * kind.partials(x[i], y[i]).0)
                        .collect(),
                });
                let gb = needs[1].then(|| match kind {
                    Binary::Add => g.to_vec(),
                    Binary::Sub => g.iter().map(|&v| -v).collect(),
                    _ => (0..g.len())
                        .map(|i| g[i] * kind.partials(x[i], y[i]).1)
                        .collect(),
                });
                vec![ga, gb]
            }),
        ));
    }

    let out_shape = broadcast_shape(op, a.shape(), b.shape())?;
    let map_a = broadcast_map(&out_shape, a.shape());
    let map_b = broadcast_map(&out_shape, b.shape());
    let data: Vec<T> = map_a
        .iter()
        .zip(&map_b)
        .map(|(&i, &j)| kind.apply(a.data()[i], b.data()[j]))
        .collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        op,
        out_shape,
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g, needs| {
            let (x, y) = (ac.data(), bc.data());
            let mut ga = needs[0].then(|| vec![T::zero(); x.len()]);
            let mut gb = needs[1].then(|| vec![T::zero(); y.len()]);
            for (k, (&i, &j)) in map_a.iter().zip(&map_b).enumerate() {
                let (px, py) = kind.partials(x[i], y[j]);
                if let Some(ga) = ga.as_mut() {
                    ga[i] += g[k] * px;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[j] += g[k] * py;
                }
            }
            vec![ga, gb]
        }),
    ))
}

fn unary<T: Scalar>(
    op: &'static str,
    x: &Tensor<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + Send + Sync + 'static,
) -> Tensor<T> {
    let data: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    let xc = x.clone();
    let out = data.clone();
    Tensor::from_op(
        op,
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |g, _| {
            let xs = xc.data();
            vec![Some(
                (0..g.len()).map(|i| g[i] * df(xs[i], out[i])).collect(),
            )]
        }),
    )
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(Binary::Div, self, other)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        unary("add_scalar", self, |v| v + c, |_, _| T::one())
    }

    pub fn mul_scalar(&self, c: T) -> Tensor<T> {
        unary("mul_scalar", self, |v| v * c, move |_, _| c)
    }

    pub fn neg(&self) -> Tensor<T> {
        unary("neg", self, |v| -v, |_, _| -T::one())
    }

    pub fn abs(&self) -> Tensor<T> {
        unary("abs", self, |v| v.abs(), |x, _| sign(x))
    }

    pub fn square(&self) -> Tensor<T> {
        let two = T::one() + T::one();
        unary("square", self, |v| v * v, move |x, _| two * x)
    }

    pub fn ln(&self) -> Tensor<T> {
        unary("ln", self, |v| v.ln(), |x, _| T::one() / x)
    }

    pub fn exp(&self) -> Tensor<T> {
        unary("exp", self, |v| v.exp(), |_, y| y)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        unary(
            "clamp",
            self,
            |v| v.max(lo).min(hi),
            move |x, _| {
                if x < lo || x > hi {
                    T::zero()
                } else {
                    T::one()
                }
            },
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        unary(
            "relu",
            self,
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        unary(
            "leaky_relu",
            self,
            |v| if v > T::zero() { v } else { v * slope },
            move |x, _| if x > T::zero() { T::one() } else { slope },
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        unary("tanh", self, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(
            "sigmoid",
            self,
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    /// Element-wise map with a caller-supplied derivative. The derivative is
    /// trusted as given, which makes this the hook for harness self-tests
    /// that need a deliberately wrong adjoint.
    pub fn map_with_derivative(
        &self,
        f: impl Fn(T) -> T,
        df: impl Fn(T) -> T + Send + Sync + 'static,
    ) -> Tensor<T> {
        unary("custom", self, f, move |x, _| df(x))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Concatenate along the leading (batch) axis.
    pub fn cat_batch(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts.first().ok_or(Error::EmptyTensor { op: "cat_batch" })?;
        let tail = &first.shape()[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.ndim() == 0 || &p.shape()[1..] != tail {
                return Err(Error::ShapeMismatch {
                    op: "cat_batch",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            lead += p.shape()[0];
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        let sizes: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
        Ok(Tensor::from_op(
            "cat_batch",
            shape,
            data,
            parts.to_vec(),
            Box::new(move |g, needs| {
                let mut offset = 0;
                sizes
                    .iter()
                    .zip(needs)
                    .map(|(&n, &need)| {
                        let part = need.then(|| g[offset..offset + n].to_vec());
                        offset += n;
                        part
                    })
                    .collect()
            }),
        ))
    }

    pub fn sum(&self) -> Tensor<T> {
        let total: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![],
            vec![total],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        self.reduce(Reduction::Mean)
    }

    /// Reduce to a scalar. `MeanAbs` is the default norm of every
    /// reconstruction-style loss term.
    pub fn reduce(&self, kind: Reduction) -> Result<Tensor<T>> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::EmptyTensor { op: "reduce" });
        }
        let inv_n = T::one() / T::from_usize(n).expect("count fits in float");
        let xs = self.data();
        let value = match kind {
            Reduction::Mean => xs.iter().copied().sum::<T>() * inv_n,
            Reduction::MeanAbs => xs.iter().map(|v| v.abs()).sum::<T>() * inv_n,
            Reduction::MeanSquare => xs.iter().map(|&v| v * v).sum::<T>() * inv_n,
            Reduction::LogMean => xs.iter().map(|v| v.ln()).sum::<T>() * inv_n,
        };
        let xc = self.clone();
        let op = match kind {
            Reduction::Mean => "mean",
            Reduction::MeanAbs => "mean_abs",
            Reduction::MeanSquare => "mean_square",
            Reduction::LogMean => "log_mean",
        };
        Ok(Tensor::from_op(
            op,
            vec![],
            vec![value],
            vec![self.clone()],
            Box::new(move |g, _| {
                let scale = g[0] * inv_n;
                let two = T::one() + T::one();
                let xs = xc.data();
                let grad = match kind {
                    Reduction::Mean => vec![scale; xs.len()],
                    Reduction::MeanAbs => xs.iter().map(|&v| scale * sign(v)).collect(),
                    Reduction::MeanSquare => xs.iter().map(|&v| scale * two * v).collect(),
                    Reduction::LogMean => xs.iter().map(|&v| scale / v).collect(),
                };
                vec![Some(grad)]
            }),
        ))
    }

    /// 2-D matrix product `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.data(),
            k as isize,
            1,
            other.data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let (ac, bc) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "matmul",
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                // dA = G B^T, dB = A^T G
                let ga = needs[0].then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        n as isize,
                        1,
                        bc.data(),
                        1,
                        n as isize,
                        T::zero(),
                        &mut ga,
                        k as isize,
                        1,
                    );
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        ac.data(),
                        1,
                        k as isize,
                        g,
                        n as isize,
                        1,
                        T::zero(),
                        &mut gb,
                        n as isize,
                        1,
                    );
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }
}
