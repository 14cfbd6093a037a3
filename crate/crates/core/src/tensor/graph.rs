use super::kernels;
use super::{Float, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        pad: usize,
    },
    AvgPool2(usize),
    UpNearest2(usize),
    PixelShuffle {
        x: usize,
        r: usize,
    },
    LeakyRelu {
        x: usize,
        slope: f64,
    },
    Sigmoid(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Concat(usize, usize),
    Affine {
        x: usize,
        scale: f64,
    },
    MulScalar {
        x: usize,
        s: usize,
    },
    ChannelScale {
        x: usize,
        att: usize,
    },
    GlobalAvgPool(usize),
    Sum(usize),
    L1Mean(usize, usize),
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op,
    grad: Option<Tensor<T>>,
}

/// Records tensor operations for one forward pass and replays them in
/// reverse to compute gradients.
///
/// A graph supports exactly one [`backward`](Graph::backward) call: the tape
/// is cleared afterwards and the leaf gradients stay readable. Operations
/// whose inputs are all constants are evaluated but not taped.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Graph::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v` that gradients do not flow through.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, for leaves that require it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of operations currently recorded on the tape.
    pub fn taped_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    fn push(&mut self, shape: Shape, data: Vec<T>, inputs: &[usize], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let value = Tensor::new(shape, data).expect("kernel produced a mismatched buffer");
        self.nodes.push(Node {
            value,
            requires_grad,
            op: if requires_grad { op } else { Op::Leaf },
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(format!("{op}: shapes {sa} and {sb} differ")));
        }
        Ok(sa)
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    /// 2-D convolution with weight `(c_out, c_in, k, k)` and optional bias
    /// `(1, c_out, 1, 1)`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let ys = kernels::conv_out_shape(xs, ws, stride, pad)?;
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs.numel() != ws.n {
                return Err(Error::dim(format!(
                    "conv2d: bias {bs} does not match {} output channels",
                    ws.n
                )));
            }
        }
        let data = kernels::conv2d_forward(
            self.value(x).data(),
            xs,
            self.value(w).data(),
            ws,
            b.map(|b| self.value(b).data()),
            stride,
            pad,
            ys,
        );
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        Ok(self.push(
            ys,
            data,
            &inputs,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                stride,
                pad,
            },
        ))
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if !xs.h.is_multiple_of(2) || !xs.w.is_multiple_of(2) {
            return Err(Error::dim(format!("avg_pool2: odd spatial extent in {xs}")));
        }
        let data = kernels::avg_pool2(self.value(x).data(), xs);
        Ok(self.push(
            xs.with_hw(xs.h / 2, xs.w / 2),
            data,
            &[x.0],
            Op::AvgPool2(x.0),
        ))
    }

    /// Nearest-neighbour up-sampling by 2.
    pub fn up_nearest2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let data = kernels::up_nearest2(self.value(x).data(), xs);
        Ok(self.push(
            xs.with_hw(xs.h * 2, xs.w * 2),
            data,
            &[x.0],
            Op::UpNearest2(x.0),
        ))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let xs = self.shape(x);
        if r == 0 || !xs.c.is_multiple_of(r * r) {
            return Err(Error::dim(format!(
                "pixel_shuffle: {} channels not divisible by {}",
                xs.c,
                r * r
            )));
        }
        let data = kernels::pixel_shuffle(self.value(x).data(), xs, r);
        let ys = Shape::new(xs.n, xs.c / (r * r), xs.h * r, xs.w * r);
        Ok(self.push(ys, data, &[x.0], Op::PixelShuffle { x: x.0, r }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { v * s })
            .collect();
        self.push(self.shape(x), data, &[x.0], Op::LeakyRelu { x: x.0, slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        self.push(self.shape(x), data, &[x.0], Op::Sigmoid(x.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("add", a, b)?;
        let data = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(s, data, &[a.0, b.0], Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("sub", a, b)?;
        let data = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(s, data, &[a.0, b.0], Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("mul", a, b)?;
        let data = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(s, data, &[a.0, b.0], Op::Mul(a.0, b.0)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("div", a, b)?;
        let data = self.zip_map(a, b, |x, y| x / y);
        Ok(self.push(s, data, &[a.0, b.0], Op::Div(a.0, b.0)))
    }

    /// Channel concatenation `[a, b]`; all other extents must agree.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(Error::dim(format!(
                "concat_channels: shapes {sa} and {sb} differ outside channels"
            )));
        }
        let data = kernels::concat_channels(self.value(a).data(), sa, self.value(b).data(), sb);
        Ok(self.push(
            sa.with_c(sa.c + sb.c),
            data,
            &[a.0, b.0],
            Op::Concat(a.0, b.0),
        ))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    /// `x * scale + shift` elementwise with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (a, c) = (T::lit(scale), T::lit(shift));
        let data = self.value(x).data().iter().map(|&v| v * a + c).collect();
        self.push(self.shape(x), data, &[x.0], Op::Affine { x: x.0, scale })
    }

    /// Multiplies every element of `x` by the one-element tensor `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.shape(s).numel() != 1 {
            return Err(Error::dim(format!(
                "mul_scalar: factor has shape {}",
                self.shape(s)
            )));
        }
        let k = self.value(s).item();
        let data = self.value(x).data().iter().map(|&v| v * k).collect();
        Ok(self.push(
            self.shape(x),
            data,
            &[x.0, s.0],
            Op::MulScalar { x: x.0, s: s.0 },
        ))
    }

    /// Scales each `(n, c)` plane of `x` by `att[n, c, 0, 0]`.
    pub fn channel_scale(&mut self, x: Var, att: Var) -> Result<Var> {
        let (xs, as_) = (self.shape(x), self.shape(att));
        if as_ != Shape::new(xs.n, xs.c, 1, 1) {
            return Err(Error::dim(format!(
                "channel_scale: attention {as_} does not fit {xs}"
            )));
        }
        let a = self.value(att).data();
        let data = self
            .value(x)
            .data()
            .chunks(xs.plane())
            .zip(a)
            .flat_map(|(plane, &k)| plane.iter().map(move |&v| v * k))
            .collect();
        Ok(self.push(
            xs,
            data,
            &[x.0, att.0],
            Op::ChannelScale { x: x.0, att: att.0 },
        ))
    }

    /// Mean over each spatial plane: `(n, c, h, w)` to `(n, c, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let inv = T::lit(1.0 / xs.plane() as f64);
        let data = self
            .value(x)
            .data()
            .chunks(xs.plane())
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        self.push(xs.with_hw(1, 1), data, &[x.0], Op::GlobalAvgPool(x.0))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<T>();
        self.push(Shape::scalar(), vec![total], &[x.0], Op::Sum(x.0))
    }

    /// Mean absolute difference; the subgradient at ties is 0.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1_mean", a, b)?;
        let n = self.value(a).numel();
        let total = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y).abs())
            .sum::<T>();
        let mean = total / T::lit(n as f64);
        Ok(self.push(
            Shape::scalar(),
            vec![mean],
            &[a.0, b.0],
            Op::L1Mean(a.0, b.0),
        ))
    }

    /// Reverse-mode sweep from a one-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::contract(
                "backward called twice; record a fresh forward pass first",
            ));
        }
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {ls}"
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::contract(
                "loss does not depend on any tensor that requires a gradient",
            ));
        }

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {
                    if self.nodes[i].requires_grad {
                        let shape = self.nodes[i].value.shape();
                        self.nodes[i].grad = Some(Tensor::new(shape, g)?);
                    }
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let ys = self.nodes[i].value.shape();
                    let (xs, ws) = (self.nodes[x].value.shape(), self.nodes[w].value.shape());
                    if self.nodes[x].requires_grad {
                        let dx = kernels::conv2d_backward_input(
                            &g,
                            ys,
                            self.nodes[w].value.data(),
                            ws,
                            xs,
                            stride,
                            pad,
                        );
                        accumulate(&mut grads, x, dx);
                    }
                    let need_b = b.is_some_and(|b| self.nodes[b].requires_grad);
                    if self.nodes[w].requires_grad || need_b {
                        let (dw, db) = kernels::conv2d_backward_params(
                            &g,
                            ys,
                            self.nodes[x].value.data(),
                            xs,
                            ws,
                            stride,
                            pad,
                        );
                        if self.nodes[w].requires_grad {
                            accumulate(&mut grads, w, dw);
                        }
                        if let (Some(b), true) = (b, need_b) {
                            accumulate(&mut grads, b, db);
                        }
                    }
                }
                Op::AvgPool2(x) => {
                    let dx = kernels::avg_pool2_backward(&g, self.nodes[x].value.shape());
                    accumulate(&mut grads, x, dx);
                }
                Op::UpNearest2(x) => {
                    let dx = kernels::up_nearest2_backward(&g, self.nodes[x].value.shape());
                    accumulate(&mut grads, x, dx);
                }
                Op::PixelShuffle { x, r } => {
                    let dx = kernels::pixel_unshuffle(&g, self.nodes[x].value.shape(), r);
                    accumulate(&mut grads, x, dx);
                }
                Op::LeakyRelu { x, slope } => {
                    let s = T::lit(slope);
                    let dx = g
                        .iter()
                        .zip(self.nodes[x].value.data())
                        .map(|(&gv, &xv)| if xv > T::zero() { gv } else { gv * s })
                        .collect();
                    accumulate(&mut grads, x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = g
                        .iter()
                        .zip(self.nodes[i].value.data())
                        .map(|(&gv, &y)| gv * y * (T::one() - y))
                        .collect();
                    accumulate(&mut grads, x, dx);
                }
                Op::Add(a, b) => {
                    self.route(&mut grads, b, || g.clone());
                    self.route(&mut grads, a, || g);
                }
                Op::Sub(a, b) => {
                    self.route(&mut grads, b, || g.iter().map(|&v| -v).collect());
                    self.route(&mut grads, a, || g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                    let da: Vec<T> = g.iter().zip(vb).map(|(&gv, &y)| gv * y).collect();
                    let db: Vec<T> = g.iter().zip(va).map(|(&gv, &x)| gv * x).collect();
                    self.route(&mut grads, a, || da);
                    self.route(&mut grads, b, || db);
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                    let da: Vec<T> = g.iter().zip(vb).map(|(&gv, &y)| gv / y).collect();
                    let db: Vec<T> = g
                        .iter()
                        .zip(va.iter().zip(vb))
                        .map(|(&gv, (&x, &y))| -gv * x / (y * y))
                        .collect();
                    self.route(&mut grads, a, || da);
                    self.route(&mut grads, b, || db);
                }
                Op::Concat(a, b) => {
                    let (da, db) = kernels::split_channels(
                        &g,
                        self.nodes[a].value.shape(),
                        self.nodes[b].value.shape(),
                    );
                    self.route(&mut grads, a, || da);
                    self.route(&mut grads, b, || db);
                }
                Op::Affine { x, scale } => {
                    let s = T::lit(scale);
                    accumulate(&mut grads, x, g.iter().map(|&v| v * s).collect());
                }
                Op::MulScalar { x, s } => {
                    let k = self.nodes[s].value.item();
                    let ds: T = g
                        .iter()
                        .zip(self.nodes[x].value.data())
                        .map(|(&gv, &xv)| gv * xv)
                        .sum();
                    self.route(&mut grads, s, || vec![ds]);
                    self.route(&mut grads, x, || g.iter().map(|&v| v * k).collect());
                }
                Op::ChannelScale { x, att } => {
                    let plane = self.nodes[x].value.shape().plane();
                    let a = self.nodes[att].value.data();
                    let xv = self.nodes[x].value.data();
                    let datt: Vec<T> = g
                        .chunks(plane)
                        .zip(xv.chunks(plane))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(&u, &v)| u * v).sum())
                        .collect();
                    let dx: Vec<T> = g
                        .chunks(plane)
                        .zip(a)
                        .flat_map(|(gp, &k)| gp.iter().map(move |&u| u * k))
                        .collect();
                    self.route(&mut grads, att, || datt);
                    self.route(&mut grads, x, || dx);
                }
                Op::GlobalAvgPool(x) => {
                    let plane = self.nodes[x].value.shape().plane();
                    let inv = T::lit(1.0 / plane as f64);
                    let dx = g
                        .iter()
                        .flat_map(|&gv| std::iter::repeat_n(gv * inv, plane))
                        .collect();
                    accumulate(&mut grads, x, dx);
                }
                Op::Sum(x) => {
                    let n = self.nodes[x].value.numel();
                    accumulate(&mut grads, x, vec![g[0]; n]);
                }
                Op::L1Mean(a, b) => {
                    let n = self.nodes[a].value.numel();
                    let k = g[0] / T::lit(n as f64);
                    let da: Vec<T> = self.nodes[a]
                        .value
                        .data()
                        .iter()
                        .zip(self.nodes[b].value.data())
                        .map(|(&x, &y)| {
                            if x > y {
                                k
                            } else if x < y {
                                -k
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    self.route(&mut grads, b, || da.iter().map(|&v| -v).collect());
                    self.route(&mut grads, a, || da);
                }
            }
        }

        for node in &mut self.nodes {
            node.op = Op::Leaf;
        }
        self.consumed = true;
        Ok(())
    }

    fn route(&self, grads: &mut [Option<Vec<T>>], target: usize, g: impl FnOnce() -> Vec<T>) {
        if self.nodes[target].requires_grad {
            accumulate(grads, target, g());
        }
    }
}

fn accumulate<T: Float>(grads: &mut [Option<Vec<T>>], idx: usize, g: Vec<T>) {
    match &mut grads[idx] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub(crate) fn sigmoid<T: Float>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
