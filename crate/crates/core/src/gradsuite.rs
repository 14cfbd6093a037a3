//! Finite-difference checks of every differentiable primitive, each block,
//! and the full training objective on a toy network.
//!
//! Primitives are differenced at the precision under test. In single
//! precision the composite graphs are differenced in double precision on the
//! same inputs, since f32 cancellation noise and activation kinks swamp a
//! 1e-3 tolerance there.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Downsample, Rcab, Upsample};
use crate::error::Result;
use crate::freq::{Bands, Fsm, OctConv};
use crate::losses::{loss_total, LossWeights};
use crate::network::{Msfs, NetworkConfig};
use crate::params::{Bindings, ParamSpec, ParamStore};
use crate::tensor::{
    grad_check, grad_check_f64_oracle, grad_check_projected, Float, GradCheckOptions,
    GradCheckReport, GradLeaf, Graph, Objective, Shape, Tensor, Var,
};

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub precision: &'static str,
    pub checks: Vec<CheckOutcome>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.report.passed())
    }

    pub fn max_rel_error(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.report.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.report.passed())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prim {
    Conv { stride: usize, pad: usize },
    AvgPool,
    UpNearest,
    PixelShuffle,
    LeakyRelu,
    Sigmoid,
    Add,
    Sub,
    Mul,
    Div,
    Concat,
    Affine,
    MulScalar,
    ChannelScale,
    GlobalAvgPool,
    Sum,
    L1Mean,
}

pub const PRIMITIVES: [Prim; 18] = [
    Prim::Conv { stride: 1, pad: 1 },
    Prim::Conv { stride: 2, pad: 1 },
    Prim::AvgPool,
    Prim::UpNearest,
    Prim::PixelShuffle,
    Prim::LeakyRelu,
    Prim::Sigmoid,
    Prim::Add,
    Prim::Sub,
    Prim::Mul,
    Prim::Div,
    Prim::Concat,
    Prim::Affine,
    Prim::MulScalar,
    Prim::ChannelScale,
    Prim::GlobalAvgPool,
    Prim::Sum,
    Prim::L1Mean,
];

impl Prim {
    pub fn name(self) -> String {
        match self {
            Prim::Conv { stride, pad } => format!("conv2d(stride={stride}, pad={pad})"),
            other => format!("{other:?}").to_lowercase(),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    let data: Vec<f64> = (0..shape.numel())
        .map(|_| rng.random_range(lo..hi))
        .collect();
    Tensor::from_f64(shape, &data).expect("shape")
}

/// Magnitudes in `[min, 1]` with random sign, clear of kinks at zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Shape, min: f64) -> Tensor<f64> {
    let data: Vec<f64> = (0..shape.numel())
        .map(|_| {
            let m = rng.random_range(min..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_f64(shape, &data).expect("shape")
}

/// `sum(y * r)` for a fixed random `r`, so every output element carries a
/// distinct weight.
fn project<T: Float>(g: &mut Graph<T>, y: Var, r: Var) -> Result<Var> {
    let yr = g.mul(y, r)?;
    Ok(g.sum(yr))
}

struct PrimCase {
    prim: Prim,
}

impl PrimCase {
    /// Inputs as f64; a trailing frozen `r` holds the projection weights.
    fn leaves(&self, rng: &mut ChaCha8Rng) -> Vec<(&'static str, Tensor<f64>, bool)> {
        let s = Shape::new(2, 3, 4, 4);
        let proj = |rng: &mut ChaCha8Rng, shape| ("r", uniform(rng, shape, -1.0, 1.0), false);
        match self.prim {
            Prim::Conv { stride, pad } => {
                let x = uniform(rng, Shape::new(2, 3, 5, 6), -1.0, 1.0);
                let w = uniform(rng, Shape::new(4, 3, 3, 3), -0.5, 0.5);
                let b = uniform(rng, Shape::new(1, 4, 1, 1), -0.5, 0.5);
                let out = crate::tensor::conv2d_value(&x, &w, Some(&b), stride, pad)
                    .expect("conv shape")
                    .shape();
                vec![
                    ("x", x, true),
                    ("w", w, true),
                    ("b", b, true),
                    proj(rng, out),
                ]
            }
            Prim::AvgPool => vec![
                ("x", uniform(rng, Shape::new(1, 2, 4, 6), -1.0, 1.0), true),
                proj(rng, Shape::new(1, 2, 2, 3)),
            ],
            Prim::UpNearest => vec![
                ("x", uniform(rng, Shape::new(1, 2, 3, 3), -1.0, 1.0), true),
                proj(rng, Shape::new(1, 2, 6, 6)),
            ],
            Prim::PixelShuffle => vec![
                ("x", uniform(rng, Shape::new(1, 8, 3, 3), -1.0, 1.0), true),
                proj(rng, Shape::new(1, 2, 6, 6)),
            ],
            Prim::LeakyRelu => vec![("x", away_from_zero(rng, s, 0.1), true), proj(rng, s)],
            Prim::Sum => vec![("x", uniform(rng, s, -2.0, 2.0), true)],
            Prim::Sigmoid | Prim::GlobalAvgPool => {
                let out = if self.prim == Prim::GlobalAvgPool {
                    s.with_hw(1, 1)
                } else {
                    s
                };
                vec![("x", uniform(rng, s, -2.0, 2.0), true), proj(rng, out)]
            }
            Prim::Add | Prim::Sub | Prim::Mul => vec![
                ("a", uniform(rng, s, -1.0, 1.0), true),
                ("b", uniform(rng, s, -1.0, 1.0), true),
                proj(rng, s),
            ],
            Prim::Div => {
                let b = away_from_zero(rng, s, 0.5).map(|v| v + v.signum() * 0.5);
                vec![
                    ("a", uniform(rng, s, -1.0, 1.0), true),
                    ("b", b, true),
                    proj(rng, s),
                ]
            }
            Prim::Concat => vec![
                ("a", uniform(rng, s, -1.0, 1.0), true),
                ("b", uniform(rng, s.with_c(2), -1.0, 1.0), true),
                proj(rng, s.with_c(5)),
            ],
            Prim::Affine => vec![("x", uniform(rng, s, -1.0, 1.0), true), proj(rng, s)],
            Prim::MulScalar => vec![
                ("x", uniform(rng, s, -1.0, 1.0), true),
                ("s", uniform(rng, Shape::new(1, 1, 1, 1), 0.5, 1.5), true),
                proj(rng, s),
            ],
            Prim::ChannelScale => vec![
                ("x", uniform(rng, s, -1.0, 1.0), true),
                ("att", uniform(rng, s.with_hw(1, 1), 0.1, 0.9), true),
                proj(rng, s),
            ],
            Prim::L1Mean => {
                let a = uniform(rng, s, -1.0, 1.0);
                let d = away_from_zero(rng, s, 0.1);
                let b = Tensor::from_f64(
                    s,
                    &a.data()
                        .iter()
                        .zip(d.data())
                        .map(|(x, y)| x + y)
                        .collect::<Vec<_>>(),
                )
                .expect("shape");
                vec![("a", a, true), ("b", b, true)]
            }
        }
    }

    fn output<T: Float>(&self, g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
        Ok(match self.prim {
            Prim::Conv { stride, pad } => g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?,
            Prim::AvgPool => g.avg_pool2(v[0])?,
            Prim::UpNearest => g.up_nearest2(v[0])?,
            Prim::PixelShuffle => g.pixel_shuffle(v[0], 2)?,
            Prim::LeakyRelu => g.leaky_relu(v[0], 0.2),
            Prim::Sigmoid => g.sigmoid(v[0]),
            Prim::Add => g.add(v[0], v[1])?,
            Prim::Sub => g.sub(v[0], v[1])?,
            Prim::Mul => g.mul(v[0], v[1])?,
            Prim::Div => g.div(v[0], v[1])?,
            Prim::Concat => g.concat_channels(v[0], v[1])?,
            Prim::Affine => g.affine(v[0], 1.7, 0.3),
            Prim::MulScalar => g.mul_scalar(v[0], v[1])?,
            Prim::ChannelScale => g.channel_scale(v[0], v[1])?,
            Prim::GlobalAvgPool => g.global_avg_pool(v[0]),
            Prim::Sum => g.sum(v[0]),
            Prim::L1Mean => g.l1_mean(v[0], v[1])?,
        })
    }
}

enum Block {
    Oct(OctConv),
    Fsm(Fsm),
    Rcab(Rcab),
    Down(Downsample),
    Up(Upsample),
    Network(Box<Msfs>, LossWeights),
}

struct BlockCase {
    block: Block,
    names: Vec<String>,
}

impl BlockCase {
    fn specs(block: &Block) -> Vec<ParamSpec> {
        let mut v = Vec::new();
        match block {
            Block::Oct(b) => b.specs(&mut v),
            Block::Fsm(b) => b.specs(&mut v),
            Block::Rcab(b) => b.specs(&mut v),
            Block::Down(b) => b.specs(&mut v),
            Block::Up(b) => b.specs(&mut v),
            Block::Network(n, _) => v = n.specs(),
        }
        v
    }

    /// Parameters in name order, then the block's data inputs.
    fn new(
        block: Block,
        rng: &mut ChaCha8Rng,
        seed: u64,
    ) -> (Self, Vec<(String, Tensor<f64>, bool)>) {
        let params = ParamStore::<f64>::init(&Self::specs(&block), seed);
        let names: Vec<String> = params.names().cloned().collect();
        let mut leaves: Vec<(String, Tensor<f64>, bool)> = params
            .iter()
            .map(|(k, t)| (k.clone(), t.clone(), true))
            .collect();
        let mut input = |name: &str, shape: Shape, grad: bool, lo: f64, hi: f64| {
            leaves.push((name.to_string(), uniform(rng, shape, lo, hi), grad));
        };
        match &block {
            Block::Oct(_) => {
                input("x.hf", Shape::new(1, 2, 4, 4), true, -1.0, 1.0);
                input("x.lf", Shape::new(1, 2, 2, 2), true, -1.0, 1.0);
                input("r.hf", Shape::new(1, 2, 4, 4), false, -1.0, 1.0);
                input("r.lf", Shape::new(1, 2, 2, 2), false, -1.0, 1.0);
            }
            Block::Fsm(_) => {
                input("x", Shape::new(1, 4, 4, 4), true, -1.0, 1.0);
                input("r", Shape::new(1, 4, 4, 4), false, -1.0, 1.0);
                input("r.hf", Shape::new(1, 2, 4, 4), false, -1.0, 1.0);
                input("r.lf", Shape::new(1, 2, 2, 2), false, -1.0, 1.0);
            }
            Block::Rcab(_) => {
                input("x", Shape::new(1, 8, 4, 4), true, -1.0, 1.0);
                input("r", Shape::new(1, 8, 4, 4), false, -1.0, 1.0);
            }
            Block::Down(_) => {
                input("x", Shape::new(1, 4, 4, 4), true, -1.0, 1.0);
                input("r", Shape::new(1, 8, 2, 2), false, -1.0, 1.0);
            }
            Block::Up(_) => {
                input("x", Shape::new(1, 8, 2, 2), true, -1.0, 1.0);
                input("r", Shape::new(1, 4, 4, 4), false, -1.0, 1.0);
            }
            Block::Network(..) => {
                input("blurry", Shape::new(1, 3, 8, 8), false, 0.0, 1.0);
                input("sharp", Shape::new(1, 3, 8, 8), false, 0.0, 1.0);
            }
        }
        (BlockCase { block, names }, leaves)
    }
}

impl Objective for BlockCase {
    fn build<T: Float>(&self, g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
        let np = self.names.len();
        let p = Bindings::from_vars(self.names.iter().cloned().zip(v.iter().copied()));
        let d = &v[np..];
        match &self.block {
            Block::Oct(b) => {
                let y = b.forward(g, &p, Bands::pair(d[0], d[1]))?;
                let a = project(g, y.hf.expect("hf"), d[2])?;
                let c = project(g, y.lf.expect("lf"), d[3])?;
                g.add(a, c)
            }
            Block::Fsm(b) => {
                // include the taps so the middle conv is checked on its own too
                let o = b.forward(g, &p, d[0])?;
                let a = project(g, o.out, d[1])?;
                let h = project(g, o.hf(), d[2])?;
                let l = project(g, o.lf(), d[3])?;
                let hl = g.add(h, l)?;
                g.add(a, hl)
            }
            Block::Rcab(b) => {
                let y = b.forward(g, &p, d[0])?;
                project(g, y, d[1])
            }
            Block::Down(b) => {
                let y = b.forward(g, &p, d[0])?;
                project(g, y, d[1])
            }
            Block::Up(b) => {
                let y = b.forward(g, &p, d[0])?;
                project(g, y, d[1])
            }
            Block::Network(net, w) => {
                let (f, taps) = net.forward(g, &p, d[0])?;
                let taps = net.encode_output(g, &p, f.sharp, taps)?;
                Ok(loss_total(g, f.sharp, d[1], &taps, w)?.total)
            }
        }
    }
}

/// Toy network used by the full-objective check.
pub fn toy_network_config() -> NetworkConfig {
    NetworkConfig {
        base_channels: 8,
        rcab_count: 2,
        ..NetworkConfig::default()
    }
}

fn leaves_as<T: Float>(raw: Vec<(impl Into<String>, Tensor<f64>, bool)>) -> Vec<GradLeaf<T>> {
    raw.into_iter()
        .map(|(n, t, grad)| {
            let t = t.cast::<T>();
            if grad {
                GradLeaf::new(n, t)
            } else {
                GradLeaf::frozen(n, t)
            }
        })
        .collect()
}

fn is_single<T: Float>() -> bool {
    std::mem::size_of::<T>() == 4
}

/// Runs every check at precision `T`.
pub fn run_suite<T: Float>(seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let base = GradCheckOptions::for_type::<T>();

    for prim in PRIMITIVES {
        let case = PrimCase { prim };
        let mut raw = case.leaves(&mut rng);
        let weights = match raw.last() {
            Some(("r", ..)) => raw.pop().expect("projection").1,
            _ => Tensor::scalar(1.0),
        };
        let leaves = leaves_as::<T>(raw);
        let report = grad_check_projected(&leaves, |g, v| case.output(g, v), &weights, &base)?;
        checks.push(CheckOutcome {
            name: prim.name(),
            report,
        });
    }

    let blocks: Vec<(&str, Block, Option<usize>)> = vec![
        (
            "octconv(0.5 -> 0.5)",
            Block::Oct(OctConv::new("oc", 4, 4, 3, 0.5, 0.5)?),
            None,
        ),
        ("fsm", Block::Fsm(Fsm::new("fsm", 4, true)?), None),
        ("rcab", Block::Rcab(Rcab::new("rcab", 8, 4, 0.2)?), None),
        (
            "downsample",
            Block::Down(Downsample::new("down", 4, 8, 0.2)),
            None,
        ),
        (
            "upsample",
            Block::Up(Upsample::new("up", 8, 8, 4, 4, 0.2)?),
            None,
        ),
        (
            "network loss_total",
            Block::Network(
                Box::new(Msfs::new(toy_network_config())?),
                LossWeights::default(),
            ),
            Some(4),
        ),
        (
            "network loss_total (unit weights)",
            Block::Network(
                Box::new(Msfs::new(toy_network_config())?),
                LossWeights {
                    lambda1: 1.0,
                    lambda2: 1.0,
                    ..LossWeights::default()
                },
            ),
            Some(2),
        ),
    ];
    for (i, (name, block, per_leaf)) in blocks.into_iter().enumerate() {
        let (case, raw) = BlockCase::new(block, &mut rng, seed.wrapping_add(i as u64 + 1));
        let leaves = leaves_as::<T>(raw);
        let report = if is_single::<T>() {
            let mut opts = GradCheckOptions::f32_with_f64_oracle();
            opts.max_per_leaf = per_leaf;
            grad_check_f64_oracle(&leaves, &case, &opts)?
        } else {
            let mut opts = base.clone();
            opts.max_per_leaf = per_leaf;
            grad_check(&leaves, |g, v| case.build(g, v), &opts)?
        };
        checks.push(CheckOutcome {
            name: name.to_string(),
            report,
        });
    }

    Ok(SuiteReport {
        precision: T::NAME,
        checks,
        elapsed: start.elapsed(),
    })
}
