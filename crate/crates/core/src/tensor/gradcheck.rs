//! Central finite-difference check of taped gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Float, Graph, Tensor, Var};
use crate::error::Result;

/// One input of the graph under test.
#[derive(Clone, Debug)]
pub struct GradLeaf<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub requires_grad: bool,
}

impl<T: Float> GradLeaf<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        GradLeaf {
            name: name.into(),
            value,
            requires_grad: true,
        }
    }

    pub fn frozen(name: impl Into<String>, value: Tensor<T>) -> Self {
        GradLeaf {
            name: name.into(),
            value,
            requires_grad: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator. Entries whose true
    /// gradient is below this magnitude are judged on absolute error
    /// `floor * tol`.
    pub floor: f64,
    /// Perturb at most this many randomly chosen elements per leaf.
    pub max_per_leaf: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    /// Defaults for single precision.
    pub fn f32() -> Self {
        GradCheckOptions {
            eps: 1e-2,
            tol: 1e-3,
            floor: 1e-2,
            max_per_leaf: None,
            seed: 0,
        }
    }

    /// Defaults for double precision.
    pub fn f64() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tol: 1e-6,
            floor: 1e-3,
            max_per_leaf: None,
            seed: 0,
        }
    }

    /// Single-precision tolerances with a double-precision difference step,
    /// for [`grad_check_f64_oracle`].
    pub fn f32_with_f64_oracle() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            ..Self::f32()
        }
    }

    pub fn for_type<T: Float>() -> Self {
        if std::mem::size_of::<T>() == 4 {
            Self::f32()
        } else {
            Self::f64()
        }
    }

    pub fn with_max_per_leaf(mut self, k: usize) -> Self {
        self.max_per_leaf = Some(k);
        self
    }
}

#[derive(Clone, Debug)]
pub struct LeafReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafReport>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < self.tol
    }

    pub fn checked(&self) -> usize {
        self.leaves.iter().map(|l| l.checked).sum()
    }
}

/// A scalar-valued graph that can be built at any precision.
pub trait Objective {
    fn build<T: Float>(&self, g: &mut Graph<T>, leaves: &[Var]) -> Result<Var>;
}

/// Compares analytic gradients of the scalar produced by `f` against
/// central differences taken at the same precision. Frozen leaves are passed
/// to `f` but left out of the report.
pub fn grad_check<T, F>(
    leaves: &[GradLeaf<T>],
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Float,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_grads(leaves, &f)?;
    let values: Vec<Tensor<T>> = leaves.iter().map(|l| l.value.clone()).collect();
    compare(
        leaves,
        &analytic,
        values,
        |v: &[Tensor<T>]| eval(&f, v),
        opts,
    )
}

/// Checks the gradient of `sum(f(x) * weights)` where `f` returns a tensor
/// of `weights`' shape. The finite-difference side forms that weighted sum
/// in double precision from the values `f` produced in `T`, so only the
/// rounding of the operation under test enters the difference.
pub fn grad_check_projected<T, F>(
    leaves: &[GradLeaf<T>],
    f: F,
    weights: &Tensor<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Float,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let r: Tensor<T> = weights.cast();
    let analytic = analytic_grads(leaves, &|g: &mut Graph<T>, v: &[Var]| {
        let y = f(g, v)?;
        let rv = g.constant(r.clone());
        let yr = g.mul(y, rv)?;
        Ok(g.sum(yr))
    })?;
    let values: Vec<Tensor<T>> = leaves.iter().map(|l| l.value.clone()).collect();
    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|v| g.constant(v.clone())).collect();
        let y = f(&mut g, &vars)?;
        let y = g.value(y);
        if y.shape() != weights.shape() {
            return Err(crate::Error::Dimension(format!(
                "projection weights {} do not match output {}",
                weights.shape(),
                y.shape()
            )));
        }
        Ok(y.data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a.as_f64() * b)
            .sum())
    };
    compare(leaves, &analytic, values, eval, opts)
}

/// Like [`grad_check`], but the finite differences are evaluated in double
/// precision on the same (widened) inputs. Measures the error of the
/// analytic gradient in `T` without the cancellation noise of differencing
/// in `T`.
pub fn grad_check_f64_oracle<T: Float, O: Objective>(
    leaves: &[GradLeaf<T>],
    obj: &O,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic = analytic_grads(leaves, &|g: &mut Graph<T>, v: &[Var]| obj.build(g, v))?;
    let values: Vec<Tensor<f64>> = leaves.iter().map(|l| l.value.cast()).collect();
    let f = |g: &mut Graph<f64>, v: &[Var]| obj.build(g, v);
    compare(
        leaves,
        &analytic,
        values,
        |v: &[Tensor<f64>]| eval(&f, v),
        opts,
    )
}

fn analytic_grads<T: Float, F>(leaves: &[GradLeaf<T>], f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves
        .iter()
        .map(|l| g.leaf(l.value.clone(), l.requires_grad))
        .collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    Ok(leaves
        .iter()
        .zip(&vars)
        .map(|(l, &v)| match g.grad(v) {
            Some(t) => t.data().iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; l.value.numel()],
        })
        .collect())
}

fn eval<U: Float, F>(f: &F, values: &[Tensor<U>]) -> Result<f64>
where
    F: Fn(&mut Graph<U>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = values.iter().map(|v| g.constant(v.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item().as_f64())
}

fn compare<T: Float, U: Float>(
    leaves: &[GradLeaf<T>],
    analytic: &[Vec<f64>],
    mut values: Vec<Tensor<U>>,
    eval: impl Fn(&[Tensor<U>]) -> Result<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut reports = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for (li, leaf) in leaves.iter().enumerate() {
        if !leaf.requires_grad {
            continue;
        }
        let numel = leaf.value.numel();
        let indices: Vec<usize> = match opts.max_per_leaf {
            Some(k) if k < numel => {
                let mut idx = rand::seq::index::sample(&mut rng, numel, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..numel).collect(),
        };
        let mut rep = LeafReport {
            name: leaf.name.clone(),
            checked: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for j in indices {
            let orig = values[li].data()[j];
            let eps = U::lit(opts.eps);
            values[li].data_mut()[j] = orig + eps;
            let plus = eval(&values)?;
            values[li].data_mut()[j] = orig - eps;
            let minus = eval(&values)?;
            values[li].data_mut()[j] = orig;
            // the step actually taken after rounding
            let step = (orig + eps).as_f64() - (orig - eps).as_f64();
            let numeric = (plus - minus) / step;
            let a = analytic[li][j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            rep.checked += 1;
            rep.max_abs_error = rep.max_abs_error.max(abs);
            rep.max_rel_error = if rel.is_nan() {
                f64::INFINITY
            } else {
                rep.max_rel_error.max(rel)
            };
        }
        reports.push(rep);
    }
    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        leaves: reports,
        max_rel_error,
        tol: opts.tol,
    })
}
