//! Convolution layer shared by every block.

use crate::error::Result;
use crate::params::{Bindings, Init, ParamSpec};
use crate::tensor::{Float, Graph, Shape, Var};

/// Square convolution with "same" padding (`k / 2`) and a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv {
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        Conv {
            name: name.into(),
            c_in,
            c_out,
            k,
            stride,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        let fan_in = self.c_in * self.k * self.k;
        out.push(ParamSpec::new(
            self.weight_name(),
            Shape::new(self.c_out, self.c_in, self.k, self.k),
            Init::FanInUniform { fan_in },
        ));
        out.push(ParamSpec::new(
            self.bias_name(),
            Shape::new(1, self.c_out, 1, 1),
            Init::FanInUniform { fan_in },
        ));
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bindings, x: Var) -> Result<Var> {
        let w = p.get(&self.weight_name())?;
        let b = p.get(&self.bias_name())?;
        g.conv2d(x, w, Some(b), self.stride, self.k / 2)
    }
}
