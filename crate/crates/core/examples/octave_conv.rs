//! Splits a feature map into high and low bands with an octave convolution,
//! runs a frequency separation module, and shows the band shapes.

use msfs::freq::{Bands, Fsm, OctConv};
use msfs::params::ParamStore;
use msfs::{Graph, Shape, Tensor};

fn main() -> msfs::Result<()> {
    let split = OctConv::new("split", 8, 8, 1, 0.0, 0.5)?;
    let fsm = Fsm::new("fsm", 8, true)?;
    let mut specs = Vec::new();
    split.specs(&mut specs);
    fsm.specs(&mut specs);
    let params = ParamStore::<f32>::init(&specs, 1);

    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let data: Vec<f64> = (0..8 * 16 * 16).map(|i| (i as f64 * 0.13).sin()).collect();
    let x = g.constant(Tensor::from_f64(Shape::new(1, 8, 16, 16), &data)?);

    let bands = split.forward(&mut g, &p, Bands::plain(x))?;
    let pair = bands.values(&g, 0.5)?;
    pair.validate()?;
    println!(
        "octave split: high {}  low {}",
        pair.hf.shape(),
        pair.lf.shape()
    );

    let o = fsm.forward(&mut g, &p, x)?;
    println!(
        "fsm output {}  taps: high {}  low {}",
        g.shape(o.out),
        g.shape(o.hf()),
        g.shape(o.lf())
    );
    Ok(())
}
