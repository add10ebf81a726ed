//! Classifier-free guidance on the toy checkpoint: how far the guided
//! velocity moves from the conditional one as the scale grows.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rfedit::edit::guided_velocity;
use rfedit::flow::VelocityField;
use rfedit::net::{read_checkpoint, Label};

fn main() -> rfedit::Result<()> {
    let net = read_checkpoint(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy.ckpt"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = Array2::from_shape_simple_fn(net.latent_shape(), || StandardNormal.sample(&mut rng));
    let cond = net.condition(Label::Class { timbre: 1, style: 2 })?;
    let null = net.null_condition();
    let t = 0.5;
    let vc = net.velocity(&z, t, &cond)?;
    let norm = |a: &Array2<f64>| a.mapv(|x| x * x).sum().sqrt();
    for s in [0.0, 1.0, 5.0, 20.0] {
        let v = guided_velocity(&net, &z, t, &cond, &null, s)?;
        println!("scale {s:>4}: |v| {:8.3}  |v - v_cond| {:8.3}", norm(&v), norm(&(&v - &vc)));
    }
    Ok(())
}
