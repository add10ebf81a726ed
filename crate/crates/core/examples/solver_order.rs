//! Global convergence order of Euler and the second-order solver on a field
//! with a closed-form solution.

use std::f64::consts::PI;

use ndarray::Array2;
use rfedit::flow::{FnField, Latent};
use rfedit::solver::{convergence_order, FdStep};

fn main() -> rfedit::Result<()> {
    let field = FnField(|z: &Latent, t: f64| z.mapv(|x| (2.0 * PI * t).sin() * (1.0 + 0.1 * x)));
    let z0 = Array2::from_elem((1, 1), 0.5);
    // 1 + 0.1 z grows by exp(0.1 (1 - cos 2πt) / 2π).
    let exact = |t: f64| {
        let g = (0.1 * (1.0 - (2.0 * PI * t).cos()) / (2.0 * PI)).exp();
        z0.mapv(|x| ((1.0 + 0.1 * x) * g - 1.0) / 0.1)
    };
    let ks = [8, 16, 32, 64, 128];
    let r = convergence_order(&field, &z0, &exact, &ks, FdStep::Relative(0.1), &())?;
    println!("{:>5} {:>12} {:>12}", "K", "euler", "rf2");
    for (i, k) in ks.iter().enumerate() {
        println!("{k:>5} {:>12.3e} {:>12.3e}", r.euler_errors[i], r.rf2_errors[i]);
    }
    println!("slopes: euler {:?}, rf2 {:?}", r.euler, r.rf2);
    Ok(())
}
