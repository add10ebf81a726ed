//! Inversion followed by regeneration on the toy checkpoint, comparing the
//! two solvers at two step counts.

use rfedit::experiment::label_of;
use rfedit::flow::{Direction, TimeGrid};
use rfedit::net::read_checkpoint;
use rfedit::solver::{reconstruct, Order, SolverConfig};
use rfedit::synth::{make_corpus, Split};

fn main() -> rfedit::Result<()> {
    let net = read_checkpoint(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy.ckpt"))?;
    let corpus = make_corpus(20, 7)?;
    println!("{:<10} {:>10} {:>10} {:>10} {:>10}", "clip", "euler 25", "rf2 25", "euler 50", "rf2 50");
    for clip in corpus.split(Split::Eval).take(5) {
        let cond = net.condition(label_of(&clip.spec))?;
        let mut row = Vec::new();
        for n in [25, 50] {
            let grid = TimeGrid::uniform(n, Direction::Reverse)?;
            for order in [Order::Euler, Order::Rf2] {
                row.push(reconstruct(&net, &clip.latent, &grid, &SolverConfig::with_order(order), &cond)?.error);
            }
        }
        println!("{:<10} {:>10.4} {:>10.4} {:>10.4} {:>10.4}", clip.id, row[0], row[1], row[2], row[3]);
    }
    Ok(())
}
