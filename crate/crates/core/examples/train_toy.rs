//! Velocity-matching training on the synthetic corpus.
//!
//! With no arguments this runs a short demonstration. `--full` reproduces
//! assets/toy.ckpt (about 25 minutes on one core).

use rfedit::experiment::label_of;
use rfedit::net::{train, write_checkpoint, Net, NetConfig, TrainConfig, TrainPair};
use rfedit::synth::{make_corpus, Split};

fn main() -> rfedit::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let corpus = make_corpus(20, 7)?;
    let data: Vec<TrainPair> = corpus
        .split(Split::Train)
        .map(|c| TrainPair {
            z0: None,
            z1: c.latent.clone(),
            label: label_of(&c.spec),
        })
        .collect();
    let cfg = TrainConfig {
        steps: if full { 6000 } else { 300 },
        seed: 1,
        ..TrainConfig::default()
    };
    let mut net = Net::new(NetConfig::default())?;
    let report = train(&mut net, &data, &cfg)?;
    for step in (0..report.steps).step_by(report.steps / 10) {
        println!("step {step:>5}  loss {:.4}", report.smoothed[step]);
    }
    println!(
        "{} clips, loss {:.4} -> {:.4} ({:.2}x)",
        data.len(),
        report.initial,
        report.final_smoothed(),
        report.reduction()
    );
    if full {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy.ckpt");
        write_checkpoint(path, &net)?;
        println!("wrote {path}");
    }
    Ok(())
}
