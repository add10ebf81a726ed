//! A small (injection steps, injection block) sweep with the value strategy.

use rfedit::edit::{sweep, sweep_trend, write_sweep_rows, EditConfig, SweepAxis};
use rfedit::experiment::{scorer, transfer_jobs};
use rfedit::net::{read_checkpoint, Strategy};
use rfedit::synth::{make_corpus, Split};

fn main() -> rfedit::Result<()> {
    let net = read_checkpoint(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy.ckpt"))?;
    let corpus = make_corpus(20, 7)?;
    let scorer = scorer(corpus.split(Split::Train))?;
    let mut jobs = transfer_jobs(corpus.split(Split::Eval))?;
    jobs.truncate(4);
    let rows = sweep(&net, &jobs, &[3, 15, 25], &[1, 3], Strategy::V, &EditConfig::default(), &scorer)?;
    write_sweep_rows(std::io::stdout(), &rows)?;
    println!(
        "fidelity~n {:.2}  transferability~m {:.2}",
        sweep_trend(&rows, SweepAxis::InjectionSteps, |r| r.fidelity)?,
        sweep_trend(&rows, SweepAxis::InjectionBlock, |r| r.transferability)?
    );
    Ok(())
}
