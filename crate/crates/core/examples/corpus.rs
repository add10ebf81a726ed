//! Renders the synthetic corpus to a directory and prints its class layout.
//!
//! cargo run --example corpus -- /tmp/corpus 4

use std::collections::BTreeMap;

use rfedit::store::{file_digest, write_corpus};
use rfedit::synth::{make_corpus, Split};

fn main() -> rfedit::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "corpus".into());
    let count = args.next().and_then(|c| c.parse().ok()).unwrap_or(2);
    let corpus = make_corpus(count, 7)?;
    let manifest = write_corpus(&dir, &corpus, count, 7)?;

    let mut classes: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for c in &corpus.clips {
        let e = classes.entry(format!("{:?}/{:?}", c.spec.timbre, c.spec.style)).or_default();
        match c.split {
            Split::Train => e.0 += 1,
            Split::Eval => e.1 += 1,
        }
    }
    for (class, (train, eval)) in &classes {
        println!("{class:<22} train {train:>2}  eval {eval:>2}");
    }
    println!("{} clips, manifest {} sha256 {}", corpus.len(), manifest.display(), file_digest(&manifest)?);
    Ok(())
}
