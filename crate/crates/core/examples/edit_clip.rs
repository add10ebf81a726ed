//! Timbre transfer of one clip with K/V injection, written out as WAV next to
//! the decoded source and an edit without injection.

use rfedit::dsp::wav::wav_write;
use rfedit::edit::{edit_latent, EditConfig};
use rfedit::experiment::{decoded, label_of, next_timbre, scorer};
use rfedit::net::{read_checkpoint, Strategy};
use rfedit::synth::{make_corpus, Split};

fn main() -> rfedit::Result<()> {
    let out = std::env::temp_dir();
    let net = read_checkpoint(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy.ckpt"))?;
    let corpus = make_corpus(20, 7)?;
    let scorer = scorer(corpus.split(Split::Train))?;
    let clip = corpus.split(Split::Eval).next().expect("eval clips");
    let target = next_timbre(&clip.spec);
    println!("{}: {:?}/{:?} -> {target}", clip.id, clip.spec.timbre, clip.spec.style);

    let source = decoded(clip)?;
    wav_write(out.join("source.wav"), &source)?;
    for strategy in [Strategy::None, Strategy::Kv] {
        let cfg = EditConfig {
            strategy,
            ..EditConfig::default()
        };
        let result = edit_latent(&net, &clip.latent, label_of(&clip.spec), target.into(), &cfg)?;
        let score = scorer.score(&source, &result.edited_latent, target.into())?;
        let path = out.join(format!("edit_{strategy}.wav"));
        wav_write(&path, &scorer.decode(&result.edited_latent)?)?;
        println!(
            "{strategy:>4}: fidelity {:.3} transferability {:.3} ({} + {} evaluations) -> {}",
            score.fidelity,
            score.transferability,
            result.conditional_evaluations,
            result.unconditional_evaluations,
            path.display()
        );
    }
    Ok(())
}
