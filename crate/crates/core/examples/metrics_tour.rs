//! The evaluation metrics on hand-made signals and on corpus clips.

use rfedit::dsp::{chroma_from_cqt, cqt, tone, CqtParams, DEFAULT_SAMPLE_RATE, PITCH_CLASSES};
use rfedit::metrics::{chroma_similarity, cqt_pcc, embed_toy, frechet_distance, gaussian_stats};
use rfedit::synth::{ground_truth_edit, make_corpus, EditTarget, Timbre};

fn main() -> rfedit::Result<()> {
    let sr = DEFAULT_SAMPLE_RATE;
    for f in [220.0, 440.0, 880.0, 523.25] {
        let chroma = chroma_from_cqt(&cqt(&tone(f, 0.5, 1.0, sr), &CqtParams::default())?)?;
        let pc = chroma.argmax(chroma.frames() / 2).map(|i| PITCH_CLASSES[i]);
        println!("{f:>7.2} Hz -> {pc:?}");
    }

    let corpus = make_corpus(4, 7)?;
    let clip = &corpus.clips[0];
    let swapped = ground_truth_edit(&clip.spec, EditTarget::Timbre(Timbre::Bowed))?;
    let other = &corpus.clips[5];
    println!("same melody, new timbre: chroma {:.3} cqt pcc {:.3}",
        chroma_similarity(&clip.signal, &swapped.signal)?, cqt_pcc(&clip.signal, &swapped.signal)?);
    println!("different melody:        chroma {:.3} cqt pcc {:.3}",
        chroma_similarity(&clip.signal, &other.signal)?, cqt_pcc(&clip.signal, &other.signal)?);

    let (a, b): (Vec<_>, Vec<_>) = corpus.clips.iter().partition(|c| c.spec.timbre != Timbre::Bright);
    let embed = |cs: &[&rfedit::synth::Clip]| cs.iter().map(|c| embed_toy(&c.signal)).collect::<rfedit::Result<Vec<_>>>();
    let (ea, eb) = (embed(&a)?, embed(&b)?);
    let (sa, sb) = (gaussian_stats(&ea)?, gaussian_stats(&eb)?);
    println!("FAD(a, a) {:.2e}  FAD(a, bright) {:.3}", frechet_distance(&sa, &sa)?, frechet_distance(&sa, &sb)?);
    Ok(())
}
