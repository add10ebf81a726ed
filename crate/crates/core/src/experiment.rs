//! Shared setup for editing experiments on the synthetic corpus: labels,
//! class prototypes and timbre-transfer targets.

use std::collections::BTreeMap;

use crate::edit::{ClassLabel, Scorer, SweepClip};
use crate::error::Result;
use crate::latent::LatentCodec;
use crate::metrics::{class_prototypes, embed_toy};
use crate::net::Label;
use crate::dsp::Signal;
use crate::synth::{Clip, ClipSpec, Style, Timbre, DEFAULT_DURATION};

pub fn class_of(spec: &ClipSpec) -> ClassLabel {
    ClassLabel {
        timbre: spec.timbre,
        style: spec.style,
    }
}

pub fn label_of(spec: &ClipSpec) -> Label {
    class_of(spec).into()
}

/// The timbre-transfer target: the next timbre in order, same style.
pub fn next_timbre(spec: &ClipSpec) -> ClassLabel {
    let all = Timbre::ALL;
    ClassLabel {
        timbre: all[(spec.timbre.index() + 1) % all.len()],
        style: spec.style,
    }
}

/// The clip as heard through the latent codec. Edited audio only exists in
/// this form, so fidelity and transferability compare against it too.
pub fn decoded(clip: &Clip) -> Result<Signal> {
    LatentCodec::default().decode(&clip.latent, DEFAULT_DURATION)
}

/// Embedding prototype per label, averaged over the clips' waveforms.
///
/// A small split need not cover all sixteen classes. A class with no clips
/// borrows the mean over its timbre, so every class whose timbre is present
/// gets a prototype.
pub fn prototypes<'a>(clips: impl IntoIterator<Item = &'a Clip>) -> Result<BTreeMap<Label, Vec<f64>>> {
    let embedded = clips
        .into_iter()
        .map(|c| Ok((c.spec.timbre, label_of(&c.spec), embed_toy(&c.signal)?)))
        .collect::<Result<Vec<_>>>()?;
    fill_prototypes(embedded)
}

/// [`prototypes`] over decoded latents instead of the original waveforms.
pub fn decoded_prototypes<'a>(clips: impl IntoIterator<Item = &'a Clip>) -> Result<BTreeMap<Label, Vec<f64>>> {
    let embedded = clips
        .into_iter()
        .map(|c| Ok((c.spec.timbre, label_of(&c.spec), embed_toy(&decoded(c)?)?)))
        .collect::<Result<Vec<_>>>()?;
    fill_prototypes(embedded)
}

fn fill_prototypes(embedded: Vec<(Timbre, Label, Vec<f64>)>) -> Result<BTreeMap<Label, Vec<f64>>> {
    let (by_timbre, labelled): (Vec<_>, Vec<_>) = embedded
        .into_iter()
        .map(|(timbre, label, e)| ((timbre, e.clone()), (label, e)))
        .unzip();
    let mut out = class_prototypes(&labelled)?;
    for (timbre, proto) in class_prototypes(&by_timbre)? {
        for style in Style::ALL {
            out.entry(ClassLabel { timbre, style }.into())
                .or_insert_with(|| proto.clone());
        }
    }
    Ok(out)
}

/// Scores edits against decoded prototypes of the `reference` clips.
pub fn scorer<'a>(reference: impl IntoIterator<Item = &'a Clip>) -> Result<Scorer> {
    Ok(Scorer {
        codec: LatentCodec::default(),
        seconds: DEFAULT_DURATION,
        prototypes: decoded_prototypes(reference)?,
    })
}

/// Timbre-transfer jobs for `clips`, with decoded source audio.
pub fn transfer_jobs<'a>(clips: impl IntoIterator<Item = &'a Clip>) -> Result<Vec<SweepClip>> {
    clips
        .into_iter()
        .map(|c| {
            Ok(SweepClip {
                id: c.id.clone(),
                latent: c.latent.clone(),
                signal: decoded(c)?,
                source: label_of(&c.spec),
                target: next_timbre(&c.spec).into(),
            })
        })
        .collect()
}
