//! Corpus directories: one WAV and one latent file per clip plus a JSON
//! manifest describing how each clip was rendered.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::wav::{wav_read, wav_write};
use crate::error::{Error, Result};
use crate::latent::{read_latent, write_latent};
use crate::synth::{Clip, ClipSpec, Corpus, Split};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub wav: String,
    pub latent: String,
    pub spec: ClipSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub count_per_class: usize,
    pub seed: u64,
    pub clips: Vec<ManifestEntry>,
}

/// Writes every clip and the manifest into `dir`, creating it if needed.
/// Returns the manifest path.
pub fn write_corpus(dir: impl AsRef<Path>, corpus: &Corpus, count_per_class: usize, seed: u64) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut clips = Vec::with_capacity(corpus.len());
    for c in &corpus.clips {
        let wav = format!("{}.wav", c.id);
        let latent = format!("{}.rflt", c.id);
        wav_write(dir.join(&wav), &c.signal)?;
        write_latent(dir.join(&latent), &c.latent)?;
        clips.push(ManifestEntry {
            id: c.id.clone(),
            split: c.split,
            wav,
            latent,
            spec: c.spec.clone(),
        });
    }
    let manifest = CorpusManifest {
        count_per_class,
        seed,
        clips,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Loads a corpus written by [`write_corpus`]. Signals come from the WAV
/// files, latents from the latent files.
pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let clips = manifest
        .clips
        .into_iter()
        .map(|e| {
            Ok(Clip {
                signal: wav_read(dir.join(&e.wav))?,
                latent: read_latent(dir.join(&e.latent))?,
                id: e.id,
                spec: e.spec,
                split: e.split,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { clips })
}

/// Hex SHA-256 of a file.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let digest = Sha256::digest(fs::read(path)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
