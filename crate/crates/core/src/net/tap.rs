//! Observation and substitution of single-block self-attention tensors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::layers::Mat;
use crate::error::{Error, Result};

/// `(step, single block)`; blocks are numbered from 1.
pub type SlotKey = (usize, usize);

/// Which cached tensors replace the live ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    None,
    V,
    K,
    Kv,
}

impl Strategy {
    pub fn replaces_k(self) -> bool {
        matches!(self, Strategy::K | Strategy::Kv)
    }

    pub fn replaces_v(self) -> bool {
        matches!(self, Strategy::V | Strategy::Kv)
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::V => "v",
            Strategy::K => "k",
            Strategy::Kv => "kv",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Strategy::None),
            "v" => Ok(Strategy::V),
            "k" => Ok(Strategy::K),
            "kv" => Ok(Strategy::Kv),
            _ => Err(Error::arg(format!("unknown strategy '{s}' (none, v, k, kv)"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QkvEntry {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TapMode {
    Passthrough,
    Record,
    Replace(Strategy),
}

/// Passed to every forward call. In record mode it stores Q/K/V of each
/// single block at or after `min_block` under the current step; in replace
/// mode it substitutes K and/or V from `source`, failing on a missing slot.
#[derive(Clone, Debug)]
pub struct AttentionTap<'c> {
    pub mode: TapMode,
    pub step: usize,
    pub min_block: usize,
    recorded: BTreeMap<SlotKey, QkvEntry>,
    source: Option<&'c BTreeMap<SlotKey, QkvEntry>>,
    probabilities: Option<BTreeMap<SlotKey, Vec<Mat>>>,
}

impl Default for AttentionTap<'_> {
    fn default() -> Self {
        Self::passthrough()
    }
}

impl<'c> AttentionTap<'c> {
    pub fn passthrough() -> Self {
        Self {
            mode: TapMode::Passthrough,
            step: 0,
            min_block: 1,
            recorded: BTreeMap::new(),
            source: None,
            probabilities: None,
        }
    }

    pub fn record(min_block: usize) -> Self {
        Self {
            mode: TapMode::Record,
            min_block,
            ..Self::passthrough()
        }
    }

    pub fn replace(strategy: Strategy, source: &'c BTreeMap<SlotKey, QkvEntry>, min_block: usize) -> Self {
        Self {
            mode: TapMode::Replace(strategy),
            min_block,
            source: Some(source),
            ..Self::passthrough()
        }
    }

    /// Also keep every single block's attention probabilities.
    pub fn with_probabilities(mut self) -> Self {
        self.probabilities = Some(BTreeMap::new());
        self
    }

    pub fn at_step(mut self, step: usize) -> Self {
        self.step = step;
        self
    }

    pub fn recorded(&self) -> &BTreeMap<SlotKey, QkvEntry> {
        &self.recorded
    }

    pub fn into_recorded(self) -> BTreeMap<SlotKey, QkvEntry> {
        self.recorded
    }

    /// Per-head probability matrices, if requested.
    pub fn probabilities(&self) -> Option<&BTreeMap<SlotKey, Vec<Mat>>> {
        self.probabilities.as_ref()
    }

    pub(crate) fn covers(&self, block: usize) -> bool {
        block >= self.min_block
    }

    /// Hook run before the attention product of single block `block`.
    pub(crate) fn apply(&mut self, block: usize, q: &Mat, k: &mut Mat, v: &mut Mat) -> Result<()> {
        if !self.covers(block) {
            return Ok(());
        }
        match self.mode {
            TapMode::Passthrough => {}
            TapMode::Record => {
                self.recorded.insert(
                    (self.step, block),
                    QkvEntry {
                        q: q.clone(),
                        k: k.clone(),
                        v: v.clone(),
                    },
                );
            }
            TapMode::Replace(strategy) => {
                if strategy == Strategy::None {
                    return Ok(());
                }
                let entry = self
                    .source
                    .and_then(|s| s.get(&(self.step, block)))
                    .ok_or(Error::CacheMiss {
                        step: self.step,
                        block,
                    })?;
                if entry.k.dim() != k.dim() || entry.v.dim() != v.dim() {
                    return Err(Error::dim(format!(
                        "cached tensors {:?} do not match live {:?}",
                        entry.k.dim(),
                        k.dim()
                    )));
                }
                if strategy.replaces_k() {
                    k.assign(&entry.k);
                }
                if strategy.replaces_v() {
                    v.assign(&entry.v);
                }
            }
        }
        Ok(())
    }

    pub(crate) fn observe_probabilities(&mut self, block: usize, probs: &[Mat]) {
        if let Some(map) = self.probabilities.as_mut() {
            map.insert((self.step, block), probs.to_vec());
        }
    }

    pub(crate) fn wants_probabilities(&self) -> bool {
        self.probabilities.is_some()
    }
}
