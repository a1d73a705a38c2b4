//! Clip featurization: decode, mel front end, patching and embedding, with a
//! content-addressed feature cache.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::audio::{decode_wav, DatasetIndex};
use crate::embedding::{read_cache, write_cache, FeatureMatrix, PatchEmbedder};
use crate::error::{Error, Result};
use crate::render::{extract_patches, RenderConfig};
use crate::spectral::MelFrontEnd;

/// Everything needed to turn one WAV file into feature rows.
pub struct Featurizer<'a> {
    pub front_end: &'a MelFrontEnd,
    pub render: RenderConfig,
    pub embedder: &'a dyn PatchEmbedder,
}

impl Featurizer<'_> {
    pub fn clip(&self, path: &Path, clip_id: &str) -> Result<(Vec<u32>, Array2<f32>)> {
        let wave = decode_wav(path)?;
        let expected = self.front_end.stft.sample_rate_hz;
        if wave.sample_rate_hz != expected {
            return Err(Error::SampleRate {
                found: wave.sample_rate_hz,
                expected,
            });
        }
        let mel = self.front_end.process(&wave)?;
        let patches = extract_patches(&mel, clip_id, self.render.width, self.render.stride)?;
        let offsets = patches.iter().map(|p| p.frame_offset as u32).collect();
        let rows = self.embedder.embed_clip(&mel, &patches)?;
        Ok((offsets, rows))
    }

    /// Featurizes every clip of `index` in parallel; the first failing clip
    /// aborts the run with its path in the message.
    pub fn run(&self, index: &DatasetIndex) -> Result<FeatureMatrix> {
        let clips = index
            .entries
            .par_iter()
            .map(|meta| {
                let path = index.absolute_path(meta);
                self.clip(&path, &meta.path)
                    .map(|(offsets, rows)| (Arc::<str>::from(meta.path.as_str()), offsets, rows))
                    .map_err(|e| Error::Format(format!("{}: {e}", meta.path)))
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureMatrix::from_clips(
            self.embedder.extractor_id(),
            self.embedder.dim(),
            self.embedder.orientation(),
            clips,
        )
    }

    /// Hex digest over the DSP parameters, the render parameters, the
    /// embedder fingerprint and the clip list.
    pub fn cache_key(&self, index: &DatasetIndex) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}|{:?}|{:?}|", self.front_end.stft, self.front_end.mel, self.render).as_bytes());
        h.update(self.embedder.fingerprint());
        for m in &index.entries {
            h.update([0]);
            h.update(m.path.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cache_path(&self, cache_dir: &Path, index: &DatasetIndex) -> PathBuf {
        let key = self.cache_key(index);
        cache_dir.join(format!("{}-{}.fch", self.embedder.extractor_id(), &key[..16]))
    }

    /// Returns cached features when present, otherwise featurizes and writes
    /// the cache. The flag reports a cache hit.
    pub fn run_cached(&self, cache_dir: &Path, index: &DatasetIndex) -> Result<(PathBuf, FeatureMatrix, bool)> {
        let path = self.cache_path(cache_dir, index);
        if path.is_file() {
            match read_cache(&path) {
                Ok(m) => return Ok((path, m, true)),
                Err(e) => log::warn!("ignoring unreadable cache {}: {e}", path.display()),
            }
        }
        let m = self.run(index)?;
        fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
        write_cache(&m, &path)?;
        Ok((path, m, false))
    }
}
