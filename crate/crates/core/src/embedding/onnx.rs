use std::collections::HashMap;
use std::fs;
use std::sync::{Arc, Mutex};

use ndarray::{Array2, Array4, Axis};
use sha2::{Digest, Sha256};
use tract_onnx::prelude::*;

use super::{EmbeddingBackendSpec, PatchEmbedder};
use crate::error::{Error, Result};
use crate::render::{Orientation, Patch, PatchRenderer, RgbTensor, IMAGE_SIZE};
use crate::spectral::MelSpectrogram;

type Plan = Arc<TypedRunnableModel>;

fn backend_err(e: impl std::fmt::Display) -> Error {
    Error::Backend(e.to_string())
}

/// A validated ONNX inference graph. Plans are compiled lazily per batch
/// size and shared between threads.
pub struct Backend {
    spec: EmbeddingBackendSpec,
    graph: Vec<u8>,
    graph_sha256: [u8; 32],
    plans: Mutex<HashMap<usize, Plan>>,
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend").field("spec", &self.spec).finish_non_exhaustive()
    }
}

/// Loads the graph and probes it with one zero image; the tap must yield
/// exactly `expected_dim` features.
pub fn load_backend(spec: &EmbeddingBackendSpec) -> Result<Backend> {
    spec.validate()?;
    let graph = fs::read(&spec.graph_path).map_err(|e| Error::io(&spec.graph_path, e))?;
    let graph_sha256: [u8; 32] = Sha256::digest(&graph).into();
    let backend = Backend {
        spec: spec.clone(),
        graph,
        graph_sha256,
        plans: Mutex::new(HashMap::new()),
    };
    let probe = RgbTensor {
        values: ndarray::Array3::zeros((3, IMAGE_SIZE, IMAGE_SIZE)),
        standardized: true,
    };
    let out = backend.run_batch(std::slice::from_ref(&probe))?;
    if out.ncols() != spec.expected_dim {
        return Err(Error::ShapeMismatch {
            expected: spec.expected_dim,
            found: out.ncols(),
        });
    }
    Ok(backend)
}

impl Backend {
    pub fn spec(&self) -> &EmbeddingBackendSpec {
        &self.spec
    }

    pub fn graph_sha256(&self) -> &[u8; 32] {
        &self.graph_sha256
    }

    fn plan(&self, batch: usize) -> Result<Plan> {
        if let Some(p) = self.plans.lock().expect("plan cache poisoned").get(&batch) {
            return Ok(Arc::clone(p));
        }
        let mut model = tract_onnx::onnx()
            .model_for_read(&mut self.graph.as_slice())
            .map_err(backend_err)?;
        model
            .set_input_names([self.spec.input_name.as_str()])
            .map_err(|e| Error::Backend(format!("input node {:?}: {e}", self.spec.input_name)))?;
        model
            .select_outputs_by_name([self.spec.output_name.as_str()])
            .map_err(|e| Error::Backend(format!("output node {:?}: {e}", self.spec.output_name)))?;
        let plan = model
            .with_input_fact(0, f32::fact([batch, 3, IMAGE_SIZE, IMAGE_SIZE]).into())
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(backend_err)?;
        self.plans
            .lock()
            .expect("plan cache poisoned")
            .insert(batch, Arc::clone(&plan));
        Ok(plan)
    }

    fn run_batch(&self, imgs: &[RgbTensor]) -> Result<Array2<f32>> {
        let n = imgs.len();
        let mut input = Array4::<f32>::zeros((n, 3, IMAGE_SIZE, IMAGE_SIZE));
        for (i, img) in imgs.iter().enumerate() {
            if img.values.dim() != (3, IMAGE_SIZE, IMAGE_SIZE) {
                return Err(Error::DimensionMismatch {
                    expected: 3 * IMAGE_SIZE * IMAGE_SIZE,
                    found: img.values.len(),
                });
            }
            input.index_axis_mut(Axis(0), i).assign(&img.values);
        }
        let plan = self.plan(n)?;
        let tensor: Tensor = input.into();
        let outputs = plan.run(tvec!(tensor.into())).map_err(backend_err)?;
        let out = outputs[0].to_plain_array_view::<f32>().map_err(backend_err)?;
        let total = out.len();
        if out.shape().first() != Some(&n) || total % n.max(1) != 0 {
            return Err(Error::Backend(format!("unexpected output shape {:?}", out.shape())));
        }
        let d = total / n;
        let flat: Vec<f32> = out.iter().copied().collect();
        Array2::from_shape_vec((n, d), flat).map_err(backend_err)
    }

    /// Embeds standardized images, `batch` at a time.
    pub fn embed_batch(&self, imgs: &[RgbTensor], batch: usize) -> Result<Array2<f32>> {
        if imgs.iter().any(|i| !i.standardized) {
            return Err(Error::InvalidParameter("images must be standardized".into()));
        }
        let batch = batch.max(1);
        let mut out = Array2::<f32>::zeros((imgs.len(), self.spec.expected_dim));
        for (ci, chunk) in imgs.chunks(batch).enumerate() {
            let rows = self.run_batch(chunk)?;
            if rows.ncols() != self.spec.expected_dim {
                return Err(Error::ShapeMismatch {
                    expected: self.spec.expected_dim,
                    found: rows.ncols(),
                });
            }
            out.slice_mut(ndarray::s![ci * batch..ci * batch + chunk.len(), ..])
                .assign(&rows);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("backend output"));
        }
        Ok(out)
    }
}

/// Render + pretrained-network embedding.
#[derive(Debug)]
pub struct ImageEmbedder {
    pub backend: Backend,
    pub renderer: PatchRenderer,
    pub batch: usize,
}

impl PatchEmbedder for ImageEmbedder {
    fn extractor_id(&self) -> &str {
        self.backend.spec.extractor_id.as_str()
    }

    fn dim(&self) -> usize {
        self.backend.spec.expected_dim
    }

    fn orientation(&self) -> Orientation {
        self.renderer.config.orientation
    }

    fn fingerprint(&self) -> Vec<u8> {
        let mut v = self.backend.graph_sha256.to_vec();
        v.extend_from_slice(self.backend.spec.input_name.as_bytes());
        v.push(0);
        v.extend_from_slice(self.backend.spec.output_name.as_bytes());
        v.push(0);
        v.extend_from_slice(format!("{:?}", self.renderer.config).as_bytes());
        v
    }

    fn embed_clip(&self, mel: &MelSpectrogram, patches: &[Patch]) -> Result<Array2<f32>> {
        let imgs = self.renderer.render_clip(mel, patches)?;
        self.backend.embed_batch(&imgs, self.batch)
    }
}
