//! Model files.
//!
//! ```text
//! "ADM1"
//! u32 version
//! u8  kind        (1 gmm, 2 vbgmm, 3 isoforest, 4 ocsvm, 5 kde)
//! u8  has_standardizer
//! [u32 d, d f64 means, d f64 stds]          if has_standardizer
//! model section
//! ```
//!
//! Model sections, integers u32 and reals f64, little-endian, matrices
//! row-major:
//!
//! - gmm: `K, d, reg, weights[K], means[K*d], vars[K*d]`
//! - vbgmm: `K, d, alpha0, beta0, a0, m0[d], b0[d], alpha[K], beta[K], a[K], m[K*d], b[K*d]`
//! - isoforest: `n_trees, psi, d`, then per tree `n_nodes` and per node
//!   `dim, threshold, left, right, size` (`dim = u32::MAX` marks a leaf)
//! - ocsvm: `n_sv, d, gamma, nu, rho, alphas[n_sv], support_vectors[n_sv*d]`
//! - kde: `N, d, bandwidth, points[N*d]`

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use super::iforest::{Node, Tree};
use super::vbgmm::VbPrior;
use super::{AnomalyModel, GmmModel, IsoForestModel, KdeModel, ModelKind, OcSvmModel, VbGmmModel};
use crate::embedding::Standardizer;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"ADM1";
pub const MODEL_VERSION: u32 = 1;

/// A fitted detector together with the feature standardizer it was trained
/// behind.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: AnomalyModel,
    pub standardizer: Option<Standardizer>,
}

pub fn save_model(saved: &SavedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("partial");
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    write_model(saved, &mut w).map_err(|e| Error::io(&tmp, e))?;
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_model(&mut bytes.as_slice())
}

fn put_f64s<'a>(w: &mut impl Write, it: impl IntoIterator<Item = &'a f64>) -> std::io::Result<()> {
    for &v in it {
        w.write_f64::<LE>(v)?;
    }
    Ok(())
}

fn put_len(w: &mut impl Write, n: usize) -> std::io::Result<()> {
    let n = u32::try_from(n).map_err(|_| std::io::Error::other("length exceeds u32"))?;
    w.write_u32::<LE>(n)
}

pub fn write_model(saved: &SavedModel, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_u32::<LE>(MODEL_VERSION)?;
    w.write_u8(saved.model.kind().tag())?;
    match &saved.standardizer {
        Some(s) => {
            w.write_u8(1)?;
            put_len(w, s.dim())?;
            put_f64s(w, &s.mean)?;
            put_f64s(w, &s.std)?;
        }
        None => w.write_u8(0)?,
    }
    match &saved.model {
        AnomalyModel::Gmm(m) => {
            put_len(w, m.n_components())?;
            put_len(w, m.dim())?;
            w.write_f64::<LE>(m.reg)?;
            put_f64s(w, &m.weights)?;
            put_f64s(w, &m.means)?;
            put_f64s(w, &m.vars)?;
        }
        AnomalyModel::VbGmm(m) => {
            put_len(w, m.n_components())?;
            put_len(w, m.dim())?;
            w.write_f64::<LE>(m.prior.alpha0)?;
            w.write_f64::<LE>(m.prior.beta0)?;
            w.write_f64::<LE>(m.prior.a0)?;
            put_f64s(w, &m.prior.m0)?;
            put_f64s(w, &m.prior.b0)?;
            put_f64s(w, &m.alpha)?;
            put_f64s(w, &m.beta)?;
            put_f64s(w, &m.a)?;
            put_f64s(w, &m.m)?;
            put_f64s(w, &m.b)?;
        }
        AnomalyModel::IsoForest(m) => {
            put_len(w, m.trees.len())?;
            put_len(w, m.psi)?;
            put_len(w, m.dim)?;
            for t in &m.trees {
                put_len(w, t.nodes.len())?;
                for n in &t.nodes {
                    w.write_u32::<LE>(n.dim)?;
                    w.write_f64::<LE>(n.threshold)?;
                    w.write_u32::<LE>(n.left)?;
                    w.write_u32::<LE>(n.right)?;
                    w.write_u32::<LE>(n.size)?;
                }
            }
        }
        AnomalyModel::OcSvm(m) => {
            put_len(w, m.n_support())?;
            put_len(w, m.dim())?;
            w.write_f64::<LE>(m.gamma)?;
            w.write_f64::<LE>(m.nu)?;
            w.write_f64::<LE>(m.rho)?;
            put_f64s(w, &m.alphas)?;
            put_f64s(w, &m.support_vectors)?;
        }
        AnomalyModel::Kde(m) => {
            put_len(w, m.points.nrows())?;
            put_len(w, m.dim())?;
            w.write_f64::<LE>(m.bandwidth)?;
            put_f64s(w, &m.points)?;
        }
    }
    Ok(())
}

struct Reader<'a, 'b> {
    r: &'a mut &'b [u8],
}

impl Reader<'_, '_> {
    fn fail<T>(&self, what: &str) -> Result<T> {
        Err(Error::Truncated(format!("model file {what}")))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        self.r.read_u8().or_else(|_| self.fail(what))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.r.read_u32::<LE>().or_else(|_| self.fail(what))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        self.u32(what).map(|v| v as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.r.read_f64::<LE>().or_else(|_| self.fail(what))
    }

    fn vec(&mut self, n: usize, what: &str) -> Result<Array1<f64>> {
        if n.checked_mul(8).is_none_or(|b| b > self.r.len()) {
            return self.fail(what);
        }
        let mut v = vec![0.0; n];
        self.r.read_f64_into::<LE>(&mut v).or_else(|_| self.fail(what))?;
        Ok(Array1::from(v))
    }

    fn mat(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format(format!("{what} dimensions overflow")))?;
        let v = self.vec(n, what)?;
        Array2::from_shape_vec((rows, cols), v.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn read_model(r: &mut &[u8]) -> Result<SavedModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Truncated("model file header".into()))?;
    if &magic != MODEL_MAGIC {
        return Err(Error::BadMagic { expected: "ADM1" });
    }
    let mut rd = Reader { r };
    let version = rd.u32("header")?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let kind = ModelKind::from_tag(rd.u8("header")?)?;
    let standardizer = match rd.u8("header")? {
        0 => None,
        1 => {
            let d = rd.len("standardizer")?;
            let mean = rd.vec(d, "standardizer")?;
            let std = rd.vec(d, "standardizer")?;
            Some(Standardizer { mean, std })
        }
        v => return Err(Error::Format(format!("standardizer flag {v}"))),
    };
    let model = match kind {
        ModelKind::Gmm => {
            let (k, d) = (rd.len("gmm")?, rd.len("gmm")?);
            let reg = rd.f64("gmm")?;
            let weights = rd.vec(k, "gmm weights")?;
            let means = rd.mat(k, d, "gmm means")?;
            let vars = rd.mat(k, d, "gmm variances")?;
            AnomalyModel::Gmm(GmmModel { weights, means, vars, reg })
        }
        ModelKind::VbGmm => {
            let (k, d) = (rd.len("vbgmm")?, rd.len("vbgmm")?);
            let alpha0 = rd.f64("vbgmm prior")?;
            let beta0 = rd.f64("vbgmm prior")?;
            let a0 = rd.f64("vbgmm prior")?;
            let m0 = rd.vec(d, "vbgmm prior")?;
            let b0 = rd.vec(d, "vbgmm prior")?;
            AnomalyModel::VbGmm(VbGmmModel {
                prior: VbPrior { alpha0, beta0, a0, m0, b0 },
                alpha: rd.vec(k, "vbgmm alpha")?,
                beta: rd.vec(k, "vbgmm beta")?,
                a: rd.vec(k, "vbgmm a")?,
                m: rd.mat(k, d, "vbgmm m")?,
                b: rd.mat(k, d, "vbgmm b")?,
            })
        }
        ModelKind::IsoForest => {
            let n_trees = rd.len("isoforest")?;
            let psi = rd.len("isoforest")?;
            let dim = rd.len("isoforest")?;
            let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
            for _ in 0..n_trees {
                let n_nodes = rd.len("tree")?;
                if n_nodes == 0 || n_nodes.saturating_mul(24) > rd.r.len() {
                    return rd.fail("tree nodes");
                }
                let mut nodes = Vec::with_capacity(n_nodes);
                for _ in 0..n_nodes {
                    nodes.push(Node {
                        dim: rd.u32("node")?,
                        threshold: rd.f64("node")?,
                        left: rd.u32("node")?,
                        right: rd.u32("node")?,
                        size: rd.u32("node")?,
                    });
                }
                for n in nodes.iter().filter(|n| !n.is_leaf()) {
                    if n.dim as usize >= dim || n.left as usize >= n_nodes || n.right as usize >= n_nodes {
                        return Err(Error::Format("tree node out of range".into()));
                    }
                }
                trees.push(Tree { nodes });
            }
            AnomalyModel::IsoForest(IsoForestModel { trees, psi, dim })
        }
        ModelKind::OcSvm => {
            let (n_sv, d) = (rd.len("ocsvm")?, rd.len("ocsvm")?);
            let gamma = rd.f64("ocsvm")?;
            let nu = rd.f64("ocsvm")?;
            let rho = rd.f64("ocsvm")?;
            let alphas = rd.vec(n_sv, "ocsvm alphas")?;
            let support_vectors = rd.mat(n_sv, d, "ocsvm support vectors")?;
            AnomalyModel::OcSvm(OcSvmModel {
                support_vectors,
                alphas,
                rho,
                gamma,
                nu,
            })
        }
        ModelKind::Kde => {
            let (n, d) = (rd.len("kde")?, rd.len("kde")?);
            let bandwidth = rd.f64("kde")?;
            let points = rd.mat(n, d, "kde points")?;
            AnomalyModel::Kde(KdeModel { points, bandwidth })
        }
    };
    if let Some(s) = &standardizer {
        super::check_dim(model.dim(), s.dim())?;
    }
    Ok(SavedModel { model, standardizer })
}
