//! Model checkpoints: the fitted model together with the preprocessing it
//! was trained behind (feature subset, then standardization).
//!
//! Layout, little-endian: `"SCMD"`, `u16` version, `u8` kind, `u32` raw
//! trace length, optional feature list, optional scaler, model body.
//! Every `f64` is stored verbatim so a reloaded model predicts bit-for-bit.

use std::fmt;
use std::path::Path;

use scaforge_core::forest::{ForestConfig, ForestModel, MaxFeatures, Tree, TreeNode};
use scaforge_core::nn::{ConvBlockSpec, NetConfig, NetModel};
use scaforge_core::template::TemplateModel;
use scaforge_core::traces::{FeatureIndexList, Scaler, TraceSet};
use scaforge_core::{LogProbMatrix, Matrix, N_CLASSES};
use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, Error, FormatError};
use crate::le::{Reader, WriteLe};

pub const MAGIC: &[u8; 4] = b"SCMD";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Template,
    Rf,
    Cnn,
    Resnet,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Template => "template",
            ModelKind::Rf => "rf",
            ModelKind::Cnn => "cnn",
            ModelKind::Resnet => "resnet",
        }
    }

    fn code(self) -> u8 {
        match self {
            ModelKind::Template => 1,
            ModelKind::Rf => 2,
            ModelKind::Cnn => 3,
            ModelKind::Resnet => 4,
        }
    }

    fn from_code(code: u8) -> Result<Self, FormatError> {
        Ok(match code {
            1 => ModelKind::Template,
            2 => ModelKind::Rf,
            3 => ModelKind::Cnn,
            4 => ModelKind::Resnet,
            _ => return Err(FormatError::Corrupt("unknown model kind")),
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    Template(TemplateModel),
    Forest(ForestModel),
    Net(Box<NetModel>),
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Length of the raw traces the model accepts.
    pub input_len: usize,
    pub features: Option<FeatureIndexList>,
    pub scaler: Option<Scaler>,
    pub model: Model,
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        match &self.model {
            Model::Template(_) => ModelKind::Template,
            Model::Forest(_) => ModelKind::Rf,
            Model::Net(n) if n.config().blocks.first().is_some_and(|b| b.residual) => ModelKind::Resnet,
            Model::Net(_) => ModelKind::Cnn,
        }
    }

    /// Number of samples per trace the model itself sees.
    pub fn n_model_features(&self) -> usize {
        self.features.as_ref().map_or(self.input_len, FeatureIndexList::len)
    }

    /// Applies the stored feature selection and scaling to raw traces.
    pub fn prepare(&self, set: &TraceSet) -> Result<Matrix, scaforge_core::Error> {
        if set.trace_len() != self.input_len {
            return Err(scaforge_core::Error::Dimension { expected: self.input_len, got: set.trace_len() });
        }
        let mut x = match &self.features {
            Some(f) => set.samples().select_cols(f.as_slice()),
            None => set.samples().clone(),
        };
        if let Some(s) = &self.scaler {
            x = s.transform(&x)?;
        }
        Ok(x)
    }

    pub fn predict_log_proba(&self, set: &TraceSet) -> Result<LogProbMatrix, scaforge_core::Error> {
        let x = self.prepare(set)?;
        match &self.model {
            Model::Template(m) => m.predict_log_proba(&x),
            Model::Forest(m) => m.predict_log_proba(&x),
            Model::Net(m) => m.predict_log_proba(&x),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.put_u16(VERSION);
        out.put_u8(self.kind().code());
        out.put_len(self.input_len);
        match &self.features {
            Some(f) => {
                out.put_u8(1);
                out.put_len(f.len());
                for &i in f.as_slice() {
                    out.put_len(i);
                }
            }
            None => out.put_u8(0),
        }
        match &self.scaler {
            Some(s) => {
                out.put_u8(1);
                out.put_f64_list(s.mean());
                out.put_f64_list(s.std());
            }
            None => out.put_u8(0),
        }
        match &self.model {
            Model::Template(m) => put_template(&mut out, m),
            Model::Forest(m) => put_forest(&mut out, m),
            Model::Net(m) => put_net(&mut out, m),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(FormatError::Version(version));
        }
        let kind = ModelKind::from_code(r.u8()?)?;
        let input_len = r.len()?;
        let features = match r.u8()? {
            0 => None,
            1 => {
                let n = r.len()?;
                let idx = (0..n).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
                Some(FeatureIndexList::new(idx, input_len)?)
            }
            _ => return Err(FormatError::Corrupt("bad feature-list marker")),
        };
        let scaler = match r.u8()? {
            0 => None,
            1 => {
                let mean = r.f64_list()?;
                let std = r.f64_list()?;
                Some(Scaler::from_parts(mean, std)?)
            }
            _ => return Err(FormatError::Corrupt("bad scaler marker")),
        };
        let model = match kind {
            ModelKind::Template => Model::Template(get_template(&mut r)?),
            ModelKind::Rf => Model::Forest(get_forest(&mut r)?),
            ModelKind::Cnn | ModelKind::Resnet => Model::Net(Box::new(get_net(&mut r)?)),
        };
        r.finish()?;
        let ckpt = Checkpoint { input_len, features, scaler, model };
        if ckpt.kind() != kind {
            return Err(FormatError::Corrupt("network layout disagrees with model kind"));
        }
        let width = ckpt.n_model_features();
        let model_width = match &ckpt.model {
            Model::Template(m) => m.trace_len(),
            Model::Forest(m) => m.n_features(),
            Model::Net(m) => m.config().trace_len,
        };
        if model_width != width || ckpt.scaler.as_ref().is_some_and(|s| s.len() != width) {
            return Err(FormatError::Corrupt("model width disagrees with preprocessing"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        Self::decode(&read_file(path)?).map_err(|e| Error::format(path, e))
    }
}

fn put_template(out: &mut Vec<u8>, m: &TemplateModel) {
    out.put_len(m.trace_len());
    for &v in m.class_means.iter().chain(&m.pooled_var).chain(&m.class_log_prior) {
        out.put_f64(v);
    }
    out.extend(m.seen_mask.iter().map(|&s| s as u8));
}

fn get_template(r: &mut Reader) -> Result<TemplateModel, FormatError> {
    let l = r.len()?;
    let class_means = r.f64_vec(N_CLASSES * l)?;
    let pooled_var = r.f64_vec(l)?;
    let class_log_prior = r.f64_vec(N_CLASSES)?;
    let seen_mask = r
        .take(N_CLASSES)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(FormatError::Corrupt("bad class mask")),
        })
        .collect::<Result<_, _>>()?;
    if pooled_var.iter().any(|&v| !(v > 0.0)) {
        return Err(FormatError::Corrupt("non-positive template variance"));
    }
    Ok(TemplateModel { class_means, pooled_var, class_log_prior, seen_mask })
}

fn put_forest(out: &mut Vec<u8>, m: &ForestModel) {
    let c = m.config();
    out.put_len(c.n_trees);
    out.put_len(c.max_depth);
    out.put_len(c.min_samples_leaf);
    match c.max_features {
        MaxFeatures::Sqrt => {
            out.put_u8(0);
            out.put_u32(0);
        }
        MaxFeatures::All => {
            out.put_u8(1);
            out.put_u32(0);
        }
        MaxFeatures::Fixed(k) => {
            out.put_u8(2);
            out.put_len(k);
        }
    }
    out.put_u64(c.seed);
    out.put_len(m.n_features());
    for tree in m.trees() {
        for &v in tree.importance() {
            out.put_f64(v);
        }
        out.put_len(tree.nodes().len());
        for node in tree.nodes() {
            match node {
                TreeNode::Split { feature, threshold, left, right } => {
                    out.put_u8(0);
                    out.put_len(*feature);
                    out.put_f64(*threshold);
                    out.put_len(*left);
                    out.put_len(*right);
                }
                TreeNode::Leaf { class_dist, n_samples } => {
                    out.put_u8(1);
                    out.put_u64(*n_samples as u64);
                    out.put_u16(class_dist.len() as u16);
                    for &(class, p) in class_dist {
                        out.put_u8(class);
                        out.put_f64(p);
                    }
                }
            }
        }
    }
}

fn get_forest(r: &mut Reader) -> Result<ForestModel, FormatError> {
    let n_trees = r.len()?;
    let max_depth = r.len()?;
    let min_samples_leaf = r.len()?;
    let tag = r.u8()?;
    let k = r.len()?;
    let max_features = match tag {
        0 => MaxFeatures::Sqrt,
        1 => MaxFeatures::All,
        2 => MaxFeatures::Fixed(k),
        _ => return Err(FormatError::Corrupt("bad max_features tag")),
    };
    let config = ForestConfig { n_trees, max_depth, min_samples_leaf, max_features, seed: r.u64()? };
    let n_features = r.len()?;
    let mut trees = Vec::with_capacity(n_trees.min(4096));
    for _ in 0..n_trees {
        let importance = r.f64_vec(n_features)?;
        let n_nodes = r.len()?;
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 16));
        for _ in 0..n_nodes {
            nodes.push(match r.u8()? {
                0 => TreeNode::Split { feature: r.len()?, threshold: r.f64()?, left: r.len()?, right: r.len()? },
                1 => {
                    let n_samples = r.u64()? as usize;
                    let n_pairs = r.u16()? as usize;
                    let class_dist = (0..n_pairs).map(|_| Ok((r.u8()?, r.f64()?))).collect::<Result<_, FormatError>>()?;
                    TreeNode::Leaf { class_dist, n_samples }
                }
                _ => return Err(FormatError::Corrupt("bad tree node tag")),
            });
        }
        trees.push(Tree::from_parts(nodes, importance)?);
    }
    Ok(ForestModel::from_parts(config, n_features, trees)?)
}

fn put_net(out: &mut Vec<u8>, m: &NetModel) {
    let c = m.config();
    out.put_len(c.trace_len);
    out.put_len(c.blocks.len());
    for b in &c.blocks {
        out.put_len(b.in_channels);
        out.put_len(b.out_channels);
        out.put_len(b.kernel);
        out.put_len(b.padding);
        out.put_u8(b.batch_norm as u8);
        out.put_u8(b.pool as u8);
        out.put_u8(b.residual as u8);
    }
    out.put_len(c.dense_hidden);
    out.put_f64(c.dropout_p);
    out.put_len(c.n_classes);
    let params = m.params();
    out.put_len(params.len());
    for p in params {
        out.put_f64_list(&p.value);
    }
    let stats = m.running_stats();
    out.put_len(stats.len());
    for (mean, var) in stats {
        out.put_f64_list(mean);
        out.put_f64_list(var);
    }
}

fn get_flag(r: &mut Reader) -> Result<bool, FormatError> {
    match r.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(FormatError::Corrupt("bad boolean byte")),
    }
}

fn get_net(r: &mut Reader) -> Result<NetModel, FormatError> {
    let trace_len = r.len()?;
    let n_blocks = r.len()?;
    let mut blocks = Vec::with_capacity(n_blocks.min(64));
    for _ in 0..n_blocks {
        blocks.push(ConvBlockSpec {
            in_channels: r.len()?,
            out_channels: r.len()?,
            kernel: r.len()?,
            padding: r.len()?,
            batch_norm: get_flag(r)?,
            pool: get_flag(r)?,
            residual: get_flag(r)?,
        });
    }
    let config = NetConfig { trace_len, blocks, dense_hidden: r.len()?, dropout_p: r.f64()?, n_classes: r.len()? };
    let n_params = r.len()?;
    let params = (0..n_params).map(|_| r.f64_list()).collect::<Result<Vec<_>, _>>()?;
    let n_stats = r.len()?;
    let stats = (0..n_stats).map(|_| Ok((r.f64_list()?, r.f64_list()?))).collect::<Result<Vec<_>, FormatError>>()?;
    let mut model = NetModel::new(config, 0)?;
    model.load_state(&params, &stats)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use scaforge_core::aes::ByteIndex;
    use scaforge_core::sim::{simulate, KeyMode, LeakModel, SimConfig};
    use scaforge_core::traces::fit_scaler;

    fn data() -> TraceSet {
        let cfg = SimConfig {
            trace_len: 16,
            leak_points: FeatureIndexList::new(vec![3, 9], 16).unwrap(),
            leak_model: LeakModel::HammingWeight,
            amplitude: 1.0,
            noise_sigma: 0.5,
            baseline: 0.0,
            key_mode: KeyMode::Variable,
            byte_index: ByteIndex::default(),
            seed: 4,
        };
        simulate(&cfg, 300).unwrap()
    }

    fn assert_reloads(ckpt: &Checkpoint, set: &TraceSet) {
        let bytes = ckpt.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back.kind(), ckpt.kind());
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.predict_log_proba(set).unwrap(), ckpt.predict_log_proba(set).unwrap());
    }

    #[test]
    fn template_round_trip() {
        let set = data();
        let model = TemplateModel::fit(set.samples(), set.labels().unwrap()).unwrap();
        let ckpt = Checkpoint { input_len: 16, features: None, scaler: None, model: Model::Template(model) };
        assert_reloads(&ckpt, &set);
    }

    #[test]
    fn forest_round_trip_with_preprocessing() {
        let set = data();
        let features = FeatureIndexList::new(vec![9, 3, 0, 12], 16).unwrap();
        let reduced = scaforge_core::traces::select_features(&set, &features).unwrap();
        let scaler = fit_scaler(&reduced).unwrap();
        let x = scaler.transform(reduced.samples()).unwrap();
        let cfg = ForestConfig { n_trees: 5, max_depth: 6, ..ForestConfig::default() };
        let model = ForestModel::fit(&x, set.labels().unwrap(), cfg).unwrap();
        let ckpt = Checkpoint { input_len: 16, features: Some(features), scaler: Some(scaler), model: Model::Forest(model) };
        assert_reloads(&ckpt, &set);
    }

    #[test]
    fn net_round_trip() {
        let set = data();
        let cfg = NetConfig::with_channels(16, &[2, 3], 8, 0.5, true);
        let mut model = NetModel::new(cfg, 1).unwrap();
        let train = scaforge_core::nn::TrainConfig { epochs: 2, batch_size: 50, ..Default::default() };
        scaforge_core::nn::train(&mut model, &set, &train).unwrap();
        let ckpt = Checkpoint { input_len: 16, features: None, scaler: None, model: Model::Net(Box::new(model)) };
        assert_eq!(ckpt.kind(), ModelKind::Resnet);
        assert_reloads(&ckpt, &set);
    }

    #[test]
    fn truncation_and_kind_faults() {
        let set = data();
        let model = TemplateModel::fit(set.samples(), set.labels().unwrap()).unwrap();
        let bytes = Checkpoint { input_len: 16, features: None, scaler: None, model: Model::Template(model) }.encode();
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]), Err(FormatError::Truncated { .. })));
        let mut b = bytes.clone();
        b[6] = 9;
        assert!(matches!(Checkpoint::decode(&b), Err(FormatError::Corrupt(_))));
        let mut b = bytes;
        b[7] = 17;
        assert!(Checkpoint::decode(&b).is_err());
    }
}
