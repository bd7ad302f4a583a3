//! Multi-property prediction from composition with hierarchical correlation
//! learning.
//!
//! Two jointly trained components share one decoder: (a) encodes a
//! composition (optionally concatenated with a generated transfer
//! representation) into a diagonal-Gaussian latent, (b) encodes the target
//! property vector the same way, and a KL term aligns the two latents. The
//! decoder maps a latent sample to a per-property mean vector, draws
//! correlated property embeddings through a shared covariance factor, refines
//! them with attention layers over the fully connected property graph, and
//! reads out one scalar per property.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use hclmp_autodiff::{Adam, ParamStore, Tape, Var};
use hclmp_core::{
    Composition, DataInstance, Element, InstanceManifest, RandomSplit, SpectrumRecord, Standardizer,
};
use ndarray::{ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::nn::{derive_subseed, normal_array, Dense, Mlp, LEAKY_SLOPE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// Shared-covariance Gaussian embeddings refined by property attention.
    Hierarchical,
    /// Plain MLP decoder used by the correlation-learning ablation.
    Mlp,
}

/// Which latent is pulled toward which in the alignment term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// KL(label latent past feature latent): regularizes the path that
    /// survives at prediction time. Default.
    LabelToFeature,
    FeatureToLabel,
}

/// How the 512 draws behind the property embeddings are taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedSampling {
    /// Joint draws of the full property vector through the covariance
    /// factor; property i's embedding is coordinate i of every draw. Default.
    JointDraws,
    /// Independent per-property draws using each property's marginal
    /// standard deviation (row norm of the factor).
    MarginalDraws,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HclmpConfig {
    pub n_properties: usize,
    pub latent_dim: usize,
    pub elem_embed_dim: usize,
    pub encoder_width: usize,
    pub message_layers: usize,
    pub label_widths: Vec<usize>,
    pub property_embed_dim: usize,
    pub gat_layers: usize,
    pub gat_ffn_widths: Vec<usize>,
    pub mlp_decoder_widths: Vec<usize>,
    pub decoder_kind: DecoderKind,
    pub embed_sampling: EmbedSampling,
    pub use_transfer: bool,
    pub use_vae_alignment: bool,
    /// Whether the label arm's reconstruction error joins the loss (it is
    /// dropped automatically when alignment is off).
    pub include_label_reconstruction: bool,
    pub kl_weight: f64,
    pub kl_direction: KlDirection,
    pub lr: f64,
    /// Learning rate is halved once, for epochs after this one (1-based).
    pub lr_halving_epoch: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for HclmpConfig {
    fn default() -> Self {
        HclmpConfig {
            n_properties: 10,
            latent_dim: 128,
            elem_embed_dim: 64,
            encoder_width: 128,
            message_layers: 3,
            label_widths: vec![256, 256],
            property_embed_dim: 512,
            gat_layers: 5,
            gat_ffn_widths: vec![128, 128],
            mlp_decoder_widths: vec![256, 256, 256],
            decoder_kind: DecoderKind::Hierarchical,
            embed_sampling: EmbedSampling::JointDraws,
            use_transfer: false,
            use_vae_alignment: true,
            include_label_reconstruction: true,
            kl_weight: 0.1,
            kl_direction: KlDirection::LabelToFeature,
            lr: 0.0005,
            lr_halving_epoch: 20,
            batch_size: 128,
            epochs: 40,
            seed: 0,
        }
    }
}

impl HclmpConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("n_properties", self.n_properties),
            ("latent_dim", self.latent_dim),
            ("elem_embed_dim", self.elem_embed_dim),
            ("encoder_width", self.encoder_width),
            ("property_embed_dim", self.property_embed_dim),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.decoder_kind == DecoderKind::Hierarchical && self.gat_layers == 0 {
            return Err(ModelError::BadConfig("gat_layers must be positive".into()));
        }
        if self.gat_ffn_widths.is_empty() || self.label_widths.is_empty() || self.mlp_decoder_widths.is_empty() {
            return Err(ModelError::BadConfig("layer width lists must be non-empty".into()));
        }
        if !(self.kl_weight.is_finite() && self.kl_weight >= 0.0) {
            return Err(ModelError::BadConfig("kl_weight must be finite and non-negative".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(ModelError::BadConfig("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate in force at a 1-based epoch: halved once after the
/// configured epoch.
pub fn scheduled_lr(config: &HclmpConfig, epoch: usize) -> f64 {
    if epoch > config.lr_halving_epoch {
        config.lr * 0.5
    } else {
        config.lr
    }
}

/// Index of the smallest value; ties resolve to the earliest epoch.
pub fn argmin_first(vals: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        if *v < vals[best] {
            best = i;
        }
    }
    best
}

/// Diagonal Gaussian over a latent space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// Closed-form KL divergence KL(b || a) between diagonal Gaussians.
pub fn kl_alignment(a: &LatentGaussian, b: &LatentGaussian) -> Result<f64, ModelError> {
    if a.mu.len() != b.mu.len() || a.log_var.len() != b.log_var.len() || a.mu.len() != a.log_var.len() {
        return Err(ModelError::BadConfig(format!(
            "latent dimension mismatch: {}/{} vs {}/{}",
            a.mu.len(),
            a.log_var.len(),
            b.mu.len(),
            b.log_var.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..a.mu.len() {
        let d = b.log_var[i] - a.log_var[i];
        let quad = (a.mu[i] - b.mu[i]).powi(2) * (-a.log_var[i]).exp();
        total += 0.5 * (d.exp() + quad - 1.0 - d);
    }
    Ok(total)
}

/// Source of per-composition transfer representations.
pub trait TransferRep {
    fn dim(&self) -> usize;
    fn rep(&self, comp: &Composition) -> Result<Vec<f64>, ModelError>;
}

/// Precomputed transfer representations keyed by canonical composition key.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FixedTransfer {
    dim: usize,
    reps: BTreeMap<String, Vec<f64>>,
}

impl FixedTransfer {
    pub fn new(reps: BTreeMap<String, Vec<f64>>) -> Result<Self, ModelError> {
        let dim = match reps.values().next() {
            Some(v) => v.len(),
            None => return Err(ModelError::BadConfig("empty transfer representation map".into())),
        };
        if let Some((k, v)) = reps.iter().find(|(_, v)| v.len() != dim) {
            return Err(ModelError::BadConfig(format!(
                "transfer representation for {k} has length {} (expected {dim})",
                v.len()
            )));
        }
        Ok(FixedTransfer { dim, reps })
    }
}

impl TransferRep for FixedTransfer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rep(&self, comp: &Composition) -> Result<Vec<f64>, ModelError> {
        self.reps
            .get(&comp.canonical_key())
            .cloned()
            .ok_or(ModelError::MissingTransfer)
    }
}

/// Training inputs: train/validation records, the scaler fitted on train,
/// the element universe, and an optional manifest for checkpoints.
#[derive(Clone, Debug)]
pub struct TrainCorpus {
    pub train: Vec<SpectrumRecord>,
    pub validation: Vec<SpectrumRecord>,
    pub scaler: Standardizer,
    pub universe: Vec<Element>,
    pub manifest: Option<InstanceManifest>,
}

fn element_universe<'a>(groups: impl IntoIterator<Item = &'a [SpectrumRecord]>) -> Vec<Element> {
    let mut set = BTreeSet::new();
    for group in groups {
        for rec in group {
            set.extend(rec.composition.elements());
        }
    }
    set.into_iter().collect()
}

impl TrainCorpus {
    pub fn from_instance(instance: &DataInstance, val_fraction: f64) -> Self {
        TrainCorpus {
            train: instance.train.clone(),
            validation: instance.validation.clone(),
            scaler: instance.scaler.clone(),
            universe: element_universe([
                instance.train.as_slice(),
                instance.validation.as_slice(),
                instance.test.as_slice(),
            ]),
            manifest: Some(instance.manifest(val_fraction)),
        }
    }

    pub fn from_random_split(split: &RandomSplit) -> Self {
        TrainCorpus {
            train: split.train.clone(),
            validation: split.validation.clone(),
            scaler: split.scaler.clone(),
            universe: element_universe([
                split.train.as_slice(),
                split.validation.as_slice(),
                split.test.as_slice(),
            ]),
            manifest: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MessageLayer {
    att_src: Dense,
    att_dst: Dense,
    value: Dense,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GatLayer {
    proj: Dense,
    att_src: Dense,
    att_dst: Dense,
    ffn: Mlp,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Decoder {
    Hierarchical {
        mu_head: Dense,
        /// Raw (unconstrained) shared covariance factor; the lower triangle
        /// is used as-is and the diagonal passes through softplus.
        cov_raw: usize,
        gat: Vec<GatLayer>,
        readout: Dense,
    },
    Mlp {
        net: Mlp,
    },
}

/// Parameter-index view of the whole network. One decoder instance serves
/// both the feature arm and the label arm.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Network {
    universe: Vec<Element>,
    transfer_dim: usize,
    embed_table: usize,
    node_proj: Dense,
    messages: Vec<MessageLayer>,
    pool_gate: Dense,
    pool_value: Dense,
    feat_mu: Dense,
    feat_logvar: Dense,
    label_trunk: Option<Mlp>,
    label_mu: Option<Dense>,
    label_logvar: Option<Dense>,
    decoder: Decoder,
}

impl Network {
    fn init(config: &HclmpConfig, universe: Vec<Element>, transfer_dim: usize, store: &mut ParamStore) -> Network {
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let e = config.elem_embed_dim;
        let w = config.encoder_width;
        let l = config.latent_dim;
        let p = config.n_properties;

        let bound = (6.0 / (universe.len() + e) as f64).sqrt();
        let table = ArrayD::from_shape_fn(IxDyn(&[universe.len(), e]), |_| {
            use rand::Rng;
            rng.random_range(-bound..bound)
        });
        let embed_table = store.add("embed.table", table);

        let node_in = e + 1 + transfer_dim;
        let node_proj = Dense::new(store, &mut rng, "enc.proj", node_in, w);
        let messages = (0..config.message_layers)
            .map(|i| MessageLayer {
                att_src: Dense::new(store, &mut rng, &format!("enc.msg{i}.src"), w, 1),
                att_dst: Dense::new(store, &mut rng, &format!("enc.msg{i}.dst"), w, 1),
                value: Dense::new(store, &mut rng, &format!("enc.msg{i}.val"), w, w),
            })
            .collect();
        let pool_gate = Dense::new(store, &mut rng, "enc.pool.gate", w, 1);
        let pool_value = Dense::new(store, &mut rng, "enc.pool.value", w, w);
        let feat_mu = Dense::new(store, &mut rng, "enc.mu", w, l);
        let feat_logvar = Dense::new(store, &mut rng, "enc.logvar", w, l);
        // Both latent heads start at N(0, exp(-5) I): the means at the origin
        // so the alignment penalty opens at zero rather than at a random
        // collision (its quadratic term carries an exp(-logvar) factor), and
        // the noise small enough that sampling does not drown the decoder
        // early on.
        store.value_mut(feat_mu.w).fill(0.0);
        store.value_mut(feat_logvar.b).fill(-5.0);

        let (label_trunk, label_mu, label_logvar) = if config.use_vae_alignment {
            let mut dims = vec![p + transfer_dim];
            dims.extend_from_slice(&config.label_widths);
            let trunk = Mlp::new(store, &mut rng, "lab.trunk", &dims);
            let last = *config.label_widths.last().unwrap();
            let mu = Dense::new(store, &mut rng, "lab.mu", last, l);
            let logvar = Dense::new(store, &mut rng, "lab.logvar", last, l);
            store.value_mut(mu.w).fill(0.0);
            store.value_mut(logvar.b).fill(-5.0);
            (Some(trunk), Some(mu), Some(logvar))
        } else {
            (None, None, None)
        };

        let decoder = match config.decoder_kind {
            DecoderKind::Hierarchical => {
                let mu_head = Dense::new(store, &mut rng, "dec.mu_head", l, p);
                // The factor opens near zero: softplus(-6) puts the diagonal
                // around 0.0025 and the strict lower triangle enters the
                // draws raw, so both stay tiny until the loss asks for more.
                // Anything larger smears the embedding draws with noise the
                // decoder has to fight from the first epoch.
                let cov_raw = store.add("dec.cov_raw", ArrayD::from_shape_fn(IxDyn(&[p, p]), |idx| {
                    use rand::Rng;
                    let jitter = rng.random_range(-0.005..0.005);
                    if idx[0] == idx[1] {
                        -6.0 + jitter
                    } else {
                        jitter
                    }
                }));
                let mut gat = Vec::with_capacity(config.gat_layers);
                let mut in_dim = config.property_embed_dim;
                for i in 0..config.gat_layers {
                    let width = *config.gat_ffn_widths.last().unwrap();
                    let hidden = config.gat_ffn_widths[0];
                    let proj = Dense::new(store, &mut rng, &format!("dec.gat{i}.proj"), in_dim, width);
                    let att_src = Dense::new(store, &mut rng, &format!("dec.gat{i}.src"), width, 1);
                    let att_dst = Dense::new(store, &mut rng, &format!("dec.gat{i}.dst"), width, 1);
                    let ffn = Mlp::new(store, &mut rng, &format!("dec.gat{i}.ffn"), &[width, hidden, width]);
                    gat.push(GatLayer { proj, att_src, att_dst, ffn });
                    in_dim = width;
                }
                let readout = Dense::new(store, &mut rng, "dec.readout", in_dim, 1);
                Decoder::Hierarchical { mu_head, cov_raw, gat, readout }
            }
            DecoderKind::Mlp => {
                let mut dims = vec![l];
                dims.extend_from_slice(&config.mlp_decoder_widths);
                dims.push(p);
                Decoder::Mlp { net: Mlp::new(store, &mut rng, "dec.mlp", &dims) }
            }
        };

        Network {
            universe,
            transfer_dim,
            embed_table,
            node_proj,
            messages,
            pool_gate,
            pool_value,
            feat_mu,
            feat_logvar,
            label_trunk,
            label_mu,
            label_logvar,
            decoder,
        }
    }
}

/// Padded dense arrays for one batch of compositions.
struct BatchInput {
    b: usize,
    k: usize,
    idx: Vec<usize>,
    fracs_col: ArrayD<f64>,
    fracs_row: ArrayD<f64>,
    transfer_nodes: Option<ArrayD<f64>>,
    transfer_flat: Option<ArrayD<f64>>,
    targets_std: Option<ArrayD<f64>>,
    keys: Vec<String>,
}

fn build_batch(
    net: &Network,
    records: &[&SpectrumRecord],
    scaler: Option<&Standardizer>,
    transfer: Option<&dyn TransferRep>,
    n_properties: usize,
) -> Result<BatchInput, ModelError> {
    let b = records.len();
    let k = records.iter().map(|r| r.composition.len()).max().unwrap_or(1).max(1);
    let mut idx = vec![0usize; b * k];
    let mut fracs_col = ArrayD::<f64>::zeros(IxDyn(&[b, k, 1]));
    let mut fracs_row = ArrayD::<f64>::zeros(IxDyn(&[b, 1, k]));
    let mut keys = Vec::with_capacity(b);
    for (r, rec) in records.iter().enumerate() {
        for (j, (el, f)) in rec.composition.iter().enumerate() {
            let u = net
                .universe
                .binary_search(&el)
                .map_err(|_| ModelError::OutsideUniverse { symbol: el.symbol().to_string() })?;
            idx[r * k + j] = u;
            fracs_col[[r, j, 0]] = f;
            fracs_row[[r, 0, j]] = f;
        }
        keys.push(rec.key());
    }

    let (transfer_nodes, transfer_flat) = match transfer {
        Some(gen) => {
            let t = gen.dim();
            let mut nodes = ArrayD::<f64>::zeros(IxDyn(&[b, k, t]));
            let mut flat = ArrayD::<f64>::zeros(IxDyn(&[b, t]));
            for (r, rec) in records.iter().enumerate() {
                let rep = gen.rep(&rec.composition)?;
                if rep.len() != t {
                    return Err(ModelError::BadConfig(format!(
                        "transfer representation length {} does not match generator dim {t}",
                        rep.len()
                    )));
                }
                for (c, v) in rep.iter().enumerate() {
                    flat[[r, c]] = *v;
                    for j in 0..k {
                        nodes[[r, j, c]] = *v;
                    }
                }
            }
            (Some(nodes), Some(flat))
        }
        None => (None, None),
    };

    let targets_std = match scaler {
        Some(s) => {
            let mut y = ArrayD::<f64>::zeros(IxDyn(&[b, n_properties]));
            for (r, rec) in records.iter().enumerate() {
                if rec.absorption.len() != n_properties {
                    return Err(ModelError::BadConfig(format!(
                        "record {} has {} property channels (expected {n_properties})",
                        rec.key(),
                        rec.absorption.len()
                    )));
                }
                for (c, v) in s.standardize(&rec.absorption).iter().enumerate() {
                    y[[r, c]] = *v;
                }
            }
            Some(y)
        }
        None => None,
    };

    Ok(BatchInput { b, k, idx, fracs_col, fracs_row, transfer_nodes, transfer_flat, targets_std, keys })
}

/// Weighted soft attention over one axis: exp-logits are multiplied by
/// non-negative weights before normalization, so zero-weight (padding)
/// entries get exactly zero attention and exactly zero gradient.
fn weighted_attention(t: &Tape, logits: Var, weights: Var, axis: usize) -> Var {
    let m = t.max_axis_detached(logits, axis);
    let ew = t.exp(t.sub(logits, m));
    let wew = t.mul(ew, weights);
    t.div(wew, t.sum_axis(wew, axis))
}

fn encode_features_graph(net: &Network, config: &HclmpConfig, t: &Tape, vars: &[Var], batch: &BatchInput) -> (Var, Var) {
    let emb = t.reshape(
        t.gather(vars[net.embed_table], &batch.idx),
        &[batch.b, batch.k, config.elem_embed_dim],
    );
    let fr_col = t.leaf(batch.fracs_col.clone());
    let fr_row = t.leaf(batch.fracs_row.clone());
    let mut parts = vec![emb, fr_col];
    if let Some(nodes) = &batch.transfer_nodes {
        parts.push(t.leaf(nodes.clone()));
    }
    let x = t.concat(&parts, 2);
    let mut h = t.leaky_relu(net.node_proj.forward(t, vars, x), LEAKY_SLOPE);
    for layer in &net.messages {
        let s = layer.att_src.forward(t, vars, h);
        let d = t.swap_axes(layer.att_dst.forward(t, vars, h), 1, 2);
        let logits = t.leaky_relu(t.add(s, d), LEAKY_SLOPE);
        let alpha = weighted_attention(t, logits, fr_row, 2);
        let msg = t.matmul(alpha, layer.value.forward(t, vars, h));
        h = t.add(h, msg);
    }
    let gate = net.pool_gate.forward(t, vars, h);
    let att = weighted_attention(t, gate, fr_col, 1);
    let pooled = t.reshape(
        t.sum_axis(t.mul(att, net.pool_value.forward(t, vars, h)), 1),
        &[batch.b, config.encoder_width],
    );
    (net.feat_mu.forward(t, vars, pooled), net.feat_logvar.forward(t, vars, pooled))
}

fn encode_labels_graph(net: &Network, t: &Tape, vars: &[Var], targets: Var, transfer_flat: Option<Var>) -> (Var, Var) {
    let trunk = net.label_trunk.as_ref().expect("label arm requires alignment");
    let input = match transfer_flat {
        Some(tr) => t.concat(&[targets, tr], 1),
        None => targets,
    };
    let h = t.leaky_relu(trunk.forward(t, vars, input), LEAKY_SLOPE);
    (
        net.label_mu.as_ref().unwrap().forward(t, vars, h),
        net.label_logvar.as_ref().unwrap().forward(t, vars, h),
    )
}

/// Build the constrained covariance factor: strict lower triangle of the raw
/// matrix plus a softplus-positive diagonal with a small floor.
fn cov_factor(t: &Tape, cov_raw: Var, p: usize) -> Var {
    let strict = ArrayD::from_shape_fn(IxDyn(&[p, p]), |ix| if ix[0] > ix[1] { 1.0 } else { 0.0 });
    let eye = ArrayD::from_shape_fn(IxDyn(&[p, p]), |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 });
    let eye_leaf = t.leaf(eye);
    let lower = t.mul(cov_raw, t.leaf(strict));
    let diag = t.mul(t.softplus(cov_raw), eye_leaf);
    t.add(t.add(lower, diag), t.mul_scalar(eye_leaf, 1e-8))
}

fn decode_graph(
    net: &Network,
    config: &HclmpConfig,
    t: &Tape,
    vars: &[Var],
    z: Var,
    embed_eps: Option<&ArrayD<f64>>,
) -> Var {
    let b = t.shape(z)[0];
    let p = config.n_properties;
    match &net.decoder {
        Decoder::Mlp { net: mlp } => mlp.forward(t, vars, z),
        Decoder::Hierarchical { mu_head, cov_raw, gat, readout } => {
            let mu_prop = mu_head.forward(t, vars, z);
            let mu3 = t.reshape(mu_prop, &[b, p, 1]);
            let l_factor = cov_factor(t, vars[*cov_raw], p);
            let eps = t.leaf(embed_eps.expect("hierarchical decoder needs embedding draws").clone());
            let spread = match config.embed_sampling {
                EmbedSampling::JointDraws => t.matmul(l_factor, eps),
                EmbedSampling::MarginalDraws => {
                    let row_norm = t.sqrt(t.sum_axis(t.square(l_factor), 1));
                    t.mul(row_norm, eps)
                }
            };
            let mut h = t.add(mu3, spread);
            for layer in gat {
                let hw = layer.proj.forward(t, vars, h);
                let s = layer.att_src.forward(t, vars, hw);
                let d = t.swap_axes(layer.att_dst.forward(t, vars, hw), 1, 2);
                let logits = t.leaky_relu(t.add(s, d), LEAKY_SLOPE);
                let alpha = t.softmax(logits, 2);
                let msg = t.matmul(alpha, hw);
                let out = layer.ffn.forward(t, vars, t.leaky_relu(msg, LEAKY_SLOPE));
                h = if t.shape(h)[2] == t.shape(out)[2] { t.add(h, out) } else { out };
            }
            t.reshape(readout.forward(t, vars, h), &[b, p])
        }
    }
}

/// KL(q past p) for diagonal Gaussians, summed over latent dims, averaged
/// over the batch.
fn kl_graph(t: &Tape, mu_q: Var, lv_q: Var, mu_p: Var, lv_p: Var) -> Var {
    let d = t.sub(lv_q, lv_p);
    let quad = t.mul(t.square(t.sub(mu_p, mu_q)), t.exp(t.neg(lv_p)));
    let inner = t.sub(t.add_scalar(t.add(t.exp(d), quad), -1.0), d);
    t.mean_all(t.sum_axis(t.mul_scalar(inner, 0.5), 1))
}

fn reparam(t: &Tape, mu: Var, logvar: Var, eps: &ArrayD<f64>) -> Var {
    let std = t.exp(t.mul_scalar(logvar, 0.5));
    t.add(mu, t.mul(std, t.leaf(eps.clone())))
}

fn mae_graph(t: &Tape, pred: Var, target: Var) -> Var {
    t.mean_all(t.abs(t.sub(pred, target)))
}

/// Fresh noise for one stochastic forward pass over a batch.
struct NoiseDraws {
    eps_a: ArrayD<f64>,
    embed_a: Option<ArrayD<f64>>,
    eps_b: Option<ArrayD<f64>>,
    embed_b: Option<ArrayD<f64>>,
}

impl NoiseDraws {
    fn draw(config: &HclmpConfig, b: usize, seed: u64) -> NoiseDraws {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let hier = config.decoder_kind == DecoderKind::Hierarchical;
        let eps_a = normal_array(&mut rng, &[b, config.latent_dim]);
        let embed_a = hier.then(|| normal_array(&mut rng, &[b, config.n_properties, config.property_embed_dim]));
        let (eps_b, embed_b) = if config.use_vae_alignment {
            (
                Some(normal_array(&mut rng, &[b, config.latent_dim])),
                hier.then(|| normal_array(&mut rng, &[b, config.n_properties, config.property_embed_dim])),
            )
        } else {
            (None, None)
        };
        NoiseDraws { eps_a, embed_a, eps_b, embed_b }
    }
}

/// A model under construction or evaluation: architecture plus parameters.
pub struct HclmpModel {
    pub config: HclmpConfig,
    net: Network,
    pub params: ParamStore,
}

impl HclmpModel {
    pub fn new(config: &HclmpConfig, universe: Vec<Element>, transfer_dim: usize) -> Result<HclmpModel, ModelError> {
        config.validate()?;
        if universe.is_empty() {
            return Err(ModelError::BadConfig("empty element universe".into()));
        }
        if config.use_transfer && transfer_dim == 0 {
            return Err(ModelError::BadConfig("use_transfer requires a transfer dimension".into()));
        }
        let mut universe = universe;
        universe.sort();
        universe.dedup();
        let mut params = ParamStore::new();
        let net = Network::init(config, universe, if config.use_transfer { transfer_dim } else { 0 }, &mut params);
        Ok(HclmpModel { config: config.clone(), net, params })
    }

    pub fn universe(&self) -> &[Element] {
        &self.net.universe
    }

    /// (in, out) dimensions of the decoder's dense layers, in order.
    pub fn decoder_dims(&self) -> Vec<(usize, usize)> {
        match &self.net.decoder {
            Decoder::Mlp { net } => net.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect(),
            Decoder::Hierarchical { mu_head, gat, readout, .. } => {
                let mut dims = vec![(mu_head.in_dim, mu_head.out_dim)];
                for layer in gat {
                    dims.push((layer.proj.in_dim, layer.proj.out_dim));
                }
                dims.push((readout.in_dim, readout.out_dim));
                dims
            }
        }
    }

    /// Name of the shared covariance factor parameter, when one exists.
    pub fn cov_param_name(&self) -> Option<&'static str> {
        match self.net.decoder {
            Decoder::Hierarchical { .. } => Some("dec.cov_raw"),
            Decoder::Mlp { .. } => None,
        }
    }

    /// Constrained covariance factor L (lower triangular, positive diagonal)
    /// evaluated at the given parameters.
    pub fn covariance_factor(&self, params: &ParamStore) -> Option<ArrayD<f64>> {
        match &self.net.decoder {
            Decoder::Hierarchical { cov_raw, .. } => {
                let t = Tape::new();
                let vars = params.bind(&t);
                Some(t.value(cov_factor(&t, vars[*cov_raw], self.config.n_properties)))
            }
            Decoder::Mlp { .. } => None,
        }
    }

    fn loss_graph(
        &self,
        params: &ParamStore,
        batch: &BatchInput,
        noise: &NoiseDraws,
    ) -> (Tape, Vec<Var>, Var) {
        let t = Tape::new();
        let vars = params.bind(&t);
        let y = t.leaf(batch.targets_std.clone().expect("training batch needs targets"));
        let (mu_a, lv_a) = encode_features_graph(&self.net, &self.config, &t, &vars, batch);
        let z_a = reparam(&t, mu_a, lv_a, &noise.eps_a);
        let pred_a = decode_graph(&self.net, &self.config, &t, &vars, z_a, noise.embed_a.as_ref());
        let mut loss = mae_graph(&t, pred_a, y);
        if self.config.use_vae_alignment {
            let transfer_flat = batch.transfer_flat.as_ref().map(|f| t.leaf(f.clone()));
            let (mu_b, lv_b) = encode_labels_graph(&self.net, &t, &vars, y, transfer_flat);
            if self.config.include_label_reconstruction {
                let z_b = reparam(&t, mu_b, lv_b, noise.eps_b.as_ref().unwrap());
                let recon = decode_graph(&self.net, &self.config, &t, &vars, z_b, noise.embed_b.as_ref());
                loss = t.add(loss, mae_graph(&t, recon, y));
            }
            let kl = match self.config.kl_direction {
                KlDirection::LabelToFeature => kl_graph(&t, mu_b, lv_b, mu_a, lv_a),
                KlDirection::FeatureToLabel => kl_graph(&t, mu_a, lv_a, mu_b, lv_b),
            };
            loss = t.add(loss, t.mul_scalar(kl, self.config.kl_weight));
        }
        (t, vars, loss)
    }

    /// Training loss of one batch under the given parameters, with noise
    /// fixed by `noise_seed` (identical seed gives an identical function of
    /// the parameters, which finite-difference checks rely on).
    pub fn loss_on_batch(
        &self,
        params: &ParamStore,
        records: &[&SpectrumRecord],
        scaler: &Standardizer,
        transfer: Option<&dyn TransferRep>,
        noise_seed: u64,
    ) -> Result<f64, ModelError> {
        let batch = build_batch(&self.net, records, Some(scaler), transfer, self.config.n_properties)?;
        let noise = NoiseDraws::draw(&self.config, batch.b, noise_seed);
        let (t, _, loss) = self.loss_graph(params, &batch, &noise);
        Ok(t.scalar_value(loss))
    }

    /// Loss and analytic parameter gradients for one batch.
    pub fn loss_and_grads_on_batch(
        &self,
        params: &ParamStore,
        records: &[&SpectrumRecord],
        scaler: &Standardizer,
        transfer: Option<&dyn TransferRep>,
        noise_seed: u64,
    ) -> Result<(f64, Vec<Option<ArrayD<f64>>>), ModelError> {
        let batch = build_batch(&self.net, records, Some(scaler), transfer, self.config.n_properties)?;
        let noise = NoiseDraws::draw(&self.config, batch.b, noise_seed);
        let (t, vars, loss) = self.loss_graph(params, &batch, &noise);
        let grads = t.grad(loss, &vars);
        let value = t.scalar_value(loss);
        Ok((value, grads.into_iter().map(|g| g.map(|v| t.value(v))).collect()))
    }

    /// Deterministic standardized predictions: latent mean, embedding draws
    /// seeded per composition so results do not depend on batching.
    pub fn predict_standardized(
        &self,
        params: &ParamStore,
        records: &[&SpectrumRecord],
        transfer: Option<&dyn TransferRep>,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(self.config.batch_size.max(1)) {
            let batch = build_batch(&self.net, chunk, None, transfer, self.config.n_properties)?;
            let embed = self.deterministic_embed_draws(&batch);
            let t = Tape::new();
            let vars = params.bind(&t);
            let (mu_a, _) = encode_features_graph(&self.net, &self.config, &t, &vars, &batch);
            let pred = decode_graph(&self.net, &self.config, &t, &vars, mu_a, embed.as_ref());
            let values = t.value(pred);
            for r in 0..batch.b {
                let row: Vec<f64> = (0..self.config.n_properties).map(|c| values[[r, c]]).collect();
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::Diverged { epoch: 0 });
                }
                out.push(row);
            }
        }
        Ok(out)
    }

    fn deterministic_embed_draws(&self, batch: &BatchInput) -> Option<ArrayD<f64>> {
        if self.config.decoder_kind != DecoderKind::Hierarchical {
            return None;
        }
        let p = self.config.n_properties;
        let d = self.config.property_embed_dim;
        let mut eps = ArrayD::<f64>::zeros(IxDyn(&[batch.b, p, d]));
        for (r, key) in batch.keys.iter().enumerate() {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_subseed(self.config.seed, key));
            let draw = normal_array(&mut rng, &[p, d]);
            for i in 0..p {
                for j in 0..d {
                    eps[[r, i, j]] = draw[[i, j]];
                }
            }
        }
        Some(eps)
    }

    /// Encode one composition into its latent Gaussian (deterministic).
    pub fn encode_features(
        &self,
        params: &ParamStore,
        comp: &Composition,
        transfer: Option<&dyn TransferRep>,
    ) -> Result<LatentGaussian, ModelError> {
        let rec = SpectrumRecord { composition: comp.clone(), absorption: vec![], provenance: None };
        let batch = build_batch(&self.net, &[&rec], None, transfer, self.config.n_properties)?;
        let t = Tape::new();
        let vars = params.bind(&t);
        let (mu, lv) = encode_features_graph(&self.net, &self.config, &t, &vars, &batch);
        let mu = t.value(mu);
        let lv = t.value(lv);
        Ok(LatentGaussian {
            mu: (0..self.config.latent_dim).map(|i| mu[[0, i]]).collect(),
            log_var: (0..self.config.latent_dim).map(|i| lv[[0, i]]).collect(),
        })
    }

    /// Encode one standardized target vector into its latent Gaussian.
    pub fn encode_labels(
        &self,
        params: &ParamStore,
        targets_std: &[f64],
        transfer_rep: Option<&[f64]>,
    ) -> Result<LatentGaussian, ModelError> {
        if self.net.label_trunk.is_none() {
            return Err(ModelError::BadConfig("label encoder disabled (alignment is off)".into()));
        }
        if targets_std.len() != self.config.n_properties {
            return Err(ModelError::BadConfig(format!(
                "target length {} does not match n_properties {}",
                targets_std.len(),
                self.config.n_properties
            )));
        }
        if transfer_rep.map(|r| r.len()).unwrap_or(0) != self.net.transfer_dim {
            return Err(ModelError::BadConfig("transfer representation does not match model".into()));
        }
        let t = Tape::new();
        let vars = params.bind(&t);
        let y = t.leaf(ArrayD::from_shape_vec(IxDyn(&[1, targets_std.len()]), targets_std.to_vec()).unwrap());
        let tr = transfer_rep
            .map(|r| t.leaf(ArrayD::from_shape_vec(IxDyn(&[1, r.len()]), r.to_vec()).unwrap()));
        let (mu, lv) = encode_labels_graph(&self.net, &t, &vars, y, tr);
        let mu = t.value(mu);
        let lv = t.value(lv);
        Ok(LatentGaussian {
            mu: (0..self.config.latent_dim).map(|i| mu[[0, i]]).collect(),
            log_var: (0..self.config.latent_dim).map(|i| lv[[0, i]]).collect(),
        })
    }

    /// Decode one latent vector with a fixed embedding-draw seed; returns
    /// standardized property predictions.
    pub fn decode_deterministic(&self, params: &ParamStore, z: &[f64], embed_seed: u64) -> Result<Vec<f64>, ModelError> {
        if z.len() != self.config.latent_dim {
            return Err(ModelError::BadConfig(format!(
                "latent length {} does not match latent_dim {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        let t = Tape::new();
        let vars = params.bind(&t);
        let zv = t.leaf(ArrayD::from_shape_vec(IxDyn(&[1, z.len()]), z.to_vec()).unwrap());
        let embed = (self.config.decoder_kind == DecoderKind::Hierarchical).then(|| {
            let mut rng = ChaCha12Rng::seed_from_u64(embed_seed);
            normal_array(&mut rng, &[1, self.config.n_properties, self.config.property_embed_dim])
        });
        let pred = decode_graph(&self.net, &self.config, &t, &vars, zv, embed.as_ref());
        let values = t.value(pred);
        let row: Vec<f64> = (0..self.config.n_properties).map(|c| values[[0, c]]).collect();
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Diverged { epoch: 0 });
        }
        Ok(row)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mae: f64,
}

pub const HCLMP_CHECKPOINT_FORMAT: &str = "hclmp-model-v1";

/// Trained model: best-epoch parameters plus everything needed to reproduce
/// and deploy the run.
#[derive(Serialize, Deserialize)]
pub struct TrainedHclmp {
    pub format: String,
    pub config: HclmpConfig,
    pub manifest: Option<InstanceManifest>,
    pub scaler: Standardizer,
    net: Network,
    params: ParamStore,
    pub log: Vec<EpochLog>,
    pub selected_epoch: usize,
}

impl TrainedHclmp {
    fn model(&self) -> HclmpModel {
        HclmpModel { config: self.config.clone(), net: self.net.clone(), params: self.params.clone() }
    }

    pub fn universe(&self) -> &[Element] {
        &self.net.universe
    }

    pub fn decoder_dims(&self) -> Vec<(usize, usize)> {
        self.model().decoder_dims()
    }

    pub fn covariance_factor(&self) -> Option<ArrayD<f64>> {
        let m = self.model();
        m.covariance_factor(&self.params)
    }

    pub fn param_fingerprint(&self) -> u64 {
        self.params.fingerprint()
    }

    fn check_transfer(&self, transfer: &Option<&dyn TransferRep>) -> Result<(), ModelError> {
        match (self.config.use_transfer, transfer.is_some()) {
            (true, false) => Err(ModelError::MissingTransfer),
            (false, true) => Err(ModelError::BadConfig(
                "model was trained without transfer representations".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Deterministic predictions in original property units.
    pub fn predict(
        &self,
        comps: &[Composition],
        transfer: Option<&dyn TransferRep>,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self
            .predict_standardized(comps, transfer)?
            .into_iter()
            .map(|row| self.scaler.destandardize(&row))
            .collect())
    }

    /// Deterministic predictions in standardized units.
    pub fn predict_standardized(
        &self,
        comps: &[Composition],
        transfer: Option<&dyn TransferRep>,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        self.check_transfer(&transfer)?;
        let records: Vec<SpectrumRecord> = comps
            .iter()
            .map(|c| SpectrumRecord { composition: c.clone(), absorption: vec![], provenance: None })
            .collect();
        let refs: Vec<&SpectrumRecord> = records.iter().collect();
        let model = self.model();
        model.predict_standardized(&self.params, &refs, transfer)
    }

    /// Monte-Carlo inference: average of `passes` stochastic forward passes
    /// (sampled latent and embedding draws), in original units.
    pub fn predict_mc(
        &self,
        comps: &[Composition],
        transfer: Option<&dyn TransferRep>,
        passes: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        self.check_transfer(&transfer)?;
        if passes == 0 {
            return Err(ModelError::BadConfig("passes must be positive".into()));
        }
        let records: Vec<SpectrumRecord> = comps
            .iter()
            .map(|c| SpectrumRecord { composition: c.clone(), absorption: vec![], provenance: None })
            .collect();
        let mut sums = vec![vec![0.0; self.config.n_properties]; comps.len()];
        for pass in 0..passes {
            for (start, chunk) in records.chunks(self.config.batch_size.max(1)).enumerate().map(|(i, c)| (i * self.config.batch_size.max(1), c)) {
                let refs: Vec<&SpectrumRecord> = chunk.iter().collect();
                let batch = build_batch(&self.net, &refs, None, transfer, self.config.n_properties)?;
                let noise_seed = derive_subseed(seed, &format!("mc-pass-{pass}-{start}"));
                let noise = NoiseDraws::draw(&self.config, batch.b, noise_seed);
                let t = Tape::new();
                let vars = self.params.bind(&t);
                let (mu_a, lv_a) = encode_features_graph(&self.net, &self.config, &t, &vars, &batch);
                let z = reparam(&t, mu_a, lv_a, &noise.eps_a);
                let pred = decode_graph(&self.net, &self.config, &t, &vars, z, noise.embed_a.as_ref());
                let values = t.value(pred);
                for r in 0..batch.b {
                    for c in 0..self.config.n_properties {
                        sums[start + r][c] += values[[r, c]];
                    }
                }
            }
        }
        Ok(sums
            .into_iter()
            .map(|row| {
                let std_row: Vec<f64> = row.into_iter().map(|v| v / passes as f64).collect();
                self.scaler.destandardize(&std_row)
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainedHclmp, ModelError> {
        let file = std::fs::File::open(path)?;
        let model: TrainedHclmp = serde_json::from_reader(std::io::BufReader::new(file))?;
        if model.format != HCLMP_CHECKPOINT_FORMAT {
            return Err(ModelError::BadCheckpoint { expected: HCLMP_CHECKPOINT_FORMAT, found: model.format });
        }
        Ok(model)
    }

    /// Per-epoch log as CSV (epoch, learning rate, train loss, validation
    /// standardized MAE).
    pub fn write_log_csv(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = csv::Writer::from_path(path).map_err(hclmp_core::CoreError::from)?;
        w.write_record(["epoch", "lr", "train_loss", "val_mae"]).map_err(hclmp_core::CoreError::from)?;
        for e in &self.log {
            w.write_record([
                e.epoch.to_string(),
                format!("{}", e.lr),
                format!("{}", e.train_loss),
                format!("{}", e.val_mae),
            ])
            .map_err(hclmp_core::CoreError::from)?;
        }
        w.flush().map_err(hclmp_core::CoreError::from)?;
        Ok(())
    }
}

/// Jointly train the feature and label arms on one curated corpus and return
/// the best-epoch model (minimum validation standardized MAE, earliest epoch
/// on ties).
pub fn train_hclmp(
    corpus: &TrainCorpus,
    transfer: Option<&dyn TransferRep>,
    config: &HclmpConfig,
) -> Result<TrainedHclmp, ModelError> {
    config.validate()?;
    if config.use_transfer != transfer.is_some() {
        return Err(ModelError::BadConfig(
            "transfer generator presence must match use_transfer".into(),
        ));
    }
    if corpus.train.is_empty() {
        return Err(ModelError::TooFewRecords { context: "training split", needed: 1, got: 0 });
    }
    if corpus.validation.is_empty() {
        return Err(ModelError::TooFewRecords { context: "validation split", needed: 1, got: 0 });
    }
    if corpus.scaler.dims() != config.n_properties {
        return Err(ModelError::BadConfig(format!(
            "scaler has {} channels, config expects {}",
            corpus.scaler.dims(),
            config.n_properties
        )));
    }

    let transfer_dim = transfer.map(|g| g.dim()).unwrap_or(0);
    let model = HclmpModel::new(config, corpus.universe.clone(), transfer_dim)?;
    let mut params = model.params.clone();
    let mut adam = Adam::new(&params, config.lr);

    let val_refs: Vec<&SpectrumRecord> = corpus.validation.iter().collect();
    let val_targets: Vec<Vec<f64>> = corpus.validation.iter().map(|r| corpus.scaler.standardize(&r.absorption)).collect();

    let mut log = Vec::with_capacity(config.epochs);
    let mut best_params = params.clone();
    let mut best_mae = f64::INFINITY;
    let mut selected_epoch = 0usize;

    let mut order: Vec<usize> = (0..corpus.train.len()).collect();
    for epoch in 1..=config.epochs {
        adam.set_lr(scheduled_lr(config, epoch));
        let mut shuffle_rng = ChaCha12Rng::seed_from_u64(derive_subseed(config.seed, &format!("shuffle-{epoch}")));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let records: Vec<&SpectrumRecord> = chunk.iter().map(|&i| &corpus.train[i]).collect();
            let noise_seed = derive_subseed(config.seed, &format!("noise-{epoch}-{bi}"));
            let (loss, grads) =
                model.loss_and_grads_on_batch(&params, &records, &corpus.scaler, transfer, noise_seed)?;
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            adam.step(&mut params, &grads);
            loss_sum += loss * records.len() as f64;
            count += records.len();
        }
        let train_loss = loss_sum / count as f64;

        let preds = model.predict_standardized(&params, &val_refs, transfer)?;
        let mut err = 0.0;
        for (pred, target) in preds.iter().zip(&val_targets) {
            for (p, y) in pred.iter().zip(target) {
                err += (p - y).abs();
            }
        }
        let val_mae = err / (preds.len() * config.n_properties) as f64;
        if !val_mae.is_finite() {
            return Err(ModelError::Diverged { epoch });
        }
        log.push(EpochLog { epoch, lr: scheduled_lr(config, epoch), train_loss, val_mae });
        if val_mae < best_mae {
            best_mae = val_mae;
            best_params.assign(&params);
            selected_epoch = epoch;
        }
    }

    Ok(TrainedHclmp {
        format: HCLMP_CHECKPOINT_FORMAT.to_string(),
        config: config.clone(),
        manifest: corpus.manifest.clone(),
        scaler: corpus.scaler.clone(),
        net: model.net,
        params: best_params,
        log,
        selected_epoch,
    })
}
