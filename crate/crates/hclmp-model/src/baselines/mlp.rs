//! Plain feed-forward baseline: fractional composition vector in, all
//! property channels out, with an optional warm start whose early layers are
//! pre-trained on DOS regression and carried over (the final layer is
//! re-initialized for the new output width).

use std::collections::BTreeSet;
use std::path::Path;

use hclmp_autodiff::{Adam, ParamStore, Tape};
use hclmp_core::{Composition, DosRecord, Element, Standardizer, DOS_BINS};
use ndarray::{ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::hclmp::{scheduled_lr, EpochLog, HclmpConfig, TrainCorpus};
use crate::nn::{composition_vector, derive_subseed, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpBaselineConfig {
    pub hidden: Vec<usize>,
    pub warm_up: bool,
    pub warm_up_epochs: usize,
    pub lr: f64,
    pub lr_halving_epoch: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MlpBaselineConfig {
    fn default() -> Self {
        MlpBaselineConfig {
            hidden: vec![256, 128, 64],
            warm_up: false,
            warm_up_epochs: 20,
            lr: 1e-3,
            lr_halving_epoch: 20,
            batch_size: 128,
            epochs: 40,
            seed: 0,
        }
    }
}

impl MlpBaselineConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.hidden.is_empty() {
            return Err(ModelError::BadConfig("hidden widths must be non-empty".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(ModelError::BadConfig("batch_size and epochs must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(ModelError::BadConfig("lr must be positive".into()));
        }
        Ok(())
    }
}

pub const MLP_CHECKPOINT_FORMAT: &str = "mlp-baseline-v1";

#[derive(Serialize, Deserialize)]
pub struct TrainedMlpBaseline {
    pub format: String,
    pub config: MlpBaselineConfig,
    pub universe: Vec<Element>,
    pub scaler: Standardizer,
    pub warm_started: bool,
    net: Mlp,
    params: ParamStore,
    pub log: Vec<EpochLog>,
    pub selected_epoch: usize,
}

fn comp_matrix(comps: &[&Composition], universe: &[Element]) -> Result<ArrayD<f64>, ModelError> {
    let mut x = ArrayD::<f64>::zeros(IxDyn(&[comps.len(), universe.len()]));
    for (r, comp) in comps.iter().enumerate() {
        for (c, v) in composition_vector(comp, universe)?.iter().enumerate() {
            x[[r, c]] = *v;
        }
    }
    Ok(x)
}

fn forward_values(net: &Mlp, params: &ParamStore, x: ArrayD<f64>) -> ArrayD<f64> {
    let t = Tape::new();
    let vars = params.bind(&t);
    let out = net.forward(&t, &vars, t.leaf(x));
    t.value(out)
}

fn mae_step(
    net: &Mlp,
    params: &ParamStore,
    x: ArrayD<f64>,
    y: ArrayD<f64>,
) -> (f64, Vec<Option<ArrayD<f64>>>) {
    let t = Tape::new();
    let vars = params.bind(&t);
    let pred = net.forward(&t, &vars, t.leaf(x));
    let loss = t.mean_all(t.abs(t.sub(pred, t.leaf(y))));
    let grads = t.grad(loss, &vars);
    (
        t.scalar_value(loss),
        grads.into_iter().map(|g| g.map(|v| t.value(v))).collect(),
    )
}

/// Pre-train an identically shaped net on standardized DOS regression and
/// return its parameter store (output layer sized for DOS channels).
fn warm_up_params(
    universe: &[Element],
    config: &MlpBaselineConfig,
    corpus: &[DosRecord],
) -> Result<ParamStore, ModelError> {
    if corpus.len() < 2 {
        return Err(ModelError::TooFewRecords { context: "warm-up corpus", needed: 2, got: corpus.len() });
    }
    let scaler = Standardizer::fit(corpus.iter().map(|r| r.dos.as_slice()))?;
    let mut dims = vec![universe.len()];
    dims.extend_from_slice(&config.hidden);
    dims.push(DOS_BINS);
    let mut params = ParamStore::new();
    let mut rng = ChaCha12Rng::seed_from_u64(derive_subseed(config.seed, "warm-up"));
    let net = Mlp::new(&mut params, &mut rng, "net", &dims);

    let mut adam = Adam::new(&params, config.lr);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 1..=config.warm_up_epochs {
        let mut shuffle_rng = ChaCha12Rng::seed_from_u64(derive_subseed(config.seed, &format!("warm-shuffle-{epoch}")));
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let comps: Vec<&Composition> = chunk.iter().map(|&i| &corpus[i].composition).collect();
            let x = comp_matrix(&comps, universe)?;
            let mut y = ArrayD::<f64>::zeros(IxDyn(&[chunk.len(), DOS_BINS]));
            for (r, &i) in chunk.iter().enumerate() {
                for (c, v) in scaler.standardize(&corpus[i].dos).iter().enumerate() {
                    y[[r, c]] = *v;
                }
            }
            let (loss, grads) = mae_step(&net, &params, x, y);
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            adam.step(&mut params, &grads);
        }
    }
    Ok(params)
}

/// Train the baseline on a curated corpus; `warm_up` supplies the transfer
/// corpus when the config asks for a warm start.
pub fn train_mlp_baseline(
    corpus: &TrainCorpus,
    config: &MlpBaselineConfig,
    warm_up: Option<&[DosRecord]>,
) -> Result<TrainedMlpBaseline, ModelError> {
    config.validate()?;
    if config.warm_up != warm_up.is_some() {
        return Err(ModelError::BadConfig("warm-up corpus presence must match config.warm_up".into()));
    }
    if corpus.train.is_empty() {
        return Err(ModelError::TooFewRecords { context: "training split", needed: 1, got: 0 });
    }
    if corpus.validation.is_empty() {
        return Err(ModelError::TooFewRecords { context: "validation split", needed: 1, got: 0 });
    }
    let n_out = corpus.scaler.dims();

    // One element universe covers both domains so the input layer can be
    // transferred verbatim.
    let mut universe: BTreeSet<Element> = corpus.universe.iter().copied().collect();
    if let Some(dos) = warm_up {
        for rec in dos {
            universe.extend(rec.composition.elements());
        }
    }
    let universe: Vec<Element> = universe.into_iter().collect();

    let mut dims = vec![universe.len()];
    dims.extend_from_slice(&config.hidden);
    dims.push(n_out);
    let mut params = ParamStore::new();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let net = Mlp::new(&mut params, &mut rng, "net", &dims);

    let warm_started = if let Some(dos) = warm_up {
        let warm = warm_up_params(&universe, config, dos)?;
        // Carry over everything but the output layer.
        for layer in &net.layers[..net.layers.len() - 1] {
            for idx in [layer.w, layer.b] {
                *params.value_mut(idx) = warm.value(idx).clone();
            }
        }
        true
    } else {
        false
    };

    let schedule = HclmpConfig {
        lr: config.lr,
        lr_halving_epoch: config.lr_halving_epoch,
        ..HclmpConfig::default()
    };
    let mut adam = Adam::new(&params, config.lr);
    let val_comps: Vec<&Composition> = corpus.validation.iter().map(|r| &r.composition).collect();
    let val_x = comp_matrix(&val_comps, &universe)?;
    let val_targets: Vec<Vec<f64>> =
        corpus.validation.iter().map(|r| corpus.scaler.standardize(&r.absorption)).collect();

    let mut log = Vec::with_capacity(config.epochs);
    let mut best_params = params.clone();
    let mut best_mae = f64::INFINITY;
    let mut selected_epoch = 0usize;
    let mut order: Vec<usize> = (0..corpus.train.len()).collect();

    for epoch in 1..=config.epochs {
        adam.set_lr(scheduled_lr(&schedule, epoch));
        let mut shuffle_rng = ChaCha12Rng::seed_from_u64(derive_subseed(config.seed, &format!("shuffle-{epoch}")));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let comps: Vec<&Composition> = chunk.iter().map(|&i| &corpus.train[i].composition).collect();
            let x = comp_matrix(&comps, &universe)?;
            let mut y = ArrayD::<f64>::zeros(IxDyn(&[chunk.len(), n_out]));
            for (r, &i) in chunk.iter().enumerate() {
                for (c, v) in corpus.scaler.standardize(&corpus.train[i].absorption).iter().enumerate() {
                    y[[r, c]] = *v;
                }
            }
            let (loss, grads) = mae_step(&net, &params, x, y);
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            adam.step(&mut params, &grads);
            loss_sum += loss * chunk.len() as f64;
            count += chunk.len();
        }

        let preds = forward_values(&net, &params, val_x.clone());
        let mut err = 0.0;
        for (r, target) in val_targets.iter().enumerate() {
            for (c, y) in target.iter().enumerate() {
                err += (preds[[r, c]] - y).abs();
            }
        }
        let val_mae = err / (val_targets.len() * n_out) as f64;
        if !val_mae.is_finite() {
            return Err(ModelError::Diverged { epoch });
        }
        log.push(EpochLog {
            epoch,
            lr: scheduled_lr(&schedule, epoch),
            train_loss: loss_sum / count as f64,
            val_mae,
        });
        if val_mae < best_mae {
            best_mae = val_mae;
            best_params.assign(&params);
            selected_epoch = epoch;
        }
    }

    Ok(TrainedMlpBaseline {
        format: MLP_CHECKPOINT_FORMAT.to_string(),
        config: config.clone(),
        universe,
        scaler: corpus.scaler.clone(),
        warm_started,
        net,
        params: best_params,
        log,
        selected_epoch,
    })
}

impl TrainedMlpBaseline {
    pub fn predict_standardized(&self, comps: &[Composition]) -> Result<Vec<Vec<f64>>, ModelError> {
        let refs: Vec<&Composition> = comps.iter().collect();
        let x = comp_matrix(&refs, &self.universe)?;
        let out = forward_values(&self.net, &self.params, x);
        let n_out = self.scaler.dims();
        let mut rows = Vec::with_capacity(comps.len());
        for r in 0..comps.len() {
            let row: Vec<f64> = (0..n_out).map(|c| out[[r, c]]).collect();
            if row.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Diverged { epoch: 0 });
            }
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn predict(&self, comps: &[Composition]) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self
            .predict_standardized(comps)?
            .into_iter()
            .map(|row| self.scaler.destandardize(&row))
            .collect())
    }

    pub fn param_fingerprint(&self) -> u64 {
        self.params.fingerprint()
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.net.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainedMlpBaseline, ModelError> {
        let file = std::fs::File::open(path)?;
        let model: TrainedMlpBaseline = serde_json::from_reader(std::io::BufReader::new(file))?;
        if model.format != MLP_CHECKPOINT_FORMAT {
            return Err(ModelError::BadCheckpoint { expected: MLP_CHECKPOINT_FORMAT, found: model.format });
        }
        Ok(model)
    }
}
