//! Conditional Wasserstein GAN over density-of-states records and the frozen
//! transfer-representation generator built from it.
//!
//! The generator maps (composition vector, noise) to a standardized
//! 161-channel DOS curve; the critic scores (composition, DOS) pairs and is
//! trained with a gradient penalty. After training, the generator is frozen
//! and deployed as a per-composition representation: the mean DOS over a
//! fixed number of noise samples.

use std::path::Path;

use hclmp_autodiff::{Adam, ParamStore, Tape, Var};
use hclmp_core::{Composition, DosRecord, Element, Standardizer, DOS_BINS};
use ndarray::{ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::hclmp::TransferRep;
use crate::nn::{composition_vector, derive_subseed, normal_array, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CwganConfig {
    pub noise_dim: usize,
    pub gen_widths: Vec<usize>,
    pub critic_widths: Vec<usize>,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    pub gp_weight: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Noise draws averaged into the deployed transfer representation.
    pub sample_count: usize,
    /// Noise draws used for the per-epoch validation MAE (kept smaller than
    /// sample_count to keep epochs cheap).
    pub val_samples: usize,
    pub seed: u64,
}

impl Default for CwganConfig {
    fn default() -> Self {
        CwganConfig {
            noise_dim: 32,
            gen_widths: vec![256, 512, 256],
            critic_widths: vec![256, 256, 128],
            critic_steps: 5,
            gp_weight: 10.0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            epochs: 40,
            batch_size: 64,
            sample_count: 100,
            val_samples: 25,
            seed: 0,
        }
    }
}

impl CwganConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.noise_dim == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(ModelError::BadConfig("noise_dim, batch_size, epochs must be positive".into()));
        }
        if self.gen_widths.is_empty() || self.critic_widths.is_empty() {
            return Err(ModelError::BadConfig("generator and critic widths must be non-empty".into()));
        }
        if self.critic_steps == 0 || self.sample_count == 0 || self.val_samples == 0 {
            return Err(ModelError::BadConfig("critic_steps and sample counts must be positive".into()));
        }
        if !(self.gp_weight.is_finite() && self.gp_weight >= 0.0) {
            return Err(ModelError::BadConfig("gp_weight must be finite and non-negative".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(ModelError::BadConfig("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Generator and critic over one parameter store. Generator parameters are
/// added first so the frozen generator can carry a prefix of the store.
pub struct CwganModel {
    pub config: CwganConfig,
    pub universe: Vec<Element>,
    pub scaler: Standardizer,
    gen: Mlp,
    gen_param_count: usize,
    critic: Mlp,
    pub params: ParamStore,
}

impl CwganModel {
    pub fn new(config: &CwganConfig, universe: Vec<Element>, scaler: Standardizer) -> Result<CwganModel, ModelError> {
        config.validate()?;
        if universe.is_empty() {
            return Err(ModelError::BadConfig("empty element universe".into()));
        }
        if scaler.dims() != DOS_BINS {
            return Err(ModelError::BadConfig(format!(
                "scaler has {} channels, expected {DOS_BINS}",
                scaler.dims()
            )));
        }
        let mut universe = universe;
        universe.sort();
        universe.dedup();
        let mut params = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

        let mut gen_dims = vec![universe.len() + config.noise_dim];
        gen_dims.extend_from_slice(&config.gen_widths);
        gen_dims.push(DOS_BINS);
        let gen = Mlp::new(&mut params, &mut rng, "gen", &gen_dims);
        let gen_param_count = params.len();

        let mut critic_dims = vec![universe.len() + DOS_BINS];
        critic_dims.extend_from_slice(&config.critic_widths);
        critic_dims.push(1);
        let critic = Mlp::new(&mut params, &mut rng, "critic", &critic_dims);

        Ok(CwganModel { config: config.clone(), universe, scaler, gen, gen_param_count, critic, params })
    }

    fn batch_inputs(&self, records: &[&DosRecord]) -> Result<(ArrayD<f64>, ArrayD<f64>), ModelError> {
        let b = records.len();
        let u = self.universe.len();
        let mut comp = ArrayD::<f64>::zeros(IxDyn(&[b, u]));
        let mut real = ArrayD::<f64>::zeros(IxDyn(&[b, DOS_BINS]));
        for (r, rec) in records.iter().enumerate() {
            let v = composition_vector(&rec.composition, &self.universe)?;
            for (c, x) in v.iter().enumerate() {
                comp[[r, c]] = *x;
            }
            for (c, x) in self.scaler.standardize(&rec.dos).iter().enumerate() {
                real[[r, c]] = *x;
            }
        }
        Ok((comp, real))
    }

    fn gen_forward(&self, t: &Tape, vars: &[Var], comp: Var, noise: Var) -> Var {
        self.gen.forward(t, vars, t.concat(&[comp, noise], 1))
    }

    fn critic_forward(&self, t: &Tape, vars: &[Var], comp: Var, dos: Var) -> Var {
        self.critic.forward(t, vars, t.concat(&[comp, dos], 1))
    }

    /// Critic objective on one batch: Wasserstein term plus gradient
    /// penalty. Noise, and the interpolation coefficients, are fixed by
    /// `noise_seed`. Returns (loss, wasserstein gap, penalty) and leaves the
    /// graph available for gradients via `critic_step_grads`.
    fn critic_graph(
        &self,
        params: &ParamStore,
        records: &[&DosRecord],
        noise_seed: u64,
    ) -> Result<(Tape, Vec<Var>, Var, f64, f64), ModelError> {
        let (comp_arr, real_arr) = self.batch_inputs(records)?;
        let b = records.len();
        let mut rng = ChaCha12Rng::seed_from_u64(noise_seed);
        let z = normal_array(&mut rng, &[b, self.config.noise_dim]);
        let alpha = ArrayD::from_shape_fn(IxDyn(&[b, 1]), |_| rng.random_range(0.0..1.0));

        let t = Tape::new();
        let vars = params.bind(&t);
        let comp = t.leaf(comp_arr);
        let real = t.leaf(real_arr);
        let fake = t.detach(self.gen_forward(&t, &vars, comp, t.leaf(z)));

        let d_real = t.mean_all(self.critic_forward(&t, &vars, comp, real));
        let d_fake = t.mean_all(self.critic_forward(&t, &vars, comp, fake));

        let a = t.leaf(alpha);
        let one_minus = t.add_scalar(t.neg(a), 1.0);
        let xhat = t.add(t.mul(a, real), t.mul(one_minus, fake));
        let d_xhat = self.critic_forward(&t, &vars, comp, xhat);
        let grad_x = t
            .grad(t.sum_all(d_xhat), &[xhat])[0]
            .expect("critic output must depend on its DOS input");
        let norm = t.sqrt(t.add_scalar(t.sum_axis(t.square(grad_x), 1), 1e-12));
        let gp = t.mean_all(t.square(t.add_scalar(norm, -1.0)));

        let loss = t.add(t.sub(d_fake, d_real), t.mul_scalar(gp, self.config.gp_weight));
        let gap = t.scalar_value(d_real) - t.scalar_value(d_fake);
        let gp_value = t.scalar_value(gp);
        Ok((t, vars, loss, gap, gp_value))
    }

    /// Critic loss split into (total, wasserstein gap, penalty).
    pub fn critic_loss_parts(
        &self,
        params: &ParamStore,
        records: &[&DosRecord],
        noise_seed: u64,
    ) -> Result<(f64, f64, f64), ModelError> {
        let (t, _, loss, gap, gp) = self.critic_graph(params, records, noise_seed)?;
        Ok((t.scalar_value(loss), gap, gp))
    }

    /// Critic loss and parameter gradients (generator parameters receive
    /// none: the fake batch is detached).
    pub fn critic_step_grads(
        &self,
        params: &ParamStore,
        records: &[&DosRecord],
        noise_seed: u64,
    ) -> Result<(f64, f64, f64, Vec<Option<ArrayD<f64>>>), ModelError> {
        let (t, vars, loss, gap, gp) = self.critic_graph(params, records, noise_seed)?;
        let grads = t.grad(loss, &vars);
        Ok((
            t.scalar_value(loss),
            gap,
            gp,
            grads.into_iter().map(|g| g.map(|v| t.value(v))).collect(),
        ))
    }

    /// Generator loss (negative critic score of fresh fakes) and gradients
    /// restricted to generator parameters.
    pub fn generator_step_grads(
        &self,
        params: &ParamStore,
        records: &[&DosRecord],
        noise_seed: u64,
    ) -> Result<(f64, Vec<Option<ArrayD<f64>>>), ModelError> {
        let (comp_arr, _) = self.batch_inputs(records)?;
        let b = records.len();
        let mut rng = ChaCha12Rng::seed_from_u64(noise_seed);
        let z = normal_array(&mut rng, &[b, self.config.noise_dim]);

        let t = Tape::new();
        let vars = params.bind(&t);
        let comp = t.leaf(comp_arr);
        let fake = self.gen_forward(&t, &vars, comp, t.leaf(z));
        let loss = t.neg(t.mean_all(self.critic_forward(&t, &vars, comp, fake)));
        let grads = t.grad(loss, &vars);
        let masked = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| if i < self.gen_param_count { g.map(|v| t.value(v)) } else { None })
            .collect();
        Ok((t.scalar_value(loss), masked))
    }

    /// Mean standardized generator output over pre-drawn noise rows.
    fn mean_samples_standardized(
        &self,
        params: &ParamStore,
        comp_vec: &[f64],
        noise_rows: &ArrayD<f64>,
    ) -> Vec<f64> {
        let s = noise_rows.shape()[0];
        let u = self.universe.len();
        let mut comp = ArrayD::<f64>::zeros(IxDyn(&[s, u]));
        for r in 0..s {
            for c in 0..u {
                comp[[r, c]] = comp_vec[c];
            }
        }
        let t = Tape::new();
        let vars = params.bind(&t);
        let out = self.gen_forward(&t, &vars, t.leaf(comp), t.leaf(noise_rows.clone()));
        let mean = t.value(t.mean_axis(out, 0));
        (0..DOS_BINS).map(|c| mean[[0, c]]).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GanEpochLog {
    pub epoch: usize,
    pub critic_loss: f64,
    pub generator_loss: f64,
    pub wasserstein_gap: f64,
    pub gradient_penalty: f64,
    pub val_mae: f64,
}

pub const TRANSFER_CHECKPOINT_FORMAT: &str = "transfer-generator-v1";

/// Frozen generator deployed as a composition-to-representation map.
#[derive(Clone, Serialize, Deserialize)]
pub struct TransferGenerator {
    pub format: String,
    pub config: CwganConfig,
    pub universe: Vec<Element>,
    pub scaler: Standardizer,
    gen: Mlp,
    params: ParamStore,
}

impl TransferGenerator {
    fn from_model(model: &CwganModel, params: &ParamStore) -> TransferGenerator {
        let mut frozen = ParamStore::new();
        for (name, value) in params.iter().take(model.gen_param_count) {
            frozen.add(name.to_string(), value.clone());
        }
        TransferGenerator {
            format: TRANSFER_CHECKPOINT_FORMAT.to_string(),
            config: model.config.clone(),
            universe: model.universe.clone(),
            scaler: model.scaler.clone(),
            gen: model.gen.clone(),
            params: frozen,
        }
    }

    pub fn param_fingerprint(&self) -> u64 {
        self.params.fingerprint()
    }

    fn noise_for(&self, comp: &Composition, seed: u64, samples: usize) -> ArrayD<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_subseed(seed, &comp.canonical_key()));
        normal_array(&mut rng, &[samples, self.config.noise_dim])
    }

    /// Mean generated DOS in standardized units; deterministic in
    /// (composition, seed) and independent of call order.
    pub fn generate_standardized(&self, comp: &Composition, seed: u64) -> Result<Vec<f64>, ModelError> {
        let comp_vec = composition_vector(comp, &self.universe)?;
        let noise = self.noise_for(comp, seed, self.config.sample_count);
        let u = self.universe.len();
        let s = self.config.sample_count;
        let mut comp_arr = ArrayD::<f64>::zeros(IxDyn(&[s, u]));
        for r in 0..s {
            for c in 0..u {
                comp_arr[[r, c]] = comp_vec[c];
            }
        }
        let t = Tape::new();
        let vars = self.params.bind(&t);
        let out = self.gen.forward(&t, &vars, t.concat(&[t.leaf(comp_arr), t.leaf(noise)], 1));
        let mean = t.value(t.mean_axis(out, 0));
        Ok((0..DOS_BINS).map(|c| mean[[0, c]]).collect())
    }

    /// Mean generated DOS destandardized to DOS units.
    pub fn generate(&self, comp: &Composition, seed: u64) -> Result<Vec<f64>, ModelError> {
        Ok(self.scaler.destandardize(&self.generate_standardized(comp, seed)?))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TransferGenerator, ModelError> {
        let file = std::fs::File::open(path)?;
        let g: TransferGenerator = serde_json::from_reader(std::io::BufReader::new(file))?;
        if g.format != TRANSFER_CHECKPOINT_FORMAT {
            return Err(ModelError::BadCheckpoint { expected: TRANSFER_CHECKPOINT_FORMAT, found: g.format });
        }
        Ok(g)
    }
}

impl TransferRep for TransferGenerator {
    fn dim(&self) -> usize {
        DOS_BINS
    }

    fn rep(&self, comp: &Composition) -> Result<Vec<f64>, ModelError> {
        self.generate(comp, self.config.seed)
    }
}

/// Adversarial training loop; returns the lowest-validation-MAE epoch's
/// frozen generator and the per-epoch log.
pub fn train_cwgan(
    train: &[DosRecord],
    validation: &[DosRecord],
    config: &CwganConfig,
) -> Result<(TransferGenerator, Vec<GanEpochLog>), ModelError> {
    config.validate()?;
    if train.len() < 2 {
        return Err(ModelError::TooFewRecords { context: "transfer training split", needed: 2, got: train.len() });
    }
    if validation.is_empty() {
        return Err(ModelError::TooFewRecords { context: "transfer validation split", needed: 1, got: 0 });
    }

    let scaler = Standardizer::fit(train.iter().map(|r| r.dos.as_slice()))?;
    let mut universe: Vec<Element> = Vec::new();
    for rec in train.iter().chain(validation) {
        universe.extend(rec.composition.elements());
    }
    let model = CwganModel::new(config, universe, scaler)?;

    let mut params = model.params.clone();
    let mut adam_c = Adam::with_betas(&params, config.lr, config.beta1, config.beta2);
    let mut adam_g = Adam::with_betas(&params, config.lr, config.beta1, config.beta2);

    // Fixed validation noise: the same draws every epoch make epoch MAEs
    // directly comparable.
    let val_inputs: Vec<(Vec<f64>, ArrayD<f64>, Vec<f64>)> = validation
        .iter()
        .map(|rec| {
            let comp_vec = composition_vector(&rec.composition, &model.universe)?;
            let mut rng =
                ChaCha12Rng::seed_from_u64(derive_subseed(config.seed, &format!("val-{}", rec.composition.canonical_key())));
            let noise = normal_array(&mut rng, &[config.val_samples, config.noise_dim]);
            let truth_std = model.scaler.standardize(&rec.dos);
            Ok((comp_vec, noise, truth_std))
        })
        .collect::<Result<_, ModelError>>()?;

    let mut log = Vec::with_capacity(config.epochs);
    let mut best_mae = f64::INFINITY;
    let mut best_params = params.clone();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        let mut shuffle_rng = ChaCha12Rng::seed_from_u64(derive_subseed(config.seed, &format!("shuffle-{epoch}")));
        order.shuffle(&mut shuffle_rng);

        let mut c_sum = 0.0;
        let mut g_sum = 0.0;
        let mut gap_sum = 0.0;
        let mut gp_sum = 0.0;
        let mut c_steps = 0usize;
        let mut g_steps = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let records: Vec<&DosRecord> = chunk.iter().map(|&i| &train[i]).collect();
            let noise_seed = derive_subseed(config.seed, &format!("critic-{epoch}-{bi}"));
            let (c_loss, gap, gp, grads) = model.critic_step_grads(&params, &records, noise_seed)?;
            if !c_loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            adam_c.step(&mut params, &grads);
            c_sum += c_loss;
            gap_sum += gap;
            gp_sum += gp;
            c_steps += 1;

            if (bi + 1) % config.critic_steps == 0 {
                let gen_seed = derive_subseed(config.seed, &format!("gen-{epoch}-{bi}"));
                let (g_loss, grads) = model.generator_step_grads(&params, &records, gen_seed)?;
                if !g_loss.is_finite() {
                    return Err(ModelError::Diverged { epoch });
                }
                adam_g.step(&mut params, &grads);
                g_sum += g_loss;
                g_steps += 1;
            }
        }
        // Short epochs still move the generator at least once.
        if g_steps == 0 {
            let records: Vec<&DosRecord> = order.iter().take(config.batch_size).map(|&i| &train[i]).collect();
            let gen_seed = derive_subseed(config.seed, &format!("gen-{epoch}-tail"));
            let (g_loss, grads) = model.generator_step_grads(&params, &records, gen_seed)?;
            if !g_loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            adam_g.step(&mut params, &grads);
            g_sum += g_loss;
            g_steps = 1;
        }

        let mut err = 0.0;
        let mut finite = true;
        for (comp_vec, noise, truth_std) in &val_inputs {
            let mean = model.mean_samples_standardized(&params, comp_vec, noise);
            for (m, y) in mean.iter().zip(truth_std) {
                if !m.is_finite() {
                    finite = false;
                }
                err += (m - y).abs();
            }
        }
        if !finite {
            return Err(ModelError::Diverged { epoch });
        }
        let val_mae = err / (val_inputs.len() * DOS_BINS) as f64;

        log.push(GanEpochLog {
            epoch,
            critic_loss: c_sum / c_steps as f64,
            generator_loss: g_sum / g_steps as f64,
            wasserstein_gap: gap_sum / c_steps as f64,
            gradient_penalty: gp_sum / c_steps as f64,
            val_mae,
        });
        if val_mae < best_mae {
            best_mae = val_mae;
            best_params.assign(&params);
        }
    }

    Ok((TransferGenerator::from_model(&model, &best_params), log))
}

/// Standardized MAE of the mean-sample generated DOS over a holdout.
pub fn evaluate_generator(gen: &TransferGenerator, holdout: &[DosRecord]) -> Result<f64, ModelError> {
    if holdout.is_empty() {
        return Err(ModelError::TooFewRecords { context: "transfer holdout", needed: 1, got: 0 });
    }
    let mut err = 0.0;
    for rec in holdout {
        let pred = gen.generate_standardized(&rec.composition, gen.config.seed)?;
        let truth = gen.scaler.standardize(&rec.dos);
        for (p, y) in pred.iter().zip(&truth) {
            err += (p - y).abs();
        }
    }
    Ok(err / (holdout.len() * DOS_BINS) as f64)
}

/// An untrained generator with the same architecture; baseline for sanity
/// orderings in tests.
pub fn untrained_generator(
    train: &[DosRecord],
    validation: &[DosRecord],
    config: &CwganConfig,
) -> Result<TransferGenerator, ModelError> {
    let scaler = Standardizer::fit(train.iter().map(|r| r.dos.as_slice()))?;
    let mut universe: Vec<Element> = Vec::new();
    for rec in train.iter().chain(validation) {
        universe.extend(rec.composition.elements());
    }
    let model = CwganModel::new(config, universe, scaler)?;
    Ok(TransferGenerator::from_model(&model, &model.params))
}
