//! End-to-end properties of the joint two-arm training loop: gradient
//! correctness, determinism, schedule bookkeeping, the shared covariance
//! factor, and inference invariants.

use std::collections::BTreeMap;

use hclmp_autodiff::check::central_diff_check;
use hclmp_core::instance::{build_instance, CurationConfig};
use hclmp_core::synth::{self, LatentWorld};
use hclmp_core::{Composition, ElementTrio, SpectrumRecord, Standardizer};
use hclmp_model::{
    argmin_first, kl_alignment, train_hclmp, train_mlp_baseline, DecoderKind, FixedTransfer,
    HclmpConfig, HclmpModel, KlDirection, LatentGaussian, MlpBaselineConfig, ModelError,
    TrainCorpus, TransferRep,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn world() -> LatentWorld {
    LatentWorld::new(&synth::elements(&["Ag", "Bi", "Cu", "Fe", "Sm"]), 11)
}

fn instance_corpus() -> (LatentWorld, TrainCorpus) {
    let w = world();
    let trios = [
        ElementTrio::parse_label("Ag-Bi-Sm").unwrap(),
        ElementTrio::parse_label("Bi-Cu-Fe").unwrap(),
    ];
    let table = synth::grid_table(&trios, 0.1, |c| w.absorption(c), 4, 23);
    let cfg = CurationConfig::default();
    let inst = build_instance(&table, &trios[0], &cfg, 5).unwrap();
    (w, TrainCorpus::from_instance(&inst, cfg.val_fraction))
}

/// Small architecture that still exercises every module of the full one.
fn reduced_config() -> HclmpConfig {
    HclmpConfig {
        latent_dim: 8,
        elem_embed_dim: 8,
        encoder_width: 12,
        message_layers: 2,
        label_widths: vec![12],
        property_embed_dim: 8,
        gat_layers: 2,
        gat_ffn_widths: vec![10, 10],
        batch_size: 16,
        epochs: 4,
        ..HclmpConfig::default()
    }
}

/// Oracle transfer representations: the latent world's true density of
/// states, which is what a converged generator would produce.
fn oracle_transfer(w: &LatentWorld, corpuses: &[&[SpectrumRecord]]) -> FixedTransfer {
    let mut reps = BTreeMap::new();
    for group in corpuses {
        for rec in *group {
            reps.insert(rec.key(), w.true_dos(&rec.composition));
        }
    }
    FixedTransfer::new(reps).unwrap()
}

/// A memorization fixture: all-ternary grid records from a tame latent
/// world, with validation tracking the training split so epoch selection
/// follows the training fit itself.
fn memorization_corpus() -> TrainCorpus {
    let mut w = LatentWorld::new(&synth::elements(&["Ag", "Bi", "Cu", "Fe", "Sm"]), 13);
    w.window_weight = 0.4;
    let trios = [
        ElementTrio::parse_label("Ag-Bi-Sm").unwrap(),
        ElementTrio::parse_label("Bi-Cu-Fe").unwrap(),
    ];
    let table = synth::grid_table(&trios, 0.1, |c| w.absorption(c), 4, 23);
    let train: Vec<SpectrumRecord> = table
        .records()
        .iter()
        .filter(|r| r.composition.len() == 3)
        .take(40)
        .cloned()
        .collect();
    let scaler = Standardizer::fit(train.iter().map(|r| r.absorption.as_slice())).unwrap();
    let universe: Vec<_> = train
        .iter()
        .flat_map(|r| r.composition.elements())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    TrainCorpus { validation: train.clone(), train, scaler, universe, manifest: None }
}

/// Settings that let every variant memorize the fixture within the epoch
/// budget. The dataset is tiny, so the covariance-aware decoder needs a
/// hotter learning rate and a looser alignment penalty than the full-scale
/// defaults, and feed-forward widths equal to the embedding width so the
/// attention layers keep their residual paths.
fn overfit_config() -> HclmpConfig {
    HclmpConfig {
        latent_dim: 24,
        elem_embed_dim: 16,
        encoder_width: 48,
        message_layers: 2,
        label_widths: vec![32, 32],
        property_embed_dim: 16,
        gat_layers: 3,
        gat_ffn_widths: vec![16, 16],
        lr: 0.006,
        lr_halving_epoch: 120,
        kl_weight: 0.001,
        batch_size: 4,
        epochs: 200,
        seed: 1,
        ..HclmpConfig::default()
    }
}

/// A compact transfer representation: coarse window means of the true
/// density of states, enough to carry the latent element property without
/// letting hundreds of identical node channels drown out the fractions.
fn coarse_oracle_transfer(records: &[SpectrumRecord]) -> FixedTransfer {
    let mut w = LatentWorld::new(&synth::elements(&["Ag", "Bi", "Cu", "Fe", "Sm"]), 13);
    w.window_weight = 0.4;
    let mut reps = BTreeMap::new();
    for rec in records {
        let dos = w.true_dos(&rec.composition);
        let win = dos.len() / 8;
        let coarse: Vec<f64> = (0..8)
            .map(|k| dos[k * win..(k + 1) * win].iter().sum::<f64>() / win as f64)
            .collect();
        reps.insert(rec.key(), coarse);
    }
    FixedTransfer::new(reps).unwrap()
}

fn std_mae(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let mut err = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        for (a, b) in p.iter().zip(t) {
            err += (a - b).abs();
            n += 1;
        }
    }
    err / n as f64
}

#[test]
fn analytic_gradients_match_finite_differences_with_transfer() {
    let (w, corpus) = instance_corpus();
    let transfer = oracle_transfer(&w, &[&corpus.train]);
    let config = HclmpConfig { use_transfer: true, ..reduced_config() };
    let model = HclmpModel::new(&config, corpus.universe.clone(), transfer.dim()).unwrap();

    let records: Vec<&SpectrumRecord> = corpus.train.iter().take(4).collect();
    let noise_seed = 99;
    let (_, grads) = model
        .loss_and_grads_on_batch(&model.params, &records, &corpus.scaler, Some(&transfer), noise_seed)
        .unwrap();
    let report = central_diff_check(
        |p| {
            model
                .loss_on_batch(p, &records, &corpus.scaler, Some(&transfer), noise_seed)
                .unwrap()
        },
        &model.params,
        &grads,
        1e-5,
        5,
    );
    assert!(
        report.max_rel_err < 1e-4,
        "worst {} [{}]: analytic {} vs numeric {} (rel {})",
        report.worst_param,
        report.worst_index,
        report.analytic,
        report.numeric,
        report.max_rel_err
    );
    assert!(report.entries_checked > 100, "check must cover every parameter group");
}

#[test]
fn analytic_gradients_match_finite_differences_for_mlp_ablation() {
    let (_, corpus) = instance_corpus();
    let config = HclmpConfig {
        decoder_kind: DecoderKind::Mlp,
        mlp_decoder_widths: vec![12, 12],
        use_vae_alignment: false,
        ..reduced_config()
    };
    let model = HclmpModel::new(&config, corpus.universe.clone(), 0).unwrap();
    let records: Vec<&SpectrumRecord> = corpus.train.iter().take(4).collect();
    let (_, grads) = model
        .loss_and_grads_on_batch(&model.params, &records, &corpus.scaler, None, 3)
        .unwrap();
    let report = central_diff_check(
        |p| model.loss_on_batch(p, &records, &corpus.scaler, None, 3).unwrap(),
        &model.params,
        &grads,
        1e-5,
        5,
    );
    assert!(report.max_rel_err < 1e-4, "ablation gradients: rel {}", report.max_rel_err);
}

#[test]
fn overfit_smoke_memorizes_a_small_instance() {
    let small = memorization_corpus();
    let config = overfit_config();

    let trained = train_hclmp(&small, None, &config).unwrap();
    let comps: Vec<Composition> = small.train.iter().map(|r| r.composition.clone()).collect();
    let truth: Vec<Vec<f64>> = small.train.iter().map(|r| small.scaler.standardize(&r.absorption)).collect();
    let preds = trained.predict_standardized(&comps, None).unwrap();
    let mae = std_mae(&preds, &truth);
    assert!(mae < 0.05, "train mae after overfitting: {mae}");
}

#[test]
fn overfit_smoke_memorizes_with_transfer_features() {
    let small = memorization_corpus();
    let transfer = coarse_oracle_transfer(&small.train);
    let config = HclmpConfig { use_transfer: true, ..overfit_config() };

    let trained = train_hclmp(&small, Some(&transfer), &config).unwrap();
    let comps: Vec<Composition> = small.train.iter().map(|r| r.composition.clone()).collect();
    let truth: Vec<Vec<f64>> = small.train.iter().map(|r| small.scaler.standardize(&r.absorption)).collect();
    let preds = trained.predict_standardized(&comps, Some(&transfer as &dyn TransferRep)).unwrap();
    let mae = std_mae(&preds, &truth);
    assert!(mae < 0.05, "train mae with transfer features: {mae}");
}

#[test]
fn overfit_smoke_memorizes_with_the_mlp_baseline() {
    let small = memorization_corpus();
    let config = MlpBaselineConfig {
        hidden: vec![64, 64],
        lr: 0.006,
        lr_halving_epoch: 120,
        batch_size: 4,
        epochs: 200,
        seed: 1,
        ..MlpBaselineConfig::default()
    };

    let trained = train_mlp_baseline(&small, &config, None).unwrap();
    let comps: Vec<Composition> = small.train.iter().map(|r| r.composition.clone()).collect();
    let truth: Vec<Vec<f64>> = small.train.iter().map(|r| small.scaler.standardize(&r.absorption)).collect();
    let preds = trained.predict_standardized(&comps).unwrap();
    let mae = std_mae(&preds, &truth);
    assert!(mae < 0.05, "baseline train mae after overfitting: {mae}");
}

#[test]
fn training_is_seed_deterministic_and_selects_the_argmin_epoch() {
    let (_, corpus) = instance_corpus();
    let config = HclmpConfig { epochs: 6, ..reduced_config() };
    let a = train_hclmp(&corpus, None, &config).unwrap();
    let b = train_hclmp(&corpus, None, &config).unwrap();
    assert_eq!(a.param_fingerprint(), b.param_fingerprint(), "same seed, same parameters");
    assert_eq!(a.selected_epoch, b.selected_epoch, "same seed, same selection");
    for (x, y) in a.log.iter().zip(&b.log) {
        assert_eq!(x.train_loss, y.train_loss, "epoch {} training loss", x.epoch);
        assert_eq!(x.val_mae, y.val_mae, "epoch {} validation error", x.epoch);
    }

    let maes: Vec<f64> = a.log.iter().map(|e| e.val_mae).collect();
    assert_eq!(a.selected_epoch, argmin_first(&maes) + 1, "selection is the earliest minimum");

    let other = train_hclmp(&corpus, None, &HclmpConfig { seed: 2, ..config }).unwrap();
    assert_ne!(a.param_fingerprint(), other.param_fingerprint(), "different seed, different run");
}

#[test]
fn logged_learning_rate_halves_exactly_once() {
    let (_, corpus) = instance_corpus();
    let small = TrainCorpus {
        train: corpus.train[..8].to_vec(),
        validation: corpus.validation[..2].to_vec(),
        scaler: corpus.scaler.clone(),
        universe: corpus.universe.clone(),
        manifest: None,
    };
    let config = HclmpConfig {
        latent_dim: 4,
        elem_embed_dim: 4,
        encoder_width: 6,
        message_layers: 1,
        label_widths: vec![6],
        property_embed_dim: 4,
        gat_layers: 1,
        gat_ffn_widths: vec![6, 6],
        batch_size: 8,
        epochs: 25,
        lr: 0.0005,
        lr_halving_epoch: 20,
        ..HclmpConfig::default()
    };
    let trained = train_hclmp(&small, None, &config).unwrap();
    assert_eq!(trained.log.len(), 25, "one log row per epoch");
    for row in &trained.log {
        let expected = if row.epoch > 20 { 0.00025 } else { 0.0005 };
        assert_eq!(row.lr, expected, "learning rate at epoch {}", row.epoch);
    }
}

/// Factor a symmetric positive-definite matrix; panics when it is not.
fn cholesky(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                assert!(s > 0.0, "pivot {i} is {s}, matrix is not positive definite");
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    l
}

#[test]
fn shared_covariance_factor_stays_spd_and_receives_both_arms() {
    let (_, corpus) = instance_corpus();
    let config = reduced_config();
    let trained = train_hclmp(&corpus, None, &config).unwrap();
    let l = trained.covariance_factor().expect("hierarchical decoder carries a factor");
    let p = config.n_properties;
    assert_eq!(l.shape(), &[p, p], "factor is property-by-property");
    for i in 0..p {
        for j in 0..p {
            if j > i {
                assert_eq!(l[[i, j]], 0.0, "upper triangle must stay zero at ({i},{j})");
            }
        }
        assert!(l[[i, i]] > 0.0, "diagonal entry {i} must be positive");
    }
    // Sigma = L L^T: symmetric by construction, and positive definite, which
    // an independent Cholesky factorization certifies.
    let mut sigma = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            for k in 0..p {
                sigma[i][j] += l[[i, k]] * l[[j, k]];
            }
        }
    }
    for i in 0..p {
        for j in 0..p {
            assert!((sigma[i][j] - sigma[j][i]).abs() < 1e-12, "symmetry at ({i},{j})");
        }
    }
    let chol = cholesky(&sigma);
    for i in 0..p {
        assert!(chol[i][i] > 0.0, "positive definiteness at pivot {i}");
    }

    // Both arms feed the same factor: removing the label-reconstruction term
    // must change the factor's gradient, and the remaining feature-arm
    // gradient must still be present.
    let with = HclmpModel::new(&config, corpus.universe.clone(), 0).unwrap();
    let without_cfg = HclmpConfig { include_label_reconstruction: false, ..config.clone() };
    let without = HclmpModel::new(&without_cfg, corpus.universe.clone(), 0).unwrap();
    let records: Vec<&SpectrumRecord> = corpus.train.iter().take(8).collect();
    let (_, g_with) = with
        .loss_and_grads_on_batch(&with.params, &records, &corpus.scaler, None, 5)
        .unwrap();
    let (_, g_without) = without
        .loss_and_grads_on_batch(&without.params, &records, &corpus.scaler, None, 5)
        .unwrap();
    let idx = with.params.index_of("dec.cov_raw").expect("factor parameter exists");
    let a = g_with[idx].as_ref().expect("joint loss reaches the factor");
    let b = g_without[idx].as_ref().expect("feature arm alone reaches the factor");
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
    assert!(diff > 1e-12, "label arm must contribute to the shared factor, diff {diff}");
    assert!(b.iter().any(|v| v.abs() > 1e-12), "feature arm gradient must be nonzero");
}

#[test]
fn kl_penalty_is_nonnegative_and_matches_quadrature() {
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    for case in 0..10_000 {
        let dim = 1 + (case % 16);
        let draw = |rng: &mut ChaCha12Rng, scale: f64| -> Vec<f64> {
            (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
        };
        let a = LatentGaussian { mu: draw(&mut rng, 3.0), log_var: draw(&mut rng, 2.0) };
        let b = LatentGaussian { mu: draw(&mut rng, 3.0), log_var: draw(&mut rng, 2.0) };
        let kl = kl_alignment(&a, &b).unwrap();
        assert!(kl >= -1e-12, "case {case}: kl {kl} went negative");
        let self_kl = kl_alignment(&a, &a).unwrap();
        assert!(self_kl.abs() < 1e-12, "case {case}: kl to itself {self_kl}");
    }

    // Independent oracle: numerically integrate p ln(p/q) for 1-d pairs.
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    for case in 0..10 {
        let a = LatentGaussian {
            mu: vec![rng.random_range(-2.0..2.0)],
            log_var: vec![rng.random_range(-1.0..1.0)],
        };
        let b = LatentGaussian {
            mu: vec![rng.random_range(-2.0..2.0)],
            log_var: vec![rng.random_range(-1.0..1.0)],
        };
        let closed = kl_alignment(&a, &b).unwrap();
        let (mu_p, var_p) = (b.mu[0], b.log_var[0].exp());
        let (mu_q, var_q) = (a.mu[0], a.log_var[0].exp());
        let log_pdf = |x: f64, mu: f64, var: f64| {
            -((x - mu).powi(2)) / (2.0 * var) - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
        };
        let (lo, hi, n) = (-40.0, 40.0, 80_000usize);
        let h = (hi - lo) / n as f64;
        // p * ln(p/q) with the ratio taken in log space: the tails underflow
        // p to zero long before the log of the ratio overflows.
        let f = |x: f64| {
            let lp = log_pdf(x, mu_p, var_p);
            let p = lp.exp();
            if p < 1e-30 {
                0.0
            } else {
                p * (lp - log_pdf(x, mu_q, var_q))
            }
        };
        let mut integral = f(lo) + f(hi);
        for i in 1..n {
            let x = lo + i as f64 * h;
            integral += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        integral *= h / 3.0;
        assert!(
            (closed - integral).abs() < 1e-6,
            "case {case}: closed form {closed} vs quadrature {integral}"
        );
    }
}

#[test]
fn predictions_are_independent_of_batching_and_order() {
    let (_, corpus) = instance_corpus();
    // Mixed 1-, 2- and 3-element compositions stress the padding path.
    let comps: Vec<Composition> = corpus.train.iter().take(10).map(|r| r.composition.clone()).collect();

    let wide = HclmpModel::new(&reduced_config(), corpus.universe.clone(), 0).unwrap();
    let narrow_cfg = HclmpConfig { batch_size: 3, ..reduced_config() };
    let narrow = HclmpModel::new(&narrow_cfg, corpus.universe.clone(), 0).unwrap();

    let records: Vec<SpectrumRecord> = comps
        .iter()
        .map(|c| SpectrumRecord { composition: c.clone(), absorption: vec![], provenance: None })
        .collect();
    let refs: Vec<&SpectrumRecord> = records.iter().collect();
    let a = wide.predict_standardized(&wide.params, &refs, None).unwrap();
    let b = narrow.predict_standardized(&narrow.params, &refs, None).unwrap();
    let mut reversed: Vec<&SpectrumRecord> = records.iter().collect();
    reversed.reverse();
    let c = narrow.predict_standardized(&narrow.params, &reversed, None).unwrap();

    for i in 0..comps.len() {
        for ch in 0..10 {
            assert!(
                (a[i][ch] - b[i][ch]).abs() < 1e-12,
                "batch width changed prediction for {} channel {ch}",
                comps[i].canonical_key()
            );
            let j = comps.len() - 1 - i;
            assert!(
                (a[i][ch] - c[j][ch]).abs() < 1e-12,
                "record order changed prediction for {} channel {ch}",
                comps[i].canonical_key()
            );
        }
    }
}

#[test]
fn ablation_flags_reshape_the_network() {
    let (_, corpus) = instance_corpus();
    let base = reduced_config();

    let mlp_cfg = HclmpConfig {
        decoder_kind: DecoderKind::Mlp,
        mlp_decoder_widths: vec![32, 32, 32],
        ..base.clone()
    };
    let mlp = HclmpModel::new(&mlp_cfg, corpus.universe.clone(), 0).unwrap();
    assert_eq!(
        mlp.decoder_dims(),
        vec![(8, 32), (32, 32), (32, 32), (32, 10)],
        "flat decoder stacks three hidden layers"
    );
    assert!(mlp.cov_param_name().is_none(), "flat decoder has no covariance factor");
    assert!(mlp.covariance_factor(&mlp.params).is_none());

    let hier = HclmpModel::new(&base, corpus.universe.clone(), 0).unwrap();
    let dims = hier.decoder_dims();
    assert_eq!(dims[0], (8, 10), "latent to property means");
    assert_eq!(dims[1], (8, 10), "embedding draws into attention width");
    assert_eq!(dims.last().unwrap(), &(10, 1), "per-property scalar readout");

    let no_align = HclmpConfig { use_vae_alignment: false, ..base };
    let solo = HclmpModel::new(&no_align, corpus.universe.clone(), 0).unwrap();
    for i in 0..solo.params.len() {
        assert!(
            !solo.params.name(i).starts_with("lab."),
            "label arm must be absent, found {}",
            solo.params.name(i)
        );
    }
    let err = solo.encode_labels(&solo.params, &vec![0.0; 10], None).unwrap_err();
    assert!(matches!(err, ModelError::BadConfig(_)), "label encoding must be rejected");
}

#[test]
fn vanishing_covariance_makes_embedding_draws_irrelevant() {
    let (_, corpus) = instance_corpus();
    let config = reduced_config();
    let model = HclmpModel::new(&config, corpus.universe.clone(), 0).unwrap();
    let mut params = model.params.clone();
    let idx = params.index_of("dec.cov_raw").unwrap();
    let p = config.n_properties;
    {
        let raw = params.value_mut(idx);
        for i in 0..p {
            for j in 0..p {
                raw[[i, j]] = if i == j { -40.0 } else { 0.0 };
            }
        }
    }
    let z = vec![0.3; config.latent_dim];
    let a = model.decode_deterministic(&params, &z, 1).unwrap();
    let b = model.decode_deterministic(&params, &z, 2).unwrap();
    let collapsed: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    assert!(collapsed < 1e-6, "collapsed factor must erase draw dependence, diff {collapsed}");

    {
        let raw = params.value_mut(idx);
        for i in 0..p {
            raw[[i, i]] = 5.0;
        }
    }
    let c = model.decode_deterministic(&params, &z, 1).unwrap();
    let d = model.decode_deterministic(&params, &z, 2).unwrap();
    let spread: f64 = c.iter().zip(&d).map(|(x, y)| (x - y).abs()).sum();
    assert!(spread > 1e-4, "wide factor must expose draw dependence, diff {spread}");
}

#[test]
fn kl_direction_switch_changes_the_penalty() {
    let (_, corpus) = instance_corpus();
    let forward = reduced_config();
    let backward = HclmpConfig { kl_direction: KlDirection::FeatureToLabel, ..forward.clone() };
    let m1 = HclmpModel::new(&forward, corpus.universe.clone(), 0).unwrap();
    let m2 = HclmpModel::new(&backward, corpus.universe.clone(), 0).unwrap();
    let records: Vec<&SpectrumRecord> = corpus.train.iter().take(6).collect();
    let l1 = m1.loss_on_batch(&m1.params, &records, &corpus.scaler, None, 9).unwrap();
    let l2 = m2.loss_on_batch(&m2.params, &records, &corpus.scaler, None, 9).unwrap();
    assert!((l1 - l2).abs() > 1e-10, "asymmetric penalty: {l1} vs {l2}");
}

#[test]
fn checkpoint_roundtrip_preserves_predictions_and_guards_transfer() {
    let (w, corpus) = instance_corpus();
    let transfer = oracle_transfer(&w, &[&corpus.train, &corpus.validation]);
    let config = HclmpConfig { use_transfer: true, epochs: 2, ..reduced_config() };
    let trained = train_hclmp(&corpus, Some(&transfer), &config).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    trained.save(&path).unwrap();
    let loaded = hclmp_model::TrainedHclmp::load(&path).unwrap();
    assert_eq!(trained.param_fingerprint(), loaded.param_fingerprint(), "parameters survive the roundtrip");

    let comps: Vec<Composition> = corpus.train.iter().take(3).map(|r| r.composition.clone()).collect();
    let a = trained.predict(&comps, Some(&transfer)).unwrap();
    let b = loaded.predict(&comps, Some(&transfer)).unwrap();
    assert_eq!(a, b, "loaded model must predict identically");

    let missing = trained.predict(&comps, None).unwrap_err();
    assert!(matches!(missing, ModelError::MissingTransfer), "transfer-trained model demands transfer");

    let plain = train_hclmp(&corpus, None, &HclmpConfig { use_transfer: false, epochs: 1, ..config.clone() }).unwrap();
    let extra = plain.predict(&comps, Some(&transfer)).unwrap_err();
    assert!(matches!(extra, ModelError::BadConfig(_)), "plain model rejects transfer input");

    // A checkpoint claiming a different format version must be refused.
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    doc["format"] = serde_json::Value::String("something-else".into());
    let bogus = dir.path().join("bogus.json");
    std::fs::write(&bogus, serde_json::to_string(&doc).unwrap()).unwrap();
    let err = match hclmp_model::TrainedHclmp::load(&bogus) {
        Ok(_) => panic!("format mismatch must be refused"),
        Err(e) => e,
    };
    assert!(matches!(err, ModelError::BadCheckpoint { .. }), "format mismatch must be refused");

    let log_path = dir.path().join("log.csv");
    trained.write_log_csv(&log_path).unwrap();
    let text = std::fs::read_to_string(&log_path).unwrap();
    assert_eq!(text.lines().count(), 1 + trained.log.len(), "header plus one row per epoch");
}

#[test]
fn unknown_elements_are_rejected_at_prediction_time() {
    let (_, corpus) = instance_corpus();
    let config = HclmpConfig { epochs: 1, ..reduced_config() };
    let trained = train_hclmp(&corpus, None, &config).unwrap();
    let stranger = Composition::parse("Zr:1").unwrap();
    let err = trained.predict(&[stranger], None).unwrap_err();
    assert!(
        matches!(err, ModelError::OutsideUniverse { .. }),
        "prediction outside the trained universe must fail loudly, got {err:?}"
    );
}

#[test]
fn monte_carlo_inference_averages_toward_the_deterministic_path() {
    let (_, corpus) = instance_corpus();
    let config = HclmpConfig { epochs: 2, ..reduced_config() };
    let trained = train_hclmp(&corpus, None, &config).unwrap();
    let comps: Vec<Composition> = corpus.validation.iter().take(3).map(|r| r.composition.clone()).collect();
    let mc = trained.predict_mc(&comps, None, 64, 7).unwrap();
    let det = trained.predict(&comps, None).unwrap();
    for (row_mc, row_det) in mc.iter().zip(&det) {
        for (a, b) in row_mc.iter().zip(row_det) {
            assert!(a.is_finite() && b.is_finite(), "both inference paths stay finite");
            assert!((a - b).abs() < 2.0, "averaged draws stay near the mean path: {a} vs {b}");
        }
    }
    let err = trained.predict_mc(&comps, None, 0, 7).unwrap_err();
    assert!(matches!(err, ModelError::BadConfig(_)), "zero passes is a config error");
}
