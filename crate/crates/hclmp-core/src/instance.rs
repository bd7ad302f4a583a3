use crate::composition::{classify_against_trio, Element, ElementTrio, TrioRelation};
use crate::error::CoreError;
use crate::grid::{grid_region, Region};
use crate::scaler::Standardizer;
use crate::spectra::{SpectraTable, SpectrumRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Thresholds for a ternary space to count as a data instance, and the split
/// fractions used when building it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurationConfig {
    pub step: f64,
    /// Minimum interior grid points present in the data.
    pub min_interior: usize,
    /// Minimum perimeter (subspace) grid points present in the data.
    pub min_perimeter: usize,
    pub val_fraction: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig { step: 0.1, min_interior: 26, min_perimeter: 25, val_fraction: 0.10 }
    }
}

/// Leave-one-composition-space-out split for one ternary space. Test holds
/// the space's interior grid records; train and validation never contain a
/// record with all three trio elements.
#[derive(Clone, Debug)]
pub struct DataInstance {
    pub trio: ElementTrio,
    pub seed: u64,
    pub step: f64,
    pub train: Vec<SpectrumRecord>,
    pub validation: Vec<SpectrumRecord>,
    pub test: Vec<SpectrumRecord>,
    pub scaler: Standardizer,
}

/// Single global split used by the random-holdout setting: test is a seeded
/// sample of the union of all instances' interior records.
#[derive(Clone, Debug)]
pub struct RandomSplit {
    pub seed: u64,
    pub train: Vec<SpectrumRecord>,
    pub validation: Vec<SpectrumRecord>,
    pub test: Vec<SpectrumRecord>,
    pub scaler: Standardizer,
}

/// Serializable description of an instance (record keys only).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceManifest {
    pub format: String,
    pub trio: ElementTrio,
    pub seed: u64,
    pub step: f64,
    pub val_fraction: f64,
    pub train_keys: Vec<String>,
    pub validation_keys: Vec<String>,
    pub test_keys: Vec<String>,
    pub scaler: Standardizer,
}

pub const INSTANCE_MANIFEST_FORMAT: &str = "instance-manifest-v1";

impl DataInstance {
    pub fn manifest(&self, val_fraction: f64) -> InstanceManifest {
        InstanceManifest {
            format: INSTANCE_MANIFEST_FORMAT.to_string(),
            trio: self.trio,
            seed: self.seed,
            step: self.step,
            val_fraction,
            train_keys: self.train.iter().map(|r| r.key()).collect(),
            validation_keys: self.validation.iter().map(|r| r.key()).collect(),
            test_keys: self.test.iter().map(|r| r.key()).collect(),
            scaler: self.scaler.clone(),
        }
    }
}

/// Count how many interior and perimeter grid points of `trio` are present
/// in the table.
fn grid_presence(table: &SpectraTable, trio: &ElementTrio, step: f64) -> (usize, usize) {
    let grid = match crate::grid::enumerate_simplex_grid(trio, step) {
        Ok(g) => g,
        Err(_) => return (0, 0),
    };
    let mut interior = 0;
    let mut perimeter = 0;
    for (comp, region) in grid {
        if table.get(&comp.canonical_key()).is_some() {
            match region {
                Region::Interior => interior += 1,
                Region::Perimeter => perimeter += 1,
            }
        }
    }
    (interior, perimeter)
}

/// All ternary spaces of the table's element universe with enough interior
/// and perimeter grid coverage, in canonical order.
pub fn identify_data_instances(table: &SpectraTable, cfg: &CurationConfig) -> Vec<ElementTrio> {
    let universe: Vec<Element> = table.universe().into_iter().collect();
    let mut out = Vec::new();
    for i in 0..universe.len() {
        for j in (i + 1)..universe.len() {
            for k in (j + 1)..universe.len() {
                let trio = ElementTrio::new(universe[i], universe[j], universe[k]).unwrap();
                let (interior, perimeter) = grid_presence(table, &trio, cfg.step);
                if interior >= cfg.min_interior && perimeter >= cfg.min_perimeter {
                    out.push(trio);
                }
            }
        }
    }
    out
}

/// Records of `table` that are interior grid points of `trio`.
fn interior_test_records(table: &SpectraTable, trio: &ElementTrio, step: f64) -> Vec<SpectrumRecord> {
    table
        .records()
        .iter()
        .filter(|r| grid_region(&r.composition, trio, step) == Some(Region::Interior))
        .cloned()
        .collect()
}

/// Build the leave-one-space-out instance for `trio`.
///
/// Test: interior grid records of the space. Pool: every record that does
/// not contain all three trio elements (records containing the full trio but
/// off-grid or with extra elements are excluded entirely). Validation draws
/// `val_fraction` of the pool, preferring records with exactly a pair of the
/// trio's elements, topped up uniformly at random; train is the remainder.
/// The standardizer is fitted on train only.
pub fn build_instance(
    table: &SpectraTable,
    trio: &ElementTrio,
    cfg: &CurationConfig,
    seed: u64,
) -> Result<DataInstance, CoreError> {
    let test = interior_test_records(table, trio, cfg.step);
    let (interior, perimeter) = grid_presence(table, trio, cfg.step);
    if interior < cfg.min_interior || perimeter < cfg.min_perimeter {
        return Err(CoreError::NotEligible { trio: trio.label(), interior, perimeter });
    }

    let pool: Vec<&SpectrumRecord> = table
        .records()
        .iter()
        .filter(|r| classify_against_trio(&r.composition, trio) != TrioRelation::ContainsAllThree)
        .collect();
    let val_n = ((pool.len() as f64) * cfg.val_fraction).round() as usize;
    if pool.len() < val_n + 2 {
        return Err(CoreError::TooFewRecords { context: "instance pool", needed: val_n + 2, got: pool.len() });
    }

    let trio_pair = |r: &SpectrumRecord| {
        r.composition.elements().filter(|e| trio.contains(*e)).count() == 2
    };
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut pairs: Vec<usize> = (0..pool.len()).filter(|&i| trio_pair(pool[i])).collect();
    let mut rest: Vec<usize> = (0..pool.len()).filter(|&i| !trio_pair(pool[i])).collect();
    pairs.shuffle(&mut rng);
    rest.shuffle(&mut rng);

    let mut val_idx: BTreeSet<usize> = BTreeSet::new();
    for &i in pairs.iter().chain(rest.iter()) {
        if val_idx.len() == val_n {
            break;
        }
        val_idx.insert(i);
    }

    let validation: Vec<SpectrumRecord> =
        val_idx.iter().map(|&i| pool[i].clone()).collect();
    let train: Vec<SpectrumRecord> = (0..pool.len())
        .filter(|i| !val_idx.contains(i))
        .map(|i| pool[i].clone())
        .collect();

    let scaler = Standardizer::fit(train.iter().map(|r| r.absorption.as_slice()))?;
    Ok(DataInstance { trio: *trio, seed, step: cfg.step, train, validation, test, scaler })
}

/// Build the random-holdout setting over the union of all instances'
/// interior records: a seeded `test_fraction` of that union becomes test,
/// everything else forms the pool, from which a seeded `val_fraction` becomes
/// validation.
pub fn build_random_setting(
    table: &SpectraTable,
    trios: &[ElementTrio],
    step: f64,
    test_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<RandomSplit, CoreError> {
    let mut union_keys: BTreeSet<String> = BTreeSet::new();
    for trio in trios {
        for rec in interior_test_records(table, trio, step) {
            union_keys.insert(rec.key());
        }
    }
    if union_keys.is_empty() {
        return Err(CoreError::TooFewRecords { context: "random-setting union", needed: 1, got: 0 });
    }
    let mut keys: Vec<String> = union_keys.iter().cloned().collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    keys.shuffle(&mut rng);
    let test_n = ((keys.len() as f64) * test_fraction).round() as usize;
    let test_keys: BTreeSet<String> = keys.into_iter().take(test_n).collect();

    let pool: Vec<&SpectrumRecord> = table
        .records()
        .iter()
        .filter(|r| !test_keys.contains(&r.key()))
        .collect();
    let mut pool_idx: Vec<usize> = (0..pool.len()).collect();
    pool_idx.shuffle(&mut rng);
    let val_n = ((pool.len() as f64) * val_fraction).round() as usize;
    let val_idx: BTreeSet<usize> = pool_idx.into_iter().take(val_n).collect();

    let test: Vec<SpectrumRecord> = table
        .records()
        .iter()
        .filter(|r| test_keys.contains(&r.key()))
        .cloned()
        .collect();
    let validation: Vec<SpectrumRecord> = val_idx.iter().map(|&i| pool[i].clone()).collect();
    let train: Vec<SpectrumRecord> = (0..pool.len())
        .filter(|i| !val_idx.contains(i))
        .map(|i| pool[i].clone())
        .collect();
    let scaler = Standardizer::fit(train.iter().map(|r| r.absorption.as_slice()))?;
    Ok(RandomSplit { seed, train, validation, test, scaler })
}

/// All ternary spaces over `elements` that are not in `known`, in canonical
/// order.
pub fn enumerate_prediction_spaces(
    elements: &BTreeSet<Element>,
    known: &BTreeSet<ElementTrio>,
) -> Vec<ElementTrio> {
    let list: Vec<Element> = elements.iter().copied().collect();
    let mut out = Vec::new();
    for i in 0..list.len() {
        for j in (i + 1)..list.len() {
            for k in (j + 1)..list.len() {
                let trio = ElementTrio::new(list[i], list[j], list[k]).unwrap();
                if !known.contains(&trio) {
                    out.push(trio);
                }
            }
        }
    }
    out
}
