//! Deterministic synthetic data generators used by tests, examples, and the
//! demo walkthrough. Targets are smooth closed-form functions of composition
//! so that expected behaviour can be computed independently.

use crate::composition::{Composition, Element, ElementTrio};
use crate::dos::{dos_energy_grid, DosRecord, DOS_BINS};
use crate::grid::enumerate_simplex_grid;
use crate::spectra::{SpectraTable, SpectrumRecord, CHANNELS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;

pub fn elements(symbols: &[&str]) -> Vec<Element> {
    symbols.iter().map(|s| Element::parse(s).expect("valid symbol")).collect()
}

/// Channel-wise affine function of composition fractions. Linear in
/// barycentric coordinates on every ternary space, so perimeter-based linear
/// interpolation reproduces it exactly.
#[derive(Clone, Debug)]
pub struct AffineTarget {
    weights: BTreeMap<Element, Vec<f64>>,
    bias: Vec<f64>,
}

impl AffineTarget {
    pub fn random(elements: &[Element], seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut weights = BTreeMap::new();
        for el in elements {
            let w: Vec<f64> = (0..CHANNELS).map(|_| rng.random_range(0.2..2.0)).collect();
            weights.insert(*el, w);
        }
        let bias: Vec<f64> = (0..CHANNELS).map(|_| rng.random_range(0.1..0.5)).collect();
        AffineTarget { weights, bias }
    }

    pub fn eval(&self, c: &Composition) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (el, f) in c.iter() {
            let w = self.weights.get(&el).unwrap_or_else(|| panic!("no weights for element {el}"));
            for (o, wv) in out.iter_mut().zip(w.iter()) {
                *o += f * wv;
            }
        }
        out
    }
}

/// A world where every element carries a hidden scalar property. The density
/// of states of a composition is a Gaussian bump whose position encodes the
/// composition-weighted property, and the absorption spectrum is driven by
/// window averages of that density of states, so the density of states is
/// genuinely informative about absorption.
#[derive(Clone, Debug)]
pub struct LatentWorld {
    rho: BTreeMap<Element, f64>,
    affine: AffineTarget,
    pair_scale: Vec<f64>,
    pub window_weight: f64,
    pub affine_weight: f64,
    pub pair_weight: f64,
}

impl LatentWorld {
    pub fn new(elements: &[Element], seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
        let mut rho = BTreeMap::new();
        for el in elements {
            rho.insert(*el, rng.random_range(-0.9..0.9));
        }
        let affine = AffineTarget::random(elements, seed.wrapping_add(1));
        let pair_scale: Vec<f64> = (0..CHANNELS).map(|_| rng.random_range(-1.0..1.0)).collect();
        LatentWorld {
            rho,
            affine,
            pair_scale,
            window_weight: 1.0,
            affine_weight: 0.3,
            pair_weight: 0.2,
        }
    }

    pub fn rho(&self, el: Element) -> f64 {
        *self.rho.get(&el).unwrap_or_else(|| panic!("no latent property for {el}"))
    }

    pub fn rho_bar(&self, c: &Composition) -> f64 {
        c.iter().map(|(el, f)| f * self.rho(el)).sum()
    }

    /// Noise-free density of states on the common grid: a main bump whose
    /// center tracks the mean latent property, plus a broad mirrored bump so
    /// every bin varies across compositions.
    pub fn true_dos(&self, c: &Composition) -> Vec<f64> {
        let center = 6.0 * self.rho_bar(c);
        dos_energy_grid()
            .iter()
            .map(|&x| {
                let main = (-(x - center).powi(2) / (2.0 * 1.5f64.powi(2))).exp();
                let broad = 0.15 * (-(x + center).powi(2) / (2.0 * 4.0f64.powi(2))).exp();
                main + broad
            })
            .collect()
    }

    /// Mean of the density of states over the window belonging to channel k.
    pub fn dos_window(&self, dos: &[f64], k: usize) -> f64 {
        let per = DOS_BINS / CHANNELS;
        let start = k * per;
        let end = if k == CHANNELS - 1 { DOS_BINS } else { start + per };
        dos[start..end].iter().sum::<f64>() / (end - start) as f64
    }

    /// Absorption target: window averages of the true density of states,
    /// plus a small affine term and pairwise interactions.
    pub fn absorption(&self, c: &Composition) -> Vec<f64> {
        let dos = self.true_dos(c);
        let pairs: f64 = {
            let parts: Vec<(Element, f64)> = c.iter().collect();
            let mut acc = 0.0;
            for i in 0..parts.len() {
                for j in (i + 1)..parts.len() {
                    acc += parts[i].1 * parts[j].1 * self.rho(parts[i].0) * self.rho(parts[j].0);
                }
            }
            acc
        };
        (0..CHANNELS)
            .map(|k| {
                self.window_weight * self.dos_window(&dos, k)
                    + self.affine_weight * self.affine.eval(c)[k]
                    + self.pair_weight * self.pair_scale[k] * pairs
            })
            .collect()
    }

    /// Random-composition corpus with the world's density of states plus
    /// optional Gaussian noise (clamped at zero).
    pub fn dos_corpus(&self, n: usize, max_cations: usize, noise: f64, seed: u64) -> Vec<DosRecord> {
        let elements: Vec<Element> = self.rho.keys().copied().collect();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let comp = random_composition(&mut rng, &elements, max_cations);
                let mut dos = self.true_dos(&comp);
                if noise > 0.0 {
                    for v in dos.iter_mut() {
                        *v = (*v + noise * standard_normal(&mut rng)).max(0.0);
                    }
                }
                DosRecord::new(comp, dos)
            })
            .collect()
    }
}

fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps this dependency-free
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Random composition with 1..=max_cations distinct elements and fractions
/// bounded away from zero.
pub fn random_composition(rng: &mut ChaCha12Rng, elements: &[Element], max_cations: usize) -> Composition {
    let k = rng.random_range(1..=max_cations.min(elements.len()));
    let mut picked: Vec<Element> = elements.to_vec();
    picked.shuffle(rng);
    picked.truncate(k);
    let fracs: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    Composition::new(picked.into_iter().zip(fracs)).expect("valid random composition")
}

/// Full simplex grids of the given trios evaluated through `f`, with
/// `extras_per_trio` off-grid records that share a pair of trio elements plus
/// one element borrowed from another trio (skipped when no outside element
/// exists).
pub fn grid_table(
    trios: &[ElementTrio],
    step: f64,
    f: impl Fn(&Composition) -> Vec<f64>,
    extras_per_trio: usize,
    seed: u64,
) -> SpectraTable {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let palette: Vec<Element> = {
        let mut all: Vec<Element> = trios.iter().flat_map(|t| t.elements()).collect();
        all.sort();
        all.dedup();
        all
    };
    let mut records = Vec::new();
    for trio in trios {
        for (comp, _) in enumerate_simplex_grid(trio, step).expect("valid step") {
            let y = f(&comp);
            records.push(SpectrumRecord::new(comp, y));
        }
        let outside: Vec<Element> = palette.iter().copied().filter(|e| !trio.contains(*e)).collect();
        if outside.is_empty() {
            continue;
        }
        let elems = trio.elements();
        for i in 0..extras_per_trio {
            let (a, b) = match i % 3 {
                0 => (elems[0], elems[1]),
                1 => (elems[0], elems[2]),
                _ => (elems[1], elems[2]),
            };
            let other = outside[rng.random_range(0..outside.len())];
            let fa = rng.random_range(0.25..0.45);
            let fb = rng.random_range(0.25..0.45);
            let comp = Composition::new([(a, fa), (b, fb), (other, 1.0 - fa - fb)]).unwrap();
            let y = f(&comp);
            records.push(SpectrumRecord::new(comp, y));
        }
    }
    SpectraTable::from_records(records)
}
