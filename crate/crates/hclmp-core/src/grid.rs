use crate::composition::{Composition, ElementTrio};
use crate::error::CoreError;
use serde::{Deserialize, Serialize};

/// Position of a grid composition relative to its ternary space.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// All three fractions positive.
    Interior,
    /// At least one zero fraction; such points live in the 1- and 2-element
    /// subspaces.
    Perimeter,
}

fn step_denominator(step: f64) -> Result<u32, CoreError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(CoreError::BadStep { step });
    }
    let n = (1.0 / step).round();
    if n < 1.0 || (n * step - 1.0).abs() > 1e-9 {
        return Err(CoreError::BadStep { step });
    }
    Ok(n as u32)
}

/// All compositions of a ternary space whose fractions are integer multiples
/// of `step`, tagged interior or perimeter. Fractions are exact multiples,
/// computed as k/n, so equal grid points always share a canonical key.
pub fn enumerate_simplex_grid(
    trio: &ElementTrio,
    step: f64,
) -> Result<Vec<(Composition, Region)>, CoreError> {
    let n = step_denominator(step)?;
    let [e1, e2, e3] = trio.elements();
    let nf = n as f64;
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=(n - i) {
            let k = n - i - j;
            let comp = Composition::new([
                (e1, i as f64 / nf),
                (e2, j as f64 / nf),
                (e3, k as f64 / nf),
            ])?;
            let region = if i > 0 && j > 0 && k > 0 { Region::Interior } else { Region::Perimeter };
            out.push((comp, region));
        }
    }
    Ok(out)
}

/// If every fraction of `c` is an integer multiple of `step` (within 1e-9)
/// and `c`'s elements all belong to `trio`, return the integer counts in trio
/// element order. Off-grid or off-space compositions return None.
pub fn grid_counts(c: &Composition, trio: &ElementTrio, step: f64) -> Option<[u32; 3]> {
    let n = step_denominator(step).ok()?;
    if c.elements().any(|e| !trio.contains(e)) {
        return None;
    }
    let mut counts = [0u32; 3];
    let mut total = 0u32;
    for (slot, el) in trio.elements().into_iter().enumerate() {
        let f = c.fraction(el);
        let m = (f * n as f64).round();
        if (f - m / n as f64).abs() > 1e-9 {
            return None;
        }
        counts[slot] = m as u32;
        total += m as u32;
    }
    if total != n {
        return None;
    }
    Some(counts)
}

/// Grid membership classifier used during curation.
pub fn grid_region(c: &Composition, trio: &ElementTrio, step: f64) -> Option<Region> {
    let counts = grid_counts(c, trio, step)?;
    if counts.iter().all(|&k| k > 0) {
        Some(Region::Interior)
    } else {
        Some(Region::Perimeter)
    }
}
