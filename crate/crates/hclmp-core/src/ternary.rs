use crate::composition::{Composition, ElementTrio};
use crate::error::CoreError;
use serde::{Deserialize, Serialize};

/// 2-D coordinates inside the unit-edge equilateral triangle with vertices
/// (0,0), (1,0), (0.5, sqrt(3)/2).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TernaryPoint {
    pub x: f64,
    pub y: f64,
}

/// Project a composition onto its ternary triangle. Fractions are read in
/// the trio's canonical element order (a, b, c); missing elements count as
/// zero, elements outside the trio are an error.
pub fn ternary_project(c: &Composition, trio: &ElementTrio) -> Result<TernaryPoint, CoreError> {
    for el in c.elements() {
        if !trio.contains(el) {
            return Err(CoreError::ElementOutsideTrio {
                element: el.symbol().to_string(),
                trio: trio.label(),
            });
        }
    }
    let [e1, e2, _] = trio.elements();
    let a = c.fraction(e1);
    let b = c.fraction(e2);
    Ok(TernaryPoint { x: 1.0 - a - b / 2.0, y: b * 3f64.sqrt() / 2.0 })
}
