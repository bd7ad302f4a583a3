//! Linear interpolation from the perimeter of a ternary composition space to
//! its interior: project compositions to 2-D, triangulate the available
//! perimeter points, and blend each property channel barycentrically.

use hclmp_core::{classify_against_trio, ternary_project, Composition, ElementTrio, SpectrumRecord, TernaryPoint, TrioRelation};

use crate::error::ModelError;

#[derive(Clone, Debug)]
pub struct LinInterpModel {
    pub trio: ElementTrio,
    points: Vec<TernaryPoint>,
    values: Vec<Vec<f64>>,
    triangles: Vec<[usize; 3]>,
    channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinInterpPrediction {
    pub values: Vec<f64>,
    /// True when the query fell outside the convex hull of the fitted
    /// points and the nearest point's values were used instead.
    pub out_of_hull: bool,
}

/// Fit the interpolator on the records of `trio`'s own subspaces (1- and
/// 2-element compositions of the trio). Records touching other elements are
/// ignored.
pub fn lininterp_fit(records: &[SpectrumRecord], trio: &ElementTrio) -> Result<LinInterpModel, ModelError> {
    let mut points: Vec<(TernaryPoint, Vec<f64>)> = Vec::new();
    let mut channels = None;
    for rec in records {
        if classify_against_trio(&rec.composition, trio) != TrioRelation::Subspace {
            continue;
        }
        let p = ternary_project(&rec.composition, trio)?;
        let ch = channels.get_or_insert(rec.absorption.len());
        if rec.absorption.len() != *ch {
            return Err(ModelError::BadConfig(format!(
                "record {} has {} channels, expected {ch}",
                rec.key(),
                rec.absorption.len()
            )));
        }
        points.push((p, rec.absorption.clone()));
    }
    if points.len() < 3 {
        return Err(ModelError::DegenerateGeometry {
            reason: format!("need at least 3 perimeter points, got {}", points.len()),
        });
    }
    // Deterministic order: lexicographic in (x, y) breaks cocircular ties.
    points.sort_by(|a, b| {
        (a.0.x, a.0.y)
            .partial_cmp(&(b.0.x, b.0.y))
            .expect("projected coordinates are finite")
    });

    // Projection noise can leave "collinear" inputs a hair off a line, which
    // the triangulation would happily turn into slivers. Reject them here:
    // every point must sit measurably off the line through the two extremes.
    let first = points.first().expect("checked above").0;
    let last = points.last().expect("checked above").0;
    let span = ((last.x - first.x).powi(2) + (last.y - first.y).powi(2)).sqrt();
    let collinear = points.iter().all(|(p, _)| {
        let cross = (p.x - first.x) * (last.y - first.y) - (p.y - first.y) * (last.x - first.x);
        cross.abs() <= 1e-9 * span.max(1e-9)
    });
    if collinear {
        return Err(ModelError::DegenerateGeometry { reason: "perimeter points are collinear".into() });
    }

    let sites: Vec<delaunator::Point> = points.iter().map(|(p, _)| delaunator::Point { x: p.x, y: p.y }).collect();
    let tri = delaunator::triangulate(&sites);
    if tri.triangles.is_empty() {
        return Err(ModelError::DegenerateGeometry { reason: "perimeter points are collinear".into() });
    }
    let triangles = tri
        .triangles
        .chunks(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let channels = channels.unwrap();
    let (points, values) = points.into_iter().unzip();
    Ok(LinInterpModel { trio: *trio, points, values, triangles, channels })
}

fn barycentric(p: &TernaryPoint, a: &TernaryPoint, b: &TernaryPoint, c: &TernaryPoint) -> Option<[f64; 3]> {
    let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    if det.abs() < 1e-18 {
        return None;
    }
    let l1 = ((b.x - p.x) * (c.y - p.y) - (c.x - p.x) * (b.y - p.y)) / det;
    let l2 = ((c.x - p.x) * (a.y - p.y) - (a.x - p.x) * (c.y - p.y)) / det;
    Some([l1, l2, 1.0 - l1 - l2])
}

impl LinInterpModel {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Interpolate one composition of the trio. Queries outside the hull
    /// fall back to the nearest fitted point and are flagged.
    pub fn predict_one(&self, comp: &Composition) -> Result<LinInterpPrediction, ModelError> {
        let p = ternary_project(comp, &self.trio)?;
        const TOL: f64 = -1e-12;
        for [i, j, k] in &self.triangles {
            let (a, b, c) = (&self.points[*i], &self.points[*j], &self.points[*k]);
            if let Some(l) = barycentric(&p, a, b, c) {
                if l.iter().all(|w| *w >= TOL) {
                    let mut values = vec![0.0; self.channels];
                    for ch in 0..self.channels {
                        values[ch] = l[0] * self.values[*i][ch]
                            + l[1] * self.values[*j][ch]
                            + l[2] * self.values[*k][ch];
                    }
                    return Ok(LinInterpPrediction { values, out_of_hull: false });
                }
            }
        }
        // Outside every triangle: nearest fitted point (first wins ties,
        // which is the lexicographically smallest thanks to fit-time sort).
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (idx, q) in self.points.iter().enumerate() {
            let d = (q.x - p.x).powi(2) + (q.y - p.y).powi(2);
            if d < best_d {
                best_d = d;
                best = idx;
            }
        }
        Ok(LinInterpPrediction { values: self.values[best].clone(), out_of_hull: true })
    }

    pub fn predict(&self, comps: &[Composition]) -> Result<Vec<LinInterpPrediction>, ModelError> {
        comps.iter().map(|c| self.predict_one(c)).collect()
    }
}
