use crate::error::CoreError;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::fmt;

const SYMBOLS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn",
    "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
];

/// A validated chemical element symbol. Ordering is lexicographic by symbol,
/// which fixes the canonical order used everywhere (keys, trios, projections).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Element(&'static str);

impl Element {
    pub fn parse(symbol: &str) -> Result<Self, CoreError> {
        SYMBOLS
            .iter()
            .find(|s| **s == symbol)
            .map(|s| Element(s))
            .ok_or_else(|| CoreError::UnknownElement { symbol: symbol.to_string() })
    }

    pub fn symbol(&self) -> &'static str {
        self.0
    }
}

impl PartialOrd for Element {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Element {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.cmp(other.0)
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

impl fmt::Debug for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

impl Serialize for Element {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.0)
    }
}

impl<'de> Deserialize<'de> for Element {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Element::parse(&text).map_err(D::Error::custom)
    }
}

/// Normalized element-fraction map: strictly positive fractions summing to 1.
/// Zero entries are dropped on construction, so the element set is exactly
/// the support.
#[derive(Clone, Debug, PartialEq)]
pub struct Composition {
    parts: BTreeMap<Element, f64>,
}

impl Composition {
    pub fn new(pairs: impl IntoIterator<Item = (Element, f64)>) -> Result<Self, CoreError> {
        let mut parts: BTreeMap<Element, f64> = BTreeMap::new();
        for (el, frac) in pairs {
            if !frac.is_finite() {
                return Err(CoreError::NonFiniteFraction { element: el.symbol().to_string() });
            }
            if frac < 0.0 {
                return Err(CoreError::NegativeFraction { element: el.symbol().to_string(), value: frac });
            }
            if frac == 0.0 {
                continue;
            }
            if parts.insert(el, frac).is_some() {
                return Err(CoreError::DuplicateElement { symbol: el.symbol().to_string() });
            }
        }
        if parts.is_empty() {
            return Err(CoreError::EmptyComposition);
        }
        let sum: f64 = parts.values().sum();
        if sum <= 0.0 {
            return Err(CoreError::EmptyComposition);
        }
        for v in parts.values_mut() {
            *v /= sum;
        }
        Ok(Composition { parts })
    }

    /// Parse `"El:frac,El:frac,..."`.
    pub fn parse(text: &str) -> Result<Self, CoreError> {
        let mut pairs = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            if part.is_empty() {
                return Err(CoreError::BadCompositionText {
                    text: text.to_string(),
                    msg: "empty component".to_string(),
                });
            }
            let (sym, frac) = part.split_once(':').ok_or_else(|| CoreError::BadCompositionText {
                text: text.to_string(),
                msg: format!("component '{part}' is missing ':'"),
            })?;
            let el = Element::parse(sym.trim())?;
            let frac: f64 = frac.trim().parse().map_err(|_| CoreError::BadCompositionText {
                text: text.to_string(),
                msg: format!("bad fraction in '{part}'"),
            })?;
            pairs.push((el, frac));
        }
        Composition::new(pairs)
    }

    /// Full-precision text form; `parse(format(c))` reproduces `c` exactly.
    pub fn format(&self) -> String {
        self.parts
            .iter()
            .map(|(el, f)| format!("{el}:{f}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Deduplication key: elements in canonical order, fractions rounded to
    /// six decimals.
    pub fn canonical_key(&self) -> String {
        self.parts
            .iter()
            .map(|(el, f)| format!("{el}:{f:.6}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn elements(&self) -> impl Iterator<Item = Element> + '_ {
        self.parts.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Element, f64)> + '_ {
        self.parts.iter().map(|(e, f)| (*e, *f))
    }

    pub fn fraction(&self, el: Element) -> f64 {
        self.parts.get(&el).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, el: Element) -> bool {
        self.parts.contains_key(&el)
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }
}

impl Serialize for Composition {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.format())
    }
}

impl<'de> Deserialize<'de> for Composition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Composition::parse(&text).map_err(D::Error::custom)
    }
}

/// Three distinct elements in canonical order; names a ternary composition
/// space.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ElementTrio {
    elems: [Element; 3],
}

impl ElementTrio {
    pub fn new(a: Element, b: Element, c: Element) -> Result<Self, CoreError> {
        let mut elems = [a, b, c];
        elems.sort();
        if elems[0] == elems[1] || elems[1] == elems[2] {
            return Err(CoreError::BadTrio);
        }
        Ok(ElementTrio { elems })
    }

    pub fn elements(&self) -> [Element; 3] {
        self.elems
    }

    pub fn contains(&self, el: Element) -> bool {
        self.elems.contains(&el)
    }

    /// Label such as "Ag-Bi-Sm".
    pub fn label(&self) -> String {
        format!("{}-{}-{}", self.elems[0], self.elems[1], self.elems[2])
    }

    pub fn parse_label(text: &str) -> Result<Self, CoreError> {
        let parts: Vec<&str> = text.split('-').collect();
        if parts.len() != 3 {
            return Err(CoreError::BadTrio);
        }
        ElementTrio::new(Element::parse(parts[0])?, Element::parse(parts[1])?, Element::parse(parts[2])?)
    }
}

impl fmt::Display for ElementTrio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for ElementTrio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for ElementTrio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        ElementTrio::parse_label(&text).map_err(D::Error::custom)
    }
}

/// How a composition relates to a ternary space.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TrioRelation {
    /// All three trio elements present.
    ContainsAllThree,
    /// Element set is a strict subset of the trio (one or two of them).
    Subspace,
    /// Exactly two trio elements present plus at least one outside element.
    SharesPair,
    /// At most one trio element present (and not a subspace).
    DisjointOrPartial,
}

pub fn classify_against_trio(c: &Composition, trio: &ElementTrio) -> TrioRelation {
    let in_trio = c.elements().filter(|e| trio.contains(*e)).count();
    let subset = in_trio == c.len();
    match in_trio {
        3 => TrioRelation::ContainsAllThree,
        _ if subset => TrioRelation::Subspace,
        2 => TrioRelation::SharesPair,
        _ => TrioRelation::DisjointOrPartial,
    }
}
