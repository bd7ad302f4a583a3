use hclmp_autodiff::{ParamStore, Tape, Var};
use hclmp_core::Composition;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Fully connected layer; holds parameter-store indices, not values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha12Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = ArrayD::from_shape_fn(IxDyn(&[in_dim, out_dim]), |_| rng.random_range(-bound..bound));
        let b = ArrayD::zeros(IxDyn(&[out_dim]));
        Dense {
            w: store.add(format!("{name}.w"), w),
            b: store.add(format!("{name}.b"), b),
            in_dim,
            out_dim,
        }
    }

    /// x @ W + b for 2-D (batch, in) or 3-D (batch, nodes, in) input.
    pub fn forward(&self, t: &Tape, vars: &[Var], x: Var) -> Var {
        t.add(t.matmul(x, vars[self.w]), vars[self.b])
    }
}

/// Stack of Dense layers with leaky-relu hidden activations and a linear
/// output layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl Mlp {
    /// `dims` includes input and output: [in, h1, ..., out].
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha12Rng, name: &str, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, rng, &format!("{name}.l{i}"), w[0], w[1]))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, t: &Tape, vars: &[Var], x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(t, vars, h);
            if i + 1 < self.layers.len() {
                h = t.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        h
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }
}

/// Sub-seed derived from a run seed and a composition's canonical key, so
/// per-composition noise does not depend on batch position or order.
pub fn derive_subseed(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&seed.to_le_bytes());
    eat(key.as_bytes());
    h
}

/// Standard normal array from a seeded generator.
pub fn normal_array(rng: &mut ChaCha12Rng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

/// Fraction vector of a composition over an ordered element universe.
pub fn composition_vector(
    comp: &Composition,
    universe: &[hclmp_core::Element],
) -> Result<Vec<f64>, crate::error::ModelError> {
    let mut v = vec![0.0; universe.len()];
    for (el, f) in comp.iter() {
        match universe.binary_search(&el) {
            Ok(i) => v[i] = f,
            Err(_) => {
                return Err(crate::error::ModelError::OutsideUniverse { symbol: el.symbol().to_string() })
            }
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn mlp_shapes_and_determinism() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mlp = Mlp::new(&mut store, &mut rng, "net", &[4, 8, 3]);
        let t = Tape::new();
        let vars = store.bind(&t);
        let x = t.leaf(ArrayD::zeros(IxDyn(&[5, 4])));
        let y = mlp.forward(&t, &vars, x);
        assert_eq!(t.shape(y), vec![5, 3]);
    }

    #[test]
    fn subseed_depends_on_both_inputs() {
        let a = derive_subseed(1, "Fe:1.000000");
        let b = derive_subseed(2, "Fe:1.000000");
        let c = derive_subseed(1, "Bi:1.000000");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_subseed(1, "Fe:1.000000"));
    }

    #[test]
    fn composition_vector_orders_by_universe() {
        let els = hclmp_core::synth::elements(&["Ag", "Bi", "Fe"]);
        let c = Composition::parse("Fe:0.25,Ag:0.75").unwrap();
        let v = composition_vector(&c, &els).unwrap();
        assert_eq!(v, vec![0.75, 0.0, 0.25]);
        let bad = Composition::parse("Cu:1").unwrap();
        assert!(composition_vector(&bad, &els).is_err());
    }
}
