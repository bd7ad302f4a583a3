use hclmp_autodiff::check::central_diff_check;
use hclmp_autodiff::{ParamStore, Tape, Var};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn random_array(rng: &mut ChaCha12Rng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
}

/// Build a store with the given named shapes, filled with seeded uniforms.
fn store_of(seed: u64, shapes: &[(&str, &[usize])]) -> ParamStore {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (name, shape) in shapes {
        let a = random_array(&mut rng, shape);
        s.add(*name, a);
    }
    s
}

fn check(store: &ParamStore, f: impl Fn(&Tape, &[Var]) -> Var, tol: f64) {
    let t = Tape::new();
    let vars = store.bind(&t);
    let y = f(&t, &vars);
    let grads = t.grad(y, &vars);
    let analytic: Vec<_> = grads.iter().map(|g| g.map(|g| t.value(g))).collect();
    let loss = |p: &ParamStore| {
        let t2 = Tape::new();
        let vars2 = p.bind(&t2);
        t2.scalar_value(f(&t2, &vars2))
    };
    let rep = central_diff_check(loss, store, &analytic, 1e-5, 24);
    assert!(
        rep.max_rel_err < tol,
        "max rel err {} at {}[{}] analytic {} numeric {}",
        rep.max_rel_err,
        rep.worst_param,
        rep.worst_index,
        rep.analytic,
        rep.numeric
    );
}

#[test]
fn elementwise_chain() {
    let s = store_of(1, &[("x", &[3, 4])]);
    check(
        &s,
        |t, v| {
            let a = t.tanh(v[0]);
            let b = t.sigmoid(t.mul_scalar(v[0], 0.7));
            let c = t.softplus(t.sub(a, b));
            let d = t.exp(t.mul_scalar(c, 0.3));
            t.sum_all(d)
        },
        1e-6,
    );
}

#[test]
fn sqrt_ln_abs_chain() {
    let mut s = store_of(2, &[("x", &[5])]);
    // keep strictly positive for ln/sqrt
    s.value_mut(0).mapv_inplace(|x| x.abs() + 0.5);
    check(
        &s,
        |t, v| {
            let a = t.sqrt(v[0]);
            let b = t.ln(a);
            let c = t.abs(t.add_scalar(b, 0.1));
            t.sum_all(c)
        },
        1e-6,
    );
}

#[test]
fn broadcast_binary_ops() {
    let s = store_of(3, &[("a", &[2, 3, 4]), ("b", &[3, 1]), ("c", &[4])]);
    check(
        &s,
        |t, v| {
            let x = t.mul(v[0], v[1]);
            let y = t.add(x, v[2]);
            let z = t.div(y, t.add_scalar(t.square(v[1]), 2.0));
            t.sum_all(t.tanh(z))
        },
        1e-6,
    );
}

#[test]
fn matmul_2d_2d() {
    let s = store_of(4, &[("a", &[3, 4]), ("b", &[4, 2])]);
    check(&s, |t, v| t.sum_all(t.tanh(t.matmul(v[0], v[1]))), 1e-6);
}

#[test]
fn matmul_3d_3d() {
    let s = store_of(5, &[("a", &[2, 3, 4]), ("b", &[2, 4, 5])]);
    check(&s, |t, v| t.sum_all(t.tanh(t.matmul(v[0], v[1]))), 1e-6);
}

#[test]
fn matmul_3d_2d_and_2d_3d() {
    let s = store_of(6, &[("a", &[2, 3, 4]), ("w", &[4, 5]), ("m", &[3, 2]), ("b", &[2, 2, 4])]);
    check(
        &s,
        |t, v| {
            let x = t.matmul(v[0], v[1]); // (2,3,5)
            let y = t.matmul(v[2], v[3]); // (2,3,4)
            let z = t.matmul(y, v[1]); // (2,3,5)
            t.sum_all(t.tanh(t.add(x, z)))
        },
        1e-6,
    );
}

#[test]
fn reductions_and_broadcast_back() {
    let s = store_of(7, &[("x", &[3, 4, 2])]);
    check(
        &s,
        |t, v| {
            let m = t.mean_axis(v[0], 1); // (3,1,2)
            let centered = t.sub(v[0], m);
            let var = t.mean_axis(t.square(centered), 1);
            t.sum_all(t.sqrt(t.add_scalar(var, 1e-6)))
        },
        1e-5,
    );
}

#[test]
fn softmax_gradient() {
    let s = store_of(8, &[("x", &[4, 6])]);
    check(
        &s,
        |t, v| {
            let sm = t.softmax(t.mul_scalar(v[0], 2.0), 1);
            let w = t.leaf(ArrayD::from_shape_fn(IxDyn(&[4, 6]), |ix| (ix[0] + 2 * ix[1]) as f64 * 0.1));
            t.sum_all(t.mul(sm, w))
        },
        1e-6,
    );
}

#[test]
fn concat_slice_pad_swap() {
    let s = store_of(9, &[("a", &[2, 3]), ("b", &[2, 2])]);
    check(
        &s,
        |t, v| {
            let c = t.concat(&[v[0], v[1]], 1); // (2,5)
            let sl = t.slice(c, 1, 1, 3);
            let sw = t.swap_axes(sl, 0, 1); // (3,2)
            let p = t.pad_zeros(sw, 0, 1, 1); // (5,2)
            t.sum_all(t.tanh(p))
        },
        1e-6,
    );
}

#[test]
fn gather_gradient() {
    let s = store_of(10, &[("table", &[5, 3])]);
    check(
        &s,
        |t, v| {
            let g = t.gather(v[0], &[4, 0, 0, 2]);
            t.sum_all(t.tanh(g))
        },
        1e-6,
    );
}

#[test]
fn reshape_broadcast_to() {
    let s = store_of(11, &[("x", &[6]), ("y", &[1, 3])]);
    check(
        &s,
        |t, v| {
            let r = t.reshape(v[0], &[2, 3, 1]);
            let b = t.broadcast_to(v[1], &[2, 3, 3]);
            let m = t.mul(r, b);
            t.sum_all(t.softplus(m))
        },
        1e-6,
    );
}

#[test]
fn relu_and_leaky_relu() {
    // offsets keep entries away from the kink so finite differences are valid
    let mut s = store_of(12, &[("x", &[40])]);
    s.value_mut(0).mapv_inplace(|x| if x.abs() < 0.05 { x + 0.1 } else { x });
    check(
        &s,
        |t, v| {
            let r = t.relu(v[0]);
            let l = t.leaky_relu(v[0], 0.2);
            t.sum_all(t.add(r, t.mul_scalar(l, 0.5)))
        },
        1e-6,
    );
}

/// Gradient-penalty pattern: differentiate the squared norm of a gradient.
/// The outer derivative flows through the inner backward pass, so this
/// exercises true second-order reverse mode.
#[test]
fn second_order_penalty_gradient() {
    let s = store_of(13, &[("w1", &[4, 8]), ("w2", &[8, 1]), ("x", &[6, 4])]);
    let t = Tape::new();
    let vars = s.bind(&t);

    let build = |t: &Tape, v: &[Var]| -> Var {
        let h = t.tanh(t.matmul(v[2], v[0]));
        let out = t.matmul(h, v[1]); // (6,1)
        let total = t.sum_all(out);
        let gx = t.grad(total, &[v[2]])[0].unwrap(); // (6,4), on tape
        let norm2 = t.sum_axis(t.square(gx), 1); // (6,1)
        let norm = t.sqrt(t.add_scalar(norm2, 1e-12));
        let dev = t.add_scalar(norm, -1.0);
        t.mean_all(t.square(dev))
    };

    let penalty = build(&t, &vars);
    let grads = t.grad(penalty, &vars);
    let analytic: Vec<_> = grads.iter().map(|g| g.map(|g| t.value(g))).collect();
    let loss = |p: &ParamStore| {
        let t2 = Tape::new();
        let v2 = p.bind(&t2);
        t2.scalar_value(build(&t2, &v2))
    };
    let rep = central_diff_check(loss, &s, &analytic, 1e-5, 24);
    assert!(
        rep.max_rel_err < 1e-5,
        "second-order rel err {} at {}[{}]",
        rep.max_rel_err,
        rep.worst_param,
        rep.worst_index
    );
}

/// Gradients remain exact when the graph mixes shared subexpressions.
#[test]
fn shared_subexpression_accumulation() {
    let s = store_of(14, &[("x", &[3, 3])]);
    check(
        &s,
        |t, v| {
            let a = t.tanh(v[0]);
            let b = t.matmul(a, a);
            let c = t.add(b, a);
            t.sum_all(t.mul(c, a))
        },
        1e-6,
    );
}
