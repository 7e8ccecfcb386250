mod common;

use apc::encoder::{encode_graph, refine_graph};
use apc::graph::{Graph, Var};
use apc::head::{PoolingConfig, PoolingMode};
use apc::model::Model;
use apc::nn::{Binder, ParamStore};
use apc::patchify::{partition, ImageTensor};
use common::*;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `sum(probe * refine(encode(tokens)))` over a fresh graph, with the token
/// input variable.
fn encoder_probe(
    g: &mut Graph,
    b: &mut Binder,
    tokens: &Array2<f64>,
    probe: &Array2<f64>,
    trainable_tokens: bool,
) -> (Var, Var) {
    let cfg = tiny_model_config().encoder;
    let image = ImageTensor::new(Array3::zeros((8, 8, 3))).unwrap();
    let dims = partition(&image, cfg.patch).unwrap().dims();
    let t = if trainable_tokens {
        g.param(tokens.clone())
    } else {
        g.constant(tokens.clone())
    };
    let enc = encode_graph(g, b, &cfg, t, dims, None).unwrap();
    let out = refine_graph(g, b, enc.f_in, dims.grid_h, dims.grid_w, cfg.lstm_hidden).unwrap();
    let p = g.constant(probe.clone());
    let weighted = g.mul(out, p);
    (g.sum(weighted), t)
}

fn probe_value(params: &ParamStore, tokens: &Array2<f64>, probe: &Array2<f64>) -> f64 {
    let mut g = Graph::new();
    let mut b = Binder::new(params, false);
    let (v, _) = encoder_probe(&mut g, &mut b, tokens, probe, false);
    g.scalar(v)
}

#[test]
fn encoder_and_refiner_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let model = Model::new(tiny_model_config(), 5).unwrap();
    let image =
        ImageTensor::new(Array3::from_shape_simple_fn((8, 8, 3), || rng.gen::<f64>())).unwrap();
    let tokens = partition(&image, 4).unwrap().tokens();
    let probe = Array2::from_shape_simple_fn((4, 8), || rng.gen_range(-1.0..1.0));

    let mut g = Graph::new();
    let mut b = Binder::new(&model.params, true);
    let (root, token_var) = encoder_probe(&mut g, &mut b, &tokens, &probe, true);
    let grads = g.backward(root);
    let bound: Vec<(String, Var)> = b.bound().map(|(n, v)| (n.clone(), *v)).collect();
    assert!(
        bound.iter().any(|(n, _)| n.starts_with("hv.")),
        "refiner parameters take part"
    );

    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (name, var) in &bound {
        let base = model.params.get(name).unwrap().clone();
        let mut params = model.params.clone();
        let fd = finite_diff(&base, 1e-5, |p| {
            params.insert(name.clone(), p.clone());
            probe_value(&params, &tokens, &probe)
        });
        analytic.extend(grads.get(*var).unwrap().iter().copied());
        numeric.extend(fd.iter().copied());
    }
    let token_grad = grads.get(token_var).unwrap();
    let token_fd = finite_diff(&tokens, 1e-5, |t| probe_value(&model.params, t, &probe));
    analytic.extend(token_grad.iter().copied());
    numeric.extend(token_fd.iter().copied());

    let flat = |v: Vec<f64>| Array2::from_shape_vec((1, v.len()), v).unwrap();
    let err = rel_err(&flat(analytic), &flat(numeric));
    assert!(err <= 1e-4, "relative error {err:.3e}");
}

#[test]
fn pooled_gradient_is_one_over_k_on_the_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..50 {
        let z = random_simplex_rows(&mut rng, 9, 4);
        let mode = PoolingMode::ALL[trial % 4];
        let cfg = PoolingConfig {
            mode,
            k: 1 + trial % 6,
            theta: [0.0, 0.5, 0.9, 1.5][trial % 4],
        };
        let selection = cfg.select_all(&z).unwrap();
        let weights = Array2::from_shape_simple_fn((1, 4), || rng.gen_range(0.5..2.0));

        let mut g = Graph::new();
        let zv = g.param(z.clone());
        let y = g.pool_selected(zv, selection.clone());
        let w = g.constant(weights.clone());
        let wy = g.mul(y, w);
        let root = g.sum(wy);
        let analytic = g.backward(root).get(zv).unwrap().clone();

        for c in 0..4 {
            let k = selection[c].len() as f64;
            for i in 0..9 {
                let expected = if selection[c].contains(&i) {
                    weights[(0, c)] / k
                } else {
                    0.0
                };
                assert!(
                    (analytic[(i, c)] - expected).abs() < 1e-12,
                    "trial {trial} ({i}, {c})"
                );
            }
        }
        // selection held fixed while probing
        let numeric = finite_diff(&z, 1e-6, |p| {
            (0..4)
                .map(|c| {
                    weights[(0, c)] * selection[c].iter().map(|&i| p[(i, c)]).sum::<f64>()
                        / selection[c].len() as f64
                })
                .sum()
        });
        assert!(rel_err(&analytic, &numeric) < 1e-8);
    }
}
