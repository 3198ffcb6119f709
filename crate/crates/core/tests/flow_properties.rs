mod common;

use common::{numeric_log_det, random_inn};
use invdesign_core::flow::FLOW_DIM;
use invdesign_core::numgrad::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn inverse_undoes_forward() {
    for state in 0..3 {
        let model = random_inn(100 + state);
        let mut rng = ChaCha8Rng::seed_from_u64(state);
        let x = common::normal(300, FLOW_DIM, &mut rng);
        let back = model.inverse(&model.forward(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-6);
        let yz = common::normal(300, FLOW_DIM, &mut rng);
        let again = model.forward(&model.inverse(&yz).unwrap()).unwrap();
        assert!(again.max_abs_diff(&yz) < 1e-6);
    }
}

#[test]
fn log_det_matches_numeric_jacobian() {
    let model = random_inn(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = common::normal(10, FLOW_DIM, &mut rng);
    let analytic = model.log_det_jacobian(&x).unwrap();
    for (r, a) in x.iter_rows().zip(&analytic) {
        let n = numeric_log_det(&model, r);
        assert!((a - n).abs() < 1e-4, "{a} vs {n}");
    }
}

#[test]
fn graph_forward_matches_plain_forward() {
    let model = random_inn(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = common::normal(16, FLOW_DIM, &mut rng);
    let mut g = invdesign_core::numgrad::Graph::new();
    let bound = model.bind(&mut g);
    let xi = g.constant(x.clone());
    let out = model.forward_graph(&mut g, xi, &bound).unwrap();
    assert_eq!(g.value(out).data(), model.forward(&x).unwrap().data());
    let yi = g.constant(g.value(out).clone());
    let back = model.inverse_graph(&mut g, yi, &bound).unwrap();
    assert!(g.value(back).max_abs_diff(&x) < 1e-9);
}

#[test]
fn saved_model_predicts_identically() {
    let model = random_inn(11);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    let loaded = invdesign_core::flow::InnModel::load(&path).unwrap();
    let x = Tensor::from_fn(5, FLOW_DIM, |r, c| (r as f64 - c as f64) * 0.3);
    assert_eq!(loaded.forward(&x).unwrap(), model.forward(&x).unwrap());
}
