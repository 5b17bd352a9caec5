//! Central finite-difference check of the full restorer backward pass.

use heal_core::nn::{ParamStore, Tensor};
use heal_core::restorer::{mse, Restorer, RestorerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL_TOL: f64 = 1e-3;

fn tiny() -> RestorerConfig {
    RestorerConfig {
        channels_per_level: vec![8, 8],
        attention_from_level: 2,
        time_embed_dim: 8,
        input_size: 16,
        norm_groups: 4,
    }
}

fn loss_at(config: &RestorerConfig, params: ParamStore<f64>, x: &Tensor<f64>, ts: &[usize], y: &Tensor<f64>) -> f64 {
    let r = Restorer::with_params(config.clone(), params).unwrap();
    mse(&r.forward(x, ts), y).0
}

fn shifted(params: &ParamStore<f64>, dir: &[Vec<f64>], eps: f64) -> ParamStore<f64> {
    let mut p = params.clone();
    for (param, d) in p.params_mut().iter_mut().zip(dir) {
        for (v, dv) in param.value.iter_mut().zip(d) {
            *v += eps * dv;
        }
    }
    p
}

#[test]
fn loss_gradient_matches_central_differences() {
    let config = tiny();
    let restorer = Restorer::<f64>::new(config.clone(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 2;
    let x = Tensor::from_vec([n, 1, 16, 16], (0..n * 256).map(|_| rng.random_range(0.0..1.0)).collect());
    let y = Tensor::from_vec([n, 1, 16, 16], (0..n * 256).map(|_| rng.random_range(0.0..1.0)).collect());
    let ts = [7, 93];

    let (_, grads) = restorer.loss_and_grads(&x, &ts, &y);
    let params = restorer.params().clone();
    let eps = 1e-5;

    // Random direction over all parameters.
    let dir: Vec<Vec<f64>> = params
        .params()
        .iter()
        .map(|p| p.value.iter().map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let analytic: f64 = grads
        .all()
        .iter()
        .flatten()
        .zip(dir.iter().flatten())
        .map(|(g, d)| g * d)
        .sum();
    let numeric = (loss_at(&config, shifted(&params, &dir, eps), &x, &ts, &y)
        - loss_at(&config, shifted(&params, &dir, -eps), &x, &ts, &y))
        / (2.0 * eps);
    let rel = (numeric - analytic).abs() / analytic.abs().max(1e-12);
    println!("directional derivative: analytic {analytic:.9e} numeric {numeric:.9e} rel {rel:.2e}");
    assert!(rel < REL_TOL);

    // Single coordinates in every parameter tensor.
    for (pi, p) in params.params().iter().enumerate() {
        let j = rng.random_range(0..p.value.len());
        let dir: Vec<Vec<f64>> = params
            .params()
            .iter()
            .enumerate()
            .map(|(qi, q)| {
                let mut d = vec![0.0; q.value.len()];
                if qi == pi {
                    d[j] = 1.0;
                }
                d
            })
            .collect();
        let analytic = grads.all()[pi][j];
        let numeric = (loss_at(&config, shifted(&params, &dir, eps), &x, &ts, &y)
            - loss_at(&config, shifted(&params, &dir, -eps), &x, &ts, &y))
            / (2.0 * eps);
        let err = (numeric - analytic).abs();
        assert!(
            err <= REL_TOL * analytic.abs() + 1e-9,
            "{}[{j}]: analytic {analytic:e} numeric {numeric:e}",
            p.name
        );
    }
}
