use ace_core::nn::{
    fit_regression, AdamState, FitConfig, FixedPairs, Loss, NetArch, NetParams, PairSource,
    SetEmbedArch,
};
use ace_core::rng::{self, Rng};
use ace_core::Result;
use perm::permutations;
use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

mod perm {
    /// All permutations of `0..n` (Heap's algorithm).
    pub fn permutations(n: usize) -> Vec<Vec<usize>> {
        fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if k == 1 {
                out.push(a.clone());
                return;
            }
            heap(k - 1, a, out);
            for i in 0..k - 1 {
                if k % 2 == 0 {
                    a.swap(i, k - 1);
                } else {
                    a.swap(0, k - 1);
                }
                heap(k - 1, a, out);
            }
        }
        let mut a: Vec<usize> = (0..n).collect();
        let mut out = Vec::new();
        heap(n, &mut a, &mut out);
        out
    }
}

/// Straightforward layer-by-layer evaluation written against the public layout.
fn reference_forward(p: &NetParams, row: &[f64]) -> f64 {
    let lin = |l: &ace_core::nn::LayerShape, x: &[f64]| -> Vec<f64> {
        (0..l.rows)
            .map(|r| {
                let mut acc = p.values[l.bias_offset() + r];
                for c in 0..l.cols {
                    acc += p.values[l.offset + r * l.cols + c] * x[c];
                }
                acc
            })
            .collect()
    };
    let relu = |v: Vec<f64>| v.into_iter().map(|a| if a > 0.0 { a } else { 0.0 }).collect::<Vec<_>>();
    let s = &p.standardizer;
    let d = p.arch.input_dim;
    let mut h: Vec<f64> = (0..d).map(|c| (row[c] - s.direct_mean[c]) / s.direct_std[c]).collect();
    if let Some(e) = &p.arch.embedding {
        let pts: Vec<Vec<f64>> = row[d..]
            .chunks(e.point_dim)
            .map(|pt| pt.iter().enumerate().map(|(c, v)| (v - s.point_mean[c]) / s.point_std[c]).collect())
            .collect();
        let mut pooled = vec![0.0; e.out_dim];
        for pt in &pts {
            let mut a = pt.clone();
            let n = p.layout.embed.len();
            for (i, l) in p.layout.embed.iter().enumerate() {
                a = lin(l, &a);
                if i + 1 < n {
                    a = relu(a);
                }
            }
            for (q, v) in pooled.iter_mut().zip(a) {
                *q += v / pts.len() as f64;
            }
        }
        h.extend(pooled);
    }
    if p.arch.residual {
        let mut x = lin(&p.layout.trunk[0], &h);
        for pair in p.layout.trunk[1..].chunks(2) {
            let z = lin(&pair[0], &relu(x.clone()));
            let upd = lin(&pair[1], &relu(z));
            x = x.iter().zip(upd).map(|(a, b)| a + b).collect();
        }
        lin(&p.layout.head, &x)[0]
    } else {
        let mut x = h;
        for l in &p.layout.trunk {
            x = relu(lin(l, &x));
        }
        lin(&p.layout.head, &x)[0]
    }
}

fn random_rows(rng: &mut Rng, n: usize, width: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, width), |_| rng.random_range(-2.0..2.0))
}

fn perturbed_standardizer(p: &mut NetParams, rng: &mut Rng) {
    for v in p.standardizer.direct_mean.iter_mut().chain(p.standardizer.point_mean.iter_mut()) {
        *v = rng.random_range(-0.5..0.5);
    }
    for v in p.standardizer.direct_std.iter_mut().chain(p.standardizer.point_std.iter_mut()) {
        *v = rng.random_range(0.5..2.0);
    }
}

fn small_archs() -> Vec<(NetArch, usize)> {
    let mut res = NetArch::residual(3);
    res.hidden_dim = 6;
    res.n_hidden_layers = 2;
    let plain = NetArch::mlp(4, 5, 2);
    let mut emb = NetArch::residual(2).with_embedding(SetEmbedArch {
        point_dim: 2,
        n_layers: 2,
        width: 5,
        out_dim: 3,
        pooling: Default::default(),
    });
    emb.hidden_dim = 4;
    emb.n_hidden_layers = 1;
    vec![(res, 3), (plain, 4), (emb, 2 + 4 * 2)]
}

#[test]
fn forward_matches_reference_implementation() {
    let mut rng = rng::seeded(1);
    for (i, (arch, width)) in small_archs().into_iter().enumerate() {
        let mut p = NetParams::init(&arch, i as u64).unwrap();
        perturbed_standardizer(&mut p, &mut rng);
        let rows = random_rows(&mut rng, 7, width);
        let batch = p.forward_batch(rows.view()).unwrap();
        for (r, row) in rows.rows().into_iter().enumerate() {
            let row = row.to_vec();
            let expected = reference_forward(&p, &row);
            assert!((batch[r] - expected).abs() < 1e-12, "batch path");
            assert!((p.predict_row(&row).unwrap() - expected).abs() < 1e-12, "row path");
        }
    }
}

#[test]
fn narrow_embeddings_evaluate() {
    let mut rng = rng::seeded(11);
    for (out_dim, width, points, batch) in [(1, 3, 1, 1), (1, 2, 4, 3), (2, 1, 1, 5), (3, 2, 1, 1)] {
        let mut arch = NetArch::residual(1).with_embedding(SetEmbedArch {
            point_dim: 1,
            n_layers: 1,
            width,
            out_dim,
            pooling: Default::default(),
        });
        arch.hidden_dim = 3;
        arch.n_hidden_layers = 1;
        let p = NetParams::init(&arch, 5).unwrap();
        let rows = random_rows(&mut rng, batch, 1 + points);
        let out = p.forward_batch(rows.view()).unwrap();
        for (r, row) in rows.rows().into_iter().enumerate() {
            assert!((out[r] - reference_forward(&p, &row.to_vec())).abs() < 1e-12);
        }
        let labels = Array1::zeros(batch);
        assert!(p.loss_and_gradient(rows.view(), labels.view(), Loss::Mse).is_ok());
    }
}

#[test]
fn conditioned_evaluation_matches_full_row() {
    let mut rng = rng::seeded(2);
    for (i, (arch, width)) in small_archs().into_iter().enumerate() {
        let mut p = NetParams::init(&arch, 10 + i as u64).unwrap();
        perturbed_standardizer(&mut p, &mut rng);
        let row: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
        let free = 2.min(arch.input_dim);
        let cond = p.condition(free, &row[free..]).unwrap();
        let a = cond.predict(&row[..free]).unwrap();
        let b = p.predict_row(&row).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_network_outputs_final_bias() {
    let arch = NetArch::residual(3);
    let mut p = NetParams::zeros(&arch).unwrap();
    let head = p.layout.head;
    p.values[head.bias_offset()] = 0.731;
    let mut rng = rng::seeded(3);
    let rows = random_rows(&mut rng, 5, 3);
    assert!(p.forward_batch(rows.view()).unwrap().iter().all(|v| *v == 0.731));
}

#[test]
fn init_forward_is_finite() {
    let mut rng = rng::seeded(4);
    for (arch, width) in small_archs() {
        let p = NetParams::init(&arch, 99).unwrap();
        let rows = random_rows(&mut rng, 20, width).mapv(|v| v * 100.0);
        assert!(p.forward_batch(rows.view()).unwrap().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn set_embedding_is_permutation_invariant_over_all_orders() {
    let arch = NetArch::residual(2).with_embedding(SetEmbedArch::new(2));
    let p = NetParams::init(&arch, 5).unwrap();
    let mut rng = rng::seeded(5);
    let theta = [0.3, -0.2];
    let pts: Vec<[f64; 2]> = (0..5).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
    let perms = permutations(5);
    assert_eq!(perms.len(), 120);
    let mut reference = None;
    for perm in perms {
        let mut row = theta.to_vec();
        for &i in &perm {
            row.extend_from_slice(&pts[i]);
        }
        let out = p.predict_row(&row).unwrap();
        let r = *reference.get_or_insert(out);
        assert!((out - r).abs() < 1e-12);
    }
}

#[test]
fn perfect_predictions_give_zero_gradient() {
    let arch = NetArch::mlp(2, 4, 1);
    let p = NetParams::init(&arch, 6).unwrap();
    let mut rng = rng::seeded(6);
    let rows = random_rows(&mut rng, 9, 2);
    let labels = p.forward_batch(rows.view()).unwrap();
    let g = p.mse_gradient(rows.view(), labels.view()).unwrap();
    assert!(g.iter().all(|v| *v == 0.0));
}

#[test]
fn single_linear_layer_gradient_is_chain_rule() {
    // One active relu unit feeding a linear head: ŷ = w_head·(w·x + b), so every
    // gradient coordinate is 2(ŷ − d) times its input.
    let arch = NetArch::mlp(2, 1, 1);
    let mut p = NetParams::zeros(&arch).unwrap();
    let hidden = p.layout.trunk[0];
    let head = p.layout.head;
    p.values[hidden.offset] = 0.5;
    p.values[hidden.offset + 1] = 1.5;
    p.values[hidden.bias_offset()] = 0.1;
    p.values[head.offset] = 2.0;
    let x = [1.0, 2.0];
    let a = 0.5 * 1.0 + 1.5 * 2.0 + 0.1;
    let yhat = 2.0 * a;
    let d = 1.0;
    let rows = Array2::from_shape_vec((1, 2), x.to_vec()).unwrap();
    let g = p.mse_gradient(rows.view(), Array1::from(vec![d]).view()).unwrap();
    let r = 2.0 * (yhat - d);
    assert!((g[head.offset] - r * a).abs() < 1e-12);
    assert!((g[head.bias_offset()] - r).abs() < 1e-12);
    assert!((g[hidden.offset] - r * 2.0 * x[0]).abs() < 1e-12);
    assert!((g[hidden.offset + 1] - r * 2.0 * x[1]).abs() < 1e-12);
}

/// Central finite differences on the mean loss; returns the max relative error
/// over coordinates whose gradient is not negligibly small.
pub fn max_fd_relative_error(p: &NetParams, rows: &Array2<f64>, labels: &Array1<f64>, loss: Loss) -> f64 {
    let (_, g) = p.loss_and_gradient(rows.view(), labels.view(), loss).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut q = p.clone();
    for i in 0..p.len() {
        let orig = q.values[i];
        q.values[i] = orig + h;
        let up = q.loss(rows.view(), labels.view(), loss).unwrap();
        q.values[i] = orig - h;
        let down = q.loss(rows.view(), labels.view(), loss).unwrap();
        q.values[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let denom = fd.abs().max(g[i].abs()).max(1e-6);
        worst = worst.max((fd - g[i]).abs() / denom);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = rng::seeded(7);
    for (i, (arch, width)) in small_archs().into_iter().enumerate() {
        for loss in [Loss::Mse, Loss::Logistic] {
            let mut p = NetParams::init(&arch, 100 + i as u64).unwrap();
            perturbed_standardizer(&mut p, &mut rng);
            let rows = random_rows(&mut rng, 6, width);
            let labels = Array1::from_shape_fn(6, |_| if loss == Loss::Mse { rng.random_range(-1.0..1.0) } else { f64::from(rng.random_range(0..2u8)) });
            let err = max_fd_relative_error(&p, &rows, &labels, loss);
            assert!(err < 1e-4, "arch {i} {loss:?}: {err}");
        }
    }
}

struct NoisyCost {
    thetas: Vec<f64>,
    noise: Normal<f64>,
}

fn cost(theta: f64) -> f64 {
    (1.5 * theta).sin() + 0.5 * theta * theta
}

impl PairSource for NoisyCost {
    fn n_items(&self) -> usize {
        self.thetas.len()
    }
    fn row_width(&self) -> usize {
        1
    }
    fn draw(&self, item: usize, n: usize, rng: &mut Rng, rows: &mut Vec<f64>, labels: &mut Vec<f64>) -> Result<()> {
        for _ in 0..n {
            rows.push(self.thetas[item]);
            labels.push(cost(self.thetas[item]) + self.noise.sample(rng));
        }
        Ok(())
    }
}

fn heldout_rmse(n: usize, seed: u64) -> f64 {
    let mut rng = rng::seeded(seed);
    let source = NoisyCost {
        thetas: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        noise: Normal::new(0.0, 0.5).unwrap(),
    };
    let cfg = FitConfig {
        batch_size: 100,
        n_target_train: 2,
        n_target_val: 5,
        patience_epochs: 30,
        max_epochs: 300,
        seed,
        ..FitConfig::default()
    };
    let mut arch = NetArch::residual(1);
    arch.hidden_dim = 32;
    arch.n_hidden_layers = 2;
    let fit = fit_regression(NetParams::init(&arch, seed).unwrap(), &source, &cfg).unwrap();
    let grid: Vec<f64> = (0..200).map(|i| -1.9 + 3.8 * i as f64 / 199.0).collect();
    let pred: Vec<f64> = grid.iter().map(|t| fit.params.predict_row(&[*t]).unwrap()).collect();
    let truth: Vec<f64> = grid.iter().map(|t| cost(*t)).collect();
    ace_core::stats::rmse(&pred, &truth).unwrap()
}

#[test]
fn regression_converges_to_conditional_mean() {
    // Labels are c(θ) + zero-mean noise; the fit should approach c, more closely with more data.
    let small = heldout_rmse(200, 21);
    let large = heldout_rmse(4000, 21);
    assert!(large < small, "small {small}, large {large}");
    assert!(large < 0.06, "large {large}");
}

#[test]
fn noiseless_linear_labels_are_learned() {
    let mut rng = rng::seeded(8);
    let n = 2000;
    let inputs = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<f64> = inputs.column(0).to_vec();
    let source = FixedPairs::new(inputs, labels).unwrap();
    let cfg = FitConfig {
        batch_size: 100,
        patience_epochs: 50,
        max_epochs: 400,
        seed: 8,
        ..FitConfig::default()
    };
    let fit = fit_regression(NetParams::init(&NetArch::residual(1), 8).unwrap(), &source, &cfg).unwrap();
    assert!(fit.best_val_loss.sqrt() < 1e-2, "val rmse {}", fit.best_val_loss.sqrt());
    assert!(fit.history.iter().all(|e| e.train_loss.is_finite() && e.val_loss.is_finite()));
    assert!(fit.history.iter().enumerate().all(|(i, e)| e.epoch == i));
}

#[test]
fn fitting_is_deterministic() {
    let mut rng = rng::seeded(9);
    let inputs = Array2::from_shape_fn((300, 2), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<f64> = inputs.rows().into_iter().map(|r| r[0] * r[1]).collect();
    let source = FixedPairs::new(inputs, labels).unwrap();
    let cfg = FitConfig { batch_size: 50, max_epochs: 15, patience_epochs: 10, seed: 3, ..FitConfig::default() };
    let arch = NetArch::mlp(2, 8, 2);
    let a = fit_regression(NetParams::init(&arch, 1).unwrap(), &source, &cfg).unwrap();
    let b = fit_regression(NetParams::init(&arch, 1).unwrap(), &source, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
}

#[test]
fn single_sample_dataset_is_rejected() {
    let source = FixedPairs::new(Array2::zeros((1, 1)), vec![0.0]).unwrap();
    let err = fit_regression(NetParams::init(&NetArch::residual(1), 0).unwrap(), &source, &FitConfig::default());
    assert!(err.is_err());
}

#[test]
fn adam_reaches_quadratic_minimum() {
    let mut s = AdamState::new(1, 0.05);
    let mut w = vec![-4.0];
    for _ in 0..2000 {
        let g = [2.0 * (w[0] - 3.0)];
        s.step(&mut w, &g).unwrap();
    }
    assert!((w[0] - 3.0).abs() < 1e-3);
}
