//! Finite-difference gradient checks. Each check draws one random point
//! from `seed` and returns the worst relative error per parameter block.

use super::{fd_check, fd_check_at, gaussian, gaussian_vec, readout};
use s2m_core::losses::{
    cross_entropy_weights, hinge_loss_weights, one_hot, regression_loss_mat, regression_loss_with,
    RegressionNorm,
};
use s2m_core::numeric::DenseMatrix;
use s2m_core::regnet::{
    leaky_relu, leaky_relu_backward, Affine, BatchNorm, BatchNormConfig, Conv1d, ConvConfig,
    ConvRegressor, MlpConfig, MlpRegressor,
};
use s2m_core::RandomStream;

pub type Errors = Vec<(String, f64)>;

/// Every check, by name.
pub const CHECKS: [(&str, fn(u64) -> Errors); 9] = [
    ("affine", affine),
    ("batch_norm", batch_norm),
    ("leaky_relu", leaky),
    ("conv_layer", conv_layer),
    ("regression_losses", regression_losses),
    ("hinge", hinge),
    ("cross_entropy", cross_entropy),
    ("mlp", mlp),
    ("conv_net", conv_net),
];

fn with_data(m: &DenseMatrix, data: &[f64]) -> DenseMatrix {
    DenseMatrix::new(m.rows(), m.cols(), data.to_vec()).unwrap()
}

fn e(name: &str, v: f64) -> (String, f64) {
    (name.to_string(), v)
}

pub fn affine(p: u64) -> Errors {
    let mut s = RandomStream::new(100 + p);
    let layer = Affine::init(5, 4, &mut s);
    let x = gaussian(&mut s, 6, 5, 1.0);
    let r = gaussian(&mut s, 6, 4, 1.0);
    let (g, dx) = layer.backward(&x, &r).unwrap();
    vec![
        e(
            "weight",
            fd_check(layer.weight.data(), g.weight.data(), |w| {
                let mut l = layer.clone();
                l.weight = with_data(&layer.weight, w);
                readout(&r, &l.forward(&x).unwrap())
            }),
        ),
        e(
            "bias",
            fd_check(&layer.bias, &g.bias, |b| {
                let mut l = layer.clone();
                l.bias = b.to_vec();
                readout(&r, &l.forward(&x).unwrap())
            }),
        ),
        e(
            "input",
            fd_check(x.data(), dx.data(), |v| {
                readout(&r, &layer.forward(&with_data(&x, v)).unwrap())
            }),
        ),
    ]
}

pub fn batch_norm(p: u64) -> Errors {
    let mut s = RandomStream::new(200 + p);
    let mut bn = BatchNorm::new(3, BatchNormConfig::default());
    bn.gamma = gaussian_vec(&mut s, 3, 1.0);
    bn.beta = gaussian_vec(&mut s, 3, 1.0);
    let z = gaussian(&mut s, 7, 3, 2.0);
    let r = gaussian(&mut s, 7, 3, 1.0);
    let (_, cache) = bn.forward_batch(&z).unwrap();
    let (dz, dgamma, dbeta) = bn.backward(&cache, &r).unwrap();
    vec![
        e(
            "input",
            fd_check(z.data(), dz.data(), |v| {
                readout(&r, &bn.forward_batch(&with_data(&z, v)).unwrap().0)
            }),
        ),
        e(
            "gamma",
            fd_check(&bn.gamma, &dgamma, |g| {
                let mut b = bn.clone();
                b.gamma = g.to_vec();
                readout(&r, &b.forward_batch(&z).unwrap().0)
            }),
        ),
        e(
            "beta",
            fd_check(&bn.beta, &dbeta, |g| {
                let mut b = bn.clone();
                b.beta = g.to_vec();
                readout(&r, &b.forward_batch(&z).unwrap().0)
            }),
        ),
    ]
}

pub fn leaky(p: u64) -> Errors {
    let mut s = RandomStream::new(300 + p);
    let mut z = gaussian(&mut s, 4, 5, 1.0);
    // Keep every coordinate at least 1e-3 from zero so the central
    // difference never straddles the kink.
    for v in z.data_mut() {
        if v.abs() < 1e-3 {
            *v = 1e-3_f64.copysign(*v);
        }
    }
    let r = gaussian(&mut s, 4, 5, 1.0);
    let slope = 0.01 + 0.1 * p as f64;
    let dz = leaky_relu_backward(&z, &r, slope);
    vec![e(
        "input",
        fd_check(z.data(), dz.data(), |v| {
            readout(&r, &leaky_relu(&with_data(&z, v), slope))
        }),
    )]
}

pub fn conv_layer(p: u64) -> Errors {
    let mut s = RandomStream::new(400 + p);
    let taps = [1, 3, 5][p as usize % 3];
    let conv = Conv1d::init(2, 3, taps, &mut s).unwrap();
    let len = 6;
    // Two sequences of length 6 with 2 channels each.
    let x = gaussian(&mut s, 2 * len, 2, 1.0);
    let r = gaussian(&mut s, 2 * len, 3, 1.0);
    let (_, cols) = conv.forward(&x, len).unwrap();
    let (g, dx) = conv.backward(&cols, &r, len).unwrap();
    vec![
        e(
            "kernel",
            fd_check(conv.kernel.data(), g.weight.data(), |k| {
                let mut c = conv.clone();
                c.kernel = with_data(&conv.kernel, k);
                readout(&r, &c.forward(&x, len).unwrap().0)
            }),
        ),
        e(
            "bias",
            fd_check(&conv.bias, &g.bias, |b| {
                let mut c = conv.clone();
                c.bias = b.to_vec();
                readout(&r, &c.forward(&x, len).unwrap().0)
            }),
        ),
        e(
            "input",
            fd_check(x.data(), dx.data(), |v| {
                readout(&r, &conv.forward(&with_data(&x, v), len).unwrap().0)
            }),
        ),
    ]
}

pub fn regression_losses(p: u64) -> Errors {
    let mut s = RandomStream::new(500 + p);
    let pred = gaussian_vec(&mut s, 9, 1.0);
    let target = gaussian_vec(&mut s, 9, 1.0);
    let mut out = Vec::new();
    for norm in [RegressionNorm::Euclidean, RegressionNorm::Squared] {
        let (_, g) = regression_loss_with(&pred, &target, norm).unwrap();
        out.push(e(
            &format!("{norm:?}"),
            fd_check(&pred, &g, |v| {
                regression_loss_with(v, &target, norm).unwrap().0
            }),
        ));
    }
    let pm = gaussian(&mut s, 5, 3, 1.0);
    let tm = gaussian(&mut s, 5, 3, 1.0);
    let (_, g) = regression_loss_mat(&pm, &tm).unwrap();
    out.push(e(
        "frobenius",
        fd_check(pm.data(), g.data(), |v| {
            regression_loss_mat(&with_data(&pm, v), &tm).unwrap().0
        }),
    ));
    out
}

pub fn hinge(p: u64) -> Errors {
    let mut s = RandomStream::new(600 + p);
    let d = 4;
    let w = gaussian_vec(&mut s, d + 1, 0.5);
    let photos: Vec<Vec<f64>> = (0..12).map(|_| gaussian_vec(&mut s, d, 1.0)).collect();
    let labels: Vec<f64> = (0..12)
        .map(|i| if i % 3 == 0 { 1.0 } else { -1.0 })
        .collect();
    let (_, g) = hinge_loss_weights(&w, &photos, &labels).unwrap();
    vec![e(
        "weights",
        fd_check(&w, &g, |v| {
            hinge_loss_weights(v, &photos, &labels).unwrap().0
        }),
    )]
}

pub fn cross_entropy(p: u64) -> Errors {
    let mut s = RandomStream::new(700 + p);
    let (d, c) = (4, 3);
    let w = gaussian(&mut s, d + 1, c, 0.7);
    let photos: Vec<Vec<f64>> = (0..9).map(|_| gaussian_vec(&mut s, d, 1.0)).collect();
    let labels = one_hot(&(0..9).map(|i| i % c).collect::<Vec<_>>(), c);
    let (_, g) = cross_entropy_weights(&w, &photos, &labels).unwrap();
    vec![e(
        "weights",
        fd_check(w.data(), g.data(), |v| {
            cross_entropy_weights(&with_data(&w, v), &photos, &labels)
                .unwrap()
                .0
        }),
    )]
}

pub fn mlp(p: u64) -> Errors {
    let mut s = RandomStream::new(800 + p);
    let mut cfg = MlpConfig::new(5, 4).with_hidden(6);
    cfg.leaky_slope = 0.2;
    let mut net = MlpRegressor::new(cfg, &mut s);
    let x = gaussian(&mut s, 5, 5, 1.0);
    let r = gaussian(&mut s, 5, 4, 1.0);
    let (_, cache) = net.forward_batch(&x).unwrap();
    let grads = net.backward(&cache, &r).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|g| g.to_vec()).collect();

    let mut out = vec![e(
        "input",
        fd_check(x.data(), grads.input.data(), |v| {
            readout(&r, &net.forward_batch(&with_data(&x, v)).unwrap().0)
        }),
    )];
    let n_params = net.params_mut().len();
    assert_eq!(n_params, analytic.len());
    for (k, a) in analytic.iter().enumerate() {
        let base = net.params_mut()[k].to_vec();
        out.push(e(
            &format!("parameter block {k}"),
            fd_check(&base, a, |v| {
                let mut probe = net.clone();
                probe.params_mut()[k].copy_from_slice(v);
                readout(&r, &probe.forward_batch(&x).unwrap().0)
            }),
        ));
    }
    out
}

pub fn conv_net(p: u64) -> Errors {
    let mut s = RandomStream::new(900 + p);
    let cfg = ConvConfig {
        leaky_slope: 0.2,
        ..ConvConfig::default()
    };
    let net = ConvRegressor::new(cfg, &mut s).unwrap();
    let batch: Vec<DenseMatrix> = (0..2).map(|_| gaussian(&mut s, 5, 2, 1.0)).collect();
    let r: Vec<DenseMatrix> = (0..2).map(|_| gaussian(&mut s, 5, 2, 1.0)).collect();
    let score = |net: &ConvRegressor, batch: &[DenseMatrix]| -> f64 {
        let (out, _) = net.forward_batch(batch).unwrap();
        out.iter().zip(&r).map(|(o, r)| readout(r, o)).sum()
    };
    let (_, cache) = net.forward_batch(&batch).unwrap();
    let grads = net.backward(&cache, &r).unwrap();

    let mut out = Vec::new();
    for (i, x) in batch.iter().enumerate() {
        out.push(e(
            &format!("input {i}"),
            fd_check(x.data(), grads.input[i].data(), |v| {
                let mut b = batch.clone();
                b[i] = with_data(x, v);
                score(&net, &b)
            }),
        ));
    }
    // Every parameter block, at up to 12 random coordinates each.
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|g| g.to_vec()).collect();
    let mut probe = net.clone();
    let n_params = probe.params_mut().len();
    assert_eq!(n_params, analytic.len());
    for (k, a) in analytic.iter().enumerate() {
        let base = probe.params_mut()[k].to_vec();
        let coords = s.sample_indices(base.len(), base.len().min(12));
        out.push(e(
            &format!("parameter block {k}"),
            fd_check_at(&base, a, &coords, |v| {
                let mut pr = net.clone();
                pr.params_mut()[k].copy_from_slice(v);
                score(&pr, &batch)
            }),
        ));
    }
    out
}
