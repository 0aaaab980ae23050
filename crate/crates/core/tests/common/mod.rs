#![allow(dead_code)]

use nbsp::nn::{DenseNet, Gradients};

/// Largest relative discrepancy between analytic gradients and central
/// differences of `loss` over every parameter of `net`.
pub fn max_fd_error<F>(net: &DenseNet, analytic: &Gradients, mut loss: F) -> f64
where
    F: FnMut(&DenseNet) -> f64,
{
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for l in 0..net.layers().len() {
        let nw = net.layers()[l].weight.len();
        let nb = net.layers()[l].bias.len();
        for idx in 0..nw + nb {
            let orig = if idx < nw {
                net.layers()[l].weight[idx]
            } else {
                net.layers()[l].bias[idx - nw]
            };
            let mut eval = |v: f64| {
                let layer = &mut probe.layers_mut()[l];
                if idx < nw {
                    layer.weight[idx] = v;
                } else {
                    layer.bias[idx - nw] = v;
                }
                loss(&probe)
            };
            let numeric = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            eval(orig);
            let exact = if idx < nw {
                analytic.layers[l].dw[idx]
            } else {
                analytic.layers[l].db[idx - nw]
            };
            let scale = exact.abs().max(numeric.abs());
            if scale > 1e-7 {
                worst = worst.max((exact - numeric).abs() / scale);
            }
        }
    }
    worst
}
