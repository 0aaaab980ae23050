//! Adam with bias correction and an optional per-output-neuron mask.

use serde::{Deserialize, Serialize};

use super::dense::{DenseNet, Gradients, LayerGrad, NetMask};
use crate::{Error, Result};

/// Where a gradient mask enters the Adam update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPlacement {
    /// Moments accumulate the raw gradient; the resulting parameter step of
    /// neuron `j` is scaled by `mask_j`.
    #[default]
    Update,
    /// The raw gradient is scaled by `mask_j` before moment accumulation.
    ///
    /// Adam is invariant to a constant per-parameter gradient scale, so any
    /// mask value other than zero is largely cancelled out by the second
    /// moment under this placement.
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moments for every tensor of one network plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub t: u64,
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
}

impl AdamState {
    pub fn new(net: &DenseNet) -> Self {
        Self::with_hyper(net, AdamHyper::default())
    }

    pub fn with_hyper(net: &DenseNet, hyper: AdamHyper) -> Self {
        let zeros = Gradients::zeros_like(net).layers;
        Self {
            hyper,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self) -> &[LayerGrad] {
        &self.m
    }

    pub fn second_moment(&self) -> &[LayerGrad] {
        &self.v
    }
}

/// One Adam step on `net`.
///
/// The whole step is rejected, leaving parameters and state untouched, if any
/// gradient entry is non-finite.
pub fn adam_step(
    net: &mut DenseNet,
    grads: &Gradients,
    mask: Option<&NetMask>,
    state: &mut AdamState,
    lr: f64,
    placement: MaskPlacement,
) -> Result<()> {
    let sizes = net.layer_sizes();
    if grads.layers.len() != sizes.len() {
        return Err(Error::shape("adam gradients", sizes.len(), grads.layers.len()));
    }
    for (g, layer) in grads.layers.iter().zip(net.layers()) {
        if g.dw.len() != layer.weight.len() {
            return Err(Error::shape("adam weight gradient", layer.weight.len(), g.dw.len()));
        }
        if g.db.len() != layer.bias.len() {
            return Err(Error::shape("adam bias gradient", layer.bias.len(), g.db.len()));
        }
    }
    if state.m.len() != sizes.len() {
        return Err(Error::shape("adam state", sizes.len(), state.m.len()));
    }
    if let Some(m) = mask {
        m.check_shape(sizes.iter().copied())?;
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }

    state.t += 1;
    let AdamHyper { beta1, beta2, eps } = state.hyper;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let step = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64, scale: Option<f64>| {
        let g = match (placement, scale) {
            (MaskPlacement::Gradient, Some(s)) => s * g,
            _ => g,
        };
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        let mut delta = lr * m_hat / (v_hat.sqrt() + eps);
        if let (MaskPlacement::Update, Some(s)) = (placement, scale) {
            delta *= s;
        }
        *p -= delta;
    };

    for (l, layer) in net.layers_mut().iter_mut().enumerate() {
        let in_dim = layer.in_dim();
        let g = &grads.layers[l];
        let (ml, vl) = (&mut state.m[l], &mut state.v[l]);
        let scales = mask.map(|m| m.layers[l].as_slice());
        for j in 0..layer.out_dim() {
            let s = scales.map(|s| s[j]);
            let row = j * in_dim..(j + 1) * in_dim;
            for idx in row {
                step(&mut layer.weight[idx], g.dw[idx], &mut ml.dw[idx], &mut vl.dw[idx], s);
            }
            step(&mut layer.bias[j], g.db[j], &mut ml.db[j], &mut vl.db[j], s);
        }
    }
    Ok(())
}

/// Adam for a single scalar (the SAC log-temperature).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarAdam {
    pub hyper: AdamHyper,
    pub t: u64,
    m: f64,
    v: f64,
}

impl Default for ScalarAdam {
    fn default() -> Self {
        Self {
            hyper: AdamHyper::default(),
            t: 0,
            m: 0.0,
            v: 0.0,
        }
    }
}

impl ScalarAdam {
    pub fn step(&mut self, param: &mut f64, grad: f64, lr: f64) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::NonFinite("scalar gradient"));
        }
        self.t += 1;
        let AdamHyper { beta1, beta2, eps } = self.hyper;
        self.m = beta1 * self.m + (1.0 - beta1) * grad;
        self.v = beta2 * self.v + (1.0 - beta2) * grad * grad;
        let m_hat = self.m / (1.0 - beta1.powi(self.t as i32));
        let v_hat = self.v / (1.0 - beta2.powi(self.t as i32));
        *param -= lr * m_hat / (v_hat.sqrt() + eps);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dense::{Layer, OutputHead};
    use crate::rng;

    fn scalar_net(w: f64) -> DenseNet {
        DenseNet::from_layers(vec![Layer::new(1, 1, vec![w], vec![0.0]).unwrap()], OutputHead::Linear).unwrap()
    }

    /// Straight-line Adam recurrence used as an oracle.
    fn reference_adam(mut w: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
        let (mut m, mut v) = (0.0, 0.0);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn first_step_matches_reference_recurrence() {
        let mut net = scalar_net(0.0);
        let mut st = AdamState::new(&net);
        let g = Gradients {
            layers: vec![LayerGrad { dw: vec![1.0], db: vec![0.0] }],
        };
        adam_step(&mut net, &g, None, &mut st, 1e-3, MaskPlacement::Update).unwrap();
        let w = net.layers()[0].weight[0];
        let want = reference_adam(0.0, &[1.0], 1e-3, 0.9, 0.999, 1e-8);
        assert!((w - want).abs() < 1e-18);
        // 1e-3 * 1 / (1 + 1e-8)
        assert!((w + 0.000_999_999_990_000_000_1).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn multi_step_matches_reference_recurrence() {
        let grads = [0.5, -1.5, 2.0, 0.25, -0.75];
        let mut net = scalar_net(0.3);
        let mut st = AdamState::new(&net);
        for g in grads {
            let gr = Gradients {
                layers: vec![LayerGrad { dw: vec![g], db: vec![0.0] }],
            };
            adam_step(&mut net, &gr, None, &mut st, 1e-2, MaskPlacement::Update).unwrap();
        }
        let want = reference_adam(0.3, &grads, 1e-2, 0.9, 0.999, 1e-8);
        assert!((net.layers()[0].weight[0] - want).abs() < 1e-15);
    }

    #[test]
    fn zero_mask_freezes_neuron_under_both_placements() {
        for placement in [MaskPlacement::Update, MaskPlacement::Gradient] {
            let mut r = rng::stream(3, "adam", 0);
            let mut net = DenseNet::new(&[2, 3, 1], OutputHead::Linear, &mut r).unwrap();
            let before = net.clone();
            let g = net.backward(&[1.0, -1.0], &[1.0]).unwrap();
            let mut mask = NetMask::ones(&net);
            mask.layers[0][1] = 0.0;
            let mut st = AdamState::new(&net);
            for _ in 0..5 {
                adam_step(&mut net, &g, Some(&mask), &mut st, 1e-2, placement).unwrap();
            }
            assert_eq!(net.layers()[0].incoming(1), before.layers()[0].incoming(1));
            assert_eq!(net.layers()[0].bias[1], before.layers()[0].bias[1]);
            assert_ne!(net, before);
        }
    }

    #[test]
    fn all_ones_mask_is_bit_identical_to_no_mask() {
        for placement in [MaskPlacement::Update, MaskPlacement::Gradient] {
            let mut r = rng::stream(4, "adam", 0);
            let mut a = DenseNet::new(&[2, 4, 2], OutputHead::Linear, &mut r).unwrap();
            let mut b = a.clone();
            let ones = NetMask::ones(&a);
            let (mut sa, mut sb) = (AdamState::new(&a), AdamState::new(&b));
            for k in 0..20 {
                let x = [k as f64 * 0.1, 1.0 - k as f64 * 0.05];
                let ga = a.backward(&x, &[1.0, -0.5]).unwrap();
                let gb = b.backward(&x, &[1.0, -0.5]).unwrap();
                adam_step(&mut a, &ga, None, &mut sa, 1e-2, placement).unwrap();
                adam_step(&mut b, &gb, Some(&ones), &mut sb, 1e-2, placement).unwrap();
            }
            assert_eq!(a, b);
        }
    }

    #[test]
    fn update_placement_scales_first_step_exactly() {
        let mut r = rng::stream(8, "adam", 0);
        let net = DenseNet::new(&[3, 4, 1], OutputHead::Linear, &mut r).unwrap();
        let g = net.backward(&[0.2, -0.4, 0.9], &[1.0]).unwrap();
        let mut mask = NetMask::ones(&net);
        mask.layers[0][2] = 0.07;
        let (mut a, mut b) = (net.clone(), net.clone());
        adam_step(&mut a, &g, None, &mut AdamState::new(&net), 1e-3, MaskPlacement::Update).unwrap();
        adam_step(&mut b, &g, Some(&mask), &mut AdamState::new(&net), 1e-3, MaskPlacement::Update).unwrap();
        let w0 = net.layers()[0].incoming(2);
        for ((p0, pa), pb) in w0.iter().zip(a.layers()[0].incoming(2)).zip(b.layers()[0].incoming(2)) {
            let (da, db) = (pa - p0, pb - p0);
            assert!((db - 0.07 * da).abs() < 1e-12, "{db} vs {}", 0.07 * da);
        }
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut net = scalar_net(1.0);
        let before = net.clone();
        let mut st = AdamState::new(&net);
        let g = Gradients {
            layers: vec![LayerGrad { dw: vec![f64::INFINITY], db: vec![0.0] }],
        };
        assert!(adam_step(&mut net, &g, None, &mut st, 1e-3, MaskPlacement::Update).is_err());
        assert_eq!(net, before);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn scalar_adam_matches_reference() {
        let mut p = 0.0;
        let mut opt = ScalarAdam::default();
        for g in [1.0, -2.0, 0.5] {
            opt.step(&mut p, g, 1e-3).unwrap();
        }
        assert!((p - reference_adam(0.0, &[1.0, -2.0, 0.5], 1e-3, 0.9, 0.999, 1e-8)).abs() < 1e-18);
    }
}
