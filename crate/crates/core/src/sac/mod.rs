//! Soft Actor-Critic with twin critics, Polyak-averaged targets and automatic
//! temperature tuning.
//!
//! Continuous tasks use a tanh-squashed Gaussian policy and critics over
//! `[s, a]`; discrete tasks use a categorical policy and critics that output
//! one value per action, with expectations taken over the policy instead of
//! reparameterised samples.
//!
//! Every piece of the update (target, critic loss, actor loss, temperature,
//! target averaging) is a separate method so it can be checked on its own;
//! [`SacAgent::update`] chains them in the usual order.

mod buffer;

pub use buffer::{Batch, ReplayBuffer, Transition};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::{Action, ActionSpace};
use crate::nn::{
    adam_step, AdamState, BatchPass, Checkpoint, DenseNet, Gradients, Matrix, MaskPlacement, NetMask, OutputHead,
    ScalarAdam,
};
use crate::{Error, Result};

/// Added inside the tanh change-of-variables log term.
pub const LOG_PROB_EPS: f64 = 1e-6;
/// Largest action magnitude handed out; keeps actions strictly inside (-1, 1)
/// even where `tanh` rounds to ±1.
pub const MAX_ACTION: f64 = 1.0 - f64::EPSILON;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub policy_lr: f64,
    pub q_lr: f64,
    pub alpha_lr: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub init_alpha: f64,
    pub autotune: bool,
    /// Discrete target entropy is `scale * ln |A|`.
    pub target_entropy_scale: f64,
    pub mask_placement: MaskPlacement,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_lr: 3e-4,
            q_lr: 1e-3,
            alpha_lr: 1e-3,
            batch_size: 64,
            hidden: vec![64, 64],
            init_alpha: 0.2,
            autotune: true,
            target_entropy_scale: 0.89,
            mask_placement: MaskPlacement::Update,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_owned()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("sac.gamma must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("sac.tau must lie in (0, 1]");
        }
        if [self.policy_lr, self.q_lr, self.alpha_lr].iter().any(|lr| !(lr.is_finite() && *lr >= 0.0)) {
            return bad("learning rates must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("sac.batch_size must be positive");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("sac.hidden widths must be positive");
        }
        if !(self.init_alpha > 0.0 && self.init_alpha.is_finite()) {
            return bad("sac.init_alpha must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    #[default]
    Stochastic,
    Deterministic,
}

/// Which networks an update may scale per output neuron. `None` leaves the
/// network unmasked.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateMasks<'a> {
    pub actor: Option<&'a NetMask>,
    pub q1: Option<&'a NetMask>,
    pub q2: Option<&'a NetMask>,
}

/// Scalars logged per gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    /// Batch estimate of the policy entropy, `-E[log pi]`.
    pub entropy: f64,
    pub q_mean: f64,
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    /// Sum over both critics of the batch mean of `(Q - y)^2 / 2`.
    pub loss: f64,
    pub q1_grads: Gradients,
    pub q2_grads: Gradients,
    pub q_mean: f64,
}

#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub loss: f64,
    pub grads: Gradients,
    /// Batch mean of `log pi` (continuous) or of `sum_a pi(a) log pi(a)` (discrete).
    pub mean_log_prob: f64,
}

/// `r + gamma (1 - d) (min_q - alpha log_pi)`.
pub fn soft_target(r: f64, gamma: f64, d: f64, min_q: f64, alpha: f64, log_pi: f64) -> f64 {
    if d == 1.0 {
        return r;
    }
    r + gamma * (1.0 - d) * (min_q - alpha * log_pi)
}

/// Per-sample actor objective `alpha log_pi - min_q`.
pub fn actor_objective(alpha: f64, log_pi: f64, min_q: f64) -> f64 {
    alpha * log_pi - min_q
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Draws an index from `softmax(logits)`.
pub fn sample_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let logp = log_softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    logits.len() - 1
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Reparameterised squashed-Gaussian samples for a batch.
struct GaussianSample {
    pass: BatchPass,
    noise: Matrix,
    action: Matrix,
    log_prob: Vec<f64>,
}

/// Categorical policy evaluated on a batch.
struct CategoricalEval {
    pass: BatchPass,
    probs: Matrix,
    log_probs: Matrix,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub config: SacConfig,
    obs_dim: usize,
    space: ActionSpace,
    pub actor: DenseNet,
    pub q1: DenseNet,
    pub q2: DenseNet,
    pub q1_target: DenseNet,
    pub q2_target: DenseNet,
    pub log_alpha: f64,
    pub actor_opt: AdamState,
    pub q1_opt: AdamState,
    pub q2_opt: AdamState,
    pub alpha_opt: ScalarAdam,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, space: ActionSpace, config: SacConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let with_hidden = |input: usize, output: usize| {
            let mut sizes = vec![input];
            sizes.extend(&config.hidden);
            sizes.push(output);
            sizes
        };
        let (actor_sizes, critic_sizes, head) = match space {
            ActionSpace::Continuous { dim } => (
                with_hidden(obs_dim, 2 * dim),
                with_hidden(obs_dim + dim, 1),
                OutputHead::GaussianPolicy,
            ),
            ActionSpace::Discrete { n } => (
                with_hidden(obs_dim, n),
                with_hidden(obs_dim, n),
                OutputHead::CategoricalLogits,
            ),
        };
        let actor = DenseNet::new(&actor_sizes, head, rng)?;
        let q1 = DenseNet::new(&critic_sizes, OutputHead::Linear, rng)?;
        let q2 = DenseNet::new(&critic_sizes, OutputHead::Linear, rng)?;
        Ok(Self {
            obs_dim,
            space,
            actor_opt: AdamState::new(&actor),
            q1_opt: AdamState::new(&q1),
            q2_opt: AdamState::new(&q2),
            alpha_opt: ScalarAdam::default(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            log_alpha: config.init_alpha.ln(),
            config,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// `-dim(A)` for continuous actions, `scale * ln |A|` for discrete ones.
    pub fn target_entropy(&self) -> f64 {
        match self.space {
            ActionSpace::Continuous { dim } => -(dim as f64),
            ActionSpace::Discrete { n } => self.config.target_entropy_scale * (n as f64).ln(),
        }
    }

    /// Fresh optimiser moments for all three networks and the temperature.
    pub fn reset_optimizers(&mut self) {
        self.actor_opt = AdamState::new(&self.actor);
        self.q1_opt = AdamState::new(&self.q1);
        self.q2_opt = AdamState::new(&self.q2);
        self.alpha_opt = ScalarAdam::default();
    }

    /// Standard-normal reparameterisation noise for `rows` samples (zero
    /// columns for discrete policies).
    pub fn draw_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Matrix {
        let cols = match self.space {
            ActionSpace::Continuous { dim } => dim,
            ActionSpace::Discrete { .. } => 0,
        };
        let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        Matrix::from_vec(rows, cols, data).expect("sized by construction")
    }

    /// Turns one actor output row into an action and its log-probability.
    pub fn action_from_output<R: Rng + ?Sized>(
        &self,
        out: &[f64],
        mode: SampleMode,
        rng: &mut R,
    ) -> Result<(Action, f64)> {
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy output"));
        }
        match self.space {
            ActionSpace::Continuous { dim } => {
                let mut a = Vec::with_capacity(dim);
                let mut logp = 0.0;
                for k in 0..dim {
                    let xi: f64 = match mode {
                        SampleMode::Stochastic => rng.sample(StandardNormal),
                        SampleMode::Deterministic => 0.0,
                    };
                    let (mu, ls) = (out[k], out[dim + k]);
                    let ak = (mu + ls.exp() * xi).tanh().clamp(-MAX_ACTION, MAX_ACTION);
                    logp += -0.5 * xi * xi - ls - HALF_LN_2PI - (1.0 - ak * ak + LOG_PROB_EPS).ln();
                    a.push(ak);
                }
                Ok((Action::Continuous(a), logp))
            }
            ActionSpace::Discrete { .. } => {
                let logp = log_softmax(out);
                let i = match mode {
                    SampleMode::Stochastic => sample_categorical(out, rng),
                    SampleMode::Deterministic => argmax(out),
                };
                Ok((Action::Discrete(i), logp[i]))
            }
        }
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], mode: SampleMode, rng: &mut R) -> Result<(Action, f64)> {
        let (out, _) = self.actor.forward(obs, false)?;
        self.action_from_output(&out, mode, rng)
    }

    /// Log-density of a continuous action under the policy at `obs`.
    pub fn log_prob_of(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        let ActionSpace::Continuous { dim } = self.space else {
            return Err(Error::InvalidInput("log_prob_of is defined for continuous policies".into()));
        };
        if action.len() != dim {
            return Err(Error::shape("action", dim, action.len()));
        }
        let (out, _) = self.actor.forward(obs, false)?;
        let mut logp = 0.0;
        for k in 0..dim {
            let (mu, ls) = (out[k], out[dim + k]);
            let a = action[k];
            let xi = (a.atanh() - mu) / ls.exp();
            logp += -0.5 * xi * xi - ls - HALF_LN_2PI - (1.0 - a * a + LOG_PROB_EPS).ln();
        }
        Ok(logp)
    }

    fn gaussian_sample(&self, s: &Matrix, noise: &Matrix) -> Result<GaussianSample> {
        let ActionSpace::Continuous { dim } = self.space else {
            unreachable!("gaussian sample on a discrete agent")
        };
        if noise.rows() != s.rows() || noise.cols() != dim {
            return Err(Error::shape("policy noise", s.rows() * dim, noise.rows() * noise.cols()));
        }
        let pass = self.actor.forward_batch(s)?;
        if !pass.output.is_finite() {
            return Err(Error::NonFinite("policy output"));
        }
        let b = s.rows();
        let mut action = Matrix::zeros(b, dim);
        let mut log_prob = vec![0.0; b];
        for i in 0..b {
            let out = pass.output.row(i);
            for k in 0..dim {
                let xi = noise.get(i, k);
                let (mu, ls) = (out[k], out[dim + k]);
                let a = (mu + ls.exp() * xi).tanh().clamp(-MAX_ACTION, MAX_ACTION);
                action.set(i, k, a);
                log_prob[i] += -0.5 * xi * xi - ls - HALF_LN_2PI - (1.0 - a * a + LOG_PROB_EPS).ln();
            }
        }
        Ok(GaussianSample {
            pass,
            noise: noise.clone(),
            action,
            log_prob,
        })
    }

    fn categorical(&self, s: &Matrix) -> Result<CategoricalEval> {
        let pass = self.actor.forward_batch(s)?;
        if !pass.output.is_finite() {
            return Err(Error::NonFinite("policy output"));
        }
        let (b, n) = (pass.output.rows(), pass.output.cols());
        let mut probs = Matrix::zeros(b, n);
        let mut log_probs = Matrix::zeros(b, n);
        for i in 0..b {
            let lp = log_softmax(pass.output.row(i));
            for k in 0..n {
                log_probs.set(i, k, lp[k]);
                probs.set(i, k, lp[k].exp());
            }
        }
        Ok(CategoricalEval { pass, probs, log_probs })
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if batch.s.cols() != self.obs_dim || batch.s2.cols() != self.obs_dim {
            return Err(Error::shape("batch states", self.obs_dim, batch.s.cols()));
        }
        if batch.a.cols() != self.space.width() {
            return Err(Error::shape("batch actions", self.space.width(), batch.a.cols()));
        }
        Ok(())
    }

    /// Soft Bellman targets; `noise` reparameterises the next-state actions
    /// of continuous policies and is ignored for discrete ones.
    pub fn critic_target(&self, batch: &Batch, noise: &Matrix) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let alpha = self.alpha();
        let gamma = self.config.gamma;
        let b = batch.len();
        let mut y = vec![0.0; b];
        match self.space {
            ActionSpace::Continuous { .. } => {
                let next = self.gaussian_sample(&batch.s2, noise)?;
                let sa = Matrix::hcat(&batch.s2, &next.action)?;
                let t1 = self.q1_target.predict(&sa)?;
                let t2 = self.q2_target.predict(&sa)?;
                for i in 0..b {
                    let min_q = t1.get(i, 0).min(t2.get(i, 0));
                    y[i] = soft_target(batch.r[i], gamma, batch.d[i], min_q, alpha, next.log_prob[i]);
                }
            }
            ActionSpace::Discrete { n } => {
                let next = self.categorical(&batch.s2)?;
                let t1 = self.q1_target.predict(&batch.s2)?;
                let t2 = self.q2_target.predict(&batch.s2)?;
                for i in 0..b {
                    let v: f64 = (0..n)
                        .map(|k| next.probs.get(i, k) * (t1.get(i, k).min(t2.get(i, k)) - alpha * next.log_probs.get(i, k)))
                        .sum();
                    y[i] = soft_target(batch.r[i], gamma, batch.d[i], v, 0.0, 0.0);
                }
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("critic target"));
        }
        Ok(y)
    }

    fn discrete_index(&self, batch: &Batch, i: usize) -> Result<usize> {
        let ActionSpace::Discrete { n } = self.space else { unreachable!() };
        let raw = batch.a.get(i, 0);
        let k = raw as usize;
        if raw < 0.0 || raw.fract() != 0.0 || k >= n {
            return Err(Error::InvalidInput(format!("stored discrete action {raw} outside 0..{n}")));
        }
        Ok(k)
    }

    /// Both critics' regression loss against fixed targets `y`.
    pub fn critic_loss(&self, batch: &Batch, y: &[f64]) -> Result<CriticLoss> {
        self.check_batch(batch)?;
        if y.len() != batch.len() {
            return Err(Error::shape("critic targets", batch.len(), y.len()));
        }
        let b = batch.len();
        let inv_b = 1.0 / b as f64;
        let input = match self.space {
            ActionSpace::Continuous { .. } => Matrix::hcat(&batch.s, &batch.a)?,
            ActionSpace::Discrete { .. } => batch.s.clone(),
        };
        let columns = match self.space {
            ActionSpace::Continuous { .. } => vec![0; b],
            ActionSpace::Discrete { .. } => (0..b).map(|i| self.discrete_index(batch, i)).collect::<Result<_>>()?,
        };
        let mut loss = 0.0;
        let mut q_sum = 0.0;
        let mut grads = Vec::with_capacity(2);
        for net in [&self.q1, &self.q2] {
            let pass = net.forward_batch(&input)?;
            let mut upstream = Matrix::zeros(b, net.output_dim());
            for i in 0..b {
                let q = pass.output.get(i, columns[i]);
                let resid = q - y[i];
                loss += 0.5 * resid * resid * inv_b;
                q_sum += q;
                upstream.set(i, columns[i], resid * inv_b);
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite("critic loss"));
            }
            let (g, _) = net.backward_batch(&pass, &upstream, true, false)?;
            grads.push(g.expect("requested"));
        }
        let q2_grads = grads.pop().expect("two critics");
        let q1_grads = grads.pop().expect("two critics");
        Ok(CriticLoss {
            loss,
            q1_grads,
            q2_grads,
            q_mean: q_sum * 0.5 * inv_b,
        })
    }

    /// Policy loss with critics held fixed. `noise` reparameterises the
    /// continuous actions.
    pub fn actor_loss(&self, s: &Matrix, noise: &Matrix) -> Result<ActorLoss> {
        if s.rows() == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        match self.space {
            ActionSpace::Continuous { dim } => self.gaussian_actor_loss(s, noise, dim),
            ActionSpace::Discrete { n } => self.categorical_actor_loss(s, n),
        }
    }

    fn gaussian_actor_loss(&self, s: &Matrix, noise: &Matrix, dim: usize) -> Result<ActorLoss> {
        let b = s.rows();
        let inv_b = 1.0 / b as f64;
        let alpha = self.alpha();
        let smp = self.gaussian_sample(s, noise)?;
        let sa = Matrix::hcat(s, &smp.action)?;
        let p1 = self.q1.forward_batch(&sa)?;
        let p2 = self.q2.forward_batch(&sa)?;

        // d min(Q1, Q2) / d input, routed to whichever critic is smaller per sample.
        let mut up1 = Matrix::zeros(b, 1);
        let mut up2 = Matrix::zeros(b, 1);
        let mut loss = 0.0;
        for i in 0..b {
            let (q1, q2) = (p1.output.get(i, 0), p2.output.get(i, 0));
            if q1 <= q2 {
                up1.set(i, 0, 1.0);
            } else {
                up2.set(i, 0, 1.0);
            }
            loss += actor_objective(alpha, smp.log_prob[i], q1.min(q2)) * inv_b;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("actor loss"));
        }
        let mut dq = Matrix::zeros(b, sa.cols());
        for (net, pass, up) in [(&self.q1, &p1, &up1), (&self.q2, &p2, &up2)] {
            if up.data().iter().all(|&v| v == 0.0) {
                continue;
            }
            let (_, dx) = net.backward_batch(pass, up, false, true)?;
            let dx = dx.expect("requested");
            dq.data_mut().iter_mut().zip(dx.data()).for_each(|(a, g)| *a += g);
        }

        let mut upstream = Matrix::zeros(b, 2 * dim);
        let out = &smp.pass.output;
        for i in 0..b {
            for k in 0..dim {
                let a = smp.action.get(i, k);
                let one_m = 1.0 - a * a;
                let sigma = out.get(i, dim + k).exp();
                let xi = smp.noise.get(i, k);
                let dq_da = dq.get(i, self.obs_dim + k);
                let dl_dx = alpha * 2.0 * a * one_m / (one_m + LOG_PROB_EPS) - dq_da * one_m;
                upstream.set(i, k, dl_dx * inv_b);
                upstream.set(i, dim + k, (-alpha + dl_dx * sigma * xi) * inv_b);
            }
        }
        let (g, _) = self.actor.backward_batch(&smp.pass, &upstream, true, false)?;
        Ok(ActorLoss {
            loss,
            grads: g.expect("requested"),
            mean_log_prob: smp.log_prob.iter().sum::<f64>() * inv_b,
        })
    }

    fn categorical_actor_loss(&self, s: &Matrix, n: usize) -> Result<ActorLoss> {
        let b = s.rows();
        let inv_b = 1.0 / b as f64;
        let alpha = self.alpha();
        let ev = self.categorical(s)?;
        let q1 = self.q1.predict(s)?;
        let q2 = self.q2.predict(s)?;
        let mut upstream = Matrix::zeros(b, n);
        let mut loss = 0.0;
        let mut mean_lp = 0.0;
        let mut f = vec![0.0; n];
        for i in 0..b {
            let mut lb = 0.0;
            for k in 0..n {
                f[k] = actor_objective(alpha, ev.log_probs.get(i, k), q1.get(i, k).min(q2.get(i, k)));
                lb += ev.probs.get(i, k) * f[k];
                mean_lp += ev.probs.get(i, k) * ev.log_probs.get(i, k) * inv_b;
            }
            loss += lb * inv_b;
            for k in 0..n {
                upstream.set(i, k, ev.probs.get(i, k) * (f[k] - lb) * inv_b);
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("actor loss"));
        }
        let (g, _) = self.actor.backward_batch(&ev.pass, &upstream, true, false)?;
        Ok(ActorLoss {
            loss,
            grads: g.expect("requested"),
            mean_log_prob: mean_lp,
        })
    }

    /// `d/d log_alpha` of `E[-alpha (log pi + target_entropy)]`.
    pub fn temperature_grad(&self, mean_log_prob: f64) -> f64 {
        -self.alpha() * (mean_log_prob + self.target_entropy())
    }

    /// One Adam step on `log_alpha`; a no-op without autotuning.
    pub fn temperature_update(&mut self, mean_log_prob: f64) -> Result<f64> {
        if self.config.autotune {
            let g = self.temperature_grad(mean_log_prob);
            self.alpha_opt.step(&mut self.log_alpha, g, self.config.alpha_lr)?;
        }
        Ok(self.log_alpha)
    }

    /// `target += tau (online - target)`; `tau = 1` copies exactly.
    pub fn target_soft_update(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidInput(format!("tau {tau} outside (0, 1]")));
        }
        for (online, target) in [(&self.q1, &mut self.q1_target), (&self.q2, &mut self.q2_target)] {
            if tau == 1.0 {
                *target = online.clone();
                continue;
            }
            for (lo, lt) in online.layers().iter().zip(target.layers_mut()) {
                for (p, t) in lo.weight.iter().zip(lt.weight.iter_mut()) {
                    *t += tau * (p - *t);
                }
                for (p, t) in lo.bias.iter().zip(lt.bias.iter_mut()) {
                    *t += tau * (p - *t);
                }
            }
        }
        Ok(())
    }

    /// Critic step, actor step, temperature step and target averaging on one
    /// batch. Masks scale the per-neuron Adam steps of their networks; the
    /// temperature and targets are never masked.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, masks: UpdateMasks<'_>, rng: &mut R) -> Result<UpdateStats> {
        let placement = self.config.mask_placement;
        let target_noise = self.draw_noise(batch.len(), rng);
        let y = self.critic_target(batch, &target_noise)?;
        let critic = self.critic_loss(batch, &y)?;
        adam_step(&mut self.q1, &critic.q1_grads, masks.q1, &mut self.q1_opt, self.config.q_lr, placement)?;
        adam_step(&mut self.q2, &critic.q2_grads, masks.q2, &mut self.q2_opt, self.config.q_lr, placement)?;

        let policy_noise = self.draw_noise(batch.len(), rng);
        let actor = self.actor_loss(&batch.s, &policy_noise)?;
        adam_step(
            &mut self.actor,
            &actor.grads,
            masks.actor,
            &mut self.actor_opt,
            self.config.policy_lr,
            placement,
        )?;
        self.temperature_update(actor.mean_log_prob)?;
        self.target_soft_update(self.config.tau)?;
        Ok(UpdateStats {
            critic_loss: critic.loss,
            actor_loss: actor.loss,
            alpha: self.alpha(),
            entropy: -actor.mean_log_prob,
            q_mean: critic.q_mean,
        })
    }

    pub fn is_finite(&self) -> bool {
        [&self.actor, &self.q1, &self.q2, &self.q1_target, &self.q2_target]
            .iter()
            .all(|n| n.is_finite())
            && self.log_alpha.is_finite()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.add_net("actor", &self.actor);
        ck.add_net("q1", &self.q1);
        ck.add_net("q2", &self.q2);
        ck.add_net("q1_target", &self.q1_target);
        ck.add_net("q2_target", &self.q2_target);
        ck.push("temperature", 0, "log_alpha", vec![1], vec![self.log_alpha]);
        ck
    }

    /// Restores networks and temperature; optimiser state starts fresh.
    pub fn from_checkpoint(ck: &Checkpoint, obs_dim: usize, space: ActionSpace, config: SacConfig) -> Result<Self> {
        config.validate()?;
        let head = match space {
            ActionSpace::Continuous { .. } => OutputHead::GaussianPolicy,
            ActionSpace::Discrete { .. } => OutputHead::CategoricalLogits,
        };
        let actor = ck.net("actor", head)?;
        let q1 = ck.net("q1", OutputHead::Linear)?;
        let q2 = ck.net("q2", OutputHead::Linear)?;
        let q1_target = ck.net("q1_target", OutputHead::Linear)?;
        let q2_target = ck.net("q2_target", OutputHead::Linear)?;
        if actor.input_dim() != obs_dim {
            return Err(Error::shape("checkpoint actor input", obs_dim, actor.input_dim()));
        }
        let log_alpha = ck
            .get("temperature", 0, "log_alpha")
            .and_then(|e| e.values.first().copied())
            .ok_or_else(|| Error::format("checkpoint", "missing log_alpha"))?;
        Ok(Self {
            obs_dim,
            space,
            actor_opt: AdamState::new(&actor),
            q1_opt: AdamState::new(&q1),
            q2_opt: AdamState::new(&q2),
            alpha_opt: ScalarAdam::default(),
            actor,
            q1,
            q2,
            q1_target,
            q2_target,
            log_alpha,
            config,
        })
    }
}
