mod common;

use common::max_fd_error;
use nbsp::envs::ActionSpace;
use nbsp::nn::{DenseNet, Matrix, OutputHead};
use nbsp::rng;
use nbsp::sac::{Batch, SacAgent, SacConfig, Transition};
use rand::Rng;

fn toy(space: ActionSpace, obs: usize, seed: u64) -> SacAgent {
    let cfg = SacConfig {
        hidden: vec![5],
        ..SacConfig::default()
    };
    SacAgent::new(obs, space, cfg, &mut rng::stream(seed, "toy", 0)).unwrap()
}

fn batch(agent: &SacAgent, n: usize, seed: u64) -> Batch {
    let mut r = rng::stream(seed, "toy-batch", 0);
    let items: Vec<Transition> = (0..n)
        .map(|i| Transition {
            id: i as u64,
            s: (0..agent.obs_dim()).map(|_| r.gen_range(-1.0..1.0)).collect(),
            a: agent.action_space().sample_uniform(&mut r).to_vec(),
            r: r.gen_range(-1.0..1.0),
            s2: (0..agent.obs_dim()).map(|_| r.gen_range(-1.0..1.0)).collect(),
            d: false,
        })
        .collect();
    Batch::from_transitions(&items.iter().collect::<Vec<_>>()).unwrap()
}

#[test]
fn continuous_actor_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let agent = toy(ActionSpace::Continuous { dim: 2 }, 3, seed);
        let b = batch(&agent, 6, seed);
        let noise = agent.draw_noise(6, &mut rng::stream(seed, "noise", 0));
        let analytic = agent.actor_loss(&b.s, &noise).unwrap();
        let err = max_fd_error(&agent.actor, &analytic.grads, |net| {
            let mut a = agent.clone();
            a.actor = net.clone();
            a.actor_loss(&b.s, &noise).unwrap().loss
        });
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn discrete_actor_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let agent = toy(ActionSpace::Discrete { n: 5 }, 4, seed);
        let b = batch(&agent, 6, seed);
        let noise = agent.draw_noise(6, &mut rng::stream(seed, "noise", 0));
        let analytic = agent.actor_loss(&b.s, &noise).unwrap();
        let err = max_fd_error(&agent.actor, &analytic.grads, |net| {
            let mut a = agent.clone();
            a.actor = net.clone();
            a.actor_loss(&b.s, &noise).unwrap().loss
        });
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn critic_gradients_match_finite_differences() {
    for space in [ActionSpace::Continuous { dim: 2 }, ActionSpace::Discrete { n: 5 }] {
        for seed in 0..5 {
            let agent = toy(space, 3, seed);
            let b = batch(&agent, 6, seed);
            let y: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 1.0).collect();
            let analytic = agent.critic_loss(&b, &y).unwrap();
            let e1 = max_fd_error(&agent.q1, &analytic.q1_grads, |net| {
                let mut a = agent.clone();
                a.q1 = net.clone();
                a.critic_loss(&b, &y).unwrap().loss
            });
            let e2 = max_fd_error(&agent.q2, &analytic.q2_grads, |net| {
                let mut a = agent.clone();
                a.q2 = net.clone();
                a.critic_loss(&b, &y).unwrap().loss
            });
            assert!(e1 < 1e-4 && e2 < 1e-4, "{space:?} seed {seed}: {e1} {e2}");
        }
    }
}

#[test]
fn network_backward_matches_finite_differences() {
    let mut r = rng::stream(3, "net", 0);
    for head in [OutputHead::Linear, OutputHead::GaussianPolicy] {
        let net = DenseNet::new(&[3, 7, 4], head, &mut r).unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.3, -0.7, 0.2, 0.9, 0.1, -0.4]).unwrap();
        let w = Matrix::from_vec(2, 4, vec![1.0, -2.0, 0.5, 0.25, -1.0, 0.3, 0.7, 2.0]).unwrap();
        let pass = net.forward_batch(&x).unwrap();
        let (g, _) = net.backward_batch(&pass, &w, true, false).unwrap();
        let err = max_fd_error(&net, &g.unwrap(), |n| {
            let out = n.predict(&x).unwrap();
            out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        });
        assert!(err < 1e-4, "{head:?}: {err}");
    }
}
