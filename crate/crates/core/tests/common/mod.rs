#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snakezero::env::{encode_features, FeaturePlanes};
use snakezero::net::Network;
use snakezero::{AppleSource, GameState};

/// Non-terminal states reached by uniformly random legal play.
pub fn random_states(n: usize, count: usize, seed: u64) -> Vec<GameState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut s = GameState::new_game(n, &mut rng).unwrap();
        let stop = rng.random_range(0..40);
        for _ in 0..stop {
            if s.is_terminal() {
                break;
            }
            let legal = s.legal_actions().unwrap().to_vec();
            let a = *legal.choose(&mut rng).unwrap();
            s.apply(a, &mut AppleSource::Random(&mut rng)).unwrap();
        }
        if !s.is_terminal() {
            out.push(s);
        }
    }
    out
}

pub struct Batch {
    pub features: Vec<FeaturePlanes>,
    pub pi: Vec<[f64; 4]>,
    pub z: Vec<f64>,
}

impl Batch {
    pub fn random(n: usize, size: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        let states = random_states(n, size, seed);
        let features = states
            .iter()
            .map(|s| encode_features(s, n).unwrap())
            .collect();
        let pi = (0..size)
            .map(|_| {
                let mut p = [0.0; 4];
                for x in &mut p {
                    *x = rng.random::<f64>();
                }
                let t: f64 = p.iter().sum();
                p.map(|x| x / t)
            })
            .collect();
        let z = (0..size).map(|_| rng.random_range(-10.0..10.0)).collect();
        Batch { features, pi, z }
    }

    pub fn samples(&self) -> Vec<snakezero::net::Sample<'_>> {
        (0..self.features.len())
            .map(|i| snakezero::net::Sample {
                features: &self.features[i],
                pi: self.pi[i],
                z: self.z[i],
            })
            .collect()
    }
}

/// Initialised network whose biases are also random and nonzero.
pub fn network_with_biases(n: usize, seed: u64) -> Network<f64> {
    let mut net = Network::<f64>::init(n, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let specs = net.layout().tensors().to_vec();
    for spec in specs.iter().filter(|s| s.shape.len() == 1) {
        for p in &mut net.params_mut()[spec.offset..spec.offset + spec.len()] {
            *p = rng.random_range(-0.2..0.2);
        }
    }
    net
}

/// `per_tensor` random parameter indices from every tensor.
pub fn sample_indices(net: &Network<f64>, per_tensor: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for spec in net.layout().tensors() {
        for _ in 0..per_tensor.min(spec.len()) {
            out.push(spec.offset + rng.random_range(0..spec.len()));
        }
    }
    out
}
