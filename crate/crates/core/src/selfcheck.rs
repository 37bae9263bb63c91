//! Property suites behind the `selfcheck` command. Each takes its sample
//! size so tests can run them at larger scale.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{encode_features, AppleSource, FeaturePlanes, GameState, Transit};
use crate::error::{Error, Result};
use crate::mcts::{SearchConfig, SearchTree};
use crate::net::{gradient_check, Network, Sample};
use crate::oracle::{reference_trees, TableEvaluator};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        format!("{verdict} {}: {}", self.name, self.detail)
    }
}

fn random_legal_move(s: &GameState, rng: &mut ChaCha8Rng) -> Result<crate::env::Action> {
    let legal = s.legal_actions()?.to_vec();
    legal
        .choose(rng)
        .copied()
        .ok_or_else(|| Error::contract("no legal action"))
}

/// Random playouts on assorted boards, checking every state's invariants.
/// Returns the number of steps taken.
pub fn playout_invariants(steps: u64, seed: u64) -> Result<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [3, 4, 5, 6, 10];
    let mut s = GameState::new_game(10, &mut rng)?;
    for _ in 0..steps {
        if s.is_terminal() {
            let n = *sizes.choose(&mut rng).expect("nonempty");
            let limit = rng.random_bool(0.5).then(|| rng.random_range(1..400));
            s = GameState::new_game(n, &mut rng)?.with_time_limit(limit);
        }
        let a = random_legal_move(&s, &mut rng)?;
        let before = s.score();
        let rep = s.apply(a, &mut AppleSource::Random(&mut rng))?;
        s.check_invariants()?;
        if s.score() != before + usize::from(rep.ate_apple) {
            return Err(Error::contract("score changed without eating"));
        }
    }
    Ok(steps)
}

/// Compares `advance` against stepping by hand with an identically seeded
/// apple stream, over `transitions` random decision transitions.
pub fn advance_agreement(transitions: u64, seed: u64) -> Result<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = GameState::new_game(6, &mut rng)?;
    for t in 0..transitions {
        if s.is_terminal() {
            let n = [4, 6, 10][rng.random_range(0..3)];
            s = GameState::new_game(n, &mut rng)?;
        }
        let a = random_legal_move(&s, &mut rng)?;
        let apple_seed = rng.random::<u64>();

        let mut r1 = ChaCha8Rng::seed_from_u64(apple_seed);
        let out = s.advance(a, &mut AppleSource::Random(&mut r1))?;

        let mut r2 = ChaCha8Rng::seed_from_u64(apple_seed);
        let mut manual = s.clone();
        let mut transit = Transit::default();
        let mut offset = 0;
        let mut next = a;
        loop {
            let rep = manual.apply(next, &mut AppleSource::Random(&mut r2))?;
            if rep.reward != 0.0 {
                transit.events.push(crate::env::Event {
                    offset,
                    reward: rep.reward,
                });
            }
            offset += 1;
            if manual.is_terminal() {
                break;
            }
            let legal = manual.legal_mask();
            if legal.len() != 1 {
                break;
            }
            next = legal.first().expect("one action");
        }
        transit.elapsed = offset;
        if manual != out.next || transit != out.transit || out.terminal != manual.is_terminal() {
            return Err(Error::contract(format!(
                "advance disagrees with manual stepping at transition {t}"
            )));
        }
        s = out.next;
    }
    Ok(transitions)
}

fn random_batch(
    n: usize,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(FeaturePlanes, [f64; 4], f64)>> {
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let mut s = GameState::new_game(n, rng)?;
        for _ in 0..rng.random_range(0..30) {
            if s.is_terminal() {
                break;
            }
            let a = random_legal_move(&s, rng)?;
            s.apply(a, &mut AppleSource::Random(rng))?;
        }
        if s.is_terminal() {
            continue;
        }
        let mut pi = [0.0; 4];
        for p in &mut pi {
            *p = rng.random::<f64>();
        }
        let total: f64 = pi.iter().sum();
        out.push((
            encode_features(&s, n)?,
            pi.map(|p| p / total),
            rng.random_range(-10.0..10.0),
        ));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientSummary {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

/// Gradient check on `batches` random batches, sampling `per_tensor`
/// parameters from every tensor.
pub fn gradient_suite(
    n: usize,
    batches: usize,
    per_tensor: usize,
    seed: u64,
) -> Result<GradientSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = GradientSummary {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
    };
    for b in 0..batches {
        let mut net = Network::<f64>::init(n, seed.wrapping_add(b as u64))?;
        let specs = net.layout().tensors().to_vec();
        for spec in specs.iter().filter(|s| s.shape.len() == 1) {
            for p in &mut net.params_mut()[spec.offset..spec.offset + spec.len()] {
                *p = rng.random_range(-0.2..0.2);
            }
        }
        let data = random_batch(n, 4, &mut rng)?;
        let samples: Vec<Sample<'_>> = data
            .iter()
            .map(|(features, pi, z)| Sample {
                features,
                pi: *pi,
                z: *z,
            })
            .collect();
        let indices: Vec<usize> = specs
            .iter()
            .flat_map(|s| {
                (0..per_tensor.min(s.len()))
                    .map(|_| s.offset + rng.random_range(0..s.len()))
                    .collect::<Vec<_>>()
            })
            .collect();
        let r = gradient_check(&net, &samples, 1e-4, &indices, 1e-4)?;
        summary.checked += r.checked;
        summary.skipped += r.skipped;
        summary.max_rel_error = summary.max_rel_error.max(r.max_rel_error);
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSummary {
    pub comparisons: usize,
    pub max_abs_error: f64,
    pub max_chance_imbalance: u32,
}

/// Searches each reference tree at budgets `1..=max_budget`, comparing root
/// `Q` with expectimax wherever the visit count divides the chance arity.
pub fn search_oracle_suite(max_budget: u32, gamma: f64) -> Result<OracleSummary> {
    let mut summary = OracleSummary {
        comparisons: 0,
        max_abs_error: 0.0,
        max_chance_imbalance: 0,
    };
    for (_, model) in reference_trees(gamma) {
        let exact = model.root_values(gamma);
        for budget in 1..=max_budget {
            let cfg = SearchConfig {
                budget,
                gamma,
                ..SearchConfig::default()
            };
            let mut eval = TableEvaluator(&model);
            let mut tree = SearchTree::new(&model, 0usize, cfg, &mut eval)?;
            for _ in 0..budget {
                tree.iterate(&model, &mut eval)?;
                for c in tree.chance_nodes() {
                    let counts = c.visit_counts();
                    let hi = counts.iter().max().copied().unwrap_or(0);
                    let lo = counts.iter().min().copied().unwrap_or(0);
                    summary.max_chance_imbalance = summary.max_chance_imbalance.max(hi - lo);
                }
            }
            let r = tree.result();
            for &(a, v) in &exact {
                let visits = r.visits[a.index()];
                if visits > 0 && (visits as usize).is_multiple_of(model.arity(a)) {
                    summary.comparisons += 1;
                    summary.max_abs_error = summary.max_abs_error.max((r.q[a.index()] - v).abs());
                }
            }
        }
    }
    Ok(summary)
}

/// Small-scale run of every suite.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let mut push = |name, res: Result<(bool, String)>| {
        let (passed, detail) = res.unwrap_or_else(|e| (false, format!("error: {e}")));
        out.push(CheckOutcome {
            name,
            passed,
            detail,
        });
    };
    push(
        "gradient",
        gradient_suite(6, 5, 4, seed).map(|g| {
            (
                g.checked >= 200 && g.max_rel_error < 1e-4,
                format!(
                    "{} parameters checked, {} skipped, max relative error {:.2e}",
                    g.checked, g.skipped, g.max_rel_error
                ),
            )
        }),
    );
    push(
        "search oracle",
        search_oracle_suite(60, 0.9).map(|o| {
            (
                o.max_abs_error < 1e-9 && o.max_chance_imbalance <= 1 && o.comparisons > 0,
                format!(
                    "{} comparisons, max error {:.2e}, chance imbalance {}",
                    o.comparisons, o.max_abs_error, o.max_chance_imbalance
                ),
            )
        }),
    );
    push(
        "environment invariants",
        playout_invariants(20_000, seed).map(|k| (true, format!("{k} random steps"))),
    );
    push(
        "advance agreement",
        advance_agreement(5_000, seed).map(|k| (true, format!("{k} transitions"))),
    );
    out
}
