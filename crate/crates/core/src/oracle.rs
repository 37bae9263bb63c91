//! Small hand-built search problems with exactly known action values.
//!
//! Decision-node leaf values are set to their true expectimax value and
//! every inner decision node has equal-valued actions, so each backed-up
//! return through a root action equals that action's value. With chance
//! outcomes visited in balanced rotation, root `Q` then matches expectimax
//! exactly whenever an action's visit count is a multiple of its chance
//! arity.

use crate::env::{Action, ActionSet, Event, Transit};
use crate::error::{Error, Result};
use crate::mcts::{Evaluation, Evaluator, Link, SearchModel, Target};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum To {
    Terminal,
    Node(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Arc {
    pub transit: Transit,
    pub to: To,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Decision {
        value: f64,
        edges: Vec<(Action, Arc)>,
    },
    /// Equally likely outcomes.
    Chance { outcomes: Vec<Arc> },
}

/// Node 0 is the root and must be a decision node.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedTree {
    pub nodes: Vec<Node>,
}

pub fn transit(elapsed: u32, events: &[(u32, f64)]) -> Transit {
    Transit {
        elapsed,
        events: events
            .iter()
            .map(|&(offset, reward)| Event { offset, reward })
            .collect(),
    }
}

pub fn arc(elapsed: u32, events: &[(u32, f64)], to: To) -> Arc {
    Arc {
        transit: transit(elapsed, events),
        to,
    }
}

impl FixedTree {
    fn link(&self, arc: &Arc, action: Action) -> Result<Link<usize, usize>> {
        let target = match arc.to {
            To::Terminal => Target::Terminal,
            To::Node(j) => match self.nodes.get(j) {
                Some(Node::Decision { .. }) => Target::Decision(j),
                Some(Node::Chance { outcomes }) => Target::Chance {
                    state: j,
                    action,
                    outcomes: (0..outcomes.len()).collect(),
                },
                None => return Err(Error::contract(format!("no node {j}"))),
            },
        };
        Ok(Link {
            transit: arc.transit.clone(),
            target,
        })
    }

    fn value_of(&self, to: To, gamma: f64) -> f64 {
        match to {
            To::Terminal => 0.0,
            To::Node(j) => match &self.nodes[j] {
                Node::Decision { edges, .. } => edges
                    .iter()
                    .map(|(_, a)| a.transit.discounted(gamma, self.value_of(a.to, gamma)))
                    .fold(f64::NEG_INFINITY, f64::max),
                Node::Chance { outcomes } => {
                    outcomes
                        .iter()
                        .map(|a| a.transit.discounted(gamma, self.value_of(a.to, gamma)))
                        .sum::<f64>()
                        / outcomes.len() as f64
                }
            },
        }
    }

    /// Expectimax value of each root action.
    pub fn root_values(&self, gamma: f64) -> Vec<(Action, f64)> {
        match &self.nodes[0] {
            Node::Decision { edges, .. } => edges
                .iter()
                .map(|(act, a)| {
                    (
                        *act,
                        a.transit.discounted(gamma, self.value_of(a.to, gamma)),
                    )
                })
                .collect(),
            Node::Chance { .. } => Vec::new(),
        }
    }

    /// Chance arity reached from a root action (1 when it is not a chance node).
    pub fn arity(&self, action: Action) -> usize {
        let Node::Decision { edges, .. } = &self.nodes[0] else {
            return 1;
        };
        edges
            .iter()
            .find(|(a, _)| *a == action)
            .and_then(|(_, arc)| match arc.to {
                To::Node(j) => match &self.nodes[j] {
                    Node::Chance { outcomes } => Some(outcomes.len()),
                    _ => None,
                },
                To::Terminal => None,
            })
            .unwrap_or(1)
    }

    /// Sets every decision node's leaf value to its expectimax value.
    pub fn with_exact_values(mut self, gamma: f64) -> Self {
        for j in 0..self.nodes.len() {
            let v = self.value_of(To::Node(j), gamma);
            if let Node::Decision { value, .. } = &mut self.nodes[j] {
                *value = v;
            }
        }
        self
    }
}

impl SearchModel for FixedTree {
    type State = usize;
    type Outcome = usize;

    fn legal_actions(&self, state: &usize) -> ActionSet {
        match &self.nodes[*state] {
            Node::Decision { edges, .. } => edges.iter().map(|(a, _)| *a).collect(),
            Node::Chance { .. } => ActionSet::EMPTY,
        }
    }

    fn expand(&self, state: &usize, action: Action) -> Result<Link<usize, usize>> {
        match &self.nodes[*state] {
            Node::Decision { edges, .. } => {
                let (_, arc) = edges
                    .iter()
                    .find(|(a, _)| *a == action)
                    .ok_or_else(|| Error::contract(format!("{action:?} not available")))?;
                self.link(arc, action)
            }
            Node::Chance { .. } => Err(Error::contract("expand on a chance node")),
        }
    }

    fn resolve(
        &self,
        state: &usize,
        action: Action,
        outcome: &usize,
    ) -> Result<Link<usize, usize>> {
        match &self.nodes[*state] {
            Node::Chance { outcomes } => {
                let arc = outcomes
                    .get(*outcome)
                    .ok_or_else(|| Error::contract(format!("no outcome {outcome}")))?;
                self.link(arc, action)
            }
            Node::Decision { .. } => Err(Error::contract("resolve on a decision node")),
        }
    }
}

/// Uniform priors and each node's stored value.
pub struct TableEvaluator<'a>(pub &'a FixedTree);

impl Evaluator<usize> for TableEvaluator<'_> {
    fn evaluate(&mut self, state: &usize) -> Result<Evaluation> {
        match &self.0.nodes[*state] {
            Node::Decision { value, .. } => Ok(Evaluation {
                policy: [0.25; 4],
                value: *value,
            }),
            Node::Chance { .. } => Err(Error::contract("evaluating a chance node")),
        }
    }
}

/// Three reference problems: a deterministic two-level tree, a single
/// chance node under a lone action, and two competing chance nodes.
pub fn reference_trees(gamma: f64) -> Vec<(&'static str, FixedTree)> {
    use Action::*;
    use To::Terminal;
    let deterministic = FixedTree {
        nodes: vec![
            Node::Decision {
                value: 0.0,
                edges: vec![
                    (Up, arc(1, &[(0, 1.0)], To::Node(1))),
                    (Down, arc(3, &[], To::Node(2))),
                    (Left, arc(1, &[(0, 1.0)], Terminal)),
                ],
            },
            Node::Decision {
                value: 0.0,
                edges: vec![
                    (Up, arc(2, &[(1, 10.0)], Terminal)),
                    (Down, arc(2, &[(1, 10.0)], Terminal)),
                ],
            },
            Node::Decision {
                value: 0.0,
                edges: vec![(Right, arc(1, &[(0, -10.0)], Terminal))],
            },
        ],
    };
    let single_chance = FixedTree {
        nodes: vec![
            Node::Decision {
                value: 0.0,
                edges: vec![(Right, arc(1, &[(0, 1.0)], To::Node(1)))],
            },
            Node::Chance {
                outcomes: vec![
                    arc(1, &[(0, 1.0)], To::Node(2)),
                    arc(2, &[], Terminal),
                    arc(1, &[(0, -10.0)], Terminal),
                ],
            },
            Node::Decision {
                value: 0.0,
                edges: vec![
                    (Up, arc(1, &[(0, 2.0)], Terminal)),
                    (Down, arc(1, &[(0, 2.0)], Terminal)),
                ],
            },
        ],
    };
    let two_chances = FixedTree {
        nodes: vec![
            Node::Decision {
                value: 0.0,
                edges: vec![
                    (Up, arc(1, &[], To::Node(1))),
                    (Down, arc(0, &[], To::Node(2))),
                    (Left, arc(1, &[(0, 1.5)], Terminal)),
                ],
            },
            Node::Chance {
                outcomes: vec![
                    arc(1, &[(0, 4.0)], Terminal),
                    arc(1, &[(0, -2.0)], Terminal),
                ],
            },
            Node::Chance {
                outcomes: vec![
                    arc(1, &[(0, 3.0)], Terminal),
                    arc(2, &[(1, 3.0)], Terminal),
                    arc(1, &[], To::Node(3)),
                ],
            },
            Node::Decision {
                value: 0.0,
                edges: vec![(Right, arc(1, &[(0, 0.5)], Terminal))],
            },
        ],
    };
    vec![
        ("deterministic", deterministic.with_exact_values(gamma)),
        ("single_chance", single_chance.with_exact_values(gamma)),
        ("two_chances", two_chances.with_exact_values(gamma)),
    ]
}
