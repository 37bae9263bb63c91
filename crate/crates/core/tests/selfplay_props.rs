use proptest::prelude::*;
use snakezero::env::Event;
use snakezero::mcts::SearchConfig;
use snakezero::net::Network;
use snakezero::selfplay::{
    compute_z_targets, play_selfplay_game, training_examples, training_loop, DecisionRecord,
    GameRecord, TrainConfig,
};
use snakezero::{Action, Cell, Status};

fn record(segments: &[(u32, Vec<(u32, f64)>)]) -> GameRecord {
    GameRecord {
        game_index: 0,
        seed: 0,
        board: 4,
        time_limit: None,
        start_apple: Cell::new(3, 3),
        decisions: segments
            .iter()
            .map(|(elapsed, ev)| DecisionRecord {
                time_index: 0,
                pi: [0.25; 4],
                action: Action::Up,
                elapsed: *elapsed,
                events: ev
                    .iter()
                    .map(|&(offset, reward)| Event { offset, reward })
                    .collect(),
                apples: vec![],
                state: None,
            })
            .collect(),
        status: Status::Lost,
        score: 2,
        steps: 0,
    }
}

/// Direct sum over all later rewards at absolute times.
fn forward_z(segments: &[(u32, Vec<(u32, f64)>)], gamma: f64) -> Vec<f64> {
    let mut starts = Vec::new();
    let mut t = 0u32;
    for (elapsed, _) in segments {
        starts.push(t);
        t += elapsed;
    }
    (0..segments.len())
        .map(|i| {
            segments[i..]
                .iter()
                .zip(&starts[i..])
                .flat_map(|((_, ev), &s)| ev.iter().map(move |&(o, r)| (s + o, r)))
                .map(|(at, r)| gamma.powi((at - starts[i]) as i32) * r)
                .sum()
        })
        .collect()
}

fn segments() -> impl Strategy<Value = Vec<(u32, Vec<(u32, f64)>)>> {
    prop::collection::vec(
        (1u32..12).prop_flat_map(|elapsed| {
            (
                Just(elapsed),
                prop::collection::vec(
                    (
                        0..elapsed,
                        prop::sample::select(vec![1.0, -10.0, 10.0, -9.0]),
                    ),
                    0..3,
                ),
            )
        }),
        1..30,
    )
}

proptest! {
    #[test]
    fn z_targets_match_forward_definition(segs in segments(), gamma in 0.5f64..=1.0) {
        let z = compute_z_targets(&record(&segs), gamma);
        let direct = forward_z(&segs, gamma);
        for (a, b) in z.iter().zip(&direct) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }
}

fn tiny_cfg(games: u64) -> TrainConfig {
    TrainConfig {
        board: 4,
        time_limit: Some(60),
        games,
        seed: 5,
        search: SearchConfig {
            budget: 8,
            ..SearchConfig::default()
        },
        batches: 3,
        batch_size: 8,
        buffer_games: 3,
        checkpoint_every: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn policy_targets_vanish_on_illegal_moves() {
    let cfg = tiny_cfg(1);
    let net = Network::<f32>::init(4, 2).unwrap();
    for seed in 0..4 {
        let rec = play_selfplay_game(&net, &cfg, 0, seed).unwrap();
        let examples = training_examples(&rec, cfg.search.gamma).unwrap();
        assert_eq!(examples.len(), rec.decisions.len());
        for d in &rec.decisions {
            let s = d.state.as_ref().unwrap();
            let legal = s.legal_actions().unwrap();
            assert!(legal.len() >= 2);
            for a in Action::ALL {
                if !legal.contains(a) {
                    assert_eq!(d.pi[a.index()], 0.0);
                }
            }
            assert!((d.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(rec.steps <= 60);
    }
}

#[test]
fn training_smoke_run_and_resume() {
    let full = tempfile::tempdir().unwrap();
    let summary = training_loop(&tiny_cfg(4), full.path(), false).unwrap();
    assert_eq!(summary.rows.len(), 4);
    for f in [
        "metrics.csv",
        "games.jsonl",
        "checkpoint.json",
        "series.csv",
    ] {
        assert!(full.path().join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(full.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);

    let split = tempfile::tempdir().unwrap();
    training_loop(&tiny_cfg(2), split.path(), false).unwrap();
    training_loop(&tiny_cfg(4), split.path(), true).unwrap();
    for f in ["metrics.csv", "games.jsonl", "checkpoint.json"] {
        assert_eq!(
            std::fs::read(full.path().join(f)).unwrap(),
            std::fs::read(split.path().join(f)).unwrap(),
            "{f}"
        );
    }
}
