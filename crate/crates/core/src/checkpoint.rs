//! Versioned JSON checkpoints.
//!
//! Tensors are stored as base64 of little-endian `f32` values. A SHA-256
//! digest over the document (with an empty `digest` field) guards against
//! corruption and truncation.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{FeaturePlanes, NUM_PLANES};
use crate::error::{Error, Result};
use crate::net::{Layout, Network};
use crate::selfplay::{ReplayBuffer, TrainConfig, TrainingExample};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    pub games_played: u64,
    pub rng: ChaCha8Rng,
    pub buffer: ReplayBuffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub hyperparameters: TrainConfig,
    pub net: Network<f32>,
    pub training: Option<TrainingState>,
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct TrainingDoc {
    games_played: u64,
    rng: ChaCha8Rng,
    buffer_capacity: usize,
    buffer_games: Vec<usize>,
    /// Per example: packed feature words (`u64`), four `pi` and one `z`
    /// (`f64`), all little-endian.
    buffer: String,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    board_n: usize,
    hyperparameters: TrainConfig,
    tensors: Vec<TensorDoc>,
    momentum: Vec<TensorDoc>,
    training: Option<TrainingDoc>,
    digest: String,
}

fn encode_tensors(layout: &Layout, values: &[f32]) -> Vec<TensorDoc> {
    layout
        .tensors()
        .iter()
        .map(|t| {
            let bytes: Vec<u8> = values[t.offset..t.offset + t.len()]
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            TensorDoc {
                name: t.name.to_string(),
                shape: t.shape.clone(),
                data: B64.encode(bytes),
            }
        })
        .collect()
}

fn decode_tensors(layout: &Layout, docs: &[TensorDoc]) -> Result<Vec<f32>> {
    if docs.len() != layout.tensors().len() {
        return Err(Error::Integrity(format!(
            "{} tensors stored, {} expected",
            docs.len(),
            layout.tensors().len()
        )));
    }
    let mut out = Vec::with_capacity(layout.param_count());
    for (doc, spec) in docs.iter().zip(layout.tensors()) {
        if doc.name != spec.name || doc.shape != spec.shape {
            return Err(Error::Integrity(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                doc.name, doc.shape, spec.name, spec.shape
            )));
        }
        let bytes = B64
            .decode(&doc.data)
            .map_err(|e| Error::Integrity(format!("tensor {}: {e}", doc.name)))?;
        if bytes.len() != 4 * spec.len() {
            return Err(Error::Integrity(format!(
                "tensor {} has wrong length",
                doc.name
            )));
        }
        out.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))),
        );
    }
    Ok(out)
}

fn feature_words(n: usize) -> usize {
    (NUM_PLANES * n * n).div_ceil(64)
}

fn encode_buffer(buffer: &ReplayBuffer) -> String {
    let mut bytes = Vec::new();
    for ex in buffer.examples() {
        for w in ex.features.words() {
            bytes.extend(w.to_le_bytes());
        }
        for p in ex.pi {
            bytes.extend(p.to_le_bytes());
        }
        bytes.extend(ex.z.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_buffer(n: usize, doc: &TrainingDoc) -> Result<ReplayBuffer> {
    let bytes = B64
        .decode(&doc.buffer)
        .map_err(|e| Error::Integrity(format!("replay buffer: {e}")))?;
    let words = feature_words(n);
    let stride = 8 * (words + 5);
    if bytes.len() % stride != 0 {
        return Err(Error::Integrity(
            "replay buffer has a partial example".into(),
        ));
    }
    let read = |c: &[u8]| u64::from_le_bytes(c.try_into().expect("8 bytes"));
    let examples = bytes
        .chunks_exact(stride)
        .map(|ex| {
            let mut it = ex.chunks_exact(8).map(read);
            let w: Vec<u64> = it.by_ref().take(words).collect();
            let mut pi = [0.0; 4];
            for p in &mut pi {
                *p = f64::from_bits(it.next().expect("stride"));
            }
            let z = f64::from_bits(it.next().expect("stride"));
            Ok(TrainingExample {
                features: FeaturePlanes::from_words(n, w)
                    .map_err(|e| Error::Integrity(e.to_string()))?,
                pi,
                z,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ReplayBuffer::from_parts(doc.buffer_capacity, doc.buffer_games.clone(), examples)
}

fn digest_of(env: &Envelope) -> Result<String> {
    let bytes = serde_json::to_vec(env)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn to_json(ck: &Checkpoint) -> Result<String> {
    let layout = ck.net.layout();
    let mut env = Envelope {
        format_version: FORMAT_VERSION,
        board_n: ck.net.n(),
        hyperparameters: ck.hyperparameters.clone(),
        tensors: encode_tensors(layout, ck.net.params()),
        momentum: encode_tensors(layout, ck.net.momentum()),
        training: ck.training.as_ref().map(|t| TrainingDoc {
            games_played: t.games_played,
            rng: t.rng.clone(),
            buffer_capacity: t.buffer.capacity(),
            buffer_games: t.buffer.game_sizes().collect(),
            buffer: encode_buffer(&t.buffer),
        }),
        digest: String::new(),
    };
    env.digest = digest_of(&env)?;
    Ok(serde_json::to_string(&env)?)
}

pub fn from_json(text: &str) -> Result<Checkpoint> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::Integrity(format!("unreadable checkpoint: {e}")))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Integrity("missing format_version".into()))?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            found: found.min(u32::MAX as u64) as u32,
            expected: FORMAT_VERSION,
        });
    }
    let mut env: Envelope = serde_json::from_value(value)
        .map_err(|e| Error::Integrity(format!("malformed checkpoint: {e}")))?;
    let stored = std::mem::take(&mut env.digest);
    if digest_of(&env)? != stored {
        return Err(Error::Integrity("digest mismatch".into()));
    }
    let layout = Layout::new(env.board_n).map_err(|e| Error::Integrity(e.to_string()))?;
    let params = decode_tensors(&layout, &env.tensors)?;
    let momentum = decode_tensors(&layout, &env.momentum)?;
    let net = Network::from_parts(env.board_n, params, momentum)?;
    let training = env
        .training
        .as_ref()
        .map(|t| -> Result<TrainingState> {
            Ok(TrainingState {
                games_played: t.games_played,
                rng: t.rng.clone(),
                buffer: decode_buffer(env.board_n, t)?,
            })
        })
        .transpose()?;
    Ok(Checkpoint {
        hyperparameters: env.hyperparameters,
        net,
        training,
    })
}

/// Writes via a temporary file and rename, so a crash never leaves a
/// half-written checkpoint under `path`.
pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    let text = to_json(ck)?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    fn sample_checkpoint() -> Checkpoint {
        let mut net = Network::<f32>::init(4, 8).unwrap();
        // Nonzero momentum, including awkward values.
        let k = net.param_count();
        let mut g = vec![0.0; k];
        g[0] = 1.0 / 3.0;
        g[k - 1] = -1e-30;
        net.sgd_update(&g, 0.01, 0.7).unwrap();
        let mut buffer = ReplayBuffer::new(5);
        let mut f = FeaturePlanes::zeros(4);
        f.set(2, crate::env::Cell::new(1, 3));
        buffer.push_game(vec![
            TrainingExample {
                features: f.clone(),
                pi: [0.1, 0.2, 0.3, 0.4],
                z: -0.1,
            },
            TrainingExample {
                features: FeaturePlanes::zeros(4),
                pi: [1.0, 0.0, 0.0, 0.0],
                z: 10.604,
            },
        ]);
        buffer.push_game(vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        rng.next_u64();
        Checkpoint {
            hyperparameters: TrainConfig {
                board: 4,
                ..TrainConfig::default()
            },
            net,
            training: Some(TrainingState {
                games_played: 2,
                rng,
                buffer,
            }),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample_checkpoint();
        let back = from_json(&to_json(&ck).unwrap()).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.net.params().iter().zip(ck.net.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let mut r1 = back.training.unwrap().rng;
        let mut r2 = ck.training.unwrap().rng;
        assert_eq!(r1.next_u64(), r2.next_u64());
    }

    #[test]
    fn truncation_is_an_integrity_error() {
        let text = to_json(&sample_checkpoint()).unwrap();
        for cut in [10, text.len() / 2, text.len() - 1] {
            assert!(
                matches!(from_json(&text[..cut]), Err(Error::Integrity(_))),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn tampering_is_an_integrity_error() {
        let text = to_json(&sample_checkpoint()).unwrap();
        let tampered = text.replacen("\"games_played\":2", "\"games_played\":3", 1);
        assert_ne!(tampered, text);
        assert!(matches!(from_json(&tampered), Err(Error::Integrity(_))));
    }

    #[test]
    fn version_bump_is_explicit() {
        let text = to_json(&sample_checkpoint()).unwrap();
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert!(matches!(
            from_json(&bumped),
            Err(Error::UnsupportedVersion {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = sample_checkpoint();
        save(&ck, &path).unwrap();
        assert_eq!(load(&path).unwrap(), ck);
        assert!(matches!(
            load(&dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }
}
