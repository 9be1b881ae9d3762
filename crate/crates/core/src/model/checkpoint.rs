//! Versioned textual checkpoint format with exact f64 round-trips.
//!
//! Parameters are written as hexadecimal IEEE-754 bit patterns, so a saved
//! and reloaded model evaluates bit-identically to the live one.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{ModelKind, PolicyModel, RecurrentModel, TabularModel};

const MAGIC: &str = "spg-checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad header {0:?})")]
    BadMagic(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

fn malformed(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed(msg.into())
}

pub fn save_model(model: &ModelKind, path: &Path) -> Result<(), CheckpointError> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    match model {
        ModelKind::Tabular(m) => {
            writeln!(out, "backend tabular").unwrap();
            writeln!(out, "seed {}", m.init_seed()).unwrap();
            writeln!(out, "t_max {}", m.t_max()).unwrap();
            writeln!(out, "shape contexts {} vocab {}", m.num_contexts(), m.vocab_size()).unwrap();
        }
        ModelKind::Recurrent(m) => {
            writeln!(out, "backend recurrent").unwrap();
            writeln!(out, "seed {}", m.init_seed()).unwrap();
            writeln!(out, "t_max {}", m.t_max()).unwrap();
            writeln!(
                out,
                "shape vocab {} embed {} hidden {}",
                m.vocab_size(),
                m.embed_dim(),
                m.hidden_dim()
            )
            .unwrap();
        }
    }
    let params = params_of(model);
    writeln!(out, "params {}", params.len()).unwrap();
    for chunk in params.chunks(8) {
        let line: Vec<String> = chunk.iter().map(|p| format!("{:016x}", p.to_bits())).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn params_of(model: &ModelKind) -> &[f64] {
    match model {
        ModelKind::Tabular(m) => m.params(),
        ModelKind::Recurrent(m) => m.params(),
    }
}

pub fn load_model(path: &Path) -> Result<ModelKind, CheckpointError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic.to_string()));
    }
    let backend = field(lines.next(), "backend")?;
    let seed: u64 = parse(&field(lines.next(), "seed")?, "seed")?;
    let t_max: usize = parse(&field(lines.next(), "t_max")?, "t_max")?;
    let shape_line = lines.next().ok_or_else(|| malformed("missing shape line"))?;
    let shape = parse_shape(shape_line)?;
    let count: usize = parse(&field(lines.next(), "params")?, "params")?;
    let mut params = Vec::with_capacity(count);
    for line in lines {
        for word in line.split_whitespace() {
            let bits = u64::from_str_radix(word, 16)
                .map_err(|_| malformed(format!("bad parameter word {word:?}")))?;
            params.push(f64::from_bits(bits));
        }
    }
    if params.len() != count {
        return Err(malformed(format!("expected {count} parameters, found {}", params.len())));
    }
    match backend.as_str() {
        "tabular" => {
            let (contexts, vocab) = match shape[..] {
                [("contexts", c), ("vocab", v)] => (c, v),
                _ => return Err(malformed("tabular shape must list contexts and vocab")),
            };
            Ok(ModelKind::Tabular(TabularModel::from_parts(contexts, vocab, t_max, seed, params)))
        }
        "recurrent" => {
            let (vocab, embed, hidden) = match shape[..] {
                [("vocab", v), ("embed", e), ("hidden", h)] => (v, e, h),
                _ => return Err(malformed("recurrent shape must list vocab, embed, hidden")),
            };
            Ok(ModelKind::Recurrent(RecurrentModel::from_parts(
                vocab, embed, hidden, t_max, seed, params,
            )))
        }
        other => Err(malformed(format!("unknown backend {other:?}"))),
    }
}

fn field(line: Option<&str>, key: &str) -> Result<String, CheckpointError> {
    let line = line.ok_or_else(|| malformed(format!("missing {key} line")))?;
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next()) {
        (Some(k), Some(v)) if k == key => Ok(v.to_string()),
        _ => Err(malformed(format!("expected {key} line, got {line:?}"))),
    }
}

fn parse<T: std::str::FromStr>(value: &str, key: &str) -> Result<T, CheckpointError> {
    value.parse().map_err(|_| malformed(format!("bad {key} value {value:?}")))
}

fn parse_shape(line: &str) -> Result<Vec<(&str, usize)>, CheckpointError> {
    let words: Vec<&str> = line.split_whitespace().collect();
    if words.first() != Some(&"shape") || words.len() % 2 == 0 {
        return Err(malformed(format!("bad shape line {line:?}")));
    }
    words[1..]
        .chunks(2)
        .map(|pair| {
            let n: usize =
                pair[1].parse().map_err(|_| malformed(format!("bad shape value {:?}", pair[1])))?;
            Ok((pair[0], n))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PolicyModel;
    use crate::reward::Sequence;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("spg_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn recurrent_round_trip_is_exact() {
        let model = ModelKind::Recurrent(RecurrentModel::random(7, 5, 4, 9, 123));
        let path = tmp("rec.ckpt");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model.params(), loaded.params());
        assert_eq!(model.t_max(), loaded.t_max());
        let x = Sequence::unterminated(vec![2, 3]);
        let z = Sequence::unterminated(vec![4, 1]);
        assert_eq!(
            model.sequence_log_likelihood(&x, &z).to_bits(),
            loaded.sequence_log_likelihood(&x, &z).to_bits()
        );
    }

    #[test]
    fn tabular_round_trip_is_exact() {
        let model = ModelKind::Tabular(TabularModel::random(3, 5, 6, 77, 2.0));
        let path = tmp("tab.ckpt");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model.params(), loaded.params());
        match loaded {
            ModelKind::Tabular(t) => assert_eq!(t.num_contexts(), 3),
            _ => panic!("wrong backend"),
        }
    }

    #[test]
    fn bad_header_is_rejected() {
        let path = tmp("bad.ckpt");
        std::fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(matches!(load_model(&path), Err(CheckpointError::BadMagic(_))));
    }
}
