//! Checkpoint files: a text manifest terminated by an `end` line, followed by
//! the little-endian f32 payload of every listed tensor.
//!
//! ```text
//! #wordlm-checkpoint v1
//! step 120
//! optimizer_steps 120
//! config_digest <sha256 of the config lines>
//! config model.layers = 2
//! ...
//! tensors 41
//! embeddings.word f32 100x64 0
//! ...
//! payload_bytes 1234567
//! end
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::config::KeyValueConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, WordBertModel};
use crate::numerics::{Adam, AdamState};

pub const CHECKPOINT_HEADER: &str = "#wordlm-checkpoint v1";

const END_LINE: &str = "end";

/// Everything needed to continue training.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: WordBertModel,
    pub train_config: TrainConfig,
    pub step: u64,
    /// Adam moments by parameter name; empty when saved without an optimizer.
    pub adam_states: Vec<(String, AdamState)>,
}

fn config_lines(model: &ModelConfig, train: &TrainConfig) -> Vec<String> {
    model
        .to_kv()
        .into_iter()
        .chain(train.to_kv())
        .map(|(k, v)| format!("config {k} = {v}"))
        .collect()
}

fn digest(lines: &[String]) -> String {
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn save_checkpoint(
    path: &Path,
    model: &WordBertModel,
    optimizer: Option<&Adam>,
    train_config: &TrainConfig,
    step: u64,
) -> Result<()> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = model
        .named_parameters()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec(), t.to_vec()))
        .collect();
    if let Some(opt) = optimizer {
        for ((name, p), s) in opt.params().iter().zip(opt.states()) {
            tensors.push((format!("adam.m.{name}"), p.shape().to_vec(), s.first_moment.clone()));
            tensors.push((format!("adam.v.{name}"), p.shape().to_vec(), s.second_moment.clone()));
        }
    }
    let configs = config_lines(model.config(), train_config);
    let mut manifest = String::new();
    manifest.push_str(CHECKPOINT_HEADER);
    manifest.push('\n');
    manifest.push_str(&format!("step {step}\n"));
    match optimizer {
        Some(opt) => manifest.push_str(&format!("optimizer_steps {}\n", opt.steps_taken())),
        None => manifest.push_str("optimizer_steps none\n"),
    }
    manifest.push_str(&format!("config_digest {}\n", digest(&configs)));
    for l in &configs {
        manifest.push_str(l);
        manifest.push('\n');
    }
    manifest.push_str(&format!("tensors {}\n", tensors.len()));
    let mut offset = 0usize;
    for (name, shape, data) in &tensors {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{name} f32 {} {offset}\n", dims.join("x")));
        offset += data.len() * 4;
    }
    manifest.push_str(&format!("payload_bytes {offset}\n{END_LINE}\n"));

    let mut bytes = manifest.into_bytes();
    bytes.reserve(offset);
    for (_, _, data) in &tensors {
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = format!("\n{END_LINE}\n");
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| Error::format(path, 0, "manifest has no end line"))?;
    let manifest = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::format(path, 0, "manifest is not UTF-8"))?;
    let payload = &bytes[end + marker.len()..];

    let mut lines = manifest.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::format(path, 0, format!("manifest ends before {what}")))
    };
    let (n, header) = next("header")?;
    if header != CHECKPOINT_HEADER {
        return Err(Error::format(path, n, format!("unsupported header {header:?}")));
    }
    let field = |(n, line): (usize, &str), key: &str| -> Result<String> {
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_owned)
            .ok_or_else(|| Error::format(path, n, format!("expected {key}")))
    };
    let num = |n: usize, s: &str| -> Result<u64> {
        s.parse().map_err(|_| Error::format(path, n, format!("bad number {s:?}")))
    };

    let l = next("step")?;
    let step = num(l.0, &field(l, "step")?)?;
    let l = next("optimizer_steps")?;
    let opt_steps = match field(l, "optimizer_steps")?.as_str() {
        "none" => None,
        s => Some(num(l.0, s)?),
    };
    let l = next("config_digest")?;
    let expected_digest = field(l, "config_digest")?;

    let mut configs = Vec::new();
    let mut entries: Vec<(String, String)> = Vec::new();
    let tensor_count = loop {
        let (n, line) = next("tensors")?;
        if let Some(rest) = line.strip_prefix("tensors ") {
            break num(n, rest)? as usize;
        }
        let kv = line
            .strip_prefix("config ")
            .and_then(|r| r.split_once(" = "))
            .ok_or_else(|| Error::format(path, n, "expected config line"))?;
        entries.push((kv.0.to_owned(), kv.1.to_owned()));
        configs.push(line.to_owned());
    };
    if digest(&configs) != expected_digest {
        return Err(Error::format(path, 4, "config digest mismatch"));
    }
    let mut model_config = ModelConfig::default();
    let mut train_config = TrainConfig::default();
    let pairs = || entries.iter().map(|(k, v)| (k.as_str(), v.as_str()));
    model_config
        .apply_kv(pairs())
        .and_then(|_| train_config.apply_kv(pairs()))
        .map_err(|e| Error::format(path, 0, e.join("; ")))?;

    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let (n, line) = next("tensor entry")?;
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 4 || parts[1] != "f32" {
            return Err(Error::format(path, n, "expected `name f32 shape offset`"));
        }
        let shape = parts[2]
            .split('x')
            .map(|d| num(n, d).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        tensors.push(TensorEntry {
            name: parts[0].to_owned(),
            shape,
            offset: num(n, parts[3])? as usize,
        });
    }
    let l = next("payload_bytes")?;
    let expected = num(l.0, &field(l, "payload_bytes")?)?;
    if lines.next().is_some() {
        return Err(Error::format(path, 0, "unexpected lines after payload_bytes"));
    }
    if payload.len() as u64 != expected {
        return Err(Error::Integrity {
            expected_bytes: expected,
            actual_bytes: payload.len() as u64,
        });
    }

    let mut data: HashMap<String, Vec<f32>> = HashMap::with_capacity(tensors.len());
    let mut shapes: HashMap<String, Vec<usize>> = HashMap::with_capacity(tensors.len());
    let mut cursor = 0usize;
    for t in tensors {
        let len: usize = t.shape.iter().product::<usize>() * 4;
        if t.offset != cursor || t.offset + len > payload.len() {
            return Err(Error::format(path, 0, format!("tensor {} has a bad offset", t.name)));
        }
        let values = payload[t.offset..t.offset + len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        cursor += len;
        data.insert(t.name.clone(), values);
        shapes.insert(t.name, t.shape);
    }
    if cursor != payload.len() {
        return Err(Error::format(path, 0, "payload has unlisted bytes"));
    }

    let model = WordBertModel::from_tensors(model_config, &data)?;
    for (name, t) in model.named_parameters() {
        if shapes.get(&name).map(Vec::as_slice) != Some(t.shape()) {
            return Err(Error::shape("load_checkpoint", t.shape(), shapes.get(&name).map_or(&[][..], |s| s)));
        }
    }
    let mut adam_states = Vec::new();
    if let Some(step_count) = opt_steps {
        for (name, _) in model.trainable_parameters() {
            let mut take = |kind: &str| {
                data.remove(&format!("adam.{kind}.{name}"))
                    .ok_or_else(|| Error::format(path, 0, format!("missing adam.{kind}.{name}")))
            };
            let first_moment = take("m")?;
            let second_moment = take("v")?;
            adam_states.push((
                name,
                AdamState {
                    first_moment,
                    second_moment,
                    step_count,
                },
            ));
        }
    }
    Ok(Checkpoint {
        model,
        train_config,
        step,
        adam_states,
    })
}
