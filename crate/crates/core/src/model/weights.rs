//! Binary weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"TCNN" | version: u32 | manifest_len: u32 | manifest: UTF-8 | payload: f32* | fnv1a64(payload): u64
//! ```
//!
//! The manifest's first line is `config <echo>`; each following line is
//! `tensor <name> <d0,d1,...>` in payload order.

use std::fs;
use std::path::Path;

use super::{build_model, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const WEIGHT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TCNN";

/// A decoded weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub version: u32,
    pub config: ModelConfig,
    pub manifest: Vec<(String, Vec<usize>)>,
    pub payload: Vec<f32>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn manifest_of(model: &Model) -> Vec<(String, Vec<usize>)> {
    let mut entries = Vec::new();
    for (name, p) in model.named_params() {
        entries.push((format!("{name}.weight"), p.weights.shape().to_vec()));
        entries.push((format!("{name}.bias"), vec![p.bias.len()]));
    }
    entries
}

fn fmt_shape(shape: &[usize]) -> String {
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut manifest = format!("config {}\n", model.config().to_echo());
    for (name, shape) in manifest_of(model) {
        manifest.push_str(&format!("tensor {name} {}\n", fmt_shape(&shape)));
    }
    let mut payload = Vec::with_capacity(model.num_params() * 4);
    for (_, p) in model.named_params() {
        for v in p.weights.data().iter().chain(&p.bias) {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(12 + manifest.len() + payload.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WEIGHT_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&fnv1a64(&payload).to_le_bytes());
    out
}

struct Header {
    version: u32,
    config: ModelConfig,
    manifest: Vec<(String, Vec<usize>)>,
    body_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::WeightFormat("missing TCNN magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != WEIGHT_FORMAT_VERSION {
        return Err(Error::WeightVersion {
            expected: WEIGHT_FORMAT_VERSION,
            found: version,
        });
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let text = bytes
        .get(12..12 + len)
        .ok_or_else(|| Error::WeightFormat("manifest extends past end of file".into()))?;
    let text = std::str::from_utf8(text)
        .map_err(|_| Error::WeightFormat("manifest is not UTF-8".into()))?;

    let mut lines = text.lines();
    let config = lines
        .next()
        .and_then(|l| l.strip_prefix("config "))
        .ok_or_else(|| Error::WeightFormat("manifest lacks a config line".into()))?;
    let config = ModelConfig::parse_echo(config)?;
    let mut manifest = Vec::new();
    for line in lines {
        let mut parts = line.split_whitespace();
        let (Some("tensor"), Some(name), Some(shape), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::WeightFormat(format!("bad manifest line `{line}`")));
        };
        let shape = shape
            .split(',')
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Error::WeightFormat(format!("bad shape in manifest line `{line}`")))?;
        manifest.push((name.to_string(), shape));
    }
    Ok(Header {
        version,
        config,
        manifest,
        body_start: 12 + len,
    })
}

fn check_manifest(found: &[(String, Vec<usize>)], expected: &[(String, Vec<usize>)]) -> Result<()> {
    for i in 0..found.len().max(expected.len()) {
        match (found.get(i), expected.get(i)) {
            (Some(f), Some(e)) if f == e => {}
            (f, e) => {
                let describe = |entry: Option<&(String, Vec<usize>)>| match entry {
                    Some((name, shape)) => format!("{name} [{}]", fmt_shape(shape)),
                    None => "nothing".to_string(),
                };
                let layer = e.or(f).map(|(n, _)| n.clone()).unwrap_or_default();
                return Err(Error::WeightShape {
                    layer,
                    expected: describe(e),
                    found: describe(f),
                });
            }
        }
    }
    Ok(())
}

fn parse_body(bytes: &[u8], header: &Header) -> Result<Vec<f32>> {
    let body = &bytes[header.body_start..];
    if body.len() < 8 {
        return Err(Error::Checksum {
            stored: 0,
            computed: fnv1a64(body),
        });
    }
    let (payload, trailer) = body.split_at(body.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().expect("8 bytes"));
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let expected: usize = header
        .manifest
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    if payload.len() != expected * 4 {
        return Err(Error::WeightFormat(format!(
            "payload has {} bytes, manifest needs {}",
            payload.len(),
            expected * 4
        )));
    }
    Ok(payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn decode(bytes: &[u8]) -> Result<WeightFile> {
    let header = parse_header(bytes)?;
    let payload = parse_body(bytes, &header)?;
    Ok(WeightFile {
        version: header.version,
        config: header.config,
        manifest: header.manifest,
        payload,
    })
}

impl WeightFile {
    /// Instantiates a model of `config`, which must match the manifest exactly.
    pub fn into_model(self, config: &ModelConfig) -> Result<Model> {
        let mut model = build_model(config, &mut Rng::new(0))?;
        check_manifest(&self.manifest, &manifest_of(&model))?;
        let mut values = self.payload.into_iter();
        for p in model.params_mut() {
            for v in p.weights.data_mut().iter_mut().chain(p.bias.iter_mut()) {
                *v = values
                    .next()
                    .expect("payload length checked against manifest");
            }
        }
        Ok(model)
    }
}

pub fn save_weights(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

/// Reads and validates a weight file, using the config echo it carries.
pub fn read_weights(path: impl AsRef<Path>) -> Result<WeightFile> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads weights into a model built from `config`. Shapes are checked against the
/// config before the payload checksum, so a file for a different architecture is
/// reported as a shape mismatch.
pub fn load_weights(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(&bytes)?;
    let expected = manifest_of(&build_model(config, &mut Rng::new(0))?);
    check_manifest(&header.manifest, &expected)?;
    let payload = parse_body(&bytes, &header)?;
    WeightFile {
        version: header.version,
        config: *config,
        manifest: header.manifest,
        payload,
    }
    .into_model(config)
}
