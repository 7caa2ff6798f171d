//! Learnable parameters, their initialization and the model bundle format.
//!
//! Bundle layout: `HSB1` magic, a `u32` length-prefixed key-value text header
//! (format version, architecture, bank layout, free-form metadata), then a
//! `u32` record count followed by `(u16 name length, name, HST1 tensor)`
//! records. Bank kernels are stored as records named `bank.<i>`.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filter_bank::{FilterBank, FilterKernel, FilterMode};
use crate::hsa::ScaWeights;
use crate::io::{kv::KeyValues, write_atomic};
use crate::tensor::{hst, Tensor};

const MAGIC: &[u8; 4] = b"HSB1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub channels: usize,
    /// Upscaling factor; a power of two, one conv + shuffle stage per factor 2.
    pub scale: usize,
    pub rb1_blocks: usize,
    pub rb2_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 16,
            scale: 4,
            rb1_blocks: 2,
            rb2_blocks: 28,
        }
    }
}

impl ModelConfig {
    /// The configuration used at full scale.
    pub fn full() -> Self {
        ModelConfig {
            channels: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::invalid("model config", "channels must be positive"));
        }
        if self.rb1_blocks == 0 || self.rb2_blocks == 0 {
            return Err(Error::invalid("model config", "block counts must be at least 1"));
        }
        if self.scale < 2 || !self.scale.is_power_of_two() {
            return Err(Error::invalid(
                "model config",
                format!("scale must be a power of two >= 2, got {}", self.scale),
            ));
        }
        Ok(())
    }

    pub fn up_stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }

    /// Every parameter name with its shape, in a fixed order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.channels;
        let mut out = Vec::new();
        let mut conv = |name: String, co: usize, ci: usize, bias: bool| {
            out.push((format!("{name}.weight"), vec![co, ci, 3, 3]));
            if bias {
                out.push((format!("{name}.bias"), vec![co]));
            }
        };
        conv("input".into(), c, 3, true);
        for i in 0..self.rb1_blocks {
            conv(format!("rb1.{i}.conv1"), c, c, true);
            conv(format!("rb1.{i}.conv2"), c, c, true);
        }
        conv("fuse".into(), c, 2 * c, true);
        for i in 0..self.rb2_blocks {
            conv(format!("rb2.{i}.conv1"), c, c, true);
            conv(format!("rb2.{i}.conv2"), c, c, true);
        }
        for s in 0..self.up_stages() {
            conv(format!("up.{s}"), 4 * c, c, true);
        }
        conv("out".into(), 3, c, true);
        out.push(("sca.query".into(), vec![c, c, 3, 3]));
        out.push(("sca.key".into(), vec![c, c, 3, 3]));
        out.push(("sca.value".into(), vec![c, c, 3, 3]));
        out
    }

    fn to_kv(self, kv: &mut KeyValues) {
        kv.set("channels", self.channels)
            .set("scale", self.scale)
            .set("rb1_blocks", self.rb1_blocks)
            .set("rb2_blocks", self.rb2_blocks);
    }

    fn from_kv(kv: &KeyValues) -> Result<Self> {
        let cfg = ModelConfig {
            channels: kv.parse_key("channels")?.ok_or_else(|| missing("channels"))?,
            scale: kv.parse_key("scale")?.ok_or_else(|| missing("scale"))?,
            rb1_blocks: kv.parse_key("rb1_blocks")?.ok_or_else(|| missing("rb1_blocks"))?,
            rb2_blocks: kv.parse_key("rb2_blocks")?.ok_or_else(|| missing("rb2_blocks"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn missing(key: &str) -> Error {
    Error::format("model bundle", format!("header lacks `{key}`"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    bank: FilterBank,
    params: BTreeMap<String, Tensor<f32>>,
}

impl ModelWeights {
    /// Uniform `±1/sqrt(fan_in)` for conv weights and biases; the attention
    /// projections start near pass-through.
    pub fn init(config: ModelConfig, bank: FilterBank, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        let mut fan_in = 1.0f32;
        for (name, shape) in config.param_shapes() {
            if name.starts_with("sca.") {
                continue;
            }
            // each bias directly follows its weight
            if shape.len() == 4 {
                fan_in = (shape[1] * shape[2] * shape[3]) as f32;
            }
            let bound = 1.0 / fan_in.sqrt();
            let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
            params.insert(name, t);
        }
        let sca = ScaWeights::pass_through(config.channels, &mut rng);
        params.insert("sca.query".into(), sca.query);
        params.insert("sca.key".into(), sca.key);
        params.insert("sca.value".into(), sca.value);
        Ok(ModelWeights {
            config,
            bank,
            params,
        })
    }

    /// Builds weights from an explicit parameter map, checking every shape.
    pub fn from_params(
        config: ModelConfig,
        bank: FilterBank,
        params: BTreeMap<String, Tensor<f32>>,
    ) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if params.len() != expected.len() {
            return Err(Error::invalid(
                "model weights",
                format!("expected {} parameters, got {}", expected.len(), params.len()),
            ));
        }
        for (name, shape) in &expected {
            let t = params.get(name).ok_or_else(|| {
                Error::invalid("model weights", format!("missing parameter `{name}`"))
            })?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("model weights", t.shape(), shape));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite { op: format!("parameter {name}") });
            }
        }
        Ok(ModelWeights {
            config,
            bank,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.params
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::invalid("model weights", format!("no parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<f32>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::invalid("model weights", format!("no parameter `{name}`")))
    }

    /// Replaces a parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<f32>) -> Result<()> {
        let slot = self.get_mut(name)?;
        slot.same_shape(&value, "set parameter")?;
        *slot = value.ensure_finite("set parameter")?;
        Ok(())
    }

    pub fn sca(&self) -> ScaWeights {
        ScaWeights {
            query: self.params["sca.query"].clone(),
            key: self.params["sca.key"].clone(),
            value: self.params["sca.value"].clone(),
        }
    }

    pub fn set_sca(&mut self, sca: ScaWeights) -> Result<()> {
        self.set("sca.query", sca.query)?;
        self.set("sca.key", sca.key)?;
        self.set("sca.value", sca.value)
    }

    /// True when both hold the same architecture and parameter names/shapes.
    pub fn same_structure(&self, other: &ModelWeights) -> bool {
        self.config == other.config
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((a, x), (b, y))| a == b && x.shape() == y.shape())
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    fn header(&self, meta: &KeyValues) -> Result<KeyValues> {
        let mut kv = KeyValues::new();
        for (k, v) in meta.iter() {
            kv.set(&format!("meta.{k}"), v);
        }
        kv.set("format_version", FORMAT_VERSION);
        self.config.to_kv(&mut kv);
        kv.set("bank.len", self.bank.len());
        for (i, k) in self.bank.kernels().iter().enumerate() {
            if k.name().contains(char::is_whitespace) {
                return Err(Error::invalid("model bundle", "kernel names may not contain spaces"));
            }
            kv.set(&format!("bank.{i}.name"), k.name());
            kv.set(&format!("bank.{i}.mode"), k.mode().as_str());
        }
        Ok(kv)
    }

    fn records(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut recs: Vec<(String, &Tensor<f32>)> =
            self.params.iter().map(|(k, v)| (k.clone(), v)).collect();
        for (i, k) in self.bank.kernels().iter().enumerate() {
            recs.push((format!("bank.{i}"), k.base()));
        }
        recs
    }

    pub fn encode(&self, meta: &KeyValues) -> Result<Vec<u8>> {
        let header = self.header(meta)?.render();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        let recs = self.records();
        out.extend_from_slice(&(recs.len() as u32).to_le_bytes());
        for (name, t) in recs {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            hst::write(&mut out, t)?;
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<(Self, KeyValues)> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        read_exact(&mut cur, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("model bundle", "bad magic"));
        }
        let hlen = read_u32(&mut cur)? as usize;
        let mut hbytes = vec![0u8; hlen];
        read_exact(&mut cur, &mut hbytes)?;
        let header = KeyValues::parse(
            std::str::from_utf8(&hbytes)
                .map_err(|_| Error::format("model bundle", "header is not UTF-8"))?,
        )?;
        let version: u32 = header.parse_key("format_version")?.ok_or_else(|| missing("format_version"))?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                "model bundle",
                format!("unsupported format version {version}"),
            ));
        }
        let config = ModelConfig::from_kv(&header)?;

        let count = read_u32(&mut cur)? as usize;
        let mut recs = BTreeMap::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut cur, &mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut cur, &mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::format("model bundle", "record name is not UTF-8"))?;
            let t = hst::read(&mut cur)?;
            if recs.insert(name.clone(), t).is_some() {
                return Err(Error::format("model bundle", format!("duplicate record `{name}`")));
            }
        }
        if (cur.position() as usize) != bytes.len() {
            return Err(Error::format("model bundle", "trailing bytes"));
        }

        let nbank: usize = header.parse_key("bank.len")?.ok_or_else(|| missing("bank.len"))?;
        let mut kernels = Vec::with_capacity(nbank);
        for i in 0..nbank {
            let name = header.require(&format!("bank.{i}.name"))?;
            let mode = FilterMode::parse(header.require(&format!("bank.{i}.mode"))?)?;
            let base = recs.remove(&format!("bank.{i}")).ok_or_else(|| {
                Error::format("model bundle", format!("missing kernel record bank.{i}"))
            })?;
            kernels.push(FilterKernel::new(name, mode, base)?);
        }
        let bank = FilterBank::new(kernels)?;

        let mut meta = KeyValues::new();
        for (k, v) in header.iter() {
            if let Some(m) = k.strip_prefix("meta.") {
                meta.set(m, v);
            }
        }
        Ok((ModelWeights::from_params(config, bank, recs)?, meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &KeyValues) -> Result<()> {
        write_atomic(path, &self.encode(meta)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, KeyValues)> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(Error::at_path(path))?;
        Self::decode(&bytes)
    }

    /// SHA-256 over architecture, bank and parameters (metadata excluded).
    pub fn hash(&self) -> String {
        let bytes = self.encode(&KeyValues::new()).expect("encodable weights");
        hex_digest(&bytes)
    }
}

/// SHA-256 of the bank alone.
pub fn bank_hash(bank: &FilterBank) -> String {
    let mut h = Sha256::new();
    for k in bank.kernels() {
        h.update(k.name().as_bytes());
        h.update(k.mode().as_str().as_bytes());
        h.update(hst::encode(k.base()));
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read_exact(cur: &mut Cursor<&[u8]>, buf: &mut [u8]) -> Result<()> {
    cur.read_exact(buf)
        .map_err(|_| Error::format("model bundle", "truncated"))
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(cur, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter_bank::default_bank;

    fn tiny() -> ModelConfig {
        ModelConfig {
            channels: 4,
            scale: 4,
            rb1_blocks: 1,
            rb2_blocks: 2,
        }
    }

    #[test]
    fn param_layout() {
        let w = ModelWeights::init(tiny(), default_bank(), 0).unwrap();
        assert_eq!(w.get("fuse.weight").unwrap().shape(), &[4, 8, 3, 3]);
        assert_eq!(w.get("up.1.weight").unwrap().shape(), &[16, 4, 3, 3]);
        assert_eq!(w.get("out.bias").unwrap().shape(), &[3]);
        assert!(w.get("up.2.weight").is_err());
        assert_eq!(w.sca().value, crate::hsa::identity_kernel(4));
    }

    #[test]
    fn bundle_round_trip_and_hash() {
        let w = ModelWeights::init(tiny(), default_bank(), 3).unwrap();
        let mut meta = KeyValues::new();
        meta.set("iteration", 7);
        let bytes = w.encode(&meta).unwrap();
        let (back, m) = ModelWeights::decode(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(m.get("iteration"), Some("7"));
        assert_eq!(back.hash(), w.hash());
        let other = ModelWeights::init(tiny(), default_bank(), 4).unwrap();
        assert_ne!(other.hash(), w.hash());
    }

    #[test]
    fn bundle_errors() {
        let w = ModelWeights::init(tiny(), default_bank(), 3).unwrap();
        let bytes = w.encode(&KeyValues::new()).unwrap();
        assert!(ModelWeights::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelWeights::decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(ModelWeights::decode(&extra).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.rb2_blocks = 0;
        assert!(c.validate().is_err());
        c = tiny();
        c.scale = 3;
        assert!(c.validate().is_err());
        let mut params = ModelWeights::init(tiny(), default_bank(), 0).unwrap().params;
        params.insert("fuse.weight".into(), Tensor::zeros([4, 4, 3, 3]));
        assert!(ModelWeights::from_params(tiny(), default_bank(), params).is_err());
    }
}
