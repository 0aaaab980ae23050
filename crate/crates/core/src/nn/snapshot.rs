//! Versioned binary parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "NBSPCKPT" | u32 version | u32 entry count
//! per entry: u16 len + network name | u32 layer | u16 len + tensor name
//!            | u32 ndim | u64 dims... | f64 values...
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a round trip is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use super::dense::{DenseNet, Layer, OutputHead};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NBSPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub network: String,
    pub layer: u32,
    pub tensor: String,
    pub shape: Vec<u64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, network: &str, layer: u32, tensor: &str, shape: Vec<u64>, values: Vec<f64>) {
        self.entries.push(TensorEntry {
            network: network.to_owned(),
            layer,
            tensor: tensor.to_owned(),
            shape,
            values,
        });
    }

    pub fn get(&self, network: &str, layer: u32, tensor: &str) -> Option<&TensorEntry> {
        self.entries
            .iter()
            .find(|e| e.network == network && e.layer == layer && e.tensor == tensor)
    }

    /// Adds every layer of `net` under `name` as `weight`/`bias` tensors.
    pub fn add_net(&mut self, name: &str, net: &DenseNet) {
        for (l, layer) in net.layers().iter().enumerate() {
            self.push(
                name,
                l as u32,
                "weight",
                vec![layer.out_dim() as u64, layer.in_dim() as u64],
                layer.weight.clone(),
            );
            self.push(name, l as u32, "bias", vec![layer.out_dim() as u64], layer.bias.clone());
        }
    }

    /// Rebuilds the network stored under `name`.
    pub fn net(&self, name: &str, head: OutputHead) -> Result<DenseNet> {
        let mut layers = Vec::new();
        for l in 0u32.. {
            let Some(w) = self.get(name, l, "weight") else { break };
            let b = self
                .get(name, l, "bias")
                .ok_or_else(|| Error::format("checkpoint", format!("{name} layer {l} has no bias")))?;
            if w.shape.len() != 2 {
                return Err(Error::format("checkpoint", format!("{name} layer {l} weight is not 2-d")));
            }
            layers.push(Layer::new(
                w.shape[1] as usize,
                w.shape[0] as usize,
                w.values.clone(),
                b.values.clone(),
            )?);
        }
        if layers.is_empty() {
            return Err(Error::format("checkpoint", format!("no network named {name:?}")));
        }
        DenseNet::from_layers(layers, head)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            write_str(&mut w, &e.network)?;
            w.write_all(&e.layer.to_le_bytes())?;
            write_str(&mut w, &e.tensor)?;
            w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
            for d in &e.shape {
                w.write_all(&d.to_le_bytes())?;
            }
            for v in &e.values {
                w.write_all(&v.to_bits().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let n = read_u32(&mut r)?;
        let mut entries = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let network = read_str(&mut r)?;
            let layer = read_u32(&mut r)?;
            let tensor = read_str(&mut r)?;
            let ndim = read_u32(&mut r)?;
            let shape = (0..ndim).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
            let count: u64 = shape.iter().product();
            let values = (0..count)
                .map(|_| read_u64(&mut r).map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            entries.push(TensorEntry {
                network,
                layer,
                tensor,
                shape,
                values,
            });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::InvalidInput("checkpoint name too long".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::format("checkpoint", "name is not utf-8"))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn network_round_trip_is_bit_exact() {
        let mut r = rng::stream(1, "ckpt", 0);
        let net = DenseNet::new(&[6, 16, 16, 4], OutputHead::GaussianPolicy, &mut r).unwrap();
        let mut ck = Checkpoint::new();
        ck.add_net("actor", &net);
        ck.push("temperature", 0, "log_alpha", vec![1], vec![-1.609_437_912_434_100_3]);
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.net("actor", OutputHead::GaussianPolicy).unwrap(), net);
    }

    #[test]
    fn rejects_foreign_and_future_files() {
        assert!(Checkpoint::read_from(&b"NOTACKPT\x01\0\0\0\0\0\0\0"[..]).is_err());
        let mut bytes = CHECKPOINT_MAGIC.to_vec();
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        assert!(Checkpoint::read_from(bytes.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(bits in proptest::collection::vec(any::<u64>(), 1..64)) {
            let values: Vec<f64> = bits.iter().map(|b| f64::from_bits(*b)).collect();
            let mut ck = Checkpoint::new();
            ck.push("q1", 3, "weight", vec![values.len() as u64], values);
            let mut bytes = Vec::new();
            ck.write_to(&mut bytes).unwrap();
            let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
            let got: Vec<u64> = back.entries[0].values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, bits);
        }
    }
}
