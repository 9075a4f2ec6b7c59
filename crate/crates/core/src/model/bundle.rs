//! `.ifw` weight bundles.
//!
//! All fields little-endian:
//!
//! ```text
//! magic "IFW1" | version u32 | alpha u32 | beta u32 | gamma u32
//! n_scalars u32 | n_classes u32 | input_symbols u32 | input_subcarriers u32
//! dropout f32 x 3 | l2 f32                       (trainer provenance)
//! scalar mean f32 x n_scalars | scalar std f32 x n_scalars
//! tensor_count u32
//! per tensor: rank u32 | dims u32 x rank | data f32 x prod(dims)
//! ```
//!
//! Tensors follow [`ModelConfig::tensor_specs`]. The dense input vector is
//! the pooled activation flattened in (height, width, channel) order
//! followed by the normalized scalars.

use std::fs;
use std::io::{self, Read};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{InputShape, ModelConfig};
use crate::error::{Error, Result};
use crate::features::N_SCALARS;

pub const BUNDLE_MAGIC: [u8; 4] = *b"IFW1";
pub const BUNDLE_VERSION: u32 = 1;

/// Training hyper-parameters recorded by the exporter. Zero when unknown.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Provenance {
    pub dropout: [f32; 3],
    pub l2: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub config: ModelConfig,
    pub provenance: Provenance,
    pub scalar_mean: [f32; N_SCALARS],
    pub scalar_std: [f32; N_SCALARS],
    pub tensors: Vec<Tensor>,
}

impl WeightBundle {
    /// All-zero weights and biases with identity normalization.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .tensor_specs()
            .into_iter()
            .map(|(name, dims)| Tensor {
                name,
                data: vec![0.0; dims.iter().product()],
                dims,
            })
            .collect();
        Ok(Self {
            config: *config,
            provenance: Provenance::default(),
            scalar_mean: [0.0; N_SCALARS],
            scalar_std: [1.0; N_SCALARS],
            tensors,
        })
    }

    /// He-normal weights, small random biases.
    pub fn random(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut b = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for pair in b.tensors.chunks_mut(2) {
            let fan_in: usize = pair[0].dims[1..].iter().product();
            let w = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("finite std");
            pair[0]
                .data
                .iter_mut()
                .for_each(|v| *v = w.sample(&mut rng));
            let bias = Normal::new(0.0f32, 0.05).expect("finite std");
            pair[1]
                .data
                .iter_mut()
                .for_each(|v| *v = bias.sample(&mut rng));
        }
        Ok(b)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for (index, &value) in self.scalar_std.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::BadNormalization { index, value });
            }
        }
        self.check_compatible(&self.config)?;
        for t in &self.tensors {
            if t.data.len() != t.dims.iter().product::<usize>() {
                return Err(Error::ShapeMismatch {
                    tensor: t.name.to_string(),
                    expected: t.dims.clone(),
                    found: vec![t.data.len()],
                });
            }
        }
        Ok(())
    }

    /// Checks every tensor against the shapes `config` implies and names
    /// the first one that differs.
    pub fn check_compatible(&self, config: &ModelConfig) -> Result<()> {
        let specs = config.tensor_specs();
        for (i, (name, dims)) in specs.iter().enumerate() {
            match self.tensors.get(i) {
                Some(t) if t.dims == *dims => {}
                Some(t) => {
                    return Err(Error::ShapeMismatch {
                        tensor: name.to_string(),
                        expected: dims.clone(),
                        found: t.dims.clone(),
                    })
                }
                None => {
                    return Err(Error::ShapeMismatch {
                        tensor: name.to_string(),
                        expected: dims.clone(),
                        found: vec![],
                    })
                }
            }
        }
        if self.tensors.len() != specs.len() {
            return Err(Error::Config(format!(
                "bundle holds {} tensors, expected {}",
                self.tensors.len(),
                specs.len()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(
            64 + self
                .tensors
                .iter()
                .map(|t| 4 + 4 * t.dims.len() + 4 * t.data.len())
                .sum::<usize>(),
        );
        out.extend_from_slice(&BUNDLE_MAGIC);
        for v in [
            BUNDLE_VERSION,
            c.alpha as u32,
            c.beta as u32,
            c.gamma,
            N_SCALARS as u32,
            c.n_classes as u32,
            c.input.symbols as u32,
            c.input.subcarriers as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let p = &self.provenance;
        for v in p
            .dropout
            .iter()
            .chain([&p.l2])
            .chain(&self.scalar_mean)
            .chain(&self.scalar_std)
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if magic != BUNDLE_MAGIC {
            return Err(Error::BadMagic {
                expected: BUNDLE_MAGIC,
                found: magic,
            });
        }
        let version = read_u32(&mut r, "version")?;
        if version != BUNDLE_VERSION {
            return Err(Error::BadVersion(version));
        }
        let mut h = [0u32; 7];
        for v in &mut h {
            *v = read_u32(&mut r, "header")?;
        }
        let [alpha, beta, gamma, n_scalars, n_classes, symbols, subcarriers] = h;
        if n_scalars as usize != N_SCALARS {
            return Err(Error::Config(format!(
                "bundle has {n_scalars} scalars, engine expects {N_SCALARS}"
            )));
        }
        let config = ModelConfig {
            alpha: alpha as usize,
            beta: beta as usize,
            gamma,
            n_classes: n_classes as usize,
            input: InputShape {
                symbols: symbols as usize,
                subcarriers: subcarriers as usize,
            },
        };
        config.validate()?;
        let mut provenance = Provenance::default();
        for v in &mut provenance.dropout {
            *v = read_f32(&mut r, "dropout")?;
        }
        provenance.l2 = read_f32(&mut r, "l2")?;
        let mut scalar_mean = [0f32; N_SCALARS];
        let mut scalar_std = [0f32; N_SCALARS];
        for v in &mut scalar_mean {
            *v = read_f32(&mut r, "scalar mean")?;
        }
        for v in &mut scalar_std {
            *v = read_f32(&mut r, "scalar std")?;
        }
        for (index, &value) in scalar_std.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::BadNormalization { index, value });
            }
        }

        let specs = config.tensor_specs();
        let count = read_u32(&mut r, "tensor count")? as usize;
        if count != specs.len() {
            return Err(Error::Config(format!(
                "bundle declares {count} tensors, expected {}",
                specs.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, expected) in specs {
            let rank = read_u32(&mut r, name)? as usize;
            if rank > 8 {
                return Err(Error::ShapeMismatch {
                    tensor: name.to_string(),
                    expected,
                    found: vec![rank],
                });
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u32(&mut r, name)? as usize);
            }
            if dims != expected {
                return Err(Error::ShapeMismatch {
                    tensor: name.to_string(),
                    expected,
                    found: dims,
                });
            }
            let n: usize = dims.iter().product();
            if r.len() < n * 4 {
                return Err(Error::Truncated(format!(
                    "{name}: need {} bytes, have {}",
                    n * 4,
                    r.len()
                )));
            }
            let (raw, rest) = r.split_at(n * 4);
            r = rest;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor { name, dims, data });
        }
        if !r.is_empty() {
            return Err(Error::Config(format!(
                "{} trailing bytes after tensors",
                r.len()
            )));
        }
        Ok(Self {
            config,
            provenance,
            scalar_mean,
            scalar_std,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    /// Loads a bundle and checks it against the shapes of `config`.
    pub fn load_for(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Self> {
        let b = Self::load(path)?;
        b.check_compatible(config)?;
        Ok(b)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Truncated(what.to_string()),
        _ => Error::Io(e),
    })
}

fn read_u32(r: &mut &[u8], what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut &[u8], what: &str) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(f32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig::reduced(4, 8, 32, 2).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut b = WeightBundle::random(&small(), 3).unwrap();
        b.scalar_mean = [1.0, -2.0, 3.5, 4.0, 0.0, 0.25, 1.0];
        b.provenance = Provenance {
            dropout: [0.25, 0.25, 0.5],
            l2: 1e-4,
        };
        let bytes = b.to_bytes();
        let back = WeightBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn zero_std_rejected() {
        let mut b = WeightBundle::zeros(&small()).unwrap();
        b.scalar_std[3] = 0.0;
        assert!(matches!(
            WeightBundle::from_bytes(&b.to_bytes()),
            Err(Error::BadNormalization { index: 3, .. })
        ));
        assert!(b.validate().is_err());
    }

    #[test]
    fn distinct_errors() {
        let bytes = WeightBundle::zeros(&small()).unwrap().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            WeightBundle::from_bytes(&bad),
            Err(Error::BadMagic { .. })
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            WeightBundle::from_bytes(&bad),
            Err(Error::BadVersion(9))
        ));
        assert!(matches!(
            WeightBundle::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(
            WeightBundle::from_bytes(&bytes[..10]),
            Err(Error::Truncated(_))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(WeightBundle::from_bytes(&long).is_err());
    }

    #[test]
    fn mismatched_engine_names_first_tensor() {
        let big = WeightBundle::zeros(&ModelConfig::reduced(8, 16, 32, 2).unwrap()).unwrap();
        match big.check_compatible(&small()) {
            Err(Error::ShapeMismatch {
                tensor,
                expected,
                found,
            }) => {
                assert_eq!(tensor, "conv1a.weight");
                assert_eq!(expected, vec![4, 2, 3, 3]);
                assert_eq!(found, vec![8, 2, 3, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrupted_dims_named() {
        let b = WeightBundle::zeros(&small()).unwrap();
        let mut bytes = b.to_bytes();
        // first tensor's first dim sits right after the header and rank
        let header = 4 + 8 * 4 + 4 * 4 + 2 * 7 * 4 + 4;
        bytes[header + 4] = 5;
        match WeightBundle::from_bytes(&bytes) {
            Err(Error::ShapeMismatch { tensor, .. }) => assert_eq!(tensor, "conv1a.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
