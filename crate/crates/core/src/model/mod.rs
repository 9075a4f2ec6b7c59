//! The `{[alpha, beta], gamma}` CNN family: two conv blocks (two 3x3
//! same-padded ReLU convolutions and a 2x2 max-pool each) over the IQ
//! tensor, flatten, concatenation with the normalized scalar KPMs, and a
//! softmax dense layer.

mod bundle;
mod engine;
mod gemm;

pub use bundle::{Provenance, Tensor, WeightBundle, BUNDLE_MAGIC, BUNDLE_VERSION};
pub use engine::{Session, Tactic, WarmupReport};
pub use gemm::{Kernel, Lowering};

use std::fmt;

use crate::error::{Error, Result};
use crate::features::{IQ_COMPONENTS, N_SCALARS};
use crate::grid::{SUBCARRIERS, SYMBOLS_PER_SLOT};

pub const SUPPORTED_WIDTHS: [(usize, usize); 2] = [(64, 128), (128, 256)];
pub const SUPPORTED_BATCH_SIZES: [u32; 4] = [16, 32, 64, 128];
pub const MAX_CLASSES: usize = 6;
pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub symbols: usize,
    pub subcarriers: usize,
}

impl InputShape {
    pub const PRODUCTION: Self = Self {
        symbols: SYMBOLS_PER_SLOT,
        subcarriers: SUBCARRIERS,
    };

    pub fn iq_len(&self) -> usize {
        self.symbols * self.subcarriers * IQ_COMPONENTS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub alpha: usize,
    pub beta: usize,
    /// Training batch size; metadata for the engine.
    pub gamma: u32,
    pub n_classes: usize,
    pub input: InputShape,
}

impl ModelConfig {
    /// Production model over the full 14 x 3276 slot.
    pub fn new(alpha: usize, beta: usize, gamma: u32, n_classes: usize) -> Result<Self> {
        let c = Self {
            alpha,
            beta,
            gamma,
            n_classes,
            input: InputShape::PRODUCTION,
        };
        c.validate()?;
        Ok(c)
    }

    /// Reduced-width test model over `subcarriers` subcarriers. Any
    /// positive widths are accepted.
    pub fn reduced(
        alpha: usize,
        beta: usize,
        subcarriers: usize,
        n_classes: usize,
    ) -> Result<Self> {
        let c = Self {
            alpha,
            beta,
            gamma: 32,
            n_classes,
            input: InputShape {
                symbols: SYMBOLS_PER_SLOT,
                subcarriers,
            },
        };
        c.validate()?;
        Ok(c)
    }

    pub fn is_production(&self) -> bool {
        self.input == InputShape::PRODUCTION
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes != 2 && self.n_classes != 6 {
            return Err(Error::Config(format!(
                "n_classes must be 2 or 6, got {}",
                self.n_classes
            )));
        }
        if self.is_production() {
            if !SUPPORTED_WIDTHS.contains(&(self.alpha, self.beta)) {
                return Err(Error::Config(format!(
                    "unsupported filter widths ({}, {})",
                    self.alpha, self.beta
                )));
            }
            if !SUPPORTED_BATCH_SIZES.contains(&self.gamma) {
                return Err(Error::Config(format!(
                    "unsupported batch size {}",
                    self.gamma
                )));
            }
        } else if self.alpha == 0 || self.beta == 0 {
            return Err(Error::Config("filter widths must be positive".into()));
        }
        if self.input.symbols < 4 || self.input.subcarriers < 4 {
            return Err(Error::Config(format!(
                "input {}x{} too small for two pooling stages",
                self.input.symbols, self.input.subcarriers
            )));
        }
        Ok(())
    }

    /// `{[alpha,beta],gamma}`
    pub fn name(&self) -> String {
        format!("{{[{},{}],{}}}", self.alpha, self.beta, self.gamma)
    }

    pub(crate) fn pooled(&self) -> ((usize, usize), (usize, usize)) {
        let (h, w) = (self.input.symbols, self.input.subcarriers);
        ((h / 2, w / 2), (h / 4, w / 4))
    }

    pub fn flatten_len(&self) -> usize {
        let (_, (h, w)) = self.pooled();
        h * w * self.beta
    }

    pub fn dense_in(&self) -> usize {
        self.flatten_len() + N_SCALARS
    }

    /// Name and dimensions of every stored tensor, in file order.
    /// Convolutions are (out_ch, in_ch, kh, kw); dense is (out, in).
    pub fn tensor_specs(&self) -> Vec<(&'static str, Vec<usize>)> {
        let k = KERNEL;
        let (a, b) = (self.alpha, self.beta);
        vec![
            ("conv1a.weight", vec![a, IQ_COMPONENTS, k, k]),
            ("conv1a.bias", vec![a]),
            ("conv1b.weight", vec![a, a, k, k]),
            ("conv1b.bias", vec![a]),
            ("conv2a.weight", vec![b, a, k, k]),
            ("conv2a.bias", vec![b]),
            ("conv2b.weight", vec![b, b, k, k]),
            ("conv2b.bias", vec![b]),
            ("dense.weight", vec![self.n_classes, self.dense_in()]),
            ("dense.bias", vec![self.n_classes]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    MaxPool,
    Flatten,
    Concat,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: &'static str,
    pub kind: LayerKind,
    /// (height, width, channels); flatten/concat/dense report (1, 1, len).
    pub input: (usize, usize, usize),
    pub output: (usize, usize, usize),
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeReport {
    pub config: ModelConfig,
    pub layers: Vec<LayerShape>,
    pub flatten: usize,
    pub dense_in: usize,
    pub dense_params: usize,
    pub total_params: usize,
}

/// Layer-by-layer shapes and parameter counts.
pub fn derive_shapes(config: &ModelConfig) -> Result<ShapeReport> {
    config.validate()?;
    let (h, w) = (config.input.symbols, config.input.subcarriers);
    let ((h1, w1), (h2, w2)) = config.pooled();
    let (a, b) = (config.alpha, config.beta);
    let conv = |name, hh, ww, cin, cout| LayerShape {
        name,
        kind: LayerKind::Conv,
        input: (hh, ww, cin),
        output: (hh, ww, cout),
        params: cout * cin * KERNEL * KERNEL + cout,
    };
    let pool = |name, hh, ww, c| LayerShape {
        name,
        kind: LayerKind::MaxPool,
        input: (hh, ww, c),
        output: (hh / 2, ww / 2, c),
        params: 0,
    };
    let flatten = h2 * w2 * b;
    let dense_in = flatten + N_SCALARS;
    let dense_params = dense_in * config.n_classes + config.n_classes;
    let layers = vec![
        conv("conv1a", h, w, IQ_COMPONENTS, a),
        conv("conv1b", h, w, a, a),
        pool("pool1", h, w, a),
        conv("conv2a", h1, w1, a, b),
        conv("conv2b", h1, w1, b, b),
        pool("pool2", h1, w1, b),
        LayerShape {
            name: "flatten",
            kind: LayerKind::Flatten,
            input: (h2, w2, b),
            output: (1, 1, flatten),
            params: 0,
        },
        LayerShape {
            name: "concat_scalars",
            kind: LayerKind::Concat,
            input: (1, 1, flatten),
            output: (1, 1, dense_in),
            params: 0,
        },
        LayerShape {
            name: "dense_softmax",
            kind: LayerKind::Dense,
            input: (1, 1, dense_in),
            output: (1, 1, config.n_classes),
            params: dense_params,
        },
    ];
    let total_params = layers.iter().map(|l| l.params).sum();
    Ok(ShapeReport {
        config: *config,
        layers,
        flatten,
        dense_in,
        dense_params,
        total_params,
    })
}

impl fmt::Display for ShapeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "model {} classes={} input={}x{}x{}",
            self.config.name(),
            self.config.n_classes,
            self.config.input.symbols,
            self.config.input.subcarriers,
            IQ_COMPONENTS
        )?;
        writeln!(
            f,
            "{:<16}{:>22}{:>22}{:>14}",
            "layer", "input", "output", "params"
        )?;
        for l in &self.layers {
            let dims = |d: (usize, usize, usize)| format!("{}x{}x{}", d.0, d.1, d.2);
            writeln!(
                f,
                "{:<16}{:>22}{:>22}{:>14}",
                l.name,
                dims(l.input),
                dims(l.output),
                l.params
            )?;
        }
        writeln!(f, "flatten        {}", self.flatten)?;
        writeln!(f, "dense input    {}", self.dense_in)?;
        writeln!(f, "dense params   {}", self.dense_params)?;
        write!(f, "total params   {}", self.total_params)
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    probs: [f32; MAX_CLASSES],
    n_classes: usize,
    pub argmax: usize,
    /// Wall-clock time of the call's numeric work, including any lazy
    /// setup it triggered.
    pub latency_us: f64,
    /// The call ran on a session that had not been warmed up.
    pub cold: bool,
}

impl Prediction {
    /// Softmax over 1 to [`MAX_CLASSES`] logits.
    ///
    /// # Panics
    ///
    /// If `logits` is empty or longer than [`MAX_CLASSES`].
    pub fn from_logits(logits: &[f32], latency_us: f64, cold: bool) -> Self {
        let n = logits.len();
        assert!((1..=MAX_CLASSES).contains(&n), "{n} logits");
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut probs = [0f32; MAX_CLASSES];
        let mut sum = 0f64;
        for (p, &l) in probs.iter_mut().zip(logits) {
            let e = ((l - max) as f64).exp();
            *p = e as f32;
            sum += e;
        }
        for p in &mut probs[..n] {
            *p = (*p as f64 / sum) as f32;
        }
        Self {
            probs,
            n_classes: n,
            argmax: argmax(&probs[..n]),
            latency_us,
            cold,
        }
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs[..self.n_classes]
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
