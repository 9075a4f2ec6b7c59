//! Native forward pass.
//!
//! A [`Session`] owns every buffer one forward pass needs. Warm-up
//! allocates them, repacks the convolution weights into GEMM panels,
//! selects a lowering/kernel tactic per convolution by timing each
//! candidate on dummy data, and runs one dummy pass. After that,
//! [`Session::forward`] performs no heap allocation.
//!
//! Activations are stored channels-last (height, width, channel). Inputs
//! to each convolution carry a one-element zero border so that same
//! padding needs no bounds checks; borders are never written.

use std::sync::Arc;
use std::time::Instant;

use half::f16;
use half::slice::HalfFloatSliceExt;

use super::gemm::{gemm_acc, Kernel, Lowering, PackedB};
use super::{ModelConfig, Prediction, WeightBundle, KERNEL, MAX_CLASSES};
use crate::error::{Error, Result};
use crate::features::{FeatureRecord, IQ_COMPONENTS, N_SCALARS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tactic {
    pub lowering: Lowering,
    pub kernel: Kernel,
}

impl Tactic {
    pub fn candidates() -> Vec<Tactic> {
        let kernels = Kernel::available();
        Lowering::ALL
            .iter()
            .flat_map(|&lowering| {
                kernels
                    .iter()
                    .map(move |&kernel| Tactic { lowering, kernel })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LayerTactic {
    pub layer: &'static str,
    pub tactic: Tactic,
    pub best_us: f64,
}

#[derive(Debug, Clone)]
pub struct WarmupReport {
    pub total_us: f64,
    pub workspace_bytes: usize,
    pub candidates_timed: usize,
    pub layers: Vec<LayerTactic>,
}

struct ConvStage {
    name: &'static str,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    packed: PackedB,
    bias: Vec<f32>,
    tactic: Tactic,
}

struct Plan {
    stages: [ConvStage; 4],
    input: Vec<f32>,
    act1a: Vec<f32>,
    act1b: Vec<f32>,
    pool1: Vec<f32>,
    act2a: Vec<f32>,
    act2b: Vec<f32>,
    dense_in: Vec<f32>,
    im2col: Vec<f32>,
}

fn alloc(n: usize) -> Result<Vec<f32>> {
    let mut v = Vec::new();
    v.try_reserve_exact(n)
        .map_err(|_| Error::Alloc(n * std::mem::size_of::<f32>()))?;
    v.resize(n, 0.0);
    Ok(v)
}

impl ConvStage {
    fn new(
        name: &'static str,
        bundle: &WeightBundle,
        cin: usize,
        cout: usize,
        h: usize,
        w: usize,
    ) -> Result<Self> {
        let weight = &bundle
            .tensor(&format!("{name}.weight"))
            .ok_or_else(|| Error::Config(format!("missing {name}.weight")))?
            .data;
        let bias = bundle
            .tensor(&format!("{name}.bias"))
            .ok_or_else(|| Error::Config(format!("missing {name}.bias")))?
            .data
            .clone();
        // GEMM row index is (kh, kw, c); stored layout is (o, c, kh, kw)
        let packed = PackedB::pack(KERNEL * KERNEL * cin, cout, |row, o| {
            let (tap, c) = (row / cin, row % cin);
            let (kh, kw) = (tap / KERNEL, tap % KERNEL);
            weight[((o * cin + c) * KERNEL + kh) * KERNEL + kw]
        });
        Ok(Self {
            name,
            cin,
            cout,
            h,
            w,
            packed,
            bias,
            tactic: Tactic {
                lowering: Lowering::KernelRows,
                kernel: Kernel::Portable,
            },
        })
    }

    fn im2col_len(&self) -> usize {
        self.w * KERNEL * KERNEL * self.cin
    }

    /// `input` is padded (h+2, w+2, cin). `output` is (h, w, cout), padded
    /// to (h+2, w+2, cout) when `out_padded`.
    fn run(
        &self,
        tactic: Tactic,
        input: &[f32],
        output: &mut [f32],
        out_padded: bool,
        im2col: &mut [f32],
    ) -> Result<()> {
        let (cin, cout, w) = (self.cin, self.cout, self.w);
        let wp = w + 2;
        let mut finite = true;
        for row in 0..self.h {
            let off = if out_padded {
                ((row + 1) * wp + 1) * cout
            } else {
                row * w * cout
            };
            let c = &mut output[off..off + w * cout];
            for px in c.chunks_exact_mut(cout) {
                px.copy_from_slice(&self.bias);
            }
            match tactic.lowering {
                Lowering::KernelRows => {
                    for kh in 0..KERNEL {
                        let a = &input[(row + kh) * wp * cin..];
                        gemm_acc(
                            tactic.kernel,
                            w,
                            3 * cin,
                            a,
                            cin,
                            &self.packed,
                            kh * 3 * cin,
                            c,
                            cout,
                        );
                    }
                }
                Lowering::Taps => {
                    for tap in 0..KERNEL * KERNEL {
                        let (kh, kw) = (tap / KERNEL, tap % KERNEL);
                        let a = &input[((row + kh) * wp + kw) * cin..];
                        gemm_acc(
                            tactic.kernel,
                            w,
                            cin,
                            a,
                            cin,
                            &self.packed,
                            tap * cin,
                            c,
                            cout,
                        );
                    }
                }
                Lowering::Im2colRow => {
                    let k = KERNEL * KERNEL * cin;
                    for x in 0..w {
                        for kh in 0..KERNEL {
                            let src = ((row + kh) * wp + x) * cin;
                            im2col[x * k + kh * 3 * cin..x * k + (kh + 1) * 3 * cin]
                                .copy_from_slice(&input[src..src + 3 * cin]);
                        }
                    }
                    gemm_acc(
                        tactic.kernel,
                        w,
                        k,
                        &im2col[..w * k],
                        k,
                        &self.packed,
                        0,
                        c,
                        cout,
                    );
                }
            }
            for v in c.iter_mut() {
                finite &= v.is_finite();
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        if finite {
            Ok(())
        } else {
            Err(Error::NonFiniteActivation(self.name))
        }
    }
}

/// 2x2 max-pool with floor semantics. `input` is (h, w, c) unpadded.
fn max_pool(input: &[f32], h: usize, w: usize, c: usize, output: &mut [f32], out_padded: bool) {
    let (ho, wo) = (h / 2, w / 2);
    let pad = usize::from(out_padded);
    let row_len = (wo + 2 * pad) * c;
    for i in 0..ho {
        let r0 = &input[(2 * i) * w * c..(2 * i + 1) * w * c];
        let r1 = &input[(2 * i + 1) * w * c..(2 * i + 2) * w * c];
        let out_row =
            &mut output[(i + pad) * row_len + pad * c..(i + pad) * row_len + (wo + pad) * c];
        for (j, o) in out_row.chunks_exact_mut(c).enumerate() {
            let (a, b) = (
                &r0[2 * j * c..(2 * j + 2) * c],
                &r1[2 * j * c..(2 * j + 2) * c],
            );
            for ch in 0..c {
                *o.get_mut(ch).unwrap() = a[ch].max(a[c + ch]).max(b[ch]).max(b[c + ch]);
            }
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 16];
    let ca = a.chunks_exact(16);
    let cb = b.chunks_exact(16);
    let tail: f32 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..16 {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().sum::<f32>() + tail
}

impl Plan {
    fn build(bundle: &WeightBundle) -> Result<Self> {
        let cfg = &bundle.config;
        let (h, w) = (cfg.input.symbols, cfg.input.subcarriers);
        let ((h1, w1), _) = cfg.pooled();
        let (a, b) = (cfg.alpha, cfg.beta);
        let stages = [
            ConvStage::new("conv1a", bundle, IQ_COMPONENTS, a, h, w)?,
            ConvStage::new("conv1b", bundle, a, a, h, w)?,
            ConvStage::new("conv2a", bundle, a, b, h1, w1)?,
            ConvStage::new("conv2b", bundle, b, b, h1, w1)?,
        ];
        let im2col_len = stages.iter().map(ConvStage::im2col_len).max().unwrap_or(0);
        Ok(Self {
            input: alloc((h + 2) * (w + 2) * IQ_COMPONENTS)?,
            act1a: alloc((h + 2) * (w + 2) * a)?,
            act1b: alloc(h * w * a)?,
            pool1: alloc((h1 + 2) * (w1 + 2) * a)?,
            act2a: alloc((h1 + 2) * (w1 + 2) * b)?,
            act2b: alloc(h1 * w1 * b)?,
            dense_in: alloc(cfg.dense_in())?,
            im2col: alloc(im2col_len)?,
            stages,
        })
    }

    fn workspace_bytes(&self) -> usize {
        [
            &self.input,
            &self.act1a,
            &self.act1b,
            &self.pool1,
            &self.act2a,
            &self.act2b,
            &self.dense_in,
            &self.im2col,
        ]
        .iter()
        .map(|v| v.len() * 4)
        .sum()
    }

    fn stage_input(&mut self, cfg: &ModelConfig, iq: &[f16]) {
        let (h, w) = (cfg.input.symbols, cfg.input.subcarriers);
        let row = w * IQ_COMPONENTS;
        for s in 0..h {
            let dst = ((s + 1) * (w + 2) + 1) * IQ_COMPONENTS;
            iq[s * row..(s + 1) * row].convert_to_f32_slice(&mut self.input[dst..dst + row]);
        }
    }

    /// Runs convolution stage `i` (reading its predecessor's buffer) with
    /// `tactic`, or the stage's chosen tactic.
    fn conv(&mut self, i: usize, tactic: Option<Tactic>) -> Result<()> {
        let Plan {
            stages,
            input,
            act1a,
            act1b,
            pool1,
            act2a,
            act2b,
            im2col,
            ..
        } = self;
        let st = &stages[i];
        let t = tactic.unwrap_or(st.tactic);
        match i {
            0 => st.run(t, input, act1a, true, im2col),
            1 => st.run(t, act1a, act1b, false, im2col),
            2 => st.run(t, pool1, act2a, true, im2col),
            _ => st.run(t, act2a, act2b, false, im2col),
        }
    }

    /// Pool following convolution stage `i` (1 or 3).
    fn pool(&mut self, i: usize) {
        let st = &self.stages[i];
        let (h, w, c) = (st.h, st.w, st.cout);
        if i == 1 {
            max_pool(&self.act1b, h, w, c, &mut self.pool1, true);
        } else {
            let flat = (h / 2) * (w / 2) * c;
            max_pool(&self.act2b, h, w, c, &mut self.dense_in[..flat], false);
        }
    }

    fn run(
        &mut self,
        bundle: &WeightBundle,
        iq: &[f16],
        scalars: &[f32; N_SCALARS],
        logits: &mut [f32],
    ) -> Result<()> {
        let cfg = &bundle.config;
        self.stage_input(cfg, iq);
        self.conv(0, None)?;
        self.conv(1, None)?;
        self.pool(1);
        self.conv(2, None)?;
        self.conv(3, None)?;
        self.pool(3);
        self.dense(bundle, scalars, logits)
    }

    fn dense(
        &mut self,
        bundle: &WeightBundle,
        scalars: &[f32; N_SCALARS],
        logits: &mut [f32],
    ) -> Result<()> {
        let cfg = &bundle.config;
        let flat = cfg.flatten_len();
        for (j, d) in self.dense_in[flat..].iter_mut().enumerate() {
            *d = (scalars[j] - bundle.scalar_mean[j]) / bundle.scalar_std[j];
        }
        let w = &bundle.tensors[8].data;
        let b = &bundle.tensors[9].data;
        let n = cfg.dense_in();
        for (o, l) in logits.iter_mut().enumerate() {
            *l = b[o] + dot(&w[o * n..(o + 1) * n], &self.dense_in);
        }
        if logits.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteActivation("dense"))
        }
    }
}

fn dummy_iq(len: usize) -> Vec<f16> {
    let mut state = 0x2545_F491_4F6C_DD1Du64;
    (0..len)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            f16::from_f32(((state >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0)
        })
        .collect()
}

/// Inference session over one weight bundle. Confined to one thread at a
/// time; independent sessions share nothing mutable.
pub struct Session {
    bundle: Arc<WeightBundle>,
    plan: Option<Box<Plan>>,
    logits: [f32; MAX_CLASSES],
    report: Option<WarmupReport>,
}

impl Session {
    pub fn new(bundle: Arc<WeightBundle>) -> Result<Self> {
        bundle.validate()?;
        Ok(Self {
            bundle,
            plan: None,
            logits: [0.0; MAX_CLASSES],
            report: None,
        })
    }

    /// Like [`Session::new`], but first checks the bundle against the
    /// engine configuration the caller expects.
    pub fn with_config(config: &ModelConfig, bundle: Arc<WeightBundle>) -> Result<Self> {
        bundle.check_compatible(config)?;
        Self::new(bundle)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.bundle.config
    }

    pub fn bundle(&self) -> &Arc<WeightBundle> {
        &self.bundle
    }

    pub fn is_warm(&self) -> bool {
        self.plan.is_some()
    }

    pub fn warmup_report(&self) -> Option<&WarmupReport> {
        self.report.as_ref()
    }

    /// Allocates buffers, packs weights, selects a tactic per convolution
    /// and runs one dummy pass.
    pub fn warmup(&mut self) -> Result<&WarmupReport> {
        self.warmup_inner(None)
    }

    /// Warm-up with a fixed tactic for every convolution (no selection).
    pub fn warmup_with(&mut self, tactic: Tactic) -> Result<&WarmupReport> {
        self.warmup_inner(Some(tactic))
    }

    fn warmup_inner(&mut self, fixed: Option<Tactic>) -> Result<&WarmupReport> {
        let start = Instant::now();
        let bundle = Arc::clone(&self.bundle);
        let mut plan = Box::new(Plan::build(&bundle)?);
        let dummy = dummy_iq(bundle.config.input.iq_len());
        let scalars = [0f32; N_SCALARS];
        plan.stage_input(&bundle.config, &dummy);

        let candidates = match fixed {
            Some(t) => vec![t],
            None => Tactic::candidates(),
        };
        let mut layers = Vec::with_capacity(4);
        let mut timed = 0;
        for i in 0..4 {
            let mut best: Option<(Tactic, f64)> = None;
            for &t in &candidates {
                let t0 = Instant::now();
                plan.conv(i, Some(t))?;
                let us = t0.elapsed().as_secs_f64() * 1e6;
                timed += 1;
                if best.is_none_or(|(_, b)| us < b) {
                    best = Some((t, us));
                }
            }
            let (tactic, best_us) = best.expect("at least one candidate");
            plan.stages[i].tactic = tactic;
            layers.push(LayerTactic {
                layer: plan.stages[i].name,
                tactic,
                best_us,
            });
            if i == 1 || i == 3 {
                plan.pool(i);
            }
        }
        plan.run(
            &bundle,
            &dummy,
            &scalars,
            &mut self.logits[..bundle.config.n_classes],
        )?;

        let report = WarmupReport {
            total_us: start.elapsed().as_secs_f64() * 1e6,
            workspace_bytes: plan.workspace_bytes(),
            candidates_timed: timed,
            layers,
        };
        self.plan = Some(plan);
        Ok(self.report.insert(report))
    }

    /// Classifies one production-shaped record.
    pub fn forward(&mut self, record: &FeatureRecord) -> Result<Prediction> {
        self.forward_raw(&record.iq, &record.scalars.as_array())
    }

    /// Forward pass over raw inputs: `iq` in (symbol, subcarrier, re/im)
    /// order matching the model input shape, scalars un-normalized.
    pub fn forward_raw(&mut self, iq: &[f16], scalars: &[f32; N_SCALARS]) -> Result<Prediction> {
        let cfg = self.bundle.config;
        if iq.len() != cfg.input.iq_len() {
            return Err(Error::ShapeMismatch {
                tensor: "input".into(),
                expected: vec![cfg.input.symbols, cfg.input.subcarriers, IQ_COMPONENTS],
                found: vec![iq.len()],
            });
        }
        let start = Instant::now();
        let cold = self.plan.is_none();
        if cold {
            self.warmup()?;
        }
        let plan = self.plan.as_mut().expect("warmed");
        plan.run(&self.bundle, iq, scalars, &mut self.logits[..cfg.n_classes])?;
        let latency_us = start.elapsed().as_secs_f64() * 1e6;
        Ok(Prediction::from_logits(
            &self.logits[..cfg.n_classes],
            latency_us,
            cold,
        ))
    }

    /// Logits of the most recent forward pass.
    pub fn logits(&self) -> &[f32] {
        &self.logits[..self.bundle.config.n_classes]
    }
}
