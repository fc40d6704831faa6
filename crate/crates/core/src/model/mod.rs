//! Trainable wide-band equivariant networks.
//!
//! Both models back-project each frequency separately onto the polar grid,
//! interpolate to Cartesian pixels, stack the frequencies as channels and pass
//! the stack through a shared convolutional filter. The back-projection is
//! evaluated row by row on shifted data, which makes it exactly equivariant
//! under rotations by multiples of `2*pi/n_sc` whatever the weights are.

pub mod tape;
mod train;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::born::{InterpMap, Kernel};
use crate::butterfly::{butterfly_factorize, BlockLayout, BlockSpec, ButterflyLayout};
use crate::error::{Error, Result};
use crate::grid::{omega, FrequencySet, Grids, DEFAULT_RECEIVER_RADIUS};
use crate::helmholtz::WideBandDataset;
use crate::rng::{glorot_bound, Rng};

pub use tape::{Op, Tape, Var};
pub use train::{
    adam_lr, batch_gradient, evaluate, loss_mse, metric_rel_rmse, sample_gradient, train, AdamState, Checkpoint, EpochRecord, TrainOutcome,
    TrainConfig, TrainData,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Uncompressed,
    Compressed,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Uncompressed => "uncompressed",
            ModelKind::Compressed => "compressed",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncompressed" => Ok(ModelKind::Uncompressed),
            "compressed" => Ok(ModelKind::Compressed),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    Glorot,
    /// Back-projection weights from the analytic kernel; conv layers Glorot.
    KernelInit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvSpec {
    pub kernel: usize,
    /// Hidden channel counts; the final layer always has one output channel.
    pub hidden: Vec<usize>,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            kernel: 5,
            hidden: vec![8, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ButterflySpec {
    pub levels: usize,
    pub rank: usize,
    pub n_sr: usize,
}

impl Default for ButterflySpec {
    fn default() -> Self {
        ButterflySpec {
            levels: 2,
            rank: 3,
            n_sr: 2,
        }
    }
}

/// Everything that fixes the parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n_sc: usize,
    pub n_eta: usize,
    pub n_rho: usize,
    #[serde(default = "default_radius")]
    pub receiver_radius: f64,
    pub freqs: Vec<f64>,
    #[serde(default)]
    pub conv: ConvSpec,
    #[serde(default)]
    pub butterfly: ButterflySpec,
}

fn default_radius() -> f64 {
    DEFAULT_RECEIVER_RADIUS
}

impl ModelSpec {
    pub fn new(kind: ModelKind, grids: &Grids, freqs: &FrequencySet) -> Self {
        ModelSpec {
            kind,
            n_sc: grids.n_sc,
            n_eta: grids.n_eta,
            n_rho: grids.n_rho,
            receiver_radius: grids.receiver_radius,
            freqs: freqs.freqs().to_vec(),
            conv: ConvSpec::default(),
            butterfly: ButterflySpec::default(),
        }
    }

    pub fn grids(&self) -> Result<Grids> {
        Grids::new(self.n_sc, self.n_eta, self.n_rho, self.receiver_radius)
    }

    pub fn validate(&self) -> Result<()> {
        self.grids()?;
        FrequencySet::new(self.freqs.clone())?;
        if self.conv.kernel % 2 == 0 || self.conv.hidden.contains(&0) {
            return Err(Error::invalid("conv kernel must be odd and channel counts positive"));
        }
        if self.kind == ModelKind::Compressed {
            self.butterfly_layout()?;
        }
        Ok(())
    }

    /// Channels per frequency entering the conv stack.
    pub fn channels_per_freq(&self) -> usize {
        match self.kind {
            ModelKind::Uncompressed => 1,
            ModelKind::Compressed => 2,
        }
    }

    pub fn conv_channels(&self) -> Vec<usize> {
        let mut ch = vec![self.channels_per_freq() * self.freqs.len()];
        ch.extend(&self.conv.hidden);
        ch.push(1);
        ch
    }

    pub fn butterfly_layout(&self) -> Result<ButterflyLayout> {
        let b = &self.butterfly;
        let parts = 1usize.checked_shl(b.levels as u32).unwrap_or(0);
        if b.levels < 2 || parts == 0 || self.n_sc % parts != 0 || self.n_rho % parts != 0 {
            return Err(Error::invalid(format!(
                "n_sc = {} and n_rho = {} are not multiples of 2^L with even L = {} >= 2",
                self.n_sc, self.n_rho, b.levels
            )));
        }
        let mid = (1usize << (b.levels / 2)) * (self.n_sc / parts).min(self.n_rho / parts);
        if b.rank == 0 || b.rank > mid {
            return Err(Error::invalid(format!("butterfly rank {} outside 1..={mid}", b.rank)));
        }
        ButterflyLayout::new(b.levels, self.n_sc / parts, self.n_rho / parts, b.rank)
    }

    /// Closed-form back-projection parameter count for one frequency.
    pub fn backprojection_count_per_freq(&self) -> usize {
        match self.kind {
            ModelKind::Uncompressed => 2 * self.n_sc * self.n_rho + 4 * self.n_sc,
            ModelKind::Compressed => {
                let b = &self.butterfly;
                let n = 1usize << b.levels;
                let (s1, s2) = (self.n_sc / n, self.n_rho / n);
                let r = b.rank;
                2 * (s1 + s2) * r * n + 8 * b.levels * r * r * n + 2 * b.n_sr * r * r * n
            }
        }
    }

    /// Closed-form conv-stack count: `sum k^2 c_in c_out + c_out`.
    pub fn conv_count(&self) -> usize {
        let k = self.conv.kernel;
        self.conv_channels()
            .windows(2)
            .map(|w| k * k * w[0] * w[1] + w[1])
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.freqs.len() * self.backprojection_count_per_freq() + self.conv_count()
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub names: Vec<String>,
    pub tensors: Vec<ArrayD<f64>>,
}

fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize, shape: &[usize]) -> ArrayD<f64> {
    let b = glorot_bound(fan_in.max(1), fan_out.max(1));
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.uniform(-b, b))
}

fn split_blocks(blocks: &[Array2<Complex64>], scale_cols: Option<&[Vec<f64>]>) -> (ArrayD<f64>, ArrayD<f64>) {
    let (nb, r, c) = (blocks.len(), blocks[0].nrows(), blocks[0].ncols());
    let get = |b: usize, i: usize, k: usize| {
        let s = scale_cols.map_or(1.0, |sc| sc[b][k]);
        blocks[b][[i, k]] * s
    };
    (
        ArrayD::from_shape_fn(IxDyn(&[nb, r, c]), |d| get(d[0], d[1], d[2]).re),
        ArrayD::from_shape_fn(IxDyn(&[nb, r, c]), |d| get(d[0], d[1], d[2]).im),
    )
}

impl ModelParams {
    /// Initialises every tensor; conv biases start at zero.
    pub fn init(spec: &ModelSpec, init: Init, seed: u64) -> Result<Self> {
        spec.validate()?;
        let grids = spec.grids()?;
        let mut rng = Rng::new(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: String, t: ArrayD<f64>| {
            names.push(name);
            tensors.push(t);
        };
        for (k, &f) in spec.freqs.iter().enumerate() {
            let om = omega(f);
            match spec.kind {
                ModelKind::Uncompressed => {
                    let (c, s) = match init {
                        Init::KernelInit => {
                            let kern = Kernel::new(om, &grids);
                            (kern.c().into_dyn(), kern.s().into_dyn())
                        }
                        Init::Glorot => (
                            glorot(&mut rng, spec.n_sc, spec.n_rho, &[spec.n_sc, spec.n_rho]),
                            glorot(&mut rng, spec.n_sc, spec.n_rho, &[spec.n_sc, spec.n_rho]),
                        ),
                    };
                    push(format!("f{k}.C"), c);
                    push(format!("f{k}.S"), s);
                    for t in 1..=4 {
                        let o = match init {
                            Init::KernelInit => ArrayD::from_elem(IxDyn(&[1, spec.n_sc]), if t == 4 { -1.0 } else { 1.0 }),
                            Init::Glorot => glorot(&mut rng, spec.n_sc, 1, &[1, spec.n_sc]),
                        };
                        push(format!("f{k}.O{t}"), o);
                    }
                }
                ModelKind::Compressed => {
                    let layout = spec.butterfly_layout()?;
                    let (levels, r) = (layout.levels, layout.rank);
                    let half = levels / 2;
                    let nb = 1usize << levels;
                    match init {
                        Init::KernelInit => {
                            let kern = Kernel::new(om, &grids);
                            let f = butterfly_factorize(kern.values.view(), levels, r)?;
                            let s_of = |g: usize| -> Vec<f64> { (0..r).map(|c| f.m.blocks[g][[c, c]].re).collect() };
                            let (ur, ui) = split_blocks(&f.u.blocks, None);
                            push(format!("f{k}.U.re"), ur);
                            push(format!("f{k}.U.im"), ui);
                            for l in half..levels {
                                let blocks = &f.g[l - half].blocks;
                                let scales: Option<Vec<Vec<f64>>> = (l == half).then(|| {
                                    layout.g[0]
                                        .blocks
                                        .iter()
                                        .map(|spec| {
                                            let g0 = spec.col / r;
                                            let mut v = s_of(g0);
                                            v.extend(s_of(g0 + 1));
                                            v
                                        })
                                        .collect()
                                });
                                let (gr, gi) = split_blocks(blocks, scales.as_deref());
                                for side in ["left", "right"] {
                                    push(format!("f{k}.G{l}.{side}.re"), gr.clone());
                                    push(format!("f{k}.G{l}.{side}.im"), gi.clone());
                                }
                            }
                            for n in 0..spec.butterfly.n_sr {
                                push(format!("f{k}.SR{n}.w1"), glorot(&mut rng, r, r, &[nb, r, r]));
                                push(format!("f{k}.SR{n}.w2"), ArrayD::zeros(IxDyn(&[nb, r, r])));
                            }
                            for l in half..levels {
                                let (hr, hi) = split_blocks(&f.h[l - half].blocks, None);
                                for side in ["left", "right"] {
                                    push(format!("f{k}.H{l}.{side}.re"), hr.clone());
                                    push(format!("f{k}.H{l}.{side}.im"), hi.clone());
                                }
                            }
                            let (vr, vi) = split_blocks(&f.v.blocks, None);
                            push(format!("f{k}.V.re"), vr);
                            push(format!("f{k}.V.im"), vi);
                        }
                        Init::Glorot => {
                            let (s1, s2) = (layout.s_rows, layout.s_cols);
                            for part in ["re", "im"] {
                                push(format!("f{k}.U.{part}"), glorot(&mut rng, s1, r, &[nb, s1, r]));
                            }
                            for l in half..levels {
                                for side in ["left", "right"] {
                                    for part in ["re", "im"] {
                                        push(format!("f{k}.G{l}.{side}.{part}"), glorot(&mut rng, r, 2 * r, &[nb, r, 2 * r]));
                                    }
                                }
                            }
                            for n in 0..spec.butterfly.n_sr {
                                push(format!("f{k}.SR{n}.w1"), glorot(&mut rng, r, r, &[nb, r, r]));
                                push(format!("f{k}.SR{n}.w2"), glorot(&mut rng, r, r, &[nb, r, r]));
                            }
                            for l in half..levels {
                                for side in ["left", "right"] {
                                    for part in ["re", "im"] {
                                        push(format!("f{k}.H{l}.{side}.{part}"), glorot(&mut rng, r, 2 * r, &[nb, r, 2 * r]));
                                    }
                                }
                            }
                            for part in ["re", "im"] {
                                push(format!("f{k}.V.{part}"), glorot(&mut rng, s2, r, &[nb, s2, r]));
                            }
                        }
                    }
                }
            }
        }
        let ch = spec.conv_channels();
        let kk = spec.conv.kernel;
        for (d, w) in ch.windows(2).enumerate() {
            push(
                format!("conv{d}.w"),
                glorot(&mut rng, w[0] * kk * kk, w[1] * kk * kk, &[w[1], w[0], kk, kk]),
            );
            push(format!("conv{d}.b"), ArrayD::zeros(IxDyn(&[w[1]])));
        }
        Ok(ModelParams {
            spec: spec.clone(),
            names,
            tensors,
        })
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Reported count of the back-projection weights for frequency `k`.
    pub fn backprojection_count(&self, k: usize) -> usize {
        let prefix = format!("f{k}.");
        self.names
            .iter()
            .zip(&self.tensors)
            .filter(|(n, _)| n.starts_with(&prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn conv_count(&self) -> usize {
        self.names
            .iter()
            .zip(&self.tensors)
            .filter(|(n, _)| n.starts_with("conv"))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn check_finite(&self) -> Result<()> {
        for (n, t) in self.names.iter().zip(&self.tensors) {
            if let Some(i) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("parameter {n} has a non-finite entry at {i}")));
            }
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<&[usize]> {
        self.tensors.iter().map(|t| t.shape()).collect()
    }
}

/// Shape-dependent constants shared by every forward pass of one model.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub grids: Grids,
    interp: Arc<InterpMap>,
    butterfly: Option<ButterflyContext>,
}

#[derive(Debug, Clone)]
struct ButterflyContext {
    layout: ButterflyLayout,
    u: Arc<BlockLayout>,
    g: Vec<Arc<BlockLayout>>,
    h: Vec<Arc<BlockLayout>>,
    v: Arc<BlockLayout>,
    resnet: Arc<BlockLayout>,
    /// The switch permutation as a dense 0/1 matrix.
    switch: Array2<f64>,
}

impl ModelContext {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let grids = spec.grids()?;
        let butterfly = match spec.kind {
            ModelKind::Uncompressed => None,
            ModelKind::Compressed => {
                let layout = spec.butterfly_layout()?;
                let r = layout.rank;
                let nb = 1usize << layout.levels;
                let mut switch = Array2::zeros((layout.inner_dim(), layout.inner_dim()));
                for b in &layout.m.blocks {
                    for c in 0..r {
                        switch[[b.row + c, b.col + c]] = 1.0;
                    }
                }
                let resnet = BlockLayout {
                    rows: nb * r,
                    cols: nb * r,
                    blocks: (0..nb)
                        .map(|i| BlockSpec {
                            row: i * r,
                            col: i * r,
                            nrows: r,
                            ncols: r,
                        })
                        .collect(),
                };
                Some(ButterflyContext {
                    u: Arc::new(layout.u.clone()),
                    g: layout.g.iter().cloned().map(Arc::new).collect(),
                    h: layout.h.iter().cloned().map(Arc::new).collect(),
                    v: Arc::new(layout.v.clone()),
                    resnet: Arc::new(resnet),
                    switch,
                    layout,
                })
            }
        };
        Ok(ModelContext {
            interp: Arc::new(InterpMap::new(&grids)),
            grids,
            butterfly,
        })
    }
}

/// Vars produced by one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[1, n_eta, n_eta]` network output.
    pub output: Var,
    /// Polar back-projections in channel order, before interpolation.
    pub polar: Vec<Var>,
}

#[derive(Clone, Copy)]
struct CVar {
    re: Var,
    im: Var,
}

fn cmatmul(t: &mut Tape, a: CVar, b: CVar) -> Result<CVar> {
    let rr = t.matmul(a.re, b.re)?;
    let ii = t.matmul(a.im, b.im)?;
    let ri = t.matmul(a.re, b.im)?;
    let ir = t.matmul(a.im, b.re)?;
    Ok(CVar {
        re: t.sub(rr, ii)?,
        im: t.add(ri, ir)?,
    })
}

/// Conjugate transpose.
fn cadjoint(t: &mut Tape, a: CVar) -> Result<CVar> {
    let re = t.transpose(a.re)?;
    let imt = t.transpose(a.im)?;
    Ok(CVar {
        re,
        im: t.scale(imt, -1.0)?,
    })
}

fn check_inputs(spec: &ModelSpec, inputs: &[Array2<Complex64>]) -> Result<()> {
    if inputs.len() != spec.freqs.len() {
        return Err(Error::shape(format!(
            "{} far fields for a model with {} frequencies",
            inputs.len(),
            spec.freqs.len()
        )));
    }
    for lam in inputs {
        if lam.dim() != (spec.n_sc, spec.n_sc) {
            return Err(Error::shape(format!(
                "far field is {:?}, model expects ({n}, {n})",
                lam.dim(),
                n = spec.n_sc
            )));
        }
    }
    Ok(())
}

/// Records the full network for one sample: one far field per model frequency.
pub fn record_forward(tape: &mut Tape, params: &ModelParams, ctx: &ModelContext, inputs: &[Array2<Complex64>]) -> Result<Forward> {
    let spec = &params.spec;
    check_inputs(spec, inputs)?;
    let vars: Vec<Var> = params.tensors.iter().enumerate().map(|(i, p)| tape.param(i, p.clone())).collect();
    let p = |name: &str| -> Result<Var> {
        params
            .index_of(name)
            .map(|i| vars[i])
            .ok_or_else(|| Error::shape(format!("missing parameter {name}")))
    };
    let w = ctx.grids.angular_weight();
    let mut polar = Vec::new();
    for (k, lam) in inputs.iter().enumerate() {
        let lr = tape.input2(lam.mapv(|z| z.re));
        let li = tape.input2(lam.mapv(|z| z.im));
        match spec.kind {
            ModelKind::Uncompressed => {
                let c = p(&format!("f{k}.C"))?;
                let s = p(&format!("f{k}.S"))?;
                let o: Vec<Var> = (1..=4).map(|t| p(&format!("f{k}.O{t}"))).collect::<Result<_>>()?;
                let mut rows = Vec::with_capacity(spec.n_sc);
                for j in 0..spec.n_sc {
                    let ljr = tape.shift_gather(lr, j)?;
                    let lji = tape.shift_gather(li, j)?;
                    let mut terms = Vec::with_capacity(4);
                    for (t, (a, x, b)) in [(c, ljr, c), (s, ljr, s), (c, lji, s), (s, lji, c)].into_iter().enumerate() {
                        let xb = tape.matmul(x, b)?;
                        let h = tape.mul(a, xb)?;
                        terms.push(tape.matmul(o[t], h)?);
                    }
                    let a = tape.add(terms[0], terms[1])?;
                    let b = tape.add(terms[2], terms[3])?;
                    rows.push(tape.add(a, b)?);
                }
                let alpha = tape.concat(rows, 0)?;
                polar.push(tape.scale(alpha, w)?);
            }
            ModelKind::Compressed => {
                let bc = ctx.butterfly.as_ref().expect("compressed context");
                let (re, im) = compressed_backprojection(tape, &p, bc, k, lr, li, spec)?;
                polar.push(tape.scale(re, w)?);
                polar.push(tape.scale(im, w)?);
            }
        }
    }
    let cart: Vec<Var> = polar
        .iter()
        .map(|&a| tape.interp(a, ctx.interp.clone()))
        .collect::<Result<_>>()?;
    let mut x = tape.stack(cart)?;
    let layers = spec.conv_channels().len() - 1;
    for d in 0..layers {
        x = tape.conv2d(x, p(&format!("conv{d}.w"))?, p(&format!("conv{d}.b"))?)?;
        if d + 1 < layers {
            x = tape.relu(x)?;
        }
    }
    Ok(Forward { output: x, polar })
}

fn compressed_backprojection<P>(
    tape: &mut Tape,
    p: &P,
    bc: &ButterflyContext,
    k: usize,
    lr: Var,
    li: Var,
    spec: &ModelSpec,
) -> Result<(Var, Var)>
where
    P: Fn(&str) -> Result<Var>,
{
    let half = bc.layout.levels / 2;
    let levels = bc.layout.levels;
    let cparam = |name: String, layout: &Arc<BlockLayout>, tape: &mut Tape| -> Result<CVar> {
        let re = tape.assemble(p(&format!("{name}.re"))?, layout.clone())?;
        let im = tape.assemble(p(&format!("{name}.im"))?, layout.clone())?;
        Ok(CVar { re, im })
    };
    let u = cparam(format!("f{k}.U"), &bc.u, tape)?;
    let u_adj = cadjoint(tape, u)?;
    let mut g = Vec::new();
    for l in half..levels {
        let left = cparam(format!("f{k}.G{l}.left"), &bc.g[l - half], tape)?;
        let right = cparam(format!("f{k}.G{l}.right"), &bc.g[l - half], tape)?;
        g.push((cadjoint(tape, left)?, right));
    }
    let mut h = Vec::new();
    for l in half..levels {
        let left = cparam(format!("f{k}.H{l}.left"), &bc.h[l - half], tape)?;
        let right = cparam(format!("f{k}.H{l}.right"), &bc.h[l - half], tape)?;
        h.push((left, cadjoint(tape, right)?));
    }
    let v = cparam(format!("f{k}.V"), &bc.v, tape)?;
    let switch = tape.input2(bc.switch.clone());
    let switch_t = tape.input2(bc.switch.t().to_owned());
    let mut resnet = Vec::new();
    for n in 0..spec.butterfly.n_sr {
        let w1 = tape.assemble(p(&format!("f{k}.SR{n}.w1"))?, bc.resnet.clone())?;
        let w2 = tape.assemble(p(&format!("f{k}.SR{n}.w2"))?, bc.resnet.clone())?;
        resnet.push((w1, w2));
    }
    let mut rows_re = Vec::with_capacity(spec.n_sc);
    let mut rows_im = Vec::with_capacity(spec.n_sc);
    for j in 0..spec.n_sc {
        let mut x = CVar {
            re: tape.shift_gather(lr, j)?,
            im: tape.shift_gather(li, j)?,
        };
        let ux = cmatmul(tape, u_adj, x)?;
        x = cmatmul(tape, ux, u)?;
        for &(left_adj, right) in g.iter().rev() {
            let y = cmatmul(tape, left_adj, x)?;
            x = cmatmul(tape, y, right)?;
        }
        for part in [&mut x.re, &mut x.im] {
            let y = tape.matmul(switch_t, *part)?;
            *part = tape.matmul(y, switch)?;
            for &(w1, w2) in &resnet {
                let a = tape.matmul(w1, *part)?;
                let a = tape.relu(a)?;
                let a = tape.matmul(w2, a)?;
                *part = tape.add(*part, a)?;
            }
        }
        for &(left, right_adj) in &h {
            let y = cmatmul(tape, left, x)?;
            x = cmatmul(tape, y, right_adj)?;
        }
        // diag(V X V^*)
        let a = cmatmul(tape, v, x)?;
        let rr = tape.mul(a.re, v.re)?;
        let ii = tape.mul(a.im, v.im)?;
        let ir = tape.mul(a.im, v.re)?;
        let ri = tape.mul(a.re, v.im)?;
        let dre = tape.add(rr, ii)?;
        let dim = tape.sub(ir, ri)?;
        let dre = tape.transpose(dre)?;
        let dim = tape.transpose(dim)?;
        rows_re.push(tape.column_sum(dre)?);
        rows_im.push(tape.column_sum(dim)?);
    }
    Ok((tape.concat(rows_re, 0)?, tape.concat(rows_im, 0)?))
}

/// Network output for one sample.
pub fn predict(params: &ModelParams, ctx: &ModelContext, inputs: &[Array2<Complex64>]) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let f = record_forward(&mut tape, params, ctx, inputs)?;
    let out = tape.value(f.output);
    let n = params.spec.n_eta;
    Ok(out.to_shape((n, n)).map_err(|e| Error::shape(e.to_string()))?.to_owned())
}

/// Polar back-projection channels (before interpolation) for one sample.
pub fn backproject(params: &ModelParams, ctx: &ModelContext, inputs: &[Array2<Complex64>]) -> Result<Vec<Array2<f64>>> {
    let mut tape = Tape::new();
    let f = record_forward(&mut tape, params, ctx, inputs)?;
    Ok(f.polar.iter().map(|&v| tape.value2(v)).collect())
}

/// Far fields of sample `i` at the model's frequencies, in model order.
pub fn model_inputs(dataset: &WideBandDataset, i: usize, spec: &ModelSpec) -> Result<Vec<Array2<Complex64>>> {
    spec.freqs
        .iter()
        .map(|&f| {
            let k = dataset
                .freqs
                .index_of(f)
                .ok_or_else(|| Error::invalid(format!("frequency {f} is not in the dataset")))?;
            Ok(dataset.sample(i, k))
        })
        .collect()
}
