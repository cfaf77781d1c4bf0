//! Network architectures for both solvers.
//!
//! Deep BSDE networks map the (scaled) state to `kappa ~ Du`:
//!
//! | arch | structure |
//! |------|-----------|
//! | `a`  | one FC net per step, ReLU, batch norm on hidden layers |
//! | `b`  | one FC net per step, ELU |
//! | `c`  | `b` with `g(X)` as extra input and residual skips |
//! | `d`  | one FC net for all steps on `(t, X, Y, g(X))`, ELU |
//! | `e`  | `d` with the input re-injected into every later layer |
//! | `f`  | `d` with residual skips |
//! | `g`  | stacked LSTM on `(t, X)` |
//! | `h`  | `g` on `(t, X, Y, g(X))` |
//! | `i`  | one LSTM layer followed by FC ELU layers with residual skips |
//! | `j`  | `h` with residual skips |
//!
//! Fixed-point networks take `(t, x)` with tanh hidden layers: `A` has
//! separate `u` and `v` nets, `B` one net with a `1 + d` head, `C` a scalar
//! `u` whose gradient is taken by autodiff.

mod checkpoint;
mod scaler;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, BatchNormState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use scaler::InputScaler;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    FcDbsde,
    FcElu,
    FcResidual,
    FcMerged,
    FcMergedShortcut,
    FcMergedResidual,
    Lstm,
    AugmentedLstm,
    HybridLstm,
    ResidualLstm,
    FpSeparated,
    FpShared,
    FpAutoDiff,
}

impl Arch {
    pub const DBSDE: [Arch; 10] = [
        Arch::FcDbsde,
        Arch::FcElu,
        Arch::FcResidual,
        Arch::FcMerged,
        Arch::FcMergedShortcut,
        Arch::FcMergedResidual,
        Arch::Lstm,
        Arch::AugmentedLstm,
        Arch::HybridLstm,
        Arch::ResidualLstm,
    ];

    pub const FIXED_POINT: [Arch; 3] = [Arch::FpSeparated, Arch::FpShared, Arch::FpAutoDiff];

    pub fn letter(self) -> &'static str {
        match self {
            Arch::FcDbsde => "a",
            Arch::FcElu => "b",
            Arch::FcResidual => "c",
            Arch::FcMerged => "d",
            Arch::FcMergedShortcut => "e",
            Arch::FcMergedResidual => "f",
            Arch::Lstm => "g",
            Arch::AugmentedLstm => "h",
            Arch::HybridLstm => "i",
            Arch::ResidualLstm => "j",
            Arch::FpSeparated => "A",
            Arch::FpShared => "B",
            Arch::FpAutoDiff => "C",
        }
    }

    /// One network per time step.
    pub fn per_step(self) -> bool {
        matches!(self, Arch::FcDbsde | Arch::FcElu | Arch::FcResidual)
    }

    pub fn recurrent(self) -> bool {
        matches!(
            self,
            Arch::Lstm | Arch::AugmentedLstm | Arch::HybridLstm | Arch::ResidualLstm
        )
    }

    pub fn fixed_point(self) -> bool {
        matches!(self, Arch::FpSeparated | Arch::FpShared | Arch::FpAutoDiff)
    }

    pub fn uses_t(self) -> bool {
        !self.per_step() && !self.fixed_point()
    }

    pub fn uses_y(self) -> bool {
        matches!(
            self,
            Arch::FcMerged
                | Arch::FcMergedShortcut
                | Arch::FcMergedResidual
                | Arch::AugmentedLstm
                | Arch::HybridLstm
                | Arch::ResidualLstm
        )
    }

    pub fn uses_g(self) -> bool {
        self.uses_y() || self == Arch::FcResidual
    }

    /// Width of the network input for state dimension `d`.
    pub fn input_dim(self, d: usize) -> usize {
        if self.fixed_point() {
            return d + 1;
        }
        d + usize::from(self.uses_t()) + usize::from(self.uses_y()) + usize::from(self.uses_g())
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.letter())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "a" => Arch::FcDbsde,
            "b" => Arch::FcElu,
            "c" => Arch::FcResidual,
            "d" => Arch::FcMerged,
            "e" => Arch::FcMergedShortcut,
            "f" => Arch::FcMergedResidual,
            "g" => Arch::Lstm,
            "h" => Arch::AugmentedLstm,
            "i" => Arch::HybridLstm,
            "j" => Arch::ResidualLstm,
            "A" => Arch::FpSeparated,
            "B" => Arch::FpShared,
            "C" | "C-bis" | "C_bis" => Arch::FpAutoDiff,
            other => return Err(Error::Config(format!("unknown architecture `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub arch: Arch,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    /// Number of time steps `N`; per-step archs build `N - 1` networks.
    pub n_steps: usize,
}

impl NetworkSpec {
    pub fn new(arch: Arch, d: usize, h: usize, w: usize, n_steps: usize) -> Self {
        Self { arch, d, h, w, n_steps }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Act {
    Relu,
    Elu,
    Tanh,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Bias,
    /// Bias of the four LSTM gates, forget block set to 1.
    LstmBias { w: usize },
    Ones,
    Zeros,
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: usize,
    b: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Bn {
    gamma: usize,
    beta: usize,
    state: usize,
}

#[derive(Clone, Copy, Debug)]
struct LstmLayer {
    w: usize,
    b: usize,
    r: usize,
    width: usize,
}

#[derive(Clone, Debug)]
struct Mlp {
    hidden: Vec<Dense>,
    bn: Vec<Option<Bn>>,
    out: Option<Dense>,
    act: Act,
    residual: bool,
    shortcut: bool,
}

#[derive(Clone, Debug)]
struct LstmNet {
    lstm: Vec<LstmLayer>,
    fc: Vec<Dense>,
    out: Dense,
    residual: bool,
}

#[derive(Clone, Debug)]
enum Layout {
    PerStep { y0: usize, kappa0: usize, steps: Vec<Mlp> },
    Merged { y0: usize, net: Mlp },
    Recurrent { y0: usize, net: LstmNet },
    Separated { u: Mlp, v: Mlp },
    Shared { net: Mlp },
    AutoDiff { net: Mlp },
}

#[derive(Default)]
struct Builder {
    names: Vec<String>,
    shapes: Vec<[usize; 2]>,
    inits: Vec<Init>,
    bn: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: [usize; 2], init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize, bias: bool) -> Dense {
        let w = self.add(format!("{prefix}.w"), [fan_in, fan_out], Init::Xavier { fan_in, fan_out });
        let b = bias.then(|| self.add(format!("{prefix}.b"), [1, fan_out], Init::Bias));
        Dense { w, b }
    }

    fn bn(&mut self, prefix: &str, width: usize) -> Bn {
        let gamma = self.add(format!("{prefix}.gamma"), [1, width], Init::Ones);
        let beta = self.add(format!("{prefix}.beta"), [1, width], Init::Zeros);
        self.bn += 1;
        Bn {
            gamma,
            beta,
            state: self.bn - 1,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn mlp(
        &mut self,
        prefix: &str,
        input: usize,
        h: usize,
        w: usize,
        out: Option<usize>,
        act: Act,
        batchnorm: bool,
        residual: bool,
        shortcut: bool,
    ) -> Mlp {
        let mut hidden = Vec::with_capacity(h);
        let mut bn = Vec::with_capacity(h);
        for k in 0..h {
            let fan_in = if k == 0 {
                input
            } else if shortcut {
                w + input
            } else {
                w
            };
            hidden.push(self.dense(&format!("{prefix}.hidden{}", k + 1), fan_in, w, !batchnorm));
            bn.push(batchnorm.then(|| self.bn(&format!("{prefix}.bn{}", k + 1), w)));
        }
        let out = out.map(|o| {
            let fan_in = if shortcut { w + input } else { w };
            self.dense(&format!("{prefix}.out"), fan_in, o, true)
        });
        Mlp {
            hidden,
            bn,
            out,
            act,
            residual,
            shortcut,
        }
    }

    fn lstm(&mut self, prefix: &str, input: usize, w: usize) -> LstmLayer {
        let wi = self.add(
            format!("{prefix}.w"),
            [input, 4 * w],
            Init::Xavier {
                fan_in: input,
                fan_out: w,
            },
        );
        let b = self.add(format!("{prefix}.b"), [1, 4 * w], Init::LstmBias { w });
        let r = self.add(format!("{prefix}.r"), [1, 4 * w], Init::Xavier { fan_in: w, fan_out: w });
        LstmLayer { w: wi, b, r, width: w }
    }
}

fn layout(spec: &NetworkSpec) -> Result<(Layout, Builder)> {
    let NetworkSpec { arch, d, h, w, n_steps } = *spec;
    if h == 0 || w == 0 || d == 0 {
        return Err(Error::Unsupported(format!("arch {arch} needs h, w, d >= 1")));
    }
    let mut b = Builder::default();
    let input = arch.input_dim(d);
    let lay = match arch {
        Arch::FcDbsde | Arch::FcElu | Arch::FcResidual => {
            if n_steps == 0 {
                return Err(Error::Unsupported(format!("arch {arch} needs n_steps >= 1")));
            }
            let y0 = b.add("y0".into(), [1, 1], Init::Zeros);
            let kappa0 = b.add("kappa0".into(), [1, d], Init::Zeros);
            let steps = (1..n_steps)
                .map(|i| {
                    let p = format!("step{i}");
                    match arch {
                        Arch::FcDbsde => b.mlp(&p, input, h, w, Some(d), Act::Relu, true, false, false),
                        Arch::FcElu => b.mlp(&p, input, h, w, Some(d), Act::Elu, false, false, false),
                        _ => b.mlp(&p, input, h, w, Some(d), Act::Elu, false, true, false),
                    }
                })
                .collect();
            Layout::PerStep { y0, kappa0, steps }
        }
        Arch::FcMerged | Arch::FcMergedShortcut | Arch::FcMergedResidual => {
            let y0 = b.add("y0".into(), [1, 1], Init::Zeros);
            let net = b.mlp(
                "net",
                input,
                h,
                w,
                Some(d),
                Act::Elu,
                false,
                arch == Arch::FcMergedResidual,
                arch == Arch::FcMergedShortcut,
            );
            Layout::Merged { y0, net }
        }
        Arch::Lstm | Arch::AugmentedLstm | Arch::ResidualLstm => {
            let y0 = b.add("y0".into(), [1, 1], Init::Zeros);
            let lstm = (0..h)
                .map(|k| b.lstm(&format!("lstm{}", k + 1), if k == 0 { input } else { w }, w))
                .collect();
            let out = b.dense("out", w, d, true);
            Layout::Recurrent {
                y0,
                net: LstmNet {
                    lstm,
                    fc: Vec::new(),
                    out,
                    residual: arch == Arch::ResidualLstm,
                },
            }
        }
        Arch::HybridLstm => {
            let y0 = b.add("y0".into(), [1, 1], Init::Zeros);
            let lstm = vec![b.lstm("lstm1", input, w)];
            let fc = (1..h).map(|k| b.dense(&format!("hidden{}", k + 1), w, w, true)).collect();
            let out = b.dense("out", w, d, true);
            Layout::Recurrent {
                y0,
                net: LstmNet {
                    lstm,
                    fc,
                    out,
                    residual: true,
                },
            }
        }
        Arch::FpSeparated => Layout::Separated {
            u: b.mlp("u", input, h, w, Some(1), Act::Tanh, false, false, false),
            v: b.mlp("v", input, h, w, Some(d), Act::Tanh, false, false, false),
        },
        Arch::FpShared => Layout::Shared {
            net: b.mlp("net", input, h, w, Some(d + 1), Act::Tanh, false, false, false),
        },
        Arch::FpAutoDiff => Layout::AutoDiff {
            net: b.mlp("net", input, h, w, Some(1), Act::Tanh, false, false, false),
        },
    };
    Ok((lay, b))
}

/// Skip rule shared by FC and LSTM stacks: the anchor starts at the first
/// hidden output; layer `k >= 2` adds it every two layers and at the last
/// layer, after which the anchor moves to the new output.
fn adds_skip(k: usize, h: usize) -> bool {
    (k - 1) % 2 == 0 || k == h
}

/// LSTM hidden and cell states, one pair per layer, recorded on a tape.
#[derive(Clone, Debug)]
pub struct LstmState {
    pub layers: Vec<(Var, Var)>,
}

/// Inputs of a `kappa` evaluation, already scaled. Entries not used by the
/// architecture are ignored.
#[derive(Clone, Copy, Debug)]
pub struct KappaInputs {
    pub t: Option<Var>,
    pub x: Var,
    pub y: Option<Var>,
    pub g: Option<Var>,
}

/// Built network: architecture, parameter tensors and batch-norm statistics.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    layout: Layout,
    names: Vec<String>,
    pub params: Vec<Tensor>,
    pub bn: Vec<BatchNormState>,
}

impl Network {
    /// Xavier-uniform weights, `N(0, 0.1^2)` biases (LSTM forget gate 1),
    /// batch-norm `gamma = 1`, `beta = 0`, and zero `y0` / `kappa0`.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let (layout, b) = layout(&spec)?;
        let mut params = Vec::with_capacity(b.names.len());
        for (k, (shape, init)) in b.shapes.iter().zip(&b.inits).enumerate() {
            let mut r = rng::stream(seed, "init", k as u64);
            let n = shape[0] * shape[1];
            let data: Vec<f64> = match *init {
                Init::Xavier { fan_in, fan_out } => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n).map(|_| (2.0 * rng::uniform_open(&mut r) - 1.0) * bound).collect()
                }
                Init::Bias => (0..n).map(|_| 0.1 * rng::normal(&mut r)).collect(),
                Init::LstmBias { w } => (0..n)
                    .map(|i| {
                        let v = 0.1 * rng::normal(&mut r);
                        if (w..2 * w).contains(&i) {
                            1.0
                        } else {
                            v
                        }
                    })
                    .collect(),
                Init::Ones => vec![1.0; n],
                Init::Zeros => vec![0.0; n],
            };
            params.push(Tensor::new(shape[0], shape[1], data)?);
        }
        let bn = (0..b.bn).map(|_| BatchNormState::new(spec.w)).collect();
        Ok(Self {
            spec,
            layout,
            names: b.names,
            params,
            bn,
        })
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn y0_index(&self) -> Option<usize> {
        match self.layout {
            Layout::PerStep { y0, .. } | Layout::Merged { y0, .. } | Layout::Recurrent { y0, .. } => Some(y0),
            _ => None,
        }
    }

    pub fn kappa0_index(&self) -> Option<usize> {
        match self.layout {
            Layout::PerStep { kappa0, .. } => Some(kappa0),
            _ => None,
        }
    }

    /// Indices of the parameters owned by per-step network `step`
    /// (`1..n_steps`).
    pub fn step_param_indices(&self, step: usize) -> Vec<usize> {
        let prefix = format!("step{step}.");
        (0..self.names.len()).filter(|&k| self.names[k].starts_with(&prefix)).collect()
    }

    /// Records every parameter on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.parameter(p.clone())).collect()
    }

    /// Records every parameter as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.clone())).collect()
    }

    /// Zero LSTM state for a batch, or `None` for non-recurrent archs.
    pub fn initial_state(&self, tape: &mut Tape, batch: usize) -> Option<LstmState> {
        match &self.layout {
            Layout::Recurrent { net, .. } => Some(LstmState {
                layers: net
                    .lstm
                    .iter()
                    .map(|l| {
                        let h = tape.constant(Tensor::zeros(batch, l.width));
                        let c = tape.constant(Tensor::zeros(batch, l.width));
                        (h, c)
                    })
                    .collect(),
            }),
            _ => None,
        }
    }

    /// `kappa` at grid index `step`. Per-step archs return the free `kappa0`
    /// at step 0 and network `min(step, N - 1)` afterwards; recurrent archs
    /// advance `state`.
    pub fn kappa(
        &mut self,
        tape: &mut Tape,
        vars: &[Var],
        step: usize,
        inputs: KappaInputs,
        state: Option<&mut LstmState>,
        training: bool,
    ) -> Result<Var> {
        let arch = self.spec.arch;
        let batch = tape.shape(inputs.x)[0];
        let mut parts = Vec::with_capacity(4);
        if arch.uses_t() {
            parts.push(inputs.t.ok_or_else(|| Error::InvalidInput(format!("arch {arch} needs t")))?);
        }
        parts.push(inputs.x);
        if arch.uses_y() {
            parts.push(inputs.y.ok_or_else(|| Error::InvalidInput(format!("arch {arch} needs Y")))?);
        }
        if arch.uses_g() {
            parts.push(inputs.g.ok_or_else(|| Error::InvalidInput(format!("arch {arch} needs g(X)")))?);
        }
        let input = if parts.len() == 1 { parts[0] } else { tape.concat(&parts)? };
        match &self.layout {
            Layout::PerStep { kappa0, steps, .. } => {
                if step == 0 {
                    return Ok(tape.expand(vars[*kappa0], batch, self.spec.d)?);
                }
                let net = steps[(step - 1).min(steps.len().saturating_sub(1))].clone();
                if steps.is_empty() {
                    return Ok(tape.expand(vars[*kappa0], batch, self.spec.d)?);
                }
                mlp_forward(tape, vars, &mut self.bn, &net, input, training)
            }
            Layout::Merged { net, .. } => {
                let net = net.clone();
                mlp_forward(tape, vars, &mut self.bn, &net, input, training)
            }
            Layout::Recurrent { net, .. } => {
                let state = state.ok_or_else(|| Error::InvalidInput(format!("arch {arch} needs an LSTM state")))?;
                lstm_forward(tape, vars, net, input, state)
            }
            _ => Err(Error::Unsupported(format!("arch {arch} has no kappa output"))),
        }
    }

    /// `(u, v)` of a fixed-point network from its scaled `(t, x)` input;
    /// `v` is `None` for arch `C`.
    pub fn uv(&mut self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<(Var, Option<Var>)> {
        let d = self.spec.d;
        match &self.layout {
            Layout::Separated { u, v } => {
                let (u, v) = (u.clone(), v.clone());
                let uo = mlp_forward(tape, vars, &mut self.bn, &u, input, false)?;
                let vo = mlp_forward(tape, vars, &mut self.bn, &v, input, false)?;
                Ok((uo, Some(vo)))
            }
            Layout::Shared { net } => {
                let net = net.clone();
                let o = mlp_forward(tape, vars, &mut self.bn, &net, input, false)?;
                let u = tape.slice_cols(o, 0, 1)?;
                let v = tape.slice_cols(o, 1, d + 1)?;
                Ok((u, Some(v)))
            }
            Layout::AutoDiff { net } => {
                let net = net.clone();
                Ok((mlp_forward(tape, vars, &mut self.bn, &net, input, false)?, None))
            }
            _ => Err(Error::Unsupported(format!("arch {} has no (u, v) output", self.spec.arch))),
        }
    }
}

fn dense(tape: &mut Tape, vars: &[Var], l: &Dense, x: Var) -> Result<Var> {
    Ok(match l.b {
        Some(b) => tape.affine(x, vars[l.w], vars[b])?,
        None => tape.matmul(x, vars[l.w])?,
    })
}

fn activate(tape: &mut Tape, act: Act, x: Var) -> Result<Var> {
    Ok(match act {
        Act::Relu => tape.relu(x)?,
        Act::Elu => tape.elu(x)?,
        Act::Tanh => tape.tanh(x)?,
    })
}

fn mlp_forward(
    tape: &mut Tape,
    vars: &[Var],
    bn: &mut [BatchNormState],
    net: &Mlp,
    input: Var,
    training: bool,
) -> Result<Var> {
    let h = net.hidden.len();
    let mut z = input;
    let mut anchor = input;
    for (k, (layer, norm)) in net.hidden.iter().zip(&net.bn).enumerate() {
        let k = k + 1;
        let inp = if net.shortcut && k > 1 { tape.concat(&[z, input])? } else { z };
        let mut a = dense(tape, vars, layer, inp)?;
        if let Some(n) = norm {
            a = tape.batchnorm(a, vars[n.gamma], vars[n.beta], &mut bn[n.state], training)?;
        }
        z = activate(tape, net.act, a)?;
        if k == 1 {
            anchor = z;
        } else if net.residual && adds_skip(k, h) {
            z = tape.add(z, anchor)?;
            anchor = z;
        }
    }
    match &net.out {
        Some(out) => {
            let inp = if net.shortcut { tape.concat(&[z, input])? } else { z };
            dense(tape, vars, out, inp)
        }
        None => Ok(z),
    }
}

fn lstm_cell(tape: &mut Tape, vars: &[Var], l: &LstmLayer, x: Var, (h, c): (Var, Var)) -> Result<(Var, Var)> {
    let w = l.width;
    let pre = tape.affine(x, vars[l.w], vars[l.b])?;
    let h4 = tape.concat(&[h, h, h, h])?;
    let rec = tape.mul(h4, vars[l.r])?;
    let gates = tape.add(pre, rec)?;
    let i = tape.slice_cols(gates, 0, w)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice_cols(gates, w, 2 * w)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice_cols(gates, 2 * w, 3 * w)?;
    let g = tape.tanh(g)?;
    let o = tape.slice_cols(gates, 3 * w, 4 * w)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c2 = tape.add(fc, ig)?;
    let tc = tape.tanh(c2)?;
    let h2 = tape.mul(o, tc)?;
    Ok((h2, c2))
}

fn lstm_forward(tape: &mut Tape, vars: &[Var], net: &LstmNet, input: Var, state: &mut LstmState) -> Result<Var> {
    let total = net.lstm.len() + net.fc.len();
    let mut z = input;
    let mut anchor = input;
    for (k, layer) in net.lstm.iter().enumerate() {
        let (h, c) = lstm_cell(tape, vars, layer, z, state.layers[k])?;
        state.layers[k] = (h, c);
        z = h;
        if k == 0 {
            anchor = z;
        } else if net.residual && adds_skip(k + 1, total) {
            z = tape.add(z, anchor)?;
            anchor = z;
        }
    }
    for (j, layer) in net.fc.iter().enumerate() {
        let k = net.lstm.len() + j + 1;
        let a = dense(tape, vars, layer, z)?;
        z = tape.elu(a)?;
        if net.residual && adds_skip(k, total) {
            z = tape.add(z, anchor)?;
            anchor = z;
        }
    }
    dense(tape, vars, &net.out, z)
}

/// Mean over rows of `kappa`, used by tests and diagnostics.
pub fn row_mean(tape: &mut Tape, v: Var) -> Result<Var> {
    Ok(tape.reduce_mean(v, Axis::Rows)?)
}

#[cfg(test)]
mod tests;
