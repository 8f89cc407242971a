//! The Recurrent Inference Machine: `conv 5x5 -> ReLU -> cell -> conv 3x3 ->
//! ReLU -> cell -> conv 3x3`, unrolled for `t` steps with parameters shared
//! across steps.
//!
//! At each step the current estimate and the data log-likelihood gradient
//! enter as four real channels `(Re x, Im x, Re grad, Im grad)`; the last
//! convolution emits a two-channel complex update added to the estimate.

mod cell;
pub mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RimError};
use crate::mri::{self, CoilSet};
use crate::numcore::{ComplexImage, Eager, Graph, Tensor};
use crate::sampling::SamplingMask;

pub use cell::cell_step;

/// Kernel sides of the three convolution stages.
pub const KERNEL_SIZES: [usize; 3] = [5, 3, 3];
pub const INPUT_CHANNELS: usize = 4;
pub const OUTPUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Mgu,
    IndRnn,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Gru, CellKind::Mgu, CellKind::IndRnn];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Gru => "gru",
            CellKind::Mgu => "mgu",
            CellKind::IndRnn => "indrnn",
        }
    }

    /// Model family name: GRIM, MRIM or IRIM.
    pub fn model_name(self) -> &'static str {
        match self {
            CellKind::Gru => "GRIM",
            CellKind::Mgu => "MRIM",
            CellKind::IndRnn => "IRIM",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            CellKind::Gru => 0,
            CellKind::Mgu => 1,
            CellKind::IndRnn => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    /// Parameter tensors of one cell as `(name, shape)`.
    fn layout(self, f: usize) -> Vec<(&'static str, Vec<usize>)> {
        let dense = vec![f, f, 1, 1];
        let vec = vec![f];
        match self {
            CellKind::Gru => vec![
                ("w_z", dense.clone()),
                ("u_z", dense.clone()),
                ("b_z", vec.clone()),
                ("w_r", dense.clone()),
                ("u_r", dense.clone()),
                ("b_r", vec.clone()),
                ("w_h", dense.clone()),
                ("u_h", dense),
                ("b_h", vec),
            ],
            CellKind::Mgu => vec![
                ("w_f", dense.clone()),
                ("u_f", dense.clone()),
                ("b_f", vec.clone()),
                ("w_h", dense.clone()),
                ("u_h", dense),
                ("b_h", vec),
            ],
            CellKind::IndRnn => vec![("w", dense), ("u", vec.clone()), ("b", vec)],
        }
    }

    fn tensor_count(self) -> usize {
        match self {
            CellKind::Gru => 9,
            CellKind::Mgu => 6,
            CellKind::IndRnn => 3,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = RimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" | "grim" => Ok(CellKind::Gru),
            "mgu" | "mrim" => Ok(CellKind::Mgu),
            "indrnn" | "irim" => Ok(CellKind::IndRnn),
            other => Err(RimError::Config(format!("unknown cell kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RimConfig {
    pub features: usize,
    pub time_steps: usize,
    pub cell_kind: CellKind,
}

impl RimConfig {
    pub fn new(cell_kind: CellKind, features: usize, time_steps: usize) -> Result<Self> {
        let c = Self {
            features,
            time_steps,
            cell_kind,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features == 0 || self.time_steps == 0 {
            return Err(RimError::Config(format!(
                "features and time steps must be positive (F={}, t={})",
                self.features, self.time_steps
            )));
        }
        Ok(())
    }

    /// Every parameter tensor in declared order as `(name, shape)`.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let f = self.features;
        let [k1, k2, k3] = KERNEL_SIZES;
        let mut out = vec![
            ("conv1.weight".to_string(), vec![f, INPUT_CHANNELS, k1, k1]),
            ("conv1.bias".to_string(), vec![f]),
        ];
        for (n, s) in self.cell_kind.layout(f) {
            out.push((format!("cell1.{n}"), s));
        }
        out.push(("conv2.weight".into(), vec![f, f, k2, k2]));
        out.push(("conv2.bias".into(), vec![f]));
        for (n, s) in self.cell_kind.layout(f) {
            out.push((format!("cell2.{n}"), s));
        }
        out.push(("conv3.weight".into(), vec![OUTPUT_CHANNELS, f, k3, k3]));
        out.push(("conv3.bias".into(), vec![OUTPUT_CHANNELS]));
        out
    }
}

/// Closed-form number of learnable scalars.
pub fn param_count(config: &RimConfig) -> usize {
    let f = config.features;
    let [k1, k2, k3] = KERNEL_SIZES;
    let conv1 = k1 * k1 * INPUT_CHANNELS * f + f;
    let conv2 = k2 * k2 * f * f + f;
    let conv3 = k3 * k3 * f * OUTPUT_CHANNELS + OUTPUT_CHANNELS;
    let cell = match config.cell_kind {
        CellKind::Gru => 3 * (2 * f * f + f),
        CellKind::Mgu => 2 * (2 * f * f + f),
        CellKind::IndRnn => f * f + 2 * f,
    };
    conv1 + conv2 + conv3 + 2 * cell
}

/// Index ranges of the parameter groups inside [`RimModel::params`].
struct Blocks {
    conv1: usize,
    cell1: usize,
    conv2: usize,
    cell2: usize,
    conv3: usize,
}

fn blocks(kind: CellKind) -> Blocks {
    let n = kind.tensor_count();
    Blocks {
        conv1: 0,
        cell1: 2,
        conv2: 2 + n,
        cell2: 4 + n,
        conv3: 4 + 2 * n,
    }
}

/// All learnable parameters of a RIM together with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RimModel {
    pub config: RimConfig,
    pub params: Vec<Tensor>,
}

/// External state `x` and the two hidden states of one unrolled step.
#[derive(Debug, Clone, PartialEq)]
pub struct RimState {
    pub x: ComplexImage,
    pub s1: Tensor,
    pub s2: Tensor,
}

impl RimState {
    /// `s_0 = 0` alongside the given estimate.
    pub fn initial(x: ComplexImage, features: usize) -> Self {
        let (h, w) = x.shape();
        Self {
            x,
            s1: Tensor::zeros(&[features, h, w]),
            s2: Tensor::zeros(&[features, h, w]),
        }
    }
}

impl RimModel {
    /// All parameters zero.
    pub fn zeros(config: RimConfig) -> Result<Self> {
        config.validate()?;
        let params = config.layout().iter().map(|(_, s)| Tensor::zeros(s)).collect();
        Ok(Self { config, params })
    }

    /// Xavier-uniform weights, zero biases and IndRNN recurrent weights drawn
    /// uniformly from `[0, 1]`.
    pub fn init(config: RimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if shape.len() == 4 {
                    let field = shape[2] * shape[3];
                    let bound = (6.0 / ((shape[0] + shape[1]) * field) as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                } else if config.cell_kind == CellKind::IndRnn && name.ends_with(".u") {
                    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
                } else {
                    vec![0.0; n]
                };
                Tensor::from_vec(&shape, data)
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    pub fn named_params(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.config.layout().into_iter().map(|(n, _)| n).zip(&self.params)
    }

    /// One step of the update function on a given graph. `params` are the
    /// graph nodes of [`RimModel::params`]; returns `(x_next, s1, s2)`.
    pub fn step_on<G: Graph>(
        &self,
        g: &mut G,
        params: &[G::Node],
        x: &G::Node,
        grad: &G::Node,
        s1: &G::Node,
        s2: &G::Node,
    ) -> Result<(G::Node, G::Node, G::Node)> {
        let kind = self.config.cell_kind;
        let b = blocks(kind);
        let n = kind.tensor_count();
        let input = g.concat(&[x.clone(), grad.clone()])?;
        let a1 = g.conv2d(&input, &params[b.conv1], Some(&params[b.conv1 + 1]))?;
        let a1 = g.relu(&a1);
        let s1 = cell::step_on(g, kind, &params[b.cell1..b.cell1 + n], &a1, s1)?;
        let a2 = g.conv2d(&s1, &params[b.conv2], Some(&params[b.conv2 + 1]))?;
        let a2 = g.relu(&a2);
        let s2 = cell::step_on(g, kind, &params[b.cell2..b.cell2 + n], &a2, s2)?;
        let dx = g.conv2d(&s2, &params[b.conv3], Some(&params[b.conv3 + 1]))?;
        let x_next = g.add(x, &dx)?;
        Ok((x_next, s1, s2))
    }

    /// Full unroll on a graph: `x_0` from the adjoint, then `t` steps each fed
    /// with the fresh log-likelihood gradient. Returns `x_1 .. x_t`.
    pub fn unroll_on<G: Graph>(
        &self,
        g: &mut G,
        params: &[G::Node],
        coils: &CoilSet,
        mask: &SamplingMask,
        sigma: f64,
    ) -> Result<Vec<G::Node>> {
        let x0 = mri::zero_filled(coils, mask)?;
        let (h, w) = x0.shape();
        let (map, offset) = mri::gradient_operator(coils, mask, sigma)?;
        let f = self.config.features;
        let mut x = g.input(Tensor::from_complex(&x0));
        let mut s1 = g.input(Tensor::zeros(&[f, h, w]));
        let mut s2 = g.input(Tensor::zeros(&[f, h, w]));
        let mut out = Vec::with_capacity(self.config.time_steps);
        for _ in 0..self.config.time_steps {
            let grad = g.affine(&x, map.clone(), Some(&offset))?;
            let (xn, n1, n2) = self.step_on(g, params, &x, &grad, &s1, &s2)?;
            out.push(xn.clone());
            x = xn;
            s1 = n1;
            s2 = n2;
        }
        Ok(out)
    }

    fn eager_params(&self) -> Vec<<Eager as Graph>::Node> {
        let mut g = Eager;
        self.params.iter().map(|p| g.input(p.clone())).collect()
    }

    /// One update of the external and internal state.
    pub fn rim_step(&self, state: &RimState, gradient: &ComplexImage) -> Result<RimState> {
        let f = self.config.features;
        let (h, w) = state.x.shape();
        gradient.ensure_shape(h, w)?;
        for s in [&state.s1, &state.s2] {
            if s.shape() != [f, h, w] {
                return Err(RimError::shape(format!(
                    "hidden state {:?} does not match [{f}, {h}, {w}]",
                    s.shape()
                )));
            }
        }
        let mut g = Eager;
        let params = self.eager_params();
        let x = g.input(Tensor::from_complex(&state.x));
        let grad = g.input(Tensor::from_complex(gradient));
        let s1 = g.input(state.s1.clone());
        let s2 = g.input(state.s2.clone());
        let (x, s1, s2) = self.step_on(&mut g, &params, &x, &grad, &s1, &s2)?;
        Ok(RimState {
            x: x.to_complex()?,
            s1: (*s1).clone(),
            s2: (*s2).clone(),
        })
    }

    /// Reconstruction estimates `x_1 .. x_t`.
    pub fn forward(&self, coils: &CoilSet, mask: &SamplingMask, sigma: f64) -> Result<Vec<ComplexImage>> {
        let mut g = Eager;
        let params = self.eager_params();
        self.unroll_on(&mut g, &params, coils, mask, sigma)?
            .iter()
            .map(|x| x.to_complex())
            .collect()
    }

    /// Final estimate `x_t`.
    pub fn reconstruct(&self, coils: &CoilSet, mask: &SamplingMask, sigma: f64) -> Result<ComplexImage> {
        let mut est = self.forward(coils, mask, sigma)?;
        Ok(est.pop().expect("time_steps >= 1"))
    }
}
