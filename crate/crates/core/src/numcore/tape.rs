//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] appends one node per operation. Parents always precede their
//! children, so walking node indices downwards is a reverse topological
//! order and each node is visited exactly once during [`Tape::backward`].
//!
//! The [`Graph`] trait abstracts over recording ([`Tape`]) and plain eager
//! evaluation ([`Eager`]) so that a model can be written once and run with
//! or without gradient bookkeeping.

use std::sync::Arc;

use super::conv;
use super::tensor::Tensor;
use crate::error::{Result, RimError};

/// A real-linear map between tensors together with its adjoint.
pub trait LinearMap: Send + Sync {
    fn apply(&self, x: &Tensor) -> Result<Tensor>;
    fn adjoint(&self, y: &Tensor) -> Result<Tensor>;
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d { input: usize, weight: usize, bias: Option<usize> },
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    OneMinus(usize),
    Scale(usize, f64),
    ScaleChannels { input: usize, scale: usize },
    Concat(Vec<usize>),
    Affine { input: usize, map: Arc<dyn LinearMap> },
    SumSquares(usize),
    SumModulus(usize),
    Sum(Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records tensor operations for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; exactly zero when `v` did not influence the root.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    a.zip_map(b, f).expect("shapes checked at record time")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers a leaf (parameter or input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.val(a.0).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(a.0))
    }

    /// Sum of complex moduli over a stack of (re, im) channel pairs.
    pub fn sum_modulus(&mut self, a: Var) -> Result<Var> {
        let pairs = self.val(a.0).to_complex_stack()?;
        let s = pairs.iter().flat_map(|img| img.data().iter().map(|c| c.norm())).sum();
        Ok(self.push(Tensor::scalar(s), Op::SumModulus(a.0)))
    }

    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| RimError::Contract("sum of no terms".into()))?;
        let mut acc = self.val(first.0).clone();
        for p in &parts[1..] {
            self.val(p.0).same_shape(&acc)?;
            acc.add_assign(self.val(p.0));
        }
        Ok(self.push(acc, Op::Sum(parts.iter().map(|p| p.0).collect())))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.val(root.0).is_scalar() {
            return Err(RimError::Contract(format!(
                "backward needs a scalar root, node {} has shape {:?}",
                root.0,
                self.val(root.0).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv2d { input, weight, bias } => {
                    let wv = self.val(*weight);
                    let k = wv.shape()[2];
                    accumulate(&mut grads[*input], conv::conv2d_transpose(&g, wv)?);
                    accumulate(
                        &mut grads[*weight],
                        conv::conv2d_weight_grad(self.val(*input), &g, k)?,
                    );
                    if let Some(b) = bias {
                        accumulate(&mut grads[*b], conv::channel_sums(&g)?);
                    }
                }
                Op::Relu(a) => {
                    let d = elementwise(&g, &node.value, |g, y| if y > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads[*a], d);
                }
                Op::Sigmoid(a) => {
                    let d = elementwise(&g, &node.value, |g, y| g * y * (1.0 - y));
                    accumulate(&mut grads[*a], d);
                }
                Op::Tanh(a) => {
                    let d = elementwise(&g, &node.value, |g, y| g * (1.0 - y * y));
                    accumulate(&mut grads[*a], d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*b], g.clone());
                    accumulate(&mut grads[*a], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[*b], g.scale(-1.0));
                    accumulate(&mut grads[*a], g);
                }
                Op::Mul(a, b) => {
                    let ga = elementwise(&g, self.val(*b), |g, y| g * y);
                    let gb = elementwise(&g, self.val(*a), |g, x| g * x);
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::OneMinus(a) => accumulate(&mut grads[*a], g.scale(-1.0)),
                Op::Scale(a, s) => accumulate(&mut grads[*a], g.scale(*s)),
                Op::ScaleChannels { input, scale } => {
                    let x = self.val(*input);
                    let s = self.val(*scale);
                    let (c, h, w) = x.chw()?;
                    let plane = h * w;
                    let mut gx = Tensor::zeros(x.shape());
                    let mut gs = Tensor::zeros(s.shape());
                    for ch in 0..c {
                        let sv = s.data()[ch];
                        let gp = &g.data()[ch * plane..(ch + 1) * plane];
                        let xp = &x.data()[ch * plane..(ch + 1) * plane];
                        for (o, gv) in gx.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().zip(gp) {
                            *o = gv * sv;
                        }
                        gs.data_mut()[ch] = gp.iter().zip(xp).map(|(a, b)| a * b).sum();
                    }
                    accumulate(&mut grads[*input], gx);
                    accumulate(&mut grads[*scale], gs);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.val(p).len();
                        let piece = Tensor::from_vec(
                            self.val(p).shape(),
                            g.data()[offset..offset + n].to_vec(),
                        )?;
                        accumulate(&mut grads[p], piece);
                        offset += n;
                    }
                }
                Op::Affine { input, map } => {
                    accumulate(&mut grads[*input], map.adjoint(&g)?);
                }
                Op::SumSquares(a) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads[*a], self.val(*a).map(|v| 2.0 * gv * v));
                }
                Op::SumModulus(a) => {
                    let gv = g.data()[0];
                    let x = self.val(*a);
                    let (c, h, w) = x.chw()?;
                    let plane = h * w;
                    let mut gx = Tensor::zeros(x.shape());
                    for pair in 0..c / 2 {
                        let re = &x.data()[2 * pair * plane..(2 * pair + 1) * plane];
                        let im = &x.data()[(2 * pair + 1) * plane..(2 * pair + 2) * plane];
                        let out = gx.data_mut();
                        for j in 0..plane {
                            let m = re[j].hypot(im[j]);
                            // subgradient 0 at the kink
                            if m > 0.0 {
                                out[2 * pair * plane + j] = gv * re[j] / m;
                                out[(2 * pair + 1) * plane + j] = gv * im[j] / m;
                            }
                        }
                    }
                    accumulate(&mut grads[*a], gx);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        accumulate(&mut grads[p], g.clone());
                    }
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

/// Operations a model can be expressed in, independent of whether they are
/// recorded for differentiation.
pub trait Graph {
    type Node: Clone;

    fn input(&mut self, value: Tensor) -> Self::Node;
    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Tensor;

    fn conv2d(&mut self, x: &Self::Node, w: &Self::Node, b: Option<&Self::Node>) -> Result<Self::Node>;
    fn relu(&mut self, x: &Self::Node) -> Self::Node;
    fn sigmoid(&mut self, x: &Self::Node) -> Self::Node;
    fn tanh(&mut self, x: &Self::Node) -> Self::Node;
    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn mul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    /// `1 - x` elementwise.
    fn one_minus(&mut self, x: &Self::Node) -> Self::Node;
    /// Multiplies channel `c` of a `[C,H,W]` stack by `s[c]`.
    fn scale_channels(&mut self, x: &Self::Node, s: &Self::Node) -> Result<Self::Node>;
    /// Concatenates `[C_i,H,W]` stacks along the channel axis.
    fn concat(&mut self, parts: &[Self::Node]) -> Result<Self::Node>;
    /// `map(x) + offset`.
    fn affine(&mut self, x: &Self::Node, map: Arc<dyn LinearMap>, offset: Option<&Tensor>) -> Result<Self::Node>;
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn scale_channels(x: &Tensor, s: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if s.len() != c {
        return Err(RimError::shape(format!("{} scales for {c} channels", s.len())));
    }
    let plane = h * w;
    let mut out = x.clone();
    for (ch, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
        let sv = s.data()[ch];
        chunk.iter_mut().for_each(|v| *v *= sv);
    }
    Ok(out)
}

fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    let (_, h, w) = parts
        .first()
        .ok_or_else(|| RimError::shape("concat of nothing"))?
        .chw()?;
    let mut channels = 0;
    let mut data = Vec::new();
    for p in parts {
        let (c, ph, pw) = p.chw()?;
        if (ph, pw) != (h, w) {
            return Err(RimError::shape("concat grids differ"));
        }
        channels += c;
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec(&[channels, h, w], data)
}

fn affine(x: &Tensor, map: &dyn LinearMap, offset: Option<&Tensor>) -> Result<Tensor> {
    let mut y = map.apply(x)?;
    if let Some(o) = offset {
        y.same_shape(o)?;
        y.add_assign(o);
    }
    Ok(y)
}

/// Records every operation so that [`Tape::backward`] can run afterwards.
impl Graph for Tape {
    type Node = Var;

    fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value)
    }

    fn value<'a>(&'a self, node: &'a Var) -> &'a Tensor {
        self.val(node.0)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let v = conv::conv2d(self.val(x.0), self.val(w.0), b.map(|b| self.val(b.0)))?;
        Ok(self.push(
            v,
            Op::Conv2d {
                input: x.0,
                weight: w.0,
                bias: b.map(|b| b.0),
            },
        ))
    }

    fn relu(&mut self, x: &Var) -> Var {
        let v = self.val(x.0).map(|v| v.max(0.0));
        self.push(v, Op::Relu(x.0))
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let v = self.val(x.0).map(sigmoid);
        self.push(v, Op::Sigmoid(x.0))
    }

    fn tanh(&mut self, x: &Var) -> Var {
        let v = self.val(x.0).map(f64::tanh);
        self.push(v, Op::Tanh(x.0))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.val(a.0).zip_map(self.val(b.0), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.val(a.0).zip_map(self.val(b.0), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a.0, b.0)))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.val(a.0).zip_map(self.val(b.0), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a.0, b.0)))
    }

    fn one_minus(&mut self, x: &Var) -> Var {
        let v = self.val(x.0).map(|v| 1.0 - v);
        self.push(v, Op::OneMinus(x.0))
    }

    fn scale_channels(&mut self, x: &Var, s: &Var) -> Result<Var> {
        let v = scale_channels(self.val(x.0), self.val(s.0))?;
        Ok(self.push(
            v,
            Op::ScaleChannels {
                input: x.0,
                scale: s.0,
            },
        ))
    }

    fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|p| self.val(p.0)).collect();
        let v = concat(&vals)?;
        Ok(self.push(v, Op::Concat(parts.iter().map(|p| p.0).collect())))
    }

    fn affine(&mut self, x: &Var, map: Arc<dyn LinearMap>, offset: Option<&Tensor>) -> Result<Var> {
        let v = affine(self.val(x.0), map.as_ref(), offset)?;
        Ok(self.push(v, Op::Affine { input: x.0, map }))
    }
}

impl Tape {
    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.val(x.0).scale(s);
        self.push(v, Op::Scale(x.0, s))
    }
}

/// Evaluates operations immediately and keeps nothing for differentiation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Graph for Eager {
    type Node = Arc<Tensor>;

    fn input(&mut self, value: Tensor) -> Arc<Tensor> {
        Arc::new(value)
    }

    fn value<'a>(&'a self, node: &'a Arc<Tensor>) -> &'a Tensor {
        node
    }

    fn conv2d(&mut self, x: &Arc<Tensor>, w: &Arc<Tensor>, b: Option<&Arc<Tensor>>) -> Result<Arc<Tensor>> {
        Ok(Arc::new(conv::conv2d(x, w, b.map(|b| b.as_ref()))?))
    }

    fn relu(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(x.map(|v| v.max(0.0)))
    }

    fn sigmoid(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(x.map(sigmoid))
    }

    fn tanh(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(x.map(f64::tanh))
    }

    fn add(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        Ok(Arc::new(a.zip_map(b, |x, y| x + y)?))
    }

    fn sub(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        Ok(Arc::new(a.zip_map(b, |x, y| x - y)?))
    }

    fn mul(&mut self, a: &Arc<Tensor>, b: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        Ok(Arc::new(a.zip_map(b, |x, y| x * y)?))
    }

    fn one_minus(&mut self, x: &Arc<Tensor>) -> Arc<Tensor> {
        Arc::new(x.map(|v| 1.0 - v))
    }

    fn scale_channels(&mut self, x: &Arc<Tensor>, s: &Arc<Tensor>) -> Result<Arc<Tensor>> {
        Ok(Arc::new(scale_channels(x, s)?))
    }

    fn concat(&mut self, parts: &[Arc<Tensor>]) -> Result<Arc<Tensor>> {
        let vals: Vec<&Tensor> = parts.iter().map(|p| p.as_ref()).collect();
        Ok(Arc::new(concat(&vals)?))
    }

    fn affine(&mut self, x: &Arc<Tensor>, map: Arc<dyn LinearMap>, offset: Option<&Tensor>) -> Result<Arc<Tensor>> {
        Ok(Arc::new(affine(x, map.as_ref(), offset)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let loss = tape.sum_squares(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn unused_leaf_has_exact_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let p = tape.leaf(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let loss = tape.sum_squares(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_root_is_a_contract_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(RimError::Contract(_))));
    }

    /// Central-difference check of every primitive's vector-Jacobian product
    /// through `loss = <r, op(x...)>` for a random probe `r`.
    fn check_primitive(
        shapes: &[Vec<usize>],
        build: impl Fn(&mut Tape, &[Var]) -> Var,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random(s, &mut rng)).collect();
        let probe_shape = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = build(&mut tape, &vars);
            tape.value(out).shape().to_vec()
        };
        let probe = random(&probe_shape, &mut rng);
        let eval = |ins: &[Tensor]| -> (f64, Vec<Tensor>) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = build(&mut tape, &vars);
            let r = tape.leaf(probe.clone());
            let prod = tape.mul(&out, &r).unwrap();
            let sq = tape.sum_squares(prod);
            // loss = sum (out*r)^2 keeps curvature in every op
            let g = tape.backward(sq).unwrap();
            (tape.value(sq).data()[0], vars.iter().map(|v| g.get(*v)).collect())
        };
        let (_, grads) = eval(&inputs);
        let h = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            for i in 0..t.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let an = grads[k].data()[i];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-4, "input {k}[{i}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn primitives_match_finite_differences() {
        let s = vec![2, 3, 3];
        check_primitive(
            &[s.clone(), vec![3, 2, 3, 3], vec![3]],
            |t, v| t.conv2d(&v[0], &v[1], Some(&v[2])).unwrap(),
            1,
        );
        check_primitive(&[s.clone()], |t, v| t.sigmoid(&v[0]), 2);
        check_primitive(&[s.clone()], |t, v| t.tanh(&v[0]), 3);
        check_primitive(&[s.clone()], |t, v| t.relu(&v[0]), 4);
        check_primitive(&[s.clone(), s.clone()], |t, v| t.mul(&v[0], &v[1]).unwrap(), 5);
        check_primitive(&[s.clone(), s.clone()], |t, v| t.sub(&v[0], &v[1]).unwrap(), 6);
        check_primitive(&[s.clone()], |t, v| t.one_minus(&v[0]), 7);
        check_primitive(
            &[s.clone(), vec![2]],
            |t, v| t.scale_channels(&v[0], &v[1]).unwrap(),
            8,
        );
        check_primitive(
            &[s.clone(), vec![1, 3, 3]],
            |t, v| t.concat(&[v[0], v[1]]).unwrap(),
            9,
        );
        check_primitive(&[s.clone()], |t, v| t.sum_modulus(v[0]).unwrap(), 10);
        check_primitive(&[s.clone()], |t, v| t.scale(v[0], -2.5), 11);
    }

    #[test]
    fn linearity_of_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x0 = random(&[2, 4, 4], &mut rng);
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let grad_of = |which: u8| {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let f = {
                let s = tape.sigmoid(&x);
                tape.sum_squares(s)
            };
            let g = {
                let t = tape.tanh(&x);
                tape.sum_modulus(t).unwrap()
            };
            let root = match which {
                0 => f,
                1 => g,
                _ => {
                    let fa = tape.scale(f, a);
                    let gb = tape.scale(g, b);
                    tape.sum(&[fa, gb]).unwrap()
                }
            };
            tape.backward(root).unwrap().get(x)
        };
        let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..gc.len() {
            let expect = a * gf.data()[i] + b * gg.data()[i];
            assert!((gc.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn eager_and_tape_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[2, 5, 5], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.leaf(x.clone()), tape.leaf(w.clone()));
        let c = tape.conv2d(&xv, &wv, None).unwrap();
        let s = tape.sigmoid(&c);
        let mut eager = Eager;
        let (xe, we) = (eager.input(x), eager.input(w));
        let ce = eager.conv2d(&xe, &we, None).unwrap();
        let se = eager.sigmoid(&ce);
        assert_eq!(tape.value(s), se.as_ref());
    }
}
