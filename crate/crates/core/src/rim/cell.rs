//! Recurrent cells applied independently at every pixel. Input and recurrent
//! maps are dense over the feature axis (1x1 convolutions), shared across
//! pixels.

use super::CellKind;
use crate::error::{Result, RimError};
use crate::numcore::{Eager, Graph, Tensor};

pub(crate) fn step_on<G: Graph>(
    g: &mut G,
    kind: CellKind,
    p: &[G::Node],
    a: &G::Node,
    h: &G::Node,
) -> Result<G::Node> {
    match kind {
        CellKind::Gru => {
            // z: update gate, r: reset gate
            let z = gate(g, &p[0], &p[1], &p[2], a, h)?;
            let r = gate(g, &p[3], &p[4], &p[5], a, h)?;
            let rh = g.mul(&r, h)?;
            let cand = pre_activation(g, &p[6], &p[7], &p[8], a, &rh)?;
            let cand = g.tanh(&cand);
            blend(g, &z, h, &cand)
        }
        CellKind::Mgu => {
            let f = gate(g, &p[0], &p[1], &p[2], a, h)?;
            let fh = g.mul(&f, h)?;
            let cand = pre_activation(g, &p[3], &p[4], &p[5], a, &fh)?;
            let cand = g.tanh(&cand);
            blend(g, &f, h, &cand)
        }
        CellKind::IndRnn => {
            let wa = g.conv2d(a, &p[0], Some(&p[2]))?;
            let uh = g.scale_channels(h, &p[1])?;
            let pre = g.add(&wa, &uh)?;
            Ok(g.relu(&pre))
        }
    }
}

/// `W a + b + U h`.
fn pre_activation<G: Graph>(
    g: &mut G,
    w: &G::Node,
    u: &G::Node,
    b: &G::Node,
    a: &G::Node,
    h: &G::Node,
) -> Result<G::Node> {
    let wa = g.conv2d(a, w, Some(b))?;
    let uh = g.conv2d(h, u, None)?;
    g.add(&wa, &uh)
}

fn gate<G: Graph>(
    g: &mut G,
    w: &G::Node,
    u: &G::Node,
    b: &G::Node,
    a: &G::Node,
    h: &G::Node,
) -> Result<G::Node> {
    let pre = pre_activation(g, w, u, b, a, h)?;
    Ok(g.sigmoid(&pre))
}

/// `(1 - z) * h + z * cand`.
fn blend<G: Graph>(g: &mut G, z: &G::Node, h: &G::Node, cand: &G::Node) -> Result<G::Node> {
    let keep = g.one_minus(z);
    let kept = g.mul(&keep, h)?;
    let fresh = g.mul(z, cand)?;
    g.add(&kept, &fresh)
}

/// One cell update on `[F, H, W]` feature fields. `params` follow the cell's
/// declared order (see [`super::RimConfig::layout`]).
pub fn cell_step(kind: CellKind, params: &[Tensor], input: &Tensor, hidden: &Tensor) -> Result<Tensor> {
    if params.len() != kind.tensor_count() {
        return Err(RimError::shape(format!(
            "{kind} cell takes {} parameter tensors, got {}",
            kind.tensor_count(),
            params.len()
        )));
    }
    input.same_shape(hidden)?;
    let mut g = Eager;
    let p: Vec<_> = params.iter().map(|t| g.input(t.clone())).collect();
    let a = g.input(input.clone());
    let h = g.input(hidden.clone());
    Ok((*step_on(&mut g, kind, &p, &a, &h)?).clone())
}
