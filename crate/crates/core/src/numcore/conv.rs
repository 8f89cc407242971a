//! Zero-padded "same" 2-D convolution over channel stacks, with the two
//! adjoint kernels needed for reverse-mode differentiation.
//!
//! Weights are laid out `[out, in, k, k]` with odd `k`; the operation is a
//! cross-correlation, `out[o,y,x] = b[o] + sum w[o,i,ky,kx] * in[i, y+ky-p, x+kx-p]`
//! with `p = (k-1)/2` and zeros outside the grid.

use super::tensor::Tensor;
use crate::error::{Result, RimError};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    cout: usize,
    k: usize,
    h: usize,
    w: usize,
}

fn geometry(input_shape: &[usize], weight: &Tensor) -> Result<Geometry> {
    let (cin, h, w) = match input_shape {
        &[c, h, w] => (c, h, w),
        s => return Err(RimError::shape(format!("conv input must be [C,H,W], got {s:?}"))),
    };
    let (cout, win, k) = match weight.shape() {
        &[o, i, k1, k2] if k1 == k2 => (o, i, k1),
        s => return Err(RimError::shape(format!("conv weight must be [O,I,K,K], got {s:?}"))),
    };
    if k % 2 == 0 {
        return Err(RimError::shape(format!("kernel side {k} is not odd")));
    }
    if win != cin {
        return Err(RimError::shape(format!(
            "kernel expects {win} input channels, input has {cin}"
        )));
    }
    Ok(Geometry { cin, cout, k, h, w })
}

/// Visits every (kernel tap, valid output row span) pair. `f` receives the
/// tap offsets `(dy, dx)`, the output row `y`, and the column span `x0..x1`
/// for which `(y+dy, x+dx)` stays inside the grid.
#[inline(always)]
fn for_each_tap(g: Geometry, mut f: impl FnMut(usize, usize, isize, isize)) {
    let p = (g.k / 2) as isize;
    for ky in 0..g.k {
        for kx in 0..g.k {
            f(ky, kx, ky as isize - p, kx as isize - p);
        }
    }
}

#[inline(always)]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// Forward convolution.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let g = geometry(input.shape(), weight)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(RimError::shape(format!(
                "bias has {} entries for {} output channels",
                b.len(),
                g.cout
            )));
        }
    }
    let plane = g.h * g.w;
    let mut out = Tensor::zeros(&[g.cout, g.h, g.w]);
    let x = input.data();
    let wt = weight.data();
    let o = out.data_mut();
    for co in 0..g.cout {
        let oplane = &mut o[co * plane..(co + 1) * plane];
        if let Some(b) = bias {
            oplane.fill(b.data()[co]);
        }
        for ci in 0..g.cin {
            let iplane = &x[ci * plane..(ci + 1) * plane];
            let wbase = (co * g.cin + ci) * g.k * g.k;
            for_each_tap(g, |ky, kx, dy, dx| {
                let wv = wt[wbase + ky * g.k + kx];
                if wv == 0.0 {
                    return;
                }
                let (y0, y1) = span(g.h, dy);
                let (x0, x1) = span(g.w, dx);
                for y in y0..y1 {
                    let src = ((y as isize + dy) as usize) * g.w;
                    let orow = &mut oplane[y * g.w + x0..y * g.w + x1];
                    let irow = &iplane[(src as isize + x0 as isize + dx) as usize..][..x1 - x0];
                    for (ov, iv) in orow.iter_mut().zip(irow) {
                        *ov += wv * iv;
                    }
                }
            });
        }
    }
    Ok(out)
}

/// Adjoint of [`conv2d`] with respect to its input (bias excluded): maps an
/// output-shaped stack back to an input-shaped stack.
pub fn conv2d_transpose(grad_out: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (cout, h, w) = grad_out.chw()?;
    let (wout, cin, k) = match weight.shape() {
        &[o, i, k, _] => (o, i, k),
        s => return Err(RimError::shape(format!("conv weight must be [O,I,K,K], got {s:?}"))),
    };
    if wout != cout {
        return Err(RimError::shape(format!(
            "kernel emits {wout} channels, gradient has {cout}"
        )));
    }
    let g = geometry(&[cin, h, w], weight)?;
    let plane = h * w;
    let mut out = Tensor::zeros(&[cin, h, w]);
    let go = grad_out.data();
    let wt = weight.data();
    let gi = out.data_mut();
    for co in 0..cout {
        let gplane = &go[co * plane..(co + 1) * plane];
        for ci in 0..cin {
            let iplane = &mut gi[ci * plane..(ci + 1) * plane];
            let wbase = (co * cin + ci) * k * k;
            for_each_tap(g, |ky, kx, dy, dx| {
                let wv = wt[wbase + ky * k + kx];
                if wv == 0.0 {
                    return;
                }
                let (y0, y1) = span(h, dy);
                let (x0, x1) = span(w, dx);
                for y in y0..y1 {
                    let dst = ((y as isize + dy) as usize) * w;
                    let grow = &gplane[y * w + x0..y * w + x1];
                    let irow = &mut iplane[(dst as isize + x0 as isize + dx) as usize..][..x1 - x0];
                    for (iv, gv) in irow.iter_mut().zip(grow) {
                        *iv += wv * gv;
                    }
                }
            });
        }
    }
    Ok(out)
}

/// Gradient of `<grad_out, conv2d(input, W)>` with respect to `W`.
pub fn conv2d_weight_grad(input: &Tensor, grad_out: &Tensor, kernel: usize) -> Result<Tensor> {
    let (cin, h, w) = input.chw()?;
    let (cout, gh, gw) = grad_out.chw()?;
    if (gh, gw) != (h, w) {
        return Err(RimError::shape("gradient and input grids differ"));
    }
    let mut grad = Tensor::zeros(&[cout, cin, kernel, kernel]);
    let g = geometry(input.shape(), &grad)?;
    let plane = h * w;
    let x = input.data();
    let go = grad_out.data();
    let gw_data = grad.data_mut();
    for co in 0..cout {
        let gplane = &go[co * plane..(co + 1) * plane];
        for ci in 0..cin {
            let iplane = &x[ci * plane..(ci + 1) * plane];
            let wbase = (co * cin + ci) * kernel * kernel;
            for_each_tap(g, |ky, kx, dy, dx| {
                let (y0, y1) = span(h, dy);
                let (x0, x1) = span(w, dx);
                let mut acc = 0.0;
                for y in y0..y1 {
                    let src = ((y as isize + dy) as usize) * w;
                    let grow = &gplane[y * w + x0..y * w + x1];
                    let irow = &iplane[(src as isize + x0 as isize + dx) as usize..][..x1 - x0];
                    acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                }
                gw_data[wbase + ky * kernel + kx] = acc;
            });
        }
    }
    Ok(grad)
}

/// Per-channel sums, the gradient of the bias term.
pub fn channel_sums(grad_out: &Tensor) -> Result<Tensor> {
    let (c, h, w) = grad_out.chw()?;
    let plane = h * w;
    let sums = grad_out
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().sum())
        .collect();
    Tensor::from_vec(&[c], sums)
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

    fn naive(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Tensor {
        let (cin, h, w) = input.chw().unwrap();
        let (cout, k) = (weight.shape()[0], weight.shape()[2]);
        let p = (k / 2) as isize;
        let mut out = Tensor::zeros(&[cout, h, w]);
        for o in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias.map_or(0.0, |b| b.data()[o]);
                    for i in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - p;
                                let sx = x as isize + kx as isize - p;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weight.data()[((o * cin + i) * k + ky) * k + kx]
                                    * input.data()[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out.data_mut()[(o * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(&[3, 4, 5], &mut rng);
        let mut wt = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            wt.data_mut()[c * 3 + c] = 1.0;
        }
        let y = conv2d(&x, &wt, Some(&Tensor::zeros(&[3]))).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_impulse_response() {
        let mut x = Tensor::zeros(&[1, 5, 5]);
        x.data_mut()[0] = 1.0; // corner impulse is clipped by the border
        x.data_mut()[2 * 5 + 2] = 1.0;
        let wt = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &wt, None).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                let center = (1..=3).contains(&r) && (1..=3).contains(&c);
                let corner = r <= 1 && c <= 1;
                let expect = center as u8 as f64 + corner as u8 as f64;
                assert_eq!(y.data()[r * 5 + c], expect, "({r},{c})");
            }
        }
    }

    #[test]
    fn matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in [1, 3, 5] {
            let x = random(&[2, 5, 5], &mut rng);
            let wt = random(&[3, 2, k, k], &mut rng);
            let b = random(&[3], &mut rng);
            let fast = conv2d(&x, &wt, Some(&b)).unwrap();
            let slow = naive(&x, &wt, Some(&b));
            let err = fast
                .data()
                .iter()
                .zip(slow.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "k={k} err={err}");
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (k, h, w) in [(3, 6, 7), (5, 4, 4), (5, 2, 3), (1, 3, 3)] {
            let x = random(&[3, h, w], &mut rng);
            let y = random(&[2, h, w], &mut rng);
            let wt = random(&[2, 3, k, k], &mut rng);
            let lhs = conv2d(&x, &wt, None).unwrap().dot(&y);
            let rhs = x.dot(&conv2d_transpose(&y, &wt).unwrap());
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn weight_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 4, 5], &mut rng);
        let g = random(&[2, 4, 5], &mut rng);
        let wt = random(&[2, 2, 3, 3], &mut rng);
        let grad = conv2d_weight_grad(&x, &g, 3).unwrap();
        // the map is linear in W, so a unit step is exact
        for i in 0..wt.len() {
            let mut e = Tensor::zeros(wt.shape());
            e.data_mut()[i] = 1.0;
            let fd = conv2d(&x, &e, None).unwrap().dot(&g);
            assert!((fd - grad.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::zeros(&[3, 4, 4]);
        let wt = Tensor::zeros(&[2, 2, 3, 3]);
        assert!(matches!(conv2d(&x, &wt, None), Err(RimError::InvalidShape(_))));
        let even = Tensor::zeros(&[2, 3, 2, 2]);
        assert!(conv2d(&x, &even, None).is_err());
    }
}
