//! Centered, orthonormal 2-D DFT.
//!
//! The zero frequency sits at index `(H/2, W/2)`; the transform is
//! `fftshift . fft . ifftshift` scaled by `1/sqrt(H*W)` in both directions so
//! that forward and inverse are exact adjoints.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::image::ComplexImage;
use crate::error::{Result, RimError};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                let dir = if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                };
                planner.plan_fft(len, dir)
            })
            .clone()
    })
}

/// Centered orthonormal 1-D DFT of a contiguous line, in place.
pub fn fft1_centered(line: &mut [Complex64], inverse: bool) {
    let n = line.len();
    if n == 0 {
        return;
    }
    // ifftshift
    line.rotate_left(n / 2);
    plan(n, inverse).process(line);
    // fftshift
    line.rotate_right(n / 2);
    let s = 1.0 / (n as f64).sqrt();
    for v in line.iter_mut() {
        *v *= s;
    }
}

fn transform(img: &ComplexImage, inverse: bool) -> Result<ComplexImage> {
    let (h, w) = img.shape();
    if h == 0 || w == 0 {
        return Err(RimError::shape(format!("cannot transform a {h}x{w} grid")));
    }
    let mut buf = img.data().to_vec();
    transform_in_place(&mut buf, h, w, inverse);
    ComplexImage::from_vec(h, w, buf)
}

/// Centered orthonormal 2-D DFT of a row-major `h x w` buffer, in place.
pub fn transform_in_place(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), h * w);
    let row_plan = plan(w, inverse);
    let col_plan = plan(h, inverse);

    // ifftshift along both axes: rotate rows, then rotate each row
    buf.rotate_left((h / 2) * w);
    for row in buf.chunks_exact_mut(w) {
        row.rotate_left(w / 2);
    }
    row_plan.process(buf);

    let mut cols = vec![Complex64::new(0.0, 0.0); h * w];
    transpose(buf, &mut cols, h, w);
    col_plan.process(&mut cols);
    transpose(&cols, buf, w, h);

    buf.rotate_right((h / 2) * w);
    let s = 1.0 / ((h * w) as f64).sqrt();
    for row in buf.chunks_exact_mut(w) {
        row.rotate_right(w / 2);
        for v in row.iter_mut() {
            *v *= s;
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Forward centered orthonormal 2-D DFT.
pub fn fft2_centered(img: &ComplexImage) -> Result<ComplexImage> {
    transform(img, false)
}

/// Inverse centered orthonormal 2-D DFT; the exact adjoint of [`fft2_centered`].
pub fn ifft2_centered(img: &ComplexImage) -> Result<ComplexImage> {
    transform(img, true)
}
