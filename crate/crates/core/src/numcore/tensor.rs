use num_complex::Complex64;

use super::image::ComplexImage;
use crate::error::{Result, RimError};

/// Dense row-major real array. Feature stacks use the shape `[C, H, W]`;
/// parameters use whatever shape their layer declares.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(RimError::shape(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// `(channels, height, width)` of a feature stack.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(RimError::shape(format!(
                "expected a [C, H, W] stack, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(RimError::shape(format!(
                "shape {:?} does not match {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack of complex images as `[2 * n, H, W]`: real then imaginary plane
    /// for each image in order.
    pub fn from_complex_stack(images: &[ComplexImage]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| RimError::shape("empty complex stack"))?;
        let (h, w) = first.shape();
        let plane = h * w;
        let mut data = vec![0.0; 2 * images.len() * plane];
        for (i, img) in images.iter().enumerate() {
            img.ensure_shape(h, w)?;
            let (re, rest) = data[2 * i * plane..].split_at_mut(plane);
            let im = &mut rest[..plane];
            for (j, c) in img.data().iter().enumerate() {
                re[j] = c.re;
                im[j] = c.im;
            }
        }
        Self::from_vec(&[2 * images.len(), h, w], data)
    }

    pub fn from_complex(img: &ComplexImage) -> Self {
        Self::from_complex_stack(std::slice::from_ref(img)).expect("single image stack")
    }

    /// Inverse of [`Tensor::from_complex_stack`].
    pub fn to_complex_stack(&self) -> Result<Vec<ComplexImage>> {
        let (c, h, w) = self.chw()?;
        if c % 2 != 0 {
            return Err(RimError::shape(format!(
                "{c} channels cannot be paired into complex images"
            )));
        }
        let plane = h * w;
        (0..c / 2)
            .map(|i| {
                let re = &self.data[2 * i * plane..(2 * i + 1) * plane];
                let im = &self.data[(2 * i + 1) * plane..(2 * i + 2) * plane];
                ComplexImage::from_vec(
                    h,
                    w,
                    re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect(),
                )
            })
            .collect()
    }

    pub fn to_complex(&self) -> Result<ComplexImage> {
        let mut stack = self.to_complex_stack()?;
        if stack.len() != 1 {
            return Err(RimError::shape(format!(
                "expected 2 channels, got {}",
                2 * stack.len()
            )));
        }
        Ok(stack.remove(0))
    }
}
