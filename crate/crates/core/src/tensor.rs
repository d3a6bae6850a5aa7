//! Dense row-major tensors and label maps.

use crate::error::{Error, Result};

/// Dense row-major array of f64 values. Layout is always `[channel, row, col]`
/// for image-like data, with optional leading batch extent.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorF {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TensorF {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = checked_len(&shape)?;
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at flat index {i}"
            )));
        }
        Ok(TensorF { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        TensorF {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        TensorF {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Shape(format!(
                "expected [C,H,W], got {:?}",
                self.shape
            ))),
        }
    }

    /// `(height, width)` of a rank-2 tensor.
    pub fn hw(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [h, w] => Ok((h, w)),
            _ => Err(Error::Shape(format!(
                "expected [H,W], got {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        if checked_len(&shape)? != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(TensorF {
            shape,
            data: self.data,
        })
    }

    /// Contiguous slice of channel `c` of a `[C,H,W]` tensor.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape[1..].iter().product::<usize>();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

pub(crate) fn checked_len(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::DimensionOverflow)
}

/// Per-pixel class indices in `[0, classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u8>) -> Result<Self> {
        if classes == 0 || classes > 256 {
            return Err(Error::InvalidArgument(format!(
                "class count {classes} outside 1..=256"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{}x{} label map given {} labels",
                height,
                width,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} not below class count {classes}"
            )));
        }
        Ok(LabelMap {
            height,
            width,
            classes,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col] as usize
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `[K,H,W]` indicator tensor with exactly one 1.0 per pixel.
pub fn one_hot(labels: &LabelMap) -> TensorF {
    let plane = labels.len();
    let mut data = vec![0.0; labels.classes * plane];
    for (p, &l) in labels.labels.iter().enumerate() {
        data[l as usize * plane + p] = 1.0;
    }
    TensorF {
        shape: vec![labels.classes, labels.height, labels.width],
        data,
    }
}

/// Per-pixel softmax over the channel axis of a `[K,H,W]` tensor, optionally
/// dividing logits by `temperature` first.
pub fn softmax_channels(logits: &TensorF, temperature: f64) -> TensorF {
    let k = logits.shape[0];
    let plane = logits.len() / k.max(1);
    let mut out = vec![0.0; logits.len()];
    let mut buf = vec![0.0; k];
    for p in 0..plane {
        softmax_pixel(&logits.data, plane, p, temperature, &mut buf);
        for c in 0..k {
            out[c * plane + p] = buf[c];
        }
    }
    TensorF {
        shape: logits.shape.clone(),
        data: out,
    }
}

/// Softmax of `z[c*plane + p] / t` over `c`, written to `out`.
pub(crate) fn softmax_pixel(z: &[f64], plane: usize, p: usize, t: f64, out: &mut [f64]) {
    let k = out.len();
    let mut max = f64::NEG_INFINITY;
    for c in 0..k {
        out[c] = z[c * plane + p] / t;
        max = max.max(out[c]);
    }
    let mut sum = 0.0;
    for v in out.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
}

/// Per-pixel argmax over the channel axis; ties resolve to the lowest index.
pub fn argmax_channels(t: &TensorF) -> Result<LabelMap> {
    let (k, h, w) = t.chw()?;
    let plane = h * w;
    let labels = (0..plane)
        .map(|p| {
            let mut best = 0;
            for c in 1..k {
                if t.data[c * plane + p] > t.data[best * plane + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(h, w, k, labels)
}
