//! Planar RGB rasters and single-plane binary masks.
//!
//! Every 3×H×W quantity in the engine (images, colour fields, additive
//! patterns, and their gradients) is an [`Image`]. Data is channel-major:
//! index `(c, y, x)` lives at `c * h * w + y * w + x`.

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image, rejecting wrong lengths and non-finite values.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != CHANNELS * height * width {
            return Err(Error::shape(
                format!("{} values for 3x{height}x{width}", CHANNELS * height * width),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("image data"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Internal constructor for buffers produced from already valid images.
    pub(crate) fn from_parts(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), CHANNELS * height * width, "image buffer length");
        Self { height, width, data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; CHANNELS * height * width],
        }
    }

    /// Builds an image from a per-element function of `(c, y, x)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(self.shape_string(), other.shape_string()))
        }
    }

    pub fn shape_string(&self) -> String {
        format!("3x{}x{}", self.height, self.width)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp01(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Mean of all values, accumulated in f64.
    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Root-mean-square distance to `other`, accumulated in f64.
    pub fn rms_distance(&self, other: &Image) -> f64 {
        let ss: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum();
        (ss / self.data.len().max(1) as f64).sqrt()
    }
}

/// Binary mask with one entry per pixel, broadcast over channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    /// Copy of every channel plane of `planes` with unmasked pixels zeroed.
    pub fn select(&self, planes: &[f32]) -> Vec<f32> {
        let m = &self.data;
        let mut out = vec![0.0; planes.len()];
        for (o, p) in out.chunks_mut(m.len()).zip(planes.chunks(m.len())) {
            for ((o, &v), &k) in o.iter_mut().zip(p).zip(m) {
                if k == 1 {
                    *o = v;
                }
            }
        }
        out
    }

    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!("{} mask entries", height * width), data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidConfig("mask entries must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    /// Fixed frame of width `pad` around the canvas.
    pub fn border(height: usize, width: usize, pad: usize) -> Self {
        let mut m = Self::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                if y < pad || x < pad || y + pad >= height || x + pad >= width {
                    m.data[y * width + x] = 1;
                }
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len().max(1) as f64
    }

    pub(crate) fn from_bools(height: usize, width: usize, bits: impl IntoIterator<Item = bool>) -> Self {
        let data: Vec<u8> = bits.into_iter().map(u8::from).collect();
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length_and_nan() {
        assert!(Image::new(2, 2, vec![0.0; 11]).is_err());
        let mut v = vec![0.0; 12];
        v[3] = f32::NAN;
        assert!(matches!(Image::new(2, 2, v), Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn channel_major_indexing() {
        let img = Image::from_fn(2, 3, |c, y, x| (c * 100 + y * 10 + x) as f32);
        assert_eq!(img.get(2, 1, 2), 212.0);
        assert_eq!(img.data()[img.plane_len() + 4], 111.0);
    }

    #[test]
    fn border_mask_counts() {
        let m = Mask::border(10, 10, 2);
        assert_eq!(m.count(), 100 - 36);
        assert!(Mask::new(1, 2, vec![0, 2]).is_err());
    }
}
