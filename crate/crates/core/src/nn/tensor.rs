use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense channel-major (C×H×W) tensor for a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Contract(format!(
                "tensor buffer holds {} values, shape {channels}x{height}x{width} needs {}",
                data.len(),
                channels * height * width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Per-pixel index of the largest channel; ties go to the lowest index.
    pub fn argmax_channels(&self) -> Vec<u8> {
        let n = self.plane_len();
        let mut best = self.plane(0).to_vec();
        let mut idx = vec![0u8; n];
        for c in 1..self.channels {
            for (p, &v) in self.plane(c).iter().enumerate() {
                if v > best[p] {
                    best[p] = v;
                    idx[p] = c as u8;
                }
            }
        }
        idx
    }

    /// Stacks `self` on top of `other` along the channel axis.
    pub(crate) fn concat(&self, other: &Self) -> Self {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Self {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Splits off the first `channels` planes.
    pub(crate) fn split(self, channels: usize) -> (Self, Self) {
        let at = channels * self.plane_len();
        let mut head = self.data;
        let tail = head.split_off(at);
        (
            Self {
                channels,
                height: self.height,
                width: self.width,
                data: head,
            },
            Self {
                channels: self.channels - channels,
                height: self.height,
                width: self.width,
                data: tail,
            },
        )
    }
}
