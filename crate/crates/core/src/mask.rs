//! Integer masks in global-class space and in per-category space.

use crate::error::{Error, Result};

/// Per-pixel global class ids (or the taxonomy's ignore id), row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_len(height, width, data.len())?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }
}

/// Per-pixel category-local indices for one category of a division strategy.
///
/// Predictions hold values in `0..n_out`; remapped labels may also carry the
/// ignore id.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CategoryMask {
    category_index: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl CategoryMask {
    pub fn new(category_index: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_len(height, width, data.len())?;
        Ok(Self {
            category_index,
            height,
            width,
            data,
        })
    }

    pub fn category_index(&self) -> usize {
        self.category_index
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }
}

fn check_len(height: usize, width: usize, len: usize) -> Result<()> {
    if height * width != len {
        return Err(Error::Contract(format!(
            "mask buffer holds {len} values but dimensions are {height}x{width}"
        )));
    }
    Ok(())
}
