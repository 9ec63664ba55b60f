use crate::error::{Error, Result};

/// Pixel label id that losses and metrics skip.
pub const IGNORE_INDEX: u32 = 255;

/// Integer class map shaped `(n, 1, h, w)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u32>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u32>) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || data.len() != n * h * w {
            return Err(Error::InvalidShape(format!(
                "label map {n}x{h}x{w} with {} entries",
                data.len()
            )));
        }
        Ok(LabelMap { n, h, w, data })
    }

    pub fn filled(n: usize, h: usize, w: usize, label: u32) -> Result<Self> {
        Self::new(n, h, w, vec![label; n * h * w])
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn get(&self, n: usize, y: usize, x: usize) -> u32 {
        self.data[(n * self.h + y) * self.w + x]
    }

    /// Stack single-image maps of equal extents into one batch.
    pub fn stack(items: &[&LabelMap]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Usage("empty label batch".into()))?;
        let mut data = Vec::new();
        let mut n = 0;
        for m in items {
            if m.h != first.h || m.w != first.w {
                return Err(Error::InvalidShape(format!(
                    "label maps {}x{} and {}x{} cannot be stacked",
                    first.h, first.w, m.h, m.w
                )));
            }
            n += m.n;
            data.extend_from_slice(&m.data);
        }
        Self::new(n, first.h, first.w, data)
    }

    pub fn resize_nearest(&self, h: usize, w: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(self.n * h * w);
        for n in 0..self.n {
            for y in 0..h {
                for x in 0..w {
                    data.push(self.get(n, y * self.h / h, x * self.w / w));
                }
            }
        }
        Self::new(self.n, h, w, data)
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.h || x0 + w > self.w {
            return Err(Error::Shape(format!("crop {h}x{w} at ({y0},{x0}) outside {}x{}", self.h, self.w)));
        }
        let mut data = Vec::with_capacity(self.n * h * w);
        for n in 0..self.n {
            for y in 0..h {
                for x in 0..w {
                    data.push(self.get(n, y0 + y, x0 + x));
                }
            }
        }
        Self::new(self.n, h, w, data)
    }
}
