//! Dense rank-4 volume in (channels, time, height, width) layout.
//!
//! All network activations and clips use this one container; 2D data sets
//! `t = 1` and vectors use plain `Vec<f64>`.

/// A (C, T, H, W) volume of f64 values, row-major with W fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Vol {
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Vol {
    pub fn zeros(c: usize, t: usize, h: usize, w: usize) -> Self {
        Self { c, t, h, w, data: vec![0.0; c * t * h * w] }
    }

    pub fn from_data(c: usize, t: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * t * h * w, "vol data length mismatch");
        Self { c, t, h, w, data }
    }

    #[inline]
    pub fn idx(&self, c: usize, t: usize, y: usize, x: usize) -> usize {
        ((c * self.t + t) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, t, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, t, y, x);
        self.data[i] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Vol) -> bool {
        self.c == other.c && self.t == other.t && self.h == other.h && self.w == other.w
    }

    /// Mean over (T, H, W) per channel.
    pub fn global_avg_pool(&self) -> Vec<f64> {
        let n = (self.t * self.h * self.w) as f64;
        let plane = self.t * self.h * self.w;
        (0..self.c)
            .map(|c| self.data[c * plane..(c + 1) * plane].iter().sum::<f64>() / n)
            .collect()
    }
}

/// Dot product of two equal-length slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
