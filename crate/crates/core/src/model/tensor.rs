//! Minimal NCHW tensor used by the model. Not a general tensor library:
//! just the contiguous 4-D storage the segmentation nets need.

/// Batched feature map, stored contiguously as (image, channel, row, col).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn from_data(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * h * w);
        Self { n, c, h, w, data }
    }

    #[inline]
    pub fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn image(&self, n: usize) -> &[f64] {
        let len = self.image_len();
        &self.data[n * len..(n + 1) * len]
    }

    #[inline]
    pub fn image_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.image_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// One (image, channel) plane.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.h * self.w;
        let base = (n * self.c + c) * hw;
        &self.data[base..base + hw]
    }

    pub fn same_shape(&self, other: &Tensor4) -> bool {
        self.n == other.n && self.c == other.c && self.h == other.h && self.w == other.w
    }

    /// Concatenates two tensors along the channel axis.
    pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Tensor4 {
        assert_eq!(a.n, b.n);
        assert_eq!(a.h, b.h);
        assert_eq!(a.w, b.w);
        let mut out = Tensor4::zeros(a.n, a.c + b.c, a.h, a.w);
        let (la, lb) = (a.image_len(), b.image_len());
        for n in 0..a.n {
            let dst = out.image_mut(n);
            dst[..la].copy_from_slice(a.image(n));
            dst[la..la + lb].copy_from_slice(b.image(n));
        }
        out
    }

    /// Splits a channel-concatenated gradient back into the two halves.
    pub fn split_channels(&self, c_first: usize) -> (Tensor4, Tensor4) {
        assert!(c_first < self.c);
        let c_second = self.c - c_first;
        let mut a = Tensor4::zeros(self.n, c_first, self.h, self.w);
        let mut b = Tensor4::zeros(self.n, c_second, self.h, self.w);
        let (la, lb) = (a.image_len(), b.image_len());
        for n in 0..self.n {
            let src = self.image(n);
            a.image_mut(n).copy_from_slice(&src[..la]);
            b.image_mut(n).copy_from_slice(&src[la..la + lb]);
        }
        (a, b)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor4::from_data(2, 1, 2, 2, (0..8).map(f64::from).collect());
        let b = Tensor4::from_data(2, 2, 2, 2, (8..24).map(f64::from).collect());
        let cat = Tensor4::concat_channels(&a, &b);
        assert_eq!(cat.c, 3);
        let (a2, b2) = cat.split_channels(1);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }
}
