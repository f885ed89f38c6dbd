//! Dense and 1-D convolution layers with explicit backward passes.
//!
//! Batches are the leading dimension. Convolution input is time-major with
//! channels last (`[B, L, C]`), which makes every receptive field a contiguous
//! run of memory and lets both passes go through one strided GEMM per sample.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `C = A·B + beta·C` over strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers size `a`, `b`, `c` so that every strided index touched
    // for an m×k, k×n, m×n product is in bounds; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    /// `x / (1 + |x|)`: tanh-shaped, continuously differentiable, and much
    /// cheaper to evaluate.
    Softsign,
}

impl Activation {
    pub fn forward_inplace(self, t: &mut Tensor) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => t.data_mut().iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Relu => t.data_mut().iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Softsign => t.data_mut().iter_mut().for_each(|x| *x /= 1.0 + x.abs()),
        }
    }

    /// Converts `dy` (gradient w.r.t. the activation output `y`) into the
    /// gradient w.r.t. its input, in place.
    pub fn backward_inplace(self, y: &Tensor, dy: &mut Tensor) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => dy
                .data_mut()
                .iter_mut()
                .zip(y.data())
                .for_each(|(d, y)| *d *= 1.0 - y * y),
            Activation::Relu => dy
                .data_mut()
                .iter_mut()
                .zip(y.data())
                .for_each(|(d, y)| {
                    if *y <= 0.0 {
                        *d = 0.0
                    }
                }),
            Activation::Softsign => dy.data_mut().iter_mut().zip(y.data()).for_each(|(d, y)| {
                let s = 1.0 - y.abs();
                *d *= s * s
            }),
        }
    }
}

/// `y = x·Wᵀ + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    /// Fan-in uniform init, `±1/sqrt(in)`.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self::with_bound(input, output, bound, rng)
    }

    pub fn with_bound<R: Rng + ?Sized>(input: usize, output: usize, bound: f64, rng: &mut R) -> Self {
        Dense {
            weight: Tensor::uniform(&[output, input], bound, rng),
            bias: Tensor::uniform(&[output], bound, rng),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::ShapeMismatch(format!(
                "dense weight {:?} with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Dense { weight, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (inp, out) = (self.input_dim(), self.output_dim());
        if x.row_len() != inp {
            return Err(Error::ShapeMismatch(format!(
                "dense expects {inp} inputs, got {:?}",
                x.shape()
            )));
        }
        let b = x.rows();
        let mut y = Tensor::zeros(&[b, out]);
        {
            let yd = y.data_mut();
            for r in 0..b {
                yd[r * out..(r + 1) * out].copy_from_slice(self.bias.data());
            }
        }
        gemm(
            b,
            inp,
            out,
            x.data(),
            inp as isize,
            1,
            self.weight.data(),
            1,
            inp as isize,
            1.0,
            y.data_mut(),
            out as isize,
            1,
        );
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` and returns `dx` when
    /// `want_dx` is set.
    pub fn backward(
        &self,
        x: &Tensor,
        dy: &Tensor,
        grads: &mut DenseGrads,
        want_dx: bool,
    ) -> Result<Option<Tensor>> {
        let (inp, out) = (self.input_dim(), self.output_dim());
        let b = x.rows();
        if dy.rows() != b || dy.row_len() != out || x.row_len() != inp {
            return Err(Error::ShapeMismatch(format!(
                "dense backward: x {:?}, dy {:?}, layer {inp}->{out}",
                x.shape(),
                dy.shape()
            )));
        }
        // dW += dyᵀ·x
        gemm(
            out,
            b,
            inp,
            dy.data(),
            1,
            out as isize,
            x.data(),
            inp as isize,
            1,
            1.0,
            grads.weight.data_mut(),
            inp as isize,
            1,
        );
        let db = grads.bias.data_mut();
        for r in 0..b {
            for (g, d) in db.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        if !want_dx {
            return Ok(None);
        }
        let mut dx = Tensor::zeros(&[b, inp]);
        gemm(
            b,
            out,
            inp,
            dy.data(),
            out as isize,
            1,
            self.weight.data(),
            inp as isize,
            1,
            0.0,
            dx.data_mut(),
            inp as isize,
            1,
        );
        Ok(Some(dx))
    }

    pub fn zero_grads(&self) -> DenseGrads {
        DenseGrads {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Valid (unpadded) 1-D convolution, stride 1.
///
/// Filters are stored `[F, W, C]`; input `[B, L, C]`; output `[B, L-W+1, F]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub filters: Tensor,
    pub bias: Tensor,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, n_filters: usize, width: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((in_channels * width) as f64).sqrt();
        Conv1d {
            filters: Tensor::uniform(&[n_filters, width, in_channels], bound, rng),
            bias: Tensor::uniform(&[n_filters], bound, rng),
        }
    }

    pub fn from_parts(filters: Tensor, bias: Tensor) -> Result<Self> {
        if filters.shape().len() != 3 || bias.shape() != [filters.shape()[0]] {
            return Err(Error::ShapeMismatch(format!(
                "conv filters {:?} with bias {:?}",
                filters.shape(),
                bias.shape()
            )));
        }
        Ok(Conv1d { filters, bias })
    }

    pub fn n_filters(&self) -> usize {
        self.filters.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.filters.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.filters.shape()[2]
    }

    pub fn output_len(&self, input_len: usize) -> Result<usize> {
        let w = self.width();
        if input_len < w {
            return Err(Error::InputTooShort {
                len: input_len,
                width: w,
            });
        }
        Ok(input_len - w + 1)
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        if x.shape().len() != 3 || x.shape()[2] != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "conv expects [B, L, {}], got {:?}",
                self.in_channels(),
                x.shape()
            )));
        }
        let (b, l) = (x.shape()[0], x.shape()[1]);
        let lout = self.output_len(l)?;
        Ok((b, l, lout))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, lout) = self.check_input(x)?;
        let (f, c) = (self.n_filters(), self.in_channels());
        let k = self.width() * c;
        let mut y = Tensor::zeros(&[b, lout, f]);
        {
            let yd = y.data_mut();
            for r in 0..b * lout {
                yd[r * f..(r + 1) * f].copy_from_slice(self.bias.data());
            }
        }
        for s in 0..b {
            let xs = &x.data()[s * l * c..(s + 1) * l * c];
            let ys = &mut y.data_mut()[s * lout * f..(s + 1) * lout * f];
            // overlapping patch rows: stride c, length k
            gemm(
                lout,
                k,
                f,
                xs,
                c as isize,
                1,
                self.filters.data(),
                1,
                k as isize,
                1.0,
                ys,
                f as isize,
                1,
            );
        }
        Ok(y)
    }

    pub fn backward(
        &self,
        x: &Tensor,
        dy: &Tensor,
        grads: &mut ConvGrads,
        want_dx: bool,
    ) -> Result<Option<Tensor>> {
        let (b, l, lout) = self.check_input(x)?;
        let (f, c, w) = (self.n_filters(), self.in_channels(), self.width());
        let k = w * c;
        if dy.shape() != [b, lout, f] {
            return Err(Error::ShapeMismatch(format!(
                "conv backward: dy {:?}, expected {:?}",
                dy.shape(),
                [b, lout, f]
            )));
        }
        for s in 0..b {
            let xs = &x.data()[s * l * c..(s + 1) * l * c];
            let dys = &dy.data()[s * lout * f..(s + 1) * lout * f];
            // dFilters[F, K] += dyᵀ[F, Lout] · patches[Lout, K]
            gemm(
                f,
                lout,
                k,
                dys,
                1,
                f as isize,
                xs,
                c as isize,
                1,
                1.0,
                grads.filters.data_mut(),
                k as isize,
                1,
            );
        }
        let db = grads.bias.data_mut();
        for r in 0..b * lout {
            for (g, d) in db.iter_mut().zip(&dy.data()[r * f..(r + 1) * f]) {
                *g += d;
            }
        }
        if !want_dx {
            return Ok(None);
        }
        let mut dx = Tensor::zeros(&[b, l, c]);
        let mut patch_grad = vec![0.0; lout * k];
        for s in 0..b {
            let dys = &dy.data()[s * lout * f..(s + 1) * lout * f];
            gemm(
                lout,
                f,
                k,
                dys,
                f as isize,
                1,
                self.filters.data(),
                k as isize,
                1,
                0.0,
                &mut patch_grad,
                k as isize,
                1,
            );
            let dxs = &mut dx.data_mut()[s * l * c..(s + 1) * l * c];
            for t in 0..lout {
                let src = &patch_grad[t * k..(t + 1) * k];
                for (d, g) in dxs[t * c..t * c + k].iter_mut().zip(src) {
                    *d += g;
                }
            }
        }
        Ok(Some(dx))
    }

    pub fn zero_grads(&self) -> ConvGrads {
        ConvGrads {
            filters: Tensor::zeros(self.filters.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub filters: Tensor,
    pub bias: Tensor,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_identity() {
        let mut w = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let layer = Dense::from_parts(w, Tensor::zeros(&[3])).unwrap();
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn dense_scalar_chain_rule() {
        let layer = Dense::from_parts(
            Tensor::from_vec(&[1, 1], vec![2.0]).unwrap(),
            Tensor::scalar_vec(&[3.0]),
        )
        .unwrap();
        let x = Tensor::from_vec(&[1, 1], vec![5.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().data(), &[13.0]);
        let mut g = layer.zero_grads();
        let dy = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let dx = layer.backward(&x, &dy, &mut g, true).unwrap().unwrap();
        assert_eq!(g.weight.data(), &[5.0]);
        assert_eq!(g.bias.data(), &[1.0]);
        assert_eq!(dx.data(), &[2.0]);
    }

    #[test]
    fn dense_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Dense::new(4, 2, &mut rng);
        let x = Tensor::zeros(&[1, 3]);
        assert!(matches!(layer.forward(&x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn conv_all_ones() {
        let c = 4;
        let conv = Conv1d::from_parts(
            Tensor::from_vec(&[1, 3, c], vec![1.0; 3 * c]).unwrap(),
            Tensor::zeros(&[1]),
        )
        .unwrap();
        let x = Tensor::from_vec(&[1, 16, c], vec![1.0; 16 * c]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 14, 1]);
        assert!(y.data().iter().all(|v| *v == 3.0 * c as f64));
    }

    #[test]
    fn conv_output_length_and_short_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::new(4, 32, 3, &mut rng);
        let y = conv.forward(&Tensor::zeros(&[2, 16, 4])).unwrap();
        assert_eq!(y.shape(), &[2, 14, 32]);
        assert!(matches!(
            conv.forward(&Tensor::zeros(&[1, 2, 4])),
            Err(Error::InputTooShort { len: 2, width: 3 })
        ));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv1d::new(2, 3, 3, &mut rng);
        let x = Tensor::uniform(&[2, 6, 2], 1.0, &mut rng);
        let y = conv.forward(&x).unwrap();
        for s in 0..2 {
            for t in 0..4 {
                for f in 0..3 {
                    let mut acc = conv.bias.data()[f];
                    for dw in 0..3 {
                        for ch in 0..2 {
                            acc += conv.filters.data()[f * 6 + dw * 2 + ch]
                                * x.data()[s * 12 + (t + dw) * 2 + ch];
                        }
                    }
                    let got = y.data()[s * 12 + t * 3 + f];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }
}
