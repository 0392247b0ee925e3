use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the network can run in. `f32` for play and training,
/// `f64` for finite-difference gradient checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    /// `c = alpha * a * b + beta * c` on strided row/column views.
    ///
    /// # Safety
    /// Callers go through [`gemm`], which bounds-checks every view.
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Read-only matrix view: element `(i, j)` lives at `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub struct View<'a, F> {
    pub data: &'a [F],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, F> View<'a, F> {
    pub fn row_major(data: &'a [F], cols: usize) -> Self {
        View { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows × cols` matrix.
    pub fn transposed(data: &'a [F], cols: usize) -> Self {
        View { data, rs: 1, cs: cols }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * self.rs + (cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c (m×n, row-major) = alpha * a (m×k) * b (k×n) + beta * c`.
pub fn gemm<F: Scalar>(m: usize, k: usize, n: usize, alpha: F, a: View<F>, b: View<F>, beta: F, c: &mut [F]) {
    a.check(m, k);
    b.check(k, n);
    assert!(c.len() >= m * n, "output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every index touched is bounds-checked above and the views do not alias `c`.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Named tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
    /// Batch-norm running statistics are stored and saved but never optimized.
    pub trainable: bool,
}

impl<F: Scalar> Param<F> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<F>, trainable: bool) -> Self {
        let len = shape.iter().product();
        assert_eq!(value.len(), len, "parameter data does not match its shape");
        Param { name: name.into(), shape, value, grad: vec![F::zero(); len], trainable }
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: F, trainable: bool) -> Self {
        let len = shape.iter().product();
        Param::new(name, shape, vec![v; len], trainable)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = F::zero());
    }

    pub fn cast<G: Scalar>(&self) -> Param<G> {
        Param {
            name: self.name.clone(),
            shape: self.shape.clone(),
            value: self.value.iter().map(|v| G::of(v.to_f64().unwrap())).collect(),
            grad: self.grad.iter().map(|v| G::of(v.to_f64().unwrap())).collect(),
            trainable: self.trainable,
        }
    }
}

/// Activations in channel-major layout: `data[c * batch * 49 + n * 49 + cell]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Act<F> {
    pub channels: usize,
    pub batch: usize,
    pub data: Vec<F>,
}

pub const HW: usize = crate::game::CELLS;

impl<F: Scalar> Act<F> {
    pub fn zeros(channels: usize, batch: usize) -> Self {
        Act { channels, batch, data: vec![F::zero(); channels * batch * HW] }
    }

    pub fn cols(&self) -> usize {
        self.batch * HW
    }

    pub fn channel(&self, c: usize) -> &[F] {
        let cols = self.cols();
        &self.data[c * cols..(c + 1) * cols]
    }

    /// Converts per-sample `[channel][cell]` inputs to channel-major.
    pub fn from_samples(samples: &[&[F]], channels: usize) -> Self {
        let batch = samples.len();
        let mut act = Act::zeros(channels, batch);
        let cols = batch * HW;
        for (n, s) in samples.iter().enumerate() {
            assert_eq!(s.len(), channels * HW, "input sample has the wrong length");
            for c in 0..channels {
                act.data[c * cols + n * HW..c * cols + (n + 1) * HW].copy_from_slice(&s[c * HW..(c + 1) * HW]);
            }
        }
        act
    }

    /// Flattens to `[batch][channel * 49]` for fully connected layers.
    pub fn to_features(&self) -> Vec<F> {
        let per = self.channels * HW;
        let cols = self.cols();
        let mut out = vec![F::zero(); self.batch * per];
        for c in 0..self.channels {
            for n in 0..self.batch {
                out[n * per + c * HW..n * per + (c + 1) * HW]
                    .copy_from_slice(&self.data[c * cols + n * HW..c * cols + (n + 1) * HW]);
            }
        }
        out
    }

    pub fn from_features(features: &[F], channels: usize, batch: usize) -> Self {
        let per = channels * HW;
        let mut act = Act::zeros(channels, batch);
        let cols = act.cols();
        for c in 0..channels {
            for n in 0..batch {
                act.data[c * cols + n * HW..c * cols + (n + 1) * HW]
                    .copy_from_slice(&features[n * per + c * HW..n * per + (c + 1) * HW]);
            }
        }
        act
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|x| x as f64).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|x| (x as f64) * 0.5).collect(); // 3×4
        let mut c = vec![1.0; 8];
        gemm(2, 3, 4, 1.0, View::row_major(&a, 3), View::row_major(&b, 4), 1.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = 1.0 + (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum::<f64>();
                assert_eq!(c[i * 4 + j], want);
            }
        }
        // aᵀ (3×2) × a (2×3)
        let mut d = vec![0.0; 9];
        gemm(3, 2, 3, 1.0, View::transposed(&a, 3), View::row_major(&a, 3), 0.0, &mut d);
        assert_eq!(d[0], 0.0 * 0.0 + 3.0 * 3.0);
        assert_eq!(d[5], 1.0 * 2.0 + 4.0 * 5.0);
    }

    #[test]
    fn feature_layout_round_trip() {
        let data: Vec<f32> = (0..2 * 3 * HW).map(|x| x as f32).collect();
        let act = Act { channels: 2, batch: 3, data };
        let f = act.to_features();
        assert_eq!(f[HW], act.data[3 * HW]);
        assert_eq!(Act::from_features(&f, 2, 3), act);
    }
}
