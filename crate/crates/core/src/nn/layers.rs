use rand::Rng;

use super::tensor::{gemm, Act, Param, Scalar, View, HW};
use crate::game::SIZE;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

fn xavier<F: Scalar, R: Rng + ?Sized>(len: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| F::of(rng.random_range(-limit..limit))).collect()
}

/// For each output cell and kernel tap, the input cell it reads (or `None` in the zero padding).
fn tap_table(kernel: usize) -> Vec<Option<u8>> {
    let half = (kernel / 2) as i32;
    let mut table = Vec::with_capacity(kernel * kernel * HW);
    for kk in 0..kernel * kernel {
        let dr = (kk / kernel) as i32 - half;
        let dc = (kk % kernel) as i32 - half;
        for p in 0..HW {
            let r = (p / SIZE) as i32 + dr;
            let c = (p % SIZE) as i32 + dc;
            let inside = (0..SIZE as i32).contains(&r) && (0..SIZE as i32).contains(&c);
            table.push(inside.then(|| (r * SIZE as i32 + c) as u8));
        }
    }
    table
}

/// Same-padded, stride-1 convolution over the 7×7 board.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<F> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
    taps: Vec<Option<u8>>,
}

pub struct ConvCache<F> {
    /// im2col matrix (`in·k² × batch·49`); for 1×1 kernels this is the input itself.
    col: Vec<F>,
    batch: usize,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let k2 = kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            vec![out_channels, in_channels, kernel, kernel],
            xavier(out_channels * in_channels * k2, in_channels * k2, out_channels * k2, rng),
            true,
        );
        let bias = bias.then(|| Param::filled(format!("{name}.bias"), vec![out_channels], F::zero(), true));
        Conv2d { in_channels, out_channels, kernel, weight, bias, taps: tap_table(kernel) }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn im2col(&self, x: &Act<F>) -> Vec<F> {
        if self.kernel == 1 {
            return x.data.clone();
        }
        let k2 = self.kernel * self.kernel;
        let cols = x.cols();
        let mut col = vec![F::zero(); self.patch_len() * cols];
        for ci in 0..self.in_channels {
            let src = x.channel(ci);
            for kk in 0..k2 {
                let row = &mut col[(ci * k2 + kk) * cols..(ci * k2 + kk + 1) * cols];
                let taps = &self.taps[kk * HW..(kk + 1) * HW];
                for n in 0..x.batch {
                    let base = n * HW;
                    for (p, tap) in taps.iter().enumerate() {
                        if let Some(s) = tap {
                            row[base + p] = src[base + *s as usize];
                        }
                    }
                }
            }
        }
        col
    }

    pub fn forward(&self, x: &Act<F>) -> (Act<F>, ConvCache<F>) {
        assert_eq!(x.channels, self.in_channels, "{}: channel mismatch", self.weight.name);
        let cols = x.cols();
        let col = self.im2col(x);
        let mut y = Act::zeros(self.out_channels, x.batch);
        let k = self.patch_len();
        gemm(
            self.out_channels,
            k,
            cols,
            F::one(),
            View::row_major(&self.weight.value, k),
            View::row_major(&col, cols),
            F::zero(),
            &mut y.data,
        );
        if let Some(b) = &self.bias {
            for (co, bv) in b.value.iter().enumerate() {
                y.data[co * cols..(co + 1) * cols].iter_mut().for_each(|v| *v += *bv);
            }
        }
        (y, ConvCache { col, batch: x.batch })
    }

    /// Inference path that skips keeping the im2col buffer around.
    pub fn infer(&self, x: &Act<F>) -> Act<F> {
        self.forward(x).0
    }

    pub fn backward(&mut self, cache: &ConvCache<F>, dy: &Act<F>) -> Act<F> {
        let cols = cache.batch * HW;
        let k = self.patch_len();
        gemm(
            self.out_channels,
            cols,
            k,
            F::one(),
            View::row_major(&dy.data, cols),
            View::transposed(&cache.col, cols),
            F::one(),
            &mut self.weight.grad,
        );
        if let Some(b) = &mut self.bias {
            for co in 0..self.out_channels {
                b.grad[co] += dy.data[co * cols..(co + 1) * cols].iter().copied().sum();
            }
        }
        let mut dcol = vec![F::zero(); k * cols];
        gemm(
            k,
            self.out_channels,
            cols,
            F::one(),
            View::transposed(&self.weight.value, k),
            View::row_major(&dy.data, cols),
            F::zero(),
            &mut dcol,
        );
        if self.kernel == 1 {
            return Act { channels: self.in_channels, batch: cache.batch, data: dcol };
        }
        let k2 = self.kernel * self.kernel;
        let mut dx = Act::zeros(self.in_channels, cache.batch);
        for ci in 0..self.in_channels {
            let dst = &mut dx.data[ci * cols..(ci + 1) * cols];
            for kk in 0..k2 {
                let row = &dcol[(ci * k2 + kk) * cols..(ci * k2 + kk + 1) * cols];
                let taps = &self.taps[kk * HW..(kk + 1) * HW];
                for n in 0..cache.batch {
                    let base = n * HW;
                    for (p, tap) in taps.iter().enumerate() {
                        if let Some(s) = tap {
                            dst[base + *s as usize] += row[base + p];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }

    pub fn cast<G: Scalar>(&self) -> Conv2d<G> {
        Conv2d {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(Param::cast),
            taps: self.taps.clone(),
        }
    }
}

/// Per-channel batch normalization over batch × cells.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Param<F>,
    pub running_var: Param<F>,
}

pub struct BnCache<F> {
    xhat: Vec<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Param::filled(format!("{name}.gamma"), vec![channels], F::one(), true),
            beta: Param::filled(format!("{name}.beta"), vec![channels], F::zero(), true),
            running_mean: Param::filled(format!("{name}.running_mean"), vec![channels], F::zero(), false),
            running_var: Param::filled(format!("{name}.running_var"), vec![channels], F::one(), false),
        }
    }

    /// Normalizes with batch statistics and folds them into the running averages.
    pub fn forward_train(&mut self, x: &mut Act<F>) -> BnCache<F> {
        let cols = x.cols();
        let m = F::of(cols as f64);
        let eps = F::of(BN_EPS);
        let mom = F::of(BN_MOMENTUM);
        let mut xhat = vec![F::zero(); x.data.len()];
        let mut inv_std = Vec::with_capacity(x.channels);
        for c in 0..x.channels {
            let xs = &mut x.data[c * cols..(c + 1) * cols];
            let mean = xs.iter().copied().sum::<F>() / m;
            let var = xs.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() / m;
            let is = F::one() / (var + eps).sqrt();
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for (v, h) in xs.iter_mut().zip(&mut xhat[c * cols..(c + 1) * cols]) {
                *h = (*v - mean) * is;
                *v = g * *h + b;
            }
            inv_std.push(is);
            let unbiased = if cols > 1 { var * m / (m - F::one()) } else { var };
            self.running_mean.value[c] = mom * self.running_mean.value[c] + (F::one() - mom) * mean;
            self.running_var.value[c] = mom * self.running_var.value[c] + (F::one() - mom) * unbiased;
        }
        BnCache { xhat, inv_std }
    }

    pub fn forward_eval(&self, x: &mut Act<F>) {
        let cols = x.cols();
        let eps = F::of(BN_EPS);
        for c in 0..x.channels {
            let is = F::one() / (self.running_var.value[c] + eps).sqrt();
            let scale = self.gamma.value[c] * is;
            let shift = self.beta.value[c] - self.running_mean.value[c] * scale;
            x.data[c * cols..(c + 1) * cols].iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }

    pub fn backward(&mut self, cache: &BnCache<F>, dy: &mut Act<F>) {
        let cols = dy.cols();
        let m = F::of(cols as f64);
        for c in 0..dy.channels {
            let d = &mut dy.data[c * cols..(c + 1) * cols];
            let xh = &cache.xhat[c * cols..(c + 1) * cols];
            let dbeta: F = d.iter().copied().sum();
            let dgamma: F = d.iter().zip(xh).map(|(a, b)| *a * *b).sum();
            self.gamma.grad[c] += dgamma;
            self.beta.grad[c] += dbeta;
            let k = self.gamma.value[c] * cache.inv_std[c] / m;
            for (v, h) in d.iter_mut().zip(xh) {
                *v = k * (m * *v - dbeta - *h * dgamma);
            }
        }
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }

    pub fn cast<G: Scalar>(&self) -> BatchNorm<G> {
        BatchNorm {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
        }
    }
}

/// Fully connected layer on `[batch][features]` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<F> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param<F>,
    pub bias: Param<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Linear {
            inputs,
            outputs,
            weight: Param::new(
                format!("{name}.weight"),
                vec![outputs, inputs],
                xavier(outputs * inputs, inputs, outputs, rng),
                true,
            ),
            bias: Param::filled(format!("{name}.bias"), vec![outputs], F::zero(), true),
        }
    }

    pub fn forward(&self, x: &[F], batch: usize) -> Vec<F> {
        assert_eq!(x.len(), batch * self.inputs, "{}: input width mismatch", self.weight.name);
        let mut y = Vec::with_capacity(batch * self.outputs);
        for _ in 0..batch {
            y.extend_from_slice(&self.bias.value);
        }
        gemm(
            batch,
            self.inputs,
            self.outputs,
            F::one(),
            View::row_major(x, self.inputs),
            View::transposed(&self.weight.value, self.inputs),
            F::one(),
            &mut y,
        );
        y
    }

    pub fn backward(&mut self, x: &[F], dy: &[F], batch: usize) -> Vec<F> {
        gemm(
            self.outputs,
            batch,
            self.inputs,
            F::one(),
            View::transposed(dy, self.outputs),
            View::row_major(x, self.inputs),
            F::one(),
            &mut self.weight.grad,
        );
        for n in 0..batch {
            for (g, d) in self.bias.grad.iter_mut().zip(&dy[n * self.outputs..(n + 1) * self.outputs]) {
                *g += *d;
            }
        }
        let mut dx = vec![F::zero(); batch * self.inputs];
        gemm(
            batch,
            self.outputs,
            self.inputs,
            F::one(),
            View::row_major(dy, self.outputs),
            View::row_major(&self.weight.value, self.inputs),
            F::zero(),
            &mut dx,
        );
        dx
    }

    pub fn params(&self) -> Vec<&Param<F>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn cast<G: Scalar>(&self) -> Linear<G> {
        Linear { inputs: self.inputs, outputs: self.outputs, weight: self.weight.cast(), bias: self.bias.cast() }
    }
}

pub fn relu_in_place<F: Scalar>(xs: &mut [F]) {
    xs.iter_mut().for_each(|v| {
        if *v < F::zero() {
            *v = F::zero()
        }
    });
}

/// Zeroes gradient entries where the forward output was clipped.
pub fn relu_backward<F: Scalar>(out: &[F], grad: &mut [F]) {
    for (g, o) in grad.iter_mut().zip(out) {
        if *o <= F::zero() {
            *g = F::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct 3×3 convolution for one sample, used to check im2col.
    fn naive_conv(conv: &Conv2d<f64>, x: &Act<f64>) -> Act<f64> {
        let mut y = Act::zeros(conv.out_channels, x.batch);
        let k = conv.kernel as i32;
        let cols = x.cols();
        for n in 0..x.batch {
            for co in 0..conv.out_channels {
                for p in 0..HW {
                    let (r, c) = ((p / 7) as i32, (p % 7) as i32);
                    let mut acc = 0.0;
                    for ci in 0..conv.in_channels {
                        for kr in 0..k {
                            for kc in 0..k {
                                let (rr, cc) = (r + kr - k / 2, c + kc - k / 2);
                                if (0..7).contains(&rr) && (0..7).contains(&cc) {
                                    let w = conv.weight.value[((co * conv.in_channels + ci) * k as usize + kr as usize) * k as usize + kc as usize];
                                    acc += w * x.data[ci * cols + n * HW + (rr * 7 + cc) as usize];
                                }
                            }
                        }
                    }
                    y.data[co * cols + n * HW + p] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv3x3_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::<f64>::new("c", 3, 4, 3, false, &mut rng);
        let x = Act { channels: 3, batch: 2, data: (0..3 * 2 * HW).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (y, _) = conv.forward(&x);
        let want = naive_conv(&conv, &x);
        for (a, b) in y.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_normalizes() {
        let mut bn = BatchNorm::<f64>::new("bn", 2);
        let mut x = Act { channels: 2, batch: 2, data: (0..2 * 2 * HW).map(|v| v as f64).collect() };
        bn.forward_train(&mut x);
        for c in 0..2 {
            let ch = x.channel(c);
            let mean: f64 = ch.iter().sum::<f64>() / ch.len() as f64;
            let var: f64 = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ch.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean.value[0] > 0.0);
    }
}
