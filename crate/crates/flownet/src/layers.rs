//! Tensor storage and the convolution primitives with their adjoints.
//!
//! Tensors are channel-major (`C x H x W`). Convolutions run as im2col plus a
//! matrix product, so forward and backward passes share one GEMM kernel.

use num_traits::Float;

/// Floating-point type the network runs in: `f32` for training, `f64` for
/// finite-difference checks.
pub trait Real: Float + Copy + Send + Sync + std::fmt::Debug + std::iter::Sum + Default + 'static {
    /// `c = alpha * a * b + beta * c` with row-major `a: m x k`, `b: k x n`, `c: m x n`.
    /// `trans_a` / `trans_b` read the stored matrix transposed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], trans_a: bool, b: &[Self], trans_b: bool, beta: Self, c: &mut [Self]);
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            fn gemm(m: usize, k: usize, n: usize, a: &[Self], trans_a: bool, b: &[Self], trans_b: bool, beta: Self, c: &mut [Self]) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                // strides for a stored as m x k (or k x m when transposed)
                let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
                // SAFETY: the slices hold at least m*k, k*n and m*n elements (asserted
                // above) and the strides address exactly those row-major layouts.
                unsafe {
                    $kernel(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
                }
            }

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    /// RGB image scaled to `[0, 1]` per channel.
    pub fn from_rgb(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut t = Self::zeros(3, h, w);
        let scale = T::from_f64(1.0 / 255.0);
        for (i, p) in img.pixels().enumerate() {
            for ch in 0..3 {
                t.data[ch * h * w + i] = T::from_f64(p[ch] as f64) * scale;
            }
        }
        t
    }

    /// Stacks two tensors of equal spatial size along channels.
    pub fn concat(a: &Self, b: &Self) -> Self {
        assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Geometry of a square-kernel convolution with symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Output size of the transposed convolution.
    pub fn transposed_out_size(&self, n: usize) -> usize {
        (n - 1) * self.stride + self.k - 2 * self.pad
    }
}

/// Unfolds `x` into a `(C k k) x (Ho Wo)` matrix.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize, cols: &mut Vec<T>) {
    let k = g.k;
    cols.clear();
    cols.resize(c * k * k * ho * wo, T::zero());
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[ch * h * w + iy as usize * w..][..w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates the column matrix back into `x`.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, g: ConvGeom, ho: usize, wo: usize, x: &mut [T]) {
    let k = g.k;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut x[ch * h * w + iy as usize * w..][..w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution. `weight` is `[cout][cin][k][k]`, `bias` is `[cout]`.
pub fn conv_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], cout: usize, g: ConvGeom, cols: &mut Vec<T>) -> Tensor<T> {
    let (ho, wo) = (g.out_size(x.h), g.out_size(x.w));
    im2col(&x.data, x.c, x.h, x.w, g, ho, wo, cols);
    let mut y = Tensor::zeros(cout, ho, wo);
    for (o, b) in bias.iter().enumerate() {
        y.data[o * ho * wo..(o + 1) * ho * wo].fill(*b);
    }
    T::gemm(cout, x.c * g.k * g.k, ho * wo, weight, false, cols, false, T::one(), &mut y.data);
    y
}

/// Backward of [`conv_forward`]: accumulates into `dweight` / `dbias` and returns
/// the input gradient (skipped when `need_dx` is false).
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    g: ConvGeom,
    need_dx: bool,
    cols: &mut Vec<T>,
) -> Option<Tensor<T>> {
    let (cout, ho, wo) = dy.shape();
    let kk = x.c * g.k * g.k;
    for (o, db) in dbias.iter_mut().enumerate() {
        *db = *db + dy.data[o * ho * wo..(o + 1) * ho * wo].iter().copied().sum::<T>();
    }
    im2col(&x.data, x.c, x.h, x.w, g, ho, wo, cols);
    T::gemm(cout, ho * wo, kk, &dy.data, false, cols, true, T::one(), dweight);
    if !need_dx {
        return None;
    }
    let mut dcols = vec![T::zero(); kk * ho * wo];
    T::gemm(kk, cout, ho * wo, weight, true, &dy.data, false, T::zero(), &mut dcols);
    let mut dx = Tensor::zeros(x.c, x.h, x.w);
    col2im(&dcols, x.c, x.h, x.w, g, ho, wo, &mut dx.data);
    Some(dx)
}

/// Transposed convolution. `weight` is `[cin][cout][k][k]`, `bias` is `[cout]`.
pub fn deconv_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], cout: usize, g: ConvGeom) -> Tensor<T> {
    let (ho, wo) = (g.transposed_out_size(x.h), g.transposed_out_size(x.w));
    let kk = cout * g.k * g.k;
    // columns indexed by input pixel: cols = W^T x
    let mut cols = vec![T::zero(); kk * x.h * x.w];
    T::gemm(kk, x.c, x.h * x.w, weight, true, &x.data, false, T::zero(), &mut cols);
    let mut y = Tensor::zeros(cout, ho, wo);
    col2im(&cols, cout, ho, wo, g, x.h, x.w, &mut y.data);
    for (o, b) in bias.iter().enumerate() {
        y.data[o * ho * wo..(o + 1) * ho * wo].iter_mut().for_each(|v| *v = *v + *b);
    }
    y
}

/// Backward of [`deconv_forward`].
#[allow(clippy::too_many_arguments)]
pub fn deconv_backward<T: Real>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    weight: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    g: ConvGeom,
    need_dx: bool,
    cols: &mut Vec<T>,
) -> Option<Tensor<T>> {
    let (cout, ho, wo) = dy.shape();
    let kk = cout * g.k * g.k;
    for (o, db) in dbias.iter_mut().enumerate() {
        *db = *db + dy.data[o * ho * wo..(o + 1) * ho * wo].iter().copied().sum::<T>();
    }
    im2col(&dy.data, cout, ho, wo, g, x.h, x.w, cols);
    // dW[cin][kk] += x[cin][p] * cols[kk][p]
    T::gemm(x.c, x.h * x.w, kk, &x.data, false, cols, true, T::one(), dweight);
    if !need_dx {
        return None;
    }
    let mut dx = Tensor::zeros(x.c, x.h, x.w);
    T::gemm(x.c, kk, x.h * x.w, weight, false, cols, false, T::zero(), &mut dx.data);
    Some(dx)
}

pub fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    x.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Zeroes `dy` where the ReLU output was not positive.
pub fn relu_backward_inplace<T: Real>(y: &Tensor<T>, dy: &mut Tensor<T>) {
    for (g, v) in dy.data.iter_mut().zip(&y.data) {
        if *v <= T::zero() {
            *g = T::zero();
        }
    }
}
