//! Inner loops shared by the forward and backward passes.
//!
//! Reductions use eight independent accumulators so the compiler can keep
//! them in vector registers; the summation order is fixed, so results are
//! bit-reproducible for a given build.

use super::tensor::Real;

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let xa = &a[i * 8..i * 8 + 8];
        let xb = &b[i * 8..i * 8 + 8];
        for j in 0..8 {
            acc[j] += xa[j] * xb[j];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sum<T: Real>(x: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = x.len() / 8;
    for i in 0..chunks {
        for j in 0..8 {
            acc[j] += x[i * 8 + j];
        }
    }
    let mut tail = T::zero();
    for &v in &x[chunks * 8..] {
        tail += v;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub k_h: usize,
    pub k_w: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        self.in_h - self.k_h + 1
    }

    pub fn out_w(&self) -> usize {
        self.in_w - self.k_w + 1
    }
}

pub fn conv2d_forward<T: Real>(d: &ConvDims, x: &[T], k: &[T], b: &[T], out: &mut [T]) {
    let (oh_n, ow_n) = (d.out_h(), d.out_w());
    let in_plane = d.in_h * d.in_w;
    let out_plane = oh_n * ow_n;
    for n in 0..d.batch {
        for o in 0..d.out_ch {
            let dst = &mut out[(n * d.out_ch + o) * out_plane..][..out_plane];
            dst.iter_mut().for_each(|v| *v = b[o]);
            for c in 0..d.in_ch {
                let src = &x[(n * d.in_ch + c) * in_plane..][..in_plane];
                let kern = &k[(o * d.in_ch + c) * d.k_h * d.k_w..][..d.k_h * d.k_w];
                for kh in 0..d.k_h {
                    for kw in 0..d.k_w {
                        let w = kern[kh * d.k_w + kw];
                        for oh in 0..oh_n {
                            let row_in = &src[(oh + kh) * d.in_w + kw..][..ow_n];
                            axpy(&mut dst[oh * ow_n..][..ow_n], w, row_in);
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input, kernel and bias gradients given the output gradient.
pub fn conv2d_backward<T: Real>(
    d: &ConvDims,
    x: &[T],
    k: &[T],
    g: &[T],
    gx: Option<&mut [T]>,
    gk: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    let (oh_n, ow_n) = (d.out_h(), d.out_w());
    let in_plane = d.in_h * d.in_w;
    let out_plane = oh_n * ow_n;
    let kk = d.k_h * d.k_w;

    if let Some(gb) = gb {
        for n in 0..d.batch {
            for o in 0..d.out_ch {
                gb[o] += sum(&g[(n * d.out_ch + o) * out_plane..][..out_plane]);
            }
        }
    }

    if let Some(gk) = gk {
        for n in 0..d.batch {
            for o in 0..d.out_ch {
                let go = &g[(n * d.out_ch + o) * out_plane..][..out_plane];
                for c in 0..d.in_ch {
                    let src = &x[(n * d.in_ch + c) * in_plane..][..in_plane];
                    let gkern = &mut gk[(o * d.in_ch + c) * kk..][..kk];
                    for kh in 0..d.k_h {
                        for kw in 0..d.k_w {
                            let mut acc = T::zero();
                            for oh in 0..oh_n {
                                acc += dot(&go[oh * ow_n..][..ow_n], &src[(oh + kh) * d.in_w + kw..][..ow_n]);
                            }
                            gkern[kh * d.k_w + kw] += acc;
                        }
                    }
                }
            }
        }
    }

    if let Some(gx) = gx {
        for n in 0..d.batch {
            for o in 0..d.out_ch {
                let go = &g[(n * d.out_ch + o) * out_plane..][..out_plane];
                for c in 0..d.in_ch {
                    let kern = &k[(o * d.in_ch + c) * kk..][..kk];
                    let dst = &mut gx[(n * d.in_ch + c) * in_plane..][..in_plane];
                    for kh in 0..d.k_h {
                        for kw in 0..d.k_w {
                            let w = kern[kh * d.k_w + kw];
                            for oh in 0..oh_n {
                                axpy(&mut dst[(oh + kh) * d.in_w + kw..][..ow_n], w, &go[oh * ow_n..][..ow_n]);
                            }
                        }
                    }
                }
            }
        }
    }
}
