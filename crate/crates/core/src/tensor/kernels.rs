//! Forward/backward compute kernels.
//!
//! Two tiers live here:
//!
//! * `*_ref` functions: direct nested-loop implementations, generic over the
//!   float type. These are the normative semantics — unit tests compare the
//!   fast tier against them, and the gradient-check harness replays whole
//!   graphs through them at f64.
//! * f32 fast paths: im2col + a small GEMM with an AVX2+FMA microkernel
//!   (runtime-detected, scalar fallback). Per-element accumulation order is
//!   identical across paths (k ascending), so results are deterministic on a
//!   given machine.

use num_traits::Float;

#[inline]
fn c<T: Float>(x: f64) -> T {
    T::from(x).unwrap()
}

// ---------------------------------------------------------------------------
// scalar math shared by both tiers

#[inline]
pub fn sigmoid_s<T: Float>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn softplus_s<T: Float>(x: T) -> T {
    // max(x,0) + ln(1 + e^{-|x|}) is stable for both tails.
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn leaky_relu_s<T: Float>(x: T, alpha: T) -> T {
    if x > T::zero() {
        x
    } else {
        alpha * x
    }
}

// ---------------------------------------------------------------------------
// convolution

pub fn conv_out_size(h: usize, k: usize, pad: usize, stride: usize) -> Option<usize> {
    let span = h + 2 * pad;
    if span < k {
        return None;
    }
    if (span - k) % stride != 0 {
        return None;
    }
    Some((span - k) / stride + 1)
}

/// Cross-correlation, direct loops. `x` is [B,Cin,H,W], `w` [Cout,Cin,kh,kw],
/// `bias` [Cout], `out` [B,Cout,Hout,Wout] (overwritten).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_ref<T: Float>(
    x: &[T],
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    wgt: &[T],
    cout: usize,
    kh: usize,
    kw: usize,
    bias: &[T],
    pad: usize,
    stride: usize,
    out: &mut [T],
) {
    let hout = conv_out_size(h, kh, pad, stride).expect("conv output size");
    let wout = conv_out_size(w, kw, pad, stride).expect("conv output size");
    for bi in 0..b {
        for co in 0..cout {
            for oy in 0..hout {
                for ox in 0..wout {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((bi * cin + ci) * h + iy as usize) * w + ix as usize];
                                let wv = wgt[((co * cin + ci) * kh + ky) * kw + kx];
                                acc = acc + xv * wv;
                            }
                        }
                    }
                    out[((bi * cout + co) * hout + oy) * wout + ox] = acc;
                }
            }
        }
    }
}

/// Lays out conv patches as a [Cin*kh*kw, Hout*Wout] matrix for one image.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    hout: usize,
    wout: usize,
    cols: &mut [f32],
) {
    let p = hout * wout;
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((ci * kh + ky) * kw + kx) * p..][..p];
                for oy in 0..hout {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut row[oy * wout..(oy + 1) * wout];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add inverse of `im2col`.
#[allow(clippy::too_many_arguments)]
fn col2im_add(
    cols: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    hout: usize,
    wout: usize,
    dx: &mut [f32],
) {
    let p = hout * wout;
    for ci in 0..cin {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((ci * kh + ky) * kw + kx) * p..][..p];
                for oy in 0..hout {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wout {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * wout + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Fast conv forward: im2col + GEMM per image.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_f32(
    x: &[f32],
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    wgt: &[f32],
    cout: usize,
    kh: usize,
    kw: usize,
    bias: &[f32],
    pad: usize,
    stride: usize,
    out: &mut [f32],
) {
    let hout = conv_out_size(h, kh, pad, stride).expect("conv output size");
    let wout = conv_out_size(w, kw, pad, stride).expect("conv output size");
    let kd = cin * kh * kw;
    let p = hout * wout;
    let mut cols = vec![0.0f32; kd * p];
    for bi in 0..b {
        im2col(
            &x[bi * cin * h * w..(bi + 1) * cin * h * w],
            cin,
            h,
            w,
            kh,
            kw,
            pad,
            stride,
            hout,
            wout,
            &mut cols,
        );
        let o = &mut out[bi * cout * p..(bi + 1) * cout * p];
        for co in 0..cout {
            o[co * p..(co + 1) * p].fill(bias[co]);
        }
        matmul_acc(wgt, &cols, o, cout, kd, p);
    }
}

/// Conv backward. Accumulates into `dx`, `dw`, `db` (callers zero them).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_f32(
    x: &[f32],
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    wgt: &[f32],
    cout: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    stride: usize,
    dout: &[f32],
    dx: Option<&mut [f32]>,
    dw: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
) {
    let hout = conv_out_size(h, kh, pad, stride).expect("conv output size");
    let wout = conv_out_size(w, kw, pad, stride).expect("conv output size");
    let kd = cin * kh * kw;
    let p = hout * wout;

    if let Some(db) = db {
        for bi in 0..b {
            for co in 0..cout {
                let row = &dout[(bi * cout + co) * p..][..p];
                db[co] += row.iter().sum::<f32>();
            }
        }
    }

    let need_dx = dx.is_some();
    let need_dw = dw.is_some();
    if !need_dx && !need_dw {
        return;
    }

    // w transposed once: [kd, cout] for the dx GEMM.
    let mut wt = Vec::new();
    if need_dx {
        wt = vec![0.0f32; kd * cout];
        for co in 0..cout {
            for kk in 0..kd {
                wt[kk * cout + co] = wgt[co * kd + kk];
            }
        }
    }

    let mut cols = vec![0.0f32; kd * p];
    let mut dcols = vec![0.0f32; kd * p];
    let mut dx = dx;
    let mut dw = dw;
    for bi in 0..b {
        let dy = &dout[bi * cout * p..(bi + 1) * cout * p];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(
                &x[bi * cin * h * w..(bi + 1) * cin * h * w],
                cin,
                h,
                w,
                kh,
                kw,
                pad,
                stride,
                hout,
                wout,
                &mut cols,
            );
            // dW[co,kk] += sum_p dO[co,p] * cols[kk,p]
            matmul_bt_acc(dy, &cols, dw, cout, p, kd);
        }
        if let Some(dx) = dx.as_deref_mut() {
            dcols.fill(0.0);
            // dcols[kk,p] = sum_co w[co,kk] * dO[co,p]
            matmul_acc(&wt, dy, &mut dcols, kd, cout, p);
            col2im_add(
                &dcols,
                cin,
                h,
                w,
                kh,
                kw,
                pad,
                stride,
                hout,
                wout,
                &mut dx[bi * cin * h * w..(bi + 1) * cin * h * w],
            );
        }
    }
}

// ---------------------------------------------------------------------------
// GEMM: C[m,n] += A[m,k] * B[k,n], row-major

pub fn matmul_acc(a: &[f32], b: &[f32], cmat: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(cmat.len(), m * n);
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        unsafe { x86::matmul_avx2(a, b, cmat, m, k, n) };
        return;
    }
    matmul_scalar(a, b, cmat, m, k, n);
}

fn matmul_scalar(a: &[f32], b: &[f32], cmat: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut cmat[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow.iter()) {
                *cv += aik * *bv;
            }
        }
    }
}

/// C[m,n] += A[m,k] * B^T where B is [n,k] row-major (rows of both operands
/// are contiguous, so every output is a plain dot product).
pub fn matmul_bt_acc(a: &[f32], b: &[f32], cmat: &mut [f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(cmat.len(), m * n);
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        unsafe { x86::matmul_bt_avx2(a, b, cmat, m, k, n) };
        return;
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (av, bv) in arow.iter().zip(brow.iter()) {
                acc += av * bv;
            }
            cmat[i * n + j] += acc;
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    use std::arch::x86_64::*;

    /// 4x16 register-blocked GEMM tile; k-loop innermost, ascending, matching
    /// the scalar path's per-element accumulation order.
    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn matmul_avx2(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
        let ap = a.as_ptr();
        let bp = b.as_ptr();
        let cp = c.as_mut_ptr();
        let m4 = m / 4 * 4;
        let n16 = n / 16 * 16;
        for i in (0..m4).step_by(4) {
            let mut j = 0;
            while j < n16 {
                let mut acc = [[_mm256_setzero_ps(); 2]; 4];
                for (r, accr) in acc.iter_mut().enumerate() {
                    accr[0] = _mm256_loadu_ps(cp.add((i + r) * n + j));
                    accr[1] = _mm256_loadu_ps(cp.add((i + r) * n + j + 8));
                }
                for kk in 0..k {
                    let b0 = _mm256_loadu_ps(bp.add(kk * n + j));
                    let b1 = _mm256_loadu_ps(bp.add(kk * n + j + 8));
                    for (r, accr) in acc.iter_mut().enumerate() {
                        let av = _mm256_set1_ps(*ap.add((i + r) * k + kk));
                        accr[0] = _mm256_fmadd_ps(av, b0, accr[0]);
                        accr[1] = _mm256_fmadd_ps(av, b1, accr[1]);
                    }
                }
                for (r, accr) in acc.iter().enumerate() {
                    _mm256_storeu_ps(cp.add((i + r) * n + j), accr[0]);
                    _mm256_storeu_ps(cp.add((i + r) * n + j + 8), accr[1]);
                }
                j += 16;
            }
            if j < n {
                for r in 0..4 {
                    row_tail(ap, bp, cp, i + r, k, n, j);
                }
            }
        }
        for i in m4..m {
            let mut j = 0;
            while j + 8 <= n {
                let mut acc = _mm256_loadu_ps(cp.add(i * n + j));
                for kk in 0..k {
                    let av = _mm256_set1_ps(*ap.add(i * k + kk));
                    acc = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp.add(kk * n + j)), acc);
                }
                _mm256_storeu_ps(cp.add(i * n + j), acc);
                j += 8;
            }
            if j < n {
                row_tail(ap, bp, cp, i, k, n, j);
            }
        }
    }

    #[target_feature(enable = "avx2,fma")]
    unsafe fn row_tail(
        ap: *const f32,
        bp: *const f32,
        cp: *mut f32,
        i: usize,
        k: usize,
        n: usize,
        from: usize,
    ) {
        for j in from..n {
            let mut acc = *cp.add(i * n + j);
            for kk in 0..k {
                acc = f32::mul_add(*ap.add(i * k + kk), *bp.add(kk * n + j), acc);
            }
            *cp.add(i * n + j) = acc;
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub unsafe fn matmul_bt_avx2(
        a: &[f32],
        b: &[f32],
        c: &mut [f32],
        m: usize,
        k: usize,
        n: usize,
    ) {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &b[j * k..(j + 1) * k];
                c[i * n + j] += dot(arow, brow);
            }
        }
    }

    #[target_feature(enable = "avx2,fma")]
    unsafe fn dot(a: &[f32], b: &[f32]) -> f32 {
        let k = a.len();
        let k8 = k / 8 * 8;
        let mut acc = _mm256_setzero_ps();
        let mut i = 0;
        while i < k8 {
            acc = _mm256_fmadd_ps(
                _mm256_loadu_ps(a.as_ptr().add(i)),
                _mm256_loadu_ps(b.as_ptr().add(i)),
                acc,
            );
            i += 8;
        }
        let hi = _mm256_extractf128_ps(acc, 1);
        let lo = _mm256_castps256_ps128(acc);
        let s = _mm_add_ps(hi, lo);
        let s = _mm_hadd_ps(s, s);
        let s = _mm_hadd_ps(s, s);
        let mut total = _mm_cvtss_f32(s);
        for ii in k8..k {
            total = f32::mul_add(a[ii], b[ii], total);
        }
        total
    }
}

// ---------------------------------------------------------------------------
// pooling / upsampling

/// 2x2 non-overlapping max pool. Returns argmax as flat indices into `x`
/// (first occurrence in scan order on ties) when requested.
pub fn pool_max2_ref<T: Float>(
    x: &[T],
    b: usize,
    ch: usize,
    h: usize,
    w: usize,
    out: &mut [T],
    mut argmax: Option<&mut Vec<u32>>,
) {
    let (ho, wo) = (h / 2, w / 2);
    for bc in 0..b * ch {
        let plane = &x[bc * h * w..(bc + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (2 * oy) * w + 2 * ox;
                let mut bv = plane[best];
                for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let idx = (2 * oy + dy) * w + 2 * ox + dx;
                    if plane[idx] > bv {
                        bv = plane[idx];
                        best = idx;
                    }
                }
                out[(bc * ho + oy) * wo + ox] = bv;
                if let Some(am) = argmax.as_deref_mut() {
                    am.push((bc * h * w + best) as u32);
                }
            }
        }
    }
}

pub fn upsample2_ref<T: Float>(x: &[T], b: usize, ch: usize, h: usize, w: usize, out: &mut [T]) {
    let (ho, wo) = (2 * h, 2 * w);
    for bc in 0..b * ch {
        let src = &x[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
        for y in 0..h {
            for xx in 0..w {
                let v = src[y * w + xx];
                dst[(2 * y) * wo + 2 * xx] = v;
                dst[(2 * y) * wo + 2 * xx + 1] = v;
                dst[(2 * y + 1) * wo + 2 * xx] = v;
                dst[(2 * y + 1) * wo + 2 * xx + 1] = v;
            }
        }
    }
}

pub fn upsample2_backward(dout: &[f32], b: usize, ch: usize, h: usize, w: usize, dx: &mut [f32]) {
    let wo = 2 * w;
    for bc in 0..b * ch {
        let src = &dout[bc * 4 * h * w..(bc + 1) * 4 * h * w];
        let dst = &mut dx[bc * h * w..(bc + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] += src[(2 * y) * wo + 2 * xx]
                    + src[(2 * y) * wo + 2 * xx + 1]
                    + src[(2 * y + 1) * wo + 2 * xx]
                    + src[(2 * y + 1) * wo + 2 * xx + 1];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// channel concat / slice over [B,C,H,W]

/// `parts` are (data, channels); all share b and hw. Output is channel-stacked.
pub fn concat_channels_ref<T: Float>(parts: &[(&[T], usize)], b: usize, hw: usize, out: &mut [T]) {
    let ctot: usize = parts.iter().map(|(_, c)| c).sum();
    for bi in 0..b {
        let mut co = 0;
        for (data, ci) in parts {
            let src = &data[bi * ci * hw..(bi + 1) * ci * hw];
            out[(bi * ctot + co) * hw..][..ci * hw].copy_from_slice(src);
            co += ci;
        }
    }
}

pub fn slice_channels_ref<T: Float>(
    x: &[T],
    b: usize,
    ch: usize,
    hw: usize,
    from: usize,
    to: usize,
    out: &mut [T],
) {
    let cs = to - from;
    for bi in 0..b {
        let src = &x[(bi * ch + from) * hw..(bi * ch + to) * hw];
        out[bi * cs * hw..(bi + 1) * cs * hw].copy_from_slice(src);
    }
    debug_assert_eq!(out.len(), b * cs * hw);
}

// ---------------------------------------------------------------------------
// reductions over arbitrary axes

/// Output shape with `axes` removed (axes sorted, unique).
pub fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect()
}

/// For every input linear index, the linear index of its reduction cell.
/// Implemented as strides so callers can stream without materializing maps.
fn out_strides(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    // stride in the reduced output for each input axis (0 for reduced axes)
    let keep: Vec<usize> = (0..shape.len()).filter(|i| !axes.contains(i)).collect();
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for &i in keep.iter().rev() {
        strides[i] = acc;
        acc *= shape[i];
    }
    strides
}

pub fn reduce_sum_ref<T: Float>(x: &[T], shape: &[usize], axes: &[usize], out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
    let strides = out_strides(shape, axes);
    let rank = shape.len();
    let mut coords = vec![0usize; rank];
    for &v in x {
        let mut oi = 0;
        for (d, &cd) in coords.iter().enumerate() {
            oi += strides[d] * cd;
        }
        out[oi] = out[oi] + v;
        // odometer increment
        for d in (0..rank).rev() {
            coords[d] += 1;
            if coords[d] < shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
}

pub fn reduce_count(shape: &[usize], axes: &[usize]) -> usize {
    axes.iter().map(|&a| shape[a]).product()
}

/// Broadcast `dout` (reduced shape) back over `shape`, scaled by `scale`,
/// accumulating into `dx`.
pub fn reduce_backward(dout: &[f32], shape: &[usize], axes: &[usize], scale: f32, dx: &mut [f32]) {
    let strides = out_strides(shape, axes);
    let rank = shape.len();
    let mut coords = vec![0usize; rank];
    for v in dx.iter_mut() {
        let mut oi = 0;
        for (d, &cd) in coords.iter().enumerate() {
            oi += strides[d] * cd;
        }
        *v += dout[oi] * scale;
        for d in (0..rank).rev() {
            coords[d] += 1;
            if coords[d] < shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
}

// ---------------------------------------------------------------------------
// action tiling

/// [B,C] -> [B,C,h,w], each channel filled with its scalar.
pub fn tile_spatial_ref<T: Float>(x: &[T], b: usize, ch: usize, h: usize, w: usize, out: &mut [T]) {
    for bc in 0..b * ch {
        out[bc * h * w..(bc + 1) * h * w].fill(x[bc]);
    }
}

// ---------------------------------------------------------------------------
// softmax cross-entropy (probe training head)

/// Mean NLL over the batch; writes row-wise softmax into `probs`.
/// `logits` is [B,C]; targets are class indices.
pub fn softmax_ce_ref<T: Float>(logits: &[T], b: usize, ch: usize, targets: &[u32], probs: &mut [T]) -> T {
    let mut loss = T::zero();
    for bi in 0..b {
        let row = &logits[bi * ch..(bi + 1) * ch];
        let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut denom = T::zero();
        for (j, &v) in row.iter().enumerate() {
            let e = (v - mx).exp();
            probs[bi * ch + j] = e;
            denom = denom + e;
        }
        for j in 0..ch {
            probs[bi * ch + j] = probs[bi * ch + j] / denom;
        }
        let t = targets[bi] as usize;
        // -log softmax[target], computed stably from the shifted logits
        loss = loss - (row[t] - mx - denom.ln());
    }
    loss / c(b as f64)
}
