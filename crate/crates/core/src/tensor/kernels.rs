//! Dense f64 kernels behind the autodiff ops.
//!
//! Single threaded, fixed accumulation order, so every run of the same build
//! produces bit-identical results. The matmul variants accumulate into the
//! output (`c += a op b`); callers zero the buffer first when they want a
//! plain product. The accumulate form is what backward passes need.
//!
//! The register blocking below is tuned for the conv shapes the training
//! loop produces (tall-skinny products against im2col patch matrices).
//! Blocking never reorders the per-element accumulation over the contraction
//! index, so tiled and naive results are bit-identical.

/// c[m,n] += a[m,k] @ b[k,n]
///
/// 4-row by 16-column register tile over a packed column panel of `b`. The
/// panel copy makes the inner loop stream contiguously; the tile broadcasts
/// one `a` element per row against 16 lanes of the panel, which the compiler
/// turns into FMA lanes without reassociating sums.
pub fn matmul_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    const TJ: usize = 16;
    const TI: usize = 4;
    let n_main = n - n % TJ;
    let m_main = m - m % TI;

    let mut panel = vec![0.0f64; k * TJ];
    let mut jb = 0;
    while jb < n_main {
        for kk in 0..k {
            panel[kk * TJ..(kk + 1) * TJ].copy_from_slice(&b[kk * n + jb..kk * n + jb + TJ]);
        }
        let mut ib = 0;
        while ib < m_main {
            let mut acc0 = [0.0f64; TJ];
            let mut acc1 = [0.0f64; TJ];
            let mut acc2 = [0.0f64; TJ];
            let mut acc3 = [0.0f64; TJ];
            let a0 = &a[ib * k..(ib + 1) * k];
            let a1 = &a[(ib + 1) * k..(ib + 2) * k];
            let a2 = &a[(ib + 2) * k..(ib + 3) * k];
            let a3 = &a[(ib + 3) * k..(ib + 4) * k];
            for (kk, bl) in panel.chunks_exact(TJ).enumerate() {
                let (r0, r1, r2, r3) = (a0[kk], a1[kk], a2[kk], a3[kk]);
                for l in 0..TJ {
                    let bv = bl[l];
                    acc0[l] += r0 * bv;
                    acc1[l] += r1 * bv;
                    acc2[l] += r2 * bv;
                    acc3[l] += r3 * bv;
                }
            }
            for (r, accr) in [&acc0, &acc1, &acc2, &acc3].into_iter().enumerate() {
                let crow = &mut c[(ib + r) * n + jb..(ib + r) * n + jb + TJ];
                for l in 0..TJ {
                    crow[l] += accr[l];
                }
            }
            ib += TI;
        }
        // Row remainder against the packed panel.
        for i in m_main..m {
            let arow = &a[i * k..(i + 1) * k];
            let mut acc = [0.0f64; TJ];
            for (kk, bl) in panel.chunks_exact(TJ).enumerate() {
                let aik = arow[kk];
                for l in 0..TJ {
                    acc[l] += aik * bl[l];
                }
            }
            let crow = &mut c[i * n + jb..i * n + jb + TJ];
            for l in 0..TJ {
                crow[l] += acc[l];
            }
        }
        jb += TJ;
    }
    // Column remainder: plain axpy rows.
    if jb < n {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n..(i + 1) * n];
            for (kk, &aik) in arow.iter().enumerate() {
                let brow = &b[kk * n..(kk + 1) * n];
                for j in jb..n {
                    crow[j] += aik * brow[j];
                }
            }
        }
    }
}

/// c[m,n] += a[m,k] @ b[n,k]^T
///
/// Row-by-row dot products in a 2x2 tile, each with eight explicit partial
/// sums so the reduction vectorizes under strict FP semantics.
pub fn matmul_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    const LANES: usize = 8;
    let blocks = k / LANES;
    let m_main = m - m % 2;
    let n_main = n - n % 2;

    let mut i = 0;
    while i < m_main {
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        let mut j = 0;
        while j < n_main {
            let b0 = &b[j * k..(j + 1) * k];
            let b1 = &b[(j + 1) * k..(j + 2) * k];
            let mut s00 = [0.0f64; LANES];
            let mut s01 = [0.0f64; LANES];
            let mut s10 = [0.0f64; LANES];
            let mut s11 = [0.0f64; LANES];
            for t in 0..blocks {
                let r = t * LANES;
                for l in 0..LANES {
                    let av0 = a0[r + l];
                    let av1 = a1[r + l];
                    let bv0 = b0[r + l];
                    let bv1 = b1[r + l];
                    s00[l] += av0 * bv0;
                    s01[l] += av0 * bv1;
                    s10[l] += av1 * bv0;
                    s11[l] += av1 * bv1;
                }
            }
            let mut d00 = fold8(&s00);
            let mut d01 = fold8(&s01);
            let mut d10 = fold8(&s10);
            let mut d11 = fold8(&s11);
            for t in blocks * LANES..k {
                d00 += a0[t] * b0[t];
                d01 += a0[t] * b1[t];
                d10 += a1[t] * b0[t];
                d11 += a1[t] * b1[t];
            }
            c[i * n + j] += d00;
            c[i * n + j + 1] += d01;
            c[(i + 1) * n + j] += d10;
            c[(i + 1) * n + j + 1] += d11;
            j += 2;
        }
        while j < n {
            c[i * n + j] += dot(a0, &b[j * k..(j + 1) * k]);
            c[(i + 1) * n + j] += dot(a1, &b[j * k..(j + 1) * k]);
            j += 1;
        }
        i += 2;
    }
    while i < m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
        i += 1;
    }
}

/// c[m,n] += a[k,m]^T @ b[k,n]
///
/// Transposes `a` into scratch (tiny next to the product itself) and reuses
/// the nn micro-kernel. Accumulation order over the contraction index is the
/// same as a direct loop, so results stay bit-stable.
pub fn matmul_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut at = vec![0.0f64; m * k];
    for kk in 0..k {
        for i in 0..m {
            at[i * k + kk] = a[kk * m + i];
        }
    }
    matmul_nn(&at, b, c, m, k, n);
}

#[inline]
fn fold8(s: &[f64; 8]) -> f64 {
    ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let blocks = a.len() / LANES;
    let mut acc = [0.0f64; LANES];
    for t in 0..blocks {
        let av = &a[t * LANES..(t + 1) * LANES];
        let bv = &b[t * LANES..(t + 1) * LANES];
        for l in 0..LANES {
            acc[l] += av[l] * bv[l];
        }
    }
    let mut s = fold8(&acc);
    for t in blocks * LANES..a.len() {
        s += a[t] * b[t];
    }
    s
}

/// Expand one sample's [c,h,w] block into the [c*kh*kw, oh*ow] patch matrix.
///
/// Padding cells are left at zero, so the buffer is zeroed up front. Rows are
/// patch coordinates, columns are output pixels; that layout makes the conv
/// forward a plain `weight @ col` product. `col_stride` is the full row
/// stride of the destination and `col_offset` the starting column, so one
/// batched matrix can be filled sample by sample.
#[allow(clippy::too_many_arguments)]
pub fn im2col_into(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    col: &mut [f64],
    col_stride: usize,
    col_offset: usize,
) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let p = oh * ow;
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert!(col_offset + p <= col_stride);
    for cc in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((cc * kh + ki) * kw + kj) * col_stride + col_offset;
                let ox_lo = if pad > kj { (pad - kj).div_ceil(stride) } else { 0 };
                let ox_hi = ((w - 1 + pad - kj) / stride).min(ow - 1);
                for oy in 0..oh {
                    let dst = row + oy * ow;
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        col[dst..dst + ow].fill(0.0);
                        continue;
                    }
                    let src = (cc * h + iy as usize) * w;
                    if ox_lo > ox_hi {
                        col[dst..dst + ow].fill(0.0);
                        continue;
                    }
                    for ox in 0..ox_lo {
                        col[dst + ox] = 0.0;
                    }
                    for ox in ox_lo..=ox_hi {
                        col[dst + ox] = x[src + ox * stride + kj - pad];
                    }
                    for ox in ox_hi + 1..ow {
                        col[dst + ox] = 0.0;
                    }
                }
            }
        }
    }
}

/// Single-sample patch expansion into a dense [c*kh*kw, oh*ow] matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    col: &mut [f64],
) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    im2col_into(x, c, h, w, kh, kw, stride, pad, col, oh * ow, 0);
}

/// Scatter-add a patch matrix back into a [c,h,w] gradient block.
///
/// Exact adjoint of [`im2col`]: every cell the expansion read gets the
/// corresponding column gradient added.
#[allow(clippy::too_many_arguments)]
pub fn col2im_add(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    dx: &mut [f64],
) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let p = oh * ow;
    debug_assert_eq!(dx.len(), c * h * w);
    debug_assert_eq!(col.len(), c * kh * kw * p);
    for cc in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((cc * kh + ki) * kw + kj) * p;
                let ox_lo = if pad > kj { (pad - kj).div_ceil(stride) } else { 0 };
                let ox_hi = ((w - 1 + pad - kj) / stride).min(ow - 1);
                if ox_lo > ox_hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = (cc * h + iy as usize) * w;
                    let dst = row + oy * ow;
                    for ox in ox_lo..=ox_hi {
                        let ix = ox * stride + kj - pad;
                        dx[src + ix] += col[dst + ox];
                    }
                }
            }
        }
    }
}
