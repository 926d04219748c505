//! Flat-slice kernels for 1D convolution and its transpose.
//!
//! Summation order per output element is channel-major then tap, identical to
//! the obvious five-loop definition, so results match a naive reference
//! implementation exactly rather than just approximately.
//!
//! Strided cases are computed through a phase decomposition: a padded row is
//! split into `stride` interleaved sub-rows (phase r holds positions ≡ r mod
//! stride), turning every tap's strided gather/scatter into a contiguous
//! slice operation the compiler can vectorize. Only addresses change — each
//! output element still accumulates its terms in the same order as the
//! direct loops.

use super::Element;

#[derive(Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub l_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub l_out: usize,
}

/// Phase capacity for a buffer of `len` positions split `stride` ways.
fn phase_cap(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// Scatter `row` (with a leading offset of `pad` zeros) into phase layout:
/// `phases[r * cap + i] = padded[i * stride + r]`.
fn stage_phases<T: Element>(row: &[T], pad: usize, stride: usize, cap: usize, phases: &mut [T]) {
    for v in phases.iter_mut() {
        *v = T::zero();
    }
    for (j, &v) in row.iter().enumerate() {
        let idx = j + pad;
        phases[(idx % stride) * cap + idx / stride] = v;
    }
}

/// out[b,co,lo] = sum_{ci,k} x[b,ci,lo*s+k-p] * w[co,ci,k], zero outside x.
pub(crate) fn conv1d_forward<T: Element>(x: &[T], w: &[T], out: &mut [T], d: ConvDims) {
    let lp = d.l_in + 2 * d.pad;
    if d.stride == 1 {
        let mut xpad = vec![T::zero(); d.c_in * lp];
        for b in 0..d.n {
            for ci in 0..d.c_in {
                let src = &x[(b * d.c_in + ci) * d.l_in..][..d.l_in];
                xpad[ci * lp + d.pad..ci * lp + d.pad + d.l_in].copy_from_slice(src);
            }
            for co in 0..d.c_out {
                let orow = &mut out[(b * d.c_out + co) * d.l_out..][..d.l_out];
                for ci in 0..d.c_in {
                    let xrow = &xpad[ci * lp..(ci + 1) * lp];
                    let wrow = &w[(co * d.c_in + ci) * d.k..][..d.k];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        let xs = &xrow[kk..kk + d.l_out];
                        for (o, &xv) in orow.iter_mut().zip(xs) {
                            *o += wv * xv;
                        }
                    }
                }
            }
        }
        return;
    }
    let cap = phase_cap(lp, d.stride);
    let mut phases = vec![T::zero(); d.c_in * d.stride * cap];
    for b in 0..d.n {
        for ci in 0..d.c_in {
            let src = &x[(b * d.c_in + ci) * d.l_in..][..d.l_in];
            stage_phases(
                src,
                d.pad,
                d.stride,
                cap,
                &mut phases[ci * d.stride * cap..(ci + 1) * d.stride * cap],
            );
        }
        for co in 0..d.c_out {
            let orow = &mut out[(b * d.c_out + co) * d.l_out..][..d.l_out];
            for ci in 0..d.c_in {
                let pbase = ci * d.stride * cap;
                let wrow = &w[(co * d.c_in + ci) * d.k..][..d.k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    let ph = &phases[pbase + (kk % d.stride) * cap + kk / d.stride..][..d.l_out];
                    for (o, &xv) in orow.iter_mut().zip(ph) {
                        *o += wv * xv;
                    }
                }
            }
        }
    }
}

/// dx[b,ci,li] accumulates w[co,ci,k] * g[b,co,lo] over all (co,k,lo)
/// with li = lo*s + k - p.
pub(crate) fn conv1d_backward_input<T: Element>(w: &[T], g: &[T], dx: &mut [T], d: ConvDims) {
    let lp = d.l_in + 2 * d.pad;
    if d.stride == 1 {
        let mut dpad = vec![T::zero(); d.c_in * lp];
        for b in 0..d.n {
            for v in dpad.iter_mut() {
                *v = T::zero();
            }
            for co in 0..d.c_out {
                let grow = &g[(b * d.c_out + co) * d.l_out..][..d.l_out];
                for ci in 0..d.c_in {
                    let drow = &mut dpad[ci * lp..(ci + 1) * lp];
                    let wrow = &w[(co * d.c_in + ci) * d.k..][..d.k];
                    for (kk, &wv) in wrow.iter().enumerate() {
                        let ds = &mut drow[kk..kk + d.l_out];
                        for (o, &gv) in ds.iter_mut().zip(grow) {
                            *o += wv * gv;
                        }
                    }
                }
            }
            for ci in 0..d.c_in {
                let dst = &mut dx[(b * d.c_in + ci) * d.l_in..][..d.l_in];
                let src = &dpad[ci * lp + d.pad..ci * lp + d.pad + d.l_in];
                for (a, &s) in dst.iter_mut().zip(src) {
                    *a += s;
                }
            }
        }
        return;
    }
    let cap = phase_cap(lp, d.stride);
    let mut dphases = vec![T::zero(); d.c_in * d.stride * cap];
    for b in 0..d.n {
        for v in dphases.iter_mut() {
            *v = T::zero();
        }
        for co in 0..d.c_out {
            let grow = &g[(b * d.c_out + co) * d.l_out..][..d.l_out];
            for ci in 0..d.c_in {
                let pbase = ci * d.stride * cap;
                let wrow = &w[(co * d.c_in + ci) * d.k..][..d.k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    let ds = &mut dphases
                        [pbase + (kk % d.stride) * cap + kk / d.stride..][..d.l_out];
                    for (o, &gv) in ds.iter_mut().zip(grow) {
                        *o += wv * gv;
                    }
                }
            }
        }
        for ci in 0..d.c_in {
            let dst = &mut dx[(b * d.c_in + ci) * d.l_in..][..d.l_in];
            let pbase = ci * d.stride * cap;
            for (li, o) in dst.iter_mut().enumerate() {
                let idx = li + d.pad;
                *o += dphases[pbase + (idx % d.stride) * cap + idx / d.stride];
            }
        }
    }
}

/// dw[co,ci,k] accumulates x[b,ci,lo*s+k-p] * g[b,co,lo] over all (b,lo).
pub(crate) fn conv1d_backward_weight<T: Element>(x: &[T], g: &[T], dw: &mut [T], d: ConvDims) {
    let lp = d.l_in + 2 * d.pad;
    if d.stride == 1 {
        let mut xpad = vec![T::zero(); d.c_in * lp];
        for b in 0..d.n {
            for ci in 0..d.c_in {
                let src = &x[(b * d.c_in + ci) * d.l_in..][..d.l_in];
                xpad[ci * lp + d.pad..ci * lp + d.pad + d.l_in].copy_from_slice(src);
            }
            for co in 0..d.c_out {
                let grow = &g[(b * d.c_out + co) * d.l_out..][..d.l_out];
                for ci in 0..d.c_in {
                    let xrow = &xpad[ci * lp..(ci + 1) * lp];
                    let dwrow = &mut dw[(co * d.c_in + ci) * d.k..][..d.k];
                    for (kk, dst) in dwrow.iter_mut().enumerate() {
                        let xs = &xrow[kk..kk + d.l_out];
                        let mut acc = T::zero();
                        for (&xv, &gv) in xs.iter().zip(grow) {
                            acc += xv * gv;
                        }
                        *dst += acc;
                    }
                }
            }
        }
        return;
    }
    let cap = phase_cap(lp, d.stride);
    let mut phases = vec![T::zero(); d.c_in * d.stride * cap];
    for b in 0..d.n {
        for ci in 0..d.c_in {
            let src = &x[(b * d.c_in + ci) * d.l_in..][..d.l_in];
            stage_phases(
                src,
                d.pad,
                d.stride,
                cap,
                &mut phases[ci * d.stride * cap..(ci + 1) * d.stride * cap],
            );
        }
        for co in 0..d.c_out {
            let grow = &g[(b * d.c_out + co) * d.l_out..][..d.l_out];
            for ci in 0..d.c_in {
                let pbase = ci * d.stride * cap;
                let dwrow = &mut dw[(co * d.c_in + ci) * d.k..][..d.k];
                for (kk, dst) in dwrow.iter_mut().enumerate() {
                    let ph = &phases[pbase + (kk % d.stride) * cap + kk / d.stride..][..d.l_out];
                    let mut acc = T::zero();
                    for (&xv, &gv) in ph.iter().zip(grow) {
                        acc += xv * gv;
                    }
                    *dst += acc;
                }
            }
        }
    }
}

/// Transposed convolution: scatter each input sample across `k` taps.
/// out[b,co,j] = sum over (ci,li,k) with j = li*s + k - p of x[b,ci,li] * w[ci,co,k].
/// Positions past the scatter range (reached via output_pad) stay zero.
pub(crate) fn conv1d_transposed_forward<T: Element>(x: &[T], w: &[T], out: &mut [T], d: ConvDims) {
    let full = (d.l_in - 1) * d.stride + d.k;
    let cap = phase_cap(full, d.stride);
    let mut bphases = vec![T::zero(); d.stride * cap];
    for b in 0..d.n {
        for co in 0..d.c_out {
            for v in bphases.iter_mut() {
                *v = T::zero();
            }
            for ci in 0..d.c_in {
                let xrow = &x[(b * d.c_in + ci) * d.l_in..][..d.l_in];
                let wrow = &w[(ci * d.c_out + co) * d.k..][..d.k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    let bp =
                        &mut bphases[(kk % d.stride) * cap + kk / d.stride..][..d.l_in];
                    for (o, &xv) in bp.iter_mut().zip(xrow) {
                        *o += wv * xv;
                    }
                }
            }
            let orow = &mut out[(b * d.c_out + co) * d.l_out..][..d.l_out];
            for (j, o) in orow.iter_mut().enumerate() {
                let idx = j + d.pad;
                *o = if idx < full {
                    bphases[(idx % d.stride) * cap + idx / d.stride]
                } else {
                    T::zero()
                };
            }
        }
    }
}

/// Stage one gradient row (offset by `pad` inside a `full`-length frame)
/// into phase layout.
fn stage_grad_phases<T: Element>(
    grow: &[T],
    pad: usize,
    full: usize,
    stride: usize,
    cap: usize,
    phases: &mut [T],
) {
    for v in phases.iter_mut() {
        *v = T::zero();
    }
    for (j, &gv) in grow.iter().enumerate() {
        let idx = j + pad;
        if idx < full {
            phases[(idx % stride) * cap + idx / stride] = gv;
        }
    }
}

/// dx[b,ci,li] accumulates w[ci,co,k] * g[b,co,li*s+k-p] over all (co,k).
pub(crate) fn conv1d_transposed_backward_input<T: Element>(
    w: &[T],
    g: &[T],
    dx: &mut [T],
    d: ConvDims,
) {
    let full = (d.l_in - 1) * d.stride + d.k;
    let cap = phase_cap(full, d.stride);
    let mut gphases = vec![T::zero(); d.c_out * d.stride * cap];
    for b in 0..d.n {
        for co in 0..d.c_out {
            let grow = &g[(b * d.c_out + co) * d.l_out..][..d.l_out];
            stage_grad_phases(
                grow,
                d.pad,
                full,
                d.stride,
                cap,
                &mut gphases[co * d.stride * cap..(co + 1) * d.stride * cap],
            );
        }
        for ci in 0..d.c_in {
            let dxrow = &mut dx[(b * d.c_in + ci) * d.l_in..][..d.l_in];
            for co in 0..d.c_out {
                let pbase = co * d.stride * cap;
                let wrow = &w[(ci * d.c_out + co) * d.k..][..d.k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    let gp = &gphases[pbase + (kk % d.stride) * cap + kk / d.stride..][..d.l_in];
                    for (o, &gv) in dxrow.iter_mut().zip(gp) {
                        *o += wv * gv;
                    }
                }
            }
        }
    }
}

/// dw[ci,co,k] accumulates x[b,ci,li] * g[b,co,li*s+k-p] over all (b,li).
pub(crate) fn conv1d_transposed_backward_weight<T: Element>(
    x: &[T],
    g: &[T],
    dw: &mut [T],
    d: ConvDims,
) {
    let full = (d.l_in - 1) * d.stride + d.k;
    let cap = phase_cap(full, d.stride);
    let mut gphases = vec![T::zero(); d.c_out * d.stride * cap];
    for b in 0..d.n {
        for co in 0..d.c_out {
            let grow = &g[(b * d.c_out + co) * d.l_out..][..d.l_out];
            stage_grad_phases(
                grow,
                d.pad,
                full,
                d.stride,
                cap,
                &mut gphases[co * d.stride * cap..(co + 1) * d.stride * cap],
            );
        }
        for ci in 0..d.c_in {
            let xrow = &x[(b * d.c_in + ci) * d.l_in..][..d.l_in];
            for co in 0..d.c_out {
                let pbase = co * d.stride * cap;
                let dwrow = &mut dw[(ci * d.c_out + co) * d.k..][..d.k];
                for (kk, dst) in dwrow.iter_mut().enumerate() {
                    let gp = &gphases[pbase + (kk % d.stride) * cap + kk / d.stride..][..d.l_in];
                    let mut acc = T::zero();
                    for (&xv, &gv) in xrow.iter().zip(gp) {
                        acc += xv * gv;
                    }
                    *dst += acc;
                }
            }
        }
    }
}
