//! Convolution kernels on `[C, N, D, H, W]` tensors.
//!
//! Regular convolutions lower to im2col followed by a GEMM.
//! The column buffer is built a few output planes at a time to bound memory
//! on large tiles.

use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tensor::Tensor;

/// Upper bound on column-buffer elements per chunk.
const COL_BUDGET: usize = 1 << 23;

/// Kernel size, stride and zero padding per spatial axis `[d, h, w]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub k: [usize; 3],
    pub s: [usize; 3],
    pub p: [usize; 3],
}

impl ConvGeom {
    pub fn cube(k: usize, s: usize, p: usize) -> Self {
        ConvGeom {
            k: [k; 3],
            s: [s; 3],
            p: [p; 3],
        }
    }

    /// In-plane 2D convolution expressed on a depth-1 volume.
    pub fn planar(k: usize, s: usize, p: usize) -> Self {
        ConvGeom {
            k: [1, k, k],
            s: [1, s, s],
            p: [0, p, p],
        }
    }

    pub fn taps(&self) -> usize {
        self.k[0] * self.k[1] * self.k[2]
    }

    fn is_pointwise(&self) -> bool {
        self.k == [1; 3] && self.s == [1; 3] && self.p == [0; 3]
    }

    /// `floor((n + 2p - k) / s) + 1` per axis, or `None` if any axis is empty.
    pub fn output_spatial(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.p[a];
            if padded < self.k[a] {
                return None;
            }
            out[a] = (padded - self.k[a]) / self.s[a] + 1;
        }
        Some(out)
    }
}

/// `C = A * B + beta * C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    rsa: usize,
    csa: usize,
    b: &[T],
    rsb: usize,
    csb: usize,
    beta: T,
    c: &mut [T],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // Bounds of the strided views must fit in the slices.
    debug_assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserted extents keep every strided access in bounds and
    // `c` is uniquely borrowed.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Output positions `lo..hi` whose input index `o * s + k - p` lies in `0..n`.
fn valid_range(out_len: usize, n: usize, s: usize, k: usize, p: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    if n + p < k + 1 {
        return (0, 0);
    }
    let hi = ((n - 1 + p - k) / s + 1).min(out_len);
    (lo.min(hi), hi)
}

struct Layout {
    cin: usize,
    batch: usize,
    ins: [usize; 3],
    outs: [usize; 3],
    geom: ConvGeom,
}

impl Layout {
    fn planes(&self) -> usize {
        self.batch * self.outs[0]
    }

    fn plane_cols(&self) -> usize {
        self.outs[1] * self.outs[2]
    }

    fn rows(&self) -> usize {
        self.cin * self.geom.taps()
    }

    fn chunk_planes(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.plane_cols()).max(1)).clamp(1, self.planes())
    }

    /// Calls `f(row, dst_offset, src_index_or_none)` style visits through
    /// closures for both im2col and col2im.
    #[inline]
    fn walk(&self, q0: usize, q1: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        // f(dst_start, src_start, len, src_step, row_kind) where row_kind 1 = copy.
        let g = self.geom;
        let [d, h, w] = self.ins;
        let [od, oh, ow] = self.outs;
        let ncols = (q1 - q0) * oh * ow;
        let mut row = 0;
        for c in 0..self.cin {
            for kd in 0..g.k[0] {
                for kh in 0..g.k[1] {
                    let (h_lo, h_hi) = valid_range(oh, h, g.s[1], kh, g.p[1]);
                    for kw in 0..g.k[2] {
                        let (w_lo, w_hi) = valid_range(ow, w, g.s[2], kw, g.p[2]);
                        let row_base = row * ncols;
                        for q in q0..q1 {
                            let n = q / od;
                            let z = q % od;
                            let iz = (z * g.s[0] + kd) as isize - g.p[0] as isize;
                            if iz < 0 || iz as usize >= d {
                                continue;
                            }
                            let plane = ((c * self.batch + n) * d + iz as usize) * h * w;
                            let dst_plane = row_base + (q - q0) * oh * ow;
                            for y in h_lo..h_hi {
                                let iy = y * g.s[1] + kh - g.p[1];
                                if w_hi > w_lo {
                                    let src = plane + iy * w + w_lo * g.s[2] + kw - g.p[2];
                                    f(dst_plane + y * ow + w_lo, src, w_hi - w_lo, g.s[2], 1);
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, x: &[T], q0: usize, q1: usize, cols: &mut [T]) {
        cols.iter_mut().for_each(|v| *v = T::zero());
        self.walk(q0, q1, |dst, src, len, step, _| {
            let out = &mut cols[dst..dst + len];
            if step == 1 {
                out.copy_from_slice(&x[src..src + len]);
            } else {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = x[src + i * step];
                }
            }
        });
    }

    fn col2im<T: Real>(&self, cols: &[T], q0: usize, q1: usize, dx: &mut [T]) {
        self.walk(q0, q1, |dst, src, len, step, _| {
            let inp = &cols[dst..dst + len];
            if step == 1 {
                for (o, v) in dx[src..src + len].iter_mut().zip(inp) {
                    *o += *v;
                }
            } else {
                for (i, v) in inp.iter().enumerate() {
                    dx[src + i * step] += *v;
                }
            }
        });
    }
}

fn layout<T: Real>(x: &Tensor<T>, geom: ConvGeom) -> Option<Layout> {
    let outs = geom.output_spatial(x.spatial())?;
    Some(Layout {
        cin: x.channels(),
        batch: x.batch(),
        ins: x.spatial(),
        outs,
        geom,
    })
}

/// Forward convolution. `w` is `[cout, cin * kd * kh * kw]`.
///
/// Panics if the geometry yields an empty output; callers validate sizes.
pub fn conv_forward<T: Real>(x: &Tensor<T>, w: &[T], b: Option<&[T]>, cout: usize, geom: ConvGeom) -> Tensor<T> {
    let lay = layout(x, geom).expect("convolution input smaller than kernel");
    let rows = lay.rows();
    assert_eq!(w.len(), cout * rows, "weight shape mismatch");
    let [od, oh, ow] = lay.outs;
    let total = lay.batch * od * oh * ow;
    let mut out = Tensor::zeros([cout, lay.batch, od, oh, ow]);
    if geom.is_pointwise() {
        gemm(cout, rows, total, w, rows, 1, x.data(), total, 1, T::zero(), out.data_mut(), total, 1);
    } else {
        let per = lay.plane_cols();
        let step = lay.chunk_planes();
        let mut cols = vec![T::zero(); rows * step * per];
        let mut q0 = 0;
        while q0 < lay.planes() {
            let q1 = (q0 + step).min(lay.planes());
            let n = (q1 - q0) * per;
            let cbuf = &mut cols[..rows * n];
            lay.im2col(x.data(), q0, q1, cbuf);
            gemm(
                cout,
                rows,
                n,
                w,
                rows,
                1,
                cbuf,
                n,
                1,
                T::zero(),
                &mut out.data_mut()[q0 * per..],
                total,
                1,
            );
            q0 = q1;
        }
    }
    if let Some(b) = b {
        for (c, chunk) in out.data_mut().chunks_mut(total).enumerate() {
            let bias = b[c];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
    }
    out
}

/// Backward convolution. Accumulates into `dw`/`db` when given and returns
/// the input gradient when `want_dx` is set.
pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    cout: usize,
    geom: ConvGeom,
    dy: &Tensor<T>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Tensor<T>> {
    let lay = layout(x, geom).expect("convolution input smaller than kernel");
    let rows = lay.rows();
    let [od, oh, ow] = lay.outs;
    let total = lay.batch * od * oh * ow;
    assert_eq!(dy.shape(), [cout, lay.batch, od, oh, ow], "output gradient shape");
    if let Some(db) = db {
        for (c, chunk) in dy.data().chunks(total).enumerate() {
            db[c] += T::cast(chunk.iter().map(|&v| v.as_f64()).sum());
        }
    }
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    if dw.is_none() && dx.is_none() {
        return None;
    }
    if geom.is_pointwise() {
        if let Some(dw) = dw {
            gemm(cout, total, rows, dy.data(), total, 1, x.data(), 1, total, T::one(), dw, rows, 1);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(rows, cout, total, w, 1, rows, dy.data(), total, 1, T::zero(), dx.data_mut(), total, 1);
        }
        return dx;
    }
    let per = lay.plane_cols();
    let step = lay.chunk_planes();
    let mut cols = vec![T::zero(); rows * step * per];
    let mut dw = dw;
    let mut q0 = 0;
    while q0 < lay.planes() {
        let q1 = (q0 + step).min(lay.planes());
        let n = (q1 - q0) * per;
        let dy_chunk = &dy.data()[q0 * per..];
        let cbuf = &mut cols[..rows * n];
        if let Some(dw) = dw.as_deref_mut() {
            lay.im2col(x.data(), q0, q1, cbuf);
            gemm(cout, n, rows, dy_chunk, total, 1, cbuf, 1, n, T::one(), dw, rows, 1);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(rows, cout, n, w, 1, rows, dy_chunk, total, 1, T::zero(), cbuf, n, 1);
            lay.col2im(cbuf, q0, q1, dx.data_mut());
        }
        q0 = q1;
    }
    dx
}

/// Transposed convolution with kernel 2, stride 2, no padding.
/// `w` is `[cin, cout * 8]` with the sub-position index `a*4 + b*2 + c`.
pub fn convt2_forward<T: Real>(x: &Tensor<T>, w: &[T], b: Option<&[T]>, cout: usize) -> Tensor<T> {
    let [cin, n, d, h, wd] = x.shape();
    assert_eq!(w.len(), cin * cout * 8, "weight shape mismatch");
    let total = n * d * h * wd;
    let mut out = Tensor::zeros([cout, n, 2 * d, 2 * h, 2 * wd]);
    let per = h * wd;
    let step = (COL_BUDGET / (cout * 8 * per).max(1)).clamp(1, n * d);
    let mut t = vec![T::zero(); cout * 8 * step * per];
    let mut q0 = 0;
    while q0 < n * d {
        let q1 = (q0 + step).min(n * d);
        let cols = (q1 - q0) * per;
        let tb = &mut t[..cout * 8 * cols];
        gemm(cout * 8, cin, cols, w, 1, cout * 8, &x.data()[q0 * per..], total, 1, T::zero(), tb, cols, 1);
        let od = out.data_mut();
        for co in 0..cout {
            let bias = b.map_or(T::zero(), |b| b[co]);
            for sub in 0..8 {
                let (a, bb, c) = (sub >> 2, (sub >> 1) & 1, sub & 1);
                let trow = &tb[(co * 8 + sub) * cols..(co * 8 + sub + 1) * cols];
                for q in q0..q1 {
                    let (ni, z) = (q / d, q % d);
                    let obase = ((co * n + ni) * 2 * d + 2 * z + a) * 4 * per;
                    for y in 0..h {
                        let orow = obase + (2 * y + bb) * 2 * wd + c;
                        let src = &trow[(q - q0) * per + y * wd..(q - q0) * per + (y + 1) * wd];
                        for (xx, v) in src.iter().enumerate() {
                            od[orow + 2 * xx] = *v + bias;
                        }
                    }
                }
            }
        }
        q0 = q1;
    }
    out
}

pub fn convt2_backward<T: Real>(
    x: &Tensor<T>,
    w: &[T],
    cout: usize,
    dy: &Tensor<T>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Tensor<T>> {
    let [cin, n, d, h, wd] = x.shape();
    assert_eq!(dy.shape(), [cout, n, 2 * d, 2 * h, 2 * wd], "output gradient shape");
    let total = n * d * h * wd;
    if let Some(db) = db {
        for (c, chunk) in dy.data().chunks(8 * total).enumerate() {
            db[c] += T::cast(chunk.iter().map(|&v| v.as_f64()).sum());
        }
    }
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    if dw.is_none() && dx.is_none() {
        return None;
    }
    let mut dw = dw;
    let per = h * wd;
    let step = (COL_BUDGET / (cout * 8 * per).max(1)).clamp(1, n * d);
    let mut t = vec![T::zero(); cout * 8 * step * per];
    let g = dy.data();
    let mut q0 = 0;
    while q0 < n * d {
        let q1 = (q0 + step).min(n * d);
        let cols = (q1 - q0) * per;
        let tb = &mut t[..cout * 8 * cols];
        for co in 0..cout {
            for sub in 0..8 {
                let (a, bb, c) = (sub >> 2, (sub >> 1) & 1, sub & 1);
                let trow = &mut tb[(co * 8 + sub) * cols..(co * 8 + sub + 1) * cols];
                for q in q0..q1 {
                    let (ni, z) = (q / d, q % d);
                    let obase = ((co * n + ni) * 2 * d + 2 * z + a) * 4 * per;
                    for y in 0..h {
                        let orow = obase + (2 * y + bb) * 2 * wd + c;
                        let dst = &mut trow[(q - q0) * per + y * wd..(q - q0) * per + (y + 1) * wd];
                        for (xx, v) in dst.iter_mut().enumerate() {
                            *v = g[orow + 2 * xx];
                        }
                    }
                }
            }
        }
        let xs = &x.data()[q0 * per..];
        if let Some(dw) = dw.as_deref_mut() {
            gemm(cin, cols, cout * 8, xs, total, 1, tb, 1, cols, T::one(), dw, cout * 8, 1);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(cin, cout * 8, cols, w, cout * 8, 1, tb, cols, 1, T::zero(), &mut dx.data_mut()[q0 * per..], total, 1);
        }
        q0 = q1;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, seed: u64) -> Vec<f32> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    /// Direct zero-padded convolution (cross-correlation).
    fn naive(x: &Tensor, w: &[f32], cout: usize, g: ConvGeom) -> Tensor {
        let [cin, n, d, h, wd] = x.shape();
        let [od, oh, ow] = g.output_spatial([d, h, wd]).unwrap();
        let mut out = Tensor::zeros([cout, n, od, oh, ow]);
        let k = g.k;
        for co in 0..cout {
            for b in 0..n {
                for z in 0..od {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut acc = 0f64;
                            for ci in 0..cin {
                                for a in 0..k[0] {
                                    for bb in 0..k[1] {
                                        for c in 0..k[2] {
                                            let iz = (z * g.s[0] + a) as isize - g.p[0] as isize;
                                            let iy = (y * g.s[1] + bb) as isize - g.p[1] as isize;
                                            let ix = (xx * g.s[2] + c) as isize - g.p[2] as isize;
                                            if iz < 0
                                                || iy < 0
                                                || ix < 0
                                                || iz as usize >= d
                                                || iy as usize >= h
                                                || ix as usize >= wd
                                            {
                                                continue;
                                            }
                                            let xi = (((ci * n + b) * d + iz as usize) * h
                                                + iy as usize)
                                                * wd
                                                + ix as usize;
                                            let wi = (((co * cin + ci) * k[0] + a) * k[1] + bb)
                                                * k[2]
                                                + c;
                                            acc += (x.data()[xi] * w[wi]) as f64;
                                        }
                                    }
                                }
                            }
                            let oi = (((co * n + b) * od + z) * oh + y) * ow + xx;
                            out.data_mut()[oi] = acc as f32;
                        }
                    }
                }
            }
        }
        out
    }

    fn check_geom(shape: [usize; 5], cout: usize, g: ConvGeom) {
        let x = Tensor::from_vec(shape, rand_vec(shape.iter().product(), 1));
        let w = rand_vec(cout * shape[0] * g.taps(), 2);
        let fast = conv_forward(&x, &w, None, cout, g);
        let slow = naive(&x, &w, cout, g);
        assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_matches_naive() {
        check_geom([2, 2, 5, 6, 7], 3, ConvGeom::cube(3, 1, 1));
        check_geom([1, 3, 1, 9, 8], 2, ConvGeom::planar(4, 2, 1));
        check_geom([3, 1, 4, 4, 4], 2, ConvGeom::cube(1, 1, 0));
        check_geom([1, 1, 9, 9, 9], 2, ConvGeom::cube(7, 1, 3));
    }

    /// Adjoint identity `<conv(x), g> = <x, conv^T(g)>` and
    /// `<dW, W'> = d/dt <conv_{W+tW'}(x), g>` checked through inner products.
    fn check_adjoint(shape: [usize; 5], cout: usize, g: ConvGeom) {
        let x = Tensor::from_vec(shape, rand_vec(shape.iter().product(), 3));
        let w = rand_vec(cout * shape[0] * g.taps(), 4);
        let y = conv_forward(&x, &w, None, cout, g);
        let gy = Tensor::from_vec(y.shape(), rand_vec(y.len(), 5));
        let mut dw = vec![0f32; w.len()];
        let dx = conv_backward(&x, &w, cout, g, &gy, Some(&mut dw), None, true).unwrap();
        let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(p, q)| (*p * *q) as f64).sum::<f64>();
        let lhs = dot(y.data(), gy.data());
        assert!((lhs - dot(x.data(), dx.data())).abs() < 1e-3 * lhs.abs().max(1.0));
        assert!((lhs - dot(&w, &dw)).abs() < 1e-3 * lhs.abs().max(1.0));
    }

    #[test]
    fn backward_is_adjoint() {
        check_adjoint([2, 2, 5, 6, 7], 3, ConvGeom::cube(3, 1, 1));
        check_adjoint([2, 3, 1, 10, 9], 2, ConvGeom::planar(4, 2, 1));
        check_adjoint([3, 1, 4, 4, 4], 2, ConvGeom::cube(1, 1, 0));
    }

    #[test]
    fn transposed_conv_adjoint_and_layout() {
        let x = Tensor::from_vec([3, 2, 2, 3, 2], rand_vec(72, 6));
        let cout = 2;
        let w = rand_vec(3 * cout * 8, 7);
        let y = convt2_forward(&x, &w, None, cout);
        assert_eq!(y.shape(), [2, 2, 4, 6, 4]);
        // Output voxel (co, n, 2z+a, 2y+b, 2x+c) = sum_ci w[ci, co*8+sub] x[ci, n, z, y, x].
        let (co, n, z, yy, xx, a, b, c) = (1, 1, 1, 2, 0, 1, 0, 1);
        let sub = a * 4 + b * 2 + c;
        let mut expect = 0.0;
        for ci in 0..3 {
            expect += w[ci * cout * 8 + co * 8 + sub] * x.data()[(((ci * 2 + n) * 2 + z) * 3 + yy) * 2 + xx];
        }
        let got = y.data()[(((co * 2 + n) * 4 + 2 * z + a) * 6 + 2 * yy + b) * 4 + 2 * xx + c];
        assert!((got - expect).abs() < 1e-5);

        let gy = Tensor::from_vec(y.shape(), rand_vec(y.len(), 8));
        let mut dw = vec![0f32; w.len()];
        let mut db = vec![0f32; cout];
        let dx = convt2_backward(&x, &w, cout, &gy, Some(&mut dw), Some(&mut db), true).unwrap();
        let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(p, q)| (*p * *q) as f64).sum::<f64>();
        let lhs = dot(y.data(), gy.data());
        assert!((lhs - dot(x.data(), dx.data())).abs() < 1e-4 * lhs.abs().max(1.0));
        assert!((lhs - dot(&w, &dw)).abs() < 1e-4 * lhs.abs().max(1.0));
    }

    #[test]
    fn output_size_formula() {
        let g = ConvGeom::planar(4, 2, 1);
        assert_eq!(g.output_spatial([1, 132, 132]), Some([1, 66, 66]));
        assert_eq!(g.output_spatial([1, 1, 1]), None);
    }
}
