//! Linear U-Net on DOF images, with hand-written backward passes and Adam.
//!
//! Tensors are `(batch, channels, height, width)` in row-major order.
//! Convolutions are same-size cross-correlations with zero padding,
//! computed as im2col followed by a GEMM.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("non-finite gradient in parameter tensor {tensor} at index {index} (value {value})")]
    NonFiniteGradient { tensor: usize, index: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self, NnError> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(NnError::Shape(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Self { shape, data })
    }

    /// Single-sample, single-channel image of side `side`.
    pub fn image(side: usize, data: Vec<f64>) -> Result<Self, NnError> {
        Self::from_vec([1, 1, side, side], data)
    }

    pub fn random_uniform<R: Rng + ?Sized>(shape: [usize; 4], bound: f64, rng: &mut R) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn check_even(x: &Tensor) -> Result<(), NnError> {
    let [_, _, h, w] = x.shape;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::Shape(format!("average pooling needs even sides, got {h}x{w}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// convolution

/// Output pixels per im2col tile.
const TILE_PIXELS: usize = 128;

struct ConvGeometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl ConvGeometry {
    fn new(x: &Tensor, weight: &Tensor) -> Result<Self, NnError> {
        let [batch, c_in, h, w] = x.shape;
        let [c_out, wc_in, k, k2] = weight.shape;
        if wc_in != c_in {
            return Err(NnError::Shape(format!("kernel expects {wc_in} input channels, input has {c_in}")));
        }
        if k != k2 || k % 2 == 0 {
            return Err(NnError::Shape(format!("kernel must be square with odd size, got {k}x{k2}")));
        }
        Ok(Self { batch, c_in, c_out, h, w, k })
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn rows_per_tile(&self) -> usize {
        (TILE_PIXELS / self.w).clamp(1, self.h)
    }
}

/// Gather the receptive fields of output rows `r0..r1` into a
/// `(c_in k k) x ((r1 - r0) w)` row-major matrix.
fn im2col(x: &[f64], g: &ConvGeometry, r0: usize, r1: usize, cols: &mut [f64]) {
    let (h, w, k) = (g.h, g.w, g.k);
    let pad = (k - 1) / 2;
    let t = (r1 - r0) * w;
    let mut row = 0;
    for ci in 0..g.c_in {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut cols[row * t..(row + 1) * t];
                // valid output columns c with 0 <= c + kx - pad < w
                let c_lo = pad.saturating_sub(kx);
                let c_hi = (w + pad).saturating_sub(kx).min(w);
                for (ri, r) in (r0..r1).enumerate() {
                    let out = &mut dst[ri * w..(ri + 1) * w];
                    let src_r = r + ky;
                    if src_r < pad || src_r - pad >= h || c_lo >= c_hi {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[(src_r - pad) * w..(src_r - pad + 1) * w];
                    out[..c_lo].fill(0.0);
                    out[c_hi..].fill(0.0);
                    let s0 = c_lo + kx - pad;
                    out[c_lo..c_hi].copy_from_slice(&src[s0..s0 + (c_hi - c_lo)]);
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add the columns back into `gx`.
fn col2im(cols: &[f64], g: &ConvGeometry, r0: usize, r1: usize, gx: &mut [f64]) {
    let (h, w, k) = (g.h, g.w, g.k);
    let pad = (k - 1) / 2;
    let t = (r1 - r0) * w;
    let mut row = 0;
    for ci in 0..g.c_in {
        let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &cols[row * t..(row + 1) * t];
                let c_lo = pad.saturating_sub(kx);
                let c_hi = (w + pad).saturating_sub(kx).min(w);
                for (ri, r) in (r0..r1).enumerate() {
                    let src_r = r + ky;
                    if src_r < pad || src_r - pad >= h || c_lo >= c_hi {
                        continue;
                    }
                    let dst = &mut plane[(src_r - pad) * w..(src_r - pad + 1) * w];
                    let s0 = c_lo + kx - pad;
                    for (d, v) in dst[s0..s0 + (c_hi - c_lo)].iter_mut().zip(&src[ri * w + c_lo..ri * w + c_hi]) {
                        *d += v;
                    }
                }
                row += 1;
            }
        }
    }
}

/// `c = alpha a b + beta c` for strided row-major operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    // bounds of the strided views, checked once so the raw call is sound
    let extent = |rows: usize, cols: usize, rs: isize, cs: isize| (rows - 1) as isize * rs + (cols - 1) as isize * cs + 1;
    if k > 0 {
        assert!(extent(m, k, rsa, csa) as usize <= a.len());
        assert!(extent(k, n, rsb, csb) as usize <= b.len());
    }
    assert!(extent(m, n, rsc, csc) as usize <= c.len());
    // SAFETY: all strides are non-negative and the extents of the three
    // views were checked against the slice lengths above.
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

/// Layers with at most this many output channels skip im2col.
const DIRECT_MAX_OUT: usize = 2;

/// Visit every `(ci, ky, kx)` tap together with the matching output and
/// input row spans of one sample.
fn for_each_tap(g: &ConvGeometry, mut f: impl FnMut(usize, usize, std::ops::Range<usize>, std::ops::Range<usize>)) {
    let (h, w, k) = (g.h, g.w, g.k);
    let pad = (k - 1) / 2;
    for ci in 0..g.c_in {
        for ky in 0..k {
            let r_lo = pad.saturating_sub(ky);
            let r_hi = (h + pad).saturating_sub(ky).min(h);
            for kx in 0..k {
                let c_lo = pad.saturating_sub(kx);
                let c_hi = (w + pad).saturating_sub(kx).min(w);
                if c_lo >= c_hi {
                    continue;
                }
                let tap = (ci * k + ky) * k + kx;
                for r in r_lo..r_hi {
                    let out = r * w + c_lo..r * w + c_hi;
                    let s = (ci * h + r + ky - pad) * w + c_lo + kx - pad;
                    f(tap, ci, out, s..s + (c_hi - c_lo));
                }
            }
        }
    }
}

fn direct_forward(xb: &[f64], weight: &[f64], g: &ConvGeometry, ob: &mut [f64]) {
    let hw = g.h * g.w;
    let patch = g.patch();
    for co in 0..g.c_out {
        let wrow = &weight[co * patch..(co + 1) * patch];
        let plane = &mut ob[co * hw..(co + 1) * hw];
        for_each_tap(g, |tap, _, out, src| {
            let wv = wrow[tap];
            for (o, x) in plane[out].iter_mut().zip(&xb[src]) {
                *o += wv * x;
            }
        });
    }
}

fn direct_backward(xb: &[f64], weight: &[f64], gob: &[f64], g: &ConvGeometry, mut gxb: Option<&mut [f64]>, gw: &mut [f64]) {
    let hw = g.h * g.w;
    let patch = g.patch();
    for co in 0..g.c_out {
        let wrow = &weight[co * patch..(co + 1) * patch];
        let gwrow = &mut gw[co * patch..(co + 1) * patch];
        let plane = &gob[co * hw..(co + 1) * hw];
        for_each_tap(g, |tap, _, out, src| {
            let go = &plane[out];
            gwrow[tap] += go.iter().zip(&xb[src.clone()]).map(|(a, b)| a * b).sum::<f64>();
            if let Some(gx) = gxb.as_deref_mut() {
                let wv = wrow[tap];
                for (d, v) in gx[src].iter_mut().zip(go) {
                    *d += wv * v;
                }
            }
        });
    }
}

/// Same-size cross-correlation of `x` with `weight` (`c_out, c_in, k, k`).
pub fn conv2d_forward(x: &Tensor, weight: &Tensor) -> Result<Tensor, NnError> {
    conv2d_forward_bias(x, weight, None)
}

pub fn conv2d_forward_bias(x: &Tensor, weight: &Tensor, bias: Option<&[f64]>) -> Result<Tensor, NnError> {
    let g = ConvGeometry::new(x, weight)?;
    if let Some(b) = bias {
        if b.len() != g.c_out {
            return Err(NnError::Shape(format!("{} biases for {} output channels", b.len(), g.c_out)));
        }
    }
    let hw = g.h * g.w;
    let patch = g.patch();
    let mut out = Tensor::zeros([g.batch, g.c_out, g.h, g.w]);
    let rows = g.rows_per_tile();
    let mut cols = vec![0.0; patch * rows * g.w];
    for b in 0..g.batch {
        let xb = &x.data[b * g.c_in * hw..(b + 1) * g.c_in * hw];
        let ob = &mut out.data[b * g.c_out * hw..(b + 1) * g.c_out * hw];
        if let Some(bias) = bias {
            for (plane, &bv) in ob.chunks_mut(hw).zip(bias) {
                plane.fill(bv);
            }
        }
        if g.c_out <= DIRECT_MAX_OUT {
            direct_forward(xb, &weight.data, &g, ob);
            continue;
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        let mut r0 = 0;
        while r0 < g.h {
            let r1 = (r0 + rows).min(g.h);
            let t = (r1 - r0) * g.w;
            im2col(xb, &g, r0, r1, &mut cols);
            gemm(
                g.c_out,
                patch,
                t,
                &weight.data,
                (patch as isize, 1),
                &cols,
                (t as isize, 1),
                beta,
                &mut ob[r0 * g.w..],
                (hw as isize, 1),
            );
            r0 = r1;
        }
    }
    Ok(out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

/// Gradients of `Σ g_out ⊙ conv(x, w)` with respect to `x` and `w`.
pub fn conv2d_backward(x: &Tensor, weight: &Tensor, g_out: &Tensor) -> Result<(Tensor, Tensor), NnError> {
    let grads = conv2d_backward_full(x, weight, g_out, true)?;
    Ok((grads.input.expect("requested"), grads.weight))
}

pub fn conv2d_backward_full(
    x: &Tensor,
    weight: &Tensor,
    g_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads, NnError> {
    let g = ConvGeometry::new(x, weight)?;
    if g_out.shape != [g.batch, g.c_out, g.h, g.w] {
        return Err(NnError::Shape(format!(
            "output gradient {:?} does not match forward output {:?}",
            g_out.shape,
            [g.batch, g.c_out, g.h, g.w]
        )));
    }
    let hw = g.h * g.w;
    let patch = g.patch();
    let rows = g.rows_per_tile();
    let mut cols = vec![0.0; patch * rows * g.w];
    let mut gcols = if need_input { vec![0.0; patch * rows * g.w] } else { Vec::new() };
    let mut gw = Tensor::zeros(weight.shape);
    let mut gb = vec![0.0; g.c_out];
    let mut gx = need_input.then(|| Tensor::zeros(x.shape));
    for b in 0..g.batch {
        let xb = &x.data[b * g.c_in * hw..(b + 1) * g.c_in * hw];
        let gob = &g_out.data[b * g.c_out * hw..(b + 1) * g.c_out * hw];
        for (acc, plane) in gb.iter_mut().zip(gob.chunks(hw)) {
            *acc += plane.iter().sum::<f64>();
        }
        if g.c_out <= DIRECT_MAX_OUT {
            let gxb = gx.as_mut().map(|t| &mut t.data[b * g.c_in * hw..(b + 1) * g.c_in * hw]);
            direct_backward(xb, &weight.data, gob, &g, gxb, &mut gw.data);
            continue;
        }
        let mut r0 = 0;
        while r0 < g.h {
            let r1 = (r0 + rows).min(g.h);
            let t = (r1 - r0) * g.w;
            let go_tile = &gob[r0 * g.w..];
            im2col(xb, &g, r0, r1, &mut cols);
            // g_w += g_out_tile · colsᵀ
            gemm(
                g.c_out,
                t,
                patch,
                go_tile,
                (hw as isize, 1),
                &cols,
                (1, t as isize),
                1.0,
                &mut gw.data,
                (patch as isize, 1),
            );
            if let Some(gx) = gx.as_mut() {
                // g_cols = wᵀ · g_out_tile
                gemm(
                    patch,
                    g.c_out,
                    t,
                    &weight.data,
                    (1, patch as isize),
                    go_tile,
                    (hw as isize, 1),
                    0.0,
                    &mut gcols,
                    (t as isize, 1),
                );
                let gxb = &mut gx.data[b * g.c_in * hw..(b + 1) * g.c_in * hw];
                col2im(&gcols, &g, r0, r1, gxb);
            }
            r0 = r1;
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

// ---------------------------------------------------------------------------
// resampling

/// 2x2 mean with stride 2.
pub fn avgpool2(x: &Tensor) -> Result<Tensor, NnError> {
    check_even(x)?;
    let [b, c, h, w] = x.shape;
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros([b, c, ho, wo]);
    for (src, dst) in x.data.chunks(h * w).zip(out.data.chunks_mut(ho * wo)) {
        for i in 0..ho {
            for j in 0..wo {
                let p = 2 * i * w + 2 * j;
                dst[i * wo + j] = 0.25 * (src[p] + src[p + 1] + src[p + w] + src[p + w + 1]);
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`avgpool2`]: `g` has the pooled shape.
pub fn avgpool2_backward(g: &Tensor) -> Tensor {
    let [b, c, ho, wo] = g.shape;
    let (h, w) = (2 * ho, 2 * wo);
    let mut out = Tensor::zeros([b, c, h, w]);
    for (src, dst) in g.data.chunks(ho * wo).zip(out.data.chunks_mut(h * w)) {
        for i in 0..ho {
            for j in 0..wo {
                let v = 0.25 * src[i * wo + j];
                let p = 2 * i * w + 2 * j;
                dst[p] = v;
                dst[p + 1] = v;
                dst[p + w] = v;
                dst[p + w + 1] = v;
            }
        }
    }
    out
}

/// Source taps `(i0, i1, w0, w1)` of each output index when doubling a
/// length-`n` axis with half-pixel centers.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let lambda = src - i0 as f64;
            (i0, i1, 1.0 - lambda, lambda)
        })
        .collect()
}

/// Bilinear interpolation to twice the spatial size.
pub fn bilinear_upsample2(x: &Tensor) -> Tensor {
    let [b, c, h, w] = x.shape;
    let mut out = Tensor::zeros([b, c, 2 * h, 2 * w]);
    if h == 0 || w == 0 {
        return out;
    }
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let wo = 2 * w;
    for (src, dst) in x.data.chunks(h * w).zip(out.data.chunks_mut(4 * h * w)) {
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            let row = &mut dst[oy * wo..(oy + 1) * wo];
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                row[ox] = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_upsample2`]: `g` has the upsampled shape.
pub fn bilinear_upsample2_backward(g: &Tensor) -> Result<Tensor, NnError> {
    check_even(g)?;
    let [b, c, ho, wo] = g.shape;
    let (h, w) = (ho / 2, wo / 2);
    let mut out = Tensor::zeros([b, c, h, w]);
    if h == 0 || w == 0 {
        return Ok(out);
    }
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    for (src, dst) in g.data.chunks(ho * wo).zip(out.data.chunks_mut(h * w)) {
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let row = &src[oy * wo..(oy + 1) * wo];
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let v = row[ox];
                dst[y0 * w + x0] += wy0 * wx0 * v;
                dst[y0 * w + x1] += wy0 * wx1 * v;
                dst[y1 * w + x0] += wy1 * wx0 * v;
                dst[y1 * w + x1] += wy1 * wx1 * v;
            }
        }
    }
    Ok(out)
}

/// Channel-wise concatenation `[a, b]`.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let [na, ca, ha, wa] = a.shape;
    let [nb, cb, hb, wb] = b.shape;
    if na != nb || ha != hb || wa != wb {
        return Err(NnError::Shape(format!("cannot concatenate {:?} and {:?}", a.shape, b.shape)));
    }
    let hw = ha * wa;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..na {
        data.extend_from_slice(&a.data[n * ca * hw..(n + 1) * ca * hw]);
        data.extend_from_slice(&b.data[n * cb * hw..(n + 1) * cb * hw]);
    }
    Ok(Tensor {
        shape: [na, ca + cb, ha, wa],
        data,
    })
}

/// Split a gradient of a concatenation back into its two parts.
pub fn split_channels(g: &Tensor, first: usize) -> Result<(Tensor, Tensor), NnError> {
    let [n, c, h, w] = g.shape;
    if first > c {
        return Err(NnError::Shape(format!("cannot split {c} channels at {first}")));
    }
    let hw = h * w;
    let mut a = Vec::with_capacity(n * first * hw);
    let mut b = Vec::with_capacity(n * (c - first) * hw);
    for s in g.data.chunks(c * hw) {
        a.extend_from_slice(&s[..first * hw]);
        b.extend_from_slice(&s[first * hw..]);
    }
    Ok((
        Tensor { shape: [n, first, h, w], data: a },
        Tensor { shape: [n, c - first, h, w], data: b },
    ))
}

// ---------------------------------------------------------------------------
// network

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" | "linear" | "none" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Number of pooling levels: the smallest `d` with `2^d (k + 1) >= M`.
pub fn unet_depth(input_side: usize, kernel: usize) -> usize {
    let mut d = 0;
    while (kernel + 1) << d < input_side {
        d += 1;
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    pub channels: usize,
    pub kernel: usize,
    pub input_side: usize,
    pub depth: usize,
    pub activation: Activation,
    pub use_bias: bool,
}

impl UNetConfig {
    /// Defaults for an `M x M` input: 32 channels, 7x7 kernels, identity
    /// activation, no bias.
    pub fn new(input_side: usize) -> Self {
        Self::with(input_side, 32, 7)
    }

    pub fn with(input_side: usize, channels: usize, kernel: usize) -> Self {
        Self {
            channels,
            kernel,
            input_side,
            depth: unet_depth(input_side, kernel),
            activation: Activation::Identity,
            use_bias: false,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.kernel.is_multiple_of(2) || self.kernel == 0 {
            return Err(NnError::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if self.channels == 0 {
            return Err(NnError::Config("need at least one channel".into()));
        }
        if self.input_side == 0 || !self.input_side.is_multiple_of(1 << self.depth) {
            return Err(NnError::Config(format!(
                "input side {} is not divisible by 2^{}",
                self.input_side, self.depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
}

impl ConvLayer {
    fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, use_bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        Self {
            weight: Tensor::random_uniform([c_out, c_in, k, k], bound, rng),
            bias: use_bias.then(|| vec![0.0; c_out]),
        }
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    pub config: UNetConfig,
    /// encoder levels `0..d` (two each), bottleneck (two), decoder levels
    /// `d-1..=0` (two each), final projection
    pub layers: Vec<ConvLayer>,
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache {
    /// per layer: input and pre-activation output
    inputs: Vec<Tensor>,
    pre_activations: Vec<Option<Tensor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.data());
            if let Some(b) = &l.bias {
                out.push(b.as_slice());
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            if let Some(b) = &mut l.bias {
                out.push(b.as_mut_slice());
            }
        }
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Accumulate `other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign(&b.weight);
            if let (Some(x), Some(y)) = (a.bias.as_mut(), b.bias.as_ref()) {
                x.iter_mut().zip(y).for_each(|(p, q)| *p += q);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Build the U-Net with weights drawn from `rng`.
pub fn build_unet<R: Rng + ?Sized>(config: UNetConfig, rng: &mut R) -> Result<UNet, NnError> {
    config.validate()?;
    let (c, k, d, bias) = (config.channels, config.kernel, config.depth, config.use_bias);
    let mut layers = Vec::with_capacity(4 * d + 3);
    for level in 0..d {
        let c_in = if level == 0 { 1 } else { c };
        layers.push(ConvLayer::new(c_in, c, k, bias, rng));
        layers.push(ConvLayer::new(c, c, k, bias, rng));
    }
    let c_in = if d == 0 { 1 } else { c };
    layers.push(ConvLayer::new(c_in, c, k, bias, rng));
    layers.push(ConvLayer::new(c, c, k, bias, rng));
    for _ in 0..d {
        layers.push(ConvLayer::new(2 * c, c, k, bias, rng));
        layers.push(ConvLayer::new(c, c, k, bias, rng));
    }
    layers.push(ConvLayer::new(c, 1, k, bias, rng));
    Ok(UNet { config, layers })
}

impl UNet {
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    pub fn depth(&self) -> usize {
        self.config.depth
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.data());
            if let Some(b) = &l.bias {
                out.push(b.as_slice());
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            if let Some(b) = &mut l.bias {
                out.push(b.as_mut_slice());
            }
        }
        out
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Tensor::zeros(l.weight.shape),
                    bias: l.bias.as_ref().map(|b| vec![0.0; b.len()]),
                })
                .collect(),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        let m = self.config.input_side;
        let [_, c, h, w] = x.shape;
        if c != 1 || h != m || w != m {
            return Err(NnError::Shape(format!("network expects (B, 1, {m}, {m}), got {:?}", x.shape)));
        }
        Ok(())
    }

    fn bottleneck_index(&self) -> usize {
        2 * self.config.depth
    }

    fn decoder_index(&self, level: usize) -> usize {
        2 * self.config.depth + 2 + 2 * (self.config.depth - 1 - level)
    }

    fn apply_layer(&self, idx: usize, x: Tensor, activate: bool, cache: Option<&mut ForwardCache>) -> Result<Tensor, NnError> {
        let layer = &self.layers[idx];
        let z = conv2d_forward_bias(&x, &layer.weight, layer.bias.as_deref())?;
        let act = self.config.activation;
        let apply = activate && act != Activation::Identity;
        let y = if apply {
            let mut y = z.clone();
            y.data.iter_mut().for_each(|v| *v = act.apply(*v));
            y
        } else {
            z.clone()
        };
        if let Some(cache) = cache {
            cache.inputs[idx] = x;
            cache.pre_activations[idx] = apply.then_some(z);
        }
        Ok(y)
    }

    fn run(&self, x: &Tensor, mut cache: Option<&mut ForwardCache>) -> Result<Tensor, NnError> {
        self.check_input(x)?;
        let d = self.config.depth;
        let mut h = x.clone();
        let mut skips = Vec::with_capacity(d);
        for level in 0..d {
            h = self.apply_layer(2 * level, h, true, cache.as_deref_mut())?;
            h = self.apply_layer(2 * level + 1, h, true, cache.as_deref_mut())?;
            let pooled = avgpool2(&h)?;
            skips.push(h);
            h = pooled;
        }
        let b = self.bottleneck_index();
        h = self.apply_layer(b, h, true, cache.as_deref_mut())?;
        h = self.apply_layer(b + 1, h, true, cache.as_deref_mut())?;
        for level in (0..d).rev() {
            let up = bilinear_upsample2(&h);
            let cat = concat_channels(&skips[level], &up)?;
            let i = self.decoder_index(level);
            h = self.apply_layer(i, cat, true, cache.as_deref_mut())?;
            h = self.apply_layer(i + 1, h, true, cache.as_deref_mut())?;
        }
        self.apply_layer(self.layers.len() - 1, h, false, cache)
    }

    /// Prediction only.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.run(x, None)
    }

    pub fn forward_with_cache(&self, x: &Tensor) -> Result<(Tensor, ForwardCache), NnError> {
        let n = self.layers.len();
        let mut cache = ForwardCache {
            inputs: vec![Tensor::zeros([0, 0, 0, 0]); n],
            pre_activations: vec![None; n],
        };
        let y = self.run(x, Some(&mut cache))?;
        Ok((y, cache))
    }

    fn layer_backward(
        &self,
        idx: usize,
        cache: &ForwardCache,
        mut g: Tensor,
        grads: &mut Gradients,
        need_input: bool,
    ) -> Result<Option<Tensor>, NnError> {
        if let Some(z) = &cache.pre_activations[idx] {
            let act = self.config.activation;
            g.data.iter_mut().zip(&z.data).for_each(|(gv, zv)| *gv *= act.derivative(*zv));
        }
        let layer = &self.layers[idx];
        let cg = conv2d_backward_full(&cache.inputs[idx], &layer.weight, &g, need_input)?;
        let slot = &mut grads.layers[idx];
        slot.weight.add_assign(&cg.weight);
        if let Some(b) = slot.bias.as_mut() {
            b.iter_mut().zip(&cg.bias).for_each(|(p, q)| *p += q);
        }
        Ok(cg.input)
    }

    /// Accumulate the parameter gradients of `Σ g_y ⊙ y` into `grads`.
    pub fn backward_into(&self, cache: &ForwardCache, g_y: &Tensor, grads: &mut Gradients) -> Result<(), NnError> {
        let d = self.config.depth;
        let last = self.layers.len() - 1;
        if cache.inputs[last].shape[0] != g_y.shape[0] {
            return Err(NnError::Shape("batch of output gradient differs from the cached forward".into()));
        }
        let mut g = self
            .layer_backward(last, cache, g_y.clone(), grads, true)?
            .expect("input gradient");
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; d];
        for (level, slot) in skip_grads.iter_mut().enumerate() {
            let i = self.decoder_index(level);
            g = self.layer_backward(i + 1, cache, g, grads, true)?.expect("input gradient");
            let g_cat = self.layer_backward(i, cache, g, grads, true)?.expect("input gradient");
            let (g_skip, g_up) = split_channels(&g_cat, self.config.channels)?;
            *slot = Some(g_skip);
            g = bilinear_upsample2_backward(&g_up)?;
        }
        let b = self.bottleneck_index();
        g = self.layer_backward(b + 1, cache, g, grads, true)?.expect("input gradient");
        let mut g_in = self.layer_backward(b, cache, g, grads, d > 0)?;
        for level in (0..d).rev() {
            let mut g_level = avgpool2_backward(&g_in.take().expect("input gradient"));
            g_level.add_assign(skip_grads[level].as_ref().expect("skip gradient"));
            let g_mid = self.layer_backward(2 * level + 1, cache, g_level, grads, true)?.expect("input gradient");
            g_in = self.layer_backward(2 * level, cache, g_mid, grads, level > 0)?;
        }
        Ok(())
    }

    pub fn backward(&self, cache: &ForwardCache, g_y: &Tensor) -> Result<Gradients, NnError> {
        let mut grads = self.zero_gradients();
        self.backward_into(cache, g_y, &mut grads)?;
        Ok(grads)
    }
}

// ---------------------------------------------------------------------------
// optimizer

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-7,
            clip_norm: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &UNet) -> Self {
        let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        Self {
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// Adam update over a list of parameter tensors: weight decay is added to
/// the gradients, which are then clipped to a global norm, then the
/// bias-corrected moment update is applied. `grads` is modified in place.
pub fn adam_update(
    params: &mut [&mut [f64]],
    grads: &mut [&mut [f64]],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<(), NnError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NnError::Shape(format!(
            "{} parameter tensors, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (t, (p, g)) in params.iter().zip(grads.iter_mut()).enumerate() {
        if p.len() != g.len() || p.len() != state.m[t].len() {
            return Err(NnError::Shape(format!("parameter tensor {t} size mismatch")));
        }
        for (i, (gi, pi)) in g.iter_mut().zip(p.iter()).enumerate() {
            if !gi.is_finite() {
                return Err(NnError::NonFiniteGradient { tensor: t, index: i, value: *gi });
            }
            *gi += hyper.weight_decay * pi;
        }
    }
    let norm = grads.iter().flat_map(|g| g.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > hyper.clip_norm {
        let s = hyper.clip_norm / norm;
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - hyper.beta1.powf(t);
    let bc2 = 1.0 - hyper.beta2.powf(t);
    for (k, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

/// One optimizer step on the network.
pub fn adam_step(net: &mut UNet, grads: &mut Gradients, state: &mut AdamState, hyper: &AdamHyper) -> Result<(), NnError> {
    let mut params = net.params_mut();
    let mut g = grads.tensors_mut();
    adam_update(&mut params, &mut g, state, hyper)
}

/// Cosine annealing from `lr0` at step 0 to zero at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let s = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * s).cos())
}
