//! Strided 3D convolution and transposed convolution with same padding.
//!
//! Both operators are expressed through one per-axis index plan relating a
//! "big" lattice (convolution input, transposed-convolution output) to a
//! "small" lattice of size `ceil(big / stride)`. Tap `t` links big index `i`
//! and small index `o` when `o * stride + t - pad_before == i`.
//!
//! Padding split: the total padding `max((small - 1) * stride + k - big, 0)`
//! is divided with `pad_before = total / 2` and the remainder after, i.e. the
//! high side receives the extra cell when the total is odd. Encoder and
//! decoder depend on this bit-exactly.
//!
//! Kernels run on channels-last `f64` buffers. The source operand is walked
//! position by position and all-zero entries are skipped, which makes ReLU
//! activations, binary occupancy inputs and masked gradients cheap.

use super::phase::PhasePlan;
use super::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// One convolutional layer: weights `[out_channels, in_channels, k, k, k]`,
/// optional per-output-channel bias, cubic stride and activation.
///
/// The same layout is used for transposed layers: `out_channels` is the
/// channel count the transposed operator produces.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerParams {
    pub weights: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub activation: Activation,
}

impl ConvLayerParams {
    pub fn new(
        weights: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        activation: Activation,
    ) -> Result<Self> {
        let layer = Self {
            weights,
            bias,
            stride,
            activation,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.weights.shape();
        if s.len() != 5 || s[2] != s[3] || s[3] != s[4] {
            return Err(TensorError::Shape(format!(
                "conv weights must be [out, in, k, k, k], got {s:?}"
            )));
        }
        if self.stride == 0 {
            return Err(TensorError::Argument("stride must be >= 1".into()));
        }
        if let Some(b) = &self.bias {
            if b.shape() != [s[0]] {
                return Err(TensorError::Shape(format!(
                    "bias shape {:?} does not match {} output channels",
                    b.shape(),
                    s[0]
                )));
            }
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }
}

/// Zero padding on each side of one axis for a same-padded strided window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamePadding {
    pub before: usize,
    pub after: usize,
}

impl SamePadding {
    pub fn new(input: usize, kernel: usize, stride: usize) -> Self {
        let output = input.div_ceil(stride);
        let total = ((output - 1) * stride + kernel).saturating_sub(input);
        Self {
            before: total / 2,
            after: total - total / 2,
        }
    }
}

type TapList = Vec<Vec<(u32, u32)>>;

#[derive(Clone, Debug)]
struct AxisPlan {
    /// For each big index, the `(tap, small index)` pairs touching it.
    from_big: TapList,
    /// For each small index, the `(tap, big index)` pairs it touches.
    from_small: TapList,
}

impl AxisPlan {
    fn new(big: usize, kernel: usize, stride: usize) -> Self {
        let small = big.div_ceil(stride);
        let pad = SamePadding::new(big, kernel, stride).before as isize;
        let mut from_big = vec![Vec::new(); big];
        let mut from_small = vec![Vec::new(); small];
        for (o, list) in from_small.iter_mut().enumerate() {
            for t in 0..kernel {
                let i = (o * stride + t) as isize - pad;
                if i >= 0 && (i as usize) < big {
                    list.push((t as u32, i as u32));
                    from_big[i as usize].push((t as u32, o as u32));
                }
            }
        }
        Self {
            from_big,
            from_small,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    BigToSmall,
    SmallToBig,
}

/// Index plan for a cubic kernel between a big and a small lattice.
#[derive(Clone, Debug)]
pub(crate) struct ConvPlan {
    kernel: usize,
    stride: usize,
    big: [usize; 3],
    small: [usize; 3],
    axes: [AxisPlan; 3],
}

impl ConvPlan {
    pub(crate) fn new(big: [usize; 3], kernel: usize, stride: usize) -> Self {
        let small = big.map(|b| b.div_ceil(stride));
        let axes = [0, 1, 2].map(|a| AxisPlan::new(big[a], kernel, stride));
        Self {
            kernel,
            stride,
            big,
            small,
            axes,
        }
    }

    fn taps(&self) -> usize {
        self.kernel * self.kernel * self.kernel
    }

    /// Moves `src` across the plan through the per-tap matrices
    /// `m[tap][c_big][c_small]` into a fresh target buffer.
    fn transfer(
        &self,
        dir: Direction,
        src: &[f64],
        cb: usize,
        cs: usize,
        m: &TapMatrices,
    ) -> Vec<f64> {
        let (csrc, ctgt, src_dims, tgt_dims) = match dir {
            Direction::BigToSmall => (cb, cs, self.big, self.small),
            Direction::SmallToBig => (cs, cb, self.small, self.big),
        };
        let tgt_len: usize = tgt_dims.iter().product();
        let mut tgt = vec![0.0; tgt_len * ctgt];
        let lists = [0, 1, 2].map(|a| match dir {
            Direction::BigToSmall => &self.axes[a].from_big,
            Direction::SmallToBig => &self.axes[a].from_small,
        });
        let back = [0, 1, 2].map(|a| match dir {
            Direction::BigToSmall => &self.axes[a].from_small,
            Direction::SmallToBig => &self.axes[a].from_big,
        });
        let job = Job {
            src,
            csrc,
            src_dims,
            lists,
            ctgt,
            tgt_dims,
            k: self.kernel,
        };
        let src_len: usize = src_dims.iter().product();
        let live = src
            .chunks_exact(csrc)
            .filter(|r| r.iter().any(|&v| v != 0.0))
            .count();
        if ctgt < 8 {
            job.contract_scatter(&mut tgt, &m.src_tap_tgt(dir));
        } else if csrc < 8 && live * 10 >= src_len {
            job.gather(&mut tgt, &m.tap_src_tgt(dir), back);
        } else {
            job.scatter(&mut tgt, &m.tap_src_tgt(dir));
        }
        tgt
    }

    /// `g[tap][c_big][c_small] = sum over linked (i, o) of big[i] * small[o]`.
    fn tap_outer(&self, big: &[f64], cb: usize, small: &[f64], cs: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.taps() * cb * cs];
        let small_live: Vec<bool> = small
            .chunks_exact(cs)
            .map(|row| row.iter().any(|&v| v != 0.0))
            .collect();
        let [bd, bh, bw] = self.big;
        let [_, sh, sw] = self.small;
        let k = self.kernel;
        let mut nz = Vec::with_capacity(cb);
        for d in 0..bd {
            for h in 0..bh {
                for w in 0..bw {
                    let pos = (d * bh + h) * bw + w;
                    nonzeros(&big[pos * cb..(pos + 1) * cb], &mut nz);
                    if nz.is_empty() {
                        continue;
                    }
                    for &(td, od) in &self.axes[0].from_big[d] {
                        for &(th, oh) in &self.axes[1].from_big[h] {
                            for &(tw, ow) in &self.axes[2].from_big[w] {
                                let opos = (od as usize * sh + oh as usize) * sw + ow as usize;
                                if !small_live[opos] {
                                    continue;
                                }
                                let tap = (td as usize * k + th as usize) * k + tw as usize;
                                let srow = &small[opos * cs..(opos + 1) * cs];
                                for &(c, v) in &nz {
                                    let grow = &mut g[(tap * cb + c) * cs..(tap * cb + c + 1) * cs];
                                    axpy(grow, v, srow);
                                }
                            }
                        }
                    }
                }
            }
        }
        g
    }
}

/// Layer weights viewed as per-tap matrices between big and small channels.
struct TapMatrices<'a> {
    weights: &'a [f64],
    out: usize,
    inn: usize,
    taps: usize,
    transpose: bool,
}

impl<'a> TapMatrices<'a> {
    /// `w` is `[out, in, k, k, k]`; for a convolution the big side is the
    /// input, for a transposed convolution it is the output.
    fn from_weights(w: &'a Tensor, transpose: bool) -> Self {
        let s = w.shape();
        Self {
            weights: w.data(),
            out: s[0],
            inn: s[1],
            taps: s[2] * s[3] * s[4],
            transpose,
        }
    }

    /// Calls `f(tap, c_src, c_tgt, value)` for every weight.
    fn for_each(&self, dir: Direction, mut f: impl FnMut(usize, usize, usize, f64)) {
        for o in 0..self.out {
            for i in 0..self.inn {
                let row = &self.weights[(o * self.inn + i) * self.taps..][..self.taps];
                let (big, small) = if self.transpose { (o, i) } else { (i, o) };
                let (src, tgt) = match dir {
                    Direction::BigToSmall => (big, small),
                    Direction::SmallToBig => (small, big),
                };
                for (t, &v) in row.iter().enumerate() {
                    f(t, src, tgt, v);
                }
            }
        }
    }

    fn channels(&self, dir: Direction) -> (usize, usize) {
        let (big, small) = if self.transpose {
            (self.out, self.inn)
        } else {
            (self.inn, self.out)
        };
        match dir {
            Direction::BigToSmall => (big, small),
            Direction::SmallToBig => (small, big),
        }
    }

    /// Layout `[tap][c_src][c_tgt]`.
    fn tap_src_tgt(&self, dir: Direction) -> Vec<f64> {
        let (csrc, ctgt) = self.channels(dir);
        let mut w = vec![0.0; self.taps * csrc * ctgt];
        self.for_each(dir, |t, s, g, v| w[(t * csrc + s) * ctgt + g] = v);
        w
    }

    /// Layout `[c_src][tap][c_tgt]`.
    fn src_tap_tgt(&self, dir: Direction) -> Vec<f64> {
        let (_, ctgt) = self.channels(dir);
        let taps = self.taps;
        let mut w = vec![0.0; self.weights.len()];
        self.for_each(dir, |t, s, g, v| w[(s * taps + t) * ctgt + g] = v);
        w
    }
}

/// One source-to-target pass over a plan.
struct Job<'a> {
    src: &'a [f64],
    csrc: usize,
    src_dims: [usize; 3],
    /// Per-axis `(tap, target index)` lists keyed by source index.
    lists: [&'a TapList; 3],
    ctgt: usize,
    tgt_dims: [usize; 3],
    k: usize,
}

impl Job<'_> {
    /// Visits every source position holding a nonzero channel.
    fn for_each_live(&self, mut f: impl FnMut([usize; 3], &[(usize, f64)])) {
        let [sd, sh, sw] = self.src_dims;
        let mut nz = Vec::with_capacity(self.csrc);
        for d in 0..sd {
            for h in 0..sh {
                for x in 0..sw {
                    let pos = (d * sh + h) * sw + x;
                    nonzeros(&self.src[pos * self.csrc..(pos + 1) * self.csrc], &mut nz);
                    if !nz.is_empty() {
                        f([d, h, x], &nz);
                    }
                }
            }
        }
    }

    /// Calls `f(tap, target position)` for every tap linked to `at`.
    #[inline]
    fn for_each_tap(&self, at: [usize; 3], mut f: impl FnMut(usize, usize)) {
        let [_, th_n, tw_n] = self.tgt_dims;
        let k = self.k;
        for &(kd, td) in &self.lists[0][at[0]] {
            for &(kh, th) in &self.lists[1][at[1]] {
                let row = (kd as usize * k + kh as usize) * k;
                let trow = (td as usize * th_n + th as usize) * tw_n;
                for &(kw, tw) in &self.lists[2][at[2]] {
                    f(row + kw as usize, trow + tw as usize);
                }
            }
        }
    }

    /// Per (source, tap): axpy of each live source channel over the target
    /// channels. Weights `[tap][c_src][c_tgt]`.
    fn scatter(&self, tgt: &mut [f64], w: &[f64]) {
        let (csrc, ctgt) = (self.csrc, self.ctgt);
        self.for_each_live(|at, nz| {
            self.for_each_tap(at, |tap, tpos| {
                let trow = &mut tgt[tpos * ctgt..(tpos + 1) * ctgt];
                combine_into(trow, nz, w, ctgt, tap * csrc * ctgt);
            });
        });
    }

    /// Per target: collect every live `(tap, source channel)` term and
    /// accumulate the row in registers. Weights `[tap][c_src][c_tgt]`;
    /// `back` holds per-axis `(tap, source index)` lists keyed by target.
    fn gather(&self, tgt: &mut [f64], w: &[f64], back: [&TapList; 3]) {
        let (csrc, ctgt, k) = (self.csrc, self.ctgt, self.k);
        let [td_n, th_n, tw_n] = self.tgt_dims;
        let [_, sh, sw] = self.src_dims;
        let mut terms: Vec<(usize, f64)> = Vec::new();
        for d in 0..td_n {
            for h in 0..th_n {
                for x in 0..tw_n {
                    terms.clear();
                    for &(kd, sd) in &back[0][d] {
                        for &(kh, shh) in &back[1][h] {
                            let tap_row = (kd as usize * k + kh as usize) * k;
                            let src_row = (sd as usize * sh + shh as usize) * sw;
                            for &(kw, sww) in &back[2][x] {
                                let tap = tap_row + kw as usize;
                                let spos = src_row + sww as usize;
                                let row = &self.src[spos * csrc..(spos + 1) * csrc];
                                for (c, &v) in row.iter().enumerate() {
                                    if v != 0.0 {
                                        terms.push((tap * csrc + c, v));
                                    }
                                }
                            }
                        }
                    }
                    if terms.is_empty() {
                        continue;
                    }
                    let tpos = (d * th_n + h) * tw_n + x;
                    combine_into(&mut tgt[tpos * ctgt..(tpos + 1) * ctgt], &terms, w, ctgt, 0);
                }
            }
        }
    }

    /// Per source: contract live channels into a `[tap][c_tgt]` buffer, then
    /// add it onto the linked targets. Suits narrow targets. Weights
    /// `[c_src][tap][c_tgt]`.
    fn contract_scatter(&self, tgt: &mut [f64], w: &[f64]) {
        let ctgt = self.ctgt;
        let span = self.k * self.k * self.k * ctgt;
        let mut z = vec![0.0; span];
        self.for_each_live(|at, nz| {
            z.iter_mut().for_each(|v| *v = 0.0);
            combine_into(&mut z, nz, w, span, 0);
            if ctgt == 1 {
                self.for_each_tap(at, |tap, tpos| tgt[tpos] += z[tap]);
            } else {
                self.for_each_tap(at, |tap, tpos| {
                    let trow = &mut tgt[tpos * ctgt..(tpos + 1) * ctgt];
                    for (t, zv) in trow.iter_mut().zip(&z[tap * ctgt..(tap + 1) * ctgt]) {
                        *t += zv;
                    }
                });
            }
        });
    }
}

#[inline]
fn nonzeros(row: &[f64], out: &mut Vec<(usize, f64)>) {
    out.clear();
    out.extend(row.iter().copied().enumerate().filter(|&(_, v)| v != 0.0));
}

/// `dst[j] += sum over (c, v) in nz of v * w[c * stride + offset + j]`,
/// accumulated in registers over blocks of 16, 8 and 4 outputs.
#[inline]
fn combine_into(dst: &mut [f64], nz: &[(usize, f64)], w: &[f64], stride: usize, offset: usize) {
    let n = dst.len();
    let mut j = 0;
    while j + 16 <= n {
        combine_block::<16>(dst, nz, w, stride, offset + j, j);
        j += 16;
    }
    if j + 8 <= n {
        combine_block::<8>(dst, nz, w, stride, offset + j, j);
        j += 8;
    }
    if j + 4 <= n {
        combine_block::<4>(dst, nz, w, stride, offset + j, j);
        j += 4;
    }
    for (jj, d) in dst.iter_mut().enumerate().skip(j) {
        let mut a = 0.0;
        for &(c, v) in nz {
            a += v * w[c * stride + offset + jj];
        }
        *d += a;
    }
}

#[inline(always)]
fn combine_block<const B: usize>(
    dst: &mut [f64],
    nz: &[(usize, f64)],
    w: &[f64],
    stride: usize,
    offset: usize,
    j: usize,
) {
    let mut acc = [0.0f64; B];
    for &(c, v) in nz {
        let row = &w[c * stride + offset..][..B];
        for l in 0..B {
            acc[l] += v * row[l];
        }
    }
    for (d, a) in dst[j..j + B].iter_mut().zip(acc) {
        *d += a;
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn to_channels_last(data: &[f64], channels: usize) -> Vec<f64> {
    let positions = data.len() / channels;
    let mut out = vec![0.0; data.len()];
    for c in 0..channels {
        let plane = &data[c * positions..(c + 1) * positions];
        for (p, &v) in plane.iter().enumerate() {
            out[p * channels + c] = v;
        }
    }
    out
}

pub(crate) fn to_channels_first(data: &[f64], channels: usize) -> Vec<f64> {
    let positions = data.len() / channels;
    let mut out = vec![0.0; data.len()];
    for (p, row) in data.chunks_exact(channels).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            out[c * positions + p] = v;
        }
    }
    out
}

fn spatial(input: &Tensor, channels: usize, what: &str) -> Result<[usize; 3]> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(TensorError::Shape(format!(
            "{what} expects a [C, D, H, W] input, got {s:?}"
        )));
    }
    if s[0] != channels {
        return Err(TensorError::Shape(format!(
            "{what} expects {channels} input channels, got {}",
            s[0]
        )));
    }
    Ok([s[1], s[2], s[3]])
}

fn check_weights(weights: &Tensor, stride: usize) -> Result<()> {
    let s = weights.shape();
    if s.len() != 5 || s[2] != s[3] || s[3] != s[4] {
        return Err(TensorError::Shape(format!(
            "conv weights must be [out, in, k, k, k], got {s:?}"
        )));
    }
    if stride == 0 {
        return Err(TensorError::Argument("stride must be >= 1".into()));
    }
    Ok(())
}

/// Linear part of a convolution or transposed convolution, plus bias.
/// Returns the channel-first output and the plan used.
pub(crate) fn conv_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    transpose: bool,
) -> Result<(Tensor, ConvPlan)> {
    check_weights(weights, stride)?;
    let ws = weights.shape();
    let (out_c, in_c, k) = (ws[0], ws[1], ws[2]);
    if let Some(b) = bias {
        if b.shape() != [out_c] {
            return Err(TensorError::Shape(format!(
                "bias shape {:?} does not match {out_c} output channels",
                b.shape()
            )));
        }
    }
    let what = if transpose {
        "conv3d_transpose"
    } else {
        "conv3d"
    };
    let dims = spatial(input, in_c, what)?;
    let big = if transpose {
        dims.map(|d| d * stride)
    } else {
        dims
    };
    let plan = ConvPlan::new(big, k, stride);
    let out_dims = if transpose { plan.big } else { plan.small };
    let (cb, cs) = if transpose {
        (out_c, in_c)
    } else {
        (in_c, out_c)
    };
    if let Some(pp) = dense_phase_plan(&plan, cb, input.data(), !transpose) {
        let mut data = if transpose {
            pp.small_to_big(input.data(), cs, weights.data())
        } else {
            pp.big_to_small(input.data(), cs, weights.data())
        };
        add_bias(&mut data, bias, out_dims);
        let shape = [out_c, out_dims[0], out_dims[1], out_dims[2]];
        return Ok((Tensor::new(&shape, data)?, plan));
    }
    let m = TapMatrices::from_weights(weights, transpose);
    let src = to_channels_last(input.data(), in_c);
    let out = if transpose {
        plan.transfer(Direction::SmallToBig, &src, out_c, in_c, &m)
    } else {
        plan.transfer(Direction::BigToSmall, &src, in_c, out_c, &m)
    };
    let mut data = to_channels_first(&out, out_c);
    add_bias(&mut data, bias, out_dims);
    let shape = [out_c, out_dims[0], out_dims[1], out_dims[2]];
    Ok((Tensor::new(&shape, data)?, plan))
}

fn bias_grad(grad_out: &[f64], channels: usize) -> Vec<f64> {
    let positions = grad_out.len() / channels;
    grad_out
        .chunks_exact(positions)
        .map(|plane| plane.iter().sum())
        .collect()
}

fn add_bias(data: &mut [f64], bias: Option<&Tensor>, dims: [usize; 3]) {
    if let Some(b) = bias {
        let positions: usize = dims.iter().product();
        for (plane, &bv) in data.chunks_exact_mut(positions).zip(b.data()) {
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
}

/// The dense parity kernels for a single-channel big side, when the data
/// they would read is dense enough to beat the sparse paths. `big_side`
/// tells whether `src` lives on the big lattice.
fn dense_phase_plan(plan: &ConvPlan, cb: usize, src: &[f64], big_side: bool) -> Option<PhasePlan> {
    if cb != 1 {
        return None;
    }
    let positions: usize = if big_side {
        plan.big.iter().product()
    } else {
        plan.small.iter().product()
    };
    let mut live = vec![false; positions];
    for plane in src.chunks_exact(positions) {
        for (l, &v) in live.iter_mut().zip(plane) {
            *l |= v != 0.0;
        }
    }
    if live.iter().filter(|&&l| l).count() * 3 < positions {
        return None;
    }
    PhasePlan::new(plan.big, plan.kernel, plan.stride)
}

/// Gradients of the linear part with respect to input and weights.
pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weights: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn conv_backward(
    plan: &ConvPlan,
    input: &Tensor,
    weights: &Tensor,
    grad_out: &[f64],
    transpose: bool,
    need: [bool; 3],
) -> ConvGrads {
    let ws = weights.shape();
    let (out_c, in_c, taps) = (ws[0], ws[1], ws[2] * ws[3] * ws[4]);
    let (cb, cs) = if transpose {
        (out_c, in_c)
    } else {
        (in_c, out_c)
    };
    let big = if transpose { grad_out } else { input.data() };
    if let Some(pp) = dense_phase_plan(plan, cb, big, true) {
        let small = if transpose { input.data() } else { grad_out };
        return ConvGrads {
            input: need[0].then(|| {
                if transpose {
                    pp.big_to_small(grad_out, cs, weights.data())
                } else {
                    pp.small_to_big(grad_out, cs, weights.data())
                }
            }),
            weights: need[1].then(|| pp.outer(big, small, cs)),
            bias: need[2].then(|| bias_grad(grad_out, out_c)),
        };
    }
    let g = to_channels_last(grad_out, out_c);

    let bias = need[2].then(|| bias_grad(grad_out, out_c));

    let input_grad = need[0].then(|| {
        let m = TapMatrices::from_weights(weights, transpose);
        let gi = if transpose {
            plan.transfer(Direction::BigToSmall, &g, cb, cs, &m)
        } else {
            plan.transfer(Direction::SmallToBig, &g, cb, cs, &m)
        };
        to_channels_first(&gi, in_c)
    });

    let weight_grad = need[1].then(|| {
        let x = to_channels_last(input.data(), in_c);
        let outer = if transpose {
            plan.tap_outer(&g, cb, &x, cs)
        } else {
            plan.tap_outer(&x, cb, &g, cs)
        };
        let mut gw = vec![0.0; out_c * in_c * taps];
        for t in 0..taps {
            for b in 0..cb {
                for s in 0..cs {
                    let v = outer[(t * cb + b) * cs + s];
                    let (o, i) = if transpose { (b, s) } else { (s, b) };
                    gw[(o * in_c + i) * taps + t] = v;
                }
            }
        }
        gw
    });

    ConvGrads {
        input: input_grad,
        weights: weight_grad,
        bias,
    }
}

fn activate(mut t: Tensor, activation: Activation) -> Tensor {
    if activation == Activation::Relu {
        t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    }
    t
}

/// Same-padded strided cross-correlation `[C_in, D, H, W] -> [C_out,
/// ceil(D/s), ceil(H/s), ceil(W/s)]`, followed by bias and activation.
pub fn conv3d(input: &Tensor, layer: &ConvLayerParams) -> Result<Tensor> {
    layer.validate()?;
    let (out, _) = conv_forward(
        input,
        &layer.weights,
        layer.bias.as_ref(),
        layer.stride,
        false,
    )?;
    Ok(activate(out, layer.activation))
}

/// Adjoint of [`conv3d`] (scatter form): `[C_in, D, H, W] -> [C_out, D*s,
/// H*s, W*s]`, followed by bias and activation.
pub fn conv3d_transpose(input: &Tensor, layer: &ConvLayerParams) -> Result<Tensor> {
    layer.validate()?;
    let (out, _) = conv_forward(
        input,
        &layer.weights,
        layer.bias.as_ref(),
        layer.stride,
        true,
    )?;
    Ok(activate(out, layer.activation))
}
