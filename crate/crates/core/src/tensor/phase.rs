//! Dense kernels for stride-2 layers whose big side has one channel.
//!
//! Splitting the big lattice into its eight parity classes turns the layer
//! into stride-1 correlations between grids of the small size. With both
//! sides zero-padded by a halo, every term is a contiguous row update.

/// Output rows are accumulated in registers in blocks of this many values.
const BLOCK: usize = 32;

/// Per-axis link: big index `2 * (o + shift) + parity` for small index `o`.
#[derive(Clone, Copy, Debug)]
struct Link {
    parity: usize,
    shift: isize,
}

#[derive(Clone, Debug)]
pub(crate) struct PhasePlan {
    small: [usize; 3],
    k: usize,
    halo: usize,
    /// Indexed by axis, then tap.
    links: [Vec<Link>; 3],
}

impl PhasePlan {
    /// `None` unless the stride is 2 and every big extent is even.
    pub(crate) fn new(big: [usize; 3], k: usize, stride: usize) -> Option<Self> {
        if stride != 2 || big.iter().any(|&b| b == 0 || b % 2 != 0) {
            return None;
        }
        let links = big.map(|b| {
            let pad = super::conv::SamePadding::new(b, k, 2).before as isize;
            (0..k as isize)
                .map(|t| {
                    let d = t - pad;
                    Link {
                        parity: d.rem_euclid(2) as usize,
                        shift: d.div_euclid(2),
                    }
                })
                .collect::<Vec<_>>()
        });
        let halo = links
            .iter()
            .flatten()
            .map(|l| l.shift.unsigned_abs())
            .max()
            .unwrap_or(0);
        Some(Self {
            small: big.map(|b| b / 2),
            k,
            halo,
            links,
        })
    }

    fn padded(&self) -> [usize; 3] {
        self.small.map(|s| s + 2 * self.halo)
    }

    fn padded_len(&self) -> usize {
        self.padded().iter().product()
    }

    fn small_len(&self) -> usize {
        self.small.iter().product()
    }

    /// Offset in a padded grid of logical position `at` (may be negative).
    fn padded_offset(&self, at: [isize; 3]) -> usize {
        let [_, ph, pw] = self.padded();
        let h = self.halo as isize;
        (((at[0] + h) as usize * ph) + (at[1] + h) as usize) * pw + (at[2] + h) as usize
    }

    fn taps(&self) -> impl Iterator<Item = (usize, [Link; 3])> + '_ {
        let k = self.k;
        (0..k * k * k).map(move |t| {
            let (d, h, w) = (t / (k * k), t / k % k, t % k);
            (t, [self.links[0][d], self.links[1][h], self.links[2][w]])
        })
    }

    fn phase_index(l: &[Link; 3]) -> usize {
        (l[0].parity * 2 + l[1].parity) * 2 + l[2].parity
    }

    /// Copies channel-first `[c][small]` planes into padded planes.
    fn pad(&self, planes: &[f64], channels: usize) -> Vec<f64> {
        let [sd, sh, sw] = self.small;
        let plen = self.padded_len();
        let mut out = vec![0.0; channels * plen];
        for c in 0..channels {
            for d in 0..sd {
                for h in 0..sh {
                    let src = &planes[((c * sd + d) * sh + h) * sw..][..sw];
                    let dst = c * plen + self.padded_offset([d as isize, h as isize, 0]);
                    out[dst..dst + sw].copy_from_slice(src);
                }
            }
        }
        out
    }

    /// Splits a big grid into eight padded parity planes.
    fn split(&self, big: &[f64]) -> Vec<f64> {
        let [sd, sh, sw] = self.small;
        let (bh, bw) = (2 * sh, 2 * sw);
        let plen = self.padded_len();
        let mut out = vec![0.0; 8 * plen];
        for q in 0..8 {
            let (qd, qh, qw) = (q >> 2, (q >> 1) & 1, q & 1);
            for d in 0..sd {
                for h in 0..sh {
                    let src = &big[((2 * d + qd) * bh + 2 * h + qh) * bw..][..bw];
                    let dst = q * plen + self.padded_offset([d as isize, h as isize, 0]);
                    for (x, v) in out[dst..dst + sw].iter_mut().enumerate() {
                        *v = src[2 * x + qw];
                    }
                }
            }
        }
        out
    }

    /// For every small-lattice row, `row = sum of w * src[off + row_base..]`
    /// over `terms`, where `row_base` walks the padded grid.
    fn rows(&self, src: &[f64], terms: &[(f64, usize)], mut emit: impl FnMut([usize; 2], &[f64])) {
        let [sd, sh, sw] = self.small;
        let [_, ph, pw] = self.padded();
        let mut row = vec![0.0; sw];
        for d in 0..sd {
            for h in 0..sh {
                let base = (d * ph + h) * pw;
                combine_rows(&mut row, src, terms, base);
                emit([d, h], &row);
            }
        }
    }

    /// Big grid from channel-first small planes; `w[c * taps + t]`.
    pub(crate) fn small_to_big(&self, small: &[f64], channels: usize, w: &[f64]) -> Vec<f64> {
        let taps = self.k.pow(3);
        let plen = self.padded_len();
        let src = self.pad(small, channels);
        let [sd, sh, sw] = self.small;
        let (bh, bw) = (2 * sh, 2 * sw);
        let mut big = vec![0.0; 8 * self.small_len()];
        let mut phases: Vec<Vec<(f64, usize)>> = vec![Vec::new(); 8];
        for (t, l) in self.taps() {
            // Big row `j` reads small row `j - shift`.
            let off = self.padded_offset([-l[0].shift, -l[1].shift, -l[2].shift]);
            let q = Self::phase_index(&l);
            for c in 0..channels {
                let v = w[c * taps + t];
                if v != 0.0 {
                    phases[q].push((v, c * plen + off));
                }
            }
        }
        for (q, terms) in phases.iter().enumerate() {
            let (qd, qh, qw) = (q >> 2, (q >> 1) & 1, q & 1);
            self.rows(&src, terms, |[d, h], row| {
                let dst = &mut big[((2 * d + qd) * bh + 2 * h + qh) * bw..][..bw];
                for (x, &v) in row.iter().enumerate() {
                    dst[2 * x + qw] = v;
                }
            });
        }
        debug_assert_eq!(big.len(), 8 * sd * sh * sw);
        big
    }

    /// Channel-first small planes from a big grid; `w[c * taps + t]`.
    pub(crate) fn big_to_small(&self, big: &[f64], channels: usize, w: &[f64]) -> Vec<f64> {
        let taps = self.k.pow(3);
        let plen = self.padded_len();
        let slen = self.small_len();
        let src = self.split(big);
        let sw = self.small[2];
        let sh = self.small[1];
        let mut out = vec![0.0; channels * slen];
        let mut terms = Vec::with_capacity(taps);
        for c in 0..channels {
            terms.clear();
            for (t, l) in self.taps() {
                let v = w[c * taps + t];
                if v != 0.0 {
                    let off = self.padded_offset([l[0].shift, l[1].shift, l[2].shift]);
                    terms.push((v, Self::phase_index(&l) * plen + off));
                }
            }
            let plane = &mut out[c * slen..(c + 1) * slen];
            self.rows(&src, &terms, |[d, h], row| {
                plane[(d * sh + h) * sw..][..sw].copy_from_slice(row);
            });
        }
        out
    }

    /// `g[c * taps + t] = sum over linked (i, o) of big[i] * small[c][o]`.
    pub(crate) fn outer(&self, big: &[f64], small: &[f64], channels: usize) -> Vec<f64> {
        let taps = self.k.pow(3);
        let plen = self.padded_len();
        let slen = self.small_len();
        let src = self.split(big);
        let [sd, sh, sw] = self.small;
        let [_, ph, pw] = self.padded();
        let offs: Vec<usize> = self
            .taps()
            .map(|(_, l)| {
                Self::phase_index(&l) * plen
                    + self.padded_offset([l[0].shift, l[1].shift, l[2].shift])
            })
            .collect();
        let mut g = vec![0.0; channels * taps];
        let mut acc = vec![[0.0f64; 8]; taps];
        for c in 0..channels {
            acc.iter_mut().for_each(|a| *a = [0.0; 8]);
            let plane = &small[c * slen..(c + 1) * slen];
            for d in 0..sd {
                for h in 0..sh {
                    let x = &plane[(d * sh + h) * sw..][..sw];
                    if x.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let base = (d * ph + h) * pw;
                    for (a, &off) in acc.iter_mut().zip(&offs) {
                        dot_into(a, x, &src[base + off..][..sw]);
                    }
                }
            }
            for (t, a) in acc.iter().enumerate() {
                g[c * taps + t] = a.iter().sum();
            }
        }
        g
    }
}

/// `row[j] = sum over (w, off) of w * src[base + off + j]`.
fn combine_rows(row: &mut [f64], src: &[f64], terms: &[(f64, usize)], base: usize) {
    let n = row.len();
    let mut j = 0;
    while j + BLOCK <= n {
        row_block::<BLOCK>(&mut row[j..j + BLOCK], src, terms, base + j);
        j += BLOCK;
    }
    while j + 8 <= n {
        row_block::<8>(&mut row[j..j + 8], src, terms, base + j);
        j += 8;
    }
    for (jj, r) in row.iter_mut().enumerate().skip(j) {
        *r = terms.iter().map(|&(w, off)| w * src[base + off + jj]).sum();
    }
}

#[inline(always)]
fn row_block<const B: usize>(dst: &mut [f64], src: &[f64], terms: &[(f64, usize)], base: usize) {
    let mut acc = [0.0f64; B];
    for &(w, off) in terms {
        let s = &src[base + off..][..B];
        for l in 0..B {
            acc[l] += w * s[l];
        }
    }
    dst.copy_from_slice(&acc);
}

/// Adds `x . y` into eight lane partial sums.
#[inline(always)]
fn dot_into(acc: &mut [f64; 8], x: &[f64], y: &[f64]) {
    let mut xc = x.chunks_exact(8);
    let mut yc = y.chunks_exact(8);
    for (a, b) in (&mut xc).zip(&mut yc) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    for (l, (a, b)) in xc.remainder().iter().zip(yc.remainder()).enumerate() {
        acc[l] += a * b;
    }
}
