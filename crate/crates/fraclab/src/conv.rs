//! Lattice cross-correlation against a centered offset table, with a direct
//! summation path for small grids and an FFT path above; the two paths agree
//! to 1e-10 and the choice never changes the result beyond that.
//!
//! For a field `f` on an m×m box lattice and a table `w` indexed by offsets
//! `|d|_∞ ≤ d_max`, the output is `out[i] = Σ_d w[d] · f[i+d]` with zero
//! contribution where `i+d` leaves the lattice. Symmetric tables make this
//! identical to convolution.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Path selection: `Auto` follows the grid-size rule (direct ≤ 64 cells per
/// side, FFT above).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvPath {
    Direct,
    Fft,
    Auto,
}

/// A reusable correlation operator for one (field size, table) pair.
pub struct ConvOperator {
    n: usize,
    m: usize,
    d_max: usize,
    side: usize,
    table: Vec<f64>,
    path: ConvPath,
    // FFT state (populated lazily on first FFT application).
    fft_size: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<Complex<f64>>,
}

impl ConvOperator {
    /// `table` is row-major over `(2 d_max + 1)^n` offsets, centered.
    pub fn new(n: usize, m: usize, d_max: usize, table: Vec<f64>, path: ConvPath) -> Self {
        assert!(n == 1 || n == 2);
        let side = 2 * d_max + 1;
        assert_eq!(table.len(), side.pow(n as u32));
        let needed = m + side - 1;
        let fft_size = needed.next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(fft_size);
        let inv = planner.plan_fft_inverse(fft_size);
        let mut op = ConvOperator {
            n,
            m,
            d_max,
            side,
            table,
            path,
            fft_size,
            fwd,
            inv,
            kernel_hat: Vec::new(),
        };
        op.kernel_hat = op.kernel_fft();
        op
    }

    fn use_fft(&self) -> bool {
        match self.path {
            ConvPath::Direct => false,
            ConvPath::Fft => true,
            ConvPath::Auto => self.m > 64,
        }
    }

    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        if self.use_fft() {
            self.apply_fft(field)
        } else {
            self.apply_direct(field)
        }
    }

    pub fn apply_direct(&self, field: &[f64]) -> Vec<f64> {
        let m = self.m;
        let d = self.d_max as i64;
        match self.n {
            1 => {
                assert_eq!(field.len(), m);
                let mut out = vec![0.0; m];
                for i in 0..m as i64 {
                    let mut acc = 0.0;
                    let lo = (-d).max(-i);
                    let hi = d.min(m as i64 - 1 - i);
                    for dd in lo..=hi {
                        acc += self.table[(dd + d) as usize] * field[(i + dd) as usize];
                    }
                    out[i as usize] = acc;
                }
                out
            }
            2 => {
                assert_eq!(field.len(), m * m);
                let side = self.side;
                let mut out = vec![0.0; m * m];
                for iy in 0..m as i64 {
                    let ylo = (-d).max(-iy);
                    let yhi = d.min(m as i64 - 1 - iy);
                    for ix in 0..m as i64 {
                        let xlo = (-d).max(-ix);
                        let xhi = d.min(m as i64 - 1 - ix);
                        let mut acc = 0.0;
                        for dy in ylo..=yhi {
                            let trow = ((dy + d) as usize) * side;
                            let frow = ((iy + dy) as usize) * m;
                            for dx in xlo..=xhi {
                                acc += self.table[trow + (dx + d) as usize]
                                    * field[frow + (ix + dx) as usize];
                            }
                        }
                        out[(iy as usize) * m + ix as usize] = acc;
                    }
                }
                out
            }
            _ => unreachable!(),
        }
    }

    /// Reversed table embedded for the FFT product; correlation of `f` with
    /// `w` equals linear convolution of `f` with the reversed table, read at
    /// offset `d_max` per axis.
    fn kernel_fft(&self) -> Vec<Complex<f64>> {
        let p = self.fft_size;
        match self.n {
            1 => {
                let mut buf = vec![Complex::new(0.0, 0.0); p];
                for (u, slot) in buf.iter_mut().enumerate().take(self.side) {
                    *slot = Complex::new(self.table[self.side - 1 - u], 0.0);
                }
                self.fwd.process(&mut buf);
                buf
            }
            2 => {
                let mut buf = vec![Complex::new(0.0, 0.0); p * p];
                for uy in 0..self.side {
                    for ux in 0..self.side {
                        buf[uy * p + ux] = Complex::new(
                            self.table[(self.side - 1 - uy) * self.side + (self.side - 1 - ux)],
                            0.0,
                        );
                    }
                }
                fft_2d(&mut buf, p, &self.fwd);
                buf
            }
            _ => unreachable!(),
        }
    }

    pub fn apply_fft(&self, field: &[f64]) -> Vec<f64> {
        let p = self.fft_size;
        let m = self.m;
        let d = self.d_max;
        match self.n {
            1 => {
                assert_eq!(field.len(), m);
                let mut buf = vec![Complex::new(0.0, 0.0); p];
                for (i, v) in field.iter().enumerate() {
                    buf[i] = Complex::new(*v, 0.0);
                }
                self.fwd.process(&mut buf);
                for (b, k) in buf.iter_mut().zip(self.kernel_hat.iter()) {
                    *b *= *k;
                }
                self.inv.process(&mut buf);
                let scale = 1.0 / p as f64;
                (0..m).map(|i| buf[i + d].re * scale).collect()
            }
            2 => {
                assert_eq!(field.len(), m * m);
                let mut buf = vec![Complex::new(0.0, 0.0); p * p];
                for iy in 0..m {
                    for ix in 0..m {
                        buf[iy * p + ix] = Complex::new(field[iy * m + ix], 0.0);
                    }
                }
                fft_2d(&mut buf, p, &self.fwd);
                for (b, k) in buf.iter_mut().zip(self.kernel_hat.iter()) {
                    *b *= *k;
                }
                fft_2d(&mut buf, p, &self.inv);
                let scale = 1.0 / ((p * p) as f64);
                let mut out = vec![0.0; m * m];
                for iy in 0..m {
                    for ix in 0..m {
                        out[iy * m + ix] = buf[(iy + d) * p + (ix + d)].re * scale;
                    }
                }
                out
            }
            _ => unreachable!(),
        }
    }
}

/// In-place 2-d FFT on a p×p row-major complex buffer: rows, then columns.
fn fft_2d(buf: &mut [Complex<f64>], p: usize, plan: &Arc<dyn Fft<f64>>) {
    for row in buf.chunks_exact_mut(p) {
        plan.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); p];
    for x in 0..p {
        for y in 0..p {
            col[y] = buf[y * p + x];
        }
        plan.process(&mut col);
        for y in 0..p {
            buf[y * p + x] = col[y];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn delta_table_is_identity() {
        for n in [1usize, 2] {
            let m = 9;
            let d_max = 3;
            let side: usize = 2 * d_max + 1;
            let mut table = vec![0.0; side.pow(n as u32)];
            let center = if n == 1 {
                d_max
            } else {
                d_max * side + d_max
            };
            table[center] = 1.0;
            let field: Vec<f64> = (0..field_len(n, m)).map(|i| i as f64 * 0.3 - 1.0).collect();
            let op = ConvOperator::new(n, m, d_max, table, ConvPath::Direct);
            assert_eq!(op.apply(&field), field);
        }
    }

    fn field_len(n: usize, m: usize) -> usize {
        if n == 1 {
            m
        } else {
            m * m
        }
    }

    #[test]
    fn direct_and_fft_agree_on_overlap_suite() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n in [1usize, 2] {
            for (m, d_max) in [(8usize, 2usize), (16, 5), (33, 7)] {
                let side: usize = 2 * d_max + 1;
                let table = random_vec(&mut rng, side.pow(n as u32));
                let field = random_vec(&mut rng, field_len(n, m));
                let direct =
                    ConvOperator::new(n, m, d_max, table.clone(), ConvPath::Direct).apply(&field);
                let fft = ConvOperator::new(n, m, d_max, table, ConvPath::Fft).apply(&field);
                let scale = direct
                    .iter()
                    .fold(0.0f64, |acc, v| acc.max(v.abs()))
                    .max(1e-30);
                for (a, b) in direct.iter().zip(fft.iter()) {
                    assert!(
                        (a - b).abs() <= 1e-10 * scale,
                        "paths disagree: {a} vs {b} (n={n}, m={m})"
                    );
                }
            }
        }
    }

    #[test]
    fn shift_table_shifts_field() {
        // w supported at offset d = +1 pulls the field leftward by one.
        let m = 6;
        let d_max = 1;
        let mut table = vec![0.0; 3];
        table[2] = 1.0; // d = +1
        let field = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let op = ConvOperator::new(1, m, d_max, table, ConvPath::Direct);
        assert_eq!(op.apply(&field), vec![2.0, 3.0, 4.0, 5.0, 6.0, 0.0]);
    }
}
