//! The extended CMV matrix ℰ = ℒℳ of a Verblunsky sequence, restricted to a
//! finite window of ℤ. ℒ = ⊕Θ(α_{2j}) couples (2j−1, 2j), ℳ = ⊕Θ(α_{2j−1})
//! couples (2j−2, 2j−1), with Θ(α) = [[ᾱ, ρ], [ρ, −α]] and ρ = (1−|α|²)^{1/2}.
//!
//! Windows run [lo, hi] with lo even, hi odd, so ℳ is block diagonal inside
//! the window and only ℒ straddles the edges. The decoupled closure sets
//! α_lo = α_{hi+1} = −1, which zeroes both straddling ρ's and leaves a
//! unitary window; the periodic closure wraps the straddling ℒ block around.
//!
//! Entries are also built directly from the five-diagonal column stencils:
//!   col 2m:   rows (2m−1 … 2m+2) = (ᾱ_{2m+1}ρ_{2m}, −ᾱ_{2m+1}α_{2m},
//!                                    ρ_{2m+1}ᾱ_{2m+2}, ρ_{2m+1}ρ_{2m+2})
//!   col 2m+1: rows (2m−1 … 2m+2) = (ρ_{2m+1}ρ_{2m}, −ρ_{2m+1}α_{2m},
//!                                    −α_{2m+1}ᾱ_{2m+2}, −α_{2m+1}ρ_{2m+2})
//! so the factorization can be checked against them entry by entry.

use crate::error::{Error, Result};
use crate::mat2::{c64, C64};
use crate::verblunsky::{rho, AlphaWindow, CoinModel};
use nalgebra::{Complex, DMatrix};

pub const FACTORIZATION_TOL: f64 = 1e-12;
pub const RESOLVENT_CIRCLE_MARGIN: f64 = 1e-6;
pub const RESOLVENT_RESIDUAL_TOL: f64 = 1e-10;
pub const DENSE_LIMIT: usize = 256;

/// Lattice window [lo, hi], lo even, hi odd, at least 4 sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub lo: i64,
    pub hi: i64,
}

impl Window {
    pub fn new(lo: i64, hi: i64) -> Result<Window> {
        if lo.rem_euclid(2) != 0 || hi.rem_euclid(2) != 1 || hi - lo + 1 < 4 {
            return Err(Error::BadArgument(format!(
                "window [{lo}, {hi}] must start even, end odd, and span ≥ 4 sites"
            )));
        }
        Ok(Window { lo, hi })
    }

    /// Smallest legal window containing [lo, hi].
    pub fn covering(lo: i64, hi: i64) -> Window {
        let mut a = if lo.rem_euclid(2) == 0 { lo } else { lo - 1 };
        let mut b = if hi.rem_euclid(2) == 1 { hi } else { hi + 1 };
        while b - a + 1 < 4 {
            a -= 1;
            b += 1;
            if a.rem_euclid(2) != 0 {
                a -= 1;
            }
            if b.rem_euclid(2) != 1 {
                b += 1;
            }
        }
        Window { lo: a, hi: b }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, n: i64) -> bool {
        n >= self.lo && n <= self.hi
    }

    pub fn index(&self, n: i64) -> usize {
        debug_assert!(self.contains(n));
        (n - self.lo) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Closure {
    /// α_lo = α_{hi+1} = −1: the window decouples from the rest of ℤ.
    Decouple,
    /// The straddling ℒ block wraps from hi to lo; needs α_{hi+1} = α_lo.
    Periodic,
}

#[derive(Clone, Copy, Debug)]
struct Theta {
    ac: C64, // conj(α)
    r: f64,  // ρ
    na: C64, // −α
}

impl Theta {
    fn of(alpha: C64) -> Theta {
        Theta {
            ac: alpha.conj(),
            r: rho(alpha),
            na: -alpha,
        }
    }

    #[inline]
    fn apply(&self, x0: C64, x1: C64) -> (C64, C64) {
        (self.ac * x0 + self.r * x1, self.r * x0 + self.na * x1)
    }

    /// Θ(α)* = [[α, ρ], [ρ, −ᾱ]].
    #[inline]
    fn apply_adjoint(&self, x0: C64, x1: C64) -> (C64, C64) {
        (self.ac.conj() * x0 + self.r * x1, self.r * x0 + self.na.conj() * x1)
    }
}

/// Windowed ℰ. Holds α_j for j ∈ [lo, hi+1] after closure substitution.
#[derive(Clone, Debug)]
pub struct CmvOperator {
    pub window: Window,
    pub closure: Closure,
    alphas: Vec<C64>,
    thetas: Vec<Theta>,
}

impl CmvOperator {
    pub fn from_model(model: &CoinModel, window: Window, closure: Closure) -> Result<CmvOperator> {
        let aw = model.alphas(window.lo, window.hi + 1)?;
        Self::from_alpha_window(&aw, window, closure)
    }

    /// `aw` must cover [lo, hi+1]. Closure substitutions are applied here.
    pub fn from_alpha_window(
        aw: &AlphaWindow,
        window: Window,
        closure: Closure,
    ) -> Result<CmvOperator> {
        if aw.offset > window.lo || aw.end() <= window.hi {
            return Err(Error::BadArgument(format!(
                "alpha window [{}, {}) does not cover [{}, {}]",
                aw.offset,
                aw.end(),
                window.lo,
                window.hi + 1
            )));
        }
        let mut alphas: Vec<C64> = (window.lo..=window.hi + 1).map(|j| aw.get(j)).collect();
        match closure {
            Closure::Decouple => {
                let last = alphas.len() - 1;
                alphas[0] = c64(-1.0, 0.0);
                alphas[last] = c64(-1.0, 0.0);
            }
            Closure::Periodic => {
                let last = alphas.len() - 1;
                if (alphas[last] - alphas[0]).norm() > 1e-12 {
                    return Err(Error::BadArgument(
                        "periodic closure needs α_{hi+1} = α_lo; gauge the model first".into(),
                    ));
                }
                alphas[last] = alphas[0];
            }
        }
        for (i, a) in alphas.iter().enumerate() {
            let j = window.lo + i as i64;
            let interior = j > window.lo && j <= window.hi;
            if interior && a.norm() >= 1.0 {
                return Err(Error::BadArgument(format!("|α_{j}| = {} ≥ 1", a.norm())));
            }
        }
        let thetas = alphas.iter().map(|&a| Theta::of(a)).collect();
        Ok(CmvOperator {
            window,
            closure,
            alphas,
            thetas,
        })
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn closure(&self) -> Closure {
        self.closure
    }

    /// Closure-substituted α_j, j ∈ [lo, hi+1] (mod window for periodic).
    pub fn alpha(&self, j: i64) -> C64 {
        let len = self.window.len() as i64;
        let j = match self.closure {
            Closure::Periodic => self.window.lo + (j - self.window.lo).rem_euclid(len),
            Closure::Decouple => j,
        };
        debug_assert!(j >= self.window.lo && j <= self.window.hi + 1);
        self.alphas[(j - self.window.lo) as usize]
    }

    fn rho_at(&self, j: i64) -> f64 {
        rho(self.alpha(j))
    }

    /// Precomputed Θ(α_j), j ∈ [lo, hi+1] directly (no periodic fold).
    #[inline]
    fn theta_at(&self, j: i64) -> Theta {
        debug_assert!(j >= self.window.lo && j <= self.window.hi + 1);
        self.thetas[(j - self.window.lo) as usize]
    }

    /// Stencil entry at (row n, col m), absolute indices inside the window.
    /// Periodic closure folds the band across the edges.
    pub fn entry(&self, n: i64, m: i64) -> C64 {
        assert!(self.window.contains(n) && self.window.contains(m));
        match self.closure {
            Closure::Decouple => self.entry_unwrapped(n, m),
            Closure::Periodic => {
                let len = (self.window.len()) as i64;
                let mut v = c64(0.0, 0.0);
                for shift in [-len, 0, len] {
                    let c = m + shift;
                    if (c - n).abs() <= 2 {
                        v += self.entry_unwrapped(n, c);
                    }
                }
                v
            }
        }
    }

    /// Raw stencil with the column index allowed to sit past the window edge
    /// (used by the periodic fold; α lookups wrap there).
    fn entry_unwrapped(&self, n: i64, c: i64) -> C64 {
        let d = n - c;
        if !(-2..=2).contains(&d) {
            return c64(0.0, 0.0);
        }
        let a = |j: i64| self.alpha(j);
        let r = |j: i64| c64(self.rho_at(j), 0.0);
        if c.rem_euclid(2) == 0 {
            match d {
                -1 => a(c + 1).conj() * r(c),
                0 => -a(c + 1).conj() * a(c),
                1 => r(c + 1) * a(c + 2).conj(),
                2 => r(c + 1) * r(c + 2),
                _ => c64(0.0, 0.0),
            }
        } else {
            match d {
                -2 => r(c) * r(c - 1),
                -1 => -r(c) * a(c - 1),
                0 => -a(c) * a(c + 1).conj(),
                1 => -a(c) * r(c + 1),
                _ => c64(0.0, 0.0),
            }
        }
    }

    /// Row-major band from the stencil: band[i][k] = entry(lo+i, lo+i−2+k),
    /// out-of-window columns zero (decoupled closure only).
    pub fn band_stencil(&self) -> Vec<[C64; 5]> {
        assert_eq!(self.closure, Closure::Decouple);
        let n = self.window.len();
        let mut band = vec![[c64(0.0, 0.0); 5]; n];
        for i in 0..n {
            let row = self.window.lo + i as i64;
            for k in 0..5 {
                let col = row - 2 + k as i64;
                if self.window.contains(col) {
                    band[i][k] = self.entry_unwrapped(row, col);
                }
            }
        }
        band
    }

    /// The same band computed by multiplying the ℒ and ℳ factors.
    pub fn band_lm_product(&self) -> Vec<[C64; 5]> {
        assert_eq!(self.closure, Closure::Decouple);
        let n = self.window.len();
        let lo = self.window.lo;
        // sparse rows of ℒ and ℳ over the window
        let mut l_rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); n];
        let mut m_rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); n];
        let mut e = lo;
        while e < self.window.hi {
            let t = self.theta_at(e + 1);
            let i = (e - lo) as usize;
            m_rows[i] = vec![(i, t.ac), (i + 1, c64(t.r, 0.0))];
            m_rows[i + 1] = vec![(i, c64(t.r, 0.0)), (i + 1, t.na)];
            e += 2;
        }
        l_rows[0] = vec![(0, -self.alpha(lo))];
        l_rows[n - 1] = vec![(n - 1, self.alpha(self.window.hi + 1).conj())];
        let mut o = lo + 1;
        while o < self.window.hi {
            let t = self.theta_at(o + 1);
            let i = (o - lo) as usize;
            l_rows[i] = vec![(i, t.ac), (i + 1, c64(t.r, 0.0))];
            l_rows[i + 1] = vec![(i, c64(t.r, 0.0)), (i + 1, t.na)];
            o += 2;
        }
        let mut band = vec![[c64(0.0, 0.0); 5]; n];
        for i in 0..n {
            for &(k, lv) in &l_rows[i] {
                for &(j, mv) in &m_rows[k] {
                    let d = j as i64 - i as i64;
                    assert!((-2..=2).contains(&d), "product outside the five diagonals");
                    band[i][(d + 2) as usize] += lv * mv;
                }
            }
        }
        band
    }

    /// y = ℰx over the whole window.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = x.to_vec();
        self.apply_inplace(&mut y);
        y
    }

    pub fn apply_inplace(&self, x: &mut [C64]) {
        let w = self.window;
        self.apply_range_inplace(x, w.lo, w.hi);
    }

    /// Apply ℰ processing only blocks that intersect [alo, ahi] (absolute
    /// sites). Exact whenever x vanishes outside [alo+2, ahi−2].
    pub fn apply_range_inplace(&self, x: &mut [C64], alo: i64, ahi: i64) {
        let w = self.window;
        assert_eq!(x.len(), w.len());
        let alo = alo.max(w.lo);
        let ahi = ahi.min(w.hi);
        if alo > ahi {
            return;
        }
        // ℳ sweep: blocks (e, e+1), e even, lo ≤ e < hi
        let mut e = alo - 1;
        if e.rem_euclid(2) == 1 {
            e += 1;
        }
        e = e.max(w.lo);
        while e <= ahi && e < w.hi {
            let t = self.theta_at(e + 1);
            let i = w.index(e);
            let (y0, y1) = t.apply(x[i], x[i + 1]);
            x[i] = y0;
            x[i + 1] = y1;
            e += 2;
        }
        // ℒ sweep: interior blocks (o, o+1), o odd, plus the edge pieces
        if alo == w.lo && self.closure == Closure::Decouple {
            x[0] *= -self.alpha(w.lo);
        }
        let mut o = alo - 1;
        if o.rem_euclid(2) == 0 {
            o += 1;
        }
        o = o.max(w.lo + 1);
        while o <= ahi && o + 1 < w.hi {
            let t = self.theta_at(o + 1);
            let i = w.index(o);
            let (y0, y1) = t.apply(x[i], x[i + 1]);
            x[i] = y0;
            x[i + 1] = y1;
            o += 2;
        }
        if ahi == w.hi {
            match self.closure {
                Closure::Decouple => {
                    let i = w.index(w.hi);
                    x[i] *= self.alpha(w.hi + 1).conj();
                }
                Closure::Periodic => {
                    let t = self.theta_at(w.hi + 1);
                    let i = w.index(w.hi);
                    let (y0, y1) = t.apply(x[i], x[0]);
                    x[i] = y0;
                    x[0] = y1;
                }
            }
        }
    }

    /// x = ℰ*y = ℰ^{−1}y: undo ℒ then ℳ with adjoint blocks.
    pub fn apply_inv_inplace(&self, x: &mut [C64]) {
        let w = self.window;
        assert_eq!(x.len(), w.len());
        match self.closure {
            Closure::Decouple => {
                let i = w.index(w.hi);
                x[i] *= self.alpha(w.hi + 1);
            }
            Closure::Periodic => {
                let t = self.theta_at(w.hi + 1);
                let i = w.index(w.hi);
                let (y0, y1) = t.apply_adjoint(x[i], x[0]);
                x[i] = y0;
                x[0] = y1;
            }
        }
        let mut o = w.lo + 1;
        while o < w.hi {
            let t = self.theta_at(o + 1);
            let i = w.index(o);
            let (y0, y1) = t.apply_adjoint(x[i], x[i + 1]);
            x[i] = y0;
            x[i + 1] = y1;
            o += 2;
        }
        if self.closure == Closure::Decouple {
            let i = w.index(w.lo);
            x[i] *= (-self.alpha(w.lo)).conj();
        }
        let mut e = w.lo;
        while e < w.hi {
            let t = self.theta_at(e + 1);
            let i = w.index(e);
            let (y0, y1) = t.apply_adjoint(x[i], x[i + 1]);
            x[i] = y0;
            x[i + 1] = y1;
            e += 2;
        }
    }

    pub fn apply_inv(&self, x: &[C64]) -> Vec<C64> {
        let mut y = x.to_vec();
        self.apply_inv_inplace(&mut y);
        y
    }

    /// x ↦ ℒ^{−1}x = ℒ*x for this window's ℒ factor (closure edges included).
    pub fn apply_l_inv(&self, x: &[C64]) -> Vec<C64> {
        let w = self.window;
        assert_eq!(x.len(), w.len());
        let mut x = x.to_vec();
        match self.closure {
            Closure::Decouple => {
                let i = w.index(w.hi);
                x[i] *= self.alpha(w.hi + 1);
                x[0] *= (-self.alpha(w.lo)).conj();
            }
            Closure::Periodic => {
                let t = self.theta_at(w.hi + 1);
                let i = w.index(w.hi);
                let (y0, y1) = t.apply_adjoint(x[i], x[0]);
                x[i] = y0;
                x[0] = y1;
            }
        }
        let mut o = w.lo + 1;
        while o < w.hi {
            let t = self.theta_at(o + 1);
            let i = w.index(o);
            let (y0, y1) = t.apply_adjoint(x[i], x[i + 1]);
            x[i] = y0;
            x[i + 1] = y1;
            o += 2;
        }
        x
    }

    pub fn to_dense(&self) -> DMatrix<Complex<f64>> {
        let n = self.window.len();
        DMatrix::from_fn(n, n, |i, j| {
            self.entry(self.window.lo + i as i64, self.window.lo + j as i64)
        })
    }

    /// Solve (ℰ − z)x = rhs by banded LU with partial pivoting and one step
    /// of refinement. Needs the decoupled closure and ||z| − 1| ≥ 1e−6.
    pub fn solve_shifted(&self, z: C64, rhs: &[C64]) -> Result<Vec<C64>> {
        if self.closure != Closure::Decouple {
            return Err(Error::BadArgument(
                "shifted solves need the decoupled closure".into(),
            ));
        }
        if (z.norm() - 1.0).abs() < RESOLVENT_CIRCLE_MARGIN {
            return Err(Error::BadArgument(format!(
                "|z| = {} too close to the unit circle (margin {RESOLVENT_CIRCLE_MARGIN:e})",
                z.norm()
            )));
        }
        let n = self.window.len();
        assert_eq!(rhs.len(), n);
        let mut band = self.band_stencil();
        for (i, row) in band.iter_mut().enumerate() {
            let _ = i;
            row[2] -= z;
        }
        let lu = BandedLu::factor(&band)?;
        let mut x = rhs.to_vec();
        lu.solve(&mut x);
        // residual r = rhs − (ℰ − z)x
        let resid = |x: &[C64]| -> (Vec<C64>, f64, f64) {
            let mut ax = self.apply(x);
            for i in 0..n {
                ax[i] -= z * x[i];
            }
            let mut r = vec![c64(0.0, 0.0); n];
            let mut rn = 0.0;
            let mut xn = 0.0;
            for i in 0..n {
                r[i] = rhs[i] - ax[i];
                rn += r[i].norm_sqr();
                xn += x[i].norm_sqr();
            }
            (r, rn.sqrt(), xn.sqrt())
        };
        let (r, rn, xn) = resid(&x);
        let rhsn = rhs.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let scale = rhsn.max(xn).max(1e-300);
        if rn > RESOLVENT_RESIDUAL_TOL * scale {
            let mut dx = r;
            lu.solve(&mut dx);
            for i in 0..n {
                x[i] += dx[i];
            }
            let (_, rn2, xn2) = resid(&x);
            if rn2 > RESOLVENT_RESIDUAL_TOL * rhsn.max(xn2).max(1e-300) {
                return Err(Error::Numerical(format!(
                    "resolvent residual {rn2:.3e} above tolerance after refinement"
                )));
            }
        }
        Ok(x)
    }

    /// ⟨δ_n, (ℰ − z)^{−1} δ_m⟩.
    pub fn resolvent_entry(&self, z: C64, n: i64, m: i64) -> Result<C64> {
        let len = self.window.len();
        let mut rhs = vec![c64(0.0, 0.0); len];
        rhs[self.window.index(m)] = c64(1.0, 0.0);
        let x = self.solve_shifted(z, &rhs)?;
        Ok(x[self.window.index(n)])
    }
}

/// LAPACK-style banded LU (kl = 2, ku = 2, fill to 4) in column-major band
/// storage ab[col][4 + row − col], row − col ∈ [−4, 2].
struct BandedLu {
    n: usize,
    ab: Vec<[C64; 7]>,
    piv: Vec<usize>,
}

impl BandedLu {
    fn factor(band: &[[C64; 5]]) -> Result<BandedLu> {
        let n = band.len();
        let mut ab = vec![[c64(0.0, 0.0); 7]; n];
        for (i, row) in band.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                let j = i as i64 - 2 + k as i64;
                if j >= 0 && (j as usize) < n {
                    let r = 4 + i as i64 - j;
                    ab[j as usize][r as usize] = v;
                }
            }
        }
        let mut piv = vec![0usize; n];
        for j in 0..n {
            let imax = (j + 2).min(n - 1);
            let mut p = j;
            let mut best = ab[j][4].norm();
            for i in (j + 1)..=imax {
                let v = ab[j][4 + i - j].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Numerical(format!("singular pivot at column {j}")));
            }
            piv[j] = p;
            if p != j {
                let cmax = (j + 4).min(n - 1);
                for c in j..=cmax {
                    ab[c].swap(4 + j - c, 4 + p - c);
                }
            }
            let pivot = ab[j][4];
            for i in (j + 1)..=imax {
                let m = ab[j][4 + i - j] / pivot;
                ab[j][4 + i - j] = m;
                let cmax = (j + 4).min(n - 1);
                for c in (j + 1)..=cmax {
                    let u = ab[c][4 + j - c];
                    if u.norm_sqr() != 0.0 {
                        ab[c][4 + i - c] -= m * u;
                    }
                }
            }
        }
        Ok(BandedLu { n, ab, piv })
    }

    fn solve(&self, x: &mut [C64]) {
        let n = self.n;
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                x.swap(j, p);
            }
            let imax = (j + 2).min(n - 1);
            for i in (j + 1)..=imax {
                let m = self.ab[j][4 + i - j];
                let xj = x[j];
                x[i] -= m * xj;
            }
        }
        for j in (0..n).rev() {
            let cmax = (j + 4).min(n - 1);
            for c in (j + 1)..=cmax {
                let u = self.ab[c][4 + j - c];
                let xc = x[c];
                x[j] -= u * xc;
            }
            x[j] /= self.ab[j][4];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coin::Coin;
    use crate::mat2::Mat2;

    fn random_coin_model() -> CoinModel {
        let coins: Vec<Coin> = (0..5)
            .map(|i| {
                let t = 0.25 + 0.11 * i as f64;
                let (s, c) = t.sin_cos();
                let e = |x: f64| C64::from_polar(1.0, x);
                Coin::new(Mat2::new(
                    e(0.4 * t) * c,
                    e(1.3 - t) * s,
                    -e(t - 1.3) * s,
                    e(-0.4 * t) * c,
                ))
                .unwrap()
            })
            .collect();
        CoinModel::Periodic { coins }
    }

    #[test]
    fn window_validation() {
        assert!(Window::new(0, 3).is_ok());
        assert!(Window::new(-8, 7).is_ok());
        assert!(Window::new(1, 4).is_err());
        assert!(Window::new(0, 1).is_err());
        let w = Window::covering(-3, 2);
        assert!(w.lo <= -3 && w.hi >= 2 && w.lo.rem_euclid(2) == 0 && w.hi.rem_euclid(2) == 1);
    }

    #[test]
    fn factorization_matches_stencil() {
        let w = Window::new(-16, 15).unwrap();
        for model in [
            CoinModel::free(),
            random_coin_model(),
            CoinModel::fibonacci(1.1, 0.4).unwrap(),
            CoinModel::explicit_alphas(vec![c64(0.3, -0.4), c64(-0.1, 0.55)]).unwrap(),
        ] {
            let op = CmvOperator::from_model(&model, w, Closure::Decouple).unwrap();
            let s = op.band_stencil();
            let p = op.band_lm_product();
            let mut worst = 0.0f64;
            for i in 0..w.len() {
                for k in 0..5 {
                    worst = worst.max((s[i][k] - p[i][k]).norm());
                }
            }
            assert!(worst <= FACTORIZATION_TOL, "max entry gap {worst:.3e}");
        }
    }

    #[test]
    fn diagonal_closed_form() {
        let w = Window::new(-16, 15).unwrap();
        let model = random_coin_model();
        let aw = model.alphas(w.lo, w.hi + 1).unwrap();
        let op = CmvOperator::from_alpha_window(&aw, w, Closure::Decouple).unwrap();
        for n in -14..=13i64 {
            let want = -aw.get(n + 1).conj() * aw.get(n);
            assert!((op.entry(n, n) - want).norm() < 1e-15, "site {n}");
        }
    }

    #[test]
    fn window_is_unitary() {
        let w = Window::new(-32, 31).unwrap();
        for (model, closure) in [
            (random_coin_model(), Closure::Decouple),
            (CoinModel::fibonacci(1.3, 0.7).unwrap(), Closure::Decouple),
            (
                CoinModel::explicit_alphas(vec![c64(0.0, 0.0), c64(-0.75, 0.0)]).unwrap(),
                Closure::Periodic,
            ),
        ] {
            let op = CmvOperator::from_model(&model, w, closure).unwrap();
            let d = op.to_dense();
            let eye = DMatrix::<Complex<f64>>::identity(w.len(), w.len());
            let g = &d * d.adjoint();
            let worst = (g - eye).iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(worst < 1e-12, "‖UU* − I‖_max = {worst:.3e} ({closure:?})");
        }
    }

    #[test]
    fn apply_matches_dense() {
        let w = Window::new(-16, 15).unwrap();
        for closure in [Closure::Decouple, Closure::Periodic] {
            let model = match closure {
                Closure::Decouple => random_coin_model(),
                Closure::Periodic => {
                    CoinModel::explicit_alphas(vec![c64(0.2, 0.1), c64(-0.4, 0.3)]).unwrap()
                }
            };
            let op = CmvOperator::from_model(&model, w, closure).unwrap();
            let d = op.to_dense();
            let x: Vec<C64> = (0..w.len())
                .map(|i| c64((i as f64 * 0.7).sin(), (i as f64 * 0.3).cos()))
                .collect();
            let y = op.apply(&x);
            let xv = nalgebra::DVector::from_vec(x.clone());
            let yd = &d * xv;
            for i in 0..w.len() {
                assert!((y[i] - yd[i]).norm() < 1e-13, "{closure:?} site {i}");
            }
            let back = op.apply_inv(&y);
            for i in 0..w.len() {
                assert!((back[i] - x[i]).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn free_walk_shifts() {
        let w = Window::new(-16, 15).unwrap();
        let op = CmvOperator::from_model(&CoinModel::free(), w, Closure::Decouple).unwrap();
        let mut x = vec![c64(0.0, 0.0); w.len()];
        x[w.index(4)] = c64(1.0, 0.0);
        let y = op.apply(&x);
        assert!((y[w.index(6)] - c64(1.0, 0.0)).norm() < 1e-15);
        assert_eq!(y.iter().map(|v| v.norm_sqr()).sum::<f64>(), 1.0);
        let mut x = vec![c64(0.0, 0.0); w.len()];
        x[w.index(5)] = c64(1.0, 0.0);
        let y = op.apply(&x);
        assert!((y[w.index(3)] - c64(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn finite_propagation_cone() {
        let w = Window::new(-64, 63).unwrap();
        let op = CmvOperator::from_model(&random_coin_model(), w, Closure::Decouple).unwrap();
        let mut x = vec![c64(0.0, 0.0); w.len()];
        x[w.index(1)] = c64(1.0, 0.0);
        for k in 1..=12i64 {
            op.apply_inplace(&mut x);
            for (i, v) in x.iter().enumerate() {
                let n = w.lo + i as i64;
                if (n - 1).abs() > 2 * k + 2 {
                    assert!(v.norm() == 0.0, "leak at n = {n}, k = {k}");
                }
            }
        }
    }

    #[test]
    fn ranged_apply_consistent() {
        let w = Window::new(-32, 31).unwrap();
        let op = CmvOperator::from_model(&random_coin_model(), w, Closure::Decouple).unwrap();
        let mut x = vec![c64(0.0, 0.0); w.len()];
        x[w.index(0)] = c64(0.6, 0.0);
        x[w.index(-1)] = c64(0.0, 0.8);
        let full = op.apply(&x);
        let mut ranged = x.clone();
        op.apply_range_inplace(&mut ranged, -4, 4);
        for i in 0..w.len() {
            assert!((full[i] - ranged[i]).norm() < 1e-15);
        }
    }

    #[test]
    fn resolvent_free_oracle() {
        let w = Window::new(-64, 63).unwrap();
        let op = CmvOperator::from_model(&CoinModel::free(), w, Closure::Decouple).unwrap();
        let z = c64(2.0, 0.0);
        let g00 = op.resolvent_entry(z, 0, 0).unwrap();
        assert!((g00 - c64(-0.5, 0.0)).norm() < 1e-12);
        let z = c64(1.7, 0.0);
        let g = op.resolvent_entry(z, 6, 0).unwrap();
        let want = -z.powi(-4);
        assert!((g - want).norm() < 1e-12, "{g} vs {want}");
        // z inside the disk: (ℰ − z)^{−1} = ℰ*Σ(ℰ*z)^k: ⟨δ_6, ·δ_0⟩ = 0,
        // ⟨δ_0, ·δ_6⟩ = (z̄-free) ℰ^{-k} chain: check the adjoint direction
        let z = c64(0.3, 0.2);
        let g = op.resolvent_entry(z, 0, 6).unwrap();
        // δ_6 = ℰ^3δ_0 ⇒ (ℰ−z)^{−1}δ_6 = Σ_{k≥0} z^k ℰ^{2−k}... use dense oracle instead
        let d = op.to_dense();
        let mut m = d.clone();
        for i in 0..w.len() {
            m[(i, i)] -= z;
        }
        let inv = m.try_inverse().unwrap();
        let want = inv[(w.index(0), w.index(6))];
        assert!((g - want).norm() < 1e-11);
    }

    #[test]
    fn resolvent_matches_dense_random_model() {
        let w = Window::new(-32, 31).unwrap();
        let op = CmvOperator::from_model(&random_coin_model(), w, Closure::Decouple).unwrap();
        let z = c64(0.4, 1.1);
        let mut rhs = vec![c64(0.0, 0.0); w.len()];
        rhs[w.index(3)] = c64(1.0, 0.0);
        rhs[w.index(-8)] = c64(0.0, -0.5);
        let x = op.solve_shifted(z, &rhs).unwrap();
        let d = op.to_dense();
        let mut m = d;
        for i in 0..w.len() {
            m[(i, i)] -= z;
        }
        let xv = m
            .lu()
            .solve(&nalgebra::DVector::from_vec(rhs.clone()))
            .unwrap();
        for i in 0..w.len() {
            assert!((x[i] - xv[i]).norm() < 1e-10, "site {i}");
        }
    }

    #[test]
    fn resolvent_rejects_near_circle() {
        let w = Window::new(0, 7).unwrap();
        let op = CmvOperator::from_model(&CoinModel::free(), w, Closure::Decouple).unwrap();
        let z = C64::from_polar(1.0 + 1e-9, 0.3);
        assert!(matches!(
            op.solve_shifted(z, &vec![c64(1.0, 0.0); 8]),
            Err(Error::BadArgument(_))
        ));
    }

    #[test]
    fn periodic_closure_needs_matching_alpha() {
        let w = Window::new(0, 5).unwrap();
        // period 3 does not divide 6 evenly in the α sense? it does; use
        // period 4 against window 6 to force a mismatch at the seam
        let m = CoinModel::explicit_alphas(vec![
            c64(0.1, 0.0),
            c64(0.2, 0.0),
            c64(0.3, 0.0),
            c64(0.4, 0.0),
        ])
        .unwrap();
        assert!(CmvOperator::from_model(&m, w, Closure::Periodic).is_err());
    }
}
