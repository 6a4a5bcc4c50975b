//! Fibered analysis of p-periodic walk operators.
//!
//! When α_{n+p} = α_n with p even, ℰ commutes with translation by p and
//! splits into a field of p×p unitary fibers ℰ_θ over θ ∈ [0, 2π): the
//! mod-p Fourier transform û_j(θ) = Σ_ℓ u_{j+ℓp} e^{−iℓθ} intertwines ℰ
//! with multiplication by ℰ_θ. Fiber eigenvalues λ_j(θ) sweep the spectral
//! bands; their derivatives give group velocities v_j = p·∂_θ arg λ_j, and
//! the asymptotic velocity operator J acts fiberwise as multiplication by
//! v_j on the λ_j eigenspace. The gauge V_θ = diag(e^{i·2⌊k/2⌋θ/p}) turns
//! the θ-dependence into the commutator identity ∂_θ 𝓔̃_θ = (i/p)B̃_θ with
//! B = ℰX − Xℰ and X the even-site position n ↦ 2⌊n/2⌋.

use crate::cmv::{Closure, CmvOperator, Window};
use crate::error::{Error, Result};
use crate::verblunsky::{rho, AlphaWindow};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use std::f64::consts::{PI, TAU};

pub const FIBER_UNITARITY_TOL: f64 = 1e-12;
pub const EIGEN_MODULUS_TOL: f64 = 1e-10;
/// Largest fiber dimension the dense eigensolver accepts.
pub const MAX_FIBER_DIM: usize = 64;
/// Eigenvalues closer than this are treated as one degenerate group.
pub const DEGENERACY_GAP: f64 = 1e-8;
/// Walk speed limit: |v_j| ≤ 2 must hold up to this slack.
pub const SPEED_LIMIT_SLACK: f64 = 1e-6;

const EIGEN_RESIDUAL_TOL: f64 = 1e-9;
const FD_DTHETA: f64 = 2e-5;
const MAX_BALLISTIC_SITES: usize = 1 << 22;
const MAX_CESARO_HORIZON: u64 = 256;

fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Position observable: site n sits at 2⌊n/2⌋, so the two legs of each
/// Θ block share a coordinate and ℰ moves mass by at most 2 per step.
pub fn position(n: i64) -> f64 {
    (2 * n.div_euclid(2)) as f64
}

/// A p-periodic coefficient sequence with p even. Odd input lengths are
/// doubled (the sequence is unchanged, only the label period grows).
#[derive(Clone, Debug)]
pub struct PeriodicAlphas {
    vals: Vec<C64>,
}

impl PeriodicAlphas {
    pub fn new(mut vals: Vec<C64>) -> Result<PeriodicAlphas> {
        if vals.is_empty() {
            return Err(Error::BadArgument("period must be positive".into()));
        }
        for (j, a) in vals.iter().enumerate() {
            if a.norm() >= 1.0 {
                return Err(Error::BadArgument(format!(
                    "|α_{j}| = {} is not in the open unit disk",
                    a.norm()
                )));
            }
        }
        if vals.len() % 2 == 1 {
            let copy = vals.clone();
            vals.extend(copy);
        }
        if vals.len() > MAX_FIBER_DIM {
            return Err(Error::BadArgument(format!(
                "period {} exceeds the fiber limit {}",
                vals.len(),
                MAX_FIBER_DIM
            )));
        }
        Ok(PeriodicAlphas { vals })
    }

    pub fn period(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, n: i64) -> C64 {
        self.vals[n.rem_euclid(self.vals.len() as i64) as usize]
    }

    /// α window covering [lo, hi] inclusive.
    pub fn alpha_window(&self, lo: i64, hi: i64) -> AlphaWindow {
        AlphaWindow {
            offset: lo,
            alphas: (lo..=hi).map(|j| self.get(j)).collect(),
        }
    }

    /// Periodically closed operator on [0, blocks·p − 1]: the quotient of
    /// the infinite operator by translation with blocks·p sites.
    pub fn operator(&self, blocks: usize) -> Result<CmvOperator> {
        if blocks == 0 {
            return Err(Error::BadArgument("need at least one period block".into()));
        }
        let n = (blocks * self.period()) as i64;
        let window = Window::new(0, n - 1)?;
        let aw = self.alpha_window(0, n);
        CmvOperator::from_alpha_window(&aw, window, Closure::Periodic)
    }
}

/// Five-diagonal band coefficients at site n:
/// a_n = −ᾱ_n α_{n−1}, b_n = ᾱ_n ρ_{n−1}, c_n = −ρ_n α_{n−1}, d_n = ρ_n ρ_{n−1}.
/// Row n of ℰ reads (d_n, c_n, a_{n+1}, c_{n+1}) for n even and
/// (b_{n+1}, a_{n+1}, b_{n+2}, d_{n+2}) for n odd.
pub fn abcd(alpha: &PeriodicAlphas, n: i64) -> (C64, C64, C64, C64) {
    let an = alpha.get(n);
    let ap = alpha.get(n - 1);
    let rn = rho(an);
    let rp = rho(ap);
    (
        -an.conj() * ap,
        an.conj() * rp,
        -ap * rn,
        c64(rn * rp, 0.0),
    )
}

/// Structural entry of the fiber: value at (row, col), carrying the phase
/// e^{i·wrap·θ} from crossing `wrap` period boundaries.
#[derive(Clone, Copy, Debug)]
struct FiberEntry {
    row: usize,
    col: usize,
    wrap: i64,
    val: C64,
}

fn fiber_entries(alpha: &PeriodicAlphas) -> Vec<FiberEntry> {
    let p = alpha.period() as i64;
    let mut out = Vec::with_capacity(4 * p as usize);
    let mut push = |row: i64, m: i64, val: C64| {
        if val.norm() == 0.0 {
            return;
        }
        let col = m.rem_euclid(p);
        out.push(FiberEntry {
            row: row as usize,
            col: col as usize,
            wrap: (m - col) / p,
            val,
        });
    };
    for j in 0..p {
        let (a1, b1, c1, _) = abcd(alpha, j + 1);
        let (_, _, c0, d0) = abcd(alpha, j);
        let (_, b2, _, d2) = abcd(alpha, j + 2);
        push(j, j, a1);
        if j % 2 == 0 {
            push(j, j - 2, d0);
            push(j, j - 1, c0);
            push(j, j + 1, c1);
        } else {
            push(j, j - 1, b1);
            push(j, j + 1, b2);
            push(j, j + 2, d2);
        }
    }
    out
}

/// ℰ_θ: (ℰ_θ)_{j,j'} = Σ_r E_{j, j'+rp} e^{irθ}.
pub fn build_fiber(alpha: &PeriodicAlphas, theta: f64) -> DMatrix<C64> {
    let p = alpha.period();
    let mut m = DMatrix::<C64>::zeros(p, p);
    for e in fiber_entries(alpha) {
        m[(e.row, e.col)] += e.val * C64::from_polar(1.0, e.wrap as f64 * theta);
    }
    m
}

/// Fiber of the commutator B = ℰX − Xℰ: entries E_{n,m}·(x_m − x_n), which
/// leaves only ∓2·(d, c) on even rows and ±2·(b, d) on odd rows.
pub fn fiber_commutator(alpha: &PeriodicAlphas, theta: f64) -> DMatrix<C64> {
    let p = alpha.period();
    let mut m = DMatrix::<C64>::zeros(p, p);
    for e in fiber_entries(alpha) {
        let disp = position(e.col as i64) + (e.wrap * p as i64) as f64 - position(e.row as i64);
        m[(e.row, e.col)] += e.val * disp * C64::from_polar(1.0, e.wrap as f64 * theta);
    }
    m
}

/// Gauge phases v_k = e^{i·2⌊k/2⌋·θ/p}, k = 0..p−1.
pub fn gauge_phases(p: usize, theta: f64) -> Vec<C64> {
    (0..p as i64)
        .map(|k| C64::from_polar(1.0, position(k) * theta / p as f64))
        .collect()
}

fn twisted_entry_frequency(e: &FiberEntry, p: usize) -> f64 {
    e.wrap as f64 + (position(e.col as i64) - position(e.row as i64)) / p as f64
}

/// 𝓔̃_θ = V_θ^{−1} ℰ_θ V_θ; entry (j,k) carries e^{iθ(r + (x_k − x_j)/p)}.
pub fn twisted_fiber(alpha: &PeriodicAlphas, theta: f64) -> DMatrix<C64> {
    let p = alpha.period();
    let mut m = DMatrix::<C64>::zeros(p, p);
    for e in fiber_entries(alpha) {
        let w = twisted_entry_frequency(&e, p);
        m[(e.row, e.col)] += e.val * C64::from_polar(1.0, w * theta);
    }
    m
}

/// Exact ∂_θ 𝓔̃_θ, differentiating each entry phase analytically.
pub fn twisted_fiber_derivative(alpha: &PeriodicAlphas, theta: f64) -> DMatrix<C64> {
    let p = alpha.period();
    let mut m = DMatrix::<C64>::zeros(p, p);
    for e in fiber_entries(alpha) {
        let w = twisted_entry_frequency(&e, p);
        m[(e.row, e.col)] += e.val * c64(0.0, w) * C64::from_polar(1.0, w * theta);
    }
    m
}

/// B̃_θ = V_θ^{−1} B_θ V_θ.
pub fn twisted_commutator(alpha: &PeriodicAlphas, theta: f64) -> DMatrix<C64> {
    let p = alpha.period();
    let v = gauge_phases(p, theta);
    let mut b = fiber_commutator(alpha, theta);
    for j in 0..p {
        for k in 0..p {
            b[(j, k)] = v[j].conj() * b[(j, k)] * v[k];
        }
    }
    b
}

fn max_abs_entry(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Defects of the derivative identity ∂_θ 𝓔̃_θ = (i/p) B̃_θ.
#[derive(Clone, Copy, Debug)]
pub struct CommutatorCell {
    pub p: usize,
    pub theta: f64,
    pub dtheta: f64,
    /// ‖(𝓔̃_{θ+dθ} − 𝓔̃_{θ−dθ})/2dθ − (i/p)B̃_θ‖_max; O(dθ²).
    pub fd_defect: f64,
    /// ‖∂_θ𝓔̃_θ − (i/p)B̃_θ‖_max with the analytic phase derivative;
    /// zero up to rounding.
    pub analytic_defect: f64,
}

pub fn commutator_identity_defect(
    alpha: &PeriodicAlphas,
    theta: f64,
    dtheta: f64,
) -> Result<CommutatorCell> {
    if !(1e-7..=1e-3).contains(&dtheta) {
        return Err(Error::BadArgument(format!(
            "finite-difference step {dtheta} outside [1e-7, 1e-3]"
        )));
    }
    let p = alpha.period();
    let plus = twisted_fiber(alpha, theta + dtheta);
    let minus = twisted_fiber(alpha, theta - dtheta);
    let fd = (plus - minus) / c64(2.0 * dtheta, 0.0);
    let target = twisted_commutator(alpha, theta) * c64(0.0, 1.0 / p as f64);
    let fd_defect = max_abs_entry(&(fd - &target));
    let analytic = twisted_fiber_derivative(alpha, theta);
    let analytic_defect = max_abs_entry(&(analytic - target));
    Ok(CommutatorCell {
        p,
        theta,
        dtheta,
        fd_defect,
        analytic_defect,
    })
}

/// Eigendecomposition of a unitary matrix through the Cayley transform:
/// H = i(I − ζW)(I + ζW)^{−1} is Hermitian when −1 ∉ spec(ζW), and
/// h ↦ (i − h)/(i + h)·ζ̄ maps its spectrum back to the unit circle.
pub fn unitary_eigen(w: &DMatrix<C64>) -> Result<(Vec<C64>, DMatrix<C64>)> {
    let n = w.nrows();
    if n == 0 || w.ncols() != n {
        return Err(Error::BadArgument("unitary_eigen needs a square matrix".into()));
    }
    let id = DMatrix::<C64>::identity(n, n);
    for attempt in 0..6 {
        let zeta = C64::from_polar(1.0, 0.331 + 1.177 * attempt as f64);
        let wz = w * zeta;
        let lu = (&id + &wz).lu();
        let x = match lu.solve(&(&id - &wz)) {
            Some(x) => x,
            None => continue,
        };
        let h = x * c64(0.0, 1.0);
        if max_abs_entry(&(&h - h.adjoint())) > 1e-8 {
            continue;
        }
        let herm = (&h + h.adjoint()) * c64(0.5, 0.0);
        let se = herm.symmetric_eigen();
        let vecs = se.eigenvectors;
        let mut pairs: Vec<(C64, usize)> = se
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(j, &hj)| {
                let wj = (c64(0.0, 1.0) - c64(hj, 0.0)) / (c64(0.0, 1.0) + c64(hj, 0.0));
                (wj * zeta.conj(), j)
            })
            .collect();
        pairs.sort_by(|a, b| {
            let ta = a.0.arg().rem_euclid(TAU);
            let tb = b.0.arg().rem_euclid(TAU);
            ta.partial_cmp(&tb).unwrap()
        });
        let lambdas: Vec<C64> = pairs.iter().map(|p| p.0).collect();
        let mut vectors = DMatrix::<C64>::zeros(n, n);
        for (slot, &(_, j)) in pairs.iter().enumerate() {
            vectors.set_column(slot, &vecs.column(j));
        }
        let mut residual = 0.0f64;
        for j in 0..n {
            let col = vectors.column(j);
            let r = w * col - DVector::from_column_slice(col.as_slice()) * lambdas[j];
            residual = residual.max(r.norm());
        }
        if residual <= EIGEN_RESIDUAL_TOL {
            return Ok((lambdas, vectors));
        }
    }
    Err(Error::Numerical(
        "unitary eigendecomposition failed for every Cayley phase shift".into(),
    ))
}

/// One fiber of the direct-integral decomposition, fully diagonalized.
#[derive(Clone, Debug)]
pub struct FloquetCell {
    pub p: usize,
    pub theta: f64,
    pub matrix: DMatrix<C64>,
    /// Eigenvalues sorted by principal argument.
    pub lambdas: Vec<C64>,
    /// Orthonormal eigenvectors, column j for λ_j.
    pub vectors: DMatrix<C64>,
}

pub fn floquet_cell(alpha: &PeriodicAlphas, theta: f64) -> Result<FloquetCell> {
    let p = alpha.period();
    let matrix = build_fiber(alpha, theta);
    let defect = max_abs_entry(&(&matrix * matrix.adjoint() - DMatrix::<C64>::identity(p, p)));
    if defect > FIBER_UNITARITY_TOL {
        return Err(Error::Invariant(format!(
            "fiber at θ = {theta} is not unitary: defect {defect:.3e}"
        )));
    }
    let (lambdas, vectors) = unitary_eigen(&matrix)?;
    for l in &lambdas {
        if (l.norm() - 1.0).abs() > EIGEN_MODULUS_TOL {
            return Err(Error::Invariant(format!(
                "fiber eigenvalue modulus {} off the unit circle",
                l.norm()
            )));
        }
    }
    Ok(FloquetCell {
        p,
        theta,
        matrix,
        lambdas,
        vectors,
    })
}

/// Mod-p Fourier data: û_j(θ_m) for j = 0..p−1 on the grid θ_m = 2πm/L.
#[derive(Clone, Debug)]
pub struct FiberedVectors {
    pub p: usize,
    pub blocks: usize,
    data: Vec<C64>,
}

impl FiberedVectors {
    pub fn theta(&self, m: usize) -> f64 {
        TAU * m as f64 / self.blocks as f64
    }

    pub fn fiber(&self, m: usize) -> &[C64] {
        &self.data[m * self.p..(m + 1) * self.p]
    }

    pub fn fiber_mut(&mut self, m: usize) -> &mut [C64] {
        &mut self.data[m * self.p..(m + 1) * self.p]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.blocks as f64
    }
}

/// û_j(θ_m) = Σ_ℓ u_{j+ℓp} e^{−iℓθ_m}. The window must hold a whole number
/// of periods; index i of `u` is lattice residue i mod p.
pub fn mod_p_fourier(u: &[C64], p: usize) -> Result<FiberedVectors> {
    if p == 0 || u.len() % p != 0 || u.is_empty() {
        return Err(Error::BadArgument(format!(
            "window length {} is not a positive multiple of the period {p}",
            u.len()
        )));
    }
    let blocks = u.len() / p;
    let mut data = vec![c64(0.0, 0.0); u.len()];
    for m in 0..blocks {
        let step = C64::from_polar(1.0, -TAU * m as f64 / blocks as f64);
        let mut phase = c64(1.0, 0.0);
        for l in 0..blocks {
            for j in 0..p {
                data[m * p + j] += u[l * p + j] * phase;
            }
            phase *= step;
        }
    }
    Ok(FiberedVectors { p, blocks, data })
}

/// u_{j+ℓp} = (1/L) Σ_m û_j(θ_m) e^{+iℓθ_m}.
pub fn mod_p_fourier_inverse(f: &FiberedVectors) -> Vec<C64> {
    let (p, blocks) = (f.p, f.blocks);
    let mut u = vec![c64(0.0, 0.0); p * blocks];
    for m in 0..blocks {
        let step = C64::from_polar(1.0, TAU * m as f64 / blocks as f64);
        let mut phase = c64(1.0 / blocks as f64, 0.0);
        let fib = f.fiber(m);
        for l in 0..blocks {
            for j in 0..p {
                u[l * p + j] += fib[j] * phase;
            }
            phase *= step;
        }
    }
    u
}

/// Eigenvalues, Feynman–Hellmann velocities v_j = Re(λ̄_j ⟨v_j, B_θ v_j⟩),
/// and velocity-adapted eigenvectors at one fiber. Degenerate eigenvalue
/// groups are resolved by diagonalizing the velocity form inside the group,
/// which extends the velocities continuously through band crossings.
pub fn fiber_velocities(
    alpha: &PeriodicAlphas,
    theta: f64,
) -> Result<(Vec<C64>, Vec<f64>, DMatrix<C64>)> {
    let cell = floquet_cell(alpha, theta)?;
    let b = fiber_commutator(alpha, theta);
    let p = cell.p;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| {
        let ti = cell.lambdas[i].arg().rem_euclid(TAU);
        let tj = cell.lambdas[j].arg().rem_euclid(TAU);
        ti.partial_cmp(&tj).unwrap()
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &idx in &order {
        match groups.last_mut() {
            Some(g) if (cell.lambdas[*g.last().unwrap()] - cell.lambdas[idx]).norm() < DEGENERACY_GAP => {
                g.push(idx)
            }
            _ => groups.push(vec![idx]),
        }
    }
    if groups.len() > 1 {
        let first = &groups[0];
        let last = groups.last().unwrap();
        let wrap = (cell.lambdas[first[0]] - cell.lambdas[*last.last().unwrap()]).norm();
        if wrap < DEGENERACY_GAP {
            let tail = groups.pop().unwrap();
            groups[0].splice(0..0, tail);
        }
    }
    let mut lambdas = vec![c64(0.0, 0.0); p];
    let mut velocities = vec![0.0f64; p];
    let mut vectors = DMatrix::<C64>::zeros(p, p);
    let mut slot = 0usize;
    for g in groups {
        let lam = cell.lambdas[g[0]];
        let mut vg = DMatrix::<C64>::zeros(p, g.len());
        for (c, &idx) in g.iter().enumerate() {
            vg.set_column(c, &cell.vectors.column(idx));
        }
        let form = vg.adjoint() * &b * &vg * lam.conj();
        let herm_defect = max_abs_entry(&(&form - form.adjoint()));
        if herm_defect > 1e-6 {
            return Err(Error::Invariant(format!(
                "velocity form is not Hermitian on a λ group: defect {herm_defect:.3e}"
            )));
        }
        let herm = (&form + form.adjoint()) * c64(0.5, 0.0);
        if g.len() == 1 {
            lambdas[slot] = lam;
            velocities[slot] = herm[(0, 0)].re;
            vectors.set_column(slot, &vg.column(0));
            slot += 1;
        } else {
            let se = herm.symmetric_eigen();
            let rotated = &vg * &se.eigenvectors;
            for c in 0..g.len() {
                lambdas[slot] = cell.lambdas[g[c]];
                velocities[slot] = se.eigenvalues[c];
                vectors.set_column(slot, &rotated.column(c));
                slot += 1;
            }
        }
    }
    Ok((lambdas, velocities, vectors))
}

/// θ grid of n midpoints 2π(m+½)/n; even n keeps 0 and π (the only
/// degeneracy angles of generic two-band models) off the grid.
pub fn velocity_grid(n: usize) -> Result<Vec<f64>> {
    if n == 0 || n % 2 == 1 {
        return Err(Error::BadArgument(
            "velocity grid size must be even and positive".into(),
        ));
    }
    Ok((0..n).map(|m| TAU * (m as f64 + 0.5) / n as f64).collect())
}

/// Band functions and velocities over a θ grid, branches continued by
/// proximity from node to node.
#[derive(Clone, Debug)]
pub struct VelocityReport {
    pub p: usize,
    pub thetas: Vec<f64>,
    /// lambdas[m][j]: branch j at θ_m, continuity-sorted.
    pub lambdas: Vec<Vec<C64>>,
    /// Feynman–Hellmann velocities, aligned with `lambdas`.
    pub velocities: Vec<Vec<f64>>,
    /// Centered finite-difference velocities p·Δarg λ/2dθ.
    pub fd_velocities: Vec<Vec<f64>>,
    /// max |v_FH − v_FD| over the whole grid.
    pub cross_defect: f64,
    pub min_speed: f64,
    pub max_speed: f64,
}

fn wrap_angle(mut d: f64) -> f64 {
    while d > PI {
        d -= TAU;
    }
    while d <= -PI {
        d += TAU;
    }
    d
}

/// Match each reference eigenvalue to a distinct new one within `tol`.
fn match_branches(reference: &[C64], fresh: &[C64], tol: f64) -> Result<Vec<usize>> {
    let n = reference.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (i, r) in reference.iter().enumerate() {
        for (j, f) in fresh.iter().enumerate() {
            pairs.push(((r - f).norm(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut taken_ref = vec![false; n];
    let mut taken_new = vec![false; n];
    let mut assign = vec![usize::MAX; n];
    for (cost, i, j) in pairs {
        if taken_ref[i] || taken_new[j] {
            continue;
        }
        if cost > tol {
            return Err(Error::Numerical(format!(
                "branch crossing: eigenvalue continuation jump {cost:.3e} exceeds {tol:.3e}"
            )));
        }
        taken_ref[i] = true;
        taken_new[j] = true;
        assign[i] = j;
    }
    Ok(assign)
}

/// Sweep the fibers over an even midpoint grid, continue the branches, and
/// cross-check the Feynman–Hellmann velocities against finite differences
/// of arg λ_j. The spectrum of the velocity operator J is the closure of
/// all v_j(θ) values; `min_speed` > 0 certifies J is invertible on this grid.
pub fn velocities_and_j(alpha: &PeriodicAlphas, n_grid: usize) -> Result<VelocityReport> {
    let thetas = velocity_grid(n_grid)?;
    let p = alpha.period();
    let dgrid = TAU / n_grid as f64;
    let grid_tol = 3.0 * dgrid * (2.0 + 1.0) / p as f64 + 1e-7;
    let fd_tol = 3.0 * FD_DTHETA * (2.0 + 1.0) / p as f64 + 1e-9;
    let mut lambdas: Vec<Vec<C64>> = Vec::with_capacity(n_grid);
    let mut velocities: Vec<Vec<f64>> = Vec::with_capacity(n_grid);
    let mut fd_velocities: Vec<Vec<f64>> = Vec::with_capacity(n_grid);
    let mut cross_defect = 0.0f64;
    let mut min_speed = f64::INFINITY;
    let mut max_speed = 0.0f64;
    for (m, &theta) in thetas.iter().enumerate() {
        let (lam, vel, _) = fiber_velocities(alpha, theta)?;
        let (mut lam, mut vel) = (lam, vel);
        if m > 0 {
            let assign = match_branches(&lambdas[m - 1], &lam, grid_tol)?;
            let mut lam2 = vec![c64(0.0, 0.0); p];
            let mut vel2 = vec![0.0; p];
            for (i, &j) in assign.iter().enumerate() {
                lam2[i] = lam[j];
                vel2[i] = vel[j];
            }
            lam = lam2;
            vel = vel2;
        }
        let (lp, _, _) = fiber_velocities(alpha, theta + FD_DTHETA)?;
        let (lm, _, _) = fiber_velocities(alpha, theta - FD_DTHETA)?;
        let ap = match_branches(&lam, &lp, fd_tol)?;
        let am = match_branches(&lam, &lm, fd_tol)?;
        let mut fd = vec![0.0; p];
        for j in 0..p {
            let darg = wrap_angle(lp[ap[j]].arg() - lm[am[j]].arg());
            fd[j] = p as f64 * darg / (2.0 * FD_DTHETA);
            cross_defect = cross_defect.max((fd[j] - vel[j]).abs());
        }
        for &v in &vel {
            min_speed = min_speed.min(v.abs());
            max_speed = max_speed.max(v.abs());
        }
        lambdas.push(lam);
        velocities.push(vel);
        fd_velocities.push(fd);
    }
    Ok(VelocityReport {
        p,
        thetas,
        lambdas,
        velocities,
        fd_velocities,
        cross_defect,
        min_speed,
        max_speed,
    })
}

/// Apply B = ℰX − Xℰ on a window, ignoring wrap terms: exact on vectors
/// supported two sites inside the window.
fn apply_commutator(alpha: &PeriodicAlphas, lo: i64, x: &[C64]) -> Vec<C64> {
    let n = x.len();
    let mut y = vec![c64(0.0, 0.0); n];
    for i in 0..n {
        let site = lo + i as i64;
        if site.rem_euclid(2) == 0 {
            let (_, _, c0, d0) = abcd(alpha, site);
            if i >= 2 {
                y[i] += d0 * -2.0 * x[i - 2];
            }
            if i >= 1 {
                y[i] += c0 * -2.0 * x[i - 1];
            }
        } else {
            let (_, b2, _, d2) = abcd(alpha, site + 2);
            if i + 1 < n {
                y[i] += b2 * 2.0 * x[i + 1];
            }
            if i + 2 < n {
                y[i] += d2 * 2.0 * x[i + 2];
            }
        }
    }
    y
}

#[derive(Clone, Copy, Debug)]
pub struct BallisticSample {
    pub l: u64,
    /// m_L = ⟨ψ0, X(L)ψ0⟩ / L with X(L) = ℰ^L X ℰ^{−L}.
    pub mean: f64,
    /// s_L = ‖X(L)ψ0/L − Jψ0‖.
    pub residual: f64,
}

/// Heisenberg evolution of the position observable against the fibered
/// velocity operator.
#[derive(Clone, Debug)]
pub struct BallisticReport {
    pub window: Window,
    pub samples: Vec<BallisticSample>,
    /// ‖Jψ0‖ — the residual scale.
    pub j_norm: f64,
    /// ‖X(L)ψ0 − (X + Σ_{ℓ<L} ℰ^ℓBℰ^{−ℓ}·ℰ*)ψ0‖ at the Cesàro horizon.
    pub heisenberg_defect: f64,
    pub cesaro_horizon: u64,
}

/// Track X(L)ψ0 = ℰ^L X ℰ^{−L} ψ0 on an automatically sized window and
/// compare X(L)/L against the velocity operator J applied through the
/// mod-p Fourier transform. ψ0 is given as (site, amplitude) pairs and is
/// normalized internally. One checkpoint (`cesaro_horizon`) additionally
/// verifies the telescoped form X + (Σ_{ℓ<L} B(ℓ))ℰ* step by step.
pub fn ballistic_check(
    alpha: &PeriodicAlphas,
    psi0: &[(i64, C64)],
    checkpoints: &[u64],
    cesaro_horizon: u64,
) -> Result<BallisticReport> {
    if psi0.is_empty() || checkpoints.is_empty() {
        return Err(Error::BadArgument("need a state and at least one horizon".into()));
    }
    if cesaro_horizon == 0 || cesaro_horizon > MAX_CESARO_HORIZON {
        return Err(Error::BadArgument(format!(
            "telescoping horizon must lie in [1, {MAX_CESARO_HORIZON}]"
        )));
    }
    let p = alpha.period() as i64;
    let l_max = *checkpoints.iter().max().unwrap().max(&cesaro_horizon);
    let smin = psi0.iter().map(|&(s, _)| s).min().unwrap();
    let smax = psi0.iter().map(|&(s, _)| s).max().unwrap();
    let pad = 2 * (l_max as i64 + 2) + 8;
    let lo = (smin - pad).div_euclid(p) * p;
    let hi_raw = smax + pad;
    let blocks = ((hi_raw - lo) as f64 / p as f64).ceil() as i64 + 1;
    let n_sites = (blocks * p) as usize;
    if n_sites > MAX_BALLISTIC_SITES {
        return Err(Error::Horizon(format!(
            "ballistic window needs {n_sites} sites, above the {MAX_BALLISTIC_SITES} limit"
        )));
    }
    let window = Window::new(lo, lo + blocks * p - 1)?;
    let aw = alpha.alpha_window(lo, lo + blocks * p);
    let op = CmvOperator::from_alpha_window(&aw, window, Closure::Periodic)?;

    let mut psi = vec![c64(0.0, 0.0); n_sites];
    for &(site, amp) in psi0 {
        psi[window.index(site)] += amp;
    }
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::BadArgument("initial state is zero".into()));
    }
    for z in psi.iter_mut() {
        *z /= norm;
    }

    // Jψ0 through the fibers: û(θ_m) ↦ Σ_j v_j ⟨v_j, û⟩ v_j.
    let fib = mod_p_fourier(&psi, p as usize)?;
    let mut jfib = FiberedVectors {
        p: fib.p,
        blocks: fib.blocks,
        data: vec![c64(0.0, 0.0); fib.p * fib.blocks],
    };
    for m in 0..fib.blocks {
        let (_, vel, vectors) = fiber_velocities(alpha, fib.theta(m))?;
        let u = DVector::from_column_slice(fib.fiber(m));
        let mut coeffs = vectors.adjoint() * u;
        for j in 0..fib.p {
            coeffs[j] *= c64(vel[j], 0.0);
        }
        let ju = &vectors * coeffs;
        jfib.fiber_mut(m).copy_from_slice(ju.as_slice());
    }
    let jpsi = mod_p_fourier_inverse(&jfib);
    let j_norm = jpsi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();

    let x_mul = |v: &[C64]| -> Vec<C64> {
        v.iter()
            .enumerate()
            .map(|(i, &z)| z * position(lo + i as i64))
            .collect()
    };

    let mut targets: Vec<u64> = checkpoints.to_vec();
    targets.push(cesaro_horizon);
    targets.sort_unstable();
    targets.dedup();

    let mut back = psi.clone();
    let mut stack: Vec<Vec<C64>> = Vec::with_capacity(cesaro_horizon as usize);
    let mut step = 0u64;
    let mut samples = Vec::new();
    let mut heisenberg_defect = f64::NAN;
    for &l in &targets {
        while step < l {
            op.apply_inv_inplace(&mut back);
            step += 1;
            if step <= cesaro_horizon {
                stack.push(back.clone());
            }
        }
        let mut xv = x_mul(&back);
        for _ in 0..l {
            op.apply_inplace(&mut xv);
        }
        let mean = psi
            .iter()
            .zip(&xv)
            .map(|(a, b)| (a.conj() * b).re)
            .sum::<f64>()
            / l as f64;
        let residual = xv
            .iter()
            .zip(&jpsi)
            .map(|(a, b)| (a / l as f64 - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if checkpoints.contains(&l) {
            samples.push(BallisticSample { l, mean, residual });
        }
        if l == cesaro_horizon {
            let lh = cesaro_horizon as usize;
            let mut acc = apply_commutator(alpha, lo, &stack[lh - 1]);
            for ell in (0..lh - 1).rev() {
                op.apply_inplace(&mut acc);
                let bw = apply_commutator(alpha, lo, &stack[ell]);
                for (a, b) in acc.iter_mut().zip(&bw) {
                    *a += b;
                }
            }
            let xpsi = x_mul(&psi);
            heisenberg_defect = xv
                .iter()
                .zip(&xpsi)
                .zip(&acc)
                .map(|((direct, x0), s)| (direct - (x0 + s)).norm_sqr())
                .sum::<f64>()
                .sqrt();
        }
    }
    samples.sort_by_key(|s| s.l);
    Ok(BallisticReport {
        window,
        samples,
        j_norm,
        heisenberg_defect,
        cesaro_horizon,
    })
}

/// Diagonal gauge entry γ_k = e^{i(−1)^{k+1}⌊(k+1)/2⌋φ}: phases
/// 0, φ, −φ, 2φ, −2φ, … along the lattice.
pub fn gauge_entry(k: i64, phi: f64) -> C64 {
    let steps = (k + 1).div_euclid(2) as f64;
    let sign = if (k + 1).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    C64::from_polar(1.0, sign * steps * phi)
}

/// A skew-periodic family α_{n+p} = ω α_n reduced to a periodic one.
#[derive(Clone, Debug)]
pub struct SkewGauge {
    pub omega: C64,
    /// Twist rate: α̃_j = e^{−ijφ} α_j with φ = arg(ω)/p.
    pub phi: f64,
    pub twisted: PeriodicAlphas,
}

/// Remove a unimodular period twist by the gauge α̃_j = e^{−ijφ}α_j. The
/// original operator is recovered as ℰ = e^{−iφ} Γ* 𝓔̃ Γ with Γ the
/// diagonal of `gauge_entry` phases and 𝓔̃ built from the periodic α̃.
pub fn skew_gauge(alphas: &[C64], omega: C64) -> Result<SkewGauge> {
    if (omega.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::BadArgument(format!(
            "period twist must be unimodular, got |ω| = {}",
            omega.norm()
        )));
    }
    if alphas.is_empty() {
        return Err(Error::BadArgument("period must be positive".into()));
    }
    let p = alphas.len();
    let phi = omega.arg() / p as f64;
    let twisted: Vec<C64> = alphas
        .iter()
        .enumerate()
        .map(|(j, &a)| a * C64::from_polar(1.0, -(j as f64) * phi))
        .collect();
    Ok(SkewGauge {
        omega,
        phi,
        twisted: PeriodicAlphas::new(twisted)?,
    })
}

/// Max-entry defect of ℰ − e^{−iφ}Γ*𝓔̃Γ over the interior of a window with
/// `blocks` periods of the skew sequence on each side of 0.
pub fn skew_window_defect(alphas: &[C64], omega: C64, blocks: usize) -> Result<f64> {
    let sg = skew_gauge(alphas, omega)?;
    let p = alphas.len() as i64;
    let n = (blocks.max(2) as i64) * p;
    let lo = -n;
    let hi = n - 1;
    let skew_aw = AlphaWindow {
        offset: lo,
        alphas: (lo..=hi + 1)
            .map(|j| {
                let q = j.div_euclid(p);
                let r = j.rem_euclid(p) as usize;
                alphas[r] * omega.powi(q as i32)
            })
            .collect(),
    };
    let window = Window::new(lo, hi)?;
    let skew_op = CmvOperator::from_alpha_window(&skew_aw, window, Closure::Decouple)?;
    let tw_aw = sg.twisted.alpha_window(lo, hi + 1);
    let tw_op = CmvOperator::from_alpha_window(&tw_aw, window, Closure::Decouple)?;
    let phase = C64::from_polar(1.0, -sg.phi);
    let mut defect = 0.0f64;
    for row in lo + 2..=hi - 2 {
        for col in (row - 2).max(lo + 2)..=(row + 2).min(hi - 2) {
            let lhs = skew_op.entry(row, col);
            let rhs = phase
                * gauge_entry(row, sg.phi).conj()
                * tw_op.entry(row, col)
                * gauge_entry(col, sg.phi);
            defect = defect.max((lhs - rhs).norm());
        }
    }
    Ok(defect)
}

/// Eigenvalues of the periodically closed operator on `blocks` periods;
/// equals the union of fiber spectra over θ_m = 2πm/blocks.
pub fn dense_periodic_spectrum(alpha: &PeriodicAlphas, blocks: usize) -> Result<Vec<C64>> {
    let op = alpha.operator(blocks)?;
    let dense = op.to_dense();
    let (lambdas, _) = unitary_eigen(&dense)?;
    Ok(lambdas)
}

/// ∪_m spec(ℰ_{2πm/blocks}).
pub fn fiber_spectrum_union(alpha: &PeriodicAlphas, blocks: usize) -> Result<Vec<C64>> {
    let mut out = Vec::with_capacity(blocks * alpha.period());
    for m in 0..blocks {
        let cell = floquet_cell(alpha, TAU * m as f64 / blocks as f64)?;
        out.extend(cell.lambdas);
    }
    Ok(out)
}

/// Symmetric Hausdorff distance between two finite subsets of ℂ.
pub fn hausdorff(a: &[C64], b: &[C64]) -> f64 {
    let one_sided = |x: &[C64], y: &[C64]| -> f64 {
        x.iter()
            .map(|u| {
                y.iter()
                    .map(|v| (u - v).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    one_sided(a, b).max(one_sided(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_alphas(seed: u64, p: usize, radius: f64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..p)
            .map(|_| {
                let r = radius * rng.gen::<f64>();
                let t = TAU * rng.gen::<f64>();
                C64::from_polar(r, t)
            })
            .collect()
    }

    #[test]
    fn abcd_matches_windowed_operator_entries() {
        let free = PeriodicAlphas::new(vec![c64(0.0, 0.0); 2]).unwrap();
        let (a, b, c, d) = abcd(&free, 3);
        assert_eq!((a, b, c), (c64(0.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0)));
        assert_eq!(d, c64(1.0, 0.0));

        let r = 0.6;
        let rr = rho(c64(r, 0.0));
        let flat = PeriodicAlphas::new(vec![c64(r, 0.0); 2]).unwrap();
        let (a, b, c, d) = abcd(&flat, 5);
        assert!((a - c64(-r * r, 0.0)).norm() < 1e-15);
        assert!((b - c64(r * rr, 0.0)).norm() < 1e-15);
        assert!((c - c64(-rr * r, 0.0)).norm() < 1e-15);
        assert!((d - c64(rr * rr, 0.0)).norm() < 1e-15);

        let alpha = PeriodicAlphas::new(random_alphas(11, 6, 0.8)).unwrap();
        let window = Window::new(0, 23).unwrap();
        let aw = alpha.alpha_window(0, 24);
        let op = CmvOperator::from_alpha_window(&aw, window, Closure::Decouple).unwrap();
        for n in 4..20i64 {
            let (a1, b1, c1, d1) = abcd(&alpha, n + 1);
            if n % 2 == 0 {
                let (_, _, c0, d0) = abcd(&alpha, n);
                assert!((op.entry(n, n - 2) - d0).norm() < 1e-14);
                assert!((op.entry(n, n - 1) - c0).norm() < 1e-14);
                assert!((op.entry(n, n) - a1).norm() < 1e-14);
                assert!((op.entry(n, n + 1) - c1).norm() < 1e-14);
            } else {
                let (_, b2, _, d2) = abcd(&alpha, n + 2);
                assert!((op.entry(n, n - 1) - b1).norm() < 1e-14);
                assert!((op.entry(n, n) - a1).norm() < 1e-14);
                assert!((op.entry(n, n + 1) - b2).norm() < 1e-14);
                assert!((op.entry(n, n + 2) - d2).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn fiber_is_unitary_with_unit_modulus_eigenvalues() {
        let free = PeriodicAlphas::new(vec![c64(0.0, 0.0); 2]).unwrap();
        for &theta in &[0.0, 0.7, PI, 4.0] {
            let cell = floquet_cell(&free, theta).unwrap();
            let e = C64::from_polar(1.0, theta);
            assert!((cell.matrix[(0, 0)] - e.conj()).norm() < 1e-15);
            assert!((cell.matrix[(1, 1)] - e).norm() < 1e-15);
            assert!(cell.matrix[(0, 1)].norm() < 1e-15);
            assert!(cell.matrix[(1, 0)].norm() < 1e-15);
            let mut expected = vec![e, e.conj()];
            expected.sort_by(|a, b| {
                a.arg()
                    .rem_euclid(TAU)
                    .partial_cmp(&b.arg().rem_euclid(TAU))
                    .unwrap()
            });
            for (l, w) in cell.lambdas.iter().zip(&expected) {
                assert!((l - w).norm() < 1e-12);
            }
        }

        let alpha = PeriodicAlphas::new(random_alphas(7, 4, 0.9)).unwrap();
        for k in 0..16 {
            let theta = TAU * k as f64 / 16.0;
            let cell = floquet_cell(&alpha, theta).unwrap();
            let p = cell.p;
            let udef = (&cell.matrix * cell.matrix.adjoint() - DMatrix::<C64>::identity(p, p))
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(udef <= FIBER_UNITARITY_TOL, "unitarity defect {udef:.3e}");
            for l in &cell.lambdas {
                assert!((l.norm() - 1.0).abs() <= EIGEN_MODULUS_TOL);
            }
            let pdef = (&cell.vectors * cell.vectors.adjoint()
                - DMatrix::<C64>::identity(p, p))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
            assert!(pdef <= 1e-10, "projection completeness defect {pdef:.3e}");
        }
    }

    #[test]
    fn two_periodic_imbalanced_coin_has_imaginary_gap() {
        let alpha = PeriodicAlphas::new(vec![c64(0.0, 0.0), c64(-0.75, 0.0)]).unwrap();
        let s7 = 7.0f64.sqrt();
        let mut min_im = f64::INFINITY;
        let mut max_im = 0.0f64;
        for m in 0..1024usize {
            let theta = TAU * m as f64 / 1024.0;
            let cell = floquet_cell(&alpha, theta).unwrap();
            let tr = cell.matrix[(0, 0)] + cell.matrix[(1, 1)];
            assert!((tr - c64(s7 / 2.0 * theta.cos(), 0.0)).norm() < 1e-12);
            for l in &cell.lambdas {
                min_im = min_im.min(l.im.abs());
                max_im = max_im.max(l.im.abs());
            }
        }
        assert!((min_im - 0.75).abs() < 1e-9, "gap edge at {min_im}");
        assert!((max_im - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fiber_union_matches_dense_periodic_spectrum() {
        for (seed, p, blocks) in [(3u64, 4usize, 16usize), (21, 2, 32)] {
            let alpha = PeriodicAlphas::new(random_alphas(seed, p, 0.85)).unwrap();
            let dense = dense_periodic_spectrum(&alpha, blocks).unwrap();
            let union = fiber_spectrum_union(&alpha, blocks).unwrap();
            let d = hausdorff(&dense, &union);
            assert!(d <= 1e-6, "Hausdorff distance {d:.3e}");
        }
    }

    #[test]
    fn mod_p_fourier_parseval_inverse_and_intertwining() {
        let p = 4usize;
        let blocks = 32usize;
        let alpha = PeriodicAlphas::new(random_alphas(5, p, 0.8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u: Vec<C64> = (0..p * blocks)
            .map(|_| c64(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();

        assert!(mod_p_fourier(&u[..p * blocks - 1], p).is_err());

        let f = mod_p_fourier(&u, p).unwrap();
        let direct: f64 = u.iter().map(|z| z.norm_sqr()).sum();
        assert!((direct - f.norm_sqr()).abs() <= 1e-10 * direct);

        let back = mod_p_fourier_inverse(&f);
        let round: f64 = u
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(round <= 1e-12, "round trip defect {round:.3e}");

        let op = alpha.operator(blocks).unwrap();
        let eu = op.apply(&u);
        let feu = mod_p_fourier(&eu, p).unwrap();
        let mut defect = 0.0f64;
        for m in 0..blocks {
            let fiber = build_fiber(&alpha, f.theta(m));
            let v = DVector::from_column_slice(f.fiber(m));
            let want = fiber * v;
            for j in 0..p {
                defect = defect.max((feu.fiber(m)[j] - want[j]).norm());
            }
        }
        assert!(defect <= 1e-10, "intertwining defect {defect:.3e}");
    }

    #[test]
    fn commutator_pattern_and_derivative_identity() {
        let alpha = PeriodicAlphas::new(random_alphas(9, 4, 0.85)).unwrap();
        let p = alpha.period();
        let theta = 1.3;
        let b = fiber_commutator(&alpha, theta);
        for j in 0..p {
            assert!(b[(j, j)].norm() < 1e-15, "commutator diagonal must vanish");
        }
        let mut expected = DMatrix::<C64>::zeros(p, p);
        for j in 0..p as i64 {
            let ph = |m: i64| {
                C64::from_polar(1.0, ((m - m.rem_euclid(p as i64)) / p as i64) as f64 * theta)
            };
            if j % 2 == 0 {
                let (_, _, c0, d0) = abcd(&alpha, j);
                expected[(j as usize, (j - 2).rem_euclid(p as i64) as usize)] +=
                    d0 * -2.0 * ph(j - 2);
                expected[(j as usize, (j - 1).rem_euclid(p as i64) as usize)] +=
                    c0 * -2.0 * ph(j - 1);
            } else {
                let (_, b2, _, d2) = abcd(&alpha, j + 2);
                expected[(j as usize, (j + 1).rem_euclid(p as i64) as usize)] +=
                    b2 * 2.0 * ph(j + 1);
                expected[(j as usize, (j + 2).rem_euclid(p as i64) as usize)] +=
                    d2 * 2.0 * ph(j + 2);
            }
        }
        assert!(max_abs_entry(&(&b - expected)) < 1e-14);

        let free = PeriodicAlphas::new(vec![c64(0.0, 0.0); 2]).unwrap();
        let cell = commutator_identity_defect(&free, 0.9, 1e-4).unwrap();
        assert!(cell.fd_defect <= 1e-8, "fd defect {:.3e}", cell.fd_defect);
        assert!(cell.analytic_defect <= 1e-13);

        let coarse = commutator_identity_defect(&alpha, 2.1, 1e-4).unwrap();
        let fine = commutator_identity_defect(&alpha, 2.1, 5e-5).unwrap();
        assert!(coarse.analytic_defect <= 1e-13);
        let ratio = coarse.fd_defect / fine.fd_defect;
        assert!(
            (3.5..=4.5).contains(&ratio),
            "Richardson ratio {ratio} for defects {:.3e}/{:.3e}",
            coarse.fd_defect,
            fine.fd_defect
        );

        assert!(commutator_identity_defect(&alpha, 1.0, 1e-8).is_err());
    }

    #[test]
    fn velocities_cross_check_and_speed_limit() {
        let free = PeriodicAlphas::new(vec![c64(0.0, 0.0); 2]).unwrap();
        let rep = velocities_and_j(&free, 64).unwrap();
        assert!((rep.min_speed - 2.0).abs() <= 1e-9);
        assert!((rep.max_speed - 2.0).abs() <= 1e-9);
        for m in 0..rep.thetas.len() {
            let mut vs = rep.velocities[m].clone();
            vs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!((vs[0] + 2.0).abs() <= 1e-9 && (vs[1] - 2.0).abs() <= 1e-9);
        }

        for (seed, p) in [(2u64, 2usize), (31, 4)] {
            let alpha = PeriodicAlphas::new(random_alphas(seed, p, 0.8)).unwrap();
            let rep = velocities_and_j(&alpha, 256).unwrap();
            assert!(
                rep.cross_defect <= 1e-6,
                "velocity cross-check defect {:.3e}",
                rep.cross_defect
            );
            assert!(rep.max_speed <= 2.0 + SPEED_LIMIT_SLACK);
        }

        let gapped = PeriodicAlphas::new(vec![c64(0.0, 0.0), c64(-0.75, 0.0)]).unwrap();
        let rep = velocities_and_j(&gapped, 256).unwrap();
        assert!(rep.cross_defect <= 1e-6);
        assert!(rep.min_speed > 0.0);
        assert!(rep.max_speed <= 2.0 + SPEED_LIMIT_SLACK);
    }

    #[test]
    fn ballistic_free_walk_reaches_its_velocity() {
        let free = PeriodicAlphas::new(vec![c64(0.0, 0.0); 2]).unwrap();
        let rep = ballistic_check(
            &free,
            &[(0, c64(1.0, 0.0))],
            &[4, 16, 64],
            32,
        )
        .unwrap();
        assert!((rep.j_norm - 2.0).abs() <= 1e-9);
        assert!(rep.heisenberg_defect <= 1e-9);
        for s in &rep.samples {
            assert!((s.mean + 2.0).abs() <= 1e-9, "free even-site mean {}", s.mean);
            assert!(s.residual <= 1e-9);
        }

        let rep = ballistic_check(&free, &[(-1, c64(1.0, 0.0))], &[8, 32], 16).unwrap();
        for s in &rep.samples {
            let want = 2.0 - 2.0 / s.l as f64;
            assert!((s.mean - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn ballistic_two_periodic_converges_toward_j() {
        let alpha = PeriodicAlphas::new(vec![c64(0.0, 0.0), c64(-0.75, 0.0)]).unwrap();
        let rep = ballistic_check(
            &alpha,
            &[(0, c64(1.0, 0.0))],
            &[16, 64, 256],
            48,
        )
        .unwrap();
        assert!(rep.heisenberg_defect <= 1e-9, "telescoping defect {:.3e}", rep.heisenberg_defect);
        assert!(rep.j_norm > 0.1);
        let r: Vec<f64> = rep.samples.iter().map(|s| s.residual / rep.j_norm).collect();
        assert!(r[2] < r[0], "residuals should shrink: {r:?}");
        assert!(r[2] < 0.5, "relative residual at L=256 is {}", r[2]);
    }

    #[test]
    fn skew_gauge_removes_a_unimodular_twist() {
        let base = vec![c64(0.3, 0.1), c64(-0.2, 0.4)];
        assert!(skew_gauge(&base, c64(2.0, 0.0)).is_err());

        let trivial = skew_gauge(&base, c64(1.0, 0.0)).unwrap();
        assert_eq!(trivial.phi, 0.0);
        for (j, &a) in base.iter().enumerate() {
            assert!((trivial.twisted.get(j as i64) - a).norm() < 1e-15);
        }

        let omega = C64::from_polar(1.0, 2.0 * PI / 3.0);
        let sg = skew_gauge(&base, omega).unwrap();
        assert!((sg.phi - PI / 3.0).abs() < 1e-15);
        let d = skew_window_defect(&base, omega, 8).unwrap();
        assert!(d <= 1e-10, "gauge window defect {d:.3e}");

        let d4 = skew_window_defect(&random_alphas(13, 4, 0.7), C64::from_polar(1.0, -1.1), 6)
            .unwrap();
        assert!(d4 <= 1e-10, "four-site gauge window defect {d4:.3e}");
    }

    #[test]
    fn odd_periods_are_doubled() {
        let alpha = PeriodicAlphas::new(random_alphas(4, 3, 0.5)).unwrap();
        assert_eq!(alpha.period(), 6);
        assert_eq!(alpha.get(0), alpha.get(3));
        let cell = floquet_cell(&alpha, 0.4).unwrap();
        assert_eq!(cell.p, 6);
    }
}
