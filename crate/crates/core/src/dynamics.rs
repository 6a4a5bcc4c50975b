//! Wavepacket evolution, site statistics, exponential time averages,
//! moments, and transport-exponent estimation.
//!
//! For a normalized state ψ(k) = ℰ^k ψ0 the site statistics are
//!   a(n,k) = |⟨φ_n, ψ(k)⟩|²,
//!   ã(n,K) = (2/K) Σ_{k≥0} e^{−2k/K} a(n,k)   (prefactor configurable),
//!   |X|^p(k) = Σ_n (|n|^p + 1) a(n,k),
//! and transport exponents are slopes of log-moments against log-time,
//! lower (liminf) and upper (limsup) estimated as min/max sliding secants
//! over the trailing decade of the grid.

use crate::cmv::{CmvOperator, Window};
use crate::error::{Error, Result};
use crate::mat2::{c64, C64};
use rayon::prelude::*;
use std::f64::consts::TAU;

/// e^{−2k*/K} ≤ this at the truncation index k*.
pub const AVERAGE_TAIL_WEIGHT: f64 = 1e-12;

/// Smallest k* with e^{−2k*/K} ≤ AVERAGE_TAIL_WEIGHT.
pub fn k_star(cap_k: f64) -> u64 {
    assert!(cap_k > 0.0);
    (0.5 * cap_k * (1.0 / AVERAGE_TAIL_WEIGHT).ln()).ceil() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AverageNorm {
    /// 2/K, first-order in 1/K.
    TwoOverK,
    /// 1 − e^{−2/K}, the weight sum's exact reciprocal.
    Exact,
}

pub fn average_prefactor(norm: AverageNorm, cap_k: f64) -> f64 {
    match norm {
        AverageNorm::TwoOverK => 2.0 / cap_k,
        AverageNorm::Exact => 1.0 - (-2.0 / cap_k).exp(),
    }
}

/// Dense window vector from sparse sites, normalized to ‖ψ‖ = 1.
pub fn dense_state(w: Window, sites: &[(i64, C64)]) -> Result<Vec<C64>> {
    let mut psi = vec![c64(0.0, 0.0); w.len()];
    for &(n, v) in sites {
        if !w.contains(n) {
            return Err(Error::BadArgument(format!(
                "state site {n} outside window [{}, {}]",
                w.lo, w.hi
            )));
        }
        psi[w.index(n)] += v;
    }
    let nrm = psi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    if nrm == 0.0 {
        return Err(Error::BadArgument("initial state is zero".into()));
    }
    for v in &mut psi {
        *v /= nrm;
    }
    Ok(psi)
}

/// Evolution that is exact for the whole-line operator: the support cone
/// grows by two sites per side per step and must stay clear of the window
/// edges, so ψ(k) never feels the closure.
pub struct Evolution {
    op: CmvOperator,
    psi: Vec<C64>,
    k: u64,
    act_lo: i64,
    act_hi: i64,
}

impl Evolution {
    pub fn new(op: CmvOperator, sites: &[(i64, C64)]) -> Result<Evolution> {
        let w = op.window();
        let psi = dense_state(w, sites)?;
        let act_lo = sites.iter().map(|s| s.0).min().unwrap();
        let act_hi = sites.iter().map(|s| s.0).max().unwrap();
        Ok(Evolution {
            op,
            psi,
            k: 0,
            act_lo,
            act_hi,
        })
    }

    pub fn step(&mut self) -> Result<()> {
        let w = self.op.window();
        let (nlo, nhi) = (self.act_lo - 2, self.act_hi + 2);
        if nlo < w.lo + 2 || nhi > w.hi - 2 {
            return Err(Error::Horizon(format!(
                "window [{}, {}] too small to evolve support [{}, {}] exactly at step {}",
                w.lo,
                w.hi,
                self.act_lo,
                self.act_hi,
                self.k + 1
            )));
        }
        self.op.apply_range_inplace(&mut self.psi, nlo, nhi);
        self.act_lo = nlo;
        self.act_hi = nhi;
        self.k += 1;
        Ok(())
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    /// Inclusive support cone bounds at the current step.
    pub fn support(&self) -> (i64, i64) {
        (self.act_lo, self.act_hi)
    }

    pub fn window(&self) -> Window {
        self.op.window()
    }

    pub fn amplitude(&self, n: i64) -> C64 {
        self.psi[self.op.window().index(n)]
    }

    /// a(n) for n in the support cone, written into `buf`; returns Σ a.
    pub fn probabilities_into(&self, buf: &mut Vec<f64>) -> f64 {
        let w = self.op.window();
        let base = w.index(self.act_lo);
        let top = w.index(self.act_hi);
        buf.clear();
        buf.extend(self.psi[base..=top].iter().map(|v| v.norm_sqr()));
        buf.iter().sum()
    }
}

/// ψ ↦ ℰ^k ψ for the windowed operator itself (closure included); valid at
/// any horizon, used where the identity under test holds for any unitary.
pub fn apply_power_inplace(op: &CmvOperator, psi: &mut [C64], k: u64) {
    for _ in 0..k {
        op.apply_inplace(psi);
    }
}

struct PowTables {
    ps: Vec<f64>,
    tables: Vec<Vec<f64>>,
}

impl PowTables {
    fn new(ps: &[f64]) -> PowTables {
        PowTables {
            ps: ps.to_vec(),
            tables: vec![Vec::new(); ps.len()],
        }
    }

    fn ensure(&mut self, max_abs: u64) {
        for (p, tbl) in self.ps.iter().zip(self.tables.iter_mut()) {
            for i in tbl.len()..=(max_abs as usize) {
                tbl.push((i as f64).powf(*p));
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub k_max: u64,
    /// Moment exponents p > 0; one |X|^p series per entry.
    pub p_grid: Vec<f64>,
    /// Steps at which to keep the full profile a(·,k).
    pub snapshot_ks: Vec<u64>,
    /// K values for on-the-fly averaged profiles ã(·,K); every K needs
    /// k*(K) ≤ k_max.
    pub average_caps: Vec<f64>,
    pub average_norm: AverageNorm,
    pub norm_tol: f64,
}

impl Default for RunOptions {
    fn default() -> RunOptions {
        RunOptions {
            k_max: 100,
            p_grid: vec![1.0, 2.0],
            snapshot_ks: Vec::new(),
            average_caps: Vec::new(),
            average_norm: AverageNorm::TwoOverK,
            norm_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AveragedProfile {
    pub cap_k: f64,
    pub norm: AverageNorm,
    pub k_star: u64,
    /// Bound on the dropped tail Σ_{k>k*} w_k a(n,k) (uses a ≤ 1).
    pub truncation_bound: f64,
    /// Site of values[0].
    pub offset: i64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub k: u64,
    pub offset: i64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub p_grid: Vec<f64>,
    /// moments[pi][k] = |X|^{p_grid[pi]}(k), k = 0..=k_max.
    pub moments: Vec<Vec<f64>>,
    pub norm_drift: f64,
    pub snapshots: Vec<Snapshot>,
    pub averages: Vec<AveragedProfile>,
    pub support: (i64, i64),
}

/// Evolve ψ0 = `sites` (normalized) for k_max steps, accumulating per-step
/// moments, requested snapshots, and requested time-averaged profiles in a
/// single pass. Exact within the propagation cone.
pub fn run_evolution(op: CmvOperator, sites: &[(i64, C64)], opts: &RunOptions) -> Result<RunOutput> {
    for &p in &opts.p_grid {
        if !(p > 0.0) {
            return Err(Error::BadArgument(format!("moment exponent p = {p} must be > 0")));
        }
    }
    for &cap in &opts.average_caps {
        let ks = k_star(cap);
        if ks > opts.k_max {
            return Err(Error::Horizon(format!(
                "time average at K = {cap} needs k* = {ks} steps, have k_max = {}",
                opts.k_max
            )));
        }
    }
    let w = op.window();
    let mut ev = Evolution::new(op, sites)?;
    let mut tables = PowTables::new(&opts.p_grid);
    let mut moments: Vec<Vec<f64>> = opts
        .p_grid
        .iter()
        .map(|_| Vec::with_capacity(opts.k_max as usize + 1))
        .collect();
    struct AvgAcc {
        cap_k: f64,
        pref: f64,
        k_star: u64,
        values: Vec<f64>,
    }
    let mut avgs: Vec<AvgAcc> = opts
        .average_caps
        .iter()
        .map(|&cap| AvgAcc {
            cap_k: cap,
            pref: average_prefactor(opts.average_norm, cap),
            k_star: k_star(cap),
            values: vec![0.0; w.len()],
        })
        .collect();
    let mut snap_ks = opts.snapshot_ks.clone();
    snap_ks.sort_unstable();
    snap_ks.dedup();
    let mut snap_at = 0usize;
    let mut snapshots = Vec::new();
    let mut scratch: Vec<f64> = Vec::new();
    let mut norm_drift = 0.0f64;
    for k in 0..=opts.k_max {
        if k > 0 {
            ev.step()?;
        }
        let (alo, ahi) = ev.support();
        let total = ev.probabilities_into(&mut scratch);
        let drift = (total - 1.0).abs();
        norm_drift = norm_drift.max(drift);
        if drift > opts.norm_tol {
            return Err(Error::Numerical(format!(
                "norm drift {drift:.3e} at step {k} exceeds {:.1e}",
                opts.norm_tol
            )));
        }
        tables.ensure(alo.unsigned_abs().max(ahi.unsigned_abs()));
        for (pi, row) in moments.iter_mut().enumerate() {
            let tbl = &tables.tables[pi];
            let mut s = 0.0;
            for (off, &a) in scratch.iter().enumerate() {
                let n = alo + off as i64;
                s += (tbl[n.unsigned_abs() as usize] + 1.0) * a;
            }
            row.push(s);
        }
        for avg in &mut avgs {
            if k <= avg.k_star {
                let wk = avg.pref * (-2.0 * k as f64 / avg.cap_k).exp();
                let base = w.index(alo);
                for (off, &a) in scratch.iter().enumerate() {
                    avg.values[base + off] += wk * a;
                }
            }
        }
        if snap_at < snap_ks.len() && snap_ks[snap_at] == k {
            snapshots.push(Snapshot {
                k,
                offset: alo,
                values: scratch.clone(),
            });
            snap_at += 1;
        }
    }
    let averages = avgs
        .into_iter()
        .map(|a| {
            let tail = a.pref * (-2.0 * (a.k_star + 1) as f64 / a.cap_k).exp()
                / (1.0 - (-2.0 / a.cap_k).exp());
            AveragedProfile {
                cap_k: a.cap_k,
                norm: opts.average_norm,
                k_star: a.k_star,
                truncation_bound: tail,
                offset: w.lo,
                values: a.values,
            }
        })
        .collect();
    Ok(RunOutput {
        p_grid: opts.p_grid.clone(),
        moments,
        norm_drift,
        snapshots,
        averages,
        support: ev.support(),
    })
}

/// ⟨|X|^p⟩(K) from the per-step series |X|^p(k), truncated at k*(K).
pub fn averaged_moment(series: &[f64], cap_k: f64, norm: AverageNorm) -> Result<f64> {
    let ks = k_star(cap_k);
    if (ks as usize) >= series.len() {
        return Err(Error::Horizon(format!(
            "time average at K = {cap_k} needs k* = {ks} steps, have {}",
            series.len().saturating_sub(1)
        )));
    }
    let pref = average_prefactor(norm, cap_k);
    let mut s = 0.0;
    for (k, &m) in series.iter().take(ks as usize + 1).enumerate() {
        s += (-2.0 * k as f64 / cap_k).exp() * m;
    }
    Ok(pref * s)
}

/// Σ (|n|^p + 1) a(n) against the profile values starting at site `offset`.
pub fn moment_of_profile(offset: i64, values: &[f64], p: f64) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(off, &a)| ((offset + off as i64).abs() as f64).powf(p) * a + a)
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Σ_{n > N}
    Right,
    /// Σ_{n < −N}
    Left,
    /// Σ_{|n| ≥ N}
    Both,
}

pub fn outside_probability(offset: i64, values: &[f64], cut: i64, side: Side) -> f64 {
    values
        .iter()
        .enumerate()
        .filter(|(off, _)| {
            let n = offset + *off as i64;
            match side {
                Side::Right => n > cut,
                Side::Left => n < -cut,
                Side::Both => n.abs() >= cut,
            }
        })
        .map(|(_, &a)| a)
        .sum()
}

#[derive(Clone, Copy, Debug)]
pub struct BetaEstimate {
    pub p: f64,
    /// min sliding secant of log m/(p log t) over the trailing decade
    pub lower: f64,
    /// max sliding secant over the trailing decade
    pub upper: f64,
    /// least-squares slope over the whole grid
    pub slope: f64,
    /// rms residual of the least-squares fit in log coordinates
    pub residual: f64,
    pub secant_points: usize,
}

/// Finite-horizon transport exponent from (time, moment) grid points.
/// Needs ≥ 8 points spanning ≥ 1.5 decades; a constant series reports 0.
pub fn estimate_beta(grid: &[(f64, f64)], p: f64) -> Result<BetaEstimate> {
    if grid.len() < 8 {
        return Err(Error::BadArgument(format!(
            "moment grid too short: {} points, need ≥ 8",
            grid.len()
        )));
    }
    for w in grid.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::BadArgument("moment grid times must increase".into()));
        }
    }
    if grid.iter().any(|&(t, m)| t <= 0.0 || m <= 0.0) {
        return Err(Error::BadArgument("moment grid must be positive".into()));
    }
    let span = (grid.last().unwrap().0 / grid[0].0).log10();
    if span < 1.5 - 1e-9 {
        return Err(Error::BadArgument(format!(
            "moment grid spans {span:.2} decades, need ≥ 1.5"
        )));
    }
    let xs: Vec<f64> = grid.iter().map(|g| g.0.ln()).collect();
    let ys: Vec<f64> = grid.iter().map(|g| g.1.ln() / p).collect();
    let y_spread = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ys.iter().cloned().fold(f64::INFINITY, f64::min);
    if y_spread <= 1e-12 {
        return Ok(BetaEstimate {
            p,
            lower: 0.0,
            upper: 0.0,
            slope: 0.0,
            residual: 0.0,
            secant_points: grid.len(),
        });
    }
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (ym + slope * (x - xm));
            e * e
        })
        .sum::<f64>()
        / n)
        .sqrt();
    let cutoff = xs.last().unwrap() - 10f64.ln() - 1e-12;
    let mut idx: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] >= cutoff).collect();
    if idx.len() < 3 {
        idx = (xs.len().saturating_sub(4)..xs.len()).collect();
    }
    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let s = (ys[j] - ys[i]) / (xs[j] - xs[i]);
            lower = lower.min(s);
            upper = upper.max(s);
        }
    }
    Ok(BetaEstimate {
        p,
        lower,
        upper,
        slope,
        residual,
        secant_points: idx.len(),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct BallisticCheck {
    /// C fit over the first decade so that |X|^p(k) ≤ C k^p there
    pub c: f64,
    /// max over later grid points of |X|^p(k)/(C k^p)
    pub worst_ratio: f64,
}

/// Fit the ballistic constant on the first decade of the grid and report the
/// worst later violation ratio (≤ 1.05 passes the 5% slack).
pub fn ballistic_excess(grid: &[(f64, f64)], p: f64) -> Result<BallisticCheck> {
    if grid.is_empty() || grid[0].0 < 1.0 {
        return Err(Error::BadArgument("ballistic check needs grid times ≥ 1".into()));
    }
    let t0 = grid[0].0;
    let mut c = 0.0f64;
    let mut any_late = false;
    for &(t, m) in grid {
        if t <= 10.0 * t0 {
            c = c.max(m / t.powf(p));
        } else {
            any_late = true;
        }
    }
    if !any_late {
        return Err(Error::BadArgument(
            "ballistic check needs grid points past the first decade".into(),
        ));
    }
    let mut worst = 0.0f64;
    for &(t, m) in grid {
        if t > 10.0 * t0 {
            worst = worst.max(m / (c * t.powf(p)));
        }
    }
    Ok(BallisticCheck { c, worst_ratio: worst })
}

/// |Σ_{k≥0} e^{−2k/K} a_ψ(n,k) − e^{2/K} ∫₀^{2π} |⟨φ_n, (U−e^{1/K+iθ})^{−1}ψ⟩|² dθ/2π|
/// for the windowed unitary itself, trapezoid quadrature on a uniform θ grid.
pub fn parseval_defect(
    op: &CmvOperator,
    sites: &[(i64, C64)],
    n: i64,
    cap_k: f64,
    nodes: usize,
) -> Result<f64> {
    let w = op.window();
    if !w.contains(n) {
        return Err(Error::BadArgument(format!("site {n} outside window")));
    }
    if nodes == 0 {
        return Err(Error::BadArgument("quadrature needs ≥ 1 node".into()));
    }
    let psi0 = dense_state(w, sites)?;
    let i_n = w.index(n);
    let ks = k_star(cap_k);
    let mut psi = psi0.clone();
    let mut lhs = 0.0;
    for k in 0..=ks {
        if k > 0 {
            op.apply_inplace(&mut psi);
        }
        lhs += (-2.0 * k as f64 / cap_k).exp() * psi[i_n].norm_sqr();
    }
    let r = (1.0 / cap_k).exp();
    let samples: Result<Vec<f64>> = (0..nodes)
        .into_par_iter()
        .map(|m| {
            let z = C64::from_polar(r, TAU * m as f64 / nodes as f64);
            let x = op.solve_shifted(z, &psi0)?;
            Ok(x[i_n].norm_sqr())
        })
        .collect();
    let rhs = (2.0 / cap_k).exp() * samples?.iter().sum::<f64>() / nodes as f64;
    Ok((lhs - rhs).abs())
}

/// |⟨δ_n, ℰ^k δ_{−1}⟩ + (1/2πi) ∮ z^k ⟨δ_n, (ℰ−z)^{−1} δ_{−1}⟩ dz| on the
/// circle of radius e^{1/k} (radius e at k = 0), trapezoid quadrature.
pub fn contour_defect(op: &CmvOperator, n: i64, k: u64, nodes: usize) -> Result<f64> {
    let w = op.window();
    if !w.contains(n) || !w.contains(-1) {
        return Err(Error::BadArgument("contour check needs n and −1 in the window".into()));
    }
    if nodes == 0 {
        return Err(Error::BadArgument("quadrature needs ≥ 1 node".into()));
    }
    let src = dense_state(w, &[(-1, c64(1.0, 0.0))])?;
    let mut psi = src.clone();
    apply_power_inplace(op, &mut psi, k);
    let elem = psi[w.index(n)];
    let r = if k == 0 { 1f64.exp() } else { (1.0 / k as f64).exp() };
    let i_n = w.index(n);
    let samples: Result<Vec<C64>> = (0..nodes)
        .into_par_iter()
        .map(|m| {
            let th = TAU * m as f64 / nodes as f64;
            let z = C64::from_polar(r, th);
            let x = op.solve_shifted(z, &src)?;
            // z^{k+1} since dz = iz dθ turns ∮ dz/(2πi) into ∫ z · dθ/(2π)
            let zk1 = C64::from_polar(r.powi(k as i32 + 1), th * (k as f64 + 1.0));
            Ok(zk1 * x[i_n])
        })
        .collect();
    let quad = samples?.iter().sum::<C64>() / nodes as f64;
    Ok((elem + quad).norm())
}

/// Double the node count until two successive defects differ by < 10% (or
/// both sit at the floor), returning the last (nodes, defect) pair.
pub fn refine_nodes(
    start: usize,
    max_nodes: usize,
    mut f: impl FnMut(usize) -> Result<f64>,
) -> Result<(usize, f64)> {
    let mut nodes = start.max(1);
    let mut d = f(nodes)?;
    while nodes * 2 <= max_nodes {
        let d2 = f(nodes * 2)?;
        nodes *= 2;
        let scale = d.max(d2);
        if scale <= 1e-14 || (d - d2).abs() < 0.1 * scale {
            return Ok((nodes, d2));
        }
        d = d2;
    }
    Ok((nodes, d))
}

/// Ascending log-spaced integer grid, deduplicated.
pub fn log_grid_u64(lo: u64, hi: u64, count: usize) -> Vec<u64> {
    assert!(lo >= 1 && hi >= lo && count >= 2);
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<u64> = (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            (a + t * (b - a)).exp().round() as u64
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && count >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            (a + t * (b - a)).exp()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmv::Closure;
    use crate::coin::Coin;
    use crate::mat2::Mat2;
    use crate::verblunsky::CoinModel;

    fn sample_units(seed: u64, count: usize) -> Vec<f64> {
        let mut s = seed;
        (0..count)
            .map(|_| {
                s = s.wrapping_add(0x9e3779b97f4a7c15);
                let mut v = s;
                v = (v ^ (v >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
                v = (v ^ (v >> 27)).wrapping_mul(0x94d049bb133111eb);
                v ^= v >> 31;
                v as f64 / u64::MAX as f64
            })
            .collect()
    }

    fn random_coin(u: &[f64]) -> Coin {
        let th = 0.1 + 1.2 * u[0];
        let (c, s) = (th.cos(), th.sin());
        let (p1, p2, p3) = (TAU * u[1], TAU * u[2], TAU * u[3]);
        let e = |t: f64| C64::from_polar(1.0, t);
        let q = Mat2::new(
            e(p1) * c,
            e(p2) * s,
            -e(p3 - p2) * s,
            e(p3 - p1) * c,
        );
        Coin::new(q).unwrap()
    }

    fn random_periodic_model(seed: u64, period: usize) -> CoinModel {
        let u = sample_units(seed, 4 * period);
        let coins: Vec<Coin> = u.chunks(4).map(random_coin).collect();
        CoinModel::Periodic { coins }
    }

    fn free_op(k_max: i64) -> CmvOperator {
        let w = Window::covering(-2 * k_max - 6, 2 * k_max + 6);
        CmvOperator::from_model(&CoinModel::free(), w, Closure::Decouple).unwrap()
    }

    #[test]
    fn free_walk_is_exact_shift() {
        let op = free_op(25);
        let mut ev = Evolution::new(op, &[(0, c64(1.0, 0.0))]).unwrap();
        for k in 1..=25u64 {
            ev.step().unwrap();
            let expect = 2 * k as i64;
            assert!((ev.amplitude(expect) - c64(1.0, 0.0)).norm() <= 1e-15, "k = {k}");
            let (alo, ahi) = ev.support();
            for n in alo..=ahi {
                if n != expect {
                    assert_eq!(ev.amplitude(n).norm_sqr(), 0.0, "stray mass at {n}, k = {k}");
                }
            }
        }
    }

    #[test]
    fn free_walk_moments_and_averages() {
        let op = free_op(40);
        let opts = RunOptions {
            k_max: 40,
            p_grid: vec![1.0, 2.0, 10.0],
            average_caps: vec![2.5],
            ..RunOptions::default()
        };
        let out = run_evolution(op, &[(0, c64(1.0, 0.0))], &opts).unwrap();
        assert!(out.norm_drift <= 1e-12);
        for (pi, &p) in out.p_grid.iter().enumerate() {
            for (k, &m) in out.moments[pi].iter().enumerate() {
                let want = (2.0 * k as f64).powf(p) + 1.0;
                assert!(
                    (m - want).abs() <= 1e-12 * want,
                    "p = {p}, k = {k}: {m} vs {want}"
                );
            }
        }
        let avg = &out.averages[0];
        assert_eq!(avg.k_star, k_star(2.5));
        for k in 0..=12i64 {
            let got = avg.values[(2 * k - avg.offset) as usize];
            let want = (2.0 / 2.5) * (-2.0 * k as f64 / 2.5).exp();
            assert!(
                (got - want).abs() <= 1e-15 + 1e-12 * want,
                "k = {k}: {got} vs {want}"
            );
        }
        assert!(avg.truncation_bound <= 1e-11);
    }

    #[test]
    fn window_too_small_is_detected() {
        let w = Window::new(-8, 7).unwrap();
        let op = CmvOperator::from_model(&CoinModel::free(), w, Closure::Decouple).unwrap();
        let mut ev = Evolution::new(op, &[(0, c64(1.0, 0.0))]).unwrap();
        ev.step().unwrap();
        ev.step().unwrap();
        match ev.step() {
            Err(Error::Horizon(_)) => {}
            other => panic!("expected horizon error, got {other:?}"),
        }
    }

    #[test]
    fn windowed_power_matches_dense_power() {
        for closure in [Closure::Decouple, Closure::Periodic] {
            let w = Window::new(-32, 31).unwrap();
            let model = random_periodic_model(77, 8);
            let op = CmvOperator::from_model(&model, w, closure).unwrap();
            let mut psi = dense_state(w, &[(-1, c64(1.0, 0.0))]).unwrap();
            apply_power_inplace(&op, &mut psi, 20);
            let dense = op.to_dense();
            let mut v = nalgebra::DVector::from_element(w.len(), nalgebra::Complex::new(0.0, 0.0));
            v[w.index(-1)] = nalgebra::Complex::new(1.0, 0.0);
            for _ in 0..20 {
                v = &dense * v;
            }
            let worst = (0..w.len())
                .map(|i| (psi[i] - c64(v[i].re, v[i].im)).norm())
                .fold(0.0f64, f64::max);
            assert!(worst <= 1e-11, "{closure:?}: worst {worst:.3e}");
        }
    }

    #[test]
    fn stationary_average_closed_form() {
        let cap = 9.0;
        let ks = k_star(cap);
        for (norm, want) in [
            (AverageNorm::TwoOverK, (2.0 / cap) / (1.0 - (-2.0 / cap).exp())),
            (AverageNorm::Exact, 1.0),
        ] {
            let series = vec![1.0; ks as usize + 1];
            let got = averaged_moment(&series, cap, norm).unwrap();
            assert!((got - want).abs() <= 2e-12 * want, "{norm:?}: {got} vs {want}");
        }
        assert!(matches!(
            averaged_moment(&[1.0; 10], 9.0, AverageNorm::TwoOverK),
            Err(Error::Horizon(_))
        ));
    }

    #[test]
    fn outside_probability_and_moment_inequality() {
        let model = random_periodic_model(3, 4);
        let k_max = 300u64;
        let w = Window::covering(-2 * k_max as i64 - 6, 2 * k_max as i64 + 6);
        let op = CmvOperator::from_model(&model, w, Closure::Decouple).unwrap();
        let opts = RunOptions {
            k_max,
            p_grid: vec![1.0, 2.0],
            average_caps: vec![20.0],
            ..RunOptions::default()
        };
        let out = run_evolution(op, &[(-1, c64(1.0, 0.0))], &opts).unwrap();
        let avg = &out.averages[0];
        let total: f64 = avg.values.iter().sum();
        let weight_sum = (2.0 / 20.0) / (1.0 - (-2.0f64 / 20.0).exp());
        assert!((total - weight_sum).abs() <= 1e-10);
        for cut in [1i64, 4, 16, 64] {
            let r = outside_probability(avg.offset, &avg.values, cut, Side::Right);
            let l = outside_probability(avg.offset, &avg.values, cut, Side::Left);
            let b = outside_probability(avg.offset, &avg.values, cut, Side::Both);
            assert!(r >= 0.0 && l >= 0.0 && b >= l + r - 1e-15);
            for (pi, &p) in out.p_grid.iter().enumerate() {
                let m = averaged_moment(&out.moments[pi], 20.0, AverageNorm::TwoOverK).unwrap();
                assert!(
                    m >= (cut as f64).powf(p) * b * (1.0 - 1e-12),
                    "p = {p}, R = {cut}: {m} < {}",
                    (cut as f64).powf(p) * b
                );
            }
        }
        let m_direct = moment_of_profile(avg.offset, &avg.values, 2.0);
        let m_series = averaged_moment(&out.moments[1], 20.0, AverageNorm::TwoOverK).unwrap();
        assert!((m_direct - m_series).abs() <= 1e-9 * m_series);
    }

    #[test]
    fn moment_log_normalization_nondecreasing_in_p() {
        let model = random_periodic_model(41, 6);
        let k_max = 100u64;
        let w = Window::covering(-2 * k_max as i64 - 6, 2 * k_max as i64 + 6);
        let op = CmvOperator::from_model(&model, w, Closure::Decouple).unwrap();
        let opts = RunOptions {
            k_max,
            p_grid: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            ..RunOptions::default()
        };
        let out = run_evolution(op, &[(0, c64(1.0, 0.0))], &opts).unwrap();
        // power-mean inequality on the genuine moment Σ|n|^p a = |X|^p − 1;
        // the raw |X|^p carries a +1 that makes log/p non-monotone for
        // profiles concentrated at a single |n|
        for k in [10usize, 50, 100] {
            let mut prev = f64::NEG_INFINITY;
            for (pi, &p) in out.p_grid.iter().enumerate() {
                let m = out.moments[pi][k] - 1.0;
                assert!(m > 1e-10, "degenerate profile at k = {k}");
                let v = m.ln() / p;
                assert!(v >= prev - 1e-9, "k = {k}, p = {p}: {v} < {prev}");
                prev = v;
            }
        }
    }

    #[test]
    fn beta_estimates_on_closed_forms() {
        let ks = log_grid_u64(100, 10_000, 12);
        for p in [1.0, 2.0] {
            let grid: Vec<(f64, f64)> = ks
                .iter()
                .map(|&k| (k as f64, (2.0 * k as f64).powf(p) + 1.0))
                .collect();
            let est = estimate_beta(&grid, p).unwrap();
            assert!((est.slope - 1.0).abs() <= 0.01, "slope {}", est.slope);
            assert!((est.lower - 1.0).abs() <= 0.01, "lower {}", est.lower);
            assert!((est.upper - 1.0).abs() <= 0.01, "upper {}", est.upper);
            assert!(est.residual <= 0.01);
            let bal = ballistic_excess(&grid, p).unwrap();
            assert!(bal.worst_ratio <= 1.0 + 1e-9, "ratio {}", bal.worst_ratio);
        }
        let flat: Vec<(f64, f64)> = ks.iter().map(|&k| (k as f64, 3.25)).collect();
        let est = estimate_beta(&flat, 2.0).unwrap();
        assert_eq!((est.lower, est.upper, est.slope), (0.0, 0.0, 0.0));
        let short: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(estimate_beta(&short, 1.0), Err(Error::BadArgument(_))));
        let narrow: Vec<(f64, f64)> = (10..=18).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(estimate_beta(&narrow, 1.0), Err(Error::BadArgument(_))));
    }

    #[test]
    fn parseval_identity_holds() {
        // shift dynamics, closed-form LHS = 1 at n = 0
        let w = Window::covering(-200, 199);
        let free = CmvOperator::from_model(&CoinModel::free(), w, Closure::Decouple).unwrap();
        let d = parseval_defect(&free, &[(0, c64(1.0, 0.0))], 0, 5.0, 512).unwrap();
        assert!(d <= 1e-8, "free defect {d:.3e}");
        // site never reached: both sides at the floor
        let d0 = parseval_defect(&free, &[(0, c64(1.0, 0.0))], 151, 5.0, 256).unwrap();
        assert!(d0 <= 1e-10, "cone-exterior defect {d0:.3e}");
        // random 8-periodic coins at K = 10
        let model = random_periodic_model(55, 8);
        let op = CmvOperator::from_model(&model, w, Closure::Decouple).unwrap();
        let d1 = parseval_defect(&op, &[(-1, c64(1.0, 0.0))], 3, 10.0, 512).unwrap();
        assert!(d1 <= 1e-6, "random-model defect {d1:.3e}");
        let (nodes, d2) = refine_nodes(64, 2048, |n| {
            parseval_defect(&op, &[(-1, c64(1.0, 0.0))], 3, 10.0, n)
        })
        .unwrap();
        assert!(d2 <= 1e-6, "refined defect {d2:.3e} at {nodes} nodes");
    }

    #[test]
    fn contour_identity_holds() {
        let w = Window::covering(-80, 79);
        let free = CmvOperator::from_model(&CoinModel::free(), w, Closure::Decouple).unwrap();
        // ℰ^k δ_{−1} = δ_{−1−2k} for the shift
        let d = contour_defect(&free, -11, 5, 1024).unwrap();
        assert!(d <= 1e-6, "on-orbit defect {d:.3e}");
        let d_off = contour_defect(&free, -3, 5, 1024).unwrap();
        assert!(d_off <= 1e-6, "off-orbit defect {d_off:.3e}");
        let d_id = contour_defect(&free, -1, 0, 1024).unwrap();
        assert!(d_id <= 1e-10, "k = 0 defect {d_id:.3e}");
        let model = random_periodic_model(19, 8);
        let op = CmvOperator::from_model(&model, w, Closure::Decouple).unwrap();
        let d1 = contour_defect(&op, 5, 8, 1024).unwrap();
        assert!(d1 <= 1e-6, "random-model defect {d1:.3e}");
    }
}
