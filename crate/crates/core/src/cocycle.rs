//! Transfer cocycles over a Verblunsky sequence.
//!
//! Szegő one-step S(α,z) = ρ^{-1}[[z, −ᾱ], [−αz, 1]], det S = z;
//! Gesztesy–Zinchenko one-steps
//!   P(α,z) = ρ^{-1}[[−ᾱ, z], [z^{-1}, −α]],  Q(α) = ρ^{-1}[[−α, 1], [1, −ᾱ]],
//! both with determinant −1. Y(n;z) is P(α_n,z) for n odd, Q(α_n) for n even,
//! and Z(n,m;z) = Y(n−1)···Y(m) for n > m, with Z(m,m) = I and
//! Z(n,m) = Z(m,n)^{-1} below the diagonal; T(n,m;z) is built the same way
//! from S. The two are conjugate: with D_z = diag(z, 1),
//!   z^{-1} S(α,z) S(β,z) = D_z^{-1} P(α,z) Q(β,z) D_z   (z ≠ 0),
//! so tr Z(2m,0;z) = z^{-m} tr T(2m,0;z).
//!
//! A complex sequence u solves ℰu = zu exactly when the pairs
//! φ(n) = (u_n, (ℒ^{-1}u)_n) propagate as φ(n) = Y(n;z) φ(n−1).

use crate::error::{Error, Result};
use crate::mat2::{c64, C64, Mat2, ScaledMat2};
use crate::verblunsky::{rho, AlphaWindow};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CocycleKind {
    Szego,
    Gz,
}

pub fn szego_step(alpha: C64, z: C64) -> Mat2 {
    let r = rho(alpha);
    Mat2::new(z / r, -alpha.conj() / r, -alpha * z / r, c64(1.0 / r, 0.0))
}

pub fn gz_p(alpha: C64, z: C64) -> Mat2 {
    let r = rho(alpha);
    Mat2::new(-alpha.conj() / r, z / r, 1.0 / (z * r), -alpha / r)
}

pub fn gz_q(alpha: C64) -> Mat2 {
    let r = rho(alpha);
    Mat2::new(-alpha / r, c64(1.0 / r, 0.0), c64(1.0 / r, 0.0), -alpha.conj() / r)
}

/// The one-step matrix advancing φ(j−1) to φ(j).
pub fn step(kind: CocycleKind, j: i64, alpha_j: C64, z: C64) -> Mat2 {
    match kind {
        CocycleKind::Szego => szego_step(alpha_j, z),
        CocycleKind::Gz => {
            if j.rem_euclid(2) == 1 {
                gz_p(alpha_j, z)
            } else {
                gz_q(alpha_j)
            }
        }
    }
}

/// T(n,m;z) or Z(n,m;z) with log-scaled arithmetic.
pub fn transfer_scaled(
    aw: &AlphaWindow,
    kind: CocycleKind,
    n: i64,
    m: i64,
    z: C64,
) -> ScaledMat2 {
    let mut acc = ScaledMat2::identity();
    if n > m {
        for j in m..n {
            acc = acc.premul_mat(&step(kind, j, aw.get(j), z));
        }
    } else {
        for j in n..m {
            acc = acc.mul_mat(&step(kind, j, aw.get(j), z).inverse());
        }
    }
    acc
}

pub fn transfer(aw: &AlphaWindow, kind: CocycleKind, n: i64, m: i64, z: C64) -> Mat2 {
    transfer_scaled(aw, kind, n, m, z).to_mat()
}

/// Walk Z(n,0;z) (or T) across n ∈ [n_lo, n_hi], invoking `f` at every n,
/// in O(n_hi − n_lo) steps total.
pub fn scan_from_zero(
    aw: &AlphaWindow,
    kind: CocycleKind,
    n_lo: i64,
    n_hi: i64,
    z: C64,
    f: &mut dyn FnMut(i64, &ScaledMat2),
) {
    assert!(n_lo <= n_hi);
    if n_hi >= 0 {
        let mut acc = ScaledMat2::identity();
        if 0 >= n_lo {
            f(0, &acc);
        }
        for n in 1..=n_hi {
            acc = acc.premul_mat(&step(kind, n - 1, aw.get(n - 1), z));
            if n >= n_lo {
                f(n, &acc);
            }
        }
    }
    if n_lo < 0 {
        let mut acc = ScaledMat2::identity();
        for n in (n_lo..0).rev() {
            // Z(n,0) = Y(n)^{-1} Z(n+1,0)
            acc = acc.premul_mat(&step(kind, n, aw.get(n), z).inverse());
            if n <= n_hi {
                f(n, &acc);
            }
        }
    }
}

/// ‖z^{-1}S(α,z)S(β,z) − D_z^{-1}P(α,z)Q(β)D_z‖_max.
pub fn conjugacy_defect(alpha: C64, beta: C64, z: C64) -> f64 {
    let lhs = szego_step(alpha, z).mul(&szego_step(beta, z)).scale(z.powi(-1));
    let pq = gz_p(alpha, z).mul(&gz_q(beta));
    let rhs = Mat2::new(pq.a, pq.b / z, pq.c * z, pq.d);
    lhs.dist_max(&rhs)
}

/// Initial data Φ(−1) = [[z, z], [1, −1]] whose columns span the solution
/// space; Φ(n) = Z(n+1,0;z)Φ(−1), and the Wronskian W(z,n) = det Φ(n)
/// equals 2(−1)^n z for every n since det Z(n+1,0) = (−1)^{n+1}.
pub fn basis_initial(z: C64) -> Mat2 {
    Mat2::new(z, z, c64(1.0, 0.0), c64(-1.0, 0.0))
}

pub fn solution_basis(aw: &AlphaWindow, z: C64, n: i64) -> Mat2 {
    transfer(aw, CocycleKind::Gz, n + 1, 0, z).mul(&basis_initial(z))
}

pub fn wronskian_expected(z: C64, n: i64) -> C64 {
    let sign = if n.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    z * 2.0 * sign
}

pub struct EnergyVariationReport {
    /// L(N) = max_{|n|,|m| ≤ N} ‖T(n,m;z)‖
    pub l_n: f64,
    /// worst log-margin ln L + 2L|n||δ| − ln‖T(n,0;ze^δ)‖ over checks (≥ 0 ⇔ bound holds)
    pub min_log_margin: f64,
    pub checks: usize,
}

/// Verify ‖T(n,0;ze^δ)‖ ≤ L(N) exp(2 L(N) |n| |δ|) for |n| ≤ N and each
/// supplied δ with |δ| ≤ 1.
pub fn energy_variation_check(
    aw: &AlphaWindow,
    n_cap: i64,
    z: C64,
    deltas: &[C64],
) -> Result<EnergyVariationReport> {
    if z.norm() == 0.0 {
        return Err(Error::BadArgument("z = 0".into()));
    }
    if let Some(d) = deltas.iter().find(|d| d.norm() > 1.0) {
        return Err(Error::BadArgument(format!("|δ| = {} > 1", d.norm())));
    }
    let n_cap = n_cap.max(1);
    let mut prefixes = Vec::with_capacity((2 * n_cap + 1) as usize);
    scan_from_zero(aw, CocycleKind::Szego, -n_cap, n_cap, z, &mut |n, m| {
        prefixes.push((n, m.to_mat()));
    });
    prefixes.sort_by_key(|(n, _)| *n);
    let mut l_n = 0.0f64;
    for (_, pn) in &prefixes {
        for (_, pm) in &prefixes {
            l_n = l_n.max(pn.mul(&pm.inverse()).norm_spec());
        }
    }
    let mut min_log_margin = f64::INFINITY;
    let mut checks = 0usize;
    for &d in deltas {
        let zd = z * d.exp();
        scan_from_zero(aw, CocycleKind::Szego, -n_cap, n_cap, zd, &mut |n, m| {
            let margin = l_n.ln() + 2.0 * l_n * (n.abs() as f64) * d.norm() - m.log_norm_spec();
            if margin < min_log_margin {
                min_log_margin = margin;
            }
            checks += 1;
        });
    }
    if min_log_margin < 0.0 {
        return Err(Error::Invariant(format!(
            "energy variation bound violated: log margin {min_log_margin:.3e}"
        )));
    }
    Ok(EnergyVariationReport {
        l_n,
        min_log_margin,
        checks,
    })
}

/// Defect of the telescoping identity
///   T(n,0;ze^δ) − T(n,0;z)
///     = (e^δ−1) Σ_{k=0}^{n−1} T(n,k+1;ze^δ) S(α_k,z) P T(k,0;z),
/// P = diag(1,0), relative to ‖T(n,0;ze^δ)‖.
pub fn energy_variation_identity_defect(aw: &AlphaWindow, n: i64, z: C64, delta: C64) -> f64 {
    assert!(n >= 1);
    let zd = z * delta.exp();
    let lhs = transfer(aw, CocycleKind::Szego, n, 0, zd)
        .sub(&transfer(aw, CocycleKind::Szego, n, 0, z));
    let mut sum = Mat2::new(c64(0.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0));
    let proj = Mat2::new(c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0));
    for k in 0..n {
        let a = transfer(aw, CocycleKind::Szego, n, k + 1, zd);
        let b = szego_step(aw.get(k), z).mul(&proj);
        let c = transfer(aw, CocycleKind::Szego, k, 0, z);
        let term = a.mul(&b).mul(&c);
        sum = Mat2::new(sum.a + term.a, sum.b + term.b, sum.c + term.c, sum.d + term.d);
    }
    let rhs = sum.scale(delta.exp() - 1.0);
    let scale = transfer(aw, CocycleKind::Szego, n, 0, zd).norm_spec().max(1.0);
    lhs.dist_max(&rhs) / scale
}
