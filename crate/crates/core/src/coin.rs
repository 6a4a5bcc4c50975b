//! Coins (2×2 unitaries), the two-letter substitution words that drive the
//! aperiodic models, and the polymer layout that tiles ℤ with finite chains.
//!
//! Two-sided word conventions, with coin positions n ∈ ℤ:
//!   Fibonacci  ω₀(n) = a  ⟺  {(n+1)φ^{-1}} ∈ [1−φ^{-1}, 1),  φ = (1+√5)/2;
//!   Thue–Morse ω₀(n) = u(n) for n ≥ 0 and u(−n−1) for n < 0, where u is the
//!   fixed point of a ↦ ab, b ↦ ba (u(n) = a iff popcount(n) is even).

use crate::cocycle::{transfer, CocycleKind};
use crate::error::{Error, Result};
use crate::mat2::{c64, C64, Mat2};
use crate::verblunsky::{AlphaWindow, CGMV_AGREEMENT_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const COIN_UNITARITY_TOL: f64 = 1e-12;
pub const COIN_DIAGONAL_MIN: f64 = 1e-12;

/// A coin: a 2×2 unitary with nonvanishing diagonal, so its polar data
/// r = |q11| = |q22| and the diagonal phases are well defined.
#[derive(Clone, Copy, Debug)]
pub struct Coin {
    pub q: Mat2,
}

impl Coin {
    pub fn new(q: Mat2) -> Result<Coin> {
        if !q.is_unitary(COIN_UNITARITY_TOL) {
            return Err(Error::DegenerateCoin(format!(
                "not unitary within {COIN_UNITARITY_TOL:e}: ‖qq*−I‖_max = {:.3e}",
                q.mul(&q.conj_transpose()).dist_max(&Mat2::identity())
            )));
        }
        if q.a.norm() <= COIN_DIAGONAL_MIN || q.d.norm() <= COIN_DIAGONAL_MIN {
            return Err(Error::DegenerateCoin(format!(
                "diagonal entry too small: |q11| = {:.3e}, |q22| = {:.3e}",
                q.a.norm(),
                q.d.norm()
            )));
        }
        Ok(Coin { q })
    }

    /// R_θ = [[cos θ, −sin θ], [sin θ, cos θ]]. Degenerate at θ ≡ π/2 mod π.
    pub fn rotation(theta: f64) -> Result<Coin> {
        let (s, c) = theta.sin_cos();
        Coin::new(Mat2::new(
            c64(c, 0.0),
            c64(-s, 0.0),
            c64(s, 0.0),
            c64(c, 0.0),
        ))
    }

    pub fn identity() -> Coin {
        Coin {
            q: Mat2::identity(),
        }
    }

    /// r = |q11| (= |q22| by unitarity).
    pub fn r(&self) -> f64 {
        self.q.a.norm()
    }

    /// Diagonal phases ω¹ = q11/|q11|, ω² = q22/|q22|.
    pub fn phases(&self) -> (C64, C64) {
        (self.q.a / self.q.a.norm(), self.q.d / self.q.d.norm())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Letter {
    A,
    B,
}

impl Letter {
    pub fn as_char(self) -> char {
        match self {
            Letter::A => 'a',
            Letter::B => 'b',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubstitutionKind {
    Fibonacci,
    ThueMorse,
}

/// k-th iterate of the substitution on the seed letter a:
/// Fibonacci a ↦ ab, b ↦ a; Thue–Morse a ↦ ab, b ↦ ba.
pub fn substitution_word(kind: SubstitutionKind, k: u32) -> Vec<Letter> {
    let mut w = vec![Letter::A];
    for _ in 0..k {
        let mut next = Vec::with_capacity(2 * w.len());
        for &l in &w {
            match (kind, l) {
                (SubstitutionKind::Fibonacci, Letter::A) => next.extend([Letter::A, Letter::B]),
                (SubstitutionKind::Fibonacci, Letter::B) => next.push(Letter::A),
                (SubstitutionKind::ThueMorse, Letter::A) => next.extend([Letter::A, Letter::B]),
                (SubstitutionKind::ThueMorse, Letter::B) => next.extend([Letter::B, Letter::A]),
            }
        }
        w = next;
    }
    w
}

pub fn word_string(w: &[Letter]) -> String {
    w.iter().map(|l| l.as_char()).collect()
}

const INV_PHI: f64 = 0.618033988749894848204586834365638118;

/// Two-sided Fibonacci letter at coin position n.
pub fn fibonacci_letter(n: i64) -> Letter {
    let x = (n + 1) as f64 * INV_PHI;
    let frac = x - x.floor();
    if frac >= 1.0 - INV_PHI {
        Letter::A
    } else {
        Letter::B
    }
}

/// Two-sided Thue–Morse letter at coin position n.
pub fn thue_morse_letter(n: i64) -> Letter {
    let m = if n >= 0 { n } else { -n - 1 } as u64;
    if m.count_ones() % 2 == 0 {
        Letter::A
    } else {
        Letter::B
    }
}

/// The word of chain indices for a polymer model.
#[derive(Clone, Debug)]
pub enum PolymerWord {
    /// Independent uniform indices, one ChaCha stream per position, so the
    /// word is random-access and reproducible from the seed alone.
    Seeded(u64),
    /// index(b) = pattern[b mod len].
    Periodic(Vec<usize>),
}

impl PolymerWord {
    pub fn index_at(&self, block: i64, n_chains: usize) -> usize {
        match self {
            PolymerWord::Seeded(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(zigzag(block));
                rng.gen_range(0..n_chains)
            }
            PolymerWord::Periodic(pat) => pat[block.rem_euclid(pat.len() as i64) as usize],
        }
    }
}

fn zigzag(n: i64) -> u64 {
    ((n << 1) ^ (n >> 63)) as u64
}

/// Finitely many chains (nonempty coin words) tiled over ℤ by a chain-index
/// word; coin position 0 is the first coin of the chain at block 0.
#[derive(Clone, Debug)]
pub struct PolymerModel {
    pub chains: Vec<Vec<Coin>>,
    pub word: PolymerWord,
}

impl PolymerModel {
    pub fn new(chains: Vec<Vec<Coin>>, word: PolymerWord) -> Result<PolymerModel> {
        if chains.len() < 2 {
            return Err(Error::BadArgument(format!(
                "polymer model needs at least 2 chains, got {}",
                chains.len()
            )));
        }
        if chains.iter().any(|c| c.is_empty()) {
            return Err(Error::BadArgument("empty polymer chain".into()));
        }
        if let PolymerWord::Periodic(pat) = &word {
            if pat.is_empty() {
                return Err(Error::BadArgument("empty periodic chain word".into()));
            }
            if let Some(&bad) = pat.iter().find(|&&i| i >= chains.len()) {
                return Err(Error::BadArgument(format!(
                    "chain index {bad} out of range (have {} chains)",
                    chains.len()
                )));
            }
        }
        Ok(PolymerModel { chains, word })
    }

    /// Coins at positions [lo, hi], materialized by walking blocks outward
    /// from the origin.
    pub fn coins(&self, lo: i64, hi: i64) -> Vec<Coin> {
        assert!(lo <= hi);
        let mut out = Vec::with_capacity((hi - lo + 1) as usize);
        // right side including block 0
        let mut pos = 0i64;
        let mut block = 0i64;
        while pos <= hi {
            let chain = &self.chains[self.word.index_at(block, self.chains.len())];
            for (j, coin) in chain.iter().enumerate() {
                let p = pos + j as i64;
                if p >= lo && p <= hi {
                    out.push((p, *coin));
                }
            }
            pos += chain.len() as i64;
            block += 1;
        }
        // left side
        let mut end = 0i64; // exclusive end of the block being placed
        let mut block = -1i64;
        while end > lo {
            let chain = &self.chains[self.word.index_at(block, self.chains.len())];
            let start = end - chain.len() as i64;
            for (j, coin) in chain.iter().enumerate() {
                let p = start + j as i64;
                if p >= lo && p <= hi {
                    out.push((p, *coin));
                }
            }
            end = start;
            block -= 1;
        }
        out.sort_by_key(|(p, _)| *p);
        debug_assert_eq!(out.len() as i64, hi - lo + 1);
        out.into_iter().map(|(_, c)| c).collect()
    }
}

/// Verblunsky pairs (α_{2n} = 0, α_{2n+1}) generated by one chain considered
/// in isolation, with the diagonal-phase gauge anchored to λ_{−1} = λ_0 = 1
/// at the chain start.
pub fn chain_alphas(chain: &[Coin]) -> Result<AlphaWindow> {
    let mut alphas = Vec::with_capacity(2 * chain.len());
    let mut lam_even = c64(1.0, 0.0); // λ_{2n}
    let mut lam_odd = c64(1.0, 0.0); // λ_{2n−1}
    for (n, coin) in chain.iter().enumerate() {
        let (w1, w2) = coin.phases();
        let next_even = lam_even * w1; // λ_{2n+2}
        let next_odd = lam_odd * w2.conj(); // λ_{2n+1}
        let a = lam_odd / lam_even * coin.q.c.conj();
        let b = -next_odd / next_even * coin.q.b;
        if (a - b).norm() > CGMV_AGREEMENT_TOL {
            return Err(Error::Invariant(format!(
                "coin-to-α formulas disagree at chain position {n}: {:.3e}",
                (a - b).norm()
            )));
        }
        alphas.push(c64(0.0, 0.0));
        alphas.push(a);
        lam_even = next_even;
        lam_odd = next_odd;
    }
    Ok(AlphaWindow { offset: 0, alphas })
}

/// One basic chain's transfer data at a fixed spectral parameter.
#[derive(Clone, Debug)]
pub struct ChainTransfer {
    pub transfer: Mat2,
    pub trace: C64,
}

/// Szegő transfer matrix across each basic chain, its trace, and the largest
/// pairwise commutator norm ‖T_j T_k − T_k T_j‖.
#[derive(Clone, Debug)]
pub struct PolymerTransferReport {
    pub z: C64,
    pub chains: Vec<ChainTransfer>,
    pub commutator_defect: f64,
}

pub fn polymer_transfer_traces(model: &PolymerModel, z: C64) -> Result<PolymerTransferReport> {
    if z.norm() == 0.0 {
        return Err(Error::BadArgument(
            "transfer matrices need a nonzero spectral parameter".into(),
        ));
    }
    let mut chains = Vec::with_capacity(model.chains.len());
    for chain in &model.chains {
        let aw = chain_alphas(chain)?;
        let t = transfer(&aw, CocycleKind::Szego, aw.end(), 0, z);
        let trace = t.trace();
        chains.push(ChainTransfer { transfer: t, trace });
    }
    let mut defect = 0.0f64;
    for j in 0..chains.len() {
        for k in (j + 1)..chains.len() {
            let tj = &chains[j].transfer;
            let tk = &chains[k].transfer;
            defect = defect.max(tj.mul(tk).sub(&tk.mul(tj)).norm_spec());
        }
    }
    Ok(PolymerTransferReport {
        z,
        chains,
        commutator_defect: defect,
    })
}

/// Which criticality condition failed, with its witness.
#[derive(Clone, Debug, PartialEq)]
pub enum CriticalityFailure {
    /// |tr T_j| > 2 + tol.
    TraceBound { chain: usize, trace_abs: f64 },
    /// ‖T_j T_k − T_k T_j‖ > tol.
    Commutation { chains: (usize, usize), defect: f64 },
    /// ||tr T_j| − 2| ≤ tol but T_j is not within tol of ±I.
    Tangency { chain: usize, defect: f64 },
}

#[derive(Clone, Debug)]
pub struct CriticalityReport {
    pub z: C64,
    pub tol: f64,
    pub critical: bool,
    pub traces: Vec<C64>,
    pub commutator_defect: f64,
    pub failures: Vec<CriticalityFailure>,
}

/// A unit-circle spectral parameter is critical for the polymer model when
/// (1) every chain transfer has |trace| ≤ 2 + tol, (2) all chain transfers
/// commute to within tol, and (3) any chain whose |trace| lies within tol of
/// 2 is itself within tol of +I or −I. At such a point the transfer cocycle
/// over arbitrary chain concatenations stays uniformly bounded.
pub fn is_critical(model: &PolymerModel, z: C64, tol: f64) -> Result<CriticalityReport> {
    if (z.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::BadArgument(format!(
            "criticality is defined for |z| = 1, got |z| = {}",
            z.norm()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::BadArgument("tolerance must be positive".into()));
    }
    let report = polymer_transfer_traces(model, z)?;
    let mut failures = Vec::new();
    for (j, ct) in report.chains.iter().enumerate() {
        let ta = ct.trace.norm();
        if ta > 2.0 + tol {
            failures.push(CriticalityFailure::TraceBound {
                chain: j,
                trace_abs: ta,
            });
        }
    }
    for j in 0..report.chains.len() {
        for k in (j + 1)..report.chains.len() {
            let tj = &report.chains[j].transfer;
            let tk = &report.chains[k].transfer;
            let d = tj.mul(tk).sub(&tk.mul(tj)).norm_spec();
            if d > tol {
                failures.push(CriticalityFailure::Commutation {
                    chains: (j, k),
                    defect: d,
                });
            }
        }
    }
    let id = Mat2::identity();
    let neg_id = id.scale(c64(-1.0, 0.0));
    for (j, ct) in report.chains.iter().enumerate() {
        if (ct.trace.norm() - 2.0).abs() <= tol {
            let d = ct
                .transfer
                .sub(&id)
                .norm_spec()
                .min(ct.transfer.sub(&neg_id).norm_spec());
            if d > tol {
                failures.push(CriticalityFailure::Tangency { chain: j, defect: d });
            }
        }
    }
    Ok(CriticalityReport {
        z,
        tol,
        critical: failures.is_empty(),
        traces: report.chains.iter().map(|c| c.trace).collect(),
        commutator_defect: report.commutator_defect,
        failures,
    })
}
