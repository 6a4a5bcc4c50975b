//! Verblunsky coefficients of a coin walk. A coin q_n with polar data
//! r_n = |q11| = |q22|, ω¹_n = q11/r_n, ω²_n = q22/r_n determines, through the
//! gauge sequence
//!     λ_{2n+2} = ω¹_n λ_{2n},   λ_{2n+1} = conj(ω²_n) λ_{2n−1},
//! anchored at λ_{−1} = λ_0 = 1, the coefficients
//!     α_{2n} = 0,   α_{2n+1} = (λ_{2n−1}/λ_{2n}) conj(q21_n)
//!                            = −(λ_{2n+1}/λ_{2n+2}) q12_n,
//! the two expressions for α_{2n+1} agreeing identically by unitarity.
//! Rotation coins have trivial gauge and α_{2n+1} = sin θ_n.

use crate::coin::{fibonacci_letter, thue_morse_letter, Coin, Letter, PolymerModel};
use crate::error::{Error, Result};
use crate::mat2::{c64, C64};

pub const CGMV_AGREEMENT_TOL: f64 = 1e-12;

pub fn rho(alpha: C64) -> f64 {
    (1.0 - alpha.norm_sqr()).max(0.0).sqrt()
}

/// α_j for j in [offset, offset + alphas.len()).
#[derive(Clone, Debug)]
pub struct AlphaWindow {
    pub offset: i64,
    pub alphas: Vec<C64>,
}

impl AlphaWindow {
    pub fn get(&self, j: i64) -> C64 {
        let idx = j - self.offset;
        assert!(
            idx >= 0 && (idx as usize) < self.alphas.len(),
            "alpha index {j} outside window [{}, {})",
            self.offset,
            self.offset + self.alphas.len() as i64
        );
        self.alphas[idx as usize]
    }

    pub fn end(&self) -> i64 {
        self.offset + self.alphas.len() as i64
    }
}

/// Unimodular anchors for the gauge recursion: (λ_0, λ_{−1}).
#[derive(Clone, Copy, Debug)]
pub struct GaugeAnchor {
    pub even: C64,
    pub odd: C64,
}

impl Default for GaugeAnchor {
    fn default() -> Self {
        GaugeAnchor {
            even: c64(1.0, 0.0),
            odd: c64(1.0, 0.0),
        }
    }
}

impl GaugeAnchor {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("even", self.even), ("odd", self.odd)] {
            if (v.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::BadArgument(format!(
                    "gauge anchor ({name}) must be unimodular, |λ| = {}",
                    v.norm()
                )));
            }
        }
        Ok(())
    }
}

/// λ_j over [offset, offset+len), built by running the recursion outward from
/// the anchors; `coin_at` supplies coin n for any n the walk touches.
pub struct GaugeWindow {
    pub offset: i64,
    pub lambdas: Vec<C64>,
}

impl GaugeWindow {
    pub fn build(
        anchor: GaugeAnchor,
        lo: i64,
        hi: i64,
        coin_at: &dyn Fn(i64) -> Coin,
    ) -> GaugeWindow {
        assert!(lo <= hi);
        // even chain: λ_{2n}, with λ_0 anchored
        // odd chain: λ_{2n+1}, with λ_{−1} anchored
        let len = (hi - lo + 1) as usize;
        let mut lambdas = vec![c64(0.0, 0.0); len];
        let idx = |j: i64| (j - lo) as usize;

        let n_hi = hi.div_euclid(2);
        let n_lo = lo.div_euclid(2);

        // forward from the anchors
        let mut even = anchor.even; // λ_{2n} starting at n = 0
        if 0 >= lo && 0 <= hi {
            lambdas[idx(0)] = even;
        }
        for n in 0..=n_hi {
            let (w1, _) = coin_at(n).phases();
            even *= w1; // λ_{2n+2}
            let j = 2 * (n + 1);
            if j >= lo && j <= hi {
                lambdas[idx(j)] = even;
            }
        }
        let mut even = anchor.even;
        for n in (n_lo..0).rev() {
            let (w1, _) = coin_at(n).phases();
            even /= w1; // λ_{2n}
            let j = 2 * n;
            if j >= lo && j <= hi {
                lambdas[idx(j)] = even;
            }
        }

        let mut odd = anchor.odd; // λ_{2n−1} starting at n = 0
        if -1 >= lo && -1 <= hi {
            lambdas[idx(-1)] = odd;
        }
        for n in 0..=n_hi {
            let (_, w2) = coin_at(n).phases();
            odd *= w2.conj(); // λ_{2n+1}
            let j = 2 * n + 1;
            if j >= lo && j <= hi {
                lambdas[idx(j)] = odd;
            }
        }
        let mut odd = anchor.odd;
        for n in (n_lo..0).rev() {
            let (_, w2) = coin_at(n).phases();
            odd /= w2.conj(); // λ_{2n−1}
            let j = 2 * n - 1;
            if j >= lo && j <= hi {
                lambdas[idx(j)] = odd;
            }
        }

        GaugeWindow { offset: lo, lambdas }
    }

    pub fn get(&self, j: i64) -> C64 {
        let idx = j - self.offset;
        assert!(idx >= 0 && (idx as usize) < self.lambdas.len());
        self.lambdas[idx as usize]
    }
}

/// The walk models whose α sequences this crate handles.
#[derive(Clone, Debug)]
pub enum CoinModel {
    /// coin n = coins[n mod p]
    Periodic { coins: Vec<Coin> },
    /// rotation coins by the two-sided Fibonacci word; a ↦ θ_a, b ↦ θ_b
    Fibonacci { theta_a: f64, theta_b: f64 },
    /// rotation coins by the two-sided Thue–Morse word
    ThueMorse { theta_a: f64, theta_b: f64 },
    Polymer(PolymerModel),
    /// α_j = alphas[j mod len] directly, bypassing coins
    ExplicitAlphas { alphas: Vec<C64> },
}

impl CoinModel {
    pub fn free() -> CoinModel {
        CoinModel::ExplicitAlphas {
            alphas: vec![c64(0.0, 0.0)],
        }
    }

    pub fn fibonacci(theta_a: f64, theta_b: f64) -> Result<CoinModel> {
        Coin::rotation(theta_a)?;
        Coin::rotation(theta_b)?;
        Ok(CoinModel::Fibonacci { theta_a, theta_b })
    }

    pub fn thue_morse(theta_a: f64, theta_b: f64) -> Result<CoinModel> {
        Coin::rotation(theta_a)?;
        Coin::rotation(theta_b)?;
        Ok(CoinModel::ThueMorse { theta_a, theta_b })
    }

    pub fn explicit_alphas(alphas: Vec<C64>) -> Result<CoinModel> {
        if alphas.is_empty() {
            return Err(Error::BadArgument("empty alpha list".into()));
        }
        if let Some(a) = alphas.iter().find(|a| a.norm() >= 1.0) {
            return Err(Error::BadArgument(format!(
                "alpha outside the open unit disk: |α| = {}",
                a.norm()
            )));
        }
        Ok(CoinModel::ExplicitAlphas { alphas })
    }

    fn rotation_for(theta_a: f64, theta_b: f64, l: Letter) -> Coin {
        let theta = match l {
            Letter::A => theta_a,
            Letter::B => theta_b,
        };
        Coin::rotation(theta).expect("validated at model construction")
    }

    /// Coin at position n (coin-based models only).
    pub fn coin_at(&self, n: i64) -> Option<Coin> {
        match self {
            CoinModel::Periodic { coins } => {
                Some(coins[n.rem_euclid(coins.len() as i64) as usize])
            }
            CoinModel::Fibonacci { theta_a, theta_b } => Some(Self::rotation_for(
                *theta_a,
                *theta_b,
                fibonacci_letter(n),
            )),
            CoinModel::ThueMorse { theta_a, theta_b } => Some(Self::rotation_for(
                *theta_a,
                *theta_b,
                thue_morse_letter(n),
            )),
            CoinModel::Polymer(p) => Some(p.coins(n, n)[0]),
            CoinModel::ExplicitAlphas { .. } => None,
        }
    }

    /// Materialize α over [lo, hi] with the default gauge anchor.
    pub fn alphas(&self, lo: i64, hi: i64) -> Result<AlphaWindow> {
        self.alphas_with_anchor(lo, hi, GaugeAnchor::default())
    }

    pub fn alphas_with_anchor(
        &self,
        lo: i64,
        hi: i64,
        anchor: GaugeAnchor,
    ) -> Result<AlphaWindow> {
        assert!(lo <= hi);
        anchor.validate()?;
        if let CoinModel::ExplicitAlphas { alphas } = self {
            let p = alphas.len() as i64;
            let v = (lo..=hi).map(|j| alphas[j.rem_euclid(p) as usize]).collect();
            return Ok(AlphaWindow {
                offset: lo,
                alphas: v,
            });
        }

        // coin range needed: α_{2n+1} for 2n+1 in [lo−?, hi] plus the gauge walk
        let coin_lo = (lo - 3).div_euclid(2).min(-1);
        let coin_hi = (hi + 3).div_euclid(2).max(1);
        let coins: Vec<Coin> = match self {
            CoinModel::Polymer(p) => p.coins(coin_lo, coin_hi),
            _ => (coin_lo..=coin_hi)
                .map(|n| self.coin_at(n).expect("coin-based model"))
                .collect(),
        };
        let coin_at = |n: i64| -> Coin {
            assert!(n >= coin_lo && n <= coin_hi);
            coins[(n - coin_lo) as usize]
        };
        let gauge = GaugeWindow::build(anchor, lo - 3, hi + 3, &coin_at);

        let mut v = Vec::with_capacity((hi - lo + 1) as usize);
        for j in lo..=hi {
            if j.rem_euclid(2) == 0 {
                v.push(c64(0.0, 0.0));
            } else {
                let n = (j - 1) / 2; // exact: j − 1 is even
                let q = coin_at(n).q;
                let a1 = gauge.get(2 * n - 1) / gauge.get(2 * n) * q.c.conj();
                let a2 = -gauge.get(2 * n + 1) / gauge.get(2 * n + 2) * q.b;
                if (a1 - a2).norm() > CGMV_AGREEMENT_TOL {
                    return Err(Error::Invariant(format!(
                        "coin-to-α formulas disagree at coin {n}: {:.3e}",
                        (a1 - a2).norm()
                    )));
                }
                if a1.norm() >= 1.0 {
                    return Err(Error::Invariant(format!(
                        "|α_{{2n+1}}| ≥ 1 at coin {n}"
                    )));
                }
                v.push(a1);
            }
        }
        Ok(AlphaWindow {
            offset: lo,
            alphas: v,
        })
    }
}
