//! Trace-map dynamics for the Fibonacci and Thue–Morse coin sequences.
//!
//! For rotation coins R_θ the two-step transfer matrix over one coin is
//!   A(θ, z) = (1/cos θ) [[z, −sin θ], [−sin θ, 1/z]],
//! and the level-k monodromies are products of A's along the substitution
//! word. Fibonacci half-traces x_k = ½ tr M_k obey
//!   x_{k+2} = 2 x_{k+1} x_k − x_{k−1},
//! with the Fricke–Vogt invariant I(x_{k+1}, x_k, x_{k−1}) conserved;
//! Thue–Morse full traces t_n obey t_{n+1} = t_{n−1}² (t_n − 2) + 2 from
//! n = 2 on. On |z| = 1 all traces are real; they are computed in complex
//! arithmetic from the closed-form initials and the imaginary parts are
//! asserted small rather than assumed zero. Once |x| exceeds `LOG_SWITCH`
//! the orbit continues in (log|x|, sign) form, so escaping orbits can be
//! followed far past f64 range.

use crate::cocycle::{transfer, CocycleKind};
use crate::error::{Error, Result};
use crate::mat2::{c64, C64, Mat2};
use crate::verblunsky::CoinModel;
use std::f64::consts::{LN_2, TAU};

/// Golden ratio (1+√5)/2.
pub const PHI: f64 = 1.618033988749895;

/// Orbit values switch from plain f64 to (log|x|, sign) storage past this.
pub const LOG_SWITCH: f64 = 1e50;

/// Largest tolerated imaginary part of a trace on |z| = 1.
pub const TRACE_REALNESS_TOL: f64 = 1e-10;

/// Band endpoints are bisected to this θ resolution.
pub const BAND_EDGE_TOL: f64 = 1e-10;

/// Fibonacci numbers with F_{−1} = F_0 = 1, F_1 = 2, F_2 = 3, ...
pub fn fib_u64(k: i64) -> u64 {
    assert!(k >= -1, "fib_u64 defined for k >= -1");
    let (mut a, mut b) = (1u64, 1u64);
    for _ in 0..(k + 1) {
        let c = a.checked_add(b).expect("Fibonacci overflow in u64");
        a = b;
        b = c;
    }
    a
}

/// F_k as f64; saturates to +∞ instead of overflowing.
pub fn fib_f64(k: i64) -> f64 {
    assert!(k >= -1);
    let (mut a, mut b) = (1f64, 1f64);
    for _ in 0..(k + 1) {
        let c = a + b;
        a = b;
        b = c;
    }
    a
}

fn check_angle(name: &str, theta: f64) -> Result<f64> {
    let c = theta.cos();
    if c.abs() < 1e-12 {
        return Err(Error::DegenerateCoin(format!(
            "{name} = {theta} has |cos| < 1e-12; rotation coin loses its band structure"
        )));
    }
    Ok(c)
}

fn assert_real(label: &str, v: C64) -> Result<f64> {
    if v.im.abs() > TRACE_REALNESS_TOL {
        return Err(Error::Invariant(format!(
            "{label} has imaginary part {:.3e} on |z| = 1",
            v.im
        )));
    }
    Ok(v.re)
}

/// Half-traces (x_{−1}, x_0, x_1) of the Fibonacci monodromies at z = e^{iθ}:
///   x_{−1} = Re(z) sec θ_b,
///   x_0  = Re(z) sec θ_a,
///   x_1  = Re(z²) sec θ_a sec θ_b + tan θ_a tan θ_b.
/// Computed from the complex forms ½(z + 1/z), ½(z² + z^{−2}); the imaginary
/// parts must vanish to `TRACE_REALNESS_TOL`.
pub fn fib_initial_traces(theta_a: f64, theta_b: f64, theta: f64) -> Result<(f64, f64, f64)> {
    let ca = check_angle("theta_a", theta_a)?;
    let cb = check_angle("theta_b", theta_b)?;
    let z = C64::from_polar(1.0, theta);
    let zeta = (z + z.inv()) * 0.5;
    let zeta2 = (z * z + (z * z).inv()) * 0.5;
    let xm1 = assert_real("x_{-1}", zeta / cb)?;
    let x0 = assert_real("x_0", zeta / ca)?;
    let x1 = assert_real(
        "x_1",
        zeta2 / (ca * cb) + c64(theta_a.tan() * theta_b.tan(), 0.0),
    )?;
    Ok((xm1, x0, x1))
}

/// Full traces (t_{−1}, t_0, t_1, t_2) of the Thue–Morse monodromies at
/// z = e^{iθ}. t_2 comes from the explicit level-2 word abba:
///   t_2 = [2 Re(z⁴) + 2(s_a + s_b)² Re(z²) + 2 s_a² s_b² + 4 s_a s_b] sec²θ_a sec²θ_b.
pub fn tm_initial_traces(theta_a: f64, theta_b: f64, theta: f64) -> Result<(f64, f64, f64, f64)> {
    let ca = check_angle("theta_a", theta_a)?;
    let cb = check_angle("theta_b", theta_b)?;
    let (sa, sb) = (theta_a.sin(), theta_b.sin());
    let two_cos = |m: f64| {
        let zm = C64::from_polar(1.0, m * theta);
        zm + zm.inv()
    };
    let tm1 = assert_real("t_{-1}", two_cos(1.0) / cb)?;
    let t0 = assert_real("t_0", two_cos(1.0) / ca)?;
    let t1 = assert_real(
        "t_1",
        two_cos(2.0) / (ca * cb) + c64(2.0 * theta_a.tan() * theta_b.tan(), 0.0),
    )?;
    let t2 = assert_real(
        "t_2",
        (two_cos(4.0) + two_cos(2.0) * (sa + sb).powi(2)
            + c64(2.0 * sa * sa * sb * sb + 4.0 * sa * sb, 0.0))
            / (ca * ca * cb * cb),
    )?;
    Ok((tm1, t0, t1, t2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceModel {
    Fibonacci,
    ThueMorse,
}

impl TraceModel {
    /// |trace| threshold delimiting the level-k band set.
    pub fn band_threshold(self) -> f64 {
        match self {
            TraceModel::Fibonacci => 1.0,
            TraceModel::ThueMorse => 2.0,
        }
    }

    /// Expected band count 2F_k (Fibonacci) resp. grid hint 2^{k+1} (Thue–Morse).
    pub fn band_hint(self, level: i64) -> u64 {
        match self {
            TraceModel::Fibonacci => 2 * fib_u64(level),
            TraceModel::ThueMorse => 1u64 << (level + 1).clamp(0, 62),
        }
    }
}

/// First index k₀ at which the escape test fired, with the δ it was run at.
#[derive(Clone, Copy, Debug)]
pub struct Escape {
    pub k0: i64,
    pub delta: f64,
}

/// A trace orbit from level −1 up. `plain[i]` holds x_{i−1} while
/// |x| ≤ `LOG_SWITCH` (NaN afterwards); `ln_abs`/`sign` always hold
/// log|x_{i−1}| and sign(x_{i−1}) and remain exact through overflow.
#[derive(Clone, Debug)]
pub struct TraceOrbit {
    pub model: TraceModel,
    pub theta_a: f64,
    pub theta_b: f64,
    /// z = e^{iθ}.
    pub theta: f64,
    pub plain: Vec<f64>,
    pub ln_abs: Vec<f64>,
    pub sign: Vec<f64>,
    pub escape: Option<Escape>,
    /// True if the orbit stopped early because log|x| itself left f64 range.
    pub truncated: bool,
}

impl TraceOrbit {
    /// Highest level stored.
    pub fn max_level(&self) -> i64 {
        self.plain.len() as i64 - 2
    }

    fn idx(&self, k: i64) -> usize {
        assert!(k >= -1 && k <= self.max_level(), "level {k} not stored");
        (k + 1) as usize
    }

    /// x_k as plain f64, if it is still representable below `LOG_SWITCH`.
    pub fn value(&self, k: i64) -> Option<f64> {
        let v = self.plain[self.idx(k)];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    pub fn ln_abs(&self, k: i64) -> f64 {
        self.ln_abs[self.idx(k)]
    }

    pub fn sign(&self, k: i64) -> f64 {
        self.sign[self.idx(k)]
    }

    /// sign(x_k)·e^{log|x_k|} clamped to f64 range; exact while plain,
    /// order- and sign-faithful afterwards.
    pub fn saturated(&self, k: i64) -> f64 {
        if let Some(v) = self.value(k) {
            return v;
        }
        self.sign(k) * self.ln_abs(k).min(700.0).exp()
    }
}

fn push_value(orbit: &mut TraceOrbit, v: f64) {
    debug_assert!(v.is_finite());
    orbit.plain.push(if v.abs() <= LOG_SWITCH { v } else { f64::NAN });
    orbit.ln_abs.push(v.abs().ln());
    orbit.sign.push(if v == 0.0 { 0.0 } else { v.signum() });
}

fn push_log(orbit: &mut TraceOrbit, l: f64, s: f64) {
    if l <= LOG_SWITCH.ln() {
        orbit.plain.push(s * l.exp());
    } else {
        orbit.plain.push(f64::NAN);
    }
    orbit.ln_abs.push(l);
    orbit.sign.push(s);
}

/// One Fibonacci step x_new = 2·x2·x1 − x0 in (log, sign) form.
fn fib_step_log(l2: f64, s2: f64, l1: f64, s1: f64, l0: f64, s0: f64) -> (f64, f64) {
    if s2 == 0.0 || s1 == 0.0 {
        return (l0, -s0);
    }
    if s0 == 0.0 {
        return (LN_2 + l2 + l1, s2 * s1);
    }
    let lp = LN_2 + l2 + l1;
    let lr = l0 - lp;
    let sr = s0 * s2 * s1;
    if lr < -36.0 {
        ((-sr * lr.exp()).ln_1p() + lp, s2 * s1)
    } else if lr > 36.0 {
        (l0, -s0)
    } else {
        let v = 1.0 - sr * lr.exp();
        if v == 0.0 {
            (f64::NEG_INFINITY, 0.0)
        } else {
            (lp + v.abs().ln(), s2 * s1 * v.signum())
        }
    }
}

/// One Thue–Morse step t_new = t0²·(t1 − 2) + 2 in (log, sign) form, where
/// t1 is the newer value. Valid inputs may mix plain and overflowed scales.
fn tm_step_log(l1: f64, s1: f64, p1: f64, l0: f64, s0: f64) -> (f64, f64) {
    if s0 == 0.0 {
        return (LN_2, 1.0);
    }
    // ln|t1 − 2|, sign(t1 − 2)
    let (ld, sd) = if !p1.is_nan() {
        let d = p1 - 2.0;
        if d == 0.0 {
            return (LN_2, 1.0);
        }
        (d.abs().ln(), d.signum())
    } else {
        // |t1| > LOG_SWITCH, so t1 − 2 = t1·(1 + O(1e−50)).
        (l1, s1)
    };
    let la = 2.0 * l0 + ld;
    let sa = sd;
    if la > 36.0 {
        return (la + (2.0 * sa * (-la).exp()).ln_1p(), sa);
    }
    if la < 600.0 {
        let v = sa * la.exp() + 2.0;
        if v == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        return (v.abs().ln(), v.signum());
    }
    (la, sa)
}

fn detect_escape(orbit: &TraceOrbit, delta: f64) -> Option<Escape> {
    let ln_thr = (1.0 + delta).ln();
    for k0 in 0..orbit.max_level() {
        if orbit.ln_abs(k0) > ln_thr
            && orbit.ln_abs(k0 + 1) > ln_thr
            && orbit.ln_abs(k0 + 1) > orbit.ln_abs(k0 - 1)
        {
            return Some(Escape { k0, delta });
        }
    }
    None
}

fn run_orbit(
    model: TraceModel,
    theta_a: f64,
    theta_b: f64,
    theta: f64,
    k_max: i64,
    escape_delta: Option<f64>,
    log_switch: f64,
) -> Result<TraceOrbit> {
    let mut orbit = TraceOrbit {
        model,
        theta_a,
        theta_b,
        theta,
        plain: Vec::with_capacity((k_max + 2).max(2) as usize),
        ln_abs: Vec::with_capacity((k_max + 2).max(2) as usize),
        sign: Vec::with_capacity((k_max + 2).max(2) as usize),
        escape: None,
        truncated: false,
    };
    match model {
        TraceModel::Fibonacci => {
            let (xm1, x0, x1) = fib_initial_traces(theta_a, theta_b, theta)?;
            for v in [xm1, x0, x1] {
                push_value(&mut orbit, v);
            }
        }
        TraceModel::ThueMorse => {
            let (tm1, t0, t1, t2) = tm_initial_traces(theta_a, theta_b, theta)?;
            for v in [tm1, t0, t1, t2] {
                push_value(&mut orbit, v);
            }
        }
    }
    while orbit.max_level() < k_max {
        let top = orbit.plain.len() - 1;
        let next = match model {
            TraceModel::Fibonacci => {
                let (p2, p1, p0) = (orbit.plain[top], orbit.plain[top - 1], orbit.plain[top - 2]);
                if p2.is_nan() || p1.is_nan() || p0.is_nan()
                    || p2.abs() > log_switch || p1.abs() > log_switch || p0.abs() > log_switch
                {
                    Err(fib_step_log(
                        orbit.ln_abs[top],
                        orbit.sign[top],
                        orbit.ln_abs[top - 1],
                        orbit.sign[top - 1],
                        orbit.ln_abs[top - 2],
                        orbit.sign[top - 2],
                    ))
                } else {
                    Ok(2.0 * p2 * p1 - p0)
                }
            }
            TraceModel::ThueMorse => {
                let (p1, p0) = (orbit.plain[top], orbit.plain[top - 1]);
                if p1.is_nan() || p0.is_nan() || p1.abs() > log_switch || p0.abs() > log_switch {
                    Err(tm_step_log(
                        orbit.ln_abs[top],
                        orbit.sign[top],
                        orbit.plain[top],
                        orbit.ln_abs[top - 1],
                        orbit.sign[top - 1],
                    ))
                } else {
                    Ok(p0 * p0 * (p1 - 2.0) + 2.0)
                }
            }
        };
        match next {
            Ok(v) => push_value(&mut orbit, v),
            Err((l, s)) => {
                if !l.is_finite() && l > 0.0 {
                    orbit.truncated = true;
                    break;
                }
                push_log(&mut orbit, l, s);
            }
        }
        if *orbit.ln_abs.last().unwrap() > 1e300 {
            orbit.truncated = true;
            break;
        }
    }
    if let Some(delta) = escape_delta {
        if delta <= 0.0 {
            return Err(Error::BadArgument(format!("escape delta {delta} must be > 0")));
        }
        orbit.escape = detect_escape(&orbit, delta);
    }
    Ok(orbit)
}

/// Fibonacci half-trace orbit x_{−1..k_max} at z = e^{iθ}, with escape
/// detection at threshold 1 + δ: the first k₀ with |x_{k₀}| > 1+δ,
/// |x_{k₀+1}| > 1+δ and |x_{k₀+1}| > |x_{k₀−1}| is recorded.
pub fn fib_orbit(
    theta_a: f64,
    theta_b: f64,
    theta: f64,
    k_max: i64,
    escape_delta: f64,
) -> Result<TraceOrbit> {
    if k_max < 1 {
        return Err(Error::BadArgument(format!("k_max {k_max} must be >= 1")));
    }
    run_orbit(
        TraceModel::Fibonacci,
        theta_a,
        theta_b,
        theta,
        k_max,
        Some(escape_delta),
        LOG_SWITCH,
    )
}

/// Thue–Morse full-trace orbit t_{−1..n_max} at z = e^{iθ}. The recursion
/// starts producing t_3; t_2 comes from the explicit level-2 monodromy.
pub fn tm_orbit(theta_a: f64, theta_b: f64, theta: f64, n_max: i64) -> Result<TraceOrbit> {
    if n_max < 2 {
        return Err(Error::BadArgument(format!("n_max {n_max} must be >= 2")));
    }
    run_orbit(
        TraceModel::ThueMorse,
        theta_a,
        theta_b,
        theta,
        n_max,
        None,
        LOG_SWITCH,
    )
}

/// Fricke–Vogt invariant I(u, v, w) = u² + v² + w² − 2uvw − 1.
pub fn fricke_vogt(u: f64, v: f64, w: f64) -> f64 {
    u * u + v * v + w * w - 2.0 * u * v * w - 1.0
}

/// κ = |sec θ_a sec θ_b (sin θ_a − sin θ_b)|.
pub fn kappa(theta_a: f64, theta_b: f64) -> Result<f64> {
    let ca = check_angle("theta_a", theta_a)?;
    let cb = check_angle("theta_b", theta_b)?;
    Ok(((theta_a.sin() - theta_b.sin()) / (ca * cb)).abs())
}

/// Closed form of the invariant on the Fibonacci orbit at z = e^{iθ}:
/// I = κ² sin²θ, independent of the level.
pub fn invariant_closed_form(theta_a: f64, theta_b: f64, theta: f64) -> Result<f64> {
    let k = kappa(theta_a, theta_b)?;
    Ok(k * k * theta.sin().powi(2))
}

/// Max deviation of I(x_{k+1}, x_k, x_{k−1}) from its k = 0 value over the
/// stored orbit, restricted to triples with all entries plain and ≤ 10^12 in
/// magnitude. The deviation is measured relative to the size of the terms
/// being cancelled, max(1, |2uvw|), since that is the precision the f64
/// evaluation of I can support once values grow.
pub fn orbit_invariant_drift(orbit: &TraceOrbit) -> f64 {
    let mut reference = None;
    let mut worst = 0.0f64;
    for k in 0..orbit.max_level() {
        let (a, b, c) = match (orbit.value(k + 1), orbit.value(k), orbit.value(k - 1)) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => break,
        };
        if a.abs() > 1e12 || b.abs() > 1e12 || c.abs() > 1e12 {
            break;
        }
        let i = fricke_vogt(a, b, c);
        let scale = (2.0 * a * b * c).abs().max(1.0);
        match reference {
            None => reference = Some(i),
            Some(i0) => worst = worst.max((i - i0).abs() / scale),
        }
    }
    worst
}

/// Largest violation of the escape growth bound
/// log|x_{k₀+j}| ≥ F_{j−1}·log(1 + δ/2) over all stored j ≥ 1,
/// as max(bound − log|x|); ≤ 0 means the bound holds. None without escape.
pub fn escape_growth_defect(orbit: &TraceOrbit) -> Option<f64> {
    let esc = orbit.escape?;
    let rate = (1.0 + esc.delta / 2.0).ln();
    let mut worst = f64::NEG_INFINITY;
    let mut j = 1i64;
    while esc.k0 + j <= orbit.max_level() {
        let bound = fib_f64(j - 1) * rate;
        if !bound.is_finite() {
            break;
        }
        worst = worst.max(bound - orbit.ln_abs(esc.k0 + j));
        j += 1;
    }
    if worst.is_finite() {
        Some(worst)
    } else {
        None
    }
}

/// Trace orbits together with dx_k/dθ, in plain f64 only. The derivative
/// recursions are
///   x'_{k+2} = 2(x'_{k+1} x_k + x_{k+1} x'_k) − x'_{k−1},
///   t'_{n+1} = 2 t_{n−1} t'_{n−1} (t_n − 2) + t_{n−1}² t'_n,
/// with initials differentiated from the closed forms. Errors out if any
/// value or derivative leaves ±10^300; intended for band-scale levels.
pub fn orbit_with_derivative(
    model: TraceModel,
    theta_a: f64,
    theta_b: f64,
    theta: f64,
    k_max: i64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let seca = 1.0 / check_angle("theta_a", theta_a)?;
    let secb = 1.0 / check_angle("theta_b", theta_b)?;
    let (mut xs, mut ds): (Vec<f64>, Vec<f64>) = match model {
        TraceModel::Fibonacci => {
            let (xm1, x0, x1) = fib_initial_traces(theta_a, theta_b, theta)?;
            (
                vec![xm1, x0, x1],
                vec![
                    -theta.sin() * secb,
                    -theta.sin() * seca,
                    -2.0 * (2.0 * theta).sin() * seca * secb,
                ],
            )
        }
        TraceModel::ThueMorse => {
            let (tm1, t0, t1, t2) = tm_initial_traces(theta_a, theta_b, theta)?;
            let (sa, sb) = (theta_a.sin(), theta_b.sin());
            (
                vec![tm1, t0, t1, t2],
                vec![
                    -2.0 * theta.sin() * secb,
                    -2.0 * theta.sin() * seca,
                    -4.0 * (2.0 * theta).sin() * seca * secb,
                    (-8.0 * (4.0 * theta).sin()
                        - 4.0 * (sa + sb).powi(2) * (2.0 * theta).sin())
                        * seca
                        * seca
                        * secb
                        * secb,
                ],
            )
        }
    };
    while (xs.len() as i64) - 2 < k_max {
        let t = xs.len() - 1;
        let (x, d) = match model {
            TraceModel::Fibonacci => (
                2.0 * xs[t] * xs[t - 1] - xs[t - 2],
                2.0 * (ds[t] * xs[t - 1] + xs[t] * ds[t - 1]) - ds[t - 2],
            ),
            TraceModel::ThueMorse => (
                xs[t - 1] * xs[t - 1] * (xs[t] - 2.0) + 2.0,
                2.0 * xs[t - 1] * ds[t - 1] * (xs[t] - 2.0) + xs[t - 1] * xs[t - 1] * ds[t],
            ),
        };
        if x.abs() > 1e300 || d.abs() > 1e300 {
            return Err(Error::Numerical(format!(
                "derivative orbit left f64 range at level {}",
                xs.len() as i64 - 1
            )));
        }
        xs.push(x);
        ds.push(d);
    }
    Ok((xs, ds))
}

/// x_level(θ) (resp. t_level) in the saturated sign·e^{min(log|x|,700)} form.
pub fn trace_value_saturated(
    model: TraceModel,
    theta_a: f64,
    theta_b: f64,
    theta: f64,
    level: i64,
) -> Result<f64> {
    let orbit = run_orbit(model, theta_a, theta_b, theta, level, None, LOG_SWITCH)?;
    if orbit.max_level() < level {
        // Overflow truncation this deep means the point is far outside the band set.
        let k = orbit.max_level();
        return Ok(orbit.sign(k) * 700f64.exp());
    }
    Ok(orbit.saturated(level))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BandType {
    /// Contained in a band one level down.
    A,
    /// Contained in a band two levels down.
    B,
    /// Neither; only expected outside the large-coupling regime.
    Untyped,
}

/// A maximal arc {θ : |x_level(e^{iθ})| ≤ threshold}, θ_lo < θ_hi ≤ θ_lo + 2π.
#[derive(Clone, Copy, Debug)]
pub struct SpectralBand {
    pub level: i64,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub band_type: BandType,
}

impl SpectralBand {
    pub fn length(&self) -> f64 {
        self.theta_hi - self.theta_lo
    }

    /// Circular containment of `inner` in `self` with endpoint slack `tol`.
    pub fn contains(&self, inner: &SpectralBand, tol: f64) -> bool {
        for shift in [-TAU, 0.0, TAU] {
            if inner.theta_lo + shift >= self.theta_lo - tol
                && inner.theta_hi + shift <= self.theta_hi + tol
            {
                return true;
            }
        }
        false
    }
}

fn bisect_crossing<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, c: f64) -> f64 {
    let mut flo = f(lo) - c;
    while hi - lo > BAND_EDGE_TOL {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid) - c;
        if fm == 0.0 {
            return mid;
        }
        if (flo < 0.0) == (fm < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Union of circular arcs as disjoint intervals. Arcs may wrap; the output
/// is sorted, non-overlapping, and uses a negative lo for a seam-crossing
/// arc so each point of the circle is covered exactly once.
fn merge_arcs(arcs: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pieces: Vec<(f64, f64)> = Vec::new();
    for &(lo, hi) in arcs {
        let len = (hi - lo).clamp(0.0, TAU);
        if len >= TAU - 1e-12 {
            return vec![(0.0, TAU)];
        }
        let l = lo.rem_euclid(TAU);
        let h = l + len;
        if h <= TAU {
            pieces.push((l, h));
        } else {
            pieces.push((l, TAU));
            pieces.push((0.0, h - TAU));
        }
    }
    pieces.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (l, h) in pieces {
        match merged.last_mut() {
            Some(last) if l <= last.1 => last.1 = last.1.max(h),
            _ => merged.push((l, h)),
        }
    }
    if merged.len() >= 2 {
        let first = merged[0];
        let last = *merged.last().unwrap();
        if first.0 <= 1e-12 && TAU - last.1 <= 1e-12 {
            merged.remove(0);
            merged.pop();
            merged.push((last.0 - TAU, first.1));
        }
    }
    merged
}

fn arcs_cover(arcs: &[(f64, f64)], theta: f64) -> bool {
    arcs.iter().any(|&(lo, hi)| {
        let t = if theta < lo { theta + TAU } else { theta };
        t >= lo && t <= hi
    })
}

/// Sign-scan one arc with `nodes` cells, bisect every ±thr crossing, and
/// assemble the maximal inside intervals. The space between them is
/// re-sampled at 4× density; a strict interior value there is a missed band.
fn scan_arc<F: Fn(f64) -> f64>(
    f: &F,
    thr: f64,
    level: i64,
    lo: f64,
    hi: f64,
    nodes: usize,
    out: &mut Vec<SpectralBand>,
) -> Result<()> {
    let step = (hi - lo) / nodes as f64;
    let vals: Vec<f64> = (0..=nodes).map(|i| f(lo + step * i as f64)).collect();
    let mut edges: Vec<f64> = Vec::new();
    for i in 0..nodes {
        let (a, b) = (lo + step * i as f64, lo + step * (i + 1) as f64);
        for c in [thr, -thr] {
            if (vals[i] - c) * (vals[i + 1] - c) < 0.0 {
                edges.push(bisect_crossing(f, a, b, c));
            }
        }
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let mut cuts = Vec::with_capacity(edges.len() + 2);
    cuts.push(lo);
    cuts.extend(edges);
    cuts.push(hi);
    let mut outside: Vec<(f64, f64)> = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a < 1e-13 {
            continue;
        }
        if f(0.5 * (a + b)).abs() <= thr {
            out.push(SpectralBand {
                level,
                theta_lo: a,
                theta_hi: b,
                band_type: BandType::Untyped,
            });
        } else {
            outside.push((a, b));
        }
    }
    for (a, b) in outside {
        let local = (((b - a) / step).ceil() as usize) * 4 + 4;
        for i in 1..local {
            let theta = a + (b - a) * i as f64 / local as f64;
            if f(theta).abs() < thr - 1e-9 {
                return Err(Error::Numerical(format!(
                    "suspected missed band near theta = {theta:.12} at level {level}; increase grid_density"
                )));
            }
        }
    }
    Ok(())
}

/// Band sets of every level −1..=level, in order. Levels up to 1 are scanned
/// uniformly over the circle; each deeper level is scanned inside the two
/// previous levels' bands, padded by 10%, because band widths shrink
/// geometrically with the level and no affordable uniform grid resolves
/// them. A band escaping both ancestors can only occur near vanishing
/// coupling, where bands are wide; a coarse full-circle sweep seeds extra
/// scan regions for that case.
pub fn band_hierarchy(
    model: TraceModel,
    theta_a: f64,
    theta_b: f64,
    level: i64,
    grid_density: usize,
) -> Result<Vec<Vec<SpectralBand>>> {
    if level < -1 {
        return Err(Error::BadArgument(format!("level {level} must be >= -1")));
    }
    check_angle("theta_a", theta_a)?;
    check_angle("theta_b", theta_b)?;
    let thr = model.band_threshold();
    let mut all: Vec<Vec<SpectralBand>> = Vec::new();
    for lev in -1..=level {
        let f = |theta: f64| {
            trace_value_saturated(model, theta_a, theta_b, theta.rem_euclid(TAU), lev)
                .expect("angles validated above")
        };
        let global = grid_density
            .max((16 * model.band_hint(lev)).min(1 << 17) as usize)
            .max(2048);
        let arcs: Vec<(f64, f64)> = if lev <= 1 {
            vec![(0.0, TAU)]
        } else {
            let mut arcs: Vec<(f64, f64)> = all[(lev - 1) as usize]
                .iter()
                .chain(all[lev as usize].iter())
                .map(|b| {
                    let pad = 0.1 * b.length();
                    (b.theta_lo - pad, b.theta_hi + pad)
                })
                .collect();
            let covered = merge_arcs(&arcs);
            let cell = TAU / global as f64;
            for i in 0..global {
                let theta = TAU * i as f64 / global as f64;
                if !arcs_cover(&covered, theta) && f(theta).abs() <= thr {
                    arcs.push((theta - 3.0 * cell, theta + 3.0 * cell));
                }
            }
            arcs
        };
        let mut set = Vec::new();
        for (lo, hi) in merge_arcs(&arcs) {
            let nodes = ((global as f64 * (hi - lo) / TAU).ceil() as usize).max(256);
            scan_arc(&f, thr, lev, lo, hi, nodes, &mut set)?;
        }
        // A uniform scan cuts at the θ = 0 seam; rejoin a band split there.
        if lev <= 1 && set.len() >= 2 {
            let first = set[0];
            let last = *set.last().unwrap();
            if first.theta_lo <= 1e-9 && TAU - last.theta_hi <= 1e-9 {
                set.remove(0);
                set.pop();
                set.push(SpectralBand {
                    level: lev,
                    theta_lo: last.theta_lo,
                    theta_hi: first.theta_hi + TAU,
                    band_type: BandType::Untyped,
                });
            }
        }
        for band in &mut set {
            if band.theta_lo < 0.0 {
                band.theta_lo += TAU;
                band.theta_hi += TAU;
            }
        }
        set.sort_by(|a, b| a.theta_lo.partial_cmp(&b.theta_lo).unwrap());
        all.push(set);
    }
    Ok(all)
}

/// The level-k band set {θ ∈ [0, 2π) : |x_k| ≤ threshold}; see
/// `band_hierarchy` for the scan strategy. Band endpoints are bisected to
/// `BAND_EDGE_TOL`.
pub fn bands(
    model: TraceModel,
    theta_a: f64,
    theta_b: f64,
    level: i64,
    grid_density: usize,
) -> Result<Vec<SpectralBand>> {
    Ok(band_hierarchy(model, theta_a, theta_b, level, grid_density)?
        .pop()
        .expect("hierarchy contains the requested level"))
}

/// Type each level-k band: A if contained in a level-(k−1) band, else B if
/// contained in a level-(k−2) band, else Untyped. Returns the untyped count;
/// untypeable bands are data, not an error, since the dichotomy is only
/// guaranteed in the large-coupling regime.
pub fn classify_bands(
    prev2: &[SpectralBand],
    prev1: &[SpectralBand],
    cur: &mut [SpectralBand],
) -> usize {
    let tol = 1e-8;
    let mut untyped = 0;
    for band in cur.iter_mut() {
        band.band_type = if prev1.iter().any(|p| p.contains(band, tol)) {
            BandType::A
        } else if prev2.iter().any(|p| p.contains(band, tol)) {
            BandType::B
        } else {
            untyped += 1;
            BandType::Untyped
        };
    }
    untyped
}

/// Number of `children` contained in `parent`.
pub fn count_children(parent: &SpectralBand, children: &[SpectralBand]) -> usize {
    children.iter().filter(|c| parent.contains(c, 1e-8)).count()
}

/// Per-band derivative statistics at one level: extrema of |x'_k| over the
/// band and of the derivative growth ratio across the ancestor step,
/// |x'_k/x'_{k−1}| on type-A bands resp. |x'_k/x'_{k−2}| on type-B bands.
/// The denominator level is the ancestor the band sits inside, where its
/// derivative is bounded away from zero, so the ratio is well defined.
#[derive(Clone, Debug)]
pub struct BandDerivativeStats {
    pub band: SpectralBand,
    pub deriv_min: f64,
    pub deriv_max: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

/// Sample `samples` interior points of each typed level-k Fibonacci band.
pub fn trace_derivative_ratios(
    theta_a: f64,
    theta_b: f64,
    level: i64,
    samples: usize,
    grid_density: usize,
) -> Result<Vec<BandDerivativeStats>> {
    if level < 1 {
        return Err(Error::BadArgument(format!(
            "level {level} must be >= 1 so both ancestors exist"
        )));
    }
    if samples < 2 {
        return Err(Error::BadArgument("need at least 2 samples per band".into()));
    }
    let mut hier = band_hierarchy(TraceModel::Fibonacci, theta_a, theta_b, level, grid_density)?;
    let mut cur = hier.pop().expect("requested level present");
    let prev1 = &hier[level as usize];
    let prev2 = &hier[(level - 1) as usize];
    classify_bands(prev2, prev1, &mut cur);
    let li = (level + 1) as usize;
    let mut out = Vec::with_capacity(cur.len());
    for band in cur {
        let mut stats = BandDerivativeStats {
            band,
            deriv_min: f64::INFINITY,
            deriv_max: 0.0,
            ratio_min: f64::INFINITY,
            ratio_max: 0.0,
        };
        for s in 0..samples {
            let t = (s as f64 + 0.5) / samples as f64;
            let theta = (band.theta_lo + band.length() * t).rem_euclid(TAU);
            let (_, ds) =
                orbit_with_derivative(TraceModel::Fibonacci, theta_a, theta_b, theta, level)?;
            let dk = ds[li].abs();
            stats.deriv_min = stats.deriv_min.min(dk);
            stats.deriv_max = stats.deriv_max.max(dk);
            let den = match band.band_type {
                BandType::A => ds[li - 1].abs(),
                BandType::B => ds[li - 2].abs(),
                BandType::Untyped => continue,
            };
            if den > 0.0 {
                stats.ratio_min = stats.ratio_min.min(dk / den);
                stats.ratio_max = stats.ratio_max.max(dk / den);
            }
        }
        out.push(stats);
    }
    Ok(out)
}

/// Branch functions g_±(u, v, I) = uv ± sqrt(I + (1 − u²)(1 − v²)): the two
/// candidates for the orbit value one step back from (u, v) on the invariant
/// surface at level I. A negative radicand is reported, not continued into ℂ.
pub fn g_pm(u: f64, v: f64, invariant: f64, plus: bool) -> Result<f64> {
    let rad = invariant + (1.0 - u * u) * (1.0 - v * v);
    if rad < 0.0 {
        return Err(Error::Numerical(format!(
            "branch radicand {rad:.3e} < 0 at (u, v, I) = ({u}, {v}, {invariant})"
        )));
    }
    Ok(u * v + if plus { rad.sqrt() } else { -rad.sqrt() })
}

/// A Thue–Morse closed-gap point: t_k(e^{iθ}) = 0 with t_2 ≠ 2, at which all
/// monodromies from level k+2 on collapse to the identity.
#[derive(Clone, Debug)]
pub struct ClosedGap {
    pub k: i64,
    pub theta: f64,
    /// max over j ∈ [k+2, n] of ‖M_j − I‖ (max-entry norm).
    pub monodromy_defect: f64,
    /// max over j ∈ [k+2, n] of |t_j − 2|.
    pub trace_defect: f64,
    /// ‖M_{k+1} − I‖; generically order 1, recorded for contrast.
    pub first_level_defect: f64,
    /// |t'_n(θ)| from the derivative recursion; a closed gap is a critical
    /// point of the band-edge condition.
    pub edge_derivative: f64,
}

/// Thue–Morse monodromy M_j = Z(2^{j+1}, 0; z), the transfer product over
/// the 2^j coins of the level-j substitution word.
pub fn tm_monodromy(theta_a: f64, theta_b: f64, theta: f64, j: i64) -> Result<Mat2> {
    if j < -1 {
        return Err(Error::BadArgument(format!("monodromy level {j} must be >= -1")));
    }
    if j == -1 {
        // The single-letter-b companion; not part of the substitution word.
        let model = CoinModel::thue_morse(theta_b, theta_a)?;
        let aw = model.alphas(0, 2)?;
        return Ok(transfer(&aw, CocycleKind::Gz, 2, 0, C64::from_polar(1.0, theta)));
    }
    let sites = 2 * (1i64 << j);
    let model = CoinModel::thue_morse(theta_a, theta_b)?;
    let aw = model.alphas(0, sites)?;
    Ok(transfer(&aw, CocycleKind::Gz, sites, 0, C64::from_polar(1.0, theta)))
}

/// Fibonacci monodromy M_k = Z(2F_k, 0; z).
pub fn fib_monodromy(theta_a: f64, theta_b: f64, theta: f64, k: i64) -> Result<Mat2> {
    if k < 0 {
        return Err(Error::BadArgument(format!("monodromy level {k} must be >= 0")));
    }
    let len = fib_u64(k) as i64;
    let model = CoinModel::fibonacci(theta_a, theta_b)?;
    let aw = model.alphas(0, 2 * len)?;
    Ok(transfer(&aw, CocycleKind::Gz, 2 * len, 0, C64::from_polar(1.0, theta)))
}

/// Scan [0, 2π) for zeros of t_k, k = 1..=n−2, keep those with t_2 ≠ 2, and
/// verify the gap closure at each: |t_j − 2| and ‖M_j − I‖ small for
/// j ∈ [k+2, n]. The level right above the zero, j = k+1, does not close
/// (t_{k+1} = 2 − 2t_{k−1}² there); its defect is recorded for contrast.
pub fn tm_closed_gap_search(theta_a: f64, theta_b: f64, n: i64) -> Result<Vec<ClosedGap>> {
    if n < 3 {
        return Err(Error::BadArgument(format!("need n >= 3, got {n}")));
    }
    let mut gaps = Vec::new();
    for k in 1..=(n - 2) {
        let grid = (64usize << k.min(10) as usize).max(1024);
        let value = |theta: f64| -> Result<f64> {
            let orbit = tm_orbit(theta_a, theta_b, theta, k.max(2))?;
            Ok(orbit.saturated(k))
        };
        let mut prev = value(0.0)?;
        for i in 1..=grid {
            let (lo, hi) = (
                TAU * (i - 1) as f64 / grid as f64,
                TAU * i as f64 / grid as f64,
            );
            let cur = value(hi)?;
            if prev * cur < 0.0 {
                let (mut a, mut b, mut fa) = (lo, hi, prev);
                while b - a > 1e-14 {
                    let mid = 0.5 * (a + b);
                    let fm = value(mid)?;
                    if fm == 0.0 || (fa < 0.0) == (fm < 0.0) {
                        a = mid;
                        fa = fm;
                    } else {
                        b = mid;
                    }
                }
                let theta0 = 0.5 * (a + b);
                let orbit = tm_orbit(theta_a, theta_b, theta0, n)?;
                if (orbit.saturated(2) - 2.0).abs() <= 1e-6 {
                    continue;
                }
                let mut mono_defect = 0.0f64;
                let mut trace_defect = 0.0f64;
                for j in (k + 2)..=n {
                    let mj = tm_monodromy(theta_a, theta_b, theta0, j)?;
                    mono_defect = mono_defect.max(mj.dist_max(&Mat2::identity()));
                    trace_defect = trace_defect.max((orbit.saturated(j) - 2.0).abs());
                }
                let first = tm_monodromy(theta_a, theta_b, theta0, k + 1)?
                    .dist_max(&Mat2::identity());
                let (_, ds) =
                    orbit_with_derivative(TraceModel::ThueMorse, theta_a, theta_b, theta0, n)?;
                gaps.push(ClosedGap {
                    k,
                    theta: theta0,
                    monodromy_defect: mono_defect,
                    trace_defect,
                    first_level_defect: first,
                    edge_derivative: ds[(n + 1) as usize].abs(),
                });
            }
            prev = cur;
        }
    }
    if gaps.is_empty() {
        return Err(Error::Numerical(format!(
            "no trace zeros with t_2 != 2 found up to level {}",
            n - 2
        )));
    }
    Ok(gaps)
}

/// Coupling diagnostics for a Fibonacci coin pair: the invariant scale κ,
/// the coupling μ = κ²·min sin²θ over the level-≤ k_max band sets (an upper
/// estimate of the true inf over the spectrum, which the finite levels
/// enclose), the derivative scales ξ = m√μ, Ξ = M√μ, and the predicted
/// transport-exponent window.
#[derive(Clone, Debug)]
pub struct CouplingReport {
    pub theta_a: f64,
    pub theta_b: f64,
    pub kappa: f64,
    pub k_max: i64,
    /// κ²·min sin²θ over the computed bands.
    pub mu: f64,
    /// Analytic lower bound for μ when the angle test passes.
    pub mu_guarantee: Option<f64>,
    pub m_factor: f64,
    pub big_m_factor: f64,
    /// ξ = m√μ; None if m ≤ 0.
    pub xi: Option<f64>,
    /// Ξ = M√μ.
    pub big_xi: f64,
    /// η = log Ξ / log φ − 1.
    pub eta: f64,
    /// τ = 2 log((κ+2)(2κ+5)²) / log φ.
    pub tau: f64,
    /// Largest |x_k| sampled on the level-≤ k_max bands.
    pub max_band_trace: f64,
}

/// Default derivative-scale factors m = 2 − 1/sin²θ_b − slack,
/// M = 4 + 3/(2 sin²θ_b) + slack with slack 0.05.
pub fn default_derivative_factors(theta_b: f64) -> (f64, f64) {
    let s2 = theta_b.sin().powi(2);
    (2.0 - 1.0 / s2 - 0.05, 4.0 + 3.0 / (2.0 * s2) + 0.05)
}

/// μ ≥ κ² sin²θ_b whenever (2cos²θ_b − 1) + sinθ_a sinθ_b > cosθ_a, because
/// every band then stays inside {|Im z| ≥ sin θ_b}.
pub fn mu_guarantee(theta_a: f64, theta_b: f64) -> Result<Option<f64>> {
    let k = kappa(theta_a, theta_b)?;
    let (ca, cb) = (theta_a.cos(), theta_b.cos());
    let ok = (2.0 * cb * cb - 1.0) + theta_a.sin() * theta_b.sin() > ca.abs();
    Ok(ok.then(|| k * k * theta_b.sin().powi(2)))
}

impl CouplingReport {
    /// Lower prediction for the time-averaged exponent,
    /// max(0, (p − 3τ − η) / (p(1 + τ))).
    pub fn predicted_lower(&self, p: f64) -> f64 {
        ((p - 3.0 * self.tau - self.eta) / (p * (1.0 + self.tau))).max(0.0)
    }

    /// Upper prediction 2 log φ / log ξ; None unless ξ > 1.
    pub fn predicted_upper(&self) -> Option<f64> {
        match self.xi {
            Some(xi) if xi > 1.0 => Some(2.0 * PHI.ln() / xi.ln()),
            _ => None,
        }
    }
}

/// Build the coupling report from the band sets of levels −1..=k_max.
/// `factors` overrides (m, M); defaults from `default_derivative_factors`.
pub fn coupling_report(
    theta_a: f64,
    theta_b: f64,
    k_max: i64,
    factors: Option<(f64, f64)>,
) -> Result<CouplingReport> {
    if k_max < 0 {
        return Err(Error::BadArgument(format!("k_max {k_max} must be >= 0")));
    }
    let kap = kappa(theta_a, theta_b)?;
    let (m_factor, big_m_factor) = factors.unwrap_or_else(|| default_derivative_factors(theta_b));
    let hier = band_hierarchy(TraceModel::Fibonacci, theta_a, theta_b, k_max, 0)?;
    // The spectrum sits inside σ_{k_max} ∪ σ_{k_max−1}, so the minimum of
    // sin²θ over that cover bounds the true infimum from below.
    let mut min_sin2 = f64::INFINITY;
    for set in &hier[hier.len().saturating_sub(2)..] {
        for band in set {
            min_sin2 = min_sin2.min(arc_min_sin2(band.theta_lo, band.theta_hi));
        }
    }
    // Trace bound |x_k| ≤ κ + 2 for every k ≤ k_max, sampled on the deepest
    // band set (the tightest available stand-in for spectral points).
    let mut max_band_trace = 0.0f64;
    for band in hier.last().expect("k_max >= 0") {
        for s in 0..=8 {
            let theta = (band.theta_lo + band.length() * s as f64 / 8.0).rem_euclid(TAU);
            let orbit = run_orbit(
                TraceModel::Fibonacci,
                theta_a,
                theta_b,
                theta,
                k_max,
                None,
                LOG_SWITCH,
            )?;
            for k in -1..=orbit.max_level() {
                max_band_trace = max_band_trace.max(orbit.saturated(k).abs());
            }
        }
    }
    let mu = kap * kap * min_sin2;
    let xi = (m_factor > 0.0).then(|| m_factor * mu.sqrt());
    let big_xi = big_m_factor * mu.sqrt();
    Ok(CouplingReport {
        theta_a,
        theta_b,
        kappa: kap,
        k_max,
        mu,
        mu_guarantee: mu_guarantee(theta_a, theta_b)?,
        m_factor,
        big_m_factor,
        xi,
        big_xi,
        eta: big_xi.ln() / PHI.ln() - 1.0,
        tau: 2.0 * ((kap + 2.0) * (2.0 * kap + 5.0).powi(2)).ln() / PHI.ln(),
        max_band_trace,
    })
}

/// min sin²θ over the arc [lo, hi]: zero if the arc meets θ ≡ 0 or π,
/// otherwise attained at an endpoint.
fn arc_min_sin2(lo: f64, hi: f64) -> f64 {
    let crosses = |target: f64| -> bool {
        for shift in [0.0, TAU, 2.0 * TAU] {
            let t = target + shift;
            if t >= lo && t <= hi {
                return true;
            }
        }
        false
    };
    if crosses(0.0) || crosses(std::f64::consts::PI) {
        return 0.0;
    }
    lo.sin().powi(2).min(hi.sin().powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat2::c64;

    fn split(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = *seed;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn fibonacci_numbers_match_convention() {
        let want = [1u64, 1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233, 377];
        for (i, &w) in want.iter().enumerate() {
            assert_eq!(fib_u64(i as i64 - 1), w);
            assert_eq!(fib_f64(i as i64 - 1), w as f64);
        }
    }

    #[test]
    fn initial_traces_match_trivial_coins() {
        // theta_a = theta_b = 0 gives the free walk: x_k = cos(F_k θ).
        for &theta in &[0.3, 1.1, 2.9, 4.2] {
            let (xm1, x0, x1) = fib_initial_traces(0.0, 0.0, theta).unwrap();
            assert!((xm1 - theta.cos()).abs() < 1e-14);
            assert!((x0 - theta.cos()).abs() < 1e-14);
            assert!((x1 - (2.0 * theta).cos()).abs() < 1e-13);
            let (tm1, t0, t1, t2) = tm_initial_traces(0.0, 0.0, theta).unwrap();
            assert!((tm1 - 2.0 * theta.cos()).abs() < 1e-14);
            assert!((t0 - 2.0 * theta.cos()).abs() < 1e-14);
            assert!((t1 - 2.0 * (2.0 * theta).cos()).abs() < 1e-13);
            assert!((t2 - 2.0 * (4.0 * theta).cos()).abs() < 1e-13);
        }
        assert!(fib_initial_traces(std::f64::consts::FRAC_PI_2, 0.3, 0.1).is_err());
    }

    #[test]
    fn initial_traces_at_z_eq_i() {
        // Re(z) = 0, Re(z²) = −1 at θ = π/2.
        let (ta, tb) = (0.7, 0.4);
        let (xm1, x0, x1) = fib_initial_traces(ta, tb, std::f64::consts::FRAC_PI_2).unwrap();
        assert!(xm1.abs() < 1e-14 && x0.abs() < 1e-14);
        let want = -1.0 / (ta.cos() * tb.cos()) + ta.tan() * tb.tan();
        assert!((x1 - want).abs() < 1e-13);
    }

    #[test]
    fn orbit_matches_cocycle_traces() {
        use crate::cocycle::transfer_scaled;
        let mut seed = 7u64;
        for trial in 0..10 {
            let (ta, tb) = (0.2 + 1.0 * split(&mut seed), 0.15 + 0.9 * split(&mut seed));
            let theta = TAU * split(&mut seed);
            let orbit = fib_orbit(ta, tb, theta, 12, 0.25).unwrap();
            let model = CoinModel::fibonacci(ta, tb).unwrap();
            let z = C64::from_polar(1.0, theta);
            for k in 0..=12i64 {
                let n = 2 * fib_u64(k) as i64;
                let aw = model.alphas(0, n).unwrap();
                let m = transfer_scaled(&aw, CocycleKind::Gz, n, 0, z);
                let half = m.m.trace() * 0.5;
                match orbit.value(k) {
                    // Plain range: compare values relatively.
                    Some(x) if x.abs() < 1e12 && m.log_scale == 0.0 => {
                        assert!(half.im.abs() < 1e-6 * x.abs().max(1.0));
                        let rel = (x - half.re).abs() / x.abs().max(1.0);
                        assert!(rel < 1e-8, "trial {trial} k {k}: orbit {x} vs cocycle {}", half.re);
                    }
                    // Escaped range: compare log-magnitude and sign.
                    _ => {
                        let lc = half.norm().ln() + m.log_scale;
                        let dl = (orbit.ln_abs(k) - lc).abs() / lc.abs().max(1.0);
                        assert!(dl < 1e-8, "trial {trial} k {k}: log {} vs {lc}", orbit.ln_abs(k));
                        assert_eq!(orbit.sign(k), half.re.signum());
                    }
                }
            }
        }
    }

    #[test]
    fn tm_orbit_matches_cocycle_traces() {
        use crate::cocycle::transfer_scaled;
        let mut seed = 21u64;
        for _ in 0..6 {
            let (ta, tb) = (0.2 + 1.0 * split(&mut seed), 0.15 + 0.9 * split(&mut seed));
            let theta = TAU * split(&mut seed);
            let z = C64::from_polar(1.0, theta);
            let orbit = tm_orbit(ta, tb, theta, 6).unwrap();
            let model = CoinModel::thue_morse(ta, tb).unwrap();
            for j in -1..=6i64 {
                let (t_raw, t_log) = if j == -1 {
                    (tm_monodromy(ta, tb, theta, j).unwrap().trace(), 0.0)
                } else {
                    let sites = 2 * (1i64 << j);
                    let aw = model.alphas(0, sites).unwrap();
                    let m = transfer_scaled(&aw, CocycleKind::Gz, sites, 0, z);
                    (m.m.trace(), m.log_scale)
                };
                match orbit.value(j) {
                    Some(v) if v.abs() < 1e12 && t_log < 600.0 => {
                        let t = t_raw * c64(t_log.exp(), 0.0);
                        assert!(t.im.abs() < 1e-8 * v.abs().max(1.0));
                        assert!(
                            (v - t.re).abs() / v.abs().max(1.0) < 1e-8,
                            "j {j}: orbit {v} vs monodromy {}",
                            t.re
                        );
                    }
                    _ => {
                        let lc = t_raw.norm().ln() + t_log;
                        let dl = (orbit.ln_abs(j) - lc).abs() / lc.abs().max(1.0);
                        assert!(dl < 1e-8, "j {j}: log {} vs {lc}", orbit.ln_abs(j));
                    }
                }
            }
        }
    }

    #[test]
    fn free_orbits_follow_closed_forms() {
        for &theta in &[0.37, 1.93, 5.01] {
            let fib = fib_orbit(0.0, 0.0, theta, 20, 0.25).unwrap();
            for k in -1..=20i64 {
                let want = (fib_f64(k) * theta).cos();
                assert!((fib.value(k).unwrap() - want).abs() < 1e-9);
            }
            assert!(fib.escape.is_none());
            let tm = tm_orbit(0.0, 0.0, theta, 12).unwrap();
            for n in -1..=12i64 {
                // M_n is a product of 2^n (one, for the level −1 companion)
                // diagonal factors diag(z, 1/z).
                let want = 2.0 * (2f64.powi(n.max(0) as i32) * theta).cos();
                assert!((tm.value(n).unwrap() - want).abs() < 2e-7, "n = {n}");
            }
        }
    }

    #[test]
    fn invariant_is_conserved_and_matches_closed_form() {
        let mut seed = 3u64;
        for _ in 0..50 {
            let ta = 0.1 + 1.3 * split(&mut seed);
            let tb = 0.1 + 1.3 * split(&mut seed);
            let theta = TAU * split(&mut seed);
            let orbit = fib_orbit(ta, tb, theta, 25, 0.25).unwrap();
            assert!(orbit_invariant_drift(&orbit) < 1e-8);
            let (xm1, x0, x1) = fib_initial_traces(ta, tb, theta).unwrap();
            let i0 = fricke_vogt(x1, x0, xm1);
            let want = invariant_closed_form(ta, tb, theta).unwrap();
            assert!(
                (i0 - want).abs() < 1e-10 * want.max(1.0),
                "I = {i0} vs closed form {want}"
            );
        }
        // Real z = ±1 lies on the invariant-zero surface.
        for &theta in &[0.0, std::f64::consts::PI] {
            let (xm1, x0, x1) = fib_initial_traces(0.8, 0.3, theta).unwrap();
            assert!(fricke_vogt(x1, x0, xm1).abs() < 1e-12);
            assert!(invariant_closed_form(0.8, 0.3, theta).unwrap() < 1e-25);
        }
        // kappa at (π/3, π/4) is |2 − √6|: sec = 2, √2; sines √3/2, √2/2.
        let k = kappa(std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_4).unwrap();
        assert!((k - (2.0 - 6f64.sqrt()).abs()).abs() < 1e-12);
        let i_at_i = invariant_closed_form(
            std::f64::consts::FRAC_PI_3,
            std::f64::consts::FRAC_PI_4,
            std::f64::consts::FRAC_PI_2,
        )
        .unwrap();
        assert!((i_at_i - k * k).abs() < 1e-12);
    }

    #[test]
    fn escape_fires_at_real_energy_and_growth_bound_holds() {
        // z = 1 with theta_b < theta_a: x_{-1}, x_0, x_1 all exceed 1.
        let orbit = fib_orbit(1.0, 0.5, 0.0, 40, 0.3).unwrap();
        let esc = orbit.escape.expect("escape should fire");
        assert_eq!(esc.k0, 0);
        let defect = escape_growth_defect(&orbit).unwrap();
        assert!(defect <= 1e-9, "growth bound violated by {defect}");
        // The orbit blows past f64 range and keeps going in log form.
        assert!(orbit.truncated || orbit.ln_abs(orbit.max_level()) > 700.0);
    }

    #[test]
    fn log_domain_matches_plain_while_both_representable() {
        let (ta, tb, theta) = (1.2, 0.4, 0.01);
        let plain = run_orbit(TraceModel::Fibonacci, ta, tb, theta, 16, None, LOG_SWITCH).unwrap();
        let logged = run_orbit(TraceModel::Fibonacci, ta, tb, theta, 16, None, 1e4).unwrap();
        for k in -1..=16i64 {
            if let Some(v) = plain.value(k) {
                let rel = (logged.sign(k) * logged.ln_abs(k).exp() - v).abs() / v.abs().max(1.0);
                assert!(rel < 1e-9, "k = {k}: log path drifted by {rel}");
                assert_eq!(logged.sign(k), v.signum());
            }
        }
        let tmp = run_orbit(TraceModel::ThueMorse, ta, tb, theta, 10, None, LOG_SWITCH).unwrap();
        let tml = run_orbit(TraceModel::ThueMorse, ta, tb, theta, 10, None, 1e4).unwrap();
        for n in -1..=10i64 {
            if let Some(v) = tmp.value(n) {
                let rel = (tml.sign(n) * tml.ln_abs(n).exp() - v).abs() / v.abs().max(1.0);
                assert!(rel < 1e-9, "n = {n}: log path drifted by {rel}");
            }
        }
    }

    #[test]
    fn level_minus_one_bands_are_two_arcs() {
        let (ta, tb) = (1.2, 0.7);
        let set = bands(TraceModel::Fibonacci, ta, tb, -1, 0).unwrap();
        assert_eq!(set.len(), 2);
        // |cos θ| ≤ cos θ_b on [θ_b, π − θ_b] ∪ [π + θ_b, 2π − θ_b].
        let pi = std::f64::consts::PI;
        let want = [(tb, pi - tb), (pi + tb, TAU - tb)];
        for (band, (lo, hi)) in set.iter().zip(want) {
            assert!((band.theta_lo - lo).abs() < 1e-9, "lo {} vs {lo}", band.theta_lo);
            assert!((band.theta_hi - hi).abs() < 1e-9);
        }
    }

    #[test]
    fn band_counts_types_and_nesting_at_large_coupling() {
        let (ta, tb) = (1.55, 0.9);
        let mut by_level = band_hierarchy(TraceModel::Fibonacci, ta, tb, 6, 0).unwrap();
        for (i, set) in by_level.iter().enumerate() {
            let level = i as i64 - 1;
            assert_eq!(
                set.len() as u64,
                2 * fib_u64(level),
                "level {level} band count"
            );
        }
        // Types: level 0 all A, level 1 all B, then the substitution mix.
        for level in 0..=6i64 {
            let (head, tail) = by_level.split_at_mut((level + 1) as usize);
            let prev1 = &head[level as usize];
            let prev2: &[SpectralBand] = if level >= 1 { &head[(level - 1) as usize] } else { &[] };
            let untyped = classify_bands(prev2, prev1, &mut tail[0]);
            assert_eq!(untyped, 0, "level {level} has untyped bands");
        }
        assert!(by_level[1].iter().all(|b| b.band_type == BandType::A));
        assert!(by_level[2].iter().all(|b| b.band_type == BandType::B));
        // Nesting: A-parents get no level-(k+1) child and one level-(k+2)
        // child; B-parents one and two.
        for level in 0..=4i64 {
            for parent in &by_level[(level + 1) as usize] {
                let c1 = count_children(parent, &by_level[(level + 2) as usize]);
                let c2 = count_children(parent, &by_level[(level + 3) as usize]);
                match parent.band_type {
                    BandType::A => assert_eq!((c1, c2), (0, 1), "A parent at level {level}"),
                    BandType::B => assert_eq!((c1, c2), (1, 2), "B parent at level {level}"),
                    BandType::Untyped => panic!("untyped parent in classified set"),
                }
            }
        }
        // On points of the deepest band set, every level's trace stays
        // below κ + 2.
        let kap = kappa(ta, tb).unwrap();
        for band in by_level.last().unwrap() {
            for s in 0..=16 {
                let theta = (band.theta_lo + band.length() * s as f64 / 16.0).rem_euclid(TAU);
                let orbit = fib_orbit(ta, tb, theta, 6, 0.25).unwrap();
                for k in -1..=6i64 {
                    assert!(orbit.saturated(k).abs() <= kap + 2.0 + 1e-9, "level {k}");
                }
            }
        }
    }

    #[test]
    fn derivative_orbits_match_finite_differences() {
        let (ta, tb) = (1.1, 0.6);
        for &theta in &[0.9, 2.0, 4.7] {
            for model in [TraceModel::Fibonacci, TraceModel::ThueMorse] {
                let lev = 6i64;
                let (xs, ds) = orbit_with_derivative(model, ta, tb, theta, lev).unwrap();
                let h = 1e-6;
                let (xp, _) = orbit_with_derivative(model, ta, tb, theta + h, lev).unwrap();
                let (xm, _) = orbit_with_derivative(model, ta, tb, theta - h, lev).unwrap();
                for i in 0..xs.len() {
                    let fd = (xp[i] - xm[i]) / (2.0 * h);
                    let scale = ds[i].abs().max(1.0);
                    assert!(
                        (fd - ds[i]).abs() / scale < 1e-5,
                        "{model:?} level {}: fd {fd} vs recursion {}",
                        i as i64 - 1,
                        ds[i]
                    );
                }
            }
        }
        // |x'_0 / x'_{−1}| = sec θ_a / sec θ_b everywhere.
        let (_, ds) = orbit_with_derivative(TraceModel::Fibonacci, ta, tb, 1.3, 2).unwrap();
        let want = tb.cos() / ta.cos();
        assert!((ds[1] / ds[0] - want).abs() < 1e-12);
        // |x'_1 / x'_{−1}| = 2|Im z² / Im z| sec θ_a.
        let want1 = 2.0 * ((2.0 * 1.3f64).sin() / 1.3f64.sin()).abs() / ta.cos();
        assert!(((ds[2] / ds[0]).abs() - want1).abs() < 1e-11);
    }

    #[test]
    fn band_widths_obey_mean_value_bounds() {
        let (ta, tb) = (1.55, 0.9);
        for level in 1..=4i64 {
            let stats = trace_derivative_ratios(ta, tb, level, 128, 0).unwrap();
            assert_eq!(stats.len() as u64, 2 * fib_u64(level));
            for s in &stats {
                let len = s.band.length();
                // x_k sweeps from ±1 to ∓1 across the band, so by the mean
                // value theorem max|x'| ≥ 2/len and min|x'| ≤ 2/len; the
                // sampled extrema get 5% slack.
                assert!(len * s.deriv_max >= 2.0 * 0.95, "level {level}");
                assert!(len * s.deriv_min <= 2.0 * 1.05, "level {level}");
                assert!(s.ratio_min > 1.0, "contraction ratio should exceed 1");
                assert!(s.ratio_max.is_finite());
            }
        }
    }

    #[test]
    fn branch_functions_recover_orbit_and_bound_derivatives() {
        let (ta, tb, theta) = (1.0, 0.45, 2.2);
        let orbit = fib_orbit(ta, tb, theta, 10, 0.25).unwrap();
        let inv = invariant_closed_form(ta, tb, theta).unwrap();
        for k in 1..=9i64 {
            let (u, v, w) = (
                orbit.value(k).unwrap(),
                orbit.value(k - 1).unwrap(),
                orbit.value(k - 2).unwrap(),
            );
            // One branch steps back from (x_k, x_{k−1}) to x_{k−2}.
            let gp = g_pm(u, v, inv, true).unwrap();
            let gm = g_pm(u, v, inv, false).unwrap();
            let best = (gp - w).abs().min((gm - w).abs());
            assert!(best < 1e-8 * w.abs().max(1.0), "k = {k}");
        }
        assert!(g_pm(0.0, 0.0, -2.0, true).is_err());
        // At (u, v, I) = (0.5, −0.5, 9): |∂g/∂I| ≤ 1/(2√I).
        let h = 1e-6;
        let d_i = (g_pm(0.5, -0.5, 9.0 + h, true).unwrap()
            - g_pm(0.5, -0.5, 9.0 - h, true).unwrap())
            / (2.0 * h);
        assert!(d_i.abs() <= 1.0 / (2.0 * 9f64.sqrt()) + 1e-9);
        let d_u = (g_pm(0.5 + h, -0.5, 9.0, true).unwrap()
            - g_pm(0.5 - h, -0.5, 9.0, true).unwrap())
            / (2.0 * h);
        assert!(d_u.abs() <= 1.0 + 1e-9);
    }

    #[test]
    fn closed_gaps_collapse_monodromies_two_levels_up() {
        let (ta, tb) = (0.9, 0.4);
        let gaps = tm_closed_gap_search(ta, tb, 6).unwrap();
        assert!(!gaps.is_empty());
        for gap in &gaps {
            assert!(
                gap.monodromy_defect <= 1e-8,
                "k = {}, theta = {}: monodromy defect {}",
                gap.k,
                gap.theta,
                gap.monodromy_defect
            );
            assert!(gap.trace_defect <= 1e-8);
            assert!(gap.edge_derivative <= 1e-6);
            // One level above the zero the monodromy is far from I: the
            // trace there is 2 − 2t_{k−1}², not 2 (the trace recursion
            // produces t_{k+1} from level k ≥ 2 on).
            let orbit = tm_orbit(ta, tb, gap.theta, (gap.k + 1).max(2)).unwrap();
            let tkm1 = orbit.saturated(gap.k - 1);
            if gap.k >= 2 {
                let want = 2.0 - 2.0 * tkm1 * tkm1;
                assert!((orbit.saturated(gap.k + 1) - want).abs() < 1e-8);
            }
            if tkm1.abs() > 1e-3 {
                assert!(gap.first_level_defect > 1e-3);
            }
        }
    }

    #[test]
    fn coupling_report_scales_and_guarantee() {
        let (ta, tb) = (1.55, 0.9);
        let report = coupling_report(ta, tb, 6, None).unwrap();
        let kap = kappa(ta, tb).unwrap();
        assert!((report.kappa - kap).abs() < 1e-12);
        let guarantee = report.mu_guarantee.expect("angle test should pass");
        assert!((guarantee - kap * kap * tb.sin().powi(2)).abs() < 1e-9);
        assert!(report.mu >= guarantee - 1e-9, "band μ below its guarantee");
        assert!(report.mu >= 32.0);
        assert!(report.max_band_trace <= kap + 2.0);
        let xi = report.xi.expect("m > 0 at these angles");
        assert!((xi - report.m_factor * report.mu.sqrt()).abs() < 1e-12);
        let upper = report.predicted_upper().unwrap();
        assert!(upper > 0.0 && upper < 0.9);
        // Lower prediction is vacuous at p = 10 for this κ but must clamp at 0.
        assert!(report.predicted_lower(10.0) >= 0.0);
        assert!(report.predicted_lower(1e6) > 0.0);
        // Small angles: no guarantee.
        assert!(mu_guarantee(0.4, 0.38).unwrap().is_none());
    }

    #[test]
    fn missed_band_scan_is_quiet_on_valid_grids() {
        // A deliberately coarse request still resolves level 3 because the
        // density floor scales with the band count.
        let set = bands(TraceModel::Fibonacci, 1.55, 0.9, 3, 1).unwrap();
        assert_eq!(set.len() as u64, 2 * fib_u64(3));
        let tm_set = bands(TraceModel::ThueMorse, 0.9, 0.4, 2, 0).unwrap();
        assert!(!tm_set.is_empty());
        for b in &tm_set {
            let mid = (b.theta_lo + 0.5 * b.length()) % TAU;
            let v = trace_value_saturated(TraceModel::ThueMorse, 0.9, 0.4, mid, 2).unwrap();
            assert!(v.abs() <= 2.0);
        }
    }

    #[test]
    fn fib_monodromy_matches_explicit_two_letter_product() {
        let (ta, tb, theta) = (0.8, 0.35, 1.9);
        let z = C64::from_polar(1.0, theta);
        let a = |th: f64| {
            let c = th.cos();
            Mat2::new(
                z / c,
                c64(-th.sin() / c, 0.0),
                c64(-th.sin() / c, 0.0),
                z.inv() / c,
            )
        };
        // M_1 runs over the word ab: rightmost factor acts first.
        let m1 = fib_monodromy(ta, tb, theta, 1).unwrap();
        let want = a(tb).mul(&a(ta));
        assert!(m1.dist_max(&want) < 1e-12);
        let (_, _, x1) = fib_initial_traces(ta, tb, theta).unwrap();
        assert!((m1.trace().re * 0.5 - x1).abs() < 1e-12);
    }
}
