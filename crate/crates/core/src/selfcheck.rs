//! Built-in verification suite. Each check exercises one structural or
//! dynamical guarantee of the library end to end, with a pinned tolerance
//! and a wall-clock budget. The `verify` CLI task and the acceptance
//! integration test both run this suite and print one line per check.
//!
//! The quick tier keeps every horizon at or below 10³ so the whole suite
//! finishes within a minute; the full tier runs the long-horizon transport
//! and integrand checks at their nominal parameters.

use crate::bounds::{fibonacci_dynamical_window, superpolynomial_decay_search, WindowRule};
use crate::cmv::{Closure, CmvOperator, Window};
use crate::cocycle::{
    conjugacy_defect, gz_p, gz_q, solution_basis, transfer, transfer_scaled,
    wronskian_expected, CocycleKind,
};
use crate::coin::{is_critical, Coin, PolymerModel, PolymerWord};
use crate::dynamics::{
    contour_defect, estimate_beta, k_star, log_grid, log_grid_u64, moment_of_profile,
    parseval_defect, run_evolution, RunOptions,
};
use crate::error::{Error, Result};
use crate::floquet::{
    ballistic_check, commutator_identity_defect, fiber_spectrum_union, floquet_cell, hausdorff,
    PeriodicAlphas,
};
use crate::mat2::c64;
use crate::tracemap::{
    band_hierarchy, classify_bands, count_children, coupling_report, escape_growth_defect,
    fib_initial_traces, fib_orbit, fib_u64, fricke_vogt, invariant_closed_form,
    orbit_invariant_drift, tm_closed_gap_search, BandType, TraceModel,
};
use crate::verblunsky::CoinModel;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;
use std::time::Instant;

pub const CHECK_COUNT: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tier {
    /// Every horizon ≤ 10³; the suite stays within about a minute.
    Quick,
    /// Nominal horizons, up to ~10⁴ steps and the full integrand sweep.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub id: usize,
    pub label: &'static str,
    pub status: Status,
    pub detail: String,
    pub seconds: f64,
    pub budget: f64,
}

impl CheckResult {
    pub fn ok(&self) -> bool {
        self.status != Status::Fail
    }

    /// One report line: status, index, label, timing against budget, detail.
    pub fn line(&self) -> String {
        let status = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        format!(
            "{status} {:>2}/{CHECK_COUNT} {:<26} {:>8.2}s/{:<5.0}s  {}",
            self.id, self.label, self.seconds, self.budget, self.detail
        )
    }
}

/// (label, full-tier budget in seconds) for each check, in run order.
pub const CHECKS: [(&str, f64); CHECK_COUNT] = [
    ("unitary_factorization", 1.0),
    ("cocycle_conjugacy", 5.0),
    ("spectral_averaging", 120.0),
    ("resolvent_contour", 60.0),
    ("free_walk_transport", 10.0),
    ("periodic_ballistic", 300.0),
    ("commutator_scaling", 10.0),
    ("trace_orbit_invariant", 30.0),
    ("band_hierarchy", 120.0),
    ("escape_growth", 10.0),
    ("closed_gap_collapse", 30.0),
    ("critical_polymer_transport", 600.0),
    ("coupling_window", 1200.0),
    ("integrand_decay", 600.0),
];

/// Run one check (1-based id) at the given tier.
pub fn run_check(id: usize, tier: Tier) -> CheckResult {
    assert!((1..=CHECK_COUNT).contains(&id), "check id {id}");
    let (label, budget) = CHECKS[id - 1];
    let start = Instant::now();
    let outcome = match id {
        1 => check_factorization(tier),
        2 => check_cocycle_conjugacy(tier),
        3 => check_spectral_averaging(tier),
        4 => check_resolvent_contour(tier),
        5 => check_free_walk_transport(tier),
        6 => check_periodic_ballistic(tier),
        7 => check_commutator_scaling(tier),
        8 => check_trace_orbit_invariant(tier),
        9 => check_band_hierarchy(tier),
        10 => check_escape_growth(tier),
        11 => check_closed_gap_collapse(tier),
        12 => check_critical_polymer_transport(tier),
        13 => check_coupling_window(tier),
        14 => check_integrand_decay(tier),
        _ => unreachable!(),
    };
    let seconds = start.elapsed().as_secs_f64();
    let (status, mut detail) = match outcome {
        Ok(Verdict::Pass(d)) => (Status::Pass, d),
        Ok(Verdict::Skip(d)) => (Status::Skip, d),
        Err(e) => (Status::Fail, e.to_string()),
    };
    if status == Status::Pass && seconds > budget {
        detail = format!("exceeded {budget:.0}s budget; {detail}");
        return CheckResult { id, label, status: Status::Fail, detail, seconds, budget };
    }
    CheckResult { id, label, status, detail, seconds, budget }
}

/// Run the whole suite in order, reporting each result as it lands.
pub fn run_suite<F: FnMut(&CheckResult)>(tier: Tier, mut observe: F) -> Vec<CheckResult> {
    (1..=CHECK_COUNT)
        .map(|id| {
            let r = run_check(id, tier);
            observe(&r);
            r
        })
        .collect()
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(CheckResult::ok)
}

enum Verdict {
    Pass(String),
    Skip(String),
}

fn pass(detail: String) -> Result<Verdict> {
    Ok(Verdict::Pass(detail))
}

fn skip(detail: &str) -> Result<Verdict> {
    Ok(Verdict::Skip(detail.to_string()))
}

fn fail(detail: String) -> Result<Verdict> {
    Err(Error::Invariant(detail))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample of the closed disk of radius `rmax` < 1 by rejection.
fn rand_disk(rng: &mut ChaCha8Rng, rmax: f64) -> C64 {
    loop {
        let a = c64(rng.gen_range(-rmax..=rmax), rng.gen_range(-rmax..=rmax));
        if a.norm() <= rmax {
            return a;
        }
    }
}

fn rand_circle(rng: &mut ChaCha8Rng) -> C64 {
    C64::from_polar(1.0, rng.gen_range(0.0..TAU))
}

fn delta_0() -> Vec<(i64, C64)> {
    vec![(0, c64(1.0, 0.0))]
}

/// ℒℳ product against the five-diagonal stencil on 20 random models, and
/// the closed-form diagonal entries bit for bit.
fn check_factorization(_tier: Tier) -> Result<Verdict> {
    let w = Window::new(-64, 63)?;
    let mut rng = rng(0x11);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let len = rng.gen_range(1..=6usize);
        let alphas: Vec<C64> = (0..len).map(|_| rand_disk(&mut rng, 0.9)).collect();
        let model = CoinModel::explicit_alphas(alphas)?;
        let op = CmvOperator::from_model(&model, w, Closure::Decouple)?;
        let stencil = op.band_stencil();
        let product = op.band_lm_product();
        for i in 0..w.len() {
            for k in 0..5 {
                worst = worst.max((stencil[i][k] - product[i][k]).norm());
            }
        }
        if worst > 1e-12 {
            return fail(format!(
                "trial {trial}: factorization gap {worst:.3e} > 1e-12"
            ));
        }
        let aw = model.alphas(w.lo, w.hi + 1)?;
        // The decoupling closure replaces α at lo and hi+1, so the model's
        // closed form applies strictly inside the window.
        for n in (w.lo + 1)..=(w.hi - 1) {
            // Same arithmetic order as the stencil, so equality is exact.
            let want = if n.rem_euclid(2) == 0 {
                -aw.get(n + 1).conj() * aw.get(n)
            } else {
                -aw.get(n) * aw.get(n + 1).conj()
            };
            let got = op.entry(n, n);
            if got != want {
                return fail(format!(
                    "trial {trial}: diagonal at {n} is {got} instead of {want}"
                ));
            }
        }
    }
    pass(format!(
        "20 random models, window 128: max factorization gap {worst:.2e}, diagonals exact"
    ))
}

/// Szegő/transfer conjugacy on 1000 random samples, determinant closed
/// forms, and the Wronskian 2(−1)ⁿz over 200 steps.
fn check_cocycle_conjugacy(_tier: Tier) -> Result<Verdict> {
    let mut rng = rng(0x22);
    let mut worst_conj = 0.0f64;
    let mut worst_det = 0.0f64;
    for _ in 0..1000 {
        let a = rand_disk(&mut rng, 0.95);
        let b = rand_disk(&mut rng, 0.95);
        let z = rand_circle(&mut rng);
        worst_conj = worst_conj.max(conjugacy_defect(a, b, z));
        let minus_one = c64(-1.0, 0.0);
        worst_det = worst_det
            .max((gz_p(a, z).det() - minus_one).norm())
            .max((gz_q(b).det() - minus_one).norm());
    }
    if worst_conj > 1e-12 {
        return fail(format!("conjugacy defect {worst_conj:.3e} > 1e-12"));
    }
    if worst_det > 1e-12 {
        return fail(format!("determinant defect {worst_det:.3e} > 1e-12"));
    }
    // The determinant identity is only float-stable where the transfer
    // stays bounded, so pick z with an elliptic period-2 monodromy.
    let alphas: Vec<C64> = (0..2).map(|_| rand_disk(&mut rng, 0.5)).collect();
    let model = CoinModel::explicit_alphas(alphas)?;
    let aw = model.alphas(-1, 202)?;
    let mut z = c64(0.0, 1.0);
    for tries in 0..1000 {
        let cand = rand_circle(&mut rng);
        let t = transfer(&aw, CocycleKind::Gz, 2, 0, cand).trace();
        if t.re.abs() < 1.8 && t.im.abs() < 1e-9 {
            z = cand;
            break;
        }
        if tries == 999 {
            return fail("no elliptic spectral point found in 1000 draws".into());
        }
    }
    let mut worst_w = 0.0f64;
    for n in 0..200i64 {
        let w = solution_basis(&aw, z, n).det();
        worst_w = worst_w.max((w - wronskian_expected(z, n)).norm());
    }
    if worst_w > 1e-10 {
        return fail(format!("Wronskian drift {worst_w:.3e} > 1e-10 within 200 steps"));
    }
    pass(format!(
        "1000 samples: conjugacy ≤ {worst_conj:.2e}, det defect ≤ {worst_det:.2e}; \
         Wronskian drift ≤ {worst_w:.2e} over 200 steps"
    ))
}

/// The three models shared by the averaging and contour checks.
fn averaging_models() -> Result<Vec<(&'static str, CoinModel)>> {
    let mut rng = rng(0x33);
    let alphas: Vec<C64> = (0..8).map(|_| rand_disk(&mut rng, 0.7)).collect();
    Ok(vec![
        ("identity", CoinModel::free()),
        ("8-periodic", CoinModel::explicit_alphas(alphas)?),
        ("fibonacci", CoinModel::fibonacci(1.2, 0.7)?),
    ])
}

/// Exponentially weighted time averages against the circle integral of the
/// resolvent, K ∈ {5, 10, 20}, window half-width 40K, 512 nodes.
fn check_spectral_averaging(_tier: Tier) -> Result<Verdict> {
    let mut worst = 0.0f64;
    for (name, model) in averaging_models()? {
        for cap in [5.0f64, 10.0, 20.0] {
            let half = 40 * cap as i64;
            let w = Window::covering(-half, half);
            let op = CmvOperator::from_model(&model, w, Closure::Decouple)?;
            for n in [0i64, 1, -3, 7] {
                let d = parseval_defect(&op, &delta_0(), n, cap, 512)?;
                worst = worst.max(d);
                if d > 1e-6 {
                    return fail(format!(
                        "{name}, K = {cap}, site {n}: averaging defect {d:.3e} > 1e-6"
                    ));
                }
            }
        }
    }
    pass(format!(
        "3 models, K ∈ {{5, 10, 20}}, 4 sites: max defect {worst:.2e}"
    ))
}

/// Matrix elements of ℰᵏ against the contour integral of the resolvent,
/// k ≤ 20, 512 nodes, same model family as the averaging check.
fn check_resolvent_contour(_tier: Tier) -> Result<Verdict> {
    let w = Window::covering(-800, 800);
    let mut worst = 0.0f64;
    for (name, model) in averaging_models()? {
        let op = CmvOperator::from_model(&model, w, Closure::Decouple)?;
        for k in 0..=20u64 {
            for n in [0i64, 3, -6] {
                let d = contour_defect(&op, n, k, 512)?;
                worst = worst.max(d);
                if d > 1e-6 {
                    return fail(format!(
                        "{name}, k = {k}, site {n}: contour defect {d:.3e} > 1e-6"
                    ));
                }
            }
        }
    }
    pass(format!("3 models, k ≤ 20, 3 sites: max defect {worst:.2e}"))
}

/// Free walk: first-moment exponent 1 ± 0.01 over two decades and one-site
/// support {2k} of the step-k profile.
fn check_free_walk_transport(tier: Tier) -> Result<Verdict> {
    let k_max: u64 = match tier {
        Tier::Quick => 1000,
        Tier::Full => 10_000,
    };
    let half = 2 * k_max as i64 + 4;
    let w = Window::covering(-half, half);
    let op = CmvOperator::from_model(&CoinModel::free(), w, Closure::Decouple)?;
    let opts = RunOptions {
        k_max,
        p_grid: vec![1.0],
        snapshot_ks: vec![5, 17, 100],
        average_caps: vec![],
        norm_tol: 1e-8,
        ..RunOptions::default()
    };
    let out = run_evolution(op, &delta_0(), &opts)?;
    let lo = if k_max >= 10_000 { 100 } else { k_max / 100 };
    let ks = log_grid_u64(lo.max(2), k_max, 13);
    let grid: Vec<(f64, f64)> = ks
        .iter()
        .map(|&k| (k as f64, out.moments[0][k as usize]))
        .collect();
    let est = estimate_beta(&grid, 1.0)?;
    if (est.slope - 1.0).abs() > 0.01 {
        return fail(format!(
            "first-moment exponent {:.4} outside 1 ± 0.01",
            est.slope
        ));
    }
    for snap in &out.snapshots {
        let target = 2 * snap.k as i64;
        for (i, &v) in snap.values.iter().enumerate() {
            let site = snap.offset + i as i64;
            let want = if site == target { 1.0 } else { 0.0 };
            if (v - want).abs() > 1e-14 {
                return fail(format!(
                    "step {}: profile at site {site} is {v:.3e}, expected {want}",
                    snap.k
                ));
            }
        }
    }
    pass(format!(
        "exponent {:.4} over [{}, {k_max}]; steps 5, 17, 100 supported on {{2k}} to 1e-14",
        est.slope, ks[0]
    ))
}

/// Scan min |Im λ(θ)| over the fiber eigenvalues, refined by golden-section
/// around the coarse minimum.
fn gap_edge(alpha: &PeriodicAlphas, coarse: usize) -> Result<(f64, f64)> {
    let f = |theta: f64| -> Result<f64> {
        let cell = floquet_cell(alpha, theta)?;
        Ok(cell
            .lambdas
            .iter()
            .map(|l| l.im.abs())
            .fold(f64::INFINITY, f64::min))
    };
    let mut best = (0usize, f64::INFINITY);
    let mut global_min = f64::INFINITY;
    for i in 0..coarse {
        let v = f(TAU * i as f64 / coarse as f64)?;
        global_min = global_min.min(v);
        if v < best.1 {
            best = (i, v);
        }
    }
    let h = TAU / coarse as f64;
    let (mut lo, mut hi) = (best.0 as f64 * h - h, best.0 as f64 * h + h);
    let inv_phi = 0.618_033_988_749_894_9f64;
    let (mut x1, mut x2) = (hi - inv_phi * (hi - lo), lo + inv_phi * (hi - lo));
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    for _ in 0..90 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok((global_min, f1.min(f2)))
}

/// Ballistic transport for 2- and 4-periodic coins: moment exponents
/// 1 ± 0.05, Heisenberg position against the velocity operator, and the
/// spectral gap edge of the half-gap model at |Im z| = 3/4.
fn check_periodic_ballistic(tier: Tier) -> Result<Verdict> {
    let (horizon, slope_tol, residual_tol) = match tier {
        Tier::Quick => (400u64, 0.10, 0.2),
        Tier::Full => (2000u64, 0.05, 0.05),
    };
    let mut rng = rng(0x66);
    let models: Vec<(&str, Vec<C64>)> = vec![
        ("half-gap", vec![c64(0.0, 0.0), c64(-0.75, 0.0)]),
        ("random-4", (0..4).map(|_| rand_disk(&mut rng, 0.8)).collect()),
    ];
    let mut slopes = Vec::new();
    let mut residuals = Vec::new();
    for (name, alphas) in &models {
        let model = CoinModel::explicit_alphas(alphas.clone())?;
        let half = 2 * horizon as i64 + 4;
        let w = Window::covering(-half, half);
        let op = CmvOperator::from_model(&model, w, Closure::Decouple)?;
        let opts = RunOptions {
            k_max: horizon,
            p_grid: vec![1.0, 2.0],
            snapshot_ks: vec![],
            average_caps: vec![],
            norm_tol: 1e-8,
            ..RunOptions::default()
        };
        let out = run_evolution(op, &delta_0(), &opts)?;
        let ks = log_grid_u64((horizon / 100).max(2), horizon, 13);
        for (pi, p) in [1.0f64, 2.0].iter().enumerate() {
            let grid: Vec<(f64, f64)> = ks
                .iter()
                .map(|&k| (k as f64, out.moments[pi][k as usize]))
                .collect();
            let est = estimate_beta(&grid, *p)?;
            if (est.slope - 1.0).abs() > slope_tol {
                return fail(format!(
                    "{name}: p = {p} exponent {:.4} outside 1 ± {slope_tol}",
                    est.slope
                ));
            }
            slopes.push(est.slope);
        }
        let pa = PeriodicAlphas::new(alphas.clone())?;
        let report = ballistic_check(&pa, &delta_0(), &[horizon], 64)?;
        let sample = &report.samples[0];
        if sample.residual > residual_tol * report.j_norm {
            return fail(format!(
                "{name}: ‖X(L)/L ψ − Jψ‖ = {:.3e} exceeds {residual_tol}·‖Jψ‖ = {:.3e} at L = {horizon}",
                sample.residual,
                residual_tol * report.j_norm
            ));
        }
        residuals.push(sample.residual / report.j_norm);
    }
    let pa = PeriodicAlphas::new(models[0].1.clone())?;
    let (global_min, edge) = gap_edge(&pa, 2048)?;
    if global_min < 0.75 - 1e-6 {
        return fail(format!(
            "fiber eigenvalue intrudes into the gap: min |Im λ| = {global_min:.9}"
        ));
    }
    if (edge - 0.75).abs() > 1e-6 {
        return fail(format!(
            "band edge at |Im λ| = {edge:.9}, expected 0.75 ± 1e-6"
        ));
    }
    let cloud = fiber_spectrum_union(&pa, 1024)?;
    let phi0 = 0.75f64.asin();
    let target: Vec<C64> = (0..2048)
        .map(|i| {
            let t = i as f64 / 2048.0;
            let (arc, s) = if i % 2 == 0 { (1.0, t) } else { (-1.0, t - 1.0 / 2048.0) };
            let phi = phi0 + (std::f64::consts::PI - 2.0 * phi0) * s;
            C64::from_polar(1.0, if arc > 0.0 { phi } else { -phi })
        })
        .collect();
    let hd = hausdorff(&cloud, &target);
    if hd > 1e-2 {
        return fail(format!(
            "fiber spectrum vs |Im z| ≥ 3/4 arcs: Hausdorff distance {hd:.3e} > 1e-2"
        ));
    }
    pass(format!(
        "exponents {} at horizon {horizon}; residual ratios {}; gap edge {edge:.8}, coverage {hd:.1e}",
        slopes.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join("/"),
        residuals.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join("/")
    ))
}

/// Finite-difference derivative of the twisted fiber against (i/p)·B̃:
/// halving dθ must shrink the defect by ≈ 4 (second-order stencil).
fn check_commutator_scaling(_tier: Tier) -> Result<Verdict> {
    let mut rng = rng(0x77);
    let mut worst_analytic = 0.0f64;
    let mut ratios = Vec::new();
    for p in [2usize, 4] {
        let alphas: Vec<C64> = (0..p).map(|_| rand_disk(&mut rng, 0.8)).collect();
        let pa = PeriodicAlphas::new(alphas)?;
        for _ in 0..16 {
            let theta = rng.gen_range(0.0..TAU);
            let wide = commutator_identity_defect(&pa, theta, 1e-4)?;
            let narrow = commutator_identity_defect(&pa, theta, 5e-5)?;
            worst_analytic = worst_analytic.max(wide.analytic_defect);
            let ratio = wide.fd_defect / narrow.fd_defect;
            if !(3.5..=4.5).contains(&ratio) {
                return fail(format!(
                    "p = {p}, θ = {theta:.4}: defect ratio {ratio:.3} outside [3.5, 4.5]"
                ));
            }
            ratios.push(ratio);
        }
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    pass(format!(
        "32 cells (p ∈ {{2, 4}}): mean halving ratio {mean:.3}, analytic defect ≤ {worst_analytic:.1e}"
    ))
}

/// Trace orbit against the transfer-matrix half-traces at doubled Fibonacci
/// times, conservation of the orbit invariant, and its closed form.
fn check_trace_orbit_invariant(_tier: Tier) -> Result<Verdict> {
    let mut rng = rng(0x88);
    let mut worst_rel = 0.0f64;
    let mut worst_drift = 0.0f64;
    for trial in 0..10 {
        let ta = rng.gen_range(0.3..1.25);
        let tb = rng.gen_range(0.3..1.25);
        let theta = rng.gen_range(0.0..TAU);
        let orbit = fib_orbit(ta, tb, theta, 12, 0.25)?;
        worst_drift = worst_drift.max(orbit_invariant_drift(&orbit));
        let model = CoinModel::fibonacci(ta, tb)?;
        let z = C64::from_polar(1.0, theta);
        for k in 0..=12i64 {
            let n = 2 * fib_u64(k) as i64;
            let aw = model.alphas(0, n)?;
            let m = transfer_scaled(&aw, CocycleKind::Gz, n, 0, z);
            let half = m.m.trace() * 0.5;
            let defect = match orbit.value(k) {
                Some(x) if x.abs() < 1e12 && m.log_scale == 0.0 => {
                    (x - half.re).abs() / x.abs().max(1.0)
                }
                _ => {
                    let lc = half.norm().ln() + m.log_scale;
                    if orbit.sign(k) != half.re.signum() {
                        return fail(format!(
                            "trial {trial}, level {k}: trace sign mismatch after escape"
                        ));
                    }
                    (orbit.ln_abs(k) - lc).abs() / lc.abs().max(1.0)
                }
            };
            worst_rel = worst_rel.max(defect);
            if defect > 1e-8 {
                return fail(format!(
                    "trial {trial}, level {k}: orbit vs transfer trace defect {defect:.3e} > 1e-8"
                ));
            }
        }
        if worst_drift > 1e-8 {
            return fail(format!(
                "trial {trial}: invariant drift {worst_drift:.3e} > 1e-8"
            ));
        }
    }
    let mut worst_closed = 0.0f64;
    for _ in 0..200 {
        let ta = rng.gen_range(0.3..1.25);
        let tb = rng.gen_range(0.3..1.25);
        let theta = rng.gen_range(0.0..TAU);
        let (xm1, x0, x1) = fib_initial_traces(ta, tb, theta)?;
        let d = (fricke_vogt(xm1, x0, x1) - invariant_closed_form(ta, tb, theta)?).abs();
        worst_closed = worst_closed.max(d);
        if d > 1e-10 {
            return fail(format!(
                "closed-form invariant defect {d:.3e} > 1e-10 at ({ta:.3}, {tb:.3}, {theta:.3})"
            ));
        }
    }
    for theta in [0.0, std::f64::consts::PI] {
        let (xm1, x0, x1) = fib_initial_traces(0.9, 0.5, theta)?;
        let v = fricke_vogt(xm1, x0, x1).abs();
        if v > 1e-12 {
            return fail(format!("invariant at z = ±1 is {v:.3e}, expected 0"));
        }
    }
    pass(format!(
        "12 levels × 10 orbits: trace defect ≤ {worst_rel:.1e}, drift ≤ {worst_drift:.1e}; \
         closed form ≤ {worst_closed:.1e} on 200 samples, zero at z = ±1"
    ))
}

/// Large-coupling band hierarchy: 2F_k bands per level, every band typed,
/// and the substitution nesting rules.
fn check_band_hierarchy(tier: Tier) -> Result<Verdict> {
    let k_max = match tier {
        Tier::Quick => 6i64,
        Tier::Full => 8,
    };
    let mut by_level = band_hierarchy(TraceModel::Fibonacci, 1.55, 0.9, k_max, 0)?;
    for (i, set) in by_level.iter().enumerate() {
        let level = i as i64 - 1;
        let want = 2 * fib_u64(level);
        if set.len() as u64 != want {
            return fail(format!(
                "level {level}: {} bands, expected {want}",
                set.len()
            ));
        }
    }
    for level in 0..=k_max {
        let (head, tail) = by_level.split_at_mut((level + 1) as usize);
        let prev1 = &head[level as usize];
        let prev2: &[_] = if level >= 1 { &head[(level - 1) as usize] } else { &[] };
        let untyped = classify_bands(prev2, prev1, &mut tail[0]);
        if untyped != 0 {
            return fail(format!("level {level}: {untyped} untyped bands"));
        }
    }
    if !by_level[1].iter().all(|b| b.band_type == BandType::A) {
        return fail("level 0 contains a non-A band".into());
    }
    if !by_level[2].iter().all(|b| b.band_type == BandType::B) {
        return fail("level 1 contains a non-B band".into());
    }
    for level in 0..=(k_max - 2) {
        for parent in &by_level[(level + 1) as usize] {
            let c1 = count_children(parent, &by_level[(level + 2) as usize]);
            let c2 = count_children(parent, &by_level[(level + 3) as usize]);
            let want = match parent.band_type {
                BandType::A => (0, 1),
                BandType::B => (1, 2),
                BandType::Untyped => unreachable!("classified above"),
            };
            if (c1, c2) != want {
                return fail(format!(
                    "{:?} parent at level {level}: children ({c1}, {c2}), expected {want:?}",
                    parent.band_type
                ));
            }
        }
    }
    let total: usize = by_level.iter().map(Vec::len).sum();
    pass(format!(
        "levels -1..={k_max}: counts 2F_k, all typed, nesting (A: 0/1, B: 1/2) on {total} bands"
    ))
}

/// Escaping trace orbits obey the doubly exponential lower bound
/// |x_{k0+j}| ≥ (1 + δ/2)^{F_{j-1}}.
fn check_escape_growth(_tier: Tier) -> Result<Verdict> {
    let mut rng = rng(0x1010);
    let mut found = 0usize;
    let mut tries = 0usize;
    let mut worst = f64::NEG_INFINITY;
    while found < 100 && tries < 2000 {
        tries += 1;
        let theta = rng.gen_range(0.0..TAU);
        let orbit = fib_orbit(1.55, 0.9, theta, 30, 0.25)?;
        if orbit.escape.is_none() {
            continue;
        }
        found += 1;
        match escape_growth_defect(&orbit) {
            Some(d) => {
                worst = worst.max(d);
                if d > 1e-9 {
                    return fail(format!(
                        "θ = {theta:.6}: growth bound violated by log-margin {d:.3e}"
                    ));
                }
            }
            None => return fail(format!("θ = {theta:.6}: escape without growth data")),
        }
    }
    if found < 100 {
        return fail(format!("only {found} escaping orbits in {tries} samples"));
    }
    pass(format!(
        "100 escaping orbits in {tries} samples: worst log-margin {worst:.2e} (≤ 0 means bound holds)"
    ))
}

/// Closed spectral gaps of the doubling-word model: the level-k trace zero
/// forces all deeper monodromies to the identity.
fn check_closed_gap_collapse(_tier: Tier) -> Result<Verdict> {
    let mut count = 0usize;
    let mut worst_m = 0.0f64;
    let mut worst_t = 0.0f64;
    for k in 1..=6i64 {
        // Search depth k + 4 so the recorded defects are maxed over
        // j ∈ [k + 2, k + 4] exactly.
        let gaps = tm_closed_gap_search(0.9, 0.4, k + 4)?;
        for g in gaps.iter().filter(|g| g.k == k) {
            count += 1;
            worst_m = worst_m.max(g.monodromy_defect);
            worst_t = worst_t.max(g.trace_defect);
            if g.monodromy_defect > 1e-8 || g.trace_defect > 1e-8 {
                return fail(format!(
                    "gap at level {}, θ = {:.6}: ‖M_j − I‖ = {:.3e}, |t_j − 2| = {:.3e}",
                    g.k, g.theta, g.monodromy_defect, g.trace_defect
                ));
            }
        }
    }
    if count == 0 {
        return fail("no closed gaps found for k ≤ 6".into());
    }
    pass(format!(
        "{count} closed gaps (k ≤ 6): max ‖M_j − I‖ = {worst_m:.1e}, max |t_j − 2| = {worst_t:.1e} \
         through level k + 4"
    ))
}

/// Balanced rotation-pair polymer: criticality of the transfer cocycle at
/// z = 1 and near-ballistic averaged transport for the seeded word.
fn check_critical_polymer_transport(tier: Tier) -> Result<Verdict> {
    let chains = vec![
        vec![Coin::rotation(0.3)?, Coin::rotation(-0.3)?],
        vec![Coin::rotation(1.1)?, Coin::rotation(-1.1)?],
    ];
    let model = PolymerModel::new(chains, PolymerWord::Seeded(7))?;
    let crit = is_critical(&model, c64(1.0, 0.0), 1e-12)?;
    if !crit.critical {
        return fail(format!(
            "balanced polymer not critical at z = 1: {} failures, commutator defect {:.3e}",
            crit.failures.len(),
            crit.commutator_defect
        ));
    }
    let (horizon, threshold) = match tier {
        Tier::Quick => (400.0f64, 0.5),
        Tier::Full => (1e4, 0.8),
    };
    let k_max = k_star(horizon);
    let half = 2 * (k_max as i64 + 2) + 8;
    let w = Window::covering(-half, half);
    let op = CmvOperator::from_model(&CoinModel::Polymer(model), w, Closure::Decouple)?;
    let caps = log_grid(horizon / 100.0, horizon, 13);
    let opts = RunOptions {
        k_max,
        p_grid: vec![],
        snapshot_ks: vec![],
        average_caps: caps,
        norm_tol: 1e-8,
        ..RunOptions::default()
    };
    let out = run_evolution(op, &delta_0(), &opts)?;
    let grid: Vec<(f64, f64)> = out
        .averages
        .iter()
        .map(|a| (a.cap_k, moment_of_profile(a.offset, &a.values, 10.0)))
        .collect();
    let est = estimate_beta(&grid, 10.0)?;
    if est.lower < threshold {
        return fail(format!(
            "averaged p = 10 exponent lower bound {:.4} < {threshold} at K = {horizon:.0}",
            est.lower
        ));
    }
    pass(format!(
        "critical at z = 1 (tol 1e-12); averaged exponent lower bound {:.3} ≥ {threshold} at K = {horizon:.0}",
        est.lower
    ))
}

/// Large-coupling transport window: measured exponents against the
/// predicted bounds (qualitative regime check).
fn check_coupling_window(tier: Tier) -> Result<Verdict> {
    if tier == Tier::Quick {
        return skip("horizon 10⁴ beyond the quick tier");
    }
    let win = fibonacci_dynamical_window(1.55, 0.9, 10.0, 1e4, 0.1, 32.0)?;
    win.check()?;
    if win.beta_plain_upper >= 0.9 {
        return fail(format!(
            "plain exponent upper bound {:.4} not below 0.9",
            win.beta_plain_upper
        ));
    }
    pass(format!(
        "qualitative: averaged lower {:.3} ≥ {:.3} − 0.1, plain upper {:.3} ≤ {:.3} + 0.1 and < 0.9",
        win.beta_avg_lower, win.predicted_lower, win.beta_plain_upper, win.predicted_upper
    ))
}

/// Spectrally localized model: the inverse squared transfer maximum,
/// integrated over the circle, decays faster than any power of K.
fn check_integrand_decay(tier: Tier) -> Result<Verdict> {
    if tier == Tier::Quick {
        return skip("decay search extends beyond the quick-tier horizon");
    }
    let report = coupling_report(1.55, 0.9, 6, None)?;
    let xi = report
        .xi
        .ok_or_else(|| Error::Invariant("no usable escape rate ξ".into()))?;
    let model = CoinModel::fibonacci(1.55, 0.9)?;
    let rule = WindowRule::FibonacciEscape { xi };
    let search = superpolynomial_decay_search(&model, &rule, 10.0, 100.0, 4, 3, 96, 1)?;
    if !search.superpolynomial {
        return fail(format!(
            "trailing-decade slopes ({:.2}, {:.2}) not both ≤ -8 after {} extensions",
            search.sweep.slope_right, search.sweep.slope_left, search.extensions
        ));
    }
    pass(format!(
        "trailing-decade slopes ({:.1}, {:.1}) ≤ -8 after {} grid extensions (K up to {:.0})",
        search.sweep.slope_right,
        search.sweep.slope_left,
        search.extensions,
        search.sweep.rows.last().map(|r| r.k).unwrap_or(0.0)
    ))
}
