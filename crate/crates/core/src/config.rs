//! Run configuration: a flat `key = value` text format with dotted section
//! keys. Parsing is strict — unknown or duplicate keys are errors — and a
//! parsed config re-serializes to a canonical form that parses back to the
//! same value.

use crate::coin::{Coin, PolymerModel, PolymerWord};
use crate::error::{Error, Result};
use crate::mat2::{c64, C64, Mat2};
use crate::verblunsky::{CoinModel, GaugeAnchor};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Which pipeline a run drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Simulate,
    Spectrum,
    Tracemap,
    Floquet,
    Bounds,
    Verify,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Spectrum => "spectrum",
            Task::Tracemap => "tracemap",
            Task::Floquet => "floquet",
            Task::Bounds => "bounds",
            Task::Verify => "verify",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        Ok(match s {
            "simulate" => Task::Simulate,
            "spectrum" => Task::Spectrum,
            "tracemap" => Task::Tracemap,
            "floquet" => Task::Floquet,
            "bounds" => Task::Bounds,
            "verify" => Task::Verify,
            other => return Err(Error::Config(format!("unknown task `{other}`"))),
        })
    }
}

/// A coin written in the config syntax.
#[derive(Clone, Debug, PartialEq)]
pub enum CoinSpec {
    /// `rotation(θ)`, θ in radians.
    Rotation(f64),
    /// `identity`
    Identity,
    /// `matrix(q11, q12, q21, q22)`, row-major complex entries.
    Matrix([C64; 4]),
}

impl CoinSpec {
    pub fn parse(s: &str) -> Result<CoinSpec> {
        let s = s.trim();
        if s == "identity" {
            return Ok(CoinSpec::Identity);
        }
        if let Some(arg) = call_arg(s, "rotation") {
            return Ok(CoinSpec::Rotation(parse_f64(arg)?));
        }
        if let Some(args) = call_arg(s, "matrix") {
            let parts = split_top_level(args);
            if parts.len() != 4 {
                return Err(Error::Config(format!(
                    "matrix(...) needs 4 entries, got {} in `{s}`",
                    parts.len()
                )));
            }
            let mut q = [c64(0.0, 0.0); 4];
            for (slot, part) in q.iter_mut().zip(&parts) {
                *slot = parse_complex(part)?;
            }
            return Ok(CoinSpec::Matrix(q));
        }
        Err(Error::Config(format!("unrecognized coin spec `{s}`")))
    }

    pub fn emit(&self) -> String {
        match self {
            CoinSpec::Rotation(t) => format!("rotation({})", fmt_f64(*t)),
            CoinSpec::Identity => "identity".into(),
            CoinSpec::Matrix(q) => format!(
                "matrix({}, {}, {}, {})",
                fmt_complex(q[0]),
                fmt_complex(q[1]),
                fmt_complex(q[2]),
                fmt_complex(q[3])
            ),
        }
    }

    pub fn build(&self) -> Result<Coin> {
        match self {
            CoinSpec::Rotation(t) => Coin::rotation(*t),
            CoinSpec::Identity => Ok(Coin::identity()),
            CoinSpec::Matrix(q) => Coin::new(Mat2 {
                a: q[0],
                b: q[1],
                c: q[2],
                d: q[3],
            }),
        }
    }
}

/// Polymer word selector: `seeded(s)` or `periodic(i0, i1, ...)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WordSpec {
    Seeded(u64),
    Periodic(Vec<usize>),
}

impl WordSpec {
    pub fn parse(s: &str) -> Result<WordSpec> {
        let s = s.trim();
        if let Some(arg) = call_arg(s, "seeded") {
            return Ok(WordSpec::Seeded(parse_u64(arg)?));
        }
        if let Some(args) = call_arg(s, "periodic") {
            let idx: Result<Vec<usize>> = split_top_level(args)
                .iter()
                .map(|p| parse_usize(p))
                .collect();
            return Ok(WordSpec::Periodic(idx?));
        }
        Err(Error::Config(format!("unrecognized word spec `{s}`")))
    }

    pub fn emit(&self) -> String {
        match self {
            WordSpec::Seeded(s) => format!("seeded({s})"),
            WordSpec::Periodic(v) => {
                let inner: Vec<String> = v.iter().map(|i| i.to_string()).collect();
                format!("periodic({})", inner.join(", "))
            }
        }
    }
}

/// Coin sequence section of a config.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: String,
    pub coins: Vec<CoinSpec>,
    pub theta_a: Option<f64>,
    pub theta_b: Option<f64>,
    pub chains: Vec<Vec<CoinSpec>>,
    pub word: Option<WordSpec>,
    pub alphas: Vec<C64>,
    pub gauge_anchor_even: Option<C64>,
    pub gauge_anchor_odd: Option<C64>,
}

impl ModelSpec {
    fn angles(&self) -> Result<(f64, f64)> {
        match (self.theta_a, self.theta_b) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Config(format!(
                "model.kind = {} requires model.theta_a and model.theta_b",
                self.kind
            ))),
        }
    }

    pub fn anchor(&self) -> GaugeAnchor {
        let mut anchor = GaugeAnchor::default();
        if let Some(e) = self.gauge_anchor_even {
            anchor.even = e;
        }
        if let Some(o) = self.gauge_anchor_odd {
            anchor.odd = o;
        }
        anchor
    }

    pub fn build(&self) -> Result<CoinModel> {
        match self.kind.as_str() {
            "periodic" => {
                if self.coins.is_empty() {
                    return Err(Error::Config(
                        "model.kind = periodic requires model.coins".into(),
                    ));
                }
                let coins: Result<Vec<Coin>> = self.coins.iter().map(CoinSpec::build).collect();
                Ok(CoinModel::Periodic { coins: coins? })
            }
            "fibonacci" => {
                let (a, b) = self.angles()?;
                CoinModel::fibonacci(a, b)
            }
            "thue_morse" => {
                let (a, b) = self.angles()?;
                CoinModel::thue_morse(a, b)
            }
            "polymer" => {
                let word = match &self.word {
                    Some(WordSpec::Seeded(s)) => PolymerWord::Seeded(*s),
                    Some(WordSpec::Periodic(v)) => PolymerWord::Periodic(v.clone()),
                    None => {
                        return Err(Error::Config(
                            "model.kind = polymer requires model.word".into(),
                        ))
                    }
                };
                let mut chains = Vec::with_capacity(self.chains.len());
                for specs in &self.chains {
                    let chain: Result<Vec<Coin>> = specs.iter().map(CoinSpec::build).collect();
                    chains.push(chain?);
                }
                Ok(CoinModel::Polymer(PolymerModel::new(chains, word)?))
            }
            "explicit" => {
                if self.alphas.is_empty() {
                    return Err(Error::Config(
                        "model.kind = explicit requires model.alphas".into(),
                    ));
                }
                CoinModel::explicit_alphas(self.alphas.clone())
            }
            other => Err(Error::Config(format!("unknown model.kind `{other}`"))),
        }
    }
}

/// One run, as declared in a config file. Optional fields keep the value
/// only when the key was present, so serialization round-trips exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<String>,
    pub model: Option<ModelSpec>,
    /// Remaining task parameters as typed-on-read strings, keyed by the full
    /// dotted name. Only keys in the task's whitelist survive parsing.
    pub params: BTreeMap<String, String>,
}

const TASK_KEYS: &[(&str, &[&str])] = &[
    (
        "simulate",
        &[
            "simulate.k_max",
            "simulate.p_grid",
            "simulate.snapshots",
            "simulate.average_caps",
            "simulate.window_half",
            "simulate.state_site",
            "simulate.norm_tol",
        ],
    ),
    (
        "spectrum",
        &[
            "spectrum.lo",
            "spectrum.hi",
            "spectrum.closure",
            "spectrum.dump_matrix",
        ],
    ),
    (
        "tracemap",
        &[
            "tracemap.orbit_z",
            "tracemap.orbit_k",
            "tracemap.levels",
            "tracemap.grid_density",
            "tracemap.gaps_n",
        ],
    ),
    (
        "floquet",
        &["floquet.velocity_grid", "floquet.spectrum_blocks"],
    ),
    (
        "bounds",
        &[
            "bounds.mode",
            "bounds.gamma",
            "bounds.c",
            "bounds.radii",
            "bounds.target",
            "bounds.samples",
            "bounds.p",
            "bounds.k_lo",
            "bounds.k_hi",
            "bounds.points_per_decade",
            "bounds.max_extensions",
            "bounds.base_nodes",
            "bounds.refine_rounds",
            "bounds.rule",
            "bounds.horizon",
            "bounds.tolerance",
            "bounds.mu_threshold",
        ],
    ),
    ("verify", &["verify.level"]),
];

fn param_whitelist() -> Vec<&'static str> {
    TASK_KEYS.iter().flat_map(|(_, ks)| ks.iter().copied()).collect()
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut map = parse_kv(text)?;
        let task = Task::parse(&take_required(&mut map, "task")?)?;
        let seed = take_opt(&mut map, "seed")?.map(|v| parse_u64(&v)).transpose()?;
        let threads = take_opt(&mut map, "threads")?
            .map(|v| parse_usize(&v))
            .transpose()?;
        let out = take_opt(&mut map, "out")?;

        let model = parse_model(&mut map)?;

        let mut params = BTreeMap::new();
        for key in param_whitelist() {
            if let Some(v) = take_opt(&mut map, key)? {
                params.insert(key.to_string(), canonicalize_param(key, &v)?);
            }
        }

        if !map.is_empty() {
            let mut unknown: Vec<&String> = map.keys().collect();
            unknown.sort();
            let listed: Vec<String> = unknown.iter().map(|k| format!("`{k}`")).collect();
            return Err(Error::Config(format!(
                "unknown config key(s): {}",
                listed.join(", ")
            )));
        }

        Ok(RunConfig {
            task,
            seed,
            threads,
            out,
            model,
            params,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task = {}", self.task.name());
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed = {seed}");
        }
        if let Some(threads) = self.threads {
            let _ = writeln!(s, "threads = {threads}");
        }
        if let Some(out) = &self.out {
            let _ = writeln!(s, "out = {out}");
        }
        if let Some(m) = &self.model {
            let _ = writeln!(s, "model.kind = {}", m.kind);
            if !m.coins.is_empty() {
                let list: Vec<String> = m.coins.iter().map(CoinSpec::emit).collect();
                let _ = writeln!(s, "model.coins = {}", list.join(", "));
            }
            if let Some(a) = m.theta_a {
                let _ = writeln!(s, "model.theta_a = {}", fmt_f64(a));
            }
            if let Some(b) = m.theta_b {
                let _ = writeln!(s, "model.theta_b = {}", fmt_f64(b));
            }
            for (i, chain) in m.chains.iter().enumerate() {
                let list: Vec<String> = chain.iter().map(CoinSpec::emit).collect();
                let _ = writeln!(s, "model.chain.{i} = {}", list.join(", "));
            }
            if let Some(w) = &m.word {
                let _ = writeln!(s, "model.word = {}", w.emit());
            }
            if !m.alphas.is_empty() {
                let list: Vec<String> = m.alphas.iter().map(|&a| fmt_complex(a)).collect();
                let _ = writeln!(s, "model.alphas = {}", list.join(", "));
            }
            if let Some(e) = m.gauge_anchor_even {
                let _ = writeln!(s, "model.gauge_anchor_even = {}", fmt_complex(e));
            }
            if let Some(o) = m.gauge_anchor_odd {
                let _ = writeln!(s, "model.gauge_anchor_odd = {}", fmt_complex(o));
            }
        }
        for (k, v) in &self.params {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn require_model(&self) -> Result<&ModelSpec> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("this task requires a model section".into()))
    }

    fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    pub fn param_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.param(key) {
            Some(v) => parse_f64(v),
            None => Ok(default),
        }
    }

    pub fn param_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.param(key) {
            Some(v) => parse_u64(v),
            None => Ok(default),
        }
    }

    pub fn param_i64(&self, key: &str, default: i64) -> Result<i64> {
        match self.param(key) {
            Some(v) => parse_i64(v),
            None => Ok(default),
        }
    }

    pub fn param_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.param(key) {
            Some(v) => parse_usize(v),
            None => Ok(default),
        }
    }

    pub fn param_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.param(key) {
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::Config(format!("{key} must be true or false, got `{v}`"))),
            None => Ok(default),
        }
    }

    pub fn param_str(&self, key: &str, default: &str) -> String {
        self.param(key).unwrap_or(default).to_string()
    }

    pub fn param_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.param(key) {
            Some(v) => split_top_level(v).iter().map(|p| parse_f64(p)).collect::<Result<Vec<f64>>>().map(Some),
            None => Ok(None),
        }
    }

    pub fn param_u64_list(&self, key: &str) -> Result<Option<Vec<u64>>> {
        match self.param(key) {
            Some(v) => split_top_level(v).iter().map(|p| parse_u64(p)).collect::<Result<Vec<u64>>>().map(Some),
            None => Ok(None),
        }
    }

    pub fn param_complex(&self, key: &str, default: C64) -> Result<C64> {
        match self.param(key) {
            Some(v) => parse_complex(v),
            None => Ok(default),
        }
    }
}

/// Re-emit a parameter value in canonical form so the config round-trips.
fn canonicalize_param(key: &str, raw: &str) -> Result<String> {
    let is_f64_list = matches!(
        key,
        "simulate.p_grid" | "simulate.average_caps" | "bounds.radii"
    );
    let is_u64_list = matches!(key, "simulate.snapshots");
    let is_f64 = matches!(
        key,
        "simulate.norm_tol"
            | "bounds.gamma"
            | "bounds.c"
            | "bounds.p"
            | "bounds.k_lo"
            | "bounds.k_hi"
            | "bounds.horizon"
            | "bounds.tolerance"
            | "bounds.mu_threshold"
    );
    let is_complex = matches!(key, "tracemap.orbit_z");
    if is_f64_list {
        let vals: Result<Vec<f64>> = split_top_level(raw).iter().map(|p| parse_f64(p)).collect();
        let out: Vec<String> = vals?.iter().map(|&v| fmt_f64(v)).collect();
        return Ok(out.join(", "));
    }
    if is_u64_list {
        let vals: Result<Vec<u64>> = split_top_level(raw).iter().map(|p| parse_u64(p)).collect();
        let out: Vec<String> = vals?.iter().map(u64::to_string).collect();
        return Ok(out.join(", "));
    }
    if is_f64 {
        return Ok(fmt_f64(parse_f64(raw)?));
    }
    if is_complex {
        return Ok(fmt_complex(parse_complex(raw)?));
    }
    Ok(raw.trim().to_string())
}

fn parse_model(map: &mut BTreeMap<String, String>) -> Result<Option<ModelSpec>> {
    let kind = match take_opt(map, "model.kind")? {
        Some(k) => k,
        None => {
            // reject orphan model.* keys
            if let Some(k) = map.keys().find(|k| k.starts_with("model.")) {
                return Err(Error::Config(format!(
                    "`{k}` given without model.kind"
                )));
            }
            return Ok(None);
        }
    };
    let coins = match take_opt(map, "model.coins")? {
        Some(v) => split_top_level(&v)
            .iter()
            .map(|p| CoinSpec::parse(p))
            .collect::<Result<Vec<CoinSpec>>>()?,
        None => Vec::new(),
    };
    let theta_a = take_opt(map, "model.theta_a")?.map(|v| parse_f64(&v)).transpose()?;
    let theta_b = take_opt(map, "model.theta_b")?.map(|v| parse_f64(&v)).transpose()?;
    let mut chains = Vec::new();
    loop {
        let key = format!("model.chain.{}", chains.len());
        match take_opt(map, &key)? {
            Some(v) => {
                let chain: Result<Vec<CoinSpec>> = split_top_level(&v)
                    .iter()
                    .map(|p| CoinSpec::parse(p))
                    .collect();
                chains.push(chain?);
            }
            None => break,
        }
    }
    if let Some(k) = map.keys().find(|k| k.starts_with("model.chain.")) {
        return Err(Error::Config(format!(
            "`{k}` skips an index: chains must be numbered 0, 1, ... contiguously"
        )));
    }
    let word = take_opt(map, "model.word")?.map(|v| WordSpec::parse(&v)).transpose()?;
    let alphas = match take_opt(map, "model.alphas")? {
        Some(v) => split_top_level(&v)
            .iter()
            .map(|p| parse_complex(p))
            .collect::<Result<Vec<C64>>>()?,
        None => Vec::new(),
    };
    let gauge_anchor_even = take_opt(map, "model.gauge_anchor_even")?
        .map(|v| parse_complex(&v))
        .transpose()?;
    let gauge_anchor_odd = take_opt(map, "model.gauge_anchor_odd")?
        .map(|v| parse_complex(&v))
        .transpose()?;
    Ok(Some(ModelSpec {
        kind,
        coins,
        theta_a,
        theta_b,
        chains,
        word,
        alphas,
        gauge_anchor_even,
        gauge_anchor_odd,
    }))
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("duplicate key `{key}`")));
        }
    }
    Ok(map)
}

fn take_opt(map: &mut BTreeMap<String, String>, key: &str) -> Result<Option<String>> {
    Ok(map.remove(key))
}

fn take_required(map: &mut BTreeMap<String, String>, key: &str) -> Result<String> {
    map.remove(key)
        .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
}

/// Split on top-level commas, respecting parentheses.
pub fn split_top_level(s: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' => {
                depth += 1;
                cur.push(ch);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                cur.push(ch);
            }
            ',' if depth == 0 => {
                parts.push(cur.trim().to_string());
                cur = String::new();
            }
            _ => cur.push(ch),
        }
    }
    if !cur.trim().is_empty() || !parts.is_empty() {
        parts.push(cur.trim().to_string());
    }
    parts.retain(|p| !p.is_empty());
    parts
}

fn call_arg<'a>(s: &'a str, name: &str) -> Option<&'a str> {
    let body = s.strip_prefix(name)?.trim();
    let inner = body.strip_prefix('(')?.strip_suffix(')')?;
    Some(inner.trim())
}

pub fn parse_f64(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad number `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("non-finite number `{s}`")));
    }
    Ok(v)
}

pub fn parse_u64(s: &str) -> Result<u64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad unsigned integer `{s}`")))
}

pub fn parse_i64(s: &str) -> Result<i64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad integer `{s}`")))
}

pub fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad count `{s}`")))
}

/// Complex literal: `a+bi` or `a-bi` with shortest-round-trip float parts;
/// a bare real `a` is accepted on input.
pub fn parse_complex(s: &str) -> Result<C64> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::Config("empty complex literal".into()));
    }
    if let Some(body) = s.strip_suffix('i') {
        // find the separating sign: a '+'/'-' that is neither leading nor
        // part of an exponent
        let bytes = body.as_bytes();
        let mut split = None;
        for i in (1..bytes.len()).rev() {
            let c = bytes[i] as char;
            if (c == '+' || c == '-') && !matches!(bytes[i - 1] as char, 'e' | 'E') {
                split = Some(i);
                break;
            }
        }
        match split {
            Some(i) => {
                let re = parse_f64(&body[..i])?;
                let sign = if bytes[i] as char == '-' { -1.0 } else { 1.0 };
                let imag_str = body[i + 1..].trim();
                let im = if imag_str.is_empty() {
                    1.0
                } else {
                    parse_f64(imag_str)?
                };
                Ok(c64(re, sign * im))
            }
            None => {
                // pure imaginary: `bi` or bare `i`
                let imag_str = body.trim();
                let im = if imag_str.is_empty() || imag_str == "+" {
                    1.0
                } else if imag_str == "-" {
                    -1.0
                } else {
                    parse_f64(imag_str)?
                };
                Ok(c64(0.0, im))
            }
        }
    } else {
        Ok(c64(parse_f64(s)?, 0.0))
    }
}

/// Shortest round-trip decimal for f64 (std's Display).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_complex(v: C64) -> String {
    if v.im >= 0.0 || v.im.is_nan() {
        format!("{}+{}i", fmt_f64(v.re), fmt_f64(v.im))
    } else {
        format!("{}-{}i", fmt_f64(v.re), fmt_f64(-v.im))
    }
}
