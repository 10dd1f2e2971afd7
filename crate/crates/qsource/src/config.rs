//! Scenario files: TOML with the sections `[hamiltonian]`, `[source]`,
//! `[coupling]`, `[numerics]`, `[local]`, `[semiclassical]` and `[output]`.
//!
//! Parsing goes through permissive raw structs that keep source spans; the
//! validated [`Config`] is what the studies consume and what `run.json` echoes.

use std::fmt;
use std::ops::Range;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use toml::Spanned;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Growth,
    Sweep,
    Spectrum,
    Local,
    Semiclassical,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Growth => "growth",
            Study::Sweep => "sweep",
            Study::Spectrum => "spectrum",
            Study::Local => "local",
            Study::Semiclassical => "semiclassical",
        }
    }
}

/// Validation failure, located in the config file when possible.
#[derive(Debug, Clone)]
pub struct ConfigError {
    pub line: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some((l, c)) => write!(f, "line {l}, column {c}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

fn position(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

/// Positive finite number; rejected at parse time with the value's location.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Positive(pub f64);

impl TryFrom<f64> for Positive {
    type Error = String;
    fn try_from(v: f64) -> Result<Self, String> {
        if v > 0.0 && v.is_finite() {
            Ok(Positive(v))
        } else {
            Err(format!("expected a positive finite number, got {v}"))
        }
    }
}

impl From<Positive> for f64 {
    fn from(p: Positive) -> f64 {
        p.0
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    study: Option<Spanned<Study>>,
    hamiltonian: Option<Spanned<RawHamiltonian>>,
    source: Option<Spanned<RawSource>>,
    #[serde(default)]
    coupling: RawCoupling,
    #[serde(default)]
    numerics: RawNumerics,
    local: Option<Spanned<RawLocal>>,
    semiclassical: Option<Spanned<RawSemiclassical>>,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHamiltonian {
    kind: Spanned<String>,
    a: Option<Positive>,
    matrix: Option<Spanned<Vec<Vec<f64>>>>,
    matrix_im: Option<Spanned<Vec<Vec<f64>>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    state: Spanned<String>,
    sigma: Option<Positive>,
    k: Option<Positive>,
    phi: Option<Spanned<Vec<f64>>>,
    phi_im: Option<Spanned<Vec<f64>>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawCoupling {
    lambda: Option<Spanned<f64>>,
    lambdas: Option<Spanned<Vec<f64>>>,
    lambda_range: Option<Spanned<[f64; 2]>>,
    lambda_count: Option<Spanned<usize>>,
    c: Option<Spanned<f64>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawNumerics {
    dt: Option<Spanned<Positive>>,
    t_max: Option<Spanned<Positive>>,
    ds: Option<Spanned<Positive>>,
    n: Option<Spanned<usize>>,
    length: Option<Positive>,
    scheme: Option<Spanned<String>>,
    boundary_tol: Option<Positive>,
    output_stride: Option<Spanned<usize>>,
    refine_to: Option<Positive>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLocal {
    region: Option<Spanned<[f64; 2]>>,
    indices: Option<Spanned<Vec<usize>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSemiclassical {
    eps: Spanned<Vec<Positive>>,
    thetas: Spanned<Vec<[f64; 4]>>,
    budget: Option<Spanned<usize>>,
    initial: Option<InitialGaussian>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
    plot: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hamiltonian {
    /// `H = x` on the line grid.
    Position,
    /// `H = a p²`.
    Free { a: f64 },
    Matrix { re: Vec<Vec<f64>>, im: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Source {
    LorentzianX,
    #[serde(rename = "gaussian_free_1d")]
    GaussianFree1d { sigma: f64 },
    RadialD3Explicit,
    Matrix { re: Vec<f64>, im: Vec<f64> },
    BandLimited { k: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coupling {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Trapezoid,
    Richardson,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Numerics {
    pub dt: f64,
    pub t_max: f64,
    pub ds: f64,
    pub n: usize,
    pub length: f64,
    pub scheme: SchemeName,
    pub boundary_tol: f64,
    pub output_stride: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine_to: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalRegion {
    Interval([f64; 2]),
    Indices(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialGaussian {
    pub x0: f64,
    pub p0: f64,
    pub sx: Positive,
    pub sp: Positive,
    pub mass: Positive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Semiclassical {
    pub eps: Vec<f64>,
    pub thetas: Vec<[f64; 4]>,
    pub budget: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialGaussian>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Output {
    pub dir: String,
    pub plot: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Config {
    pub study: Study,
    pub hamiltonian: Hamiltonian,
    pub source: Source,
    pub coupling: Coupling,
    pub numerics: Numerics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local: Option<LocalRegion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semiclassical: Option<Semiclassical>,
    pub output: Output,
}

pub const DEFAULT_OUT_DIR: &str = "qsource-out";

struct Ctx<'a> {
    src: &'a str,
}

impl Ctx<'_> {
    fn at(&self, span: Range<usize>, message: impl Into<String>) -> ConfigError {
        ConfigError { line: Some(position(self.src, span.start)), message: message.into() }
    }
    fn top(&self, message: impl Into<String>) -> ConfigError {
        ConfigError { line: None, message: message.into() }
    }
}

/// Parses and validates `src` for `study`; `out` overrides `[output] dir`.
pub fn load(src: &str, study: Study, out: Option<&str>) -> Result<Config, ConfigError> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| ConfigError {
        line: e.span().map(|s| position(src, s.start)),
        message: e.message().trim().to_string(),
    })?;
    let cx = Ctx { src };
    if let Some(s) = &raw.study {
        if *s.get_ref() != study {
            return Err(cx.at(s.span(), format!("file declares study `{}` but `{}` was requested", s.get_ref().name(), study.name())));
        }
    }
    let numerics = numerics(&cx, &raw.numerics, study)?;
    let source_raw = raw.source.as_ref().ok_or_else(|| cx.top("missing [source] section"))?;
    let source = source(&cx, source_raw)?;
    let hamiltonian = hamiltonian(&cx, raw.hamiltonian.as_ref(), &source, source_raw)?;
    let coupling = coupling(&cx, &raw.coupling, study, &numerics)?;

    let needs_grid = matches!(study, Study::Local | Study::Semiclassical)
        || (matches!(source, Source::BandLimited { .. }) && study != Study::Local);
    if needs_grid && !matches!(hamiltonian, Hamiltonian::Matrix { .. }) && !numerics.n.is_power_of_two() {
        let span = raw.numerics.n.as_ref().map(|n| n.span());
        let msg = format!("grid size n = {} must be a power of two", numerics.n);
        return Err(span.map_or_else(|| cx.top(msg.clone()), |s| cx.at(s, msg.clone())));
    }

    let local = match study {
        Study::Local => Some(local(&cx, raw.local.as_ref(), &source, &hamiltonian, &numerics, source_raw)?),
        _ => None,
    };
    let semiclassical = match study {
        Study::Semiclassical => Some(semiclassical(&cx, raw.semiclassical.as_ref(), &source, &numerics, source_raw)?),
        _ => None,
    };
    for (present, name, wanted) in [
        (raw.local.as_ref().map(|s| s.span()), "[local]", Study::Local),
        (raw.semiclassical.as_ref().map(|s| s.span()), "[semiclassical]", Study::Semiclassical),
    ] {
        if let Some(span) = present {
            if study != wanted {
                return Err(cx.at(span, format!("{name} is only valid for the {} study", wanted.name())));
            }
        }
    }
    if study == Study::Local && matches!(source, Source::RadialD3Explicit) {
        return Err(cx.at(source_raw.get_ref().state.span(), "radial_d3_explicit has no lattice state; the local study needs one"));
    }

    let dir = out.map(str::to_string).or(raw.output.dir).unwrap_or_else(|| DEFAULT_OUT_DIR.to_string());
    Ok(Config {
        study,
        hamiltonian,
        source,
        coupling,
        numerics,
        local,
        semiclassical,
        output: Output { dir, plot: raw.output.plot.unwrap_or(true) },
    })
}

fn is_multiple(t: f64, dt: f64) -> bool {
    let n = (t / dt).round();
    n >= 1.0 && (n * dt - t).abs() <= 1e-9 * t.max(dt)
}

fn numerics(cx: &Ctx, r: &RawNumerics, study: Study) -> Result<Numerics, ConfigError> {
    let dt = r.dt.as_ref().map_or(1e-3, |v| v.get_ref().0);
    let t_max = match (&r.t_max, study) {
        (Some(t), _) => t.get_ref().0,
        (None, Study::Spectrum) => 0.0,
        (None, _) => return Err(cx.top("[numerics] t_max is required")),
    };
    if let Some(t) = &r.t_max {
        if !is_multiple(t_max, dt) {
            return Err(cx.at(t.span(), format!("t_max = {t_max} is not a positive multiple of dt = {dt}")));
        }
    }
    let ds = match &r.ds {
        Some(v) => {
            let ds = v.get_ref().0;
            if matches!(study, Study::Local | Study::Semiclassical) && !is_multiple(ds, dt) {
                return Err(cx.at(v.span(), format!("ds = {ds} is not a positive multiple of dt = {dt}")));
            }
            ds
        }
        None => {
            let target = if study == Study::Local { t_max / 100.0 } else { 0.05 };
            (target / dt).round().max(1.0) * dt
        }
    };
    let n = r.n.as_ref().map_or(1024, |v| *v.get_ref());
    if n < 8 {
        return Err(cx.at(r.n.as_ref().unwrap().span(), format!("grid size n = {n} is below 8")));
    }
    let scheme = match r.scheme.as_ref().map(|s| (s.get_ref().as_str(), s.span())) {
        None | Some(("trapezoid", _)) => SchemeName::Trapezoid,
        Some(("richardson", _)) => SchemeName::Richardson,
        Some((other, span)) => {
            return Err(cx.at(span, format!("unknown scheme `{other}` (expected `trapezoid` or `richardson`)")));
        }
    };
    let output_stride = r.output_stride.as_ref().map_or(1, |v| *v.get_ref());
    if output_stride == 0 {
        return Err(cx.at(r.output_stride.as_ref().unwrap().span(), "output_stride must be at least 1"));
    }
    Ok(Numerics {
        dt,
        t_max,
        ds,
        n,
        length: r.length.map_or(256.0, |v| v.0),
        scheme,
        boundary_tol: r.boundary_tol.map_or(1e-6, |v| v.0),
        output_stride,
        refine_to: r.refine_to.map(|v| v.0),
    })
}

fn source(cx: &Ctx, r: &Spanned<RawSource>) -> Result<Source, ConfigError> {
    let s = r.get_ref();
    let span = s.state.span();
    let unused = |name: &str, present: bool| -> Result<(), ConfigError> {
        if present {
            Err(cx.at(span.clone(), format!("`{name}` does not apply to source state `{}`", s.state.get_ref())))
        } else {
            Ok(())
        }
    };
    let state = s.state.get_ref().as_str();
    let out = match state {
        "lorentzian_x" | "radial_d3_explicit" => {
            unused("sigma", s.sigma.is_some())?;
            unused("k", s.k.is_some())?;
            unused("phi", s.phi.is_some() || s.phi_im.is_some())?;
            if state == "lorentzian_x" {
                Source::LorentzianX
            } else {
                Source::RadialD3Explicit
            }
        }
        "gaussian_free_1d" => {
            unused("k", s.k.is_some())?;
            unused("phi", s.phi.is_some() || s.phi_im.is_some())?;
            let sigma = s.sigma.ok_or_else(|| cx.at(span.clone(), "gaussian_free_1d needs `sigma`"))?;
            Source::GaussianFree1d { sigma: sigma.0 }
        }
        "band_limited" => {
            unused("sigma", s.sigma.is_some())?;
            unused("phi", s.phi.is_some() || s.phi_im.is_some())?;
            let k = s.k.ok_or_else(|| cx.at(span.clone(), "band_limited needs the cutoff `k`"))?;
            Source::BandLimited { k: k.0 }
        }
        "matrix" => {
            unused("sigma", s.sigma.is_some())?;
            unused("k", s.k.is_some())?;
            let re = s.phi.as_ref().ok_or_else(|| cx.at(span.clone(), "matrix source needs coefficients `phi`"))?;
            let im = match &s.phi_im {
                Some(im) if im.get_ref().len() != re.get_ref().len() => {
                    return Err(cx.at(im.span(), "phi_im must have the same length as phi"));
                }
                Some(im) => im.get_ref().clone(),
                None => vec![0.0; re.get_ref().len()],
            };
            let re_v = re.get_ref().clone();
            if re_v.iter().chain(&im).any(|v| !v.is_finite()) {
                return Err(cx.at(re.span(), "phi must be finite"));
            }
            let norm_sq: f64 = re_v.iter().zip(&im).map(|(a, b)| a * a + b * b).sum();
            if (norm_sq - 1.0).abs() > 1e-8 {
                return Err(cx.at(re.span(), format!("phi must be normalized (‖phi‖² = {norm_sq})")));
            }
            Source::Matrix { re: re_v, im }
        }
        other => {
            return Err(cx.at(
                span,
                format!(
                    "unknown source state `{other}` (expected lorentzian_x, gaussian_free_1d, radial_d3_explicit, matrix or band_limited)"
                ),
            ));
        }
    };
    Ok(out)
}

fn hamiltonian(
    cx: &Ctx,
    r: Option<&Spanned<RawHamiltonian>>,
    source: &Source,
    source_raw: &Spanned<RawSource>,
) -> Result<Hamiltonian, ConfigError> {
    let state_span = source_raw.get_ref().state.span();
    let Some(r) = r else {
        return match source {
            Source::LorentzianX => Ok(Hamiltonian::Position),
            Source::Matrix { .. } => Err(cx.at(state_span, "matrix source needs [hamiltonian] kind = \"matrix\"")),
            _ => Ok(Hamiltonian::Free { a: 1.0 }),
        };
    };
    let h = r.get_ref();
    let kind_span = h.kind.span();
    let out = match h.kind.get_ref().as_str() {
        "position" => Hamiltonian::Position,
        "free" => Hamiltonian::Free { a: h.a.map_or(1.0, |a| a.0) },
        "matrix" => {
            let re = h.matrix.as_ref().ok_or_else(|| cx.at(kind_span.clone(), "matrix Hamiltonian needs `matrix`"))?;
            let n = re.get_ref().len();
            if n == 0 || re.get_ref().iter().any(|row| row.len() != n) {
                return Err(cx.at(re.span(), "matrix must be square and nonempty"));
            }
            let im = match &h.matrix_im {
                Some(im) if im.get_ref().len() != n || im.get_ref().iter().any(|row| row.len() != n) => {
                    return Err(cx.at(im.span(), "matrix_im must have the shape of matrix"));
                }
                Some(im) => im.get_ref().clone(),
                None => vec![vec![0.0; n]; n],
            };
            let re_v = re.get_ref().clone();
            let mut defect = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    if !re_v[i][j].is_finite() || !im[i][j].is_finite() {
                        return Err(cx.at(re.span(), "matrix entries must be finite"));
                    }
                    defect = defect.max((re_v[i][j] - re_v[j][i]).abs()).max((im[i][j] + im[j][i]).abs());
                }
            }
            if defect > 1e-12 {
                return Err(cx.at(re.span(), format!("matrix is not Hermitian (defect {defect:.3e})")));
            }
            Hamiltonian::Matrix { re: re_v, im }
        }
        other => {
            return Err(cx.at(kind_span, format!("unknown hamiltonian kind `{other}` (expected position, free or matrix)")));
        }
    };
    if h.a.is_some() && !matches!(out, Hamiltonian::Free { .. }) {
        return Err(cx.at(kind_span.clone(), "`a` only applies to kind = \"free\""));
    }
    if (h.matrix.is_some() || h.matrix_im.is_some()) && !matches!(out, Hamiltonian::Matrix { .. }) {
        return Err(cx.at(kind_span.clone(), "`matrix` only applies to kind = \"matrix\""));
    }
    let consistent = match (source, &out) {
        (Source::LorentzianX, Hamiltonian::Position) => true,
        (Source::Matrix { re, .. }, Hamiltonian::Matrix { re: h, .. }) => {
            if re.len() != h.len() {
                return Err(cx.at(
                    source_raw.get_ref().phi.as_ref().map_or(state_span.clone(), |p| p.span()),
                    format!("phi has {} coefficients but the matrix is {}×{}", re.len(), h.len(), h.len()),
                ));
            }
            true
        }
        (Source::GaussianFree1d { .. } | Source::BandLimited { .. } | Source::RadialD3Explicit, Hamiltonian::Free { .. }) => true,
        _ => false,
    };
    if !consistent {
        return Err(cx.at(kind_span, format!("hamiltonian kind `{}` does not fit source state `{}`", h.kind.get_ref(), source_raw.get_ref().state.get_ref())));
    }
    Ok(out)
}

fn coupling(cx: &Ctx, r: &RawCoupling, study: Study, numerics: &Numerics) -> Result<Coupling, ConfigError> {
    let finite = |v: &Spanned<f64>| -> Result<f64, ConfigError> {
        if v.get_ref().is_finite() {
            Ok(*v.get_ref())
        } else {
            Err(cx.at(v.span(), "coupling must be finite"))
        }
    };
    let grid = || -> Result<Option<Vec<f64>>, ConfigError> {
        match (&r.lambdas, &r.lambda_range, &r.lambda_count) {
            (Some(l), None, None) => {
                if l.get_ref().is_empty() || l.get_ref().iter().any(|v| !v.is_finite()) {
                    return Err(cx.at(l.span(), "lambdas must be a nonempty list of finite numbers"));
                }
                Ok(Some(l.get_ref().clone()))
            }
            (None, Some(range), Some(count)) => {
                let [lo, hi] = *range.get_ref();
                let n = *count.get_ref();
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(cx.at(range.span(), "lambda_range must be [lo, hi] with lo < hi"));
                }
                if n < 2 {
                    return Err(cx.at(count.span(), "lambda_count must be at least 2"));
                }
                Ok(Some((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()))
            }
            (None, None, None) => Ok(None),
            (Some(l), _, _) => Err(cx.at(l.span(), "give either lambdas or lambda_range with lambda_count, not both")),
            (None, Some(range), None) => Err(cx.at(range.span(), "lambda_range needs lambda_count")),
            (None, _, Some(count)) => Err(cx.at(count.span(), "lambda_count needs lambda_range")),
        }
    };
    let reject = |present: Option<Range<usize>>, what: &str| -> Result<(), ConfigError> {
        match present {
            Some(span) => Err(cx.at(span, format!("{what} does not apply to the {} study", study.name()))),
            None => Ok(()),
        }
    };
    let grid_span = r.lambdas.as_ref().map(|v| v.span()).or_else(|| r.lambda_range.as_ref().map(|v| v.span()));
    match study {
        Study::Growth | Study::Local => {
            reject(grid_span, "a λ grid")?;
            reject(r.c.as_ref().map(|v| v.span()), "`c`")?;
            let l = r.lambda.as_ref().ok_or_else(|| cx.top(format!("[coupling] lambda is required for the {} study", study.name())))?;
            let lambda = finite(l)?;
            if study == Study::Local && lambda == 0.0 {
                return Err(cx.at(l.span(), "the local study needs λ ≠ 0"));
            }
            Ok(Coupling { lambda: Some(lambda), lambdas: None, c: None })
        }
        Study::Sweep => {
            reject(r.lambda.as_ref().map(|v| v.span()), "a single `lambda`")?;
            reject(r.c.as_ref().map(|v| v.span()), "`c`")?;
            let lambdas = grid()?.ok_or_else(|| cx.top("[coupling] the sweep study needs lambdas or lambda_range + lambda_count"))?;
            if lambdas.len() < 2 || lambdas.windows(2).any(|w| w[1] <= w[0]) {
                return Err(cx.at(grid_span.expect("grid is present"), "the λ grid must hold at least two strictly increasing values"));
            }
            if numerics.t_max / numerics.dt < 1000.0 {
                return Err(cx.top("the sweep study needs t_max/dt ≥ 1000 to classify regimes"));
            }
            Ok(Coupling { lambda: None, lambdas: Some(lambdas), c: None })
        }
        Study::Spectrum => {
            reject(r.c.as_ref().map(|v| v.span()), "`c`")?;
            let lambdas = match (&r.lambda, grid()?) {
                (Some(l), None) => vec![finite(l)?],
                (None, Some(g)) => g,
                (Some(l), Some(_)) => return Err(cx.at(l.span(), "give either lambda or a λ grid, not both")),
                (None, None) => return Err(cx.top("[coupling] the spectrum study needs lambda or a λ grid")),
            };
            if lambdas.iter().any(|l| *l <= 0.0) {
                let span = r.lambda.as_ref().map(|v| v.span()).or(grid_span).expect("a coupling was given");
                return Err(cx.at(span, "growth eigenvalues exist only for λ > 0"));
            }
            Ok(Coupling { lambda: None, lambdas: Some(lambdas), c: None })
        }
        Study::Semiclassical => {
            reject(r.lambda.as_ref().map(|v| v.span()).or(grid_span), "λ (use `c`, with λ = cε)")?;
            let c = r.c.as_ref().ok_or_else(|| cx.top("[coupling] c is required for the semiclassical study"))?;
            let value = finite(c)?;
            if value == 0.0 {
                return Err(cx.at(c.span(), "c must be nonzero"));
            }
            Ok(Coupling { lambda: None, lambdas: None, c: Some(value) })
        }
    }
}

fn local(
    cx: &Ctx,
    r: Option<&Spanned<RawLocal>>,
    source: &Source,
    h: &Hamiltonian,
    numerics: &Numerics,
    source_raw: &Spanned<RawSource>,
) -> Result<LocalRegion, ConfigError> {
    let r = r.ok_or_else(|| cx.top("the local study needs a [local] section"))?;
    let span = r.span();
    let l = r.get_ref();
    match (h, &l.region, &l.indices) {
        (Hamiltonian::Matrix { re, .. }, None, Some(ix)) => {
            if ix.get_ref().iter().any(|i| *i >= re.len()) {
                return Err(cx.at(ix.span(), format!("indices must be below the matrix size {}", re.len())));
            }
            Ok(LocalRegion::Indices(ix.get_ref().clone()))
        }
        (Hamiltonian::Matrix { .. }, _, _) => Err(cx.at(span, "a matrix Hamiltonian needs `indices` (and no `region`)")),
        (_, Some(region), None) => {
            let [lo, hi] = *region.get_ref();
            let half = 0.5 * numerics.length;
            if !(lo < hi && lo >= -half && hi <= half) {
                return Err(cx.at(region.span(), format!("region must satisfy -L/2 ≤ lo < hi ≤ L/2 (L = {})", numerics.length)));
            }
            if matches!(source, Source::Matrix { .. }) {
                return Err(cx.at(source_raw.get_ref().state.span(), "matrix source needs a matrix Hamiltonian"));
            }
            Ok(LocalRegion::Interval([lo, hi]))
        }
        _ => Err(cx.at(span, "a grid Hamiltonian needs `region = [lo, hi]` (and no `indices`)")),
    }
}

fn semiclassical(
    cx: &Ctx,
    r: Option<&Spanned<RawSemiclassical>>,
    source: &Source,
    numerics: &Numerics,
    source_raw: &Spanned<RawSource>,
) -> Result<Semiclassical, ConfigError> {
    if !matches!(source, Source::GaussianFree1d { .. }) {
        return Err(cx.at(source_raw.get_ref().state.span(), "the semiclassical study needs source state gaussian_free_1d"));
    }
    let r = r.ok_or_else(|| cx.top("the semiclassical study needs a [semiclassical] section"))?;
    let s = r.get_ref();
    let eps: Vec<f64> = s.eps.get_ref().iter().map(|e| e.0).collect();
    if eps.is_empty() || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(cx.at(s.eps.span(), "eps must be a nonempty strictly decreasing list"));
    }
    if s.thetas.get_ref().is_empty() {
        return Err(cx.at(s.thetas.span(), "thetas must not be empty"));
    }
    for th in s.thetas.get_ref() {
        if !th.iter().all(|v| v.is_finite()) || th[1] <= 0.0 || th[3] <= 0.0 {
            return Err(cx.at(s.thetas.span(), "each theta is [x_centre, x_width, p_centre, p_width] with positive widths"));
        }
    }
    if let Some(g) = &s.initial {
        // microscopic widths are sx/ε and sp
        if 2.0 * g.sx.0 * g.sp.0 < eps[0] {
            return Err(cx.at(r.span(), format!("initial Gaussian needs 2·sx·sp ≥ ε for every ε (largest ε is {})", eps[0])));
        }
    }
    let budget = s.budget.as_ref().map_or(qsource_core::propagator::DEFAULT_RANK_CAP, |b| *b.get_ref());
    if budget == 0 {
        return Err(cx.at(s.budget.as_ref().unwrap().span(), "budget must be positive"));
    }
    if numerics.ds < numerics.dt {
        return Err(cx.top("ds must be at least dt"));
    }
    Ok(Semiclassical { eps, thetas: s.thetas.get_ref().clone(), budget, initial: s.initial })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GROWTH: &str = "[source]\nstate = \"lorentzian_x\"\n[coupling]\nlambda = 1.0\n[numerics]\ndt = 1e-3\nt_max = 5.0\n";

    #[test]
    fn defaults_resolve() {
        let c = load(GROWTH, Study::Growth, None).unwrap();
        assert_eq!(c.hamiltonian, Hamiltonian::Position);
        assert_eq!(c.numerics.scheme, SchemeName::Trapezoid);
        assert_eq!(c.output.dir, DEFAULT_OUT_DIR);
        assert_eq!(load(GROWTH, Study::Growth, Some("x")).unwrap().output.dir, "x");
    }

    #[test]
    fn errors_carry_lines() {
        let bad = GROWTH.replace("dt = 1e-3", "dt = -1e-3");
        let e = load(&bad, Study::Growth, None).unwrap_err();
        assert_eq!(e.line.map(|l| l.0), Some(6), "{e}");
        let bad = GROWTH.replace("t_max = 5.0", "t_max = 5.0005");
        assert_eq!(load(&bad, Study::Growth, None).unwrap_err().line.map(|l| l.0), Some(7));
        let bad = GROWTH.replace("lorentzian_x", "lorentz");
        assert_eq!(load(&bad, Study::Growth, None).unwrap_err().line.map(|l| l.0), Some(2));
        let bad = format!("{GROWTH}typo = 1\n");
        assert!(load(&bad, Study::Growth, None).unwrap_err().line.is_some());
    }

    #[test]
    fn coupling_sign_follows_the_study() {
        let negative = "[source]\nstate = \"lorentzian_x\"\n[coupling]\nlambdas = [0.5, -1.0]\n";
        assert!(load(negative, Study::Spectrum, None).is_err());
        let sweep = "[source]\nstate = \"lorentzian_x\"\n[coupling]\nlambda_range = [0.25, 1.75]\nlambda_count = 7\n[numerics]\ndt = 0.02\nt_max = 200.0\n";
        let c = load(sweep, Study::Sweep, None).unwrap();
        assert_eq!(c.coupling.lambdas.unwrap().len(), 7);
        assert!(load(sweep, Study::Growth, None).is_err());
    }

    #[test]
    fn shipped_scenarios_validate() {
        for (name, text) in [
            ("growth_lorentzian", include_str!("../../../scenarios/growth_lorentzian.toml")),
            ("growth_bounded_matrix", include_str!("../../../scenarios/growth_bounded_matrix.toml")),
            ("sweep_lorentzian", include_str!("../../../scenarios/sweep_lorentzian.toml")),
            ("spectrum_explicit", include_str!("../../../scenarios/spectrum_explicit.toml")),
            ("local_band_limited", include_str!("../../../scenarios/local_band_limited.toml")),
            ("semiclassical_gaussian", include_str!("../../../scenarios/semiclassical_gaussian.toml")),
        ] {
            let study = Study::from_str(name.split('_').next().unwrap(), false).unwrap();
            load(text, study, None).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn initial_gaussian_respects_uncertainty_at_every_scale() {
        let base = include_str!("../../../scenarios/semiclassical_gaussian.toml");
        assert!(load(base, Study::Semiclassical, None).is_ok());
        let tight = base.replace("sx = 0.6", "sx = 0.2");
        assert!(load(&tight, Study::Semiclassical, None).unwrap_err().message.contains("2·sx·sp"));
    }

    #[test]
    fn source_and_hamiltonian_must_fit() {
        let bad = "[hamiltonian]\nkind = \"free\"\n[source]\nstate = \"lorentzian_x\"\n[coupling]\nlambda = 1.0\n[numerics]\nt_max = 1.0\n";
        assert_eq!(load(bad, Study::Growth, None).unwrap_err().line.map(|l| l.0), Some(2));
        let m = "[hamiltonian]\nkind = \"matrix\"\nmatrix = [[0.0, 1.0], [2.0, 0.0]]\n[source]\nstate = \"matrix\"\nphi = [1.0, 0.0]\n[coupling]\nlambda = 1.0\n[numerics]\nt_max = 1.0\n";
        assert!(load(m, Study::Growth, None).unwrap_err().message.contains("Hermitian"));
    }
}
