//! Experiment configuration: a TOML file read against a fixed schema.
//! Every problem found (unknown keys, wrong types, bad values) is collected
//! before anything runs.

use std::collections::BTreeSet;
use std::fmt;

use mvlift::coefficients::{BetaForm, DriftScalarForm, NldbmSpec};
use mvlift::fpe::Scheme;
use mvlift::Execution;
use serde::Serialize;
use toml::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SimulateMkv,
    SolveFpe,
    FrozenCompare,
    CheckCk,
    Ergodicity,
    FeynmanKac,
    GradientCheck,
    ValidateHypotheses,
}

impl Experiment {
    pub const ALL: [(&'static str, Experiment); 8] = [
        ("simulate-mkv", Experiment::SimulateMkv),
        ("solve-fpe", Experiment::SolveFpe),
        ("frozen-compare", Experiment::FrozenCompare),
        ("check-ck", Experiment::CheckCk),
        ("ergodicity", Experiment::Ergodicity),
        ("feynman-kac", Experiment::FeynmanKac),
        ("gradient-check", Experiment::GradientCheck),
        ("validate-hypotheses", Experiment::ValidateHypotheses),
    ];

    pub fn name(self) -> &'static str {
        Self::ALL.iter().find(|e| e.1 == self).map(|e| e.0).unwrap_or("?")
    }

    /// The experiment-specific section, if the experiment has one.
    fn section(self) -> Option<&'static str> {
        match self {
            Experiment::SimulateMkv | Experiment::SolveFpe => None,
            Experiment::FrozenCompare => Some("frozen"),
            Experiment::CheckCk => Some("ck"),
            Experiment::Ergodicity => Some("ergodicity"),
            Experiment::FeynmanKac => Some("fk"),
            Experiment::GradientCheck => Some("gradient"),
            Experiment::ValidateHypotheses => Some("hypotheses"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Coefficients {
    Heat,
    MeanfieldOu { lambda0: f64, kappa0: f64, sigma0: f64 },
    Nldbm(NldbmSpec),
}

#[derive(Clone, Copy, Debug, Serialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InitialLaw {
    Gaussian { mean: f64, variance: f64 },
    Dirac { x: f64 },
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GridConfig {
    pub half_width: f64,
    pub dx: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
#[serde(untagged)]
pub enum BandwidthChoice {
    Auto(&'static str),
    Fixed(f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct Numerics {
    pub dt: f64,
    pub horizon: f64,
    pub n_particles: usize,
    pub bandwidth: BandwidthChoice,
    pub scheme: Scheme,
    /// Number of evenly spaced output times after the start.
    pub outputs: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrozenParams {
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CkParams {
    pub x: f64,
    pub s: f64,
    pub r: f64,
    pub t: f64,
    pub h: String,
    pub f: String,
    pub quad_points: usize,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErgodicityParams {
    pub backend: String,
    pub invariant: String,
    pub n_checkpoints: usize,
    pub window: f64,
    pub max_horizon: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FkParams {
    pub terminal: String,
    pub potential: f64,
    pub source: f64,
    pub t: f64,
    pub points: Vec<f64>,
    pub replicas: usize,
    pub residual_probe: Option<[f64; 2]>,
    pub dt_fd: f64,
    pub dx_fd: f64,
    pub budget_constant: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientParams {
    pub n_functions: usize,
    pub eps: Vec<f64>,
    pub min_order: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesesParams {
    pub target: String,
    pub sample_box: [f64; 2],
    pub n_samples: usize,
}

/// Experiment-specific section, serialized under its own table name.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Params {
    Frozen(FrozenParams),
    Ck(CkParams),
    Ergodicity(ErgodicityParams),
    Fk(FkParams),
    Gradient(GradientParams),
    Hypotheses(HypothesesParams),
}

/// The fully resolved configuration, defaults filled in.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub execution: Execution,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub coefficients: Coefficients,
    pub initial: InitialLaw,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub companion_initial: Option<InitialLaw>,
    pub grid: GridConfig,
    pub numerics: Numerics,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub params: Option<Params>,
}

/// All problems found in a configuration file.
#[derive(Debug)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

struct Section<'a> {
    path: String,
    map: Option<&'a toml::Table>,
    seen: BTreeSet<String>,
}

struct Reader {
    errors: Vec<String>,
}

fn type_name(v: &Value) -> &'static str {
    v.type_str()
}

impl<'a> Section<'a> {
    fn new(path: &str, map: Option<&'a toml::Table>) -> Self {
        Self { path: path.into(), map, seen: BTreeSet::new() }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.into()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn get(&mut self, k: &str) -> Option<&'a Value> {
        self.seen.insert(k.into());
        self.map.and_then(|m| m.get(k))
    }

    /// Marks every key as read; used once a bad discriminant makes the
    /// remaining keys meaningless.
    fn skip_rest(&mut self) {
        if let Some(m) = self.map {
            self.seen.extend(m.keys().cloned());
        }
    }

    fn finish(self, r: &mut Reader) {
        if let Some(m) = self.map {
            for k in m.keys().filter(|k| !self.seen.contains(*k)) {
                r.errors.push(format!("unknown key `{}`", self.key(k)));
            }
        }
    }
}

impl Reader {
    fn missing(&mut self, s: &Section<'_>, k: &str) {
        self.errors.push(format!("missing required key `{}`", s.key(k)));
    }

    fn float(&mut self, s: &mut Section<'_>, k: &str, default: Option<f64>) -> f64 {
        match s.get(k) {
            Some(Value::Float(v)) => *v,
            Some(Value::Integer(v)) => *v as f64,
            Some(v) => {
                self.errors.push(format!("`{}` must be a number, found {}", s.key(k), type_name(v)));
                f64::NAN
            }
            None => default.unwrap_or_else(|| {
                self.missing(s, k);
                f64::NAN
            }),
        }
    }

    fn opt_float(&mut self, s: &mut Section<'_>, k: &str) -> Option<f64> {
        s.get(k).map(|_| self.float(s, k, None))
    }

    fn positive(&mut self, s: &mut Section<'_>, k: &str, default: Option<f64>) -> f64 {
        let v = self.float(s, k, default);
        if !v.is_nan() && !(v > 0.0 && v.is_finite()) {
            self.errors.push(format!("`{}` must be positive and finite, got {v}", s.key(k)));
        }
        v
    }

    fn count(&mut self, s: &mut Section<'_>, k: &str, default: Option<usize>, min: usize) -> usize {
        match s.get(k) {
            Some(Value::Integer(v)) if *v >= min as i64 => *v as usize,
            Some(Value::Integer(v)) => {
                self.errors.push(format!("`{}` must be at least {min}, got {v}", s.key(k)));
                min
            }
            Some(v) => {
                self.errors.push(format!("`{}` must be an integer, found {}", s.key(k), type_name(v)));
                min
            }
            None => default.unwrap_or_else(|| {
                self.missing(s, k);
                min
            }),
        }
    }

    fn choice(&mut self, s: &mut Section<'_>, k: &str, options: &[&str], default: Option<&str>) -> String {
        match s.get(k) {
            Some(Value::String(v)) if options.contains(&v.as_str()) => v.clone(),
            Some(Value::String(v)) => {
                self.errors.push(format!("`{}` = \"{v}\" is not one of {}", s.key(k), options.join(", ")));
                String::new()
            }
            Some(v) => {
                self.errors.push(format!("`{}` must be a string, found {}", s.key(k), type_name(v)));
                String::new()
            }
            None => match default {
                Some(d) => d.into(),
                None => {
                    self.missing(s, k);
                    String::new()
                }
            },
        }
    }

    fn floats(&mut self, s: &mut Section<'_>, k: &str, default: Option<Vec<f64>>) -> Vec<f64> {
        match s.get(k) {
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for (i, v) in items.iter().enumerate() {
                    match v {
                        Value::Float(x) => out.push(*x),
                        Value::Integer(x) => out.push(*x as f64),
                        other => self.errors.push(format!("`{}[{i}]` must be a number, found {}", s.key(k), type_name(other))),
                    }
                }
                out
            }
            Some(v) => {
                self.errors.push(format!("`{}` must be an array of numbers, found {}", s.key(k), type_name(v)));
                Vec::new()
            }
            None => default.unwrap_or_else(|| {
                self.missing(s, k);
                Vec::new()
            }),
        }
    }

    fn table<'a>(&mut self, parent: &mut Section<'a>, k: &str, required: bool) -> Section<'a> {
        let path = parent.key(k);
        match parent.get(k) {
            Some(Value::Table(t)) => Section::new(&path, Some(t)),
            Some(v) => {
                self.errors.push(format!("`{path}` must be a table, found {}", type_name(v)));
                Section::new(&path, None)
            }
            None => {
                if required {
                    self.errors.push(format!("missing required section `[{path}]`"));
                }
                Section::new(&path, None)
            }
        }
    }
}

fn read_coefficients(r: &mut Reader, root: &mut Section<'_>) -> Coefficients {
    let mut s = r.table(root, "coefficients", true);
    let family = r.choice(&mut s, "family", &["heat", "meanfield-ou", "nldbm"], None);
    let c = match family.as_str() {
        "" => {
            s.skip_rest();
            Coefficients::Heat
        }
        "meanfield-ou" => {
            let lambda0 = r.float(&mut s, "lambda0", None);
            let kappa0 = r.float(&mut s, "kappa0", None);
            let sigma0 = r.float(&mut s, "sigma0", Some(1.0));
            Coefficients::MeanfieldOu { lambda0, kappa0, sigma0 }
        }
        "nldbm" => {
            let mut b = r.table(&mut s, "beta", true);
            let beta = match r.choice(&mut b, "kind", &["linear", "linear_plus_arctan", "square"], None).as_str() {
                "" => {
                    b.skip_rest();
                    BetaForm::Square
                }
                "linear" => BetaForm::Linear { slope: r.positive(&mut b, "slope", None) },
                "linear_plus_arctan" => BetaForm::LinearPlusArctan { slope: r.positive(&mut b, "slope", None) },
                _ => BetaForm::Square,
            };
            b.finish(r);
            let mut d = r.table(&mut s, "b_scalar", true);
            let b_scalar = match r.choice(&mut d, "kind", &["constant", "lorentzian"], None).as_str() {
                "" => {
                    d.skip_rest();
                    DriftScalarForm::Constant { value: 0.0 }
                }
                "constant" => DriftScalarForm::Constant { value: r.float(&mut d, "value", None) },
                _ => DriftScalarForm::Lorentzian { amplitude: r.float(&mut d, "amplitude", None) },
            };
            d.finish(r);
            let c = r.positive(&mut s, "C", Some(1.0));
            let alpha = r.float(&mut s, "alpha", Some(0.5));
            if !(alpha > 0.0 && alpha <= 0.5) {
                r.errors.push(format!("`coefficients.alpha` must lie in (0, 1/2], got {alpha}"));
            }
            let gamma = r.opt_float(&mut s, "gamma");
            let gamma1 = r.opt_float(&mut s, "gamma1");
            Coefficients::Nldbm(NldbmSpec { beta, b_scalar, c, alpha, gamma, gamma1 })
        }
        _ => Coefficients::Heat,
    };
    s.finish(r);
    c
}

fn read_law(r: &mut Reader, root: &mut Section<'_>, key: &str, required: bool) -> Option<InitialLaw> {
    let mut s = r.table(root, key, required);
    s.map?;
    let law = match r.choice(&mut s, "law", &["gaussian", "dirac"], None).as_str() {
        "" => {
            s.skip_rest();
            InitialLaw::Dirac { x: 0.0 }
        }
        "gaussian" => InitialLaw::Gaussian { mean: r.float(&mut s, "mean", Some(0.0)), variance: r.positive(&mut s, "variance", None) },
        _ => InitialLaw::Dirac { x: r.float(&mut s, "x", None) },
    };
    s.finish(r);
    Some(law)
}

fn read_params(r: &mut Reader, root: &mut Section<'_>, e: Experiment) -> Option<Params> {
    let name = e.section()?;
    let mut s = r.table(root, name, false);
    let p = match e {
        Experiment::FrozenCompare => Params::Frozen(FrozenParams { tolerance: r.opt_float(&mut s, "tolerance") }),
        Experiment::CheckCk => {
            let (sv, rv, tv) = (r.float(&mut s, "s", Some(0.0)), r.float(&mut s, "r", None), r.float(&mut s, "t", None));
            if !(sv < rv && rv < tv) {
                r.errors.push(format!("`ck` times must satisfy s < r < t, got {sv}, {rv}, {tv}"));
            }
            Params::Ck(CkParams {
                x: r.float(&mut s, "x", None),
                s: sv,
                r: rv,
                t: tv,
                h: r.choice(&mut s, "h", &["one", "x", "x2", "sin", "bump"], Some("x2")),
                f: r.choice(&mut s, "f", &["one", "mean", "m2", "sin"], Some("one")),
                quad_points: r.count(&mut s, "quad_points", Some(32), 1),
                tolerance: r.positive(&mut s, "tolerance", None),
            })
        }
        Experiment::Ergodicity => Params::Ergodicity(ErgodicityParams {
            backend: r.choice(&mut s, "backend", &["fpe", "particle"], Some("fpe")),
            invariant: r.choice(&mut s, "invariant", &["moment_fixed_point", "long_run"], Some("moment_fixed_point")),
            n_checkpoints: r.count(&mut s, "n_checkpoints", Some(20), 1),
            window: r.positive(&mut s, "window", Some(1.0)),
            max_horizon: r.positive(&mut s, "max_horizon", Some(40.0)),
        }),
        Experiment::FeynmanKac => {
            let probe = r.floats(&mut s, "residual_probe", Some(vec![]));
            let residual_probe = match probe.as_slice() {
                [] => None,
                [t, x] => Some([*t, *x]),
                _ => {
                    r.errors.push("`fk.residual_probe` must be [t, x]".into());
                    None
                }
            };
            let potential = r.float(&mut s, "potential", Some(0.0));
            Params::Fk(FkParams {
                terminal: r.choice(&mut s, "terminal", &["one", "x", "mean", "sin"], None),
                potential,
                source: r.float(&mut s, "source", Some(0.0)),
                t: r.float(&mut s, "t", Some(0.0)),
                points: r.floats(&mut s, "points", None),
                replicas: r.count(&mut s, "replicas", Some(4000), 2),
                residual_probe,
                dt_fd: r.positive(&mut s, "dt_fd", Some(1e-2)),
                dx_fd: r.positive(&mut s, "dx_fd", Some(5e-2)),
                budget_constant: r.positive(&mut s, "budget_constant", Some(1.0)),
            })
        }
        Experiment::GradientCheck => {
            let eps = r.floats(&mut s, "eps", Some(vec![4e-3, 2e-3, 1e-3]));
            if eps.len() < 2 || eps.iter().any(|e| !(*e > 0.0)) {
                r.errors.push("`gradient.eps` needs at least two positive steps".into());
            }
            Params::Gradient(GradientParams { n_functions: r.count(&mut s, "n_functions", Some(20), 1), eps, min_order: r.float(&mut s, "min_order", Some(1.8)) })
        }
        Experiment::ValidateHypotheses => {
            let bx = r.floats(&mut s, "sample_box", Some(vec![-5.0, 5.0]));
            let sample_box = match bx.as_slice() {
                [lo, hi] if lo < hi => [*lo, *hi],
                _ => {
                    r.errors.push("`hypotheses.sample_box` must be [lo, hi] with lo < hi".into());
                    [-5.0, 5.0]
                }
            };
            Params::Hypotheses(HypothesesParams {
                target: r.choice(&mut s, "target", &["nldbm", "monotone"], None),
                sample_box,
                n_samples: r.count(&mut s, "n_samples", Some(2000), 1),
            })
        }
        Experiment::SimulateMkv | Experiment::SolveFpe => return None,
    };
    s.finish(r);
    Some(p)
}

/// Parses and validates a configuration file's contents.
pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigErrors(vec![format!("TOML syntax: {}", e.message())]))?;
    let mut r = Reader { errors: Vec::new() };
    let mut root = Section::new("", Some(&doc));

    let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.0).collect();
    let name = r.choice(&mut root, "experiment", &names, None);
    let experiment = Experiment::ALL.iter().find(|e| e.0 == name).map(|e| e.1);
    let seed = match root.get("seed") {
        Some(Value::Integer(v)) if *v >= 0 => *v as u64,
        Some(v) => {
            r.errors.push(format!("`seed` must be a non-negative integer, found {v}"));
            0
        }
        None => {
            r.errors.push("missing required key `seed`".into());
            0
        }
    };
    let execution = match r.choice(&mut root, "execution", &["parallel", "sequential"], Some("parallel")).as_str() {
        "sequential" => Execution::Sequential,
        _ => Execution::Parallel,
    };
    let output_dir = match root.get("output_dir") {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(v) => {
            r.errors.push(format!("`output_dir` must be a string, found {}", type_name(v)));
            None
        }
    };
    let coefficients = read_coefficients(&mut r, &mut root);
    let initial = read_law(&mut r, &mut root, "initial", true).unwrap_or(InitialLaw::Dirac { x: 0.0 });
    let needs_companion = matches!(experiment, Some(Experiment::FrozenCompare));
    let companion_initial = read_law(&mut r, &mut root, "companion_initial", needs_companion);

    let mut g = r.table(&mut root, "grid", false);
    let grid = GridConfig { half_width: r.positive(&mut g, "half_width", Some(6.0)), dx: r.positive(&mut g, "dx", Some(2e-2)) };
    g.finish(&mut r);

    let mut n = r.table(&mut root, "numerics", false);
    let numerics = Numerics {
        dt: r.positive(&mut n, "dt", Some(1e-3)),
        horizon: r.positive(&mut n, "horizon", Some(1.0)),
        n_particles: r.count(&mut n, "n_particles", Some(10_000), 2),
        bandwidth: match n.get("bandwidth") {
            None => BandwidthChoice::Auto("auto"),
            Some(Value::String(s)) if s == "auto" => BandwidthChoice::Auto("auto"),
            Some(Value::Float(h)) if *h > 0.0 => BandwidthChoice::Fixed(*h),
            Some(v) => {
                r.errors.push(format!("`numerics.bandwidth` must be \"auto\" or a positive number, found {v}"));
                BandwidthChoice::Auto("auto")
            }
        },
        scheme: match r.choice(&mut n, "scheme", &["semi_implicit", "explicit"], Some("semi_implicit")).as_str() {
            "explicit" => Scheme::Explicit,
            _ => Scheme::SemiImplicit,
        },
        outputs: r.count(&mut n, "outputs", Some(10), 1),
    };
    n.finish(&mut r);

    let params = experiment.and_then(|e| read_params(&mut r, &mut root, e));
    // sections of other experiments are rejected by `finish`
    root.finish(&mut r);

    if let Some(e) = experiment {
        match (e, &coefficients) {
            (Experiment::Ergodicity, Coefficients::MeanfieldOu { .. }) | (Experiment::FeynmanKac, Coefficients::MeanfieldOu { .. } | Coefficients::Heat) => {}
            (Experiment::Ergodicity, _) => r.errors.push("ergodicity needs `coefficients.family = \"meanfield-ou\"` (monotonicity constants are known in closed form only there)".into()),
            (Experiment::FeynmanKac, _) => r.errors.push("feynman-kac supports the heat and meanfield-ou families".into()),
            _ => {}
        }
        if let (Some(Params::Hypotheses(h)), c) = (&params, &coefficients) {
            let ok = matches!((h.target.as_str(), c), ("nldbm", Coefficients::Nldbm(_)) | ("monotone", Coefficients::MeanfieldOu { .. }));
            if !ok && !h.target.is_empty() {
                r.errors.push(format!("`hypotheses.target = \"{}\"` does not fit the coefficient family", h.target));
            }
        }
    }
    if let Some(Params::Fk(p)) = &params {
        if !(p.t < numerics.horizon) {
            r.errors.push(format!("`fk.t` = {} must be below `numerics.horizon` = {}", p.t, numerics.horizon));
        }
        if let Some([t, _]) = p.residual_probe {
            if !(t >= p.t && t < numerics.horizon) {
                r.errors.push(format!("`fk.residual_probe` time {t} must lie in [fk.t, numerics.horizon)"));
            }
        }
    }
    if grid.dx >= grid.half_width {
        r.errors.push("`grid.dx` must be smaller than `grid.half_width`".into());
    }

    match experiment {
        Some(experiment) if r.errors.is_empty() => Ok(ExperimentConfig {
            experiment,
            seed,
            execution,
            output_dir,
            coefficients,
            initial,
            companion_initial,
            grid,
            numerics,
            params,
        }),
        _ => Err(ConfigErrors(r.errors)),
    }
}
