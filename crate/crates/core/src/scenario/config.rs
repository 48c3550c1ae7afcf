//! Line-oriented scenario configuration: `[section]` headers, `key = value`
//! pairs and `#` comments. Every error is collected with its line number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Serialize;

/// Registered scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    FreePacket,
    DampedPlaneWave,
    DoebnerGoldin,
    WignerCheck,
    ErgodicAverage,
    MasterDecoherence,
    DualSpaceHomogeneous,
    DualSpaceField,
    QseTeleportFree,
    QseTeleportHarmonic,
    QseThermal,
    DispersionTables,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 12] = [
        ScenarioKind::FreePacket,
        ScenarioKind::DampedPlaneWave,
        ScenarioKind::DoebnerGoldin,
        ScenarioKind::WignerCheck,
        ScenarioKind::ErgodicAverage,
        ScenarioKind::MasterDecoherence,
        ScenarioKind::DualSpaceHomogeneous,
        ScenarioKind::DualSpaceField,
        ScenarioKind::QseTeleportFree,
        ScenarioKind::QseTeleportHarmonic,
        ScenarioKind::QseThermal,
        ScenarioKind::DispersionTables,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::FreePacket => "free_packet",
            ScenarioKind::DampedPlaneWave => "damped_plane_wave",
            ScenarioKind::DoebnerGoldin => "doebner_goldin",
            ScenarioKind::WignerCheck => "wigner_check",
            ScenarioKind::ErgodicAverage => "ergodic_average",
            ScenarioKind::MasterDecoherence => "master_decoherence",
            ScenarioKind::DualSpaceHomogeneous => "dual_space_homogeneous",
            ScenarioKind::DualSpaceField => "dual_space_field",
            ScenarioKind::QseTeleportFree => "qse_teleport_free",
            ScenarioKind::QseTeleportHarmonic => "qse_teleport_harmonic",
            ScenarioKind::QseThermal => "qse_thermal",
            ScenarioKind::DispersionTables => "dispersion_tables",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn description(self) -> &'static str {
        match self {
            ScenarioKind::FreePacket => "unitary Gaussian packet against the analytic spreading law",
            ScenarioKind::DampedPlaneWave => "diffusive plane wave decay and phase; effective-diffusion minimum",
            ScenarioKind::DoebnerGoldin => "nonlinear diffusive Schrodinger run: mass and the diffusive-term expectation",
            ScenarioKind::WignerCheck => "Wigner marginals, negativity and potential reconstruction",
            ScenarioKind::ErgodicAverage => "decay of coherences in the time-averaged density matrix",
            ScenarioKind::MasterDecoherence => "anticommutator master equation: trace law and Hermiticity",
            ScenarioKind::DualSpaceHomogeneous => "action ODEs, closed forms and the oscillating mass",
            ScenarioKind::DualSpaceField => "split-step solver for the conjugate-coupled equation on a grid",
            ScenarioKind::QseTeleportFree => "zero-temperature Smoluchowski spreading against the dispersion root",
            ScenarioKind::QseTeleportHarmonic => "harmonic ground state as a fixed point of the Smoluchowski flow",
            ScenarioKind::QseThermal => "thermal Smoluchowski spreading, classical reduction and well-posedness",
            ScenarioKind::DispersionTables => "dispersion-law roots over a log-spaced time grid",
        }
    }

    /// `(section, key)` pairs that must appear in the file.
    pub fn required_keys(self) -> &'static [(&'static str, &'static str)] {
        match self {
            ScenarioKind::DampedPlaneWave | ScenarioKind::DoebnerGoldin | ScenarioKind::MasterDecoherence => {
                &[("physics", "D")]
            }
            ScenarioKind::DualSpaceHomogeneous => &[("physics", "E"), ("physics", "epsilon")],
            ScenarioKind::DualSpaceField => &[("physics", "epsilon")],
            ScenarioKind::QseTeleportFree | ScenarioKind::DispersionTables => &[("physics", "kappa")],
            ScenarioKind::QseTeleportHarmonic => &[("physics", "kappa"), ("physics", "omega")],
            ScenarioKind::QseThermal => &[("physics", "kappa"), ("physics", "T")],
            _ => &[],
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridBlock {
    pub length: f64,
    pub points: usize,
}

/// `E` and `lambda` stay optional: some scenarios derive `E` from the
/// initial state, and `lambda` only enters the teleportation-length check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhysicsBlock {
    pub hbar: f64,
    pub mass: f64,
    pub diffusion: f64,
    pub friction: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub energy: Option<f64>,
    pub omega: f64,
    pub temperature: f64,
    pub mean_free_path: Option<f64>,
    pub k_b: f64,
}

/// Initial-state shape: width, center and carrier wavenumber.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateBlock {
    pub sigma: f64,
    pub x0: f64,
    pub k0: f64,
}

/// `dt` is the solver step for fixed-step scenarios and the sampling
/// interval for the adaptive Smoluchowski runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunBlock {
    pub dt: f64,
    pub steps: usize,
    pub stride: usize,
    pub out: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub grid: GridBlock,
    pub physics: PhysicsBlock,
    pub state: StateBlock,
    pub run: RunBlock,
    /// `section.key` names filled from scenario defaults.
    pub defaults: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigErrorKind {
    UnknownKey { section: String, key: String },
    UnknownSection { section: String },
    MissingKey { section: String, key: String },
    TypeError { key: String, expected: &'static str, found: String },
    DuplicateKey { key: String, first_line: usize },
    Syntax(String),
    /// A value that parses but violates a physical or scenario constraint.
    Constraint(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line; `None` for keys that are absent from the file.
    pub line: Option<usize>,
    pub kind: ConfigErrorKind,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        match &self.kind {
            ConfigErrorKind::UnknownKey { section, key } => write!(f, "unknown key `{key}` in [{section}]"),
            ConfigErrorKind::UnknownSection { section } => write!(f, "unknown section [{section}]"),
            ConfigErrorKind::MissingKey { section, key } => write!(f, "missing required key `{key}` in [{section}]"),
            ConfigErrorKind::TypeError { key, expected, found } => {
                write!(f, "`{key}` expects {expected}, found `{found}`")
            }
            ConfigErrorKind::DuplicateKey { key, first_line } => {
                write!(f, "duplicate key `{key}` (first set on line {first_line})")
            }
            ConfigErrorKind::Syntax(msg) => write!(f, "syntax error: {msg}"),
            ConfigErrorKind::Constraint(msg) => write!(f, "invalid value: {msg}"),
        }
    }
}

/// All problems found in one file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Clone, Copy)]
enum Kind {
    Float,
    Count,
    Integer,
    Text,
}

const ROOT: &str = "";

const KEYS: &[(&str, &str, Kind)] = &[
    (ROOT, "scenario", Kind::Text),
    (ROOT, "seed", Kind::Integer),
    ("grid", "L", Kind::Float),
    ("grid", "N", Kind::Count),
    ("physics", "hbar", Kind::Float),
    ("physics", "m", Kind::Float),
    ("physics", "D", Kind::Float),
    ("physics", "b", Kind::Float),
    ("physics", "kappa", Kind::Float),
    ("physics", "epsilon", Kind::Float),
    ("physics", "E", Kind::Float),
    ("physics", "omega", Kind::Float),
    ("physics", "T", Kind::Float),
    ("physics", "lambda", Kind::Float),
    ("physics", "k_B", Kind::Float),
    ("state", "sigma", Kind::Float),
    ("state", "x0", Kind::Float),
    ("state", "k0", Kind::Float),
    ("run", "dt", Kind::Float),
    ("run", "steps", Kind::Count),
    ("run", "stride", Kind::Count),
    ("run", "out", Kind::Text),
];

#[derive(Debug, Clone)]
enum Value {
    Float(f64),
    Count(usize),
    Integer(u64),
    Text(String),
}

struct Entry {
    value: Value,
    line: usize,
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

fn parse_value(raw: &str, kind: Kind) -> Option<Value> {
    match kind {
        Kind::Float => raw.parse::<f64>().ok().map(Value::Float),
        Kind::Count => raw.parse::<usize>().ok().map(Value::Count),
        Kind::Integer => raw.parse::<u64>().ok().map(Value::Integer),
        Kind::Text => {
            let t = raw.trim_matches('"');
            (!t.is_empty()).then(|| Value::Text(t.to_string()))
        }
    }
}

fn kind_name(kind: Kind) -> &'static str {
    match kind {
        Kind::Float => "a number",
        Kind::Count => "a non-negative integer",
        Kind::Integer => "an unsigned integer",
        Kind::Text => "a non-empty string",
    }
}

/// Scenario defaults, before any file values are applied.
fn baseline(kind: ScenarioKind) -> ScenarioConfig {
    let physics = PhysicsBlock {
        hbar: 1.0,
        mass: 1.0,
        diffusion: 0.0,
        friction: 1.0,
        kappa: 0.0,
        epsilon: 0.0,
        energy: None,
        omega: 1.0,
        temperature: 0.0,
        mean_free_path: None,
        k_b: 1.0,
    };
    let state = StateBlock { sigma: 1.0, x0: 0.0, k0: 0.0 };
    let (grid, run, state) = match kind {
        ScenarioKind::FreePacket => (
            GridBlock { length: 80.0, points: 512 },
            RunBlock { dt: 0.01, steps: 800, stride: 20, out: None },
            StateBlock { k0: 1.0, x0: -4.0, ..state },
        ),
        ScenarioKind::DampedPlaneWave => (
            GridBlock { length: 2.0 * std::f64::consts::PI, points: 64 },
            RunBlock { dt: 0.01, steps: 100, stride: 10, out: None },
            StateBlock { k0: 2.0, ..state },
        ),
        ScenarioKind::DoebnerGoldin => (
            GridBlock { length: 20.0, points: 128 },
            RunBlock { dt: 0.005, steps: 1000, stride: 50, out: None },
            state,
        ),
        ScenarioKind::WignerCheck => (
            GridBlock { length: 40.0, points: 128 },
            RunBlock { dt: 1e-5, steps: 1, stride: 1, out: None },
            StateBlock { sigma: 0.9, k0: 1.5, ..state },
        ),
        ScenarioKind::ErgodicAverage => (
            GridBlock { length: 1.0, points: 8 },
            RunBlock { dt: 10.0, steps: 1000, stride: 5, out: None },
            state,
        ),
        ScenarioKind::MasterDecoherence => (
            GridBlock { length: 1.0, points: 24 },
            RunBlock { dt: 0.01, steps: 1000, stride: 10, out: None },
            state,
        ),
        ScenarioKind::DualSpaceHomogeneous => (
            GridBlock { length: 1.0, points: 8 },
            RunBlock { dt: 0.05, steps: 4096, stride: 1, out: None },
            state,
        ),
        ScenarioKind::DualSpaceField => (
            GridBlock { length: 30.0, points: 256 },
            RunBlock { dt: 0.001, steps: 2000, stride: 50, out: None },
            StateBlock { k0: 0.5, ..state },
        ),
        ScenarioKind::QseTeleportFree => (
            GridBlock { length: 128.0, points: 256 },
            RunBlock { dt: 1.0, steps: 100, stride: 1, out: None },
            StateBlock { sigma: 2f64.sqrt(), ..state },
        ),
        ScenarioKind::QseTeleportHarmonic => (
            GridBlock { length: 16.0, points: 64 },
            RunBlock { dt: 0.002, steps: 20, stride: 1, out: None },
            state,
        ),
        ScenarioKind::QseThermal => (
            GridBlock { length: 128.0, points: 256 },
            RunBlock { dt: 0.25, steps: 16, stride: 1, out: None },
            StateBlock { sigma: 2f64.sqrt(), ..state },
        ),
        ScenarioKind::DispersionTables => (
            GridBlock { length: 1.0, points: 8 },
            RunBlock { dt: 1e-6, steps: 48, stride: 1, out: None },
            state,
        ),
    };
    let physics = match kind {
        ScenarioKind::DualSpaceField => PhysicsBlock { energy: Some(1.0), omega: 0.5, ..physics },
        ScenarioKind::QseThermal | ScenarioKind::DispersionTables => PhysicsBlock { temperature: 0.5, ..physics },
        _ => physics,
    };
    ScenarioConfig { scenario: kind, seed: 0, grid, physics, state, run, defaults: Vec::new() }
}

/// A complete config file for `kind` that runs with the built-in settings.
pub fn default_config_text(kind: ScenarioKind) -> String {
    let mut s = format!("# {}\nscenario = {}\n", kind.description(), kind.name());
    let extra: &[&str] = match kind {
        ScenarioKind::DampedPlaneWave => &["D = 0.1"],
        ScenarioKind::DoebnerGoldin => &["D = 0.05"],
        ScenarioKind::MasterDecoherence => &["D = 0.01"],
        ScenarioKind::DualSpaceHomogeneous => &["E = 1.0", "epsilon = 0.1"],
        ScenarioKind::DualSpaceField => &["epsilon = 0.05"],
        ScenarioKind::QseTeleportFree => &["kappa = 1.0"],
        ScenarioKind::QseTeleportHarmonic => &["kappa = 1.0", "omega = 1.0"],
        ScenarioKind::QseThermal => &["kappa = 1.0", "T = 0.5"],
        ScenarioKind::DispersionTables => &["kappa = 1.0"],
        _ => &[],
    };
    if !extra.is_empty() {
        s.push_str("\n[physics]\n");
        for line in extra {
            s.push_str(line);
            s.push('\n');
        }
    }
    s
}

/// Reads and parses a config file.
pub fn parse_config_file(path: &Path) -> Result<ScenarioConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError {
            line: None,
            kind: ConfigErrorKind::Syntax(format!("cannot read {}: {e}", path.display())),
        }])
    })?;
    parse_config(&text)
}

/// Parses and validates config text; returns every error found.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigErrors> {
    let mut errors = Vec::new();
    let mut entries: BTreeMap<(String, String), Entry> = BTreeMap::new();
    let mut section = ROOT.to_string();
    let mut section_known = true;

    for (i, raw_line) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        let line = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                errors.push(ConfigError { line: Some(line_no), kind: ConfigErrorKind::Syntax(format!("unterminated section header `{line}`")) });
                section_known = false;
                continue;
            };
            let name = name.trim();
            section = name.to_string();
            section_known = KEYS.iter().any(|(s, _, _)| *s == name && !name.is_empty());
            if !section_known {
                errors.push(ConfigError {
                    line: Some(line_no),
                    kind: ConfigErrorKind::UnknownSection { section: name.to_string() },
                });
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(ConfigError { line: Some(line_no), kind: ConfigErrorKind::Syntax(format!("expected `key = value`, found `{line}`")) });
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if !section_known {
            continue;
        }
        let Some(&(_, _, kind)) = KEYS.iter().find(|(s, k, _)| *s == section && *k == key) else {
            let shown = if section.is_empty() { "top level".to_string() } else { section.clone() };
            errors.push(ConfigError {
                line: Some(line_no),
                kind: ConfigErrorKind::UnknownKey { section: shown, key: key.to_string() },
            });
            continue;
        };
        let id = (section.clone(), key.to_string());
        if let Some(first) = entries.get(&id) {
            errors.push(ConfigError {
                line: Some(line_no),
                kind: ConfigErrorKind::DuplicateKey { key: qualified(&section, key), first_line: first.line },
            });
            continue;
        }
        match parse_value(value, kind) {
            Some(v) => {
                entries.insert(id, Entry { value: v, line: line_no });
            }
            None => errors.push(ConfigError {
                line: Some(line_no),
                kind: ConfigErrorKind::TypeError {
                    key: qualified(&section, key),
                    expected: kind_name(kind),
                    found: value.to_string(),
                },
            }),
        }
    }

    let scenario = match entries.get(&(ROOT.to_string(), "scenario".to_string())) {
        None => {
            errors.push(ConfigError {
                line: None,
                kind: ConfigErrorKind::MissingKey { section: "top level".into(), key: "scenario".into() },
            });
            None
        }
        Some(Entry { value: Value::Text(name), line }) => match ScenarioKind::from_name(name) {
            Some(k) => Some(k),
            None => {
                let known: Vec<&str> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
                errors.push(ConfigError {
                    line: Some(*line),
                    kind: ConfigErrorKind::Constraint(format!("unknown scenario `{name}` (known: {})", known.join(", "))),
                });
                None
            }
        },
        Some(_) => None,
    };
    let Some(kind) = scenario else {
        return Err(ConfigErrors(errors));
    };

    for (sec, key) in kind.required_keys() {
        if !entries.contains_key(&(sec.to_string(), key.to_string())) {
            errors.push(ConfigError {
                line: None,
                kind: ConfigErrorKind::MissingKey { section: sec.to_string(), key: key.to_string() },
            });
        }
    }

    let mut cfg = baseline(kind);
    let line_of = |sec: &str, key: &str| entries.get(&(sec.to_string(), key.to_string())).map(|e| e.line);
    for &(sec, key, _) in KEYS {
        let id = (sec.to_string(), key.to_string());
        let Some(entry) = entries.get(&id) else {
            if !sec.is_empty() {
                cfg.defaults.push(qualified(sec, key));
            }
            continue;
        };
        match (&entry.value, sec, key) {
            (Value::Integer(v), _, "seed") => cfg.seed = *v,
            (Value::Float(v), "grid", "L") => cfg.grid.length = *v,
            (Value::Count(v), "grid", "N") => cfg.grid.points = *v,
            (Value::Float(v), "physics", "hbar") => cfg.physics.hbar = *v,
            (Value::Float(v), "physics", "m") => cfg.physics.mass = *v,
            (Value::Float(v), "physics", "D") => cfg.physics.diffusion = *v,
            (Value::Float(v), "physics", "b") => cfg.physics.friction = *v,
            (Value::Float(v), "physics", "kappa") => cfg.physics.kappa = *v,
            (Value::Float(v), "physics", "epsilon") => cfg.physics.epsilon = *v,
            (Value::Float(v), "physics", "E") => cfg.physics.energy = Some(*v),
            (Value::Float(v), "physics", "omega") => cfg.physics.omega = *v,
            (Value::Float(v), "physics", "T") => cfg.physics.temperature = *v,
            (Value::Float(v), "physics", "lambda") => cfg.physics.mean_free_path = Some(*v),
            (Value::Float(v), "physics", "k_B") => cfg.physics.k_b = *v,
            (Value::Float(v), "state", "sigma") => cfg.state.sigma = *v,
            (Value::Float(v), "state", "x0") => cfg.state.x0 = *v,
            (Value::Float(v), "state", "k0") => cfg.state.k0 = *v,
            (Value::Float(v), "run", "dt") => cfg.run.dt = *v,
            (Value::Count(v), "run", "steps") => cfg.run.steps = *v,
            (Value::Count(v), "run", "stride") => cfg.run.stride = *v,
            (Value::Text(v), "run", "out") => cfg.run.out = Some(v.clone()),
            _ => {}
        }
    }

    let mut constraint = |sec: &str, key: &str, msg: String| {
        errors.push(ConfigError { line: line_of(sec, key), kind: ConfigErrorKind::Constraint(msg) });
    };
    let p = &cfg.physics;
    let floats: [(&str, &str, f64); 15] = [
        ("grid", "L", cfg.grid.length),
        ("physics", "hbar", p.hbar),
        ("physics", "m", p.mass),
        ("physics", "D", p.diffusion),
        ("physics", "b", p.friction),
        ("physics", "kappa", p.kappa),
        ("physics", "epsilon", p.epsilon),
        ("physics", "E", p.energy.unwrap_or(0.0)),
        ("physics", "omega", p.omega),
        ("physics", "T", p.temperature),
        ("physics", "lambda", p.mean_free_path.unwrap_or(1.0)),
        ("physics", "k_B", p.k_b),
        ("state", "sigma", cfg.state.sigma),
        ("state", "x0", cfg.state.x0),
        ("state", "k0", cfg.state.k0),
    ];
    let mut all_finite = true;
    for (sec, key, v) in floats {
        if !v.is_finite() {
            all_finite = false;
            constraint(sec, key, format!("{} must be finite, got {v}", qualified(sec, key)));
        }
    }
    if !cfg.run.dt.is_finite() {
        all_finite = false;
        constraint("run", "dt", format!("run.dt must be finite, got {}", cfg.run.dt));
    }
    if all_finite {
        let positive: [(&str, &str, f64); 8] = [
            ("grid", "L", cfg.grid.length),
            ("physics", "hbar", p.hbar),
            ("physics", "m", p.mass),
            ("physics", "b", p.friction),
            ("physics", "omega", p.omega),
            ("physics", "k_B", p.k_b),
            ("state", "sigma", cfg.state.sigma),
            ("run", "dt", cfg.run.dt),
        ];
        for (sec, key, v) in positive {
            if !(v > 0.0) {
                constraint(sec, key, format!("{} must be positive, got {v}", qualified(sec, key)));
            }
        }
        let non_negative: [(&str, &str, f64); 3] =
            [("physics", "D", p.diffusion), ("physics", "kappa", p.kappa), ("physics", "T", p.temperature)];
        for (sec, key, v) in non_negative {
            if v < 0.0 {
                constraint(sec, key, format!("{} must be non-negative, got {v}", qualified(sec, key)));
            }
        }
        if let Some(lambda) = p.mean_free_path {
            if !(lambda > 0.0) {
                constraint("physics", "lambda", format!("physics.lambda must be positive, got {lambda}"));
            } else if p.kappa * lambda >= 1.0 {
                constraint(
                    "physics",
                    "lambda",
                    format!("teleportation length must exceed the mean free path: kappa * lambda = {} must be < 1", p.kappa * lambda),
                );
            }
        }
        if cfg.grid.points < 8 || cfg.grid.points % 2 != 0 {
            constraint("grid", "N", format!("grid.N must be even and at least 8, got {}", cfg.grid.points));
        }
        if cfg.run.stride == 0 {
            constraint("run", "stride", "run.stride must be at least 1".into());
        }
        if cfg.run.steps == 0 {
            constraint("run", "steps", "run.steps must be at least 1".into());
        }
        scenario_constraints(&cfg, &mut constraint);
    }

    if errors.is_empty() {
        Ok(cfg)
    } else {
        errors.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
        Err(ConfigErrors(errors))
    }
}

fn scenario_constraints(cfg: &ScenarioConfig, constraint: &mut impl FnMut(&str, &str, String)) {
    let p = &cfg.physics;
    match cfg.scenario {
        ScenarioKind::DampedPlaneWave => {
            let periods = cfg.state.k0 * cfg.grid.length / (2.0 * std::f64::consts::PI);
            if (periods - periods.round()).abs() > 1e-9 || periods.round() == 0.0 {
                constraint(
                    "state",
                    "k0",
                    format!("plane wave must be periodic on the box: k0 L / 2pi = {periods} is not a non-zero integer"),
                );
            }
        }
        ScenarioKind::DoebnerGoldin | ScenarioKind::MasterDecoherence if !(p.diffusion > 0.0) => {
            constraint("physics", "D", format!("{} needs D > 0", cfg.scenario));
        }
        ScenarioKind::DualSpaceHomogeneous => {
            let e = p.energy.unwrap_or(0.0);
            if !(e > 0.0) {
                constraint("physics", "E", format!("physics.E must be positive, got {e}"));
            } else if p.epsilon.abs() >= e {
                constraint("physics", "epsilon", format!("closed forms need |epsilon| < E, got epsilon = {}", p.epsilon));
            }
        }
        ScenarioKind::QseTeleportFree | ScenarioKind::DispersionTables if !(p.kappa > 0.0) => {
            constraint("physics", "kappa", format!("{} needs kappa > 0", cfg.scenario));
        }
        ScenarioKind::QseThermal if !(p.temperature > 0.0) => {
            constraint("physics", "T", "qse_thermal needs T > 0".into());
        }
        ScenarioKind::MasterDecoherence if cfg.grid.points > 64 => {
            constraint("grid", "N", "master_decoherence uses N as the basis size; keep it at most 64".into());
        }
        _ => {}
    }
}
