//! Scenario files: flat UTF-8 `key = value` lines with `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sbdp_core::Variant;
use thiserror::Error;

use crate::logreg::LogregParams;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("no scenario file or built-in scenario named `{0}`")]
    NotFound(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse {
        line,
        message: message.into(),
    }
}

/// A fixed value, or one chosen by the linearized analysis at the optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Param {
    Fixed(f64),
    Auto,
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Fixed(v) => write!(f, "{v}"),
            Param::Auto => f.write_str("auto"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Nlp61,
    Example31 { a: f64, with_g2: bool },
    Example51,
    Logreg(LogregParams),
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Nlp61 => "nlp61",
            ProblemSpec::Example31 { .. } => "example31",
            ProblemSpec::Example51 => "example51",
            ProblemSpec::Logreg(_) => "logreg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub problem: ProblemSpec,
    /// Initial primal point; multipliers start at zero.
    pub x0: Option<Vec<f64>>,
    pub variant: Variant,
    pub alpha: Param,
    pub beta: Param,
    pub rho: f64,
    pub gamma: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub local_tol: f64,
    pub timing: bool,
    pub neighbor_affine: bool,
    /// Compute the rate certificate at the reference optimum.
    pub certify: bool,
    /// Penalty of the ADMM baseline (logistic regression only).
    pub admm_penalty: Option<f64>,
    pub admm_max_iter: usize,
    pub log_messages: bool,
    pub out: Option<PathBuf>,
}

impl Scenario {
    fn defaults(name: String, problem: ProblemSpec) -> Self {
        Self {
            name,
            problem,
            x0: None,
            variant: Variant::Plus,
            alpha: Param::Fixed(0.5),
            beta: Param::Fixed(1.0),
            rho: 0.0,
            gamma: 0.0,
            eps: 1e-8,
            max_iter: 1000,
            local_tol: 1e-10,
            timing: false,
            neighbor_affine: false,
            certify: true,
            admm_penalty: None,
            admm_max_iter: 1000,
            log_messages: false,
            out: None,
        }
    }

    /// Reads `arg` as a file path, falling back to the built-in scenario of that name.
    pub fn load(arg: &str) -> Result<Self, ScenarioError> {
        let path = Path::new(arg);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            return Self::parse(&text);
        }
        match builtin(arg) {
            Some(text) => Self::parse(text),
            None => Err(ScenarioError::NotFound(arg.to_string())),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut table = Table::read(text)?;
        let name = table.take("name").map(|(_, v)| v.to_string());
        let (problem_line, problem) = table
            .take("problem")
            .ok_or(ScenarioError::Missing("problem"))?;
        let problem = match problem {
            "nlp61" => ProblemSpec::Nlp61,
            "example51" => ProblemSpec::Example51,
            "example31" => ProblemSpec::Example31 {
                a: table.number("a")?.ok_or(ScenarioError::Missing("a"))?,
                with_g2: table.parsed("with_g2")?.unwrap_or(false),
            },
            "logreg" => {
                let d = LogregParams::default();
                ProblemSpec::Logreg(LogregParams {
                    samples: table.parsed("m")?.unwrap_or(d.samples),
                    features: table.parsed("n")?.unwrap_or(d.features),
                    agents: table.parsed("agents")?.unwrap_or(d.agents),
                    seed: table.parsed("seed")?.unwrap_or(d.seed),
                    eps_reg: table.number("eps_reg")?.unwrap_or(d.eps_reg),
                    box_bound: table.number("box")?.unwrap_or(d.box_bound),
                    feature_std: table.number("feature_std")?.unwrap_or(d.feature_std),
                    noise_var: table.number("noise_var")?.unwrap_or(d.noise_var),
                })
            }
            other => {
                return Err(parse_err(
                    problem_line,
                    format!("unknown problem `{other}`"),
                ))
            }
        };
        let mut s = Scenario::defaults(name.unwrap_or_else(|| problem.name().to_string()), problem);
        if let Some((line, v)) = table.take("x0") {
            let xs = v
                .split(',')
                .map(|t| parse_finite(t.trim()).map_err(|m| parse_err(line, format!("x0: {m}"))))
                .collect::<Result<Vec<_>, _>>()?;
            s.x0 = Some(xs);
        }
        if let Some(v) = table.parsed::<Variant>("variant")? {
            s.variant = v;
        }
        if let Some(v) = table.param("alpha")? {
            s.alpha = v;
        }
        if let Some(v) = table.param("beta")? {
            s.beta = v;
        }
        s.rho = table.number("rho")?.unwrap_or(s.rho);
        s.gamma = table.number("gamma")?.unwrap_or(s.gamma);
        if let Some((line, v)) = table.take("eps") {
            s.eps = match v {
                "inf" => f64::INFINITY,
                _ => parse_finite(v).map_err(|m| parse_err(line, format!("eps: {m}")))?,
            };
        }
        s.max_iter = table.parsed("max_iter")?.unwrap_or(s.max_iter);
        s.local_tol = table.number("local_tol")?.unwrap_or(s.local_tol);
        s.timing = table.parsed("timing")?.unwrap_or(s.timing);
        s.neighbor_affine = table
            .parsed("neighbor_affine")?
            .unwrap_or(s.neighbor_affine);
        s.certify = table.parsed("certify")?.unwrap_or(s.certify);
        s.admm_penalty = table.number("admm_penalty")?;
        s.admm_max_iter = table.parsed("admm_max_iter")?.unwrap_or(s.admm_max_iter);
        s.log_messages = table.parsed("log_messages")?.unwrap_or(s.log_messages);
        s.out = table.take("out").map(|(_, v)| PathBuf::from(v));
        if s.admm_penalty.is_some() && !matches!(s.problem, ProblemSpec::Logreg(_)) {
            return Err(parse_err(
                table.line_of("admm_penalty"),
                "admm_penalty applies to logreg only",
            ));
        }
        table.finish()?;
        Ok(s)
    }
}

fn parse_finite(v: &str) -> Result<f64, String> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        Ok(_) => Err(format!("`{v}` is not finite")),
        Err(_) => Err(format!("`{v}` is not a number")),
    }
}

struct Table<'a> {
    entries: BTreeMap<&'a str, (usize, &'a str)>,
    lines: BTreeMap<&'a str, usize>,
}

impl<'a> Table<'a> {
    fn read(text: &'a str) -> Result<Self, ScenarioError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                parse_err(line, format!("expected `key = value`, found `{content}`"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(parse_err(line, "empty key or value"));
            }
            if entries.insert(key, (line, value)).is_some() {
                return Err(parse_err(line, format!("duplicate key `{key}`")));
            }
        }
        let lines = entries.iter().map(|(k, (l, _))| (*k, *l)).collect();
        Ok(Self { entries, lines })
    }

    fn line_of(&self, key: &str) -> usize {
        self.lines.get(key).copied().unwrap_or(0)
    }

    fn take(&mut self, key: &str) -> Option<(usize, &'a str)> {
        self.entries.remove(key)
    }

    fn parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ScenarioError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| parse_err(line, format!("invalid value `{v}` for `{key}`"))),
        }
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, ScenarioError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => parse_finite(v)
                .map(Some)
                .map_err(|m| parse_err(line, format!("{key}: {m}"))),
        }
    }

    fn param(&mut self, key: &str) -> Result<Option<Param>, ScenarioError> {
        match self.take(key) {
            None => Ok(None),
            Some((_, "auto")) => Ok(Some(Param::Auto)),
            Some((line, v)) => parse_finite(v)
                .map(|x| Some(Param::Fixed(x)))
                .map_err(|m| parse_err(line, format!("{key}: {m}"))),
        }
    }

    fn finish(self) -> Result<(), ScenarioError> {
        match self.entries.iter().min_by_key(|(_, (line, _))| *line) {
            Some((key, (line, _))) => Err(parse_err(*line, format!("unknown key `{key}`"))),
            None => Ok(()),
        }
    }
}

pub const BUILTIN: [(&str, &str); 4] = [
    (
        "nlp61_default",
        include_str!("../scenarios/nlp61_default.scn"),
    ),
    (
        "logreg_paper",
        include_str!("../scenarios/logreg_paper.scn"),
    ),
    ("example31", include_str!("../scenarios/example31.scn")),
    ("example51", include_str!("../scenarios/example51.scn")),
];

pub fn builtin(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        for (name, text) in BUILTIN {
            let s = Scenario::parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name, name);
        }
    }

    #[test]
    fn reads_fields_and_comments() {
        let s = Scenario::parse(
            "# header\nproblem = example31\na = 0.5   # coupling\nwith_g2 = true\nvariant = baseline\nalpha = 1\nbeta = auto\neps = inf\n",
        )
        .unwrap();
        assert_eq!(
            s.problem,
            ProblemSpec::Example31 {
                a: 0.5,
                with_g2: true
            }
        );
        assert_eq!(s.variant, Variant::Baseline);
        assert_eq!(s.alpha, Param::Fixed(1.0));
        assert_eq!(s.beta, Param::Auto);
        assert!(s.eps.is_infinite());
        assert_eq!(s.name, "example31");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("problem = nlp61\n\nbogus = 1\n", 3, "unknown key"),
            ("problem = nlp61\nalpha = x\n", 2, "not a number"),
            ("problem = nlp61\nrho = nan\n", 2, "not finite"),
            ("problem = nlp61\nrho\n", 2, "expected"),
            ("problem = nlp61\nrho = 1\nrho = 2\n", 3, "duplicate"),
            ("problem = nlp62\n", 1, "unknown problem"),
            ("problem = nlp61\nvariant = fancy\n", 2, "invalid value"),
            ("problem = nlp61\na = 0.5\n", 2, "unknown key"),
            ("problem = nlp61\nadmm_penalty = 0.1\n", 2, "logreg only"),
        ];
        for (text, line, needle) in cases {
            match Scenario::parse(text) {
                Err(ScenarioError::Parse { line: l, message }) => {
                    assert_eq!(l, line, "{text}");
                    assert!(message.contains(needle), "{message}");
                }
                other => panic!("{text}: {other:?}"),
            }
        }
        assert_eq!(
            Scenario::parse("a = 1\n"),
            Err(ScenarioError::Missing("problem"))
        );
    }

    #[test]
    fn unknown_scenario_name() {
        assert!(matches!(
            Scenario::load("no_such_scenario"),
            Err(ScenarioError::NotFound(_))
        ));
    }
}
