use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Solver {
    EmRandom,
    EmKmeanspp,
    EmOracle,
    Spectral,
    TfEm,
}

impl Solver {
    pub const ALL: [Solver; 5] = [
        Solver::EmRandom,
        Solver::EmKmeanspp,
        Solver::EmOracle,
        Solver::Spectral,
        Solver::TfEm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Solver::EmRandom => "em-random",
            Solver::EmKmeanspp => "em-kmeanspp",
            Solver::EmOracle => "em-oracle",
            Solver::Spectral => "spectral",
            Solver::TfEm => "tf-em",
        }
    }

    /// Stable identifier used to derive per-solver random streams.
    pub fn id(self) -> u64 {
        match self {
            Solver::EmRandom => 1,
            Solver::EmKmeanspp => 2,
            Solver::EmOracle => 3,
            Solver::Spectral => 4,
            Solver::TfEm => 5,
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Solver::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown solver `{s}`")))
    }
}

/// Grid and solver settings for [`super::run_suite`].
///
/// Config files are flat `key = value` lines; lists are comma separated and
/// integer lists also accept inclusive ranges such as `0..10`. `#` starts a
/// comment. Recognized keys are the field names below.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub name: String,
    pub dims: Vec<usize>,
    pub k_values: Vec<usize>,
    /// Sample size of every evaluation task.
    pub n_eval: usize,
    pub trials: usize,
    pub solvers: Vec<Solver>,
    /// Mean-shift magnitudes; one block of cells per value.
    pub sigma_p: Vec<f64>,
    pub seed: u64,
    pub em_max_iters: usize,
    pub em_tol: f64,
    pub em_restarts: usize,
    pub power_restarts: usize,
    pub power_iters: usize,
    pub tf_layers: usize,
    pub tf_delta: f64,
    /// Spectral cells with larger `d` are recorded as skipped.
    pub spectral_max_dim: usize,
    /// Transformer-EM cells with larger `d` are recorded as skipped.
    pub tf_max_dim: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            name: "comparison".into(),
            dims: vec![2, 8, 32, 128],
            k_values: vec![2, 3, 4, 5],
            n_eval: 128,
            trials: 128,
            solvers: vec![Solver::EmRandom, Solver::EmKmeanspp, Solver::Spectral],
            sigma_p: (0..=10).map(f64::from).collect(),
            seed: 0,
            em_max_iters: 200,
            em_tol: 1e-6,
            em_restarts: 1,
            power_restarts: 20,
            power_iters: 50,
            tf_layers: 10,
            tf_delta: 1e-4,
            spectral_max_dim: 32,
            tf_max_dim: 32,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Parse(format!("{key}: cannot parse `{s}`")))
        })
        .collect()
}

fn parse_int_list(key: &str, value: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.trim().parse().map_err(|_| Error::Parse(format!("{key}: bad range `{part}`")))?;
            let b: usize = b.trim().parse().map_err(|_| Error::Parse(format!("{key}: bad range `{part}`")))?;
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| Error::Parse(format!("{key}: cannot parse `{part}`")))?);
        }
    }
    Ok(out)
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse `{value}`")))
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return bad("dims must be non-empty and positive");
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return bad("k_values must be non-empty and positive");
        }
        if self.solvers.is_empty() {
            return bad("at least one solver is required");
        }
        if self.sigma_p.is_empty() || self.sigma_p.iter().any(|s| !(*s >= 0.0)) {
            return bad("sigma_p must be non-empty and nonnegative");
        }
        if self.n_eval == 0 {
            return bad("n_eval must be at least 1");
        }
        if self.em_max_iters == 0 || !(self.em_tol > 0.0) {
            return bad("em_max_iters >= 1 and em_tol > 0 required");
        }
        if self.power_restarts == 0 || self.power_iters == 0 {
            return bad("power_restarts and power_iters must be at least 1");
        }
        if !(self.tf_delta > 0.0 && self.tf_delta < 1.0) {
            return bad("tf_delta must lie in (0, 1)");
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "name" => c.name = value.to_string(),
                "dims" => c.dims = parse_int_list(key, value)?,
                "k_values" => c.k_values = parse_int_list(key, value)?,
                "n_eval" => c.n_eval = parse_one(key, value)?,
                "trials" => c.trials = parse_one(key, value)?,
                "solvers" => c.solvers = parse_list(key, value)?,
                "sigma_p" => {
                    c.sigma_p = if value.contains("..") {
                        parse_int_list(key, value)?.into_iter().map(|v| v as f64).collect()
                    } else {
                        parse_list(key, value)?
                    }
                }
                "seed" => c.seed = parse_one(key, value)?,
                "em_max_iters" => c.em_max_iters = parse_one(key, value)?,
                "em_tol" => c.em_tol = parse_one(key, value)?,
                "em_restarts" => c.em_restarts = parse_one(key, value)?,
                "power_restarts" => c.power_restarts = parse_one(key, value)?,
                "power_iters" => c.power_iters = parse_one(key, value)?,
                "tf_layers" => c.tf_layers = parse_one(key, value)?,
                "tf_delta" => c.tf_delta = parse_one(key, value)?,
                "spectral_max_dim" => c.spectral_max_dim = parse_one(key, value)?,
                "tf_max_dim" => c.tf_max_dim = parse_one(key, value)?,
                other => return Err(Error::Parse(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_file() {
        let c = SuiteConfig::parse(
            "# small run\nname = quick\ndims = 2, 8\nk_values = 2..4\ntrials = 3\n\
             solvers = spectral,em-random\nsigma_p = 0, 0.5\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(c.name, "quick");
        assert_eq!(c.dims, vec![2, 8]);
        assert_eq!(c.k_values, vec![2, 3, 4]);
        assert_eq!(c.solvers, vec![Solver::Spectral, Solver::EmRandom]);
        assert_eq!(c.sigma_p, vec![0.0, 0.5]);
        assert_eq!(c.seed, 9);
        assert_eq!(c.n_eval, 128);
    }

    #[test]
    fn sigma_range() {
        let c = SuiteConfig::parse("sigma_p = 0..10").unwrap();
        assert_eq!(c.sigma_p.len(), 11);
        assert_eq!(SuiteConfig::default().sigma_p, c.sigma_p);
    }

    #[test]
    fn rejects_garbage() {
        assert!(SuiteConfig::parse("bogus = 1").is_err());
        assert!(SuiteConfig::parse("trials").is_err());
        assert!(SuiteConfig::parse("trials = 0").is_err());
        assert!(SuiteConfig::parse("solvers = em-magic").is_err());
    }

    #[test]
    fn solver_names_round_trip() {
        for s in Solver::ALL {
            assert_eq!(s.name().parse::<Solver>().unwrap(), s);
        }
    }
}
