//! Experiment configuration from `key = value` pairs.

use std::path::PathBuf;

use thiserror::Error;

use crate::fas::FasMode;
use crate::gummel::{AdaptiveParams, Band, SolverSettings, StopMode, Variant};
use crate::transfer::StrengthParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{key}: {msg}")]
    Invalid { key: String, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshChoice {
    Uniform,
    Kershaw,
    Perturbed,
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Gummel(Variant),
    /// FAS on a nested pair of meshes.
    Gfas,
    /// FAS on an algebraically coarsened Poisson block.
    Afas,
    /// Single two-grid cycle on a nested pair.
    Tg,
}

impl Algorithm {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "gfas" => Some(Self::Gfas),
            "afas" => Some(Self::Afas),
            "tg" => Some(Self::Tg),
            other => Variant::parse(other).map(Self::Gummel),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gummel(Variant::Plain) => "gummel",
            Self::Gummel(Variant::Relaxed) => "relaxed",
            Self::Gummel(Variant::Accel1) => "accel1",
            Self::Gummel(Variant::Accel2) => "accel2",
            Self::Gummel(Variant::Adaptive) => "adaptive",
            Self::Gfas => "gfas",
            Self::Afas => "afas",
            Self::Tg => "tg",
        }
    }

    pub fn is_geometric(self) -> bool {
        matches!(self, Self::Gfas | Self::Tg)
    }

    pub fn fas_mode(self) -> Option<FasMode> {
        match self {
            Self::Gfas | Self::Afas => Some(FasMode::Cycle),
            Self::Tg => Some(FasMode::TwoGrid),
            Self::Gummel(_) => None,
        }
    }
}

/// Coarse concentration operator of the geometric pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseOperator {
    /// EAFE assembled on the coarse mesh.
    Rediscretize,
    /// `R Ā(P φ₂) P` from the fine level.
    Galerkin,
}

/// One run of the manufactured problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mesh: MeshChoice,
    /// Fine lattice size (`h = 1/n`).
    pub n: usize,
    /// Coarse lattice size of the geometric pair; defaults to `n / 2`.
    pub n_coarse: Option<usize>,
    /// Mesh distortion.
    pub s: f64,
    pub l_sq: f64,
    pub algorithm: Algorithm,
    pub solver: SolverSettings,
    pub nu1: usize,
    pub nu2: usize,
    pub smoother: Variant,
    pub coarse_solver: Variant,
    /// `None` picks Galerkin for `gfas` and rediscretization for `tg`.
    pub coarse_op: Option<CoarseOperator>,
    pub amg: StrengthParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mesh: MeshChoice::Uniform,
            n: 16,
            n_coarse: None,
            s: 0.2,
            l_sq: 1.0,
            algorithm: Algorithm::Gummel(Variant::Plain),
            solver: SolverSettings::default(),
            nu1: 1,
            nu2: 1,
            smoother: Variant::Plain,
            coarse_solver: Variant::Plain,
            coarse_op: None,
            amg: StrengthParams::default(),
        }
    }
}

impl ExperimentConfig {
    /// Coarse lattice size and number of refinements for the geometric pair.
    pub fn geometric_pair(&self) -> Result<(usize, usize), ConfigError> {
        let nc = self.n_coarse.unwrap_or(self.n / 2);
        if nc == 0 || nc >= self.n || !self.n.is_multiple_of(nc) || !(self.n / nc).is_power_of_two()
        {
            return Err(invalid(
                "n-coarse",
                format!("{nc} does not reach {} by repeated halving", self.n),
            ));
        }
        Ok((nc, (self.n / nc).trailing_zeros() as usize))
    }

    pub fn coarse_operator(&self) -> CoarseOperator {
        match (self.coarse_op, self.algorithm) {
            (Some(op), _) => op,
            (None, Algorithm::Tg) => CoarseOperator::Rediscretize,
            (None, _) => CoarseOperator::Galerkin,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.l_sq > 0.0) {
            return Err(invalid("Lsq", "must be positive"));
        }
        if self.n == 0 {
            return Err(invalid("n", "must be positive"));
        }
        if self.algorithm.is_geometric() {
            if let MeshChoice::File(_) = self.mesh {
                return Err(invalid("mesh", "geometric FAS needs a structured mesh"));
            }
            self.geometric_pair()?;
        }
        self.solver
            .validate()
            .map_err(|e| invalid("solver", e.to_string()))?;
        self.amg
            .validate()
            .map_err(|e| invalid("amg", e.to_string()))?;
        Ok(())
    }

    /// Apply one `key = value` setting. Keys are case-insensitive and
    /// accept `-` or `_` as separator.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let norm = key.trim().to_ascii_lowercase().replace('_', "-");
        let value = value.trim();
        let num = |k: &str| -> Result<f64, ConfigError> {
            value
                .parse::<f64>()
                .map_err(|_| invalid(k, format!("`{value}` is not a number")))
        };
        let int = |k: &str| -> Result<usize, ConfigError> {
            value
                .parse::<usize>()
                .map_err(|_| invalid(k, format!("`{value}` is not a count")))
        };
        match norm.as_str() {
            "mesh" => {
                self.mesh = match value {
                    "uniform" => MeshChoice::Uniform,
                    "kershaw" => MeshChoice::Kershaw,
                    "perturbed" => MeshChoice::Perturbed,
                    "file" => MeshChoice::File(match &self.mesh {
                        MeshChoice::File(p) => p.clone(),
                        _ => PathBuf::new(),
                    }),
                    _ => return Err(invalid(key, format!("unknown mesh kind `{value}`"))),
                }
            }
            "mesh-file" => self.mesh = MeshChoice::File(PathBuf::from(value)),
            "n" => self.n = int(key)?,
            "n-coarse" => self.n_coarse = Some(int(key)?),
            "s" => self.s = num(key)?,
            "lsq" | "l-sq" => self.l_sq = num(key)?,
            "alg" | "algorithm" => {
                self.algorithm = Algorithm::parse(value)
                    .ok_or_else(|| invalid(key, format!("unknown algorithm `{value}`")))?
            }
            "smoother" => {
                self.smoother = Variant::parse(value)
                    .ok_or_else(|| invalid(key, format!("unknown smoother `{value}`")))?
            }
            "coarse-solver" => {
                self.coarse_solver = Variant::parse(value)
                    .ok_or_else(|| invalid(key, format!("unknown coarse solver `{value}`")))?
            }
            "coarse-operator" => {
                self.coarse_op = Some(match value {
                    "galerkin" => CoarseOperator::Galerkin,
                    "rediscretize" => CoarseOperator::Rediscretize,
                    _ => return Err(invalid(key, format!("unknown coarse operator `{value}`"))),
                })
            }
            "nu1" => self.nu1 = int(key)?,
            "nu2" => self.nu2 = int(key)?,
            "tol" => self.solver.tol = num(key)?,
            "tol-coarse" => self.solver.tol_coarse = num(key)?,
            "max-iter" => self.solver.max_iter = int(key)?,
            "alpha" => self.solver.relax_alpha = num(key)?,
            "divergence-cap" => self.solver.divergence_cap = num(key)?,
            "stop" => {
                self.solver.stop = Some(match value {
                    "relative" => StopMode::RelativeResidual,
                    "absolute" | "residual" => StopMode::Residual,
                    "increment" => StopMode::Increment,
                    _ => return Err(invalid(key, format!("unknown stopping test `{value}`"))),
                })
            }
            "preset" => {
                self.solver.adaptive = AdaptiveParams::preset(value)
                    .ok_or_else(|| invalid(key, format!("unknown preset `{value}`")))?
            }
            "adaptive-alpha" => self.solver.adaptive.alpha = num(key)?,
            "theta-alpha" => self.solver.adaptive.theta_alpha = num(key)?,
            "bands" => {
                self.solver.adaptive.bands = parse_bands(value).map_err(|m| invalid(key, m))?
            }
            "theta1" => self.amg.theta1 = num(key)?,
            "theta2" => self.amg.theta2 = num(key)?,
            "passes" => self.amg.passes = int(key)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }
}

/// `r:θ₁:θ₂` triples separated by commas.
pub fn parse_bands(text: &str) -> Result<Vec<Band>, String> {
    text.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            let [r, t1, t2] = parts[..] else {
                return Err(format!("`{item}` is not r:theta1:theta2"));
            };
            let f = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("`{s}` is not a number"))
            };
            Ok(Band {
                r: f(r)?,
                theta1: f(t1)?,
                theta2: f(t2)?,
            })
        })
        .collect()
}

/// Parse `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax { line: i + 1 })?;
        if k.trim().is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// A cross product of lattice sizes and `L²` values over a base config.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub base: ExperimentConfig,
    pub ns: Vec<usize>,
    pub l_sqs: Vec<f64>,
}

impl Sweep {
    /// Build from pairs in order; `n` and `Lsq` may be comma-separated lists.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, ConfigError> {
        let mut base = ExperimentConfig::default();
        let mut ns = None;
        let mut l_sqs = None;
        for (k, v) in pairs {
            let norm = k.trim().to_ascii_lowercase().replace('_', "-");
            match norm.as_str() {
                "n" => {
                    let list = split_list(v, k, |s| s.parse::<usize>().ok())?;
                    base.n = list[0];
                    ns = Some(list);
                }
                "lsq" | "l-sq" => {
                    let list = split_list(v, k, |s| s.parse::<f64>().ok())?;
                    base.l_sq = list[0];
                    l_sqs = Some(list);
                }
                _ => base.set(k, v)?,
            }
        }
        let sweep = Self {
            ns: ns.unwrap_or(vec![base.n]),
            l_sqs: l_sqs.unwrap_or(vec![base.l_sq]),
            base,
        };
        for c in sweep.configs() {
            c.validate()?;
        }
        Ok(sweep)
    }

    /// Configs in sweep order: `n` outer, `L²` inner. An explicit coarse
    /// size only applies to the first `n`; later ones keep the same ratio.
    pub fn configs(&self) -> Vec<ExperimentConfig> {
        let ratio = self.base.n_coarse.map(|c| (self.base.n / c.max(1)).max(1));
        let mut out = Vec::new();
        for &n in &self.ns {
            for &l_sq in &self.l_sqs {
                let mut c = self.base.clone();
                c.n = n;
                c.l_sq = l_sq;
                c.n_coarse = ratio.map(|r| n / r);
                out.push(c);
            }
        }
        out
    }
}

fn split_list<T>(
    value: &str,
    key: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Vec<T>, ConfigError> {
    let items: Vec<T> = value
        .split(',')
        .map(|s| {
            parse(s.trim()).ok_or_else(|| invalid(key, format!("`{}` is not valid", s.trim())))
        })
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(invalid(key, "empty list"));
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_normalized() {
        let mut c = ExperimentConfig::default();
        for (k, v) in [("Lsq", "2.6"), ("L_sq", "2.7"), ("l-sq", "2.8")] {
            c.set(k, v).unwrap();
        }
        assert_eq!(c.l_sq, 2.8);
        c.set("max_iter", "50").unwrap();
        c.set("TOL-COARSE", "1e-8").unwrap();
        assert_eq!((c.solver.max_iter, c.solver.tol_coarse), (50, 1e-8));
    }

    #[test]
    fn errors_name_the_key() {
        let mut c = ExperimentConfig::default();
        let e = c.set("nu1", "many").unwrap_err().to_string();
        assert!(e.starts_with("nu1:"), "{e}");
        assert!(matches!(c.set("colour", "red"), Err(ConfigError::UnknownKey(k)) if k == "colour"));
        let e = c.set("alg", "newton").unwrap_err().to_string();
        assert!(e.contains("newton"), "{e}");
    }

    #[test]
    fn every_parameter_is_settable() {
        let mut c = ExperimentConfig::default();
        let pairs = [
            ("mesh", "perturbed"),
            ("n", "16"),
            ("n-coarse", "4"),
            ("s", "0.3"),
            ("Lsq", "3"),
            ("alg", "gfas"),
            ("nu1", "2"),
            ("nu2", "0"),
            ("tol", "1e-5"),
            ("tol-coarse", "1e-6"),
            ("max-iter", "200"),
            ("alpha", "0.4"),
            ("preset", "adaptive-b"),
            ("theta-alpha", "0.01"),
            ("adaptive-alpha", "0.2"),
            ("bands", "1e-2:0.1:1, 0:0:100"),
            ("theta1", "0.5"),
            ("theta2", "0.9"),
            ("passes", "2"),
            ("smoother", "accel2"),
            ("coarse-solver", "relaxed"),
            ("coarse-operator", "rediscretize"),
            ("stop", "increment"),
        ];
        for (k, v) in pairs {
            c.set(k, v).unwrap();
        }
        assert_eq!(c.mesh, MeshChoice::Perturbed);
        assert_eq!((c.n, c.n_coarse, c.s, c.l_sq), (16, Some(4), 0.3, 3.0));
        assert_eq!(c.algorithm, Algorithm::Gfas);
        assert_eq!((c.nu1, c.nu2), (2, 0));
        assert_eq!(
            (c.solver.tol, c.solver.tol_coarse, c.solver.max_iter),
            (1e-5, 1e-6, 200)
        );
        assert_eq!(c.solver.relax_alpha, 0.4);
        assert_eq!(
            (c.solver.adaptive.theta_alpha, c.solver.adaptive.alpha),
            (0.01, 0.2)
        );
        assert_eq!(c.solver.adaptive.bands.len(), 2);
        assert_eq!(
            c.solver.adaptive.bands[0],
            Band {
                r: 1e-2,
                theta1: 0.1,
                theta2: 1.0
            }
        );
        assert_eq!(
            c.amg,
            StrengthParams {
                theta1: 0.5,
                theta2: 0.9,
                passes: 2
            }
        );
        assert_eq!(
            (c.smoother, c.coarse_solver),
            (Variant::Accel2, Variant::Relaxed)
        );
        assert_eq!(c.coarse_operator(), CoarseOperator::Rediscretize);
        assert_eq!(c.solver.stop, Some(StopMode::Increment));
        assert_eq!(c.geometric_pair().unwrap(), (4, 2));
        c.validate().unwrap();
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig {
            l_sq: 0.0,
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().to_string().starts_with("Lsq"));
        c.l_sq = 1.0;
        c.algorithm = Algorithm::Gfas;
        c.n_coarse = Some(6);
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .starts_with("n-coarse"));
        c.n_coarse = None;
        c.mesh = MeshChoice::File("m.txt".into());
        assert!(c.validate().unwrap_err().to_string().starts_with("mesh"));
        c.algorithm = Algorithm::Afas;
        c.validate().unwrap();
    }

    #[test]
    fn coarse_operator_defaults() {
        let mut c = ExperimentConfig {
            algorithm: Algorithm::Gfas,
            ..Default::default()
        };
        assert_eq!(c.coarse_operator(), CoarseOperator::Galerkin);
        c.algorithm = Algorithm::Tg;
        assert_eq!(c.coarse_operator(), CoarseOperator::Rediscretize);
    }

    #[test]
    fn pairs_skip_comments() {
        let text = "# sweep\nalg = gummel\n\nLsq = 1, 2.6 # two values\n";
        let pairs = parse_pairs(text).unwrap();
        assert_eq!(
            pairs,
            vec![
                ("alg".to_string(), "gummel".to_string()),
                ("Lsq".into(), "1, 2.6".into())
            ]
        );
        assert!(matches!(
            parse_pairs("alg gummel"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(matches!(
            parse_pairs("ok = 1\n= 2"),
            Err(ConfigError::Syntax { line: 2 })
        ));
    }

    #[test]
    fn sweep_is_the_cross_product_in_order() {
        let s = Sweep::from_pairs([
            ("n", "8,16"),
            ("Lsq", "1,2.6,2.7"),
            ("alg", "gfas"),
            ("n_coarse", "4"),
        ])
        .unwrap();
        let got: Vec<(usize, Option<usize>, f64)> = s
            .configs()
            .iter()
            .map(|c| (c.n, c.n_coarse, c.l_sq))
            .collect();
        assert_eq!(
            got,
            vec![
                (8, Some(4), 1.0),
                (8, Some(4), 2.6),
                (8, Some(4), 2.7),
                (16, Some(8), 1.0),
                (16, Some(8), 2.6),
                (16, Some(8), 2.7),
            ]
        );
        assert!(Sweep::from_pairs([("n", "8,x")]).is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for name in [
            "gummel", "relaxed", "accel1", "accel2", "adaptive", "gfas", "afas", "tg",
        ] {
            assert_eq!(Algorithm::parse(name).unwrap().name(), name);
        }
    }
}
