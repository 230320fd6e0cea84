//! Run configuration: flag/file merging, validation and the manifest format.
//!
//! Configuration is a flat `key=value` document. A config file is read
//! first, then command-line flags are layered on top. The resolved config
//! renders back to the same format; that rendering is the run manifest.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use quasistat::experiments::{validate_y_factors, McSettings, ModelPreset, PresetName};
use quasistat::format::{float, KeyValues};
use quasistat::grid::{GridKind, GridTemplate};
use quasistat::kernel::{InnovationDistribution, Measure, MultiplicativeKernel, PhiFunction};
use quasistat::monte_carlo::DEFAULT_STEP_CAP;
use quasistat::qsd::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use thiserror::Error;

/// Invalid configuration; maps to exit code 1.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// State-space floor given to inline models whose `φ` vanishes at zero.
pub const INLINE_POWER_FLOOR: f64 = 1e-12;
pub const DEFAULT_SEED: u64 = 12345;
pub const DEFAULT_REPS: u64 = 100_000;
pub const DEFAULT_COUPLING_STEPS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    CheckConditions,
    Simulate,
    Sweep,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::CheckConditions => "check-conditions",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "solve" => Ok(Command::Solve),
            "check-conditions" => Ok(Command::CheckConditions),
            "simulate" => Ok(Command::Simulate),
            "sweep" => Ok(Command::Sweep),
            other => err(format!("unknown command {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    Preset(PresetName),
    Inline {
        phi: PhiFunction,
        innovation: InnovationDistribution,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub model: ModelSpec,
    pub kernel: MultiplicativeKernel,
    pub threshold: Option<f64>,
    pub grid: GridTemplate,
    pub tol: f64,
    pub max_iter: usize,
    pub mc: McSettings,
    /// Whether `sweep` runs Monte Carlo per row.
    pub sweep_mc: bool,
    pub y_factors: Vec<f64>,
    pub couple: Option<f64>,
    pub out: PathBuf,
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => err(format!(
            "field `{key}`: expected a finite number, got {v:?}"
        )),
    }
}

fn parse_u64(key: &str, v: &str) -> Result<u64, ConfigError> {
    v.parse::<u64>().or_else(|_| {
        err(format!(
            "field `{key}`: expected a nonnegative integer, got {v:?}"
        ))
    })
}

pub fn parse_phi(v: &str) -> Result<PhiFunction, ConfigError> {
    let parts: Vec<&str> = v.split(':').collect();
    let phi = match parts.as_slice() {
        ["power", alpha] => PhiFunction::Power {
            alpha: parse_f64("phi", alpha)?,
        },
        ["affine", a] => PhiFunction::Affine {
            a: parse_f64("phi", a)?,
        },
        ["max-one"] => PhiFunction::MaxOne,
        _ => {
            return err(format!(
                "field `phi`: expected power:<alpha> | affine:<a> | max-one, got {v:?}"
            ))
        }
    };
    phi.validate()
        .map_err(|e| ConfigError(format!("field `phi`: {e}")))?;
    Ok(phi)
}

pub fn render_phi(phi: &PhiFunction) -> String {
    match phi {
        PhiFunction::Power { alpha } => format!("power:{}", float(*alpha)),
        PhiFunction::Affine { a } => format!("affine:{}", float(*a)),
        PhiFunction::MaxOne => "max-one".to_string(),
    }
}

pub fn parse_innovation(v: &str) -> Result<InnovationDistribution, ConfigError> {
    let parts: Vec<&str> = v.split(':').collect();
    let inn = match parts.as_slice() {
        ["lognormal", mu, sigma] => InnovationDistribution::LogNormal {
            mu: parse_f64("innovation", mu)?,
            sigma: parse_f64("innovation", sigma)?,
        },
        ["lr-gaussian", theta, measure] => InnovationDistribution::LikelihoodRatioGaussian {
            theta: parse_f64("innovation", theta)?,
            measure: match *measure {
                "pre" => Measure::Pre,
                "post" => Measure::Post,
                m => return err(format!("field `innovation`: measure must be pre|post, got {m:?}")),
            },
        },
        _ => {
            return err(format!(
                "field `innovation`: expected lognormal:<mu>:<sigma> | lr-gaussian:<theta>:pre|post, got {v:?}"
            ))
        }
    };
    inn.validate()
        .map_err(|e| ConfigError(format!("field `innovation`: {e}")))?;
    Ok(inn)
}

pub fn render_innovation(inn: &InnovationDistribution) -> String {
    match inn {
        InnovationDistribution::LogNormal { mu, sigma } => {
            format!("lognormal:{}:{}", float(*mu), float(*sigma))
        }
        InnovationDistribution::LikelihoodRatioGaussian { theta, measure } => format!(
            "lr-gaussian:{}:{}",
            float(*theta),
            match measure {
                Measure::Pre => "pre",
                Measure::Post => "post",
            }
        ),
    }
}

pub fn parse_grid(v: &str) -> Result<GridTemplate, ConfigError> {
    let parts: Vec<&str> = v.split(':').collect();
    let (kind, n, lower) = match parts.as_slice() {
        [kind, n] => (*kind, *n, None),
        [kind, n, lower] => (*kind, *n, Some(parse_f64("grid", lower)?)),
        _ => return err(format!("field `grid`: expected kind:n[:lower], got {v:?}")),
    };
    let kind = GridKind::from_str(kind).map_err(|e| ConfigError(format!("field `grid`: {e}")))?;
    let n_cells = parse_u64("grid", n)? as usize;
    if n_cells == 0 {
        return err("field `grid`: need at least one cell");
    }
    if let Some(l) = lower {
        if l < 0.0 || (kind == GridKind::Geometric && l == 0.0) {
            return err(format!(
                "field `grid`: lower edge {l} invalid for a {kind} grid"
            ));
        }
    }
    Ok(GridTemplate {
        kind,
        n_cells,
        lower,
    })
}

pub fn render_grid(g: &GridTemplate) -> String {
    match g.lower {
        Some(l) => format!("{}:{}:{}", g.kind, g.n_cells, float(l)),
        None => format!("{}:{}", g.kind, g.n_cells),
    }
}

pub fn parse_y_factors(v: &str) -> Result<Vec<f64>, ConfigError> {
    let ys = v
        .split(',')
        .map(|p| parse_f64("y_factors", p.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    validate_y_factors(&ys).map_err(|e| ConfigError(format!("field `y_factors`: {e}")))?;
    Ok(ys)
}

impl RunConfig {
    /// Resolves and validates a merged key/value document.
    pub fn resolve(command: Command, kv: &KeyValues) -> Result<Self, ConfigError> {
        let known = [
            "command",
            "model",
            "phi",
            "innovation",
            "a",
            "grid",
            "tol",
            "max_iter",
            "reps",
            "seed",
            "step_cap",
            "y_factors",
            "couple",
            "mc",
            "out",
        ];
        if let Some((k, _)) = kv
            .entries()
            .iter()
            .find(|(k, _)| !known.contains(&k.as_str()))
        {
            return err(format!("unknown field `{k}`"));
        }
        if let Some(c) = kv.get("command") {
            if c != command.as_str() {
                return err(format!(
                    "field `command`: config is for {c:?}, not {:?}",
                    command.as_str()
                ));
            }
        }

        let model_field = kv.get("model");
        let phi = kv.get("phi");
        let innovation = kv.get("innovation");
        let (model, kernel, preset) = match (model_field, phi, innovation) {
            (Some("inline") | None, Some(p), Some(i)) => {
                let phi = parse_phi(p)?;
                let innovation = parse_innovation(i)?;
                let floor = if phi.positive_at_zero() {
                    0.0
                } else {
                    INLINE_POWER_FLOOR
                };
                let kernel = MultiplicativeKernel::new(phi, innovation, floor)
                    .map_err(|e| ConfigError(format!("field `model`: {e}")))?;
                (ModelSpec::Inline { phi, innovation }, kernel, None)
            }
            (Some("inline") | None, Some(_), None) => return err("missing field `innovation`"),
            (Some("inline") | None, None, Some(_)) => return err("missing field `phi`"),
            (Some("inline"), None, None) => return err("missing fields `phi` and `innovation`"),
            (None, None, None) => {
                return err("missing field `model` (a preset name, or --phi with --innovation)")
            }
            (Some(name), None, None) => {
                let name = PresetName::from_str(name).map_err(|_| {
                    ConfigError(format!(
                        "field `model`: unknown preset {name:?} (ewma | shiryaev-roberts | cusum)"
                    ))
                })?;
                let preset = ModelPreset::new(name);
                (ModelSpec::Preset(name), preset.kernel, Some(preset))
            }
            (Some(_), _, _) => {
                return err("field `model`: a preset cannot be combined with `phi`/`innovation`")
            }
        };

        let threshold = match kv.get("a") {
            Some(v) => Some(parse_f64("a", v)?),
            None if command == Command::Sweep => {
                preset.as_ref().map(|p| p.default_base_threshold())
            }
            None => None,
        };
        if let Some(a) = threshold {
            if a <= 0.0 {
                return err(format!("field `A`: threshold must be > 0, got {a}"));
            }
            if let Some(p) = &preset {
                p.validate_threshold(a)
                    .map_err(|e| ConfigError(format!("field `A`: {e}")))?;
            }
        } else if command != Command::CheckConditions {
            return err("missing field `A` (threshold)");
        }

        let grid = match kv.get("grid") {
            Some(v) => parse_grid(v)?,
            None => GridTemplate::default(),
        };
        if let (Some(a), Some(l)) = (threshold, grid.lower) {
            if l >= a {
                return err(format!("field `grid`: lower edge {l} must be below A={a}"));
            }
        }

        let tol = match kv.get("tol") {
            Some(v) => parse_f64("tol", v)?,
            None => DEFAULT_TOL,
        };
        if tol <= 0.0 {
            return err(format!("field `tol`: must be > 0, got {tol}"));
        }
        let max_iter = match kv.get("max_iter") {
            Some(v) => parse_u64("max_iter", v)? as usize,
            None => DEFAULT_MAX_ITER,
        };
        if max_iter == 0 {
            return err("field `max_iter`: must be >= 1");
        }

        let n_reps = match kv.get("reps") {
            Some(v) => parse_u64("reps", v)?,
            None => DEFAULT_REPS,
        };
        if n_reps < 2 {
            return err(format!(
                "field `reps`: need at least 2 replications, got {n_reps}"
            ));
        }
        let seed = match kv.get("seed") {
            Some(v) => parse_u64("seed", v)?,
            None => DEFAULT_SEED,
        };
        let step_cap = match kv.get("step_cap") {
            Some(v) => parse_u64("step_cap", v)?,
            None => DEFAULT_STEP_CAP,
        };
        if step_cap == 0 {
            return err("field `step_cap`: must be >= 1");
        }

        let y_factors = match kv.get("y_factors") {
            Some(v) => parse_y_factors(v)?,
            None => vec![1.0, 2.0, 4.0, 8.0],
        };
        let couple = match kv.get("couple") {
            Some("") | None => None,
            Some(v) => {
                let y = parse_f64("couple", v)?;
                if y < 1.0 {
                    return err(format!(
                        "field `couple`: scale factor must be >= 1, got {y}"
                    ));
                }
                Some(y)
            }
        };
        let sweep_mc = match kv.get("mc") {
            Some("on") => true,
            Some("off") | None => false,
            Some(v) => return err(format!("field `mc`: expected on|off, got {v:?}")),
        };
        let out = match kv.get("out") {
            Some("") => return err("field `out`: empty path prefix"),
            Some(v) => PathBuf::from(v),
            None => PathBuf::from(format!("quasistat-{}", command.as_str())),
        };

        Ok(RunConfig {
            command,
            model,
            kernel,
            threshold,
            grid,
            tol,
            max_iter,
            mc: McSettings {
                n_reps,
                seed,
                step_cap,
            },
            sweep_mc,
            y_factors,
            couple,
            out,
        })
    }

    /// Canonical rendering; resolving it again yields an identical config.
    pub fn to_manifest(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("command", self.command.as_str());
        match &self.model {
            ModelSpec::Preset(name) => {
                kv.push("model", name.as_str());
            }
            ModelSpec::Inline { phi, innovation } => {
                kv.push("model", "inline")
                    .push("phi", render_phi(phi))
                    .push("innovation", render_innovation(innovation));
            }
        }
        if let Some(a) = self.threshold {
            kv.push_f64("a", a);
        }
        kv.push("grid", render_grid(&self.grid))
            .push_f64("tol", self.tol)
            .push("max_iter", self.max_iter.to_string())
            .push("reps", self.mc.n_reps.to_string())
            .push("seed", self.mc.seed.to_string())
            .push("step_cap", self.mc.step_cap.to_string())
            .push(
                "y_factors",
                self.y_factors
                    .iter()
                    .map(|y| float(*y))
                    .collect::<Vec<_>>()
                    .join(","),
            )
            .push("couple", self.couple.map(float).unwrap_or_default())
            .push("mc", if self.sweep_mc { "on" } else { "off" })
            .push("out", self.out.to_string_lossy().into_owned());
        kv
    }

    pub fn model_label(&self) -> String {
        match &self.model {
            ModelSpec::Preset(name) => name.as_str().to_string(),
            ModelSpec::Inline { phi, innovation } => {
                format!(
                    "inline({}; {})",
                    render_phi(phi),
                    render_innovation(innovation)
                )
            }
        }
    }

    /// `<out><suffix>`, e.g. `run.qsd.csv`.
    pub fn output_path(&self, suffix: &str) -> PathBuf {
        let mut s = self.out.clone().into_os_string();
        s.push(suffix);
        PathBuf::from(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> KeyValues {
        let mut kv = KeyValues::new();
        for (k, v) in pairs {
            kv.push(k, *v);
        }
        kv
    }

    #[test]
    fn missing_model_names_the_field() {
        let e = RunConfig::resolve(Command::Solve, &kv(&[("a", "2")])).unwrap_err();
        assert!(e.0.contains("`model`"), "{e}");
    }

    #[test]
    fn cusum_needs_threshold_above_one() {
        let e = RunConfig::resolve(Command::Solve, &kv(&[("model", "cusum"), ("a", "1.0")]))
            .unwrap_err();
        assert!(e.0.contains("log A > 0"), "{e}");
    }

    #[test]
    fn y_factor_parsing() {
        assert_eq!(
            parse_y_factors("1,2,4,8").unwrap(),
            vec![1.0, 2.0, 4.0, 8.0]
        );
        assert!(parse_y_factors("1,4,2").is_err());
        assert!(parse_y_factors("1,x").is_err());
    }

    #[test]
    fn inline_model_parsing() {
        let c = RunConfig::resolve(
            Command::CheckConditions,
            &kv(&[("phi", "power:2"), ("innovation", "lr-gaussian:1:pre")]),
        )
        .unwrap();
        assert_eq!(c.kernel.phi, PhiFunction::Power { alpha: 2.0 });
        assert_eq!(c.kernel.state_space_floor, INLINE_POWER_FLOOR);
        assert!(RunConfig::resolve(
            Command::CheckConditions,
            &kv(&[("phi", "power"), ("innovation", "lr-gaussian:1:pre")]),
        )
        .is_err());
        assert!(RunConfig::resolve(Command::CheckConditions, &kv(&[("phi", "max-one")])).is_err());
    }

    #[test]
    fn preset_and_inline_are_exclusive() {
        assert!(RunConfig::resolve(
            Command::Solve,
            &kv(&[("model", "ewma"), ("phi", "max-one"), ("a", "2")]),
        )
        .is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let c = RunConfig::resolve(
            Command::Simulate,
            &kv(&[
                ("phi", "affine:1"),
                ("innovation", "lognormal:-0.5:1"),
                ("a", "7.389"),
                ("grid", "uniform:50:0"),
                ("couple", "2"),
                ("out", "/tmp/x/run"),
            ]),
        )
        .unwrap();
        let text = c.to_manifest().render();
        let back =
            RunConfig::resolve(Command::Simulate, &KeyValues::parse(&text).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_manifest().render(), text);
    }

    #[test]
    fn manifest_for_other_command_is_rejected() {
        let e = RunConfig::resolve(
            Command::Solve,
            &kv(&[("command", "sweep"), ("model", "cusum"), ("a", "7")]),
        )
        .unwrap_err();
        assert!(e.0.contains("`command`"));
    }

    #[test]
    fn reps_must_be_at_least_two() {
        let e = RunConfig::resolve(
            Command::Simulate,
            &kv(&[("model", "ewma"), ("a", "3"), ("reps", "1")]),
        )
        .unwrap_err();
        assert!(e.0.contains("`reps`"));
    }

    #[test]
    fn sweep_defaults_threshold_from_preset() {
        let c = RunConfig::resolve(Command::Sweep, &kv(&[("model", "shiryaev-roberts")])).unwrap();
        assert_eq!(c.threshold, Some(std::f64::consts::E * std::f64::consts::E));
        assert_eq!(c.y_factors, vec![1.0, 2.0, 4.0, 8.0]);
    }
}
