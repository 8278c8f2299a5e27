//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # Figure 1, small horizons
//! problem = rap
//! d = 50
//! seed = 42
//! schedule = constant
//! iters = 100,150,200,250
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cgm_min::StepSchedule;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Rap,
    Hbg,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Rap => "rap",
            ProblemKind::Hbg => "hbg",
        }
    }
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rap" => Ok(ProblemKind::Rap),
            "hbg" => Ok(ProblemKind::Hbg),
            _ => Err(format!("expected `rap` or `hbg`, got `{s}`")),
        }
    }
}

impl FromStr for StepSchedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "constant" => Ok(StepSchedule::Constant),
            "varying" => Ok(StepSchedule::Varying),
            _ => Err(format!("expected `constant` or `varying`, got `{s}`")),
        }
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub d: usize,
    /// HBG only; one run per value.
    pub betas: Vec<f64>,
    pub seed: u64,
    pub horizons: Vec<usize>,
    /// RAP only; one run per value.
    pub schedules: Vec<StepSchedule>,
    pub run_baselines: bool,
    pub check_bounds: bool,
    pub plots: bool,
    pub out_dir: PathBuf,
    /// Where reference solutions are cached; defaults to `<out_dir>/reference`.
    pub reference_cache: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Rap,
            d: 50,
            betas: vec![0.8],
            seed: 42,
            horizons: vec![1000],
            schedules: vec![StepSchedule::Constant],
            run_baselines: false,
            check_bounds: false,
            plots: true,
            out_dir: PathBuf::from("results"),
            reference_cache: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "problem",
    "d",
    "beta",
    "seed",
    "iters",
    "schedule",
    "baselines",
    "check_bounds",
    "plots",
    "out",
    "reference_cache",
];

fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, got `{value}`")),
    }
}

fn parse_scalar<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("`{value}`: {e}"))
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        match key {
            "problem" => self.problem = value.parse()?,
            "d" => self.d = parse_scalar(value)?,
            "beta" => self.betas = parse_list(value)?,
            "seed" => self.seed = parse_scalar(value)?,
            "iters" => self.horizons = parse_list(value)?,
            "schedule" => self.schedules = parse_list(value)?,
            "baselines" => self.run_baselines = parse_bool(value)?,
            "check_bounds" => self.check_bounds = parse_bool(value)?,
            "plots" => self.plots = parse_bool(value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "reference_cache" => self.reference_cache = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::validation("iters", "at least one horizon is required"));
        }
        if let Some(&t) = self.horizons.iter().find(|&&t| t == 0) {
            return Err(Error::validation("iters", format!("horizon must be positive, got {t}")));
        }
        match self.problem {
            ProblemKind::Rap => {
                if self.d < 2 {
                    return Err(Error::validation("d", format!("rap requires d >= 2, got {}", self.d)));
                }
                if self.schedules.is_empty() {
                    return Err(Error::validation("schedule", "at least one schedule is required"));
                }
                if self.run_baselines {
                    return Err(Error::validation(
                        "baselines",
                        "projection baselines are only available for hbg",
                    ));
                }
            }
            ProblemKind::Hbg => {
                if self.d < 1 {
                    return Err(Error::validation("d", "hbg requires d >= 1"));
                }
                if self.betas.is_empty() {
                    return Err(Error::validation("beta", "at least one beta is required"));
                }
                if let Some(b) = self.betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
                    return Err(Error::validation("beta", format!("need 0 < beta < 1, got {b}")));
                }
            }
        }
        Ok(())
    }

    pub fn reference_dir(&self) -> PathBuf {
        self.reference_cache
            .clone()
            .unwrap_or_else(|| self.out_dir.join("reference"))
    }
}

/// Settings read from a config file, with their line numbers.
pub fn parse_config_text(text: &str, source: &str) -> Result<BTreeMap<String, (String, usize)>> {
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: source.to_string(),
            line: line_no,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(parse_err(format!("unknown key `{key}`")));
        }
        if entries.contains_key(key) {
            return Err(parse_err(format!("duplicate key `{key}`")));
        }
        entries.insert(key.to_string(), (value.trim().to_string(), line_no));
    }
    Ok(entries)
}

/// Reads the optional config file, then applies `overrides` (later wins) and validates.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let source = path.display().to_string();
        let mut entries: Vec<_> = parse_config_text(&text, &source)?.into_iter().collect();
        entries.sort_by_key(|(_, (_, line))| *line);
        for (key, (value, line)) in entries {
            config.set(&key, &value).map_err(|message| Error::Parse {
                path: source.clone(),
                line,
                message,
            })?;
        }
    }
    for (key, value) in overrides {
        config.set(key, value).map_err(|message| Error::validation(key, message))?;
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn figure_one_setup() {
        let f = file("problem = rap\nd = 50\nseed = 42\nschedule = constant\niters = 100,150,200,250\n");
        let cfg = parse_config(Some(f.path()), &[]).unwrap();
        assert_eq!(cfg.problem, ProblemKind::Rap);
        assert_eq!(cfg.d, 50);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.schedules, vec![StepSchedule::Constant]);
        assert_eq!(cfg.horizons, vec![100, 150, 200, 250]);
    }

    #[test]
    fn flags_override_file() {
        let f = file("# comment\nproblem = hbg\nd = 500\nbeta = 0.5   # trailing\n");
        let cfg = parse_config(Some(f.path()), &[("d".into(), "20".into())]).unwrap();
        assert_eq!(cfg.problem, ProblemKind::Hbg);
        assert_eq!(cfg.d, 20);
        assert_eq!(cfg.betas, vec![0.5]);
    }

    #[test]
    fn beta_out_of_range() {
        let overrides = [("problem".to_string(), "hbg".to_string()), ("beta".into(), "1.5".into())];
        match parse_config(None, &overrides) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "beta"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let f = file("problem = rap\n\nstep = 3\n");
        match parse_config(Some(f.path()), &[]) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("step"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_lines() {
        for (text, line) in [("d = 5\nnonsense\n", 2), ("d = five\n", 1), ("d = 5\nd = 6\n", 2)] {
            match parse_config(Some(file(text).path()), &[]) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn validation_errors_name_fields() {
        let cases = [
            (vec![("d", "1")], "d"),
            (vec![("iters", "")], "iters"),
            (vec![("iters", "10,0")], "iters"),
            (vec![("schedule", "fast")], "schedule"),
            (vec![("baselines", "true")], "baselines"),
        ];
        for (overrides, field) in cases {
            let overrides: Vec<(String, String)> =
                overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
            match parse_config(None, &overrides) {
                Err(Error::Validation { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
    }
}
