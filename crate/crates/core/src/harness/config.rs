//! Sweep configuration files.
//!
//! ```text
//! # Comments occupy whole lines and start with '#' or ';'.
//! [run]
//! # Whitespace-separated paths, relative to this file.
//! images = a.png b.pgm
//! # Every .png/.pgm inside, sorted by name.
//! image_dir = photos
//! # Defaults to 100, or 200 for motion filters.
//! budget = 100
//! out = results
//! jobs = 2
//! # Write elapsed_ms into the trace CSVs.
//! timing = false
//! # Stop once ||e|| / ||b|| falls below this.
//! early_stop = 1e-6
//! r_alpha = 0.99
//!
//! [filters]
//! # label = filter spec
//! gs = gaussian:sigma=5
//! motion = motion:length=20,theta=45
//!
//! [grid]
//! methods = T TDA P p
//! accels = none chb anderson:m=5 irons epsilon mgd nag adam sgdr
//!
//! [budgets]
//! # Per-filter overrides keyed by label.
//! motion = 200
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::accel::AccelSpec;
use crate::error::{Error, Result};
use crate::filters::{FilterKind, FilterSpec};
use crate::methods::{MethodKind, MethodTag};

pub const DEFAULT_BUDGET: usize = 100;
pub const MOTION_BUDGET: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub images: Vec<PathBuf>,
    /// `(label, spec)` in file order.
    pub filters: Vec<(String, FilterSpec)>,
    pub methods: Vec<MethodTag>,
    pub accels: Vec<AccelSpec>,
    /// Budget for every filter without a per-filter override.
    pub budget: Option<usize>,
    pub budgets: BTreeMap<String, usize>,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub timing: bool,
    pub early_stop: Option<f64>,
    pub r_alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            images: Vec::new(),
            filters: Vec::new(),
            methods: MethodTag::ALL.to_vec(),
            accels: vec![AccelSpec::new(super::accel::AccelKind::None)],
            budget: None,
            budgets: BTreeMap::new(),
            out_dir: PathBuf::from("results"),
            jobs: 1,
            timing: false,
            early_stop: None,
            r_alpha: MethodKind::DEFAULT_R_ALPHA,
        }
    }
}

impl RunConfig {
    pub fn budget_for(&self, label: &str, spec: &FilterSpec) -> usize {
        if let Some(b) = self.budgets.get(label) {
            return *b;
        }
        match (self.budget, spec.kind) {
            (Some(b), _) => b,
            (None, FilterKind::Motion) => MOTION_BUDGET,
            (None, _) => DEFAULT_BUDGET,
        }
    }

    pub fn method_kind(&self, tag: MethodTag) -> MethodKind {
        let kind = MethodKind::new(tag);
        if tag == MethodTag::R {
            kind.with_alpha(self.r_alpha)
        } else {
            kind
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::Config("no images: set `images` or `image_dir` in [run]".into()));
        }
        if self.filters.is_empty() {
            return Err(Error::Config(
                "no filters: add `label = kind:params` lines under [filters]".into(),
            ));
        }
        if self.methods.is_empty() || self.accels.is_empty() {
            return Err(Error::Config(
                "empty grid: set `methods` and `accels` under [grid]".into(),
            ));
        }
        if self.budget == Some(0) || self.budgets.values().any(|b| *b == 0) {
            return Err(Error::Config("budgets must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        for (label, _) in &self.filters {
            if !is_label(label) {
                return Err(Error::Config(format!(
                    "filter label `{label}` may only contain letters, digits, '-', '_' and '.'"
                )));
            }
        }
        for label in self.budgets.keys() {
            if !self.filters.iter().any(|(l, _)| l == label) {
                return Err(Error::Config(format!("[budgets] names unknown filter `{label}`")));
            }
        }
        for tag in &self.methods {
            self.method_kind(*tag).validate()?;
            for accel in &self.accels {
                accel.driver(*tag)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let mut seen = BTreeMap::new();
        let mut image_dir = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let at = |msg: String| Error::Config(format!("line {}: {msg}", n + 1));
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_ascii_lowercase();
                if !matches!(section.as_str(), "run" | "filters" | "grid" | "budgets") {
                    return Err(at(format!(
                        "unknown section [{section}] (expected run, filters, grid, budgets)"
                    )));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return Err(at("entry before any [section] header".into()));
            }
            if seen.insert((section.clone(), key.to_string()), ()).is_some() {
                return Err(at(format!("duplicate key `{key}` in [{section}]")));
            }
            let number = |v: &str| -> Result<f64> {
                v.parse()
                    .map_err(|_| at(format!("`{key}` expects a number, got `{v}`")))
            };
            let count = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| at(format!("`{key}` expects a positive integer, got `{v}`")))
            };
            match (section.as_str(), key) {
                ("run", "images") => cfg.images = value.split_whitespace().map(|p| base.join(p)).collect(),
                ("run", "image_dir") => image_dir = Some(base.join(value)),
                ("run", "budget") => cfg.budget = Some(count(value)?),
                ("run", "out") => cfg.out_dir = base.join(value),
                ("run", "jobs") => cfg.jobs = count(value)?,
                ("run", "timing") => {
                    cfg.timing = value
                        .parse()
                        .map_err(|_| at(format!("`timing` expects true or false, got `{value}`")))?
                }
                ("run", "early_stop") => cfg.early_stop = Some(number(value)?),
                ("run", "r_alpha") => cfg.r_alpha = number(value)?,
                ("run", _) => return Err(at(format!("unknown key `{key}` in [run]"))),
                ("filters", label) => {
                    let spec: FilterSpec = value.parse().map_err(|e| at(format!("filter `{label}`: {e}")))?;
                    cfg.filters.push((label.to_string(), spec));
                }
                ("grid", "methods") => {
                    cfg.methods = value
                        .split_whitespace()
                        .map(|m| m.parse().map_err(|e| at(format!("{e}"))))
                        .collect::<Result<_>>()?
                }
                ("grid", "accels") => {
                    cfg.accels = value
                        .split_whitespace()
                        .map(|a| a.parse().map_err(|e| at(format!("{e}"))))
                        .collect::<Result<_>>()?
                }
                ("grid", _) => return Err(at(format!("unknown key `{key}` in [grid]"))),
                ("budgets", label) => {
                    cfg.budgets.insert(label.to_string(), count(value)?);
                }
                _ => unreachable!("section names are checked above"),
            }
        }
        if let Some(dir) = image_dir {
            let mut found = Vec::new();
            for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                let path = entry.map_err(|e| Error::io(&dir, e))?.path();
                let ext = path
                    .extension()
                    .and_then(|e| e.to_str())
                    .map(|e| e.to_ascii_lowercase());
                if matches!(ext.as_deref(), Some("png" | "pgm")) {
                    found.push(path);
                }
            }
            found.sort();
            cfg.images.extend(found);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn is_label(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# sweep
[run]
images = a.png sub/b.pgm
budget = 50
out = res
jobs = 2

[filters]
gs = gaussian:sigma=2
mb = motion

[grid]
methods = T p
accels = none anderson:m=3 sgdr:T=5,min=1,max=2

[budgets]
mb = 200
";

    #[test]
    fn parses_sample() {
        let cfg = RunConfig::parse(SAMPLE, Path::new("/data")).unwrap();
        assert_eq!(
            cfg.images,
            vec![PathBuf::from("/data/a.png"), PathBuf::from("/data/sub/b.pgm")]
        );
        assert_eq!(cfg.filters.len(), 2);
        assert_eq!(cfg.methods, vec![MethodTag::T, MethodTag::SmallP]);
        assert_eq!(cfg.accels.len(), 3);
        assert_eq!(cfg.accels[2].to_string(), "sgdr:T=5,max=2,min=1");
        assert_eq!(cfg.budget_for("gs", &cfg.filters[0].1), 50);
        assert_eq!(cfg.budget_for("mb", &cfg.filters[1].1), 200);
        assert_eq!(cfg.out_dir, PathBuf::from("/data/res"));
        assert_eq!(cfg.jobs, 2);
    }

    #[test]
    fn motion_defaults_to_longer_budget() {
        let text = "[run]\nimages = a.png\n[filters]\nm = motion\ng = gaussian\n";
        let cfg = RunConfig::parse(text, Path::new("")).unwrap();
        assert_eq!(cfg.budget_for("m", &cfg.filters[0].1), MOTION_BUDGET);
        assert_eq!(cfg.budget_for("g", &cfg.filters[1].1), DEFAULT_BUDGET);
    }

    #[test]
    fn errors_name_the_line() {
        let cases = [
            ("[run]\nimages = a.png\n[filters]\ng = blur\n", "line 4"),
            ("[run]\nbogus = 1\n", "line 2"),
            ("images = a.png\n", "line 1"),
            ("[oops]\n", "line 1"),
            ("[run]\nimages = a.png\nimages = b.png\n", "line 3"),
            (
                "[run]\nimages = a.png\n[filters]\ng = gaussian\n[grid]\naccels = none warp\n",
                "line 6",
            ),
        ];
        for (text, needle) in cases {
            let err = RunConfig::parse(text, Path::new("")).unwrap_err().to_string();
            assert!(err.contains(needle), "{err}");
        }
    }

    #[test]
    fn incomplete_configs_are_rejected() {
        assert!(RunConfig::parse("[run]\nimages = a.png\n", Path::new("")).is_err());
        assert!(RunConfig::parse("[filters]\ng = gaussian\n", Path::new("")).is_err());
        let bad_budget = "[run]\nimages = a.png\n[filters]\ng = gaussian\n[budgets]\nh = 3\n";
        assert!(RunConfig::parse(bad_budget, Path::new("")).is_err());
    }
}
