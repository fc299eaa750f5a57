use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use super::{BlackBoxFilter, Builtin, ExternalFilter, DEFAULT_TIMEOUT_SECS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FilterKind {
    Gaussian,
    Motion,
    Disk,
    Wiener,
    GuidedSelf,
    Bilateral,
    Extern,
}

impl FilterKind {
    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Gaussian => "gaussian",
            FilterKind::Motion => "motion",
            FilterKind::Disk => "disk",
            FilterKind::Wiener => "wiener",
            FilterKind::GuidedSelf => "guided_self",
            FilterKind::Bilateral => "bilateral",
            FilterKind::Extern => "extern",
        }
    }

    /// Parameters and their defaults. `None` marks a required parameter.
    fn schema(self) -> &'static [(&'static str, Option<f64>)] {
        match self {
            FilterKind::Gaussian => &[("sigma", Some(5.0))],
            FilterKind::Motion => &[("length", Some(20.0)), ("theta", Some(45.0))],
            FilterKind::Disk => &[("radius", Some(3.0))],
            FilterKind::Wiener => &[("window", Some(5.0)), ("noise", Some(0.1))],
            FilterKind::GuidedSelf => &[("window", Some(5.0)), ("eps", Some(0.1))],
            FilterKind::Bilateral => &[("sigma_s", Some(3.0)), ("sigma_r", Some(0.05))],
            FilterKind::Extern => &[("cmd", None), ("timeout", Some(DEFAULT_TIMEOUT_SECS as f64))],
        }
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "gs" => FilterKind::Gaussian,
            "motion" => FilterKind::Motion,
            "disk" => FilterKind::Disk,
            "wiener" | "wf" => FilterKind::Wiener,
            "guided_self" | "guided" | "gf" => FilterKind::GuidedSelf,
            "bilateral" | "bf" => FilterKind::Bilateral,
            "extern" | "external" => FilterKind::Extern,
            other => {
                return Err(Error::param(format!(
                    "unknown filter kind `{other}` (expected gaussian, motion, disk, wiener, guided_self, bilateral or extern)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Real(f64),
    Text(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Text(s) => write!(f, "\"{s}\""),
        }
    }
}

/// A filter kind with a complete parameter set.
///
/// Parsed from `kind:key=value,...`. Omitted parameters take their default
/// values, so a constructed spec always carries every parameter of its kind;
/// unknown keys are rejected. String values may be double-quoted to protect
/// commas, e.g. `extern:cmd="convert - -blur 0x2 -",timeout=30`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub params: BTreeMap<String, ParamValue>,
}

impl FilterSpec {
    pub fn new(kind: FilterKind, given: impl IntoIterator<Item = (String, ParamValue)>) -> Result<Self> {
        let schema = kind.schema();
        let mut params = BTreeMap::new();
        for (key, value) in given {
            let key = if kind == FilterKind::Bilateral && key == "eps" {
                "sigma_r".to_string()
            } else {
                key
            };
            let Some((_, default)) = schema.iter().find(|(k, _)| *k == key) else {
                let known: Vec<_> = schema.iter().map(|(k, _)| *k).collect();
                return Err(Error::param(format!(
                    "unknown parameter `{key}` for {} (known: {})",
                    kind.name(),
                    known.join(", ")
                )));
            };
            // Everything except the command is numeric.
            let value = match (value, default) {
                (ParamValue::Text(s), Some(_)) => ParamValue::Real(
                    s.parse()
                        .map_err(|_| Error::param(format!("parameter `{key}` expects a number, got `{s}`")))?,
                ),
                (v, _) => v,
            };
            if params.insert(key.clone(), value).is_some() {
                return Err(Error::param(format!("parameter `{key}` given twice")));
            }
        }
        for (key, default) in schema {
            if !params.contains_key(*key) {
                match default {
                    Some(v) => {
                        params.insert(key.to_string(), ParamValue::Real(*v));
                    }
                    None => return Err(Error::param(format!("{} requires parameter `{key}`", kind.name()))),
                }
            }
        }
        Ok(Self { kind, params })
    }

    pub fn real(&self, key: &str) -> Result<f64> {
        match self.params.get(key) {
            Some(ParamValue::Real(v)) => Ok(*v),
            Some(ParamValue::Text(s)) => Err(Error::param(format!("`{key}` is text: {s}"))),
            None => Err(Error::param(format!("missing `{key}`"))),
        }
    }

    fn text(&self, key: &str) -> Result<String> {
        match self.params.get(key) {
            Some(ParamValue::Text(s)) => Ok(s.clone()),
            Some(ParamValue::Real(v)) => Ok(v.to_string()),
            None => Err(Error::param(format!("missing `{key}`"))),
        }
    }

    fn window(&self) -> Result<usize> {
        let w = self.real("window")?;
        if w.fract() != 0.0 || w < 0.0 {
            return Err(Error::param(format!("window must be an integer, got {w}")));
        }
        Ok(w as usize)
    }

    /// Instantiates the filter, validating parameter ranges.
    pub fn build(&self) -> Result<Arc<dyn BlackBoxFilter>> {
        let builtin = match self.kind {
            FilterKind::Gaussian => Builtin::Gaussian {
                sigma: self.real("sigma")?,
            },
            FilterKind::Motion => Builtin::Motion {
                length: self.real("length")?,
                theta: self.real("theta")?,
            },
            FilterKind::Disk => Builtin::Disk {
                radius: self.real("radius")?,
            },
            FilterKind::Wiener => Builtin::Wiener {
                window: self.window()?,
                noise: self.real("noise")?,
            },
            FilterKind::GuidedSelf => Builtin::GuidedSelf {
                window: self.window()?,
                eps: self.real("eps")?,
            },
            FilterKind::Bilateral => Builtin::Bilateral {
                sigma_s: self.real("sigma_s")?,
                sigma_r: self.real("sigma_r")?,
            },
            FilterKind::Extern => {
                let timeout = self.real("timeout")?;
                if !(timeout > 0.0) {
                    return Err(Error::param("timeout must be positive"));
                }
                let f = ExternalFilter::new(self.text("cmd")?).with_timeout(Duration::from_secs_f64(timeout));
                return Ok(Arc::new(f));
            }
        };
        // Probe parameter validity on a tiny image so errors surface at build time.
        builtin.apply(&crate::image::Image::constant(3, 3, 0.5))?;
        Ok(Arc::new(builtin))
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind.name())?;
        for (i, (k, v)) in self.params.iter().enumerate() {
            write!(f, "{}{k}={v}", if i == 0 { ':' } else { ',' })?;
        }
        Ok(())
    }
}

fn split_unquoted(s: &str, sep: char) -> Result<Vec<String>> {
    let mut parts = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for c in s.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                cur.push(c);
            }
            c if c == sep && !quoted => parts.push(std::mem::take(&mut cur)),
            c => cur.push(c),
        }
    }
    if quoted {
        return Err(Error::param(format!("unterminated quote in `{s}`")));
    }
    parts.push(cur);
    Ok(parts)
}

/// Parses `key=value,key=value` with optional double quotes around values.
pub(crate) fn parse_key_values(s: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    if s.trim().is_empty() {
        return Ok(out);
    }
    for part in split_unquoted(s, ',')? {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::param(format!("expected key=value, got `{part}`")))?;
        let v = v.trim();
        let v = v.strip_prefix('"').and_then(|v| v.strip_suffix('"')).unwrap_or(v);
        out.push((k.trim().to_string(), v.to_string()));
    }
    Ok(out)
}

impl FromStr for FilterSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let kind: FilterKind = kind.parse()?;
        let given = parse_key_values(rest)?
            .into_iter()
            .map(|(k, v)| (k, ParamValue::Text(v)));
        FilterSpec::new(kind, given)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_defaults() {
        let spec: FilterSpec = "guided_self:window=5,eps=0.1".parse().unwrap();
        assert_eq!(spec.kind, FilterKind::GuidedSelf);
        assert_eq!(spec.real("eps").unwrap(), 0.1);
        let motion: FilterSpec = "motion".parse().unwrap();
        assert_eq!(motion.real("length").unwrap(), 20.0);
        assert_eq!(motion.real("theta").unwrap(), 45.0);
        let bf: FilterSpec = "bilateral:eps=0.05,sigma_s=3".parse().unwrap();
        assert_eq!(bf.real("sigma_r").unwrap(), 0.05);
    }

    #[test]
    fn rejects_unknown_keys_and_kinds() {
        assert!("gaussian:radius=3".parse::<FilterSpec>().is_err());
        assert!("sharpen".parse::<FilterSpec>().is_err());
        assert!("gaussian:sigma=abc".parse::<FilterSpec>().is_err());
        assert!("gaussian:sigma=1,sigma=2".parse::<FilterSpec>().is_err());
        assert!("extern".parse::<FilterSpec>().is_err());
    }

    #[test]
    fn invalid_ranges_fail_at_build() {
        let spec: FilterSpec = "wiener:window=4".parse().unwrap();
        assert!(spec.build().is_err());
        let spec: FilterSpec = "gaussian:sigma=-1".parse().unwrap();
        assert!(spec.build().is_err());
    }

    #[test]
    fn quoted_command_keeps_commas() {
        let spec: FilterSpec = r#"extern:cmd="tool -a 1,2",timeout=5"#.parse().unwrap();
        assert_eq!(spec.params["cmd"], ParamValue::Text("tool -a 1,2".into()));
        assert_eq!(spec.real("timeout").unwrap(), 5.0);
    }

    #[test]
    fn display_round_trips() {
        let spec: FilterSpec = "bilateral:sigma_s=2".parse().unwrap();
        let again: FilterSpec = spec.to_string().parse().unwrap();
        assert_eq!(spec, again);
    }
}
