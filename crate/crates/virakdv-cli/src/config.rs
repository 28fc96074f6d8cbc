//! Run configuration: presets, config files and flag overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;
use virakdv::gw::{gw_sl2_data, VarietyData};
use virakdv::heisenberg::parse_scalar_value;
use virakdv::{Rational, Scalar, Sl2Data};

const PRESETS: [(&str, &str); 4] = [
    ("point", include_str!("../../virakdv/presets/point.json")),
    ("k3", include_str!("../../virakdv/presets/k3.json")),
    ("canonical1d", include_str!("../../virakdv/presets/canonical1d.json")),
    ("gw2dim", include_str!("../../virakdv/presets/gw2dim.json")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// Where the sl(2) data comes from.
#[derive(Clone, Debug)]
pub enum Source {
    Canonical(Rational),
    Variety(VarietyData<Rational>),
    Data(Box<Sl2Data>),
}

impl Source {
    pub fn from_json(v: &Value) -> Result<Self> {
        match v.get("kind").and_then(Value::as_str) {
            Some("canonical") => {
                let s = v.get("s").ok_or_else(|| anyhow!("canonical source needs s"))?;
                Ok(Source::Canonical(parse_scalar_value(s)?))
            }
            Some("variety") => {
                let body = v.get("variety").ok_or_else(|| anyhow!("variety source needs a variety object"))?;
                Ok(Source::Variety(VarietyData::from_json(body)?))
            }
            Some("sl2") => {
                let body = v.get("data").ok_or_else(|| anyhow!("sl2 source needs a data object"))?;
                Ok(Source::Data(Box::new(Sl2Data::from_json(body)?)))
            }
            other => bail!("unknown source kind {other:?}"),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| anyhow!("unknown preset {name:?}; available: {}", preset_names().join(", ")))?;
        Source::from_json(&serde_json::from_str(text)?)
    }

    pub fn variety(&self) -> Result<&VarietyData<Rational>> {
        match self {
            Source::Variety(v) => Ok(v),
            _ => bail!("this task needs variety data (presets point, k3, gw2dim)"),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Source::Canonical(_) => 1,
            Source::Variety(v) => v.dim(),
            Source::Data(d) => d.pairing().dim(),
        }
    }

    pub fn sl2_data(&self, cutoff: usize) -> Result<Sl2Data> {
        Ok(match self {
            Source::Canonical(s) => Sl2Data::canonical(s.clone(), cutoff)?,
            Source::Variety(v) => gw_sl2_data(v, cutoff)?,
            Source::Data(d) => {
                if d.mode_cutoff() != cutoff {
                    bail!("sl(2) data has mode cutoff {}, requested {cutoff}", d.mode_cutoff());
                }
                (**d).clone()
            }
        })
    }

    /// Cutoff fixed by the source itself, if any.
    pub fn fixed_cutoff(&self) -> Option<usize> {
        match self {
            Source::Data(d) => Some(d.mode_cutoff()),
            _ => None,
        }
    }
}

/// Values read from a `--config` file; flags take precedence.
#[derive(Clone, Debug, Default)]
pub struct FileConfig {
    pub source: Option<Source>,
    pub kmax: Option<i32>,
    pub mode_cutoff: Option<usize>,
    pub degree: Option<usize>,
    pub s: Option<Rational>,
    pub hbar: Option<Rational>,
    pub output: Option<String>,
    pub task: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut out = FileConfig::default();
        if let Some(name) = v.get("preset").and_then(Value::as_str) {
            out.source = Some(Source::preset(name)?);
        }
        if let Some(src) = v.get("source") {
            out.source = Some(Source::from_json(src)?);
        }
        let uint = |k: &str| v.get(k).and_then(Value::as_u64).map(|x| x as usize);
        out.kmax = v.get("kmax").and_then(Value::as_i64).map(|x| x as i32);
        out.mode_cutoff = uint("mode_cutoff");
        out.degree = uint("degree");
        out.s = v.get("s").map(parse_scalar_value).transpose()?;
        out.hbar = v.get("hbar").map(parse_scalar_value).transpose()?;
        out.output = v.get("output").and_then(Value::as_str).map(str::to_owned);
        out.task = v.get("task").and_then(Value::as_str).map(str::to_owned);
        Ok(out)
    }
}

pub fn parse_rational(s: &str) -> std::result::Result<Rational, String> {
    Rational::parse_scalar(s).ok_or_else(|| format!("not a rational number: {s:?}"))
}
