//! Sizing spec file.

use serde::Deserialize;

use super::SizingError;
use crate::submodel::synth::Polarity;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "PascalCase", deny_unknown_fields)]
pub struct DesignVar {
    pub name: String,
    pub init: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "PascalCase", deny_unknown_fields)]
pub struct CornerSpec {
    pub corner: String,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum PolaritySpec {
    N,
    P,
}

impl From<PolaritySpec> for Polarity {
    fn from(p: PolaritySpec) -> Self {
        match p {
            PolaritySpec::N => Polarity::N,
            PolaritySpec::P => Polarity::P,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "PascalCase", deny_unknown_fields)]
pub struct SaturationSpec {
    pub instance: String,
    pub polarity: PolaritySpec,
}

/// Output-swing cases: with the inputs at `Common ± Delta` the node must reach
/// `Up` (plus input high) and `Down` (plus input low).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "PascalCase", deny_unknown_fields)]
pub struct SwingSpec {
    pub node: String,
    /// Global driving the non-inverting input.
    pub plus: String,
    /// Global driving the inverting input.
    pub minus: String,
    pub common: f64,
    pub down: f64,
    pub up: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "PascalCase", deny_unknown_fields)]
pub struct GainSpec {
    pub node: String,
    pub target_db: f64,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizingSpec {
    pub design_vars: Vec<DesignVar>,
    pub tie_groups: Vec<Vec<String>>,
    pub corners: Vec<CornerSpec>,
    pub saturation: Vec<SaturationSpec>,
    pub swing: Option<SwingSpec>,
    pub gain: Option<GainSpec>,
    pub delta: f64,
    /// Per-corner box on signals, `(name, lower, upper)`.
    pub x_bounds: Vec<(String, f64, f64)>,
}

fn default_delta() -> f64 {
    0.2
}

#[derive(Deserialize)]
#[serde(rename_all = "PascalCase", deny_unknown_fields)]
struct RawSpec {
    design_vars: Vec<DesignVar>,
    #[serde(default)]
    tie_groups: Vec<Vec<String>>,
    #[serde(default)]
    corners: Vec<CornerSpec>,
    #[serde(default)]
    saturation: Vec<SaturationSpec>,
    #[serde(default)]
    swing: Option<SwingSpec>,
    #[serde(default)]
    gain: Option<GainSpec>,
    #[serde(default = "default_delta")]
    delta: f64,
    #[serde(default, rename = "XBounds")]
    x_bounds: serde_json::Map<String, serde_json::Value>,
}

impl SizingSpec {
    pub fn parse(text: &str) -> Result<Self, SizingError> {
        let raw: RawSpec = serde_json::from_str(text).map_err(|e| SizingError::Spec(e.to_string()))?;
        let mut x_bounds = Vec::new();
        for (name, v) in &raw.x_bounds {
            let pair: Result<[f64; 2], _> = serde_json::from_value(v.clone());
            match pair {
                Ok([lo, hi]) if lo <= hi => x_bounds.push((name.clone(), lo, hi)),
                _ => return Err(SizingError::Spec(format!("XBounds.{name} must be [lower, upper] with lower <= upper"))),
            }
        }
        let spec = SizingSpec {
            design_vars: raw.design_vars,
            tie_groups: raw.tie_groups,
            corners: raw.corners,
            saturation: raw.saturation,
            swing: raw.swing,
            gain: raw.gain,
            delta: raw.delta,
            x_bounds,
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), SizingError> {
        let bad = |m: String| Err(SizingError::Spec(m));
        for (k, v) in self.design_vars.iter().enumerate() {
            if !(v.lower <= v.init && v.init <= v.upper) || !v.lower.is_finite() || !v.upper.is_finite() {
                return bad(format!("design variable {} needs lower <= init <= upper, all finite", v.name));
            }
            if v.lower == v.upper {
                return bad(format!("design variable {} has an empty range", v.name));
            }
            if self.design_vars[..k].iter().any(|u| u.name == v.name) {
                return bad(format!("design variable {} listed twice", v.name));
            }
        }
        let mut seen: Vec<&str> = Vec::new();
        for g in &self.tie_groups {
            if g.is_empty() {
                return bad("empty tie group".into());
            }
            for n in g {
                if !self.design_vars.iter().any(|v| &v.name == n) {
                    return bad(format!("tie group member {n} is not a design variable"));
                }
                if seen.contains(&n.as_str()) {
                    return bad(format!("{n} appears in more than one tie group"));
                }
                seen.push(n);
            }
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return bad("Delta must be a non-negative number".into());
        }
        if let Some(g) = &self.gain {
            if !(g.freq_hz.is_finite() && g.freq_hz >= 0.0 && g.target_db.is_finite()) {
                return bad("Gain needs a finite TargetDb and a non-negative FreqHz".into());
            }
        }
        Ok(())
    }
}
