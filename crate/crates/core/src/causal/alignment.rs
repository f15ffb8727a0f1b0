use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DIRECTION_NORM_TOLERANCE: f64 = 1e-9;

/// A low-level location that can be read and patched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Site {
    /// A named variable (or wire) of a discrete model.
    Variable { name: String },
    /// A single hidden unit.
    Unit { layer: usize, unit: usize },
    /// A unit-norm direction in a hidden layer; the site value is the projection coefficient.
    Direction { layer: usize, vector: Vec<f64> },
}

impl Site {
    pub fn variable(name: impl Into<String>) -> Self {
        Site::Variable { name: name.into() }
    }

    pub fn unit(layer: usize, unit: usize) -> Self {
        Site::Unit { layer, unit }
    }

    /// Builds a direction site, normalising `vector` to unit length.
    pub fn direction(layer: usize, vector: Vec<f64>) -> Result<Self> {
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidSite(
                "direction vector must be finite and nonzero".into(),
            ));
        }
        Ok(Site::Direction {
            layer,
            vector: vector.into_iter().map(|x| x / norm).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Site::Direction { vector, .. } = self {
            let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > DIRECTION_NORM_TOLERANCE {
                return Err(Error::InvalidSite(format!(
                    "direction has norm {norm}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn layer(&self) -> Option<usize> {
        match self {
            Site::Variable { .. } => None,
            Site::Unit { layer, .. } | Site::Direction { layer, .. } => Some(*layer),
        }
    }

    pub fn negated(&self) -> Self {
        match self {
            Site::Direction { layer, vector } => Site::Direction {
                layer: *layer,
                vector: vector.iter().map(|x| -x).collect(),
            },
            other => other.clone(),
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Site::Variable { name } => write!(f, "var:{name}"),
            Site::Unit { layer, unit } => write!(f, "unit:L{layer}:{unit}"),
            Site::Direction { layer, vector } => {
                // short fingerprint: index of the largest |component|
                let (k, v) = vector.iter().enumerate().fold((0, 0.0f64), |acc, (i, &x)| {
                    if x.abs() > acc.1.abs() {
                        (i, x)
                    } else {
                        acc
                    }
                });
                write!(f, "dir:L{layer}:max{k}={v:.3}")
            }
        }
    }
}

impl std::str::FromStr for Site {
    type Err = Error;

    /// Parses the `var:NAME` and `unit:L{layer}:{unit}` forms produced by `Display`.
    fn from_str(text: &str) -> Result<Self> {
        let bad = || Error::InvalidSite(format!("cannot parse site `{text}`"));
        if let Some(name) = text.strip_prefix("var:") {
            if name.is_empty() {
                return Err(bad());
            }
            return Ok(Site::variable(name));
        }
        let rest = text.strip_prefix("unit:L").ok_or_else(bad)?;
        let (layer, unit) = rest.split_once(':').ok_or_else(bad)?;
        Ok(Site::unit(
            layer.parse().map_err(|_| bad())?,
            unit.parse().map_err(|_| bad())?,
        ))
    }
}

/// Value translation from a raw low-level reading to a high-level domain value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tau {
    /// Rounds the reading to the nearest integer.
    Identity,
    /// Binary threshold. `ascending`: reading ≥ threshold → 1; otherwise reading ≤ threshold → 1.
    Threshold { threshold: f64, ascending: bool },
}

impl Tau {
    pub fn apply(&self, value: f64) -> i64 {
        match *self {
            Tau::Identity => value.round() as i64,
            Tau::Threshold {
                threshold,
                ascending,
            } => i64::from(if ascending {
                value >= threshold
            } else {
                value <= threshold
            }),
        }
    }

    /// Midpoint of the class means of `values`, labelled by `labels` (0/1).
    ///
    /// Returns `None` when one class is absent.
    pub fn fit_threshold(values: &[f64], labels: &[i64]) -> Option<Tau> {
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for (&v, &l) in values.iter().zip(labels) {
            if l != 0 {
                s1 += v;
                n1 += 1;
            } else {
                s0 += v;
                n0 += 1;
            }
        }
        if n0 == 0 || n1 == 0 {
            return None;
        }
        let (m0, m1) = (s0 / n0 as f64, s1 / n1 as f64);
        Some(Tau::Threshold {
            threshold: 0.5 * (m0 + m1),
            ascending: m1 >= m0,
        })
    }

    /// The same map expressed for a negated reading.
    pub fn negated(&self) -> Tau {
        match *self {
            Tau::Identity => Tau::Identity,
            Tau::Threshold {
                threshold,
                ascending,
            } => Tau::Threshold {
                threshold: -threshold,
                ascending: !ascending,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSite {
    pub site: Site,
    pub tau: Tau,
}

impl AlignedSite {
    pub fn new(site: Site, tau: Tau) -> Self {
        Self { site, tau }
    }

    pub fn identity(site: Site) -> Self {
        Self::new(site, Tau::Identity)
    }
}

/// How a high-level output variable is read off the low-level model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Readout {
    /// The low-level model's task prediction.
    #[default]
    TaskOutput,
    Site {
        #[serde(flatten)]
        at: AlignedSite,
    },
}

/// Pairs each aligned high-level variable with a low-level site and value map.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub variables: BTreeMap<String, AlignedSite>,
    /// Readouts for high-level outputs; outputs not listed use the task output.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub readouts: BTreeMap<String, Readout>,
}

impl Alignment {
    pub fn single(variable: impl Into<String>, at: AlignedSite) -> Self {
        let mut variables = BTreeMap::new();
        variables.insert(variable.into(), at);
        Self {
            variables,
            readouts: BTreeMap::new(),
        }
    }

    pub fn with_readout(mut self, output: impl Into<String>, readout: Readout) -> Self {
        self.readouts.insert(output.into(), readout);
        self
    }

    pub fn readout(&self, output: &str) -> Readout {
        self.readouts.get(output).cloned().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn site_text_round_trip() {
        for site in [Site::variable("o4"), Site::unit(1, 17)] {
            assert_eq!(site.to_string().parse::<Site>().unwrap(), site);
        }
        for bad in ["o4", "var:", "unit:L1", "unit:Lx:2", "dir:L0:max1=0.5"] {
            assert!(bad.parse::<Site>().is_err(), "{bad}");
        }
    }

    #[test]
    fn direction_is_normalised() {
        let s = Site::direction(0, vec![3.0, 4.0]).unwrap();
        s.validate().unwrap();
        assert!(Site::direction(0, vec![0.0, 0.0]).is_err());
        let bad = Site::Direction {
            layer: 0,
            vector: vec![1.0, 1.0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn threshold_fit_and_negation() {
        let tau = Tau::fit_threshold(&[0.0, 0.2, 1.0, 1.2], &[0, 0, 1, 1]).unwrap();
        let Tau::Threshold {
            threshold,
            ascending,
        } = tau
        else {
            panic!("expected a threshold map");
        };
        assert!((threshold - 0.6).abs() < 1e-12 && ascending);
        for v in [-1.0, 0.1, 0.6, 0.9, 3.0] {
            assert_eq!(tau.apply(v), tau.negated().apply(-v));
        }
        assert!(Tau::fit_threshold(&[1.0, 2.0], &[1, 1]).is_none());
    }

    #[test]
    fn readout_json_shape() {
        let r = Readout::Site {
            at: AlignedSite::identity(Site::variable("o4")),
        };
        let text = serde_json::to_string(&r).unwrap();
        let back: Readout = serde_json::from_str(&text).unwrap();
        assert_eq!(r, back);
        let default: Readout = serde_json::from_str(r#"{"kind":"task_output"}"#).unwrap();
        assert_eq!(default, Readout::TaskOutput);
    }
}
