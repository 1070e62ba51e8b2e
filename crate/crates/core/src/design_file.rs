//! TOML ingestion of a layout and contrast.
//!
//! ```toml
//! k = 3
//! n = [8, 8, 8]
//! x = [[...], [...], [...]]
//! contrast = [1.0, -1.0, 0.0, 14.9, -14.9, 0.0]
//! # or, symbolically (treatments are 1-based):
//! contrast = { i = 1, j = 2, x_star = "max_abs_centered" }
//! ```
//!
//! `x_star` may also be a covariate value; the contrast then uses `x* − x̄`.
//! Keys other than these are ignored so that run settings can share the file.

use std::path::Path;

use serde::Deserialize;

use crate::design::{AncovaLayout, ContrastSpec};
use crate::error::{Error, Result};

const REFERENCE_DESIGN: &str = include_str!("../data/reference_design.toml");

#[derive(Debug, Deserialize)]
struct RawDesign {
    k: Option<usize>,
    n: Option<Vec<usize>>,
    x: Vec<Vec<f64>>,
    contrast: RawContrast,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawContrast {
    Explicit(Vec<f64>),
    Symbolic { i: usize, j: usize, x_star: XStar },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum XStar {
    Value(f64),
    Named(String),
}

/// A layout together with the contrast of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignFile {
    pub layout: AncovaLayout,
    pub contrast: ContrastSpec,
}

impl DesignFile {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawDesign = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let k = raw.k.unwrap_or(raw.x.len());
        let n = raw.n.unwrap_or_else(|| raw.x.iter().map(Vec::len).collect());
        let layout = AncovaLayout::from_parts(k, n, raw.x)?;
        let contrast = match raw.contrast {
            RawContrast::Explicit(a) => ContrastSpec::new(a, k)?,
            RawContrast::Symbolic { i, j, x_star } => {
                if i == 0 || j == 0 {
                    return Err(Error::Parse("contrast treatments are numbered from 1".into()));
                }
                let centered = match x_star {
                    XStar::Value(v) => v - layout.grand_mean(),
                    XStar::Named(name) if name == "max_abs_centered" => layout.max_abs_centered(),
                    XStar::Named(name) => {
                        return Err(Error::Parse(format!(
                            "unknown x_star {name:?}; expected \"max_abs_centered\" or a number"
                        )))
                    }
                };
                ContrastSpec::treatment_difference(k, i - 1, j - 1, centered)?
            }
        };
        Ok(Self { layout, contrast })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The bundled synthetic `k = 3, n_i = 8` design with the contrast
    /// "treatment 1 minus treatment 2 at the most extreme covariate value".
    pub fn reference() -> Self {
        Self::parse(REFERENCE_DESIGN).expect("bundled reference design parses")
    }

    pub fn reference_text() -> &'static str {
        REFERENCE_DESIGN
    }
}
