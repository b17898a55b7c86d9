//! Per-class loss multipliers shared by both classifiers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    #[serde(rename = "0")]
    pub impolite: f64,
    #[serde(rename = "1")]
    pub polite: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl ClassWeights {
    pub fn uniform() -> Self {
        Self {
            impolite: 1.0,
            polite: 1.0,
        }
    }

    pub fn new(impolite: f64, polite: f64) -> Result<Self> {
        let w = Self { impolite, polite };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.impolite.is_finite() && self.polite.is_finite() && self.impolite > 0.0 && self.polite > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "class weights must be positive and finite, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn get(&self, label: u8) -> f64 {
        if label == 0 {
            self.impolite
        } else {
            self.polite
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            impolite: self.impolite * factor,
            polite: self.polite * factor,
        }
    }
}

/// `[impolite, polite]` counts; errors unless both are positive.
pub(crate) fn label_counts(labels: &[u8]) -> Result<[usize; 2]> {
    let mut counts = [0usize; 2];
    for &y in labels {
        if y > 1 {
            return Err(Error::InvalidArgument(format!("label {y} is not 0 or 1")));
        }
        counts[y as usize] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::SingleClass(format!(
            "label counts are {} impolite / {} polite",
            counts[0], counts[1]
        )));
    }
    Ok(counts)
}
