//! Class-indexed height priors.
//!
//! Each object class carries a histogram over plausible metric heights,
//! `p_c(H)`. Priors are loaded once from a JSON document and are immutable
//! afterwards, so the registry can be shared freely across threads.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Tolerated deviation of the input probability sum from one before the
/// document is rejected instead of renormalized.
const SUM_TOL: f64 = 1e-6;

#[derive(Debug)]
pub enum PriorError {
    Io(std::io::Error),
    Parse(serde_json::Error),
    Malformed { class_id: Option<u32>, reason: String },
    UnknownClass(u32),
}

impl std::fmt::Display for PriorError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PriorError::Io(e) => write!(f, "prior file i/o error: {e}"),
            PriorError::Parse(e) => write!(f, "prior file parse error: {e}"),
            PriorError::Malformed { class_id: Some(id), reason } => {
                write!(f, "malformed prior for class {id}: {reason}")
            }
            PriorError::Malformed { class_id: None, reason } => {
                write!(f, "malformed prior: {reason}")
            }
            PriorError::UnknownClass(id) => write!(f, "no prior registered for class {id}"),
        }
    }
}

impl std::error::Error for PriorError {}

/// One histogram bin: a metric height and its probability mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightBin {
    pub height_m: f64,
    pub prob: f64,
}

/// Discretized height prior for one object class.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightHistogram {
    class_id: u32,
    class_name: String,
    bins: Vec<HeightBin>,
}

impl HeightHistogram {
    /// Validate and normalize a bin list. Heights must be positive and
    /// strictly increasing; probabilities non-negative with a sum within
    /// 1e-6 of one (then renormalized exactly).
    pub fn new(
        class_id: u32,
        class_name: impl Into<String>,
        mut bins: Vec<HeightBin>,
    ) -> Result<Self, PriorError> {
        let malformed = |reason: String| PriorError::Malformed {
            class_id: Some(class_id),
            reason,
        };
        if bins.is_empty() {
            return Err(malformed("no bins".into()));
        }
        for (i, bin) in bins.iter().enumerate() {
            if !(bin.height_m > 0.0) || !bin.height_m.is_finite() {
                return Err(malformed(format!(
                    "bin {i} has non-positive height {}",
                    bin.height_m
                )));
            }
            if !(bin.prob >= 0.0) || !bin.prob.is_finite() {
                return Err(malformed(format!("bin {i} has negative prob {}", bin.prob)));
            }
            if i > 0 && bins[i - 1].height_m >= bin.height_m {
                return Err(malformed(format!("heights not strictly increasing at bin {i}")));
            }
        }
        let sum: f64 = bins.iter().map(|b| b.prob).sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(malformed(format!("probabilities sum to {sum}, not 1")));
        }
        for bin in &mut bins {
            bin.prob /= sum;
        }
        Ok(Self {
            class_id,
            class_name: class_name.into(),
            bins,
        })
    }

    /// Single-bin prior assigning probability one to a known height.
    pub fn delta(class_id: u32, class_name: impl Into<String>, height_m: f64) -> Result<Self, PriorError> {
        Self::new(class_id, class_name, vec![HeightBin { height_m, prob: 1.0 }])
    }

    /// Equal-probability prior over a set of candidate heights.
    pub fn uniform(
        class_id: u32,
        class_name: impl Into<String>,
        heights_m: &[f64],
    ) -> Result<Self, PriorError> {
        let p = 1.0 / heights_m.len() as f64;
        Self::new(
            class_id,
            class_name,
            heights_m.iter().map(|&h| HeightBin { height_m: h, prob: p }).collect(),
        )
    }

    pub fn class_id(&self) -> u32 {
        self.class_id
    }

    pub fn class_name(&self) -> &str {
        &self.class_name
    }

    pub fn bins(&self) -> &[HeightBin] {
        &self.bins
    }
}

/// Immutable map from class id to its height prior.
#[derive(Debug, Clone, Default)]
pub struct PriorRegistry {
    classes: BTreeMap<u32, HeightHistogram>,
}

impl PriorRegistry {
    pub fn from_histograms(histograms: Vec<HeightHistogram>) -> Result<Self, PriorError> {
        let mut classes = BTreeMap::new();
        for h in histograms {
            let id = h.class_id();
            if classes.insert(id, h).is_some() {
                return Err(PriorError::Malformed {
                    class_id: Some(id),
                    reason: "duplicate class id".into(),
                });
            }
        }
        Ok(Self { classes })
    }

    pub fn lookup(&self, class_id: u32) -> Result<&HeightHistogram, PriorError> {
        self.classes
            .get(&class_id)
            .ok_or(PriorError::UnknownClass(class_id))
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.classes.keys().copied()
    }
}

#[derive(Serialize, Deserialize)]
struct PriorFile {
    classes: Vec<PriorClassRecord>,
}

#[derive(Serialize, Deserialize)]
struct PriorClassRecord {
    id: u32,
    name: String,
    bins: Vec<HeightBin>,
}

/// Parse and validate a prior document,
/// `{"classes":[{"id":…,"name":…,"bins":[{"height_m":…,"prob":…}]}]}`.
pub fn load_priors(json: &str) -> Result<PriorRegistry, PriorError> {
    let file: PriorFile = serde_json::from_str(json).map_err(PriorError::Parse)?;
    let histograms = file
        .classes
        .into_iter()
        .map(|c| HeightHistogram::new(c.id, c.name, c.bins))
        .collect::<Result<Vec<_>, _>>()?;
    PriorRegistry::from_histograms(histograms)
}

pub fn load_priors_from_path(path: &Path) -> Result<PriorRegistry, PriorError> {
    let text = std::fs::read_to_string(path).map_err(PriorError::Io)?;
    load_priors(&text)
}

/// Serialize histograms back to the prior document format.
pub fn priors_to_json(histograms: &[HeightHistogram]) -> String {
    let file = PriorFile {
        classes: histograms
            .iter()
            .map(|h| PriorClassRecord {
                id: h.class_id(),
                name: h.class_name().to_string(),
                bins: h.bins().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("prior serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_prior_loads() {
        let reg = load_priors(
            r#"{"classes":[{"id":0,"name":"bottle","bins":[{"height_m":0.30,"prob":1.0}]}]}"#,
        )
        .unwrap();
        let h = reg.lookup(0).unwrap();
        assert_eq!(h.bins().len(), 1);
        assert_eq!(h.bins()[0].height_m, 0.30);
        assert_eq!(h.bins()[0].prob, 1.0);
        assert_eq!(h.class_name(), "bottle");
    }

    #[test]
    fn uniform_four_bin_prior_loads() {
        let json = r#"{"classes":[{"id":1,"name":"bottle","bins":[
            {"height_m":0.20,"prob":0.25},
            {"height_m":0.25,"prob":0.25},
            {"height_m":0.30,"prob":0.25},
            {"height_m":0.33,"prob":0.25}]}]}"#;
        let reg = load_priors(json).unwrap();
        let h = reg.lookup(1).unwrap();
        assert_eq!(h.bins().len(), 4);
        for bin in h.bins() {
            assert_eq!(bin.prob, 0.25);
        }
    }

    #[test]
    fn negative_height_rejected() {
        let err = load_priors(
            r#"{"classes":[{"id":0,"name":"x","bins":[{"height_m":-0.1,"prob":1.0}]}]}"#,
        );
        assert!(matches!(err, Err(PriorError::Malformed { .. })));
    }

    #[test]
    fn bad_probability_sum_rejected() {
        let err = load_priors(
            r#"{"classes":[{"id":0,"name":"x","bins":[{"height_m":0.1,"prob":0.4}]}]}"#,
        );
        assert!(matches!(err, Err(PriorError::Malformed { .. })));
    }

    #[test]
    fn near_one_sum_renormalized() {
        let json = r#"{"classes":[{"id":0,"name":"x","bins":[
            {"height_m":0.1,"prob":0.3333331},
            {"height_m":0.2,"prob":0.3333333},
            {"height_m":0.3,"prob":0.3333333}]}]}"#;
        let reg = load_priors(json).unwrap();
        let sum: f64 = reg.lookup(0).unwrap().bins().iter().map(|b| b.prob).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_class_rejected() {
        let json = r#"{"classes":[
            {"id":0,"name":"a","bins":[{"height_m":0.1,"prob":1.0}]},
            {"id":0,"name":"b","bins":[{"height_m":0.2,"prob":1.0}]}]}"#;
        assert!(matches!(
            load_priors(json),
            Err(PriorError::Malformed { class_id: Some(0), .. })
        ));
    }

    #[test]
    fn unknown_class_reported() {
        let reg = load_priors(
            r#"{"classes":[{"id":0,"name":"x","bins":[{"height_m":0.1,"prob":1.0}]}]}"#,
        )
        .unwrap();
        assert!(matches!(reg.lookup(5), Err(PriorError::UnknownClass(5))));
    }

    #[test]
    fn two_classes_both_retrievable() {
        let json = r#"{"classes":[
            {"id":0,"name":"a","bins":[{"height_m":0.1,"prob":1.0}]},
            {"id":7,"name":"b","bins":[{"height_m":0.5,"prob":0.5},{"height_m":0.9,"prob":0.5}]}]}"#;
        let reg = load_priors(json).unwrap();
        assert_eq!(reg.len(), 2);
        assert_eq!(reg.lookup(0).unwrap().bins().len(), 1);
        assert_eq!(reg.lookup(7).unwrap().bins().len(), 2);
    }

    #[test]
    fn load_round_trip_preserves_exact_bins() {
        let original = HeightHistogram::uniform(3, "mug", &[0.08, 0.1, 0.12, 0.15]).unwrap();
        let json = priors_to_json(std::slice::from_ref(&original));
        let reg = load_priors(&json).unwrap();
        assert_eq!(reg.lookup(3).unwrap(), &original);
    }

    #[test]
    fn strictly_increasing_heights_enforced() {
        let err = HeightHistogram::new(
            0,
            "x",
            vec![
                HeightBin { height_m: 0.2, prob: 0.5 },
                HeightBin { height_m: 0.2, prob: 0.5 },
            ],
        );
        assert!(matches!(err, Err(PriorError::Malformed { .. })));
    }
}
