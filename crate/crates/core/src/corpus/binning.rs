//! Demographic bins: which raw profile categories count as one group.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::AnnotatorProfile;

/// Bin assigned to missing values and, outside strict mode, to raw
/// categories no bin claims.
pub const UNKNOWN_BIN: &str = "unknown";

const DEFAULT_BINNING: &str = include_str!("../../resources/default_binning.toml");

#[derive(Debug, Error)]
pub enum BinningError {
    #[error("cannot read binning file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid binning file: {0}")]
    Parse(String),
    #[error("attribute {attribute:?}: raw category {category:?} appears in bins {first:?} and {second:?}")]
    Overlap {
        attribute: String,
        category: String,
        first: String,
        second: String,
    },
    #[error("attribute {attribute:?}: bin name {UNKNOWN_BIN:?} is reserved")]
    ReservedBin { attribute: String },
    #[error("attribute {attribute:?} has no bins")]
    EmptyAttribute { attribute: String },
    #[error("annotator {annotator_id:?}: {attribute} value {category:?} is not covered by any bin")]
    Uncovered {
        annotator_id: String,
        attribute: String,
        category: String,
    },
}

/// Ordered attribute → ordered bin → raw categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemographicBinning {
    attributes: IndexMap<String, IndexMap<String, Vec<String>>>,
}

impl DemographicBinning {
    /// The built-in bins (50-59 and 60-69 merged into 50-69; canonical
    /// income labels).
    pub fn standard() -> Self {
        Self::from_toml_str(DEFAULT_BINNING).expect("built-in binning is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, BinningError> {
        let attributes: IndexMap<String, IndexMap<String, Vec<String>>> =
            toml::from_str(text).map_err(|e| BinningError::Parse(e.to_string()))?;
        let binning = DemographicBinning { attributes };
        binning.check()?;
        Ok(binning)
    }

    pub fn from_path(path: &Path) -> Result<Self, BinningError> {
        let text = std::fs::read_to_string(path).map_err(|source| BinningError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    fn check(&self) -> Result<(), BinningError> {
        for (attribute, bins) in &self.attributes {
            if bins.is_empty() {
                return Err(BinningError::EmptyAttribute {
                    attribute: attribute.clone(),
                });
            }
            let mut owner: HashMap<&str, &str> = HashMap::new();
            for (bin, categories) in bins {
                if bin == UNKNOWN_BIN {
                    return Err(BinningError::ReservedBin {
                        attribute: attribute.clone(),
                    });
                }
                for category in categories {
                    if let Some(first) = owner.insert(category, bin) {
                        if first != bin {
                            return Err(BinningError::Overlap {
                                attribute: attribute.clone(),
                                category: category.clone(),
                                first: first.to_owned(),
                                second: bin.clone(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.attributes.keys().map(String::as_str)
    }

    /// Bin names of `attribute`, in declaration order (without `unknown`).
    pub fn bins(&self, attribute: &str) -> Option<impl Iterator<Item = &str>> {
        self.attributes
            .get(attribute)
            .map(|bins| bins.keys().map(String::as_str))
    }

    pub fn has_bin(&self, attribute: &str, bin: &str) -> bool {
        bin == UNKNOWN_BIN && self.attributes.contains_key(attribute)
            || self
                .attributes
                .get(attribute)
                .is_some_and(|bins| bins.contains_key(bin))
    }

    /// The bin claiming `raw`, if any.
    pub fn bin_of(&self, attribute: &str, raw: &str) -> Option<&str> {
        self.attributes.get(attribute)?.iter().find_map(|(bin, cats)| {
            cats.iter().any(|c| c == raw).then_some(bin.as_str())
        })
    }
}

/// True for values that mean "not reported".
pub fn is_missing(raw: &str) -> bool {
    let raw = raw.trim();
    raw.is_empty() || raw.eq_ignore_ascii_case(UNKNOWN_BIN)
}

/// Annotator id → attribute → bin.
pub type BinAssignments = BTreeMap<String, BTreeMap<String, String>>;

/// Assigns every annotator exactly one bin per binning attribute.
///
/// Missing values always land in `unknown`. Raw categories that no bin
/// claims land in `unknown` unless `strict` is set, in which case the first
/// one found is an error.
pub fn apply_binning(
    profiles: &[AnnotatorProfile],
    binning: &DemographicBinning,
    strict: bool,
) -> Result<BinAssignments, BinningError> {
    let mut out = BinAssignments::new();
    for profile in profiles {
        let mut assigned = BTreeMap::new();
        for attribute in binning.attributes() {
            let raw = profile
                .attributes
                .get(attribute)
                .map(String::as_str)
                .unwrap_or(UNKNOWN_BIN);
            let bin = if is_missing(raw) {
                UNKNOWN_BIN
            } else {
                match binning.bin_of(attribute, raw) {
                    Some(bin) => bin,
                    None if strict => {
                        return Err(BinningError::Uncovered {
                            annotator_id: profile.annotator_id.clone(),
                            attribute: attribute.to_owned(),
                            category: raw.to_owned(),
                        })
                    }
                    None => UNKNOWN_BIN,
                }
            };
            assigned.insert(attribute.to_owned(), bin.to_owned());
        }
        out.insert(profile.annotator_id.clone(), assigned);
    }
    Ok(out)
}

/// Raw categories present in `profiles` that no bin claims, per attribute.
pub fn uncovered_categories(
    profiles: &[AnnotatorProfile],
    binning: &DemographicBinning,
) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for attribute in binning.attributes() {
        for profile in profiles {
            let Some(raw) = profile.attributes.get(attribute) else {
                continue;
            };
            if is_missing(raw) || binning.bin_of(attribute, raw).is_some() {
                continue;
            }
            let entry = out.entry(attribute.to_owned()).or_default();
            if !entry.contains(raw) {
                entry.push(raw.clone());
            }
        }
    }
    for cats in out.values_mut() {
        cats.sort();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(id: &str, attrs: &[(&str, &str)]) -> AnnotatorProfile {
        AnnotatorProfile {
            annotator_id: id.to_owned(),
            attributes: attrs
                .iter()
                .map(|(k, v)| ((*k).to_owned(), (*v).to_owned()))
                .collect(),
        }
    }

    #[test]
    fn merges_older_age_bins() {
        let binning = DemographicBinning::standard();
        let profiles = [
            profile("a1", &[("age", "50-59")]),
            profile("a2", &[("age", "60-69")]),
            profile("a3", &[("age", "18-29")]),
        ];
        let bins = apply_binning(&profiles, &binning, true).unwrap();
        assert_eq!(bins["a1"]["age"], "50-69");
        assert_eq!(bins["a2"]["age"], "50-69");
        assert_eq!(bins["a3"]["age"], "18-29");
    }

    #[test]
    fn uncovered_category_is_unknown_unless_strict() {
        let binning = DemographicBinning::standard();
        let profiles = [profile("a1", &[("income", "unreported")])];
        let bins = apply_binning(&profiles, &binning, false).unwrap();
        assert_eq!(bins["a1"]["income"], UNKNOWN_BIN);
        let err = apply_binning(&profiles, &binning, true).unwrap_err();
        assert!(matches!(err, BinningError::Uncovered { ref category, .. } if category == "unreported"));
        assert_eq!(
            uncovered_categories(&profiles, &binning)["income"],
            vec!["unreported".to_owned()]
        );
    }

    #[test]
    fn missing_attribute_is_unknown_even_when_strict() {
        let binning = DemographicBinning::standard();
        let profiles = [profile("a1", &[("gender", "")])];
        let bins = apply_binning(&profiles, &binning, true).unwrap();
        assert_eq!(bins["a1"]["gender"], UNKNOWN_BIN);
        // attributes absent from the profile entirely are recorded too
        assert_eq!(bins["a1"]["children"], UNKNOWN_BIN);
        assert_eq!(bins["a1"].len(), binning.attributes().count());
    }

    #[test]
    fn overlapping_bins_are_rejected() {
        let text = "[age]\n\"young\" = [\"18-29\"]\n\"all\" = [\"18-29\", \"30-39\"]\n";
        let err = DemographicBinning::from_toml_str(text).unwrap_err();
        assert!(matches!(err, BinningError::Overlap { .. }), "{err}");
    }

    #[test]
    fn unknown_is_a_reserved_bin_name() {
        let err = DemographicBinning::from_toml_str("[age]\nunknown = [\"x\"]\n").unwrap_err();
        assert!(matches!(err, BinningError::ReservedBin { .. }));
    }

    #[test]
    fn bin_order_follows_the_file() {
        let binning = DemographicBinning::standard();
        let income: Vec<&str> = binning.bins("income").unwrap().collect();
        assert_eq!(
            income,
            vec!["<30k", "30-40k", "40-50k", "50-75k", "75-100k", "100k+"]
        );
        assert!(binning.has_bin("income", UNKNOWN_BIN));
        assert!(!binning.has_bin("shoe_size", UNKNOWN_BIN));
    }
}
