//! Stage 3 of the extraction pipeline: per-dimension z-normalization within
//! each method, mean fusion across methods, and cross-method profile
//! agreement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psychometrics;
use crate::scales::RawProfile;
use crate::Method;

/// Mean/sd/n for one (method, dimension) column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEntry {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    /// True when the column was constant (sd = 0); z-scores are pinned to 0.
    pub degenerate: bool,
}

/// Per-(method, dimension) normalization statistics fitted on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub entries: BTreeMap<Method, BTreeMap<String, NormEntry>>,
}

impl Normalizer {
    /// Fit sample mean and sample (n-1) standard deviation per dimension,
    /// separately for each method present. Requires at least two profiles
    /// per method.
    pub fn fit(profiles: &[RawProfile]) -> Result<Normalizer> {
        let mut by_method: BTreeMap<Method, Vec<&RawProfile>> = BTreeMap::new();
        for profile in profiles {
            by_method.entry(profile.method).or_default().push(profile);
        }
        if by_method.is_empty() {
            return Err(Error::Estimation("no profiles to fit a normalizer on".into()));
        }

        let mut entries = BTreeMap::new();
        for (method, group) in by_method {
            if group.len() < 2 {
                return Err(Error::Estimation(format!(
                    "need >= 2 profiles to normalize method {method}, got {}",
                    group.len()
                )));
            }
            let mut per_dim: BTreeMap<String, NormEntry> = BTreeMap::new();
            for dimension in group[0].scores.keys() {
                let values: Vec<f64> = group
                    .iter()
                    .map(|p| {
                        p.scores.get(dimension).copied().ok_or_else(|| {
                            Error::Pairing(format!(
                                "profile missing dimension '{dimension}' for method {method}"
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                let n = values.len();
                let mean = values.iter().sum::<f64>() / n as f64;
                let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
                let sd = (ss / (n - 1) as f64).sqrt();
                per_dim.insert(
                    dimension.clone(),
                    NormEntry {
                        mean,
                        sd,
                        n,
                        degenerate: sd == 0.0,
                    },
                );
            }
            entries.insert(method, per_dim);
        }
        Ok(Normalizer { entries })
    }

    pub fn entry(&self, method: Method, dimension: &str) -> Option<&NormEntry> {
        self.entries.get(&method).and_then(|m| m.get(dimension))
    }
}

/// One post's z-scored profile under a single method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedProfile {
    pub post_id: String,
    pub user_id: String,
    pub context_id: String,
    pub method: Method,
    pub z: BTreeMap<String, f64>,
}

/// One post's fused profile with its two method components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedProfile {
    pub post_id: String,
    pub user_id: String,
    pub context_id: String,
    pub z: BTreeMap<String, f64>,
    pub lex_z: BTreeMap<String, f64>,
    pub sem_z: BTreeMap<String, f64>,
}

/// z = (x - mean) / sd per dimension; degenerate dimensions (sd = 0) map to
/// z = 0 and stay flagged on the normalizer.
pub fn normalize(
    raw: &RawProfile,
    normalizer: &Normalizer,
    post_id: &str,
    user_id: &str,
    context_id: &str,
) -> Result<NormalizedProfile> {
    let per_dim = normalizer
        .entries
        .get(&raw.method)
        .ok_or_else(|| Error::Precondition(format!("normalizer not fitted for method {}", raw.method)))?;

    let mut z = BTreeMap::new();
    for (dimension, &value) in &raw.scores {
        let entry = per_dim.get(dimension).ok_or_else(|| {
            Error::Pairing(format!("normalizer has no entry for dimension '{dimension}'"))
        })?;
        let zi = if entry.degenerate {
            0.0
        } else {
            (value - entry.mean) / entry.sd
        };
        z.insert(dimension.clone(), zi);
    }
    Ok(NormalizedProfile {
        post_id: post_id.to_string(),
        user_id: user_id.to_string(),
        context_id: context_id.to_string(),
        method: raw.method,
        z,
    })
}

/// Element-wise mean of the two normalized method profiles for one post.
pub fn fuse(lex: &NormalizedProfile, sem: &NormalizedProfile) -> Result<FusedProfile> {
    if lex.post_id != sem.post_id {
        return Err(Error::Pairing(format!(
            "cannot fuse profiles of different posts ('{}' vs '{}')",
            lex.post_id, sem.post_id
        )));
    }
    if lex.z.len() != sem.z.len() || !lex.z.keys().eq(sem.z.keys()) {
        return Err(Error::Pairing("method profiles cover different dimensions".into()));
    }
    let z = lex
        .z
        .iter()
        .map(|(dim, &lz)| (dim.clone(), (lz + sem.z[dim]) / 2.0))
        .collect();
    Ok(FusedProfile {
        post_id: lex.post_id.clone(),
        user_id: lex.user_id.clone(),
        context_id: lex.context_id.clone(),
        z,
        lex_z: lex.z.clone(),
        sem_z: sem.z.clone(),
    })
}

/// Pearson correlation between the two method profiles of one post across
/// dimensions. Returns `None` (flagged missing) when either profile is
/// constant, where the correlation is undefined.
pub fn profile_agreement(lex: &NormalizedProfile, sem: &NormalizedProfile) -> Result<Option<f64>> {
    if !lex.z.keys().eq(sem.z.keys()) {
        return Err(Error::Pairing("method profiles cover different dimensions".into()));
    }
    let x: Vec<f64> = lex.z.values().copied().collect();
    let y: Vec<f64> = sem.z.values().copied().collect();
    psychometrics::pearson(&x, &y)
}

/// Population statistics in raw scale units, used to convert z-space
/// centroids back to framework-native scores for profile cards. Pooled over
/// both methods, whose raw scores share the framework units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    pub entries: BTreeMap<String, (f64, f64)>,
}

impl DimensionStats {
    pub fn from_raw_profiles(profiles: &[RawProfile]) -> Result<DimensionStats> {
        if profiles.len() < 2 {
            return Err(Error::Estimation("need >= 2 raw profiles for population statistics".into()));
        }
        let mut entries = BTreeMap::new();
        for dimension in profiles[0].scores.keys() {
            let values: Vec<f64> = profiles
                .iter()
                .map(|p| {
                    p.scores
                        .get(dimension)
                        .copied()
                        .ok_or_else(|| Error::Pairing(format!("profile missing dimension '{dimension}'")))
                })
                .collect::<Result<_>>()?;
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            let sd = (ss / (n - 1.0)).sqrt();
            entries.insert(dimension.clone(), (mean, sd));
        }
        Ok(DimensionStats { entries })
    }

    /// Borrow a single method's statistics from a fitted normalizer.
    pub fn from_normalizer(normalizer: &Normalizer, method: Method) -> Result<DimensionStats> {
        let per_dim = normalizer
            .entries
            .get(&method)
            .ok_or_else(|| Error::Precondition(format!("normalizer not fitted for method {method}")))?;
        Ok(DimensionStats {
            entries: per_dim
                .iter()
                .map(|(dim, e)| (dim.clone(), (e.mean, e.sd)))
                .collect(),
        })
    }

    pub fn get(&self, dimension: &str) -> Option<(f64, f64)> {
        self.entries.get(dimension).copied()
    }
}
