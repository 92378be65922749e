//! The statistics engine: one-way ICC variance decomposition, MTMM
//! cross-method matrices, random-intercept regression, ANOVA, effect sizes,
//! and the distribution functions backing their p-values.

pub mod dist;
pub mod mixed;

pub use dist::{dist_cdf, DistKind};
pub use mixed::{fit_random_intercept, FixedEffect, MixedModelFit};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::NormalizedProfile;

/// ICC threshold below which a dimension counts as state-dominant.
pub const STATE_DOMINANT_THRESHOLD: f64 = 0.30;

/// One-way random-effects ICC estimate for a single dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IccEstimate {
    pub icc: f64,
    pub var_between: f64,
    pub var_within: f64,
    /// True when the raw ANOVA estimate was negative and clamped to 0.
    pub negative_clamped: bool,
    /// True when total variance was zero (ICC pinned to 0).
    pub degenerate: bool,
}

/// One-way random-effects ICC via the ANOVA estimator. For unbalanced
/// groups the effective group size is k0 = (N - sum(n_i^2)/N) / (G - 1);
/// ICC = (MSB - MSW) / (MSB + (k0 - 1) MSW), clamped to [0, 1].
pub fn icc_oneway(groups: &[Vec<f64>]) -> Result<IccEstimate> {
    let g = groups.len();
    if g < 2 {
        return Err(Error::Estimation(format!("ICC needs >= 2 groups, got {g}")));
    }
    if groups.iter().any(|grp| grp.is_empty()) {
        return Err(Error::Estimation("ICC groups must be non-empty".into()));
    }
    let n_total: usize = groups.iter().map(Vec::len).sum();
    if n_total <= g {
        return Err(Error::Estimation(
            "ICC needs observations beyond one per group (within df = 0)".into(),
        ));
    }

    let n = n_total as f64;
    let grand: f64 = groups.iter().flatten().sum::<f64>() / n;

    let mut ssb = 0.0;
    let mut ssw = 0.0;
    let mut sum_ni2 = 0.0;
    for grp in groups {
        let ni = grp.len() as f64;
        let mean = grp.iter().sum::<f64>() / ni;
        ssb += ni * (mean - grand) * (mean - grand);
        ssw += grp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        sum_ni2 += ni * ni;
    }

    let msb = ssb / (g as f64 - 1.0);
    let msw = ssw / (n - g as f64);
    let k0 = (n - sum_ni2 / n) / (g as f64 - 1.0);

    let denom = msb + (k0 - 1.0) * msw;
    let (icc, negative_clamped, degenerate) = if denom == 0.0 {
        // All values identical: no variance to apportion.
        (0.0, false, true)
    } else {
        let raw = (msb - msw) / denom;
        if raw < 0.0 {
            (0.0, true, false)
        } else {
            (raw.min(1.0), false, false)
        }
    };

    Ok(IccEstimate {
        icc,
        var_between: ((msb - msw) / k0).max(0.0),
        var_within: msw,
        negative_clamped,
        degenerate,
    })
}

/// Per-dimension decomposition row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionDecomposition {
    pub dimension: String,
    pub icc: f64,
    pub ospe: f64,
    pub var_between: f64,
    pub var_within: f64,
    pub negative_clamped: bool,
}

/// Decomposition summary across dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionSummary {
    pub mean_icc: f64,
    pub icc_min: f64,
    pub icc_max: f64,
    /// Number of dimensions with ICC below `STATE_DOMINANT_THRESHOLD`.
    pub below_threshold: usize,
    pub n_dimensions: usize,
    pub mean_ospe: f64,
}

/// Variance decomposition table for one method view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub rows: Vec<DimensionDecomposition>,
    pub summary: DecompositionSummary,
}

/// Run `icc_oneway` per dimension, grouping posts by user. `rows` are
/// (user_id, per-dimension values); every row must cover the same
/// dimensions.
pub fn decompose_all(rows: &[(String, BTreeMap<String, f64>)]) -> Result<VarianceDecomposition> {
    if rows.is_empty() {
        return Err(Error::Estimation("no profiles to decompose".into()));
    }
    let dimensions: Vec<String> = rows[0].1.keys().cloned().collect();

    let mut out_rows = Vec::with_capacity(dimensions.len());
    for dimension in &dimensions {
        let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (user, values) in rows {
            let value = values.get(dimension).copied().ok_or_else(|| {
                Error::Pairing(format!("profile missing dimension '{dimension}'"))
            })?;
            groups.entry(user.as_str()).or_default().push(value);
        }
        let estimate = icc_oneway(&groups.into_values().collect::<Vec<_>>())?;
        out_rows.push(DimensionDecomposition {
            dimension: dimension.clone(),
            icc: estimate.icc,
            ospe: 1.0 - estimate.icc,
            var_between: estimate.var_between,
            var_within: estimate.var_within,
            negative_clamped: estimate.negative_clamped,
        });
    }

    let iccs: Vec<f64> = out_rows.iter().map(|r| r.icc).collect();
    let mean_icc = iccs.iter().sum::<f64>() / iccs.len() as f64;
    let summary = DecompositionSummary {
        mean_icc,
        icc_min: iccs.iter().copied().fold(f64::INFINITY, f64::min),
        icc_max: iccs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        below_threshold: iccs.iter().filter(|&&v| v < STATE_DOMINANT_THRESHOLD).count(),
        n_dimensions: out_rows.len(),
        mean_ospe: 1.0 - mean_icc,
    };
    Ok(VarianceDecomposition { rows: out_rows, summary })
}

/// Cross-method correlation matrix: entry (i, j) correlates lex dimension i
/// with sem dimension j across row-aligned posts. `None` entries mark
/// undefined correlations (constant columns).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MtmmMatrix {
    pub dimensions: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub diagonal_mean: Option<f64>,
    pub diagonal_min: Option<f64>,
    pub diagonal_max: Option<f64>,
}

pub fn mtmm_matrix(lex: &[NormalizedProfile], sem: &[NormalizedProfile]) -> Result<MtmmMatrix> {
    if lex.len() != sem.len() {
        return Err(Error::Pairing(format!(
            "lex and sem matrices have different row counts ({} vs {})",
            lex.len(),
            sem.len()
        )));
    }
    if lex.is_empty() {
        return Err(Error::Estimation("MTMM needs at least one post".into()));
    }
    for (l, s) in lex.iter().zip(sem) {
        if l.post_id != s.post_id {
            return Err(Error::Pairing(format!(
                "MTMM rows misaligned: '{}' vs '{}'",
                l.post_id, s.post_id
            )));
        }
    }

    let dimensions: Vec<String> = lex[0].z.keys().cloned().collect();
    let column = |profiles: &[NormalizedProfile], dim: &str| -> Vec<f64> {
        profiles.iter().map(|p| p.z[dim]).collect()
    };

    let mut values = Vec::with_capacity(dimensions.len());
    for di in &dimensions {
        let lex_col = column(lex, di);
        let mut row = Vec::with_capacity(dimensions.len());
        for dj in &dimensions {
            let sem_col = column(sem, dj);
            row.push(pearson(&lex_col, &sem_col)?);
        }
        values.push(row);
    }

    let diagonal: Vec<f64> = (0..dimensions.len()).filter_map(|i| values[i][i]).collect();
    let (diagonal_mean, diagonal_min, diagonal_max) = if diagonal.is_empty() {
        (None, None, None)
    } else {
        (
            Some(diagonal.iter().sum::<f64>() / diagonal.len() as f64),
            Some(diagonal.iter().copied().fold(f64::INFINITY, f64::min)),
            Some(diagonal.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        )
    };

    Ok(MtmmMatrix {
        dimensions,
        values,
        diagonal_mean,
        diagonal_min,
        diagonal_max,
    })
}

/// One-way ANOVA result. `f` is `None` when MSW = 0 with SSB > 0, in which
/// case the statistic is unbounded (`f_unbounded`) and p = 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: Option<f64>,
    pub f_unbounded: bool,
    pub df1: usize,
    pub df2: usize,
    pub p: f64,
    pub eta_squared: f64,
}

pub fn oneway_anova(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    let g = groups.len();
    if g < 2 {
        return Err(Error::Estimation(format!("ANOVA needs >= 2 groups, got {g}")));
    }
    if groups.iter().any(|grp| grp.is_empty()) {
        return Err(Error::Estimation("ANOVA groups must be non-empty".into()));
    }
    let n_total: usize = groups.iter().map(Vec::len).sum();
    if n_total <= g {
        return Err(Error::Estimation("ANOVA needs N > number of groups".into()));
    }

    let n = n_total as f64;
    let grand: f64 = groups.iter().flatten().sum::<f64>() / n;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for grp in groups {
        let ni = grp.len() as f64;
        let mean = grp.iter().sum::<f64>() / ni;
        ssb += ni * (mean - grand) * (mean - grand);
        ssw += grp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    }
    let sst = ssb + ssw;
    let df1 = g - 1;
    let df2 = n_total - g;
    let msb = ssb / df1 as f64;
    let msw = ssw / df2 as f64;

    let eta_squared = if sst == 0.0 { 0.0 } else { ssb / sst };
    if msw == 0.0 {
        if ssb > 0.0 {
            return Ok(AnovaResult {
                f: None,
                f_unbounded: true,
                df1,
                df2,
                p: 0.0,
                eta_squared,
            });
        }
        // All values identical everywhere.
        return Ok(AnovaResult {
            f: Some(0.0),
            f_unbounded: false,
            df1,
            df2,
            p: 1.0,
            eta_squared: 0.0,
        });
    }

    let f = msb / msw;
    let p = dist::f_upper_p(f, df1 as f64, df2 as f64);
    Ok(AnovaResult {
        f: Some(f),
        f_unbounded: false,
        df1,
        df2,
        p,
        eta_squared,
    })
}

/// Standardized mean difference with the pooled-sd denominator. Returns
/// `None` when the pooled sd is zero (undefined).
pub fn cohens_d(treatment: &[f64], baseline: &[f64]) -> Result<Option<f64>> {
    if treatment.len() < 2 || baseline.len() < 2 {
        return Err(Error::Estimation("Cohen's d needs >= 2 observations per group".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ss = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();

    let (mt, mb) = (mean(treatment), mean(baseline));
    let (nt, nb) = (treatment.len() as f64, baseline.len() as f64);
    let pooled_var = (ss(treatment, mt) + ss(baseline, mb)) / (nt + nb - 2.0);
    if pooled_var == 0.0 {
        if mt == mb {
            // Identical constant groups: difference is exactly zero.
            return Ok(Some(0.0));
        }
        return Ok(None);
    }
    Ok(Some((mt - mb) / pooled_var.sqrt()))
}

/// Paired-difference variant of Cohen's d: mean(diff) / sd(diff).
pub fn cohens_d_paired(treatment: &[f64], baseline: &[f64]) -> Result<Option<f64>> {
    if treatment.len() != baseline.len() {
        return Err(Error::Pairing("paired Cohen's d needs equal-length samples".into()));
    }
    if treatment.len() < 2 {
        return Err(Error::Estimation("paired Cohen's d needs >= 2 pairs".into()));
    }
    let diffs: Vec<f64> = treatment.iter().zip(baseline).map(|(t, b)| t - b).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        if mean == 0.0 {
            return Ok(Some(0.0));
        }
        return Ok(None);
    }
    Ok(Some(mean / var.sqrt()))
}

/// A one-sample t test result.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
}

/// Two-sided one-sample t test against `null_mean`. Returns `None` when the
/// sample sd is zero (statistic undefined).
pub fn one_sample_t(values: &[f64], null_mean: f64) -> Result<Option<TTest>> {
    if values.len() < 2 {
        return Err(Error::Estimation("t test needs >= 2 values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(None);
    }
    let se = (var / n).sqrt();
    let t = (mean - null_mean) / se;
    let df = values.len() - 1;
    Ok(Some(TTest {
        t,
        df,
        p: dist::t_two_sided_p(t, df as f64),
    }))
}

/// Sample Pearson correlation. Returns `None` (flagged missing) for constant
/// input, where the correlation is undefined.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Pairing(format!(
            "correlation inputs have different lengths ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Estimation("correlation needs >= 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
        syy += (yi - my) * (yi - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

/// Effect-size bundle reported by the audit analyses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectSize {
    pub cohens_d: Option<f64>,
    pub eta_squared: Option<f64>,
    pub n_treatment: usize,
    pub n_baseline: usize,
}
