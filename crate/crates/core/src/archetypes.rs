//! Psychological state archetypes: k-means over fused z-profiles, silhouette
//! model selection, within-person diversity statistics, and profile-card
//! rendering.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::DimensionStats;
use crate::scales::{FrameworkName, ScaleRegistry};
use crate::text::seeded_hash;

/// Default labels applied when clustering with k = 6.
pub const DEFAULT_ARCHETYPE_LABELS: [&str; 6] = [
    "Distressed-Vulnerable",
    "Driven-Assertive",
    "Self-Actualized",
    "Supportive-Conventional",
    "Nonconformist-Skeptical",
    "Risk-Seeking-Detached",
];

/// A fitted k-means model over profile space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchetypeModel {
    pub k: usize,
    /// Column names for the centroid matrix (profile dimensions).
    pub dimensions: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub seed: u64,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning run; non-increasing.
    pub inertia_trace: Vec<f64>,
}

impl ArchetypeModel {
    pub fn label_of(&self, index: usize) -> &str {
        &self.labels[index]
    }

    /// Centroid as a dimension-keyed map.
    pub fn centroid_map(&self, index: usize) -> BTreeMap<String, f64> {
        self.dimensions
            .iter()
            .cloned()
            .zip(self.centroids[index].iter().copied())
            .collect()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

fn kmeans_pp_seeds(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(data[rng.gen_range(0..data.len())].clone());
    while centroids.len() < k {
        let dists: Vec<f64> = data.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = dists.iter().sum();
        if total == 0.0 {
            // All points coincide with existing centroids; pick uniformly.
            centroids.push(data[rng.gen_range(0..data.len())].clone());
            continue;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut chosen = data.len() - 1;
        for (i, d) in dists.iter().enumerate() {
            target -= d;
            if target <= 0.0 {
                chosen = i;
                break;
            }
        }
        centroids.push(data[chosen].clone());
    }
    centroids
}

struct LloydRun {
    centroids: Vec<Vec<f64>>,
    inertia: f64,
    trace: Vec<f64>,
}

fn lloyd(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng, max_iter: usize) -> LloydRun {
    let dim = data[0].len();
    let mut centroids = kmeans_pp_seeds(data, k, rng);
    let mut assignments = vec![usize::MAX; data.len()];
    let mut trace = Vec::new();

    for _ in 0..max_iter {
        // Assignment step (ties go to the lowest index via strict <).
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, point) in data.iter().enumerate() {
            let (j, d) = nearest(point, &centroids);
            inertia += d;
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        trace.push(inertia);
        if !changed {
            break;
        }

        // Update step.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (point, &j) in data.iter().zip(&assignments) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(point) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Re-seed an empty cluster from the point farthest from its
                // assigned centroid.
                let far = data
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        let da = nearest(a, &centroids).1;
                        let db = nearest(b, &centroids).1;
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[j] = data[far].clone();
            } else {
                for (c, s) in centroids[j].iter_mut().zip(&sums[j]) {
                    *c = s / counts[j] as f64;
                }
            }
        }
    }

    let inertia = *trace.last().unwrap();
    LloydRun {
        centroids,
        inertia,
        trace,
    }
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs by
/// inertia. Deterministic given (data, k, seed).
pub fn kmeans(
    data: &[Vec<f64>],
    dimensions: &[String],
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ArchetypeModel> {
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {k}")));
    }
    if data.len() < k {
        return Err(Error::Config(format!(
            "k = {k} exceeds the number of profiles ({})",
            data.len()
        )));
    }
    let dim = data[0].len();
    if dim != dimensions.len() || data.iter().any(|row| row.len() != dim) {
        return Err(Error::Pairing("profile rows and dimension names disagree".into()));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("profiles contain non-finite values".into()));
    }

    let mut best: Option<LloydRun> = None;
    for restart in 0..restarts.max(1) {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeded_hash(seed, &["kmeans", &restart.to_string()]));
        let run = lloyd(data, k, &mut rng, 300);
        debug_assert!(
            run.trace.windows(2).all(|w| w[1] <= w[0] + 1e-9),
            "inertia increased during Lloyd iterations"
        );
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.unwrap();

    let labels = if k == DEFAULT_ARCHETYPE_LABELS.len() {
        DEFAULT_ARCHETYPE_LABELS.iter().map(|s| s.to_string()).collect()
    } else {
        (1..=k).map(|i| format!("archetype_{i}")).collect()
    };

    Ok(ArchetypeModel {
        k,
        dimensions: dimensions.to_vec(),
        centroids: best.centroids,
        labels,
        seed,
        inertia: best.inertia,
        inertia_trace: best.trace,
    })
}

/// Nearest centroid by Euclidean distance; ties resolve to the lowest index.
pub fn assign(profile: &[f64], model: &ArchetypeModel) -> usize {
    nearest(profile, &model.centroids).0
}

/// Mean silhouette coefficient of a clustering (Euclidean distance).
/// Singleton clusters contribute 0 for their point, following the usual
/// convention.
pub fn silhouette_mean(data: &[Vec<f64>], assignments: &[usize], k: usize) -> f64 {
    let n = data.len();
    if n == 0 {
        return 0.0;
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        members[a].push(i);
    }

    let mut total = 0.0;
    for i in 0..n {
        let own = assignments[i];
        if members[own].len() <= 1 {
            continue; // s(i) = 0
        }
        let mean_dist = |cluster: &[usize], exclude_self: bool| -> f64 {
            let mut sum = 0.0;
            let mut count = 0.0;
            for &j in cluster {
                if exclude_self && j == i {
                    continue;
                }
                sum += squared_distance(&data[i], &data[j]).sqrt();
                count += 1.0;
            }
            sum / count
        };
        let a = mean_dist(&members[own], true);
        let b = (0..k)
            .filter(|&c| c != own && !members[c].is_empty())
            .map(|c| mean_dist(&members[c], false))
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Silhouette scores for each candidate k; `best_k` is the argmax with ties
/// going to the smaller k.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KSelection {
    pub best_k: usize,
    pub scores: Vec<(usize, f64)>,
}

pub fn select_k(
    data: &[Vec<f64>],
    dimensions: &[String],
    k_range: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Result<KSelection> {
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 2 || hi >= data.len() || lo > hi {
        return Err(Error::Config(format!(
            "k range [{lo}, {hi}] must sit within [2, rows-1] = [2, {}]",
            data.len().saturating_sub(1)
        )));
    }

    let mut scores = Vec::new();
    let mut best_k = lo;
    let mut best_score = f64::NEG_INFINITY;
    for k in lo..=hi {
        let model = kmeans(data, dimensions, k, seed, 10)?;
        let assignments: Vec<usize> = data.iter().map(|p| assign(p, &model)).collect();
        let score = silhouette_mean(data, &assignments, k);
        if score > best_score {
            best_score = score;
            best_k = k;
        }
        scores.push((k, score));
    }
    Ok(KSelection { best_k, scores })
}

/// Fractions of users expressing 1, >= 2, and >= 3 distinct archetypes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiversityStats {
    pub n_users: usize,
    pub frac_single: f64,
    pub frac_two_plus: f64,
    pub frac_three_plus: f64,
    /// distinct-archetype count -> number of users.
    pub histogram: BTreeMap<usize, usize>,
}

pub fn diversity_stats(assignments_by_user: &BTreeMap<String, Vec<usize>>) -> Result<DiversityStats> {
    if assignments_by_user.is_empty() || assignments_by_user.values().any(|v| v.is_empty()) {
        return Err(Error::Precondition("every user needs at least one assignment".into()));
    }
    let n_users = assignments_by_user.len();
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for assignments in assignments_by_user.values() {
        let distinct: std::collections::BTreeSet<usize> = assignments.iter().copied().collect();
        *histogram.entry(distinct.len()).or_default() += 1;
    }
    let count_where = |pred: &dyn Fn(usize) -> bool| {
        histogram
            .iter()
            .filter(|(k, _)| pred(**k))
            .map(|(_, v)| v)
            .sum::<usize>() as f64
    };
    Ok(DiversityStats {
        n_users,
        frac_single: count_where(&|k| k == 1) / n_users as f64,
        frac_two_plus: count_where(&|k| k >= 2) / n_users as f64,
        frac_three_plus: count_where(&|k| k >= 3) / n_users as f64,
        histogram,
    })
}

// ---------------------------------------------------------------------------
// Profile cards
// ---------------------------------------------------------------------------

/// Which scale the band cutoffs apply to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSpace {
    /// Cutoffs compared against the rendered raw score.
    Raw,
    /// Cutoffs compared against the centroid z-score.
    Z,
}

/// Ordered descriptor bands for one dimension. Bands are ascending by
/// cutoff; a value selects the first band it is strictly below, and the
/// final band must have a null cutoff as catch-all.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionThresholds {
    pub space: ThresholdSpace,
    pub bands: Vec<(Option<f64>, String)>,
}

impl DimensionThresholds {
    fn descriptor(&self, raw: f64, z: f64) -> Result<&str> {
        let value = match self.space {
            ThresholdSpace::Raw => raw,
            ThresholdSpace::Z => z,
        };
        for (cutoff, descriptor) in &self.bands {
            match cutoff {
                Some(c) if value < *c => return Ok(descriptor),
                None => return Ok(descriptor),
                _ => {}
            }
        }
        Err(Error::Config("threshold bands missing a catch-all entry".into()))
    }
}

/// Dimension -> descriptor bands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub entries: BTreeMap<String, DimensionThresholds>,
}

impl ThresholdTable {
    pub fn from_json_str(json: &str) -> Result<Self> {
        let table: ThresholdTable = serde_json::from_str(json)
            .map_err(|e| Error::Config(format!("invalid thresholds file: {e}")))?;
        for (dim, entry) in &table.entries {
            if entry.bands.is_empty() || entry.bands.last().unwrap().0.is_some() {
                return Err(Error::Config(format!(
                    "thresholds for '{dim}' must end with a null-cutoff catch-all band"
                )));
            }
        }
        Ok(table)
    }

    /// Editable defaults: Neuroticism uses published raw cutoffs (below 3.1
    /// emotionally stable, 3.8 and above high anxiety); every other
    /// dimension uses symmetric z bands at 0.2 / 0.5 / 0.8 labelling small,
    /// medium, and large deviations.
    pub fn bundled_default() -> Self {
        Self::from_json_str(include_str!("../assets/default_thresholds.json"))
            .expect("bundled thresholds are valid")
    }

    pub fn descriptor(&self, dimension: &str, raw: f64, z: f64) -> Result<&str> {
        let entry = self
            .entries
            .get(dimension)
            .ok_or_else(|| Error::Config(format!("no threshold entry for dimension '{dimension}'")))?;
        entry.descriptor(raw, z)
    }
}

/// One rendered score line of a card section.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreLine {
    pub dimension: String,
    pub raw: f64,
    pub z: f64,
    pub descriptor: String,
    pub clamped: bool,
}

/// Rendered textual profile used to condition models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileCard {
    pub title: String,
    pub personality: Vec<ScoreLine>,
    pub values_top3: Vec<(String, f64)>,
    pub values_summary: String,
    pub motivation: Vec<ScoreLine>,
    pub primary_drive: String,
    pub risk: Vec<ScoreLine>,
    pub emotional_expression: String,
    pub communication_style: String,
    pub decision_advice: String,
    pub clamped_dimensions: Vec<String>,
}

const PERSONALITY_ORDER: [&str; 5] = [
    "Openness",
    "Conscientiousness",
    "Extraversion",
    "Agreeableness",
    "Neuroticism",
];
const MOTIVATION_ORDER: [&str; 5] = [
    "Intrinsic Motivation",
    "Extrinsic Motivation",
    "Autonomy",
    "Competence",
    "Relatedness",
];
/// Card display label -> registry dimension for the risk section.
const RISK_ORDER: [(&str, &str); 6] = [
    ("Financial", "Investment"),
    ("Gambling", "Gambling"),
    ("Health/Safety", "Health/Safety"),
    ("Social", "Social"),
    ("Ethical", "Ethical"),
    ("Recreational", "Recreational"),
];

/// Convert a z-space centroid to framework-native raw scores
/// (raw = mean + z * sd, clamped into the framework range) and attach
/// descriptors from the threshold table.
pub fn render_profile_card(
    title: &str,
    centroid: &BTreeMap<String, f64>,
    stats: &DimensionStats,
    registry: &ScaleRegistry,
    thresholds: &ThresholdTable,
) -> Result<ProfileCard> {
    let mut lines: BTreeMap<String, ScoreLine> = BTreeMap::new();
    let mut clamped_dimensions = Vec::new();

    for dimension in registry.dimension_names() {
        let z = *centroid.get(&dimension).ok_or_else(|| {
            Error::Precondition(format!("centroid missing dimension '{dimension}'"))
        })?;
        let (mean, sd) = stats.get(&dimension).ok_or_else(|| {
            Error::Precondition(format!("population stats missing dimension '{dimension}'"))
        })?;
        let framework = registry
            .framework_of(&dimension)
            .ok_or_else(|| Error::Config(format!("dimension '{dimension}' not in registry")))?;
        let unclamped = mean + z * sd;
        let raw = unclamped.clamp(framework.response_min, framework.response_max);
        let clamped = raw != unclamped;
        if clamped {
            clamped_dimensions.push(dimension.clone());
        }
        let descriptor = thresholds.descriptor(&dimension, raw, z)?.to_string();
        lines.insert(
            dimension.clone(),
            ScoreLine {
                dimension,
                raw,
                z,
                descriptor,
                clamped,
            },
        );
    }

    let pick = |names: &[&str]| -> Vec<ScoreLine> {
        names.iter().map(|n| lines[*n].clone()).collect()
    };

    let personality = pick(&PERSONALITY_ORDER);
    let motivation = pick(&MOTIVATION_ORDER);
    let risk: Vec<ScoreLine> = RISK_ORDER
        .iter()
        .map(|(label, dim)| {
            let mut line = lines[*dim].clone();
            line.dimension = label.to_string();
            line
        })
        .collect();

    let svs = registry
        .framework(FrameworkName::SVS)
        .ok_or_else(|| Error::Config("registry has no SVS framework".into()))?;
    let mut values: Vec<(String, f64)> = svs
        .dimensions
        .iter()
        .map(|d| (d.name.clone(), lines[&d.name].raw))
        .collect();
    values.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let values_top3: Vec<(String, f64)> = values.into_iter().take(3).collect();
    let values_summary = format!(
        "Prioritizes {}, {}, and {}.",
        values_top3[0].0.to_lowercase(),
        values_top3[1].0.to_lowercase(),
        values_top3[2].0.to_lowercase()
    );

    let intrinsic = lines["Intrinsic Motivation"].raw;
    let extrinsic = lines["Extrinsic Motivation"].raw;
    let primary_drive = if (intrinsic - extrinsic).abs() < 0.25 {
        "Balanced intrinsic/extrinsic".to_string()
    } else if intrinsic > extrinsic {
        "Intrinsic (growth and interest)".to_string()
    } else {
        "Extrinsic (rewards and recognition)".to_string()
    };

    let neuroticism_z = lines["Neuroticism"].z;
    let emotional_expression = if neuroticism_z > 0.5 {
        "May express anxiety or distress; lead with reassurance before content.".to_string()
    } else if neuroticism_z < -0.5 {
        "Emotionally steady; direct engagement with content works well.".to_string()
    } else {
        "Typical emotional tone; no special emotional framing needed.".to_string()
    };

    let extraversion_z = lines["Extraversion"].z;
    let agreeableness_z = lines["Agreeableness"].z;
    let communication_style = match (extraversion_z > 0.5, agreeableness_z > 0.5) {
        (true, true) => "Warm and talkative; conversational, affirming responses fit best.".to_string(),
        (true, false) => "Direct and assertive; concise, confident responses fit best.".to_string(),
        (false, true) => "Reserved but cooperative; gentle, considerate responses fit best.".to_string(),
        (false, false) => "Reserved and independent; neutral, low-pressure responses fit best.".to_string(),
    };

    let mean_risk_z = RISK_ORDER.iter().map(|(_, d)| lines[*d].z).sum::<f64>() / RISK_ORDER.len() as f64;
    let decision_advice = if mean_risk_z > 0.5 {
        "Comfortable with risk; present bold options without over-emphasizing caution.".to_string()
    } else if mean_risk_z < -0.5 {
        "Risk-averse; emphasize safeguards and low-risk paths.".to_string()
    } else {
        "Moderate risk tolerance; balance opportunity against downside plainly.".to_string()
    };

    Ok(ProfileCard {
        title: title.to_string(),
        personality,
        values_top3,
        values_summary,
        motivation,
        primary_drive,
        risk,
        emotional_expression,
        communication_style,
        decision_advice,
        clamped_dimensions,
    })
}

impl ProfileCard {
    /// UTF-8 text in the card layout, embeddable verbatim into audit prompts.
    pub fn render_text(&self, registry: &ScaleRegistry) -> String {
        let range = |name: FrameworkName| -> (f64, f64) {
            registry
                .framework(name)
                .map(|f| (f.response_min, f.response_max))
                .unwrap_or((0.0, 0.0))
        };
        let fmt_range = |(lo, hi): (f64, f64)| format!("[Scale: {lo:.0} to {hi:.0}]");

        let mut out = String::new();
        out.push_str("PSYCHOLOGICAL PROFILE CARD\n");
        out.push_str(&format!("Archetype: {}\n\n", self.title));

        out.push_str(&format!("PERSONALITY (Big Five) {}\n", fmt_range(range(FrameworkName::BFI))));
        for line in &self.personality {
            out.push_str(&format!(
                "- {}: {:.2}/{:.0} ({})\n",
                line.dimension,
                line.raw,
                range(FrameworkName::BFI).1,
                line.descriptor
            ));
        }

        out.push_str(&format!("\nCORE VALUES (Schwartz) {}\n", fmt_range(range(FrameworkName::SVS))));
        let top: Vec<String> = self
            .values_top3
            .iter()
            .map(|(name, score)| format!("{name}: {score:.2}"))
            .collect();
        out.push_str(&format!("Top 3: {}\n", top.join(", ")));
        out.push_str(&format!("Summary: {}\n", self.values_summary));

        out.push_str(&format!("\nMOTIVATION PROFILE (SDT) {}\n", fmt_range(range(FrameworkName::SDT))));
        let motivation: Vec<String> = self
            .motivation
            .iter()
            .map(|line| {
                let short = match line.dimension.as_str() {
                    "Intrinsic Motivation" => "Intrinsic",
                    "Extrinsic Motivation" => "Extrinsic",
                    other => other,
                };
                format!("{short}: {:.2}", line.raw)
            })
            .collect();
        out.push_str(&format!("{}\n", motivation.join(" | ")));
        out.push_str(&format!("Primary Drive: {}\n", self.primary_drive));

        out.push_str(&format!("\nRISK ATTITUDES (DOSPERT) {}\n", fmt_range(range(FrameworkName::DOSPERT))));
        let risk: Vec<String> = self
            .risk
            .iter()
            .map(|line| format!("{}: {:.2}", line.dimension, line.raw))
            .collect();
        out.push_str(&format!("{}\n", risk.join(" | ")));

        out.push_str("\nBEHAVIORAL GUIDANCE:\n");
        out.push_str(&format!("Emotional Expression: {}\n", self.emotional_expression));
        out.push_str(&format!("Communication Style: {}\n", self.communication_style));
        out.push_str(&format!("Decision Advice: {}\n", self.decision_advice));
        out
    }
}
