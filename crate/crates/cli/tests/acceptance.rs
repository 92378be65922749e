//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (visible with `cargo test -- --nocapture`). Oracles here are
//! independent of the implementation paths they check: quadrature for the
//! distribution CDFs, ordinary least squares via normal equations for the
//! mixed model, Monte-Carlo generators for variance components, and
//! brute-force partition search for clustering.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use statetrait_cli::{config::Stage, pipeline, report, run, RunConfig};
use statetrait_core::archetypes;
use statetrait_core::audit::{self, Condition, Question, QuestionSource};
use statetrait_core::profiles::{self, Normalizer};
use statetrait_core::providers::mock::{MockEmbeddingProvider, MockRewardProvider};
use statetrait_core::providers::{CompletionProvider, CompletionRequest, RetryPolicy, RewardProvider};
use statetrait_core::psychometrics::{self, dist_cdf, DistKind};
use statetrait_core::scales::{FrameworkName, RawProfile, ScaleRegistry};
use statetrait_core::Method;

fn pass(criterion: usize, name: &str) {
    println!("ACCEPTANCE {criterion:>2} {name}: PASS");
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------------------
// 1. ICC oracle suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_icc_oracle_suite() {
    // (a) Hand instance.
    let est = psychometrics::icc_oneway(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
    assert!(
        (est.icc - 12.5 / 15.5).abs() < 1e-9,
        "hand instance: got {}",
        est.icc
    );

    // (b) Monte-Carlo generator for the trait/state model: observation =
    // trait draw + within-person noise; trait variance 1, within variance 3,
    // 2000 users x 3 posts. Population ICC = 1 / (1 + 3) = 0.25.
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let groups: Vec<Vec<f64>> = (0..2000)
        .map(|_| {
            let trait_component = standard_normal(&mut rng);
            (0..3)
                .map(|_| trait_component + 3.0f64.sqrt() * standard_normal(&mut rng))
                .collect()
        })
        .collect();
    let est = psychometrics::icc_oneway(&groups).unwrap();
    assert!(
        (est.icc - 0.25).abs() < 0.02,
        "Monte-Carlo ICC = {}, expected 0.25 +/- 0.02",
        est.icc
    );

    // (c) Affine invariance and ospe + icc = 1 across 100 random datasets.
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..100 {
        let n_groups = 3 + (rng.gen::<u64>() % 8) as usize;
        let groups: Vec<Vec<f64>> = (0..n_groups)
            .map(|_| {
                let size = 2 + (rng.gen::<u64>() % 4) as usize;
                let center = 4.0 * standard_normal(&mut rng);
                (0..size).map(|_| center + standard_normal(&mut rng)).collect()
            })
            .collect();
        let base = psychometrics::icc_oneway(&groups).unwrap();
        let mapped: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| g.iter().map(|v| 3.0 * v + 7.0).collect())
            .collect();
        let transformed = psychometrics::icc_oneway(&mapped).unwrap();
        assert!(
            (base.icc - transformed.icc).abs() < 1e-9,
            "affine invariance violated: {} vs {}",
            base.icc,
            transformed.icc
        );

        let rows: Vec<(String, BTreeMap<String, f64>)> = groups
            .iter()
            .enumerate()
            .flat_map(|(g, values)| {
                values.iter().map(move |&v| {
                    (format!("u{g}"), [("d".to_string(), v)].into_iter().collect())
                })
            })
            .collect();
        let decomposition = psychometrics::decompose_all(&rows).unwrap();
        for row in &decomposition.rows {
            assert_eq!(row.ospe + row.icc, 1.0, "ospe + icc must be exactly 1");
        }
    }
    pass(1, "ICC oracle suite");
}

// ---------------------------------------------------------------------------
// 2. Mixed-model suite
// ---------------------------------------------------------------------------

/// Independent OLS oracle: normal equations on an explicitly built design.
fn ols_oracle(outcome: &[f64], contexts: &[String], baseline: &str) -> Vec<f64> {
    let mut levels: Vec<&String> = contexts.iter().collect();
    levels.sort();
    levels.dedup();
    let predictors: Vec<&String> = levels.into_iter().filter(|l| l.as_str() != baseline).collect();
    let p = 1 + predictors.len();
    let n = outcome.len();
    let mut x = nalgebra::DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        if let Some(j) = predictors.iter().position(|c| **c == contexts[i]) {
            x[(i, j + 1)] = 1.0;
        }
    }
    let y = nalgebra::DVector::from_column_slice(outcome);
    let beta = (x.transpose() * &x).try_inverse().unwrap() * (x.transpose() * y);
    beta.iter().copied().collect()
}

#[test]
fn criterion_02_mixed_model_suite() {
    // Zero-random-variance data (one observation per user) matches OLS.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let context_pool = ["base", "ctx_a", "ctx_b", "ctx_c"];
    let mut y = Vec::new();
    let mut contexts = Vec::new();
    let mut users = Vec::new();
    for i in 0..120 {
        let c = context_pool[i % context_pool.len()];
        let effect = match c {
            "ctx_a" => 0.6,
            "ctx_b" => -0.2,
            "ctx_c" => 1.1,
            _ => 0.0,
        };
        y.push(0.5 + effect + 0.4 * standard_normal(&mut rng));
        contexts.push(c.to_string());
        users.push(format!("solo{i}"));
    }
    let fit = psychometrics::fit_random_intercept(&y, &contexts, &users, "base").unwrap();
    let oracle = ols_oracle(&y, &contexts, "base");
    assert!(fit.sigma_u2 < 1e-6, "sigma_u2 should collapse, got {}", fit.sigma_u2);
    for (effect, expected) in fit.beta.iter().zip(&oracle) {
        assert!(
            (effect.estimate - expected).abs() < 1e-6,
            "{} = {} vs OLS {}",
            effect.name,
            effect.estimate,
            expected
        );
    }

    // Balanced synthetic: beta = 0.5, sigma_u2 = 0, sigma_e2 = 0.01, 200 users.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut y = Vec::new();
    let mut contexts = Vec::new();
    let mut users = Vec::new();
    for u in 0..200 {
        for c in ["base", "treat"] {
            let effect = if c == "treat" { 0.5 } else { 0.0 };
            y.push(effect + 0.1 * standard_normal(&mut rng));
            contexts.push(c.to_string());
            users.push(format!("u{u}"));
        }
    }
    let fit = psychometrics::fit_random_intercept(&y, &contexts, &users, "base").unwrap();
    let beta = fit.effect("treat").unwrap().estimate;
    assert!((beta - 0.5).abs() < 0.02, "balanced beta = {beta}");

    // Simulation: beta = 0.3, sigma_u2 = sigma_e2 = 1, 1000 users x 3 obs.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut y = Vec::new();
    let mut contexts = Vec::new();
    let mut users = Vec::new();
    for u in 0..1000 {
        let gamma = standard_normal(&mut rng);
        for c in ["base", "base", "treat"] {
            let effect = if c == "treat" { 0.3 } else { 0.0 };
            y.push(effect + gamma + standard_normal(&mut rng));
            contexts.push(c.to_string());
            users.push(format!("u{u}"));
        }
    }
    let fit = psychometrics::fit_random_intercept(&y, &contexts, &users, "base").unwrap();
    let beta = fit.effect("treat").unwrap().estimate;
    assert!((beta - 0.3).abs() < 0.05, "sim beta = {beta}");
    assert!((fit.sigma_u2 - 1.0).abs() < 0.15, "sim sigma_u2 = {}", fit.sigma_u2);
    assert!(fit.converged);
    pass(2, "mixed-model suite");
}

// ---------------------------------------------------------------------------
// 3. Distribution accuracy vs a quadrature oracle
// ---------------------------------------------------------------------------

/// Gamma(n/2) for integer n >= 1, computed exactly from Gamma(1/2) = sqrt(pi)
/// and Gamma(1) = 1 by the recurrence. Independent of the Lanczos ln_gamma
/// used inside the implementation.
fn gamma_half(n: u32) -> f64 {
    match n {
        1 => std::f64::consts::PI.sqrt(),
        2 => 1.0,
        _ => (n as f64 / 2.0 - 1.0) * gamma_half(n - 2),
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let m = (a + b) / 2.0;
        let lm = (a + m) / 2.0;
        let rm = (m + b) / 2.0;
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
            return left + right + (left + right - whole) / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }
    let m = (a + b) / 2.0;
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, eps, 60)
}

/// F CDF by quadrature with the substitution x = u^2, which removes the
/// integrable singularity at 0 when df1 = 1.
fn f_cdf_oracle(x: f64, d1: u32, d2: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let a = d1 as f64 / 2.0;
    let b = d2 as f64 / 2.0;
    let beta = gamma_half(d1) * gamma_half(d2) / gamma_half(d1 + d2);
    let ratio = d1 as f64 / d2 as f64;
    let integrand = move |u: f64| {
        2.0 * ratio.powf(a) * u.powf(2.0 * a - 1.0) * (1.0 + ratio * u * u).powf(-(a + b)) / beta
    };
    adaptive_simpson(&integrand, 0.0, x.sqrt(), 1e-13)
}

/// Student-t CDF by quadrature of the density from 0, using symmetry.
fn t_cdf_oracle(x: f64, nu: u32) -> f64 {
    if x == 0.0 {
        return 0.5;
    }
    let n = nu as f64;
    let norm = gamma_half(nu + 1) / ((n * std::f64::consts::PI).sqrt() * gamma_half(nu));
    let integrand = move |t: f64| norm * (1.0 + t * t / n).powf(-(n + 1.0) / 2.0);
    let half = adaptive_simpson(&integrand, 0.0, x.abs(), 1e-13);
    if x > 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

#[test]
fn criterion_03_distribution_accuracy() {
    // 50 sampled F points.
    let f_dfs = [(1, 1), (1, 10), (2, 5), (3, 7), (5, 2), (10, 10), (4, 30), (7, 3), (12, 8), (30, 30)];
    let f_points = [0.1, 0.5, 1.0, 2.5, 5.0];
    let mut checked = 0;
    for &(d1, d2) in &f_dfs {
        for &x in &f_points {
            let ours = dist_cdf(
                DistKind::F {
                    df1: d1 as f64,
                    df2: d2 as f64,
                },
                x,
            )
            .unwrap();
            let oracle = f_cdf_oracle(x, d1, d2);
            assert!(
                (ours - oracle).abs() <= 1e-9,
                "F({d1},{d2}) at {x}: {ours} vs oracle {oracle}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 50);

    // 50 sampled t points.
    let t_dfs = [1, 2, 3, 5, 8, 12, 20, 30, 60, 120];
    let t_points = [0.2, 0.8, 1.5, 3.0, -1.0];
    let mut checked = 0;
    for &nu in &t_dfs {
        for &x in &t_points {
            let ours = dist_cdf(DistKind::StudentT { df: nu as f64 }, x).unwrap();
            let oracle = t_cdf_oracle(x, nu);
            assert!(
                (ours - oracle).abs() <= 1e-9,
                "t({nu}) at {x}: {ours} vs oracle {oracle}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 50);

    // F(1, nu) CDF at t^2 equals 2 T(nu)(|t|) - 1.
    for &nu in &[1.0, 2.0, 4.0, 9.0, 25.0, 120.0] {
        for &t in &[0.1, 0.7, 1.3, 2.2, 3.9, 6.0] {
            let f_side = dist_cdf(DistKind::F { df1: 1.0, df2: nu }, t * t).unwrap();
            let t_side = 2.0 * dist_cdf(DistKind::StudentT { df: nu }, t).unwrap() - 1.0;
            assert!(
                (f_side - t_side).abs() <= 1e-9,
                "identity at nu={nu}, t={t}: {f_side} vs {t_side}"
            );
        }
    }
    pass(3, "distribution accuracy");
}

// ---------------------------------------------------------------------------
// 4. Normalization / fusion laws
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_normalization_fusion_laws() {
    // Build a synthetic dataset across all 26 registry dimensions.
    let registry = ScaleRegistry::bundled_default();
    let dimensions = registry.dimension_names();
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let mut raw_profiles = Vec::new();
    for _ in 0..100 {
        for method in [Method::Lex, Method::Sem] {
            let scores: BTreeMap<String, f64> = dimensions
                .iter()
                .map(|d| {
                    let framework = registry.framework_of(d).unwrap();
                    let span = framework.response_max - framework.response_min;
                    let v = framework.response_min + span * rng.gen::<f64>();
                    (d.clone(), v)
                })
                .collect();
            raw_profiles.push(RawProfile { method, scores });
        }
    }
    let normalizer = Normalizer::fit(&raw_profiles).unwrap();
    let normalized: Vec<_> = raw_profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            profiles::normalize(p, &normalizer, &format!("p{}", i / 2), "u", "c").unwrap()
        })
        .collect();

    // Every (method, dimension) column has mean 0 and sample sd 1.
    for method in [Method::Lex, Method::Sem] {
        for dimension in &dimensions {
            let column: Vec<f64> = normalized
                .iter()
                .filter(|p| p.method == method)
                .map(|p| p.z[dimension])
                .collect();
            let n = column.len() as f64;
            let mean = column.iter().sum::<f64>() / n;
            let sd =
                (column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!(mean.abs() <= 1e-9, "{method}/{dimension} mean {mean}");
            assert!((sd - 1.0).abs() <= 1e-9, "{method}/{dimension} sd {sd}");
        }
    }

    // Fusion symmetry and idempotence, exact.
    let lex = &normalized[0];
    let sem = &normalized[1];
    let ab = profiles::fuse(lex, sem).unwrap();
    let ba = profiles::fuse(sem, lex).unwrap();
    assert_eq!(ab.z, ba.z, "fusion must be symmetric");
    let same = profiles::fuse(lex, lex).unwrap();
    assert_eq!(same.z, lex.z, "fusing a profile with itself must be the identity");

    // Agreement: +1 for self, -1 for negation.
    let self_r = profiles::profile_agreement(lex, lex).unwrap().unwrap();
    assert!((self_r - 1.0).abs() <= 1e-12);
    let mut negated = lex.clone();
    for v in negated.z.values_mut() {
        *v = -*v;
    }
    let neg_r = profiles::profile_agreement(lex, &negated).unwrap().unwrap();
    assert!((neg_r + 1.0).abs() <= 1e-12);
    pass(4, "normalization/fusion laws");
}

// ---------------------------------------------------------------------------
// 5. Scale scoring laws
// ---------------------------------------------------------------------------

/// Frozen per-dimension item counts for the shipped registry.
const EXPECTED_DIMENSION_ITEMS: [(&str, usize); 26] = [
    ("Extraversion", 8),
    ("Agreeableness", 9),
    ("Conscientiousness", 9),
    ("Neuroticism", 8),
    ("Openness", 10),
    ("Power", 5),
    ("Achievement", 6),
    ("Hedonism", 3),
    ("Stimulation", 3),
    ("Self-Direction", 6),
    ("Universalism", 9),
    ("Benevolence", 8),
    ("Tradition", 5),
    ("Conformity", 4),
    ("Security", 5),
    ("Intrinsic Motivation", 9),
    ("Extrinsic Motivation", 9),
    ("Competence", 5),
    ("Autonomy", 5),
    ("Relatedness", 5),
    ("Investment", 4),
    ("Gambling", 4),
    ("Health/Safety", 8),
    ("Recreational", 8),
    ("Ethical", 8),
    ("Social", 8),
];

#[test]
fn criterion_05_scale_scoring_laws() {
    let registry = ScaleRegistry::bundled_default();

    // Registry integrity, exact.
    assert_eq!(registry.total_dimensions(), 26);
    assert_eq!(registry.total_items(), 171);
    for (dimension, expected) in EXPECTED_DIMENSION_ITEMS {
        let framework = registry
            .framework_of(dimension)
            .unwrap_or_else(|| panic!("dimension {dimension} missing"));
        let dim = framework.dimensions.iter().find(|d| d.name == dimension).unwrap();
        assert_eq!(dim.items.len(), expected, "item count for {dimension}");
    }

    // Reversal involution, exact, across every framework range.
    for framework in &registry.frameworks {
        let (lo, hi) = (framework.response_min, framework.response_max);
        for i in 0..=10 {
            let raw = lo + (hi - lo) * (i as f64 / 10.0);
            let twice = statetrait_core::scales::reverse_score(
                statetrait_core::scales::reverse_score(raw, lo, hi),
                lo,
                hi,
            );
            assert_eq!(twice, raw, "reversal involution at {raw} in [{lo}, {hi}]");
        }
    }

    // Midpoint fixed point: all items at (min+max)/2 give subscales at the
    // midpoint regardless of reverse keys.
    let mut scores = BTreeMap::new();
    for framework in &registry.frameworks {
        for dim in &framework.dimensions {
            for item in &dim.items {
                scores.insert(item.id.clone(), framework.midpoint());
            }
        }
    }
    let assessment = statetrait_core::scales::ItemAssessment {
        method: Method::Lex,
        scores,
        warnings: vec![],
    };
    let profile = statetrait_core::scales::score_subscales(&assessment, &registry).unwrap();
    for framework in &registry.frameworks {
        for dim in &framework.dimensions {
            assert_eq!(
                profile.scores[&dim.name],
                framework.midpoint(),
                "midpoint fixed point for {}",
                dim.name
            );
        }
    }
    assert_eq!(registry.framework(FrameworkName::BFI).unwrap().midpoint(), 3.0);
    pass(5, "scale scoring laws");
}

// ---------------------------------------------------------------------------
// 6. Clustering
// ---------------------------------------------------------------------------

/// Adjusted Rand index between two labelings.
fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0usize; kb]; ka];
    for i in 0..n {
        table[a[i]][b[i]] += 1;
    }
    let choose2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
    let sum_cols: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = choose2(n);
    let expected = sum_rows * sum_cols / total;
    let max = (sum_rows + sum_cols) / 2.0;
    if (max - expected).abs() < 1e-15 {
        return 1.0;
    }
    (sum_cells - expected) / (max - expected)
}

#[test]
fn criterion_06_clustering() {
    let dims: Vec<String> = vec!["x".into(), "y".into()];
    let data = vec![
        vec![0.0, 0.0],
        vec![0.1, 0.0],
        vec![10.0, 10.0],
        vec![10.1, 10.0],
    ];

    // Brute-force oracle: best 2-partition by within-cluster sum of squares.
    let mut best_mask = 0usize;
    let mut best_ss = f64::INFINITY;
    for mask in 1..(1usize << data.len()) - 1 {
        let cluster: Vec<usize> = (0..data.len()).map(|i| (mask >> i) & 1).collect();
        let mut ss = 0.0;
        for value in 0..2 {
            let members: Vec<&Vec<f64>> = data
                .iter()
                .zip(&cluster)
                .filter(|(_, &c)| c == value)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                ss = f64::INFINITY;
                break;
            }
            let dim = members[0].len();
            let mean: Vec<f64> = (0..dim)
                .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
                .collect();
            ss += members
                .iter()
                .map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .sum::<f64>();
        }
        if ss < best_ss {
            best_ss = ss;
            best_mask = mask;
        }
    }
    let oracle: Vec<usize> = (0..data.len()).map(|i| (best_mask >> i) & 1).collect();

    let model = archetypes::kmeans(&data, &dims, 2, 3, 10).unwrap();
    let ours: Vec<usize> = data.iter().map(|p| archetypes::assign(p, &model)).collect();
    let ari = adjusted_rand_index(&ours, &oracle);
    assert_eq!(ari, 1.0, "ARI vs brute-force partition: {ari}");

    // Silhouette selects k = 2 on two-cluster data.
    let mut two_cluster = Vec::new();
    for i in 0..12 {
        let jitter = i as f64 * 0.02;
        two_cluster.push(vec![jitter, 0.0]);
        two_cluster.push(vec![8.0 + jitter, 8.0]);
    }
    let selection = archetypes::select_k(&two_cluster, &dims, 2..=5, 7).unwrap();
    assert_eq!(selection.best_k, 2, "silhouette scores: {:?}", selection.scores);

    // Inertia trace is non-increasing on a messier dataset.
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let messy: Vec<Vec<f64>> = (0..120)
        .map(|_| vec![4.0 * standard_normal(&mut rng), 4.0 * standard_normal(&mut rng)])
        .collect();
    let model = archetypes::kmeans(&messy, &dims, 5, 9, 10).unwrap();
    for pair in model.inertia_trace.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-9, "inertia increased: {pair:?}");
    }

    // Seed determinism, bit-exact.
    let again = archetypes::kmeans(&messy, &dims, 5, 9, 10).unwrap();
    assert_eq!(model.centroids, again.centroids);
    assert_eq!(model.inertia.to_bits(), again.inertia.to_bits());
    pass(6, "clustering");
}

// ---------------------------------------------------------------------------
// 7. Audit semantics with mocks
// ---------------------------------------------------------------------------

fn seven_conditions() -> Vec<Condition> {
    let mut conditions = vec![Condition::baseline()];
    for label in archetypes::DEFAULT_ARCHETYPE_LABELS {
        conditions.push(Condition::archetype(label, format!("profile card text for {label}")));
    }
    conditions
}

/// 127 questions: the 50 bundled dilemmas, the 5 bundled opinion examples,
/// and 72 synthetic opinion questions standing in for the user-supplied set.
fn full_question_set() -> Vec<Question> {
    let mut questions = audit::bundled_dilemma_questions();
    questions.extend(audit::bundled_opinion_examples());
    for i in 0..72 {
        questions.push(Question {
            id: format!("opinion_extra_{i:02}"),
            text: format!("Synthetic opinion prompt number {i} about a divisive everyday topic."),
            source: QuestionSource::Opinion,
            category: None,
        });
    }
    assert_eq!(questions.len(), 127);
    questions
}

#[test]
fn criterion_07_audit_semantics_with_mocks() {
    let questions = full_question_set();
    let conditions = seven_conditions();
    let references: BTreeMap<String, String> = questions
        .iter()
        .map(|q| (q.id.clone(), format!("A reference answer discussing {}", q.id)))
        .collect();

    // Profile-blind mock: Cohen's d = 0 and eta^2 = 0 exactly.
    let blind = MockRewardProvider::profile_blind("rm-blind", 70);
    let rms: Vec<(String, &dyn RewardProvider)> = vec![("rm-blind".into(), &blind)];
    let grid = audit::run_reward_grid(&questions, &references, &conditions, &rms, 8, RetryPolicy::immediate())
        .unwrap();
    assert_eq!(grid.cells.len(), 127 * 7, "127 x 7 = 889 scores per reward model");
    let report = audit::invariance_report(&grid, &questions, false).unwrap();
    assert_eq!(report.per_rm_archetype.len(), 6);
    for effect in &report.per_rm_archetype {
        assert_eq!(effect.cohens_d, Some(0.0), "{}", effect.archetype);
    }
    for dataset in &report.per_rm_dataset_anova {
        assert_eq!(dataset.anova.eta_squared, 0.0);
    }
    assert!(report.disagreements.is_empty());

    // Opposite-bias pair: opposite-sign d on every archetype plus raised
    // disagreement flags.
    let plus = MockRewardProvider::biased("rm-plus", 70, 1.0);
    let minus = MockRewardProvider::biased("rm-minus", 70, -1.0);
    let rms: Vec<(String, &dyn RewardProvider)> =
        vec![("rm-plus".into(), &plus), ("rm-minus".into(), &minus)];
    let grid = audit::run_reward_grid(&questions, &references, &conditions, &rms, 8, RetryPolicy::immediate())
        .unwrap();
    assert_eq!(grid.cells.len(), 2 * 127 * 7);
    let report = audit::invariance_report(&grid, &questions, false).unwrap();
    for effect in &report.per_rm_archetype {
        let d = effect.cohens_d.unwrap();
        match effect.rm_id.as_str() {
            "rm-plus" => assert!(d > 0.0, "{} d = {d}", effect.archetype),
            "rm-minus" => assert!(d < 0.0, "{} d = {d}", effect.archetype),
            other => panic!("unexpected rm {other}"),
        }
    }
    assert_eq!(report.disagreements.len(), 6, "one disagreement per archetype");
    pass(7, "audit semantics with mocks");
}

// ---------------------------------------------------------------------------
// 8. Internal consistency: baseline deviation vs pair similarity
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_deviation_pair_consistency() {
    // A deliberately varied grid via seeded mock generators.
    struct VariedProvider(u64);
    impl CompletionProvider for VariedProvider {
        fn complete(&self, request: &CompletionRequest) -> statetrait_core::Result<String> {
            let system = request.system_text.as_deref().unwrap_or("");
            let h = statetrait_core::text::seeded_hash(self.0, &[system, &request.user_text]);
            let words = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"];
            let mut out = Vec::new();
            for i in 0..6 {
                out.push(words[((h >> (i * 8)) % 8) as usize]);
            }
            Ok(out.join(" "))
        }
        fn id(&self) -> &str {
            "varied"
        }
    }

    let questions: Vec<Question> = (0..12)
        .map(|i| Question {
            id: format!("q{i}"),
            text: format!("Question {i} text with several distinct words"),
            source: QuestionSource::Dilemma,
            category: None,
        })
        .collect();
    let conditions = seven_conditions();
    let provider_a = VariedProvider(1);
    let provider_b = VariedProvider(2);
    let models: Vec<(String, &dyn CompletionProvider)> = vec![
        ("model-a".into(), &provider_a),
        ("model-b".into(), &provider_b),
    ];
    let grid =
        audit::run_generation_grid(&questions, &conditions, &models, 4, RetryPolicy::immediate()).unwrap();
    let embedder = MockEmbeddingProvider::default();
    let analysis = audit::pairwise_similarity(&grid, &embedder, 4, RetryPolicy::immediate()).unwrap();
    let report = audit::sensitivity_report(&analysis).unwrap();

    assert_eq!(report.per_archetype_deviation.len(), 6);
    for archetype in &report.per_archetype_deviation {
        let pair = report
            .condition_pairs
            .iter()
            .find(|p| {
                (p.condition_a == "baseline" && p.condition_b == archetype.archetype)
                    || (p.condition_b == "baseline" && p.condition_a == archetype.archetype)
            })
            .unwrap_or_else(|| panic!("no baseline pair for {}", archetype.archetype));
        assert!(
            (archetype.mean_deviation - (1.0 - pair.mean_similarity)).abs() <= 1e-12,
            "{}: deviation {} vs 1 - similarity {}",
            archetype.archetype,
            archetype.mean_deviation,
            1.0 - pair.mean_similarity
        );
    }
    pass(8, "baseline deviation mirrors pair similarity");
}

// ---------------------------------------------------------------------------
// 9. End-to-end golden run
// ---------------------------------------------------------------------------

fn hash_tree(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut hashes = BTreeMap::new();
    for file in pipeline::list_output_files(dir).unwrap() {
        let bytes = std::fs::read(dir.join(&file)).unwrap();
        let digest = format!("{}:{}", bytes.len(), {
            use std::hash::Hasher;
            // Content comparison below is byte-wise; this is just a map key aid.
            let mut h = std::collections::hash_map::DefaultHasher::new();
            h.write(&bytes);
            h.finish()
        });
        hashes.insert(file, digest);
    }
    hashes
}

fn assert_trees_identical(a: &Path, b: &Path) {
    let files_a = pipeline::list_output_files(a).unwrap();
    let files_b = pipeline::list_output_files(b).unwrap();
    assert_eq!(files_a, files_b, "output file sets differ");
    for file in &files_a {
        let bytes_a = std::fs::read(a.join(file)).unwrap();
        let bytes_b = std::fs::read(b.join(file)).unwrap();
        assert!(bytes_a == bytes_b, "file {} differs between runs", file.display());
    }
}

#[test]
fn criterion_09_end_to_end_golden_run() {
    let started = std::time::Instant::now();
    let root = tempfile::tempdir().unwrap();
    let binary = env!("CARGO_BIN_EXE_statetrait");

    let run_all = |out: &Path, parallelism: usize| {
        let config_path = out.with_extension("toml");
        std::fs::write(
            &config_path,
            format!(
                "seed = 7\nout_dir = \"{}\"\nparallelism = {parallelism}\n",
                out.display()
            ),
        )
        .unwrap();
        let status = std::process::Command::new(binary)
            .args(["--config", config_path.to_str().unwrap(), "--stage", "all", "--mock", "--seed", "7"])
            .status()
            .expect("binary runs");
        assert!(status.success(), "run all --mock --seed 7 failed");
    };

    let dir_a = root.path().join("a");
    let dir_b = root.path().join("b");
    let dir_p1 = root.path().join("p1");
    let dir_p8 = root.path().join("p8");
    run_all(&dir_a, 4);
    run_all(&dir_b, 4);
    run_all(&dir_p1, 1);
    run_all(&dir_p8, 8);

    assert_trees_identical(&dir_a, &dir_b);
    assert_trees_identical(&dir_p1, &dir_p8);
    assert_trees_identical(&dir_a, &dir_p1);
    // Same inputs -> same hashes too (sanity on the comparison itself).
    assert_eq!(hash_tree(&dir_a), hash_tree(&dir_b));

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "golden run took {elapsed:?}, budget 60 s");
    pass(9, "end-to-end golden run");
}

// ---------------------------------------------------------------------------
// 10. Format goldens
// ---------------------------------------------------------------------------

static GOLDEN_RUN: OnceLock<tempfile::TempDir> = OnceLock::new();

fn golden_run_dir() -> &'static Path {
    GOLDEN_RUN
        .get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            let config = RunConfig::mock_defaults(7, dir.path().join("out"));
            run(Stage::All, &config).unwrap();
            dir
        })
        .path()
}

#[test]
fn criterion_10_format_goldens() {
    let out = golden_run_dir().join("out");
    let goldens = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/goldens");

    let pairs = [
        (pipeline::files::DECOMPOSITION, "decomposition.csv.golden"),
        (pipeline::files::DECOMPOSITION_SUMMARY, "decomposition_summary.csv.golden"),
        (pipeline::files::REGRESSION, "regression.csv.golden"),
        (pipeline::files::SENSITIVITY_MODELS, "sensitivity_models.csv.golden"),
        (pipeline::files::SENSITIVITY_ARCHETYPES, "sensitivity_archetypes.csv.golden"),
        (pipeline::files::SENSITIVITY_PAIRS, "sensitivity_pairs.csv.golden"),
        (pipeline::files::INVARIANCE_EFFECTS, "invariance_effects.csv.golden"),
        (pipeline::files::INVARIANCE_DATASETS, "invariance_datasets.csv.golden"),
        (pipeline::files::INVARIANCE_DIRECTIONS, "invariance_directions.csv.golden"),
    ];
    for (artifact, golden) in pairs {
        let emitted = std::fs::read_to_string(out.join(artifact))
            .unwrap_or_else(|e| panic!("missing artifact {artifact}: {e}"));
        let header = emitted.lines().next().unwrap_or_default();
        let expected = std::fs::read_to_string(goldens.join(golden)).unwrap();
        assert_eq!(
            header,
            expected.trim_end(),
            "column layout drifted for {artifact}"
        );
        // Data rows must match the header's column count.
        let n_cols = header.split(',').count();
        for line in emitted.lines().skip(1) {
            if line.is_empty() {
                continue;
            }
            assert_eq!(
                line.split(',').count(),
                n_cols,
                "row/header column mismatch in {artifact}: {line}"
            );
        }
    }

    // The emitted matrix formats round-trip (csv header, json identity).
    let heatmap_json = std::fs::read_to_string(out.join(pipeline::files::HEATMAP_JSON)).unwrap();
    let matrix: report::LabelledMatrix = serde_json::from_str(&heatmap_json).unwrap();
    let csv = std::fs::read_to_string(out.join(pipeline::files::HEATMAP_CSV)).unwrap();
    assert!(csv.starts_with("dimension,"));
    assert_eq!(matrix.row_labels.len(), 26);
    let svg = std::fs::read_to_string(out.join(pipeline::files::HEATMAP_SVG)).unwrap();
    assert!(svg.starts_with("<svg"));
    pass(10, "format goldens");
}

// ---------------------------------------------------------------------------
// Supplementary checks used by several criteria
// ---------------------------------------------------------------------------

#[test]
fn exit_code_validation_error_is_one() {
    let binary = env!("CARGO_BIN_EXE_statetrait");
    let dir = tempfile::tempdir().unwrap();
    // decompose without prior stages -> dependency error, exit 1.
    let status = std::process::Command::new(binary)
        .args(["--stage", "decompose", "--mock", "--seed", "7"])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    let status = std::process::Command::new(binary)
        .args(["--stage", "nonsense"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn rerunning_single_stages_reuses_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig::mock_defaults(7, dir.path());
    run(Stage::Ingest, &config).unwrap();
    run(Stage::Extract, &config).unwrap();
    run(Stage::Assess, &config).unwrap();
    run(Stage::Fuse, &config).unwrap();
    run(Stage::Decompose, &config).unwrap();
    let decomposition = std::fs::read_to_string(dir.path().join(pipeline::files::DECOMPOSITION)).unwrap();
    assert!(decomposition.lines().count() > 26 * 3, "3 views x 26 dimensions expected");

    let reference: BTreeSet<String> = decomposition.lines().map(String::from).collect();
    // Re-running decompose alone reproduces the same table.
    run(Stage::Decompose, &config).unwrap();
    let again = std::fs::read_to_string(dir.path().join(pipeline::files::DECOMPOSITION)).unwrap();
    assert_eq!(reference, again.lines().map(String::from).collect::<BTreeSet<_>>());
}
