//! Report emission: CSV tables with pinned column layouts, JSON summaries,
//! and an SVG heatmap of dimensions x contexts.

use std::collections::BTreeMap;
use std::path::Path;

use statetrait_core::audit::{InvarianceReport, SensitivityReport};
use statetrait_core::psychometrics::{MixedModelFit, MtmmMatrix, VarianceDecomposition};

/// Column layouts for every emitted table. Frozen: the acceptance suite
/// checks emitted headers against golden files.
pub mod headers {
    pub const DECOMPOSITION: &str =
        "method,dimension,icc,ospe,var_between,var_within,negative_clamped";
    pub const DECOMPOSITION_SUMMARY: &str =
        "method,mean_icc,icc_min,icc_max,below_threshold,n_dimensions,mean_ospe";
    pub const REGRESSION: &str = "pattern,context,dimension,lex_beta,lex_ci_low,lex_ci_high,lex_p,sem_beta,sem_ci_low,sem_ci_high,sem_p,fused_beta,fused_ci_low,fused_ci_high,fused_p";
    pub const SENSITIVITY_MODELS: &str =
        "model,mean_similarity,sd_similarity,baseline_deviation";
    pub const SENSITIVITY_ARCHETYPES: &str = "archetype,mean_deviation,sd_deviation";
    pub const SENSITIVITY_PAIRS: &str =
        "condition_a,condition_b,mean_similarity,sd_similarity";
    pub const INVARIANCE_EFFECTS: &str =
        "reward_model,archetype,cohens_d,n_treatment,n_baseline";
    pub const INVARIANCE_DATASETS: &str =
        "dataset,reward_model,n_questions,eta_squared,f,p";
    pub const INVARIANCE_DIRECTIONS: &str = "reward_model,direction";
    pub const SILHOUETTE: &str = "k,mean_silhouette";
    pub const AGREEMENT: &str = "post_id,user_id,context_id,agreement_r";
}

/// Fixed-precision float for CSV cells; deterministic across platforms.
pub fn fmt_f(value: f64) -> String {
    format!("{value:.6}")
}

/// Optional float cell; undefined statistics print as NA.
pub fn fmt_opt(value: Option<f64>) -> String {
    value.map(fmt_f).unwrap_or_else(|| "NA".into())
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Write rows under a pinned header. All report tables funnel through here
/// so quoting and float formatting stay uniform.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut out = String::with_capacity(rows.len() * 64 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|f| csv_escape(f)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn decomposition_rows(method: &str, decomposition: &VarianceDecomposition) -> Vec<Vec<String>> {
    decomposition
        .rows
        .iter()
        .map(|row| {
            vec![
                method.to_string(),
                row.dimension.clone(),
                fmt_f(row.icc),
                fmt_f(row.ospe),
                fmt_f(row.var_between),
                fmt_f(row.var_within),
                row.negative_clamped.to_string(),
            ]
        })
        .collect()
}

pub fn decomposition_summary_row(method: &str, decomposition: &VarianceDecomposition) -> Vec<String> {
    let s = &decomposition.summary;
    vec![
        method.to_string(),
        fmt_f(s.mean_icc),
        fmt_f(s.icc_min),
        fmt_f(s.icc_max),
        s.below_threshold.to_string(),
        s.n_dimensions.to_string(),
        fmt_f(s.mean_ospe),
    ]
}

/// One regression table row: a (context, dimension) pattern with the three
/// method views side by side, mirroring the published layout.
pub fn regression_row(
    context: &str,
    dimension: &str,
    lex: &MixedModelFit,
    sem: &MixedModelFit,
    fused: &MixedModelFit,
) -> Vec<String> {
    let cell = |fit: &MixedModelFit| -> [String; 4] {
        match fit.effect(context) {
            Some(e) => [fmt_f(e.estimate), fmt_f(e.ci_low), fmt_f(e.ci_high), fmt_f(e.p_value)],
            None => ["NA".into(), "NA".into(), "NA".into(), "NA".into()],
        }
    };
    let mut row = vec![
        format!("{context} -> {dimension}"),
        context.to_string(),
        dimension.to_string(),
    ];
    for fit in [lex, sem, fused] {
        row.extend(cell(fit));
    }
    row
}

pub fn sensitivity_model_rows(report: &SensitivityReport) -> Vec<Vec<String>> {
    report
        .per_model
        .iter()
        .map(|m| {
            vec![
                m.model_id.clone(),
                fmt_f(m.mean_similarity),
                fmt_f(m.sd_similarity),
                fmt_f(m.baseline_deviation_mean),
            ]
        })
        .collect()
}

pub fn sensitivity_archetype_rows(report: &SensitivityReport) -> Vec<Vec<String>> {
    report
        .per_archetype_deviation
        .iter()
        .map(|a| vec![a.archetype.clone(), fmt_f(a.mean_deviation), fmt_f(a.sd_deviation)])
        .collect()
}

pub fn sensitivity_pair_rows(report: &SensitivityReport) -> Vec<Vec<String>> {
    report
        .condition_pairs
        .iter()
        .map(|p| {
            vec![
                p.condition_a.clone(),
                p.condition_b.clone(),
                fmt_f(p.mean_similarity),
                fmt_f(p.sd_similarity),
            ]
        })
        .collect()
}

pub fn invariance_effect_rows(report: &InvarianceReport) -> Vec<Vec<String>> {
    report
        .per_rm_archetype
        .iter()
        .map(|e| {
            vec![
                e.rm_id.clone(),
                e.archetype.clone(),
                fmt_opt(e.cohens_d),
                e.n_treatment.to_string(),
                e.n_baseline.to_string(),
            ]
        })
        .collect()
}

pub fn invariance_dataset_rows(report: &InvarianceReport) -> Vec<Vec<String>> {
    report
        .per_rm_dataset_anova
        .iter()
        .map(|d| {
            vec![
                d.dataset.to_string(),
                d.rm_id.clone(),
                d.n_questions.to_string(),
                fmt_f(d.anova.eta_squared),
                if d.anova.f_unbounded {
                    "inf".to_string()
                } else {
                    fmt_opt(d.anova.f)
                },
                fmt_f(d.anova.p),
            ]
        })
        .collect()
}

pub fn invariance_direction_rows(report: &InvarianceReport) -> Vec<Vec<String>> {
    report
        .per_rm_direction
        .iter()
        .map(|(rm, direction)| vec![rm.clone(), direction.to_string()])
        .collect()
}

/// MTMM matrix as CSV: lex dimensions down the rows, sem dimensions across
/// the columns.
pub fn mtmm_rows(matrix: &MtmmMatrix) -> (String, Vec<Vec<String>>) {
    let mut header = String::from("lex_dimension");
    for dim in &matrix.dimensions {
        header.push(',');
        header.push_str(&csv_escape(&format!("sem:{dim}")));
    }
    let rows = matrix
        .dimensions
        .iter()
        .enumerate()
        .map(|(i, dim)| {
            let mut row = vec![dim.clone()];
            row.extend(matrix.values[i].iter().map(|v| fmt_opt(*v)));
            row
        })
        .collect();
    (header, rows)
}

// ---------------------------------------------------------------------------
// Matrix emission (csv | json | svg-heatmap)
// ---------------------------------------------------------------------------

/// A labelled numeric matrix, the payload of the heatmap and of generic
/// matrix emission.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LabelledMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl LabelledMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dimension");
        for col in &self.col_labels {
            out.push(',');
            out.push_str(&csv_escape(col));
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            out.push_str(&csv_escape(label));
            for v in row {
                out.push(',');
                out.push_str(&fmt_f(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Output format for `emit_matrix`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Json,
    SvgHeatmap,
}

impl std::str::FromStr for MatrixFormat {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Ok(match s {
            "csv" => MatrixFormat::Csv,
            "json" => MatrixFormat::Json,
            "svg-heatmap" => MatrixFormat::SvgHeatmap,
            other => anyhow::bail!("unknown report format '{other}' (expected csv, json or svg-heatmap)"),
        })
    }
}

/// Render a labelled matrix in the requested format.
pub fn emit_matrix(matrix: &LabelledMatrix, format: MatrixFormat) -> anyhow::Result<String> {
    Ok(match format {
        MatrixFormat::Csv => matrix.to_csv(),
        MatrixFormat::Json => {
            let mut text = serde_json::to_string_pretty(matrix)?;
            text.push('\n');
            text
        }
        MatrixFormat::SvgHeatmap => svg_heatmap(matrix),
    })
}

fn ramp_color(value: f64, max_abs: f64) -> String {
    // Diverging blue-white-red ramp centered at zero.
    let t = if max_abs > 0.0 {
        (value / max_abs).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let (r, g, b) = if t >= 0.0 {
        let s = 1.0 - t;
        (255.0, 255.0 * s, 255.0 * s)
    } else {
        let s = 1.0 + t;
        (255.0 * s, 255.0 * s, 255.0)
    };
    format!("rgb({},{},{})", r.round() as u8, g.round() as u8, b.round() as u8)
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Dimensions x contexts heatmap with a diverging color ramp and numeric
/// cell labels.
pub fn svg_heatmap(matrix: &LabelledMatrix) -> String {
    const CELL_W: usize = 84;
    const CELL_H: usize = 24;
    const LEFT: usize = 190;
    const TOP: usize = 60;

    let n_rows = matrix.row_labels.len();
    let n_cols = matrix.col_labels.len();
    let width = LEFT + n_cols * CELL_W + 20;
    let height = TOP + n_rows * CELL_H + 20;

    let max_abs = matrix
        .values
        .iter()
        .flatten()
        .map(|v| v.abs())
        .fold(0.0f64, f64::max);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"monospace\" font-size=\"11\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));

    for (j, col) in matrix.col_labels.iter().enumerate() {
        let x = LEFT + j * CELL_W + CELL_W / 2;
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            TOP - 10,
            xml_escape(col)
        ));
    }

    for (i, row_label) in matrix.row_labels.iter().enumerate() {
        let y = TOP + i * CELL_H;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            LEFT - 8,
            y + CELL_H / 2 + 4,
            xml_escape(row_label)
        ));
        for (j, &value) in matrix.values[i].iter().enumerate() {
            let x = LEFT + j * CELL_W;
            svg.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL_W}\" height=\"{CELL_H}\" fill=\"{}\" stroke=\"#ccc\"/>\n",
                ramp_color(value, max_abs)
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                x + CELL_W / 2,
                y + CELL_H / 2 + 4,
                format_args!("{value:.2}")
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Mean of `values` grouped into a (row, column) table; used for the fused
/// dimensions-by-contexts heatmap.
pub fn mean_matrix(
    row_labels: &[String],
    col_labels: &[String],
    values: &BTreeMap<(String, String), Vec<f64>>,
) -> LabelledMatrix {
    let matrix = row_labels
        .iter()
        .map(|row| {
            col_labels
                .iter()
                .map(|col| {
                    values
                        .get(&(row.clone(), col.clone()))
                        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                        .unwrap_or(0.0)
                })
                .collect()
        })
        .collect();
    LabelledMatrix {
        row_labels: row_labels.to_vec(),
        col_labels: col_labels.to_vec(),
        values: matrix,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_escaping() {
        assert_eq!(csv_escape("plain"), "plain");
        assert_eq!(csv_escape("a,b"), "\"a,b\"");
        assert_eq!(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn fmt_handles_missing() {
        assert_eq!(fmt_opt(None), "NA");
        assert_eq!(fmt_opt(Some(0.25)), "0.250000");
    }

    #[test]
    fn empty_matrix_is_header_only() {
        let m = LabelledMatrix {
            row_labels: vec![],
            col_labels: vec!["a".into(), "b".into()],
            values: vec![],
        };
        assert_eq!(m.to_csv(), "dimension,a,b\n");
    }

    #[test]
    fn svg_contains_cells_and_labels() {
        let m = LabelledMatrix {
            row_labels: vec!["r1".into(), "r2".into()],
            col_labels: vec!["c1".into(), "c2".into()],
            values: vec![vec![0.25, -0.5], vec![1.0, 0.0]],
        };
        let svg = svg_heatmap(&m);
        // 4 data cells + 1 background rect.
        assert_eq!(svg.matches("<rect").count(), 5);
        for label in ["0.25", "-0.50", "1.00", "0.00", "r1", "r2", "c1", "c2"] {
            assert!(svg.contains(label), "missing {label}");
        }
    }

    #[test]
    fn json_round_trip() {
        let m = LabelledMatrix {
            row_labels: vec!["r".into()],
            col_labels: vec!["c".into()],
            values: vec![vec![0.125]],
        };
        let text = emit_matrix(&m, MatrixFormat::Json).unwrap();
        let back: LabelledMatrix = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn unknown_format_is_an_error() {
        assert!("yaml".parse::<MatrixFormat>().is_err());
        assert!("svg-heatmap".parse::<MatrixFormat>().is_ok());
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp_color(1.0, 1.0), "rgb(255,0,0)");
        assert_eq!(ramp_color(-1.0, 1.0), "rgb(0,0,255)");
        assert_eq!(ramp_color(0.0, 1.0), "rgb(255,255,255)");
    }
}
