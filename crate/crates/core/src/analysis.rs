//! Post-hoc analysis of an exploration run: ranges, power/time rank
//! correlation, the Pareto frontier, and detection of the lowest-EMC
//! latency cluster.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::configspace::ConfigSpace;
use crate::host::{read_csv, CsvError, SampleRecord};

pub const DEFAULT_GAP_THRESHOLD: f64 = 3.0;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("record {sample_id} has no {metric} value")]
    MissingMetric { sample_id: String, metric: &'static str },
    #[error("invalid arguments: {0}")]
    Argument(String),
    #[error("insufficient data: need at least {needed} samples, have {have}")]
    InsufficientData { needed: usize, have: usize },
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmcCutoff {
    pub separated: bool,
    pub gap_s: f64,
    pub cluster_ids: Vec<String>,
    pub all_cluster_lowest_emc: bool,
    pub all_lowest_emc_in_cluster: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub n_samples: usize,
    pub power_range_w: Range,
    pub time_range_s: Range,
    pub spearman_rho: f64,
    pub pareto_ids: Vec<String>,
    pub emc_cutoff: EmcCutoff,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn power_time(r: &SampleRecord) -> Result<(f64, f64), AnalysisError> {
    let missing = |metric| AnalysisError::MissingMetric { sample_id: r.sample_id.clone(), metric };
    Ok((r.power_w.ok_or_else(|| missing("power_w"))?, r.time_s.ok_or_else(|| missing("time_s"))?))
}

/// Sample ids of the records not dominated in (power_w, time_s), in record
/// order. Coincident frontier points are all kept.
pub fn pareto_front(records: &[SampleRecord]) -> Result<Vec<String>, AnalysisError> {
    let points = records.iter().map(power_time).collect::<Result<Vec<_>, _>>()?;
    Ok(pareto_indices(&points).into_iter().map(|i| records[i].sample_id.clone()).collect())
}

/// Indices (ascending) of the non-dominated points of a 2-D minimization
/// problem, by a sort-and-sweep in O(n log n).
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].0.total_cmp(&points[b].0).then(points[a].1.total_cmp(&points[b].1)));

    let mut keep = Vec::new();
    let mut best_y = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        // Group of equal x; sorted by y, so the group minimum comes first.
        let x = points[order[i]].0;
        let mut j = i;
        while j < order.len() && points[order[j]].0 == x {
            j += 1;
        }
        let y_min = points[order[i]].1;
        if y_min < best_y {
            keep.extend(order[i..j].iter().copied().filter(|&k| points[k].1 == y_min));
            best_y = y_min;
        }
        i = j;
    }
    keep.sort_unstable();
    keep
}

/// Average ranks (1-based); tied values share the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::Argument(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(AnalysisError::Argument("need at least two observations".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::Argument("values must be finite".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (dx, dy) = (a - mean, b - mean);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::Argument("correlation undefined for a constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Looks for one dominant gap in the sorted latencies. The run is
/// `separated` when the largest consecutive gap exceeds `threshold` times
/// the median gap; the cluster is everything above that gap. When not
/// separated the cluster is empty and both EMC flags are false.
pub fn emc_cutoff_report(
    records: &[SampleRecord],
    space: &ConfigSpace,
    threshold: f64,
) -> Result<EmcCutoff, AnalysisError> {
    const MIN_RECORDS: usize = 4;
    if records.len() < MIN_RECORDS {
        return Err(AnalysisError::InsufficientData { needed: MIN_RECORDS, have: records.len() });
    }
    if threshold.is_nan() || threshold < 0.0 {
        return Err(AnalysisError::Argument(format!("gap threshold {threshold} must be non-negative")));
    }
    let times = records
        .iter()
        .map(|r| {
            r.time_s.ok_or_else(|| AnalysisError::MissingMetric { sample_id: r.sample_id.clone(), metric: "time_s" })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));

    let gaps: Vec<f64> = order.windows(2).map(|w| times[w[1]] - times[w[0]]).collect();
    let (split, gap) =
        gaps.iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, g)| if g > best.1 { (i, g) } else { best });
    let mut sorted_gaps = gaps.clone();
    sorted_gaps.sort_by(f64::total_cmp);
    let m = sorted_gaps.len();
    let median = if m % 2 == 1 { sorted_gaps[m / 2] } else { (sorted_gaps[m / 2 - 1] + sorted_gaps[m / 2]) / 2.0 };

    let low = &order[..=split];
    let high = &order[split + 1..];
    let separated = gap > threshold * median && !low.is_empty() && !high.is_empty();
    if !separated {
        return Ok(EmcCutoff {
            separated: false,
            gap_s: gap.max(0.0),
            cluster_ids: Vec::new(),
            all_cluster_lowest_emc: false,
            all_lowest_emc_in_cluster: false,
        });
    }

    let lowest_emc = space.param(space.params().len() - 1).min();
    let is_lowest = |i: usize| u64::from(records[i].config.emc_freq_khz) == lowest_emc;
    let in_cluster: HashSet<usize> = high.iter().copied().collect();
    let mut cluster: Vec<usize> = high.to_vec();
    cluster.sort_unstable();
    Ok(EmcCutoff {
        separated: true,
        gap_s: gap,
        cluster_ids: cluster.iter().map(|&i| records[i].sample_id.clone()).collect(),
        all_cluster_lowest_emc: high.iter().all(|&i| is_lowest(i)),
        all_lowest_emc_in_cluster: (0..records.len()).filter(|&i| is_lowest(i)).all(|i| in_cluster.contains(&i)),
    })
}

/// Full report over the successful samples of a run.
pub fn analyze_records(
    records: &[SampleRecord],
    space: &ConfigSpace,
    gap_threshold: f64,
) -> Result<AnalysisReport, AnalysisError> {
    let ok: Vec<SampleRecord> = records.iter().filter(|r| r.is_ok()).cloned().collect();
    if ok.len() < 4 {
        return Err(AnalysisError::InsufficientData { needed: 4, have: ok.len() });
    }
    let points = ok.iter().map(power_time).collect::<Result<Vec<_>, _>>()?;
    let power: Vec<f64> = points.iter().map(|p| p.0).collect();
    let time: Vec<f64> = points.iter().map(|p| p.1).collect();
    let range = |v: &[f64]| Range {
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(AnalysisReport {
        n_samples: ok.len(),
        power_range_w: range(&power),
        time_range_s: range(&time),
        spearman_rho: spearman(&power, &time)?,
        pareto_ids: pareto_front(&ok)?,
        emc_cutoff: emc_cutoff_report(&ok, space, gap_threshold)?,
    })
}

pub fn analyze(csv_path: &Path, gap_threshold: f64) -> Result<(AnalysisReport, Vec<SampleRecord>), AnalysisError> {
    let records = read_csv(csv_path)?;
    let report = analyze_records(&records, &ConfigSpace::orin(), gap_threshold)?;
    Ok((report, records))
}

/// "Nice" tick step covering `span` with roughly `target` intervals.
fn tick_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn axis(lo: f64, hi: f64) -> (f64, f64, f64) {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let step = tick_step(span, 6.0);
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

/// Power (y, W) against time (x, s) scatter with the frontier highlighted.
pub fn render_svg(records: &[SampleRecord], pareto_ids: &[String]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 480.0;
    const ML: f64 = 70.0;
    const MR: f64 = 20.0;
    const MT: f64 = 20.0;
    const MB: f64 = 55.0;
    let pts: Vec<(&SampleRecord, f64, f64)> = records.iter().filter_map(|r| Some((r, r.time_s?, r.power_w?))).collect();
    let frontier: HashSet<&str> = pareto_ids.iter().map(String::as_str).collect();
    let (x0, x1, xs) = axis(
        pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1, ys) = axis(
        pts.iter().map(|p| p.2).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max),
    );
    let px = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{ML}" y1="{}" x2="{}" y2="{}"/><line x1="{ML}" y1="{MT}" x2="{ML}" y2="{}"/></g>"#,
        H - MB,
        W - MR,
        H - MB,
        H - MB
    );
    if pts.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11" fill="black">"#);
    let mut t = x0;
    while t <= x1 + xs * 1e-9 {
        let x = px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{}" stroke="black"/><text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"#,
            H - MB,
            H - MB + 5.0,
            H - MB + 18.0,
            format_tick(t)
        );
        t += xs;
    }
    let mut t = y0;
    while t <= y1 + ys * 1e-9 {
        let y = py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.1}" x2="{ML}" y2="{y:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            ML - 5.0,
            ML - 8.0,
            y + 4.0,
            format_tick(t)
        );
        t += ys;
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">Time (s)</text>"#, (ML + W - MR) / 2.0, H - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">Power (W)</text>"#,
        (MT + H - MB) / 2.0
    );
    s.push_str("</g>\n");
    for (r, x, y) in &pts {
        let on_front = frontier.contains(r.sample_id.as_str());
        let (fill, radius) = if on_front { ("#d62728", 4.0) } else { ("#1f77b4", 2.5) };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{radius}" fill="{fill}"><title>{}</title></circle>"#,
            px(*x),
            py(*y),
            r.sample_id
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub fn write_svg(path: &Path, records: &[SampleRecord], pareto_ids: &[String]) -> Result<(), AnalysisError> {
    fs::write(path, render_svg(records, pareto_ids))
        .map_err(|source| AnalysisError::Io { path: path.display().to_string(), source })
}
