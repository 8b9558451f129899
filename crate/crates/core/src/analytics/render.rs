//! Report bundle: `report.json` plus three static SVG charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AlluvialFlow, AnalyticsError, DisciplineInfluence, FlowDirection, InfluenceTimeline, Result};
use crate::matching::ConfidenceTier;

/// Bumped whenever `report.json` changes shape; see `schemas/`.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const REPORT_JSON: &str = "report.json";
pub const TIMELINE_SVG: &str = "timeline.svg";
pub const DISCIPLINES_SVG: &str = "disciplines.svg";
pub const ALLUVIAL_SVG: &str = "alluvial.svg";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Svg,
    Bundle,
}

impl FromStr for ReportFormat {
    type Err = AnalyticsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            "bundle" => Ok(Self::Bundle),
            other => Err(AnalyticsError::UnsupportedFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub total_matches: f64,
    pub matches_by_tier: BTreeMap<ConfidenceTier, f64>,
    pub origin_weight: f64,
    pub afterlife_weight: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub schema_version: u32,
    pub focus_doc_id: String,
    pub pub_year: i32,
    pub summary: ReportSummary,
    pub timeline: InfluenceTimeline,
    pub disciplines: Vec<DisciplineInfluence>,
    pub flows: Vec<AlluvialFlow>,
}

/// Rendered files keyed by file name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReportBundle {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl ReportBundle {
    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

fn summary(flows: &[AlluvialFlow]) -> ReportSummary {
    let mut by_tier: BTreeMap<ConfidenceTier, f64> = ConfidenceTier::ALL.iter().map(|&t| (t, 0.0)).collect();
    let (mut origin, mut afterlife) = (0.0, 0.0);
    for f in flows {
        *by_tier.entry(f.tier).or_default() += f.weight;
        match f.direction {
            FlowDirection::Origin => origin += f.weight,
            FlowDirection::Afterlife => afterlife += f.weight,
        }
    }
    // Flow weights split 1/k, so totals are rounded back to whole matches.
    by_tier.values_mut().for_each(|v| *v = round6(*v));
    let total = round6(origin + afterlife);
    let message = if total == 0.0 {
        "no matches above the similarity floor".to_string()
    } else {
        format!("{total} matches")
    };
    ReportSummary {
        total_matches: total,
        matches_by_tier: by_tier,
        origin_weight: round6(origin),
        afterlife_weight: round6(afterlife),
        message,
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

pub fn render_report(
    timeline: &InfluenceTimeline,
    table: &[DisciplineInfluence],
    flows: &[AlluvialFlow],
    format: ReportFormat,
) -> Result<ReportBundle> {
    let mut files = BTreeMap::new();
    if matches!(format, ReportFormat::Json | ReportFormat::Bundle) {
        let report = ReportJson {
            schema_version: REPORT_SCHEMA_VERSION,
            focus_doc_id: timeline.focus_doc_id.clone(),
            pub_year: timeline.pub_year,
            summary: summary(flows),
            timeline: timeline.clone(),
            disciplines: table.to_vec(),
            flows: flows.to_vec(),
        };
        let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
        json.push(b'\n');
        files.insert(REPORT_JSON.to_string(), json);
    }
    if matches!(format, ReportFormat::Svg | ReportFormat::Bundle) {
        files.insert(TIMELINE_SVG.to_string(), timeline_svg(timeline).into_bytes());
        files.insert(DISCIPLINES_SVG.to_string(), disciplines_svg(table).into_bytes());
        files.insert(ALLUVIAL_SVG.to_string(), alluvial_svg(timeline, flows).into_bytes());
    }
    Ok(ReportBundle { files })
}

const W: f64 = 800.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;
const FONT: &str = "font-family=\"sans-serif\" font-size=\"12\"";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn open_svg(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{}</text>",
        width / 2.0,
        escape(title)
    );
}

fn empty_note(out: &mut String, width: f64, height: f64, text: &str) {
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT} fill=\"#666666\">{}</text>",
        width / 2.0,
        height / 2.0,
        escape(text)
    );
}

fn tier_color(tier: ConfidenceTier) -> &'static str {
    match tier {
        ConfidenceTier::Direct => "#1b7837",
        ConfidenceTier::Indirect => "#2166ac",
        ConfidenceTier::Speculative => "#b2abd2",
    }
}

fn timeline_svg(t: &InfluenceTimeline) -> String {
    let mut out = String::new();
    open_svg(&mut out, W, H, &format!("Similarity by publication year: {}", t.focus_doc_id));
    if t.points.is_empty() {
        empty_note(&mut out, W, H, "no corpus books");
        out.push_str("</svg>\n");
        return out;
    }
    let first = t.points.first().map_or(t.pub_year, |p| p.year).min(t.pub_year);
    let last = t.points.last().map_or(t.pub_year, |p| p.year).max(t.pub_year);
    let span = (last - first).max(1) as f64;
    let y_max = t
        .points
        .iter()
        .map(|p| p.mean_similarity)
        .fold(t.pre_mean.max(t.post_mean), f64::max)
        .max(1e-9);
    let x = |year: i32| MARGIN + (year - first) as f64 / span * (W - 2.0 * MARGIN);
    let y = |v: f64| H - MARGIN - v / y_max * (H - 2.0 * MARGIN);

    let _ = writeln!(
        out,
        "<g stroke=\"#000000\"><line x1=\"{m:.1}\" y1=\"{b:.1}\" x2=\"{r:.1}\" y2=\"{b:.1}\"/><line x1=\"{m:.1}\" y1=\"{m:.1}\" x2=\"{m:.1}\" y2=\"{b:.1}\"/></g>",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for year in [first, t.pub_year, last] {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{year}</text>",
            x(year),
            H - MARGIN + 18.0
        );
    }
    for v in [0.0, y_max] {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{v:.3}</text>",
            MARGIN - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        out,
        "<line x1=\"{px:.1}\" y1=\"{:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#999999\" stroke-dasharray=\"4 4\"/>",
        MARGIN,
        H - MARGIN,
        px = x(t.pub_year)
    );

    let path: Vec<String> = t.points.iter().map(|p| format!("{:.1},{:.1}", x(p.year), y(p.mean_similarity))).collect();
    let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"#444444\" points=\"{}\"/>", path.join(" "));
    for p in &t.points {
        let _ = writeln!(
            out,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"#444444\"><title>{}: {:.4} ({} books, {} matches)</title></circle>",
            x(p.year),
            y(p.mean_similarity),
            p.year,
            p.mean_similarity,
            p.book_count,
            p.match_count
        );
    }
    let rules = [
        (first, t.pub_year, t.pre_mean, "#d6604d", "pre"),
        (t.pub_year, last, t.post_mean, "#4393c3", "post"),
    ];
    for (from, to, v, color, label) in rules {
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{yy:.1}\" x2=\"{:.1}\" y2=\"{yy:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            x(from),
            x(to),
            yy = y(v)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} fill=\"{color}\">{label} mean {v:.4}</text>",
            x(from) + 4.0,
            y(v) - 6.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn disciplines_svg(table: &[DisciplineInfluence]) -> String {
    let row_h = 26.0;
    let label_w = 180.0;
    let height = 60.0 + row_h * table.len().max(1) as f64 + 20.0;
    let mut out = String::new();
    open_svg(&mut out, W, height, "Influenced post-publication books by discipline");
    if table.is_empty() {
        empty_note(&mut out, W, height, "no disciplines");
        out.push_str("</svg>\n");
        return out;
    }
    let bar_w = W - label_w - 2.0 * MARGIN;
    for (i, row) in table.iter().enumerate() {
        let top = 50.0 + i as f64 * row_h;
        let len = row.percent / 100.0 * bar_w;
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>",
            MARGIN + label_w - 8.0,
            top + 15.0,
            escape(&row.discipline)
        );
        let _ = writeln!(
            out,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{len:.1}\" height=\"{:.1}\" fill=\"#4393c3\"/>",
            MARGIN + label_w,
            top + 3.0,
            row_h - 6.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" {FONT}>{:.1}% ({}/{})</text>",
            MARGIN + label_w + len + 6.0,
            top + 15.0,
            row.percent,
            row.influenced_books,
            row.eligible_books
        );
    }
    out.push_str("</svg>\n");
    out
}

fn alluvial_svg(t: &InfluenceTimeline, flows: &[AlluvialFlow]) -> String {
    let mut out = String::new();
    open_svg(&mut out, W, H, &format!("Origins and afterlives: {}", t.focus_doc_id));
    let total: f64 = flows.iter().map(|f| f.weight).sum();
    if total <= 0.0 {
        empty_note(&mut out, W, H, "no matches");
        out.push_str("</svg>\n");
        return out;
    }

    let side_total = |d: FlowDirection| flows.iter().filter(|f| f.direction == d).map(|f| f.weight).sum::<f64>();
    let (origin_total, after_total) = (side_total(FlowDirection::Origin), side_total(FlowDirection::Afterlife));
    let gap = 8.0;
    let avail = H - 2.0 * MARGIN;
    let max_nodes = [FlowDirection::Origin, FlowDirection::Afterlife]
        .iter()
        .map(|&d| {
            let mut names: Vec<&str> = flows.iter().filter(|f| f.direction == d).map(|f| f.discipline.as_str()).collect();
            names.dedup();
            names.len()
        })
        .max()
        .unwrap_or(1);
    let scale = (avail - gap * max_nodes.saturating_sub(1) as f64) / origin_total.max(after_total);
    let node_w = 14.0;
    let (left_x, center_x, right_x) = (MARGIN + 110.0, W / 2.0 - node_w / 2.0, W - MARGIN - 110.0 - node_w);

    let center_h = origin_total.max(after_total) * scale;
    let center_top = MARGIN + (avail - center_h) / 2.0;
    let _ = writeln!(
        out,
        "<rect x=\"{center_x:.1}\" y=\"{center_top:.1}\" width=\"{node_w:.1}\" height=\"{center_h:.1}\" fill=\"#333333\"><title>{}</title></rect>",
        escape(&t.focus_doc_id)
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{} ({})</text>",
        center_x + node_w / 2.0,
        center_top - 8.0,
        escape(&t.focus_doc_id),
        t.pub_year
    );

    for (direction, node_x) in [(FlowDirection::Origin, left_x), (FlowDirection::Afterlife, right_x)] {
        let side: Vec<&AlluvialFlow> = flows.iter().filter(|f| f.direction == direction).collect();
        let side_total: f64 = side.iter().map(|f| f.weight).sum();
        // Flows arrive sorted by (direction, discipline, tier).
        let mut nodes: Vec<(&str, Vec<&AlluvialFlow>)> = Vec::new();
        for f in side {
            match nodes.last_mut() {
                Some((name, group)) if *name == f.discipline => group.push(f),
                _ => nodes.push((&f.discipline, vec![f])),
            }
        }
        let nodes_h = side_total * scale + gap * nodes.len().saturating_sub(1) as f64;
        let mut y = MARGIN + (avail - nodes_h) / 2.0;
        let mut center_y = center_top + (center_h - side_total * scale) / 2.0;
        let (anchor, label_x) = match direction {
            FlowDirection::Origin => ("end", node_x - 6.0),
            FlowDirection::Afterlife => ("start", node_x + node_w + 6.0),
        };
        for (name, group) in nodes {
            let weight: f64 = group.iter().map(|f| f.weight).sum();
            let h = weight * scale;
            let _ = writeln!(
                out,
                "<rect x=\"{node_x:.1}\" y=\"{y:.1}\" width=\"{node_w:.1}\" height=\"{h:.1}\" fill=\"#777777\"/>"
            );
            let _ = writeln!(
                out,
                "<text x=\"{label_x:.1}\" y=\"{:.1}\" text-anchor=\"{anchor}\" {FONT}>{} ({weight:.2})</text>",
                y + h / 2.0 + 4.0,
                escape(name)
            );
            let mut band_y = y;
            for f in group {
                let bh = f.weight * scale;
                let (x0, y0, x1, y1) = match direction {
                    FlowDirection::Origin => (node_x + node_w, band_y, center_x, center_y),
                    FlowDirection::Afterlife => (center_x + node_w, center_y, node_x, band_y),
                };
                let mid = (x0 + x1) / 2.0;
                let _ = writeln!(
                    out,
                    "<path d=\"M{x0:.1},{y0:.1} C{mid:.1},{y0:.1} {mid:.1},{y1:.1} {x1:.1},{y1:.1} L{x1:.1},{:.1} C{mid:.1},{:.1} {mid:.1},{:.1} {x0:.1},{:.1} Z\" fill=\"{}\" fill-opacity=\"0.6\"><title>{} {} {}: {:.2}</title></path>",
                    y1 + bh,
                    y1 + bh,
                    y0 + bh,
                    y0 + bh,
                    tier_color(f.tier),
                    match direction {
                        FlowDirection::Origin => "origin",
                        FlowDirection::Afterlife => "afterlife",
                    },
                    escape(&f.discipline),
                    f.tier.as_str(),
                    f.weight
                );
                band_y += bh;
                center_y += bh;
            }
            y += h + gap;
        }
    }
    for (i, tier) in ConfidenceTier::ALL.iter().enumerate() {
        let lx = MARGIN + i as f64 * 120.0;
        let _ = writeln!(
            out,
            "<rect x=\"{lx:.1}\" y=\"{:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\" {FONT}>{}</text>",
            H - 30.0,
            tier_color(*tier),
            lx + 18.0,
            H - 20.0,
            tier.as_str()
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::super::tests::{book, record, set};
    use super::super::*;
    use super::*;

    fn fixture() -> (InfluenceTimeline, Vec<DisciplineInfluence>, Vec<AlluvialFlow>) {
        let reg = crate::corpus::DEFAULT_DISCIPLINES.iter().map(|s| s.to_string()).collect();
        let meta = CorpusMeta::new(
            [
                book("focus", 1859, &["natural_history"], false),
                book("early", 1830, &["geology"], false),
                book("late", 1871, &["geology", "natural_history"], true),
            ],
            reg,
        );
        let s = set(vec![
            record(&meta, "early", 0, 0.91),
            record(&meta, "late", 1, 0.97),
            record(&meta, "late", 2, 0.86),
        ]);
        (
            build_timeline(&s, &meta, 1859, SimilarityStatistic::Mean).unwrap(),
            discipline_table(&s, &meta, 1859, 1),
            alluvial_flows(&s, 1859),
        )
    }

    #[test]
    fn rendering_is_byte_stable() {
        let (t, d, f) = fixture();
        let a = render_report(&t, &d, &f, ReportFormat::Bundle).unwrap();
        let b = render_report(&t, &d, &f, ReportFormat::Bundle).unwrap();
        assert_eq!(a, b);
        let names: Vec<&str> = a.files.keys().map(String::as_str).collect();
        assert_eq!(names, vec![ALLUVIAL_SVG, DISCIPLINES_SVG, REPORT_JSON, TIMELINE_SVG]);
        for (name, bytes) in &a.files {
            if name.ends_with(".svg") {
                let text = std::str::from_utf8(bytes).unwrap();
                assert!(text.starts_with("<svg") && text.ends_with("</svg>\n"));
            }
        }
    }

    #[test]
    fn json_round_trips_and_counts() {
        let (t, d, f) = fixture();
        let bundle = render_report(&t, &d, &f, ReportFormat::Json).unwrap();
        assert_eq!(bundle.files.len(), 1);
        let report: ReportJson = serde_json::from_slice(bundle.get(REPORT_JSON).unwrap()).unwrap();
        assert_eq!(report.schema_version, REPORT_SCHEMA_VERSION);
        assert_eq!(report.summary.total_matches, 3.0);
        assert_eq!(report.summary.origin_weight, 1.0);
        assert_eq!(report.summary.matches_by_tier[&ConfidenceTier::Direct], 1.0);
        assert_eq!(report.timeline, t);
    }

    #[test]
    fn empty_report_states_zero_matches() {
        let (mut t, d, _) = fixture();
        t.points.iter_mut().for_each(|p| p.mean_similarity = 0.0);
        let bundle = render_report(&t, &d, &[], ReportFormat::Bundle).unwrap();
        let report: ReportJson = serde_json::from_slice(bundle.get(REPORT_JSON).unwrap()).unwrap();
        assert_eq!(report.summary.total_matches, 0.0);
        assert!(report.summary.message.contains("no matches"));
        let svg = std::str::from_utf8(bundle.get(ALLUVIAL_SVG).unwrap()).unwrap();
        assert!(svg.contains("no matches"));
    }

    #[test]
    fn unknown_format_is_rejected() {
        assert!(matches!("pdf".parse::<ReportFormat>(), Err(AnalyticsError::UnsupportedFormat(f)) if f == "pdf"));
        assert_eq!("bundle".parse::<ReportFormat>().unwrap(), ReportFormat::Bundle);
    }

    #[test]
    fn labels_are_escaped() {
        let (mut t, d, f) = fixture();
        t.focus_doc_id = "a<b>&c".into();
        let svg = String::from_utf8(render_report(&t, &d, &f, ReportFormat::Svg).unwrap().files[TIMELINE_SVG].clone()).unwrap();
        assert!(svg.contains("a&lt;b&gt;&amp;c"));
    }
}
