//! Self-contained HTML report (static SVG cluster graph) and CSV exports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::cluster::{components, ClusterGraph};
use crate::image::GrayImage;
use crate::matching::SimilarityRecord;

pub const MEMBERSHIP_FILE: &str = "membership.csv";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const REPORT_FILE: &str = "report.html";

pub const MIN_STROKE: f64 = 1.0;
pub const MAX_STROKE: f64 = 8.0;
pub const THUMBNAIL_MAX_WIDTH: usize = 128;

const NODE_SPACING: f64 = 70.0;
const CELL_PADDING: f64 = 30.0;
const CANVAS_TARGET_WIDTH: f64 = 1100.0;
const LAYOUT_ITERATIONS: usize = 150;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn overlaps(&self, o: &Rect) -> bool {
        self.x < o.x + o.w && o.x < self.x + self.w && self.y < o.y + o.h && o.y < self.y + self.h
    }

    pub fn contains(&self, (x, y): (f64, f64)) -> bool {
        x >= self.x && x <= self.x + self.w && y >= self.y && y <= self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub positions: BTreeMap<String, (f64, f64)>,
    /// One cell per cluster, in cluster order.
    pub cells: Vec<(String, Rect)>,
    pub width: f64,
    pub height: f64,
}

fn cluster_rng(seed: u64, cluster_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(cluster_id.as_bytes());
    let digest = h.finalize();
    ChaCha8Rng::from_seed(digest.into())
}

/// Fruchterman–Reingold inside a `side × side` square.
fn force_layout(
    n: usize,
    edges: &[(usize, usize)],
    side: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(f64, f64)> {
    if n == 1 {
        return vec![(side / 2.0, side / 2.0)];
    }
    let mut pos: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.gen_range(0.2..0.8) * side, rng.gen_range(0.2..0.8) * side))
        .collect();
    let k = (side * side / n as f64).sqrt() * 0.6;
    let margin = CELL_PADDING * 0.5;
    for it in 0..LAYOUT_ITERATIONS {
        let temp = side * 0.1 * (1.0 - it as f64 / LAYOUT_ITERATIONS as f64) + 0.5;
        let mut disp = vec![(0.0f64, 0.0f64); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (dx, dy) = (pos[i].0 - pos[j].0, pos[i].1 - pos[j].1);
                let d = dx.hypot(dy).max(0.01);
                let f = k * k / d;
                disp[i].0 += dx / d * f;
                disp[i].1 += dy / d * f;
            }
        }
        for &(a, b) in edges {
            let (dx, dy) = (pos[a].0 - pos[b].0, pos[a].1 - pos[b].1);
            let d = dx.hypot(dy).max(0.01);
            let f = d * d / k;
            disp[a].0 -= dx / d * f;
            disp[a].1 -= dy / d * f;
            disp[b].0 += dx / d * f;
            disp[b].1 += dy / d * f;
        }
        for (p, d) in pos.iter_mut().zip(&disp) {
            let len = d.0.hypot(d.1).max(1e-9);
            let step = len.min(temp);
            p.0 = (p.0 + d.0 / len * step).clamp(margin, side - margin);
            p.1 = (p.1 + d.1 / len * step).clamp(margin, side - margin);
        }
    }
    pos
}

/// Seeded force-directed layout per cluster; cluster cells are packed in
/// rows, left to right, with padding between them.
pub fn layout_graph(graph: &ClusterGraph, seed: u64) -> Layout {
    let mut positions = BTreeMap::new();
    let mut cells = Vec::new();
    let (mut cx, mut cy, mut row_h, mut width) = (CELL_PADDING, CELL_PADDING, 0f64, 0f64);
    for c in components(graph) {
        let n = c.members.len();
        let side = NODE_SPACING * (n as f64).sqrt().ceil() + CELL_PADDING;
        if cx > CELL_PADDING && cx + side > CANVAS_TARGET_WIDTH {
            cx = CELL_PADDING;
            cy += row_h + CELL_PADDING;
            row_h = 0.0;
        }
        let index: BTreeMap<&str, usize> =
            c.members.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
        let edges: Vec<(usize, usize)> = c
            .edges
            .iter()
            .map(|e| (index[e.a.as_str()], index[e.b.as_str()]))
            .collect();
        let local = force_layout(n, &edges, side, &mut cluster_rng(seed, &c.cluster_id));
        for (m, (x, y)) in c.members.iter().zip(local) {
            positions.insert(m.clone(), (cx + x, cy + y));
        }
        cells.push((
            c.cluster_id.clone(),
            Rect {
                x: cx,
                y: cy,
                w: side,
                h: side,
            },
        ));
        cx += side + CELL_PADDING;
        width = width.max(cx);
        row_h = row_h.max(side);
    }
    Layout {
        positions,
        cells,
        width: width.max(2.0 * CELL_PADDING),
        height: cy + row_h + CELL_PADDING,
    }
}

/// Stroke width for an edge score; `s_max` is the largest rendered score.
pub fn stroke_width(score: f64, threshold: f64, s_max: f64) -> f64 {
    if s_max <= threshold {
        return MAX_STROKE;
    }
    let t = ((score - threshold) / (s_max - threshold)).clamp(0.0, 1.0);
    MIN_STROKE + (MAX_STROKE - MIN_STROKE) * t
}

#[derive(Debug, Clone, Default)]
pub struct ReportMetadata {
    pub title: String,
    /// sequence_id → camera_location_id.
    pub locations: BTreeMap<String, String>,
    /// Free-form key/value lines shown under the title.
    pub notes: Vec<(String, String)>,
}

impl ReportMetadata {
    fn same_location(&self, a: &str, b: &str) -> bool {
        match (self.locations.get(a), self.locations.get(b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Downscales to at most 128 px wide and encodes as PNG.
pub fn thumbnail_png(img: &GrayImage) -> Vec<u8> {
    if img.width() <= THUMBNAIL_MAX_WIDTH {
        return img.encode_png();
    }
    let s = img.width() as f32 / THUMBNAIL_MAX_WIDTH as f32;
    let h = ((img.height() as f32 / s).round() as usize).max(1);
    GrayImage::from_fn(THUMBNAIL_MAX_WIDTH, h, |x, y| {
        img.sample_bilinear((x as f32 + 0.5) * s - 0.5, (y as f32 + 0.5) * s - 0.5)
    })
    .encode_png()
}

/// Renders the report. `thumbnails` maps sequence ids to crops, which are
/// embedded as inline PNG data.
pub fn render_html(
    graph: &ClusterGraph,
    layout: &Layout,
    meta: &ReportMetadata,
    thumbnails: Option<&BTreeMap<String, GrayImage>>,
) -> String {
    let clusters = components(graph);
    let n_multi = clusters.iter().filter(|c| c.members.len() > 1).count();
    let edges = graph.edge_list();
    let s_max = edges.iter().map(|e| e.score).fold(graph.threshold, f64::max);
    let mut h = String::new();
    let title = if meta.title.is_empty() { "Cluster report" } else { &meta.title };
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\"/>\n<title>{}</title>\n<style>\n\
body {{ font-family: sans-serif; margin: 1.5em; color: #222; }}\n\
table {{ border-collapse: collapse; margin: 1em 0; }}\n\
td, th {{ border: 1px solid #bbb; padding: 2px 8px; text-align: left; }}\n\
.cell {{ fill: #f6f6f6; stroke: #ccc; }}\n\
.edge {{ stroke: #335; stroke-opacity: 0.75; }}\n\
.edge.same-location {{ stroke: #b33; stroke-dasharray: 6 4; }}\n\
.conflict {{ stroke: #999; stroke-width: 1; stroke-dasharray: 2 3; }}\n\
.conflict.same-location {{ stroke: #b33; stroke-dasharray: 6 4; }}\n\
.node {{ fill: #fff; stroke: #335; stroke-width: 1.5; }}\n\
.label {{ font-size: 11px; text-anchor: middle; }}\n\
.loc {{ font-size: 9px; fill: #666; text-anchor: middle; }}\n\
</style>\n</head>\n<body>\n",
        escape(title)
    );
    let _ = writeln!(h, "<h1>{}</h1>", escape(title));
    let _ = writeln!(
        h,
        "<p class=\"summary\">{} clusters ({} with more than one video), {} videos, {} matches, {} conflicts, threshold {}</p>",
        clusters.len(),
        n_multi,
        graph.nodes.len(),
        edges.len(),
        graph.conflicts.len(),
        graph.threshold
    );
    if !meta.notes.is_empty() {
        h.push_str("<table class=\"notes\">\n");
        for (k, v) in &meta.notes {
            let _ = writeln!(h, "<tr><th>{}</th><td>{}</td></tr>", escape(k), escape(v));
        }
        h.push_str("</table>\n");
    }
    h.push_str("<p>Edge width grows with similarity. Dashed red edges join videos from the same camera location and may be background matches. Dotted lines are conflicts: pairs above the threshold that the clustering did not keep.</p>\n");

    let _ = writeln!(
        h,
        "<svg class=\"graph\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"0 0 {:.1} {:.1}\">",
        layout.width, layout.height, layout.width, layout.height
    );
    for c in &clusters {
        let _ = writeln!(h, "<g class=\"cluster\" id=\"cluster-{}\">", escape(&c.cluster_id));
        if let Some((_, r)) = layout.cells.iter().find(|(id, _)| *id == c.cluster_id) {
            let _ = writeln!(
                h,
                "<rect class=\"cell\" x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" rx=\"6\"/>",
                r.x, r.y, r.w, r.h
            );
        }
        for e in &c.edges {
            let (pa, pb) = (layout.positions[&e.a], layout.positions[&e.b]);
            let same = meta.same_location(&e.a, &e.b);
            let _ = writeln!(
                h,
                "<line class=\"edge{}\" data-a=\"{}\" data-b=\"{}\" data-score=\"{}\" x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke-width=\"{:.3}\"><title>{} - {}: {:.4}</title></line>",
                if same { " same-location" } else { "" },
                escape(&e.a),
                escape(&e.b),
                e.score,
                pa.0,
                pa.1,
                pb.0,
                pb.1,
                stroke_width(e.score, graph.threshold, s_max),
                escape(&e.a),
                escape(&e.b),
                e.score
            );
        }
        for m in &c.members {
            let (x, y) = layout.positions[m];
            let loc = meta.locations.get(m).map(String::as_str).unwrap_or("");
            let _ = writeln!(
                h,
                "<circle class=\"node\" cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"9\"/><text class=\"label\" x=\"{x:.1}\" y=\"{:.1}\">{}</text><text class=\"loc\" x=\"{x:.1}\" y=\"{:.1}\">{}</text>",
                y - 13.0,
                escape(m),
                y + 21.0,
                escape(loc)
            );
        }
        h.push_str("</g>\n");
    }
    if !graph.conflicts.is_empty() {
        h.push_str("<g class=\"conflict-lines\">\n");
        for e in &graph.conflicts {
            let (pa, pb) = (layout.positions[&e.a], layout.positions[&e.b]);
            let _ = writeln!(
                h,
                "<line class=\"conflict{}\" data-a=\"{}\" data-b=\"{}\" data-score=\"{}\" x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\"><title>{} - {}: {:.4}</title></line>",
                if meta.same_location(&e.a, &e.b) { " same-location" } else { "" },
                escape(&e.a),
                escape(&e.b),
                e.score,
                pa.0,
                pa.1,
                pb.0,
                pb.1,
                escape(&e.a),
                escape(&e.b),
                e.score
            );
        }
        h.push_str("</g>\n");
    }
    h.push_str("</svg>\n");

    h.push_str("<h2>Clusters</h2>\n<table class=\"clusters\">\n<tr><th>cluster</th><th>members</th><th>edges</th></tr>\n");
    for c in &clusters {
        let _ = writeln!(
            h,
            "<tr><td>{}</td><td>{}</td><td>{}</td></tr>",
            escape(&c.cluster_id),
            escape(&c.members.join(", ")),
            c.edges.len()
        );
    }
    h.push_str("</table>\n");

    h.push_str("<h2>Conflicts</h2>\n");
    if graph.conflicts.is_empty() {
        h.push_str("<p>none</p>\n");
    } else {
        h.push_str("<table class=\"conflicts\">\n<tr><th>video a</th><th>video b</th><th>score</th><th>same location</th></tr>\n");
        for e in &graph.conflicts {
            let _ = writeln!(
                h,
                "<tr><td>{}</td><td>{}</td><td>{:.4}</td><td>{}</td></tr>",
                escape(&e.a),
                escape(&e.b),
                e.score,
                meta.same_location(&e.a, &e.b)
            );
        }
        h.push_str("</table>\n");
    }

    if let Some(thumbs) = thumbnails.filter(|t| !t.is_empty()) {
        h.push_str("<h2>Best frames</h2>\n<table class=\"thumbnails\">\n");
        let b64 = base64::engine::general_purpose::STANDARD;
        for (id, img) in thumbs {
            let _ = writeln!(
                h,
                "<tr><td>{}</td><td><img alt=\"{}\" src=\"data:image/png;base64,{}\"/></td></tr>",
                escape(id),
                escape(id),
                b64.encode(thumbnail_png(img))
            );
        }
        h.push_str("</table>\n");
    }
    h.push_str("</body>\n</html>\n");
    h
}

pub const MEMBERSHIP_COLUMNS: [&str; 4] =
    ["sequence_id", "cluster_id", "cluster_size", "camera_location_id"];
pub const PAIRS_COLUMNS: [&str; 7] = [
    "video_a",
    "video_b",
    "score",
    "same_camera_location",
    "matched",
    "same_cluster",
    "conflict",
];

/// `(membership.csv, pairs.csv)` contents. Membership rows are ordered by
/// cluster then member; pair rows by `(video_a, video_b)`.
pub fn export_tables(
    graph: &ClusterGraph,
    records: &[SimilarityRecord],
    meta: &ReportMetadata,
) -> (String, String) {
    let clusters = components(graph);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MEMBERSHIP_COLUMNS).expect("in-memory write");
    let mut cluster_of = BTreeMap::new();
    for c in &clusters {
        for m in &c.members {
            cluster_of.insert(m.as_str(), c.cluster_id.as_str());
            let loc = meta.locations.get(m).map(String::as_str).unwrap_or("");
            w.write_record([m.as_str(), &c.cluster_id, &c.members.len().to_string(), loc])
                .expect("in-memory write");
        }
    }
    let membership = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");

    let conflicts: BTreeSet<(&str, &str)> = graph
        .conflicts
        .iter()
        .map(|e| (e.a.as_str(), e.b.as_str()))
        .collect();
    let mut recs: Vec<&SimilarityRecord> = records.iter().collect();
    recs.sort_by(|a, b| (&a.video_a, &a.video_b).cmp(&(&b.video_a, &b.video_b)));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PAIRS_COLUMNS).expect("in-memory write");
    for r in recs {
        let (a, b) = (r.video_a.as_str(), r.video_b.as_str());
        let matched = graph.edges.contains_key(&(r.video_a.clone(), r.video_b.clone()));
        let same_cluster = cluster_of.contains_key(a) && cluster_of.get(a) == cluster_of.get(b);
        w.write_record([
            a,
            b,
            &crate::store::format_significant(r.score, 9),
            &r.same_camera_location.to_string(),
            &matched.to_string(),
            &same_cluster.to_string(),
            &conflicts.contains(&(a, b)).to_string(),
        ])
        .expect("in-memory write");
    }
    let pairs = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
    (membership, pairs)
}

/// Partition encoded in a membership table, as sorted member lists.
pub fn parse_membership(csv_text: &str) -> Result<BTreeSet<Vec<String>>, csv::Error> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let mut by_cluster: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        by_cluster
            .entry(row[1].to_string())
            .or_default()
            .push(row[0].to_string());
    }
    Ok(by_cluster
        .into_values()
        .map(|mut v| {
            v.sort();
            v
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{build_clusters, Edge};
    use proptest::prelude::*;

    fn rec(a: &str, b: &str, score: f64, same: bool) -> SimilarityRecord {
        let e = Edge::new(a, b, score);
        SimilarityRecord {
            video_a: e.a,
            video_b: e.b,
            score,
            best_frame_pair: (0, 0),
            n_contributing_matches: 1,
            same_camera_location: same,
        }
    }

    fn fig5_records() -> Vec<SimilarityRecord> {
        vec![
            rec("0", "1", 0.9, false),
            rec("1", "2", 0.8, false),
            rec("2", "5", 0.7, false),
            rec("5", "8", 0.65, true),
            rec("3", "4", 0.95, false),
            rec("4", "6", 0.85, false),
            rec("6", "7", 0.62, false),
            rec("3", "9", 0.1, false),
            rec("2", "6", 0.61, false),
        ]
    }

    fn fig5_meta() -> ReportMetadata {
        let mut m = ReportMetadata::default();
        for i in 0..10 {
            let loc = if i == 5 || i == 8 { "camA".to_string() } else { format!("cam{i}") };
            m.locations.insert(i.to_string(), loc);
        }
        m
    }

    fn parse(html: &str) -> roxmltree::Document<'_> {
        let opts = roxmltree::ParsingOptions {
            allow_dtd: true,
            ..Default::default()
        };
        roxmltree::Document::parse_with_options(html, opts).expect("well-formed")
    }

    #[test]
    fn single_node_is_centered() {
        let mut g = ClusterGraph::new(0.5);
        g.add_node("a");
        let l = layout_graph(&g, 1);
        let (_, r) = l.cells[0];
        assert_eq!(l.positions["a"], (r.x + r.w / 2.0, r.y + r.h / 2.0));
    }

    #[test]
    fn cells_do_not_overlap_and_contain_members() {
        let g = build_clusters(&fig5_records(), 0.6);
        let l = layout_graph(&g, 7);
        for (i, (_, a)) in l.cells.iter().enumerate() {
            for (_, b) in &l.cells[i + 1..] {
                assert!(!a.overlaps(b));
            }
        }
        for c in components(&g) {
            let rect = l.cells.iter().find(|(id, _)| *id == c.cluster_id).unwrap().1;
            for m in &c.members {
                assert!(rect.contains(l.positions[m]));
            }
        }
        assert_eq!(layout_graph(&g, 7), l);
    }

    #[test]
    fn two_singletons_get_separate_cells() {
        let mut g = ClusterGraph::new(0.5);
        g.add_node("a");
        g.add_node("b");
        let l = layout_graph(&g, 3);
        assert_eq!(l.cells.len(), 2);
        assert!(!l.cells[0].1.overlaps(&l.cells[1].1));
    }

    #[test]
    fn many_clusters_wrap_rows_without_overlap() {
        let mut g = ClusterGraph::new(0.5);
        for i in 0..60 {
            g.add_node(&format!("n{i:02}"));
        }
        for i in 0..20 {
            g.sequential_insert(&Edge::new(&format!("n{:02}", 3 * i), &format!("n{:02}", 3 * i + 1), 0.9));
        }
        let l = layout_graph(&g, 0);
        for (i, (_, a)) in l.cells.iter().enumerate() {
            assert!(a.x + a.w <= l.width + 1e-9 && a.y + a.h <= l.height + 1e-9);
            for (_, b) in &l.cells[i + 1..] {
                assert!(!a.overlaps(b));
            }
        }
    }

    #[test]
    fn stroke_width_formula() {
        assert_eq!(stroke_width(0.5, 0.5, 1.0), MIN_STROKE);
        assert_eq!(stroke_width(1.0, 0.5, 1.0), MAX_STROKE);
        assert!((stroke_width(0.75, 0.5, 1.0) - 4.5).abs() < 1e-12);
        assert_eq!(stroke_width(0.5, 0.5, 0.5), MAX_STROKE);
    }

    proptest! {
        #[test]
        fn stroke_width_monotone(t in 0.0f64..5.0, mut s in proptest::collection::vec(0.0f64..10.0, 2..30)) {
            s.iter_mut().for_each(|v| *v += t);
            let s_max = s.iter().copied().fold(t, f64::max);
            s.sort_by(f64::total_cmp);
            let w: Vec<f64> = s.iter().map(|&v| stroke_width(v, t, s_max)).collect();
            prop_assert!(w.windows(2).all(|p| p[0] <= p[1]));
            prop_assert!(w.iter().all(|&v| (MIN_STROKE..=MAX_STROKE).contains(&v)));
        }
    }

    #[test]
    fn empty_graph_renders() {
        let g = ClusterGraph::new(1.0);
        let html = render_html(&g, &layout_graph(&g, 0), &ReportMetadata::default(), None);
        assert!(html.contains("0 clusters"));
        parse(&html);
    }

    #[test]
    fn fig5_render() {
        let g = build_clusters(&fig5_records(), 0.6);
        let meta = fig5_meta();
        let mut thumbs = BTreeMap::new();
        thumbs.insert("3".to_string(), GrayImage::from_fn(300, 200, |x, y| ((x ^ y) & 255) as f32 / 255.0));
        let html = render_html(&g, &layout_graph(&g, 1), &meta, Some(&thumbs));
        let doc = parse(&html);
        let groups: Vec<_> = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("cluster"))
            .collect();
        assert_eq!(groups.len(), 3);
        let singles = groups
            .iter()
            .filter(|g| g.children().filter(|c| c.has_tag_name("circle")).count() == 1)
            .count();
        assert_eq!(singles, 1);
        let mut lines: Vec<(f64, f64, bool)> = doc
            .descendants()
            .filter(|n| n.has_tag_name("line") && n.attribute("class").unwrap().starts_with("edge"))
            .map(|n| {
                (
                    n.attribute("data-score").unwrap().parse().unwrap(),
                    n.attribute("stroke-width").unwrap().parse().unwrap(),
                    n.attribute("class").unwrap().contains("same-location"),
                )
            })
            .collect();
        assert_eq!(lines.len(), 7);
        lines.sort_by(|a, b| a.0.total_cmp(&b.0));
        for p in lines.windows(2) {
            assert!(p[0].1 <= p[1].1);
        }
        for (s, w, same) in &lines {
            assert!((w - stroke_width(*s, 0.6, 0.95)).abs() < 1e-3);
            assert_eq!(*same, *s == 0.65);
        }
        let conflicts = doc
            .descendants()
            .find(|n| n.attribute("class") == Some("conflicts"))
            .unwrap();
        assert_eq!(conflicts.children().filter(|c| c.has_tag_name("tr")).count(), 2);
        let drawn: Vec<_> = doc
            .descendants()
            .filter(|n| n.attribute("class").is_some_and(|c| c.starts_with("conflict ") || c == "conflict"))
            .map(|n| (n.attribute("data-a").unwrap(), n.attribute("data-b").unwrap()))
            .collect();
        assert_eq!(drawn, vec![("2", "6")]);
        assert!(!html.contains("http://") && !html.contains("https://"));
        let img = doc.descendants().find(|n| n.has_tag_name("img")).unwrap();
        let src = img.attribute("src").unwrap();
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(src.strip_prefix("data:image/png;base64,").unwrap())
            .unwrap();
        assert_eq!(crate::image::decode_bytes(&bytes).unwrap().width(), 128);
    }

    #[test]
    fn labels_are_escaped() {
        let mut g = ClusterGraph::new(0.5);
        g.sequential_insert(&Edge::new("a<&>", "b\"'", 0.9));
        let html = render_html(&g, &layout_graph(&g, 0), &ReportMetadata::default(), None);
        parse(&html);
    }

    #[test]
    fn tables() {
        let recs = fig5_records();
        let g = build_clusters(&recs, 0.6);
        let (membership, pairs) = export_tables(&g, &recs, &fig5_meta());
        assert_eq!(membership.lines().count(), 11);
        assert_eq!(parse_membership(&membership).unwrap(), g.partition());
        let mut rdr = csv::Reader::from_reader(pairs.as_bytes());
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), recs.len());
        for row in &rows {
            let same = &row[3] == "true";
            let expect = (&row[0], &row[1]) == ("5", "8");
            assert_eq!(same, expect);
        }
        let conflict_rows: Vec<_> = rows.iter().filter(|r| &r[6] == "true").collect();
        assert_eq!(conflict_rows.len(), 1);
        assert_eq!((&conflict_rows[0][0], &conflict_rows[0][1]), ("2", "6"));
        let keys: Vec<(String, String)> = rows.iter().map(|r| (r[0].to_string(), r[1].to_string())).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn sizes_two_two_one() {
        let recs = vec![rec("a", "b", 0.9, false), rec("c", "d", 0.8, false), rec("a", "e", 0.1, false)];
        let g = build_clusters(&recs, 0.5);
        let (membership, _) = export_tables(&g, &recs, &ReportMetadata::default());
        assert_eq!(membership.lines().count(), 6);
    }
}
