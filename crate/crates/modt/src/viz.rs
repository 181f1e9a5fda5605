//! SVG rendering of 2D gating regions with overlaid data points, and of
//! individual expert trees with class-distribution leaves.
//!
//! Region colors are low-saturation so the high-saturation class markers
//! stay visible on top, and the same class palette is shared between the
//! gating plot and the tree plots so the two kinds of figure read together.

use thiserror::Error;

use crate::data::Dataset;
use crate::gating::{GateMode, GatingError, GatingModel};
use crate::predict::MoDTModel;
use crate::tree::{DecisionTree, TreeNode};

#[derive(Debug, Error)]
pub enum VizError {
    #[error("gating plots need a 2D gate; retrain with the 2d gate mode to plot this model")]
    NotTwoDGate,
    #[error("grid resolution must be at least 2, got {0}")]
    BadResolution(usize),
    #[error(transparent)]
    Gating(#[from] GatingError),
}

/// Low-saturation fills for the expert regions.
pub fn default_region_palette(e: usize) -> Vec<String> {
    (0..e)
        .map(|j| hsl_to_hex(hue(j, e, 20.0), 0.45, 0.84))
        .collect()
}

/// High-saturation fills for the class markers.
pub fn default_class_palette(k: usize) -> Vec<String> {
    (0..k)
        .map(|c| hsl_to_hex(hue(c, k, 230.0), 0.82, 0.40))
        .collect()
}

fn hue(i: usize, n: usize, offset: f64) -> f64 {
    (offset + 360.0 * i as f64 / n.max(1) as f64) % 360.0
}

fn hsl_to_hex(h: f64, s: f64, l: f64) -> String {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let to8 = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", to8(r1), to8(g1), to8(b1))
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Fixed two-decimal coordinate formatting keeps re-renders byte-identical.
fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Threshold/tick label: up to four decimals with trailing zeros trimmed.
fn num(v: f64) -> String {
    let mut s = format!("{v:.4}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

/// Settings for one gating-region plot.
pub struct GatePlotSpec<'a> {
    pub model: &'a MoDTModel,
    pub dataset: &'a Dataset,
    /// Grid cells per axis.
    pub resolution: usize,
    /// Region fills, one per expert; defaults to `default_region_palette`.
    pub region_palette: Option<Vec<String>>,
    /// Class marker fills, one per class; defaults to `default_class_palette`.
    pub class_palette: Option<Vec<String>>,
}

impl<'a> GatePlotSpec<'a> {
    pub fn new(model: &'a MoDTModel, dataset: &'a Dataset) -> Self {
        GatePlotSpec {
            model,
            dataset,
            resolution: 300,
            region_palette: None,
            class_palette: None,
        }
    }
}

/// Classifies the grid of cell centers over the given ranges by the gate's
/// argmax expert. Returned as `grid[row][col]`, row 0 at the low end of the
/// second feature.
pub fn gate_region_grid(
    gating: &GatingModel,
    u_range: (f64, f64),
    v_range: (f64, f64),
    resolution: usize,
) -> Result<Vec<Vec<usize>>, VizError> {
    if resolution < 2 {
        return Err(VizError::BadResolution(resolution));
    }
    if !matches!(gating.mode(), GateMode::TwoD { .. }) {
        return Err(VizError::NotTwoDGate);
    }
    let theta = gating.theta();
    let e = gating.n_experts();
    let du = (u_range.1 - u_range.0) / resolution as f64;
    let dv = (v_range.1 - v_range.0) / resolution as f64;
    let mut grid = Vec::with_capacity(resolution);
    for r in 0..resolution {
        let v = v_range.0 + (r as f64 + 0.5) * dv;
        let mut row = Vec::with_capacity(resolution);
        for c in 0..resolution {
            let u = u_range.0 + (c as f64 + 0.5) * du;
            let mut best = 0;
            let mut best_logit = f64::NEG_INFINITY;
            for j in 0..e {
                let logit = theta[[0, j]] * u + theta[[1, j]] * v + theta[[2, j]];
                if logit > best_logit {
                    best_logit = logit;
                    best = j;
                }
            }
            row.push(best);
        }
        grid.push(row);
    }
    Ok(grid)
}

/// Data range padded 5% on each side (a constant column pads by 0.5).
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { (hi - lo) * 0.05 } else { 0.5 };
    (lo - pad, hi + pad)
}

const PLOT_X0: f64 = 70.0;
const PLOT_Y0: f64 = 30.0;
const PLOT_W: f64 = 540.0;
const PLOT_H: f64 = 480.0;
const LEGEND_X: f64 = 640.0;
const CANVAS_W: f64 = 820.0;
const CANVAS_H: f64 = 560.0;

/// Renders the 2D gating decision regions with overlaid data points.
pub fn render_gating_plot(spec: &GatePlotSpec) -> Result<String, VizError> {
    let model = spec.model;
    let GateMode::TwoD {
        feature_i,
        feature_j,
    } = model.gating.mode()
    else {
        return Err(VizError::NotTwoDGate);
    };
    let e = model.n_experts();
    let k = model.n_classes();
    let regions = spec
        .region_palette
        .clone()
        .unwrap_or_else(|| default_region_palette(e));
    let classes = spec
        .class_palette
        .clone()
        .unwrap_or_else(|| default_class_palette(k));

    let x = &spec.dataset.x;
    let u_range = padded_range(x.column(feature_i).iter().cloned());
    let v_range = padded_range(x.column(feature_j).iter().cloned());
    let res = spec.resolution;
    let grid = gate_region_grid(&model.gating, u_range, v_range, res)?;

    let to_px = |u: f64| PLOT_X0 + (u - u_range.0) / (u_range.1 - u_range.0) * PLOT_W;
    let to_py = |v: f64| PLOT_Y0 + PLOT_H - (v - v_range.0) / (v_range.1 - v_range.0) * PLOT_H;

    let mut svg = String::with_capacity(1 << 16);
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CANVAS_W}\" height=\"{CANVAS_H}\" \
         viewBox=\"0 0 {CANVAS_W} {CANVAS_H}\" font-family=\"sans-serif\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{CANVAS_W}\" height=\"{CANVAS_H}\" fill=\"#ffffff\"/>\n"
    ));

    // Region raster, merged into one rect per run of equal cells.
    let cell_w = PLOT_W / res as f64;
    let cell_h = PLOT_H / res as f64;
    svg.push_str("<g id=\"regions\" stroke=\"none\">\n");
    for (r, row) in grid.iter().enumerate() {
        // Grid row 0 sits at the bottom of the plot.
        let y = PLOT_Y0 + PLOT_H - (r as f64 + 1.0) * cell_h;
        let mut c0 = 0;
        while c0 < res {
            let region = row[c0];
            let mut c1 = c0 + 1;
            while c1 < res && row[c1] == region {
                c1 += 1;
            }
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                px(PLOT_X0 + c0 as f64 * cell_w),
                px(y),
                px((c1 - c0) as f64 * cell_w),
                px(cell_h),
                regions[region]
            ));
            c0 = c1;
        }
    }
    svg.push_str("</g>\n");

    // Data points.
    svg.push_str("<g id=\"points\" stroke=\"#222222\" stroke-width=\"0.6\">\n");
    for (i, row) in x.outer_iter().enumerate() {
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"3.2\" fill=\"{}\"/>\n",
            px(to_px(row[feature_i])),
            px(to_py(row[feature_j])),
            classes[spec.dataset.y[i]]
        ));
    }
    svg.push_str("</g>\n");

    // Frame, ticks, and axis labels.
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444444\"/>\n",
        px(PLOT_X0),
        px(PLOT_Y0),
        px(PLOT_W),
        px(PLOT_H)
    ));
    svg.push_str("<g id=\"axes\" font-size=\"11\" fill=\"#333333\">\n");
    for frac in [0.0, 0.5, 1.0] {
        let u = u_range.0 + frac * (u_range.1 - u_range.0);
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            px(to_px(u)),
            px(PLOT_Y0 + PLOT_H + 16.0),
            num(u)
        ));
        let v = v_range.0 + frac * (v_range.1 - v_range.0);
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            px(PLOT_X0 - 6.0),
            px(to_py(v) + 4.0),
            num(v)
        ));
    }
    let label_i = escape_xml(&model.feature_names[feature_i]);
    let label_j = escape_xml(&model.feature_names[feature_j]);
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
        px(PLOT_X0 + PLOT_W / 2.0),
        px(PLOT_Y0 + PLOT_H + 36.0),
        label_i
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
         transform=\"rotate(-90 {} {})\">{}</text>\n",
        px(18.0),
        px(PLOT_Y0 + PLOT_H / 2.0),
        px(18.0),
        px(PLOT_Y0 + PLOT_H / 2.0),
        label_j
    ));
    svg.push_str("</g>\n");

    // Legends: experts top-right, classes bottom-right.
    svg.push_str("<g id=\"legend-experts\" font-size=\"12\" fill=\"#222222\">\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\">Experts</text>\n",
        px(LEGEND_X),
        px(PLOT_Y0 + 12.0)
    ));
    for (j, fill) in regions.iter().enumerate() {
        let y = PLOT_Y0 + 24.0 + j as f64 * 20.0;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"14\" height=\"14\" fill=\"{}\" stroke=\"#555555\"/>\n",
            px(LEGEND_X),
            px(y),
            fill
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">Expert {}</text>\n",
            px(LEGEND_X + 20.0),
            px(y + 11.0),
            j + 1
        ));
    }
    svg.push_str("</g>\n");
    svg.push_str("<g id=\"legend-classes\" font-size=\"12\" fill=\"#222222\">\n");
    let classes_y0 = PLOT_Y0 + PLOT_H - 12.0 - (k as f64) * 20.0;
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\">Classes</text>\n",
        px(LEGEND_X),
        px(classes_y0 - 6.0)
    ));
    for (c, fill) in classes.iter().enumerate() {
        let y = classes_y0 + c as f64 * 20.0 + 4.0;
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"6\" fill=\"{}\" stroke=\"#222222\" stroke-width=\"0.6\"/>\n",
            px(LEGEND_X + 7.0),
            px(y + 5.0),
            fill
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            px(LEGEND_X + 20.0),
            px(y + 9.0),
            escape_xml(&model.class_names[c])
        ));
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}

/// Settings for one expert-tree plot.
pub struct TreePlotSpec<'a> {
    pub tree: &'a DecisionTree,
    pub class_names: &'a [String],
    pub feature_names: &'a [String],
    /// Shared with the gating plot so class colors line up across figures.
    pub class_palette: Option<Vec<String>>,
}

const NODE_W: f64 = 144.0;
const NODE_H: f64 = 34.0;
const LEAF_W: f64 = 110.0;
const LEAF_H: f64 = 64.0;
const LEVEL_DY: f64 = 110.0;
const LEAF_DX: f64 = 150.0;

struct TreeLayout {
    svg: String,
    next_leaf_slot: usize,
}

impl TreeLayout {
    /// Places a subtree, returning the x coordinate of its anchor.
    fn place(
        &mut self,
        node: &TreeNode,
        depth: usize,
        classes: &[String],
        names: &[&str],
        palette: &[String],
    ) -> f64 {
        let y = 40.0 + depth as f64 * LEVEL_DY;
        match node {
            TreeNode::Leaf {
                distribution,
                majority_class,
            } => {
                let x = 40.0 + self.next_leaf_slot as f64 * LEAF_DX + LEAF_DX / 2.0;
                self.next_leaf_slot += 1;
                let k = distribution.len();
                self.svg.push_str(&format!(
                    "<g class=\"node leaf\"><rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" \
                     rx=\"4\" fill=\"#fafafa\" stroke=\"#555555\"/>\n",
                    px(x - LEAF_W / 2.0),
                    px(y),
                    px(LEAF_W),
                    px(LEAF_H)
                ));
                // Distribution bars, bottom-aligned.
                let bar_area_w = LEAF_W - 16.0;
                let bar_w = bar_area_w / k as f64;
                let bar_max_h = 34.0;
                for (c, &p) in distribution.iter().enumerate() {
                    let h = (p * bar_max_h).max(0.5);
                    self.svg.push_str(&format!(
                        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                        px(x - bar_area_w / 2.0 + c as f64 * bar_w + 1.0),
                        px(y + 42.0 - h),
                        px(bar_w - 2.0),
                        px(h),
                        palette[c]
                    ));
                }
                self.svg.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
                    px(x),
                    px(y + LEAF_H - 6.0),
                    escape_xml(&classes[*majority_class])
                ));
                self.svg.push_str("</g>\n");
                x
            }
            TreeNode::Internal {
                feature_index,
                threshold,
                left,
                right,
            } => {
                let xl = self.place(left, depth + 1, classes, names, palette);
                let xr = self.place(right, depth + 1, classes, names, palette);
                let x = (xl + xr) / 2.0;
                let child_y = 40.0 + (depth + 1) as f64 * LEVEL_DY;
                for (cx, tag) in [(xl, "&#8804;"), (xr, "&gt;")] {
                    self.svg.push_str(&format!(
                        "<line class=\"edge\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" \
                         stroke=\"#777777\"/>\n",
                        px(x),
                        px(y + NODE_H),
                        px(cx),
                        px(child_y)
                    ));
                    self.svg.push_str(&format!(
                        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\" \
                         fill=\"#555555\">{}</text>\n",
                        px((x + cx) / 2.0),
                        px((y + NODE_H + child_y) / 2.0 - 4.0),
                        tag
                    ));
                }
                self.svg.push_str(&format!(
                    "<g class=\"node internal\"><rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" \
                     rx=\"6\" fill=\"#eef2f7\" stroke=\"#445566\"/>\n",
                    px(x - NODE_W / 2.0),
                    px(y),
                    px(NODE_W),
                    px(NODE_H)
                ));
                self.svg.push_str(&format!(
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{} &#8804; {}</text>\n",
                    px(x),
                    px(y + 21.0),
                    escape_xml(names[*feature_index]),
                    num(*threshold)
                ));
                self.svg.push_str("</g>\n");
                x
            }
        }
    }
}

/// Renders one expert tree top-down: internal nodes labeled
/// `feature <= threshold`, leaves drawn as class-distribution bars.
pub fn render_tree(spec: &TreePlotSpec) -> String {
    let tree = spec.tree;
    let k = spec.class_names.len();
    let palette = spec
        .class_palette
        .clone()
        .unwrap_or_else(|| default_class_palette(k));
    let names: Vec<&str> = spec.feature_names.iter().map(String::as_str).collect();

    let leaves = tree.root().leaf_count();
    let depth = tree.depth();
    let legend_w = 140.0;
    let width = (80.0 + leaves as f64 * LEAF_DX).max(320.0) + legend_w;
    let height = 80.0 + depth as f64 * LEVEL_DY + LEAF_H + 20.0;

    let mut layout = TreeLayout {
        svg: String::with_capacity(1 << 12),
        next_leaf_slot: 0,
    };
    layout.place(tree.root(), 0, spec.class_names, &names, &palette);

    let mut svg = String::with_capacity(layout.svg.len() + 1024);
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         viewBox=\"0 0 {} {}\" font-family=\"sans-serif\">\n",
        px(width),
        px(height),
        px(width),
        px(height)
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n",
        px(width),
        px(height)
    ));
    svg.push_str(&layout.svg);
    svg.push_str("<g id=\"legend-classes\" font-size=\"12\" fill=\"#222222\">\n");
    let lx = width - legend_w + 10.0;
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"18\" font-size=\"13\">Classes</text>\n",
        px(lx)
    ));
    for (c, fill) in palette.iter().enumerate() {
        let y = 28.0 + c as f64 * 20.0;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"14\" height=\"14\" fill=\"{}\" stroke=\"#555555\"/>\n",
            px(lx),
            px(y),
            fill
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            px(lx + 20.0),
            px(y + 11.0),
            escape_xml(&spec.class_names[c])
        ));
    }
    svg.push_str("</g>\n</svg>\n");
    svg
}
