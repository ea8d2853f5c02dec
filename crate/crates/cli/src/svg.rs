//! Minimal native SVG rendering: line plots for frontiers, grouped bars for
//! per-layer gains. No interactivity, just report figures.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 6] = ["#808080", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    log_y: bool,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let t = (v - self.xmin) / (self.xmax - self.xmin).max(1e-300);
        MARGIN_L + t * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn y(&self, v: f64) -> f64 {
        let v = if self.log_y { v.max(1e-300).log10() } else { v };
        let (lo, hi) = if self.log_y {
            (self.ymin.max(1e-300).log10(), self.ymax.max(1e-300).log10())
        } else {
            (self.ymin, self.ymax)
        };
        let t = (v - lo) / (hi - lo).max(1e-300);
        HEIGHT - MARGIN_B - t * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn frame_header(out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        WIDTH / 2.0,
        esc(title),
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0,
        esc(xlabel),
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        esc(ylabel),
    ));
    out.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    ));
}

/// Multi-series scatter-line plot; `log_y` switches the y axis to log10.
pub fn line_plot(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[(String, Vec<(f64, f64)>)],
    log_y: bool,
) -> String {
    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let xmin = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let xmax = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let ymin = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let ymax = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let pad = |lo: f64, hi: f64| {
        let d = (hi - lo).max(1e-12);
        (lo - 0.05 * d, hi + 0.05 * d)
    };
    let (xmin, xmax) = pad(xmin, xmax);
    let (ymin, ymax) = if log_y { (ymin, ymax) } else { pad(ymin, ymax) };
    let f = Frame { xmin, xmax, ymin, ymax, log_y };

    let mut out = String::new();
    frame_header(&mut out, title, xlabel, ylabel);
    // axis ticks
    for i in 0..=4 {
        let xv = xmin + (xmax - xmin) * i as f64 / 4.0;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.2}</text>\n",
            f.x(xv),
            HEIGHT - MARGIN_B + 16.0,
            xv
        ));
        let yv = if log_y {
            10f64.powf(ymin.max(1e-300).log10() + (ymax.max(1e-300).log10() - ymin.max(1e-300).log10()) * i as f64 / 4.0)
        } else {
            ymin + (ymax - ymin) * i as f64 / 4.0
        };
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.2e}</text>\n",
            MARGIN_L - 6.0,
            f.y(yv) + 4.0,
            yv
        ));
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.x(x), f.y(y))).collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in pts {
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                f.x(x),
                f.y(y)
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
            WIDTH - MARGIN_R - 120.0,
            MARGIN_T + 16.0 + 16.0 * i as f64,
            esc(name)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Grouped bar chart: one group per label, one bar per series.
pub fn bar_chart(title: &str, ylabel: &str, labels: &[String], series: &[(String, Vec<f64>)]) -> String {
    let ymax = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    let f = Frame { xmin: 0.0, xmax: 1.0, ymin: 0.0, ymax: ymax * 1.1, log_y: false };
    let mut out = String::new();
    frame_header(&mut out, title, "", ylabel);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let group_w = plot_w / labels.len() as f64;
    let bar_w = (group_w * 0.8) / series.len() as f64;
    for (g, label) in labels.iter().enumerate() {
        let gx = MARGIN_L + g as f64 * group_w;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            gx + group_w / 2.0,
            HEIGHT - MARGIN_B + 16.0,
            esc(label)
        ));
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values.get(g).copied().unwrap_or(0.0).max(0.0);
            let y = f.y(v);
            let h = (HEIGHT - MARGIN_B - y).max(0.0);
            out.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
                gx + group_w * 0.1 + s as f64 * bar_w,
                y,
                bar_w * 0.92,
                h,
                PALETTE[(s + 1) % PALETTE.len()]
            ));
        }
    }
    for i in 0..=4 {
        let yv = f.ymax * i as f64 / 4.0;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.2}</text>\n",
            MARGIN_L - 6.0,
            f.y(yv) + 4.0,
            yv
        ));
    }
    for (s, (name, _)) in series.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n",
            WIDTH - MARGIN_R - 120.0,
            MARGIN_T + 16.0 + 16.0 * s as f64,
            PALETTE[(s + 1) % PALETTE.len()],
            esc(name)
        ));
    }
    out.push_str("</svg>\n");
    out
}
