//! Minimal self-contained SVG emitters for the report command: counts
//! histograms and counts-over-time plots with a distance-to-goal overlay.
//! No styling dependencies; every number is formatted deterministically.

use radsearch_core::radiation::CountsHistogram;
use radsearch_core::ugvsim::CountsSample;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 70.0;
const MARGIN_T: f64 = 46.0;
const MARGIN_B: f64 = 56.0;

fn fmt(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{:.2}", v)
    }
}

fn header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"13\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        tx = WIDTH / 2.0,
        title = title
    )
}

/// Histogram of measurement counts. Each bar carries `data-count` and
/// `data-bin-start` attributes so reports stay machine-checkable.
pub fn histogram_svg(hist: &CountsHistogram, title: &str) -> String {
    let mut out = header(title);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let n = hist.bins.len();
    if n == 0 {
        out.push_str("<text x=\"430\" y=\"240\" text-anchor=\"middle\">no data</text>\n</svg>\n");
        return out;
    }
    let max_count = *hist.bins.iter().max().unwrap() as f64;
    let bar_w = plot_w / n as f64;
    for (i, &count) in hist.bins.iter().enumerate() {
        let x = MARGIN_L + i as f64 * bar_w;
        let bh = if max_count > 0.0 {
            plot_h * count as f64 / max_count
        } else {
            0.0
        };
        let y = MARGIN_T + plot_h - bh;
        let bin_start = hist.origin + i as f64 * hist.bin_width;
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#4878a8\" stroke=\"white\" data-count=\"{}\" data-bin-start=\"{}\"/>\n",
            x, y, bar_w, bh, count, fmt(bin_start)
        ));
    }
    // axes
    out.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = MARGIN_L,
        r = WIDTH - MARGIN_R,
        t = MARGIN_T,
        b = HEIGHT - MARGIN_B
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">counts</text>\n",
        WIDTH / 2.0,
        HEIGHT - 16.0
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"start\">{} samples, bin width {}</text>\n",
        MARGIN_L,
        MARGIN_T - 8.0,
        hist.total(),
        fmt(hist.bin_width)
    ));
    // x tick labels at both ends
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_L,
        HEIGHT - MARGIN_B + 18.0,
        fmt(hist.origin)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B + 18.0,
        fmt(hist.origin + n as f64 * hist.bin_width)
    ));
    out.push_str("</svg>\n");
    out
}

/// Counts over mission time with the distance-to-goal overlay on a second
/// axis, the confirmation-plot shape: counts rise as the distance falls.
pub fn counts_time_svg(samples: &[CountsSample], title: &str) -> String {
    let mut out = header(title);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    if samples.len() < 2 {
        out.push_str("<text x=\"430\" y=\"240\" text-anchor=\"middle\">no data</text>\n</svg>\n");
        return out;
    }
    let t_max = samples.last().unwrap().t.max(1e-9);
    let c_max = samples.iter().map(|s| s.counts).max().unwrap() as f64;
    let c_min = samples.iter().map(|s| s.counts).min().unwrap() as f64;
    let d_max = samples
        .iter()
        .map(|s| s.dist_to_goal)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1e-9);
    let c_span = (c_max - c_min).max(1.0);
    let x_of = |t: f64| MARGIN_L + plot_w * t / t_max;
    let y_counts = |c: f64| MARGIN_T + plot_h * (1.0 - (c - c_min) / c_span);
    let y_dist = |d: f64| MARGIN_T + plot_h * (1.0 - d / d_max);

    let poly = |pts: &[(f64, f64)]| {
        pts.iter()
            .map(|(x, y)| format!("{:.2},{:.2}", x, y))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let counts_pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| (x_of(s.t), y_counts(s.counts as f64)))
        .collect();
    let dist_pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| (x_of(s.t), y_dist(s.dist_to_goal)))
        .collect();
    out.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#b03030\" stroke-width=\"1.5\" data-series=\"counts\" data-n=\"{}\"/>\n",
        poly(&counts_pts),
        samples.len()
    ));
    out.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#3060a8\" stroke-width=\"1.5\" stroke-dasharray=\"5,3\" data-series=\"dist_to_goal\"/>\n",
        poly(&dist_pts)
    ));
    out.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{r}\" y1=\"{t}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = MARGIN_L,
        r = WIDTH - MARGIN_R,
        t = MARGIN_T,
        b = HEIGHT - MARGIN_B
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">t (s)</text>\n",
        WIDTH / 2.0,
        HEIGHT - 16.0
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{}\" fill=\"#b03030\" transform=\"rotate(-90 14 {})\">counts [{} .. {}]</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        fmt(c_min),
        fmt(c_max)
    ));
    out.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" fill=\"#3060a8\" transform=\"rotate(90 {x} {y})\">distance to goal [0 .. {d}] m</text>\n",
        x = WIDTH - 14.0,
        y = HEIGHT / 2.0,
        d = fmt(d_max)
    ));
    out.push_str("</svg>\n");
    out
}
