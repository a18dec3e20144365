use crate::CurvePoint;

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: f64 = 48.0;

fn polyline(points: &[CurvePoint], value: impl Fn(&CurvePoint) -> f64, colour: &str) -> String {
    let span = (points.len().max(2) - 1) as f64;
    let coords: Vec<String> = points
        .iter()
        .map(|p| {
            let x = MARGIN + (W - 2.0 * MARGIN) * p.after_task as f64 / span;
            let y = H - MARGIN - (H - 2.0 * MARGIN) * value(p).clamp(0.0, 1.0);
            format!("{x:.1},{y:.1}")
        })
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Average success against task index for seen and all tasks.
pub fn curve_svg(points: &[CurvePoint]) -> String {
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n");
    s.push_str(&format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
    s.push_str(&format!("<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n"));
    s.push_str(&format!("<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"));
    for tick in [0.0, 0.5, 1.0] {
        let y = y0 - (y0 - y1) * tick;
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{tick:.1}</text>\n",
            x0 - 6.0,
            y + 4.0
        ));
    }
    let span = (points.len().max(2) - 1) as f64;
    for p in points {
        let x = x0 + (x1 - x0) * p.after_task as f64 / span;
        s.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            y0 + 16.0,
            p.after_task
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">after task</text>\n",
        W / 2.0,
        H - 10.0
    ));
    s.push_str(&polyline(points, |p| p.seen, "#1f77b4"));
    s.push_str(&polyline(points, |p| p.all, "#d62728"));
    s.push_str(&format!("<text x=\"{x1}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\" fill=\"#1f77b4\">seen tasks</text>\n", y1 - 20.0));
    s.push_str(&format!("<text x=\"{x1}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\" fill=\"#d62728\">all tasks</text>\n", y1 - 6.0));
    s.push_str("</svg>\n");
    s
}
