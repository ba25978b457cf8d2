//! Report serialization: flat key-value text, CSV curves, and SVG line
//! charts of the per-timestep error curves.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{MetricReport, Result};

/// Writes reports as `method.key = value` lines, one block per method, in
/// the given order.
pub fn write_report_kv(reports: &[MetricReport], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in reports {
        let mut kv = |key: &str, value: Option<f64>| -> std::io::Result<()> {
            if let Some(v) = value {
                writeln!(w, "{}.{key} = {v:.6}", r.method)?;
            }
            Ok(())
        };
        kv("fd", r.fd)?;
        kv("div", r.div)?;
        kv("paired_fd", r.paired_fd)?;
        kv("mpjpe", r.mpjpe)?;
        kv("pa_mpjpe", r.pa_mpjpe)?;
        writeln!(w, "{}.samples = {}", r.method, r.sample_count)?;
        if r.fd_clamped_mass > 0.0 {
            writeln!(w, "{}.fd_clamped_mass = {:.3e}", r.method, r.fd_clamped_mass)?;
        }
        if r.fd_singular_warning {
            writeln!(w, "{}.fd_singular_warning = 1", r.method)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One named curve over predicted frames.
#[derive(Debug, Clone)]
pub struct CurveSeries {
    pub name: String,
    pub values: Vec<f64>,
}

/// CSV with a `frame` column followed by one column per series. All series
/// must share a length; the frame index starts at 1 (first predicted frame).
pub fn write_curves_csv(series: &[CurveSeries], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<&str> = std::iter::once("frame")
        .chain(series.iter().map(|s| s.name.as_str()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    let rows = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    for i in 0..rows {
        let mut cols = vec![(i + 1).to_string()];
        for s in series {
            cols.push(
                s.values
                    .get(i)
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default(),
            );
        }
        writeln!(w, "{}", cols.join(","))?;
    }
    w.flush()?;
    Ok(())
}

const SVG_COLORS: &[&str] = &[
    "#d95f02", "#1b9e77", "#7570b3", "#e7298a", "#66a61e", "#e6ab02",
];

/// Minimal static SVG line chart of the curves (error over predicted frame).
pub fn write_svg_curves(series: &[CurveSeries], title: &str, path: &Path) -> Result<()> {
    let (w_px, h_px, margin) = (640.0f64, 400.0f64, 48.0f64);
    let max_y = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .fold(1e-9f64, f64::max);
    let max_x = series.iter().map(|s| s.values.len()).max().unwrap_or(1) as f64;
    let sx = |i: f64| margin + i / max_x.max(1.0) * (w_px - 2.0 * margin);
    let sy = |v: f64| h_px - margin - v / max_y * (h_px - 2.0 * margin);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w_px}\" height=\"{h_px}\" viewBox=\"0 0 {w_px} {h_px}\">\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
        w_px / 2.0
    ));
    // axes
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#333\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"#333\"/>\n",
        m = margin,
        b = h_px - margin,
        r = w_px - margin,
        t = margin
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{:.3}</text>\n",
        4.0, margin, max_y
    ));
    for (k, s) in series.iter().enumerate() {
        let color = SVG_COLORS[k % SVG_COLORS.len()];
        let pts: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", sx((i + 1) as f64), sy(v)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            w_px - margin + 4.0,
            sy(*s.values.last().unwrap_or(&0.0)),
            s.name
        ));
    }
    out.push_str("</svg>\n");
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_csv_has_one_row_per_frame() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("curves.csv");
        let series = vec![
            CurveSeries {
                name: "mpjpe".to_string(),
                values: vec![0.1, 0.2, 0.3],
            },
            CurveSeries {
                name: "pa_mpjpe".to_string(),
                values: vec![0.05, 0.1, 0.15],
            },
        ];
        write_curves_csv(&series, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "frame,mpjpe,pa_mpjpe");
        assert!(lines[1].starts_with("1,"));
    }

    #[test]
    fn svg_is_emitted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("chart.svg");
        let series = vec![CurveSeries {
            name: "err".to_string(),
            values: vec![0.1, 0.4, 0.2],
        }];
        write_svg_curves(&series, "error over time", &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("<svg") && text.contains("polyline"));
    }
}
