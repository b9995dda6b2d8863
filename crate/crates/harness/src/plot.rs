//! Minimal SVG line charts of `metrics.csv` columns against `step`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

/// Run name of a metrics file: its parent directory, else the file stem.
fn run_name(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

/// Reads `field` against `step`. Empty cells are skipped.
pub fn read_series(path: &Path, field: &str) -> Result<Series> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => HarnessError::io(path, io),
            _ => unreachable!(),
        },
        _ => HarnessError::Csv(e),
    })?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| HarnessError::FieldMissing {
                field: name.to_string(),
                file: path.to_path_buf(),
            })
    };
    let (si, fi) = (col("step")?, col(field)?);
    let mut points = Vec::new();
    let mut any_row = false;
    for rec in rdr.records() {
        let rec = rec?;
        any_row = true;
        let (s, v) = (rec.get(si).unwrap_or(""), rec.get(fi).unwrap_or(""));
        if v.is_empty() {
            continue;
        }
        let parse = |x: &str| {
            x.parse::<f64>().map_err(|_| {
                HarnessError::Failed(format!(
                    "{}: cannot parse {x:?} as a number",
                    path.display()
                ))
            })
        };
        let (x, y) = (parse(s)?, parse(v)?);
        if y.is_finite() {
            points.push((x, y));
        }
    }
    if !any_row {
        return Err(HarnessError::EmptyData(path.to_path_buf()));
    }
    Ok(Series {
        label: format!("{} {field}", run_name(path)),
        points,
    })
}

fn bounds(series: &[Series]) -> Option<(f64, f64, f64, f64)> {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let mut b: Option<(f64, f64, f64, f64)> = None;
    for &(x, y) in pts {
        b = Some(match b {
            None => (x, x, y, y),
            Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
        });
    }
    b.map(|(x0, x1, y0, y1)| {
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        (x0, x1, y0, y1)
    })
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_svg(series: &[Series]) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    if let Some((x0, x1, y0, y1)) = bounds(series) {
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN + ph - (y - y0) / (y1 - y0) * ph;
        for (txt, x, y, anchor) in [
            (format!("{x0}"), MARGIN, HEIGHT - MARGIN + 16.0, "start"),
            (
                format!("{x1}"),
                WIDTH - MARGIN,
                HEIGHT - MARGIN + 16.0,
                "end",
            ),
            (format!("{y1:.4e}"), MARGIN - 4.0, MARGIN + 4.0, "end"),
            (format!("{y0:.4e}"), MARGIN - 4.0, HEIGHT - MARGIN, "end"),
        ] {
            let _ = writeln!(
                svg,
                r#"<text x="{x:.1}" y="{y:.1}" font-size="10" font-family="sans-serif" text-anchor="{anchor}">{}</text>"#,
                esc(&txt)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" font-family="sans-serif" text-anchor="middle">step</text>"#,
            MARGIN + pw / 2.0,
            HEIGHT - 12.0
        );
        for (i, s) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
            let ly = MARGIN + 14.0 + 14.0 * i as f64;
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
                MARGIN + 8.0,
                MARGIN + 24.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" font-family="sans-serif">{}</text>"#,
                MARGIN + 28.0,
                ly + 4.0,
                esc(&s.label)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// One polyline per `(file, field)`. Nothing is written if any input fails.
pub fn plot(files: &[PathBuf], fields: &[String], out: &Path) -> Result<()> {
    if files.is_empty() || fields.is_empty() {
        return Err(HarnessError::Failed(
            "plot needs at least one file and one field".into(),
        ));
    }
    let mut series = Vec::new();
    for f in files {
        for field in fields {
            series.push(read_series(f, field)?);
        }
    }
    let svg = render_svg(&series);
    std::fs::write(out, svg).map_err(|e| HarnessError::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, run: &str, body: &str) -> PathBuf {
        let d = dir.join(run);
        std::fs::create_dir_all(&d).unwrap();
        let p = d.join("metrics.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    const HEADER: &str =
        "step,lr,train_loss,ood_loss,mean_pairwise_cos,grad_norm,pseudo_grad_norm\n";

    #[test]
    fn two_runs_give_two_labelled_polylines() {
        let tmp = tempfile::tempdir().unwrap();
        let a = write(
            tmp.path(),
            "a",
            &format!("{HEADER}0,0.1,2.0,,,1,\n5,0.1,1.0,,,1,\n"),
        );
        let b = write(
            tmp.path(),
            "b",
            &format!("{HEADER}0,0.1,3.0,,,1,\n5,0.1,0.5,,,1,\n"),
        );
        let out = tmp.path().join("p.svg");
        plot(&[a, b], &["train_loss".into()], &out).unwrap();
        let svg = std::fs::read_to_string(&out).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a train_loss"));
        assert!(svg.contains("b train_loss"));
    }

    #[test]
    fn missing_field_writes_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let a = write(tmp.path(), "a", &format!("{HEADER}0,0.1,2.0,,,1,\n"));
        let out = tmp.path().join("p.svg");
        let err = plot(&[a], &["nonexistent_col".into()], &out).unwrap_err();
        assert!(
            matches!(err, HarnessError::FieldMissing { ref field, .. } if field == "nonexistent_col")
        );
        assert!(!out.exists());
    }

    #[test]
    fn header_only_file_is_empty_data() {
        let tmp = tempfile::tempdir().unwrap();
        let a = write(tmp.path(), "a", HEADER);
        let out = tmp.path().join("p.svg");
        assert!(matches!(
            plot(&[a], &["train_loss".into()], &out),
            Err(HarnessError::EmptyData(_))
        ));
        assert!(!out.exists());
    }

    #[test]
    fn blank_cells_are_skipped() {
        let tmp = tempfile::tempdir().unwrap();
        let a = write(
            tmp.path(),
            "a",
            &format!("{HEADER}0,0.1,2.0,,,1,\n1,0.1,1.0,,0.3,1,\n"),
        );
        let s = read_series(&a, "mean_pairwise_cos").unwrap();
        assert_eq!(s.points, vec![(1.0, 0.3)]);
    }

    #[test]
    fn degenerate_ranges_still_render() {
        let s = Series {
            label: "flat".into(),
            points: vec![(0.0, 1.0)],
        };
        let svg = render_svg(&[s]);
        assert!(!svg.contains("NaN"));
        assert!(svg.contains("<polyline"));
    }
}
