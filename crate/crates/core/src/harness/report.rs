//! Plot-ready CSV and a static HTML chart for experiment results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::experiments::{mean_std, ExperimentResult};

const CSV_HEADER: &str = "experiment,param,seed,num_labels,oa,macc,miou";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl ExperimentResult {
    /// One row per cell: `experiment,param,seed,num_labels,oa,macc,miou`,
    /// one `iou_<class>` column per class, then the first-stage mIoU (empty
    /// without retraining) and wall-clock seconds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        for name in &self.class_names {
            let _ = write!(out, ",iou_{name}");
        }
        out.push_str(",first_stage_miou,seconds\n");
        for c in &self.cells {
            let s = &c.report.overall;
            let _ = write!(out, "{},{},{},{},{},{},{}", self.name, c.param, c.seed, c.num_labels, s.oa, s.macc, s.miou);
            for iou in &s.iou {
                let _ = write!(out, ",{}", opt(*iou));
            }
            let first = c.first_stage.as_ref().map(|r| r.overall.miou);
            let _ = writeln!(out, ",{},{:.3}", opt(first), c.seconds);
        }
        out
    }

    /// `(param, mean mIoU, std mIoU, cells)` in parameter order.
    pub fn miou_by_param(&self) -> Vec<(String, f64, f64, usize)> {
        self.params()
            .into_iter()
            .map(|p| {
                let v: Vec<f64> = self.cells.iter().filter(|c| c.param == p).map(|c| c.miou()).collect();
                let (m, s) = mean_std(&v);
                (p, m, s, v.len())
            })
            .collect()
    }

    /// Self-contained HTML page: an SVG bar chart of mean mIoU per parameter
    /// value (whiskers at one standard deviation) and the cell table.
    pub fn to_html(&self) -> String {
        let rows = self.miou_by_param();
        let (w, h, left, bottom, top) = (640.0, 320.0, 50.0, 40.0, 20.0);
        let plot_w = w - left - 20.0;
        let plot_h = h - bottom - top;
        let slot = plot_w / rows.len().max(1) as f64;
        let y = |v: f64| top + plot_h * (1.0 - v.clamp(0.0, 1.0));

        let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
        for tick in 0..=5 {
            let v = tick as f64 / 5.0;
            let _ = write!(
                svg,
                r##"<line x1="{left}" x2="{}" y1="{y}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##,
                w - 20.0,
                left - 6.0,
                y(v) + 4.0,
                y = y(v)
            );
        }
        for (i, (param, mean, std, _)) in rows.iter().enumerate() {
            let x = left + slot * (i as f64 + 0.2);
            let bw = slot * 0.6;
            let _ = write!(
                svg,
                r##"<rect x="{x:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="#4a7ab5"><title>{param}: {mean:.4}</title></rect>"##,
                y(*mean),
                y(0.0) - y(*mean)
            );
            if *std > 0.0 {
                let cx = x + bw / 2.0;
                let _ = write!(
                    svg,
                    r##"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="#222"/>"##,
                    y(mean + std),
                    y(mean - std)
                );
            }
            let _ = write!(
                svg,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
                x + bw / 2.0,
                h - bottom + 16.0,
                html_escape(param)
            );
        }
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text><text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">mIoU</text></svg>"#,
            left + plot_w / 2.0,
            h - 6.0,
            html_escape(&self.parameter),
            top + plot_h / 2.0,
            top + plot_h / 2.0
        );

        let mut table = String::from("<table><tr><th>param</th><th>seed</th><th>labels</th><th>OA</th><th>mIoU</th>");
        for name in &self.class_names {
            let _ = write!(table, "<th>{}</th>", html_escape(name));
        }
        table.push_str("<th>seconds</th></tr>");
        for c in &self.cells {
            let _ = write!(
                table,
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{:.4}</td><td>{:.4}</td>",
                html_escape(&c.param),
                c.seed,
                c.num_labels,
                c.oa(),
                c.miou()
            );
            for iou in &c.report.overall.iou {
                let _ = write!(table, "<td>{}</td>", iou.map_or("-".to_string(), |v| format!("{v:.4}")));
            }
            let _ = write!(table, "<td>{:.1}</td></tr>", c.seconds);
        }
        table.push_str("</table>");

        format!(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{name}</title><style>body{{font-family:sans-serif;margin:2em}}table{{border-collapse:collapse}}td,th{{border:1px solid #ccc;padding:2px 8px;text-align:right}}</style></head>\n<body><h1>{name}</h1>\n{svg}\n{table}\n</body></html>\n",
            name = html_escape(&self.name)
        )
    }

    /// Write `<dir>/<name>.csv` and `<dir>/<name>.html`; returns both paths.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{}.csv", self.name));
        let html = dir.join(format!("{}.html", self.name));
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        fs::write(&html, self.to_html()).map_err(|e| Error::io(&html, e))?;
        Ok((csv, html))
    }
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
