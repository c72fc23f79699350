//! Per-image quality report and its CSV form.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::{QualityScore, PEAK, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};

pub const CSV_HEADER: &str = "image_id,guide_psnr,guide_ssim,decn_psnr,decn_ssim,delta_psnr,delta_ssim";
pub const MEAN_ID: &str = "mean";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub image_id: String,
    pub guide: QualityScore,
    pub decn: QualityScore,
}

impl ReportRow {
    pub fn delta_psnr(&self) -> f64 {
        self.decn.psnr_db - self.guide.psnr_db
    }

    pub fn delta_ssim(&self) -> f64 {
        self.decn.ssim - self.guide.ssim
    }

    fn values(&self) -> [f64; 6] {
        [
            self.guide.psnr_db,
            self.guide.ssim,
            self.decn.psnr_db,
            self.decn.ssim,
            self.delta_psnr(),
            self.delta_ssim(),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionReport {
    pub fingerprint: u64,
    pub rows: Vec<ReportRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

impl ReconstructionReport {
    /// Column means in CSV order: guide PSNR, guide SSIM, DECN PSNR, DECN
    /// SSIM, delta PSNR, delta SSIM.
    pub fn means(&self) -> [f64; 6] {
        std::array::from_fn(|c| mean(self.rows.iter().map(|r| r.values()[c])))
    }

    pub fn mean_guide(&self) -> QualityScore {
        let m = self.means();
        QualityScore {
            psnr_db: m[0],
            ssim: m[1],
        }
    }

    pub fn mean_decn(&self) -> QualityScore {
        let m = self.means();
        QualityScore {
            psnr_db: m[2],
            ssim: m[3],
        }
    }

    /// Comment line with fingerprint and SSIM parameters, header, one row per
    /// image, and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# fingerprint={:016x} ssim_window={SSIM_WINDOW} ssim_sigma={SSIM_SIGMA} ssim_k1={SSIM_K1} ssim_k2={SSIM_K2} peak={PEAK}",
            self.fingerprint
        );
        out.push_str(CSV_HEADER);
        out.push('\n');
        let mut line = |id: &str, values: [f64; 6]| {
            out.push_str(id);
            for v in values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        };
        for r in &self.rows {
            line(&r.image_id, r.values());
        }
        if !self.rows.is_empty() {
            line(MEAN_ID, self.means());
        }
        out
    }
}

/// A parsed report row: id plus the six numeric columns.
pub type CsvRow = (String, [f64; 6]);

/// Reads back [`ReconstructionReport::to_csv`]; returns the fingerprint, the
/// per-image rows and the mean row.
pub fn parse_csv(text: &str) -> Result<(u64, Vec<CsvRow>, Option<CsvRow>)> {
    let bad = |m: &str| Error::Format(format!("report: {m}"));
    let mut lines = text.lines();
    let comment = lines.next().ok_or_else(|| bad("empty"))?;
    let fingerprint = comment
        .split_whitespace()
        .find_map(|f| f.strip_prefix("fingerprint="))
        .and_then(|h| u64::from_str_radix(h, 16).ok())
        .ok_or_else(|| bad("missing fingerprint"))?;
    if lines.next() != Some(CSV_HEADER) {
        return Err(bad("unexpected header"));
    }
    let mut rows = Vec::new();
    let mut mean_row = None;
    for line in lines {
        let mut fields = line.split(',');
        let id = fields.next().ok_or_else(|| bad("empty row"))?.to_string();
        let nums: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|_| bad(&format!("bad number `{f}`"))))
            .collect::<Result<_>>()?;
        let values: [f64; 6] = nums.try_into().map_err(|_| bad("expected 7 columns"))?;
        if id == MEAN_ID {
            mean_row = Some((id, values));
        } else {
            rows.push((id, values));
        }
    }
    Ok((fingerprint, rows, mean_row))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, g: (f64, f64), d: (f64, f64)) -> ReportRow {
        ReportRow {
            image_id: id.into(),
            guide: QualityScore { psnr_db: g.0, ssim: g.1 },
            decn: QualityScore { psnr_db: d.0, ssim: d.1 },
        }
    }

    #[test]
    fn single_row_mean_equals_row() {
        let r = ReconstructionReport {
            fingerprint: 0xabc,
            rows: vec![row("img_0001", (30.1, 0.81), (31.7, 0.86))],
        };
        let csv = r.to_csv();
        let (fp, rows, mean) = parse_csv(&csv).unwrap();
        assert_eq!(fp, 0xabc);
        assert_eq!(mean.unwrap().1, rows[0].1);
    }

    #[test]
    fn deltas_and_means_are_consistent() {
        let r = ReconstructionReport {
            fingerprint: 1,
            rows: vec![
                row("a", (30.123456789, 0.8), (31.1, 0.83)),
                row("b", (25.5, 0.7), (27.25, 0.71)),
                row("c", (28.0, 0.75), (27.9, 0.76)),
            ],
        };
        let (_, rows, mean) = parse_csv(&r.to_csv()).unwrap();
        for (_, v) in &rows {
            assert_eq!(v[4], v[2] - v[0]);
            assert_eq!(v[5], v[3] - v[1]);
        }
        let mean = mean.unwrap().1;
        for c in 0..6 {
            let m = rows.iter().map(|(_, v)| v[c]).sum::<f64>() / 3.0;
            assert!((mean[c] - m).abs() < 1e-9);
        }
    }

    #[test]
    fn layout() {
        let r = ReconstructionReport {
            fingerprint: 0x1f,
            rows: vec![row("x", (1.0, 0.5), (2.0, 0.25))],
        };
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "# fingerprint=000000000000001f ssim_window=11 ssim_sigma=1.5 ssim_k1=0.01 ssim_k2=0.03 peak=1"
        );
        assert_eq!(lines[1], CSV_HEADER);
        assert_eq!(lines[2], "x,1,0.5,2,0.25,1,-0.25");
        assert_eq!(lines[3], "mean,1,0.5,2,0.25,1,-0.25");
        assert!(parse_csv("garbage").is_err());
    }
}
