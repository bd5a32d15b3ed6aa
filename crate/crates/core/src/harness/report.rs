use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{aggregate, kendall_tau, rank_methods, AggregateStats, MethodRanking};
use crate::record::EvaluationRecord;

pub const CSV_HEADER: [&str; 7] = [
    "method",
    "dataset",
    "image_id",
    "psnr_db",
    "ssim",
    "wall_time_s",
    "output_path",
];

/// Formats `v` with 6 significant digits, `%g` style: fixed notation for
/// decimal exponents in `-5..6`, scientific otherwise, trailing zeros removed.
/// Infinities print as `inf` / `-inf`.
pub fn format_sig6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_owned()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

fn parse_number(field: &str, column: &str, line: usize) -> Result<f64> {
    match field {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => field
            .parse()
            .map_err(|_| Error::CsvSchema(format!("line {line}: column {column}: '{field}' is not a number"))),
    }
}

fn optional(v: Option<f64>) -> String {
    v.map(format_sig6).unwrap_or_default()
}

/// Records sorted by `(dataset, method, image_id)`.
pub fn sorted_records(records: &[EvaluationRecord]) -> Vec<EvaluationRecord> {
    let mut out = records.to_vec();
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    out
}

/// Renders records as CSV text (header always present).
pub fn csv_string(records: &[EvaluationRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in sorted_records(records) {
        let path = r
            .output_path
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        w.write_record([
            r.method.clone(),
            r.dataset.clone(),
            r.image_id.clone(),
            optional(r.psnr_db),
            optional(r.ssim),
            format_sig6(r.wall_time_s),
            path,
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

pub fn emit_csv(records: &[EvaluationRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, csv_string(records)?).map_err(|e| Error::io(path, e))
}

/// Parses CSV text produced by [`emit_csv`]. The header must match exactly.
pub fn parse_csv(text: &str) -> Result<Vec<EvaluationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if let Some(unknown) = header.iter().find(|h| !CSV_HEADER.contains(&h.as_str())) {
        return Err(Error::CsvSchema(format!("unknown column '{unknown}'")));
    }
    if header != CSV_HEADER {
        return Err(Error::CsvSchema(format!(
            "expected columns {}, got {}",
            CSV_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let opt = |idx: usize| -> Result<Option<f64>> {
            match &row[idx] {
                "" => Ok(None),
                f => parse_number(f, CSV_HEADER[idx], line).map(Some),
            }
        };
        records.push(EvaluationRecord {
            method: row[0].to_owned(),
            dataset: row[1].to_owned(),
            image_id: row[2].to_owned(),
            psnr_db: opt(3)?,
            ssim: opt(4)?,
            wall_time_s: parse_number(&row[5], CSV_HEADER[5], line)?,
            output_path: PathBuf::from(&row[6]),
        });
    }
    Ok(records)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<EvaluationRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

/// Aggregates for one `(dataset, method)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub images: usize,
    /// Mean over finite PSNRs; `inf` when every PSNR is infinite.
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    /// Distribution of finite PSNRs.
    pub psnr_stats: Option<AggregateStats>,
    pub ssim_stats: Option<AggregateStats>,
}

/// Everything the report prints: per-cell means, rankings and tau matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    pub cells: BTreeMap<(String, String), CellSummary>,
    /// One ranking per dataset (by mean PSNR), in dataset order.
    pub rankings: Vec<MethodRanking>,
    /// `tau[i][j]` between datasets `i` and `j`; `None` when undefined.
    pub tau: Vec<Vec<Option<f64>>>,
}

pub fn emit_summary(records: &[EvaluationRecord]) -> Result<Summary> {
    let datasets: Vec<String> = records.iter().map(|r| r.dataset.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let methods: Vec<String> = records.iter().map(|r| r.method.clone()).collect::<BTreeSet<_>>().into_iter().collect();

    let mut grouped: BTreeMap<(String, String), Vec<&EvaluationRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry((r.dataset.clone(), r.method.clone())).or_default().push(r);
    }
    let mut cells = BTreeMap::new();
    for (key, rs) in grouped {
        let psnrs: Vec<f64> = rs.iter().filter_map(|r| r.psnr_db).collect();
        let finite: Vec<f64> = psnrs.iter().copied().filter(|p| p.is_finite()).collect();
        let ssims: Vec<f64> = rs.iter().filter_map(|r| r.ssim).collect();
        let psnr_stats = (!finite.is_empty()).then(|| aggregate(&finite)).transpose()?;
        let ssim_stats = (!ssims.is_empty()).then(|| aggregate(&ssims)).transpose()?;
        let mean_psnr = match &psnr_stats {
            Some(s) => Some(s.mean),
            None if !psnrs.is_empty() => Some(f64::INFINITY),
            None => None,
        };
        cells.insert(
            key,
            CellSummary {
                images: rs.len(),
                mean_psnr,
                mean_ssim: ssim_stats.as_ref().map(|s| s.mean),
                psnr_stats,
                ssim_stats,
            },
        );
    }

    let mut rankings = Vec::new();
    for d in &datasets {
        match rank_methods(records, d) {
            Ok(r) => rankings.push(r),
            Err(Error::Empty) => rankings.push(MethodRanking::from_scores(d.clone(), [])),
            Err(e) => return Err(e),
        }
    }
    let tau = rankings
        .iter()
        .map(|a| rankings.iter().map(|b| kendall_tau(a, b).ok()).collect())
        .collect();
    Ok(Summary {
        datasets,
        methods,
        cells,
        rankings,
        tau,
    })
}

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => format!("{x:.decimals$}"),
        None => "-".into(),
    }
}

impl Summary {
    fn mean_table(&self, out: &mut String, title: &str, decimals: usize, pick: fn(&CellSummary) -> Option<f64>) {
        let _ = writeln!(out, "{title}");
        let width = self.datasets.iter().map(String::len).max().unwrap_or(0).max(7);
        let col = |m: &String| m.len().max(decimals + 6);
        let _ = write!(out, "{:<width$}", "dataset");
        for m in &self.methods {
            let _ = write!(out, "  {:>w$}", m, w = col(m));
        }
        out.push('\n');
        for d in &self.datasets {
            let values: Vec<Option<f64>> = self
                .methods
                .iter()
                .map(|m| self.cells.get(&(d.clone(), m.clone())).and_then(pick))
                .collect();
            let best = values.iter().flatten().copied().fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.max(v)))
            });
            let _ = write!(out, "{d:<width$}");
            for (m, v) in self.methods.iter().zip(&values) {
                let flag = if v.is_some() && *v == best { "*" } else { " " };
                let _ = write!(out, "  {:>w$}", format!("{}{flag}", fmt_opt(*v, decimals)), w = col(m));
            }
            out.push('\n');
        }
    }

    /// Table-1-style means with the best method per dataset marked `*`,
    /// followed by per-cell distributions; rankings and tau matrix optional.
    pub fn render(&self, rank: bool, tau: bool) -> String {
        let mut out = String::new();
        self.mean_table(&mut out, "Mean PSNR (dB), * = best per dataset", 2, |c| c.mean_psnr);
        out.push('\n');
        self.mean_table(&mut out, "Mean SSIM, * = best per dataset", 4, |c| c.mean_ssim);
        out.push('\n');
        let _ = writeln!(out, "Distributions (count mean median p10 p25 p75 p90)");
        for ((d, m), c) in &self.cells {
            for (label, stats, dec) in [("psnr", &c.psnr_stats, 2), ("ssim", &c.ssim_stats, 4)] {
                if let Some(s) = stats {
                    let _ = writeln!(
                        out,
                        "{d} {m} {label}: {} {:.dec$} {:.dec$} {:.dec$} {:.dec$} {:.dec$} {:.dec$}",
                        s.count, s.mean, s.median, s.p10, s.p25, s.p75, s.p90
                    );
                }
            }
        }
        if rank {
            out.push('\n');
            let _ = writeln!(out, "Rankings by mean PSNR");
            for r in &self.rankings {
                let entries: Vec<String> = r
                    .ordered_methods
                    .iter()
                    .zip(&r.scores)
                    .map(|(m, s)| format!("{m} ({})", fmt_opt(Some(*s), 2)))
                    .collect();
                let _ = writeln!(out, "{}: {}", r.noise_regime, entries.join(" > "));
            }
        }
        if tau {
            out.push('\n');
            let _ = writeln!(out, "Kendall tau between dataset rankings");
            let width = self.datasets.iter().map(String::len).max().unwrap_or(0).max(6);
            let _ = write!(out, "{:<width$}", "");
            for d in &self.datasets {
                let _ = write!(out, "  {:>w$}", d, w = d.len().max(6));
            }
            out.push('\n');
            for (d, row) in self.datasets.iter().zip(&self.tau) {
                let _ = write!(out, "{d:<width$}");
                for (e, t) in self.datasets.iter().zip(row) {
                    let cell = t.map_or_else(|| "n/a".to_owned(), |t| format!("{t:.4}"));
                    let _ = write!(out, "  {:>w$}", cell, w = e.len().max(6));
                }
                out.push('\n');
            }
        }
        out
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.render(true, true))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(method: &str, dataset: &str, id: &str, psnr: f64) -> EvaluationRecord {
        EvaluationRecord {
            method: method.into(),
            dataset: dataset.into(),
            image_id: id.into(),
            psnr_db: Some(psnr),
            ssim: Some(0.5),
            wall_time_s: 0.125,
            output_path: PathBuf::from(method).join(dataset).join(format!("{id}.png")),
        }
    }

    #[test]
    fn sig6_formatting() {
        let cases = [
            (14.959812345, "14.9598"),
            (0.000123456789, "0.000123457"),
            (123456789.0, "1.23457e8"),
            (0.5, "0.5"),
            (9.9999996, "10"),
            (1e-7, "1e-7"),
            (100000.0, "100000"),
            (999999.7, "1e6"),
            (-2.5, "-2.5"),
            (f64::INFINITY, "inf"),
            (0.0, "0"),
        ];
        for (v, s) in cases {
            assert_eq!(format_sig6(v), s, "{v}");
        }
    }

    #[test]
    fn empty_is_header_only() {
        assert_eq!(csv_string(&[]).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
        assert!(parse_csv(&csv_string(&[]).unwrap()).unwrap().is_empty());
    }

    #[test]
    fn two_records_sorted() {
        let text = csv_string(&[rec("b", "d", "1", 20.0), rec("a", "d", "1", f64::INFINITY)]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "a,d,1,inf,0.5,0.125,a/d/1.png");
        assert!(lines[2].starts_with("b,d,1,20,"));
    }

    #[test]
    fn unknown_or_missing_column() {
        let text = "method,dataset,image_id,psnr_db,ssim,wall_time_s,output_path,lpips\n";
        assert!(matches!(parse_csv(text), Err(Error::CsvSchema(m)) if m.contains("lpips")));
        assert!(matches!(parse_csv("method,dataset\n"), Err(Error::CsvSchema(_))));
        let bad = format!("{}\na,d,1,x,0.5,1,p\n", CSV_HEADER.join(","));
        assert!(matches!(parse_csv(&bad), Err(Error::CsvSchema(_))));
    }

    #[test]
    fn missing_metric_is_empty_field() {
        let mut r = rec("a", "d", "1", 3.0);
        r.ssim = None;
        let back = parse_csv(&csv_string(&[r.clone()]).unwrap()).unwrap();
        assert_eq!(back, vec![r]);
    }

    proptest! {
        #[test]
        fn csv_round_trip_at_printed_precision(
            psnr in 0.0f64..100.0, ssim in -1.0f64..1.0, t in 0.0f64..1000.0,
            id in "[a-z0-9_]{1,8}",
        ) {
            let r = EvaluationRecord {
                method: "m".into(), dataset: "d".into(), image_id: id,
                psnr_db: Some(psnr), ssim: Some(ssim), wall_time_s: t,
                output_path: PathBuf::from("m/d/x.png"),
            };
            let back = parse_csv(&csv_string(&[r.clone()]).unwrap()).unwrap();
            prop_assert_eq!(back.len(), 1);
            let b = &back[0];
            let close = |a: f64, b: f64| (a - b).abs() <= 5e-6 * a.abs().max(1e-300) + 1e-300;
            prop_assert!(close(psnr, b.psnr_db.unwrap()));
            prop_assert!(close(ssim, b.ssim.unwrap()) || (ssim.abs() < 1e-5 && (ssim - b.ssim.unwrap()).abs() < 1e-10));
            prop_assert!(close(t, b.wall_time_s) || t < 1e-5);
            prop_assert_eq!(&b.image_id, &r.image_id);
            // printing again is a fixed point
            prop_assert_eq!(csv_string(&back).unwrap(), csv_string(&[r]).unwrap());
        }
    }

    #[test]
    fn single_method_summary() {
        let s = emit_summary(&[rec("a", "d1", "1", 20.0), rec("a", "d2", "1", 30.0)]).unwrap();
        assert_eq!(s.rankings[0].ordered_methods, vec!["a"]);
        assert!(s.tau.iter().flatten().all(|t| *t == Some(1.0)));
    }

    #[test]
    fn identical_orderings_give_unit_tau() {
        let mut rs = Vec::new();
        for (d, off) in [("d1", 0.0), ("d2", 5.0)] {
            for (m, p) in [("a", 30.0), ("b", 20.0), ("c", 10.0)] {
                rs.push(rec(m, d, "1", p + off));
            }
        }
        let s = emit_summary(&rs).unwrap();
        assert_eq!(s.tau[0][1], Some(1.0));
        assert_eq!(s.tau[1][0], Some(1.0));
    }

    #[test]
    fn one_swap_gives_one_third() {
        let mut rs = Vec::new();
        for (m, p) in [("a", 30.0), ("b", 20.0), ("c", 10.0)] {
            rs.push(rec(m, "d1", "1", p));
        }
        for (m, p) in [("a", 30.0), ("c", 20.0), ("b", 10.0)] {
            rs.push(rec(m, "d2", "1", p));
        }
        let s = emit_summary(&rs).unwrap();
        assert!((s.tau[0][1].unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn undefined_tau_and_best_flag() {
        // all methods tied in d1 -> tau undefined
        let rs = vec![
            rec("a", "d1", "1", 10.0),
            rec("b", "d1", "1", 10.0),
            rec("a", "d2", "1", 12.0),
            rec("b", "d2", "1", 11.0),
        ];
        let s = emit_summary(&rs).unwrap();
        assert_eq!(s.tau[0][1], None);
        let text = s.to_string();
        assert!(text.contains("n/a"));
        assert!(text.contains("12.00*"));
        assert!(text.contains("a (12.00) > b (11.00)"));
    }

    #[test]
    fn infinite_psnr_cell() {
        let s = emit_summary(&[rec("id", "d", "1", f64::INFINITY)]).unwrap();
        let c = &s.cells[&("d".to_owned(), "id".to_owned())];
        assert_eq!(c.mean_psnr, Some(f64::INFINITY));
        assert!(c.psnr_stats.is_none());
        assert!(s.render(false, false).contains("inf"));
    }
}
