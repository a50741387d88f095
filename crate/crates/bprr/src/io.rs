//! Data ingestion, chain persistence, and report emission.
//!
//! The chain file is line-delimited text: a key=value header, then one
//! record per retained draw holding the iteration index, the allocation
//! bit-string, the rank, rho, and the column-stacked C and Sigma entries
//! printed with 17 significant digits (exact f64 round trip). All writes go
//! through a temp-file-then-rename so partial output never lands under the
//! target name.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::diagnostics::{ChainSummary, CodaReport};
use crate::error::{Error, Result};
use crate::sampler::{ChainMeta, ChainOutput, Draw};
use crate::sim::ScenarioReport;
use crate::types::Dataset;

pub const CHAIN_FORMAT_VERSION: u32 = 1;

/// Writes `contents` atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Exact-round-trip decimal encoding of an f64 (17 significant digits).
fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV ingestion options.
#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Standardize each selected column to mean 0, sample SD 1.
    pub standardize: bool,
    /// Column holding the period label (used by `period`).
    pub date_column: Option<String>,
    /// Inclusive [start, end] filter on the date column, compared as
    /// strings; works for fixed-width labels such as `2014Q1` or ISO dates.
    pub period: Option<(String, String)>,
}

/// Reads a header-row CSV and extracts the named response and predictor
/// columns into a [`Dataset`].
pub fn ingest_csv(
    path: &Path,
    response_columns: &[String],
    predictor_columns: &[String],
    options: &IngestOptions,
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header row: {e}")))?
        .clone();
    let col_index: HashMap<&str, usize> =
        headers.iter().enumerate().map(|(i, h)| (h, i)).collect();

    let locate = |name: &String| -> Result<usize> {
        col_index
            .get(name.as_str())
            .copied()
            .ok_or_else(|| Error::Data(format!("column '{name}' not found in {}", path.display())))
    };
    let resp_idx: Vec<usize> = response_columns.iter().map(locate).collect::<Result<_>>()?;
    let pred_idx: Vec<usize> = predictor_columns.iter().map(locate).collect::<Result<_>>()?;
    let date_idx = match (&options.date_column, &options.period) {
        (Some(c), _) => Some(locate(c)?),
        (None, Some(_)) => {
            return Err(Error::Config("period filter needs a date column".into()));
        }
        (None, None) => None,
    };

    let mut y_rows: Vec<Vec<f64>> = Vec::new();
    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::Data(format!("row {}: {e}", line_no + 2)))?;
        if let (Some(di), Some((start, end))) = (date_idx, &options.period) {
            let label = record.get(di).unwrap_or("");
            if label < start.as_str() || label > end.as_str() {
                continue;
            }
        }
        let parse = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).ok_or_else(|| {
                Error::Data(format!("row {}: missing field '{name}'", line_no + 2))
            })?;
            let v: f64 = raw.parse().map_err(|_| {
                Error::Data(format!(
                    "row {}, column '{name}': non-numeric value '{raw}'",
                    line_no + 2
                ))
            })?;
            if v.is_nan() {
                return Err(Error::Data(format!(
                    "row {}, column '{name}': NaN is not allowed",
                    line_no + 2
                )));
            }
            Ok(v)
        };
        let mut yr = Vec::with_capacity(resp_idx.len());
        for (k, &i) in resp_idx.iter().enumerate() {
            yr.push(parse(i, &response_columns[k])?);
        }
        let mut xr = Vec::with_capacity(pred_idx.len());
        for (k, &i) in pred_idx.iter().enumerate() {
            xr.push(parse(i, &predictor_columns[k])?);
        }
        y_rows.push(yr);
        x_rows.push(xr);
    }
    if y_rows.is_empty() {
        return Err(Error::Data(format!("no rows selected from {}", path.display())));
    }

    let n = y_rows.len();
    let mut y = DMatrix::from_fn(n, resp_idx.len(), |i, j| y_rows[i][j]);
    let mut x = DMatrix::from_fn(n, pred_idx.len(), |i, j| x_rows[i][j]);
    if options.standardize {
        for (m, labels) in [(&mut y, response_columns), (&mut x, predictor_columns)] {
            for j in 0..m.ncols() {
                let mean = m.column(j).mean();
                let var = m.column(j).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (n as f64 - 1.0);
                if var <= 0.0 {
                    return Err(Error::Data(format!(
                        "column '{}' is constant and cannot be standardized",
                        labels[j]
                    )));
                }
                let sd = var.sqrt();
                for i in 0..n {
                    m[(i, j)] = (m[(i, j)] - mean) / sd;
                }
            }
        }
    }
    Dataset::new(
        y,
        x,
        response_columns.to_vec(),
        predictor_columns.to_vec(),
        options.standardize,
    )
}

/// Serializes a chain to the line-delimited text format.
pub fn chain_to_string(chain: &ChainOutput) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "bprr-chain format_version={} p={} q={} n={} seed={} stream_id={} n_iter={} burn_in={} thin={} msss_proposed={} msss_accepted={} evidence_nonconverged={}\n",
        CHAIN_FORMAT_VERSION,
        chain.p,
        chain.q,
        chain.n,
        chain.seed,
        chain.stream_id,
        chain.n_iter,
        chain.burn_in,
        chain.thin,
        chain.meta.msss_proposed,
        chain.meta.msss_accepted,
        chain.meta.evidence_nonconverged,
    ));
    for d in &chain.draws {
        let gamma: String = d.gamma.iter().map(|&g| if g == 1 { '1' } else { '0' }).collect();
        let mut fields = Vec::with_capacity(4 + chain.p * chain.q + chain.q * chain.q);
        fields.push(d.iteration.to_string());
        fields.push(gamma);
        fields.push(d.r.to_string());
        fields.push(format_f64(d.rho));
        fields.extend(d.c.as_slice().iter().map(|&v| format_f64(v)));
        fields.extend(d.sigma.as_slice().iter().map(|&v| format_f64(v)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_chain(chain: &ChainOutput, path: &Path) -> Result<()> {
    atomic_write(path, &chain_to_string(chain))
}

fn header_value<'a>(fields: &'a HashMap<&str, &str>, key: &str) -> Result<&'a str> {
    fields
        .get(key)
        .copied()
        .ok_or_else(|| Error::Format(format!("chain header is missing '{key}'")))
}

fn parse_num<T: std::str::FromStr>(raw: &str, what: &str) -> Result<T> {
    raw.parse::<T>()
        .map_err(|_| Error::Format(format!("cannot parse {what} from '{raw}'")))
}

/// Reads a chain file back; format violations name the offending line.
pub fn read_chain(path: &Path) -> Result<ChainOutput> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.split('\n');
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty chain file".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("bprr-chain") {
        return Err(Error::Format("not a chain file (bad magic)".into()));
    }
    let kv: HashMap<&str, &str> = parts
        .filter_map(|p| p.split_once('='))
        .collect();
    let version: u32 = parse_num(header_value(&kv, "format_version")?, "format_version")?;
    if version != CHAIN_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "chain format version {version} is not supported (expected {CHAIN_FORMAT_VERSION})"
        )));
    }
    let p: usize = parse_num(header_value(&kv, "p")?, "p")?;
    let q: usize = parse_num(header_value(&kv, "q")?, "q")?;
    let n: usize = parse_num(header_value(&kv, "n")?, "n")?;
    let seed: u64 = parse_num(header_value(&kv, "seed")?, "seed")?;
    let stream_id: u64 = parse_num(header_value(&kv, "stream_id")?, "stream_id")?;
    let n_iter: usize = parse_num(header_value(&kv, "n_iter")?, "n_iter")?;
    let burn_in: usize = parse_num(header_value(&kv, "burn_in")?, "burn_in")?;
    let thin: usize = parse_num(header_value(&kv, "thin")?, "thin")?;
    let meta = ChainMeta {
        msss_proposed: parse_num(header_value(&kv, "msss_proposed")?, "msss_proposed")?,
        msss_accepted: parse_num(header_value(&kv, "msss_accepted")?, "msss_accepted")?,
        evidence_nonconverged: parse_num(
            header_value(&kv, "evidence_nonconverged")?,
            "evidence_nonconverged",
        )?,
        elapsed_ms: 0,
    };

    let expected_fields = 4 + p * q + q * q;
    let mut draws = Vec::new();
    let mut ended = false;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.is_empty() {
            ended = true;
            continue;
        }
        if ended {
            return Err(Error::Format(format!("unexpected content after blank line {line_no}")));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_fields {
            return Err(Error::Format(format!(
                "line {line_no}: expected {expected_fields} fields, found {} (truncated or corrupt record)",
                fields.len()
            )));
        }
        let iteration: usize = parse_num(fields[0], "iteration")?;
        let gamma_str = fields[1];
        if gamma_str.len() != q || gamma_str.chars().any(|c| c != '0' && c != '1') {
            return Err(Error::Format(format!(
                "line {line_no}: allocation bit-string '{gamma_str}' is not {q} bits"
            )));
        }
        let gamma: Vec<u8> = gamma_str.chars().map(|c| (c == '1') as u8).collect();
        let r: usize = parse_num(fields[2], "r")?;
        let rho: f64 = parse_num(fields[3], "rho")?;
        let mut values = Vec::with_capacity(p * q + q * q);
        for f in &fields[4..] {
            values.push(parse_num::<f64>(f, "coefficient")?);
        }
        let c = DMatrix::from_column_slice(p, q, &values[..p * q]);
        let sigma = DMatrix::from_column_slice(q, q, &values[p * q..]);
        draws.push(Draw { iteration, gamma, r, c, sigma, rho });
    }
    if !ended {
        return Err(Error::Format(
            "chain file does not end with a newline (truncated last record)".into(),
        ));
    }
    Ok(ChainOutput { p, q, n, seed, stream_id, n_iter, burn_in, thin, draws, meta })
}

/// Allocation posterior histogram as `gamma,count,frequency` rows, most
/// frequent first.
pub fn gamma_histogram_csv(summary: &ChainSummary) -> String {
    let mut out = String::from("gamma,count,frequency\n");
    for (bits, freq) in &summary.gamma_posterior {
        let count = (freq * summary.n_draws as f64).round() as usize;
        out.push_str(&format!("{bits},{count},{freq}\n"));
    }
    out
}

/// Rank posterior histogram as `r,count,frequency` rows, ascending rank.
pub fn r_histogram_csv(summary: &ChainSummary) -> String {
    let mut out = String::from("r,count,frequency\n");
    for (r, freq) in &summary.r_posterior {
        let count = (freq * summary.n_draws as f64).round() as usize;
        out.push_str(&format!("{r},{count},{freq}\n"));
    }
    out
}

/// Benchmark-table-shaped CSV, one row per scenario.
pub fn scenario_reports_csv(reports: &[ScenarioReport]) -> String {
    let mut out = String::from(
        "p,q,q_gamma,r,n,replicates,failed,q_gamma_hat,r_hat,accuracy,f1,\
         mse_bprr_x100,mse_fr_x100,mse_rr_x100,mse_prr_star_x100\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.p,
            r.q,
            r.q_gamma0,
            r.r0,
            r.n,
            r.n_replicates,
            r.n_failed,
            r.avg_q_gamma_hat,
            r.avg_r_hat,
            r.avg_accuracy,
            r.avg_f1,
            100.0 * r.avg_mse_bprr,
            100.0 * r.avg_mse_fr,
            100.0 * r.avg_mse_rr,
            100.0 * r.avg_mse_prr_star,
        ));
    }
    out
}

/// Plain matrix CSV with a header of column names.
pub fn matrix_csv(m: &DMatrix<f64>, columns: &[String]) -> String {
    let mut out = String::new();
    out.push_str(&columns.join(","));
    out.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Convergence report CSV: the rank row plus one row per coefficient entry,
/// then the three pass-share summary rows.
pub fn coda_csv(report: &CodaReport) -> String {
    let mut out = String::from(
        "series,geweke_p,geweke_pass,hw_stationarity_p,hw_stationarity_pass,\
         hw_halfwidth_ratio,hw_halfwidth_pass\n",
    );
    let fmt_entry = |e: &crate::diagnostics::CodaEntry| -> String {
        format!(
            "{},{},{},{},{},{},{}\n",
            e.label,
            e.geweke_p,
            e.geweke_pass,
            e.hw_stationarity_p,
            e.hw_stationarity_pass,
            e.hw_halfwidth_ratio.map_or(String::from("undefined"), |r| r.to_string()),
            e.hw_halfwidth_pass,
        )
    };
    out.push_str(&fmt_entry(&report.rank));
    for e in &report.c_entries {
        out.push_str(&fmt_entry(e));
    }
    out.push_str(&format!(
        "share_geweke,{}\nshare_hw_stationarity,{}\nshare_hw_halfwidth,{}\n",
        report.c_geweke_share, report.c_hw_stationarity_share, report.c_hw_halfwidth_share
    ));
    out
}

/// Chain summary as pretty JSON.
pub fn summary_json(summary: &ChainSummary) -> Result<String> {
    serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Format(format!("cannot serialize summary: {e}")))
}
