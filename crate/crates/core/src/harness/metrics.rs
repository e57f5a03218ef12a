//! Bits-per-dimension, NELBO bookkeeping and the metrics CSV.

use std::fmt::Write as _;

use crate::error::{Result, VqError};

/// Header of every metrics CSV.
pub const CSV_HEADER: &str = "iteration,task_loss,bpd,perplexity,used_tokens,nelbo_uniform,nelbo_unigram";

/// Negative log-likelihood in nats converted to bits per data dimension.
pub fn bpd(nll_nats: f64, dims: usize) -> f64 {
    nll_nats / (dims as f64 * std::f64::consts::LN_2)
}

/// NELBO under a uniform prior over `K` codes: every latent costs `log₂K`
/// bits, amortized over the data dimensions it accounts for.
pub fn nelbo_uniform(bpd: f64, k: usize, dims_per_latent: f64) -> f64 {
    bpd + (k as f64).log2() / dims_per_latent
}

/// NELBO under the empirical (unigram) code prior, whose cost per latent is
/// `log₂(perplexity)` bits.
pub fn nelbo_unigram(bpd: f64, perplexity: f64, dims_per_latent: f64) -> f64 {
    bpd + perplexity.log2() / dims_per_latent
}

/// One evaluation on held-out data. `None` renders as an empty CSV field.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    /// Mean task loss in nats per example.
    pub task_loss: f64,
    pub bpd: Option<f64>,
    /// Mean over heads of the per-head perplexity.
    pub perplexity: Option<f64>,
    /// Summed over heads.
    pub used_tokens: Option<usize>,
    pub nelbo_uniform: Option<f64>,
    pub nelbo_unigram: Option<f64>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration,
            self.task_loss,
            opt(self.bpd),
            opt(self.perplexity),
            opt(self.used_tokens),
            opt(self.nelbo_uniform),
            opt(self.nelbo_unigram),
        )
    }

    pub fn from_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 7 {
            return Err(VqError::Format(format!("expected 7 CSV fields, got {}", fields.len())));
        }
        fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.parse().map_err(|_| VqError::Format(format!("bad CSV number `{s}`")))
        }
        fn opt_num<T: std::str::FromStr>(s: &str) -> Result<Option<T>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        }
        Ok(Self {
            iteration: num(fields[0])?,
            task_loss: num(fields[1])?,
            bpd: opt_num(fields[2])?,
            perplexity: opt_num(fields[3])?,
            used_tokens: opt_num(fields[4])?,
            nelbo_uniform: opt_num(fields[5])?,
            nelbo_unigram: opt_num(fields[6])?,
        })
    }
}

/// Full CSV text: header plus one line per row, `\n` terminated.
pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv_line());
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(VqError::Format(format!(
                "unexpected metrics header {other:?}"
            )))
        }
    }
    lines.filter(|l| !l.is_empty()).map(MetricsRow::from_csv_line).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpd_examples() {
        assert!((bpd(128.0 * std::f64::consts::LN_2, 128) - 1.0).abs() < 1e-15);
        assert_eq!(bpd(0.0, 10), 0.0);
        let (nll, dims) = (37.25, 16);
        assert!((bpd(nll, dims) - nll / 16.0 / 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn nelbo_degenerate_cases() {
        assert_eq!(nelbo_uniform(0.4, 1, 128.0), 0.4);
        assert_eq!(nelbo_unigram(0.4, 1.0, 128.0), 0.4);
    }

    #[test]
    fn csv_renders_absent_values_empty() {
        let row = MetricsRow {
            iteration: 100,
            task_loss: 1.5,
            bpd: Some(0.25),
            perplexity: None,
            used_tokens: None,
            nelbo_uniform: None,
            nelbo_unigram: None,
        };
        assert_eq!(row.to_csv_line(), "100,1.5,0.25,,,,");
        let text = to_csv(std::slice::from_ref(&row));
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(parse_csv(&text).unwrap(), vec![row]);
    }
}
