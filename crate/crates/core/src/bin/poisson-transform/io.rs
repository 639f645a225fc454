//! Chain CSV reading/writing and benchmark tables.

use std::fmt::Write as _;
use std::path::Path;

use poisson_transform::chain::{BenchmarkRow, SummaryRow};
use poisson_transform::{Domain, SampleSet};

use crate::Failure;

pub const CHAIN_HEADER: &str = "t,y";
pub const ROWS_HEADER: &str = "method,n,k,rep,theta1_true,theta2_true,theta1_hat,theta2_hat,err1,err2,ms";
pub const SUMMARY_HEADER: &str = "method,n,k,count,failures,bias1,bias2,rmse1,rmse2,bias_se1,bias_se2";

pub fn write_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            print_stdout(text);
            Ok(())
        }
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) ends the process quietly.
pub fn print_stdout(text: &str) {
    use std::io::Write as _;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: cannot write output: {e}");
        std::process::exit(2);
    }
}

pub fn chain_csv(sample: &SampleSet) -> String {
    let mut s = String::from(CHAIN_HEADER);
    s.push('\n');
    let _ = writeln!(s, "0,{}", sample.initial());
    for (t, y) in sample.points().iter().enumerate() {
        let _ = writeln!(s, "{},{}", t + 1, y);
    }
    s
}

pub fn chain_json(sample: &SampleSet) -> String {
    let rows: Vec<serde_json::Value> = std::iter::once(sample.initial())
        .chain(sample.points().iter().copied())
        .enumerate()
        .map(|(t, y)| serde_json::json!({ "t": t, "y": y }))
        .collect();
    serde_json::to_string_pretty(&rows).expect("serialisable") + "\n"
}

/// Reads a chain written by `simulate`: header `t,y`, `t = 0, 1, ...`.
pub fn read_chain(path: &Path, domain: Domain) -> Result<SampleSet, Failure> {
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::usage(format!("cannot read {name}: {e}")))?;
    let headers = reader.headers().map_err(|e| Failure::usage(format!("{name}: line 1: {e}")))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "y"] {
        return Err(Failure::usage(format!("{name}: line 1: expected header 't,y', found '{}'", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
            Failure::usage(format!("{name}: line {line}: {e}"))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
        let bad = |msg: String| Failure::usage(format!("{name}: line {line}: {msg}"));
        if rec.len() != 2 {
            return Err(bad(format!("expected 2 fields, found {}", rec.len())));
        }
        let t: usize = rec[0].parse().map_err(|_| bad(format!("invalid index '{}'", &rec[0])))?;
        if t != i {
            return Err(bad(format!("expected t = {i}, found {t}")));
        }
        let y: f64 = rec[1].parse().map_err(|_| bad(format!("invalid value '{}'", &rec[1])))?;
        if !domain.contains(y) {
            return Err(bad(format!("value {y} lies outside [{}, {}]", domain.lower(), domain.upper())));
        }
        values.push(y);
    }
    if values.len() < 2 {
        return Err(Failure::usage(format!("{name}: need the initial point and at least one observation")));
    }
    SampleSet::new(domain, values[0], values[1..].to_vec()).map_err(|e| Failure::usage(format!("{name}: {e}")))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn rows_csv(rows: &[BenchmarkRow]) -> String {
    let mut s = String::from(ROWS_HEADER);
    s.push('\n');
    for r in rows {
        let err = r.error();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{:.3}",
            r.method.name(),
            r.n,
            r.k,
            r.rep,
            r.theta_true[0],
            r.theta_true[1],
            opt(r.theta_hat.map(|h| h[0])),
            opt(r.theta_hat.map(|h| h[1])),
            opt(err.map(|e| e[0])),
            opt(err.map(|e| e[1])),
            r.wall_time_ms
        );
    }
    s
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in summary {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.method.name(),
            r.n,
            r.k,
            r.count,
            r.failures,
            r.bias[0],
            r.bias[1],
            r.rmse[0],
            r.rmse[1],
            r.bias_se[0],
            r.bias_se[1]
        );
    }
    s
}

pub fn rows_json(rows: &[BenchmarkRow]) -> String {
    serde_json::to_string_pretty(rows).expect("serialisable") + "\n"
}

pub fn summary_json(summary: &[SummaryRow]) -> String {
    serde_json::to_string_pretty(summary).expect("serialisable") + "\n"
}
