use std::fmt::Write;

use deltavox::metrics::EvalReport;

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

/// Bucket-normalized ratios then three-way EPE in centimeters.
pub fn eval_table(r: &EvalReport) -> String {
    let b = &r.bucket;
    let t = &r.threeway;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8}{:<8}{:<8}{:<8}{:<8}| {:<8}{:<8}{:<8}{:<8}",
        "Mean", "CAR", "OTHER", "PED", "VRU", "Mean", "FD", "FS", "BS"
    );
    let _ = writeln!(
        s,
        "{:<8}{:<8}{:<8}{:<8}{:<8}| {:<8}{:<8}{:<8}{:<8}",
        cell(b.mean, 3),
        cell(b.ratios[0], 3),
        cell(b.ratios[1], 3),
        cell(b.ratios[2], 3),
        cell(b.ratios[3], 3),
        cell(Some(t.mean), 2),
        cell(Some(t.fd), 2),
        cell(Some(t.fs), 2),
        cell(Some(t.bs), 2),
    );
    s
}
