//! Column summaries: counts, missing cells, mean and standard deviation,
//! plus a share table for low-cardinality columns.

use std::fmt::Write;
use trivar::model::Dataset;

const SHARE_TABLE_MAX_LEVELS: usize = 10;

pub fn describe(data: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "rows: {}", data.n());
    let _ = writeln!(
        out,
        "{:<22} {:>8} {:>8} {:>12} {:>12} {:>12} {:>12}",
        "column", "n", "missing", "mean", "sd", "min", "max"
    );
    for name in data.names() {
        let col = data.column(name).unwrap();
        let observed: Vec<f64> = col.iter().cloned().filter(|v| !v.is_nan()).collect();
        let missing = col.len() - observed.len();
        if observed.is_empty() {
            let _ = writeln!(
                out,
                "{name:<22} {:>8} {missing:>8} {:>12} {:>12} {:>12} {:>12}",
                0, "-", "-", "-", "-"
            );
            continue;
        }
        let n = observed.len() as f64;
        let mean = observed.iter().sum::<f64>() / n;
        let sd = (observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let min = observed.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = observed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            out,
            "{name:<22} {:>8} {missing:>8} {mean:>12.4} {sd:>12.4} {min:>12.4} {max:>12.4}",
            observed.len()
        );
    }
    // share tables for discrete-looking columns
    for name in data.names() {
        let col = data.column(name).unwrap();
        let mut levels: Vec<f64> = Vec::new();
        let mut discrete = true;
        for v in col.iter().filter(|v| !v.is_nan()) {
            if (v - v.round()).abs() > 1e-9 {
                discrete = false;
                break;
            }
            if !levels.contains(v) {
                levels.push(*v);
                if levels.len() > SHARE_TABLE_MAX_LEVELS {
                    discrete = false;
                    break;
                }
            }
        }
        if !discrete || levels.len() < 2 {
            continue;
        }
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let observed = col.iter().filter(|v| !v.is_nan()).count();
        let _ = writeln!(out, "\n{name}: category shares");
        for level in levels {
            let count = col.iter().filter(|&&v| v == level).count();
            let _ = writeln!(
                out,
                "  {level:>6}  {count:>8}  {:>7.2}%",
                100.0 * count as f64 / observed as f64
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn describes_counts_and_shares() {
        let mut ds = Dataset::new();
        ds.add_column("x".into(), vec![1.0, 2.0, 1.0, f64::NAN]).unwrap();
        ds.add_column("y".into(), vec![0.5, 1.5, 2.5, 3.5]).unwrap();
        let text = describe(&ds);
        assert!(text.contains("rows: 4"));
        assert!(text.contains("x: category shares"));
        assert!(text.contains("66.67%"), "{text}");
        assert!(!text.contains("y: category shares"));
    }
}
