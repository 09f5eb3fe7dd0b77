//! Per-scene tables closed by Best/Average/Worst rows.

use std::fmt::Write as _;

/// Which direction counts as "best" for a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Better {
    Low,
    High,
}

#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub better: Better,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, better: Better, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            better,
            values,
        }
    }

    /// Best, average and worst over the column's values.
    pub fn summary(&self) -> [f64; 3] {
        let v = &self.values;
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let avg = v.iter().sum::<f64>() / v.len() as f64;
        match self.better {
            Better::Low => [lo, avg, hi],
            Better::High => [hi, avg, lo],
        }
    }
}

/// Renders one row per labeled scene, then Best/Average/Worst. All columns
/// must have one value per row label.
pub fn render(row_labels: &[String], columns: &[Column]) -> String {
    let width = columns.iter().map(|c| c.name.len().max(10)).collect::<Vec<_>>();
    let mut s = format!("{:<8}", "scene");
    for (c, w) in columns.iter().zip(&width) {
        let _ = write!(s, " {:>w$}", c.name);
    }
    s.push('\n');
    let line = |s: &mut String, label: &str, vals: &mut dyn Iterator<Item = f64>| {
        let _ = write!(s, "{label:<8}");
        for (v, w) in vals.zip(&width) {
            let _ = write!(s, " {v:>w$.4}");
        }
        s.push('\n');
    };
    for (r, label) in row_labels.iter().enumerate() {
        line(&mut s, label, &mut columns.iter().map(|c| c.values[r]));
    }
    if row_labels.is_empty() {
        s.push_str("(no scenes)\n");
        return s;
    }
    let sums: Vec<[f64; 3]> = columns.iter().map(Column::summary).collect();
    for (k, name) in ["best", "average", "worst"].iter().enumerate() {
        line(&mut s, name, &mut sums.iter().map(|x| x[k]));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_follows_direction() {
        let c = Column::new("acc", Better::Low, vec![0.5, 0.1, 0.3]);
        assert_eq!(c.summary()[0], 0.1);
        assert_eq!(c.summary()[2], 0.5);
        assert!((c.summary()[1] - 0.3).abs() < 1e-12);
        let p = Column::new("psr", Better::High, vec![0.5, 0.1]);
        assert_eq!(p.summary(), [0.5, 0.3, 0.1]);
    }

    #[test]
    fn render_has_summary_rows() {
        let t = render(&["0000".into()], &[Column::new("acc", Better::Low, vec![0.25])]);
        let last: Vec<&str> = t.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
        assert_eq!(last, ["scene", "0000", "best", "average", "worst"]);
    }
}
