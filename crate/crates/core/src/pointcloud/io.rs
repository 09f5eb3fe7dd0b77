//! PCSEG v1 text format.
//!
//! ```text
//! pcseg 1 <N> <K> <C> <has_label:0|1>
//! x y z f1 .. fK [label]      (N rows, whitespace separated)
//! ```
//!
//! Lines starting with `#` are comments. Rows hold raw units: coordinates
//! are rescaled by their centered bounding box and features divided by 255
//! on load. Files written by [`save_cloud`] carry a `# pcseg-normalized`
//! directive; for those, values are already in normalized units and are
//! taken verbatim, so a save/load round trip is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::cloud::{normalize_coords, PointCloud};
use crate::error::{Error, Result};

pub const NORMALIZED_DIRECTIVE: &str = "# pcseg-normalized";

/// Raw feature scale (8-bit color).
pub const FEATURE_SCALE: f64 = 255.0;

pub fn load_cloud(path: impl AsRef<Path>, has_label: bool) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&text, has_label).map_err(|(line, msg)| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    })
}

/// Parses PCSEG text. When `has_label` is false, labels in the file are
/// ignored and the returned cloud is unlabeled.
pub fn parse_cloud(text: &str, has_label: bool) -> std::result::Result<PointCloud, (usize, String)> {
    let mut normalized = false;
    let mut header: Option<(usize, usize, usize, bool)> = None;
    let mut coords = Vec::new();
    let mut feats = Vec::new();
    let mut labels = Vec::new();

    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if line == NORMALIZED_DIRECTIVE {
                normalized = true;
            }
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let Some((n, k, c, file_labels)) = header else {
            header = Some(parse_header(&toks).map_err(|m| (lineno, m))?);
            continue;
        };
        if coords.len() == n {
            return Err((lineno, format!("more than the declared {n} rows")));
        }
        let arity = 3 + k + usize::from(file_labels);
        if toks.len() != arity {
            return Err((lineno, format!("expected {arity} values, got {}", toks.len())));
        }
        let mut vals = Vec::with_capacity(3 + k);
        for t in &toks[..3 + k] {
            let v: f64 = t
                .parse()
                .map_err(|_| (lineno, format!("non-numeric token `{t}`")))?;
            if !v.is_finite() {
                return Err((lineno, format!("non-finite value `{t}`")));
            }
            vals.push(v);
        }
        coords.push([vals[0], vals[1], vals[2]]);
        for &f in &vals[3..] {
            let f = if normalized { f } else { f / FEATURE_SCALE };
            if !(0.0..=1.0).contains(&f) {
                return Err((lineno, format!("feature value `{f}` outside the valid range")));
            }
            feats.push(f);
        }
        if file_labels {
            let t = toks[3 + k];
            let y: usize = t
                .parse()
                .map_err(|_| (lineno, format!("non-numeric label `{t}`")))?;
            if y >= c {
                return Err((lineno, format!("label {y} outside [0, {c})")));
            }
            labels.push(y);
        }
    }

    let (n, k, c, file_labels) = header.ok_or((1, "missing header".to_string()))?;
    if coords.len() != n {
        return Err((
            text.lines().count(),
            format!("declared {n} rows, found {}", coords.len()),
        ));
    }
    if has_label && !file_labels {
        return Err((1, "labels requested but the file has none".into()));
    }
    if normalized {
        if let Some(v) = coords.iter().flatten().find(|v| v.abs() > 1.0) {
            return Err((1, format!("normalized file has coordinate {v} outside [-1, 1]")));
        }
    } else {
        normalize_coords(&mut coords);
    }
    let labels = (has_label && file_labels).then_some(labels);
    PointCloud::new(coords, feats, k, labels, c).map_err(|e| (1, e.to_string()))
}

fn parse_header(toks: &[&str]) -> std::result::Result<(usize, usize, usize, bool), String> {
    if toks.len() != 6 || toks[0] != "pcseg" {
        return Err("malformed header, expected `pcseg 1 <N> <K> <C> <0|1>`".into());
    }
    if toks[1] != "1" {
        return Err(format!("unsupported version `{}`", toks[1]));
    }
    let num = |t: &str, what: &str| {
        t.parse::<usize>()
            .map_err(|_| format!("malformed header: {what} `{t}`"))
    };
    let n = num(toks[2], "N")?;
    let k = num(toks[3], "K")?;
    let c = num(toks[4], "C")?;
    let has = match toks[5] {
        "0" => false,
        "1" => true,
        t => return Err(format!("malformed header: has_label `{t}`")),
    };
    if n == 0 {
        return Err("malformed header: N must be >= 1".into());
    }
    if c == 0 {
        return Err("malformed header: C must be >= 1".into());
    }
    Ok((n, k, c, has))
}

pub fn format_cloud(cloud: &PointCloud) -> String {
    let has = cloud.labels().is_some();
    let mut s = String::with_capacity(cloud.len() * 64);
    let _ = writeln!(
        s,
        "pcseg 1 {} {} {} {}",
        cloud.len(),
        cloud.num_feats(),
        cloud.num_classes(),
        u8::from(has)
    );
    s.push_str(NORMALIZED_DIRECTIVE);
    s.push('\n');
    for i in 0..cloud.len() {
        let p = cloud.coord(i);
        let _ = write!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]);
        for f in cloud.feat(i) {
            let _ = write!(s, " {f:?}");
        }
        if let Some(l) = cloud.labels() {
            let _ = write!(s, " {}", l[i]);
        }
        s.push('\n');
    }
    s
}

pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_cloud(cloud)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_row() {
        let pc = parse_cloud("pcseg 1 1 3 3 1\n0 0 0 255 0 0 2\n", true).unwrap();
        assert_eq!(pc.coord(0), [0.0, 0.0, 0.0]);
        assert_eq!(pc.feat(0), &[1.0, 0.0, 0.0]);
        assert_eq!(pc.labels().unwrap(), &[2]);
    }

    #[test]
    fn bbox_endpoints() {
        let pc = parse_cloud("# two points\npcseg 1 2 3 1 0\n0 0 0 0 0 0\n10 0 0 0 0 0\n", false)
            .unwrap();
        assert_eq!(pc.coord(0)[0], -1.0);
        assert_eq!(pc.coord(1)[0], 1.0);
    }

    #[test]
    fn error_paths() {
        let cases = [
            ("pcsg 1 1 3 3 1\n0 0 0 1 1 1 0\n", "malformed header"),
            ("pcseg 1 1 3 3 1\n0 0 0 1 1 0\n", "expected 7 values"),
            ("pcseg 1 1 3 3 1\n0 0 0 1 1 1 3\n", "outside [0, 3)"),
            ("pcseg 1 1 3 3 1\n0 0 x 1 1 1 0\n", "non-numeric"),
            ("pcseg 1 2 3 3 1\n0 0 0 1 1 1 0\n", "declared 2 rows"),
            ("pcseg 1 1 3 3 1\n0 0 0 1 1 1 0\n0 0 0 1 1 1 0\n", "more than"),
        ];
        for (text, want) in cases {
            let (_, msg) = parse_cloud(text, true).unwrap_err();
            assert!(msg.contains(want), "{text:?}: {msg}");
        }
    }

    #[test]
    fn unlabeled_load_drops_labels() {
        let pc = parse_cloud("pcseg 1 1 3 3 1\n0 0 0 1 1 1 0\n", false).unwrap();
        assert!(pc.labels().is_none());
        assert!(parse_cloud("pcseg 1 1 3 3 0\n0 0 0 1 1 1\n", true).is_err());
    }
}
