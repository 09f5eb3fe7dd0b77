//! ASCII PLY export for offline viewing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyColor {
    /// The cloud's own color channels.
    #[default]
    Rgb,
    /// One fixed color per label (segmentation map). Needs labels.
    Labels,
}

const LABEL_PALETTE: [[u8; 3]; 13] = [
    [152, 142, 128],
    [220, 215, 200],
    [40, 90, 60],
    [190, 120, 60],
    [60, 80, 200],
    [120, 60, 30],
    [230, 60, 60],
    [240, 200, 40],
    [60, 200, 200],
    [180, 80, 200],
    [100, 100, 100],
    [250, 140, 200],
    [20, 20, 20],
];

/// Color channel in `[0, 1]` to an 8-bit value.
pub fn to_u8(c: f64) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn format_ply(cloud: &PointCloud, mode: PlyColor, labels: Option<&[usize]>) -> Result<String> {
    let labels = match mode {
        PlyColor::Rgb => None,
        PlyColor::Labels => Some(
            labels
                .or(cloud.labels())
                .ok_or_else(|| Error::InvalidArgument("label coloring needs labels".into()))?,
        ),
    };
    if let Some(l) = labels {
        if l.len() != cloud.len() {
            return Err(Error::Shape(format!("{} labels for {} points", l.len(), cloud.len())));
        }
    }
    let mut s = String::with_capacity(cloud.len() * 48 + 200);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(s, "property float {p}");
    }
    for p in ["red", "green", "blue"] {
        let _ = writeln!(s, "property uchar {p}");
    }
    s.push_str("end_header\n");
    for i in 0..cloud.len() {
        let p = cloud.coord(i);
        let rgb = match labels {
            Some(l) => LABEL_PALETTE[l[i] % LABEL_PALETTE.len()],
            None => {
                let f = cloud.feat(i);
                let ch = |j: usize| f.get(j).copied().map_or(0, to_u8);
                [ch(0), ch(1), ch(2)]
            }
        };
        let _ = writeln!(
            s,
            "{:.7} {:.7} {:.7} {} {} {}",
            p[0], p[1], p[2], rgb[0], rgb[1], rgb[2]
        );
    }
    Ok(s)
}

pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>, mode: PlyColor, labels: Option<&[usize]>) -> Result<()> {
    let path = path.as_ref();
    let text = format_ply(cloud, mode, labels)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_vertex_header_and_full_color() {
        let pc = PointCloud::new(vec![[0.25, -0.5, 1.0]], vec![1.0, 0.0, 0.5], 3, None, 1).unwrap();
        let text = format_ply(&pc, PlyColor::Rgb, None).unwrap();
        assert!(text.contains("element vertex 1\n"));
        let last = text.lines().last().unwrap();
        assert_eq!(last, "0.2500000 -0.5000000 1.0000000 255 0 128");
    }

    #[test]
    fn label_mode_requires_labels() {
        let pc = PointCloud::new(vec![[0.0; 3]], vec![0.5; 3], 3, None, 2).unwrap();
        assert!(format_ply(&pc, PlyColor::Labels, None).is_err());
        assert!(format_ply(&pc, PlyColor::Labels, Some(&[1])).is_ok());
    }
}
