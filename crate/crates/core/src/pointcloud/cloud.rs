use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// A labeled or unlabeled point cloud in normalized units.
///
/// Coordinates lie in `[-1, 1]`, features (colors) in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Vec<[f64; 3]>,
    feats: Vec<f64>,
    num_feats: usize,
    labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl PointCloud {
    pub fn new(
        coords: Vec<[f64; 3]>,
        feats: Vec<f64>,
        num_feats: usize,
        labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(Error::InvalidArgument("point cloud needs at least one point".into()));
        }
        if feats.len() != n * num_feats {
            return Err(Error::Shape(format!(
                "{} feature values for {n} points with K={num_feats}",
                feats.len()
            )));
        }
        if let Some(p) = coords
            .iter()
            .flatten()
            .find(|v| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "coordinate {p} outside [-1, 1]"
            )));
        }
        if let Some(f) = feats.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("feature {f} outside [0, 1]")));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} points", l.len())));
            }
            if let Some(bad) = l.iter().find(|&&y| y >= num_classes) {
                return Err(Error::InvalidArgument(format!(
                    "label {bad} outside [0, {num_classes})"
                )));
            }
        }
        Ok(Self {
            coords,
            feats,
            num_feats,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> [f64; 3] {
        self.coords[i]
    }

    /// Flat N×K feature buffer.
    pub fn feats(&self) -> &[f64] {
        &self.feats
    }

    pub fn feat(&self, i: usize) -> &[f64] {
        &self.feats[i * self.num_feats..(i + 1) * self.num_feats]
    }

    pub fn num_feats(&self) -> usize {
        self.num_feats
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::InvalidArgument("point cloud has no labels".into()))
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn coords_tensor(&self) -> Tensor {
        Tensor::matrix(self.len(), 3, self.coords.iter().flatten().copied().collect())
            .expect("coords are N x 3")
    }

    pub fn feats_tensor(&self) -> Tensor {
        Tensor::matrix(self.len(), self.num_feats, self.feats.clone()).expect("feats are N x K")
    }

    /// Same labels, new field values.
    pub fn with_fields(&self, coords: Vec<[f64; 3]>, feats: Vec<f64>) -> Result<Self> {
        if coords.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} coordinates for a {}-point cloud",
                coords.len(),
                self.len()
            )));
        }
        Self::new(
            coords,
            feats,
            self.num_feats,
            self.labels.clone(),
            self.num_classes,
        )
    }

    pub fn with_labels(&self, labels: Option<Vec<usize>>) -> Result<Self> {
        Self::new(
            self.coords.clone(),
            self.feats.clone(),
            self.num_feats,
            labels,
            self.num_classes,
        )
    }

    /// Sub-cloud of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|&&r| r >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "row {bad} outside a {}-point cloud",
                self.len()
            )));
        }
        let coords = rows.iter().map(|&r| self.coords[r]).collect();
        let feats = rows.iter().flat_map(|&r| self.feat(r).iter().copied()).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| l[r]).collect());
        Self::new(coords, feats, self.num_feats, labels, self.num_classes)
    }

    /// Flat N×(3+K) buffer of `coords ‖ feats` per point.
    pub fn full_vectors(&self) -> Vec<f64> {
        let d = 3 + self.num_feats;
        let mut out = Vec::with_capacity(self.len() * d);
        for i in 0..self.len() {
            out.extend_from_slice(&self.coords[i]);
            out.extend_from_slice(self.feat(i));
        }
        out
    }
}

/// Rescales coordinates in place by their centered bounding box so the
/// longest axis spans exactly `[-1, 1]`. Aspect ratio is preserved; a
/// single point (or all-identical points) maps to the origin.
pub fn normalize_coords(coords: &mut [[f64; 3]]) {
    if coords.is_empty() {
        return;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in coords.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let center: [f64; 3] = std::array::from_fn(|a| (lo[a] + hi[a]) / 2.0);
    let half = (0..3).map(|a| (hi[a] - lo[a]) / 2.0).fold(0.0, f64::max);
    for p in coords.iter_mut() {
        for a in 0..3 {
            p[a] = if half > 0.0 {
                ((p[a] - center[a]) / half).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_labels() {
        let err = PointCloud::new(vec![[0.0; 3]], vec![0.5; 3], 3, Some(vec![3]), 3);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_empty() {
        assert!(PointCloud::new(vec![], vec![], 3, None, 1).is_err());
    }

    #[test]
    fn normalization_hits_bbox_endpoints() {
        let mut c = vec![[0.0, 1.0, 1.0], [10.0, 2.0, 1.0]];
        normalize_coords(&mut c);
        assert_eq!(c[0][0], -1.0);
        assert_eq!(c[1][0], 1.0);
        assert_eq!(c[0][1], -0.1);
        assert_eq!(c[0][2], 0.0);
    }

    #[test]
    fn single_point_maps_to_origin() {
        let mut c = vec![[3.0, -4.0, 7.5]];
        normalize_coords(&mut c);
        assert_eq!(c[0], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn select_keeps_labels_aligned() {
        let pc = PointCloud::new(
            vec![[0.0; 3], [0.5; 3], [1.0; 3]],
            vec![0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0],
            3,
            Some(vec![0, 1, 2]),
            3,
        )
        .unwrap();
        let s = pc.select(&[2, 0]).unwrap();
        assert_eq!(s.labels().unwrap(), &[2, 0]);
        assert_eq!(s.feat(0), &[1.0, 1.0, 1.0]);
        assert_eq!(s.coord(1), [0.0; 3]);
    }
}
