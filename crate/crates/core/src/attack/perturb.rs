use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::segmodel::Fields;

pub const COLOR_BOX: (f64, f64) = (0.0, 1.0);
pub const COORD_BOX: (f64, f64) = (-1.0, 1.0);

/// Current values of the attacked points' selected fields next to their
/// clean values. Rows are in target order; unselected fields are never
/// written, so applying a perturbation leaves them bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    indices: Vec<usize>,
    fields: Fields,
    num_feats: usize,
    clean_coords: Vec<[f64; 3]>,
    clean_feats: Vec<f64>,
    coords: Vec<[f64; 3]>,
    feats: Vec<f64>,
}

impl Perturbation {
    /// Zero perturbation of `indices`.
    pub fn new(cloud: &PointCloud, indices: &[usize], fields: Fields) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= cloud.len()) {
            return Err(Error::InvalidArgument(format!("index {i} outside the cloud")));
        }
        let clean_coords: Vec<[f64; 3]> = indices.iter().map(|&i| cloud.coord(i)).collect();
        let clean_feats: Vec<f64> = indices.iter().flat_map(|&i| cloud.feat(i).iter().copied()).collect();
        Ok(Self {
            indices: indices.to_vec(),
            fields,
            num_feats: cloud.num_feats(),
            coords: clean_coords.clone(),
            feats: clean_feats.clone(),
            clean_coords,
            clean_feats,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn fields(&self) -> Fields {
        self.fields
    }

    pub fn num_feats(&self) -> usize {
        self.num_feats
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn coord(&self, p: usize) -> [f64; 3] {
        self.coords[p]
    }

    pub fn clean_coord(&self, p: usize) -> [f64; 3] {
        self.clean_coords[p]
    }

    pub fn feat(&self, p: usize) -> &[f64] {
        &self.feats[p * self.num_feats..(p + 1) * self.num_feats]
    }

    pub fn clean_feat(&self, p: usize) -> &[f64] {
        &self.clean_feats[p * self.num_feats..(p + 1) * self.num_feats]
    }

    pub fn coord_delta(&self, p: usize) -> [f64; 3] {
        std::array::from_fn(|a| self.coords[p][a] - self.clean_coords[p][a])
    }

    pub fn color_delta(&self, p: usize) -> Vec<f64> {
        self.feat(p).iter().zip(self.clean_feat(p)).map(|(v, c)| v - c).collect()
    }

    pub(crate) fn set_coord(&mut self, p: usize, axis: usize, v: f64) {
        debug_assert!(self.fields.coords());
        self.coords[p][axis] = v;
    }

    pub(crate) fn set_feat(&mut self, p: usize, f: usize, v: f64) {
        debug_assert!(self.fields.color());
        self.feats[p * self.num_feats + f] = v;
    }

    /// Puts point `p` back to its clean values.
    pub fn restore(&mut self, p: usize) {
        self.coords[p] = self.clean_coords[p];
        let k = self.num_feats;
        self.feats[p * k..(p + 1) * k].copy_from_slice(&self.clean_feats[p * k..(p + 1) * k]);
    }

    /// Sum over attacked points of the squared color-delta norm.
    pub fn dist_l2_color(&self) -> f64 {
        self.feats
            .iter()
            .zip(&self.clean_feats)
            .map(|(v, c)| (v - c) * (v - c))
            .sum()
    }

    /// Number of attacked points with any coordinate delta above `tol`.
    pub fn dist_l0_coord(&self, tol: f64) -> usize {
        (0..self.len())
            .filter(|&p| self.coord_delta(p).iter().any(|d| d.abs() > tol))
            .count()
    }

    /// Largest absolute component of any delta.
    pub fn linf(&self) -> f64 {
        let c = (0..self.len()).flat_map(|p| self.coord_delta(p));
        let f = self.feats.iter().zip(&self.clean_feats).map(|(v, c)| v - c);
        c.chain(f).fold(0.0, |m, d| m.max(d.abs()))
    }

    pub(crate) fn write_into(&self, coords: &mut [f64], feats: &mut [f64]) {
        let k = self.num_feats;
        for (p, &i) in self.indices.iter().enumerate() {
            if self.fields.coords() {
                coords[i * 3..i * 3 + 3].copy_from_slice(&self.coords[p]);
            }
            if self.fields.color() {
                feats[i * k..(i + 1) * k].copy_from_slice(self.feat(p));
            }
        }
    }

    /// The perturbed cloud.
    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let mut coords: Vec<f64> = cloud.coords().iter().flatten().copied().collect();
        let mut feats = cloud.feats().to_vec();
        self.write_into(&mut coords, &mut feats);
        let coords = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        cloud.with_fields(coords, feats)
    }
}

/// Maps a free variable into `(a, b)`.
pub fn tanh_map(w: f64, a: f64, b: f64) -> f64 {
    a + (b - a) / 2.0 * (w.tanh() + 1.0)
}

/// Inverse of [`tanh_map`]; `v` must lie strictly inside `(a, b)`.
pub fn tanh_unmap(v: f64, a: f64, b: f64) -> Result<f64> {
    if !(v > a && v < b) {
        return Err(Error::InvalidArgument(format!(
            "{v} is not strictly inside ({a}, {b})"
        )));
    }
    Ok((2.0 * (v - a) / (b - a) - 1.0).atanh())
}
