use std::sync::Arc;

use super::target::Mode;
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::pointcloud::{knn_points, Neighbors};

fn margins(logits: &Tensor, labels: &[usize]) -> Result<Vec<(f64, f64)>> {
    let (n, c) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    if c < 2 {
        return Err(Error::Shape("hinge needs at least two classes".into()));
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if y >= c {
                return Err(Error::InvalidArgument(format!("label {y} outside [0, {c})")));
            }
            let row = logits.row(i);
            let other = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != y)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            Ok((row[y], other))
        })
        .collect()
}

/// Sum over rows of `max(max_{j≠y} z_j − z_y, 0)`. Rows are the attacked
/// points; `targets` are the labels they should reach.
pub fn adv_loss_hiding(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    Ok(margins(logits, targets)?
        .into_iter()
        .map(|(zy, other)| (other - zy).max(0.0))
        .sum())
}

/// Sum over rows of `max(z_y − max_{j≠y} z_j, 0)` against ground truth `y`.
pub fn adv_loss_degradation(logits: &Tensor, gt: &[usize]) -> Result<f64> {
    Ok(margins(logits, gt)?
        .into_iter()
        .map(|(zy, other)| (zy - other).max(0.0))
        .sum())
}

pub fn adv_loss(mode: Mode, logits: &Tensor, labels: &[usize]) -> Result<f64> {
    match mode {
        Mode::Hiding => adv_loss_hiding(logits, labels),
        Mode::Degradation => adv_loss_degradation(logits, labels),
    }
}

/// Hinge of `mode` on the rows `indices` of full N×C logits, with margin `kappa`.
pub(crate) fn adv_loss_var(
    tape: &mut Tape,
    logits: Var,
    indices: &Arc<[usize]>,
    labels: &Arc<[usize]>,
    mode: Mode,
    kappa: f64,
) -> Result<Var> {
    let z = tape.gather_rows(logits, indices.clone())?;
    let zy = tape.pick_cols(z, labels.clone())?;
    let other = tape.row_max(z, Some(labels))?;
    let mut diff = match mode {
        Mode::Hiding => tape.sub(other, zy)?,
        Mode::Degradation => tape.sub(zy, other)?,
    };
    if kappa != 0.0 {
        let k = tape.constant(Tensor::filled(&[indices.len(), 1], kappa))?;
        diff = tape.add(diff, k)?;
    }
    let h = tape.relu(diff)?;
    tape.sum_all(h)
}

/// Neighbor table for the smoothness penalty: `alpha` nearest points by
/// coordinates.
pub fn smoothness_neighbors(coords: &[[f64; 3]], alpha: usize) -> Result<Neighbors> {
    let flat: Vec<f64> = coords.iter().flatten().copied().collect();
    knn_points(&flat, 3, alpha, None)
}

/// Sum over every point of the Euclidean distances, in the full
/// `coords ‖ feats` space, to its `alpha` coordinate-nearest neighbors.
pub fn smoothness(coords: &[[f64; 3]], feats: &[f64], num_feats: usize, alpha: usize) -> Result<f64> {
    let nb = smoothness_neighbors(coords, alpha)?;
    Ok(smoothness_with(coords, feats, num_feats, &nb))
}

pub(crate) fn smoothness_with(coords: &[[f64; 3]], feats: &[f64], k: usize, nb: &Neighbors) -> f64 {
    let mut total = 0.0;
    for i in 0..coords.len() {
        for &j in nb.row(i) {
            let c: f64 = (0..3).map(|a| (coords[i][a] - coords[j][a]).powi(2)).sum();
            let f: f64 = (0..k).map(|d| (feats[i * k + d] - feats[j * k + d]).powi(2)).sum();
            total += (c + f).sqrt();
        }
    }
    total
}

pub(crate) fn smoothness_var(tape: &mut Tape, coords: Var, feats: Var, nb: &Neighbors) -> Result<Var> {
    let x = tape.concat_cols(coords, feats)?;
    let own: Arc<[usize]> = (0..nb.rows()).flat_map(|i| std::iter::repeat_n(i, nb.k())).collect();
    let a = tape.gather_rows(x, own)?;
    let b = tape.gather_rows(x, Arc::from(nb.flat()))?;
    let d = tape.sub(a, b)?;
    let norms = tape.row_norm(d)?;
    tape.sum_all(norms)
}

/// Positions of the `n` candidates with the smallest per-point product
/// `g_p · r_p` (ties to the lower position), returned in ascending order.
/// `g` and `r` are flat with `dim` components per candidate.
pub fn min_imp(g: &[f64], r: &[f64], dim: usize, n: usize) -> Result<Vec<usize>> {
    if dim == 0 || g.len() != r.len() || g.len() % dim != 0 {
        return Err(Error::Shape(format!(
            "min_imp: {} gradient and {} delta components with dim {dim}",
            g.len(),
            r.len()
        )));
    }
    if g.is_empty() {
        return Err(Error::InvalidArgument("min_imp: no candidates".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("min_imp: n must be >= 1".into()));
    }
    let mut scored: Vec<(f64, usize)> = g
        .chunks_exact(dim)
        .zip(r.chunks_exact(dim))
        // `+ 0.0` folds -0.0 into 0.0 so signed zeros tie.
        .map(|(gp, rp)| gp.iter().zip(rp).map(|(a, b)| a * b).sum::<f64>() + 0.0)
        .zip(0..)
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = scored.into_iter().take(n).map(|(_, p)| p).collect();
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::matrix(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn hinge_cases() {
        assert_eq!(adv_loss_hiding(&row(&[5.0, 1.0, 1.0]), &[0]).unwrap(), 0.0);
        assert_eq!(adv_loss_hiding(&row(&[1.0, 3.0, 2.0]), &[0]).unwrap(), 2.0);
        assert_eq!(adv_loss_degradation(&row(&[5.0, 1.0, 1.0]), &[0]).unwrap(), 4.0);
        assert_eq!(adv_loss_degradation(&row(&[1.0, 3.0, 2.0]), &[0]).unwrap(), 0.0);
        assert!(adv_loss_hiding(&row(&[1.0, 2.0]), &[2]).is_err());
    }

    #[test]
    fn tape_hinge_matches_plain() {
        let z = Tensor::from_rows(&[vec![1.0, 3.0, 2.0], vec![0.5, -1.0, 4.0], vec![2.0, 2.0, 0.0]]).unwrap();
        let idx: Arc<[usize]> = Arc::from(vec![2, 0]);
        let lab: Arc<[usize]> = Arc::from(vec![1, 0]);
        let sub = Tensor::from_rows(&[z.row(2).to_vec(), z.row(0).to_vec()]).unwrap();
        for mode in [Mode::Hiding, Mode::Degradation] {
            let mut tape = Tape::new();
            let v = tape.constant(z.clone()).unwrap();
            let l = adv_loss_var(&mut tape, v, &idx, &lab, mode, 0.0).unwrap();
            assert_eq!(tape.value(l).item().unwrap(), adv_loss(mode, &sub, &lab).unwrap());
        }
    }

    #[test]
    fn smoothness_symmetric_pair() {
        let coords = [[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]];
        let feats = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let s = smoothness(&coords, &feats, 3, 1).unwrap();
        assert_eq!(s, 10.0);
        let same = smoothness(&[[0.1; 3]; 4], &[0.5; 12], 3, 2).unwrap();
        assert_eq!(same, 0.0);
        assert!(smoothness(&coords, &feats, 3, 2).is_err());
    }

    #[test]
    fn min_imp_cases() {
        assert_eq!(min_imp(&[0.1, -0.2, 0.5], &[1.0, 1.0, 1.0], 1, 1).unwrap(), vec![1]);
        assert_eq!(min_imp(&[1.0, 2.0], &[1.0, 1.0], 1, 5).unwrap(), vec![0, 1]);
        assert_eq!(min_imp(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], 1, 2).unwrap(), vec![0, 1]);
        // 0 * -1 is -0.0, which must tie with 0.0 and fall back to position.
        assert_eq!(min_imp(&[0.0, 0.0], &[1.0, -1.0], 1, 1).unwrap(), vec![0]);
        assert!(min_imp(&[], &[], 1, 1).is_err());
    }
}
