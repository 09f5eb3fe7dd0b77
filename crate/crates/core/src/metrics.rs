//! Segmentation metrics: point accuracy, average IoU, point success rate
//! and out-of-band (untargeted-region) accuracy/aIoU.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricBlock {
    pub accuracy: f64,
    pub aiou: f64,
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub psr: Option<f64>,
    pub oob_accuracy: Option<f64>,
    pub oob_aiou: Option<f64>,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("label arrays of length {a} and {b}")));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    check_lengths(pred.len(), gt.len())?;
    if gt.is_empty() {
        return Err(Error::InvalidArgument("accuracy of zero points".into()));
    }
    let hits = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Mean IoU over classes that occur in the prediction or the ground truth,
/// plus the per-class vector. A class predicted but absent from the ground
/// truth has IoU 0.
pub fn aiou(pred: &[usize], gt: &[usize], num_classes: usize) -> Result<(f64, Vec<Option<f64>>)> {
    check_lengths(pred.len(), gt.len())?;
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fnn = vec![0usize; num_classes];
    for (&p, &g) in pred.iter().zip(gt) {
        if p >= num_classes || g >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {} outside [0, {num_classes})",
                p.max(g)
            )));
        }
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fnn[g] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|c| {
            let denom = tp[c] + fp[c] + fnn[c];
            (denom > 0).then(|| tp[c] as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok((mean, per_class))
}

/// Fraction of attacked points predicted as their target label.
pub fn psr(pred_on_target: &[usize], target_labels: &[usize]) -> Result<f64> {
    accuracy(pred_on_target, target_labels)
}

/// Accuracy and aIoU over the points outside `target`.
pub fn oob_metrics(pred: &[usize], gt: &[usize], target: &[usize], num_classes: usize) -> Result<(f64, f64)> {
    check_lengths(pred.len(), gt.len())?;
    let mut inside = vec![false; gt.len()];
    for &t in target {
        *inside
            .get_mut(t)
            .ok_or_else(|| Error::InvalidArgument(format!("target index {t} out of range")))? = true;
    }
    let (p, g): (Vec<usize>, Vec<usize>) = pred
        .iter()
        .zip(gt)
        .zip(&inside)
        .filter(|(_, &ins)| !ins)
        .map(|((&p, &g), _)| (p, g))
        .unzip();
    if g.is_empty() {
        return Err(Error::InvalidArgument(
            "target set covers every point; out-of-band metrics undefined".into(),
        ));
    }
    Ok((accuracy(&p, &g)?, aiou(&p, &g, num_classes)?.0))
}

pub fn evaluate(pred: &[usize], gt: &[usize], num_classes: usize) -> Result<MetricBlock> {
    let acc = accuracy(pred, gt)?;
    let (mean, per_class) = aiou(pred, gt, num_classes)?;
    Ok(MetricBlock {
        accuracy: acc,
        aiou: mean,
        per_class_iou: per_class,
        psr: None,
        oob_accuracy: None,
        oob_aiou: None,
    })
}

/// [`evaluate`] plus PSR on `target` and out-of-band metrics on the rest.
pub fn evaluate_hiding(
    pred: &[usize],
    gt: &[usize],
    num_classes: usize,
    target: &[usize],
    target_labels: &[usize],
) -> Result<MetricBlock> {
    let mut block = evaluate(pred, gt, num_classes)?;
    check_lengths(target.len(), target_labels.len())?;
    let on_target: Vec<usize> = target.iter().map(|&t| pred[t]).collect();
    block.psr = Some(psr(&on_target, target_labels)?);
    let (oa, oi) = oob_metrics(pred, gt, target, num_classes)?;
    block.oob_accuracy = Some(oa);
    block.oob_aiou = Some(oi);
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 1, 1], &[0, 1, 1, 0]).unwrap(), 0.75);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn iou_single_class_hand_case() {
        // Class 0: TP = 2, FP = 1, FN = 1.
        let pred = [0, 0, 0, 1];
        let gt = [0, 0, 1, 0];
        let (_, per) = aiou(&pred, &gt, 2).unwrap();
        assert_eq!(per[0], Some(0.5));
    }

    #[test]
    fn perfect_prediction_has_unit_aiou() {
        let y = [0, 1, 2, 2, 1];
        assert_eq!(aiou(&y, &y, 3).unwrap().0, 1.0);
    }

    #[test]
    fn absent_classes() {
        // Class 2 absent everywhere: excluded. Class 1 predicted only: IoU 0.
        let (mean, per) = aiou(&[0, 1], &[0, 0], 3).unwrap();
        assert_eq!(per, vec![Some(0.5), Some(0.0), None]);
        assert_eq!(mean, 0.25);
        assert!(aiou(&[0, 3], &[0, 0], 3).is_err());
    }

    #[test]
    fn psr_cases() {
        assert_eq!(psr(&[1; 4], &[1; 4]).unwrap(), 1.0);
        let pred = [1, 1, 1, 1, 1, 1, 1, 1, 0, 0];
        assert_eq!(psr(&pred, &[1; 10]).unwrap(), 0.8);
    }

    #[test]
    fn oob_edges() {
        let pred = [0, 1, 1];
        let gt = [0, 1, 0];
        assert!(oob_metrics(&pred, &gt, &[0, 1, 2], 2).is_err());
        let (a, i) = oob_metrics(&pred, &gt, &[], 2).unwrap();
        assert_eq!(a, accuracy(&pred, &gt).unwrap());
        assert_eq!(i, aiou(&pred, &gt, 2).unwrap().0);
    }
}
