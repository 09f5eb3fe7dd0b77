use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{adv_loss, adv_loss_var, min_imp, smoothness_neighbors, smoothness_var, smoothness_with};
use super::perturb::{tanh_map, tanh_unmap, Perturbation, COLOR_BOX, COORD_BOX};
use super::report::{AttackKind, AttackReport, RoundSummary, TraceRow};
use super::target::{converge, AttackConfig, Mode, TargetSpec};
use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::metrics;
use crate::optim::Adam;
use crate::pointcloud::synth::derive_seed;
use crate::pointcloud::{knn, Neighbors, PointCloud};
use crate::segmodel::{predict_labels, Fields, NeighborPolicy, SegModel};

/// Keeps tanh variables finite at the box edges.
const BOX_MARGIN: f64 = 1e-6;
const NOISE_TRIES: usize = 64;

/// Gradient of the attack objective with respect to the attacked points.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGradient {
    /// |T|×3, zero when coordinates are not attacked.
    pub coords: Vec<f64>,
    /// |T|×K, zero when color is not attacked.
    pub feats: Vec<f64>,
    pub adv: f64,
    pub smooth: f64,
    /// Accuracy (degradation) or success rate (hiding) on the attacked points.
    pub metric: f64,
}

pub(crate) struct Session<'a> {
    model: &'a SegModel,
    cloud: &'a PointCloud,
    target: &'a TargetSpec,
    cfg: &'a AttackConfig,
    idx: Arc<[usize]>,
    labels: Arc<[usize]>,
    clean_nb: Neighbors,
    clean_smooth_nb: Neighbors,
}

impl<'a> Session<'a> {
    pub(crate) fn new(
        model: &'a SegModel,
        cloud: &'a PointCloud,
        target: &'a TargetSpec,
        cfg: &'a AttackConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        model.check_cloud(cloud)?;
        target.check_cloud(cloud)?;
        if cfg.alpha >= cloud.len() {
            return Err(Error::InvalidArgument(format!(
                "alpha = {} needs more than {} points",
                cfg.alpha,
                cloud.len()
            )));
        }
        Ok(Self {
            model,
            cloud,
            target,
            cfg,
            idx: Arc::from(target.indices()),
            labels: Arc::from(target.labels()),
            clean_nb: model.neighbors(cloud.coords())?,
            clean_smooth_nb: smoothness_neighbors(cloud.coords(), cfg.alpha)?,
        })
    }

    fn fields(&self) -> Fields {
        self.cfg.fields
    }

    fn metric_from_logits(&self, logits: &Tensor) -> f64 {
        let pred = predict_labels(logits);
        let hits = self
            .idx
            .iter()
            .zip(self.labels.iter())
            .filter(|&(&i, &y)| pred[i] == y)
            .count();
        hits as f64 / self.idx.len() as f64
    }

    /// Objective `lambda1·hinge + lambda2·smoothness` (or the bare hinge when
    /// `smooth` is off) and its gradient on the attacked rows.
    pub(crate) fn eval(&self, pert: &Perturbation, smooth: bool) -> Result<TargetGradient> {
        let n = self.cloud.len();
        let k = self.cloud.num_feats();
        let mut coords: Vec<f64> = self.cloud.coords().iter().flatten().copied().collect();
        let mut feats = self.cloud.feats().to_vec();
        pert.write_into(&mut coords, &mut feats);
        let moved = self.fields().coords();
        let pts: Vec<[f64; 3]> = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();

        let recomputed;
        let model_nb = match self.model.policy() {
            NeighborPolicy::RecomputeEachStep if moved => {
                recomputed = knn(&pts, self.model.arch().k_agg, None)?;
                &recomputed
            }
            _ => &self.clean_nb,
        };
        let smooth_recomputed;
        let smooth_nb = if smooth && moved {
            smooth_recomputed = smoothness_neighbors(&pts, self.cfg.alpha)?;
            &smooth_recomputed
        } else {
            &self.clean_smooth_nb
        };

        let (l1, l2, kappa, mode) = if smooth {
            (self.cfg.lambda1, self.cfg.lambda2, self.cfg.kappa, self.target.mode())
        } else {
            (1.0, 0.0, self.cfg.kappa, self.target.mode())
        };
        let ct = Tensor::matrix(n, 3, coords)?;
        let ft = Tensor::matrix(n, k, feats.clone())?;
        let g = self
            .model
            .input_grad(&ct, &ft, model_nb, self.fields(), |tape: &mut Tape, v| {
                let adv = adv_loss_var(tape, v.logits, &self.idx, &self.labels, mode, kappa)?;
                let mut obj = tape.scale(adv, l1)?;
                if l2 != 0.0 {
                    let s = smoothness_var(tape, v.coords, v.feats, smooth_nb)?;
                    let s = tape.scale(s, l2)?;
                    obj = tape.add(obj, s)?;
                }
                Ok(obj)
            })?;

        let rows = Tensor::from_rows(&self.idx.iter().map(|&i| g.logits.row(i).to_vec()).collect::<Vec<_>>())?;
        let adv = adv_loss(mode, &rows, &self.labels)?;
        let smooth_value = if smooth {
            smoothness_with(&pts, &feats, k, smooth_nb)
        } else {
            0.0
        };
        let pick = |t: &Option<Tensor>, w: usize| -> Vec<f64> {
            match t {
                Some(t) => self.idx.iter().flat_map(|&i| t.row(i).iter().copied()).collect(),
                None => vec![0.0; self.idx.len() * w],
            }
        };
        Ok(TargetGradient {
            coords: pick(&g.coords, 3),
            feats: pick(&g.feats, k),
            adv,
            smooth: smooth_value,
            metric: self.metric_from_logits(&g.logits),
        })
    }

    fn converged(&self, metric: f64) -> bool {
        converge(
            self.target.mode(),
            metric,
            self.cloud.num_classes(),
            self.cfg.converge_psr_threshold,
        )
    }

    /// Distance term of the unbounded gain.
    fn distance(&self, pert: &Perturbation) -> f64 {
        match self.fields() {
            Fields::Color => pert.dist_l2_color(),
            Fields::Coords | Fields::Both => pert.dist_l0_coord(self.cfg.l0_tol) as f64,
        }
    }

    /// Final report; metrics come from a plain forward pass on the
    /// perturbed cloud.
    pub(crate) fn finish(
        &self,
        kind: AttackKind,
        pert: Perturbation,
        trace: Vec<TraceRow>,
        steps_used: usize,
        rounds: Vec<RoundSummary>,
    ) -> Result<AttackReport> {
        let adv_cloud = pert.apply(self.cloud)?;
        let pred = self.model.predict(&adv_cloud)?;
        let gt = self.cloud.require_labels()?;
        let c = self.cloud.num_classes();
        let on_target: Vec<usize> = self.idx.iter().map(|&i| pred[i]).collect();
        let target_metric = metrics::psr(&on_target, &self.labels)?;
        let block = match self.target.mode() {
            Mode::Hiding if self.idx.len() < self.cloud.len() => {
                metrics::evaluate_hiding(&pred, gt, c, &self.idx, &self.labels)?
            }
            Mode::Hiding => {
                let mut b = metrics::evaluate(&pred, gt, c)?;
                b.psr = Some(target_metric);
                b
            }
            Mode::Degradation => metrics::evaluate(&pred, gt, c)?,
        };
        Ok(AttackReport {
            kind,
            mode: self.target.mode(),
            fields: self.fields(),
            converged: self.converged(target_metric),
            steps_used,
            dist_l2_color: pert.dist_l2_color(),
            dist_l0_coord: pert.dist_l0_coord(self.cfg.l0_tol),
            target_metric,
            metrics: block,
            trace,
            rounds,
            cloud: adv_cloud,
            perturbation: pert,
        })
    }
}

/// One selected scalar of one attacked point.
#[derive(Debug, Clone, Copy)]
enum Comp {
    Coord(usize, usize),
    Feat(usize, usize),
}

impl Comp {
    fn bounds(self) -> (f64, f64) {
        match self {
            Comp::Coord(..) => COORD_BOX,
            Comp::Feat(..) => COLOR_BOX,
        }
    }

    fn clean(self, p: &Perturbation) -> f64 {
        match self {
            Comp::Coord(q, a) => p.clean_coord(q)[a],
            Comp::Feat(q, f) => p.clean_feat(q)[f],
        }
    }

    fn value(self, p: &Perturbation) -> f64 {
        match self {
            Comp::Coord(q, a) => p.coord(q)[a],
            Comp::Feat(q, f) => p.feat(q)[f],
        }
    }

    fn set(self, p: &mut Perturbation, v: f64) {
        match self {
            Comp::Coord(q, a) => p.set_coord(q, a, v),
            Comp::Feat(q, f) => p.set_feat(q, f, v),
        }
    }

    fn grad(self, g: &TargetGradient, k: usize) -> f64 {
        match self {
            Comp::Coord(q, a) => g.coords[q * 3 + a],
            Comp::Feat(q, f) => g.feats[q * k + f],
        }
    }
}

fn components(pert: &Perturbation, active: &[bool]) -> Vec<Comp> {
    let fields = pert.fields();
    let mut out = Vec::new();
    for (q, _) in active.iter().enumerate().filter(|(_, &a)| a) {
        if fields.coords() {
            out.extend((0..3).map(|a| Comp::Coord(q, a)));
        }
        if fields.color() {
            out.extend((0..pert.num_feats()).map(|f| Comp::Feat(q, f)));
        }
    }
    out
}

pub(crate) struct LoopOutcome {
    pub(crate) pert: Perturbation,
    pub(crate) trace: Vec<TraceRow>,
    pub(crate) steps_used: usize,
}

/// Clamps `v` into `[c − eps, c + eps] ∩ [a, b]`, exactly.
fn clip_bounded(v: f64, c: f64, eps: f64, (a, b): (f64, f64)) -> f64 {
    let mut v = v.clamp((c - eps).max(a), (c + eps).min(b));
    while (v - c).abs() > eps {
        v = if v > c { v.next_down() } else { v.next_up() };
    }
    v
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sign-gradient descent on the hinge with per-component clipping.
pub(crate) fn run_bounded(
    s: &Session,
    mut pert: Perturbation,
    active: &[bool],
    init_noise: bool,
    rng: &mut ChaCha8Rng,
) -> Result<LoopOutcome> {
    let cfg = s.cfg;
    let comps = components(&pert, active);
    let k = pert.num_feats();
    let mut trace = Vec::new();
    let mut steps_used = 0;
    if cfg.steps == 0 {
        return Ok(LoopOutcome {
            pert,
            trace,
            steps_used,
        });
    }
    if init_noise {
        for &c in &comps {
            let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
            let clean = c.clean(&pert);
            let v = clip_bounded(clean + u * cfg.epsilon, clean, cfg.epsilon, c.bounds());
            c.set(&mut pert, v);
        }
    }
    let mut best = f64::INFINITY;
    for step in 0..cfg.steps {
        let e = s.eval(&pert, false)?;
        best = best.min(e.adv);
        trace.push(TraceRow {
            step,
            gain: e.adv,
            dist: s.distance(&pert),
            adv: e.adv,
            smooth: 0.0,
            best_gain: best,
            metric: e.metric,
            noise: false,
        });
        if s.converged(e.metric) {
            break;
        }
        for &c in &comps {
            let v = c.value(&pert) - cfg.gamma * sign(c.grad(&e, k));
            let v = clip_bounded(v, c.clean(&pert), cfg.epsilon, c.bounds());
            c.set(&mut pert, v);
        }
        steps_used = step + 1;
    }
    Ok(LoopOutcome {
        pert,
        trace,
        steps_used,
    })
}

/// Adam on tanh variables. Each component's value is
/// `clean + map(w) − map(w0)`, so the perturbation starts at exactly zero.
/// Stops at the first checkpoint where the target has converged; otherwise
/// returns the final state.
pub(crate) fn run_unbounded(
    s: &Session,
    mut pert: Perturbation,
    active: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<LoopOutcome> {
    let cfg = s.cfg;
    let comps = components(&pert, active);
    let k = pert.num_feats();
    let mut trace = Vec::new();
    if cfg.steps == 0 || comps.is_empty() {
        return Ok(LoopOutcome {
            pert,
            trace,
            steps_used: 0,
        });
    }
    let inner = |v: f64, (a, b): (f64, f64)| v.clamp(a + BOX_MARGIN, b - BOX_MARGIN);
    let mut base = Vec::with_capacity(comps.len());
    let mut w = Vec::with_capacity(comps.len());
    for &c in &comps {
        let bx = c.bounds();
        let b0 = tanh_map(tanh_unmap(inner(c.clean(&pert), bx), bx.0, bx.1)?, bx.0, bx.1);
        w.push(tanh_unmap(inner(c.value(&pert) - c.clean(&pert) + b0, bx), bx.0, bx.1)?);
        base.push(b0);
    }
    let value_of = |c: Comp, clean: f64, wj: f64, bj: f64| {
        let (a, b) = c.bounds();
        (clean + (tanh_map(wj, a, b) - bj)).clamp(a, b)
    };
    for (j, &c) in comps.iter().enumerate() {
        let v = value_of(c, c.clean(&pert), w[j], base[j]);
        c.set(&mut pert, v);
    }

    let color_l2 = cfg.fields == Fields::Color;
    let every = (cfg.steps / 100).max(1);
    let mut adam = Adam::new(comps.len(), cfg.lr);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut grad = vec![0.0; comps.len()];
    for step in 0..cfg.steps {
        let e = s.eval(&pert, true)?;
        let dist = s.distance(&pert);
        let gain = dist + cfg.lambda1 * e.adv + cfg.lambda2 * e.smooth;
        if step % every == 0 {
            let done = s.converged(e.metric);
            if gain < best {
                best = gain;
                stale = 0;
            } else {
                stale += 1;
            }
            let noise = !done && stale >= cfg.stagnation_window;
            trace.push(TraceRow {
                step,
                gain,
                dist,
                adv: e.adv,
                smooth: e.smooth,
                best_gain: best,
                metric: e.metric,
                noise,
            });
            if done {
                return Ok(LoopOutcome {
                    pert,
                    trace,
                    steps_used: step,
                });
            }
            if noise {
                stale = 0;
                for (j, &c) in comps.iter().enumerate() {
                    let (a, b) = c.bounds();
                    let v = c.value(&pert);
                    let accepted = (0..NOISE_TRIES)
                        .map(|_| v + rng.random::<f64>())
                        .find(|nv| (a..=b).contains(nv));
                    if let Some(nv) = accepted {
                        c.set(&mut pert, nv);
                        w[j] = tanh_unmap(inner(nv - c.clean(&pert) + base[j], (a, b)), a, b)?;
                    }
                }
                continue;
            }
        }
        for (j, &c) in comps.iter().enumerate() {
            let (a, b) = c.bounds();
            let mut gx = c.grad(&e, k);
            if color_l2 {
                gx += 2.0 * (c.value(&pert) - c.clean(&pert));
            }
            let t = w[j].tanh();
            grad[j] = gx * (b - a) / 2.0 * (1.0 - t * t);
        }
        adam.step(&mut w, &grad);
        for (j, &c) in comps.iter().enumerate() {
            let v = value_of(c, c.clean(&pert), w[j], base[j]);
            c.set(&mut pert, v);
        }
    }
    Ok(LoopOutcome {
        pert,
        trace,
        steps_used: cfg.steps,
    })
}

/// Per-run seed derived from a global seed and a scene index.
pub fn scene_seed(global: u64, index: u64) -> u64 {
    derive_seed(global, index)
}

/// Sign-step attack with per-component cap `epsilon`.
pub fn norm_bounded_attack(
    model: &SegModel,
    cloud: &PointCloud,
    target: &TargetSpec,
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    let s = Session::new(model, cloud, target, cfg)?;
    let pert = Perturbation::new(cloud, target.indices(), cfg.fields)?;
    let active = vec![true; target.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = run_bounded(&s, pert, &active, true, &mut rng)?;
    s.finish(AttackKind::NormBounded, out.pert, out.trace, out.steps_used, Vec::new())
}

/// Tanh-reparameterized attack minimizing distance, hinge and smoothness.
pub fn norm_unbounded_attack(
    model: &SegModel,
    cloud: &PointCloud,
    target: &TargetSpec,
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    let s = Session::new(model, cloud, target, cfg)?;
    let pert = Perturbation::new(cloud, target.indices(), cfg.fields)?;
    let active = vec![true; target.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = run_unbounded(&s, pert, &active, &mut rng)?;
    s.finish(AttackKind::NormUnbounded, out.pert, out.trace, out.steps_used, Vec::new())
}

/// Gradient of the attack objective at `pert` (hinge only when
/// `with_smoothness` is off). With `fields = both` the coordinate and color
/// parts come from one backward pass.
pub fn target_gradient(
    model: &SegModel,
    cloud: &PointCloud,
    target: &TargetSpec,
    pert: &Perturbation,
    cfg: &AttackConfig,
    with_smoothness: bool,
) -> Result<TargetGradient> {
    let s = Session::new(model, cloud, target, cfg)?;
    if pert.indices() != target.indices() || pert.fields() != cfg.fields {
        return Err(Error::InvalidArgument(
            "perturbation does not match the target and field selection".into(),
        ));
    }
    s.eval(pert, with_smoothness)
}

/// Coordinate attack with L0 sparsification: each round attacks the
/// remaining points, then restores the `restore_per_round` least useful
/// ones and drops them from later rounds. Once fewer than a tenth of the
/// targets remain, one last round runs without restoration (on the
/// original set if nothing remains). Returns the sparsest successful round,
/// else the last.
pub fn l0_coordinate_attack(
    model: &SegModel,
    cloud: &PointCloud,
    target: &TargetSpec,
    cfg: &AttackConfig,
    kind: AttackKind,
) -> Result<AttackReport> {
    if !cfg.fields.coords() {
        return Err(Error::InvalidArgument(
            "the L0 schedule needs coordinate perturbations".into(),
        ));
    }
    let s = Session::new(model, cloud, target, cfg)?;
    let t = target.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pert = Perturbation::new(cloud, target.indices(), cfg.fields)?;
    let mut active = vec![true; t];
    let mut remaining = t;
    let mut rounds = Vec::new();
    let mut total_steps = 0;
    let mut best: Option<(usize, LoopOutcome)> = None;
    let mut last: Option<LoopOutcome> = None;
    for round in 1.. {
        let mut final_pass = (remaining as f64) < 0.1 * t as f64;
        if remaining == 0 {
            active = vec![true; t];
            remaining = t;
            final_pass = true;
        }
        let out = match kind {
            AttackKind::NormBounded => run_bounded(&s, pert.clone(), &active, round == 1, &mut rng)?,
            AttackKind::NormUnbounded => run_unbounded(&s, pert.clone(), &active, &mut rng)?,
        };
        total_steps += out.steps_used;
        let check = s.eval(&out.pert, false)?;
        let l0 = out.pert.dist_l0_coord(cfg.l0_tol);
        let ok = s.converged(check.metric);
        rounds.push(RoundSummary {
            round,
            perturbable: remaining,
            l0,
            converged: ok,
            target_metric: check.metric,
        });
        if ok && best.as_ref().is_none_or(|(b, _)| l0 < *b) {
            best = Some((
                l0,
                LoopOutcome {
                    pert: out.pert.clone(),
                    trace: out.trace.clone(),
                    steps_used: out.steps_used,
                },
            ));
        }
        if final_pass {
            last = Some(out);
            break;
        }
        let cand: Vec<usize> = (0..t).filter(|&q| active[q]).collect();
        let fields = cfg.fields;
        let k = cloud.num_feats();
        let dim = if fields.color() { 3 + k } else { 3 };
        let mut g = Vec::with_capacity(cand.len() * dim);
        let mut r = Vec::with_capacity(cand.len() * dim);
        for &q in &cand {
            // Negated hinge gradient: helpful deltas score high.
            g.extend(check.coords[q * 3..q * 3 + 3].iter().map(|v| -v));
            r.extend(out.pert.coord_delta(q));
            if fields.color() {
                g.extend(check.feats[q * k..(q + 1) * k].iter().map(|v| -v));
                r.extend(out.pert.color_delta(q));
            }
        }
        let chosen = min_imp(&g, &r, dim, cfg.restore_per_round)?;
        pert = out.pert.clone();
        for &c in &chosen {
            let q = cand[c];
            pert.restore(q);
            active[q] = false;
        }
        remaining -= chosen.len();
        last = Some(out);
    }
    let out = match best {
        Some((_, b)) => b,
        None => last.expect("at least one round runs"),
    };
    s.finish(kind, out.pert, out.trace, total_steps, rounds)
}

/// Uniform color noise on the target points scaled to a squared-L2 budget,
/// then clipped to the color box. Returns the cloud and the achieved
/// distance.
pub fn random_noise_baseline(
    cloud: &PointCloud,
    target: &TargetSpec,
    l2_budget: f64,
    seed: u64,
) -> Result<(PointCloud, f64)> {
    if !(l2_budget >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative budget {l2_budget}")));
    }
    target.check_cloud(cloud)?;
    if l2_budget == 0.0 {
        return Ok((cloud.clone(), 0.0));
    }
    let mut pert = Perturbation::new(cloud, target.indices(), Fields::Color)?;
    let k = cloud.num_feats();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..target.len() * k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let norm2: f64 = u.iter().map(|v| v * v).sum();
    if norm2 == 0.0 {
        return Ok((cloud.clone(), 0.0));
    }
    let scale = (l2_budget / norm2).sqrt();
    for q in 0..target.len() {
        for f in 0..k {
            let v = (pert.clean_feat(q)[f] + scale * u[q * k + f]).clamp(COLOR_BOX.0, COLOR_BOX.1);
            pert.set_feat(q, f, v);
        }
    }
    Ok((pert.apply(cloud)?, pert.dist_l2_color()))
}
