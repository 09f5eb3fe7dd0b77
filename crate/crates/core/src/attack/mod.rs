//! Color and coordinate attacks on the segmenter: targets and config,
//! hinge losses, distances, the tanh reparameterization, the sign-step and
//! Adam attack loops, the L0 restoration schedule and a random-noise
//! baseline.

mod engine;
mod loss;
mod perturb;
mod report;
mod target;

pub use engine::{
    l0_coordinate_attack, norm_bounded_attack, norm_unbounded_attack, random_noise_baseline, scene_seed,
    target_gradient, TargetGradient,
};
pub use loss::{adv_loss, adv_loss_degradation, adv_loss_hiding, min_imp, smoothness, smoothness_neighbors};
pub use perturb::{tanh_map, tanh_unmap, Perturbation, COLOR_BOX, COORD_BOX};
pub use report::{AttackKind, AttackReport, RoundSummary, TraceRow};
pub use target::{converge, AttackConfig, Mode, TargetSpec};
