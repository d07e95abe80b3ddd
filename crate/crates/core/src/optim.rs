//! Adaptive per-group gradient descent and the two-phase training loop:
//! fit the first frame from dense depth initialization, then track each
//! subsequent frame by warm-starting from the previous result with the
//! physics regularizers active.

use crate::error::{Result, SplatError};
use crate::graph::{build_graph, RegularizationGraph};
use crate::init::{backproject, fill_depth, fit_baseline, init_cloud, InitConfig};
use crate::losses::{
    total_loss_first_frame, total_loss_subsequent, FrameSupervision, LossBreakdown, LossWeights,
};
use crate::math::{quat_normalize, sigmoid};
use crate::model::{Camera, FrameObservation, GaussianCloud};
use crate::render::{render_backward, render_from_cloud, CloudGradients, RenderOptions};

/// Constant per-group learning rates. The position rate is specified per unit
/// of scene extent and multiplied by the measured extent at fit time.
#[derive(Debug, Clone)]
pub struct GroupRates {
    pub position_per_extent: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    pub hallucination: f64,
}

impl Default for GroupRates {
    fn default() -> Self {
        Self {
            position_per_extent: 1.6e-4,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            hallucination: 5e-2,
        }
    }
}

/// Iteration counts and maintenance policy for the training loop.
#[derive(Debug, Clone)]
pub struct TrainSchedule {
    pub first_frame_iters: usize,
    pub per_frame_iters: usize,
    pub rates: GroupRates,
    /// Prune every this many iterations during first-frame fitting (0 = never).
    pub prune_interval: usize,
    pub prune_opacity_threshold: f64,
    pub densify_enabled: bool,
    /// Free scales/opacity/color/hallucination during per-frame tracking.
    pub free_appearance_per_frame: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            first_frame_iters: 2000,
            per_frame_iters: 300,
            rates: GroupRates::default(),
            prune_interval: 0,
            prune_opacity_threshold: 0.005,
            densify_enabled: false,
            free_appearance_per_frame: false,
        }
    }
}

/// Which parameter groups the optimizer may move; frozen groups keep their
/// values and moment accumulators bit-identical.
#[derive(Debug, Clone, Copy)]
pub struct FreeGroups {
    pub positions: bool,
    pub rotations: bool,
    pub scales: bool,
    pub opacity: bool,
    pub color: bool,
    pub hallucination: bool,
}

impl FreeGroups {
    pub fn all() -> Self {
        Self {
            positions: true,
            rotations: true,
            scales: true,
            opacity: true,
            color: true,
            hallucination: true,
        }
    }

    /// Default per-frame tracking: deformation only.
    pub fn tracking(appearance: bool) -> Self {
        Self {
            positions: true,
            rotations: true,
            scales: appearance,
            opacity: appearance,
            color: appearance,
            hallucination: appearance,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-15;

/// First/second moment accumulators mirroring the cloud's parameter arrays.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: CloudGradients,
    v: CloudGradients,
    pub step_count: u64,
    /// Effective position learning rate (per-extent rate × scene extent).
    pub position_lr: f64,
}

impl OptimizerState {
    pub fn new(cloud: &GaussianCloud, rates: &GroupRates, scene_extent: f64) -> Self {
        Self {
            m: CloudGradients::zeros(cloud),
            v: CloudGradients::zeros(cloud),
            step_count: 0,
            position_lr: rates.position_per_extent * scene_extent,
        }
    }

    /// Drops state for removed Gaussians, keeping the surviving accumulators.
    fn retain(&mut self, keep: &[bool]) {
        let filter = |v: &mut Vec<_>| {
            let mut it = keep.iter();
            // retain() visits in order; pair each element with its keep flag.
            v.retain(|_: &nalgebra::Vector3<f64>| *it.next().unwrap());
        };
        filter(&mut self.m.positions);
        filter(&mut self.v.positions);
        let filter4 = |v: &mut Vec<nalgebra::Vector4<f64>>| {
            let mut it = keep.iter();
            v.retain(|_| *it.next().unwrap());
        };
        filter4(&mut self.m.rotations);
        filter4(&mut self.v.rotations);
        filter(&mut self.m.log_scales);
        filter(&mut self.v.log_scales);
        let filter1 = |v: &mut Vec<f64>| {
            let mut it = keep.iter();
            v.retain(|_| *it.next().unwrap());
        };
        filter1(&mut self.m.opacity_logits);
        filter1(&mut self.v.opacity_logits);
        filter1(&mut self.m.hallucination_logits);
        filter1(&mut self.v.hallucination_logits);
        let stride = if keep.is_empty() {
            0
        } else {
            self.m.sh_coeffs.len() / keep.len()
        };
        let filter_sh = |v: &mut Vec<[f64; 3]>| {
            let mut i = 0;
            v.retain(|_| {
                let k = keep[i / stride.max(1)];
                i += 1;
                k
            });
        };
        if stride > 0 {
            filter_sh(&mut self.m.sh_coeffs);
            filter_sh(&mut self.v.sh_coeffs);
        }
    }
}

fn adam_scalar(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, c1: f64, c2: f64) {
    *m = BETA1 * *m + (1.0 - BETA1) * g;
    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
    let mhat = *m / c1;
    let vhat = *v / c2;
    *p -= lr * mhat / (vhat.sqrt() + EPS);
}

/// One adaptive-moment update. Frozen groups are untouched (values and
/// moments); quaternions are renormalized after the move.
pub fn step(
    cloud: &mut GaussianCloud,
    grads: &CloudGradients,
    state: &mut OptimizerState,
    rates: &GroupRates,
    free: &FreeGroups,
) -> Result<()> {
    if let Some(group) = grads.non_finite_group() {
        return Err(SplatError::Diverged {
            group: group.to_string(),
        });
    }
    if grads.positions.len() != cloud.len() {
        return Err(SplatError::ShapeMismatch(format!(
            "gradient arrays sized {} for a cloud of {}",
            grads.positions.len(),
            cloud.len()
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let n = cloud.len();
    if free.positions {
        for i in 0..n {
            for a in 0..3 {
                adam_scalar(
                    &mut cloud.positions[i][a],
                    grads.positions[i][a],
                    &mut state.m.positions[i][a],
                    &mut state.v.positions[i][a],
                    state.position_lr,
                    c1,
                    c2,
                );
            }
        }
    }
    if free.rotations {
        for i in 0..n {
            for a in 0..4 {
                adam_scalar(
                    &mut cloud.rotations[i][a],
                    grads.rotations[i][a],
                    &mut state.m.rotations[i][a],
                    &mut state.v.rotations[i][a],
                    rates.rotation,
                    c1,
                    c2,
                );
            }
            cloud.rotations[i] = quat_normalize(&cloud.rotations[i]);
        }
    }
    if free.scales {
        for i in 0..n {
            for a in 0..3 {
                adam_scalar(
                    &mut cloud.log_scales[i][a],
                    grads.log_scales[i][a],
                    &mut state.m.log_scales[i][a],
                    &mut state.v.log_scales[i][a],
                    rates.scale,
                    c1,
                    c2,
                );
            }
        }
    }
    if free.opacity {
        for i in 0..n {
            adam_scalar(
                &mut cloud.opacity_logits[i],
                grads.opacity_logits[i],
                &mut state.m.opacity_logits[i],
                &mut state.v.opacity_logits[i],
                rates.opacity,
                c1,
                c2,
            );
        }
    }
    if free.color {
        for i in 0..cloud.sh_coeffs.len() {
            for c in 0..3 {
                adam_scalar(
                    &mut cloud.sh_coeffs[i][c],
                    grads.sh_coeffs[i][c],
                    &mut state.m.sh_coeffs[i][c],
                    &mut state.v.sh_coeffs[i][c],
                    rates.color,
                    c1,
                    c2,
                );
            }
        }
    }
    if free.hallucination {
        for i in 0..n {
            adam_scalar(
                &mut cloud.hallucination_logits[i],
                grads.hallucination_logits[i],
                &mut state.m.hallucination_logits[i],
                &mut state.v.hallucination_logits[i],
                rates.hallucination,
                c1,
                c2,
            );
        }
    }
    Ok(())
}

/// Everything the fitting loops need beyond the frame itself.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub schedule: TrainSchedule,
    pub weights: LossWeights,
    pub init: InitConfig,
    pub render: RenderOptions,
    pub graph_k: usize,
    pub lambda_w: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            schedule: TrainSchedule::default(),
            weights: LossWeights::default(),
            init: InitConfig::default(),
            render: RenderOptions::default(),
            graph_k: 20,
            lambda_w: 2000.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.first_frame_iters == 0 || self.schedule.per_frame_iters == 0 {
            return Err(SplatError::Config("iteration counts must be > 0".into()));
        }
        if self.graph_k == 0 || self.lambda_w <= 0.0 {
            return Err(SplatError::Config(format!(
                "graph needs k ≥ 1 and lambda_w > 0 (k={}, lambda_w={})",
                self.graph_k, self.lambda_w
            )));
        }
        Ok(())
    }
}

/// Drops Gaussians whose opacity is below the threshold, keeping optimizer
/// state aligned. Never empties the cloud.
fn prune(cloud: &mut GaussianCloud, state: &mut OptimizerState, threshold: f64) {
    let keep: Vec<bool> = cloud
        .opacity_logits
        .iter()
        .map(|&l| sigmoid(l) >= threshold)
        .collect();
    if keep.iter().all(|&k| k) || !keep.iter().any(|&k| k) {
        return;
    }
    let idx: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    cloud.retain_indices(&idx);
    state.retain(&keep);
}

/// Runs the photometric+depth objective on an already-initialized cloud.
/// `on_iter` observes every iteration's loss breakdown (for logging).
pub fn optimize_first_frame(
    cloud: &mut GaussianCloud,
    frame: &FrameObservation,
    camera: &Camera,
    config: &FitConfig,
    scene_extent: f64,
    mut on_iter: impl FnMut(usize, &LossBreakdown),
) -> Result<()> {
    let mut state = OptimizerState::new(cloud, &config.schedule.rates, scene_extent);
    let sup = FrameSupervision {
        image: &frame.image,
        depth: &frame.depth,
        tool_mask: &frame.tool_mask,
        source_flags: &frame.source_flags,
    };
    for it in 0..config.schedule.first_frame_iters {
        let (out, _) = render_from_cloud(cloud, camera, &config.render)?;
        let (breakdown, seeds) = total_loss_first_frame(&out, &sup, &config.weights)?;
        let grads = render_backward(&out, &seeds, cloud, camera, &config.render, true)?;
        step(cloud, &grads, &mut state, &config.schedule.rates, &FreeGroups::all())?;
        if config.schedule.prune_interval > 0
            && (it + 1) % config.schedule.prune_interval == 0
            && it + 1 < config.schedule.first_frame_iters
        {
            prune(cloud, &mut state, config.schedule.prune_opacity_threshold);
        }
        on_iter(it, &breakdown);
    }
    Ok(())
}

/// Scene extent as the bounding-box diagonal of the positions.
pub fn scene_extent_of(cloud: &GaussianCloud) -> f64 {
    if cloud.is_empty() {
        return 1.0;
    }
    let mut lo = cloud.positions[0];
    let mut hi = cloud.positions[0];
    for p in &cloud.positions {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let d = (hi - lo).norm();
    if d > 0.0 {
        d
    } else {
        1.0
    }
}

/// Full first-frame pipeline: optional disparity-based depth completion,
/// dense backprojection (over every pixel with usable depth — the tool mask
/// marks hallucination provenance but does not exclude points), Gaussian
/// initialization, optimization, and the frozen neighbor graph.
pub fn fit_first_frame(
    frame0: &FrameObservation,
    camera: &Camera,
    config: &FitConfig,
    mut on_iter: impl FnMut(usize, &LossBreakdown),
) -> Result<(GaussianCloud, RegularizationGraph)> {
    config.validate()?;
    let filled;
    let frame = if let Some(disp) = &frame0.disparity {
        let fit = fit_baseline(disp, &frame0.depth, &frame0.depth_valid, camera.fx)?;
        filled = fill_depth(frame0, fit.baseline, camera);
        &filled
    } else {
        frame0
    };
    // Initialization uses every pixel with usable (GT or filled) depth; the
    // occluded region is exactly where the hallucination channel needs
    // coverage, so tool pixels with depth stay in.
    let mut init_frame = frame.clone();
    init_frame.tool_mask = frame.depth_valid.clone();
    let points = backproject(&init_frame, camera)?;
    let mut cloud = init_cloud(&points, &frame.tool_mask, &config.init)?;
    cloud.time = frame.time;
    let extent = config.init.scene_extent.unwrap_or_else(|| scene_extent_of(&cloud));
    optimize_first_frame(&mut cloud, frame, camera, config, extent, &mut on_iter)?;
    let k = config.graph_k.min(cloud.len().saturating_sub(1)).max(1);
    let graph = build_graph(&cloud, k, config.lambda_w)?;
    Ok((cloud, graph))
}

/// Tracks one frame: warm-start from the previous cloud and minimize the
/// photometric+depth+physics objective with (by default) only positions and
/// rotations free. The previous cloud is a constant.
pub fn fit_next_frame(
    prev_cloud: &GaussianCloud,
    frame: &FrameObservation,
    graph: &RegularizationGraph,
    camera: &Camera,
    config: &FitConfig,
    mut on_iter: impl FnMut(usize, &LossBreakdown),
) -> Result<GaussianCloud> {
    config.validate()?;
    let mut cloud = prev_cloud.clone();
    cloud.time = frame.time;
    let extent = config.init.scene_extent.unwrap_or_else(|| scene_extent_of(&cloud));
    let mut state = OptimizerState::new(&cloud, &config.schedule.rates, extent);
    let free = FreeGroups::tracking(config.schedule.free_appearance_per_frame);
    let sup = FrameSupervision {
        image: &frame.image,
        depth: &frame.depth,
        tool_mask: &frame.tool_mask,
        source_flags: &frame.source_flags,
    };
    for it in 0..config.schedule.per_frame_iters {
        let (out, _) = render_from_cloud(&cloud, camera, &config.render)?;
        let (breakdown, seeds, mut grads) = total_loss_subsequent(
            &out,
            &sup,
            prev_cloud,
            &cloud,
            prev_cloud,
            graph,
            &config.weights,
        )?;
        let pixel_grads = render_backward(&out, &seeds, &cloud, camera, &config.render, true)?;
        grads.add_scaled(&pixel_grads, 1.0);
        step(&mut cloud, &grads, &mut state, &config.schedule.rates, &free)?;
        on_iter(it, &breakdown);
    }
    Ok(cloud)
}
