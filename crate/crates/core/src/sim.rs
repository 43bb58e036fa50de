//! Procedural multi-instance scenes, two-view augmentation with automatic
//! instance correspondence, proposal batching, and video sequences with
//! ground truth for the tracking benchmark.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;

use crate::error::{arg, config, Result};
use crate::eval::TrajectorySet;
use crate::geometry::{iou, AffineTransform, BBox};
use crate::math::{self, gaussian, mix_seed, uniform, unit_vector};

/// Box sides are drawn from this range (unit coordinates).
const BOX_SIDE: (f64, f64) = (0.04, 0.10);
/// Per-axis speed bound in unit coordinates per frame.
const MAX_SPEED: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u32,
    pub bbox: BBox,
    pub appearance: Vec<f64>,
    pub velocity: (f64, f64),
}

/// A synthetic image: a set of instances inside the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub instances: Vec<Instance>,
}

impl Scene {
    pub fn feature_dim(&self) -> usize {
        self.instances.first().map_or(0, |i| i.appearance.len())
    }

    pub fn instance(&self, id: u32) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }
}

/// Generates a scene with `n_instances` non-degenerate boxes and unit-norm
/// appearance vectors of dimension `d_raw`.
pub fn generate_scene(seed: u64, n_instances: usize, d_raw: usize) -> Result<Scene> {
    if n_instances == 0 {
        return Err(arg("scene needs at least one instance"));
    }
    if d_raw < 2 {
        return Err(arg(format!("feature dimension must be >= 2, got {d_raw}")));
    }
    let mut rng = math::rng(seed);
    let instances = (0..n_instances)
        .map(|k| {
            let w = uniform(&mut rng, BOX_SIDE.0, BOX_SIDE.1);
            let h = uniform(&mut rng, BOX_SIDE.0, BOX_SIDE.1);
            let x = uniform(&mut rng, 0.0, 1.0 - w);
            let y = uniform(&mut rng, 0.0, 1.0 - h);
            let vx = uniform(&mut rng, -MAX_SPEED, MAX_SPEED);
            let vy = uniform(&mut rng, -MAX_SPEED, MAX_SPEED);
            Instance {
                id: k as u32 + 1,
                bbox: BBox::new(x, y, w, h),
                appearance: unit_vector(&mut rng, d_raw),
                velocity: (vx, vy),
            }
        })
        .collect();
    Ok(Scene { seed, instances })
}

fn reflect(pos: f64, extent: f64, vel: f64) -> (f64, f64) {
    let hi = 1.0 - extent;
    let (mut p, mut v) = (pos + vel, vel);
    // bounded number of bounces for any finite velocity smaller than the span
    for _ in 0..8 {
        if p < 0.0 {
            p = -p;
            v = -v;
        } else if p > hi {
            p = 2.0 * hi - p;
            v = -v;
        } else {
            break;
        }
    }
    (p.clamp(0.0, hi), v)
}

/// Moves every instance by its velocity for `steps` frames, reflecting at
/// the borders of the unit square.
pub fn advance_scene(scene: &Scene, steps: usize) -> Scene {
    let mut out = scene.clone();
    for inst in &mut out.instances {
        for _ in 0..steps {
            let (x, vx) = reflect(inst.bbox.x, inst.bbox.w, inst.velocity.0);
            let (y, vy) = reflect(inst.bbox.y, inst.bbox.h, inst.velocity.1);
            inst.bbox.x = x;
            inst.bbox.y = y;
            inst.velocity = (vx, vy);
        }
    }
    out
}

/// Parameters of the two-view augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationConfig {
    /// Maximum absolute rotation, radians.
    pub rotation: f64,
    /// Affine scale range.
    pub scale: (f64, f64),
    /// Maximum absolute shear coefficient.
    pub shear: f64,
    /// Maximum absolute translation per axis.
    pub translation: f64,
    /// Large-scale jittering scale range.
    pub jitter_scale: (f64, f64),
    /// Side fraction of the random crop window.
    pub crop_fraction: (f64, f64),
    pub flip_prob: f64,
    pub mixup_prob: f64,
    /// Weight of the dominant component in a mixup blend.
    pub mixup_weight: (f64, f64),
    /// Upper bounds of the per-proposal photometric magnitudes.
    pub noise: f64,
    pub brightness: f64,
    pub blur: f64,
    /// Minimum visible fraction of a box after cropping.
    pub visibility: f64,
}

impl AugmentationConfig {
    /// No augmentation at all: both views equal the scene.
    pub fn identity() -> Self {
        Self {
            rotation: 0.0,
            scale: (1.0, 1.0),
            shear: 0.0,
            translation: 0.0,
            jitter_scale: (1.0, 1.0),
            crop_fraction: (1.0, 1.0),
            flip_prob: 0.0,
            mixup_prob: 0.0,
            mixup_weight: (0.6, 0.9),
            noise: 0.0,
            brightness: 0.0,
            blur: 0.0,
            visibility: 0.25,
        }
    }

    /// Flipping, color jittering and random cropping.
    pub fn basic() -> Self {
        Self {
            crop_fraction: (0.6, 1.0),
            flip_prob: 0.5,
            noise: 0.1,
            brightness: 0.8,
            blur: 0.5,
            ..Self::identity()
        }
    }

    /// Basic set plus random affine, MixUp and large-scale jittering.
    pub fn full() -> Self {
        Self {
            rotation: 0.3,
            scale: (0.8, 1.2),
            shear: 0.1,
            translation: 0.1,
            jitter_scale: (0.5, 2.0),
            mixup_prob: 0.3,
            ..Self::basic()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range = |key: &'static str, (lo, hi): (f64, f64)| -> Result<()> {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(config(key, format!("invalid range ({lo}, {hi})")));
            }
            if lo <= 0.0 {
                return Err(config(key, "range must be strictly positive"));
            }
            Ok(())
        };
        range("scale", self.scale)?;
        range("jitter_scale", self.jitter_scale)?;
        range("crop_fraction", self.crop_fraction)?;
        if self.crop_fraction.1 > 1.0 {
            return Err(config("crop_fraction", "fraction must be <= 1"));
        }
        let (lo, hi) = self.mixup_weight;
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
            return Err(config("mixup_weight", "weights must lie in (0, 1)"));
        }
        for (key, p) in [
            ("flip_prob", self.flip_prob),
            ("mixup_prob", self.mixup_prob),
            ("visibility", self.visibility),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config(key, format!("{p} is not in [0, 1]")));
            }
        }
        for (key, m) in [
            ("rotation", self.rotation),
            ("shear", self.shear),
            ("translation", self.translation),
            ("noise", self.noise),
            ("brightness", self.brightness),
            ("blur", self.blur),
        ] {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(config(key, format!("{m} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self::full()
    }
}

/// Samples rotation, scale, shear and translation about the image center.
pub fn sample_affine(cfg: &AugmentationConfig, seed: u64) -> Result<AffineTransform> {
    cfg.validate()?;
    let mut rng = math::rng(seed);
    Ok(draw_affine(cfg, &mut rng))
}

fn draw_affine<R: Rng>(cfg: &AugmentationConfig, rng: &mut R) -> AffineTransform {
    let angle = uniform(rng, -cfg.rotation, cfg.rotation);
    let s = uniform(rng, cfg.scale.0, cfg.scale.1);
    let shear = uniform(rng, -cfg.shear, cfg.shear);
    let tx = uniform(rng, -cfg.translation, cfg.translation);
    let ty = uniform(rng, -cfg.translation, cfg.translation);
    let (sin, cos) = (libm::sin(angle), libm::cos(angle));
    // s * R(angle) * [[1, shear], [0, 1]]
    let linear = [
        [s * cos, s * (cos * shear - sin)],
        [s * sin, s * (sin * shear + cos)],
    ];
    about_center(linear, tx, ty)
}

fn about_center(linear: [[f64; 2]; 2], tx: f64, ty: f64) -> AffineTransform {
    let lin = AffineTransform {
        linear,
        translation: [0.0, 0.0],
    };
    let (cx, cy) = lin.apply_point(0.5, 0.5);
    AffineTransform {
        linear,
        translation: [0.5 - cx + tx, 0.5 - cy + ty],
    }
}

/// Axis-aligned hull of the transformed box corners.
pub fn apply_affine(t: &AffineTransform, b: &BBox) -> BBox {
    t.apply_box(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Photometric {
    Noise,
    Brightness,
    BlurProxy,
}

/// Appearance-vector analogue of an image corruption.
///
/// `Noise` adds N(0, magnitude²) per coordinate, `Brightness` adds
/// `magnitude` to every coordinate, `BlurProxy` convolves neighbouring
/// coordinates with `[a, 1 - 2a, a]`, `a = min(magnitude, 1) / 3`, edges
/// replicated.
pub fn photometric_perturb(
    feature: &[f64],
    kind: Photometric,
    magnitude: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(magnitude >= 0.0) || !magnitude.is_finite() {
        return Err(arg(format!("photometric magnitude {magnitude} must be >= 0")));
    }
    let mut rng = math::rng(seed);
    Ok(perturb_with(feature, kind, magnitude, &mut rng))
}

fn perturb_with<R: Rng>(feature: &[f64], kind: Photometric, magnitude: f64, rng: &mut R) -> Vec<f64> {
    if magnitude == 0.0 {
        return feature.to_vec();
    }
    match kind {
        Photometric::Noise => feature
            .iter()
            .map(|&x| x + magnitude * gaussian(rng))
            .collect(),
        Photometric::Brightness => feature.iter().map(|&x| x + magnitude).collect(),
        Photometric::BlurProxy => {
            let a = magnitude.min(1.0) / 3.0;
            let n = feature.len();
            (0..n)
                .map(|i| {
                    let left = feature[i.saturating_sub(1)];
                    let right = feature[(i + 1).min(n - 1)];
                    a * left + (1.0 - 2.0 * a) * feature[i] + a * right
                })
                .collect()
        }
    }
}

/// Records a mixup blend `weight * own + (1 - weight) * partner`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixRecord {
    pub partner_id: u32,
    pub weight: f64,
}

/// One augmented instance proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub instance_id: u32,
    /// 1 or 2.
    pub view_id: u8,
    pub bbox: BBox,
    pub raw_feature: Vec<f64>,
    pub mix: Option<MixRecord>,
}

/// Two augmented views of one scene with instance-level correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view1: Vec<Proposal>,
    pub view2: Vec<Proposal>,
    /// `correspondence[i]` is the index in `view2` matched to `view1[i]`.
    pub correspondence: Vec<Option<usize>>,
}

impl ViewPair {
    pub fn positive_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.correspondence
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
    }
}

/// Full geometric map for one view: flip, then jitter, then affine, then crop.
fn sample_view_geometry<R: Rng>(cfg: &AugmentationConfig, rng: &mut R) -> AffineTransform {
    let flip = if rng.gen_bool(cfg.flip_prob) {
        AffineTransform {
            linear: [[-1.0, 0.0], [0.0, 1.0]],
            translation: [1.0, 0.0],
        }
    } else {
        AffineTransform::IDENTITY
    };
    let js = uniform(rng, cfg.jitter_scale.0, cfg.jitter_scale.1);
    let jitter = about_center([[js, 0.0], [0.0, js]], 0.0, 0.0);
    let affine = draw_affine(cfg, rng);
    let c = uniform(rng, cfg.crop_fraction.0, cfg.crop_fraction.1);
    let x0 = uniform(rng, 0.0, 1.0 - c);
    let y0 = uniform(rng, 0.0, 1.0 - c);
    let crop = AffineTransform {
        linear: [[1.0 / c, 0.0], [0.0, 1.0 / c]],
        translation: [-x0 / c, -y0 / c],
    };
    crop.compose(&affine.compose(&jitter.compose(&flip)))
}

fn make_view<R: Rng>(
    scene: &Scene,
    cfg: &AugmentationConfig,
    view_id: u8,
    rng: &mut R,
) -> Vec<Proposal> {
    let geom = sample_view_geometry(cfg, rng);
    let unit = BBox::new(0.0, 0.0, 1.0, 1.0);
    let mut out = Vec::with_capacity(scene.instances.len());
    for inst in &scene.instances {
        let moved = geom.apply_box(&inst.bbox);
        // every random draw happens whether or not the proposal survives,
        // so survival of one instance never shifts another one's stream
        let mix = if scene.instances.len() > 1 && rng.gen_bool(cfg.mixup_prob) {
            let mut partner = rng.gen_range(0..scene.instances.len() - 1);
            let own = scene.instances.iter().position(|i| i.id == inst.id).unwrap_or(0);
            if partner >= own {
                partner += 1;
            }
            let weight = uniform(rng, cfg.mixup_weight.0, cfg.mixup_weight.1);
            Some(MixRecord {
                partner_id: scene.instances[partner].id,
                weight,
            })
        } else {
            None
        };
        let blur = uniform(rng, 0.0, cfg.blur);
        let bright = uniform(rng, 0.0, cfg.brightness);
        let noise = uniform(rng, 0.0, cfg.noise);

        let mut feature = match mix {
            Some(m) => {
                let other = &scene.instance(m.partner_id).expect("partner exists").appearance;
                inst.appearance
                    .iter()
                    .zip(other)
                    .map(|(a, b)| m.weight * a + (1.0 - m.weight) * b)
                    .collect()
            }
            None => inst.appearance.clone(),
        };
        feature = perturb_with(&feature, Photometric::BlurProxy, blur, rng);
        feature = perturb_with(&feature, Photometric::Brightness, bright, rng);
        feature = perturb_with(&feature, Photometric::Noise, noise, rng);

        let area = moved.area();
        let Some(visible) = moved.intersect(&unit) else {
            continue;
        };
        if area <= 0.0 || visible.area() < cfg.visibility * area {
            continue;
        }
        out.push(Proposal {
            instance_id: inst.id,
            view_id,
            bbox: visible,
            raw_feature: feature,
            mix,
        });
    }
    out
}

/// Builds two independently augmented views of `scene` and links surviving
/// proposals of the same instance.
pub fn make_view_pair(scene: &Scene, cfg: &AugmentationConfig, seed: u64) -> Result<ViewPair> {
    if scene.instances.is_empty() {
        return Err(arg("cannot augment an empty scene"));
    }
    cfg.validate()?;
    let view1 = make_view(scene, cfg, 1, &mut math::rng(mix_seed(seed, 1)));
    let view2 = make_view(scene, cfg, 2, &mut math::rng(mix_seed(seed, 2)));
    let mut first_in_view2 = BTreeMap::new();
    for (j, p) in view2.iter().enumerate() {
        first_in_view2.entry(p.instance_id).or_insert(j);
    }
    let mut used = BTreeMap::new();
    let correspondence = view1
        .iter()
        .map(|p| {
            let j = *first_in_view2.get(&p.instance_id)?;
            // keep the map injective if view1 ever carries duplicates
            used.insert(j, ()).is_none().then_some(j)
        })
        .collect();
    Ok(ViewPair {
        view1,
        view2,
        correspondence,
    })
}

/// A proposal inside a batch, tagged with the view pair it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchProposal {
    pub pair: usize,
    pub proposal: Proposal,
}

impl BatchProposal {
    /// Instance label unique across all pairs of the batch.
    pub fn label(&self) -> u64 {
        ((self.pair as u64) << 32) | u64::from(self.proposal.instance_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalBatch {
    pub proposals: Vec<BatchProposal>,
    pub cap: usize,
}

impl ProposalBatch {
    pub fn has_positive_pair(&self) -> bool {
        has_positive(self.proposals.iter())
    }
}

fn has_positive<'a>(it: impl Iterator<Item = &'a BatchProposal>) -> bool {
    let mut seen: BTreeMap<u64, u8> = BTreeMap::new();
    for p in it {
        let mask = seen.entry(p.label()).or_insert(0);
        *mask |= 1 << (p.proposal.view_id - 1);
        if *mask == 0b11 {
            return true;
        }
    }
    false
}

/// Resampling attempts before a positive pair is forced into the batch.
const POSITIVE_RETRIES: usize = 8;

/// Pools proposals of all pairs and subsamples them uniformly down to `cap`,
/// keeping at least one positive pair whenever the pool has one.
pub fn sample_proposals(pairs: &[ViewPair], cap: usize, seed: u64) -> Result<ProposalBatch> {
    if cap < 2 {
        return Err(arg(format!("proposal cap must be >= 2, got {cap}")));
    }
    let mut pool = Vec::new();
    let mut positives = Vec::new();
    for (k, pair) in pairs.iter().enumerate() {
        let base = pool.len();
        for (i, j) in pair.positive_pairs() {
            positives.push((base + i, base + pair.view1.len() + j));
        }
        pool.extend(pair.view1.iter().chain(&pair.view2).map(|p| BatchProposal {
            pair: k,
            proposal: p.clone(),
        }));
    }
    if pool.len() <= cap {
        return Ok(ProposalBatch {
            proposals: pool,
            cap,
        });
    }
    let mut rng = math::rng(seed);
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..POSITIVE_RETRIES {
        chosen = index::sample(&mut rng, pool.len(), cap).into_vec();
        chosen.sort_unstable();
        if positives.is_empty() || has_positive(chosen.iter().map(|&i| &pool[i])) {
            break;
        }
    }
    if !positives.is_empty() && !has_positive(chosen.iter().map(|&i| &pool[i])) {
        let (a, b) = positives[rng.gen_range(0..positives.len())];
        let rest: Vec<usize> = chosen.iter().copied().filter(|&i| i != a && i != b).collect();
        let drop = rest.len().saturating_sub(cap - 2);
        let mut forced = rest[drop..].to_vec();
        forced.push(a);
        forced.push(b);
        forced.sort_unstable();
        chosen = forced;
    }
    Ok(ProposalBatch {
        proposals: chosen.into_iter().map(|i| pool[i].clone()).collect(),
        cap,
    })
}

/// Video benchmark parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceConfig {
    pub n_instances: usize,
    pub d_raw: usize,
    pub frames: usize,
    /// Stddev of per-detection Gaussian feature noise.
    pub appearance_noise: f64,
    /// Per-detection brightness offset drawn from `[0, brightness]`.
    pub brightness: f64,
    /// Per-detection blur-proxy magnitude drawn from `[0, blur]`.
    pub blur: f64,
    /// Stddev of detection box position noise, unit coordinates.
    pub box_noise: f64,
    /// Detection confidences are uniform in this range.
    pub score_range: (f64, f64),
    /// Sequences where two instances overlap above this IoU are redrawn.
    pub max_pair_iou: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            n_instances: 10,
            d_raw: 16,
            frames: 50,
            appearance_noise: 0.1,
            brightness: 0.8,
            blur: 0.5,
            box_noise: 0.0,
            score_range: (0.75, 1.0),
            max_pair_iou: 0.3,
        }
    }
}

impl SequenceConfig {
    /// Zero appearance noise: detections carry the instance appearance.
    pub fn noise_free(n_instances: usize, frames: usize) -> Self {
        Self {
            n_instances,
            frames,
            appearance_noise: 0.0,
            brightness: 0.0,
            blur: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_instances == 0 {
            return Err(config("n_instances", "must be >= 1"));
        }
        if self.d_raw < 2 {
            return Err(config("d_raw", "must be >= 2"));
        }
        for (key, v) in [
            ("appearance_noise", self.appearance_noise),
            ("brightness", self.brightness),
            ("blur", self.blur),
            ("box_noise", self.box_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config(key, format!("{v} must be finite and >= 0")));
            }
        }
        let (lo, hi) = self.score_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(config("score_range", "must satisfy 0 <= lo <= hi <= 1"));
        }
        if !(0.0..=1.0).contains(&self.max_pair_iou) {
            return Err(config("max_pair_iou", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// One detector output of the simulated video, before embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame: u64,
    pub instance_id: u32,
    pub bbox: BBox,
    pub score: f64,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub scene: Scene,
    /// `frames[t]` holds the observations of frame `t + 1`.
    pub frames: Vec<Vec<Observation>>,
    pub ground_truth: TrajectorySet,
}

/// Attempts at drawing a scene whose instances stay separated.
const SEQUENCE_RETRIES: u64 = 256;

/// Simulates a video with one observation per instance per frame. Frames
/// are numbered from 1; ground-truth ids equal instance ids.
pub fn simulate_sequence(cfg: &SequenceConfig, seed: u64) -> Result<Sequence> {
    cfg.validate()?;
    let mut scene = None;
    for attempt in 0..SEQUENCE_RETRIES {
        let candidate = generate_scene(mix_seed(seed, attempt), cfg.n_instances, cfg.d_raw)?;
        if stays_separated(&candidate, cfg.frames, cfg.max_pair_iou) {
            scene = Some(candidate);
            break;
        }
    }
    let scene = scene.ok_or_else(|| {
        arg(format!(
            "no separated layout of {} instances found within {SEQUENCE_RETRIES} draws",
            cfg.n_instances
        ))
    })?;

    let mut rng = math::rng(mix_seed(seed, 0x0b5e_7ae5));
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut gt = TrajectorySet::new();
    let mut state = scene.clone();
    for t in 0..cfg.frames {
        if t > 0 {
            state = advance_scene(&state, 1);
        }
        let frame = t as u64 + 1;
        let mut obs = Vec::with_capacity(state.instances.len());
        for inst in &state.instances {
            gt.push(u64::from(inst.id), frame, inst.bbox)
                .expect("frames increase");
            let blur = uniform(&mut rng, 0.0, cfg.blur);
            let bright = uniform(&mut rng, 0.0, cfg.brightness);
            let mut feature = perturb_with(&inst.appearance, Photometric::BlurProxy, blur, &mut rng);
            feature = perturb_with(&feature, Photometric::Brightness, bright, &mut rng);
            feature = perturb_with(&feature, Photometric::Noise, cfg.appearance_noise, &mut rng);
            let dx = cfg.box_noise * gaussian(&mut rng);
            let dy = cfg.box_noise * gaussian(&mut rng);
            let score = uniform(&mut rng, cfg.score_range.0, cfg.score_range.1);
            obs.push(Observation {
                frame,
                instance_id: inst.id,
                bbox: inst.bbox.translate(dx, dy),
                score,
                feature,
            });
        }
        frames.push(obs);
    }
    Ok(Sequence {
        scene,
        frames,
        ground_truth: gt,
    })
}

fn stays_separated(scene: &Scene, frames: usize, max_iou: f64) -> bool {
    let mut state = scene.clone();
    for t in 0..frames {
        if t > 0 {
            state = advance_scene(&state, 1);
        }
        let n = state.instances.len();
        for i in 0..n {
            for j in i + 1..n {
                if iou(&state.instances[i].bbox, &state.instances[j].bbox) > max_iou {
                    return false;
                }
            }
        }
    }
    true
}
