//! Central finite-difference checks of every analytic gradient in the crate.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::embed::{
    backprop_head, contrastive_loss, contrastive_loss_and_grad, head_forward, ContrastiveBatch, EmbeddingHead, Matrix,
    Temperature,
};
use crate::error::Result;
use crate::kernels::{deformable_fuse, deformable_fuse_grad, DeformableParams, FeatureMap};
use crate::math::{self, gaussian, mix_seed};

/// Central differences of `f` at `x` with step `h`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = math::norm(a).max(math::norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        math::norm(&diff) / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

/// Random batch with `instances` ids seen in both views plus unpaired extras.
pub fn random_contrastive_batch(seed: u64, max_rows: usize, dim: usize) -> ContrastiveBatch {
    let mut rng = math::rng(seed);
    let n = rng.gen_range(2..=max_rows.max(2));
    let mut ids = Vec::with_capacity(n);
    let mut views = Vec::with_capacity(n);
    for i in 0..n {
        ids.push(rng.gen_range(0..(n as u64 / 2).max(1) + 1));
        views.push(if i % 2 == 0 { 1 } else { 2 });
    }
    // guarantee at least one positive pair
    ids[1] = ids[0];
    let data = (0..n * dim).map(|_| gaussian(&mut rng)).collect();
    ContrastiveBatch::new(Matrix::from_vec(n, dim, data).expect("sized"), ids, views).expect("sized")
}

/// Analytic contrastive gradient against central differences.
pub fn check_contrastive(cases: usize, seed: u64) -> Result<SuiteResult> {
    let tau = Temperature::DEFAULT;
    let mut worst: f64 = 0.0;
    for c in 0..cases as u64 {
        let batch = random_contrastive_batch(mix_seed(seed, c), 16, 8);
        let (_, grad) = contrastive_loss_and_grad(&batch, tau)?;
        let (n, d) = (batch.len(), batch.embeddings.cols());
        let f = |x: &[f64]| {
            let b = ContrastiveBatch {
                embeddings: Matrix::from_vec(n, d, x.to_vec()).expect("sized"),
                ..batch.clone()
            };
            contrastive_loss(&b, tau).map_or(f64::NAN, |l| l.total)
        };
        let numeric = central_differences(f, batch.embeddings.as_slice(), 1e-5);
        worst = worst.max(relative_error(grad.as_slice(), &numeric));
    }
    Ok(SuiteResult {
        name: "contrastive_loss".into(),
        cases,
        max_relative_error: worst,
        tolerance: 1e-4,
    })
}

/// Head backpropagation against central differences on its parameters.
pub fn check_head(cases: usize, seed: u64) -> Result<SuiteResult> {
    let mut worst: f64 = 0.0;
    for c in 0..cases as u64 {
        let s = mix_seed(seed, c);
        let head = EmbeddingHead::random(6, 10, 4, s)?;
        let mut rng = math::rng(mix_seed(s, 1));
        let features = Matrix::from_vec(5, 6, (0..30).map(|_| gaussian(&mut rng)).collect())?;
        let upstream = Matrix::from_vec(5, 4, (0..20).map(|_| gaussian(&mut rng)).collect())?;
        let analytic = backprop_head(&head, &features, &upstream)?.flatten();
        let f = |p: &[f64]| {
            let mut h = head.clone();
            h.set_params(p).expect("sized");
            let out = head_forward(&h, &features).expect("shape");
            math::dot(out.as_slice(), upstream.as_slice())
        };
        let numeric = central_differences(f, &head.params(), 1e-5);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(SuiteResult {
        name: "embedding_head".into(),
        cases,
        max_relative_error: worst,
        tolerance: 1e-4,
    })
}

/// Random two-level configuration whose sampling points all sit at least
/// `margin` away from cell boundaries.
pub fn random_deformable_case(seed: u64, margin: f64) -> (Vec<FeatureMap>, DeformableParams, (f64, f64), Vec<f64>) {
    let mut rng = math::rng(seed);
    loop {
        let c = 3;
        let levels = [(16usize, 8usize), (32, 4)]
            .iter()
            .map(|&(s, n)| {
                let vals: Vec<f64> = (0..n * n * c).map(|_| gaussian(&mut rng)).collect();
                FeatureMap::from_fn(s, n, n, c, |y, x, k| vals[(y * n + x) * c + k]).expect("positive")
            })
            .collect::<Vec<_>>();
        let mut params = DeformableParams::grid3x3(levels.len());
        for w in &mut params.weights {
            *w = rng.gen_range(-1.0..1.0);
        }
        for o in &mut params.offsets {
            *o = [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)];
        }
        for m in &mut params.modulation {
            *m = rng.gen_range(0.05..1.0);
        }
        let p = (rng.gen_range(2.0..5.0), rng.gen_range(2.0..5.0));
        let upstream: Vec<f64> = (0..c).map(|_| gaussian(&mut rng)).collect();
        if sample_points_clear(&levels, &params, p, margin) {
            return (levels, params, p, upstream);
        }
    }
}

fn sample_points_clear(levels: &[FeatureMap], params: &DeformableParams, p: (f64, f64), margin: f64) -> bool {
    let k = params.kernel_size();
    let rs = levels[0].stride as f64;
    levels.iter().enumerate().all(|(j, l)| {
        let r = rs / l.stride as f64;
        (0..k).all(|kk| {
            let off = params.offsets[j * k + kk];
            let base = params.base_offsets[kk];
            [
                (p.0 + 0.5) * r - 0.5 + base[0] + off[0],
                (p.1 + 0.5) * r - 0.5 + base[1] + off[1],
            ]
            .iter()
            .all(|&v| {
                let f = v - libm::floor(v);
                f > margin && f < 1.0 - margin
            })
        })
    })
}

fn pack(p: &DeformableParams) -> Vec<f64> {
    let mut v: Vec<f64> = p.offsets.iter().flat_map(|o| [o[0], o[1]]).collect();
    v.extend(&p.modulation);
    v.extend(&p.weights);
    v
}

fn unpack(template: &DeformableParams, v: &[f64]) -> DeformableParams {
    let n = template.offsets.len();
    let mut p = template.clone();
    for (i, o) in p.offsets.iter_mut().enumerate() {
        *o = [v[2 * i], v[2 * i + 1]];
    }
    p.modulation.copy_from_slice(&v[2 * n..3 * n]);
    p.weights.copy_from_slice(&v[3 * n..]);
    p
}

/// Deformable fusion gradients (offsets, modulation, weights) against
/// central differences.
pub fn check_deformable(cases: usize, seed: u64) -> Result<SuiteResult> {
    let mut worst: f64 = 0.0;
    for c in 0..cases as u64 {
        let (levels, params, p, upstream) = random_deformable_case(mix_seed(seed, c), 1e-3);
        let g = deformable_fuse_grad(&levels, &params, p, &upstream)?;
        let mut analytic: Vec<f64> = g.offsets.iter().flat_map(|o| [o[0], o[1]]).collect();
        analytic.extend(&g.modulation);
        analytic.extend(&g.weights);
        let f = |v: &[f64]| {
            let out = deformable_fuse(&levels, &unpack(&params, v), p).expect("valid");
            math::dot(&out, &upstream)
        };
        let numeric = central_differences(f, &pack(&params), 1e-4);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(SuiteResult {
        name: "deformable_fusion".into(),
        cases,
        max_relative_error: worst,
        tolerance: 1e-3,
    })
}

/// Every suite at its acceptance size.
pub fn run_all(seed: u64) -> Result<Vec<SuiteResult>> {
    Ok(alloc::vec![
        check_contrastive(10, seed)?,
        check_head(5, seed)?,
        check_deformable(5, seed)?,
    ])
}
