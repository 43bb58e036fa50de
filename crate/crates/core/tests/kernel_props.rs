use instassoc_core::kernels::{
    bilinear_sample, build_pyramid, deformable_fuse, deformable_fuse_grad, patch_to_feature, roi_extract,
    DeformableParams, FeatureMap,
};
use instassoc_core::math::{cosine_sim, gaussian, rng};
use instassoc_core::sim::generate_scene;
use instassoc_core::BBox;
use proptest::prelude::*;
use rand::Rng;

fn random_map(seed: u64, stride: usize, h: usize, w: usize, c: usize) -> FeatureMap {
    let mut r = rng(seed);
    let vals: Vec<f64> = (0..h * w * c).map(|_| gaussian(&mut r)).collect();
    FeatureMap::from_fn(stride, h, w, c, |y, x, k| vals[(y * w + x) * c + k]).unwrap()
}

fn combine(a: &FeatureMap, b: &FeatureMap, alpha: f64, beta: f64) -> FeatureMap {
    let mut out = a.clone();
    for (o, v) in out.data.iter_mut().zip(&b.data) {
        *o = alpha * *o + beta * v;
    }
    out
}

#[test]
fn identity_kernel_is_plain_bilinear() {
    let m = random_map(3, 8, 6, 7, 4);
    let params = DeformableParams::identity(1);
    for &(x, y) in &[(0.0, 0.0), (2.3, 4.7), (-0.4, 1.1), (6.2, 5.5), (3.0, 3.0)] {
        assert_eq!(deformable_fuse(std::slice::from_ref(&m), &params, (x, y)).unwrap(), bilinear_sample(&m, x, y));
    }
}

#[test]
fn fusion_is_linear_in_the_maps() {
    let f = [random_map(1, 8, 6, 6, 3), random_map(2, 16, 3, 3, 3)];
    let g = [random_map(3, 8, 6, 6, 3), random_map(4, 16, 3, 3, 3)];
    let mut params = DeformableParams::grid3x3(2);
    let mut r = rng(9);
    for o in &mut params.offsets {
        *o = [r.gen_range(-0.7..0.7), r.gen_range(-0.7..0.7)];
    }
    let (alpha, beta) = (0.7, -1.3);
    let mixed: Vec<FeatureMap> = f.iter().zip(&g).map(|(a, b)| combine(a, b, alpha, beta)).collect();
    let p = (2.4, 3.1);
    let lhs = deformable_fuse(&mixed, &params, p).unwrap();
    let fa = deformable_fuse(&f, &params, p).unwrap();
    let gb = deformable_fuse(&g, &params, p).unwrap();
    for c in 0..3 {
        assert!((lhs[c] - (alpha * fa[c] + beta * gb[c])).abs() < 1e-12);
    }
}

/// Finite differences written out here rather than reusing the library harness.
#[test]
fn gradients_match_central_differences() {
    let mut r = rng(77);
    let mut checked = 0;
    while checked < 5 {
        let levels = vec![random_map(r.gen(), 4, 10, 10, 2), random_map(r.gen(), 8, 5, 5, 2)];
        let mut params = DeformableParams::grid3x3(2);
        for w in &mut params.weights {
            *w = r.gen_range(-1.0..1.0);
        }
        for o in &mut params.offsets {
            *o = [r.gen_range(-0.9..0.9), r.gen_range(-0.9..0.9)];
        }
        for m in &mut params.modulation {
            *m = r.gen_range(0.1..1.0);
        }
        let p = (r.gen_range(3.0..6.0), r.gen_range(3.0..6.0));
        let up = [gaussian(&mut r), gaussian(&mut r)];
        // skip configurations with a tap within 1e-3 of a cell edge
        let near_edge = (0..2).any(|j| {
            let ratio = [1.0, 0.5][j];
            (0..9).any(|k| {
                let o = params.offsets[j * 9 + k];
                let b = params.base_offsets[k];
                [(p.0 + 0.5) * ratio - 0.5 + b[0] + o[0], (p.1 + 0.5) * ratio - 0.5 + b[1] + o[1]]
                    .iter()
                    .any(|v| (v - v.round()).abs() < 1e-3)
            })
        });
        if near_edge {
            continue;
        }
        let objective = |pp: &DeformableParams| -> f64 {
            let v = deformable_fuse(&levels, pp, p).unwrap();
            v[0] * up[0] + v[1] * up[1]
        };
        let g = deformable_fuse_grad(&levels, &params, p, &up).unwrap();
        let h = 1e-4;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for i in 0..params.offsets.len() {
            for axis in 0..2 {
                let mut a = params.clone();
                a.offsets[i][axis] += h;
                let mut b = params.clone();
                b.offsets[i][axis] -= h;
                numeric.push((objective(&a) - objective(&b)) / (2.0 * h));
                analytic.push(g.offsets[i][axis]);
            }
            let mut a = params.clone();
            a.modulation[i] += h;
            let mut b = params.clone();
            b.modulation[i] -= h;
            numeric.push((objective(&a) - objective(&b)) / (2.0 * h));
            analytic.push(g.modulation[i]);
        }
        for k in 0..9 {
            let mut a = params.clone();
            a.weights[k] += h;
            let mut b = params.clone();
            b.weights[k] -= h;
            numeric.push((objective(&a) - objective(&b)) / (2.0 * h));
            analytic.push(g.weights[k]);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff / scale < 1e-3, "relative error {}", diff / scale);
        checked += 1;
    }
}

#[test]
fn pyramid_shapes_and_constants() {
    let base = FeatureMap::from_fn(16, 5, 7, 2, |_, _, k| 1.0 + k as f64).unwrap();
    let pyr = build_pyramid(&base).unwrap();
    let dims: Vec<_> = pyr.iter().map(|l| (l.stride, l.height, l.width)).collect();
    assert_eq!(dims, vec![(4, 20, 28), (8, 10, 14), (16, 5, 7), (32, 3, 4)]);
    for l in pyr.iter() {
        for cell in l.data.chunks(2) {
            assert!((cell[0] - 1.0).abs() < 1e-12 && (cell[1] - 2.0).abs() < 1e-12);
        }
    }
    assert!(build_pyramid(&random_map(0, 8, 4, 4, 1)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Shifting the map by whole cells and the box by the same pixels
    /// leaves the pooled patch unchanged.
    #[test]
    fn roi_translation_equivariance(
        seed in 0u64..1000,
        dx in 0usize..3,
        dy in 0usize..3,
        bx in 4.0f64..20.0,
        by in 4.0f64..20.0,
        bw in 2.0f64..14.0,
        bh in 2.0f64..14.0,
        size in 1usize..5,
    ) {
        let stride = 4;
        let m = random_map(seed, stride, 12, 12, 2);
        let shifted = FeatureMap::from_fn(stride, 12 + dy, 12 + dx, 2, |y, x, k| {
            if y >= dy && x >= dx { m.cell(y - dy, x - dx)[k] } else { 0.0 }
        }).unwrap();
        let b = BBox::new(bx, by, bw, bh);
        let moved = b.translate((dx * stride) as f64, (dy * stride) as f64);
        let p = roi_extract(&m, &b, size).unwrap();
        let q = roi_extract(&shifted, &moved, size).unwrap();
        for (u, v) in p.data.iter().zip(&q.data) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }
}

/// Paints scene instances into a stride-16 map, builds the pyramid, and
/// checks that ROI features of isolated instances point at their own
/// appearance.
#[test]
fn rasterized_scene_round_trip() {
    let side = 512.0;
    let scene = generate_scene(5, 8, 6).unwrap();
    let cells = (side as usize) / 16;
    let mut base = FeatureMap::zeros(16, cells, cells, 6).unwrap();
    for inst in &scene.instances {
        let b = inst.bbox;
        for y in 0..cells {
            for x in 0..cells {
                let (cx, cy) = ((x as f64 + 0.5) * 16.0 / side, (y as f64 + 0.5) * 16.0 / side);
                if b.contains_point(cx, cy) {
                    base.cell_mut(y, x).copy_from_slice(&inst.appearance);
                }
            }
        }
    }
    let pyr = build_pyramid(&base).unwrap();
    let fine = &pyr[0];
    let mut checked = 0;
    for inst in &scene.instances {
        let b = inst.bbox;
        let px = BBox::new(b.x * side, b.y * side, b.w * side, b.h * side);
        let isolated = scene
            .instances
            .iter()
            .filter(|o| o.id != inst.id)
            .all(|o| {
                let grown = BBox::new(o.bbox.x - 0.08, o.bbox.y - 0.08, o.bbox.w + 0.16, o.bbox.h + 0.16);
                grown.intersect(&b).is_none()
            });
        let painted = base.data.chunks(6).any(|c| c == inst.appearance.as_slice());
        if !isolated || !painted {
            continue;
        }
        let feat = patch_to_feature(&roi_extract(fine, &px, 3).unwrap());
        let mean = &feat[..6];
        let own = cosine_sim(mean, &inst.appearance).unwrap();
        for other in scene.instances.iter().filter(|o| o.id != inst.id) {
            assert!(own > cosine_sim(mean, &other.appearance).unwrap());
        }
        checked += 1;
    }
    assert!(checked >= 1, "no isolated instance to check");
}
