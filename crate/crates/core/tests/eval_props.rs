use instassoc_core::embed::Matrix;
use instassoc_core::eval::{hungarian, idf1, TrajectorySet};
use instassoc_core::math::{rng, uniform};
use instassoc_core::BBox;
use proptest::prelude::*;
use rand::Rng;

/// Minimum over all injective row→column maps (rows ≤ cols).
fn brute_force(cost: &Matrix) -> f64 {
    fn go(cost: &Matrix, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.rows() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..cost.cols() {
            if !used[c] {
                used[c] = true;
                best = best.min(cost.get(row, c) + go(cost, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    let t = if cost.rows() > cost.cols() { transpose(cost) } else { cost.clone() };
    go(&t, 0, &mut vec![false; t.cols()])
}

fn transpose(m: &Matrix) -> Matrix {
    let mut t = Matrix::zeros(m.cols(), m.rows());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            t.set(j, i, m.get(i, j));
        }
    }
    t
}

#[test]
fn hungarian_matches_brute_force() {
    let mut r = rng(2024);
    for case in 0..100 {
        let (n, m) = (r.gen_range(1..=6), r.gen_range(1..=6));
        // integer costs make ties common, which is the hard part
        let data: Vec<f64> = (0..n * m)
            .map(|_| if case % 2 == 0 { r.gen_range(0..10) as f64 } else { uniform(&mut r, -5.0, 5.0) })
            .collect();
        let cost = Matrix::from_vec(n, m, data).unwrap();
        let a = hungarian(&cost);
        let total: f64 = a.pairs().map(|(i, j)| cost.get(i, j)).sum();
        assert_eq!(a.pairs().count(), n.min(m));
        let cols: std::collections::BTreeSet<usize> = a.pairs().map(|(_, j)| j).collect();
        assert_eq!(cols.len(), n.min(m));
        let oracle = brute_force(&cost);
        assert!((total - oracle).abs() < 1e-9, "case {case}: {total} vs {oracle}");
        assert!((a.cost - oracle).abs() < 1e-9);
    }
}

fn random_set(seed: u64, ids: u64, frames: u64) -> TrajectorySet {
    let mut r = rng(seed);
    let mut s = TrajectorySet::new();
    for id in 1..=ids {
        let (x, y) = (uniform(&mut r, 0.0, 10.0), uniform(&mut r, 0.0, 10.0));
        let start = r.gen_range(1..frames);
        for f in start..=frames {
            if r.gen_bool(0.9) {
                s.push(id, f, BBox::new(x + 0.05 * f as f64, y, 1.0, 1.0)).unwrap();
            }
        }
    }
    s
}

/// Prediction derived from ground truth with jitter, splits and dropouts.
fn corrupt(gt: &TrajectorySet, seed: u64) -> TrajectorySet {
    let mut r = rng(seed);
    let mut p = TrajectorySet::new();
    for (id, t) in gt.iter() {
        let split = r.gen_range(0..t.len() + 1);
        for (k, &(f, b)) in t.iter().enumerate() {
            if r.gen_bool(0.85) {
                let pid = if k < split { id } else { id + 100 };
                p.push(pid, f, b.translate(uniform(&mut r, -0.3, 0.3), 0.0)).unwrap();
            }
        }
    }
    p
}

fn relabel(s: &TrajectorySet, offset: u64) -> TrajectorySet {
    let mut out = TrajectorySet::new();
    for (id, t) in s.iter() {
        let new_id = (id * 7919 + offset) % 100_003;
        for &(f, b) in t {
            out.push(new_id, f, b).unwrap();
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn idf1_ignores_labels(seed in any::<u64>(), offset in 0u64..1000) {
        let gt = random_set(seed, 5, 20);
        let pred = corrupt(&gt, seed ^ 7);
        let a = idf1(&gt, &pred, 0.5);
        let b = idf1(&relabel(&gt, offset), &relabel(&pred, offset + 3), 0.5);
        prop_assert_eq!((a.idtp, a.idfp, a.idfn, a.id_switches), (b.idtp, b.idfp, b.idfn, b.id_switches));
    }

    #[test]
    fn idf1_symmetric_in_roles(seed in any::<u64>()) {
        let gt = random_set(seed, 4, 15);
        let pred = corrupt(&gt, seed ^ 11);
        let a = idf1(&gt, &pred, 0.5);
        let b = idf1(&pred, &gt, 0.5);
        prop_assert_eq!(a.idtp, b.idtp);
        prop_assert_eq!((a.idfp, a.idfn), (b.idfn, b.idfp));
        prop_assert!((a.idf1 - b.idf1).abs() < 1e-15);
    }

    #[test]
    fn removing_a_prediction_never_adds_false_positives(seed in any::<u64>(), pick in 0usize..16) {
        let gt = random_set(seed, 5, 20);
        let pred = corrupt(&gt, seed ^ 13);
        prop_assume!(!pred.is_empty());
        let victim = pred.ids().nth(pick % pred.len()).unwrap();
        let mut fewer = pred.clone();
        fewer.remove(victim);
        prop_assert!(idf1(&gt, &fewer, 0.5).idfp <= idf1(&gt, &pred, 0.5).idfp);
    }

    #[test]
    fn hungarian_beats_random_permutations(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(2..8);
        let cost = Matrix::from_vec(n, n, (0..n * n).map(|_| uniform(&mut r, 0.0, 1.0)).collect()).unwrap();
        let best = hungarian(&cost).cost;
        let mut perm: Vec<usize> = (0..n).collect();
        for _ in 0..20 {
            for i in (1..n).rev() {
                perm.swap(i, r.gen_range(0..=i));
            }
            let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
            prop_assert!(best <= c + 1e-12);
        }
    }
}
