use fgdistill::distill::{distillation_loss, encode_joint, BevEncoder, BoxBlurEncoder, IdentityEncoder};
use fgdistill::selfcheck::cases;
use fgdistill::view::BevFeatureGrid;
use ndarray::{stack, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;

fn pair(seed: u64, separated: bool) -> (BevFeatureGrid, BevFeatureGrid) {
    cases::random_grid_pair(&mut ChaCha8Rng::seed_from_u64(seed), 6, 7, 4, separated)
}

fn scaled(g: &BevFeatureGrid, c: f64) -> BevFeatureGrid {
    BevFeatureGrid { values: g.values.mapv(|v| c * v), cfg: g.cfg }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn power_of_two_scale_is_exact(seed in any::<u64>(), k in -20i32..20) {
        let (s, t) = pair(seed, false);
        let c = 2f64.powi(k);
        let base = distillation_loss(&t, &s, EPS).unwrap();
        let moved = distillation_loss(&scaled(&t, c), &scaled(&s, c), EPS * c).unwrap();
        prop_assert_eq!(base.loss, moved.loss);
    }

    #[test]
    fn common_scale_invariance(seed in any::<u64>(), c in prop::sample::select(vec![1e-3, 0.7, 1.0, 3.3, 1e3])) {
        let (s, t) = pair(seed, true);
        let base = distillation_loss(&t, &s, EPS).unwrap().loss;
        let moved = distillation_loss(&scaled(&t, c), &scaled(&s, c), EPS).unwrap().loss;
        prop_assert!((base - moved).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn nonnegative_and_zero_only_on_agreement(seed in any::<u64>()) {
        let (s, t) = pair(seed, false);
        let l = distillation_loss(&t, &s, EPS).unwrap();
        prop_assert!(l.loss >= 0.0);
        prop_assert_eq!(distillation_loss(&t, &t, EPS).unwrap().loss, 0.0);
        // student equal to teacher on every included cell gives zero
        let mut agree = s.clone();
        for ((i, j, k), v) in agree.values.indexed_iter_mut() {
            let tn: f64 = (0..4).map(|q| t.values[[i, j, q]].powi(2)).sum::<f64>().sqrt();
            if tn >= EPS {
                *v = t.values[[i, j, k]];
            }
        }
        prop_assert_eq!(distillation_loss(&t, &agree, EPS).unwrap().loss, 0.0);
        if l.included_cells > 0 && s.values != agree.values {
            prop_assert!(l.loss > 0.0);
        }
    }

    #[test]
    fn excluded_cells_do_not_matter(seed in any::<u64>()) {
        let (s, t) = pair(seed, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let mut other = s.clone();
        for ((i, j, _), v) in other.values.indexed_iter_mut() {
            let tn: f64 = (0..4).map(|q| t.values[[i, j, q]].powi(2)).sum::<f64>().sqrt();
            if tn < EPS {
                *v = rng.random_range(-100.0..100.0);
            }
        }
        prop_assert_eq!(distillation_loss(&t, &s, EPS).unwrap(), distillation_loss(&t, &other, EPS).unwrap());
    }

    #[test]
    fn encoders_treat_samples_independently(seed in any::<u64>()) {
        let (s, t) = pair(seed, false);
        let encoders: [&dyn BevEncoder; 2] = [&IdentityEncoder, &BoxBlurEncoder];
        for enc in encoders {
            let (se, te) = encode_joint(enc, &s, &t).unwrap();
            prop_assert_eq!(&se, &enc.encode(&s));
            prop_assert_eq!(&te, &enc.encode(&t));
            let batch = stack(Axis(0), &[t.values.view(), s.values.view(), t.values.view()]).unwrap();
            let out = enc.encode_batch(&batch);
            prop_assert_eq!(out.index_axis(Axis(0), 1), se.values.view());
            prop_assert_eq!(out.index_axis(Axis(0), 2), te.values.view());
        }
    }
}

#[test]
fn single_cell_example() {
    let cfg = fgdistill::view::BevGridConfig { grid_h: 1, grid_w: 1, ..Default::default() };
    let t = BevFeatureGrid::new(ndarray::Array3::from_shape_vec((1, 1, 2), vec![3.0, 4.0]).unwrap(), cfg).unwrap();
    let s = BevFeatureGrid::zeros(cfg, 2);
    let l = distillation_loss(&t, &s, EPS).unwrap();
    assert!((l.loss - 1.0).abs() < 1e-12);
    assert_eq!(l.included_cells, 1);
}
