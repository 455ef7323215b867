mod common;

use bakr::model::{ChainMeta, HyperParams, PosteriorChain, ProjectionMode, SamplerConfig};
use bakr::selection::{default_threshold, permutation_cutoff, pooled_magnitude_quantile, ppaa, select};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// A chain whose effect size analogs are exactly `betas` (identity projection).
fn chain_from_betas(betas: DMatrix<f64>) -> PosteriorChain<f64> {
    let (t, p) = betas.shape();
    PosteriorChain {
        theta: betas,
        sigma2: vec![1.0; t],
        tau2: vec![1.0; t],
        projection: DMatrix::identity(p, p),
        meta: ChainMeta {
            hyper: HyperParams::default(),
            sampler: SamplerConfig::new(t + 1, 1, 0),
            n: p,
            p,
            q: p,
            projection_mode: ProjectionMode::Collapsed,
            kernel: None,
            variance_threshold: 1.0,
            variance_explained: 1.0,
        },
    }
}

fn betas() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..40, 1usize..8).prop_flat_map(|(t, p)| {
        proptest::collection::vec(-5.0f64..5.0, t * p).prop_map(move |v| DMatrix::from_row_slice(t, p, &v))
    })
}

proptest! {
    #[test]
    fn ppaa_is_monotone_in_z(b in betas(), z1 in 0.001f64..5.0, dz in 0.0f64..5.0) {
        let chain = chain_from_betas(b);
        let lo = ppaa(&chain, z1).unwrap();
        let hi = ppaa(&chain, z1 + dz).unwrap();
        prop_assert!(lo.iter().zip(&hi).all(|(a, b)| a >= b));
    }

    #[test]
    fn selection_shrinks_as_r_grows(scores in proptest::collection::vec(0.0f64..=1.0, 0..50), r1 in 0.0f64..1.0, dr in 0.0f64..1.0) {
        let wide = select(&scores, r1);
        let narrow = select(&scores, (r1 + dr).min(0.999));
        prop_assert!(narrow.iter().all(|j| wide.contains(j)));
    }

    #[test]
    fn ppaa_ignores_draw_order(b in betas(), z in 0.01f64..4.0, seed in any::<u64>()) {
        let t = b.nrows();
        let mut order: Vec<usize> = (0..t).collect();
        let mut rng = bakr::rng::rng_from_seed(seed);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let shuffled = DMatrix::from_fn(t, b.ncols(), |i, j| b[(order[i], j)]);
        let a = ppaa(&chain_from_betas(b), z).unwrap();
        let c = ppaa(&chain_from_betas(shuffled), z).unwrap();
        prop_assert_eq!(a, c);
    }

    #[test]
    fn pooled_quantile_matches_sorted_oracle(b in betas(), prob in 0.001f64..0.999) {
        let mut all: Vec<f64> = b.iter().map(|v| v.abs()).collect();
        all.sort_by(f64::total_cmp);
        // type-1 inverse CDF: smallest value whose empirical CDF reaches prob
        let k = all.iter().position(|_| true).map(|_| {
            (1..=all.len()).find(|&k| k as f64 / all.len() as f64 >= prob - 1e-12).unwrap()
        }).unwrap();
        prop_assert_eq!(pooled_magnitude_quantile(&chain_from_betas(b), prob).unwrap(), all[k - 1]);
    }

    #[test]
    fn permutation_cutoff_is_an_observed_maximum(maxima in proptest::collection::vec(0.0f64..=1.0, 1..60), fwer in 0.01f64..0.5) {
        let (r, _) = permutation_cutoff(&maxima, fwer).unwrap();
        prop_assert!(maxima.contains(&r));
        let exceed = maxima.iter().filter(|&&m| m > r).count() as f64;
        prop_assert!(exceed <= fwer * (maxima.len() + 1) as f64);
    }
}

#[test]
fn threshold_then_select_on_a_planted_signal() {
    // covariate 0 is large in every draw, the rest are small
    let b = DMatrix::from_fn(200, 20, |t, j| {
        if j == 0 {
            3.0 + (t % 7) as f64 * 0.01
        } else {
            ((t * 31 + j * 17) % 13) as f64 / 100.0
        }
    });
    let chain = chain_from_betas(b);
    let z = default_threshold(&chain, 0.05).unwrap();
    let scores = ppaa(&chain, z).unwrap();
    assert_eq!(select(&scores, 0.5), vec![0]);
}
