mod common;

use candle_core::{DType, Device, Tensor};
use lgsan::cglrm::{spatial_merge, spatial_split};
use proptest::prelude::*;

#[test]
fn exact_identities_hold() {
    let r = common::structural_identities();
    assert!(r.split_merge_exact);
    assert!(r.saam_zero_branch_exact);
    assert!(r.cglrm_zero_branch_exact);
    assert!(r.mgfa_zero_mask_exact);
    assert!(r.lambda_linearity < 1e-9, "{:e}", r.lambda_linearity);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_then_merge_is_bitwise_identity(n in 1usize..3, c in 1usize..4, h in 1usize..13, w in 1usize..13, seed in any::<u64>()) {
        let x = common::tensor(&common::random_nchw(&mut common::rng(seed), n, c, h, w));
        let q = spatial_split(&x).unwrap();
        for p in &q.parts {
            prop_assert_eq!(p.dims(), &[n, c, h.div_ceil(2), w.div_ceil(2)]);
        }
        prop_assert_eq!(common::flat(&spatial_merge(&q).unwrap()), common::flat(&x));
    }

    #[test]
    fn cglrm_keeps_shape(h in 1usize..11, w in 1usize..11) {
        let mut ps = common::store(0);
        let cg = lgsan::cglrm::Cglrm::new(&mut ps, "cg", 3, 1, false).unwrap();
        let x = Tensor::ones((1, 3, h, w), DType::F64, &Device::Cpu).unwrap();
        let y = cg.forward(&x).unwrap();
        prop_assert_eq!(y.dims(), &[1, 3, h, w]);
    }
}
