use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgg_autodiff::{conv2d, grad, Conv2dSpec, Tensor, Var};

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Direct zero-padded cross-correlation, stride 1.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, pad: usize) -> Vec<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let mut out = vec![0.0; n * o * h * wd];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (y as i64 + ky as i64 - pad as i64, xx as i64 + kx as i64 - pad as i64);
                                if sy < 0 || sx < 0 || sy >= h as i64 || sx >= wd as i64 {
                                    continue;
                                }
                                acc += x.data()[((b * c + ic) * h + sy as usize) * wd + sx as usize]
                                    * w.data()[((oc * c + ic) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((b * o + oc) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    out
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-10 * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matmul_matches_the_triple_loop(m in 1usize..7, k in 1usize..7, n in 1usize..7, seed in any::<u64>()) {
        let (a, b) = (rand(&[m, k], seed), rand(&[k, n], seed ^ 1));
        let c = Var::constant(a.clone()).matmul(&Var::constant(b.clone()));
        let mut expected = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                expected[i * n + j] = (0..k).map(|l| a.data()[i * k + l] * b.data()[l * n + j]).sum();
            }
        }
        prop_assert!(close(c.value().data(), &expected));
    }

    #[test]
    fn same_padding_conv_matches_direct_loops(
        c in 1usize..4, o in 1usize..4, h in 1usize..7, w in 1usize..7, odd in 0usize..2, seed in any::<u64>()
    ) {
        let k = 2 * odd + 1;
        let (x, wt) = (rand(&[2, c, h, w], seed), rand(&[o, c, k, k], seed ^ 2));
        let y = conv2d(&Var::constant(x.clone()), &Var::constant(wt.clone()), Conv2dSpec::same(k));
        prop_assert_eq!(y.shape(), &[2, o, h, w]);
        prop_assert!(close(y.value().data(), &naive_conv(&x, &wt, k / 2)));
    }

    #[test]
    fn gradient_of_a_weighted_sum_is_the_weight(len in 1usize..20, seed in any::<u64>()) {
        let x = Var::leaf(rand(&[len], seed));
        let c = rand(&[len], seed ^ 3);
        let g = grad(&x.mul(&Var::constant(c.clone())).sum(), &[&x], false).remove(0);
        prop_assert_eq!(g.value(), &c);
    }

    #[test]
    fn pooling_undoes_nearest_upsampling(h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let x = rand(&[1, 2, h, w], seed);
        let y = Var::constant(x.clone()).upsample_nearest2().avg_pool2();
        prop_assert!(close(y.value().data(), x.data()));
    }
}
