use std::f64::consts::PI;

use equinet::autodiff::{Tape, Tensor, Var};
use equinet::experiments::SearchSpace;
use equinet::irreps::{cg_coefficients, rotate_features, spherical_harmonics, FeatureBlock, Irreps, Rotation};
use equinet::layers::{gated, GatedBlock};
use equinet::model::ModelConfig;
use equinet::radial::CosineBasis;
use equinet::train::{PlateauScheduler, TrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rotation(seed: u64) -> Rotation {
    Rotation::random(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn block(irreps: &Irreps, atoms: usize, values: &[f64]) -> FeatureBlock {
    let n = atoms * irreps.dim();
    let data = (0..n).map(|i| values[i % values.len()] * (1.0 + i as f64 * 0.01)).collect();
    FeatureBlock::new(irreps.clone(), Tensor::new(vec![atoms, irreps.dim()], data).unwrap()).unwrap()
}

/// Central-difference derivative of a scalar function of one input entry.
fn numeric(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, i: usize) -> f64 {
    let h = 1e-5;
    let mut p = x.clone();
    p.data_mut()[i] += h;
    let mut m = x.clone();
    m.data_mut()[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

fn primitive<'t>(op: &str, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
    let w = Tensor::new(vec![3, 2], vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9]).unwrap();
    let y = match op {
        "softplus" => x.softplus(),
        "sigmoid" => x.sigmoid(),
        "square" => x.square(),
        "affine" => x.matmul(tape.constant(w)).and_then(|v| v.softplus()),
        _ => x.sum_axis(0).and_then(|v| v.square()),
    };
    y.unwrap().mean().unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn irreps_text_round_trips(s in 0usize..200, v in 0usize..60) {
        prop_assume!(s + v > 0);
        let i = Irreps::from_counts(s, v);
        prop_assert_eq!(i.to_string().parse::<Irreps>().unwrap(), i.clone());
        prop_assert_eq!(i.dim(), s + 3 * v);
    }

    #[test]
    fn rotations_compose_and_leave_scalars_alone(
        a in any::<u64>(), b in any::<u64>(),
        values in proptest::collection::vec(-5.0f64..5.0, 1..20),
        s in 0usize..4, v in 1usize..4,
    ) {
        let irreps = Irreps::from_counts(s, v);
        let f = block(&irreps, 3, &values);
        let (ra, rb) = (rotation(a), rotation(b));
        let twice = rotate_features(&ra, &rotate_features(&rb, &f).unwrap()).unwrap();
        let once = rotate_features(&ra.compose(&rb), &f).unwrap();
        prop_assert!(twice.values.max_abs_diff(&once.values) < 1e-12);
        for atom in 0..3 {
            prop_assert_eq!(&once.values.row(atom)[..s], &f.values.row(atom)[..s]);
            for k in 0..v {
                let norm = |t: &Tensor| t.row(atom)[s + 3 * k..s + 3 * k + 3].iter().map(|x| x * x).sum::<f64>();
                prop_assert!((norm(&once.values) - norm(&f.values)).abs() < 1e-10 * norm(&f.values).max(1.0));
            }
        }
    }

    #[test]
    fn vector_harmonics_have_constant_norm(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
        let n = (x * x + y * y + z * z).sqrt();
        prop_assume!(n > 1e-3);
        let y1 = spherical_harmonics(1, [x / n, y / n, z / n]).unwrap();
        prop_assert!((y1.iter().map(|v| v * v).sum::<f64>() - 3.0 / (4.0 * PI)).abs() < 1e-13);
    }

    #[test]
    fn basis_is_a_partition_of_unity(num in 3usize..100, r_max in 1.2f64..30.0, t in 0.0f64..1.0) {
        let b = CosineBasis::new(num, r_max).unwrap();
        let d = b.spacing() + t * (r_max - 2.0 * b.spacing());
        let e = b.expand(d).unwrap();
        prop_assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(e.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!(e.iter().filter(|&&x| x > 1e-15).count() <= 2);
        prop_assert!(b.expand(b.support_end() + t + 1e-9).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn primitive_gradients_match_central_differences(values in proptest::collection::vec(-3.0f64..3.0, 6)) {
        let x = Tensor::new(vec![2, 3], values).unwrap();
        for op in ["softplus", "sigmoid", "square", "affine", "sum_axis"] {
            let tape = Tape::new();
            let xv = tape.leaf(x.clone(), true);
            primitive(op, &tape, xv).backward().unwrap();
            let g = xv.grad().unwrap();
            let f = |p: &Tensor| {
                let t = Tape::new();
                primitive(op, &t, t.constant(p.clone())).item()
            };
            for i in 0..x.len() {
                let n = numeric(&f, &x, i);
                prop_assert!(rel(g.data()[i], n) < 1e-6, "{} entry {}: {} vs {}", op, i, g.data()[i], n);
            }
        }
    }

    #[test]
    fn reused_values_accumulate_gradients(v in -4.0f64..4.0) {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(v), true);
        let y = x.mul(x).unwrap().add(x.sigmoid().unwrap()).unwrap();
        y.backward().unwrap();
        let s = 1.0 / (1.0 + (-v).exp());
        prop_assert!((x.grad().unwrap().item() - (2.0 * v + s * (1.0 - s))).abs() < 1e-12);
    }

    #[test]
    fn gated_block_is_equivariant(seed in any::<u64>(), values in proptest::collection::vec(-3.0f64..3.0, 1..16)) {
        let g = GatedBlock::for_output(&"3x0+2x1".parse().unwrap());
        let f = block(&g.input_irreps(), 4, &values);
        let r = rotation(seed);
        let a = rotate_features(&r, &gated(&g, &f).unwrap()).unwrap();
        let b = gated(&g, &rotate_features(&r, &f).unwrap()).unwrap();
        prop_assert!(a.values.max_abs_diff(&b.values) < 1e-12);
    }

    #[test]
    fn scheduler_never_raises_lr(losses in proptest::collection::vec(0.0f64..10.0, 1..80)) {
        let mut s = PlateauScheduler::new(0.5, 5, 1e-7);
        let mut lr = 6.53e-3;
        for l in losses {
            let next = s.step(l, lr);
            prop_assert!(next <= lr && next >= 1e-7);
            lr = next;
        }
    }

    #[test]
    fn sampled_search_configs_are_valid(seed in any::<u64>()) {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, t) = space.sample(&mut rng, &ModelConfig::default(), &TrainConfig::default());
        prop_assert!(m.validate().is_ok());
        prop_assert!((1e-6..=0.3).contains(&t.lr_init));
        prop_assert!((8..=25).contains(&t.batch_size));
        prop_assert!((80..=144).contains(&m.hidden.dim()));
    }
}

#[test]
fn cg_blocks_are_unit_frobenius() {
    for (l_out, l_in, l_f) in [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0), (1, 1, 1)] {
        let c = cg_coefficients(l_out, l_in, l_f).unwrap();
        let norm: f64 = c.data().iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-14, "({l_out},{l_in},{l_f}) {norm}");
    }
}
