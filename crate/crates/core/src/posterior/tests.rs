use super::*;
use proptest::prelude::*;

fn set(c: &[usize]) -> LabelSet {
    LabelSet::from_classes(c.iter().copied()).unwrap()
}

fn two_instance_bag() -> PriorMatrix {
    PriorMatrix::from_rows(&[vec![0.6, 0.4], vec![0.3, 0.7]]).unwrap()
}

/// Unscaled subset DP over class masks, written independently of the lattice.
fn naive_tables(priors: &PriorMatrix, label: LabelSet) -> Vec<std::collections::HashMap<u64, f64>> {
    let mut tables = Vec::new();
    let mut cur = std::collections::HashMap::new();
    cur.insert(0u64, 1.0);
    for row in priors.rows() {
        let mut next = std::collections::HashMap::new();
        for (&mask, &p) in &cur {
            for c in label.iter() {
                *next.entry(mask | (1u64 << c)).or_insert(0.0) += p * row[c];
            }
        }
        tables.push(next.clone());
        cur = next;
    }
    tables
}

#[test]
fn two_instance_bag_all_engines() {
    let p = two_instance_bag();
    let y = set(&[0, 1]);
    for engine in [Engine::Forward, Engine::Fast, Engine::Brute] {
        let r = engine.run(&p, &SubsetLattice::new(y).unwrap()).unwrap();
        let post = r.posterior.to_rows();
        assert!((post[0][0] - 7.0 / 9.0).abs() < 1e-12, "{engine:?}");
        assert!((post[0][1] - 2.0 / 9.0).abs() < 1e-12);
        assert!((post[1][0] - 2.0 / 9.0).abs() < 1e-12);
        assert!((post[1][1] - 7.0 / 9.0).abs() < 1e-12);
        assert!((r.log_likelihood - 0.54f64.ln()).abs() < 1e-12);
        assert!((r.joint.get(0, 0) - 0.42).abs() < 1e-12);
        assert!((r.joint.get(0, 1) - 0.12).abs() < 1e-12);
        assert!((r.joint.get(1, 0) - 0.12).abs() < 1e-12);
        assert!((r.joint.get(1, 1) - 0.42).abs() < 1e-12);
    }
    assert!((bag_conditional_likelihood(&p, y).unwrap() - 0.54f64.ln()).abs() < 1e-14);
}

#[test]
fn singleton_label_gives_indicator_posteriors() {
    let p = PriorMatrix::from_rows(&[
        vec![0.2, 0.5, 0.3],
        vec![0.1, 0.1, 0.8],
        vec![0.6, 0.3, 0.1],
    ])
    .unwrap();
    let y = set(&[1]);
    for engine in [Engine::Forward, Engine::Fast, Engine::Brute] {
        let r = engine.run(&p, &SubsetLattice::new(y).unwrap()).unwrap();
        for row in r.posterior.rows() {
            assert_eq!(row, &[0.0, 1.0, 0.0]);
        }
        let expected = (0.5f64 * 0.1 * 0.3).ln();
        assert!((r.log_likelihood - expected).abs() < 1e-12);
    }
}

#[test]
fn single_instance_bag() {
    let p = PriorMatrix::from_rows(&[vec![0.2, 0.5, 0.3]]).unwrap();
    for engine in [Engine::Forward, Engine::Fast, Engine::Brute] {
        let r = engine
            .run(&p, &SubsetLattice::new(set(&[2])).unwrap())
            .unwrap();
        assert_eq!(r.posterior.row(0), &[0.0, 0.0, 1.0]);
        assert!((r.log_likelihood - 0.3f64.ln()).abs() < 1e-15);
    }
}

#[test]
fn forced_pair_is_a_permanent() {
    let p = PriorMatrix::from_rows(&[vec![0.1, 0.6, 0.3], vec![0.5, 0.2, 0.3]]).unwrap();
    let expected = 0.1 * 0.2 + 0.6 * 0.5;
    let ll = bag_conditional_likelihood(&p, set(&[0, 1])).unwrap();
    assert!((ll - f64::ln(expected)).abs() < 1e-14);
}

#[test]
fn degenerate_bag_is_rejected() {
    let p = PriorMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
    for engine in [Engine::Forward, Engine::Fast, Engine::Brute] {
        let err = engine
            .run(&p, &SubsetLattice::new(set(&[0, 1])).unwrap())
            .unwrap_err();
        assert!(matches!(
            err,
            MimlError::ZeroLikelihood {
                instances: 1,
                labels: 2
            }
        ));
    }
}

#[test]
fn brute_force_guard() {
    let rows = vec![vec![0.25; 4]; 13];
    let p = PriorMatrix::from_rows(&rows).unwrap();
    // 4^13 > 1e7
    assert!(matches!(
        posteriors_bruteforce(&p, set(&[0, 1, 2, 3])),
        Err(MimlError::OracleGuard(_))
    ));
}

#[test]
fn long_bag_does_not_underflow() {
    // 2000 instances with small priors: the unscaled likelihood is far below f64 range
    let rows: Vec<Vec<f64>> = (0..2000)
        .map(|i| {
            let a = 0.01 + 0.001 * (i % 7) as f64;
            vec![a, a, 1.0 - 2.0 * a]
        })
        .collect();
    let p = PriorMatrix::from_rows(&rows).unwrap();
    let y = set(&[0, 1]);
    let fast = posteriors_fast(&p, y).unwrap();
    let ll = bag_conditional_likelihood(&p, y).unwrap();
    assert!(fast.log_likelihood.is_finite() && fast.log_likelihood < -7000.0);
    assert!((fast.log_likelihood - ll).abs() <= 1e-9 * ll.abs());
    for row in fast.posterior.rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

fn random_bag() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (2usize..=6, 1usize..=3)
        .prop_flat_map(|(c, k)| {
            let k = k.min(c);
            (
                Just(c),
                prop::sample::subsequence((0..c).collect::<Vec<_>>(), k),
                k..=7usize,
            )
        })
        .prop_flat_map(|(c, y, n)| {
            (
                prop::collection::vec(prop::collection::vec(-4.0..4.0f64, c), n),
                Just(y),
            )
        })
}

fn softmax_rows(scores: &[Vec<f64>]) -> PriorMatrix {
    let rows: Vec<Vec<f64>> = scores
        .iter()
        .map(|s| {
            let mut s = s.clone();
            crate::model::softmax_in_place(&mut s);
            s
        })
        .collect();
    PriorMatrix::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn engines_agree_with_oracle((scores, y) in random_bag()) {
        let p = softmax_rows(&scores);
        let y = LabelSet::from_classes(y).unwrap();
        let brute = posteriors_bruteforce(&p, y).unwrap();
        let fwd = posteriors_forward(&p, y).unwrap();
        let fast = posteriors_fast(&p, y).unwrap();
        for r in [&fwd, &fast] {
            for (a, b) in r.posterior.rows().flatten().zip(brute.posterior.rows().flatten()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            prop_assert!((r.log_likelihood - brute.log_likelihood).abs() <= 1e-9 * brute.log_likelihood.abs().max(1.0));
        }
        let ll = bag_conditional_likelihood(&p, y).unwrap();
        prop_assert!((ll - fast.log_likelihood).abs() <= 1e-12 * ll.abs().max(1.0));
    }

    #[test]
    fn joint_rows_share_the_likelihood((scores, y) in random_bag()) {
        let p = softmax_rows(&scores);
        let y = LabelSet::from_classes(y).unwrap();
        for r in [posteriors_forward(&p, y).unwrap(), posteriors_fast(&p, y).unwrap()] {
            let like = r.log_likelihood.exp();
            for i in 0..r.joint.num_instances() {
                let s: f64 = (0..p.num_classes()).map(|c| r.joint.get(i, c)).sum();
                prop_assert!((s - like).abs() <= 1e-9 * like);
                for c in 0..p.num_classes() {
                    if !y.contains(c) {
                        prop_assert_eq!(r.joint.get(i, c), 0.0);
                        prop_assert_eq!(r.posterior.row(i)[c], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn permutation_equivariance((scores, y) in random_bag(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let p = softmax_rows(&scores);
        let y = LabelSet::from_classes(y).unwrap();
        let mut order: Vec<usize> = (0..p.num_instances()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let q = p.permuted(&order);
        let a = posteriors_fast(&p, y).unwrap();
        let b = posteriors_fast(&q, y).unwrap();
        prop_assert!((a.log_likelihood - b.log_likelihood).abs() <= 1e-10 * a.log_likelihood.abs().max(1.0));
        for (new_i, &old_i) in order.iter().enumerate() {
            for (x, z) in b.posterior.row(new_i).iter().zip(a.posterior.row(old_i)) {
                prop_assert!((x - z).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn rescaled_tables_match_unscaled((scores, y) in random_bag()) {
        let p = softmax_rows(&scores);
        let y = LabelSet::from_classes(y).unwrap();
        let lattice = SubsetLattice::new(y).unwrap();
        let naive = naive_tables(&p, y);
        for k in 1..=p.num_instances() {
            let t = forward_pass_with(&p, &lattice, k).unwrap();
            let mut total = 0.0;
            for r in 0..lattice.len() {
                let sub = lattice.subset(r);
                let expected = naive[k - 1].get(&sub.mask()).copied().unwrap_or(0.0);
                prop_assert!((t.mass(r) - expected).abs() <= 1e-12 * expected.max(1e-300) + 1e-300);
                // support: nothing on masks larger than the prefix
                if sub.len() > k {
                    prop_assert_eq!(t.values[r], 0.0);
                }
                total += t.mass(r);
            }
            prop_assert!(total <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn reconstruction_through_substitution((scores, y) in random_bag(), pick in any::<prop::sample::Index>()) {
        let p = softmax_rows(&scores);
        let y = LabelSet::from_classes(y).unwrap();
        prop_assume!(p.num_instances() > y.len());
        let lattice = SubsetLattice::new(y).unwrap();
        let i = pick.index(p.num_instances());
        let order: Vec<usize> = (0..p.num_instances()).filter(|&j| j != i).collect();
        let rest = p.permuted(&order);
        let v_table = forward_pass_with(&rest, &lattice, rest.num_instances()).unwrap();
        let u_table = forward_pass_with(&p, &lattice, p.num_instances()).unwrap();
        let v: Vec<f64> = (0..lattice.len()).map(|r| v_table.mass(r)).collect();
        let u: Vec<f64> = (0..lattice.len()).map(|r| u_table.mass(r)).collect();
        let a = SubstitutionMatrix::new(p.row(i), &lattice);
        let av = a.mul_vec(&v);
        let umax = u.iter().copied().fold(0.0, f64::max);
        for (x, z) in av.iter().zip(&u) {
            prop_assert!((x - z).abs() <= 1e-10 * umax);
        }
    }
}
