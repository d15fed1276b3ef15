use cat_core::causal::{causal_loss, derangement, loss_from_estimates, DiscreteScm, PnsKind};
use cat_core::dsp::MrmfFeature;
use cat_core::train::mixup::mixup;
use cat_core::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Interval of `U_Y` on which the inverse CDF of `row` returns `y`.
fn label_interval(row: &[f64], y: usize) -> (f64, f64) {
    let lo: f64 = row[..y].iter().sum();
    let hi = if y + 1 == row.len() { 1.0 } else { lo + row[y] };
    (lo, hi.max(lo))
}

/// `P_U(label(r1, U) = y ∧ label(r2, U) ≠ y)`.
fn switch_mass(r1: &[f64], r2: &[f64], y: usize) -> f64 {
    let (a0, a1) = label_interval(r1, y);
    let (b0, b1) = label_interval(r2, y);
    let overlap = (a1.min(b1) - a0.max(b0)).max(0.0);
    (a1 - a0) - overlap
}

fn conditioned_x(scm: &DiscreteScm, c: usize, z: usize, inside: bool) -> Option<Vec<f64>> {
    let w: Vec<f64> = (0..scm.nx())
        .map(|x| {
            let pz = scm.z_given_x[x][z];
            scm.x_given_c[c][x] * if inside { pz } else { 1.0 - pz }
        })
        .collect();
    let mass: f64 = w.iter().sum();
    (mass > 0.0).then(|| w.iter().map(|v| v / mass).collect())
}

/// Explicit product over `C × X_factual × X_{do z} × X_{do ¬z}` with the
/// shared `U_Y` integrated interval by interval.
fn enumerated_pns(scm: &DiscreteScm, z: usize, y: usize) -> f64 {
    let nx = scm.nx();
    let mut total = 0.0;
    for c in 0..scm.nc() {
        let q_in = conditioned_x(scm, c, z, true);
        let q_out = conditioned_x(scm, c, z, false);
        for xf in 0..nx {
            let point = |x: usize| if x == xf { 1.0 } else { 0.0 };
            for xz in 0..nx {
                let p_in = q_in.as_ref().map_or_else(|| point(xz), |q| q[xz]);
                for xn in 0..nx {
                    let p_out = q_out.as_ref().map_or_else(|| point(xn), |q| q[xn]);
                    let w = scm.confounder_prior[c] * scm.x_given_c[c][xf] * p_in * p_out;
                    if w > 0.0 {
                        total += w * switch_mass(&scm.y_given_xc[c][xz], &scm.y_given_xc[c][xn], y);
                    }
                }
            }
        }
    }
    total
}

fn sparse_dist(rng: &mut impl Rng, n: usize, zero_rate: f64) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(zero_rate) { 0.0 } else { rng.random_range(0.05..1.0) })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            return w.into_iter().map(|v| v / s).collect();
        }
    }
}

/// Three-state `X` and `Y`, optional confounder, with occasional zero
/// entries so that conditioning events can be empty.
fn random_three_state(rng: &mut impl Rng) -> DiscreteScm {
    let nc = rng.random_range(1..=3);
    let nz = rng.random_range(2..=3);
    let prior = sparse_dist(rng, nc, 0.0);
    let x_given_c = (0..nc).map(|_| sparse_dist(rng, 3, 0.2)).collect();
    let z_given_x = (0..3)
        .map(|_| {
            if rng.random_bool(0.5) {
                let z = rng.random_range(0..nz);
                (0..nz).map(|j| if j == z { 1.0 } else { 0.0 }).collect()
            } else {
                sparse_dist(rng, nz, 0.2)
            }
        })
        .collect();
    let y_given_xc = (0..nc).map(|_| (0..3).map(|_| sparse_dist(rng, 3, 0.2)).collect()).collect();
    DiscreteScm::new(prior, x_given_c, z_given_x, y_given_xc).unwrap()
}

#[test]
fn exact_pns_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut degenerate_seen = false;
    for _ in 0..300 {
        let scm = random_three_state(&mut rng);
        for z in 0..scm.nz() {
            for y in 0..scm.ny() {
                let got = scm.brute_force_pns(z, y).unwrap();
                assert_eq!(got.kind, PnsKind::Exact);
                degenerate_seen |= got.degenerate;
                let oracle = enumerated_pns(&scm, z, y);
                assert!((got.value - oracle).abs() < 1e-12, "{scm:?} z={z} y={y}: {} vs {oracle}", got.value);
            }
        }
    }
    assert!(degenerate_seen);
}

#[test]
fn library_random_models_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..150 {
        let scm = DiscreteScm::random(&mut rng, i % 3 == 1, i % 3 == 2);
        for z in 0..scm.nz() {
            for y in 0..scm.ny() {
                let got = scm.brute_force_pns(z, y).unwrap().value;
                assert!((got - enumerated_pns(&scm, z, y)).abs() < 1e-12);
            }
        }
    }
}

fn scm_strategy() -> impl Strategy<Value = DiscreteScm> {
    (any::<u64>(), 0u8..3).prop_map(|(seed, kind)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DiscreteScm::random(&mut rng, kind == 1, kind == 2)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn interventional_bound_never_exceeds_exact(scm in scm_strategy()) {
        for z in 0..scm.nz() {
            for y in 0..scm.ny() {
                let exact = scm.brute_force_pns(z, y).unwrap().value;
                let bound = scm.interventional_bound(z, y).unwrap().value;
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&exact));
                prop_assert!(bound <= exact + 1e-10, "bound {} > exact {}", bound, exact);
            }
        }
    }

    #[test]
    fn observational_equals_interventional_without_confounding(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scm = DiscreteScm::random(&mut rng, false, false);
        prop_assert!(scm.is_confounder_free());
        for z in 0..scm.nz() {
            for y in 0..scm.ny() {
                let obs = scm.observational_estimate(z, y).unwrap();
                let int = scm.interventional_bound(z, y).unwrap();
                prop_assert!(!obs.degenerate);
                prop_assert!((obs.value - int.value).abs() < 1e-10);
            }
        }
    }
}

fn linear_classifier(w: Tensor) -> impl Fn(&mut Tape, Var) -> cat_core::Result<Var> {
    move |tape: &mut Tape, z: Var| {
        let wv = tape.constant(w.clone());
        tape.matmul(z, wv)
    }
}

fn one_hot_rows(labels: &[usize], classes: usize) -> Tensor {
    let data = labels
        .iter()
        .flat_map(|&l| (0..classes).map(move |c| if c == l { 1.0 } else { 0.0 }))
        .collect();
    Tensor::new(vec![labels.len(), classes], data).unwrap()
}

fn loss_value(z: &Tensor, targets: &Tensor, w: &Tensor, perm: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let zv = tape.leaf(z.clone());
    let l = causal_loss(&mut tape, zv, targets, &linear_classifier(w.clone()), perm, 1e-4).unwrap();
    tape.value(l).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn causal_loss_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, classes) = (4, 3);
        let z: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let w = Tensor::new(vec![d, classes], (0..d * classes).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let perm = derangement(n, &mut rng).unwrap();
        let base = loss_value(&Tensor::from_rows(&z).unwrap(), &one_hot_rows(&labels, classes), &w, &perm);

        // Reorder the batch by sigma and conjugate the donor map to match.
        let mut sigma: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            sigma.swap(i, rng.random_range(0..=i));
        }
        let mut inverse = vec![0; n];
        for (i, &s) in sigma.iter().enumerate() {
            inverse[s] = i;
        }
        let z2: Vec<Vec<f64>> = sigma.iter().map(|&s| z[s].clone()).collect();
        let labels2: Vec<usize> = sigma.iter().map(|&s| labels[s]).collect();
        let perm2: Vec<usize> = sigma.iter().map(|&s| inverse[perm[s]]).collect();
        let moved = loss_value(&Tensor::from_rows(&z2).unwrap(), &one_hot_rows(&labels2, classes), &w, &perm2);
        prop_assert_eq!(base.to_bits(), moved.to_bits());
    }

    #[test]
    fn loss_decreases_as_estimates_grow(
        est in prop::collection::vec(1e-4f64..1.0, 6),
        idx in 0usize..6,
        bump in 0.0f64..1.0,
    ) {
        let eval = |e: &[f64]| {
            let mut tape = Tape::new();
            let v = tape.leaf(Tensor::new(vec![2, 3], e.to_vec()).unwrap());
            let l = loss_from_estimates(&mut tape, v);
            tape.value(l).item()
        };
        let mut higher = est.clone();
        higher[idx] += (1.0 - higher[idx]) * bump;
        prop_assert!(eval(&higher) <= eval(&est));
    }

    #[test]
    fn mixup_stays_in_simplex_and_hull(
        a in prop::collection::vec(0.0f64..5.0, 16),
        b in prop::collection::vec(0.0f64..5.0, 16),
        la in 0usize..4,
        lb in 0usize..4,
        lambda in 0.0f64..=1.0,
    ) {
        let feat = |v: &[f64]| MrmfFeature::new(Tensor::new(vec![2, 2, 2, 2], v.to_vec()).unwrap(), vec![256, 512]).unwrap();
        let ya = one_hot_rows(&[la], 4).into_data();
        let yb = one_hot_rows(&[lb], 4).into_data();
        let (mixed, y) = mixup((&feat(&a), &ya), (&feat(&b), &yb), lambda).unwrap();
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(y.iter().all(|&p| (0.0..=1.0).contains(&p)));
        for ((m, x), w) in mixed.tensor.data().iter().zip(&a).zip(&b) {
            prop_assert!(*m >= x.min(*w) - 1e-12 && *m <= x.max(*w) + 1e-12);
        }
    }
}
