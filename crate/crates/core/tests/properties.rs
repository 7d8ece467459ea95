use proptest::prelude::*;
use qsk_core::calculus::{counting_integral, germ_at, meyer_transform, mobius_transform};
use qsk_core::chainspace::{enumerate_chains, enumerate_tables, fubini_residual, PointSpace, Table};
use qsk_core::cli::{random_complex, random_integrand, random_kernel_from, random_null_integrand, random_vector, QSpec};
use qsk_core::fock::{hilbert_adjoint, inner};
use qsk_core::ito::{dagger, germ_product, kernel_germ_distance, KernelAlgebra};
use qsk_core::kernel::{kernel_product, star_adjoint, unit_kernel, Kernel};
use qsk_core::repr::{epsilon, epsilon_defect_residual};
use qsk_core::C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn space_strategy(max_n: usize) -> impl Strategy<Value = PointSpace> {
    (0..=max_n, 1usize..=2)
        .prop_flat_map(|(n, dh)| {
            (
                Just(dh),
                proptest::collection::vec(0.05f64..1.0, n),
                proptest::collection::vec(0.05f64..2.0, n),
                proptest::collection::vec(1usize..=2, n),
            )
        })
        .prop_map(|(dh, gaps, w, d)| {
            let times: Vec<f64> = gaps.iter().scan(0.0, |t, g| {
                *t += g;
                Some(*t)
            }).collect();
            PointSpace::new(&times, &w, &d, dh).unwrap()
        })
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chains_enumerate_by_size_then_lex(s in space_strategy(5)) {
        let c = enumerate_chains(&s);
        prop_assert_eq!(c.len(), 1 << s.n());
        for w in c.windows(2) {
            prop_assert!(w[0].len() <= w[1].len());
        }
        prop_assert_eq!(enumerate_tables(&s).len(), 5usize.pow(s.n() as u32));
    }

    #[test]
    fn table_codes_round_trip(s in space_strategy(5)) {
        for t in enumerate_tables(&s) {
            prop_assert_eq!(Table::decode(&t.encode(s.n())).unwrap(), t);
        }
    }

    #[test]
    fn fubini_holds(s in space_strategy(4), seed in any::<u64>()) {
        let mut r = rng(seed);
        let vals: Vec<C64> = (0..(1usize << (2 * s.n()))).map(|_| random_complex(&mut r, 1.0)).collect();
        let f = |u: qsk_core::chainspace::Chain, k: qsk_core::chainspace::Chain| vals[(u.0 as usize) << s.n() | k.0 as usize];
        prop_assert!(fubini_residual(&s, f) < 1e-12);
    }

    #[test]
    fn kernel_json_is_bit_exact(s in space_strategy(3), seed in any::<u64>(), mag in 1e-300f64..1e300) {
        let k = random_kernel_from(&s, &mut rng(seed), 0.5, mag);
        let back = Kernel::from_json(&s, &k.to_json(&s)).unwrap();
        prop_assert_eq!(back.len(), k.len());
        for ((ta, a), (tb, b)) in k.iter().zip(back.iter()) {
            prop_assert_eq!(ta, tb);
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert_eq!(x.re.to_bits(), y.re.to_bits());
                prop_assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
        }
    }

    #[test]
    fn star_is_an_antimultiplicative_involution(s in space_strategy(3), seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_kernel_from(&s, &mut r, 0.5, 1.0);
        let y = random_kernel_from(&s, &mut r, 0.5, 1.0);
        prop_assert_eq!(star_adjoint(&star_adjoint(&x)), x.clone());
        let l = star_adjoint(&kernel_product(&x, &y));
        let rr = kernel_product(&star_adjoint(&y), &star_adjoint(&x));
        prop_assert!(l.distance(&rr) < 1e-12);
    }

    #[test]
    fn kernel_product_is_unital_and_associative(s in space_strategy(3), seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_kernel_from(&s, &mut r, 0.4, 1.0);
        let y = random_kernel_from(&s, &mut r, 0.4, 1.0);
        let z = random_kernel_from(&s, &mut r, 0.4, 1.0);
        let u = unit_kernel(&s);
        prop_assert!(kernel_product(&u, &x).distance(&x) < 1e-14);
        prop_assert!(kernel_product(&x, &u).distance(&x) < 1e-14);
        let a = kernel_product(&kernel_product(&x, &y), &z);
        let b = kernel_product(&x, &kernel_product(&y, &z));
        prop_assert!(a.distance(&b) < 1e-10 * (1.0 + a.norm()));
    }

    #[test]
    fn epsilon_is_linear_and_star_preserving(s in space_strategy(3), seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_kernel_from(&s, &mut r, 0.5, 1.0);
        let y = random_kernel_from(&s, &mut r, 0.5, 1.0);
        let c = random_complex(&mut r, 2.0);
        let lin = epsilon(&s, &x.scale(c).add(&y)) - (epsilon(&s, &x) * c + epsilon(&s, &y));
        prop_assert!(lin.norm() < 1e-12);
        let adj = hilbert_adjoint(&s, &epsilon(&s, &x)) - epsilon(&s, &star_adjoint(&x));
        prop_assert!(adj.norm() < 1e-12);
        let u = random_vector(&s, &mut r);
        let v = random_vector(&s, &mut r);
        let l = inner(&s, &u, &(epsilon(&s, &x) * &v));
        let rr = inner(&s, &(epsilon(&s, &star_adjoint(&x)) * &u), &v);
        prop_assert!((l - rr).norm() < 1e-11);
    }

    #[test]
    fn epsilon_defect_is_the_coincidence_product(s in space_strategy(3), seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_kernel_from(&s, &mut r, 0.5, 1.0);
        let y = random_kernel_from(&s, &mut r, 0.5, 1.0);
        prop_assert!(epsilon_defect_residual(&s, &x, &y) < 1e-10);
    }

    #[test]
    fn meyer_and_mobius_invert(s in space_strategy(3), seed in any::<u64>(), which in 0usize..5) {
        let mut r = rng(seed);
        let t = random_kernel_from(&s, &mut r, 0.5, 1.0);
        let spec = [QSpec::Zero, QSpec::Identity, QSpec::Projector(1), QSpec::Scalar(C64::new(2.0, 0.0)), QSpec::Random][which].clone();
        let q = spec.build(&s, &mut r);
        prop_assert!(mobius_transform(&s, &meyer_transform(&s, &t, &q), &q).distance(&t) < 1e-12);
        prop_assert!(meyer_transform(&s, &mobius_transform(&s, &t, &q), &q).distance(&t) < 1e-12);
    }

    #[test]
    fn germ_dagger_matches_star(s in space_strategy(3), seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_kernel_from(&s, &mut r, 0.5, 1.0);
        let y = random_kernel_from(&s, &mut r, 0.5, 1.0);
        for p in 0..s.n() {
            let (a, b) = (germ_at(&x, p), germ_at(&y, p));
            prop_assert!(kernel_germ_distance(&germ_at(&star_adjoint(&x), p), &dagger(&KernelAlgebra, &a)) < 1e-14);
            // germs of products are products of germs
            let g = germ_at(&kernel_product(&x, &y), p);
            prop_assert!(kernel_germ_distance(&g, &germ_product(&KernelAlgebra, &a, &b)) < 1e-10);
        }
    }

    #[test]
    fn counting_integral_is_linear_and_null_kernels_vanish(s in space_strategy(3), seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = random_integrand(&s, &mut r, 0.3, 1.0);
        let n = random_null_integrand(&s, &mut r, 0.5, 1.0);
        for &t in &s.cut_times() {
            prop_assert!(counting_integral(&n, &s, t).norm() < 1e-12);
            let both = counting_integral(&m.sub(&n.scale(C64::new(-1.0, 0.0))), &s, t);
            prop_assert!(both.distance(&counting_integral(&m, &s, t)) < 1e-12);
        }
    }
}
