//! The representation `eps` of kernels as dense operators on `h (x) F`.
//!
//! `[eps(T) chi](theta) = sum_{n u c = theta} sum_{a, t} w(a) w(t) T(t,a,c,n) chi(n u a)`
//! with `a`, `t` disjoint from `theta` and from each other. Because block
//! factors and Fock components share the canonical time order, each table is
//! a weighted copy of its block into one rectangle of the matrix.
//!
//! On a finite point set `eps` preserves adjoints and the unit exactly but is
//! multiplicative only up to [`coincidence_product`]: a point that is created
//! by `Y` and annihilated by `X` still contributes `Delta(x)` where the
//! continuum sees a null diagonal.

use crate::chainspace::{PointSpace, Role};
use crate::fock::{frobenius_distance, hilbert_adjoint, FockOperator};
use crate::kernel::{coincidence_product, kernel_product, star_adjoint, unit_kernel, Kernel};
use crate::C64;

pub fn epsilon(space: &PointSpace, t: &Kernel) -> FockOperator {
    let n = space.fock_dim();
    let mut m = FockOperator::zeros(n, n);
    for (k, b) in t.iter() {
        let w = space.chain_weight(k.integrated());
        let r0 = space.fock_offset(k.output());
        let c0 = space.fock_offset(k.input());
        let mut v = m.view_mut((r0, c0), b.shape());
        v += b * C64::new(w, 0.0);
    }
    m
}

/// `eps` of a point-split entry at `x`: blocks whose table holds `x` in an
/// integrated role lose the factor `Delta(x)`, since in the split the point is
/// fixed rather than integrated over.
///
/// The result acts on the reduced space at `x`, realized inside the full
/// Fock basis: chains containing `x` stand for `k_x (x) G`, the others for
/// `G` (see [`crate::fock::reduced_inner`]).
pub fn epsilon_split(space: &PointSpace, t: &Kernel, x: usize) -> FockOperator {
    let n = space.fock_dim();
    let mut m = FockOperator::zeros(n, n);
    let dx = space.weight(x);
    for (k, b) in t.iter() {
        let mut w = space.chain_weight(k.integrated());
        if matches!(k.role_of(x), Some(Role::Time | Role::Annihilation)) {
            w /= dx;
        }
        let r0 = space.fock_offset(k.output());
        let c0 = space.fock_offset(k.input());
        let mut v = m.view_mut((r0, c0), b.shape());
        v += b * C64::new(w, 0.0);
    }
    m
}

/// `|eps(T)^* - eps(T*)|_F` with the Hilbert adjoint of the weighted pairing.
pub fn epsilon_adjoint_residual(space: &PointSpace, t: &Kernel) -> f64 {
    let a = hilbert_adjoint(space, &epsilon(space, t));
    let b = epsilon(space, &star_adjoint(t));
    frobenius_distance(&a, &b).expect("same space")
}

/// `|eps(X) eps(Y) - eps(X.Y)|_F`.
pub fn epsilon_homomorphism_residual(space: &PointSpace, x: &Kernel, y: &Kernel) -> f64 {
    let lhs = epsilon(space, x) * epsilon(space, y);
    let rhs = epsilon(space, &kernel_product(x, y));
    frobenius_distance(&lhs, &rhs).expect("same space")
}

/// `|eps(X) eps(Y) - eps(X.Y) - eps(C(X,Y))|_F`; zero up to rounding.
pub fn epsilon_defect_residual(space: &PointSpace, x: &Kernel, y: &Kernel) -> f64 {
    let lhs = epsilon(space, x) * epsilon(space, y);
    let rhs = epsilon(space, &kernel_product(x, y)) + epsilon(space, &coincidence_product(space, x, y));
    frobenius_distance(&lhs, &rhs).expect("same space")
}

/// `|eps(I) - 1|_F`.
pub fn epsilon_unit_residual(space: &PointSpace) -> f64 {
    let n = space.fock_dim();
    frobenius_distance(&epsilon(space, &unit_kernel(space)), &FockOperator::identity(n, n))
        .expect("same space")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainspace::{enumerate_tables, Chain, Table};
    use crate::fock::{component, inner, FockVector};
    use crate::kernel::{block_shape, Block};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rnd_kernel(space: &PointSpace, rng: &mut ChaCha8Rng, density: f64) -> Kernel {
        let mut k = Kernel::new();
        for t in enumerate_tables(space) {
            if rng.gen::<f64>() < density {
                let (r, c) = block_shape(space, &t);
                let b = Block::from_fn(r, c, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                k.insert(space, t, b).unwrap();
            }
        }
        k
    }

    /// Direct evaluation of the defining sum on one vector.
    fn apply_direct(space: &PointSpace, t: &Kernel, chi: &FockVector) -> FockVector {
        let mut out = FockVector::zeros(space.fock_dim());
        for &theta in space.chains() {
            let mut acc = nalgebra::DVector::<C64>::zeros(space.block_dim(theta));
            for n in theta.subsets() {
                let c = theta.difference(n);
                let rest = space.full_chain().difference(theta);
                for a in rest.subsets() {
                    for tt in rest.difference(a).subsets() {
                        let k = Table::new(tt, a, c, n);
                        if let Some(b) = t.get(&k) {
                            let w = space.chain_weight(a) * space.chain_weight(tt);
                            acc += b * component(space, chi, n.union(a)) * C64::new(w, 0.0);
                        }
                    }
                }
            }
            out.rows_mut(space.fock_offset(theta), acc.len()).copy_from(&acc);
        }
        out
    }

    #[test]
    fn matches_direct_evaluation() {
        let s = PointSpace::new(&[0.5, 1.0, 1.5], &[0.4, 0.3, 0.5], &[1, 2, 1], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = rnd_kernel(&s, &mut rng, 0.5);
        let chi = FockVector::from_fn(s.fock_dim(), |_, _| C64::new(rng.gen(), rng.gen()));
        let d = epsilon(&s, &t) * &chi - apply_direct(&s, &t, &chi);
        assert!(d.norm() < 1e-12);
    }

    #[test]
    fn unit_and_ampliation() {
        let s = PointSpace::new(&[0.5, 1.0], &[0.4, 0.3], &[2, 1], 2).unwrap();
        assert_eq!(epsilon_unit_residual(&s), 0.0);
        let a = DMatrix::from_fn(2, 2, |i, j| C64::new(i as f64 + 1.0, j as f64));
        // A (x) I(n) on every number-only table
        let mut t = Kernel::new();
        for &c in s.chains() {
            let b = crate::kernel::tensor_extend(&s, &a, Chain::EMPTY, Chain::EMPTY, c, &crate::fock::QField::identity(&s));
            t.insert(&s, Table::new(Chain::EMPTY, Chain::EMPTY, Chain::EMPTY, c), b).unwrap();
        }
        let amp = DMatrix::<C64>::identity(s.fock_dim() / 2, s.fock_dim() / 2).kronecker(&a);
        assert!((epsilon(&s, &t) - amp).norm() < 1e-14);
        // A at the empty table only: output at the empty chain only
        let mut v = Kernel::new();
        v.insert(&s, Table::EMPTY, a.clone()).unwrap();
        let e = epsilon(&s, &v);
        assert_eq!(e.view((0, 0), (2, 2)).into_owned(), a);
        assert_eq!(e.norm(), a.norm());
    }

    #[test]
    fn adjoint_holds_exactly() {
        let s = PointSpace::new(&[0.5, 1.0, 1.5], &[0.4, 0.3, 0.5], &[1, 2, 1], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t = rnd_kernel(&s, &mut rng, 0.6);
        assert!(epsilon_adjoint_residual(&s, &t) < 1e-12);
        let chi = FockVector::from_fn(s.fock_dim(), |_, _| C64::new(rng.gen(), rng.gen()));
        let psi = FockVector::from_fn(s.fock_dim(), |_, _| C64::new(rng.gen(), rng.gen()));
        let l = inner(&s, &psi, &(epsilon(&s, &t) * &chi));
        let r = inner(&s, &(epsilon(&s, &star_adjoint(&t)) * &psi), &chi);
        assert!((l - r).norm() < 1e-12);
    }

    #[test]
    fn creation_then_annihilation_has_diagonal_defect() {
        let s = PointSpace::new(&[1.0], &[0.25], &[1], 1).unwrap();
        let one = Block::identity(1, 1);
        let mut c = Kernel::new();
        c.insert(&s, Table::EMPTY.with(0, Role::Creation), one.clone()).unwrap();
        let mut a = Kernel::new();
        a.insert(&s, Table::EMPTY.with(0, Role::Annihilation), one).unwrap();
        assert!(kernel_product(&c, &a).is_empty());
        let r = epsilon_homomorphism_residual(&s, &c, &a);
        assert!((r - 0.25).abs() < 1e-15);
        assert!(epsilon_defect_residual(&s, &c, &a) < 1e-15);
    }

    #[test]
    fn defect_decomposition_is_exact() {
        let s = PointSpace::new(&[0.5, 1.0, 1.5], &[0.4, 0.3, 0.5], &[1, 2, 1], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let x = rnd_kernel(&s, &mut rng, 0.4);
            let y = rnd_kernel(&s, &mut rng, 0.4);
            assert!(epsilon_defect_residual(&s, &x, &y) < 1e-10);
        }
    }
}
