//! Germ matrices and the Itô formula checks.
//!
//! A germ is an upper-triangular 3x3 array over the indices `(-, o, +)`.
//! Entries live in one of three algebras: kernels (product = kernel product,
//! adjoint = star), split operators at a point (dense matrices on the
//! reduced space, see [`crate::fock::reduced_inner`]) or formal sums of
//! symbol words.
//!
//! Every identity is checked twice. The literal operator-level statement
//! inherits the finite-space defect of `eps` (see [`crate::repr`]) and is
//! reported with its residual. The kernel-level statement and the
//! defect-corrected operator statement hold to rounding.

use crate::calculus::{
    germ, germ_at, lift, place, single_counting_integral, split_vector, KernelProcess, PointIntegrand,
};
use crate::chainspace::{Chain, PointSpace, Role, Table};
use crate::fock::{reduced_adjoint, reduced_inner, sector_restrict, FockOperator, FockVector, QField};
use crate::kernel::{
    coincidence_product, kernel_product, star_adjoint, unit_kernel, Block, IntegrandKernel, Kernel, KernelError,
};
use crate::repr::{epsilon, epsilon_split};
use crate::C64;
use serde::Serialize;
use std::collections::BTreeMap;

/// Upper-triangular position `(mu, nu)`, indices `- = 0`, `o = 1`, `+ = 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum GermPos {
    /// `(-,-)`
    MM,
    /// `(-,o)`: annihilation
    MC,
    /// `(-,+)`: time
    MP,
    /// `(o,o)`: number
    CC,
    /// `(o,+)`: creation
    CP,
    /// `(+,+)`
    PP,
}

pub const POSITIONS: [GermPos; 6] = [GermPos::MM, GermPos::MC, GermPos::MP, GermPos::CC, GermPos::CP, GermPos::PP];

impl GermPos {
    pub fn indices(self) -> (usize, usize) {
        match self {
            GermPos::MM => (0, 0),
            GermPos::MC => (0, 1),
            GermPos::MP => (0, 2),
            GermPos::CC => (1, 1),
            GermPos::CP => (1, 2),
            GermPos::PP => (2, 2),
        }
    }

    pub fn from_indices(mu: usize, nu: usize) -> Option<GermPos> {
        POSITIONS.into_iter().find(|p| p.indices() == (mu, nu))
    }

    fn slot(self) -> usize {
        self as usize
    }

    /// Role of the split point, `None` at the corners.
    pub fn role(self) -> Option<Role> {
        match self {
            GermPos::MC => Some(Role::Annihilation),
            GermPos::MP => Some(Role::Time),
            GermPos::CC => Some(Role::Number),
            GermPos::CP => Some(Role::Creation),
            _ => None,
        }
    }

    pub fn from_role(r: Role) -> GermPos {
        match r {
            Role::Annihilation => GermPos::MC,
            Role::Time => GermPos::MP,
            Role::Number => GermPos::CC,
            Role::Creation => GermPos::CP,
        }
    }

    /// Reflection about the anti-diagonal: `(mu, nu) -> (-nu, -mu)`.
    pub fn reflected(self) -> GermPos {
        let (m, n) = self.indices();
        GermPos::from_indices(2 - n, 2 - m).expect("reflection stays upper triangular")
    }

    pub fn is_corner(self) -> bool {
        self.role().is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GermMatrix<E> {
    e: [E; 6],
}

pub type KernelGerm = GermMatrix<Kernel>;
pub type OperatorGerm = GermMatrix<FockOperator>;

impl<E> GermMatrix<E> {
    pub fn from_fn<F: FnMut(GermPos) -> E>(mut f: F) -> Self {
        GermMatrix { e: POSITIONS.map(&mut f) }
    }

    pub fn get(&self, p: GermPos) -> &E {
        &self.e[p.slot()]
    }

    pub fn set(&mut self, p: GermPos, v: E) {
        self.e[p.slot()] = v;
    }

    pub fn entries(&self) -> &[E; 6] {
        &self.e
    }

    pub fn map<G, F: FnMut(GermPos, &E) -> G>(&self, mut f: F) -> GermMatrix<G> {
        GermMatrix::from_fn(|p| f(p, self.get(p)))
    }
}

/// Entry algebra of a germ flavor.
pub trait GermAlgebra {
    type Entry: Clone;
    fn zero(&self) -> Self::Entry;
    fn add(&self, a: &Self::Entry, b: &Self::Entry) -> Self::Entry;
    fn neg(&self, a: &Self::Entry) -> Self::Entry;
    fn mul(&self, a: &Self::Entry, b: &Self::Entry) -> Self::Entry;
    fn adjoint(&self, a: &Self::Entry) -> Self::Entry;
}

pub struct KernelAlgebra;

impl GermAlgebra for KernelAlgebra {
    type Entry = Kernel;
    fn zero(&self) -> Kernel {
        Kernel::new()
    }
    fn add(&self, a: &Kernel, b: &Kernel) -> Kernel {
        a.add(b)
    }
    fn neg(&self, a: &Kernel) -> Kernel {
        a.scale(C64::new(-1.0, 0.0))
    }
    fn mul(&self, a: &Kernel, b: &Kernel) -> Kernel {
        kernel_product(a, b)
    }
    fn adjoint(&self, a: &Kernel) -> Kernel {
        star_adjoint(a)
    }
}

/// Split operators at `x`: matrix product, adjoint of the reduced pairing.
pub struct OperatorAlgebra<'a> {
    pub space: &'a PointSpace,
    pub x: usize,
}

impl GermAlgebra for OperatorAlgebra<'_> {
    type Entry = FockOperator;
    fn zero(&self) -> FockOperator {
        let n = self.space.fock_dim();
        FockOperator::zeros(n, n)
    }
    fn add(&self, a: &FockOperator, b: &FockOperator) -> FockOperator {
        a + b
    }
    fn neg(&self, a: &FockOperator) -> FockOperator {
        -a
    }
    fn mul(&self, a: &FockOperator, b: &FockOperator) -> FockOperator {
        a * b
    }
    fn adjoint(&self, a: &FockOperator) -> FockOperator {
        reduced_adjoint(self.space, self.x, a)
    }
}

/// A symbol `name_pos`, optionally starred.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol {
    pub name: String,
    pub pos: GermPos,
    pub star: bool,
}

/// Formal integer combination of words in [`Symbol`]s.
pub type SymbolicEntry = BTreeMap<Vec<Symbol>, i64>;

pub struct SymbolicAlgebra;

impl GermAlgebra for SymbolicAlgebra {
    type Entry = SymbolicEntry;
    fn zero(&self) -> SymbolicEntry {
        BTreeMap::new()
    }
    fn add(&self, a: &SymbolicEntry, b: &SymbolicEntry) -> SymbolicEntry {
        let mut s = a.clone();
        for (w, c) in b {
            *s.entry(w.clone()).or_insert(0) += c;
        }
        s.retain(|_, c| *c != 0);
        s
    }
    fn neg(&self, a: &SymbolicEntry) -> SymbolicEntry {
        a.iter().map(|(w, c)| (w.clone(), -c)).collect()
    }
    fn mul(&self, a: &SymbolicEntry, b: &SymbolicEntry) -> SymbolicEntry {
        let mut s = BTreeMap::new();
        for (wa, ca) in a {
            for (wb, cb) in b {
                let w: Vec<Symbol> = wa.iter().chain(wb).cloned().collect();
                *s.entry(w).or_insert(0) += ca * cb;
            }
        }
        s.retain(|_, c| *c != 0);
        s
    }
    fn adjoint(&self, a: &SymbolicEntry) -> SymbolicEntry {
        a.iter()
            .map(|(w, c)| {
                let r: Vec<Symbol> = w
                    .iter()
                    .rev()
                    .map(|s| Symbol { star: !s.star, ..s.clone() })
                    .collect();
                (r, *c)
            })
            .collect()
    }
}

/// A single symbol as an entry.
pub fn sym(name: &str, pos: GermPos, star: bool) -> SymbolicEntry {
    let mut m = BTreeMap::new();
    m.insert(vec![Symbol { name: name.into(), pos, star }], 1);
    m
}

/// Sum of words given as lists of `(name, pos, starred)`.
pub fn sym_sum(words: &[&[(&str, GermPos, bool)]]) -> SymbolicEntry {
    let mut m = BTreeMap::new();
    for w in words {
        let word: Vec<Symbol> = w
            .iter()
            .map(|(n, p, s)| Symbol { name: (*n).into(), pos: *p, star: *s })
            .collect();
        *m.entry(word).or_insert(0) += 1;
    }
    m
}

/// `(AB)_{mu nu} = sum_{mu <= k <= nu} A_{mu k} B_{k nu}`.
pub fn germ_product<A: GermAlgebra>(alg: &A, a: &GermMatrix<A::Entry>, b: &GermMatrix<A::Entry>) -> GermMatrix<A::Entry> {
    GermMatrix::from_fn(|p| {
        let (mu, nu) = p.indices();
        let mut acc = alg.zero();
        for k in mu..=nu {
            let l = GermPos::from_indices(mu, k).expect("upper");
            let r = GermPos::from_indices(k, nu).expect("upper");
            acc = alg.add(&acc, &alg.mul(a.get(l), b.get(r)));
        }
        acc
    })
}

/// `(A^dagger)_{mu nu} = (A_{-nu, -mu})^*`.
pub fn dagger<A: GermAlgebra>(alg: &A, a: &GermMatrix<A::Entry>) -> GermMatrix<A::Entry> {
    GermMatrix::from_fn(|p| alg.adjoint(a.get(p.reflected())))
}

pub fn germ_add<A: GermAlgebra>(alg: &A, a: &GermMatrix<A::Entry>, b: &GermMatrix<A::Entry>) -> GermMatrix<A::Entry> {
    GermMatrix::from_fn(|p| alg.add(a.get(p), b.get(p)))
}

pub fn germ_sub<A: GermAlgebra>(alg: &A, a: &GermMatrix<A::Entry>, b: &GermMatrix<A::Entry>) -> GermMatrix<A::Entry> {
    GermMatrix::from_fn(|p| alg.add(a.get(p), &alg.neg(b.get(p))))
}

/// Kernel identity germ at `x`: unit on the corners and `(o,o)`.
pub fn identity_germ(space: &PointSpace, x: usize) -> KernelGerm {
    let u = unit_kernel(space);
    let free = u.filter(|t| !t.support().contains(x));
    let mut g = GermMatrix::from_fn(|_| Kernel::new());
    g.set(GermPos::MM, free.clone());
    g.set(GermPos::PP, free);
    g.set(GermPos::CC, u.filter(|t| t.number().contains(x)));
    g
}

/// Entrywise split representation at `x`.
pub fn represent_germ(space: &PointSpace, g: &KernelGerm, x: usize) -> OperatorGerm {
    g.map(|_, k| epsilon_split(space, k, x))
}

pub fn kernel_germ_distance(a: &KernelGerm, b: &KernelGerm) -> f64 {
    a.entries()
        .iter()
        .zip(b.entries())
        .map(|(p, q)| p.distance(q))
        .fold(0.0, f64::max)
}

/// Pass rule: absolute `abs_tol`, or relative `rel_tol` once `scale > 1`.
pub fn within_tolerance(residual: f64, scale: f64, abs_tol: f64, rel_tol: f64) -> bool {
    residual <= abs_tol || (scale > 1.0 && residual / scale <= rel_tol)
}

/// Point integrand collecting the non-corner entries of per-point kernel
/// germs.
fn germ_integrand(germs: &[(usize, KernelGerm)]) -> PointIntegrand {
    let mut d = PointIntegrand::new();
    for (x, g) in germs {
        for p in [GermPos::MC, GermPos::MP, GermPos::CC, GermPos::CP] {
            d.set(*x, p.role().expect("non-corner"), g.get(p));
        }
    }
    d
}

fn points_before_cut(space: &PointSpace, cut: usize) -> Vec<usize> {
    let t = KernelProcess::cut_time(space, cut);
    space.before(t).members().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrongItoReport {
    /// `|T_t T_t^* - T_0 T_0^* - eps(n_0^t(T+T+^dag - TT^dag))|`.
    pub literal_residual: f64,
    pub lhs_norm: f64,
    pub literal_pass: bool,
    /// Largest entry gap between `TD^dag + DT^dag + DD^dag` and `T+T+^dag - TT^dag`.
    pub rhs_forms_residual: f64,
    /// The same formula between kernels: `T_t.T_t* - T_0.T_0* = n_0^t(...)`.
    pub kernel_identity_residual: f64,
    /// Literal residual after adding `eps` of the coincidence products.
    pub defect_closure_residual: f64,
    /// `|eps(C(T_t, T_t*)) - eps(C(T_0, T_0*))|`: the finite-space defect.
    pub defect_norm: f64,
}

/// Strong non-adapted Itô formula in the `T T^*` order up to cut index `cut`.
pub fn verify_strong_ito(space: &PointSpace, p: &KernelProcess, cut: usize) -> StrongItoReport {
    let tt = p.at_cut(space, cut);
    let t0 = p.at_cut(space, 0);
    let (et, e0) = (epsilon(space, &tt), epsilon(space, &t0));
    let adj = |m: &FockOperator| crate::fock::hilbert_adjoint(space, m);
    let lhs = &et * adj(&et) - &e0 * adj(&e0);

    let alg = KernelAlgebra;
    let mut forms: f64 = 0.0;
    let mut germs = Vec::new();
    for x in points_before_cut(space, cut) {
        let (g, gp, d) = germ(space, p, x);
        let a = germ_sub(&alg, &germ_product(&alg, &gp, &dagger(&alg, &gp)), &germ_product(&alg, &g, &dagger(&alg, &g)));
        let b = {
            let td = germ_product(&alg, &g, &dagger(&alg, &d));
            let dt = germ_product(&alg, &d, &dagger(&alg, &g));
            let dd = germ_product(&alg, &d, &dagger(&alg, &d));
            germ_add(&alg, &germ_add(&alg, &td, &dt), &dd)
        };
        forms = forms.max(kernel_germ_distance(&a, &b));
        germs.push((x, a));
    }
    let d = germ_integrand(&germs);
    let rhs_k = single_counting_integral(space, &d, KernelProcess::cut_time(space, cut));
    let rhs = epsilon(space, &rhs_k);
    let literal = (&lhs - &rhs).norm();
    let kid = kernel_product(&tt, &star_adjoint(&tt))
        .sub(&kernel_product(&t0, &star_adjoint(&t0)))
        .distance(&rhs_k);
    let defect = epsilon(space, &coincidence_product(space, &tt, &star_adjoint(&tt)))
        - epsilon(space, &coincidence_product(space, &t0, &star_adjoint(&t0)));
    let closure = (&lhs - &rhs - &defect).norm();
    let lhs_norm = lhs.norm();
    StrongItoReport {
        literal_residual: literal,
        lhs_norm,
        literal_pass: within_tolerance(literal, lhs_norm, 1e-9, 1e-8),
        rhs_forms_residual: forms,
        kernel_identity_residual: kid,
        defect_closure_residual: closure,
        defect_norm: defect.norm(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakItoReport {
    /// `|T_t chi|^2 - |T_0 chi|^2`.
    pub lhs: f64,
    /// The sum over points of the three displayed terms.
    pub rhs: f64,
    pub literal_residual: f64,
    pub literal_pass: bool,
    /// `sum_x Delta(x)^2 |D_t chi + D_a chi(. u x)|^2`, the contribution of
    /// the increment's own annihilation part.
    pub correction: f64,
    pub corrected_residual: f64,
    /// `<chi| eps(T_t* T_t - T_0* T_0 - n_0^t(T+^dag T+ - T^dag T)) chi>`.
    pub kernel_route_residual: f64,
}

/// Weak non-adapted Itô formula for `|T_t chi|^2` up to cut index `cut`.
pub fn verify_weak_ito(space: &PointSpace, p: &KernelProcess, cut: usize, chi: &FockVector) -> WeakItoReport {
    let tt = p.at_cut(space, cut);
    let t0 = p.at_cut(space, 0);
    let norm2 = |k: &Kernel| {
        let v = epsilon(space, k) * chi;
        crate::fock::inner(space, &v, &v).re
    };
    let lhs = norm2(&tt) - norm2(&t0);
    let mut rhs = 0.0;
    let mut correction = 0.0;
    let alg = KernelAlgebra;
    let mut germs = Vec::new();
    for x in points_before_cut(space, cut) {
        let (g, gp, d) = germ(space, p, x);
        let dx = space.weight(x);
        let (free, cont) = split_vector(space, chi, x);
        let op = |k: &Kernel| epsilon_split(space, k, x);
        let tchi = sector_restrict(space, &(epsilon(space, &p.at_cut(space, KernelProcess::cut_of(x))) * chi), x, false);
        let a = op(d.get(GermPos::MP)) * &free + op(d.get(GermPos::MC)) * &cont;
        let b = op(d.get(GermPos::CP)) * &free + op(d.get(GermPos::CC)) * &cont;
        let grad = op(g.get(GermPos::CP)) * &free + op(g.get(GermPos::CC)) * &cont;
        let ip = |u: &FockVector, v: &FockVector| reduced_inner(space, x, u, v);
        rhs += dx * (2.0 * ip(&tchi, &a).re + ip(&b, &b).re + 2.0 * ip(&grad, &b).re);
        correction += dx * dx * ip(&a, &a).re;
        let k = germ_sub(
            &alg,
            &germ_product(&alg, &dagger(&alg, &gp), &gp),
            &germ_product(&alg, &dagger(&alg, &g), &g),
        );
        germs.push((x, k));
    }
    let n = single_counting_integral(space, &germ_integrand(&germs), KernelProcess::cut_time(space, cut));
    let diff = kernel_product(&star_adjoint(&tt), &tt)
        .sub(&kernel_product(&star_adjoint(&t0), &t0))
        .sub(&n);
    let kr = crate::fock::inner(space, chi, &(epsilon(space, &diff) * chi)).norm();
    let literal = (lhs - rhs).abs();
    WeakItoReport {
        lhs,
        rhs,
        literal_residual: literal,
        literal_pass: within_tolerance(literal, lhs.abs(), 1e-9, 1e-8),
        correction,
        corrected_residual: (lhs - rhs - correction).abs(),
        kernel_route_residual: kr,
    }
}

/// The three displayed matrices of the non-adapted multiplication table, in
/// symbols `T` (corner), `T_pos` and `D_pos`, with the `D` corners zero.
pub fn multiplication_table_matrices() -> [GermMatrix<SymbolicEntry>; 3] {
    use GermPos::*;
    let z = || SymbolicAlgebra.zero();
    let mut m1 = GermMatrix::from_fn(|_| z());
    m1.set(MC, sym_sum(&[&[("T", MM, true), ("D", MC, false)]]));
    m1.set(MP, sym_sum(&[&[("T", MM, true), ("D", MP, false)], &[("D", MP, true), ("T", MM, false)]]));
    m1.set(CP, sym_sum(&[&[("D", MC, true), ("T", MM, false)]]));
    let mut m2 = GermMatrix::from_fn(|_| z());
    m2.set(MC, sym_sum(&[&[("D", CP, true), ("D", CC, false)]]));
    m2.set(MP, sym_sum(&[&[("D", CP, true), ("D", CP, false)]]));
    m2.set(CC, sym_sum(&[&[("D", CC, true), ("D", CC, false)]]));
    m2.set(CP, sym_sum(&[&[("D", CC, true), ("D", CP, false)]]));
    let mut m3 = GermMatrix::from_fn(|_| z());
    m3.set(MC, sym_sum(&[&[("D", CP, true), ("T", CC, false)], &[("T", CP, true), ("D", CC, false)]]));
    m3.set(MP, sym_sum(&[&[("D", CP, true), ("T", CP, false)], &[("T", CP, true), ("D", CP, false)]]));
    m3.set(CC, sym_sum(&[&[("D", CC, true), ("T", CC, false)], &[("T", CC, true), ("D", CC, false)]]));
    m3.set(CP, sym_sum(&[&[("D", CC, true), ("T", CP, false)], &[("T", CC, true), ("D", CP, false)]]));
    [m1, m2, m3]
}

/// Symbolic germs `T` (equal corners named `T_MM`) and `D` (zero corners).
pub fn symbolic_germs() -> (GermMatrix<SymbolicEntry>, GermMatrix<SymbolicEntry>) {
    let t = GermMatrix::from_fn(|p| if p.is_corner() { sym("T", GermPos::MM, false) } else { sym("T", p, false) });
    let d = GermMatrix::from_fn(|p| if p.is_corner() { SymbolicAlgebra.zero() } else { sym("D", p, false) });
    (t, d)
}

/// `D^dag T + T^dag D + D^dag D` for any flavor.
pub fn weak_table<A: GermAlgebra>(alg: &A, t: &GermMatrix<A::Entry>, d: &GermMatrix<A::Entry>) -> GermMatrix<A::Entry> {
    let dt = germ_product(alg, &dagger(alg, d), t);
    let td = germ_product(alg, &dagger(alg, t), d);
    let dd = germ_product(alg, &dagger(alg, d), d);
    germ_add(alg, &germ_add(alg, &dt, &td), &dd)
}

/// Whether the symbolic germ products reproduce the three displayed
/// matrices exactly.
pub fn multiplication_table_symbolic_check() -> bool {
    let (t, d) = symbolic_germs();
    let lhs = weak_table(&SymbolicAlgebra, &t, &d);
    let [m1, m2, m3] = multiplication_table_matrices();
    let rhs = germ_add(&SymbolicAlgebra, &germ_add(&SymbolicAlgebra, &m1, &m2), &m3);
    lhs == rhs
}

/// Substitutes kernel germ entries into [`multiplication_table_matrices`] and compares
/// with the kernel germ products of the same table.
pub fn multiplication_table_kernel_residual(t: &KernelGerm, d: &KernelGerm) -> f64 {
    let lhs = weak_table(&KernelAlgebra, t, d);
    let eval = |e: &SymbolicEntry| {
        let mut acc = Kernel::new();
        for (w, c) in e {
            let mut prod: Option<Kernel> = None;
            for s in w {
                let g = if s.name == "T" { t } else { d };
                let mut k = g.get(s.pos).clone();
                if s.star {
                    k = star_adjoint(&k);
                }
                prod = Some(match prod {
                    None => k,
                    Some(p) => kernel_product(&p, &k),
                });
            }
            acc = acc.add(&prod.unwrap_or_default().scale(C64::new(*c as f64, 0.0)));
        }
        acc
    };
    let [m1, m2, m3] = multiplication_table_matrices();
    // corners of the table vanish because D has zero corners
    let rhs = GermMatrix::from_fn(|p| eval(m1.get(p)).add(&eval(m2.get(p))).add(&eval(m3.get(p))));
    kernel_germ_distance(&lhs, &rhs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QItoReport {
    pub adapted: bool,
    /// `|T(x) - T_{t(x)} (x) Q(x)|` over points before the cut.
    pub germ_structure_residual: f64,
    /// Literal `T*T` order residual against `eps(n_0^t(T+^dag T+ - T*T (x) Q^dag Q))`.
    pub literal_residual: f64,
    pub lhs_norm: f64,
    pub literal_pass: bool,
    pub kernel_identity_residual: f64,
    pub defect_closure_residual: f64,
}

/// Q-adapted Itô formula in the `T^* T` order.
pub fn verify_q_adapted_ito(space: &PointSpace, p: &KernelProcess, q: &QField, cut: usize) -> QItoReport {
    let adapted = crate::calculus::is_q_adapted_process(space, p, q, 1e-10).adapted;
    let tt = p.at_cut(space, cut);
    let t0 = p.at_cut(space, 0);
    let (et, e0) = (epsilon(space, &tt), epsilon(space, &t0));
    let adj = |m: &FockOperator| crate::fock::hilbert_adjoint(space, m);
    let lhs = adj(&et) * &et - adj(&e0) * &e0;
    let alg = KernelAlgebra;
    let qq = q.adjoint().compose(q);
    let mut germs = Vec::new();
    let mut structure: f64 = 0.0;
    for x in points_before_cut(space, cut) {
        let (g, gp, _) = germ(space, p, x);
        let tx = g.get(GermPos::MM).clone();
        let mut tq = GermMatrix::from_fn(|_| Kernel::new());
        tq.set(GermPos::MM, tx.clone());
        tq.set(GermPos::PP, tx.clone());
        tq.set(GermPos::CC, lift(space, &tx, x, q));
        structure = structure.max(kernel_germ_distance(&g, &tq));
        let tst = kernel_product(&star_adjoint(&tx), &tx);
        let mut base = GermMatrix::from_fn(|_| Kernel::new());
        base.set(GermPos::MM, tst.clone());
        base.set(GermPos::PP, tst.clone());
        base.set(GermPos::CC, lift(space, &tst, x, &qq));
        let k = germ_sub(&alg, &germ_product(&alg, &dagger(&alg, &gp), &gp), &base);
        germs.push((x, k));
    }
    let n = single_counting_integral(space, &germ_integrand(&germs), KernelProcess::cut_time(space, cut));
    let rhs = epsilon(space, &n);
    let literal = (&lhs - &rhs).norm();
    let kid = kernel_product(&star_adjoint(&tt), &tt)
        .sub(&kernel_product(&star_adjoint(&t0), &t0))
        .distance(&n);
    let defect = epsilon(space, &coincidence_product(space, &star_adjoint(&tt), &tt))
        - epsilon(space, &coincidence_product(space, &star_adjoint(&t0), &t0));
    let lhs_norm = lhs.norm();
    QItoReport {
        adapted,
        germ_structure_residual: structure,
        literal_residual: literal,
        lhs_norm,
        literal_pass: within_tolerance(literal, lhs_norm, 1e-9, 1e-8),
        kernel_identity_residual: kid,
        defect_closure_residual: (&lhs - &rhs - &defect).norm(),
    }
}

/// Whether `T_t^* . T_t` stays Q-adapted at cut `cut`; returns the check
/// for the product.
pub fn product_closure(space: &PointSpace, p: &KernelProcess, q: &QField, cut: usize) -> crate::calculus::AdaptedCheck {
    let t = p.at_cut(space, cut);
    let prod = kernel_product(&star_adjoint(&t), &t);
    crate::calculus::is_q_adapted(space, &prod, q, KernelProcess::cut_time(space, cut), 1e-10)
}

/// `w(window) = Lambda_c(I) + Lambda_a(I)` on a scalar space.
pub fn wiener_window(space: &PointSpace, window: (f64, f64)) -> Result<FockOperator, KernelError> {
    let u = unit_kernel(space);
    let mut d = PointIntegrand::new();
    for x in 0..space.n() {
        d.set(x, Role::Creation, &place(space, &u, x, Role::Creation)?);
        d.set(x, Role::Annihilation, &place(space, &u, x, Role::Annihilation)?);
    }
    let a = crate::calculus::canonical_measure(space, Role::Creation, &d, window);
    let b = crate::calculus::canonical_measure(space, Role::Annihilation, &d, window);
    Ok(a + b)
}

/// Scalar Wiener-type process: `M(u, k) = g(u_a u u_c, k_a u k_c)` on
/// tables with no time points and `u_n` empty. With `adapted`, `k` is
/// restricted to number points and `g` is read at `k_a u k_c` empty.
pub fn wiener_process<G>(space: &PointSpace, g: G, adapted: bool) -> Result<KernelProcess, KernelError>
where
    G: Fn(Chain, Chain) -> Option<Block>,
{
    if !space.is_scalar() {
        return Err(KernelError::Precondition("Wiener processes need d(x) = 1".into()));
    }
    let full = space.full_chain();
    let mut m = IntegrandKernel::new();
    for &uc in space.chains() {
        for ua in uc.subsets() {
            let u = Table::new(Chain::EMPTY, ua, uc.difference(ua), Chain::EMPTY);
            let rest = full.difference(uc);
            for &kk in space.chains() {
                if !kk.is_subset(rest) {
                    continue;
                }
                if adapted {
                    if let Some(b) = g(uc, Chain::EMPTY) {
                        let k = Table::new(Chain::EMPTY, Chain::EMPTY, Chain::EMPTY, kk);
                        m.insert(space, u, k, b)?;
                    }
                    continue;
                }
                // kk carries the annihilation, creation and number points of kappa
                for kac in kk.subsets() {
                    let Some(b) = g(uc, kac) else { continue };
                    for ka in kac.subsets() {
                        let k = Table::new(Chain::EMPTY, ka, kac.difference(ka), kk.difference(kac));
                        m.insert(space, u, k, b.clone())?;
                    }
                }
            }
        }
    }
    Ok(KernelProcess::Integral(m))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WienerReport {
    /// Largest `|[w(A), w(B)]|` over the window pairs tried.
    pub commutator: f64,
    /// `|first term - adapted term - dT term|` summed over points.
    pub decomposition_residual: f64,
    /// `sum_x Delta(x) |2 Re <dT chi | D chi>|`.
    pub dt_term: f64,
    /// `max_x |dT(x) chi|`.
    pub dt_norm: f64,
    /// Largest `|D_t|`, `|D_n|` and `|D_a - D_c|` (identified through `x`).
    pub structure_residual: f64,
}

/// Windows are the half-open intervals between consecutive cut times.
pub fn wiener_suite(space: &PointSpace, p: &KernelProcess, cut: usize, chi: &FockVector) -> Result<WienerReport, KernelError> {
    let cuts = space.cut_times();
    let mut windows = vec![(0.0, f64::INFINITY)];
    for k in 0..cuts.len() - 1 {
        windows.push((cuts[k], cuts[k + 1]));
    }
    let ops: Vec<FockOperator> = windows.iter().map(|&w| wiener_window(space, w)).collect::<Result<_, _>>()?;
    let mut comm: f64 = 0.0;
    for i in 0..ops.len() {
        for j in i + 1..ops.len() {
            comm = comm.max((&ops[i] * &ops[j] - &ops[j] * &ops[i]).norm());
        }
    }
    let mut residual = 0.0;
    let mut dt_term = 0.0;
    let mut dt_norm: f64 = 0.0;
    let mut structure: f64 = 0.0;
    for x in points_before_cut(space, cut) {
        let (g, _, d) = germ(space, p, x);
        let dx = space.weight(x);
        let op = |k: &Kernel| epsilon_split(space, k, x);
        let (free, cont) = split_vector(space, chi, x);
        let t = op(g.get(GermPos::MM));
        let lifted = op(&lift(space, g.get(GermPos::MM), x, &QField::identity(space)));
        let da = op(d.get(GermPos::MC));
        let dc = op(d.get(GermPos::CP));
        // identify D_a and D_c through the point-x creation map (d = 1)
        let ident = d.get(GermPos::MC).map_tables(|k| k.without(x).with(x, Role::Creation));
        structure = structure
            .max(d.get(GermPos::MP).norm())
            .max(d.get(GermPos::CC).norm())
            .max(ident.distance(d.get(GermPos::CP)));
        let ip = |u: &FockVector, v: &FockVector| reduced_inner(space, x, u, v);
        let grad = op(g.get(GermPos::CP)) * &free + op(g.get(GermPos::CC)) * &cont;
        let first = dx * 2.0 * (ip(&(&t * &free), &(&da * &cont)) + ip(&grad, &(&dc * &free))).re;
        // nabla^dag (T* (x) I) D nabla
        let ta = reduced_adjoint(space, x, &t);
        let la = reduced_adjoint(space, x, &lifted);
        let adapted = dx * 2.0 * (ip(&free, &(&ta * &da * &cont)) + ip(&cont, &(&la * &dc * &free))).re;
        let dtchi = &grad - &lifted * &cont;
        let dterm = dx * 2.0 * ip(&dtchi, &(&dc * &free)).re;
        residual += (first - adapted - dterm).abs();
        dt_term += dterm.abs();
        dt_norm = dt_norm.max(ip(&dtchi, &dtchi).re.max(0.0).sqrt());
    }
    Ok(WienerReport {
        commutator: comm,
        decomposition_residual: residual,
        dt_term,
        dt_norm,
        structure_residual: structure,
    })
}

/// `germ(T*) = germ(T)^dag` at every point, as a kernel distance.
pub fn germ_star_residual(t: &Kernel, n: usize) -> f64 {
    (0..n)
        .map(|x| kernel_germ_distance(&germ_at(&star_adjoint(t), x), &dagger(&KernelAlgebra, &germ_at(t, x))))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainspace::enumerate_tables;
    use crate::kernel::block_shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rb(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Block {
        Block::from_fn(r, c, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn rnd_kernel(space: &PointSpace, rng: &mut ChaCha8Rng, density: f64) -> Kernel {
        let mut k = Kernel::new();
        for t in enumerate_tables(space) {
            if rng.gen::<f64>() < density {
                let (r, c) = block_shape(space, &t);
                k.insert(space, t, rb(rng, r, c) * C64::new(0.5, 0.0)).unwrap();
            }
        }
        k
    }

    fn rnd_integrand(space: &PointSpace, rng: &mut ChaCha8Rng, density: f64) -> IntegrandKernel {
        let mut m = IntegrandKernel::new();
        for t in enumerate_tables(space) {
            for u in t.subtables(space.full_chain()) {
                if rng.gen::<f64>() < density {
                    let (r, c) = block_shape(space, &t);
                    m.insert(space, u, t.difference(&u), rb(rng, r, c) * C64::new(0.5, 0.0)).unwrap();
                }
            }
        }
        m
    }

    fn rvec(space: &PointSpace, rng: &mut ChaCha8Rng) -> FockVector {
        FockVector::from_fn(space.fock_dim(), |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn reflection_and_identity() {
        assert_eq!(GermPos::MC.reflected(), GermPos::CP);
        assert_eq!(GermPos::MP.reflected(), GermPos::MP);
        assert_eq!(GermPos::MM.reflected(), GermPos::PP);
        let s = PointSpace::new(&[1.0, 2.0], &[0.5, 0.5], &[1, 2], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = germ_at(&rnd_kernel(&s, &mut rng, 0.6), 1);
        let i = identity_germ(&s, 1);
        assert!(kernel_germ_distance(&germ_product(&KernelAlgebra, &g, &i), &g) < 1e-12);
        assert!(kernel_germ_distance(&germ_product(&KernelAlgebra, &i, &g), &g) < 1e-12);
        assert_eq!(dagger(&KernelAlgebra, &i), i);
        assert_eq!(dagger(&KernelAlgebra, &dagger(&KernelAlgebra, &g)), g);
    }

    #[test]
    fn dagger_antimultiplicative_and_star_intertwined() {
        let s = PointSpace::new(&[1.0, 2.0, 3.0], &[0.5, 0.3, 0.2], &[1, 2, 1], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = rnd_kernel(&s, &mut rng, 0.5);
        let u = rnd_kernel(&s, &mut rng, 0.5);
        let (a, b) = (germ_at(&t, 0), germ_at(&u, 0));
        let alg = KernelAlgebra;
        let l = dagger(&alg, &germ_product(&alg, &a, &b));
        let r = germ_product(&alg, &dagger(&alg, &b), &dagger(&alg, &a));
        assert!(kernel_germ_distance(&l, &r) < 1e-12);
        assert!(germ_star_residual(&t, 3) < 1e-14);
    }

    #[test]
    fn flavors_agree_on_one_point() {
        let s = PointSpace::new(&[1.0], &[0.4], &[2], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (germ_at(&rnd_kernel(&s, &mut rng, 1.0), 0), germ_at(&rnd_kernel(&s, &mut rng, 1.0), 0));
        let k = represent_germ(&s, &germ_product(&KernelAlgebra, &a, &b), 0);
        let alg = OperatorAlgebra { space: &s, x: 0 };
        let o = germ_product(&alg, &represent_germ(&s, &a, 0), &represent_germ(&s, &b, 0));
        for p in POSITIONS {
            assert!((k.get(p) - o.get(p)).norm() < 1e-12);
        }
        let kd = represent_germ(&s, &dagger(&KernelAlgebra, &a), 0);
        let od = dagger(&alg, &represent_germ(&s, &a, 0));
        for p in POSITIONS {
            assert!((kd.get(p) - od.get(p)).norm() < 1e-12);
        }
    }

    #[test]
    fn multiplication_table() {
        assert!(multiplication_table_symbolic_check());
        let s = PointSpace::new(&[1.0, 2.0, 3.0], &[0.5, 0.3, 0.2], &[1, 1, 1], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = KernelProcess::Integral(rnd_integrand(&s, &mut rng, 0.3));
        let (g, _, d) = germ(&s, &p, 1);
        assert!(multiplication_table_kernel_residual(&g, &d) < 1e-12);
    }

    #[test]
    fn strong_ito_kernel_level_exact() {
        let s = PointSpace::new(&[1.0, 2.0, 3.0], &[0.5, 0.3, 0.2], &[1, 2, 1], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = KernelProcess::Integral(rnd_integrand(&s, &mut rng, 0.2));
        for cut in 0..5 {
            let r = verify_strong_ito(&s, &p, cut);
            assert!(r.kernel_identity_residual < 1e-10, "{r:?}");
            assert!(r.rhs_forms_residual < 1e-10, "{r:?}");
            assert!(r.defect_closure_residual < 1e-10, "{r:?}");
        }
        let c = KernelProcess::Cuts(vec![rnd_kernel(&s, &mut rng, 0.3); 5]);
        let r = verify_strong_ito(&s, &c, 4);
        assert!(r.literal_residual < 1e-12 && r.lhs_norm == 0.0);
    }

    #[test]
    fn strong_and_weak_agree_through_star() {
        let s = PointSpace::new(&[1.0, 2.0, 3.0], &[0.5, 0.3, 0.2], &[1, 2, 1], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = KernelProcess::Integral(rnd_integrand(&s, &mut rng, 0.2));
        let ps = p.star(&s);
        let chi = rvec(&s, &mut rng);
        let adj = |m: &FockOperator| crate::fock::hilbert_adjoint(&s, m);
        for cut in 0..5 {
            let (et, e0) = (epsilon(&s, &p.at_cut(&s, cut)), epsilon(&s, &p.at_cut(&s, 0)));
            let strong = &et * adj(&et) - &e0 * adj(&e0);
            let form = crate::fock::inner(&s, &chi, &(strong * &chi));
            let w = verify_weak_ito(&s, &ps, cut, &chi);
            assert!((form.re - w.lhs).abs() < 1e-9 && form.im.abs() < 1e-9);
            assert!((w.lhs - w.rhs - w.correction).abs() < 1e-9);
        }
    }

    #[test]
    fn strong_residual_is_unitarily_invariant() {
        let s = PointSpace::new(&[1.0, 2.0, 3.0], &[0.5, 0.3, 0.2], &[1, 2, 1], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = rnd_integrand(&s, &mut rng, 0.2);
        let u = rb(&mut rng, 2, 2).qr().q();
        let mut mu = IntegrandKernel::new();
        for ((a, b), blk) in m.iter() {
            let t = a.union(b);
            let lo = Block::identity(space_dim(&s, t.output()), space_dim(&s, t.output())).kronecker(&u);
            let ri = Block::identity(space_dim(&s, t.input()), space_dim(&s, t.input())).kronecker(&u.adjoint());
            mu.insert(&s, *a, *b, lo * blk * ri).unwrap();
        }
        let p = KernelProcess::Integral(m);
        let pu = KernelProcess::Integral(mu);
        for cut in 0..5 {
            let (r, ru) = (verify_strong_ito(&s, &p, cut), verify_strong_ito(&s, &pu, cut));
            assert!((r.literal_residual - ru.literal_residual).abs() < 1e-9 * (1.0 + r.literal_residual));
            assert!((r.lhs_norm - ru.lhs_norm).abs() < 1e-9 * (1.0 + r.lhs_norm));
        }
    }

    fn space_dim(s: &PointSpace, c: Chain) -> usize {
        s.block_dim(c) / s.initial_dim()
    }

    #[test]
    fn weak_ito_corrected_is_exact() {
        let s = PointSpace::new(&[1.0, 2.0, 3.0], &[0.5, 0.3, 0.2], &[1, 2, 1], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = KernelProcess::Integral(rnd_integrand(&s, &mut rng, 0.2));
        let chi = rvec(&s, &mut rng);
        for cut in 0..5 {
            let r = verify_weak_ito(&s, &p, cut, &chi);
            assert!(r.corrected_residual < 1e-10, "{r:?}");
            assert!(r.kernel_route_residual < 1e-10, "{r:?}");
        }
    }

    #[test]
    fn q_adapted_kernel_level_and_closure() {
        let s = PointSpace::new(&[1.0, 2.0, 3.0], &[0.5, 0.3, 0.2], &[1, 2, 1], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = rnd_kernel(&s, &mut rng, 0.3);
        let proj = QField(vec![Block::identity(1, 1), {
            let mut b = Block::zeros(2, 2);
            b[(0, 0)] = C64::new(1.0, 0.0);
            b
        }, Block::zeros(1, 1)]);
        let two = QField::scalar(&s, C64::new(2.0, 0.0));
        for q in [QField::identity(&s), proj.clone()] {
            let p = KernelProcess::Integral(IntegrandKernel::ampliation(&s, &m, &q));
            for cut in 0..5 {
                let r = verify_q_adapted_ito(&s, &p, &q, cut);
                assert!(r.adapted && r.germ_structure_residual < 1e-12, "{r:?}");
                assert!(r.kernel_identity_residual < 1e-10, "{r:?}");
                assert!(r.defect_closure_residual < 1e-10, "{r:?}");
                assert!(product_closure(&s, &p, &q, cut).adapted);
            }
        }
        let p = KernelProcess::Integral(IntegrandKernel::ampliation(&s, &m, &two));
        let fails = (0..5).any(|c| product_closure(&s, &p, &two, c).witness.is_some());
        assert!(fails);
    }

    #[test]
    fn wiener() {
        let s = PointSpace::new(&[1.0, 2.0, 3.0], &[0.5, 0.3, 0.2], &[1, 1, 1], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut table = BTreeMap::new();
        for &u in s.chains() {
            for &k in s.chains() {
                if u.is_disjoint(k) && rng.gen::<f64>() < 0.5 {
                    table.insert((u, k), rb(&mut rng, 2, 2));
                }
            }
        }
        let chi = rvec(&s, &mut rng);
        for adapted in [false, true] {
            let p = wiener_process(&s, |u, k| table.get(&(u, k)).cloned(), adapted).unwrap();
            let r = wiener_suite(&s, &p, 4, &chi).unwrap();
            assert!(r.commutator < 1e-12, "{r:?}");
            assert!(r.decomposition_residual < 1e-10, "{r:?}");
            assert!(r.structure_residual < 1e-12, "{r:?}");
            if adapted {
                assert!(r.dt_norm < 1e-12, "{r:?}");
            }
        }
        assert!(wiener_window(&PointSpace::new(&[1.0], &[1.0], &[2], 1).unwrap(), (0.0, 2.0)).is_err());
    }
}
