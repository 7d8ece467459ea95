//! Point splits, counting integrals, Meyer/Moebius transforms, adaptedness
//! and the representation of integrals as operators.
//!
//! Processes are sampled at the cut times `0, t(x_1), .., t(x_n), +inf`.
//! Counting sums carry no measure weights; weights enter only through `eps`.

use crate::chainspace::{Chain, PointSpace, Role, Table, ROLES};
use crate::fock::{
    point_evaluation, reduced_inner, sector_restrict, spectral_norm, FockOperator, FockVector, QField,
};
use crate::ito::{GermMatrix, GermPos, KernelGerm};
use crate::kernel::{
    block_shape, relative_norm, star_adjoint, tensor_extend, Block, IntegrandKernel, Kernel, KernelError,
    WeightQuadruple,
};
use crate::repr::{epsilon, epsilon_split};
use crate::C64;
use std::collections::BTreeMap;

/// A kernel-valued process sampled at cut times.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelProcess {
    /// `T_t = nu_0^t(M)`.
    Integral(IntegrandKernel),
    /// One kernel per cut index `0..=n+1`.
    Cuts(Vec<Kernel>),
}

impl KernelProcess {
    pub fn n_cuts(space: &PointSpace) -> usize {
        space.n() + 2
    }

    pub fn cut_time(space: &PointSpace, k: usize) -> f64 {
        space.cut_times()[k]
    }

    pub fn at_cut(&self, space: &PointSpace, k: usize) -> Kernel {
        match self {
            KernelProcess::Integral(m) => counting_integral(m, space, Self::cut_time(space, k)),
            KernelProcess::Cuts(v) => v[k].clone(),
        }
    }

    /// Value at an arbitrary time: the last cut not after `t`.
    pub fn at_time(&self, space: &PointSpace, t: f64) -> Kernel {
        match self {
            KernelProcess::Integral(m) => counting_integral(m, space, t),
            KernelProcess::Cuts(v) => {
                let cuts = space.cut_times();
                let k = cuts.iter().rposition(|&c| c <= t).unwrap_or(0);
                v[k].clone()
            }
        }
    }

    pub fn sampled(&self, space: &PointSpace) -> Vec<Kernel> {
        (0..Self::n_cuts(space)).map(|k| self.at_cut(space, k)).collect()
    }

    pub fn star(&self, space: &PointSpace) -> KernelProcess {
        KernelProcess::Cuts(self.sampled(space).iter().map(star_adjoint).collect())
    }

    /// Cut index of `t(x)`; the right limit `t_+(x)` is the next index.
    pub fn cut_of(x: usize) -> usize {
        x + 1
    }
}

/// `T(kappa u x)` stored on the union tables, or the `x`-free part of `T` at
/// the corner positions.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSplitKernel {
    pub point: usize,
    pub pos: GermPos,
    pub kernel: Kernel,
}

impl PointSplitKernel {
    /// `T(kappa u x)` for a table `kappa` omitting `x`.
    pub fn value(&self, kappa: &Table) -> Option<&Block> {
        match self.pos.role() {
            Some(r) => self.kernel.get(&kappa.with(self.point, r)),
            None => self.kernel.get(kappa),
        }
    }
}

pub fn point_split(t: &Kernel, pos: GermPos, x: usize) -> PointSplitKernel {
    let kernel = match pos.role() {
        Some(r) => t.filter(|k| k.get(r).contains(x)),
        None => t.filter(|k| !k.support().contains(x)),
    };
    PointSplitKernel { point: x, pos, kernel }
}

/// The `x`-free part of `k` with `x` adjoined in the number role and block
/// `K (x) Q(x)`.
pub fn lift(space: &PointSpace, k: &Kernel, x: usize, q: &QField) -> Kernel {
    let mut out = Kernel::new();
    for (t, b) in k.iter() {
        if t.support().contains(x) {
            continue;
        }
        let e = tensor_extend(space, b, t.input(), t.output(), Chain::singleton(x), q);
        out.accumulate(t.with(x, Role::Number), e);
    }
    out
}

/// The `x`-free part of `k` with `x` adjoined in role `r`, block unchanged.
/// Needs `d(x) = 1` unless `r` is the time role.
pub fn place(space: &PointSpace, k: &Kernel, x: usize, r: Role) -> Result<Kernel, KernelError> {
    if r != Role::Time && space.multiplicity(x) != 1 {
        return Err(KernelError::Precondition(format!(
            "placing point {x} in role {r:?} needs d(x) = 1"
        )));
    }
    if r == Role::Number {
        return Ok(lift(space, k, x, &QField::identity(space)));
    }
    let mut out = Kernel::new();
    for (t, b) in k.iter() {
        if !t.support().contains(x) {
            out.accumulate(t.with(x, r), b.clone());
        }
    }
    Ok(out)
}

/// `[eps(T) chi](theta u x)` against
/// `[eps(T(x in c)) chi + eps(T(x in n)) chi(. u x)](theta)`, in sector form.
pub fn malliavin_split_residual(space: &PointSpace, t: &Kernel, x: usize, chi: &FockVector) -> f64 {
    let lhs = sector_restrict(space, &(epsilon(space, t) * chi), x, true);
    let free = sector_restrict(space, chi, x, false);
    let cont = sector_restrict(space, chi, x, true);
    let c = epsilon_split(space, &point_split(t, GermPos::CP, x).kernel, x);
    let n = epsilon_split(space, &point_split(t, GermPos::CC, x).kernel, x);
    let rhs = c * free + n * cont;
    let d = lhs - rhs;
    reduced_inner(space, x, &d, &d).re.max(0.0).sqrt()
}

/// `nu_0^t(theta, M) = sum_{upsilon in theta^t} M(upsilon, theta - upsilon)`.
pub fn counting_integral(m: &IntegrandKernel, space: &PointSpace, t: f64) -> Kernel {
    let before = space.before(t);
    let mut out = Kernel::new();
    for ((u, k), b) in m.iter() {
        if u.support().is_subset(before) {
            out.accumulate(u.union(k), b.clone());
        }
    }
    out
}

/// Role-indexed point integrand `D(x_r, kappa)`, stored on union tables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointIntegrand {
    entries: BTreeMap<(usize, Role), Kernel>,
}

impl PointIntegrand {
    pub fn new() -> Self {
        PointIntegrand::default()
    }

    /// Stores the tables of `k` holding `x` in role `r`; other tables are
    /// dropped.
    pub fn set(&mut self, x: usize, r: Role, k: &Kernel) {
        self.entries.insert((x, r), k.filter(|t| t.get(r).contains(x)));
    }

    pub fn get(&self, x: usize, r: Role) -> Option<&Kernel> {
        self.entries.get(&(x, r))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, Role), &Kernel)> {
        self.entries.iter()
    }

    /// The same data as an integrand supported on atomic `upsilon`.
    pub fn to_integrand(&self) -> IntegrandKernel {
        let mut m = IntegrandKernel::new();
        for (&(x, r), k) in &self.entries {
            let u = Table::EMPTY.with(x, r);
            for (t, b) in k.iter() {
                m.accumulate(u, t.without(x), b.clone());
            }
        }
        m
    }

    /// Reads back an integrand supported on atomic `upsilon`; `None` if
    /// `M` has blocks elsewhere.
    pub fn from_integrand(m: &IntegrandKernel) -> Option<PointIntegrand> {
        let mut d = PointIntegrand::new();
        for ((u, k), b) in m.iter() {
            if u.support().len() != 1 {
                return None;
            }
            let x = u.support().members().next()?;
            let r = u.role_of(x)?;
            d.entries.entry((x, r)).or_default().accumulate(u.union(k), b.clone());
        }
        Some(d)
    }
}

/// `n_0^t(theta, D) = sum_r sum_{x in theta_r, t(x) < t} D(x_r, theta - x_r)`.
pub fn single_counting_integral(space: &PointSpace, d: &PointIntegrand, t: f64) -> Kernel {
    let before = space.before(t);
    let mut out = Kernel::new();
    for (&(x, _), k) in d.iter() {
        if before.contains(x) {
            for (tb, b) in k.iter() {
                out.accumulate(*tb, b.clone());
            }
        }
    }
    out
}

/// `Lambda_r(D, [lo, hi))`: the operator of the role-`r` canonical measure
/// with point integrand `D`, assembled point by point from split
/// representations.
pub fn canonical_measure(space: &PointSpace, r: Role, d: &PointIntegrand, window: (f64, f64)) -> FockOperator {
    let n = space.fock_dim();
    let mut m = FockOperator::zeros(n, n);
    for x in 0..space.n() {
        let tx = space.time(x);
        if tx < window.0 || tx >= window.1 {
            continue;
        }
        if let Some(k) = d.get(x, r) {
            let w = if r.is_integrated() { space.weight(x) } else { 1.0 };
            m += epsilon_split(space, k, x) * C64::new(w, 0.0);
        }
    }
    m
}

/// `i_0^t(eps D) = sum_r Lambda_r(D, [0, t))`.
pub fn operator_single_integral(space: &PointSpace, d: &PointIntegrand, t: f64) -> FockOperator {
    let n = space.fock_dim();
    let mut m = FockOperator::zeros(n, n);
    for r in ROLES {
        m += canonical_measure(space, r, d, (0.0, t));
    }
    m
}

/// `eps(nu_0^t(M))`.
pub fn multiple_qs_integral(space: &PointSpace, m: &IntegrandKernel, t: f64) -> FockOperator {
    epsilon(space, &counting_integral(m, space, t))
}

/// Vector form of the operator-valued multiple integral: for each
/// `upsilon` before `t`, the integrand `M(upsilon)` acts on the shifted
/// vector `chi(upsilon_a u upsilon_n u .)` through the representation over
/// the complement of `upsilon`.
pub fn multiple_qs_integral_apply(space: &PointSpace, m: &IntegrandKernel, t: f64, chi: &FockVector) -> FockVector {
    let before = space.before(t);
    let mut by_u: BTreeMap<Table, Vec<(&Table, &Block)>> = BTreeMap::new();
    for ((u, k), b) in m.iter() {
        if u.support().is_subset(before) {
            by_u.entry(*u).or_default().push((k, b));
        }
    }
    let mut out = FockVector::zeros(space.fock_dim());
    for (u, entries) in by_u {
        let wu = space.chain_weight(u.integrated());
        let shift = u.input();
        let emit = u.output();
        for (k, b) in entries {
            // [M(u) chi(shift u .)](rho), rho = k.n u k.c
            let src = shift.union(k.input());
            let dst = emit.union(k.output());
            let wk = space.chain_weight(k.integrated());
            let xin = chi.rows(space.fock_offset(src), space.block_dim(src));
            let y = b * xin * C64::new(wu * wk, 0.0);
            let mut o = out.rows_mut(space.fock_offset(dst), space.block_dim(dst));
            o += y;
        }
    }
    out
}

fn apply_q(space: &PointSpace, k: &Kernel, q: &QField) -> Kernel {
    let mut out = Kernel::new();
    for (t, b) in k.iter() {
        for e in space.full_chain().difference(t.support()).subsets() {
            let eb = tensor_extend(space, b, t.input(), t.output(), e, q);
            out.accumulate(t.with_number(e), eb);
        }
    }
    out
}

/// `M(u) = sum_{v in u_n} T(u_t, u_a, u_c, v) (x) (-Q)(u_n - v)`.
pub fn meyer_transform(space: &PointSpace, t: &Kernel, q: &QField) -> Kernel {
    apply_q(space, t, &q.neg())
}

/// `T(theta) = sum_{u in theta_n} M(theta_t, theta_a, theta_c, u) (x) Q(theta_n - u)`.
pub fn mobius_transform(space: &PointSpace, m: &Kernel, q: &QField) -> Kernel {
    apply_q(space, m, q)
}

/// Per-cut Q-Meyer transforms `M_t = meyer(T_t)`.
#[derive(Clone, Debug)]
pub struct QMeyerTransform {
    pub per_cut: Vec<Kernel>,
    /// Whether `M_t` differs between cuts.
    pub time_dependent: bool,
}

pub fn q_meyer_process_transform(space: &PointSpace, p: &KernelProcess, q: &QField) -> QMeyerTransform {
    let per_cut: Vec<Kernel> = p.sampled(space).iter().map(|t| meyer_transform(space, t, q)).collect();
    let time_dependent = per_cut.windows(2).any(|w| w[0].distance(&w[1]) > 0.0);
    QMeyerTransform { per_cut, time_dependent }
}

/// `max_t |nu_0^t(M_t (x) Q) - T_t|`, the inverse of the Q-Meyer transform at
/// every cut.
pub fn q_meyer_roundtrip_residual(space: &PointSpace, p: &KernelProcess, q: &QField) -> f64 {
    let tr = q_meyer_process_transform(space, p, q);
    let cuts = space.cut_times();
    (0..cuts.len())
        .map(|k| {
            let amp = IntegrandKernel::ampliation(space, &tr.per_cut[k], q);
            counting_integral(&amp, space, cuts[k]).distance(&p.at_cut(space, k))
        })
        .fold(0.0, f64::max)
}

/// `max_t |nu_0^t(N)|`.
pub fn null_residual(space: &PointSpace, n: &IntegrandKernel) -> f64 {
    space
        .cut_times()
        .iter()
        .map(|&t| counting_integral(n, space, t).norm())
        .fold(0.0, f64::max)
}

pub fn is_null_integrand(space: &PointSpace, n: &IntegrandKernel, tol: f64) -> bool {
    null_residual(space, n) <= tol
}

/// Outcome of an adaptedness check.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedCheck {
    pub adapted: bool,
    /// First failing table, if any.
    pub witness: Option<Table>,
    /// Largest block deviation found.
    pub residual: f64,
}

/// Whether `T` factorizes at `t` as `T(theta^t) (x) Q(post-t number points)`
/// and vanishes on post-`t` points in other roles.
pub fn is_q_adapted(space: &PointSpace, t: &Kernel, q: &QField, time: f64, tol: f64) -> AdaptedCheck {
    let pre = space.before(time);
    let post = space.full_chain().difference(pre);
    let mut candidates: Vec<Table> = t.tables().copied().collect();
    for k in t.tables() {
        if k.support().is_subset(pre) {
            for e in post.subsets() {
                if !e.is_empty() {
                    candidates.push(k.with_number(e));
                }
            }
        }
    }
    candidates.sort();
    candidates.dedup();
    let mut residual: f64 = 0.0;
    let mut witness = None;
    for k in candidates {
        let (r, c) = block_shape(space, &k);
        let actual = t.get(&k).cloned().unwrap_or_else(|| Block::zeros(r, c));
        let bad_roles = k.time().union(k.annihilation()).union(k.creation());
        let expected = if !bad_roles.is_subset(pre) {
            Block::zeros(r, c)
        } else {
            let base = k.restrict(pre);
            let extra = k.number().intersection(post);
            match t.get(&base) {
                Some(b) => tensor_extend(space, b, base.input(), base.output(), extra, q),
                None => Block::zeros(r, c),
            }
        };
        let d = (actual - expected).norm();
        if d > residual {
            residual = d;
        }
        if d > tol && witness.is_none() {
            witness = Some(k);
        }
    }
    AdaptedCheck { adapted: witness.is_none(), witness, residual }
}

/// [`is_q_adapted`] at every cut; reports the first failure.
pub fn is_q_adapted_process(space: &PointSpace, p: &KernelProcess, q: &QField, tol: f64) -> AdaptedCheck {
    let mut worst = AdaptedCheck { adapted: true, witness: None, residual: 0.0 };
    for (k, &t) in space.cut_times().iter().enumerate() {
        let c = is_q_adapted(space, &p.at_cut(space, k), q, t, tol);
        worst.residual = worst.residual.max(c.residual);
        if !c.adapted && worst.adapted {
            worst.adapted = false;
            worst.witness = c.witness;
        }
    }
    worst
}

/// Kernel germs `T(x)`, `T_+(x)` and `D(x) = T_+(x) - T(x)`.
pub fn germ(space: &PointSpace, p: &KernelProcess, x: usize) -> (KernelGerm, KernelGerm, KernelGerm) {
    let c = KernelProcess::cut_of(x);
    let g = germ_at(&p.at_cut(space, c), x);
    let gp = germ_at(&p.at_cut(space, c + 1), x);
    let d = GermMatrix::from_fn(|pos| gp.get(pos).sub(g.get(pos)));
    (g, gp, d)
}

/// Germ of a single kernel at `x`: entry `(mu, nu)` is the split at `x_nu^mu`.
pub fn germ_at(t: &Kernel, x: usize) -> KernelGerm {
    GermMatrix::from_fn(|pos| point_split(t, pos, x).kernel)
}

/// `|nabla_x T chi - Q(x) T nabla_x chi|` in the reduced norm, with
/// `T = T_{t(x)}`.
pub fn q_commutator_residual(space: &PointSpace, p: &KernelProcess, q: &QField, x: usize, chi: &FockVector) -> f64 {
    let t = p.at_cut(space, KernelProcess::cut_of(x));
    let d = q_commutator(space, &t, q, x, chi);
    reduced_inner(space, x, &d, &d).re.max(0.0).sqrt()
}

/// `nabla_x T chi - (T (x) Q(x)) nabla_x chi` as a vector on the `x`-sector.
pub fn q_commutator(space: &PointSpace, t: &Kernel, q: &QField, x: usize, chi: &FockVector) -> FockVector {
    let grad = sector_restrict(space, &(epsilon(space, t) * chi), x, true);
    let lifted = epsilon_split(space, &lift(space, t, x, q), x);
    grad - lifted * sector_restrict(space, chi, x, true)
}

/// Outcome of the counting-integral norm bound.
#[derive(Clone, Debug, PartialEq)]
pub struct CountingBoundReport {
    pub hypothesis_holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Checks `|M(u, .)|_gamma <= c beta(u)` for all `u`, then compares
/// `|nu_0^t(M)|_alpha` with `c` for `alpha = beta 1_[0,t) + gamma`.
pub fn counting_norm_bound(
    space: &PointSpace,
    m: &IntegrandKernel,
    beta: &WeightQuadruple,
    gamma: &WeightQuadruple,
    c: f64,
    t: f64,
) -> CountingBoundReport {
    let mut hyp = true;
    for ((u, k), b) in m.iter() {
        let nb = spectral_norm(b);
        if nb == 0.0 {
            continue;
        }
        if nb > c * beta.on_table(u) * gamma.on_table(k) * (1.0 + 1e-12) {
            hyp = false;
            break;
        }
    }
    let before = space.before(t);
    let mut alpha = gamma.clone();
    for r in ROLES {
        for x in before.members() {
            alpha.0[r.index()][x] += beta.get(r, x);
        }
    }
    let lhs = relative_norm(&counting_integral(m, space, t), &alpha);
    CountingBoundReport {
        hypothesis_holds: hyp,
        lhs,
        rhs: c,
        pass: hyp && lhs <= c * (1.0 + 1e-12),
    }
}

/// Reduced-space components `(chi without x, chi on x)`.
pub fn split_vector(space: &PointSpace, chi: &FockVector, x: usize) -> (FockVector, FockVector) {
    (sector_restrict(space, chi, x, false), sector_restrict(space, chi, x, true))
}

/// `chi(. u x)` as coordinates over the reduced space (see
/// [`point_evaluation`]).
pub fn malliavin_derivative(space: &PointSpace, chi: &FockVector, x: usize) -> crate::fock::ReducedVector {
    point_evaluation(space, chi, x)
}
