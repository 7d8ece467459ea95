//! Triangular operator-valued kernels and their algebra.
//!
//! A kernel is a sparse map from [`Table`] to a block
//! `k(a u n) (x) h -> k(n u c) (x) h` (tensor factors in time order, `h`
//! last). Absent tables are zero blocks.

use crate::chainspace::{enumerate_tables, Chain, PointSpace, Role, Table};
use crate::fock::{spectral_norm, QField, WeightFunction};
use crate::C64;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

pub type Block = DMatrix<C64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("block for table {table} has shape {got:?}, expected {expected:?}")]
    Shape {
        table: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("table {0} is not valid on this space")]
    BadTable(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("malformed kernel file: {0}")]
    Parse(String),
}

/// Expected `(rows, cols)` of the block at `t`.
pub fn block_shape(space: &PointSpace, t: &Table) -> (usize, usize) {
    (space.block_dim(t.output()), space.block_dim(t.input()))
}

fn check_table(space: &PointSpace, t: &Table) -> Result<(), KernelError> {
    if !t.is_valid() || !t.support().is_subset(space.full_chain()) {
        return Err(KernelError::BadTable(t.encode(space.n().max(1))));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Kernel {
    blocks: BTreeMap<Table, Block>,
}

impl Kernel {
    pub fn new() -> Self {
        Kernel::default()
    }

    pub fn insert(&mut self, space: &PointSpace, t: Table, b: Block) -> Result<(), KernelError> {
        check_table(space, &t)?;
        let expected = block_shape(space, &t);
        if b.shape() != expected {
            return Err(KernelError::Shape {
                table: t.encode(space.n()),
                expected,
                got: b.shape(),
            });
        }
        self.blocks.insert(t, b);
        Ok(())
    }

    /// Adds `b` to the block at `t`; shapes are the caller's responsibility.
    pub fn accumulate(&mut self, t: Table, b: Block) {
        match self.blocks.get_mut(&t) {
            Some(e) => *e += b,
            None => {
                self.blocks.insert(t, b);
            }
        }
    }

    pub fn get(&self, t: &Table) -> Option<&Block> {
        self.blocks.get(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Table, &Block)> {
        self.blocks.iter()
    }

    pub fn tables(&self) -> impl Iterator<Item = &Table> {
        self.blocks.keys()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Every stored block has the shape its table dictates.
    pub fn shapes_valid(&self, space: &PointSpace) -> bool {
        self.blocks
            .iter()
            .all(|(t, b)| t.is_valid() && b.shape() == block_shape(space, t))
    }

    pub fn filter<F: Fn(&Table) -> bool>(&self, keep: F) -> Kernel {
        Kernel {
            blocks: self
                .blocks
                .iter()
                .filter(|(t, _)| keep(t))
                .map(|(t, b)| (*t, b.clone()))
                .collect(),
        }
    }

    pub fn map_tables<F: Fn(&Table) -> Table>(&self, f: F) -> Kernel {
        let mut k = Kernel::new();
        for (t, b) in &self.blocks {
            k.accumulate(f(t), b.clone());
        }
        k
    }

    pub fn add(&self, o: &Kernel) -> Kernel {
        let mut k = self.clone();
        for (t, b) in &o.blocks {
            k.accumulate(*t, b.clone());
        }
        k
    }

    pub fn sub(&self, o: &Kernel) -> Kernel {
        self.add(&o.scale(C64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: C64) -> Kernel {
        Kernel {
            blocks: self.blocks.iter().map(|(t, b)| (*t, b * c)).collect(),
        }
    }

    /// Frobenius norm over all blocks.
    pub fn norm(&self) -> f64 {
        self.blocks
            .values()
            .map(|b| b.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn distance(&self, o: &Kernel) -> f64 {
        self.sub(o).norm()
    }

    /// Drops blocks whose Frobenius norm is at most `tol`.
    pub fn pruned(&self, tol: f64) -> Kernel {
        self.filter(|t| self.blocks[t].norm() > tol)
    }
}

/// `I(n)` on tables whose only nonempty chain is the number chain.
pub fn unit_kernel(space: &PointSpace) -> Kernel {
    let mut k = Kernel::new();
    for &c in space.chains() {
        let d = space.block_dim(c);
        k.accumulate(Table::new(Chain::EMPTY, Chain::EMPTY, Chain::EMPTY, c), Block::identity(d, d));
    }
    k
}

/// `T*(theta) = T(theta')^*` with annihilation and creation swapped.
pub fn star_adjoint(t: &Kernel) -> Kernel {
    Kernel {
        blocks: t.blocks.iter().map(|(k, b)| (k.primed(), b.adjoint())).collect(),
    }
}

/// Points where an `X`-table and a `Y`-table would both integrate or both
/// emit: `(s.t u s.c) n (tau.t u tau.a)`.
fn coincidences(s: &Table, tau: &Table) -> Chain {
    s.time()
        .union(s.creation())
        .intersection(tau.time().union(tau.annihilation()))
}

/// Result table of composing a compatible pair without coincidences.
pub fn product_table(s: &Table, tau: &Table) -> Table {
    Table::new(
        s.time()
            .union(tau.time())
            .union(s.annihilation().intersection(tau.creation())),
        tau.annihilation()
            .union(s.annihilation().intersection(tau.number())),
        s.creation().union(s.number().intersection(tau.creation())),
        s.number().intersection(tau.number()),
    )
}

/// Result table of a pair with coincidence set `cs`: `t&t` and `c&t` keep
/// the point in time resp. creation, `t&a` becomes annihilation, `c&a`
/// becomes number.
fn coincidence_table(s: &Table, tau: &Table, cs: Chain) -> Table {
    let base = product_table(s, tau);
    Table::new(
        base.time()
            .difference(cs)
            .union(s.time().intersection(tau.time())),
        base.annihilation()
            .difference(cs)
            .union(s.time().intersection(tau.annihilation())),
        base.creation()
            .difference(cs)
            .union(s.creation().intersection(tau.time())),
        base.number().union(s.creation().intersection(tau.annihilation())),
    )
}

fn for_each_pair<F: FnMut(&Table, &Block, &Table, &Block, Chain)>(x: &Kernel, y: &Kernel, mut f: F) {
    let mut by_out: HashMap<Chain, Vec<(&Table, &Block)>> = HashMap::new();
    for (t, b) in y.iter() {
        by_out.entry(t.output()).or_default().push((t, b));
    }
    for (s, xb) in x.iter() {
        if let Some(list) = by_out.get(&s.input()) {
            for (tau, yb) in list {
                f(s, xb, tau, yb, coincidences(s, tau));
            }
        }
    }
}

/// The associative kernel product.
///
/// A pair `(s, tau)` contributes `X(s) Y(tau)` when the input chain of `s`
/// equals the output chain of `tau` and no point is integrated or emitted on
/// both sides.
pub fn kernel_product(x: &Kernel, y: &Kernel) -> Kernel {
    let mut k = Kernel::new();
    for_each_pair(x, y, |s, xb, tau, yb, cs| {
        if cs.is_empty() {
            k.accumulate(product_table(s, tau), xb * yb);
        }
    });
    k
}

/// The pairs excluded by [`kernel_product`], each weighted by `Delta(x)` at
/// every coincident point. On a finite space
/// `eps(X) eps(Y) = eps(X.Y) + eps(coincidence_product(X, Y))`.
pub fn coincidence_product(space: &PointSpace, x: &Kernel, y: &Kernel) -> Kernel {
    let mut k = Kernel::new();
    for_each_pair(x, y, |s, xb, tau, yb, cs| {
        if !cs.is_empty() {
            let w = space.chain_weight(cs);
            k.accumulate(coincidence_table(s, tau, cs), xb * yb * C64::new(w, 0.0));
        }
    });
    k
}

/// Four per-point nonnegative functions, one per role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightQuadruple(pub [Vec<f64>; 4]);

impl WeightQuadruple {
    pub fn new(time: Vec<f64>, annihilation: Vec<f64>, creation: Vec<f64>, number: Vec<f64>) -> Self {
        WeightQuadruple([time, annihilation, creation, number])
    }

    pub fn constant(space: &PointSpace, vals: [f64; 4]) -> Self {
        WeightQuadruple(vals.map(|v| vec![v; space.n()]))
    }

    /// `alpha_nn = 1`, others zero.
    pub fn unit(space: &PointSpace) -> Self {
        Self::constant(space, [0.0, 0.0, 0.0, 1.0])
    }

    pub fn get(&self, r: Role, x: usize) -> f64 {
        self.0[r.index()][x]
    }

    pub fn on_table(&self, t: &Table) -> f64 {
        t.product_over(|r, x| self.get(r, x))
    }

    /// Swaps the annihilation and creation components.
    pub fn transposed(&self) -> Self {
        let [t, a, c, n] = self.0.clone();
        WeightQuadruple([t, c, a, n])
    }

    /// Pointwise product of the triangular matrices
    /// `[[1, a, t], [0, n, c], [0, 0, 1]]`.
    #[allow(clippy::needless_range_loop)]
    pub fn product(&self, g: &WeightQuadruple) -> Self {
        let k = self.0[0].len();
        let mut out: [Vec<f64>; 4] = [vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]];
        for x in 0..k {
            let [at, aa, ac, an] = [self.0[0][x], self.0[1][x], self.0[2][x], self.0[3][x]];
            let [gt, ga, gc, gn] = [g.0[0][x], g.0[1][x], g.0[2][x], g.0[3][x]];
            out[0][x] = gt + aa * gc + at;
            out[1][x] = ga + aa * gn;
            out[2][x] = an * gc + ac;
            out[3][x] = an * gn;
        }
        WeightQuadruple(out)
    }
}

/// `max_theta |T(theta)| / alpha(theta)` with spectral block norms.
pub fn relative_norm(t: &Kernel, alpha: &WeightQuadruple) -> f64 {
    let mut m: f64 = 0.0;
    for (k, b) in t.iter() {
        let nb = spectral_norm(b);
        if nb == 0.0 {
            continue;
        }
        let a = alpha.on_table(k);
        if a == 0.0 {
            return f64::INFINITY;
        }
        m = m.max(nb / a);
    }
    m
}

/// `sum_t w(t) ( sum_{a,c} w(a) w(c) max_n {|T|/q(n)}^2 r(a u c) )^(1/2)`.
pub fn projective_norm(space: &PointSpace, t: &Kernel, q: &WeightFunction, r: &WeightFunction) -> f64 {
    let mut groups: BTreeMap<Chain, BTreeMap<(Chain, Chain), f64>> = BTreeMap::new();
    for (k, b) in t.iter() {
        let v = spectral_norm(b) / q.on_chain(k.number());
        let e = groups
            .entry(k.time())
            .or_default()
            .entry((k.annihilation(), k.creation()))
            .or_insert(0.0);
        *e = e.max(v);
    }
    groups
        .iter()
        .map(|(tc, inner)| {
            let s: f64 = inner
                .iter()
                .map(|((a, c), m)| {
                    space.chain_weight(*a) * space.chain_weight(*c) * m * m * r.on_chain(a.union(*c))
                })
                .sum();
            space.chain_weight(*tc) * s.sqrt()
        })
        .sum()
}

/// `|T|_alpha exp{sum_x Delta(x) (alpha_t + r (alpha_c^2 + alpha_a^2)/2)}`,
/// valid when `alpha_n <= q`.
pub fn exponential_bound(
    space: &PointSpace,
    rel_norm: f64,
    alpha: &WeightQuadruple,
    r: &WeightFunction,
    q: &WeightFunction,
) -> Result<f64, KernelError> {
    for x in 0..space.n() {
        if alpha.get(Role::Number, x) > q.0[x] {
            return Err(KernelError::Precondition(format!(
                "number weight exceeds q at point {x}"
            )));
        }
    }
    let e: f64 = (0..space.n())
        .map(|x| {
            let a = alpha.get(Role::Annihilation, x);
            let c = alpha.get(Role::Creation, x);
            space.weight(x) * (alpha.get(Role::Time, x) + r.0[x] * (c * c + a * a) / 2.0)
        })
        .sum();
    Ok(rel_norm * e.exp())
}

/// Scalar kernel `prod alpha(theta)` times the identity of `h`.
pub fn exponential_kernel(space: &PointSpace, alpha: &WeightQuadruple) -> Result<Kernel, KernelError> {
    if !space.is_scalar() {
        return Err(KernelError::Precondition(
            "exponential kernels need d(x) = 1 everywhere".into(),
        ));
    }
    let dh = space.initial_dim();
    let mut k = Kernel::new();
    for t in enumerate_tables(space) {
        let v = alpha.on_table(&t);
        if v != 0.0 {
            k.accumulate(t, Block::identity(dh, dh) * C64::new(v, 0.0));
        }
    }
    Ok(k)
}

/// `b (x) Q(extra)` as a block `k(input u extra) (x) h -> k(output u extra) (x) h`
/// in canonical factor order.
pub fn tensor_extend(
    space: &PointSpace,
    b: &Block,
    input: Chain,
    output: Chain,
    extra: Chain,
    q: &QField,
) -> Block {
    if extra.is_empty() {
        return b.clone();
    }
    let ic = input.union(extra);
    let oc = output.union(extra);
    let (rows, cols) = (space.block_dim(oc), space.block_dim(ic));
    let col_info: Vec<_> = (0..cols)
        .map(|j| {
            let (d, h) = space.split_local(ic, j);
            (space.join_local(input, &d, h), d)
        })
        .collect();
    let mut out = Block::zeros(rows, cols);
    for i in 0..rows {
        let (di, hi) = space.split_local(oc, i);
        let bi = space.join_local(output, &di, hi);
        for (j, (bj, dj)) in col_info.iter().enumerate() {
            let v = b[(bi, *bj)];
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            let mut f = v;
            for x in extra.members() {
                f *= q.at(x)[(di[x], dj[x])];
            }
            out[(i, j)] = f;
        }
    }
    out
}

/// Integrand `M(upsilon, kappa)` over disjoint table pairs, each block shaped
/// for the union table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntegrandKernel {
    blocks: BTreeMap<(Table, Table), Block>,
}

impl IntegrandKernel {
    pub fn new() -> Self {
        IntegrandKernel::default()
    }

    pub fn insert(&mut self, space: &PointSpace, u: Table, k: Table, b: Block) -> Result<(), KernelError> {
        if !u.support().is_disjoint(k.support()) {
            return Err(KernelError::BadTable(format!("{} / {}", u.encode(space.n()), k.encode(space.n()))));
        }
        let t = u.union(&k);
        check_table(space, &t)?;
        let expected = block_shape(space, &t);
        if b.shape() != expected {
            return Err(KernelError::Shape {
                table: t.encode(space.n()),
                expected,
                got: b.shape(),
            });
        }
        self.blocks.insert((u, k), b);
        Ok(())
    }

    pub fn accumulate(&mut self, u: Table, k: Table, b: Block) {
        match self.blocks.get_mut(&(u, k)) {
            Some(e) => *e += b,
            None => {
                self.blocks.insert((u, k), b);
            }
        }
    }

    pub fn get(&self, u: &Table, k: &Table) -> Option<&Block> {
        self.blocks.get(&(*u, *k))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(Table, Table), &Block)> {
        self.blocks.iter()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn sub(&self, o: &IntegrandKernel) -> IntegrandKernel {
        let mut m = self.clone();
        for ((u, k), b) in o.iter() {
            m.accumulate(*u, *k, -b);
        }
        m
    }

    pub fn scale(&self, c: C64) -> IntegrandKernel {
        IntegrandKernel {
            blocks: self.blocks.iter().map(|(k, b)| (*k, b * c)).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks.values().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    }

    /// Integrand of the form `M(upsilon) (x) Q(kappa_nn)`, supported on
    /// `kappa` with only a number chain.
    pub fn ampliation(space: &PointSpace, m: &Kernel, q: &QField) -> IntegrandKernel {
        let mut out = IntegrandKernel::new();
        for (u, b) in m.iter() {
            for kc in space.full_chain().difference(u.support()).subsets() {
                let kt = Table::new(Chain::EMPTY, Chain::EMPTY, Chain::EMPTY, kc);
                let eb = tensor_extend(space, b, u.input(), u.output(), kc, q);
                out.accumulate(*u, kt, eb);
            }
        }
        out
    }

    /// Largest `|upsilon|` carrying a block.
    pub fn max_upsilon_size(&self) -> usize {
        self.blocks.keys().map(|(u, _)| u.support().len()).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    /// One role symbol per point, `.` when absent.
    pub table: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `[re, im]` entries.
    pub data: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelFile {
    pub n_points: usize,
    pub initial_dim: usize,
    pub multiplicities: Vec<usize>,
    pub records: Vec<KernelRecord>,
}

impl Kernel {
    pub fn to_records(&self, space: &PointSpace) -> KernelFile {
        let records = self
            .blocks
            .iter()
            .map(|(t, b)| KernelRecord {
                table: t.encode(space.n()),
                rows: b.nrows(),
                cols: b.ncols(),
                data: (0..b.nrows())
                    .flat_map(|i| (0..b.ncols()).map(move |j| (i, j)))
                    .map(|(i, j)| [b[(i, j)].re, b[(i, j)].im])
                    .collect(),
            })
            .collect();
        KernelFile {
            n_points: space.n(),
            initial_dim: space.initial_dim(),
            multiplicities: space.points().iter().map(|p| p.multiplicity).collect(),
            records,
        }
    }

    pub fn from_records(space: &PointSpace, f: &KernelFile) -> Result<Kernel, KernelError> {
        let mults: Vec<usize> = space.points().iter().map(|p| p.multiplicity).collect();
        if f.n_points != space.n() || f.initial_dim != space.initial_dim() || f.multiplicities != mults {
            return Err(KernelError::Parse("file was written for a different space".into()));
        }
        let mut k = Kernel::new();
        for r in &f.records {
            if r.table.chars().count() != space.n() {
                return Err(KernelError::Parse(format!("bad table string {:?}", r.table)));
            }
            let t = Table::decode(&r.table).ok_or_else(|| KernelError::Parse(format!("bad table {:?}", r.table)))?;
            if r.data.len() != r.rows * r.cols {
                return Err(KernelError::Parse(format!("entry count mismatch at {}", r.table)));
            }
            let b = Block::from_fn(r.rows, r.cols, |i, j| {
                let [re, im] = r.data[i * r.cols + j];
                C64::new(re, im)
            });
            k.insert(space, t, b)?;
        }
        Ok(k)
    }

    pub fn to_json(&self, space: &PointSpace) -> String {
        serde_json::to_string_pretty(&self.to_records(space)).expect("kernel records serialize")
    }

    pub fn from_json(space: &PointSpace, s: &str) -> Result<Kernel, KernelError> {
        let f: KernelFile = serde_json::from_str(s).map_err(|e| KernelError::Parse(e.to_string()))?;
        Self::from_records(space, &f)
    }
}

/// Role-wise blocks of a kernel that lie on tables with `x` in role `r`.
pub fn tables_with_role(t: &Kernel, x: usize, r: Role) -> Kernel {
    t.filter(|k| k.get(r).contains(x))
}

pub fn tables_without(t: &Kernel, x: usize) -> Kernel {
    t.filter(|k| !k.support().contains(x))
}
