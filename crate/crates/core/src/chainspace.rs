//! Finite ordered point sets, chains and four-role tables.
//!
//! Points are indexed `0..n` in strictly increasing time, so bit order of a
//! [`Chain`] mask is time order.

use crate::C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard limit for chain bitmasks and per-space caches of size `2^n`.
pub const MAX_POINTS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("at most {MAX_POINTS} points are supported, got {0}")]
    TooManyPoints(usize),
    #[error("times must be finite, nonnegative and strictly increasing (point {0})")]
    BadTime(usize),
    #[error("weight of point {0} must be finite and positive")]
    BadWeight(usize),
    #[error("multiplicity of point {0} must be at least 1")]
    BadMultiplicity(usize),
    #[error("initial dimension must be at least 1")]
    BadInitialDim,
    #[error("field lists have inconsistent lengths")]
    LengthMismatch,
}

/// A finite chain, stored as a bitmask over point indices.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct Chain(pub u32);

impl Chain {
    pub const EMPTY: Chain = Chain(0);

    pub fn singleton(x: usize) -> Chain {
        Chain(1 << x)
    }

    pub fn from_points(points: &[usize]) -> Chain {
        Chain(points.iter().fold(0, |m, &x| m | (1 << x)))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, x: usize) -> bool {
        self.0 >> x & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, o: Chain) -> Chain {
        Chain(self.0 | o.0)
    }

    pub fn intersection(self, o: Chain) -> Chain {
        Chain(self.0 & o.0)
    }

    pub fn difference(self, o: Chain) -> Chain {
        Chain(self.0 & !o.0)
    }

    pub fn is_disjoint(self, o: Chain) -> bool {
        self.0 & o.0 == 0
    }

    pub fn is_subset(self, o: Chain) -> bool {
        self.0 & !o.0 == 0
    }

    pub fn with(self, x: usize) -> Chain {
        Chain(self.0 | (1 << x))
    }

    pub fn without(self, x: usize) -> Chain {
        Chain(self.0 & !(1 << x))
    }

    /// Members in increasing index (hence time) order.
    pub fn members(self) -> impl Iterator<Item = usize> {
        let mut m = self.0;
        std::iter::from_fn(move || {
            if m == 0 {
                None
            } else {
                let x = m.trailing_zeros() as usize;
                m &= m - 1;
                Some(x)
            }
        })
    }

    /// All subsets, starting from the empty chain (subset-mask order).
    pub fn subsets(self) -> impl Iterator<Item = Chain> {
        let full = self.0;
        let mut next = Some(0u32);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == full {
                None
            } else {
                Some((cur.wrapping_sub(full)) & full)
            };
            Some(Chain(cur))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub index: usize,
    pub time: f64,
    pub weight: f64,
    pub multiplicity: usize,
}

/// Ordered weighted point set with per-point mode multiplicities and an
/// initial space of dimension `initial_dim`.
///
/// Caches chain weights, tensor dimensions and Fock block offsets for all
/// `2^n` chains.
#[derive(Clone, Debug)]
pub struct PointSpace {
    points: Vec<Point>,
    initial_dim: usize,
    chains: Vec<Chain>,
    weight: Vec<f64>,
    dim: Vec<usize>,
    offset: Vec<usize>,
    fock_dim: usize,
}

impl PointSpace {
    pub fn new(
        times: &[f64],
        weights: &[f64],
        multiplicities: &[usize],
        initial_dim: usize,
    ) -> Result<Self, SpaceError> {
        let n = times.len();
        if weights.len() != n || multiplicities.len() != n {
            return Err(SpaceError::LengthMismatch);
        }
        if n > MAX_POINTS {
            return Err(SpaceError::TooManyPoints(n));
        }
        if initial_dim == 0 {
            return Err(SpaceError::BadInitialDim);
        }
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            let t = times[i];
            if !t.is_finite() || t < 0.0 || (i > 0 && t <= times[i - 1]) {
                return Err(SpaceError::BadTime(i));
            }
            if !(weights[i].is_finite() && weights[i] > 0.0) {
                return Err(SpaceError::BadWeight(i));
            }
            if multiplicities[i] == 0 {
                return Err(SpaceError::BadMultiplicity(i));
            }
            points.push(Point {
                index: i,
                time: t,
                weight: weights[i],
                multiplicity: multiplicities[i],
            });
        }
        Ok(Self::build(points, initial_dim))
    }

    /// `n` points at times `k*horizon/n`, weights `horizon/n`.
    pub fn uniform(
        n: usize,
        horizon: f64,
        multiplicity: usize,
        initial_dim: usize,
    ) -> Result<Self, SpaceError> {
        let step = if n == 0 { 0.0 } else { horizon / n as f64 };
        let times: Vec<f64> = (1..=n).map(|k| k as f64 * step).collect();
        Self::new(&times, &vec![step; n], &vec![multiplicity; n], initial_dim)
    }

    fn build(points: Vec<Point>, initial_dim: usize) -> Self {
        let n = points.len();
        let size = 1usize << n;
        let mut chains: Vec<Chain> = (0..size as u32).map(Chain).collect();
        chains.sort_by(|a, b| {
            a.len()
                .cmp(&b.len())
                .then_with(|| a.members().cmp(b.members()))
        });
        let mut weight = vec![1.0; size];
        let mut dim = vec![1usize; size];
        for m in 1..size {
            let x = m.trailing_zeros() as usize;
            let rest = m & (m - 1);
            weight[m] = weight[rest] * points[x].weight;
            dim[m] = dim[rest] * points[x].multiplicity;
        }
        let mut offset = vec![0usize; size];
        let mut acc = 0;
        for c in &chains {
            offset[c.0 as usize] = acc;
            acc += dim[c.0 as usize] * initial_dim;
        }
        PointSpace {
            points,
            initial_dim,
            chains,
            weight,
            dim,
            offset,
            fock_dim: acc,
        }
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn time(&self, x: usize) -> f64 {
        self.points[x].time
    }

    pub fn weight(&self, x: usize) -> f64 {
        self.points[x].weight
    }

    pub fn multiplicity(&self, x: usize) -> usize {
        self.points[x].multiplicity
    }

    pub fn initial_dim(&self) -> usize {
        self.initial_dim
    }

    pub fn full_chain(&self) -> Chain {
        Chain(((1u64 << self.n()) - 1) as u32)
    }

    /// Chains sorted by size, then lexicographically.
    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    /// `w(chain) = prod Delta(x)`; the empty chain has weight 1.
    pub fn chain_weight(&self, c: Chain) -> f64 {
        self.weight[c.0 as usize]
    }

    /// `prod d(x)` over the chain.
    pub fn chain_dim(&self, c: Chain) -> usize {
        self.dim[c.0 as usize]
    }

    /// Dimension of `k(chain) (x) h`.
    pub fn block_dim(&self, c: Chain) -> usize {
        self.dim[c.0 as usize] * self.initial_dim
    }

    /// Offset of the chain's block in the Fock basis.
    pub fn fock_offset(&self, c: Chain) -> usize {
        self.offset[c.0 as usize]
    }

    /// `d_h * prod (1 + d(x))`.
    pub fn fock_dim(&self) -> usize {
        self.fock_dim
    }

    pub fn is_scalar(&self) -> bool {
        self.points.iter().all(|p| p.multiplicity == 1)
    }

    /// Split a local index of `k(chain) (x) h` into per-point digits and the
    /// initial-space index. Earlier points are more significant; `h` is last.
    pub fn split_local(&self, c: Chain, mut local: usize) -> ([usize; MAX_POINTS], usize) {
        let h = local % self.initial_dim;
        local /= self.initial_dim;
        let mut digits = [0usize; MAX_POINTS];
        let members: Vec<usize> = c.members().collect();
        for &x in members.iter().rev() {
            let d = self.points[x].multiplicity;
            digits[x] = local % d;
            local /= d;
        }
        (digits, h)
    }

    /// Inverse of [`split_local`](Self::split_local).
    pub fn join_local(&self, c: Chain, digits: &[usize; MAX_POINTS], h: usize) -> usize {
        let mut acc = 0;
        for x in c.members() {
            acc = acc * self.points[x].multiplicity + digits[x];
        }
        acc * self.initial_dim + h
    }

    /// Points with `t(x) < t`.
    pub fn before(&self, t: f64) -> Chain {
        let mut m = 0u32;
        for p in &self.points {
            if p.time < t {
                m |= 1 << p.index;
            }
        }
        Chain(m)
    }

    /// Cut times `0, t(x_1), .., t(x_n), +inf`.
    pub fn cut_times(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n() + 2);
        v.push(0.0);
        v.extend(self.points.iter().map(|p| p.time));
        v.push(f64::INFINITY);
        v
    }
}

/// The four roles of a triangular table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    /// `(-,+)`: integrated, in neither input nor output.
    Time,
    /// `(-,o)`: input only.
    Annihilation,
    /// `(o,+)`: output only.
    Creation,
    /// `(o,o)`: input and output.
    Number,
}

pub const ROLES: [Role; 4] = [Role::Time, Role::Annihilation, Role::Creation, Role::Number];

impl Role {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            Role::Time => 't',
            Role::Annihilation => 'a',
            Role::Creation => 'c',
            Role::Number => 'n',
        }
    }

    pub fn from_symbol(c: char) -> Option<Role> {
        match c {
            't' => Some(Role::Time),
            'a' => Some(Role::Annihilation),
            'c' => Some(Role::Creation),
            'n' => Some(Role::Number),
            _ => None,
        }
    }

    /// Role under the star involution: annihilation and creation swap.
    pub fn primed(self) -> Role {
        match self {
            Role::Annihilation => Role::Creation,
            Role::Creation => Role::Annihilation,
            r => r,
        }
    }

    /// Whether the role integrates the point against the measure in the
    /// representation.
    pub fn is_integrated(self) -> bool {
        matches!(self, Role::Time | Role::Annihilation)
    }

    pub fn in_input(self) -> bool {
        matches!(self, Role::Annihilation | Role::Number)
    }

    pub fn in_output(self) -> bool {
        matches!(self, Role::Creation | Role::Number)
    }
}

/// Four pairwise disjoint chains indexed by [`Role`].
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct Table(pub [Chain; 4]);

impl Table {
    pub const EMPTY: Table = Table([Chain::EMPTY; 4]);

    pub fn new(time: Chain, annihilation: Chain, creation: Chain, number: Chain) -> Table {
        Table([time, annihilation, creation, number])
    }

    pub fn get(&self, r: Role) -> Chain {
        self.0[r.index()]
    }

    pub fn time(&self) -> Chain {
        self.0[0]
    }

    pub fn annihilation(&self) -> Chain {
        self.0[1]
    }

    pub fn creation(&self) -> Chain {
        self.0[2]
    }

    pub fn number(&self) -> Chain {
        self.0[3]
    }

    pub fn is_valid(&self) -> bool {
        let [a, b, c, d] = self.0;
        (a.0 & b.0) | (a.0 & c.0) | (a.0 & d.0) | (b.0 & c.0) | (b.0 & d.0) | (c.0 & d.0) == 0
    }

    /// Annihilation and number points: the block's input chain.
    pub fn input(&self) -> Chain {
        self.annihilation().union(self.number())
    }

    /// Number and creation points: the block's output chain.
    pub fn output(&self) -> Chain {
        self.number().union(self.creation())
    }

    /// Time and annihilation points, weighted by the measure in the
    /// representation.
    pub fn integrated(&self) -> Chain {
        self.time().union(self.annihilation())
    }

    pub fn support(&self) -> Chain {
        Chain(self.0[0].0 | self.0[1].0 | self.0[2].0 | self.0[3].0)
    }

    pub fn is_empty(&self) -> bool {
        self.support().is_empty()
    }

    pub fn role_of(&self, x: usize) -> Option<Role> {
        ROLES.into_iter().find(|r| self.get(*r).contains(x))
    }

    /// Adds `x` in role `r`; `x` must not already be present.
    pub fn with(&self, x: usize, r: Role) -> Table {
        debug_assert!(!self.support().contains(x));
        let mut t = *self;
        t.0[r.index()] = t.0[r.index()].with(x);
        t
    }

    pub fn without(&self, x: usize) -> Table {
        Table(self.0.map(|c| c.without(x)))
    }

    /// Adds the points of `e` to the number chain.
    pub fn with_number(&self, e: Chain) -> Table {
        debug_assert!(self.support().is_disjoint(e));
        let mut t = *self;
        t.0[3] = t.0[3].union(e);
        t
    }

    /// The table with annihilation and creation chains swapped.
    pub fn primed(&self) -> Table {
        Table([self.0[0], self.0[2], self.0[1], self.0[3]])
    }

    /// Componentwise union; the caller guarantees disjoint supports.
    pub fn union(&self, o: &Table) -> Table {
        Table([
            self.0[0].union(o.0[0]),
            self.0[1].union(o.0[1]),
            self.0[2].union(o.0[2]),
            self.0[3].union(o.0[3]),
        ])
    }

    pub fn difference(&self, o: &Table) -> Table {
        Table([
            self.0[0].difference(o.0[0]),
            self.0[1].difference(o.0[1]),
            self.0[2].difference(o.0[2]),
            self.0[3].difference(o.0[3]),
        ])
    }

    pub fn restrict(&self, c: Chain) -> Table {
        Table(self.0.map(|k| k.intersection(c)))
    }

    /// Componentwise inclusion.
    pub fn is_subtable(&self, o: &Table) -> bool {
        (0..4).all(|i| self.0[i].is_subset(o.0[i]))
    }

    /// All componentwise sub-tables whose points lie in `within`.
    pub fn subtables(&self, within: Chain) -> Vec<Table> {
        let r = self.restrict(within);
        let mut out = vec![Table::EMPTY];
        for i in 0..4 {
            let mut next = Vec::with_capacity(out.len() << r.0[i].len());
            for t in &out {
                for s in r.0[i].subsets() {
                    let mut u = *t;
                    u.0[i] = s;
                    next.push(u);
                }
            }
            out = next;
        }
        out
    }

    /// One character per point: `.` for absent, else the role symbol.
    pub fn encode(&self, n: usize) -> String {
        (0..n)
            .map(|x| self.role_of(x).map_or('.', Role::symbol))
            .collect()
    }

    pub fn decode(s: &str) -> Option<Table> {
        let mut t = Table::EMPTY;
        for (x, ch) in s.chars().enumerate() {
            if x >= MAX_POINTS {
                return None;
            }
            if ch != '.' {
                t = t.with(x, Role::from_symbol(ch)?);
            }
        }
        Some(t)
    }

    /// Product of `prod_x f(role, x)` over all points of the table.
    pub fn product_over<F: Fn(Role, usize) -> f64>(&self, f: F) -> f64 {
        let mut p = 1.0;
        for r in ROLES {
            for x in self.get(r).members() {
                p *= f(r, x);
            }
        }
        p
    }
}

/// A single point in a single role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtomicTable {
    pub role: Role,
    pub point: usize,
}

impl AtomicTable {
    pub fn table(&self) -> Table {
        Table::EMPTY.with(self.point, self.role)
    }
}

pub fn enumerate_chains(space: &PointSpace) -> Vec<Chain> {
    space.chains().to_vec()
}

/// All `5^n` tables, point 0 varying fastest.
pub fn enumerate_tables(space: &PointSpace) -> Vec<Table> {
    let n = space.n();
    let mut out = Vec::with_capacity(5usize.pow(n as u32));
    let mut digits = vec![0u8; n];
    loop {
        let mut t = Table::EMPTY;
        for (x, &d) in digits.iter().enumerate() {
            if d > 0 {
                t = t.with(x, ROLES[d as usize - 1]);
            }
        }
        out.push(t);
        let mut i = 0;
        loop {
            if i == n {
                return out;
            }
            digits[i] += 1;
            if digits[i] < 5 {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

pub fn chain_weight(space: &PointSpace, c: Chain) -> f64 {
    space.chain_weight(c)
}

/// `sum_c w(c) f(c)`, optionally over chains disjoint from `avoid`.
pub fn measure_sum<F: Fn(Chain) -> C64>(space: &PointSpace, f: F, avoid: Option<Chain>) -> C64 {
    let avoid = avoid.unwrap_or(Chain::EMPTY);
    space
        .chains()
        .iter()
        .filter(|c| c.is_disjoint(avoid))
        .map(|&c| f(c) * space.chain_weight(c))
        .sum()
}

/// `|sum_c w(c) sum_{u in c} f(u, c-u) - sum_{u,k disjoint} w(u)w(k) f(u,k)|`.
pub fn fubini_residual<F: Fn(Chain, Chain) -> C64>(space: &PointSpace, f: F) -> f64 {
    let lhs = measure_sum(
        space,
        |c| c.subsets().map(|u| f(u, c.difference(u))).sum(),
        None,
    );
    let mut rhs = C64::new(0.0, 0.0);
    for &u in space.chains() {
        for &k in space.chains() {
            if u.is_disjoint(k) {
                rhs += f(u, k) * (space.chain_weight(u) * space.chain_weight(k));
            }
        }
    }
    (lhs - rhs).norm()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `t(x) < t`
    Before,
    /// `t(x) >= t`
    From,
}

pub fn restrict(space: &PointSpace, c: Chain, t: f64, side: Side) -> Chain {
    let b = space.before(t);
    match side {
        Side::Before => c.intersection(b),
        Side::From => c.difference(b),
    }
}

/// Smallest time in `context` strictly after `t(x)`, or `+inf`.
pub fn next_time(space: &PointSpace, x: usize, context: Chain) -> f64 {
    let tx = space.time(x);
    context
        .members()
        .map(|y| space.time(y))
        .filter(|&t| t > tx)
        .fold(f64::INFINITY, f64::min)
}
