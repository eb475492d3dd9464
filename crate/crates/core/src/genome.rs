//! Candidate PDE terms in compound form.
//!
//! A candidate right-hand side is a set of gene modules. Each module is an
//! inner product of basic derivatives (orders 0..=3, i.e. u through u_xxx)
//! differentiated `order` more times, so `[(0,0):1]` reads `(u^2)_x`.
//! Genomes are kept canonical (genes sorted, modules sorted, duplicates
//! merged) so that equal candidates compare equal and can key caches.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::rng::Rng;

/// Highest derivative order a basic gene or outer order can take.
pub const MAX_GENE_ORDER: u8 = 3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GenomeError {
    #[error("gene order {0} is out of range 0..=3")]
    OrderRange(u8),
    #[error("inner term needs at least one gene")]
    EmptyInner,
    #[error("genome needs at least one module")]
    EmptyGenome,
    #[error("genome text invalid at byte {pos}: {what}")]
    Parse { pos: usize, what: &'static str },
}

/// One basic derivative factor: order k means d^k u / dx^k.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct BasicGene(u8);

impl BasicGene {
    pub fn new(order: u8) -> Result<Self, GenomeError> {
        if order > MAX_GENE_ORDER {
            return Err(GenomeError::OrderRange(order));
        }
        Ok(BasicGene(order))
    }

    #[inline]
    pub fn order(self) -> usize {
        self.0 as usize
    }

    /// Decrement-with-wrap mutation rule: 0 becomes 3.
    pub fn mutated(self) -> Self {
        BasicGene((self.0 + MAX_GENE_ORDER) % (MAX_GENE_ORDER + 1))
    }
}

/// Product of basic genes, stored sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct InnerTerm {
    genes: Vec<BasicGene>,
}

impl InnerTerm {
    pub fn new(mut genes: Vec<BasicGene>) -> Result<Self, GenomeError> {
        if genes.is_empty() {
            return Err(GenomeError::EmptyInner);
        }
        genes.sort_unstable();
        Ok(InnerTerm { genes })
    }

    pub fn genes(&self) -> &[BasicGene] {
        &self.genes
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_order(&self) -> usize {
        self.genes.iter().map(|g| g.order()).max().unwrap_or(0)
    }
}

/// An inner term differentiated `order` more times.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GeneModule {
    pub inner: InnerTerm,
    order: u8,
}

impl GeneModule {
    pub fn new(inner: InnerTerm, order: u8) -> Result<Self, GenomeError> {
        if order > MAX_GENE_ORDER {
            return Err(GenomeError::OrderRange(order));
        }
        Ok(GeneModule { inner, order })
    }

    /// Convenience constructor from raw gene orders.
    pub fn from_orders(genes: &[u8], order: u8) -> Result<Self, GenomeError> {
        let genes = genes.iter().map(|&g| BasicGene::new(g)).collect::<Result<Vec<_>, _>>()?;
        GeneModule::new(InnerTerm::new(genes)?, order)
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order as usize
    }

    /// Module length L(GM): the number of inner genes.
    pub fn length(&self) -> usize {
        self.inner.len()
    }

    /// Highest derivative order its expansion can mention
    /// (max inner order + outer order, at most 6).
    pub fn max_derivative_order(&self) -> usize {
        self.inner.max_order() + self.order()
    }
}

/// Per-type firing probabilities for [`Genome::mutate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MutationRates {
    pub delete: f64,
    pub basic: f64,
    pub order: f64,
    pub add: f64,
}

impl Default for MutationRates {
    fn default() -> Self {
        MutationRates { delete: 0.5, basic: 0.3, order: 0.3, add: 0.4 }
    }
}

impl MutationRates {
    pub const ZERO: MutationRates =
        MutationRates { delete: 0.0, basic: 0.0, order: 0.0, add: 0.0 };
}

/// Canonical set of gene modules: one candidate PDE right-hand side.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Genome {
    modules: Vec<GeneModule>,
}

impl Genome {
    /// Canonicalizes: sorts modules and merges duplicates. Inner terms are
    /// already sorted by construction.
    pub fn new(mut modules: Vec<GeneModule>) -> Result<Self, GenomeError> {
        if modules.is_empty() {
            return Err(GenomeError::EmptyGenome);
        }
        modules.sort_unstable();
        modules.dedup();
        Ok(Genome { modules })
    }

    pub fn modules(&self) -> &[GeneModule] {
        &self.modules
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Sum of module lengths, the quantity the fitness penalty weights.
    pub fn total_length(&self) -> usize {
        self.modules.iter().map(|m| m.length()).sum()
    }

    /// Uniformly random genome: 1..=max_modules modules of 1..=max_inner
    /// genes each, genes uniform and outer orders uniform on 0..=order_cap,
    /// then canonicalized. A cap of 0 restricts the search to simple forms.
    pub fn random(rng: &mut Rng, max_modules: usize, max_inner: usize, order_cap: u8) -> Genome {
        debug_assert!(max_modules >= 1 && max_inner >= 1 && order_cap <= MAX_GENE_ORDER);
        let count = 1 + rng.below(max_modules);
        let modules = (0..count).map(|_| random_module(rng, max_inner, order_cap)).collect();
        Genome::new(modules).expect("count >= 1")
    }

    /// Exchanges random module subsets between two parents with the given
    /// probability; otherwise the children are plain copies. A parent with
    /// a single module trades that module whole. Children are canonical
    /// and never empty (the incoming subset is never empty).
    pub fn crossover(&self, other: &Genome, rate: f64, rng: &mut Rng) -> (Genome, Genome) {
        if !rng.chance(rate) {
            return (self.clone(), other.clone());
        }
        let mask_a = exchange_mask(self.modules.len(), rng);
        let mask_b = exchange_mask(other.modules.len(), rng);
        let mut child_a = Vec::new();
        let mut child_b = Vec::new();
        for (m, &moved) in self.modules.iter().zip(&mask_a) {
            if moved { &mut child_b } else { &mut child_a }.push(m.clone());
        }
        for (m, &moved) in other.modules.iter().zip(&mask_b) {
            if moved { &mut child_a } else { &mut child_b }.push(m.clone());
        }
        (
            Genome::new(child_a).expect("received subset is non-empty"),
            Genome::new(child_b).expect("received subset is non-empty"),
        )
    }

    /// Applies the four mutation types, each firing independently with its
    /// rate: delete one module (skipped when only one remains), decrement
    /// one basic gene with wrap, decrement one module's outer order with
    /// wrap inside 0..=order_cap, append a fresh random module of 1..=2
    /// genes drawn under the same cap.
    pub fn mutate(&self, rates: &MutationRates, order_cap: u8, rng: &mut Rng) -> Genome {
        debug_assert!(order_cap <= MAX_GENE_ORDER);
        let mut modules = self.modules.clone();
        if rng.chance(rates.delete) && modules.len() > 1 {
            let i = rng.below(modules.len());
            modules.remove(i);
        }
        if rng.chance(rates.basic) {
            let i = rng.below(modules.len());
            let m = &modules[i];
            let j = rng.below(m.inner.len());
            let mut genes = m.inner.genes.clone();
            genes[j] = genes[j].mutated();
            modules[i] = GeneModule::new(
                InnerTerm::new(genes).expect("gene count unchanged"),
                m.order,
            )
            .expect("order unchanged");
        }
        if rng.chance(rates.order) {
            let i = rng.below(modules.len());
            let m = &modules[i];
            let order = (m.order.min(order_cap) + order_cap) % (order_cap + 1);
            modules[i] = GeneModule::new(m.inner.clone(), order).expect("order in range");
        }
        if rng.chance(rates.add) {
            modules.push(random_module(rng, 2, order_cap));
        }
        Genome::new(modules).expect("delete keeps one module")
    }
}

/// Uniformly random module with 1..=max_inner genes and outer order drawn
/// uniformly on 0..=order_cap.
pub fn random_module(rng: &mut Rng, max_inner: usize, order_cap: u8) -> GeneModule {
    let len = 1 + rng.below(max_inner);
    let genes: Vec<BasicGene> = (0..len)
        .map(|_| BasicGene::new(rng.below(4) as u8).expect("below(4) in range"))
        .collect();
    let order = rng.below(order_cap as usize + 1) as u8;
    GeneModule::new(InnerTerm::new(genes).expect("len >= 1"), order).expect("in range")
}

/// Uniform non-empty subset mask, proper whenever len > 1, by rejection.
fn exchange_mask(len: usize, rng: &mut Rng) -> Vec<bool> {
    if len == 1 {
        return vec![true];
    }
    loop {
        let mask: Vec<bool> = (0..len).map(|_| rng.chance(0.5)).collect();
        let moved = mask.iter().filter(|&&b| b).count();
        if moved > 0 && moved < len {
            return mask;
        }
    }
}

impl fmt::Display for BasicGene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for InnerTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, g) in self.genes.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{g}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for GeneModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}:{}]", self.inner, self.order)
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, m) in self.modules.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, "}}")
    }
}

impl core::str::FromStr for Genome {
    type Err = GenomeError;

    /// Parses the `{[(0,1):0],[(0):3]}` syntax; spaces between tokens are
    /// tolerated. The result is canonical, so printing inverts parsing
    /// exactly on canonical text.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = Parser { bytes: s.as_bytes(), pos: 0 };
        p.expect(b'{')?;
        let mut modules = vec![p.module()?];
        while p.peek() == Some(b',') {
            p.pos += 1;
            modules.push(p.module()?);
        }
        p.expect(b'}')?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(GenomeError::Parse { pos: p.pos, what: "trailing characters" });
        }
        Genome::new(modules)
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.bytes.get(self.pos) == Some(&b' ') {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, b: u8) -> Result<(), GenomeError> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(GenomeError::Parse { pos: self.pos, what: expect_name(b) })
        }
    }

    fn digit(&mut self) -> Result<u8, GenomeError> {
        match self.peek() {
            Some(c @ b'0'..=b'3') => {
                self.pos += 1;
                Ok(c - b'0')
            }
            Some(b'4'..=b'9') => {
                Err(GenomeError::Parse { pos: self.pos, what: "order above 3" })
            }
            _ => Err(GenomeError::Parse { pos: self.pos, what: "expected digit 0-3" }),
        }
    }

    fn module(&mut self) -> Result<GeneModule, GenomeError> {
        self.expect(b'[')?;
        self.expect(b'(')?;
        let mut genes = vec![BasicGene::new(self.digit()?)?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            genes.push(BasicGene::new(self.digit()?)?);
        }
        self.expect(b')')?;
        self.expect(b':')?;
        let order = self.digit()?;
        self.expect(b']')?;
        GeneModule::new(InnerTerm::new(genes)?, order)
    }
}

fn expect_name(b: u8) -> &'static str {
    match b {
        b'{' => "expected '{'",
        b'}' => "expected '}' or ','",
        b'[' => "expected '['",
        b']' => "expected ']'",
        b'(' => "expected '('",
        b')' => "expected ')' or ','",
        b':' => "expected ':'",
        _ => "unexpected character",
    }
}
