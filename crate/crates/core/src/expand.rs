//! Symbolic expansion of gene modules into basic-derivative monomials.
//!
//! `[(0,0):1]` means `(u^2)_x`; repeatedly applying the product rule turns
//! it into `2*u*u_x`. The expansion is what the refinement stage evaluates
//! at scattered points (where finite differences are unavailable), and it
//! also witnesses when two modules are the same term in disguise.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::genome::GeneModule;

/// Names for u and its x-derivatives up to order 6.
pub const DERIVATIVE_NAMES: [&str; 7] =
    ["u", "u_x", "u_xx", "u_xxx", "u_xxxx", "u_xxxxx", "u_xxxxxx"];

/// `coef * prod_k (d^k u / dx^k)^exps[k]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Monomial {
    pub exps: [u8; 7],
    pub coef: i64,
}

impl Monomial {
    pub fn max_order(&self) -> usize {
        (0..7).rev().find(|&k| self.exps[k] > 0).unwrap_or(0)
    }

    /// Value given `derivs[k] = d^k u / dx^k`.
    pub fn evaluate(&self, derivs: &[f64; 7]) -> f64 {
        let mut v = self.coef as f64;
        for k in 0..7 {
            for _ in 0..self.exps[k] {
                v *= derivs[k];
            }
        }
        v
    }
}

/// Sum of merged monomials; the expansion of one gene module.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpandedForm {
    pub monomials: Vec<Monomial>,
}

impl ExpandedForm {
    pub fn max_order(&self) -> usize {
        self.monomials.iter().map(|m| m.max_order()).max().unwrap_or(0)
    }

    pub fn evaluate(&self, derivs: &[f64; 7]) -> f64 {
        self.monomials.iter().map(|m| m.evaluate(derivs)).sum()
    }

    /// Adds `w * d(self)/d(derivs[k])` into `out[k]` for every k.
    pub fn accumulate_gradient(&self, derivs: &[f64; 7], w: f64, out: &mut [f64; 7]) {
        for m in &self.monomials {
            for k in 0..7 {
                let e = m.exps[k];
                if e == 0 {
                    continue;
                }
                let mut partial = w * m.coef as f64 * e as f64;
                for j in 0..7 {
                    let reps = if j == k { m.exps[j] - 1 } else { m.exps[j] };
                    for _ in 0..reps {
                        partial *= derivs[j];
                    }
                }
                out[k] += partial;
            }
        }
    }
}

/// Expands a module by formal x-differentiation of its inner product.
pub fn expand(module: &GeneModule) -> ExpandedForm {
    let mut seed = Monomial { exps: [0; 7], coef: 1 };
    for gene in module.inner.genes() {
        seed.exps[gene.order()] += 1;
    }
    let mut monomials = vec![seed];
    for _ in 0..module.order() {
        let mut next = Vec::with_capacity(monomials.len() * 2);
        for m in &monomials {
            for k in 0..7 {
                let e = m.exps[k];
                if e == 0 {
                    continue;
                }
                debug_assert!(k < 6, "derivative order bound 3 + 3 violated");
                let mut d = *m;
                d.coef *= e as i64;
                d.exps[k] -= 1;
                d.exps[k + 1] += 1;
                next.push(d);
            }
        }
        monomials = merge(next);
    }
    ExpandedForm { monomials: merge(monomials) }
}

fn merge(mut monomials: Vec<Monomial>) -> Vec<Monomial> {
    // Highest powers of u first, so "2*u*u_x" prints before "u_x*u_xx".
    monomials.sort_unstable_by(|a, b| b.exps.cmp(&a.exps));
    let mut out: Vec<Monomial> = Vec::with_capacity(monomials.len());
    for m in monomials {
        match out.last_mut() {
            Some(last) if last.exps == m.exps => last.coef += m.coef,
            _ => out.push(m),
        }
    }
    out.retain(|m| m.coef != 0);
    out
}

/// Tests whether the two modules expand to proportional forms; returns the
/// reduced ratio `(num, den)` with `expand(a) = num/den * expand(b)`.
pub fn equivalent(a: &GeneModule, b: &GeneModule) -> Option<(i64, i64)> {
    let ea = expand(a);
    let eb = expand(b);
    if ea.monomials.len() != eb.monomials.len() {
        return None;
    }
    for (ma, mb) in ea.monomials.iter().zip(&eb.monomials) {
        if ma.exps != mb.exps {
            return None;
        }
    }
    let (ca, cb) = (ea.monomials[0].coef, eb.monomials[0].coef);
    for (ma, mb) in ea.monomials.iter().zip(&eb.monomials) {
        if ma.coef * cb != mb.coef * ca {
            return None;
        }
    }
    let g = gcd(ca.unsigned_abs(), cb.unsigned_abs()) as i64;
    let (mut num, mut den) = (ca / g, cb / g);
    if den < 0 {
        num = -num;
        den = -den;
    }
    Some((num, den))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coef != 1 || self.exps.iter().all(|&e| e == 0) {
            write!(f, "{}", self.coef)?;
            if self.exps.iter().any(|&e| e > 0) {
                write!(f, "*")?;
            }
        }
        let mut first = true;
        for k in 0..7 {
            for _ in 0..self.exps[k] {
                if !first {
                    write!(f, "*")?;
                }
                write!(f, "{}", DERIVATIVE_NAMES[k])?;
                first = false;
            }
        }
        Ok(())
    }
}

impl fmt::Display for ExpandedForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, m) in self.monomials.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{m}")?;
        }
        Ok(())
    }
}
