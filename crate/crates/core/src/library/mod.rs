//! Candidate-function libraries built from symbolic term descriptors.

mod term;

use std::collections::HashSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{InputVector, StateVector, INPUT_DIM, STATE_DIM, VARIABLE_NAMES};

pub use term::{parse_term, term_name, Factor, FactorKind, TermDescriptor};

/// Index of γ_r in the concatenated `[x; u]` vector of the motor problem.
pub const GAMMA_INDEX: usize = STATE_DIM + crate::transforms::input::ANGLE;

/// Indices of z = [x; u \ γ_r].
pub fn z_indices() -> Vec<usize> {
    (0..STATE_DIM + INPUT_DIM).filter(|&i| i != GAMMA_INDEX).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryDims {
    pub state: usize,
    pub input: usize,
}

impl LibraryDims {
    pub const MOTOR: LibraryDims = LibraryDims {
        state: STATE_DIM,
        input: INPUT_DIM,
    };

    pub fn variables(&self) -> usize {
        self.state + self.input
    }

    /// Display names of the concatenated variables.
    pub fn variable_names(&self) -> Vec<String> {
        if *self == Self::MOTOR {
            VARIABLE_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.state)
                .map(|i| format!("x{}", i + 1))
                .chain((0..self.input).map(|i| format!("u{}", i + 1)))
                .collect()
        }
    }
}

/// Ordered, de-duplicated set of candidate functions Θ.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateLibrary {
    dims: LibraryDims,
    terms: Vec<TermDescriptor>,
    names: Vec<String>,
    /// Variables that appear inside sin/cos factors.
    gonio_vars: Vec<usize>,
}

/// Canonicalizes and de-duplicates `terms`, keeping first occurrences.
pub fn build_library(terms: Vec<TermDescriptor>, dims: LibraryDims) -> Result<CandidateLibrary> {
    let n = dims.variables();
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for t in terms {
        let t = t.canonical()?;
        if let Some(f) = t.factors().iter().find(|f| f.var >= n) {
            return Err(Error::InvalidDescriptor(format!(
                "variable index {} out of range for {n} variables",
                f.var
            )));
        }
        if seen.insert(t.clone()) {
            kept.push(t);
        }
    }
    if kept.is_empty() {
        return Err(Error::InvalidDescriptor("a library needs at least one term".into()));
    }
    let vnames = dims.variable_names();
    let names = kept.iter().map(|t| term_name(t, &vnames)).collect();
    let mut gonio_vars: Vec<usize> = kept
        .iter()
        .flat_map(|t| t.factors().iter())
        .filter(|f| f.kind != FactorKind::Pow)
        .map(|f| f.var)
        .collect();
    gonio_vars.sort_unstable();
    gonio_vars.dedup();
    Ok(CandidateLibrary {
        dims,
        terms: kept,
        names,
        gonio_vars,
    })
}

/// All monomials of total degree ≤ `degree` over `vars`: constant first (when
/// included), then by degree, each degree in lexicographic index order.
pub fn polynomial_terms(vars: &[usize], degree: u32, include_constant: bool) -> Vec<TermDescriptor> {
    let mut out = Vec::new();
    if include_constant {
        out.push(TermDescriptor::constant());
    }
    fn rec(vars: &[usize], start: usize, left: u32, acc: &mut Vec<usize>, out: &mut Vec<TermDescriptor>) {
        if left == 0 {
            out.push(TermDescriptor::monomial(acc));
            return;
        }
        for i in start..vars.len() {
            acc.push(vars[i]);
            rec(vars, i, left - 1, acc, out);
            acc.pop();
        }
    }
    for d in 1..=degree {
        rec(vars, 0, d, &mut Vec::new(), &mut out);
    }
    out
}

/// Pairwise products, `outer` major.
pub fn tensor_product(outer: &[TermDescriptor], inner: &[TermDescriptor]) -> Vec<TermDescriptor> {
    outer
        .iter()
        .flat_map(|a| inner.iter().map(move |b| a.product(b)))
        .collect()
}

fn gonio(var: usize) -> [TermDescriptor; 2] {
    [TermDescriptor::sin(var), TermDescriptor::cos(var)]
}

/// The five preset libraries of the motor problem.
pub fn preset_library(id: u8) -> Result<CandidateLibrary> {
    let z = z_indices();
    let trig = gonio(GAMMA_INDEX);
    let terms = match id {
        1 => {
            let mut t = polynomial_terms(&z, 2, true);
            t.extend(trig);
            t
        }
        2 => {
            let linear: Vec<usize> = (0..12).collect();
            let mut t = polynomial_terms(&linear, 1, false);
            let left: Vec<TermDescriptor> = [GAMMA_INDEX, 13, 3, 4, 5]
                .iter()
                .map(|&v| TermDescriptor::monomial(&[v]))
                .collect();
            let right: Vec<TermDescriptor> = [0, 1, 2, 6, 7, 8, 9, 10, 11]
                .iter()
                .map(|&v| TermDescriptor::monomial(&[v]))
                .collect();
            t.extend(tensor_product(&left, &right));
            t
        }
        3 => polynomial_terms(&[0, 1, 6, 7, 9, 10], 2, true),
        4 => tensor_product(&polynomial_terms(&z, 2, true), &trig),
        5 => {
            let poly: Vec<TermDescriptor> = polynomial_terms(&z, 3, true)
                .into_iter()
                .filter(|t| !(t.factors().len() == 1 && t.factors()[0].exp == 3))
                .collect();
            tensor_product(&poly, &trig)
        }
        _ => return Err(Error::invalid(format!("library id must be 1..=5, got {id}"))),
    };
    build_library(terms, LibraryDims::MOTOR)
}

impl CandidateLibrary {
    pub fn dims(&self) -> LibraryDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[TermDescriptor] {
        &self.terms
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Position of the constant term, if present.
    pub fn constant_index(&self) -> Option<usize> {
        self.terms.iter().position(|t| t.is_constant())
    }

    /// Evaluates every term at the concatenated vector `xu` and writes the
    /// values to `out`. `scratch` must hold `2 · variables` entries.
    #[inline]
    pub fn evaluate_into(&self, xu: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let n = self.dims.variables();
        let (sines, cosines) = scratch.split_at_mut(n);
        for &v in &self.gonio_vars {
            let (s, c) = xu[v].sin_cos();
            sines[v] = s;
            cosines[v] = c;
        }
        for (o, t) in out.iter_mut().zip(&self.terms) {
            let mut acc = 1.0;
            for f in t.factors() {
                let base = match f.kind {
                    FactorKind::Pow => xu[f.var],
                    FactorKind::Sin => sines[f.var],
                    FactorKind::Cos => cosines[f.var],
                };
                acc *= if f.exp == 1 { base } else { base.powi(f.exp as i32) };
            }
            *o = acc;
        }
    }

    fn check_dims(&self, m: usize, o: usize) -> Result<()> {
        if m != self.dims.state {
            return Err(Error::mismatch("state dimension", self.dims.state, m));
        }
        if o != self.dims.input {
            return Err(Error::mismatch("input dimension", self.dims.input, o));
        }
        Ok(())
    }

    /// Θ(x, u) for one state/input pair.
    pub fn evaluate(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x.len(), u.len())?;
        let xu: Vec<f64> = x.iter().chain(u).copied().collect();
        let mut scratch = vec![0.0; 2 * xu.len()];
        let mut out = vec![0.0; self.len()];
        self.evaluate_into(&xu, &mut scratch, &mut out);
        Ok(out)
    }

    pub fn evaluate_motor(&self, x: &StateVector, u: &InputVector) -> Result<Vec<f64>> {
        self.evaluate(&x.as_array(), &u.as_array())
    }

    /// Θ(X, Υ), one column per snapshot.
    pub fn evaluate_batch(&self, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dims(x.nrows(), u.nrows())?;
        if x.ncols() != u.ncols() {
            return Err(Error::mismatch("snapshot columns", x.ncols(), u.ncols()));
        }
        let h = x.ncols();
        let p = self.len();
        let mut theta = DMatrix::zeros(p, h);
        // column-major storage: each chunk of p values is one column
        theta
            .as_mut_slice()
            .par_chunks_mut(p * 256)
            .enumerate()
            .for_each(|(chunk, block)| {
                let n = self.dims.variables();
                let mut xu = vec![0.0; n];
                let mut scratch = vec![0.0; 2 * n];
                for (j, col) in block.chunks_mut(p).enumerate() {
                    let k = chunk * 256 + j;
                    for r in 0..x.nrows() {
                        xu[r] = x[(r, k)];
                    }
                    for r in 0..u.nrows() {
                        xu[x.nrows() + r] = u[(r, k)];
                    }
                    self.evaluate_into(&xu, &mut scratch, col);
                }
            });
        Ok(theta)
    }
}

/// Serialized form: dimensions plus descriptors; names are rebuilt on load.
#[derive(Serialize, Deserialize)]
struct LibraryDoc {
    dims: LibraryDims,
    terms: Vec<TermDescriptor>,
}

impl Serialize for CandidateLibrary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LibraryDoc {
            dims: self.dims,
            terms: self.terms.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CandidateLibrary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = LibraryDoc::deserialize(d)?;
        let n = doc.terms.len();
        let lib = build_library(doc.terms, doc.dims).map_err(serde::de::Error::custom)?;
        if lib.len() != n {
            return Err(serde::de::Error::custom("library contains duplicate terms"));
        }
        Ok(lib)
    }
}
