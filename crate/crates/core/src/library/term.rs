use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pow factors sort before sin, sin before cos.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Pow,
    Sin,
    Cos,
}

/// `base(var)^exp`, where the base is the variable itself, its sine or its cosine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Factor {
    pub kind: FactorKind,
    pub var: usize,
    pub exp: u32,
}

/// Product of factors; the empty product is the constant term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermDescriptor {
    factors: Vec<Factor>,
}

impl TermDescriptor {
    pub fn constant() -> Self {
        TermDescriptor { factors: Vec::new() }
    }

    /// Product of the listed variables, repeats allowed.
    pub fn monomial(vars: &[usize]) -> Self {
        Self::from_factors(
            vars.iter()
                .map(|&var| Factor {
                    kind: FactorKind::Pow,
                    var,
                    exp: 1,
                })
                .collect(),
        )
        .expect("unit exponents are valid")
    }

    pub fn sin(var: usize) -> Self {
        TermDescriptor {
            factors: vec![Factor {
                kind: FactorKind::Sin,
                var,
                exp: 1,
            }],
        }
    }

    pub fn cos(var: usize) -> Self {
        TermDescriptor {
            factors: vec![Factor {
                kind: FactorKind::Cos,
                var,
                exp: 1,
            }],
        }
    }

    /// Canonical descriptor from arbitrary factors.
    pub fn from_factors(factors: Vec<Factor>) -> Result<Self> {
        TermDescriptor { factors }.canonical()
    }

    pub(crate) fn canonical(mut self) -> Result<Self> {
        if let Some(f) = self.factors.iter().find(|f| f.exp == 0) {
            return Err(Error::InvalidDescriptor(format!("zero exponent on variable {}", f.var)));
        }
        self.factors.sort_by_key(|f| (f.kind, f.var));
        let mut merged: Vec<Factor> = Vec::with_capacity(self.factors.len());
        for f in self.factors {
            match merged.last_mut() {
                Some(last) if last.kind == f.kind && last.var == f.var => last.exp += f.exp,
                _ => merged.push(f),
            }
        }
        Ok(TermDescriptor { factors: merged })
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn is_constant(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn product(&self, other: &TermDescriptor) -> TermDescriptor {
        let mut f = self.factors.clone();
        f.extend_from_slice(&other.factors);
        TermDescriptor::from_factors(f).expect("factors of valid terms are valid")
    }
}

/// Printable name such as `i_d^2 V_q sin(gamma_r)`; `1` for the constant.
pub fn term_name(term: &TermDescriptor, names: &[String]) -> String {
    if term.is_constant() {
        return "1".into();
    }
    let parts: Vec<String> = term
        .factors()
        .iter()
        .map(|f| {
            let base = match f.kind {
                FactorKind::Pow => names[f.var].clone(),
                FactorKind::Sin => format!("sin({})", names[f.var]),
                FactorKind::Cos => format!("cos({})", names[f.var]),
            };
            if f.exp == 1 {
                base
            } else {
                format!("{base}^{}", f.exp)
            }
        })
        .collect();
    parts.join(" ")
}

/// Inverse of [`term_name`].
pub fn parse_term(name: &str, names: &[String]) -> Result<TermDescriptor> {
    let name = name.trim();
    if name == "1" {
        return Ok(TermDescriptor::constant());
    }
    let lookup = |v: &str| {
        names
            .iter()
            .position(|n| n == v)
            .ok_or_else(|| Error::InvalidDescriptor(format!("unknown variable '{v}' in term '{name}'")))
    };
    let mut factors = Vec::new();
    for token in name.split_whitespace() {
        let (base, exp) = match token.rsplit_once('^') {
            Some((b, e)) => {
                let exp: u32 = e
                    .parse()
                    .map_err(|_| Error::InvalidDescriptor(format!("bad exponent in '{token}'")))?;
                (b, exp)
            }
            _ => (token, 1),
        };
        let (kind, var) = if let Some(inner) = base.strip_prefix("sin(").and_then(|s| s.strip_suffix(')')) {
            (FactorKind::Sin, lookup(inner)?)
        } else if let Some(inner) = base.strip_prefix("cos(").and_then(|s| s.strip_suffix(')')) {
            (FactorKind::Cos, lookup(inner)?)
        } else {
            (FactorKind::Pow, lookup(base)?)
        };
        factors.push(Factor { kind, var, exp });
    }
    if factors.is_empty() {
        return Err(Error::InvalidDescriptor("empty term name".into()));
    }
    TermDescriptor::from_factors(factors)
}
