//! Affine expressions over function parameters.
//!
//! Used for loop bounds, induction initial values, and symbolic memory
//! addresses. Coefficients index scalar parameters of the enclosing
//! function, so equality of two `AffineExpr`s is equality of closed forms.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct AffineExpr {
    pub constant: i64,
    /// param index -> coefficient; zero coefficients are never stored.
    pub coeffs: BTreeMap<usize, i64>,
}

impl AffineExpr {
    pub fn constant(c: i64) -> AffineExpr {
        AffineExpr {
            constant: c,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn param(idx: usize) -> AffineExpr {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(idx, 1);
        AffineExpr {
            constant: 0,
            coeffs,
        }
    }

    pub fn is_const(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn as_const(&self) -> Option<i64> {
        self.is_const().then_some(self.constant)
    }

    pub fn add(&self, other: &AffineExpr) -> AffineExpr {
        let mut out = self.clone();
        out.constant = out.constant.wrapping_add(other.constant);
        for (k, v) in &other.coeffs {
            let c = out.coeffs.entry(*k).or_insert(0);
            *c = c.wrapping_add(*v);
            if *c == 0 {
                out.coeffs.remove(k);
            }
        }
        out
    }

    pub fn neg(&self) -> AffineExpr {
        let mut out = self.clone();
        out.constant = out.constant.wrapping_neg();
        for v in out.coeffs.values_mut() {
            *v = v.wrapping_neg();
        }
        out
    }

    pub fn sub(&self, other: &AffineExpr) -> AffineExpr {
        self.add(&other.neg())
    }

    pub fn mul_const(&self, k: i64) -> AffineExpr {
        if k == 0 {
            return AffineExpr::constant(0);
        }
        let mut out = self.clone();
        out.constant = out.constant.wrapping_mul(k);
        for v in out.coeffs.values_mut() {
            *v = v.wrapping_mul(k);
        }
        out
    }

    pub fn offset(&self, c: i64) -> AffineExpr {
        let mut out = self.clone();
        out.constant = out.constant.wrapping_add(c);
        out
    }

    /// Evaluate with concrete parameter values.
    pub fn eval(&self, param_value: impl Fn(usize) -> Option<i64>) -> Option<i64> {
        let mut acc = self.constant;
        for (p, c) in &self.coeffs {
            acc = acc.wrapping_add(param_value(*p)?.wrapping_mul(*c));
        }
        Some(acc)
    }

    /// Render with parameter names supplied by the caller.
    pub fn display<'a>(&'a self, names: &'a [String]) -> impl fmt::Display + 'a {
        AffineDisplay { expr: self, names }
    }
}

struct AffineDisplay<'a> {
    expr: &'a AffineExpr,
    names: &'a [String],
}

impl fmt::Display for AffineDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (p, c) in &self.expr.coeffs {
            let name = self
                .names
                .get(*p)
                .map(String::as_str)
                .unwrap_or("<param>");
            if first {
                match *c {
                    1 => write!(f, "{name}")?,
                    -1 => write!(f, "-{name}")?,
                    c => write!(f, "{c}*{name}")?,
                }
                first = false;
            } else if *c >= 0 {
                if *c == 1 {
                    write!(f, " + {name}")?;
                } else {
                    write!(f, " + {c}*{name}")?;
                }
            } else if *c == -1 {
                write!(f, " - {name}")?;
            } else {
                write!(f, " - {}*{name}", -c)?;
            }
        }
        if first {
            write!(f, "{}", self.expr.constant)?;
        } else if self.expr.constant > 0 {
            write!(f, " + {}", self.expr.constant)?;
        } else if self.expr.constant < 0 {
            write!(f, " - {}", -self.expr.constant)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_equality() {
        let a = AffineExpr::param(0).mul_const(2).offset(3);
        let b = AffineExpr::param(0).add(&AffineExpr::param(0)).offset(3);
        assert_eq!(a, b);
        assert_eq!(a.sub(&b), AffineExpr::constant(0));
        assert_eq!(a.eval(|_| Some(5)), Some(13));
    }

    #[test]
    fn display_reads_naturally() {
        let names = vec!["LENGTH".to_string()];
        let e = AffineExpr::param(0).mul_const(2).offset(-1);
        assert_eq!(format!("{}", e.display(&names)), "2*LENGTH - 1");
        assert_eq!(format!("{}", AffineExpr::constant(0).display(&names)), "0");
    }
}
