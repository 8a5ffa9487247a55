use std::fmt::Write;

use super::{LinearProgram, Sense};
use crate::scalar::Scalar;

fn term(out: &mut String, first: bool, coef: f64, name: &str) {
    if coef < 0.0 {
        let _ = write!(out, " - {:e} {}", -coef, name);
    } else if first {
        let _ = write!(out, " {:e} {}", coef, name);
    } else {
        let _ = write!(out, " + {:e} {}", coef, name);
    }
}

/// Renders the program in CPLEX LP text format.
pub fn write_lp_format<T: Scalar>(lp: &LinearProgram<T>, title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "\\ {title}");
    out.push_str("Maximize\n obj:");
    let mut first = true;
    for (j, &c) in lp.objective.iter().enumerate() {
        if c != T::zero() {
            term(&mut out, first, c.f64(), &lp.names[j]);
            first = false;
        }
    }
    if first {
        out.push_str(" 0");
    }
    out.push_str("\nSubject To\n");
    for (i, c) in lp.constraints.iter().enumerate() {
        let _ = write!(out, " c{i}:");
        let mut first = true;
        for &(j, a) in &c.coeffs {
            if a != T::zero() {
                term(&mut out, first, a.f64(), &lp.names[j]);
                first = false;
            }
        }
        if first {
            let _ = write!(out, " 0 {}", lp.names.first().map(String::as_str).unwrap_or("x0"));
        }
        let op = match c.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        let _ = writeln!(out, " {op} {:e}", c.rhs.f64());
    }
    out.push_str("Bounds\n");
    for (j, &free) in lp.free.iter().enumerate() {
        if free {
            let _ = writeln!(out, " {} free", lp.names[j]);
        }
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_sections() {
        let mut lp = LinearProgram::<f64>::new(2);
        lp.names = vec!["eps".into(), "x_1".into()];
        lp.objective[0] = 1.0;
        lp.free[0] = true;
        lp.add(vec![(0, 1.0), (1, -2.5)], Sense::Le, -1.0);
        lp.add(vec![(1, 1.0)], Sense::Eq, 1.0);
        let text = write_lp_format(&lp, "demo");
        assert!(text.starts_with("\\ demo\nMaximize\n obj: 1e0 eps\n"));
        assert!(text.contains(" c0: 1e0 eps - 2.5e0 x_1 <= -1e0\n"));
        assert!(text.contains(" c1: 1e0 x_1 = 1e0\n"));
        assert!(text.contains(" eps free\n"));
        assert!(text.ends_with("End\n"));
    }
}
