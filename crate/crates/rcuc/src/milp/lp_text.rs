//! Model export in LP text format, for cross-checking against external
//! solvers during development. A debugging aid, not a runtime dependency.

use super::{Integrality, MilpModel, Sense};

pub(crate) fn render(model: &MilpModel) -> String {
    let mut out = String::new();
    let name = |j: usize| sanitize(&model.variables[j].name, j);

    out.push_str("Minimize\n obj:");
    let mut first = true;
    for (j, &c) in model.objective.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        push_term(&mut out, c, &name(j), first);
        first = false;
    }
    if first {
        out.push_str(" 0");
    }
    out.push('\n');

    out.push_str("Subject To\n");
    for (i, row) in model.constraints.iter().enumerate() {
        out.push_str(&format!(" c{i}:"));
        let mut first = true;
        for &(j, a) in &row.coeffs {
            push_term(&mut out, a, &name(j), first);
            first = false;
        }
        if first {
            out.push_str(" 0");
        }
        let op = match row.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        out.push_str(&format!(" {op} {}\n", fmt(row.rhs)));
    }

    out.push_str("Bounds\n");
    for (j, v) in model.variables.iter().enumerate() {
        let n = name(j);
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (true, true) => out.push_str(&format!(" {} <= {n} <= {}\n", fmt(v.lower), fmt(v.upper))),
            (true, false) => out.push_str(&format!(" {n} >= {}\n", fmt(v.lower))),
            (false, true) => out.push_str(&format!(" -inf <= {n} <= {}\n", fmt(v.upper))),
            (false, false) => out.push_str(&format!(" {n} free\n")),
        }
    }

    if model.variables.iter().any(|v| v.integrality == Integrality::Binary) {
        out.push_str("Binaries\n");
        for (j, v) in model.variables.iter().enumerate() {
            if v.integrality == Integrality::Binary {
                out.push_str(&format!(" {}\n", name(j)));
            }
        }
    }
    out.push_str("End\n");
    out
}

fn push_term(out: &mut String, coef: f64, name: &str, first: bool) {
    if coef >= 0.0 && !first {
        out.push_str(&format!(" + {} {name}", fmt(coef)));
    } else if coef >= 0.0 {
        out.push_str(&format!(" {} {name}", fmt(coef)));
    } else {
        out.push_str(&format!(" - {} {name}", fmt(-coef)));
    }
}

fn fmt(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

fn sanitize(name: &str, idx: usize) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if clean.is_empty() {
        format!("v{idx}")
    } else {
        clean
    }
}
