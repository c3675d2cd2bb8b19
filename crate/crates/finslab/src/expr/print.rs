//! Grammar-conforming printer. `parse(print(e))` rebuilds `e` exactly, so
//! one print/parse round trip is a fixed point.

use super::{with_store, Expr, Node, Store};
use std::fmt;

// Precedence levels of the grammar: sum < term < factor < base.
const P_SUM: u8 = 0;
const P_TERM: u8 = 1;
const P_FACTOR: u8 = 2;
const P_BASE: u8 = 3;

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        with_store(|s| {
            let mut out = String::new();
            write_expr(s, *self, P_SUM, &mut out);
            f.write_str(&out)
        })
    }
}

fn write_const(v: f64, out: &mut String) {
    if v < 0.0 || v.is_sign_negative() {
        out.push('(');
        out.push('-');
        write_const(-v, out);
        out.push(')');
    } else if v == v.trunc() && v.abs() < 1e15 {
        out.push_str(&format!("{}", v as i64));
    } else {
        out.push_str(&format!("{v}"));
    }
}

fn write_expr(s: &Store, e: Expr, min_prec: u8, out: &mut String) {
    let (text_prec, node) = (prec(s, e), s.node(e));
    let parens = text_prec < min_prec;
    if parens {
        out.push('(');
    }
    match node {
        Node::Const(bits) => write_const(f64::from_bits(bits), out),
        Node::Var(v) => out.push_str(&v.to_string()),
        Node::Neg(a) => {
            out.push('-');
            // the grammar's unary minus applies to base("^"exp)?; anything
            // looser needs parens
            write_expr(s, a, P_FACTOR, out);
        }
        Node::Add(a, b) => {
            write_expr(s, a, P_SUM, out);
            out.push_str(" + ");
            write_expr(s, b, P_TERM, out);
        }
        Node::Sub(a, b) => {
            write_expr(s, a, P_SUM, out);
            out.push_str(" - ");
            write_expr(s, b, P_TERM, out);
        }
        Node::Mul(a, b) => {
            write_expr(s, a, P_TERM, out);
            out.push('*');
            write_expr(s, b, P_FACTOR, out);
        }
        Node::Div(a, b) => {
            write_expr(s, a, P_TERM, out);
            out.push('/');
            write_expr(s, b, P_FACTOR, out);
        }
        Node::Pow(a, r) => {
            write_expr(s, a, P_BASE, out);
            out.push('^');
            let (n, d) = (*r.numer(), *r.denom());
            if d == 1 && n >= 0 {
                out.push_str(&format!("{n}"));
            } else if d == 1 {
                out.push_str(&format!("({n})"));
            } else {
                out.push_str(&format!("({n}/{d})"));
            }
        }
        Node::Sqrt(a) => write_func(s, "sqrt", a, out),
        Node::Sin(a) => write_func(s, "sin", a, out),
        Node::Cos(a) => write_func(s, "cos", a, out),
        Node::Exp(a) => write_func(s, "exp", a, out),
        Node::Log(a) => write_func(s, "log", a, out),
    }
    if parens {
        out.push(')');
    }
}

fn write_func(s: &Store, name: &str, a: Expr, out: &mut String) {
    out.push_str(name);
    out.push('(');
    write_expr(s, a, P_SUM, out);
    out.push(')');
}

fn prec(s: &Store, e: Expr) -> u8 {
    match s.node(e) {
        Node::Add(..) | Node::Sub(..) => P_SUM,
        Node::Mul(..) | Node::Div(..) => P_TERM,
        Node::Neg(_) => P_FACTOR,
        Node::Pow(..) => P_FACTOR,
        Node::Const(bits) if f64::from_bits(bits) < 0.0 => P_BASE, // printed with parens
        _ => P_BASE,
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_expr;

    fn round_trips(text: &str, dim: usize) {
        let e = parse_expr(text, dim).unwrap();
        let printed = e.to_string();
        let e2 = parse_expr(&printed, dim).unwrap();
        assert_eq!(e, e2, "reparse of `{printed}` differs");
        assert_eq!(printed, e2.to_string(), "print not a fixed point for `{printed}`");
    }

    #[test]
    fn print_parse_fixed_point() {
        for t in [
            "x2*y1^2",
            "sqrt(x2*x3*y1^2 + y2^2 + y3^2 + y4^2)",
            "-x1^2 + (x1 - x2)/(x1 + 1)",
            "(x1*y2)^(1/4) - y1^(-2)",
            "sin(x1)*cos(x2) + exp(y1) - log(x1 + 2)",
            "1/2*x1 - 0.25*y2",
            "-(x1 + y1)^3",
        ] {
            round_trips(t, 4);
        }
    }

    #[test]
    fn derivative_printing_round_trips() {
        let f = parse_expr("sqrt(x2*x3*y1^2 + y2^2)", 3).unwrap();
        let d = f.differentiate(crate::expr::Var::y(0));
        round_trips(&d.to_string(), 3);
    }
}
