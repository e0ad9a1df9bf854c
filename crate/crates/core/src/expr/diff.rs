//! Symbolic differentiation with light constant folding.

use super::{BinOp, Func, Node, Var};

fn is_const(n: &Node, v: f64) -> bool {
    matches!(n, Node::Const(c) if *c == v)
}

fn constant(n: &Node) -> Option<f64> {
    match n {
        Node::Const(c) => Some(*c),
        _ => None,
    }
}

fn fold(op: BinOp, a: &Node, b: &Node) -> Option<Node> {
    let (x, y) = (constant(a)?, constant(b)?);
    op.apply(x, y).ok().map(Node::Const)
}

pub(super) fn add(a: Node, b: Node) -> Node {
    if let Some(n) = fold(BinOp::Add, &a, &b) {
        return n;
    }
    if is_const(&a, 0.0) {
        return b;
    }
    if is_const(&b, 0.0) {
        return a;
    }
    Node::Binary(BinOp::Add, Box::new(a), Box::new(b))
}

pub(super) fn sub(a: Node, b: Node) -> Node {
    if let Some(n) = fold(BinOp::Sub, &a, &b) {
        return n;
    }
    if is_const(&b, 0.0) {
        return a;
    }
    if is_const(&a, 0.0) {
        return neg(b);
    }
    Node::Binary(BinOp::Sub, Box::new(a), Box::new(b))
}

pub(super) fn mul(a: Node, b: Node) -> Node {
    if let Some(n) = fold(BinOp::Mul, &a, &b) {
        return n;
    }
    if is_const(&a, 0.0) || is_const(&b, 0.0) {
        return Node::Const(0.0);
    }
    if is_const(&a, 1.0) {
        return b;
    }
    if is_const(&b, 1.0) {
        return a;
    }
    Node::Binary(BinOp::Mul, Box::new(a), Box::new(b))
}

pub(super) fn div(a: Node, b: Node) -> Node {
    if let Some(n) = fold(BinOp::Div, &a, &b) {
        return n;
    }
    if is_const(&a, 0.0) {
        return Node::Const(0.0);
    }
    if is_const(&b, 1.0) {
        return a;
    }
    Node::Binary(BinOp::Div, Box::new(a), Box::new(b))
}

fn pow(a: Node, b: Node) -> Node {
    if let Some(n) = fold(BinOp::Pow, &a, &b) {
        return n;
    }
    if is_const(&b, 1.0) {
        return a;
    }
    if is_const(&b, 0.0) {
        return Node::Const(1.0);
    }
    Node::Binary(BinOp::Pow, Box::new(a), Box::new(b))
}

pub(super) fn neg(a: Node) -> Node {
    match a {
        Node::Const(c) => Node::Const(-c),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

fn unary(f: Func, a: Node) -> Node {
    if let Some(c) = constant(&a) {
        if let Ok(v) = f.apply(c) {
            return Node::Const(v);
        }
    }
    Node::Unary(f, Box::new(a))
}

pub(super) fn derivative(node: &Node, var: Var) -> Node {
    if !node.depends_on(var) {
        return Node::Const(0.0);
    }
    match node {
        Node::Const(_) => Node::Const(0.0),
        Node::Var(v) => Node::Const(if *v == var { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(derivative(a, var)),
        Node::Unary(f, a) => {
            let u = (**a).clone();
            let du = derivative(a, var);
            let outer = match f {
                Func::Sin => unary(Func::Cos, u),
                Func::Cos => neg(unary(Func::Sin, u)),
                Func::Exp => unary(Func::Exp, u),
                Func::Log => return div(du, u),
                Func::Sqrt => return div(du, mul(Node::Const(2.0), unary(Func::Sqrt, u))),
                // sign(u) written as u/|u|; undefined at the kink.
                Func::Abs => div(u.clone(), unary(Func::Abs, u)),
                Func::Tanh => sub(
                    Node::Const(1.0),
                    pow(unary(Func::Tanh, u), Node::Const(2.0)),
                ),
            };
            mul(outer, du)
        }
        Node::Binary(op, a, b) => {
            let (u, v) = ((**a).clone(), (**b).clone());
            let (du, dv) = (derivative(a, var), derivative(b, var));
            match op {
                BinOp::Add => add(du, dv),
                BinOp::Sub => sub(du, dv),
                BinOp::Mul => add(mul(du, v), mul(u, dv)),
                BinOp::Div => div(
                    sub(mul(du, v.clone()), mul(u, dv)),
                    pow(v, Node::Const(2.0)),
                ),
                BinOp::Pow => {
                    if !b.depends_on(var) {
                        // d(u^c) = c u^(c-1) u'
                        let reduced = sub(v.clone(), Node::Const(1.0));
                        mul(mul(v, pow(u, reduced)), du)
                    } else {
                        // d(u^v) = u^v (v' ln u + v u'/u)
                        let whole = pow(u.clone(), v.clone());
                        let inner = add(
                            mul(dv, unary(Func::Log, u.clone())),
                            div(mul(v, du), u),
                        );
                        mul(whole, inner)
                    }
                }
                BinOp::Min | BinOp::Max => {
                    // min(u,v) = (u+v-|u-v|)/2, max(u,v) = (u+v+|u-v|)/2.
                    let gap = sub(u.clone(), v.clone());
                    let sign = div(gap.clone(), unary(Func::Abs, gap));
                    let kink = mul(sign, sub(du.clone(), dv.clone()));
                    let sum = add(du, dv);
                    let total = if *op == BinOp::Min {
                        sub(sum, kink)
                    } else {
                        add(sum, kink)
                    };
                    div(total, Node::Const(2.0))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::{CoefficientExpr, Var};

    fn central(e: &CoefficientExpr, var: Var, t: f64, y: f64) -> f64 {
        let h = 1e-5;
        let (tp, tm, yp, ym) = match var {
            Var::T => (t + h, t - h, y, y),
            Var::Y(_) => (t, t, y + h, y - h),
        };
        (e.evaluate(tp, &[yp]).unwrap() - e.evaluate(tm, &[ym]).unwrap()) / (2.0 * h)
    }

    #[test]
    fn chain_rule_sin() {
        let e = CoefficientExpr::parse("sin(y*t)", 1).unwrap();
        let d = e.differentiate(Var::Y(0));
        let manual = CoefficientExpr::parse("cos(y*t)*t", 1).unwrap();
        for (t, y) in [(0.3, 1.2), (1.0, -2.0), (0.0, 5.0)] {
            let a = d.evaluate(t, &[y]).unwrap();
            let b = manual.evaluate(t, &[y]).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_derivative_is_zero() {
        let e = CoefficientExpr::parse("0.5", 1).unwrap();
        assert!(e.differentiate(Var::T).is_constant());
        assert_eq!(e.differentiate(Var::T).evaluate(0.0, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn square_at_three() {
        let e = CoefficientExpr::parse("y^2", 1).unwrap();
        let d = e.differentiate(Var::Y(0));
        assert_eq!(d.evaluate(0.0, &[3.0]).unwrap(), 6.0);
        let fd = central(&e, Var::Y(0), 0.0, 3.0);
        assert!((fd - 6.0).abs() < 1e-8);
    }

    #[test]
    fn all_rules_match_finite_differences() {
        let sources = [
            "exp(0.3*y)*log(2+t)",
            "sqrt(1+y^2)/(t+2)",
            "tanh(y-t)",
            "abs(y-0.1)*cos(t)",
            "(1+t)^(0.5*y)",
            "min(y, t) + max(y^2, 0.3)",
            "-y/(1+t^2)",
            "2^y - y^-2",
        ];
        for src in sources {
            let e = CoefficientExpr::parse(src, 1).unwrap();
            for var in [Var::T, Var::Y(0)] {
                let d = e.differentiate(var);
                for (t, y) in [(0.37, 1.41), (0.81, 2.3), (0.05, 0.77)] {
                    let exact = d.evaluate(t, &[y]).unwrap();
                    let fd = central(&e, var, t, y);
                    assert!(
                        (exact - fd).abs() <= 1e-6 * (1.0 + exact.abs()),
                        "{src} d/{var} at ({t},{y}): {exact} vs {fd}"
                    );
                }
            }
        }
    }
}
