//! Flat evaluation of several expressions at once.
//!
//! Shared subexpressions (e.g. `sin(y*t)` appearing in every coefficient of a
//! model) are hash-consed into a single slot, and constant subtrees are
//! folded at compile time. Results are bit-identical to tree evaluation.

use std::collections::HashMap;

use super::{BinOp, CoefficientExpr, ExprError, Func, Node, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Instr {
    Const(u64),
    T,
    Y(usize),
    Neg(usize),
    Unary(Func, usize),
    Binary(BinOp, usize, usize),
}

/// Compiled form of a list of expressions sharing one variable set.
#[derive(Debug, Clone)]
pub struct Program {
    instrs: Vec<Instr>,
    /// Slots that are not constants, in evaluation order.
    active: Vec<usize>,
    outputs: Vec<usize>,
    dims: usize,
}

/// Scratch space for [`Program::eval`]; one per worker thread.
#[derive(Debug, Clone)]
pub struct Evaluator {
    slots: Vec<f64>,
}

struct Builder {
    instrs: Vec<Instr>,
    index: HashMap<Instr, usize>,
}

impl Builder {
    fn push(&mut self, ins: Instr) -> usize {
        if let Some(&slot) = self.index.get(&ins) {
            return slot;
        }
        let slot = self.instrs.len();
        self.instrs.push(ins);
        self.index.insert(ins, slot);
        slot
    }

    fn constant_of(&self, slot: usize) -> Option<f64> {
        match self.instrs[slot] {
            Instr::Const(bits) => Some(f64::from_bits(bits)),
            _ => None,
        }
    }

    fn lower(&mut self, node: &Node) -> usize {
        match node {
            Node::Const(c) => self.push(Instr::Const(c.to_bits())),
            Node::Var(Var::T) => self.push(Instr::T),
            Node::Var(Var::Y(i)) => self.push(Instr::Y(*i)),
            Node::Neg(a) => {
                let a = self.lower(a);
                match self.constant_of(a) {
                    Some(c) => self.push(Instr::Const((-c).to_bits())),
                    None => self.push(Instr::Neg(a)),
                }
            }
            Node::Unary(f, a) => {
                let a = self.lower(a);
                if let Some(v) = self.constant_of(a).and_then(|c| f.apply(c).ok()) {
                    return self.push(Instr::Const(v.to_bits()));
                }
                self.push(Instr::Unary(*f, a))
            }
            Node::Binary(op, a, b) => {
                let a = self.lower(a);
                let b = self.lower(b);
                if let (Some(x), Some(y)) = (self.constant_of(a), self.constant_of(b)) {
                    if let Ok(v) = op.apply(x, y) {
                        return self.push(Instr::Const(v.to_bits()));
                    }
                }
                self.push(Instr::Binary(*op, a, b))
            }
        }
    }
}

impl Program {
    /// Compiles `exprs`; all must share the same factor dimension.
    pub fn compile<'a, I>(exprs: I, dims: usize) -> Result<Program, ExprError>
    where
        I: IntoIterator<Item = &'a CoefficientExpr>,
    {
        let mut b = Builder {
            instrs: Vec::new(),
            index: HashMap::new(),
        };
        let mut outputs = Vec::new();
        for e in exprs {
            if e.dims() != dims {
                return Err(ExprError::Dimension {
                    expected: dims,
                    found: e.dims(),
                });
            }
            outputs.push(b.lower(e.root()));
        }
        let active = (0..b.instrs.len())
            .filter(|&k| !matches!(b.instrs[k], Instr::Const(_)))
            .collect();
        Ok(Program {
            active,
            instrs: b.instrs,
            outputs,
            dims,
        })
    }

    pub fn evaluator(&self) -> Evaluator {
        let slots = self
            .instrs
            .iter()
            .map(|ins| match *ins {
                Instr::Const(bits) => f64::from_bits(bits),
                _ => 0.0,
            })
            .collect();
        Evaluator { slots }
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn n_instructions(&self) -> usize {
        self.instrs.len()
    }

    /// Evaluates every compiled expression at `(t, y)`; read results with
    /// [`Program::output`].
    pub fn eval(&self, ev: &mut Evaluator, t: f64, y: &[f64]) -> Result<(), ExprError> {
        debug_assert_eq!(y.len(), self.dims);
        let slots = &mut ev.slots;
        for &k in &self.active {
            let v = match self.instrs[k] {
                Instr::Const(bits) => f64::from_bits(bits),
                Instr::T => t,
                Instr::Y(i) => y[i],
                Instr::Neg(a) => -slots[a],
                Instr::Unary(f, a) => f.raw(slots[a]),
                Instr::Binary(op, a, b) => op.raw(slots[a], slots[b]),
            };
            if !v.is_finite() {
                return Err(self.diagnose(slots, k));
            }
            slots[k] = v;
        }
        Ok(())
    }

    /// Reruns the failing instruction through the checked path for its message.
    #[cold]
    fn diagnose(&self, slots: &[f64], k: usize) -> ExprError {
        let checked = match self.instrs[k] {
            Instr::Unary(f, a) => f.apply(slots[a]),
            Instr::Binary(op, a, b) => op.apply(slots[a], slots[b]),
            _ => Ok(f64::NAN),
        };
        match checked {
            Err(e) => e,
            Ok(_) => ExprError::Domain("non-finite intermediate result".into()),
        }
    }

    #[inline]
    pub fn output(&self, ev: &Evaluator, k: usize) -> f64 {
        ev.slots[self.outputs[k]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shares_common_subexpressions() {
        let dims = 1;
        let exprs: Vec<_> = [
            "0.01*(1+0.5*sin(y*t))",
            "0.02*(1+0.5*sin(y*t))",
            "0.5+sin(y*t)^2",
            "0.1*sin(y*t)",
        ]
        .iter()
        .map(|s| CoefficientExpr::parse(s, dims).unwrap())
        .collect();
        let prog = Program::compile(&exprs, dims).unwrap();
        let sin_count = prog
            .instrs
            .iter()
            .filter(|i| matches!(i, Instr::Unary(Func::Sin, _)))
            .count();
        assert_eq!(sin_count, 1);
        let mut ev = prog.evaluator();
        for (t, y) in [(0.0, 0.0), (0.4, -3.3), (1.0, 5.9)] {
            prog.eval(&mut ev, t, &[y]).unwrap();
            for (k, e) in exprs.iter().enumerate() {
                assert_eq!(
                    prog.output(&ev, k).to_bits(),
                    e.evaluate(t, &[y]).unwrap().to_bits()
                );
            }
        }
    }

    #[test]
    fn constant_folding() {
        let e = CoefficientExpr::parse("2*3+y", 1).unwrap();
        let prog = Program::compile([&e], 1).unwrap();
        assert!(prog
            .instrs
            .contains(&Instr::Const(6f64.to_bits())));
    }

    #[test]
    fn propagates_domain_errors() {
        let e = CoefficientExpr::parse("log(y)", 1).unwrap();
        let prog = Program::compile([&e], 1).unwrap();
        let mut ev = prog.evaluator();
        assert!(prog.eval(&mut ev, 0.0, &[-1.0]).is_err());
        assert!(prog.eval(&mut ev, 0.0, &[1.0]).is_ok());
    }
}
