//! Expression mini-language for `Expr` submodels.
//!
//! ```text
//! list   := '[' ( expr ( ',' expr )* ','? )? ']'
//! expr   := term ( ('+' | '-') term )*
//! term   := unary ( ('*' | '/') unary )*
//! unary  := ('-' | '+') unary | power
//! power  := atom ( '^' unary )?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `exp log sqrt tanh abs min max pow`. Programs are evaluated in
//! forward mode with one derivative lane per input variable.

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExprError {
    #[error("expression parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Tanh,
    Abs,
    Min,
    Max,
    Pow,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max | Func::Pow => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Parsed expression with names still symbolic.
#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Num(f64),
    Ident(String),
    Neg(Box<Ast>),
    Bin(BinOp, Box<Ast>, Box<Ast>),
    Call(Func, Vec<Ast>),
}

/// Expression with variables resolved to input lanes.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())) {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| ExprError::Parse {
                offset: start,
                message: format!("bad number `{text}`"),
            })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if "+-*/^(),[]".contains(c) {
            out.push((i, Tok::Sym(c)));
            i += 1;
        } else {
            return Err(ExprError::Parse { offset: i, message: format!("unexpected character `{c}`") });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Parse { offset: self.offset(), message: message.into() })
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn list(&mut self) -> Result<Vec<Ast>, ExprError> {
        self.expect('[')?;
        let mut items = Vec::new();
        while !self.eat(']') {
            items.push(self.expr()?);
            if !self.eat(',') {
                self.expect(']')?;
                break;
            }
        }
        if self.pos != self.toks.len() {
            return self.err("trailing input after list");
        }
        Ok(items)
    }

    fn expr(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Ast, ExprError> {
        if self.eat('-') {
            return Ok(Ast::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Ast::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Ast, ExprError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Ast::Num(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.eat('(') {
                    let func = match Func::from_name(&name) {
                        Some(f) => f,
                        None => return self.err(format!("unknown function `{name}`")),
                    };
                    let mut args = vec![self.expr()?];
                    while self.eat(',') {
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    if args.len() != func.arity() {
                        return self.err(format!("`{name}` takes {} argument(s)", func.arity()));
                    }
                    Ok(Ast::Call(func, args))
                } else {
                    Ok(Ast::Ident(name))
                }
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            _ => self.err("expected a number, name or `(`"),
        }
    }
}

/// Parses a bracketed list of expressions.
pub fn parse_list(src: &str) -> Result<Vec<Ast>, ExprError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, end: src.len() };
    p.list()
}

impl Ast {
    pub fn resolve(&self, lookup: &dyn Fn(&str) -> Option<usize>) -> Result<Expr, ExprError> {
        Ok(match self {
            Ast::Num(v) => Expr::Num(*v),
            Ast::Ident(name) => Expr::Var(lookup(name).ok_or_else(|| ExprError::UnboundVariable(name.clone()))?),
            Ast::Neg(a) => Expr::Neg(Box::new(a.resolve(lookup)?)),
            Ast::Bin(op, a, b) => Expr::Bin(*op, Box::new(a.resolve(lookup)?), Box::new(b.resolve(lookup)?)),
            Ast::Call(f, args) => Expr::Call(*f, args.iter().map(|a| a.resolve(lookup)).collect::<Result<_, _>>()?),
        })
    }
}

/// Value with its gradient over all input lanes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: Vec<f64>,
}

impl Dual {
    fn constant(v: f64, n: usize) -> Self {
        Self { v, d: vec![0.0; n] }
    }

    fn var(v: f64, lane: usize, n: usize) -> Self {
        let mut d = vec![0.0; n];
        d[lane] = 1.0;
        Self { v, d }
    }

    fn is_constant(&self) -> bool {
        self.d.iter().all(|&g| g == 0.0)
    }

    /// Chain rule through a scalar function with derivative `dfdv`.
    fn chain(self, v: f64, dfdv: f64) -> Self {
        Self { v, d: self.d.into_iter().map(|g| g * dfdv).collect() }
    }

    fn combine(a: &Dual, b: &Dual, v: f64, da: f64, db: f64) -> Self {
        Self { v, d: a.d.iter().zip(&b.d).map(|(x, y)| da * x + db * y).collect() }
    }
}

fn domain(op: &'static str, detail: String) -> ExprError {
    ExprError::Domain { op, detail }
}

fn pow(a: Dual, b: Dual) -> Result<Dual, ExprError> {
    if b.is_constant() {
        let e = b.v;
        if a.v == 0.0 {
            if e < 1.0 && e != 0.0 {
                return Err(domain("^", format!("0^{e} has no finite derivative")));
            }
            let v = 0f64.powf(e);
            let dv = if e == 0.0 { 0.0 } else if e == 1.0 { 1.0 } else { 0.0 };
            return Ok(a.chain(v, dv));
        }
        if a.v < 0.0 && e.fract() != 0.0 {
            return Err(domain("^", format!("negative base {} with fractional exponent {e}", a.v)));
        }
        let v = a.v.powf(e);
        let dv = e * a.v.powf(e - 1.0);
        return Ok(a.chain(v, dv));
    }
    if a.v <= 0.0 {
        return Err(domain("^", format!("base {} must be positive for a variable exponent", a.v)));
    }
    let v = a.v.powf(b.v);
    Ok(Dual::combine(&a, &b, v, b.v * a.v.powf(b.v - 1.0), v * a.v.ln()))
}

impl Expr {
    pub fn eval(&self, inputs: &[f64]) -> Result<Dual, ExprError> {
        let n = inputs.len();
        Ok(match self {
            Expr::Num(v) => Dual::constant(*v, n),
            Expr::Var(i) => Dual::var(inputs[*i], *i, n),
            Expr::Neg(a) => {
                let a = a.eval(inputs)?;
                let v = -a.v;
                a.chain(v, -1.0)
            }
            Expr::Bin(op, a, b) => {
                let a = a.eval(inputs)?;
                let b = b.eval(inputs)?;
                match op {
                    BinOp::Add => Dual::combine(&a, &b, a.v + b.v, 1.0, 1.0),
                    BinOp::Sub => Dual::combine(&a, &b, a.v - b.v, 1.0, -1.0),
                    BinOp::Mul => Dual::combine(&a, &b, a.v * b.v, b.v, a.v),
                    BinOp::Div => {
                        if b.v == 0.0 {
                            return Err(domain("/", "division by zero".into()));
                        }
                        Dual::combine(&a, &b, a.v / b.v, 1.0 / b.v, -a.v / (b.v * b.v))
                    }
                    BinOp::Pow => pow(a, b)?,
                }
            }
            Expr::Call(f, args) => {
                let mut vals = args.iter().map(|a| a.eval(inputs)).collect::<Result<Vec<_>, _>>()?;
                match f {
                    Func::Exp => {
                        let a = vals.remove(0);
                        let v = a.v.exp();
                        a.chain(v, v)
                    }
                    Func::Log => {
                        let a = vals.remove(0);
                        if a.v <= 0.0 {
                            return Err(domain("log", format!("argument {} is not positive", a.v)));
                        }
                        let v = a.v.ln();
                        let dv = 1.0 / a.v;
                        a.chain(v, dv)
                    }
                    Func::Sqrt => {
                        let a = vals.remove(0);
                        if a.v < 0.0 {
                            return Err(domain("sqrt", format!("argument {} is negative", a.v)));
                        }
                        let v = a.v.sqrt();
                        if v == 0.0 && !a.is_constant() {
                            return Err(domain("sqrt", "derivative is unbounded at 0".into()));
                        }
                        let dv = if v == 0.0 { 0.0 } else { 0.5 / v };
                        a.chain(v, dv)
                    }
                    Func::Tanh => {
                        let a = vals.remove(0);
                        let v = a.v.tanh();
                        a.chain(v, 1.0 - v * v)
                    }
                    Func::Abs => {
                        let a = vals.remove(0);
                        let s = if a.v > 0.0 {
                            1.0
                        } else if a.v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        let v = a.v.abs();
                        a.chain(v, s)
                    }
                    Func::Min | Func::Max => {
                        let b = vals.pop().expect("arity checked");
                        let a = vals.pop().expect("arity checked");
                        let take_a = if *f == Func::Min { a.v <= b.v } else { a.v >= b.v };
                        if take_a {
                            a
                        } else {
                            b
                        }
                    }
                    Func::Pow => {
                        let b = vals.pop().expect("arity checked");
                        let a = vals.pop().expect("arity checked");
                        pow(a, b)?
                    }
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn compile(src: &str, names: &[&str]) -> Vec<Expr> {
        parse_list(src)
            .unwrap()
            .iter()
            .map(|a| a.resolve(&|n| names.iter().position(|m| *m == n)).unwrap())
            .collect()
    }

    #[test]
    fn trailing_comma_list() {
        let p = compile("[1e2*Rlength/Rwidth,]", &["Rlength", "Rwidth"]);
        assert_eq!(p.len(), 1);
        let d = p[0].eval(&[2.0, 4.0]).unwrap();
        assert_eq!(d.v, 50.0);
        assert_eq!(d.d, vec![25.0, -12.5]);
    }

    #[test]
    fn precedence_and_power() {
        let p = compile("[-2^2, 2^3^2, 1+2*3, (1+2)*3, 2^-1]", &[]);
        let v: Vec<f64> = p.iter().map(|e| e.eval(&[]).unwrap().v).collect();
        assert_eq!(v, vec![-4.0, 512.0, 7.0, 9.0, 0.5]);
    }

    #[test]
    fn empty_and_functions() {
        assert!(parse_list("[]").unwrap().is_empty());
        let p = compile("[exp(x)+log(x)+sqrt(x)+tanh(x)+abs(x)+min(x,1)+max(x,1)+pow(x,2)]", &["x"]);
        let d = p[0].eval(&[2.0]).unwrap();
        let x: f64 = 2.0;
        let t = x.tanh();
        let expect = x.exp() + 1.0 / x + 0.5 / x.sqrt() + (1.0 - t * t) + 1.0 + 0.0 + 1.0 + 2.0 * x;
        assert!((d.d[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn abs_kink_subgradient_is_zero() {
        let p = compile("[abs(x)]", &["x"]);
        assert_eq!(p[0].eval(&[0.0]).unwrap().d, vec![0.0]);
    }

    #[test]
    fn errors() {
        let ast = parse_list("[1/Q,]").unwrap();
        assert_eq!(ast[0].resolve(&|_| None), Err(ExprError::UnboundVariable("Q".into())));
        assert!(matches!(parse_list("[1+,]"), Err(ExprError::Parse { .. })));
        assert!(matches!(parse_list("1+2"), Err(ExprError::Parse { .. })));
        assert!(matches!(parse_list("[foo(1)]"), Err(ExprError::Parse { .. })));
        let p = compile("[log(x), 1/x, sqrt(x)]", &["x"]);
        assert!(matches!(p[0].eval(&[-1.0]), Err(ExprError::Domain { .. })));
        assert!(matches!(p[1].eval(&[0.0]), Err(ExprError::Domain { .. })));
        assert!(matches!(p[2].eval(&[-1.0]), Err(ExprError::Domain { .. })));
    }
}
