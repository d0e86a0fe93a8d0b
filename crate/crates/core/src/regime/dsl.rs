//! Lexer and recursive-descent parser for the regime rule language.
//!
//! ```text
//! regime := stage+
//! stage  := ("stage" INT | "stageN") ":" clause (";" clause)*
//! clause := "if" expr "then" INT ["else" INT] | INT
//! expr   := and ("or" and)*
//! and    := unary ("and" unary)*
//! unary  := "not" unary | "(" expr ")" | "true" | IDENT cmp NUMBER
//! ```
//!
//! `and` binds tighter than `or`. `#` starts a comment.

use super::{Clause, CmpOp, Condition, Regime, SmartDesign, StageRule, Treatment};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Colon,
    Semi,
    LParen,
    RParen,
    Cmp(CmpOp),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
    text: String,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let push = |tok: Tok, text: String, out: &mut Vec<Token>| {
            out.push(Token {
                tok,
                line: start_line,
                column: start_col,
                text,
            })
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let starts_number = c.is_ascii_digit()
            || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
            || (c == '-'
                && chars
                    .get(i + 1)
                    .is_some_and(|d| d.is_ascii_digit() || *d == '.'));
        if starts_number {
            let begin = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            let text: String = chars[begin..i].iter().collect();
            col += i - begin;
            let value: f64 = text
                .parse()
                .map_err(|_| syntax(start_line, start_col, format!("invalid number {text:?}")))?;
            if !value.is_finite() {
                return Err(syntax(start_line, start_col, format!("non-finite number {text:?}")));
            }
            push(Tok::Number(value), text, &mut out);
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let begin = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[begin..i].iter().collect();
            col += i - begin;
            push(Tok::Ident(text.clone()), text, &mut out);
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let (tok, width) = match (c, two.as_str()) {
            (_, "<=") => (Tok::Cmp(CmpOp::Le), 2),
            (_, ">=") => (Tok::Cmp(CmpOp::Ge), 2),
            (_, "==") => (Tok::Cmp(CmpOp::Eq), 2),
            (_, "!=") => (Tok::Cmp(CmpOp::Ne), 2),
            ('<', _) => (Tok::Cmp(CmpOp::Lt), 1),
            ('>', _) => (Tok::Cmp(CmpOp::Gt), 1),
            (':', _) => (Tok::Colon, 1),
            (';', _) => (Tok::Semi, 1),
            ('(', _) => (Tok::LParen, 1),
            (')', _) => (Tok::RParen, 1),
            _ => return Err(syntax(line, col, format!("unexpected character {c:?}"))),
        };
        let text: String = chars[i..i + width].iter().collect();
        push(tok, text, &mut out);
        i += width;
        col += width;
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: col,
        text: "end of input".into(),
    });
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    design: &'a SmartDesign,
    stage: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &str, design: &'a SmartDesign, stage: usize) -> Result<Self> {
        Ok(Parser {
            toks: lex(src)?,
            pos: 0,
            design,
            stage,
        })
    }

    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, offset: usize) -> &Token {
        &self.toks[(self.pos + offset).min(self.toks.len() - 1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, message: impl Into<String>) -> Error {
        let t = self.peek();
        syntax(t.line, t.column, format!("{} (found {})", message.into(), t.text))
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        if self.is_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.error_here(format!("expected '{kw}'")))
        }
    }

    /// Length in tokens of a stage header at the cursor, if any.
    fn stage_header(&self) -> Option<(usize, usize)> {
        match &self.peek().tok {
            Tok::Ident(s) if s == "stage" => match self.peek_at(1).tok {
                Tok::Number(v) if v.fract() == 0.0 && v >= 1.0 => Some((v as usize, 2)),
                _ => None,
            },
            Tok::Ident(s) => s
                .strip_prefix("stage")
                .filter(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|r| r.parse().ok())
                .map(|k| (k, 1)),
            _ => None,
        }
    }

    fn treatment(&mut self) -> Result<Treatment> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Number(v) if v.fract() == 0.0 && v >= 0.0 && v <= u32::MAX as f64 => {
                self.bump();
                let code = v as Treatment;
                if !self.design.options(self.stage).contains(&code) {
                    return Err(Error::InvalidTreatment {
                        code,
                        stage: self.stage,
                    });
                }
                Ok(code)
            }
            _ => Err(self.error_here("expected a treatment code")),
        }
    }

    fn regime(&mut self) -> Result<Regime> {
        let k_max = self.design.stages();
        let mut stages = Vec::new();
        while self.peek().tok != Tok::Eof {
            let (k, len) = self
                .stage_header()
                .ok_or_else(|| self.error_here("expected a stage header such as 'stage1:'"))?;
            if k != stages.len() + 1 {
                return Err(self.error_here(format!("expected stage {}", stages.len() + 1)));
            }
            if k > k_max {
                return Err(Error::StageCount {
                    expected: k_max,
                    found: k,
                });
            }
            for _ in 0..len {
                self.bump();
            }
            if self.peek().tok != Tok::Colon {
                return Err(self.error_here("expected ':'"));
            }
            self.bump();
            self.stage = k;
            stages.push(self.stage_rule()?);
        }
        if stages.len() != k_max {
            return Err(Error::StageCount {
                expected: k_max,
                found: stages.len(),
            });
        }
        Ok(Regime {
            label: String::new(),
            stages,
        })
    }

    fn stage_rule(&mut self) -> Result<StageRule> {
        let mut clauses = Vec::new();
        loop {
            if clauses
                .last()
                .is_some_and(|c: &Clause| c.condition == Condition::True)
            {
                return Err(self.error_here("clause after catch-all"));
            }
            if self.is_keyword("if") {
                self.bump();
                let condition = self.expr()?;
                self.expect_keyword("then")?;
                let treatment = self.treatment()?;
                clauses.push(Clause {
                    condition,
                    treatment,
                });
                if self.is_keyword("else") {
                    self.bump();
                    let treatment = self.treatment()?;
                    clauses.push(Clause {
                        condition: Condition::True,
                        treatment,
                    });
                }
            } else {
                let treatment = self.treatment()?;
                clauses.push(Clause {
                    condition: Condition::True,
                    treatment,
                });
            }
            match self.peek().tok {
                Tok::Semi => {
                    self.bump();
                    if self.peek().tok == Tok::Eof || self.stage_header().is_some() {
                        break;
                    }
                }
                Tok::Eof => break,
                _ if self.stage_header().is_some() => break,
                _ => return Err(self.error_here("expected ';' or a new stage")),
            }
        }
        if clauses.last().map(|c| &c.condition) != Some(&Condition::True) {
            return Err(Error::MissingCatchAll(self.stage));
        }
        Ok(StageRule { clauses })
    }

    fn expr(&mut self) -> Result<Condition> {
        let mut terms = vec![self.conjunction()?];
        while self.is_keyword("or") {
            self.bump();
            terms.push(self.conjunction()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Condition::Or(terms)
        })
    }

    fn conjunction(&mut self) -> Result<Condition> {
        let mut terms = vec![self.unary()?];
        while self.is_keyword("and") {
            self.bump();
            terms.push(self.unary()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Condition::And(terms)
        })
    }

    fn unary(&mut self) -> Result<Condition> {
        if self.is_keyword("not") {
            self.bump();
            return Ok(Condition::Not(Box::new(self.unary()?)));
        }
        if self.peek().tok == Tok::LParen {
            self.bump();
            let inner = self.expr()?;
            if self.peek().tok != Tok::RParen {
                return Err(self.error_here("expected ')'"));
            }
            self.bump();
            return Ok(inner);
        }
        if self.is_keyword("true") {
            self.bump();
            return Ok(Condition::True);
        }
        let name = match &self.peek().tok {
            Tok::Ident(s)
                if !matches!(
                    s.as_str(),
                    "if" | "then" | "else" | "and" | "or" | "not"
                ) =>
            {
                s.clone()
            }
            _ => return Err(self.error_here("expected a comparison")),
        };
        self.bump();
        let var = self.design.resolve(&name, self.stage)?;
        let op = match self.peek().tok {
            Tok::Cmp(op) => op,
            _ => return Err(self.error_here("expected a comparison operator")),
        };
        self.bump();
        let value = match self.peek().tok {
            Tok::Number(v) => v,
            _ => return Err(self.error_here("expected a number")),
        };
        self.bump();
        Ok(Condition::Compare { var, op, value })
    }
}

/// Parse a regime written in the rule language against `design`.
pub fn parse_regime(text: &str, design: &SmartDesign) -> Result<Regime> {
    Parser::new(text, design, 1)?.regime()
}

/// Parse a bare condition evaluated at decision `stage`.
pub fn parse_condition(text: &str, design: &SmartDesign, stage: usize) -> Result<Condition> {
    let mut p = Parser::new(text, design, stage)?;
    let c = p.expr()?;
    if p.peek().tok != Tok::Eof {
        return Err(p.error_here("unexpected trailing input"));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::super::{CovariateColumn, Var};
    use super::*;
    use proptest::prelude::*;

    fn design() -> SmartDesign {
        SmartDesign::new(
            vec![vec![0, 1], vec![0, 1, 2]],
            vec![
                CovariateColumn { name: "x11".into(), stage: 1 },
                CovariateColumn { name: "x12".into(), stage: 1 },
                CovariateColumn { name: "x2".into(), stage: 2 },
                CovariateColumn { name: "r".into(), stage: 2 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn constant_regime() {
        let r = parse_regime("stage1: 1; stage2: 1", &design()).unwrap();
        assert_eq!(r.stages, vec![StageRule::constant(1), StageRule::constant(1)]);
    }

    #[test]
    fn stage_header_forms() {
        let a = parse_regime("stage 1: 0\nstage 2: 2", &design()).unwrap();
        let b = parse_regime("stage1: 0;\nstage2: 2;", &design()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_variable() {
        let e = parse_regime("stage1: if zz > 0 then 1 else 0; stage2: 0", &design()).unwrap_err();
        assert_eq!(e.to_string(), "unknown variable zz");
    }

    #[test]
    fn syntax_error_position() {
        let e = parse_regime("stage1: 0\nstage2: if x2 >> 1 then 1; 0", &design()).unwrap_err();
        match e {
            Error::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 16);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn treatment_outside_design() {
        let e = parse_regime("stage1: 2; stage2: 0", &design()).unwrap_err();
        assert!(matches!(e, Error::InvalidTreatment { code: 2, stage: 1 }));
    }

    #[test]
    fn missing_catch_all() {
        let e = parse_regime("stage1: if x11 > 0 then 1; stage2: 0", &design()).unwrap_err();
        assert!(matches!(e, Error::MissingCatchAll(1)), "{e}");
    }

    #[test]
    fn stage_count_checked() {
        assert!(matches!(
            parse_regime("stage1: 1", &design()),
            Err(Error::StageCount { expected: 2, found: 1 })
        ));
        assert!(parse_regime("stage2: 1; stage1: 1", &design()).is_err());
    }

    #[test]
    fn precedence_and_binds_tighter() {
        let c = parse_condition("x11 > 0 or x12 < 1 and x11 < 5", &design(), 1).unwrap();
        assert!(matches!(&c, Condition::Or(v) if v.len() == 2 && matches!(v[1], Condition::And(_))));
    }

    #[test]
    fn printed_form() {
        let r = parse_regime(
            "stage1: if x12 >= 0.3 then 1 else 0; stage2: if not (r == 1 or a1 != 0) then 2; 0",
            &design(),
        )
        .unwrap();
        assert_eq!(
            r.to_string(),
            "stage1: if x12 >= 0.3 then 1; 0\nstage2: if not (r == 1 or a1 != 0) then 2; 0"
        );
    }

    #[test]
    fn exponent_numbers() {
        let c = parse_condition("x11 > -2.5e-3", &design(), 1).unwrap();
        assert_eq!(
            c,
            Condition::Compare {
                var: Var::Covariate("x11".into()),
                op: CmpOp::Gt,
                value: -2.5e-3
            }
        );
    }

    fn leaf() -> impl Strategy<Value = Condition> {
        let vars = prop_oneof![
            Just(Var::Covariate("x11".into())),
            Just(Var::Covariate("x12".into())),
            Just(Var::Covariate("x2".into())),
            Just(Var::Covariate("r".into())),
            Just(Var::Treatment(1)),
            Just(Var::DecisionTime(2)),
            Just(Var::Kappa),
        ];
        let ops = prop_oneof![
            Just(CmpOp::Lt),
            Just(CmpOp::Le),
            Just(CmpOp::Gt),
            Just(CmpOp::Ge),
            Just(CmpOp::Eq),
            Just(CmpOp::Ne),
        ];
        prop_oneof![
            1 => Just(Condition::True),
            6 => (vars, ops, -1e6f64..1e6).prop_map(|(var, op, value)| Condition::Compare { var, op, value }),
        ]
    }

    fn condition() -> impl Strategy<Value = Condition> {
        leaf().prop_recursive(4, 24, 4, |inner| {
            prop_oneof![
                inner.clone().prop_map(|c| Condition::Not(Box::new(c))),
                prop::collection::vec(inner.clone(), 2..4).prop_map(Condition::And),
                prop::collection::vec(inner, 2..4).prop_map(Condition::Or),
            ]
        })
    }

    fn stage_rule(options: Vec<Treatment>) -> impl Strategy<Value = StageRule> {
        let opt = prop::sample::select(options);
        (
            prop::collection::vec((condition(), opt.clone()), 0..4),
            opt,
        )
            .prop_map(|(cs, last)| {
                let mut clauses: Vec<Clause> = cs
                    .into_iter()
                    .filter(|(c, _)| *c != Condition::True)
                    .map(|(condition, treatment)| Clause { condition, treatment })
                    .collect();
                clauses.push(Clause {
                    condition: Condition::True,
                    treatment: last,
                });
                StageRule { clauses }
            })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(s1 in stage_rule(vec![0, 1]), s2 in stage_rule(vec![0, 1, 2])) {
            // stage-1 rules may only use baseline covariates and kappa
            let stage1_ok = s1.clauses.iter().all(|c| c.condition.variables().iter().all(|v| matches!(v,
                Var::Kappa) || matches!(v, Var::Covariate(n) if n.starts_with("x1"))));
            prop_assume!(stage1_ok);
            let r = Regime { label: String::new(), stages: vec![s1, s2] };
            let text = r.to_string();
            let back = parse_regime(&text, &design()).unwrap();
            prop_assert_eq!(&back, &r);
            prop_assert_eq!(back.to_string(), text);
        }
    }
}
