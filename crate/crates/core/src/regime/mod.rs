//! Treatment regimes, SMART designs and the per-subject consistency and
//! propensity products.

mod dsl;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cohort::SubjectRecord;
use crate::error::{Error, Result};
use crate::propensity::FittedPropensity;

pub use dsl::{parse_condition, parse_regime};

pub type Treatment = u32;

/// A history variable referenced by a rule.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    /// `a{k}`, treatment received at decision k.
    Treatment(usize),
    /// `t{k}`, time of decision k (k >= 2).
    DecisionTime(usize),
    Kappa,
    Covariate(String),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Treatment(k) => write!(f, "a{k}"),
            Var::DecisionTime(k) => write!(f, "t{k}"),
            Var::Kappa => write!(f, "kappa"),
            Var::Covariate(name) => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn apply(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }
}

/// Boolean expression over history variables.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    True,
    Compare { var: Var, op: CmpOp, value: f64 },
    Not(Box<Condition>),
    And(Vec<Condition>),
    Or(Vec<Condition>),
}

impl Condition {
    /// Missing variables make a comparison false.
    pub fn eval(&self, h: &dyn History) -> bool {
        match self {
            Condition::True => true,
            Condition::Compare { var, op, value } => {
                h.lookup(var).is_some_and(|x| op.apply(x, *value))
            }
            Condition::Not(c) => !c.eval(h),
            Condition::And(cs) => cs.iter().all(|c| c.eval(h)),
            Condition::Or(cs) => cs.iter().any(|c| c.eval(h)),
        }
    }

    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<Var>) {
        match self {
            Condition::True => {}
            Condition::Compare { var, .. } => out.push(var.clone()),
            Condition::Not(c) => c.collect_vars(out),
            Condition::And(cs) | Condition::Or(cs) => {
                cs.iter().for_each(|c| c.collect_vars(out))
            }
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn operand(c: &Condition, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match c {
                Condition::And(_) | Condition::Or(_) => write!(f, "({c})"),
                _ => write!(f, "{c}"),
            }
        }
        match self {
            Condition::True => f.write_str("true"),
            Condition::Compare { var, op, value } => {
                write!(f, "{var} {} {value}", op.symbol())
            }
            Condition::Not(c) => {
                f.write_str("not ")?;
                operand(c, f)
            }
            Condition::And(cs) | Condition::Or(cs) => {
                let sep = if matches!(self, Condition::And(_)) {
                    " and "
                } else {
                    " or "
                };
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    operand(c, f)?;
                }
                Ok(())
            }
        }
    }
}

/// Read access to a subject's history at some decision point.
pub trait History {
    fn lookup(&self, var: &Var) -> Option<f64>;
    /// True when the event (or censoring) happened before decision `k`.
    fn event_before_stage(&self, k: usize) -> bool;
}

/// Flat name-keyed history, mostly for ad hoc evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VariableMap {
    pub values: BTreeMap<String, f64>,
    pub event_occurred: bool,
}

impl VariableMap {
    pub fn new<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        VariableMap {
            values: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
            event_occurred: false,
        }
    }

    pub fn event_occurred() -> Self {
        VariableMap {
            values: BTreeMap::new(),
            event_occurred: true,
        }
    }
}

impl History for VariableMap {
    fn lookup(&self, var: &Var) -> Option<f64> {
        self.values.get(&var.to_string()).copied()
    }

    fn event_before_stage(&self, _k: usize) -> bool {
        self.event_occurred
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub condition: Condition,
    pub treatment: Treatment,
}

/// Ordered first-match-wins clauses ending in a catch-all.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRule {
    pub clauses: Vec<Clause>,
}

impl StageRule {
    pub fn constant(treatment: Treatment) -> Self {
        StageRule {
            clauses: vec![Clause {
                condition: Condition::True,
                treatment,
            }],
        }
    }

    pub fn decide(&self, h: &dyn History) -> Treatment {
        for c in &self.clauses {
            if c.condition.eval(h) {
                return c.treatment;
            }
        }
        // parse-time validation guarantees a catch-all
        self.clauses.last().map(|c| c.treatment).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Treat(Treatment),
    NoSelection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub label: String,
    pub stages: Vec<StageRule>,
}

impl Regime {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, rule) in self.stages.iter().enumerate() {
            if k > 0 {
                f.write_str("\n")?;
            }
            write!(f, "stage{}: ", k + 1)?;
            for (i, c) in rule.clauses.iter().enumerate() {
                if i > 0 {
                    f.write_str("; ")?;
                }
                if c.condition == Condition::True {
                    write!(f, "{}", c.treatment)?;
                } else {
                    write!(f, "if {} then {}", c.condition, c.treatment)?;
                }
            }
        }
        Ok(())
    }
}

/// Stage-`k` decision of `regime`, or `NoSelection` when the event
/// occurred before decision `k`.
pub fn evaluate_rule(regime: &Regime, k: usize, history: &dyn History) -> Selection {
    if k == 0 || k > regime.stages.len() || history.event_before_stage(k) {
        return Selection::NoSelection;
    }
    Selection::Treat(regime.stages[k - 1].decide(history))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateColumn {
    pub name: String,
    pub stage: usize,
}

/// A feasible option subset at one decision point. The first listed option
/// is the reference category of the propensity model.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub name: String,
    pub condition: Condition,
    pub options: Vec<Treatment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmartDesign {
    options: Vec<Vec<Treatment>>,
    strata: Vec<Vec<Stratum>>,
    covariates: Vec<CovariateColumn>,
}

fn is_reserved(name: &str) -> bool {
    let numbered = |prefix: &str| {
        name.strip_prefix(prefix)
            .is_some_and(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
    };
    matches!(
        name,
        "kappa" | "if" | "then" | "else" | "and" | "or" | "not" | "true" | "stage"
    ) || numbered("a")
        || numbered("t")
        || numbered("stage")
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl SmartDesign {
    /// Design with one stratum per stage covering every option.
    pub fn new(
        options_per_stage: Vec<Vec<Treatment>>,
        covariates: Vec<CovariateColumn>,
    ) -> Result<Self> {
        if options_per_stage.is_empty() {
            return Err(Error::InvalidDesign("at least one stage is required".into()));
        }
        let k_max = options_per_stage.len();
        for (k, opts) in options_per_stage.iter().enumerate() {
            if opts.is_empty() {
                return Err(Error::InvalidDesign(format!("stage {} has no options", k + 1)));
            }
            let mut sorted = opts.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != opts.len() {
                return Err(Error::InvalidDesign(format!(
                    "stage {} lists an option twice",
                    k + 1
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &covariates {
            if !is_identifier(&c.name) || is_reserved(&c.name) {
                return Err(Error::InvalidDesign(format!(
                    "invalid covariate name {:?}",
                    c.name
                )));
            }
            if c.stage == 0 || c.stage > k_max {
                return Err(Error::InvalidDesign(format!(
                    "covariate {} assigned to stage {} outside 1..={k_max}",
                    c.name, c.stage
                )));
            }
            if !seen.insert(c.name.clone()) {
                return Err(Error::InvalidDesign(format!(
                    "covariate {} declared twice",
                    c.name
                )));
            }
        }
        let strata = options_per_stage
            .iter()
            .enumerate()
            .map(|(k, opts)| {
                vec![Stratum {
                    name: format!("stage{}", k + 1),
                    condition: Condition::True,
                    options: opts.clone(),
                }]
            })
            .collect();
        Ok(SmartDesign {
            options: options_per_stage,
            strata,
            covariates,
        })
    }

    /// Replace the strata of `stage` (1-based). Conditions are rule-DSL
    /// expressions evaluated on the stage history.
    pub fn with_strata(mut self, stage: usize, strata: &[(&str, &str, Vec<Treatment>)]) -> Result<Self> {
        let mut parsed = Vec::with_capacity(strata.len());
        for (name, when, options) in strata {
            let condition = parse_condition(when, &self, stage)?;
            parsed.push(Stratum {
                name: (*name).to_string(),
                condition,
                options: options.clone(),
            });
        }
        self.set_strata(stage, parsed)?;
        Ok(self)
    }

    pub fn set_strata(&mut self, stage: usize, strata: Vec<Stratum>) -> Result<()> {
        if stage == 0 || stage > self.stages() {
            return Err(Error::InvalidDesign(format!("no stage {stage}")));
        }
        if strata.is_empty() {
            return Err(Error::InvalidDesign(format!("stage {stage} needs a stratum")));
        }
        for s in &strata {
            if s.options.is_empty() {
                return Err(Error::InvalidDesign(format!("stratum {} has no options", s.name)));
            }
            for &o in &s.options {
                if !self.options[stage - 1].contains(&o) {
                    return Err(Error::InvalidDesign(format!(
                        "stratum {} option {o} is not in the stage {stage} option set",
                        s.name
                    )));
                }
            }
        }
        for (i, s) in strata.iter().enumerate() {
            let clash = strata[..i].iter().any(|t| t.name == s.name)
                || self
                    .strata
                    .iter()
                    .enumerate()
                    .any(|(k, st)| k + 1 != stage && st.iter().any(|t| t.name == s.name));
            if clash {
                return Err(Error::InvalidDesign(format!("duplicate stratum name {}", s.name)));
            }
        }
        self.strata[stage - 1] = strata;
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.options.len()
    }

    pub fn options(&self, stage: usize) -> &[Treatment] {
        &self.options[stage - 1]
    }

    pub fn strata(&self, stage: usize) -> &[Stratum] {
        &self.strata[stage - 1]
    }

    pub fn covariates(&self) -> &[CovariateColumn] {
        &self.covariates
    }

    pub fn covariate_stage(&self, name: &str) -> Option<usize> {
        self.covariates.iter().find(|c| c.name == name).map(|c| c.stage)
    }

    /// Resolve an identifier for use in a stage-`stage` condition.
    pub fn resolve(&self, name: &str, stage: usize) -> Result<Var> {
        let k_max = self.stages();
        let index = |prefix: &str| -> Option<usize> {
            name.strip_prefix(prefix)
                .filter(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|r| r.parse().ok())
        };
        let future = || Error::FutureVariable {
            name: name.to_string(),
            stage,
        };
        if name == "kappa" {
            return Ok(Var::Kappa);
        }
        if let Some(j) = index("a") {
            if j == 0 || j > k_max {
                return Err(Error::UnknownVariable(name.to_string()));
            }
            return if j < stage { Ok(Var::Treatment(j)) } else { Err(future()) };
        }
        if let Some(j) = index("t") {
            if j < 2 || j > k_max {
                return Err(Error::UnknownVariable(name.to_string()));
            }
            return if j <= stage {
                Ok(Var::DecisionTime(j))
            } else {
                Err(future())
            };
        }
        match self.covariate_stage(name) {
            Some(s) if s <= stage => Ok(Var::Covariate(name.to_string())),
            Some(_) => Err(future()),
            None => Err(Error::UnknownVariable(name.to_string())),
        }
    }

    /// Index of the stratum matched by a stage-`stage` history, if any.
    pub fn match_stratum(&self, stage: usize, h: &dyn History) -> Option<usize> {
        self.strata[stage - 1]
            .iter()
            .position(|s| s.condition.eval(h))
    }

    /// Like [`match_stratum`](Self::match_stratum) but requires exactly one match.
    pub fn unique_stratum(&self, stage: usize, h: &dyn History) -> std::result::Result<usize, String> {
        let mut found: Option<usize> = None;
        for (i, s) in self.strata[stage - 1].iter().enumerate() {
            if s.condition.eval(h) {
                if let Some(prev) = found {
                    return Err(format!(
                        "stage {stage} history matches strata {} and {}",
                        self.strata[stage - 1][prev].name, s.name
                    ));
                }
                found = Some(i);
            }
        }
        found.ok_or_else(|| format!("stage {stage} history matches no stratum"))
    }

    pub fn find_stratum(&self, name: &str) -> Option<(usize, usize)> {
        self.strata.iter().enumerate().find_map(|(k, st)| {
            st.iter().position(|s| s.name == name).map(|i| (k + 1, i))
        })
    }
}

/// C(u, d): 1 when every decision reached by time `u` agrees with the regime.
/// A decision at time `t_k` counts as reached when `t_k <= u`.
pub fn consistency_indicator(subject: &SubjectRecord, regime: &Regime, u: f64) -> bool {
    for k in 1..=subject.kappa {
        if subject.decision_time(k) > u {
            break;
        }
        let h = subject.history(k);
        match evaluate_rule(regime, k, &h) {
            Selection::Treat(d) if d == subject.treatment(k) => {}
            _ => return false,
        }
    }
    true
}

/// pi(u, d): product over reached decisions of the probability of the
/// regime's option at the subject's history.
pub fn propensity_product(
    subject: &SubjectRecord,
    regime: &Regime,
    u: f64,
    prop: &FittedPropensity,
) -> Result<f64> {
    let mut pi = 1.0;
    for k in 1..=subject.kappa {
        if subject.decision_time(k) > u {
            break;
        }
        let h = subject.history(k);
        let d = match evaluate_rule(regime, k, &h) {
            Selection::Treat(d) => d,
            Selection::NoSelection => break,
        };
        let w = prop.predict(subject, k, d);
        if w <= 0.0 {
            return Err(Error::PositivityViolation {
                subject: subject.id.clone(),
                stage: k,
            });
        }
        pi *= w;
    }
    Ok(pi)
}
