//! Entity extraction, model construction and the consistency check.

pub mod prompts;
pub mod units;

use std::collections::{BTreeMap, BTreeSet};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::sha256_hex;
use crate::llm::{fenced_block, BackendError, Session, Stage};
use crate::solver::implied_box;
use crate::model::{
    canonicalize, parse_expression, Metadata, ModelError, Provenance, RawConstraint, RawRelation, Sense, StandardForm,
    VarType, Variable,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractionError {
    #[error("empty problem text")]
    EmptyInput,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("reply violates the {stage} schema after a reformat retry: {reason}")]
    SchemaViolation { stage: Stage, reason: String },
    #[error("no optimization variables were extracted")]
    NoVariables,
    #[error("model is unparseable after repair: {0}")]
    Unparseable(String),
    #[error("model references undeclared variable `{0}`")]
    UndeclaredVariable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entity {
    pub name: String,
    #[serde(rename = "type")]
    pub var_type: VarType,
    #[serde(default)]
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSet {
    pub goal: String,
    pub sense: Sense,
    #[serde(default)]
    pub variables: Vec<String>,
}

/// A constraint value `c_j` on variable `name`, with the sentence it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintValue {
    pub variable: String,
    pub value: f64,
    #[serde(default)]
    pub unit: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionSets {
    pub variables: Vec<Entity>,
    pub objective: ObjectiveSet,
    #[serde(default)]
    pub constraints: Vec<ConstraintValue>,
}

impl ExtractionSets {
    pub fn entity(&self, name: &str) -> Option<&Entity> {
        self.variables.iter().find(|e| e.name == name)
    }

    /// Schema-level checks; an empty variable list is reported separately.
    fn check(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for e in &self.variables {
            if !crate::model::is_identifier(&e.name) {
                return Err(format!("`{}` is not an identifier", e.name));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(format!("variable `{}` listed twice", e.name));
            }
        }
        for v in &self.objective.variables {
            if !seen.contains(v.as_str()) {
                return Err(format!("objective references unlisted variable `{v}`"));
            }
        }
        for c in &self.constraints {
            if !seen.contains(c.variable.as_str()) {
                return Err(format!("constraint value references unlisted variable `{}`", c.variable));
            }
            if !c.value.is_finite() {
                return Err(format!("constraint value for `{}` is not finite", c.variable));
            }
        }
        Ok(())
    }
}

/// Model proposal returned by the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProposal {
    pub sense: Sense,
    pub objective: String,
    #[serde(default)]
    pub constraints: Vec<String>,
    #[serde(default)]
    pub bounds: BTreeMap<String, (Option<f64>, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Judgement {
    xi1: bool,
    xi2: bool,
    #[serde(default)]
    explanations: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub xi1: bool,
    pub xi2: bool,
    pub xi3: bool,
    pub xi4: bool,
    /// Keyed `xi1`..`xi4`.
    pub explanations: BTreeMap<String, String>,
}

impl ConsistencyReport {
    /// The product of the four indicators.
    pub fn t(&self) -> bool {
        self.xi1 && self.xi2 && self.xi3 && self.xi4
    }
}

/// Asks once, and once more with the reformat prompt if the reply does
/// not parse or fails `check`.
fn ask_structured<T: DeserializeOwned>(
    session: &mut Session<'_>,
    stage: Stage,
    prompt: &str,
    check: impl Fn(&T) -> Result<(), String>,
) -> Result<T, ExtractionError> {
    let parse = |reply: &str| -> Result<T, String> {
        let body = fenced_block(reply).ok_or("no fenced block")?;
        let value: T = serde_json::from_str(body).map_err(|e| e.to_string())?;
        check(&value)?;
        Ok(value)
    };
    let reply = session.ask(stage, prompt)?;
    let reason = match parse(&reply) {
        Ok(v) => return Ok(v),
        Err(reason) => reason,
    };
    let retry = prompts::render(prompts::REFORMAT, &[("error", &reason), ("previous", &reply)]);
    let reply = session.ask(stage, &retry)?;
    parse(&reply).map_err(|reason| ExtractionError::SchemaViolation { stage, reason })
}

pub fn extract_sets(text: &str, session: &mut Session<'_>) -> Result<ExtractionSets, ExtractionError> {
    if text.trim().is_empty() {
        return Err(ExtractionError::EmptyInput);
    }
    let prompt = prompts::render(prompts::EXTRACT, &[("text", text)]);
    let sets: ExtractionSets = ask_structured(session, Stage::Extract, &prompt, ExtractionSets::check)?;
    if sets.variables.is_empty() {
        return Err(ExtractionError::NoVariables);
    }
    Ok(sets)
}

/// Splits `a <= b <= c` into `[(a, <=, b), (b, <=, c)]`.
pub fn split_relations(text: &str) -> Result<Vec<(String, RawRelation, String)>, ModelError> {
    let mut parts = Vec::new();
    let mut ops = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '<' | '>' | '=' | '≤' | '≥') {
            continue;
        }
        let mut end = i + c.len_utf8();
        if let Some(&(j, n)) = chars.peek() {
            let pair = matches!((c, n), ('<' | '>' | '=', '=') | ('=', '<' | '>'));
            if pair {
                end = j + n.len_utf8();
                chars.next();
            }
        }
        parts.push(text[start..i].trim().to_string());
        ops.push(RawRelation::parse(&text[i..end])?);
        start = end;
    }
    parts.push(text[start..].trim().to_string());
    if ops.is_empty() || parts.iter().any(String::is_empty) {
        return Err(ModelError::UnknownRelation(text.to_string()));
    }
    Ok(ops
        .into_iter()
        .enumerate()
        .map(|(k, op)| (parts[k].clone(), op, parts[k + 1].clone()))
        .collect())
}

/// Builds the typed variable list from the extracted entities and the
/// proposal's bounds.
fn assemble(
    proposal: &ModelProposal,
    sets: &ExtractionSets,
    metadata: &Metadata,
) -> Result<StandardForm, ModelError> {
    if let Some(name) = proposal.bounds.keys().find(|n| sets.entity(n).is_none()) {
        return Err(ModelError::UndeclaredVariable(name.clone()));
    }
    let variables: Vec<Variable> = sets
        .variables
        .iter()
        .map(|e| {
            let (lo, hi) = proposal.bounds.get(&e.name).copied().unwrap_or_default();
            let (dlo, dhi) = match e.var_type {
                VarType::Binary => (0.0, 1.0),
                _ => (f64::NEG_INFINITY, f64::INFINITY),
            };
            Variable {
                name: e.name.clone(),
                var_type: e.var_type,
                lower: lo.unwrap_or(dlo),
                upper: hi.unwrap_or(dhi),
                unit: e.unit.clone(),
            }
        })
        .collect();
    let objective = parse_expression(&proposal.objective, &variables)?;
    let mut raw = Vec::new();
    for text in &proposal.constraints {
        for (l, rel, r) in split_relations(text)? {
            let mut c = RawConstraint::new(parse_expression(&l, &variables)?, rel, parse_expression(&r, &variables)?);
            c.provenance = Provenance::Source(text.clone());
            raw.push(c);
        }
    }
    let mut model = canonicalize(proposal.sense, objective, raw, variables, metadata.clone())?;
    tighten_bounds(&mut model);
    Ok(model)
}

/// Copies bounds implied by single-variable affine constraints onto the
/// variables, so start points and box centres see them. The constraints
/// stay in place; a contradictory pair leaves the bounds untouched.
pub fn tighten_bounds(model: &mut StandardForm) {
    let implied = implied_box(model);
    for ((v, lo), hi) in model.variables.iter_mut().zip(implied.lo).zip(implied.hi) {
        if lo <= hi {
            // adding zero turns a negated zero into a plain one
            v.lower = lo + 0.0;
            v.upper = hi + 0.0;
        }
    }
}

pub fn metadata_for(problem_id: &str, text: &str) -> Metadata {
    Metadata {
        problem_id: problem_id.to_string(),
        text_digest: sha256_hex(text.as_bytes()),
    }
}

/// Asks for a model, parses and canonicalizes it, with one repair prompt
/// when the first proposal is rejected.
pub fn build_model(
    sets: &ExtractionSets,
    text: &str,
    session: &mut Session<'_>,
) -> Result<StandardForm, ExtractionError> {
    let metadata = metadata_for(&session.problem_id, text);
    let sets_json = serde_json::to_string_pretty(sets).expect("sets serialize");
    let prompt = prompts::render(prompts::MODEL, &[("sets", &sets_json), ("text", text)]);
    let proposal: ModelProposal = ask_structured(session, Stage::Model, &prompt, |_| Ok(()))?;
    let error = match assemble(&proposal, sets, &metadata) {
        Ok(p) => return Ok(p),
        Err(e) => e,
    };
    let previous = serde_json::to_string_pretty(&proposal).expect("proposal serializes");
    let repair = prompts::render(
        prompts::MODEL_REPAIR,
        &[("error", &error.to_string()), ("previous", &previous), ("text", text)],
    );
    let proposal: ModelProposal = ask_structured(session, Stage::Model, &repair, |_| Ok(()))?;
    assemble(&proposal, sets, &metadata).map_err(|e| match e {
        ModelError::UndeclaredVariable(v) => ExtractionError::UndeclaredVariable(v),
        other => ExtractionError::Unparseable(other.to_string()),
    })
}

/// Every extracted variable is declared in the model with the same type.
pub fn check_types(model: &StandardForm, sets: &ExtractionSets) -> (bool, String) {
    for e in &sets.variables {
        match model.variable(&e.name) {
            None => return (false, format!("`{}` is missing from the model", e.name)),
            Some(v) if v.var_type != e.var_type => {
                return (false, format!("`{}` is {:?} in the model but {:?} in the entities", e.name, v.var_type, e.var_type))
            }
            Some(_) => {}
        }
    }
    (true, "variable types match".into())
}

/// Relative tolerance for matching constraint values.
pub const VALUE_TOLERANCE: f64 = 1e-9;

/// Every constraint value, converted to its variable's unit, occurs as a
/// constant of some constraint or as a bound. A zero value only needs
/// some constraint on its variable, since zeros vanish in canonical form.
pub fn check_values(model: &StandardForm, sets: &ExtractionSets) -> (bool, String) {
    let mut constants: Vec<f64> = model.constraints().flat_map(|c| c.lhs.constants()).collect();
    for v in &model.variables {
        constants.extend([v.lower, v.upper].into_iter().filter(|b| b.is_finite()));
    }
    for c in &sets.constraints {
        let unit = sets.entity(&c.variable).map(|e| e.unit.as_str()).unwrap_or("");
        let value = units::convert(c.value, &c.unit, unit).unwrap_or(c.value);
        let found = if value == 0.0 {
            model.constraints().any(|k| k.lhs.depends_on(&c.variable))
                || model.variable(&c.variable).is_some_and(|v| v.lower == 0.0 || v.upper == 0.0)
        } else {
            constants
                .iter()
                .any(|k| (k.abs() - value.abs()).abs() <= VALUE_TOLERANCE * value.abs())
        };
        if !found {
            return (false, format!("value {} {} for `{}` appears in no constraint", c.value, c.unit, c.variable));
        }
    }
    (true, "all constraint values appear".into())
}

pub fn validate_consistency(
    model: &StandardForm,
    sets: &ExtractionSets,
    text: &str,
    session: &mut Session<'_>,
) -> Result<ConsistencyReport, ExtractionError> {
    let listing = model.to_string();
    let prompt = prompts::render(prompts::CONSISTENCY, &[("model", &listing), ("text", text)]);
    let judged: Judgement = ask_structured(session, Stage::Consistency, &prompt, |_| Ok(()))?;
    let (xi3, why3) = check_types(model, sets);
    let (xi4, why4) = check_values(model, sets);
    let mut explanations = judged.explanations;
    explanations.insert("xi3".into(), why3);
    explanations.insert("xi4".into(), why4);
    Ok(ConsistencyReport {
        xi1: judged.xi1,
        xi2: judged.xi2,
        xi3,
        xi4,
        explanations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockBackend, MockScript};

    fn fenced(json: &str) -> String {
        format!("```json\n{json}\n```")
    }

    fn mock(responses: &[(&str, String)]) -> MockBackend {
        let mut s = String::new();
        for (stage, text) in responses {
            s.push_str(&format!("[[response]]\nstage = \"{stage}\"\ntext = '''\n{text}'''\n\n"));
        }
        MockBackend::new(MockScript::parse(&s).unwrap())
    }

    const SETS: &str = r#"{"variables":[{"name":"p","type":"continuous","unit":"W"}],
        "objective":{"goal":"maximize sum rate","sense":"maximize","variables":["p"]},
        "constraints":[{"variable":"p","value":10,"unit":"W","source":"power ≤ 10 W"}]}"#;

    fn sets() -> ExtractionSets {
        serde_json::from_str(SETS).unwrap()
    }

    #[test]
    fn single_variable_constraints_become_bounds() {
        let vars = vec![Variable::free("x"), Variable::free("y")];
        let mut m = StandardForm {
            objective: parse_expression("x + y", &vars).unwrap(),
            inequalities: ["-x", "x - 2", "1 - x*y", "3 - y", "y - 1"]
                .iter()
                .map(|c| crate::model::Constraint::le(parse_expression(c, &vars).unwrap()))
                .collect(),
            equalities: vec![],
            variables: vars,
            metadata: Metadata::default(),
        };
        tighten_bounds(&mut m);
        assert_eq!((m.variables[0].lower, m.variables[0].upper), (0.0, 2.0));
        // 3 ≤ y ≤ 1 is contradictory and left for the solver to report.
        assert!(m.variables[1].lower.is_infinite() && m.variables[1].upper.is_infinite());
        assert_eq!(m.m(), 5);
    }

    #[test]
    fn extraction_echoes_the_script() {
        let m = mock(&[("extract", fenced(SETS))]);
        let mut s = Session::new(&m, "p1");
        let got = extract_sets("maximize sum rate, power ≤ 10 W", &mut s).unwrap();
        assert_eq!(got, sets());
        assert_eq!(got.constraints[0].source, "power ≤ 10 W");
        assert!(s.exchanges[0].prompt.starts_with("problem=p1 stage=extract\n"));
    }

    #[test]
    fn empty_text_is_rejected_without_asking() {
        let m = mock(&[]);
        let mut s = Session::new(&m, "p1");
        assert_eq!(extract_sets("  ", &mut s), Err(ExtractionError::EmptyInput));
        assert!(s.exchanges.is_empty());
    }

    #[test]
    fn malformed_twice_is_a_schema_violation() {
        let m = mock(&[("extract", "not json".into()), ("extract", fenced("{\"variables\": 3}"))]);
        let mut s = Session::new(&m, "p1");
        assert!(matches!(extract_sets("t", &mut s), Err(ExtractionError::SchemaViolation { .. })));
        assert_eq!(s.exchanges.len(), 2);
        assert!(s.exchanges[1].prompt.contains("did not match the required schema"));
    }

    #[test]
    fn reformat_retry_recovers() {
        let m = mock(&[("extract", "oops".into()), ("extract", fenced(SETS))]);
        let mut s = Session::new(&m, "p1");
        assert_eq!(extract_sets("t", &mut s).unwrap(), sets());
    }

    #[test]
    fn empty_variable_set_is_an_error() {
        let none = r#"{"variables":[],"objective":{"goal":"g","sense":"minimize"}}"#;
        let m = mock(&[("extract", fenced(none))]);
        assert_eq!(extract_sets("t", &mut Session::new(&m, "p")), Err(ExtractionError::NoVariables));
    }

    #[test]
    fn build_canonicalizes_the_proposal() {
        let proposal = r#"{"sense":"maximize","objective":"log(1+p)","constraints":["p <= 10","p >= 0"]}"#;
        let m = mock(&[("model", fenced(proposal))]);
        let p = build_model(&sets(), "t", &mut Session::new(&m, "p1")).unwrap();
        let x = Variable::free("p").with_unit("W");
        assert_eq!(p.objective, parse_expression("-log(1+p)", &[x.clone()]).unwrap());
        let lhs: Vec<String> = p.inequalities.iter().map(|c| c.lhs.to_string()).collect();
        assert_eq!(lhs, ["p - 10", "-p"]);
        assert_eq!(p.metadata.problem_id, "p1");
    }

    #[test]
    fn strict_inequality_triggers_one_repair() {
        let bad = r#"{"sense":"maximize","objective":"log(1+p)","constraints":["p < 10"]}"#;
        let good = r#"{"sense":"maximize","objective":"log(1+p)","constraints":["p <= 10"]}"#;
        let m = mock(&[("model", fenced(bad)), ("model", fenced(good))]);
        let mut s = Session::new(&m, "p1");
        let p = build_model(&sets(), "t", &mut s).unwrap();
        assert_eq!(p.inequalities.len(), 1);
        assert!(s.exchanges[1].prompt.contains("was rejected"));
    }

    #[test]
    fn unknown_atom_twice_is_unparseable() {
        let bad = r#"{"sense":"maximize","objective":"sigmoid(p)"}"#;
        let m = mock(&[("model", fenced(bad)), ("model", fenced(bad))]);
        assert!(matches!(
            build_model(&sets(), "t", &mut Session::new(&m, "p1")),
            Err(ExtractionError::Unparseable(_))
        ));
    }

    #[test]
    fn undeclared_variable_after_repair() {
        let bad = r#"{"sense":"minimize","objective":"q"}"#;
        let m = mock(&[("model", fenced(bad)), ("model", fenced(bad))]);
        assert_eq!(
            build_model(&sets(), "t", &mut Session::new(&m, "p1")),
            Err(ExtractionError::UndeclaredVariable("q".into()))
        );
    }

    #[test]
    fn chained_and_unicode_relations() {
        let r = split_relations("0 ≤ p <= 10").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].0.as_str(), r[0].1, r[0].2.as_str()), ("0", RawRelation::Le, "p"));
        assert_eq!(r[1].1, RawRelation::Le);
        assert_eq!(split_relations("a => b").unwrap()[0].1, RawRelation::Ge);
        assert_eq!(split_relations("a == b").unwrap()[0].1, RawRelation::Eq);
        assert!(split_relations("a + b").is_err());
        assert!(split_relations("<= 3").is_err());
    }

    fn model(obj: &str, cons: &[&str], ty: VarType) -> StandardForm {
        let proposal = ModelProposal {
            sense: Sense::Maximize,
            objective: obj.into(),
            constraints: cons.iter().map(|c| c.to_string()).collect(),
            bounds: BTreeMap::new(),
        };
        let mut s = sets();
        s.variables[0].var_type = ty;
        assemble(&proposal, &s, &Metadata::default()).unwrap()
    }

    #[test]
    fn consistency_all_true() {
        let m = mock(&[("consistency", fenced(r#"{"xi1":true,"xi2":true}"#))]);
        let p = model("log(1+p)", &["p <= 10", "p >= 0"], VarType::Continuous);
        let r = validate_consistency(&p, &sets(), "t", &mut Session::new(&m, "p1")).unwrap();
        assert!(r.t());
    }

    #[test]
    fn type_mismatch_fails_xi3() {
        let m = mock(&[("consistency", fenced(r#"{"xi1":true,"xi2":true}"#))]);
        let mut e = sets();
        e.variables[0].var_type = VarType::Integer;
        let p = model("log(1+p)", &["p <= 10"], VarType::Continuous);
        let r = validate_consistency(&p, &e, "t", &mut Session::new(&m, "p1")).unwrap();
        assert!(!r.xi3 && r.xi4 && !r.t());
    }

    #[test]
    fn missing_value_fails_xi4() {
        let m = mock(&[("consistency", fenced(r#"{"xi1":true,"xi2":true}"#))]);
        let p = model("log(1+p)", &["p <= 5"], VarType::Continuous);
        let r = validate_consistency(&p, &sets(), "t", &mut Session::new(&m, "p1")).unwrap();
        assert!(!r.xi4 && !r.t());
    }

    #[test]
    fn values_are_matched_after_unit_conversion() {
        let mut e = sets();
        e.constraints[0].value = 40.0;
        e.constraints[0].unit = "dBm".into();
        let p = model("log(1+p)", &["p <= 10"], VarType::Continuous);
        assert!(check_values(&p, &e).0);
        e.constraints[0].value = 10_000.0;
        e.constraints[0].unit = "mW".into();
        assert!(check_values(&p, &e).0);
        e.constraints[0].unit = "Hz".into();
        assert!(!check_values(&p, &e).0);
    }

    #[test]
    fn judged_criteria_come_from_the_backend() {
        let m = mock(&[("consistency", fenced(r#"{"xi1":false,"xi2":true,"explanations":{"xi1":"wrong goal"}}"#))]);
        let p = model("log(1+p)", &["p <= 10"], VarType::Continuous);
        let r = validate_consistency(&p, &sets(), "t", &mut Session::new(&m, "p1")).unwrap();
        assert!(!r.xi1 && !r.t());
        assert_eq!(r.explanations["xi1"], "wrong goal");
    }
}
