//! Finite, deterministic structural causal models.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the size of a parent-domain product enumerated during validation.
const MAX_TABLE_ROWS: usize = 1 << 20;

/// A total assignment of domain values to named variables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(BTreeMap<String, i64>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<i64> {
        self.0.get(name).copied()
    }

    pub fn set(&mut self, name: impl Into<String>, value: i64) {
        self.0.insert(name.into(), value);
    }

    pub fn with(mut self, name: impl Into<String>, value: i64) -> Self {
        self.set(name, value);
        self
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Restricts the assignment to the named variables, skipping absent ones.
    pub fn project<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Assignment {
        let mut out = Assignment::new();
        for name in names {
            if let Some(v) = self.get(name) {
                out.set(name, v);
            }
        }
        out
    }
}

impl<S: Into<String>> FromIterator<(S, i64)> for Assignment {
    fn from_iter<T: IntoIterator<Item = (S, i64)>>(iter: T) -> Self {
        Assignment(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}:{v}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub domain: Vec<i64>,
}

impl Variable {
    pub fn new(name: impl Into<String>, domain: Vec<i64>) -> Self {
        Self {
            name: name.into(),
            domain,
        }
    }

    pub fn boolean(name: impl Into<String>) -> Self {
        Self::new(name, vec![0, 1])
    }

    pub fn contains(&self, value: i64) -> bool {
        self.domain.contains(&value)
    }
}

/// Named Boolean primitives. Nonzero parent values count as true.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveOp {
    And,
    Or,
    Not,
    Eq,
    Neq,
    Copy,
}

impl PrimitiveOp {
    fn arity_ok(self, n: usize) -> bool {
        match self {
            PrimitiveOp::And | PrimitiveOp::Or => n >= 1,
            PrimitiveOp::Not | PrimitiveOp::Copy => n == 1,
            PrimitiveOp::Eq | PrimitiveOp::Neq => n >= 2,
        }
    }

    fn apply(self, args: &[i64]) -> i64 {
        let b = |x: bool| i64::from(x);
        match self {
            PrimitiveOp::And => b(args.iter().all(|&v| v != 0)),
            PrimitiveOp::Or => b(args.iter().any(|&v| v != 0)),
            PrimitiveOp::Not => b(args[0] == 0),
            PrimitiveOp::Eq => b(args.windows(2).all(|w| w[0] == w[1])),
            PrimitiveOp::Neq => b(args.windows(2).any(|w| w[0] != w[1])),
            PrimitiveOp::Copy => args[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mechanism {
    Exogenous,
    Op(PrimitiveOp),
    /// Truth table keyed by parent values in parent order.
    Table(BTreeMap<Vec<i64>, i64>),
}

impl Mechanism {
    fn apply(&self, args: &[i64]) -> Option<i64> {
        match self {
            Mechanism::Exogenous => None,
            Mechanism::Op(op) => Some(op.apply(args)),
            Mechanism::Table(t) => t.get(args).copied(),
        }
    }
}

/// One row of a truth-table mechanism.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub when: Vec<i64>,
    pub value: i64,
}

/// Declarative form of a variable, as stored in model files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub domain: Vec<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<PrimitiveOp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<TableRow>>,
}

impl VariableSpec {
    pub fn input(name: &str) -> Self {
        Self {
            name: name.to_string(),
            domain: vec![0, 1],
            parents: Vec::new(),
            op: None,
            table: None,
        }
    }

    pub fn op(name: &str, op: PrimitiveOp, parents: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            domain: vec![0, 1],
            parents: parents.iter().map(|p| p.to_string()).collect(),
            op: Some(op),
            table: None,
        }
    }
}

/// File format for causal models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variables: Vec<VariableSpec>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone)]
struct Node {
    var: Variable,
    parents: Vec<usize>,
    mechanism: Mechanism,
}

/// A DAG of finite-domain variables with deterministic mechanisms.
#[derive(Debug, Clone)]
pub struct CausalModel {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    order: Vec<usize>,
    inputs: Vec<usize>,
    outputs: Vec<usize>,
}

impl CausalModel {
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, v) in spec.variables.iter().enumerate() {
            if index.insert(v.name.clone(), i).is_some() {
                return Err(Error::DuplicateVariable(v.name.clone()));
            }
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))
        };

        let mut nodes = Vec::with_capacity(spec.variables.len());
        for v in &spec.variables {
            let mut domain = v.domain.clone();
            domain.sort_unstable();
            domain.dedup();
            if domain.is_empty() {
                return Err(Error::EmptyDomain(v.name.clone()));
            }
            let parents = v
                .parents
                .iter()
                .map(|p| lookup(p))
                .collect::<Result<Vec<_>>>()?;
            let invalid = |reason: &str| Error::InvalidMechanism {
                variable: v.name.clone(),
                reason: reason.to_string(),
            };
            let mechanism = match (&v.op, &v.table) {
                (Some(_), Some(_)) => return Err(invalid("both `op` and `table` given")),
                (None, None) if parents.is_empty() => Mechanism::Exogenous,
                (None, None) => return Err(invalid("has parents but no mechanism")),
                (Some(op), None) => {
                    if !op.arity_ok(parents.len()) {
                        return Err(invalid(&format!(
                            "`{op:?}` does not accept {} parents",
                            parents.len()
                        )));
                    }
                    Mechanism::Op(*op)
                }
                (None, Some(rows)) => {
                    let mut table = BTreeMap::new();
                    for row in rows {
                        if row.when.len() != parents.len() {
                            return Err(invalid("table row width differs from parent count"));
                        }
                        if table.insert(row.when.clone(), row.value).is_some() {
                            return Err(invalid("duplicate table row"));
                        }
                    }
                    Mechanism::Table(table)
                }
            };
            nodes.push(Node {
                var: Variable::new(v.name.clone(), domain),
                parents,
                mechanism,
            });
        }

        let order = topological_order(&nodes)?;
        let inputs = (0..nodes.len())
            .filter(|&i| nodes[i].mechanism == Mechanism::Exogenous)
            .collect();
        let outputs = spec
            .outputs
            .iter()
            .map(|o| lookup(o))
            .collect::<Result<Vec<_>>>()?;
        if outputs.is_empty() {
            return Err(Error::InvalidArgument("model declares no outputs".into()));
        }

        let model = Self {
            nodes,
            index,
            order,
            inputs,
            outputs,
        };
        model.check_totality()?;
        Ok(model)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_spec(&serde_json::from_str(text)?)
    }

    pub fn to_spec(&self) -> ModelSpec {
        let variables = self
            .nodes
            .iter()
            .map(|n| {
                let parents = n
                    .parents
                    .iter()
                    .map(|&p| self.nodes[p].var.name.clone())
                    .collect();
                let (op, table) = match &n.mechanism {
                    Mechanism::Exogenous => (None, None),
                    Mechanism::Op(op) => (Some(*op), None),
                    Mechanism::Table(t) => (
                        None,
                        Some(
                            t.iter()
                                .map(|(k, v)| TableRow {
                                    when: k.clone(),
                                    value: *v,
                                })
                                .collect(),
                        ),
                    ),
                };
                VariableSpec {
                    name: n.var.name.clone(),
                    domain: n.var.domain.clone(),
                    parents,
                    op,
                    table,
                }
            })
            .collect();
        ModelSpec {
            variables,
            outputs: self.output_names().map(str::to_string).collect(),
        }
    }

    fn check_totality(&self) -> Result<()> {
        for node in &self.nodes {
            if node.mechanism == Mechanism::Exogenous {
                continue;
            }
            let domains: Vec<&[i64]> = node
                .parents
                .iter()
                .map(|&p| self.nodes[p].var.domain.as_slice())
                .collect();
            let rows: usize = domains
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(d.len()))
                .unwrap_or(usize::MAX);
            if rows > MAX_TABLE_ROWS {
                return Err(Error::InvalidMechanism {
                    variable: node.var.name.clone(),
                    reason: format!("parent domain product too large ({rows} rows)"),
                });
            }
            for args in cartesian(&domains) {
                match node.mechanism.apply(&args) {
                    None => {
                        return Err(Error::InvalidMechanism {
                            variable: node.var.name.clone(),
                            reason: format!("no value for parent values {args:?}"),
                        })
                    }
                    Some(v) if !node.var.contains(v) => {
                        return Err(Error::InvalidMechanism {
                            variable: node.var.name.clone(),
                            reason: format!("value {v} for {args:?} is outside the domain"),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    pub fn variables(&self) -> impl Iterator<Item = &Variable> {
        self.nodes.iter().map(|n| &n.var)
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.index.get(name).map(|&i| &self.nodes[i].var)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn parents(&self, name: &str) -> Option<Vec<&str>> {
        self.index.get(name).map(|&i| {
            self.nodes[i]
                .parents
                .iter()
                .map(|&p| self.nodes[p].var.name.as_str())
                .collect()
        })
    }

    pub fn is_exogenous(&self, name: &str) -> bool {
        self.index
            .get(name)
            .is_some_and(|&i| self.nodes[i].mechanism == Mechanism::Exogenous)
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().map(|&i| self.nodes[i].var.name.as_str())
    }

    pub fn output_names(&self) -> impl Iterator<Item = &str> {
        self.outputs
            .iter()
            .map(|&i| self.nodes[i].var.name.as_str())
    }

    /// Variable names in evaluation order.
    pub fn topological_names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(|&i| self.nodes[i].var.name.as_str())
    }

    pub fn evaluate(&self, input: &Assignment) -> Result<Assignment> {
        self.do_intervene(input, &Assignment::new())
    }

    /// Evaluates with every variable in `settings` pinned to its set value.
    pub fn do_intervene(&self, input: &Assignment, settings: &Assignment) -> Result<Assignment> {
        let mut pinned: Vec<Option<i64>> = vec![None; self.nodes.len()];
        for (name, value) in settings.iter() {
            let i = *self
                .index
                .get(name)
                .ok_or_else(|| Error::UnknownVariable(name.to_string()))?;
            self.check_domain(i, value)?;
            pinned[i] = Some(value);
        }

        let mut values = vec![0i64; self.nodes.len()];
        let mut args = Vec::new();
        for &i in &self.order {
            let node = &self.nodes[i];
            values[i] = if let Some(v) = pinned[i] {
                v
            } else if node.mechanism == Mechanism::Exogenous {
                let v = input
                    .get(&node.var.name)
                    .ok_or_else(|| Error::MissingInput(node.var.name.clone()))?;
                self.check_domain(i, v)?;
                v
            } else {
                args.clear();
                args.extend(node.parents.iter().map(|&p| values[p]));
                // totality was checked at construction
                node.mechanism
                    .apply(&args)
                    .expect("mechanism is total over parent domains")
            };
        }
        Ok(self
            .nodes
            .iter()
            .zip(values)
            .map(|(n, v)| (n.var.name.clone(), v))
            .collect())
    }

    /// Runs on `source`, then runs on `base` with `vars` pinned to their source values.
    pub fn interchange(
        &self,
        source: &Assignment,
        base: &Assignment,
        vars: &[&str],
    ) -> Result<Assignment> {
        let source_run = self.evaluate(source)?;
        let mut settings = Assignment::new();
        for &v in vars {
            let value = source_run
                .get(v)
                .ok_or_else(|| Error::UnknownVariable(v.to_string()))?;
            settings.set(v, value);
        }
        self.do_intervene(base, &settings)
    }

    /// Every assignment to the exogenous variables, in lexicographic domain order.
    pub fn input_space(&self) -> Vec<Assignment> {
        let domains: Vec<&[i64]> = self
            .inputs
            .iter()
            .map(|&i| self.nodes[i].var.domain.as_slice())
            .collect();
        cartesian(&domains)
            .map(|values| {
                self.inputs
                    .iter()
                    .zip(values)
                    .map(|(&i, v)| (self.nodes[i].var.name.clone(), v))
                    .collect()
            })
            .collect()
    }

    fn check_domain(&self, i: usize, value: i64) -> Result<()> {
        if self.nodes[i].var.contains(value) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                variable: self.nodes[i].var.name.clone(),
                value,
            })
        }
    }
}

/// Kahn's algorithm; ready nodes are released in declaration order.
fn topological_order(nodes: &[Node]) -> Result<Vec<usize>> {
    let n = nodes.len();
    let mut indegree: Vec<usize> = nodes.iter().map(|node| node.parents.len()).collect();
    let mut children = vec![Vec::new(); n];
    for (i, node) in nodes.iter().enumerate() {
        for &p in &node.parents {
            children[p].push(i);
        }
    }
    let mut ready: std::collections::BTreeSet<usize> =
        (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        return Err(Error::Cycle(nodes[stuck].var.name.clone()));
    }
    Ok(order)
}

/// Odometer-style iterator over the product of finite domains.
fn cartesian<'a>(domains: &'a [&'a [i64]]) -> impl Iterator<Item = Vec<i64>> + 'a {
    let total: usize = domains.iter().map(|d| d.len()).product();
    (0..total).map(move |mut k| {
        let mut out = vec![0; domains.len()];
        for (slot, d) in out.iter_mut().zip(domains.iter()).rev() {
            *slot = d[k % d.len()];
            k /= d.len();
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn or_model() -> CausalModel {
        CausalModel::from_spec(&ModelSpec {
            variables: vec![
                VariableSpec::input("a"),
                VariableSpec::input("b"),
                VariableSpec::op("y", PrimitiveOp::Or, &["a", "b"]),
            ],
            outputs: vec!["y".into()],
        })
        .unwrap()
    }

    #[test]
    fn or_truth_table() {
        let m = or_model();
        let out = m
            .evaluate(&Assignment::new().with("a", 1).with("b", 0))
            .unwrap();
        assert_eq!(
            out,
            Assignment::new().with("a", 1).with("b", 0).with("y", 1)
        );
    }

    #[test]
    fn pinned_output() {
        let m = or_model();
        let out = m
            .do_intervene(
                &Assignment::new().with("a", 0).with("b", 0),
                &Assignment::new().with("y", 1),
            )
            .unwrap();
        assert_eq!(out.get("y"), Some(1));
    }

    #[test]
    fn rejects_missing_input_and_bad_values() {
        let m = or_model();
        assert!(matches!(
            m.evaluate(&Assignment::new().with("a", 1)),
            Err(Error::MissingInput(v)) if v == "b"
        ));
        assert!(matches!(
            m.evaluate(&Assignment::new().with("a", 2).with("b", 0)),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            m.do_intervene(
                &Assignment::new().with("a", 0).with("b", 0),
                &Assignment::new().with("y", 5)
            ),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn rejects_cycles_duplicates_and_partial_tables() {
        let cyc = ModelSpec {
            variables: vec![
                VariableSpec::op("a", PrimitiveOp::Not, &["b"]),
                VariableSpec::op("b", PrimitiveOp::Not, &["a"]),
            ],
            outputs: vec!["a".into()],
        };
        assert!(matches!(CausalModel::from_spec(&cyc), Err(Error::Cycle(_))));

        let dup = ModelSpec {
            variables: vec![VariableSpec::input("a"), VariableSpec::input("a")],
            outputs: vec!["a".into()],
        };
        assert!(matches!(
            CausalModel::from_spec(&dup),
            Err(Error::DuplicateVariable(_))
        ));

        let mut partial = VariableSpec::input("y");
        partial.parents = vec!["a".into()];
        partial.table = Some(vec![TableRow {
            when: vec![0],
            value: 1,
        }]);
        let spec = ModelSpec {
            variables: vec![VariableSpec::input("a"), partial],
            outputs: vec!["y".into()],
        };
        assert!(matches!(
            CausalModel::from_spec(&spec),
            Err(Error::InvalidMechanism { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{
            "variables": [
                {"name": "a", "domain": [0, 1]},
                {"name": "b", "domain": [0, 1]},
                {"name": "y", "domain": [0, 1], "parents": ["a", "b"],
                 "table": [{"when": [0, 0], "value": 0}, {"when": [0, 1], "value": 1},
                           {"when": [1, 0], "value": 1}, {"when": [1, 1], "value": 0}]}
            ],
            "outputs": ["y"]
        }"#;
        let m = CausalModel::from_json(text).unwrap();
        let back = CausalModel::from_spec(&m.to_spec()).unwrap();
        for input in m.input_space() {
            assert_eq!(m.evaluate(&input).unwrap(), back.evaluate(&input).unwrap());
        }
        assert_eq!(m.input_space().len(), 4);
    }
}
