//! The six-token logic task: o5 = ((t2 ≠ t4) ∧ (t0 ≠ t5)) ∨ (t1 = t3).

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::causal::{
    Assignment, CausalModel, LowLevelModel, ModelSpec, Patch, PrimitiveOp, Site, TableRow,
    VariableSpec,
};
use crate::error::{Error, Result};

pub const SEQ_LEN: usize = 6;
pub const WIRES: [&str; 5] = ["o1", "o2", "o3", "o4", "o5"];

/// A fixed-length token sequence t0..t5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenInput(pub [u32; SEQ_LEN]);

impl TokenInput {
    pub fn new(tokens: [u32; SEQ_LEN], vocab: u32) -> Result<Self> {
        if let Some(t) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::InvalidArgument(format!(
                "token {t} outside vocabulary of size {vocab}"
            )));
        }
        Ok(Self(tokens))
    }

    /// Parses the comma-separated form produced by `Display`.
    pub fn parse(text: &str, vocab: u32) -> Result<Self> {
        let bad =
            || Error::InvalidArgument(format!("`{text}` is not {SEQ_LEN} comma-separated tokens"));
        let parts: Vec<u32> = text
            .split(',')
            .map(|p| p.trim().parse::<u32>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let tokens: [u32; SEQ_LEN] = parts.try_into().map_err(|_| bad())?;
        Self::new(tokens, vocab)
    }

    pub fn tokens(&self) -> &[u32; SEQ_LEN] {
        &self.0
    }

    pub fn wires(&self) -> Wires {
        let t = &self.0;
        let o1 = t[2] != t[4];
        let o2 = t[0] != t[5];
        let o3 = t[1] == t[3];
        let o4 = o1 && o2;
        Wires {
            o1,
            o2,
            o3,
            o4,
            o5: o4 || o3,
        }
    }

    pub fn class(&self) -> LogicClass {
        let w = self.wires();
        LogicClass {
            o1: w.o1,
            o2: w.o2,
            o3: w.o3,
        }
    }

    pub fn label(&self) -> i64 {
        i64::from(self.wires().o5)
    }
}

impl fmt::Display for TokenInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Values of the five intermediate wires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wires {
    pub o1: bool,
    pub o2: bool,
    pub o3: bool,
    pub o4: bool,
    pub o5: bool,
}

impl Wires {
    pub fn get(&self, name: &str) -> Option<bool> {
        Some(match name {
            "o1" => self.o1,
            "o2" => self.o2,
            "o3" => self.o3,
            "o4" => self.o4,
            "o5" => self.o5,
            _ => return None,
        })
    }

    pub fn as_vec(&self) -> Vec<f64> {
        [self.o1, self.o2, self.o3, self.o4, self.o5]
            .iter()
            .map(|&b| f64::from(u8::from(b)))
            .collect()
    }
}

/// Truth values of the three primitive (non)equalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LogicClass {
    pub o1: bool,
    pub o2: bool,
    pub o3: bool,
}

impl LogicClass {
    /// All eight classes, ordered by `index`.
    pub fn all() -> impl Iterator<Item = LogicClass> {
        (0..8).map(LogicClass::from_index)
    }

    pub fn from_index(i: usize) -> Self {
        Self {
            o1: i & 4 != 0,
            o2: i & 2 != 0,
            o3: i & 1 != 0,
        }
    }

    pub fn index(&self) -> usize {
        4 * usize::from(self.o1) + 2 * usize::from(self.o2) + usize::from(self.o3)
    }

    pub fn o4(&self) -> bool {
        self.o1 && self.o2
    }

    pub fn o5(&self) -> bool {
        self.o4() || self.o3
    }

    /// Samples tokens realising this class, uniformly among consistent sequences.
    pub fn sample<R: Rng + ?Sized>(&self, vocab: u32, rng: &mut R) -> Result<TokenInput> {
        if vocab < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary size must be at least 2, got {vocab}"
            )));
        }
        let mut t = [0u32; SEQ_LEN];
        let mut pair = |a: usize, b: usize, equal: bool, t: &mut [u32; SEQ_LEN]| {
            t[a] = rng.random_range(0..vocab);
            t[b] = if equal {
                t[a]
            } else {
                // uniform over the other vocab - 1 tokens
                let r = rng.random_range(0..vocab - 1);
                if r >= t[a] {
                    r + 1
                } else {
                    r
                }
            };
        };
        pair(2, 4, !self.o1, &mut t);
        pair(0, 5, !self.o2, &mut t);
        pair(1, 3, self.o3, &mut t);
        Ok(TokenInput(t))
    }
}

impl fmt::Display for LogicClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{})",
            u8::from(self.o1),
            u8::from(self.o2),
            u8::from(self.o3)
        )
    }
}

/// τ for token inputs: the hypothesis' exogenous assignment {o1, o2, o3}.
pub fn encode_logic_input(input: &TokenInput) -> Assignment {
    let w = input.wires();
    Assignment::new()
        .with("o1", i64::from(w.o1))
        .with("o2", i64::from(w.o2))
        .with("o3", i64::from(w.o3))
}

/// Hypothesis with only the output variable: o5 := (o1 ∧ o2) ∨ o3 as one truth table.
pub fn output_only_hypothesis() -> CausalModel {
    let table = LogicClass::all()
        .map(|c| TableRow {
            when: vec![i64::from(c.o1), i64::from(c.o2), i64::from(c.o3)],
            value: i64::from(c.o5()),
        })
        .collect();
    let mut o5 = VariableSpec::input("o5");
    o5.parents = vec!["o1".into(), "o2".into(), "o3".into()];
    o5.table = Some(table);
    CausalModel::from_spec(&ModelSpec {
        variables: vec![
            VariableSpec::input("o1"),
            VariableSpec::input("o2"),
            VariableSpec::input("o3"),
            o5,
        ],
        outputs: vec!["o5".into()],
    })
    .expect("static model is valid")
}

/// The full hierarchy o1, o2, o3 → o4 → o5.
pub fn full_hypothesis() -> CausalModel {
    CausalModel::from_spec(&ModelSpec {
        variables: vec![
            VariableSpec::input("o1"),
            VariableSpec::input("o2"),
            VariableSpec::input("o3"),
            VariableSpec::op("o4", PrimitiveOp::And, &["o1", "o2"]),
            VariableSpec::op("o5", PrimitiveOp::Or, &["o4", "o3"]),
        ],
        outputs: vec!["o5".into()],
    })
    .expect("static model is valid")
}

/// Hand-built circuit computing the task through named, patchable wires.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogicCircuit;

impl LogicCircuit {
    pub fn forward(&self, input: &TokenInput) -> (i64, Wires) {
        let w = input.wires();
        (i64::from(w.o5), w)
    }

    /// Recomputes downstream wires with `overrides` pinned.
    pub fn patched_forward(
        &self,
        base: &TokenInput,
        overrides: &BTreeMap<String, bool>,
    ) -> Result<(i64, Wires)> {
        for name in overrides.keys() {
            if !WIRES.contains(&name.as_str()) {
                return Err(Error::InvalidSite(format!("unknown wire `{name}`")));
            }
        }
        let pin = |name: &str, computed: bool| overrides.get(name).copied().unwrap_or(computed);
        let raw = base.wires();
        let o1 = pin("o1", raw.o1);
        let o2 = pin("o2", raw.o2);
        let o3 = pin("o3", raw.o3);
        let o4 = pin("o4", o1 && o2);
        let o5 = pin("o5", o4 || o3);
        let w = Wires { o1, o2, o3, o4, o5 };
        Ok((i64::from(o5), w))
    }

    fn run(&self, input: &TokenInput, patches: &[Patch]) -> Result<Wires> {
        if patches.is_empty() {
            return Ok(input.wires());
        }
        let mut overrides = BTreeMap::new();
        for p in patches {
            let Site::Variable { name } = &p.site else {
                return Err(Error::InvalidSite(format!(
                    "{} is not a circuit wire",
                    p.site
                )));
            };
            overrides.insert(name.clone(), p.value >= 0.5);
        }
        Ok(self.patched_forward(input, &overrides)?.1)
    }
}

impl LowLevelModel for LogicCircuit {
    type Input = TokenInput;

    fn read_site(&self, input: &TokenInput, patches: &[Patch], site: &Site) -> Result<f64> {
        self.check_site(site)?;
        let Site::Variable { name } = site else {
            unreachable!("checked above")
        };
        let w = self.run(input, patches)?;
        Ok(f64::from(u8::from(w.get(name).expect("checked wire"))))
    }

    fn predict(&self, input: &TokenInput, patches: &[Patch]) -> Result<i64> {
        Ok(i64::from(self.run(input, patches)?.o5))
    }

    fn check_site(&self, site: &Site) -> Result<()> {
        match site {
            Site::Variable { name } if WIRES.contains(&name.as_str()) => Ok(()),
            other => Err(Error::InvalidSite(format!("{other} is not a circuit wire"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tokens(t: [u32; 6]) -> TokenInput {
        TokenInput::new(t, 20).unwrap()
    }

    #[test]
    fn display_round_trip() {
        let x = tokens([0, 19, 3, 3, 12, 5]);
        assert_eq!(TokenInput::parse(&x.to_string(), 20).unwrap(), x);
        assert!(TokenInput::parse("1,2,3", 20).is_err());
        assert!(TokenInput::parse("1,2,3,4,5,20", 20).is_err());
        assert!(TokenInput::parse("1,2,x,4,5,6", 20).is_err());
    }

    #[test]
    fn circuit_examples() {
        // t2≠t4, t0=t5, t1=t3
        let (label, w) = LogicCircuit.forward(&tokens([1, 2, 3, 2, 4, 1]));
        assert_eq!(
            (w.o1, w.o2, w.o3, w.o4, label),
            (true, false, true, false, 1)
        );
        // all equal
        let (label, w) = LogicCircuit.forward(&tokens([7; 6]));
        assert_eq!((w.o1, w.o2, w.o3, label), (false, false, true, 1));
        // t2≠t4, t0≠t5, t1≠t3
        let (label, w) = LogicCircuit.forward(&tokens([0, 1, 2, 3, 4, 5]));
        assert_eq!((w.o4, label), (true, 1));
    }

    #[test]
    fn patched_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = LogicClass::from_index(0).sample(20, &mut rng).unwrap();
        let set = |k: &str, v: bool| BTreeMap::from([(k.to_string(), v)]);
        assert_eq!(
            LogicCircuit
                .patched_forward(&base, &set("o3", true))
                .unwrap()
                .0,
            1
        );

        let base = LogicClass::from_index(6).sample(20, &mut rng).unwrap();
        assert_eq!(LogicCircuit.forward(&base).0, 1);
        assert_eq!(
            LogicCircuit
                .patched_forward(&base, &set("o4", false))
                .unwrap()
                .0,
            0
        );
        assert_eq!(
            LogicCircuit
                .patched_forward(&base, &BTreeMap::new())
                .unwrap(),
            LogicCircuit.forward(&base)
        );
        assert!(LogicCircuit
            .patched_forward(&base, &set("o9", true))
            .is_err());
    }

    #[test]
    fn circuit_matches_formula_and_hypotheses_on_every_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let coarse = output_only_hypothesis();
        let full = full_hypothesis();
        for class in LogicClass::all() {
            for _ in 0..20 {
                let x = class.sample(5, &mut rng).unwrap();
                assert_eq!(x.class(), class);
                let t = x.tokens();
                let formula = ((t[2] != t[4]) && (t[0] != t[5])) || (t[1] == t[3]);
                assert_eq!(LogicCircuit.forward(&x).0, i64::from(formula));
                let h = encode_logic_input(&x);
                assert_eq!(coarse.evaluate(&h).unwrap().get("o5"), Some(x.label()));
                assert_eq!(full.evaluate(&h).unwrap().get("o5"), Some(x.label()));
            }
        }
    }

    #[test]
    fn patching_o5_forces_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for class in LogicClass::all() {
            let x = class.sample(20, &mut rng).unwrap();
            for c in [false, true] {
                let out = LogicCircuit
                    .patched_forward(&x, &BTreeMap::from([("o5".to_string(), c)]))
                    .unwrap();
                assert_eq!(out.0, i64::from(c));
            }
        }
    }

    #[test]
    fn hypothesis_examples() {
        let full = full_hypothesis();
        let input = |a, b, c| Assignment::new().with("o1", a).with("o2", b).with("o3", c);
        let out = full.evaluate(&input(1, 1, 0)).unwrap();
        assert_eq!((out.get("o4"), out.get("o5")), (Some(1), Some(1)));
        let out = full.evaluate(&input(0, 0, 1)).unwrap();
        assert_eq!((out.get("o4"), out.get("o5")), (Some(0), Some(1)));

        let pinned = full
            .do_intervene(&input(1, 1, 0), &Assignment::new().with("o4", 0))
            .unwrap();
        assert_eq!(pinned.get("o5"), Some(0));
        let pinned = full
            .do_intervene(&input(0, 0, 0), &Assignment::new().with("o3", 1))
            .unwrap();
        assert_eq!(pinned.get("o5"), Some(1));

        // II pins o5 to the source's value
        let ii = full
            .interchange(&input(0, 0, 1), &input(1, 1, 0), &["o5"])
            .unwrap();
        assert_eq!(ii.get("o5"), Some(1));
        let ii = full
            .interchange(&input(1, 1, 0), &input(0, 0, 1), &["o4"])
            .unwrap();
        assert_eq!(ii.get("o5"), Some(1));
    }

    #[test]
    fn small_vocab_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(LogicClass::from_index(7).sample(1, &mut rng).is_err());
        assert!(TokenInput::new([0, 0, 0, 0, 0, 20], 20).is_err());
    }
}
