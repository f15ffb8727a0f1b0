//! Balanced dataset generation for the logic task, with CSV persistence.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal::LowLevelModel;
use crate::error::{Error, Result};
use crate::models::logic::{LogicClass, TokenInput, SEQ_LEN, WIRES};

pub const DEFAULT_VOCAB: u32 = 20;
pub const DEFAULT_SIZE: usize = 8000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: TokenInput,
    pub label: i64,
}

/// Empirical frequency of each wire being true.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceStats {
    pub n: usize,
    pub vocab: u32,
    pub frequencies: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub vocab: u32,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn inputs(&self) -> Vec<TokenInput> {
        self.examples.iter().map(|e| e.input).collect()
    }

    pub fn balance(&self) -> BalanceStats {
        let n = self.examples.len().max(1) as f64;
        let frequencies = WIRES
            .iter()
            .map(|w| {
                let hits = self
                    .examples
                    .iter()
                    .filter(|e| e.input.wires().get(w).expect("known wire"))
                    .count();
                (w.to_string(), hits as f64 / n)
            })
            .collect();
        BalanceStats {
            n: self.examples.len(),
            vocab: self.vocab,
            frequencies,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t0", "t1", "t2", "t3", "t4", "t5", "label"])?;
        for e in &self.examples {
            let mut row: Vec<String> = e.input.tokens().iter().map(|t| t.to_string()).collect();
            row.push(e.label.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV dataset; labels must match the task formula.
    pub fn read_csv<R: Read>(reader: R, vocab: u32) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut examples = Vec::new();
        for (row, record) in r.records().enumerate() {
            let record = record?;
            if record.len() != SEQ_LEN + 1 {
                return Err(Error::InvalidArgument(format!(
                    "row {row}: expected {} columns, got {}",
                    SEQ_LEN + 1,
                    record.len()
                )));
            }
            let parse = |i: usize| -> Result<i64> {
                record[i]
                    .trim()
                    .parse::<i64>()
                    .map_err(|e| Error::InvalidArgument(format!("row {row}, column {i}: {e}")))
            };
            let mut tokens = [0u32; SEQ_LEN];
            for (i, t) in tokens.iter_mut().enumerate() {
                *t = u32::try_from(parse(i)?)
                    .map_err(|_| Error::InvalidArgument(format!("row {row}: negative token")))?;
            }
            let input = TokenInput::new(tokens, vocab)?;
            let label = parse(SEQ_LEN)?;
            if label != input.label() {
                return Err(Error::InvalidArgument(format!(
                    "row {row}: label {label} disagrees with the task formula"
                )));
            }
            examples.push(Example { input, label });
        }
        Ok(Self { vocab, examples })
    }
}

/// Draws o1, o2, o3 as independent fair coins per example, then tokens consistent with them.
pub fn generate_dataset(n: usize, vocab: u32, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "dataset size must be at least 1".into(),
        ));
    }
    if vocab < 2 {
        return Err(Error::InvalidArgument(format!(
            "vocabulary size must be at least 2, got {vocab}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|_| {
            let class = LogicClass {
                o1: rng.random_bool(0.5),
                o2: rng.random_bool(0.5),
                o3: rng.random_bool(0.5),
            };
            let input = class.sample(vocab, &mut rng)?;
            Ok(Example {
                input,
                label: i64::from(class.o5()),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { vocab, examples })
}

/// `per_class` inputs for each of the eight classes, grouped in class-index order.
pub fn class_balanced_inputs(per_class: usize, vocab: u32, seed: u64) -> Result<Vec<TokenInput>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(8 * per_class);
    for class in LogicClass::all() {
        for _ in 0..per_class {
            out.push(class.sample(vocab, &mut rng)?);
        }
    }
    Ok(out)
}

/// Keeps the examples on which `model` predicts the ground-truth label.
pub fn filter_correct<M>(model: &M, dataset: &Dataset) -> Result<Dataset>
where
    M: LowLevelModel<Input = TokenInput>,
{
    let mut examples = Vec::with_capacity(dataset.len());
    for e in &dataset.examples {
        if model.predict(&e.input, &[])? == e.label {
            examples.push(*e);
        }
    }
    Ok(Dataset {
        vocab: dataset.vocab,
        examples,
    })
}

/// Takes up to `per_class` correct examples of each class from `dataset`, grouped by class index.
pub fn stratified_by_class(dataset: &Dataset, per_class: usize) -> Vec<TokenInput> {
    let mut buckets: Vec<Vec<TokenInput>> = vec![Vec::new(); 8];
    for e in &dataset.examples {
        let b = &mut buckets[e.input.class().index()];
        if b.len() < per_class {
            b.push(e.input);
        }
    }
    buckets.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::{Patch, Site};
    use crate::models::logic::LogicCircuit;

    #[test]
    fn balanced_frequencies() {
        let d = generate_dataset(8000, 20, 1).unwrap();
        let stats = d.balance();
        for (name, f) in &stats.frequencies[..3] {
            assert!((0.48..=0.52).contains(f), "{name}: {f}");
        }
        for e in &d.examples {
            assert_eq!(e.label, e.input.label());
        }
    }

    #[test]
    fn deterministic_and_validated() {
        assert_eq!(
            generate_dataset(50, 20, 9).unwrap(),
            generate_dataset(50, 20, 9).unwrap()
        );
        assert_ne!(
            generate_dataset(50, 20, 9).unwrap(),
            generate_dataset(50, 20, 10).unwrap()
        );
        assert!(generate_dataset(10, 1, 0).is_err());
        assert!(generate_dataset(0, 20, 0).is_err());
    }

    #[test]
    fn forced_class_by_rejection_has_label_one() {
        let hit = (0..1000)
            .map(|seed| generate_dataset(1, 20, seed).unwrap())
            .find(|d| d.examples[0].input.class().index() == 7)
            .expect("some seed draws class (1,1,1)");
        assert_eq!(hit.examples[0].label, 1);
    }

    #[test]
    fn csv_round_trip_and_label_check() {
        let d = generate_dataset(30, 20, 4).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice(), 20).unwrap();
        assert_eq!(back, d);

        let bad = "t0,t1,t2,t3,t4,t5,label\n0,0,0,0,0,0,0\n";
        assert!(Dataset::read_csv(bad.as_bytes(), 20).is_err());
    }

    struct ConstantZero;
    impl LowLevelModel for ConstantZero {
        type Input = TokenInput;
        fn read_site(&self, _: &TokenInput, _: &[Patch], _: &Site) -> Result<f64> {
            Ok(0.0)
        }
        fn predict(&self, _: &TokenInput, _: &[Patch]) -> Result<i64> {
            Ok(0)
        }
        fn check_site(&self, _: &Site) -> Result<()> {
            Ok(())
        }
    }

    #[test]
    fn filter_examples() {
        let d = generate_dataset(400, 20, 2).unwrap();
        assert_eq!(filter_correct(&LogicCircuit, &d).unwrap(), d);
        let zeros = filter_correct(&ConstantZero, &d).unwrap();
        assert!(zeros.examples.iter().all(|e| e.label == 0));
        assert_eq!(
            zeros.len(),
            d.examples.iter().filter(|e| e.label == 0).count()
        );
    }

    #[test]
    fn class_balanced_layout() {
        let xs = class_balanced_inputs(3, 20, 0).unwrap();
        assert_eq!(xs.len(), 24);
        for (i, x) in xs.iter().enumerate() {
            assert_eq!(x.class().index(), i / 3);
        }
    }
}
