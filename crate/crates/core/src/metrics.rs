//! Evaluation metrics: perplexity, tagging accuracy, macro-averaged F1
//! and an exact one-sided sign test for paired system comparison.

use crate::error::{Error, Result};
use std::path::Path;

fn metrics_err(msg: impl Into<String>) -> Error {
    Error::Metrics { msg: msg.into() }
}

/// exp(-LL / tokens). The token count includes the sentence terminator,
/// one scored prediction per token.
pub fn perplexity(total_log_likelihood: f64, token_count: usize) -> Result<f64> {
    if token_count == 0 {
        return Err(metrics_err("perplexity over zero tokens"));
    }
    if !total_log_likelihood.is_finite() {
        return Err(metrics_err(format!(
            "non-finite log likelihood {total_log_likelihood}"
        )));
    }
    Ok((-total_log_likelihood / token_count as f64).exp())
}

/// Per-class confusion counts over a fixed class inventory.
#[derive(Debug, Clone)]
pub struct ConfusionCounts {
    classes: usize,
    tp: Vec<usize>,
    fp: Vec<usize>,
    fn_: Vec<usize>,
    correct: usize,
    total: usize,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> ConfusionCounts {
        ConfusionCounts {
            classes,
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
            correct: 0,
            total: 0,
        }
    }

    pub fn observe(&mut self, gold: usize, pred: usize) -> Result<()> {
        if gold >= self.classes || pred >= self.classes {
            return Err(metrics_err(format!(
                "label out of range: gold {gold}, pred {pred}, {} classes",
                self.classes
            )));
        }
        self.total += 1;
        if gold == pred {
            self.correct += 1;
            self.tp[gold] += 1;
        } else {
            self.fn_[gold] += 1;
            self.fp[pred] += 1;
        }
        Ok(())
    }

    pub fn from_pairs(classes: usize, pairs: &[(usize, usize)]) -> Result<ConfusionCounts> {
        let mut c = ConfusionCounts::new(classes);
        for &(gold, pred) in pairs {
            c.observe(gold, pred)?;
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn accuracy(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(metrics_err("accuracy over zero observations"));
        }
        Ok(self.correct as f64 / self.total as f64)
    }

    /// F1 for one class; 0 when the class never appears in gold or
    /// prediction.
    pub fn class_f1(&self, class: usize) -> f64 {
        let tp = self.tp[class] as f64;
        let denom = 2.0 * tp + self.fp[class] as f64 + self.fn_[class] as f64;
        if denom == 0.0 {
            0.0
        } else {
            2.0 * tp / denom
        }
    }

    /// Unweighted mean of per-class F1 over every class in the
    /// inventory; classes absent from the data pull the average down.
    pub fn macro_f1(&self) -> Result<f64> {
        let all: Vec<usize> = (0..self.classes).collect();
        self.macro_f1_over(&all)
    }

    /// Macro F1 restricted to a class subset (e.g. the dummy class
    /// excluded).
    pub fn macro_f1_over(&self, classes: &[usize]) -> Result<f64> {
        if classes.is_empty() {
            return Err(metrics_err("macro F1 over an empty class set"));
        }
        let mut sum = 0.0;
        for &c in classes {
            if c >= self.classes {
                return Err(metrics_err(format!(
                    "class {c} out of range, {} classes",
                    self.classes
                )));
            }
            sum += self.class_f1(c);
        }
        Ok(sum / classes.len() as f64)
    }
}

pub fn accuracy(pairs: &[(usize, usize)], classes: usize) -> Result<f64> {
    ConfusionCounts::from_pairs(classes, pairs)?.accuracy()
}

pub fn macro_f1(pairs: &[(usize, usize)], classes: usize) -> Result<f64> {
    ConfusionCounts::from_pairs(classes, pairs)?.macro_f1()
}

/// Exact one-sided tail P[Bin(trials, 1/2) >= successes], summed term
/// by term with log factorials.
pub fn binomial_tail(successes: usize, trials: usize) -> Result<f64> {
    if successes > trials {
        return Err(metrics_err(format!(
            "{successes} successes out of {trials} trials"
        )));
    }
    // ln k! for k = 0..=trials by cumulative summation
    let mut ln_fact = vec![0.0f64; trials + 1];
    for k in 1..=trials {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let ln2 = std::f64::consts::LN_2;
    let n = trials;
    let mut tail = 0.0;
    for k in successes..=n {
        let ln_term = ln_fact[n] - ln_fact[k] - ln_fact[n - k] - n as f64 * ln2;
        tail += ln_term.exp();
    }
    Ok(tail.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    /// Slots where only system A matched gold.
    pub wins_a: usize,
    /// Slots where only system B matched gold.
    pub wins_b: usize,
    /// Slots where both or neither matched.
    pub ties: usize,
    /// P[Bin(wins_a + wins_b, 1/2) >= max(wins)]; 1 when every slot
    /// ties.
    pub p_value: f64,
}

/// Paired sign test on per-slot correctness of two systems against the
/// same gold labels. Ties are discarded; the p-value is the exact
/// probability that a fair coin produces a split at least as lopsided.
pub fn paired_sign_test(gold: &[usize], pred_a: &[usize], pred_b: &[usize]) -> Result<SignTest> {
    if gold.len() != pred_a.len() || gold.len() != pred_b.len() {
        return Err(metrics_err(format!(
            "length mismatch: {} gold, {} and {} predictions",
            gold.len(),
            pred_a.len(),
            pred_b.len()
        )));
    }
    let mut wins_a = 0;
    let mut wins_b = 0;
    let mut ties = 0;
    for ((&g, &a), &b) in gold.iter().zip(pred_a).zip(pred_b) {
        match (a == g, b == g) {
            (true, false) => wins_a += 1,
            (false, true) => wins_b += 1,
            _ => ties += 1,
        }
    }
    let trials = wins_a + wins_b;
    let p_value = if trials == 0 {
        1.0
    } else {
        binomial_tail(wins_a.max(wins_b), trials)?
    };
    Ok(SignTest {
        wins_a,
        wins_b,
        ties,
        p_value,
    })
}

/// One tagged slot: document index, slot index, gold and predicted
/// label names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRecord {
    pub doc: usize,
    pub slot: usize,
    pub gold: String,
    pub pred: String,
}

/// Tab-separated, one slot per line: doc, slot, gold, pred.
pub fn save_predictions(records: &[PredictionRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.doc, r.slot, r.gold, r.pred));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(metrics_err(format!(
                "{}:{}: expected 4 tab-separated fields, found {}",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| {
                metrics_err(format!(
                    "{}:{}: {what} is not an integer: {s:?}",
                    path.display(),
                    i + 1
                ))
            })
        };
        records.push(PredictionRecord {
            doc: parse(fields[0], "document index")?,
            slot: parse(fields[1], "slot index")?,
            gold: fields[2].to_string(),
            pred: fields[3].to_string(),
        });
    }
    Ok(records)
}

/// Pairs two prediction files by position for a sign test, requiring
/// identical (doc, slot, gold) structure.
pub fn sign_test_from_predictions(
    a: &[PredictionRecord],
    b: &[PredictionRecord],
) -> Result<SignTest> {
    if a.len() != b.len() {
        return Err(metrics_err(format!(
            "prediction files differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut wins_a = 0;
    let mut wins_b = 0;
    let mut ties = 0;
    for (ra, rb) in a.iter().zip(b) {
        if ra.doc != rb.doc || ra.slot != rb.slot || ra.gold != rb.gold {
            return Err(metrics_err(format!(
                "prediction files disagree at doc {} slot {}",
                ra.doc, ra.slot
            )));
        }
        match (ra.pred == ra.gold, rb.pred == rb.gold) {
            (true, false) => wins_a += 1,
            (false, true) => wins_b += 1,
            _ => ties += 1,
        }
    }
    let trials = wins_a + wins_b;
    let p_value = if trials == 0 {
        1.0
    } else {
        binomial_tail(wins_a.max(wins_b), trials)?
    };
    Ok(SignTest {
        wins_a,
        wins_b,
        ties,
        p_value,
    })
}
