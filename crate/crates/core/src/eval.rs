//! Confusion matrices, metrics, and dataset evaluation.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::dataset::read_batches;
use crate::error::{Error, Result};
use crate::features::FeatureRecord;
use crate::labeling::Label;
use crate::model::{Prediction, Session, WeightBundle};

/// `counts[i][j]`: true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n: n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Config("confusion matrix must be square".into()));
        }
        Ok(Self {
            n,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.n || predicted >= self.n {
            return Err(Error::Config(format!(
                "class pair ({truth}, {predicted}) outside {} classes",
                self.n
            )));
        }
        self.counts[truth * self.n + predicted] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.counts[truth * self.n..(truth + 1) * self.n]
            .iter()
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Each row as percentages of its total; empty rows are all zero.
    pub fn row_percentages(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                let t = self.row_total(i);
                (0..self.n)
                    .map(|j| {
                        if t == 0 {
                            0.0
                        } else {
                            100.0 * self.get(i, j) as f64 / t as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn to_csv(&self, names: &[String]) -> String {
        let mut s = String::from("true\\pred");
        for n in names {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for (i, row) in self.row_percentages().iter().enumerate() {
            s.push_str(&names[i]);
            for (j, pct) in row.iter().enumerate() {
                let _ = write!(s, ",{} ({pct:.2}%)", self.get(i, j));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// TP / (TP + FN) for the positive class; NaN if it has no samples.
    pub recall: f64,
    /// TN / (TN + FP) over all other classes; NaN if they have no samples.
    pub specificity: f64,
}

/// Accuracy, recall and specificity with `positive` treated one-vs-rest.
pub fn metrics(cm: &ConfusionMatrix, positive: usize) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyConfusion);
    }
    if positive >= cm.n {
        return Err(Error::Config(format!(
            "positive class {positive} outside {} classes",
            cm.n
        )));
    }
    let tp = cm.get(positive, positive);
    let pos_total = cm.row_total(positive);
    let predicted_pos: u64 = (0..cm.n).map(|i| cm.get(i, positive)).sum();
    let fp = predicted_pos - tp;
    let neg_total = total - pos_total;
    let tn = neg_total - fp;
    let ratio = |a: u64, b: u64| {
        if b == 0 {
            f64::NAN
        } else {
            a as f64 / b as f64
        }
    };
    Ok(Metrics {
        accuracy: cm.trace() as f64 / total as f64,
        recall: ratio(tp, pos_total),
        specificity: ratio(tn, neg_total),
    })
}

/// What the model is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// CLEAN (0) vs INTERF (1) from the envelope label; NA records skipped.
    Binary,
    /// Interferer count 0 to 5 from the envelope.
    InterfererCount,
}

impl Target {
    pub fn n_classes(self) -> usize {
        match self {
            Target::Binary => 2,
            Target::InterfererCount => 6,
        }
    }

    pub fn for_classes(n: usize) -> Result<Self> {
        match n {
            2 => Ok(Target::Binary),
            6 => Ok(Target::InterfererCount),
            n => Err(Error::Config(format!(
                "no evaluation target for {n} classes"
            ))),
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            Target::Binary => vec![Label::Clean.to_string(), Label::Interf.to_string()],
            Target::InterfererCount => (0..6).map(|i| i.to_string()).collect(),
        }
    }

    /// True class of a record, or `None` if it is not scored.
    pub fn truth(self, record: &FeatureRecord) -> Option<usize> {
        match self {
            Target::Binary => match record.envelope.label {
                Label::Na => None,
                l => Some(l.code() as usize),
            },
            Target::InterfererCount => Some(record.envelope.n_interferers as usize),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub target: Target,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    /// One-vs-rest (recall, specificity) per class.
    pub per_class: Vec<(f64, f64)>,
    /// Recall/specificity with INTERF positive (binary target only).
    pub binary: Option<Metrics>,
    pub skipped: u64,
}

impl Evaluation {
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("class,recall,specificity\n");
        for (name, (r, sp)) in self.target.class_names().iter().zip(&self.per_class) {
            let _ = writeln!(s, "{name},{r:.6},{sp:.6}");
        }
        let _ = writeln!(s, "accuracy,{:.6},", self.accuracy);
        s
    }
}

/// Scores every record of an `.ifr` file with a warmed session, calling
/// `on_record` for each scored record in file order.
pub fn evaluate_with(
    session: &mut Session,
    dataset: impl AsRef<Path>,
    mut on_record: impl FnMut(&FeatureRecord, Option<usize>, &Prediction),
) -> Result<Evaluation> {
    let target = Target::for_classes(session.config().n_classes)?;
    if !session.is_warm() {
        session.warmup()?;
    }
    let mut cm = ConfusionMatrix::new(target.n_classes());
    let mut skipped = 0;
    for batch in read_batches(dataset, 32)? {
        for rec in batch? {
            let truth = target.truth(&rec);
            let p = session.forward(&rec)?;
            on_record(&rec, truth, &p);
            match truth {
                Some(t) if t < cm.n_classes() => cm.add(t, p.argmax)?,
                _ => skipped += 1,
            }
        }
    }
    let accuracy = metrics(&cm, 0)?.accuracy;
    let per_class = (0..cm.n_classes())
        .map(|c| metrics(&cm, c).map(|m| (m.recall, m.specificity)))
        .collect::<Result<_>>()?;
    let binary = match target {
        Target::Binary => Some(metrics(&cm, Label::Interf.code() as usize)?),
        Target::InterfererCount => None,
    };
    Ok(Evaluation {
        target,
        confusion: cm,
        accuracy,
        per_class,
        binary,
        skipped,
    })
}

/// Loads `weights`, warms a session and evaluates `dataset`.
pub fn evaluate(dataset: impl AsRef<Path>, weights: impl AsRef<Path>) -> Result<Evaluation> {
    let bundle = Arc::new(WeightBundle::load(weights)?);
    let mut session = Session::new(bundle)?;
    session.warmup()?;
    evaluate_with(&mut session, dataset, |_, _, _| {})
}
