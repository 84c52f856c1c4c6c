use serde::{Deserialize, Serialize};

use super::data::Sample;
use crate::error::{validation_err, Result};
use crate::model::{predict, EmotionLabel, EmotionModel, Prediction};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy_4q: f64,
    /// From the bits implied by the predicted quadrant.
    pub accuracy_arousal: f64,
    pub accuracy_valence: f64,
    /// From the branch heads' own logits, when the branch exists.
    pub aux_accuracy_arousal: Option<f64>,
    pub aux_accuracy_valence: Option<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; 4]; 4],
    pub per_class: [usize; 4],
}

impl EvalReport {
    pub fn from_predictions(
        results: &[(EmotionLabel, Prediction)],
        aux_arousal: bool,
        aux_valence: bool,
    ) -> Result<Self> {
        if results.is_empty() {
            return Err(validation_err!("cannot evaluate an empty subset"));
        }
        let n = results.len();
        let frac = |f: &dyn Fn(&(EmotionLabel, Prediction)) -> bool| {
            results.iter().filter(|r| f(r)).count() as f64 / n as f64
        };
        let mut confusion = [[0usize; 4]; 4];
        let mut per_class = [0usize; 4];
        for (l, p) in results {
            confusion[l.quadrant.index()][p.quadrant.index()] += 1;
            per_class[l.quadrant.index()] += 1;
        }
        Ok(Self {
            n,
            accuracy_4q: frac(&|(l, p)| l.quadrant == p.quadrant),
            accuracy_arousal: frac(&|(l, p)| l.arousal() == p.arousal),
            accuracy_valence: frac(&|(l, p)| l.valence() == p.valence),
            aux_accuracy_arousal: aux_arousal.then(|| frac(&|(l, p)| l.arousal() == p.aux_arousal)),
            aux_accuracy_valence: aux_valence.then(|| frac(&|(l, p)| l.valence() == p.aux_valence)),
            confusion,
            per_class,
        })
    }
}

/// Eval-mode predictions for every sample.
pub fn evaluate_samples<T: Scalar>(
    model: &EmotionModel<T>,
    samples: &[Sample<T>],
) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(samples.len());
    for s in samples {
        let out = model.forward(&s.feature, &s.tokens)?;
        results.push((s.label, predict(&out)));
    }
    let b = model.config().branches;
    EvalReport::from_predictions(&results, b.acoustic(), b.symbolic())
}
