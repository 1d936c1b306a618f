use crate::data::{tokenize, Condition};
use crate::error::{contract, Result};

/// Keyword rules per condition with a preceding-negation guard.
#[derive(Debug, Clone)]
pub struct LabelerRules {
    pub keywords: Vec<(Condition, Vec<String>)>,
    pub negations: Vec<String>,
    /// How many preceding tokens are searched for a negation.
    pub window: usize,
}

impl Default for LabelerRules {
    fn default() -> Self {
        let kw = |c, words: &[&str]| (c, words.iter().map(|w| w.to_string()).collect());
        Self {
            keywords: vec![
                kw(Condition::Cardiomegaly, &["heart", "cardiac", "cardiomegaly"]),
                kw(Condition::Effusion, &["effusion", "fluid"]),
                kw(Condition::Opacity, &["opacity", "consolidation"]),
                kw(Condition::Pneumothorax, &["pneumothorax", "collapsed"]),
                kw(Condition::Fracture, &["fracture", "fractured", "broken"]),
                kw(Condition::Device, &["device", "catheter", "pacemaker", "tube"]),
            ],
            negations: vec!["no".into(), "without".into()],
            window: 3,
        }
    }
}

impl LabelerRules {
    pub fn conditions(&self) -> impl Iterator<Item = Condition> + '_ {
        self.keywords.iter().map(|(c, _)| *c)
    }

    /// Conditions asserted anywhere in the report, ascending.
    pub fn label<S: AsRef<str>>(&self, sentences: &[S]) -> Vec<Condition> {
        let mut found = Vec::new();
        for sentence in sentences {
            let toks = tokenize(sentence.as_ref());
            for (i, tok) in toks.iter().enumerate() {
                let negated = toks[i.saturating_sub(self.window)..i]
                    .iter()
                    .any(|t| self.negations.contains(t));
                if negated {
                    continue;
                }
                for (cond, words) in &self.keywords {
                    if words.contains(tok) && !found.contains(cond) {
                        found.push(*cond);
                    }
                }
            }
        }
        found.sort();
        found
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalScores {
    pub micro: Prf,
    pub macro_avg: Prf,
    pub per_label: Vec<(Condition, Prf)>,
}

/// Scores predicted label sets against ground truth over `labels`.
pub fn score_labels(
    predicted: &[Vec<Condition>],
    truth: &[Vec<Condition>],
    labels: &[Condition],
) -> Result<ClinicalScores> {
    if predicted.len() != truth.len() {
        return Err(contract(format!(
            "clinical_efficacy: {} reports vs {} label sets",
            predicted.len(),
            truth.len()
        )));
    }
    if let Some(bad) = truth.iter().flatten().find(|c| !labels.contains(c)) {
        return Err(contract(format!(
            "clinical_efficacy: no rule covers label {}",
            bad.name()
        )));
    }
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    let mut per_label = Vec::with_capacity(labels.len());
    let (mut p_sum, mut p_n, mut r_sum, mut f_sum) = (0.0, 0usize, 0.0, 0.0);
    for &label in labels {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (pred, gt) in predicted.iter().zip(truth) {
            match (pred.contains(&label), gt.contains(&label)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        if tp + fp > 0 {
            p_sum += p;
            p_n += 1;
        }
        r_sum += r;
        f_sum += f1(p, r);
        per_label.push((
            label,
            Prf {
                precision: p,
                recall: r,
                f1: f1(p, r),
            },
        ));
    }
    let mp = ratio(tp_all, tp_all + fp_all);
    let mr = ratio(tp_all, tp_all + fn_all);
    let n = labels.len().max(1) as f64;
    Ok(ClinicalScores {
        micro: Prf {
            precision: mp,
            recall: mr,
            f1: f1(mp, mr),
        },
        macro_avg: Prf {
            precision: if p_n > 0 { p_sum / p_n as f64 } else { 0.0 },
            recall: r_sum / n,
            f1: f_sum / n,
        },
        per_label,
    })
}

/// Labels each generated report with `rules` and scores against `truth`.
pub fn clinical_efficacy<S: AsRef<str>>(
    generated: &[Vec<S>],
    truth: &[Vec<Condition>],
    rules: &LabelerRules,
) -> Result<ClinicalScores> {
    let predicted: Vec<Vec<Condition>> = generated.iter().map(|r| rules.label(r)).collect();
    let labels: Vec<Condition> = rules.conditions().collect();
    score_labels(&predicted, truth, &labels)
}
