//! NLG and clinical-efficacy evaluation.

mod bleu;
mod clinical;
mod hist;
mod meteor;
mod rouge;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub use bleu::bleu;
pub use clinical::{clinical_efficacy, score_labels, ClinicalScores, LabelerRules, Prf};
pub use hist::{hist_csv, length_hist};
pub use meteor::{align, meteor_lite, meteor_pair, Alignment, NODE_BUDGET};
pub use rouge::{lcs_len, rouge_l, rouge_l_pair};

use crate::data::{tokenize, Condition, ManifestEntry};
use crate::error::{contract, CoreError, Result};
use crate::registry::Registry;

/// Paired generated and reference reports, each a list of sentences.
#[derive(Debug, Clone)]
pub struct EvalInput {
    pub generated: Vec<Vec<String>>,
    pub reference: Vec<Vec<String>>,
    pub reference_labels: Vec<Vec<Condition>>,
    pub rules: LabelerRules,
}

fn flatten(report: &[String]) -> Vec<String> {
    report.iter().flat_map(|s| tokenize(s)).collect()
}

impl EvalInput {
    pub fn new(
        generated: Vec<Vec<String>>,
        reference: Vec<Vec<String>>,
        reference_labels: Vec<Vec<Condition>>,
    ) -> Result<Self> {
        if generated.len() != reference.len() || reference.len() != reference_labels.len() {
            return Err(contract(format!(
                "evaluation: {} generated, {} reference reports, {} label sets",
                generated.len(),
                reference.len(),
                reference_labels.len()
            )));
        }
        Ok(Self {
            generated,
            reference,
            reference_labels,
            rules: LabelerRules::default(),
        })
    }

    pub fn generated_tokens(&self) -> Vec<Vec<String>> {
        self.generated.iter().map(|r| flatten(r)).collect()
    }

    pub fn reference_tokens(&self) -> Vec<Vec<String>> {
        self.reference.iter().map(|r| flatten(r)).collect()
    }
}

pub trait Metric: Send + Sync {
    /// Named scores, all in [0, 1].
    fn evaluate(&self, input: &EvalInput) -> Result<Vec<(String, f64)>>;
}

struct Bleu;
struct RougeL;
struct MeteorLite;
struct Clinical;

impl Metric for Bleu {
    fn evaluate(&self, input: &EvalInput) -> Result<Vec<(String, f64)>> {
        let b = bleu(&input.generated_tokens(), &input.reference_tokens(), 4)?;
        Ok(b.into_iter()
            .enumerate()
            .map(|(i, v)| (format!("bleu_{}", i + 1), v))
            .collect())
    }
}

impl Metric for RougeL {
    fn evaluate(&self, input: &EvalInput) -> Result<Vec<(String, f64)>> {
        Ok(vec![(
            "rouge_l".into(),
            rouge_l(&input.generated_tokens(), &input.reference_tokens())?,
        )])
    }
}

impl Metric for MeteorLite {
    fn evaluate(&self, input: &EvalInput) -> Result<Vec<(String, f64)>> {
        Ok(vec![(
            "meteor_lite".into(),
            meteor_lite(&input.generated_tokens(), &input.reference_tokens())?,
        )])
    }
}

fn prf_rows(prefix: &str, s: &Prf) -> [(String, f64); 3] {
    [
        (format!("{prefix}_precision"), s.precision),
        (format!("{prefix}_recall"), s.recall),
        (format!("{prefix}_f1"), s.f1),
    ]
}

impl Metric for Clinical {
    fn evaluate(&self, input: &EvalInput) -> Result<Vec<(String, f64)>> {
        let s = clinical_efficacy(&input.generated, &input.reference_labels, &input.rules)?;
        Ok(prf_rows("clinical_micro", &s.micro)
            .into_iter()
            .chain(prf_rows("clinical_macro", &s.macro_avg))
            .collect())
    }
}

pub type MetricCtor = fn() -> Box<dyn Metric>;

pub fn metrics() -> Registry<MetricCtor> {
    let mut r: Registry<MetricCtor> = Registry::new("metric");
    r.register("bleu", || Box::new(Bleu))
        .register("rouge_l", || Box::new(RougeL))
        .register("meteor_lite", || Box::new(MeteorLite))
        .register("clinical", || Box::new(Clinical));
    r
}

/// Runs the named metrics in order.
pub fn score_table(names: &[&str], input: &EvalInput) -> Result<Vec<(String, f64)>> {
    let reg = metrics();
    let mut rows = Vec::new();
    for name in names {
        rows.extend(reg.get(name)?().evaluate(input)?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub meteor_lite: f64,
    pub clinical: ClinicalScores,
    pub per_report_bleu: Vec<[f64; 4]>,
    pub generated_lengths: BTreeMap<usize, usize>,
    pub reference_lengths: BTreeMap<usize, usize>,
}

/// Pairs generated and reference manifest lines by image name. Every
/// generated image must have exactly one reference.
pub fn pair_manifests(generated: &[ManifestEntry], reference: &[ManifestEntry]) -> Result<EvalInput> {
    let mut by_image = std::collections::HashMap::new();
    for r in reference {
        if by_image.insert(r.image.as_str(), r).is_some() {
            return Err(contract(format!("reference manifest lists {} twice", r.image)));
        }
    }
    let mut gen = Vec::with_capacity(generated.len());
    let mut refs = Vec::with_capacity(generated.len());
    let mut labels = Vec::with_capacity(generated.len());
    for g in generated {
        let r = by_image
            .get(g.image.as_str())
            .ok_or_else(|| contract(format!("no reference for generated image {}", g.image)))?;
        gen.push(g.sentences.clone());
        refs.push(r.sentences.clone());
        labels.push(
            r.labels
                .iter()
                .map(|l| Condition::from_name(l))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    EvalInput::new(gen, refs, labels)
}

pub fn evaluate(input: &EvalInput) -> Result<EvalReport> {
    let gen = input.generated_tokens();
    let refs = input.reference_tokens();
    let b = bleu(&gen, &refs, 4)?;
    let per_report_bleu = gen
        .iter()
        .zip(&refs)
        .map(|(g, r)| {
            let s = bleu(std::slice::from_ref(g), std::slice::from_ref(r), 4)?;
            Ok([s[0], s[1], s[2], s[3]])
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        bleu: [b[0], b[1], b[2], b[3]],
        rouge_l: rouge_l(&gen, &refs)?,
        meteor_lite: meteor_lite(&gen, &refs)?,
        clinical: clinical_efficacy(&input.generated, &input.reference_labels, &input.rules)?,
        per_report_bleu,
        generated_lengths: length_hist(gen.iter().map(Vec::len)),
        reference_lengths: length_hist(refs.iter().map(Vec::len)),
    })
}

impl EvalReport {
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows: Vec<(String, f64)> = self
            .bleu
            .iter()
            .enumerate()
            .map(|(i, &v)| (format!("bleu_{}", i + 1), v))
            .collect();
        rows.push(("rouge_l".into(), self.rouge_l));
        rows.push(("meteor_lite".into(), self.meteor_lite));
        rows.extend(prf_rows("clinical_micro", &self.clinical.micro));
        rows.extend(prf_rows("clinical_macro", &self.clinical.macro_avg));
        for (c, s) in &self.clinical.per_label {
            rows.extend(prf_rows(&format!("clinical_{}", c.name()), s));
        }
        rows
    }

    /// `metrics.csv`, `per_report_bleu.csv`, `length_generated.csv` and
    /// `length_reference.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let mut metrics = String::from("metric,value\n");
        for (name, v) in self.rows() {
            writeln!(metrics, "{name},{v:.6}").expect("write to string");
        }
        let mut per = String::from("report,bleu_1,bleu_2,bleu_3,bleu_4\n");
        for (i, b) in self.per_report_bleu.iter().enumerate() {
            writeln!(per, "{i},{:.6},{:.6},{:.6},{:.6}", b[0], b[1], b[2], b[3]).expect("write to string");
        }
        for (name, text) in [
            ("metrics.csv", metrics),
            ("per_report_bleu.csv", per),
            ("length_generated.csv", hist_csv(&self.generated_lengths)),
            ("length_reference.csv", hist_csv(&self.reference_lengths)),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| CoreError::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    fn input() -> EvalInput {
        EvalInput::new(
            vec![
                report(&["the heart is enlarged", "no other findings"]),
                report(&["there is a rib fracture"]),
            ],
            vec![
                report(&["the heart is enlarged", "no other findings"]),
                report(&["a rib fracture is present"]),
            ],
            vec![vec![Condition::Cardiomegaly], vec![Condition::Fracture]],
        )
        .unwrap()
    }

    #[test]
    fn registry_matches_typed_report() {
        let inp = input();
        let names: Vec<&str> = metrics().names().collect();
        assert_eq!(names, ["bleu", "rouge_l", "meteor_lite", "clinical"]);
        let table = score_table(&names, &inp).unwrap();
        let rows = evaluate(&inp).unwrap().rows();
        for (name, v) in &table {
            let (_, w) = rows.iter().find(|(n, _)| n == name).unwrap();
            assert_eq!(v, w, "{name}");
        }
    }

    #[test]
    fn scores_bounded_and_files_written() {
        let rep = evaluate(&input()).unwrap();
        assert!(rep.rows().iter().all(|(_, v)| (0.0..=1.0).contains(v)));
        assert_eq!(rep.clinical.micro.f1, 1.0);
        assert_eq!(rep.generated_lengths.values().sum::<usize>(), 2);
        let dir = tempfile::tempdir().unwrap();
        rep.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(text.starts_with("metric,value\nbleu_1,"));
        assert!(dir.path().join("length_reference.csv").exists());
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(EvalInput::new(vec![], vec![report(&["a"])], vec![vec![]]).is_err());
    }
}
