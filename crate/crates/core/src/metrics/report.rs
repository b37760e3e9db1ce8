//! Per-subset evaluation and the perturbation sweep.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{accuracy, average_precision};
use crate::data::{load_image, perturb, DatasetManifest, GrayImage, PerturbKind};
use crate::error::{Error, Result};
use crate::model::Detector;

/// Anything that maps images to fake-probabilities.
pub trait Scorer: Sync {
    fn probabilities(&self, images: &[&GrayImage]) -> Result<Vec<f64>>;
}

impl Scorer for Detector {
    fn probabilities(&self, images: &[&GrayImage]) -> Result<Vec<f64>> {
        Detector::probabilities(self, images)
    }
}

impl<F: Fn(&GrayImage) -> f64 + Sync> Scorer for F {
    fn probabilities(&self, images: &[&GrayImage]) -> Result<Vec<f64>> {
        Ok(images.iter().map(|i| self(i)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub name: String,
    pub n_real: usize,
    pub n_fake: usize,
    pub acc: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindScore {
    /// A perturbation name, or `all` for the composition.
    pub kind: String,
    #[serde(rename = "mAcc")]
    pub m_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBlock {
    pub seed: u64,
    pub kinds: Vec<KindScore>,
    /// Clean mAcc minus the mean perturbed mAcc; zero with no perturbations.
    pub average_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subsets: Vec<SubsetScore>,
    #[serde(rename = "mAcc")]
    pub m_acc: f64,
    #[serde(rename = "mAP")]
    pub m_ap: f64,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationBlock>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed report: {e}")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Decoded images of one subset, with each file's position in manifest order.
struct Loaded {
    name: String,
    images: Vec<GrayImage>,
    labels: Vec<u8>,
    indices: Vec<u64>,
}

fn load(manifest: &DatasetManifest, warnings: &mut Vec<String>) -> Result<Vec<Loaded>> {
    let mut out = Vec::new();
    let mut index = 0u64;
    for subset in &manifest.subsets {
        let samples = subset.samples();
        let first = index;
        index += samples.len() as u64;
        if subset.n_real == 0 || subset.n_fake == 0 {
            let missing = if subset.n_real == 0 { "real" } else { "fake" };
            warnings.push(format!("subset '{}' skipped: no {missing} images", subset.name));
            continue;
        }
        let images = samples.par_iter().map(|(p, _)| load_image(p)).collect::<Result<Vec<_>>>()?;
        out.push(Loaded {
            name: subset.name.clone(),
            images,
            labels: samples.iter().map(|s| s.1).collect(),
            indices: (first..index).collect(),
        });
    }
    if out.is_empty() {
        return Err(Error::UndefinedMetric("no subset has both real and fake images".into()));
    }
    Ok(out)
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len() as f64;
    v.sum::<f64>() / n
}

fn score_subsets(scorer: &dyn Scorer, loaded: &[Loaded], images: &[Vec<GrayImage>]) -> Result<Vec<SubsetScore>> {
    loaded
        .iter()
        .zip(images)
        .map(|(s, imgs)| {
            let refs: Vec<&GrayImage> = imgs.iter().collect();
            let p = scorer.probabilities(&refs)?;
            Ok(SubsetScore {
                name: s.name.clone(),
                n_real: s.labels.iter().filter(|&&l| l == 0).count(),
                n_fake: s.labels.iter().filter(|&&l| l == 1).count(),
                acc: accuracy(&p, &s.labels)?,
                ap: average_precision(&p, &s.labels)?,
            })
        })
        .collect()
}

/// Per-subset Acc/AP with unweighted means. Subsets lacking a class are
/// skipped and noted in `warnings`.
pub fn evaluate(scorer: &dyn Scorer, manifest: &DatasetManifest) -> Result<EvalReport> {
    let mut warnings = Vec::new();
    let loaded = load(manifest, &mut warnings)?;
    report_for(scorer, &loaded, warnings)
}

fn report_for(scorer: &dyn Scorer, loaded: &[Loaded], warnings: Vec<String>) -> Result<EvalReport> {
    let images: Vec<Vec<GrayImage>> = loaded.iter().map(|s| s.images.clone()).collect();
    let subsets = score_subsets(scorer, loaded, &images)?;
    Ok(EvalReport {
        m_acc: mean(subsets.iter().map(|s| s.acc)),
        m_ap: mean(subsets.iter().map(|s| s.ap)),
        subsets,
        warnings,
        perturbation: None,
    })
}

/// Perturb with `kinds` applied in sequence, one RNG per file seeded with
/// `seed + index`.
fn perturbed(s: &Loaded, kinds: &[PerturbKind], seed: u64) -> Result<Vec<GrayImage>> {
    s.images
        .par_iter()
        .zip(&s.indices)
        .map(|(img, &i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
            kinds.iter().try_fold(img.clone(), |acc, &k| perturb(&acc, k, &mut rng))
        })
        .collect()
}

/// The clean report with a perturbation block: one entry per kind, plus the
/// composition of all given kinds (blur, crop, jpeg, noise order) when more
/// than one is given.
pub fn robustness_eval(
    scorer: &dyn Scorer,
    manifest: &DatasetManifest,
    kinds: &[PerturbKind],
    seed: u64,
) -> Result<EvalReport> {
    let mut warnings = Vec::new();
    let loaded = load(manifest, &mut warnings)?;
    let mut report = report_for(scorer, &loaded, warnings)?;

    let mut ordered: Vec<PerturbKind> = PerturbKind::ALL.into_iter().filter(|k| kinds.contains(k)).collect();
    ordered.dedup();
    let mut runs: Vec<(String, Vec<PerturbKind>)> = ordered.iter().map(|&k| (k.name().to_string(), vec![k])).collect();
    if ordered.len() > 1 {
        runs.push(("all".to_string(), ordered.clone()));
    }
    let mut scores = Vec::with_capacity(runs.len());
    for (name, chain) in runs {
        let images = loaded.iter().map(|s| perturbed(s, &chain, seed)).collect::<Result<Vec<_>>>()?;
        let subsets = score_subsets(scorer, &loaded, &images)?;
        scores.push(KindScore {
            kind: name,
            m_acc: mean(subsets.iter().map(|s| s.acc)),
        });
    }
    let average_drop = if scores.is_empty() {
        0.0
    } else {
        report.m_acc - mean(scores.iter().map(|k| k.m_acc))
    };
    report.perturbation = Some(PerturbationBlock {
        seed,
        kinds: scores,
        average_drop,
    });
    Ok(report)
}
