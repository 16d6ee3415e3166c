//! Textual-similarity studies over section tf-idf vectors: section-pair
//! cosine distances by relation, Welch's t-test, a two-component PCA
//! projection and CSV exports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::features::{CorpusTag, FeatureSet};
use crate::graph::{DyadGraph, Label};
use crate::par::Execution;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} samples per group, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("PCA needs rank 2, data has rank {0}")]
    Rank(usize),
    #[error("vectors have unequal dimensions")]
    Dimension,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// `1 − a·b / (‖a‖‖b‖)`; `None` when either vector is zero.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "cosine over unequal dimensions");
    let na2: f64 = a.iter().map(|x| x * x).sum();
    let nb2: f64 = b.iter().map(|x| x * x).sum();
    if na2 == 0.0 || nb2 == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some((1.0 - dot / (na2 * nb2).sqrt()).clamp(0.0, 2.0))
}

/// Entity section vectors keyed by (entity, section title).
pub fn section_vectors(features: &FeatureSet) -> BTreeMap<(String, String), Vec<f64>> {
    features
        .records
        .iter()
        .filter(|r| r.corpus == CorpusTag::Entity)
        .filter_map(|r| {
            r.section_title
                .as_ref()
                .map(|t| ((r.doc_id.clone(), t.clone()), r.values.clone()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionPairStat {
    pub title_a: String,
    pub title_b: String,
    pub relation: Label,
    pub co_occurrence_count: usize,
    pub mean_distance: f64,
    pub sd_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairRanking {
    /// Top pairs chosen separately for each relation.
    #[default]
    PerClass,
    /// Top pairs chosen by combined count, reported per relation.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionPairReport {
    pub pairs: Vec<SectionPairStat>,
    /// Section pairs left out because one side was a zero vector.
    pub skipped_zero: usize,
}

type PairKey = (Label, String, String);

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    (
        mean,
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(),
    )
}

fn label_rank(l: Label) -> u8 {
    u8::from(!l.is_allies())
}

/// Distance samples for every edge and every unordered title pair with one
/// title on each endpoint. Pairs are ranked by sample count (ties by
/// titles) and the top `top_n` are kept per relation, or overall when
/// `ranking` is pooled.
pub fn section_pair_stats(
    graph: &DyadGraph,
    sections: &BTreeMap<(String, String), Vec<f64>>,
    top_n: usize,
    ranking: PairRanking,
    exec: Execution,
) -> SectionPairReport {
    let mut by_entity: BTreeMap<&str, Vec<(&str, &[f64])>> = BTreeMap::new();
    for ((entity, title), v) in sections {
        by_entity.entry(entity).or_default().push((title, v));
    }
    let per_edge = exec.map(graph.edges(), |edge| {
        let mut samples: Vec<(PairKey, f64)> = Vec::new();
        let mut skipped = 0usize;
        let su = by_entity.get(graph.nodes()[edge.u].0.as_str());
        let sv = by_entity.get(graph.nodes()[edge.v].0.as_str());
        if let (Some(su), Some(sv)) = (su, sv) {
            for (ta, va) in su {
                for (tb, vb) in sv {
                    let (a, b) = if ta <= tb { (ta, tb) } else { (tb, ta) };
                    match cosine_distance(va, vb) {
                        Some(d) => samples.push(((edge.label, a.to_string(), b.to_string()), d)),
                        None => skipped += 1,
                    }
                }
            }
        }
        (samples, skipped)
    });
    let mut groups: BTreeMap<PairKey, Vec<f64>> = BTreeMap::new();
    let mut skipped_zero = 0;
    for (samples, skipped) in per_edge {
        skipped_zero += skipped;
        for (key, d) in samples {
            groups.entry(key).or_default().push(d);
        }
    }
    let keep: Vec<&PairKey> = match ranking {
        PairRanking::PerClass => {
            let mut keep = Vec::new();
            for relation in [Label::Allies, Label::Enemies] {
                let mut keys: Vec<&PairKey> = groups.keys().filter(|k| k.0 == relation).collect();
                keys.sort_by(|a, b| groups[*b].len().cmp(&groups[*a].len()).then_with(|| a.cmp(b)));
                keys.truncate(top_n);
                keep.extend(keys);
            }
            keep
        }
        PairRanking::Pooled => {
            let mut totals: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for (k, v) in &groups {
                *totals.entry((k.1.as_str(), k.2.as_str())).or_default() += v.len();
            }
            let mut titles: Vec<((&str, &str), usize)> = totals.into_iter().collect();
            titles.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            titles.truncate(top_n);
            let chosen: Vec<(&str, &str)> = titles.into_iter().map(|t| t.0).collect();
            let mut keep: Vec<&PairKey> = groups
                .keys()
                .filter(|k| chosen.contains(&(k.1.as_str(), k.2.as_str())))
                .collect();
            keep.sort_by(|a, b| {
                label_rank(a.0)
                    .cmp(&label_rank(b.0))
                    .then(groups[*b].len().cmp(&groups[*a].len()))
                    .then_with(|| a.cmp(b))
            });
            keep
        }
    };
    let pairs = keep
        .into_iter()
        .map(|key| {
            let samples = &groups[key];
            let (mean, sd) = mean_sd(samples);
            SectionPairStat {
                title_a: key.1.clone(),
                title_b: key.2.clone(),
                relation: key.0,
                co_occurrence_count: samples.len(),
                mean_distance: mean,
                sd_distance: sd,
            }
        })
        .collect();
    SectionPairReport { pairs, skipped_zero }
}

/// The `k` lowest-mean-distance pairs per relation, ties broken by titles.
pub fn export_plot_data(stats: &[SectionPairStat], k: usize) -> Vec<SectionPairStat> {
    let mut out = Vec::new();
    for relation in [Label::Allies, Label::Enemies] {
        let mut rows: Vec<&SectionPairStat> = stats.iter().filter(|s| s.relation == relation).collect();
        rows.sort_by(|a, b| {
            a.mean_distance
                .total_cmp(&b.mean_distance)
                .then_with(|| (&a.title_a, &a.title_b).cmp(&(&b.title_a, &b.title_b)))
        });
        out.extend(rows.into_iter().take(k).cloned());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sided Welch t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult, AnalysisError> {
    let got = a.len().min(b.len());
    if got < 2 {
        return Err(AnalysisError::TooFewSamples { needed: 2, got });
    }
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let qa = sa * sa / a.len() as f64;
    let qb = sb * sb / b.len() as f64;
    let se2 = qa + qb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            WelchResult {
                t: 0.0,
                df: f64::INFINITY,
                p_value: 1.0,
            }
        } else {
            WelchResult {
                t: f64::INFINITY.copysign(ma - mb),
                df: f64::INFINITY,
                p_value: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (a.len() as f64 - 1.0) + qb * qb / (b.len() as f64 - 1.0));
    let p_value = if t == 0.0 {
        1.0
    } else {
        beta_reg(df / 2.0, 0.5, df / (df + t * t))
    };
    Ok(WelchResult { t, df, p_value })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub entity: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub projections: Vec<Projection2D>,
    /// Variance along the first and second components.
    pub explained_variance: (f64, f64),
    /// The two unit loading vectors.
    pub components: [Vec<f64>; 2],
}

/// Relative eigenvalue threshold under which a direction counts as empty.
const RANK_TOLERANCE: f64 = 1e-10;

/// Projects mean-centered vectors on the top two eigenvectors of their
/// sample covariance. Each component's largest-magnitude loading is made
/// positive.
pub fn pca_top2(entities: &[String], vectors: &[Vec<f64>]) -> Result<PcaResult, AnalysisError> {
    assert_eq!(entities.len(), vectors.len(), "one name per vector");
    let n = vectors.len();
    if n < 3 {
        return Err(AnalysisError::TooFewSamples { needed: 3, got: n });
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(AnalysisError::Dimension);
    }
    if d == 0 {
        return Err(AnalysisError::Rank(0));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&k| top > 0.0 && eig.eigenvalues[k] > RANK_TOLERANCE * top)
        .count();
    if rank < 2 {
        return Err(AnalysisError::Rank(rank));
    }
    let components: [Vec<f64>; 2] = [0, 1].map(|c| {
        let col: Vec<f64> = eig.eigenvectors.column(order[c]).iter().copied().collect();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.into_iter().map(|v| -v).collect()
        } else {
            col
        }
    });
    let project = |i: usize, c: &[f64]| x.row(i).iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
    let projections = (0..n)
        .map(|i| Projection2D {
            entity: entities[i].clone(),
            x: project(i, &components[0]),
            y: project(i, &components[1]),
        })
        .collect();
    Ok(PcaResult {
        projections,
        explained_variance: (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]),
        components,
    })
}

pub fn write_section_pairs_csv(path: &Path, stats: &[SectionPairStat]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "title_a",
        "title_b",
        "relation",
        "count",
        "mean_distance",
        "sd_distance",
    ])?;
    for s in stats {
        let relation = if s.relation.is_allies() { "ALLIES" } else { "ENEMIES" };
        w.write_record([
            s.title_a.clone(),
            s.title_b.clone(),
            relation.to_string(),
            s.co_occurrence_count.to_string(),
            s.mean_distance.to_string(),
            s.sd_distance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pca_csv(path: &Path, projections: &[Projection2D]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["entity", "pc1", "pc2"])?;
    for p in projections {
        w.write_record([p.entity.clone(), p.x.to_string(), p.y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of (document, ranked terms with weights).
pub fn write_top_unigrams_csv(path: &Path, rows: &[(String, Vec<(String, f64)>)]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["doc", "rank", "term", "weight"])?;
    for (doc, terms) in rows {
        for (rank, (term, weight)) in terms.iter().enumerate() {
            w.write_record([doc.clone(), (rank + 1).to_string(), term.clone(), weight.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes any serializable value as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AnalysisError> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(std::io::Error::from)?;
    f.write_all(b"\n")?;
    Ok(())
}
