//! Sliding-window scoring, per-video min-max normalization and frame-wise
//! AUC-ROC.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{frame_labels, load_clip, write_json, AnnotationFile, Clip, ClipConfig, Video};
use crate::error::{Result, VadError};
use crate::model::AnomalyModel;

/// Raw and normalized per-frame scores of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub video_id: String,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl ScoreSeries {
    pub fn from_raw(video_id: impl Into<String>, raw: Vec<f64>) -> Self {
        Self {
            video_id: video_id.into(),
            normalized: normalize_scores(&raw),
            raw,
        }
    }
}

/// Scores every frame with the T-frame window centered on it. Windows are
/// clamped at the ends, so each distinct window is scored once and shared.
pub fn sliding_scores(
    video: &Video,
    cfg: &ClipConfig,
    mut score: impl FnMut(&Clip) -> Result<f64>,
) -> Result<Vec<f64>> {
    let n = video.len();
    if n < cfg.frames {
        return Err(VadError::VideoTooShort {
            video_id: video.id.clone(),
            len: n,
            clip_len: cfg.frames,
        });
    }
    let windows = (0..=n - cfg.frames)
        .map(|start| score(&load_clip(video, start + cfg.frames / 2, cfg)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok((0..n)
        .map(|i| windows[crate::dataset::window_start(n, cfg.frames, i)])
        .collect())
}

/// `(a - min) / (max - min)`; a constant series maps to zeros.
pub fn normalize_scores(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range > 0.0 && range.is_finite() {
        raw.iter().map(|a| (a - min) / range).collect()
    } else {
        vec![0.0; raw.len()]
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Sort-based, O(n log n).
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(VadError::shape("auc inputs", &[scores.len()], &[labels.len()]));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(VadError::SingleClass("negatives"));
    }
    if neg == 0 {
        return Err(VadError::SingleClass("positives"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(VadError::Invalid("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Σ over positives of (#negatives strictly below + ½ #negatives tied)
    let mut credit = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group_pos = order[i..j].iter().filter(|&&k| labels[k] != 0).count();
        let group_neg = (j - i) - group_pos;
        credit += group_pos as f64 * (neg_below as f64 + 0.5 * group_neg as f64);
        neg_below += group_neg;
        i = j;
    }
    Ok(credit / (pos as f64 * neg as f64))
}

/// How frame-level AUC is pooled across videos.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Normalize per video, then one AUC over all concatenated frames.
    #[default]
    Concatenate,
    /// Mean of per-video AUCs over videos that contain both classes.
    PerVideoMean,
}

/// Source of per-frame raw scores.
pub enum Scorer<'a> {
    Model(&'a AnomalyModel),
    /// The ground-truth label itself.
    Oracle,
    /// One minus the label.
    AntiOracle,
}

impl Scorer<'_> {
    fn raw(&self, video: &Video, labels: &[u8]) -> Result<Vec<f64>> {
        match self {
            Scorer::Model(m) => sliding_scores(video, &m.clip_config(), |c| m.score(c)),
            Scorer::Oracle => Ok(labels.iter().map(|&l| l as f64).collect()),
            Scorer::AntiOracle => Ok(labels.iter().map(|&l| 1.0 - l as f64).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    #[serde(flatten)]
    pub series: ScoreSeries,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub aggregation: Aggregation,
    /// AUC per video-id prefix (text before the first `_`), where defined.
    pub subsets: BTreeMap<String, f64>,
    pub videos: Vec<VideoReport>,
}

fn pooled_auc(videos: &[&VideoReport], aggregation: Aggregation) -> Result<f64> {
    match aggregation {
        Aggregation::Concatenate => {
            let scores: Vec<f64> = videos.iter().flat_map(|v| v.series.normalized.iter().copied()).collect();
            let labels: Vec<u8> = videos.iter().flat_map(|v| v.labels.iter().copied()).collect();
            auc_roc(&scores, &labels)
        }
        Aggregation::PerVideoMean => {
            let aucs: Vec<f64> = videos
                .iter()
                .filter_map(|v| auc_roc(&v.series.normalized, &v.labels).ok())
                .collect();
            if aucs.is_empty() {
                return Err(VadError::SingleClass("one class in every video"));
            }
            Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
        }
    }
}

/// Scores every video, normalizes per video, and reports frame-wise AUC.
pub fn evaluate_run(
    scorer: &Scorer<'_>,
    videos: &[Video],
    annotations: &AnnotationFile,
    aggregation: Aggregation,
) -> Result<EvalReport> {
    let mut reports = Vec::with_capacity(videos.len());
    for v in videos {
        let ann = annotations.get(&v.id)?;
        if ann.n_frames != v.len() {
            return Err(VadError::Annotation {
                video_id: v.id.clone(),
                msg: format!("annotation covers {} frames, video has {}", ann.n_frames, v.len()),
            });
        }
        let labels = frame_labels(ann);
        let raw = scorer.raw(v, &labels)?;
        reports.push(VideoReport {
            series: ScoreSeries::from_raw(v.id.clone(), raw),
            labels,
        });
    }
    let all: Vec<&VideoReport> = reports.iter().collect();
    let auc = pooled_auc(&all, aggregation)?;
    let mut groups: BTreeMap<String, Vec<&VideoReport>> = BTreeMap::new();
    for r in &reports {
        let key = r.series.video_id.split('_').next().unwrap_or_default().to_string();
        groups.entry(key).or_default().push(r);
    }
    let subsets = groups
        .into_iter()
        .filter_map(|(k, vs)| pooled_auc(&vs, aggregation).ok().map(|a| (k, a)))
        .collect();
    Ok(EvalReport {
        auc,
        aggregation,
        subsets,
        videos: reports,
    })
}

impl EvalReport {
    /// `report.json` plus `scores/<video_id>.csv` (frame, raw, normalized, label).
    pub fn save(&self, dir: &Path) -> Result<()> {
        let scores = dir.join("scores");
        fs::create_dir_all(&scores).map_err(|e| VadError::io(&scores, e))?;
        write_json(&dir.join("report.json"), self)?;
        for v in &self.videos {
            let path = scores.join(format!("{}.csv", v.series.video_id));
            fs::write(&path, series_csv(&v.series, Some(&v.labels))).map_err(|e| VadError::io(&path, e))?;
        }
        Ok(())
    }
}

pub fn series_csv(series: &ScoreSeries, labels: Option<&[u8]>) -> String {
    let mut out = String::from("frame,raw,normalized,label\n");
    for (i, (r, n)) in series.raw.iter().zip(&series.normalized).enumerate() {
        let l = labels.map_or(String::new(), |l| l[i].to_string());
        out.push_str(&format!("{i},{r:e},{n:e},{l}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TemporalAnnotation;
    use ndarray::Array4;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Pairwise definition, O(P·N).
    fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    pairs += 1.0;
                    credit += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        credit / pairs
    }

    fn video(n: usize) -> Video {
        Video {
            id: "v".into(),
            frames: Array4::from_shape_fn((n, 1, 1, 3), |(t, ..)| t as u8),
            flow: None,
            boxes: None,
        }
    }

    fn cfg(t: usize) -> ClipConfig {
        ClipConfig {
            frames: t,
            height: 1,
            width: 1,
            flow: false,
        }
    }

    #[test]
    fn single_window_shared_by_all_frames() {
        let mut calls = 0;
        let s = sliding_scores(&video(32), &cfg(32), |c| {
            calls += 1;
            Ok(c.start as f64)
        })
        .unwrap();
        assert_eq!(calls, 1);
        assert!(s.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn thirty_four_frames_three_windows() {
        let mut calls = 0;
        let s = sliding_scores(&video(34), &cfg(32), |c| {
            calls += 1;
            Ok(c.start as f64)
        })
        .unwrap();
        assert_eq!(calls, 3);
        assert!(s[..=16].iter().all(|&x| x == 0.0));
        assert_eq!(s[17], 1.0);
        assert!(s[18..].iter().all(|&x| x == 2.0));
    }

    #[test]
    fn short_video_rejected() {
        assert!(matches!(
            sliding_scores(&video(10), &cfg(32), |_| Ok(0.0)),
            Err(VadError::VideoTooShort { len: 10, clip_len: 32, .. })
        ));
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_scores(&[3.0, 1.0, 5.0]), vec![0.5, 0.0, 1.0]);
        assert_eq!(normalize_scores(&[2.0, 2.0, 2.0]), vec![0.0; 3]);
        let affine: Vec<f64> = [3.0, 1.0, 5.0].iter().map(|a| 2.5 * a - 7.0).collect();
        assert_eq!(normalize_scores(&affine), vec![0.5, 0.0, 1.0]);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[0.1, 0.9, 0.8, 0.3], &[0, 1, 1, 0]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert_eq!(auc_roc(&[0.7, 0.2], &[0, 1]).unwrap(), 0.0);
        assert!(matches!(auc_roc(&[0.1, 0.2], &[1, 1]), Err(VadError::SingleClass(_))));
    }

    fn oracle_fixture() -> (Vec<Video>, AnnotationFile) {
        let videos: Vec<Video> = (0..3)
            .map(|i| Video {
                id: format!("k{i}_x"),
                ..video(20)
            })
            .collect();
        let ann = AnnotationFile {
            videos: vec![
                TemporalAnnotation::from_labels("k0_x", &[[0u8; 5], [1; 5], [0; 5], [1; 5]].concat(), 25),
                TemporalAnnotation::from_labels("k1_x", &[&[0u8; 12][..], &[1; 8]].concat(), 25),
                TemporalAnnotation::from_labels("k2_x", &[&[1u8; 3][..], &[0; 17]].concat(), 25),
            ],
        };
        (videos, ann)
    }

    #[test]
    fn oracle_and_anti_oracle() {
        let (videos, ann) = oracle_fixture();
        let r = evaluate_run(&Scorer::Oracle, &videos, &ann, Aggregation::Concatenate).unwrap();
        assert_eq!(r.auc, 1.0);
        let r = evaluate_run(&Scorer::AntiOracle, &videos, &ann, Aggregation::Concatenate).unwrap();
        assert_eq!(r.auc, 0.0);
        let r = evaluate_run(&Scorer::Oracle, &videos, &ann, Aggregation::PerVideoMean).unwrap();
        assert_eq!(r.auc, 1.0);
    }

    #[test]
    fn missing_annotation_names_video() {
        let (mut videos, ann) = oracle_fixture();
        videos[1].id = "ghost_1".into();
        let err = evaluate_run(&Scorer::Oracle, &videos, &ann, Aggregation::Concatenate).unwrap_err();
        assert!(err.to_string().contains("ghost_1"));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..=50).prop_flat_map(|n| {
            (
                prop::collection::vec(0u8..8, n).prop_map(|v| v.into_iter().map(|x| x as f64 / 7.0).collect()),
                prop::collection::vec(0u8..=1, n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle((scores, labels) in instance()) {
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            prop_assert_eq!(auc_roc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        }

        #[test]
        fn auc_invariant_under_increasing_transform((scores, labels) in instance()) {
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + s).collect();
            prop_assert_eq!(auc_roc(&scores, &labels).unwrap(), auc_roc(&t, &labels).unwrap());
        }

        #[test]
        fn normalized_scores_span_unit_interval(raw in prop::collection::vec(-1e3..1e3f64, 1..40)) {
            let n = normalize_scores(&raw);
            prop_assert!(n.iter().all(|x| (0.0..=1.0).contains(x)));
            let constant = raw.iter().all(|&r| r == raw[0]);
            if !constant {
                prop_assert_eq!(n.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
                prop_assert_eq!(n.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
            }
        }

        #[test]
        fn scaling_one_video_leaves_auc_unchanged(scale in 0.01..100.0f64, seed in 0u64..1000) {
            let (videos, ann) = oracle_fixture();
            let raw = |v: usize| -> Vec<f64> {
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 10 + v as u64);
                (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let build = |k: f64| -> Result<f64> {
                let reports: Vec<VideoReport> = videos.iter().enumerate().map(|(i, v)| {
                    let r: Vec<f64> = raw(i).into_iter().map(|x| if i == 0 { x * k } else { x }).collect();
                    VideoReport { series: ScoreSeries::from_raw(v.id.clone(), r), labels: frame_labels(ann.get(&v.id).unwrap()) }
                }).collect();
                pooled_auc(&reports.iter().collect::<Vec<_>>(), Aggregation::Concatenate)
            };
            prop_assert_eq!(build(1.0).unwrap(), build(scale).unwrap());
        }
    }
}
