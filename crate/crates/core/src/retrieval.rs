//! Family search: rank gallery images for each probe subject and score the
//! rankings with average precision and rank@K.
//!
//! A probe subject may have several images. [`AggregationPolicy`] decides how
//! they combine into one score per gallery image:
//!
//! - `MeanEmbedding`: average the L2-normalized probe embeddings, then take
//!   the cosine with each gallery embedding.
//! - `ScoreAggregate(g)`: cosine of every probe image with the gallery image,
//!   reduced by `g` (mean or max).
//!
//! With normalized probe embeddings, `MeanEmbedding` and
//! `ScoreAggregate(Mean)` differ only by a positive factor per probe, so they
//! rank identically.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{DatasetIndex, EmbeddingMatrix, ImageRecord};
use crate::similarity::{cosine_similarity, l2_normalize};
use crate::{Error, Result};

/// One line of a probes JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRecord {
    pub person_id: String,
    pub family_id: String,
    pub image_ids: Vec<String>,
}

pub fn load_probes(path: impl AsRef<Path>) -> Result<Vec<ProbeRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn write_probes(probes: &[ProbeRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for p in probes {
        text.push_str(&serde_json::to_string(p).expect("probe serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeSubject {
    pub person_id: String,
    pub family_id: String,
    /// Embedding rows of the probe's images.
    pub rows: Vec<usize>,
}

impl ProbeSubject {
    pub fn resolve(record: &ProbeRecord, index: &DatasetIndex) -> Result<Self> {
        if record.image_ids.is_empty() {
            return Err(Error::EmptyProbe(record.person_id.clone()));
        }
        Ok(Self {
            person_id: record.person_id.clone(),
            family_id: record.family_id.clone(),
            rows: record
                .image_ids
                .iter()
                .map(|id| index.row_of(id))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GalleryEntry {
    pub image_id: String,
    pub row: usize,
    pub family_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gallery {
    entries: Vec<GalleryEntry>,
}

impl Gallery {
    pub fn new(entries: Vec<GalleryEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidConfig("gallery is empty".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = entries.iter().find(|e| !seen.insert(e.image_id.as_str())) {
            return Err(Error::DuplicateId(dup.image_id.clone()));
        }
        Ok(Self { entries })
    }

    /// Gallery from manifest records, ordered by image id.
    pub fn from_records(records: &[ImageRecord]) -> Result<Self> {
        let mut entries: Vec<GalleryEntry> = records
            .iter()
            .map(|r| GalleryEntry {
                image_id: r.image_id.clone(),
                row: r.row,
                family_id: r.family_id.clone(),
            })
            .collect();
        entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        Self::new(entries)
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Gallery indices sharing `family_id`.
    pub fn relevant_to(&self, family_id: &str) -> HashSet<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.family_id == family_id)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreAggregate {
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationPolicy {
    MeanEmbedding,
    ScoreAggregate(ScoreAggregate),
}

impl AggregationPolicy {
    pub fn name(self) -> &'static str {
        match self {
            AggregationPolicy::MeanEmbedding => "mean-embedding",
            AggregationPolicy::ScoreAggregate(ScoreAggregate::Mean) => "mean",
            AggregationPolicy::ScoreAggregate(ScoreAggregate::Max) => "max",
        }
    }
}

impl fmt::Display for AggregationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-embedding" => Ok(AggregationPolicy::MeanEmbedding),
            "mean" => Ok(AggregationPolicy::ScoreAggregate(ScoreAggregate::Mean)),
            "max" => Ok(AggregationPolicy::ScoreAggregate(ScoreAggregate::Max)),
            other => Err(Error::InvalidConfig(format!(
                "unknown aggregation policy {other:?} (expected mean-embedding, mean or max)"
            ))),
        }
    }
}

/// One score per gallery entry, in gallery order.
pub fn score_probe(
    probe: &ProbeSubject,
    gallery: &Gallery,
    matrix: &EmbeddingMatrix,
    policy: AggregationPolicy,
) -> Result<Vec<f64>> {
    if probe.rows.is_empty() {
        return Err(Error::EmptyProbe(probe.person_id.clone()));
    }
    let probe_rows = probe
        .rows
        .iter()
        .map(|&r| matrix.row_f64(r))
        .collect::<Result<Vec<_>>>()?;
    let gallery_rows = gallery
        .entries
        .iter()
        .map(|e| matrix.row_f64(e.row))
        .collect::<Result<Vec<_>>>()?;

    match policy {
        AggregationPolicy::MeanEmbedding => {
            let mut mean = vec![0.0; matrix.dim()];
            for p in &probe_rows {
                for (m, v) in mean.iter_mut().zip(l2_normalize(p)?) {
                    *m += v;
                }
            }
            let m = probe_rows.len() as f64;
            mean.iter_mut().for_each(|v| *v /= m);
            gallery_rows.iter().map(|u| cosine_similarity(&mean, u)).collect()
        }
        AggregationPolicy::ScoreAggregate(g) => gallery_rows
            .iter()
            .map(|u| {
                let scores = probe_rows
                    .iter()
                    .map(|p| cosine_similarity(p, u))
                    .collect::<Result<Vec<_>>>()?;
                Ok(match g {
                    ScoreAggregate::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
                    ScoreAggregate::Max => scores.into_iter().fold(f64::NEG_INFINITY, f64::max),
                })
            })
            .collect(),
    }
}

/// Gallery indices by descending score; equal scores keep ascending index.
pub fn rank_gallery(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Mean over relevant items of precision at each relevant item's rank.
pub fn average_precision(ranking: &[usize], relevant: &HashSet<usize>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::NoRelevant(String::new()));
    }
    if let Some(&bad) = relevant.iter().find(|&&i| i >= ranking.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            total: ranking.len(),
        });
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, idx) in ranking.iter().enumerate() {
        if relevant.contains(idx) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Ranked gallery for one probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRun {
    pub person_id: String,
    pub family_id: String,
    pub ranking: Vec<usize>,
    /// Scores indexed by gallery position (not by rank).
    pub scores: Vec<f64>,
    pub relevant: HashSet<usize>,
    pub average_precision: f64,
}

impl ProbeRun {
    pub fn hit_within(&self, k: usize) -> bool {
        self.ranking.iter().take(k).any(|i| self.relevant.contains(i))
    }
}

/// Fraction of probes with a relevant entry among their top `k`.
pub fn rank_at_k(runs: &[ProbeRun], k: usize) -> f64 {
    if runs.is_empty() {
        return 0.0;
    }
    runs.iter().filter(|r| r.hit_within(k)).count() as f64 / runs.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub policy: AggregationPolicy,
    pub k: usize,
    pub mean_average_precision: f64,
    pub rank_at_k: f64,
    pub runs: Vec<ProbeRun>,
}

#[derive(Serialize)]
struct ProbeSummary<'a> {
    person_id: &'a str,
    ap: f64,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    policy: &'a str,
    #[serde(rename = "mAP")]
    map: f64,
    #[serde(rename = "rank_at_K")]
    rank_at_k: f64,
    #[serde(rename = "K")]
    k: usize,
    per_probe: Vec<ProbeSummary<'a>>,
}

impl RetrievalReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ReportJson {
            policy: self.policy.name(),
            map: self.mean_average_precision,
            rank_at_k: self.rank_at_k,
            k: self.k,
            per_probe: self
                .runs
                .iter()
                .map(|r| ProbeSummary {
                    person_id: &r.person_id,
                    ap: r.average_precision,
                })
                .collect(),
        })
        .expect("report serializes")
    }
}

/// Scores, ranks and evaluates every probe. Probes are processed in parallel;
/// results keep probe order.
pub fn run_retrieval(
    probes: &[ProbeSubject],
    gallery: &Gallery,
    matrix: &EmbeddingMatrix,
    policy: AggregationPolicy,
    k: usize,
) -> Result<RetrievalReport> {
    let runs = probes
        .par_iter()
        .map(|probe| {
            let relevant = gallery.relevant_to(&probe.family_id);
            if relevant.is_empty() {
                return Err(Error::NoRelevant(probe.person_id.clone()));
            }
            let scores = score_probe(probe, gallery, matrix, policy)?;
            let ranking = rank_gallery(&scores);
            let ap = average_precision(&ranking, &relevant)?;
            Ok(ProbeRun {
                person_id: probe.person_id.clone(),
                family_id: probe.family_id.clone(),
                ranking,
                scores,
                relevant,
                average_precision: ap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let map = if runs.is_empty() {
        0.0
    } else {
        runs.iter().map(|r| r.average_precision).sum::<f64>() / runs.len() as f64
    };
    Ok(RetrievalReport {
        policy,
        k,
        mean_average_precision: map,
        rank_at_k: rank_at_k(&runs, k),
        runs,
    })
}

/// CSV `rank,gallery_image_id,score`, ranks starting at 1.
pub fn write_ranking_to<W: Write>(run: &ProbeRun, gallery: &Gallery, out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["rank", "gallery_image_id", "score"])?;
    for (r, &idx) in run.ranking.iter().enumerate() {
        w.write_record([
            (r + 1).to_string(),
            gallery.entries[idx].image_id.clone(),
            run.scores[idx].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ranking(run: &ProbeRun, gallery: &Gallery, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_ranking_to(run, gallery, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MEAN: AggregationPolicy = AggregationPolicy::ScoreAggregate(ScoreAggregate::Mean);
    const MAX: AggregationPolicy = AggregationPolicy::ScoreAggregate(ScoreAggregate::Max);

    fn gallery(families: &[&str], first_row: usize) -> Gallery {
        Gallery::new(
            families
                .iter()
                .enumerate()
                .map(|(i, f)| GalleryEntry {
                    image_id: format!("g{i}"),
                    row: first_row + i,
                    family_id: f.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn probe(rows: Vec<usize>, family: &str) -> ProbeSubject {
        ProbeSubject {
            person_id: "p".into(),
            family_id: family.into(),
            rows,
        }
    }

    #[test]
    fn hand_computed_two_image_probe() {
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let m = EmbeddingMatrix::new(2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, s, s]).unwrap();
        let g = gallery(&["A", "B"], 2);
        let p = probe(vec![0, 1], "A");
        let mean = score_probe(&p, &g, &m, MEAN).unwrap();
        assert!((mean[0] - 0.5).abs() < 1e-7 && (mean[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7);
        let emb = score_probe(&p, &g, &m, AggregationPolicy::MeanEmbedding).unwrap();
        assert!((emb[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7 && (emb[1] - 1.0).abs() < 1e-7);
        assert_eq!(rank_gallery(&mean)[0], 1);
        assert_eq!(rank_gallery(&emb)[0], 1);
    }

    #[test]
    fn single_image_probe_all_policies_agree() {
        let m = EmbeddingMatrix::new(3, vec![1.0, 2.0, 0.5, 0.3, -1.0, 2.0, -0.5, 0.1, 0.9]).unwrap();
        let g = gallery(&["A", "B"], 1);
        let p = probe(vec![0], "A");
        let a = score_probe(&p, &g, &m, MEAN).unwrap();
        let b = score_probe(&p, &g, &m, MAX).unwrap();
        let c = score_probe(&p, &g, &m, AggregationPolicy::MeanEmbedding).unwrap();
        for i in 0..2 {
            assert_eq!(a[i], b[i]);
            assert!((a[i] - c[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn max_aggregation_takes_best_image() {
        // Probe images at angles giving cosines 0.2, 0.8, 0.5 with gallery (1, 0).
        let rows: Vec<f32> = [0.2f64, 0.8, 0.5]
            .iter()
            .flat_map(|&c| [c as f32, (1.0 - c * c).sqrt() as f32])
            .chain([1.0, 0.0])
            .collect();
        let m = EmbeddingMatrix::new(2, rows).unwrap();
        let g = gallery(&["A"], 3);
        let s = score_probe(&probe(vec![0, 1, 2], "A"), &g, &m, MAX).unwrap();
        assert!((s[0] - 0.8).abs() < 1e-6);
        assert!(matches!(
            score_probe(&probe(vec![], "A"), &g, &m, MAX),
            Err(Error::EmptyProbe(_))
        ));
    }

    #[test]
    fn ranking_rules() {
        assert_eq!(rank_gallery(&[0.1, 0.9, 0.5]), vec![1, 2, 0]);
        assert_eq!(rank_gallery(&[0.3; 5]), vec![0, 1, 2, 3, 4]);
        assert_eq!(rank_gallery(&[0.5, 0.9, 0.5, 0.9]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn ap_examples() {
        let set = |v: &[usize]| v.iter().copied().collect::<HashSet<_>>();
        assert_eq!(average_precision(&[2, 0, 1], &set(&[2])).unwrap(), 1.0);
        let ap = average_precision(&[3, 1, 4, 0, 2], &set(&[3, 4])).unwrap();
        assert!((ap - 0.8333333333).abs() < 1e-10);
        // Two relevant items ranked last of five: (1/4 + 2/5) / 2.
        let ap = average_precision(&[0, 1, 2, 3, 4], &set(&[3, 4])).unwrap();
        assert!((ap - 0.325).abs() < 1e-15);
        assert!(matches!(average_precision(&[0, 1], &set(&[])), Err(Error::NoRelevant(_))));
        assert!(average_precision(&[0, 1], &set(&[2])).is_err());
    }

    /// Smallest AP among all orderings, by enumerating every placement of
    /// relevant items (n choose r positions).
    fn brute_min_ap(n: usize, r: usize) -> f64 {
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != r {
                continue;
            }
            let ranking: Vec<usize> = (0..n).collect();
            let rel: HashSet<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            best = best.min(average_precision(&ranking, &rel).unwrap());
        }
        best
    }

    #[test]
    fn relevant_last_is_minimal_ap() {
        for n in 1..=8 {
            for r in 1..=n {
                let ranking: Vec<usize> = (0..n).collect();
                let last: HashSet<usize> = (n - r..n).collect();
                let ap = average_precision(&ranking, &last).unwrap();
                assert!((ap - brute_min_ap(n, r)).abs() < 1e-15, "n={n} r={r}");
            }
        }
    }

    fn run_with(ranking: Vec<usize>, relevant: &[usize]) -> ProbeRun {
        ProbeRun {
            person_id: "p".into(),
            family_id: "F".into(),
            scores: vec![0.0; ranking.len()],
            ranking,
            relevant: relevant.iter().copied().collect(),
            average_precision: 0.0,
        }
    }

    #[test]
    fn rank_at_k_examples() {
        let runs = vec![run_with(vec![0, 1, 2], &[0]), run_with(vec![1, 0, 2], &[1])];
        for k in 1..4 {
            assert_eq!(rank_at_k(&runs, k), 1.0);
        }
        let late = vec![run_with(vec![0, 1, 2, 3], &[3])];
        assert_eq!(rank_at_k(&late, 3), 0.0);
        assert_eq!(rank_at_k(&late, 4), 1.0);

        // First relevant ranks: 1, 2, 2, 3, 5, 1, 4, 6, 2, 3.
        let firsts = [1usize, 2, 2, 3, 5, 1, 4, 6, 2, 3];
        let runs: Vec<_> = firsts
            .iter()
            .map(|&f| run_with((0..6).collect(), &[f - 1]))
            .collect();
        assert_eq!(rank_at_k(&runs, 1), 0.2);
        assert_eq!(rank_at_k(&runs, 2), 0.5);
        assert_eq!(rank_at_k(&runs, 3), 0.7);
        assert_eq!(rank_at_k(&runs, 5), 0.9);
    }

    #[test]
    fn perfect_one_hot_families() {
        // 3 families, one-hot embeddings; probes and gallery drawn from them.
        let mut data = Vec::new();
        let fam = [0usize, 0, 1, 1, 1, 2, 0, 1, 2];
        for &f in &fam {
            let mut v = [0.0f32; 3];
            v[f] = 1.0;
            data.extend_from_slice(&v);
        }
        let m = EmbeddingMatrix::new(3, data).unwrap();
        let names = ["A", "B", "C"];
        let g = gallery(&fam[..6].iter().map(|&f| names[f]).collect::<Vec<_>>(), 0);
        let probes: Vec<_> = [(vec![6], "A"), (vec![7], "B"), (vec![8], "C")]
            .into_iter()
            .map(|(rows, f)| probe(rows, f))
            .collect();
        for policy in [MEAN, MAX, AggregationPolicy::MeanEmbedding] {
            let rep = run_retrieval(&probes, &g, &m, policy, 1).unwrap();
            assert_eq!(rep.mean_average_precision, 1.0);
            assert_eq!(rep.rank_at_k, 1.0);
        }
        let orphan = probe(vec![6], "Z");
        assert!(matches!(
            run_retrieval(&[orphan], &g, &m, MEAN, 1),
            Err(Error::NoRelevant(_))
        ));
    }

    #[test]
    fn policy_names_round_trip() {
        for p in [MEAN, MAX, AggregationPolicy::MeanEmbedding] {
            assert_eq!(p.name().parse::<AggregationPolicy>().unwrap(), p);
        }
        assert!("median".parse::<AggregationPolicy>().is_err());
    }

    #[test]
    fn gallery_validation() {
        assert!(Gallery::new(vec![]).is_err());
        let e = GalleryEntry { image_id: "x".into(), row: 0, family_id: "F".into() };
        assert!(matches!(Gallery::new(vec![e.clone(), e]), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn ranking_csv() {
        let g = gallery(&["A", "B"], 0);
        let run = ProbeRun { scores: vec![0.25, 0.5], ..run_with(vec![1, 0], &[0]) };
        let mut buf = Vec::new();
        write_ranking_to(&run, &g, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "rank,gallery_image_id,score\n1,g1,0.5\n2,g0,0.25\n");
    }

    proptest! {
        #[test]
        fn ranking_is_sorted_permutation(scores in prop::collection::vec((0i32..10).prop_map(f64::from), 1..60)) {
            let ranking = rank_gallery(&scores);
            let mut seen = ranking.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..scores.len()).collect::<Vec<_>>());
            // Reference: stable sort on (-score, index).
            let mut reference: Vec<usize> = (0..scores.len()).collect();
            reference.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            prop_assert_eq!(&ranking, &reference);
            let transformed: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp() - 3.0).collect();
            prop_assert_eq!(rank_gallery(&transformed), ranking);
        }

        #[test]
        fn rank_at_k_monotone(firsts in prop::collection::vec(0usize..8, 1..20)) {
            let runs: Vec<_> = firsts.iter().map(|&f| run_with((0..8).collect(), &[f])).collect();
            let mut prev = 0.0;
            for k in 1..=8 {
                let v = rank_at_k(&runs, k);
                prop_assert!(v >= prev);
                prev = v;
            }
            prop_assert_eq!(prev, 1.0);
        }
    }
}
