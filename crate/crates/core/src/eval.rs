//! Cross-modal retrieval scoring, ranking and (class-averaged) mAP.
//!
//! For x→y retrieval the query is `E_x(x)` and every gallery item `y_j` is
//! brought into the x-space as `T_yx(E_y(y_j))`; y→x is symmetric. A gallery
//! item is relevant when it shares the query's class. Queries and galleries
//! come from different modalities, so no self-match is removed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{PairedDataset, Split};
use crate::error::{Error, Result};
use crate::loss::Metric;
use crate::model::DstcModel;
use crate::tensor::{dot, squared_distance, Matrix, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    XToY,
    YToX,
    Both,
}

impl Direction {
    pub fn short_name(self) -> &'static str {
        match self {
            Direction::XToY => "x2y",
            Direction::YToX => "y2x",
            Direction::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x2y" => Some(Direction::XToY),
            "y2x" => Some(Direction::YToX),
            "both" => Some(Direction::Both),
            _ => None,
        }
    }
}

/// Similarity of `query` to every gallery row; higher is better.
///
/// Euclidean: `−‖a − b‖²`. Cosine: `cos(a, b)`, which is undefined for
/// zero vectors.
pub fn score(query: &[f64], gallery: &Matrix, metric: Metric) -> Result<Vec<f64>> {
    if query.len() != gallery.cols() {
        return Err(Error::dims("score", (1, query.len()), gallery.shape()));
    }
    match metric {
        Metric::Euclidean => Ok(gallery.iter_rows().map(|g| -squared_distance(query, g)).collect()),
        Metric::Cosine => {
            let qn = dot(query, query).sqrt();
            if qn == 0.0 {
                return Err(Error::ZeroNorm);
            }
            gallery
                .iter_rows()
                .map(|g| {
                    let gn = dot(g, g).sqrt();
                    if gn == 0.0 {
                        Err(Error::ZeroNorm)
                    } else {
                        Ok(dot(query, g) / (qn * gn))
                    }
                })
                .collect()
        }
    }
}

/// Gallery indices by descending score; equal scores keep index order.
pub fn rank(scores: &[f64]) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("cannot rank an empty gallery".into()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NanScore(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    Ok(order)
}

/// Average precision of a full ranking. `relevant` is indexed by gallery
/// position, `ranking` lists gallery positions best first.
pub fn average_precision(ranking: &[usize], relevant: &[bool]) -> Result<f64> {
    if ranking.len() != relevant.len() {
        return Err(Error::dims("average_precision", (ranking.len(), 1), (relevant.len(), 1)));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &g) in ranking.iter().enumerate() {
        if relevant[g] {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoRelevant);
    }
    Ok(sum / hits as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub direction: Direction,
    /// Dataset index of the query item.
    pub index: usize,
    pub class: usize,
    /// `None` when the gallery has no item of the query's class.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    pub class: usize,
    pub queries: usize,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub metric: Metric,
    pub queries: Vec<QueryResult>,
    pub map: f64,
    pub class_avg_map: f64,
    pub per_class: Vec<ClassMap>,
    /// Queries left out of the averages because AP was undefined.
    pub excluded: usize,
    pub gallery_size: usize,
    /// Query and gallery embeddings with zero norm. Under cosine scoring
    /// they score 0 against everything.
    pub zero_norm: usize,
}

impl RetrievalReport {
    /// Averages one direction's per-query APs.
    pub fn from_queries(direction: Direction, metric: Metric, queries: Vec<QueryResult>, gallery_size: usize) -> Self {
        let scored: Vec<&QueryResult> = queries.iter().filter(|q| q.ap.is_some()).collect();
        let excluded = queries.len() - scored.len();
        let map = mean(scored.iter().map(|q| q.ap.unwrap()));
        let mut by_class: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for q in &scored {
            by_class.entry(q.class).or_default().push(q.ap.unwrap());
        }
        let per_class: Vec<ClassMap> = by_class
            .into_iter()
            .map(|(class, aps)| ClassMap {
                class,
                queries: aps.len(),
                map: mean(aps.iter().copied()),
            })
            .collect();
        let class_avg_map = mean(per_class.iter().map(|c| c.map));
        Self {
            direction,
            metric,
            queries,
            map,
            class_avg_map,
            per_class,
            excluded,
            gallery_size,
            zero_norm: 0,
        }
    }

    /// Joins the two directional reports; both averages are means of the
    /// directional values.
    pub fn both(x2y: RetrievalReport, y2x: RetrievalReport) -> Result<Self> {
        if x2y.direction != Direction::XToY || y2x.direction != Direction::YToX || x2y.metric != y2x.metric {
            return Err(Error::InvalidArgument("combining requires an x2y and a y2x report with the same metric".into()));
        }
        let mut per_class: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
        for c in x2y.per_class.iter().chain(&y2x.per_class) {
            let e = per_class.entry(c.class).or_default();
            e.0 += c.queries;
            e.1.push(c.map);
        }
        let mut queries = x2y.queries;
        queries.extend(y2x.queries);
        Ok(Self {
            direction: Direction::Both,
            metric: x2y.metric,
            queries,
            map: 0.5 * (x2y.map + y2x.map),
            class_avg_map: 0.5 * (x2y.class_avg_map + y2x.class_avg_map),
            per_class: per_class
                .into_iter()
                .map(|(class, (queries, maps))| ClassMap {
                    class,
                    queries,
                    map: mean(maps.into_iter()),
                })
                .collect(),
            excluded: x2y.excluded + y2x.excluded,
            gallery_size: x2y.gallery_size,
            zero_norm: x2y.zero_norm + y2x.zero_norm,
        })
    }

    /// Per-query CSV: `direction,index,class,ap` (blank AP for excluded queries).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("direction,index,class,ap\n");
        for q in &self.queries {
            let ap = q.ap.map(|v| format!("{v:.10}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", q.direction.short_name(), q.index, q.class, ap);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "direction: {}", self.direction.short_name());
        let _ = writeln!(out, "metric: {}", self.metric.short_name());
        let _ = writeln!(out, "mAP: {:.6}", self.map);
        let _ = writeln!(out, "class-averaged mAP: {:.6}", self.class_avg_map);
        let _ = writeln!(out, "queries: {} (excluded {})", self.queries.len(), self.excluded);
        if self.zero_norm > 0 {
            let _ = writeln!(out, "zero-norm embeddings: {}", self.zero_norm);
        }
        let _ = writeln!(out, "class  queries  mAP");
        for c in &self.per_class {
            let _ = writeln!(out, "{:>5}  {:>7}  {:.6}", c.class, c.queries, c.map);
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Ranks `gallery` for every query embedding and records its AP.
/// Cosine scores are computed on rows normalized with [`NORM_EPS`].
pub fn retrieve(
    direction: Direction,
    metric: Metric,
    queries: &Matrix,
    query_ids: &[(usize, usize)],
    gallery: &Matrix,
    gallery_labels: &[usize],
) -> Result<RetrievalReport> {
    if queries.rows() != query_ids.len() || gallery.rows() != gallery_labels.len() {
        return Err(Error::Shape("query or gallery labels do not match embeddings".into()));
    }
    if queries.rows() == 0 || gallery.rows() == 0 {
        return Err(Error::EmptySplit("query or gallery".into()));
    }
    // cosine scores are dot products of clamped unit rows, so a zero row is
    // orthogonal to everything instead of an error
    let (queries, gallery, zero_norm) = match metric {
        Metric::Euclidean => (queries.clone(), gallery.clone(), 0),
        Metric::Cosine => {
            let zeros = queries.row_norms().iter().chain(&gallery.row_norms()).filter(|&&n| n <= NORM_EPS).count();
            (queries.l2_normalize_rows(NORM_EPS), gallery.l2_normalize_rows(NORM_EPS), zeros)
        }
    };
    let mut results = Vec::with_capacity(queries.rows());
    for (q, &(index, class)) in queries.iter_rows().zip(query_ids) {
        let relevant: Vec<bool> = gallery_labels.iter().map(|&c| c == class).collect();
        let ap = if relevant.contains(&true) {
            let scores: Vec<f64> = match metric {
                Metric::Euclidean => score(q, &gallery, metric)?,
                Metric::Cosine => gallery.iter_rows().map(|g| dot(q, g)).collect(),
            };
            Some(average_precision(&rank(&scores)?, &relevant)?)
        } else {
            None
        };
        results.push(QueryResult {
            direction,
            index,
            class,
            ap,
        });
    }
    let mut report = RetrievalReport::from_queries(direction, metric, results, gallery.rows());
    report.zero_norm = zero_norm;
    Ok(report)
}

/// Cross-modal retrieval over one split, using eval-mode forwards.
pub fn evaluate(model: &DstcModel, data: &PairedDataset, split: Split, direction: Direction, metric: Metric) -> Result<RetrievalReport> {
    model.check_compatible(data.num_classes(), data.x_dim(), data.y_dim())?;
    let indices = data.split_indices(split);
    if indices.is_empty() {
        return Err(Error::EmptySplit(split.name().into()));
    }
    let batch = data.batch(&indices);
    let ids: Vec<(usize, usize)> = indices.iter().copied().zip(batch.labels.iter().copied()).collect();
    let x2y = || -> Result<RetrievalReport> {
        let q = model.embed_x(&batch.x)?;
        let g = model.translate_y(&batch.y)?;
        retrieve(Direction::XToY, metric, &q, &ids, &g, &batch.labels)
    };
    let y2x = || -> Result<RetrievalReport> {
        let q = model.embed_y(&batch.y)?;
        let g = model.translate_x(&batch.x)?;
        retrieve(Direction::YToX, metric, &q, &ids, &g, &batch.labels)
    };
    match direction {
        Direction::XToY => x2y(),
        Direction::YToX => y2x(),
        Direction::Both => RetrievalReport::both(x2y()?, y2x()?),
    }
}

/// One (train metric, test metric, direction) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub train_metric: Metric,
    pub test_metric: Metric,
    pub direction: Direction,
    pub map: f64,
    pub class_avg_map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricGrid {
    pub cells: Vec<GridCell>,
}

impl MetricGrid {
    pub fn get(&self, train: Metric, test: Metric, direction: Direction) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.train_metric == train && c.test_metric == test && c.direction == direction)
    }
}

pub const TEST_METRICS: [Metric; 2] = [Metric::Cosine, Metric::Euclidean];
pub const DIRECTIONS: [Direction; 3] = [Direction::XToY, Direction::YToX, Direction::Both];

/// Evaluates each trained model under both test metrics and all directions.
pub fn metric_grid(models: &[(Metric, &DstcModel)], data: &PairedDataset, split: Split) -> Result<MetricGrid> {
    let mut cells = Vec::new();
    for &(train_metric, model) in models {
        for test_metric in TEST_METRICS {
            let both = evaluate(model, data, split, Direction::Both, test_metric)?;
            let x2y = evaluate(model, data, split, Direction::XToY, test_metric)?;
            let y2x = evaluate(model, data, split, Direction::YToX, test_metric)?;
            for r in [x2y, y2x, both] {
                cells.push(GridCell {
                    train_metric,
                    test_metric,
                    direction: r.direction,
                    map: r.map,
                    class_avg_map: r.class_avg_map,
                });
            }
        }
    }
    Ok(MetricGrid { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranked(flags: &[u8]) -> f64 {
        let relevant: Vec<bool> = flags.iter().map(|&f| f == 1).collect();
        average_precision(&(0..flags.len()).collect::<Vec<_>>(), &relevant).unwrap()
    }

    #[test]
    fn euclidean_and_cosine_scores() {
        let g = Matrix::row_vector(&[3.0, 4.0]);
        assert_eq!(score(&[0.0, 0.0], &g, Metric::Euclidean).unwrap(), vec![-25.0]);
        assert_eq!(score(&[1.0, 0.0], &Matrix::row_vector(&[1.0, 0.0]), Metric::Cosine).unwrap(), vec![1.0]);
        assert!(matches!(score(&[0.0, 0.0], &g, Metric::Cosine), Err(Error::ZeroNorm)));
    }

    #[test]
    fn ranking_rules() {
        assert_eq!(rank(&[0.1, 0.9, 0.5]).unwrap(), vec![1, 2, 0]);
        assert_eq!(rank(&[0.3; 4]).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(rank(&[0.5, 0.9, 0.1]).unwrap(), vec![1, 0, 2]);
        assert_eq!(rank(&[0.1, 0.5, 0.9]).unwrap(), vec![2, 1, 0]);
        assert!(matches!(rank(&[0.1, f64::NAN]), Err(Error::NanScore(1))));
    }

    #[test]
    fn hand_computed_average_precision() {
        assert_eq!(ranked(&[1, 1, 0, 0]), 1.0);
        assert!((ranked(&[1, 0, 1, 0]) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((ranked(&[0, 0, 1]) - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            average_precision(&[0, 1], &[false, false]),
            Err(Error::NoRelevant)
        ));
    }

    #[test]
    fn class_average_differs_from_global_on_imbalance() {
        let q = |class, ap| QueryResult {
            direction: Direction::XToY,
            index: 0,
            class,
            ap: Some(ap),
        };
        let r = RetrievalReport::from_queries(Direction::XToY, Metric::Cosine, vec![q(0, 1.0), q(0, 0.5), q(1, 0.5)], 3);
        assert!((r.map - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.class_avg_map - 0.625).abs() < 1e-15);
    }

    #[test]
    fn absent_class_queries_are_excluded() {
        let queries = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let gallery = Matrix::from_rows(&[[1.0, 0.1], [0.0, 0.9]]).unwrap();
        let r = retrieve(Direction::XToY, Metric::Cosine, &queries, &[(0, 0), (1, 2)], &gallery, &[0, 1]).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.queries[1].ap, None);
        assert_eq!(r.map, 1.0);
        assert_eq!(r.gallery_size, 2);
        assert!(r.to_csv().contains("x2y,1,2,\n"));
    }

    #[test]
    fn exact_translation_retrieves_perfectly() {
        let queries = Matrix::row_vector(&[0.2, -1.0, 0.4]);
        let gallery = Matrix::from_rows(&[[5.0, 5.0, 5.0], [0.2, -1.0, 0.4], [-3.0, 0.0, 1.0]]).unwrap();
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let r = retrieve(Direction::YToX, metric, &queries, &[(0, 1)], &gallery, &[0, 1, 2]).unwrap();
            assert_eq!(r.map, 1.0);
        }
    }
}
