//! Point set distances used for the training loss and for evaluation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sq_dist, PointCloud};

/// F-score threshold used when a run does not override it.
pub const DEFAULT_TAU: f64 = 0.01;

/// For every point of `from`, the index of and squared distance to its
/// nearest point in `to`. Ties go to the lowest index.
pub fn nearest(from: &PointCloud, to: &PointCloud) -> Vec<(usize, f64)> {
    let to = to.points();
    from.points()
        .iter()
        .map(|p| {
            let mut best = (0usize, f64::INFINITY);
            for (j, q) in to.iter().enumerate() {
                let d = sq_dist(p, q);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

fn non_empty(name: &str, c: &PointCloud) -> Result<()> {
    if c.is_empty() {
        Err(Error::arg(format!("{name}: point cloud is empty")))
    } else {
        Ok(())
    }
}

fn mean(it: impl Iterator<Item = f64>, n: usize) -> f64 {
    it.sum::<f64>() / n as f64
}

/// Two-sided mean of squared nearest-neighbor distances (unhalved).
pub fn chamfer_l2(p1: &PointCloud, p2: &PointCloud) -> Result<f64> {
    non_empty("chamfer_l2", p1)?;
    non_empty("chamfer_l2", p2)?;
    let a = mean(nearest(p1, p2).into_iter().map(|(_, d)| d), p1.len());
    let b = mean(nearest(p2, p1).into_iter().map(|(_, d)| d), p2.len());
    Ok(a + b)
}

/// How the two directional L1 terms are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L1Convention {
    /// `(d(p1→p2) + d(p2→p1)) / 2`, the usual convention for completion benchmarks.
    #[default]
    Halved,
    /// `d(p1→p2) + d(p2→p1)`.
    Sum,
}

/// Two-sided mean of unsquared nearest-neighbor distances, halved.
pub fn chamfer_l1(p1: &PointCloud, p2: &PointCloud) -> Result<f64> {
    chamfer_l1_with(p1, p2, L1Convention::Halved)
}

pub fn chamfer_l1_with(p1: &PointCloud, p2: &PointCloud, conv: L1Convention) -> Result<f64> {
    non_empty("chamfer_l1", p1)?;
    non_empty("chamfer_l1", p2)?;
    let a = mean(nearest(p1, p2).into_iter().map(|(_, d)| d.sqrt()), p1.len());
    let b = mean(nearest(p2, p1).into_iter().map(|(_, d)| d.sqrt()), p2.len());
    Ok(match conv {
        L1Convention::Halved => 0.5 * (a + b),
        L1Convention::Sum => a + b,
    })
}

/// Per-point gradient with respect to a cloud's coordinates.
pub type PointGrads = Vec<[f64; 3]>;

/// Chamfer L2 plus its gradient with respect to both clouds. The nearest
/// neighbor found first (lowest index) receives the gradient on ties.
pub fn chamfer_l2_with_grad(p1: &PointCloud, p2: &PointCloud) -> Result<(f64, PointGrads, PointGrads)> {
    non_empty("chamfer_l2", p1)?;
    non_empty("chamfer_l2", p2)?;
    let n1 = p1.len() as f64;
    let n2 = p2.len() as f64;
    let mut g1 = vec![[0.0; 3]; p1.len()];
    let mut g2 = vec![[0.0; 3]; p2.len()];
    let fwd = nearest(p1, p2);
    let bwd = nearest(p2, p1);
    let mut loss_a = 0.0;
    for (i, &(j, d)) in fwd.iter().enumerate() {
        loss_a += d;
        let (x, y) = (p1.get(i), p2.get(j));
        for c in 0..3 {
            let g = 2.0 * (x[c] - y[c]) / n1;
            g1[i][c] += g;
            g2[j][c] -= g;
        }
    }
    let mut loss_b = 0.0;
    for (j, &(i, d)) in bwd.iter().enumerate() {
        loss_b += d;
        let (y, x) = (p2.get(j), p1.get(i));
        for c in 0..3 {
            let g = 2.0 * (y[c] - x[c]) / n2;
            g2[j][c] += g;
            g1[i][c] -= g;
        }
    }
    Ok((loss_a / n1 + loss_b / n2, g1, g2))
}

/// Harmonic mean of precision and recall at distance threshold `tau`.
pub fn fscore(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<f64> {
    non_empty("fscore", pred)?;
    non_empty("fscore", gt)?;
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::arg(format!("fscore: tau must be positive, got {tau}")));
    }
    let t2 = tau * tau;
    let hits = |v: Vec<(usize, f64)>| v.iter().filter(|(_, d)| *d < t2).count() as f64;
    let precision = hits(nearest(pred, gt)) / pred.len() as f64;
    let recall = hits(nearest(gt, pred)) / gt.len() as f64;
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// Mean squared distance from each observed input point to the completion.
pub fn fidelity(partial_input: &PointCloud, completion: &PointCloud) -> Result<f64> {
    non_empty("fidelity", partial_input)?;
    non_empty("fidelity", completion)?;
    Ok(mean(
        nearest(partial_input, completion).into_iter().map(|(_, d)| d),
        partial_input.len(),
    ))
}

/// Chamfer L2 from `completion` to its best-matching reference shape.
pub fn mmd(completion: &PointCloud, reference_set: &[PointCloud]) -> Result<f64> {
    if reference_set.is_empty() {
        return Err(Error::arg("mmd: reference set is empty"));
    }
    let mut best = f64::INFINITY;
    for r in reference_set {
        best = best.min(chamfer_l2(completion, r)?);
    }
    Ok(best)
}

/// One evaluation row. Unmeasured quantities stay `None` and serialize as
/// empty CSV cells.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_id: String,
    pub resolution: usize,
    pub cd_l2: Option<f64>,
    pub cd_l1: Option<f64>,
    pub f1: Option<f64>,
    pub tau: f64,
    pub fidelity: Option<f64>,
    pub mmd: Option<f64>,
}

impl MetricReport {
    pub fn new(run_id: impl Into<String>, resolution: usize, tau: f64) -> Self {
        MetricReport { run_id: run_id.into(), resolution, tau, ..Default::default() }
    }

    /// Every present value is finite and non-negative and `f1 ∈ [0, 1]`.
    pub fn is_valid(&self) -> bool {
        let ok = |v: Option<f64>| v.is_none_or(|x| x.is_finite() && x >= 0.0);
        ok(self.cd_l2)
            && ok(self.cd_l1)
            && ok(self.fidelity)
            && ok(self.mmd)
            && self.f1.is_none_or(|f| (0.0..=1.0).contains(&f))
    }
}

/// Column order of every metric CSV this crate writes.
pub const CSV_HEADER: [&str; 8] =
    ["run_id", "resolution", "cd_l2", "cd_l1", "f1", "tau", "fidelity", "mmd"];

pub fn write_reports<W: Write>(out: W, reports: &[MetricReport]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_reports_file(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_reports(std::io::BufWriter::new(f), reports)
}

pub fn read_reports_file(path: &Path) -> Result<Vec<MetricReport>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::Data(format!("{}: unexpected CSV header {header:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
