//! Patch contrastive learning: confidence partitions and the patch contrast
//! error that pulls confident same-class embeddings together and pushes them
//! away from low-confidence ones.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::head::ClassScores;

/// Norm below which an embedding is considered degenerate.
pub const NORM_FLOOR: f64 = 1e-12;

pub fn cosine_similarity(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    let nu = u.dot(&u).sqrt();
    if nu <= NORM_FLOOR {
        return Err(Error::DegenerateEmbedding { row: 0, norm: nu });
    }
    let nv = v.dot(&v).sqrt();
    if nv <= NORM_FLOOR {
        return Err(Error::DegenerateEmbedding { row: 1, norm: nv });
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine similarity mapped affinely onto `[0, 1]`.
pub fn normalized_similarity(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    Ok((1.0 + cosine_similarity(u, v)?) / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPartition {
    pub high: Vec<usize>,
    pub low: Vec<usize>,
}

impl ClassPartition {
    /// Ordered high-high pairs, `n (n - 1)`.
    pub fn positive_pairs(&self) -> usize {
        self.high.len() * self.high.len().saturating_sub(1)
    }

    pub fn negative_pairs(&self) -> usize {
        self.high.len() * self.low.len()
    }
}

/// Per-class high (`z > eps`) and low (`z < 1 - eps`) confidence patch sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidencePartition {
    pub eps: f64,
    pub classes: Vec<ClassPartition>,
}

pub fn validate_eps(eps: f64) -> Result<()> {
    if eps > 0.5 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "eps = {eps} is invalid; the confidence threshold must lie in (0.5, 1)"
        )))
    }
}

pub fn partition_confidence(scores: &ClassScores, eps: f64) -> Result<ConfidencePartition> {
    partition_matrix(&scores.z, eps)
}

pub(crate) fn partition_matrix(z: &Array2<f64>, eps: f64) -> Result<ConfidencePartition> {
    validate_eps(eps)?;
    let classes = z
        .columns()
        .into_iter()
        .map(|col| ClassPartition {
            high: (0..col.len()).filter(|&i| col[i] > eps).collect(),
            low: (0..col.len()).filter(|&i| col[i] < 1.0 - eps).collect(),
        })
        .collect();
    Ok(ConfidencePartition { eps, classes })
}

fn check_rows(f: ArrayView2<f64>, rows: &[usize]) -> Result<()> {
    for &r in rows {
        let row = f.row(r);
        let n = row.dot(&row).sqrt();
        if n <= NORM_FLOOR {
            return Err(Error::DegenerateEmbedding { row: r, norm: n });
        }
    }
    Ok(())
}

fn check_class(partition: &ConfidencePartition, class: usize) -> Result<&ClassPartition> {
    partition.classes.get(class).ok_or_else(|| {
        Error::Shape(format!(
            "class {class} outside a partition of {} classes",
            partition.classes.len()
        ))
    })
}

fn normalized_rows(f: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), f.ncols()));
    for (k, &r) in rows.iter().enumerate() {
        let row = f.row(r);
        let n = row.dot(&row).sqrt();
        out.row_mut(k).assign(&(&row / n));
    }
    out
}

/// Contrast error for one class. Each of the two averaged terms is zero when
/// it has no pairs.
pub fn pce_loss(
    f_out: ArrayView2<f64>,
    partition: &ConfidencePartition,
    class: usize,
) -> Result<f64> {
    let part = check_class(partition, class)?;
    check_rows(f_out, &part.high)?;
    check_rows(f_out, &part.low)?;
    let high = normalized_rows(f_out, &part.high);
    let low = normalized_rows(f_out, &part.low);

    let mut loss = 0.0;
    let n_pos = part.positive_pairs();
    if n_pos > 0 {
        let sim = high.dot(&high.t());
        let mut acc = 0.0;
        for i in 0..sim.nrows() {
            for j in 0..sim.ncols() {
                if i != j {
                    acc += 1.0 - (1.0 + sim[(i, j)]) / 2.0;
                }
            }
        }
        loss += acc / n_pos as f64;
    }
    let n_neg = part.negative_pairs();
    if n_neg > 0 {
        let sim = high.dot(&low.t());
        loss += sim.iter().map(|s| (1.0 + s) / 2.0).sum::<f64>() / n_neg as f64;
    }
    Ok(loss)
}

/// Differentiable version of [`pce_loss`]. Returns `None` when the class has
/// no pairs at all, so callers can skip adding a zero term.
pub fn pce_loss_var(
    g: &mut Graph,
    f_out: Var,
    partition: &ConfidencePartition,
    class: usize,
) -> Result<Option<Var>> {
    let part = check_class(partition, class)?;
    let n_pos = part.positive_pairs();
    let n_neg = part.negative_pairs();
    if n_pos == 0 && n_neg == 0 {
        return Ok(None);
    }
    check_rows(g.value(f_out).view(), &part.high)?;
    check_rows(g.value(f_out).view(), &part.low)?;

    let high = g.gather_rows(f_out, &part.high);
    let high = g.normalize_rows(high);
    let mut terms = Vec::with_capacity(2);
    if n_pos > 0 {
        // (1/N) sum_{i != j} (1 - S)/2  =  1/2 - sum_{i != j} S / (2N)
        let n = part.high.len();
        let sim = g.matmul_nt(high, high);
        let off_diag = g.constant(Array2::from_shape_fn((n, n), |(i, j)| {
            f64::from(u8::from(i != j))
        }));
        let masked = g.mul(sim, off_diag);
        let total = g.sum(masked);
        let scaled = g.scale(total, -0.5 / n_pos as f64);
        terms.push(g.add_scalar(scaled, 0.5));
    }
    if n_neg > 0 {
        let low = g.gather_rows(f_out, &part.low);
        let low = g.normalize_rows(low);
        let sim = g.matmul_nt(high, low);
        let total = g.sum(sim);
        let scaled = g.scale(total, 0.5 / n_neg as f64);
        terms.push(g.add_scalar(scaled, 0.5));
    }
    Ok(Some(if terms.len() == 2 {
        g.add(terms[0], terms[1])
    } else {
        terms[0]
    }))
}
