//! Track/detection association: the weighted position + appearance cost,
//! a Hungarian solver for rectangular matrices, and max-cost gating.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine_distance, Embedding};
use crate::error::{Error, Result};
use crate::geometry::{iou_distance, BBox};

pub type CostMatrix = DMatrix<f64>;

/// Weights of the association cost and the gate applied to matches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Weight of the IoU distance.
    pub alpha: f64,
    /// Weight of the cosine distance between embeddings.
    pub beta: f64,
    /// Matches costing more than this are discarded.
    pub max_cost: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            max_cost: 0.7,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::param("alpha", "must be finite and >= 0"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::param("beta", "must be finite and >= 0"));
        }
        if self.alpha + self.beta <= 0.0 {
            return Err(Error::param("alpha", "alpha + beta must be > 0"));
        }
        if !(self.max_cost.is_finite() && self.max_cost > 0.0) {
            return Err(Error::param("max_cost", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Whether the appearance term takes part in the cost.
    pub fn uses_appearance(&self) -> bool {
        self.beta > 0.0
    }
}

/// One side of an association: a box and, when available, its embedding.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub bbox: BBox,
    pub embedding: Option<&'a Embedding>,
}

/// `alpha * iou_distance + beta * cosine_distance`.
pub fn pair_cost(
    track_box: &BBox,
    track_emb: &Embedding,
    det_box: &BBox,
    det_emb: &Embedding,
    p: &CostParams,
) -> f64 {
    p.alpha * iou_distance(track_box, det_box) + p.beta * cosine_distance(track_emb, det_emb)
}

/// Cost of every track (rows) against every detection (columns).
///
/// With `beta == 0` embeddings are ignored and may be absent; otherwise a
/// missing embedding is an error.
pub fn build_cost_matrix(tracks: &[Candidate], detections: &[Candidate], p: &CostParams) -> Result<CostMatrix> {
    let appearance = p.uses_appearance();
    if appearance {
        if let Some(i) = tracks.iter().position(|t| t.embedding.is_none()) {
            return Err(Error::param("beta", format!("track {i} has no embedding but beta > 0")));
        }
        if let Some(j) = detections.iter().position(|d| d.embedding.is_none()) {
            return Err(Error::param("beta", format!("detection {j} has no embedding but beta > 0")));
        }
    }
    let mut m = CostMatrix::zeros(tracks.len(), detections.len());
    for (i, t) in tracks.iter().enumerate() {
        for (j, d) in detections.iter().enumerate() {
            m[(i, j)] = match (appearance, t.embedding, d.embedding) {
                (true, Some(te), Some(de)) => pair_cost(&t.bbox, te, &d.bbox, de, p),
                _ => p.alpha * iou_distance(&t.bbox, &d.bbox),
            };
        }
    }
    Ok(m)
}

fn check_finite(cost: &CostMatrix) -> Result<()> {
    for c in 0..cost.ncols() {
        for r in 0..cost.nrows() {
            let v = cost[(r, c)];
            if !v.is_finite() {
                return Err(Error::NonFiniteCost { row: r, col: c, value: v });
            }
        }
    }
    Ok(())
}

/// Minimum-cost matching of size `min(rows, cols)`.
///
/// Pairs are returned sorted by row. Among optimal matchings the
/// lexicographically smallest `(row, col)` sequence is chosen.
pub fn hungarian_solve(cost: &CostMatrix) -> Result<Vec<(usize, usize)>> {
    check_finite(cost)?;
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    let n = rows.max(cols);
    // Padding with one constant adds the same amount to every complete
    // matching, so it never changes which real pairs are optimal.
    let pad = cost.max();
    let square: Vec<f64> = (0..n * n)
        .map(|k| {
            let (r, c) = (k / n, k % n);
            if r < rows && c < cols {
                cost[(r, c)]
            } else {
                pad
            }
        })
        .collect();

    let mut solution = solve_square(&square, n);
    canonicalize(&square, n, rows, &mut solution);

    Ok(solution
        .row_to_col
        .iter()
        .enumerate()
        .filter(|&(r, &c)| r < rows && c < cols)
        .map(|(r, &c)| (r, c))
        .collect())
}

struct SquareSolution {
    row_to_col: Vec<usize>,
    col_to_row: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Shortest augmenting path Hungarian method with row/column potentials,
/// O(n^3). `c` is row-major `n x n`.
fn solve_square(c: &[f64], n: usize) -> SquareSolution {
    // 1-based internally; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![f64::INFINITY; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = &c[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    let mut col_to_row = vec![0usize; n];
    for j in 1..=n {
        row_to_col[owner[j] - 1] = j - 1;
        col_to_row[j - 1] = owner[j] - 1;
    }
    SquareSolution {
        row_to_col,
        col_to_row,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    }
}

/// Rewrites an optimal matching into the lexicographically smallest optimal
/// one over the first `rows` rows.
///
/// Every optimal matching uses only edges with zero reduced cost under the
/// final potentials, so the search runs over that "tight" subgraph: each row
/// in turn takes the smallest tight column that still admits a perfect
/// matching of the remaining rows.
fn canonicalize(c: &[f64], n: usize, rows: usize, s: &mut SquareSolution) {
    let scale = c.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale * n as f64;
    let tight = |r: usize, col: usize| c[r * n + col] - s.u[r] - s.v[col] <= tol;

    let mut parent_of_col = vec![usize::MAX; n];
    let mut queue = Vec::with_capacity(n);
    for r in 0..rows {
        let current = s.row_to_col[r];
        for target in 0..current {
            let holder = s.col_to_row[target];
            if holder < r || !tight(r, target) {
                continue;
            }
            // `r` takes `target`; `holder` must reach the column `r` frees.
            parent_of_col.iter_mut().for_each(|p| *p = usize::MAX);
            queue.clear();
            queue.push(holder);
            let mut head = 0;
            let mut found: Option<usize> = None;
            'bfs: while head < queue.len() {
                let x = queue[head];
                head += 1;
                for y in 0..n {
                    if y == target || parent_of_col[y] != usize::MAX || y == s.row_to_col[x] || !tight(x, y) {
                        continue;
                    }
                    if y == current {
                        parent_of_col[y] = x;
                        found = Some(x);
                        break 'bfs;
                    }
                    let next = s.col_to_row[y];
                    if next <= r {
                        continue;
                    }
                    parent_of_col[y] = x;
                    queue.push(next);
                }
            }
            let Some(mut row) = found else { continue };
            let mut col = current;
            loop {
                let held = s.row_to_col[row];
                s.row_to_col[row] = col;
                s.col_to_row[col] = row;
                if row == holder {
                    break;
                }
                col = held;
                row = parent_of_col[held];
            }
            s.row_to_col[r] = target;
            s.col_to_row[target] = r;
            break;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub track: usize,
    pub detection: usize,
    pub cost: f64,
}

/// Outcome of gated matching. Every input row/column index appears exactly once.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    pub matches: Vec<Match>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Solves the matching, then drops every pair costing more than `max_cost`.
pub fn gate_and_assign(cost: &CostMatrix, p: &CostParams) -> Result<Assignment> {
    let (rows, cols) = cost.shape();
    let mut track_used = vec![false; rows];
    let mut det_used = vec![false; cols];
    let mut matches = Vec::new();
    for (r, c) in hungarian_solve(cost)? {
        let v = cost[(r, c)];
        if v <= p.max_cost {
            track_used[r] = true;
            det_used[c] = true;
            matches.push(Match {
                track: r,
                detection: c,
                cost: v,
            });
        }
    }
    let unused = |flags: &[bool]| flags.iter().enumerate().filter(|(_, &u)| !u).map(|(i, _)| i).collect();
    Ok(Assignment {
        matches,
        unmatched_tracks: unused(&track_used),
        unmatched_detections: unused(&det_used),
    })
}
