//! Success-matrix bookkeeping, continual-learning metrics and an MMD
//! coverage statistic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasksuite::Trajectory;
use crate::trajdiff::{Normalizer, TRAJ_FEATURES};

/// `s_i(j)`: success on task `j` measured after training task `i`, plus the
/// row measured before any training (`i = -1`).
///
/// Every stored row covers all tasks, not only the seen ones, so the
/// over-all-tasks curve and forward transfer need no extra evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessMatrix {
    num_tasks: usize,
    pre: Vec<Option<f64>>,
    rows: Vec<Vec<Option<f64>>>,
}

impl SuccessMatrix {
    pub fn new(num_tasks: usize) -> Self {
        Self {
            num_tasks,
            pre: vec![None; num_tasks],
            rows: Vec::new(),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    /// Number of tasks trained so far.
    pub fn rows_completed(&self) -> usize {
        self.rows.len()
    }

    fn check_row(&self, row: &[Option<f64>]) -> Result<()> {
        if row.len() != self.num_tasks {
            return Err(Error::OutOfRange {
                what: "success row length",
                index: row.len(),
                limit: self.num_tasks,
            });
        }
        for v in row.iter().flatten() {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Config(format!("success rate {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn set_pre_row(&mut self, row: Vec<Option<f64>>) -> Result<()> {
        self.check_row(&row)?;
        self.pre = row;
        Ok(())
    }

    pub fn push_row(&mut self, row: Vec<Option<f64>>) -> Result<()> {
        self.check_row(&row)?;
        if self.rows.len() == self.num_tasks {
            return Err(Error::OutOfRange {
                what: "success matrix row",
                index: self.rows.len(),
                limit: self.num_tasks,
            });
        }
        self.rows.push(row);
        Ok(())
    }

    /// Entry `s_i(j)`; `i = None` addresses the pre-training row.
    pub fn get(&self, i: Option<usize>, j: usize) -> Option<f64> {
        match i {
            None => self.pre.get(j).copied().flatten(),
            Some(i) => self.rows.get(i).and_then(|r| r.get(j).copied().flatten()),
        }
    }

    pub fn pre_row(&self) -> &[Option<f64>] {
        &self.pre
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    fn need(&self, i: Option<usize>, j: usize) -> Result<f64> {
        self.get(i, j).ok_or_else(|| {
            Error::Incomplete(match i {
                None => format!("pre-training entry for task {j}"),
                Some(i) => format!("entry s_{i}({j})"),
            })
        })
    }

    /// Index of the final row, which must exist.
    fn last(&self) -> Result<usize> {
        self.rows
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::Incomplete("no trained rows".into()))
    }

    /// Rows `i` are labelled `-1` (pre-training) then `0..`; empty cells are blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("after_task");
        for j in 0..self.num_tasks {
            out.push_str(&format!(",task_{j}"));
        }
        out.push('\n');
        let fmt = |row: &[Option<f64>]| {
            row.iter()
                .map(|v| v.map_or(String::new(), |x| format!("{x}")))
                .collect::<Vec<_>>()
                .join(",")
        };
        out.push_str(&format!("-1,{}\n", fmt(&self.pre)));
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!("{i},{}\n", fmt(r)));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or(Error::Empty("success matrix csv"))?;
        let num_tasks = header.split(',').count() - 1;
        let mut m = Self::new(num_tasks);
        for line in lines {
            let mut cells = line.split(',');
            let label = cells.next().unwrap_or_default();
            let row = cells
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse::<f64>()
                            .map(Some)
                            .map_err(|e| Error::Config(format!("bad success entry {c:?}: {e}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if label == "-1" {
                m.set_pre_row(row)?;
            } else {
                m.push_row(row)?;
            }
        }
        Ok(m)
    }
}

/// Mean of the final row over all tasks.
pub fn average_performance(m: &SuccessMatrix) -> Result<f64> {
    let n = m.last()?;
    let mut total = 0.0;
    for j in 0..m.num_tasks {
        total += m.need(Some(n), j)?;
    }
    Ok(total / m.num_tasks as f64)
}

/// Mean over tasks `j <= i` of row `i`, and over every task.
pub fn row_curve(m: &SuccessMatrix, i: usize) -> Result<(f64, f64)> {
    let mut seen = 0.0;
    for j in 0..=i {
        seen += m.need(Some(i), j)?;
    }
    let mut all = 0.0;
    for j in 0..m.num_tasks {
        all += m.need(Some(i), j)?;
    }
    Ok((seen / (i + 1) as f64, all / m.num_tasks as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTransfer {
    pub mean: Option<f64>,
    /// `None` where `S_ref = 1` and the ratio is undefined.
    pub per_task: Vec<Option<f64>>,
}

/// `FT_i = (S_i − S_ref)/(1 − S_ref)` with `S_i = (s_i(i) + s_{i−1}(i))/2`
/// and `S_ref = s_ref(i)/2`. Tasks with `S_ref = 1` are excluded; since
/// reference scores lie in `[0, 1]` this guard never fires on valid input.
pub fn forward_transfer(m: &SuccessMatrix, refs: &[f64]) -> Result<ForwardTransfer> {
    let n = m.last()?;
    if refs.len() != m.num_tasks {
        return Err(Error::OutOfRange {
            what: "reference score count",
            index: refs.len(),
            limit: m.num_tasks,
        });
    }
    let mut per_task = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let after = m.need(Some(i), i)?;
        let before = m.need(i.checked_sub(1), i)?;
        let s_ref = refs[i] / 2.0;
        if !(0.0..=1.0).contains(&refs[i]) {
            return Err(Error::Config(format!("reference score {} outside [0, 1]", refs[i])));
        }
        if s_ref >= 1.0 {
            per_task.push(None);
            continue;
        }
        per_task.push(Some(((after + before) / 2.0 - s_ref) / (1.0 - s_ref)));
    }
    let valid: Vec<f64> = per_task.iter().flatten().copied().collect();
    let mean = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
    Ok(ForwardTransfer { mean, per_task })
}

/// `F_i = s_i(i) − s_N(i)`, returned as (mean, per task).
pub fn forgetting(m: &SuccessMatrix) -> Result<(f64, Vec<f64>)> {
    let n = m.last()?;
    let per_task = (0..=n)
        .map(|i| Ok(m.need(Some(i), i)? - m.need(Some(n), i)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok((per_task.iter().sum::<f64>() / per_task.len() as f64, per_task))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub average_performance: f64,
    pub forward_transfer: Option<f64>,
    pub forgetting: f64,
    #[serde(rename = "per_task_FT")]
    pub per_task_ft: Vec<Option<f64>>,
    #[serde(rename = "per_task_F")]
    pub per_task_f: Vec<f64>,
}

impl MetricsReport {
    pub fn compute(method: &str, m: &SuccessMatrix, refs: Option<&[f64]>) -> Result<Self> {
        let (forgetting, per_task_f) = forgetting(m)?;
        let ft = match refs {
            Some(r) => forward_transfer(m, r)?,
            None => ForwardTransfer {
                mean: None,
                per_task: vec![None; m.rows_completed()],
            },
        };
        Ok(Self {
            method: method.to_string(),
            average_performance: average_performance(m)?,
            forward_transfer: ft.mean,
            forgetting,
            per_task_ft: ft.per_task,
            per_task_f,
        })
    }
}

/// Squared Euclidean distance.
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of the pairwise distances within the pooled sample.
pub fn median_bandwidth(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let mut d: Vec<f64> = Vec::with_capacity(pooled.len() * pooled.len() / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 {
        (d[mid - 1] + d[mid]) / 2.0
    } else {
        d[mid]
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Unbiased squared MMD with a Gaussian kernel, floored at zero.
/// `bandwidth = None` uses the median heuristic over the pooled sample.
pub fn mmd(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: Option<f64>) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Empty("MMD needs at least two points per sample"));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|p| p.len() != dim) {
        return Err(Error::Shape {
            op: "mmd",
            detail: "points differ in dimension".into(),
        });
    }
    let h = bandwidth.unwrap_or_else(|| median_bandwidth(a, b));
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("MMD bandwidth must be positive, got {h}")));
    }
    let k = |u: &[f64], v: &[f64]| (-sq_dist(u, v) / (2.0 * h * h)).exp();
    let within = |s: &[Vec<f64>]| {
        let mut t = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j {
                    t += k(&s[i], &s[j]);
                }
            }
        }
        t / (s.len() * (s.len() - 1)) as f64
    };
    // Equal sizes use the U-statistic over paired indices, which skips the
    // i == j cross terms; unequal sizes average every cross pair.
    let paired = a.len() == b.len();
    let mut cross = 0.0;
    for (i, u) in a.iter().enumerate() {
        for (j, v) in b.iter().enumerate() {
            if !(paired && i == j) {
                cross += k(u, v);
            }
        }
    }
    cross /= if paired {
        (a.len() * (a.len() - 1)) as f64
    } else {
        (a.len() * b.len()) as f64
    };
    // the unbiased estimate dips below zero when the samples agree closely
    Ok((within(a) + within(b) - 2.0 * cross).max(0.0))
}

/// Per-step normalized `(state, action)` rows of a set of trajectories.
pub fn step_rows(trajs: &[Trajectory], normalizer: &Normalizer) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for tr in trajs {
        let x = normalizer.normalize(tr);
        for t in 0..x.horizon {
            out.push(x.row(t).to_vec());
        }
    }
    debug_assert!(out.iter().all(|r| r.len() == TRAJ_FEATURES));
    out
}

/// Deterministic subsample of at most `max` rows, evenly strided.
pub fn thin_rows(rows: &[Vec<f64>], max: usize) -> Vec<Vec<f64>> {
    if rows.len() <= max || max == 0 {
        return rows.to_vec();
    }
    (0..max).map(|i| rows[i * rows.len() / max].clone()).collect()
}
