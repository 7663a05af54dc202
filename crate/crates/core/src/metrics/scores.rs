use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-6;

/// Inception Score over `splits` equal chunks of the rows of
/// `probabilities` (`n × class_count`): per chunk
/// `exp(mean_x KL(p(y|x) ‖ p(y)))` with `p(y)` the chunk marginal.
/// Returns the mean and population standard deviation over chunks.
pub fn inception_score(probabilities: &[f64], class_count: usize, splits: usize) -> Result<(f64, f64)> {
    if class_count == 0 || probabilities.len() % class_count != 0 {
        return Err(Error::shape(class_count, probabilities.len()));
    }
    let n = probabilities.len() / class_count;
    if splits == 0 || n == 0 || n % splits != 0 {
        return Err(Error::config(alloc::format!("{n} rows do not divide into {splits} splits")));
    }
    for (i, row) in probabilities.chunks(class_count).enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::contract(alloc::format!("row {i} is not a probability distribution (sum {sum})")));
        }
    }
    let per = n / splits;
    let scores: Vec<f64> = probabilities
        .chunks(per * class_count)
        .map(|chunk| {
            let mut marginal = alloc::vec![0.0; class_count];
            for row in chunk.chunks(class_count) {
                marginal.iter_mut().zip(row).for_each(|(m, &p)| *m += p);
            }
            marginal.iter_mut().for_each(|m| *m /= per as f64);
            let kl_sum: f64 = chunk
                .chunks(class_count)
                .map(|row| {
                    row.iter()
                        .zip(&marginal)
                        .filter(|(&p, _)| p > 0.0)
                        .map(|(&p, &m)| p * (p.ln() - m.ln()))
                        .sum::<f64>()
                })
                .sum();
            (kl_sum / per as f64).exp()
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

/// Accuracy per class id; `None` marks classes with no items.
pub fn per_class_accuracy(predictions: &[usize], labels: &[usize], class_count: usize) -> Vec<Option<f64>> {
    let mut hits = alloc::vec![0usize; class_count];
    let mut totals = alloc::vec![0usize; class_count];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y < class_count {
            totals[y] += 1;
            if p == y {
                hits[y] += 1;
            }
        }
    }
    hits.iter().zip(&totals).map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Min,
    Max,
}

impl Direction {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Min => a < b,
            Direction::Max => a > b,
        }
    }
}

/// Indices (in input order) of the points no other point dominates. A point
/// dominates another if it is no worse on both axes and strictly better on
/// at least one, so exact duplicates never exclude each other.
pub fn pareto_frontier(points: &[(f64, f64)], directions: (Direction, Direction)) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::contract("pareto frontier of an empty set"));
    }
    if points.iter().any(|p| p.0.is_nan() || p.1.is_nan()) {
        return Err(Error::contract("pareto frontier of NaN points"));
    }
    let (dx, dy) = directions;
    let dominates = |a: (f64, f64), b: (f64, f64)| {
        let no_worse = !dx.better(b.0, a.0) && !dy.better(b.1, a.1);
        no_worse && (dx.better(a.0, b.0) || dy.better(a.1, b.1))
    };
    Ok((0..points.len()).filter(|&i| !points.iter().any(|&q| dominates(q, points[i]))).collect())
}
