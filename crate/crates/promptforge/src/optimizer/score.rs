//! Weighted scoring over binary outcome matrices, in exact rational
//! arithmetic.
//!
//! A column (task) solved by few prompts is worth more than one solved by
//! many: `w_j = n / N_successful(j)` where `n` is the number of prompts in
//! the population. A prompt's score is the weighted sum of its row. All
//! values are exact rationals so that "the top score is unchanged" is a
//! well-defined equality, never a float tolerance.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact rational score value.
pub type Score = BigRational;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatrixError {
    #[error("matrix rows have unequal lengths: row {row} has {got}, expected {expected}")]
    RaggedRows {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("matrix has no rows")]
    NoRows,
    #[error("matrix has no columns")]
    NoColumns,
}

/// Rectangular grid of pass/fail bits: one row per prompt, one column per
/// task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: Vec<Vec<bool>>,
}

impl BitMatrix {
    pub fn new(rows: Vec<Vec<bool>>) -> Result<Self, MatrixError> {
        if rows.is_empty() {
            return Err(MatrixError::NoRows);
        }
        let expected = rows[0].len();
        if expected == 0 {
            return Err(MatrixError::NoColumns);
        }
        for (row, r) in rows.iter().enumerate() {
            if r.len() != expected {
                return Err(MatrixError::RaggedRows {
                    row,
                    got: r.len(),
                    expected,
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn prompt_count(&self) -> usize {
        self.rows.len()
    }

    pub fn task_count(&self) -> usize {
        self.rows[0].len()
    }

    pub fn bit(&self, prompt: usize, task: usize) -> bool {
        self.rows[prompt][task]
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }

    /// Number of prompts whose row solves task `task`.
    pub fn column_successes(&self, task: usize) -> usize {
        self.rows.iter().filter(|r| r[task]).count()
    }

    /// Set of solved task indices for one prompt.
    pub fn solved_set(&self, prompt: usize) -> Vec<usize> {
        self.rows[prompt]
            .iter()
            .enumerate()
            .filter_map(|(j, &m)| m.then_some(j))
            .collect()
    }
}

/// Per-task weights `w_j = n / N_successful(j)`, with `w_j = 0` for columns
/// no prompt solved (every product term in a score is 0 there anyway; the
/// zero is a recording convention).
pub fn compute_weights(matrix: &BitMatrix) -> Vec<Score> {
    let n = BigInt::from(matrix.prompt_count());
    (0..matrix.task_count())
        .map(|j| {
            let successes = matrix.column_successes(j);
            if successes == 0 {
                Score::zero()
            } else {
                Score::new(n.clone(), BigInt::from(successes))
            }
        })
        .collect()
}

/// Per-prompt weighted scores `W_S(i) = Σ_j w_j · m[i][j]`.
pub fn weighted_scores(matrix: &BitMatrix, weights: &[Score]) -> Vec<Score> {
    assert_eq!(
        weights.len(),
        matrix.task_count(),
        "weight vector length must match task count"
    );
    matrix
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(weights)
                .filter(|(&m, _)| m)
                .map(|(_, w)| w)
                .fold(Score::zero(), |acc, w| acc + w)
        })
        .collect()
}

/// Indices of every score equal to the maximum, in row order.
pub fn argmax_set(scores: &[Score]) -> Vec<usize> {
    assert!(!scores.is_empty(), "argmax of empty score vector");
    let max = scores.iter().max().expect("non-empty");
    scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| (s == max).then_some(i))
        .collect()
}

/// Loop termination verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Continue,
    EarlyStop,
    MaxIterations,
}

/// Everything the convergence rule looks at after iteration `k`.
#[derive(Debug, Clone)]
pub struct ConvergenceState {
    /// Top weighted score of each completed iteration, oldest first.
    pub top_score_history: Vec<Score>,
    pub k: u32,
    pub k_max: u32,
    /// Number of consecutive equal top scores that triggers an early stop.
    pub window: usize,
}

/// Early stop when the top score is exactly equal over the trailing window
/// (and at least `window` iterations have run); otherwise stop at `k_max`;
/// otherwise continue. Early stop is checked first, so a run that
/// stabilizes exactly at `k = k_max` reports `EarlyStop`.
pub fn check_convergence(state: &ConvergenceState) -> Decision {
    assert!(
        !state.top_score_history.is_empty(),
        "convergence check requires at least one recorded score"
    );
    let w = state.window;
    if state.k as usize >= w && state.top_score_history.len() >= w {
        let tail = &state.top_score_history[state.top_score_history.len() - w..];
        if tail.iter().all(|s| s == &tail[0]) {
            return Decision::EarlyStop;
        }
    }
    if state.k >= state.k_max {
        return Decision::MaxIterations;
    }
    Decision::Continue
}

/// Serialized form of a rational: decimal strings for numerator and
/// denominator. BigInt-backed values round-trip losslessly as strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioRepr(pub String, pub String);

impl RatioRepr {
    pub fn of(score: &Score) -> Self {
        Self(score.numer().to_string(), score.denom().to_string())
    }

    pub fn to_score(&self) -> Option<Score> {
        let numer: BigInt = self.0.parse().ok()?;
        let denom: BigInt = self.1.parse().ok()?;
        if denom.is_zero() {
            return None;
        }
        Some(Score::new(numer, denom))
    }
}

/// Fixed-point decimal rendering of a rational, round-half-up on the last
/// kept digit. Used for the trajectory file and pass@1 reporting.
pub fn decimal_string(score: &Score, places: u32) -> String {
    let negative = score.is_negative();
    let abs = score.abs();
    let scale = BigInt::from(10u32).pow(places);
    let scaled = abs.numer() * &scale;
    let (mut q, r) = (scaled.clone() / abs.denom(), scaled % abs.denom());
    // round half up
    if &(r * 2) >= abs.denom() {
        q += BigInt::one();
    }
    let digits = q.to_string();
    let (int_part, frac_part) = if digits.len() > places as usize {
        let split = digits.len() - places as usize;
        (digits[..split].to_string(), digits[split..].to_string())
    } else {
        (
            "0".to_string(),
            format!("{:0>width$}", digits, width = places as usize),
        )
    };
    let sign = if negative && (int_part != "0" || frac_part.chars().any(|c| c != '0')) {
        "-"
    } else {
        ""
    };
    if places == 0 {
        format!("{sign}{int_part}")
    } else {
        format!("{sign}{int_part}.{frac_part}")
    }
}
