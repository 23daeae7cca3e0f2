//! Ten-string DA fixture with hand-computed summary values.
//!
//! s1 is Lingala-flagged, s2 and s3 have a Q2 gap of 4, s4..s10 are kept:
//!
//! | id  | q2 pair | avg | gap | q1 pair           | q1 score |
//! |-----|---------|-----|-----|-------------------|----------|
//! | s4  | 6, 8    | 7   | 2   | yes, yes          | 4        |
//! | s5  | 5, 5    | 5   | 0   | kind_of, yes      | 3        |
//! | s6  | 9, 10   | 9.5 | 1   | yes, yes          | 4        |
//! | s7  | 2, 4    | 3   | 2   | no, kind_of       | 1        |
//! | s8  | 7, 4    | 5.5 | 3   | kind_of, kind_of  | 2        |
//! | s9  | 0, 1    | 0.5 | 1   | no, no            | 0        |
//! | s10 | 8, 8    | 8   | 0   | yes, kind_of      | 3        |
//!
//! Mean of the averages: 38.5 / 7 = 5.5. Squared deviations sum to 56, so
//! the sample SD is sqrt(56 / 6) and the population SD sqrt(8). Sorted gaps
//! 0 0 1 1 2 2 3 give median 1. Q1 > 0 for 6 of 7, both-yes for 2 of 7,
//! disagreement for 3 of 7 (s5, s7, s10).

#![allow(dead_code)]

use mtpipe_core::humaneval::{DAResponse, EvalString, Q1};

pub const MEAN: f64 = 5.5;
pub const SAMPLE_SD_SQUARED: f64 = 56.0 / 6.0;
pub const POPULATION_SD_SQUARED: f64 = 8.0;
pub const MEDIAN_GAP: f64 = 1.0;
pub const CONVEYED: (usize, usize) = (6, 7);
pub const BOTH_YES: (usize, usize) = (2, 7);
pub const DISAGREE: (usize, usize) = (3, 7);
pub const HISTOGRAM: [usize; 5] = [1, 1, 1, 2, 2];

pub fn strings() -> Vec<EvalString> {
    (1..=10)
        .map(|i| EvalString::new(&format!("s{i}"), &format!("swali namba {i}"), &format!("question {i}"), i == 1))
        .collect()
}

fn response(string: &str, rater: &str, q1: Q1, q2: u8) -> DAResponse {
    DAResponse {
        string_id: string.to_string(),
        rater_id: rater.to_string(),
        q1,
        q2,
        q3: (q2 <= 4).then(|| "maana haieleweki".to_string()),
    }
}

pub fn responses() -> Vec<DAResponse> {
    use Q1::*;
    let rows: [(&str, (u8, u8), (Q1, Q1)); 10] = [
        ("s1", (5, 6), (Yes, Yes)),
        ("s2", (2, 6), (No, Yes)),
        ("s3", (10, 6), (Yes, KindOf)),
        ("s4", (6, 8), (Yes, Yes)),
        ("s5", (5, 5), (KindOf, Yes)),
        ("s6", (9, 10), (Yes, Yes)),
        ("s7", (2, 4), (No, KindOf)),
        ("s8", (7, 4), (KindOf, KindOf)),
        ("s9", (0, 1), (No, No)),
        ("s10", (8, 8), (Yes, KindOf)),
    ];
    rows.iter()
        .flat_map(|(id, (qa, qb), (ca, cb))| [response(id, "rater-a", *ca, *qa), response(id, "rater-b", *cb, *qb)])
        .collect()
}
