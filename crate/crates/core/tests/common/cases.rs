//! Hand-derived metric cases and rating fixtures.

use sciclaim::eval::RatingMatrix;

use super::krippendorff_reference_data;

pub const THIRD: f64 = 1.0 / 3.0;

/// (candidate, reference, r1, r2, rl), each derived by hand from unigram
/// and bigram overlap counts and the LCS length.
pub const ROUGE_CASES: &[(&str, &str, f64, f64, f64)] = &[
    ("a b c", "a c d", 2.0 * THIRD, 0.0, 2.0 * THIRD),
    ("the cat", "the cat sat", 0.8, 2.0 * THIRD, 0.8),
    ("a a a", "a", 0.5, 0.0, 0.5),
    ("Hello, World!", "hello world", 1.0, 1.0, 1.0),
    ("b a", "a b", 1.0, 0.0, 0.5),
    ("a b c d", "d c b a", 1.0, 0.0, 0.25),
    ("x y z", "x q z", 2.0 * THIRD, 0.0, 2.0 * THIRD),
    ("the quick brown fox", "the quick red fox", 0.75, THIRD, 0.75),
    ("a", "a b c d", 0.4, 0.0, 0.4),
    ("1 2 3", "1 2 3 4", 6.0 / 7.0, 0.8, 6.0 / 7.0),
    ("a b a b", "a b", 2.0 * THIRD, 0.5, 2.0 * THIRD),
    ("identical claim text", "identical claim text", 1.0, 1.0, 1.0),
    ("nothing shared", "entirely different", 0.0, 0.0, 0.0),
];

pub fn generated_fixture() -> Vec<(String, String)> {
    [
        ("s1", "Imatinib induces remission in leukemia."),
        ("s1", "CML responds to imatinib."),
        ("s2", "Metformin lowers glucose."),
        ("s3", "Aspirin reduces the risk of stroke."),
        ("s3", "Aspirin prevents recurrent stroke."),
        ("s4", "Vaccination lowers hospital admissions."),
        ("s5", "EGFR inhibitors slow tumour growth in the lung."),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

pub fn matrix(rows: &[&[i32]]) -> RatingMatrix {
    rows.iter()
        .map(|r| r.iter().map(|&v| (v >= 0).then_some(f64::from(v))).collect())
        .collect()
}

/// Further reliability fixtures; -1 marks a missing cell.
pub fn alpha_fixtures() -> Vec<RatingMatrix> {
    vec![
        krippendorff_reference_data(),
        matrix(&[&[3, 3, 2, 1, 3, 2, 2, 3], &[3, 2, 2, 1, 3, 3, 2, 3], &[3, 3, 1, 1, -1, 2, 2, 2]]),
        matrix(&[&[1, 0, 1, 1, 0, 1, 0, 0, 1, 1], &[1, 0, 1, 0, 0, 1, 1, 0, 1, 1]]),
        matrix(&[&[5, 4, 4, 2, 1, -1, 5], &[4, 4, 5, 2, 2, 3, 5], &[5, 3, 4, 1, -1, 3, 4], &[-1, 4, 4, 2, 1, 3, -1]]),
    ]
}
