//! Text rendering of a solution path.

use std::fmt::Write as _;

use crate::path::{count_true_zeros, PathEntry};
use crate::tensor::FactorSet;

pub const PATH_HEADER: &str = "lambda R NZS NZT IS1 rel_err iters";

/// C-style exponent notation: `sci(1.0, 1) == "1.0e+00"`, `sci(5e-8, 0) == "5e-08"`.
pub fn sci(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.digits$e}");
    let (mant, exp) = s.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}

/// One row per solve: the raw solve (`IS1 = 1`) and, when the pattern was
/// refined at that grid point, the refinement at `lambda_s` (`IS1 = 0`).
pub fn render_path_table(path: &[PathEntry], truth: Option<&FactorSet>, lambda_s: f64, epsilon: f64) -> String {
    let mut out = String::from(PATH_HEADER);
    out.push('\n');
    for e in path {
        let nzt = truth.map_or("-".to_string(), |t| {
            count_true_zeros(&e.pattern, t, epsilon).1.to_string()
        });
        let _ = writeln!(
            out,
            "{} {} {} {} 1 {} {}",
            sci(e.lambda, 0),
            e.detected_rank,
            e.nzs,
            nzt,
            sci(e.raw_rel_err, 1),
            e.iterations_raw
        );
        if let Some(r) = e.refined.as_ref().filter(|r| r.fresh) {
            let _ = writeln!(
                out,
                "{} {} {} {} 0 {} {}",
                sci(lambda_s, 0),
                e.detected_rank,
                e.nzs,
                nzt,
                sci(r.rel_err, 1),
                r.iterations
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{Refinement, SparsityPattern};

    #[test]
    fn exponent_format() {
        assert_eq!(sci(1.0, 1), "1.0e+00");
        assert_eq!(sci(1.6e-6, 1), "1.6e-06");
        assert_eq!(sci(5e2, 0), "5e+02");
        assert_eq!(sci(1e-10, 0), "1e-10");
        assert_eq!(sci(0.0, 1), "0.0e+00");
        assert_eq!(sci(1.23e100, 1), "1.2e+100");
    }

    #[test]
    fn empty_path_is_header_only() {
        assert_eq!(render_path_table(&[], None, 1e-8, 1e-9), format!("{PATH_HEADER}\n"));
    }

    #[test]
    fn refined_entry_gets_two_rows() {
        let f = FactorSet::zeros(&[2, 2, 2], 1);
        let entry = PathEntry {
            lambda: 500.0,
            detected_rank: 1,
            nzs: 0,
            raw_factors: f.clone(),
            raw_rel_err: 0.25,
            iterations_raw: 17,
            pattern: SparsityPattern::all_free(&[2, 2, 2], 1),
            refined: Some(Refinement {
                factors: f,
                rel_err: 1.6e-6,
                iterations: 9,
                fresh: true,
            }),
            failure: None,
        };
        let table = render_path_table(&[entry], None, 1e-8, 1e-9);
        let rows: Vec<&str> = table.lines().collect();
        assert_eq!(
            rows,
            [PATH_HEADER, "5e+02 1 0 - 1 2.5e-01 17", "1e-08 1 0 - 0 1.6e-06 9"]
        );
    }
}
