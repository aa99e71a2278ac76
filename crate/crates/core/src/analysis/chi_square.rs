//! Pearson chi-square test of independence.
//!
//! p-values come from the regularized upper incomplete gamma function,
//! `Q(df/2, x/2)`, evaluated by series expansion below `x = a + 1` and by a
//! Lentz continued fraction above.

use crate::data::{AttributeKind, Dataset, Value};
use crate::error::{Error, Result};

const EPS: f64 = 1e-15;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn prefactor(a: f64, x: f64) -> f64 {
    (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn lower_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * prefactor(a, x)
}

fn upper_continued_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    prefactor(a, x) * h
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "gamma_p needs a > 0 and x >= 0");
    if x == 0.0 {
        0.0
    } else if x < a + 1.0 {
        lower_series(a, x)
    } else {
        1.0 - upper_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "gamma_q needs a > 0 and x >= 0");
    if x == 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - lower_series(a, x)
    } else {
        upper_continued_fraction(a, x)
    }
}

/// Survival function of the chi-square distribution.
pub fn chi_square_sf(statistic: f64, df: usize) -> f64 {
    assert!(df > 0, "chi-square needs at least one degree of freedom");
    if statistic <= 0.0 {
        return 1.0;
    }
    gamma_q(df as f64 / 2.0, statistic / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Independence test on an `r x c` table of observed counts. Columns whose
/// total is zero are pooled away before testing.
pub fn chi_square_table(table: &[Vec<f64>]) -> Result<ChiSquareTest> {
    let cols = table.first().map_or(0, Vec::len);
    if table.len() < 2 || table.iter().any(|r| r.len() != cols) {
        return Err(Error::input("contingency table needs at least two rows of equal length"));
    }
    if table.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::input("contingency counts must be finite and non-negative"));
    }
    let keep: Vec<usize> = (0..cols).filter(|&j| table.iter().map(|r| r[j]).sum::<f64>() > 0.0).collect();
    let row_totals: Vec<f64> = table.iter().map(|r| keep.iter().map(|&j| r[j]).sum()).collect();
    if row_totals.contains(&0.0) {
        return Err(Error::input("a row of the contingency table is empty; expected counts would be zero"));
    }
    if keep.len() < 2 {
        return Err(Error::input(
            "fewer than two observed categories; merge categories or choose another attribute",
        ));
    }
    let col_totals: Vec<f64> = keep.iter().map(|&j| table.iter().map(|r| r[j]).sum()).collect();
    let total: f64 = row_totals.iter().sum();
    let mut statistic = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (k, &j) in keep.iter().enumerate() {
            let expected = row_totals[r] * col_totals[k] / total;
            let diff = row[j] - expected;
            statistic += diff * diff / expected;
        }
    }
    let df = (table.len() - 1) * (keep.len() - 1);
    Ok(ChiSquareTest { statistic, df, p_value: chi_square_sf(statistic, df) })
}

/// Tests whether categorical `attribute` has the same distribution in two
/// parties' datasets (2 x V table, party by value).
pub fn chi_square_independence(a: &Dataset, b: &Dataset, attribute: usize) -> Result<ChiSquareTest> {
    if a.schema != b.schema {
        return Err(Error::Schema("datasets use different schemas".into()));
    }
    let attr = a
        .schema
        .attributes
        .get(attribute)
        .ok_or_else(|| Error::input(format!("attribute index {attribute} out of range")))?;
    let AttributeKind::Categorical { values } = &attr.kind else {
        return Err(Error::input(format!("attribute `{}` is not categorical", attr.name)));
    };
    let counts = |d: &Dataset| {
        let mut c = vec![0.0; values.len()];
        for r in &d.records {
            if let Value::Category(v) = r.values[attribute] {
                c[v] += 1.0;
            }
        }
        c
    };
    chi_square_table(&[counts(a), counts(b)])
}
