use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest p-value that is reported as an ordinary number.
const P_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value, never below `f64::MIN_POSITIVE`.
    pub p: f64,
    /// The true p-value is below 1e-300 (including the zero-variance limit).
    pub p_underflow: bool,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub var_a: f64,
    pub var_b: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t-test, two-sided.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("t-test samples must be finite".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mean_a, var_a) = mean_var(a);
    let (mean_b, var_b) = mean_var(b);
    let (sa, sb) = (var_a / na, var_b / nb);
    let se2 = sa + sb;
    let base = TTestResult {
        t: 0.0,
        df: na + nb - 2.0,
        p: 1.0,
        p_underflow: false,
        n_a: a.len(),
        n_b: b.len(),
        mean_a,
        mean_b,
        var_a,
        var_b,
    };
    if se2 == 0.0 {
        // Both samples constant: the statistic is 0/0 or infinite.
        return Ok(if mean_a == mean_b {
            base
        } else {
            TTestResult {
                t: if mean_a > mean_b { f64::INFINITY } else { f64::NEG_INFINITY },
                p: f64::MIN_POSITIVE,
                p_underflow: true,
                ..base
            }
        });
    }
    let t = (mean_a - mean_b) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let p = student_t_two_sided(t, df);
    Ok(TTestResult {
        t,
        df,
        p: p.max(f64::MIN_POSITIVE),
        p_underflow: p < P_FLOOR,
        ..base
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub(crate) fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Lanczos approximation (g = 7, 9 terms), accurate to about 1e-15.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (k, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + k as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub(crate) fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // the continued fraction converges fast only below the mean
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta, modified Lentz method.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Grouping of per-sample metric values.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub network: String,
    pub method: String,
    /// Class index, or a class group name such as `rest`.
    pub group: String,
    pub gt_object: String,
    pub metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub key: GroupKey,
    pub sample_id: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub key: GroupKey,
    /// `None` when the group is empty.
    pub mean: Option<f64>,
    /// Sample standard deviation; 0 for a single value.
    pub std: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<SummaryRow>,
}

impl MetricsTable {
    pub fn get(&self, key: &GroupKey) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| &r.key == key)
    }
}

/// Mean and sample standard deviation per group. Every key in `expected`
/// gets a row even when no record belongs to it; rows are sorted by key.
pub fn aggregate(records: &[MetricRecord], expected: &[GroupKey]) -> MetricsTable {
    let mut groups: BTreeMap<&GroupKey, Vec<f64>> = expected.iter().map(|k| (k, Vec::new())).collect();
    for r in records {
        groups.entry(&r.key).or_default().push(r.value);
    }
    let rows = groups
        .into_iter()
        .map(|(key, vals)| {
            let n = vals.len();
            let (mean, std) = match n {
                0 => (None, None),
                1 => (Some(vals[0]), Some(0.0)),
                _ => {
                    let (m, v) = mean_var(&vals);
                    (Some(m), Some(v.sqrt()))
                }
            };
            SummaryRow {
                key: key.clone(),
                mean,
                std,
                n,
            }
        })
        .collect();
    MetricsTable { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_at_known_points() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x and I_x(a, 1) = x^a
        for x in [0.1, 0.5, 0.9] {
            assert!((incomplete_beta(1.0, 1.0, x) - x).abs() < 1e-14);
            assert!((incomplete_beta(3.0, 1.0, x) - x.powi(3)).abs() < 1e-14);
        }
        assert_eq!(incomplete_beta(2.0, 3.0, 0.0), 0.0);
        assert_eq!(incomplete_beta(2.0, 3.0, 1.0), 1.0);
    }

    #[test]
    fn worked_example() {
        let r = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((r.t + 1.0).abs() < 1e-12);
        assert!((r.df - 8.0).abs() < 1e-12);
        assert!((r.p - 0.346_593_507_087_249_3).abs() < 1e-9, "{}", r.p);
    }

    #[test]
    fn identical_samples() {
        let a = [0.1, 0.5, 0.3];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
    }

    #[test]
    fn degenerate_variances() {
        let r = welch_t_test(&[0.0; 4], &[1.0; 4]).unwrap();
        assert!(r.p_underflow && r.p < 1e-300 && r.p > 0.0);
        let r = welch_t_test(&[2.0; 3], &[2.0; 5]).unwrap();
        assert_eq!(r.p, 1.0);
        assert!(!r.p_underflow);
    }

    #[test]
    fn rejects_tiny_samples() {
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
        assert!(welch_t_test(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    fn key(group: &str) -> GroupKey {
        GroupKey {
            network: "biased".into(),
            method: "ig".into(),
            group: group.into(),
            gt_object: "marker".into(),
            metric: "rma".into(),
        }
    }

    #[test]
    fn aggregation_examples() {
        let rec = |group: &str, v: f64| MetricRecord {
            key: key(group),
            sample_id: "000000".into(),
            value: v,
        };
        let table = aggregate(&[rec("0", 0.2), rec("0", 0.4), rec("1", 0.7)], &[key("0"), key("1"), key("2")]);
        assert_eq!(table.rows.len(), 3);
        let r0 = table.get(&key("0")).unwrap();
        assert!((r0.mean.unwrap() - 0.3).abs() < 1e-15);
        assert!((r0.std.unwrap() - 0.1414213562373095).abs() < 1e-12);
        let r1 = table.get(&key("1")).unwrap();
        assert_eq!((r1.mean, r1.std, r1.n), (Some(0.7), Some(0.0), 1));
        let r2 = table.get(&key("2")).unwrap();
        assert_eq!((r2.mean, r2.std, r2.n), (None, None, 0));
    }
}
