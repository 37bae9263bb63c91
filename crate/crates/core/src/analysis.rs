//! Closed-form results for the Hamiltonian-cycle strategy and bounds on
//! the optimal strategy.
//!
//! Under the cycle strategy, the wait for the apple eaten at body length
//! `k` is uniform on `1..=n²-k`, so the win time is a sum of independent
//! discrete uniforms `X_i ~ Unif{1..i}` for `i = 1..n²-2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinTimeStats {
    pub mean: f64,
    pub variance: f64,
}

impl WinTimeStats {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

fn check_side(n: usize, min: usize) -> Result<u64> {
    if n < min {
        return Err(Error::Domain(format!("board side {n} is below {min}")));
    }
    Ok(n as u64)
}

/// Number of uniform terms in the win time.
fn terms(n: u64) -> u64 {
    n * n - 2
}

/// Exact mean and variance of the Hamiltonian win time.
pub fn ham_win_stats(n: usize) -> Result<WinTimeStats> {
    let m = terms(check_side(n, 3)?);
    // sum (i+1)/2 and sum (i^2-1)/12 over i = 1..m, kept integral until the
    // final division.
    let mean_num = m * (m + 1) / 2 + m;
    let var_num = m * (m + 1) * (2 * m + 1) / 6 - m;
    Ok(WinTimeStats {
        mean: mean_num as f64 / 2.0,
        variance: var_num as f64 / 12.0,
    })
}

/// Standard normal CDF through `erfc`, which keeps full relative accuracy
/// deep in the lower tail where `1 - erf` would cancel to zero.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Normal approximation of `P[T <= limit]`, no continuity correction.
pub fn ham_win_prob_clt(n: usize, limit: u64) -> Result<f64> {
    if limit == 0 {
        return Err(Error::Domain("time limit must be positive".into()));
    }
    let s = ham_win_stats(n)?;
    Ok(normal_cdf((limit as f64 - s.mean) / s.std_dev()))
}

/// Exact `P[T <= limit]` by convolving the uniform terms.
pub fn ham_win_prob_exact(n: usize, limit: u64) -> Result<f64> {
    let m = terms(check_side(n, 3)?) as usize;
    let max = m * (m + 1) / 2;
    // pmf[t] = P[X_1 + ... + X_i = t]
    let mut pmf = vec![0.0f64; max + 1];
    pmf[0] = 1.0;
    let mut next = vec![0.0f64; max + 1];
    let mut hi = 0;
    for i in 1..=m {
        let new_hi = hi + i;
        let scale = 1.0 / i as f64;
        // next[t] = (1/i) * sum_{x=1..i} pmf[t-x], as a sliding window.
        let mut window = 0.0;
        for t in 0..=new_hi {
            if t >= 1 && t - 1 <= hi {
                window += pmf[t - 1];
            }
            if t > i && t - i - 1 <= hi {
                window -= pmf[t - i - 1];
            }
            next[t] = window.max(0.0) * scale;
        }
        std::mem::swap(&mut pmf, &mut next);
        hi = new_hi;
    }
    let upto = (limit as usize).min(max);
    Ok(pmf[..=upto].iter().sum::<f64>().min(1.0))
}

/// Longest possible Hamiltonian win: every apple lands just behind the tail.
pub fn ham_worst_case(n: usize) -> Result<u64> {
    let m = terms(check_side(n, 3)?);
    Ok(m * (m + 1) / 2)
}

/// Lower bound on the worst-case win time of any strategy.
pub fn optimal_lower_bound(n: usize) -> Result<u64> {
    let n = check_side(n, 2)?;
    Ok(n * n * (n - 1) / 2)
}

/// Lower bound on distance travelled, `(n²/2 - 2) * floor(n/4)`.
/// Defined for even sides of at least 4.
pub fn travel_distance_lower_bound(n: usize) -> Result<u64> {
    let n = check_side(n, 4)?;
    if n % 2 != 0 {
        return Err(Error::Domain(format!(
            "travel bound needs an even side, got {n}"
        )));
    }
    Ok((n * n / 2 - 2) * (n / 4))
}

/// Everything `analyze` prints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub board: usize,
    pub time_limit: u64,
    pub win_time_mean: f64,
    pub win_time_variance: f64,
    pub win_prob_clt: f64,
    pub win_prob_exact: Option<f64>,
    pub worst_case: u64,
    pub optimal_lower_bound: u64,
    pub travel_distance_lower_bound: Option<u64>,
}

pub fn analyze(n: usize, limit: u64, exact: bool) -> Result<AnalysisReport> {
    let stats = ham_win_stats(n)?;
    Ok(AnalysisReport {
        board: n,
        time_limit: limit,
        win_time_mean: stats.mean,
        win_time_variance: stats.variance,
        win_prob_clt: ham_win_prob_clt(n, limit)?,
        win_prob_exact: if exact {
            Some(ham_win_prob_exact(n, limit)?)
        } else {
            None
        },
        worst_case: ham_worst_case(n)?,
        optimal_lower_bound: optimal_lower_bound(n)?,
        travel_distance_lower_bound: travel_distance_lower_bound(n).ok(),
    })
}

impl AnalysisReport {
    /// `key=value` lines; missing values print as an em dash placeholder.
    pub fn to_key_values(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "\u{2014}".to_string());
        [
            format!("board={}", self.board),
            format!("time_limit={}", self.time_limit),
            format!("win_time_mean={}", self.win_time_mean),
            format!("win_time_variance={}", self.win_time_variance),
            format!("win_prob_clt={:e}", self.win_prob_clt),
            format!(
                "win_prob_exact={}",
                opt(self.win_prob_exact.map(|p| format!("{p:e}")))
            ),
            format!("worst_case={}", self.worst_case),
            format!("optimal_lower_bound={}", self.optimal_lower_bound),
            format!(
                "travel_distance_lower_bound={}",
                opt(self.travel_distance_lower_bound.map(|v| v.to_string()))
            ),
        ]
        .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn win_stats() {
        let s = ham_win_stats(10).unwrap();
        assert_eq!(s.mean, 2474.5);
        assert_eq!(s.variance, 318_451.0 / 12.0);
        assert_eq!(ham_win_stats(3).unwrap().mean, 17.5);
        assert!(ham_win_stats(2).is_err());
    }

    #[test]
    fn clt_probability() {
        let p = ham_win_prob_clt(10, 1200).unwrap();
        assert!((p / 2.566e-15 - 1.0).abs() < 0.05, "{p:e}");
        // limit == mean is only possible when the mean is integral.
        let s = ham_win_stats(4).unwrap();
        assert_eq!(s.mean, 59.5);
        let mid = normal_cdf(0.0);
        assert_eq!(mid, 0.5);
        assert!(ham_win_prob_clt(10, 4851).unwrap() > 1.0 - 1e-12);
        assert!(ham_win_prob_clt(10, 0).is_err());
    }

    #[test]
    fn exact_distribution() {
        // n=3: seven terms; P[T <= max] = 1, P[T <= min] = 1/7!.
        assert!((ham_win_prob_exact(3, 28).unwrap() - 1.0).abs() < 1e-12);
        let p_min = ham_win_prob_exact(3, 7).unwrap();
        assert!((p_min - 1.0 / 5040.0).abs() < 1e-15);
        let p = ham_win_prob_exact(10, 1200).unwrap();
        assert!(p > 0.0 && p < 1e-12, "{p:e}");
    }

    #[test]
    fn bounds() {
        assert_eq!(ham_worst_case(10).unwrap(), 4851);
        assert_eq!(ham_worst_case(3).unwrap(), 28);
        assert_eq!(optimal_lower_bound(10).unwrap(), 450);
        assert_eq!(optimal_lower_bound(2).unwrap(), 2);
        assert_eq!(optimal_lower_bound(4).unwrap(), 24);
        assert_eq!(travel_distance_lower_bound(10).unwrap(), 96);
        assert_eq!(travel_distance_lower_bound(8).unwrap(), 60);
        assert_eq!(travel_distance_lower_bound(12).unwrap(), 210);
        assert!(matches!(
            travel_distance_lower_bound(3),
            Err(Error::Domain(_))
        ));
        assert!(travel_distance_lower_bound(7).is_err());
    }

    #[test]
    fn report_lines() {
        let r = analyze(10, 1200, false).unwrap();
        let text = r.to_key_values();
        assert!(text.contains("worst_case=4851"));
        assert!(text.contains("optimal_lower_bound=450"));
        assert!(text.contains("travel_distance_lower_bound=96"));
        assert!(text.contains("win_prob_exact=\u{2014}"));
    }
}
