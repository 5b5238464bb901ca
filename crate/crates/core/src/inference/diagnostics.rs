use serde::{Deserialize, Serialize};

use super::sampler::Chain;
use super::InferenceError;

/// Mean computed as `x0 + Σ (x_i - x0) / n`, exact for constant input.
pub fn stable_mean(xs: &[f64]) -> f64 {
    match xs.first() {
        None => f64::NAN,
        Some(&x0) => x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64,
    }
}

/// Sample variance with `n - 1` denominator.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = stable_mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Potential scale reduction factor of equally long series.
pub fn psrf(series: &[Vec<f64>]) -> Result<f64, InferenceError> {
    if series.len() < 2 {
        return Err(InferenceError::Diagnostics(format!(
            "R-hat needs at least 2 chains, got {}",
            series.len()
        )));
    }
    let n = series[0].len();
    if n < 2 || series.iter().any(|s| s.len() != n) {
        return Err(InferenceError::Diagnostics(
            "R-hat needs equally long chains of at least 2 draws".into(),
        ));
    }
    let means: Vec<f64> = series.iter().map(|s| stable_mean(s)).collect();
    let w = stable_mean(&series.iter().map(|s| sample_variance(s)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return Err(InferenceError::Diagnostics(
            "zero within-chain variance".into(),
        ));
    }
    let nf = n as f64;
    let b = nf * sample_variance(&means);
    let v = (nf - 1.0) / nf * w + b / nf;
    Ok((v / w).sqrt())
}

/// R-hat of coordinate `param` across chains with at least 10 retained draws.
pub fn gelman_rubin(chains: &[Chain], param: usize) -> Result<f64, InferenceError> {
    if chains.iter().any(|c| c.len() < 10) {
        return Err(InferenceError::Diagnostics(
            "R-hat needs at least 10 retained draws per chain".into(),
        ));
    }
    psrf(&chains.iter().map(|c| c.column(param)).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicResult {
    /// Posterior mean deviance.
    pub d_bar: f64,
    /// Deviance at the posterior mean, if finite.
    pub d_at_mean: Option<f64>,
    pub p_d: Option<f64>,
    pub dic: Option<f64>,
}

/// Componentwise posterior mean of a set of draws.
pub fn posterior_mean(draws: &[&[f64]]) -> Vec<f64> {
    let dim = draws.first().map_or(0, |d| d.len());
    (0..dim)
        .map(|k| stable_mean(&draws.iter().map(|d| d[k]).collect::<Vec<_>>()))
        .collect()
}

/// DIC from per-draw deviances and the deviance at the posterior mean.
/// `p_d` and `dic` are left undefined when the posterior mean lies outside the
/// support.
pub fn dic_from_deviances(deviances: &[f64], d_at_mean: f64) -> DicResult {
    let d_bar = stable_mean(deviances);
    let d_hat = d_at_mean.is_finite().then_some(d_at_mean);
    let p_d = d_hat.map(|d| d_bar - d);
    DicResult {
        d_bar,
        d_at_mean: d_hat,
        p_d,
        dic: p_d.map(|p| d_bar + p),
    }
}

/// DIC of a set of draws under `deviance`.
pub fn dic<F: Fn(&[f64]) -> f64>(draws: &[&[f64]], deviance: F) -> DicResult {
    let devs: Vec<f64> = draws.iter().map(|d| deviance(d)).collect();
    let mean = posterior_mean(draws);
    let d_hat = deviance(&mean);
    let res = dic_from_deviances(&devs, d_hat);
    if res.p_d.is_none() {
        log::warn!("deviance at the posterior mean is {d_hat}; p_D undefined");
    }
    res
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: Option<f64>,
}

impl ParamSummary {
    pub fn from_values(name: &str, values: &[f64], rhat: Option<f64>) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        ParamSummary {
            name: name.to_string(),
            mean: stable_mean(values),
            sd: if values.len() > 1 {
                sample_variance(values).sqrt()
            } else {
                0.0
            },
            q025: quantile_sorted(&sorted, 0.025),
            q975: quantile_sorted(&sorted, 0.975),
            rhat,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psrf_identical_chains() {
        let a = vec![1.0, 2.0, 3.0];
        let r = psrf(&[a.clone(), a]).unwrap();
        assert!((r - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn psrf_separated_chains() {
        let a: Vec<f64> = (0..100).map(|i| (i % 7) as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 50.0).collect();
        assert!(psrf(&[a, b]).unwrap() > 5.0);
    }

    #[test]
    fn psrf_errors() {
        assert!(psrf(&[vec![1.0, 2.0]]).is_err());
        assert!(psrf(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(psrf(&[vec![1.0, 1.0], vec![2.0, 2.0]]).is_err());
    }

    #[test]
    fn psrf_hand_example() {
        // means 2 and 5, within variances 1 and 1, n = 3
        let r = psrf(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let w: f64 = 1.0;
        let b = 3.0 * 4.5;
        let expect = ((2.0 / 3.0 * w + b / 3.0) / w).sqrt();
        assert!((r - expect).abs() < 1e-14);
    }

    #[test]
    fn stable_mean_is_exact_for_constants() {
        let x = 0.1 + 0.2;
        assert_eq!(stable_mean(&vec![x; 12345]), x);
    }

    #[test]
    fn dic_degenerate_draws() {
        let theta = [0.3, -1.7, 2.2];
        let draws: Vec<&[f64]> = (0..500).map(|_| &theta[..]).collect();
        let res = dic(&draws, |t| t.iter().map(|v| v.sin()).sum::<f64>().exp());
        assert_eq!(res.p_d, Some(0.0));
        assert_eq!(res.dic, Some(res.d_bar));
    }

    #[test]
    fn dic_hand_example() {
        let draws: Vec<Vec<f64>> = vec![vec![0.0], vec![2.0]];
        let refs: Vec<&[f64]> = draws.iter().map(|d| &d[..]).collect();
        // D(θ) = θ², d_bar = 2, D(1) = 1
        let res = dic(&refs, |t| t[0] * t[0]);
        assert_eq!(res.d_bar, 2.0);
        assert_eq!(res.p_d, Some(1.0));
        assert_eq!(res.dic, Some(3.0));
        let res = dic(&refs, |t| if t[0] == 1.0 { f64::INFINITY } else { 0.0 });
        assert_eq!(res.p_d, None);
        assert_eq!(res.dic, None);
    }

    #[test]
    fn summary_quantiles() {
        let v: Vec<f64> = (0..=1000).map(|i| i as f64).collect();
        let s = ParamSummary::from_values("x", &v, None);
        assert_eq!(s.mean, 500.0);
        assert!((s.q025 - 25.0).abs() < 1e-12);
        assert!((s.q975 - 975.0).abs() < 1e-12);
    }
}
