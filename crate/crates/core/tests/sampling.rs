use pedrisk::blocks::Covariate;
use pedrisk::gev::{gev_cdf, gev_logpdf, GevModel, GevParams, LinkSpec};
use pedrisk::inference::{fit_all, run_sampler, FitSettings, FnTarget, ModelName, SamplerSettings};
use pedrisk::synth::{field_ranges, generate_blocks, BlockScenario};

fn total_variation(draws: &[f64], cdf: impl Fn(f64) -> f64, lo: f64, hi: f64, bins: usize) -> f64 {
    let width = (hi - lo) / bins as f64;
    let n = draws.len() as f64;
    let mut counts = vec![0usize; bins + 2];
    for &x in draws {
        let k = if x < lo {
            0
        } else if x >= hi {
            bins + 1
        } else {
            1 + ((x - lo) / width) as usize
        };
        counts[k.min(bins)] += 1;
    }
    let mut tv = 0.0;
    for (k, &count) in counts.iter().enumerate() {
        let p = match k {
            0 => cdf(lo),
            k if k == bins + 1 => 1.0 - cdf(hi),
            k => cdf(lo + k as f64 * width) - cdf(lo + (k - 1) as f64 * width),
        };
        tv += (count as f64 / n - p).abs();
    }
    0.5 * tv
}

#[test]
fn sampler_leaves_known_target_invariant() {
    // x0 ~ GEV, x1 | x0 ~ N(x0, 0.5^2): the x0 marginal is the GEV itself
    let p = GevParams::from_sigma(-2.0, 1.0, -0.3).unwrap();
    let target = FnTarget::new(2, move |x: &[f64]| {
        gev_logpdf(x[0], &p) - 0.5 * ((x[1] - x[0]) / 0.5).powi(2)
    });
    let settings = SamplerSettings {
        n_iter: 105_000,
        burn_in: 5_000,
        ..Default::default()
    };
    let chain = run_sampler(&target, &[-2.0, -2.0], &settings, 9).unwrap();
    let x0 = chain.column(0);
    assert_eq!(x0.len(), 100_000);
    let tv = total_variation(&x0, |z| gev_cdf(z, &p), -5.0, 1.3, 30);
    assert!(tv < 0.05, "total variation {tv}");
    for a in &chain.acceptance {
        assert!((0.2..=0.6).contains(a), "acceptance {a}");
    }
}

#[test]
fn one_dimensional_acceptance_near_target() {
    let target = FnTarget::new(1, |x: &[f64]| -0.5 * x[0] * x[0] / 4.0);
    let settings = SamplerSettings {
        n_iter: 40_000,
        burn_in: 10_000,
        ..Default::default()
    };
    let chain = run_sampler(&target, &[3.0], &settings, 4).unwrap();
    assert!(chain.joint_acceptance.is_none());
    let a = chain.acceptance[0];
    assert!((0.35..=0.53).contains(&a), "acceptance {a}");
    let tv = total_variation(
        &chain.column(0),
        |z| 0.5 * (1.0 + erf(z / (2.0 * 2f64.sqrt()))),
        -6.0,
        6.0,
        24,
    );
    assert!(tv < 0.05, "total variation {tv}");
}

// Abramowitz-Stegun 7.1.26, absolute error below 1.5e-7
fn erf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
    let poly = t * (0.254_829_592
        + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let y = 1.0 - poly * (-x * x).exp();
    if x >= 0.0 {
        y
    } else {
        -y
    }
}

#[test]
fn every_model_fits_on_two_hundred_blocks() {
    let truth = GevModel {
        mu: LinkSpec::linear(-2.3, &[(Covariate::FP, 0.2), (Covariate::SP, -0.3)]),
        phi: LinkSpec::stationary(0.3f64.ln()),
        xi: LinkSpec::stationary(-0.2),
    };
    let scenario = BlockScenario {
        sites: vec!["a".into(), "b".into()],
        cycles_per_site: 100,
        truth,
        ranges: field_ranges(),
        seed: 3,
    };
    let blocks = generate_blocks(&scenario).unwrap();
    assert_eq!(blocks.len(), 200);
    let settings = FitSettings {
        sampler: SamplerSettings {
            n_iter: 3_000,
            burn_in: 1_000,
            ..Default::default()
        },
        ..Default::default()
    };
    let (report, posts) = fit_all(
        &ModelName::ALL,
        &[Covariate::FP, Covariate::SP],
        &blocks,
        &settings,
        true,
    );
    assert_eq!(report.models.len(), 7);
    for (m, post) in report.models.iter().zip(&posts) {
        assert!(m.failure.is_none(), "{}: {:?}", m.name, m.failure);
        let post = post.as_ref().unwrap();
        assert_eq!(post.chains.len(), 2);
        assert!(m.posterior_mean.iter().all(|v| v.is_finite()), "{}", m.name);
        // two sites: three site effects each plus their standard deviations
        assert!(m.parameters.iter().any(|p| p.name == "tau_mu"), "{}", m.name);
    }
    if let Some(sel) = report.selected {
        let chosen = report.get(sel).unwrap();
        assert!(chosen.converged);
        for m in report.models.iter().filter(|m| m.converged) {
            assert!(chosen.dic_value().unwrap() <= m.dic_value().unwrap());
        }
    }
    let json = serde_json::to_string(&report).unwrap();
    let back: pedrisk::inference::FitReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}
