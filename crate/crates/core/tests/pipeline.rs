//! Generated panels through dispersion and the herding regressions.

use herding_core::dispersion::csad;
use herding_core::events::{ExogKind, ExogSeries};
use herding_core::panel::{compute_returns, reconstruct_prices, SeriesSpec};
use herding_core::regress::{
    classify_activation, classify_herding, event_regression, fit_ols, herding_regression, Design,
    ExogTerm, Verdict,
};
use herding_core::synth::{simulate_csad, simulate_panel, EventPlant, SynthConfig};

fn herding_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_assets: 100,
        n_periods: 2000,
        seed,
        ..SynthConfig::single_regime([0.02, 0.3, -2.0], 0.003)
    }
}

#[test]
fn planted_herding_survives_the_panel_round_trip() {
    let mut herding = 0;
    for seed in 0..50 {
        let sim = simulate_panel(&herding_config(seed)).unwrap();
        let disp = csad(&sim.returns, 2);
        let fit = herding_regression(&disp).unwrap();
        herding += (classify_herding(&fit, 0.05).unwrap().verdict == Verdict::Herding) as usize;
    }
    assert!(herding >= 48, "herding in {herding}/50");
}

#[test]
fn prices_round_trip_through_returns() {
    let sim = simulate_panel(&SynthConfig { n_periods: 100, n_assets: 10, ..Default::default() }).unwrap();
    let start = sim.returns.dates()[0].pred_opt().unwrap();
    let prices = reconstruct_prices(&sim.returns, start, &[100.0; 10]).unwrap();
    let again = compute_returns(&prices, &SeriesSpec::default());
    for (a, b) in again.rows().iter().zip(sim.returns.rows()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x.unwrap() - y.unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn negative_gamma2_regime_estimates_negative() {
    let mut negative = 0;
    for seed in 0..40 {
        let cfg = SynthConfig { n_periods: 3000, seed, ..Default::default() };
        let sim = simulate_csad(&cfg).unwrap();
        let d = &sim.dispersion;
        let rows: Vec<usize> = (0..d.len()).filter(|&t| sim.regimes[t] == 1).collect();
        let pick = |v: &[f64]| rows.iter().map(|&t| v[t]).collect::<Vec<_>>();
        let design = Design::new(
            vec!["const".into(), "|Rm|".into(), "Rm^2".into()],
            vec![vec![1.0; rows.len()], pick(&d.rm_abs), pick(&d.rm_sq)],
        )
        .unwrap();
        let fit = fit_ols(&design, &pick(&d.csad)).unwrap();
        negative += (fit.coef[2] < 0.0) as usize;
    }
    assert!(negative >= 38, "negative in {negative}/40");
}

#[test]
fn null_event_mostly_inactive() {
    let mut inactive = 0;
    for seed in 0..50 {
        let cfg = SynthConfig {
            n_periods: 2000,
            event: Some(EventPlant { prob: 0.1, gamma3: 0.0 }),
            seed,
            ..SynthConfig::single_regime([0.02, 0.3, -2.0], 0.003)
        };
        let sim = simulate_csad(&cfg).unwrap();
        let dummy = sim.dummy.unwrap();
        let fit = event_regression(&sim.dispersion, &dummy, ExogTerm::Auto).unwrap();
        inactive += !classify_activation(&fit, 0.05).unwrap().activates as usize;
    }
    assert!(inactive >= 45, "no activation in {inactive}/50");
}

#[test]
fn planted_event_activates() {
    let cfg = SynthConfig {
        n_periods: 2000,
        event: Some(EventPlant { prob: 0.2, gamma3: -1.0 }),
        seed: 5,
        ..SynthConfig::single_regime([0.02, 0.3, -2.0], 0.003)
    };
    let sim = simulate_csad(&cfg).unwrap();
    let dummy = sim.dummy.unwrap();
    let fit = event_regression(&sim.dispersion, &dummy, ExogTerm::Auto).unwrap();
    assert!(classify_activation(&fit, 0.05).unwrap().activates);
    // the same values passed as an index return enter squared instead
    let as_index = ExogSeries::new(dummy.dates.clone(), dummy.values.clone(), ExogKind::IndexReturn, "x").unwrap();
    let sq = event_regression(&sim.dispersion, &as_index, ExogTerm::Auto).unwrap();
    assert_ne!(sq.coef[3], fit.coef[3]);
}
