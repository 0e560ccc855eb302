use nalgebra::DMatrix;

use spt_lab_core::markets::{constant_coefficient_market, diverse_market, integrate_log_euler};
use spt_lab_core::mc::map_paths;
use spt_lab_core::numeric::Estimate;
use spt_lab_core::paths::{generate_factors, make_grid};
use spt_lab_core::portfolios::{portfolio_value, MarketRule};

#[test]
fn gbm_terminal_mean_matches_exponential_growth() {
    let sigma = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.1, 0.2]);
    let b = [0.05, 0.1];
    let m = constant_coefficient_market(&b, &sigma, &[1.0, 2.0]).unwrap();
    let f = generate_factors(make_grid(1.0, 4).unwrap(), 2, 100_000, 2024).unwrap();
    let xt = map_paths(f.n_paths(), |i| {
        let p = integrate_log_euler(&m, &f, i)?;
        Ok(p.prices(4))
    })
    .unwrap();
    for (i, x0) in [1.0, 2.0].iter().enumerate() {
        let col: Vec<f64> = xt.iter().map(|x| x[i]).collect();
        let e = Estimate::from_samples(&col);
        let want = x0 * b[i].exp();
        assert!(e.z_score(want).abs() < 3.0, "stock {i}: {e:?} vs {want}");
    }
}

#[test]
fn market_portfolio_tracks_total_capitalisation() {
    let sigma = DMatrix::from_row_slice(3, 3, &[0.3, 0.0, 0.1, 0.0, 0.2, 0.0, 0.1, 0.1, 0.25]);
    let m = constant_coefficient_market(&[0.1, -0.05, 0.02], &sigma, &[1.0, 2.0, 0.5]).unwrap();
    let f = generate_factors(make_grid(2.0, 500).unwrap(), 3, 20, 6).unwrap();
    for i in 0..20 {
        let p = integrate_log_euler(&m, &f, i).unwrap();
        let v = portfolio_value(&MarketRule, &p, 3.5).unwrap();
        for k in 0..=500 {
            let cap = p.total_cap(k);
            assert!((v.value(k) / cap - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let m = diverse_market(&DMatrix::identity(3, 3), &[0.0; 3], 0.3, 1.0, &[1.0; 3]).unwrap();
    let f = generate_factors(make_grid(1.0, 200).unwrap(), 3, 64, 99).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            map_paths(f.n_paths(), |i| {
                let p = integrate_log_euler(&m, &f, i)?;
                Ok(p.log_prices(200).to_vec())
            })
            .unwrap()
        })
    };
    let one = run(1);
    let many = run(4);
    let bits = |v: &Vec<Vec<f64>>| -> Vec<u64> { v.iter().flatten().map(|x| x.to_bits()).collect() };
    assert_eq!(bits(&one), bits(&many));
}
