use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tradeoff_core::mechanisms::{laplace_noise, sine_polyonym_noise};
use tradeoff_core::metrics::{mean, noise_autocorrelation, percentile, std_dev};

const DRAWS: usize = 1_000_000;

fn draws(mut f: impl FnMut(&mut ChaCha8Rng) -> f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..DRAWS).map(|_| f(&mut rng)).collect()
}

/// E[sin(2 pi U)^(2m)] = C(2m, m) / 4^m.
fn even_sine_moment(m: u32) -> f64 {
    let mut c = 1.0;
    for i in 0..m {
        c *= (2 * m - i) as f64 / (i + 1) as f64;
    }
    c / 4f64.powi(m as i32)
}

fn sine_variance(theta: &[f64]) -> f64 {
    let mut v = 0.0;
    for (j, a) in theta.iter().enumerate() {
        for (k, b) in theta.iter().enumerate() {
            let (j, k) = (j as i32, k as i32);
            v += a.powi(2 * j + 1) * b.powi(2 * k + 1) * even_sine_moment((j + k + 1) as u32);
        }
    }
    v
}

#[test]
fn laplace_moments_and_quartile() {
    for (i, b) in [0.01, 0.5, 3.0].into_iter().enumerate() {
        let w = draws(|r| laplace_noise(b, r), i as u64);
        let sd = (2.0 * b * b).sqrt();
        assert!(mean(&w).abs() < 5.0 * sd / (DRAWS as f64).sqrt(), "mean b={b}");
        let var = std_dev(&w).powi(2);
        assert!((var / (2.0 * b * b) - 1.0).abs() < 0.01, "var b={b}: {var}");
        let q75 = percentile(&w, 75.0).unwrap();
        assert!((q75 / (b * 2f64.ln()) - 1.0).abs() < 0.01, "q75 b={b}: {q75}");
        assert!(percentile(&w, 50.0).unwrap().abs() < 0.005 * b);
    }
}

#[test]
fn sine_polyonym_moments() {
    let cases: [&[f64]; 4] = [&[0.3], &[1.2], &[0.0, 0.6, 0.0, 0.3, 0.09], &[1.8, 1.5, 1.2, 0.9, 0.6]];
    for (i, theta) in cases.into_iter().enumerate() {
        let w = draws(|r| sine_polyonym_noise(theta, r), 100 + i as u64);
        let var = sine_variance(theta);
        assert!(mean(&w).abs() < 5.0 * (var / DRAWS as f64).sqrt(), "mean {theta:?}");
        let got = std_dev(&w).powi(2);
        assert!((got / var - 1.0).abs() < 0.01, "var {theta:?}: {got} vs {var}");
        assert!(
            percentile(&w, 50.0).unwrap().abs() < 0.01 * var.sqrt(),
            "median {theta:?}"
        );
    }
    let w = draws(|r| sine_polyonym_noise(&[0.3], r), 7);
    let q75 = percentile(&w, 75.0).unwrap();
    assert!((q75 - 0.3 * std::f64::consts::FRAC_1_SQRT_2).abs() < 0.003, "{q75}");
}

#[test]
fn quartile_grows_with_scale() {
    let mut last = 0.0;
    for (i, c) in [0.25, 0.5, 1.0, 2.0, 4.0].into_iter().enumerate() {
        let theta: Vec<f64> = [0.3, 0.6, 0.9].iter().map(|t| t * c).collect();
        let q = percentile(&draws(|r| sine_polyonym_noise(&theta, r), 200 + i as u64), 75.0).unwrap();
        assert!(q > last, "c={c}: {q} <= {last}");
        last = q;
    }
    let mut last = 0.0;
    for (i, b) in [0.001, 0.01, 0.1, 1.0, 10.0].into_iter().enumerate() {
        let q = percentile(&draws(|r| laplace_noise(b, r), 300 + i as u64), 75.0).unwrap();
        assert!(q > last);
        last = q;
    }
}

#[test]
fn noise_streams_are_white() {
    let n = 100_000;
    let band = 4.0 / (n as f64).sqrt();
    let lap = draws(|r| laplace_noise(0.2, r), 400);
    let sine = draws(|r| sine_polyonym_noise(&[0.3, 0.6, 0.9], r), 401);
    for series in [&lap[..n], &sine[..n]] {
        let acf = noise_autocorrelation(series, 20).unwrap();
        assert_eq!(acf.len(), 20);
        for (k, r) in acf.iter().enumerate() {
            assert!(r.abs() < band, "lag {}: {r}", k + 1);
        }
    }
}
