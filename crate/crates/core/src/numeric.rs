//! Shared numeric helpers: deterministic RNG streams, stable summation,
//! Gauss-Legendre quadrature and complex-scalar text format.

use num_complex::Complex64;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG stream for path `index` under a master `seed`.
///
/// Streams are independent of worker count and scheduling, so estimators
/// that reduce per-path results in index order are bit-reproducible.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Pairwise summation; order-deterministic and more accurate than a naive
/// left fold for long vectors.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Sample mean and standard error computed with pairwise sums.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1],
/// computed by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' by recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Integrate `f` over `[a, b]` with a fixed-panel composite Gauss-Legendre
/// rule; `panels` subdivides geometrically toward `a` when `grade > 1`.
pub fn integrate_gl(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    panels: usize,
    nodes: &[f64],
    weights: &[f64],
) -> f64 {
    let mut total = 0.0;
    let step = (b - a) / panels as f64;
    for p in 0..panels {
        let (lo, hi) = (a + p as f64 * step, a + (p + 1) as f64 * step);
        let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            acc += w * f(c + h * x);
        }
        total += acc * h;
    }
    total
}

/// Format a complex scalar as `a+bi` (always with explicit imaginary part).
pub fn format_complex(z: Complex64) -> String {
    format!("{}{:+}i", z.re, z.im)
}

/// Parse `a+bi` / `a-bi` / `a` / `bi` into a complex scalar.
pub fn parse_complex(s: &str) -> Option<Complex64> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return None;
    }
    if let Some(body) = s.strip_suffix('i') {
        // Split at the last +/- that is not part of an exponent.
        let bytes = body.as_bytes();
        let mut split = None;
        for k in (1..bytes.len()).rev() {
            let c = bytes[k] as char;
            if (c == '+' || c == '-') && !matches!(bytes[k - 1] as char, 'e' | 'E') {
                split = Some(k);
                break;
            }
        }
        match split {
            Some(k) => {
                let re: f64 = body[..k].parse().ok()?;
                let im_str = &body[k..];
                let im: f64 = if im_str == "+" {
                    1.0
                } else if im_str == "-" {
                    -1.0
                } else {
                    im_str.parse().ok()?
                };
                Some(Complex64::new(re, im))
            }
            None => {
                let im: f64 = if body.is_empty() { 1.0 } else { body.parse().ok()? };
                Some(Complex64::new(0.0, im))
            }
        }
    } else {
        let re: f64 = s.parse().ok()?;
        Some(Complex64::new(re, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_exactness_on_polynomials() {
        let (n, w) = gauss_legendre(16);
        // 16-point rule integrates degree <= 31 exactly.
        let val = integrate_gl(&|x| x.powi(10), 0.0, 1.0, 1, &n, &w);
        assert!((val - 1.0 / 11.0).abs() < 1e-14);
        let val = integrate_gl(&|x| (3.0 * x).exp(), 0.0, 2.0, 4, &n, &w);
        assert!((val - (6f64.exp() - 1.0) / 3.0).abs() < 1e-10);
    }

    #[test]
    fn complex_roundtrip() {
        for z in [
            Complex64::new(1.0, 0.0),
            Complex64::new(-0.5, -3e-2),
            Complex64::new(0.0, 1.0),
            Complex64::new(2.0, -1.5),
            Complex64::new(1e-12, 7.25),
        ] {
            let s = format_complex(z);
            let back = parse_complex(&s).unwrap();
            assert_eq!(z, back, "roundtrip failed for {s}");
        }
        assert_eq!(parse_complex("2i"), Some(Complex64::new(0.0, 2.0)));
        assert_eq!(parse_complex("-4"), Some(Complex64::new(-4.0, 0.0)));
        assert_eq!(parse_complex("1e-3+2e-4i"), Some(Complex64::new(1e-3, 2e-4)));
    }

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..101).map(|k| k as f64 * 0.1).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }
}
