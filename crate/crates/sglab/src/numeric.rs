//! Small numerical utilities shared across modules.

/// Kahan–Neumaier compensated accumulator. Long weighted Legendre sums
/// (degrees up to 512) lose ~1e−13 relative accuracy under naive summation;
/// compensation keeps the error near one ulp.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// log Γ(n+1) = log n! for integer n ≥ 0, via the standard Lanczos-free
/// route: exact table for small n, Stirling series beyond.
pub fn ln_factorial(n: u64) -> f64 {
    const TABLE_LEN: usize = 32;
    // ln k! for k = 0..31, filled on first call cost-free at compile time is
    // not possible for f64 ln, so compute cumulatively.
    if (n as usize) < TABLE_LEN {
        let mut acc = 0.0;
        for k in 2..=n {
            acc += (k as f64).ln();
        }
        return acc;
    }
    let x = n as f64 + 1.0;
    // Stirling series for ln Γ(x), accurate to ~1e−16 for x ≥ 32.
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv / 12.0 * (1.0 - inv2 / 30.0 * (1.0 - inv2 * 2.0 / 7.0));
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

/// Gauss–Legendre nodes and weights on [−1, 1], by Newton iteration from the
/// Chebyshev initial guess. Exact (to roundoff) for polynomial integrands of
/// degree ≤ 2n−1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be ≥ 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-angle initial guess for the i-th positive-side root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P'_n(x) by the ascending recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 1..n {
                let kf = k as f64;
                let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
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
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Bessel J₀ by its power series. Adequate (≤1e−13 absolute) for |x| ≤ 12,
/// which covers every planar-kernel evaluation this crate performs.
pub fn bessel_j0(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut acc = Kahan::new();
    acc.add(1.0);
    for k in 1..=40u32 {
        term *= q / ((k * k) as f64);
        acc.add(term);
        if term.abs() < 1e-18 {
            break;
        }
    }
    acc.total()
}

/// Bessel J₁ by its power series; same domain of adequacy as [`bessel_j0`].
pub fn bessel_j1(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 0.5 * x;
    let mut acc = Kahan::new();
    acc.add(term);
    for k in 1..=40u32 {
        term *= q / ((k * (k + 1)) as f64);
        acc.add(term);
        if term.abs() < 1e-18 {
            break;
        }
    }
    acc.total()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kahan_recovers_small_terms() {
        let mut acc = Kahan::new();
        acc.add(1e16);
        for _ in 0..1000 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_relative_eq!(acc.total(), 1000.0, max_relative = 1e-15);
    }

    #[test]
    fn ln_factorial_matches_direct_products() {
        assert_eq!(ln_factorial(0), 0.0);
        assert_eq!(ln_factorial(1), 0.0);
        assert_relative_eq!(ln_factorial(5), 120f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(ln_factorial(20), 2.43290200817664e18f64.ln(), max_relative = 1e-14);
        // Stirling branch against the cumulative branch at the seam.
        let direct: f64 = (2..=40u64).map(|k| (k as f64).ln()).sum();
        assert_relative_eq!(ln_factorial(40), direct, max_relative = 1e-14);
    }

    #[test]
    fn gauss_legendre_nodes_and_exactness() {
        // Frozen 5-point nodes (40-digit references).
        let (x, w) = gauss_legendre(5);
        assert_relative_eq!(x[0], -0.9061798459386639928, max_relative = 1e-13);
        assert_relative_eq!(x[1], -0.53846931010568309104, max_relative = 1e-13);
        assert_eq!(x[2], 0.0);
        assert_relative_eq!(x[4], 0.9061798459386639928, max_relative = 1e-13);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 2.0, max_relative = 1e-14);
        // Degree-9 monomial integrated exactly by the 5-point rule.
        let int_x8: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(8)).sum();
        assert_relative_eq!(int_x8, 2.0 / 9.0, max_relative = 1e-12);
        // A large rule still sums weights to 2.
        let (_, w) = gauss_legendre(600);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn bessel_oracle_values() {
        // High-precision reference values (40-digit arithmetic).
        assert_relative_eq!(bessel_j0(1.0), 0.7651976865579665514497, max_relative = 1e-13);
        assert!(bessel_j0(2.404825557695773).abs() < 1e-13); // first J0 zero
        assert_relative_eq!(bessel_j1(1.0), 0.4400505857449335159597, max_relative = 1e-13);
        assert_relative_eq!(bessel_j1(2.0), 0.5767248077568733872024, max_relative = 1e-13);
        assert_relative_eq!(bessel_j0(5.5), -0.006843869417819196823959, max_relative = 1e-10);
        assert_relative_eq!(bessel_j1(5.5), -0.3414382154290433501797, max_relative = 1e-12);
    }
}
