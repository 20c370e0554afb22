//! Small numeric helpers shared across modules.

/// Compensated (Kahan) summation. Mass audits compare sums of ~10^6 cells
/// against 1e-12 relative drift budgets, so naive accumulation error is
/// not acceptable.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Sum a slice with compensation.
pub fn ksum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// 17-significant-digit decimal text; round-trips f64 exactly.
pub fn fmt_g17(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Slope and intercept of the least-squares line through (x, y) pairs.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Composite Simpson rule on [a, b] with `n` subintervals (n made even).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = if n.is_multiple_of(2) { n } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i.is_multiple_of(2) { 2.0 } else { 4.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Surface area of the unit sphere in R^n (omega_{n-1}); n = 1, 2, 3.
pub fn unit_sphere_area(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => {
            // 2 pi^{n/2} / Gamma(n/2), via the half-integer recurrence.
            let mut g = if n.is_multiple_of(2) {
                1.0
            } else {
                std::f64::consts::PI.sqrt()
            };
            let mut a = if n.is_multiple_of(2) { 1.0 } else { 0.5 };
            while a < n as f64 / 2.0 - 0.25 {
                g *= a;
                a += 1.0;
            }
            2.0 * std::f64::consts::PI.powf(n as f64 / 2.0) / g
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive_on_skewed_sums() {
        let mut k = KahanSum::new();
        k.add(1.0);
        for _ in 0..1_000_000 {
            k.add(1e-17);
        }
        assert!((k.value() - (1.0 + 1e-11)).abs() < 1e-15);
    }

    #[test]
    fn g17_round_trips() {
        for &x in &[0.1, 1.0 / 3.0, 6.02e23, -1.5e-300, 0.0] {
            let s = fmt_g17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (a, b) = linear_fit(&xs, &ys);
        assert!((a - 2.0).abs() < 1e-12);
        assert!((b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_integrates_cubic_exactly() {
        let v = simpson(|x| x * x * x, 0.0, 2.0, 16);
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_areas() {
        assert_eq!(unit_sphere_area(1), 2.0);
        assert!((unit_sphere_area(2) - 2.0 * std::f64::consts::PI).abs() < 1e-14);
        assert!((unit_sphere_area(3) - 4.0 * std::f64::consts::PI).abs() < 1e-14);
    }
}
