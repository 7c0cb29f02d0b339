//! Log-domain accumulation and quadrature helpers shared by the other modules.

/// Running `log(sum exp(x_i))` with a moving maximum, so no term ever overflows.
#[derive(Debug, Clone, Copy)]
pub struct LogSum {
    max: f64,
    scaled: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSum {
    pub fn new() -> Self {
        LogSum {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    pub fn add(&mut self, log_term: f64) {
        if log_term == f64::NEG_INFINITY {
            return;
        }
        if log_term > self.max {
            self.scaled = self.scaled * (self.max - log_term).exp() + 1.0;
            self.max = log_term;
        } else {
            self.scaled += (log_term - self.max).exp();
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

pub fn log_sum_exp<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut acc = LogSum::new();
    for t in terms {
        acc.add(t);
    }
    acc.value()
}

/// Double-exponential quadrature, bisecting until the reported error meets `tol`.
pub fn integrate<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    integrate_depth(f, a, b, tol, 0)
}

fn integrate_depth<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    if a == b {
        return 0.0;
    }
    let out = quadrature::integrate(f, a, b, tol * 0.1);
    if out.error_estimate <= tol || depth >= 12 {
        return out.integral;
    }
    let mid = 0.5 * (a + b);
    integrate_depth(f, a, mid, tol * 0.5, depth + 1) + integrate_depth(f, mid, b, tol * 0.5, depth + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_matches_direct_sum() {
        let xs = [0.3f64, -2.0, 5.5, 1.25];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(xs) - direct).abs() < 1e-14);
    }

    #[test]
    fn log_sum_survives_huge_terms() {
        let v = log_sum_exp([1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(std::iter::empty()), f64::NEG_INFINITY);
    }

    #[test]
    fn quadrature_handles_endpoint_singularity() {
        // int_0^1 x^{-1/2} dx = 2; the tanh-sinh rule only gets close to the pole
        let v = integrate(|x: f64| x.powf(-0.5), 0.0, 1.0, 1e-12);
        assert!((v - 2.0).abs() < 1e-8, "{v}");
        let v = integrate(|x: f64| (-x * x).exp(), 0.0, 6.0, 1e-13);
        assert!((v - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-12, "{v}");
    }
}
