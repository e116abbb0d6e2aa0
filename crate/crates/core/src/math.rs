//! Small numerically stable scalar helpers shared by the likelihood kernels.

/// Logistic function `1 / (1 + exp(-s))`.
#[inline]
pub fn expit(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// `log(1 + exp(s))`, switching to the asymptotic branches for `|s| > 30`.
#[inline]
pub fn softplus(s: f64) -> f64 {
    if s > 30.0 {
        s + (-s).exp()
    } else if s < -30.0 {
        s.exp()
    } else {
        s.exp().ln_1p()
    }
}

/// `log(p / (1 - p))`.
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Numerically stable `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
