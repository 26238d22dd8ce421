//! Special functions needed by the likelihood and by the test statistics.
//!
//! Log-gamma and the error function come from `libm`; digamma, trigamma, the
//! rising-factorial differences, the normal quantile and the incomplete gamma
//! function are implemented here.

use libm::{erfc, exp, lgamma, log, log1p, sqrt};

/// Rising factorials with at most this many factors are summed term by term.
const DIRECT_SUM_LIMIT: u64 = 32;

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    lgamma(x)
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    lgamma(a) + lgamma(b) - lgamma(a + b)
}

/// Tail of the Stirling series, `ln Γ(z) - [(z - 1/2) ln z - z + ln √(2π)]`.
fn stirling_correction(z: f64) -> f64 {
    let r = 1.0 / z;
    let r2 = r * r;
    r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 * (1.0 / 1680.0))))
}

/// `ln Γ(x + k) - ln Γ(x)`, the log of the rising factorial `x (x+1) ... (x+k-1)`.
///
/// Stays accurate when `x` is huge compared with `k`, which is exactly where
/// the beta-binomial likelihood goes as the prior mass grows.
pub fn ln_rising(x: f64, k: u64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if k <= DIRECT_SUM_LIMIT {
        let mut acc = 0.0;
        for i in 0..k {
            acc += log(x + i as f64);
        }
        return acc;
    }
    let kf = k as f64;
    if x >= 10.0 {
        (x - 0.5) * log1p(kf / x) + kf * log(x + kf) - kf + stirling_correction(x + kf)
            - stirling_correction(x)
    } else {
        lgamma(x + kf) - lgamma(x)
    }
}

/// Digamma function `ψ(x)` for `x > 0`.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    acc + log(x)
        - 0.5 * r
        - r2 * (1.0 / 12.0
            - r2 * (1.0 / 120.0
                - r2 * (1.0 / 252.0
                    - r2 * (1.0 / 240.0 - r2 * (1.0 / 132.0 - r2 * (691.0 / 32760.0))))))
}

/// Trigamma function `ψ'(x)` for `x > 0`.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    acc + r
        + 0.5 * r2
        + r * r2
            * (1.0 / 6.0
                - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * (5.0 / 66.0)))))
}

/// `ψ(x + k) - ψ(x)`.
pub fn digamma_diff(x: f64, k: u64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if k <= DIRECT_SUM_LIMIT {
        let mut acc = 0.0;
        for i in 0..k {
            acc += 1.0 / (x + i as f64);
        }
        return acc;
    }
    digamma(x + k as f64) - digamma(x)
}

/// `ψ'(x + k) - ψ'(x)` (always non-positive).
pub fn trigamma_diff(x: f64, k: u64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if k <= DIRECT_SUM_LIMIT {
        let mut acc = 0.0;
        for i in 0..k {
            let y = x + i as f64;
            acc -= 1.0 / (y * y);
        }
        return acc;
    }
    trigamma(x + k as f64) - trigamma(x)
}

/// `z ln z + (1 - z) ln(1 - z)`, with `0 ln 0 = 0`. Never positive.
pub fn neg_entropy(z: f64) -> f64 {
    let term = |v: f64| if v <= 0.0 { 0.0 } else { v * log(v) };
    term(z) + term(1.0 - z)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / core::f64::consts::SQRT_2)
}

/// Standard normal quantile (Wichura's AS 241, about 1e-16 relative accuracy).
///
/// Returns `-inf` / `+inf` at 0 / 1 and NaN outside `[0, 1]`.
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.0809287301227 * r + 33430.575583588128) * r + 67265.770927008700)
                * r
                + 45921.953931549871)
                * r
                + 13731.693765509461)
                * r
                + 1971.5909503065513)
                * r
                + 133.14166789178438)
                * r
                + 3.3871328727963665)
            / (((((((5226.4952788525455 * r + 28729.085735721943) * r + 39307.895800092710)
                * r
                + 21213.794301586596)
                * r
                + 5394.1960214247511)
                * r
                + 687.18700749205791)
                * r
                + 42.313330701600911)
                * r
                + 1.0);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = sqrt(-log(tail));
    let value = if r <= 5.0 {
        r -= 1.6;
        (((((((7.7454501427834141e-4 * r + 0.022723844989269184) * r + 0.24178072517745061) * r
            + 1.2704582524523684)
            * r
            + 3.6478483247632045)
            * r
            + 5.7694972214606914)
            * r
            + 4.6303378461565453)
            * r
            + 1.4234371107496835)
            / (((((((1.0507500716444169e-9 * r + 5.4759380849953449e-4) * r
                + 0.015198666563616457)
                * r
                + 0.14810397642748007)
                * r
                + 0.68976733498510005)
                * r
                + 1.6763848301838038)
                * r
                + 2.0531916266377588)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.0103343992922881e-7 * r + 2.7115555687434876e-5) * r + 0.0012426609473880784)
            * r
            + 0.026532189526576123)
            * r
            + 0.29656057182850489)
            * r
            + 1.7848265399172913)
            * r
            + 5.4637849111641144)
            * r
            + 6.6579046435011033)
            / (((((((2.0442631033899397e-15 * r + 1.4215117583164459e-7) * r
                + 1.8463183175100548e-5)
                * r
                + 7.8686913114561326e-4)
                * r
                + 0.014875361290850615)
                * r
                + 0.13692988092273581)
                * r
                + 0.59983220655588794)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// Regularized upper incomplete gamma function `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

/// Regularized lower incomplete gamma function `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    1.0 - gamma_q(a, x)
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * exp(-x + a * log(x) - lgamma(a))
}

fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    exp(-x + a * log(x) - lgamma(a)) * h
}

/// Upper tail `Pr(X > x)` of a chi-squared variable with `dof` degrees of freedom.
pub fn chi2_sf(x: f64, dof: f64) -> f64 {
    gamma_q(0.5 * dof, 0.5 * x)
}
