//! Bivariate normal CDF (Genz's BVND algorithm).

use std::f64::consts::PI;

use statrs::function::erf::erfc;

pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Positive nodes and weights of the `n`-point Gauss-Legendre rule on
/// [-1, 1] (`n` even).
fn gauss_legendre_half(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n / 2);
    for i in 1..=n / 2 {
        let mut x = (PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// `P(X > h, Y > k)` for standard bivariate normal with correlation `r`.
fn bvnu(h: f64, k: f64, r: f64) -> f64 {
    let n = if r.abs() < 0.3 {
        6
    } else if r.abs() < 0.75 {
        12
    } else {
        20
    };
    let half = gauss_legendre_half(n);
    // nodes 1 - x and 1 + x with shared weights
    let nodes: Vec<(f64, f64)> = half
        .iter()
        .flat_map(|&(x, w)| [(1.0 - x, w), (1.0 + x, w)])
        .collect();
    let mut hk = h * k;
    let mut k = k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin() / 2.0;
        for &(x, w) in &nodes {
            let sn = (asr * x).sin();
            bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        return (bvn * asr / (2.0 * PI) + norm_cdf(-h) * norm_cdf(-k)).clamp(0.0, 1.0);
    }
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let as_ = 1.0 - r * r;
        let mut a = as_.sqrt();
        let bs = (h - k) * (h - k);
        let asr = -(bs / as_ + hk) / 2.0;
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 80.0;
        if asr > -100.0 {
            bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
        }
        if hk > -100.0 {
            let b = bs.sqrt();
            let sp = (2.0 * PI).sqrt() * norm_cdf(-b / a);
            bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
        }
        a /= 2.0;
        let mut acc = 0.0;
        for &(x, w) in &nodes {
            let xs = (a * x) * (a * x);
            let asr = -(bs / xs + hk) / 2.0;
            if asr > -100.0 {
                let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                let rs = (1.0 - xs).sqrt();
                let ep = (-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                acc += w * asr.exp() * (sp - ep);
            }
        }
        bvn = (a * acc - bvn) / (2.0 * PI);
    }
    if r > 0.0 {
        bvn += norm_cdf(-h.max(k));
    } else if h >= k {
        bvn = -bvn;
    } else {
        let l = if h < 0.0 {
            norm_cdf(k) - norm_cdf(h)
        } else {
            norm_cdf(-h) - norm_cdf(-k)
        };
        bvn = l - bvn;
    }
    bvn.clamp(0.0, 1.0)
}

/// `P(X <= x, Y <= y)` for a standard bivariate normal with correlation `r`.
pub fn bvn_cdf(x: f64, y: f64, r: f64) -> f64 {
    if x == f64::NEG_INFINITY || y == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return norm_cdf(y);
    }
    if y == f64::INFINITY {
        return norm_cdf(x);
    }
    bvnu(-x, -y, r)
}

/// Gaussian copula `C_r(u, v)`.
pub fn gaussian_copula(u: f64, v: f64, r: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    if u <= 0.0 || v <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return v.min(1.0);
    }
    if v >= 1.0 {
        return u;
    }
    let n = Normal::standard();
    bvn_cdf(n.inverse_cdf(u), n.inverse_cdf(v), r)
}
