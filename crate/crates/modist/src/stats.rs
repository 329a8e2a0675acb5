//! Small statistics helpers: chi-square p-values, gamma functions and
//! normal-approximation confidence intervals for accuracy reports.

/// ln Γ(x) via the Lanczos approximation (g=7, n=9), |err| < 1e-13 for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection formula
        return std::f64::consts::PI.ln() - (std::f64::consts::PI * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series expansion
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut n = a;
        for _ in 0..500 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        (sum.ln() + a * x.ln() - x - ln_gamma(a)).exp()
    } else {
        // continued fraction for Q(a, x)
        let mut b = x + 1.0 - a;
        let mut c = 1e300;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < 1e-300 {
                d = 1e-300;
            }
            c = b + an / c;
            if c.abs() < 1e-300 {
                c = 1e-300;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-15 {
                break;
            }
        }
        let q = (a * x.ln() - x - ln_gamma(a)).exp() * h;
        1.0 - q
    }
}

/// Upper-tail p-value of a chi-square statistic with `df` degrees of freedom.
pub fn chi_square_p_value(chi2: f64, df: usize) -> f64 {
    1.0 - gamma_p(df as f64 / 2.0, chi2 / 2.0)
}

/// Pearson chi-square statistic for an R x C contingency table.
/// Returns (chi2, degrees of freedom).
pub fn chi_square_independence(table: &[Vec<u64>]) -> (f64, usize) {
    let rows = table.len();
    let cols = if rows > 0 { table[0].len() } else { 0 };
    let row_sum: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_sum: Vec<f64> =
        (0..cols).map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let total: f64 = row_sum.iter().sum();
    let mut chi2 = 0.0;
    let mut used_rows = 0usize;
    let mut used_cols = 0usize;
    for (i, r) in table.iter().enumerate() {
        if row_sum[i] == 0.0 {
            continue;
        }
        used_rows += 1;
        for (j, &obs) in r.iter().enumerate() {
            if col_sum[j] == 0.0 {
                continue;
            }
            let expect = row_sum[i] * col_sum[j] / total;
            let d = obs as f64 - expect;
            chi2 += d * d / expect;
        }
    }
    for j in 0..cols {
        if col_sum[j] > 0.0 {
            used_cols += 1;
        }
    }
    let df = used_rows.saturating_sub(1) * used_cols.saturating_sub(1);
    (chi2, df.max(1))
}

/// Mean of a slice; 0 for empty input.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation (n-1 denominator); 0 for fewer than 2 values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Two-sided normal-approximation confidence half-width for a mean of `n`
/// values with sample std `sd`, at z = 1.96 (95%).
pub fn ci95_half_width(sd: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    1.96 * sd / (n as f64).sqrt()
}

/// Normal-approximation binomial CI half-width for proportion `p` over `n`
/// trials at the given z value.
pub fn binomial_ci_half_width(p: f64, n: usize, z: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    z * (p * (1.0 - p) / n as f64).sqrt()
}
