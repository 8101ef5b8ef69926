//! Gauss rules on intervals and collapsed (Duffy) rules on simplices.

/// Points and weights on a reference simplex `{x_i >= 0, sum x_i <= 1}`.
#[derive(Debug, Clone)]
pub struct Rule {
    pub dim: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    // Legendre P_n and its derivative at z
    let eval = |z: f64| {
        let mut p0 = 1.0;
        let mut p1 = 0.0;
        for k in 0..n {
            let p2 = p1;
            p1 = p0;
            p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
        }
        (p0, n as f64 * (z * p0 - p1) / (z * z - 1.0))
    };
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = eval(z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = eval(z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[n - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn points_for(degree: usize) -> usize {
    degree / 2 + 1
}

/// Rule on the reference simplex of dimension `dim` exact for polynomials of total degree `degree`.
pub fn simplex_rule(dim: usize, degree: usize) -> Rule {
    match dim {
        0 => Rule { dim, points: vec![[0.0; 3]], weights: vec![1.0] },
        1 => {
            let (x, w) = gauss_legendre(points_for(degree));
            Rule { dim, points: x.iter().map(|&a| [a, 0.0, 0.0]).collect(), weights: w }
        }
        2 if degree <= 5 => triangle_degree5(),
        2 => {
            let (xa, wa) = gauss_legendre(points_for(degree + 1));
            let (xb, wb) = gauss_legendre(points_for(degree));
            let mut points = Vec::new();
            let mut weights = Vec::new();
            for (a, wa) in xa.iter().zip(&wa) {
                for (b, wb) in xb.iter().zip(&wb) {
                    points.push([*a, b * (1.0 - a), 0.0]);
                    weights.push(wa * wb * (1.0 - a));
                }
            }
            Rule { dim, points, weights }
        }
        3 => {
            let (xa, wa) = gauss_legendre(points_for(degree + 2));
            let (xb, wb) = gauss_legendre(points_for(degree + 1));
            let (xc, wc) = gauss_legendre(points_for(degree));
            let mut points = Vec::new();
            let mut weights = Vec::new();
            for (a, wa) in xa.iter().zip(&wa) {
                for (b, wb) in xb.iter().zip(&wb) {
                    for (c, wc) in xc.iter().zip(&wc) {
                        let s = 1.0 - a;
                        points.push([*a, b * s, c * s * (1.0 - b)]);
                        weights.push(wa * wb * wc * s * s * (1.0 - b));
                    }
                }
            }
            Rule { dim, points, weights }
        }
        _ => panic!("unsupported simplex dimension {dim}"),
    }
}

/// Seven-point symmetric rule, exact for degree 5.
fn triangle_degree5() -> Rule {
    let r = 15f64.sqrt();
    let a1 = (6.0 - r) / 21.0;
    let b1 = (9.0 + 2.0 * r) / 21.0;
    let a2 = (6.0 + r) / 21.0;
    let b2 = (9.0 - 2.0 * r) / 21.0;
    let w1 = (155.0 - r) / 2400.0;
    let w2 = (155.0 + r) / 2400.0;
    let points = vec![
        [1.0 / 3.0, 1.0 / 3.0, 0.0],
        [a1, a1, 0.0],
        [b1, a1, 0.0],
        [a1, b1, 0.0],
        [a2, a2, 0.0],
        [b2, a2, 0.0],
        [a2, b2, 0.0],
    ];
    let weights = vec![9.0 / 80.0, w1, w1, w1, w2, w2, w2];
    Rule { dim: 2, points, weights }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    // integral of x^a y^b z^c over the reference simplex of dimension k
    fn monomial_exact(k: usize, e: [u32; 3]) -> f64 {
        let s: u32 = e.iter().take(k).sum();
        let num: f64 = e.iter().take(k).map(|&p| factorial(p)).product();
        num / factorial(s + k as u32)
    }

    #[test]
    fn gauss_legendre_weights_sum_to_one() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(x.iter().all(|&t| t > 0.0 && t < 1.0));
        }
    }

    #[test]
    fn interval_rule_exact_for_degree() {
        for q in 0..12 {
            let r = simplex_rule(1, q);
            for p in 0..=q as u32 {
                let v: f64 = r.points.iter().zip(&r.weights).map(|(x, w)| w * x[0].powi(p as i32)).sum();
                assert!((v - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "q={q} p={p}");
            }
        }
    }

    #[test]
    fn triangle_and_tet_rules_exact() {
        for k in 2..=3 {
            for q in 0..=9 {
                let r = simplex_rule(k, q);
                for a in 0..=q as u32 {
                    for b in 0..=(q as u32 - a) {
                        let cmax = if k == 3 { q as u32 - a - b } else { 0 };
                        for c in 0..=cmax {
                            let v: f64 = r
                                .points
                                .iter()
                                .zip(&r.weights)
                                .map(|(x, w)| w * x[0].powi(a as i32) * x[1].powi(b as i32) * x[2].powi(c as i32))
                                .sum();
                            let exact = monomial_exact(k, [a, b, c]);
                            assert!((v - exact).abs() < 1e-14, "k={k} q={q} ({a},{b},{c}) {v} vs {exact}");
                        }
                    }
                }
            }
        }
    }
}
