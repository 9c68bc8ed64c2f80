//! Akima (1970) interpolating spline with exact derivatives of the curve
//! value with respect to the node values.
//!
//! Interior slopes are `d_i = (w1·m_{i-1} + w2·m_i) / (w1 + w2)` with
//! `w1 = |m_{i+1} - m_i|`, `w2 = |m_{i-1} - m_{i-2}|`. Two ghost secants are
//! linearly extrapolated on each end (`m_{-1} = 2m_0 - m_1`,
//! `m_{-2} = 2m_{-1} - m_0`, mirrored on the right). When `w1 + w2` is below
//! [`TIE_EPS`] the slope falls back to the secant average.
//!
//! The curve is differentiated through `|·|` with `sign(0) = 0`.

use crate::error::{Error, Result};

pub const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct AkimaSpline {
    times: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    /// `slope_jac[i][k] = ∂d_i / ∂y_k`
    slope_jac: Vec<Vec<f64>>,
}

/// A secant (real or extrapolated) as a value and its linear coefficients
/// over the node values.
struct Secant {
    value: f64,
    coeffs: Vec<f64>,
}

impl Secant {
    fn combine(a: f64, s: &Secant, b: f64, t: &Secant) -> Secant {
        Secant {
            value: a * s.value + b * t.value,
            coeffs: s.coeffs.iter().zip(&t.coeffs).map(|(x, y)| a * x + b * y).collect(),
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl AkimaSpline {
    pub fn new(times: &[f64], values: &[f64]) -> Result<Self> {
        let n = times.len();
        if n < 3 {
            return Err(Error::Argument(format!("Akima spline needs >= 3 nodes, got {n}")));
        }
        if values.len() != n {
            return Err(Error::Argument(format!(
                "{} node values for {n} node times",
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument("node times must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("node values must be finite".into()));
        }

        // ext[k + 2] holds m_k for k = -2..=n
        let mut real: Vec<Secant> = (0..n - 1)
            .map(|k| {
                let h = times[k + 1] - times[k];
                let mut coeffs = vec![0.0; n];
                coeffs[k] = -1.0 / h;
                coeffs[k + 1] = 1.0 / h;
                Secant { value: (values[k + 1] - values[k]) / h, coeffs }
            })
            .collect();
        let m_neg1 = Secant::combine(2.0, &real[0], -1.0, &real[1]);
        let m_neg2 = Secant::combine(2.0, &m_neg1, -1.0, &real[0]);
        let last = real.len() - 1;
        let m_n1 = Secant::combine(2.0, &real[last], -1.0, &real[last - 1]);
        let m_n = Secant::combine(2.0, &m_n1, -1.0, &real[last]);
        let mut ext = Vec::with_capacity(n + 3);
        ext.push(m_neg2);
        ext.push(m_neg1);
        ext.append(&mut real);
        ext.push(m_n1);
        ext.push(m_n);

        let mut slopes = Vec::with_capacity(n);
        let mut slope_jac = Vec::with_capacity(n);
        for i in 0..n {
            // m_{i-2}, m_{i-1}, m_i, m_{i+1}
            let (a, b, c, e) = (&ext[i], &ext[i + 1], &ext[i + 2], &ext[i + 3]);
            let w1 = (e.value - c.value).abs();
            let w2 = (b.value - a.value).abs();
            let s = w1 + w2;
            let (d, da, db, dc, de) = if s < TIE_EPS {
                ((b.value + c.value) / 2.0, 0.0, 0.5, 0.5, 0.0)
            } else {
                let d = (w1 * b.value + w2 * c.value) / s;
                let dd_dw1 = (b.value - d) / s;
                let dd_dw2 = (c.value - d) / s;
                let s1 = sign(e.value - c.value);
                let s2 = sign(b.value - a.value);
                (
                    d,
                    -dd_dw2 * s2,
                    w1 / s + dd_dw2 * s2,
                    w2 / s - dd_dw1 * s1,
                    dd_dw1 * s1,
                )
            };
            slopes.push(d);
            slope_jac.push(
                (0..n)
                    .map(|k| da * a.coeffs[k] + db * b.coeffs[k] + dc * c.coeffs[k] + de * e.coeffs[k])
                    .collect(),
            );
        }

        Ok(Self {
            times: times.to_vec(),
            values: values.to_vec(),
            slopes,
            slope_jac,
        })
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    fn locate(&self, t: f64) -> Result<(usize, f64, f64)> {
        let n = self.times.len();
        let (lo, hi) = (self.times[0], self.times[n - 1]);
        if !(t >= lo && t <= hi) {
            return Err(Error::Argument(format!(
                "evaluation point {t} outside node range [{lo}, {hi}]"
            )));
        }
        let i = self.times.partition_point(|&x| x <= t).clamp(1, n - 1) - 1;
        let h = self.times[i + 1] - self.times[i];
        Ok((i, h, (t - self.times[i]) / h))
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let (i, h, s) = self.locate(t)?;
        let [h00, h10, h01, h11] = hermite_basis(s);
        Ok(h00 * self.values[i]
            + h10 * h * self.slopes[i]
            + h01 * self.values[i + 1]
            + h11 * h * self.slopes[i + 1])
    }

    /// Curve value at `t` plus `∂value/∂y_k` for every node, written to `grad`.
    pub fn eval_with_gradient(&self, t: f64, grad: &mut [f64]) -> Result<f64> {
        let (i, h, s) = self.locate(t)?;
        let [h00, h10, h01, h11] = hermite_basis(s);
        for (k, g) in grad.iter_mut().enumerate() {
            *g = h * (h10 * self.slope_jac[i][k] + h11 * self.slope_jac[i + 1][k]);
        }
        grad[i] += h00;
        grad[i + 1] += h01;
        Ok(h00 * self.values[i]
            + h10 * h * self.slopes[i]
            + h01 * self.values[i + 1]
            + h11 * h * self.slopes[i + 1])
    }
}

fn hermite_basis(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    ]
}

/// Evaluate the Akima spline through `(times, values)` at `t`.
pub fn akima_eval(times: &[f64], values: &[f64], t: f64) -> Result<f64> {
    AkimaSpline::new(times, values)?.eval(t)
}
