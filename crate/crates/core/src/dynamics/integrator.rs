//! Dormand–Prince 5(4) with the fourth-order continuous extension.

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

pub type Vec3 = [f64; 3];

fn axpy(y: &Vec3, terms: &[(f64, &Vec3)], h: f64) -> Vec3 {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..3 {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// One attempted step: the fifth-order solution, the embedded error vector
/// and the coefficients of the dense-output polynomial.
#[derive(Debug, Clone, Copy)]
pub struct Step {
    pub t0: f64,
    pub h: f64,
    pub y_new: Vec3,
    pub error: Vec3,
    /// Derivative at `t0 + h` (first stage of the next step).
    pub f_new: Vec3,
    dense: [Vec3; 5],
}

impl Step {
    /// Continuous extension at `t` in `[t0, t0 + h]`.
    pub fn interpolate(&self, t: f64) -> Vec3 {
        let theta = (t - self.t0) / self.h;
        let th1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.dense;
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = r1[i] + theta * (r2[i] + th1 * (r3[i] + theta * (r4[i] + th1 * r5[i])));
        }
        out
    }

    /// Weighted RMS error norm with per-component scale `atol + rtol max(|y0|, |y1|)`.
    pub fn error_norm(&self, y0: &Vec3, rtol: f64, atol: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..3 {
            let sc = atol + rtol * y0[i].abs().max(self.y_new[i].abs());
            acc += (self.error[i] / sc).powi(2);
        }
        (acc / 3.0).sqrt()
    }
}

pub fn dopri_step(f: &impl Fn(f64, &Vec3) -> Vec3, t: f64, y: &Vec3, k1: &Vec3, h: f64) -> Step {
    let k2 = f(t + C2 * h, &axpy(y, &[(A21, k1)], h));
    let k3 = f(t + C3 * h, &axpy(y, &[(A31, k1), (A32, &k2)], h));
    let k4 = f(t + C4 * h, &axpy(y, &[(A41, k1), (A42, &k2), (A43, &k3)], h));
    let k5 = f(t + C5 * h, &axpy(y, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)], h));
    let k6 = f(t + h, &axpy(y, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h));
    let y_new = axpy(y, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)], h);
    let k7 = f(t + h, &y_new);

    let mut error = [0.0; 3];
    let mut r2 = [0.0; 3];
    let mut r3 = [0.0; 3];
    let mut r4 = [0.0; 3];
    let mut r5 = [0.0; 3];
    for i in 0..3 {
        error[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        r2[i] = y_new[i] - y[i];
        r3[i] = h * k1[i] - r2[i];
        r4[i] = r2[i] - h * k7[i] - r3[i];
        r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    Step { t0: t, h, y_new, error, f_new: k7, dense: [*y, r2, r3, r4, r5] }
}

/// Fixed-step integration, used for order verification.
pub fn integrate_fixed(f: &impl Fn(f64, &Vec3) -> Vec3, y0: Vec3, t_end: f64, steps: usize) -> Vec3 {
    let h = t_end / steps as f64;
    let mut y = y0;
    let mut t = 0.0;
    let mut k1 = f(t, &y);
    for _ in 0..steps {
        let s = dopri_step(f, t, &y, &k1, h);
        y = s.y_new;
        k1 = s.f_new;
        t += h;
    }
    y
}

/// Step-size factor from an error norm (order-5 controller with safety 0.9).
pub fn step_factor(err: f64) -> f64 {
    if err == 0.0 {
        5.0
    } else {
        (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(_t: f64, y: &Vec3) -> Vec3 {
        // Frozen-coefficient linear system with a rotation and a decay.
        [-0.5 * y[0] + 2.0 * y[1], -2.0 * y[0] - 0.5 * y[1], -1.3 * y[2]]
    }

    fn exact(t: f64) -> Vec3 {
        let e = (-0.5 * t).exp();
        [e * (2.0 * t).cos(), -e * (2.0 * t).sin(), (-1.3 * t).exp()]
    }

    fn err(a: &Vec3, b: &Vec3) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn convergence_order_is_five() {
        let y0 = [1.0, 0.0, 1.0];
        let e1 = err(&integrate_fixed(&linear, y0, 2.0, 20), &exact(2.0));
        let e2 = err(&integrate_fixed(&linear, y0, 2.0, 40), &exact(2.0));
        let order = (e1 / e2).log2();
        assert!(order >= 4.5, "measured order {order}");
    }

    #[test]
    fn dense_output_is_accurate() {
        let y0 = exact(0.0);
        let k1 = linear(0.0, &y0);
        let worst = |h: f64| {
            let s = dopri_step(&linear, 0.0, &y0, &k1, h);
            (0..=10)
                .map(|k| {
                    let t = h * k as f64 / 10.0;
                    err(&s.interpolate(t), &exact(t))
                })
                .fold(0.0, f64::max)
        };
        assert!(worst(0.05) < 1e-8);
        // Local error of a fourth-order interpolant scales like h^5.
        assert!((worst(0.05) / worst(0.025)).log2() > 4.0);
        let s = dopri_step(&linear, 0.0, &y0, &k1, 0.05);
        assert_eq!(s.interpolate(0.0), y0);
        assert!(err(&s.interpolate(0.05), &s.y_new) < 1e-15);
    }
}
