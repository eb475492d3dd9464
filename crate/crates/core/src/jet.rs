//! Truncated Taylor series in x with a first-order t channel.
//!
//! A [`Jet`] carries the coefficients `c[k] = (d^k z / dx^k) / k!` of some
//! quantity `z(x, t)` up to [`MAX_DEGREE`], plus `t = dz/dt`. Pushing input
//! jets through arithmetic and `sin` yields exact derivatives of whatever
//! was computed, which is how spatial derivatives and `u_t` are read off a
//! trained network without any finite differencing.
//!
//! All ops take an explicit `deg`; lanes above it are left at zero so the
//! fixed-width arrays stay cheap when only low orders are needed.

use crate::math;

/// Highest x-derivative order a jet can carry.
pub const MAX_DEGREE: usize = 6;

const WIDTH: usize = MAX_DEGREE + 1;

const FACTORIAL: [f64; WIDTH] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    /// Taylor coefficients in x: `c[k] = z^(k) / k!`.
    pub c: [f64; WIDTH],
    /// First derivative of the value with respect to t.
    pub t: f64,
}

impl Jet {
    pub const ZERO: Jet = Jet { c: [0.0; WIDTH], t: 0.0 };

    pub fn constant(v: f64) -> Jet {
        let mut c = [0.0; WIDTH];
        c[0] = v;
        Jet { c, t: 0.0 }
    }

    /// The coordinate x itself, seeded as an input.
    pub fn x_at(x: f64) -> Jet {
        let mut c = [0.0; WIDTH];
        c[0] = x;
        c[1] = 1.0;
        Jet { c, t: 0.0 }
    }

    /// The coordinate t itself, seeded as an input.
    pub fn t_at(t: f64) -> Jet {
        let mut c = [0.0; WIDTH];
        c[0] = t;
        Jet { c, t: 1.0 }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.c[0]
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t
    }

    /// `d^k z / dx^k`, recovered from the stored coefficient.
    #[inline]
    pub fn derivative(&self, k: usize) -> f64 {
        self.c[k] * FACTORIAL[k]
    }

    /// k!, the factor between Taylor lane k and the k-th derivative.
    #[inline]
    pub fn lane_scale(k: usize) -> f64 {
        FACTORIAL[k]
    }

    #[inline]
    pub fn add(&self, o: &Jet) -> Jet {
        let mut c = [0.0; WIDTH];
        for k in 0..WIDTH {
            c[k] = self.c[k] + o.c[k];
        }
        Jet { c, t: self.t + o.t }
    }

    #[inline]
    pub fn sub(&self, o: &Jet) -> Jet {
        let mut c = [0.0; WIDTH];
        for k in 0..WIDTH {
            c[k] = self.c[k] - o.c[k];
        }
        Jet { c, t: self.t - o.t }
    }

    #[inline]
    pub fn scale(&self, s: f64) -> Jet {
        let mut c = [0.0; WIDTH];
        for k in 0..WIDTH {
            c[k] = self.c[k] * s;
        }
        Jet { c, t: self.t * s }
    }

    #[inline]
    pub fn axpy(&mut self, s: f64, o: &Jet) {
        for k in 0..WIDTH {
            self.c[k] += s * o.c[k];
        }
        self.t += s * o.t;
    }

    /// Cauchy product truncated at `deg`. The t channel follows the
    /// product rule on values: `(ab)_t = a_t b + a b_t`.
    pub fn mul(&self, o: &Jet, deg: usize) -> Jet {
        debug_assert!(deg <= MAX_DEGREE);
        let mut c = [0.0; WIDTH];
        for k in 0..=deg {
            let mut acc = 0.0;
            for j in 0..=k {
                acc += self.c[j] * o.c[k - j];
            }
            c[k] = acc;
        }
        Jet { c, t: self.t * o.c[0] + self.c[0] * o.t }
    }

    /// Sine and cosine of the jet, via the coupled recurrence
    /// `k s_k = sum_{j=1..k} j a_j c_{k-j}` and
    /// `k c_k = -sum_{j=1..k} j a_j s_{k-j}`.
    pub fn sin_cos(&self, deg: usize) -> (Jet, Jet) {
        debug_assert!(deg <= MAX_DEGREE);
        let a = &self.c;
        let mut s = [0.0; WIDTH];
        let mut c = [0.0; WIDTH];
        s[0] = math::sin(a[0]);
        c[0] = math::cos(a[0]);
        for k in 1..=deg {
            let mut sk = 0.0;
            let mut ck = 0.0;
            for j in 1..=k {
                let ja = j as f64 * a[j];
                sk += ja * c[k - j];
                ck -= ja * s[k - j];
            }
            s[k] = sk / k as f64;
            c[k] = ck / k as f64;
        }
        let st = c[0] * self.t;
        let ct = -s[0] * self.t;
        (Jet { c: s, t: st }, Jet { c: c, t: ct })
    }
}

/// Accumulates into `abar`/`bbar` the adjoints of `z = a.mul(b, deg)`
/// given the adjoint `zbar` of `z`.
pub fn backprop_mul(zbar: &Jet, a: &Jet, b: &Jet, deg: usize, abar: &mut Jet, bbar: &mut Jet) {
    for k in 0..=deg {
        let zk = zbar.c[k];
        if zk == 0.0 {
            continue;
        }
        for j in 0..=k {
            abar.c[j] += zk * b.c[k - j];
            bbar.c[k - j] += zk * a.c[j];
        }
    }
    // z_t = a_t b_0 + a_0 b_t
    abar.t += zbar.t * b.c[0];
    bbar.c[0] += zbar.t * a.t;
    bbar.t += zbar.t * a.c[0];
    abar.c[0] += zbar.t * b.t;
}

/// Accumulates into `abar` the adjoint of `(s, _) = a.sin_cos(deg)` given
/// the adjoint `sbar` of the sine jet. The stored forward jets `s` and `c`
/// are needed to reverse the recurrence; the cosine jet is treated as
/// internal (nothing downstream consumes it directly).
pub fn backprop_sin(sbar: &Jet, a: &Jet, s: &Jet, c: &Jet, deg: usize, abar: &mut Jet) {
    debug_assert!(deg <= MAX_DEGREE);
    let mut sh = [0.0; WIDTH];
    let mut ch = [0.0; WIDTH];
    sh[..=deg].copy_from_slice(&sbar.c[..=deg]);
    // t channel first: s_t = c_0 a_t pushes adjoint into c_0 before the
    // order-0 closeout below.
    abar.t += c.c[0] * sbar.t;
    ch[0] += a.t * sbar.t;
    for k in (1..=deg).rev() {
        let (sk, ck) = (sh[k], ch[k]);
        if sk == 0.0 && ck == 0.0 {
            continue;
        }
        let inv = 1.0 / k as f64;
        for j in 1..=k {
            let w = j as f64 * inv;
            // s_k took + (j/k) a_j c_{k-j}; c_k took - (j/k) a_j s_{k-j}.
            abar.c[j] += w * (sk * c.c[k - j] - ck * s.c[k - j]);
            ch[k - j] += w * sk * a.c[j];
            sh[k - j] -= w * ck * a.c[j];
        }
    }
    abar.c[0] += sh[0] * c.c[0] - ch[0] * s.c[0];
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sine_jet_matches_analytic_derivatives() {
        let x = 0.7;
        let (s, c) = Jet::x_at(x).sin_cos(MAX_DEGREE);
        // d^k sin cycles sin, cos, -sin, -cos.
        let cycle = [x.sin(), x.cos(), -x.sin(), -x.cos()];
        for k in 0..=MAX_DEGREE {
            assert_relative_eq!(s.derivative(k), cycle[k % 4], max_relative = 1e-13);
            assert_relative_eq!(c.derivative(k), cycle[(k + 1) % 4], max_relative = 1e-13);
        }
    }

    #[test]
    fn sine_jet_at_zero() {
        let (s, _) = Jet::x_at(0.0).sin_cos(3);
        assert_eq!(s.derivative(0), 0.0);
        assert_eq!(s.derivative(1), 1.0);
        assert_eq!(s.derivative(2), 0.0);
        assert_eq!(s.derivative(3), -1.0);
    }

    #[test]
    fn product_matches_leibniz() {
        // z = x^2 sin(x): z''' = 6 cos - 6 x sin - x^2 cos ... just compare
        // against the closed forms term by term.
        let x = 1.3_f64;
        let xj = Jet::x_at(x);
        let x2 = xj.mul(&xj, MAX_DEGREE);
        let (s, _) = xj.sin_cos(MAX_DEGREE);
        let z = x2.mul(&s, MAX_DEGREE);
        let sin = x.sin();
        let cos = x.cos();
        assert_relative_eq!(z.derivative(0), x * x * sin, max_relative = 1e-13);
        assert_relative_eq!(z.derivative(1), 2.0 * x * sin + x * x * cos, max_relative = 1e-13);
        assert_relative_eq!(
            z.derivative(2),
            2.0 * sin + 4.0 * x * cos - x * x * sin,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            z.derivative(3),
            6.0 * cos - 6.0 * x * sin - x * x * cos,
            max_relative = 1e-12
        );
    }

    #[test]
    fn truncation_leaves_high_lanes_zero() {
        let xj = Jet::x_at(0.4);
        let z = xj.mul(&xj, 2);
        assert_eq!(z.c[3], 0.0);
        assert_eq!(z.c[6], 0.0);
    }

    #[test]
    fn t_channel_tracks_travelling_wave() {
        // z = sin(a x + b t): dz/dt = b cos(a x + b t), checked against the
        // x-derivative a cos(.) carried by the same jet.
        let (a, b) = (1.7, -0.6);
        let (x, t) = (0.3, 0.9);
        let arg = Jet::x_at(x).scale(a).add(&Jet::t_at(t).scale(b));
        let (s, _) = arg.sin_cos(4);
        let cos = (a * x + b * t).cos();
        assert_relative_eq!(s.dt(), b * cos, max_relative = 1e-13);
        assert_relative_eq!(s.derivative(1), a * cos, max_relative = 1e-13);
    }

    // Treats every entry of the input jets as an independent variable and
    // checks the hand-written adjoints against central finite differences
    // of a scalar readout.
    fn readout(z: &Jet, w: &[f64; WIDTH], wt: f64) -> f64 {
        let mut acc = z.t * wt;
        for k in 0..WIDTH {
            acc += w[k] * z.c[k];
        }
        acc
    }

    #[test]
    fn mul_adjoint_matches_finite_differences() {
        let deg = 4;
        let mut a = Jet::x_at(0.8);
        let mut b = Jet::constant(0.3);
        for k in 0..WIDTH {
            a.c[k] += 0.1 * (k as f64 + 1.0);
            b.c[k] -= 0.07 * (k as f64 + 2.0);
        }
        a.t = 0.5;
        b.t = -0.2;
        let w = [0.3, -1.1, 0.7, 0.2, -0.4, 0.0, 0.0];
        let wt = 0.9;

        let zbar = Jet { c: w, t: wt };
        let mut abar = Jet::ZERO;
        let mut bbar = Jet::ZERO;
        backprop_mul(&zbar, &a, &b, deg, &mut abar, &mut bbar);

        let h = 1e-6;
        let loss = |a: &Jet, b: &Jet| readout(&a.mul(b, deg), &w, wt);
        for k in 0..=deg {
            let mut ap = a;
            let mut am = a;
            ap.c[k] += h;
            am.c[k] -= h;
            let fd = (loss(&ap, &b) - loss(&am, &b)) / (2.0 * h);
            assert_relative_eq!(abar.c[k], fd, max_relative = 1e-7, epsilon = 1e-9);

            let mut bp = b;
            let mut bm = b;
            bp.c[k] += h;
            bm.c[k] -= h;
            let fd = (loss(&a, &bp) - loss(&a, &bm)) / (2.0 * h);
            assert_relative_eq!(bbar.c[k], fd, max_relative = 1e-7, epsilon = 1e-9);
        }
        let mut ap = a;
        let mut am = a;
        ap.t += h;
        am.t -= h;
        let fd = (loss(&ap, &b) - loss(&am, &b)) / (2.0 * h);
        assert_relative_eq!(abar.t, fd, max_relative = 1e-7, epsilon = 1e-9);
    }

    #[test]
    fn sin_adjoint_matches_finite_differences() {
        let deg = 5;
        let mut a = Jet::x_at(0.6);
        for k in 0..WIDTH {
            a.c[k] += 0.05 * (k as f64) - 0.2;
        }
        a.t = 0.7;
        let w = [0.4, 0.9, -0.3, 1.2, -0.8, 0.5, 0.0];
        let wt = -1.3;

        let sbar = Jet { c: w, t: wt };
        let (s, c) = a.sin_cos(deg);
        let mut abar = Jet::ZERO;
        backprop_sin(&sbar, &a, &s, &c, deg, &mut abar);

        let h = 1e-6;
        let loss = |a: &Jet| readout(&a.sin_cos(deg).0, &w, wt);
        for k in 0..=deg {
            let mut ap = a;
            let mut am = a;
            ap.c[k] += h;
            am.c[k] -= h;
            let fd = (loss(&ap) - loss(&am)) / (2.0 * h);
            assert_relative_eq!(abar.c[k], fd, max_relative = 1e-6, epsilon = 1e-9);
        }
        let mut ap = a;
        let mut am = a;
        ap.t += h;
        am.t -= h;
        let fd = (loss(&ap) - loss(&am)) / (2.0 * h);
        assert_relative_eq!(abar.t, fd, max_relative = 1e-7, epsilon = 1e-9);
    }
}
