//! Pipe and radiator physics.
//!
//! Pressure drop uses the Blasius friction factor for smooth turbulent pipes
//! with a 30% singular-loss surcharge; heat loss uses the buried-pipe thermal
//! resistance of insulation plus ground. Radiators follow the characteristic
//! equation with Chen's cube-root LMTD approximation.
//!
//! All solver-facing forms replace |q| with sqrt(q^2 + Q_EPS^2) so residuals
//! and Jacobians stay defined through q = 0 and flow reversal.

use crate::error::{HeatNetError, Result};
use crate::network::{ConsumerSpec, GlobalParams};

/// Flow smoothing floor, m^3/s.
pub const Q_EPS: f64 = 1e-9;
/// Diameter floor for relaxed designs, m.
pub const D_EPS: f64 = 1e-4;
/// Fraction of the infinite-flow radiator limit a control valve can reach.
pub const SAT_FACTOR: f64 = 0.9;
/// Width of the smooth positive clamp on temperature differences, K.
pub const TEMP_CLAMP: f64 = 1e-3;
/// Singular pressure losses add 30% on top of distributed friction.
pub const SINGULAR_LOSS_FACTOR: f64 = 100.0 / 70.0;

/// Smoothed |q| and its derivative.
#[inline]
pub(crate) fn abs_eps(q: f64) -> (f64, f64) {
    let a = (q * q + Q_EPS * Q_EPS).sqrt();
    (a, q / a)
}

/// Smooth max(x, 0) with width `w`; returns (value, dvalue/dx).
#[inline]
pub(crate) fn pos_smooth(x: f64, w: f64) -> (f64, f64) {
    let s = (x * x + w * w).sqrt();
    (0.5 * (x + s), 0.5 * (1.0 + x / s))
}

/// Smooth min(a, b) with width `w`; returns (value, d/da, d/db).
#[inline]
pub(crate) fn smooth_min(a: f64, b: f64, w: f64) -> (f64, f64, f64) {
    let d = a - b;
    let s = (d * d + w * w).sqrt();
    (0.5 * (a + b - s), 0.5 * (1.0 - d / s), 0.5 * (1.0 + d / s))
}

pub(crate) struct PipeDrop {
    pub value: f64,
    pub d_q: f64,
    pub d_d: f64,
}

/// Smoothed momentum drop along a pipe, Pa, odd in q.
///
/// Blasius governs the turbulent regime; at low Reynolds numbers (thin or
/// nearly stagnant pipes, where Blasius is singular and wrong anyway) the
/// laminar law takes over through a 4-norm blend of the two magnitudes. The
/// laminar term is linear in q, which keeps the Jacobian well conditioned
/// as relaxed diameters approach zero. In the turbulent regime the blend
/// perturbs Blasius by under 1e-6 relative.
pub(crate) fn pipe_drop_smooth(q: f64, d: f64, length: f64, p: &GlobalParams) -> PipeDrop {
    let (aq, daq) = abs_eps(q);
    // Turbulent magnitude: (100/70) 0.3164 Re^(-1/4) (8 rho L / (d^5 pi^2)) |q|^2.
    let re_coef = 4.0 * p.rho / (std::f64::consts::PI * p.mu_visc);
    let c_turb = SINGULAR_LOSS_FACTOR
        * 0.3164
        * re_coef.powf(-0.25)
        * 8.0
        * p.rho
        * length
        / (std::f64::consts::PI * std::f64::consts::PI);
    let t = c_turb * aq.powf(1.75) * d.powf(-19.0 / 4.0);
    let t_q = 1.75 * t / aq * daq;
    let t_d = -(19.0 / 4.0) * t / d;
    // Laminar magnitude: (100/70) 128 mu L |q| / (pi d^4).
    let c_lam = SINGULAR_LOSS_FACTOR * 128.0 * p.mu_visc * length / std::f64::consts::PI;
    let l = c_lam * aq * d.powf(-4.0);
    let l_q = c_lam * daq * d.powf(-4.0);
    let l_d = -4.0 * l / d;
    // Magnitude blend and sign restoration.
    let m4 = l.powi(4) + t.powi(4);
    let m = m4.powf(0.25);
    let (m_q, m_d) = if m > 0.0 {
        let inv = 1.0 / (m * m * m);
        (
            inv * (l.powi(3) * l_q + t.powi(3) * t_q),
            inv * (l.powi(3) * l_d + t.powi(3) * t_d),
        )
    } else {
        (0.0, 0.0)
    };
    let sign = q / aq;
    let sign_q = (Q_EPS * Q_EPS) / (aq * aq * aq);
    PipeDrop {
        value: m * sign,
        d_q: m_q * sign + m * sign_q,
        d_d: m_d * sign,
    }
}

/// Thermal resistance of a buried pipe per unit length, m K / W.
pub(crate) fn thermal_resistance(d: f64, p: &GlobalParams) -> Result<(f64, f64)> {
    let arg = 4.0 * p.pipe_depth / (p.insul_ratio * d);
    if arg <= 1.0 {
        return Err(HeatNetError::InvalidParam {
            name: "diameter",
            reason: format!(
                "d = {d} m invalidates the buried-pipe formula (requires d < {})",
                4.0 * p.pipe_depth / p.insul_ratio
            ),
        });
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let u = arg.ln() / (two_pi * p.lambda_ground) + p.insul_ratio.ln() / (two_pi * p.lambda_insul);
    let du_dd = -1.0 / (two_pi * p.lambda_ground * d);
    Ok((u, du_dd))
}

pub(crate) struct PipeDecay {
    /// exp(-L / (rho c_p |q| U))
    pub value: f64,
    pub d_q: f64,
    pub d_d: f64,
}

pub(crate) fn pipe_decay_smooth(q: f64, d: f64, length: f64, p: &GlobalParams) -> Result<PipeDecay> {
    let (aq, daq) = abs_eps(q);
    let (u, du_dd) = thermal_resistance(d, p)?;
    let tau = length / (p.rho * p.c_p * aq * u);
    let value = (-tau).exp();
    let dtau_dq = -tau / aq * daq;
    let dtau_dd = -tau / u * du_dd;
    Ok(PipeDecay { value, d_q: -value * dtau_dq, d_d: -value * dtau_dd })
}

/// Chen's LMTD approximation, smooth-clamped for solver internals.
/// Returns (value, d/da, d/db).
pub(crate) fn lmtd_smooth(a: f64, b: f64) -> (f64, f64, f64) {
    let (pa, dpa) = pos_smooth(a, TEMP_CLAMP);
    let (pb, dpb) = pos_smooth(b, TEMP_CLAMP);
    let m = pa * pb * (pa + pb) / 2.0;
    let v = m.cbrt();
    let dv_dm = 1.0 / (3.0 * v * v).max(f64::MIN_POSITIVE);
    let dm_dpa = pb * (2.0 * pa + pb) / 2.0;
    let dm_dpb = pa * (2.0 * pb + pa) / 2.0;
    (v, dv_dm * dm_dpa * dpa, dv_dm * dm_dpb * dpb)
}

/// Control-valve target heat: what an ideal valve delivers given the feed
/// temperature. min(demand, SAT_FACTOR * radiator limit), smoothed, floored
/// just above zero so the closure stays solvable for any feed temperature.
/// Returns (value, d/d theta_feed).
pub(crate) fn valve_target_heat_raw(
    theta_feed: f64,
    demand: f64,
    heater_coef: f64,
    heater_exp: f64,
    theta_house: f64,
) -> (f64, f64) {
    let (dt, ddt) = pos_smooth(theta_feed - theta_house, TEMP_CLAMP);
    let qmax = SAT_FACTOR * heater_coef * dt.powf(heater_exp);
    let dqmax = SAT_FACTOR * heater_coef * heater_exp * dt.powf(heater_exp - 1.0) * ddt;
    let width = (1e-4 * demand).max(0.01);
    let (raw, _, draw_dqmax) = smooth_min(demand, qmax, width);
    let (v, dv) = pos_smooth(raw, 0.01);
    (v, dv * draw_dqmax * dqmax)
}

#[cfg(test)]
pub(crate) fn valve_target_heat(theta_feed: f64, spec: &ConsumerSpec) -> (f64, f64) {
    valve_target_heat_raw(
        theta_feed,
        spec.demand,
        spec.heater_coef,
        spec.heater_exp,
        spec.theta_house,
    )
}

/// Pressure drop along a pipe, Pa. Odd in `q`; the smoothing floor makes
/// the value exactly representable as 0 only at q = 0.
pub fn pipe_pressure_drop(q: f64, d: f64, length: f64, params: &GlobalParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(HeatNetError::DiameterBounds { value: d, max: params.d_max });
    }
    Ok(pipe_drop_smooth(q, d, length, params).value)
}

/// Outlet temperature (K above ambient) of a pipe carrying `q` at inlet
/// temperature `theta_in`.
pub fn pipe_outlet_temperature(
    theta_in: f64,
    q: f64,
    d: f64,
    length: f64,
    params: &GlobalParams,
) -> Result<f64> {
    if !(d > 0.0) {
        return Err(HeatNetError::DiameterBounds { value: d, max: params.d_max });
    }
    Ok(theta_in * pipe_decay_smooth(q, d, length, params)?.value)
}

/// Chen's approximation of the log-mean temperature difference.
pub fn lmtd_chen(delta_a: f64, delta_b: f64) -> Result<f64> {
    if !(delta_a > 0.0) || !(delta_b > 0.0) {
        return Err(HeatNetError::NonpositiveLmtd(delta_a, delta_b));
    }
    Ok((delta_a * delta_b * (delta_a + delta_b) / 2.0).cbrt())
}

/// Radiator heat output, W, from feed/return temperatures (K above ambient).
pub fn radiator_heat(theta_feed: f64, theta_ret: f64, spec: &ConsumerSpec) -> Result<f64> {
    if !(theta_feed > theta_ret && theta_ret > spec.theta_house) {
        return Err(HeatNetError::TemperatureOrdering {
            feed: theta_feed,
            ret: theta_ret,
            house: spec.theta_house,
        });
    }
    let lm = lmtd_chen(theta_feed - spec.theta_house, theta_ret - spec.theta_house)?;
    Ok(spec.heater_coef * lm.powf(spec.heater_exp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::GlobalParams;
    use proptest::prelude::*;

    fn params() -> GlobalParams {
        GlobalParams::default()
    }

    #[test]
    fn pressure_drop_zero_flow_is_zero() {
        let dp = pipe_pressure_drop(0.0, 0.1, 100.0, &params()).unwrap();
        assert_eq!(dp, 0.0);
    }

    #[test]
    fn pressure_drop_matches_scalar_oracle() {
        // Independent evaluation: Re = 4*975*0.005/(pi*4e-4*0.1) = 1.5517e5,
        // f = 0.3164*Re^-0.25 = 1.5942e-2,
        // dp = (100/70)*f*(8*975*100/(0.1^5*pi^2))*0.005^2 = 4.4999e3 Pa.
        let p = params();
        let re = 4.0 * p.rho * 0.005 / (std::f64::consts::PI * p.mu_visc * 0.1);
        assert!((re - 1.55e5).abs() / 1.55e5 < 5e-3, "re = {re}");
        let f = 0.3164 * re.powf(-0.25);
        let expected = SINGULAR_LOSS_FACTOR * f * 8.0 * p.rho * 100.0
            / (0.1f64.powi(5) * std::f64::consts::PI.powi(2))
            * 0.005
            * 0.005;
        let dp = pipe_pressure_drop(0.005, 0.1, 100.0, &p).unwrap();
        // The laminar blend is sub-ppm at this Reynolds number.
        assert!((dp - expected).abs() / expected < 1e-6);
        assert!((dp - 4.5e3).abs() / 4.5e3 < 2e-3, "dp = {dp}");
    }

    #[test]
    fn pressure_drop_rejects_nonpositive_diameter() {
        assert!(pipe_pressure_drop(0.005, 0.0, 100.0, &params()).is_err());
        assert!(pipe_pressure_drop(0.005, -0.1, 100.0, &params()).is_err());
    }

    #[test]
    fn outlet_temperature_zero_length_identity() {
        let t = pipe_outlet_temperature(50.0, 0.005, 0.1, 0.0, &params()).unwrap();
        assert!((t - 50.0).abs() < 1e-12);
    }

    #[test]
    fn outlet_temperature_matches_scalar_oracle() {
        // U = ln(4*0.4/(1.4*0.1))/(2 pi 1.4) + ln(1.4)/(2 pi 0.03) = 2.0620 mK/W,
        // theta_out = 50 exp(-100/(975*4190*0.005*U)) = 49.8814 K.
        let p = params();
        let (u, _) = thermal_resistance(0.1, &p).unwrap();
        assert!((u - 2.062).abs() < 1e-3, "u = {u}");
        let expected = 50.0 * (-100.0 / (p.rho * p.c_p * 0.005 * u)).exp();
        let t = pipe_outlet_temperature(50.0, 0.005, 0.1, 100.0, &p).unwrap();
        assert!((t - expected).abs() < 1e-9);
        assert!((t - 49.88).abs() < 5e-3, "t = {t}");
    }

    #[test]
    fn outlet_temperature_rejects_oversized_diameter() {
        // Buried-pipe formula breaks for d >= 4h/r = 1.1428 m.
        let err = pipe_outlet_temperature(50.0, 0.005, 1.2, 100.0, &params());
        assert!(err.is_err());
    }

    #[test]
    fn outlet_temperature_monotone_in_flow() {
        let p = params();
        let mut last = 0.0;
        for i in 1..=20 {
            let q = 1e-4 * i as f64;
            let t = pipe_outlet_temperature(50.0, q, 0.1, 100.0, &p).unwrap();
            assert!(t > last, "theta_out not increasing at q = {q}");
            last = t;
        }
    }

    #[test]
    fn lmtd_matches_cube_root_oracle() {
        let v = lmtd_chen(30.0, 20.0).unwrap();
        let expected = (30.0f64 * 20.0 * 25.0).cbrt();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 24.66).abs() < 1e-2);
    }

    #[test]
    fn lmtd_rejects_nonpositive() {
        assert!(lmtd_chen(0.0, 10.0).is_err());
        assert!(lmtd_chen(10.0, -1.0).is_err());
    }

    #[test]
    fn radiator_matches_scalar_oracle() {
        // 200 * lmtd(30, 20)^1.2 = 9.3685 kW with theta_house = 10.
        let spec = ConsumerSpec {
            demand: 15_000.0,
            heater_coef: 200.0,
            heater_exp: 1.2,
            theta_house: 10.0,
        };
        let q = radiator_heat(40.0, 30.0, &spec).unwrap();
        let expected = 200.0 * lmtd_chen(30.0, 20.0).unwrap().powf(1.2);
        assert!((q - expected).abs() < 1e-9);
        assert!((q - 9370.0).abs() < 20.0, "q = {q}");
    }

    #[test]
    fn radiator_linear_exponent_is_exact_lmtd() {
        let spec = ConsumerSpec {
            demand: 15_000.0,
            heater_coef: 200.0,
            heater_exp: 1.0,
            theta_house: 10.0,
        };
        let q = radiator_heat(40.0, 30.0, &spec).unwrap();
        assert!((q - 200.0 * lmtd_chen(30.0, 20.0).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn radiator_rejects_bad_ordering() {
        let spec = ConsumerSpec {
            demand: 15_000.0,
            heater_coef: 200.0,
            heater_exp: 1.2,
            theta_house: 10.0,
        };
        assert!(radiator_heat(30.0, 40.0, &spec).is_err());
        assert!(radiator_heat(40.0, 5.0, &spec).is_err());
    }

    #[test]
    fn valve_target_caps_at_saturation() {
        let spec = ConsumerSpec {
            demand: 15_000.0,
            heater_coef: 200.0,
            heater_exp: 1.2,
            theta_house: 10.0,
        };
        // Hot feed: target equals demand.
        let (q_hot, _) = valve_target_heat(55.0, &spec);
        assert!((q_hot - 15_000.0).abs() / 15_000.0 < 1e-3, "q_hot = {q_hot}");
        // Cold feed: target well below demand, still positive.
        let (q_cold, _) = valve_target_heat(25.0, &spec);
        assert!(q_cold < 0.7 * 15_000.0);
        assert!(q_cold > 0.0);
    }

    #[test]
    fn smooth_helpers_derivatives_match_fd() {
        let h = 1e-7;
        for &x in &[-2.0, -0.1, 0.0, 0.3, 5.0] {
            let (_, d) = pos_smooth(x, 0.01);
            let fd = (pos_smooth(x + h, 0.01).0 - pos_smooth(x - h, 0.01).0) / (2.0 * h);
            assert!((d - fd).abs() < 1e-6, "pos_smooth' at {x}");
        }
        let p = params();
        for &q in &[1e-4, 5e-3, -3e-3] {
            let drop = pipe_drop_smooth(q, 0.08, 50.0, &p);
            let fd = (pipe_drop_smooth(q + h, 0.08, 50.0, &p).value
                - pipe_drop_smooth(q - h, 0.08, 50.0, &p).value)
                / (2.0 * h);
            assert!(
                (drop.d_q - fd).abs() / fd.abs().max(1.0) < 1e-5,
                "pipe_drop dq at {q}: {} vs {fd}",
                drop.d_q
            );
            let hd = 1e-8;
            let fdd = (pipe_drop_smooth(q, 0.08 + hd, 50.0, &p).value
                - pipe_drop_smooth(q, 0.08 - hd, 50.0, &p).value)
                / (2.0 * hd);
            assert!((drop.d_d - fdd).abs() / fdd.abs().max(1.0) < 1e-4);
            let decay = pipe_decay_smooth(q, 0.08, 50.0, &p).unwrap();
            let fdq = (pipe_decay_smooth(q + h, 0.08, 50.0, &p).unwrap().value
                - pipe_decay_smooth(q - h, 0.08, 50.0, &p).unwrap().value)
                / (2.0 * h);
            assert!((decay.d_q - fdq).abs() < 1e-3 * fdq.abs().max(1e-6) + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn pressure_drop_is_odd(q in 1e-5f64..1e-2, d in 0.02f64..0.4, l in 1.0f64..500.0) {
            let p = params();
            let fwd = pipe_pressure_drop(q, d, l, &p).unwrap();
            let bwd = pipe_pressure_drop(-q, d, l, &p).unwrap();
            prop_assert!((fwd + bwd).abs() <= 1e-12 * fwd.abs().max(1.0));
            prop_assert!(fwd > 0.0);
        }

        #[test]
        fn lmtd_symmetric_and_bounded(a in 0.1f64..100.0, b in 0.1f64..100.0) {
            let ab = lmtd_chen(a, b).unwrap();
            let ba = lmtd_chen(b, a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12 * ab.max(1.0));
            prop_assert!(ab >= a.min(b) - 1e-9);
            prop_assert!(ab <= a.max(b) + 1e-9);
        }

        #[test]
        fn lmtd_equal_arguments_identity(d in 0.1f64..100.0) {
            let v = lmtd_chen(d, d).unwrap();
            prop_assert!((v - d).abs() < 1e-9 * d.max(1.0));
        }

        #[test]
        fn outlet_temperature_decreasing_in_length(
            q in 1e-4f64..1e-2, d in 0.02f64..0.3, l in 1.0f64..200.0,
        ) {
            let p = params();
            let short = pipe_outlet_temperature(50.0, q, d, l, &p).unwrap();
            let long = pipe_outlet_temperature(50.0, q, d, l * 2.0, &p).unwrap();
            prop_assert!(long < short);
            prop_assert!(short <= 50.0);
            prop_assert!(long > 0.0);
        }

        #[test]
        fn radiator_linear_in_coefficient(xi in 50.0f64..500.0) {
            let mk = |coef| ConsumerSpec {
                demand: 15_000.0, heater_coef: coef, heater_exp: 1.2, theta_house: 10.0,
            };
            let q1 = radiator_heat(40.0, 30.0, &mk(xi)).unwrap();
            let q2 = radiator_heat(40.0, 30.0, &mk(2.0 * xi)).unwrap();
            prop_assert!((q2 - 2.0 * q1).abs() < 1e-9 * q2.max(1.0));
        }
    }
}
