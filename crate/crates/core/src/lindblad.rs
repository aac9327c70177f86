//! Numerical reference for the LZS spectrum: the driven, damped two-level
//! system integrated directly as optical Bloch equations.
//!
//! With `H = Ω/2 σx + (δ + A cos ωt)/2 σz`, population decay `1/T1` and total
//! coherence decay `1/T2` (pure dephasing `1/T2 − 1/(2T1)`), the Bloch vector
//! obeys
//!
//! ```text
//! u' = −D v − u/T2
//! v' =  D u − Ω w − v/T2
//! w' =  Ω v − (w + 1)/T1,      D = δ + A cos ωt
//! ```
//!
//! The excited population `(1 + w)/2` is averaged over whole drive periods
//! once the period-to-period change has settled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::LzsParams;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OracleControls {
    pub rtol: f64,
    pub atol: f64,
    /// Absolute change of the period-averaged relative emission that counts as steady.
    pub steady_tol: f64,
    pub min_periods: usize,
    pub max_periods: usize,
    pub max_steps: usize,
}

impl Default for OracleControls {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            steady_tol: 1e-6,
            min_periods: 4,
            max_periods: 2000,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    /// Excited population averaged over one drive period in steady state.
    pub excited_population: f64,
    /// `2 ×` the population, on the same scale as the sideband formula with `C0 = 1`.
    pub relative_emission: f64,
    pub periods: usize,
}

struct Bloch {
    rabi: f64,
    detuning: f64,
    amp: f64,
    drive: f64,
    g1: f64,
    g2: f64,
}

impl Bloch {
    /// State: `[u, v, w, ∫ρ_ee dt]`.
    fn rhs(&self, t: f64, y: &[f64; 4]) -> [f64; 4] {
        let d = self.detuning + self.amp * (self.drive * t).cos();
        let [u, v, w, _] = *y;
        [
            -d * v - self.g2 * u,
            d * u - self.rabi * w - self.g2 * v,
            self.rabi * v - self.g1 * (w + 1.0),
            0.5 * (1.0 + w),
        ]
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Dormand-Prince 5(4) step; returns the new state and the error norm.
fn dp45_step(sys: &Bloch, t: f64, y: &[f64; 4], h: f64, ctl: &OracleControls) -> ([f64; 4], f64) {
    let mut k = [[0.0; 4]; 7];
    k[0] = sys.rhs(t, y);
    for s in 1..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..4 {
                    ys[i] += h * a * kj[i];
                }
            }
        }
        k[s] = sys.rhs(t + C[s] * h, &ys);
    }
    let mut out = *y;
    for (j, kj) in k.iter().enumerate().take(6) {
        for i in 0..4 {
            out[i] += h * A[6][j] * kj[i];
        }
    }
    let mut err = 0.0f64;
    // The running integral is excluded from error control; it is as smooth as w.
    for i in 0..3 {
        let e: f64 = (0..7).map(|j| E[j] * k[j][i]).sum::<f64>() * h;
        let sc = ctl.atol + ctl.rtol * y[i].abs().max(out[i].abs());
        err = err.max((e / sc).abs());
    }
    (out, err)
}

/// Integrates from `t0` to exactly `t1`, adapting the step.
fn integrate(
    sys: &Bloch,
    t0: f64,
    t1: f64,
    y: &mut [f64; 4],
    h: &mut f64,
    steps: &mut usize,
    ctl: &OracleControls,
) -> Result<()> {
    let mut t = t0;
    while t < t1 {
        if *steps >= ctl.max_steps {
            return Err(Error::NonConvergence(format!(
                "Bloch integration exceeded {} steps",
                ctl.max_steps
            )));
        }
        let last = t + *h >= t1;
        let step = if last { t1 - t } else { *h };
        let (next, err) = dp45_step(sys, t, y, step, ctl);
        *steps += 1;
        if err <= 1.0 {
            t = if last { t1 } else { t + step };
            *y = next;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        if !(last && err <= 1.0) {
            *h = step * factor;
        }
    }
    Ok(())
}

/// Period-averaged steady-state emission at laser detuning `f` (Hz).
pub fn lzs_lindblad_oracle(f: f64, p: &LzsParams, ctl: &OracleControls) -> Result<OracleResult> {
    // Internal units: nanoseconds and rad/ns.
    let two_pi = 2.0 * std::f64::consts::PI;
    let to_ang = |hz: f64| two_pi * hz * 1e-9;
    if !(p.drive > 0.0 && p.t1 > 0.0 && p.t2 > 0.0) {
        return Err(Error::InvalidParameter(
            "oracle needs positive drive frequency, T1 and T2".into(),
        ));
    }
    let sys = Bloch {
        rabi: to_ang(p.rabi),
        detuning: to_ang(f),
        amp: to_ang(p.stark_amplitude),
        drive: to_ang(p.drive),
        g1: 1.0 / (p.t1 * 1e9),
        g2: 1.0 / (p.t2 * 1e9),
    };
    let period = two_pi / sys.drive;
    let mut y = [0.0, 0.0, -1.0, 0.0];
    let mut h = period / 200.0;
    let mut steps = 0;
    let mut prev: Option<f64> = None;
    for n in 0..ctl.max_periods {
        let t0 = n as f64 * period;
        y[3] = 0.0;
        integrate(&sys, t0, t0 + period, &mut y, &mut h, &mut steps, ctl)?;
        let pop = y[3] / period;
        if let Some(last) = prev {
            if n + 1 >= ctl.min_periods && (2.0 * (pop - last)).abs() < ctl.steady_tol {
                return Ok(OracleResult {
                    excited_population: pop,
                    relative_emission: 2.0 * pop,
                    periods: n + 1,
                });
            }
        }
        prev = Some(pop);
    }
    Err(Error::NonConvergence(format!(
        "period average not steady after {} drive periods",
        ctl.max_periods
    )))
}
