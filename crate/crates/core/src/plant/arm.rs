use nalgebra::{DMatrix, Matrix2, Vector2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{output_names, Execution, Plant, PlantFault};
use crate::error::{Error, Result};
use crate::signals::TimeSeries;

/// Physical parameters of the two-link series-elastic arm (SI units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmParams {
    pub l1: f64,
    pub l2: f64,
    pub tip_mass: f64,
    pub link_mass: [f64; 2],
    /// N·m/rad
    pub spring_stiffness: f64,
    pub continuous_torque_limit: f64,
    pub peak_torque_limit: f64,
    /// rad/s
    pub motor_speed_limit: f64,
    /// rad/s
    pub servo_bandwidth: f64,
    /// N·m·s/rad
    pub joint_damping: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        Self {
            l1: 6.25 * 0.0254,
            l2: 10.5 * 0.0254,
            tip_mass: 0.275,
            link_mass: [0.12, 0.12],
            spring_stiffness: 70.0,
            continuous_torque_limit: 4.0,
            peak_torque_limit: 7.0,
            motor_speed_limit: 32.0 * 2.0 * std::f64::consts::PI / 60.0,
            servo_bandwidth: 2.0 * std::f64::consts::PI * 5.0,
            joint_damping: 0.05,
        }
    }
}

impl ArmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.l1,
            self.l2,
            self.tip_mass,
            self.link_mass[0],
            self.link_mass[1],
            self.spring_stiffness,
            self.continuous_torque_limit,
            self.peak_torque_limit,
            self.motor_speed_limit,
            self.servo_bandwidth,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("arm parameters must be positive and finite"));
        }
        if !(self.joint_damping >= 0.0 && self.joint_damping.is_finite()) {
            return Err(Error::invalid("joint damping must be nonnegative"));
        }
        if self.peak_torque_limit < self.continuous_torque_limit {
            return Err(Error::invalid("peak torque limit below continuous limit"));
        }
        Ok(())
    }

    /// Link 2 plus the tip mass, lumped: (mass, distance of the centre of
    /// mass from joint 2, inertia about joint 2).
    fn distal(&self) -> (f64, f64, f64) {
        let m = self.link_mass[1] + self.tip_mass;
        let c = (self.link_mass[1] * 0.5 * self.l2 + self.tip_mass * self.l2) / m;
        let i = self.link_mass[1] * self.l2 * self.l2 / 3.0 + self.tip_mass * self.l2 * self.l2;
        (m, c, i)
    }

    /// Joint-space inertia matrix at elbow angle `theta2`.
    pub fn mass_matrix(&self, theta2: f64) -> Matrix2<f64> {
        let (m2, c2, i2) = self.distal();
        let i1 = self.link_mass[0] * self.l1 * self.l1 / 3.0;
        let cross = m2 * self.l1 * c2 * theta2.cos();
        let m11 = i1 + i2 + m2 * self.l1 * self.l1 + 2.0 * cross;
        let m12 = i2 + cross;
        Matrix2::new(m11, m12, m12, i2)
    }

    /// Undamped load-side natural frequencies (rad/s) with the motors held,
    /// ascending.
    pub fn natural_frequencies(&self, theta2: f64) -> [f64; 2] {
        let m = self.mass_matrix(theta2);
        let k = Matrix2::identity() * self.spring_stiffness;
        let minv = m.try_inverse().expect("mass matrix is positive definite");
        let eig = (minv * k).complex_eigenvalues();
        let mut w = [eig[0].re.sqrt(), eig[1].re.sqrt()];
        w.sort_by(f64::total_cmp);
        w
    }
}

/// Load and motor state of the arm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub theta: [f64; 2],
    pub theta_dot: [f64; 2],
    pub motor: [f64; 2],
    /// Reported, not integrated: the servo makes motor velocity a function
    /// of state and command.
    pub motor_dot: [f64; 2],
}

impl PlantState {
    pub fn at_rest(pose: [f64; 2]) -> Self {
        Self { theta: pose, theta_dot: [0.0; 2], motor: pose, motor_dot: [0.0; 2] }
    }

    fn axpy(&self, h: f64, d: &Derivative) -> Self {
        let mut s = *self;
        for i in 0..2 {
            s.theta[i] += h * d.theta_dot[i];
            s.theta_dot[i] += h * d.theta_ddot[i];
            s.motor[i] += h * d.motor_dot[i];
        }
        s
    }

    fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.theta_dot).chain(&self.motor).all(|v| v.is_finite())
    }
}

/// Time derivative of the integrated state, plus per-joint torque
/// saturation flags raised while evaluating it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Derivative {
    pub theta_dot: [f64; 2],
    pub theta_ddot: [f64; 2],
    pub motor_dot: [f64; 2],
    pub saturated: [bool; 2],
}

/// Planar two-link chain driven through springs by first-order position
/// servos:
///
/// ```text
/// M(θ)θ̈ + C(θ,θ̇)θ̇ + Dθ̇ + g(θ) = τ_s,   τ_si = clamp(k(θ_mi − θ_i), ±τ_peak)
/// θ̇_mi = clamp(ω_s(u_i − θ_mi), ±ω_max)
/// ```
///
/// `gravity` (m/s²) acts along −y in the plane of motion; zero for a
/// horizontal arm.
pub fn arm_dynamics(state: &PlantState, command: [f64; 2], params: &ArmParams, gravity: f64) -> Result<Derivative> {
    let (m2, c2, _) = params.distal();
    let [t1, t2] = state.theta;
    let [w1, w2] = state.theta_dot;
    let mut saturated = [false; 2];
    let mut tau = [0.0; 2];
    for i in 0..2 {
        let raw = params.spring_stiffness * (state.motor[i] - state.theta[i]);
        if raw.abs() > params.peak_torque_limit {
            saturated[i] = true;
        }
        tau[i] = raw.clamp(-params.peak_torque_limit, params.peak_torque_limit);
    }
    let h = m2 * params.l1 * c2 * t2.sin();
    let coriolis = Vector2::new(-h * (2.0 * w1 * w2 + w2 * w2), h * w1 * w1);
    let grav = if gravity != 0.0 {
        let m1 = params.link_mass[0];
        let g2 = m2 * c2 * gravity * (t1 + t2).cos();
        Vector2::new((m1 * 0.5 * params.l1 + m2 * params.l1) * gravity * t1.cos() + g2, g2)
    } else {
        Vector2::zeros()
    };
    let rhs = Vector2::new(tau[0], tau[1]) - coriolis - Vector2::new(w1, w2) * params.joint_damping - grav;
    let acc = params
        .mass_matrix(t2)
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("singular mass matrix"))?;
    let mut motor_dot = [0.0; 2];
    for i in 0..2 {
        motor_dot[i] = (params.servo_bandwidth * (command[i] - state.motor[i]))
            .clamp(-params.motor_speed_limit, params.motor_speed_limit);
    }
    let d = Derivative { theta_dot: [w1, w2], theta_ddot: [acc[0], acc[1]], motor_dot, saturated };
    if d.theta_ddot.iter().chain(&d.motor_dot).any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite state derivative"));
    }
    Ok(d)
}

/// Kinetic plus spring (plus gravitational) energy.
pub fn mechanical_energy(state: &PlantState, params: &ArmParams, gravity: f64) -> f64 {
    let w = Vector2::new(state.theta_dot[0], state.theta_dot[1]);
    let kinetic = 0.5 * (w.transpose() * params.mass_matrix(state.theta[1]) * w)[(0, 0)];
    let spring: f64 = (0..2)
        .map(|i| 0.5 * params.spring_stiffness * (state.motor[i] - state.theta[i]).powi(2))
        .sum();
    let potential = if gravity != 0.0 {
        let (m2, c2, _) = params.distal();
        let [t1, t2] = state.theta;
        gravity * (params.link_mass[0] * 0.5 * params.l1 * t1.sin() + m2 * (params.l1 * t1.sin() + c2 * (t1 + t2).sin()))
    } else {
        0.0
    };
    kinetic + spring + potential
}

/// Small-signal transfer matrix from motor commands to load angles about a
/// resting pose (continuous time, no rate limit):
/// `(M s² + D s + K)⁻¹ K · ω_s/(s + ω_s)`.
pub fn linearized_response(params: &ArmParams, pose: [f64; 2], omega: f64) -> DMatrix<Complex64> {
    let s = Complex64::new(0.0, omega);
    let m = params.mass_matrix(pose[1]);
    let k = params.spring_stiffness;
    let mut a = DMatrix::from_element(2, 2, Complex64::new(0.0, 0.0));
    for i in 0..2 {
        for j in 0..2 {
            a[(i, j)] = s * s * m[(i, j)];
        }
        a[(i, i)] += s * params.joint_damping + k;
    }
    let servo = params.servo_bandwidth / (s + params.servo_bandwidth);
    a.try_inverse().expect("nonsingular at finite frequency") * (servo * k)
}

/// Simulation settings around [`ArmParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeaArmConfig {
    pub params: ArmParams,
    /// Integration step (s). The stiff elbow mode sits near 60 Hz, so RK4
    /// needs a step well below 1 ms to stay energy-accurate.
    pub dt: f64,
    /// m/s² along −y; zero for a horizontal arm.
    pub gravity: f64,
    /// Standard deviation of additive output noise (rad).
    pub measurement_noise: f64,
    pub seed: u64,
    /// Spring deflection (rad) that counts as divergence.
    pub divergence_limit: f64,
}

impl Default for SeaArmConfig {
    fn default() -> Self {
        Self {
            params: ArmParams::default(),
            dt: 2e-4,
            gravity: 0.0,
            measurement_noise: 0.0,
            seed: 0,
            divergence_limit: 1.0,
        }
    }
}

/// Two-link series-elastic arm integrated with fixed-step RK4 and
/// zero-order-hold inputs. Every execution starts at rest at the pose of the
/// first command sample.
#[derive(Debug, Clone)]
pub struct SeaArm {
    config: SeaArmConfig,
    runs: u64,
}

impl SeaArm {
    pub fn new(config: SeaArmConfig) -> Result<Self> {
        config.params.validate()?;
        if !(config.dt > 0.0) || !(config.divergence_limit > 0.0) || !(config.measurement_noise >= 0.0) {
            return Err(Error::invalid("dt, divergence limit and noise level must be positive"));
        }
        Ok(Self { config, runs: 0 })
    }

    pub fn config(&self) -> &SeaArmConfig {
        &self.config
    }

    /// Integrates from `state` for `steps` RK4 steps under a constant command.
    pub fn integrate(&self, state: &mut PlantState, command: [f64; 2], steps: usize) -> Result<[bool; 2]> {
        let (p, g, h) = (&self.config.params, self.config.gravity, self.config.dt);
        let mut sat = [false; 2];
        for _ in 0..steps {
            let k1 = arm_dynamics(state, command, p, g)?;
            let k2 = arm_dynamics(&state.axpy(0.5 * h, &k1), command, p, g)?;
            let k3 = arm_dynamics(&state.axpy(0.5 * h, &k2), command, p, g)?;
            let k4 = arm_dynamics(&state.axpy(h, &k3), command, p, g)?;
            for d in [&k1, &k2, &k3, &k4] {
                sat[0] |= d.saturated[0];
                sat[1] |= d.saturated[1];
            }
            for i in 0..2 {
                state.theta[i] += h / 6.0 * (k1.theta_dot[i] + 2.0 * k2.theta_dot[i] + 2.0 * k3.theta_dot[i] + k4.theta_dot[i]);
                state.theta_dot[i] +=
                    h / 6.0 * (k1.theta_ddot[i] + 2.0 * k2.theta_ddot[i] + 2.0 * k3.theta_ddot[i] + k4.theta_ddot[i]);
                state.motor[i] += h / 6.0 * (k1.motor_dot[i] + 2.0 * k2.motor_dot[i] + 2.0 * k3.motor_dot[i] + k4.motor_dot[i]);
            }
            state.motor_dot = k4.motor_dot;
        }
        Ok(sat)
    }
}

impl Plant for SeaArm {
    fn n_inputs(&self) -> usize {
        2
    }

    fn n_outputs(&self) -> usize {
        2
    }

    fn execute(&mut self, u: &TimeSeries) -> Result<Execution> {
        if u.n_channels() < 2 {
            return Err(Error::invalid("arm needs two command channels"));
        }
        let fs = u.sample_rate();
        let steps_f = 1.0 / (fs * self.config.dt);
        let steps = steps_f.round() as usize;
        if steps == 0 || (steps_f - steps as f64).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "sample period 1/{fs} s is not a multiple of the integration step {} s",
                self.config.dt
            )));
        }
        let n = u.len();
        let (u1, u2) = (u.channel(0), u.channel(1));
        let mut state = PlantState::at_rest([u1[0], u2[0]]);
        let mut y = [Vec::with_capacity(n), Vec::with_capacity(n)];
        let mut fault = None;
        for k in 0..n {
            y[0].push(state.theta[0]);
            y[1].push(state.theta[1]);
            if k + 1 == n {
                break;
            }
            let t = u.time(k);
            let sat = match self.integrate(&mut state, [u1[k], u2[k]], steps) {
                Ok(s) => s,
                Err(_) => {
                    fault = Some(PlantFault::NonFinite { time: t });
                    break;
                }
            };
            if !state.is_finite() {
                fault = Some(PlantFault::NonFinite { time: t });
                break;
            }
            if let Some(j) = (0..2).find(|&j| (state.motor[j] - state.theta[j]).abs() > self.config.divergence_limit) {
                fault = Some(PlantFault::Divergence { time: u.time(k + 1), joint: j });
                break;
            }
            if fault.is_none() {
                if let Some(j) = (0..2).find(|&j| sat[j]) {
                    fault = Some(PlantFault::TorqueSaturation { time: t, joint: j });
                }
            }
        }
        if self.config.measurement_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(self.runs);
            let normal = Normal::new(0.0, self.config.measurement_noise).expect("valid sigma");
            for ch in y.iter_mut() {
                for v in ch.iter_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
        }
        self.runs += 1;
        let [y1, y2] = y;
        let output = TimeSeries::new(fs, u.start_time(), output_names(2), vec![y1, y2])?;
        Ok(Execution { output, fault })
    }
}
