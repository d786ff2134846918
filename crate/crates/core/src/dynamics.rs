//! Discrete-time vehicle models.

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Discrete-time system `x' = F(x, u)`.
pub trait Dynamics<T: Real> {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Writes `F(x, u)` into `next`. Controls are clamped to the model limits.
    fn step_into(&self, x: &[T], u: &[T], next: &mut [T]);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DynamicsKind {
    /// State `[px, py, vx, vy]`, control `[ax, ay]`.
    DoubleIntegrator2D,
    /// State `[px, py, heading]`, control `[speed, turn rate]`.
    Dubins,
    /// State `[x, y, z, vx, vy, vz, roll, pitch, yaw, p, q, r]` with inertial
    /// velocities and body rates, `z` pointing up; control
    /// `[thrust, torque_x, torque_y, torque_z]`.
    Quadcopter12,
}

impl DynamicsKind {
    pub fn state_dim(self) -> usize {
        match self {
            Self::DoubleIntegrator2D => 4,
            Self::Dubins => 3,
            Self::Quadcopter12 => 12,
        }
    }

    pub fn control_dim(self) -> usize {
        match self {
            Self::DoubleIntegrator2D | Self::Dubins => 2,
            Self::Quadcopter12 => 4,
        }
    }

    /// Number of leading state entries that hold the position.
    pub fn position_dim(self) -> usize {
        match self {
            Self::DoubleIntegrator2D | Self::Dubins => 2,
            Self::Quadcopter12 => 3,
        }
    }

    pub fn state_names(self) -> &'static [&'static str] {
        match self {
            Self::DoubleIntegrator2D => &["px", "py", "vx", "vy"],
            Self::Dubins => &["px", "py", "heading"],
            Self::Quadcopter12 => &[
                "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw", "p", "q", "r",
            ],
        }
    }

    pub fn control_names(self) -> &'static [&'static str] {
        match self {
            Self::DoubleIntegrator2D => &["ax", "ay"],
            Self::Dubins => &["speed", "turn_rate"],
            Self::Quadcopter12 => &["thrust", "tau_x", "tau_y", "tau_z"],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    Rk4,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadParams<T> {
    pub mass: T,
    pub gravity: T,
    pub inertia: [T; 3],
}

impl<T: Real> Default for QuadParams<T> {
    fn default() -> Self {
        Self {
            mass: T::lit(0.5),
            gravity: T::lit(9.81),
            inertia: [T::lit(4.86e-3), T::lit(4.86e-3), T::lit(8.8e-3)],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel<T> {
    pub kind: DynamicsKind,
    pub dt: T,
    pub control_min: Vec<T>,
    pub control_max: Vec<T>,
    pub quad: QuadParams<T>,
    pub integrator: Integrator,
}

impl<T: Real> DynamicsModel<T> {
    pub fn new(kind: DynamicsKind, dt: T, control_min: Vec<T>, control_max: Vec<T>) -> Result<Self> {
        let model = Self {
            kind,
            dt,
            control_min,
            control_max,
            quad: QuadParams::default(),
            integrator: Integrator::Euler,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        let n_u = self.kind.control_dim();
        if self.control_min.len() != n_u || self.control_max.len() != n_u {
            return Err(invalid(format!("{:?} needs {n_u} control limits", self.kind)));
        }
        if self
            .control_min
            .iter()
            .zip(&self.control_max)
            .any(|(lo, hi)| !(lo < hi))
        {
            return Err(invalid("control limits need min < max"));
        }
        if self.kind == DynamicsKind::Quadcopter12 {
            let q = &self.quad;
            if !(q.mass > T::zero()) || q.inertia.iter().any(|i| !(*i > T::zero())) {
                return Err(invalid("quadcopter mass and inertia must be positive"));
            }
        }
        Ok(())
    }

    pub fn position_dim(&self) -> usize {
        self.kind.position_dim()
    }

    /// Checked single step.
    pub fn step(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        if x.len() != self.state_dim() || u.len() != self.control_dim() {
            return Err(invalid("state or control has the wrong dimension"));
        }
        if x.iter().chain(u).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite state or control"));
        }
        let mut next = vec![T::zero(); x.len()];
        self.step_into(x, u, &mut next);
        Ok(next)
    }

    pub fn hover_thrust(&self) -> T {
        self.quad.mass * self.quad.gravity
    }

    fn derivative(&self, x: &[T], u: &[T], dx: &mut [T]) {
        match self.kind {
            DynamicsKind::DoubleIntegrator2D => {
                dx[0] = x[2];
                dx[1] = x[3];
                dx[2] = u[0];
                dx[3] = u[1];
            }
            DynamicsKind::Dubins => {
                dx[0] = u[0] * x[2].cos();
                dx[1] = u[0] * x[2].sin();
                dx[2] = u[1];
            }
            DynamicsKind::Quadcopter12 => quad_derivative(&self.quad, x, u, dx),
        }
    }
}

fn quad_derivative<T: Real>(q: &QuadParams<T>, x: &[T], u: &[T], dx: &mut [T]) {
    let (phi, theta, psi) = (x[6], x[7], x[8]);
    let (p, qr, r) = (x[9], x[10], x[11]);
    let (sphi, cphi) = phi.sin_cos();
    let (sth, cth) = theta.sin_cos();
    let (spsi, cpsi) = psi.sin_cos();
    let a = u[0] / q.mass;
    dx[0] = x[3];
    dx[1] = x[4];
    dx[2] = x[5];
    // third column of Rz(psi) Ry(theta) Rx(phi)
    dx[3] = a * (cpsi * sth * cphi + spsi * sphi);
    dx[4] = a * (spsi * sth * cphi - cpsi * sphi);
    dx[5] = a * cth * cphi - q.gravity;
    let tth = sth / cth;
    dx[6] = p + sphi * tth * qr + cphi * tth * r;
    dx[7] = cphi * qr - sphi * r;
    dx[8] = (sphi * qr + cphi * r) / cth;
    let [ix, iy, iz] = q.inertia;
    dx[9] = ((iy - iz) * qr * r + u[1]) / ix;
    dx[10] = ((iz - ix) * p * r + u[2]) / iy;
    dx[11] = ((ix - iy) * p * qr + u[3]) / iz;
}

impl<T: Real> Dynamics<T> for DynamicsModel<T> {
    fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.kind.control_dim()
    }

    fn step_into(&self, x: &[T], u: &[T], next: &mut [T]) {
        let mut uc = [T::zero(); 4];
        let uc = &mut uc[..u.len()];
        for (k, c) in uc.iter_mut().enumerate() {
            *c = u[k].max(self.control_min[k]).min(self.control_max[k]);
        }
        let n = x.len();
        let dt = self.dt;
        match self.integrator {
            Integrator::Euler => {
                let mut dx = [T::zero(); 12];
                self.derivative(x, uc, &mut dx[..n]);
                for i in 0..n {
                    next[i] = x[i] + dt * dx[i];
                }
            }
            Integrator::Rk4 => {
                let half = T::lit(0.5);
                let mut k1 = [T::zero(); 12];
                let mut k2 = [T::zero(); 12];
                let mut k3 = [T::zero(); 12];
                let mut k4 = [T::zero(); 12];
                let mut tmp = [T::zero(); 12];
                self.derivative(x, uc, &mut k1[..n]);
                for i in 0..n {
                    tmp[i] = x[i] + half * dt * k1[i];
                }
                self.derivative(&tmp[..n], uc, &mut k2[..n]);
                for i in 0..n {
                    tmp[i] = x[i] + half * dt * k2[i];
                }
                self.derivative(&tmp[..n], uc, &mut k3[..n]);
                for i in 0..n {
                    tmp[i] = x[i] + dt * k3[i];
                }
                self.derivative(&tmp[..n], uc, &mut k4[..n]);
                let sixth = dt / T::lit(6.0);
                for i in 0..n {
                    next[i] = x[i] + sixth * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]);
                }
            }
        }
    }
}

/// Several copies of one model stacked into a joint system (an agent together
/// with its perceived neighbors, or the whole team).
#[derive(Clone, Copy, Debug)]
pub struct Stacked<'a, T> {
    pub model: &'a DynamicsModel<T>,
    pub blocks: usize,
}

impl<T: Real> Dynamics<T> for Stacked<'_, T> {
    fn state_dim(&self) -> usize {
        self.model.state_dim() * self.blocks
    }

    fn control_dim(&self) -> usize {
        self.model.control_dim() * self.blocks
    }

    fn step_into(&self, x: &[T], u: &[T], next: &mut [T]) {
        let nx = self.model.state_dim();
        let nu = self.model.control_dim();
        for b in 0..self.blocks {
            self.model.step_into(
                &x[b * nx..(b + 1) * nx],
                &u[b * nu..(b + 1) * nu],
                &mut next[b * nx..(b + 1) * nx],
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_integrator() -> DynamicsModel<f64> {
        DynamicsModel::new(DynamicsKind::DoubleIntegrator2D, 0.1, vec![-1.0; 2], vec![1.0; 2]).unwrap()
    }

    fn dubins(dt: f64) -> DynamicsModel<f64> {
        DynamicsModel::new(DynamicsKind::Dubins, dt, vec![0.0, -1.0], vec![3.0, 1.0]).unwrap()
    }

    fn quad() -> DynamicsModel<f64> {
        DynamicsModel::new(
            DynamicsKind::Quadcopter12,
            0.05,
            vec![0.0, -0.1, -0.1, -0.1],
            vec![10.0, 0.1, 0.1, 0.1],
        )
        .unwrap()
    }

    #[test]
    fn double_integrator_coasts() {
        let next = double_integrator().step(&[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(next, vec![0.1, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn dubins_heading_north() {
        let x = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let next = dubins(0.5).step(&x, &[2.0, 0.0]).unwrap();
        assert!((next[1] - 1.0).abs() < 1e-15);
        assert!(next[0].abs() < 1e-15);
    }

    #[test]
    fn controls_are_clamped() {
        let next = double_integrator().step(&[0.0; 4], &[5.0, -5.0]).unwrap();
        assert_eq!(next, vec![0.0, 0.0, 0.1, -0.1]);
    }

    #[test]
    fn quadcopter_hover_is_fixed_point() {
        let mut m = quad();
        let x = [1.0, -2.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0];
        let u = [m.hover_thrust(), 0.0, 0.0, 0.0];
        for integrator in [Integrator::Euler, Integrator::Rk4] {
            m.integrator = integrator;
            let next = m.step(&x, &u).unwrap();
            for (a, b) in next.iter().zip(&x) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn quadcopter_roll_torque_tilts_and_drifts() {
        let m = quad();
        let mut x = [0.0; 12];
        let u = [m.hover_thrust(), 0.05, 0.0, 0.0];
        for _ in 0..20 {
            let next = m.step(&x, &u).unwrap();
            x.copy_from_slice(&next);
        }
        assert!(x[6] > 0.0);
        // positive roll tilts thrust toward -y
        assert!(x[4] < 0.0);
        assert!(x[5] < 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(double_integrator().step(&[f64::NAN, 0.0, 0.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(double_integrator().step(&[0.0; 3], &[0.0, 0.0]).is_err());
        assert!(DynamicsModel::new(DynamicsKind::Dubins, 0.0, vec![0.0; 2], vec![1.0; 2]).is_err());
        assert!(DynamicsModel::new(DynamicsKind::Dubins, 0.1, vec![1.0; 2], vec![1.0; 2]).is_err());
    }

    #[test]
    fn stacked_steps_each_block() {
        let m = double_integrator();
        let s = Stacked { model: &m, blocks: 2 };
        let x = [0.0, 0.0, 1.0, 0.0, 5.0, 5.0, 0.0, -1.0];
        let mut next = [0.0; 8];
        s.step_into(&x, &[0.0; 4], &mut next);
        assert_eq!(next, [0.1, 0.0, 1.0, 0.0, 5.0, 4.9, 0.0, -1.0]);
    }
}
