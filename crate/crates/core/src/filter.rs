//! Constant-velocity Kalman filter over the two box corners.
//!
//! State layout is `[x1, y1, x2, y2, vx1, vy1, vx2, vy2]` with one frame as
//! the time step. Only the four corner positions are observed.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;

type Observation = SMatrix<f64, 4, 8>;

/// Smallest width/height of a box read out of a filter state, in pixels.
pub const MIN_BOX_SIZE: f64 = 1.0;

/// Noise model of the filter. All values are standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    /// Per-frame process noise on corner positions (px).
    pub process_noise_pos: f64,
    /// Per-frame process noise on corner velocities (px/frame).
    pub process_noise_vel: f64,
    /// Observation noise on each corner coordinate (px).
    pub measurement_noise: f64,
    /// Prior uncertainty of the velocity of a newly created track (px/frame).
    pub initial_vel_uncertainty: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            process_noise_pos: 1.0,
            process_noise_vel: 0.5,
            measurement_noise: 2.0,
            initial_vel_uncertainty: 10.0,
        }
    }
}

impl KalmanParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("process_noise_pos", self.process_noise_pos),
            ("process_noise_vel", self.process_noise_vel),
            ("measurement_noise", self.measurement_noise),
            ("initial_vel_uncertainty", self.initial_vel_uncertainty),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    fn process_covariance(&self) -> StateCovariance {
        let qp = self.process_noise_pos.powi(2);
        let qv = self.process_noise_vel.powi(2);
        StateCovariance::from_diagonal(&StateVector::from_fn(|i, _| if i < 4 { qp } else { qv }))
    }
}

/// Mean and covariance of one track's filter.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

fn transition() -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> Observation {
    Observation::from_fn(|r, c| if r == c { 1.0 } else { 0.0 })
}

fn symmetrize(p: &mut StateCovariance) {
    let t = p.transpose();
    *p = (*p + t) * 0.5;
}

impl KalmanState {
    /// Box described by the corner positions of the mean.
    ///
    /// Crossed or collapsed corners are widened to [`MIN_BOX_SIZE`] around
    /// their midpoint.
    pub fn bbox(&self) -> BBox {
        let m = &self.mean;
        BBox::repaired(m[0], m[1], m[2], m[3], MIN_BOX_SIZE)
            .expect("filter mean must stay finite")
    }

    pub fn velocity(&self) -> [f64; 4] {
        [self.mean[4], self.mean[5], self.mean[6], self.mean[7]]
    }
}

/// Starts a filter at `bbox` with zero velocity.
pub fn kf_init(bbox: &BBox, params: &KalmanParams) -> KalmanState {
    let c = bbox.corners();
    let mean = StateVector::from_fn(|i, _| if i < 4 { c[i] } else { 0.0 });
    let rp = params.measurement_noise.powi(2);
    let rv = params.initial_vel_uncertainty.powi(2);
    let covariance =
        StateCovariance::from_diagonal(&StateVector::from_fn(|i, _| if i < 4 { rp } else { rv }));
    KalmanState { mean, covariance }
}

/// Advances the state by one frame. The returned box is the track proposal
/// for the next frame.
pub fn kf_predict(state: &KalmanState, params: &KalmanParams) -> KalmanState {
    let f = transition();
    let mean = f * state.mean;
    let mut covariance = f * state.covariance * f.transpose() + params.process_covariance();
    symmetrize(&mut covariance);
    KalmanState { mean, covariance }
}

/// Corrects the state with an observed box.
pub fn kf_update(state: &KalmanState, observed: &BBox, params: &KalmanParams) -> KalmanState {
    let h = observation();
    let r = SMatrix::<f64, 4, 4>::identity() * params.measurement_noise.powi(2);
    let z = SVector::<f64, 4>::from_column_slice(&observed.corners());

    let p = &state.covariance;
    let pht = p * h.transpose();
    let s = h * pht + r;
    // S is symmetric positive definite since R is.
    let s_inv = s
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| s.try_inverse())
        .expect("innovation covariance must be invertible");
    let gain = pht * s_inv;

    let innovation = z - h * state.mean;
    let mean = state.mean + gain * innovation;

    // Joseph form keeps the posterior symmetric positive semidefinite.
    let i_kh = StateCovariance::identity() - gain * h;
    let mut covariance = i_kh * p * i_kh.transpose() + gain * r * gain.transpose();
    symmetrize(&mut covariance);
    KalmanState { mean, covariance }
}
