//! Wrist force-sensor gravity compensation.

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn transpose(m: &Mat3) -> Mat3 {
    [0, 1, 2].map(|i| [m[0][i], m[1][i], m[2][i]])
}

fn check_rotation(m: &Mat3, what: &str) -> Result<()> {
    for i in 0..3 {
        for j in 0..3 {
            let d: f64 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if !((d - want).abs() <= 1e-9) {
                return Err(Error::Invalid(format!("{what} is not orthonormal (row {i}·row {j} = {d})")));
            }
        }
    }
    Ok(())
}

/// World-frame external force from an end-effector sensor reading.
///
/// `r_we` rotates end-effector vectors into the world frame at the current
/// pose and `r_we0` at the pose where the sensor was biased; `mass` is the
/// tool mass. Returns `R F + m g (ẑ − R R₀ᵀ ẑ)`.
pub fn gravity_compensate(f_ee: &Vec3, r_we: &Mat3, r_we0: &Mat3, mass: f64, g: f64) -> Result<Vec3> {
    check_rotation(r_we, "current rotation")?;
    check_rotation(r_we0, "bias rotation")?;
    let z = [0.0, 0.0, 1.0];
    let rz = mat_vec(r_we, &mat_vec(&transpose(r_we0), &z));
    let f = mat_vec(r_we, f_ee);
    Ok([0, 1, 2].map(|i| f[i] + mass * g * (z[i] - rz[i])))
}

#[cfg(test)]
mod tests {
    use super::*;

    const I: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn rot_x(a: f64) -> Mat3 {
        let (s, c) = a.sin_cos();
        [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
    }

    #[test]
    fn bias_pose_is_pure_rotation() {
        let r = rot_x(0.7);
        let f = [1.0, -2.0, 0.5];
        assert_eq!(gravity_compensate(&f, &r, &r, 3.0, 9.81).unwrap(), mat_vec(&r, &f));
        let r0 = rot_x(-0.2);
        assert_eq!(gravity_compensate(&f, &r, &r0, 0.0, 9.81).unwrap(), mat_vec(&r, &f));
    }

    #[test]
    fn quarter_turn_from_bias() {
        // R R0ᵀ ẑ = rot_x(π/2) ẑ = (0, −1, 0), so the correction is g (0, 1, 1).
        let out = gravity_compensate(&[0.0; 3], &rot_x(std::f64::consts::FRAC_PI_2), &I, 1.0, 9.81).unwrap();
        assert!(out[0].abs() < 1e-12);
        assert!((out[1] - 9.81).abs() < 1e-12);
        assert!((out[2] - 9.81).abs() < 1e-12);
        let mag = (out[1] * out[1] + out[2] * out[2]).sqrt();
        assert!((mag - 9.81 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_rotation() {
        let mut bad = I;
        bad[0][0] = 1.1;
        assert!(gravity_compensate(&[0.0; 3], &bad, &I, 1.0, 9.81).is_err());
    }
}
