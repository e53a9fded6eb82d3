//! Per-tooth mechanistic milling force.

use std::f64::consts::PI;

use super::config::{CutterModel, MaterialParams};
use crate::error::{Error, Result};

/// Force on the tool, N: `[feed axis, cutter axis, surface normal]`.
pub type Force3 = [f64; 3];

/// Lower edge of the engagement arc, `π − arccos(1 − doc/R)`; `None` when
/// nothing is engaged.
pub fn entry_angle(cutter: &CutterModel, doc_mm: f64) -> Result<Option<f64>> {
    if !(doc_mm >= 0.0) {
        return Err(Error::Invalid(format!("depth of cut {doc_mm} mm is negative")));
    }
    let r_mm = cutter.radius * 1e3;
    if doc_mm > 2.0 * r_mm {
        return Err(Error::Invalid(format!(
            "depth of cut {doc_mm} mm exceeds the cutter diameter {} mm",
            2.0 * r_mm
        )));
    }
    if doc_mm == 0.0 {
        return Ok(None);
    }
    Ok(Some(PI - (1.0 - doc_mm / r_mm).acos()))
}

/// Feed per tooth, mm.
pub fn feed_per_tooth(cutter: &CutterModel, feed_m_per_min: f64) -> f64 {
    feed_m_per_min * 1e3 / (cutter.n_teeth as f64 * cutter.spindle_speed)
}

/// Elemental force of one tooth at immersion angle `phi` (inside the arc).
#[inline]
pub fn tooth_force(cutter: &CutterModel, material: &MaterialParams, f_t: f64, phi: f64) -> Force3 {
    let b = cutter.width * 1e3;
    let (s, c) = phi.sin_cos();
    let h = f_t * s;
    let ft = material.k_c * h * b + material.k_e * b;
    let fr = cutter.radial_ratio * ft;
    [-ft * s + fr * c, 0.0, -ft * c - fr * s]
}

/// Sum of the elemental forces of all teeth inside the engagement arc for
/// spindle angle `theta` (position of tooth 0).
pub fn cutting_force(
    cutter: &CutterModel,
    material: &MaterialParams,
    doc_mm: f64,
    feed_m_per_min: f64,
    theta: f64,
) -> Result<Force3> {
    if !(feed_m_per_min >= 0.0) {
        return Err(Error::Invalid(format!("feed {feed_m_per_min} m/min is negative")));
    }
    let Some(phi_in) = entry_angle(cutter, doc_mm)? else {
        return Ok([0.0; 3]);
    };
    let f_t = feed_per_tooth(cutter, feed_m_per_min);
    let spacing = cutter.tooth_spacing();
    let base = theta.rem_euclid(spacing);
    // Teeth sit at base + j·spacing; visit only those with phi in [phi_in, π].
    let j0 = ((phi_in - base) / spacing).ceil().max(0.0) as usize;
    let mut f = [0.0; 3];
    let mut j = j0;
    loop {
        let phi = base + j as f64 * spacing;
        if phi > PI {
            break;
        }
        if phi >= phi_in {
            let d = tooth_force(cutter, material, f_t, phi);
            f[0] += d[0];
            f[1] += d[1];
            f[2] += d[2];
        }
        j += 1;
    }
    Ok(f)
}

/// Force averaged over `samples` equally spaced spindle angles in one revolution.
pub fn revolution_average(
    cutter: &CutterModel,
    material: &MaterialParams,
    doc_mm: f64,
    feed_m_per_min: f64,
    samples: usize,
) -> Result<Force3> {
    let mut acc = [0.0; 3];
    for i in 0..samples {
        let th = i as f64 * std::f64::consts::TAU / samples as f64;
        let f = cutting_force(cutter, material, doc_mm, feed_m_per_min, th)?;
        for k in 0..3 {
            acc[k] += f[k];
        }
    }
    Ok(acc.map(|v| v / samples as f64))
}

pub fn norm(f: &Force3) -> f64 {
    (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(kc: f64, ke: f64) -> MaterialParams {
        MaterialParams::new("m", kc, ke)
    }

    #[test]
    fn zero_depth_is_exactly_zero() {
        let c = CutterModel::default();
        for th in [0.0, 0.3, 1.7] {
            assert_eq!(cutting_force(&c, &mat(100.0, 0.1), 0.0, 0.75, th).unwrap(), [0.0; 3]);
        }
    }

    #[test]
    fn buried_tool_is_an_error() {
        let c = CutterModel::default();
        assert!(cutting_force(&c, &mat(100.0, 0.1), 50.1, 0.75, 0.0).is_err());
        assert!(cutting_force(&c, &mat(100.0, 0.1), 50.0, 0.75, 0.0).is_ok());
    }

    #[test]
    fn affine_in_material_constants() {
        let c = CutterModel::default();
        for th in [0.01, 0.5, 2.0] {
            let a = cutting_force(&c, &mat(100.0, 0.0), 1.0, 0.75, th).unwrap();
            let b = cutting_force(&c, &mat(200.0, 0.0), 1.0, 0.75, th).unwrap();
            for k in 0..3 {
                assert!((b[k] - 2.0 * a[k]).abs() <= 1e-12 * a[k].abs().max(1e-300));
            }
            assert_eq!(cutting_force(&c, &mat(0.0, 0.0), 1.0, 0.75, th).unwrap(), [0.0; 3]);
        }
    }

    #[test]
    fn periodic_in_tooth_spacing() {
        let c = CutterModel::default();
        let m = mat(120.0, 0.7);
        for th in [0.003, 0.05, 1.0] {
            let a = cutting_force(&c, &m, 1.5, 0.75, th).unwrap();
            let b = cutting_force(&c, &m, 1.5, 0.75, th + c.tooth_spacing()).unwrap();
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forces_oppose_feed_and_push_out() {
        let c = CutterModel::default();
        let f = revolution_average(&c, &mat(100.0, 0.1), 1.0, 0.75, 720).unwrap();
        assert!(f[0] < 0.0 && f[2] > 0.0);
    }

    proptest::proptest! {
        #[test]
        fn force_is_additive_in_material_constants(
            kc in (0f64..500.0, 0f64..500.0),
            ke in (0f64..5.0, 0f64..5.0),
            doc in 0f64..3.0,
            feed in 0f64..2.0,
            th in 0f64..7.0,
        ) {
            let c = CutterModel::default();
            let f = |k_c, k_e| cutting_force(&c, &mat(k_c, k_e), doc, feed, th).unwrap();
            let (a, b, ab) = (f(kc.0, ke.0), f(kc.1, ke.1), f(kc.0 + kc.1, ke.0 + ke.1));
            for k in 0..3 {
                let scale = a[k].abs() + b[k].abs() + 1e-12;
                proptest::prop_assert!((ab[k] - a[k] - b[k]).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn force_is_periodic_in_tooth_spacing(doc in 0f64..3.0, feed in 0f64..2.0, th in 0f64..7.0, turns in 1usize..5) {
            let c = CutterModel::default();
            let m = mat(150.0, 1.0);
            let a = cutting_force(&c, &m, doc, feed, th).unwrap();
            let b = cutting_force(&c, &m, doc, feed, th + turns as f64 * c.tooth_spacing()).unwrap();
            for k in 0..3 {
                proptest::prop_assert!((a[k] - b[k]).abs() <= 1e-9 * (1.0 + a[k].abs()));
            }
        }
    }
}
