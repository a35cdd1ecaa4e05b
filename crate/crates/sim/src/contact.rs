//! Penalty ground contact with a Coulomb cone clamp.

use crate::spatial::V3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactGains {
    /// Normal stiffness (N/m).
    pub kn: f64,
    /// Normal damping (N·s/m).
    pub cn: f64,
    /// Tangential damping (N·s/m).
    pub kt: f64,
    /// Normal force above which a point counts as in contact (N).
    pub threshold: f64,
}

impl Default for ContactGains {
    fn default() -> Self {
        Self { kn: 1e4, cn: 100.0, kt: 1e3, threshold: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Contact {
    /// Total force on the body (world frame).
    pub force: V3,
    pub normal_force: f64,
    pub tangential: V3,
    pub in_contact: bool,
}

/// Force on a point at `pos` moving with `vel` (world frame) over ground of
/// height `ground_z` with unit `normal`.
pub fn contact_resolve(pos: &V3, vel: &V3, ground_z: f64, normal: &V3, mu: f64, gains: &ContactGains) -> Contact {
    let depth = ground_z - pos.z;
    if depth <= 0.0 {
        return Contact::default();
    }
    let vn = vel.dot(normal);
    let fn_ = (gains.kn * depth - gains.cn * vn).max(0.0);
    let vt = vel - normal * vn;
    let mut ft = vt * -gains.kt;
    let cap = mu * fn_;
    let mag = ft.norm();
    if mag > cap {
        ft *= if mag > 0.0 { cap / mag } else { 0.0 };
    }
    Contact { force: normal * fn_ + ft, normal_force: fn_, tangential: ft, in_contact: fn_ > gains.threshold }
}
