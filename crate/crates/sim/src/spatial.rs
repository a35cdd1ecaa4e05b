//! 6D spatial vectors in Plücker coordinates (angular part first).

use nalgebra::{Matrix3, Vector3};

pub type V3 = Vector3<f64>;
pub type M3 = Matrix3<f64>;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Motion {
    pub w: V3,
    pub v: V3,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Force {
    pub n: V3,
    pub f: V3,
}

impl Motion {
    pub fn new(w: V3, v: V3) -> Self {
        Self { w, v }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// `self ×m m`
    pub fn cross_motion(&self, m: &Motion) -> Motion {
        Motion { w: self.w.cross(&m.w), v: self.w.cross(&m.v) + self.v.cross(&m.w) }
    }

    /// `self ×f f`
    pub fn cross_force(&self, f: &Force) -> Force {
        Force { n: self.w.cross(&f.n) + self.v.cross(&f.f), f: self.w.cross(&f.f) }
    }

    pub fn dot(&self, f: &Force) -> f64 {
        self.w.dot(&f.n) + self.v.dot(&f.f)
    }

    pub fn scale(&self, s: f64) -> Motion {
        Motion { w: self.w * s, v: self.v * s }
    }
}

impl std::ops::Add for Motion {
    type Output = Motion;
    fn add(self, o: Motion) -> Motion {
        Motion { w: self.w + o.w, v: self.v + o.v }
    }
}

impl Force {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Force `f` (world/body frame coordinates) acting at point `p` of the same frame.
    pub fn at_point(p: &V3, f: &V3) -> Force {
        Force { n: p.cross(f), f: *f }
    }
}

impl std::ops::Add for Force {
    type Output = Force;
    fn add(self, o: Force) -> Force {
        Force { n: self.n + o.n, f: self.f + o.f }
    }
}

impl std::ops::Sub for Force {
    type Output = Force;
    fn sub(self, o: Force) -> Force {
        Force { n: self.n - o.n, f: self.f - o.f }
    }
}

impl std::ops::AddAssign for Force {
    fn add_assign(&mut self, o: Force) {
        self.n += o.n;
        self.f += o.f;
    }
}

/// Parent-to-child coordinate transform: rotate by `e` after translating the
/// origin to `r` (expressed in parent coordinates).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Xform {
    pub e: M3,
    pub r: V3,
}

impl Xform {
    pub fn identity() -> Self {
        Self { e: M3::identity(), r: V3::zeros() }
    }

    pub fn apply_motion(&self, m: &Motion) -> Motion {
        Motion { w: self.e * m.w, v: self.e * (m.v - self.r.cross(&m.w)) }
    }

    /// Child force expressed in parent coordinates (`Xᵀ f`).
    pub fn transpose_force(&self, f: &Force) -> Force {
        let ef = self.e.transpose() * f.f;
        Force { n: self.e.transpose() * f.n + self.r.cross(&ef), f: ef }
    }
}

/// Rigid-body inertia about a frame origin: mass, first moment `h = m·c`,
/// and rotational inertia about the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Inertia {
    pub m: f64,
    pub h: V3,
    pub i: M3,
}

impl Inertia {
    pub fn zero() -> Self {
        Self { m: 0.0, h: V3::zeros(), i: M3::zeros() }
    }

    /// From mass, centre of mass `c` and inertia about the centre of mass.
    pub fn from_com(m: f64, c: V3, i_com: M3) -> Self {
        Self { m, h: c * m, i: i_com + shift(m, &c) }
    }

    pub fn com(&self) -> V3 {
        self.h / self.m
    }

    pub fn i_com(&self) -> M3 {
        self.i - shift(self.m, &self.com())
    }

    pub fn mul_motion(&self, v: &Motion) -> Force {
        Force { n: self.i * v.w + self.h.cross(&v.v), f: v.v * self.m - self.h.cross(&v.w) }
    }

    /// Express a child-frame inertia in parent coordinates (`Xᵀ I X`).
    pub fn to_parent(&self, x: &Xform) -> Inertia {
        if self.m == 0.0 {
            return Inertia::zero();
        }
        let et = x.e.transpose();
        let c = et * self.com() + x.r;
        let i_com = et * self.i_com() * x.e;
        Inertia::from_com(self.m, c, i_com)
    }

    pub fn add(&self, o: &Inertia) -> Inertia {
        Inertia { m: self.m + o.m, h: self.h + o.h, i: self.i + o.i }
    }
}

/// Parallel-axis term `m(|c|²·1 − c cᵀ)`.
fn shift(m: f64, c: &V3) -> M3 {
    (M3::identity() * c.norm_squared() - c * c.transpose()) * m
}

/// Rotation matrix for angle `q` about a unit axis (child-to-parent).
pub fn axis_rotation(axis: &V3, q: f64) -> M3 {
    let (s, c) = q.sin_cos();
    let k = axis.cross_matrix();
    M3::identity() + k * s + k * k * (1.0 - c)
}
