//! Floating-base dynamics: recursive Newton-Euler for bias forces, composite
//! rigid bodies for the mass matrix, dense Cholesky solve.
//!
//! Generalized velocity layout: `[ω_base (body), v_base (body), q̇₀..q̇₅]`.

use nalgebra::{SMatrix, SVector, UnitQuaternion};

use crate::contact::{contact_resolve, Contact, ContactGains};
use crate::error::{Result, SimError};
use crate::model::{BodySpec, RobotModel, FOOT_BODIES, N_BODIES, N_DOF, N_JOINTS};
use crate::params::PhysParams;
use crate::spatial::{axis_rotation, Force, Motion, Xform, M3, V3};
use crate::state::{SimState, N_PROBES};
use crate::terrain::Heightfield;

pub type MassMatrix = SMatrix<f64, N_DOF, N_DOF>;
pub type GenVec = SVector<f64, N_DOF>;

/// Inner-loop step (500 Hz).
pub const DT: f64 = 1.0 / 500.0;
/// Inner steps per 50 Hz policy step.
pub const DECIMATION: usize = 10;

#[derive(Clone, Debug)]
pub struct Kinematics {
    /// Parent-to-child transforms (`x[0]` is unused).
    pub x: [Xform; N_BODIES],
    /// Body-to-world rotations.
    pub rot: [M3; N_BODIES],
    /// Body origins in world coordinates.
    pub pos: [V3; N_BODIES],
    /// Spatial velocities in body coordinates.
    pub vel: [Motion; N_BODIES],
}

impl Kinematics {
    pub fn point_pos(&self, body: usize, local: &V3) -> V3 {
        self.pos[body] + self.rot[body] * local
    }

    pub fn point_vel(&self, body: usize, local: &V3) -> V3 {
        let v = &self.vel[body];
        self.rot[body] * (v.v + v.w.cross(local))
    }
}

fn joint_axis(b: &BodySpec) -> Motion {
    Motion::new(b.axis, V3::zeros())
}

pub fn kinematics(bodies: &[BodySpec; N_BODIES], s: &SimState) -> Kinematics {
    let mut k = Kinematics {
        x: [Xform::identity(); N_BODIES],
        rot: [M3::identity(); N_BODIES],
        pos: [V3::zeros(); N_BODIES],
        vel: [Motion::zero(); N_BODIES],
    };
    k.rot[0] = *s.base_rot.to_rotation_matrix().matrix();
    k.pos[0] = s.base_pos;
    k.vel[0] = Motion::new(s.base_ang_vel, s.base_lin_vel);
    for i in 1..N_BODIES {
        let b = &bodies[i];
        let p = b.parent.unwrap_or(0);
        let rj = axis_rotation(&b.axis, s.q[i - 1]);
        k.x[i] = Xform { e: rj.transpose(), r: b.offset };
        k.rot[i] = k.rot[p] * rj;
        k.pos[i] = k.pos[p] + k.rot[p] * b.offset;
        k.vel[i] = k.x[i].apply_motion(&k.vel[p]) + joint_axis(b).scale(s.qd[i - 1]);
    }
    k
}

/// `C(q, ν) − Jᵀf_ext`: generalized force needed for zero acceleration.
pub fn bias_forces(
    bodies: &[BodySpec; N_BODIES],
    k: &Kinematics,
    s: &SimState,
    g: f64,
    fext: &[Force; N_BODIES],
) -> GenVec {
    let mut acc = [Motion::zero(); N_BODIES];
    let mut f = [Force::zero(); N_BODIES];
    // Uniform upward acceleration of the base stands in for gravity.
    acc[0] = Motion::new(V3::zeros(), k.rot[0].transpose() * V3::new(0.0, 0.0, g));
    for i in 0..N_BODIES {
        let b = &bodies[i];
        if i > 0 {
            let p = b.parent.unwrap_or(0);
            acc[i] = k.x[i].apply_motion(&acc[p]) + k.vel[i].cross_motion(&joint_axis(b).scale(s.qd[i - 1]));
        }
        let iv = b.inertia.mul_motion(&k.vel[i]);
        f[i] = b.inertia.mul_motion(&acc[i]) + k.vel[i].cross_force(&iv) - fext[i];
    }
    let mut out = GenVec::zeros();
    for i in (1..N_BODIES).rev() {
        out[5 + i] = bodies[i].axis.dot(&f[i].n);
        let p = bodies[i].parent.unwrap_or(0);
        let fp = k.x[i].transpose_force(&f[i]);
        f[p] += fp;
    }
    out.fixed_rows_mut::<3>(0).copy_from(&f[0].n);
    out.fixed_rows_mut::<3>(3).copy_from(&f[0].f);
    out
}

pub fn mass_matrix(bodies: &[BodySpec; N_BODIES], k: &Kinematics) -> MassMatrix {
    let mut ic: Vec<_> = bodies.iter().map(|b| b.inertia).collect();
    for i in (1..N_BODIES).rev() {
        let p = bodies[i].parent.unwrap_or(0);
        let moved = ic[i].to_parent(&k.x[i]);
        ic[p] = ic[p].add(&moved);
    }
    let mut m = MassMatrix::zeros();
    for i in 1..N_BODIES {
        let row = 5 + i;
        let mut f = ic[i].mul_motion(&joint_axis(&bodies[i]));
        m[(row, row)] = bodies[i].axis.dot(&f.n);
        let mut j = i;
        while let Some(p) = bodies[j].parent.filter(|&p| p != 0) {
            f = k.x[j].transpose_force(&f);
            j = p;
            let v = bodies[j].axis.dot(&f.n);
            m[(row, 5 + j)] = v;
            m[(5 + j, row)] = v;
        }
        f = k.x[j].transpose_force(&f);
        for (c, v) in f.n.iter().chain(f.f.iter()).enumerate() {
            m[(c, row)] = *v;
            m[(row, c)] = *v;
        }
    }
    let base = ic[0];
    let h = base.h.cross_matrix();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&base.i);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&h);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&h.transpose());
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(M3::identity() * base.m));
    m
}

/// PD servo toward `q_default + action + motor_offset`, clamped to torque limits.
pub fn pd_torque(
    model: &RobotModel,
    action: &[f64; N_JOINTS],
    s: &SimState,
    p: &PhysParams,
) -> Result<[f64; N_JOINTS]> {
    let mut tau = [0.0; N_JOINTS];
    for j in 0..N_JOINTS {
        if !action[j].is_finite() {
            return Err(SimError::NonFiniteAction(j));
        }
        let target = model.q_default[j] + action[j] + p.motor_offset[j];
        let raw = model.kp[j] * p.stiffness_scale[j] * (target - s.q[j]) - model.kd[j] * p.damping_scale[j] * s.qd[j];
        tau[j] = raw.clamp(-model.torque_limit[j], model.torque_limit[j]);
    }
    Ok(tau)
}

/// Contact results for both feet and every probe point.
#[derive(Clone, Debug, Default)]
pub struct Contacts {
    pub feet: [Contact; 2],
    pub probes: [Contact; N_PROBES],
}

pub fn resolve_contacts(
    model: &RobotModel,
    k: &Kinematics,
    params: &PhysParams,
    terrain: &Heightfield,
    gains: &ContactGains,
) -> (Contacts, [Force; N_BODIES]) {
    let g = ContactGains { cn: gains.cn * (1.0 - params.restitution), ..*gains };
    let mut fext = [Force::zero(); N_BODIES];
    let mut out = Contacts::default();
    let apply = |body: usize, local: &V3, mu: f64, fext: &mut [Force; N_BODIES]| {
        let p = k.point_pos(body, local);
        let v = k.point_vel(body, local);
        let (z, n) = terrain.height_at(p.x, p.y);
        let c = contact_resolve(&p, &v, z, &n, mu * terrain.friction_at(p.x, p.y), &g);
        if c.normal_force > 0.0 {
            fext[body] += Force::at_point(local, &(k.rot[body].transpose() * c.force));
        }
        c
    };
    let foot = model.foot_point();
    for (side, &b) in FOOT_BODIES.iter().enumerate() {
        out.feet[side] = apply(b, &foot, params.friction[side], &mut fext);
    }
    let mu_torso = 0.5 * (params.friction[0] + params.friction[1]);
    for (i, (b, local)) in model.probe_points().iter().enumerate() {
        let mu = if *b == FOOT_BODIES[0] {
            params.friction[0]
        } else if *b == FOOT_BODIES[1] {
            params.friction[1]
        } else {
            mu_torso
        };
        out.probes[i] = apply(*b, local, mu, &mut fext);
    }
    (out, fext)
}

/// Generalized accelerations for joint torques `tau` and the given contacts.
pub fn forward_dynamics(
    bodies: &[BodySpec; N_BODIES],
    k: &Kinematics,
    s: &SimState,
    tau: &[f64; N_JOINTS],
    g: f64,
    fext: &[Force; N_BODIES],
) -> Result<GenVec> {
    let mut rhs = -bias_forces(bodies, k, s, g, fext);
    for j in 0..N_JOINTS {
        rhs[6 + j] += tau[j];
    }
    let chol = mass_matrix(bodies, k).cholesky().ok_or(SimError::SingularMassMatrix)?;
    Ok(chol.solve(&rhs))
}

/// One inner step. Velocities advance by explicit acceleration; positions use
/// the mean of old and new velocities, which is exact under constant acceleration.
pub fn step_dynamics(
    model: &RobotModel,
    s: &SimState,
    tau: &[f64; N_JOINTS],
    params: &PhysParams,
    terrain: &Heightfield,
    gains: &ContactGains,
    dt: f64,
) -> Result<SimState> {
    step_with_contacts(model, s, tau, params, terrain, gains, dt).map(|(n, _)| n)
}

/// [`step_dynamics`] that also returns the contact forces it applied.
pub fn step_with_contacts(
    model: &RobotModel,
    s: &SimState,
    tau: &[f64; N_JOINTS],
    params: &PhysParams,
    terrain: &Heightfield,
    gains: &ContactGains,
    dt: f64,
) -> Result<(SimState, Contacts)> {
    let bodies = model.bodies(params.payload);
    let k = kinematics(&bodies, s);
    let (contacts, fext) = resolve_contacts(model, &k, params, terrain, gains);
    let acc = forward_dynamics(&bodies, &k, s, tau, params.gravity(), &fext)?;

    let mut n = s.clone();
    let w_new = s.base_ang_vel + acc.fixed_rows::<3>(0) * dt;
    let rot_new = s.base_rot * UnitQuaternion::from_scaled_axis((s.base_ang_vel + w_new) * (0.5 * dt));
    n.base_rot = UnitQuaternion::new_normalize(rot_new.into_inner());
    // Translation advances in the world frame with the classical acceleration R(a + ω×v).
    let a_lin: V3 = acc.fixed_rows::<3>(3).into();
    let pd = s.base_rot * s.base_lin_vel;
    let pd_new = pd + s.base_rot * (a_lin + s.base_ang_vel.cross(&s.base_lin_vel)) * dt;
    n.base_pos = s.base_pos + (pd + pd_new) * (0.5 * dt);
    n.base_ang_vel = w_new;
    n.base_lin_vel = n.base_rot.inverse_transform_vector(&pd_new);
    for j in 0..N_JOINTS {
        let qd = s.qd[j] + acc[6 + j] * dt;
        n.q[j] = s.q[j] + 0.5 * dt * (s.qd[j] + qd);
        n.qd[j] = qd;
    }
    for side in 0..2 {
        let c = &contacts.feet[side];
        n.foot_force[side] = c.force;
        n.contact[side] = c.in_contact;
        if c.in_contact {
            n.contact_time[side] += dt;
            n.air_time[side] = 0.0;
        } else {
            n.air_time[side] += dt;
            n.contact_time[side] = 0.0;
        }
    }
    for (i, c) in contacts.probes.iter().enumerate() {
        n.probe_force[i] = c.force.norm();
    }
    n.time = s.time + dt;
    if !n.is_finite() {
        return Err(SimError::NonFiniteState(n.time));
    }
    Ok((n, contacts))
}

/// Kinetic plus gravitational potential energy.
pub fn mechanical_energy(model: &RobotModel, params: &PhysParams, s: &SimState) -> f64 {
    let bodies = model.bodies(params.payload);
    let k = kinematics(&bodies, s);
    let g = params.gravity();
    let mut e = 0.0;
    for (i, b) in bodies.iter().enumerate() {
        let v = &k.vel[i];
        e += 0.5 * v.dot(&b.inertia.mul_motion(v));
        e += b.inertia.m * g * k.point_pos(i, &b.inertia.com()).z;
    }
    e
}

/// World positions of both feet.
pub fn foot_positions(model: &RobotModel, params: &PhysParams, s: &SimState) -> [V3; 2] {
    let k = kinematics(&model.bodies(params.payload), s);
    let foot = model.foot_point();
    [k.point_pos(FOOT_BODIES[0], &foot), k.point_pos(FOOT_BODIES[1], &foot)]
}

/// World velocities of both feet.
pub fn foot_velocities(model: &RobotModel, params: &PhysParams, s: &SimState) -> [V3; 2] {
    let k = kinematics(&model.bodies(params.payload), s);
    let foot = model.foot_point();
    [k.point_vel(FOOT_BODIES[0], &foot), k.point_vel(FOOT_BODIES[1], &foot)]
}
