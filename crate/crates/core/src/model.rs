//! Kinematic model of a mobile manipulator: generalized coordinates, transport
//! matrix, forward kinematics, task Jacobians and collision geometry.
//!
//! The robot is a holonomic planar base (x, y, heading) carrying a serial chain
//! of revolute joints. Base velocities are expressed in the body frame, so the
//! transport matrix `G(q)` is position dependent: `q̇ = G(q) v`. Control inputs
//! are generalized accelerations, `u = v̇`.

use nalgebra::{DMatrix, DVector, Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

/// Number of base coordinates (x, y, heading).
pub const BASE_DOF: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("unknown FK point `{0}`")]
    UnknownPoint(String),
    #[error("unknown body `{0}`")]
    UnknownBody(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Robot state: generalized coordinates `q` and generalized velocities `v`.
///
/// For a holonomic base with a revolute arm both vectors have the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedState {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl GeneralizedState {
    pub fn new(q: DVector<f64>, v: DVector<f64>) -> Result<Self, ModelError> {
        if q.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite("generalized state"));
        }
        if q.len() != v.len() {
            return Err(ModelError::DimensionMismatch {
                expected: q.len(),
                got: v.len(),
            });
        }
        Ok(Self { q, v })
    }

    pub fn rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            v: DVector::zeros(n),
        }
    }

    /// Stack into `[qᵀ vᵀ]ᵀ`.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.q.len();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.q);
        x.rows_mut(n, n).copy_from(&self.v);
        x
    }

    pub fn from_stacked(x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        Self {
            q: x.rows(0, n).into_owned(),
            v: x.rows(n, n).into_owned(),
        }
    }
}

/// Generalized acceleration command.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    pub u: DVector<f64>,
}

impl ControlInput {
    pub fn new(u: DVector<f64>) -> Result<Self, ModelError> {
        if u.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite("control input"));
        }
        Ok(Self { u })
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            u: DVector::zeros(m),
        }
    }
}

/// One revolute joint of the arm: rotation axis and the translation from the
/// previous joint frame, both expressed in the previous frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmLink {
    pub axis: Vector3<f64>,
    pub offset: Vector3<f64>,
}

/// Named point rigidly attached to a body. `dim` selects how many world
/// coordinates the point reports (2 for planar tasks, 3 for spatial).
#[derive(Debug, Clone, PartialEq)]
pub struct FkPoint {
    pub id: String,
    /// Body index: 0 = base, i = i-th arm link.
    pub body: usize,
    pub offset: Vector3<f64>,
    pub dim: usize,
}

/// Collision sphere attached to a robot body.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionSphere {
    pub body: usize,
    pub offset: Vector3<f64>,
    pub radius: f64,
}

/// Fixed sphere in the world (obstacle).
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// Elementwise bounds on coordinates, velocities, accelerations and the
/// acceleration slew `Δu` (jerk proxy). Entries may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub q_lower: DVector<f64>,
    pub q_upper: DVector<f64>,
    pub v_lower: DVector<f64>,
    pub v_upper: DVector<f64>,
    pub u_lower: DVector<f64>,
    pub u_upper: DVector<f64>,
    pub du_lower: DVector<f64>,
    pub du_upper: DVector<f64>,
}

impl Bounds {
    /// Unbounded in every coordinate.
    pub fn unbounded(n: usize) -> Self {
        let lo = DVector::from_element(n, f64::NEG_INFINITY);
        let hi = DVector::from_element(n, f64::INFINITY);
        Self {
            q_lower: lo.clone(),
            q_upper: hi.clone(),
            v_lower: lo.clone(),
            v_upper: hi.clone(),
            u_lower: lo.clone(),
            u_upper: hi.clone(),
            du_lower: lo,
            du_upper: hi,
        }
    }
}

/// Continuous-time model matrices evaluated at one configuration.
///
/// `A` has the transport matrix as its upper-right block and zeros elsewhere;
/// `B` stacks a zero block over the identity.
#[derive(Debug, Clone)]
pub struct ModelMatrices {
    pub g: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Immutable kinematic description of one robot.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub links: Vec<ArmLink>,
    pub fk_points: Vec<FkPoint>,
    pub spheres: Vec<CollisionSphere>,
    /// Sphere index pairs checked against each other (default: none).
    pub self_collision_pairs: Vec<(usize, usize)>,
    pub bounds: Bounds,
    /// Safe distance per robot sphere, metres.
    pub safe_distance: DVector<f64>,
    pub q_home: DVector<f64>,
}

/// World poses of every body plus joint origins/axes, produced by one forward
/// kinematics sweep and consumed by FK points and Jacobians.
#[derive(Debug, Clone)]
pub struct BodyFrames {
    pub poses: Vec<Isometry3<f64>>,
    pub joint_origins: Vec<Vector3<f64>>,
    pub joint_axes: Vec<Vector3<f64>>,
}

impl RobotModel {
    pub fn new(
        name: impl Into<String>,
        links: Vec<ArmLink>,
        fk_points: Vec<FkPoint>,
        spheres: Vec<CollisionSphere>,
        self_collision_pairs: Vec<(usize, usize)>,
        bounds: Bounds,
        safe_distance: DVector<f64>,
        q_home: DVector<f64>,
    ) -> Result<Self, ModelError> {
        let model = Self {
            name: name.into(),
            links,
            fk_points,
            spheres,
            self_collision_pairs,
            bounds,
            safe_distance,
            q_home,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let n = self.dof();
        let bodies = self.links.len() + 1;
        for link in &self.links {
            if (link.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(ModelError::InvalidModel("joint axis must be unit".into()));
            }
        }
        for p in &self.fk_points {
            if p.body >= bodies {
                return Err(ModelError::UnknownBody(format!("body {}", p.body)));
            }
            if p.dim != 2 && p.dim != 3 {
                return Err(ModelError::InvalidModel(format!(
                    "point `{}` must have dim 2 or 3",
                    p.id
                )));
            }
        }
        for s in &self.spheres {
            if s.body >= bodies {
                return Err(ModelError::UnknownBody(format!("body {}", s.body)));
            }
            if !(s.radius > 0.0) {
                return Err(ModelError::InvalidModel("sphere radius must be > 0".into()));
            }
        }
        for &(i, j) in &self.self_collision_pairs {
            if i >= self.spheres.len() || j >= self.spheres.len() {
                return Err(ModelError::InvalidModel("self-collision pair out of range".into()));
            }
        }
        if self.safe_distance.len() != self.spheres.len()
            || self.safe_distance.iter().any(|d| *d < 0.0)
        {
            return Err(ModelError::InvalidModel(
                "safe distance must be one non-negative entry per sphere".into(),
            ));
        }
        if self.q_home.len() != n {
            return Err(ModelError::DimensionMismatch {
                expected: n,
                got: self.q_home.len(),
            });
        }
        let pairs = [
            (&self.bounds.q_lower, &self.bounds.q_upper),
            (&self.bounds.v_lower, &self.bounds.v_upper),
            (&self.bounds.u_lower, &self.bounds.u_upper),
            (&self.bounds.du_lower, &self.bounds.du_upper),
        ];
        for (lo, hi) in pairs {
            if lo.len() != n || hi.len() != n {
                return Err(ModelError::DimensionMismatch {
                    expected: n,
                    got: lo.len().max(hi.len()),
                });
            }
            if lo.iter().zip(hi.iter()).any(|(l, h)| !(l < h)) {
                return Err(ModelError::InvalidModel(
                    "lower bound must be < upper bound elementwise".into(),
                ));
            }
        }
        Ok(())
    }

    /// Number of generalized coordinates (= number of velocities).
    pub fn dof(&self) -> usize {
        BASE_DOF + self.links.len()
    }

    /// State dimension `2n` of the stacked `[qᵀ vᵀ]ᵀ` vector.
    pub fn state_dim(&self) -> usize {
        2 * self.dof()
    }

    pub fn fk_point(&self, id: &str) -> Result<&FkPoint, ModelError> {
        self.fk_points
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| ModelError::UnknownPoint(id.to_string()))
    }

    /// Block-diagonal transport matrix mapping body-frame base velocities and
    /// joint rates to coordinate rates. Depends on `q` only through the base
    /// heading; off-block entries are exactly zero.
    pub fn transport_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
        let n = self.dof();
        if q.len() != n {
            return Err(ModelError::DimensionMismatch {
                expected: n,
                got: q.len(),
            });
        }
        let (s, c) = q[2].sin_cos();
        let mut g = DMatrix::zeros(n, n);
        g[(0, 0)] = c;
        g[(0, 1)] = -s;
        g[(1, 0)] = s;
        g[(1, 1)] = c;
        g[(2, 2)] = 1.0;
        for i in BASE_DOF..n {
            g[(i, i)] = 1.0;
        }
        Ok(g)
    }

    /// Continuous-time matrices of `ẋ = A(q)x + Bu`.
    pub fn model_matrices(&self, q: &DVector<f64>) -> Result<ModelMatrices, ModelError> {
        let n = self.dof();
        let g = self.transport_matrix(q)?;
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, n), (n, n)).copy_from(&g);
        let mut b = DMatrix::zeros(2 * n, n);
        b.view_mut((n, 0), (n, n)).fill_diagonal(1.0);
        Ok(ModelMatrices { g, a, b })
    }

    /// Coordinate rates `q̇ = G(q) v` without forming the matrix.
    pub fn coordinate_rates(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let (s, c) = q[2].sin_cos();
        let mut dq = v.clone();
        dq[0] = c * v[0] - s * v[1];
        dq[1] = s * v[0] + c * v[1];
        dq
    }

    /// Explicit-Euler step of the kinematic model:
    /// `q⁺ = q + Δt G(q) v`, `v⁺ = v + Δt u`.
    pub fn dynamics_step(
        &self,
        x: &GeneralizedState,
        u: &ControlInput,
        dt: f64,
    ) -> Result<GeneralizedState, ModelError> {
        let n = self.dof();
        if x.q.len() != n || u.u.len() != n {
            return Err(ModelError::DimensionMismatch {
                expected: n,
                got: x.q.len().min(u.u.len()),
            });
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(ModelError::NonFinite("time step"));
        }
        if x.q.iter().chain(x.v.iter()).chain(u.u.iter()).any(|z| !z.is_finite()) {
            return Err(ModelError::NonFinite("dynamics input"));
        }
        let dq = self.coordinate_rates(&x.q, &x.v);
        Ok(GeneralizedState {
            q: &x.q + dt * dq,
            v: &x.v + dt * &u.u,
        })
    }

    /// Same step on stacked state vectors; used by rollouts.
    pub fn dynamics_step_stacked(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        dt: f64,
    ) -> DVector<f64> {
        let n = self.dof();
        let q = x.rows(0, n);
        let v = x.rows(n, n);
        let mut next = DVector::zeros(2 * n);
        let (s, c) = q[2].sin_cos();
        next[0] = q[0] + dt * (c * v[0] - s * v[1]);
        next[1] = q[1] + dt * (s * v[0] + c * v[1]);
        for i in 2..n {
            next[i] = q[i] + dt * v[i];
        }
        for i in 0..n {
            next[n + i] = v[i] + dt * u[i];
        }
        next
    }

    /// Jacobians of the discrete step with respect to the stacked state and
    /// the control input.
    pub fn dynamics_jacobians(
        &self,
        x: &DVector<f64>,
        dt: f64,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dof();
        let theta = x[2];
        let (s, c) = theta.sin_cos();
        let vx = x[n];
        let vy = x[n + 1];

        let mut a = DMatrix::identity(2 * n, 2 * n);
        // ∂q⁺/∂θ through the rotating base block.
        a[(0, 2)] = dt * (-s * vx - c * vy);
        a[(1, 2)] = dt * (c * vx - s * vy);
        // ∂q⁺/∂v = Δt G(q).
        a[(0, n)] = dt * c;
        a[(0, n + 1)] = -dt * s;
        a[(1, n)] = dt * s;
        a[(1, n + 1)] = dt * c;
        for i in 2..n {
            a[(i, n + i)] = dt;
        }

        let mut b = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            b[(n + i, i)] = dt;
        }
        (a, b)
    }

    /// One forward-kinematics sweep over all bodies.
    pub fn body_frames(&self, q: &DVector<f64>) -> Result<BodyFrames, ModelError> {
        let n = self.dof();
        if q.len() != n {
            return Err(ModelError::DimensionMismatch {
                expected: n,
                got: q.len(),
            });
        }
        let base = Isometry3::from_parts(
            Translation3::new(q[0], q[1], 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q[2]),
        );
        let mut poses = Vec::with_capacity(self.links.len() + 1);
        let mut joint_origins = Vec::with_capacity(self.links.len());
        let mut joint_axes = Vec::with_capacity(self.links.len());
        poses.push(base);
        for (i, link) in self.links.iter().enumerate() {
            let parent = &poses[i];
            let origin = parent.transform_point(&Point3::from(link.offset)).coords;
            let axis_world = parent.rotation * link.axis;
            let angle = q[BASE_DOF + i];
            let rot = parent.rotation
                * UnitQuaternion::from_axis_angle(&Unit::new_normalize(link.axis), angle);
            poses.push(Isometry3::from_parts(Translation3::from(origin), rot));
            joint_origins.push(origin);
            joint_axes.push(axis_world);
        }
        Ok(BodyFrames {
            poses,
            joint_origins,
            joint_axes,
        })
    }

    /// World position of an arbitrary body-attached point.
    pub fn point_world(
        &self,
        frames: &BodyFrames,
        body: usize,
        offset: &Vector3<f64>,
    ) -> Vector3<f64> {
        frames.poses[body]
            .transform_point(&Point3::from(*offset))
            .coords
    }

    /// World position of a named FK point, truncated to the point's task
    /// dimension.
    pub fn forward_kinematics(
        &self,
        q: &DVector<f64>,
        point_id: &str,
    ) -> Result<DVector<f64>, ModelError> {
        let point = self.fk_point(point_id)?;
        let frames = self.body_frames(q)?;
        let p = self.point_world(&frames, point.body, &point.offset);
        Ok(DVector::from_iterator(point.dim, p.iter().take(point.dim).copied()))
    }

    /// Geometric position Jacobian (3×n) of a body-attached point.
    pub fn point_jacobian(
        &self,
        frames: &BodyFrames,
        body: usize,
        offset: &Vector3<f64>,
    ) -> DMatrix<f64> {
        let n = self.dof();
        let p = self.point_world(frames, body, offset);
        let base_pos = frames.poses[0].translation.vector;
        let mut jac = DMatrix::zeros(3, n);
        jac[(0, 0)] = 1.0;
        jac[(1, 1)] = 1.0;
        let r = p - base_pos;
        // Heading column: ẑ × (p − base).
        jac[(0, 2)] = -r[1];
        jac[(1, 2)] = r[0];
        for (i, (origin, axis)) in frames
            .joint_origins
            .iter()
            .zip(frames.joint_axes.iter())
            .enumerate()
        {
            // Joint i moves bodies i+1 and beyond.
            if body >= i + 1 {
                let col = axis.cross(&(p - origin));
                jac[(0, BASE_DOF + i)] = col[0];
                jac[(1, BASE_DOF + i)] = col[1];
                jac[(2, BASE_DOF + i)] = col[2];
            }
        }
        jac
    }

    /// Analytic Jacobian of `forward_kinematics` (s×n).
    pub fn task_jacobian(
        &self,
        q: &DVector<f64>,
        point_id: &str,
    ) -> Result<DMatrix<f64>, ModelError> {
        let point = self.fk_point(point_id)?;
        let frames = self.body_frames(q)?;
        let full = self.point_jacobian(&frames, point.body, &point.offset);
        Ok(full.rows(0, point.dim).into_owned())
    }

    /// Signed distances for every (robot sphere, obstacle) pair followed by
    /// the configured self-collision pairs: `‖cᵢ − cⱼ‖ − (rᵢ + rⱼ)`.
    pub fn signed_distances(
        &self,
        q: &DVector<f64>,
        obstacles: &[WorldSphere],
    ) -> Result<DVector<f64>, ModelError> {
        let frames = self.body_frames(q)?;
        let centers: Vec<Vector3<f64>> = self
            .spheres
            .iter()
            .map(|s| self.point_world(&frames, s.body, &s.offset))
            .collect();
        let count = self.spheres.len() * obstacles.len() + self.self_collision_pairs.len();
        let mut out = DVector::zeros(count);
        let mut k = 0;
        for (sphere, center) in self.spheres.iter().zip(&centers) {
            for obs in obstacles {
                out[k] = (center - obs.center).norm() - (sphere.radius + obs.radius);
                k += 1;
            }
        }
        for &(i, j) in &self.self_collision_pairs {
            out[k] = (centers[i] - centers[j]).norm()
                - (self.spheres[i].radius + self.spheres[j].radius);
            k += 1;
        }
        Ok(out)
    }

    /// Signed distances together with their gradients with respect to `q` and
    /// the safe distance applying to each pair.
    pub fn signed_distance_terms(
        &self,
        frames: &BodyFrames,
        obstacles: &[WorldSphere],
    ) -> Vec<(f64, DVector<f64>, f64)> {
        let n = self.dof();
        let centers: Vec<Vector3<f64>> = self
            .spheres
            .iter()
            .map(|s| self.point_world(frames, s.body, &s.offset))
            .collect();
        let jacs: Vec<DMatrix<f64>> = self
            .spheres
            .iter()
            .map(|s| self.point_jacobian(frames, s.body, &s.offset))
            .collect();
        let mut out = Vec::with_capacity(
            self.spheres.len() * obstacles.len() + self.self_collision_pairs.len(),
        );
        for (i, sphere) in self.spheres.iter().enumerate() {
            for obs in obstacles {
                let diff = centers[i] - obs.center;
                let dist = diff.norm();
                let sd = dist - (sphere.radius + obs.radius);
                let mut grad = DVector::zeros(n);
                if dist > 1e-9 {
                    let dir = diff / dist;
                    grad = jacs[i].transpose() * DVector::from_column_slice(dir.as_slice());
                }
                out.push((sd, grad, self.safe_distance[i]));
            }
        }
        for &(i, j) in &self.self_collision_pairs {
            let diff = centers[i] - centers[j];
            let dist = diff.norm();
            let sd = dist - (self.spheres[i].radius + self.spheres[j].radius);
            let mut grad = DVector::zeros(n);
            if dist > 1e-9 {
                let dir = DVector::from_column_slice((diff / dist).as_slice());
                grad = jacs[i].transpose() * &dir - jacs[j].transpose() * &dir;
            }
            let safe = self.safe_distance[i].max(self.safe_distance[j]);
            out.push((sd, grad, safe));
        }
        out
    }

    /// Upper bound on the planar distance from the base origin to a named
    /// point over all arm configurations.
    pub fn max_point_reach(&self, point_id: &str) -> Result<f64, ModelError> {
        let point = self.fk_point(point_id)?;
        let mut reach = point.offset.norm();
        for link in self.links.iter().take(point.body) {
            reach += link.offset.norm();
        }
        Ok(reach)
    }

    pub fn home_state(&self) -> GeneralizedState {
        GeneralizedState::rest(self.q_home.clone())
    }

    /// Planar 5-DoF desk-scale model: holonomic base plus two revolute links.
    ///
    /// Home configuration puts the shoulder at (0.2, 0) in the base frame,
    /// link 1 (0.5 m) pointing along base-y and link 2 (0.5 m) along base-x,
    /// so the home end-effector position is (0.7, 0.5) with the base at the
    /// origin.
    pub fn planar5() -> Self {
        let links = vec![
            ArmLink {
                axis: Vector3::z(),
                offset: Vector3::new(0.2, 0.0, 0.0),
            },
            ArmLink {
                axis: Vector3::z(),
                offset: Vector3::new(0.5, 0.0, 0.0),
            },
        ];
        let fk_points = vec![
            FkPoint {
                id: "BASE".into(),
                body: 0,
                offset: Vector3::zeros(),
                dim: 2,
            },
            FkPoint {
                id: "EE".into(),
                body: 2,
                offset: Vector3::new(0.5, 0.0, 0.0),
                dim: 2,
            },
        ];
        let spheres = vec![
            CollisionSphere {
                body: 0,
                offset: Vector3::zeros(),
                radius: 0.30,
            },
            CollisionSphere {
                body: 1,
                offset: Vector3::new(0.25, 0.0, 0.0),
                radius: 0.10,
            },
            CollisionSphere {
                body: 2,
                offset: Vector3::new(0.25, 0.0, 0.0),
                radius: 0.10,
            },
            CollisionSphere {
                body: 2,
                offset: Vector3::new(0.5, 0.0, 0.0),
                radius: 0.08,
            },
        ];
        let inf = f64::INFINITY;
        // Joint ranges are centered on the home pose so the barrier gradients
        // balance there.
        let half_pi = std::f64::consts::FRAC_PI_2;
        let bounds = Bounds {
            q_lower: DVector::from_vec(vec![-8.0, -8.0, -inf, half_pi - 2.4, -half_pi - 2.4]),
            q_upper: DVector::from_vec(vec![8.0, 8.0, inf, half_pi + 2.4, -half_pi + 2.4]),
            v_lower: DVector::from_vec(vec![-1.0, -1.0, -1.5, -2.5, -2.5]),
            v_upper: DVector::from_vec(vec![1.0, 1.0, 1.5, 2.5, 2.5]),
            u_lower: DVector::from_vec(vec![-2.0, -2.0, -3.0, -6.0, -6.0]),
            u_upper: DVector::from_vec(vec![2.0, 2.0, 3.0, 6.0, 6.0]),
            du_lower: DVector::from_vec(vec![-1.0, -1.0, -1.5, -3.0, -3.0]),
            du_upper: DVector::from_vec(vec![1.0, 1.0, 1.5, 3.0, 3.0]),
        };
        let q_home = DVector::from_vec(vec![
            0.0,
            0.0,
            0.0,
            std::f64::consts::FRAC_PI_2,
            -std::f64::consts::FRAC_PI_2,
        ]);
        Self::new(
            "planar5",
            links,
            fk_points,
            spheres,
            vec![],
            bounds,
            DVector::from_element(4, 0.05),
            q_home,
        )
        .expect("built-in model is valid")
    }

    /// 9-DoF spatial model: holonomic base plus a 6-DoF arm described by
    /// per-joint axis/offset parameters.
    pub fn spatial9() -> Self {
        let links = vec![
            ArmLink {
                axis: Vector3::z(),
                offset: Vector3::new(0.15, 0.0, 0.35),
            },
            ArmLink {
                axis: Vector3::y(),
                offset: Vector3::new(0.0, 0.0, 0.18),
            },
            ArmLink {
                axis: Vector3::y(),
                offset: Vector3::new(0.6, 0.0, 0.0),
            },
            ArmLink {
                axis: Vector3::y(),
                offset: Vector3::new(0.55, 0.0, 0.0),
            },
            ArmLink {
                axis: Vector3::z(),
                offset: Vector3::new(0.12, 0.0, 0.0),
            },
            ArmLink {
                axis: Vector3::y(),
                offset: Vector3::new(0.0, 0.0, 0.10),
            },
        ];
        let fk_points = vec![
            FkPoint {
                id: "BASE".into(),
                body: 0,
                offset: Vector3::zeros(),
                dim: 2,
            },
            FkPoint {
                id: "EE".into(),
                body: 6,
                offset: Vector3::new(0.08, 0.0, 0.0),
                dim: 3,
            },
        ];
        let spheres = vec![
            CollisionSphere {
                body: 0,
                offset: Vector3::new(0.0, 0.0, 0.25),
                radius: 0.45,
            },
            CollisionSphere {
                body: 3,
                offset: Vector3::new(0.25, 0.0, 0.0),
                radius: 0.12,
            },
            CollisionSphere {
                body: 6,
                offset: Vector3::new(0.05, 0.0, 0.0),
                radius: 0.10,
            },
        ];
        let inf = f64::INFINITY;
        let n = 9;
        let q_home = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, -0.9, 1.6, -0.7, 0.5, 0.0]);
        let mut q_lower = DVector::from_fn(n, |j, _| q_home[j] - 2.4);
        let mut q_upper = DVector::from_fn(n, |j, _| q_home[j] + 2.4);
        q_lower[0] = -10.0;
        q_upper[0] = 10.0;
        q_lower[1] = -10.0;
        q_upper[1] = 10.0;
        q_lower[2] = -inf;
        q_upper[2] = inf;
        let bounds = Bounds {
            q_lower,
            q_upper,
            v_lower: DVector::from_element(n, -2.0),
            v_upper: DVector::from_element(n, 2.0),
            u_lower: DVector::from_element(n, -5.0),
            u_upper: DVector::from_element(n, 5.0),
            du_lower: DVector::from_element(n, -2.5),
            du_upper: DVector::from_element(n, 2.5),
        };
        Self::new(
            "spatial9",
            links,
            fk_points,
            spheres,
            vec![],
            bounds,
            DVector::from_element(3, 0.05),
            q_home,
        )
        .expect("built-in model is valid")
    }
}
