//! Pinhole projection, the vertical vanishing-line construction, and
//! extraction of dimensionless object heights with propagated uncertainty.
//!
//! All 3D quantities live in the dimensionless map frame produced by a
//! monocular reconstruction; pixels are the only other unit. The chain that
//! turns one (feature, detection) pair into a height observation is:
//!
//! 1. project the feature into the image and require it strictly inside the
//!    detection rectangle ([`project`]),
//! 2. build the image line through the projection and the vertical vanishing
//!    point ([`vertical_image_line`]),
//! 3. clip that line against the detection boundary ([`clip_line_to_rect`]),
//! 4. back-project both clip points and intersect the rays with the vertical
//!    3D line through the feature ([`ray_line_closest_point`]),
//! 5. take the distance between the two extremities and propagate the
//!    feature covariance through it ([`dimensionless_height`],
//!    [`height_sigma`]).
//!
//! [`make_observation`] composes the whole chain. Every function here is a
//! pure function of its inputs and safe to call from many threads.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};

/// 3D point in dimensionless map units.
pub type Point3 = nalgebra::Point3<f64>;
/// World-frame unit vector perpendicular to the ground plane.
pub type VerticalDirection = Unit<Vector3<f64>>;

/// Depth below which a point counts as behind the camera.
const MIN_DEPTH: f64 = 1e-9;
/// Directions closer than this to parallel make ray/line intersection ill-posed.
const PARALLEL_TOL: f64 = 1e-9;
/// Minimum pixel length of a line/rectangle intersection segment.
const TANGENT_TOL: f64 = 1e-6;
/// Heights below this are treated as degenerate.
const ZERO_HEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    /// Point has non-positive depth in the camera frame.
    BehindCamera,
    /// The requested image line is not defined (e.g. the feature projection
    /// coincides with a finite vertical vanishing point).
    DegenerateLine,
    /// The image line misses the detection rectangle.
    NoIntersection,
    /// The line/rectangle intersection segment is too short to be usable.
    Tangent,
    /// Back-projected ray is parallel to the vertical 3D line.
    ParallelLines,
    /// Feature projection is not strictly inside the detection rectangle.
    FeatureOutsideBox,
    /// The two extremities coincide.
    ZeroHeight,
    /// The covariance produced a negative variance along the height gradient.
    NonPositiveVariance,
    /// Covariance failed the symmetry / positive-semidefiniteness check.
    MalformedCovariance(String),
    /// Rectangle with non-positive width or height.
    EmptyRect,
    /// Rotation matrix failed the orthonormality check.
    NotARotation,
}

impl std::fmt::Display for GeometryError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GeometryError::BehindCamera => write!(f, "point is behind the camera"),
            GeometryError::DegenerateLine => write!(f, "image line is degenerate"),
            GeometryError::NoIntersection => write!(f, "line does not intersect the rectangle"),
            GeometryError::Tangent => write!(f, "line is tangent to the rectangle"),
            GeometryError::ParallelLines => write!(f, "ray and line are parallel"),
            GeometryError::FeatureOutsideBox => {
                write!(f, "feature projection is outside the detection rectangle")
            }
            GeometryError::ZeroHeight => write!(f, "object extremities coincide"),
            GeometryError::NonPositiveVariance => {
                write!(f, "covariance yields a negative height variance")
            }
            GeometryError::MalformedCovariance(reason) => {
                write!(f, "malformed covariance: {reason}")
            }
            GeometryError::EmptyRect => write!(f, "rectangle has non-positive extent"),
            GeometryError::NotARotation => write!(f, "matrix is not a proper rotation"),
        }
    }
}

impl std::error::Error for GeometryError {}

/// Calibrated pinhole intrinsics (rectified images, no distortion model).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }
}

/// Camera pose: world→camera rotation plus the camera center in map units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: UnitQuaternion<f64>,
    center: Point3,
}

impl CameraPose {
    pub fn new(rotation: UnitQuaternion<f64>, center: Point3) -> Self {
        Self { rotation, center }
    }

    /// Build from a rotation matrix, rejecting matrices that are not
    /// orthonormal with determinant +1 (each entry of RᵀR − I below 1e-9).
    pub fn from_matrix(rotation: &Matrix3<f64>, center: Point3) -> Result<Self, GeometryError> {
        let residual = rotation.transpose() * rotation - Matrix3::identity();
        if residual.iter().any(|e| e.abs() >= 1e-9) || rotation.determinant() <= 0.0 {
            return Err(GeometryError::NotARotation);
        }
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*rotation);
        Ok(Self {
            rotation: UnitQuaternion::from_rotation_matrix(&rot),
            center,
        })
    }

    /// Build from quaternion components `(w, x, y, z)`; the norm must already
    /// be within `tol` of one. The quaternion is kept bit-for-bit as given so
    /// serialization round trips exactly.
    pub fn from_quaternion(
        wxyz: [f64; 4],
        center: Point3,
        tol: f64,
    ) -> Result<Self, GeometryError> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        if (q.norm() - 1.0).abs() > tol {
            return Err(GeometryError::NotARotation);
        }
        Ok(Self {
            rotation: UnitQuaternion::new_unchecked(q),
            center,
        })
    }

    /// Camera at `eye` looking at `target`, with image-down opposite the
    /// world `up` vector (camera axes: x right, y down, z forward).
    pub fn look_at(eye: Point3, target: Point3, up: &Vector3<f64>) -> Result<Self, GeometryError> {
        let forward = (target - eye).try_normalize(1e-12).ok_or(GeometryError::NotARotation)?;
        let right = forward
            .cross(up)
            .try_normalize(1e-9)
            .ok_or(GeometryError::NotARotation)?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self::from_matrix(&rotation, eye)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn center(&self) -> &Point3 {
        &self.center
    }

    /// Map a world point into camera coordinates.
    pub fn to_camera(&self, p: &Point3) -> Vector3<f64> {
        self.rotation * (p - self.center)
    }
}

/// Image coordinates in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Image line `a·u + b·v + c = 0`, stored with `‖(a, b)‖ = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageLine {
    a: f64,
    b: f64,
    c: f64,
}

impl ImageLine {
    /// Normalize a homogeneous 3-vector into a line; fails when the line is
    /// undefined or at infinity.
    pub fn from_homogeneous(l: &Vector3<f64>) -> Result<Self, GeometryError> {
        let n = l.x.hypot(l.y);
        if !(n > 1e-12 * l.norm().max(1.0)) {
            return Err(GeometryError::DegenerateLine);
        }
        Ok(Self {
            a: l.x / n,
            b: l.y / n,
            c: l.z / n,
        })
    }

    pub fn coeffs(&self) -> (f64, f64, f64) {
        (self.a, self.b, self.c)
    }

    /// Signed distance from a pixel to the line.
    pub fn signed_distance(&self, p: &PixelPoint) -> f64 {
        self.a * p.u + self.b * p.v + self.c
    }
}

/// Half-open ray in map units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray3 {
    pub origin: Point3,
    pub direction: Unit<Vector3<f64>>,
}

impl Ray3 {
    pub fn point_at(&self, s: f64) -> Point3 {
        self.origin + s * self.direction.into_inner()
    }

    /// Distance from a point to the infinite carrier line of the ray.
    pub fn distance_to_point(&self, p: &Point3) -> f64 {
        let w = p - self.origin;
        w.cross(&self.direction).norm()
    }
}

/// Infinite line in map units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line3 {
    pub point: Point3,
    pub direction: Unit<Vector3<f64>>,
}

impl Line3 {
    pub fn point_at(&self, t: f64) -> Point3 {
        self.point + t * self.direction.into_inner()
    }
}

/// Axis-aligned pixel rectangle with positive extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRect {
    u_min: f64,
    v_min: f64,
    u_max: f64,
    v_max: f64,
}

impl PixelRect {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Result<Self, GeometryError> {
        if !(u_min < u_max && v_min < v_max) {
            return Err(GeometryError::EmptyRect);
        }
        Ok(Self {
            u_min,
            v_min,
            u_max,
            v_max,
        })
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (self.u_min, self.v_min, self.u_max, self.v_max)
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    /// Strict containment after shrinking the rectangle inward by `inset`
    /// pixels on every side.
    pub fn contains_inset(&self, p: &PixelPoint, inset: f64) -> bool {
        p.u > self.u_min + inset
            && p.u < self.u_max - inset
            && p.v > self.v_min + inset
            && p.v < self.v_max - inset
    }
}

/// One detector output: rectangle plus object class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionBox {
    pub class_id: u32,
    pub rect: PixelRect,
}

/// Reconstructed map point with its 3×3 covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEstimate {
    pub id: u64,
    pub mean: Point3,
    covariance: Matrix3<f64>,
}

impl FeatureEstimate {
    /// Validates that the covariance is symmetric (entries within 1e-12) and
    /// positive-semidefinite (eigenvalues ≥ −1e-12).
    pub fn new(id: u64, mean: Point3, covariance: Matrix3<f64>) -> Result<Self, GeometryError> {
        if mean.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::MalformedCovariance(
                "mean has non-finite coordinates".into(),
            ));
        }
        if covariance.iter().any(|e| !e.is_finite()) {
            return Err(GeometryError::MalformedCovariance(
                "covariance has non-finite entries".into(),
            ));
        }
        let asym = covariance - covariance.transpose();
        if asym.iter().any(|e| e.abs() > 1e-12) {
            return Err(GeometryError::MalformedCovariance(
                "covariance is not symmetric".into(),
            ));
        }
        let eigen = covariance.symmetric_eigenvalues();
        if eigen.iter().any(|&l| l < -1e-12) {
            return Err(GeometryError::MalformedCovariance(format!(
                "covariance has negative eigenvalue {:e}",
                eigen.iter().cloned().fold(f64::INFINITY, f64::min)
            )));
        }
        Ok(Self {
            id,
            mean,
            covariance,
        })
    }

    pub fn covariance(&self) -> &Matrix3<f64> {
        &self.covariance
    }
}

/// Vertical 3D extremities of a detected object, ordered along the vertical
/// direction used to build them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremityPair {
    pub top: Point3,
    pub bottom: Point3,
}

/// Sufficient statistic of one scale update: the dimensionless object height
/// with its standard deviation, plus provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightObservation {
    /// Dimensionless height between the two extremities.
    pub height: f64,
    /// Standard deviation of `height`, floored at the configured minimum.
    pub sigma: f64,
    pub class_id: u32,
    pub frame: u64,
    pub feature_id: u64,
}

/// Knobs of the observation construction.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ObservationConfig {
    /// Floor on the propagated height standard deviation; keeps features
    /// with near-zero covariance from producing delta-function likelihoods.
    pub sigma_min: f64,
    /// Inward margin for the strictly-inside test, in pixels.
    pub inset_px: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            sigma_min: 1e-4,
            inset_px: 1.0,
        }
    }
}

/// Pinhole projection of a map point.
pub fn project(
    p: &Point3,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
) -> Result<PixelPoint, GeometryError> {
    let pc = pose.to_camera(p);
    if pc.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera);
    }
    Ok(PixelPoint {
        u: intrinsics.fx * pc.x / pc.z + intrinsics.cx,
        v: intrinsics.fy * pc.y / pc.z + intrinsics.cy,
    })
}

/// Ray through the camera center and the given pixel, in map units.
pub fn back_project(px: &PixelPoint, pose: &CameraPose, intrinsics: &CameraIntrinsics) -> Ray3 {
    let dir_cam = Vector3::new(
        (px.u - intrinsics.cx) / intrinsics.fx,
        (px.v - intrinsics.cy) / intrinsics.fy,
        1.0,
    )
    .normalize();
    let dir_world = pose.rotation().inverse() * dir_cam;
    Ray3 {
        origin: *pose.center(),
        direction: Unit::new_normalize(dir_world),
    }
}

/// Homogeneous image of the vertical direction, `K·(R·v)`.
///
/// The third coordinate is zero when the vertical is parallel to the image
/// plane; downstream code handles that ideal point uniformly.
pub fn vertical_vanishing_point(
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    vertical: &VerticalDirection,
) -> Vector3<f64> {
    let w = pose.rotation() * vertical.into_inner();
    Vector3::new(
        intrinsics.fx * w.x + intrinsics.cx * w.z,
        intrinsics.fy * w.y + intrinsics.cy * w.z,
        w.z,
    )
}

/// Image line through `pi` whose back-projected plane contains the world
/// vertical direction: the join of `pi` with the vertical vanishing point.
pub fn vertical_image_line(
    pi: &PixelPoint,
    vvp: &Vector3<f64>,
) -> Result<ImageLine, GeometryError> {
    let l = Vector3::new(pi.u, pi.v, 1.0).cross(vvp);
    ImageLine::from_homogeneous(&l)
}

/// Intersect a line with a rectangle boundary.
///
/// Returns the two boundary points unordered; assignment to top/bottom
/// happens in 3D where camera roll cannot flip it.
pub fn clip_line_to_rect(
    line: &ImageLine,
    rect: &PixelRect,
) -> Result<(PixelPoint, PixelPoint), GeometryError> {
    let (a, b, c) = line.coeffs();
    // Point on the line closest to the origin, direction along the line.
    let p0 = (-a * c, -b * c);
    let dir = (-b, a);
    let (u_min, v_min, u_max, v_max) = rect.bounds();

    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (d, p, lo, hi) in [
        (dir.0, p0.0, u_min, u_max),
        (dir.1, p0.1, v_min, v_max),
    ] {
        if d == 0.0 {
            if p < lo || p > hi {
                return Err(GeometryError::NoIntersection);
            }
            continue;
        }
        let (ta, tb) = ((lo - p) / d, (hi - p) / d);
        let (ta, tb) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    if t0 > t1 {
        return Err(GeometryError::NoIntersection);
    }
    let enter = PixelPoint::new(p0.0 + t0 * dir.0, p0.1 + t0 * dir.1);
    let exit = PixelPoint::new(p0.0 + t1 * dir.0, p0.1 + t1 * dir.1);
    if enter.distance(&exit) < TANGENT_TOL {
        return Err(GeometryError::Tangent);
    }
    Ok((enter, exit))
}

/// 3D line through `p` parallel to the vertical direction.
pub fn vertical_line_through(p: &Point3, vertical: &VerticalDirection) -> Line3 {
    Line3 {
        point: *p,
        direction: *vertical,
    }
}

/// Point on `line` minimizing the distance to the ray's carrier line: the
/// common-perpendicular foot restricted to `line`. When the ray truly meets
/// the line this is the intersection.
pub fn ray_line_closest_point(ray: &Ray3, line: &Line3) -> Result<Point3, GeometryError> {
    let dr = ray.direction.into_inner();
    let dl = line.direction.into_inner();
    let b = dr.dot(&dl);
    let denom = 1.0 - b * b;
    if b.abs() >= 1.0 - PARALLEL_TOL {
        return Err(GeometryError::ParallelLines);
    }
    let w0 = ray.origin - line.point;
    let d = dr.dot(&w0);
    let e = dl.dot(&w0);
    let s = (e * b - d) / denom;
    let t = e + s * b;
    Ok(line.point_at(t))
}

/// Vertical 3D extremities of the object seen in `det`, constructed from the
/// feature `feat` whose projection must lie strictly inside the detection.
pub fn object_extremities(
    feat: &FeatureEstimate,
    det: &DetectionBox,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    vertical: &VerticalDirection,
    inset_px: f64,
) -> Result<ExtremityPair, GeometryError> {
    let pi = project(&feat.mean, pose, intrinsics)?;
    if !det.rect.contains_inset(&pi, inset_px) {
        return Err(GeometryError::FeatureOutsideBox);
    }
    let vvp = vertical_vanishing_point(pose, intrinsics, vertical);
    let lambda = vertical_image_line(&pi, &vvp)?;
    let (q1, q2) = clip_line_to_rect(&lambda, &det.rect)?;
    let axis = vertical_line_through(&feat.mean, vertical);
    let p1 = ray_line_closest_point(&back_project(&q1, pose, intrinsics), &axis)?;
    let p2 = ray_line_closest_point(&back_project(&q2, pose, intrinsics), &axis)?;
    if (p1 - p2).dot(vertical) >= 0.0 {
        Ok(ExtremityPair { top: p1, bottom: p2 })
    } else {
        Ok(ExtremityPair { top: p2, bottom: p1 })
    }
}

/// Euclidean distance between the extremities.
pub fn dimensionless_height(pair: &ExtremityPair) -> Result<f64, GeometryError> {
    let d = (pair.top - pair.bottom).norm();
    if d < ZERO_HEIGHT_TOL {
        return Err(GeometryError::ZeroHeight);
    }
    Ok(d)
}

/// Unit gradient of the distance function with respect to the top extremity.
pub fn height_gradient(pair: &ExtremityPair) -> Result<Vector3<f64>, GeometryError> {
    let diff = pair.top - pair.bottom;
    let d = diff.norm();
    if d < ZERO_HEIGHT_TOL {
        return Err(GeometryError::ZeroHeight);
    }
    Ok(diff / d)
}

/// Standard deviation of the height when both extremities independently carry
/// the covariance `cov`: `σ_D = sqrt(2·J·cov·Jᵀ)`.
pub fn height_sigma(pair: &ExtremityPair, cov: &Matrix3<f64>) -> Result<f64, GeometryError> {
    let j = height_gradient(pair)?;
    let q = j.dot(&(cov * j));
    if q < -1e-12 {
        return Err(GeometryError::NonPositiveVariance);
    }
    Ok((2.0 * q.max(0.0)).sqrt())
}

/// Full observation chain for one (feature, detection) pair.
///
/// Callers skip the feature on error; the per-cause counts surface in the
/// frame diagnostics.
pub fn make_observation(
    feat: &FeatureEstimate,
    det: &DetectionBox,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
    vertical: &VerticalDirection,
    frame: u64,
    config: &ObservationConfig,
) -> Result<HeightObservation, GeometryError> {
    let pair = object_extremities(feat, det, pose, intrinsics, vertical, config.inset_px)?;
    let height = dimensionless_height(&pair)?;
    let sigma = height_sigma(&pair, feat.covariance())?.max(config.sigma_min);
    Ok(HeightObservation {
        height,
        sigma,
        class_id: det.class_id,
        frame,
        feature_id: feat.id,
    })
}
