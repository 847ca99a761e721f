//! Tracks, ego-frame transforms and sample windows.
//!
//! The ego frame is anchored at the pedestrian's current position with the
//! +x axis along the current direction of motion. Inputs and ground-truth
//! futures are both expressed in that frame before they reach the model.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::spline::CubicSpline;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl TrackPoint {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        Self { t, x, y }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Timestamped world positions of one pedestrian.
///
/// Invariants (checked by [`Track::new`]): at least two samples, strictly
/// increasing timestamps, finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    id: String,
    points: Vec<TrackPoint>,
}

impl Track {
    pub fn new(id: impl Into<String>, points: Vec<TrackPoint>) -> Result<Self> {
        let id = id.into();
        if points.len() < 2 {
            return Err(Error::invalid_track(&id, "needs at least 2 samples"));
        }
        if let Some(p) = points
            .iter()
            .find(|p| !(p.t.is_finite() && p.x.is_finite() && p.y.is_finite()))
        {
            return Err(Error::invalid_track(
                &id,
                format!("non-finite sample at t={}", p.t),
            ));
        }
        if let Some(w) = points.windows(2).find(|w| w[1].t <= w[0].t) {
            return Err(Error::invalid_track(
                &id,
                format!("timestamps not strictly increasing at t={}", w[1].t),
            ));
        }
        Ok(Self { id, points })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.points[self.points.len() - 1].t - self.points[0].t
    }

    pub fn positions(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.points.iter().map(TrackPoint::position)
    }
}

/// World pose of the ego frame: the current position and motion heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorPose {
    pub origin: [f64; 2],
    /// Radians in `[-pi, pi)`.
    pub heading: f64,
}

impl AnchorPose {
    pub fn new(origin: [f64; 2], heading: f64) -> Self {
        Self {
            origin,
            heading: normalize_angle(heading),
        }
    }

    pub fn identity() -> Self {
        Self::new([0.0, 0.0], 0.0)
    }

    /// `R(-heading) * (p - origin)`.
    pub fn to_ego(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        let dx = p[0] - self.origin[0];
        let dy = p[1] - self.origin[1];
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// `R(heading) * e + origin`.
    pub fn to_world(&self, e: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [
            c * e[0] - s * e[1] + self.origin[0],
            s * e[0] + c * e[1] + self.origin[1],
        ]
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

pub fn world_to_ego(points: &[[f64; 2]], anchor: &AnchorPose) -> Vec<[f64; 2]> {
    points.iter().map(|&p| anchor.to_ego(p)).collect()
}

pub fn ego_to_world(points: &[[f64; 2]], anchor: &AnchorPose) -> Vec<[f64; 2]> {
    points.iter().map(|&p| anchor.to_world(p)).collect()
}

/// Resamples `track` on a uniform grid at `rate_hz` starting at its first
/// timestamp, interpolating x and y independently with a cubic spline.
pub fn resample_track(track: &Track, rate_hz: f64) -> Result<Track> {
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "resample rate must be positive, got {rate_hz}"
        )));
    }
    let dt = 1.0 / rate_hz;
    let duration = track.duration();
    if duration < 2.0 * dt - 1e-9 {
        return Err(Error::TrackTooShort {
            track_id: track.id.clone(),
            duration_s: duration,
            required_s: 2.0 * dt,
        });
    }
    let t: Vec<f64> = track.points.iter().map(|p| p.t).collect();
    let xs: Vec<f64> = track.points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = track.points.iter().map(|p| p.y).collect();
    let (Some(sx), Some(sy)) = (CubicSpline::new(&t, &xs), CubicSpline::new(&t, &ys)) else {
        return Err(Error::invalid_track(&track.id, "cannot fit spline"));
    };
    let t0 = t[0];
    let steps = (duration * rate_hz + 1e-6).floor() as usize;
    let points = (0..=steps)
        .map(|k| {
            let tk = t0 + k as f64 * dt;
            TrackPoint::new(tk, sx.eval(tk), sy.eval(tk))
        })
        .collect();
    Track::new(track.id.clone(), points)
}

/// One model sample: the ego-frame observation window and ground-truth
/// future, plus the world anchor they were expressed relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoSample {
    pub track_id: String,
    pub anchor: AnchorPose,
    pub dt: f64,
    /// `(x, y, vx, vy)` per input step, oldest first, last position at the origin.
    pub input: Vec<[f64; 4]>,
    pub future_gt: Vec<[f64; 2]>,
}

impl EgoSample {
    /// Keeps only the most recent `len` input steps.
    pub fn truncate_input(&self, len: usize) -> EgoSample {
        let len = len.clamp(1, self.input.len());
        EgoSample {
            input: self.input[self.input.len() - len..].to_vec(),
            ..self.clone()
        }
    }

    pub fn future_world(&self) -> Vec<[f64; 2]> {
        ego_to_world(&self.future_gt, &self.anchor)
    }
}

/// Heading of the last non-negligible step, scanning backwards from the end of
/// `positions`; zero for a stationary sequence.
fn motion_heading(positions: &[[f64; 2]]) -> f64 {
    positions
        .windows(2)
        .rev()
        .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]])
        .find(|d| d[0].hypot(d[1]) > 1e-12)
        .map_or(0.0, |d| d[1].atan2(d[0]))
}

/// Finite-difference velocities: central in the interior, one-sided at the ends.
fn finite_difference_velocity(positions: &[[f64; 2]], dt: f64) -> Vec<[f64; 2]> {
    let n = positions.len();
    (0..n)
        .map(|i| {
            let (a, b, span) = match (i, n) {
                (_, 1) => return [0.0, 0.0],
                (0, _) => (0, 1, dt),
                (i, n) if i == n - 1 => (i - 1, i, dt),
                (i, _) => (i - 1, i + 1, 2.0 * dt),
            };
            [
                (positions[b][0] - positions[a][0]) / span,
                (positions[b][1] - positions[a][1]) / span,
            ]
        })
        .collect()
}

fn window_sample(
    track: &Track,
    world: &[[f64; 2]],
    start: usize,
    n_in: usize,
    m_fc: usize,
    dt: f64,
) -> EgoSample {
    let input_world = &world[start..start + n_in];
    let future_world = &world[start + n_in..start + n_in + m_fc];
    let anchor = AnchorPose::new(input_world[n_in - 1], motion_heading(input_world));
    let mut input_ego = world_to_ego(input_world, &anchor);
    input_ego[n_in - 1] = [0.0, 0.0];
    let vel = finite_difference_velocity(&input_ego, dt);
    EgoSample {
        track_id: track.id.clone(),
        anchor,
        dt,
        input: input_ego
            .iter()
            .zip(&vel)
            .map(|(p, v)| [p[0], p[1], v[0], v[1]])
            .collect(),
        future_gt: world_to_ego(future_world, &anchor),
    }
}

/// Sliding windows of `n_in + m_fc` samples over a uniformly sampled track.
///
/// The anchor is the last input point; its heading is the direction of the
/// final input step (falling back to the latest moving input step, then 0).
/// Velocities only use input positions, so nothing leaks from the future.
pub fn make_samples(track: &Track, n_in: usize, m_fc: usize, stride: usize) -> Vec<EgoSample> {
    let window = n_in + m_fc;
    if n_in < 2 || m_fc == 0 || stride == 0 || track.len() < window {
        return Vec::new();
    }
    let dt = track.points[1].t - track.points[0].t;
    let world: Vec<[f64; 2]> = track.positions().collect();
    (0..=track.len() - window)
        .step_by(stride)
        .map(|start| window_sample(track, &world, start, n_in, m_fc, dt))
        .collect()
}

/// Input-only windows with an empty future, aligned so the last one ends at
/// the track's final point. Used for prediction on unseen tracks.
pub fn make_inputs(track: &Track, n_in: usize, stride: usize) -> Vec<EgoSample> {
    if n_in < 2 || stride == 0 || track.len() < n_in {
        return Vec::new();
    }
    let dt = track.points[1].t - track.points[0].t;
    let world: Vec<[f64; 2]> = track.positions().collect();
    let mut starts: Vec<usize> = (0..=track.len() - n_in).rev().step_by(stride).collect();
    starts.reverse();
    starts
        .into_iter()
        .map(|start| window_sample(track, &world, start, n_in, 0, dt))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn track_from(f: impl Fn(f64) -> (f64, f64), rate: f64, n: usize) -> Track {
        let pts = (0..n)
            .map(|k| {
                let t = k as f64 / rate;
                let (x, y) = f(t);
                TrackPoint::new(t, x, y)
            })
            .collect();
        Track::new("t", pts).unwrap()
    }

    #[test]
    fn track_validation() {
        let ok = vec![
            TrackPoint::new(0.0, 0.0, 0.0),
            TrackPoint::new(0.1, 1.0, 0.0),
        ];
        assert!(Track::new("a", ok.clone()).is_ok());
        assert!(matches!(
            Track::new("a", ok[..1].to_vec()),
            Err(Error::InvalidTrack { .. })
        ));
        let dup = vec![
            TrackPoint::new(0.0, 0.0, 0.0),
            TrackPoint::new(0.0, 1.0, 0.0),
        ];
        assert!(matches!(
            Track::new("a", dup),
            Err(Error::InvalidTrack { .. })
        ));
        let nan = vec![
            TrackPoint::new(0.0, f64::NAN, 0.0),
            TrackPoint::new(0.1, 1.0, 0.0),
        ];
        assert!(matches!(
            Track::new("a", nan),
            Err(Error::InvalidTrack { .. })
        ));
    }

    #[test]
    fn transform_examples() {
        let p = AnchorPose::identity().to_ego([1.0, 2.0]);
        assert_eq!(p, [1.0, 2.0]);
        let a = AnchorPose::new([5.0, 5.0], FRAC_PI_2);
        let e = a.to_ego([5.0, 6.0]);
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], 0.0, epsilon = 1e-12);
        assert_eq!(
            ego_to_world(&[[1.5, -2.0]], &AnchorPose::identity()),
            vec![[1.5, -2.0]]
        );
    }

    #[test]
    fn heading_normalization() {
        assert_eq!(normalize_angle(PI), -PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-FRAC_PI_2), -FRAC_PI_2, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn ego_roundtrip_and_rigidity(
            ox in -1e3..1e3f64, oy in -1e3..1e3f64, h in -10.0..10.0f64,
            px in -1e3..1e3f64, py in -1e3..1e3f64, qx in -1e3..1e3f64, qy in -1e3..1e3f64,
        ) {
            let a = AnchorPose::new([ox, oy], h);
            prop_assert!((-PI..PI).contains(&a.heading));
            let back = a.to_world(a.to_ego([px, py]));
            prop_assert!((back[0] - px).abs() < 1e-9 && (back[1] - py).abs() < 1e-9);
            let (ep, eq) = (a.to_ego([px, py]), a.to_ego([qx, qy]));
            let dw = (px - qx).hypot(py - qy);
            let de = (ep[0] - eq[0]).hypot(ep[1] - eq[1]);
            prop_assert!((dw - de).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_cubic_track_is_exact() {
        let f = |t: f64| (t * t * t - 2.0 * t, 0.5 * t * t);
        let track = track_from(f, 2.5, 11);
        let out = resample_track(&track, 10.0).unwrap();
        assert_eq!(out.len(), 41);
        for p in out.points() {
            let (x, y) = f(p.t);
            assert!((p.x - x).abs() < 1e-6 && (p.y - y).abs() < 1e-6);
        }
    }

    #[test]
    fn resample_identity_and_idempotence() {
        let track = track_from(|t| (t.sin(), (0.7 * t).cos()), 10.0, 50);
        let out = resample_track(&track, 10.0).unwrap();
        assert_eq!(out.len(), track.len());
        for (a, b) in out.points().iter().zip(track.points()) {
            assert!(
                (a.t - b.t).abs() < 1e-9 && (a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9
            );
        }
        let twice = resample_track(&out, 10.0).unwrap();
        assert_eq!(twice, out);
    }

    #[test]
    fn resample_linear_motion_has_constant_step() {
        let v = [1.2, -0.4];
        let track = track_from(|t| (3.0 + v[0] * t, -1.0 + v[1] * t), 2.0, 9);
        let out = resample_track(&track, 10.0).unwrap();
        assert_eq!(out.len(), 41);
        for w in out.points().windows(2) {
            assert_abs_diff_eq!(w[1].x - w[0].x, v[0] * 0.1, epsilon = 1e-12);
            assert_abs_diff_eq!(w[1].y - w[0].y, v[1] * 0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn resample_rejects_short_track() {
        let track = track_from(|t| (t, 0.0), 20.0, 3);
        assert!(matches!(
            resample_track(&track, 10.0),
            Err(Error::TrackTooShort { .. })
        ));
        assert!(resample_track(&track, 0.0).is_err());
    }

    #[test]
    fn window_counts() {
        let track = track_from(|t| (t, 0.0), 10.0, 80);
        assert_eq!(make_samples(&track, 32, 48, 1).len(), 1);
        let track = track_from(|t| (t, 0.0), 10.0, 100);
        assert_eq!(make_samples(&track, 32, 48, 1).len(), 21);
        assert_eq!(make_samples(&track, 32, 48, 10).len(), 3);
        let short = track_from(|t| (t, 0.0), 10.0, 79);
        assert!(make_samples(&short, 32, 48, 1).is_empty());
    }

    #[test]
    fn constant_velocity_future_on_x_axis() {
        let track = track_from(|t| (10.0 - 0.9 * t, 4.0 + 1.1 * t), 10.0, 100);
        let speed = 0.9f64.hypot(1.1);
        for s in make_samples(&track, 32, 48, 3) {
            assert_eq!(s.input.len(), 32);
            assert_eq!(s.input[31][..2], [0.0, 0.0]);
            for (k, p) in s.future_gt.iter().enumerate() {
                assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-9);
                assert_abs_diff_eq!(p[0], speed * 0.1 * (k + 1) as f64, epsilon = 1e-9);
            }
            for f in &s.input {
                assert_abs_diff_eq!(f[2], speed, epsilon = 1e-9);
                assert_abs_diff_eq!(f[3], 0.0, epsilon = 1e-9);
            }
            let back = s.future_world();
            let orig = track
                .points()
                .iter()
                .find(|p| (p.x - back[0][0]).abs() < 1e-9);
            assert!(orig.is_some());
        }
    }

    #[test]
    fn stationary_heading_fallbacks() {
        // Moves, then stands still for the last input steps.
        let mut pts: Vec<TrackPoint> = (0..5)
            .map(|k| TrackPoint::new(k as f64 * 0.1, 0.0, k as f64 * 0.1))
            .collect();
        pts.extend((5..10).map(|k| TrackPoint::new(k as f64 * 0.1, 0.0, 0.4)));
        let track = Track::new("stop", pts).unwrap();
        let s = &make_samples(&track, 8, 2, 1)[0];
        assert_abs_diff_eq!(s.anchor.heading, FRAC_PI_2, epsilon = 1e-12);

        let still = track_from(|_| (2.0, 3.0), 10.0, 10);
        let s = &make_samples(&still, 8, 2, 1)[0];
        assert_eq!(s.anchor.heading, 0.0);
        assert!(s.input.iter().all(|f| f.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn truncate_keeps_latest_steps() {
        let track = track_from(|t| (t, 0.5 * t), 10.0, 20);
        let s = &make_samples(&track, 10, 5, 1)[0];
        let t = s.truncate_input(3);
        assert_eq!(t.input, s.input[7..].to_vec());
        assert_eq!(t.future_gt, s.future_gt);
    }

    #[test]
    fn input_windows_end_at_the_last_point() {
        let t = track_from(|t| (t, 0.5 * t), 10.0, 25);
        let w = make_inputs(&t, 8, 5);
        assert_eq!(w.len(), 4);
        assert!(w
            .iter()
            .all(|s| s.future_gt.is_empty() && s.input.len() == 8));
        let last = w.last().unwrap();
        assert_abs_diff_eq!(last.anchor.origin[0], 2.4, epsilon = 1e-12);
        let full = make_samples(&t, 8, 2, 1);
        let same = full
            .iter()
            .find(|s| (s.anchor.origin[0] - w[0].anchor.origin[0]).abs() < 1e-12)
            .unwrap();
        assert_eq!(same.input, w[0].input);
    }
}
