//! ROI geometry: homography estimation from keypoint correspondences,
//! projective warping to the 224x224 ROI, and thin-plate-spline warps.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::image::{Image, RoiImage, ROI_SIZE};

pub const KEYPOINT_COUNT: usize = 9;

pub type Point = [f64; 2];

/// Default ROI-frame destinations: the eight boundary points (corners and
/// edge midpoints, clockwise from top-left) of the central 160x160 square,
/// then its center.
pub const DEFAULT_DESTINATION: [Point; KEYPOINT_COUNT] = [
    [32.0, 32.0],
    [112.0, 32.0],
    [192.0, 32.0],
    [192.0, 112.0],
    [192.0, 192.0],
    [112.0, 192.0],
    [32.0, 192.0],
    [32.0, 112.0],
    [112.0, 112.0],
];

fn all_collinear(points: &[Point]) -> bool {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p[0] / n, y + p[1] / n));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    // Smallest eigenvalue of the scatter matrix relative to its trace.
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let min_eig = tr / 2.0 - disc;
    tr == 0.0 || min_eig <= 1e-12 * tr
}

/// Nine palm-boundary keypoints in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointSet([Point; KEYPOINT_COUNT]);

impl KeypointSet {
    pub fn new(points: [Point; KEYPOINT_COUNT]) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateKeypoints("non-finite coordinate".into()));
        }
        if all_collinear(&points) {
            return Err(Error::DegenerateKeypoints("all keypoints collinear".into()));
        }
        Ok(Self(points))
    }

    pub fn default_destination() -> Self {
        Self(DEFAULT_DESTINATION)
    }

    pub fn points(&self) -> &[Point; KEYPOINT_COUNT] {
        &self.0
    }

    /// Parses `x0,y0,...,x8,y8`.
    pub fn parse_row(row: &str) -> Result<Self> {
        let values = row
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("keypoint row {row:?}: {e}")))?;
        if values.len() != 2 * KEYPOINT_COUNT {
            return Err(Error::Parse(format!(
                "keypoint row has {} values, expected {}",
                values.len(),
                2 * KEYPOINT_COUNT
            )));
        }
        let mut pts = [[0.0; 2]; KEYPOINT_COUNT];
        for (i, p) in pts.iter_mut().enumerate() {
            *p = [values[2 * i], values[2 * i + 1]];
        }
        Self::new(pts)
    }

    /// One keypoint set per non-empty line; a non-numeric first line is treated as a header.
    pub fn parse_csv(text: &str) -> Result<Vec<Self>> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty()).peekable();
        if let Some(first) = lines.peek() {
            if first.split(',').next().is_some_and(|f| f.trim().parse::<f64>().is_err()) {
                lines.next();
            }
        }
        lines.map(Self::parse_row).collect()
    }
}

/// Projective transform, normalized so the bottom-right entry is 1 when nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularHomography);
        }
        let m = if m[(2, 2)].abs() > 1e-15 { m / m[(2, 2)] } else { m };
        if m.determinant().abs() <= 1e-12 {
            return Err(Error::SingularHomography);
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, p: Point) -> Point {
        let v = self.0 * Vector3::new(p[0], p[1], 1.0);
        [v[0] / v[2], v[1] / v[2]]
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self.0.try_inverse().ok_or(Error::SingularHomography)?;
        Self::from_matrix(inv)
    }
}

/// Similarity transform taking the points' centroid to the origin and their
/// mean distance from it to sqrt(2).
fn normalizing_transform(points: &[Point]) -> Result<Matrix3<f64>> {
    let n = points.len() as f64;
    let (cx, cy) = points
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p[0] / n, y + p[1] / n));
    let mean_dist = points
        .iter()
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 0.0) {
        return Err(Error::DegenerateKeypoints("coincident points".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(m: &Matrix3<f64>, p: Point) -> Point {
    let v = m * Vector3::new(p[0], p[1], 1.0);
    [v[0] / v[2], v[1] / v[2]]
}

/// Least-squares DLT over any number (>= 4) of correspondences with
/// coordinate pre-normalization.
pub fn estimate_homography_points(src: &[Point], dst: &[Point]) -> Result<Homography> {
    if src.len() != dst.len() {
        return Err(Error::DimMismatch {
            expected: src.len(),
            actual: dst.len(),
        });
    }
    if src.len() < 4 {
        return Err(Error::DegenerateKeypoints("need at least 4 correspondences".into()));
    }
    let ts = normalizing_transform(src)?;
    let td = normalizing_transform(dst)?;
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let [x, y] = transform(&ts, *s);
        let [u, v] = transform(&td, *d);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    // A^T A shares right singular vectors with A and keeps the SVD square.
    let svd = (a.transpose() * &a).svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::DegenerateKeypoints("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[8]];
    let second = svd.singular_values[order[1]];
    if !(second > 1e-14 * largest) {
        return Err(Error::DegenerateKeypoints(
            "correspondences do not determine a unique homography".into(),
        ));
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or(Error::SingularHomography)?;
    Homography::from_matrix(td_inv * hn * ts)
        .map_err(|_| Error::DegenerateKeypoints("estimated homography is singular".into()))
}

/// Homography taking the nine source keypoints onto the nine destinations.
pub fn estimate_homography(src: &KeypointSet, dst: &KeypointSet) -> Result<Homography> {
    estimate_homography_points(src.points(), dst.points())
}

/// Resamples `img` into a `width x height` frame: each output pixel is
/// inverse-mapped through `h` and sampled bilinearly (zero outside).
pub fn warp_image(img: &Image, h: &Homography, width: usize, height: usize) -> Result<Image> {
    let inv = h.inverse()?;
    let mut out = Image::new(width, height, img.channels());
    for y in 0..height {
        for x in 0..width {
            let [sx, sy] = inv.apply([x as f64, y as f64]);
            for c in 0..img.channels() {
                out.set(x, y, c, img.sample_bilinear(sx, sy, c));
            }
        }
    }
    Ok(out)
}

/// Warps a source image (grayscale-converted) into the 224x224 ROI frame.
pub fn warp_to_roi(img: &Image, h: &Homography) -> Result<RoiImage> {
    if img.width() < 8 || img.height() < 8 {
        return Err(Error::InvalidImage(format!(
            "source {}x{} smaller than 8x8",
            img.width(),
            img.height()
        )));
    }
    let warped = warp_image(&img.to_gray(), h, ROI_SIZE, ROI_SIZE)?;
    RoiImage::from_image_lossy(&warped)
}

/// Thin-plate spline radial basis `r^2 log r^2`, with `U(0) = 0`.
fn tps_kernel(r2: f64) -> f64 {
    if r2 == 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// 2-D thin-plate-spline map fitted to control point pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsWarp {
    control: Vec<Point>,
    /// Radial coefficients per control point, `[x, y]`.
    radial: Vec<Point>,
    /// Affine part: rows `[a0, ax, ay]` for the x and y outputs.
    affine: [[f64; 3]; 2],
    lambda: f64,
}

impl TpsWarp {
    pub fn control_points(&self) -> &[Point] {
        &self.control
    }

    pub fn radial(&self) -> &[Point] {
        &self.radial
    }

    pub fn affine(&self) -> [[f64; 3]; 2] {
        self.affine
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn apply(&self, p: Point) -> Point {
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            let a = self.affine[k];
            *o = a[0] + a[1] * p[0] + a[2] * p[1];
        }
        for (c, w) in self.control.iter().zip(&self.radial) {
            let u = tps_kernel(dist2(p, *c));
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }

    /// `trace(W^T K W)` over the radial coefficients.
    pub fn bending_energy(&self) -> f64 {
        let n = self.control.len();
        let mut e = 0.0;
        for i in 0..n {
            for j in 0..n {
                let k = tps_kernel(dist2(self.control[i], self.control[j]));
                e += k * (self.radial[i][0] * self.radial[j][0] + self.radial[i][1] * self.radial[j][1]);
            }
        }
        e
    }
}

/// Solves the TPS system `[K + lambda I, P; P^T, 0] [W; A] = [dst; 0]`.
/// At `lambda = 0` the warp interpolates the control points.
pub fn fit_tps(src: &[Point], dst: &[Point], lambda: f64) -> Result<TpsWarp> {
    let degenerate = |m: &str| Err(Error::DegenerateControlPoints(m.into()));
    if src.len() != dst.len() {
        return Err(Error::DimMismatch {
            expected: src.len(),
            actual: dst.len(),
        });
    }
    if src.len() < 3 {
        return degenerate("need at least 3 control points");
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("TPS regularization {lambda} must be >= 0")));
    }
    if src.iter().chain(dst).flatten().any(|v| !v.is_finite()) {
        return degenerate("non-finite coordinate");
    }
    if all_collinear(src) {
        return degenerate("control points are collinear");
    }
    for i in 0..src.len() {
        if src[i + 1..].iter().any(|q| *q == src[i]) {
            return degenerate("duplicate control point");
        }
    }
    let n = src.len();
    let mut l = DMatrix::<f64>::zeros(n + 3, n + 3);
    let mut rhs = DMatrix::<f64>::zeros(n + 3, 2);
    for i in 0..n {
        for j in 0..n {
            l[(i, j)] = tps_kernel(dist2(src[i], src[j]));
        }
        l[(i, i)] += lambda;
        let row = [1.0, src[i][0], src[i][1]];
        for (k, &v) in row.iter().enumerate() {
            l[(i, n + k)] = v;
            l[(n + k, i)] = v;
        }
        rhs[(i, 0)] = dst[i][0];
        rhs[(i, 1)] = dst[i][1];
    }
    let sol = l
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::DegenerateControlPoints("singular TPS system".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return degenerate("singular TPS system");
    }
    let radial = (0..n).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect();
    let affine = [
        [sol[(n, 0)], sol[(n + 1, 0)], sol[(n + 2, 0)]],
        [sol[(n, 1)], sol[(n + 1, 1)], sol[(n + 2, 1)]],
    ];
    Ok(TpsWarp {
        control: src.to_vec(),
        radial,
        affine,
        lambda,
    })
}

/// Resamples an image through a TPS: output pixel `p` takes the bilinear
/// sample of the input at `warp(p)` (zero outside).
pub fn apply_tps_image(warp: &TpsWarp, img: &Image) -> Image {
    let mut out = Image::new(img.width(), img.height(), img.channels());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let [sx, sy] = warp.apply([x as f64, y as f64]);
            for c in 0..img.channels() {
                out.set(x, y, c, img.sample_bilinear(sx, sy, c));
            }
        }
    }
    out
}

pub fn apply_tps(warp: &TpsWarp, roi: &RoiImage) -> RoiImage {
    RoiImage::from_image_lossy(&apply_tps_image(warp, roi.image()))
        .expect("resampling keeps ROI dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keypoints(f: impl Fn(Point) -> Point) -> (KeypointSet, KeypointSet) {
        let src = [
            [40.0, 50.0],
            [120.0, 45.0],
            [200.0, 60.0],
            [210.0, 130.0],
            [190.0, 210.0],
            [115.0, 220.0],
            [35.0, 200.0],
            [30.0, 120.0],
            [118.0, 128.0],
        ];
        let dst = src.map(&f);
        (KeypointSet::new(src).unwrap(), KeypointSet::new(dst).unwrap())
    }

    #[test]
    fn identity_and_translation_recovery() {
        let (s, d) = keypoints(|p| p);
        let h = estimate_homography(&s, &d).unwrap();
        assert!((h.matrix() - Matrix3::identity()).abs().max() < 1e-9);

        let (s, d) = keypoints(|p| [p[0] + 10.0, p[1] + 5.0]);
        let h = estimate_homography(&s, &d).unwrap();
        assert!((h.matrix() - Homography::translation(10.0, 5.0).matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn collinear_keypoints_rejected() {
        let line = std::array::from_fn(|i| [i as f64, 2.0 * i as f64]);
        assert!(matches!(KeypointSet::new(line), Err(Error::DegenerateKeypoints(_))));
    }

    #[test]
    fn keypoint_csv() {
        let text = "x0,y0,x1,y1,x2,y2,x3,y3,x4,y4,x5,y5,x6,y6,x7,y7,x8,y8\n\
                    32,32,112,32,192,32,192,112,192,192,112,192,32,192,32,112,112,112\n";
        let sets = KeypointSet::parse_csv(text).unwrap();
        assert_eq!(sets, vec![KeypointSet::default_destination()]);
        assert!(KeypointSet::parse_row("1,2,3").is_err());
    }

    #[test]
    fn identity_warp_is_pixel_exact() {
        let img = Image::from_fn(224, 224, |x, y| ((x * 7 + y * 3) % 255) as f32 / 255.0);
        let roi = warp_to_roi(&img, &Homography::identity()).unwrap();
        assert_eq!(roi.image(), &img);
    }

    #[test]
    fn translation_warp_shifts_and_zero_fills() {
        let img = Image::from_fn(224, 224, |x, y| 0.2 + 0.6 * ((x + y) % 2) as f32);
        let roi = warp_to_roi(&img, &Homography::translation(10.0, 5.0)).unwrap();
        let out = roi.image();
        for y in 0..224 {
            for x in 0..224 {
                let expected = if x >= 10 && y >= 5 { img.get(x - 10, y - 5, 0) } else { 0.0 };
                assert_eq!(out.get(x, y, 0), expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn singular_homography_rejected() {
        let m = Matrix3::new(1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(Homography::from_matrix(m), Err(Error::SingularHomography)));
        assert!(warp_to_roi(&Image::new(4, 4, 1), &Homography::identity()).is_err());
    }

    #[test]
    fn tps_zero_displacement_is_identity() {
        let pts = [[10.0, 10.0], [100.0, 20.0], [50.0, 90.0], [150.0, 160.0]];
        let w = fit_tps(&pts, &pts, 0.0).unwrap();
        assert!(w.radial().iter().flatten().all(|v| v.abs() < 1e-9));
        let a = w.affine();
        for (got, want) in a.iter().flatten().zip([0.0, 1.0, 0.0, 0.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-9);
        }
        let p = w.apply([77.0, 33.0]);
        assert!((p[0] - 77.0).abs() < 1e-9 && (p[1] - 33.0).abs() < 1e-9);
    }

    #[test]
    fn tps_three_points_is_affine() {
        let src = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let dst = [[1.0, 2.0], [12.0, 3.0], [0.5, 13.0]];
        let w = fit_tps(&src, &dst, 0.0).unwrap();
        assert!(w.radial().iter().flatten().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn tps_degenerate_inputs() {
        let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        assert!(matches!(fit_tps(&line, &line, 0.0), Err(Error::DegenerateControlPoints(_))));
        let dup = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        assert!(matches!(fit_tps(&dup, &dup, 0.0), Err(Error::DegenerateControlPoints(_))));
        assert!(fit_tps(&line[..2], &line[..2], 0.0).is_err());
    }
}
