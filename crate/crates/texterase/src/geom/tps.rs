//! Thin-plate-spline warps for rectifying curved text regions.

use super::{solve_linear, GeomError};
use crate::imagecore::ImageBuffer;

/// TPS kernel U(r) = r² log(r²), with U(0) = 0.
fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 1e-20 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// A fitted thin-plate spline mapping source control points onto target
/// control points exactly, with minimal bending energy in between.
#[derive(Clone, Debug)]
pub struct TpsWarp {
    pub source: Vec<(f64, f64)>,
    pub target: Vec<(f64, f64)>,
    /// Affine part per output axis: [a0, ax, ay].
    pub affine: [[f64; 3]; 2],
    /// Kernel weights per output axis, one per control point.
    pub weights: [Vec<f64>; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TpsDirection {
    /// The warp maps output coordinates to input coordinates: sample directly.
    Inverse,
    /// The warp maps input to output; a dual fit (target→source) is used
    /// for sampling.
    Forward,
}

/// Fit a TPS interpolating src_pts -> dst_pts. Needs at least 3
/// non-collinear, pairwise distinct control points per boundary (6 total).
pub fn fit_tps(src_pts: &[(f64, f64)], dst_pts: &[(f64, f64)]) -> Result<TpsWarp, GeomError> {
    let n = src_pts.len();
    if n != dst_pts.len() {
        return Err(GeomError::ShapeMismatch(format!(
            "{} source vs {} target control points",
            n,
            dst_pts.len()
        )));
    }
    if n < 3 {
        return Err(GeomError::SingularSystem("need at least 3 control points".into()));
    }
    for i in 0..n {
        for j in i + 1..n {
            let d2 = (src_pts[i].0 - src_pts[j].0).powi(2) + (src_pts[i].1 - src_pts[j].1).powi(2);
            if d2 < 1e-12 {
                return Err(GeomError::SingularSystem(format!(
                    "duplicate control points {i} and {j}"
                )));
            }
        }
    }

    // [ K   P ] [w]   [v]
    // [ Pᵀ  0 ] [a] = [0],  P = [1 x y]
    let dim = n + 3;
    let mut a = vec![0.0; dim * dim];
    for i in 0..n {
        for j in 0..n {
            let r2 = (src_pts[i].0 - src_pts[j].0).powi(2) + (src_pts[i].1 - src_pts[j].1).powi(2);
            a[i * dim + j] = tps_kernel(r2);
        }
        a[i * dim + n] = 1.0;
        a[i * dim + n + 1] = src_pts[i].0;
        a[i * dim + n + 2] = src_pts[i].1;
        a[n * dim + i] = 1.0;
        a[(n + 1) * dim + i] = src_pts[i].0;
        a[(n + 2) * dim + i] = src_pts[i].1;
    }
    let mut b = vec![0.0; dim * 2];
    for i in 0..n {
        b[i * 2] = dst_pts[i].0;
        b[i * 2 + 1] = dst_pts[i].1;
    }
    solve_linear(&mut a, dim, &mut b, 2)?;

    let mut weights = [vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        weights[0][i] = b[i * 2];
        weights[1][i] = b[i * 2 + 1];
    }
    let affine = [
        [b[n * 2], b[(n + 1) * 2], b[(n + 2) * 2]],
        [b[n * 2 + 1], b[(n + 1) * 2 + 1], b[(n + 2) * 2 + 1]],
    ];
    let warp = TpsWarp {
        source: src_pts.to_vec(),
        target: dst_pts.to_vec(),
        affine,
        weights,
    };
    // interpolation must be exact at the control points
    for (s, d) in src_pts.iter().zip(dst_pts.iter()) {
        let (u, v) = warp.apply(s.0, s.1);
        if (u - d.0).hypot(v - d.1) > 1e-6 {
            return Err(GeomError::SingularSystem(
                "fit failed to interpolate control points".into(),
            ));
        }
    }
    Ok(warp)
}

impl TpsWarp {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let mut out = [0.0; 2];
        for axis in 0..2 {
            let a = &self.affine[axis];
            let mut acc = a[0] + a[1] * x + a[2] * y;
            for (w, p) in self.weights[axis].iter().zip(self.source.iter()) {
                let r2 = (x - p.0).powi(2) + (y - p.1).powi(2);
                acc += w * tps_kernel(r2);
            }
            out[axis] = acc;
        }
        (out[0], out[1])
    }

    /// Fit the dual spline (target→source), used to invert the map.
    pub fn dual(&self) -> Result<TpsWarp, GeomError> {
        fit_tps(&self.target, &self.source)
    }

    /// Max violation of the side conditions Σw = Σw·x = Σw·y = 0.
    pub fn side_condition_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for axis in 0..2 {
            let mut s0 = 0.0;
            let mut sx = 0.0;
            let mut sy = 0.0;
            for (w, p) in self.weights[axis].iter().zip(self.source.iter()) {
                s0 += w;
                sx += w * p.0;
                sy += w * p.1;
            }
            worst = worst.max(s0.abs()).max(sx.abs()).max(sy.abs());
        }
        worst
    }
}

/// Warp an image by a TPS using inverse mapping with bilinear sampling.
pub fn warp_tps(
    img: &ImageBuffer,
    warp: &TpsWarp,
    out_size: (usize, usize),
    direction: TpsDirection,
) -> Result<ImageBuffer, GeomError> {
    let sampler = match direction {
        TpsDirection::Inverse => warp.clone(),
        TpsDirection::Forward => warp.dual()?,
    };
    let (out_h, out_w) = out_size;
    Ok(ImageBuffer::from_fn(out_w, out_h, |x, y| {
        let (sx, sy) = sampler.apply(x as f64, y as f64);
        img.sample_bilinear(sx, sy)
    }))
}
