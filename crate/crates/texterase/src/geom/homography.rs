//! Planar perspective transforms from 4-point correspondences.

use super::{solve_linear, GeomError};
use crate::imagecore::ImageBuffer;

/// 3×3 projective transform, normalized so element (3,3) = 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        )
    }

    pub fn inverse(&self) -> Result<Homography, GeomError> {
        let m = &self.m;
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det.abs() < 1e-12 {
            return Err(GeomError::SingularSystem("homography not invertible".into()));
        }
        let inv = [
            [
                (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det,
                (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det,
                (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det,
            ],
            [
                (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det,
                (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det,
                (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det,
            ],
            [
                (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det,
                (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det,
                (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det,
            ],
        ];
        let w = inv[2][2];
        if w.abs() < 1e-15 {
            return Err(GeomError::SingularSystem("inverse not normalizable".into()));
        }
        let mut out = inv;
        for row in &mut out {
            for v in row.iter_mut() {
                *v /= w;
            }
        }
        Ok(Homography { m: out })
    }
}

fn any_three_collinear(pts: &[(f64, f64); 4]) -> bool {
    for i in 0..4 {
        let mut idx = [0usize; 3];
        let mut k = 0;
        for j in 0..4 {
            if j != i {
                idx[k] = j;
                k += 1;
            }
        }
        let (a, b, c) = (pts[idx[0]], pts[idx[1]], pts[idx[2]]);
        let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        let scale = ((b.0 - a.0).abs() + (b.1 - a.1).abs() + (c.0 - a.0).abs() + (c.1 - a.1).abs()).max(1.0);
        if cross.abs() < 1e-9 * scale * scale {
            return true;
        }
    }
    false
}

/// Find H with H·src_i ∝ dst_i for the four correspondences.
pub fn solve_homography(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Result<Homography, GeomError> {
    if any_three_collinear(src) || any_three_collinear(dst) {
        return Err(GeomError::DegenerateConfiguration(
            "three correspondence points are collinear".into(),
        ));
    }
    // Unknowns h11..h32 with h33 = 1: two equations per correspondence.
    let mut a = vec![0.0; 8 * 8];
    let mut b = vec![0.0; 8];
    for (i, (&(x, y), &(u, v))) in src.iter().zip(dst.iter()).enumerate() {
        let r0 = 2 * i;
        let r1 = 2 * i + 1;
        a[r0 * 8] = x;
        a[r0 * 8 + 1] = y;
        a[r0 * 8 + 2] = 1.0;
        a[r0 * 8 + 6] = -u * x;
        a[r0 * 8 + 7] = -u * y;
        b[r0] = u;
        a[r1 * 8 + 3] = x;
        a[r1 * 8 + 4] = y;
        a[r1 * 8 + 5] = 1.0;
        a[r1 * 8 + 6] = -v * x;
        a[r1 * 8 + 7] = -v * y;
        b[r1] = v;
    }
    solve_linear(&mut a, 8, &mut b, 1)
        .map_err(|_| GeomError::DegenerateConfiguration("correspondences are degenerate".into()))?;
    let h = Homography {
        m: [
            [b[0], b[1], b[2]],
            [b[3], b[4], b[5]],
            [b[6], b[7], 1.0],
        ],
    };
    for (s, d) in src.iter().zip(dst.iter()) {
        let (u, v) = h.apply(s.0, s.1);
        let err = (u - d.0).hypot(v - d.1);
        if err > 1e-6 {
            return Err(GeomError::DegenerateConfiguration(format!(
                "residual {err:.2e} exceeds 1e-6"
            )));
        }
    }
    Ok(h)
}

/// Warp by inverse mapping with bilinear sampling; `h` maps input image
/// coordinates to output coordinates. Out-of-range samples read as 0.
pub fn warp_perspective(
    img: &ImageBuffer,
    h: &Homography,
    out_size: (usize, usize),
) -> Result<ImageBuffer, GeomError> {
    let inv = h.inverse()?;
    let (out_h, out_w) = out_size;
    Ok(ImageBuffer::from_fn(out_w, out_h, |x, y| {
        let (sx, sy) = inv.apply(x as f64, y as f64);
        img.sample_bilinear(sx, sy)
    }))
}
