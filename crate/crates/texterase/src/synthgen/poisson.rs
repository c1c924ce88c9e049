//! Poisson blending: solve the discrete Poisson equation over a pixel
//! region with Dirichlet boundary values from the background and the
//! guidance Laplacian taken from the foreground. Conjugate gradients on
//! the 5-point system, one solve per channel.

use super::SynthError;
use crate::imagecore::ImageBuffer;

const MAX_ITERS: usize = 10_000;
const RESIDUAL_TOL: f64 = 1e-6;

/// Pixels to solve for, given as a boolean map over the image.
pub struct BlendRegion {
    pub width: usize,
    pub height: usize,
    pub inside: Vec<bool>,
}

impl BlendRegion {
    pub fn from_alpha(width: usize, height: usize, alpha: &[f64], threshold: f64) -> Self {
        BlendRegion {
            width,
            height,
            inside: alpha.iter().map(|&a| a > threshold).collect(),
        }
    }

    /// True if no region pixel touches the image border.
    pub fn strictly_interior(&self) -> bool {
        for y in 0..self.height {
            for x in 0..self.width {
                if self.inside[y * self.width + x]
                    && (x == 0 || y == 0 || x == self.width - 1 || y == self.height - 1)
                {
                    return false;
                }
            }
        }
        true
    }

    /// Drop any border pixels from the region.
    pub fn clipped_to_interior(mut self) -> Self {
        for y in 0..self.height {
            for x in 0..self.width {
                if x == 0 || y == 0 || x == self.width - 1 || y == self.height - 1 {
                    self.inside[y * self.width + x] = false;
                }
            }
        }
        self
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }
}

/// 5-point Laplacian at an interior pixel of a single-channel plane.
fn laplacian(data: &[f64], w: usize, x: usize, y: usize) -> f64 {
    data[(y - 1) * w + x] + data[(y + 1) * w + x] + data[y * w + x - 1] + data[y * w + x + 1]
        - 4.0 * data[y * w + x]
}

/// Blend `fg` into `background` over `region`. Outside the region the
/// result equals the background exactly; inside, the result's Laplacian
/// matches the foreground's with boundary values from the background.
pub fn poisson_blend(
    background: &ImageBuffer,
    fg: &ImageBuffer,
    region: &BlendRegion,
) -> Result<ImageBuffer, SynthError> {
    let (w, h) = (background.width(), background.height());
    if fg.width() != w || fg.height() != h || region.width != w || region.height != h {
        return Err(SynthError::ShapeMismatch(format!(
            "background {}x{}, fg {}x{}, region {}x{}",
            w,
            h,
            fg.width(),
            fg.height(),
            region.width,
            region.height
        )));
    }
    if !region.strictly_interior() {
        return Err(SynthError::RegionOutOfBounds);
    }
    let n = region.count();
    let mut out = background.clone();
    if n == 0 {
        return Ok(out);
    }

    // index map pixel -> unknown slot
    let mut slot = vec![usize::MAX; w * h];
    let mut pixels = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            if region.inside[y * w + x] {
                slot[y * w + x] = pixels.len();
                pixels.push((x, y));
            }
        }
    }

    let solve_channel = |ch: usize| -> Result<Vec<f64>, SynthError> {
        let bg_plane: Vec<f64> = (0..w * h).map(|i| background.data()[i * 3 + ch]).collect();
        let fg_plane: Vec<f64> = (0..w * h).map(|i| fg.data()[i * 3 + ch]).collect();

        // b_p = Σ_{q∉region} bg_q − Δfg(p); A = 4I − adjacency
        let mut b = vec![0.0; n];
        for (i, &(x, y)) in pixels.iter().enumerate() {
            let mut rhs = -laplacian(&fg_plane, w, x, y);
            for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
                if slot[ny * w + nx] == usize::MAX {
                    rhs += bg_plane[ny * w + nx];
                }
            }
            b[i] = rhs;
        }
        let apply = |u: &[f64], out: &mut [f64]| {
            for (i, &(x, y)) in pixels.iter().enumerate() {
                let mut acc = 4.0 * u[i];
                for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
                    let s = slot[ny * w + nx];
                    if s != usize::MAX {
                        acc -= u[s];
                    }
                }
                out[i] = acc;
            }
        };

        // CG with the foreground as warm start
        let mut u: Vec<f64> = pixels.iter().map(|&(x, y)| fg_plane[y * w + x]).collect();
        let mut r = vec![0.0; n];
        apply(&u, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let mut p = r.clone();
        let mut rs: f64 = r.iter().map(|v| v * v).sum();
        let b_norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let mut ap = vec![0.0; n];
        let mut converged = false;
        for _ in 0..MAX_ITERS {
            let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if rmax <= RESIDUAL_TOL && rs.sqrt() <= RESIDUAL_TOL * b_norm {
                converged = true;
                break;
            }
            apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(ap.iter()).map(|(a, b)| a * b).sum();
            if pap.abs() < 1e-300 {
                break;
            }
            let alpha = rs / pap;
            for i in 0..n {
                u[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rs_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rs_new / rs;
            rs = rs_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        if !converged {
            let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if rmax > 1e-4 {
                return Err(SynthError::SolverNotConverged(rmax));
            }
        }
        Ok(u)
    };

    let solutions: Vec<Result<Vec<f64>, SynthError>> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..3usize).into_par_iter().map(solve_channel).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..3usize).map(solve_channel).collect()
        }
    };
    for (ch, sol) in solutions.into_iter().enumerate() {
        let u = sol?;
        for (i, &(x, y)) in pixels.iter().enumerate() {
            let mut px = out.get(x, y);
            px[ch] = u[i].clamp(0.0, 1.0);
            out.put(x, y, px);
        }
    }
    Ok(out)
}

/// Max abs 5-point-Laplacian mismatch |Δresult − Δfg| over region pixels
/// (the oracle for the blend residual). Pixels whose value — or whose
/// neighbor's value — was clipped by the [0,1] image range are excluded:
/// the equation only holds where the box constraint is inactive.
pub fn laplacian_residual(result: &ImageBuffer, fg: &ImageBuffer, region: &BlendRegion) -> f64 {
    let w = result.width();
    let clipped = |plane: &[f64], x: usize, y: usize| {
        let v = plane[y * w + x];
        (v <= 0.0 || v >= 1.0) && region.inside[y * w + x]
    };
    let mut worst = 0.0f64;
    for ch in 0..3 {
        let res_plane: Vec<f64> = (0..w * result.height())
            .map(|i| result.data()[i * 3 + ch])
            .collect();
        let fg_plane: Vec<f64> = (0..w * result.height())
            .map(|i| fg.data()[i * 3 + ch])
            .collect();
        for y in 1..result.height() - 1 {
            for x in 1..w - 1 {
                if !region.inside[y * w + x] {
                    continue;
                }
                if clipped(&res_plane, x, y)
                    || clipped(&res_plane, x - 1, y)
                    || clipped(&res_plane, x + 1, y)
                    || clipped(&res_plane, x, y - 1)
                    || clipped(&res_plane, x, y + 1)
                {
                    continue;
                }
                let d = (laplacian(&res_plane, w, x, y) - laplacian(&fg_plane, w, x, y)).abs();
                worst = worst.max(d);
            }
        }
    }
    worst
}
