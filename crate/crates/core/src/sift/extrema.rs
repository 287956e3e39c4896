//! Scale-space extremum detection and subpixel refinement.

use crate::image::GrayImage;

use super::pyramid::DoGPyramid;

/// Discrete DoG extremum location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Candidate {
    pub octave: usize,
    pub level: usize,
    pub row: usize,
    pub col: usize,
}

/// Strict 26-neighbour extrema with `|value| > contrast_floor`, excluding the
/// outermost pixel ring and the first and last DoG level of each octave.
pub fn detect_candidates(d: &DoGPyramid, contrast_floor: f32) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (o, levels) in d.octaves.iter().enumerate() {
        if levels.len() < 3 {
            continue;
        }
        let (w, h) = levels[0].dimensions();
        if w < 3 || h < 3 {
            continue;
        }
        for l in 1..levels.len() - 1 {
            let stack = [&levels[l - 1], &levels[l], &levels[l + 1]];
            for row in 1..h - 1 {
                for col in 1..w - 1 {
                    let v = stack[1].get(col, row);
                    if v.abs() > contrast_floor && is_strict_extremum(&stack, col, row, v) {
                        out.push(Candidate {
                            octave: o,
                            level: l,
                            row,
                            col,
                        });
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn is_strict_extremum(stack: &[&GrayImage; 3], col: usize, row: usize, v: f32) -> bool {
    let greater = v > 0.0;
    for (s, img) in stack.iter().enumerate() {
        for y in row - 1..=row + 1 {
            for x in col - 1..=col + 1 {
                if s == 1 && x == col && y == row {
                    continue;
                }
                let n = img.get(x, y);
                if (greater && v <= n) || (!greater && v >= n) {
                    return false;
                }
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineParams {
    /// Minimum `|D(x̂)|` of the interpolated extremum.
    pub contrast_threshold: f64,
    pub edge_ratio: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    LowContrast,
    Edge,
    SingularHessian,
    OutOfBounds,
    NotConverged,
}

/// A candidate after subpixel fitting, still in octave coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refined {
    pub octave: usize,
    pub level: usize,
    pub row: usize,
    pub col: usize,
    /// Offset `(dx, dy, dlevel)` from the grid point, each within ±0.5.
    pub offset: [f64; 3],
    /// Interpolated DoG value at the extremum.
    pub value: f64,
}

impl Refined {
    pub fn octave_x(&self) -> f64 {
        self.col as f64 + self.offset[0]
    }

    pub fn octave_y(&self) -> f64 {
        self.row as f64 + self.offset[1]
    }

    pub fn interval(&self) -> f64 {
        self.level as f64 + self.offset[2]
    }
}

/// Central-difference gradient and Hessian over `(x, y, level)`.
fn derivatives(d: &[GrayImage], l: usize, r: usize, c: usize) -> ([f64; 3], [[f64; 3]; 3]) {
    let at = |dl: isize, dr: isize, dc: isize| -> f64 {
        d[(l as isize + dl) as usize].get((c as isize + dc) as usize, (r as isize + dr) as usize)
            as f64
    };
    let v = at(0, 0, 0);
    let g = [
        (at(0, 0, 1) - at(0, 0, -1)) / 2.0,
        (at(0, 1, 0) - at(0, -1, 0)) / 2.0,
        (at(1, 0, 0) - at(-1, 0, 0)) / 2.0,
    ];
    let dxx = at(0, 0, 1) + at(0, 0, -1) - 2.0 * v;
    let dyy = at(0, 1, 0) + at(0, -1, 0) - 2.0 * v;
    let dss = at(1, 0, 0) + at(-1, 0, 0) - 2.0 * v;
    let dxy = (at(0, 1, 1) - at(0, 1, -1) - at(0, -1, 1) + at(0, -1, -1)) / 4.0;
    let dxs = (at(1, 0, 1) - at(1, 0, -1) - at(-1, 0, 1) + at(-1, 0, -1)) / 4.0;
    let dys = (at(1, 1, 0) - at(1, -1, 0) - at(-1, 1, 0) + at(-1, -1, 0)) / 4.0;
    (g, [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
}

/// Solves `H x = b` by Cramer's rule; `None` if `H` is (near) singular.
pub(crate) fn solve3(h: &[[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let det = det3(h);
    let scale = h.iter().flatten().fold(0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 || det.abs() <= 1e-12 * scale.powi(3) {
        return None;
    }
    let mut x = [0.0; 3];
    for (i, xi) in x.iter_mut().enumerate() {
        let mut m = *h;
        for r in 0..3 {
            m[r][i] = b[r];
        }
        *xi = det3(&m) / det;
    }
    Some(x)
}

/// Quadratic fit around a candidate with iterative re-centering, followed by
/// contrast and edge-response rejection.
pub fn refine_and_filter(
    candidate: Candidate,
    d: &DoGPyramid,
    params: &RefineParams,
) -> Result<Refined, Rejection> {
    let levels = &d.octaves[candidate.octave];
    let (w, h) = levels[0].dimensions();
    let (mut l, mut r, mut c) = (candidate.level, candidate.row, candidate.col);
    let mut converged = None;
    for _ in 0..params.max_iters.max(1) {
        let (g, hess) = derivatives(levels, l, r, c);
        let offset = solve3(&hess, [-g[0], -g[1], -g[2]]).ok_or(Rejection::SingularHessian)?;
        if offset.iter().all(|o| o.abs() <= 0.5) {
            converged = Some((offset, g));
            break;
        }
        let step = |pos: usize, o: f64| pos as isize + o.round() as isize;
        let (nc, nr, nl) = (step(c, offset[0]), step(r, offset[1]), step(l, offset[2]));
        if nc < 1
            || nr < 1
            || nl < 1
            || nc as usize >= w - 1
            || nr as usize >= h - 1
            || nl as usize >= levels.len() - 1
        {
            return Err(Rejection::OutOfBounds);
        }
        (c, r, l) = (nc as usize, nr as usize, nl as usize);
    }
    let (offset, g) = converged.ok_or(Rejection::NotConverged)?;

    let value =
        levels[l].get(c, r) as f64 + 0.5 * (g[0] * offset[0] + g[1] * offset[1] + g[2] * offset[2]);
    if value.abs() < params.contrast_threshold {
        return Err(Rejection::LowContrast);
    }

    let (_, hess) = derivatives(levels, l, r, c);
    let tr = hess[0][0] + hess[1][1];
    let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[0][1];
    let limit = (params.edge_ratio + 1.0).powi(2) / params.edge_ratio;
    if det <= 0.0 || tr * tr / det >= limit {
        return Err(Rejection::Edge);
    }

    Ok(Refined {
        octave: candidate.octave,
        level: l,
        row: r,
        col: c,
        offset,
        value,
    })
}
