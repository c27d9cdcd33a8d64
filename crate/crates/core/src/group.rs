//! Finite cyclic group algebra, representation matrices, and group actions on
//! feature fields. Quarter-turn rotations (every element of C1, C2, C4 and the
//! even elements of C4k) act on grids as exact index permutations; all other
//! angles use bilinear interpolation about the grid center with zero padding.

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// The cyclic group C_n; elements are residues 0..n-1.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CyclicGroup {
    n: usize,
}

impl CyclicGroup {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("group order must be positive".into()));
        }
        Ok(CyclicGroup { n })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn elements(&self) -> impl Iterator<Item = usize> {
        0..self.n
    }

    pub fn identity(&self) -> usize {
        0
    }

    fn check(&self, g: usize) -> Result<usize> {
        if g < self.n {
            Ok(g)
        } else {
            Err(Error::Domain(format!(
                "element {} out of range for C{}",
                g, self.n
            )))
        }
    }

    pub fn compose(&self, a: usize, b: usize) -> Result<usize> {
        Ok((self.check(a)? + self.check(b)?) % self.n)
    }

    pub fn inverse(&self, a: usize) -> Result<usize> {
        Ok((self.n - self.check(a)?) % self.n)
    }

    /// Rotation angle of element g in radians.
    pub fn angle(&self, g: usize) -> f64 {
        2.0 * std::f64::consts::PI * g as f64 / self.n as f64
    }

    /// True when element g rotates the plane by a multiple of 90 degrees,
    /// i.e. acts on square grids as an exact index permutation.
    pub fn is_quarter_turn(&self, g: usize) -> bool {
        (4 * g) % self.n == 0
    }
}

/// cos/sin of 2*pi*num/den with exact values at quarter turns, so that C4
/// representation matrices contain exact zeros and ones.
pub(crate) fn turn_cos_sin(num: i64, den: i64) -> (f64, f64) {
    debug_assert!(den > 0);
    let q4 = 4 * num;
    if q4 % den == 0 {
        match (q4 / den).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let theta = 2.0 * std::f64::consts::PI * num as f64 / den as f64;
        (theta.cos(), theta.sin())
    }
}

/// How the group acts on a block of channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Representation {
    /// One channel, matrix identically 1.
    Trivial,
    /// Two channels rotating at frequency k: planar rotation by 2*pi*k*g/n.
    Irrep(i64),
    /// n channels permuted cyclically.
    Regular,
    /// Ordered blocks laid out contiguously.
    DirectSum(Vec<Representation>),
}

impl Representation {
    pub fn dim(&self, group: CyclicGroup) -> usize {
        match self {
            Representation::Trivial => 1,
            Representation::Irrep(_) => 2,
            Representation::Regular => group.order(),
            Representation::DirectSum(parts) => parts.iter().map(|p| p.dim(group)).sum(),
        }
    }

    /// m copies of rep as a direct sum.
    pub fn copies(rep: Representation, m: usize) -> Representation {
        Representation::DirectSum(vec![rep; m])
    }

    /// Leaf blocks in layout order.
    pub fn blocks(&self) -> Vec<&Representation> {
        match self {
            Representation::DirectSum(parts) => parts.iter().flat_map(|p| p.blocks()).collect(),
            other => vec![other],
        }
    }

    /// Representation matrix of element g, dim x dim, row-major, orthogonal.
    pub fn matrix_f64(&self, group: CyclicGroup, g: usize) -> Result<Tensor<f64>> {
        if g >= group.order() {
            return Err(Error::Domain(format!(
                "element {} out of range for C{}",
                g,
                group.order()
            )));
        }
        let n = group.order();
        match self {
            Representation::Trivial => Tensor::from_vec(&[1, 1], vec![1.0]),
            Representation::Irrep(k) => {
                let (c, s) = turn_cos_sin(k * g as i64, n as i64);
                Tensor::from_vec(&[2, 2], vec![c, -s, s, c])
            }
            Representation::Regular => {
                let mut m = Tensor::zeros(&[n, n]);
                // g sends basis vector e_h to e_{(h+g) mod n}
                for h in 0..n {
                    *m.at_mut(&[(h + g) % n, h]) = 1.0;
                }
                Ok(m)
            }
            Representation::DirectSum(parts) => {
                let dim = self.dim(group);
                let mut m = Tensor::zeros(&[dim, dim]);
                let mut off = 0;
                for part in parts {
                    let d = part.dim(group);
                    let sub = part.matrix_f64(group, g)?;
                    for a in 0..d {
                        for b in 0..d {
                            *m.at_mut(&[off + a, off + b]) = sub.at(&[a, b]);
                        }
                    }
                    off += d;
                }
                Ok(m)
            }
        }
    }

    pub fn matrix<T: Scalar>(&self, group: CyclicGroup, g: usize) -> Result<Tensor<T>> {
        Ok(self.matrix_f64(group, g)?.cast())
    }
}

/// A spatial grid of channel vectors tagged with how the group acts on them.
/// Channels come in `multiplicity` contiguous blocks of `rep.dim` each.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField<T> {
    pub data: Tensor<T>,
    pub rep: Representation,
    pub group: CyclicGroup,
}

impl<T: Scalar> FeatureField<T> {
    pub fn new(data: Tensor<T>, rep: Representation, group: CyclicGroup) -> Result<Self> {
        if data.ndim() != 3 {
            return Err(Error::Shape(format!(
                "feature field needs (channels, H, W), got {:?}",
                data.dims()
            )));
        }
        let d = rep.dim(group);
        if data.dims()[0] % d != 0 {
            return Err(Error::Shape(format!(
                "{} channels not a multiple of rep dim {}",
                data.dims()[0],
                d
            )));
        }
        Ok(FeatureField { data, rep, group })
    }

    pub fn zeros(
        channels: usize,
        h: usize,
        w: usize,
        rep: Representation,
        group: CyclicGroup,
    ) -> Result<Self> {
        Self::new(Tensor::zeros(&[channels, h, w]), rep, group)
    }

    pub fn channels(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.data.dims()[2]
    }

    pub fn multiplicity(&self) -> usize {
        self.channels() / self.rep.dim(self.group)
    }
}

/// Rotate every channel plane of a (C, H, W) buffer by group element g.
/// Quarter turns are exact index permutations; other angles bilinear-sample
/// about the grid center ((H-1)/2, (W-1)/2) with zeros outside the grid.
pub(crate) fn rotate_grid<T: Scalar>(
    data: &[T],
    c: usize,
    h: usize,
    w: usize,
    group: CyclicGroup,
    g: usize,
) -> Result<Vec<T>> {
    let n = group.order();
    if g % n == 0 {
        return Ok(data.to_vec());
    }
    if h != w {
        return Err(Error::Shape(format!(
            "cannot rotate a non-square {h}x{w} grid"
        )));
    }
    let hw = h * w;
    let mut out = vec![T::zero(); data.len()];
    if group.is_quarter_turn(g) {
        let q = ((4 * g) / n) % 4; // quarter turns counterclockwise
        for ch in 0..c {
            let src = &data[ch * hw..(ch + 1) * hw];
            let dst = &mut out[ch * hw..(ch + 1) * hw];
            for i in 0..h {
                for j in 0..w {
                    let (si, sj) = match q {
                        1 => (j, h - 1 - i),
                        2 => (h - 1 - i, w - 1 - j),
                        _ => (w - 1 - j, i),
                    };
                    dst[i * w + j] = src[si * w + sj];
                }
            }
        }
    } else {
        let (cos_t, sin_t) = turn_cos_sin(g as i64, n as i64);
        let ctr = (h as f64 - 1.0) / 2.0;
        for i in 0..h {
            for j in 0..w {
                // source point = R(-theta) applied to (x right, y up) offsets
                let dx = j as f64 - ctr;
                let dy = ctr - i as f64;
                let sx = cos_t * dx + sin_t * dy;
                let sy = -sin_t * dx + cos_t * dy;
                let src_col = ctr + sx;
                let src_row = ctr - sy;
                let r0 = src_row.floor();
                let c0 = src_col.floor();
                let fr = src_row - r0;
                let fc = src_col - c0;
                let taps = [
                    (r0, c0, (1.0 - fr) * (1.0 - fc)),
                    (r0, c0 + 1.0, (1.0 - fr) * fc),
                    (r0 + 1.0, c0, fr * (1.0 - fc)),
                    (r0 + 1.0, c0 + 1.0, fr * fc),
                ];
                for (tr, tc, wt) in taps {
                    if tr >= 0.0 && tc >= 0.0 && (tr as usize) < h && (tc as usize) < w {
                        let sidx = tr as usize * w + tc as usize;
                        let wt = cast::<T>(wt);
                        for ch in 0..c {
                            out[ch * hw + i * w + j] += wt * data[ch * hw + sidx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint (transpose) of `rotate_grid` as a linear map, used by backward
/// passes that differentiate through rotated kernels.
pub(crate) fn rotate_grid_adjoint<T: Scalar>(
    data: &[T],
    c: usize,
    h: usize,
    w: usize,
    group: CyclicGroup,
    g: usize,
) -> Result<Vec<T>> {
    if group.is_quarter_turn(g) {
        // permutation matrix: adjoint = inverse rotation
        return rotate_grid(data, c, h, w, group, group.inverse(g)?);
    }
    if h != w {
        return Err(Error::Shape(format!(
            "cannot rotate a non-square {h}x{w} grid"
        )));
    }
    let n = group.order();
    let hw = h * w;
    let mut out = vec![T::zero(); data.len()];
    let (cos_t, sin_t) = turn_cos_sin(g as i64, n as i64);
    let ctr = (h as f64 - 1.0) / 2.0;
    for i in 0..h {
        for j in 0..w {
            let dx = j as f64 - ctr;
            let dy = ctr - i as f64;
            let sx = cos_t * dx + sin_t * dy;
            let sy = -sin_t * dx + cos_t * dy;
            let src_col = ctr + sx;
            let src_row = ctr - sy;
            let r0 = src_row.floor();
            let c0 = src_col.floor();
            let fr = src_row - r0;
            let fc = src_col - c0;
            let taps = [
                (r0, c0, (1.0 - fr) * (1.0 - fc)),
                (r0, c0 + 1.0, (1.0 - fr) * fc),
                (r0 + 1.0, c0, fr * (1.0 - fc)),
                (r0 + 1.0, c0 + 1.0, fr * fc),
            ];
            for (tr, tc, wt) in taps {
                if tr >= 0.0 && tc >= 0.0 && (tr as usize) < h && (tc as usize) < w {
                    let sidx = tr as usize * w + tc as usize;
                    let wt = cast::<T>(wt);
                    for ch in 0..c {
                        out[ch * hw + sidx] += wt * data[ch * hw + i * w + j];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Apply a dim x dim channel matrix to every multiplicity block of a
/// (C, H, W) buffer, pixelwise.
pub(crate) fn mix_channels<T: Scalar>(
    data: &mut Vec<T>,
    c: usize,
    hw: usize,
    matrix: &Tensor<T>,
) {
    let d = matrix.dims()[0];
    if d == 1 {
        return; // trivial blocks: matrix is identically 1
    }
    debug_assert_eq!(c % d, 0);
    let m = matrix.data();
    let mut mixed = vec![T::zero(); data.len()];
    for blk in 0..c / d {
        for a in 0..d {
            let dst = (blk * d + a) * hw;
            for b in 0..d {
                let coef = m[a * d + b];
                if coef == T::zero() {
                    continue;
                }
                let src = (blk * d + b) * hw;
                for p in 0..hw {
                    mixed[dst + p] += coef * data[src + p];
                }
            }
        }
    }
    *data = mixed;
}

/// Group action on a feature field: rotate the grid by 2*pi*g/n and apply the
/// channel representation matrix to each multiplicity block.
pub fn act_on_field<T: Scalar>(g: usize, f: &FeatureField<T>) -> Result<FeatureField<T>> {
    let group = f.group;
    if g >= group.order() {
        return Err(Error::Domain(format!(
            "element {} out of range for C{}",
            g,
            group.order()
        )));
    }
    let (c, h, w) = (f.channels(), f.height(), f.width());
    let mut data = rotate_grid(f.data.data(), c, h, w, group, g)?;
    let matrix: Tensor<T> = f.rep.matrix(group, g)?;
    mix_channels(&mut data, c, h * w, &matrix);
    Ok(FeatureField {
        data: Tensor::from_vec(&[c, h, w], data)?,
        rep: f.rep.clone(),
        group,
    })
}
