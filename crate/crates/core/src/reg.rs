//! Soft equivariance penalties on relaxation weights. All three are L1-style:
//! non-negative, zero exactly on the equivariant tie, positively homogeneous,
//! with the subgradient at ties defined as 0.

use crate::error::{Error, Result};
use crate::group::{rotate_grid, rotate_grid_adjoint, CyclicGroup, Representation};
use crate::scalar::{cast, to_f64, Scalar};
use crate::tensor::Tensor;

/// Half-width of the band around ties where the reported gradient ramps
/// linearly to 0 instead of jumping between +-1. The loss value itself stays
/// exact L1; without the ramp, Adam oscillates around the tie at
/// learning-rate scale instead of settling on it.
pub const TIE_KNEE: f64 = 1e-3;

pub(crate) fn sign<T: Scalar>(x: T) -> T {
    let knee = cast::<T>(TIE_KNEE);
    if x > knee {
        T::one()
    } else if x < -knee {
        -T::one()
    } else {
        x / knee
    }
}

/// Pairwise penalty on group-indexed relaxation weights (L, n):
/// alpha * sum_l sum_{g,h} |w_l(h) - w_l(g)|, both orderings counted.
/// Returns (loss, gradient wrt w).
pub fn l_gconv<T: Scalar>(w: &Tensor<T>, alpha: f64) -> Result<(T, Tensor<T>)> {
    if w.ndim() != 2 {
        return Err(Error::Shape(format!(
            "l_gconv expects (L, n) weights, got {:?}",
            w.dims()
        )));
    }
    let (l_count, n) = (w.dims()[0], w.dims()[1]);
    let alpha_t = cast::<T>(alpha);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(w.dims());
    for l in 0..l_count {
        for h in 0..n {
            for g in 0..n {
                let diff = w.at(&[l, h]) - w.at(&[l, g]);
                loss += diff.abs();
                let s = sign(diff);
                *grad.at_mut(&[l, h]) += alpha_t * s;
                *grad.at_mut(&[l, g]) -= alpha_t * s;
            }
        }
    }
    Ok((alpha_t * loss, grad))
}

/// Forward-difference penalty on per-offset relaxation weights, first two
/// axes being the kernel grid: alpha * (|dw/dm| + |dw/dn|) summed in L1 over
/// all trailing indices. No wraparound at kernel edges.
/// Returns (loss, gradient wrt w).
pub fn l_sconv<T: Scalar>(w: &Tensor<T>, alpha: f64) -> Result<(T, Tensor<T>)> {
    if w.ndim() < 2 {
        return Err(Error::Config(
            "l_sconv needs a per-offset weight layout with two leading kernel axes; \
             use l_gconv on the buckets for the angular layout"
                .into(),
        ));
    }
    let (kh, kw) = (w.dims()[0], w.dims()[1]);
    let rest: usize = w.dims()[2..].iter().product::<usize>().max(1);
    let alpha_t = cast::<T>(alpha);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(w.dims());
    let data = w.data();
    let gd = grad.data_mut();
    let idx = |m: usize, n: usize, r: usize| (m * kw + n) * rest + r;
    for m in 0..kh {
        for n in 0..kw {
            for r in 0..rest {
                if m + 1 < kh {
                    let diff = data[idx(m + 1, n, r)] - data[idx(m, n, r)];
                    loss += diff.abs();
                    let s = sign(diff);
                    gd[idx(m + 1, n, r)] += alpha_t * s;
                    gd[idx(m, n, r)] -= alpha_t * s;
                }
                if n + 1 < kw {
                    let diff = data[idx(m, n + 1, r)] - data[idx(m, n, r)];
                    loss += diff.abs();
                    let s = sign(diff);
                    gd[idx(m, n + 1, r)] += alpha_t * s;
                    gd[idx(m, n, r)] -= alpha_t * s;
                }
            }
        }
    }
    Ok((alpha_t * loss, grad))
}

/// Hinge-style equivariance penalty on a locally connected filter bank
/// phi (H, W, c_out, c_in, ks, ks): alpha * sum_{h in G} L1 norm of
/// rho_out(h) phi(x, y) rho_in(h^-1) - phi(h x, h y).
/// Returns (loss, gradient wrt phi).
pub fn l_hinge<T: Scalar>(
    phi: &Tensor<T>,
    group: CyclicGroup,
    rep_in: &Representation,
    rep_out: &Representation,
    alpha: f64,
) -> Result<(T, Tensor<T>)> {
    if phi.ndim() != 6 {
        return Err(Error::Shape(format!(
            "l_hinge expects (H, W, c_out, c_in, ks, ks) filters, got {:?}",
            phi.dims()
        )));
    }
    let dims = phi.dims().to_vec();
    let (h, w, c_out, c_in, ks) = (dims[0], dims[1], dims[2], dims[3], dims[4]);
    if h != w {
        return Err(Error::Shape(format!(
            "l_hinge needs a square grid, got {h}x{w}"
        )));
    }
    if c_out % rep_out.dim(group) != 0 || c_in % rep_in.dim(group) != 0 {
        return Err(Error::Shape(
            "filter channels are not multiples of the representation dims".into(),
        ));
    }
    let alpha_t = cast::<T>(alpha);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(&dims);

    // layout for whole-bank rotations: positions as the spatial grid,
    // everything else as channels
    let chan_pos = c_out * c_in * ks * ks; // per-position block when x rotates
    for g in group.elements() {
        if g == 0 {
            continue;
        }
        let rho_out: Tensor<T> = rep_out.matrix(group, g)?;
        let rho_in_inv: Tensor<T> = rep_in.matrix(group, group.inverse(g)?)?;
        // rhs(x, y) = phi(g x, g y): rotate positions, then offsets
        let pos_rot = rotate_by_positions(phi, h, chan_pos, group, g)?;
        let rhs = rotate_by_offsets(&pos_rot, &dims, group, g)?;
        // lhs(x, y) = rho_out(g) phi(x, y) rho_in(g^-1)
        let lhs = mix_bank(phi, &dims, &rho_out, &rho_in_inv);

        // residual sign drives both adjoints
        let mut resid = vec![T::zero(); phi.len()];
        for i in 0..phi.len() {
            let d = lhs[i] - rhs[i];
            loss += d.abs();
            resid[i] = sign(d);
        }
        // d loss / d phi += A^T(resid) - B^T(resid)
        let a_t = mix_bank_adjoint(&resid, &dims, &rho_out, &rho_in_inv);
        let b_t = {
            let off_adj = rotate_by_offsets_adjoint(&resid, &dims, group, g)?;
            rotate_by_positions_adjoint(&off_adj, h, chan_pos, group, g)?
        };
        for i in 0..phi.len() {
            grad.data_mut()[i] += alpha_t * (a_t[i] - b_t[i]);
        }
    }
    Ok((alpha_t * loss, grad))
}

/// phi(g x, y): rotate the leading (H, W) position grid.
fn rotate_by_positions<T: Scalar>(
    phi: &Tensor<T>,
    h: usize,
    chan_pos: usize,
    group: CyclicGroup,
    g: usize,
) -> Result<Vec<T>> {
    // phi(g x) = act(g^{ -1}, phi) evaluated per spec of rotate_grid:
    // rotate_grid gives out(x) = in(R_g^{-1} x), and we need out(x) = in(R_g x)
    let ginv = group.inverse(g)?;
    // positions lead the layout: transpose to channel-major for rotate_grid
    let hw = h * h;
    let mut chan_major = vec![T::zero(); phi.len()];
    for p in 0..hw {
        for c in 0..chan_pos {
            chan_major[c * hw + p] = phi.data()[p * chan_pos + c];
        }
    }
    let rot = rotate_grid(&chan_major, chan_pos, h, h, group, ginv)?;
    let mut out = vec![T::zero(); phi.len()];
    for p in 0..hw {
        for c in 0..chan_pos {
            out[p * chan_pos + c] = rot[c * hw + p];
        }
    }
    Ok(out)
}

fn rotate_by_positions_adjoint<T: Scalar>(
    v: &[T],
    h: usize,
    chan_pos: usize,
    group: CyclicGroup,
    g: usize,
) -> Result<Vec<T>> {
    let ginv = group.inverse(g)?;
    let hw = h * h;
    let mut chan_major = vec![T::zero(); v.len()];
    for p in 0..hw {
        for c in 0..chan_pos {
            chan_major[c * hw + p] = v[p * chan_pos + c];
        }
    }
    let rot = rotate_grid_adjoint(&chan_major, chan_pos, h, h, group, ginv)?;
    let mut out = vec![T::zero(); v.len()];
    for p in 0..hw {
        for c in 0..chan_pos {
            out[p * chan_pos + c] = rot[c * hw + p];
        }
    }
    Ok(out)
}

/// phi(x, g y): rotate the trailing (ks, ks) offset grid at every position.
fn rotate_by_offsets<T: Scalar>(
    v: &[T],
    dims: &[usize],
    group: CyclicGroup,
    g: usize,
) -> Result<Vec<T>> {
    let (h, w, c_out, c_in, ks) = (dims[0], dims[1], dims[2], dims[3], dims[4]);
    let ginv = group.inverse(g)?;
    // trailing offsets are already spatial-minor: treat (H*W*c_out*c_in) as
    // channels over the ks x ks grid
    rotate_grid(v, h * w * c_out * c_in, ks, ks, group, ginv)
}

fn rotate_by_offsets_adjoint<T: Scalar>(
    v: &[T],
    dims: &[usize],
    group: CyclicGroup,
    g: usize,
) -> Result<Vec<T>> {
    let (h, w, c_out, c_in, ks) = (dims[0], dims[1], dims[2], dims[3], dims[4]);
    let ginv = group.inverse(g)?;
    rotate_grid_adjoint(v, h * w * c_out * c_in, ks, ks, group, ginv)
}

/// rho_out * phi * rho_in_inv applied to the (c_out, c_in) axes.
fn mix_bank<T: Scalar>(
    phi: &Tensor<T>,
    dims: &[usize],
    rho_out: &Tensor<T>,
    rho_in_inv: &Tensor<T>,
) -> Vec<T> {
    let (h, w, c_out, c_in, ks) = (dims[0], dims[1], dims[2], dims[3], dims[4]);
    let d_out = rho_out.dims()[0];
    let d_in = rho_in_inv.dims()[0];
    let sp = ks * ks;
    let mut out = vec![T::zero(); phi.len()];
    let pos_stride = c_out * c_in * sp;
    for p in 0..h * w {
        let base = p * pos_stride;
        for a in 0..c_out {
            let (ablk, ai) = (a / d_out, a % d_out);
            for b in 0..c_in {
                let (bblk, bi) = (b / d_in, b % d_in);
                let dst = base + (a * c_in + b) * sp;
                for c in 0..d_out {
                    let ro = rho_out.at(&[ai, c]);
                    if ro == T::zero() {
                        continue;
                    }
                    for d in 0..d_in {
                        let ri = rho_in_inv.at(&[d, bi]);
                        if ri == T::zero() {
                            continue;
                        }
                        let src = base + ((ablk * d_out + c) * c_in + (bblk * d_in + d)) * sp;
                        let coef = ro * ri;
                        for y in 0..sp {
                            out[dst + y] += coef * phi.data()[src + y];
                        }
                    }
                }
            }
        }
    }
    out
}

fn mix_bank_adjoint<T: Scalar>(
    v: &[T],
    dims: &[usize],
    rho_out: &Tensor<T>,
    rho_in_inv: &Tensor<T>,
) -> Vec<T> {
    let (h, w, c_out, c_in, ks) = (dims[0], dims[1], dims[2], dims[3], dims[4]);
    let d_out = rho_out.dims()[0];
    let d_in = rho_in_inv.dims()[0];
    let sp = ks * ks;
    let mut out = vec![T::zero(); v.len()];
    let pos_stride = c_out * c_in * sp;
    for p in 0..h * w {
        let base = p * pos_stride;
        for a in 0..c_out {
            let (ablk, ai) = (a / d_out, a % d_out);
            for b in 0..c_in {
                let (bblk, bi) = (b / d_in, b % d_in);
                let src = base + (a * c_in + b) * sp;
                for c in 0..d_out {
                    let ro = rho_out.at(&[ai, c]);
                    if ro == T::zero() {
                        continue;
                    }
                    for d in 0..d_in {
                        let ri = rho_in_inv.at(&[d, bi]);
                        if ri == T::zero() {
                            continue;
                        }
                        let dst = base + ((ablk * d_out + c) * c_in + (bblk * d_in + d)) * sp;
                        let coef = ro * ri;
                        for y in 0..sp {
                            out[dst + y] += coef * v[src + y];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Unscaled weight-variation term of `l_sconv` (the loss at alpha = 1),
/// tracked during training for reporting.
pub fn sconv_variation<T: Scalar>(w: &Tensor<T>) -> Result<f64> {
    let (v, _) = l_sconv(w, 1.0)?;
    Ok(to_f64(v))
}

/// Smallest absolute entry of the hinge residual over the nontrivial group
/// elements; gradient checks use it to stay away from the L1 kinks.
pub fn hinge_residual_gap<T: Scalar>(
    phi: &Tensor<T>,
    group: CyclicGroup,
    rep_in: &Representation,
    rep_out: &Representation,
) -> Result<f64> {
    let dims = phi.dims().to_vec();
    let (h, c_out, c_in, ks) = (dims[0], dims[2], dims[3], dims[4]);
    let chan_pos = c_out * c_in * ks * ks;
    let mut gap = f64::INFINITY;
    for g in group.elements() {
        if g == 0 {
            continue;
        }
        let rho_out: Tensor<T> = rep_out.matrix(group, g)?;
        let rho_in_inv: Tensor<T> = rep_in.matrix(group, group.inverse(g)?)?;
        let pos_rot = rotate_by_positions(phi, h, chan_pos, group, g)?;
        let rhs = rotate_by_offsets(&pos_rot, &dims, group, g)?;
        let lhs = mix_bank(phi, &dims, &rho_out, &rho_in_inv);
        for i in 0..phi.len() {
            gap = gap.min(to_f64((lhs[i] - rhs[i]).abs()));
        }
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c4() -> CyclicGroup {
        CyclicGroup::new(4).unwrap()
    }

    #[test]
    fn gconv_penalty_zero_on_constant_weights() {
        let w = Tensor::<f64>::filled(&[3, 4], 0.7);
        let (loss, grad) = l_gconv(&w, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn gconv_penalty_counts_both_orderings() {
        // L=1, C2, w = (0, 1): |0-1| + |1-0| = 2
        let w = Tensor::<f64>::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
        let (loss, _) = l_gconv(&w, 1.0).unwrap();
        assert_eq!(loss, 2.0);
        let (loss2, _) = l_gconv(&w, 2.0).unwrap();
        assert_eq!(loss2, 4.0);
    }

    #[test]
    fn sconv_penalty_forward_differences() {
        // 1x2 kernel grid, scalar weights (0, 3): one horizontal difference
        let w = Tensor::<f64>::from_vec(&[1, 2], vec![0.0, 3.0]).unwrap();
        let (loss, _) = l_sconv(&w, 1.0).unwrap();
        assert_eq!(loss, 3.0);
        let (zero, _) = l_sconv(&w, 0.0).unwrap();
        assert_eq!(zero, 0.0);
        let constant = Tensor::<f64>::filled(&[3, 3, 2], 1.5);
        assert_eq!(l_sconv(&constant, 1.0).unwrap().0, 0.0);
    }

    #[test]
    fn penalties_are_positively_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let w = Tensor::<f64>::rand_uniform(&[2, 4], -1.0, 1.0, &mut rng);
        let (l1, _) = l_gconv(&w, 1.0).unwrap();
        let mut w2 = w.clone();
        w2.scale(3.0);
        let (l2, _) = l_gconv(&w2, 1.0).unwrap();
        assert!((l2 - 3.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn hinge_zero_for_orbit_constant_filters() {
        // trivial reps, filters constant over the grid and offsets
        let phi = Tensor::<f64>::filled(&[4, 4, 1, 1, 1, 1], 0.9);
        let (loss, grad) = l_hinge(
            &phi,
            c4(),
            &Representation::Trivial,
            &Representation::Trivial,
            1.0,
        )
        .unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.max_abs() < 1e-12);
    }

    #[test]
    fn hinge_counts_rotated_copies_of_a_delta() {
        // delta at one grid position, trivial reps, C4, 3x3 grid with k=0:
        // for each h != 0 the residual is a pair of opposite deltas (L1 = 2),
        // summed over h = 1, 2, 3 gives 6.
        let mut phi = Tensor::<f64>::zeros(&[3, 3, 1, 1, 1, 1]);
        *phi.at_mut(&[0, 0, 0, 0, 0, 0]) = 1.0;
        let (loss, _) = l_hinge(
            &phi,
            c4(),
            &Representation::Trivial,
            &Representation::Trivial,
            1.0,
        )
        .unwrap();
        assert!((loss - 6.0).abs() < 1e-12);
        let (zero, _) = l_hinge(
            &phi,
            c4(),
            &Representation::Trivial,
            &Representation::Trivial,
            0.0,
        )
        .unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn hinge_rejects_non_square_grids() {
        let phi = Tensor::<f64>::zeros(&[2, 3, 1, 1, 1, 1]);
        assert!(l_hinge(
            &phi,
            c4(),
            &Representation::Trivial,
            &Representation::Trivial,
            1.0
        )
        .is_err());
    }

    #[test]
    fn gradients_match_finite_differences_away_from_ties() {
        // well-separated values keep us away from the non-smooth points
        let w = Tensor::<f64>::from_vec(
            &[2, 4],
            vec![0.1, 0.9, -0.5, 1.7, 0.4, -1.2, 2.2, 0.05],
        )
        .unwrap();
        let funcs: Vec<(&str, Box<dyn Fn(&Tensor<f64>) -> (f64, Tensor<f64>)>)> = vec![
            ("l_gconv", Box::new(|w| l_gconv(w, 0.37).unwrap())),
            ("l_sconv", Box::new(|w| l_sconv(w, 0.37).unwrap())),
        ];
        for (name, f) in funcs {
            let (_, grad) = f(&w);
            let eps = 1e-6;
            for i in 0..w.len() {
                let mut wp = w.clone();
                wp.data_mut()[i] += eps;
                let mut wm = w.clone();
                wm.data_mut()[i] -= eps;
                let num = (f(&wp).0 - f(&wm).0) / (2.0 * eps);
                let ana = grad.data()[i];
                assert!(
                    (num - ana).abs() <= 1e-6 * num.abs().max(1.0),
                    "{name} grad[{i}]: analytic {ana}, numeric {num}"
                );
            }
        }
    }

    #[test]
    fn hinge_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let phi = Tensor::<f64>::rand_uniform(&[4, 4, 2, 1, 1, 1], -1.0, 1.0, &mut rng);
        let rep_in = Representation::Trivial;
        let rep_out = Representation::Irrep(1);
        let (_, grad) = l_hinge(&phi, c4(), &rep_in, &rep_out, 0.5).unwrap();
        let eps = 1e-6;
        for i in (0..phi.len()).step_by(7) {
            let mut pp = phi.clone();
            pp.data_mut()[i] += eps;
            let mut pm = phi.clone();
            pm.data_mut()[i] -= eps;
            let num = (l_hinge(&pp, c4(), &rep_in, &rep_out, 0.5).unwrap().0
                - l_hinge(&pm, c4(), &rep_in, &rep_out, 0.5).unwrap().0)
                / (2.0 * eps);
            assert!(
                (num - grad.data()[i]).abs() <= 1e-6 * num.abs().max(1.0),
                "hinge grad[{i}]: analytic {}, numeric {num}",
                grad.data()[i]
            );
        }
    }
}
