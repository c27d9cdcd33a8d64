//! Equivariant kernel basis solver: computes an orthonormal basis of the
//! nullspace of the steerable kernel constraint
//!     Phi(h x) = rho_out(h) Phi(x) rho_in(h^-1)
//! stacked over the group generator, via SVD in f64.

use crate::error::{Error, Result};
use crate::group::{rotate_grid, CyclicGroup, Representation};
use crate::io;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Relative singular-value cutoff separating the nullspace from numerical
/// noise (interpolation error for groups without exact grid rotations).
pub const RANK_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct KernelBasis<T> {
    pub group: CyclicGroup,
    pub rep_in: Representation,
    pub rep_out: Representation,
    /// Kernel half-width; kernels span (2k+1)^2 offsets.
    pub k: usize,
    /// Orthonormal elements, each (d_out, d_in, 2k+1, 2k+1).
    pub elems: Vec<Tensor<T>>,
}

impl<T: Scalar> KernelBasis<T> {
    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn kernel_size(&self) -> usize {
        2 * self.k + 1
    }

    pub fn d_out(&self) -> usize {
        self.rep_out.dim(self.group)
    }

    pub fn d_in(&self) -> usize {
        self.rep_in.dim(self.group)
    }

    /// All elements stacked into one (L, d_out, d_in, ks, ks) tensor.
    pub fn stacked(&self) -> Tensor<T> {
        let ks = self.kernel_size();
        let (d_out, d_in) = (self.d_out(), self.d_in());
        let mut data = Vec::with_capacity(self.len() * d_out * d_in * ks * ks);
        for e in &self.elems {
            data.extend_from_slice(e.data());
        }
        Tensor::from_vec(&[self.len(), d_out, d_in, ks, ks], data).unwrap()
    }

    pub fn save(&self, tensor_path: &Path, meta_path: &Path) -> Result<()> {
        io::write_tensor(tensor_path, &self.stacked())?;
        let meta = BasisMeta {
            group_order: self.group.order(),
            rep_in: self.rep_in.clone(),
            rep_out: self.rep_out.clone(),
            k: self.k,
            len: self.len(),
        };
        std::fs::write(meta_path, serde_json::to_string_pretty(&meta).unwrap())?;
        Ok(())
    }

    pub fn load(tensor_path: &Path, meta_path: &Path) -> Result<Self> {
        let meta: BasisMeta = serde_json::from_str(&std::fs::read_to_string(meta_path)?)
            .map_err(|e| Error::Format(format!("basis metadata: {e}")))?;
        let group = CyclicGroup::new(meta.group_order)?;
        let stacked: Tensor<T> = io::read_tensor(tensor_path)?;
        let ks = 2 * meta.k + 1;
        let (d_out, d_in) = (meta.rep_out.dim(group), meta.rep_in.dim(group));
        if stacked.dims() != [meta.len, d_out, d_in, ks, ks] {
            return Err(Error::Format(format!(
                "basis tensor dims {:?} do not match metadata",
                stacked.dims()
            )));
        }
        let per = d_out * d_in * ks * ks;
        let elems = (0..meta.len)
            .map(|l| {
                Tensor::from_vec(
                    &[d_out, d_in, ks, ks],
                    stacked.data()[l * per..(l + 1) * per].to_vec(),
                )
                .unwrap()
            })
            .collect();
        Ok(KernelBasis {
            group,
            rep_in: meta.rep_in,
            rep_out: meta.rep_out,
            k: meta.k,
            elems,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BasisMeta {
    group_order: usize,
    rep_in: Representation,
    rep_out: Representation,
    k: usize,
    len: usize,
}

/// ks^2 x ks^2 matrix of the spatial map Phi |-> Phi(R_h . ), built by
/// rotating delta kernels (exact permutation at quarter turns).
fn spatial_eval_matrix(group: CyclicGroup, h: usize, ks: usize) -> Result<DMatrix<f64>> {
    // Phi(R_h y) = act(h^{-1}, Phi)(y)
    let g = group.inverse(h)?;
    let mut m = DMatrix::zeros(ks * ks, ks * ks);
    for j in 0..ks * ks {
        let mut delta = vec![0.0f64; ks * ks];
        delta[j] = 1.0;
        let rotated = rotate_grid(&delta, 1, ks, ks, group, g)?;
        for i in 0..ks * ks {
            m[(i, j)] = rotated[i];
        }
    }
    Ok(m)
}

/// Solves the steerable constraint for the generator h=1 of C_n and returns
/// an orthonormal nullspace basis, deterministically ordered: descending
/// center-pixel participation, ties broken lexicographically (sign fixed so
/// the first nonzero coefficient is positive).
pub fn solve_basis<T: Scalar>(
    group: CyclicGroup,
    rep_in: &Representation,
    rep_out: &Representation,
    k: usize,
) -> Result<KernelBasis<T>> {
    let ks = 2 * k + 1;
    let d_in = rep_in.dim(group);
    let d_out = rep_out.dim(group);
    let n_unknowns = d_out * d_in * ks * ks;

    let vectors: Vec<Vec<f64>> = if group.order() == 1 {
        // no constraint: the full space, as delta kernels
        (0..n_unknowns)
            .map(|i| {
                let mut v = vec![0.0; n_unknowns];
                v[i] = 1.0;
                v
            })
            .collect()
    } else {
        let h = 1; // one generator suffices for a cyclic group
        let spatial = spatial_eval_matrix(group, h, ks)?;
        let rho_out = rep_out.matrix_f64(group, h)?;
        let rho_in_inv = rep_in.matrix_f64(group, group.inverse(h)?)?;

        // A = (I_chan (x) spatial) - (chan (x) I_spatial), row-major channel
        // index (a, b), spatial index y; unknown order matches Tensor layout
        // (d_out, d_in, ks, ks).
        let mut a_mat = DMatrix::zeros(n_unknowns, n_unknowns);
        let sp = ks * ks;
        for a in 0..d_out {
            for b in 0..d_in {
                let row_blk = (a * d_in + b) * sp;
                for y in 0..sp {
                    for y2 in 0..sp {
                        a_mat[(row_blk + y, row_blk + y2)] += spatial[(y, y2)];
                    }
                }
                for c in 0..d_out {
                    for d in 0..d_in {
                        let coef = rho_out.at(&[a, c]) * rho_in_inv.at(&[d, b]);
                        if coef == 0.0 {
                            continue;
                        }
                        let col_blk = (c * d_in + d) * sp;
                        for y in 0..sp {
                            a_mat[(row_blk + y, col_blk + y)] -= coef;
                        }
                    }
                }
            }
        }

        let svd = a_mat.svd(false, true);
        let v_t = svd.v_t.as_ref().expect("SVD computed with V^T");
        let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        if sigma_max <= f64::EPSILON {
            (0..n_unknowns)
                .map(|i| {
                    let mut v = vec![0.0; n_unknowns];
                    v[i] = 1.0;
                    v
                })
                .collect()
        } else {
            let tol = RANK_TOL * sigma_max;
            let mut kept = Vec::new();
            for (i, &s) in svd.singular_values.iter().enumerate() {
                if s < tol {
                    kept.push(v_t.row(i).iter().cloned().collect::<Vec<f64>>());
                }
            }
            // rows of V^T beyond the number of singular values span the
            // remaining (exact) nullspace when the matrix is rectangular;
            // square here, but handle it for safety
            for i in svd.singular_values.len()..v_t.nrows() {
                kept.push(v_t.row(i).iter().cloned().collect::<Vec<f64>>());
            }
            kept
        }
    };

    let mut vectors = vectors;
    for v in &mut vectors {
        canonical_sign(v);
    }
    let center = (ks / 2) * ks + ks / 2;
    let participation = |v: &Vec<f64>| -> f64 {
        (0..d_out * d_in).map(|ch| v[ch * ks * ks + center].powi(2)).sum()
    };
    vectors.sort_by(|a, b| {
        participation(b)
            .partial_cmp(&participation(a))
            .unwrap()
            .then_with(|| a.partial_cmp(b).unwrap())
    });

    let elems = vectors
        .into_iter()
        .map(|v| {
            Tensor::<f64>::from_vec(&[d_out, d_in, ks, ks], v)
                .unwrap()
                .cast::<T>()
        })
        .collect();
    Ok(KernelBasis {
        group,
        rep_in: rep_in.clone(),
        rep_out: rep_out.clone(),
        k,
        elems,
    })
}

fn canonical_sign(v: &mut [f64]) {
    for &x in v.iter() {
        if x.abs() > 1e-12 {
            if x < 0.0 {
                for y in v.iter_mut() {
                    *y = -*y;
                }
            }
            return;
        }
    }
}

/// Max over basis elements, group elements, and kernel positions of the
/// steerable-constraint residual |Phi(hx) - rho_out(h) Phi(x) rho_in(h^-1)|.
pub fn verify_basis<T: Scalar>(basis: &KernelBasis<T>) -> Result<f64> {
    let mut max_res: f64 = 0.0;
    for elem in &basis.elems {
        for h in basis.group.elements() {
            max_res = max_res.max(constraint_residual(
                elem,
                basis.group,
                &basis.rep_in,
                &basis.rep_out,
                h,
            )?);
        }
    }
    Ok(max_res)
}

/// Residual of one kernel against one group element, max-abs over entries.
pub fn constraint_residual<T: Scalar>(
    kernel: &Tensor<T>,
    group: CyclicGroup,
    rep_in: &Representation,
    rep_out: &Representation,
    h: usize,
) -> Result<f64> {
    let dims = kernel.dims();
    let (d_out, d_in, ks) = (dims[0], dims[1], dims[2]);
    // lhs(y) = Phi(R_h y)
    let lhs = rotate_grid(
        kernel.data(),
        d_out * d_in,
        ks,
        ks,
        group,
        group.inverse(h)?,
    )?;
    let rho_out = rep_out.matrix_f64(group, h)?;
    let rho_in_inv = rep_in.matrix_f64(group, group.inverse(h)?)?;
    let mut max_res: f64 = 0.0;
    let sp = ks * ks;
    let kd = kernel.data();
    for a in 0..d_out {
        for b in 0..d_in {
            for y in 0..sp {
                let mut rhs = 0.0;
                for c in 0..d_out {
                    for d in 0..d_in {
                        rhs += rho_out.at(&[a, c])
                            * crate::scalar::to_f64(kd[(c * d_in + d) * sp + y])
                            * rho_in_inv.at(&[d, b]);
                    }
                }
                let l = crate::scalar::to_f64(lhs[(a * d_in + b) * sp + y]);
                max_res = max_res.max((l - rhs).abs());
            }
        }
    }
    Ok(max_res)
}
