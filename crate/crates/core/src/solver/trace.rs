use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Per-iteration diagnostic quantities relative to a reference solution `p`.
///
/// Squared distances are in the `Ψ`-norm unless noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterDiagnostics {
    pub alpha: f64,
    pub rho: f64,
    /// `‖X_{k+1} − p‖²`.
    pub dist_next: f64,
    /// `‖X_k − p‖²`.
    pub dist_cur: f64,
    /// `‖X_{k−1} − p‖²`.
    pub dist_prev: f64,
    /// `‖X_k − X_{k−1}‖²`.
    pub step_cur: f64,
    /// `‖X_{k+1} − X_k‖²`.
    pub step_next: f64,
    /// `‖Z_k − Y_k‖²`.
    pub zy_dist: f64,
    /// `r_Ψ(Z_k)` (Euclidean).
    pub r_psi_z: f64,
    /// `‖U_k‖²_{Ψ⁻¹}` with `U_k = A_k − V(Z_k)`.
    pub u_err: f64,
    /// `‖W_k − U_k‖²_{Ψ⁻¹}` with `W_k = B_k − V(Y_k)`.
    pub e_err: f64,
    pub d_m: f64,
    pub d_n: f64,
    pub h: f64,
    pub delta: f64,
}

/// One row of the trace. Row `k` describes iteration `k`, which maps
/// `X_k` to `X_{k+1}`; the residuals are those of `X_{k+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub k: usize,
    pub r_psi: f64,
    pub res: Option<f64>,
    pub consensus_gap: f64,
    pub feas_gap: f64,
    /// `‖X_{k+1} − X_k‖_Ψ`.
    pub step_norm: f64,
    pub diag: Option<IterDiagnostics>,
}

/// Records of a run plus the constants needed to re-check the diagnostics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverTrace {
    pub records: Vec<IterRecord>,
    /// Iterations executed (records may be decimated).
    pub iterations: usize,
    pub nu: f64,
    /// `ℓ_{V,Ψ}`.
    pub ell_v_psi: f64,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterRecord> {
        self.records.last()
    }

    pub fn has_diagnostics(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.diag.is_some())
    }

    /// SHA-256 over the bit patterns of every record, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update((r.k as u64).to_le_bytes());
            for v in [r.r_psi, r.consensus_gap, r.feas_gap, r.step_norm] {
                h.update(v.to_bits().to_le_bytes());
            }
            match r.res {
                Some(v) => {
                    h.update([1u8]);
                    h.update(v.to_bits().to_le_bytes());
                }
                None => h.update([0u8]),
            }
            if let Some(d) = &r.diag {
                for v in [
                    d.alpha, d.rho, d.dist_next, d.dist_cur, d.dist_prev, d.step_cur, d.step_next,
                    d.zy_dist, d.r_psi_z, d.u_err, d.e_err, d.d_m, d.d_n, d.h, d.delta,
                ] {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// CSV with columns `k,r_psi,res,consensus_gap,feas_gap,step_norm` and,
    /// when every record carries diagnostics, `dM,dN,H,delta`.
    pub fn to_csv(&self) -> String {
        let diag = self.has_diagnostics();
        let mut s = String::from("k,r_psi,res,consensus_gap,feas_gap,step_norm");
        if diag {
            s.push_str(",dM,dN,H,delta");
        }
        s.push('\n');
        for r in &self.records {
            let res = r.res.map(|v| v.to_string()).unwrap_or_default();
            let _ = write!(
                s,
                "{},{},{},{},{},{}",
                r.k, r.r_psi, res, r.consensus_gap, r.feas_gap, r.step_norm
            );
            if let (true, Some(d)) = (diag, &r.diag) {
                let _ = write!(s, ",{},{},{},{}", d.d_m, d.d_n, d.h, d.delta);
            }
            s.push('\n');
        }
        s
    }
}
