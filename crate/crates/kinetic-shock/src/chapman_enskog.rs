//! First-order Chapman-Enskog reduction: equilibrium flux `h*`, viscosity
//! `b*`, the microscopic corrector `c*` and the slow characteristic field.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::eigen;
use crate::relaxation::{EquilibriumMap, RelaxationSystem};

/// Reduced quantities at one macroscopic state.
#[derive(Debug, Clone)]
pub struct CeState {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub h: DVector<f64>,
    pub dv: DMatrix<f64>,
    pub dh: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// A second-order viscous conservation law `h(u)' = (b(u) u')'`.
pub trait ViscousModel: Sync {
    fn dim(&self) -> usize;
    fn flux(&self, u: &DVector<f64>) -> Result<DVector<f64>>;
    fn flux_jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>>;
    fn viscosity(&self, u: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Flux, flux Jacobian and viscosity together.
    fn evaluate(&self, u: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.flux(u)?, self.flux_jacobian(u)?, self.viscosity(u)?))
    }
}

#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub system: RelaxationSystem,
    pub equilibrium: EquilibriumMap,
    pub u0: DVector<f64>,
}

/// Slow characteristic field at the base state.
#[derive(Debug, Clone, Serialize)]
pub struct SlowField {
    pub alpha: f64,
    pub r: Vec<f64>,
    pub l: Vec<f64>,
    /// `|α| / |next smallest eigenvalue|`.
    pub separation: f64,
    /// `∇α·r`, oriented to be negative.
    pub nonlinearity: f64,
    pub eigenvalues: Vec<f64>,
}

/// Relative finite-difference cross-check of the analytic Jacobians.
#[derive(Debug, Clone, Serialize)]
pub struct JacobianCheck {
    pub dh_rel: f64,
    pub dv_rel: f64,
    pub implicit_rel: f64,
}

impl ReducedSystem {
    pub fn reduce(system: RelaxationSystem, equilibrium: EquilibriumMap) -> Result<Self> {
        let u0 = equilibrium.base_u.clone();
        let (_, dv) = system.dq(&u0, &equilibrium.base_v);
        let scale = dv.norm();
        let smin = crate::linalg::singular_values(&dv)
            .last()
            .copied()
            .unwrap_or(0.0);
        if !(smin > 1e-12 * scale.max(1.0)) {
            return Err(Error::Assumption(format!(
                "∂_v q is singular at the base state (smallest singular value {smin:.3e})"
            )));
        }
        Ok(Self {
            system,
            equilibrium,
            u0,
        })
    }

    pub fn n(&self) -> usize {
        self.system.n_macro
    }

    pub fn v_star(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.equilibrium.v_star(&self.system, u)
    }

    /// Every reduced quantity at `u`, Newton warm-started from `start`.
    pub fn state_from(&self, u: &DVector<f64>, start: Option<&DVector<f64>>) -> Result<CeState> {
        let sys = &self.system;
        let v = match start {
            Some(s) => self.equilibrium.v_star_from(sys, u, s.clone())?,
            None => self.v_star(u)?,
        };
        let (qu, qv) = sys.dq(u, &v);
        let lu = qv.lu();
        let singular =
            || Error::Assumption("∂_v q is singular along the equilibrium manifold".into());
        let dv = -lu.solve(&qu).ok_or_else(singular)?;
        let (a11, a12, a21, a22) = (sys.a11(), sys.a12(), sys.a21(), sys.a22());
        let dh = &a11 + &a12 * &dv;
        let rhs = &a21 + &a22 * &dv - &dv * &dh;
        let c = lu.solve(&rhs).ok_or_else(singular)?;
        let b = -(&a12 * &c);
        let h = &a11 * u + &a12 * &v;
        Ok(CeState {
            u: u.clone(),
            v,
            h,
            dv,
            dh,
            c,
            b,
        })
    }

    pub fn state(&self, u: &DVector<f64>) -> Result<CeState> {
        self.state_from(u, None)
    }

    pub fn h_star(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let v = self.v_star(u)?;
        Ok(self.system.h(u, &v))
    }

    pub fn dh_star(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.state(u)?.dh)
    }

    pub fn c_star(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.state(u)?.c)
    }

    pub fn b_star(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.state(u)?.b)
    }

    /// Central-difference check of `dh*` and `dv*` at `u`.
    pub fn jacobian_check(&self, u: &DVector<f64>) -> Result<JacobianCheck> {
        let st = self.state(u)?;
        let n = self.n();
        let step = 1e-5 * u.norm().max(1.0);
        let mut fd_h = DMatrix::zeros(n, n);
        let mut fd_v = DMatrix::zeros(self.system.n_micro(), n);
        for k in 0..n {
            let mut up = u.clone();
            let mut um = u.clone();
            up[k] += step;
            um[k] -= step;
            let (vp, vm) = (self.v_star(&up)?, self.v_star(&um)?);
            fd_h.set_column(
                k,
                &((self.system.h(&up, &vp) - self.system.h(&um, &vm)) / (2.0 * step)),
            );
            fd_v.set_column(k, &((vp - vm) / (2.0 * step)));
        }
        let (qu, qv) = self.system.dq(u, &st.v);
        let implicit = &qv * &st.dv + qu;
        Ok(JacobianCheck {
            dh_rel: (&fd_h - &st.dh).norm() / st.dh.norm().max(1e-300),
            dv_rel: (&fd_v - &st.dv).norm() / st.dv.norm().max(1.0),
            implicit_rel: implicit.norm() / qv.norm().max(1e-300),
        })
    }

    /// Slow eigenvalue of `dh*(u₀)` with its right and left eigenvectors.
    pub fn slow_field(&self) -> Result<SlowField> {
        let n = self.n();
        let dh = self.dh_star(&self.u0)?;
        let (alpha, mut r, mut l, eigs) = smallest_real_eigenpair(&dh)?;
        let mut sorted: Vec<f64> = eigs.iter().map(|x| x.abs()).collect();
        sorted.sort_by(f64::total_cmp);
        let separation = if n == 1 {
            0.0
        } else {
            sorted[0] / sorted[1].max(f64::MIN_POSITIVE)
        };
        if separation > 0.1 {
            return Err(Error::Assumption(format!(
                "no isolated eigenvalue near zero at the base state (ratio {separation:.3e})"
            )));
        }
        let step = 1e-5 * self.u0.norm().max(1.0);
        let mut grad = DVector::zeros(n);
        for k in 0..n {
            let mut up = self.u0.clone();
            let mut um = self.u0.clone();
            up[k] += step;
            um[k] -= step;
            let ap = nearest_eigenvalue(&self.dh_star(&up)?, alpha)?;
            let am = nearest_eigenvalue(&self.dh_star(&um)?, alpha)?;
            grad[k] = (ap - am) / (2.0 * step);
        }
        let mut g = grad.dot(&r);
        if g > 0.0 {
            r = -r;
            l = -l;
            g = -g;
        }
        Ok(SlowField {
            alpha,
            r: r.iter().copied().collect(),
            l: l.iter().copied().collect(),
            separation,
            nonlinearity: g,
            eigenvalues: eigs,
        })
    }

    /// `v̄ = v*(ū) + c*(ū) ū'`.
    pub fn ns_v_correction(&self, u: &DVector<f64>, du: &DVector<f64>) -> Result<DVector<f64>> {
        let st = self.state(u)?;
        Ok(&st.v + &st.c * du)
    }

    /// Microscopic residual `A₂₁u' + A₂₂v' − q(u, v)`.
    pub fn residual_v(
        &self,
        u: &DVector<f64>,
        v: &DVector<f64>,
        du: &DVector<f64>,
        dv: &DVector<f64>,
    ) -> DVector<f64> {
        let s = &self.system;
        s.a21() * du + s.a22() * dv - s.q(u, v)
    }
}

impl ViscousModel for ReducedSystem {
    fn dim(&self) -> usize {
        self.n()
    }
    fn flux(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.h_star(u)
    }
    fn flux_jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.dh_star(u)
    }
    fn viscosity(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.b_star(u)
    }
    fn evaluate(&self, u: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let st = self.state(u)?;
        Ok((st.h, st.dh, st.b))
    }
}

/// The same law in coordinates `u = T w`, with equations multiplied by `S`.
pub struct CoordinateChange<'a, M: ViscousModel> {
    pub inner: &'a M,
    pub s: DMatrix<f64>,
    pub t: DMatrix<f64>,
}

impl<M: ViscousModel> ViscousModel for CoordinateChange<'_, M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn flux(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.s * self.inner.flux(&(&self.t * w))?)
    }
    fn flux_jacobian(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(&self.s * self.inner.flux_jacobian(&(&self.t * w))? * &self.t)
    }
    fn viscosity(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(&self.s * self.inner.viscosity(&(&self.t * w))? * &self.t)
    }
}

fn nearest_eigenvalue(m: &DMatrix<f64>, target: f64) -> Result<f64> {
    let (vals, _) = eigen(m)?;
    Ok(vals
        .iter()
        .map(|z| z.re)
        .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
        .unwrap_or(f64::NAN))
}

/// Eigenvalue, right and left eigenvectors, and the full real spectrum.
pub type Eigenpair = (f64, DVector<f64>, DVector<f64>, Vec<f64>);

/// Eigenvalue of smallest modulus with right/left eigenvectors, `l·r = 1`.
pub fn smallest_real_eigenpair(m: &DMatrix<f64>) -> Result<Eigenpair> {
    let n = m.nrows();
    let (vals, vecs) = eigen(m)?;
    let scale = m.norm().max(1.0);
    if let Some(z) = vals.iter().find(|z| z.im.abs() > 1e-8 * scale) {
        return Err(Error::Assumption(format!(
            "flux Jacobian has a complex eigenvalue {z:?}"
        )));
    }
    let k = (0..n)
        .min_by(|a, b| vals[*a].re.abs().total_cmp(&vals[*b].re.abs()))
        .unwrap_or(0);
    let alpha = vals[k].re;
    let r = DVector::from_fn(n, |i, _| vecs[k][i].re);
    let r = &r / r.norm();
    let (lvals, lvecs) = eigen(&m.transpose())?;
    let kl = (0..n)
        .min_by(|a, b| {
            (lvals[*a].re - alpha)
                .abs()
                .total_cmp(&(lvals[*b].re - alpha).abs())
        })
        .unwrap_or(0);
    let l = DVector::from_fn(n, |i, _| lvecs[kl][i].re);
    let lr = l.dot(&r);
    if lr.abs() < 1e-12 {
        return Err(Error::Assumption(
            "slow eigenvalue is not semisimple".into(),
        ));
    }
    let l = l / lr;
    Ok((alpha, r, l, vals.iter().map(|z| z.re).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relaxation::{make_synthetic, SyntheticSpec};
    use crate::tolerances::{EQUILIBRIUM_TOL_SYNTHETIC, FD_TOL};

    fn reduced(spec: SyntheticSpec) -> ReducedSystem {
        let s = make_synthetic(&spec).unwrap();
        let eq = EquilibriumMap::new(&s, EQUILIBRIUM_TOL_SYNTHETIC).unwrap();
        ReducedSystem::reduce(s, eq).unwrap()
    }

    #[test]
    fn burgers_closure_coefficients() {
        let r = reduced(SyntheticSpec::burgers_closure());
        for u in [0.45, 0.5, 0.57] {
            let st = r.state(&DVector::from_vec(vec![u])).unwrap();
            // h* = -u/2 + u²/2, b* = 1 + 0.8u - u²
            assert!((st.h[0] - (-0.5 * u + 0.5 * u * u)).abs() < 1e-10);
            assert!((st.dh[(0, 0)] - (u - 0.5)).abs() < 1e-10);
            assert!((st.b[(0, 0)] - (1.0 + 0.8 * u - u * u)).abs() < 1e-10);
        }
        let sf = r.slow_field().unwrap();
        assert!(sf.alpha.abs() < 1e-12);
        assert!((sf.nonlinearity + 1.0).abs() < 1e-8);
        assert!((sf.l[0] * sf.r[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        for spec in [SyntheticSpec::burgers_closure(), SyntheticSpec::broadwell()] {
            let r = reduced(spec);
            let mut u = r.u0.clone();
            u[0] += 0.02;
            let c = r.jacobian_check(&u).unwrap();
            assert!(c.dh_rel < FD_TOL && c.dv_rel < FD_TOL, "{c:?}");
            assert!(c.implicit_rel < 1e-12);
        }
    }

    #[test]
    fn broadwell_viscosity_has_constant_left_kernel() {
        let r = reduced(SyntheticSpec::broadwell());
        let b = r.b_star(&r.u0).unwrap();
        // the first macroscopic flux row carries no microscopic component
        assert!(b.row(0).norm() < 1e-14);
        assert!(b[(1, 1)] > 0.0);
        let sf = r.slow_field().unwrap();
        assert!(sf.alpha.abs() < 1e-12 && sf.nonlinearity < 0.0);
    }

    #[test]
    fn constant_profile_has_no_correction() {
        let r = reduced(SyntheticSpec::broadwell());
        let v = r.ns_v_correction(&r.u0, &DVector::zeros(2)).unwrap();
        assert!((v - r.v_star(&r.u0).unwrap()).norm() < 1e-14);
        let res = r.residual_v(
            &r.u0,
            &r.v_star(&r.u0).unwrap(),
            &DVector::zeros(2),
            &DVector::zeros(1),
        );
        assert!(res.norm() < 1e-10);
    }

    #[test]
    fn coordinate_change_is_tensorial() {
        let r = reduced(SyntheticSpec::broadwell());
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 0.9]);
        let s = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 2.0]);
        let w = t.clone().try_inverse().unwrap() * &r.u0;
        let cc = CoordinateChange {
            inner: &r,
            s: s.clone(),
            t: t.clone(),
        };
        let b = cc.viscosity(&w).unwrap();
        assert!((b - &s * r.b_star(&r.u0).unwrap() * &t).norm() < 1e-14);
    }
}
