//! Backend-agnostic relaxation systems `A U' = Q(U)` with an orthogonal
//! macroscopic/microscopic splitting, the equilibrium manifold and the
//! assumption validator. Also hosts the small synthetic backends.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chapman_enskog::ReducedSystem;
use crate::collision::CollisionOperator;
use crate::error::{Error, Result};
use crate::linalg::{eigen, singular_values, sym_eigen};
use crate::macro_micro::{build_compensator, genuine_coupling};
use crate::tolerances::{CONSERVATION_TOL, EQUILIBRIUM_MAX_ITER, RANK_TOL, SYM_TOL};
use crate::velocity_space::QuadratureGrid;

/// `U ↦ L U + B(U, U)` with one bilinear form per output component.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticMap {
    pub linear: DMatrix<f64>,
    /// `B_i(x, y) = xᵀ M_i y`.
    pub bilinear: Vec<DMatrix<f64>>,
}

impl QuadraticMap {
    pub fn zero(n_out: usize, n_in: usize) -> Self {
        Self {
            linear: DMatrix::zeros(n_out, n_in),
            bilinear: vec![DMatrix::zeros(n_in, n_in); n_out],
        }
    }

    pub fn n_out(&self) -> usize {
        self.bilinear.len()
    }

    pub fn n_in(&self) -> usize {
        self.linear.ncols()
    }

    /// The bilinear part `B(x, y)`.
    pub fn bilinear_apply(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n_out(), self.bilinear.iter().map(|m| x.dot(&(m * y))))
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.linear * x + self.bilinear_apply(x, x)
    }

    /// Jacobian `L + (M_i + M_iᵀ) x` row by row.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.linear.clone();
        for (i, m) in self.bilinear.iter().enumerate() {
            let row = m * x + m.transpose() * x;
            for k in 0..self.n_in() {
                j[(i, k)] += row[k];
            }
        }
        j
    }

    /// Largest `‖M_i − M_iᵀ‖`, relative to the largest `‖M_i‖`.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self.bilinear.iter().map(|m| m.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        self.bilinear
            .iter()
            .map(|m| (m - m.transpose()).norm())
            .fold(0.0, f64::max)
            / scale
    }

    fn scale(&self) -> f64 {
        self.linear.norm() + self.bilinear.iter().map(|m| m.norm()).sum::<f64>()
    }
}

/// A relaxation system in coordinates where the first `n_macro` unit
/// vectors span the macroscopic space and the inner product is Euclidean.
#[derive(Debug, Clone)]
pub struct RelaxationSystem {
    pub label: String,
    pub a: DMatrix<f64>,
    pub collision: QuadraticMap,
    pub n_macro: usize,
    /// Reference equilibrium `Ū̲`.
    pub reference: DVector<f64>,
    /// Macroscopic base state `u₀` around which shocks are built.
    pub base: DVector<f64>,
}

impl RelaxationSystem {
    pub fn new(
        label: impl Into<String>,
        a: DMatrix<f64>,
        collision: QuadraticMap,
        n_macro: usize,
        reference: DVector<f64>,
        base: DVector<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || collision.n_in() != n || collision.n_out() != n || reference.len() != n
        {
            return Err(Error::Config(format!(
                "inconsistent system dimensions: A {}x{}, Q {}->{}, reference {}",
                a.nrows(),
                a.ncols(),
                collision.n_in(),
                collision.n_out(),
                reference.len()
            )));
        }
        if n_macro == 0 || n_macro >= n || base.len() != n_macro {
            return Err(Error::Config(format!(
                "macroscopic dimension {n_macro} (base {}) invalid for N = {n}",
                base.len()
            )));
        }
        Ok(Self {
            label: label.into(),
            a,
            collision,
            n_macro,
            reference,
            base,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_micro(&self) -> usize {
        self.dim() - self.n_macro
    }

    pub fn a11(&self) -> DMatrix<f64> {
        self.a
            .view((0, 0), (self.n_macro, self.n_macro))
            .into_owned()
    }
    pub fn a12(&self) -> DMatrix<f64> {
        self.a
            .view((0, self.n_macro), (self.n_macro, self.n_micro()))
            .into_owned()
    }
    pub fn a21(&self) -> DMatrix<f64> {
        self.a
            .view((self.n_macro, 0), (self.n_micro(), self.n_macro))
            .into_owned()
    }
    pub fn a22(&self) -> DMatrix<f64> {
        self.a
            .view(
                (self.n_macro, self.n_macro),
                (self.n_micro(), self.n_micro()),
            )
            .into_owned()
    }

    pub fn join(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim(), u.iter().chain(v.iter()).copied())
    }

    pub fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            x.rows(0, self.n_macro).into_owned(),
            x.rows(self.n_macro, self.n_micro()).into_owned(),
        )
    }

    pub fn reference_macro(&self) -> DVector<f64> {
        self.split(&self.reference).0
    }

    pub fn reference_micro(&self) -> DVector<f64> {
        self.split(&self.reference).1
    }

    /// Macroscopic flux `A₁₁u + A₁₂v`.
    pub fn h(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.a11() * u + self.a12() * v
    }

    /// Microscopic part of the collision map at `u ⊕ v`.
    pub fn q(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let full = self.collision.eval(&self.join(u, v));
        full.rows(self.n_macro, self.n_micro()).into_owned()
    }

    /// Jacobian of the microscopic collision part, split as `(∂_u q, ∂_v q)`.
    pub fn dq(&self, u: &DVector<f64>, v: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let j = self.collision.jacobian(&self.join(u, v));
        let (n, m) = (self.n_macro, self.n_micro());
        (
            j.view((n, 0), (m, n)).into_owned(),
            j.view((n, n), (m, m)).into_owned(),
        )
    }

    /// Linearized collision operator at the reference.
    pub fn reference_linearization(&self) -> DMatrix<f64> {
        self.collision.jacobian(&self.reference)
    }

    /// Same system with the collision map scaled by `c`.
    pub fn with_collision_scale(&self, c: f64) -> Self {
        let mut s = self.clone();
        s.collision.linear *= c;
        s.collision.bilinear.iter_mut().for_each(|m| *m *= c);
        s
    }
}

/// Newton solver for the equilibrium manifold `q(u, v*(u)) = 0` near `u₀`.
#[derive(Debug, Clone)]
pub struct EquilibriumMap {
    pub base_u: DVector<f64>,
    pub base_v: DVector<f64>,
    /// Radius of the admissible ball around `u₀`.
    pub radius: f64,
    pub tol: f64,
}

impl EquilibriumMap {
    pub fn new(system: &RelaxationSystem, tol: f64) -> Result<Self> {
        let u0 = system.base.clone();
        let radius = 0.2 * u0.norm().max(1.0);
        let mut map = Self {
            base_u: u0.clone(),
            base_v: system.reference_micro(),
            radius: f64::INFINITY,
            tol,
        };
        // the reference is an equilibrium; continue from it to u₀
        let ur = system.reference_macro();
        let steps = ((&u0 - &ur).norm() / (0.05 * radius)).ceil().max(1.0) as usize;
        let mut v = map.base_v.clone();
        for k in 1..=steps {
            let u = &ur + (&u0 - &ur) * (k as f64 / steps as f64);
            v = map.newton(system, &u, v)?;
        }
        map.base_v = v;
        map.radius = radius;
        Ok(map)
    }

    pub fn v_star(&self, system: &RelaxationSystem, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.v_star_from(system, u, self.base_v.clone())
    }

    /// Newton from a caller-supplied starting point.
    pub fn v_star_from(
        &self,
        system: &RelaxationSystem,
        u: &DVector<f64>,
        start: DVector<f64>,
    ) -> Result<DVector<f64>> {
        let d = (u - &self.base_u).norm();
        if d > self.radius {
            return Err(Error::InvalidState(format!(
                "state at distance {d:.3e} from the base state is outside the equilibrium domain (radius {:.3e})",
                self.radius
            )));
        }
        self.newton(system, u, start)
    }

    fn newton(
        &self,
        system: &RelaxationSystem,
        u: &DVector<f64>,
        mut v: DVector<f64>,
    ) -> Result<DVector<f64>> {
        for _ in 0..EQUILIBRIUM_MAX_ITER {
            let r = system.q(u, &v);
            if r.norm() <= self.tol {
                return Ok(v);
            }
            let (_, dv) = system.dq(u, &v);
            let step = dv.lu().solve(&r).ok_or_else(|| {
                Error::Assumption("∂_v q is singular along the equilibrium manifold".into())
            })?;
            v -= step;
        }
        let r = system.q(u, &v).norm();
        if r <= self.tol * 10.0 {
            return Ok(v);
        }
        Err(Error::Solver(format!(
            "equilibrium Newton did not converge in {EQUILIBRIUM_MAX_ITER} steps (residual {r:.3e}); state is out of domain"
        )))
    }

    /// `dv* = −∂_v q⁻¹ ∂_u q` at `(u, v*(u))`.
    pub fn dv_star(
        &self,
        system: &RelaxationSystem,
        u: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let (du, dv) = system.dq(u, v);
        let x = dv.lu().solve(&du).ok_or_else(|| {
            Error::Assumption("∂_v q is singular along the equilibrium manifold".into())
        })?;
        Ok(-x)
    }
}

/// Diagonal `⟨ξ⟩^{1/2}` change of variables on a velocity grid.
#[derive(Debug, Clone)]
pub struct Rescaling {
    pub bracket: Vec<f64>,
}

impl Rescaling {
    pub fn new(grid: &QuadratureGrid) -> Self {
        Self {
            bracket: grid
                .nodes
                .iter()
                .map(crate::velocity_space::bracket)
                .collect(),
        }
    }

    /// `f̃ = ⟨ξ⟩^{1/2} f`.
    pub fn forward(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.bracket)
            .map(|(a, b)| a * b.sqrt())
            .collect()
    }

    pub fn inverse(&self, g: &[f64]) -> Vec<f64> {
        g.iter()
            .zip(&self.bracket)
            .map(|(a, b)| a / b.sqrt())
            .collect()
    }

    /// Diagonal of `Ã = ⟨ξ⟩^{-1/2} ξ₁ ⟨ξ⟩^{-1/2}`.
    pub fn a_tilde(&self, grid: &QuadratureGrid) -> Vec<f64> {
        grid.nodes
            .iter()
            .zip(&self.bracket)
            .map(|(x, b)| x[0] / b)
            .collect()
    }

    /// `Q̃(f̃, g̃) = ⟨ξ⟩^{-1/2} Q(⟨ξ⟩^{-1/2} f̃, ⟨ξ⟩^{-1/2} g̃)`.
    pub fn q_tilde(&self, op: &CollisionOperator, f: &[f64], g: &[f64]) -> Vec<f64> {
        self.inverse(&op.q(&self.inverse(f), &self.inverse(g)))
    }
}

/// Outcome of one assumption check.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub witness: Option<Vec<f64>>,
    pub note: String,
}

impl AssumptionCheck {
    fn new(name: &str, passed: bool, value: f64, threshold: f64, note: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            value,
            threshold,
            witness: None,
            note: note.into(),
        }
    }

    fn witness(mut self, w: &DVector<f64>) -> Self {
        self.witness = Some(w.iter().copied().collect());
        self
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AssumptionReport {
    pub system: String,
    pub dim: usize,
    pub n_macro: usize,
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Checks the structural, reference-state and reduced-system assumptions.
pub fn validate(system: &RelaxationSystem, equilibrium_tol: f64) -> Result<AssumptionReport> {
    let n = system.n_macro;
    let dim = system.dim();
    let mut checks = Vec::new();

    let a_scale = system.a.norm().max(f64::MIN_POSITIVE);
    let asym = (&system.a - system.a.transpose()).norm() / a_scale;
    checks.push(AssumptionCheck::new(
        "flux_symmetric",
        asym <= SYM_TOL,
        asym,
        SYM_TOL,
        "relative ‖A − Aᵀ‖",
    ));

    // range of Q: every macroscopic output component must vanish identically
    let q_scale = system.collision.scale().max(f64::MIN_POSITIVE);
    let mut worst = (0.0, 0usize);
    for i in 0..n {
        let c =
            (system.collision.linear.row(i).norm() + system.collision.bilinear[i].norm()) / q_scale;
        if c > worst.0 {
            worst = (c, i);
        }
    }
    let range_ok = worst.0 <= CONSERVATION_TOL;
    let mut range = AssumptionCheck::new(
        "collision_range_micro",
        range_ok,
        worst.0,
        CONSERVATION_TOL,
        if range_ok {
            "collision map has no macroscopic component".to_string()
        } else {
            format!("macroscopic component {} is nonzero", worst.1)
        },
    );
    if !range_ok {
        range = range.witness(&DVector::from_fn(
            dim,
            |k, _| if k == worst.1 { 1.0 } else { 0.0 },
        ));
    }
    checks.push(range);

    let qsym = system.collision.symmetry_defect();
    checks.push(AssumptionCheck::new(
        "collision_symmetric",
        qsym <= SYM_TOL,
        qsym,
        SYM_TOL,
        "relative ‖M_i − M_iᵀ‖",
    ));

    let qref = system.collision.eval(&system.reference).norm();
    checks.push(AssumptionCheck::new(
        "reference_equilibrium",
        qref <= equilibrium_tol,
        qref,
        equilibrium_tol,
        "‖Q(reference)‖",
    ));

    let l = system.reference_linearization();
    let l_scale = l.norm();
    let lsym = if l_scale > 0.0 {
        (&l - l.transpose()).norm() / l_scale
    } else {
        0.0
    };
    checks.push(AssumptionCheck::new(
        "reference_self_adjoint",
        lsym <= SYM_TOL,
        lsym,
        SYM_TOL,
        "relative ‖L − Lᵀ‖",
    ));

    let l_on_u = l.columns(0, n).into_owned();
    let kernel_defect = if l_scale > 0.0 {
        l_on_u.norm() / l_scale
    } else {
        0.0
    };
    let mut kernel = AssumptionCheck::new(
        "reference_kernel_macro",
        kernel_defect <= SYM_TOL,
        kernel_defect,
        SYM_TOL,
        "relative ‖L restricted to the macroscopic space‖",
    );
    if kernel_defect > SYM_TOL {
        let (sv, j) = (0..n)
            .map(|j| (l_on_u.column(j).norm(), j))
            .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a });
        let _ = sv;
        kernel = kernel.witness(&DVector::from_fn(
            dim,
            |k, _| if k == j { 1.0 } else { 0.0 },
        ));
    }
    checks.push(kernel);

    let l22 = l.view((n, n), (dim - n, dim - n)).into_owned();
    let (ev, vecs) = sym_eigen(&l22)?;
    let top = ev[ev.len() - 1];
    let neg_tol = 1e-12 * l_scale.max(1.0);
    let mut neg = AssumptionCheck::new(
        "reference_dissipative",
        top < -neg_tol,
        top,
        -neg_tol,
        "largest eigenvalue of L on the microscopic space",
    );
    if top >= -neg_tol {
        let w = vecs.column(ev.len() - 1).clone_owned();
        neg = neg.witness(&system.join(&DVector::zeros(n), &w));
    }
    checks.push(neg);

    let phi = DMatrix::from_fn(dim, n, |i, j| if i == j { 1.0 } else { 0.0 });
    let (coupling, w) = genuine_coupling(&system.a, &phi)?;
    let coupling_tol = 1e-10 * a_scale.max(1.0);
    let mut gc = AssumptionCheck::new(
        "genuine_coupling",
        coupling > coupling_tol,
        coupling,
        coupling_tol,
        "min ‖A₂₁ r‖ over eigenvectors r of A₁₁",
    );
    if coupling <= coupling_tol {
        gc = gc.witness(&w);
    }
    checks.push(gc);

    let lsym_part = (&l + l.transpose()) * 0.5;
    match build_compensator(&system.a, &lsym_part, &phi, &DMatrix::identity(dim, dim)) {
        Ok(k) => checks.push(AssumptionCheck::new(
            "kawashima",
            k.gamma > 0.0,
            k.gamma,
            0.0,
            format!("γ of Re(KA) − L at θ = {:.3e}", k.theta),
        )),
        Err(e) => checks.push(AssumptionCheck::new(
            "kawashima",
            false,
            0.0,
            0.0,
            e.to_string(),
        )),
    }

    let structural_ok = checks
        .iter()
        .all(|c| c.passed || c.name == "reference_kernel_macro");
    if structural_ok {
        match reduced_checks(system, equilibrium_tol) {
            Ok(mut c) => checks.append(&mut c),
            Err(e) => checks.push(AssumptionCheck::new(
                "reduced_system",
                false,
                0.0,
                0.0,
                e.to_string(),
            )),
        }
    } else {
        checks.push(AssumptionCheck::new(
            "reduced_system",
            false,
            0.0,
            0.0,
            "skipped: structural or reference-state checks failed",
        ));
    }
    Ok(AssumptionReport {
        system: system.label.clone(),
        dim,
        n_macro: n,
        checks,
    })
}

fn reduced_checks(system: &RelaxationSystem, equilibrium_tol: f64) -> Result<Vec<AssumptionCheck>> {
    let eq = EquilibriumMap::new(system, equilibrium_tol)?;
    let red = ReducedSystem::reduce(system.clone(), eq)?;
    let u0 = red.u0.clone();
    let n = system.n_macro;
    let mut out = Vec::new();

    let dh = red.dh_star(&u0)?;
    let b = red.b_star(&u0)?;
    let (vals, vecs) = eigen(&dh)?;
    let dh_scale = dh.norm().max(1.0);
    let imag = vals.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let vmat = DMatrix::from_fn(n, n, |i, j| vecs[j][i].re);
    let sv = singular_values(&vmat);
    let cond = sv[0] / sv[n - 1].max(f64::MIN_POSITIVE);
    let b_eigs = eigen(&b)?.0;
    let b_scale = b.norm().max(f64::MIN_POSITIVE);
    let b_min = b_eigs.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let b_imag = b_eigs.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let sym_ok = imag <= 1e-8 * dh_scale
        && cond < 1e8
        && b_min >= -1e-8 * b_scale
        && b_imag <= 1e-8 * b_scale;
    out.push(AssumptionCheck::new(
        "symmetrizable",
        sym_ok,
        b_min,
        -1e-8 * b_scale,
        format!(
            "partial check: flux Jacobian spectrum real (max |Im| {imag:.2e}), eigenbasis condition {cond:.2e}, viscosity spectrum min Re {b_min:.3e}"
        ),
    ));

    let mut worst = (f64::INFINITY, 0usize);
    for (j, v) in vecs.iter().enumerate() {
        let r = DVector::from_fn(n, |i, _| v[i].re);
        let r = &r / r.norm();
        let x = (&b * &r).norm() / b_scale;
        if x < worst.0 {
            worst = (x, j);
        }
    }
    let mut noeig = AssumptionCheck::new(
        "no_eigenvector_in_viscosity_kernel",
        worst.0 > RANK_TOL,
        worst.0,
        RANK_TOL,
        "min ‖b* r‖/‖b*‖ over eigenvectors r of dh*",
    );
    if worst.0 <= RANK_TOL {
        noeig = noeig.witness(&DVector::from_fn(n, |i, _| vecs[worst.1][i].re));
    }
    out.push(noeig);

    let samples = sample_states(&u0, 0.25 * red.equilibrium.radius);
    let left0 = left_kernel(&b);
    let mut drift: f64 = 0.0;
    let mut transversal = f64::INFINITY;
    for u in std::iter::once(u0.clone()).chain(samples) {
        let bu = red.b_star(&u)?;
        let lk = left_kernel(&bu);
        if lk.ncols() != left0.ncols() {
            drift = f64::INFINITY;
        } else if lk.ncols() > 0 {
            let p0 = &left0 * left0.transpose();
            let p1 = &lk * lk.transpose();
            drift = drift.max((p1 - p0).norm());
        }
        transversal = transversal.min(transversality(&bu, &red.dh_star(&u)?)?);
    }
    out.push(AssumptionCheck::new(
        "constant_left_kernel",
        drift <= 1e-6,
        drift,
        1e-6,
        format!(
            "left kernel dimension {} at the base state; projector drift over sampled states",
            left0.ncols()
        ),
    ));
    out.push(AssumptionCheck::new(
        "kernel_transversality",
        transversal > RANK_TOL,
        transversal,
        RANK_TOL,
        "smallest relative singular value of [π* dh*; b*] over sampled states",
    ));

    match red.slow_field() {
        Ok(sf) => out.push(AssumptionCheck::new(
            "genuine_nonlinearity",
            sf.nonlinearity < 0.0 && sf.separation <= 0.1,
            sf.nonlinearity,
            0.0,
            format!(
                "∇α·r with α(u₀) = {:.3e}, separation ratio {:.3e}",
                sf.alpha, sf.separation
            ),
        )),
        Err(e) => out.push(AssumptionCheck::new(
            "genuine_nonlinearity",
            false,
            0.0,
            0.0,
            e.to_string(),
        )),
    }
    Ok(out)
}

fn sample_states(u0: &DVector<f64>, h: f64) -> Vec<DVector<f64>> {
    let mut out = Vec::new();
    for k in 0..u0.len() {
        for s in [-1.0, 1.0] {
            let mut u = u0.clone();
            u[k] += s * h;
            out.push(u);
        }
    }
    out
}

/// Orthonormal basis of the left kernel, rank decided relative to the largest singular value.
pub fn left_kernel(b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.nrows();
    let (vals, vecs) =
        sym_eigen(&(b * b.transpose())).expect("symmetric eigensolve of a small matrix");
    let top = vals.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n)
        .filter(|i| vals[*i].max(0.0).sqrt() <= RANK_TOL * top.sqrt().max(f64::MIN_POSITIVE))
        .collect();
    DMatrix::from_fn(n, keep.len(), |i, j| vecs[(i, keep[j])])
}

/// Zero eigenprojection of `b`, built from its left and right kernels.
pub fn zero_eigenprojection(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = left_kernel(b);
    let r = left_kernel(&b.transpose());
    let n = b.nrows();
    if l.ncols() == 0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let g = l.transpose() * &r;
    let gi = g.try_inverse().ok_or_else(|| {
        Error::Assumption("zero eigenvalue of the viscosity matrix is not semisimple".into())
    })?;
    Ok(&r * gi * l.transpose())
}

fn transversality(b: &DMatrix<f64>, dh: &DMatrix<f64>) -> Result<f64> {
    let n = b.nrows();
    let pi = zero_eigenprojection(b)?;
    let top = pi * dh;
    let stacked = DMatrix::from_fn(
        2 * n,
        n,
        |i, j| if i < n { top[(i, j)] } else { b[(i - n, j)] },
    );
    let sv = singular_values(&stacked);
    Ok(sv[n - 1] / sv[0].max(f64::MIN_POSITIVE))
}

/// Dense coefficient tables of a small synthetic system in split coordinates.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticSpec {
    pub label: String,
    pub n_macro: usize,
    pub n_micro: usize,
    /// `A`, row-major `N×N`.
    pub flux: Vec<f64>,
    /// Linear part of `Q`, row-major `N×N`.
    pub linear: Vec<f64>,
    /// Bilinear part of `Q`, `[i][j][k]` flattened: `Q_i = Σ_jk M_ijk U_j U_k`.
    pub bilinear: Vec<f64>,
    pub reference: Vec<f64>,
    pub base: Vec<f64>,
}

impl SyntheticSpec {
    /// Scalar Burgers-closure model: `A = [[-1/2, 1], [1, 3/10]]`, `q = u²/2 − v`.
    pub fn burgers_closure() -> Self {
        let mut bilinear = vec![0.0; 8];
        bilinear[4] = 0.5;
        Self {
            label: "burgers-closure".into(),
            n_macro: 1,
            n_micro: 1,
            flux: vec![-0.5, 1.0, 1.0, 0.3],
            linear: vec![0.0, 0.0, 0.0, -1.0],
            bilinear,
            reference: vec![0.0, 0.0],
            base: vec![0.5],
        }
    }

    /// Three-velocity discrete model with speeds `a+1, a−1, a` and
    /// collisions `f₊f₋ ↔ f₀²`, written in orthonormal split coordinates.
    pub fn broadwell() -> Self {
        let a = 2.0 / 6f64.sqrt();
        let s3 = 3f64.sqrt();
        let s2 = 2f64.sqrt();
        let s6 = 6f64.sqrt();
        // columns: (1,1,1)/√3, (1,-1,0)/√2, (1,1,-2)/√6 in (f₊, f₋, f₀)
        let e = DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0 / s3,
                1.0 / s2,
                1.0 / s6,
                1.0 / s3,
                -1.0 / s2,
                1.0 / s6,
                1.0 / s3,
                0.0,
                -2.0 / s6,
            ],
        );
        let speeds = DMatrix::from_diagonal(&DVector::from_vec(vec![a + 1.0, a - 1.0, a]));
        let flux = e.transpose() * speeds * &e;
        // Q_f(f, g) = (f₀g₀ − (f₊g₋ + f₋g₊)/2)·(1, 1, −2)
        let s = DMatrix::from_row_slice(3, 3, &[0.0, -0.5, 0.0, -0.5, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let m = e.transpose() * s * &e * s6;
        let mut bilinear = vec![0.0; 27];
        for j in 0..3 {
            for k in 0..3 {
                bilinear[18 + 3 * j + k] = m[(j, k)];
            }
        }
        Self {
            label: "broadwell".into(),
            n_macro: 2,
            n_micro: 1,
            flux: flux.transpose().iter().copied().collect(),
            linear: vec![0.0; 9],
            bilinear,
            reference: vec![s3, 0.0, 0.0],
            base: vec![s3, 0.0],
        }
    }
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<RelaxationSystem> {
    let (n, m) = (spec.n_macro, spec.n_micro);
    if n == 0 || n > 2 || m == 0 || m > 4 {
        return Err(Error::Config(format!(
            "synthetic systems need 1 ≤ n_macro ≤ 2 and 1 ≤ n_micro ≤ 4 (got {n}, {m})"
        )));
    }
    let dim = n + m;
    let want = |name: &str, got: usize, expect: usize| -> Result<()> {
        if got != expect {
            return Err(Error::Config(format!(
                "synthetic {name} has {got} entries, expected {expect}"
            )));
        }
        Ok(())
    };
    want("flux", spec.flux.len(), dim * dim)?;
    want("linear", spec.linear.len(), dim * dim)?;
    want("bilinear", spec.bilinear.len(), dim * dim * dim)?;
    want("reference", spec.reference.len(), dim)?;
    want("base", spec.base.len(), n)?;
    let a = DMatrix::from_row_slice(dim, dim, &spec.flux);
    let linear = DMatrix::from_row_slice(dim, dim, &spec.linear);
    let bilinear = (0..dim)
        .map(|i| {
            DMatrix::from_row_slice(dim, dim, &spec.bilinear[i * dim * dim..(i + 1) * dim * dim])
        })
        .collect();
    RelaxationSystem::new(
        spec.label.clone(),
        a,
        QuadraticMap { linear, bilinear },
        n,
        DVector::from_column_slice(&spec.reference),
        DVector::from_column_slice(&spec.base),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tolerances::EQUILIBRIUM_TOL_SYNTHETIC;

    fn burgers() -> RelaxationSystem {
        make_synthetic(&SyntheticSpec::burgers_closure()).unwrap()
    }

    #[test]
    fn burgers_equilibrium_matches_closed_form() {
        let s = burgers();
        let eq = EquilibriumMap::new(&s, EQUILIBRIUM_TOL_SYNTHETIC).unwrap();
        for u in [0.45, 0.5, 0.58] {
            let uv = DVector::from_vec(vec![u]);
            let v = eq.v_star(&s, &uv).unwrap();
            assert!((v[0] - u * u / 2.0).abs() < 1e-10);
            let dv = eq.dv_star(&s, &uv, &v).unwrap();
            assert!((dv[(0, 0)] - u).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_expansion_is_exact() {
        let s = make_synthetic(&SyntheticSpec::broadwell()).unwrap();
        let ub = DVector::from_vec(vec![1.3, -0.2, 0.4]);
        let du = DVector::from_vec(vec![0.1, 0.7, -0.3]);
        let lhs = s.collision.eval(&(&ub + &du));
        let rhs = s.collision.eval(&ub)
            + s.collision.jacobian(&ub) * &du
            + s.collision.bilinear_apply(&du, &du);
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn shipped_systems_pass_validation() {
        for spec in [SyntheticSpec::broadwell(), SyntheticSpec::burgers_closure()] {
            let s = make_synthetic(&spec).unwrap();
            let r = validate(&s, EQUILIBRIUM_TOL_SYNTHETIC).unwrap();
            assert!(r.all_passed(), "{}: {:?}", spec.label, r);
        }
    }

    #[test]
    fn collision_with_macro_component_is_named() {
        let mut spec = SyntheticSpec::broadwell();
        spec.bilinear[9 + 4] = 0.3;
        let r = validate(&make_synthetic(&spec).unwrap(), EQUILIBRIUM_TOL_SYNTHETIC).unwrap();
        let c = r.get("collision_range_micro").unwrap();
        assert!(!c.passed);
        assert!(c.note.contains("component 1"));
    }

    #[test]
    fn zero_collision_fails_dissipation() {
        let mut spec = SyntheticSpec::broadwell();
        spec.bilinear.iter_mut().for_each(|x| *x = 0.0);
        let r = validate(&make_synthetic(&spec).unwrap(), EQUILIBRIUM_TOL_SYNTHETIC).unwrap();
        assert!(!r.get("reference_dissipative").unwrap().passed);
    }

    #[test]
    fn decoupled_flux_fails_genuine_coupling() {
        let mut spec = SyntheticSpec::broadwell();
        let dim = 3;
        for i in 0..dim {
            for j in 0..dim {
                let macro_row = i < 2;
                let macro_col = j < 2;
                if macro_row || macro_col {
                    spec.flux[i * dim + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        let r = validate(&make_synthetic(&spec).unwrap(), EQUILIBRIUM_TOL_SYNTHETIC).unwrap();
        let c = r.get("genuine_coupling").unwrap();
        assert!(!c.passed);
        assert!(c.witness.is_some());
    }

    #[test]
    fn validation_is_deterministic() {
        let s = make_synthetic(&SyntheticSpec::broadwell()).unwrap();
        let a = validate(&s, EQUILIBRIUM_TOL_SYNTHETIC).unwrap();
        let b = validate(&s, EQUILIBRIUM_TOL_SYNTHETIC).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn rescaling_round_trip() {
        let grid = crate::velocity_space::build_grid(6, 4.5, 2).unwrap();
        let r = Rescaling::new(&grid);
        let f: Vec<f64> = (0..grid.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let back = r.inverse(&r.forward(&f));
        assert!(f
            .iter()
            .zip(&back)
            .all(|(a, b)| (a - b).abs() <= 1e-15 * a.abs().max(1.0)));
        let at = r.a_tilde(&grid);
        let bound = grid
            .nodes
            .iter()
            .map(|x| x[0].abs() / crate::velocity_space::bracket(x))
            .fold(0.0, f64::max);
        assert!(at.iter().all(|x| x.abs() <= bound) && bound < 1.0);
    }
}
