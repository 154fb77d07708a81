//! Finite-dimensional velocity subspaces spanned by polynomials times the
//! reference Maxwellian.
//!
//! Two constructions live here. The nested ladder projects the nodal
//! transport and linearized collision operators onto `x^α M̲`, graded by
//! total degree. The axisymmetric system uses `He_a(x₁) L_b(|x⊥|²/2) M̲`
//! with an exactly integrated hard-sphere collision tensor and is the
//! backend used for shock profiles.

use std::num::NonZeroUsize;

use gauss_quad::{GaussHermite, GaussLaguerre};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::sym_eigenvalues;
use crate::macro_micro::{build_compensator, NodalFrame};
use crate::parallel::{fold_indices, Execution};
use crate::relaxation::{QuadraticMap, RelaxationSystem};
use crate::velocity_space::{angular_rule, FluidState, QuadratureGrid, ReferenceMaxwellian};

/// Nested subspaces `ℍ_r` in `ℍ^{1/2}`-orthonormal nodal coordinates.
#[derive(Debug, Clone)]
pub struct GalerkinLadder {
    pub degrees: Vec<usize>,
    pub ranks: Vec<usize>,
    /// Orthonormal columns; the first five span the macroscopic space.
    pub basis: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub metric: DMatrix<f64>,
}

pub const MACRO_DIM: usize = 5;

/// Ladder of total degrees `2..=max_degree` on top of the macroscopic basis.
pub fn build_ladder(
    frame: &NodalFrame,
    grid: &QuadratureGrid,
    reference: &ReferenceMaxwellian,
    max_degree: usize,
) -> Result<GalerkinLadder> {
    if max_degree < 3 {
        return Err(Error::Config(format!(
            "ladder needs degree ≥ 3, got {max_degree}"
        )));
    }
    let u0 = &reference.state;
    let v = u0.velocity();
    let st = u0.temperature().sqrt();
    let scale: Vec<f64> = grid
        .weights
        .iter()
        .zip(&reference.values)
        .map(|(w, m)| (w * m).sqrt())
        .collect();
    let mut columns: Vec<DVector<f64>> = (0..frame.phi.ncols())
        .map(|j| frame.phi.column(j).clone_owned())
        .collect();
    let mut marks = Vec::new();
    for d in 0..=max_degree {
        for a in (0..=d).rev() {
            for b in (0..=d - a).rev() {
                let c = d - a - b;
                columns.push(DVector::from_iterator(
                    grid.len(),
                    grid.nodes.iter().zip(&scale).map(|(x, s)| {
                        let y = [(x[0] - v[0]) / st, (x[1] - v[1]) / st, (x[2] - v[2]) / st];
                        s * y[0].powi(a as i32) * y[1].powi(b as i32) * y[2].powi(c as i32)
                    }),
                ));
            }
        }
        if d >= 2 {
            marks.push((d, columns.len()));
        }
    }
    ladder_from_columns(frame, &columns, &marks)
}

/// Gram-Schmidt the raw columns in order; `marks` gives
/// `(degree, number of raw columns)` at which a rank ends.
pub fn ladder_from_columns(
    frame: &NodalFrame,
    columns: &[DVector<f64>],
    marks: &[(usize, usize)],
) -> Result<GalerkinLadder> {
    let mut q: Vec<DVector<f64>> = Vec::new();
    let mut ranks = Vec::new();
    let mut degrees = Vec::new();
    let mut next = 0;
    for &(deg, end) in marks {
        while next < end {
            let mut c = columns[next].clone();
            let n0 = c.norm();
            for _ in 0..2 {
                for e in &q {
                    let p = e.dot(&c);
                    c.axpy(-p, e, 1.0);
                }
            }
            let n1 = c.norm();
            if n1 > 1e-8 * n0 {
                q.push(c / n1);
            }
            next += 1;
        }
        ranks.push(q.len());
        degrees.push(deg);
    }
    let basis = DMatrix::from_columns(&q);
    let ladder = GalerkinLadder {
        degrees,
        ranks,
        a: basis.transpose() * &frame.a * &basis,
        l: {
            let l = basis.transpose() * &frame.l * &basis;
            (&l + l.transpose()) * 0.5
        },
        metric: basis.transpose() * &frame.metric * &basis,
        basis,
    };
    let first = ladder.ranks[0];
    let pu = ladder.projector(first);
    let miss = (&pu * &frame.phi - &frame.phi).norm();
    if miss > 1e-10 {
        return Err(Error::InvalidState(format!(
            "ladder does not contain the macroscopic space (defect {miss:.3e})"
        )));
    }
    Ok(ladder)
}

impl GalerkinLadder {
    pub fn projector(&self, rank: usize) -> DMatrix<f64> {
        let b = self.basis.columns(0, rank);
        b * b.transpose()
    }

    /// `(A_r, L_r, metric_r)` for the leading `rank` basis functions.
    pub fn operators(&self, rank: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let cut = |m: &DMatrix<f64>| m.view((0, 0), (rank, rank)).into_owned();
        (cut(&self.a), cut(&self.l), cut(&self.metric))
    }

    /// Largest `‖Π_r Π_{r+1} − Π_r‖` over consecutive ranks.
    pub fn nesting_defect(&self) -> f64 {
        self.ranks
            .windows(2)
            .map(|w| {
                let p = self.projector(w[0]);
                (&p * self.projector(w[1]) - &p).norm()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RankConstants {
    pub degree: usize,
    pub rank: usize,
    /// `−max eig` of `L_r` on `𝕍_r`.
    pub negativity: f64,
    pub gamma: f64,
    pub theta: f64,
    /// Smallest eigenvalue of the macroscopic block of `Re(K A)` at unit compensator scale.
    pub macro_block: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniformityReport {
    pub per_rank: Vec<RankConstants>,
    /// Smallest rank from which every `γ_r` is positive.
    pub r_star: Option<usize>,
    pub negativity_uniform: bool,
    pub gamma_uniform: bool,
    /// `(max − min)/max` of the macroscopic block constant from `r_star` on.
    pub macro_block_spread: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Top three ranks all at least half the median.
fn uniform(v: &[f64]) -> bool {
    let m = median(v);
    m > 0.0 && v.iter().rev().take(3).all(|x| *x >= 0.5 * m)
}

pub fn check_uniformity(ladder: &GalerkinLadder) -> Result<UniformityReport> {
    if ladder.ranks.len() < 3 {
        return Err(Error::Config(
            "uniformity needs at least three ranks".into(),
        ));
    }
    let mut per_rank = Vec::new();
    for (&rank, &degree) in ladder.ranks.iter().zip(&ladder.degrees) {
        let (a, l, metric) = ladder.operators(rank);
        let l22 = l
            .view((MACRO_DIM, MACRO_DIM), (rank - MACRO_DIM, rank - MACRO_DIM))
            .into_owned();
        let top = sym_eigenvalues(&l22)?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        let phi = DMatrix::from_fn(rank, MACRO_DIM, |i, j| if i == j { 1.0 } else { 0.0 });
        let comp = build_compensator(&a, &l, &phi, &metric)?;
        let ka = (&comp.k * &a) / comp.theta;
        let kau = ka.view((0, 0), (MACRO_DIM, MACRO_DIM)).into_owned();
        let macro_block = sym_eigenvalues(&kau)?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        per_rank.push(RankConstants {
            degree,
            rank,
            negativity: -top,
            gamma: comp.gamma,
            theta: comp.theta,
            macro_block,
        });
    }
    let gammas: Vec<f64> = per_rank.iter().map(|r| r.gamma).collect();
    let negs: Vec<f64> = per_rank.iter().map(|r| r.negativity).collect();
    let first = (0..per_rank.len()).find(|&i| gammas[i..].iter().all(|g| *g > 0.0));
    let r_star = first.map(|i| per_rank[i].rank);
    let blocks: Vec<f64> = per_rank[first.unwrap_or(0)..]
        .iter()
        .map(|r| r.macro_block)
        .collect();
    let bmax = blocks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bmin = blocks.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(UniformityReport {
        per_rank,
        r_star,
        negativity_uniform: uniform(&negs),
        gamma_uniform: uniform(&gammas),
        macro_block_spread: (bmax - bmin) / bmax.abs().max(f64::MIN_POSITIVE),
    })
}

/// `(a, b)` pairs with `a + 2b ≤ degree`, ordered by `a + 2b`.
pub fn axisymmetric_pairs(degree: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for d in 0..=degree {
        for b in 0..=d / 2 {
            out.push((d - 2 * b, b));
        }
    }
    out
}

/// Values of `ĥ_a(x₁)·L_b(|x⊥|²/2)` for every pair.
fn eval_pairs(
    pairs: &[(usize, usize)],
    amax: usize,
    bmax: usize,
    x: &[f64; 3],
    h: &mut [f64],
    l: &mut [f64],
    out: &mut [f64],
) {
    h[0] = 1.0;
    if amax >= 1 {
        h[1] = x[0];
    }
    for a in 1..amax {
        h[a + 1] = (x[0] * h[a] - (a as f64).sqrt() * h[a - 1]) / ((a + 1) as f64).sqrt();
    }
    let t = 0.5 * (x[1] * x[1] + x[2] * x[2]);
    l[0] = 1.0;
    if bmax >= 1 {
        l[1] = 1.0 - t;
    }
    for b in 1..bmax {
        l[b + 1] = ((2 * b + 1) as f64 - t) * l[b] / (b + 1) as f64
            - (b as f64) * l[b - 1] / (b + 1) as f64;
    }
    for (o, (a, b)) in out.iter_mut().zip(pairs) {
        *o = h[*a] * l[*b];
    }
}

/// Hard-sphere collision tensor on the axisymmetric basis at `ρ̲ = T̲ = 1`:
/// `T_i(j, k) = ⟨ψ_i, Q(ψ_j, ψ_k)⟩` in `ℍ^{1/2}`.
#[derive(Debug, Clone)]
pub struct CollisionTensor {
    pub degree: usize,
    pub pairs: Vec<(usize, usize)>,
    pub t: Vec<DMatrix<f64>>,
}

impl CollisionTensor {
    /// Exact (to rounding) quadrature in centre-of-mass velocity, relative
    /// speed and direction.
    pub fn compute(degree: usize, exec: Execution) -> Self {
        let pairs = axisymmetric_pairs(degree);
        let n = pairs.len();
        let nc = (3 * degree + 2) / 2 + 1;
        let nt = (3 * degree / 2 + 2) / 2;
        let order = (3 * degree + 2) / 2;
        let gh = GaussHermite::new(NonZeroUsize::new(nc).expect("nc > 0"));
        let c1: Vec<(f64, f64)> = gh.iter().map(|(x, w)| (*x, *w)).collect();
        let lag = GaussLaguerre::new(
            NonZeroUsize::new(nt.max(1)).expect("nt > 0"),
            1.0.try_into().expect("alpha > -1"),
        );
        let tr: Vec<(f64, f64)> = lag.iter().map(|(x, w)| (*x, *w)).collect();
        let (dirs, dw) = angular_rule(order.max(2));
        let nd = dirs.len();
        let four_pi = 4.0 * std::f64::consts::PI;
        let two_pi = 2.0 * std::f64::consts::PI;
        let pref = 4.0 * (2.0 * std::f64::consts::PI).powi(-3);
        let amax = degree;
        let bmax = degree / 2;
        let n_c = nc * nc * nc;
        let mut t = fold_indices(
            exec,
            n_c,
            4,
            || vec![DMatrix::<f64>::zeros(n, n); n],
            |acc, ci| {
                let (i0, i1, i2) = (ci / (nc * nc), (ci / nc) % nc, ci % nc);
                let c = [c1[i0].0, c1[i1].0, c1[i2].0];
                let wc = c1[i0].1 * c1[i1].1 * c1[i2].1;
                let mut h = vec![0.0; amax + 1];
                let mut l = vec![0.0; bmax + 1];
                let mut row = vec![0.0; n];
                let mut x = DMatrix::<f64>::zeros(nd, n);
                let mut y = DMatrix::<f64>::zeros(nd, n);
                let mut z = DMatrix::<f64>::zeros(nd, n);
                for &(tv, tw) in &tr {
                    let st = tv.sqrt();
                    for (d, dir) in dirs.iter().enumerate() {
                        let xm = [c[0] - st * dir[0], c[1] - st * dir[1], c[2] - st * dir[2]];
                        eval_pairs(&pairs, amax, bmax, &xm, &mut h, &mut l, &mut row);
                        for j in 0..n {
                            x[(d, j)] = row[j];
                        }
                        let xp = [c[0] + st * dir[0], c[1] + st * dir[1], c[2] + st * dir[2]];
                        eval_pairs(&pairs, amax, bmax, &xp, &mut h, &mut l, &mut row);
                        for j in 0..n {
                            y[(d, j)] = row[j];
                        }
                    }
                    // sphere mean of each test polynomial around the centre of mass
                    let mean: Vec<f64> = (0..n)
                        .map(|i| (0..nd).map(|d| dw[d] * y[(d, i)]).sum::<f64>() / four_pi)
                        .collect();
                    let w = pref * wc * tw;
                    for (i, acc_i) in acc.iter_mut().enumerate() {
                        for d in 0..nd {
                            let g = two_pi * (2.0 * mean[i] - x[(d, i)] - y[(d, i)]) * dw[d] * w;
                            for k in 0..n {
                                z[(d, k)] = y[(d, k)] * g;
                            }
                        }
                        acc_i.gemm_tr(1.0, &x, &z, 1.0);
                    }
                }
            },
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
        for m in t.iter_mut() {
            *m = (&*m + m.transpose()) * 0.5;
        }
        Self { degree, pairs, t }
    }

    /// The sub-tensor on pairs with `a + 2b ≤ degree`.
    pub fn restrict(&self, degree: usize) -> Self {
        let keep: Vec<usize> = (0..self.pairs.len())
            .filter(|i| self.pairs[*i].0 + 2 * self.pairs[*i].1 <= degree)
            .collect();
        let n = keep.len();
        Self {
            degree,
            pairs: keep.iter().map(|i| self.pairs[*i]).collect(),
            t: keep
                .iter()
                .map(|i| DMatrix::from_fn(n, n, |j, k| self.t[*i][(keep[j], keep[k])]))
                .collect(),
        }
    }
}

/// Index of `(a, b)` in an ordered pair list.
fn pair_index(pairs: &[(usize, usize)], p: (usize, usize)) -> usize {
    pairs
        .iter()
        .position(|q| *q == p)
        .expect("pair present at degree ≥ 2")
}

/// The axisymmetric Galerkin relaxation system around a drifting reference.
#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    pub degree: usize,
    pub reference: FluidState,
    pub pairs: Vec<(usize, usize)>,
    /// Columns are system basis vectors in pair coordinates.
    pub rotation: DMatrix<f64>,
    pub system: RelaxationSystem,
}

/// Reference with density `rho`, internal energy `e` and the drift that
/// makes the slowest acoustic speed vanish.
pub fn sonic_reference(rho: f64, e: f64) -> Result<FluidState> {
    let j = macro_transport();
    let lmin = sym_eigenvalues(&j)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let t = 2.0 * e / 3.0;
    FluidState::from_primitive(rho, [-lmin * t.sqrt(), 0.0, 0.0], e)
}

/// `x₁` on the three axisymmetric collision invariants.
fn macro_transport() -> DMatrix<f64> {
    let c = 2.0 / 6f64.sqrt();
    DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, c, 0.0, c, 0.0])
}

pub fn galerkin_system(
    tensor: &CollisionTensor,
    reference: &FluidState,
    degree: usize,
) -> Result<GalerkinSystem> {
    reference.check()?;
    let v = reference.velocity();
    if v[1].abs() > 1e-14 || v[2].abs() > 1e-14 {
        return Err(Error::Config(
            "axisymmetric system needs a reference drift along the first axis".into(),
        ));
    }
    if degree < 3 || degree > tensor.degree {
        return Err(Error::Config(format!(
            "Galerkin degree {degree} outside 3..={}",
            tensor.degree
        )));
    }
    let tensor = tensor.restrict(degree);
    let pairs = tensor.pairs.clone();
    let n = pairs.len();
    let (i00, i10, i20, i01) = (
        pair_index(&pairs, (0, 0)),
        pair_index(&pairs, (1, 0)),
        pair_index(&pairs, (2, 0)),
        pair_index(&pairs, (0, 1)),
    );
    let s6 = 6f64.sqrt();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    let unit = |i: usize| DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
    cols.push(unit(i00));
    cols.push(unit(i10));
    let mut energy = DVector::zeros(n);
    energy[i20] = 2f64.sqrt() / s6;
    energy[i01] = -2.0 / s6;
    cols.push(energy);
    let mut partner = DVector::zeros(n);
    partner[i20] = 2.0 / s6;
    partner[i01] = 2f64.sqrt() / s6;
    cols.push(partner);
    for i in 0..n {
        if ![i00, i10, i20, i01].contains(&i) {
            cols.push(unit(i));
        }
    }
    let rot = DMatrix::from_columns(&cols);

    let rho = reference.rho;
    let temp = reference.temperature();
    let st = temp.sqrt();
    let mut jp = DMatrix::zeros(n, n);
    for (p, &(a, b)) in pairs.iter().enumerate() {
        if let Some(q) = pairs.iter().position(|x| *x == (a + 1, b)) {
            let c = ((a + 1) as f64).sqrt();
            jp[(q, p)] = c;
            jp[(p, q)] = c;
        }
    }
    let a = DMatrix::identity(n, n) * v[0] + (rot.transpose() * jp * &rot) * st;
    let a = (&a + a.transpose()) * 0.5;

    let scale = (rho * temp).sqrt();
    let rotated: Vec<DMatrix<f64>> = (0..n)
        .map(|i| {
            let mut m = DMatrix::zeros(n, n);
            for (p, tp) in tensor.t.iter().enumerate() {
                let c = rot[(p, i)];
                if c != 0.0 {
                    m += tp * c;
                }
            }
            rot.transpose() * m * &rot * scale
        })
        .collect();
    let mut bilinear = rotated;
    for m in bilinear.iter_mut().take(3) {
        m.fill(0.0);
    }
    let collision = QuadraticMap {
        linear: DMatrix::zeros(n, n),
        bilinear,
    };
    let mut reference_vec = DVector::zeros(n);
    reference_vec[0] = rho.sqrt();
    let base = DVector::from_vec(vec![rho.sqrt(), 0.0, 0.0]);
    let system = RelaxationSystem::new(
        format!("boltzmann-galerkin-d{degree}"),
        a,
        collision,
        3,
        reference_vec,
        base,
    )?;
    Ok(GalerkinSystem {
        degree,
        reference: *reference,
        pairs,
        rotation: rot,
        system,
    })
}

impl GalerkinSystem {
    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    /// Density, momentum and total energy carried by macroscopic coefficients.
    pub fn fluid_state(&self, u: &DVector<f64>) -> FluidState {
        let sr = self.reference.rho.sqrt();
        let v1 = self.reference.velocity()[0];
        let t = self.reference.temperature();
        let st = t.sqrt();
        let rho = sr * u[0];
        let m1 = sr * (v1 * u[0] + st * u[1]);
        let e = 0.5
            * sr
            * (v1 * v1 * u[0] + 2.0 * v1 * st * u[1] + t * (3.0 * u[0] + 6f64.sqrt() * u[2]));
        FluidState {
            rho,
            momentum: [m1, 0.0, 0.0],
            total_energy: e,
        }
    }

    /// Inverse of [`fluid_state`](Self::fluid_state) on the macroscopic coordinates.
    pub fn macro_coordinates(&self, state: &FluidState) -> DVector<f64> {
        let sr = self.reference.rho.sqrt();
        let v1 = self.reference.velocity()[0];
        let t = self.reference.temperature();
        let st = t.sqrt();
        let u0 = state.rho / sr;
        let u1 = (state.momentum[0] / sr - v1 * u0) / st;
        let u2 = (2.0 * state.total_energy / sr - v1 * v1 * u0 - 2.0 * v1 * st * u1 - 3.0 * t * u0)
            / (t * 6f64.sqrt());
        DVector::from_vec(vec![u0, u1, u2])
    }

    /// Distribution value at velocity `xi` for system coefficients `c`.
    pub fn distribution(&self, c: &DVector<f64>, xi: [f64; 3]) -> f64 {
        let r = &self.reference;
        let (v0, t0) = (r.velocity()[0], r.temperature());
        let x = [
            (xi[0] - v0) / t0.sqrt(),
            xi[1] / t0.sqrt(),
            xi[2] / t0.sqrt(),
        ];
        let (amax, bmax) = (self.degree, self.degree / 2);
        let n = self.dim();
        let (mut h, mut l, mut row) = (vec![0.0; amax + 1], vec![0.0; bmax + 1], vec![0.0; n]);
        eval_pairs(&self.pairs, amax, bmax, &x, &mut h, &mut l, &mut row);
        let pc = &self.rotation * c;
        let poly: f64 = row.iter().zip(pc.iter()).map(|(a, b)| a * b).sum();
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        r.rho.sqrt() * (2.0 * std::f64::consts::PI * t0).powf(-1.5) * (-0.5 * r2).exp() * poly
    }

    /// Gaussian decay exponent `a` in `|f| ≲ e^{−a|ξ−v̲|²}`, fitted over
    /// `2 ≤ |ξ−v̲|/√T̲ ≤ 5` from the largest value over directions.
    pub fn localization_exponent(&self, c: &DVector<f64>) -> f64 {
        let r = &self.reference;
        let (v0, t0) = (r.velocity()[0], r.temperature());
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for j in 0..=30 {
            let rho = 2.0 + 3.0 * j as f64 / 30.0;
            let mut best = 0.0f64;
            for a in 0..=24 {
                let phi = std::f64::consts::PI * a as f64 / 24.0;
                let xi = [
                    v0 + t0.sqrt() * rho * phi.cos(),
                    t0.sqrt() * rho * phi.sin(),
                    0.0,
                ];
                best = best.max(self.distribution(c, xi).abs());
            }
            if best > 0.0 {
                xs.push(t0 * rho * rho);
                ys.push(best.ln());
            }
        }
        if xs.len() < 3 {
            return f64::NAN;
        }
        -crate::linalg::linear_fit(&xs, &ys).1
    }

    /// Coefficients of a drifting Maxwellian, by Gauss-Hermite quadrature.
    pub fn project_maxwellian(&self, state: &FluidState, points: usize) -> DVector<f64> {
        let gh = GaussHermite::new(NonZeroUsize::new(points).expect("points > 0"));
        let nodes: Vec<(f64, f64)> = gh.iter().map(|(x, w)| (*x, *w)).collect();
        let r = &self.reference;
        let (v0, t0) = (r.velocity()[0], r.temperature());
        let (v, t) = (state.velocity()[0], state.temperature());
        let n = self.dim();
        let (amax, bmax) = (self.degree, self.degree / 2);
        let (mut h, mut l, mut row) = (vec![0.0; amax + 1], vec![0.0; bmax + 1], vec![0.0; n]);
        let mut c = DVector::zeros(n);
        // ξ = v + √(2T) z so that M_u dξ = ρ π^{-3/2} e^{-|z|²} dz
        for &(z0, w0) in &nodes {
            for &(z1, w1) in &nodes {
                for &(z2, w2) in &nodes {
                    let xi = [
                        v + (2.0 * t).sqrt() * z0,
                        (2.0 * t).sqrt() * z1,
                        (2.0 * t).sqrt() * z2,
                    ];
                    let x = [
                        (xi[0] - v0) / t0.sqrt(),
                        xi[1] / t0.sqrt(),
                        xi[2] / t0.sqrt(),
                    ];
                    eval_pairs(&self.pairs, amax, bmax, &x, &mut h, &mut l, &mut row);
                    let w =
                        w0 * w1 * w2 * state.rho * std::f64::consts::PI.powf(-1.5) / r.rho.sqrt();
                    for k in 0..n {
                        c[k] += w * row[k];
                    }
                }
            }
        }
        self.rotation.transpose() * c
    }
}

/// `‖BᵀB − I‖` for the ladder basis.
pub fn basis_defect(ladder: &GalerkinLadder) -> f64 {
    let b = &ladder.basis;
    (b.transpose() * b - DMatrix::identity(b.ncols(), b.ncols())).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relaxation::validate;
    use crate::tolerances::EQUILIBRIUM_TOL_KINETIC;
    use std::sync::OnceLock;

    fn tensor() -> &'static CollisionTensor {
        static T: OnceLock<CollisionTensor> = OnceLock::new();
        T.get_or_init(|| CollisionTensor::compute(5, Execution::default()))
    }

    #[test]
    fn pair_counts() {
        assert_eq!(axisymmetric_pairs(4).len(), 9);
        assert_eq!(axisymmetric_pairs(5).len(), 12);
        assert_eq!(axisymmetric_pairs(6).len(), 16);
    }

    #[test]
    fn tensor_conserves_and_has_macro_kernel() {
        let t = tensor();
        let n = t.pairs.len();
        let scale = t.t.iter().map(|m| m.norm()).fold(0.0, f64::max);
        // collision invariants 1, x₁ and |x|² − 3 = √2 ĥ₂ − 2 L₁
        let i20 = pair_index(&t.pairs, (2, 0));
        let i01 = pair_index(&t.pairs, (0, 1));
        let energy = &t.t[i20] * 2f64.sqrt() - &t.t[i01] * 2.0;
        assert!(t.t[0].norm() < 1e-12 * scale);
        assert!(t.t[1].norm() < 1e-12 * scale);
        assert!(energy.norm() < 1e-12 * scale);
        // L = 2T(ψ₀, ·) annihilates the invariants
        let l = DMatrix::from_fn(n, n, |i, j| 2.0 * t.t[i][(0, j)]);
        assert!(l.column(0).norm() < 1e-12 * scale);
        assert!(l.column(1).norm() < 1e-12 * scale);
        let e = DVector::from_fn(n, |k, _| {
            if k == i20 {
                2f64.sqrt()
            } else if k == i01 {
                -2.0
            } else {
                0.0
            }
        });
        assert!((&l * e).norm() < 1e-12 * scale);
        assert!((&l - l.transpose()).norm() < 1e-12 * scale);
    }

    #[test]
    fn galerkin_system_is_valid_relaxation_system() {
        let r = sonic_reference(1.0, 0.75).unwrap();
        let g = galerkin_system(tensor(), &r, 5).unwrap();
        let rep = validate(&g.system, EQUILIBRIUM_TOL_KINETIC).unwrap();
        assert!(
            rep.all_passed(),
            "{}",
            serde_json::to_string_pretty(&rep).unwrap()
        );
        let a11 = g.system.a11();
        let ev = sym_eigenvalues(&a11).unwrap();
        assert!(ev.iter().any(|x| x.abs() < 1e-12));
    }

    #[test]
    fn fluid_coordinates_round_trip() {
        let r = sonic_reference(1.0, 0.75).unwrap();
        let g = galerkin_system(tensor(), &r, 4).unwrap();
        let s = FluidState::from_primitive(1.1, [0.8, 0.0, 0.0], 0.7).unwrap();
        let u = g.macro_coordinates(&s);
        let back = g.fluid_state(&u);
        assert!((back.rho - s.rho).abs() < 1e-14);
        assert!((back.momentum[0] - s.momentum[0]).abs() < 1e-14);
        assert!((back.total_energy - s.total_energy).abs() < 1e-14);
        let c = g.project_maxwellian(&s, 20);
        assert!((c.rows(0, 3) - u).norm() < 1e-12);
    }

    fn nodal_frame() -> &'static (NodalFrame, QuadratureGrid, ReferenceMaxwellian) {
        static F: OnceLock<(NodalFrame, QuadratureGrid, ReferenceMaxwellian)> = OnceLock::new();
        F.get_or_init(|| {
            let g = crate::velocity_space::build_grid(8, 5.0, 3).unwrap();
            let u0 = FluidState::from_primitive(1.0, [0.0; 3], 0.75).unwrap();
            let r = ReferenceMaxwellian::new(u0, &g).unwrap();
            let basis = crate::macro_micro::build_basis(&r, &g).unwrap();
            let op = crate::collision::CollisionOperator::new(g.clone(), r.clone());
            let lin = op.linearize(&r.values);
            (NodalFrame::new(&lin, &basis, &g, &r), g, r)
        })
    }

    #[test]
    fn ladder_is_nested_and_symmetric() {
        let (frame, g, r) = nodal_frame();
        let ladder = build_ladder(frame, g, r, 5).unwrap();
        assert_eq!(ladder.ranks, vec![10, 20, 35, 56]);
        assert!(basis_defect(&ladder) < 1e-10);
        assert!(ladder.nesting_defect() < 1e-12);
        for &rank in &ladder.ranks {
            let p = ladder.projector(rank);
            assert!((&p * &p - &p).norm() < 1e-12 && (&p - p.transpose()).norm() < 1e-12);
            let (a, _, _) = ladder.operators(rank);
            assert!((&a - a.transpose()).norm() < 1e-12);
        }
        let pu = ladder.projector(10);
        assert!((&pu * &frame.phi - &frame.phi).norm() < 1e-12);
        let rep = check_uniformity(&ladder).unwrap();
        // heat-flux coupling first appears at degree 3
        assert_eq!(rep.r_star, Some(20), "{rep:?}");
        assert!(rep.per_rank.iter().all(|c| c.negativity > 0.0));
        assert!(rep.gamma_uniform && rep.negativity_uniform);
        assert!(rep.macro_block_spread < 0.2, "{rep:?}");
    }

    #[test]
    fn ladder_missing_macro_direction_is_rejected() {
        let (frame, _, _) = nodal_frame();
        let cols: Vec<DVector<f64>> = (0..4).map(|j| frame.phi.column(j).clone_owned()).collect();
        assert!(matches!(
            ladder_from_columns(frame, &cols, &[(2, 4)]),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn exact_linearization_matches_projected_nodal_operator() {
        let (frame, g, r) = nodal_frame();
        let t = tensor().restrict(3);
        let n = t.pairs.len();
        let st = r.state.temperature().sqrt();
        let (mut h, mut l, mut row) = (vec![0.0; 4], vec![0.0; 2], vec![0.0; n]);
        let mut cols = DMatrix::zeros(g.len(), n);
        for (b, x) in g.nodes.iter().enumerate() {
            let y = [x[0] / st, x[1] / st, x[2] / st];
            eval_pairs(&t.pairs, 3, 1, &y, &mut h, &mut l, &mut row);
            let s = (g.weights[b] * r.values[b]).sqrt() / r.state.rho.sqrt();
            for j in 0..n {
                cols[(b, j)] = s * row[j];
            }
        }
        let nodal = cols.transpose() * &frame.l * &cols;
        let scale = (r.state.rho * r.state.temperature()).sqrt();
        let exact = DMatrix::from_fn(n, n, |i, j| {
            2.0 * scale * r.state.rho.sqrt() * t.t[i][(0, j)]
        });
        let rel = (&nodal - &exact).norm() / exact.norm();
        assert!(
            rel < 2e-2,
            "relative difference {rel:.3e}\n{nodal:.4}\n{exact:.4}"
        );
    }

    #[test]
    fn restriction_matches_direct_computation() {
        let direct = CollisionTensor::compute(3, Execution::Sequential);
        let sliced = tensor().restrict(3);
        assert_eq!(direct.pairs, sliced.pairs);
        for (a, b) in direct.t.iter().zip(&sliced.t) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
