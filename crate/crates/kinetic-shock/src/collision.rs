//! Hard-sphere collision operator on the velocity grid and its linearization.
//!
//! The operator is discretized in weak form. Writing `f = M̲h`, the nodal
//! collision term is defined through
//!
//! ```text
//! Σ_e w_e φ_e Q(f,f)_e = −Σ_{b<c} Σ_{Ω∈S²₊} w_b w_c w_Ω B M̲_b M̲_c (h'h'_* − h_b h_c)(φ' + φ'_* − φ_b − φ_c)
//! ```
//!
//! where primed values come from triquadratic interpolation on the tensor
//! grid. Quadratic polynomials interpolate exactly, so mass, momentum and
//! energy are conserved to rounding, and `M̲M̲'_*` is replaced by `M̲_bM̲_c` so
//! the linearization at `M̲` is exactly symmetric in `ℍ^{1/2}`. Collisions
//! whose outgoing velocities leave the grid hull are dropped as a whole.

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::{fold_indices, map_indices, Execution};
use crate::velocity_space::{maxwellian_at, QuadratureGrid, ReferenceMaxwellian};

/// Pre- and post-collision velocities for one impact direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionGeometry {
    pub xi: [f64; 3],
    pub xi_star: [f64; 3],
    pub omega: [f64; 3],
    pub xi_prime: [f64; 3],
    pub xi_star_prime: [f64; 3],
}

impl CollisionGeometry {
    pub fn new(xi: [f64; 3], xi_star: [f64; 3], omega: [f64; 3]) -> Self {
        let p = dot(&omega, &sub(&xi_star, &xi));
        let mut xi_prime = xi;
        let mut xi_star_prime = xi_star;
        for d in 0..3 {
            xi_prime[d] += p * omega[d];
            xi_star_prime[d] -= p * omega[d];
        }
        CollisionGeometry {
            xi,
            xi_star,
            omega,
            xi_prime,
            xi_star_prime,
        }
    }

    /// Largest violation of momentum and energy conservation.
    pub fn conservation_defect(&self) -> f64 {
        let mut m: f64 = 0.0;
        for d in 0..3 {
            m = m.max(
                (self.xi[d] + self.xi_star[d] - self.xi_prime[d] - self.xi_star_prime[d]).abs(),
            );
        }
        let e = dot(&self.xi, &self.xi) + dot(&self.xi_star, &self.xi_star)
            - dot(&self.xi_prime, &self.xi_prime)
            - dot(&self.xi_star_prime, &self.xi_star_prime);
        let scale = 1.0 + dot(&self.xi, &self.xi) + dot(&self.xi_star, &self.xi_star);
        m.max(e.abs() / scale)
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Collision cross section `B(Ω, ξ_* − ξ)`.
pub trait CollisionKernel: Send + Sync {
    fn id(&self) -> &'static str;
    fn cross_section(&self, omega: &[f64; 3], relative: &[f64; 3]) -> f64;
    /// `∫_{S²} B dΩ` as a function of `|ξ_* − ξ|`.
    fn total_cross_section(&self, relative_speed: f64) -> f64;
}

/// Hard spheres: `B = |Ω·(ξ_* − ξ)|`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HardSphere;

impl CollisionKernel for HardSphere {
    fn id(&self) -> &'static str {
        "hard_sphere"
    }

    fn cross_section(&self, omega: &[f64; 3], relative: &[f64; 3]) -> f64 {
        dot(omega, relative).abs()
    }

    fn total_cross_section(&self, relative_speed: f64) -> f64 {
        2.0 * PI * relative_speed
    }
}

/// Triquadratic interpolation stencil at an off-grid velocity.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub idx: [usize; 27],
    pub w: [f64; 27],
}

fn axis_stencil(nodes: &[f64], p: f64) -> Option<(usize, [f64; 3])> {
    let n = nodes.len();
    if p < nodes[0] || p > nodes[n - 1] {
        return None;
    }
    let i = nodes
        .partition_point(|x| *x <= p)
        .saturating_sub(1)
        .min(n - 2);
    let start = if i == 0 {
        0
    } else if i == n - 2 {
        n - 3
    } else if p - nodes[i] < nodes[i + 1] - p {
        i - 1
    } else {
        i
    };
    let x = [nodes[start], nodes[start + 1], nodes[start + 2]];
    let l = [
        (p - x[1]) * (p - x[2]) / ((x[0] - x[1]) * (x[0] - x[2])),
        (p - x[0]) * (p - x[2]) / ((x[1] - x[0]) * (x[1] - x[2])),
        (p - x[0]) * (p - x[1]) / ((x[2] - x[0]) * (x[2] - x[1])),
    ];
    Some((start, l))
}

/// Interpolation stencil at `p`, or `None` outside the grid hull.
pub fn stencil(grid: &QuadratureGrid, p: &[f64; 3]) -> Option<Stencil> {
    let (i0, li) = axis_stencil(&grid.axis_nodes, p[0])?;
    let (j0, lj) = axis_stencil(&grid.axis_nodes, p[1])?;
    let (k0, lk) = axis_stencil(&grid.axis_nodes, p[2])?;
    let n = grid.n_per_axis;
    let mut s = Stencil {
        idx: [0; 27],
        w: [0.0; 27],
    };
    let mut t = 0;
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                s.idx[t] = ((i0 + a) * n + (j0 + b)) * n + (k0 + c);
                s.w[t] = li[a] * lj[b] * lk[c];
                t += 1;
            }
        }
    }
    Some(s)
}

impl Stencil {
    fn eval(&self, h: &[f64]) -> f64 {
        let mut s = 0.0;
        for t in 0..27 {
            s += self.w[t] * h[self.idx[t]];
        }
        s
    }
}

/// Nodal collision operator bound to a grid and a reference Maxwellian.
pub struct CollisionOperator {
    pub grid: QuadratureGrid,
    pub reference: ReferenceMaxwellian,
    kernel: Box<dyn CollisionKernel>,
    hemisphere: Vec<([f64; 3], f64)>,
    pub execution: Execution,
}

impl std::fmt::Debug for CollisionOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CollisionOperator")
            .field("grid", &self.grid.key())
            .field("kernel", &self.kernel.id())
            .finish()
    }
}

/// Linearized collision operator `L_a = −ν_a + K_c` in nodal form.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub matrix: DMatrix<f64>,
    pub multiplicative_part: Vec<f64>,
    pub compact_part: DMatrix<f64>,
    pub base_state: Vec<f64>,
}

impl CollisionOperator {
    pub fn new(grid: QuadratureGrid, reference: ReferenceMaxwellian) -> Self {
        Self::with_kernel(grid, reference, Box::new(HardSphere))
    }

    pub fn with_kernel(
        grid: QuadratureGrid,
        reference: ReferenceMaxwellian,
        kernel: Box<dyn CollisionKernel>,
    ) -> Self {
        // Ω and −Ω give the same collision; keep azimuths in [0, π).
        let n_phi = 2 * grid.angular_order;
        let hemisphere = grid
            .angular_nodes
            .iter()
            .zip(&grid.angular_weights)
            .enumerate()
            .filter(|(i, _)| i % n_phi < n_phi / 2)
            .map(|(_, (o, w))| (*o, *w))
            .collect();
        CollisionOperator {
            grid,
            reference,
            kernel,
            hemisphere,
            execution: Execution::default(),
        }
    }

    pub fn kernel_id(&self) -> &'static str {
        self.kernel.id()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Visit every retained collision with first partner `b`.
    ///
    /// The callback receives `(c, P, s', s'_*)` with `P = w_b w_c w_Ω B M̲_b M̲_c`.
    fn for_each_collision<F: FnMut(usize, f64, &Stencil, &Stencil)>(&self, b: usize, mut visit: F) {
        let g = &self.grid;
        let xb = g.nodes[b];
        let wb = g.weights[b] * self.reference.values[b];
        for c in (b + 1)..g.len() {
            let xc = g.nodes[c];
            let rel = sub(&xc, &xb);
            let wbc = wb * g.weights[c] * self.reference.values[c];
            for (omega, wo) in &self.hemisphere {
                let bx = self.kernel.cross_section(omega, &rel);
                if bx == 0.0 {
                    continue;
                }
                let geo = CollisionGeometry::new(xb, xc, *omega);
                let (Some(s1), Some(s2)) =
                    (stencil(g, &geo.xi_prime), stencil(g, &geo.xi_star_prime))
                else {
                    continue;
                };
                visit(c, wbc * wo * bx, &s1, &s2);
            }
        }
    }

    fn chunk(&self) -> usize {
        self.len().div_ceil(8).max(1)
    }

    /// Symmetric bilinear collision operator `Q(f, g)`.
    pub fn q(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let n = self.len();
        let m = &self.reference.values;
        let hf: Vec<f64> = f.iter().zip(m).map(|(a, b)| a / b).collect();
        let hg: Vec<f64> = g.iter().zip(m).map(|(a, b)| a / b).collect();
        let mut out = fold_indices(
            self.execution,
            n,
            self.chunk(),
            || vec![0.0; n],
            |acc, b| {
                self.for_each_collision(b, |c, p, s1, s2| {
                    let (f1, f2, g1, g2) = (s1.eval(&hf), s2.eval(&hf), s1.eval(&hg), s2.eval(&hg));
                    let d = p * 0.5 * ((f1 * g2 + g1 * f2) - (hf[b] * hg[c] + hg[b] * hf[c]));
                    acc[b] += d;
                    acc[c] += d;
                    for t in 0..27 {
                        acc[s1.idx[t]] -= d * s1.w[t];
                        acc[s2.idx[t]] -= d * s2.w[t];
                    }
                });
            },
            add_vectors,
        );
        for (o, w) in out.iter_mut().zip(&self.grid.weights) {
            *o /= w;
        }
        out
    }

    /// Collision frequency `ν_h(ξ) = ∫|ξ−η|... ` with the angular integral done analytically.
    pub fn nu(&self, h: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let wh: Vec<f64> = g.weights.iter().zip(h).map(|(w, v)| w * v).collect();
        map_indices(self.execution, g.len(), |b| {
            let xb = g.nodes[b];
            let mut s = 0.0;
            for (xc, whc) in g.nodes.iter().zip(&wh) {
                let r = sub(xc, &xb);
                s += self.kernel.total_cross_section(dot(&r, &r).sqrt()) * whc;
            }
            s
        })
    }

    /// Loss part, symmetrized: `½(g ν_h + h ν_g)`.
    pub fn q_loss(&self, g: &[f64], h: &[f64]) -> Vec<f64> {
        let nh = self.nu(h);
        let ng = self.nu(g);
        (0..g.len())
            .map(|i| 0.5 * (g[i] * nh[i] + h[i] * ng[i]))
            .collect()
    }

    /// Gain part, defined as `Q + Q₋`.
    pub fn q_gain(&self, g: &[f64], h: &[f64]) -> Vec<f64> {
        let q = self.q(g, h);
        let l = self.q_loss(g, h);
        q.iter().zip(&l).map(|(a, b)| a + b).collect()
    }

    /// Assemble `L_a h = Q(a,h) + Q(h,a)` as a dense nodal matrix.
    pub fn linearize(&self, a: &[f64]) -> LinearizedOperator {
        let n = self.len();
        let m = &self.reference.values;
        let alpha: Vec<f64> = a.iter().zip(m).map(|(x, y)| x / y).collect();
        let inv_m: Vec<f64> = m.iter().map(|x| 1.0 / x).collect();
        let mut s = fold_indices(
            self.execution,
            n,
            self.chunk(),
            || DMatrix::<f64>::zeros(n, n),
            |acc, b| {
                let mut ti = [0usize; 56];
                let mut tv = [0.0f64; 56];
                let mut dv = [0.0f64; 56];
                self.for_each_collision(b, |c, p, s1, s2| {
                    let (a1, a2) = (s1.eval(&alpha), s2.eval(&alpha));
                    for t in 0..27 {
                        ti[t] = s1.idx[t];
                        tv[t] = -s1.w[t];
                        dv[t] = p * 0.5 * a2 * s1.w[t] * inv_m[s1.idx[t]];
                        ti[27 + t] = s2.idx[t];
                        tv[27 + t] = -s2.w[t];
                        dv[27 + t] = p * 0.5 * a1 * s2.w[t] * inv_m[s2.idx[t]];
                    }
                    ti[54] = b;
                    tv[54] = 1.0;
                    dv[54] = -p * 0.5 * alpha[c] * inv_m[b];
                    ti[55] = c;
                    tv[55] = 1.0;
                    dv[55] = -p * 0.5 * alpha[b] * inv_m[c];
                    // column-major: iterate columns outermost
                    for k in 0..56 {
                        let dk = 2.0 * dv[k];
                        let col = ti[k];
                        for e in 0..56 {
                            acc[(ti[e], col)] += tv[e] * dk;
                        }
                    }
                });
            },
            |mut x, y| {
                x += y;
                x
            },
        );
        for e in 0..n {
            let inv_w = 1.0 / self.grid.weights[e];
            for k in 0..n {
                s[(e, k)] *= inv_w;
            }
        }
        let nu = self.nu(a);
        let mut compact = s.clone();
        for i in 0..n {
            compact[(i, i)] += nu[i];
        }
        LinearizedOperator {
            matrix: s,
            multiplicative_part: nu,
            compact_part: compact,
            base_state: a.to_vec(),
        }
    }

    /// Linearization, read from or written to an on-disk cache when a directory is given.
    pub fn linearize_cached(
        &self,
        a: &[f64],
        cache_dir: Option<&Path>,
    ) -> Result<LinearizedOperator> {
        let Some(dir) = cache_dir else {
            return Ok(self.linearize(a));
        };
        let key = format!(
            "{}-{}-{:016x}",
            self.kernel.id(),
            self.grid.key(),
            hash_values(a)
        );
        let blob = dir.join(format!("linearized-{key}.bin"));
        if let Some(matrix) = read_matrix(&blob, self.len())? {
            let nu = self.nu(a);
            let mut compact = matrix.clone();
            for i in 0..self.len() {
                compact[(i, i)] += nu[i];
            }
            return Ok(LinearizedOperator {
                matrix,
                multiplicative_part: nu,
                compact_part: compact,
                base_state: a.to_vec(),
            });
        }
        let op = self.linearize(a);
        std::fs::create_dir_all(dir)?;
        write_matrix(&blob, &op.matrix)?;
        let sidecar = CacheSidecar {
            grid: self.grid.key(),
            kernel: self.kernel.id().to_string(),
            base_state_hash: format!("{:016x}", hash_values(a)),
            reference_state: self.reference.state.to_array(),
            rows: self.len(),
            cols: self.len(),
        };
        std::fs::write(
            blob.with_extension("json"),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        Ok(op)
    }

    /// Diagonal similarity `f ↦ (w/M̲)^{1/2} f` taking `ℍ^{1/2}` to Euclidean coordinates.
    pub fn half_scaling(&self) -> Vec<f64> {
        self.grid
            .weights
            .iter()
            .zip(&self.reference.values)
            .map(|(w, m)| (w / m).sqrt())
            .collect()
    }
}

fn add_vectors(mut a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheSidecar {
    grid: String,
    kernel: String,
    base_state_hash: String,
    reference_state: [f64; 5],
    rows: usize,
    cols: usize,
}

fn hash_values(v: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    for x in v {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * m.len() + 16);
    bytes.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for x in m.as_slice() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let tmp: PathBuf = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&bytes)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Read a square matrix of size `n`; `None` if absent or mismatched.
pub fn read_matrix(path: &Path, n: usize) -> Result<Option<DMatrix<f64>>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != 16 + 8 * n * n {
        return Ok(None);
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if rows != n || cols != n {
        return Ok(None);
    }
    let data: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Some(DMatrix::from_vec(n, n, data)))
}

impl LinearizedOperator {
    /// `S L S⁻¹` with `S = diag((w/M̲)^{1/2})`.
    pub fn symmetrized(&self, scaling: &[f64]) -> DMatrix<f64> {
        let n = scaling.len();
        DMatrix::from_fn(n, n, |i, j| scaling[i] * self.matrix[(i, j)] / scaling[j])
    }

    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(h))
            .as_slice()
            .to_vec()
    }
}

/// Relative symmetry defect `‖S − Sᵀ‖_F / ‖S‖_F`.
pub fn symmetry_defect(s: &DMatrix<f64>) -> f64 {
    (s - s.transpose()).norm() / s.norm().max(f64::MIN_POSITIVE)
}

/// Spectrum summary of a symmetrized linearized operator.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub symmetry_defect: f64,
    pub largest: f64,
    pub kernel_dimension: usize,
    pub gap: f64,
    pub kernel_tol: f64,
    pub top_eigenvalues: Vec<f64>,
}

/// Eigen-analysis of the symmetric part; the kernel threshold is `10⁻³·gap`,
/// taken from the sixth eigenvalue after a first sort.
pub fn spectrum_report(sym: &DMatrix<f64>) -> SpectrumReport {
    let defect = symmetry_defect(sym);
    let s = (sym + sym.transpose()) * 0.5;
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let scale = ev.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gap = -ev.get(5).copied().unwrap_or(0.0);
    let kernel_tol = (1e-3 * gap.abs()).max(1e-12 * scale);
    let kernel_dimension = ev.iter().filter(|x| x.abs() <= kernel_tol).count();
    SpectrumReport {
        symmetry_defect: defect,
        largest: ev[0],
        kernel_dimension,
        gap,
        kernel_tol,
        top_eigenvalues: ev.iter().take(8).copied().collect(),
    }
}

/// One row of the operator norm report.
#[derive(Debug, Clone, Serialize)]
pub struct NormEntry {
    pub name: String,
    pub s_in: f64,
    pub s_out: f64,
    pub value: f64,
}

/// Discrete norms of the collision operator with mixed weights.
///
/// The bilinear constant of `⟨ξ⟩^{-1/2}Q` is the largest ratio
/// `‖⟨ξ⟩^{-1/2}Q(f,g)‖_s / (‖⟨ξ⟩^{1/2}f‖_s‖⟨ξ⟩^{1/2}g‖_s)` over a fixed family
/// of polynomial-times-Maxwellian test pairs, so it is comparable across grids.
/// The gain norm `Q₊(M̲,·): ℍ^s → ℍ^{s'}` comes from power iteration.
pub fn operator_norm_report(
    op: &CollisionOperator,
    s: f64,
    s_prime: f64,
    seed: u64,
) -> Result<Vec<NormEntry>> {
    if !(0.5 <= s && s < s_prime && s_prime < 1.0) {
        return Err(Error::Config(format!(
            "need 1/2 <= s < s' < 1, got s={s}, s'={s_prime}"
        )));
    }
    let g = &op.grid;
    let r = &op.reference;
    let br = g.bracket();
    let t = r.state.temperature();
    let v = r.state.velocity();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..4 {
        let cf: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cg: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = poly_times_maxwellian(g, r, &cf, v, t);
        let h = poly_times_maxwellian(g, r, &cg, v, t);
        let q = op.q(&f, &h);
        let num: Vec<f64> = q.iter().zip(&br).map(|(a, b)| a / b.sqrt()).collect();
        let wf: Vec<f64> = f.iter().zip(&br).map(|(a, b)| a * b.sqrt()).collect();
        let wh: Vec<f64> = h.iter().zip(&br).map(|(a, b)| a * b.sqrt()).collect();
        let ratio = r.weighted_norm(g, &num, s, 0.0)?
            / (r.weighted_norm(g, &wf, s, 0.0)? * r.weighted_norm(g, &wh, s, 0.0)?);
        best = best.max(ratio);
    }
    let lin = op.linearize(&r.values);
    let mut gain = lin.compact_part.clone();
    let n = g.len();
    for b in 0..n {
        for c in 0..n {
            let d = sub(&g.nodes[c], &g.nodes[b]);
            gain[(b, c)] += r.values[b] * 2.0 * PI * dot(&d, &d).sqrt() * g.weights[c];
        }
    }
    let gain_norm = weighted_matrix_norm(&gain, &r.weights(g, s), &r.weights(g, s_prime), 200);
    let zero = DMatrix::<f64>::zeros(n, n);
    Ok(vec![
        NormEntry {
            name: "bracket_weighted_Q".into(),
            s_in: s,
            s_out: s,
            value: best,
        },
        NormEntry {
            name: "gain_reference".into(),
            s_in: s,
            s_out: s_prime,
            value: gain_norm,
        },
        NormEntry {
            name: "zero".into(),
            s_in: s,
            s_out: s_prime,
            value: weighted_matrix_norm(&zero, &r.weights(g, s), &r.weights(g, s_prime), 5),
        },
    ])
}

fn poly_times_maxwellian(
    g: &QuadratureGrid,
    r: &ReferenceMaxwellian,
    c: &[f64],
    v: [f64; 3],
    t: f64,
) -> Vec<f64> {
    g.nodes
        .iter()
        .zip(&r.values)
        .map(|(x, m)| {
            let y = [
                (x[0] - v[0]) / t.sqrt(),
                (x[1] - v[1]) / t.sqrt(),
                (x[2] - v[2]) / t.sqrt(),
            ];
            let p = c[0]
                + c[1] * y[0]
                + c[2] * y[1]
                + c[3] * y[2]
                + c[4] * y[0] * y[0]
                + c[5] * y[1] * y[1]
                + c[6] * y[2] * y[2]
                + c[7] * y[0] * y[1]
                + c[8] * y[1] * y[2]
                + c[9] * y[0] * y[2];
            p * m
        })
        .collect()
}

/// `‖D_out^{1/2} A D_in^{-1/2}‖₂` by power iteration, with `D` the nodal weights.
pub fn weighted_matrix_norm(a: &DMatrix<f64>, w_in: &[f64], w_out: &[f64], iters: usize) -> f64 {
    let n = a.ncols();
    let si: Vec<f64> = w_in.iter().map(|w| w.sqrt()).collect();
    let so: Vec<f64> = w_out.iter().map(|w| w.sqrt()).collect();
    let b = DMatrix::from_fn(a.nrows(), n, |i, j| so[i] * a[(i, j)] / si[j]);
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..iters {
        let y = b.tr_mul(&(&b * &x));
        let ny = y.norm();
        if ny == 0.0 {
            return 0.0;
        }
        sigma = ny.sqrt();
        x = y / ny;
    }
    sigma
}

/// Collision frequency of a Maxwellian at one velocity by radial quadrature,
/// independent of the grid; used as an oracle.
pub fn nu_maxwellian_oracle(
    u: &crate::velocity_space::FluidState,
    xi: [f64; 3],
    n_r: usize,
) -> f64 {
    // ν(ξ) = 2π ∫ |ξ−η| M(η) dη; shift to relative coordinates η = ξ + ρ ω.
    let gl = gauss_quad::GaussLegendre::new(std::num::NonZeroUsize::new(n_r).unwrap());
    let (ang_nodes, ang_w) = crate::velocity_space::angular_rule(n_r.min(24));
    let r_max = 12.0 * u.temperature().sqrt() + dot(&xi, &xi).sqrt() + 1.0;
    let mut s = 0.0;
    for (t, wt) in gl.iter() {
        let rr = 0.5 * r_max * (t + 1.0);
        let wr = 0.5 * r_max * wt;
        for (o, wo) in ang_nodes.iter().zip(&ang_w) {
            let eta = [xi[0] + rr * o[0], xi[1] + rr * o[1], xi[2] + rr * o[2]];
            s += wr * wo * rr * rr * rr * maxwellian_at(u, &eta);
        }
    }
    2.0 * PI * s
}
