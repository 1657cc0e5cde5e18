//! Orthogonal-map parameterizations and flat-bundle operators.
//!
//! Each node carries one orthogonal d×d map per bundle. Applying the maps
//! moves a signal into a shared global frame (synchronization); applying the
//! transposes moves it back (desynchronization). The bundle Laplacian is the
//! plain random-walk Laplacian conjugated by synchronization, so its action
//! never materializes per-edge maps.
//!
//! Channel layout is fixed and bundle-major throughout the crate:
//! a signal of width b·d·p stores bundle i's channel ch at columns
//! `i·d·p + ch·d ..`; a maps tensor of width b·d·d stores node v's bundle-i
//! map row-major at columns `i·d² ..`.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::{Tape, Var};

/// Minimum norm accepted for a Householder reflection vector.
pub const MIN_REFLECTION_NORM: f64 = 1e-8;

/// Rotation by `theta`: determinant +1.
pub fn rotation_2d(theta: f64) -> Array2<f64> {
    let (s, c) = theta.sin_cos();
    ndarray::array![[c, s], [-s, c]]
}

/// Reflection parameterized by `theta`: determinant −1, an involution.
pub fn reflection_2d(theta: f64) -> Array2<f64> {
    let (s, c) = theta.sin_cos();
    ndarray::array![[c, s], [s, -c]]
}

/// Product of Householder reflections, one per row of `v`, applied top row
/// first. Rows with norm ≤ [`MIN_REFLECTION_NORM`] are rejected.
pub fn householder_orthogonal(v: &Array2<f64>) -> Result<Array2<f64>> {
    let (k, d) = (v.nrows(), v.ncols());
    if k > d {
        return Err(Error::InvalidParameter(format!(
            "{k} reflection vectors for dimension {d}"
        )));
    }
    let mut u = Array2::eye(d);
    for row in v.rows() {
        let norm2: f64 = row.iter().map(|x| x * x).sum();
        if norm2.sqrt() <= MIN_REFLECTION_NORM {
            return Err(Error::DegenerateReflection(norm2.sqrt()));
        }
        let mut h = Array2::eye(d);
        for r in 0..d {
            for c in 0..d {
                h[[r, c]] -= 2.0 * row[r] * row[c] / norm2;
            }
        }
        u = h.dot(&u);
    }
    Ok(u)
}

/// Per-node, per-bundle orthogonal maps with a differentiable link back to
/// the parameters that produced them. Immutable once built.
pub struct BundleAssignment {
    pub n: usize,
    pub b: usize,
    pub d: usize,
    /// n×(b·d·d) maps tensor on the tape that built it.
    pub maps: Var,
}

impl BundleAssignment {
    /// Wraps an already-assembled maps tensor.
    pub fn from_maps(maps: Var, b: usize, d: usize) -> Result<BundleAssignment> {
        let (n, c) = maps.shape();
        if c != b * d * d {
            return Err(Error::ShapeMismatch(format!(
                "maps width {c} != b*d*d = {}",
                b * d * d
            )));
        }
        Ok(BundleAssignment { n, b, d, maps })
    }

    /// Direct d=2 parameterization: one angle per node per bundle. The
    /// first ⌈b/2⌉ bundles are rotations (det +1), the rest reflections
    /// (det −1).
    pub fn from_angles(theta: &Var) -> Result<BundleAssignment> {
        let (n, b) = theta.shape();
        if b == 0 {
            return Err(Error::InvalidParameter("zero bundles".into()));
        }
        let rot_count = b - b / 2;
        let mut cols: Vec<Var> = Vec::with_capacity(b * 4);
        for i in 0..b {
            let t = theta.select_cols(i, i + 1)?;
            let c = t.cos();
            let s = t.sin();
            if i < rot_count {
                // row-major [[c, s], [−s, c]]
                cols.push(c.clone());
                cols.push(s.clone());
                cols.push(s.scalar_mul(-1.0));
                cols.push(c);
            } else {
                // row-major [[c, s], [s, −c]]
                cols.push(c.clone());
                cols.push(s.clone());
                cols.push(s);
                cols.push(c.scalar_mul(-1.0));
            }
        }
        let maps = Var::concat_cols(&cols)?;
        Ok(BundleAssignment { n, b, d: 2, maps })
    }

    /// General-d parameterization: `k` Householder reflection vectors per
    /// node per bundle, laid out bundle-major then reflection-major in
    /// `vecs` (n × b·k·d). Rows with a near-zero vector are rejected.
    pub fn from_householder(vecs: &Var, b: usize, k: usize, d: usize) -> Result<BundleAssignment> {
        let (n, c) = vecs.shape();
        if k == 0 || k > d {
            return Err(Error::InvalidParameter(format!(
                "{k} reflections for dimension {d}"
            )));
        }
        if c != b * k * d {
            return Err(Error::ShapeMismatch(format!(
                "reflection stack width {c} != b*k*d = {}",
                b * k * d
            )));
        }
        let vv = vecs.value();
        for v in 0..n {
            for blk in 0..b * k {
                let norm2: f64 = (0..d).map(|j| vv[[v, blk * d + j]].powi(2)).sum();
                if norm2.sqrt() <= MIN_REFLECTION_NORM {
                    return Err(Error::DegenerateReflection(norm2.sqrt()));
                }
            }
        }

        // One maps tensor per reflection index, shared across bundles:
        // H = I − 2vvᵀ/‖v‖².
        let mut reflections: Vec<Var> = Vec::with_capacity(k);
        for j in 0..k {
            let mut cols: Vec<Var> = Vec::with_capacity(b * d * d);
            for i in 0..b {
                let base = (i * k + j) * d;
                let comps: Vec<Var> = (0..d)
                    .map(|a| vecs.select_cols(base + a, base + a + 1))
                    .collect::<Result<_>>()?;
                let mut norm2 = comps[0].hadamard(&comps[0])?;
                for comp in &comps[1..] {
                    norm2 = norm2.add(&comp.hadamard(comp)?)?;
                }
                let inv = norm2.recip()?;
                for r in 0..d {
                    for cc in 0..d {
                        let outer = comps[r]
                            .hadamard(&comps[cc])?
                            .hadamard(&inv)?
                            .scalar_mul(-2.0);
                        cols.push(if r == cc {
                            let ones = outer.tape().constant(Array2::ones((n, 1)));
                            outer.add(&ones)?
                        } else {
                            outer
                        });
                    }
                }
            }
            reflections.push(Var::concat_cols(&cols)?);
        }

        // Accumulate the product by treating the running matrix's columns as
        // d channels of a signal. Applying reflections in reverse order and
        // reading the column-major result row-major yields H_k···H_1 per
        // block, matching `householder_orthogonal`.
        let tape = vecs.tape();
        let mut acc = tape.constant(identity_signal(n, b, d));
        for j in (0..k).rev() {
            acc = acc.bundle_apply(&reflections[j], b, d, d, false)?;
        }
        Ok(BundleAssignment { n, b, d, maps: acc })
    }

    /// Trivial bundle: every map the identity.
    pub fn identity(tape: &Tape, n: usize, b: usize, d: usize) -> BundleAssignment {
        let maps = tape.constant(identity_maps(n, b, d));
        BundleAssignment { n, b, d, maps }
    }

    /// Largest deviation of any map from orthogonality, max |OᵀO − I|.
    pub fn orthogonality_defect(&self) -> f64 {
        let m = self.maps.value();
        let d = self.d;
        let mut worst = 0.0f64;
        for v in 0..self.n {
            for i in 0..self.b {
                let base = i * d * d;
                for r in 0..d {
                    for c in 0..d {
                        let mut dot = 0.0;
                        for k in 0..d {
                            dot += m[[v, base + k * d + r]] * m[[v, base + k * d + c]];
                        }
                        let target = if r == c { 1.0 } else { 0.0 };
                        worst = worst.max((dot - target).abs());
                    }
                }
            }
        }
        worst
    }

    /// Determinant of node `v`'s bundle-`i` map (d ≤ 3).
    pub fn determinant(&self, v: usize, i: usize) -> f64 {
        let m = self.maps.value();
        let d = self.d;
        let base = i * d * d;
        let e = |r: usize, c: usize| m[[v, base + r * d + c]];
        match d {
            1 => e(0, 0),
            2 => e(0, 0) * e(1, 1) - e(0, 1) * e(1, 0),
            3 => {
                e(0, 0) * (e(1, 1) * e(2, 2) - e(1, 2) * e(2, 1))
                    - e(0, 1) * (e(1, 0) * e(2, 2) - e(1, 2) * e(2, 0))
                    + e(0, 2) * (e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0))
            }
            _ => panic!("determinant helper supports d <= 3"),
        }
    }

    fn channels_of(&self, x: &Var) -> Result<usize> {
        let (n, c) = x.shape();
        if n != self.n || c % (self.b * self.d) != 0 || c == 0 {
            return Err(Error::ShapeMismatch(format!(
                "signal {n}x{c} incompatible with n={}, b·d={}",
                self.n,
                self.b * self.d
            )));
        }
        Ok(c / (self.b * self.d))
    }

    /// Moves a signal to the shared global frame: row v, bundle i becomes
    /// O_v^{(i)}·x_v^{(i)} for every channel.
    pub fn synchronize(&self, x: &Var) -> Result<Var> {
        let p = self.channels_of(x)?;
        x.bundle_apply(&self.maps, self.b, self.d, p, false)
    }

    /// Inverse of [`BundleAssignment::synchronize`] (applies transposes).
    pub fn desynchronize(&self, x: &Var) -> Result<Var> {
        let p = self.channels_of(x)?;
        x.bundle_apply(&self.maps, self.b, self.d, p, true)
    }
}

/// Identity maps tensor, n×(b·d·d), row-major blocks.
pub fn identity_maps(n: usize, b: usize, d: usize) -> Array2<f64> {
    let mut m = Array2::zeros((n, b * d * d));
    for v in 0..n {
        for i in 0..b {
            for r in 0..d {
                m[[v, i * d * d + r * d + r]] = 1.0;
            }
        }
    }
    m
}

/// Identity matrix stored as a b·d·d-wide signal with d channels per bundle
/// (channel j = column j).
fn identity_signal(n: usize, b: usize, d: usize) -> Array2<f64> {
    // column-major flatten of I equals the row-major one
    identity_maps(n, b, d)
}

/// Bundle Laplacian action: desynchronize ∘ 𝓛 ∘ synchronize.
pub fn bundle_laplacian_apply(
    g: &std::rc::Rc<Graph>,
    bundle: &BundleAssignment,
    x: &Var,
) -> Result<Var> {
    let synced = bundle.synchronize(x)?;
    let diffused = synced.lap_rw_apply(g)?;
    bundle.desynchronize(&diffused)
}

/// Explicit per-edge form (𝓛_B x)_u = (1/d_u)·Σ_{v∈N(u)} (x_u − O_uᵀO_v x_v),
/// computed without the factorized path. Test oracle.
pub fn bundle_laplacian_apply_edgewise(
    g: &Graph,
    bundle: &BundleAssignment,
    x: &Array2<f64>,
) -> Result<Array2<f64>> {
    let (n, c) = (x.nrows(), x.ncols());
    let (b, d) = (bundle.b, bundle.d);
    if n != g.node_count() || n != bundle.n || c % (b * d) != 0 {
        return Err(Error::ShapeMismatch("edgewise bundle Laplacian".into()));
    }
    let p = c / (b * d);
    let m = bundle.maps.value();
    let block = |v: usize, i: usize, r: usize, cc: usize| m[[v, i * d * d + r * d + cc]];
    let mut out = Array2::zeros((n, c));
    for u in 0..n {
        let inv_deg = 1.0 / g.degree(u) as f64;
        for &v in g.neighbors(u) {
            for i in 0..b {
                // O_uv = O_uᵀ O_v
                let mut ouv = Array2::<f64>::zeros((d, d));
                for r in 0..d {
                    for cc in 0..d {
                        for k in 0..d {
                            ouv[[r, cc]] += block(u, i, k, r) * block(v, i, k, cc);
                        }
                    }
                }
                for ch in 0..p {
                    let base = i * d * p + ch * d;
                    for r in 0..d {
                        let mut transported = 0.0;
                        for cc in 0..d {
                            transported += ouv[[r, cc]] * x[[v, base + cc]];
                        }
                        out[[u, base + r]] += inv_deg * (x[[u, base + r]] - transported);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Dense (n·d)×(n·d) block matrix of one bundle's Laplacian: identity on the
/// diagonal of every non-isolated node, −(1/d_u)·O_uᵀO_v at block (u, v) for
/// each edge. Test oracle for the factorized action and for bundle heat
/// diffusion.
pub fn bundle_block_laplacian_dense(
    g: &Graph,
    bundle: &BundleAssignment,
    bundle_index: usize,
) -> Result<Array2<f64>> {
    let (n, d) = (g.node_count(), bundle.d);
    if bundle.n != n || bundle_index >= bundle.b {
        return Err(Error::ShapeMismatch("block Laplacian".into()));
    }
    let m = bundle.maps.value();
    let dd = bundle.d * bundle.d;
    let block = |v: usize, r: usize, c: usize| m[[v, bundle_index * dd + r * d + c]];
    let mut lap = Array2::zeros((n * d, n * d));
    for u in 0..n {
        for r in 0..d {
            lap[[u * d + r, u * d + r]] = 1.0;
        }
        let inv_deg = 1.0 / g.degree(u) as f64;
        for &v in g.neighbors(u) {
            for r in 0..d {
                for c in 0..d {
                    let mut ouv = 0.0;
                    for k in 0..d {
                        ouv += block(u, k, r) * block(v, k, c);
                    }
                    lap[[u * d + r, v * d + c]] = -inv_deg * ouv;
                }
            }
        }
    }
    Ok(lap)
}

/// Bundle Dirichlet energy ½·Σ_u Σ_{v∈N(u)} (1/d_u)·‖x_u − O_uv·x_v‖²,
/// summed over every bundle and channel. Zero exactly on synchronized
/// (consensus) signals of a connected graph.
pub fn bundle_dirichlet_energy(
    g: &Graph,
    bundle: &BundleAssignment,
    x: &Array2<f64>,
) -> Result<f64> {
    let (n, c) = (x.nrows(), x.ncols());
    let (b, d) = (bundle.b, bundle.d);
    if n != g.node_count() || n != bundle.n || c % (b * d) != 0 {
        return Err(Error::ShapeMismatch("Dirichlet energy".into()));
    }
    let p = c / (b * d);
    // ‖x_u − O_uᵀO_v x_v‖ = ‖O_u x_u − O_v x_v‖, so work in the global frame.
    let m = bundle.maps.value();
    let mut synced = Array2::zeros((n, c));
    for v in 0..n {
        for i in 0..b {
            for ch in 0..p {
                let base = i * d * p + ch * d;
                for r in 0..d {
                    let mut acc = 0.0;
                    for k in 0..d {
                        acc += m[[v, i * d * d + r * d + k]] * x[[v, base + k]];
                    }
                    synced[[v, base + r]] = acc;
                }
            }
        }
    }
    let mut energy = 0.0;
    for u in 0..n {
        let inv_deg = 1.0 / g.degree(u) as f64;
        for &v in g.neighbors(u) {
            let mut dist2 = 0.0;
            for j in 0..c {
                let diff = synced[[u, j]] - synced[[v, j]];
                dist2 += diff * diff;
            }
            energy += 0.5 * inv_deg * dist2;
        }
    }
    Ok(energy)
}

/// Degree-weighted total of the synchronized signal, Σ_v d_v·(O_v x_v). A
/// conserved quantity of bundle heat diffusion; returned per column.
pub fn synchronized_mass(
    g: &Graph,
    bundle: &BundleAssignment,
    x: &Array2<f64>,
) -> Result<Array1<f64>> {
    let (n, c) = (x.nrows(), x.ncols());
    let (b, d) = (bundle.b, bundle.d);
    if n != g.node_count() || n != bundle.n || c % (b * d) != 0 {
        return Err(Error::ShapeMismatch("synchronized mass".into()));
    }
    let p = c / (b * d);
    let m = bundle.maps.value();
    let mut mass = Array1::zeros(c);
    for v in 0..n {
        let deg = g.degree(v) as f64;
        for i in 0..b {
            for ch in 0..p {
                let base = i * d * p + ch * d;
                for r in 0..d {
                    let mut acc = 0.0;
                    for k in 0..d {
                        acc += m[[v, i * d * d + r * d + k]] * x[[v, base + k]];
                    }
                    mass[base + r] += deg * acc;
                }
            }
        }
    }
    Ok(mass)
}
