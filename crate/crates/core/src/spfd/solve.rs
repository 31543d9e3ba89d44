//! Iterative solvers for the SPFD system: red-black SOR and geometric
//! multigrid. Both are deterministic (fixed sweep order, no threading) so a
//! repeated solve yields bit-identical potentials.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spfd::{assemble_grid, CurrentVector, NodeGrid};
use crate::volume::ScalarVolume;

/// Solver selection for the CLI / config surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sor,
    Multigrid,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sor" => Ok(Method::Sor),
            "multigrid" | "mg" => Ok(Method::Multigrid),
            other => Err(Error::Validation(format!(
                "unknown solver method '{other}' (expected sor or multigrid)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub method: Method,
    /// SOR over-relaxation factor, 0 < ω < 2.
    pub omega: f64,
    /// Relative residual target ‖b − Aφ‖₂ / ‖b‖₂.
    pub tol: f64,
    /// Iteration cap: sweeps for SOR, V-cycles for multigrid.
    pub max_iters: usize,
    /// Residual check cadence for SOR (every n sweeps).
    pub check_every: usize,
    /// Number of grid levels (1 = fine grid only).
    pub mg_levels: usize,
    /// Red-black smoothing sweeps before/after each coarse correction.
    pub mg_pre_smooths: usize,
    pub mg_post_smooths: usize,
    /// Smoothing sweeps on the coarsest level.
    pub mg_coarse_sweeps: usize,
    /// Relaxation factor for the multigrid smoother (plain Gauss-Seidel at
    /// 1.0; over-relaxing the smoother usually hurts the V-cycle).
    pub mg_smooth_omega: f64,
    /// Coarsen conductivities with the harmonic mean of the 8 children
    /// instead of the arithmetic mean. Any air child then makes the whole
    /// coarse voxel air, so the sink region must stay conductive.
    pub mg_harmonic_coarsening: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Sor,
            omega: 1.9,
            tol: 1e-6,
            max_iters: 50_000,
            check_every: 8,
            mg_levels: 3,
            mg_pre_smooths: 2,
            mg_post_smooths: 2,
            mg_coarse_sweeps: 200,
            mg_smooth_omega: 1.0,
            mg_harmonic_coarsening: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::Validation(format!(
                "omega must be in (0, 2), got {}",
                self.omega
            )));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::Validation(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 || self.check_every == 0 {
            return Err(Error::Validation(
                "max_iters and check_every must be at least 1".into(),
            ));
        }
        if !(self.mg_smooth_omega > 0.0 && self.mg_smooth_omega < 2.0) {
            return Err(Error::Validation(format!(
                "mg_smooth_omega must be in (0, 2), got {}",
                self.mg_smooth_omega
            )));
        }
        if self.mg_levels == 0 {
            return Err(Error::Validation("mg_levels must be at least 1".into()));
        }
        Ok(())
    }
}

/// Converged nodal potentials plus solver telemetry.
#[derive(Debug, Clone)]
pub struct PotentialField {
    /// Node potentials in volts, flat (x-fastest) over the node grid.
    pub phi: Vec<f64>,
    /// Final relative residual.
    pub residual_norm: f64,
    /// Iterations used: sweeps (SOR) or V-cycles (multigrid).
    pub iterations: usize,
    /// Fine-level smoothing sweeps performed (equals `iterations` for SOR).
    pub fine_sweeps: usize,
    /// Relative residual after each check / cycle.
    pub history: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Shared kernels
// ---------------------------------------------------------------------------

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One red-black sweep: all even-parity nodes, then all odd-parity nodes.
/// Zero-conductance nodes and the pinned node are skipped.
fn rb_sweep(grid: &NodeGrid, pinned: usize, b: &[f64], phi: &mut [f64], omega: f64) {
    let [n1x, n1y, n1z] = grid.node_dims;
    let [nx, ny, nz] = grid.voxel_dims;
    let plane = n1x * n1y;
    for color in 0..2usize {
        for k in 0..n1z {
            for j in 0..n1y {
                let row = n1x * (j + n1y * k);
                let mut i = (color + j + k) % 2;
                while i < n1x {
                    let p = i + row;
                    let d = grid.diag[p];
                    if d != 0.0 && p != pinned {
                        let mut acc = b[p];
                        if i > 0 {
                            acc += grid.gx[(i - 1) + nx * (j + n1y * k)] * phi[p - 1];
                        }
                        if i < nx {
                            acc += grid.gx[i + nx * (j + n1y * k)] * phi[p + 1];
                        }
                        if j > 0 {
                            acc += grid.gy[i + n1x * ((j - 1) + ny * k)] * phi[p - n1x];
                        }
                        if j < ny {
                            acc += grid.gy[i + n1x * (j + ny * k)] * phi[p + n1x];
                        }
                        if k > 0 {
                            acc += grid.gz[i + n1x * (j + n1y * (k - 1))] * phi[p - plane];
                        }
                        if k < nz {
                            acc += grid.gz[i + n1x * (j + n1y * k)] * phi[p + plane];
                        }
                        phi[p] = (1.0 - omega) * phi[p] + omega * acc / d;
                    }
                    i += 2;
                }
            }
        }
    }
}

/// Residual r = b − Aφ; zero at the pinned node (its equation is the
/// redundant one) and at zero-conductance nodes. Returns its 2-norm.
fn residual(grid: &NodeGrid, pinned: usize, b: &[f64], phi: &[f64], r: &mut [f64]) -> f64 {
    let [n1x, n1y, n1z] = grid.node_dims;
    let [nx, ny, nz] = grid.voxel_dims;
    let plane = n1x * n1y;
    let mut sq = 0.0;
    for k in 0..n1z {
        for j in 0..n1y {
            for i in 0..n1x {
                let p = i + n1x * (j + n1y * k);
                let d = grid.diag[p];
                if d == 0.0 || p == pinned {
                    r[p] = 0.0;
                    continue;
                }
                let mut acc = b[p] - d * phi[p];
                if i > 0 {
                    acc += grid.gx[(i - 1) + nx * (j + n1y * k)] * phi[p - 1];
                }
                if i < nx {
                    acc += grid.gx[i + nx * (j + n1y * k)] * phi[p + 1];
                }
                if j > 0 {
                    acc += grid.gy[i + n1x * ((j - 1) + ny * k)] * phi[p - n1x];
                }
                if j < ny {
                    acc += grid.gy[i + n1x * (j + ny * k)] * phi[p + n1x];
                }
                if k > 0 {
                    acc += grid.gz[i + n1x * (j + n1y * (k - 1))] * phi[p - plane];
                }
                if k < nz {
                    acc += grid.gz[i + n1x * (j + n1y * k)] * phi[p + plane];
                }
                r[p] = acc;
                sq += acc * acc;
            }
        }
    }
    sq.sqrt()
}

/// Validates the current vector against the grid: balanced injection and
/// source/sink/current-carrying nodes connected through conductive tissue.
fn check_system(grid: &NodeGrid, src: &CurrentVector) -> Result<()> {
    if src.b.len() != grid.node_count() {
        return Err(Error::Shape(format!(
            "current vector has {} entries, grid has {} nodes",
            src.b.len(),
            grid.node_count()
        )));
    }
    let abs_sum: f64 = src.b.iter().map(|v| v.abs()).sum();
    if abs_sum == 0.0 {
        return Err(Error::Validation(
            "current vector is identically zero".into(),
        ));
    }
    let net: f64 = src.b.iter().sum();
    if net.abs() > 1e-12 * abs_sum {
        return Err(Error::Validation(format!(
            "injected currents do not balance: net {net:.3e} A"
        )));
    }

    // Breadth-first search from the source across conductive edges.
    let [n1x, n1y, _] = grid.node_dims;
    let [nx, ny, nz] = grid.voxel_dims;
    let plane = n1x * n1y;
    let mut seen = vec![false; grid.node_count()];
    let mut queue = VecDeque::new();
    seen[src.source] = true;
    queue.push_back(src.source);
    while let Some(p) = queue.pop_front() {
        let k = p / plane;
        let j = (p / n1x) % n1y;
        let i = p % n1x;
        let mut push = |q: usize, g: f64| {
            if g > 0.0 && !seen[q] {
                seen[q] = true;
                queue.push_back(q);
            }
        };
        if i > 0 {
            push(p - 1, grid.gx[(i - 1) + nx * (j + n1y * k)]);
        }
        if i < nx {
            push(p + 1, grid.gx[i + nx * (j + n1y * k)]);
        }
        if j > 0 {
            push(p - n1x, grid.gy[i + n1x * ((j - 1) + ny * k)]);
        }
        if j < ny {
            push(p + n1x, grid.gy[i + n1x * (j + ny * k)]);
        }
        if k > 0 {
            push(p - plane, grid.gz[i + n1x * (j + n1y * (k - 1))]);
        }
        if k < nz {
            push(p + plane, grid.gz[i + n1x * (j + n1y * k)]);
        }
    }
    if !seen[src.sink] {
        return Err(Error::Singular(
            "source and sink are not connected through conductive tissue".into(),
        ));
    }
    if let Some(p) = (0..src.b.len()).find(|&p| src.b[p] != 0.0 && !seen[p]) {
        return Err(Error::Singular(format!(
            "current-carrying node {p} is not connected to the source"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// SOR
// ---------------------------------------------------------------------------

/// Red-black successive over-relaxation with the sink pinned to φ = 0.
pub fn sor_solve(
    grid: &NodeGrid,
    src: &CurrentVector,
    cfg: &SolverConfig,
) -> Result<PotentialField> {
    cfg.validate()?;
    check_system(grid, src)?;
    let norm_b = l2(&src.b);
    let mut phi = vec![0.0; grid.node_count()];
    let mut r = vec![0.0; grid.node_count()];
    let mut history = Vec::new();
    for sweep in 1..=cfg.max_iters {
        rb_sweep(grid, src.sink, &src.b, &mut phi, cfg.omega);
        if sweep % cfg.check_every == 0 || sweep == cfg.max_iters {
            let rel = residual(grid, src.sink, &src.b, &phi, &mut r) / norm_b;
            history.push(rel);
            if rel <= cfg.tol {
                return Ok(PotentialField {
                    phi,
                    residual_norm: rel,
                    iterations: sweep,
                    fine_sweeps: sweep,
                    history,
                });
            }
        }
    }
    let last = *history.last().expect("at least one residual check");
    Err(Error::Convergence {
        residual: last,
        iterations: cfg.max_iters,
        history,
    })
}

// ---------------------------------------------------------------------------
// Multigrid
// ---------------------------------------------------------------------------

/// Averages 2×2×2 voxel blocks into one coarse voxel (spacing doubles).
fn coarsen_sigma(sigma: &ScalarVolume, harmonic: bool) -> ScalarVolume {
    let [nx, ny, nz] = sigma.header.dims;
    let cd = [nx / 2, ny / 2, nz / 2];
    let sp = sigma.header.spacing;
    let mut out = ScalarVolume::zeros(cd, [sp[0] * 2.0, sp[1] * 2.0, sp[2] * 2.0]);
    for z in 0..cd[2] {
        for y in 0..cd[1] {
            for x in 0..cd[0] {
                let mut vals = [0.0; 8];
                let mut n = 0;
                for dz in 0..2 {
                    for dy in 0..2 {
                        for dx in 0..2 {
                            vals[n] = sigma.at(2 * x + dx, 2 * y + dy, 2 * z + dz);
                            n += 1;
                        }
                    }
                }
                let v = if harmonic {
                    if vals.iter().any(|&v| v == 0.0) {
                        0.0
                    } else {
                        8.0 / vals.iter().map(|v| 1.0 / v).sum::<f64>()
                    }
                } else {
                    vals.iter().sum::<f64>() / 8.0
                };
                out.set(x, y, z, v);
            }
        }
    }
    out
}

/// Full-weighting restriction of a nodal residual; weights (1, 1/2, 1/4,
/// 1/8) for coincident/face/edge/corner fine nodes sum to 8 per coarse node,
/// so the total injected current is preserved in the interior.
fn restrict(fine: &NodeGrid, coarse: &NodeGrid, r: &[f64]) -> Vec<f64> {
    let [fnx, fny, fnz] = fine.node_dims;
    let [cnx, cny, cnz] = coarse.node_dims;
    let mut out = vec![0.0; coarse.node_count()];
    for ck in 0..cnz {
        for cj in 0..cny {
            for ci in 0..cnx {
                let mut acc = 0.0;
                for dk in -1i64..=1 {
                    let fk = 2 * ck as i64 + dk;
                    if fk < 0 || fk >= fnz as i64 {
                        continue;
                    }
                    let wk = if dk == 0 { 1.0 } else { 0.5 };
                    for dj in -1i64..=1 {
                        let fj = 2 * cj as i64 + dj;
                        if fj < 0 || fj >= fny as i64 {
                            continue;
                        }
                        let wj = if dj == 0 { 1.0 } else { 0.5 };
                        for di in -1i64..=1 {
                            let fi = 2 * ci as i64 + di;
                            if fi < 0 || fi >= fnx as i64 {
                                continue;
                            }
                            let wi = if di == 0 { 1.0 } else { 0.5 };
                            acc += wi
                                * wj
                                * wk
                                * r[fi as usize + fnx * (fj as usize + fny * fk as usize)];
                        }
                    }
                }
                out[ci + cnx * (cj + cny * ck)] = acc;
            }
        }
    }
    out
}

/// Trilinear prolongation of a coarse correction, added into the fine
/// potentials. The pinned fine node keeps its gauge value.
fn prolong_add(fine: &NodeGrid, coarse: &NodeGrid, e: &[f64], phi: &mut [f64], pinned: usize) {
    let [fnx, fny, fnz] = fine.node_dims;
    let [cnx, cny, _] = coarse.node_dims;
    let pairs = |f: usize| -> [(usize, f64); 2] {
        if f % 2 == 0 {
            [(f / 2, 1.0), (f / 2, 0.0)]
        } else {
            [((f - 1) / 2, 0.5), ((f + 1) / 2, 0.5)]
        }
    };
    for k in 0..fnz {
        let kp = pairs(k);
        for j in 0..fny {
            let jp = pairs(j);
            for i in 0..fnx {
                let p = i + fnx * (j + fny * k);
                if p == pinned || fine.diag[p] == 0.0 {
                    continue;
                }
                let ip = pairs(i);
                let mut acc = 0.0;
                for (ck, wk) in kp {
                    if wk == 0.0 {
                        continue;
                    }
                    for (cj, wj) in jp {
                        if wj == 0.0 {
                            continue;
                        }
                        for (ci, wi) in ip {
                            if wi == 0.0 {
                                continue;
                            }
                            acc += wi * wj * wk * e[ci + cnx * (cj + cny * ck)];
                        }
                    }
                }
                phi[p] += acc;
            }
        }
    }
}

fn vcycle(
    levels: &[NodeGrid],
    pins: &[usize],
    l: usize,
    phi: &mut Vec<f64>,
    b: &[f64],
    cfg: &SolverConfig,
) {
    let grid = &levels[l];
    if l + 1 == levels.len() {
        for _ in 0..cfg.mg_coarse_sweeps {
            rb_sweep(grid, pins[l], b, phi, cfg.mg_smooth_omega);
        }
        return;
    }
    for _ in 0..cfg.mg_pre_smooths {
        rb_sweep(grid, pins[l], b, phi, cfg.mg_smooth_omega);
    }
    let mut r = vec![0.0; grid.node_count()];
    residual(grid, pins[l], b, phi, &mut r);
    let bc = restrict(grid, &levels[l + 1], &r);
    let mut e = vec![0.0; levels[l + 1].node_count()];
    vcycle(levels, pins, l + 1, &mut e, &bc, cfg);
    prolong_add(grid, &levels[l + 1], &e, phi, pins[l]);
    for _ in 0..cfg.mg_post_smooths {
        rb_sweep(grid, pins[l], b, phi, cfg.mg_smooth_omega);
    }
}

/// Geometric multigrid V-cycles. Coarse operators are rebuilt from the
/// coarsened conductivity volume (rediscretization, not Galerkin), the
/// gauge pin follows the sink node down the hierarchy, and convergence is
/// judged by the fine-grid relative residual after each cycle.
pub fn multigrid_solve(
    grid: &NodeGrid,
    src: &CurrentVector,
    cfg: &SolverConfig,
) -> Result<PotentialField> {
    cfg.validate()?;
    for a in 0..3 {
        let need = 1usize << (cfg.mg_levels - 1);
        if grid.voxel_dims[a] % need != 0 {
            return Err(Error::Spec(format!(
                "voxel dims {:?} do not support {} multigrid levels (each axis must be divisible by {})",
                grid.voxel_dims, cfg.mg_levels, need
            )));
        }
    }
    check_system(grid, src)?;

    let mut levels = vec![grid.clone()];
    for _ in 1..cfg.mg_levels {
        let sigma_c = coarsen_sigma(&levels.last().unwrap().sigma, cfg.mg_harmonic_coarsening);
        levels.push(assemble_grid(&sigma_c)?);
    }
    let [n1x, n1y, _] = grid.node_dims;
    let (si, sj, sk) = (
        src.sink % n1x,
        (src.sink / n1x) % n1y,
        src.sink / (n1x * n1y),
    );
    let pins: Vec<usize> = (0..cfg.mg_levels)
        .map(|l| levels[l].node_index(si >> l, sj >> l, sk >> l))
        .collect();

    let norm_b = l2(&src.b);
    let mut phi = vec![0.0; grid.node_count()];
    let mut r = vec![0.0; grid.node_count()];
    let mut history = Vec::new();
    let sweeps_per_cycle = cfg.mg_pre_smooths + cfg.mg_post_smooths;
    for cycle in 1..=cfg.max_iters {
        vcycle(&levels, &pins, 0, &mut phi, &src.b, cfg);
        let rel = residual(grid, src.sink, &src.b, &phi, &mut r) / norm_b;
        history.push(rel);
        if rel <= cfg.tol {
            return Ok(PotentialField {
                phi,
                residual_norm: rel,
                iterations: cycle,
                fine_sweeps: cycle * sweeps_per_cycle.max(1),
                history,
            });
        }
    }
    let last = *history.last().expect("at least one cycle ran");
    Err(Error::Convergence {
        residual: last,
        iterations: cfg.max_iters,
        history,
    })
}

/// Dispatches on `cfg.method`.
pub fn solve(grid: &NodeGrid, src: &CurrentVector, cfg: &SolverConfig) -> Result<PotentialField> {
    match cfg.method {
        Method::Sor => sor_solve(grid, src, cfg),
        Method::Multigrid => multigrid_solve(grid, src, cfg),
    }
}

// ---------------------------------------------------------------------------
