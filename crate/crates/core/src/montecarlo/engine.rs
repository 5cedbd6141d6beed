//! Streaming simulation engine with per-horizon functional checkpoints,
//! plus the two-phase (store paths, then attach functionals) variant used
//! for diagnostics and step-ladder studies.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::QtsmModel;
use crate::pricing::MyopicMeasureCoeffs;
use crate::report::sha256_hex;

use super::transition::{myopic_table, physical_table, StepTable};
use super::{FunctionalsSet, Measure, SimGrid};

const CHUNK: usize = 1024;

/// One simulation request. `horizons` are checkpoint times (grid-aligned,
/// ascending); functionals are recorded per path at each of them, which is
/// how common random numbers across horizons are realized: shorter
/// horizons are prefixes of the longest path.
#[derive(Clone)]
pub struct SimSpec<'a> {
    pub model: &'a QtsmModel,
    pub myopic: Option<&'a MyopicMeasureCoeffs>,
    pub grid: SimGrid,
    pub y0: DVector<f64>,
    pub horizons: Vec<f64>,
    pub npaths: usize,
    pub seed: u64,
    pub keep_components: bool,
    pub store_paths: bool,
}

impl<'a> SimSpec<'a> {
    pub fn physical(
        model: &'a QtsmModel,
        grid: SimGrid,
        y0: DVector<f64>,
        horizons: Vec<f64>,
        npaths: usize,
        seed: u64,
    ) -> Self {
        Self {
            model,
            myopic: None,
            grid,
            y0,
            horizons,
            npaths,
            seed,
            keep_components: false,
            store_paths: false,
        }
    }

    fn measure(&self) -> Measure {
        match self.myopic {
            None => Measure::Physical,
            Some(c) => Measure::Myopic { gamma: c.gamma },
        }
    }
}

pub struct SimOutput {
    pub sets: Vec<FunctionalsSet>,
    pub paths: Option<PathEnsemble>,
    /// A transition covariance needed eigenvalue clipping somewhere.
    pub covariance_clipped: bool,
}

/// Fully materialized paths, for small diagnostic runs.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub grid: SimGrid,
    pub npaths: usize,
    pub seed: u64,
    pub measure: Measure,
    pub factor_dim: usize,
    pub noise_dim: usize,
    pub y0: DVector<f64>,
    /// Row-major `npaths x (nsteps+1) x m`.
    pub y: Vec<f64>,
    /// Row-major `npaths x nsteps x n`.
    pub dw: Vec<f64>,
    pub functionals: Option<FunctionalsSet>,
    pub ensemble_id: u64,
}

impl PathEnsemble {
    pub fn y_node(&self, path: usize, node: usize) -> &[f64] {
        let m = self.factor_dim;
        let stride = (self.grid.nsteps() + 1) * m;
        &self.y[path * stride + node * m..path * stride + node * m + m]
    }

    pub fn dw_step(&self, path: usize, step: usize) -> &[f64] {
        let n = self.noise_dim;
        let stride = self.grid.nsteps() * n;
        &self.dw[path * stride + step * n..path * stride + step * n + n]
    }
}

/// Flattened model coefficients plus the per-node integrand tables for
/// the sensitivity vector `L`.
pub(super) struct FuncTables {
    m: usize,
    n: usize,
    dt: f64,
    with_h: bool,
    r0: f64,
    r1: Vec<f64>,
    r2: Vec<f64>,     // m x m row-major
    a: Vec<f64>,      // n
    aslope: Vec<f64>, // n x m row-major
    lvec: Vec<f64>,   // (nodes) x m
    lmat: Vec<f64>,   // (nodes) x m x m
    lsto: Vec<f64>,   // (nodes) x m x n
}

impl FuncTables {
    pub(super) fn build(
        model: &QtsmModel,
        myopic: Option<&MyopicMeasureCoeffs>,
        grid: &SimGrid,
        last_node: usize,
    ) -> FuncTables {
        let m = model.factor_dim();
        let n = model.asset_dim();
        let dt = grid.dt();
        let nodes = last_node + 1;

        let gamma = myopic.map_or(0.0, |c| c.gamma);
        let at = model.risk_slope().transpose(); // m x n
        let lam_t = model.factor_vol().transpose(); // n x m

        let edt = (model.mean_reversion().transpose() * dt).exp();
        let mut ebt = DMatrix::<f64>::identity(m, m);

        let mut lvec = Vec::with_capacity(nodes * m);
        let mut lmat = Vec::with_capacity(nodes * m * m);
        let mut lsto = Vec::with_capacity(nodes * m * n);
        for k in 0..nodes {
            let (c_node, beta_node) = match myopic {
                Some(coeffs) => (coeffs.c_nodes[k].clone(), coeffs.beta_nodes[k].clone()),
                None => (DMatrix::zeros(m, m), DVector::zeros(m)),
            };
            let corr_vec = &at * (model.risk_const() * (gamma - 1.0) + &lam_t * beta_node);
            let corr_mat = &at * (model.risk_slope() * (gamma - 1.0) + &lam_t * c_node);
            let lvec_k = &ebt * (model.rate_lin() - corr_vec);
            let lmat_k = &ebt * (model.rate_quad() - corr_mat);
            let lsto_k = &ebt * &at;
            lvec.extend_from_slice(lvec_k.as_slice());
            lmat.extend_from_slice(lmat_k.transpose().as_slice()); // row-major
            lsto.extend_from_slice(lsto_k.transpose().as_slice()); // row-major
            ebt = &ebt * &edt;
        }

        FuncTables {
            m,
            n,
            dt,
            with_h: myopic.is_none(),
            r0: model.rate_const(),
            r1: model.rate_lin().as_slice().to_vec(),
            r2: model.rate_quad().transpose().as_slice().to_vec(),
            a: model.risk_const().as_slice().to_vec(),
            aslope: model.risk_slope().transpose().as_slice().to_vec(),
            lvec,
            lmat,
            lsto,
        }
    }

    #[inline]
    fn rate(&self, y: &[f64]) -> f64 {
        let m = self.m;
        let mut r = self.r0;
        let mut quad = 0.0;
        for i in 0..m {
            r += self.r1[i] * y[i];
            let mut row = 0.0;
            for j in 0..m {
                row += self.r2[i * m + j] * y[j];
            }
            quad += y[i] * row;
        }
        r + 0.5 * quad
    }

    #[inline]
    fn theta_into(&self, y: &[f64], out: &mut [f64]) {
        let m = self.m;
        for i in 0..self.n {
            let mut v = self.a[i];
            for j in 0..m {
                v += self.aslope[i * m + j] * y[j];
            }
            out[i] = v;
        }
    }

    #[inline]
    fn l_integrand_into(&self, node: usize, y: &[f64], out: &mut [f64]) {
        let m = self.m;
        let base_v = node * m;
        let base_m = node * m * m;
        for i in 0..m {
            let mut v = self.lvec[base_v + i];
            for j in 0..m {
                v += self.lmat[base_m + i * m + j] * y[j];
            }
            out[i] = v;
        }
    }
}

/// Running functional state for one path; both the fused engine and the
/// attach pass drive the identical operation sequence through this type,
/// which is what keeps the two routes bit-for-bit consistent.
pub(super) struct PathAccumulator<'t> {
    t: &'t FuncTables,
    theta: Vec<f64>,
    rate_cur: f64,
    theta2_cur: f64,
    gl_cur: Vec<f64>,
    gl_next: Vec<f64>,
    pub(super) int_r: f64,
    stoch: f64,
    int_theta2: f64,
    pub(super) l: Vec<f64>,
}

impl<'t> PathAccumulator<'t> {
    pub(super) fn new(t: &'t FuncTables) -> Self {
        Self {
            theta: vec![0.0; t.n],
            rate_cur: 0.0,
            theta2_cur: 0.0,
            gl_cur: vec![0.0; t.m],
            gl_next: vec![0.0; t.m],
            int_r: 0.0,
            stoch: 0.0,
            int_theta2: 0.0,
            l: vec![0.0; t.m],
            t,
        }
    }

    pub(super) fn start(&mut self, y0: &[f64]) {
        self.int_r = 0.0;
        self.stoch = 0.0;
        self.int_theta2 = 0.0;
        self.l.iter_mut().for_each(|v| *v = 0.0);
        if self.t.with_h {
            self.rate_cur = self.t.rate(y0);
            self.t.theta_into(y0, &mut self.theta);
            self.theta2_cur = self.theta.iter().map(|v| v * v).sum();
        }
        self.t.l_integrand_into(0, y0, &mut self.gl_cur);
    }

    /// Advance across step `k` (node `k` to `k+1`) given the Brownian
    /// increment of the step and the already-known next factor value.
    pub(super) fn step(&mut self, k: usize, dw: &[f64], y_next: &[f64]) {
        let t = self.t;
        let (m, n, dt) = (t.m, t.n, t.dt);

        if t.with_h {
            let mut incr = 0.0;
            for j in 0..n {
                incr += self.theta[j] * dw[j];
            }
            self.stoch += incr;
        }
        let base_s = k * m * n;
        for i in 0..m {
            let mut v = 0.0;
            for j in 0..n {
                v += t.lsto[base_s + i * n + j] * dw[j];
            }
            self.l[i] += v;
        }

        if t.with_h {
            let rate_next = t.rate(y_next);
            self.int_r += 0.5 * (self.rate_cur + rate_next) * dt;
            self.rate_cur = rate_next;
            t.theta_into(y_next, &mut self.theta);
            let theta2_next: f64 = self.theta.iter().map(|v| v * v).sum();
            self.int_theta2 += 0.5 * (self.theta2_cur + theta2_next) * dt;
            self.theta2_cur = theta2_next;
        }

        t.l_integrand_into(k + 1, y_next, &mut self.gl_next);
        for i in 0..m {
            self.l[i] += 0.5 * (self.gl_cur[i] + self.gl_next[i]) * dt;
        }
        std::mem::swap(&mut self.gl_cur, &mut self.gl_next);
    }

    pub(super) fn state_price(&self) -> f64 {
        (-self.int_r - self.stoch - 0.5 * self.int_theta2).exp()
    }
}

struct HorizonBuf {
    h: Vec<f64>,
    int_r: Vec<f64>,
    stoch: Vec<f64>,
    th2: Vec<f64>,
    l: Vec<f64>,
    y: Vec<f64>,
}

impl HorizonBuf {
    fn new(paths: usize, m: usize, with_h: bool, keep_components: bool) -> Self {
        Self {
            h: if with_h { Vec::with_capacity(paths) } else { Vec::new() },
            int_r: if with_h && keep_components {
                Vec::with_capacity(paths)
            } else {
                Vec::new()
            },
            stoch: if with_h && keep_components {
                Vec::with_capacity(paths)
            } else {
                Vec::new()
            },
            th2: if with_h && keep_components {
                Vec::with_capacity(paths)
            } else {
                Vec::new()
            },
            l: Vec::with_capacity(paths * m),
            y: Vec::with_capacity(paths * m),
        }
    }
}

struct ChunkOut {
    per_h: Vec<HorizonBuf>,
    y_paths: Vec<f64>,
    dw_paths: Vec<f64>,
}

fn validate_spec(spec: &SimSpec) -> Result<Vec<usize>> {
    if spec.npaths == 0 {
        return Err(Error::Domain("need at least one path".into()));
    }
    if spec.y0.len() != spec.model.factor_dim() {
        return Err(Error::Dimension {
            field: "y0",
            expected: format!("{}", spec.model.factor_dim()),
            got: format!("{}", spec.y0.len()),
        });
    }
    if spec.horizons.is_empty() {
        return Err(Error::Domain("need at least one checkpoint horizon".into()));
    }
    let mut nodes = Vec::with_capacity(spec.horizons.len());
    let mut prev = 0.0;
    for &h in &spec.horizons {
        if h <= prev {
            return Err(Error::Domain("horizons must be strictly ascending and positive".into()));
        }
        prev = h;
        nodes.push(spec.grid.node_of(h)?);
    }
    Ok(nodes)
}

fn model_hash(model: &QtsmModel) -> u64 {
    let mut bytes = Vec::new();
    let mut push = |xs: &[f64]| {
        for x in xs {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    };
    push(&[model.rate_const()]);
    push(model.rate_lin().as_slice());
    push(model.rate_quad().as_slice());
    push(model.risk_const().as_slice());
    push(model.risk_slope().as_slice());
    push(model.drift_const().as_slice());
    push(model.mean_reversion().as_slice());
    push(model.factor_vol().as_slice());
    push(model.asset_vol().as_slice());
    let hex = sha256_hex(&bytes);
    u64::from_str_radix(&hex[..16], 16).unwrap()
}

fn ensemble_hash(spec: &SimSpec, horizon: f64) -> u64 {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&spec.seed.to_le_bytes());
    bytes.extend_from_slice(&(spec.npaths as u64).to_le_bytes());
    bytes.extend_from_slice(&spec.grid.horizon().to_le_bytes());
    bytes.extend_from_slice(&(spec.grid.nsteps() as u64).to_le_bytes());
    bytes.extend_from_slice(&horizon.to_le_bytes());
    match spec.measure() {
        Measure::Physical => bytes.push(0),
        Measure::Myopic { gamma } => {
            bytes.push(1);
            bytes.extend_from_slice(&gamma.to_le_bytes());
        }
    }
    for v in spec.y0.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(&model_hash(spec.model).to_le_bytes());
    let hex = sha256_hex(&bytes);
    u64::from_str_radix(&hex[..16], 16).unwrap()
}

/// Run the engine: exact transitions, functional checkpoints, optional
/// full-path retention.
pub fn simulate(spec: &SimSpec) -> Result<SimOutput> {
    let cp_nodes = validate_spec(spec)?;
    let last_node = *cp_nodes.last().unwrap();
    let m = spec.model.factor_dim();
    let n = spec.model.asset_dim();

    let table = match spec.myopic {
        None => physical_table(spec.model, &spec.grid),
        Some(coeffs) => myopic_table(spec.model, coeffs, &spec.grid)?,
    };
    let table_end = if spec.store_paths {
        spec.grid.nsteps()
    } else {
        last_node
    };
    let func = FuncTables::build(spec.model, spec.myopic, &spec.grid, table_end);
    let with_h = func.with_h;

    let nchunks = spec.npaths.div_ceil(CHUNK);
    let y0: Vec<f64> = spec.y0.as_slice().to_vec();

    let chunks: Vec<ChunkOut> = (0..nchunks)
        .into_par_iter()
        .map(|ci| {
            run_chunk(
                ci,
                spec,
                &table,
                &func,
                &cp_nodes,
                last_node,
                &y0,
            )
        })
        .collect();

    // Deterministic stitch in chunk order.
    let mut sets: Vec<FunctionalsSet> = cp_nodes
        .iter()
        .zip(&spec.horizons)
        .map(|(_, &h)| FunctionalsSet {
            horizon: h,
            measure: spec.measure(),
            npaths: spec.npaths,
            factor_dim: m,
            seed: spec.seed,
            ensemble_id: ensemble_hash(spec, h),
            h: Vec::with_capacity(if with_h { spec.npaths } else { 0 }),
            int_r: Vec::new(),
            stoch_int_theta: Vec::new(),
            int_theta_sq: Vec::new(),
            l: Vec::with_capacity(spec.npaths * m),
            y_t: Vec::with_capacity(spec.npaths * m),
        })
        .collect();
    let mut y_all = Vec::new();
    let mut dw_all = Vec::new();
    if spec.store_paths {
        y_all.reserve(spec.npaths * (spec.grid.nsteps() + 1) * m);
        dw_all.reserve(spec.npaths * spec.grid.nsteps() * n);
    }
    for chunk in chunks {
        for (set, buf) in sets.iter_mut().zip(chunk.per_h) {
            set.h.extend_from_slice(&buf.h);
            set.int_r.extend_from_slice(&buf.int_r);
            set.stoch_int_theta.extend_from_slice(&buf.stoch);
            set.int_theta_sq.extend_from_slice(&buf.th2);
            set.l.extend_from_slice(&buf.l);
            set.y_t.extend_from_slice(&buf.y);
        }
        y_all.extend_from_slice(&chunk.y_paths);
        dw_all.extend_from_slice(&chunk.dw_paths);
    }

    let paths = if spec.store_paths {
        Some(PathEnsemble {
            grid: spec.grid,
            npaths: spec.npaths,
            seed: spec.seed,
            measure: spec.measure(),
            factor_dim: m,
            noise_dim: n,
            y0: spec.y0.clone(),
            y: y_all,
            dw: dw_all,
            functionals: None,
            ensemble_id: ensemble_hash(spec, spec.grid.horizon()),
        })
    } else {
        None
    };

    Ok(SimOutput {
        sets,
        paths,
        covariance_clipped: table.clipped,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_chunk(
    ci: usize,
    spec: &SimSpec,
    table: &StepTable,
    func: &FuncTables,
    cp_nodes: &[usize],
    last_node: usize,
    y0: &[f64],
) -> ChunkOut {
    let (m, n) = (table.m, table.n);
    let lo = ci * CHUNK;
    let hi = ((ci + 1) * CHUNK).min(spec.npaths);
    let count = hi - lo;
    let dt = spec.grid.dt();
    let sqrt_dt = dt.sqrt();

    let mut per_h: Vec<HorizonBuf> = cp_nodes
        .iter()
        .map(|_| HorizonBuf::new(count, m, func.with_h, spec.keep_components))
        .collect();
    let mut y_paths = Vec::new();
    let mut dw_paths = Vec::new();
    if spec.store_paths {
        y_paths.reserve(count * (spec.grid.nsteps() + 1) * m);
        dw_paths.reserve(count * spec.grid.nsteps() * n);
    }

    let mut acc = PathAccumulator::new(func);
    let mut y = vec![0.0_f64; m];
    let mut y_next = vec![0.0_f64; m];
    let mut dw = vec![0.0_f64; n];
    let mut eps = vec![0.0_f64; m];

    for p in lo..hi {
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        rng.set_stream(p as u64);

        y.copy_from_slice(y0);
        acc.start(&y);
        if spec.store_paths {
            y_paths.extend_from_slice(&y);
        }
        let mut next_cp = 0usize;
        while next_cp < cp_nodes.len() && cp_nodes[next_cp] == 0 {
            snapshot(&mut per_h[next_cp], &acc, &y, spec.keep_components);
            next_cp += 1;
        }

        // Stored-path runs walk the whole grid; checkpoint-only runs can
        // stop at the last requested horizon.
        let sim_end = if spec.store_paths {
            spec.grid.nsteps()
        } else {
            last_node
        };
        for k in 0..sim_end {
            for v in dw.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = sqrt_dt * z;
            }
            for v in eps.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let step = table.at(k);
            for i in 0..m {
                let mut val = step.mean[i];
                for j in 0..m {
                    val += step.emat[i * m + j] * y[j];
                }
                for j in 0..n {
                    val += step.cross[i * n + j] * dw[j];
                }
                for j in 0..m {
                    val += step.resid[i * m + j] * eps[j];
                }
                y_next[i] = val;
            }
            acc.step(k, &dw, &y_next);
            y.copy_from_slice(&y_next);
            if spec.store_paths {
                dw_paths.extend_from_slice(&dw);
                y_paths.extend_from_slice(&y);
            }
            while next_cp < cp_nodes.len() && cp_nodes[next_cp] == k + 1 {
                snapshot(&mut per_h[next_cp], &acc, &y, spec.keep_components);
                next_cp += 1;
            }
        }
    }

    ChunkOut {
        per_h,
        y_paths,
        dw_paths,
    }
}

fn snapshot(buf: &mut HorizonBuf, acc: &PathAccumulator, y: &[f64], keep_components: bool) {
    if acc.t.with_h {
        buf.h.push(acc.state_price());
        if keep_components {
            buf.int_r.push(acc.int_r);
            buf.stoch.push(acc.stoch);
            buf.th2.push(acc.int_theta2);
        }
    }
    buf.l.extend_from_slice(&acc.l);
    buf.y.extend_from_slice(y);
}

/// Simulate and keep full paths (`Y`, `dW`), functionals not yet attached.
pub fn simulate_factor(
    model: &QtsmModel,
    grid: SimGrid,
    y0: DVector<f64>,
    npaths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let spec = SimSpec {
        model,
        myopic: None,
        grid,
        y0,
        horizons: vec![grid.horizon()],
        npaths,
        seed,
        keep_components: false,
        store_paths: true,
    };
    Ok(simulate(&spec)?.paths.unwrap())
}

/// Myopic-measure variant of [`simulate_factor`].
pub fn simulate_factor_myopic(
    model: &QtsmModel,
    coeffs: &MyopicMeasureCoeffs,
    grid: SimGrid,
    y0: DVector<f64>,
    npaths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let spec = SimSpec {
        model,
        myopic: Some(coeffs),
        grid,
        y0,
        horizons: vec![grid.horizon()],
        npaths,
        seed,
        keep_components: false,
        store_paths: true,
    };
    Ok(simulate(&spec)?.paths.unwrap())
}

/// Fill the functionals of a stored ensemble by replaying the identical
/// accumulation over the stored nodes. Physical-measure ensembles only;
/// myopic functionals come from the fused engine, which knows the
/// measure's coefficient paths.
pub fn attach_functionals(ens: &mut PathEnsemble, model: &QtsmModel) -> Result<()> {
    if ens.measure != Measure::Physical {
        return Err(Error::Domain(
            "attach_functionals expects a physical-measure ensemble; \
             use the fused engine for myopic measures"
                .into(),
        ));
    }
    if ens.factor_dim != model.factor_dim() || ens.noise_dim != model.asset_dim() {
        return Err(Error::Dimension {
            field: "model",
            expected: format!("m={}, n={}", ens.factor_dim, ens.noise_dim),
            got: format!("m={}, n={}", model.factor_dim(), model.asset_dim()),
        });
    }
    let nsteps = ens.grid.nsteps();
    let func = FuncTables::build(model, None, &ens.grid, nsteps);
    let m = ens.factor_dim;

    let mut h = Vec::with_capacity(ens.npaths);
    let mut int_r = Vec::with_capacity(ens.npaths);
    let mut stoch = Vec::with_capacity(ens.npaths);
    let mut th2 = Vec::with_capacity(ens.npaths);
    let mut l = Vec::with_capacity(ens.npaths * m);
    let mut y_t = Vec::with_capacity(ens.npaths * m);

    let mut acc = PathAccumulator::new(&func);
    for p in 0..ens.npaths {
        acc.start(ens.y_node(p, 0));
        for k in 0..nsteps {
            // Split borrows: copy the increment (short slice) to appease
            // the accumulator's mutable self.
            let dw: Vec<f64> = ens.dw_step(p, k).to_vec();
            acc.step(k, &dw, ens.y_node(p, k + 1));
        }
        h.push(acc.state_price());
        int_r.push(acc.int_r);
        stoch.push(acc.stoch);
        th2.push(acc.int_theta2);
        l.extend_from_slice(&acc.l);
        y_t.extend_from_slice(ens.y_node(p, nsteps));
    }

    ens.functionals = Some(FunctionalsSet {
        horizon: ens.grid.horizon(),
        measure: ens.measure,
        npaths: ens.npaths,
        factor_dim: m,
        seed: ens.seed,
        ensemble_id: ens.ensemble_id,
        h,
        int_r,
        stoch_int_theta: stoch,
        int_theta_sq: th2,
        l,
        y_t,
    });
    Ok(())
}
