//! Configuration-driven command front end. Every command reads one TOML
//! config, applies CLI overrides, runs inside a worker pool of the
//! requested width, writes its artifacts into the output directory, and
//! records them (with content hashes) in `manifest.json`.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use turnpike_core::config::{load_config, FileConfig};
use turnpike_core::error::Error as CoreError;
use turnpike_core::montecarlo::{simulate, SimGrid, SimSpec};
use turnpike_core::portfolio::{decompose, find_lambda_hat};
use turnpike_core::pricing::{bond_price_with, gamma_system};
use turnpike_core::report::{fmt_f64, loglog_svg, sha256_hex, LogLogLine};
use turnpike_core::turnpike::{
    run_experiment, Component, ExperimentConfig, FitOutcome, TurnpikeReport,
};
use turnpike_core::utility::{UtilityPair, UtilitySpec};

/// Exit code for configuration/parse problems.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for failed validation or failed runs.
pub const EXIT_FAIL: i32 = 1;

/// Global options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct GlobalOpts {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps_per_unit: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

impl GlobalOpts {
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("TURNPIKE_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn effective_config(opts: &GlobalOpts) -> anyhow::Result<FileConfig> {
    let mut cfg = load_config(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.sim.seed = seed;
    }
    if let Some(paths) = opts.paths {
        cfg.sim.npaths = paths;
    }
    if let Some(steps) = opts.steps_per_unit {
        cfg.sim.nsteps_per_unit = steps;
    }
    if let Some(threads) = opts.threads {
        cfg.sim.threads = Some(threads);
    }
    Ok(cfg)
}

fn with_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> anyhow::Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(f))
        }
    }
}

/// Output collector: writes files and accumulates their hashes.
struct Artifacts {
    dir: PathBuf,
    entries: Vec<(String, String)>,
}

impl Artifacts {
    fn new(dir: PathBuf) -> anyhow::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            entries: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.entries
            .push((name.to_string(), sha256_hex(bytes)));
        Ok(path)
    }

    fn finish(
        self,
        command: &str,
        cfg: &FileConfig,
        started: Instant,
    ) -> anyhow::Result<()> {
        #[derive(Serialize)]
        struct OutputEntry {
            path: String,
            sha256: String,
        }
        #[derive(Serialize)]
        struct Manifest {
            artifact_version: String,
            command: String,
            seed: u64,
            config_sha256: String,
            wall_clock_seconds: f64,
            outputs: Vec<OutputEntry>,
        }
        let config_text = cfg.to_toml()?;
        let manifest = Manifest {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: cfg.sim.seed,
            config_sha256: sha256_hex(config_text.as_bytes()),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            outputs: self
                .entries
                .iter()
                .map(|(p, h)| OutputEntry {
                    path: p.clone(),
                    sha256: h.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(self.dir.join("manifest.json"), json)?;
        Ok(())
    }
}

fn write_effective_config(art: &mut Artifacts, cfg: &FileConfig) -> anyhow::Result<()> {
    let text = cfg.to_toml()?;
    art.write("effective_config.toml", text.as_bytes())?;
    Ok(())
}

fn initial_factor(cfg: &FileConfig) -> DVector<f64> {
    cfg.initial_factor()
}

fn pair_from_config(cfg: &FileConfig) -> anyhow::Result<UtilityPair> {
    let pair_cfg = cfg
        .utility
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config has no [utility] tables"))?;
    Ok(UtilityPair::new(
        pair_cfg.general.build()?,
        pair_cfg.reference.build()?,
    )?)
}

/// Check the standing assumptions; exit 0 only when every one holds.
pub fn cmd_validate(opts: &GlobalOpts) -> anyhow::Result<i32> {
    let started = Instant::now();
    let cfg = effective_config(opts)?;
    let model = cfg.model.build()?;
    // Validate for the exponent set the configured pair brings in, or the
    // log/forward pair when no utilities are configured.
    let gammas = match cfg.utility.as_ref() {
        Some(_) => {
            let pair = pair_from_config(&cfg)?;
            let alpha = pair.theoretical_alpha(
                cfg.experiment.as_ref().and_then(|e| e.sharing_rate),
            )?;
            vec![pair.q(), 1.0 + alpha]
        }
        None => vec![0.0, 1.0],
    };
    let report = model.validate(&gammas);
    print!("{report}");
    let mut art = Artifacts::new(opts.out_dir())?;
    write_effective_config(&mut art, &cfg)?;
    art.write("validate.txt", format!("{report}").as_bytes())?;
    art.finish("validate", &cfg, started)?;
    Ok(if report.passed() { 0 } else { EXIT_FAIL })
}

/// Solve the myopic coefficient family for one exponent and horizon and
/// export the paths as CSV.
pub fn cmd_riccati(opts: &GlobalOpts, gamma: f64, horizon: f64) -> anyhow::Result<i32> {
    let started = Instant::now();
    let cfg = effective_config(opts)?;
    let model = cfg.model.build()?;
    let sys = with_pool(cfg.sim.threads, || {
        gamma_system(&model, gamma, horizon, cfg.sim.nsteps_per_unit)
    })??;
    let mut buf = Vec::new();
    sys.system.write_csv(&mut buf)?;
    let mut art = Artifacts::new(opts.out_dir())?;
    write_effective_config(&mut art, &cfg)?;
    art.write("riccati.csv", &buf)?;
    art.finish("riccati", &cfg, started)?;
    println!(
        "gamma={gamma} horizon={horizon}: C(0)={}, beta(0)={}, scalar(0)={}",
        fmt_f64(sys.system.cpath[0][(0, 0)]),
        fmt_f64(sys.system.betapath.as_ref().unwrap()[0][0]),
        fmt_f64(sys.system.scalarpath.as_ref().unwrap()[0]),
    );
    Ok(0)
}

/// Closed-form bond prices, optionally cross-checked by Monte Carlo when
/// path counts were requested.
pub fn cmd_bond(opts: &GlobalOpts, horizons: &[f64], with_mc: bool) -> anyhow::Result<i32> {
    let started = Instant::now();
    let cfg = effective_config(opts)?;
    let model = cfg.model.build()?;
    let y0 = initial_factor(&cfg);
    let mut rows = Vec::new();
    with_pool(cfg.sim.threads, || -> anyhow::Result<()> {
        for &t in horizons {
            let closed = bond_price_with(&model, t, &y0, cfg.sim.nsteps_per_unit)?;
            let mc = if with_mc && t > 0.0 {
                let grid = SimGrid::per_unit(t, cfg.sim.nsteps_per_unit)?;
                let spec = SimSpec::physical(
                    &model,
                    grid,
                    y0.clone(),
                    vec![t],
                    cfg.sim.npaths,
                    cfg.sim.seed,
                );
                let out = simulate(&spec)?;
                Some(turnpike_core::montecarlo::estimate(&out.sets[0].h)?)
            } else {
                None
            };
            rows.push((t, closed, mc));
        }
        Ok(())
    })??;

    let mut csv = String::from("T,closed_form,mc_mean,mc_se\n");
    for (t, closed, mc) in &rows {
        match mc {
            Some(e) => csv.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(*t),
                fmt_f64(*closed),
                fmt_f64(e.mean),
                fmt_f64(e.se)
            )),
            None => csv.push_str(&format!("{},{},,\n", fmt_f64(*t), fmt_f64(*closed))),
        }
        match mc {
            Some(e) => println!(
                "T={t}: closed={closed:.10}, mc={:.10} +- {:.2e}",
                e.mean, e.se
            ),
            None => println!("T={t}: closed={closed:.10}"),
        }
    }
    let mut art = Artifacts::new(opts.out_dir())?;
    write_effective_config(&mut art, &cfg)?;
    art.write("bond.csv", csv.as_bytes())?;
    art.finish("bond", &cfg, started)?;
    Ok(0)
}

fn parse_utility(cfg: &FileConfig, id: &str) -> anyhow::Result<UtilitySpec> {
    match id {
        "general" => Ok(pair_from_config(cfg)?.general),
        "reference" => Ok(pair_from_config(cfg)?.reference),
        "log" => Ok(UtilitySpec::log()),
        other => {
            if let Some(p) = other.strip_prefix("power:") {
                Ok(UtilitySpec::power(p.parse::<f64>().map_err(|e| {
                    CoreError::Config(format!("bad power exponent `{p}`: {e}"))
                })?)?)
            } else {
                Err(anyhow::anyhow!(
                    "unknown utility id `{other}` (general | reference | log | power:<p>)"
                ))
            }
        }
    }
}

/// Monte Carlo feedback table (myopic, hedging, total) for one utility.
pub fn cmd_portfolio(
    opts: &GlobalOpts,
    utility_id: &str,
    horizon: f64,
    x_override: Option<f64>,
) -> anyhow::Result<i32> {
    let started = Instant::now();
    let cfg = effective_config(opts)?;
    let model = cfg.model.build()?;
    let u = parse_utility(&cfg, utility_id)?;
    let y0 = initial_factor(&cfg);
    let x = x_override.unwrap_or(cfg.initial.x);

    let dec = with_pool(cfg.sim.threads, || -> anyhow::Result<_> {
        let grid = SimGrid::per_unit(horizon, cfg.sim.nsteps_per_unit)?;
        let spec = SimSpec::physical(
            &model,
            grid,
            y0.clone(),
            vec![horizon],
            cfg.sim.npaths,
            cfg.sim.seed,
        );
        let funcs = simulate(&spec)?.sets.pop().unwrap();
        let cal = find_lambda_hat(&u, &funcs, x)?;
        Ok(decompose(&u, &model, &funcs, &cal, &y0)?)
    })??;

    let mut csv = String::from("utility,T,x,component,asset,value,se\n");
    let mut put = |component: &str, v: &turnpike_core::portfolio::VectorEstimate| {
        for i in 0..v.value.len() {
            csv.push_str(&format!(
                "{utility_id},{},{},{component},{i},{},{}\n",
                fmt_f64(horizon),
                fmt_f64(x),
                fmt_f64(v.value[i]),
                fmt_f64(v.se[i])
            ));
        }
    };
    put("myopic", &dec.myopic);
    put("hedging", &dec.hedging);
    put("total", &dec.total);

    println!("utility {utility_id}, T={horizon}, x={x}");
    println!("  myopic : {:?} +- {:?}", dec.myopic.value.as_slice(), dec.myopic.se.as_slice());
    println!("  hedging: {:?} +- {:?}", dec.hedging.value.as_slice(), dec.hedging.se.as_slice());
    println!("  total  : {:?} +- {:?}", dec.total.value.as_slice(), dec.total.se.as_slice());

    let mut art = Artifacts::new(opts.out_dir())?;
    write_effective_config(&mut art, &cfg)?;
    art.write("portfolio.csv", csv.as_bytes())?;
    art.finish("portfolio", &cfg, started)?;
    Ok(0)
}

fn experiment_from_config(cfg: &FileConfig) -> anyhow::Result<ExperimentConfig> {
    let exp = cfg
        .experiment
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config has no [experiment] table"))?;
    let mut components = Vec::new();
    for name in &exp.components {
        components.push(Component::parse(name)?);
    }
    Ok(ExperimentConfig {
        x: cfg.initial.x,
        y0: cfg.initial_factor(),
        tgrid: exp.t_grid.clone(),
        npaths: cfg.sim.npaths,
        nsteps_per_unit: cfg.sim.nsteps_per_unit,
        seed: cfg.sim.seed,
        components,
        xgrid: exp.x_grid.clone(),
        sharing_rate: exp.sharing_rate,
        riccati_steps_per_unit: 2000,
    })
}

fn render_report(
    art: &mut Artifacts,
    report: &TurnpikeReport,
    prefix: &str,
) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    report.write_report_csv(&mut buf)?;
    art.write(&format!("{prefix}report.csv"), &buf)?;
    let mut buf = Vec::new();
    report.write_rates_csv(&mut buf)?;
    art.write(&format!("{prefix}rates.csv"), &buf)?;

    let components: [(&str, &dyn Fn(&turnpike_core::turnpike::GapRow) -> Option<f64>, &Option<FitOutcome>);
        3] = [
        ("myopic", &|r| r.myopic.map(|g| g.mean), &report.fit_myopic),
        ("hedging", &|r| r.hedging.map(|g| g.mean), &report.fit_hedging),
        ("wealth_gap", &|r| r.wealth.map(|g| g.mean), &report.fit_wealth),
    ];
    for (name, extract, fit) in components {
        let points: Vec<(f64, f64)> = report
            .rows
            .iter()
            .filter_map(|r| extract(r).map(|g| (r.eh, g)))
            .collect();
        if points.is_empty() {
            continue;
        }
        let mut lines = Vec::new();
        let anchor = points
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .fold((0.0, 0.0, 0usize), |acc, (x, y)| {
                (acc.0 + x.log10(), acc.1 + y.log10(), acc.2 + 1)
            });
        if anchor.2 > 0 {
            let ax = anchor.0 / anchor.2 as f64;
            let ay = anchor.1 / anchor.2 as f64;
            if let Some(FitOutcome::Fitted(f)) = fit {
                lines.push(LogLogLine {
                    slope: f.slope,
                    anchor_log_x: ax,
                    anchor_log_y: ay,
                    label: "fitted",
                });
            }
            lines.push(LogLogLine {
                slope: report.theoretical_exponent,
                anchor_log_x: ax,
                anchor_log_y: ay,
                label: "theory",
            });
        }
        let svg = loglog_svg(
            &format!("{name} gap vs E[H_T]"),
            "E[H_T]",
            "gap",
            &points,
            &lines,
        );
        art.write(&format!("{prefix}{name}.svg"), svg.as_bytes())?;
    }
    Ok(())
}

/// Full rate experiment for the configured utility pair.
pub fn cmd_turnpike(opts: &GlobalOpts) -> anyhow::Result<i32> {
    let started = Instant::now();
    let cfg = effective_config(opts)?;
    let model = cfg.model.build()?;
    let pair = pair_from_config(&cfg)?;
    let exp = experiment_from_config(&cfg)?;

    let report = with_pool(cfg.sim.threads, || run_experiment(&model, &pair, &exp))??;

    let mut art = Artifacts::new(opts.out_dir())?;
    write_effective_config(&mut art, &cfg)?;
    render_report(&mut art, &report, "")?;
    art.finish("turnpike", &cfg, started)?;

    if let Some(reason) = &report.incomplete {
        println!("INCOMPLETE: {reason}");
    }
    println!("{}", report.summary_line());
    Ok(0)
}

/// Pareto and linear sharing rules against the common CRRA reference;
/// the linear rule is expected to converge no slower.
pub fn cmd_collective(opts: &GlobalOpts) -> anyhow::Result<i32> {
    let started = Instant::now();
    let cfg = effective_config(opts)?;
    let model = cfg.model.build()?;
    let col = cfg
        .collective
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("config has no [collective] table"))?;

    let reference = UtilitySpec::crra(*col.exponents.last().unwrap())?;
    let pareto_pair = UtilityPair::new(
        UtilitySpec::pareto(col.betas.clone(), col.exponents.clone())?,
        reference.clone(),
    )?;
    let linear_pair = UtilityPair::new(
        UtilitySpec::linear_sharing(
            col.alphas.clone(),
            col.betas.clone(),
            col.exponents.clone(),
        )?,
        reference,
    )?;

    let mut exp = experiment_from_config(&cfg)?;
    exp.sharing_rate = col.sharing_rate.or(exp.sharing_rate);

    let (pareto_report, linear_report) = with_pool(cfg.sim.threads, || {
        let a = run_experiment(&model, &pareto_pair, &exp)?;
        let b = run_experiment(&model, &linear_pair, &exp)?;
        Ok::<_, CoreError>((a, b))
    })??;

    let mut art = Artifacts::new(opts.out_dir())?;
    write_effective_config(&mut art, &cfg)?;
    render_report(&mut art, &pareto_report, "pareto_")?;
    render_report(&mut art, &linear_report, "linear_")?;
    art.finish("collective", &cfg, started)?;

    println!("pareto : {}", pareto_report.summary_line());
    println!("linear : {}", linear_report.summary_line());
    let slope = |r: &TurnpikeReport| match &r.fit_myopic {
        Some(FitOutcome::Fitted(f)) => Some((f.slope, f.half_width)),
        _ => None,
    };
    if let (Some((sp, wp)), Some((sl, wl))) = (slope(&pareto_report), slope(&linear_report)) {
        let tol = (wp * wp + wl * wl).sqrt();
        let verdict = if sl >= sp - tol { "CONSISTENT" } else { "SLOWER" };
        println!(
            "linear-vs-pareto: linear slope {sl:.4} vs pareto slope {sp:.4} \
             (tolerance {tol:.4}) -> {verdict}"
        );
    }
    Ok(0)
}

