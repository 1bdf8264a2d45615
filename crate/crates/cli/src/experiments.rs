//! Solver runs over repetitions, unrolled-network training and evaluation sweeps.

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use pvbi::exec::{try_map_range, Execution};
use pvbi::models::Model;
use pvbi::oracle::{numerical_crlb, pvbi_reference};
use pvbi::rng::{derive_key, purpose, stream};
use pvbi::solver::{run_pspvbi, PosteriorResult, SolverConfig, StepSizes, TraceRow, VariationalState};
use pvbi::unfolding::{
    forward_unfold, train, HyperNet, LayerParams, OptimizeMode, TrainOutcome, TrainingInstance, UnfoldedNet,
};
use pvbi::Error;

use crate::config::{ExperimentConfig, ScenarioKind};
use crate::dataset::{family, Instance, Problem, Scenario};
use crate::io::{fmt_f64, fmt_opt, Table};

/// Stream tag of per-repetition solver seeds.
const SOLVE: u64 = 101;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Pspvbi,
    PvbiReference,
    Lpspvbi,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pspvbi => "pspvbi",
            Method::PvbiReference => "pvbi_reference",
            Method::Lpspvbi => "lpspvbi",
        }
    }
}

/// Final per-repetition estimates; `None` when the run produced non-finite values.
#[derive(Clone, Debug)]
pub struct RepOutcome {
    pub rep: usize,
    pub result: Option<PosteriorResult>,
}

pub fn rep_seed(seed: u64, path: &[u64], rep: usize) -> u64 {
    let mut key = vec![SOLVE];
    key.extend_from_slice(path);
    key.push(rep as u64);
    derive_key(seed, &key)
}

fn finite(r: &PosteriorResult) -> bool {
    r.mmse.iter().chain(&r.map).all(|x| x.is_finite())
}

/// Runs `method` on every instance with seeds derived from `(seed, path, rep)`.
pub fn solve_all(
    instances: &[Instance],
    solver: &SolverConfig,
    method: Method,
    seed: u64,
    path: &[u64],
    exec: Execution,
) -> Result<Vec<RepOutcome>> {
    try_map_range(exec, instances.len(), |i| -> Result<RepOutcome> {
        let inst = &instances[i];
        let cfg = SolverConfig {
            seed: rep_seed(seed, path, inst.rep),
            ..solver.clone()
        };
        let run = match method {
            Method::Pspvbi => run_pspvbi(inst.model(), &cfg),
            Method::PvbiReference => pvbi_reference(inst.model(), &cfg),
            Method::Lpspvbi => unreachable!("unrolled runs go through the trained network"),
        };
        let result = match run {
            Ok(r) if finite(&r) => Some(r),
            Ok(_) | Err(Error::NonFinite { .. }) => None,
            Err(e) => return Err(e).with_context(|| format!("repetition {}", inst.rep)),
        };
        Ok(RepOutcome { rep: inst.rep, result })
    })
}

/// Scalar error of one estimate: target distance for localization (m),
/// RMS delay error (ns) for multiband sensing, Euclidean error otherwise.
pub fn primary_error(inst: &Instance, est: &[f64]) -> f64 {
    match &inst.problem {
        Problem::Rss { .. } => ((est[0] - inst.truth[0]).powi(2) + (est[1] - inst.truth[1]).powi(2)).sqrt(),
        Problem::Multiband(m) => {
            let k = m.paths;
            let s: f64 = (0..k)
                .map(|p| (est[m.delay_index(p)] - inst.truth[m.delay_index(p)]).powi(2))
                .sum();
            (s / k as f64).sqrt()
        }
        Problem::Toy(_) => est
            .iter()
            .zip(&inst.truth)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt(),
    }
}

/// Summary statistics over finite per-repetition errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorStats {
    pub rmse: f64,
    pub median: f64,
    pub n: usize,
    pub excluded: usize,
}

pub fn error_stats(errors: &[Option<f64>]) -> ErrorStats {
    let mut v: Vec<f64> = errors.iter().flatten().copied().filter(|e| e.is_finite()).collect();
    let excluded = errors.len() - v.len();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let rmse = (v.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    let median = match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    };
    ErrorStats {
        rmse,
        median,
        n,
        excluded,
    }
}

fn outcome_errors(instances: &[Instance], runs: &[RepOutcome]) -> Vec<Option<f64>> {
    instances
        .iter()
        .zip(runs)
        .map(|(inst, r)| r.result.as_ref().map(|p| primary_error(inst, &p.mmse)))
        .collect()
}

/// Per-iteration trace records of several methods.
pub fn trace_table(instances: &[Instance], runs: &[(Method, Vec<RepOutcome>)]) -> Table {
    let mut t = Table::new(&[
        "method",
        "rep",
        "iteration",
        "variable",
        "name",
        "map",
        "mmse",
        "kl",
        "rho",
        "gamma",
    ]);
    for (method, outs) in runs {
        for (inst, o) in instances.iter().zip(outs) {
            let Some(r) = &o.result else { continue };
            for row in &r.trace {
                push_trace(&mut t, method.name(), inst, row);
            }
        }
    }
    t
}

fn push_trace(t: &mut Table, method: &str, inst: &Instance, row: &TraceRow) {
    for j in 0..row.mmse.len() {
        t.push(vec![
            method.into(),
            inst.rep.to_string(),
            row.iteration.to_string(),
            j.to_string(),
            inst.model().variable_name(j),
            fmt_f64(row.map[j]),
            fmt_f64(row.mmse[j]),
            fmt_opt(row.kl),
            fmt_f64(row.rho),
            fmt_f64(row.gamma),
        ]);
    }
}

/// Final estimates against the embedded truth; excluded runs are listed
/// with status `excluded` and empty estimates.
pub fn estimates_table(instances: &[Instance], runs: &[(Method, Vec<RepOutcome>)]) -> Table {
    let mut t = Table::new(&["method", "rep", "variable", "name", "truth", "map", "mmse", "status"]);
    for (method, outs) in runs {
        for (inst, o) in instances.iter().zip(outs) {
            for j in 0..inst.truth.len() {
                let (map, mmse, status) = match &o.result {
                    Some(r) => (fmt_f64(r.map[j]), fmt_f64(r.mmse[j]), "ok"),
                    None => (String::new(), String::new(), "excluded"),
                };
                t.push(vec![
                    method.name().into(),
                    inst.rep.to_string(),
                    j.to_string(),
                    inst.model().variable_name(j),
                    fmt_f64(inst.truth[j]),
                    map,
                    mmse,
                    status.into(),
                ]);
            }
        }
    }
    t
}

/// Per-variable RMSE over repetitions, computed from the last trace row of
/// each run. Localization adds the target position error (m).
pub fn summary_table(instances: &[Instance], runs: &[(Method, Vec<RepOutcome>)]) -> Table {
    let mut t = Table::new(&["method", "variable", "name", "rmse_mmse", "rmse_map", "n", "excluded"]);
    let Some(first) = instances.first() else { return t };
    let dim = first.truth.len();
    for (method, outs) in runs {
        let finals: Vec<(&Instance, &TraceRow)> = instances
            .iter()
            .zip(outs)
            .filter_map(|(i, o)| Some((i, o.result.as_ref()?.trace.last()?)))
            .collect();
        let n = finals.len();
        let excluded = instances.len() - n;
        let rms = |f: &dyn Fn(&Instance, &TraceRow) -> f64| {
            (finals.iter().map(|(i, r)| f(i, r)).sum::<f64>() / n as f64).sqrt()
        };
        for j in 0..dim {
            t.push(vec![
                method.name().into(),
                j.to_string(),
                first.model().variable_name(j),
                fmt_f64(rms(&|i, r| (r.mmse[j] - i.truth[j]).powi(2))),
                fmt_f64(rms(&|i, r| (r.map[j] - i.truth[j]).powi(2))),
                n.to_string(),
                excluded.to_string(),
            ]);
        }
        if matches!(first.problem, Problem::Rss { .. }) {
            let sq = |e: &[f64], i: &Instance| (e[0] - i.truth[0]).powi(2) + (e[1] - i.truth[1]).powi(2);
            t.push(vec![
                method.name().into(),
                String::new(),
                "target_position".into(),
                fmt_f64(rms(&|i, r| sq(&r.mmse, i))),
                fmt_f64(rms(&|i, r| sq(&r.map, i))),
                n.to_string(),
                excluded.to_string(),
            ]);
        }
    }
    t
}

/// Hand-tuned step sizes of the first `layers` solver iterations.
pub fn reference_params(model: &dyn Model, steps: &StepSizes, layers: usize) -> Result<LayerParams> {
    let steps = steps.resolve(model)?;
    let rows = (0..layers)
        .map(|t| steps.at(t, model))
        .collect::<pvbi::Result<Vec<_>>>()?;
    let (p, w): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(LayerParams::from_rows(p, w)?)
}

/// Unrolled network carrying the solver's fixed settings.
pub fn unrolled_net(solver: &SolverConfig, params: LayerParams, exec: Execution) -> UnfoldedNet {
    UnfoldedNet {
        schedule: solver.schedule,
        batch: solver.batch,
        weight_floor: solver.weight_floor,
        projection_tol: solver.projection_tol,
        subset_size: solver.subset_size,
        execution: exec,
        ..UnfoldedNet::new(params)
    }
}

/// Training and validation problems. Multiband instances cycle through the
/// sweep SNRs so the hypernetwork sees the range it is evaluated on.
pub fn training_sets(cfg: &ExperimentConfig, exec: Execution) -> Result<[Vec<TrainingInstance<Instance>>; 2]> {
    let base = Scenario::from_config(cfg);
    let make = |fam: u64, n: usize| -> Result<Vec<TrainingInstance<Instance>>> {
        try_map_range(exec, n, |r| -> Result<TrainingInstance<Instance>> {
            let sc = match &base {
                Scenario::Multiband(s) => {
                    let mut s = s.clone();
                    s.snr_db = cfg.sweep.snr_db[r % cfg.sweep.snr_db.len()];
                    Scenario::Multiband(s)
                }
                other => other.clone(),
            };
            let inst = sc.instance(cfg.seed, &[fam], r)?;
            Ok(TrainingInstance {
                snr_db: inst.snr_db,
                seed: rep_seed(cfg.seed, &[fam], r),
                model: inst,
            })
        })
    };
    Ok([
        make(family::TRAIN, cfg.unfold.train_instances)?,
        make(family::VALIDATION, cfg.unfold.validation_instances)?,
    ])
}

/// Trains a `layers`-layer network starting from the hand-tuned steps.
pub fn train_unrolled(
    cfg: &ExperimentConfig,
    sets: &[Vec<TrainingInstance<Instance>>; 2],
    layers: usize,
    exec: Execution,
) -> Result<TrainOutcome> {
    let [train_set, validation] = sets;
    let reference = reference_params(&train_set[0].model, &cfg.solver.steps, layers)?;
    let j0 = reference.j0;
    let net = unrolled_net(&cfg.solver, reference.clone(), exec);
    let tc = pvbi::unfolding::TrainConfig {
        particles: cfg.solver.particles,
        seed: derive_key(cfg.seed, &[purpose::TRAIN, layers as u64]),
        execution: exec,
        ..cfg.unfold.train.clone()
    };
    let hyper = match tc.mode {
        OptimizeMode::HyperNet => {
            let mut rng = stream(cfg.seed, &[purpose::HYPER_INIT, layers as u64]);
            let mut h = HyperNet::init(
                layers,
                j0,
                cfg.unfold.hidden1,
                cfg.unfold.hidden2,
                reference.to_flat(),
                &mut rng,
            )?;
            h.set_normalization(&train_set.iter().map(|t| t.snr_db).collect::<Vec<_>>());
            Some(h)
        }
        OptimizeMode::Direct => None,
    };
    Ok(train(&net, hyper, train_set, validation, &tc)?)
}

/// MMSE estimates of the trained network on `instances`, initialized like
/// the solver runs with the same `(seed, path)`.
pub fn run_unrolled(
    trained: &TrainOutcome,
    instances: &[Instance],
    particles: usize,
    seed: u64,
    path: &[u64],
    exec: Execution,
) -> Result<Vec<Option<Vec<f64>>>> {
    try_map_range(exec, instances.len(), |i| -> Result<Option<Vec<f64>>> {
        let inst = &instances[i];
        let s = rep_seed(seed, path, inst.rep);
        let params = match &trained.hypernet {
            Some(h) => h.forward(inst.snr_db)?,
            None => trained.net.params.clone(),
        };
        let mut net = trained.net.clone();
        net.params = params.masked(inst.truth.len());
        let init = VariationalState::initialize(inst.model(), particles, s)?;
        match forward_unfold(&net, inst.model(), &init, s, None) {
            Ok((out, _)) => {
                let est = out.mmse();
                Ok(est.iter().all(|x| x.is_finite()).then_some(est))
            }
            Err(Error::NonFinite { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    })
}

/// One tidy record of a sweep summary.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub sweep: &'static str,
    pub value: f64,
    pub method: &'static str,
    pub metric: &'static str,
    pub estimate: f64,
    pub n: usize,
    pub excluded: usize,
}

impl SweepRow {
    fn from_stats(sweep: &'static str, value: f64, method: &'static str, s: ErrorStats) -> [Self; 2] {
        let row = |metric, estimate| SweepRow {
            sweep,
            value,
            method,
            metric,
            estimate,
            n: s.n,
            excluded: s.excluded,
        };
        [row("rmse", s.rmse), row("median_error", s.median)]
    }
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(&["sweep", "value", "method", "metric", "estimate", "n", "excluded"]);
    for r in rows {
        t.push(vec![
            r.sweep.into(),
            fmt_f64(r.value),
            r.method.into(),
            r.metric.into(),
            fmt_f64(r.estimate),
            r.n.to_string(),
            r.excluded.to_string(),
        ]);
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sweep {
    Snr,
    Particles,
    Layers,
    PriorPrecision,
    UnfoldVsSolver,
}

impl Sweep {
    pub const ALL: [Sweep; 5] = [
        Sweep::Snr,
        Sweep::Particles,
        Sweep::Layers,
        Sweep::PriorPrecision,
        Sweep::UnfoldVsSolver,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Sweep::Snr => "snr",
            Sweep::Particles => "particles",
            Sweep::Layers => "layers",
            Sweep::PriorPrecision => "prior_precision",
            Sweep::UnfoldVsSolver => "unfold_vs_solver",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|w| w.name() == s)
    }

    /// Sweeps meaningful for a scenario.
    pub fn defaults(kind: ScenarioKind) -> Vec<Sweep> {
        match kind {
            ScenarioKind::Example1 => vec![Sweep::Layers, Sweep::PriorPrecision, Sweep::UnfoldVsSolver],
            ScenarioKind::Example2 => vec![Sweep::Snr, Sweep::Particles],
            ScenarioKind::Toy => vec![Sweep::Layers, Sweep::UnfoldVsSolver],
        }
    }

    fn code(self) -> u64 {
        self as u64
    }

    pub fn applies_to(self, kind: ScenarioKind) -> bool {
        match self {
            Sweep::Snr | Sweep::Particles => kind == ScenarioKind::Example2,
            Sweep::PriorPrecision => kind == ScenarioKind::Example1,
            Sweep::Layers | Sweep::UnfoldVsSolver => true,
        }
    }
}

/// Runs sweeps, sharing trained networks between the layer and comparison sweeps.
pub struct Evaluator<'a> {
    pub cfg: &'a ExperimentConfig,
    pub exec: Execution,
    sets: Option<[Vec<TrainingInstance<Instance>>; 2]>,
    trained: BTreeMap<usize, TrainOutcome>,
}

impl<'a> Evaluator<'a> {
    pub fn new(cfg: &'a ExperimentConfig, exec: Execution) -> Self {
        Self {
            cfg,
            exec,
            sets: None,
            trained: BTreeMap::new(),
        }
    }

    fn solver(&self) -> SolverConfig {
        SolverConfig {
            execution: self.exec,
            ..self.cfg.solver.clone()
        }
    }

    fn instances(&self, sc: &Scenario, sweep: Sweep, point: usize) -> Result<Vec<Instance>> {
        sc.instances(
            self.cfg.seed,
            &[family::SWEEP, sweep.code(), point as u64],
            self.cfg.repetitions,
            self.exec,
        )
    }

    fn solve(&self, inst: &[Instance], solver: &SolverConfig, sweep: Sweep, point: usize) -> Result<Vec<RepOutcome>> {
        solve_all(
            inst,
            solver,
            Method::Pspvbi,
            self.cfg.seed,
            &[family::SWEEP, sweep.code(), point as u64],
            self.exec,
        )
    }

    pub fn trained(&mut self, layers: usize) -> Result<&TrainOutcome> {
        if !self.trained.contains_key(&layers) {
            if self.sets.is_none() {
                self.sets = Some(training_sets(self.cfg, self.exec)?);
            }
            let sets = self.sets.as_ref().expect("training sets built");
            let out = train_unrolled(self.cfg, sets, layers, self.exec)?;
            self.trained.insert(layers, out);
        }
        Ok(&self.trained[&layers])
    }

    pub fn run(&mut self, sweep: Sweep) -> Result<Vec<SweepRow>> {
        anyhow::ensure!(
            sweep.applies_to(self.cfg.scenario),
            "sweep `{}` does not apply to {}",
            sweep.name(),
            self.cfg.scenario.name()
        );
        match sweep {
            Sweep::Snr => self.snr(),
            Sweep::Particles => self.particles(),
            Sweep::Layers => self.layers(),
            Sweep::PriorPrecision => self.prior_precision(),
            Sweep::UnfoldVsSolver => self.unfold_vs_solver(),
        }
    }

    /// Delay RMSE (ns) against SNR with the leading estimator and the
    /// Cramér-Rao bound as reference columns.
    fn snr(&mut self) -> Result<Vec<SweepRow>> {
        let mut rows = Vec::new();
        let solver = self.solver();
        for (i, &snr) in self.cfg.sweep.snr_db.iter().enumerate() {
            let sc = Scenario::Multiband(pvbi::models::MultibandScenario {
                snr_db: snr,
                ..self.cfg.example2.clone()
            });
            let inst = self.instances(&sc, Sweep::Snr, i)?;
            let runs = self.solve(&inst, &solver, Sweep::Snr, i)?;
            let [rmse, _] = SweepRow::from_stats("snr", snr, "pspvbi", error_stats(&outcome_errors(&inst, &runs)));
            rows.push(SweepRow {
                metric: "delay_rmse_ns",
                ..rmse
            });

            let centers: Vec<Option<f64>> = inst
                .iter()
                .map(|x| {
                    let c: Vec<f64> = (0..x.truth.len())
                        .map(|j| x.model().scalar_prior(j).support().center)
                        .collect();
                    Some(primary_error(x, &c))
                })
                .collect();
            let s = error_stats(&centers);
            rows.push(SweepRow {
                sweep: "snr",
                value: snr,
                method: "leading_estimator",
                metric: "delay_rmse_ns",
                estimate: s.rmse,
                n: s.n,
                excluded: s.excluded,
            });

            let draws = self.cfg.sweep.crlb_draws;
            let seed = self.cfg.seed;
            let bounds = try_map_range(self.exec, inst.len(), |r| -> Result<Option<f64>> {
                let Problem::Multiband(m) = &inst[r].problem else {
                    unreachable!()
                };
                let (k, mb) = (m.paths, m.bands());
                // the global phase and the common delay offset are fixed by
                // treating the first band's phase and sync error as known
                let vars: Vec<usize> = (0..m.dim()).filter(|&j| j != 3 * k && j != 3 * k + mb).collect();
                let crlb_seed = rep_seed(seed, &[family::SWEEP, Sweep::Snr.code(), i as u64, purpose::CRLB], r);
                match numerical_crlb(m, &inst[r].truth, Some(&vars), draws, crlb_seed) {
                    Ok(v) => {
                        let d: f64 = (0..k)
                            .map(|p| v[vars.iter().position(|&j| j == m.delay_index(p)).expect("delay kept")])
                            .sum();
                        Ok(Some((d / k as f64).sqrt()))
                    }
                    Err(Error::SingularFisher) => Ok(None),
                    Err(e) => Err(e.into()),
                }
            })?;
            let s = error_stats(&bounds);
            rows.push(SweepRow {
                sweep: "snr",
                value: snr,
                method: "crlb",
                metric: "delay_rmse_ns",
                estimate: s.rmse,
                n: s.n,
                excluded: s.excluded,
            });
        }
        Ok(rows)
    }

    /// Delay RMSE against particle count, with and without position updates.
    fn particles(&mut self) -> Result<Vec<SweepRow>> {
        let sc = Scenario::from_config(self.cfg);
        let inst = self.instances(&sc, Sweep::Particles, 0)?;
        let mut rows = Vec::new();
        for &np in &self.cfg.sweep.particles {
            for (method, positions) in [("positions", true), ("weight_only", false)] {
                let base = SolverConfig {
                    particles: np,
                    ..self.solver()
                };
                let runs = try_map_range(self.exec, inst.len(), |i| -> Result<RepOutcome> {
                    let x = &inst[i];
                    let mut cfg = base.clone();
                    if !positions {
                        cfg.steps = weight_only(&cfg.steps, x.model())?;
                    }
                    let r = solve_all(
                        std::slice::from_ref(x),
                        &cfg,
                        Method::Pspvbi,
                        self.cfg.seed,
                        &[family::SWEEP, Sweep::Particles.code(), 0],
                        Execution::Serial,
                    )?;
                    Ok(r.into_iter().next().expect("one run"))
                })?;
                let [rmse, _] = SweepRow::from_stats(
                    "particles",
                    np as f64,
                    method,
                    error_stats(&outcome_errors(&inst, &runs)),
                );
                rows.push(SweepRow {
                    metric: "delay_rmse_ns",
                    ..rmse
                });
            }
        }
        Ok(rows)
    }

    /// Trained and untrained unrolled networks of each depth.
    fn layers(&mut self) -> Result<Vec<SweepRow>> {
        let sc = Scenario::from_config(self.cfg);
        let inst = self.instances(&sc, Sweep::Layers, 0)?;
        let path = [family::SWEEP, Sweep::Layers.code(), 0];
        let mut rows = Vec::new();
        for &layers in &self.cfg.sweep.layers.clone() {
            let solver = SolverConfig {
                max_iter: layers,
                stop_tol: 0.0,
                ..self.solver()
            };
            let runs = self.solve(&inst, &solver, Sweep::Layers, 0)?;
            rows.extend(SweepRow::from_stats(
                "layers",
                layers as f64,
                "pspvbi",
                error_stats(&outcome_errors(&inst, &runs)),
            ));
            let (np, exec, seed) = (self.cfg.solver.particles, self.exec, self.cfg.seed);
            let trained = self.trained(layers)?;
            let est = run_unrolled(trained, &inst, np, seed, &path, exec)?;
            let errs: Vec<Option<f64>> = inst
                .iter()
                .zip(&est)
                .map(|(x, e)| e.as_ref().map(|e| primary_error(x, e)))
                .collect();
            rows.extend(SweepRow::from_stats(
                "layers",
                layers as f64,
                "lpspvbi",
                error_stats(&errs),
            ));
        }
        Ok(rows)
    }

    /// Localization error against the coarse-location precision.
    fn prior_precision(&mut self) -> Result<Vec<SweepRow>> {
        let mut rows = Vec::new();
        let solver = self.solver();
        for (i, &prec) in self.cfg.sweep.prior_precision.iter().enumerate() {
            let sc = Scenario::Rss(pvbi::models::RssScenario {
                prior_precision: prec,
                ..self.cfg.example1.clone()
            });
            let inst = self.instances(&sc, Sweep::PriorPrecision, i)?;
            let runs = self.solve(&inst, &solver, Sweep::PriorPrecision, i)?;
            rows.extend(SweepRow::from_stats(
                "prior_precision",
                prec,
                "pspvbi",
                error_stats(&outcome_errors(&inst, &runs)),
            ));
        }
        Ok(rows)
    }

    /// Trained network of the configured depth against the solver at
    /// `reference_iterations`, one RMSE pair per group of `trial_size`
    /// held-out instances.
    fn unfold_vs_solver(&mut self) -> Result<Vec<SweepRow>> {
        let sc = Scenario::from_config(self.cfg);
        let inst = self.instances(&sc, Sweep::UnfoldVsSolver, 0)?;
        let path = [family::SWEEP, Sweep::UnfoldVsSolver.code(), 0];
        let solver = SolverConfig {
            max_iter: self.cfg.sweep.reference_iterations,
            stop_tol: 0.0,
            ..self.solver()
        };
        let runs = self.solve(&inst, &solver, Sweep::UnfoldVsSolver, 0)?;
        let ps = outcome_errors(&inst, &runs);
        let (np, exec, seed, layers) = (
            self.cfg.solver.particles,
            self.exec,
            self.cfg.seed,
            self.cfg.unfold.layers,
        );
        let trained = self.trained(layers)?;
        let est = run_unrolled(trained, &inst, np, seed, &path, exec)?;
        let lp: Vec<Option<f64>> = inst
            .iter()
            .zip(&est)
            .map(|(x, e)| e.as_ref().map(|e| primary_error(x, e)))
            .collect();
        let size = self.cfg.sweep.trial_size;
        let mut rows = Vec::new();
        for (trial, (a, b)) in lp.chunks(size).zip(ps.chunks(size)).enumerate() {
            if a.len() < size {
                break;
            }
            let [r, _] = SweepRow::from_stats("unfold_vs_solver", trial as f64, "lpspvbi", error_stats(a));
            rows.push(r);
            let [r, _] = SweepRow::from_stats("unfold_vs_solver", trial as f64, "pspvbi", error_stats(b));
            rows.push(r);
        }
        Ok(rows)
    }
}

/// Step sizes with every position step set to zero.
pub fn weight_only(steps: &StepSizes, model: &dyn Model) -> Result<StepSizes> {
    let jd = model.dim();
    Ok(match steps.resolve(model)? {
        StepSizes::Default { weight, .. } => StepSizes::PerVariable {
            position: vec![0.0; jd],
            weight: vec![weight; jd],
            decay: 0.0,
        },
        StepSizes::PerVariable { weight, .. } => StepSizes::PerVariable {
            position: vec![0.0; jd],
            weight,
            decay: 0.0,
        },
        StepSizes::Layered { position, weight } => StepSizes::Layered {
            position: position.iter().map(|r| vec![0.0; r.len()]).collect(),
            weight,
        },
        StepSizes::Curvature { .. } => unreachable!("resolved above"),
    })
}

/// Looks up a sweep record.
pub fn find(rows: &[SweepRow], value: f64, method: &str, metric: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.value == value && r.method == method && r.metric == metric)
        .map(|r| r.estimate)
}
