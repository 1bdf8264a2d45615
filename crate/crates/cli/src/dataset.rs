//! Synthetic datasets with embedded truth, their flat-record files and loaders.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use num_complex::Complex64;
use pvbi::exec::{try_map_range, Execution};
use pvbi::models::{
    LinearGaussianModel, Model, MultibandModel, MultibandScenario, ObsSubset, RssDataset, RssLocalizationModel,
    RssReference, RssScenario, ToyScenario,
};
use pvbi::particles::{BoxPrior, GaussianPrior, ScalarPrior};
use pvbi::rng::{purpose, stream};

use crate::config::{ExperimentConfig, ScenarioKind};
use crate::io::{cell, fmt_f64, OutputDir, Table};

/// Stream-path tags separating instance families under one master seed.
pub mod family {
    /// Held-out (test) instances written by `generate`.
    pub const TEST: u64 = 0;
    pub const TRAIN: u64 = 1;
    pub const VALIDATION: u64 = 2;
    pub const SWEEP: u64 = 3;
}

#[derive(Clone, Debug)]
pub enum Problem {
    Rss {
        data: RssDataset,
        model: RssLocalizationModel,
    },
    Multiband(MultibandModel),
    Toy(LinearGaussianModel),
}

/// One repetition: a model with its observations and the true parameters.
#[derive(Clone, Debug)]
pub struct Instance {
    pub rep: usize,
    pub snr_db: f64,
    pub truth: Vec<f64>,
    pub problem: Problem,
}

impl Instance {
    pub fn model(&self) -> &dyn Model {
        match &self.problem {
            Problem::Rss { model, .. } => model,
            Problem::Multiband(m) => m,
            Problem::Toy(m) => m,
        }
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match &$self.problem {
            Problem::Rss { model: $m, .. } => $e,
            Problem::Multiband($m) => $e,
            Problem::Toy($m) => $e,
        }
    };
}

impl Model for Instance {
    fn dim(&self) -> usize {
        delegate!(self, m => m.dim())
    }

    fn n_obs(&self) -> usize {
        delegate!(self, m => m.n_obs())
    }

    fn scalar_prior(&self, j: usize) -> ScalarPrior {
        delegate!(self, m => m.scalar_prior(j))
    }

    fn bounds(&self, j: usize) -> (f64, f64) {
        delegate!(self, m => m.bounds(j))
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        delegate!(self, m => m.log_prior(theta))
    }

    fn d_log_prior(&self, j: usize, theta: &[f64]) -> f64 {
        delegate!(self, m => m.d_log_prior(j, theta))
    }

    fn hess_row_log_prior(&self, j: usize, theta: &[f64], out: &mut [f64]) {
        delegate!(self, m => m.hess_row_log_prior(j, theta, out))
    }

    fn log_likelihood_obs(&self, theta: &[f64], n: usize) -> f64 {
        delegate!(self, m => m.log_likelihood_obs(theta, n))
    }

    fn log_likelihood(&self, theta: &[f64], subset: &ObsSubset) -> f64 {
        delegate!(self, m => m.log_likelihood(theta, subset))
    }

    fn grad_log_likelihood(&self, theta: &[f64], subset: &ObsSubset, out: &mut [f64]) {
        delegate!(self, m => m.grad_log_likelihood(theta, subset, out))
    }

    fn d_log_likelihood(&self, j: usize, theta: &[f64], subset: &ObsSubset) -> f64 {
        delegate!(self, m => m.d_log_likelihood(j, theta, subset))
    }

    fn hess_row_log_likelihood(&self, j: usize, theta: &[f64], subset: &ObsSubset, out: &mut [f64]) {
        delegate!(self, m => m.hess_row_log_likelihood(j, theta, subset, out))
    }

    fn eval_along(
        &self,
        j: usize,
        theta: &[f64],
        values: &[f64],
        subset: &ObsSubset,
        log_joint: &mut [f64],
        d_log_joint: &mut [f64],
    ) {
        delegate!(self, m => m.eval_along(j, theta, values, subset, log_joint, d_log_joint))
    }

    fn information_diagonal(&self, theta: &[f64]) -> Vec<f64> {
        delegate!(self, m => m.information_diagonal(theta))
    }

    fn variable_name(&self, j: usize) -> String {
        delegate!(self, m => m.variable_name(j))
    }
}

/// Scenario parameters shared by every instance of a family.
#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    Rss(RssScenario),
    Multiband(MultibandScenario),
    Toy(ToyScenario),
}

impl Scenario {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        match cfg.scenario {
            ScenarioKind::Example1 => Scenario::Rss(cfg.example1.clone()),
            ScenarioKind::Example2 => Scenario::Multiband(cfg.example2.clone()),
            ScenarioKind::Toy => Scenario::Toy(cfg.toy.clone()),
        }
    }

    /// Signal-to-noise figure fed to the hypernetwork: the configured SNR
    /// for multiband sensing, the measurement precision in dB otherwise.
    pub fn snr_db(&self) -> f64 {
        match self {
            Scenario::Multiband(s) => s.snr_db,
            Scenario::Rss(s) => -10.0 * s.noise_variance.log10(),
            Scenario::Toy(s) => 20.0 * (s.prior_sd / s.noise_sd).log10(),
        }
    }

    /// Repetition `rep` of the family addressed by `path`.
    pub fn instance(&self, seed: u64, path: &[u64], rep: usize) -> Result<Instance> {
        let mut key = vec![purpose::DATA];
        key.extend_from_slice(path);
        key.push(rep as u64);
        let mut rng = stream(seed, &key);
        let snr_db = self.snr_db();
        Ok(match self {
            Scenario::Rss(s) => {
                let data = s.generate(&mut rng)?;
                let model = s.build(&data)?;
                let truth = model.truth_vector(&data);
                Instance {
                    rep,
                    snr_db,
                    truth,
                    problem: Problem::Rss { data, model },
                }
            }
            Scenario::Multiband(s) => {
                let draw = s.generate(&mut rng, false)?;
                Instance {
                    rep,
                    snr_db,
                    truth: draw.truth,
                    problem: Problem::Multiband(draw.model),
                }
            }
            Scenario::Toy(s) => {
                let (truth, model) = s.generate(&mut rng)?;
                Instance {
                    rep,
                    snr_db,
                    truth,
                    problem: Problem::Toy(model),
                }
            }
        })
    }

    /// Repetitions `0..reps` of a family, generated concurrently.
    pub fn instances(&self, seed: u64, path: &[u64], reps: usize, exec: Execution) -> Result<Vec<Instance>> {
        try_map_range(exec, reps, |r| self.instance(seed, path, r))
    }
}

/// File names written by [`write_dataset`] for a scenario.
pub fn dataset_files(kind: ScenarioKind) -> &'static [&'static str] {
    match kind {
        ScenarioKind::Example1 => &["dataset.csv"],
        ScenarioKind::Example2 => &["instances.csv", "variables.csv", "observations.csv"],
        ScenarioKind::Toy => &["instances.csv", "variables.csv", "observations.csv", "design.csv"],
    }
}

pub fn write_dataset(out: &mut OutputDir, kind: ScenarioKind, instances: &[Instance]) -> Result<()> {
    let tables = dataset_tables(kind, instances)?;
    for (name, t) in dataset_files(kind).iter().zip(&tables) {
        out.write_table(name, t)?;
    }
    Ok(())
}

/// Flat-record tables in the order of [`dataset_files`].
pub fn dataset_tables(kind: ScenarioKind, instances: &[Instance]) -> Result<Vec<Table>> {
    match kind {
        ScenarioKind::Example1 => {
            let mut t = Table::new(&[
                "rep", "node", "role", "truth_x", "truth_y", "coarse_x", "coarse_y", "rss",
            ]);
            for inst in instances {
                let Problem::Rss { data, .. } = &inst.problem else {
                    bail!("expected a localization instance");
                };
                let rep = inst.rep.to_string();
                t.push(vec![
                    rep.clone(),
                    "0".into(),
                    "target".into(),
                    fmt_f64(data.target_truth[0]),
                    fmt_f64(data.target_truth[1]),
                    fmt_f64(data.target_coarse[0]),
                    fmt_f64(data.target_coarse[1]),
                    String::new(),
                ]);
                for (i, r) in data.references.iter().enumerate() {
                    t.push(vec![
                        rep.clone(),
                        (i + 1).to_string(),
                        "reference".into(),
                        fmt_f64(r.truth[0]),
                        fmt_f64(r.truth[1]),
                        fmt_f64(r.coarse[0]),
                        fmt_f64(r.coarse[1]),
                        fmt_f64(r.rss),
                    ]);
                }
            }
            Ok(vec![t])
        }
        ScenarioKind::Example2 => {
            let mut inst_t = Table::new(&["rep", "snr_db", "noise_var"]);
            let mut obs = Table::new(&["rep", "band", "subcarrier", "re", "im"]);
            let mut vars = variables_table();
            for inst in instances {
                let Problem::Multiband(m) = &inst.problem else {
                    bail!("expected a multiband instance");
                };
                let rep = inst.rep.to_string();
                inst_t.push(vec![rep.clone(), fmt_f64(inst.snr_db), fmt_f64(m.noise_var)]);
                for (o, z) in m.observations.iter().enumerate() {
                    obs.push(vec![
                        rep.clone(),
                        (o / m.subcarriers).to_string(),
                        (o % m.subcarriers).to_string(),
                        fmt_f64(z.re),
                        fmt_f64(z.im),
                    ]);
                }
                push_variables(&mut vars, inst, &m.priors);
            }
            Ok(vec![inst_t, vars, obs])
        }
        ScenarioKind::Toy => {
            let mut inst_t = Table::new(&["rep", "snr_db", "noise_precision"]);
            let mut obs = Table::new(&["rep", "obs", "y"]);
            let mut design = Table::new(&["rep", "obs", "var", "coef"]);
            let mut vars = variables_table();
            for inst in instances {
                let Problem::Toy(m) = &inst.problem else {
                    bail!("expected a toy instance");
                };
                let rep = inst.rep.to_string();
                inst_t.push(vec![rep.clone(), fmt_f64(inst.snr_db), fmt_f64(m.noise_precision)]);
                for (n, (y, h)) in m.observations.iter().zip(&m.design).enumerate() {
                    obs.push(vec![rep.clone(), n.to_string(), fmt_f64(*y)]);
                    for (k, c) in h.iter().enumerate() {
                        design.push(vec![rep.clone(), n.to_string(), k.to_string(), fmt_f64(*c)]);
                    }
                }
                let priors: Vec<ScalarPrior> = m
                    .priors
                    .iter()
                    .zip(&m.supports)
                    .map(|(p, s)| ScalarPrior::Gaussian { prior: *p, support: *s })
                    .collect();
                push_variables(&mut vars, inst, &priors);
            }
            Ok(vec![inst_t, vars, obs, design])
        }
    }
}

fn variables_table() -> Table {
    Table::new(&[
        "rep",
        "index",
        "name",
        "truth",
        "kind",
        "center",
        "width",
        "mean",
        "precision",
    ])
}

fn push_variables(t: &mut Table, inst: &Instance, priors: &[ScalarPrior]) {
    for (j, p) in priors.iter().enumerate() {
        let s = p.support();
        let (kind, mean, prec) = match p {
            ScalarPrior::Box(_) => ("box", String::new(), String::new()),
            ScalarPrior::Gaussian { prior, .. } => ("gaussian", fmt_f64(prior.mean), fmt_f64(prior.precision)),
        };
        t.push(vec![
            inst.rep.to_string(),
            j.to_string(),
            inst.model().variable_name(j),
            fmt_f64(inst.truth[j]),
            kind.into(),
            fmt_f64(s.center),
            fmt_f64(s.width),
            mean,
            prec,
        ]);
    }
}

/// Rows of `t` grouped by their `rep` column, in ascending order.
fn by_rep(t: &Table) -> Result<BTreeMap<usize, Vec<&Vec<String>>>> {
    let c = t.column("rep")?;
    let mut m: BTreeMap<usize, Vec<&Vec<String>>> = BTreeMap::new();
    for r in &t.rows {
        m.entry(cell(r, c)?).or_default().push(r);
    }
    Ok(m)
}

/// Per-repetition truth and priors.
type Variables = BTreeMap<usize, (Vec<f64>, Vec<ScalarPrior>)>;

fn read_variables(t: &Table) -> Result<Variables> {
    let cols: Vec<usize> = ["index", "truth", "kind", "center", "width", "mean", "precision"]
        .iter()
        .map(|n| t.column(n))
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for (rep, mut rows) in by_rep(t)? {
        rows.sort_by_key(|r| r[cols[0]].parse::<usize>().unwrap_or(usize::MAX));
        let mut truth = Vec::new();
        let mut priors = Vec::new();
        for r in rows {
            truth.push(cell(r, cols[1])?);
            let support = BoxPrior::new(cell(r, cols[3])?, cell(r, cols[4])?)?;
            priors.push(match r[cols[2]].as_str() {
                "box" => ScalarPrior::Box(support),
                "gaussian" => ScalarPrior::Gaussian {
                    prior: GaussianPrior::new(cell(r, cols[5])?, cell(r, cols[6])?)?,
                    support,
                },
                k => bail!("unknown prior kind `{k}`"),
            });
        }
        out.insert(rep, (truth, priors));
    }
    Ok(out)
}

/// Reads a dataset written by [`write_dataset`]. Scenario parameters not
/// stored in the files (band layout, path-loss constants) come from `cfg`.
pub fn load_dataset(dir: &Path, cfg: &ExperimentConfig) -> Result<Vec<Instance>> {
    let kind = cfg.scenario;
    let tables = dataset_files(kind)
        .iter()
        .map(|n| {
            let p = dir.join(n);
            if !p.exists() {
                bail!("missing dataset file {}; run `generate` first", p.display());
            }
            Table::read(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    match kind {
        ScenarioKind::Example1 => load_rss(&tables[0], &cfg.example1),
        ScenarioKind::Example2 => load_multiband(&tables, &cfg.example2),
        ScenarioKind::Toy => load_toy(&tables),
    }
}

fn load_rss(t: &Table, sc: &RssScenario) -> Result<Vec<Instance>> {
    let cols: Vec<usize> = ["node", "role", "truth_x", "truth_y", "coarse_x", "coarse_y", "rss"]
        .iter()
        .map(|n| t.column(n))
        .collect::<Result<_>>()?;
    let snr_db = Scenario::Rss(sc.clone()).snr_db();
    let mut out = Vec::new();
    for (rep, mut rows) in by_rep(t)? {
        rows.sort_by_key(|r| r[cols[0]].parse::<usize>().unwrap_or(usize::MAX));
        let xy =
            |r: &Vec<String>, a: usize, b: usize| -> Result<[f64; 2]> { Ok([cell(r, cols[a])?, cell(r, cols[b])?]) };
        let (target, refs) = rows.split_first().context("empty repetition")?;
        if target[cols[1]] != "target" {
            bail!("repetition {rep}: first node must be the target");
        }
        let data = RssDataset {
            target_truth: xy(target, 2, 3)?,
            target_coarse: xy(target, 4, 5)?,
            references: refs
                .iter()
                .map(|r| {
                    Ok(RssReference {
                        truth: xy(r, 2, 3)?,
                        coarse: xy(r, 4, 5)?,
                        rss: cell(r, cols[6])?,
                    })
                })
                .collect::<Result<_>>()?,
        };
        let sc = RssScenario {
            n_references: data.references.len(),
            ..sc.clone()
        };
        let model = sc.build(&data)?;
        out.push(Instance {
            rep,
            snr_db,
            truth: model.truth_vector(&data),
            problem: Problem::Rss { data, model },
        });
    }
    Ok(out)
}

fn load_multiband(t: &[Table], sc: &MultibandScenario) -> Result<Vec<Instance>> {
    let (inst_t, vars, obs) = (&t[0], &t[1], &t[2]);
    let vars = read_variables(vars)?;
    let obs_rows = by_rep(obs)?;
    let (cb, cs, cre, cim) = (
        obs.column("band")?,
        obs.column("subcarrier")?,
        obs.column("re")?,
        obs.column("im")?,
    );
    let (csnr, cnv) = (inst_t.column("snr_db")?, inst_t.column("noise_var")?);
    let mb = sc.band_start_hz.len();
    let mut out = Vec::new();
    for (rep, rows) in by_rep(inst_t)? {
        let r = rows[0];
        let (truth, priors) = vars
            .get(&rep)
            .cloned()
            .with_context(|| format!("no variables for rep {rep}"))?;
        let mut z = vec![Complex64::new(f64::NAN, f64::NAN); mb * sc.subcarriers];
        for o in obs_rows.get(&rep).map(Vec::as_slice).unwrap_or_default() {
            let (b, s): (usize, usize) = (cell(o, cb)?, cell(o, cs)?);
            if b >= mb || s >= sc.subcarriers {
                bail!("observation ({b}, {s}) outside the configured band layout");
            }
            z[b * sc.subcarriers + s] = Complex64::new(cell(o, cre)?, cell(o, cim)?);
        }
        if z.iter().any(|v| v.re.is_nan()) {
            bail!("repetition {rep}: incomplete observations");
        }
        let model = MultibandModel::new(
            sc.band_start_hz.clone(),
            vec![sc.spacing_hz; mb],
            sc.subcarriers,
            sc.paths(),
            cell(r, cnv)?,
            z,
            priors,
        )?;
        out.push(Instance {
            rep,
            snr_db: cell(r, csnr)?,
            truth,
            problem: Problem::Multiband(model),
        });
    }
    Ok(out)
}

fn load_toy(t: &[Table]) -> Result<Vec<Instance>> {
    let (inst_t, vars, obs, design) = (&t[0], &t[1], &t[2], &t[3]);
    let vars = read_variables(vars)?;
    let obs_rows = by_rep(obs)?;
    let design_rows = by_rep(design)?;
    let (cn, cy) = (obs.column("obs")?, obs.column("y")?);
    let (dn, dk, dc) = (design.column("obs")?, design.column("var")?, design.column("coef")?);
    let (csnr, cnp) = (inst_t.column("snr_db")?, inst_t.column("noise_precision")?);
    let mut out = Vec::new();
    for (rep, rows) in by_rep(inst_t)? {
        let r = rows[0];
        let (truth, priors) = vars
            .get(&rep)
            .cloned()
            .with_context(|| format!("no variables for rep {rep}"))?;
        let d = truth.len();
        let o = obs_rows.get(&rep).map(Vec::as_slice).unwrap_or_default();
        let mut y = vec![0.0; o.len()];
        for row in o {
            let n: usize = cell(row, cn)?;
            *y.get_mut(n).context("observation index out of range")? = cell(row, cy)?;
        }
        let mut h = vec![vec![0.0; d]; y.len()];
        for row in design_rows.get(&rep).map(Vec::as_slice).unwrap_or_default() {
            let (n, k): (usize, usize) = (cell(row, dn)?, cell(row, dk)?);
            *h.get_mut(n)
                .and_then(|v| v.get_mut(k))
                .context("design index out of range")? = cell(row, dc)?;
        }
        let (gp, sup): (Vec<GaussianPrior>, Vec<BoxPrior>) = priors
            .iter()
            .map(|p| match *p {
                ScalarPrior::Gaussian { prior, support } => Ok((prior, support)),
                ScalarPrior::Box(_) => bail!("toy variables need Gaussian priors"),
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let model = LinearGaussianModel::new(gp, sup, h, y, cell(r, cnp)?)?;
        out.push(Instance {
            rep,
            snr_db: cell(r, csnr)?,
            truth,
            problem: Problem::Toy(model),
        });
    }
    Ok(out)
}
