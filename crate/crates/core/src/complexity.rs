//! FLOP-order formulas of the compared estimators and their typical values.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    /// `T·J·Np⁴·F_LH`.
    PvbiQuartic,
    /// `T·J·Np^J·F_LH`.
    PvbiJoint,
    Pass,
    Pspvbi,
    Lpspvbi,
    Blackbox,
    WrMusic,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::PvbiQuartic | Algorithm::PvbiJoint => "PVBI",
            Algorithm::Pass => "PASS",
            Algorithm::Pspvbi => "PSPVBI",
            Algorithm::Lpspvbi => "LPSPVBI",
            Algorithm::Blackbox => "Blackbox",
            Algorithm::WrMusic => "WR-MUSIC",
        }
    }

    pub fn formula(self, t: &str) -> String {
        match self {
            Algorithm::PvbiQuartic => format!("{t}*J*Np^4*F_LH"),
            Algorithm::PvbiJoint => format!("{t}*J*Np^J*F_LH"),
            Algorithm::Pass => format!("{t}*N_R*N_S*N_D*N_M*F_belief"),
            Algorithm::Pspvbi | Algorithm::Lpspvbi => format!("{t}*2J*(Np*B*F_grad+Np^3)"),
            Algorithm::Blackbox => "sum_i L_i*L_(i+1)".into(),
            Algorithm::WrMusic => "M*N_m^3+M*(2N_m-2)^3".into(),
        }
    }
}

/// One formula instance: the algorithm, which parameter holds its
/// iteration count, and the parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexitySpec {
    pub algorithm: Algorithm,
    pub iterations: String,
    pub params: BTreeMap<String, f64>,
}

impl ComplexitySpec {
    fn get(&self, key: &str) -> Result<f64> {
        self.params
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingParameter(key.to_string()))
    }
}

/// Evaluates the order expression literally.
pub fn flops(spec: &ComplexitySpec) -> Result<f64> {
    let p = |k: &str| spec.get(k);
    let t = || p(&spec.iterations);
    let v = match spec.algorithm {
        Algorithm::PvbiQuartic => t()? * p("J")? * p("Np")?.powi(4) * p("F_LH")?,
        Algorithm::PvbiJoint => t()? * p("J")? * p("Np")?.powf(p("J")?) * p("F_LH")?,
        Algorithm::Pass => t()? * p("N_R")? * p("N_S")? * p("N_D")? * p("N_M")? * p("F_belief")?,
        Algorithm::Pspvbi | Algorithm::Lpspvbi => {
            let np = p("Np")?;
            t()? * 2.0 * p("J")? * (np * p("B")? * p("F_grad")? + np.powi(3))
        }
        Algorithm::Blackbox => {
            let layers: Vec<f64> = (0..10)
                .filter_map(|i| spec.params.get(&format!("L{i}")).copied())
                .collect();
            if layers.len() < 2 {
                return Err(Error::MissingParameter("L_i (at least two layers)".into()));
            }
            layers.windows(2).map(|w| w[0] * w[1]).sum()
        }
        Algorithm::WrMusic => {
            let (m, n) = (p("M")?, p("N_m")?);
            m * n.powi(3) + m * (2.0 * n - 2.0).powi(3)
        }
    };
    if spec.params.values().any(|x| !(*x > 0.0)) {
        return Err(Error::Config("complexity parameters must be positive".into()));
    }
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub algorithm: String,
    pub formula: String,
    pub flops: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityTable {
    pub example: u8,
    pub rows: Vec<TableRow>,
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Built-in parameter presets: localization (1) and multiband sensing (2).
pub fn presets(example: u8) -> Result<Vec<ComplexitySpec>> {
    let spec = |algorithm, iterations: &str, p: &BTreeMap<String, f64>| ComplexitySpec {
        algorithm,
        iterations: iterations.into(),
        params: p.clone(),
    };
    match example {
        1 => {
            let p = params(&[
                ("T1", 3.0),
                ("J", 2.0),
                ("Np", 10.0),
                ("F_LH", 60.0),
                ("T2", 35.0),
                ("N_R", 6.0),
                ("N_S", 20.0),
                ("N_D", 6.0),
                ("N_M", 5.0),
                ("F_belief", 10.0),
                ("T3", 25.0),
                ("B", 20.0),
                ("F_grad", 36.0),
                ("T4", 7.0),
            ]);
            let bb = params(&[("L1", 22.0), ("L2", 512.0), ("L3", 512.0), ("L4", 2.0)]);
            Ok(vec![
                spec(Algorithm::PvbiQuartic, "T1", &p),
                spec(Algorithm::Pass, "T2", &p),
                spec(Algorithm::Pspvbi, "T3", &p),
                spec(Algorithm::Blackbox, "", &bb),
                spec(Algorithm::Lpspvbi, "T4", &p),
            ])
        }
        2 => {
            let p = params(&[
                ("M", 2.0),
                ("N_m", 256.0),
                ("T1", 3.0),
                ("J", 9.0),
                ("Np", 10.0),
                ("F_LH", 5000.0),
                ("Omega", 64.0),
                ("T2", 35.0),
                ("T3", 7.0),
                ("B", 10.0),
                ("F_grad", 4500.0),
            ]);
            let bb = params(&[
                ("L0", 1028.0),
                ("L1", 3072.0),
                ("L2", 4096.0),
                ("L3", 2048.0),
                ("L4", 256.0),
                ("L5", 2.0),
            ]);
            Ok(vec![
                spec(Algorithm::PvbiJoint, "T1", &p),
                spec(Algorithm::WrMusic, "", &p),
                spec(Algorithm::Pspvbi, "T2", &p),
                spec(Algorithm::Lpspvbi, "T3", &p),
                spec(Algorithm::Blackbox, "", &bb),
            ])
        }
        e => Err(Error::Config(format!("unknown example {e}"))),
    }
}

pub fn table_report(example: u8) -> Result<ComplexityTable> {
    let rows = presets(example)?
        .iter()
        .map(|s| {
            Ok(TableRow {
                algorithm: s.algorithm.label().into(),
                formula: s.algorithm.formula(&s.iterations),
                flops: flops(s)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ComplexityTable { example, rows })
}

/// Rounds to `digits` significant figures.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let e = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - e);
    (x * scale).round() / scale
}

impl ComplexityTable {
    /// Aligned text with values to three significant figures.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let wa = self.rows.iter().map(|r| r.algorithm.len()).max().unwrap_or(0).max(9);
        let wf = self.rows.iter().map(|r| r.formula.len()).max().unwrap_or(0).max(7);
        let _ = writeln!(s, "Example {}", self.example);
        let _ = writeln!(s, "{:<wa$}  {:<wf$}  {:>9}", "Algorithm", "Formula", "FLOPs");
        for r in &self.rows {
            let _ = writeln!(s, "{:<wa$}  {:<wf$}  {:>9.2e}", r.algorithm, r.formula, r.flops);
        }
        s
    }
}
