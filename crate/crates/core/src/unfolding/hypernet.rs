//! Three-layer ReLU hypernetwork mapping SNR to the per-layer step sizes,
//! and the Adam optimizer used to train it.

use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LayerParams;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Floor added to the softplus output.
pub const STEP_FLOOR: f64 = 1e-6;

const FORMAT_TAG: &str = "pvbi-hypernet";
const FORMAT_VERSION: u32 = 1;

/// `Γ = ref ⊙ (softplus(W3·ReLU(W2·ReLU(W1·x + b1) + b2) + b3) + floor)`
/// with `x` the SNR in dB standardized by `snr_mean`, `snr_std`.
/// Matrices are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperNet {
    pub layers: usize,
    pub j0: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
    /// Per-output scale, in the flat layout of [`LayerParams::to_flat`].
    pub reference: Vec<f64>,
    pub snr_mean: f64,
    pub snr_std: f64,
}

/// Gradients in the same shapes as the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperNetGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperActivations {
    x: f64,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    raw: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl HyperNet {
    /// All weights and biases zero; outputs `reference·(ln 2 + floor)`.
    pub fn zeros(layers: usize, j0: usize, hidden1: usize, hidden2: usize, reference: Vec<f64>) -> Result<Self> {
        let out = 2 * layers * j0;
        if layers == 0 || j0 == 0 || hidden1 == 0 || hidden2 == 0 {
            return Err(Error::Config("hypernetwork sizes must be positive".into()));
        }
        if reference.len() != out || reference.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config(format!("need {out} positive reference step sizes")));
        }
        Ok(Self {
            layers,
            j0,
            hidden1,
            hidden2,
            w1: vec![0.0; hidden1],
            b1: vec![0.0; hidden1],
            w2: vec![0.0; hidden2 * hidden1],
            b2: vec![0.0; hidden2],
            w3: vec![0.0; out * hidden2],
            b3: vec![0.0; out],
            reference,
            snr_mean: 0.0,
            snr_std: 1.0,
        })
    }

    /// He-initialized hidden layers, a small output layer, and an output
    /// bias at `softplus⁻¹(1)` so the initial steps equal `reference`.
    pub fn init(
        layers: usize,
        j0: usize,
        hidden1: usize,
        hidden2: usize,
        reference: Vec<f64>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut h = Self::zeros(layers, j0, hidden1, hidden2, reference)?;
        let he1 = Normal::new(0.0, 2f64.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
        let he2 = Normal::new(0.0, (2.0 / hidden1 as f64).sqrt()).map_err(|e| Error::Config(e.to_string()))?;
        let small = Normal::new(0.0, 0.01 / (hidden2 as f64).sqrt()).map_err(|e| Error::Config(e.to_string()))?;
        h.w1.iter_mut().for_each(|w| *w = he1.sample(rng));
        h.b1.iter_mut().for_each(|b| *b = 0.1);
        h.w2.iter_mut().for_each(|w| *w = he2.sample(rng));
        h.b2.iter_mut().for_each(|b| *b = 0.1);
        h.w3.iter_mut().for_each(|w| *w = small.sample(rng));
        let inv_one = (1f64.exp() - 1.0).ln();
        h.b3.iter_mut().for_each(|b| *b = inv_one);
        Ok(h)
    }

    pub fn outputs(&self) -> usize {
        2 * self.layers * self.j0
    }

    pub fn set_normalization(&mut self, snrs_db: &[f64]) {
        if snrs_db.is_empty() {
            return;
        }
        let n = snrs_db.len() as f64;
        let mean = snrs_db.iter().sum::<f64>() / n;
        let var = snrs_db.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        self.snr_mean = mean;
        self.snr_std = if var > 0.0 { var.sqrt() } else { 1.0 };
    }

    pub fn forward_raw(&self, snr_db: f64) -> HyperActivations {
        let x = (snr_db - self.snr_mean) / self.snr_std;
        let z1: Vec<f64> = (0..self.hidden1).map(|i| self.w1[i] * x + self.b1[i]).collect();
        let a1: Vec<f64> = z1.iter().map(|z| z.max(0.0)).collect();
        let z2: Vec<f64> = (0..self.hidden2)
            .map(|r| {
                self.b2[r]
                    + self.w2[r * self.hidden1..(r + 1) * self.hidden1]
                        .iter()
                        .zip(&a1)
                        .map(|(w, a)| w * a)
                        .sum::<f64>()
            })
            .collect();
        let a2: Vec<f64> = z2.iter().map(|z| z.max(0.0)).collect();
        let raw: Vec<f64> = (0..self.outputs())
            .map(|r| {
                self.b3[r]
                    + self.w3[r * self.hidden2..(r + 1) * self.hidden2]
                        .iter()
                        .zip(&a2)
                        .map(|(w, a)| w * a)
                        .sum::<f64>()
            })
            .collect();
        HyperActivations { x, z1, a1, z2, a2, raw }
    }

    /// Step sizes in flat layout.
    pub fn steps(&self, act: &HyperActivations) -> Vec<f64> {
        act.raw
            .iter()
            .zip(&self.reference)
            .map(|(r, s)| s * (softplus(*r) + STEP_FLOOR))
            .collect()
    }

    pub fn forward(&self, snr_db: f64) -> Result<LayerParams> {
        let act = self.forward_raw(snr_db);
        let v = self.steps(&act);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                iteration: 0,
                what: "hypernetwork output".into(),
            });
        }
        LayerParams::from_flat(self.layers, self.j0, &v)
    }

    /// Reverse-mode differential: maps the adjoint of the flat step sizes
    /// to adjoints of all weights and biases.
    pub fn backward(&self, act: &HyperActivations, upstream: &[f64]) -> HyperNetGrad {
        let (h1, h2) = (self.hidden1, self.hidden2);
        let d_raw: Vec<f64> = upstream
            .iter()
            .zip(&act.raw)
            .zip(&self.reference)
            .map(|((u, r), s)| u * s * sigmoid(*r))
            .collect();
        let mut w3 = vec![0.0; self.w3.len()];
        let mut d_a2 = vec![0.0; h2];
        for (r, &d) in d_raw.iter().enumerate() {
            for c in 0..h2 {
                w3[r * h2 + c] = d * act.a2[c];
                d_a2[c] += d * self.w3[r * h2 + c];
            }
        }
        let d_z2: Vec<f64> = d_a2
            .iter()
            .zip(&act.z2)
            .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
            .collect();
        let mut w2 = vec![0.0; self.w2.len()];
        let mut d_a1 = vec![0.0; h1];
        for (r, &d) in d_z2.iter().enumerate() {
            for c in 0..h1 {
                w2[r * h1 + c] = d * act.a1[c];
                d_a1[c] += d * self.w2[r * h1 + c];
            }
        }
        let d_z1: Vec<f64> = d_a1
            .iter()
            .zip(&act.z1)
            .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
            .collect();
        HyperNetGrad {
            w1: d_z1.iter().map(|d| d * act.x).collect(),
            b1: d_z1,
            w2,
            b2: d_z2,
            w3,
            b3: d_raw,
        }
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + self.b3.len()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_params() {
            return Err(Error::Config("parameter vector length mismatch".into()));
        }
        let mut off = 0;
        for dst in [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ] {
            let n = dst.len();
            dst.copy_from_slice(&v[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Versioned text record: header, sizes, normalization, then one
    /// labelled line per array in row-major order.
    pub fn to_text(&self, raw_params: Option<&LayerParams>) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_TAG} {FORMAT_VERSION}");
        let _ = writeln!(s, "sizes {} {} {} {}", self.layers, self.j0, self.hidden1, self.hidden2);
        let _ = writeln!(s, "snr {:.17e} {:.17e}", self.snr_mean, self.snr_std);
        let arrays: [(&str, &Vec<f64>); 7] = [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("w3", &self.w3),
            ("b3", &self.b3),
            ("reference", &self.reference),
        ];
        for (name, v) in arrays {
            write_array(&mut s, name, v);
        }
        if let Some(p) = raw_params {
            write_array(&mut s, "layer_params", &p.to_flat());
        }
        s
    }

    /// Parses [`HyperNet::to_text`]; returns the raw layer parameters when present.
    pub fn from_text(text: &str) -> Result<(Self, Option<LayerParams>)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = |m: &str| Error::Parse(m.to_string());
        let header = lines.next().ok_or_else(|| bad("empty record"))?;
        let mut h = header.split_whitespace();
        if h.next() != Some(FORMAT_TAG) {
            return Err(bad("not a hypernetwork record"));
        }
        let version: u32 = h
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing version"))?;
        if version != FORMAT_VERSION {
            return Err(Error::Parse(format!("unsupported version {version}")));
        }
        let sizes = fields(lines.next(), "sizes")?;
        let [layers, j0, h1, h2]: [usize; 4] = sizes
            .iter()
            .map(|v| v.parse::<usize>().map_err(|e| Error::Parse(e.to_string())))
            .collect::<Result<Vec<_>>>()?
            .try_into()
            .map_err(|_| bad("sizes needs four entries"))?;
        let snr = parse_floats(&fields(lines.next(), "snr")?)?;
        if snr.len() != 2 {
            return Err(bad("snr needs two entries"));
        }
        let mut net = Self::zeros(layers, j0, h1, h2, vec![1.0; 2 * layers * j0])?;
        net.snr_mean = snr[0];
        net.snr_std = snr[1];
        let mut raw = None;
        for line in lines {
            let mut it = line.split_whitespace();
            let name = it.next().ok_or_else(|| bad("empty line"))?;
            let count: usize = it
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| bad("missing count"))?;
            let vals = parse_floats(&it.map(str::to_string).collect::<Vec<_>>())?;
            if vals.len() != count {
                return Err(Error::Parse(format!("{name}: expected {count} values")));
            }
            let dst = match name {
                "w1" => &mut net.w1,
                "b1" => &mut net.b1,
                "w2" => &mut net.w2,
                "b2" => &mut net.b2,
                "w3" => &mut net.w3,
                "b3" => &mut net.b3,
                "reference" => &mut net.reference,
                "layer_params" => {
                    raw = Some(LayerParams::from_flat(layers, j0, &vals)?);
                    continue;
                }
                other => return Err(Error::Parse(format!("unknown array {other}"))),
            };
            if dst.len() != count {
                return Err(Error::Parse(format!("{name}: wrong size {count}")));
            }
            dst.copy_from_slice(&vals);
        }
        Ok((net, raw))
    }
}

fn write_array(s: &mut String, name: &str, v: &[f64]) {
    let _ = write!(s, "{name} {}", v.len());
    for x in v {
        let _ = write!(s, " {x:.17e}");
    }
    s.push('\n');
}

fn fields(line: Option<&str>, key: &str) -> Result<Vec<String>> {
    let line = line.ok_or_else(|| Error::Parse(format!("missing {key} line")))?;
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(Error::Parse(format!("expected {key} line")));
    }
    Ok(it.map(str::to_string).collect())
}

fn parse_floats(v: &[String]) -> Result<Vec<f64>> {
    v.iter()
        .map(|x| x.parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

impl HyperNetGrad {
    pub fn flat(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect()
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
