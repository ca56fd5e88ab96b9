//! Knowledge extraction from black-box predictions: adaptive label
//! smoothing, the per-video EMA teacher bank, distillation and
//! information-maximisation losses, and the total objective.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{self, AccessLog, Reader, Writer};
use crate::error::{Error, Result};
use crate::numerics::loss::kl_mean;
use crate::numerics::{entropy, kl_div, GradTape, NodeId, ProbVector, Scalar};

pub use crate::numerics::loss::mutual_information as mi_node;

/// Number of teacher classes kept verbatim by [`adals`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdaLSConfig {
    c: usize,
    classes: usize,
}

impl AdaLSConfig {
    pub fn new(c: usize, classes: usize) -> Result<Self> {
        if c == 0 || c >= classes {
            return Err(Error::Config(format!("AdaLS needs 1 <= c < C, got c = {c}, C = {classes}")));
        }
        Ok(Self { c, classes })
    }

    /// Caps `c` at `C - 1`.
    pub fn clamped(c: usize, classes: usize) -> Result<Self> {
        Self::new(c.min(classes.saturating_sub(1)), classes)
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

/// Keeps the top-`c` entries and spreads the remaining mass uniformly over
/// the other `C - c` classes. Ties at rank `c` go to the lower index.
pub fn adals(p: &ProbVector, cfg: &AdaLSConfig) -> Result<ProbVector> {
    let x = p.as_slice();
    if x.len() != cfg.classes {
        return Err(Error::dim("adals input", &[cfg.classes], &[x.len()]));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut keep = vec![false; x.len()];
    order[..cfg.c].iter().for_each(|&i| keep[i] = true);
    let top: f64 = order[..cfg.c].iter().map(|&i| x[i]).sum();
    let residual = 1.0 - top;
    assert!(residual > -1e-9, "top-c mass {top} exceeds one");
    let fill = residual.max(0.0) / (cfg.classes - cfg.c) as f64;
    let out = x.iter().zip(&keep).map(|(&v, &k)| if k { v } else { fill }).collect();
    ProbVector::new(out)
}

/// Per-video teacher distributions, refined by an exponential moving
/// average of the student's predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherBank {
    gamma: f64,
    classes: usize,
    entries: BTreeMap<String, ProbVector>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("EMA momentum must lie in [0, 1], got {gamma}")));
    }
    Ok(())
}

/// `adals` of the black-box prediction for every id in `ids`.
pub fn init_teacher_bank(
    ids: &[String],
    predictions: &BTreeMap<String, ProbVector>,
    cfg: &AdaLSConfig,
    gamma: f64,
) -> Result<TeacherBank> {
    check_gamma(gamma)?;
    let missing: Vec<&str> = ids
        .iter()
        .filter(|id| !predictions.contains_key(*id))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("no teacher prediction for: {}", missing.join(", "))));
    }
    let mut entries = BTreeMap::new();
    for id in ids {
        entries.insert(id.clone(), adals(&predictions[id], cfg)?);
    }
    Ok(TeacherBank {
        gamma,
        classes: cfg.classes(),
        entries,
    })
}

impl TeacherBank {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ProbVector> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ProbVector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// `y' <- gamma * y' + (1 - gamma) * y_student`, renormalised.
    pub fn ema_update(&mut self, student: &BTreeMap<String, ProbVector>) -> Result<()> {
        if student.len() != self.entries.len() || student.keys().any(|k| !self.entries.contains_key(k)) {
            let extra: Vec<&str> = student
                .keys()
                .filter(|k| !self.entries.contains_key(*k))
                .map(String::as_str)
                .collect();
            let missing: Vec<&str> = self
                .entries
                .keys()
                .filter(|k| !student.contains_key(*k))
                .map(String::as_str)
                .collect();
            return Err(Error::Data(format!(
                "EMA ids differ from the teacher bank (missing: [{}], unknown: [{}])",
                missing.join(", "),
                extra.join(", ")
            )));
        }
        let g = self.gamma;
        for (id, y) in student {
            if y.classes() != self.classes {
                return Err(Error::dim("student prediction", &[self.classes], &[y.classes()]));
            }
            let t = self.entries.get_mut(id).expect("checked above");
            let mixed: Vec<f64> = t.as_slice().iter().zip(y.as_slice()).map(|(&a, &b)| g * a + (1.0 - g) * b).collect();
            *t = ProbVector::normalized(mixed)?;
        }
        Ok(())
    }

    /// Row-major teacher matrix for a batch.
    pub fn targets(&self, ids: &[&str]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ids.len() * self.classes);
        for id in ids {
            let p = self
                .entries
                .get(*id)
                .ok_or_else(|| Error::Data(format!("no teacher bank entry for {id}")))?;
            out.extend_from_slice(p.as_slice());
        }
        Ok(out)
    }

    /// `BVTB` snapshot: header (version, C, gamma, count), then (id, C f64) records.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(SNAPSHOT_MAGIC)
            .u32(SNAPSHOT_VERSION)
            .usize(self.classes)
            .f64s(&[self.gamma])
            .usize(self.entries.len());
        for (id, p) in &self.entries {
            w.string(id).f64s(p.as_slice());
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.magic(SNAPSHOT_MAGIC)?;
        r.version(SNAPSHOT_VERSION)?;
        let classes = r.usize("class count")?;
        let gamma = r.f64s(1, "gamma")?[0];
        check_gamma(gamma).map_err(|_| r.fail(format!("bad gamma {gamma}")))?;
        let n = r.usize("record count")?;
        let mut entries = BTreeMap::new();
        for _ in 0..n {
            let at = r.offset();
            let id = r.string("video id")?;
            let p = ProbVector::new(r.f64s(classes, "probabilities")?).map_err(|e| r.fail(e.to_string()))?;
            if entries.insert(id.clone(), p).is_some() {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: at as u64,
                    msg: format!("duplicate video id {id}"),
                });
            }
        }
        if !r.at_end() {
            return Err(r.fail("trailing bytes"));
        }
        Ok(Self { gamma, classes, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.encode())
    }

    pub fn load(path: &Path, log: Option<&AccessLog>) -> Result<Self> {
        Self::decode(&binio::read_file(path, log)?, path)
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"BVTB";
const SNAPSHOT_VERSION: u32 = 1;

/// Batch mean of `D_KL(teacher_i || student_i)`.
pub fn loss_kd(bank: &TeacherBank, ids: &[&str], student: &[ProbVector]) -> Result<f64> {
    if ids.len() != student.len() {
        return Err(Error::dim("kd batch", &[ids.len()], &[student.len()]));
    }
    if ids.is_empty() {
        return Err(Error::Usage("distillation loss of an empty batch".into()));
    }
    let mut s = 0.0;
    for (id, y) in ids.iter().zip(student) {
        let t = bank
            .get(id)
            .ok_or_else(|| Error::Data(format!("no teacher bank entry for {id}")))?;
        s += kl_div(t, y)?;
    }
    Ok(s / ids.len() as f64)
}

/// `H(mean y) - mean H(y)`.
pub fn loss_mi(student: &[ProbVector]) -> Result<f64> {
    let Some(first) = student.first() else {
        return Err(Error::Usage("information term of an empty batch".into()));
    };
    let c = first.classes();
    let mut mean = vec![0.0; c];
    for y in student {
        if y.classes() != c {
            return Err(Error::dim("mi batch", &[c], &[y.classes()]));
        }
        mean.iter_mut().zip(y.as_slice()).for_each(|(m, &x)| *m += x);
    }
    let n = student.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let h_mean = entropy(&ProbVector::normalized(mean)?);
    let mean_h = student.iter().map(entropy).sum::<f64>() / n;
    Ok((h_mean - mean_h).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub beta_reg: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self { beta_reg: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub kd: f64,
    pub endo: f64,
    pub exo: f64,
    pub mi: f64,
}

/// `L_kd + beta * (L_endo + L_exo) - L_mi`.
pub fn total_objective(parts: &LossParts, w: &ObjectiveWeights) -> f64 {
    parts.kd + w.beta_reg * (parts.endo + parts.exo) - parts.mi
}

/// Taped `L_kd` against constant teacher rows.
pub fn kd_node<T: Scalar>(tape: &mut GradTape<T>, probs: NodeId, teacher: &[f64]) -> Result<NodeId> {
    let (rows, cols) = tape.shape(probs);
    if teacher.len() != rows * cols {
        return Err(Error::dim("teacher rows", &[rows, cols], &[teacher.len() / cols.max(1), cols]));
    }
    let t = tape.constant(rows, cols, teacher.iter().map(|&x| T::lit(x)).collect());
    kl_mean(tape, t, probs)
}
