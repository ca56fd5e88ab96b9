//! Probability-simplex primitives in double precision.
//!
//! Every logarithm and division clamps its argument at [`EPS`]; `0 ln 0` is
//! therefore 0 and hard one-hot targets never produce infinities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied before every `ln` and division by a probability.
pub const EPS: f64 = 1e-8;

/// Tolerance on `sum(p) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-5;

/// A point on the probability simplex over `C >= 2` classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::dim("probability vector", &[2], &[p.len()]));
        }
        if let Some(x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Numerical(format!("probability {x} outside [0, 1]")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Numerical(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Self(p))
    }

    /// Builds a vector from non-negative masses by dividing by their sum.
    pub fn normalized(mut p: Vec<f64>) -> Result<Self> {
        let s: f64 = p.iter().sum();
        if !(s > 0.0) || p.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err(Error::Numerical("cannot normalize masses".into()));
        }
        p.iter_mut().for_each(|x| *x /= s);
        Self::new(p)
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        Self::new(vec![1.0 / classes as f64; classes])
    }

    pub fn one_hot(classes: usize, class: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::Parameter(format!("class {class} outside [0, {classes})")));
        }
        let mut p = vec![0.0; classes];
        p[class] = 1.0;
        Self::new(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest entry; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.0.iter().enumerate() {
            if x > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// One-hot vector at [`argmax`](Self::argmax).
    pub fn to_hard(&self) -> Self {
        let mut p = vec![0.0; self.0.len()];
        p[self.argmax()] = 1.0;
        Self(p)
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        Self::new(p)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn same_len(context: &'static str, a: &ProbVector, b: &ProbVector) -> Result<()> {
    if a.classes() != b.classes() {
        return Err(Error::dim(context, &[a.classes()], &[b.classes()]));
    }
    Ok(())
}

#[inline]
pub(crate) fn clamped_ln(x: f64) -> f64 {
    x.max(EPS).ln()
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Result<ProbVector> {
    if z.is_empty() {
        return Err(Error::dim("softmax", &[1], &[0]));
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("softmax input is not finite".into()));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(ProbVector(e.into_iter().map(|x| x / s).collect()))
}

/// Shannon entropy in nats.
pub fn entropy(p: &ProbVector) -> f64 {
    -p.0.iter().map(|&x| x * clamped_ln(x)).sum::<f64>()
}

/// `D_KL(p || q)` in nats.
pub fn kl_div(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    same_len("kl_div", p, q)?;
    Ok(p.0
        .iter()
        .zip(&q.0)
        .map(|(&a, &b)| a * (clamped_ln(a) - clamped_ln(b)))
        .sum::<f64>()
        .max(0.0))
}

/// `-sum target * ln(pred)` in nats.
pub fn cross_entropy_soft(target: &ProbVector, pred: &ProbVector) -> Result<f64> {
    same_len("cross_entropy_soft", target, pred)?;
    Ok(-target
        .0
        .iter()
        .zip(&pred.0)
        .map(|(&t, &p)| t * clamped_ln(p))
        .sum::<f64>())
}

/// Convex combination of two distributions; stays on the simplex.
pub fn mix_probs(a: &ProbVector, b: &ProbVector, lambda: f64) -> Result<ProbVector> {
    same_len("mix_probs", a, b)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Parameter(format!("mixing weight {lambda} outside [0, 1]")));
    }
    Ok(ProbVector(super::tensor::mix_slices(&a.0, &b.0, lambda)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(x: &[f64]) -> ProbVector {
        ProbVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for x in u.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let c = 3.7;
        let p = softmax(&[c, c + 2f64.ln()]).unwrap();
        assert!((p.as_slice()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p.as_slice()[1] - 2.0 / 3.0).abs() < 1e-12);
        // exp/sum by hand
        let z = [1.0f64, 2.0, 0.5];
        let s: f64 = z.iter().map(|x| x.exp()).sum();
        let p = softmax(&z).unwrap();
        for (a, b) in p.as_slice().iter().zip(z.iter().map(|x| x.exp() / s)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(softmax(&[]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&pv(&[0.0, 1.0, 0.0])), 0.0);
        assert!((entropy(&ProbVector::uniform(5).unwrap()) - 5f64.ln()).abs() < 1e-12);
        let want = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert!((entropy(&pv(&[0.25, 0.75])) - want).abs() < 1e-12);
        assert!((want - 0.5623).abs() < 5e-5);
    }

    #[test]
    fn kl_examples() {
        let p = pv(&[0.2, 0.3, 0.5]);
        assert!(kl_div(&p, &p).unwrap().abs() < 1e-15);
        assert!((kl_div(&pv(&[1.0, 0.0]), &pv(&[0.5, 0.5])).unwrap() - 2f64.ln()).abs() < 1e-12);
        let want = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        let got = kl_div(&pv(&[0.5, 0.5]), &pv(&[0.25, 0.75])).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.1438).abs() < 5e-5);
        assert!(kl_div(&pv(&[0.5, 0.5]), &pv(&[0.2, 0.3, 0.5])).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let pred = pv(&[0.1, 0.6, 0.3]);
        let ce = cross_entropy_soft(&ProbVector::one_hot(3, 1).unwrap(), &pred).unwrap();
        assert!((ce + 0.6f64.ln()).abs() < 1e-12);
        let u = ProbVector::uniform(4).unwrap();
        assert!((cross_entropy_soft(&u, &u).unwrap() - 4f64.ln()).abs() < 1e-12);
        let got = cross_entropy_soft(&pv(&[0.3, 0.7]), &pv(&[0.6, 0.4])).unwrap();
        let want = -(0.3 * 0.6f64.ln() + 0.7 * 0.4f64.ln());
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.79466).abs() < 5e-5);
    }

    #[test]
    fn hard_targets_stay_finite() {
        let ce = cross_entropy_soft(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap();
        assert!((ce - -(EPS.ln())).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_vectors() {
        assert!(ProbVector::new(vec![1.0]).is_err());
        assert!(ProbVector::new(vec![0.7, 0.7]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
    }

    fn simplex(c: usize) -> impl Strategy<Value = ProbVector> {
        prop::collection::vec(0.0f64..1.0, c).prop_filter_map("mass", |w| {
            let w: Vec<f64> = w.into_iter().map(|x| x * x * x).collect();
            ProbVector::normalized(w).ok()
        })
    }

    proptest! {
        #[test]
        fn gibbs_identity((p, q) in (2usize..8).prop_flat_map(|c| (simplex(c), simplex(c)))) {
            let lhs = cross_entropy_soft(&p, &q).unwrap() - entropy(&p);
            let kl = kl_div(&p, &q).unwrap();
            prop_assert!((lhs - kl).abs() < 1e-6);
            prop_assert!(kl >= 0.0);
            prop_assert!(kl_div(&p, &p).unwrap().abs() < 1e-9);
        }

        #[test]
        fn softmax_is_shift_invariant(z in prop::collection::vec(-20.0f64..20.0, 2..10), c in -50.0f64..50.0) {
            let a = softmax(&z).unwrap();
            let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
            let b = softmax(&shifted).unwrap();
            prop_assert!(ProbVector::new(a.as_slice().to_vec()).is_ok());
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn entropy_bounds(p in (2usize..10).prop_flat_map(simplex)) {
            let h = entropy(&p);
            prop_assert!(h >= -1e-12 && h <= (p.classes() as f64).ln() + 1e-9);
        }
    }
}
