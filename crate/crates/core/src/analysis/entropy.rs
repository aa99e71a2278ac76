//! Shannon entropy of discrete joint distributions, in bits.

use crate::error::{Error, Result};

/// A probability table over finitely many discrete variables, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    shape: Vec<usize>,
    probs: Vec<f64>,
    names: Vec<String>,
}

impl DiscreteJoint {
    pub fn new(shape: Vec<usize>, probs: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::input("every variable needs at least one outcome"));
        }
        if names.len() != shape.len() {
            return Err(Error::input("one name per variable"));
        }
        if probs.len() != shape.iter().product::<usize>() {
            return Err(Error::dimension("probability table size differs from shape"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::input("probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("probabilities sum to {total}")));
        }
        Ok(DiscreteJoint { shape, probs, names })
    }

    /// Normalizes non-negative weights into a joint.
    pub fn from_weights(shape: Vec<usize>, weights: &[f64], names: Vec<String>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::input("weights must have positive total"));
        }
        Self::new(shape, weights.iter().map(|w| w / total).collect(), names)
    }

    /// Empirical joint of equally long columns of outcome indices.
    pub fn from_samples(columns: &[&[usize]], names: Vec<String>) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.len());
        if n == 0 || columns.iter().any(|c| c.len() != n) {
            return Err(Error::input("sample columns must be non-empty and of equal length"));
        }
        let shape: Vec<usize> = columns.iter().map(|c| c.iter().max().map_or(1, |m| m + 1)).collect();
        let mut counts = vec![0.0; shape.iter().product()];
        for i in 0..n {
            let flat = columns.iter().zip(&shape).fold(0, |acc, (c, &s)| acc * s + c[i]);
            counts[flat] += 1.0;
        }
        Self::from_weights(shape, &counts, names)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn check_vars(&self, vars: &[usize]) -> Result<()> {
        for (i, &v) in vars.iter().enumerate() {
            if v >= self.shape.len() {
                return Err(Error::input(format!("variable {v} out of range")));
            }
            if vars[..i].contains(&v) {
                return Err(Error::input(format!("variable {v} listed twice")));
            }
        }
        Ok(())
    }

    /// Marginal over `vars`, row-major in the order given.
    pub fn marginal(&self, vars: &[usize]) -> Result<Vec<f64>> {
        self.check_vars(vars)?;
        let mut out = vec![0.0; vars.iter().map(|&v| self.shape[v]).product()];
        let mut index = vec![0usize; self.shape.len()];
        for &p in &self.probs {
            let flat = vars.iter().fold(0, |acc, &v| acc * self.shape[v] + index[v]);
            out[flat] += p;
            for d in (0..self.shape.len()).rev() {
                index[d] += 1;
                if index[d] < self.shape[d] {
                    break;
                }
                index[d] = 0;
            }
        }
        Ok(out)
    }
}

fn plogp_sum(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum::<f64>()
}

/// `H(vars)` in bits.
pub fn entropy(joint: &DiscreteJoint, vars: &[usize]) -> Result<f64> {
    Ok(plogp_sum(&joint.marginal(vars)?).max(0.0))
}

/// `H(targets | given)` in bits, computed term by term as
/// `sum p(t, g) log(p(g) / p(t, g))`.
pub fn conditional_entropy(joint: &DiscreteJoint, targets: &[usize], given: &[usize]) -> Result<f64> {
    if targets.iter().any(|t| given.contains(t)) {
        return Err(Error::input("target and conditioning variables overlap"));
    }
    let mut vars = given.to_vec();
    vars.extend_from_slice(targets);
    let both = joint.marginal(&vars)?;
    let cond = joint.marginal(given)?;
    let block = both.len() / cond.len();
    let mut h = 0.0;
    for (g, &pg) in cond.iter().enumerate() {
        for &p in &both[g * block..(g + 1) * block] {
            if p > 0.0 {
                h += p * (pg / p).log2();
            }
        }
    }
    Ok(h.max(0.0))
}

/// For a joint with `H(U|V) = 0`, checks `H(W|V) <= H(W|U)`.
pub fn lemma_check(joint: &DiscreteJoint, u: usize, v: usize, w: usize) -> Result<bool> {
    let h_u_given_v = conditional_entropy(joint, &[u], &[v])?;
    if h_u_given_v > 1e-10 {
        return Err(Error::precondition(format!("H(U|V) = {h_u_given_v} is not zero")));
    }
    Ok(conditional_entropy(joint, &[w], &[v])? <= conditional_entropy(joint, &[w], &[u])? + 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn uniform_four_is_two_bits() {
        let j = DiscreteJoint::new(vec![4], vec![0.25; 4], names(1)).unwrap();
        assert_eq!(entropy(&j, &[0]).unwrap(), 2.0);
    }

    #[test]
    fn copy_has_zero_conditional_entropy() {
        let j = DiscreteJoint::new(vec![3, 3], vec![0.2, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.3], names(2)).unwrap();
        assert_eq!(conditional_entropy(&j, &[0], &[1]).unwrap(), 0.0);
    }

    #[test]
    fn independence_identity() {
        let q = [0.1, 0.6, 0.3];
        let f = [0.5, 0.25, 0.25];
        let probs: Vec<f64> = q.iter().flat_map(|a| f.iter().map(move |b| a * b)).collect();
        let j = DiscreteJoint::new(vec![3, 3], probs, names(2)).unwrap();
        let hq = entropy(&j, &[0]).unwrap();
        assert!((conditional_entropy(&j, &[0], &[1]).unwrap() - hq).abs() < 1e-12);
    }

    #[test]
    fn marginal_orders_variables() {
        let j = DiscreteJoint::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.0, 0.25, 0.15], names(2)).unwrap();
        let m = j.marginal(&[1, 0]).unwrap();
        let expected = [0.1, 0.0, 0.2, 0.25, 0.3, 0.15];
        for (a, b) in m.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(j.marginal(&[0, 0]).is_err());
    }

    #[test]
    fn lemma_on_identical_and_coarsened() {
        // U = V.
        let j = DiscreteJoint::from_weights(vec![2, 2, 2], &[0.1, 0.2, 0.0, 0.0, 0.0, 0.0, 0.3, 0.4], names(3)).unwrap();
        assert!(lemma_check(&j, 0, 1, 2).unwrap());
        assert!((conditional_entropy(&j, &[2], &[1]).unwrap() - conditional_entropy(&j, &[2], &[0]).unwrap()).abs() < 1e-15);

        // U = parity of a 4-valued V.
        let pv = [0.1, 0.2, 0.3, 0.4];
        let pw_given_v = [0.9, 0.3, 0.6, 0.2];
        let mut w = vec![0.0; 2 * 4 * 2];
        for v in 0..4 {
            let u = v % 2;
            w[(u * 4 + v) * 2] = pv[v] * pw_given_v[v];
            w[(u * 4 + v) * 2 + 1] = pv[v] * (1.0 - pw_given_v[v]);
        }
        let j = DiscreteJoint::from_weights(vec![2, 4, 2], &w, names(3)).unwrap();
        assert!(lemma_check(&j, 0, 1, 2).unwrap());
    }

    #[test]
    fn lemma_precondition_enforced() {
        let j = DiscreteJoint::new(vec![2, 2, 1], vec![0.25; 4], names(3)).unwrap();
        assert!(matches!(lemma_check(&j, 0, 1, 2), Err(Error::Precondition(_))));
    }

    #[test]
    fn joint_validation() {
        assert!(DiscreteJoint::new(vec![2], vec![0.5, 0.6], names(1)).is_err());
        assert!(DiscreteJoint::new(vec![2], vec![1.5, -0.5], names(1)).is_err());
        assert!(DiscreteJoint::new(vec![3], vec![0.5, 0.5], names(1)).is_err());
    }

    #[test]
    fn samples_build_empirical_joint() {
        let a = [0usize, 0, 1, 1];
        let b = [0usize, 1, 0, 1];
        let j = DiscreteJoint::from_samples(&[&a, &b], names(2)).unwrap();
        assert_eq!(j.probs(), &[0.25; 4]);
        assert_eq!(entropy(&j, &[0, 1]).unwrap(), 2.0);
    }
}
