//! Exact counterfactual computations on small discrete structural models.
//!
//! The model has an optional confounder `C ~ p(C)`, an input
//! `X ~ P(X | C)`, a latent `Z ~ P(Z | X)` (usually a deterministic map
//! `f`), and a label `Y ~ P(Y | X, C)`. The label mechanism is realized as
//! the inverse CDF of `P(· | X, C)` evaluated at one shared uniform `U_Y`,
//! so the same exogenous noise drives `Y` in every counterfactual world.
//!
//! Intervening on the latent, `do(Z ∈ S)`, redraws `X` from
//! `P(X | C, Z ∈ S)` and leaves the label mechanism untouched. When no input
//! can produce a latent in `S` under the given `C`, the intervention is
//! vacuous and `X` keeps its factual value.

use rand::Rng;

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-12;
const MAX_JOINT_STATES: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteScm {
    /// `p(C)`, length ≥ 1 (a single state means no confounder).
    pub confounder_prior: Vec<f64>,
    /// `P(X | C)` as `[c][x]`.
    pub x_given_c: Vec<Vec<f64>>,
    /// `P(Z | X)` as `[x][z]`.
    pub z_given_x: Vec<Vec<f64>>,
    /// `P(Y | X, C)` as `[c][x][y]`.
    pub y_given_xc: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnsKind {
    Exact,
    InterventionalBound,
    ObservationalEstimate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnsEstimate {
    pub value: f64,
    pub kind: PnsKind,
    /// Some conditioning event (`f(X) = z` or `f(X) ≠ z`) had zero mass.
    pub degenerate: bool,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::invalid(format!("{what} is not a probability vector (sum {s})")));
    }
    Ok(())
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    (0..n).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
}

impl DiscreteScm {
    pub fn new(
        confounder_prior: Vec<f64>,
        x_given_c: Vec<Vec<f64>>,
        z_given_x: Vec<Vec<f64>>,
        y_given_xc: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let nc = confounder_prior.len();
        check_distribution(&confounder_prior, "p(C)")?;
        if x_given_c.len() != nc || y_given_xc.len() != nc {
            return Err(Error::invalid("conditional tables disagree on the confounder count"));
        }
        let nx = x_given_c[0].len();
        let nz = z_given_x.first().map_or(0, Vec::len);
        let ny = y_given_xc[0].first().map_or(0, Vec::len);
        if nx == 0 || nz == 0 || ny == 0 || z_given_x.len() != nx {
            return Err(Error::invalid("empty or inconsistent domains"));
        }
        for row in &x_given_c {
            if row.len() != nx {
                return Err(Error::invalid("P(X | C) rows differ in length"));
            }
            check_distribution(row, "P(X | C)")?;
        }
        for row in &z_given_x {
            if row.len() != nz {
                return Err(Error::invalid("P(Z | X) rows differ in length"));
            }
            check_distribution(row, "P(Z | X)")?;
        }
        for table in &y_given_xc {
            if table.len() != nx {
                return Err(Error::invalid("P(Y | X, C) has wrong X extent"));
            }
            for row in table {
                if row.len() != ny {
                    return Err(Error::invalid("P(Y | X, C) rows differ in length"));
                }
                check_distribution(row, "P(Y | X, C)")?;
            }
        }
        Ok(Self {
            confounder_prior,
            x_given_c,
            z_given_x,
            y_given_xc,
        })
    }

    /// No confounder, deterministic `f`, label law `P(Y | X)`.
    pub fn functional(p_x: Vec<f64>, f: &[usize], nz: usize, y_given_x: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(&bad) = f.iter().find(|&&z| z >= nz) {
            return Err(Error::invalid(format!("f maps into {bad}, outside a domain of {nz}")));
        }
        Self::new(
            vec![1.0],
            vec![p_x],
            f.iter().map(|&z| one_hot(nz, z)).collect(),
            vec![y_given_x],
        )
    }

    pub fn nc(&self) -> usize {
        self.confounder_prior.len()
    }

    pub fn nx(&self) -> usize {
        self.z_given_x.len()
    }

    pub fn nz(&self) -> usize {
        self.z_given_x[0].len()
    }

    pub fn ny(&self) -> usize {
        self.y_given_xc[0][0].len()
    }

    /// `f(x)` when the latent mechanism is deterministic.
    pub fn f(&self, x: usize) -> Option<usize> {
        let row = &self.z_given_x[x];
        let z = row.iter().position(|&p| p == 1.0)?;
        row.iter().enumerate().all(|(j, &p)| j == z || p == 0.0).then_some(z)
    }

    pub fn is_deterministic(&self) -> bool {
        (0..self.nx()).all(|x| self.f(x).is_some())
    }

    /// True when `C` cannot confound `X` and `Y`: it has a single state, or
    /// one of the two mechanisms ignores it.
    pub fn is_confounder_free(&self) -> bool {
        self.nc() == 1
            || self.x_given_c.iter().all(|r| *r == self.x_given_c[0])
            || self.y_given_xc.iter().all(|t| *t == self.y_given_xc[0])
    }

    fn check_query(&self, z: usize, y: usize) -> Result<()> {
        let states = self.nx() * self.nz() * self.ny() * self.nc();
        if states > MAX_JOINT_STATES {
            return Err(Error::TooLarge(states));
        }
        if z >= self.nz() || y >= self.ny() {
            return Err(Error::invalid(format!("query (z={z}, y={y}) outside the model's domains")));
        }
        Ok(())
    }

    /// `P(X | C=c, Z ∈ S)` where `S = {z}` (`inside`) or its complement, or
    /// `None` when that event has zero mass.
    fn intervened_x(&self, c: usize, z: usize, inside: bool) -> Option<Vec<f64>> {
        let w: Vec<f64> = (0..self.nx())
            .map(|x| {
                let pz = self.z_given_x[x][z];
                self.x_given_c[c][x] * if inside { pz } else { 1.0 - pz }
            })
            .collect();
        let mass: f64 = w.iter().sum();
        (mass > 0.0).then(|| w.into_iter().map(|v| v / mass).collect())
    }

    /// Intervals of `U_Y` on which every `(c, x)` label is constant, as
    /// `(length, labels[c][x])`.
    fn label_atoms(&self) -> Vec<(f64, Vec<Vec<usize>>)> {
        let mut cuts = vec![0.0, 1.0];
        for table in &self.y_given_xc {
            for row in table {
                let mut acc = 0.0;
                for &p in row {
                    acc += p;
                    if acc > 0.0 && acc < 1.0 {
                        cuts.push(acc);
                    }
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let u = 0.5 * (w[0] + w[1]);
                let labels = self
                    .y_given_xc
                    .iter()
                    .map(|table| table.iter().map(|row| inverse_cdf(row, u)).collect())
                    .collect();
                (w[1] - w[0], labels)
            })
            .collect()
    }

    /// Exact `P(Y(Z=z) = y, Y(Z≠z) ≠ y)` by summing over the exogenous
    /// states `(C, U_Y, X_factual, X_{Z=z}, X_{Z≠z})`.
    pub fn brute_force_pns(&self, z: usize, y: usize) -> Result<PnsEstimate> {
        self.check_query(z, y)?;
        let atoms = self.label_atoms();
        let mut total = 0.0;
        let mut degenerate = false;
        for c in 0..self.nc() {
            let q_in = self.intervened_x(c, z, true);
            let q_out = self.intervened_x(c, z, false);
            degenerate |= q_in.is_none() || q_out.is_none();
            for (len, labels) in &atoms {
                let labels = &labels[c];
                let hit = |q: &Option<Vec<f64>>, xf: usize, want: bool| -> f64 {
                    match q {
                        Some(q) => q
                            .iter()
                            .zip(labels)
                            .filter(|(_, &l)| (l == y) == want)
                            .map(|(p, _)| p)
                            .sum(),
                        None => f64::from(u8::from((labels[xf] == y) == want)),
                    }
                };
                let factual_matters = q_in.is_none() || q_out.is_none();
                let mut acc = 0.0;
                if factual_matters {
                    for (xf, &pxf) in self.x_given_c[c].iter().enumerate() {
                        acc += pxf * hit(&q_in, xf, true) * hit(&q_out, xf, false);
                    }
                } else {
                    acc = hit(&q_in, 0, true) * hit(&q_out, 0, false);
                }
                total += self.confounder_prior[c] * len * acc;
            }
        }
        Ok(PnsEstimate {
            value: total,
            kind: PnsKind::Exact,
            degenerate,
        })
    }

    /// `P(Y=y | do(Z ∈ S))` by graph surgery.
    pub fn interventional(&self, z: usize, y: usize, inside: bool) -> f64 {
        (0..self.nc())
            .map(|c| {
                let q = self
                    .intervened_x(c, z, inside)
                    .unwrap_or_else(|| self.x_given_c[c].clone());
                let py: f64 = q
                    .iter()
                    .zip(&self.y_given_xc[c])
                    .map(|(px, row)| px * row[y])
                    .sum();
                self.confounder_prior[c] * py
            })
            .sum()
    }

    /// `P(Y=y | do(Z=z)) − P(Y=y | do(Z≠z))`, a lower bound on the exact PNS.
    pub fn interventional_bound(&self, z: usize, y: usize) -> Result<PnsEstimate> {
        self.check_query(z, y)?;
        let degenerate = (0..self.nc())
            .any(|c| self.intervened_x(c, z, true).is_none() || self.intervened_x(c, z, false).is_none());
        Ok(PnsEstimate {
            value: self.interventional(z, y, true) - self.interventional(z, y, false),
            kind: PnsKind::InterventionalBound,
            degenerate,
        })
    }

    /// Observational marginal `P(X)`.
    pub fn p_x(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.nx()];
        for (pc, row) in self.confounder_prior.iter().zip(&self.x_given_c) {
            for (acc, px) in p.iter_mut().zip(row) {
                *acc += pc * px;
            }
        }
        p
    }

    /// Observational `P(Y=y | X=x)`; zero where `P(x) = 0`.
    pub fn p_y_given_x(&self, x: usize, y: usize) -> f64 {
        let joint: f64 = (0..self.nc())
            .map(|c| self.confounder_prior[c] * self.x_given_c[c][x] * self.y_given_xc[c][x][y])
            .sum();
        let px = self.p_x()[x];
        if px > 0.0 {
            joint / px
        } else {
            0.0
        }
    }

    /// `Σ_X P(y | X) [P(X | f(X)=z) − P(X | f(X)≠z)]` from observational
    /// quantities only. A conditioning event with zero mass contributes 0 and
    /// marks the estimate degenerate.
    pub fn observational_estimate(&self, z: usize, y: usize) -> Result<PnsEstimate> {
        self.check_query(z, y)?;
        if !self.is_deterministic() {
            return Err(Error::invalid("observational estimate needs a deterministic latent map"));
        }
        let px = self.p_x();
        let inside: Vec<bool> = (0..self.nx()).map(|x| self.f(x) == Some(z)).collect();
        let mass_in: f64 = px.iter().zip(&inside).filter(|(_, &i)| i).map(|(p, _)| p).sum();
        let mass_out: f64 = px.iter().zip(&inside).filter(|(_, &i)| !i).map(|(p, _)| p).sum();
        let mut value = 0.0;
        for x in 0..self.nx() {
            let cond_in = if inside[x] && mass_in > 0.0 { px[x] / mass_in } else { 0.0 };
            let cond_out = if !inside[x] && mass_out > 0.0 { px[x] / mass_out } else { 0.0 };
            value += self.p_y_given_x(x, y) * (cond_in - cond_out);
        }
        Ok(PnsEstimate {
            value,
            kind: PnsKind::ObservationalEstimate,
            degenerate: mass_in == 0.0 || mass_out == 0.0,
        })
    }

    /// Random model with strictly positive tables. With `confounded`, `C`
    /// has 2–3 states and drives both `X` and `Y`; with `stochastic_f`, the
    /// latent mechanism is a random table instead of a map.
    pub fn random(rng: &mut impl Rng, confounded: bool, stochastic_f: bool) -> Self {
        let nx = rng.random_range(2..=4);
        let nz = rng.random_range(2..=3).min(nx);
        let ny = rng.random_range(2..=3);
        let nc = if confounded { rng.random_range(2..=3) } else { 1 };
        let mut dist = |n: usize| -> Vec<f64> {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect()
        };
        let prior = dist(nc);
        let x_given_c = (0..nc).map(|_| dist(nx)).collect();
        let y_given_xc = (0..nc).map(|_| (0..nx).map(|_| dist(ny)).collect()).collect();
        let z_given_x = if stochastic_f {
            (0..nx).map(|_| dist(nz)).collect()
        } else {
            // Surjective map: the first nz inputs cover every latent value.
            let mut f: Vec<usize> = (0..nx).map(|x| if x < nz { x } else { rng.random_range(0..nz) }).collect();
            for i in (1..nx).rev() {
                let j = rng.random_range(0..=i);
                f.swap(i, j);
            }
            f.into_iter().map(|z| one_hot(nz, z)).collect()
        };
        Self::new(prior, x_given_c, z_given_x, y_given_xc).expect("random tables are normalized")
    }
}

fn inverse_cdf(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bijective() -> DiscreteScm {
        DiscreteScm::functional(
            vec![0.5, 0.5],
            &[0, 1],
            2,
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn bijective_noiseless_is_tight() {
        let scm = bijective();
        assert_eq!(scm.brute_force_pns(1, 1).unwrap().value, 1.0);
        assert_eq!(scm.interventional_bound(1, 1).unwrap().value, 1.0);
        assert_eq!(scm.observational_estimate(1, 1).unwrap().value, 1.0);
    }

    #[test]
    fn independent_label_has_zero_pns() {
        let scm = DiscreteScm::functional(
            vec![0.5, 0.5],
            &[0, 1],
            2,
            vec![vec![0.7, 0.3], vec![0.7, 0.3]],
        )
        .unwrap();
        let exact = scm.brute_force_pns(1, 1).unwrap().value;
        let bound = scm.interventional_bound(1, 1).unwrap().value;
        assert_eq!(exact, 0.0);
        assert!(bound <= 0.0 + 1e-15);
        assert!(bound <= exact + 1e-10);
    }

    #[test]
    fn constant_latent_has_no_causal_path() {
        let scm = DiscreteScm::functional(
            vec![0.25, 0.75],
            &[0, 0],
            2,
            vec![vec![0.4, 0.6], vec![0.4, 0.6]],
        )
        .unwrap();
        for z in 0..2 {
            let exact = scm.brute_force_pns(z, 1).unwrap();
            assert_eq!(exact.value, 0.0);
            assert!(exact.degenerate);
        }
        let outside = scm.observational_estimate(1, 1).unwrap();
        assert!(outside.degenerate);
        assert!((outside.value + 0.6).abs() < 1e-15);
    }

    #[test]
    fn rejects_unnormalized_tables() {
        assert!(DiscreteScm::functional(vec![0.5, 0.6], &[0, 1], 2, vec![vec![1.0, 0.0]; 2]).is_err());
        assert!(DiscreteScm::functional(vec![0.5, 0.5], &[0, 2], 2, vec![vec![1.0, 0.0]; 2]).is_err());
    }

    #[test]
    fn oversized_query_is_rejected() {
        let nx = 1024;
        let scm = DiscreteScm::functional(
            vec![1.0 / nx as f64; nx],
            &(0..nx).collect::<Vec<_>>(),
            nx,
            vec![vec![0.5, 0.5]; nx],
        )
        .unwrap();
        assert!(matches!(scm.brute_force_pns(0, 0), Err(Error::TooLarge(_))));
        assert!(matches!(scm.interventional_bound(0, 0), Err(Error::TooLarge(_))));
    }

    #[test]
    fn observational_needs_deterministic_map() {
        let scm = DiscreteScm::new(
            vec![1.0],
            vec![vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.1, 0.9]],
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
        )
        .unwrap();
        assert!(scm.observational_estimate(0, 0).is_err());
        assert!(scm.interventional_bound(0, 0).is_ok());
    }
}
