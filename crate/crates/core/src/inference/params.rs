//! Flat, named views of parameter sets.
//!
//! Names follow `beta[k][j]`, `u[i]`, `v[i][k]`, `mu[k]`, `sigma_u`,
//! `sigma_v`. State indices `k` are the labels 1 and 2; borrower `i` and
//! covariate `j` are zero-based positions. Random effects with more than one
//! component extend the grammar to `u[i][r]` and `sigma_u[r]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{logistic, ModelParameters, NUM_STATES};

pub trait ParameterSet: Clone + Send + Sync + Sized {
    fn names(&self) -> Vec<String>;
    fn values(&self) -> Vec<f64>;
    /// Same shape as `self`, new values in [`ParameterSet::names`] order.
    fn with_values(&self, values: &[f64]) -> Result<Self>;
    /// Rebuilds a parameter set from `(name, value)` pairs in any order.
    fn from_named(pairs: &[(String, f64)]) -> Result<Self>;
    /// Functions of the parameters reported alongside them in summaries.
    fn derived(&self) -> Vec<(String, f64)> {
        Vec::new()
    }
}

/// Parameters of the mixed-effects Poisson baseline (no hidden states).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmmParameters {
    pub beta: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub sigma_u: Vec<f64>,
}

impl GlmmParameters {
    pub fn zeros(n: usize, p: usize, q: usize) -> Self {
        Self { beta: vec![0.0; p], u: vec![vec![0.0; q]; n], sigma_u: vec![1.0; q] }
    }
}

fn u_name(i: usize, r: usize, q: usize) -> String {
    if q == 1 {
        format!("u[{i}]")
    } else {
        format!("u[{i}][{r}]")
    }
}

fn sigma_u_name(r: usize, q: usize) -> String {
    if q == 1 {
        "sigma_u".to_string()
    } else {
        format!("sigma_u[{r}]")
    }
}

/// Splits `name[a][b]` into `("name", [a, b])`.
fn parse_name(name: &str) -> Result<(&str, Vec<usize>)> {
    let bad = || Error::Validation(format!("malformed parameter name {name:?}"));
    let (base, mut rest) = match name.find('[') {
        Some(pos) => (&name[..pos], &name[pos..]),
        None => return Ok((name, Vec::new())),
    };
    let mut idx = Vec::new();
    while !rest.is_empty() {
        let close = rest.find(']').ok_or_else(bad)?;
        if !rest.starts_with('[') {
            return Err(bad());
        }
        idx.push(rest[1..close].parse::<usize>().map_err(|_| bad())?);
        rest = &rest[close + 1..];
    }
    Ok((base, idx))
}

fn state_index(label: usize, name: &str) -> Result<usize> {
    match label {
        1 | 2 => Ok(label - 1),
        _ => Err(Error::Validation(format!("state label in {name:?} must be 1 or 2"))),
    }
}

/// Dense table filled from sparse `(indices, value)` entries; every slot must be set.
struct Grid {
    entries: BTreeMap<Vec<usize>, f64>,
}

impl Grid {
    fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    fn insert(&mut self, key: Vec<usize>, value: f64, name: &str) -> Result<()> {
        if self.entries.insert(key, value).is_some() {
            return Err(Error::Validation(format!("duplicate parameter {name:?}")));
        }
        Ok(())
    }

    fn extent(&self, axis: usize) -> usize {
        self.entries.keys().map(|k| k.get(axis).map_or(0, |v| v + 1)).max().unwrap_or(0)
    }

    fn get(&self, key: &[usize], what: &str) -> Result<f64> {
        self.entries
            .get(key)
            .copied()
            .ok_or_else(|| Error::Validation(format!("missing parameter {what}{key:?}")))
    }
}

struct RandomEffects {
    u: Grid,
    sigma_u: Grid,
}

impl RandomEffects {
    fn new() -> Self {
        Self { u: Grid::new(), sigma_u: Grid::new() }
    }

    fn accept(&mut self, base: &str, idx: &[usize], value: f64, name: &str) -> Result<bool> {
        match (base, idx.len()) {
            ("u", 1) => self.u.insert(vec![idx[0], 0], value, name)?,
            ("u", 2) => self.u.insert(idx.to_vec(), value, name)?,
            ("sigma_u", 0) => self.sigma_u.insert(vec![0], value, name)?,
            ("sigma_u", 1) => self.sigma_u.insert(idx.to_vec(), value, name)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn build(&self) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let q = self.sigma_u.extent(0).max(1);
        let n = self.u.extent(0);
        let u = (0..n)
            .map(|i| (0..q).map(|r| self.u.get(&[i, r], "u")).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let sigma_u = (0..q).map(|r| self.sigma_u.get(&[r], "sigma_u")).collect::<Result<Vec<_>>>()?;
        Ok((u, sigma_u))
    }
}

impl ParameterSet for ModelParameters {
    fn names(&self) -> Vec<String> {
        let q = self.sigma_u.len();
        let mut names = Vec::new();
        for (k, beta) in self.beta.iter().enumerate() {
            names.extend((0..beta.len()).map(|j| format!("beta[{}][{j}]", k + 1)));
        }
        for (i, u) in self.u.iter().enumerate() {
            names.extend((0..u.len()).map(|r| u_name(i, r, q)));
        }
        for i in 0..self.trans_logit_dev.len() {
            names.extend((1..=NUM_STATES).map(|k| format!("v[{i}][{k}]")));
        }
        names.extend((1..=NUM_STATES).map(|k| format!("mu[{k}]")));
        names.extend((0..q).map(|r| sigma_u_name(r, q)));
        names.push("sigma_v".to_string());
        names
    }

    fn values(&self) -> Vec<f64> {
        let mut values = Vec::new();
        for beta in &self.beta {
            values.extend_from_slice(beta);
        }
        for u in &self.u {
            values.extend_from_slice(u);
        }
        for v in &self.trans_logit_dev {
            values.extend_from_slice(v);
        }
        values.extend_from_slice(&self.trans_logit_mean);
        values.extend_from_slice(&self.sigma_u);
        values.push(self.sigma_v);
        values
    }

    fn with_values(&self, values: &[f64]) -> Result<Self> {
        let expected = self.values().len();
        if values.len() != expected {
            return Err(Error::Dimension(format!("{} values for {expected} parameters", values.len())));
        }
        let mut it = values.iter().copied();
        let mut out = self.clone();
        for beta in &mut out.beta {
            beta.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        for u in &mut out.u {
            u.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        for v in &mut out.trans_logit_dev {
            v.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        out.trans_logit_mean.iter_mut().for_each(|x| *x = it.next().unwrap());
        out.sigma_u.iter_mut().for_each(|x| *x = it.next().unwrap());
        out.sigma_v = it.next().unwrap();
        Ok(out)
    }

    fn from_named(pairs: &[(String, f64)]) -> Result<Self> {
        let mut beta = Grid::new();
        let mut v = Grid::new();
        let mut mu = Grid::new();
        let mut re = RandomEffects::new();
        let mut sigma_v = None;
        for (name, value) in pairs {
            let (base, idx) = parse_name(name)?;
            if re.accept(base, &idx, *value, name)? {
                continue;
            }
            match (base, idx.as_slice()) {
                ("beta", [k, j]) => beta.insert(vec![state_index(*k, name)?, *j], *value, name)?,
                ("v", [i, k]) => v.insert(vec![*i, state_index(*k, name)?], *value, name)?,
                ("mu", [k]) => mu.insert(vec![state_index(*k, name)?], *value, name)?,
                ("sigma_v", []) => sigma_v = Some(*value),
                _ => return Err(Error::Validation(format!("unknown parameter {name:?}"))),
            }
        }
        let p = beta.extent(1);
        let beta_vec = |k: usize| (0..p).map(|j| beta.get(&[k, j], "beta")).collect::<Result<Vec<_>>>();
        let (u, sigma_u) = re.build()?;
        let n = u.len();
        let trans_logit_dev = (0..n)
            .map(|i| Ok([v.get(&[i, 0], "v")?, v.get(&[i, 1], "v")?]))
            .collect::<Result<Vec<_>>>()?;
        if v.extent(0) != n {
            return Err(Error::Validation("u and v cover different borrowers".into()));
        }
        Ok(ModelParameters {
            beta: [beta_vec(0)?, beta_vec(1)?],
            u,
            sigma_u,
            trans_logit_mean: [mu.get(&[0], "mu")?, mu.get(&[1], "mu")?],
            trans_logit_dev,
            sigma_v: sigma_v.ok_or_else(|| Error::Validation("missing parameter sigma_v".into()))?,
        })
    }

    fn derived(&self) -> Vec<(String, f64)> {
        (0..NUM_STATES)
            .map(|k| (format!("persistence[{}]", k + 1), logistic(self.trans_logit_mean[k])))
            .collect()
    }
}

impl ParameterSet for GlmmParameters {
    fn names(&self) -> Vec<String> {
        let q = self.sigma_u.len();
        let mut names: Vec<String> = (0..self.beta.len()).map(|j| format!("beta[1][{j}]")).collect();
        for (i, u) in self.u.iter().enumerate() {
            names.extend((0..u.len()).map(|r| u_name(i, r, q)));
        }
        names.extend((0..q).map(|r| sigma_u_name(r, q)));
        names
    }

    fn values(&self) -> Vec<f64> {
        let mut values = self.beta.clone();
        for u in &self.u {
            values.extend_from_slice(u);
        }
        values.extend_from_slice(&self.sigma_u);
        values
    }

    fn with_values(&self, values: &[f64]) -> Result<Self> {
        let expected = self.values().len();
        if values.len() != expected {
            return Err(Error::Dimension(format!("{} values for {expected} parameters", values.len())));
        }
        let mut it = values.iter().copied();
        let mut out = self.clone();
        out.beta.iter_mut().for_each(|b| *b = it.next().unwrap());
        for u in &mut out.u {
            u.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        out.sigma_u.iter_mut().for_each(|x| *x = it.next().unwrap());
        Ok(out)
    }

    fn from_named(pairs: &[(String, f64)]) -> Result<Self> {
        let mut beta = Grid::new();
        let mut re = RandomEffects::new();
        for (name, value) in pairs {
            let (base, idx) = parse_name(name)?;
            if re.accept(base, &idx, *value, name)? {
                continue;
            }
            match (base, idx.as_slice()) {
                ("beta", [1, j]) => beta.insert(vec![*j], *value, name)?,
                _ => return Err(Error::Validation(format!("unknown baseline parameter {name:?}"))),
            }
        }
        let p = beta.extent(0);
        let (u, sigma_u) = re.build()?;
        Ok(GlmmParameters {
            beta: (0..p).map(|j| beta.get(&[j], "beta")).collect::<Result<Vec<_>>>()?,
            u,
            sigma_u,
        })
    }
}
