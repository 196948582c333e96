use rand::{Rng, RngCore};

use super::{lbf_policies, pp_policies, EnvKind, LbfConfig, PpConfig};
use crate::error::{ClamError, Result};

/// A modeled-agent policy: maps the modeled agents' observations (one vector
/// per modeled agent) to one action per modeled agent.
pub trait FixedPolicy: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn act(&self, obs: &[Vec<f64>], rng: &mut dyn RngCore) -> Vec<usize>;
}

#[derive(Debug)]
pub struct PolicySet {
    kind: EnvKind,
    policies: Vec<Box<dyn FixedPolicy>>,
    /// Index of each member in the full set of its environment.
    labels: Vec<usize>,
}

impl PolicySet {
    pub fn full(kind: EnvKind, lbf: &LbfConfig, pp: &PpConfig) -> Self {
        let policies = match kind {
            EnvKind::Lbf => lbf_policies::all(lbf),
            EnvKind::Pp => pp_policies::all(pp),
        };
        let labels = (0..policies.len()).collect();
        Self { kind, policies, labels }
    }

    /// Members of the full set at the given indices, in that order.
    pub fn subset(kind: EnvKind, lbf: &LbfConfig, pp: &PpConfig, indices: &[usize]) -> Result<Self> {
        let mut all: Vec<Option<Box<dyn FixedPolicy>>> = match kind {
            EnvKind::Lbf => lbf_policies::all(lbf),
            EnvKind::Pp => pp_policies::all(pp),
        }
        .into_iter()
        .map(Some)
        .collect();
        let mut policies = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = all
                .get_mut(i)
                .and_then(Option::take)
                .ok_or_else(|| ClamError::Config(format!("policy index {i} invalid or repeated")))?;
            policies.push(p);
        }
        if policies.is_empty() {
            return Err(ClamError::Config("empty policy subset".into()));
        }
        Ok(Self {
            kind,
            policies,
            labels: indices.to_vec(),
        })
    }

    pub fn from_policies(kind: EnvKind, policies: Vec<Box<dyn FixedPolicy>>) -> Self {
        let labels = (0..policies.len()).collect();
        Self { kind, policies, labels }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn get(&self, index: usize) -> &dyn FixedPolicy {
        self.policies[index].as_ref()
    }

    /// Index of `index`'s policy within the environment's full set.
    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.policies.iter().map(|p| p.name()).collect()
    }
}

/// Uniform draw of the policy index for one episode.
pub fn sample_modeled_policy(set: &PolicySet, rng: &mut dyn RngCore) -> usize {
    if set.len() == 1 {
        return 0;
    }
    rng.random_range(0..set.len())
}
