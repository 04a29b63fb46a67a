//! JSON configuration documents.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{McmcConfig, PriorSpec};
use crate::measure::ModelParams;
use crate::statespace::{build_graph, GraphSpec, Partition, Structure};

/// Blocks of 1-based states; representatives default to each block's
/// smallest state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub blocks: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representatives: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        GammaPrior { shape: 1.0, rate: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorDocument {
    /// Prior on every `lambda = nu rho` without an override.
    pub lambda: GammaPrior,
    /// Overrides keyed by `nu[j,j']`.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub pairs: BTreeMap<String, GammaPrior>,
    /// Dirichlet weights keyed by `alpha[l,m]`; missing weights are 1.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub dirichlet: BTreeMap<String, f64>,
}

/// What `simulate` generates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    /// Units per state at time 0, in state order.
    pub initial: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Appointment spacing of the panel view.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observe_every: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub graph: GraphSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionSpec>,
    #[serde(default = "unit_rho")]
    pub rho: f64,
    /// Values keyed by `nu[j,j']`, `gamma[l,j']`, `alpha[l,m]` or
    /// `erosion[l,m]`. Unlisted rates and relative risks are 1, erosion is 0
    /// and destination weights are uniform.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub prior: PriorDocument,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSpec>,
}

fn unit_rho() -> f64 {
    1.0
}

fn parse_index(name: &str, prefix: &str) -> Option<(usize, usize)> {
    let inner = name.strip_prefix(prefix)?.strip_prefix('[')?.strip_suffix(']')?;
    let (a, b) = inner.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

impl ConfigDocument {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: ConfigDocument = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        doc.structure()?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config documents always serialize")
    }

    pub fn structure(&self) -> Result<Arc<Structure>> {
        let graph = build_graph(&self.graph)?;
        let partition = match &self.partition {
            None => Partition::degenerate(graph.n_states()),
            Some(spec) => {
                let zero = |v: &[usize]| -> Result<Vec<usize>> {
                    v.iter()
                        .map(|&s| {
                            s.checked_sub(1).ok_or_else(|| Error::Config("partition: states are numbered from 1".into()))
                        })
                        .collect()
                };
                let blocks = spec.blocks.iter().map(|b| zero(b)).collect::<Result<Vec<_>>>()?;
                match &spec.representatives {
                    Some(r) => Partition::new(blocks, zero(r)?)?,
                    None => Partition::from_blocks(blocks)?,
                }
            }
        };
        Ok(Arc::new(Structure::new(graph, partition)?))
    }

    /// Model parameters with the listed values.
    pub fn model_params(&self) -> Result<ModelParams> {
        let structure = self.structure()?;
        let mut m = ModelParams::new(structure.clone(), self.rho)?;
        let graph = structure.graph();
        let unknown = |name: &str| Error::Config(format!("params: unknown parameter `{name}`"));
        let mut alphas: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for (name, &value) in &self.params {
            let set = if let Some((j, k)) = parse_index(name, "nu") {
                let p = j
                    .checked_sub(1)
                    .zip(k.checked_sub(1))
                    .and_then(|(a, b)| structure.pair_index(a, b))
                    .ok_or_else(|| unknown(name))?;
                m.set_nu(p, value)
            } else if let Some((l, j)) = parse_index(name, "gamma") {
                let (l, j) = l.checked_sub(1).zip(j.checked_sub(1)).ok_or_else(|| unknown(name))?;
                let p = (l < graph.n_states())
                    .then(|| structure.pair_index(structure.partition().block_of(l), j))
                    .flatten()
                    .ok_or_else(|| unknown(name))?;
                m.set_gamma(p, l, value)
            } else if let Some((a, b)) = parse_index(name, "alpha") {
                let e = a
                    .checked_sub(1)
                    .zip(b.checked_sub(1))
                    .and_then(|(a, b)| graph.edge_index(a, b))
                    .ok_or_else(|| unknown(name))?;
                let g = structure.group_of_edge(e);
                let pos = structure.groups()[g].edges.iter().position(|&x| x == e).expect("edge in its group");
                alphas.entry(g).or_default().push((pos, value));
                Ok(())
            } else if let Some((a, b)) = parse_index(name, "erosion") {
                let e = a
                    .checked_sub(1)
                    .zip(b.checked_sub(1))
                    .and_then(|(a, b)| graph.edge_index(a, b))
                    .ok_or_else(|| unknown(name))?;
                m.set_erosion(e, value)
            } else {
                return Err(unknown(name));
            };
            set.map_err(|e| Error::Config(format!("params: `{name}`: {e}")))?;
        }
        for (g, given) in alphas {
            let n = structure.groups()[g].edges.len();
            if given.len() != n {
                return Err(Error::Config(format!(
                    "params: destination weights from state {} need all {n} entries",
                    structure.groups()[g].source + 1
                )));
            }
            let mut w = vec![0.0; n];
            for (pos, v) in given {
                w[pos] = v;
            }
            m.set_alpha_group(g, &w).map_err(|e| Error::Config(format!("params: {e}")))?;
        }
        Ok(m)
    }

    pub fn prior_spec(&self) -> Result<PriorSpec> {
        let structure = self.structure()?;
        let mut prior = PriorSpec::default_for(&structure);
        prior.lambda_shape.iter_mut().for_each(|v| *v = self.prior.lambda.shape);
        prior.lambda_rate.iter_mut().for_each(|v| *v = self.prior.lambda.rate);
        for (name, g) in &self.prior.pairs {
            let p = parse_index(name, "nu")
                .and_then(|(j, k)| structure.pair_index(j.checked_sub(1)?, k.checked_sub(1)?))
                .ok_or_else(|| Error::Config(format!("prior.pairs: unknown pair `{name}`")))?;
            prior.lambda_shape[p] = g.shape;
            prior.lambda_rate[p] = g.rate;
        }
        for (name, &w) in &self.prior.dirichlet {
            let e = parse_index(name, "alpha")
                .and_then(|(a, b)| structure.graph().edge_index(a.checked_sub(1)?, b.checked_sub(1)?))
                .ok_or_else(|| Error::Config(format!("prior.dirichlet: unknown edge `{name}`")))?;
            let g = structure.group_of_edge(e);
            let pos = structure.groups()[g].edges.iter().position(|&x| x == e).expect("edge in its group");
            prior.dirichlet[g][pos] = w;
        }
        prior.validate(&structure)?;
        Ok(prior)
    }

    /// Checks every derived object, so a document that validates can be run.
    pub fn validate(&self) -> Result<()> {
        self.model_params()?;
        self.prior_spec()?;
        self.mcmc.validate()?;
        if let Some(sim) = &self.simulation {
            let n = self.structure()?.n_states();
            if sim.initial.len() != n {
                return Err(Error::Config(format!(
                    "simulation.initial: expected {n} counts, got {}",
                    sim.initial.len()
                )));
            }
        }
        Ok(())
    }
}

pub fn read_config(path: impl AsRef<Path>) -> Result<ConfigDocument> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ConfigDocument::parse(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_config(path: impl AsRef<Path>, doc: &ConfigDocument) -> Result<()> {
    std::fs::write(path, doc.to_json() + "\n")?;
    Ok(())
}
