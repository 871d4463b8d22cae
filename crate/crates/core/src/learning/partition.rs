use serde::{Deserialize, Serialize};

use crate::encoder::DialogueContext;
use crate::error::{MogError, Result};

/// Which family of intent labels defines the expert slices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    #[default]
    Domain,
    Action,
}

impl PartitionMode {
    /// Label namespace, e.g. `domain` in `domain:hotel`.
    pub fn namespace(self) -> &'static str {
        match self {
            PartitionMode::Domain => "domain",
            PartitionMode::Action => "action",
        }
    }

    pub fn label(self, name: &str) -> String {
        format!("{}:{name}", self.namespace())
    }
}

fn namespace_of(label: &str) -> &str {
    label.split_once(':').map_or("", |(ns, _)| ns)
}

/// Assignment of samples to experts. A sample with several intents belongs to
/// every corresponding expert.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntentPartition {
    pub intent_set: Vec<String>,
    /// Expert indices for each sample, ascending.
    pub assignment: Vec<Vec<usize>>,
}

impl IntentPartition {
    pub fn experts(&self) -> usize {
        self.intent_set.len()
    }

    /// Sample indices in slice `l`.
    pub fn slice(&self, l: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, a)| a.contains(&l))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn slice_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.experts()];
        for a in &self.assignment {
            for &l in a {
                sizes[l] += 1;
            }
        }
        sizes
    }
}

/// Assigns every sample to the experts of its intents.
///
/// Labels outside the namespace of `intent_set` are ignored; labels inside it
/// that are not in `intent_set` are an error.
pub fn partition_dataset(samples: &[DialogueContext], intent_set: &[String]) -> Result<IntentPartition> {
    let Some(first) = intent_set.first() else {
        return Err(MogError::invalid("empty intent set"));
    };
    let ns = namespace_of(first);
    if intent_set.iter().any(|i| namespace_of(i) != ns) {
        return Err(MogError::invalid("intent set mixes label namespaces"));
    }
    let mut assignment = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let mut experts = Vec::new();
        for label in &s.intents {
            if namespace_of(label) != ns {
                continue;
            }
            let l = intent_set
                .iter()
                .position(|x| x == label)
                .ok_or_else(|| MogError::invalid(format!("sample {i} has unknown intent `{label}`")))?;
            if !experts.contains(&l) {
                experts.push(l);
            }
        }
        if experts.is_empty() {
            return Err(MogError::invalid(format!("sample {i} has no intent in `{ns}`")));
        }
        experts.sort_unstable();
        assignment.push(experts);
    }
    Ok(IntentPartition {
        intent_set: intent_set.to_vec(),
        assignment,
    })
}
