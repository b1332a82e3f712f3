use serde::{Deserialize, Serialize};

use crate::error::{DlgfaError, Result};

/// Partition of the observed features into `G` contiguous views.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    dims: Vec<usize>,
    names: Vec<String>,
}

impl GroupSpec {
    pub fn new(dims: Vec<usize>, names: Vec<String>) -> Result<Self> {
        if dims.is_empty() {
            return Err(DlgfaError::InvalidArgument("at least one group required".into()));
        }
        if dims.len() != names.len() {
            return Err(DlgfaError::InvalidArgument(format!(
                "{} group sizes but {} names",
                dims.len(),
                names.len()
            )));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(DlgfaError::InvalidArgument(format!(
                "group `{}` has no features",
                names[i]
            )));
        }
        Ok(GroupSpec { dims, names })
    }

    /// Groups named `g1..gG`.
    pub fn unnamed(dims: Vec<usize>) -> Result<Self> {
        let names = (1..=dims.len()).map(|g| format!("g{g}")).collect();
        GroupSpec::new(dims, names)
    }

    pub fn count(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Column offset of group `g` in the concatenated feature vector.
    pub fn offset(&self, g: usize) -> usize {
        self.dims[..g].iter().sum()
    }
}

/// Architecture of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Latent dimension `K`.
    pub latent_dim: usize,
    /// Recurrent state width `H`.
    pub hidden_dim: usize,
    /// Rows `p` of every loading matrix.
    pub loading_rows: usize,
    /// Maximum sequence length `T`.
    pub max_timesteps: usize,
    /// Output width of the `x` and `z` feature extractors.
    pub feature_dim: usize,
    pub groups: GroupSpec,
    /// Drop the recurrence: `h` stays zero and nothing depends on it.
    #[serde(default)]
    pub static_mode: bool,
    /// Separate decoder networks per timestep instead of one per group.
    #[serde(default)]
    pub per_timestep_decoders: bool,
}

impl ModelConfig {
    pub fn new(latent_dim: usize, hidden_dim: usize, loading_rows: usize, max_timesteps: usize, groups: GroupSpec) -> Self {
        ModelConfig {
            latent_dim,
            hidden_dim,
            loading_rows,
            max_timesteps,
            feature_dim: 32,
            groups,
            static_mode: false,
            per_timestep_decoders: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("hidden_dim", self.hidden_dim),
            ("loading_rows", self.loading_rows),
            ("max_timesteps", self.max_timesteps),
            ("feature_dim", self.feature_dim),
        ] {
            if v == 0 {
                return Err(DlgfaError::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        // re-run the GroupSpec checks in case it came from deserialization
        GroupSpec::new(self.groups.dims.clone(), self.groups.names.clone())?;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.groups.total_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_spec_invariants() {
        assert!(GroupSpec::unnamed(vec![]).is_err());
        assert!(GroupSpec::unnamed(vec![2, 0]).is_err());
        assert!(GroupSpec::new(vec![1], vec![]).is_err());
        let g = GroupSpec::unnamed(vec![2, 3, 1]).unwrap();
        assert_eq!(g.total_dim(), 6);
        assert_eq!(g.offset(2), 5);
        assert_eq!(g.names()[1], "g2");
    }

    #[test]
    fn config_rejects_zero_sizes() {
        let g = GroupSpec::unnamed(vec![2]).unwrap();
        assert!(ModelConfig::new(0, 4, 1, 2, g.clone()).validate().is_err());
        assert!(ModelConfig::new(2, 4, 1, 0, g.clone()).validate().is_err());
        assert!(ModelConfig::new(2, 4, 1, 2, g).validate().is_ok());
    }
}
