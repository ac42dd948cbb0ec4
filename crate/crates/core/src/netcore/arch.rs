use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::DIMS;

/// Layer layout of the regression network: conv → ReLU → max-pool stages,
/// flatten, then dense layers with ReLU and dropout before the last one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub input_channels: usize,
    pub input_len: usize,
    pub conv_filters: Vec<usize>,
    pub conv_kernel_sizes: Vec<usize>,
    pub pool_sizes: Vec<usize>,
    pub dense_sizes: Vec<usize>,
    pub dropout_p: f64,
    pub use_bias: bool,
}

/// Lengths through one conv stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub pool: usize,
    pub in_len: usize,
    pub conv_len: usize,
    pub pooled_len: usize,
}

impl ArchDescriptor {
    /// The fixed architecture: filters (8, 8, 16, 16) of size (25, 5, 5, 5),
    /// pooling 3 after each, dense 50 → 1, dropout 0.5, no biases.
    pub fn standard(input_len: usize) -> Result<Self> {
        let arch = ArchDescriptor {
            input_channels: DIMS,
            input_len,
            conv_filters: vec![8, 8, 16, 16],
            conv_kernel_sizes: vec![25, 5, 5, 5],
            pool_sizes: vec![3, 3, 3, 3],
            dense_sizes: vec![50, 1],
            dropout_p: 0.5,
            use_bias: false,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.use_bias {
            return bad("bias terms are not supported".into());
        }
        if self.input_channels == 0 {
            return bad("input must have at least one channel".into());
        }
        let n = self.conv_filters.len();
        if n == 0 || self.conv_kernel_sizes.len() != n || self.pool_sizes.len() != n {
            return bad("conv_filters, conv_kernel_sizes and pool_sizes must be non-empty and equally long".into());
        }
        if self.conv_filters.contains(&0) || self.conv_kernel_sizes.contains(&0) || self.pool_sizes.contains(&0) {
            return bad("conv/pool sizes must be positive".into());
        }
        if self.dense_sizes.last() != Some(&1) || self.dense_sizes.contains(&0) {
            return bad("dense layers must be positive and end in a single output".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout probability {} outside [0, 1)", self.dropout_p));
        }
        self.flat_len().map(|_| ())
    }

    /// Per-stage shapes; errors when the input is too short for the stack.
    pub fn stages(&self) -> Result<Vec<StageShape>> {
        let mut len = self.input_len;
        let mut channels = self.input_channels;
        let mut out = Vec::with_capacity(self.conv_filters.len());
        for i in 0..self.conv_filters.len() {
            let k = self.conv_kernel_sizes[i];
            let w = self.pool_sizes[i];
            if len < k || len - k + 1 < w {
                return Err(Error::InvalidConfig(format!(
                    "input length {} leaves no features at conv stage {i}",
                    self.input_len
                )));
            }
            let conv_len = len - k + 1;
            let pooled_len = conv_len / w;
            out.push(StageShape {
                in_channels: channels,
                out_channels: self.conv_filters[i],
                kernel: k,
                pool: w,
                in_len: len,
                conv_len,
                pooled_len,
            });
            len = pooled_len;
            channels = self.conv_filters[i];
        }
        Ok(out)
    }

    /// Length of the flattened feature vector after the conv stages.
    pub fn flat_len(&self) -> Result<usize> {
        let stages = self.stages()?;
        let last = stages.last().expect("validated non-empty");
        Ok(last.out_channels * last.pooled_len)
    }

    /// Weight shapes in declared order: conv layers then dense layers.
    pub fn weight_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes: Vec<Vec<usize>> = self
            .stages()?
            .iter()
            .map(|s| vec![s.out_channels, s.in_channels, s.kernel])
            .collect();
        let mut fan_in = self.flat_len()?;
        for &units in &self.dense_sizes {
            shapes.push(vec![units, fan_in]);
            fan_in = units;
        }
        Ok(shapes)
    }

    pub fn n_conv(&self) -> usize {
        self.conv_filters.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_lengths_for_700() {
        let arch = ArchDescriptor::standard(700).unwrap();
        let lens: Vec<(usize, usize)> = arch.stages().unwrap().iter().map(|s| (s.conv_len, s.pooled_len)).collect();
        assert_eq!(lens, vec![(676, 225), (221, 73), (69, 23), (19, 6)]);
        assert_eq!(arch.flat_len().unwrap(), 96);
        assert_eq!(
            arch.weight_shapes().unwrap(),
            vec![vec![8, 2, 25], vec![8, 8, 5], vec![16, 8, 5], vec![16, 16, 5], vec![50, 96], vec![1, 50]]
        );
    }

    #[test]
    fn too_short_input_rejected() {
        assert!(ArchDescriptor::standard(100).is_err());
        assert!(ArchDescriptor::standard(20).is_err());
    }

    #[test]
    fn bias_rejected() {
        let mut arch = ArchDescriptor::standard(700).unwrap();
        arch.use_bias = true;
        assert!(arch.validate().is_err());
    }
}
