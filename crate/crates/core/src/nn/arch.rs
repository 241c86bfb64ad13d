use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
}

/// Per-point network applied to every element of a set input, followed by
/// pooling. Mean pooling makes the embedding invariant to point order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetEmbedArch {
    pub point_dim: usize,
    #[serde(default = "SetEmbedArch::default_layers")]
    pub n_layers: usize,
    #[serde(default = "SetEmbedArch::default_width")]
    pub width: usize,
    #[serde(default = "SetEmbedArch::default_out_dim")]
    pub out_dim: usize,
    #[serde(default)]
    pub pooling: Pooling,
}

impl SetEmbedArch {
    fn default_layers() -> usize {
        2
    }
    fn default_width() -> usize {
        100
    }
    fn default_out_dim() -> usize {
        20
    }

    pub fn new(point_dim: usize) -> Self {
        Self {
            point_dim,
            n_layers: Self::default_layers(),
            width: Self::default_width(),
            out_dim: Self::default_out_dim(),
            pooling: Pooling::Mean,
        }
    }
}

/// Feed-forward network shape.
///
/// An input row is laid out as `[direct features (input_dim) | set points]`.
/// Without an embedding the row is exactly `input_dim` wide. With one, the
/// tail holds `K × point_dim` values for any `K ≥ 1`; the pooled embedding is
/// concatenated to the direct features before the trunk.
///
/// With `residual` the trunk is an affine input projection to `hidden_dim`,
/// `n_hidden_layers` pre-activation blocks `h + W₂·relu(W₁·relu(h))`, and an
/// affine head. Without it, the trunk is a plain relu MLP with
/// `n_hidden_layers` hidden layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetArch {
    pub input_dim: usize,
    #[serde(default = "NetArch::default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "NetArch::default_layers")]
    pub n_hidden_layers: usize,
    #[serde(default = "NetArch::default_residual")]
    pub residual: bool,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub embedding: Option<SetEmbedArch>,
}

impl NetArch {
    fn default_hidden() -> usize {
        64
    }
    fn default_layers() -> usize {
        3
    }
    fn default_residual() -> bool {
        true
    }

    /// Residual network with 3 hidden layers of 64 units.
    pub fn residual(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: Self::default_hidden(),
            n_hidden_layers: Self::default_layers(),
            residual: true,
            activation: Activation::Relu,
            embedding: None,
        }
    }

    /// Plain relu MLP, used by the two-sample classifier.
    pub fn mlp(input_dim: usize, hidden_dim: usize, n_hidden_layers: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            n_hidden_layers,
            residual: false,
            activation: Activation::Relu,
            embedding: None,
        }
    }

    pub fn with_embedding(mut self, embedding: SetEmbedArch) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 && self.embedding.is_none() {
            return Err(Error::InvalidArch("input_dim must be >= 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidArch("hidden_dim must be >= 1".into()));
        }
        if self.n_hidden_layers == 0 {
            return Err(Error::InvalidArch("n_hidden_layers must be >= 1".into()));
        }
        if let Some(e) = &self.embedding {
            if e.point_dim == 0 || e.n_layers == 0 || e.width == 0 || e.out_dim == 0 {
                return Err(Error::InvalidArch(
                    "set embedding dimensions must all be >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Width of the vector entering the trunk.
    pub fn trunk_input_dim(&self) -> usize {
        self.input_dim + self.embedding.as_ref().map_or(0, |e| e.out_dim)
    }

    /// Number of set points encoded in a row of the given width.
    pub fn set_size(&self, row_len: usize) -> Result<usize> {
        match &self.embedding {
            None => {
                if row_len != self.input_dim {
                    return Err(Error::dims("network input row", self.input_dim, row_len));
                }
                Ok(0)
            }
            Some(e) => {
                let tail = row_len.checked_sub(self.input_dim).unwrap_or(0);
                if row_len <= self.input_dim || tail % e.point_dim != 0 {
                    return Err(Error::dims(
                        "set input row",
                        self.input_dim + e.point_dim,
                        row_len,
                    ));
                }
                Ok(tail / e.point_dim)
            }
        }
    }
}

/// Position of one affine layer inside the flat parameter vector. The weight
/// matrix is stored row-major as `(rows = out, cols = in)`, followed by the
/// `rows` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn n_weights(&self) -> usize {
        self.rows * self.cols
    }
    pub fn bias_offset(&self) -> usize {
        self.offset + self.n_weights()
    }
    pub fn end(&self) -> usize {
        self.bias_offset() + self.rows
    }
}

/// Layer table derived from an architecture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    /// Embedding layers: `n_layers` hidden layers then the output projection.
    pub embed: Vec<LayerShape>,
    /// Trunk layers. Residual: input projection, then two per block.
    /// Plain: one per hidden layer.
    pub trunk: Vec<LayerShape>,
    pub head: LayerShape,
    pub n_params: usize,
}

impl Layout {
    pub fn new(arch: &NetArch) -> Result<Self> {
        arch.validate()?;
        let mut offset = 0usize;
        let mut push = |rows: usize, cols: usize| {
            let l = LayerShape { rows, cols, offset };
            offset = l.end();
            l
        };
        let mut embed = Vec::new();
        if let Some(e) = &arch.embedding {
            let mut prev = e.point_dim;
            for _ in 0..e.n_layers {
                embed.push(push(e.width, prev));
                prev = e.width;
            }
            embed.push(push(e.out_dim, prev));
        }
        let h = arch.hidden_dim;
        let mut trunk = Vec::new();
        if arch.residual {
            trunk.push(push(h, arch.trunk_input_dim()));
            for _ in 0..arch.n_hidden_layers {
                trunk.push(push(h, h));
                trunk.push(push(h, h));
            }
        } else {
            let mut prev = arch.trunk_input_dim();
            for _ in 0..arch.n_hidden_layers {
                trunk.push(push(h, prev));
                prev = h;
            }
        }
        let head = push(1, h);
        Ok(Self {
            embed,
            trunk,
            head,
            n_params: offset,
        })
    }

    pub fn all(&self) -> impl Iterator<Item = &LayerShape> {
        self.embed
            .iter()
            .chain(self.trunk.iter())
            .chain(std::iter::once(&self.head))
    }
}
