//! Typed layer descriptions: what the network text format parses into and
//! what the layer factory consumes.

use crate::kernels::norm::LrnParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Train,
    Test,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Train => write!(f, "TRAIN"),
            Phase::Test => write!(f, "TEST"),
        }
    }
}

/// Weight/bias initialization.
#[derive(Debug, Clone, PartialEq)]
pub enum Filler {
    Constant(f64),
    /// Uniform in +-sqrt(3 / fan_in).
    Xavier,
    Gaussian {
        mean: f64,
        std: f64,
    },
    Uniform {
        min: f64,
        max: f64,
    },
}

impl Default for Filler {
    fn default() -> Self {
        Filler::Constant(0.0)
    }
}

/// Per-parameter learning-rate and decay multipliers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub lr_mult: f64,
    pub decay_mult: f64,
}

impl Default for ParamSpec {
    fn default() -> Self {
        ParamSpec { lr_mult: 1.0, decay_mult: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub num_output: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub group: usize,
    pub bias_term: bool,
    pub weight_filler: Filler,
    pub bias_filler: Filler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMethod {
    Max,
    Ave,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolParams {
    pub method: PoolMethod,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub global: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpParams {
    pub num_output: usize,
    pub bias_term: bool,
    pub weight_filler: Filler,
    pub bias_filler: Filler,
}

/// Data-layer settings taken from the description; database sources are
/// replaced by attached datasets or synthetic inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DataParams {
    pub batch_size: usize,
    pub scale: f64,
    pub crop_size: Option<usize>,
}

impl Default for DataParams {
    fn default() -> Self {
        DataParams { batch_size: 1, scale: 1.0, crop_size: None }
    }
}

/// Kind-specific configuration; the variant is the layer type.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Data(DataParams),
    Convolution(ConvParams),
    Pooling(PoolParams),
    InnerProduct(IpParams),
    ReLU { negative_slope: f64 },
    Lrn(LrnParams),
    Dropout { ratio: f64 },
    Concat { axis: usize },
    Split,
    Softmax,
    SoftmaxWithLoss,
    Accuracy { top_k: usize },
}

impl LayerParams {
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerParams::Data(_) => "Data",
            LayerParams::Convolution(_) => "Convolution",
            LayerParams::Pooling(_) => "Pooling",
            LayerParams::InnerProduct(_) => "InnerProduct",
            LayerParams::ReLU { .. } => "ReLU",
            LayerParams::Lrn(_) => "LRN",
            LayerParams::Dropout { .. } => "Dropout",
            LayerParams::Concat { .. } => "Concat",
            LayerParams::Split => "Split",
            LayerParams::Softmax => "Softmax",
            LayerParams::SoftmaxWithLoss => "SoftmaxWithLoss",
            LayerParams::Accuracy { .. } => "Accuracy",
        }
    }

    /// Whether this layer owns learnable parameters.
    pub fn has_params(&self) -> bool {
        matches!(self, LayerParams::Convolution(_) | LayerParams::InnerProduct(_))
    }
}

/// One layer of a network description.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub bottoms: Vec<String>,
    pub tops: Vec<String>,
    /// Restricts the layer to one phase when set.
    pub phase: Option<Phase>,
    /// Per-top loss weights; loss layers default to 1, others to 0.
    pub loss_weights: Vec<f64>,
    pub param_specs: Vec<ParamSpec>,
    pub params: LayerParams,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, params: LayerParams) -> Self {
        LayerSpec {
            name: name.into(),
            bottoms: Vec::new(),
            tops: Vec::new(),
            phase: None,
            loss_weights: Vec::new(),
            param_specs: Vec::new(),
            params,
        }
    }

    pub fn with_bottoms(mut self, bottoms: &[&str]) -> Self {
        self.bottoms = bottoms.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_tops(mut self, tops: &[&str]) -> Self {
        self.tops = tops.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn loss_weight(&self, top_index: usize) -> f64 {
        if let Some(w) = self.loss_weights.get(top_index) {
            return *w;
        }
        if matches!(self.params, LayerParams::SoftmaxWithLoss) && top_index == 0 {
            1.0
        } else {
            0.0
        }
    }

    /// lr/decay multipliers for parameter `i`, defaulted when unspecified.
    pub fn param_spec(&self, i: usize) -> ParamSpec {
        self.param_specs.get(i).copied().unwrap_or_default()
    }

    pub fn runs_in(&self, phase: Phase) -> bool {
        self.phase.is_none_or(|p| p == phase)
    }
}
