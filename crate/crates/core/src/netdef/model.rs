//! Typed extraction: message trees into network and solver descriptions,
//! plus the canonical serializer used for round-trip checks.

use super::text::{parse_text, Field, Message, Value};
use super::ParseError;
use crate::kernels::norm::LrnParams;
use crate::layers::spec::{
    ConvParams, DataParams, Filler, IpParams, LayerParams, LayerSpec, ParamSpec, Phase,
    PoolMethod, PoolParams,
};

/// Declared top-level input blob.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDecl {
    pub name: String,
    pub dims: Vec<usize>,
}

/// Parsed network description.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetSpec {
    pub name: String,
    pub inputs: Vec<InputDecl>,
    pub layers: Vec<LayerSpec>,
    /// Unknown keys (forward compatibility): reported, not fatal.
    pub warnings: Vec<String>,
    /// Known keys replaced by this runtime (database sources, mean files).
    pub ignored: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverType {
    Sgd,
    Nesterov,
    AdaGrad,
    RmsProp,
    AdaDelta,
    Adam,
}

impl SolverType {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverType::Sgd => "SGD",
            SolverType::Nesterov => "Nesterov",
            SolverType::AdaGrad => "AdaGrad",
            SolverType::RmsProp => "RMSProp",
            SolverType::AdaDelta => "AdaDelta",
            SolverType::Adam => "Adam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrPolicy {
    Fixed,
    Step,
    Exp,
    Inv,
    Multistep,
    Poly,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularization {
    L2,
    L1,
}

/// Parsed training regime.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSpec {
    pub net: String,
    pub solver_type: SolverType,
    pub base_lr: f64,
    pub lr_policy: LrPolicy,
    pub gamma: f64,
    pub power: f64,
    pub stepsize: u64,
    pub stepvalues: Vec<u64>,
    pub momentum: f64,
    pub momentum2: f64,
    pub delta: f64,
    pub rms_decay: f64,
    pub weight_decay: f64,
    pub regularization: Regularization,
    pub iter_size: u64,
    pub max_iter: u64,
    pub test_interval: u64,
    pub test_iter: u64,
    pub display: u64,
    pub snapshot: u64,
    pub snapshot_prefix: String,
    pub random_seed: Option<u64>,
    pub warnings: Vec<String>,
}

fn err(f: &Field, message: impl Into<String>) -> ParseError {
    ParseError { message: message.into(), line: f.line, col: f.col }
}

fn expect_num(f: &Field) -> Result<f64, ParseError> {
    match &f.value {
        Value::Num(v) => Ok(*v),
        other => Err(err(f, format!("'{}' expects a number, found {}", f.name, other.type_name()))),
    }
}

fn expect_index(f: &Field) -> Result<usize, ParseError> {
    let v = expect_num(f)?;
    if v < 0.0 || v.fract() != 0.0 {
        return Err(err(f, format!("'{}' expects a non-negative integer", f.name)));
    }
    Ok(v as usize)
}

fn expect_str(f: &Field) -> Result<&str, ParseError> {
    match &f.value {
        Value::Str(s) => Ok(s),
        other => Err(err(f, format!("'{}' expects a string, found {}", f.name, other.type_name()))),
    }
}

fn expect_msg(f: &Field) -> Result<&Message, ParseError> {
    match &f.value {
        Value::Msg(m) => Ok(m),
        other => Err(err(f, format!("'{}' expects a block, found {}", f.name, other.type_name()))),
    }
}

fn expect_bool(f: &Field) -> Result<bool, ParseError> {
    match &f.value {
        Value::Ident(s) if s == "true" => Ok(true),
        Value::Ident(s) if s == "false" => Ok(false),
        Value::Num(v) if *v == 1.0 => Ok(true),
        Value::Num(v) if *v == 0.0 => Ok(false),
        other => Err(err(f, format!("'{}' expects true/false, found {}", f.name, other.type_name()))),
    }
}

/// String or bare-identifier token (enum values appear both ways).
fn expect_token(f: &Field) -> Result<String, ParseError> {
    match &f.value {
        Value::Str(s) => Ok(s.clone()),
        Value::Ident(s) => Ok(s.clone()),
        other => Err(err(f, format!("'{}' expects a token, found {}", f.name, other.type_name()))),
    }
}

fn parse_phase(f: &Field) -> Result<Phase, ParseError> {
    match expect_token(f)?.as_str() {
        "TRAIN" => Ok(Phase::Train),
        "TEST" => Ok(Phase::Test),
        other => Err(err(f, format!("unknown phase '{}'", other))),
    }
}

fn parse_filler(msg: &Message, f: &Field) -> Result<Filler, ParseError> {
    let kind = match msg.first("type") {
        Some(t) => expect_token(t)?,
        None => "constant".to_string(),
    };
    let getnum = |name: &str, default: f64| -> Result<f64, ParseError> {
        msg.first(name).map(expect_num).transpose().map(|v| v.unwrap_or(default))
    };
    match kind.as_str() {
        "constant" => Ok(Filler::Constant(getnum("value", 0.0)?)),
        "xavier" => Ok(Filler::Xavier),
        "gaussian" => Ok(Filler::Gaussian { mean: getnum("mean", 0.0)?, std: getnum("std", 1.0)? }),
        "uniform" => Ok(Filler::Uniform { min: getnum("min", 0.0)?, max: getnum("max", 1.0)? }),
        other => Err(err(f, format!("unknown filler type '{}'", other))),
    }
}

struct Ctx {
    warnings: Vec<String>,
    ignored: Vec<String>,
}

impl Ctx {
    fn warn_unknown(&mut self, scope: &str, f: &Field) {
        self.warnings.push(format!(
            "line {}:{}: unknown key '{}' in {} (ignored)",
            f.line, f.col, f.name, scope
        ));
    }

    fn note_ignored(&mut self, scope: &str, f: &Field) {
        self.ignored.push(format!("{}.{} (replaced by runtime ingestion)", scope, f.name));
    }
}

/// Spatial pair pulled from `kernel_size`/`kernel_h`/`kernel_w` style keys.
fn spatial_pair(
    msg: &Message,
    base: &str,
    h_key: &str,
    w_key: &str,
    default: Option<usize>,
    field: &Field,
) -> Result<Option<(usize, usize)>, ParseError> {
    if let Some(f) = msg.first(base) {
        let v = expect_index(f)?;
        return Ok(Some((v, v)));
    }
    let h = msg.first(h_key).map(expect_index).transpose()?;
    let w = msg.first(w_key).map(expect_index).transpose()?;
    match (h, w) {
        (Some(h), Some(w)) => Ok(Some((h, w))),
        (None, None) => Ok(default.map(|d| (d, d))),
        _ => Err(err(field, format!("both {} and {} must be given", h_key, w_key))),
    }
}

fn parse_conv_params(msg: &Message, field: &Field, ctx: &mut Ctx) -> Result<ConvParams, ParseError> {
    let mut p = ConvParams {
        num_output: 0,
        kernel_h: 0,
        kernel_w: 0,
        pad_h: 0,
        pad_w: 0,
        stride_h: 1,
        stride_w: 1,
        group: 1,
        bias_term: true,
        weight_filler: Filler::Xavier,
        bias_filler: Filler::Constant(0.0),
    };
    for f in &msg.fields {
        match f.name.as_str() {
            "num_output" => p.num_output = expect_index(f)?,
            "kernel_size" | "kernel_h" | "kernel_w" | "pad" | "pad_h" | "pad_w" | "stride"
            | "stride_h" | "stride_w" => {}
            "group" => p.group = expect_index(f)?,
            "bias_term" => p.bias_term = expect_bool(f)?,
            "weight_filler" => p.weight_filler = parse_filler(expect_msg(f)?, f)?,
            "bias_filler" => p.bias_filler = parse_filler(expect_msg(f)?, f)?,
            _ => ctx.warn_unknown("convolution_param", f),
        }
    }
    let kernel = spatial_pair(msg, "kernel_size", "kernel_h", "kernel_w", None, field)?
        .ok_or_else(|| err(field, "convolution_param requires kernel_size"))?;
    let pad = spatial_pair(msg, "pad", "pad_h", "pad_w", Some(0), field)?.unwrap();
    let stride = spatial_pair(msg, "stride", "stride_h", "stride_w", Some(1), field)?.unwrap();
    p.kernel_h = kernel.0;
    p.kernel_w = kernel.1;
    p.pad_h = pad.0;
    p.pad_w = pad.1;
    p.stride_h = stride.0;
    p.stride_w = stride.1;
    if p.num_output == 0 {
        return Err(err(field, "convolution_param requires num_output >= 1"));
    }
    if p.group == 0 {
        return Err(err(field, "group must be >= 1"));
    }
    Ok(p)
}

fn parse_pool_params(msg: &Message, field: &Field, ctx: &mut Ctx) -> Result<PoolParams, ParseError> {
    let mut method = PoolMethod::Max;
    let mut global = false;
    for f in &msg.fields {
        match f.name.as_str() {
            "pool" => {
                method = match expect_token(f)?.as_str() {
                    "MAX" => PoolMethod::Max,
                    "AVE" => PoolMethod::Ave,
                    other => return Err(err(f, format!("unsupported pool method '{}'", other))),
                }
            }
            "global_pooling" => global = expect_bool(f)?,
            "kernel_size" | "kernel_h" | "kernel_w" | "pad" | "pad_h" | "pad_w" | "stride"
            | "stride_h" | "stride_w" => {}
            _ => ctx.warn_unknown("pooling_param", f),
        }
    }
    let kernel = spatial_pair(msg, "kernel_size", "kernel_h", "kernel_w", Some(0), field)?.unwrap();
    if kernel.0 == 0 && !global {
        return Err(err(field, "pooling_param requires kernel_size or global_pooling"));
    }
    let pad = spatial_pair(msg, "pad", "pad_h", "pad_w", Some(0), field)?.unwrap();
    let stride = spatial_pair(msg, "stride", "stride_h", "stride_w", Some(1), field)?.unwrap();
    Ok(PoolParams {
        method,
        kernel_h: kernel.0,
        kernel_w: kernel.1,
        pad_h: pad.0,
        pad_w: pad.1,
        stride_h: stride.0,
        stride_w: stride.1,
        global,
    })
}

fn parse_ip_params(msg: &Message, field: &Field, ctx: &mut Ctx) -> Result<IpParams, ParseError> {
    let mut p = IpParams {
        num_output: 0,
        bias_term: true,
        weight_filler: Filler::Xavier,
        bias_filler: Filler::Constant(0.0),
    };
    for f in &msg.fields {
        match f.name.as_str() {
            "num_output" => p.num_output = expect_index(f)?,
            "bias_term" => p.bias_term = expect_bool(f)?,
            "weight_filler" => p.weight_filler = parse_filler(expect_msg(f)?, f)?,
            "bias_filler" => p.bias_filler = parse_filler(expect_msg(f)?, f)?,
            _ => ctx.warn_unknown("inner_product_param", f),
        }
    }
    if p.num_output == 0 {
        return Err(err(field, "inner_product_param requires num_output >= 1"));
    }
    Ok(p)
}

fn parse_lrn_params(msg: &Message, ctx: &mut Ctx) -> Result<LrnParams, ParseError> {
    let mut p = LrnParams::default();
    for f in &msg.fields {
        match f.name.as_str() {
            "local_size" => p.local_size = expect_index(f)?,
            "alpha" => p.alpha = expect_num(f)?,
            "beta" => p.beta = expect_num(f)?,
            "k" => p.k = expect_num(f)?,
            "norm_region" => {
                let token = expect_token(f)?;
                if token != "ACROSS_CHANNELS" {
                    return Err(err(f, format!("unsupported norm_region '{}'", token)));
                }
            }
            _ => ctx.warn_unknown("lrn_param", f),
        }
    }
    Ok(p)
}

/// Layer type token (modern string or legacy enum) to params skeleton.
fn params_for_type(token: &str, f: &Field) -> Result<LayerParams, ParseError> {
    Ok(match token {
        "Data" | "DATA" => LayerParams::Data(DataParams::default()),
        "Convolution" | "CONVOLUTION" => LayerParams::Convolution(ConvParams {
            num_output: 0,
            kernel_h: 0,
            kernel_w: 0,
            pad_h: 0,
            pad_w: 0,
            stride_h: 1,
            stride_w: 1,
            group: 1,
            bias_term: true,
            weight_filler: Filler::Xavier,
            bias_filler: Filler::Constant(0.0),
        }),
        "Pooling" | "POOLING" => LayerParams::Pooling(PoolParams {
            method: PoolMethod::Max,
            kernel_h: 0,
            kernel_w: 0,
            pad_h: 0,
            pad_w: 0,
            stride_h: 1,
            stride_w: 1,
            global: false,
        }),
        "InnerProduct" | "INNER_PRODUCT" => LayerParams::InnerProduct(IpParams {
            num_output: 0,
            bias_term: true,
            weight_filler: Filler::Xavier,
            bias_filler: Filler::Constant(0.0),
        }),
        "ReLU" | "RELU" => LayerParams::ReLU { negative_slope: 0.0 },
        "LRN" => LayerParams::Lrn(LrnParams::default()),
        "Dropout" | "DROPOUT" => LayerParams::Dropout { ratio: 0.5 },
        "Concat" | "CONCAT" => LayerParams::Concat { axis: 1 },
        "Split" | "SPLIT" => LayerParams::Split,
        "Softmax" | "SOFTMAX" => LayerParams::Softmax,
        "SoftmaxWithLoss" | "SOFTMAX_LOSS" => LayerParams::SoftmaxWithLoss,
        "Accuracy" | "ACCURACY" => LayerParams::Accuracy { top_k: 1 },
        other => return Err(err(f, format!("unsupported layer type '{}'", other))),
    })
}

fn parse_layer(field: &Field, ctx: &mut Ctx) -> Result<Option<LayerSpec>, ParseError> {
    let msg = expect_msg(field)?;
    let name = match msg.first("name") {
        Some(f) => expect_str(f)?.to_string(),
        None => return Err(err(field, "layer missing required field 'name'")),
    };
    let type_field = msg.first("type").ok_or_else(|| {
        err(field, format!("layer '{}' missing required field 'type'", name))
    })?;
    let type_token = expect_token(type_field)?;

    // Input layers become input declarations, handled by the caller.
    if type_token == "Input" || type_token == "INPUT" {
        return Ok(None);
    }

    let mut spec = LayerSpec::new(name.clone(), params_for_type(&type_token, type_field)?);
    let mut legacy_lr: Vec<f64> = Vec::new();
    let mut legacy_decay: Vec<f64> = Vec::new();

    for f in &msg.fields {
        match f.name.as_str() {
            "name" | "type" => {}
            "bottom" => spec.bottoms.push(expect_str(f)?.to_string()),
            "top" => spec.tops.push(expect_str(f)?.to_string()),
            "loss_weight" => spec.loss_weights.push(expect_num(f)?),
            "include" => {
                let inc = expect_msg(f)?;
                if let Some(pf) = inc.first("phase") {
                    spec.phase = Some(parse_phase(pf)?);
                }
            }
            "exclude" => {
                let exc = expect_msg(f)?;
                if let Some(pf) = exc.first("phase") {
                    spec.phase = Some(match parse_phase(pf)? {
                        Phase::Train => Phase::Test,
                        Phase::Test => Phase::Train,
                    });
                }
            }
            "param" => {
                let pm = expect_msg(f)?;
                let mut ps = ParamSpec::default();
                for pf in &pm.fields {
                    match pf.name.as_str() {
                        "lr_mult" => ps.lr_mult = expect_num(pf)?,
                        "decay_mult" => ps.decay_mult = expect_num(pf)?,
                        "name" | "share_mode" => ctx.note_ignored("param", pf),
                        _ => ctx.warn_unknown("param", pf),
                    }
                }
                spec.param_specs.push(ps);
            }
            "blobs_lr" => legacy_lr.push(expect_num(f)?),
            "weight_decay" => legacy_decay.push(expect_num(f)?),
            "convolution_param" => {
                if let LayerParams::Convolution(_) = spec.params {
                    spec.params = LayerParams::Convolution(parse_conv_params(expect_msg(f)?, f, ctx)?);
                } else {
                    ctx.warn_unknown("layer", f);
                }
            }
            "pooling_param" => {
                if let LayerParams::Pooling(_) = spec.params {
                    spec.params = LayerParams::Pooling(parse_pool_params(expect_msg(f)?, f, ctx)?);
                } else {
                    ctx.warn_unknown("layer", f);
                }
            }
            "inner_product_param" => {
                if let LayerParams::InnerProduct(_) = spec.params {
                    spec.params = LayerParams::InnerProduct(parse_ip_params(expect_msg(f)?, f, ctx)?);
                } else {
                    ctx.warn_unknown("layer", f);
                }
            }
            "lrn_param" => {
                if let LayerParams::Lrn(_) = spec.params {
                    spec.params = LayerParams::Lrn(parse_lrn_params(expect_msg(f)?, ctx)?);
                } else {
                    ctx.warn_unknown("layer", f);
                }
            }
            "relu_param" => {
                let rm = expect_msg(f)?;
                let slope = rm.first("negative_slope").map(expect_num).transpose()?.unwrap_or(0.0);
                if let LayerParams::ReLU { .. } = spec.params {
                    spec.params = LayerParams::ReLU { negative_slope: slope };
                }
            }
            "dropout_param" => {
                let dm = expect_msg(f)?;
                let ratio = dm.first("dropout_ratio").map(expect_num).transpose()?.unwrap_or(0.5);
                if !(0.0..1.0).contains(&ratio) {
                    return Err(err(f, format!("dropout_ratio {} must be in [0,1)", ratio)));
                }
                if let LayerParams::Dropout { .. } = spec.params {
                    spec.params = LayerParams::Dropout { ratio };
                }
            }
            "concat_param" => {
                let cm = expect_msg(f)?;
                let axis = match (cm.first("axis"), cm.first("concat_dim")) {
                    (Some(a), _) => expect_index(a)?,
                    (None, Some(d)) => expect_index(d)?,
                    (None, None) => 1,
                };
                if let LayerParams::Concat { .. } = spec.params {
                    spec.params = LayerParams::Concat { axis };
                }
            }
            "accuracy_param" => {
                let am = expect_msg(f)?;
                let top_k = am.first("top_k").map(expect_index).transpose()?.unwrap_or(1);
                if let LayerParams::Accuracy { .. } = spec.params {
                    spec.params = LayerParams::Accuracy { top_k };
                }
            }
            "softmax_param" | "loss_param" => ctx.note_ignored("layer", f),
            "data_param" => {
                let dm = expect_msg(f)?;
                let mut dp = match &spec.params {
                    LayerParams::Data(d) => d.clone(),
                    _ => {
                        ctx.warn_unknown("layer", f);
                        continue;
                    }
                };
                for df in &dm.fields {
                    match df.name.as_str() {
                        "batch_size" => dp.batch_size = expect_index(df)?,
                        "source" | "backend" | "rand_skip" | "prefetch" => {
                            ctx.note_ignored("data_param", df)
                        }
                        "scale" => dp.scale = expect_num(df)?,
                        _ => ctx.warn_unknown("data_param", df),
                    }
                }
                spec.params = LayerParams::Data(dp);
            }
            "transform_param" => {
                let tm = expect_msg(f)?;
                let mut dp = match &spec.params {
                    LayerParams::Data(d) => d.clone(),
                    _ => {
                        ctx.warn_unknown("layer", f);
                        continue;
                    }
                };
                for tf in &tm.fields {
                    match tf.name.as_str() {
                        "scale" => dp.scale = expect_num(tf)?,
                        "crop_size" => dp.crop_size = Some(expect_index(tf)?),
                        "mean_file" | "mirror" | "mean_value" => ctx.note_ignored("transform_param", tf),
                        _ => ctx.warn_unknown("transform_param", tf),
                    }
                }
                spec.params = LayerParams::Data(dp);
            }
            _ => ctx.warn_unknown(&format!("layer '{}'", name), f),
        }
    }

    // Legacy multiplier lists map positionally onto param slots.
    if !legacy_lr.is_empty() || !legacy_decay.is_empty() {
        let count = legacy_lr.len().max(legacy_decay.len());
        for i in 0..count {
            spec.param_specs.push(ParamSpec {
                lr_mult: legacy_lr.get(i).copied().unwrap_or(1.0),
                decay_mult: legacy_decay.get(i).copied().unwrap_or(1.0),
            });
        }
    }

    if spec.tops.is_empty() {
        return Err(err(field, format!("layer '{}' declares no top", name)));
    }
    if let LayerParams::Convolution(ref c) = spec.params {
        if c.num_output == 0 {
            return Err(err(field, format!("layer '{}' missing convolution_param", name)));
        }
    }
    if let LayerParams::InnerProduct(ref p) = spec.params {
        if p.num_output == 0 {
            return Err(err(field, format!("layer '{}' missing inner_product_param", name)));
        }
    }
    Ok(Some(spec))
}

/// Extracts an Input-typed layer into input declarations.
fn input_layer_decls(field: &Field) -> Result<Vec<InputDecl>, ParseError> {
    let msg = expect_msg(field)?;
    let mut names = Vec::new();
    for f in msg.all("top") {
        names.push(expect_str(f)?.to_string());
    }
    let param = msg
        .first("input_param")
        .ok_or_else(|| err(field, "Input layer requires input_param"))?;
    let pm = expect_msg(param)?;
    let mut shapes = Vec::new();
    for sf in pm.all("shape") {
        let sm = expect_msg(sf)?;
        let mut dims = Vec::new();
        for df in sm.all("dim") {
            dims.push(expect_index(df)?);
        }
        shapes.push(dims);
    }
    if names.len() != shapes.len() {
        return Err(err(field, "Input layer tops and shapes must pair up"));
    }
    Ok(names
        .into_iter()
        .zip(shapes)
        .map(|(name, dims)| InputDecl { name, dims })
        .collect())
}

/// Parses a network description.
pub fn parse_net(text: &str) -> Result<NetSpec, ParseError> {
    let msg = parse_text(text)?;
    let mut ctx = Ctx { warnings: Vec::new(), ignored: Vec::new() };
    let mut net = NetSpec::default();

    // Legacy top-level input declarations.
    let mut input_names: Vec<String> = Vec::new();
    let mut flat_dims: Vec<usize> = Vec::new();
    let mut shaped: Vec<Vec<usize>> = Vec::new();

    for f in &msg.fields {
        match f.name.as_str() {
            "name" => net.name = expect_str(f)?.to_string(),
            "input" => input_names.push(expect_str(f)?.to_string()),
            "input_dim" => flat_dims.push(expect_index(f)?),
            "input_shape" => {
                let sm = expect_msg(f)?;
                let mut dims = Vec::new();
                for df in sm.all("dim") {
                    dims.push(expect_index(df)?);
                }
                shaped.push(dims);
            }
            "layer" | "layers" => match parse_layer(f, &mut ctx)? {
                Some(spec) => net.layers.push(spec),
                None => net.inputs.extend(input_layer_decls(f)?),
            },
            "state" | "force_backward" | "debug_info" => ctx.note_ignored("net", f),
            _ => ctx.warn_unknown("net", f),
        }
    }

    if !input_names.is_empty() {
        if !shaped.is_empty() {
            if shaped.len() != input_names.len() {
                return Err(ParseError {
                    message: "input and input_shape counts differ".into(),
                    line: 1,
                    col: 1,
                });
            }
            for (name, dims) in input_names.iter().zip(shaped) {
                net.inputs.push(InputDecl { name: name.clone(), dims });
            }
        } else {
            if flat_dims.len() != 4 * input_names.len() {
                return Err(ParseError {
                    message: format!(
                        "expected {} input_dim entries for {} inputs, found {}",
                        4 * input_names.len(),
                        input_names.len(),
                        flat_dims.len()
                    ),
                    line: 1,
                    col: 1,
                });
            }
            for (i, name) in input_names.iter().enumerate() {
                net.inputs.push(InputDecl {
                    name: name.clone(),
                    dims: flat_dims[4 * i..4 * i + 4].to_vec(),
                });
            }
        }
    }

    // Names must be unique among layers that can coexist in one phase
    // (phase-filtered twins may share a name, as data layers commonly do).
    let mut seen = std::collections::HashSet::new();
    for layer in &net.layers {
        let phases: &[Phase] = match layer.phase {
            Some(p) => &[p],
            None => &[Phase::Train, Phase::Test],
        };
        for &p in phases {
            if !seen.insert((layer.name.clone(), p)) {
                return Err(ParseError {
                    message: format!("duplicate layer name '{}' in phase {}", layer.name, p),
                    line: 1,
                    col: 1,
                });
            }
        }
    }

    net.warnings = ctx.warnings;
    net.ignored = ctx.ignored;
    Ok(net)
}

/// Parses a solver description; classic defaults applied, policy fields
/// validated so schedule evaluation cannot fail later.
pub fn parse_solver(text: &str) -> Result<SolverSpec, ParseError> {
    let msg = parse_text(text)?;
    let mut warnings = Vec::new();
    let mut s = SolverSpec {
        net: String::new(),
        solver_type: SolverType::Sgd,
        base_lr: 0.01,
        lr_policy: LrPolicy::Fixed,
        gamma: 0.0,
        power: 0.0,
        stepsize: 0,
        stepvalues: Vec::new(),
        momentum: 0.0,
        momentum2: 0.999,
        delta: 1e-8,
        rms_decay: 0.99,
        weight_decay: 0.0,
        regularization: Regularization::L2,
        iter_size: 1,
        max_iter: 0,
        test_interval: 0,
        test_iter: 0,
        display: 0,
        snapshot: 0,
        snapshot_prefix: String::new(),
        random_seed: None,
        warnings: Vec::new(),
    };
    let mut momentum_set = false;
    let mut base_lr_field: Option<&Field> = None;

    for f in &msg.fields {
        match f.name.as_str() {
            "net" => s.net = expect_str(f)?.to_string(),
            "type" | "solver_type" => {
                let token = expect_token(f)?;
                let norm: String = token.chars().filter(|c| *c != '_').collect::<String>().to_lowercase();
                s.solver_type = match norm.as_str() {
                    "sgd" => SolverType::Sgd,
                    "nesterov" => SolverType::Nesterov,
                    "adagrad" => SolverType::AdaGrad,
                    "rmsprop" => SolverType::RmsProp,
                    "adadelta" => SolverType::AdaDelta,
                    "adam" => SolverType::Adam,
                    _ => return Err(err(f, format!("unknown solver type '{}'", token))),
                };
            }
            "base_lr" => {
                s.base_lr = expect_num(f)?;
                base_lr_field = Some(f);
            }
            "lr_policy" => {
                s.lr_policy = match expect_token(f)?.as_str() {
                    "fixed" => LrPolicy::Fixed,
                    "step" => LrPolicy::Step,
                    "exp" => LrPolicy::Exp,
                    "inv" => LrPolicy::Inv,
                    "multistep" => LrPolicy::Multistep,
                    "poly" => LrPolicy::Poly,
                    "sigmoid" => LrPolicy::Sigmoid,
                    other => return Err(err(f, format!("unknown lr_policy '{}'", other))),
                };
            }
            "gamma" => s.gamma = expect_num(f)?,
            "power" => s.power = expect_num(f)?,
            "stepsize" => s.stepsize = expect_index(f)? as u64,
            "stepvalue" => s.stepvalues.push(expect_index(f)? as u64),
            "momentum" => {
                s.momentum = expect_num(f)?;
                momentum_set = true;
            }
            "momentum2" => s.momentum2 = expect_num(f)?,
            "delta" => s.delta = expect_num(f)?,
            "rms_decay" => s.rms_decay = expect_num(f)?,
            "weight_decay" => s.weight_decay = expect_num(f)?,
            "regularization_type" => {
                s.regularization = match expect_token(f)?.as_str() {
                    "L2" => Regularization::L2,
                    "L1" => Regularization::L1,
                    other => return Err(err(f, format!("unknown regularization '{}'", other))),
                };
            }
            "iter_size" => s.iter_size = expect_index(f)?.max(1) as u64,
            "max_iter" => s.max_iter = expect_index(f)? as u64,
            "test_interval" => s.test_interval = expect_index(f)? as u64,
            "test_iter" => s.test_iter = expect_index(f)? as u64,
            "display" => s.display = expect_index(f)? as u64,
            "snapshot" => s.snapshot = expect_index(f)? as u64,
            "snapshot_prefix" => s.snapshot_prefix = expect_str(f)?.to_string(),
            "random_seed" => s.random_seed = Some(expect_index(f)? as u64),
            "solver_mode" | "device_id" | "test_initialization" | "snapshot_after_train"
            | "snapshot_format" | "average_loss" | "test_compute_loss" | "debug_info" => {
                warnings.push(format!("line {}:{}: '{}' ignored", f.line, f.col, f.name));
            }
            _ => warnings.push(format!(
                "line {}:{}: unknown key '{}' in solver (ignored)",
                f.line, f.col, f.name
            )),
        }
    }

    if s.net.is_empty() {
        return Err(ParseError { message: "solver missing net path".into(), line: 1, col: 1 });
    }
    if s.base_lr <= 0.0 {
        let f = base_lr_field.expect("base_lr seen if non-default");
        return Err(err(f, format!("base_lr must be > 0, got {}", s.base_lr)));
    }
    match s.lr_policy {
        LrPolicy::Step | LrPolicy::Sigmoid if s.stepsize == 0 => {
            return Err(ParseError {
                message: format!("lr_policy {:?} requires stepsize", s.lr_policy),
                line: 1,
                col: 1,
            });
        }
        LrPolicy::Poly if s.max_iter == 0 => {
            return Err(ParseError {
                message: "lr_policy poly requires max_iter".into(),
                line: 1,
                col: 1,
            });
        }
        _ => {}
    }
    if s.solver_type == SolverType::Adam && !momentum_set {
        s.momentum = 0.9;
    }
    s.warnings = warnings;
    Ok(s)
}

fn filler_to_text(name: &str, filler: &Filler, out: &mut String, indent: &str) {
    out.push_str(&format!("{}{} {{\n", indent, name));
    match filler {
        Filler::Constant(v) => {
            out.push_str(&format!("{}  type: \"constant\"\n", indent));
            out.push_str(&format!("{}  value: {}\n", indent, v));
        }
        Filler::Xavier => out.push_str(&format!("{}  type: \"xavier\"\n", indent)),
        Filler::Gaussian { mean, std } => {
            out.push_str(&format!("{}  type: \"gaussian\"\n", indent));
            out.push_str(&format!("{}  mean: {}\n", indent, mean));
            out.push_str(&format!("{}  std: {}\n", indent, std));
        }
        Filler::Uniform { min, max } => {
            out.push_str(&format!("{}  type: \"uniform\"\n", indent));
            out.push_str(&format!("{}  min: {}\n", indent, min));
            out.push_str(&format!("{}  max: {}\n", indent, max));
        }
    }
    out.push_str(&format!("{}}}\n", indent));
}

/// Serializes a network description back to canonical text; parsing the
/// output yields an equal description.
pub fn net_to_text(net: &NetSpec) -> String {
    let mut out = String::new();
    if !net.name.is_empty() {
        out.push_str(&format!("name: \"{}\"\n", net.name));
    }
    for input in &net.inputs {
        out.push_str(&format!("input: \"{}\"\n", input.name));
        out.push_str("input_shape {\n");
        for d in &input.dims {
            out.push_str(&format!("  dim: {}\n", d));
        }
        out.push_str("}\n");
    }
    for layer in &net.layers {
        out.push_str("layer {\n");
        out.push_str(&format!("  name: \"{}\"\n", layer.name));
        out.push_str(&format!("  type: \"{}\"\n", layer.params.type_name()));
        for b in &layer.bottoms {
            out.push_str(&format!("  bottom: \"{}\"\n", b));
        }
        for t in &layer.tops {
            out.push_str(&format!("  top: \"{}\"\n", t));
        }
        for w in &layer.loss_weights {
            out.push_str(&format!("  loss_weight: {}\n", w));
        }
        if let Some(phase) = layer.phase {
            out.push_str(&format!("  include {{\n    phase: {}\n  }}\n", phase));
        }
        for ps in &layer.param_specs {
            out.push_str(&format!(
                "  param {{\n    lr_mult: {}\n    decay_mult: {}\n  }}\n",
                ps.lr_mult, ps.decay_mult
            ));
        }
        match &layer.params {
            LayerParams::Data(d) => {
                out.push_str(&format!(
                    "  data_param {{\n    batch_size: {}\n  }}\n",
                    d.batch_size
                ));
                out.push_str("  transform_param {\n");
                out.push_str(&format!("    scale: {}\n", d.scale));
                if let Some(c) = d.crop_size {
                    out.push_str(&format!("    crop_size: {}\n", c));
                }
                out.push_str("  }\n");
            }
            LayerParams::Convolution(c) => {
                out.push_str("  convolution_param {\n");
                out.push_str(&format!("    num_output: {}\n", c.num_output));
                out.push_str(&format!("    kernel_h: {}\n    kernel_w: {}\n", c.kernel_h, c.kernel_w));
                out.push_str(&format!("    pad_h: {}\n    pad_w: {}\n", c.pad_h, c.pad_w));
                out.push_str(&format!("    stride_h: {}\n    stride_w: {}\n", c.stride_h, c.stride_w));
                out.push_str(&format!("    group: {}\n", c.group));
                out.push_str(&format!("    bias_term: {}\n", c.bias_term));
                filler_to_text("weight_filler", &c.weight_filler, &mut out, "    ");
                filler_to_text("bias_filler", &c.bias_filler, &mut out, "    ");
                out.push_str("  }\n");
            }
            LayerParams::Pooling(p) => {
                out.push_str("  pooling_param {\n");
                out.push_str(&format!(
                    "    pool: {}\n",
                    match p.method {
                        PoolMethod::Max => "MAX",
                        PoolMethod::Ave => "AVE",
                    }
                ));
                if p.global {
                    out.push_str("    global_pooling: true\n");
                } else {
                    out.push_str(&format!("    kernel_h: {}\n    kernel_w: {}\n", p.kernel_h, p.kernel_w));
                }
                out.push_str(&format!("    pad_h: {}\n    pad_w: {}\n", p.pad_h, p.pad_w));
                out.push_str(&format!("    stride_h: {}\n    stride_w: {}\n", p.stride_h, p.stride_w));
                out.push_str("  }\n");
            }
            LayerParams::InnerProduct(p) => {
                out.push_str("  inner_product_param {\n");
                out.push_str(&format!("    num_output: {}\n", p.num_output));
                out.push_str(&format!("    bias_term: {}\n", p.bias_term));
                filler_to_text("weight_filler", &p.weight_filler, &mut out, "    ");
                filler_to_text("bias_filler", &p.bias_filler, &mut out, "    ");
                out.push_str("  }\n");
            }
            LayerParams::ReLU { negative_slope } => {
                if *negative_slope != 0.0 {
                    out.push_str(&format!(
                        "  relu_param {{\n    negative_slope: {}\n  }}\n",
                        negative_slope
                    ));
                }
            }
            LayerParams::Lrn(p) => {
                out.push_str("  lrn_param {\n");
                out.push_str(&format!("    local_size: {}\n", p.local_size));
                out.push_str(&format!("    alpha: {}\n", p.alpha));
                out.push_str(&format!("    beta: {}\n", p.beta));
                out.push_str(&format!("    k: {}\n", p.k));
                out.push_str("  }\n");
            }
            LayerParams::Dropout { ratio } => {
                out.push_str(&format!("  dropout_param {{\n    dropout_ratio: {}\n  }}\n", ratio));
            }
            LayerParams::Concat { axis } => {
                out.push_str(&format!("  concat_param {{\n    axis: {}\n  }}\n", axis));
            }
            LayerParams::Accuracy { top_k } => {
                out.push_str(&format!("  accuracy_param {{\n    top_k: {}\n  }}\n", top_k));
            }
            LayerParams::Split | LayerParams::Softmax | LayerParams::SoftmaxWithLoss => {}
        }
        out.push_str("}\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_two_layer_net() {
        let net = parse_net(
            r#"
            name: "tiny"
            layer { name: "data" type: "Data" top: "data" top: "label"
                    data_param { batch_size: 4 } }
            layer { name: "loss" type: "SoftmaxWithLoss" bottom: "data" bottom: "label" top: "loss" }
            "#,
        )
        .unwrap();
        assert_eq!(net.layers.len(), 2);
        assert_eq!(net.layers[1].bottoms, ["data", "label"]);
        assert_eq!(net.layers[1].tops, ["loss"]);
        assert!(net.warnings.is_empty());
    }

    #[test]
    fn layer_missing_type_names_the_layer() {
        let e = parse_net("layer { name: \"x\" top: \"x\" }").unwrap_err();
        assert!(e.message.contains("'x'"), "{}", e.message);
        assert!(e.message.contains("type"));
    }

    #[test]
    fn legacy_enum_style() {
        let net = parse_net(
            r#"
            layers { name: "c" type: CONVOLUTION bottom: "data" top: "c"
                     blobs_lr: 1 blobs_lr: 2 weight_decay: 1 weight_decay: 0
                     convolution_param { num_output: 8 kernel_size: 3 } }
            "#,
        )
        .unwrap();
        let layer = &net.layers[0];
        assert_eq!(layer.params.type_name(), "Convolution");
        assert_eq!(layer.param_specs.len(), 2);
        assert_eq!(layer.param_specs[0].lr_mult, 1.0);
        assert_eq!(layer.param_specs[1].lr_mult, 2.0);
        assert_eq!(layer.param_specs[1].decay_mult, 0.0);
    }

    #[test]
    fn unknown_keys_warn_but_parse() {
        let net = parse_net(
            r#"
            layer { name: "d" type: "Data" top: "d" future_param { x: 1 } }
            "#,
        )
        .unwrap();
        assert_eq!(net.warnings.len(), 1);
        assert!(net.warnings[0].contains("future_param"));
    }

    #[test]
    fn input_declaration_styles() {
        let legacy = parse_net("input: \"data\" input_dim: 1 input_dim: 3 input_dim: 8 input_dim: 8").unwrap();
        assert_eq!(legacy.inputs[0].dims, [1, 3, 8, 8]);
        let shaped = parse_net("input: \"data\" input_shape { dim: 2 dim: 1 dim: 4 dim: 4 }").unwrap();
        assert_eq!(shaped.inputs[0].dims, [2, 1, 4, 4]);
        let modern = parse_net(
            "layer { name: \"data\" type: \"Input\" top: \"data\" input_param { shape: { dim: 5 dim: 2 } } }",
        )
        .unwrap();
        assert_eq!(modern.inputs[0].dims, [5, 2]);
    }

    #[test]
    fn solver_canonical_values() {
        let s = parse_solver(
            r#"
            net: "lenet_train_test.prototxt"
            base_lr: 0.01
            lr_policy: "inv"
            gamma: 0.0001
            power: 0.75
            momentum: 0.9
            weight_decay: 0.0005
            "#,
        )
        .unwrap();
        assert_eq!(s.solver_type, SolverType::Sgd);
        assert_eq!(s.base_lr, 0.01);
        assert_eq!(s.lr_policy, LrPolicy::Inv);
        assert_eq!(s.gamma, 0.0001);
        assert_eq!(s.power, 0.75);
        assert_eq!(s.momentum, 0.9);
        assert_eq!(s.weight_decay, 0.0005);
    }

    #[test]
    fn adam_defaults() {
        let s = parse_solver("net: \"n\" type: \"Adam\" base_lr: 0.001 lr_policy: \"fixed\"").unwrap();
        assert_eq!(s.solver_type, SolverType::Adam);
        assert_eq!(s.momentum, 0.9);
        assert_eq!(s.momentum2, 0.999);
        assert_eq!(s.delta, 1e-8);
        // Underscored alias accepted.
        let s2 = parse_solver("net: \"n\" type: \"RMS_Prop\" base_lr: 0.1 lr_policy: \"fixed\"").unwrap();
        assert_eq!(s2.solver_type, SolverType::RmsProp);
    }

    #[test]
    fn negative_base_lr_rejected() {
        assert!(parse_solver("net: \"n\" base_lr: -0.5 lr_policy: \"fixed\"").is_err());
    }

    #[test]
    fn missing_net_path_rejected() {
        assert!(parse_solver("base_lr: 0.1 lr_policy: \"fixed\"").is_err());
    }

    #[test]
    fn round_trip_idempotent() {
        let text = r#"
            name: "rt"
            layer { name: "data" type: "Data" top: "data" top: "label"
                    include { phase: TRAIN }
                    transform_param { scale: 0.5 crop_size: 8 }
                    data_param { batch_size: 16 } }
            layer { name: "conv" type: "Convolution" bottom: "data" top: "conv"
                    param { lr_mult: 1 } param { lr_mult: 2 decay_mult: 0 }
                    convolution_param { num_output: 4 kernel_size: 3 pad: 1 stride: 2 group: 2
                                        weight_filler { type: "gaussian" std: 0.01 }
                                        bias_filler { type: "constant" value: 0.1 } } }
            layer { name: "relu" type: "ReLU" bottom: "conv" top: "conv" relu_param { negative_slope: 0.1 } }
            layer { name: "pool" type: "Pooling" bottom: "conv" top: "pool"
                    pooling_param { pool: AVE kernel_size: 2 stride: 2 } }
            layer { name: "ip" type: "InnerProduct" bottom: "pool" top: "ip"
                    inner_product_param { num_output: 10 } }
            layer { name: "loss" type: "SoftmaxWithLoss" bottom: "ip" bottom: "label" top: "loss" loss_weight: 0.5 }
            "#;
        let first = parse_net(text).unwrap();
        let serialized = net_to_text(&first);
        let second = parse_net(&serialized).unwrap();
        assert_eq!(first.name, second.name);
        assert_eq!(first.inputs, second.inputs);
        assert_eq!(first.layers, second.layers);
        // And a second round is textually stable.
        assert_eq!(serialized, net_to_text(&second));
    }
}
