//! Run configuration files: flat `section.key=value` lines.
//!
//! `#` or `;` start a comment; blank lines are ignored. Unknown and duplicate
//! keys are rejected with the offending key named. Defaults for every
//! optional key are listed in the README and in `Defaults` below.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::encoding::{EncodingConfig, Variant};
use crate::error::{QffError, Result};
use crate::mlp::{Activation, MlpConfig, OutputTransform};
use crate::tasks::image::Sampling;
use crate::tasks::sdf::SdfShape;

/// Which task a run drives.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskConfig {
    Image { path: PathBuf, sampling: Sampling },
    Sdf { shape: SdfShape, eikonal_weight: f64 },
}

impl TaskConfig {
    pub fn is_image(&self) -> bool {
        matches!(self, TaskConfig::Image { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    /// Feature-bank learning rate; `None` uses the task preset.
    pub lr_qff: Option<f64>,
    /// MLP learning rate; `None` uses the task preset.
    pub lr_mlp: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub eval_interval: u64,
}

/// Target for `bench-convergence`: a fixed metric value, or the final metric
/// of the first listed run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BenchTargetConfig {
    Auto,
    Value(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRunConfig {
    pub name: String,
    pub encoder: EncodingConfig,
    pub mlp: MlpConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub runs: Vec<BenchRunConfig>,
    pub target: BenchTargetConfig,
}

/// A fully parsed run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub encoder: EncodingConfig,
    pub mlp: MlpConfig,
    pub optim: OptimConfig,
    pub output: OutputConfig,
    pub bench: Option<BenchConfig>,
}

/// Key-value bag tracking which keys were consumed.
struct KeyBag {
    entries: BTreeMap<String, String>,
}

impl KeyBag {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(QffError::Config(format!(
                    "line {}: expected key=value, got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if entries.insert(key.clone(), value).is_some() {
                return Err(QffError::Config(format!("duplicate key '{key}'")));
            }
        }
        Ok(KeyBag { entries })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.entries.keys().next() {
            return Err(QffError::Config(format!("unknown key '{key}'")));
        }
        Ok(())
    }
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| QffError::Config(format!("{key}: expected an integer, got '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| QffError::Config(format!("{key}: expected an integer, got '{v}'")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| QffError::Config(format!("{key}: expected a number, got '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(QffError::Config(format!("{key}: expected true/false, got '{v}'"))),
    }
}

fn parse_variant(key: &str, v: &str) -> Result<Variant> {
    match v {
        "pe_only" => Ok(Variant::PeOnly),
        "qff_lite" => Ok(Variant::QffLite),
        "qff_3d" => Ok(Variant::Qff3d),
        _ => Err(QffError::Config(format!(
            "{key}: expected pe_only | qff_lite | qff_3d, got '{v}'"
        ))),
    }
}

fn parse_shape(v: &str) -> Result<SdfShape> {
    let (kind, args) = v.split_once(':').unwrap_or((v, ""));
    let nums: Vec<f64> = if args.is_empty() {
        Vec::new()
    } else {
        args.split(',')
            .map(|s| parse_f64("task.shape", s.trim()))
            .collect::<Result<_>>()?
    };
    match (kind, nums.as_slice()) {
        ("sphere", [r]) => Ok(SdfShape::Sphere { radius: *r }),
        ("box", [x, y, z]) => Ok(SdfShape::Box3 { half_extents: [*x, *y, *z] }),
        ("torus", [major, minor]) => Ok(SdfShape::Torus { major: *major, minor: *minor }),
        _ => Err(QffError::Config(format!(
            "task.shape: expected sphere:R | box:X,Y,Z | torus:R,r, got '{v}'"
        ))),
    }
}

/// Documented defaults for optional keys.
pub mod defaults {
    pub const SHAPE: &str = "sphere:0.5";
    pub const EIKONAL_WEIGHT: f64 = 0.1;
    pub const SAMPLING: &str = "permutation";
    pub const FREQUENCIES: usize = 8;
    pub const BINS: usize = 64;
    pub const CHANNELS: usize = 1;
    pub const ADD_PE: bool = true;
    pub const MLP_LAYERS: usize = 3;
    pub const MLP_WIDTH: usize = 256;
    pub const MLP_OMEGA: f64 = 30.0;
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;
    pub const STEPS: u64 = 2000;
    pub const BATCH_IMAGE: usize = 1024;
    pub const BATCH_SDF: usize = 256;
    pub const SEED: u64 = 0;
    pub const OUT_DIR: &str = "out";
    pub const EVAL_INTERVAL: u64 = 100;
}

fn encoder_from_bag(bag: &mut KeyBag, prefix: &str, is_image: bool, base: Option<&EncodingConfig>) -> Result<EncodingConfig> {
    let key = |k: &str| format!("{prefix}{k}");
    let take_or = |bag: &mut KeyBag, k: &str| bag.take(&key(k));

    let default_dims = if is_image { 2 } else { 3 };
    let variant = match take_or(bag, "encoder.variant") {
        Some(v) => parse_variant(&key("encoder.variant"), &v)?,
        None => match base {
            Some(b) => b.variant,
            None => return Err(QffError::Config(format!("missing required key '{}'", key("encoder.variant")))),
        },
    };
    let input_dims = match take_or(bag, "encoder.input_dims") {
        Some(v) => parse_usize(&key("encoder.input_dims"), &v)?,
        None => base.map(|b| b.input_dims).unwrap_or(default_dims),
    };
    let num_frequencies = match take_or(bag, "encoder.frequencies") {
        Some(v) => parse_usize(&key("encoder.frequencies"), &v)?,
        None => base.map(|b| b.num_frequencies).unwrap_or(defaults::FREQUENCIES),
    };
    let bins = match take_or(bag, "encoder.bins") {
        Some(v) => parse_usize(&key("encoder.bins"), &v)?,
        None => base.map(|b| b.bins_per_axis).unwrap_or(defaults::BINS),
    };
    let channels = match take_or(bag, "encoder.channels") {
        Some(v) => parse_usize(&key("encoder.channels"), &v)?,
        None => base.map(|b| b.feature_channels).unwrap_or(defaults::CHANNELS),
    };
    let add_pe = match take_or(bag, "encoder.add_pe") {
        Some(v) => parse_bool(&key("encoder.add_pe"), &v)?,
        None => base.map(|b| b.add_pe).unwrap_or(defaults::ADD_PE),
    };
    let expected_dims = if is_image { 2 } else { 3 };
    if input_dims != expected_dims {
        return Err(QffError::Config(format!(
            "{}: this task uses {expected_dims} input dimensions, got {input_dims}",
            key("encoder.input_dims")
        )));
    }
    let cfg = EncodingConfig {
        input_dims,
        num_frequencies,
        bins_per_axis: bins,
        feature_channels: channels,
        variant,
        add_pe,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn mlp_from_bag(
    bag: &mut KeyBag,
    prefix: &str,
    encoder: &EncodingConfig,
    is_image: bool,
    base: Option<&MlpConfig>,
) -> Result<MlpConfig> {
    let key = |k: &str| format!("{prefix}{k}");
    let num_layers = match bag.take(&key("mlp.layers")) {
        Some(v) => parse_usize(&key("mlp.layers"), &v)?,
        None => base.map(|b| b.num_layers).unwrap_or(defaults::MLP_LAYERS),
    };
    let hidden_width = match bag.take(&key("mlp.width")) {
        Some(v) => parse_usize(&key("mlp.width"), &v)?,
        None => base.map(|b| b.hidden_width).unwrap_or(defaults::MLP_WIDTH),
    };
    let omega = match bag.take(&key("mlp.omega")) {
        Some(v) => parse_f64(&key("mlp.omega"), &v)?,
        None => match base.map(|b| b.activation) {
            Some(Activation::Sine { omega }) => omega,
            _ => defaults::MLP_OMEGA,
        },
    };
    let activation = match bag.take(&key("mlp.activation")) {
        Some(v) => match v.as_str() {
            "relu" => Activation::Relu,
            "sine" => Activation::Sine { omega },
            _ => {
                return Err(QffError::Config(format!(
                    "{}: expected relu | sine, got '{v}'",
                    key("mlp.activation")
                )))
            }
        },
        None => base.map(|b| b.activation).unwrap_or(Activation::Relu),
    };
    let default_transform = if is_image {
        OutputTransform::Sigmoid
    } else {
        OutputTransform::None
    };
    let output_transform = match bag.take(&key("mlp.output_transform")) {
        Some(v) => match v.as_str() {
            "none" => OutputTransform::None,
            "sigmoid" => OutputTransform::Sigmoid,
            _ => {
                return Err(QffError::Config(format!(
                    "{}: expected none | sigmoid, got '{v}'",
                    key("mlp.output_transform")
                )))
            }
        },
        None => base.map(|b| b.output_transform).unwrap_or(default_transform),
    };
    let cfg = MlpConfig {
        input_width: encoder.encoded_width(),
        hidden_width,
        num_layers,
        activation,
        output_width: if is_image { 3 } else { 1 },
        output_transform,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a configuration file's text.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut bag = KeyBag::parse(text)?;

    let kind = bag
        .take("task.kind")
        .ok_or_else(|| QffError::Config("missing required key 'task.kind'".into()))?;
    let is_image = match kind.as_str() {
        "image" => true,
        "sdf" => false,
        _ => {
            return Err(QffError::Config(format!(
                "task.kind: expected image | sdf, got '{kind}'"
            )))
        }
    };

    let task = if is_image {
        let path = bag
            .take("task.image")
            .ok_or_else(|| QffError::Config("missing required key 'task.image'".into()))?;
        let sampling = match bag.take("task.sampling").as_deref().unwrap_or(defaults::SAMPLING) {
            "permutation" => Sampling::Permutation,
            "random" => Sampling::Random,
            v => {
                return Err(QffError::Config(format!(
                    "task.sampling: expected permutation | random, got '{v}'"
                )))
            }
        };
        TaskConfig::Image {
            path: PathBuf::from(path),
            sampling,
        }
    } else {
        let shape = match bag.take("task.shape") {
            Some(v) => parse_shape(&v)?,
            None => parse_shape(defaults::SHAPE)?,
        };
        let eikonal_weight = match bag.take("task.eikonal_weight") {
            Some(v) => parse_f64("task.eikonal_weight", &v)?,
            None => defaults::EIKONAL_WEIGHT,
        };
        if eikonal_weight < 0.0 {
            return Err(QffError::Config("task.eikonal_weight must be >= 0".into()));
        }
        TaskConfig::Sdf { shape, eikonal_weight }
    };

    let encoder = encoder_from_bag(&mut bag, "", is_image, None)?;
    let mlp = mlp_from_bag(&mut bag, "", &encoder, is_image, None)?;

    let optim = OptimConfig {
        lr_qff: bag.take("optim.lr_qff").map(|v| parse_f64("optim.lr_qff", &v)).transpose()?,
        lr_mlp: bag.take("optim.lr_mlp").map(|v| parse_f64("optim.lr_mlp", &v)).transpose()?,
        beta1: bag.take("optim.beta1").map(|v| parse_f64("optim.beta1", &v)).transpose()?.unwrap_or(defaults::BETA1),
        beta2: bag.take("optim.beta2").map(|v| parse_f64("optim.beta2", &v)).transpose()?.unwrap_or(defaults::BETA2),
        eps: bag.take("optim.eps").map(|v| parse_f64("optim.eps", &v)).transpose()?.unwrap_or(defaults::EPS),
        steps: bag.take("optim.steps").map(|v| parse_u64("optim.steps", &v)).transpose()?.unwrap_or(defaults::STEPS),
        batch: bag
            .take("optim.batch")
            .map(|v| parse_usize("optim.batch", &v))
            .transpose()?
            .unwrap_or(if is_image { defaults::BATCH_IMAGE } else { defaults::BATCH_SDF }),
        seed: bag.take("optim.seed").map(|v| parse_u64("optim.seed", &v)).transpose()?.unwrap_or(defaults::SEED),
    };
    if optim.batch == 0 {
        return Err(QffError::Config("optim.batch must be >= 1".into()));
    }

    let output = OutputConfig {
        dir: PathBuf::from(bag.take("output.dir").unwrap_or_else(|| defaults::OUT_DIR.into())),
        eval_interval: bag
            .take("output.eval_interval")
            .map(|v| parse_u64("output.eval_interval", &v))
            .transpose()?
            .unwrap_or(defaults::EVAL_INTERVAL),
    };
    if output.eval_interval == 0 {
        return Err(QffError::Config("output.eval_interval must be >= 1".into()));
    }

    let bench = match bag.take("bench.runs") {
        None => {
            if let Some(v) = bag.take("bench.target") {
                return Err(QffError::Config(format!(
                    "bench.target={v} given without bench.runs"
                )));
            }
            None
        }
        Some(names) => {
            let target = match bag.take("bench.target").as_deref().unwrap_or("auto") {
                "auto" => BenchTargetConfig::Auto,
                v => BenchTargetConfig::Value(parse_f64("bench.target", v)?),
            };
            let mut runs = Vec::new();
            for name in names.split(',').map(str::trim) {
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                    return Err(QffError::Config(format!(
                        "bench.runs: run name '{name}' must be non-empty alphanumeric/_/-"
                    )));
                }
                let prefix = format!("run.{name}.");
                let enc = encoder_from_bag(&mut bag, &prefix, is_image, Some(&encoder))?;
                let run_mlp = mlp_from_bag(&mut bag, &prefix, &enc, is_image, Some(&mlp))?;
                runs.push(BenchRunConfig {
                    name: name.to_string(),
                    encoder: enc,
                    mlp: run_mlp,
                });
            }
            Some(BenchConfig { runs, target })
        }
    };

    bag.finish()?;
    Ok(RunConfig {
        task,
        encoder,
        mlp,
        optim,
        output,
        bench,
    })
}

/// Canonical text form of a model's encoder + MLP sections. Deterministic
/// key order; used verbatim as the checkpoint header.
pub fn model_spec_to_text(enc: &EncodingConfig, mlp: &MlpConfig) -> String {
    let mut s = String::new();
    s.push_str(&format!("encoder.variant={}\n", enc.variant.as_str()));
    s.push_str(&format!("encoder.input_dims={}\n", enc.input_dims));
    s.push_str(&format!("encoder.frequencies={}\n", enc.num_frequencies));
    s.push_str(&format!("encoder.bins={}\n", enc.bins_per_axis));
    s.push_str(&format!("encoder.channels={}\n", enc.feature_channels));
    s.push_str(&format!("encoder.add_pe={}\n", enc.add_pe));
    s.push_str(&format!("mlp.input_width={}\n", mlp.input_width));
    s.push_str(&format!("mlp.width={}\n", mlp.hidden_width));
    s.push_str(&format!("mlp.layers={}\n", mlp.num_layers));
    match mlp.activation {
        Activation::Relu => s.push_str("mlp.activation=relu\n"),
        Activation::Sine { omega } => {
            s.push_str("mlp.activation=sine\n");
            s.push_str(&format!("mlp.omega={omega}\n"));
        }
    }
    s.push_str(&format!("mlp.output_width={}\n", mlp.output_width));
    let transform = match mlp.output_transform {
        OutputTransform::None => "none",
        OutputTransform::Sigmoid => "sigmoid",
    };
    s.push_str(&format!("mlp.output_transform={transform}\n"));
    s.push_str("storage=f32\n");
    s
}

/// Parse the canonical model spec back (checkpoint loading).
pub fn model_spec_from_text(text: &str) -> Result<(EncodingConfig, MlpConfig)> {
    let mut bag = KeyBag::parse(text)?;
    let req = |bag: &mut KeyBag, k: &str| {
        bag.take(k)
            .ok_or_else(|| QffError::Corruption(format!("checkpoint header missing '{k}'")))
    };
    let variant = parse_variant("encoder.variant", &req(&mut bag, "encoder.variant")?)?;
    let enc = EncodingConfig {
        variant,
        input_dims: parse_usize("encoder.input_dims", &req(&mut bag, "encoder.input_dims")?)?,
        num_frequencies: parse_usize("encoder.frequencies", &req(&mut bag, "encoder.frequencies")?)?,
        bins_per_axis: parse_usize("encoder.bins", &req(&mut bag, "encoder.bins")?)?,
        feature_channels: parse_usize("encoder.channels", &req(&mut bag, "encoder.channels")?)?,
        add_pe: parse_bool("encoder.add_pe", &req(&mut bag, "encoder.add_pe")?)?,
    };
    let activation = match req(&mut bag, "mlp.activation")?.as_str() {
        "relu" => Activation::Relu,
        "sine" => Activation::Sine {
            omega: parse_f64("mlp.omega", &req(&mut bag, "mlp.omega")?)?,
        },
        v => return Err(QffError::Corruption(format!("unknown activation '{v}' in header"))),
    };
    let mlp = MlpConfig {
        input_width: parse_usize("mlp.input_width", &req(&mut bag, "mlp.input_width")?)?,
        hidden_width: parse_usize("mlp.width", &req(&mut bag, "mlp.width")?)?,
        num_layers: parse_usize("mlp.layers", &req(&mut bag, "mlp.layers")?)?,
        activation,
        output_width: parse_usize("mlp.output_width", &req(&mut bag, "mlp.output_width")?)?,
        output_transform: match req(&mut bag, "mlp.output_transform")?.as_str() {
            "none" => OutputTransform::None,
            "sigmoid" => OutputTransform::Sigmoid,
            v => {
                return Err(QffError::Corruption(format!(
                    "unknown output transform '{v}' in header"
                )))
            }
        },
    };
    let storage = req(&mut bag, "storage")?;
    if storage != "f32" {
        return Err(QffError::Corruption(format!(
            "unsupported checkpoint storage '{storage}'"
        )));
    }
    bag.finish().map_err(|e| match e {
        QffError::Config(msg) => QffError::Corruption(format!("checkpoint header: {msg}")),
        other => other,
    })?;
    enc.validate()?;
    mlp.validate()?;
    Ok((enc, mlp))
}

#[cfg(test)]
mod tests {
    use super::*;

    const IMAGE_CFG: &str = "\
task.kind=image
task.image=target.ppm
encoder.variant=qff_lite
encoder.frequencies=8
encoder.bins=64
mlp.layers=3
mlp.width=128
optim.steps=500
optim.seed=3
output.dir=runs/demo
";

    #[test]
    fn parses_image_config_with_defaults() {
        let cfg = parse_run_config(IMAGE_CFG).unwrap();
        assert!(cfg.task.is_image());
        assert_eq!(cfg.encoder.variant, Variant::QffLite);
        assert_eq!(cfg.encoder.input_dims, 2);
        assert_eq!(cfg.encoder.feature_channels, defaults::CHANNELS);
        assert_eq!(cfg.mlp.output_width, 3);
        assert_eq!(cfg.mlp.output_transform, OutputTransform::Sigmoid);
        assert_eq!(cfg.optim.steps, 500);
        assert_eq!(cfg.optim.batch, defaults::BATCH_IMAGE);
        assert_eq!(cfg.output.eval_interval, defaults::EVAL_INTERVAL);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = format!("{IMAGE_CFG}encoder.bogus_knob=7\n");
        let err = parse_run_config(&text).unwrap_err();
        assert!(err.to_string().contains("encoder.bogus_knob"), "{err}");
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = format!("{IMAGE_CFG}optim.steps=7\n");
        let err = parse_run_config(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn sdf_defaults() {
        let cfg = parse_run_config("task.kind=sdf\nencoder.variant=qff_3d\nencoder.frequencies=4\nencoder.bins=32\nencoder.channels=8\n").unwrap();
        match cfg.task {
            TaskConfig::Sdf { shape, eikonal_weight } => {
                assert_eq!(shape, SdfShape::Sphere { radius: 0.5 });
                assert_eq!(eikonal_weight, defaults::EIKONAL_WEIGHT);
            }
            _ => panic!("expected sdf task"),
        }
        assert_eq!(cfg.encoder.input_dims, 3);
        assert_eq!(cfg.mlp.output_width, 1);
        assert_eq!(cfg.mlp.output_transform, OutputTransform::None);
        assert_eq!(cfg.optim.batch, defaults::BATCH_SDF);
    }

    #[test]
    fn bench_runs_with_overrides() {
        let text = "\
task.kind=sdf
encoder.variant=pe_only
encoder.frequencies=4
bench.runs=base, q3
run.q3.encoder.variant=qff_3d
run.q3.encoder.channels=8
run.q3.mlp.layers=2
";
        let cfg = parse_run_config(text).unwrap();
        let bench = cfg.bench.unwrap();
        assert_eq!(bench.runs.len(), 2);
        assert_eq!(bench.runs[0].encoder.variant, Variant::PeOnly);
        assert_eq!(bench.runs[1].encoder.variant, Variant::Qff3d);
        assert_eq!(bench.runs[1].encoder.feature_channels, 8);
        assert_eq!(bench.runs[1].mlp.num_layers, 2);
        assert_eq!(bench.target, BenchTargetConfig::Auto);
    }

    #[test]
    fn shape_specs() {
        assert_eq!(parse_shape("sphere:0.5").unwrap(), SdfShape::Sphere { radius: 0.5 });
        assert_eq!(
            parse_shape("box:0.4,0.3,0.2").unwrap(),
            SdfShape::Box3 { half_extents: [0.4, 0.3, 0.2] }
        );
        assert_eq!(
            parse_shape("torus:0.4,0.15").unwrap(),
            SdfShape::Torus { major: 0.4, minor: 0.15 }
        );
        assert!(parse_shape("cube:1").is_err());
    }

    #[test]
    fn model_spec_round_trip() {
        let enc = EncodingConfig::new(3, 4, 32, 8, Variant::Qff3d);
        let mlp = MlpConfig {
            input_width: enc.encoded_width(),
            hidden_width: 256,
            num_layers: 2,
            activation: Activation::Sine { omega: 30.0 },
            output_width: 1,
            output_transform: OutputTransform::None,
        };
        let text = model_spec_to_text(&enc, &mlp);
        let (enc2, mlp2) = model_spec_from_text(&text).unwrap();
        assert_eq!(enc, enc2);
        assert_eq!(mlp, mlp2);
        assert_eq!(text, model_spec_to_text(&enc2, &mlp2));
    }
}
