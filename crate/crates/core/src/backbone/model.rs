//! Runnable model: a [`NetworkSpec`] bound to named parameters.
//!
//! Parameters live in a [`ParamStore`] keyed by `layer.part` names
//! (`bneck03.expand.w`, `head.b`, ...). Batchnorm running statistics are
//! stored as non-trainable buffers. The store's iteration order is the sorted
//! name order everywhere, which keeps initialization, optimization, and
//! checkpointing deterministic.
//!
//! Freezing: a frozen parameter is detached (no gradient accumulates) and a
//! frozen layer's batchnorm runs on its stored running statistics even in
//! train mode, so nothing in a frozen layer — weights or buffers — changes
//! during an epoch.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

// Float brings sqrt/abs/round to f64 in no_std builds; in test builds the
// inherent std methods shadow it, hence the allow.
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{eca_forward, se_forward, se_hidden_width};
use crate::backbone::{LayerSpec, NetworkSpec, Nonlinearity};
use crate::checkpoint::{Checkpoint, NamedArray};
use crate::element::Element;
use crate::tensor::{batchnorm2d, BatchNormMode, Error, Result, RunningStats, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EntryKind {
    Param,
    Buffer,
}

struct Entry<T: Element> {
    tensor: Tensor<T>,
    kind: EntryKind,
    trainable: bool,
}

/// Named parameters and buffers with deterministic (sorted) iteration order.
pub struct ParamStore<T: Element> {
    entries: BTreeMap<String, Entry<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    fn insert(&mut self, name: &str, tensor: Tensor<T>, kind: EntryKind) {
        let trainable = kind == EntryKind::Param;
        let tensor = if trainable {
            tensor.requires_grad()
        } else {
            tensor
        };
        self.entries.insert(
            name.to_string(),
            Entry {
                tensor,
                kind,
                trainable,
            },
        );
    }

    pub fn insert_param(&mut self, name: &str, tensor: Tensor<T>) {
        self.insert(name, tensor, EntryKind::Param);
    }

    pub fn insert_buffer(&mut self, name: &str, tensor: Tensor<T>) {
        self.insert(name, tensor, EntryKind::Buffer);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| Error::InvalidArg {
                op: "param_store",
                msg: format!("no entry named {name}"),
            })
    }

    /// Replace the tensor behind a name, preserving kind and trainability.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let entry = self.entries.get_mut(name).ok_or_else(|| Error::InvalidArg {
            op: "param_store",
            msg: format!("no entry named {name}"),
        })?;
        if entry.tensor.shape() != tensor.shape() {
            return Err(Error::ShapeMismatch {
                op: "param_store",
                left: crate::tensor::fmt_shape(entry.tensor.shape()),
                right: crate::tensor::fmt_shape(tensor.shape()),
            });
        }
        entry.tensor = if entry.trainable {
            tensor.requires_grad()
        } else {
            tensor.detach()
        };
        Ok(())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).map(|e| e.trainable).unwrap_or(false)
    }

    /// Mark parameters trainable or frozen by name predicate. Buffers are
    /// never trainable. Frozen parameters are detached so no gradient is
    /// spent on them.
    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, entry) in self.entries.iter_mut() {
            if entry.kind != EntryKind::Param {
                continue;
            }
            let want = pred(name);
            if want == entry.trainable {
                continue;
            }
            entry.trainable = want;
            entry.tensor = if want {
                entry.tensor.detach().requires_grad()
            } else {
                entry.tensor.detach()
            };
        }
    }

    /// `(name, tensor)` of trainable parameters, sorted by name.
    pub fn trainable(&self) -> Vec<(String, Tensor<T>)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(n, e)| (n.clone(), e.tensor.clone()))
            .collect()
    }

    /// All entries, sorted by name: `(name, tensor, is_buffer)`.
    pub fn all(&self) -> Vec<(String, Tensor<T>, bool)> {
        self.entries
            .iter()
            .map(|(n, e)| (n.clone(), e.tensor.clone(), e.kind == EntryKind::Buffer))
            .collect()
    }

    /// Number of learnable scalar parameters (buffers excluded).
    pub fn param_count(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.kind == EntryKind::Param)
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn clear_grads(&self) {
        for e in self.entries.values() {
            e.tensor.clear_grad();
        }
    }
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Forward result: classification logits plus the feature map feeding the
/// global pool, retained with its graph for gradient-based heatmaps.
pub struct ForwardOutput<T: Element> {
    pub logits: Tensor<T>,
    pub feature_tap: Option<Tensor<T>>,
}

/// What a permissive checkpoint load did.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    pub missing_in_checkpoint: Vec<String>,
    pub unused_in_checkpoint: Vec<String>,
}

/// A [`NetworkSpec`] bound to parameters.
pub struct Model<T: Element> {
    pub spec: NetworkSpec,
    pub store: ParamStore<T>,
}

impl<T: Element> Model<T> {
    /// Fresh model with `uniform(-a, a)`, `a = sqrt(1/fan_in)` weights, unit
    /// batchnorm scales, zero biases. Deterministic for a given seed.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Model<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for layer in &spec.layers {
            init_layer(&mut store, layer, &mut rng);
        }
        Ok(Model { spec, store })
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Run the network. `x: [N, 3, R, R]` with `R` equal to the spec
    /// resolution. In train mode, batchnorm layers whose parameters are
    /// trainable use batch statistics and update their running buffers.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<ForwardOutput<T>> {
        let (_, c, h, w) = x.dims4("forward")?;
        let r = self.spec.resolution;
        if c != 3 || h != r || w != r {
            return Err(Error::InvalidArg {
                op: "forward",
                msg: format!(
                    "expected input [N,3,{r},{r}], got {}",
                    crate::tensor::fmt_shape(x.shape())
                ),
            });
        }
        let mut value = x.clone();
        let mut tap = None;
        let layers = self.spec.layers.clone();
        for layer in &layers {
            match layer {
                LayerSpec::ConvBnAct {
                    name,
                    stride,
                    padding,
                    act,
                    ..
                } => {
                    let w = self.store.get(&format!("{name}.w"))?.clone();
                    value = value.conv2d(&w, None, *stride, *padding)?;
                    value = self.batchnorm(name, &value, mode)?;
                    value = apply_act(&value, *act)?;
                }
                LayerSpec::Bneck {
                    name,
                    spec,
                    se_reduction: _,
                } => {
                    value = self.bneck_forward(name, spec, &value, mode)?;
                }
                LayerSpec::SeAttention { name, .. } => {
                    let w1 = self.store.get(&format!("{name}.w1"))?.clone();
                    let w2 = self.store.get(&format!("{name}.w2"))?.clone();
                    value = se_forward(&value, &w1, &w2)?;
                }
                LayerSpec::EcaAttention { name, .. } => {
                    let k = self.store.get(&format!("{name}.w"))?.clone();
                    value = eca_forward(&value, &k)?;
                }
                LayerSpec::GlobalPool => {
                    tap = Some(value.clone());
                    value = value.global_avg_pool()?;
                }
                LayerSpec::DenseAct { name, act, .. } => {
                    let w = self.store.get(&format!("{name}.w"))?.clone();
                    let b = self.store.get(&format!("{name}.b"))?.clone();
                    value = value.dense(&w, Some(&b))?;
                    value = apply_act(&value, *act)?;
                }
                LayerSpec::Head { name, .. } => {
                    let w = self.store.get(&format!("{name}.w"))?.clone();
                    let b = self.store.get(&format!("{name}.b"))?.clone();
                    value = value.dense(&w, Some(&b))?;
                }
            }
        }
        Ok(ForwardOutput {
            logits: value,
            feature_tap: tap,
        })
    }

    /// Inverted residual bottleneck: expand 1x1 (+BN+NL), depthwise kxk
    /// stride s (+BN+NL), optional SE, linear 1x1 projection (+BN),
    /// residual add when stride is 1 and widths match.
    fn bneck_forward(
        &mut self,
        name: &str,
        spec: &crate::backbone::BneckSpec,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        let pad = (spec.kernel - 1) / 2;
        let expand_w = self.store.get(&format!("{name}.expand.w"))?.clone();
        let mut v = x.conv2d(&expand_w, None, 1, 0)?;
        v = self.batchnorm(&format!("{name}.expand"), &v, mode)?;
        v = apply_act(&v, spec.nonlinearity)?;

        let dw_w = self.store.get(&format!("{name}.dw.w"))?.clone();
        v = v.depthwise_conv2d(&dw_w, None, spec.stride, pad)?;
        v = self.batchnorm(&format!("{name}.dw"), &v, mode)?;
        v = apply_act(&v, spec.nonlinearity)?;

        if spec.se {
            let w1 = self.store.get(&format!("{name}.se.w1"))?.clone();
            let w2 = self.store.get(&format!("{name}.se.w2"))?.clone();
            v = se_forward(&v, &w1, &w2)?;
        }

        let proj_w = self.store.get(&format!("{name}.project.w"))?.clone();
        v = v.conv2d(&proj_w, None, 1, 0)?;
        v = self.batchnorm(&format!("{name}.project"), &v, mode)?;

        if spec.has_residual() {
            v = v.add(x)?;
        }
        Ok(v)
    }

    /// Batchnorm helper reading `prefix.bn.*` entries. A frozen layer (its
    /// gamma not trainable) normalizes with running statistics even in train
    /// mode and leaves its buffers untouched.
    fn batchnorm(&mut self, prefix: &str, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let gamma_name = format!("{prefix}.bn.gamma");
        let gamma = self.store.get(&gamma_name)?.clone();
        let beta = self.store.get(&format!("{prefix}.bn.beta"))?.clone();
        let running = RunningStats {
            mean: self
                .store
                .get(&format!("{prefix}.bn.running_mean"))?
                .data()
                .to_vec(),
            var: self
                .store
                .get(&format!("{prefix}.bn.running_var"))?
                .data()
                .to_vec(),
        };
        let bn_mode = if mode == Mode::Train && self.store.is_trainable(&gamma_name) {
            BatchNormMode::Train
        } else {
            BatchNormMode::Eval
        };
        let (y, updated) = batchnorm2d(x, &gamma, &beta, &running, bn_mode, BN_MOMENTUM, BN_EPS)?;
        if let Some(stats) = updated {
            let c = stats.mean.len();
            self.store.set(
                &format!("{prefix}.bn.running_mean"),
                Tensor::from_vec(&[c], stats.mean)?,
            )?;
            self.store.set(
                &format!("{prefix}.bn.running_var"),
                Tensor::from_vec(&[c], stats.var)?,
            )?;
        }
        Ok(y)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        ckpt.meta
            .insert("format".to_string(), "model-v1".to_string());
        ckpt.meta
            .insert("network_spec".to_string(), self.spec.to_json());
        ckpt.meta
            .insert("precision".to_string(), T::DTYPE.as_str().to_string());
        for (name, tensor, _) in self.store.all() {
            ckpt.arrays.push(NamedArray::from_tensor(&name, &tensor));
        }
        ckpt
    }

    /// Rebuild a model from a checkpoint's embedded spec and arrays.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> core::result::Result<Model<T>, crate::checkpoint::Error> {
        let spec_json = ckpt.meta_str("network_spec")?;
        let spec = NetworkSpec::from_json(spec_json).map_err(|e| crate::checkpoint::Error::BadMeta {
            key: "network_spec".to_string(),
            msg: alloc::string::ToString::to_string(&e),
        })?;
        let mut model = Model::init(spec, 0).expect("spec was valid when serialized");
        model.load_arrays(ckpt, true)?;
        Ok(model)
    }

    /// Copy checkpoint arrays into this model's store by name.
    ///
    /// With `strict`, every store entry must be present in the checkpoint.
    /// Without it, missing names keep their current values — that is how a
    /// stage-2 checkpoint initializes a stage-3 model whose attention blocks
    /// are new. Shape mismatches are always errors.
    pub fn load_arrays(
        &mut self,
        ckpt: &Checkpoint,
        strict: bool,
    ) -> core::result::Result<LoadReport, crate::checkpoint::Error> {
        let mut report = LoadReport::default();
        let names: Vec<String> = self.store.all().iter().map(|(n, _, _)| n.clone()).collect();
        for name in &names {
            match ckpt.get(name) {
                Some(array) => {
                    let current = self.store.get(name).expect("name from store");
                    if array.shape != current.shape() {
                        return Err(crate::checkpoint::Error::ShapeMismatch {
                            name: name.clone(),
                            got: crate::tensor::fmt_shape(&array.shape),
                            expected: crate::tensor::fmt_shape(current.shape()),
                        });
                    }
                    let tensor = Tensor::from_vec(&array.shape, array.to_vec::<T>())
                        .expect("checkpoint array is finite and well-shaped");
                    self.store.set(name, tensor).expect("shape checked");
                    report.loaded.push(name.clone());
                }
                None if strict => {
                    return Err(crate::checkpoint::Error::ArrayNotFound(name.clone()))
                }
                None => report.missing_in_checkpoint.push(name.clone()),
            }
        }
        for a in &ckpt.arrays {
            if !names.contains(&a.name) {
                report.unused_in_checkpoint.push(a.name.clone());
            }
        }
        Ok(report)
    }
}

fn apply_act<T: Element>(x: &Tensor<T>, act: Nonlinearity) -> Result<Tensor<T>> {
    match act {
        Nonlinearity::Re => x.relu(),
        Nonlinearity::Hs => x.h_swish(),
    }
}

fn uniform_init<T: Element, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let a = (1.0 / fan_in as f64).sqrt();
    Tensor::uniform(rng, shape, -a, a)
}

fn init_bn<T: Element>(store: &mut ParamStore<T>, prefix: &str, channels: usize) {
    store.insert_param(&format!("{prefix}.bn.gamma"), Tensor::ones(&[channels]));
    store.insert_param(&format!("{prefix}.bn.beta"), Tensor::zeros(&[channels]));
    store.insert_buffer(
        &format!("{prefix}.bn.running_mean"),
        Tensor::zeros(&[channels]),
    );
    store.insert_buffer(
        &format!("{prefix}.bn.running_var"),
        Tensor::ones(&[channels]),
    );
}

fn init_se<T: Element, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    channels: usize,
    reduction: usize,
    rng: &mut R,
) {
    let hidden = se_hidden_width(channels, reduction);
    store.insert_param(
        &format!("{prefix}.w1"),
        uniform_init(rng, &[hidden, channels], channels),
    );
    store.insert_param(
        &format!("{prefix}.w2"),
        uniform_init(rng, &[channels, hidden], hidden),
    );
}

fn init_layer<T: Element, R: Rng>(store: &mut ParamStore<T>, layer: &LayerSpec, rng: &mut R) {
    match layer {
        LayerSpec::ConvBnAct {
            name,
            in_channels,
            out_channels,
            kernel,
            ..
        } => {
            let fan_in = in_channels * kernel * kernel;
            store.insert_param(
                &format!("{name}.w"),
                uniform_init(rng, &[*out_channels, *in_channels, *kernel, *kernel], fan_in),
            );
            init_bn(store, name, *out_channels);
        }
        LayerSpec::Bneck {
            name,
            spec,
            se_reduction,
        } => {
            store.insert_param(
                &format!("{name}.expand.w"),
                uniform_init(rng, &[spec.exp_size, spec.in_channels, 1, 1], spec.in_channels),
            );
            init_bn(store, &format!("{name}.expand"), spec.exp_size);
            store.insert_param(
                &format!("{name}.dw.w"),
                uniform_init(
                    rng,
                    &[spec.exp_size, 1, spec.kernel, spec.kernel],
                    spec.kernel * spec.kernel,
                ),
            );
            init_bn(store, &format!("{name}.dw"), spec.exp_size);
            if spec.se {
                init_se(store, &format!("{name}.se"), spec.exp_size, *se_reduction, rng);
            }
            store.insert_param(
                &format!("{name}.project.w"),
                uniform_init(rng, &[spec.out_channels, spec.exp_size, 1, 1], spec.exp_size),
            );
            init_bn(store, &format!("{name}.project"), spec.out_channels);
        }
        LayerSpec::SeAttention {
            name,
            channels,
            reduction,
        } => init_se(store, name, *channels, *reduction, rng),
        LayerSpec::EcaAttention { name, kernel, .. } => {
            store.insert_param(&format!("{name}.w"), uniform_init(rng, &[*kernel], *kernel));
        }
        LayerSpec::GlobalPool => {}
        LayerSpec::DenseAct {
            name,
            in_features,
            out_features,
            ..
        } => {
            store.insert_param(
                &format!("{name}.w"),
                uniform_init(rng, &[*out_features, *in_features], *in_features),
            );
            store.insert_param(&format!("{name}.b"), Tensor::zeros(&[*out_features]));
        }
        LayerSpec::Head {
            name,
            in_features,
            classes,
        } => {
            store.insert_param(
                &format!("{name}.w"),
                uniform_init(rng, &[*classes, *in_features], *in_features),
            );
            store.insert_param(&format!("{name}.b"), Tensor::zeros(&[*classes]));
        }
    }
}

/// Stage-3 trainability: attention blocks, the last convolution, and the
/// classification head stay live; everything else freezes.
pub fn stage3_trainable(name: &str) -> bool {
    name.starts_with("attn_") || name.starts_with("final_conv.") || name.starts_with("head.")
}
