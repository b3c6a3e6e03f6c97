//! The toy segmentation model: encoder, per-entry pooling projections,
//! the attention mining stack, and the heads, wired into one recorded
//! forward pass. Feature maps whose extents do not divide the window and
//! pool sizes are zero-padded symmetrically and the logits cropped back,
//! so predictions always match the input extents.

use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::assemble::{assemble_context, merge_windows, partition_windows};
use crate::error::{Error, Result};
use crate::harness::clip::IGNORE_LABEL;
use crate::harness::config::RunConfig;
use crate::harness::encode::ToyEncoder;
use crate::mining::{aux_head, mine, segment_head, CFMStack, StackConfig, INIT_SIGMA};
use crate::tensor::graph::{Graph, ParamId, ParamSet, ValueId};
use crate::tensor::rng::Rng;
use crate::tensor::{io, layout, Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct Model {
    pub encoder: ToyEncoder,
    pub stack: CFMStack,
    /// One (projection, bias) pair per schedule entry.
    pub pools: Vec<(ParamId, ParamId)>,
    pub cfg: RunConfig,
}

/// Everything a forward pass produces, all at the unpadded extents.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// (h, w, K) segmentation logits.
    pub logits: ValueId,
    /// (h, w, K) auxiliary logits from the pre-mining features.
    pub aux: ValueId,
    /// (h, w, c) encoder features of the target frame.
    pub features: ValueId,
}

impl Model {
    pub fn init<T: Scalar>(params: &mut ParamSet<T>, rng: &mut Rng, cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let encoder = ToyEncoder::init(params, rng, cfg.patch, c)?;
        let pools = cfg
            .schedule
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let w = params.add(
                    format!("pool{i}.w"),
                    rng.trunc_normal_tensor(&[c * e.p * e.p, c], INIT_SIGMA),
                );
                let b = params.add(format!("pool{i}.b"), Tensor::zeros(&[c]));
                (w, b)
            })
            .collect();
        let stack = CFMStack::init(
            params,
            rng,
            StackConfig {
                c,
                heads: cfg.heads,
                s: cfg.schedule.s,
                m: cfg.schedule.token_count(),
                layers: cfg.layers,
                classes: cfg.classes,
            },
        )?;
        Ok(Model { encoder, stack, pools, cfg: cfg.clone() })
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>, img: ValueId) -> Result<ValueId> {
        self.encoder.encode(g, params, img)
    }

    /// Mining plus heads on already-encoded features. `refs` pairs each
    /// required reference offset with that frame's (h, w, c) features.
    pub fn forward_features<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        target: ValueId,
        refs: &[(usize, ValueId)],
    ) -> Result<ModelOutput> {
        let shape = g.value(target).shape().to_vec();
        let [h, w, c] = shape[..] else {
            return Err(Error::dimension("model_forward", format!("features must be rank 3, got {shape:?}")));
        };
        if c != self.cfg.channels {
            return Err(Error::dimension(
                "model_forward",
                format!("{c} feature channels vs configured {}", self.cfg.channels),
            ));
        }
        let (ph, pw) = self.cfg.schedule.padded_extents(h, w);
        let target_p = pad_map(g, target, ph, pw)?;
        let mut frames = vec![(0usize, target_p)];
        for &(offset, f) in refs {
            if g.value(f).shape() != [h, w, c] {
                return Err(Error::dimension(
                    "model_forward",
                    format!("reference at offset {offset} does not match the target extents"),
                ));
            }
            frames.push((offset, pad_map(g, f, ph, pw)?));
        }
        let windows = partition_windows(g, target_p, self.cfg.schedule.s)?;
        let pool_nodes: Vec<(ValueId, ValueId)> = self
            .pools
            .iter()
            .map(|&(w_id, b_id)| (g.param(params, w_id), g.param(params, b_id)))
            .collect();
        let ctx = assemble_context(g, &self.cfg.schedule, &frames, &pool_nodes, &windows)?;
        let mined_grid = mine(g, params, &self.stack, &windows, &ctx)?;
        let mined = merge_windows(g, &mined_grid)?;
        let logits = segment_head(g, params, &self.stack, mined, target_p)?;
        let aux = aux_head(g, params, &self.stack, target_p)?;
        Ok(ModelOutput {
            logits: crop_map(g, logits, h, w)?,
            aux: crop_map(g, aux, h, w)?,
            features: target,
        })
    }

    /// Encodes the target and reference images, then mines and predicts.
    pub fn forward_images<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        target: ValueId,
        ref_imgs: &[(usize, ValueId)],
    ) -> Result<ModelOutput> {
        let f_t = self.encode(g, params, target)?;
        let refs = ref_imgs
            .iter()
            .map(|&(offset, img)| Ok((offset, self.encode(g, params, img)?)))
            .collect::<Result<Vec<_>>>()?;
        self.forward_features(g, params, f_t, &refs)
    }
}

/// Zero-pads an (h, w, c) map to (ph, pw, c), centered.
fn pad_map<T: Scalar>(g: &mut Graph<T>, f: ValueId, ph: usize, pw: usize) -> Result<ValueId> {
    let shape = g.value(f).shape().to_vec();
    let [h, w, c] = shape[..] else {
        return Err(Error::dimension("pad", format!("expected rank 3, got {shape:?}")));
    };
    if (h, w) == (ph, pw) {
        return Ok(f);
    }
    let (top, left) = ((ph - h) / 2, (pw - w) / 2);
    let index = Rc::new(layout::pad_hw_scatter_indices(h, w, c, top, left, ph, pw)?);
    g.scatter(f, index, &[ph, pw, c])
}

/// Inverse of [`pad_map`]: the centered (h, w, last-axis) region.
fn crop_map<T: Scalar>(g: &mut Graph<T>, f: ValueId, h: usize, w: usize) -> Result<ValueId> {
    let shape = g.value(f).shape().to_vec();
    let [ph, pw, c] = shape[..] else {
        return Err(Error::dimension("crop", format!("expected rank 3, got {shape:?}")));
    };
    if (ph, pw) == (h, w) {
        return Ok(f);
    }
    let (top, left) = ((ph - h) / 2, (pw - w) / 2);
    let index = Rc::new(layout::crop_hw_indices(ph, pw, c, top, left, h, w)?);
    g.gather(f, index, &[h, w, c])
}

/// Labels at feature resolution: each cell takes the mask label under its
/// patch center. The ignore value passes through unchanged.
pub fn feature_labels(mask: &[u8], h_img: usize, w_img: usize, patch: usize) -> Result<Vec<u32>> {
    if mask.len() != h_img * w_img || patch == 0 || h_img % patch != 0 || w_img % patch != 0 {
        return Err(Error::dimension(
            "feature_labels",
            format!("{} mask pixels for {h_img}x{w_img} images with patch {patch}", mask.len()),
        ));
    }
    let (h, w) = (h_img / patch, w_img / patch);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            out.push(mask[(r * patch + patch / 2) * w_img + (c * patch + patch / 2)] as u32);
        }
    }
    Ok(out)
}

/// Per-cell argmax over the class axis of an (h, w, K) logits tensor.
pub fn argmax_classes<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w, k) = logits.dims3()?;
    if k == 0 || k > IGNORE_LABEL as usize {
        return Err(Error::contract("argmax_classes", format!("class count {k}")));
    }
    let data = logits.data();
    let mut out = Vec::with_capacity(h * w);
    for cell in 0..h * w {
        let row = &data[cell * k..(cell + 1) * k];
        let mut best = 0usize;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        out.push(best as u8);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: RunConfig,
    params: Vec<ManifestEntry>,
}

/// Writes the config and every parameter tensor under `dir`.
pub fn save_checkpoint<T: Scalar>(dir: &Path, cfg: &RunConfig, params: &ParamSet<T>) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::contract("checkpoint", format!("create {}: {e}", dir.display())))?;
    let mut entries = Vec::with_capacity(params.len());
    for (i, (_, p)) in params.iter().enumerate() {
        let file = format!("param_{i:04}.cft");
        io::write_tensor(&dir.join(&file), &p.value)?;
        entries.push(ManifestEntry { name: p.name.clone(), file, shape: p.value.shape().to_vec() });
    }
    let manifest = Manifest { config: cfg.clone(), params: entries };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), text)
        .map_err(|e| Error::contract("checkpoint", format!("write manifest: {e}")))?;
    Ok(())
}

/// Reads only the config echoed into a checkpoint manifest, so callers can
/// pick the element type before loading the tensors.
pub fn checkpoint_config(dir: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| Error::contract("checkpoint", format!("read manifest: {e}")))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::contract("checkpoint", format!("bad manifest: {e}")))?;
    Ok(manifest.config)
}

/// Rebuilds the model and parameter set saved by [`save_checkpoint`].
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(RunConfig, ParamSet<T>, Model)> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| Error::contract("checkpoint", format!("read manifest: {e}")))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::contract("checkpoint", format!("bad manifest: {e}")))?;
    let mut params = ParamSet::new();
    let mut rng = Rng::new(manifest.config.seed);
    let model = Model::init(&mut params, &mut rng, &manifest.config)?;
    if manifest.params.len() != params.len() {
        return Err(Error::contract(
            "checkpoint",
            format!("{} saved parameters, model has {}", manifest.params.len(), params.len()),
        ));
    }
    for entry in &manifest.params {
        let id = params
            .find(&entry.name)
            .ok_or_else(|| Error::contract("checkpoint", format!("unknown parameter {}", entry.name)))?;
        let tensor: Tensor<T> = io::read_tensor(&dir.join(&entry.file))?;
        if tensor.shape() != params.get(id).value.shape() {
            return Err(Error::dimension(
                "checkpoint",
                format!("{}: saved shape {:?} vs {:?}", entry.name, tensor.shape(), params.get(id).value.shape()),
            ));
        }
        params.get_mut(id).value = tensor;
    }
    Ok((manifest.config, params, model))
}
