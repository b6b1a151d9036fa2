//! Mini-batch MSE training with deterministic seeding, plus the binary
//! checkpoint container.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{degrade, load_record_clean, DatasetManifest, DegradationConfig, Split};
use crate::error::{Error, Result};
use crate::model::{build_network, VraeConfig, VraeNetwork};
use crate::nn::{mse_loss, AdamHyper, AdamState};
use crate::rng::Rng;
use crate::tensor::Tensor4;

// ---------------------------------------------------------------------------
// Configuration and outcome
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: VraeConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    /// Validate every this many epochs.
    pub eval_every: usize,
    /// Final checkpoint path; the best-validation checkpoint gets a
    /// `.best` suffix next to it. `None` skips writing.
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(model: VraeConfig, seed: u64) -> Self {
        TrainConfig {
            model,
            epochs: 100,
            batch_size: 16,
            lr: 1e-4,
            seed,
            eval_every: 1,
            checkpoint_path: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.eval_every < 1 {
            return Err(Error::Config("eval-every must be >= 1".into()));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub network: VraeNetwork,
    pub optimizer: AdamState,
    pub log: Vec<EpochLoss>,
    /// (epoch, val mse) of the best validation loss seen, if any ran.
    pub best_val: Option<(usize, f64)>,
}

pub fn loss_log_csv(log: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for e in log {
        let val = e.val_mse.map(|v| format!("{v:.8}")).unwrap_or_default();
        out.push_str(&format!("{},{:.8},{}\n", e.epoch, e.train_mse, val));
    }
    out
}

// ---------------------------------------------------------------------------
// Pair sources
// ---------------------------------------------------------------------------

/// Supplies (clean, degraded) training pairs by record id.
pub trait PairSource {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn pair(&mut self, idx: usize) -> Result<(Tensor4, Tensor4)>;
}

/// Fixed in-memory pairs (overfit runs, tests).
pub struct FixedPairs(pub Vec<(Tensor4, Tensor4)>);

impl PairSource for FixedPairs {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn pair(&mut self, idx: usize) -> Result<(Tensor4, Tensor4)> {
        Ok(self.0[idx].clone())
    }
}

/// Pairs generated on the fly from a manifest split: decode (cached),
/// rotate per the record, then degrade with the record-id stream.
pub struct ManifestPairs {
    records: Vec<(usize, crate::data::ManifestRecord)>,
    degradation: DegradationConfig,
    target: usize,
    cache: HashMap<String, Tensor4>,
}

impl ManifestPairs {
    pub fn new(
        manifest: &DatasetManifest,
        split: Split,
        degradation: DegradationConfig,
        target: usize,
    ) -> Self {
        let records = manifest
            .split_records(split)
            .into_iter()
            .map(|(id, r)| (id, r.clone()))
            .collect();
        ManifestPairs { records, degradation, target, cache: HashMap::new() }
    }
}

impl PairSource for ManifestPairs {
    fn len(&self) -> usize {
        self.records.len()
    }
    fn pair(&mut self, idx: usize) -> Result<(Tensor4, Tensor4)> {
        let (record_id, record) = &self.records[idx];
        let clean = load_record_clean(record, self.target, &mut self.cache)?;
        let degraded = degrade(&clean, &self.degradation, *record_id as u64)?;
        Ok((clean, degraded))
    }
}

fn stack_batch(pairs: &[(Tensor4, Tensor4)]) -> Result<(Tensor4, Tensor4)> {
    let (_, c, h, w) = pairs[0].0.dims();
    let mut clean = Vec::with_capacity(pairs.len() * c * h * w);
    let mut degraded = Vec::with_capacity(pairs.len() * c * h * w);
    for (cl, de) in pairs {
        if cl.dims() != (1, c, h, w) || de.dims() != (1, c, h, w) {
            return Err(Error::Shape("inconsistent pair dims in batch".into()));
        }
        clean.extend_from_slice(cl.data());
        degraded.extend_from_slice(de.data());
    }
    Ok((
        Tensor4::new((pairs.len(), c, h, w), clean)?,
        Tensor4::new((pairs.len(), c, h, w), degraded)?,
    ))
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Runs the training loop: per epoch, a seeded shuffle of the training
/// records, then per batch degrade -> forward -> MSE against the clean
/// target -> backward -> Adam. Aborts on a non-finite loss, naming the
/// batch. Writes the final checkpoint (and the best-validation one) when
/// a path is configured.
pub fn train(
    config: &TrainConfig,
    train_src: &mut dyn PairSource,
    val_src: Option<&mut dyn PairSource>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_src.is_empty() {
        return Err(Error::Empty("training split is empty".into()));
    }
    let mut net = build_network(&config.model, config.seed)?;
    net.check_fusion_shapes()?;
    let mut adam = AdamState::new(AdamHyper { lr: config.lr, ..AdamHyper::default() });
    let mut val_src = val_src;
    let mut log = Vec::with_capacity(config.epochs);
    let mut best_val: Option<(usize, f64)> = None;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_src.len()).collect();
        Rng::stream(config.seed, "epoch-shuffle", epoch as u64).shuffle(&mut order);

        let mut sse = 0.0f64;
        let mut seen = 0usize;
        for (batch_idx, ids) in order.chunks(config.batch_size).enumerate() {
            let pairs: Vec<(Tensor4, Tensor4)> =
                ids.iter().map(|&i| train_src.pair(i)).collect::<Result<_>>()?;
            let (clean, degraded) = stack_batch(&pairs)?;
            let (pred, cache) = net.forward_train(&degraded)?;
            let (loss, loss_grad) = mse_loss(&pred, &clean)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} in epoch {epoch}, batch {batch_idx}"
                )));
            }
            let grads = net.backward(&cache, &loss_grad)?;
            adam.step(&grads, |f| {
                for (name, p) in net.named_params_mut() {
                    f(&name, p);
                }
            })?;
            sse += loss * clean.len() as f64;
            seen += clean.len();
        }
        let train_mse = sse / seen as f64;

        let val_mse = match val_src.as_deref_mut() {
            Some(vs) if !vs.is_empty() && epoch % config.eval_every == 0 => {
                Some(validation_mse(&net, vs, config.batch_size)?)
            }
            _ => None,
        };
        if let Some(v) = val_mse {
            if best_val.is_none_or(|(_, b)| v < b) {
                best_val = Some((epoch, v));
                if let Some(path) = &config.checkpoint_path {
                    let ckpt = Checkpoint::from_network(&net, config.seed, adam.step_count(), Some(&adam));
                    ckpt.save(&path.with_extension("best.ckpt"))?;
                }
            }
        }
        log.push(EpochLoss { epoch, train_mse, val_mse });
    }

    if let Some(path) = &config.checkpoint_path {
        let ckpt = Checkpoint::from_network(&net, config.seed, adam.step_count(), Some(&adam));
        ckpt.save(path)?;
    }
    Ok(TrainOutcome { network: net, optimizer: adam, log, best_val })
}

/// Evaluation-mode MSE over a source (no clamping: this is the loss path).
pub fn validation_mse(
    net: &VraeNetwork,
    src: &mut dyn PairSource,
    batch_size: usize,
) -> Result<f64> {
    let mut sse = 0.0f64;
    let mut seen = 0usize;
    let ids: Vec<usize> = (0..src.len()).collect();
    for chunk in ids.chunks(batch_size) {
        let pairs: Vec<(Tensor4, Tensor4)> =
            chunk.iter().map(|&i| src.pair(i)).collect::<Result<_>>()?;
        let (clean, degraded) = stack_batch(&pairs)?;
        let pred = net.forward_eval(&degraded)?;
        let (loss, _) = mse_loss(&pred, &clean)?;
        sse += loss * clean.len() as f64;
        seen += clean.len();
    }
    Ok(sse / seen as f64)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"VRAE";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CheckpointHeader {
    config: VraeConfig,
    step: u64,
    seed: u64,
    adam: Option<AdamHyper>,
}

/// A self-contained model snapshot: config, every parameter, batch-norm
/// running statistics, and (optionally) the optimizer moments.
#[derive(Debug, PartialEq)]
pub struct Checkpoint {
    pub config: VraeConfig,
    pub step: u64,
    pub seed: u64,
    pub adam: Option<AdamHyper>,
    /// Tensors keyed by name: parameters, running stats, and `adam.m.*` /
    /// `adam.v.*` moments when the optimizer is included.
    pub entries: BTreeMap<String, Tensor4>,
}

impl Checkpoint {
    pub fn from_network(
        net: &VraeNetwork,
        seed: u64,
        step: u64,
        optimizer: Option<&AdamState>,
    ) -> Self {
        let mut entries = BTreeMap::new();
        for (name, t) in net.named_params() {
            entries.insert(name, t.clone());
        }
        for (name, t) in net.named_state() {
            entries.insert(name, t.clone());
        }
        if let Some(adam) = optimizer {
            for (name, (m, v)) in adam.moments() {
                entries.insert(format!("adam.m.{name}"), m.clone());
                entries.insert(format!("adam.v.{name}"), v.clone());
            }
        }
        Checkpoint {
            config: net.config.clone(),
            step,
            seed,
            adam: optimizer.map(|a| a.hyper),
            entries,
        }
    }

    /// Rebuilds the network (and optimizer state, when stored). Every
    /// parameter and running statistic must be present with the right
    /// shape; unknown non-optimizer entries are rejected.
    pub fn into_network(&self) -> Result<(VraeNetwork, Option<AdamState>)> {
        let mut net = build_network(&self.config, self.seed)?;
        let mut used = 0usize;
        {
            let fill = |name: String, tensor: &mut Tensor4| -> Result<()> {
                let stored = self
                    .entries
                    .get(&name)
                    .ok_or_else(|| Error::Format(format!("checkpoint is missing entry {name}")))?;
                if stored.dims() != tensor.dims() {
                    return Err(Error::Shape(format!(
                        "checkpoint entry {name} has dims {:?}, expected {:?}",
                        stored.dims(),
                        tensor.dims()
                    )));
                }
                *tensor = stored.clone();
                Ok(())
            };
            for (name, t) in net.named_params_mut() {
                fill(name, t)?;
                used += 1;
            }
            for (name, t) in net.named_state_mut() {
                fill(name, t)?;
                used += 1;
            }
        }
        let adam = match self.adam {
            Some(hyper) => {
                let mut state = AdamState::new(hyper);
                state.set_step(self.step);
                for (name, tensor) in &self.entries {
                    if let Some(param) = name.strip_prefix("adam.m.") {
                        let v = self
                            .entries
                            .get(&format!("adam.v.{param}"))
                            .ok_or_else(|| Error::Format(format!("missing adam.v.{param}")))?;
                        state.insert_moments(param, tensor.clone(), v.clone());
                        used += 2;
                    }
                }
                Some(state)
            }
            None => None,
        };
        if used != self.entries.len() {
            return Err(Error::Format(format!(
                "checkpoint carries {} entries but the model consumes {used}",
                self.entries.len()
            )));
        }
        net.check_fusion_shapes()?;
        Ok((net, adam))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            step: self.step,
            seed: self.seed,
            adam: self.adam,
        };
        let header_json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, tensor) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(4u8);
            let (n, c, h, w) = tensor.dims();
            for dim in [n, c, h, w] {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad checkpoint magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}, this build reads {VERSION}"
            )));
        }
        let header_len = read_u64(&mut r)? as usize;
        if header_len > r.len() {
            return Err(Error::Format("truncated checkpoint header".into()));
        }
        let mut header_bytes = vec![0u8; header_len];
        read(&mut r, &mut header_bytes)?;
        let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;
        let entry_count = read_u64(&mut r)? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..entry_count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > r.len() {
                return Err(Error::Format("truncated checkpoint entry name".into()));
            }
            let mut name_bytes = vec![0u8; name_len];
            read(&mut r, &mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| Error::Format(format!("entry name is not UTF-8: {e}")))?;
            let mut rank = [0u8; 1];
            read(&mut r, &mut rank)?;
            if rank[0] != 4 {
                return Err(Error::Format(format!("entry {name} has rank {}, expected 4", rank[0])));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = read_u64(&mut r)? as usize;
            }
            let count = dims.iter().product::<usize>();
            if count.saturating_mul(4) > r.len() {
                return Err(Error::Format(format!(
                    "truncated checkpoint: entry {name} claims {count} values but only {} bytes remain",
                    r.len()
                )));
            }
            let mut data = Vec::with_capacity(count);
            let mut buf = [0u8; 4];
            for _ in 0..count {
                read(&mut r, &mut buf)?;
                data.push(f32::from_le_bytes(buf));
            }
            entries.insert(name, Tensor4::new((dims[0], dims[1], dims[2], dims[3]), data)?);
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", r.len())));
        }
        Ok(Checkpoint {
            config: header.config,
            step: header.step,
            seed: header.seed,
            adam: header.adam,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Format(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn read(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("truncated checkpoint".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
