//! End-to-end stages of a run: prompts and split, pretraining of the
//! data-generating policy, preference generation, SFT, preference training
//! and evaluation. The CLI writes each stage's output to disk; tests chain
//! them in memory.
//!
//! Run configuration is TOML with one table per stage. The `[pretrain]`,
//! `[sft]` and `[train]` tables take exactly the [`TrainConfig`] keys and
//! override the variant preset key by key, so `beta` keeps its per-variant
//! preset unless set explicitly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{evaluate, order_logprobs, token_entropy, vasicek, EvalReport, Estimate};
use crate::dataset::{
    assign_split, gen_preferences, gen_prompts, read_prompts, read_records, write_prompts, write_records,
    PreferenceRecord, Prompt, SplitManifest,
};
use crate::error::{Error, Result};
use crate::geometry::{read_structures, write_structures};
use crate::policy::{read_checkpoint, write_checkpoint, Featurized, Hyper, PolicyParams};
use crate::seeds::{derive, rng_for, Stage};
use crate::train::{train_loop, EpochMetrics, TrainConfig, TrainData, Variant};

/// The α values of the diversity sweep.
pub const ALPHA_GRID: [f64; 4] = [0.0, 0.1, 0.2, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub identity_threshold: f64,
    /// Prompts used only to pretrain the data-generating policy.
    pub n_pretrain: usize,
    pub k_candidates: usize,
    pub gen_temperature: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_test: 50,
            min_len: 10,
            max_len: 30,
            identity_threshold: 0.4,
            n_pretrain: 400,
            k_candidates: 4,
            gen_temperature: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub temperature: f64,
    pub fixed_order: bool,
    pub sweep_temperatures: Vec<f64>,
    pub entropy_orders: usize,
    pub token_entropy_samples: usize,
    pub alphas: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 4,
            temperature: 0.0,
            fixed_order: false,
            sweep_temperatures: (0..=10).map(|i| i as f64 / 10.0).collect(),
            entropy_orders: 128,
            token_entropy_samples: 4,
            alphas: ALPHA_GRID.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: Hyper,
    pub pretrain: toml::Table,
    pub sft: toml::Table,
    pub train: toml::Table,
    pub eval: EvalConfig,
}

fn table(pairs: &[(&str, toml::Value)]) -> toml::Table {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: Hyper::default(),
            pretrain: table(&[
                ("epochs", toml::Value::Integer(10)),
                ("learning_rate", toml::Value::Float(2e-3)),
                ("kl_samples", toml::Value::Integer(0)),
            ]),
            sft: table(&[("kl_samples", toml::Value::Integer(0))]),
            train: table(&[("learning_rate", toml::Value::Float(1e-4))]),
            eval: EvalConfig::default(),
        }
    }
}

fn overlay(base: TrainConfig, over: &toml::Table, section: &str) -> Result<TrainConfig> {
    let mut t: toml::Table = toml::from_str(&base.to_toml_string()).expect("config round-trips");
    for (k, v) in over {
        t.insert(k.clone(), v.clone());
    }
    TrainConfig::deserialize(toml::Value::Table(t)).map_err(|e| Error::Config(format!("[{section}] {}", e.message())))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.n_train == 0 || d.n_test == 0 {
            return Err(Error::Config("`n_train` and `n_test` must both be >= 1".into()));
        }
        if d.min_len > d.max_len {
            return Err(Error::Config(format!("`min_len` {} exceeds `max_len` {}", d.min_len, d.max_len)));
        }
        if d.k_candidates < 2 {
            return Err(Error::Config(format!("`k_candidates` must be >= 2, got {}", d.k_candidates)));
        }
        self.model.validate()?;
        if self.eval.n_samples < 2 {
            return Err(Error::Config("`n_samples` must be >= 2".into()));
        }
        self.pretrain_config(0)?.validate(Variant::Sft)?;
        self.sft_config(0)?.validate(Variant::Sft)?;
        self.train_config(Variant::DpoDiversity, None, None, 0)?;
        Ok(())
    }

    pub fn pretrain_config(&self, seed: u64) -> Result<TrainConfig> {
        let mut c = overlay(TrainConfig::preset(Variant::Sft), &self.pretrain, "pretrain")?;
        c.seed = Stage::Pretrain.seed(seed);
        Ok(c)
    }

    pub fn sft_config(&self, seed: u64) -> Result<TrainConfig> {
        let mut c = overlay(TrainConfig::preset(Variant::Sft), &self.sft, "sft")?;
        c.seed = Stage::Sft.seed(seed);
        Ok(c)
    }

    /// Training configuration for `variant`: preset, then `[train]`, then
    /// the explicit `alpha`/`beta` overrides. Validated.
    pub fn train_config(&self, variant: Variant, alpha: Option<f64>, beta: Option<f64>, seed: u64) -> Result<TrainConfig> {
        if variant == Variant::Sft {
            return self.sft_config(seed);
        }
        let mut c = overlay(TrainConfig::preset(variant), &self.train, "train")?;
        if let Some(a) = alpha {
            c.alpha = a;
        }
        if let Some(b) = beta {
            c.beta = b;
        }
        c.seed = Stage::Train.seed(seed);
        c.validate(variant)?;
        Ok(c)
    }
}

/// Prompts of one run.
#[derive(Clone, Debug)]
pub struct Prompts {
    pub pretrain: Vec<Prompt>,
    pub train: Vec<Prompt>,
    pub test: Vec<Prompt>,
    pub split: SplitManifest,
}

/// Generates the benchmark prompts and the identity-filtered split. The pool
/// holds spare test candidates so that `n_test` survive the filter; unused
/// spares are left out of the split.
pub fn prepare_prompts(cfg: &DatasetConfig, seed: u64) -> Result<Prompts> {
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::Config("`n_train` and `n_test` must both be >= 1".into()));
    }
    let lengths = cfg.min_len..=cfg.max_len;
    let spare = (cfg.n_test / 5).max(5);
    let pool = gen_prompts(cfg.n_train + cfg.n_test + spare, lengths.clone(), Stage::Prompts.seed(seed), "s")?;
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(&mut rng_for(Stage::Split.seed(seed), 0));
    let mut candidates = idx[cfg.n_train..].to_vec();
    candidates.sort_unstable();
    let mut split = assign_split(&pool, &candidates, cfg.identity_threshold)?;
    if split.test.len() < cfg.n_test {
        return Err(Error::Data(format!(
            "only {} of {} test prompts pass the identity filter",
            split.test.len(),
            cfg.n_test
        )));
    }
    split.test.truncate(cfg.n_test);
    let pick = |ids: &[String]| {
        ids.iter()
            .map(|id| pool.iter().find(|p| p.id() == id).expect("split ids come from the pool").clone())
            .collect::<Vec<_>>()
    };
    let train = pick(&split.train);
    let test = pick(&split.test);
    let pretrain = gen_prompts(cfg.n_pretrain, lengths, Stage::PretrainPrompts.seed(seed), "p")?;
    Ok(Prompts {
        pretrain,
        train,
        test,
        split,
    })
}

/// Fits the data-generating policy from a random init on the pretraining
/// natives.
pub fn pretrain(cfg: &RunConfig, prompts: &Prompts, seed: u64) -> Result<PolicyParams> {
    let init = PolicyParams::init(cfg.model, &mut rng_for(Stage::Init.seed(seed), 0));
    if prompts.pretrain.is_empty() {
        return Ok(init);
    }
    let data = TrainData::from_prompts(&prompts.pretrain, &cfg.model);
    Ok(train_loop(&init, &data, &cfg.pretrain_config(seed)?, Variant::Sft)?.0)
}

pub fn generate(cfg: &RunConfig, base: &PolicyParams, prompts: &Prompts, seed: u64) -> Result<Vec<PreferenceRecord>> {
    gen_preferences(
        base,
        &prompts.train,
        cfg.dataset.k_candidates,
        cfg.dataset.gen_temperature,
        Stage::Preferences.seed(seed),
    )
}

/// Trains `variant` from `init` (which is also the reference policy).
/// SFT fits the train natives; the preference variants fit the records.
pub fn train_variant(
    init: &PolicyParams,
    train_prompts: &[Prompt],
    records: &[PreferenceRecord],
    config: &TrainConfig,
    variant: Variant,
) -> Result<(PolicyParams, Vec<EpochMetrics>)> {
    let hyper = init.hyper();
    let data = if variant == Variant::Sft {
        TrainData::from_prompts(train_prompts, &hyper)
    } else {
        TrainData::from_records(records, train_prompts, &hyper)?
    };
    train_loop(init, &data, config, variant)
}

/// Held-out evaluation with the configured protocol.
pub fn eval_stage(cfg: &RunConfig, params: &PolicyParams, test: &[Prompt], seed: u64) -> Result<EvalReport> {
    let e = &cfg.eval;
    evaluate(params, test, e.n_samples, e.temperature, e.fixed_order, Stage::Eval.seed(seed))
}

/// Differential entropy of `log π(native | x)` over decoding orders for one
/// held-out prompt.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyRow {
    pub structure_id: String,
    pub length: usize,
    pub diff_entropy: f64,
    pub collapsed: bool,
    pub logprob_mean: f64,
    /// Across-order standard deviation (population).
    pub logprob_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyReport {
    pub n_orders: usize,
    pub fixed_order: bool,
    pub rows: Vec<EntropyRow>,
    /// Mean differential entropy over prompts; `-inf` if any prompt collapsed.
    pub mean_diff_entropy: f64,
    pub token_entropy: Estimate,
}

pub const ENTROPY_HEADER: &str = "structure_id,length,diff_entropy,collapsed,logprob_mean,logprob_std";

impl EntropyReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{ENTROPY_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.structure_id,
                r.length,
                r.diff_entropy,
                u8::from(r.collapsed),
                r.logprob_mean,
                r.logprob_std
            )?;
        }
        Ok(())
    }
}

/// Per-prompt differential entropy of the native's log-probability over
/// `n_orders` decoding orders (prompt `i` draws its orders from stream `i`),
/// plus the per-token sampling entropy over `token_samples` draws per prompt.
pub fn entropy_report(
    params: &PolicyParams,
    test: &[Prompt],
    n_orders: usize,
    token_samples: usize,
    fixed_order: bool,
    seed: u64,
) -> Result<EntropyReport> {
    use rayon::prelude::*;
    if n_orders < 8 {
        return Err(Error::InvalidInput(format!("need at least 8 decoding orders, got {n_orders}")));
    }
    let hyper = params.hyper();
    let feats: Vec<Featurized> = test.iter().map(|p| Featurized::new(p.structure.clone(), &hyper)).collect();
    let stage = Stage::Entropy.seed(seed);
    let rows = test
        .par_iter()
        .zip(&feats)
        .enumerate()
        .map(|(i, (p, f))| {
            let lps = order_logprobs(params, f, &p.native, n_orders, &mut rng_for(stage, i as u64), fixed_order)?;
            let h = vasicek(&lps)?;
            let n = lps.len() as f64;
            // shifted by the first value so identical log-probs give exactly 0
            let d: Vec<f64> = lps.iter().map(|v| v - lps[0]).collect();
            let dm = d.iter().sum::<f64>() / n;
            let mean = lps[0] + dm;
            let var = (d.iter().map(|v| v * v).sum::<f64>() / n - dm * dm).max(0.0);
            Ok(EntropyRow {
                structure_id: p.id().to_string(),
                length: p.native.len(),
                diff_entropy: h.value,
                collapsed: h.collapsed,
                logprob_mean: mean,
                logprob_std: var.sqrt(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_diff_entropy = rows.iter().map(|r| r.diff_entropy).sum::<f64>() / rows.len() as f64;
    let token_entropy = token_entropy(params, &feats, token_samples, derive(stage, u64::MAX))?;
    Ok(EntropyReport {
        n_orders,
        fixed_order,
        rows,
        mean_diff_entropy,
        token_entropy,
    })
}

/// Git-style content checksum: SHA-256 over `"blob {len}\0"` followed by
/// the bytes.
pub fn blob_checksum(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub checksum: String,
    pub bytes: u64,
    /// Contents vary between reruns (wallclock columns).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub volatile: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    /// Keyed by file name relative to the output directory.
    pub outputs: BTreeMap<String, ArtifactEntry>,
    pub counts: BTreeMap<String, u64>,
    pub notes: Vec<String>,
    pub wallclock_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, master_seed: u64) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("master".to_string(), master_seed);
        Self {
            command: command.to_string(),
            config_hash: blob_checksum(cfg.to_toml_string().as_bytes()),
            seeds,
            inputs: Vec::new(),
            outputs: BTreeMap::new(),
            counts: BTreeMap::new(),
            notes: Vec::new(),
            wallclock_s: 0.0,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

/// Output directory that records every file written through it.
pub struct OutDir {
    root: PathBuf,
    pub manifest: RunManifest,
}

impl OutDir {
    pub fn create(root: &Path, manifest: RunManifest) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `name` from the closure's output and records its checksum.
    pub fn emit(&mut self, name: &str, volatile: bool, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let path = self.path(name);
        fs::write(&path, &buf)?;
        self.manifest.outputs.insert(
            name.to_string(),
            ArtifactEntry {
                checksum: blob_checksum(&buf),
                bytes: buf.len() as u64,
                volatile,
            },
        );
        Ok(path)
    }

    /// Writes the manifest as `{name}.manifest.json`.
    pub fn finish(mut self, name: &str, wallclock_s: f64) -> Result<RunManifest> {
        self.manifest.wallclock_s = wallclock_s;
        self.manifest.write(&self.path(&format!("{name}.manifest.json")))?;
        Ok(self.manifest)
    }
}

pub const STRUCTURES_FILE: &str = "structures.txt";
pub const TRAIN_PROMPTS_FILE: &str = "train_prompts.jsonl";
pub const TEST_PROMPTS_FILE: &str = "test_prompts.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const PREFERENCES_FILE: &str = "preferences.jsonl";
pub const BASE_CHECKPOINT: &str = "base.ckpt";

/// Writes a generated dataset: structures, prompt lists, split, records and
/// the data-generating checkpoint.
pub fn write_dataset(out: &mut OutDir, prompts: &Prompts, records: &[PreferenceRecord], base: &PolicyParams) -> Result<()> {
    let structures: Vec<_> = prompts.train.iter().chain(&prompts.test).map(|p| p.structure.clone()).collect();
    out.emit(STRUCTURES_FILE, false, |w| write_structures(w, &structures))?;
    out.emit(TRAIN_PROMPTS_FILE, false, |w| write_prompts(w, &prompts.train))?;
    out.emit(TEST_PROMPTS_FILE, false, |w| write_prompts(w, &prompts.test))?;
    out.emit(SPLIT_FILE, false, |w| {
        serde_json::to_writer_pretty(&mut *w, &prompts.split).map_err(|e| Error::Data(e.to_string()))?;
        w.push(b'\n');
        Ok(())
    })?;
    out.emit(PREFERENCES_FILE, false, |w| write_records(w, records))?;
    out.emit(BASE_CHECKPOINT, false, |w| write_checkpoint(w, base))?;
    let m = &mut out.manifest;
    m.counts.insert("train_prompts".into(), prompts.train.len() as u64);
    m.counts.insert("test_prompts".into(), prompts.test.len() as u64);
    m.counts.insert("discarded_test_candidates".into(), prompts.split.discarded.len() as u64);
    m.counts.insert("pretrain_prompts".into(), prompts.pretrain.len() as u64);
    m.counts.insert("records".into(), records.len() as u64);
    m.counts.insert("pairs".into(), records.iter().map(|r| r.pairs.len() as u64).sum());
    m.notes.push("native sequences are excluded from preference pairs".into());
    Ok(())
}

/// Dataset read back from a `gen` output directory.
#[derive(Clone, Debug)]
pub struct StoredDataset {
    pub train: Vec<Prompt>,
    pub test: Vec<Prompt>,
    pub records: Vec<PreferenceRecord>,
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

pub fn read_dataset(dir: &Path) -> Result<StoredDataset> {
    let structures = read_structures(open(&dir.join(STRUCTURES_FILE))?)?;
    Ok(StoredDataset {
        train: read_prompts(open(&dir.join(TRAIN_PROMPTS_FILE))?, &structures)?,
        test: read_prompts(open(&dir.join(TEST_PROMPTS_FILE))?, &structures)?,
        records: read_records(open(&dir.join(PREFERENCES_FILE))?)?,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams> {
    read_checkpoint(open(path)?)
}

pub fn save_checkpoint(path: &Path, params: &PolicyParams) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}
