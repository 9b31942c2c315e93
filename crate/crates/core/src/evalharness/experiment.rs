//! Configuration, data preparation, training, evaluation and report files
//! of one experiment run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::channel::{
    generate_batch, observe_pilots, ChannelTensor, Dataset, EigenMatrix, MultipathProfile, PilotPattern,
    SystemGeometry,
};
use crate::error::{Error, Result};
use crate::evalharness::metrics::{baseline_truncation, freq_correlation, mean_off_diagonal, rho, BitBudget, FreqInput};
use crate::flowmat::config::{format_kv, parse_kv_text, take};
use crate::flowmat::{Checkpoint, EstimationModel, FeedbackModel, ModelConfig, QuantMode};
use crate::numerics::Tensor;
use crate::quantizer::payload_bits;
use crate::training::loops::eval_seed;
use crate::training::{
    evaluate_composed, evaluate_estimation, evaluate_feedback, precoders_lenient, train_end_to_end, train_feedback,
    train_joint, train_progressive, train_splited, Regime, Task, TrainConfig, TrainReport,
};

pub const SEED_ENV: &str = "FMAT_SEED";

/// Every knob of a run, read from one flat `key=value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub out_dir: PathBuf,
    /// Channel container to load; generated from `data_seed` when unset.
    pub data: Option<PathBuf>,
    pub n_samples: usize,
    pub data_seed: u64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_sub: usize,
    pub n_subband: usize,
    /// `every:STRIDE:OFFSET`, `hd:RB_SIZE`, `ld:RB_SIZE` or `list:i,j,…`
    pub pilots: String,
    pub subcarrier_spacing: f64,
    pub n_paths: usize,
    pub delay_spread: f64,
    pub angle_spread: f64,
    /// Feedback bit budgets.
    pub budgets: Vec<usize>,
    /// Quantizer used for the budgets (`uniform` or `vq`).
    pub budget_quant: QuantMode,
    pub snr_list: Vec<f64>,
    /// Path counts scanned by the correlation analysis.
    pub corr_paths: Vec<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Feedback,
            out_dir: PathBuf::from("out"),
            data: None,
            n_samples: 200,
            data_seed: 1,
            n_tx: 8,
            n_rx: 2,
            n_sub: 16,
            n_subband: 8,
            pilots: "every:4:1".into(),
            subcarrier_spacing: 30e3,
            n_paths: 3,
            delay_spread: 1e-6,
            angle_spread: 0.2,
            budgets: vec![64, 128, 256],
            budget_quant: QuantMode::Uniform,
            snr_list: vec![0.0, 10.0, 20.0],
            corr_paths: vec![1, 2, 3, 6],
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn list<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, default: &[T]) -> Result<Vec<T>>
where
    T: Clone,
{
    match map.get(key) {
        None => Ok(default.to_vec()),
        Some(v) if v.trim().is_empty() => Ok(Vec::new()),
        Some(v) => v
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}"))))
            .collect(),
    }
}

const OWN_KEYS: &[&str] = &[
    "task",
    "out_dir",
    "data",
    "n_samples",
    "data_seed",
    "n_tx",
    "n_rx",
    "n_sub",
    "n_subband",
    "pilots",
    "subcarrier_spacing",
    "n_paths",
    "delay_spread",
    "angle_spread",
    "budgets",
    "budget_quant",
    "snr_list",
    "corr_paths",
];

impl ExperimentConfig {
    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self> {
        let base = Self::default();
        let model_keys = base.model.to_kv();
        let train_keys = base.train.to_kv();
        if let Some(k) = map
            .keys()
            .find(|k| !OWN_KEYS.contains(&k.as_str()) && !model_keys.contains_key(*k) && !train_keys.contains_key(*k))
        {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        let data: String = take(map, "data", String::new())?;
        let c = Self {
            task: take(map, "task", base.task)?,
            out_dir: PathBuf::from(take(map, "out_dir", base.out_dir.display().to_string())?),
            data: (!data.is_empty()).then(|| PathBuf::from(data)),
            n_samples: take(map, "n_samples", base.n_samples)?,
            data_seed: take(map, "data_seed", base.data_seed)?,
            n_tx: take(map, "n_tx", base.n_tx)?,
            n_rx: take(map, "n_rx", base.n_rx)?,
            n_sub: take(map, "n_sub", base.n_sub)?,
            n_subband: take(map, "n_subband", base.n_subband)?,
            pilots: take(map, "pilots", base.pilots)?,
            subcarrier_spacing: take(map, "subcarrier_spacing", base.subcarrier_spacing)?,
            n_paths: take(map, "n_paths", base.n_paths)?,
            delay_spread: take(map, "delay_spread", base.delay_spread)?,
            angle_spread: take(map, "angle_spread", base.angle_spread)?,
            budgets: list(map, "budgets", &base.budgets)?,
            budget_quant: take(map, "budget_quant", base.budget_quant)?,
            snr_list: list(map, "snr_list", &base.snr_list)?,
            corr_paths: list(map, "corr_paths", &base.corr_paths)?,
            model: ModelConfig::from_kv(map, &base.model)?,
            train: TrainConfig::from_kv(map, &base.train)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_kv(&parse_kv_text(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_samples < 2 && self.data.is_none() {
            return bad("n_samples must be at least 2".into());
        }
        if self.budget_quant == QuantMode::Float {
            return bad("budget_quant must be uniform or vq".into());
        }
        if self.snr_list.iter().any(|s| s.is_nan()) {
            return bad("snr_list has NaN".into());
        }
        self.geometry()?;
        self.profile().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.feedback_config().validate()?;
        for &b in &self.budgets {
            self.budget_quantizer(b)?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = self.model.to_kv();
        m.extend(self.train.to_kv());
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("task", self.task.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("data", self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("n_samples", self.n_samples.to_string());
        put("data_seed", self.data_seed.to_string());
        put("n_tx", self.n_tx.to_string());
        put("n_rx", self.n_rx.to_string());
        put("n_sub", self.n_sub.to_string());
        put("n_subband", self.n_subband.to_string());
        put("pilots", self.pilots.clone());
        put("subcarrier_spacing", format!("{:?}", self.subcarrier_spacing));
        put("n_paths", self.n_paths.to_string());
        put("delay_spread", format!("{:?}", self.delay_spread));
        put("angle_spread", format!("{:?}", self.angle_spread));
        put("budgets", join(&self.budgets));
        put("budget_quant", self.budget_quant.to_string());
        put("snr_list", self.snr_list.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(","));
        put("corr_paths", join(&self.corr_paths));
        m
    }

    /// Applies `FMAT_SEED` if it is set.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}: cannot parse {v:?}")))?;
        }
        Ok(())
    }

    /// CRC32 of the canonical config text without `out_dir`, as 8 hex
    /// digits.
    pub fn config_hash(&self) -> String {
        let mut kv = self.to_kv();
        kv.remove("out_dir");
        format!("{:08x}", crc32fast::hash(format_kv(&kv).as_bytes()))
    }

    pub fn pilot_pattern(&self) -> Result<PilotPattern> {
        let cfg_err = |e: Error| Error::Config(format!("pilots {:?}: {e}", self.pilots));
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::Config(format!("pilots: bad number {s:?}")));
        let parts: Vec<&str> = self.pilots.split(':').collect();
        match parts.as_slice() {
            ["every", stride, offset] => PilotPattern::every(self.n_sub, num(stride)?, num(offset)?).map_err(cfg_err),
            ["hd", rb] => {
                let rb = num(rb)?;
                PilotPattern::high_density(self.n_sub / rb.max(1), rb).map_err(cfg_err)
            }
            ["ld", rb] => {
                let rb = num(rb)?;
                PilotPattern::low_density(self.n_sub / rb.max(1), rb).map_err(cfg_err)
            }
            ["list", items] => PilotPattern::custom(items.split(',').map(num).collect::<Result<_>>()?).map_err(cfg_err),
            _ => Err(Error::Config(format!("pilots: unknown pattern {:?}", self.pilots))),
        }
    }

    pub fn geometry(&self) -> Result<SystemGeometry> {
        SystemGeometry::new(self.n_tx, self.n_rx, self.n_sub, self.n_subband, self.pilot_pattern()?, self.subcarrier_spacing)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn profile(&self) -> MultipathProfile {
        MultipathProfile {
            n_paths: self.n_paths,
            delay_spread: self.delay_spread,
            angle_spread: self.angle_spread,
            seed: self.data_seed,
        }
    }

    /// Model configuration with the token layout of the subband precoders.
    pub fn feedback_config(&self) -> ModelConfig {
        ModelConfig { n_tokens: self.n_subband, d_tok: 2 * self.n_tx, ..self.model.clone() }
    }

    /// `(mode, bits per scalar, codebook size)` that spends exactly `bits`.
    pub fn budget_quantizer(&self, bits: usize) -> Result<(QuantMode, u8, usize)> {
        let m = self.model.keep;
        let bad = || Error::Config(format!("budget {bits} does not fit keep={m}, d_q={}", self.model.d_q));
        match self.budget_quant {
            QuantMode::Uniform => {
                let per = m * self.model.d_q;
                if per == 0 || bits % per != 0 || !(1..=16).contains(&(bits / per)) {
                    return Err(bad());
                }
                Ok((QuantMode::Uniform, (bits / per) as u8, self.model.vq_size))
            }
            QuantMode::Vq => {
                if m == 0 || bits % m != 0 || !(1..=16).contains(&(bits / m)) {
                    return Err(bad());
                }
                Ok((QuantMode::Vq, self.model.quant_bits, 1usize << (bits / m)))
            }
            QuantMode::Float => Err(bad()),
        }
    }
}

/// Train and test channels of a run, split 95/5 by sample index.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub geom: SystemGeometry,
    pub train: Vec<ChannelTensor>,
    pub test: Vec<ChannelTensor>,
}

/// Number of training samples out of `n`: the first 95%, leaving at least
/// one test sample.
pub fn train_count(n: usize) -> usize {
    (n * 95 / 100).clamp(1, n.saturating_sub(1).max(1))
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let geom = cfg.geometry()?;
    let mut all = match &cfg.data {
        Some(path) => {
            let hs = Dataset::load(path)?.to_channels()?;
            if let Some(h) = hs.iter().find(|h| (h.n_rx, h.n_sub, h.n_tx) != (geom.n_rx, geom.n_sub, geom.n_tx)) {
                return Err(Error::Format(format!(
                    "{}: channel {}x{}x{} does not match the configured geometry",
                    path.display(),
                    h.n_rx,
                    h.n_sub,
                    h.n_tx
                )));
            }
            hs
        }
        None => generate_batch(&geom, &cfg.profile(), cfg.data_seed, cfg.n_samples)?,
    };
    if all.len() < 2 {
        return Err(Error::Format("need at least two samples".into()));
    }
    let test = all.split_off(train_count(all.len()));
    Ok(ExperimentData { geom, train: all, test })
}

/// Writes channels, subband precoders and pilot observations at
/// `train.eval_snr_db` as containers under `dir`.
pub fn write_data(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let data = prepare_data(cfg)?;
    let all: Vec<ChannelTensor> = data.train.into_iter().chain(data.test).collect();
    let eig = all.iter().map(|h| precoders_lenient(h, data.geom.n_subband)).collect::<Result<Vec<_>>>()?;
    let obs = all
        .iter()
        .enumerate()
        .map(|(i, h)| observe_pilots(h, &data.geom, cfg.train.eval_snr_db, eval_seed(cfg.data_seed, i)))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(dir)?;
    let files = [
        (dir.join("channels.fmc1"), Dataset::from_channels(&all)?),
        (dir.join("eigen.fmc1"), Dataset::from_eigen(&eig)?),
        (dir.join("pilots.fmc1"), Dataset::from_pilots(&obs)?),
    ];
    let mut out = Vec::new();
    for (path, ds) in files {
        ds.save(&path)?;
        out.push(path);
    }
    Ok(out)
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub task: Task,
    pub regime: Regime,
    /// Feedback payload size; `None` for float or estimation-only rows.
    pub bits: Option<usize>,
    pub snr_db: Option<f64>,
    pub nmse_db: Option<f64>,
    pub nmse_db_ls: Option<f64>,
    pub rho: Option<f64>,
    pub rho_truncation: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub config_hash: String,
}

pub const RESULTS_HEADER: &str = "task,regime,bits,snr_db,nmse_db,nmse_db_ls,rho,rho_truncation,samples,seed,config_hash";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.task,
            self.regime,
            opt(self.bits),
            opt(self.snr_db),
            opt(self.nmse_db),
            opt(self.nmse_db_ls),
            opt(self.rho),
            opt(self.rho_truncation),
            self.samples,
            self.seed,
            self.config_hash
        )
    }
}

pub fn results_csv(rows: &[EvalResult]) -> String {
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Models produced by the training stage, keyed by artifact name.
#[derive(Debug, Clone, Default)]
pub struct Trained {
    pub estimation: Option<EstimationModel>,
    /// `(budget, model)`; `None` is the float model.
    pub feedback: Vec<(Option<usize>, FeedbackModel)>,
    pub reports: Vec<(String, TrainReport)>,
}

fn feedback_name(bits: Option<usize>) -> String {
    match bits {
        Some(b) => format!("feedback_{b}"),
        None => "feedback_float".into(),
    }
}

fn regime_for(cfg: &ExperimentConfig) -> Result<()> {
    let ok = match cfg.task {
        Task::Estimate => matches!(cfg.train.regime, Regime::Progressive | Regime::Joint),
        Task::Feedback => true,
        Task::Joint => matches!(cfg.train.regime, Regime::EndToEnd | Regime::Splited),
    };
    if !ok {
        return Err(Error::Config(format!("regime {} does not apply to task {}", cfg.train.regime, cfg.task)));
    }
    Ok(())
}

fn estimation_model(cfg: &ExperimentConfig, geom: &SystemGeometry) -> Result<EstimationModel> {
    EstimationModel::new(cfg.model.clone(), geom.n_rx, geom.n_tx, geom.n_sub, geom.pilots.indices.clone())
}

fn precoders(hs: &[ChannelTensor], n_subband: usize) -> Result<Vec<EigenMatrix>> {
    hs.iter().map(|h| precoders_lenient(h, n_subband)).collect()
}

/// Runs the configured task and regime. Held-out metrics are left to
/// [`evaluate_trained`].
pub fn train_models(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<Trained> {
    regime_for(cfg)?;
    let mut out = Trained::default();
    let t = &cfg.train;
    match cfg.task {
        Task::Estimate => {
            let mut m = estimation_model(cfg, &data.geom)?;
            let r = match t.regime {
                Regime::Joint => train_joint(&mut m, &data.geom, &data.train, &[], t)?,
                _ => train_progressive(&mut m, &data.geom, &data.train, &[], t)?,
            };
            out.reports.push(("estimation".into(), r));
            out.estimation = Some(m);
        }
        Task::Feedback => {
            let w = precoders(&data.train, data.geom.n_subband)?;
            let base = ModelConfig { quant: QuantMode::Float, ..cfg.feedback_config() };
            let mut float = FeedbackModel::new(base)?;
            out.reports.push((feedback_name(None), train_feedback(&mut float, &w, &[], t)?));
            let fine = TrainConfig { steps: 0, ..t.clone() };
            for &b in &cfg.budgets {
                let (mode, bits, k) = cfg.budget_quantizer(b)?;
                let mut m = float.with_quantizer(mode, bits, k)?;
                out.reports.push((feedback_name(Some(b)), train_feedback(&mut m, &w, &[], &fine)?));
                out.feedback.push((Some(b), m));
            }
            out.feedback.insert(0, (None, float));
        }
        Task::Joint => {
            let mut e = estimation_model(cfg, &data.geom)?;
            let mut f = FeedbackModel::new(cfg.feedback_config())?;
            let r = match t.regime {
                Regime::EndToEnd => train_end_to_end(&mut e, &mut f, &data.geom, &data.train, &[], t)?,
                _ => train_splited(&mut e, &mut f, &data.geom, &data.train, &[], t)?,
            };
            out.reports.push(("joint".into(), r));
            let bits = model_bits(&f)?;
            out.estimation = Some(e);
            out.feedback.push((bits, f));
        }
    }
    Ok(out)
}

fn model_bits(f: &FeedbackModel) -> Result<Option<usize>> {
    f.scheme()?.map(|s| payload_bits(&s, f.config.keep, f.config.d_q)).transpose()
}

/// Held-out evaluation of trained models.
pub fn evaluate_trained(cfg: &ExperimentConfig, data: &ExperimentData, trained: &Trained) -> Result<Vec<EvalResult>> {
    let row = |bits, snr_db| EvalResult {
        task: cfg.task,
        regime: cfg.train.regime,
        bits,
        snr_db,
        nmse_db: None,
        nmse_db_ls: None,
        rho: None,
        rho_truncation: None,
        samples: data.test.len(),
        seed: cfg.train.seed,
        config_hash: cfg.config_hash(),
    };
    let missing = |what: &str| Error::Format(format!("no trained {what} model"));
    let mut rows = Vec::new();
    match cfg.task {
        Task::Estimate => {
            let m = trained.estimation.as_ref().ok_or_else(|| missing("estimation"))?;
            for &snr in &cfg.snr_list {
                let e = evaluate_estimation(m, &data.geom, &data.test, snr, cfg.train.seed)?;
                rows.push(EvalResult { nmse_db: Some(e.nmse_db), nmse_db_ls: Some(e.nmse_db_ls), ..row(None, Some(snr)) });
            }
        }
        Task::Feedback => {
            let w = precoders(&data.test, data.geom.n_subband)?;
            if trained.feedback.is_empty() {
                return Err(missing("feedback"));
            }
            for (bits, m) in &trained.feedback {
                let r = evaluate_feedback(m, &w)?.0;
                let trunc = match bits {
                    Some(b) => {
                        let rec = w.iter().map(|x| baseline_truncation(x, BitBudget::Bits(*b))).collect::<Result<Vec<_>>>()?;
                        Some(rho(&w, &rec)?)
                    }
                    None => None,
                };
                rows.push(EvalResult { rho: Some(r), rho_truncation: trunc, ..row(*bits, None) });
            }
        }
        Task::Joint => {
            let e = trained.estimation.as_ref().ok_or_else(|| missing("estimation"))?;
            let (bits, f) = trained.feedback.first().ok_or_else(|| missing("feedback"))?;
            for &snr in &cfg.snr_list {
                let c = evaluate_composed(e, f, &data.geom, &data.test, snr, cfg.train.seed)?;
                rows.push(EvalResult { nmse_db: Some(c.nmse_db), rho: Some(c.rho), ..row(*bits, Some(snr)) });
            }
        }
    }
    Ok(rows)
}

/// Plot-ready data: `budget_rho.csv` for feedback rows, `snr_nmse.csv` for
/// estimation rows.
pub fn plot_files(rows: &[EvalResult]) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    let budget: Vec<_> = rows.iter().filter(|r| r.bits.is_some() && r.rho.is_some()).collect();
    if !budget.is_empty() {
        let mut s = String::from("bits,snr_db,rho,rho_truncation\n");
        for r in budget {
            let _ = writeln!(s, "{},{},{},{}", opt(r.bits), opt(r.snr_db), opt(r.rho), opt(r.rho_truncation));
        }
        out.push(("budget_rho.csv", s));
    }
    let snr: Vec<_> = rows.iter().filter(|r| r.snr_db.is_some() && r.nmse_db.is_some()).collect();
    if !snr.is_empty() {
        let mut s = String::from("snr_db,nmse_db,nmse_db_ls\n");
        for r in snr {
            let _ = writeln!(s, "{},{},{}", opt(r.snr_db), opt(r.nmse_db), opt(r.nmse_db_ls));
        }
        out.push(("snr_nmse.csv", s));
    }
    out
}

fn checkpoint_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.fmw1"))
}

/// Saves checkpoints, loss curves and summaries under `dir`.
pub fn save_trained(trained: &Trained, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    if let Some(e) = &trained.estimation {
        let p = checkpoint_path(dir, "estimation");
        e.to_checkpoint().save(&p)?;
        files.push(p);
    }
    for (bits, f) in &trained.feedback {
        let p = checkpoint_path(dir, &feedback_name(*bits));
        f.to_checkpoint()?.save(&p)?;
        files.push(p);
    }
    for (name, r) in &trained.reports {
        let p = dir.join(format!("train_{name}.csv"));
        fs::write(&p, r.to_csv())?;
        files.push(p);
        let p = dir.join(format!("summary_{name}.txt"));
        fs::write(&p, r.summary())?;
        files.push(p);
    }
    Ok(files)
}

/// Reloads the checkpoints [`save_trained`] wrote for this configuration.
pub fn load_trained(cfg: &ExperimentConfig, dir: &Path) -> Result<Trained> {
    let mut out = Trained::default();
    let load = |name: &str| Checkpoint::load(&checkpoint_path(dir, name));
    match cfg.task {
        Task::Estimate => out.estimation = Some(EstimationModel::from_checkpoint(&load("estimation")?)?),
        Task::Feedback => {
            out.feedback.push((None, FeedbackModel::from_checkpoint(&load(&feedback_name(None))?)?));
            for &b in &cfg.budgets {
                out.feedback.push((Some(b), FeedbackModel::from_checkpoint(&load(&feedback_name(Some(b)))?)?));
            }
        }
        Task::Joint => {
            out.estimation = Some(EstimationModel::from_checkpoint(&load("estimation")?)?);
            let f = FeedbackModel::from_checkpoint(&load(&feedback_name(None))?)
                .or_else(|_| -> Result<FeedbackModel> {
                    let name = fs::read_dir(dir)?
                        .filter_map(|e| e.ok())
                        .map(|e| e.file_name().to_string_lossy().into_owned())
                        .filter(|n| n.starts_with("feedback_") && n.ends_with(".fmw1"))
                        .min()
                        .ok_or_else(|| Error::Format("no feedback checkpoint".into()))?;
                    FeedbackModel::from_checkpoint(&Checkpoint::load(&dir.join(name))?)
                })?;
            let bits = model_bits(&f)?;
            out.feedback.push((bits, f));
        }
    }
    Ok(out)
}

/// Writes `results.csv` and the plot files.
pub fn write_results(rows: &[EvalResult], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = vec![dir.join("results.csv")];
    fs::write(&files[0], results_csv(rows))?;
    for (name, text) in plot_files(rows) {
        let p = dir.join(name);
        fs::write(&p, text)?;
        files.push(p);
    }
    Ok(files)
}

/// Result rows plus every file written.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub results: Vec<EvalResult>,
    pub files: Vec<PathBuf>,
}

/// data → train → eval → report files under `cfg.out_dir`. Errors are
/// tagged with the failing stage; files already written are kept.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let dir = &cfg.out_dir;
    let data = prepare_data(cfg).map_err(|e| e.in_stage("data"))?;
    let trained = train_models(cfg, &data).map_err(|e| e.in_stage("train"))?;
    let mut files = save_trained(&trained, dir).map_err(|e| e.in_stage("train"))?;
    let results = evaluate_trained(cfg, &data, &trained).map_err(|e| e.in_stage("eval"))?;
    files.extend(write_results(&results, dir).map_err(|e| e.in_stage("report"))?);
    let manifest = dir.join("manifest.txt");
    fs::write(&manifest, manifest_text(cfg, &files)).map_err(|e| Error::from(e).in_stage("report"))?;
    files.push(manifest);
    Ok(ExperimentOutput { results, files })
}

/// Configuration echo and artifact list of a run.
pub fn manifest_text(cfg: &ExperimentConfig, files: &[PathBuf]) -> String {
    let mut s = format_kv(&cfg.to_kv());
    let _ = writeln!(s, "config_hash={}", cfg.config_hash());
    for (i, f) in files.iter().enumerate() {
        let _ = writeln!(s, "artifact.{i}={}", f.display());
    }
    s
}

/// Mean frequency correlation of channels with a given path count.
#[derive(Debug, Clone)]
pub struct CorrSummary {
    pub n_paths: usize,
    /// `subcarrier` or `subband`.
    pub unit: &'static str,
    /// Sample-averaged correlation matrix.
    pub matrix: Tensor,
    pub mean_off_diagonal: f64,
}

/// Frequency correlation across subcarriers (channel spatial vectors) and
/// subbands (precoders), averaged over `n_samples` channels for every
/// path count in `corr_paths`.
pub fn analyze_correlation(cfg: &ExperimentConfig) -> Result<Vec<CorrSummary>> {
    let geom = cfg.geometry()?;
    let mut out = Vec::new();
    for &l in &cfg.corr_paths {
        let profile = MultipathProfile { n_paths: l, ..cfg.profile() };
        let hs = generate_batch(&geom, &profile, cfg.data_seed, cfg.n_samples)?;
        let mut sub = Tensor::zeros(&[geom.n_sub, geom.n_sub]);
        let mut band = Tensor::zeros(&[geom.n_subband, geom.n_subband]);
        for h in &hs {
            let c = freq_correlation(FreqInput::Channel(h))?;
            sub.data_mut().iter_mut().zip(c.data()).for_each(|(a, b)| *a += b / hs.len() as f64);
            if geom.n_subband >= 2 {
                let w = precoders_lenient(h, geom.n_subband)?;
                let c = freq_correlation(FreqInput::Eigen(&w))?;
                band.data_mut().iter_mut().zip(c.data()).for_each(|(a, b)| *a += b / hs.len() as f64);
            }
        }
        out.push(CorrSummary { n_paths: l, unit: "subcarrier", mean_off_diagonal: mean_off_diagonal(&sub), matrix: sub });
        if geom.n_subband >= 2 {
            out.push(CorrSummary { n_paths: l, unit: "subband", mean_off_diagonal: mean_off_diagonal(&band), matrix: band });
        }
    }
    Ok(out)
}

/// Writes `corr_summary.csv` and one `corr_{unit}_L{paths}.csv` matrix per
/// entry.
pub fn write_correlation(rows: &[CorrSummary], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut summary = String::from("n_paths,unit,mean_off_diagonal\n");
    let mut files = Vec::new();
    for r in rows {
        let _ = writeln!(summary, "{},{},{}", r.n_paths, r.unit, r.mean_off_diagonal);
        let mut m = String::new();
        for i in 0..r.matrix.rows() {
            let line: Vec<String> = r.matrix.row(i).iter().map(|v| v.to_string()).collect();
            m.push_str(&line.join(","));
            m.push('\n');
        }
        let p = dir.join(format!("corr_{}_L{}.csv", r.unit, r.n_paths));
        fs::write(&p, m)?;
        files.push(p);
    }
    let p = dir.join("corr_summary.csv");
    fs::write(&p, summary)?;
    files.insert(0, p);
    Ok(files)
}

/// Markdown digest of a results table.
pub fn report_text(cfg: &ExperimentConfig, rows: &[EvalResult]) -> String {
    let mut s = format!("# Run {}\n\ntask={} regime={} seed={} test_samples={}\n\n", cfg.config_hash(), cfg.task, cfg.train.regime, cfg.train.seed, rows.first().map_or(0, |r| r.samples));
    s.push_str("| bits | snr_db | nmse_db | nmse_db_ls | rho | rho_truncation |\n|---|---|---|---|---|---|\n");
    let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            r.bits.map_or("float".into(), |b| b.to_string()),
            f(r.snr_db),
            f(r.nmse_db),
            f(r.nmse_db_ls),
            f(r.rho),
            f(r.rho_truncation)
        );
    }
    s
}

/// Process exit status for an error: 2 config, 3 data, 4 divergence, 1
/// otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) => 2,
        Error::Format(_) | Error::Io(_) => 3,
        Error::Divergence { .. } => 4,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_text(out: &Path) -> String {
        format!(
            "out_dir={}\nn_samples=20\nn_tx=2\nn_rx=1\nn_sub=8\nn_subband=4\npilots=every:2:0\n\
             d_model=8\nn_heads=1\nenc_depth=1\ndec_depth=1\nmixer_blocks=1\nkeep=2\nd_q=2\n\
             budgets=8,16\nsnr_list=10\nsteps=3\nsteps2=2\nquant_steps=2\nbatch_size=4\n",
            out.display()
        )
    }

    #[test]
    fn kv_round_trip_and_unknown_keys() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert!(matches!(ExperimentConfig::from_text("nope=1"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_text("steps=abc"), Err(Error::Config(_))));
    }

    #[test]
    fn seed_override() {
        let mut c = ExperimentConfig::default();
        c.apply_seed_override(Some("42")).unwrap();
        assert_eq!(c.train.seed, 42);
        assert!(c.apply_seed_override(Some("x")).is_err());
        let h = c.config_hash();
        c.apply_seed_override(None).unwrap();
        assert_eq!(c.config_hash(), h);
    }

    #[test]
    fn budgets_map_to_quantizers() {
        let c = ExperimentConfig { model: ModelConfig { keep: 8, d_q: 4, ..Default::default() }, ..Default::default() };
        assert_eq!(c.budget_quantizer(64).unwrap().1, 2);
        assert_eq!(c.budget_quantizer(256).unwrap().1, 8);
        assert!(c.budget_quantizer(65).is_err());
        let v = ExperimentConfig { budget_quant: QuantMode::Vq, ..c };
        assert_eq!(v.budget_quantizer(64).unwrap().2, 256);
    }

    #[test]
    fn split_is_95_5() {
        assert_eq!(train_count(200), 190);
        assert_eq!(train_count(20), 19);
        assert_eq!(train_count(2), 1);
    }

    #[test]
    fn pilot_specs() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.pilot_pattern().unwrap().indices, vec![1, 5, 9, 13]);
        c.pilots = "list:0,3".into();
        assert_eq!(c.pilot_pattern().unwrap().indices, vec![0, 3]);
        c.pilots = "hd:4".into();
        assert_eq!(c.pilot_pattern().unwrap().indices, vec![4, 5, 6, 7, 12, 13, 14, 15]);
        c.pilots = "zz".into();
        assert!(matches!(c.pilot_pattern(), Err(Error::Config(_))));
    }

    #[test]
    fn feedback_run_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let run = |sub: &str| {
            let c = ExperimentConfig::from_text(&tiny_text(&dir.path().join(sub))).unwrap();
            let out = run_experiment(&c).unwrap();
            (out.results, fs::read(dir.path().join(sub).join("results.csv")).unwrap())
        };
        let (a, fa) = run("a");
        let (b, fb) = run("b");
        assert_eq!(fa, fb);
        assert_eq!(a.len(), 3);
        assert!(a[1].rho_truncation.is_some());
        let _ = b;
        assert!(dir.path().join("a/budget_rho.csv").exists());
        // eval from checkpoints matches
        let c = ExperimentConfig::from_text(&tiny_text(&dir.path().join("a"))).unwrap();
        let data = prepare_data(&c).unwrap();
        let t = load_trained(&c, &c.out_dir).unwrap();
        assert_eq!(evaluate_trained(&c, &data, &t).unwrap(), a);
    }

    #[test]
    fn estimation_and_joint_runs() {
        let dir = tempfile::tempdir().unwrap();
        let text = tiny_text(dir.path()) + "task=estimate\nregime=joint\n";
        let out = run_experiment(&ExperimentConfig::from_text(&text).unwrap()).unwrap();
        assert!(out.results[0].nmse_db.is_some() && out.results[0].nmse_db_ls.is_some());
        assert!(dir.path().join("snr_nmse.csv").exists());
        let text = tiny_text(dir.path()) + "task=joint\nregime=end_to_end\n";
        let out = run_experiment(&ExperimentConfig::from_text(&text).unwrap()).unwrap();
        assert!(out.results[0].rho.is_some());
        let text = tiny_text(dir.path()) + "task=estimate\nregime=splited\n";
        let err = run_experiment(&ExperimentConfig::from_text(&text).unwrap()).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(err.to_string().starts_with("train stage"));
    }

    #[test]
    fn correlation_has_unit_diagonal() {
        let c = ExperimentConfig { n_samples: 3, corr_paths: vec![1], ..Default::default() };
        let rows = analyze_correlation(&c).unwrap();
        assert_eq!(rows.len(), 2);
        assert!((rows[0].mean_off_diagonal - 1.0).abs() < 1e-9);
        for i in 0..c.n_sub {
            assert!((rows[0].matrix.get(i, i) - 1.0).abs() < 1e-12);
        }
    }
}
