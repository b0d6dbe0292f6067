//! Simulated-calendar orchestration of the monthly tiny model, the weekly
//! complete model and the daily ad model.

mod ablation;
mod arms;
mod config;
mod events;

pub use ablation::{arm_dir_name, run_ablation};
pub use arms::{expand_arms, Arm, Variant, PRESETS};
pub use config::RunConfig;
pub use events::{parse_event_log, Event};

use std::collections::HashMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::calendar::{
    is_monday, is_month_start, month, Calendar, DAYS_PER_MONTH, RECENT_WINDOW_DAYS,
    TPM_WINDOW_MONTHS,
};
use crate::datagen::{gen_world, stream, Domain, ImpressionLog, ImpressionSample, LatentWorld, KEY_FIELDS};
use crate::embstore::{SnapshotStore, Side};
use crate::error::{Error, Result};
use crate::eval::{auc, gauc, group_by_user, ArmResult, DailyPoint, EvalReport};
use crate::models::{
    save_checkpoint, transfer_parameters, CompleteConfig, CompleteModel, Histories, HistorySource,
    TinyConfig, TinyModel,
};
use crate::nncore::HISTORY_SLOTS;

const TAG_TPM: u64 = 101;
const TAG_TPM_ORDER: u64 = 102;
const TAG_CPM: u64 = 103;
const TAG_CPM_ORDER: u64 = 104;
const TAG_ACTR: u64 = 105;
const TAG_ACTR_ORDER: u64 = 106;

/// Generated world and its impression log for one seed.
pub struct SimData {
    pub seed: u64,
    /// Absent when the log was read from files.
    pub world: Option<LatentWorld>,
    pub log: ImpressionLog,
}

impl SimData {
    pub fn generate(config: &RunConfig, seed: u64) -> Result<Self> {
        let world = gen_world(&config.world, seed)?;
        let log = ImpressionLog::generate(&world)?;
        Ok(Self {
            seed,
            world: Some(world),
            log,
        })
    }

    pub fn from_log(seed: u64, log: ImpressionLog) -> Self {
        Self { seed, world: None, log }
    }
}

/// Trained artifacts shared between arms of one seed whose configs agree
/// on everything the artifact depends on.
#[derive(Default)]
pub struct RunCache {
    tpm: HashMap<String, (SnapshotStore, f64)>,
    cpm: HashMap<String, (CompleteModel, f64)>,
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone)]
pub struct CpmCheckpoint {
    pub day: u32,
    pub model: CompleteModel,
    pub path: Option<PathBuf>,
}

/// Mutable state threaded through the calendar.
#[derive(Debug, Default)]
pub struct PipelineState {
    pub store: Option<SnapshotStore>,
    pub histories: Option<Histories>,
    pub cpm: Option<CpmCheckpoint>,
    pub actr: Option<CompleteModel>,
    pub events: Vec<Event>,
    /// Training samples whose day was checked against the event day.
    pub audited_samples: u64,
    /// `(user, score, label)` for every scored final-month ad impression.
    pub final_month: Vec<(u32, f64, u8)>,
    pub daily: Vec<(u32, Option<f64>, usize)>,
}

/// Outcome of [`run_calendar`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub label: String,
    pub seed: u64,
    pub report: EvalReport,
    pub events: Vec<Event>,
    pub warmup_completed: bool,
    pub audited_samples: u64,
}

impl RunOutcome {
    pub fn event_log(&self) -> String {
        self.events.iter().map(|e| e.to_line() + "\n").collect()
    }

    pub fn result(&self) -> &ArmResult {
        &self.report.results[0]
    }
}

pub struct Pipeline<'a> {
    pub config: &'a RunConfig,
    pub data: &'a SimData,
    pub out_dir: Option<PathBuf>,
    cache: Option<&'a mut RunCache>,
    pub state: PipelineState,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn clear_files(dir: &Path, ext: &str) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == ext) {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

impl<'a> Pipeline<'a> {
    pub fn new(
        config: &'a RunConfig,
        data: &'a SimData,
        out_dir: Option<PathBuf>,
        cache: Option<&'a mut RunCache>,
    ) -> Result<Self> {
        config.validate()?;
        if data.log.horizon_days() != config.world.horizon_days() {
            return Err(Error::config("impression log horizon does not match config"));
        }
        if let Some(dir) = &out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        Ok(Self {
            config,
            data,
            out_dir,
            cache,
            state: PipelineState::default(),
        })
    }

    fn seed(&self) -> u64 {
        self.data.seed
    }

    fn log_event(&mut self, day: u32, action: &str, window: Option<Range<u32>>, metrics: Vec<(String, String)>) {
        self.state.events.push(Event {
            day,
            action: action.to_string(),
            window,
            metrics,
        });
    }

    fn warn(&mut self, day: u32, what: &str, reason: &str) {
        self.log_event(
            day,
            "skip",
            None,
            vec![("event".into(), what.into()), ("reason".into(), reason.into())],
        );
    }

    /// Records that a sample from `sample_day` feeds training for an event on `day`.
    fn audit(&mut self, day: u32, samples: &[&ImpressionSample]) -> Result<()> {
        if let Some(s) = samples.iter().find(|s| s.day >= day) {
            return Err(Error::Data(format!(
                "training window for day {day} contains a sample from day {}",
                s.day
            )));
        }
        self.state.audited_samples += samples.len() as u64;
        Ok(())
    }

    pub fn complete_config(&self) -> CompleteConfig {
        CompleteConfig {
            vocabs: self.config.world.field_vocabs(),
            dim: self.config.dim,
            history_dim: self.config.history_dim,
            hidden: self.config.complete_hidden.clone(),
            learning_rate: self.config.lr,
            shared_attention: self.config.shared_attention,
            batch_norm: self.config.batch_norm,
        }
    }

    fn tiny_config(&self) -> TinyConfig {
        let v = self.config.world.field_vocabs();
        let mut vocabs = [0; KEY_FIELDS];
        vocabs.copy_from_slice(&v[..KEY_FIELDS]);
        TinyConfig {
            vocabs,
            dim: self.config.history_dim,
            hidden: self.config.tiny_hidden,
            learning_rate: self.config.tpm_lr,
        }
    }

    fn tpm_key(&self, day: u32) -> String {
        let c = self.config;
        format!(
            "{}|{day}|{}|{}|{}|{}|{}|{}",
            self.seed(),
            world_key(c),
            c.history_dim,
            c.tiny_hidden,
            c.tpm_lr,
            c.tpm_batch,
            c.tpm_epochs
        )
    }

    fn cpm_key(&self, day: u32) -> String {
        let c = self.config;
        let hist = if c.variant.uses_history() {
            format!("h{}|{}", c.history_months, self.tpm_key(day))
        } else {
            "nohist".to_string()
        };
        format!(
            "{}|{day}|{}|{}|{}|{:?}|{}|{}|{}|{}|{}|{}|{}|{}",
            self.seed(),
            world_key(c),
            c.dim,
            c.history_dim,
            c.complete_hidden,
            c.lr,
            c.batch,
            c.cpm_epochs,
            c.shared_attention,
            c.batch_norm,
            c.cpm_warm_start,
            c.variant == Variant::SampleMerging,
            hist
        )
    }

    /// Retrains the tiny model from scratch over the six months before
    /// `day`, month by month, snapshotting the last three months.
    pub fn tpm_monthly_update(&mut self, day: u32) -> Result<()> {
        if !is_month_start(day) {
            return Err(Error::config(format!("day {day} is not a month start")));
        }
        let m = month(day);
        if m < TPM_WINDOW_MONTHS {
            self.warn(day, "tpm", "insufficient_history");
            return Ok(());
        }
        let start = (m - TPM_WINDOW_MONTHS) * DAYS_PER_MONTH;
        let key = self.tpm_key(day);
        let cached = self.cache.as_ref().and_then(|c| c.tpm.get(&key).cloned());
        let (store, loss) = match cached {
            Some(hit) => {
                let samples: Vec<&ImpressionSample> = self.data.log.window(Domain::Natural, start..day).collect();
                self.audit(day, &samples)?;
                hit
            }
            None => {
                let trained = self.train_tpm(day, m)?;
                if let Some(c) = self.cache.as_mut() {
                    c.tpm.insert(key, trained.clone());
                }
                trained
            }
        };
        if let Some(dir) = &self.out_dir {
            let sdir = dir.join("store");
            clear_files(&sdir, "snap")?;
            store.save_dir(&sdir)?;
        }
        let c = self.config;
        self.state.histories = Some(Histories::from_store(
            &store,
            c.world.users,
            c.world.items,
            c.history_months,
        )?);
        let tags = store.month_tags(Side::User);
        self.state.store = Some(store);
        self.log_event(
            day,
            "tpm",
            Some(start..day),
            vec![
                ("loss".into(), format!("{loss:.6}")),
                ("oldest_tag".into(), tags.first().map_or("NA".into(), u32::to_string)),
                ("newest_tag".into(), tags.last().map_or("NA".into(), u32::to_string)),
            ],
        );
        Ok(())
    }

    fn train_tpm(&mut self, day: u32, m: u32) -> Result<(SnapshotStore, f64)> {
        let mut model = TinyModel::new(self.tiny_config(), &mut stream(self.seed(), TAG_TPM, day as u64));
        let mut order_rng = stream(self.seed(), TAG_TPM_ORDER, day as u64);
        let mut store = SnapshotStore::new(self.config.retention_k);
        let mut last_losses = Vec::new();
        for mm in m - TPM_WINDOW_MONTHS..m {
            let range = mm * DAYS_PER_MONTH..(mm + 1) * DAYS_PER_MONTH;
            let mut samples: Vec<&ImpressionSample> = self.data.log.window(Domain::Natural, range).collect();
            self.audit(day, &samples)?;
            last_losses.clear();
            for _ in 0..self.config.tpm_epochs {
                samples.shuffle(&mut order_rng);
                for batch in samples.chunks(self.config.tpm_batch) {
                    last_losses.push(model.train_batch(batch)?);
                }
            }
            if mm + HISTORY_SLOTS as u32 >= m {
                for side in [Side::User, Side::Item] {
                    store.put_snapshot(model.snapshot(side, mm))?;
                }
            }
        }
        Ok((store, mean(&last_losses)))
    }

    fn history_source_for_training(&self, day: u32, what: &str) -> Result<Option<Histories>> {
        let c = self.config;
        if !c.variant.uses_history() {
            return Ok(Some(Histories::none(c.history_dim)));
        }
        let Some(store) = &self.state.store else {
            return Ok(None);
        };
        if !store.is_warm() {
            return Ok(None);
        }
        if what == "cpm" {
            check_non_overlap(&store.month_tags(Side::User), day)?;
        }
        Ok(self.state.histories.clone())
    }

    /// Trains the weekly complete model on the last 30 days before `day` and
    /// keeps it as the only checkpoint.
    pub fn cpm_weekly_update(&mut self, day: u32) -> Result<()> {
        if !is_monday(day) {
            return Err(Error::config(format!("day {day} is not a Monday")));
        }
        let Some(histories) = self.history_source_for_training(day, "cpm")? else {
            self.warn(day, "cpm", "store_not_warm");
            return Ok(());
        };
        let window = day.saturating_sub(RECENT_WINDOW_DAYS)..day;
        let mut samples: Vec<&ImpressionSample> = self.data.log.window(Domain::Natural, window.clone()).collect();
        if self.config.variant == Variant::SampleMerging {
            samples.extend(self.data.log.window(Domain::Ad, window.clone()));
        }
        self.audit(day, &samples)?;
        let key = self.cpm_key(day);
        let cached = self.cache.as_ref().and_then(|c| c.cpm.get(&key).cloned());
        let (model, loss) = match cached {
            Some(hit) => hit,
            None => {
                let mut model = match (&self.state.cpm, self.config.cpm_warm_start) {
                    (Some(prev), true) => {
                        let mut m = prev.model.clone();
                        m.reset_optimizer();
                        m
                    }
                    _ => CompleteModel::new(self.complete_config(), &mut stream(self.seed(), TAG_CPM, day as u64)),
                };
                let mut rng = stream(self.seed(), TAG_CPM_ORDER, day as u64);
                let loss = train_epochs(&mut model, &mut samples, &histories, self.config.cpm_epochs, self.config.batch, &mut rng)?;
                model.round_to_f32();
                if let Some(c) = self.cache.as_mut() {
                    c.cpm.insert(key, (model.clone(), loss));
                }
                (model, loss)
            }
        };
        let path = match &self.out_dir {
            Some(dir) => {
                let cdir = dir.join("checkpoints");
                fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
                clear_files(&cdir, "ckpt")?;
                let p = cdir.join(format!("cpm_d{day:04}.ckpt"));
                save_checkpoint(&model, &p)?;
                Some(p)
            }
            None => None,
        };
        let tags = self.state.store.as_ref().map(|s| s.month_tags(Side::User)).unwrap_or_default();
        let mut metrics = vec![
            ("loss".to_string(), format!("{loss:.6}")),
            ("samples".to_string(), samples.len().to_string()),
        ];
        if self.config.variant.uses_history() {
            metrics.push(("snapshot_max".into(), tags.last().map_or("NA".into(), u32::to_string)));
        }
        self.state.cpm = Some(CpmCheckpoint { day, model, path });
        self.log_event(day, "cpm", Some(window), metrics);
        Ok(())
    }

    /// Builds the day's ad model, fine-tunes it on the last 30 days of ad
    /// data and scores that day's ad traffic.
    pub fn actr_daily_update(&mut self, day: u32) -> Result<()> {
        let c = self.config;
        let window = day.saturating_sub(RECENT_WINDOW_DAYS)..day;
        let Some(histories) = self.history_source_for_training(day, "actr")? else {
            self.warn(day, "actr", "store_not_warm");
            return Ok(());
        };
        let (model, loss, action) = if c.variant.fine_tunes() {
            let mut init = stream(self.seed(), TAG_ACTR, day as u64);
            let fresh = CompleteModel::new(self.complete_config(), &mut init);
            let mut model = if c.variant.transfers() {
                let Some(cpm) = &self.state.cpm else {
                    self.warn(day, "actr", "no_checkpoint");
                    return Ok(());
                };
                transfer_parameters(&cpm.model, fresh, c.transfer)?
            } else {
                fresh
            };
            let mut samples: Vec<&ImpressionSample> = self.data.log.window(Domain::Ad, window.clone()).collect();
            self.audit(day, &samples)?;
            let mut rng = stream(self.seed(), TAG_ACTR_ORDER, day as u64);
            let loss = train_epochs(&mut model, &mut samples, &histories, c.actr_epochs, c.batch, &mut rng)?;
            (model, Some(loss), "actr")
        } else {
            let Some(cpm) = &self.state.cpm else {
                self.warn(day, "eval", "no_checkpoint");
                return Ok(());
            };
            (cpm.model.clone(), None, "eval")
        };

        let test: Vec<&ImpressionSample> = self.data.log.day(Domain::Ad, day).iter().collect();
        let scores = model.predict_batch(&test, HistorySource::Triples(&histories))?;
        let users: Vec<u32> = test.iter().map(|s| s.user_id).collect();
        let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
        let day_gauc = gauc(&group_by_user(&users, &scores, &labels)).ok();
        let final_month = Calendar::new(c.world.horizon_months).final_month();
        if final_month.contains(&day) {
            for ((u, s), l) in users.iter().zip(&scores).zip(&labels) {
                self.state.final_month.push((*u, *s, *l));
            }
        }
        self.state.daily.push((day, day_gauc, test.len()));
        let mut metrics = Vec::new();
        if let Some(l) = loss {
            metrics.push(("loss".to_string(), format!("{l:.6}")));
        }
        metrics.push(("gauc".into(), day_gauc.map_or("NA".into(), |g| format!("{g:.6}"))));
        metrics.push(("impressions".into(), test.len().to_string()));
        let logged_window = if loss.is_some() { Some(window) } else { None };
        self.log_event(day, action, logged_window, metrics);
        self.state.actr = Some(model);
        Ok(())
    }

    /// Fires every due event in day order, TPM before CPM before A-CTR.
    pub fn run(mut self, label: &str) -> Result<RunOutcome> {
        let c = self.config;
        let cal = Calendar::new(c.world.horizon_months);
        let tpm_days = cal.tpm_days();
        let cpm_days = cal.cpm_days();
        let first_actr = Calendar::first_weekly_day();
        for day in cal.days() {
            if c.variant.uses_history() && tpm_days.contains(&day) {
                self.tpm_monthly_update(day)?;
            }
            if c.variant.uses_cpm() && cpm_days.contains(&day) {
                self.cpm_weekly_update(day)?;
            }
            if day >= first_actr {
                self.actr_daily_update(day)?;
            }
        }
        let warmup_completed = !tpm_days.is_empty();
        if !warmup_completed {
            let end = cal.horizon_days;
            self.warn(end.saturating_sub(1), "run", "warmup_not_completed");
        }

        let pool = &self.state.final_month;
        let users: Vec<u32> = pool.iter().map(|p| p.0).collect();
        let scores: Vec<f64> = pool.iter().map(|p| p.1).collect();
        let labels: Vec<u8> = pool.iter().map(|p| p.2).collect();
        let final_gauc = gauc(&group_by_user(&users, &scores, &labels)).ok();
        let pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
        let final_auc = auc(&pairs);

        let seed = self.seed();
        let mut report = EvalReport::new(c.fingerprint());
        report.results.push(ArmResult {
            variant: label.to_string(),
            seed,
            gauc: final_gauc,
            auc: final_auc,
            error: None,
        });
        report.daily = self
            .state
            .daily
            .iter()
            .map(|&(day, g, n)| DailyPoint {
                variant: label.to_string(),
                seed,
                day,
                gauc: g,
                impressions: n,
            })
            .collect();
        let outcome = RunOutcome {
            label: label.to_string(),
            seed,
            report,
            events: std::mem::take(&mut self.state.events),
            warmup_completed,
            audited_samples: self.state.audited_samples,
        };
        if let Some(dir) = &self.out_dir {
            write_run_files(dir, c, &outcome, self.state.actr.as_ref())?;
        }
        Ok(outcome)
    }
}

/// Snapshot months consumed by a weekly update must precede its training month.
pub fn check_non_overlap(snapshot_months: &[u32], day: u32) -> Result<()> {
    let training_month = month(day);
    if snapshot_months.iter().any(|&t| t >= training_month) {
        return Err(Error::Overlap {
            snapshot_months: snapshot_months.to_vec(),
            training_month,
        });
    }
    Ok(())
}

pub(crate) fn world_key(c: &RunConfig) -> String {
    let mut out = String::new();
    for k in &RunConfig::KEYS[..RunConfig::WORLD_KEYS] {
        out.push_str(&c.get(k).unwrap_or_default());
        out.push('/');
    }
    out
}

fn train_epochs(
    model: &mut CompleteModel,
    samples: &mut [&ImpressionSample],
    histories: &Histories,
    epochs: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let min_batch = if model.norms.is_empty() { 1 } else { 2 };
    let mut losses = Vec::new();
    for _ in 0..epochs {
        losses.clear();
        samples.shuffle(rng);
        for chunk in samples.chunks(batch) {
            if chunk.len() >= min_batch {
                losses.push(model.train_batch(chunk, histories)?);
            }
        }
    }
    Ok(mean(&losses))
}

fn write_run_files(dir: &Path, c: &RunConfig, outcome: &RunOutcome, actr: Option<&CompleteModel>) -> Result<()> {
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("config.txt", c.to_text())?;
    write("events.log", outcome.event_log())?;
    write("report.csv", outcome.report.to_csv())?;
    write("daily.csv", outcome.report.daily_csv())?;
    if let Some(m) = actr {
        let cdir = dir.join("checkpoints");
        fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
        save_checkpoint(m, &cdir.join("actr_final.ckpt"))?;
    }
    Ok(())
}

/// Runs one arm for one seed, generating data inline.
pub fn run_calendar(config: &RunConfig, seed: u64) -> Result<RunOutcome> {
    let data = SimData::generate(config, seed)?;
    Pipeline::new(config, &data, None, None)?.run(config.variant.as_str())
}
