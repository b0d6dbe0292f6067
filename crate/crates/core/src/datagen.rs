//! Reproducible synthetic two-domain impression logs.
//!
//! Users and items carry latent factors; a click is Bernoulli with logit
//! `scale·u(day)·v/√k + item_bias + user_bias + domain_bias` (plus an
//! ad-only item quality term). User factors rotate slowly in random 2-D
//! planes so that preferences drift month over month while their norms,
//! and the non-rotating part of each vector, stay put.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::calendar::{month, DAYS_PER_MONTH, DAYS_PER_WEEK};
use crate::error::{Error, Result};
use crate::nncore::sigmoid;

pub const KEY_FIELDS: usize = 5;
pub const CONTEXT_FIELDS: usize = 10;
pub const COMPLETE_FIELDS: usize = KEY_FIELDS + CONTEXT_FIELDS;

/// Field names in serialization order. The first five are the key fields.
pub const FIELD_NAMES: [&str; COMPLETE_FIELDS] = [
    "user_id",
    "item_id",
    "category_id",
    "user_profile",
    "item_profile",
    "user_sign_a",
    "user_sign_b",
    "item_sign_a",
    "item_sign_b",
    "day_of_week",
    "hour",
    "device",
    "city",
    "price",
    "activity",
];

const SIGN_VOCAB: usize = 16;
const PROFILE_BUCKETS: usize = 10;
const HOUR_VOCAB: usize = 6;
const DEVICE_VOCAB: usize = 4;
const CITY_VOCAB: usize = 20;
const PRICE_VOCAB: usize = 8;
const ACTIVITY_VOCAB: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Natural,
    Ad,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Natural => "natural",
            Domain::Ad => "ad",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "natural" => Some(Domain::Natural),
            "ad" => Some(Domain::Ad),
            _ => None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Generator constants. All of them are artifact choices.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub users: usize,
    pub items: usize,
    pub ad_items: usize,
    pub latent_dim: usize,
    pub horizon_months: u32,
    /// Radians per month.
    pub drift_rate: f64,
    /// Rotation planes per user; each plane is a disjoint pair of latent dims.
    pub drift_planes: usize,
    pub natural_per_month: usize,
    pub ad_per_month: usize,
    pub natural_ctr: f64,
    pub ad_ctr: f64,
    /// Explicit domain biases; when `None` they are calibrated to the CTR targets.
    pub natural_bias: Option<f64>,
    pub ad_bias: Option<f64>,
    pub interaction_scale: f64,
    pub item_bias_std: f64,
    pub user_bias_std: f64,
    pub ad_quality_std: f64,
    /// Spread of an hour-of-day effect present only in ad traffic.
    pub ad_hour_std: f64,
    /// Log-normal sigma of user activity weights.
    pub activity_sigma: f64,
    /// Log-normal sigma of item popularity weights.
    pub popularity_sigma: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            users: 20_000,
            items: 5_000,
            ad_items: 1_000,
            latent_dim: 8,
            horizon_months: 8,
            drift_rate: 0.08,
            drift_planes: 2,
            natural_per_month: 200_000,
            ad_per_month: 20_000,
            natural_ctr: 0.08,
            ad_ctr: 0.02,
            natural_bias: None,
            ad_bias: None,
            interaction_scale: 1.5,
            item_bias_std: 1.0,
            user_bias_std: 0.5,
            ad_quality_std: 0.7,
            ad_hour_std: 3.0,
            activity_sigma: 2.0,
            popularity_sigma: 1.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 || self.latent_dim == 0 || self.horizon_months == 0 {
            return Err(Error::config("users, items, latent_dim and horizon_months must be >= 1"));
        }
        if self.ad_items == 0 || self.ad_items > self.items {
            return Err(Error::config(format!(
                "ad item subset ({}) must be in 1..={} (item count)",
                self.ad_items, self.items
            )));
        }
        if 2 * self.drift_planes > self.latent_dim {
            return Err(Error::config(format!(
                "{} drift planes need {} latent dims, have {}",
                self.drift_planes,
                2 * self.drift_planes,
                self.latent_dim
            )));
        }
        for (name, ctr) in [("natural_ctr", self.natural_ctr), ("ad_ctr", self.ad_ctr)] {
            if !(ctr > 0.0 && ctr < 1.0) {
                return Err(Error::config(format!("{name} must be in (0,1)")));
            }
        }
        if !self.drift_rate.is_finite() {
            return Err(Error::config("drift_rate must be finite"));
        }
        Ok(())
    }

    pub fn horizon_days(&self) -> u32 {
        self.horizon_months * DAYS_PER_MONTH
    }

    /// Vocabulary size of every complete field, in [`FIELD_NAMES`] order.
    pub fn field_vocabs(&self) -> [usize; COMPLETE_FIELDS] {
        [
            self.users,
            self.items,
            2 * self.latent_dim,
            2 * self.latent_dim,
            PROFILE_BUCKETS,
            SIGN_VOCAB,
            SIGN_VOCAB,
            SIGN_VOCAB,
            SIGN_VOCAB,
            DAYS_PER_WEEK as usize,
            HOUR_VOCAB,
            DEVICE_VOCAB,
            CITY_VOCAB,
            PRICE_VOCAB,
            ACTIVITY_VOCAB,
        ]
    }
}

/// One impression event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImpressionSample {
    pub user_id: u32,
    pub item_id: u32,
    pub category_id: u32,
    pub user_profile_bucket: u32,
    pub item_profile_bucket: u32,
    pub context: [u32; CONTEXT_FIELDS],
    pub domain: Domain,
    pub day: u32,
    pub label: u8,
}

impl ImpressionSample {
    pub fn key_fields(&self) -> [u32; KEY_FIELDS] {
        [
            self.user_id,
            self.item_id,
            self.category_id,
            self.user_profile_bucket,
            self.item_profile_bucket,
        ]
    }

    pub fn complete_fields(&self) -> [u32; COMPLETE_FIELDS] {
        let mut out = [0; COMPLETE_FIELDS];
        out[..KEY_FIELDS].copy_from_slice(&self.key_fields());
        out[KEY_FIELDS..].copy_from_slice(&self.context);
        out
    }

    /// `day<TAB>domain<TAB>label<TAB>name=value,...` in [`FIELD_NAMES`] order.
    pub fn to_line(&self) -> String {
        let mut s = format!("{}\t{}\t{}\t", self.day, self.domain.as_str(), self.label);
        for (i, (name, v)) in FIELD_NAMES.iter().zip(self.complete_fields()).enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{name}={v}");
        }
        s
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let bad = |what: &str| Error::Data(format!("malformed impression line ({what}): {line}"));
        let mut parts = line.split('\t');
        let day = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("day"))?;
        let domain = parts.next().and_then(Domain::parse).ok_or_else(|| bad("domain"))?;
        let label: u8 = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("label"))?;
        if label > 1 {
            return Err(bad("label"));
        }
        let fields = parts.next().ok_or_else(|| bad("fields"))?;
        if parts.next().is_some() {
            return Err(bad("extra columns"));
        }
        let mut values = [0u32; COMPLETE_FIELDS];
        let mut n = 0;
        for (i, kv) in fields.split(',').enumerate() {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad("field"))?;
            if i >= COMPLETE_FIELDS || k != FIELD_NAMES[i] {
                return Err(bad("field order"));
            }
            values[i] = v.parse().map_err(|_| bad("field value"))?;
            n += 1;
        }
        if n != COMPLETE_FIELDS {
            return Err(bad("field count"));
        }
        let mut context = [0; CONTEXT_FIELDS];
        context.copy_from_slice(&values[KEY_FIELDS..]);
        Ok(Self {
            user_id: values[0],
            item_id: values[1],
            category_id: values[2],
            user_profile_bucket: values[3],
            item_profile_bucket: values[4],
            context,
            domain,
            day,
            label,
        })
    }
}

/// The hidden generative state behind every impression.
#[derive(Debug, Clone)]
pub struct LatentWorld {
    pub config: WorldConfig,
    pub seed: u64,
    /// `users × k`, factors at day 0.
    pub user_factors: Vec<f64>,
    /// `items × k`
    pub item_factors: Vec<f64>,
    /// Per user: `drift_planes` disjoint dim pairs and a rotation direction.
    user_planes: Vec<(u16, u16)>,
    user_spin: Vec<f64>,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    /// Indexed by item id; zero outside the ad subset.
    pub ad_quality: Vec<f64>,
    pub ad_item_subset: Vec<u32>,
    /// Ad-only logit offset per hour bucket.
    pub ad_hour_effect: Vec<f64>,
    /// Calibrated or configured bias per domain (`[natural, ad]`).
    pub domain_bias: [f64; 2],
    user_activity: Vec<f64>,
    item_popularity: Vec<f64>,
    user_static: Vec<[u32; 3]>,
    item_static: Vec<[u32; 3]>,
}

pub(crate) fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    // splitmix-style mixing keeps streams for different (tag, index) apart
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

const TAG_WORLD: u64 = 1;
const TAG_CALIBRATE: u64 = 2;
const TAG_NATURAL: u64 = 3;
const TAG_AD: u64 = 4;

fn quantile_buckets(values: &[f64], buckets: usize) -> Vec<u32> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut out = vec![0u32; values.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = (rank * buckets / values.len()) as u32;
    }
    out
}

/// Index of the largest-magnitude coordinate, doubled, plus its sign bit.
fn dominant_axis(v: &[f64]) -> u32 {
    let (idx, val) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
        .map(|(i, &x)| (i, x))
        .unwrap_or((0, 0.0));
    (2 * idx + usize::from(val > 0.0)) as u32
}

fn sign_code(v: &[f64]) -> u32 {
    v.iter()
        .take(4)
        .enumerate()
        .fold(0, |acc, (j, &x)| acc | (u32::from(x > 0.0) << j))
}

/// Builds the latent world; deterministic in `(config, seed)`.
pub fn gen_world(config: &WorldConfig, seed: u64) -> Result<LatentWorld> {
    config.validate()?;
    let mut rng = stream(seed, TAG_WORLD, 0);
    let k = config.latent_dim;
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let user_factors: Vec<f64> = (0..config.users * k).map(|_| normal(&mut rng)).collect();
    let item_factors: Vec<f64> = (0..config.items * k).map(|_| normal(&mut rng)).collect();

    let mut user_planes = Vec::with_capacity(config.users * config.drift_planes);
    let mut user_spin = Vec::with_capacity(config.users);
    let mut dims: Vec<u16> = (0..k as u16).collect();
    for _ in 0..config.users {
        // partial Fisher-Yates gives disjoint pairs
        for i in 0..2 * config.drift_planes {
            let j = rng.random_range(i..k);
            dims.swap(i, j);
        }
        for p in 0..config.drift_planes {
            user_planes.push((dims[2 * p], dims[2 * p + 1]));
        }
        user_spin.push(if rng.random_bool(0.5) { 1.0 } else { -1.0 });
    }

    let gauss = |std: f64, n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let d = Normal::new(0.0, std.max(0.0)).expect("finite std");
        (0..n).map(|_| d.sample(rng)).collect()
    };
    let user_bias = gauss(config.user_bias_std, config.users, &mut rng);
    let item_bias = gauss(config.item_bias_std, config.items, &mut rng);
    let user_activity: Vec<f64> = gauss(config.activity_sigma, config.users, &mut rng)
        .into_iter()
        .map(f64::exp)
        .collect();
    let item_popularity: Vec<f64> = gauss(config.popularity_sigma, config.items, &mut rng)
        .into_iter()
        .map(f64::exp)
        .collect();

    let mut ids: Vec<u32> = (0..config.items as u32).collect();
    for i in 0..config.ad_items {
        let j = rng.random_range(i..config.items);
        ids.swap(i, j);
    }
    let mut ad_item_subset = ids[..config.ad_items].to_vec();
    ad_item_subset.sort_unstable();
    let mut ad_quality = vec![0.0; config.items];
    let quality = gauss(config.ad_quality_std, config.ad_items, &mut rng);
    for (&id, q) in ad_item_subset.iter().zip(quality) {
        ad_quality[id as usize] = q;
    }

    let ad_hour_effect = gauss(config.ad_hour_std, HOUR_VOCAB, &mut rng);

    let activity_bucket = quantile_buckets(&user_activity, ACTIVITY_VOCAB);
    let popularity_bucket = quantile_buckets(&item_popularity, PROFILE_BUCKETS);
    let noisy_bias: Vec<f64> = item_bias
        .iter()
        .map(|b| b + 0.5 * config.item_bias_std * normal(&mut rng))
        .collect();
    let price_bucket = quantile_buckets(&noisy_bias, PRICE_VOCAB);
    let user_static: Vec<[u32; 3]> = (0..config.users)
        .map(|u| {
            [
                dominant_axis(&user_factors[u * k..(u + 1) * k]),
                rng.random_range(0..CITY_VOCAB as u32),
                activity_bucket[u],
            ]
        })
        .collect();
    let item_static: Vec<[u32; 3]> = (0..config.items)
        .map(|i| {
            [
                dominant_axis(&item_factors[i * k..(i + 1) * k]),
                popularity_bucket[i],
                price_bucket[i],
            ]
        })
        .collect();

    let mut world = LatentWorld {
        config: config.clone(),
        seed,
        user_factors,
        item_factors,
        user_planes,
        user_spin,
        user_bias,
        item_bias,
        ad_quality,
        ad_item_subset,
        ad_hour_effect,
        domain_bias: [0.0; 2],
        user_activity,
        item_popularity,
        user_static,
        item_static,
    };
    world.domain_bias = [
        match config.natural_bias {
            Some(b) => b,
            None => world.calibrate_bias(Domain::Natural, config.natural_ctr)?,
        },
        match config.ad_bias {
            Some(b) => b,
            None => world.calibrate_bias(Domain::Ad, config.ad_ctr)?,
        },
    ];
    Ok(world)
}

struct Samplers {
    users: WeightedAliasIndex<f64>,
    items: WeightedAliasIndex<f64>,
}

impl LatentWorld {
    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// User factors rotated to a (possibly fractional) month.
    pub fn user_factors_at_month(&self, user: u32, month: f64) -> Vec<f64> {
        let k = self.config.latent_dim;
        let u = user as usize;
        let mut f = self.user_factors[u * k..(u + 1) * k].to_vec();
        let theta = self.config.drift_rate * month * self.user_spin[u];
        if theta != 0.0 {
            let (s, c) = theta.sin_cos();
            let planes = self.config.drift_planes;
            for &(a, b) in &self.user_planes[u * planes..(u + 1) * planes] {
                let (xa, xb) = (f[a as usize], f[b as usize]);
                f[a as usize] = c * xa - s * xb;
                f[b as usize] = s * xa + c * xb;
            }
        }
        f
    }

    pub fn user_factors_at_day(&self, user: u32, day: u32) -> Vec<f64> {
        self.user_factors_at_month(user, day as f64 / DAYS_PER_MONTH as f64)
    }

    pub fn item_factor(&self, item: u32) -> &[f64] {
        let k = self.config.latent_dim;
        &self.item_factors[item as usize * k..(item as usize + 1) * k]
    }

    /// Logit of a click without the domain bias.
    fn base_logit(&self, domain: Domain, uf: &[f64], user: u32, item: u32, hour: u32) -> f64 {
        let k = self.config.latent_dim as f64;
        let inter: f64 = uf.iter().zip(self.item_factor(item)).map(|(a, b)| a * b).sum();
        let mut z = self.config.interaction_scale * inter / k.sqrt()
            + self.item_bias[item as usize]
            + self.user_bias[user as usize];
        if domain == Domain::Ad {
            z += self.ad_quality[item as usize] + self.ad_hour_effect[hour as usize];
        }
        z
    }

    /// Click probability of `user` on `item` at `day` and `hour` in `domain`.
    pub fn click_probability(&self, domain: Domain, user: u32, item: u32, day: u32, hour: u32) -> f64 {
        let uf = self.user_factors_at_day(user, day);
        sigmoid(self.base_logit(domain, &uf, user, item, hour) + self.domain_bias[domain.index()])
    }

    fn samplers(&self, domain: Domain) -> Samplers {
        let users = WeightedAliasIndex::new(self.user_activity.clone()).expect("positive weights");
        let items = match domain {
            Domain::Natural => WeightedAliasIndex::new(self.item_popularity.clone()),
            Domain::Ad => WeightedAliasIndex::new(
                self.ad_item_subset
                    .iter()
                    .map(|&i| self.item_popularity[i as usize])
                    .collect(),
            ),
        }
        .expect("positive weights");
        Samplers { users, items }
    }

    fn draw_item(&self, domain: Domain, s: &Samplers, rng: &mut ChaCha8Rng) -> u32 {
        let idx = s.items.sample(rng);
        match domain {
            Domain::Natural => idx as u32,
            Domain::Ad => self.ad_item_subset[idx],
        }
    }

    /// Bisection on the domain bias so the expected click rate over the
    /// impression distribution at day 0 hits `target`.
    fn calibrate_bias(&self, domain: Domain, target: f64) -> Result<f64> {
        let s = self.samplers(domain);
        let mut rng = stream(self.seed, TAG_CALIBRATE, domain.index() as u64);
        let logits: Vec<f64> = (0..20_000)
            .map(|_| {
                let user = s.users.sample(&mut rng) as u32;
                let item = self.draw_item(domain, &s, &mut rng);
                let hour = rng.random_range(0..HOUR_VOCAB as u32);
                let uf = self.user_factors_at_day(user, 0);
                self.base_logit(domain, &uf, user, item, hour)
            })
            .collect();
        let rate = |b: f64| logits.iter().map(|z| sigmoid(z + b)).sum::<f64>() / logits.len() as f64;
        let (mut lo, mut hi) = (-30.0, 30.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if rate(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let b = 0.5 * (lo + hi);
        if !b.is_finite() {
            return Err(Error::numeric("bias calibration", "non-finite bias"));
        }
        Ok(b)
    }

    /// Number of impressions `domain` produces on `day` given a monthly volume.
    pub fn daily_volume(monthly: usize, day: u32) -> usize {
        let m = DAYS_PER_MONTH as usize;
        let j = day as usize % m;
        (j + 1) * monthly / m - j * monthly / m
    }

    fn gen_day(&self, domain: Domain, s: &Samplers, day: u32, volume: usize) -> Vec<ImpressionSample> {
        let n = Self::daily_volume(volume, day);
        let tag = match domain {
            Domain::Natural => TAG_NATURAL,
            Domain::Ad => TAG_AD,
        };
        let mut rng = stream(self.seed, tag, day as u64);
        let half = self.config.latent_dim.div_ceil(2);
        let bias = self.domain_bias[domain.index()];
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let user = s.users.sample(&mut rng) as u32;
            let item = self.draw_item(domain, s, &mut rng);
            let uf = self.user_factors_at_day(user, day);
            let vf = self.item_factor(item);
            let hour = rng.random_range(0..HOUR_VOCAB as u32);
            let p = sigmoid(self.base_logit(domain, &uf, user, item, hour) + bias);
            let label = u8::from(rng.random::<f64>() < p);
            let us = self.user_static[user as usize];
            let is = self.item_static[item as usize];
            out.push(ImpressionSample {
                user_id: user,
                item_id: item,
                category_id: is[0],
                user_profile_bucket: us[0],
                item_profile_bucket: is[1],
                context: [
                    sign_code(&uf[..half]),
                    sign_code(&uf[half..]),
                    sign_code(&vf[..half]),
                    sign_code(&vf[half..]),
                    day % DAYS_PER_WEEK,
                    hour,
                    rng.random_range(0..DEVICE_VOCAB as u32),
                    us[1],
                    is[2],
                    us[2],
                ],
                domain,
                day,
                label,
            });
        }
        out
    }

    /// Impressions for every day in `days`, in day order. `volume` is per month.
    pub fn gen_impressions(
        &self,
        domain: Domain,
        days: Range<u32>,
        volume: usize,
    ) -> Result<Vec<ImpressionSample>> {
        if days.is_empty() || volume == 0 {
            return Ok(Vec::new());
        }
        if days.end > self.config.horizon_days() {
            return Err(Error::config(format!(
                "day range {days:?} exceeds world horizon of {} days",
                self.config.horizon_days()
            )));
        }
        let s = self.samplers(domain);
        let mut out = Vec::new();
        for day in days {
            out.extend(self.gen_day(domain, &s, day, volume));
        }
        Ok(out)
    }
}

/// All impressions of one world, bucketed by domain and day.
#[derive(Debug, Clone, Default)]
pub struct ImpressionLog {
    natural: Vec<Vec<ImpressionSample>>,
    ad: Vec<Vec<ImpressionSample>>,
}

impl ImpressionLog {
    pub fn generate(world: &LatentWorld) -> Result<Self> {
        let days = world.config.horizon_days();
        let mut log = Self::with_days(days);
        for domain in [Domain::Natural, Domain::Ad] {
            let volume = match domain {
                Domain::Natural => world.config.natural_per_month,
                Domain::Ad => world.config.ad_per_month,
            };
            let s = world.samplers(domain);
            for day in 0..days {
                let v = if volume == 0 {
                    Vec::new()
                } else {
                    world.gen_day(domain, &s, day, volume)
                };
                log.bucket_mut(domain)[day as usize] = v;
            }
        }
        Ok(log)
    }

    pub fn with_days(days: u32) -> Self {
        Self {
            natural: vec![Vec::new(); days as usize],
            ad: vec![Vec::new(); days as usize],
        }
    }

    pub fn push(&mut self, s: ImpressionSample) -> Result<()> {
        let days = self.horizon_days();
        let bucket = self.bucket_mut(s.domain);
        let slot = bucket.get_mut(s.day as usize).ok_or_else(|| {
            Error::Data(format!("sample day {} outside horizon of {days} days", s.day))
        })?;
        slot.push(s);
        Ok(())
    }

    fn bucket_mut(&mut self, domain: Domain) -> &mut Vec<Vec<ImpressionSample>> {
        match domain {
            Domain::Natural => &mut self.natural,
            Domain::Ad => &mut self.ad,
        }
    }

    fn bucket(&self, domain: Domain) -> &[Vec<ImpressionSample>] {
        match domain {
            Domain::Natural => &self.natural,
            Domain::Ad => &self.ad,
        }
    }

    pub fn horizon_days(&self) -> u32 {
        self.natural.len() as u32
    }

    pub fn day(&self, domain: Domain, day: u32) -> &[ImpressionSample] {
        self.bucket(domain)
            .get(day as usize)
            .map_or(&[][..], Vec::as_slice)
    }

    /// Samples of `days` (clipped to the horizon) in day order.
    pub fn window(&self, domain: Domain, days: Range<u32>) -> impl Iterator<Item = &ImpressionSample> {
        let b = self.bucket(domain);
        let end = (days.end as usize).min(b.len());
        let start = (days.start as usize).min(end);
        b[start..end].iter().flatten()
    }

    pub fn count(&self, domain: Domain, days: Range<u32>) -> usize {
        let b = self.bucket(domain);
        let end = (days.end as usize).min(b.len());
        let start = (days.start as usize).min(end);
        b[start..end].iter().map(Vec::len).sum()
    }

    /// Writes one `<domain>_mNN.tsv` file per domain and month, each
    /// starting with [`LOG_HEADER`].
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let months = self.horizon_days().div_ceil(DAYS_PER_MONTH);
        let mut written = Vec::new();
        for domain in [Domain::Natural, Domain::Ad] {
            for m in 0..months {
                let path = dir.join(log_file_name(domain, m));
                let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                let mut w = BufWriter::new(file);
                let io = |e| Error::io(&path, e);
                writeln!(w, "{LOG_HEADER}").map_err(io)?;
                for s in self.window(domain, m * DAYS_PER_MONTH..(m + 1) * DAYS_PER_MONTH) {
                    writeln!(w, "{}", s.to_line()).map_err(io)?;
                }
                w.flush().map_err(io)?;
                written.push(path);
            }
        }
        Ok(written)
    }

    /// Reads the files written by [`Self::write_dir`] for a horizon of `days`.
    pub fn read_dir(dir: &Path, days: u32) -> Result<Self> {
        let mut log = Self::with_days(days);
        for domain in [Domain::Natural, Domain::Ad] {
            for m in 0..days.div_ceil(DAYS_PER_MONTH) {
                let path = dir.join(log_file_name(domain, m));
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                for line in text.lines().filter(|l| !l.is_empty() && !l.starts_with('#')) {
                    let s = ImpressionSample::parse_line(line)?;
                    if s.domain != domain || month(s.day) != m {
                        return Err(Error::Data(format!("{} holds a sample from day {}", path.display(), s.day)));
                    }
                    log.push(s)?;
                }
            }
        }
        Ok(log)
    }
}

pub const LOG_HEADER: &str = "#day\tdomain\tlabel\tfields";

pub fn log_file_name(domain: Domain, month: u32) -> String {
    format!("{}_m{month:02}.tsv", domain.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            users: 300,
            items: 200,
            ad_items: 20,
            natural_per_month: 3000,
            ad_per_month: 300,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn same_seed_same_world() {
        let a = gen_world(&small(), 7).unwrap();
        let b = gen_world(&small(), 7).unwrap();
        assert_eq!(a.user_factors, b.user_factors);
        assert_eq!(a.ad_item_subset, b.ad_item_subset);
        assert_eq!(a.domain_bias, b.domain_bias);
        let c = gen_world(&small(), 8).unwrap();
        assert_ne!(a.user_factors, c.user_factors);
    }

    #[test]
    fn zero_drift_keeps_factors() {
        let w = gen_world(&WorldConfig { drift_rate: 0.0, ..small() }, 1).unwrap();
        for u in 0..10 {
            assert_eq!(w.user_factors_at_month(u, 1.0), w.user_factors_at_month(u, 7.0));
        }
    }

    #[test]
    fn oversized_ad_subset_is_rejected() {
        let cfg = WorldConfig { ad_items: 201, ..small() };
        assert!(matches!(gen_world(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn zero_volume_and_empty_range_are_empty() {
        let w = gen_world(&small(), 1).unwrap();
        assert!(w.gen_impressions(Domain::Natural, 0..30, 0).unwrap().is_empty());
        assert!(w.gen_impressions(Domain::Natural, 5..5, 100).unwrap().is_empty());
    }

    #[test]
    fn saturated_negative_bias_gives_no_clicks() {
        let w = gen_world(&WorldConfig { ad_bias: Some(-20.0), ..small() }, 3).unwrap();
        let s = w.gen_impressions(Domain::Ad, 0..30, 3000).unwrap();
        assert_eq!(s.len(), 3000);
        assert!(s.iter().all(|x| x.label == 0));
    }

    #[test]
    fn ad_samples_use_ad_items_only() {
        let w = gen_world(&small(), 4).unwrap();
        let s = w.gen_impressions(Domain::Ad, 0..30, 300).unwrap();
        assert!(s.iter().all(|x| w.ad_item_subset.binary_search(&x.item_id).is_ok()));
    }

    #[test]
    fn monthly_volume_is_exact() {
        let total: usize = (0..30).map(|d| LatentWorld::daily_volume(20_001, d)).sum();
        assert_eq!(total, 20_001);
    }

    #[test]
    fn line_round_trip() {
        let w = gen_world(&small(), 5).unwrap();
        for s in w.gen_impressions(Domain::Natural, 3..4, 3000).unwrap() {
            assert_eq!(ImpressionSample::parse_line(&s.to_line()).unwrap(), s);
        }
        assert!(ImpressionSample::parse_line("1\tad\t2\tuser_id=1").is_err());
    }
}
