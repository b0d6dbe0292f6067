//! Month-tagged user/item embedding snapshots, rolling retention, history
//! lookup and the offline attention merge used for serving.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nncore::{mean_pool, self_attention, AttentionParams, DenseMatrix, HISTORY_SLOTS};

pub const MAGIC: &[u8; 4] = b"ECDT";
pub const SNAPSHOT_VERSION: u16 = 1;
/// magic + version + side + month_tag + dim + count
pub const HEADER_LEN: u64 = 4 + 2 + 1 + 4 + 2 + 8;
pub const DEFAULT_RETENTION: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "user" => Some(Side::User),
            "item" => Some(Side::Item),
            _ => None,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Side::User => 0,
            Side::Item => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Side::User),
            1 => Some(Side::Item),
            _ => None,
        }
    }
}

/// One month's embedding table for one side.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSnapshot {
    pub side: Side,
    pub month_tag: u32,
    pub dim: usize,
    pub entries: BTreeMap<u64, Vec<f32>>,
}

impl EmbeddingSnapshot {
    pub fn new(side: Side, month_tag: u32, dim: usize) -> Self {
        Self {
            side,
            month_tag,
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: u64, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::config(format!(
                "vector for id {id} has length {}, snapshot dim is {}",
                v.len(),
                self.dim
            )));
        }
        self.entries.insert(id, v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn file_size(&self) -> u64 {
        HEADER_LEN + self.entries.len() as u64 * (8 + 4 * self.dim as u64)
    }
}

/// Writes a snapshot in the little-endian `ECDT` layout, records sorted by id.
pub fn save_snapshot(s: &EmbeddingSnapshot, path: &Path) -> Result<()> {
    let dim = u16::try_from(s.dim).map_err(|_| Error::config("dimension exceeds u16"))?;
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&SNAPSHOT_VERSION.to_le_bytes())?;
    write(&[s.side.code()])?;
    write(&s.month_tag.to_le_bytes())?;
    write(&dim.to_le_bytes())?;
    write(&(s.entries.len() as u64).to_le_bytes())?;
    for (id, v) in &s.entries {
        write(&id.to_le_bytes())?;
        for x in v {
            write(&x.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) struct ByteReader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.pos as u64, "trailing bytes after last record"));
        }
        Ok(())
    }
}

/// Reads the magic and version; returns the kind byte that follows.
pub(crate) fn read_preamble(r: &mut ByteReader<'_>, expect_version: u16) -> Result<u8> {
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}")));
    }
    let version = r.u16("version")?;
    if version != expect_version {
        return Err(Error::format(
            4,
            format!("unsupported format version {version}, expected {expect_version}"),
        ));
    }
    r.u8("kind")
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<EmbeddingSnapshot> {
    let mut r = ByteReader::new(bytes);
    let kind = read_preamble(&mut r, SNAPSHOT_VERSION)?;
    let side = Side::from_code(kind)
        .ok_or_else(|| Error::format(6, format!("unknown side code {kind}")))?;
    let month_tag = r.u32("month tag")?;
    let dim = r.u16("dim")? as usize;
    let count = r.u64("entry count")?;
    let record = 8 + 4 * dim as u64;
    let remaining = (bytes.len() as u64).saturating_sub(HEADER_LEN);
    if count.checked_mul(record).is_none_or(|need| need > remaining) {
        return Err(Error::format(
            r.offset(),
            format!("truncated: header declares {count} entries"),
        ));
    }
    let mut snap = EmbeddingSnapshot::new(side, month_tag, dim);
    let mut last: Option<u64> = None;
    for _ in 0..count {
        let at = r.offset();
        let id = r.u64("id")?;
        if let Some(prev) = last {
            if id == prev {
                return Err(Error::format(at, format!("duplicate id {id}")));
            }
            if id < prev {
                return Err(Error::format(at, format!("id {id} out of sorted order")));
            }
        }
        last = Some(id);
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push(r.f32("vector")?);
        }
        snap.entries.insert(id, v);
    }
    r.expect_end()?;
    Ok(snap)
}

pub fn load_snapshot(path: &Path) -> Result<EmbeddingSnapshot> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes)
}

/// Per-side rolling list of snapshots with strictly increasing month tags.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotStore {
    retention_k: usize,
    user: VecDeque<EmbeddingSnapshot>,
    item: VecDeque<EmbeddingSnapshot>,
}

impl Default for SnapshotStore {
    fn default() -> Self {
        Self::new(DEFAULT_RETENTION)
    }
}

impl SnapshotStore {
    pub fn new(retention_k: usize) -> Self {
        Self {
            retention_k: retention_k.max(1),
            user: VecDeque::new(),
            item: VecDeque::new(),
        }
    }

    pub fn retention(&self) -> usize {
        self.retention_k
    }

    fn side(&self, side: Side) -> &VecDeque<EmbeddingSnapshot> {
        match side {
            Side::User => &self.user,
            Side::Item => &self.item,
        }
    }

    fn side_mut(&mut self, side: Side) -> &mut VecDeque<EmbeddingSnapshot> {
        match side {
            Side::User => &mut self.user,
            Side::Item => &mut self.item,
        }
    }

    /// Appends a snapshot and returns whatever retention evicted.
    pub fn put_snapshot(&mut self, snapshot: EmbeddingSnapshot) -> Result<Vec<EmbeddingSnapshot>> {
        let side = snapshot.side;
        let k = self.retention_k;
        let list = self.side_mut(side);
        if let Some(latest) = list.back() {
            if snapshot.month_tag <= latest.month_tag {
                return Err(Error::Ordering {
                    side: side.as_str(),
                    got: snapshot.month_tag,
                    latest: latest.month_tag,
                });
            }
            if snapshot.dim != latest.dim {
                return Err(Error::config(format!(
                    "snapshot dim {} differs from stored dim {}",
                    snapshot.dim, latest.dim
                )));
            }
        }
        list.push_back(snapshot);
        let mut evicted = Vec::new();
        while list.len() > k {
            evicted.extend(list.pop_front());
        }
        Ok(evicted)
    }

    pub fn snapshots(&self, side: Side) -> impl Iterator<Item = &EmbeddingSnapshot> {
        self.side(side).iter()
    }

    pub fn month_tags(&self, side: Side) -> Vec<u32> {
        self.side(side).iter().map(|s| s.month_tag).collect()
    }

    pub fn len(&self, side: Side) -> usize {
        self.side(side).len()
    }

    pub fn is_warm(&self) -> bool {
        self.user.len() >= HISTORY_SLOTS && self.item.len() >= HISTORY_SLOTS
    }

    pub fn dim(&self, side: Side) -> Option<usize> {
        self.side(side).back().map(|s| s.dim)
    }

    /// Newest-first view of the last three snapshots of `side`.
    pub fn latest_three(&self, side: Side) -> Result<[&EmbeddingSnapshot; HISTORY_SLOTS]> {
        let list = self.side(side);
        if list.len() < HISTORY_SLOTS {
            return Err(Error::InsufficientHistory {
                side: side.as_str(),
                have: list.len(),
                need: HISTORY_SLOTS,
            });
        }
        let n = list.len();
        Ok([&list[n - 1], &list[n - 2], &list[n - 3]])
    }

    /// `[emb_1; emb_2; emb_3]` for `id`, newest month first; absent ids are zero rows.
    pub fn lookup_history(&self, side: Side, id: u64) -> Result<DenseMatrix> {
        self.lookup_history_months(side, id, HISTORY_SLOTS)
    }

    /// Like [`Self::lookup_history`] but only the newest `months` slots are
    /// filled; the rest are zero.
    pub fn lookup_history_months(&self, side: Side, id: u64, months: usize) -> Result<DenseMatrix> {
        let snaps = self.latest_three(side)?;
        let dim = snaps[0].dim;
        let mut out = DenseMatrix::zeros(HISTORY_SLOTS, dim);
        for (slot, snap) in snaps.iter().enumerate().take(months.min(HISTORY_SLOTS)) {
            if let Some(v) = snap.entries.get(&id) {
                for (o, &x) in out.row_mut(slot).iter_mut().zip(v) {
                    *o = x as f64;
                }
            }
        }
        Ok(out)
    }

    /// Collapses the last three months into one table with fixed attention.
    pub fn merge_tables(&self, side: Side, attention: &AttentionParams) -> Result<MergedTable> {
        let snaps = self.latest_three(side)?;
        let dim = snaps[0].dim;
        if attention.dim() != dim {
            return Err(Error::config(format!(
                "attention dim {} does not match embedding dim {dim}",
                attention.dim()
            )));
        }
        let ids: BTreeSet<u64> = snaps.iter().flat_map(|s| s.entries.keys().copied()).collect();
        let mut entries = BTreeMap::new();
        for id in ids {
            let e = self.lookup_history(side, id)?;
            let pooled = mean_pool(&self_attention(&e, attention)?)?;
            entries.insert(id, pooled);
        }
        Ok(MergedTable {
            side,
            dim,
            entries,
            provenance: Provenance {
                month_tags: snaps.iter().map(|s| s.month_tag).collect(),
                attention_fingerprint: attention.fingerprint(),
            },
        })
    }

    /// Writes every live snapshot as `<side>_m<tag>.snap` under `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for side in [Side::User, Side::Item] {
            for s in self.snapshots(side) {
                let p = dir.join(snapshot_file_name(side, s.month_tag));
                save_snapshot(s, &p)?;
                written.push(p);
            }
        }
        Ok(written)
    }

    pub fn load_dir(dir: &Path, retention_k: usize) -> Result<Self> {
        let mut found = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let p = entry.map_err(|e| Error::io(dir, e))?.path();
            if p.extension().is_some_and(|e| e == "snap") {
                found.push(load_snapshot(&p)?);
            }
        }
        found.sort_by_key(|s| (s.side, s.month_tag));
        let mut store = Self::new(retention_k);
        for s in found {
            store.put_snapshot(s)?;
        }
        Ok(store)
    }
}

pub fn snapshot_file_name(side: Side, month_tag: u32) -> String {
    format!("{}_m{month_tag:04}.snap", side.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    /// Newest first.
    pub month_tags: Vec<u32>,
    pub attention_fingerprint: u64,
}

/// Serving-time table: one pooled vector per id.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedTable {
    pub side: Side,
    pub dim: usize,
    pub entries: BTreeMap<u64, Vec<f64>>,
    pub provenance: Provenance,
}

impl MergedTable {
    pub fn get(&self, id: u64) -> Option<&[f64]> {
        self.entries.get(&id).map(Vec::as_slice)
    }

    /// Snapshot-format file plus a `<path>.provenance` text sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let snap = self.to_snapshot();
        save_snapshot(&snap, path)?;
        let tags: Vec<String> = self.provenance.month_tags.iter().map(u32::to_string).collect();
        let sidecar = format!(
            "side={}\nmonth_tags={}\nattention_fingerprint={:016x}\n",
            self.side.as_str(),
            tags.join(","),
            self.provenance.attention_fingerprint
        );
        let sp = sidecar_path(path);
        fs::write(&sp, sidecar).map_err(|e| Error::io(sp, e))
    }

    pub fn to_snapshot(&self) -> EmbeddingSnapshot {
        EmbeddingSnapshot {
            side: self.side,
            month_tag: self.provenance.month_tags.first().copied().unwrap_or(0),
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .map(|(&id, v)| (id, v.iter().map(|&x| x as f32).collect()))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let snap = load_snapshot(path)?;
        let sp = sidecar_path(path);
        let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let mut month_tags = None;
        let mut fingerprint = None;
        for line in text.lines() {
            match line.split_once('=') {
                Some(("month_tags", v)) => {
                    month_tags = v
                        .split(',')
                        .map(|t| t.parse().ok())
                        .collect::<Option<Vec<u32>>>();
                }
                Some(("attention_fingerprint", v)) => {
                    fingerprint = u64::from_str_radix(v, 16).ok();
                }
                _ => {}
            }
        }
        let (Some(month_tags), Some(attention_fingerprint)) = (month_tags, fingerprint) else {
            return Err(Error::Data(format!("incomplete provenance in {}", sp.display())));
        };
        Ok(Self {
            side: snap.side,
            dim: snap.dim,
            entries: snap
                .entries
                .into_iter()
                .map(|(id, v)| (id, v.into_iter().map(f64::from).collect()))
                .collect(),
            provenance: Provenance {
                month_tags,
                attention_fingerprint,
            },
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".provenance");
    PathBuf::from(s)
}
