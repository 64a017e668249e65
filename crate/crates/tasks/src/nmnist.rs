//! N-MNIST event files: 40-bit address-event records decoded into input
//! spike trains.
//!
//! Each event is five bytes, big-endian: `x`, `y`, then one bit of polarity
//! followed by a 23-bit timestamp in microseconds. Only ON events (polarity
//! 1) produce spikes. The dataset root holds `Train/<digit>/*.bin` and
//! `Test/<digit>/*.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use eprop_core::engine::training::TaskStream;
use eprop_core::{SampleSpec, TargetSignal};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{config, Result, TaskError};

pub const GRID: usize = 34;
pub const EVENT_BYTES: usize = 5;
const MAX_TIMESTAMP: u32 = (1 << 23) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NmnistEvent {
    pub x: u8,
    pub y: u8,
    /// `true` for ON events.
    pub polarity: bool,
    pub timestamp_us: u32,
}

impl NmnistEvent {
    pub fn pixel(&self) -> usize {
        self.y as usize * GRID + self.x as usize
    }
}

pub fn decode_event(b: [u8; EVENT_BYTES]) -> NmnistEvent {
    NmnistEvent {
        x: b[0],
        y: b[1],
        polarity: b[2] & 0x80 != 0,
        timestamp_us: ((b[2] & 0x7f) as u32) << 16 | (b[3] as u32) << 8 | b[4] as u32,
    }
}

pub fn encode_event(e: &NmnistEvent) -> Result<[u8; EVENT_BYTES]> {
    if e.x as usize >= GRID || e.y as usize >= GRID {
        return Err(config(format!("pixel ({}, {}) outside the {GRID}x{GRID} grid", e.x, e.y)));
    }
    if e.timestamp_us > MAX_TIMESTAMP {
        return Err(config(format!("timestamp {} exceeds 23 bits", e.timestamp_us)));
    }
    let t = e.timestamp_us;
    Ok([
        e.x,
        e.y,
        (u8::from(e.polarity) << 7) | (t >> 16) as u8,
        (t >> 8) as u8,
        t as u8,
    ])
}

pub fn encode_events(events: &[NmnistEvent]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(events.len() * EVENT_BYTES);
    for e in events {
        out.extend_from_slice(&encode_event(e)?);
    }
    Ok(out)
}

fn format_error(offset: usize, reason: impl Into<String>) -> TaskError {
    TaskError::Format {
        offset: offset as u64,
        reason: reason.into(),
    }
}

/// Decode a whole file, validating coordinates and timestamp order.
pub fn decode_events(bytes: &[u8]) -> Result<Vec<NmnistEvent>> {
    let whole = bytes.len() - bytes.len() % EVENT_BYTES;
    if whole != bytes.len() {
        return Err(format_error(
            whole,
            format!("truncated event ({} of {EVENT_BYTES} bytes)", bytes.len() - whole),
        ));
    }
    let mut out = Vec::with_capacity(bytes.len() / EVENT_BYTES);
    let mut last = 0u32;
    for (i, chunk) in bytes.chunks_exact(EVENT_BYTES).enumerate() {
        let off = i * EVENT_BYTES;
        let e = decode_event(chunk.try_into().expect("chunks are exact"));
        if e.x as usize >= GRID {
            return Err(format_error(off, format!("x = {} outside the grid", e.x)));
        }
        if e.y as usize >= GRID {
            return Err(format_error(off + 1, format!("y = {} outside the grid", e.y)));
        }
        if e.timestamp_us < last {
            return Err(format_error(
                off + 2,
                format!("timestamp {} before {}", e.timestamp_us, last),
            ));
        }
        last = e.timestamp_us;
        out.push(e);
    }
    Ok(out)
}

pub fn read_events(path: &Path) -> Result<Vec<NmnistEvent>> {
    let bytes = fs::read(path).map_err(|source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_events(&bytes).map_err(|e| match e {
        TaskError::Format { offset, reason } => TaskError::Format {
            offset,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmnistConfig {
    pub digits: Vec<u8>,
    /// Training samples in total, split evenly over the digits.
    pub max_train: usize,
    pub max_test: usize,
    /// Minimum ON-event count over the training split for a pixel to become
    /// an input channel; unset picks the largest floor that keeps
    /// `keep_fraction` of all ON events.
    pub pixel_floor: Option<u64>,
    pub keep_fraction: f64,
    pub dt: f64,
    /// Steps per sample; later events are dropped.
    pub duration: usize,
    /// Trailing steps in which the loss is evaluated.
    pub learning_window: usize,
}

impl Default for NmnistConfig {
    fn default() -> Self {
        NmnistConfig {
            digits: vec![0, 1],
            max_train: 500,
            max_test: 200,
            pixel_floor: None,
            keep_fraction: 0.9,
            dt: 1.0,
            duration: 300,
            learning_window: 100,
        }
    }
}

impl NmnistConfig {
    pub fn validate(&self) -> Result<()> {
        if self.digits.is_empty() || self.digits.iter().any(|&d| d > 9) {
            return Err(config("digits must be a non-empty subset of 0..=9"));
        }
        if self.duration == 0 || self.learning_window == 0 || self.learning_window > self.duration {
            return Err(config("learning window must lie within a positive duration"));
        }
        if !(self.dt > 0.0) || !(0.0..=1.0).contains(&self.keep_fraction) {
            return Err(config("dt must be positive and keep_fraction within [0, 1]"));
        }
        Ok(())
    }
}

/// Retained pixels and their input channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    pub channel: Vec<Option<u32>>,
    pub n_channels: usize,
    pub floor: u64,
}

impl PixelMap {
    /// Keep pixels with at least `floor` (and at least one) ON events.
    pub fn from_counts(counts: &[u64], floor: u64) -> Self {
        let mut next = 0u32;
        let channel = counts
            .iter()
            .map(|&c| {
                (c >= floor.max(1)).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        PixelMap {
            channel,
            n_channels: next as usize,
            floor: floor.max(1),
        }
    }

    /// Largest floor whose retained pixels still cover `keep` of all events.
    pub fn auto_floor(counts: &[u64], keep: f64) -> u64 {
        let total: u64 = counts.iter().sum();
        let mut sorted: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let mut acc = 0u64;
        for &c in &sorted {
            acc += c;
            if acc as f64 >= keep * total as f64 {
                return c.max(1);
            }
        }
        1
    }
}

pub fn on_counts<'a>(files: impl IntoIterator<Item = &'a [NmnistEvent]>) -> Vec<u64> {
    let mut counts = vec![0u64; GRID * GRID];
    for events in files {
        for e in events.iter().filter(|e| e.polarity) {
            counts[e.pixel()] += 1;
        }
    }
    counts
}

/// Bin the ON events of one recording onto the step grid.
pub fn events_to_sample(
    events: &[NmnistEvent],
    pixels: &PixelMap,
    cfg: &NmnistConfig,
    class: usize,
    n_classes: usize,
) -> Result<SampleSpec> {
    let mut trains = vec![Vec::new(); pixels.n_channels];
    for e in events.iter().filter(|e| e.polarity) {
        let Some(ch) = pixels.channel[e.pixel()] else {
            continue;
        };
        let step = (e.timestamp_us as f64 / (cfg.dt * 1000.0)).floor() as usize;
        if step < cfg.duration {
            trains[ch as usize].push(step as u32);
        }
    }
    for t in &mut trains {
        // events arrive in time order; several may share a step
        t.dedup();
    }
    let window = (0..cfg.duration).map(|t| t >= cfg.duration - cfg.learning_window).collect();
    Ok(SampleSpec {
        duration: cfg.duration,
        input_spikes: trains,
        target: TargetSignal::one_hot(class, n_classes, window)?,
        label: Some(class),
    })
}

/// Resolve the dataset root from an explicit path or `NMNIST_ROOT`.
pub fn dataset_root(explicit: Option<&Path>) -> Result<PathBuf> {
    let root = match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os("NMNIST_ROOT")
            .map(PathBuf::from)
            .ok_or_else(|| TaskError::MissingDataset(PathBuf::from("$NMNIST_ROOT (unset)")))?,
    };
    if !root.join("Train").is_dir() {
        return Err(TaskError::MissingDataset(root));
    }
    Ok(root)
}

fn split_files(root: &Path, split: &str, digit: u8, limit: usize) -> Result<Vec<PathBuf>> {
    let dir = root.join(split).join(digit.to_string());
    let rd = fs::read_dir(&dir).map_err(|source| TaskError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    files.truncate(limit);
    Ok(files)
}

#[derive(Debug, Clone)]
pub struct NmnistDataset {
    pub train: Vec<SampleSpec>,
    pub test: Vec<SampleSpec>,
    pub pixels: PixelMap,
}

impl NmnistDataset {
    pub fn n_in(&self) -> usize {
        self.pixels.n_channels
    }

    /// Load the configured subset. Classes are numbered by their position
    /// in `cfg.digits`; the pixel filter sees the training split only.
    pub fn load(root: &Path, cfg: &NmnistConfig) -> Result<Self> {
        cfg.validate()?;
        let per_train = cfg.max_train.div_ceil(cfg.digits.len());
        let per_test = cfg.max_test.div_ceil(cfg.digits.len());
        let mut train_raw = Vec::new();
        let mut test_raw = Vec::new();
        for (class, &digit) in cfg.digits.iter().enumerate() {
            for f in split_files(root, "Train", digit, per_train)? {
                train_raw.push((class, read_events(&f)?));
            }
            for f in split_files(root, "Test", digit, per_test)? {
                test_raw.push((class, read_events(&f)?));
            }
        }
        if train_raw.is_empty() {
            return Err(TaskError::MissingDataset(root.join("Train")));
        }
        let counts = on_counts(train_raw.iter().map(|(_, e)| e.as_slice()));
        let floor = cfg
            .pixel_floor
            .unwrap_or_else(|| PixelMap::auto_floor(&counts, cfg.keep_fraction));
        let pixels = PixelMap::from_counts(&counts, floor);
        let n = cfg.digits.len();
        let convert = |raw: &[(usize, Vec<NmnistEvent>)]| -> Result<Vec<SampleSpec>> {
            raw.iter().map(|(c, e)| events_to_sample(e, &pixels, cfg, *c, n)).collect()
        };
        Ok(NmnistDataset {
            train: convert(&train_raw)?,
            test: convert(&test_raw)?,
            pixels,
        })
    }
}

/// Shuffled passes over the training split; evaluation cycles through the
/// test split in order.
#[derive(Debug, Clone)]
pub struct NmnistStream {
    data: NmnistDataset,
    seed: u64,
    order: Vec<usize>,
    epoch: Option<usize>,
}

impl NmnistStream {
    pub fn new(data: NmnistDataset, seed: u64) -> Self {
        NmnistStream {
            data,
            seed,
            order: Vec::new(),
            epoch: None,
        }
    }

    pub fn dataset(&self) -> &NmnistDataset {
        &self.data
    }

    fn train_index(&mut self, k: usize) -> usize {
        let n = self.data.train.len();
        let epoch = k / n;
        if self.epoch != Some(epoch) {
            self.order = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 3, epoch as u64));
            self.order.shuffle(&mut rng);
            self.epoch = Some(epoch);
        }
        self.order[k % n]
    }
}

impl TaskStream for NmnistStream {
    fn train_batch(&mut self, iteration: usize, batch_size: usize) -> eprop_core::Result<Vec<SampleSpec>> {
        Ok((0..batch_size)
            .map(|i| {
                let idx = self.train_index(iteration * batch_size + i);
                self.data.train[idx].clone()
            })
            .collect())
    }

    fn test_batch(&mut self, iteration: usize, batch_size: usize) -> eprop_core::Result<Vec<SampleSpec>> {
        if self.data.test.is_empty() {
            return Err(eprop_core::EpropError::Empty("test split"));
        }
        let n = self.data.test.len();
        Ok((0..batch_size)
            .map(|i| self.data.test[(iteration * batch_size + i) % n].clone())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bit-level decode written independently of `decode_event`.
    fn oracle(b: [u8; 5]) -> (u8, u8, u8, u32) {
        let word = b.iter().fold(0u64, |acc, &x| (acc << 8) | x as u64);
        (
            (word >> 32) as u8,
            ((word >> 24) & 0xff) as u8,
            ((word >> 23) & 1) as u8,
            (word & 0x7f_ffff) as u32,
        )
    }

    #[test]
    fn golden_bytes() {
        let b = [0x03, 0x10, 0x80, 0x01, 0x23];
        assert_eq!(oracle(b), (3, 16, 1, 291));
        let e = decode_event(b);
        assert_eq!((e.x, e.y, e.polarity, e.timestamp_us), (3, 16, true, 291));
        assert_eq!(encode_event(&e).unwrap(), b);
    }

    #[test]
    fn truncated_file_names_offset() {
        let mut bytes = encode_events(&[NmnistEvent {
            x: 1,
            y: 2,
            polarity: true,
            timestamp_us: 5,
        }])
        .unwrap();
        bytes.extend_from_slice(&[1, 2]);
        match decode_events(&bytes) {
            Err(TaskError::Format { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_coordinates_and_order_name_offsets() {
        let bad_x = [0, 0, 0, 0, 1, 34, 0, 0, 0, 2];
        assert!(matches!(decode_events(&bad_x), Err(TaskError::Format { offset: 5, .. })));
        let bad_y = [0, 40, 0, 0, 1];
        assert!(matches!(decode_events(&bad_y), Err(TaskError::Format { offset: 1, .. })));
        let backwards = [0, 0, 0, 0, 9, 0, 0, 0, 0, 3];
        assert!(matches!(decode_events(&backwards), Err(TaskError::Format { offset: 7, .. })));
    }

    #[test]
    fn off_events_produce_no_spikes() {
        let events = [
            NmnistEvent { x: 0, y: 0, polarity: false, timestamp_us: 10 },
            NmnistEvent { x: 1, y: 0, polarity: true, timestamp_us: 2500 },
            NmnistEvent { x: 1, y: 0, polarity: true, timestamp_us: 2900 },
        ];
        let counts = on_counts([&events[..]]);
        assert_eq!(counts[0], 0);
        let map = PixelMap::from_counts(&counts, 1);
        assert_eq!(map.n_channels, 1);
        let cfg = NmnistConfig {
            duration: 10,
            learning_window: 5,
            ..Default::default()
        };
        let s = events_to_sample(&events, &map, &cfg, 1, 2).unwrap();
        // two events in the same 1 ms bin give a single spike at step 2
        assert_eq!(s.input_spikes, vec![vec![2]]);
        s.validate(1, 2).unwrap();
    }

    #[test]
    fn auto_floor_keeps_requested_share() {
        let counts = [100, 50, 30, 10, 5, 0, 5];
        let floor = PixelMap::auto_floor(&counts, 0.9);
        let map = PixelMap::from_counts(&counts, floor);
        let kept: u64 = counts.iter().zip(&map.channel).filter(|(_, c)| c.is_some()).map(|(n, _)| n).sum();
        assert!(kept as f64 >= 0.9 * 200.0);
        // 100 + 50 + 30 = 180 = 0.9 * 200
        assert_eq!(floor, 30);
        assert!(map.channel[5].is_none());
    }

    #[test]
    fn loads_a_synthetic_tree() {
        let dir = tempfile::tempdir().unwrap();
        for (split, digit, n) in [("Train", 0u8, 3), ("Train", 1, 3), ("Test", 0, 1), ("Test", 1, 1)] {
            let d = dir.path().join(split).join(digit.to_string());
            fs::create_dir_all(&d).unwrap();
            for i in 0..n {
                let ev: Vec<NmnistEvent> = (0..20)
                    .map(|k| NmnistEvent {
                        x: digit * 10 + (k % 3) as u8,
                        y: i as u8,
                        polarity: k % 4 != 0,
                        timestamp_us: k * 7000,
                    })
                    .collect();
                fs::write(d.join(format!("{i:05}.bin")), encode_events(&ev).unwrap()).unwrap();
            }
        }
        let cfg = NmnistConfig {
            max_train: 4,
            max_test: 2,
            ..Default::default()
        };
        let data = NmnistDataset::load(&dataset_root(Some(dir.path())).unwrap(), &cfg).unwrap();
        assert_eq!(data.train.len(), 4);
        assert_eq!(data.test.len(), 2);
        assert_eq!(data.train[0].label, Some(0));
        assert_eq!(data.train[3].label, Some(1));
        for s in data.train.iter().chain(&data.test) {
            s.validate(data.n_in(), 2).unwrap();
        }
        let mut st = NmnistStream::new(data, 1);
        let a = st.train_batch(0, 4).unwrap();
        let mut labels: Vec<_> = a.iter().map(|s| s.label.unwrap()).collect();
        labels.sort();
        assert_eq!(labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn missing_root_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            dataset_root(Some(&dir.path().join("absent"))),
            Err(TaskError::MissingDataset(_))
        ));
    }

    prop_compose! {
        fn arb_events()(mut raw in prop::collection::vec((0u8..34, 0u8..34, any::<bool>(), 0u32..1000), 0..200)) -> Vec<NmnistEvent> {
            let mut t = 0u32;
            raw.iter_mut()
                .map(|&mut (x, y, polarity, dt)| {
                    t = (t + dt).min(MAX_TIMESTAMP);
                    NmnistEvent { x, y, polarity, timestamp_us: t }
                })
                .collect()
        }
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(events in arb_events()) {
            let bytes = encode_events(&events).unwrap();
            prop_assert_eq!(decode_events(&bytes).unwrap(), events);
        }

        #[test]
        fn decode_matches_bit_oracle(b in any::<[u8; 5]>()) {
            let e = decode_event(b);
            prop_assert_eq!(oracle(b), (e.x, e.y, e.polarity as u8, e.timestamp_us));
        }
    }
}
